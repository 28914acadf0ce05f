//! Synthetic training corpus for the regression baselines.
//!
//! Each shifted dataset keeps the source labels and moves the scores by
//! temperature scaling (`log T ~ U[-1, 1]`) followed by a Dirichlet jitter
//! around the tempered row (concentration `~ U[5, 100]`).

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;

use super::features::{extract_features, Extractor, FeatureVector};
use crate::conformal::{calibrate, PredictorSpec};
use crate::error::{Error, Result};
use crate::scores::{LabeledDataset, ScoreMatrix};
use crate::seed;

pub const LOG_TEMPERATURE_RANGE: (f64, f64) = (-1.0, 1.0);
pub const CONCENTRATION_RANGE: (f64, f64) = (5.0, 100.0);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShiftParams {
    pub log_temperature: f64,
    /// `None` means no jitter.
    pub concentration: Option<f64>,
}

impl ShiftParams {
    pub const IDENTITY: ShiftParams = ShiftParams {
        log_temperature: 0.0,
        concentration: None,
    };

    pub fn random(seed: u64) -> Self {
        let mut rng = seed::rng(seed::derive(seed, "shift-params"));
        Self {
            log_temperature: rng.random_range(LOG_TEMPERATURE_RANGE.0..=LOG_TEMPERATURE_RANGE.1),
            concentration: Some(rng.random_range(CONCENTRATION_RANGE.0..=CONCENTRATION_RANGE.1)),
        }
    }
}

fn temper(row: &[f64], inv_t: f64, out: &mut Vec<f64>) {
    let logits: Vec<f64> = row.iter().map(|p| p.ln() * inv_t).collect();
    crate::synthetic::softmax_into(&logits, out);
}

/// Applies `shift` to every row of `source`; labels are kept.
pub fn perturb(source: &LabeledDataset, shift: &ShiftParams, seed: u64) -> Result<LabeledDataset> {
    if *shift == ShiftParams::IDENTITY {
        return Ok(source.clone());
    }
    let l = source.n_classes();
    let inv_t = (-shift.log_temperature).exp();
    let mut rng = seed::rng(seed::derive(seed, "jitter"));
    let mut values = Vec::with_capacity(source.n() * l);
    let mut draws = vec![0.0; l];
    for row in source.scores().rows() {
        let start = values.len();
        temper(row, inv_t, &mut values);
        if let Some(kappa) = shift.concentration {
            let tempered = &values[start..];
            let mut total = 0.0;
            for (g, &p) in draws.iter_mut().zip(tempered) {
                *g = if p > 0.0 {
                    let dist = Gamma::new(kappa * p, 1.0)
                        .map_err(|e| Error::Numeric(format!("gamma draw: {e}")))?;
                    dist.sample(&mut rng)
                } else {
                    0.0
                };
                total += *g;
            }
            // an all-underflow draw leaves the tempered row in place
            if total > 0.0 && total.is_finite() {
                values[start..]
                    .iter_mut()
                    .zip(&draws)
                    .for_each(|(v, g)| *v = g / total);
            }
        }
    }
    LabeledDataset::new(ScoreMatrix::from_valid_rows(l, values), source.labels().to_vec())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusEntry {
    pub features: FeatureVector,
    pub target: f64,
    pub shift: ShiftParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionCorpus {
    pub entries: Vec<CorpusEntry>,
    pub extractor: Extractor,
    pub bins: usize,
    pub spec: PredictorSpec,
    pub alpha: f64,
    pub n_classes: usize,
    /// Calibrated threshold of the unshifted source.
    pub source_tau: f64,
    pub warnings: Vec<String>,
}

impl RegressionCorpus {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn dim(&self) -> usize {
        self.extractor.dimension(self.bins, self.n_classes)
    }

    /// Each entry repeated `times` times in place.
    pub fn duplicated(&self, times: usize) -> Self {
        let mut out = self.clone();
        out.entries = self
            .entries
            .iter()
            .flat_map(|e| std::iter::repeat_n(e.clone(), times))
            .collect();
        out
    }
}

/// Builds `(features, target)` pairs from `n_shifts` shifted copies of
/// `source`. Entry 0 is the unshifted source; DCR targets are offsets from
/// the source threshold. Saturated calibrations are dropped with a warning.
pub fn build_corpus(
    source: &LabeledDataset,
    spec: &PredictorSpec,
    alpha: f64,
    n_shifts: usize,
    extractor: Extractor,
    bins: usize,
    seed: u64,
) -> Result<RegressionCorpus> {
    let cal_seed = seed::derive(seed, "corpus-calibration");
    let source_thr = calibrate(spec, source, alpha, cal_seed)?;
    let mut corpus = RegressionCorpus {
        entries: Vec::new(),
        extractor,
        bins,
        spec: *spec,
        alpha,
        n_classes: source.n_classes(),
        source_tau: source_thr.tau,
        warnings: Vec::new(),
    };
    if n_shifts == 0 {
        return Ok(corpus);
    }
    let offset = if extractor == Extractor::Dcr { source_thr.tau } else { 0.0 };
    let source_scores = source.scores();
    let shift_seed = seed::derive(seed, "corpus-shifts");

    let results: Vec<Result<(Option<CorpusEntry>, Vec<String>)>> = (0..n_shifts)
        .into_par_iter()
        .map(|j| {
            let (shift, data) = if j == 0 {
                (ShiftParams::IDENTITY, source.clone())
            } else {
                let s = seed::derive_index(shift_seed, j as u64);
                let shift = ShiftParams::random(s);
                (shift, perturb(source, &shift, s)?)
            };
            let thr = if j == 0 { source_thr.clone() } else { calibrate(spec, &data, alpha, cal_seed)? };
            let (features, mut warnings) =
                extract_features(&data, extractor, bins, Some(source_scores))?;
            if thr.saturated {
                warnings.push(format!("shift {j}: calibration saturated, entry dropped"));
                return Ok((None, warnings));
            }
            let entry = CorpusEntry { features, target: thr.tau - offset, shift };
            Ok((Some(entry), warnings))
        })
        .collect();

    for (j, r) in results.into_iter().enumerate() {
        let (entry, warnings) = r?;
        corpus.warnings.extend(warnings.into_iter().map(|w| {
            if w.starts_with("shift ") { w } else { format!("shift {j}: {w}") }
        }));
        corpus.entries.extend(entry);
    }
    Ok(corpus)
}
