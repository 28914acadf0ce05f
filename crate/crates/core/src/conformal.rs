//! Set-generating functions, conformal calibration and coverage evaluation.
//!
//! All three predictors are expressed through one conformity score
//! `s(x, l, u)`: the smallest threshold at which class `l` enters the
//! prediction set. A set is then `{ l : s(x, l, u) <= tau }`, which makes the
//! nesting property and the set/score duality hold by construction.
//!
//! Ranking for APS/RAPS is by descending score with ties broken by ascending
//! class index. APS/RAPS use one uniform `u` per row, hashed from
//! `(seed, row_index)`; TPS ignores `u`.

use std::fmt;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kv::Record;
use crate::scores::{LabeledDataset, ScoreMatrix};
use crate::seed;

/// Which conformal predictor to use.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PredictorSpec {
    /// Thresholded prediction sets: `{ l : pi_l >= 1 - tau }`.
    Tps,
    /// Adaptive prediction sets: randomized cumulative mass in rank order.
    Aps,
    /// Regularized APS: a penalty `lambda` for every ranked position beyond `k_reg`.
    Raps { lambda: f64, k_reg: usize },
}

impl PredictorSpec {
    pub fn raps(lambda: f64, k_reg: usize) -> Result<Self> {
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "RAPS lambda must be finite and >= 0, got {lambda}"
            )));
        }
        Ok(PredictorSpec::Raps { lambda, k_reg })
    }

    pub fn name(&self) -> &'static str {
        match self {
            PredictorSpec::Tps => "tps",
            PredictorSpec::Aps => "aps",
            PredictorSpec::Raps { .. } => "raps",
        }
    }

    /// Largest meaningful threshold: every class is admitted at this value.
    pub fn max_tau(&self, n_classes: usize) -> f64 {
        match *self {
            PredictorSpec::Tps | PredictorSpec::Aps => 1.0,
            PredictorSpec::Raps { lambda, k_reg } => {
                1.0 + lambda * n_classes.saturating_sub(k_reg) as f64
            }
        }
    }

    pub fn is_randomized(&self) -> bool {
        !matches!(self, PredictorSpec::Tps)
    }

    pub fn check_classes(&self, n_classes: usize) -> Result<()> {
        match *self {
            PredictorSpec::Raps { k_reg, .. } if k_reg > n_classes => Err(Error::InvalidArgument(
                format!("k_reg={k_reg} exceeds L={n_classes}"),
            )),
            _ => Ok(()),
        }
    }

    pub fn write_record(&self, rec: &mut Record) {
        rec.push("predictor", self.name());
        if let PredictorSpec::Raps { lambda, k_reg } = *self {
            rec.push("lambda", lambda).push("kreg", k_reg);
        }
    }

    pub fn from_record(rec: &Record) -> Result<Self> {
        match rec.require("predictor")? {
            "tps" => Ok(PredictorSpec::Tps),
            "aps" => Ok(PredictorSpec::Aps),
            "raps" => PredictorSpec::raps(rec.parse("lambda")?, rec.parse("kreg")?),
            other => Err(Error::Parse(format!("unknown predictor {other:?}"))),
        }
    }
}

impl fmt::Display for PredictorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PredictorSpec::Raps { lambda, k_reg } => write!(f, "raps(lambda={lambda},kreg={k_reg})"),
            other => f.write_str(other.name()),
        }
    }
}

/// A calibrated cutoff.
#[derive(Debug, Clone, PartialEq)]
pub struct Threshold {
    pub tau: f64,
    pub alpha: f64,
    /// Free-form provenance, e.g. `calibrate` or `qtc:beta=0.0123`.
    pub source_tag: String,
    /// Set when the required order statistic exceeded the sample size and
    /// `tau` was forced to the predictor's maximum.
    pub saturated: bool,
}

impl Threshold {
    pub fn write_record(&self, rec: &mut Record) {
        rec.push("tau", self.tau)
            .push("alpha", self.alpha)
            .push("source_tag", &self.source_tag)
            .push("saturated", self.saturated);
    }

    pub fn from_record(rec: &Record) -> Result<Self> {
        Ok(Self {
            tau: rec.parse("tau")?,
            alpha: rec.parse("alpha")?,
            source_tag: rec.get("source_tag").unwrap_or_default().to_string(),
            saturated: rec.parse_opt("saturated")?.unwrap_or(false),
        })
    }
}

/// Achieved coverage and set-size statistics of one evaluation run.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageReport {
    pub coverage: f64,
    pub avg_set_size: f64,
    pub median_set_size: f64,
    /// `size_histogram[k]` counts rows whose set has `k` classes, `k = 0..=L`.
    pub size_histogram: Vec<usize>,
    pub n_eval: usize,
}

impl CoverageReport {
    pub fn write_record(&self, rec: &mut Record) {
        rec.push("coverage", self.coverage)
            .push("avg_set_size", self.avg_set_size)
            .push("median_set_size", self.median_set_size)
            .push("n_eval", self.n_eval);
        for (k, count) in self.size_histogram.iter().enumerate() {
            rec.push(format!("hist_{k}"), count);
        }
    }
}

/// `ceil(x)` for an order-statistic rank, tolerant to representation error:
/// values within `1e-9` (relative) of an integer are taken as that integer,
/// so e.g. `0.4 * 5` gives rank 2, not 3.
pub fn ceil_rank(x: f64) -> usize {
    let r = x.round();
    let v = if (x - r).abs() <= 1e-9 * x.abs().max(1.0) {
        r
    } else {
        x.ceil()
    };
    v.max(0.0) as usize
}

/// Class indices sorted by descending score, ties by ascending index.
pub fn ranking(row: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..row.len()).collect();
    order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
    order
}

/// Visits `(class, conformity score)` in rank order (TPS: class order).
/// Both [`conformity_score`] and [`prediction_set`] go through here, so the
/// floating-point operations behind membership and score are identical.
fn for_each_score(spec: &PredictorSpec, row: &[f64], u: f64, mut visit: impl FnMut(usize, f64) -> bool) {
    let cap = spec.max_tau(row.len());
    match *spec {
        PredictorSpec::Tps => {
            for (class, &p) in row.iter().enumerate() {
                if !visit(class, (1.0 - p).clamp(0.0, 1.0)) {
                    return;
                }
            }
        }
        PredictorSpec::Aps | PredictorSpec::Raps { .. } => {
            let (lambda, k_reg) = match *spec {
                PredictorSpec::Raps { lambda, k_reg } => (lambda, k_reg),
                _ => (0.0, usize::MAX),
            };
            let mut prefix = 0.0;
            for (r, class) in ranking(row).into_iter().enumerate() {
                let p = row[class];
                let score = (prefix + u * p).min(cap);
                if !visit(class, score) {
                    return;
                }
                prefix += p;
                // position r+1 (1-based) is penalized once it passes k_reg
                if r + 1 > k_reg {
                    prefix += lambda;
                }
            }
        }
    }
}

/// Smallest threshold at which `label` enters the prediction set of `row`.
pub fn conformity_score(spec: &PredictorSpec, row: &[f64], label: usize, u: f64) -> f64 {
    assert!(label < row.len(), "label {label} out of range for L={}", row.len());
    let mut out = f64::NAN;
    for_each_score(spec, row, u, |class, score| {
        if class == label {
            out = score;
            false
        } else {
            true
        }
    });
    out
}

/// Prediction set at threshold `tau`, as ascending class indices.
pub fn prediction_set(spec: &PredictorSpec, row: &[f64], u: f64, tau: f64) -> Vec<usize> {
    let mut set = Vec::new();
    for_each_score(spec, row, u, |class, score| {
        if score <= tau {
            set.push(class);
        }
        true
    });
    set.sort_unstable();
    set
}

/// Per-row smoothing uniform for row `index`; zero for TPS.
#[inline]
pub fn smoothing_u(spec: &PredictorSpec, seed: u64, index: usize) -> f64 {
    if spec.is_randomized() {
        seed::row_uniform(seed, index)
    } else {
        0.0
    }
}

/// Conformity scores of every labeled row, with per-row `u` from `seed`.
pub fn conformity_scores(spec: &PredictorSpec, data: &LabeledDataset, seed: u64) -> Vec<f64> {
    let scores = data.scores();
    (0..data.n())
        .into_par_iter()
        .map(|i| conformity_score(spec, scores.row(i), data.labels()[i], smoothing_u(spec, seed, i)))
        .collect()
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("alpha {alpha} outside (0,1)")))
    }
}

/// Conformal calibration: `tau` is the `ceil((1-alpha)(n+1))`-th smallest
/// conformity score on `cal`. If that rank exceeds `n`, the threshold is the
/// predictor's maximum and `saturated` is set.
pub fn calibrate(
    spec: &PredictorSpec,
    cal: &LabeledDataset,
    alpha: f64,
    seed: u64,
) -> Result<Threshold> {
    check_alpha(alpha)?;
    spec.check_classes(cal.n_classes())?;
    let mut scores = conformity_scores(spec, cal, seed);
    let n = scores.len();
    let k = ceil_rank((1.0 - alpha) * (n as f64 + 1.0));
    if k > n {
        return Ok(Threshold {
            tau: spec.max_tau(cal.n_classes()),
            alpha,
            source_tag: "calibrate:saturated".into(),
            saturated: true,
        });
    }
    let k = k.max(1);
    let (_, kth, _) = scores.select_nth_unstable_by(k - 1, f64::total_cmp);
    Ok(Threshold {
        tau: *kth,
        alpha,
        source_tag: "calibrate".into(),
        saturated: false,
    })
}

/// Applies `thr` to every row of `test` and reports coverage and set sizes.
pub fn evaluate(
    spec: &PredictorSpec,
    thr: &Threshold,
    test: &LabeledDataset,
    seed: u64,
) -> Result<CoverageReport> {
    if test.n() == 0 {
        return Err(Error::InvalidArgument("empty evaluation set".into()));
    }
    spec.check_classes(test.n_classes())?;
    Ok(evaluate_scores(spec, thr.tau, test.scores(), test.labels(), seed))
}

pub(crate) fn evaluate_scores(
    spec: &PredictorSpec,
    tau: f64,
    scores: &ScoreMatrix,
    labels: &[usize],
    seed: u64,
) -> CoverageReport {
    let n_classes = scores.n_classes();
    let rows: Vec<(bool, usize)> = (0..scores.n())
        .into_par_iter()
        .map(|i| {
            let set = prediction_set(spec, scores.row(i), smoothing_u(spec, seed, i), tau);
            (set.binary_search(&labels[i]).is_ok(), set.len())
        })
        .collect();

    let mut hist = vec![0usize; n_classes + 1];
    let mut covered = 0usize;
    let mut sizes = Vec::with_capacity(rows.len());
    for (hit, size) in rows {
        covered += usize::from(hit);
        hist[size] += 1;
        sizes.push(size);
    }
    let n = sizes.len();
    let total: usize = hist.iter().enumerate().map(|(k, c)| k * c).sum();
    sizes.sort_unstable();
    let median = if n % 2 == 1 {
        sizes[n / 2] as f64
    } else {
        (sizes[n / 2 - 1] + sizes[n / 2]) as f64 / 2.0
    };
    CoverageReport {
        coverage: covered as f64 / n as f64,
        avg_set_size: total as f64 / n as f64,
        median_set_size: median,
        size_histogram: hist,
        n_eval: n,
    }
}
