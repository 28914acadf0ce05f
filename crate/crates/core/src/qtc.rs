//! Quantile thresholded confidence (QTC) recalibration.
//!
//! The confidence of a row is its largest class probability. Given a labeled
//! source calibration set and unlabeled target rows:
//!
//! - `QTC` takes the `alpha`-quantile `q` of target confidences and estimates
//!   the source miscoverage level as the fraction of source confidences below `q`.
//! - `QTC-SC` takes the `(1-alpha)`-quantile on the source and estimates the
//!   level as one minus the fraction of target confidences below it.
//! - `QTC-ST` takes the quantile of source confidences at the source threshold
//!   and estimates the target threshold directly as the fraction of target
//!   confidences below it.
//!
//! The estimated level is then used to calibrate on the source set. All
//! comparisons against `q` are strict; a confidence equal to `q` is not below it.

use std::fmt;
use std::str::FromStr;

use crate::conformal::{calibrate, ceil_rank, PredictorSpec, Threshold};
use crate::error::{Error, Result};
use crate::kv::Record;
use crate::scores::{LabeledDataset, ScoreMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum QtcMethod {
    Qtc,
    QtcSc,
    QtcSt,
}

impl QtcMethod {
    pub const ALL: [QtcMethod; 3] = [QtcMethod::Qtc, QtcMethod::QtcSc, QtcMethod::QtcSt];

    pub fn name(&self) -> &'static str {
        match self {
            QtcMethod::Qtc => "qtc",
            QtcMethod::QtcSc => "qtc-sc",
            QtcMethod::QtcSt => "qtc-st",
        }
    }
}

impl fmt::Display for QtcMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for QtcMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "qtc" => Ok(QtcMethod::Qtc),
            "qtc-sc" => Ok(QtcMethod::QtcSc),
            "qtc-st" => Ok(QtcMethod::QtcSt),
            other => Err(Error::InvalidArgument(format!("unknown QTC method {other:?}"))),
        }
    }
}

/// Output of one QTC estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct QtcEstimate {
    pub method: QtcMethod,
    /// The confidence quantile `q`; always a confidence attained in the data.
    pub q_threshold: f64,
    /// Estimated level `beta` (QTC, QTC-SC) or threshold (QTC-ST).
    pub value: f64,
    pub alpha: f64,
    pub warnings: Vec<String>,
}

impl QtcEstimate {
    pub fn write_record(&self, rec: &mut Record) {
        rec.push("method", self.method)
            .push("q", self.q_threshold)
            .push("value", self.value)
            .push("alpha", self.alpha);
        if !self.warnings.is_empty() {
            rec.push("warnings", self.warnings.join("; "));
        }
    }
}

/// A confidence order statistic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quantile {
    pub value: f64,
    /// 1-based rank among the sorted confidences.
    pub rank: usize,
    /// Set when `c * n < 1` and the rank was raised to the minimum.
    pub floored: bool,
}

/// Largest class probability of a row.
pub fn top_confidence(row: &[f64]) -> f64 {
    row.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

pub fn top_confidences(scores: &ScoreMatrix) -> Vec<f64> {
    scores.rows().map(top_confidence).collect()
}

/// `ceil(c*n)`-th smallest confidence of `data`, the finite-sample form of
/// `inf { p : (1/n) sum 1{s < p} >= c }`.
pub fn quantile_q(data: &impl AsRef<ScoreMatrix>, c: f64) -> Result<Quantile> {
    quantile_of(top_confidences(data.as_ref()), c)
}

pub fn quantile_of(mut confidences: Vec<f64>, c: f64) -> Result<Quantile> {
    if !(c > 0.0 && c <= 1.0) {
        return Err(Error::InvalidArgument(format!("quantile level {c} outside (0,1]")));
    }
    let n = confidences.len();
    if n == 0 {
        return Err(Error::InvalidArgument("quantile of an empty dataset".into()));
    }
    let raw = ceil_rank(c * n as f64);
    let rank = raw.clamp(1, n);
    let (_, kth, _) = confidences.select_nth_unstable_by(rank - 1, f64::total_cmp);
    Ok(Quantile {
        value: *kth,
        rank,
        floored: raw < 1,
    })
}

/// Fraction of rows whose confidence is strictly below `q`.
pub fn fraction_below(scores: &ScoreMatrix, q: f64) -> f64 {
    count_below(scores, q) as f64 / scores.n() as f64
}

fn count_below(scores: &ScoreMatrix, q: f64) -> usize {
    scores.rows().filter(|row| top_confidence(row) < q).count()
}

fn check_pair(source: &ScoreMatrix, target: &ScoreMatrix, alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha {alpha} outside (0,1)")));
    }
    if source.n_classes() != target.n_classes() {
        return Err(Error::ClassMismatch {
            left: source.n_classes(),
            right: target.n_classes(),
        });
    }
    Ok(())
}

fn floor_warning(q: &Quantile, what: &str) -> Vec<String> {
    if q.floored {
        vec![format!("{what} level below 1/n; using the minimum confidence")]
    } else {
        Vec::new()
    }
}

/// QTC: `q` from the target at level `alpha`, `beta` as the source fraction
/// below `q`. Source labels, if any, are ignored.
pub fn estimate_beta_qtc(
    source: &impl AsRef<ScoreMatrix>,
    target: &impl AsRef<ScoreMatrix>,
    alpha: f64,
) -> Result<QtcEstimate> {
    let (source, target) = (source.as_ref(), target.as_ref());
    check_pair(source, target, alpha)?;
    let q = quantile_q(target, alpha)?;
    Ok(QtcEstimate {
        method: QtcMethod::Qtc,
        q_threshold: q.value,
        value: fraction_below(source, q.value),
        alpha,
        warnings: floor_warning(&q, "target quantile"),
    })
}

/// QTC-SC: `q` from the source at level `1 - alpha`, `beta` as one minus the
/// target fraction below `q`.
pub fn estimate_beta_qtc_sc(
    source: &impl AsRef<ScoreMatrix>,
    target: &impl AsRef<ScoreMatrix>,
    alpha: f64,
) -> Result<QtcEstimate> {
    let (source, target) = (source.as_ref(), target.as_ref());
    check_pair(source, target, alpha)?;
    let q = quantile_q(source, 1.0 - alpha)?;
    Ok(QtcEstimate {
        method: QtcMethod::QtcSc,
        q_threshold: q.value,
        value: (target.n() - count_below(target, q.value)) as f64 / target.n() as f64,
        alpha,
        warnings: floor_warning(&q, "source quantile"),
    })
}

/// QTC-ST given an already calibrated source threshold `tau_source` on a
/// scale whose maximum is `scale` (1 for TPS/APS, the total penalized mass for
/// RAPS). The threshold is mapped to `[0, 1]`, used as the quantile level on
/// the source, and the target fraction below that quantile is mapped back.
pub fn estimate_tau_from_source_threshold(
    source: &impl AsRef<ScoreMatrix>,
    target: &impl AsRef<ScoreMatrix>,
    tau_source: f64,
    scale: f64,
    alpha: f64,
) -> Result<QtcEstimate> {
    let (source, target) = (source.as_ref(), target.as_ref());
    check_pair(source, target, alpha)?;
    let level = tau_source / scale;
    let q = quantile_q(source, level)?;
    Ok(QtcEstimate {
        method: QtcMethod::QtcSt,
        q_threshold: q.value,
        value: fraction_below(target, q.value) * scale,
        alpha,
        warnings: floor_warning(&q, "source threshold"),
    })
}

/// QTC-ST: calibrates on the source, then transfers the threshold. Fails if
/// the source calibration saturates, where the transfer is undefined.
pub fn estimate_tau_qtc_st(
    spec: &PredictorSpec,
    source: &LabeledDataset,
    target: &impl AsRef<ScoreMatrix>,
    alpha: f64,
    seed: u64,
) -> Result<QtcEstimate> {
    let thr = calibrate(spec, source, alpha, seed)?;
    if thr.saturated {
        return Err(Error::Saturated(format!(
            "source calibration at alpha={alpha} saturated; QTC-ST undefined"
        )));
    }
    let scale = spec.max_tau(source.n_classes());
    estimate_tau_from_source_threshold(source, target, thr.tau, scale, alpha)
}

/// Result of [`recalibrate`].
#[derive(Debug, Clone, PartialEq)]
pub struct Recalibration {
    pub threshold: Threshold,
    pub estimate: QtcEstimate,
}

/// Recalibrates `spec` for the target distribution using only its scores.
///
/// For QTC and QTC-SC the estimated level is clamped into
/// `[1/(n+1), 1 - 1/(n+1)]` (`n` = source size) and the predictor is
/// calibrated on the source at that level. For QTC-ST the estimated threshold
/// is used as-is.
pub fn recalibrate(
    spec: &PredictorSpec,
    source: &LabeledDataset,
    target: &impl AsRef<ScoreMatrix>,
    alpha: f64,
    method: QtcMethod,
    seed: u64,
) -> Result<Recalibration> {
    let estimate = match method {
        QtcMethod::Qtc => estimate_beta_qtc(source, target, alpha)?,
        QtcMethod::QtcSc => estimate_beta_qtc_sc(source, target, alpha)?,
        QtcMethod::QtcSt => {
            let estimate = estimate_tau_qtc_st(spec, source, target, alpha, seed)?;
            let threshold = Threshold {
                tau: estimate.value,
                alpha,
                source_tag: format!("{method}:q={}", estimate.q_threshold),
                saturated: false,
            };
            return Ok(Recalibration { threshold, estimate });
        }
    };
    let edge = 1.0 / (source.n() as f64 + 1.0);
    let beta = estimate.value.clamp(edge, 1.0 - edge);
    let mut threshold = calibrate(spec, source, beta, seed)?;
    threshold.alpha = alpha;
    threshold.source_tag = format!("{method}:beta={beta}");
    Ok(Recalibration { threshold, estimate })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Two-class rows whose top confidence is exactly `c` (c >= 0.5).
    fn rows(confs: &[f64]) -> ScoreMatrix {
        ScoreMatrix::new(2, confs.iter().flat_map(|&c| [c, 1.0 - c]).collect()).unwrap()
    }

    #[test]
    fn top_confidence_examples() {
        assert_eq!(top_confidence(&[0.5, 0.3, 0.2]), 0.5);
        assert_eq!(top_confidence(&[0.25; 4]), 0.25);
        assert_eq!(top_confidence(&[0.0, 1.0]), 1.0);
    }

    #[test]
    fn quantile_order_statistics() {
        let confs = vec![0.9, 0.1, 0.5, 0.7, 0.3];
        assert_eq!(quantile_of(confs.clone(), 0.4).unwrap().value, 0.3);
        assert_eq!(quantile_of(confs.clone(), 1.0).unwrap().value, 0.9);
        assert_eq!(quantile_of(confs.clone(), 0.2).unwrap().value, 0.1);
        assert!(quantile_of(confs.clone(), 0.0).is_err());
        assert!(quantile_of(confs, 1.5).is_err());
    }

    #[test]
    fn tiny_level_is_floored_with_warning() {
        let q = quantile_of(vec![0.6, 0.7], 1e-12).unwrap();
        assert_eq!((q.rank, q.floored), (1, true));
        let est = estimate_beta_qtc(&rows(&[0.6, 0.7]), &rows(&[0.6, 0.7]), 1e-12).unwrap();
        assert_eq!(est.warnings.len(), 1);
    }

    /// Rows in `n_classes` classes whose top confidence is exactly `c` (c >= 1/L).
    fn rows_with_top(confs: &[f64], n_classes: usize) -> ScoreMatrix {
        let rows: Vec<Vec<f64>> = confs
            .iter()
            .map(|&c| {
                let mut r = vec![(1.0 - c) / (n_classes - 1) as f64; n_classes];
                r[0] = c;
                r
            })
            .collect();
        ScoreMatrix::from_rows(&rows).unwrap()
    }

    #[test]
    fn qtc_counts_strictly_below() {
        let src = rows_with_top(&[0.2, 0.25, 0.5, 0.8], 5);
        assert_eq!(fraction_below(&src, 0.3), 0.5);
        // ties at q are not below
        assert_eq!(fraction_below(&src, 0.25), 0.25);
    }

    #[test]
    fn qtc_sc_hand_example() {
        let source: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
        let src = rows_with_top(&source, 20);
        let tgt = rows_with_top(&[0.05, 0.5, 0.95, 0.99], 20);
        let est = estimate_beta_qtc_sc(&src, &tgt, 0.2).unwrap();
        assert_eq!(est.q_threshold, 0.8);
        assert_eq!(est.value, 0.5);
    }

    #[test]
    fn qtc_sc_target_above_source_gives_one() {
        let est = estimate_beta_qtc_sc(&rows(&[0.6, 0.7]), &rows(&[0.7, 0.9]), 0.3).unwrap();
        assert_eq!(est.value, 1.0);
    }

    #[test]
    fn qtc_st_hand_example() {
        let est = estimate_tau_from_source_threshold(
            &rows(&[0.6, 0.7, 0.8, 0.9]),
            &rows(&[0.5, 0.85]),
            0.75,
            1.0,
            0.1,
        )
        .unwrap();
        assert_eq!(est.q_threshold, 0.8);
        assert_eq!(est.value, 0.5);
    }

    #[test]
    fn qtc_st_raps_remap() {
        let spec = PredictorSpec::raps(1.0, 0).unwrap();
        let scale = spec.max_tau(2);
        assert_eq!(scale, 3.0);
        let src = rows(&[0.6, 0.7, 0.8, 0.9]);
        let tgt = rows(&[0.5, 0.65, 0.85]);
        let est = estimate_tau_from_source_threshold(&src, &tgt, 1.5, scale, 0.1).unwrap();
        // level 0.5 -> 2nd order statistic 0.7; 2 of 3 target rows below
        assert_eq!(est.q_threshold, 0.7);
        assert!((est.value - 2.0).abs() < 1e-12);
    }

    #[test]
    fn class_mismatch_is_rejected() {
        let three = ScoreMatrix::from_rows(&[vec![0.5, 0.3, 0.2]]).unwrap();
        assert!(matches!(
            estimate_beta_qtc(&rows(&[0.6]), &three, 0.1),
            Err(Error::ClassMismatch { .. })
        ));
    }

    #[test]
    fn qtc_st_fails_on_saturation() {
        let d = LabeledDataset::new(rows(&[0.6, 0.7]), vec![0, 1]).unwrap();
        let err = estimate_tau_qtc_st(&PredictorSpec::Tps, &d, &rows(&[0.6]), 0.1, 0).unwrap_err();
        assert!(matches!(err, Error::Saturated(_)));
    }

    #[test]
    fn method_names_round_trip() {
        for m in QtcMethod::ALL {
            assert_eq!(m.name().parse::<QtcMethod>().unwrap(), m);
        }
        assert_eq!("QTC_SC".parse::<QtcMethod>().unwrap(), QtcMethod::QtcSc);
    }
}
