//! Binary spurious-correlation model with a fixed logistic classifier.
//!
//! The label `y` is uniform on `{-1, +1}`. The invariant feature is uniform on
//! `[gamma, c]` for `y = +1` and on `[-c, -gamma]` for `y = -1`. The spurious
//! feature equals `y` with probability `p` and `-y` otherwise; source and
//! target differ only in `p`. The classifier outputs
//! `[1/(1+e^z), e^z/(1+e^z)]` with `z = w_inv*x_inv + w_sp*x_sp`; index 0 is
//! `y = -1` and index 1 is `y = +1`.
//!
//! Under TPS a sample is miscovered at threshold `tau` exactly when it is
//! misclassified and its top confidence is at least `tau`. The oracle
//! quantities below are Monte Carlo estimates of that event.

use rand::Rng;
use rayon::prelude::*;

use crate::conformal::{ceil_rank, evaluate, PredictorSpec};
use crate::error::{Error, Result};
use crate::qtc::{estimate_beta_qtc, recalibrate, QtcMethod};
use crate::scores::{LabeledDataset, ScoreMatrix};
use crate::seed;

/// Default Monte Carlo size for oracle quantities.
pub const DEFAULT_N_MC: usize = 10_000_000;

/// Oracle preconditions require `alpha < EPSILON_MARGIN * error_rate`.
pub const EPSILON_MARGIN: f64 = 0.9;

const MC_CHUNK: usize = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyModelParams {
    pub gamma: f64,
    pub c: f64,
    /// Probability that the spurious feature agrees with the label.
    pub p: f64,
}

impl ToyModelParams {
    pub fn new(gamma: f64, c: f64, p: f64) -> Result<Self> {
        if !(gamma >= 0.0 && c > gamma && c.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "need c > gamma >= 0, got gamma={gamma}, c={c}"
            )));
        }
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!("p={p} outside [0,1]")));
        }
        Ok(Self { gamma, c, p })
    }

    pub fn with_p(&self, p: f64) -> Result<Self> {
        Self::new(self.gamma, self.c, p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyClassifier {
    pub w_inv: f64,
    pub w_sp: f64,
}

impl ToyClassifier {
    pub fn new(w_inv: f64, w_sp: f64) -> Result<Self> {
        if !(w_inv > 0.0 && w_inv.is_finite()) {
            return Err(Error::InvalidArgument(format!("w_inv must be > 0, got {w_inv}")));
        }
        if w_sp == 0.0 || !w_sp.is_finite() {
            return Err(Error::InvalidArgument(format!("w_sp must be nonzero, got {w_sp}")));
        }
        Ok(Self { w_inv, w_sp })
    }

    pub fn logit(&self, s: &ToySample) -> f64 {
        self.w_inv * s.x_inv + self.w_sp * f64::from(s.x_sp)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToySample {
    pub x_inv: f64,
    pub x_sp: i8,
    pub y: i8,
}

impl ToySample {
    pub fn negated(&self) -> Self {
        Self {
            x_inv: -self.x_inv,
            x_sp: -self.x_sp,
            y: -self.y,
        }
    }
}

/// Class index of a `{-1, +1}` label.
pub fn label_index(y: i8) -> usize {
    usize::from(y > 0)
}

fn draw<R: Rng + ?Sized>(params: &ToyModelParams, rng: &mut R) -> ToySample {
    let y: i8 = if rng.random::<bool>() { 1 } else { -1 };
    let x_inv = f64::from(y) * (params.gamma + (params.c - params.gamma) * rng.random::<f64>());
    let agree = rng.random::<f64>() < params.p;
    ToySample {
        x_inv,
        x_sp: if agree { y } else { -y },
        y,
    }
}

pub fn sample(params: &ToyModelParams, n: usize, seed: u64) -> Vec<ToySample> {
    let mut rng = seed::rng(seed);
    (0..n).map(|_| draw(params, &mut rng)).collect()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `[P(y=-1), P(y=+1)]`.
pub fn classify(w: &ToyClassifier, s: &ToySample) -> [f64; 2] {
    let z = w.logit(s);
    [sigmoid(-z), sigmoid(z)]
}

/// Whether the prediction disagrees with the label, and the top confidence.
fn miss_and_confidence(w: &ToyClassifier, s: &ToySample) -> (bool, f64) {
    let [p0, p1] = classify(w, s);
    // ties go to index 0, matching the ranking convention
    let predicted = if p1 > p0 { 1 } else { 0 };
    (predicted != label_index(s.y), p0.max(p1))
}

pub fn to_dataset(samples: &[ToySample], w: &ToyClassifier) -> LabeledDataset {
    let mut values = Vec::with_capacity(samples.len() * 2);
    let mut labels = Vec::with_capacity(samples.len());
    for s in samples {
        values.extend_from_slice(&classify(w, s));
        labels.push(label_index(s.y));
    }
    LabeledDataset::from_parts_unchecked(ScoreMatrix::from_valid_rows(2, values), labels)
}

/// Runs `f` over `n_mc` samples in fixed-size chunks with per-chunk seeds, so
/// the result does not depend on the thread count.
fn monte_carlo<T: Send>(
    params: &ToyModelParams,
    n_mc: usize,
    seed: u64,
    f: impl Fn(&mut dyn Iterator<Item = ToySample>) -> T + Sync,
) -> Vec<T> {
    let chunks = n_mc.div_ceil(MC_CHUNK);
    (0..chunks)
        .into_par_iter()
        .map(|k| {
            let len = MC_CHUNK.min(n_mc - k * MC_CHUNK);
            let mut rng = seed::rng(seed::derive_index(seed, k as u64));
            let mut it = (0..len).map(|_| draw(params, &mut rng));
            f(&mut it)
        })
        .collect()
}

/// Misclassification rate, by Monte Carlo.
pub fn error_rate(params: &ToyModelParams, w: &ToyClassifier, n_mc: usize, seed: u64) -> f64 {
    let misses: usize = monte_carlo(params, n_mc, seed, |it| {
        it.filter(|s| miss_and_confidence(w, s).0).count()
    })
    .into_iter()
    .sum();
    misses as f64 / n_mc as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleTau {
    pub tau: f64,
    /// Monte Carlo error rate of the classifier on the same draws.
    pub error_rate: f64,
}

/// TPS threshold with target miscoverage `alpha`: the value `tau` such that
/// a fraction `alpha` of draws is misclassified with confidence `>= tau`.
pub fn oracle_tau(
    params_target: &ToyModelParams,
    w: &ToyClassifier,
    alpha: f64,
    n_mc: usize,
    seed: u64,
) -> Result<OracleTau> {
    if !(alpha > 0.0 && alpha < 1.0) || n_mc == 0 {
        return Err(Error::InvalidArgument(format!(
            "alpha={alpha} must be in (0,1) and n_mc={n_mc} positive"
        )));
    }
    let mut miss_conf: Vec<f64> = monte_carlo(params_target, n_mc, seed, |it| {
        it.filter_map(|s| {
            let (miss, conf) = miss_and_confidence(w, &s);
            miss.then_some(conf)
        })
        .collect::<Vec<_>>()
    })
    .into_iter()
    .flatten()
    .collect();
    let error_rate = miss_conf.len() as f64 / n_mc as f64;
    let k = ceil_rank(alpha * n_mc as f64).max(1);
    if alpha >= error_rate || k > miss_conf.len() {
        return Err(Error::Precondition(format!(
            "alpha={alpha} must be below the target error rate {error_rate:.6}"
        )));
    }
    // k-th largest misclassified confidence
    let (_, kth, _) = miss_conf.select_nth_unstable_by(k - 1, |a, b| b.total_cmp(a));
    Ok(OracleTau {
        tau: *kth,
        error_rate,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleBeta {
    pub tau_target: f64,
    /// Source miscoverage of the target-oracle TPS threshold.
    pub beta: f64,
    pub error_rate_source: f64,
    pub error_rate_target: f64,
}

/// Source miscoverage of the oracle target threshold, by Monte Carlo.
pub fn oracle_beta(
    params_source: &ToyModelParams,
    params_target: &ToyModelParams,
    w: &ToyClassifier,
    alpha: f64,
    n_mc: usize,
    seed: u64,
) -> Result<OracleBeta> {
    let target = oracle_tau(params_target, w, alpha, n_mc, seed::derive(seed, "target"))?;
    let tau = target.tau;
    let counts: Vec<(usize, usize)> =
        monte_carlo(params_source, n_mc, seed::derive(seed, "source"), |it| {
            it.fold((0, 0), |(miss, miscover), s| {
                let (m, conf) = miss_and_confidence(w, &s);
                (miss + usize::from(m), miscover + usize::from(m && conf >= tau))
            })
        });
    let (miss, miscover) = counts
        .into_iter()
        .fold((0, 0), |(a, b), (c, d)| (a + c, b + d));
    Ok(OracleBeta {
        tau_target: tau,
        beta: miscover as f64 / n_mc as f64,
        error_rate_source: miss as f64 / n_mc as f64,
        error_rate_target: target.error_rate,
    })
}

/// Constant of the finite-sample bound; depends on the sign of `w_sp`.
pub fn c_sp(p_source: f64, p_target: f64, w: &ToyClassifier) -> f64 {
    if w.w_sp > 0.0 {
        (1.0 - p_target) * (1.0 - p_source).powi(2)
    } else {
        p_target * p_source.powi(2)
    }
}

/// `sqrt(2 ln(16/delta) / (n c_sp))`.
pub fn theorem_bound(n: usize, delta: f64, c_sp: f64) -> f64 {
    (2.0 * (16.0 / delta).ln() / (n as f64 * c_sp)).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TheoremTrialReport {
    pub trial_id: usize,
    pub n: usize,
    pub alpha: f64,
    pub delta: f64,
    pub p_src: f64,
    pub p_tgt: f64,
    pub w_inv: f64,
    pub w_sp: f64,
    pub beta_true: f64,
    pub beta_qtc: f64,
    pub bound: f64,
    pub violated: bool,
    /// Target coverage of TPS recalibrated with QTC, on a fresh target set.
    pub coverage: f64,
}

impl TheoremTrialReport {
    pub const CSV_HEADER: &'static str =
        "trial_id,n,alpha,delta,p_src,p_tgt,w_inv,w_sp,beta_true,beta_qtc,bound,violated,coverage";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.trial_id,
            self.n,
            self.alpha,
            self.delta,
            self.p_src,
            self.p_tgt,
            self.w_inv,
            self.w_sp,
            self.beta_true,
            self.beta_qtc,
            self.bound,
            self.violated,
            self.coverage
        )
    }
}

/// Source/target pair with its oracle quantities computed once, for running
/// many trials.
#[derive(Debug, Clone, PartialEq)]
pub struct TheoremSetup {
    pub source: ToyModelParams,
    pub target: ToyModelParams,
    pub w: ToyClassifier,
    pub alpha: f64,
    pub oracle: OracleBeta,
}

impl TheoremSetup {
    /// Computes the oracle and checks `alpha < 0.9 * error_rate` on both
    /// distributions.
    pub fn new(
        source: ToyModelParams,
        target: ToyModelParams,
        w: ToyClassifier,
        alpha: f64,
        n_mc: usize,
        seed: u64,
    ) -> Result<Self> {
        for (name, params) in [("source", &source), ("target", &target)] {
            let eps = error_rate(params, &w, n_mc, seed::derive(seed, name));
            if alpha >= EPSILON_MARGIN * eps {
                return Err(Error::Precondition(format!(
                    "alpha={alpha} must be below {EPSILON_MARGIN} x {name} error rate {eps:.6}"
                )));
            }
        }
        let oracle = oracle_beta(&source, &target, &w, alpha, n_mc, seed)?;
        Ok(Self::with_oracle(source, target, w, alpha, oracle))
    }

    /// Uses precomputed oracle values (e.g. a frozen fixture).
    pub fn with_oracle(
        source: ToyModelParams,
        target: ToyModelParams,
        w: ToyClassifier,
        alpha: f64,
        oracle: OracleBeta,
    ) -> Self {
        Self {
            source,
            target,
            w,
            alpha,
            oracle,
        }
    }

    pub fn c_sp(&self) -> f64 {
        c_sp(self.source.p, self.target.p, &self.w)
    }

    pub fn run_trial(&self, trial_id: usize, n: usize, delta: f64, seed: u64) -> Result<TheoremTrialReport> {
        if n < 100 {
            return Err(Error::Precondition(format!("trial size n={n} below 100")));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::InvalidArgument(format!("delta={delta} outside (0,1)")));
        }
        let source = to_dataset(&sample(&self.source, n, seed::derive(seed, "source")), &self.w);
        let target = to_dataset(&sample(&self.target, n, seed::derive(seed, "target")), &self.w).unlabeled();
        let beta_qtc = estimate_beta_qtc(&source, &target, self.alpha)?.value;
        let bound = theorem_bound(n, delta, self.c_sp());

        let spec = PredictorSpec::Tps;
        let recal = recalibrate(&spec, &source, &target, self.alpha, QtcMethod::Qtc, seed::derive(seed, "calibrate"))?;
        let fresh = to_dataset(&sample(&self.target, n, seed::derive(seed, "evaluate")), &self.w);
        let coverage = evaluate(&spec, &recal.threshold, &fresh, 0)?.coverage;

        Ok(TheoremTrialReport {
            trial_id,
            n,
            alpha: self.alpha,
            delta,
            p_src: self.source.p,
            p_tgt: self.target.p,
            w_inv: self.w.w_inv,
            w_sp: self.w.w_sp,
            beta_true: self.oracle.beta,
            beta_qtc,
            bound,
            violated: (beta_qtc - self.oracle.beta).abs() > bound,
            coverage,
        })
    }

    /// Independent trials with seeds derived from `seed`; output in trial order.
    pub fn run_trials(&self, trials: usize, n: usize, delta: f64, seed: u64) -> Result<Vec<TheoremTrialReport>> {
        (0..trials)
            .into_par_iter()
            .map(|t| self.run_trial(t, n, delta, seed::derive_index(seed, t as u64)))
            .collect()
    }
}

/// One trial with the oracle computed at [`DEFAULT_N_MC`].
pub fn run_theorem_trial(
    params_source: &ToyModelParams,
    params_target: &ToyModelParams,
    w: &ToyClassifier,
    alpha: f64,
    n: usize,
    delta: f64,
    seed: u64,
) -> Result<TheoremTrialReport> {
    let setup = TheoremSetup::new(
        *params_source,
        *params_target,
        *w,
        alpha,
        DEFAULT_N_MC,
        seed::derive(seed, "oracle"),
    )?;
    setup.run_trial(0, n, delta, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(p: f64) -> ToyModelParams {
        ToyModelParams::new(0.05, 1.0, p).unwrap()
    }

    #[test]
    fn degenerate_agreement_probabilities() {
        assert!(sample(&params(1.0), 1000, 1).iter().all(|s| s.x_sp == s.y));
        assert!(sample(&params(0.0), 1000, 1).iter().all(|s| s.x_sp == -s.y));
    }

    #[test]
    fn agreement_rate_concentrates() {
        let s = sample(&params(0.9), 100_000, 5);
        let rate = s.iter().filter(|s| s.x_sp == s.y).count() as f64 / s.len() as f64;
        assert!((rate - 0.9).abs() <= 0.01, "{rate}");
    }

    #[test]
    fn samples_respect_conditional_support() {
        let p = params(0.7);
        for s in sample(&p, 10_000, 9) {
            let mag = f64::from(s.y) * s.x_inv;
            assert!(mag >= p.gamma && mag <= p.c, "{s:?}");
        }
    }

    #[test]
    fn classify_examples() {
        let w = ToyClassifier::new(1.0, 1.0).unwrap();
        let zero = ToySample { x_inv: -1.0, x_sp: 1, y: 1 };
        assert_eq!(classify(&w, &zero), [0.5, 0.5]);
        let s = ToySample { x_inv: 2.0, x_sp: 1, y: 1 };
        let [p0, p1] = classify(&w, &s);
        let e3 = 3f64.exp();
        assert!((p0 - 1.0 / (1.0 + e3)).abs() < 1e-15);
        assert!((p1 - e3 / (1.0 + e3)).abs() < 1e-15);
        assert!((p0 - 0.0474).abs() < 5e-5 && (p1 - 0.9526).abs() < 5e-5);
        let [q0, q1] = classify(&w, &s.negated());
        assert_eq!((q0, q1), (p1, p0));
    }

    #[test]
    fn invalid_parameters() {
        assert!(ToyModelParams::new(1.0, 1.0, 0.5).is_err());
        assert!(ToyModelParams::new(0.0, 1.0, 1.5).is_err());
        assert!(ToyClassifier::new(0.0, 0.5).is_err());
        assert!(ToyClassifier::new(1.0, 0.0).is_err());
    }

    #[test]
    fn to_dataset_shape_and_labels() {
        let w = ToyClassifier::new(1.0, 0.5).unwrap();
        let samples = sample(&params(0.9), 500, 2);
        let d = to_dataset(&samples, &w);
        assert_eq!((d.n(), d.n_classes()), (500, 2));
        for (i, s) in samples.iter().enumerate() {
            assert_eq!(d.labels()[i], label_index(s.y));
            let row = d.scores().row(i);
            let argmax = usize::from(row[1] > row[0]);
            assert_eq!(argmax, usize::from(w.logit(s) > 0.0));
        }
    }

    #[test]
    fn c_sp_sign_rule() {
        let pos = ToyClassifier::new(1.0, 0.5).unwrap();
        let neg = ToyClassifier::new(1.0, -0.5).unwrap();
        assert!((c_sp(0.9, 0.7, &pos) - 0.3 * 0.01).abs() < 1e-15);
        assert!((c_sp(0.9, 0.7, &neg) - 0.7 * 0.81).abs() < 1e-15);
    }

    #[test]
    fn oracle_tau_rejects_alpha_above_error_rate() {
        let w = ToyClassifier::new(1.0, 0.5).unwrap();
        let err = oracle_tau(&params(0.9), &w, 0.2, 100_000, 1).unwrap_err();
        assert!(matches!(err, Error::Precondition(_)));
    }

    #[test]
    fn trial_rejects_small_n() {
        let w = ToyClassifier::new(1.0, 0.5).unwrap();
        let oracle = OracleBeta {
            tau_target: 0.6,
            beta: 0.01,
            error_rate_source: 0.05,
            error_rate_target: 0.14,
        };
        let setup = TheoremSetup::with_oracle(params(0.9), params(0.7), w, 0.02, oracle);
        assert!(setup.run_trial(0, 50, 0.1, 0).is_err());
    }
}
