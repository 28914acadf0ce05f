#![allow(dead_code)]

use conformal_shift::scores::{LabeledDataset, ScoreMatrix};
use conformal_shift::toymodel::{OracleBeta, ToyClassifier, ToyModelParams};
use rand::Rng;
use rand_distr::{Distribution, Gamma};

/// Monte Carlo oracle for the default toy setting, computed once with
/// `oracle_beta(source, target, w, ORACLE_ALPHA, ORACLE_N_MC, ORACLE_SEED)`.
pub const ORACLE_SEED: u64 = 20240611;
pub const ORACLE_N_MC: usize = 10_000_000;
pub const ORACLE_ALPHA: f64 = 0.02;
pub const ORACLE_TAU_TARGET: f64 = 0.5954044313789594;
pub const ORACLE_BETA: f64 = 0.006704;
pub const ORACLE_ERROR_SOURCE: f64 = 0.047301;
pub const ORACLE_ERROR_TARGET: f64 = 0.1419008;

pub fn toy_source() -> ToyModelParams {
    ToyModelParams::new(0.05, 1.0, 0.9).unwrap()
}

pub fn toy_target() -> ToyModelParams {
    ToyModelParams::new(0.05, 1.0, 0.7).unwrap()
}

pub fn toy_classifier() -> ToyClassifier {
    ToyClassifier::new(1.0, 0.5).unwrap()
}

pub fn frozen_oracle() -> OracleBeta {
    OracleBeta {
        tau_target: ORACLE_TAU_TARGET,
        beta: ORACLE_BETA,
        error_rate_source: ORACLE_ERROR_SOURCE,
        error_rate_target: ORACLE_ERROR_TARGET,
    }
}

pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Row drawn from a symmetric Dirichlet with the given concentration.
pub fn dirichlet_row<R: Rng>(rng: &mut R, l: usize, concentration: f64) -> Vec<f64> {
    let g = Gamma::new(concentration, 1.0).unwrap();
    loop {
        let draws: Vec<f64> = (0..l).map(|_| g.sample(rng)).collect();
        let total: f64 = draws.iter().sum();
        if total > 0.0 {
            return draws.into_iter().map(|v| v / total).collect();
        }
    }
}

pub fn random_labeled<R: Rng>(rng: &mut R, n: usize, l: usize) -> LabeledDataset {
    let rows: Vec<Vec<f64>> = (0..n).map(|_| dirichlet_row(rng, l, 0.5)).collect();
    let labels = (0..n).map(|_| rng.random_range(0..l)).collect();
    LabeledDataset::new(ScoreMatrix::from_rows(&rows).unwrap(), labels).unwrap()
}
