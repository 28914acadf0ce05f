//! Synthetic multi-class classifier scores.
//!
//! Each example has a true class `y` drawn uniformly. Its latent logits are
//! standard normal noise plus `signal` on the true class, divided by a
//! temperature `exp(log_temperature)`; larger temperatures make the examples
//! harder. The classifier reports `softmax(sharpness * logits)`, so a
//! sharpness above one gives an over-confident classifier. Scores are
//! continuous, so conformity scores are distinct almost surely.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::scores::{LabeledDataset, ScoreMatrix};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticFamily {
    pub n_classes: usize,
    pub signal: f64,
    pub sharpness: f64,
}

impl Default for SyntheticFamily {
    fn default() -> Self {
        Self {
            n_classes: 10,
            signal: 5.0,
            sharpness: 2.0,
        }
    }
}

impl SyntheticFamily {
    pub fn generate(&self, n: usize, log_temperature: f64, seed: u64) -> LabeledDataset {
        assert!(self.n_classes >= 2 && n >= 1);
        let l = self.n_classes;
        let scale = self.sharpness / log_temperature.exp();
        let mut rng = seed::rng(seed);
        let mut values = Vec::with_capacity(n * l);
        let mut labels = Vec::with_capacity(n);
        let mut logits = vec![0.0; l];
        for _ in 0..n {
            let y = rng.random_range(0..l);
            for (j, z) in logits.iter_mut().enumerate() {
                let noise: f64 = rng.sample(StandardNormal);
                *z = scale * (noise + if j == y { self.signal } else { 0.0 });
            }
            softmax_into(&logits, &mut values);
            labels.push(y);
        }
        LabeledDataset::from_parts_unchecked(ScoreMatrix::from_valid_rows(l, values), labels)
    }
}

pub(crate) fn softmax_into(logits: &[f64], out: &mut Vec<f64>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let start = out.len();
    let mut sum = 0.0;
    for &z in logits {
        let e = (z - max).exp();
        sum += e;
        out.push(e);
    }
    out[start..].iter_mut().for_each(|v| *v /= sum);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_and_determinism() {
        let fam = SyntheticFamily::default();
        let a = fam.generate(50, 0.0, 3);
        assert_eq!((a.n(), a.n_classes()), (50, 10));
        assert_eq!(a, fam.generate(50, 0.0, 3));
        assert_ne!(a, fam.generate(50, 0.0, 4));
    }

    #[test]
    fn higher_temperature_lowers_confidence() {
        let fam = SyntheticFamily::default();
        let mean_top = |d: &LabeledDataset| {
            d.scores().rows().map(crate::qtc::top_confidence).sum::<f64>() / d.n() as f64
        };
        let src = fam.generate(2000, 0.0, 1);
        let tgt = fam.generate(2000, 0.5, 1);
        assert!(mean_top(&tgt) < mean_top(&src));
    }
}
