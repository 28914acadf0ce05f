use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::qtc::top_confidence;
use crate::scores::ScoreMatrix;

/// Dataset-level feature extractors for the regression baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Extractor {
    /// Average top confidence.
    Acr,
    /// Average top confidence minus that of the source set.
    Dcr,
    /// Normalized histogram of top confidences over equal-width bins of `[0, 1]`.
    Chr,
    /// `Chr` without its last bin.
    ChrMinus,
    /// Per predicted class, the average probability of that class.
    Pcr,
}

impl Extractor {
    pub const ALL: [Extractor; 5] = [
        Extractor::Acr,
        Extractor::Dcr,
        Extractor::Chr,
        Extractor::ChrMinus,
        Extractor::Pcr,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Extractor::Acr => "acr",
            Extractor::Dcr => "dcr",
            Extractor::Chr => "chr",
            Extractor::ChrMinus => "chr-minus",
            Extractor::Pcr => "pcr",
        }
    }

    pub fn dimension(&self, bins: usize, n_classes: usize) -> usize {
        match self {
            Extractor::Acr | Extractor::Dcr => 1,
            Extractor::Chr => bins,
            Extractor::ChrMinus => bins - 1,
            Extractor::Pcr => n_classes,
        }
    }
}

impl fmt::Display for Extractor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Extractor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "acr" => Ok(Extractor::Acr),
            "dcr" => Ok(Extractor::Dcr),
            "chr" => Ok(Extractor::Chr),
            "chr-minus" | "chr-" => Ok(Extractor::ChrMinus),
            "pcr" => Ok(Extractor::Pcr),
            other => Err(Error::InvalidArgument(format!("unknown extractor {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub extractor: Extractor,
}

impl FeatureVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

fn mean_top_confidence(scores: &ScoreMatrix) -> f64 {
    scores.rows().map(top_confidence).sum::<f64>() / scores.n() as f64
}

/// Index of the largest entry; the lowest index wins ties.
fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// Extracts `extractor`'s features from `data`. Returns warnings alongside
/// (currently only PCR's empty-class fallback).
pub fn extract_features(
    data: &impl AsRef<ScoreMatrix>,
    extractor: Extractor,
    bins: usize,
    source_ref: Option<&ScoreMatrix>,
) -> Result<(FeatureVector, Vec<String>)> {
    let scores = data.as_ref();
    if scores.n() == 0 {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    let mut warnings = Vec::new();
    let values = match extractor {
        Extractor::Acr => vec![mean_top_confidence(scores)],
        Extractor::Dcr => {
            let source = source_ref.ok_or_else(|| {
                Error::InvalidArgument("DCR needs a source reference dataset".into())
            })?;
            vec![mean_top_confidence(scores) - mean_top_confidence(source)]
        }
        Extractor::Chr | Extractor::ChrMinus => {
            if bins < 2 {
                return Err(Error::InvalidArgument(format!("CHR needs >= 2 bins, got {bins}")));
            }
            let mut hist = vec![0.0; bins];
            for row in scores.rows() {
                // interior edges go to the upper bin; the last bin is closed at 1
                let b = ((top_confidence(row) * bins as f64).floor() as usize).min(bins - 1);
                hist[b] += 1.0;
            }
            let n = scores.n() as f64;
            hist.iter_mut().for_each(|h| *h /= n);
            if extractor == Extractor::ChrMinus {
                hist.pop();
            }
            hist
        }
        Extractor::Pcr => {
            let l = scores.n_classes();
            let mut sums = vec![0.0; l];
            let mut counts = vec![0usize; l];
            for row in scores.rows() {
                let j = argmax(row);
                sums[j] += row[j];
                counts[j] += 1;
            }
            let mut empty = 0;
            let values = sums
                .iter()
                .zip(&counts)
                .map(|(&s, &c)| {
                    if c == 0 {
                        empty += 1;
                        1.0 / l as f64
                    } else {
                        s / c as f64
                    }
                })
                .collect();
            if empty > 0 {
                warnings.push(format!("PCR: {empty} classes never predicted, set to 1/L"));
            }
            values
        }
    };
    Ok((FeatureVector { values, extractor }, warnings))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_class(tops: &[f64]) -> ScoreMatrix {
        ScoreMatrix::new(2, tops.iter().flat_map(|&c| [c, 1.0 - c]).collect()).unwrap()
    }

    #[test]
    fn acr_is_mean_top_confidence() {
        let (f, _) = extract_features(&two_class(&[0.9, 0.7]), Extractor::Acr, 10, None).unwrap();
        assert!((f.values[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn dcr_against_itself_is_zero() {
        let d = two_class(&[0.9, 0.7, 0.55]);
        let (f, _) = extract_features(&d, Extractor::Dcr, 10, Some(&d)).unwrap();
        assert_eq!(f.values, vec![0.0]);
        assert!(extract_features(&d, Extractor::Dcr, 10, None).is_err());
    }

    #[test]
    fn chr_bins() {
        let d = ScoreMatrix::from_rows(&[
            vec![0.3, 0.3, 0.2, 0.2],
            vec![0.6, 0.4, 0.0, 0.0],
            vec![0.9, 0.1, 0.0, 0.0],
        ])
        .unwrap();
        let (f, _) = extract_features(&d, Extractor::Chr, 2, None).unwrap();
        assert!((f.values[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((f.values[1] - 2.0 / 3.0).abs() < 1e-15);
        let (g, _) = extract_features(&d, Extractor::ChrMinus, 2, None).unwrap();
        assert_eq!(g.values, f.values[..1].to_vec());
        assert!(extract_features(&d, Extractor::Chr, 1, None).is_err());
    }

    #[test]
    fn chr_edge_goes_up_and_one_is_in_last_bin() {
        let d = two_class(&[0.5, 1.0]);
        let (f, _) = extract_features(&d, Extractor::Chr, 2, None).unwrap();
        assert_eq!(f.values, vec![0.0, 1.0]);
    }

    #[test]
    fn pcr_per_predicted_class_with_fallback() {
        let d = ScoreMatrix::from_rows(&[
            vec![0.6, 0.3, 0.1],
            vec![0.8, 0.1, 0.1],
            vec![0.2, 0.7, 0.1],
        ])
        .unwrap();
        let (f, warnings) = extract_features(&d, Extractor::Pcr, 10, None).unwrap();
        assert!((f.values[0] - 0.7).abs() < 1e-15);
        assert!((f.values[1] - 0.7).abs() < 1e-15);
        assert!((f.values[2] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(warnings.len(), 1);
    }

    #[test]
    fn names_round_trip() {
        for e in Extractor::ALL {
            assert_eq!(e.name().parse::<Extractor>().unwrap(), e);
        }
    }
}
