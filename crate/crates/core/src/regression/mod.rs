//! Regression baselines: predict a calibrated threshold from unlabeled
//! dataset features with an MLP trained on synthetically shifted copies of
//! the source.

pub mod corpus;
pub mod features;
pub mod mlp;

use std::io::{Read, Write};
use std::path::Path;

pub use corpus::{build_corpus, perturb, CorpusEntry, RegressionCorpus, ShiftParams};
pub use features::{extract_features, Extractor, FeatureVector};
pub use mlp::{Dense, Fitted, Mlp, Standardizer, TrainConfig};

use crate::conformal::PredictorSpec;
use crate::error::{Error, Result};
use crate::kv::{parse_records, Record};

const MODEL_MAGIC: &str = "cshift-mlp 1";

/// A trained threshold regressor with everything needed to apply it.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpRegressor {
    pub mlp: Mlp,
    pub standardizer: Standardizer,
    pub extractor: Extractor,
    pub bins: usize,
    pub n_classes: usize,
    pub spec: PredictorSpec,
    pub alpha: f64,
    /// Added back to DCR predictions when no explicit offset is given.
    pub source_tau: f64,
    pub final_loss: f64,
}

/// Trains the regressor on `corpus`. Returns the model and the loss curve.
pub fn train(corpus: &RegressionCorpus, config: &TrainConfig) -> Result<(MlpRegressor, Vec<f64>)> {
    if corpus.is_empty() {
        return Err(Error::InvalidArgument("empty corpus".into()));
    }
    let d = corpus.dim();
    if corpus
        .entries
        .iter()
        .any(|e| e.features.extractor != corpus.extractor || e.features.dim() != d)
    {
        return Err(Error::InvalidArgument("corpus features are inconsistent".into()));
    }
    let inputs: Vec<Vec<f64>> = corpus.entries.iter().map(|e| e.features.values.clone()).collect();
    let targets: Vec<f64> = corpus.entries.iter().map(|e| e.target).collect();
    let fitted = mlp::fit(&inputs, &targets, config)?;
    let model = MlpRegressor {
        final_loss: fitted.final_loss(),
        mlp: fitted.mlp,
        standardizer: fitted.standardizer,
        extractor: corpus.extractor,
        bins: corpus.bins,
        n_classes: corpus.n_classes,
        spec: corpus.spec,
        alpha: corpus.alpha,
        source_tau: corpus.source_tau,
    };
    Ok((model, fitted.losses))
}

impl MlpRegressor {
    /// Raw network output on `features`, before any offset or clamping.
    pub fn raw_output(&self, features: &FeatureVector) -> Result<f64> {
        if features.extractor != self.extractor {
            return Err(Error::InvalidArgument(format!(
                "model expects {} features, got {}",
                self.extractor, features.extractor
            )));
        }
        if features.dim() != self.mlp.input_dim() {
            return Err(Error::InvalidArgument(format!(
                "feature dimension {} does not match model input {}",
                features.dim(),
                self.mlp.input_dim()
            )));
        }
        Ok(self.mlp.forward(&self.standardizer.standardize(&features.values)))
    }

    /// Predicted threshold, clamped to `[0, max_tau]`.
    pub fn predict_tau(&self, features: &FeatureVector, offset_base: Option<f64>) -> Result<f64> {
        let mut out = self.raw_output(features)?;
        if self.extractor == Extractor::Dcr {
            out += offset_base.unwrap_or(self.source_tau);
        }
        Ok(out.clamp(0.0, self.spec.max_tau(self.n_classes)))
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let mut rec = Record::new();
        rec.push("format", MODEL_MAGIC);
        rec.push("layers", join(&self.mlp.layer_sizes()));
        rec.push("extractor", self.extractor);
        rec.push("bins", self.bins);
        rec.push("n_classes", self.n_classes);
        self.spec.write_record(&mut rec);
        rec.push("alpha", self.alpha);
        rec.push("source_tau", self.source_tau);
        rec.push("final_loss", self.final_loss);
        rec.push("feature_mean", join(&self.standardizer.mean));
        rec.push("feature_std", join(&self.standardizer.std));
        rec.push("n_params", self.mlp.n_params());
        let io = |e| Error::io("<model>", e);
        w.write_all(rec.to_text().as_bytes()).map_err(io)?;
        w.write_all(b"\n").map_err(io)?;
        let blob: Vec<u8> = self.mlp.params().iter().flat_map(|v| v.to_le_bytes()).collect();
        w.write_all(&blob).map_err(io)
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes).map_err(|e| Error::io("<model>", e))?;
        let split = bytes
            .windows(2)
            .position(|w| w == b"\n\n")
            .ok_or_else(|| Error::Parse("model file has no header terminator".into()))?;
        let header = std::str::from_utf8(&bytes[..split])
            .map_err(|_| Error::Parse("model header is not UTF-8".into()))?;
        let blob = &bytes[split + 2..];
        let records = parse_records(header)?;
        let rec = records
            .first()
            .ok_or_else(|| Error::Parse("empty model header".into()))?;
        if rec.require("format")? != MODEL_MAGIC {
            return Err(Error::Parse("not a cshift model file".into()));
        }
        let sizes: Vec<usize> = split_list(rec.require("layers")?)?;
        let extractor: Extractor = rec.require("extractor")?.parse()?;
        let mean: Vec<f64> = split_list(rec.require("feature_mean")?)?;
        let std: Vec<f64> = split_list(rec.require("feature_std")?)?;
        if sizes.len() < 2 || mean.len() != sizes[0] || std.len() != sizes[0] {
            return Err(Error::Parse("model standardization does not match input size".into()));
        }
        let mut mlp = Mlp::new(&sizes, 0)?;
        if blob.len() != 8 * mlp.n_params() {
            return Err(Error::Parse(format!(
                "weight blob has {} bytes, expected {}",
                blob.len(),
                8 * mlp.n_params()
            )));
        }
        let params: Vec<f64> = blob
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        mlp.set_params(&params)?;
        Ok(Self {
            mlp,
            standardizer: Standardizer { mean, std },
            extractor,
            bins: rec.parse("bins")?,
            n_classes: rec.parse("n_classes")?,
            spec: PredictorSpec::from_record(rec)?,
            alpha: rec.parse("alpha")?,
            source_tau: rec.parse("source_tau")?,
            final_loss: rec.parse("final_loss")?,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(std::io::BufReader::new(file))
    }
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn split_list<T: std::str::FromStr>(s: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse()
                .map_err(|_| Error::Parse(format!("bad list element {t:?}")))
        })
        .collect()
}
