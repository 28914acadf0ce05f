//! Classifier score matrices, labeled and unlabeled datasets, and their file
//! formats.
//!
//! Two on-disk formats are supported:
//!
//! - CSV with header `label,c0,...,c{L-1}`; one row per example. The label is
//!   a class index in `0..L` or the sentinel `-1` for unlabeled rows.
//! - Binary: magic `CSHIFT01`, `u64 n`, `u64 L`, `u8 has_labels`, then `n*L`
//!   `f64` scores row-major and (if `has_labels`) `n` `i64` labels. All
//!   little-endian.
//!
//! A file is either fully labeled or fully unlabeled; mixing the sentinel with
//! real labels is rejected.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::seed;

/// Maximum allowed `|row_sum - 1|` before a row is rejected.
pub const ROW_SUM_TOLERANCE: f64 = 1e-4;
/// Rows whose sum is off by more than this are renormalized on load.
pub const RENORMALIZE_EPS: f64 = 1e-12;
/// Entries within this distance outside `[0, 1]` are clamped instead of rejected.
pub const ENTRY_TOLERANCE: f64 = 1e-6;

pub const BINARY_MAGIC: &[u8; 8] = b"CSHIFT01";

/// Label value marking an unlabeled row in files.
pub const UNLABELED_SENTINEL: i64 = -1;

/// An `n x L` row-major matrix of class probability estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    n_classes: usize,
    values: Vec<f64>,
}

impl ScoreMatrix {
    /// Validates `values` (row-major, `n_classes` columns), clamping entries
    /// within [`ENTRY_TOLERANCE`] of `[0, 1]` and renormalizing rows whose sum
    /// is within [`ROW_SUM_TOLERANCE`] of one.
    pub fn new(n_classes: usize, mut values: Vec<f64>) -> Result<Self> {
        if n_classes < 2 {
            return Err(Error::InvalidData(format!(
                "need at least 2 classes, got {n_classes}"
            )));
        }
        if values.is_empty() || values.len() % n_classes != 0 {
            return Err(Error::InvalidData(format!(
                "{} values do not form rows of {n_classes} classes",
                values.len()
            )));
        }
        for (i, row) in values.chunks_mut(n_classes).enumerate() {
            normalize_row(row).map_err(|msg| Error::InvalidData(format!("{msg} at row {}", i + 1)))?;
        }
        Ok(Self { n_classes, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_classes = rows.first().map(Vec::len).unwrap_or(0);
        let mut values = Vec::with_capacity(rows.len() * n_classes);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n_classes {
                return Err(Error::InvalidData(format!(
                    "expected {n_classes} columns, found {} at row {}",
                    row.len(),
                    i + 1
                )));
            }
            values.extend_from_slice(row);
        }
        Self::new(n_classes, values)
    }

    pub fn n(&self) -> usize {
        self.values.len() / self.n_classes
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_classes..(i + 1) * self.n_classes]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.values.chunks_exact(self.n_classes)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        let mut values = Vec::with_capacity(indices.len() * self.n_classes);
        for &i in indices {
            values.extend_from_slice(self.row(i));
        }
        Self {
            n_classes: self.n_classes,
            values,
        }
    }

    /// Builds a matrix from rows that are already valid probability vectors
    /// (generated in-crate), skipping clamping but still renormalizing.
    pub(crate) fn from_valid_rows(n_classes: usize, mut values: Vec<f64>) -> Self {
        debug_assert!(n_classes >= 2 && !values.is_empty() && values.len() % n_classes == 0);
        for row in values.chunks_mut(n_classes) {
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > RENORMALIZE_EPS {
                row.iter_mut().for_each(|v| *v /= sum);
            }
        }
        Self { n_classes, values }
    }
}

impl AsRef<ScoreMatrix> for ScoreMatrix {
    fn as_ref(&self) -> &ScoreMatrix {
        self
    }
}

fn normalize_row(row: &mut [f64]) -> std::result::Result<(), String> {
    for v in row.iter_mut() {
        if !v.is_finite() || *v < -ENTRY_TOLERANCE || *v > 1.0 + ENTRY_TOLERANCE {
            return Err(format!("entry {v} outside [0,1]"));
        }
        *v = v.clamp(0.0, 1.0);
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
        return Err(format!("row sum {} exceeds tolerance", round6(sum)));
    }
    if (sum - 1.0).abs() > RENORMALIZE_EPS {
        row.iter_mut().for_each(|v| *v /= sum);
    }
    Ok(())
}

fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

/// Scores together with a class label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    scores: ScoreMatrix,
    labels: Vec<usize>,
}

impl LabeledDataset {
    pub fn new(scores: ScoreMatrix, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != scores.n() {
            return Err(Error::InvalidData(format!(
                "{} labels for {} rows",
                labels.len(),
                scores.n()
            )));
        }
        if let Some((i, &y)) = labels
            .iter()
            .enumerate()
            .find(|(_, &y)| y >= scores.n_classes())
        {
            return Err(Error::InvalidData(format!(
                "label {y} >= L={} at row {}",
                scores.n_classes(),
                i + 1
            )));
        }
        Ok(Self { scores, labels })
    }

    pub fn scores(&self) -> &ScoreMatrix {
        &self.scores
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn n(&self) -> usize {
        self.scores.n()
    }

    pub fn n_classes(&self) -> usize {
        self.scores.n_classes()
    }

    /// Drops the labels.
    pub fn unlabeled(&self) -> UnlabeledDataset {
        UnlabeledDataset {
            scores: self.scores.clone(),
        }
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            scores: self.scores.select(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub(crate) fn from_parts_unchecked(scores: ScoreMatrix, labels: Vec<usize>) -> Self {
        debug_assert_eq!(scores.n(), labels.len());
        Self { scores, labels }
    }
}

impl AsRef<ScoreMatrix> for LabeledDataset {
    fn as_ref(&self) -> &ScoreMatrix {
        &self.scores
    }
}

/// Scores without labels, as available from a target distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledDataset {
    scores: ScoreMatrix,
}

impl UnlabeledDataset {
    pub fn new(scores: ScoreMatrix) -> Self {
        Self { scores }
    }

    pub fn scores(&self) -> &ScoreMatrix {
        &self.scores
    }

    pub fn n(&self) -> usize {
        self.scores.n()
    }

    pub fn n_classes(&self) -> usize {
        self.scores.n_classes()
    }
}

impl AsRef<ScoreMatrix> for UnlabeledDataset {
    fn as_ref(&self) -> &ScoreMatrix {
        &self.scores
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Dataset {
    Labeled(LabeledDataset),
    Unlabeled(UnlabeledDataset),
}

impl Dataset {
    pub fn scores(&self) -> &ScoreMatrix {
        match self {
            Dataset::Labeled(d) => d.scores(),
            Dataset::Unlabeled(d) => d.scores(),
        }
    }

    pub fn into_labeled(self) -> Result<LabeledDataset> {
        match self {
            Dataset::Labeled(d) => Ok(d),
            Dataset::Unlabeled(_) => Err(Error::InvalidData(
                "expected a labeled dataset, found unlabeled rows".into(),
            )),
        }
    }

    /// Unlabeled view; labels, if any, are dropped.
    pub fn into_unlabeled(self) -> UnlabeledDataset {
        match self {
            Dataset::Labeled(d) => UnlabeledDataset { scores: d.scores },
            Dataset::Unlabeled(d) => d,
        }
    }
}

impl AsRef<ScoreMatrix> for Dataset {
    fn as_ref(&self) -> &ScoreMatrix {
        self.scores()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Binary,
}

impl Format {
    /// `.bin` selects the binary format, anything else CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("bin") => Format::Binary,
            _ => Format::Csv,
        }
    }
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "bin" | "binary" => Ok(Format::Binary),
            other => Err(Error::InvalidArgument(format!("unknown format {other:?}"))),
        }
    }
}

pub fn load_dataset(path: impl AsRef<Path>, format: Format) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let result = match format {
        Format::Csv => read_csv(reader),
        Format::Binary => read_binary(reader),
    };
    result.map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        Error::Parse(msg) => Error::Parse(format!("{}: {msg}", path.display())),
        Error::InvalidData(msg) => Error::InvalidData(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>, format: Format) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = BufWriter::new(file);
    match format {
        Format::Csv => write_csv(dataset, &mut writer),
        Format::Binary => write_binary(dataset, &mut writer),
    }
    .map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })?;
    writer.flush().map_err(|e| Error::io(path, e))
}

fn assemble(n_classes: usize, values: Vec<f64>, raw_labels: Vec<i64>) -> Result<Dataset> {
    let scores = ScoreMatrix::new(n_classes, values)?;
    let n_sentinel = raw_labels
        .iter()
        .filter(|&&y| y == UNLABELED_SENTINEL)
        .count();
    if n_sentinel == raw_labels.len() {
        return Ok(Dataset::Unlabeled(UnlabeledDataset::new(scores)));
    }
    let mut labels = Vec::with_capacity(raw_labels.len());
    for (i, &y) in raw_labels.iter().enumerate() {
        if y == UNLABELED_SENTINEL {
            return Err(Error::InvalidData(format!(
                "mixed labeled and unlabeled rows at row {}",
                i + 1
            )));
        }
        if y < 0 || y as u64 >= n_classes as u64 {
            return Err(Error::InvalidData(format!(
                "label {y} >= L={n_classes} at row {}",
                i + 1
            )));
        }
        labels.push(y as usize);
    }
    LabeledDataset::new(scores, labels).map(Dataset::Labeled)
}

pub fn read_csv<R: Read>(reader: R) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| Error::Parse(format!("header: {e}")))?
        .clone();
    if header.get(0) != Some("label") {
        return Err(Error::Parse(
            "header must start with `label` followed by class columns".into(),
        ));
    }
    let n_classes = header.len() - 1;
    if n_classes < 2 {
        return Err(Error::Parse(format!(
            "header declares {n_classes} class columns, need at least 2"
        )));
    }
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::Parse(format!("row {row}: {e}")))?;
        if record.len() != n_classes + 1 {
            return Err(Error::Parse(format!(
                "expected {} columns, found {} at row {row}",
                n_classes + 1,
                record.len()
            )));
        }
        let label: i64 = record[0]
            .parse()
            .map_err(|_| Error::Parse(format!("bad label {:?} at row {row}", &record[0])))?;
        labels.push(label);
        let start = values.len();
        for field in record.iter().skip(1) {
            let v: f64 = field
                .parse()
                .map_err(|_| Error::Parse(format!("bad score {field:?} at row {row}")))?;
            values.push(v);
        }
        normalize_row(&mut values[start..])
            .map_err(|msg| Error::InvalidData(format!("{msg} at row {row}")))?;
    }
    if labels.is_empty() {
        return Err(Error::InvalidData("no rows".into()));
    }
    assemble(n_classes, values, labels)
}

pub fn write_csv<W: Write>(dataset: &Dataset, writer: W) -> Result<()> {
    let scores = dataset.scores();
    let mut wtr = csv::Writer::from_writer(writer);
    let map_err = |e: csv::Error| Error::Parse(format!("csv write: {e}"));
    let mut header = vec!["label".to_string()];
    header.extend((0..scores.n_classes()).map(|j| format!("c{j}")));
    wtr.write_record(&header).map_err(map_err)?;
    let mut fields = Vec::with_capacity(scores.n_classes() + 1);
    for i in 0..scores.n() {
        fields.clear();
        fields.push(match dataset {
            Dataset::Labeled(d) => d.labels()[i].to_string(),
            Dataset::Unlabeled(_) => UNLABELED_SENTINEL.to_string(),
        });
        // `{}` on f64 prints the shortest representation that parses back exactly.
        fields.extend(scores.row(i).iter().map(|v| v.to_string()));
        wtr.write_record(&fields).map_err(map_err)?;
    }
    wtr.flush().map_err(|e| Error::io("<csv>", e))
}

pub fn read_binary<R: Read>(mut reader: R) -> Result<Dataset> {
    let io = |e| Error::io("<binary>", e);
    let mut magic = [0u8; 8];
    reader.read_exact(&mut magic).map_err(io)?;
    if &magic != BINARY_MAGIC {
        return Err(Error::Parse("bad magic, expected CSHIFT01".into()));
    }
    let mut u64buf = [0u8; 8];
    reader.read_exact(&mut u64buf).map_err(io)?;
    let n = u64::from_le_bytes(u64buf) as usize;
    reader.read_exact(&mut u64buf).map_err(io)?;
    let n_classes = u64::from_le_bytes(u64buf) as usize;
    let mut flag = [0u8; 1];
    reader.read_exact(&mut flag).map_err(io)?;
    let has_labels = match flag[0] {
        0 => false,
        1 => true,
        other => return Err(Error::Parse(format!("bad has_labels byte {other}"))),
    };
    if n == 0 || n_classes < 2 {
        return Err(Error::InvalidData(format!("bad shape n={n}, L={n_classes}")));
    }
    let total = n
        .checked_mul(n_classes)
        .ok_or_else(|| Error::Parse("shape overflow".into()))?;
    let mut values = Vec::with_capacity(total);
    for _ in 0..total {
        reader.read_exact(&mut u64buf).map_err(io)?;
        values.push(f64::from_le_bytes(u64buf));
    }
    let labels = if has_labels {
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            reader.read_exact(&mut u64buf).map_err(io)?;
            labels.push(i64::from_le_bytes(u64buf));
        }
        labels
    } else {
        vec![UNLABELED_SENTINEL; n]
    };
    assemble(n_classes, values, labels)
}

pub fn write_binary<W: Write>(dataset: &Dataset, mut writer: W) -> Result<()> {
    let io = |e| Error::io("<binary>", e);
    let scores = dataset.scores();
    writer.write_all(BINARY_MAGIC).map_err(io)?;
    writer
        .write_all(&(scores.n() as u64).to_le_bytes())
        .map_err(io)?;
    writer
        .write_all(&(scores.n_classes() as u64).to_le_bytes())
        .map_err(io)?;
    let has_labels = matches!(dataset, Dataset::Labeled(_));
    writer.write_all(&[u8::from(has_labels)]).map_err(io)?;
    for v in scores.values() {
        writer.write_all(&v.to_le_bytes()).map_err(io)?;
    }
    if let Dataset::Labeled(d) = dataset {
        for &y in d.labels() {
            writer.write_all(&(y as i64).to_le_bytes()).map_err(io)?;
        }
    }
    Ok(())
}

/// Partitions `d` uniformly at random into parts of sizes `ceil(fraction*n)`
/// and the remainder. Both parts keep the original row order.
pub fn split(
    d: &LabeledDataset,
    fraction: f64,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "split fraction {fraction} outside (0,1)"
        )));
    }
    let n = d.n();
    let first = crate::conformal::ceil_rank(fraction * n as f64);
    if first < 1 || first >= n {
        return Err(Error::InvalidArgument(format!(
            "split of n={n} at fraction {fraction} gives sizes ({first}, {})",
            n.saturating_sub(first)
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(seed));
    let (a, b) = order.split_at_mut(first);
    a.sort_unstable();
    b.sort_unstable();
    Ok((d.select(a), d.select(b)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn csv(text: &str) -> Result<Dataset> {
        read_csv(text.as_bytes())
    }

    #[test]
    fn minimal_labeled_csv() {
        let d = csv("label,c0,c1\n1,0.3,0.7\n").unwrap();
        let d = d.into_labeled().unwrap();
        assert_eq!(d.n(), 1);
        assert_eq!(d.n_classes(), 2);
        assert_eq!(d.labels(), &[1]);
    }

    #[test]
    fn sentinel_gives_unlabeled() {
        let d = csv("label,c0,c1\n-1,0.3,0.7\n").unwrap();
        assert!(matches!(d, Dataset::Unlabeled(_)));
    }

    #[test]
    fn row_sum_violation_names_the_row() {
        let err = csv("label,c0,c1\n0,0.5,0.6\n").unwrap_err().to_string();
        assert!(err.contains("row sum 1.1 exceeds tolerance at row 1"), "{err}");
    }

    #[test]
    fn wrong_column_count() {
        let err = csv("label,c0,c1\n0,0.5,0.5\n1,1.0\n").unwrap_err().to_string();
        assert!(err.contains("row 2"), "{err}");
    }

    #[test]
    fn label_out_of_range() {
        let err = csv("label,c0,c1\n2,0.5,0.5\n").unwrap_err().to_string();
        assert!(err.contains("label 2") && err.contains("row 1"), "{err}");
    }

    #[test]
    fn mixed_labels_rejected() {
        let err = csv("label,c0,c1\n0,0.5,0.5\n-1,0.5,0.5\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("mixed") && err.contains("row 2"), "{err}");
    }

    #[test]
    fn entry_out_of_range() {
        let err = csv("label,c0,c1\n0,1.5,-0.5\n").unwrap_err().to_string();
        assert!(err.contains("outside [0,1]") && err.contains("row 1"), "{err}");
    }

    #[test]
    fn near_normalized_rows_are_renormalized() {
        let d = csv("label,c0,c1,c2\n0,0.33333,0.33333,0.33333\n").unwrap();
        let sum: f64 = d.scores().row(0).iter().sum();
        assert!((sum - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn split_sizes_and_determinism() {
        let scores = ScoreMatrix::new(2, [0.5, 0.5].repeat(10)).unwrap();
        let d = LabeledDataset::new(scores, vec![0; 10]).unwrap();
        let (a, b) = split(&d, 0.5, 7).unwrap();
        assert_eq!((a.n(), b.n()), (5, 5));
        let (a2, b2) = split(&d, 0.5, 7).unwrap();
        assert_eq!((a, b), (a2, b2));
    }

    #[test]
    fn degenerate_split_is_an_error() {
        let scores = ScoreMatrix::new(2, [0.5, 0.5].repeat(2)).unwrap();
        let d = LabeledDataset::new(scores, vec![0, 1]).unwrap();
        assert!(split(&d, 0.9, 0).is_err());
    }
}
