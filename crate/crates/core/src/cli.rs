//! The `cshift` command-line front end.
//!
//! Exit codes: 0 success, 2 I/O, parse or usage error, 3 saturated
//! threshold (output still written, flagged), 4 numeric failure,
//! 5 violated modelling precondition.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::conformal::{calibrate, evaluate, CoverageReport, PredictorSpec, Threshold};
use crate::error::{Error, Result};
use crate::kv::{parse_records, write_records, Record};
use crate::qtc::{recalibrate, QtcMethod};
use crate::regression::{self, extract_features, Extractor, MlpRegressor, TrainConfig};
use crate::scores::{load_dataset, save_dataset, Dataset, Format, LabeledDataset, UnlabeledDataset};
use crate::seed;
use crate::synthetic::SyntheticFamily;
use crate::toymodel::{self, ToyClassifier, ToyModelParams, TheoremSetup, TheoremTrialReport};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 2;
pub const EXIT_SATURATED: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;
pub const EXIT_PRECONDITION: i32 = 5;

/// Column order of every coverage report CSV.
pub const REPORT_HEADER: &str =
    "method,predictor,alpha,tau,coverage,avg_set_size,median_set_size,n_eval,seed";

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Saturated(_) => EXIT_SATURATED,
        Error::Numeric(_) => EXIT_NUMERIC,
        Error::Precondition(_) => EXIT_PRECONDITION,
        Error::Io { .. }
        | Error::Parse(_)
        | Error::InvalidData(_)
        | Error::InvalidArgument(_)
        | Error::ClassMismatch { .. } => EXIT_IO,
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "cshift",
    version,
    about = "Conformal prediction sets and their recalibration under distribution shift"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Calibrate a predictor on labeled scores.
    Calibrate(CalibrateArgs),
    /// Recalibrate for an unlabeled target with a QTC method.
    Recalibrate(RecalibrateArgs),
    /// Evaluate thresholds on labeled test scores, appending CSV rows.
    Evaluate(EvaluateArgs),
    /// Train a regression baseline and optionally predict a target threshold.
    Baseline(BaselineArgs),
    /// Run toy-model trials of the finite-sample QTC bound.
    Simulate(SimulateArgs),
    /// Calibrate on a source and evaluate on a labeled target for several methods.
    Sweep(SweepArgs),
    /// Write a synthetic score dataset.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PredictorKind {
    Tps,
    Aps,
    Raps,
}

#[derive(Debug, Args)]
struct PredictorArgs {
    /// tps, aps or raps [default: tps]
    #[arg(long, value_enum)]
    predictor: Option<PredictorKind>,
    /// RAPS penalty per ranked position beyond kreg [default: 0.1]
    #[arg(long)]
    lambda: Option<f64>,
    /// RAPS number of unpenalized positions [default: 2]
    #[arg(long)]
    kreg: Option<usize>,
}

impl PredictorArgs {
    fn given(&self) -> Result<Option<PredictorSpec>> {
        let kind = self.predictor;
        if kind != Some(PredictorKind::Raps) && (self.lambda.is_some() || self.kreg.is_some()) {
            return Err(Error::InvalidArgument(
                "--lambda/--kreg are only valid with --predictor raps".into(),
            ));
        }
        Ok(match kind {
            None => None,
            Some(PredictorKind::Tps) => Some(PredictorSpec::Tps),
            Some(PredictorKind::Aps) => Some(PredictorSpec::Aps),
            Some(PredictorKind::Raps) => Some(PredictorSpec::raps(
                self.lambda.unwrap_or(0.1),
                self.kreg.unwrap_or(2),
            )?),
        })
    }

    fn resolve(&self) -> Result<PredictorSpec> {
        Ok(self.given()?.unwrap_or(PredictorSpec::Tps))
    }
}

#[derive(Debug, Args)]
struct LevelArgs {
    /// Miscoverage level, comma list or inclusive grid start:stop:step.
    #[arg(long, conflicts_with = "coverage")]
    alpha: Option<String>,
    /// Target coverage 1-alpha, same syntax as --alpha.
    #[arg(long)]
    coverage: Option<String>,
}

impl LevelArgs {
    fn alphas(&self) -> Result<Vec<f64>> {
        match (&self.alpha, &self.coverage) {
            (Some(a), None) => parse_grid(a),
            (None, Some(c)) => Ok(parse_grid(c)?.into_iter().map(|v| round12(1.0 - v)).collect()),
            (None, None) => Ok(vec![0.1]),
            (Some(_), Some(_)) => Err(Error::InvalidArgument(
                "give either --alpha or --coverage".into(),
            )),
        }
    }
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
struct CalibrateArgs {
    #[command(flatten)]
    predictor: PredictorArgs,
    #[command(flatten)]
    level: LevelArgs,
    /// Labeled calibration scores (.csv or .bin).
    #[arg(long)]
    cal: PathBuf,
    /// Threshold file to write.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
struct RecalibrateArgs {
    #[command(flatten)]
    predictor: PredictorArgs,
    #[command(flatten)]
    level: LevelArgs,
    /// Labeled source scores.
    #[arg(long)]
    source: PathBuf,
    /// Target scores; labels, if present, are ignored.
    #[arg(long)]
    target: PathBuf,
    #[arg(long, default_value = "qtc")]
    method: String,
    /// Threshold file to write; QTC estimates go to `<out>.qtc`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
struct EvaluateArgs {
    /// Overrides the predictor stored in the threshold file.
    #[command(flatten)]
    predictor: PredictorArgs,
    /// Labeled test scores.
    #[arg(long)]
    test: PathBuf,
    /// Threshold file from calibrate, recalibrate or baseline.
    #[arg(long)]
    thresholds: PathBuf,
    /// Report CSV; rows are appended.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct BaselineTraining {
    #[arg(long, default_value_t = 10)]
    bins: usize,
    /// Number of corpus entries, including the unshifted source.
    #[arg(long, default_value_t = 90)]
    shifts: usize,
    #[arg(long, default_value_t = 5000)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
}

impl BaselineTraining {
    fn config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            learning_rate: self.lr,
            seed: seed::derive(seed, "mlp-init"),
            ..Default::default()
        }
    }
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
struct BaselineArgs {
    #[command(flatten)]
    predictor: PredictorArgs,
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    /// Labeled source scores; also the DCR reference.
    #[arg(long)]
    cal: PathBuf,
    /// acr, dcr, chr, chr-minus or pcr.
    #[arg(long, default_value = "chr")]
    extractor: String,
    #[command(flatten)]
    training: BaselineTraining,
    /// Where to write the trained model.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Target scores to predict a threshold for.
    #[arg(long)]
    target: Option<PathBuf>,
    /// Threshold file for the predicted threshold (needs --target).
    #[arg(long, requires = "target")]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
struct SimulateArgs {
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 10_000)]
    n: usize,
    #[arg(long, default_value_t = 0.02)]
    alpha: f64,
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    #[arg(long, default_value_t = 0.9)]
    psrc: f64,
    #[arg(long, default_value_t = 0.7)]
    ptgt: f64,
    #[arg(long, default_value_t = 1.0)]
    winv: f64,
    #[arg(long, default_value_t = 0.5, allow_hyphen_values = true)]
    wsp: f64,
    #[arg(long, default_value_t = 0.05)]
    gamma: f64,
    #[arg(long, default_value_t = 1.0)]
    c: f64,
    /// Monte Carlo sample size for the oracle quantities.
    #[arg(long, default_value_t = toymodel::DEFAULT_N_MC)]
    n_mc: usize,
    /// Trials CSV to write.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
struct SweepArgs {
    #[command(flatten)]
    predictor: PredictorArgs,
    #[command(flatten)]
    level: LevelArgs,
    /// Labeled source scores.
    #[arg(long)]
    source: PathBuf,
    /// Labeled target scores; labels are used only for evaluation.
    #[arg(long)]
    target: PathBuf,
    /// Comma list of none, qtc, qtc-sc, qtc-st, acr, dcr, chr, chr-minus, pcr.
    #[arg(long, default_value = "none,qtc,qtc-sc,qtc-st")]
    methods: String,
    #[command(flatten)]
    training: BaselineTraining,
    /// Report CSV; rows are appended.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
struct SynthArgs {
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 10)]
    classes: usize,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    log_temperature: f64,
    #[arg(long, default_value_t = 5.0)]
    signal: f64,
    #[arg(long, default_value_t = 2.0)]
    sharpness: f64,
    /// Write label -1 for every row.
    #[arg(long)]
    unlabeled: bool,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Runs the CLI on `args` (program name first) and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let args = match apply_config(args) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_code(&e);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_IO } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Calibrate(a) => cmd_calibrate(a),
        Command::Recalibrate(a) => cmd_recalibrate(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Baseline(a) => cmd_baseline(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Synth(a) => cmd_synth(a),
    }
}

/// Removes `--config PATH` and splices the file's flat `key = value` pairs in
/// as flags right after the subcommand, so flags given explicitly win.
fn apply_config(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let mut rest = Vec::with_capacity(args.len());
    let mut config = None;
    let mut iter = args.into_iter();
    while let Some(a) = iter.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            let path = iter
                .next()
                .ok_or_else(|| Error::InvalidArgument("--config needs a path".into()))?;
            config = Some(PathBuf::from(path));
        } else if let Some(p) = s.strip_prefix("--config=") {
            config = Some(PathBuf::from(p));
        } else {
            rest.push(a);
        }
    }
    let Some(path) = config else { return Ok(rest) };
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let table: toml::Table = text
        .parse()
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    let mut flags = Vec::new();
    for (key, value) in &table {
        let flag = format!("--{}", key.replace('_', "-"));
        let rendered = match value {
            toml::Value::Boolean(true) => {
                flags.push(OsString::from(flag));
                continue;
            }
            toml::Value::Boolean(false) => continue,
            toml::Value::String(s) => s.clone(),
            toml::Value::Integer(i) => i.to_string(),
            toml::Value::Float(f) => f.to_string(),
            toml::Value::Array(items) => items
                .iter()
                .map(|v| match v {
                    toml::Value::String(s) => s.clone(),
                    other => other.to_string(),
                })
                .collect::<Vec<_>>()
                .join(","),
            other => {
                return Err(Error::Parse(format!(
                    "{}: unsupported value for `{key}`: {other}",
                    path.display()
                )))
            }
        };
        flags.push(OsString::from(format!("{flag}={rendered}")));
    }
    let sub = rest
        .iter()
        .skip(1)
        .position(|a| !a.to_string_lossy().starts_with('-'))
        .map(|p| p + 2)
        .unwrap_or(rest.len());
    rest.splice(sub..sub, flags);
    Ok(rest)
}

fn round12(x: f64) -> f64 {
    (x * 1e12).round() / 1e12
}

/// Parses `0.1`, `0.05,0.1,0.2` or an inclusive grid `start:stop:step`.
pub fn parse_grid(s: &str) -> Result<Vec<f64>> {
    let bad = |what: &str| Error::InvalidArgument(format!("bad level {what:?} in {s:?}"));
    let num = |t: &str| t.trim().parse::<f64>().map_err(|_| bad(t));
    let values = if s.contains(':') {
        let parts: Vec<&str> = s.split(':').collect();
        let [start, stop, step] = parts[..] else {
            return Err(bad(s));
        };
        let (start, stop, step) = (num(start)?, num(stop)?, num(step)?);
        if !(step > 0.0) || stop < start {
            return Err(bad(s));
        }
        let mut out = Vec::new();
        let mut i = 0usize;
        loop {
            let v = start + i as f64 * step;
            if v > stop + 1e-12 {
                break;
            }
            out.push(round12(v));
            i += 1;
        }
        out
    } else {
        s.split(',').map(num).collect::<Result<Vec<_>>>()?
    };
    if values.is_empty() || values.iter().any(|v| !(*v > 0.0 && *v < 1.0)) {
        return Err(Error::InvalidArgument(format!(
            "levels {s:?} must be nonempty and strictly inside (0,1)"
        )));
    }
    Ok(values)
}

fn load(path: &Path) -> Result<Dataset> {
    load_dataset(path, Format::from_path(path))
}

fn load_labeled(path: &Path) -> Result<LabeledDataset> {
    load(path)?.into_labeled().map_err(|e| match e {
        Error::InvalidData(m) => Error::InvalidData(format!("{}: {m}", path.display())),
        other => other,
    })
}

fn load_unlabeled(path: &Path) -> Result<UnlabeledDataset> {
    Ok(load(path)?.into_unlabeled())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn predictor_column(spec: &PredictorSpec) -> String {
    match spec {
        PredictorSpec::Raps { lambda, k_reg } => format!("raps-l{lambda}-k{k_reg}"),
        other => other.name().to_string(),
    }
}

fn threshold_record(spec: &PredictorSpec, method: &str, thr: &Threshold, seed: u64) -> Record {
    let mut rec = Record::new();
    spec.write_record(&mut rec);
    rec.push("method", method);
    thr.write_record(&mut rec);
    rec.push("seed", seed);
    rec
}

fn report_row(
    method: &str,
    spec: &PredictorSpec,
    alpha: f64,
    tau: f64,
    r: &CoverageReport,
    seed: u64,
) -> String {
    format!(
        "{method},{},{alpha},{tau},{},{},{},{},{seed}\n",
        predictor_column(spec),
        r.coverage,
        r.avg_set_size,
        r.median_set_size,
        r.n_eval
    )
}

/// Appends rows to a report CSV, writing the header first if the file is empty.
fn append_rows(path: &Path, rows: &str) -> Result<()> {
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let empty = file.metadata().map_err(|e| Error::io(path, e))?.len() == 0;
    let mut text = String::new();
    if empty {
        text.push_str(REPORT_HEADER);
        text.push('\n');
    }
    text.push_str(rows);
    file.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

fn calibration_seed(seed: u64) -> u64 {
    seed::derive(seed, "calibrate")
}

fn evaluation_seed(seed: u64) -> u64 {
    seed::derive(seed, "evaluate")
}

fn cmd_calibrate(a: CalibrateArgs) -> Result<i32> {
    let spec = a.predictor.resolve()?;
    let alphas = a.level.alphas()?;
    let cal = load_labeled(&a.cal)?;
    let mut records = Vec::new();
    let mut saturated = false;
    for &alpha in &alphas {
        let thr = calibrate(&spec, &cal, alpha, calibration_seed(a.seed))?;
        println!("alpha={alpha} tau={}{}", thr.tau, if thr.saturated { " (saturated)" } else { "" });
        saturated |= thr.saturated;
        records.push(threshold_record(&spec, "none", &thr, a.seed));
    }
    write_text(&a.out, &write_records(&records))?;
    if saturated {
        eprintln!("warning: calibration saturated; threshold set to the predictor maximum");
        return Ok(EXIT_SATURATED);
    }
    Ok(EXIT_OK)
}

fn cmd_recalibrate(a: RecalibrateArgs) -> Result<i32> {
    let spec = a.predictor.resolve()?;
    let method: QtcMethod = a.method.parse()?;
    let alphas = a.level.alphas()?;
    let source = load_labeled(&a.source)?;
    let target = load_unlabeled(&a.target)?;
    let mut thresholds = Vec::new();
    let mut estimates = Vec::new();
    let mut saturated = false;
    for &alpha in &alphas {
        match recalibrate(&spec, &source, &target, alpha, method, calibration_seed(a.seed)) {
            Ok(r) => {
                println!("alpha={alpha} method={method} tau={}", r.threshold.tau);
                for w in &r.estimate.warnings {
                    eprintln!("warning: alpha={alpha}: {w}");
                }
                saturated |= r.threshold.saturated;
                thresholds.push(threshold_record(&spec, method.name(), &r.threshold, a.seed));
                let mut rec = Record::new();
                r.estimate.write_record(&mut rec);
                estimates.push(rec);
            }
            Err(Error::Saturated(msg)) => {
                eprintln!("warning: alpha={alpha}: {msg}");
                saturated = true;
                let thr = Threshold {
                    tau: spec.max_tau(source.n_classes()),
                    alpha,
                    source_tag: format!("{method}:saturated"),
                    saturated: true,
                };
                thresholds.push(threshold_record(&spec, method.name(), &thr, a.seed));
            }
            Err(e) => return Err(e),
        }
    }
    write_text(&a.out, &write_records(&thresholds))?;
    let mut sidecar = a.out.clone().into_os_string();
    sidecar.push(".qtc");
    write_text(Path::new(&sidecar), &write_records(&estimates))?;
    Ok(if saturated { EXIT_SATURATED } else { EXIT_OK })
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<i32> {
    let flag_spec = a.predictor.given()?;
    let test = load_labeled(&a.test)?;
    let text = std::fs::read_to_string(&a.thresholds).map_err(|e| Error::io(&a.thresholds, e))?;
    let records = parse_records(&text)
        .map_err(|e| Error::Parse(format!("{}: {e}", a.thresholds.display())))?;
    if records.is_empty() {
        return Err(Error::Parse(format!("{}: no thresholds", a.thresholds.display())));
    }
    let mut rows = String::new();
    for rec in &records {
        let spec = match flag_spec {
            Some(s) => s,
            None if rec.get("predictor").is_some() => PredictorSpec::from_record(rec)?,
            None => PredictorSpec::Tps,
        };
        let thr = Threshold::from_record(rec)?;
        let method = rec.get("method").unwrap_or("none");
        let report = evaluate(&spec, &thr, &test, evaluation_seed(a.seed))?;
        println!("method={method} alpha={} tau={} coverage={}", thr.alpha, thr.tau, report.coverage);
        rows.push_str(&report_row(method, &spec, thr.alpha, thr.tau, &report, a.seed));
    }
    append_rows(&a.out, &rows)?;
    Ok(EXIT_OK)
}

fn train_baseline(
    spec: &PredictorSpec,
    source: &LabeledDataset,
    alpha: f64,
    extractor: Extractor,
    training: &BaselineTraining,
    seed: u64,
) -> Result<MlpRegressor> {
    let corpus = regression::build_corpus(
        source,
        spec,
        alpha,
        training.shifts,
        extractor,
        training.bins,
        seed::derive(seed, "corpus"),
    )?;
    for w in &corpus.warnings {
        eprintln!("warning: {w}");
    }
    if corpus.is_empty() {
        return Err(Error::InvalidArgument("empty corpus".into()));
    }
    let (model, _) = regression::train(&corpus, &training.config(seed))?;
    Ok(model)
}

fn predict_baseline(model: &MlpRegressor, source: &LabeledDataset, target: &UnlabeledDataset) -> Result<f64> {
    let (features, warnings) =
        extract_features(target, model.extractor, model.bins, Some(source.scores()))?;
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    model.predict_tau(&features, None)
}

fn cmd_baseline(a: BaselineArgs) -> Result<i32> {
    let spec = a.predictor.resolve()?;
    let extractor: Extractor = a.extractor.parse()?;
    if !(a.alpha > 0.0 && a.alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha {} outside (0,1)", a.alpha)));
    }
    let source = load_labeled(&a.cal)?;
    let target = a.target.as_deref().map(load_unlabeled).transpose()?;
    let model = train_baseline(&spec, &source, a.alpha, extractor, &a.training, a.seed)?;
    println!("extractor={extractor} final_loss={}", model.final_loss);
    if let Some(path) = &a.model {
        model.save(path)?;
    }
    if let Some(target) = &target {
        let tau = predict_baseline(&model, &source, target)?;
        println!("alpha={} method={extractor} tau={tau}", a.alpha);
        if let Some(out) = &a.out {
            let thr = Threshold {
                tau,
                alpha: a.alpha,
                source_tag: format!("baseline:{extractor}"),
                saturated: false,
            };
            let rec = threshold_record(&spec, extractor.name(), &thr, a.seed);
            write_text(out, &write_records(&[rec]))?;
        }
    }
    Ok(EXIT_OK)
}

fn cmd_simulate(a: SimulateArgs) -> Result<i32> {
    let source = ToyModelParams::new(a.gamma, a.c, a.psrc)?;
    let target = source.with_p(a.ptgt)?;
    let w = ToyClassifier::new(a.winv, a.wsp)?;
    if !(a.alpha > 0.0 && a.alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha {} outside (0,1)", a.alpha)));
    }
    if a.trials == 0 {
        return Err(Error::InvalidArgument("--trials must be at least 1".into()));
    }
    let setup = TheoremSetup::new(source, target, w, a.alpha, a.n_mc, seed::derive(a.seed, "oracle"))?;
    let reports = setup.run_trials(a.trials, a.n, a.delta, seed::derive(a.seed, "trials"))?;
    if let Some(out) = &a.out {
        let mut text = String::new();
        text.push_str(TheoremTrialReport::CSV_HEADER);
        text.push('\n');
        for r in &reports {
            text.push_str(&r.csv_row());
            text.push('\n');
        }
        write_text(out, &text)?;
    }
    let t = reports.len() as f64;
    let violations = reports.iter().filter(|r| r.violated).count();
    let mean_abs_err = reports.iter().map(|r| (r.beta_qtc - r.beta_true).abs()).sum::<f64>() / t;
    let mean_cov_err = reports
        .iter()
        .map(|r| (r.coverage - (1.0 - a.alpha)).abs())
        .sum::<f64>()
        / t;
    let mut line = String::new();
    let _ = write!(
        line,
        "trials={} violations={violations} violation_fraction={} beta_oracle={} mean_abs_beta_error={mean_abs_err} bound={} c_sp={} mean_coverage_error={mean_cov_err}",
        reports.len(),
        violations as f64 / t,
        setup.oracle.beta,
        reports[0].bound,
        setup.c_sp(),
    );
    println!("{line}");
    Ok(EXIT_OK)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum SweepMethod {
    None,
    Qtc(QtcMethod),
    Baseline(Extractor),
}

impl SweepMethod {
    fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("none") {
            return Ok(SweepMethod::None);
        }
        if let Ok(m) = s.parse::<QtcMethod>() {
            return Ok(SweepMethod::Qtc(m));
        }
        s.parse::<Extractor>()
            .map(SweepMethod::Baseline)
            .map_err(|_| Error::InvalidArgument(format!("unknown method {s:?}")))
    }

    fn name(&self) -> &'static str {
        match self {
            SweepMethod::None => "none",
            SweepMethod::Qtc(m) => m.name(),
            SweepMethod::Baseline(e) => e.name(),
        }
    }
}

fn cmd_sweep(a: SweepArgs) -> Result<i32> {
    let spec = a.predictor.resolve()?;
    let alphas = a.level.alphas()?;
    let methods: Vec<SweepMethod> = a.methods.split(',').map(SweepMethod::parse).collect::<Result<_>>()?;
    let source = load_labeled(&a.source)?;
    let target = load_labeled(&a.target)?;
    let unlabeled = target.unlabeled();
    let cal_seed = calibration_seed(a.seed);
    let mut rows = String::new();
    let mut saturated = false;
    for &alpha in &alphas {
        for method in &methods {
            let thr = match method {
                SweepMethod::None => calibrate(&spec, &source, alpha, cal_seed)?,
                SweepMethod::Qtc(m) => match recalibrate(&spec, &source, &unlabeled, alpha, *m, cal_seed) {
                    Ok(r) => r.threshold,
                    Err(Error::Saturated(msg)) => {
                        eprintln!("warning: alpha={alpha}: {msg}");
                        Threshold {
                            tau: spec.max_tau(source.n_classes()),
                            alpha,
                            source_tag: format!("{m}:saturated"),
                            saturated: true,
                        }
                    }
                    Err(e) => return Err(e),
                },
                SweepMethod::Baseline(e) => {
                    let model = train_baseline(&spec, &source, alpha, *e, &a.training, a.seed)?;
                    Threshold {
                        tau: predict_baseline(&model, &source, &unlabeled)?,
                        alpha,
                        source_tag: format!("baseline:{e}"),
                        saturated: false,
                    }
                }
            };
            saturated |= thr.saturated;
            let report = evaluate(&spec, &thr, &target, evaluation_seed(a.seed))?;
            println!(
                "alpha={alpha} method={} tau={} coverage={}",
                method.name(),
                thr.tau,
                report.coverage
            );
            rows.push_str(&report_row(method.name(), &spec, alpha, thr.tau, &report, a.seed));
        }
    }
    append_rows(&a.out, &rows)?;
    Ok(if saturated { EXIT_SATURATED } else { EXIT_OK })
}

fn cmd_synth(a: SynthArgs) -> Result<i32> {
    if a.classes < 2 || a.n == 0 {
        return Err(Error::InvalidArgument("need --classes >= 2 and --n >= 1".into()));
    }
    let family = SyntheticFamily {
        n_classes: a.classes,
        signal: a.signal,
        sharpness: a.sharpness,
    };
    let data = family.generate(a.n, a.log_temperature, a.seed);
    let data = if a.unlabeled {
        Dataset::Unlabeled(data.unlabeled())
    } else {
        Dataset::Labeled(data)
    };
    save_dataset(&data, &a.out, Format::from_path(&a.out))?;
    Ok(EXIT_OK)
}
