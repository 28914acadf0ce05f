//! Acceptance suite. Runs every criterion, prints one status line each and
//! exits nonzero if any criterion fails.
//!
//! Criterion 7 needs user-supplied ImageNet score files. Set
//! `CSHIFT_IMAGENET_VAL` and `CSHIFT_IMAGENET_SKETCH`, or place them at
//! `data/imagenet/val.csv` and `data/imagenet/sketch.csv` in the workspace
//! root; otherwise it is reported as SKIPPED.

mod common;

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use common::*;
use conformal_shift::conformal::{calibrate, evaluate, PredictorSpec};
use conformal_shift::kv::parse_records;
use conformal_shift::qtc::{estimate_beta_qtc, estimate_beta_qtc_sc, recalibrate, QtcMethod};
use conformal_shift::regression::{
    build_corpus, extract_features, mlp::fit, Extractor, Mlp, TrainConfig,
};
use conformal_shift::scores::{split, LabeledDataset};
use conformal_shift::seed;
use conformal_shift::synthetic::SyntheticFamily;
use conformal_shift::toymodel::TheoremSetup;
use rand::Rng;

enum Status {
    Pass(String),
    Fail(String),
    Skipped(String),
}

fn check(ok: bool, detail: String) -> Status {
    if ok {
        Status::Pass(detail)
    } else {
        Status::Fail(detail)
    }
}

fn coverage_sandwich() -> Status {
    let started = Instant::now();
    let pool = SyntheticFamily::default().generate(4000, 0.0, 101);
    let specs = [
        PredictorSpec::Tps,
        PredictorSpec::Aps,
        PredictorSpec::raps(0.1, 2).unwrap(),
    ];
    let (lo, hi) = (0.89, 0.9105);
    let mut ok = true;
    let mut parts = Vec::new();
    for spec in specs {
        let mut total = 0.0;
        for s in 0..200u64 {
            let (cal, test) = split(&pool, 0.5, seed::derive_index(7, s)).unwrap();
            let thr = calibrate(&spec, &cal, 0.1, seed::derive_index(8, s)).unwrap();
            total += evaluate(&spec, &thr, &test, seed::derive_index(9, s)).unwrap().coverage;
        }
        let mean = total / 200.0;
        ok &= (lo..=hi).contains(&mean);
        parts.push(format!("{}={mean:.4}", spec.name()));
    }
    let secs = started.elapsed().as_secs_f64();
    ok &= secs < 60.0;
    check(ok, format!("mean coverage {} in [{lo}, {hi}], {secs:.1}s", parts.join(" ")))
}

fn qtc_self_consistency() -> Status {
    let family = SyntheticFamily::default();
    let mut worst: f64 = 0.0;
    let mut ok = true;
    for &n in &[10usize, 100, 1000] {
        let d = family.generate(n, 0.0, 200 + n as u64);
        let mut confs: Vec<f64> = d.scores().rows().map(conformal_shift::qtc::top_confidence).collect();
        confs.sort_by(f64::total_cmp);
        confs.dedup();
        if confs.len() != n {
            return Status::Fail(format!("top confidences not distinct at n={n}"));
        }
        // alpha = num/den; beta is checked as an exact count m/n
        for &(num, den) in &[(1i64, 20i64), (1, 10), (1, 5)] {
            let alpha = num as f64 / den as f64;
            let b1 = estimate_beta_qtc(&d, &d, alpha).unwrap().value;
            let b2 = estimate_beta_qtc_sc(&d, &d, alpha).unwrap().value;
            for beta in [b1, b2] {
                let m = (beta * n as f64).round() as i64;
                ok &= m as f64 / n as f64 == beta;
                let dev = (m * den - num * n as i64).abs();
                ok &= dev <= den;
                worst = worst.max(dev as f64 / den as f64);
            }
        }
    }
    check(ok, format!("max |beta - alpha| * n = {worst:.4} over 9 cases (needs <= 1)"))
}

fn toy_setup() -> TheoremSetup {
    TheoremSetup::with_oracle(toy_source(), toy_target(), toy_classifier(), ORACLE_ALPHA, frozen_oracle())
}

fn theorem_bound() -> Status {
    let started = Instant::now();
    let setup = toy_setup();
    let reports = setup.run_trials(100, 10_000, 0.1, 300).unwrap();
    let violations = reports.iter().filter(|r| r.violated).count();
    let frac = violations as f64 / reports.len() as f64;
    let max_dev = reports
        .iter()
        .map(|r| (r.beta_qtc - r.beta_true).abs())
        .fold(0.0, f64::max);
    let secs = started.elapsed().as_secs_f64();
    check(
        frac <= 0.15 && secs < 300.0,
        format!(
            "violation fraction {frac:.2} (<= 0.15), max |beta_qtc - beta| {max_dev:.5} vs bound {:.4}, {secs:.1}s",
            reports[0].bound
        ),
    )
}

fn theorem_convergence() -> Status {
    let setup = toy_setup();
    let target = 1.0 - ORACLE_ALPHA;
    let run = |n: usize| {
        let covs: Vec<f64> = (0..20)
            .map(|s| setup.run_trial(s, n, 0.1, seed::derive_index(400, s as u64)).unwrap().coverage)
            .collect();
        let mean = covs.iter().sum::<f64>() / 20.0;
        let err = covs.iter().map(|c| (c - target).abs()).sum::<f64>() / 20.0;
        (mean, err)
    };
    let (mean_big, err_big) = run(50_000);
    let (_, err_small) = run(1_000);
    check(
        (mean_big - target).abs() <= 0.02 && err_big < err_small,
        format!(
            "mean coverage at n=5e4 {mean_big:.4} (target {target} +/- 0.02); mean error {err_big:.4} at 5e4 < {err_small:.4} at 1e3"
        ),
    )
}

fn shift_recovery() -> Status {
    let family = SyntheticFamily::default();
    let alpha = 0.1;
    let spec = PredictorSpec::Tps;
    let source = family.generate(10_000, 0.0, 501);
    let target = family.generate(10_000, 0.5, 502);
    let thr = calibrate(&spec, &source, alpha, 1).unwrap();
    let plain = evaluate(&spec, &thr, &target, 2).unwrap().coverage;
    let recal = recalibrate(&spec, &source, &target.unlabeled(), alpha, QtcMethod::Qtc, 1).unwrap();
    let fixed = evaluate(&spec, &recal.threshold, &target, 2).unwrap().coverage;
    let gap_before = (plain - (1.0 - alpha)).abs();
    let gap_after = (fixed - (1.0 - alpha)).abs();
    check(
        gap_after <= 0.5 * gap_before,
        format!(
            "TPS coverage {plain:.4} -> {fixed:.4}; gap {gap_before:.4} -> {gap_after:.4} ({:.0}% closed, needs >= 50%)",
            100.0 * (1.0 - gap_after / gap_before)
        ),
    )
}

fn regression_sanity() -> Status {
    // gradient check on a random 3-sample problem with the default architecture
    let mut rng = seed::rng(600);
    let xs: Vec<Vec<f64>> = (0..3).map(|_| (0..5).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let ts: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..1.0)).collect();
    let mut mlp = Mlp::new(&TrainConfig::default().layer_sizes(5), 601).unwrap();
    let mut p = mlp.params();
    p.iter_mut().for_each(|v| *v += rng.random_range(-0.05..0.05));
    mlp.set_params(&p).unwrap();
    let (_, grad) = mlp.loss_and_gradient(&xs, &ts);
    let h = 1e-5;
    let mut probe = mlp.clone();
    let mut worst: f64 = 0.0;
    for i in 0..p.len() {
        let mut q = p.clone();
        q[i] += h;
        probe.set_params(&q).unwrap();
        let up = probe.loss(&xs, &ts);
        q[i] = p[i] - h;
        probe.set_params(&q).unwrap();
        let down = probe.loss(&xs, &ts);
        let fd = (up - down) / (2.0 * h);
        worst = worst.max((fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-6));
    }

    // single-entry corpus
    let src = SyntheticFamily::default().generate(1000, 0.0, 602);
    let mut corpus = build_corpus(&src, &PredictorSpec::Tps, 0.1, 1, Extractor::ChrMinus, 10, 603).unwrap();
    corpus.entries.truncate(1);
    let inputs = vec![corpus.entries[0].features.values.clone()];
    let fitted = fit(&inputs, &[corpus.entries[0].target], &TrainConfig::default()).unwrap();
    let loss = fitted.final_loss();

    // CHR on random datasets
    let mut chr_worst: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.random_range(1..200);
        let l = rng.random_range(2..20);
        let d: LabeledDataset = random_labeled(&mut rng, n, l);
        let bins = rng.random_range(2..30);
        let (f, _) = extract_features(&d, Extractor::Chr, bins, None).unwrap();
        chr_worst = chr_worst.max((f.values.iter().sum::<f64>() - 1.0).abs());
    }
    check(
        worst <= 1e-4 && loss <= 1e-6 && chr_worst <= 1e-12,
        format!(
            "gradient max rel err {worst:.2e} over {} params; single-entry loss {loss:.2e}; CHR max |sum-1| {chr_worst:.1e}",
            p.len()
        ),
    )
}

fn workspace_root() -> PathBuf {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../..");
    root.canonicalize().unwrap_or(root)
}

fn cshift(dir: &Path, args: &[&str]) -> std::io::Result<std::process::Output> {
    Command::new(env!("CARGO_BIN_EXE_cshift")).current_dir(dir).args(args).output()
}

fn imagenet_pass_through() -> Status {
    let root = workspace_root().join("data/imagenet");
    let val = std::env::var_os("CSHIFT_IMAGENET_VAL").map(PathBuf::from).unwrap_or(root.join("val.csv"));
    let sketch = std::env::var_os("CSHIFT_IMAGENET_SKETCH").map(PathBuf::from).unwrap_or(root.join("sketch.csv"));
    if !val.exists() || !sketch.exists() {
        return Status::Skipped(format!("score files not found ({}, {})", val.display(), sketch.display()));
    }
    let dir = tempfile::tempdir().unwrap();
    let (val, sketch) = (val.to_string_lossy().into_owned(), sketch.to_string_lossy().into_owned());
    let mut parts = Vec::new();
    let mut ok = true;
    for (predictor, expected) in [("aps", 0.64), ("tps", 0.38)] {
        let thr = format!("{predictor}.txt");
        let report = format!("{predictor}.csv");
        let steps: [&[&str]; 2] = [
            &["calibrate", "--predictor", predictor, "--coverage", "0.9", "--cal", &val, "--out", &thr],
            &["evaluate", "--test", &sketch, "--thresholds", &thr, "--out", &report],
        ];
        for step in steps {
            let out = cshift(dir.path(), step).unwrap();
            if !out.status.success() {
                return Status::Fail(format!("{step:?}: {}", String::from_utf8_lossy(&out.stderr)));
            }
        }
        let text = std::fs::read_to_string(dir.path().join(&report)).unwrap();
        let cov: f64 = text.lines().nth(1).unwrap().split(',').nth(4).unwrap().parse().unwrap();
        ok &= (cov - expected).abs() <= 0.02;
        parts.push(format!("{predictor} {cov:.4} (expected {expected})"));
    }
    check(ok, parts.join(", "))
}

fn determinism() -> Status {
    let runs: Vec<(&str, Vec<&str>, Vec<&str>)> = vec![
        ("synth", vec!["synth", "--n", "1500", "--seed", "5", "--out", "src.csv"], vec!["src.csv"]),
        ("synth", vec!["synth", "--n", "1500", "--seed", "6", "--log-temperature", "0.5", "--out", "tgt.csv"], vec!["tgt.csv"]),
        ("synth-bin", vec!["synth", "--n", "300", "--seed", "7", "--unlabeled", "--out", "u.bin"], vec!["u.bin"]),
        (
            "calibrate",
            vec!["calibrate", "--predictor", "raps", "--alpha", "0.05:0.2:0.05", "--cal", "src.csv", "--out", "thr.txt", "--seed", "3"],
            vec!["thr.txt"],
        ),
        (
            "recalibrate",
            vec!["recalibrate", "--predictor", "aps", "--method", "qtc-sc", "--alpha", "0.1", "--source", "src.csv", "--target", "tgt.csv", "--out", "re.txt", "--seed", "3"],
            vec!["re.txt", "re.txt.qtc"],
        ),
        (
            "evaluate",
            vec!["evaluate", "--test", "tgt.csv", "--thresholds", "thr.txt", "--out", "eval.csv", "--seed", "3"],
            vec!["eval.csv"],
        ),
        (
            "sweep",
            vec!["sweep", "--predictor", "aps", "--coverage", "0.8,0.9", "--methods", "none,qtc,qtc-sc,qtc-st,chr-minus", "--shifts", "6", "--epochs", "30", "--source", "src.csv", "--target", "tgt.csv", "--out", "sweep.csv", "--seed", "3"],
            vec!["sweep.csv"],
        ),
        (
            "baseline",
            vec!["baseline", "--extractor", "pcr", "--shifts", "8", "--epochs", "50", "--cal", "src.csv", "--target", "tgt.csv", "--model", "m.bin", "--out", "b.txt", "--seed", "3"],
            vec!["m.bin", "b.txt"],
        ),
        (
            "simulate",
            vec!["simulate", "--trials", "4", "--n", "2000", "--n-mc", "1000000", "--out", "sim.csv", "--seed", "3"],
            vec!["sim.csv"],
        ),
    ];
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for (name, args, outputs) in &runs {
        for d in &dirs {
            let out = cshift(d.path(), args).unwrap();
            if !out.status.success() {
                return Status::Fail(format!("{name} failed: {}", String::from_utf8_lossy(&out.stderr)));
            }
        }
        for file in outputs {
            let a = std::fs::read(dirs[0].path().join(file)).unwrap();
            let b = std::fs::read(dirs[1].path().join(file)).unwrap();
            if a != b {
                return Status::Fail(format!("{name}: {file} differs between runs"));
            }
        }
    }
    // threshold files must also parse back
    let recs = parse_records(&std::fs::read_to_string(dirs[0].path().join("thr.txt")).unwrap()).unwrap();
    check(recs.len() == 4, format!("{} commands re-run with identical flags; all outputs byte-identical", runs.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Status); 8] = [
        ("coverage sandwich", coverage_sandwich),
        ("QTC self-consistency", qtc_self_consistency),
        ("theorem bound", theorem_bound),
        ("theorem convergence", theorem_convergence),
        ("synthetic shift recovery", shift_recovery),
        ("regression baseline sanity", regression_sanity),
        ("ImageNet pass-through", imagenet_pass_through),
        ("CLI determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let status = f();
        let (tag, detail) = match status {
            Status::Pass(d) => ("PASS", d),
            Status::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Status::Skipped(d) => ("SKIPPED", d),
        };
        println!("criterion {} {name}: {tag} - {detail}", i + 1);
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
