mod common;

use common::*;
use conformal_shift::toymodel::{
    classify, error_rate, oracle_beta, oracle_tau, run_theorem_trial, ToyClassifier, ToyModelParams, ToySample,
    TheoremSetup,
};

#[test]
fn frozen_oracle_is_reproduced() {
    let o = oracle_beta(
        &toy_source(),
        &toy_target(),
        &toy_classifier(),
        ORACLE_ALPHA,
        ORACLE_N_MC,
        ORACLE_SEED,
    )
    .unwrap();
    assert_eq!(o, frozen_oracle());
}

/// Closed forms in the `w_sp > 0` regime where misclassified points are
/// exactly those with `x_sp = -y` and `|x_inv| < w_sp / w_inv`.
#[test]
fn frozen_oracle_matches_closed_form() {
    let (src, tgt, w) = (toy_source(), toy_target(), toy_classifier());
    let a = ORACLE_ALPHA;
    let width = tgt.c - tgt.gamma;
    let err = |p: f64| (1.0 - p) * (w.w_sp / w.w_inv - src.gamma) / width;
    let t = w.w_sp - w.w_inv * (tgt.gamma + a * width / (1.0 - tgt.p));
    let tau = sigmoid(t);
    let beta = a * (1.0 - src.p) / (1.0 - tgt.p);
    let sd = |p: f64| (p * (1.0 - p) / ORACLE_N_MC as f64).sqrt();

    assert!((ORACLE_ERROR_SOURCE - err(src.p)).abs() < 4.0 * sd(err(src.p)));
    assert!((ORACLE_ERROR_TARGET - err(tgt.p)).abs() < 4.0 * sd(err(tgt.p)));
    assert!((ORACLE_BETA - beta).abs() < 4.0 * sd(beta), "{ORACLE_BETA} vs {beta}");
    // tau density: d tau / d alpha is about 0.77, so a few 1e-4 is generous
    assert!((ORACLE_TAU_TARGET - tau).abs() < 5e-4, "{ORACLE_TAU_TARGET} vs {tau}");
}

#[test]
fn zero_shift_gives_beta_alpha() {
    let n_mc = 2_000_000;
    let o = oracle_beta(&toy_source(), &toy_source(), &toy_classifier(), 0.02, n_mc, 3).unwrap();
    assert!((o.beta - 0.02).abs() <= 3.0 * (0.02 / n_mc as f64).sqrt() * 2.0, "{}", o.beta);
}

#[test]
fn lower_target_agreement_shrinks_beta() {
    let o = oracle_beta(&toy_source(), &toy_target(), &toy_classifier(), 0.02, 1_000_000, 4).unwrap();
    assert!(o.beta < 0.02);
}

#[test]
fn tau_tends_to_half_as_alpha_nears_error_rate() {
    let w = toy_classifier();
    let eps = error_rate(&toy_target(), &w, 1_000_000, 5);
    let near = oracle_tau(&toy_target(), &w, eps * 0.999, 1_000_000, 5).unwrap();
    let far = oracle_tau(&toy_target(), &w, eps * 0.5, 1_000_000, 5).unwrap();
    assert!(near.tau >= 0.5 && near.tau < 0.501, "{}", near.tau);
    assert!(far.tau > near.tau);
}

#[test]
fn near_zero_spurious_weight_ignores_target_agreement() {
    let w = ToyClassifier::new(1.0, 0.01).unwrap();
    let p7 = ToyModelParams::new(0.0, 1.0, 0.7).unwrap();
    let p9 = p7.with_p(0.9).unwrap();
    let t7 = oracle_tau(&p7, &w, 0.0005, 2_000_000, 6).unwrap().tau;
    let t9 = oracle_tau(&p9, &w, 0.0005, 2_000_000, 6).unwrap().tau;
    assert!((t7 - t9).abs() < 2e-3, "{t7} vs {t9}");
    assert!(t7 >= 0.5 && t7 < 0.5025 && t9 >= 0.5 && t9 < 0.5025);
}

#[test]
fn confidence_increases_with_invariant_feature() {
    let w = toy_classifier();
    let mut last = 0.0;
    for i in 0..=200 {
        let x_inv = -1.0 + i as f64 * 0.01;
        let p = classify(&w, &ToySample { x_inv, x_sp: 1, y: 1 })[1];
        assert!(p > last);
        last = p;
    }
}

#[test]
fn classify_is_antisymmetric() {
    let w = ToyClassifier::new(0.7, -1.3).unwrap();
    for s in conformal_shift::toymodel::sample(&toy_target(), 500, 8) {
        let [a, b] = classify(&w, &s);
        let [c, d] = classify(&w, &s.negated());
        assert_eq!((a, b), (d, c));
    }
}

#[test]
fn no_shift_trial_is_within_bound() {
    let r = run_theorem_trial(&toy_source(), &toy_source(), &toy_classifier(), 0.02, 10_000, 0.1, 11)
        .unwrap();
    assert!((r.beta_qtc - 0.02).abs() <= r.bound);
    assert!(!r.violated);
}

#[test]
fn precondition_alpha_below_error_rate() {
    let err = TheoremSetup::new(toy_source(), toy_target(), toy_classifier(), 0.045, 1_000_000, 1)
        .unwrap_err();
    assert!(matches!(err, conformal_shift::Error::Precondition(_)));
}

#[test]
fn coverage_error_shrinks_with_n() {
    let setup = TheoremSetup::with_oracle(
        toy_source(),
        toy_target(),
        toy_classifier(),
        ORACLE_ALPHA,
        frozen_oracle(),
    );
    let mean_err = |n: usize| {
        (0..20)
            .map(|s| {
                let r = setup.run_trial(s, n, 0.1, 1000 + s as u64).unwrap();
                (r.coverage - (1.0 - ORACLE_ALPHA)).abs()
            })
            .sum::<f64>()
            / 20.0
    };
    assert!(mean_err(50_000) < mean_err(1_000));
}
