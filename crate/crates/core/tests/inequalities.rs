use std::sync::Arc;

use cuspflow::domain::{build_domain, generate_grid, Grid, StaircaseDomain};
use cuspflow::inequalities::{
    estimate_poincare, estimate_sobolev_s0, estimate_weighted_sobolev_cs, reevaluate, EstimatorOptions,
    SobolevConstraint,
};

fn d2() -> (StaircaseDomain, Arc<Grid>) {
    let d = build_domain(2, 1.1).unwrap();
    let g = Arc::new(generate_grid(&d, 2).unwrap());
    (d, g)
}

fn quick() -> EstimatorOptions {
    EstimatorOptions { starts: 6, ..Default::default() }
}

#[test]
fn estimates_are_deterministic_for_a_seed() {
    let (d, g) = d2();
    let a = estimate_sobolev_s0(&d, &g, SobolevConstraint::ZeroOnH, &quick()).unwrap();
    let b = estimate_sobolev_s0(&d, &g, SobolevConstraint::ZeroOnH, &quick()).unwrap();
    assert_eq!(a.value.to_bits(), b.value.to_bits());
    assert_eq!(a.maximizer.values, b.maximizer.values);
    assert_eq!(a.start, b.start);
}

#[test]
fn maximizer_reproduces_the_value() {
    let (d, g) = d2();
    for con in [SobolevConstraint::ZeroOnH, SobolevConstraint::ZeroColumnMean] {
        let est = estimate_sobolev_s0(&d, &g, con, &quick()).unwrap();
        let again = reevaluate(&est, Some(con)).unwrap();
        assert!((again - est.value).abs() <= 1e-10 * est.value, "{con}: {again} vs {}", est.value);
        assert!(est.stationarity <= 1e-6, "{con}: stationarity {}", est.stationarity);
    }
    let est = estimate_weighted_sobolev_cs(&d, &g, &quick()).unwrap();
    let again = reevaluate(&est, None).unwrap();
    assert!((again - est.value).abs() <= 1e-10 * est.value);
    assert!(est.stationarity <= 1e-6);
}

#[test]
fn restricting_the_support_cannot_beat_the_full_domain() {
    let (d, g) = d2();
    let full = estimate_sobolev_s0(&d, &g, SobolevConstraint::ZeroOnH, &quick()).unwrap();
    // a square inside the first rectangle
    let support: Vec<bool> = (0..g.len())
        .map(|n| {
            let (r, z) = (g.r(n), g.z(n));
            (0.55..=0.95).contains(&r) && (0.05..=0.45).contains(&z)
        })
        .collect();
    let opts = EstimatorOptions { support: Some(support), ..quick() };
    let sub = estimate_sobolev_s0(&d, &g, SobolevConstraint::ZeroOnH, &opts).unwrap();
    assert!(sub.value <= 1.05 * full.value, "{} vs {}", sub.value, full.value);
}

#[test]
fn poincare_converges_at_second_order() {
    let h = 0.37;
    let exact = h / std::f64::consts::PI;
    let errs: Vec<f64> = [16, 32, 64, 128].iter().map(|&n| (estimate_poincare(h, n).unwrap() - exact).abs()).collect();
    for w in errs.windows(2) {
        assert!((w[0] / w[1]).log2() >= 1.9, "{errs:?}");
    }
}

#[test]
fn poincare_rejects_coarse_or_degenerate_input() {
    assert!(estimate_poincare(1.0, 8).is_err());
    assert!(estimate_poincare(0.0, 64).is_err());
}
