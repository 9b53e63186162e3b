use std::sync::Arc;

use cuspflow::diagnostics::{energy, record};
use cuspflow::domain::{build_domain, generate_grid, Grid};
use cuspflow::elliptic::{column_integrals, line_integral_max, relative_divergence, BiotSavartSolver};
use cuspflow::evolve::{auto_dt, FlowState, IcKind, InitialCondition, StepOptions, Stepper, DEFAULT_CFL};
use proptest::prelude::*;

fn setup(m: usize, p: u32, kind: IcKind, amp: f64) -> (Arc<Grid>, FlowState) {
    let d = build_domain(m, 1.1).unwrap();
    let g = Arc::new(generate_grid(&d, p).unwrap());
    let ic = InitialCondition::new(kind, amp, &d).fitted_to(&g);
    let s = ic.initial_state(&BiotSavartSolver::new(&g, 1e-10)).unwrap();
    (g, s)
}

#[test]
fn single_picard_sweep_is_the_plain_splitting() {
    let (g, s) = setup(2, 3, IcKind::StreamfunctionSwirl, 0.1);
    let opts = StepOptions { picard_max: 1, ..Default::default() };
    let st = Stepper::new(&g, 0.25 * g.delta_r, opts).unwrap();
    let (next, report) = st.advance(&s).unwrap();
    assert_eq!(report.iterations, 1);

    let (h, _) = st.step_h(&s.h, &s.v_r, &s.v_3, None).unwrap();
    let (omega, _) = st.step_omega(&s.omega, &s.v_r, &s.v_3, &h, None).unwrap();
    let (v_r, v_3, _) = st.bs.solve(&omega, Some((&s.v_r, &s.v_3))).unwrap();
    assert_eq!(next.h.values, h.values);
    assert_eq!(next.omega.values, omega.values);
    assert_eq!(next.v_r.values, v_r.values);
    assert_eq!(next.v_3.values, v_3.values);
}

#[test]
fn picard_contracts_for_small_swirl() {
    let (g, mut s) = setup(2, 3, IcKind::SwirlOnly, 0.05);
    let opts = StepOptions { picard_max: 4, picard_tol: 0.0, ..Default::default() };
    let st = Stepper::new(&g, 0.25 * g.delta_r, opts).unwrap();
    // let the stretching term build some Omega first
    s = st.advance(&s).unwrap().0;
    let (_, report) = st.advance(&s).unwrap();
    assert!(report.factors.len() >= 2);
    for f in &report.factors[1..] {
        assert!(*f < 1.0, "factors {:?}", report.factors);
    }
}

#[test]
fn swirl_free_data_stays_swirl_free() {
    let (g, mut s) = setup(2, 3, IcKind::Streamfunction, 0.1);
    let st = Stepper::new(&g, 0.25 * g.delta_r, StepOptions::default()).unwrap();
    for _ in 0..3 {
        s = st.advance(&s).unwrap().0;
        assert_eq!(s.h.max_abs(), 0.0);
        assert_eq!(record(&s).sup_gamma, 0.0);
    }
    assert!(s.omega.max_abs() > 0.0);
}

#[test]
fn streamfunction_velocity_is_discretely_solenoidal() {
    for m in 1..=3 {
        let d = build_domain(m, 1.1).unwrap();
        let g = Arc::new(generate_grid(&d, 3).unwrap());
        let ic = InitialCondition::new(IcKind::StreamfunctionSwirl, 0.1, &d).fitted_to(&g);
        let (v_r, v_3) = ic.discrete_velocity(&g);
        assert!(relative_divergence(&v_r, &v_3).unwrap() <= 1e-12);
    }
}

#[test]
fn energy_matches_a_flat_loop() {
    let (g, s) = setup(3, 3, IcKind::StreamfunctionSwirl, 0.1);
    let mut e = 0.0;
    for n in 0..g.len() {
        if !g.is_active(n) {
            continue;
        }
        let r = g.r(n);
        let vt = r * s.h.values[n];
        e += (s.v_r.values[n].powi(2) + vt * vt + s.v_3.values[n].powi(2)) * r * g.cell_area(n);
    }
    let fast = energy(&s);
    assert!((fast - e).abs() <= 1e-14 * e.abs().max(1e-300), "{fast} vs {e}");
}

#[test]
fn line_integral_columns_are_trapezoid_sums() {
    let (g, s) = setup(3, 3, IcKind::StreamfunctionSwirl, 0.1);
    let cols = column_integrals(&s.v_r);
    let mut worst = 0.0f64;
    for i in 0..g.nr {
        let top = g.column_top(i);
        let mut acc = 0.0;
        for k in 0..=top {
            let w = if k == 0 || k == top { 0.5 } else { 1.0 };
            acc += w * s.v_r.values[g.index(i, k)];
        }
        acc *= g.delta_z;
        assert!((acc - cols[i]).abs() <= 1e-15 + 1e-12 * acc.abs());
        worst = worst.max(acc.abs());
    }
    assert_eq!(worst, line_integral_max(&s.v_r));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn energy_scales_quadratically(amp in 0.01f64..0.5) {
        let (_, a) = setup(2, 2, IcKind::StreamfunctionSwirl, amp);
        let (_, b) = setup(2, 2, IcKind::StreamfunctionSwirl, 2.0 * amp);
        let (ea, eb) = (energy(&a), energy(&b));
        prop_assert!((eb - 4.0 * ea).abs() <= 1e-8 * eb);
    }

    #[test]
    fn diagnostics_are_finite_and_nonnegative(amp in 0.0f64..0.3, m in 1usize..4) {
        let (g, s) = setup(m, 2, IcKind::StreamfunctionSwirl, amp);
        let (dt, _) = auto_dt(&g, s.max_velocity(), DEFAULT_CFL, g.delta_r);
        let st = Stepper::new(&g, dt, StepOptions::default()).unwrap();
        let next = st.advance(&s).unwrap().0;
        let r = record(&next);
        prop_assert!(r.all_finite());
        prop_assert!(r.energy >= 0.0 && r.dissipation >= 0.0 && r.sup_gamma >= 0.0);
        prop_assert!(r.energy <= record(&s).energy * (1.0 + 1e-6) + 1e-300);
    }
}
