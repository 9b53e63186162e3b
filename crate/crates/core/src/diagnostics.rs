//! Monitored norms, the growth certificate, and consistency residuals of the
//! vorticity system evaluated on simulated states.

use serde::{Deserialize, Serialize};

use crate::domain::{Grid, NodeTag};
use crate::elliptic::assemble_swirl_diffusion;
use crate::error::{Error, Result};
use crate::evolve::FlowState;
use crate::field::{self, grad, laplacian_cyl, BcFamily, GridField};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DiagnosticsRecord {
    pub t: f64,
    pub energy: f64,
    pub dissipation: f64,
    pub sup_gamma: f64,
    pub sup_vtheta: f64,
    pub l2_omega: f64,
    pub l2_j: f64,
    pub l6_vr_over_r: f64,
    pub div_res: f64,
    pub line_int_max: f64,
    pub picard_factor: f64,
    pub cg_iters: usize,
}

pub const CSV_HEADER: &str =
    "t,E,dissipation,sup_gamma,sup_vtheta,l2_omega,l2_J,l6_vr_over_r,div_res,line_int_max,picard_factor,cg_iters";

impl DiagnosticsRecord {
    pub fn to_csv_row(&self) -> String {
        format!(
            "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{}",
            self.t,
            self.energy,
            self.dissipation,
            self.sup_gamma,
            self.sup_vtheta,
            self.l2_omega,
            self.l2_j,
            self.l6_vr_over_r,
            self.div_res,
            self.line_int_max,
            self.picard_factor,
            self.cg_iters
        )
    }

    /// The monitored quantity of the growth bound, `||Omega||_2 + ||J||_2`.
    pub fn growth_quantity(&self) -> f64 {
        self.l2_omega + self.l2_j
    }

    pub fn all_finite(&self) -> bool {
        [
            self.t,
            self.energy,
            self.dissipation,
            self.sup_gamma,
            self.sup_vtheta,
            self.l2_omega,
            self.l2_j,
            self.l6_vr_over_r,
            self.div_res,
            self.line_int_max,
            self.picard_factor,
        ]
        .iter()
        .all(|x| x.is_finite())
    }
}

pub fn write_csv(records: &[DiagnosticsRecord]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in records {
        s.push_str(&r.to_csv_row());
        s.push('\n');
    }
    s
}

pub fn parse_csv(text: &str) -> Result<Vec<DiagnosticsRecord>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == CSV_HEADER => {}
        _ => return Err(Error::Usage("diagnostics CSV has an unexpected header".into())),
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |what: &str| Error::Usage(format!("diagnostics CSV line {}: {what}", i + 1));
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 12 {
            return Err(bad("expected 12 columns"));
        }
        let mut v = [0.0f64; 11];
        for (k, c) in cols[..11].iter().enumerate() {
            v[k] = c.trim().parse().map_err(|_| bad("unparsable number"))?;
        }
        let cg_iters = cols[11].trim().parse().map_err(|_| bad("unparsable iteration count"))?;
        out.push(DiagnosticsRecord {
            t: v[0],
            energy: v[1],
            dissipation: v[2],
            sup_gamma: v[3],
            sup_vtheta: v[4],
            l2_omega: v[5],
            l2_j: v[6],
            l6_vr_over_r: v[7],
            div_res: v[8],
            line_int_max: v[9],
            picard_factor: v[10],
            cg_iters,
        });
    }
    Ok(out)
}

/// `int (v_r^2 + v_theta^2 + v_3^2) dx`.
pub fn energy(state: &FlowState) -> f64 {
    let g = state.grid();
    field::weighted_sum(g, 0, |n| {
        let r = g.r(n);
        let vt = r * state.h.values[n];
        state.v_r.values[n].powi(2) + vt * vt + state.v_3.values[n].powi(2)
    })
}

/// `int (|grad v_r|^2 + |grad v_3|^2 + |r d_r h|^2 + |d_z v_theta|^2 + v_r^2/r^2) dx`.
pub fn dissipation(state: &FlowState) -> f64 {
    let g = state.grid();
    let (a, b) = grad(&state.v_r);
    let (c, d) = grad(&state.v_3);
    let (hr, hz) = grad(&state.h);
    field::weighted_sum(g, 0, |n| {
        let r = g.r(n);
        a.values[n].powi(2)
            + b.values[n].powi(2)
            + c.values[n].powi(2)
            + d.values[n].powi(2)
            + (r * hr.values[n]).powi(2)
            + (r * hz.values[n]).powi(2)
            + (state.v_r.values[n] / r).powi(2)
    })
}

pub fn record(state: &FlowState) -> DiagnosticsRecord {
    let g = state.grid();
    let mut sup_gamma = 0.0f64;
    let mut sup_vtheta = 0.0f64;
    for &n in g.active() {
        let r = g.r(n);
        let h = state.h.values[n].abs();
        sup_gamma = sup_gamma.max(r * r * h);
        sup_vtheta = sup_vtheta.max(r * h);
    }
    let vr_over_r = state.v_r.map_rz(|r, _, v| v / r);
    DiagnosticsRecord {
        t: state.t,
        energy: energy(state),
        dissipation: dissipation(state),
        sup_gamma,
        sup_vtheta,
        l2_omega: field::lp_norm(&state.omega, 2.0, 0).expect("valid exponent"),
        l2_j: field::lp_norm(&state.j(), 2.0, 0).expect("valid exponent"),
        l6_vr_over_r: field::lp_norm(&vr_over_r, 6.0, 0).expect("valid exponent"),
        div_res: state.bs_stats.div_residual,
        line_int_max: state.bs_stats.line_integral_max,
        picard_factor: state.picard_factor,
        cg_iters: state.cg_iterations,
    }
}

/// Largest `|v_theta|` on `D_1 ∩ {r > 3/4}`, the boundary-layer quantity the
/// growth constant also depends on.
pub fn boundary_vtheta_sup(state: &FlowState) -> f64 {
    let g = state.grid();
    g.active()
        .iter()
        .filter(|&&n| g.r(n) > 0.75)
        .fold(0.0f64, |m, &n| m.max((g.r(n) * state.h.values[n]).abs()))
}

/// Largest `|Gamma|` over boundary-tagged nodes.
pub fn boundary_gamma_sup(state: &FlowState) -> f64 {
    let g = state.grid();
    g.active()
        .iter()
        .filter(|&&n| g.tag(n) != NodeTag::Interior)
        .fold(0.0f64, |m, &n| m.max((g.r(n).powi(2) * state.h.values[n]).abs()))
}

/// Discrete maximum principle for `Gamma` across one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaStepCheck {
    pub interior_max: f64,
    pub interior_min: f64,
    pub upper: f64,
    pub lower: f64,
    pub ok: bool,
}

/// Interior extremes of `Gamma^(n+1)` against `Gamma^n` and the boundary
/// values of `Gamma^(n+1)`. `tol` absorbs the inexact linear solve.
pub fn gamma_step_check(prev: &FlowState, next: &FlowState, tol: f64) -> GammaStepCheck {
    let g = next.grid();
    let gam = |s: &FlowState, n: usize| g.r(n).powi(2) * s.h.values[n];
    let (mut imax, mut imin) = (f64::NEG_INFINITY, f64::INFINITY);
    let (mut upper, mut lower) = (f64::NEG_INFINITY, f64::INFINITY);
    for &n in g.active() {
        let a = gam(prev, n);
        upper = upper.max(a);
        lower = lower.min(a);
        let b = gam(next, n);
        if g.tag(n) == NodeTag::Interior {
            imax = imax.max(b);
            imin = imin.min(b);
        } else {
            upper = upper.max(b);
            lower = lower.min(b);
        }
    }
    let ok = imax <= upper + tol && imin >= lower - tol;
    GammaStepCheck { interior_max: imax, interior_min: imin, upper, lower, ok }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCertificate {
    /// Running sup of `||Gamma||_inf`, standing in for the non-constructive constant.
    pub c_star: f64,
    pub c_star_is_proxy: bool,
    pub j0: u32,
    pub lambda0: f64,
    pub growth_ok: bool,
    /// Largest `ln(X(t)/X(0))/t` over samples, `X = ||Omega||_2 + ||J||_2`.
    pub measured_rate: f64,
    pub beta: f64,
    pub initial_energy: f64,
    pub gamma0_sup: f64,
    pub gamma_boundary_sup: f64,
    pub boundary_vtheta_sup: f64,
    pub gamma_bound_ok: bool,
}

/// `j0 = max(1, ceil((2.1 + log_4(2C + 2C^2)) / (beta - 1)))` and
/// `lambda0 = (2C + 2C^2) 4^j0 + 1000`.
pub fn compute_j0_lambda0(c_star: f64, beta: f64) -> Result<(u32, f64)> {
    if !(beta > 1.0) {
        return Err(Error::DomainParameter(format!("beta must exceed 1, got {beta}")));
    }
    if !(c_star >= 0.0) || !c_star.is_finite() {
        return Err(Error::Usage(format!("C_* must be finite and nonnegative, got {c_star}")));
    }
    let a = 2.0 * c_star + 2.0 * c_star * c_star;
    let arg = (2.1 + a.ln() / 4f64.ln()) / (beta - 1.0);
    // ceil with a relative guard against rounding just above an integer
    let j0 = if arg.is_finite() {
        (arg - 1e-9 * arg.abs()).ceil().max(1.0)
    } else {
        1.0
    };
    if j0 > 1000.0 {
        return Err(Error::Numeric(format!("j0 = {j0} overflows the growth constant")));
    }
    let j0 = j0 as u32;
    Ok((j0, a * 4f64.powi(j0 as i32) + 1000.0))
}

/// Growth check with 5% slack, carried out in log space.
pub fn check_growth(records: &[DiagnosticsRecord], lambda0: f64) -> Result<(bool, f64)> {
    let first = records.first().ok_or_else(|| Error::Usage("empty diagnostics series".into()))?;
    let x0 = first.growth_quantity();
    let t0 = first.t;
    let mut ok = true;
    let mut rate = f64::NEG_INFINITY;
    for r in records {
        let x = r.growth_quantity();
        let dt = r.t - t0;
        if x0 == 0.0 {
            ok &= x == 0.0;
            continue;
        }
        if x > 0.0 {
            ok &= x.ln() <= 1.05f64.ln() + lambda0 * dt + x0.ln();
            if dt > 0.0 {
                rate = rate.max((x / x0).ln() / dt);
            }
        }
    }
    if !rate.is_finite() {
        rate = 0.0;
    }
    Ok((ok, rate))
}

/// Assembles the certificate from a trajectory's records and its initial state.
pub fn certify(records: &[DiagnosticsRecord], beta: f64, initial: &FlowState, gamma_boundary_sup: f64) -> Result<BoundCertificate> {
    let c_star = records.iter().fold(0.0f64, |m, r| m.max(r.sup_gamma));
    let (j0, lambda0) = compute_j0_lambda0(c_star, beta)?;
    let (growth_ok, measured_rate) = check_growth(records, lambda0)?;
    let first = records.first().expect("nonempty after check_growth");
    let gamma0_sup = first.sup_gamma;
    let gamma_bound_ok = c_star <= 1.05 * (gamma0_sup + gamma_boundary_sup);
    Ok(BoundCertificate {
        c_star,
        c_star_is_proxy: true,
        j0,
        lambda0,
        growth_ok,
        measured_rate,
        beta,
        initial_energy: first.energy,
        gamma0_sup,
        gamma_boundary_sup,
        boundary_vtheta_sup: boundary_vtheta_sup(initial),
        gamma_bound_ok,
    })
}

/// Whether the closed lattice box of half-width `cells` around `n` consists of
/// interior nodes. For a staircase it suffices to check the box perimeter.
fn deep(grid: &Grid, n: usize, cells: usize) -> bool {
    let (i, k) = grid.coords(n);
    if cells == 0 {
        return grid.tag(n) == NodeTag::Interior;
    }
    if i < cells || k < cells || i + cells >= grid.nr || k + cells >= grid.nz {
        return false;
    }
    let inside = |i: usize, k: usize| grid.tag(grid.index(i, k)) == NodeTag::Interior;
    (i - cells..=i + cells).all(|a| inside(a, k - cells) && inside(a, k + cells))
        && (k - cells..=k + cells).all(|b| inside(i - cells, b) && inside(i + cells, b))
}

/// `sum_n term(n)^2 r_n w_n` over interior nodes at lattice distance at least
/// `margin` from the boundary, square-rooted.
fn interior_l2(grid: &Grid, margin: f64, term: impl Fn(usize) -> f64) -> f64 {
    let cells = (margin / grid.delta_r - 1e-9).ceil().max(0.0) as usize;
    field::weighted_sum(grid, 0, |n| if deep(grid, n, cells) { term(n).powi(2) } else { 0.0 }).sqrt()
}

fn midpoint(a: &GridField, b: &GridField) -> GridField {
    a.zip(b, |x, y| 0.5 * (x + y)).expect("states share a grid").with_bc(a.bc)
}

/// Interior `L^2` residuals `(J, Omega, omega_3)` of the vorticity system
/// between two consecutive states, centred at the half step.
pub fn residual_system_3_13(prev: &FlowState, next: &FlowState, dt: f64) -> Result<(f64, f64, f64)> {
    residual_system_3_13_within(prev, next, dt, 0.0)
}

/// As [`residual_system_3_13`], restricted to nodes at distance at least
/// `margin` from the boundary. Near re-entrant corners `J` behaves like
/// `rho^(-1/3)`, so its Laplacian is not square integrable there and only a
/// fixed interior region can show convergence.
pub fn residual_system_3_13_within(prev: &FlowState, next: &FlowState, dt: f64, margin: f64) -> Result<(f64, f64, f64)> {
    if !field::same_grid(prev.grid(), next.grid()) {
        return Err(Error::Usage("states live on different grids".into()));
    }
    if !(dt > 0.0) {
        return Err(Error::Usage(format!("time step must be positive, got {dt}")));
    }
    let g = prev.grid();
    let l3 = assemble_swirl_diffusion(g, BcFamily::None);

    let j0 = prev.j();
    let j1 = next.j();
    let w3 = |s: &FlowState| {
        let (hr, _) = grad(&s.h);
        let mut out = GridField::zeros(g, BcFamily::None);
        for &n in g.active() {
            out.values[n] = 2.0 * s.h.values[n] + g.r(n) * hr.values[n];
        }
        out
    };
    let w3_0 = w3(prev);
    let w3_1 = w3(next);

    let h = midpoint(&prev.h, &next.h);
    let omega = midpoint(&prev.omega, &next.omega);
    let v_r = midpoint(&prev.v_r, &next.v_r);
    let v_3 = midpoint(&prev.v_3, &next.v_3);
    let j = midpoint(&j0, &j1);
    let w3m = midpoint(&w3_0, &w3_1);

    let (hr, hz) = grad(&h);
    let (jr, jz) = grad(&j);
    let (or, oz) = grad(&omega);
    let (w3r, w3z) = grad(&w3m);
    let (_, v3z) = grad(&v_3);
    let (v3r, _) = grad(&v_3);
    let vr_over_r = v_r.map_rz(|r, _, v| v / r).with_bc(BcFamily::None);
    let (qr, qz) = grad(&vr_over_r);

    let lj = l3.apply(&j)?;
    let lo = l3.apply(&omega)?;
    let lw = laplacian_cyl(&w3m);

    let res_j = interior_l2(g, margin, |n| {
        let r = g.r(n);
        let omega_r = -r * hz.values[n];
        let omega_3 = 2.0 * h.values[n] + r * hr.values[n];
        lj.values[n] - (v_r.values[n] * jr.values[n] + v_3.values[n] * jz.values[n])
            + omega_r * qr.values[n]
            + omega_3 * qz.values[n]
            - (j1.values[n] - j0.values[n]) / dt
    });
    let res_omega = interior_l2(g, margin, |n| {
        let r = g.r(n);
        let v_theta = r * h.values[n];
        lo.values[n] - (v_r.values[n] * or.values[n] + v_3.values[n] * oz.values[n])
            - 2.0 * v_theta / r * j.values[n]
            - (next.omega.values[n] - prev.omega.values[n]) / dt
    });
    let res_w3 = interior_l2(g, margin, |n| {
        let r = g.r(n);
        let omega_r = -r * hz.values[n];
        lw.values[n] - (v_r.values[n] * w3r.values[n] + v_3.values[n] * w3z.values[n])
            + omega_r * v3r.values[n]
            + w3m.values[n] * v3z.values[n]
            - (w3_1.values[n] - w3_0.values[n]) / dt
    });
    Ok((res_j, res_omega, res_w3))
}

/// Interior `L^2` residual of `(Delta + (2/r) d_r)(v_r / r) = d_z Omega`.
pub fn check_vr_identity(state: &FlowState) -> f64 {
    check_vr_identity_within(state, 0.0)
}

/// As [`check_vr_identity`], restricted to distance `margin` from the boundary.
pub fn check_vr_identity_within(state: &FlowState, margin: f64) -> f64 {
    let g = state.grid();
    let l3 = assemble_swirl_diffusion(g, BcFamily::None);
    let q = state.v_r.map_rz(|r, _, v| v / r).with_bc(BcFamily::None);
    let lq = l3.apply(&q).expect("same grid");
    let (_, oz) = grad(&state.omega);
    interior_l2(g, margin, |n| lq.values[n] - oz.values[n])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{build_domain, generate_grid};
    use std::sync::Arc;

    fn grid(m: usize, p: u32) -> Arc<Grid> {
        Arc::new(generate_grid(&build_domain(m, 1.1).unwrap(), p).unwrap())
    }

    #[test]
    fn zero_state_record_is_zero() {
        let g = grid(2, 3);
        let mut s = FlowState::zero(&g);
        s.t = 0.3;
        let r = record(&s);
        assert_eq!(r, DiagnosticsRecord { t: 0.3, ..Default::default() });
        assert_eq!(residual_system_3_13(&s, &s, 0.1).unwrap(), (0.0, 0.0, 0.0));
        assert_eq!(check_vr_identity(&s), 0.0);
    }

    #[test]
    fn margin_shrinks_the_residual_region() {
        let g = grid(2, 3);
        let mut s = FlowState::zero(&g);
        s.omega = GridField::from_fn(&g, BcFamily::DirichletAll, |r, z| r * z);
        let full = check_vr_identity(&s);
        assert!(full > 0.0);
        assert_eq!(check_vr_identity_within(&s, 0.0), full);
        assert!(check_vr_identity_within(&s, 0.1) < full);
        assert_eq!(check_vr_identity_within(&s, 1.0), 0.0);
    }

    #[test]
    fn rigid_rotation_record() {
        let g = grid(1, 5);
        let mut s = FlowState::zero(&g);
        s.h = GridField::from_fn(&g, BcFamily::NeumannAll, |_, _| 1.0);
        let r = record(&s);
        // int_{1/2}^1 r^3 dr, trapezoid error ~ delta^2 / 4
        assert!((r.energy - 15.0 / 64.0).abs() < 1e-3);
        assert_eq!(r.sup_gamma, 1.0);
        assert_eq!(r.l2_j, 0.0);
    }

    #[test]
    fn j0_examples() {
        let (j0, l0) = compute_j0_lambda0(1.0, 1.1).unwrap();
        assert_eq!(j0, 31);
        assert_eq!(l0, 4.0 * 4f64.powi(31) + 1000.0);
        assert_eq!(compute_j0_lambda0(1.0, 1.05).unwrap().0, 62);
        assert_eq!(compute_j0_lambda0(1e-12, 1.1).unwrap().0, 1);
        assert_eq!(compute_j0_lambda0(0.0, 1.1).unwrap(), (1, 1000.0));
        assert!(matches!(compute_j0_lambda0(1.0, 1.0), Err(Error::DomainParameter(_))));
    }

    #[test]
    fn growth_check_examples() {
        let zero = vec![DiagnosticsRecord::default(); 3];
        assert!(check_growth(&zero, 1000.0).unwrap().0);
        let fast: Vec<_> = (0..5)
            .map(|i| {
                let t = i as f64 * 0.01;
                DiagnosticsRecord { t, l2_omega: (2000.0 * t).exp(), ..Default::default() }
            })
            .collect();
        let (ok, rate) = check_growth(&fast, 1000.0).unwrap();
        assert!(!ok);
        assert!((rate - 2000.0).abs() < 1e-6);
        assert!(check_growth(&[], 1.0).is_err());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let r = DiagnosticsRecord {
            t: 0.1,
            energy: 1.0 / 3.0,
            dissipation: 2.5e-7,
            sup_gamma: std::f64::consts::PI,
            cg_iters: 42,
            ..Default::default()
        };
        let text = write_csv(&[r, r]);
        assert_eq!(parse_csv(&text).unwrap(), vec![r, r]);
        assert!(parse_csv("t,E\n1,2\n").is_err());
    }

    #[test]
    fn violated_vr_identity_is_order_one() {
        let g = grid(1, 4);
        let mut s = FlowState::zero(&g);
        s.v_r = GridField::from_fn(&g, BcFamily::MixedVr, |r, z| r * z * z);
        let coarse = check_vr_identity(&s);
        let g2 = grid(1, 5);
        let mut s2 = FlowState::zero(&g2);
        s2.v_r = GridField::from_fn(&g2, BcFamily::MixedVr, |r, z| r * z * z);
        let fine = check_vr_identity(&s2);
        assert!(coarse > 0.1 && fine > 0.9 * coarse);
    }
}
