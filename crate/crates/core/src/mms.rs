//! Manufactured solutions for the two Biot–Savart problems and the two
//! parabolic steps, with convergence tables.
//!
//! Every exact solution is separable, `u = T(t) S(r) Z(z)`. Radial factors are
//! `sin` or `cos` of `pi 2^m r`, so they vanish, or have vanishing slope, at
//! every dyadic radius. Vertical factors are `P(z) = z prod_j (z - H_j)` and its
//! antiderivative, which vanish, or have vanishing slope, at every step
//! height. Step heights are snapped on the coarsest admissible lattice so that
//! the same exact solution serves every refinement.

use std::sync::Arc;

use serde::Serialize;

use crate::config::{MmsDomain, MmsEquation};
use crate::domain::{build_domain, generate_grid_with, Grid, GridOptions};
use crate::elliptic::{assemble_v3_problem, assemble_vr_problem, solve};
use crate::error::{Error, Result};
use crate::evolve::{StepOptions, Stepper};
use crate::field::{lp_norm, BcFamily, GridField};

const SNAP: u32 = 2;
const SOLVER_TOL: f64 = 1e-12;

/// Dense polynomial, lowest power first.
#[derive(Debug, Clone, PartialEq)]
struct Poly(Vec<f64>);

impl Poly {
    fn from_roots(roots: &[f64]) -> Poly {
        let mut c = vec![1.0];
        for &a in roots {
            let mut next = vec![0.0; c.len() + 1];
            for (i, &x) in c.iter().enumerate() {
                next[i + 1] += x;
                next[i] -= a * x;
            }
            c = next;
        }
        Poly(c)
    }

    fn derivative(&self) -> Poly {
        Poly(self.0.iter().enumerate().skip(1).map(|(i, &x)| i as f64 * x).collect())
    }

    fn antiderivative(&self) -> Poly {
        let mut c = vec![0.0];
        c.extend(self.0.iter().enumerate().map(|(i, &x)| x / (i + 1) as f64));
        Poly(c)
    }

    fn eval(&self, x: f64) -> f64 {
        self.0.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }
}

/// `(value, first, second)` derivative triple.
type Jet1 = (f64, f64, f64);

#[derive(Debug, Clone)]
struct Separable {
    radial_sin: bool,
    k: f64,
    vertical: [Poly; 3],
}

impl Separable {
    fn new(m: usize, heights: &[f64], radial_sin: bool, vertical_zero: bool) -> Self {
        let mut roots = vec![0.0];
        roots.extend_from_slice(heights);
        let p = Poly::from_roots(&roots);
        let z = if vertical_zero { p } else { p.antiderivative() };
        let dz = z.derivative();
        let dzz = dz.derivative();
        Separable { radial_sin, k: std::f64::consts::PI * (1u64 << m) as f64, vertical: [z, dz, dzz] }
    }

    fn radial(&self, r: f64) -> Jet1 {
        let (s, c) = (self.k * r).sin_cos();
        let k = self.k;
        if self.radial_sin {
            (s, k * c, -k * k * s)
        } else {
            (c, -k * s, -k * k * c)
        }
    }

    fn vertical(&self, z: f64) -> Jet1 {
        (self.vertical[0].eval(z), self.vertical[1].eval(z), self.vertical[2].eval(z))
    }

    /// `(u, u_r, u_rr, u_zz)`.
    fn jet(&self, r: f64, z: f64) -> (f64, f64, f64, f64) {
        let (s, sr, srr) = self.radial(r);
        let (v, _, vzz) = self.vertical(z);
        (s * v, sr * v, srr * v, s * vzz)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceRow {
    /// Refinement `p`, or the number of time steps.
    pub level: u32,
    /// `delta` for space studies, `dt` for time studies.
    pub spacing: f64,
    /// `(int |u_h - u|^2 r dr dz)^(1/2)`.
    pub error: f64,
    /// `log(e_(k-1)/e_k) / log(s_(k-1)/s_k)`.
    pub order: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceTable {
    pub equation: String,
    pub domain: String,
    pub study: String,
    pub rows: Vec<ConvergenceRow>,
}

impl ConvergenceTable {
    fn push(&mut self, level: u32, spacing: f64, error: f64) {
        let order = self.rows.last().map(|prev| (prev.error / error).ln() / (prev.spacing / spacing).ln());
        self.rows.push(ConvergenceRow { level, spacing, error, order });
    }

    /// Smallest observed order.
    pub fn min_order(&self) -> f64 {
        self.rows.iter().filter_map(|r| r.order).fold(f64::INFINITY, f64::min)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("equation,domain,study,level,spacing,error,order\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{:.6e},{:.6e},{}\n",
                self.equation,
                self.domain,
                self.study,
                r.level,
                r.spacing,
                r.error,
                r.order.map_or(String::new(), |o| format!("{o:.4}"))
            ));
        }
        s
    }
}

fn steps_m(domain: MmsDomain) -> usize {
    match domain {
        MmsDomain::Rectangle => 1,
        MmsDomain::Staircase => 3,
    }
}

fn grids(domain: MmsDomain, ps: &[u32]) -> Result<(usize, Vec<f64>, Vec<Arc<Grid>>)> {
    if ps.is_empty() {
        return Err(Error::Usage("empty refinement list".into()));
    }
    let m = steps_m(domain);
    let d = build_domain(m, 1.1)?;
    let opts = GridOptions { snap_refinement: Some(SNAP), ..Default::default() };
    let gs: Vec<Arc<Grid>> = ps.iter().map(|&p| generate_grid_with(&d, p, &opts).map(Arc::new)).collect::<Result<_>>()?;
    let heights = gs[0].snapped_heights.clone();
    Ok((m, heights, gs))
}

fn error_norm(u: &GridField, exact: impl Fn(f64, f64) -> f64) -> Result<f64> {
    let e = u.map_rz(|r, z, x| x - exact(r, z));
    lp_norm(&e, 2.0, 0)
}

fn exact_for(eq: MmsEquation, m: usize, heights: &[f64]) -> Separable {
    // (radial factor is sin, vertical factor vanishes at the heights)
    let (radial_sin, vertical_zero) = match eq {
        MmsEquation::Vr => (true, false),
        MmsEquation::V3 => (false, true),
        MmsEquation::H => (false, false),
        MmsEquation::Omega => (true, true),
    };
    Separable::new(m, heights, radial_sin, vertical_zero)
}

/// Convergence under `p -> p + 1` for `(Delta - 1/r^2) v_r = f` or `Delta v_3 = f`.
pub fn elliptic_study(eq: MmsEquation, domain: MmsDomain, ps: &[u32]) -> Result<ConvergenceTable> {
    if !matches!(eq, MmsEquation::Vr | MmsEquation::V3) {
        return Err(Error::Usage(format!("`{eq}` is not an elliptic problem")));
    }
    let (m, heights, gs) = grids(domain, ps)?;
    let u = exact_for(eq, m, &heights);
    let mut table = ConvergenceTable { equation: eq.to_string(), domain: domain.to_string(), study: "space".into(), rows: vec![] };
    for (g, &p) in gs.iter().zip(ps) {
        let (op, rhs) = if eq == MmsEquation::Vr {
            let f = GridField::from_fn(g, BcFamily::None, |r, z| {
                let (v, vr, vrr, vzz) = u.jet(r, z);
                vrr + vr / r + vzz - v / (r * r)
            });
            (assemble_vr_problem(g), f)
        } else {
            let f = GridField::from_fn(g, BcFamily::None, |r, z| {
                let (_, vr, vrr, vzz) = u.jet(r, z);
                vrr + vr / r + vzz
            });
            (assemble_v3_problem(g), f)
        };
        let (sol, _) = solve(&op, &rhs, SOLVER_TOL)?;
        table.push(p, g.delta_r, error_norm(&sol, |r, z| u.jet(r, z).0)?);
    }
    Ok(table)
}

const T_END: f64 = 0.1;

fn time_factor(t: f64) -> (f64, f64) {
    ((-t).exp(), -(-t).exp())
}

/// Runs one parabolic equation to `T_END` with `steps` backward-Euler steps
/// and zero velocity; returns the final field.
fn parabolic_final(eq: MmsEquation, g: &Arc<Grid>, u: &Separable, steps: usize) -> Result<GridField> {
    let dt = T_END / steps as f64;
    let stepper = Stepper::new(g, dt, StepOptions { solver_tol: SOLVER_TOL, ..Default::default() })?;
    let zero_r = GridField::zeros(g, BcFamily::MixedVr);
    let zero_3 = GridField::zeros(g, BcFamily::MixedV3);
    let zero_h = GridField::zeros(g, BcFamily::NeumannAll);
    let bc = if eq == MmsEquation::H { BcFamily::NeumannAll } else { BcFamily::DirichletAll };
    let mut cur = GridField::from_fn(g, bc, |r, z| u.jet(r, z).0);
    cur.enforce_bc();
    for n in 1..=steps {
        let t = n as f64 * dt;
        let (tv, tt) = time_factor(t);
        let forcing = GridField::from_fn(g, BcFamily::None, |r, z| {
            let (v, vr, vrr, vzz) = u.jet(r, z);
            tt * v - tv * (vrr + 3.0 * vr / r + vzz)
        });
        cur = if eq == MmsEquation::H {
            stepper.step_h(&cur, &zero_r, &zero_3, Some(&forcing))?.0
        } else {
            stepper.step_omega(&cur, &zero_r, &zero_3, &zero_h, Some(&forcing))?.0
        };
    }
    Ok(cur)
}

fn parabolic_run(eq: MmsEquation, g: &Arc<Grid>, u: &Separable, steps: usize) -> Result<f64> {
    let cur = parabolic_final(eq, g, u, steps)?;
    let tv = time_factor(T_END).0;
    error_norm(&cur, |r, z| tv * u.jet(r, z).0)
}

fn check_parabolic(eq: MmsEquation) -> Result<()> {
    if matches!(eq, MmsEquation::H | MmsEquation::Omega) {
        Ok(())
    } else {
        Err(Error::Usage(format!("`{eq}` is not a parabolic step")))
    }
}

/// Space study with `dt = delta^2`, so the time error keeps pace.
pub fn parabolic_space_study(eq: MmsEquation, domain: MmsDomain, ps: &[u32]) -> Result<ConvergenceTable> {
    check_parabolic(eq)?;
    let (m, heights, gs) = grids(domain, ps)?;
    let u = exact_for(eq, m, &heights);
    let mut table = ConvergenceTable { equation: eq.to_string(), domain: domain.to_string(), study: "space".into(), rows: vec![] };
    for (g, &p) in gs.iter().zip(ps) {
        let steps = (T_END / (g.delta_r * g.delta_r)).ceil() as usize;
        table.push(p, g.delta_r, parabolic_run(eq, g, &u, steps)?);
    }
    Ok(table)
}

/// Ratio of reference to finest step count in a time study.
const TIME_REFERENCE_FACTOR: usize = 32;

/// Time study at refinement `p` over the given step counts. Errors are taken
/// against a run on the same grid with `32x` the finest step count, which
/// removes the spatial error that would otherwise mask the first-order term.
pub fn parabolic_time_study(eq: MmsEquation, domain: MmsDomain, p: u32, steps: &[usize]) -> Result<ConvergenceTable> {
    check_parabolic(eq)?;
    let (m, heights, gs) = grids(domain, &[p])?;
    let u = exact_for(eq, m, &heights);
    if steps.is_empty() || steps.contains(&0) {
        return Err(Error::Usage("step counts must be positive".into()));
    }
    let finest = *steps.iter().max().expect("nonempty");
    let reference = parabolic_final(eq, &gs[0], &u, TIME_REFERENCE_FACTOR * finest)?;
    let mut table = ConvergenceTable { equation: eq.to_string(), domain: domain.to_string(), study: "time".into(), rows: vec![] };
    for &n in steps {
        let cur = parabolic_final(eq, &gs[0], &u, n)?;
        let diff = cur.zip(&reference, |a, b| a - b)?;
        table.push(n as u32, T_END / n as f64, lp_norm(&diff, 2.0, 0)?);
    }
    Ok(table)
}
