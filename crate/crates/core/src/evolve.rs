//! Time stepping of `(h, Omega)` with the meridional velocity rebuilt from
//! `Omega` every Picard sweep.
//!
//! One step solves, for `k = 1..=picard_max`,
//! `h_k = step_h(h^n; b_(k-1))`, `Omega_k = step_omega(Omega^n; b_(k-1), h_k)`,
//! `b_k = BS(Omega_k)`, starting from `b_0 = b^n`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::domain::{Dir, Grid, StaircaseDomain};
use crate::elliptic::{
    assemble_swirl_diffusion, solve_from, BiotSavartSolver, BiotSavartStats, EllipticOperator,
};
use crate::error::{Error, Result};
use crate::field::{self, dr_flux, dz_flux, grad, BcFamily, GridField};
pub use crate::run::{simulate, RunSummary};

pub const DEFAULT_CFL: f64 = 0.4;
const VELOCITY_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct FlowState {
    pub t: f64,
    pub h: GridField,
    pub omega: GridField,
    pub v_r: GridField,
    pub v_3: GridField,
    /// Statistics of the Biot–Savart solve that produced `(v_r, v_3)`.
    pub bs_stats: BiotSavartStats,
    /// Last Picard contraction ratio (0 when not measured).
    pub picard_factor: f64,
    /// CG iterations spent on the step that produced this state.
    pub cg_iterations: usize,
}

impl FlowState {
    pub fn grid(&self) -> &Arc<Grid> {
        self.h.grid()
    }

    pub fn zero(grid: &Arc<Grid>) -> Self {
        FlowState {
            t: 0.0,
            h: GridField::zeros(grid, BcFamily::NeumannAll),
            omega: GridField::zeros(grid, BcFamily::DirichletAll),
            v_r: GridField::zeros(grid, BcFamily::MixedVr),
            v_3: GridField::zeros(grid, BcFamily::MixedV3),
            bs_stats: BiotSavartStats::default(),
            picard_factor: 0.0,
            cg_iterations: 0,
        }
    }

    /// `v_theta = r h`.
    pub fn v_theta(&self) -> GridField {
        self.h.map_rz(|r, _, h| r * h).with_bc(BcFamily::None)
    }

    /// `Gamma = r v_theta = r^2 h`.
    pub fn gamma(&self) -> GridField {
        self.h.map_rz(|r, _, h| r * r * h).with_bc(BcFamily::None)
    }

    /// `J = omega_r / r = -d_z v_theta / r = -d_z h`.
    pub fn j(&self) -> GridField {
        let (_, hz) = grad(&self.h);
        hz.map(|x| -x)
    }

    pub fn max_velocity(&self) -> f64 {
        self.v_r.max_abs().max(self.v_3.max_abs())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IcKind {
    StreamfunctionSwirl,
    SwirlOnly,
    /// Swirl-free variant of `streamfunction-swirl`.
    Streamfunction,
    Zero,
}

impl std::str::FromStr for IcKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "streamfunction-swirl" => Ok(IcKind::StreamfunctionSwirl),
            "swirl-only" => Ok(IcKind::SwirlOnly),
            "streamfunction" => Ok(IcKind::Streamfunction),
            "zero" => Ok(IcKind::Zero),
            other => Err(format!(
                "unknown initial condition '{other}' (expected streamfunction-swirl, swirl-only, streamfunction or zero)"
            )),
        }
    }
}

impl std::fmt::Display for IcKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            IcKind::StreamfunctionSwirl => "streamfunction-swirl",
            IcKind::SwirlOnly => "swirl-only",
            IcKind::Streamfunction => "streamfunction",
            IcKind::Zero => "zero",
        })
    }
}

/// `(1 - s)^4` on the ellipse `s = a^2 + b^2 < 1`, zero outside. C^3 across
/// the support edge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EllipticBump {
    pub rc: f64,
    pub zc: f64,
    pub ra: f64,
    pub za: f64,
}

/// Value and first/second partials `(f, f_r, f_z, f_rr, f_zz)`.
pub type Jet = (f64, f64, f64, f64, f64);

impl EllipticBump {
    pub fn jet(&self, r: f64, z: f64) -> Jet {
        let a = (r - self.rc) / self.ra;
        let b = (z - self.zc) / self.za;
        let s = a * a + b * b;
        if s >= 1.0 {
            return (0.0, 0.0, 0.0, 0.0, 0.0);
        }
        let u = 1.0 - s;
        let f = u.powi(4);
        let fs = -4.0 * u.powi(3);
        let fss = 12.0 * u * u;
        let (sr, srr) = (2.0 * a / self.ra, 2.0 / (self.ra * self.ra));
        let (sz, szz) = (2.0 * b / self.za, 2.0 / (self.za * self.za));
        (f, fs * sr, fs * sz, fss * sr * sr + fs * srr, fss * sz * sz + fs * szz)
    }
}

/// Closed-form initial data. The streamfunction is supported strictly inside
/// `S_1`. The swirl is `h = A g(z) q(r)` with `g = 1 + (1 - (z/h_m)^2)^3` below
/// the lowest step height and `g = 1` above it, and `q = 1 + cos(2 pi log2 r)/2`
/// so that `q' = 0` on every vertical wall. Hence `d_z h = 0` on H, `d_r h = 0`
/// on V, and `h` is C^2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialCondition {
    pub kind: IcKind,
    pub amplitude: f64,
    pub psi: EllipticBump,
    pub swirl_height: f64,
}

impl InitialCondition {
    pub fn new(kind: IcKind, amplitude: f64, domain: &StaircaseDomain) -> Self {
        let hm = domain.rects.last().expect("nonempty domain").height;
        InitialCondition {
            kind,
            amplitude,
            psi: EllipticBump { rc: 0.75, zc: 0.5, ra: 0.2, za: 0.38 },
            swirl_height: hm,
        }
    }

    /// Lowers the swirl plateau to the snapped lowest step so that
    /// `d_z h = 0` holds on the discrete H walls too.
    pub fn fitted_to(mut self, grid: &Grid) -> Self {
        if let Some(&k) = grid.snapped_heights.last() {
            self.swirl_height = self.swirl_height.min(k);
        }
        self
    }

    fn has_psi(&self) -> bool {
        matches!(self.kind, IcKind::StreamfunctionSwirl | IcKind::Streamfunction)
    }

    fn has_swirl(&self) -> bool {
        matches!(self.kind, IcKind::StreamfunctionSwirl | IcKind::SwirlOnly)
    }

    /// Streamfunction jet (zero when the kind has none).
    pub fn psi_jet(&self, r: f64, z: f64) -> Jet {
        if !self.has_psi() {
            return (0.0, 0.0, 0.0, 0.0, 0.0);
        }
        let (f, fr, fz, frr, fzz) = self.psi.jet(r, z);
        let a = self.amplitude;
        (a * f, a * fr, a * fz, a * frr, a * fzz)
    }

    /// `v_r = -psi_z / r`, `v_3 = psi_r / r`.
    pub fn velocity(&self, r: f64, z: f64) -> (f64, f64) {
        let (_, pr, pz, _, _) = self.psi_jet(r, z);
        (-pz / r, pr / r)
    }

    /// `Omega = omega_theta / r` with `omega_theta = -psi_zz/r - psi_rr/r + psi_r/r^2`.
    pub fn omega(&self, r: f64, z: f64) -> f64 {
        let (_, pr, _, prr, pzz) = self.psi_jet(r, z);
        (-pzz / r - prr / r + pr / (r * r)) / r
    }

    fn g(&self, z: f64) -> (f64, f64) {
        let x = z / self.swirl_height;
        if x >= 1.0 {
            return (1.0, 0.0);
        }
        let u = 1.0 - x * x;
        (1.0 + u.powi(3), -6.0 * x * u * u / self.swirl_height)
    }

    fn q(&self, r: f64) -> (f64, f64) {
        // Periodic in log2 r, so q' vanishes at every dyadic radius.
        let w = 2.0 * std::f64::consts::PI;
        let x = w * r.log2();
        (1.0 + 0.5 * x.cos(), -0.5 * w * x.sin() / (r * std::f64::consts::LN_2))
    }

    /// `(h, d_r h, d_z h)`.
    pub fn h_jet(&self, r: f64, z: f64) -> (f64, f64, f64) {
        if !self.has_swirl() {
            return (0.0, 0.0, 0.0);
        }
        let (g, gz) = self.g(z);
        let (q, qr) = self.q(r);
        let a = self.amplitude;
        (a * g * q, a * g * qr, a * gz * q)
    }

    /// Sampled `h` and `Omega` with the families set and boundary values pinned.
    pub fn sample(&self, grid: &Arc<Grid>) -> (GridField, GridField) {
        let h = GridField::from_fn(grid, BcFamily::NeumannAll, |r, z| self.h_jet(r, z).0);
        let mut omega = GridField::from_fn(grid, BcFamily::DirichletAll, |r, z| self.omega(r, z));
        omega.enforce_bc();
        (h, omega)
    }

    /// `b` from the sampled streamfunction with the conservative derivative;
    /// its discrete divergence vanishes up to rounding.
    pub fn discrete_velocity(&self, grid: &Arc<Grid>) -> (GridField, GridField) {
        let psi = GridField::from_fn(grid, BcFamily::None, |r, z| self.psi_jet(r, z).0);
        let pz = dz_flux(&psi);
        let pr = dr_flux(&psi);
        let mut v_r = GridField::zeros(grid, BcFamily::MixedVr);
        let mut v_3 = GridField::zeros(grid, BcFamily::MixedV3);
        for &n in grid.active() {
            let r = grid.r(n);
            v_r.values[n] = -pz.values[n] / r;
            v_3.values[n] = pr.values[n] / r;
        }
        (v_r, v_3)
    }

    /// Initial state; `b` is the Biot–Savart image of the sampled `Omega` so
    /// that every state of a run comes from the same map.
    pub fn initial_state(&self, solver: &BiotSavartSolver) -> Result<FlowState> {
        let grid = solver.grid().clone();
        let (h, omega) = self.sample(&grid);
        let (v_r, v_3, bs_stats) = solver.solve(&omega, None)?;
        Ok(FlowState {
            t: 0.0,
            h,
            omega,
            v_r,
            v_3,
            bs_stats,
            picard_factor: 0.0,
            cg_iterations: bs_stats.iterations(),
        })
    }
}

/// `b . grad u` with first-order upwinding; a term whose upwind neighbour is
/// missing is dropped.
pub fn upwind_advection(v_r: &GridField, v_3: &GridField, u: &GridField) -> GridField {
    let g = u.grid();
    let d = g.delta_r;
    let mut out = GridField::zeros(g, BcFamily::None);
    for &n in g.active() {
        let a = v_r.values[n];
        let c = v_3.values[n];
        let mut s = 0.0;
        if a > 0.0 {
            if let Some(w) = g.neighbor(n, Dir::West) {
                s += a * (u.values[n] - u.values[w]) / d;
            }
        } else if a < 0.0 {
            if let Some(e) = g.neighbor(n, Dir::East) {
                s += a * (u.values[e] - u.values[n]) / d;
            }
        }
        if c > 0.0 {
            if let Some(so) = g.neighbor(n, Dir::South) {
                s += c * (u.values[n] - u.values[so]) / d;
            }
        } else if c < 0.0 {
            if let Some(no) = g.neighbor(n, Dir::North) {
                s += c * (u.values[no] - u.values[n]) / d;
            }
        }
        out.values[n] = s;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOptions {
    pub cfl: f64,
    pub solver_tol: f64,
    pub picard_max: usize,
    pub picard_tol: f64,
}

impl Default for StepOptions {
    fn default() -> Self {
        StepOptions { cfl: DEFAULT_CFL, solver_tol: 1e-10, picard_max: 3, picard_tol: 1e-8 }
    }
}

/// Operators for a fixed grid and time step.
#[derive(Debug, Clone)]
pub struct Stepper {
    pub dt: f64,
    pub opts: StepOptions,
    h_op: EllipticOperator,
    omega_op: EllipticOperator,
    pub bs: BiotSavartSolver,
}

/// Extra source terms, used only by manufactured-solution tests.
#[derive(Debug, Clone, Copy, Default)]
pub struct Forcing<'a> {
    pub h: Option<&'a GridField>,
    pub omega: Option<&'a GridField>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PicardReport {
    pub iterations: usize,
    pub increments: Vec<f64>,
    /// `increment_k / increment_(k-1)` for `k >= 2`.
    pub factors: Vec<f64>,
    pub converged: bool,
}

impl Stepper {
    pub fn new(grid: &Arc<Grid>, dt: f64, opts: StepOptions) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Usage(format!("time step must be positive, got {dt}")));
        }
        if opts.picard_max < 1 {
            return Err(Error::Usage("picard_max must be >= 1".into()));
        }
        Ok(Stepper {
            dt,
            opts,
            h_op: assemble_swirl_diffusion(grid, BcFamily::NeumannAll).with_shift(1.0 / dt),
            omega_op: assemble_swirl_diffusion(grid, BcFamily::DirichletAll).with_shift(1.0 / dt),
            bs: BiotSavartSolver::new(grid, opts.solver_tol),
        })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        self.bs.grid()
    }

    pub fn cfl_limit(&self, v_r: &GridField, v_3: &GridField) -> f64 {
        let vmax = v_r.max_abs().max(v_3.max_abs()).max(VELOCITY_FLOOR);
        self.opts.cfl * self.grid().delta_r / vmax
    }

    fn check_cfl(&self, v_r: &GridField, v_3: &GridField) -> Result<()> {
        let limit = self.cfl_limit(v_r, v_3);
        if self.dt > limit {
            Err(Error::StepSize { dt: self.dt, limit })
        } else {
            Ok(())
        }
    }

    fn implicit(&self, op: &EllipticOperator, star: GridField, bc: BcFamily) -> Result<(GridField, usize)> {
        let rhs = star.map(|x| -x / self.dt);
        let mut guess = star.with_bc(bc);
        guess.enforce_bc();
        let (mut x, stats) = solve_from(op, &rhs, self.opts.solver_tol, Some(&guess))?;
        x.bc = bc;
        Ok((x, stats.iterations))
    }

    /// One IMEX step of the swirl equation with `b` frozen. The explicit part
    /// advects `Gamma = r^2 h`, which carries both `b . grad h` and `2 v_r h / r`.
    pub fn step_h(
        &self,
        h: &GridField,
        v_r: &GridField,
        v_3: &GridField,
        forcing: Option<&GridField>,
    ) -> Result<(GridField, usize)> {
        self.check_cfl(v_r, v_3)?;
        let g = h.grid();
        let gamma = h.map_rz(|r, _, x| r * r * x);
        let adv = upwind_advection(v_r, v_3, &gamma);
        let mut star = GridField::zeros(g, BcFamily::NeumannAll);
        for &n in g.active() {
            let r = g.r(n);
            star.values[n] = h.values[n] - self.dt * adv.values[n] / (r * r);
            if let Some(f) = forcing {
                star.values[n] += self.dt * f.values[n];
            }
        }
        self.implicit(&self.h_op, star, BcFamily::NeumannAll)
    }

    /// One IMEX step of the `Omega` equation with `b` and `v_theta = r h` frozen.
    pub fn step_omega(
        &self,
        omega: &GridField,
        v_r: &GridField,
        v_3: &GridField,
        h: &GridField,
        forcing: Option<&GridField>,
    ) -> Result<(GridField, usize)> {
        self.check_cfl(v_r, v_3)?;
        let g = omega.grid();
        let adv = upwind_advection(v_r, v_3, omega);
        let src = stretching_source(h);
        let mut star = GridField::zeros(g, BcFamily::DirichletAll);
        for &n in g.active() {
            star.values[n] = omega.values[n] - self.dt * adv.values[n] + self.dt * src.values[n];
            if let Some(f) = forcing {
                star.values[n] += self.dt * f.values[n];
            }
        }
        self.implicit(&self.omega_op, star, BcFamily::DirichletAll)
    }

    /// Advances `state` by `dt` with the Picard sweep described in the module docs.
    pub fn advance(&self, state: &FlowState) -> Result<(FlowState, PicardReport)> {
        self.advance_forced(state, Forcing::default())
    }

    pub fn advance_forced(&self, state: &FlowState, forcing: Forcing<'_>) -> Result<(FlowState, PicardReport)> {
        let mut v_r = state.v_r.clone();
        let mut v_3 = state.v_3.clone();
        let mut report = PicardReport::default();
        let mut iters = 0;
        let mut h_new = state.h.clone();
        let mut omega_new = state.omega.clone();
        let mut stats = state.bs_stats;
        for _ in 0..self.opts.picard_max {
            let (h_k, ih) = self.step_h(&state.h, &v_r, &v_3, forcing.h)?;
            let (omega_k, io) = self.step_omega(&state.omega, &v_r, &v_3, &h_k, forcing.omega)?;
            let (vr_k, v3_k, s) = self.bs.solve(&omega_k, Some((&v_r, &v_3)))?;
            iters += ih + io + s.iterations();
            let diff = velocity_distance(&vr_k, &v3_k, &v_r, &v_3);
            let size = velocity_distance(&vr_k, &v3_k, &zeros_like(&vr_k), &zeros_like(&v3_k));
            if let Some(&prev) = report.increments.last() {
                report.factors.push(if prev > 0.0 { diff / prev } else { 0.0 });
            }
            report.increments.push(diff);
            report.iterations += 1;
            h_new = h_k;
            omega_new = omega_k;
            v_r = vr_k;
            v_3 = v3_k;
            stats = s;
            if diff <= self.opts.picard_tol * size {
                report.converged = true;
                break;
            }
        }
        let factor = report.factors.last().copied().unwrap_or(0.0);
        if !report.converged && factor > 1.0 {
            log::warn!(
                "Picard sweep at t = {:.6} did not contract (last factor {factor:.3})",
                state.t + self.dt
            );
        }
        let next = FlowState {
            t: state.t + self.dt,
            h: h_new,
            omega: omega_new,
            v_r,
            v_3,
            bs_stats: stats,
            picard_factor: factor,
            cg_iterations: iters,
        };
        Ok((next, report))
    }
}

fn zeros_like(f: &GridField) -> GridField {
    GridField::zeros(f.grid(), f.bc)
}

fn velocity_distance(a_r: &GridField, a_3: &GridField, b_r: &GridField, b_3: &GridField) -> f64 {
    let g = a_r.grid();
    field::weighted_sum(g, 0, |n| {
        (a_r.values[n] - b_r.values[n]).powi(2) + (a_3.values[n] - b_3.values[n]).powi(2)
    })
    .sqrt()
}

/// `(2 v_theta / r^2) d_z v_theta = 2 h d_z h` for `v_theta = r h`.
pub fn stretching_source(h: &GridField) -> GridField {
    let (_, hz) = grad(h);
    let g = h.grid();
    let mut out = GridField::zeros(g, BcFamily::None);
    for &n in g.active() {
        out.values[n] = 2.0 * h.values[n] * hz.values[n];
    }
    out
}

/// Automatic step: `min(0.25 delta, cfl delta / |b|_inf)`, shrunk so that it
/// divides `t_end` evenly. Returns `(dt, steps)`.
pub fn auto_dt(grid: &Grid, max_velocity: f64, cfl: f64, t_end: f64) -> (f64, usize) {
    let d = grid.delta_r;
    let cap = (0.25 * d).min(cfl * d / max_velocity.max(VELOCITY_FLOOR));
    if t_end <= 0.0 {
        return (cap, 0);
    }
    let steps = (t_end / cap).ceil().max(1.0) as usize;
    (t_end / steps as f64, steps)
}
