//! Conservative five-point operators on the masked lattice, a Jacobi-CG solver,
//! and the reduced Biot–Savart map `Omega -> (v_r, v_3)`.
//!
//! An operator acts as `(L u)_n = (1/M_n) sum_m K_nm (u_m - u_n) - c_n u_n`
//! with `M_n = rho(r_n) A_n`. It is symmetric in the `M`-weighted inner product,
//! and `-L` is positive definite whenever `c > 0` somewhere or a node is pinned.

use std::sync::Arc;

use crate::domain::{Dir, Grid};
use crate::error::{Error, Result};
use crate::field::{self, check_grids, dr_flux, dz_flux, grad, BcFamily, GridField};

/// Conductance rule for faces crossed by a radial flux.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RadialFace {
    /// `r` at the half node: the cylindrical Laplacian.
    Linear,
    /// Weight `r^3` with face value `2 r_i^2 r_(i+1)^2 / (r_i + r_(i+1))`; the
    /// discrete kernel then contains both `1` and `r^-2`.
    CubicHarmonic,
}

#[derive(Debug, Clone)]
pub struct EllipticOperator {
    grid: Arc<Grid>,
    pub bc: BcFamily,
    pub face: RadialFace,
    mass: Vec<f64>,
    k_east: Vec<f64>,
    k_north: Vec<f64>,
    c: Vec<f64>,
    pinned: Vec<bool>,
    unknowns: Vec<usize>,
}

impl EllipticOperator {
    pub fn assemble(
        grid: &Arc<Grid>,
        bc: BcFamily,
        face: RadialFace,
        c: impl Fn(f64, f64) -> f64,
    ) -> Self {
        let g = grid.as_ref();
        let len = g.len();
        let rho = |r: f64| match face {
            RadialFace::Linear => r,
            RadialFace::CubicHarmonic => r * r * r,
        };
        let kappa = |a: f64, b: f64| match face {
            RadialFace::Linear => 0.5 * (a + b),
            RadialFace::CubicHarmonic => 2.0 * a * a * b * b / (a + b),
        };
        let mut mass = vec![0.0; len];
        let mut k_east = vec![0.0; len];
        let mut k_north = vec![0.0; len];
        let mut cv = vec![0.0; len];
        let mut pinned = vec![false; len];
        let mut unknowns = Vec::with_capacity(g.active().len());
        for &n in g.active() {
            let (i, _) = g.coords(n);
            let r = g.r(n);
            mass[n] = rho(r) * g.cell_area(n);
            let ce = g.edge_cells(n, Dir::East) as f64;
            if ce > 0.0 {
                k_east[n] = kappa(r, g.r_column(i + 1)) * ce * 0.5;
            }
            let cn = g.edge_cells(n, Dir::North) as f64;
            if cn > 0.0 {
                k_north[n] = rho(r) * cn * 0.5;
            }
            cv[n] = c(r, g.z(n));
            pinned[n] = bc.is_dirichlet(g.tag(n));
            if !pinned[n] {
                unknowns.push(n);
            }
        }
        EllipticOperator { grid: grid.clone(), bc, face, mass, k_east, k_north, c: cv, pinned, unknowns }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    /// Adds `s` to the zeroth-order coefficient (e.g. `1/dt` for implicit steps).
    pub fn with_shift(mut self, s: f64) -> Self {
        for &n in self.grid.active() {
            self.c[n] += s;
        }
        self
    }

    /// Additionally pins every active node where `pin` holds.
    pub fn with_pinned(mut self, pin: impl Fn(usize) -> bool) -> Self {
        for &n in self.grid.active() {
            if pin(n) {
                self.pinned[n] = true;
            }
        }
        let pinned = &self.pinned;
        self.unknowns.retain(|&n| !pinned[n]);
        self
    }

    pub fn unknown_count(&self) -> usize {
        self.unknowns.len()
    }

    pub fn is_pinned(&self, n: usize) -> bool {
        self.pinned[n]
    }

    /// Weight of node `n` in the operator's inner product.
    pub fn mass(&self, n: usize) -> f64 {
        self.mass[n]
    }

    #[inline]
    fn flux_sum(&self, u: &[f64], n: usize) -> f64 {
        let nz = self.grid.nz;
        let mut s = 0.0;
        let ke = self.k_east[n];
        if ke != 0.0 {
            s += ke * (u[n + nz] - u[n]);
        }
        if n >= nz {
            let kw = self.k_east[n - nz];
            if kw != 0.0 {
                s += kw * (u[n - nz] - u[n]);
            }
        }
        let kn = self.k_north[n];
        if kn != 0.0 {
            s += kn * (u[n + 1] - u[n]);
        }
        if n >= 1 {
            let ks = self.k_north[n - 1];
            if ks != 0.0 {
                s += ks * (u[n - 1] - u[n]);
            }
        }
        s
    }

    fn diag_conductance(&self, n: usize) -> f64 {
        let nz = self.grid.nz;
        let mut s = self.k_east[n] + self.k_north[n];
        if n >= nz {
            s += self.k_east[n - nz];
        }
        if n >= 1 {
            s += self.k_north[n - 1];
        }
        s
    }

    /// `L u` on free nodes; pinned and exterior rows are 0.
    pub fn apply_values(&self, u: &[f64], out: &mut [f64]) {
        for v in out.iter_mut() {
            *v = 0.0;
        }
        for &n in &self.unknowns {
            out[n] = self.flux_sum(u, n) / self.mass[n] - self.c[n] * u[n];
        }
    }

    pub fn apply(&self, u: &GridField) -> Result<GridField> {
        if !field::same_grid(&self.grid, u.grid()) {
            return Err(Error::Usage("operator and field live on different grids".into()));
        }
        let mut out = GridField::zeros(&self.grid, BcFamily::None);
        self.apply_values(&u.values, &mut out.values);
        Ok(out)
    }

    /// `<u, v>_M` over free nodes.
    pub fn inner(&self, u: &[f64], v: &[f64]) -> f64 {
        block_sum(self.unknowns.iter().map(|&n| self.mass[n] * u[n] * v[n]))
    }
}

/// Deterministic sum: fixed blocks of 1024 summed in order, then a pairwise
/// tree over block sums.
fn block_sum(it: impl Iterator<Item = f64>) -> f64 {
    let mut blocks = Vec::new();
    let mut acc = 0.0;
    let mut count = 0;
    for x in it {
        acc += x;
        count += 1;
        if count == 1024 {
            blocks.push(acc);
            acc = 0.0;
            count = 0;
        }
    }
    blocks.push(acc);
    field::pairwise_sum(&blocks)
}

/// `(Delta - 1/r^2)` with zero values on V walls and natural Neumann on H.
pub fn assemble_vr_problem(grid: &Arc<Grid>) -> EllipticOperator {
    EllipticOperator::assemble(grid, BcFamily::MixedVr, RadialFace::Linear, |r, _| 1.0 / (r * r))
}

/// `Delta` with zero values on H walls and natural Neumann on V.
pub fn assemble_v3_problem(grid: &Arc<Grid>) -> EllipticOperator {
    EllipticOperator::assemble(grid, BcFamily::MixedV3, RadialFace::Linear, |_, _| 0.0)
}

/// `Delta + (2/r) d_r = r^-3 d_r (r^3 d_r) + d_z^2` under the given family.
pub fn assemble_swirl_diffusion(grid: &Arc<Grid>, bc: BcFamily) -> EllipticOperator {
    EllipticOperator::assemble(grid, bc, RadialFace::CubicHarmonic, |_, _| 0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SolveStats {
    pub iterations: usize,
    /// `||L x - b||_M / ||b||_M` at exit.
    pub residual: f64,
}

pub fn default_max_iterations(unknowns: usize) -> usize {
    (20.0 * (unknowns as f64).sqrt()).ceil() as usize
}

/// Solves `L x = rhs` for the free nodes; pinned nodes of `x` are 0.
pub fn solve(op: &EllipticOperator, rhs: &GridField, tol: f64) -> Result<(GridField, SolveStats)> {
    solve_from(op, rhs, tol, None)
}

pub fn solve_from(
    op: &EllipticOperator,
    rhs: &GridField,
    tol: f64,
    guess: Option<&GridField>,
) -> Result<(GridField, SolveStats)> {
    cg(op, rhs, tol, guess, default_max_iterations(op.unknown_count()), |_, _, _| {})
}

/// Jacobi-preconditioned CG on `-L` in the `M` inner product. `observe` sees
/// `(iteration, iterate, relative residual)` after every update.
pub fn cg(
    op: &EllipticOperator,
    rhs: &GridField,
    tol: f64,
    guess: Option<&GridField>,
    max_iter: usize,
    observe: impl FnMut(usize, &[f64], f64),
) -> Result<(GridField, SolveStats)> {
    cg_projected(op, rhs, tol, guess, max_iter, |_| {}, observe)
}

/// CG restricted to the range of an `M`-orthogonal projector `project`; the
/// rhs, guess, residuals and search directions are all projected.
pub(crate) fn cg_projected(
    op: &EllipticOperator,
    rhs: &GridField,
    tol: f64,
    guess: Option<&GridField>,
    max_iter: usize,
    project: impl Fn(&mut [f64]),
    mut observe: impl FnMut(usize, &[f64], f64),
) -> Result<(GridField, SolveStats)> {
    if !(tol > 0.0 && tol <= 1e-4) {
        return Err(Error::Usage(format!("solver tolerance {tol} outside (0, 1e-4]")));
    }
    if !field::same_grid(&op.grid, rhs.grid()) {
        return Err(Error::Usage("operator and right-hand side live on different grids".into()));
    }
    let len = op.grid.len();
    let bc = op.bc;
    // B = -L, b = -rhs
    let mut b = vec![0.0; len];
    for &n in &op.unknowns {
        b[n] = -rhs.values[n];
    }
    project(&mut b);
    let bnorm = op.inner(&b, &b).sqrt();
    let mut x = vec![0.0; len];
    if let Some(g) = guess {
        if !field::same_grid(&op.grid, g.grid()) {
            return Err(Error::Usage("initial guess lives on a different grid".into()));
        }
        for &n in &op.unknowns {
            x[n] = g.values[n];
        }
        project(&mut x);
    }
    if bnorm == 0.0 {
        let out = GridField::zeros(&op.grid, bc);
        return Ok((out, SolveStats { iterations: 0, residual: 0.0 }));
    }
    let inv_diag: Vec<f64> = {
        let mut d = vec![0.0; len];
        for &n in &op.unknowns {
            let a = op.diag_conductance(n) / op.mass[n] + op.c[n];
            d[n] = if a > 0.0 { 1.0 / a } else { 1.0 };
        }
        d
    };

    let mut ax = vec![0.0; len];
    op.apply_values(&x, &mut ax);
    let mut r = vec![0.0; len];
    for &n in &op.unknowns {
        // r = b - B x = b + L x
        r[n] = b[n] + ax[n];
    }
    project(&mut r);
    let mut rnorm = op.inner(&r, &r).sqrt();
    if rnorm <= tol * bnorm {
        let out = GridField::from_values(&op.grid, bc, x)?;
        return Ok((out, SolveStats { iterations: 0, residual: rnorm / bnorm }));
    }
    let mut z = vec![0.0; len];
    for &n in &op.unknowns {
        z[n] = inv_diag[n] * r[n];
    }
    project(&mut z);
    let mut p = z.clone();
    let mut rz = op.inner(&r, &z);
    let mut bp = vec![0.0; len];
    for it in 1..=max_iter {
        op.apply_values(&p, &mut bp);
        for &n in &op.unknowns {
            bp[n] = -bp[n];
        }
        project(&mut bp);
        let pbp = op.inner(&p, &bp);
        if !(pbp > 0.0) {
            return Err(Error::Numeric(format!(
                "operator not positive definite (p.Bp = {pbp:.3e}) at iteration {it}"
            )));
        }
        let alpha = rz / pbp;
        for &n in &op.unknowns {
            x[n] += alpha * p[n];
            r[n] -= alpha * bp[n];
        }
        rnorm = op.inner(&r, &r).sqrt();
        observe(it, &x, rnorm / bnorm);
        if rnorm <= tol * bnorm {
            let out = GridField::from_values(&op.grid, bc, x)?;
            return Ok((out, SolveStats { iterations: it, residual: rnorm / bnorm }));
        }
        for &n in &op.unknowns {
            z[n] = inv_diag[n] * r[n];
        }
        project(&mut z);
        let rz_new = op.inner(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for &n in &op.unknowns {
            p[n] = z[n] + beta * p[n];
        }
    }
    Err(Error::Solver { iterations: max_iter, residual: rnorm / bnorm })
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BiotSavartStats {
    pub vr_iterations: usize,
    pub v3_iterations: usize,
    /// `||div b||_2 / ||grad b||_2`.
    pub div_residual: f64,
    /// Largest trapezoidal `|int v_r dz|` over grid columns.
    pub line_integral_max: f64,
}

impl BiotSavartStats {
    pub fn iterations(&self) -> usize {
        self.vr_iterations + self.v3_iterations
    }
}

/// Both velocity operators assembled once for repeated use on a grid.
#[derive(Debug, Clone)]
pub struct BiotSavartSolver {
    pub vr_op: EllipticOperator,
    pub v3_op: EllipticOperator,
    pub tol: f64,
}

impl BiotSavartSolver {
    pub fn new(grid: &Arc<Grid>, tol: f64) -> Self {
        BiotSavartSolver { vr_op: assemble_vr_problem(grid), v3_op: assemble_v3_problem(grid), tol }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        self.vr_op.grid()
    }

    /// `(v_r, v_3)` from `Omega`, optionally warm-started from a previous pair.
    pub fn solve(
        &self,
        omega: &GridField,
        guess: Option<(&GridField, &GridField)>,
    ) -> Result<(GridField, GridField, BiotSavartStats)> {
        if omega.bc != BcFamily::DirichletAll {
            return Err(Error::Usage("Omega must carry the dirichlet-all family".into()));
        }
        let (rhs_r, rhs_3) = biot_savart_rhs(omega)?;
        let (v_r, sr) = solve_from(&self.vr_op, &rhs_r, self.tol, guess.map(|g| g.0))?;
        let (v_3, s3) = solve_from(&self.v3_op, &rhs_3, self.tol, guess.map(|g| g.1))?;
        let stats = BiotSavartStats {
            vr_iterations: sr.iterations,
            v3_iterations: s3.iterations,
            div_residual: relative_divergence(&v_r, &v_3)?,
            line_integral_max: line_integral_max(&v_r),
        };
        Ok((v_r, v_3, stats))
    }
}

/// Right-hand sides `d_z(r Omega)` and `-(1/r) d_r(r^2 Omega)`.
pub fn biot_savart_rhs(omega: &GridField) -> Result<(GridField, GridField)> {
    let g = omega.grid();
    let r_omega = omega.map_rz(|r, _, w| r * w);
    let r2_omega = omega.map_rz(|r, _, w| r * r * w);
    let rhs_r = dz_flux(&r_omega);
    let mut rhs_3 = dr_flux(&r2_omega);
    for &n in g.active() {
        rhs_3.values[n] *= -1.0 / g.r(n);
    }
    Ok((rhs_r, rhs_3))
}

pub fn biot_savart(omega: &GridField, grid: &Arc<Grid>) -> Result<(GridField, GridField, BiotSavartStats)> {
    if !field::same_grid(grid, omega.grid()) {
        return Err(Error::Usage("Omega lives on a different grid".into()));
    }
    BiotSavartSolver::new(grid, 1e-10).solve(omega, None)
}

/// `int (|grad v_r|^2 + v_r^2/r^2 + |grad v_3|^2) dx`.
pub fn grad_b_squared(v_r: &GridField, v_3: &GridField) -> Result<f64> {
    check_grids(v_r, v_3)?;
    let g = v_r.grid();
    let (a, b) = grad(v_r);
    let (c, d) = grad(v_3);
    Ok(field::weighted_sum(g, 0, |n| {
        let r = g.r(n);
        a.values[n].powi(2)
            + b.values[n].powi(2)
            + (v_r.values[n] / r).powi(2)
            + c.values[n].powi(2)
            + d.values[n].powi(2)
    }))
}

pub fn relative_divergence(v_r: &GridField, v_3: &GridField) -> Result<f64> {
    let div = field::divergence_b(v_r, v_3)?;
    let num = field::lp_norm(&div, 2.0, 0)?;
    let den = grad_b_squared(v_r, v_3)?.sqrt();
    Ok(if den > 0.0 { num / den } else { num })
}

/// Per-column trapezoidal `int v_r dz`, indexed by column.
pub fn column_integrals(v_r: &GridField) -> Vec<f64> {
    let g = v_r.grid();
    (0..g.nr)
        .map(|i| {
            let top = g.column_top(i);
            let col = &v_r.values[g.index(i, 0)..=g.index(i, top)];
            let s: f64 = col.iter().sum::<f64>() - 0.5 * (col[0] + col[top]);
            s * g.delta_z
        })
        .collect()
}

pub fn line_integral_max(v_r: &GridField) -> f64 {
    column_integrals(v_r).iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{build_domain, generate_grid, NodeTag};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(m: usize, p: u32) -> Arc<Grid> {
        Arc::new(generate_grid(&build_domain(m, 1.1).unwrap(), p).unwrap())
    }

    fn random_field(g: &Arc<Grid>, bc: BcFamily, seed: u64) -> GridField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut f = GridField::zeros(g, bc);
        for &n in g.active() {
            f.values[n] = rng.gen_range(-1.0..1.0);
        }
        f.enforce_bc();
        f
    }

    #[test]
    fn vr_operator_on_r_squared() {
        let g = grid(2, 3);
        let op = assemble_vr_problem(&g);
        let out = op.apply(&GridField::from_fn(&g, BcFamily::None, |r, _| r * r)).unwrap();
        for &n in g.active() {
            if g.tag(n) == NodeTag::Interior {
                assert!((out.values[n] - 3.0).abs() < 1e-10);
            }
        }
        let zero = op.apply(&GridField::zeros(&g, BcFamily::None)).unwrap();
        assert!(zero.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn v3_operator_on_parabola() {
        let g = grid(1, 3);
        let op = assemble_v3_problem(&g);
        let out = op.apply(&GridField::from_fn(&g, BcFamily::None, |_, z| z * (1.0 - z))).unwrap();
        for &n in g.active() {
            if g.tag(n) == NodeTag::Interior {
                assert!((out.values[n] + 2.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn swirl_operator_kernel() {
        let g = grid(3, 2);
        let op = assemble_swirl_diffusion(&g, BcFamily::NeumannAll);
        let one = op.apply(&GridField::from_fn(&g, BcFamily::None, |_, _| 1.0)).unwrap();
        let inv = op.apply(&GridField::from_fn(&g, BcFamily::None, |r, _| 1.0 / (r * r))).unwrap();
        for &n in g.active() {
            assert!(one.values[n].abs() < 1e-12);
            if g.tag(n) == NodeTag::Interior {
                assert!(inv.values[n].abs() < 1e-9);
            }
        }
    }

    #[test]
    fn operators_are_self_adjoint() {
        let g = grid(3, 2);
        for op in [
            assemble_vr_problem(&g),
            assemble_v3_problem(&g),
            assemble_swirl_diffusion(&g, BcFamily::NeumannAll),
            assemble_swirl_diffusion(&g, BcFamily::DirichletAll),
        ] {
            let f = random_field(&g, op.bc, 1);
            let h = random_field(&g, op.bc, 2);
            let lf = op.apply(&f).unwrap();
            let lh = op.apply(&h).unwrap();
            let a = op.inner(&lf.values, &h.values);
            let b = op.inner(&f.values, &lh.values);
            assert!((a - b).abs() <= 1e-10 * a.abs().max(b.abs()));
        }
    }

    #[test]
    fn solve_recovers_known_solution() {
        let g = grid(2, 3);
        let op = assemble_vr_problem(&g);
        let y = random_field(&g, BcFamily::MixedVr, 7);
        let rhs = op.apply(&y).unwrap();
        let (x, stats) = solve(&op, &rhs, 1e-12).unwrap();
        assert!(stats.residual <= 1e-12);
        let err = x.zip(&y, |a, b| a - b).unwrap();
        // conditioning ~ N, so allow a few orders of magnitude above tol
        assert!(err.max_abs() < 1e-8);

        let (z, s0) = solve(&op, &GridField::zeros(&g, BcFamily::None), 1e-10).unwrap();
        assert_eq!(s0.iterations, 0);
        assert!(z.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cg_energy_error_is_monotone() {
        let g = grid(2, 3);
        let op = assemble_v3_problem(&g);
        let rhs = random_field(&g, BcFamily::MixedV3, 3);
        let (exact, _) = solve(&op, &rhs, 1e-14).unwrap();
        let mut errors = Vec::new();
        let mut tmp = vec![0.0; g.len()];
        let _ = cg(&op, &rhs, 1e-10, None, 10_000, |_, x, _| {
            let e: Vec<f64> = x.iter().zip(&exact.values).map(|(a, b)| a - b).collect();
            op.apply_values(&e, &mut tmp);
            errors.push(-op.inner(&e, &tmp));
        })
        .unwrap();
        for w in errors.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-9) + 1e-28);
        }
    }

    #[test]
    fn non_convergence_is_reported() {
        let g = grid(2, 3);
        let op = assemble_v3_problem(&g);
        let rhs = random_field(&g, BcFamily::MixedV3, 4);
        match cg(&op, &rhs, 1e-10, None, 3, |_, _, _| {}) {
            Err(Error::Solver { iterations, residual }) => {
                assert_eq!(iterations, 3);
                assert!(residual > 1e-10);
            }
            other => panic!("expected solver error, got {other:?}"),
        }
        assert!(matches!(solve(&op, &rhs, 1e-3), Err(Error::Usage(_))));
    }

    #[test]
    fn zero_vorticity_gives_zero_velocity() {
        let g = grid(2, 3);
        let omega = GridField::zeros(&g, BcFamily::DirichletAll);
        let (vr, v3, stats) = biot_savart(&omega, &g).unwrap();
        assert_eq!(vr.max_abs(), 0.0);
        assert_eq!(v3.max_abs(), 0.0);
        assert_eq!(stats.line_integral_max, 0.0);
    }

    #[test]
    fn odd_vorticity_gives_parity() {
        let g = grid(1, 3);
        let omega = GridField::from_fn(&g, BcFamily::DirichletAll, |r, z| {
            (std::f64::consts::PI * 2.0 * (r - 0.5)).sin() * (2.0 * std::f64::consts::PI * z).sin()
        });
        let mut omega = omega;
        omega.enforce_bc();
        let solver = BiotSavartSolver { tol: 1e-13, ..BiotSavartSolver::new(&g, 1e-13) };
        let (vr, v3, _) = solver.solve(&omega, None).unwrap();
        let scale_r = vr.max_abs();
        let scale_3 = v3.max_abs();
        for &n in g.active() {
            let (i, k) = g.coords(n);
            let m = g.index(i, g.nz - 1 - k);
            assert!((vr.values[n] - vr.values[m]).abs() <= 1e-11 * scale_r);
            assert!((v3.values[n] + v3.values[m]).abs() <= 1e-11 * scale_3);
        }
    }
}
