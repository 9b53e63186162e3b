//! Lower-bound estimates of the geometric constants of the a priori theory:
//! the slab Poincaré constant, the `L^6` Sobolev constant `s0` and the
//! weighted `L^(13/5)` constant `C_s`.
//!
//! The two-dimensional quotients are maximised by the nonlinear power method
//! `f <- E^-1(|f|^(q-2) f)`, normalised in the energy form `E`. Each sweep is
//! an ascent step for the quotient, and a fixed point is a critical point.
//! The discrete energy is the Dirichlet form of the matching elliptic
//! operator, and the `L^q` norms use the field quadrature with weight `r`.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{Grid, StaircaseDomain};
use crate::elliptic::{cg_projected, default_max_iterations, EllipticOperator, RadialFace};
use crate::error::{Error, Result};
use crate::field::{self, BcFamily, GridField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstantName {
    PoincareSlab,
    SobolevS0,
    WeightedSobolevCs,
}

impl fmt::Display for ConstantName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ConstantName::PoincareSlab => "poincare_slab",
            ConstantName::SobolevS0 => "sobolev_s0",
            ConstantName::WeightedSobolevCs => "weighted_sobolev_Cs",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoincareVariant {
    /// `f(0) = f(h) = 0`.
    Dirichlet,
    /// `int f = 0`.
    ZeroMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SobolevConstraint {
    ZeroOnH,
    ZeroColumnMean,
}

impl fmt::Display for SobolevConstraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SobolevConstraint::ZeroOnH => "zero_on_H",
            SobolevConstraint::ZeroColumnMean => "zero_column_mean",
        })
    }
}

impl std::str::FromStr for SobolevConstraint {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero_on_H" | "zero-on-h" | "zero_on_h" => Ok(SobolevConstraint::ZeroOnH),
            "zero_column_mean" | "zero-column-mean" => Ok(SobolevConstraint::ZeroColumnMean),
            _ => Err(Error::Usage(format!("unknown constraint `{s}`"))),
        }
    }
}

/// Best quotient found; a lower bound for the true constant.
#[derive(Debug, Clone)]
pub struct ConstantEstimate {
    pub name: ConstantName,
    pub m: usize,
    pub beta: f64,
    pub refinement: u32,
    pub value: f64,
    pub maximizer: GridField,
    /// Power-method sweeps spent on the winning start.
    pub iterations: usize,
    pub start: usize,
    /// `||grad_E R||_E / R` at the maximizer.
    pub stationarity: f64,
}

#[derive(Debug, Clone)]
pub struct EstimatorOptions {
    pub starts: usize,
    pub seed: u64,
    /// Sweeps given to every start before ranking.
    pub screen_iterations: usize,
    /// How many of the best screened starts are driven to stationarity.
    pub refine: usize,
    pub max_iterations: usize,
    pub stationarity_tol: f64,
    pub solver_tol: f64,
    /// Restricts trial functions to the nodes where the mask is true.
    pub support: Option<Vec<bool>>,
}

impl Default for EstimatorOptions {
    fn default() -> Self {
        EstimatorOptions {
            starts: 20,
            seed: 0,
            screen_iterations: 12,
            refine: 3,
            max_iterations: 600,
            stationarity_tol: 1e-6,
            solver_tol: 1e-11,
            support: None,
        }
    }
}

// ---------- one-dimensional Poincaré ----------

/// Largest `||f||_2 / ||f'||_2` on `[0, h]` for the Dirichlet class, by inverse
/// power iteration on the `n`-interval three-point Laplacian. The discrete
/// answer is `(h/n) / (2 sin(pi/(2n)))`.
pub fn estimate_poincare(h: f64, n: usize) -> Result<f64> {
    estimate_poincare_with(h, n, PoincareVariant::Dirichlet)
}

pub fn estimate_poincare_with(h: f64, n: usize, variant: PoincareVariant) -> Result<f64> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Usage(format!("slab height must be positive, got {h}")));
    }
    if n < 16 {
        return Err(Error::Usage(format!("need at least 16 intervals, got {n}")));
    }
    let d = h / n as f64;
    match variant {
        PoincareVariant::Dirichlet => {
            // unknowns f_1..f_(n-1); A = tridiag(-1, 2, -1) / d^2
            let size = n - 1;
            let norm = |f: &[f64]| (d * f.iter().map(|x| x * x).sum::<f64>()).sqrt();
            let mut f: Vec<f64> = (0..size).map(|i| 1.0 + 0.1 * ((i * 7919) % 13) as f64).collect();
            let rq = |f: &[f64]| {
                let mut e = f[0] * f[0] + f[size - 1] * f[size - 1];
                for i in 1..size {
                    e += (f[i] - f[i - 1]).powi(2);
                }
                norm(f) / (e / d).sqrt()
            };
            inverse_power(&mut f, |b| thomas(size, d, b), norm, rq)
        }
        PoincareVariant::ZeroMean => {
            // nodes f_0..f_n with trapezoid weights; Neumann three-point operator
            let size = n + 1;
            let w = |i: usize| if i == 0 || i == n { 0.5 * d } else { d };
            let project = |f: &mut [f64]| {
                let mean = (0..size).map(|i| w(i) * f[i]).sum::<f64>() / h;
                f.iter_mut().for_each(|x| *x -= mean);
            };
            let norm = |f: &[f64]| (0..size).map(|i| w(i) * f[i] * f[i]).sum::<f64>().sqrt();
            let mut f: Vec<f64> = (0..size).map(|i| (i as f64 / n as f64) + 0.05 * ((i * 31) % 7) as f64).collect();
            project(&mut f);
            let rq = |f: &[f64]| {
                let e: f64 = (1..size).map(|i| (f[i] - f[i - 1]).powi(2)).sum::<f64>() / d;
                norm(f) / e.sqrt()
            };
            inverse_power(
                &mut f,
                |b| {
                    // (W^-1 K) y = b  <=>  K y = W b; pin y_0 = 0, the system is consistent
                    let rhs: Vec<f64> = (1..size).map(|i| w(i) * b[i] * d).collect();
                    let mut y = vec![0.0];
                    y.extend(thomas_neumann_tail(size - 1, &rhs));
                    project(&mut y);
                    y
                },
                norm,
                rq,
            )
        }
    }
}

fn inverse_power(
    f: &mut Vec<f64>,
    solve: impl Fn(&[f64]) -> Vec<f64>,
    norm: impl Fn(&[f64]) -> f64,
    rq: impl Fn(&[f64]) -> f64,
) -> Result<f64> {
    let mut prev = 0.0;
    for _ in 0..500 {
        let mut g = solve(f);
        let s = norm(&g);
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::Numeric("inverse iteration collapsed".into()));
        }
        g.iter_mut().for_each(|x| *x /= s);
        *f = g;
        let v = rq(f);
        if (v - prev).abs() <= 1e-15 * v {
            return Ok(v);
        }
        prev = v;
    }
    Err(Error::Numeric("inverse power iteration did not converge".into()))
}

/// Solves `tridiag(-1, 2, -1) y / d^2 = b` with Dirichlet ends.
fn thomas(size: usize, d: f64, b: &[f64]) -> Vec<f64> {
    let rhs: Vec<f64> = b.iter().map(|x| x * d * d).collect();
    let lower = vec![-1.0; size];
    let diag = vec![2.0; size];
    tridiagonal(&lower, &diag, &lower, &rhs)
}

/// Rows `1..=size` of the Neumann stiffness `K` (unit spacing scaled by the
/// caller) with `y_0 = 0` eliminated: `2` on the diagonal except `1` in the
/// last row.
fn thomas_neumann_tail(size: usize, rhs: &[f64]) -> Vec<f64> {
    let lower = vec![-1.0; size];
    let mut diag = vec![2.0; size];
    diag[size - 1] = 1.0;
    tridiagonal(&lower, &diag, &lower, rhs)
}

fn tridiagonal(a: &[f64], b: &[f64], c: &[f64], d: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut cp = vec![0.0; n];
    let mut dp = vec![0.0; n];
    cp[0] = c[0] / b[0];
    dp[0] = d[0] / b[0];
    for i in 1..n {
        let den = b[i] - a[i] * cp[i - 1];
        cp[i] = c[i] / den;
        dp[i] = (d[i] - a[i] * dp[i - 1]) / den;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = dp[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = dp[i] - cp[i] * x[i + 1];
    }
    x
}

// ---------- two-dimensional quotients ----------

/// Energy form, exponent and constraint for one quotient.
struct Quotient {
    name: ConstantName,
    op: EllipticOperator,
    q: f64,
    column_mean: bool,
    columns: Vec<Vec<usize>>,
}

impl Quotient {
    fn new(grid: &Arc<Grid>, name: ConstantName, constraint: Option<SobolevConstraint>, support: Option<&[bool]>) -> Result<Self> {
        let (bc, q, c): (BcFamily, f64, fn(f64, f64) -> f64) = match (name, constraint) {
            (ConstantName::SobolevS0, Some(SobolevConstraint::ZeroOnH)) => (BcFamily::MixedV3, 6.0, |_, _| 0.0),
            (ConstantName::SobolevS0, Some(SobolevConstraint::ZeroColumnMean)) => {
                (BcFamily::NeumannAll, 6.0, |_, _| 0.0)
            }
            (ConstantName::WeightedSobolevCs, None) => (BcFamily::NeumannAll, 13.0 / 5.0, |r, _| 1.0 / (r * r)),
            _ => return Err(Error::Usage(format!("no two-dimensional quotient for {name} with {constraint:?}"))),
        };
        let mut op = EllipticOperator::assemble(grid, bc, RadialFace::Linear, c);
        if let Some(mask) = support {
            if mask.len() != grid.len() {
                return Err(Error::Usage("support mask does not match the grid".into()));
            }
            op = op.with_pinned(|n| !mask[n]);
        }
        if op.unknown_count() == 0 {
            return Err(Error::Usage("support mask leaves no free nodes".into()));
        }
        let column_mean = constraint == Some(SobolevConstraint::ZeroColumnMean);
        let mut columns = Vec::new();
        if column_mean {
            for i in 0..grid.nr {
                let col: Vec<usize> = (0..=grid.column_top(i))
                    .map(|k| grid.index(i, k))
                    .filter(|&n| grid.is_active(n) && !op.is_pinned(n))
                    .collect();
                if !col.is_empty() {
                    columns.push(col);
                }
            }
        }
        Ok(Quotient { name, op, q, column_mean, columns })
    }

    fn grid(&self) -> &Arc<Grid> {
        self.op.grid()
    }

    /// `M`-orthogonal projection onto the admissible class.
    fn project(&self, f: &mut [f64]) {
        if self.column_mean {
            for col in &self.columns {
                let mass: f64 = col.iter().map(|&n| self.op.mass(n)).sum();
                let mean = col.iter().map(|&n| self.op.mass(n) * f[n]).sum::<f64>() / mass;
                for &n in col {
                    f[n] -= mean;
                }
            }
        }
    }

    fn admissible(&self, values: &[f64]) -> Vec<f64> {
        let g = self.grid();
        let mut f = vec![0.0; g.len()];
        for &n in g.active() {
            if !self.op.is_pinned(n) {
                f[n] = values[n];
            }
        }
        self.project(&mut f);
        f
    }

    fn energy(&self, f: &[f64], scratch: &mut [f64]) -> f64 {
        self.op.apply_values(f, scratch);
        -self.op.inner(f, scratch)
    }

    fn lq_power(&self, f: &[f64]) -> f64 {
        let g = self.grid();
        field::weighted_sum(g, 0, |n| f[n].abs().powf(self.q))
    }

    /// `||f||_q / ||f||_E` for s0, `||f||_q^2 / ||f||_E^2` for `C_s`.
    fn value_of(&self, lq: f64, energy: f64) -> f64 {
        match self.name {
            ConstantName::SobolevS0 => lq.powf(1.0 / self.q) / energy.sqrt(),
            _ => lq.powf(2.0 / self.q) / energy,
        }
    }

    fn gradient_factor(&self) -> f64 {
        match self.name {
            ConstantName::SobolevS0 => 1.0,
            _ => 2.0,
        }
    }

    fn evaluate(&self, values: &[f64]) -> Result<f64> {
        let f = self.admissible(values);
        let mut scratch = vec![0.0; f.len()];
        let e = self.energy(&f, &mut scratch);
        if !(e > 0.0 && e.is_finite()) {
            return Err(Error::Numeric("trial function has no energy in the admissible class".into()));
        }
        Ok(self.value_of(self.lq_power(&f), e))
    }
}

/// State of one start of the power method.
struct Chain {
    f: Vec<f64>,
    value: f64,
    stationarity: f64,
    iterations: usize,
}

impl Chain {
    fn start(problem: &Quotient, seed_values: Vec<f64>) -> Option<Chain> {
        let mut f = problem.admissible(&seed_values);
        let mut scratch = vec![0.0; f.len()];
        let e = problem.energy(&f, &mut scratch);
        if !(e > 0.0 && e.is_finite()) {
            return None;
        }
        let s = e.sqrt();
        f.iter_mut().for_each(|x| *x /= s);
        let value = problem.value_of(problem.lq_power(&f), 1.0);
        Some(Chain { f, value, stationarity: f64::INFINITY, iterations: 0 })
    }

    /// One sweep; `f` stays normalised to unit energy.
    fn sweep(&mut self, p: &Quotient, tol: f64) -> Result<()> {
        let grid = p.grid().clone();
        let q = p.q;
        let mut rhs = GridField::zeros(&grid, BcFamily::None);
        for &n in grid.active() {
            let x = self.f[n];
            rhs.values[n] = -x.abs().powf(q - 2.0) * x;
        }
        let nq = p.lq_power(&self.f);
        let guess = GridField::from_values(&grid, BcFamily::None, self.f.iter().map(|x| x * nq).collect())?;
        let max_iter = 4 * default_max_iterations(p.op.unknown_count());
        let (g, _) = cg_projected(&p.op, &rhs, tol, Some(&guess), max_iter, |v| p.project(v), |_, _, _| {})?;
        let mut g = g.values;
        for n in 0..g.len() {
            if p.op.is_pinned(n) || !grid.is_active(n) {
                g[n] = 0.0;
            }
        }
        let mut scratch = vec![0.0; g.len()];
        let d: Vec<f64> = g.iter().zip(&self.f).map(|(gi, fi)| gi / nq - fi).collect();
        self.stationarity = p.gradient_factor() * p.energy(&d, &mut scratch).max(0.0).sqrt();
        let eg = p.energy(&g, &mut scratch);
        if !(eg > 0.0 && eg.is_finite()) {
            return Err(Error::Numeric("power iterate lost all energy".into()));
        }
        let s = eg.sqrt();
        g.iter_mut().for_each(|x| *x /= s);
        self.f = g;
        self.value = p.value_of(p.lq_power(&self.f), 1.0);
        self.iterations += 1;
        if !self.value.is_finite() {
            return Err(Error::Numeric("quotient is not finite".into()));
        }
        Ok(())
    }

    fn run(&mut self, p: &Quotient, budget: usize, opts: &EstimatorOptions) -> Result<()> {
        for _ in 0..budget {
            if self.stationarity <= opts.stationarity_tol {
                break;
            }
            self.sweep(p, opts.solver_tol)?;
        }
        Ok(())
    }
}

/// Axis-aligned box `(r_lo, r_hi, z_lo, z_hi)` carrying start `start`: a
/// rectangle of the staircase, or the bounding box of the support mask.
fn start_box(domain: &StaircaseDomain, grid: &Grid, start: usize, support: Option<&[bool]>) -> (f64, f64, f64, f64) {
    if let Some(mask) = support {
        let mut b = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for &n in grid.active().iter().filter(|&&n| mask[n]) {
            let (r, z) = (grid.r(n), grid.z(n));
            b = (b.0.min(r), b.1.max(r), b.2.min(z), b.3.max(z));
        }
        return b;
    }
    let j = start % domain.rects.len();
    let rect = &domain.rects[j];
    let height = grid.snapped_heights.get(j).copied().unwrap_or(rect.height).min(rect.height);
    (rect.r_lo, rect.r_hi, 0.0, height)
}

/// Smooth random start: a sine series with decaying random coefficients on
/// the start's box, zero elsewhere.
fn fourier_bump(grid: &Grid, bx: (f64, f64, f64, f64), start: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(start as u64);
    const MODES: usize = 4;
    let mut coef = [[0.0; MODES]; MODES];
    for (a, row) in coef.iter_mut().enumerate() {
        for (b, c) in row.iter_mut().enumerate() {
            *c = rng.gen_range(-1.0..1.0) / ((a + 1) * (b + 1)) as f64;
        }
    }
    let pi = std::f64::consts::PI;
    let (r0, r1, z0, z1) = bx;
    let mut f = vec![0.0; grid.len()];
    if !(r1 > r0 && z1 > z0) {
        return f;
    }
    for &n in grid.active() {
        let x = (grid.r(n) - r0) / (r1 - r0);
        let y = (grid.z(n) - z0) / (z1 - z0);
        if !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&y) {
            continue;
        }
        let mut v = 0.0;
        for (a, row) in coef.iter().enumerate() {
            let sx = ((a + 1) as f64 * pi * x).sin();
            for (b, c) in row.iter().enumerate() {
                v += c * sx * ((b + 1) as f64 * pi * y).sin();
            }
        }
        f[n] = v;
    }
    f
}

fn maximize(
    domain: &StaircaseDomain,
    grid: &Arc<Grid>,
    name: ConstantName,
    constraint: Option<SobolevConstraint>,
    opts: &EstimatorOptions,
) -> Result<ConstantEstimate> {
    if opts.starts == 0 {
        return Err(Error::Usage("at least one start is required".into()));
    }
    let problem = Quotient::new(grid, name, constraint, opts.support.as_deref())?;
    let screened: Vec<(usize, Option<Chain>)> = (0..opts.starts)
        .into_par_iter()
        .map(|s| {
            let bx = start_box(domain, grid, s, opts.support.as_deref());
            let chain = Chain::start(&problem, fourier_bump(grid, bx, s, opts.seed)).and_then(|mut c| {
                c.run(&problem, opts.screen_iterations, opts).ok().map(|_| c)
            });
            (s, chain)
        })
        .collect();
    let mut ranked: Vec<(usize, Chain)> = screened.into_iter().filter_map(|(s, c)| c.map(|c| (s, c))).collect();
    if ranked.is_empty() {
        return Err(Error::Numeric(format!("every start of the {name} estimator failed")));
    }
    // stable sort keeps the lowest index first among equal values
    ranked.sort_by(|a, b| b.1.value.total_cmp(&a.1.value));
    ranked.truncate(opts.refine.max(1));
    let refined: Vec<(usize, Chain)> = ranked
        .into_par_iter()
        .filter_map(|(s, mut c)| {
            let left = opts.max_iterations.saturating_sub(c.iterations);
            c.run(&problem, left, opts).ok().map(|_| (s, c))
        })
        .collect();
    let (start, best) = refined
        .into_iter()
        .reduce(|a, b| if b.1.value > a.1.value || (b.1.value == a.1.value && b.0 < a.0) { b } else { a })
        .ok_or_else(|| Error::Numeric(format!("every refined start of the {name} estimator failed")))?;
    let maximizer = GridField::from_values(grid, problem.op.bc, best.f)?;
    Ok(ConstantEstimate {
        name,
        m: grid.m,
        beta: grid.beta,
        refinement: grid.refinement,
        value: best.value,
        maximizer,
        iterations: best.iterations,
        start,
        stationarity: best.stationarity,
    })
}

/// Lower bound for `s0` in `||f||_6 <= s0 ||grad f||_2` over the class.
pub fn estimate_sobolev_s0(
    domain: &StaircaseDomain,
    grid: &Arc<Grid>,
    constraint: SobolevConstraint,
    opts: &EstimatorOptions,
) -> Result<ConstantEstimate> {
    maximize(domain, grid, ConstantName::SobolevS0, Some(constraint), opts)
}

/// Lower bound for `C_s` in `||f||_(13/5)^2 <= C_s int(|grad f|^2 + f^2/r^2)`.
pub fn estimate_weighted_sobolev_cs(
    domain: &StaircaseDomain,
    grid: &Arc<Grid>,
    opts: &EstimatorOptions,
) -> Result<ConstantEstimate> {
    maximize(domain, grid, ConstantName::WeightedSobolevCs, None, opts)
}

/// `||Pf||_6 / ||grad Pf||_2` with `P` the projection onto the class.
pub fn sobolev_quotient(f: &GridField, constraint: SobolevConstraint) -> Result<f64> {
    Quotient::new(f.grid(), ConstantName::SobolevS0, Some(constraint), None)?.evaluate(&f.values)
}

/// `||f||_(13/5)^2 / int(|grad f|^2 + f^2/r^2)`.
pub fn weighted_sobolev_quotient(f: &GridField) -> Result<f64> {
    Quotient::new(f.grid(), ConstantName::WeightedSobolevCs, None, None)?.evaluate(&f.values)
}

/// Re-evaluates an estimate's quotient from its stored maximizer.
pub fn reevaluate(est: &ConstantEstimate, constraint: Option<SobolevConstraint>) -> Result<f64> {
    match est.name {
        ConstantName::SobolevS0 => {
            let c = constraint.ok_or_else(|| Error::Usage("s0 needs its constraint".into()))?;
            sobolev_quotient(&est.maximizer, c)
        }
        ConstantName::WeightedSobolevCs => weighted_sobolev_quotient(&est.maximizer),
        ConstantName::PoincareSlab => Err(Error::Usage("the slab constant has no stored field".into())),
    }
}
