//! Scalar fields on the masked lattice and the cylindrical calculus built on them.
//!
//! Integrals use the measure `r dr dz` (no `2 pi`). Node weights are the
//! trapezoidal dual-cell areas from [`Grid::cell_area`].

use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::domain::{Dir, Grid, NodeTag};
use crate::error::{Error, Result};

/// Boundary-condition family carried by a field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BcFamily {
    /// Homogeneous Neumann on every wall (`h`).
    NeumannAll,
    /// Zero on every wall (`Omega`).
    DirichletAll,
    /// `d_z = 0` on H, zero on V (`v_r`).
    MixedVr,
    /// Zero on H, `d_r = 0` on V (`v_3`).
    MixedV3,
    None,
}

impl BcFamily {
    /// Whether a node with this tag is pinned to zero. Corners are pinned as
    /// soon as one adjacent wall is.
    pub fn is_dirichlet(self, tag: NodeTag) -> bool {
        match self {
            BcFamily::DirichletAll => matches!(
                tag,
                NodeTag::BoundaryH | NodeTag::BoundaryV | NodeTag::Corner(_)
            ),
            BcFamily::MixedVr => tag.on_v(),
            BcFamily::MixedV3 => tag.on_h(),
            BcFamily::NeumannAll | BcFamily::None => false,
        }
    }

    /// Homogeneous Neumann in `r` across vertical walls.
    pub fn neumann_r(self) -> bool {
        matches!(self, BcFamily::NeumannAll | BcFamily::MixedV3)
    }

    /// Homogeneous Neumann in `z` across horizontal walls.
    pub fn neumann_z(self) -> bool {
        matches!(self, BcFamily::NeumannAll | BcFamily::MixedVr)
    }
}

/// Scalar values on the full lattice of a grid. Exterior entries are kept at 0.
#[derive(Debug, Clone)]
pub struct GridField {
    grid: Arc<Grid>,
    pub values: Vec<f64>,
    pub bc: BcFamily,
}

pub fn same_grid(a: &Arc<Grid>, b: &Arc<Grid>) -> bool {
    Arc::ptr_eq(a, b) || **a == **b
}

impl GridField {
    pub fn zeros(grid: &Arc<Grid>, bc: BcFamily) -> Self {
        GridField { grid: grid.clone(), values: vec![0.0; grid.len()], bc }
    }

    pub fn from_fn(grid: &Arc<Grid>, bc: BcFamily, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut out = Self::zeros(grid, bc);
        for &n in grid.active() {
            out.values[n] = f(grid.r(n), grid.z(n));
        }
        out
    }

    pub fn from_values(grid: &Arc<Grid>, bc: BcFamily, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Usage(format!(
                "expected {} values, got {}",
                grid.len(),
                values.len()
            )));
        }
        let mut out = GridField { grid: grid.clone(), values, bc };
        for (n, v) in out.values.iter_mut().enumerate() {
            if !grid.is_active(n) {
                *v = 0.0;
            }
        }
        Ok(out)
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn with_bc(mut self, bc: BcFamily) -> Self {
        self.bc = bc;
        self
    }

    /// Zeroes every node the field's family pins.
    pub fn enforce_bc(&mut self) {
        for &n in self.grid.active() {
            if self.bc.is_dirichlet(self.grid.tag(n)) {
                self.values[n] = 0.0;
            }
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        let mut out = Self::zeros(&self.grid, self.bc);
        for &n in self.grid.active() {
            out.values[n] = f(self.values[n]);
        }
        out
    }

    /// Pointwise `f(r, z, value)`.
    pub fn map_rz(&self, f: impl Fn(f64, f64, f64) -> f64) -> Self {
        let g = &self.grid;
        let mut out = Self::zeros(g, self.bc);
        for &n in g.active() {
            out.values[n] = f(g.r(n), g.z(n), self.values[n]);
        }
        out
    }

    pub fn zip(&self, other: &GridField, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        check_grids(self, other)?;
        let mut out = Self::zeros(&self.grid, BcFamily::None);
        for &n in self.grid.active() {
            out.values[n] = f(self.values[n], other.values[n]);
        }
        Ok(out)
    }

    pub fn max_abs(&self) -> f64 {
        self.grid.active().iter().fold(0.0f64, |m, &n| m.max(self.values[n].abs()))
    }

    pub fn max(&self) -> f64 {
        self.grid.active().iter().fold(f64::NEG_INFINITY, |m, &n| m.max(self.values[n]))
    }

    pub fn min(&self) -> f64 {
        self.grid.active().iter().fold(f64::INFINITY, |m, &n| m.min(self.values[n]))
    }

    pub fn is_finite(&self) -> bool {
        self.grid.active().iter().all(|&n| self.values[n].is_finite())
    }

    /// CSV dump with header `node,r,z,value`, active nodes only.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "node,r,z,value")?;
        for &n in self.grid.active() {
            writeln!(
                w,
                "{},{:.17e},{:.17e},{:.17e}",
                n,
                self.grid.r(n),
                self.grid.z(n),
                self.values[n]
            )?;
        }
        Ok(())
    }
}

pub(crate) fn check_grids(a: &GridField, b: &GridField) -> Result<()> {
    if same_grid(&a.grid, &b.grid) {
        Ok(())
    } else {
        Err(Error::Usage("fields live on different grids".into()))
    }
}

/// Pairwise (tree) summation in slice order.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 16 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// `sum_n term(n) r_n^(1+k) w_n` over active nodes in index order.
pub fn weighted_sum(grid: &Grid, k: i32, term: impl Fn(usize) -> f64) -> f64 {
    let terms: Vec<f64> = grid
        .active()
        .iter()
        .map(|&n| term(n) * grid.r(n).powi(1 + k) * grid.cell_area(n))
        .collect();
    pairwise_sum(&terms)
}

/// `int f r^k dx` with `dx = r dr dz`.
pub fn integrate(f: &GridField, k: i32) -> Result<f64> {
    if !(-4..=2).contains(&k) {
        return Err(Error::Usage(format!("weight power {k} outside [-4, 2]")));
    }
    Ok(weighted_sum(&f.grid, k, |n| f.values[n]))
}

/// `int f g r^k dx`.
pub fn integrate_product(f: &GridField, g: &GridField, k: i32) -> Result<f64> {
    check_grids(f, g)?;
    Ok(weighted_sum(&f.grid, k, |n| f.values[n] * g.values[n]))
}

/// `(int |f|^p r^k dx)^(1/p)`; `p = f64::INFINITY` gives the max over active nodes.
pub fn lp_norm(f: &GridField, p: f64, k: i32) -> Result<f64> {
    if p.is_infinite() && p > 0.0 {
        return Ok(f.max_abs());
    }
    if !(p >= 1.0) {
        return Err(Error::Usage(format!("norm exponent {p} must be >= 1")));
    }
    if !(-4..=2).contains(&k) {
        return Err(Error::Usage(format!("weight power {k} outside [-4, 2]")));
    }
    let s = if p == 2.0 {
        weighted_sum(&f.grid, k, |n| f.values[n] * f.values[n])
    } else {
        weighted_sum(&f.grid, k, |n| f.values[n].abs().powf(p))
    };
    Ok(s.powf(1.0 / p))
}

fn opposite(d: Dir) -> Dir {
    match d {
        Dir::East => Dir::West,
        Dir::West => Dir::East,
        Dir::North => Dir::South,
        Dir::South => Dir::North,
    }
}

/// Derivative at `n` along the axis `(plus, minus)` for the pointwise
/// gradient: centred where possible, reflection (zero) on Neumann walls,
/// otherwise second-order one-sided.
fn axis_derivative(grid: &Grid, v: &[f64], n: usize, plus: Dir, reflect: bool) -> f64 {
    let minus = opposite(plus);
    let d = grid.delta_r;
    match (grid.neighbor(n, plus), grid.neighbor(n, minus)) {
        (Some(p), Some(m)) => (v[p] - v[m]) / (2.0 * d),
        (None, None) => 0.0,
        _ if reflect => 0.0,
        (Some(p), None) => match grid.neighbor(p, plus) {
            Some(pp) => (-3.0 * v[n] + 4.0 * v[p] - v[pp]) / (2.0 * d),
            None => (v[p] - v[n]) / d,
        },
        (None, Some(m)) => match grid.neighbor(m, minus) {
            Some(mm) => (3.0 * v[n] - 4.0 * v[m] + v[mm]) / (2.0 * d),
            None => (v[n] - v[m]) / d,
        },
    }
}

/// `(d_r f, d_z f)`.
pub fn grad(f: &GridField) -> (GridField, GridField) {
    let g = &f.grid;
    let mut fr = GridField::zeros(g, BcFamily::None);
    let mut fz = GridField::zeros(g, BcFamily::None);
    for &n in g.active() {
        let tag = g.tag(n);
        fr.values[n] = axis_derivative(g, &f.values, n, Dir::East, f.bc.neumann_r() && tag.on_v());
        fz.values[n] = axis_derivative(g, &f.values, n, Dir::North, f.bc.neumann_z() && tag.on_h());
    }
    (fr, fz)
}

/// Conservative dual-cell derivative along one axis:
/// `[e (g_+ - g) + w (g - g_-)] / (q delta)` with `e`, `w` the active cells on
/// either side and `q = e + w`. Centred in the interior, one-sided at walls;
/// its weighted sum telescopes to boundary terms.
fn fv_derivative(grid: &Grid, v: &[f64], out: &mut [f64], plus: Dir) {
    let minus = opposite(plus);
    let d = grid.delta_r;
    for &n in grid.active() {
        let e = grid.edge_cells(n, plus) as f64;
        let w = grid.edge_cells(n, minus) as f64;
        let q = e + w;
        if q == 0.0 {
            out[n] = 0.0;
            continue;
        }
        let mut s = 0.0;
        if e > 0.0 {
            s += e * (v[grid.neighbor(n, plus).expect("edge cell implies neighbour")] - v[n]);
        }
        if w > 0.0 {
            s += w * (v[n] - v[grid.neighbor(n, minus).expect("edge cell implies neighbour")]);
        }
        out[n] = s / (q * d);
    }
}

pub fn dr_flux(f: &GridField) -> GridField {
    let mut out = GridField::zeros(&f.grid, BcFamily::None);
    fv_derivative(&f.grid, &f.values, &mut out.values, Dir::East);
    out
}

pub fn dz_flux(f: &GridField) -> GridField {
    let mut out = GridField::zeros(&f.grid, BcFamily::None);
    fv_derivative(&f.grid, &f.values, &mut out.values, Dir::North);
    out
}

/// Neighbour value along `dir`, or a ghost: mirror image on a Neumann wall,
/// quadratic extrapolation otherwise.
fn ghost(grid: &Grid, v: &[f64], n: usize, dir: Dir, reflect: bool) -> f64 {
    if let Some(m) = grid.neighbor(n, dir) {
        return v[m];
    }
    let back = opposite(dir);
    match grid.neighbor(n, back) {
        None => v[n],
        Some(b) if reflect => v[b],
        Some(b) => match grid.neighbor(b, back) {
            Some(bb) => 3.0 * v[n] - 3.0 * v[b] + v[bb],
            None => 2.0 * v[n] - v[b],
        },
    }
}

/// `(1/r) d_r (r d_r f) + d_z^2 f` in flux form with half-node radii.
pub fn laplacian_cyl(f: &GridField) -> GridField {
    let g = &f.grid;
    let d = g.delta_r;
    let mut out = GridField::zeros(g, BcFamily::None);
    for &n in g.active() {
        let tag = g.tag(n);
        let rr = f.bc.neumann_r() && tag.on_v();
        let rz = f.bc.neumann_z() && tag.on_h();
        let r = g.r(n);
        let (rp, rm) = (r + 0.5 * d, r - 0.5 * d);
        let u = f.values[n];
        let ue = ghost(g, &f.values, n, Dir::East, rr);
        let uw = ghost(g, &f.values, n, Dir::West, rr);
        let un = ghost(g, &f.values, n, Dir::North, rz);
        let us = ghost(g, &f.values, n, Dir::South, rz);
        out.values[n] = (rp * (ue - u) - rm * (u - uw)) / (r * d * d) + (un - 2.0 * u + us) / (d * d);
    }
    out
}

/// `(omega_r, omega_theta, omega_3) = (-d_z v_theta, d_z v_r - d_r v_3, d_r v_theta + v_theta / r)`.
pub fn vorticity_from_velocity(
    v_r: &GridField,
    v_theta: &GridField,
    v_3: &GridField,
) -> Result<(GridField, GridField, GridField)> {
    check_grids(v_r, v_theta)?;
    check_grids(v_r, v_3)?;
    let (_, vr_z) = grad(v_r);
    let (vt_r, vt_z) = grad(v_theta);
    let (v3_r, _) = grad(v_3);
    let omega_r = vt_z.map(|x| -x);
    let omega_theta = vr_z.zip(&v3_r, |a, b| a - b)?;
    let g = v_r.grid();
    let mut omega_3 = vt_r;
    for &n in g.active() {
        omega_3.values[n] += v_theta.values[n] / g.r(n);
    }
    Ok((omega_r, omega_theta, omega_3))
}

/// `(1/r) d_r (r v_r) + d_z v_3` with the conservative dual-cell derivative.
pub fn divergence_b(v_r: &GridField, v_3: &GridField) -> Result<GridField> {
    check_grids(v_r, v_3)?;
    let rv = v_r.map_rz(|r, _, v| r * v);
    let a = dr_flux(&rv);
    let b = dz_flux(v_3);
    let g = v_r.grid();
    let mut out = GridField::zeros(g, BcFamily::None);
    for &n in g.active() {
        out.values[n] = a.values[n] / g.r(n) + b.values[n];
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{build_domain, generate_grid};

    fn grid(m: usize, p: u32) -> Arc<Grid> {
        Arc::new(generate_grid(&build_domain(m, 1.1).unwrap(), p).unwrap())
    }

    fn interior(g: &Grid) -> impl Iterator<Item = usize> + '_ {
        g.active().iter().copied().filter(move |&n| g.tag(n) == NodeTag::Interior)
    }

    #[test]
    fn integrals_on_single_step() {
        let g = grid(1, 4);
        let one = GridField::from_fn(&g, BcFamily::None, |_, _| 1.0);
        assert!((integrate(&one, 0).unwrap() - 0.375).abs() < 1e-12);
        let z = GridField::from_fn(&g, BcFamily::None, |_, z| z);
        assert!((integrate(&z, 0).unwrap() - 3.0 / 16.0).abs() < 1e-12);
        // trapezoid on 1/r: error ~ delta^2 / 4
        let ln2 = integrate(&one, -2).unwrap();
        assert!((ln2 - std::f64::consts::LN_2).abs() < 3e-4);
        let g6 = grid(1, 6);
        let one6 = GridField::from_fn(&g6, BcFamily::None, |_, _| 1.0);
        assert!((integrate(&one6, -2).unwrap() - std::f64::consts::LN_2).abs() < 2e-5);
        assert!(matches!(integrate(&one, 3), Err(Error::Usage(_))));
    }

    #[test]
    fn norms_of_constants() {
        let g = grid(1, 3);
        let c = GridField::from_fn(&g, BcFamily::None, |_, _| -2.5);
        assert!((lp_norm(&c, 2.0, 0).unwrap() - 2.5 * 0.375f64.sqrt()).abs() < 1e-13);
        assert_eq!(lp_norm(&c, f64::INFINITY, 0).unwrap(), 2.5);
        let q = 13.0 / 5.0;
        assert!((lp_norm(&c, q, 0).unwrap() - 2.5 * 0.375f64.powf(1.0 / q)).abs() < 1e-13);
    }

    #[test]
    fn gradient_exactness() {
        let g = grid(2, 3);
        let f = GridField::from_fn(&g, BcFamily::None, |r, _| r);
        let (fr, fz) = grad(&f);
        let f2 = GridField::from_fn(&g, BcFamily::None, |_, z| z * z);
        let (gr, gz) = grad(&f2);
        for n in interior(&g) {
            assert!((fr.values[n] - 1.0).abs() < 1e-12);
            assert_eq!(fz.values[n], 0.0);
            assert_eq!(gr.values[n], 0.0);
            assert!((gz.values[n] - 2.0 * g.z(n)).abs() < 1e-12);
        }
    }

    #[test]
    fn laplacian_exactness() {
        let g = grid(2, 3);
        let r2 = laplacian_cyl(&GridField::from_fn(&g, BcFamily::None, |r, _| r * r));
        let z2 = laplacian_cyl(&GridField::from_fn(&g, BcFamily::None, |_, z| z * z));
        let d = g.delta_r;
        let lnr = laplacian_cyl(&GridField::from_fn(&g, BcFamily::None, |r, _| r.ln()));
        for n in interior(&g) {
            assert!((r2.values[n] - 4.0).abs() < 1e-10);
            assert!((z2.values[n] - 2.0).abs() < 1e-10);
            // O(delta^2 / r^4) truncation
            let r = g.r(n);
            assert!(lnr.values[n].abs() < d * d / r.powi(4));
        }
    }

    #[test]
    fn rigid_rotation_vorticity() {
        let g = grid(1, 3);
        let zero = GridField::zeros(&g, BcFamily::None);
        let vt = GridField::from_fn(&g, BcFamily::None, |r, _| r);
        let (wr, wt, w3) = vorticity_from_velocity(&zero, &vt, &zero).unwrap();
        for &n in g.active() {
            assert_eq!(wr.values[n], 0.0);
            assert_eq!(wt.values[n], 0.0);
            assert!((w3.values[n] - 2.0).abs() < 1e-12);
        }
        let vr = GridField::from_fn(&g, BcFamily::None, |_, z| z);
        let (_, wt, _) = vorticity_from_velocity(&vr, &zero, &zero).unwrap();
        for &n in g.active() {
            assert!((wt.values[n] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn divergence_examples() {
        let g = grid(2, 3);
        let vr = GridField::from_fn(&g, BcFamily::None, |r, _| 1.0 / r);
        let zero = GridField::zeros(&g, BcFamily::None);
        let div = divergence_b(&vr, &zero).unwrap();
        let c = GridField::from_fn(&g, BcFamily::None, |_, _| 3.0);
        let div2 = divergence_b(&zero, &c).unwrap();
        for &n in g.active() {
            assert!(div.values[n].abs() < 1e-12);
            assert_eq!(div2.values[n], 0.0);
        }
    }

    #[test]
    fn mismatched_grids_rejected() {
        let a = GridField::zeros(&grid(1, 2), BcFamily::None);
        let b = GridField::zeros(&grid(1, 3), BcFamily::None);
        assert!(matches!(integrate_product(&a, &b, 0), Err(Error::Usage(_))));
        assert!(divergence_b(&a, &b).is_err());
    }

    #[test]
    fn pairwise_matches_plain_sum_on_integers() {
        let xs: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&xs), 499500.0);
    }

    #[test]
    fn dirichlet_family_pins_boundary() {
        let g = grid(2, 2);
        let mut f = GridField::from_fn(&g, BcFamily::DirichletAll, |_, _| 1.0);
        f.enforce_bc();
        for &n in g.active() {
            let expect = if g.tag(n) == NodeTag::Interior { 1.0 } else { 0.0 };
            assert_eq!(f.values[n], expect);
        }
    }
}
