//! Staircase cusp domains and their masked finite-difference lattice.
//!
//! The domain is the union of dyadic rectangles
//! `S_j = [2^-j, 2^-(j-1)) x (0, 2^(-beta (j-1)))`, `j = 1..=m`, living in the
//! meridional `(r, z)` half-plane. Its boundary splits into horizontal (`H`)
//! segments, where slip means `d_z v_r = d_z v_theta = 0, v_3 = 0`, and vertical
//! (`V`) segments, where it means `d_r v_theta = v_theta / r, d_r v_3 = 0, v_r = 0`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest exponent for which the a priori analysis is stated.
pub const BETA_ANALYSIS_MAX: f64 = 1.1;
/// Largest exponent accepted at all (with a warning above [`BETA_ANALYSIS_MAX`]).
pub const BETA_MAX: f64 = 1.2;
/// Default cap on lattice size.
pub const DEFAULT_NODE_BUDGET: usize = 4_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub r_lo: f64,
    pub r_hi: f64,
    pub height: f64,
}

impl Rect {
    pub fn width(&self) -> f64 {
        self.r_hi - self.r_lo
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CornerKind {
    Convex,
    Nonconvex,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CornerPoint {
    pub r: f64,
    pub z: f64,
    pub kind: CornerKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SegmentFamily {
    H,
    V,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    Horizontal,
    Vertical,
}

/// Which wall a boundary segment belongs to. Left walls are numbered by the
/// rectangle they bound: `Left(j)` sits at `r = 2^-j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WallSide {
    Left(usize),
    Right,
    Bottom,
    Top(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundarySegment {
    pub start: (f64, f64),
    pub end: (f64, f64),
    pub family: SegmentFamily,
    pub side: WallSide,
}

impl BoundarySegment {
    pub fn orientation(&self) -> Orientation {
        match self.family {
            SegmentFamily::H => Orientation::Horizontal,
            SegmentFamily::V => Orientation::Vertical,
        }
    }

    pub fn length(&self) -> f64 {
        (self.end.0 - self.start.0).abs() + (self.end.1 - self.start.1).abs()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaircaseDomain {
    pub m: usize,
    pub beta: f64,
    pub rects: Vec<Rect>,
    pub corners: Vec<CornerPoint>,
    pub segments: Vec<BoundarySegment>,
    /// Set when `beta` lies outside the range covered by the analysis.
    pub beta_warning: bool,
}

fn dyadic(j: usize) -> f64 {
    (2.0f64).powi(-(j as i32))
}

/// Builds `D_m` for the given step count and height exponent.
pub fn build_domain(m: usize, beta: f64) -> Result<StaircaseDomain> {
    if m < 1 {
        return Err(Error::DomainParameter(format!("m must be >= 1, got {m}")));
    }
    if !(beta > 1.0 && beta <= BETA_MAX) {
        return Err(Error::DomainParameter(format!(
            "beta must lie in (1, {BETA_MAX}], got {beta}"
        )));
    }
    let beta_warning = beta > BETA_ANALYSIS_MAX;
    if beta_warning {
        log::warn!("beta = {beta} exceeds {BETA_ANALYSIS_MAX}; estimates are outside the analysed range");
    }

    let rects: Vec<Rect> = (1..=m)
        .map(|j| Rect {
            r_lo: dyadic(j),
            r_hi: dyadic(j - 1),
            height: (-beta * (j - 1) as f64).exp2(),
        })
        .collect();

    let r_min = dyadic(m);
    let h = |j: usize| rects[j - 1].height;

    // Boundary polygon, counter-clockwise from the bottom-left corner.
    let mut corners = vec![
        CornerPoint { r: r_min, z: 0.0, kind: CornerKind::Convex },
        CornerPoint { r: 1.0, z: 0.0, kind: CornerKind::Convex },
        CornerPoint { r: 1.0, z: 1.0, kind: CornerKind::Convex },
    ];
    let mut segments = vec![
        BoundarySegment {
            start: (r_min, 0.0),
            end: (1.0, 0.0),
            family: SegmentFamily::H,
            side: WallSide::Bottom,
        },
        BoundarySegment {
            start: (1.0, 0.0),
            end: (1.0, 1.0),
            family: SegmentFamily::V,
            side: WallSide::Right,
        },
    ];
    for j in 1..=m {
        let rect = rects[j - 1];
        segments.push(BoundarySegment {
            start: (rect.r_hi, rect.height),
            end: (rect.r_lo, rect.height),
            family: SegmentFamily::H,
            side: WallSide::Top(j),
        });
        corners.push(CornerPoint { r: rect.r_lo, z: rect.height, kind: CornerKind::Convex });
        let lower = if j < m { h(j + 1) } else { 0.0 };
        segments.push(BoundarySegment {
            start: (rect.r_lo, rect.height),
            end: (rect.r_lo, lower),
            family: SegmentFamily::V,
            side: WallSide::Left(j),
        });
        if j < m {
            corners.push(CornerPoint { r: rect.r_lo, z: lower, kind: CornerKind::Nonconvex });
        }
    }

    Ok(StaircaseDomain { m, beta, rects, corners, segments, beta_warning })
}

impl StaircaseDomain {
    pub fn r_min(&self) -> f64 {
        dyadic(self.m)
    }

    /// Plain `dr dz` area, i.e. the sum of rectangle areas.
    pub fn area(&self) -> f64 {
        self.rects.iter().map(|s| s.width() * s.height).sum()
    }

    pub fn nonconvex_corners(&self) -> impl Iterator<Item = &CornerPoint> {
        self.corners.iter().filter(|c| c.kind == CornerKind::Nonconvex)
    }
}

/// Height-to-width ratio `h_j / r_j` of every step.
pub fn thinness_ratios(domain: &StaircaseDomain) -> Vec<f64> {
    domain.rects.iter().map(|s| s.height / s.width()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeTag {
    Exterior,
    Interior,
    BoundaryH,
    BoundaryV,
    Corner(CornerKind),
}

impl NodeTag {
    pub fn is_active(self) -> bool {
        self != NodeTag::Exterior
    }

    /// Lies on the closure of a horizontal segment.
    pub fn on_h(self) -> bool {
        matches!(self, NodeTag::BoundaryH | NodeTag::Corner(_))
    }

    /// Lies on the closure of a vertical segment.
    pub fn on_v(self) -> bool {
        matches!(self, NodeTag::BoundaryV | NodeTag::Corner(_))
    }

    fn code(self) -> u8 {
        match self {
            NodeTag::Exterior => 0,
            NodeTag::Interior => 1,
            NodeTag::BoundaryH => 2,
            NodeTag::BoundaryV => 3,
            NodeTag::Corner(CornerKind::Convex) => 4,
            NodeTag::Corner(CornerKind::Nonconvex) => 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dir {
    East,
    West,
    North,
    South,
}

#[derive(Debug, Clone)]
pub struct GridOptions {
    pub node_budget: usize,
    /// Snap step heights on the lattice of this refinement instead of the
    /// grid's own. Grids sharing a snap refinement nest exactly.
    pub snap_refinement: Option<u32>,
}

impl Default for GridOptions {
    fn default() -> Self {
        GridOptions { node_budget: DEFAULT_NODE_BUDGET, snap_refinement: None }
    }
}

/// Tensor-product node lattice over the bounding box of `D_m`, with an active
/// mask. Nodes are indexed `n = i * nz + k` for column `i` (radius) and row `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub m: usize,
    pub beta: f64,
    pub refinement: u32,
    pub delta_r: f64,
    pub delta_z: f64,
    pub nr: usize,
    pub nz: usize,
    r_of: Vec<f64>,
    column_top: Vec<usize>,
    tags: Vec<NodeTag>,
    cell_active: Vec<bool>,
    quadrants: Vec<u8>,
    active: Vec<usize>,
    /// Snapped height of every step, a multiple of `delta_z`.
    pub snapped_heights: Vec<f64>,
    /// Snapped height of every step in rows.
    pub snapped_rows: Vec<usize>,
    /// Effective exponent `-log2(snapped height) / (j - 1)`; `NaN` for `S_1`.
    pub beta_effective: Vec<f64>,
}

pub fn generate_grid(domain: &StaircaseDomain, p: u32) -> Result<Grid> {
    generate_grid_with(domain, p, &GridOptions::default())
}

pub fn generate_grid_with(domain: &StaircaseDomain, p: u32, opts: &GridOptions) -> Result<Grid> {
    if p < 2 {
        return Err(Error::DomainParameter(format!("refinement must be >= 2, got {p}")));
    }
    let m = domain.m;
    let delta = dyadic(m + p as usize);
    let nr = (1usize << p) * ((1usize << m) - 1) + 1;
    let nz = (1usize << (m + p as usize)) + 1;
    if nr.saturating_mul(nz) > opts.node_budget {
        return Err(Error::Resource(format!(
            "lattice of {nr} x {nz} nodes exceeds the budget of {}",
            opts.node_budget
        )));
    }

    let snap_p = opts.snap_refinement.unwrap_or(p);
    if snap_p > p || snap_p < 2 {
        return Err(Error::DomainParameter(format!(
            "snap refinement {snap_p} must lie in [2, {p}]"
        )));
    }
    let scale = 1usize << (p - snap_p);
    let snap_delta = delta * scale as f64;
    let snapped_rows: Vec<usize> = domain
        .rects
        .iter()
        .map(|s| (s.height / snap_delta).round() as usize * scale)
        .collect();
    for j in 1..m {
        if snapped_rows[j] >= snapped_rows[j - 1] {
            return Err(Error::DomainParameter(format!(
                "refinement {p} too coarse: steps {j} and {} snap to the same height",
                j + 1
            )));
        }
    }
    if snapped_rows[m - 1] < 2 {
        return Err(Error::DomainParameter(format!(
            "refinement {p} too coarse: step {m} is thinner than two cells"
        )));
    }
    let snapped_heights: Vec<f64> = snapped_rows.iter().map(|&k| k as f64 * delta).collect();
    let beta_effective = snapped_heights
        .iter()
        .enumerate()
        .map(|(j, &h)| if j == 0 { f64::NAN } else { -h.log2() / j as f64 })
        .collect();

    let r_min = domain.r_min();
    let r_of: Vec<f64> = (0..nr).map(|i| r_min + i as f64 * delta).collect();

    // Column index of r = 2^-j.
    let col_of = |j: usize| (1usize << p) * ((1usize << (m - j)) - 1);
    // Rectangle (0-based) owning the cell between columns i and i+1.
    let mut cell_rect = vec![0usize; nr - 1];
    for j in 1..=m {
        for c in cell_rect.iter_mut().take(col_of(j - 1)).skip(col_of(j)) {
            *c = j - 1;
        }
    }

    let mut cell_active = vec![false; (nr - 1) * (nz - 1)];
    for i in 0..nr - 1 {
        let top = snapped_rows[cell_rect[i]];
        for k in 0..top {
            cell_active[i * (nz - 1) + k] = true;
        }
    }

    let mut column_top = vec![0usize; nr];
    let mut tags = vec![NodeTag::Exterior; nr * nz];
    for i in 0..nr {
        let interface = (1..m).find(|&j| col_of(j) == i);
        let rows = &snapped_rows;
        let top;
        let tag_of: Box<dyn Fn(usize) -> NodeTag> = if i == 0 {
            top = rows[m - 1];
            Box::new(move |k| {
                if k == 0 || k == top {
                    NodeTag::Corner(CornerKind::Convex)
                } else {
                    NodeTag::BoundaryV
                }
            })
        } else if i == nr - 1 {
            top = rows[0];
            Box::new(move |k| {
                if k == 0 || k == top {
                    NodeTag::Corner(CornerKind::Convex)
                } else {
                    NodeTag::BoundaryV
                }
            })
        } else if let Some(j) = interface {
            let hi = rows[j - 1];
            let lo = rows[j];
            top = hi;
            Box::new(move |k| {
                if k == 0 {
                    NodeTag::BoundaryH
                } else if k < lo {
                    NodeTag::Interior
                } else if k == lo {
                    NodeTag::Corner(CornerKind::Nonconvex)
                } else if k < hi {
                    NodeTag::BoundaryV
                } else {
                    NodeTag::Corner(CornerKind::Convex)
                }
            })
        } else {
            top = rows[cell_rect[i]];
            Box::new(move |k| {
                if k == 0 || k == top {
                    NodeTag::BoundaryH
                } else {
                    NodeTag::Interior
                }
            })
        };
        column_top[i] = top;
        for k in 0..=top {
            tags[i * nz + k] = tag_of(k);
        }
    }

    let mut quadrants = vec![0u8; nr * nz];
    for i in 0..nr {
        for k in 0..nz {
            let mut q = 0u8;
            for (ci, ck) in [(i.wrapping_sub(1), k.wrapping_sub(1)), (i.wrapping_sub(1), k), (i, k.wrapping_sub(1)), (i, k)] {
                if ci < nr - 1 && ck < nz - 1 && cell_active[ci * (nz - 1) + ck] {
                    q += 1;
                }
            }
            quadrants[i * nz + k] = q;
        }
    }

    let active = (0..nr * nz).filter(|&n| tags[n].is_active()).collect();

    Ok(Grid {
        m,
        beta: domain.beta,
        refinement: p,
        delta_r: delta,
        delta_z: delta,
        nr,
        nz,
        r_of,
        column_top,
        tags,
        cell_active,
        quadrants,
        active,
        snapped_heights,
        snapped_rows,
        beta_effective,
    })
}

impl Grid {
    pub fn len(&self) -> usize {
        self.nr * self.nz
    }

    pub fn is_empty(&self) -> bool {
        self.active.is_empty()
    }

    #[inline]
    pub fn index(&self, i: usize, k: usize) -> usize {
        i * self.nz + k
    }

    #[inline]
    pub fn coords(&self, n: usize) -> (usize, usize) {
        (n / self.nz, n % self.nz)
    }

    #[inline]
    pub fn r(&self, n: usize) -> f64 {
        self.r_of[n / self.nz]
    }

    #[inline]
    pub fn z(&self, n: usize) -> f64 {
        (n % self.nz) as f64 * self.delta_z
    }

    pub fn r_column(&self, i: usize) -> f64 {
        self.r_of[i]
    }

    pub fn columns(&self) -> &[f64] {
        &self.r_of
    }

    /// Highest active row of column `i`.
    pub fn column_top(&self, i: usize) -> usize {
        self.column_top[i]
    }

    #[inline]
    pub fn tag(&self, n: usize) -> NodeTag {
        self.tags[n]
    }

    pub fn tags(&self) -> &[NodeTag] {
        &self.tags
    }

    /// Active node indices in lexicographic `(i, k)` order.
    pub fn active(&self) -> &[usize] {
        &self.active
    }

    #[inline]
    pub fn is_active(&self, n: usize) -> bool {
        self.tags[n].is_active()
    }

    pub fn cell_active(&self, i: usize, k: usize) -> bool {
        i + 1 < self.nr && k + 1 < self.nz && self.cell_active[i * (self.nz - 1) + k]
    }

    /// Number of active cells touching node `n` (0 to 4).
    #[inline]
    pub fn quadrants(&self, n: usize) -> u8 {
        self.quadrants[n]
    }

    /// Trapezoidal (dual-cell) area of node `n` in `dr dz`.
    #[inline]
    pub fn cell_area(&self, n: usize) -> f64 {
        self.quadrants[n] as f64 * 0.25 * self.delta_r * self.delta_z
    }

    #[inline]
    pub fn neighbor(&self, n: usize, dir: Dir) -> Option<usize> {
        let (i, k) = self.coords(n);
        let m = match dir {
            Dir::East if i + 1 < self.nr => n + self.nz,
            Dir::West if i > 0 => n - self.nz,
            Dir::North if k + 1 < self.nz => n + 1,
            Dir::South if k > 0 => n - 1,
            _ => return None,
        };
        self.tags[m].is_active().then_some(m)
    }

    /// Number of active cells adjacent to the lattice edge from `n` towards `dir`
    /// (0, 1 or 2).
    pub fn edge_cells(&self, n: usize, dir: Dir) -> u8 {
        let (i, k) = self.coords(n);
        let cell = |ci: Option<usize>, ck: Option<usize>| match (ci, ck) {
            (Some(ci), Some(ck)) => self.cell_active(ci, ck) as u8,
            _ => 0,
        };
        match dir {
            Dir::East => cell(Some(i), Some(k)) + cell(Some(i), k.checked_sub(1)),
            Dir::West => cell(i.checked_sub(1), Some(k)) + cell(i.checked_sub(1), k.checked_sub(1)),
            Dir::North => cell(Some(i), Some(k)) + cell(i.checked_sub(1), Some(k)),
            Dir::South => cell(Some(i), k.checked_sub(1)) + cell(i.checked_sub(1), k.checked_sub(1)),
        }
    }

    pub fn count_tag(&self, tag: NodeTag) -> usize {
        self.tags.iter().filter(|&&t| t == tag).count()
    }

    /// Serializable description with the node mask run-length encoded.
    pub fn describe(&self, domain: &StaircaseDomain) -> GridDescription {
        let mut mask_rle: Vec<(u8, u32)> = Vec::new();
        for t in &self.tags {
            let c = t.code();
            match mask_rle.last_mut() {
                Some((code, run)) if *code == c => *run += 1,
                _ => mask_rle.push((c, 1)),
            }
        }
        GridDescription {
            m: self.m,
            beta: self.beta,
            refinement: self.refinement,
            delta_r: self.delta_r,
            delta_z: self.delta_z,
            nr: self.nr,
            nz: self.nz,
            rects: domain.rects.clone(),
            corners: domain.corners.clone(),
            snapped_heights: self.snapped_heights.clone(),
            tag_codes: "0 exterior, 1 interior, 2 boundary-H, 3 boundary-V, 4 convex corner, 5 nonconvex corner".into(),
            mask_rle,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridDescription {
    pub m: usize,
    pub beta: f64,
    pub refinement: u32,
    pub delta_r: f64,
    pub delta_z: f64,
    pub nr: usize,
    pub nz: usize,
    pub rects: Vec<Rect>,
    pub corners: Vec<CornerPoint>,
    pub snapped_heights: Vec<f64>,
    pub tag_codes: String,
    pub mask_rle: Vec<(u8, u32)>,
}
