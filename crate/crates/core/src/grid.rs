//! Uniform box grids in one or two dimensions.
//!
//! Nodes are numbered row-major with the last axis fastest, so a 2D node
//! `(i, j)` has flat index `i * nodes_per_axis(1) + j`. Points are stored as
//! `[f64; 2]` in both dimensions; in 1D the second coordinate is always zero.

use serde::{Deserialize, Serialize};

use crate::error::{MfgError, Result};

/// A position in the computational box. The unused coordinate is 0 in 1D.
pub type Point = [f64; 2];

/// Euclidean norm of a point (both coordinates).
pub fn norm(p: &Point) -> f64 {
    p[0].hypot(p[1])
}

/// Euclidean distance between two points.
pub fn dist(a: &Point, b: &Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpatialGrid {
    dim: usize,
    lower: [f64; 2],
    upper: [f64; 2],
    n_cells: [usize; 2],
    spacing: [f64; 2],
}

impl SpatialGrid {
    pub fn new(lower: &[f64], upper: &[f64], n_cells: &[usize]) -> Result<Self> {
        let dim = lower.len();
        if !(1..=2).contains(&dim) || upper.len() != dim || n_cells.len() != dim {
            return Err(MfgError::InvalidArgument(format!(
                "grid needs 1 or 2 axes with matching lower/upper/n_cells (got {}, {}, {})",
                lower.len(),
                upper.len(),
                n_cells.len()
            )));
        }
        let mut grid = SpatialGrid {
            dim,
            lower: [0.0; 2],
            upper: [0.0; 2],
            n_cells: [0; 2],
            spacing: [1.0; 2],
        };
        for axis in 0..dim {
            if !(upper[axis] > lower[axis]) || !lower[axis].is_finite() || !upper[axis].is_finite() {
                return Err(MfgError::InvalidArgument(format!(
                    "axis {axis}: upper ({}) must exceed lower ({})",
                    upper[axis], lower[axis]
                )));
            }
            if n_cells[axis] < 2 {
                return Err(MfgError::InvalidArgument(format!(
                    "axis {axis}: need at least 2 cells (got {})",
                    n_cells[axis]
                )));
            }
            grid.lower[axis] = lower[axis];
            grid.upper[axis] = upper[axis];
            grid.n_cells[axis] = n_cells[axis];
            grid.spacing[axis] = (upper[axis] - lower[axis]) / n_cells[axis] as f64;
        }
        Ok(grid)
    }

    pub fn line(lower: f64, upper: f64, n_cells: usize) -> Result<Self> {
        Self::new(&[lower], &[upper], &[n_cells])
    }

    pub fn square(lower: f64, upper: f64, n_cells: usize) -> Result<Self> {
        Self::new(&[lower, lower], &[upper, upper], &[n_cells, n_cells])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower[..self.dim]
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper[..self.dim]
    }

    pub fn n_cells(&self) -> &[usize] {
        &self.n_cells[..self.dim]
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.spacing[axis]
    }

    pub fn max_spacing(&self) -> f64 {
        self.spacing[..self.dim].iter().copied().fold(0.0, f64::max)
    }

    pub fn nodes_per_axis(&self, axis: usize) -> usize {
        if axis < self.dim {
            self.n_cells[axis] + 1
        } else {
            1
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes_per_axis(0) * self.nodes_per_axis(1)
    }

    pub fn n_total_cells(&self) -> usize {
        self.n_cells[..self.dim].iter().product()
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing[..self.dim].iter().product()
    }

    pub fn flat_index(&self, multi: [usize; 2]) -> usize {
        multi[0] * self.nodes_per_axis(1) + multi[1]
    }

    pub fn multi_index(&self, idx: usize) -> [usize; 2] {
        let n1 = self.nodes_per_axis(1);
        [idx / n1, idx % n1]
    }

    pub fn node(&self, idx: usize) -> Point {
        let m = self.multi_index(idx);
        let mut p = [0.0; 2];
        for (axis, coord) in p.iter_mut().enumerate().take(self.dim) {
            *coord = self.lower[axis] + m[axis] as f64 * self.spacing[axis];
        }
        p
    }

    pub fn nodes(&self) -> impl Iterator<Item = Point> + '_ {
        (0..self.n_nodes()).map(move |i| self.node(i))
    }

    /// Evaluate `f` at every node.
    pub fn sample<F: Fn(&Point) -> f64>(&self, f: F) -> Vec<f64> {
        self.nodes().map(|p| f(&p)).collect()
    }

    pub fn contains(&self, p: &Point) -> bool {
        (0..self.dim).all(|a| p[a] >= self.lower[a] && p[a] <= self.upper[a])
    }

    /// Distance from `p` to the nearest box face (negative outside).
    pub fn distance_to_boundary(&self, p: &Point) -> f64 {
        (0..self.dim)
            .map(|a| (p[a] - self.lower[a]).min(self.upper[a] - p[a]))
            .fold(f64::INFINITY, f64::min)
    }

    /// Project `p` onto the box if it lies at most one cell outside it.
    pub fn clamp(&self, p: &Point) -> Result<Point> {
        let mut q = *p;
        for a in 0..self.dim {
            let margin = self.spacing[a];
            if !(p[a] >= self.lower[a] - margin && p[a] <= self.upper[a] + margin) {
                return Err(MfgError::DomainEscape { point: *p });
            }
            q[a] = p[a].clamp(self.lower[a], self.upper[a]);
        }
        Ok(q)
    }

    /// Cell index and fractional offset of `x` along `axis`. `x` must already be clamped.
    fn locate(&self, axis: usize, x: f64) -> (usize, f64) {
        let t = (x - self.lower[axis]) / self.spacing[axis];
        let n = self.n_cells[axis];
        let i = (t.floor().max(0.0) as usize).min(n - 1);
        (i, (t - i as f64).clamp(0.0, 1.0))
    }

    /// Multilinear interpolation of a node field.
    pub fn interpolate(&self, field: &[f64], x: &Point) -> Result<f64> {
        debug_assert_eq!(field.len(), self.n_nodes());
        let q = self.clamp(x)?;
        Ok(self.interpolate_clamped(field, &q))
    }

    pub(crate) fn interpolate_clamped(&self, field: &[f64], q: &Point) -> f64 {
        let (i, fx) = self.locate(0, q[0]);
        if self.dim == 1 {
            return (1.0 - fx) * field[i] + fx * field[i + 1];
        }
        let (j, fy) = self.locate(1, q[1]);
        let n1 = self.nodes_per_axis(1);
        let v00 = field[i * n1 + j];
        let v01 = field[i * n1 + j + 1];
        let v10 = field[(i + 1) * n1 + j];
        let v11 = field[(i + 1) * n1 + j + 1];
        (1.0 - fx) * ((1.0 - fy) * v00 + fy * v01) + fx * ((1.0 - fy) * v10 + fy * v11)
    }

    /// Flat index of the node closest to `p` (after clamping into the box).
    pub fn nearest_node(&self, p: &Point) -> usize {
        let mut m = [0usize; 2];
        for a in 0..self.dim {
            let t = ((p[a] - self.lower[a]) / self.spacing[a]).round();
            m[a] = t.clamp(0.0, self.n_cells[a] as f64) as usize;
        }
        self.flat_index(m)
    }

    /// Neighbour of `idx` shifted by `step` (±1) along `axis`, if inside the grid.
    pub fn neighbor(&self, idx: usize, axis: usize, step: isize) -> Option<usize> {
        let mut m = self.multi_index(idx);
        let k = m[axis] as isize + step;
        if k < 0 || k > self.n_cells[axis] as isize {
            return None;
        }
        m[axis] = k as usize;
        Some(self.flat_index(m))
    }

    pub fn is_boundary_node(&self, idx: usize) -> bool {
        let m = self.multi_index(idx);
        (0..self.dim).any(|a| m[a] == 0 || m[a] == self.n_cells[a])
    }

    /// Godunov upwind approximation of `|∇v|` at a node:
    /// `sqrt(Σ_axis max(D⁻v, −D⁺v, 0)²)`. Missing one-sided differences at the
    /// box boundary are dropped from the max.
    pub fn upwind_gradient_norm(&self, field: &[f64], idx: usize) -> f64 {
        let v = field[idx];
        let mut sum = 0.0;
        for axis in 0..self.dim {
            let h = self.spacing[axis];
            let mut slope: f64 = 0.0;
            if let Some(l) = self.neighbor(idx, axis, -1) {
                slope = slope.max((v - field[l]) / h);
            }
            if let Some(r) = self.neighbor(idx, axis, 1) {
                slope = slope.max((v - field[r]) / h);
            }
            sum += slope * slope;
        }
        sum.sqrt()
    }

    /// Per-node gradient by central differences (one-sided at the boundary).
    pub fn central_gradient(&self, field: &[f64]) -> Vec<Point> {
        (0..self.n_nodes())
            .map(|idx| {
                let mut g = [0.0; 2];
                for (axis, ga) in g.iter_mut().enumerate().take(self.dim) {
                    let h = self.spacing[axis];
                    let l = self.neighbor(idx, axis, -1);
                    let r = self.neighbor(idx, axis, 1);
                    *ga = match (l, r) {
                        (Some(l), Some(r)) => (field[r] - field[l]) / (2.0 * h),
                        (None, Some(r)) => (field[r] - field[idx]) / h,
                        (Some(l), None) => (field[idx] - field[l]) / h,
                        (None, None) => 0.0,
                    };
                }
                g
            })
            .collect()
    }

    /// Flat node indices of the corners of cell `cell` (row-major over cells).
    pub fn cell_corners(&self, cell: usize) -> Vec<usize> {
        if self.dim == 1 {
            return vec![cell, cell + 1];
        }
        let nc1 = self.n_cells[1];
        let (i, j) = (cell / nc1, cell % nc1);
        vec![
            self.flat_index([i, j]),
            self.flat_index([i, j + 1]),
            self.flat_index([i + 1, j]),
            self.flat_index([i + 1, j + 1]),
        ]
    }

    pub fn cell_centroid(&self, cell: usize) -> Point {
        let m = if self.dim == 1 {
            [cell, 0]
        } else {
            [cell / self.n_cells[1], cell % self.n_cells[1]]
        };
        let mut p = [0.0; 2];
        for (axis, coord) in p.iter_mut().enumerate().take(self.dim) {
            *coord = self.lower[axis] + (m[axis] as f64 + 0.5) * self.spacing[axis];
        }
        p
    }
}

/// A set of grid nodes built by some rule (argmin sets, Dirichlet sets, 𝒜).
#[derive(Clone, Debug, PartialEq)]
pub struct NodeSet {
    grid: SpatialGrid,
    indices: Vec<usize>,
    tolerance: f64,
}

impl NodeSet {
    pub fn new(grid: SpatialGrid, mut indices: Vec<usize>, tolerance: f64) -> Result<Self> {
        indices.sort_unstable();
        indices.dedup();
        if let Some(&bad) = indices.iter().find(|&&i| i >= grid.n_nodes()) {
            return Err(MfgError::InvalidArgument(format!(
                "node index {bad} out of range for a grid of {} nodes",
                grid.n_nodes()
            )));
        }
        Ok(NodeSet {
            grid,
            indices,
            tolerance,
        })
    }

    /// Nodes where `field <= threshold`.
    pub fn sublevel(grid: SpatialGrid, field: &[f64], threshold: f64) -> Self {
        let indices = field
            .iter()
            .enumerate()
            .filter(|(_, &v)| v <= threshold)
            .map(|(i, _)| i)
            .collect();
        NodeSet {
            grid,
            indices,
            tolerance: threshold,
        }
    }

    /// Snap each point to its nearest node.
    pub fn from_points(grid: SpatialGrid, points: &[Point]) -> Self {
        let mut indices: Vec<usize> = points.iter().map(|p| grid.nearest_node(p)).collect();
        indices.sort_unstable();
        indices.dedup();
        NodeSet {
            grid,
            indices,
            tolerance: 0.5 * grid.max_spacing(),
        }
    }

    pub fn grid(&self) -> &SpatialGrid {
        &self.grid
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn tolerance(&self) -> f64 {
        self.tolerance
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, idx: usize) -> bool {
        self.indices.binary_search(&idx).is_ok()
    }

    pub fn points(&self) -> Vec<Point> {
        self.indices.iter().map(|&i| self.grid.node(i)).collect()
    }

    pub fn union(&self, other: &NodeSet) -> NodeSet {
        let mut indices = self.indices.clone();
        indices.extend_from_slice(&other.indices);
        indices.sort_unstable();
        indices.dedup();
        NodeSet {
            grid: self.grid,
            indices,
            tolerance: self.tolerance.max(other.tolerance),
        }
    }

    /// Euclidean distance from `x` to the nearest node of the set.
    pub fn distance(&self, x: &Point) -> Result<f64> {
        if self.indices.is_empty() {
            return Err(MfgError::InvalidArgument("distance to an empty node set".into()));
        }
        Ok(self
            .indices
            .iter()
            .map(|&i| dist(x, &self.grid.node(i)))
            .fold(f64::INFINITY, f64::min))
    }

    /// Distance to the set for every node of the grid.
    pub fn distance_field(&self) -> Result<Vec<f64>> {
        if self.indices.is_empty() {
            return Err(MfgError::InvalidArgument("distance to an empty node set".into()));
        }
        let pts = self.points();
        Ok(self
            .grid
            .nodes()
            .map(|x| pts.iter().map(|p| dist(&x, p)).fold(f64::INFINITY, f64::min))
            .collect())
    }
}

/// Free-function form of [`NodeSet::distance`].
pub fn distance_to_set(x: &Point, set: &NodeSet) -> Result<f64> {
    set.distance(x)
}
