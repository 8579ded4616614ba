//! Ergodic triples `(c, v, m)`: `c + ½|∇v|² = F(x, m)` with `div(m∇v) = 0`.
//!
//! For a static equilibrium `m` the corrector `v` is the nonnegative solution
//! of the eikonal problem `|∇v| = ℓ`, `ℓ = √(2(F(·, m) − c_m))`, vanishing on
//! the argmin set `𝔐`. It is computed by Godunov fast sweeping and
//! cross-checked against a shortest-path value on the grid graph.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::sync::OnceLock;

use serde::Serialize;

use crate::cost::{stats_from_values, CostFunctional};
use crate::error::{MfgError, Result};
use crate::grid::{dist, NodeSet, Point, SpatialGrid};
use crate::measure::{support_distance, DiscreteMeasure, PRUNE_WEIGHT};
use crate::static_game::{critical_value, residual};

/// Default full-sweep budget of [`solve_eikonal`].
pub const SWEEP_BUDGET: usize = 200;

/// Local Godunov update: the largest `v` with
/// `Σ_axis ((v − a_axis)⁺ / h_axis)² = f²`.
fn godunov_update(a: f64, ha: f64, b: Option<(f64, f64)>, f: f64) -> f64 {
    let Some((b, hb)) = b else {
        return a + f * ha;
    };
    let single = (a + f * ha).min(b + f * hb);
    if single <= a.max(b) {
        return single;
    }
    let (wa, wb) = (1.0 / (ha * ha), 1.0 / (hb * hb));
    let qa = wa + wb;
    let qb = a * wa + b * wb;
    let qc = a * a * wa + b * b * wb - f * f;
    let disc = (qb * qb - qa * qc).max(0.0);
    (qb + disc.sqrt()) / qa
}

/// Smallest neighbour value along `axis` (one-sided at the box boundary).
fn upwind_neighbor(grid: &SpatialGrid, v: &[f64], idx: usize, axis: usize) -> f64 {
    let l = grid.neighbor(idx, axis, -1).map_or(f64::INFINITY, |l| v[l]);
    let r = grid.neighbor(idx, axis, 1).map_or(f64::INFINITY, |r| v[r]);
    l.min(r)
}

fn local_solve(grid: &SpatialGrid, v: &[f64], idx: usize, f: f64) -> f64 {
    let a = upwind_neighbor(grid, v, idx, 0);
    let ha = grid.spacing(0);
    if grid.dim() == 1 {
        return a + f * ha;
    }
    let b = upwind_neighbor(grid, v, idx, 1);
    let hb = grid.spacing(1);
    match (a.is_finite(), b.is_finite()) {
        (false, false) => f64::INFINITY,
        (true, false) => a + f * ha,
        (false, true) => b + f * hb,
        (true, true) => godunov_update(a, ha, Some((b, hb)), f),
    }
}

/// Fast-sweeping solution of `|∇v| = ℓ` off `dirichlet`, `v = 0` on it, with
/// outflow at the box boundary.
///
/// Gauss–Seidel sweeps run over all `2^dim` orderings until a full pass changes
/// no node by more than `sweep_tol`, within [`SWEEP_BUDGET`] passes.
pub fn solve_eikonal(
    ell: &[f64],
    dirichlet: &NodeSet,
    grid: &SpatialGrid,
    sweep_tol: f64,
) -> Result<Vec<f64>> {
    if ell.len() != grid.n_nodes() {
        return Err(MfgError::InvalidArgument(format!(
            "ℓ has {} values for {} nodes",
            ell.len(),
            grid.n_nodes()
        )));
    }
    if ell.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
        return Err(MfgError::InvalidArgument("ℓ must be finite and nonnegative".into()));
    }
    if dirichlet.is_empty() {
        return Err(MfgError::InvalidArgument("empty Dirichlet set".into()));
    }
    if dirichlet.grid() != grid {
        return Err(MfgError::InvalidArgument("Dirichlet set lives on another grid".into()));
    }
    let mut fixed = vec![false; grid.n_nodes()];
    let mut v = vec![f64::INFINITY; grid.n_nodes()];
    for &i in dirichlet.indices() {
        fixed[i] = true;
        v[i] = 0.0;
    }
    let n0 = grid.nodes_per_axis(0);
    let n1 = grid.nodes_per_axis(1);
    let orderings = 1usize << grid.dim();
    let mut change = f64::INFINITY;
    for _ in 0..SWEEP_BUDGET {
        change = 0.0f64;
        for ord in 0..orderings {
            for a in 0..n0 {
                let i = if ord & 1 == 0 { a } else { n0 - 1 - a };
                for b in 0..n1 {
                    let j = if ord & 2 == 0 { b } else { n1 - 1 - b };
                    let idx = i * n1 + j;
                    if fixed[idx] {
                        continue;
                    }
                    let cand = local_solve(grid, &v, idx, ell[idx]);
                    if cand < v[idx] {
                        let delta = if v[idx].is_finite() {
                            v[idx] - cand
                        } else {
                            f64::INFINITY
                        };
                        change = change.max(delta);
                        v[idx] = cand;
                    }
                }
            }
        }
        if change < sweep_tol {
            return Ok(v);
        }
    }
    Err(MfgError::NoConvergence {
        solver: "fast sweeping",
        iterations: SWEEP_BUDGET,
        residual: change,
    })
}

#[derive(Clone, Copy, PartialEq)]
struct HeapEntry(f64, usize);

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then(other.1.cmp(&self.1))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Shortest-path value on the grid graph (2-neighbour in 1D, 8-neighbour in
/// 2D), edge cost = mean of `ℓ` at the endpoints × edge length.
pub fn graph_value_field(ell: &[f64], dirichlet: &NodeSet, grid: &SpatialGrid) -> Result<Vec<f64>> {
    if ell.len() != grid.n_nodes() || dirichlet.is_empty() {
        return Err(MfgError::InvalidArgument(
            "graph value needs ℓ on every node and a nonempty Dirichlet set".into(),
        ));
    }
    let steps: Vec<[isize; 2]> = if grid.dim() == 1 {
        vec![[-1, 0], [1, 0]]
    } else {
        let mut s = Vec::new();
        for di in -1..=1 {
            for dj in -1..=1 {
                if di != 0 || dj != 0 {
                    s.push([di, dj]);
                }
            }
        }
        s
    };
    let n0 = grid.nodes_per_axis(0) as isize;
    let n1 = grid.nodes_per_axis(1) as isize;
    let mut d = vec![f64::INFINITY; grid.n_nodes()];
    let mut heap = BinaryHeap::new();
    for &i in dirichlet.indices() {
        d[i] = 0.0;
        heap.push(HeapEntry(0.0, i));
    }
    while let Some(HeapEntry(di, i)) = heap.pop() {
        if di > d[i] {
            continue;
        }
        let [a, b] = grid.multi_index(i);
        for s in &steps {
            let (na, nb) = (a as isize + s[0], b as isize + s[1]);
            if na < 0 || nb < 0 || na >= n0 || nb >= n1 {
                continue;
            }
            let j = grid.flat_index([na as usize, nb as usize]);
            let len = dist(&grid.node(i), &grid.node(j));
            let nd = di + 0.5 * (ell[i] + ell[j]) * len;
            if nd < d[j] {
                d[j] = nd;
                heap.push(HeapEntry(nd, j));
            }
        }
    }
    Ok(d)
}

/// Independent estimate of the control-problem value at `samples`, from
/// [`graph_value_field`] interpolated off the nodes.
pub fn value_function_crosscheck(
    ell: &[f64],
    dirichlet: &NodeSet,
    grid: &SpatialGrid,
    samples: &[Point],
) -> Result<Vec<(Point, f64)>> {
    let field = graph_value_field(ell, dirichlet, grid)?;
    samples
        .iter()
        .map(|x| Ok((*x, grid.interpolate(&field, x)?)))
        .collect()
}

/// A smooth test function, accessed through its gradient.
pub trait TestFunction: Send + Sync {
    fn gradient(&self, x: &Point) -> Point;
}

/// `ψ(t) = exp(−1/(1 − t²))` on `|t| < 1`, and `ψ′`.
fn psi(t: f64) -> (f64, f64) {
    if t.abs() >= 1.0 {
        return (0.0, 0.0);
    }
    let s = 1.0 - t * t;
    let v = (-1.0 / s).exp();
    (v, v * (-2.0 * t / (s * s)))
}

/// Largest gradient norm of the unit-width tensor bump in `dim` dimensions.
fn unit_bump_gradient_max(dim: usize) -> f64 {
    static MAX: OnceLock<[f64; 2]> = OnceLock::new();
    let table = MAX.get_or_init(|| {
        let n = 400;
        let mut m1 = 0.0f64;
        let mut m2 = 0.0f64;
        for i in 0..=n {
            let t = -1.0 + 2.0 * i as f64 / n as f64;
            let (p, dp) = psi(t);
            m1 = m1.max(dp.abs());
            for j in 0..=n {
                let s = -1.0 + 2.0 * j as f64 / n as f64;
                let (q, dq) = psi(s);
                m2 = m2.max((dp * q).hypot(p * dq));
            }
        }
        [m1, m2]
    });
    table[dim - 1]
}

/// `φ(x) = amplitude · Π_axis ψ((x_axis − c_axis)/width)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bump {
    pub dim: usize,
    pub center: Point,
    pub width: f64,
    pub amplitude: f64,
}

impl Bump {
    /// Bump scaled to `max |∇φ| = 1`.
    pub fn normalized(dim: usize, center: Point, width: f64) -> Self {
        Bump {
            dim,
            center,
            width,
            amplitude: width / unit_bump_gradient_max(dim),
        }
    }
}

impl TestFunction for Bump {
    fn gradient(&self, x: &Point) -> Point {
        let t0 = (x[0] - self.center[0]) / self.width;
        let (p0, d0) = psi(t0);
        if self.dim == 1 {
            return [self.amplitude * d0 / self.width, 0.0];
        }
        let t1 = (x[1] - self.center[1]) / self.width;
        let (p1, d1) = psi(t1);
        let k = self.amplitude / self.width;
        [k * d0 * p1, k * p0 * d1]
    }
}

/// Normalized bumps centred on a 9-per-axis interior sublattice, two widths each.
pub fn default_test_family(grid: &SpatialGrid) -> Vec<Bump> {
    let per_axis = 9;
    let pitch: Vec<f64> = (0..grid.dim())
        .map(|a| (grid.upper()[a] - grid.lower()[a]) / (per_axis + 1) as f64)
        .collect();
    let base = pitch.iter().copied().fold(f64::INFINITY, f64::min);
    let coord = |a: usize, k: usize| grid.lower()[a] + (k + 1) as f64 * pitch[a];
    let mut centers = Vec::new();
    for i in 0..per_axis {
        if grid.dim() == 1 {
            centers.push([coord(0, i), 0.0]);
        } else {
            for j in 0..per_axis {
                centers.push([coord(0, i), coord(1, j)]);
            }
        }
    }
    let mut family = Vec::with_capacity(2 * centers.len());
    for c in centers {
        for w in [base, 2.0 * base] {
            family.push(Bump::normalized(grid.dim(), c, w));
        }
    }
    family
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ContinuityResidual {
    pub value: f64,
    pub family_size: usize,
}

/// `max_φ |Σ_j w_j ∇φ(y_j)·∇v(y_j)|` with `∇v` centrally differenced and interpolated.
pub fn continuity_residual<T: TestFunction>(
    v: &[f64],
    m: &DiscreteMeasure,
    grid: &SpatialGrid,
    family: &[T],
) -> Result<ContinuityResidual> {
    let grad = grid.central_gradient(v);
    let gx: Vec<f64> = grad.iter().map(|g| g[0]).collect();
    let gy: Vec<f64> = grad.iter().map(|g| g[1]).collect();
    let mut dv = Vec::with_capacity(m.len());
    for y in m.points() {
        let a = grid.interpolate(&gx, y)?;
        let b = if grid.dim() == 2 { grid.interpolate(&gy, y)? } else { 0.0 };
        dv.push([a, b]);
    }
    let value = family
        .iter()
        .map(|phi| {
            m.iter()
                .zip(&dv)
                .map(|((y, w), g)| {
                    let gp = phi.gradient(y);
                    w * (gp[0] * g[0] + gp[1] * g[1])
                })
                .sum::<f64>()
                .abs()
        })
        .fold(0.0, f64::max);
    Ok(ContinuityResidual {
        value,
        family_size: family.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ErgodicResiduals {
    /// `max |½|∇v|² + c − F|` over nodes farther than `2h` from `𝔐` and the boundary.
    pub hj_residual: f64,
    pub continuity_residual: f64,
    pub continuity_family_size: usize,
    pub mather_residual: f64,
    /// Distance from the support of `m` to `𝔐`.
    pub support_violation: f64,
    /// `v` does not decrease toward the box boundary (outflow truncation is consistent).
    pub outflow_consistent: bool,
}

#[derive(Clone, Debug)]
pub struct ErgodicTriple {
    pub c: f64,
    pub v: Vec<f64>,
    pub m: DiscreteMeasure,
    pub dirichlet: NodeSet,
    pub residuals: ErgodicResiduals,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ErgodicOptions {
    /// Static residual above which the measure is rejected.
    pub static_tol: f64,
    pub sweep_tol: f64,
    /// Argmin tolerance for `𝔐`; `None` uses the cost default.
    pub argmin_tol: Option<f64>,
}

impl Default for ErgodicOptions {
    fn default() -> Self {
        ErgodicOptions {
            static_tol: 1e-6,
            sweep_tol: 1e-12,
            argmin_tol: None,
        }
    }
}

fn outflow_consistent(v: &[f64], grid: &SpatialGrid, tol: f64) -> bool {
    (0..grid.n_nodes()).filter(|&i| grid.is_boundary_node(i)).all(|i| {
        (0..grid.dim()).all(|axis| {
            let m = grid.multi_index(i);
            let inward = if m[axis] == 0 { 1 } else { -1 };
            let on_face = m[axis] == 0 || m[axis] == grid.n_cells()[axis];
            match (on_face, grid.neighbor(i, axis, inward)) {
                (true, Some(j)) => v[i] >= v[j] - tol,
                _ => true,
            }
        })
    })
}

/// `(c_m, v, m)` for a static equilibrium `m`.
pub fn build_ergodic_triple(
    cost: &CostFunctional,
    m: &DiscreteMeasure,
    grid: &SpatialGrid,
    opts: &ErgodicOptions,
) -> Result<ErgodicTriple> {
    let res = residual(cost, m, grid);
    if res > opts.static_tol {
        return Err(MfgError::StaticResidual {
            residual: res,
            tol: opts.static_tol,
        });
    }
    let values = cost.slice(grid, m);
    let stats = stats_from_values(cost, &values, grid, opts.argmin_tol);
    let c = stats.c_m;
    let ell: Vec<f64> = stats.fbar.iter().map(|f| (2.0 * f).sqrt()).collect();
    let v = solve_eikonal(&ell, &stats.argmin_set, grid, opts.sweep_tol)?;

    let h = grid.max_spacing();
    let to_set = stats.argmin_set.distance_field()?;
    let mut hj: f64 = 0.0;
    for (i, &f) in values.iter().enumerate() {
        let x = grid.node(i);
        if to_set[i] > 2.0 * h && grid.distance_to_boundary(&x) > 2.0 * h {
            let g = grid.upwind_gradient_norm(&v, i);
            hj = hj.max((0.5 * g * g + c - f).abs());
        }
    }
    let cont = continuity_residual(&v, m, grid, &default_test_family(grid))?;
    let residuals = ErgodicResiduals {
        hj_residual: hj,
        continuity_residual: cont.value,
        continuity_family_size: cont.family_size,
        mather_residual: mather_identity_check(cost, m, grid),
        support_violation: support_distance(m, &stats.argmin_set, PRUNE_WEIGHT)?,
        outflow_consistent: outflow_consistent(&v, grid, opts.sweep_tol.max(1e-12)),
    };
    Ok(ErgodicTriple {
        c,
        v,
        m: m.clone(),
        dirichlet: stats.argmin_set,
        residuals,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ConverseReport {
    pub support_distance: f64,
    /// `c_m − c`; negative values violate `c ≤ c_m`.
    pub c_gap: f64,
    pub support_violation: bool,
    pub c_violation: bool,
}

impl ConverseReport {
    pub fn passed(&self) -> bool {
        !self.support_violation && !self.c_violation
    }
}

/// Necessary conditions on a triple: `supp m ⊆ argmin F(·, m)` and `c ≤ c_m`.
///
/// The argmin and `c_m` are recomputed from `cost`; the support check allows
/// one grid spacing, the value check `tol`.
pub fn converse_check(
    cost: &CostFunctional,
    triple: &ErgodicTriple,
    grid: &SpatialGrid,
    tol: f64,
) -> Result<ConverseReport> {
    let values = cost.slice(grid, &triple.m);
    let stats = stats_from_values(cost, &values, grid, None);
    let d = support_distance(&triple.m, &stats.argmin_set, PRUNE_WEIGHT)?;
    let c_gap = stats.c_m - triple.c;
    Ok(ConverseReport {
        support_distance: d,
        c_gap,
        support_violation: d > grid.max_spacing(),
        c_violation: triple.c > stats.c_m + tol,
    })
}

/// `|Σ_j w_j F(y_j, m) − c_m|`: the gap between the Lagrangian average of
/// `m ⊗ δ₀` and its minimum over resting states.
pub fn mather_identity_check(cost: &CostFunctional, m: &DiscreteMeasure, grid: &SpatialGrid) -> f64 {
    let c_m = critical_value(cost, m, grid);
    let avg: f64 = m.iter().map(|(y, w)| w * cost.evaluate(y, m)).sum();
    (avg - c_m).abs()
}
