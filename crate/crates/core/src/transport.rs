//! Exact Wasserstein-1 distance between discrete measures.
//!
//! 1D uses the CDF formula `∫ |F_a − F_b|`. In 2D the optimal transport linear
//! program is solved exactly: equal-weight clouds of equal size by the
//! Hungarian method, everything else by the transportation (network) simplex
//! seeded with the north-west corner rule.

use crate::error::{MfgError, Result};
use crate::grid::{dist, Point};
use crate::measure::DiscreteMeasure;

/// Default support-size cap for exact 2D transport with unequal weights.
pub const DEFAULT_ASSIGNMENT_CAP: usize = 512;

/// Options for [`wasserstein1_with`].
#[derive(Clone, Copy, Debug)]
pub struct W1Options {
    /// Support cap for the network simplex (unequal weights).
    pub cap: usize,
    /// Support cap for the assignment solver (equal weights, equal sizes).
    pub assignment_cap: usize,
}

impl Default for W1Options {
    fn default() -> Self {
        W1Options {
            cap: DEFAULT_ASSIGNMENT_CAP,
            assignment_cap: 4 * DEFAULT_ASSIGNMENT_CAP,
        }
    }
}

pub fn wasserstein1(a: &DiscreteMeasure, b: &DiscreteMeasure) -> Result<f64> {
    wasserstein1_with(a, b, W1Options::default())
}

pub fn wasserstein1_with(a: &DiscreteMeasure, b: &DiscreteMeasure, opts: W1Options) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(MfgError::InvalidMeasure(format!(
            "dimension mismatch ({} vs {})",
            a.dim(),
            b.dim()
        )));
    }
    for m in [a, b] {
        let total: f64 = m.weights().iter().sum();
        if (total - 1.0).abs() > crate::measure::MASS_TOL {
            return Err(MfgError::InvalidMeasure(format!("weights sum to {total}")));
        }
    }
    if a.dim() == 1 {
        return Ok(cdf_distance_1d(a, b));
    }
    let a = a.merged();
    let b = b.merged();
    if a == b {
        return Ok(0.0);
    }
    let equal_weights = |m: &DiscreteMeasure| {
        let w0 = m.weights()[0];
        m.weights().iter().all(|w| (w - w0).abs() <= 1e-12)
    };
    if a.len() == b.len() && equal_weights(&a) && equal_weights(&b) {
        if a.len() > opts.assignment_cap {
            return Err(MfgError::CapExceeded {
                cap: opts.assignment_cap,
                got: a.len(),
            });
        }
        let cost = cost_matrix(a.points(), b.points());
        let total = assignment_cost(&cost, a.len());
        return Ok(total / a.len() as f64);
    }
    let got = a.len().max(b.len());
    if got > opts.cap {
        return Err(MfgError::CapExceeded { cap: opts.cap, got });
    }
    let cost = cost_matrix(a.points(), b.points());
    transportation_simplex(a.weights(), b.weights(), &cost)
}

fn cost_matrix(xs: &[Point], ys: &[Point]) -> Vec<f64> {
    let mut c = Vec::with_capacity(xs.len() * ys.len());
    for x in xs {
        for y in ys {
            c.push(dist(x, y));
        }
    }
    c
}

/// `∫ |F_a(t) − F_b(t)| dt` by a sorted merge of both particle lists.
pub fn cdf_distance_1d(a: &DiscreteMeasure, b: &DiscreteMeasure) -> f64 {
    let mut events: Vec<(f64, f64)> = Vec::with_capacity(a.len() + b.len());
    events.extend(a.iter().map(|(p, w)| (p[0], w)));
    events.extend(b.iter().map(|(p, w)| (p[0], -w)));
    events.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut diff = 0.0;
    let mut total = 0.0;
    for k in 0..events.len() {
        diff += events[k].1;
        if let Some(next) = events.get(k + 1) {
            total += diff.abs() * (next.0 - events[k].0);
        }
    }
    total
}

/// Minimum-cost perfect matching on an `n × n` cost matrix (row-major),
/// by the shortest augmenting path Hungarian method with potentials. O(n³).
pub fn assignment_cost(cost: &[f64], n: usize) -> f64 {
    // 1-based arrays; column 0 is the virtual source.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut match_col = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        match_col[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = match_col[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[match_col[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if match_col[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            match_col[j0] = match_col[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    (1..=n).map(|j| cost[(match_col[j] - 1) * n + (j - 1)]).sum()
}

/// Optimal value of the balanced transportation problem
/// `min Σ c_ij x_ij` s.t. row sums `supply`, column sums `demand`, `x ≥ 0`.
///
/// Basic solutions are spanning trees of the bipartite graph rows ∪ columns;
/// pivots use the most negative reduced cost, falling back to Bland's rule
/// after a run of degenerate pivots.
pub fn transportation_simplex(supply: &[f64], demand: &[f64], cost: &[f64]) -> Result<f64> {
    let (n, m) = (supply.len(), demand.len());
    if n == 0 || m == 0 || cost.len() != n * m {
        return Err(MfgError::InvalidArgument("transportation problem has inconsistent shape".into()));
    }
    if n == 1 {
        return Ok((0..m).map(|j| cost[j] * demand[j]).sum());
    }
    if m == 1 {
        return Ok((0..n).map(|i| cost[i] * supply[i]).sum());
    }

    // North-west corner basis: a staircase path of n + m − 1 cells.
    let mut basis: Vec<(usize, usize)> = Vec::with_capacity(n + m - 1);
    let mut flow: Vec<f64> = Vec::with_capacity(n + m - 1);
    let mut rem_a = supply.to_vec();
    let mut rem_b = demand.to_vec();
    let (mut i, mut j) = (0, 0);
    loop {
        let q = rem_a[i].min(rem_b[j]).max(0.0);
        basis.push((i, j));
        flow.push(q);
        rem_a[i] -= q;
        rem_b[j] -= q;
        if i == n - 1 && j == m - 1 {
            break;
        }
        if j == m - 1 || (i < n - 1 && rem_a[i] <= rem_b[j]) {
            i += 1;
        } else {
            j += 1;
        }
    }

    let scale = cost.iter().fold(0.0f64, |acc, c| acc.max(c.abs())).max(1.0);
    let eps = 1e-12 * scale;
    let max_pivots = 50 * (n + m) * (n + m) + 1000;
    let mut degenerate_run = 0usize;
    let mut in_basis = vec![false; n * m];
    for &(r, c) in &basis {
        in_basis[r * m + c] = true;
    }

    for _ in 0..max_pivots {
        // Adjacency of the basis tree: nodes 0..n are rows, n..n+m columns.
        let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n + m];
        for (k, &(r, c)) in basis.iter().enumerate() {
            adj[r].push((n + c, k));
            adj[n + c].push((r, k));
        }
        // Potentials u_r + v_c = c_rc on basic cells.
        let mut pot = vec![f64::NAN; n + m];
        pot[0] = 0.0;
        let mut stack = vec![0usize];
        while let Some(node) = stack.pop() {
            for &(nb, k) in &adj[node] {
                if pot[nb].is_nan() {
                    let (r, c) = basis[k];
                    pot[nb] = cost[r * m + c] - pot[node];
                    stack.push(nb);
                }
            }
        }
        if pot.iter().any(|p| p.is_nan()) {
            return Err(MfgError::InvalidArgument("transportation basis is not a spanning tree".into()));
        }

        let bland = degenerate_run > n + m;
        let mut entering: Option<(usize, usize)> = None;
        let mut best = -eps;
        'scan: for r in 0..n {
            for c in 0..m {
                if in_basis[r * m + c] {
                    continue;
                }
                let reduced = cost[r * m + c] - pot[r] - pot[n + c];
                if reduced < best {
                    entering = Some((r, c));
                    if bland {
                        break 'scan;
                    }
                    best = reduced;
                }
            }
        }
        let Some((er, ec)) = entering else {
            return Ok(basis
                .iter()
                .zip(&flow)
                .map(|(&(r, c), &x)| cost[r * m + c] * x)
                .sum());
        };

        // Tree path from column ec to row er; cycle signs alternate starting with −.
        let target = er;
        let start = n + ec;
        let mut parent: Vec<Option<(usize, usize)>> = vec![None; n + m];
        let mut seen = vec![false; n + m];
        seen[start] = true;
        let mut queue = std::collections::VecDeque::from([start]);
        while let Some(node) = queue.pop_front() {
            if node == target {
                break;
            }
            for &(nb, k) in &adj[node] {
                if !seen[nb] {
                    seen[nb] = true;
                    parent[nb] = Some((node, k));
                    queue.push_back(nb);
                }
            }
        }
        let mut path_edges = Vec::new();
        let mut node = target;
        while node != start {
            let (prev, k) = parent[node].expect("basis tree is connected");
            path_edges.push(k);
            node = prev;
        }
        path_edges.reverse(); // now ordered from the column end

        let mut theta = f64::INFINITY;
        let mut leave = usize::MAX;
        for (pos, &k) in path_edges.iter().enumerate() {
            if pos % 2 == 0 && flow[k] < theta {
                theta = flow[k];
                leave = k;
            }
        }
        for (pos, &k) in path_edges.iter().enumerate() {
            if pos % 2 == 0 {
                flow[k] = (flow[k] - theta).max(0.0);
            } else {
                flow[k] += theta;
            }
        }
        degenerate_run = if theta <= 0.0 { degenerate_run + 1 } else { 0 };
        let (lr, lc) = basis[leave];
        in_basis[lr * m + lc] = false;
        in_basis[er * m + ec] = true;
        basis[leave] = (er, ec);
        flow[leave] = theta;
    }
    Err(MfgError::NoConvergence {
        solver: "transportation simplex",
        iterations: max_pivots,
        residual: f64::NAN,
    })
}
