//! Static equilibria: measures supported on the argmin of their own cost slice.
//!
//! The solver is damped best-response (fictitious play) iteration on particle
//! measures; equilibria are certified by the integral residual
//! `∫ [F(x, m) − min F(·, m)] dm(x)`, which vanishes exactly on solutions.

use serde::{Deserialize, Serialize};

use crate::cost::{default_argmin_tol, stats_from_values, CostFunctional};
use crate::error::{MfgError, Result};
use crate::grid::{NodeSet, SpatialGrid};
use crate::measure::DiscreteMeasure;
use crate::transport::wasserstein1;

/// Mixing weights `λ_k` for `m^{k+1} = (1 − λ_k) m^k + λ_k·BR(m^k)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "lambda")]
pub enum DampingSchedule {
    /// `λ_k = 1/(k + 1)`: fictitious-play averaging. `λ_0 = 1` discards the initial guess.
    #[default]
    Harmonic,
    /// Fixed `λ ∈ (0, 1]`; `1` is pure best response.
    Constant(f64),
}

impl DampingSchedule {
    pub fn lambda(&self, k: usize) -> f64 {
        match *self {
            DampingSchedule::Harmonic => 1.0 / (k as f64 + 1.0),
            DampingSchedule::Constant(l) => l,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            DampingSchedule::Constant(l) if !(l > 0.0 && l <= 1.0) => Err(MfgError::InvalidArgument(
                format!("damping λ = {l} must lie in (0, 1]"),
            )),
            _ => Ok(()),
        }
    }
}

/// How a best response is selected from the (set-valued) argmin.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BestResponseRule {
    /// Uniform measure on the grid-tolerant argmin nodes.
    #[default]
    Uniform,
    /// Move every particle of the current measure to its nearest argmin node.
    Projection,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StaticOptions {
    pub damping: DampingSchedule,
    pub tol: f64,
    pub max_iter: usize,
    /// Argmin tolerance for best responses; `None` uses `min(ε_min, tol/10)`.
    pub argmin_tol: Option<f64>,
    pub rule: BestResponseRule,
}

impl Default for StaticOptions {
    fn default() -> Self {
        StaticOptions {
            damping: DampingSchedule::Harmonic,
            tol: 1e-6,
            max_iter: 500,
            argmin_tol: None,
            rule: BestResponseRule::Uniform,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StaticIterate {
    pub iter: usize,
    pub residual: f64,
    /// `d₁(m^{k+1}, m^k)`; NaN when the exact distance was skipped (2D size cap).
    pub d1_step: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Residual,
    Stalled,
    MaxIter,
}

#[derive(Clone, Debug)]
pub struct StaticSolution {
    pub measure: DiscreteMeasure,
    pub residual: f64,
    pub converged: bool,
    pub stop: StopReason,
    pub log: Vec<StaticIterate>,
}

/// `min(min over nodes, min over particles)` of `F(·, m)`.
///
/// Including particle positions keeps the residual nonnegative when particles
/// sit off the grid.
pub fn critical_value(cost: &CostFunctional, m: &DiscreteMeasure, grid: &SpatialGrid) -> f64 {
    let grid_min = cost.slice(grid, m).into_iter().fold(f64::INFINITY, f64::min);
    m.points()
        .iter()
        .map(|y| cost.evaluate(y, m))
        .fold(grid_min, f64::min)
}

/// `Σ_j w_j (F(y_j, m) − c_m)`.
pub fn residual(cost: &CostFunctional, m: &DiscreteMeasure, grid: &SpatialGrid) -> f64 {
    let c_m = critical_value(cost, m, grid);
    m.iter()
        .map(|(y, w)| w * (cost.evaluate(y, m) - c_m))
        .sum::<f64>()
        .max(0.0)
}

/// A best response to `m`: a measure supported on the grid argmin of `F(·, m)`.
pub fn best_response(
    cost: &CostFunctional,
    m: &DiscreteMeasure,
    grid: &SpatialGrid,
    argmin_tol: f64,
    rule: BestResponseRule,
) -> Result<DiscreteMeasure> {
    let values = cost.slice(grid, m);
    let stats = stats_from_values(cost, &values, grid, Some(argmin_tol));
    let set: &NodeSet = &stats.argmin_set;
    let br = match rule {
        BestResponseRule::Uniform => DiscreteMeasure::uniform(grid.dim(), set.points())?,
        BestResponseRule::Projection => {
            let targets = set.points();
            let points = m
                .points()
                .iter()
                .map(|y| {
                    *targets
                        .iter()
                        .min_by(|a, b| crate::grid::dist(y, a).total_cmp(&crate::grid::dist(y, b)))
                        .expect("argmin is nonempty")
                })
                .collect();
            DiscreteMeasure::new(grid.dim(), points, m.weights().to_vec())?.merged()
        }
    };
    Ok(br)
}

/// Damped best-response iteration from `init`.
///
/// Stops when the residual drops to `tol` or the iterate moves less than `tol`
/// in `d₁`; returns the iterate with the smallest residual. Failure to reach
/// `tol` is reported in the result, not as an error.
pub fn solve_static(
    cost: &CostFunctional,
    grid: &SpatialGrid,
    init: &DiscreteMeasure,
    opts: &StaticOptions,
) -> Result<StaticSolution> {
    opts.damping.validate()?;
    init.check_in_box(grid)?;
    let mut m = init.clone();
    let mut best = (m.clone(), residual(cost, &m, grid));
    let mut log = Vec::new();
    let mut stop = StopReason::MaxIter;
    for k in 0..opts.max_iter {
        let res = residual(cost, &m, grid);
        if res < best.1 {
            best = (m.clone(), res);
        }
        if res <= opts.tol {
            log.push(StaticIterate {
                iter: k,
                residual: res,
                d1_step: 0.0,
            });
            stop = StopReason::Residual;
            break;
        }
        let eps = opts.argmin_tol.unwrap_or_else(|| {
            let values = cost.slice(grid, &m);
            default_argmin_tol(&values, grid).min(0.1 * opts.tol)
        });
        let br = best_response(cost, &m, grid, eps, opts.rule)?;
        let next = m.mixture(&br, opts.damping.lambda(k))?;
        let step = match wasserstein1(&next, &m) {
            Ok(d) => d,
            Err(MfgError::CapExceeded { .. }) => f64::NAN,
            Err(e) => return Err(e),
        };
        log.push(StaticIterate {
            iter: k,
            residual: res,
            d1_step: step,
        });
        m = next;
        if step <= opts.tol {
            let res = residual(cost, &m, grid);
            if res < best.1 {
                best = (m.clone(), res);
            }
            stop = if res <= opts.tol {
                StopReason::Residual
            } else {
                StopReason::Stalled
            };
            break;
        }
    }
    if stop == StopReason::MaxIter {
        let res = residual(cost, &m, grid);
        if res < best.1 {
            best = (m, res);
        }
    }
    let (measure, res) = best;
    Ok(StaticSolution {
        converged: res <= opts.tol,
        measure,
        residual: res,
        stop,
        log,
    })
}
