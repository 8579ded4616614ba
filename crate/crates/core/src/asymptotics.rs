//! Long-horizon behaviour of finite-horizon equilibria: sweeps over `T`
//! recording support collapse onto `𝒜`, the `C(R)/T` value rate, occupation
//! times and, when `𝒜 = {x*}`, the weak KAM limit `u^T − c*T(1−s) → v`.

use log::warn;
use rayon::prelude::*;
use serde::Serialize;

use crate::cost::{argmin_union, CostFunctional};
use crate::ergodic::{build_ergodic_triple, ErgodicOptions};
use crate::error::{MfgError, Result};
use crate::grid::{dist, norm, NodeSet, Point, SpatialGrid};
use crate::horizon::{
    a_priori_report, checkpoint_indices, solve_mfg, APrioriReport, MfgEquilibrium, MfgOptions, OccupationMask,
};
use crate::measure::{support_distance, DiscreteMeasure, PRUNE_WEIGHT};
use crate::transport::wasserstein1;

/// Multiplicative slack for "decreasing in `T`" checks.
pub const MONOTONE_SLACK: f64 = 1.25;

/// Absolute floor below which two sweep values are treated as equal.
const NOISE_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepParams {
    pub t_list: Vec<f64>,
    pub s_grid: Vec<f64>,
    pub mfg: MfgOptions,
    /// Radius `R` of the ball on which value errors are measured.
    pub radius: f64,
    /// Level `δ` of the occupational statistics.
    pub delta: f64,
}

impl SweepParams {
    pub fn new(mfg: MfgOptions) -> Self {
        SweepParams {
            t_list: vec![5.0, 10.0, 20.0, 40.0],
            s_grid: vec![0.1, 0.25, 0.5, 0.75, 1.0],
            mfg,
            radius: 1.0,
            delta: 0.1,
        }
    }
}

/// Quantities at one `s` of one horizon `T`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepPoint {
    pub s: f64,
    /// Lattice time actually used (nearest to `sT`).
    pub time: f64,
    pub support_dist: f64,
    /// `d₁(m^T(sT), δ_{x*})` when `𝒜 = {x*}`.
    pub d1_to_limit: Option<f64>,
    /// `sup_{|x|≤R} |u^T(x, sT)/T − c*(1−s)|`.
    pub value_rate_err: f64,
    /// `sup_{|x|≤R} |u^T(x, sT) − c*T(1−s) − v(x)|` when `𝒜 = {x*}`.
    pub wkam_err: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepRecord {
    pub t: f64,
    pub points: Vec<SweepPoint>,
    /// The fixed point did not reach its tolerance.
    pub tainted: bool,
    /// `𝒜` and `c*` were estimated from the computed paths.
    pub estimated: bool,
    pub c_star: f64,
    pub iterations: usize,
    pub fixed_point_residual: f64,
    pub best_response_gap: f64,
    /// `max_j ρ_j·T·δ / d(x_j)` over initial particles off `𝒜`.
    pub occupational_ratio: f64,
    pub chi: f64,
    pub chi_prime: f64,
    /// Largest distance from the core (or `𝒜`) reached by any particle.
    pub r1: f64,
    pub a_priori: APrioriReport,
    /// Range of `F` over the slices seen by the backward solve.
    pub f_range: (f64, f64),
    /// `u^T(·, sT)` per `s`.
    #[serde(skip)]
    pub values: Vec<Vec<f64>>,
    /// `m^T(sT)` per `s`.
    #[serde(skip)]
    pub measures: Vec<DiscreteMeasure>,
}

impl SweepRecord {
    pub fn point_near(&self, s: f64) -> Option<&SweepPoint> {
        self.points
            .iter()
            .min_by(|a, b| (a.s - s).abs().total_cmp(&(b.s - s).abs()))
    }

    /// `T · max_s value_rate_err`.
    pub fn scaled_rate(&self) -> f64 {
        self.t * self.points.iter().map(|p| p.value_rate_err).fold(0.0, f64::max)
    }
}

/// `seq[i+1] ≤ slack·seq[i]` for all `i`, up to a noise floor.
pub fn non_increasing_with_slack(seq: &[f64], slack: f64) -> bool {
    seq.windows(2).all(|w| w[1] <= slack * w[0] + NOISE_FLOOR)
}

/// `max/min` of a positive sequence (`∞` if some entry is not positive).
pub fn spread_ratio(seq: &[f64]) -> f64 {
    let lo = seq.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = seq.iter().copied().fold(0.0, f64::max);
    if lo > 0.0 {
        hi / lo
    } else {
        f64::INFINITY
    }
}

/// `𝒜` and `c*` from metadata, or estimated over the computed paths.
struct Target {
    set: NodeSet,
    c_star: f64,
    estimated: bool,
}

fn target_from_metadata(cost: &CostFunctional, grid: &SpatialGrid) -> Option<(NodeSet, f64)> {
    let set = cost.analytic_argmin_nodes(grid)?;
    let c = cost.meta().analytic_c_star?;
    Some((set, c))
}

fn estimate_target(cost: &CostFunctional, eq: &MfgEquilibrium, grid: &SpatialGrid) -> Result<Target> {
    let samples: Vec<DiscreteMeasure> = checkpoint_indices(eq.path.len() - 1)
        .into_iter()
        .map(|i| eq.path.at(i).merged())
        .collect();
    let set = argmin_union(cost, &samples, grid, None)?;
    let c_star = samples
        .iter()
        .map(|m| crate::static_game::critical_value(cost, m, grid))
        .fold(f64::INFINITY, f64::min);
    Ok(Target {
        set,
        c_star,
        estimated: true,
    })
}

fn core_distance(cost: &CostFunctional, set: &NodeSet, p: &Point, dim: usize) -> Result<f64> {
    match cost.meta().core_box {
        Some((lo, hi)) => {
            let mut d2 = 0.0;
            for a in 0..dim {
                let e = (lo[a] - p[a]).max(p[a] - hi[a]).max(0.0);
                d2 += e * e;
            }
            Ok(d2.sqrt())
        }
        None => set.distance(p),
    }
}

fn singleton(set: &NodeSet) -> Option<Point> {
    (set.len() == 1).then(|| set.points()[0])
}

fn record_for(
    cost: &CostFunctional,
    m0: &DiscreteMeasure,
    horizon: f64,
    grid: &SpatialGrid,
    params: &SweepParams,
    v_erg: Option<&[f64]>,
) -> Result<SweepRecord> {
    let eq = solve_mfg(cost, m0, horizon, grid, &params.mfg)?;
    let target = match target_from_metadata(cost, grid) {
        Some((set, c_star)) => Target {
            set,
            c_star,
            estimated: false,
        },
        None => estimate_target(cost, &eq, grid)?,
    };
    let x_star = singleton(&target.set);
    let ball: Vec<usize> = (0..grid.n_nodes())
        .filter(|&i| norm(&grid.node(i)) <= params.radius + 1e-12)
        .collect();

    let mut points = Vec::with_capacity(params.s_grid.len());
    let mut values = Vec::with_capacity(params.s_grid.len());
    let mut measures = Vec::with_capacity(params.s_grid.len());
    for &s in &params.s_grid {
        let n = eq.value.index_near(s * horizon);
        let time = eq.value.times[n];
        let u = &eq.value.values[n];
        let remaining = horizon - time;
        let m = eq.path.at(n).merged();
        let value_rate_err = ball
            .iter()
            .map(|&i| (u[i] / horizon - target.c_star * remaining / horizon).abs())
            .fold(0.0, f64::max);
        let wkam_err = v_erg.map(|v| {
            ball.iter()
                .map(|&i| (u[i] - target.c_star * remaining - v[i]).abs())
                .fold(0.0, f64::max)
        });
        let d1_to_limit = match x_star {
            Some(x) => Some(wasserstein1(&m, &DiscreteMeasure::dirac(grid.dim(), x))?),
            None => None,
        };
        points.push(SweepPoint {
            s,
            time,
            support_dist: support_distance(&m, &target.set, PRUNE_WEIGHT)?,
            d1_to_limit,
            value_rate_err,
            wkam_err,
        });
        values.push(u.clone());
        measures.push(m);
    }

    let mask = OccupationMask::new(cost, &eq.path, params.delta, grid);
    let mut occupational_ratio: f64 = 0.0;
    let mut r1: f64 = 0.0;
    for j in 0..eq.response.n_particles() {
        let traj = eq.response.trajectory(j);
        let d0 = target.set.distance(&traj[0])?;
        if d0 > 0.0 {
            occupational_ratio = occupational_ratio.max(mask.fraction(&traj) * horizon * params.delta / d0);
        }
        for y in &traj {
            r1 = r1.max(core_distance(cost, &target.set, y, grid.dim())?);
        }
    }
    if !eq.converged {
        warn!(
            "T = {horizon}: fixed point stopped at residual {:.3e} after {} rounds",
            eq.fixed_point_residual, eq.iterations
        );
    }
    Ok(SweepRecord {
        t: horizon,
        points,
        tainted: !eq.converged,
        estimated: target.estimated,
        c_star: target.c_star,
        iterations: eq.iterations,
        fixed_point_residual: eq.fixed_point_residual,
        best_response_gap: eq.best_response_gap,
        occupational_ratio,
        chi: eq.stats.chi,
        chi_prime: eq.stats.chi_prime,
        r1,
        a_priori: a_priori_report(&eq.value),
        f_range: eq.value.f_range,
        values,
        measures,
    })
}

/// Ergodic corrector for `δ_{x*}` when metadata pins `𝒜 = {x*}`.
fn singleton_corrector(cost: &CostFunctional, grid: &SpatialGrid) -> Result<Option<Vec<f64>>> {
    let Some((set, _)) = target_from_metadata(cost, grid) else {
        return Ok(None);
    };
    let Some(x) = singleton(&set) else {
        return Ok(None);
    };
    let triple = build_ergodic_triple(
        cost,
        &DiscreteMeasure::dirac(grid.dim(), x),
        grid,
        &ErgodicOptions::default(),
    )?;
    Ok(Some(triple.v))
}

/// Solve the MFG for every `T` in `params.t_list` and record the sweep quantities.
///
/// A fixed point that misses its tolerance marks its record tainted; other
/// solver errors abort the sweep.
pub fn run_sweep(
    cost: &CostFunctional,
    m0: &DiscreteMeasure,
    grid: &SpatialGrid,
    params: &SweepParams,
) -> Result<Vec<SweepRecord>> {
    if params.t_list.is_empty() || params.s_grid.iter().any(|s| !(*s > 0.0 && *s <= 1.0)) {
        return Err(MfgError::InvalidArgument(
            "sweep needs at least one horizon and s-values in (0, 1]".into(),
        ));
    }
    let v_erg = singleton_corrector(cost, grid)?;
    params
        .t_list
        .par_iter()
        .map(|&t| record_for(cost, m0, t, grid, params, v_erg.as_deref()))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SingletonOptions {
    /// Cap on `wkam_err` at the largest `T`.
    pub wkam_cap: f64,
    /// `s` at which the cap is applied.
    pub wkam_s: f64,
    /// Smallest `s` whose sequences must decrease in `T`.
    pub s_min: f64,
}

impl Default for SingletonOptions {
    fn default() -> Self {
        SingletonOptions {
            wkam_cap: 5e-2,
            wkam_s: 0.5,
            s_min: 0.25,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SingletonRow {
    pub t: f64,
    pub s: f64,
    pub wkam_err: f64,
    pub d1_to_limit: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SingletonReport {
    pub rows: Vec<SingletonRow>,
    pub d1_decreasing: bool,
    pub wkam_decreasing: bool,
    /// `wkam_err` at the largest `T` and `s = wkam_s`.
    pub final_wkam_err: f64,
    pub wkam_within_cap: bool,
    /// `wkam_err` at `x*` alone, per row.
    pub wkam_at_x_star: Vec<f64>,
}

impl SingletonReport {
    pub fn passed(&self) -> bool {
        self.d1_decreasing && self.wkam_decreasing && self.wkam_within_cap
    }
}

/// Weak KAM and Dirac-limit checks for a sweep on a cost with `𝒜 = {x*}`.
pub fn singleton_limit_check(
    cost: &CostFunctional,
    records: &[SweepRecord],
    x_star: &Point,
    grid: &SpatialGrid,
    opts: &SingletonOptions,
) -> Result<SingletonReport> {
    let pinned = cost
        .meta()
        .analytic_argmin
        .as_ref()
        .is_some_and(|a| a.len() == 1 && dist(&a[0], x_star) <= 1e-12);
    if !pinned {
        return Err(MfgError::Precondition(format!(
            "{}: argmin is not the singleton {{({}, {})}}",
            cost.name(),
            x_star[0],
            x_star[1]
        )));
    }
    if records.is_empty() {
        return Err(MfgError::Precondition("empty sweep".into()));
    }
    let c_star = cost.meta().analytic_c_star.unwrap_or(records[0].c_star);
    let v_erg = build_ergodic_triple(
        cost,
        &DiscreteMeasure::dirac(grid.dim(), *x_star),
        grid,
        &ErgodicOptions::default(),
    )?
    .v;
    let star = grid.nearest_node(x_star);

    let mut sorted: Vec<&SweepRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.t.total_cmp(&b.t));
    let mut rows = Vec::new();
    let mut at_star = Vec::new();
    for r in &sorted {
        for (k, p) in r.points.iter().enumerate() {
            let remaining = r.t - p.time;
            let wkam = p.wkam_err.ok_or_else(|| {
                MfgError::Precondition(format!("record T = {} carries no weak KAM error", r.t))
            })?;
            let d1 = p
                .d1_to_limit
                .ok_or_else(|| MfgError::Precondition(format!("record T = {} carries no limit distance", r.t)))?;
            at_star.push((r.values[k][star] - c_star * remaining - v_erg[star]).abs());
            rows.push(SingletonRow {
                t: r.t,
                s: p.s,
                wkam_err: wkam,
                d1_to_limit: d1,
            });
        }
    }
    let s_values: Vec<f64> = sorted[0].points.iter().map(|p| p.s).filter(|s| *s >= opts.s_min).collect();
    let series = |s: f64, pick: fn(&SingletonRow) -> f64| -> Vec<f64> {
        rows.iter().filter(|r| r.s == s).map(pick).collect()
    };
    let d1_decreasing = s_values
        .iter()
        .all(|&s| non_increasing_with_slack(&series(s, |r| r.d1_to_limit), MONOTONE_SLACK));
    let wkam_decreasing = s_values
        .iter()
        .filter(|&&s| s < 1.0)
        .all(|&s| non_increasing_with_slack(&series(s, |r| r.wkam_err), MONOTONE_SLACK));
    let last = sorted[sorted.len() - 1];
    let final_wkam_err = last
        .point_near(opts.wkam_s)
        .and_then(|p| p.wkam_err)
        .unwrap_or(f64::INFINITY);
    Ok(SingletonReport {
        rows,
        d1_decreasing,
        wkam_decreasing,
        final_wkam_err,
        wkam_within_cap: final_wkam_err <= opts.wkam_cap,
        wkam_at_x_star: at_star,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SemilimitReport {
    pub s_grid: Vec<f64>,
    #[serde(skip)]
    pub lower: Vec<Vec<f64>>,
    #[serde(skip)]
    pub upper: Vec<Vec<f64>>,
    /// `sup_x (F_upper − F_lower)` per `s`.
    pub gap: Vec<f64>,
}

impl SemilimitReport {
    /// `F_* = F^*` declared met at every `s` where the gap is within `tol`.
    pub fn met(&self, tol: f64) -> Vec<bool> {
        self.gap.iter().map(|g| *g <= tol).collect()
    }
}

/// Pointwise min/max of `F(x, m^T(sT))` over the two largest `T` and the
/// neighbouring `s` on the grid: finite surrogates of the relaxed semilimits.
pub fn semilimit_surrogates(
    records: &[SweepRecord],
    cost: &CostFunctional,
    grid: &SpatialGrid,
) -> Result<SemilimitReport> {
    if records.len() < 3 {
        return Err(MfgError::Precondition(format!(
            "semilimit surrogates need at least 3 horizons (got {})",
            records.len()
        )));
    }
    let mut sorted: Vec<&SweepRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.t.total_cmp(&b.t));
    let top = &sorted[sorted.len() - 2..];
    let s_grid: Vec<f64> = top[1].points.iter().map(|p| p.s).collect();
    if top[0].measures.len() != s_grid.len() || top[1].measures.len() != s_grid.len() {
        return Err(MfgError::Precondition("records carry different s-grids".into()));
    }
    let slices: Vec<Vec<Vec<f64>>> = top
        .iter()
        .map(|r| r.measures.iter().map(|m| cost.slice(grid, m)).collect())
        .collect();
    let mut lower = Vec::with_capacity(s_grid.len());
    let mut upper = Vec::with_capacity(s_grid.len());
    let mut gap = Vec::with_capacity(s_grid.len());
    for k in 0..s_grid.len() {
        let neighbours = k.saturating_sub(1)..=(k + 1).min(s_grid.len() - 1);
        let mut lo = vec![f64::INFINITY; grid.n_nodes()];
        let mut hi = vec![f64::NEG_INFINITY; grid.n_nodes()];
        for per_t in &slices {
            for j in neighbours.clone() {
                for (i, v) in per_t[j].iter().enumerate() {
                    lo[i] = lo[i].min(*v);
                    hi[i] = hi[i].max(*v);
                }
            }
        }
        gap.push(lo.iter().zip(&hi).map(|(l, h)| h - l).fold(0.0, f64::max));
        lower.push(lo);
        upper.push(hi);
    }
    Ok(SemilimitReport {
        s_grid,
        lower,
        upper,
        gap,
    })
}
