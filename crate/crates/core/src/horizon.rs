//! Finite-horizon MFG: backward semi-Lagrangian HJB for `u`, forward particle
//! transport along the optimal feedback, and a damped fixed-point iteration on
//! measure paths.

use log::{debug, warn};
use rayon::prelude::*;
use serde::Serialize;

use crate::cost::CostFunctional;
use crate::error::{MfgError, Result};
use crate::grid::{norm, Point, SpatialGrid};
use crate::measure::{DiscreteMeasure, MeasurePath};
use crate::static_game::DampingSchedule;
use crate::transport::{wasserstein1, W1Options};

/// Relative slack below which a later control does not replace the current best.
const TIE_TOL: f64 = 1e-12;

/// Number of equispaced checkpoint times (endpoints included).
pub const CHECKPOINTS: usize = 9;

/// Finite control set `{α : |α| ≤ radius}` on a lattice of pitch `pitch`,
/// ordered by `|α|` then lexicographically.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlLattice {
    radius: f64,
    pitch: f64,
    controls: Vec<Point>,
}

impl ControlLattice {
    pub fn new(dim: usize, radius: f64, pitch: f64) -> Result<Self> {
        if !(radius >= 0.0 && pitch > 0.0 && radius.is_finite()) {
            return Err(MfgError::InvalidArgument(format!(
                "control lattice needs radius ≥ 0 and pitch > 0 (got {radius}, {pitch})"
            )));
        }
        let k = (radius / pitch).floor() as i64;
        let mut controls = Vec::new();
        for i in -k..=k {
            let a = i as f64 * pitch;
            if dim == 1 {
                controls.push([a, 0.0]);
                continue;
            }
            for j in -k..=k {
                let b = j as f64 * pitch;
                if a * a + b * b <= radius * radius * (1.0 + 1e-12) {
                    controls.push([a, b]);
                }
            }
        }
        controls.sort_by(|p, q| {
            norm(p)
                .total_cmp(&norm(q))
                .then(p[0].total_cmp(&q[0]))
                .then(p[1].total_cmp(&q[1]))
        });
        Ok(ControlLattice { radius, pitch, controls })
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn pitch(&self) -> f64 {
        self.pitch
    }

    pub fn controls(&self) -> &[Point] {
        &self.controls
    }

    pub fn len(&self) -> usize {
        self.controls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.controls.is_empty()
    }
}

/// Discretization of the backward/forward solves.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct HjbOptions {
    pub dt: f64,
    /// Defaults to `√(4M) + 1`.
    pub control_radius: Option<f64>,
    /// Defaults to `max(h, √Δt)/2`.
    pub control_mesh: Option<f64>,
}

impl HjbOptions {
    pub fn new(dt: f64) -> Self {
        HjbOptions {
            dt,
            control_radius: None,
            control_mesh: None,
        }
    }

    pub fn lattice(&self, cost: &CostFunctional, grid: &SpatialGrid) -> Result<ControlLattice> {
        let floor = (4.0 * cost.meta().m_bound).sqrt();
        let radius = self.control_radius.unwrap_or(floor + 1.0);
        if radius < floor {
            return Err(MfgError::Precondition(format!(
                "control radius {radius} is below √(4M) = {floor}"
            )));
        }
        let pitch = self
            .control_mesh
            .unwrap_or(0.5 * grid.max_spacing().max(self.dt.sqrt()));
        ControlLattice::new(grid.dim(), radius, pitch)
    }
}

/// `N` with `N·Δt = T`, or an error naming both quantities.
pub fn step_count(horizon: f64, dt: f64) -> Result<usize> {
    if !(horizon > 0.0 && dt > 0.0) {
        return Err(MfgError::InvalidArgument(format!("need T > 0 and Δt > 0 (T = {horizon}, Δt = {dt})")));
    }
    let n = (horizon / dt).round();
    if n < 1.0 || (n * dt - horizon).abs() > 1e-9 * horizon.max(1.0) {
        return Err(MfgError::InvalidArgument(format!(
            "Δt = {dt} does not divide T = {horizon}"
        )));
    }
    Ok(n as usize)
}

/// `u` on the space-time lattice with its minimizing controls.
#[derive(Clone, Debug)]
pub struct ValueField {
    pub grid: SpatialGrid,
    pub dt: f64,
    pub times: Vec<f64>,
    /// `values[n]` is `u(·, t_n)`; `values[N] ≡ 0`.
    pub values: Vec<Vec<f64>>,
    /// `policy[n]` is the argmin control at each node for the step `t_n → t_{n+1}`.
    pub policy: Vec<Vec<Point>>,
    pub controls: ControlLattice,
    /// Range of `F(x, m(t_n))` over nodes and steps.
    pub f_range: (f64, f64),
}

impl ValueField {
    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn n_steps(&self) -> usize {
        self.policy.len()
    }

    /// Index of the lattice time nearest to `t`.
    pub fn index_near(&self, t: f64) -> usize {
        ((t / self.dt).round().max(0.0) as usize).min(self.n_steps())
    }

    /// Minimizer of `Δt|α|²/2 + u(y + Δtα, t_{n+1})` at an arbitrary point.
    pub fn control_at(&self, n: usize, y: &Point) -> Result<Point> {
        best_control(&self.grid, &self.controls, self.dt, &self.values[n + 1], y).map(|(_, a)| a)
    }
}

/// `(min value, argmin)` of `Δt|α|²/2 + interp(next, y + Δtα)` over the lattice.
fn best_control(
    grid: &SpatialGrid,
    lattice: &ControlLattice,
    dt: f64,
    next: &[f64],
    y: &Point,
) -> Result<(f64, Point)> {
    let dim = grid.dim();
    let lo = [grid.lower()[0], if dim == 2 { grid.lower()[1] } else { 0.0 }];
    let hi = [grid.upper()[0], if dim == 2 { grid.upper()[1] } else { 0.0 }];
    let h = [grid.spacing(0), if dim == 2 { grid.spacing(1) } else { 0.0 }];
    let mut best = f64::INFINITY;
    let mut arg = None;
    for a in lattice.controls() {
        let foot = [y[0] + dt * a[0], y[1] + dt * a[1]];
        if (0..dim).any(|k| !(foot[k] >= lo[k] - h[k] && foot[k] <= hi[k] + h[k])) {
            continue;
        }
        let q = [foot[0].clamp(lo[0], hi[0]), foot[1].clamp(lo[1], hi[1])];
        let val = 0.5 * dt * (a[0] * a[0] + a[1] * a[1]) + grid.interpolate_clamped(next, &q);
        if val < best - TIE_TOL * (1.0 + best.abs()) || arg.is_none() {
            best = val;
            arg = Some(*a);
        }
    }
    arg.map(|a| (best, a)).ok_or(MfgError::DomainEscape { point: *y })
}

fn checked_lattice(path: &MeasurePath, dt: f64) -> Result<usize> {
    let n = step_count(path.horizon(), dt)?;
    let aligned = path.len() == n + 1
        && path
            .times()
            .iter()
            .enumerate()
            .all(|(i, t)| (t - i as f64 * dt).abs() <= 1e-9 * path.horizon().max(1.0));
    if !aligned {
        return Err(MfgError::InvalidArgument(format!(
            "path times do not match the Δt = {dt} lattice on [0, {}]",
            path.horizon()
        )));
    }
    Ok(n)
}

/// Backward recursion
/// `u(x, t_n) = min_α [Δt(|α|²/2 + F(x, m(t_n))) + u(x + Δtα, t_{n+1})]`, `u(·, T) = 0`.
///
/// Controls whose foot point falls beyond the clamp margin are skipped.
pub fn solve_hjb_backward(
    cost: &CostFunctional,
    path: &MeasurePath,
    grid: &SpatialGrid,
    opts: &HjbOptions,
) -> Result<ValueField> {
    let dt = opts.dt;
    let n_steps = checked_lattice(path, dt)?;
    let lattice = opts.lattice(cost, grid)?;
    let nodes: Vec<Point> = grid.nodes().collect();
    let mut values = vec![vec![0.0; grid.n_nodes()]; n_steps + 1];
    let mut policy = vec![Vec::new(); n_steps];
    let mut f_range = (f64::INFINITY, f64::NEG_INFINITY);
    let static_slice = if cost.is_measure_independent() {
        Some(cost.slice(grid, path.at(0)))
    } else {
        None
    };
    for n in (0..n_steps).rev() {
        let f = match &static_slice {
            Some(s) => s.clone(),
            None => cost.slice(grid, &path.at(n).merged()),
        };
        for v in &f {
            f_range.0 = f_range.0.min(*v);
            f_range.1 = f_range.1.max(*v);
        }
        let next = &values[n + 1];
        let step: Vec<(f64, Point)> = nodes
            .par_iter()
            .zip(f.par_iter())
            .map(|(x, fx)| best_control(grid, &lattice, dt, next, x).map(|(v, a)| (v + dt * fx, a)))
            .collect::<Result<_>>()?;
        values[n] = step.iter().map(|s| s.0).collect();
        policy[n] = step.into_iter().map(|s| s.1).collect();
    }
    Ok(ValueField {
        grid: *grid,
        dt,
        times: (0..=n_steps).map(|i| i as f64 * dt).collect(),
        values,
        policy,
        controls: lattice,
        f_range,
    })
}

/// Per-trajectory extremes of position and speed.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrajectoryStats {
    pub sup_position: Vec<f64>,
    pub sup_speed: Vec<f64>,
    /// `χ̂ = max sup |y*(s)|`.
    pub chi: f64,
    /// `χ̂′ = max sup |ẏ*(s)|`.
    pub chi_prime: f64,
}

impl TrajectoryStats {
    pub fn from_path(path: &MeasurePath) -> Self {
        let times = path.times();
        let (sup_position, sup_speed): (Vec<f64>, Vec<f64>) = (0..path.n_particles())
            .map(|j| {
                let traj = path.trajectory(j);
                let pos = traj.iter().map(norm).fold(0.0, f64::max);
                let speed = traj
                    .windows(2)
                    .zip(times.windows(2))
                    .map(|(p, t)| crate::grid::dist(&p[0], &p[1]) / (t[1] - t[0]))
                    .fold(0.0, f64::max);
                (pos, speed)
            })
            .unzip();
        TrajectoryStats {
            chi: sup_position.iter().copied().fold(0.0, f64::max),
            chi_prime: sup_speed.iter().copied().fold(0.0, f64::max),
            sup_position,
            sup_speed,
        }
    }
}

/// Particles of `m0` advanced by `y ← y + Δt·α*(y, t_n)`, with the control
/// re-minimized at each particle's exact position. Weights are unchanged.
pub fn transport_forward(value: &ValueField, m0: &DiscreteMeasure) -> Result<(MeasurePath, TrajectoryStats)> {
    let grid = &value.grid;
    if m0.dim() != grid.dim() {
        return Err(MfgError::InvalidMeasure("initial measure dimension differs from the grid".into()));
    }
    if let Some((j, p)) = m0.points().iter().enumerate().find(|(_, p)| !grid.contains(p)) {
        return Err(MfgError::ParticleEscape {
            particle: j,
            time: 0.0,
            point: *p,
        });
    }
    let mut measures = Vec::with_capacity(value.n_steps() + 1);
    let mut current = m0.points().to_vec();
    measures.push(DiscreteMeasure::new(m0.dim(), current.clone(), m0.weights().to_vec())?);
    for n in 0..value.n_steps() {
        let t_next = value.times[n + 1];
        current = current
            .par_iter()
            .enumerate()
            .map(|(j, y)| {
                let a = value.control_at(n, y)?;
                let moved = [y[0] + value.dt * a[0], y[1] + value.dt * a[1]];
                grid.clamp(&moved).map_err(|_| MfgError::ParticleEscape {
                    particle: j,
                    time: t_next,
                    point: moved,
                })
            })
            .collect::<Result<_>>()?;
        measures.push(DiscreteMeasure::new(m0.dim(), current.clone(), m0.weights().to_vec())?);
    }
    let path = MeasurePath::new(value.times.clone(), measures)?;
    let stats = TrajectoryStats::from_path(&path);
    Ok((path, stats))
}

/// Indices of the [`CHECKPOINTS`] equispaced times `0, T/8, …, T`.
pub fn checkpoint_indices(n_steps: usize) -> Vec<usize> {
    (0..CHECKPOINTS)
        .map(|k| ((k * n_steps) as f64 / (CHECKPOINTS - 1) as f64).round() as usize)
        .collect()
}

fn d1(a: &DiscreteMeasure, b: &DiscreteMeasure) -> Result<f64> {
    match wasserstein1(a, b) {
        Err(MfgError::CapExceeded { .. }) => {
            let cap = W1Options::default().cap;
            warn!("d₁ between {} and {} atoms estimated on {cap}-particle resamples", a.len(), b.len());
            wasserstein1(&a.downsample(cap / 2, 0)?, &b.downsample(cap / 2, 0)?)
        }
        other => other,
    }
}

/// `max` over checkpoint times of `d₁(a(t), b(t))`.
pub fn checkpoint_distance(a: &MeasurePath, b: &MeasurePath) -> Result<f64> {
    let n = a.len() - 1;
    if b.len() != a.len() {
        return Err(MfgError::InvalidArgument("paths on different time lattices".into()));
    }
    let mut worst: f64 = 0.0;
    for i in checkpoint_indices(n) {
        worst = worst.max(d1(&a.at(i).merged(), &b.at(i).merged())?);
    }
    Ok(worst)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MfgOptions {
    pub hjb: HjbOptions,
    pub damping: DampingSchedule,
    pub tol: f64,
    pub max_iter: usize,
}

impl MfgOptions {
    pub fn new(dt: f64) -> Self {
        MfgOptions {
            hjb: HjbOptions::new(dt),
            damping: DampingSchedule::Harmonic,
            tol: 1e-3,
            max_iter: 50,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MfgIterate {
    pub iter: usize,
    pub lambda: f64,
    pub residual: f64,
}

/// Solution of the coupled system.
#[derive(Clone, Debug)]
pub struct MfgEquilibrium {
    /// `u` solved against the returned `path`.
    pub value: ValueField,
    pub path: MeasurePath,
    /// Checkpoint `d₁` between the last two iterates.
    pub fixed_point_residual: f64,
    /// Checkpoint `d₁` between `path` and the transport of `m0` by `value`.
    pub best_response_gap: f64,
    pub iterations: usize,
    pub converged: bool,
    pub log: Vec<MfgIterate>,
    /// Transport of `m0` by `value`: the optimal trajectories.
    pub response: MeasurePath,
    /// Statistics of `response`.
    pub stats: TrajectoryStats,
}

fn check_boundary_distance(path: &MeasurePath, grid: &SpatialGrid) -> Result<()> {
    let margin = 2.0 * grid.max_spacing();
    for (n, m) in path.measures().iter().enumerate() {
        if let Some(j) = m.points().iter().position(|p| grid.distance_to_boundary(p) <= margin) {
            return Err(MfgError::BoundaryProximity {
                particle: j,
                time: path.times()[n],
            });
        }
    }
    Ok(())
}

/// Damped fixed-point iteration on measure paths starting from `m0` held constant.
///
/// Each round mixes the current path with the transport of `m0` by the HJB
/// solution against it. A measure-independent cost has no feedback and returns
/// after one round. Particles that come within two cells of the box boundary
/// abort the solve.
pub fn solve_mfg(
    cost: &CostFunctional,
    m0: &DiscreteMeasure,
    horizon: f64,
    grid: &SpatialGrid,
    opts: &MfgOptions,
) -> Result<MfgEquilibrium> {
    opts.damping.validate()?;
    let dt = opts.hjb.dt;
    let n_steps = step_count(horizon, dt)?;
    let times: Vec<f64> = (0..=n_steps).map(|i| i as f64 * dt).collect();
    let mut path = MeasurePath::constant(m0, times)?;
    check_boundary_distance(&path, grid)?;

    if cost.is_measure_independent() {
        let value = solve_hjb_backward(cost, &path, grid, &opts.hjb)?;
        let (br, stats) = transport_forward(&value, m0)?;
        check_boundary_distance(&br, grid)?;
        return Ok(MfgEquilibrium {
            value,
            path: br.clone(),
            response: br,
            fixed_point_residual: 0.0,
            best_response_gap: 0.0,
            iterations: 1,
            converged: true,
            log: vec![MfgIterate {
                iter: 0,
                lambda: 1.0,
                residual: 0.0,
            }],
            stats,
        });
    }

    let mut log = Vec::new();
    let mut residual = f64::INFINITY;
    for k in 0..opts.max_iter {
        let value = solve_hjb_backward(cost, &path, grid, &opts.hjb)?;
        let (br, _) = transport_forward(&value, m0)?;
        check_boundary_distance(&br, grid)?;
        let lambda = opts.damping.lambda(k);
        let next = path.mixture(&br, lambda)?;
        residual = checkpoint_distance(&next, &path)?;
        debug!("fixed point round {k}: λ = {lambda:.4}, residual {residual:.3e}, {} agents", next.n_particles());
        log.push(MfgIterate {
            iter: k,
            lambda,
            residual,
        });
        path = next;
        if residual <= opts.tol {
            break;
        }
    }
    let value = solve_hjb_backward(cost, &path, grid, &opts.hjb)?;
    let (br, stats) = transport_forward(&value, m0)?;
    let gap = checkpoint_distance(&br, &path)?;
    Ok(MfgEquilibrium {
        value,
        fixed_point_residual: residual,
        best_response_gap: gap,
        iterations: log.len(),
        converged: residual <= opts.tol,
        path,
        log,
        response: br,
        stats,
    })
}

/// Nodes of `𝒜_δ^c = {x : F̄(x, m) ≥ δ for every sampled m}`, the sampled
/// measures being the path at its checkpoint times.
#[derive(Clone, Debug)]
pub struct OccupationMask {
    grid: SpatialGrid,
    outside: Vec<bool>,
}

impl OccupationMask {
    pub fn new(cost: &CostFunctional, path: &MeasurePath, delta: f64, grid: &SpatialGrid) -> Self {
        let mut outside = vec![true; grid.n_nodes()];
        for i in checkpoint_indices(path.len() - 1) {
            let values = cost.slice(grid, &path.at(i).merged());
            let c = values.iter().copied().fold(f64::INFINITY, f64::min);
            for (o, v) in outside.iter_mut().zip(&values) {
                *o &= v - c >= delta;
            }
        }
        OccupationMask { grid: *grid, outside }
    }

    pub fn contains(&self, x: &Point) -> bool {
        self.outside[self.grid.nearest_node(x)]
    }

    /// `ρ = (1/N) #{n < N : y_n ∈ 𝒜_δ^c}` for a trajectory `y_0, …, y_N`.
    pub fn fraction(&self, trajectory: &[Point]) -> f64 {
        let n = trajectory.len().saturating_sub(1).max(1);
        let hits = trajectory[..trajectory.len().saturating_sub(1)]
            .iter()
            .filter(|y| self.contains(y))
            .count();
        hits as f64 / n as f64
    }
}

/// Fraction of time steps `trajectory` spends in `𝒜_δ^c` (nearest-node lookup).
pub fn occupational_measure(
    trajectory: &[Point],
    cost: &CostFunctional,
    path: &MeasurePath,
    delta: f64,
    grid: &SpatialGrid,
) -> Result<f64> {
    if trajectory.len() != path.len() || trajectory.len() < 2 {
        return Err(MfgError::InvalidArgument(format!(
            "trajectory of length {} on a path of length {}",
            trajectory.len(),
            path.len()
        )));
    }
    Ok(OccupationMask::new(cost, path, delta, grid).fraction(trajectory))
}

/// Discrete forms of the a priori estimates on `u`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct APrioriReport {
    /// `max` over nodes and `t < T` of the upwind `|Du|`.
    pub max_gradient: f64,
    /// `max |u(·, t_n) − u(·, t_{n+1})| / Δt`.
    pub max_time_derivative: f64,
    /// `min` and `max` of `u(x, t)/(T − t)` over nodes and `t < T`.
    pub rate_range: (f64, f64),
}

pub fn a_priori_report(value: &ValueField) -> APrioriReport {
    let grid = &value.grid;
    let horizon = value.horizon();
    let mut max_gradient: f64 = 0.0;
    let mut max_dt: f64 = 0.0;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for n in 0..value.n_steps() {
        let u = &value.values[n];
        let remaining = horizon - value.times[n];
        for i in 0..grid.n_nodes() {
            max_gradient = max_gradient.max(grid.upwind_gradient_norm(u, i));
            max_dt = max_dt.max((u[i] - value.values[n + 1][i]).abs() / value.dt);
            let r = u[i] / remaining;
            lo = lo.min(r);
            hi = hi.max(r);
        }
    }
    APrioriReport {
        max_gradient,
        max_time_derivative: max_dt,
        rate_range: (lo, hi),
    }
}
