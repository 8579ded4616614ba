//! Weighted particle measures and paths of measures.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{MfgError, Result};
use crate::grid::{NodeSet, Point, SpatialGrid};

/// Tolerance on `Σ weights = 1`.
pub const MASS_TOL: f64 = 1e-12;
/// Points closer than this (per coordinate) are merged before identity checks.
pub const MERGE_TOL: f64 = 1e-12;
/// Mixture weights below this are dropped.
pub const PRUNE_WEIGHT: f64 = 1e-14;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MeasureMeta {
    pub source: String,
    pub seed: Option<u64>,
}

/// A probability measure `Σ w_j δ_{y_j}`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteMeasure {
    dim: usize,
    points: Vec<Point>,
    weights: Vec<f64>,
    meta: MeasureMeta,
}

fn merge_key(p: &Point) -> (i64, i64) {
    (
        (p[0] / MERGE_TOL).round() as i64,
        (p[1] / MERGE_TOL).round() as i64,
    )
}

impl DiscreteMeasure {
    pub fn new(dim: usize, points: Vec<Point>, weights: Vec<f64>) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return Err(MfgError::InvalidMeasure(format!("dimension {dim} not supported")));
        }
        if points.is_empty() || points.len() != weights.len() {
            return Err(MfgError::InvalidMeasure(format!(
                "{} points with {} weights",
                points.len(),
                weights.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(**w >= 0.0) || !w.is_finite()) {
            return Err(MfgError::InvalidMeasure(format!("weight {w} is not a nonnegative number")));
        }
        if points.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
            return Err(MfgError::InvalidMeasure("non-finite particle position".into()));
        }
        if dim == 1 && points.iter().any(|p| p[1] != 0.0) {
            return Err(MfgError::InvalidMeasure("1D particles must have zero second coordinate".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(MfgError::InvalidMeasure(format!("weights sum to {total}, not 1")));
        }
        Ok(DiscreteMeasure {
            dim,
            points,
            weights,
            meta: MeasureMeta::default(),
        })
    }

    /// Build from nonnegative weights of any positive total; weights are rescaled to sum 1.
    pub fn normalized(dim: usize, points: Vec<Point>, weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(MfgError::InvalidMeasure(format!("total weight {total} is not positive")));
        }
        let weights = weights.into_iter().map(|w| w / total).collect();
        Self::new(dim, points, weights)
    }

    pub fn dirac(dim: usize, p: Point) -> Self {
        DiscreteMeasure {
            dim,
            points: vec![p],
            weights: vec![1.0],
            meta: MeasureMeta {
                source: "dirac".into(),
                seed: None,
            },
        }
    }

    pub fn uniform(dim: usize, points: Vec<Point>) -> Result<Self> {
        let n = points.len();
        if n == 0 {
            return Err(MfgError::InvalidMeasure("no points".into()));
        }
        Self::new(dim, points, vec![1.0 / n as f64; n])
    }

    pub fn with_meta(mut self, meta: MeasureMeta) -> Self {
        self.meta = meta;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn meta(&self) -> &MeasureMeta {
        &self.meta
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Point, f64)> {
        self.points.iter().zip(self.weights.iter().copied())
    }

    pub fn mean(&self) -> Point {
        let mut m = [0.0; 2];
        for (p, w) in self.iter() {
            m[0] += w * p[0];
            m[1] += w * p[1];
        }
        m
    }

    /// `∫ φ dm`.
    pub fn integrate<F: Fn(&Point) -> f64>(&self, phi: F) -> f64 {
        self.iter().map(|(p, w)| w * phi(p)).sum()
    }

    pub fn check_in_box(&self, grid: &SpatialGrid) -> Result<()> {
        match self.points.iter().find(|p| !grid.contains(p)) {
            Some(p) => Err(MfgError::DomainEscape { point: *p }),
            None => Ok(()),
        }
    }

    /// Merge coincident points, drop weights below [`PRUNE_WEIGHT`] and renormalize.
    /// Output order is lexicographic in position.
    pub fn merged(&self) -> Self {
        let mut acc: HashMap<(i64, i64), (Point, f64)> = HashMap::new();
        for (p, w) in self.iter() {
            acc.entry(merge_key(p)).or_insert((*p, 0.0)).1 += w;
        }
        let mut items: Vec<(Point, f64)> = acc.into_values().filter(|(_, w)| *w >= PRUNE_WEIGHT).collect();
        items.sort_by(|a, b| a.0[0].total_cmp(&b.0[0]).then(a.0[1].total_cmp(&b.0[1])));
        let total: f64 = items.iter().map(|(_, w)| w).sum();
        DiscreteMeasure {
            dim: self.dim,
            points: items.iter().map(|(p, _)| *p).collect(),
            weights: items.iter().map(|(_, w)| w / total).collect(),
            meta: self.meta.clone(),
        }
    }

    /// `(1 − λ)·self + λ·other`, realized by concatenation, merging and pruning.
    pub fn mixture(&self, other: &DiscreteMeasure, lambda: f64) -> Result<Self> {
        if self.dim != other.dim {
            return Err(MfgError::InvalidMeasure("mixing measures of different dimension".into()));
        }
        if !(0.0..=1.0).contains(&lambda) {
            return Err(MfgError::InvalidArgument(format!("mixture weight {lambda} outside [0, 1]")));
        }
        let mut points = self.points.clone();
        points.extend_from_slice(&other.points);
        let mut weights: Vec<f64> = self.weights.iter().map(|w| w * (1.0 - lambda)).collect();
        weights.extend(other.weights.iter().map(|w| w * lambda));
        Ok(DiscreteMeasure {
            dim: self.dim,
            points,
            weights,
            meta: self.meta.clone(),
        }
        .merged())
    }

    /// Particles carrying at least `w_min` mass.
    pub fn support(&self, w_min: f64) -> Vec<Point> {
        self.iter().filter(|(_, w)| *w >= w_min && *w > 0.0).map(|(p, _)| *p).collect()
    }

    /// Systematic resampling down to `n` equal-weight particles (duplicates merged).
    pub fn downsample(&self, n: usize, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(MfgError::InvalidArgument("cannot downsample to zero particles".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let picks = systematic_picks(&self.weights, n, &mut rng);
        let points = picks.into_iter().map(|i| self.points[i]).collect();
        Ok(DiscreteMeasure {
            dim: self.dim,
            points,
            weights: vec![1.0 / n as f64; n],
            meta: MeasureMeta {
                source: format!("{} (systematic resample to {n})", self.meta.source),
                seed: Some(seed),
            },
        }
        .merged())
    }
}

/// Indices selected by systematic resampling of `weights` into `n` draws.
fn systematic_picks(weights: &[f64], n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let total: f64 = weights.iter().sum();
    let offset: f64 = rng.gen::<f64>() / n as f64;
    let mut picks = Vec::with_capacity(n);
    let mut cum = 0.0;
    let mut i = 0;
    for k in 0..n {
        let target = (offset + k as f64 / n as f64) * total;
        while i + 1 < weights.len() && cum + weights[i] <= target {
            cum += weights[i];
            i += 1;
        }
        picks.push(i);
    }
    picks
}

/// Image measure of `m` under `flow`. Positions are clamped into the box; a point
/// more than one cell outside is a domain-escape error.
pub fn push_forward<F: Fn(&Point) -> Point>(
    m: &DiscreteMeasure,
    flow: F,
    grid: &SpatialGrid,
) -> Result<DiscreteMeasure> {
    let points = m
        .points
        .iter()
        .map(|p| grid.clamp(&flow(p)))
        .collect::<Result<Vec<_>>>()?;
    Ok(DiscreteMeasure {
        dim: m.dim,
        points,
        weights: m.weights.clone(),
        meta: m.meta.clone(),
    })
}

/// `max` over particles with weight `≥ w_min` of the distance to `set`.
pub fn support_distance(m: &DiscreteMeasure, set: &NodeSet, w_min: f64) -> Result<f64> {
    let retained = m.support(w_min);
    if retained.is_empty() {
        return Err(MfgError::InvalidArgument(format!(
            "no particle carries weight ≥ {w_min}"
        )));
    }
    let pts = set.points();
    if pts.is_empty() {
        return Err(MfgError::InvalidArgument("distance to an empty node set".into()));
    }
    Ok(retained
        .iter()
        .map(|y| pts.iter().map(|p| crate::grid::dist(y, p)).fold(f64::INFINITY, f64::min))
        .fold(0.0, f64::max))
}

/// Particles from a node-indexed density.
///
/// A cell carries mass `mean(corner densities) × cell volume` when all of its
/// corners are positive, and nothing otherwise. When `n` is at least the number
/// of charged cells, one particle sits at each charged cell centroid with that
/// mass; otherwise `n` equal-weight particles are drawn by systematic resampling.
pub fn sample_from_density(
    density: &[f64],
    grid: &SpatialGrid,
    n: usize,
    seed: u64,
) -> Result<DiscreteMeasure> {
    if density.len() != grid.n_nodes() {
        return Err(MfgError::InvalidArgument(format!(
            "density has {} values for {} nodes",
            density.len(),
            grid.n_nodes()
        )));
    }
    if density.iter().any(|d| !(*d >= 0.0) || !d.is_finite()) {
        return Err(MfgError::InvalidArgument("density must be finite and nonnegative".into()));
    }
    let vol = grid.cell_volume();
    let mut cells = Vec::new();
    let mut masses = Vec::new();
    for cell in 0..grid.n_total_cells() {
        let corners = grid.cell_corners(cell);
        if corners.iter().all(|&c| density[c] > 0.0) {
            let mean = corners.iter().map(|&c| density[c]).sum::<f64>() / corners.len() as f64;
            cells.push(cell);
            masses.push(mean * vol);
        }
    }
    if cells.is_empty() {
        return Err(MfgError::InvalidArgument(
            "density has no cell with all corners positive".into(),
        ));
    }
    let meta = MeasureMeta {
        source: "density".into(),
        seed: Some(seed),
    };
    if n >= cells.len() {
        let points = cells.iter().map(|&c| grid.cell_centroid(c)).collect();
        return Ok(DiscreteMeasure::normalized(grid.dim(), points, masses)?.with_meta(meta));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = systematic_picks(&masses, n, &mut rng);
    let points = picks.into_iter().map(|i| grid.cell_centroid(cells[i])).collect();
    Ok(DiscreteMeasure::uniform(grid.dim(), points)?.with_meta(meta))
}

/// A time-indexed family of measures sharing one set of weighted particles.
/// Particle `j` of every measure is the same agent.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurePath {
    times: Vec<f64>,
    measures: Vec<DiscreteMeasure>,
}

impl MeasurePath {
    pub fn new(times: Vec<f64>, measures: Vec<DiscreteMeasure>) -> Result<Self> {
        if times.is_empty() || times.len() != measures.len() {
            return Err(MfgError::InvalidArgument(format!(
                "{} times for {} measures",
                times.len(),
                measures.len()
            )));
        }
        if times[0] != 0.0 || times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(MfgError::InvalidArgument("path times must start at 0 and increase".into()));
        }
        let n = measures[0].len();
        if measures.iter().any(|m| m.len() != n || m.weights != measures[0].weights) {
            return Err(MfgError::InvalidArgument(
                "every measure in a path must carry the same weighted particles".into(),
            ));
        }
        Ok(MeasurePath { times, measures })
    }

    /// The path that stays at `m` for all `times`.
    pub fn constant(m: &DiscreteMeasure, times: Vec<f64>) -> Result<Self> {
        let measures = vec![m.clone(); times.len()];
        Self::new(times, measures)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn measures(&self) -> &[DiscreteMeasure] {
        &self.measures
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn n_particles(&self) -> usize {
        self.measures[0].len()
    }

    pub fn weights(&self) -> &[f64] {
        self.measures[0].weights()
    }

    /// Index of the stored time closest to `t`.
    pub fn index_near(&self, t: f64) -> usize {
        let mut best = 0;
        for (i, &ti) in self.times.iter().enumerate() {
            if (ti - t).abs() < (self.times[best] - t).abs() {
                best = i;
            }
        }
        best
    }

    pub fn at(&self, idx: usize) -> &DiscreteMeasure {
        &self.measures[idx]
    }

    /// Position history of particle `j`.
    pub fn trajectory(&self, j: usize) -> Vec<Point> {
        self.measures.iter().map(|m| m.points[j]).collect()
    }

    /// `(1 − λ)·self + λ·other` as a mixture of agents: particle lists are
    /// concatenated, agents whose trajectories coincide at every time are merged,
    /// and weights below [`PRUNE_WEIGHT`] are dropped.
    pub fn mixture(&self, other: &MeasurePath, lambda: f64) -> Result<Self> {
        if self.times != other.times {
            return Err(MfgError::InvalidArgument("mixing paths on different time lattices".into()));
        }
        if !(0.0..=1.0).contains(&lambda) {
            return Err(MfgError::InvalidArgument(format!("mixture weight {lambda} outside [0, 1]")));
        }
        let dim = self.measures[0].dim;
        let sources = [(self, 1.0 - lambda), (other, lambda)];
        let mut key_of: HashMap<Vec<(i64, i64)>, usize> = HashMap::new();
        let mut agents: Vec<(usize, usize)> = Vec::new();
        let mut weights: Vec<f64> = Vec::new();
        for (s, (path, scale)) in sources.iter().enumerate() {
            for j in 0..path.n_particles() {
                let w = path.weights()[j] * scale;
                if w == 0.0 {
                    continue;
                }
                let key: Vec<(i64, i64)> = path.measures.iter().map(|m| merge_key(&m.points[j])).collect();
                match key_of.get(&key) {
                    Some(&slot) => weights[slot] += w,
                    None => {
                        key_of.insert(key, agents.len());
                        agents.push((s, j));
                        weights.push(w);
                    }
                }
            }
        }
        let keep: Vec<usize> = (0..agents.len()).filter(|&i| weights[i] >= PRUNE_WEIGHT).collect();
        let total: f64 = keep.iter().map(|&i| weights[i]).sum();
        let new_weights: Vec<f64> = keep.iter().map(|&i| weights[i] / total).collect();
        let measures = (0..self.times.len())
            .map(|t| DiscreteMeasure {
                dim,
                points: keep
                    .iter()
                    .map(|&i| {
                        let (s, j) = agents[i];
                        sources[s].0.measures[t].points[j]
                    })
                    .collect(),
                weights: new_weights.clone(),
                meta: self.measures[t].meta.clone(),
            })
            .collect();
        Ok(MeasurePath {
            times: self.times.clone(),
            measures,
        })
    }
}
