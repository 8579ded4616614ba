//! Cost functionals `F(x, m)`, the built-in model families, per-measure slice
//! statistics and numerical diagnostics of the standing assumptions.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{MfgError, Result};
use crate::grid::{dist, norm, NodeSet, Point, SpatialGrid};
use crate::measure::DiscreteMeasure;
use crate::transport::wasserstein1;

pub type PointFn = Arc<dyn Fn(&Point) -> f64 + Send + Sync>;
pub type RealFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type KernelFn = Arc<dyn Fn(&Point, &Point) -> f64 + Send + Sync>;
pub type MeasureFn = Arc<dyn Fn(&DiscreteMeasure) -> f64 + Send + Sync>;
pub type Evaluator = Arc<dyn Fn(&Point, &DiscreteMeasure) -> f64 + Send + Sync>;

/// Structural facts about a cost functional.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CostMetadata {
    /// `sup_{x, m} |F(x, m)|` over the computational box.
    pub m_bound: f64,
    /// Compact core `K_o` as an axis-aligned box (lower, upper).
    pub core_box: Option<(Point, Point)>,
    /// Gap `δ_o` between `inf_{x ∉ K_o} F` and `min_{K_o} F`.
    pub gap: Option<f64>,
    /// The common argmin `𝒜`, when it is the same for every measure.
    pub analytic_argmin: Option<Vec<Point>>,
    /// `c* = min_x F(x, m)` when it does not depend on `m`.
    pub analytic_c_star: Option<f64>,
    /// Constant `L` with `|F(x,m) − F(x,m′)| ≤ L·d₁(m, m′)`.
    pub lipschitz_d1: f64,
    pub measure_independent: bool,
    /// Set `ℬ` on which measures are self-consistent (argmin contains ℬ when supp m ⊆ ℬ).
    pub reference_set: Option<Vec<Point>>,
    /// Admitted for testing only (e.g. unbounded on ℝⁿ).
    pub test_only: bool,
}

#[derive(Clone)]
pub struct CostFunctional {
    name: String,
    dim: usize,
    eval: Evaluator,
    meta: CostMetadata,
}

impl fmt::Debug for CostFunctional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CostFunctional")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("meta", &self.meta)
            .finish_non_exhaustive()
    }
}

impl CostFunctional {
    pub fn from_fn(name: impl Into<String>, dim: usize, eval: Evaluator, meta: CostMetadata) -> Self {
        CostFunctional {
            name: name.into(),
            dim,
            eval,
            meta,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn meta(&self) -> &CostMetadata {
        &self.meta
    }

    pub fn evaluate(&self, x: &Point, m: &DiscreteMeasure) -> f64 {
        (self.eval)(x, m)
    }

    /// `F(·, m)` at every grid node.
    pub fn slice(&self, grid: &SpatialGrid, m: &DiscreteMeasure) -> Vec<f64> {
        let n = grid.n_nodes();
        if n * m.len() > 20_000 {
            (0..n).into_par_iter().map(|i| self.evaluate(&grid.node(i), m)).collect()
        } else {
            (0..n).map(|i| self.evaluate(&grid.node(i), m)).collect()
        }
    }

    pub fn is_measure_independent(&self) -> bool {
        self.meta.measure_independent
    }

    /// `𝒜` snapped onto the grid, when known analytically.
    pub fn analytic_argmin_nodes(&self, grid: &SpatialGrid) -> Option<NodeSet> {
        self.meta
            .analytic_argmin
            .as_ref()
            .map(|pts| NodeSet::from_points(*grid, pts))
    }

    /// Test-only constant cost `F ≡ c`.
    pub fn constant(dim: usize, c: f64) -> Self {
        CostFunctional::from_fn(
            "constant",
            dim,
            Arc::new(move |_, _| c),
            CostMetadata {
                m_bound: c.abs(),
                analytic_c_star: Some(c),
                measure_independent: true,
                test_only: true,
                ..Default::default()
            },
        )
    }
}

fn zero_pad(dim: usize, v: f64) -> Point {
    if dim == 1 {
        [v, 0.0]
    } else {
        [v, v]
    }
}

fn core_box(dim: usize, radius: f64) -> (Point, Point) {
    (zero_pad(dim, -radius), zero_pad(dim, radius))
}

fn in_box(p: &Point, b: &(Point, Point), dim: usize) -> bool {
    (0..dim).all(|a| p[a] >= b.0[a] - 1e-12 && p[a] <= b.1[a] + 1e-12)
}

/// Node pairs on a strided subgrid, for sampling kernels without an O(N²) sweep.
fn sample_nodes(grid: &SpatialGrid, max: usize) -> Vec<Point> {
    let n = grid.n_nodes();
    let stride = n.div_ceil(max).max(1);
    (0..n).step_by(stride).map(|i| grid.node(i)).collect()
}

/// Largest difference quotient of `g` on `[lo, hi]`.
fn lipschitz_of_real(g: &RealFn, lo: f64, hi: f64) -> f64 {
    let n = 400;
    let h = (hi - lo).max(1e-9) / n as f64;
    (0..n)
        .map(|k| {
            let a = lo + k as f64 * h;
            ((g(a + h) - g(a)) / h).abs()
        })
        .fold(0.0, f64::max)
}

/// Largest finite-difference slope of `k(x, ·)` over sampled nodes `x` and `y`.
fn lipschitz_of_kernel_in_y(k: &KernelFn, nodes: &[Point], dim: usize, h: f64) -> f64 {
    let mut best: f64 = 0.0;
    for x in nodes {
        for y in nodes {
            let mut g2 = 0.0;
            for a in 0..dim {
                let mut yp = *y;
                let mut ym = *y;
                yp[a] += h;
                ym[a] -= h;
                let d = (k(x, &yp) - k(x, &ym)) / (2.0 * h);
                g2 += d * d;
            }
            best = best.max(g2.sqrt());
        }
    }
    best
}

const LIPSCHITZ_MARGIN: f64 = 1.05;

/// Ingredients of `F(x, m) = f(x)·g(∫ k(x, y) dm(y))`.
#[derive(Clone)]
pub struct CongestionParts {
    pub f: PointFn,
    pub g: RealFn,
    pub k: KernelFn,
    /// Zero set of `f`, which is the argmin of every slice.
    pub zeros_of_f: Vec<Point>,
    /// Half-width of the core box `K_o`.
    pub core_radius: f64,
}

/// `F(x, m) = f(x)·g(∫ k(x, y) dm(y))` with `f ≥ 0`, `g ≥ 1`, `k ≥ 0`.
pub fn model_congestion(
    name: &str,
    parts: CongestionParts,
    grid: &SpatialGrid,
) -> Result<CostFunctional> {
    let dim = grid.dim();
    let f_vals = grid.sample(|p| (parts.f)(p));
    if let Some((i, v)) = f_vals.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
        return Err(MfgError::ModelValidation(format!(
            "f = {v} < 0 at node {:?}",
            grid.node(i)
        )));
    }
    for z in &parts.zeros_of_f {
        if (parts.f)(z).abs() > 1e-12 {
            return Err(MfgError::ModelValidation(format!("f does not vanish at declared zero {z:?}")));
        }
    }
    let nodes = sample_nodes(grid, 150);
    let mut k_max: f64 = 0.0;
    for x in &nodes {
        for y in &nodes {
            let v = (parts.k)(x, y);
            if !(v >= 0.0) {
                return Err(MfgError::ModelValidation(format!("k({x:?}, {y:?}) = {v} < 0")));
            }
            k_max = k_max.max(v);
        }
    }
    let mut g_max: f64 = 1.0;
    for s in 0..=200 {
        let r = k_max * s as f64 / 200.0;
        let v = (parts.g)(r);
        if !(v >= 1.0) {
            return Err(MfgError::ModelValidation(format!("g({r}) = {v} < 1")));
        }
        g_max = g_max.max(v);
    }
    let f_max = f_vals.iter().copied().fold(0.0, f64::max);
    let lip = f_max
        * lipschitz_of_real(&parts.g, 0.0, k_max)
        * lipschitz_of_kernel_in_y(&parts.k, &nodes, dim, 1e-5)
        * LIPSCHITZ_MARGIN;
    let cb = core_box(dim, parts.core_radius);
    let gap = grid
        .nodes()
        .filter(|p| !in_box(p, &cb, dim))
        .map(|p| (parts.f)(&p))
        .fold(f64::INFINITY, f64::min);
    let CongestionParts { f, g, k, zeros_of_f, .. } = parts;
    let eval: Evaluator = Arc::new(move |x, m| {
        let r: f64 = m.iter().map(|(y, w)| w * k(x, y)).sum();
        f(x) * g(r)
    });
    Ok(CostFunctional::from_fn(
        name,
        dim,
        eval,
        CostMetadata {
            m_bound: f_max * g_max,
            core_box: Some(cb),
            gap: gap.is_finite().then_some(gap),
            analytic_argmin: Some(zeros_of_f),
            analytic_c_star: Some(0.0),
            lipschitz_d1: lip,
            measure_independent: false,
            reference_set: None,
            test_only: false,
        },
    ))
}

/// Ingredients of `F(x, m) = f(x)·G(x, m) + g(m)`.
#[derive(Clone)]
pub struct FgParts {
    pub f: PointFn,
    pub big_g: Evaluator,
    pub g_of_m: MeasureFn,
    /// `ℬ`: where `f` vanishes.
    pub set_b: Vec<Point>,
    pub core_radius: f64,
    /// Lipschitz constant of `m ↦ f(x)G(x, m) + g(m)` in `d₁`, if known.
    pub lipschitz_d1: f64,
    /// `sup |G|` and `sup |g|` on the box.
    pub big_g_bound: f64,
    pub g_bound: f64,
}

/// `F(x, m) = f(x)·G(x, m) + g(m)` with `f = 0` on `ℬ`, `f ≥ 0` and `G ≥ 1` off `ℬ`.
/// The argmin of every slice is `ℬ` and `c_m = g(m)`.
pub fn model_fg_plus_g(name: &str, parts: FgParts, grid: &SpatialGrid) -> Result<CostFunctional> {
    let dim = grid.dim();
    if parts.set_b.is_empty() {
        return Err(MfgError::ModelValidation("ℬ must be nonempty".into()));
    }
    for b in &parts.set_b {
        if (parts.f)(b).abs() > 1e-12 {
            return Err(MfgError::ModelValidation(format!("f({b:?}) ≠ 0 on ℬ")));
        }
    }
    let probe = [
        DiscreteMeasure::dirac(dim, [0.0; 2]),
        DiscreteMeasure::dirac(dim, grid.node(grid.n_nodes() - 1)),
    ];
    let mut f_max: f64 = 0.0;
    for p in grid.nodes() {
        let fv = (parts.f)(&p);
        if !(fv >= 0.0) {
            return Err(MfgError::ModelValidation(format!("f = {fv} < 0 at {p:?}")));
        }
        f_max = f_max.max(fv);
        for m in &probe {
            let gv = (parts.big_g)(&p, m);
            if !(gv >= 1.0) {
                return Err(MfgError::ModelValidation(format!("G = {gv} < 1 at {p:?}")));
            }
        }
    }
    let cb = core_box(dim, parts.core_radius);
    let gap = grid
        .nodes()
        .filter(|p| !in_box(p, &cb, dim))
        .map(|p| (parts.f)(&p))
        .fold(f64::INFINITY, f64::min);
    let FgParts { f, big_g, g_of_m, set_b, .. } = parts;
    let eval: Evaluator = Arc::new(move |x, m| f(x) * big_g(x, m) + g_of_m(m));
    Ok(CostFunctional::from_fn(
        name,
        dim,
        eval,
        CostMetadata {
            m_bound: f_max * parts.big_g_bound + parts.g_bound,
            core_box: Some(cb),
            gap: gap.is_finite().then_some(gap),
            analytic_argmin: Some(set_b.clone()),
            analytic_c_star: None,
            lipschitz_d1: parts.lipschitz_d1,
            measure_independent: false,
            reference_set: Some(set_b),
            test_only: false,
        },
    ))
}

/// Ingredients of `F(x, m) = f(x) + ∫ k(|x − y|) dm(y) + g(m)`.
#[derive(Clone)]
pub struct SeparatedParts {
    pub f: PointFn,
    pub k_radial: RealFn,
    pub g_of_m: MeasureFn,
    /// `k` vanishes on `[0, delta]`.
    pub delta: f64,
    pub set_b: Vec<Point>,
    pub core_radius: f64,
    pub g_lipschitz: f64,
    pub g_bound: f64,
}

/// `F(x, m) = f(x) + ∫ k(|x − y|) dm(y) + g(m)` with `diam(ℬ) ≤ δ` and `k = 0` on `[0, δ]`.
pub fn model_separated_kernel(
    name: &str,
    parts: SeparatedParts,
    grid: &SpatialGrid,
) -> Result<CostFunctional> {
    let dim = grid.dim();
    if parts.set_b.is_empty() {
        return Err(MfgError::ModelValidation("ℬ must be nonempty".into()));
    }
    let diam = parts
        .set_b
        .iter()
        .flat_map(|a| parts.set_b.iter().map(move |b| dist(a, b)))
        .fold(0.0, f64::max);
    if diam > parts.delta {
        return Err(MfgError::ModelValidation(format!(
            "diam(ℬ) = {diam} exceeds δ = {}",
            parts.delta
        )));
    }
    for s in 0..=100 {
        let r = parts.delta * s as f64 / 100.0;
        if (parts.k_radial)(r) != 0.0 {
            return Err(MfgError::ModelValidation(format!("k({r}) ≠ 0 inside radius δ")));
        }
    }
    let diag = (0..dim)
        .map(|a| (grid.upper()[a] - grid.lower()[a]).powi(2))
        .sum::<f64>()
        .sqrt();
    let mut k_max: f64 = 0.0;
    for s in 0..=400 {
        let v = (parts.k_radial)(diag * s as f64 / 400.0);
        if !(v >= 0.0) {
            return Err(MfgError::ModelValidation(format!("k = {v} < 0")));
        }
        k_max = k_max.max(v);
    }
    let mut f_max: f64 = 0.0;
    for p in grid.nodes() {
        let fv = (parts.f)(&p);
        if !(fv >= 0.0) {
            return Err(MfgError::ModelValidation(format!("f = {fv} < 0 at {p:?}")));
        }
        f_max = f_max.max(fv);
    }
    for b in &parts.set_b {
        if (parts.f)(b).abs() > 1e-12 {
            return Err(MfgError::ModelValidation(format!("f({b:?}) ≠ 0 on ℬ")));
        }
    }
    let lip = (lipschitz_of_real(&parts.k_radial, 0.0, diag) + parts.g_lipschitz) * LIPSCHITZ_MARGIN;
    let cb = core_box(dim, parts.core_radius);
    let SeparatedParts {
        f,
        k_radial,
        g_of_m,
        set_b,
        ..
    } = parts;
    let eval: Evaluator = Arc::new(move |x, m| {
        let j: f64 = m.iter().map(|(y, w)| w * k_radial(dist(x, y))).sum();
        f(x) + j + g_of_m(m)
    });
    let functional = CostFunctional::from_fn(
        name,
        dim,
        eval,
        CostMetadata {
            m_bound: f_max + k_max + parts.g_bound,
            core_box: Some(cb),
            gap: None,
            analytic_argmin: None,
            analytic_c_star: None,
            lipschitz_d1: lip,
            measure_independent: false,
            reference_set: Some(set_b),
            test_only: false,
        },
    );
    Ok(functional)
}

/// Maximum of `|F(x, m) − min F(·, m)|` over `x ∈ ℬ` for `m` uniform on `ℬ`.
/// Zero when `ℬ` is self-consistent for the separated-kernel model.
pub fn separated_kernel_defect(cost: &CostFunctional, grid: &SpatialGrid) -> Result<f64> {
    let set_b = cost
        .meta()
        .reference_set
        .clone()
        .ok_or_else(|| MfgError::Precondition("model has no reference set ℬ".into()))?;
    let m = DiscreteMeasure::uniform(cost.dim(), set_b.clone())?;
    let c_m = cost.slice(grid, &m).into_iter().fold(f64::INFINITY, f64::min);
    Ok(set_b
        .iter()
        .map(|b| (cost.evaluate(b, &m) - c_m).abs())
        .fold(0.0, f64::max))
}

/// Test-only `F(x, m) = c* + |x|²/2`, whose finite-horizon value is a Riccati closed form.
pub fn lqr_oracle(c_star: f64, grid: &SpatialGrid) -> CostFunctional {
    let dim = grid.dim();
    let m_bound = grid
        .nodes()
        .map(|p| (c_star + 0.5 * norm(&p).powi(2)).abs())
        .fold(0.0, f64::max);
    CostFunctional::from_fn(
        "lqr_oracle",
        dim,
        Arc::new(move |x, _| c_star + 0.5 * (x[0] * x[0] + x[1] * x[1])),
        CostMetadata {
            m_bound,
            core_box: Some(core_box(dim, 1.0)),
            gap: Some(0.5),
            analytic_argmin: Some(vec![[0.0, 0.0]]),
            analytic_c_star: Some(c_star),
            lipschitz_d1: 0.0,
            measure_independent: true,
            reference_set: None,
            test_only: true,
        },
    )
}

/// `1 − e^{−|x|²}`.
pub fn bowl(x: &Point) -> f64 {
    1.0 - (-(x[0] * x[0] + x[1] * x[1])).exp()
}

fn gaussian_kernel() -> KernelFn {
    Arc::new(|x: &Point, y: &Point| {
        let d2 = (x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2);
        (-d2).exp()
    })
}

fn saturating_g() -> RealFn {
    Arc::new(|r: f64| 1.0 + r / (1.0 + r))
}

fn take_params(
    model: &str,
    params: &BTreeMap<String, f64>,
    allowed: &[(&str, f64)],
) -> Result<Vec<f64>> {
    if let Some(key) = params.keys().find(|k| !allowed.iter().any(|(a, _)| a == k)) {
        return Err(MfgError::ModelValidation(format!(
            "unknown parameter `{key}` for model `{model}`"
        )));
    }
    Ok(allowed
        .iter()
        .map(|(k, d)| params.get(*k).copied().unwrap_or(*d))
        .collect())
}

/// Names accepted by [`builtin`].
pub const BUILTIN_MODELS: [&str; 5] = [
    "quadratic_congestion",
    "two_wells",
    "separated_kernel",
    "fG_plus_g",
    "lqr_oracle",
];

/// Construct a built-in model by name on `grid`.
///
/// | model | `F(x, m)` | parameters |
/// |---|---|---|
/// | `quadratic_congestion` | `(1 − e^{−|x|²})·g(∫e^{−|x−y|²}dm)`, `g(r) = 1 + r/(1+r)` | `core_radius` (1) |
/// | `two_wells` | `(1 − e^{−|x−a|²})(1 − e^{−|x+a|²})·g(∫e^{−|x−y|²}dm)`, `a = (well, 0)` | `well` (1), `core_radius` (2) |
/// | `fG_plus_g` | `(1 − e^{−|x|²})(1 + ∫e^{−|x−y|²}dm) + g_scale·∫|y|dm` | `g_scale` (1), `core_radius` (1) |
/// | `separated_kernel` | `(1 − e^{−|x|²}) + ∫ max(0, |x−y| − δ)² dm` | `delta` (0.5), `core_radius` (1) |
/// | `lqr_oracle` | `c_star + |x|²/2` (test only) | `c_star` (0) |
pub fn builtin(name: &str, params: &BTreeMap<String, f64>, grid: &SpatialGrid) -> Result<CostFunctional> {
    match name {
        "quadratic_congestion" => {
            let p = take_params(name, params, &[("core_radius", 1.0)])?;
            model_congestion(
                name,
                CongestionParts {
                    f: Arc::new(bowl),
                    g: saturating_g(),
                    k: gaussian_kernel(),
                    zeros_of_f: vec![[0.0, 0.0]],
                    core_radius: p[0],
                },
                grid,
            )
        }
        "two_wells" => {
            let p = take_params(name, params, &[("well", 1.0), ("core_radius", 2.0)])?;
            let a = p[0];
            let f: PointFn = Arc::new(move |x: &Point| {
                let l = (x[0] - a).powi(2) + x[1] * x[1];
                let r = (x[0] + a).powi(2) + x[1] * x[1];
                (1.0 - (-l).exp()) * (1.0 - (-r).exp())
            });
            model_congestion(
                name,
                CongestionParts {
                    f,
                    g: saturating_g(),
                    k: gaussian_kernel(),
                    zeros_of_f: vec![[-a, 0.0], [a, 0.0]],
                    core_radius: p[1],
                },
                grid,
            )
        }
        "fG_plus_g" => {
            let p = take_params(name, params, &[("g_scale", 1.0), ("core_radius", 1.0)])?;
            let scale = p[0];
            let k = gaussian_kernel();
            let big_g: Evaluator = Arc::new(move |x, m| 1.0 + m.iter().map(|(y, w)| w * k(x, y)).sum::<f64>());
            let g_of_m: MeasureFn = Arc::new(move |m| scale * m.integrate(norm));
            let diag = grid.lower().iter().zip(grid.upper()).map(|(l, u)| l.abs().max(u.abs()).powi(2)).sum::<f64>().sqrt();
            model_fg_plus_g(
                name,
                FgParts {
                    f: Arc::new(bowl),
                    big_g,
                    g_of_m,
                    set_b: vec![[0.0, 0.0]],
                    core_radius: p[1],
                    // f ≤ 1, |∇_y e^{−|x−y|²}| ≤ √2·e^{−1/2}, |·| is 1-Lipschitz
                    lipschitz_d1: (2f64.sqrt() * (-0.5f64).exp() + scale.abs()) * LIPSCHITZ_MARGIN,
                    big_g_bound: 2.0,
                    g_bound: scale.abs() * diag,
                },
                grid,
            )
        }
        "separated_kernel" => {
            let p = take_params(name, params, &[("delta", 0.5), ("core_radius", 1.0)])?;
            let delta = p[0];
            model_separated_kernel(
                name,
                SeparatedParts {
                    f: Arc::new(bowl),
                    k_radial: Arc::new(move |r: f64| (r - delta).max(0.0).powi(2)),
                    g_of_m: Arc::new(|_| 0.0),
                    delta,
                    set_b: vec![[0.0, 0.0]],
                    core_radius: p[1],
                    g_lipschitz: 0.0,
                    g_bound: 0.0,
                },
                grid,
            )
        }
        "lqr_oracle" => {
            let p = take_params(name, params, &[("c_star", 0.0)])?;
            Ok(lqr_oracle(p[0], grid))
        }
        other => Err(MfgError::ModelValidation(format!(
            "unknown model `{other}` (expected one of {})",
            BUILTIN_MODELS.join(", ")
        ))),
    }
}

/// Minimum, grid-tolerant argmin and normalized cost of one slice `F(·, m)`.
#[derive(Clone, Debug)]
pub struct CostSliceStats {
    pub c_m: f64,
    pub argmin_set: NodeSet,
    pub fbar: Vec<f64>,
    /// Set when some argmin node lies outside the core box `K_o`.
    pub core_violation: bool,
}

/// Default argmin tolerance `10·max|F(·, m)|·h²`.
pub fn default_argmin_tol(values: &[f64], grid: &SpatialGrid) -> f64 {
    let fmax = values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    10.0 * fmax * grid.max_spacing().powi(2)
}

pub fn slice_stats(
    cost: &CostFunctional,
    m: &DiscreteMeasure,
    grid: &SpatialGrid,
    eps_min: Option<f64>,
) -> CostSliceStats {
    let values = cost.slice(grid, m);
    stats_from_values(cost, &values, grid, eps_min)
}

pub(crate) fn stats_from_values(
    cost: &CostFunctional,
    values: &[f64],
    grid: &SpatialGrid,
    eps_min: Option<f64>,
) -> CostSliceStats {
    let c_m = values.iter().copied().fold(f64::INFINITY, f64::min);
    let eps = eps_min.unwrap_or_else(|| default_argmin_tol(values, grid));
    let fbar: Vec<f64> = values.iter().map(|v| (v - c_m).max(0.0)).collect();
    let argmin_set = NodeSet::sublevel(*grid, &fbar, eps);
    let core_violation = match cost.meta().core_box {
        Some(cb) => argmin_set
            .indices()
            .iter()
            .any(|&i| !in_box(&grid.node(i), &cb, grid.dim())),
        None => false,
    };
    if core_violation {
        log::debug!("{}: argmin leaves the core box K_o", cost.name());
    }
    CostSliceStats {
        c_m,
        argmin_set,
        fbar,
        core_violation,
    }
}

/// `𝒜` on the grid: the analytic set if known, else the union of slice argmins.
pub fn argmin_union(
    cost: &CostFunctional,
    samples: &[DiscreteMeasure],
    grid: &SpatialGrid,
    eps_min: Option<f64>,
) -> Result<NodeSet> {
    if let Some(set) = cost.analytic_argmin_nodes(grid) {
        return Ok(set);
    }
    let mut it = samples.iter();
    let first = it
        .next()
        .ok_or_else(|| MfgError::Precondition("no measure samples to estimate 𝒜".into()))?;
    let mut set = slice_stats(cost, first, grid, eps_min).argmin_set;
    for m in it {
        set = set.union(&slice_stats(cost, m, grid, eps_min).argmin_set);
    }
    Ok(set)
}

/// `γ̂(r)` for increasing `r`; the table stops at the first `r` with no node beyond it.
#[derive(Clone, Debug, PartialEq)]
pub struct GammaTable {
    pub entries: Vec<(f64, f64)>,
    pub truncated_at: Option<f64>,
}

/// `γ̂(r) = min { F̄(x, m) : m sampled, x node with d(x) > r }`.
pub fn gamma_estimate(
    cost: &CostFunctional,
    r_values: &[f64],
    samples: &[DiscreteMeasure],
    grid: &SpatialGrid,
) -> Result<GammaTable> {
    let a = argmin_union(cost, samples, grid, None)?;
    let d = a.distance_field()?;
    let fbars: Vec<Vec<f64>> = samples
        .iter()
        .map(|m| slice_stats(cost, m, grid, None).fbar)
        .collect();
    let mut rs = r_values.to_vec();
    rs.sort_by(f64::total_cmp);
    let mut entries = Vec::new();
    let mut truncated_at = None;
    for r in rs {
        let mut best = f64::INFINITY;
        for fbar in &fbars {
            for (i, di) in d.iter().enumerate() {
                if *di > r {
                    best = best.min(fbar[i]);
                }
            }
        }
        if !best.is_finite() {
            truncated_at = Some(r);
            break;
        }
        entries.push((r, best));
    }
    Ok(GammaTable {
        entries,
        truncated_at,
    })
}

/// Random measures with up to `max_atoms` atoms uniformly placed in `bounds`.
pub fn random_measures(
    dim: usize,
    bounds: (Point, Point),
    count: usize,
    max_atoms: usize,
    seed: u64,
) -> Vec<DiscreteMeasure> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let n = rng.gen_range(1..=max_atoms.max(1));
            let points: Vec<Point> = (0..n)
                .map(|_| {
                    let mut p = [0.0; 2];
                    for (a, c) in p.iter_mut().enumerate().take(dim) {
                        *c = rng.gen_range(bounds.0[a]..=bounds.1[a]);
                    }
                    p
                })
                .collect();
            let weights: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
            DiscreteMeasure::normalized(dim, points, weights).expect("positive weights")
        })
        .collect()
}

/// One numerical check of a standing assumption.
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct AssumptionCheck {
    pub name: String,
    pub passed: bool,
    pub observed: f64,
    pub bound: f64,
    pub note: String,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct AssumptionReport {
    pub model: String,
    pub checks: Vec<AssumptionCheck>,
}

impl AssumptionReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Spot-check boundedness, d₁-Lipschitz continuity, C² regularity, the argmin
/// structure, the gap at infinity (on the box boundary ring) and `γ̂ ≥ δ_o`.
pub fn assumption_report(
    cost: &CostFunctional,
    grid: &SpatialGrid,
    n_samples: usize,
    seed: u64,
) -> Result<AssumptionReport> {
    let dim = grid.dim();
    let meta = cost.meta();
    let bounds = meta.core_box.unwrap_or_else(|| {
        let lo = grid.lower();
        let hi = grid.upper();
        (zero_pad(dim, lo[0]), zero_pad(dim, hi[0]))
    });
    let samples = random_measures(dim, bounds, n_samples, 6, seed);
    let pairs = random_measures(dim, bounds, 2 * n_samples, 6, seed.wrapping_add(1));
    let mut checks = Vec::new();

    let slices: Vec<Vec<f64>> = samples.iter().map(|m| cost.slice(grid, m)).collect();
    let sup = slices
        .iter()
        .flat_map(|s| s.iter())
        .fold(0.0f64, |a, v| a.max(v.abs()));
    checks.push(AssumptionCheck {
        name: "bounded".into(),
        passed: sup <= meta.m_bound * (1.0 + 1e-9) + 1e-12,
        observed: sup,
        bound: meta.m_bound,
        note: "sup |F| over nodes and sampled measures vs recorded M".into(),
    });

    let nodes = sample_nodes(grid, 64);
    let mut worst_ratio: f64 = 0.0;
    for pair in pairs.chunks(2) {
        let d = wasserstein1(&pair[0], &pair[1])?;
        if d < 1e-9 {
            continue;
        }
        for x in &nodes {
            let diff = (cost.evaluate(x, &pair[0]) - cost.evaluate(x, &pair[1])).abs();
            worst_ratio = worst_ratio.max(diff / d);
        }
    }
    checks.push(AssumptionCheck {
        name: "lipschitz_d1".into(),
        passed: worst_ratio <= meta.lipschitz_d1 + 1e-12,
        observed: worst_ratio,
        bound: meta.lipschitz_d1,
        note: "max |F(x,m) − F(x,m′)| / d₁(m,m′) over sampled pairs".into(),
    });

    let mut second: f64 = 0.0;
    for s in &slices {
        for idx in 0..grid.n_nodes() {
            for a in 0..dim {
                if let (Some(l), Some(r)) = (grid.neighbor(idx, a, -1), grid.neighbor(idx, a, 1)) {
                    let h = grid.spacing(a);
                    second = second.max(((s[r] - 2.0 * s[idx] + s[l]) / (h * h)).abs());
                }
            }
        }
    }
    checks.push(AssumptionCheck {
        name: "c2_bound".into(),
        passed: second.is_finite(),
        observed: second,
        bound: f64::INFINITY,
        note: "max centered second difference of F(·, m); recorded, finite required".into(),
    });

    if let Some(a_nodes) = cost.analytic_argmin_nodes(grid) {
        let mut max_dist: f64 = 0.0;
        for s in &slices {
            let st = stats_from_values(cost, s, grid, None);
            for &i in st.argmin_set.indices() {
                max_dist = max_dist.max(a_nodes.distance(&grid.node(i))?);
            }
        }
        let tol = 3.0 * grid.max_spacing() + (10.0 * sup).sqrt() * grid.max_spacing();
        checks.push(AssumptionCheck {
            name: "common_argmin".into(),
            passed: max_dist <= tol,
            observed: max_dist,
            bound: tol,
            note: "grid argmin of every sampled slice stays at the analytic 𝒜".into(),
        });
    }

    if let (Some(cb), Some(gap)) = (meta.core_box, meta.gap) {
        let mut worst = f64::INFINITY;
        let mut core_violation = false;
        for s in &slices {
            let st = stats_from_values(cost, s, grid, None);
            core_violation |= st.core_violation;
            let ring = (0..grid.n_nodes())
                .filter(|&i| grid.is_boundary_node(i))
                .map(|i| s[i])
                .fold(f64::INFINITY, f64::min);
            worst = worst.min(ring - st.c_m);
        }
        checks.push(AssumptionCheck {
            name: "gap_at_infinity".into(),
            passed: worst >= gap - 1e-12,
            observed: worst,
            bound: gap,
            note: "min over boundary ring of F − c_m (liminf condition checked on the box)".into(),
        });
        checks.push(AssumptionCheck {
            name: "argmin_in_core".into(),
            passed: !core_violation,
            observed: core_violation as u8 as f64,
            bound: 0.0,
            note: "every slice argmin lies in K_o".into(),
        });
        let radius = (0..dim)
            .map(|a| cb.0[a].abs().max(cb.1[a].abs()).powi(2))
            .sum::<f64>()
            .sqrt();
        let table = gamma_estimate(cost, &[radius], &samples, grid)?;
        if let Some(&(_, g)) = table.entries.first() {
            checks.push(AssumptionCheck {
                name: "gamma_beyond_core".into(),
                passed: g >= gap - 1e-12,
                observed: g,
                bound: gap,
                note: "γ̂(r) ≥ δ_o for r beyond the K_o radius".into(),
            });
        }
    }

    Ok(AssumptionReport {
        model: cost.name().to_string(),
        checks,
    })
}
