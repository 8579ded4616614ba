//! Experiment configuration: one TOML file per experiment.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use mfg_core::asymptotics::SweepParams;
use mfg_core::cost::{builtin, random_measures};
use mfg_core::horizon::{step_count, HjbOptions, MfgOptions};
use mfg_core::measure::sample_from_density;
use mfg_core::static_game::{BestResponseRule, DampingSchedule, StaticOptions};
use mfg_core::{CostFunctional, DiscreteMeasure, Point, SpatialGrid};
use serde::Deserialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config file `{0}` does not exist")]
    Missing(PathBuf),

    #[error("cannot read `{path}`: {message}")]
    Unreadable { path: PathBuf, message: String },

    #[error("schema error at `{key}`: {message}")]
    Schema { key: String, message: String },

    #[error("`{dt_key}` = {dt} does not divide `{t_key}` = {t}")]
    Divisibility {
        dt_key: String,
        t_key: String,
        dt: f64,
        t: f64,
    },

    #[error("invalid value for `{key}`: {message}")]
    Invalid { key: String, message: String },
}

impl ConfigError {
    fn invalid(key: &str, message: impl ToString) -> Self {
        ConfigError::Invalid {
            key: key.to_string(),
            message: message.to_string(),
        }
    }
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Root seed of every random draw (ChaCha8).
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub model: ModelConfig,
    pub grid: GridConfig,
    pub measure: Option<MeasureConfig>,
    #[serde(default, rename = "static")]
    pub static_game: StaticConfig,
    #[serde(default)]
    pub ergodic: ErgodicConfig,
    pub horizon: Option<HorizonConfig>,
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub validate: ValidateConfig,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub name: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub cells: Vec<usize>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "snake_case")]
pub enum MeasureConfig {
    Dirac {
        point: Vec<f64>,
    },
    Particles {
        points: Vec<Vec<f64>>,
        weights: Option<Vec<f64>>,
    },
    /// Random atoms in the grid box.
    Random {
        atoms: usize,
    },
    /// Indicator density of a sub-box, sampled into particles.
    UniformBox {
        lower: Vec<f64>,
        upper: Vec<f64>,
        particles: usize,
    },
    Gaussian {
        center: Vec<f64>,
        sigma: f64,
        particles: usize,
    },
    /// Particle CSV as written by `mfg static`, relative to the config file.
    File {
        path: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum DampingKind {
    #[default]
    Harmonic,
    Constant,
}

fn damping(kind: DampingKind, lambda: Option<f64>, section: &str) -> Result<DampingSchedule, ConfigError> {
    let schedule = match (kind, lambda) {
        (DampingKind::Harmonic, None) => DampingSchedule::Harmonic,
        (DampingKind::Harmonic, Some(_)) => {
            return Err(ConfigError::invalid(
                &format!("{section}.lambda"),
                "only meaningful with damping = \"constant\"",
            ))
        }
        (DampingKind::Constant, Some(l)) => DampingSchedule::Constant(l),
        (DampingKind::Constant, None) => {
            return Err(ConfigError::invalid(
                &format!("{section}.lambda"),
                "required with damping = \"constant\"",
            ))
        }
    };
    schedule
        .validate()
        .map_err(|e| ConfigError::invalid(&format!("{section}.lambda"), e))?;
    Ok(schedule)
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StaticConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub damping: DampingKind,
    pub lambda: Option<f64>,
    pub rule: BestResponseRule,
    pub argmin_tol: Option<f64>,
}

impl Default for StaticConfig {
    fn default() -> Self {
        let d = StaticOptions::default();
        StaticConfig {
            tol: d.tol,
            max_iter: d.max_iter,
            damping: DampingKind::Harmonic,
            lambda: None,
            rule: d.rule,
            argmin_tol: d.argmin_tol,
        }
    }
}

impl StaticConfig {
    pub fn options(&self) -> Result<StaticOptions, ConfigError> {
        positive("static.tol", self.tol)?;
        Ok(StaticOptions {
            damping: damping(self.damping, self.lambda, "static")?,
            tol: self.tol,
            max_iter: self.max_iter,
            argmin_tol: self.argmin_tol,
            rule: self.rule,
        })
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ErgodicConfig {
    pub static_tol: f64,
    pub sweep_tol: f64,
    pub argmin_tol: Option<f64>,
    pub converse_tol: f64,
}

impl Default for ErgodicConfig {
    fn default() -> Self {
        ErgodicConfig {
            static_tol: 1e-6,
            sweep_tol: 1e-12,
            argmin_tol: None,
            converse_tol: 1e-9,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HorizonConfig {
    #[serde(rename = "T")]
    pub t: f64,
    pub dt: f64,
    #[serde(default = "default_mfg_tol")]
    pub tol: f64,
    #[serde(default = "default_mfg_iter")]
    pub max_iter: usize,
    #[serde(default)]
    pub damping: DampingKind,
    pub lambda: Option<f64>,
    pub control_radius: Option<f64>,
    pub control_mesh: Option<f64>,
}

fn default_mfg_tol() -> f64 {
    1e-3
}

fn default_mfg_iter() -> usize {
    50
}

fn default_t_list() -> Vec<f64> {
    vec![5.0, 10.0, 20.0, 40.0]
}

fn default_s_grid() -> Vec<f64> {
    vec![0.1, 0.25, 0.5, 0.75, 1.0]
}

fn default_radius() -> f64 {
    1.0
}

fn default_delta() -> f64 {
    0.1
}

fn default_semilimit_tol() -> f64 {
    0.05
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(rename = "T_list", default = "default_t_list")]
    pub t_list: Vec<f64>,
    #[serde(default = "default_s_grid")]
    pub s_grid: Vec<f64>,
    pub dt: f64,
    #[serde(default = "default_radius")]
    pub radius: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_mfg_tol")]
    pub tol: f64,
    #[serde(default = "default_mfg_iter")]
    pub max_iter: usize,
    #[serde(default)]
    pub damping: DampingKind,
    pub lambda: Option<f64>,
    pub control_radius: Option<f64>,
    pub control_mesh: Option<f64>,
    /// Singleton limit point for the weak KAM check; defaults to the model's
    /// known argmin when it is a single point.
    pub x_star: Option<Vec<f64>>,
    #[serde(default = "default_semilimit_tol")]
    pub semilimit_tol: f64,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValidateConfig {
    pub samples: usize,
}

impl Default for ValidateConfig {
    fn default() -> Self {
        ValidateConfig { samples: 32 }
    }
}

/// A parsed config together with the facts derived from its file.
#[derive(Clone, Debug)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    /// Hex SHA-256 of the raw file bytes.
    pub sha256: String,
    pub base_dir: PathBuf,
    pub grid: SpatialGrid,
}

pub fn parse_config(path: &Path) -> Result<LoadedConfig, ConfigError> {
    if !path.exists() {
        return Err(ConfigError::Missing(path.to_path_buf()));
    }
    let bytes = std::fs::read(path).map_err(|e| ConfigError::Unreadable {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let text = String::from_utf8(bytes.clone()).map_err(|e| ConfigError::Unreadable {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let config = parse_str(&text)?;
    let grid = config.validate()?;
    Ok(LoadedConfig {
        config,
        sha256: hex::encode(Sha256::digest(&bytes)),
        base_dir: path.parent().map(Path::to_path_buf).unwrap_or_default(),
        grid,
    })
}

/// Deserialize without the file-level checks; errors carry the offending key path.
pub fn parse_str(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let de = toml::Deserializer::new(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let key = e.path().to_string();
        let inner = e.into_inner();
        ConfigError::Schema {
            key,
            message: inner.message().trim().to_string(),
        }
    })
}

fn positive(key: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(ConfigError::invalid(key, format!("{v} must be positive")))
    }
}

fn divides(dt_key: &str, t_key: &str, dt: f64, t: f64) -> Result<(), ConfigError> {
    positive(dt_key, dt)?;
    positive(t_key, t)?;
    step_count(t, dt).map(|_| ()).map_err(|_| ConfigError::Divisibility {
        dt_key: dt_key.into(),
        t_key: t_key.into(),
        dt,
        t,
    })
}

fn point(dim: usize, key: &str, v: &[f64]) -> Result<Point, ConfigError> {
    if v.len() != dim {
        return Err(ConfigError::invalid(
            key,
            format!("expected {dim} coordinates, got {}", v.len()),
        ));
    }
    Ok(if dim == 1 { [v[0], 0.0] } else { [v[0], v[1]] })
}

impl ExperimentConfig {
    /// Cross-field checks. Returns the grid.
    pub fn validate(&self) -> Result<SpatialGrid, ConfigError> {
        let g = &self.grid;
        if g.lower.len() != g.upper.len() || g.lower.len() != g.cells.len() {
            return Err(ConfigError::invalid(
                "grid",
                "`lower`, `upper` and `cells` must have the same length",
            ));
        }
        let grid = SpatialGrid::new(&g.lower, &g.upper, &g.cells).map_err(|e| ConfigError::invalid("grid", e))?;
        self.static_game.options()?;
        if let Some(h) = &self.horizon {
            divides("horizon.dt", "horizon.T", h.dt, h.t)?;
            self.mfg_options(h.dt, h.tol, h.max_iter, (h.damping, h.lambda), "horizon")?;
        }
        if let Some(s) = &self.sweep {
            if s.t_list.is_empty() {
                return Err(ConfigError::invalid("sweep.T_list", "needs at least one horizon"));
            }
            for (i, t) in s.t_list.iter().enumerate() {
                divides("sweep.dt", &format!("sweep.T_list[{i}]"), s.dt, *t)?;
            }
            if s.s_grid.is_empty() || s.s_grid.iter().any(|v| !(*v > 0.0 && *v <= 1.0)) {
                return Err(ConfigError::invalid("sweep.s_grid", "values must lie in (0, 1]"));
            }
            positive("sweep.radius", s.radius)?;
            positive("sweep.delta", s.delta)?;
            if let Some(x) = &s.x_star {
                point(grid.dim(), "sweep.x_star", x)?;
            }
        }
        self.cost(&grid)?;
        Ok(grid)
    }

    pub fn cost(&self, grid: &SpatialGrid) -> Result<CostFunctional, ConfigError> {
        builtin(&self.model.name, &self.model.params, grid).map_err(|e| ConfigError::invalid("model", e))
    }

    fn mfg_options(
        &self,
        dt: f64,
        tol: f64,
        max_iter: usize,
        damping_cfg: (DampingKind, Option<f64>),
        section: &str,
    ) -> Result<MfgOptions, ConfigError> {
        positive(&format!("{section}.tol"), tol)?;
        Ok(MfgOptions {
            hjb: HjbOptions::new(dt),
            damping: damping(damping_cfg.0, damping_cfg.1, section)?,
            tol,
            max_iter,
        })
    }

    pub fn horizon_options(&self) -> Result<(f64, MfgOptions), ConfigError> {
        let h = self
            .horizon
            .as_ref()
            .ok_or_else(|| ConfigError::invalid("horizon", "section is required"))?;
        let mut opts = self.mfg_options(h.dt, h.tol, h.max_iter, (h.damping, h.lambda), "horizon")?;
        opts.hjb.control_radius = h.control_radius;
        opts.hjb.control_mesh = h.control_mesh;
        Ok((h.t, opts))
    }

    pub fn sweep_params(&self) -> Result<SweepParams, ConfigError> {
        let s = self
            .sweep
            .as_ref()
            .ok_or_else(|| ConfigError::invalid("sweep", "section is required"))?;
        let mut mfg = self.mfg_options(s.dt, s.tol, s.max_iter, (s.damping, s.lambda), "sweep")?;
        mfg.hjb.control_radius = s.control_radius;
        mfg.hjb.control_mesh = s.control_mesh;
        Ok(SweepParams {
            t_list: s.t_list.clone(),
            s_grid: s.s_grid.clone(),
            mfg,
            radius: s.radius,
            delta: s.delta,
        })
    }

    /// The `[measure]` section realized on `grid`.
    pub fn measure(&self, grid: &SpatialGrid, base_dir: &Path) -> Result<DiscreteMeasure, ConfigError> {
        let section = self
            .measure
            .as_ref()
            .ok_or_else(|| ConfigError::invalid("measure", "section is required"))?;
        let dim = grid.dim();
        let m = match section {
            MeasureConfig::Dirac { point: p } => DiscreteMeasure::dirac(dim, point(dim, "measure.point", p)?),
            MeasureConfig::Particles { points, weights } => {
                let pts = points
                    .iter()
                    .enumerate()
                    .map(|(i, p)| point(dim, &format!("measure.points[{i}]"), p))
                    .collect::<Result<Vec<_>, _>>()?;
                match weights {
                    Some(w) => DiscreteMeasure::normalized(dim, pts, w.clone()),
                    None => DiscreteMeasure::uniform(dim, pts),
                }
                .map_err(|e| ConfigError::invalid("measure", e))?
            }
            MeasureConfig::Random { atoms } => {
                let lo = point(dim, "grid.lower", grid.lower())?;
                let hi = point(dim, "grid.upper", grid.upper())?;
                random_measures(dim, (lo, hi), 1, *atoms, self.seed).remove(0)
            }
            MeasureConfig::UniformBox { lower, upper, particles } => {
                let lo = point(dim, "measure.lower", lower)?;
                let hi = point(dim, "measure.upper", upper)?;
                let density = grid.sample(|x| {
                    let inside = (0..dim).all(|k| x[k] >= lo[k] - 1e-12 && x[k] <= hi[k] + 1e-12);
                    if inside {
                        1.0
                    } else {
                        0.0
                    }
                });
                sample_from_density(&density, grid, *particles, self.seed)
                    .map_err(|e| ConfigError::invalid("measure", e))?
            }
            MeasureConfig::Gaussian { center, sigma, particles } => {
                let c = point(dim, "measure.center", center)?;
                positive("measure.sigma", *sigma)?;
                let density = grid.sample(|x| {
                    let r2: f64 = (0..dim).map(|k| (x[k] - c[k]).powi(2)).sum();
                    (-r2 / (2.0 * sigma * sigma)).exp()
                });
                sample_from_density(&density, grid, *particles, self.seed)
                    .map_err(|e| ConfigError::invalid("measure", e))?
            }
            MeasureConfig::File { path } => {
                let full = base_dir.join(path);
                crate::output::read_particles(&full, dim)?
            }
        };
        m.check_in_box(grid).map_err(|e| ConfigError::invalid("measure", e))?;
        Ok(m)
    }
}
