//! Subcommand orchestration.

use std::path::{Path, PathBuf};

use log::{info, warn};
use mfg_core::asymptotics::{
    non_increasing_with_slack, run_sweep, semilimit_surrogates, singleton_limit_check, spread_ratio,
    SingletonOptions, MONOTONE_SLACK,
};
use mfg_core::cost::assumption_report;
use mfg_core::ergodic::{build_ergodic_triple, converse_check, mather_identity_check, ErgodicOptions};
use mfg_core::horizon::{a_priori_report, checkpoint_indices, solve_mfg};
use mfg_core::static_game::solve_static;
use mfg_core::{DiscreteMeasure, MfgError};
use serde_json::json;
use thiserror::Error;

use crate::config::{parse_config, ConfigError, LoadedConfig, MeasureConfig};
use crate::output::{num, opt, Artifacts, Meta, OutputError};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Static,
    Ergodic,
    Evolve,
    Sweep,
    Validate,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Static => "static",
            Command::Ergodic => "ergodic",
            Command::Evolve => "evolve",
            Command::Sweep => "sweep",
            Command::Validate => "validate",
        }
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("solver error: {0}")]
    Solver(#[from] MfgError),
    #[error(transparent)]
    Output(#[from] OutputError),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Solver(_) | RunError::Output(_) => 3,
        }
    }
}

/// What a successful run produced.
#[derive(Debug)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    /// `validate` found a failed assumption check.
    pub violations: bool,
    pub warnings: Vec<String>,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        if self.violations {
            4
        } else {
            0
        }
    }
}

/// Parse `config_path` and run `command`, writing into `out_dir` (or the configured directory).
pub fn run(command: Command, config_path: &Path, out_dir: Option<&Path>) -> Result<Outcome, RunError> {
    let loaded = parse_config(config_path)?;
    let dir = match out_dir {
        Some(d) => d.to_path_buf(),
        None => loaded.base_dir.join(&loaded.config.output_dir),
    };
    let meta = Meta::new(command.name(), &loaded.sha256, loaded.config.seed);
    let mut art = Artifacts::new(&dir, meta)?;
    let mut outcome = Outcome {
        files: Vec::new(),
        violations: false,
        warnings: Vec::new(),
    };
    match command {
        Command::Static => run_static(&loaded, &mut art, &mut outcome)?,
        Command::Ergodic => run_ergodic(&loaded, &mut art, &mut outcome)?,
        Command::Evolve => run_evolve(&loaded, &mut art, &mut outcome)?,
        Command::Sweep => run_sweep_cmd(&loaded, &mut art, &mut outcome)?,
        Command::Validate => run_validate(&loaded, &mut art, &mut outcome)?,
    }
    for w in &outcome.warnings {
        warn!("{w}");
    }
    outcome.files = art.written().to_vec();
    Ok(outcome)
}

fn run_static(l: &LoadedConfig, art: &mut Artifacts, out: &mut Outcome) -> Result<(), RunError> {
    let cfg = &l.config;
    let cost = cfg.cost(&l.grid)?;
    // without a [measure] section start from four random atoms
    let init = match cfg.measure {
        Some(_) => cfg.measure(&l.grid, &l.base_dir)?,
        None => {
            let mut c = cfg.clone();
            c.measure = Some(MeasureConfig::Random { atoms: 4 });
            c.measure(&l.grid, &l.base_dir)?
        }
    };
    let opts = cfg.static_game.options()?;
    let sol = solve_static(&cost, &l.grid, &init, &opts)?;
    info!("static: residual {:.3e} after {} iterations", sol.residual, sol.log.len());
    if !sol.converged {
        out.warnings.push(format!(
            "static iteration stopped ({:?}) at residual {:.3e} > tol {:.1e}",
            sol.stop, sol.residual, opts.tol
        ));
    }
    art.csv(
        "static_log.csv",
        &[("iter", "1"), ("residual", "cost"), ("d1_step", "length")],
        sol.log.iter().map(|it| vec![it.iter.to_string(), num(it.residual), num(it.d1_step)]),
    )?;
    art.particles("static_measure.csv", &sol.measure)?;
    art.json(
        "static_summary.json",
        json!({
            "model": cost.name(),
            "residual": sol.residual,
            "converged": sol.converged,
            "stop": sol.stop,
            "iterations": sol.log.len(),
            "n_particles": sol.measure.len(),
        }),
    )?;
    Ok(())
}

fn run_ergodic(l: &LoadedConfig, art: &mut Artifacts, out: &mut Outcome) -> Result<(), RunError> {
    let cfg = &l.config;
    let cost = cfg.cost(&l.grid)?;
    let m = cfg.measure(&l.grid, &l.base_dir)?;
    let e = &cfg.ergodic;
    let opts = ErgodicOptions {
        static_tol: e.static_tol,
        sweep_tol: e.sweep_tol,
        argmin_tol: e.argmin_tol,
    };
    let triple = build_ergodic_triple(&cost, &m, &l.grid, &opts)?;
    let converse = converse_check(&cost, &triple, &l.grid, e.converse_tol)?;
    let mather = mather_identity_check(&cost, &m, &l.grid);
    if !converse.passed() {
        out.warnings.push(format!("converse check failed: {converse:?}"));
    }
    if !triple.residuals.outflow_consistent {
        out.warnings
            .push("value function decreases toward the box boundary; truncation may bias v".into());
    }
    art.csv(
        "ergodic_value.csv",
        &[("x", "length"), ("y", "length"), ("v", "cost*length")],
        l.grid
            .nodes()
            .zip(&triple.v)
            .map(|(p, v)| vec![num(p[0]), num(p[1]), num(*v)]),
    )?;
    art.json(
        "ergodic_report.json",
        json!({
            "model": cost.name(),
            "c": triple.c,
            "residuals": triple.residuals,
            "converse": converse,
            "converse_passed": converse.passed(),
            "mather_identity": mather,
            "dirichlet_nodes": triple.dirichlet.len(),
        }),
    )?;
    Ok(())
}

fn run_evolve(l: &LoadedConfig, art: &mut Artifacts, out: &mut Outcome) -> Result<(), RunError> {
    let cfg = &l.config;
    let cost = cfg.cost(&l.grid)?;
    let m0 = cfg.measure(&l.grid, &l.base_dir)?;
    let (horizon, opts) = cfg.horizon_options()?;
    let eq = solve_mfg(&cost, &m0, horizon, &l.grid, &opts)?;
    info!(
        "evolve: {} iterations, fixed-point residual {:.3e}",
        eq.iterations, eq.fixed_point_residual
    );
    if !eq.converged {
        out.warnings.push(format!(
            "fixed point stopped at residual {:.3e} > tol {:.1e}",
            eq.fixed_point_residual, opts.tol
        ));
    }
    art.csv(
        "evolve_residual.csv",
        &[("iter", "1"), ("lambda", "1"), ("residual", "length")],
        eq.log
            .iter()
            .map(|it| vec![it.iter.to_string(), num(it.lambda), num(it.residual)]),
    )?;
    let value = &eq.value;
    let rows: Vec<Vec<String>> = checkpoint_indices(value.n_steps())
        .into_iter()
        .flat_map(|n| {
            let t = value.times[n];
            l.grid
                .nodes()
                .zip(&value.values[n])
                .map(move |(p, u)| vec![num(t), num(p[0]), num(p[1]), num(*u)])
                .collect::<Vec<_>>()
        })
        .collect();
    art.csv(
        "evolve_value.csv",
        &[("t", "time"), ("x", "length"), ("y", "length"), ("u", "cost*time")],
        rows,
    )?;
    art.jsonl(
        "evolve_path.jsonl",
        eq.path.times().iter().zip(eq.path.measures()).map(|(t, m)| measure_json(*t, m)),
    )?;
    art.csv(
        "evolve_trajectories.csv",
        &[
            ("particle", "1"),
            ("weight", "mass"),
            ("sup_position", "length"),
            ("sup_speed", "length/time"),
        ],
        eq.stats
            .sup_position
            .iter()
            .zip(&eq.stats.sup_speed)
            .zip(m0.weights())
            .enumerate()
            .map(|(j, ((p, s), w))| vec![j.to_string(), num(*w), num(*p), num(*s)]),
    )?;
    art.json(
        "evolve_summary.json",
        json!({
            "model": cost.name(),
            "T": horizon,
            "dt": opts.hjb.dt,
            "converged": eq.converged,
            "iterations": eq.iterations,
            "fixed_point_residual": eq.fixed_point_residual,
            "best_response_gap": eq.best_response_gap,
            "chi": eq.stats.chi,
            "chi_prime": eq.stats.chi_prime,
            "a_priori": a_priori_report(value),
            "f_range": value.f_range,
        }),
    )?;
    Ok(())
}

fn measure_json(t: f64, m: &DiscreteMeasure) -> serde_json::Value {
    let dim = m.dim();
    let points: Vec<Vec<f64>> = m.points().iter().map(|p| p[..dim].to_vec()).collect();
    json!({ "t": t, "points": points, "weights": m.weights() })
}

fn run_sweep_cmd(l: &LoadedConfig, art: &mut Artifacts, out: &mut Outcome) -> Result<(), RunError> {
    let cfg = &l.config;
    let sweep_cfg = cfg.sweep.as_ref().ok_or_else(|| ConfigError::Invalid {
        key: "sweep".into(),
        message: "section is required".into(),
    })?;
    let cost = cfg.cost(&l.grid)?;
    let m0 = cfg.measure(&l.grid, &l.base_dir)?;
    let params = cfg.sweep_params()?;
    let records = run_sweep(&cost, &m0, &l.grid, &params)?;
    for r in records.iter().filter(|r| r.tainted) {
        out.warnings.push(format!(
            "T = {}: fixed point stopped at residual {:.3e}; record is tainted",
            r.t, r.fixed_point_residual
        ));
    }

    let columns = [
        ("T", "time"),
        ("s", "1"),
        ("time", "time"),
        ("support_dist", "length"),
        ("d1_to_limit", "length"),
        ("value_rate_err", "cost"),
        ("wkam_err", "cost*time"),
        ("c_star", "cost"),
        ("iterations", "1"),
        ("fixed_point_residual", "length"),
        ("best_response_gap", "length"),
        ("occupational_ratio", "1"),
        ("chi", "length"),
        ("chi_prime", "length/time"),
        ("r1", "length"),
        ("tainted", "bool"),
        ("estimated", "bool"),
    ];
    let rows: Vec<Vec<String>> = records
        .iter()
        .flat_map(|r| {
            r.points.iter().map(move |p| {
                vec![
                    num(r.t),
                    num(p.s),
                    num(p.time),
                    num(p.support_dist),
                    opt(p.d1_to_limit),
                    num(p.value_rate_err),
                    opt(p.wkam_err),
                    num(r.c_star),
                    r.iterations.to_string(),
                    num(r.fixed_point_residual),
                    num(r.best_response_gap),
                    num(r.occupational_ratio),
                    num(r.chi),
                    num(r.chi_prime),
                    num(r.r1),
                    r.tainted.to_string(),
                    r.estimated.to_string(),
                ]
            })
        })
        .collect();
    art.csv("sweep.csv", &columns, rows)?;

    // long format: one (T, s, quantity, value) per line
    let mut long = Vec::new();
    for r in &records {
        long.push(vec![num(r.t), String::new(), "scaled_rate".into(), num(r.scaled_rate())]);
        for p in &r.points {
            let mut push = |q: &str, v: f64| long.push(vec![num(r.t), num(p.s), q.to_string(), num(v)]);
            push("value_rate_err", p.value_rate_err);
            push("support_dist", p.support_dist);
            if let Some(d) = p.d1_to_limit {
                push("d1_to_limit", d);
            }
            if let Some(w) = p.wkam_err {
                push("wkam_err", w);
            }
        }
    }
    art.csv(
        "sweep_rate.csv",
        &[("T", "time"), ("s", "1"), ("quantity", "name"), ("value", "varies")],
        long,
    )?;

    let scaled: Vec<f64> = records.iter().map(|r| r.scaled_rate()).collect();
    let spread = spread_ratio(&scaled);
    let collapse: Vec<serde_json::Value> = params
        .s_grid
        .iter()
        .map(|&s| {
            let seq: Vec<f64> = records
                .iter()
                .filter_map(|r| r.point_near(s).map(|p| p.support_dist))
                .collect();
            json!({
                "s": s,
                "support_dist": seq,
                "passed": non_increasing_with_slack(&seq, MONOTONE_SLACK),
            })
        })
        .collect();
    let eps = 10.0 * (l.grid.max_spacing() + params.mfg.hjb.dt);
    let grad_cap = (4.0 * cost.meta().m_bound).sqrt() + 0.1;
    let a_priori_ok = records.iter().all(|r| {
        r.a_priori.max_gradient <= grad_cap
            && r.a_priori.rate_range.0 >= r.f_range.0 - eps
            && r.a_priori.rate_range.1 <= r.f_range.1 + eps
    });
    let x_star = match &sweep_cfg.x_star {
        Some(x) => Some(if x.len() == 1 { [x[0], 0.0] } else { [x[0], x[1]] }),
        None => cost
            .meta()
            .analytic_argmin
            .as_ref()
            .filter(|a| a.len() == 1)
            .map(|a| a[0]),
    };
    let singleton = match x_star {
        Some(x) => match singleton_limit_check(&cost, &records, &x, &l.grid, &SingletonOptions::default()) {
            Ok(rep) => json!({ "passed": rep.passed(), "report": rep }),
            Err(e) => json!({ "skipped": e.to_string() }),
        },
        None => json!({ "skipped": "argmin is not a known single point" }),
    };
    let semilimit = match semilimit_surrogates(&records, &cost, &l.grid) {
        Ok(rep) => {
            let met = rep.met(sweep_cfg.semilimit_tol);
            json!({ "s_grid": rep.s_grid, "gap": rep.gap, "met": met, "tol": sweep_cfg.semilimit_tol })
        }
        Err(e) => json!({ "skipped": e.to_string() }),
    };
    art.json(
        "sweep_summary.json",
        json!({
            "model": cost.name(),
            "records": records,
            "criteria": {
                "value_rate": { "scaled": scaled, "spread_ratio": spread, "passed": spread <= 2.0 },
                "support_collapse": collapse,
                "a_priori": { "gradient_cap": grad_cap, "passed": a_priori_ok },
                "singleton_limit": singleton,
                "semilimits": semilimit,
            },
        }),
    )?;
    Ok(())
}

fn run_validate(l: &LoadedConfig, art: &mut Artifacts, out: &mut Outcome) -> Result<(), RunError> {
    let cfg = &l.config;
    let cost = cfg.cost(&l.grid)?;
    let report = assumption_report(&cost, &l.grid, cfg.validate.samples, cfg.seed)?;
    println!("assumption report for {}", report.model);
    for c in &report.checks {
        println!(
            "  [{}] {:<16} observed {:>12.5e}  bound {:>12.5e}  {}",
            if c.passed { "ok" } else { "FAIL" },
            c.name,
            c.observed,
            c.bound,
            c.note
        );
    }
    out.violations = !report.all_passed();
    art.json(
        "validate_report.json",
        json!({ "report": report, "all_passed": report.all_passed() }),
    )?;
    Ok(())
}
