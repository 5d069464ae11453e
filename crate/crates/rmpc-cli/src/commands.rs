//! The `certify`, `simulate`, and `montecarlo` commands: each builds the
//! configured problem, runs, and writes artifacts stamped with the config
//! hash and seed list.

use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde_json::json;

use rmpc::controller::{certify_vertices, ControllerVariant, RmpcController};
use rmpc::dynamics::impulse_stacks;
use rmpc::sim::{fuel_rate, monte_carlo, run_closed_loop, InitialState, MonteCarloConfig};
use rmpc::tightening::build_table;

use crate::config::{build, rt, BuiltProblem, CliError, RunConfig, StartKind};

const DEFAULT_RUNS: usize = 50;
const DEFAULT_VIOLATION_TOL: f64 = 1e-7;

fn variant_name(v: ControllerVariant) -> &'static str {
    match v {
        ControllerVariant::Nominal => "nominal",
        ControllerVariant::Conservative => "conservative",
        ControllerVariant::Dependent => "dependent",
    }
}

fn out_dir(cfg: &RunConfig, flag: Option<PathBuf>) -> Result<PathBuf, CliError> {
    let dir = flag
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir).map_err(|e| CliError::Io {
        path: dir.clone(),
        message: e.to_string(),
    })?;
    Ok(dir)
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(rt)?;
    text.push('\n');
    write_text(path, &text)
}

/// Checks the configured invariant set at its vertices, exactly as given,
/// and writes `certificate.json`.  Returns whether every vertex passed.
pub fn certify(
    cfg: &RunConfig,
    out: Option<PathBuf>,
    variant: Option<ControllerVariant>,
) -> Result<bool, CliError> {
    let dir = out_dir(cfg, out)?;
    let built = build(cfg)?;
    let variant = variant.unwrap_or(cfg.variant);
    let ctrl_cfg = built.config.with_variant(variant).map_err(rt)?;
    let stacks = impulse_stacks(ctrl_cfg.system(), ctrl_cfg.horizon()).map_err(rt)?;
    let table = build_table(ctrl_cfg.invariant_set(), &stacks, ctrl_cfg.model()).map_err(rt)?;
    let cert = certify_vertices(&ctrl_cfg, &stacks, &table).map_err(rt)?;

    let optimal = cert.checks.iter().filter(|c| c.objective.is_some()).count();
    let report = json!({
        "schema_version": 1,
        "config_hash": cfg.hash(),
        "variant": variant_name(variant),
        "horizon": ctrl_cfg.horizon(),
        "mode": cert.mode,
        "passed": cert.passed,
        "vertices": cert.checks.len(),
        "vertices_feasible": optimal,
        "checks": cert.checks,
    });
    let path = dir.join("certificate.json");
    write_json(&path, &report)?;
    println!(
        "certify[{}]: {} ({}/{} vertices feasible) -> {}",
        variant_name(variant),
        if cert.passed { "PASS" } else { "FAIL" },
        optimal,
        cert.checks.len(),
        path.display()
    );
    Ok(cert.passed)
}

fn initial_state(cfg: &RunConfig, built: &BuiltProblem) -> DVector<f64> {
    cfg.x0
        .as_ref()
        .map(|x| DVector::from_row_slice(x))
        .unwrap_or_else(|| DVector::zeros(built.plant.num_states()))
}

/// Runs one closed loop and writes `trace.csv` plus `run.json`.  Returns
/// whether the run completed without the controller failing.
pub fn simulate(
    cfg: &RunConfig,
    out: Option<PathBuf>,
    variant: Option<ControllerVariant>,
    steps: Option<usize>,
    seed_list: Option<Vec<u64>>,
) -> Result<bool, CliError> {
    let dir = out_dir(cfg, out)?;
    let built = build(cfg)?;
    let variant = variant.unwrap_or(cfg.variant);
    let ctrl =
        RmpcController::offline_init(built.config.with_variant(variant).map_err(rt)?).map_err(rt)?;
    let steps = steps.or(cfg.steps).unwrap_or(built.default_steps);
    let seed = seed_list
        .as_ref()
        .and_then(|s| s.first().copied())
        .or_else(|| cfg.seeds.as_ref().and_then(|s| s.first().copied()))
        .unwrap_or(0);
    let x0 = initial_state(cfg, &built);
    let trace =
        run_closed_loop(&built.plant, &built.truth, &ctrl, &x0, steps, cfg.strategy, seed)
            .map_err(rt)?;

    let tol = cfg.violation_tol.unwrap_or(DEFAULT_VIOLATION_TOL);
    let certified = ctrl.config().invariant_set();
    let mut violations = 0usize;
    for x in &trace.states {
        if !certified.contains(x, tol).map_err(rt)? {
            violations += 1;
        }
    }
    let cut = cfg.transient_cut.unwrap_or(built.default_transient_cut);
    let fuel = fuel_rate(&trace, cut.min(steps.saturating_sub(1)), built.sample_period)
        .map(|f| f * built.fuel_scale);
    let mean_solve_ms = if trace.solve_times.is_empty() {
        0.0
    } else {
        trace.solve_times.iter().sum::<f64>() / trace.solve_times.len() as f64 * 1e3
    };

    let hash = cfg.hash();
    let csv_path = dir.join("trace.csv");
    write_text(&csv_path, &format!("# config_hash {hash}\n{}", trace.to_csv()))?;
    let report = json!({
        "schema_version": 1,
        "config_hash": hash,
        "variant": variant_name(variant),
        "seed": seed,
        "steps": steps,
        "completed": trace.completed(),
        "failure": trace.failure.as_ref().map(|(k, msg)| format!("step {k}: {msg}")),
        "violations": violations,
        "fuel_rate": fuel,
        "fuel_unit": built.fuel_unit,
        "shrink_alpha": ctrl.shrink_alpha(),
        "mean_solve_ms": mean_solve_ms,
    });
    let json_path = dir.join("run.json");
    write_json(&json_path, &report)?;
    println!(
        "simulate[{}]: {} steps, {} violations, fuel {} -> {}, {}",
        variant_name(variant),
        trace.steps(),
        violations,
        fuel.map_or("n/a".into(), |f| format!("{f:.3} {}", built.fuel_unit)),
        csv_path.display(),
        json_path.display()
    );
    Ok(trace.completed())
}

/// Runs the full batch across seeds and controller variants and writes
/// `runs.csv` plus `stats.json`.
pub fn montecarlo(
    cfg: &RunConfig,
    out: Option<PathBuf>,
    variant: Option<ControllerVariant>,
    runs: Option<usize>,
    steps: Option<usize>,
    seed_list: Option<Vec<u64>>,
) -> Result<bool, CliError> {
    let dir = out_dir(cfg, out)?;
    let built = build(cfg)?;
    let variants: Vec<ControllerVariant> = match (variant, &cfg.variants) {
        (Some(v), _) => vec![v],
        (None, Some(list)) => list.clone(),
        (None, None) => vec![cfg.variant],
    };
    let seeds: Vec<u64> = match seed_list.or_else(|| cfg.seeds.clone()) {
        Some(seeds) => {
            if let Some(r) = runs.or(cfg.runs) {
                if r != seeds.len() {
                    return Err(CliError::Validation(vec![format!(
                        "runs: {r} conflicts with {} seeds",
                        seeds.len()
                    )]));
                }
            }
            seeds
        }
        None => (0..runs.or(cfg.runs).unwrap_or(DEFAULT_RUNS) as u64).collect(),
    };
    let steps = steps.or(cfg.steps).unwrap_or(built.default_steps);
    let cut = cfg.transient_cut.unwrap_or(built.default_transient_cut).min(steps.saturating_sub(1));

    let mut controllers = Vec::with_capacity(variants.len());
    for &v in &variants {
        let ctrl = RmpcController::offline_init(built.config.with_variant(v).map_err(rt)?)
            .map_err(rt)?;
        controllers.push((variant_name(v).to_string(), ctrl));
    }
    let refs: Vec<(String, &RmpcController)> =
        controllers.iter().map(|(name, c)| (name.clone(), c)).collect();
    let start = match (&cfg.x0, cfg.start) {
        (Some(x0), _) => InitialState::Fixed(DVector::from_row_slice(x0)),
        (None, StartKind::Vertices) => InitialState::VertexCycle,
        (None, StartKind::Origin) => InitialState::Origin,
    };
    let stats = monte_carlo(&MonteCarloConfig {
        plant: &built.plant,
        truth: &built.truth,
        controllers: &refs,
        initial_state: start,
        steps,
        seeds: &seeds,
        strategy: cfg.strategy,
        transient_cut: cut,
        sample_period: built.sample_period,
        fuel_scale: built.fuel_scale,
        violation_tol: cfg.violation_tol.unwrap_or(DEFAULT_VIOLATION_TOL),
    })
    .map_err(rt)?;

    let hash = cfg.hash();
    let csv_path = dir.join("runs.csv");
    write_text(&csv_path, &format!("# config_hash {hash}\n{}", stats.runs_csv()))?;
    let mut report = serde_json::to_value(&stats).map_err(rt)?;
    let obj = report.as_object_mut().expect("stats serialize to an object");
    obj.insert("config_hash".into(), json!(hash));
    obj.insert("fuel_unit".into(), json!(built.fuel_unit));
    obj.insert(
        "variants".into(),
        json!(variants.iter().map(|&v| variant_name(v)).collect::<Vec<_>>()),
    );
    obj.insert(
        "shrink_alpha".into(),
        json!(controllers
            .iter()
            .map(|(name, c)| json!({"controller": name, "alpha": c.shrink_alpha()}))
            .collect::<Vec<_>>()),
    );
    let json_path = dir.join("stats.json");
    write_json(&json_path, &report)?;

    println!(
        "montecarlo: {} runs x {} controllers, {} steps -> {}, {}",
        seeds.len(),
        refs.len(),
        steps,
        csv_path.display(),
        json_path.display()
    );
    for summary in &stats.controllers {
        println!(
            "  {:>13}: completed {}/{}, fuel {} {} (std {}), violations {} in {} runs, solve ms median {:.3}",
            summary.name,
            summary.completed,
            summary.runs,
            summary.fuel_mean.map_or("n/a".into(), |f| format!("{f:.3}")),
            built.fuel_unit,
            summary.fuel_std.map_or("n/a".into(), |f| format!("{f:.3}")),
            summary.total_violations,
            summary.runs_with_violations,
            summary.solve_ms_median,
        );
    }
    for cmp in &stats.comparisons {
        println!(
            "  {} vs {}: mean diff {:.3} {}, t = {:.3}, p = {:.4}",
            cmp.a, cmp.b, cmp.mean_diff, built.fuel_unit, cmp.t_statistic, cmp.p_value
        );
    }
    Ok(true)
}
