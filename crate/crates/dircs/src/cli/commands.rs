//! Implementations behind the `dircs` subcommands.

use std::path::Path;

use rayon::prelude::*;

use crate::baselines::{pls, sls};
use crate::cli::config::{apply_sweep_value, load_config, load_plan, parse_angle};
use crate::datagen::{load_signals_csv, read_scenario, write_scenario, Scenario, ScenarioSpec};
use crate::error::{Error, Result};
use crate::harness::{SocketTransport, WorkerParams, DEFAULT_TIMEOUT};
use crate::metrics::{
    comm_cost, eval_csv_row, evaluate_nodes, mark_improved, quantile, write_eval_csv, MethodId,
    NodeEvaluation, EVAL_CSV_HEADER,
};
use crate::model::{InitKind, NodeDataset, ProblemConfig, SignalVector};
use crate::objective::PenaltyScale;
use crate::rng::{derive_seed, stream};
use crate::solver::{
    initial_betas, run_cir, run_dir, write_trace_csv, DirEngine, RunTrace, StopRule,
};
use crate::tuning::{separate_tune, split_all, warm_start_tune, write_tune_csv};

/// Generate a scenario to CSV files. Prints the seed actually used.
pub fn cmd_gen(config: &Path, seed_override: Option<u64>, out: &Path) -> Result<()> {
    let (mut cfg, signals_csv) = load_config(config)?;
    if let Some(seed) = seed_override {
        cfg.seed = seed;
    }
    let spec = ScenarioSpec::from(&cfg);
    let scenario = match signals_csv {
        Some(path) => {
            let signals = load_signals_csv(Path::new(&path), cfg.p)?;
            Scenario::generate_with_signals(&spec, signals)?
        }
        None => Scenario::generate(&spec)?,
    };
    write_scenario(out, &scenario)?;
    println!(
        "generated {} nodes (p = {}) into {} with seed {}",
        cfg.m,
        cfg.p,
        out.display(),
        cfg.seed
    );
    Ok(())
}

fn load_data(dir: &Path) -> Result<Vec<NodeDataset>> {
    let nodes = read_scenario(dir)?;
    for (j, node) in nodes.iter().enumerate() {
        if node.truth.is_none() {
            return Err(Error::Config {
                line: 0,
                msg: format!("node {j} has no ground truth; evaluation needs truth.csv"),
            });
        }
    }
    Ok(nodes)
}

fn run_method(
    cfg: &ProblemConfig,
    method: MethodId,
    lambda: f64,
    datasets: &[NodeDataset],
) -> Result<(Vec<SignalVector>, Option<RunTrace>)> {
    match method {
        MethodId::Sls => {
            let estimates = datasets.iter().map(sls).collect::<Result<Vec<_>>>()?;
            Ok((estimates, None))
        }
        MethodId::Pls => {
            let pooled = pls(datasets)?;
            Ok((vec![pooled; datasets.len()], None))
        }
        MethodId::Dir => {
            let (estimates, trace) = run_dir(cfg, lambda, datasets)?;
            Ok((estimates, Some(trace)))
        }
        MethodId::Cir => {
            let (estimates, trace) = run_cir(cfg, lambda, datasets)?;
            Ok((estimates, Some(trace)))
        }
        MethodId::Drd => Err(Error::Config {
            line: 0,
            msg: "method drd is a reserved id without an implementation".into(),
        }),
    }
}

/// Run one method on a stored scenario; write per-node evaluations and,
/// for iterative methods, the round trace.
pub fn cmd_run(
    config: &Path,
    data: &Path,
    method: MethodId,
    lambda_override: Option<f64>,
    seed_override: Option<u64>,
    out: &Path,
) -> Result<()> {
    let (mut cfg, _) = load_config(config)?;
    if let Some(seed) = seed_override {
        cfg.seed = seed;
    }
    let datasets = load_data(data)?;
    let lambda = lambda_override.unwrap_or(cfg.lambda);
    let effective_lambda = if method == MethodId::Sls || method == MethodId::Pls {
        0.0
    } else {
        lambda
    };
    let (estimates, trace) = run_method(&cfg, method, lambda, &datasets)?;
    let mut evals = evaluate_nodes(&estimates, &datasets, method, effective_lambda)?;
    if method != MethodId::Sls {
        let reference = datasets.iter().map(sls).collect::<Result<Vec<_>>>()?;
        let ref_evals = evaluate_nodes(&reference, &datasets, MethodId::Sls, 0.0)?;
        mark_improved(&mut evals, &ref_evals);
    }
    std::fs::create_dir_all(out)?;
    let scenario_id = data
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scenario".into());
    write_eval_csv(&out.join("results.csv"), &scenario_id, 0, &evals)?;
    if let Some(trace) = &trace {
        write_trace_csv(&out.join("trace.csv"), trace)?;
        // Report-only decomposition residuals at the converged estimates.
        let mut diag = String::from("node_id,corrected_ls_residual\n");
        for j in 0..datasets.len() {
            let resid =
                crate::metrics::corrected_ls_residual(j, &estimates, &datasets, lambda, cfg.m)
                    .map(|r| r.to_string())
                    .unwrap_or_else(|_| "nan".into());
            diag.push_str(&format!("{j},{resid}\n"));
        }
        std::fs::write(out.join("diagnostics.csv"), diag)?;
    }
    let mean_l2: f64 = evals.iter().map(|e| e.l2_error).sum::<f64>() / evals.len() as f64;
    let mean_cos: f64 = evals.iter().map(|e| e.abs_cosine).sum::<f64>() / evals.len() as f64;
    println!(
        "{method}: mean l2_error {mean_l2:.4}, mean |cos| {mean_cos:.4}{}",
        trace
            .as_ref()
            .map(|t| format!(
                ", {} rounds, {} scalars ({})",
                t.rounds_executed,
                comm_cost(t),
                t.stop
            ))
            .unwrap_or_default()
    );
    Ok(())
}

/// Warm-start selection of the regularization weight on a stored
/// scenario, against the separate-tuning reference.
pub fn cmd_tune(
    config: &Path,
    data: &Path,
    grid: Option<String>,
    seed_override: Option<u64>,
    out: &Path,
) -> Result<()> {
    let (mut cfg, _) = load_config(config)?;
    if let Some(seed) = seed_override {
        cfg.seed = seed;
    }
    if let Some(grid) = grid {
        cfg.lambda_grid = grid
            .split(',')
            .map(|v| parse_angle(v, 0))
            .collect::<Result<_>>()?;
    }
    let datasets = load_data(data)?;
    let splits = split_all(&datasets, cfg.validation_fraction, cfg.seed)?;
    let report = warm_start_tune(&cfg, &splits)?;
    std::fs::create_dir_all(out)?;
    write_tune_csv(&out.join("tune.csv"), &report)?;
    println!(
        "warm start: chose lambda = {} (val accuracy {:.4}) in {} rounds, {:.3}s",
        report.chosen_lambda, report.best_accuracy, report.total_rounds, report.wall_seconds
    );
    let separate = separate_tune(&cfg, &splits)?;
    println!(
        "separate:   chose lambda = {} (val accuracy {:.4}) in {} rounds, {:.3}s",
        separate.chosen_lambda,
        separate.best_accuracy,
        separate.total_rounds,
        separate.wall_seconds
    );
    Ok(())
}

struct SweepCell {
    scenario_id: String,
    rep: usize,
    rows: Vec<NodeEvaluation>,
    failure: Option<String>,
    method: MethodId,
}

/// Replication sweep over one scenario axis; one row per
/// (scenario, rep, node, method) plus per-(scenario, method) aggregates.
pub fn cmd_sweep(plan_path: &Path, seed_override: Option<u64>, out: &Path) -> Result<()> {
    let mut plan = load_plan(plan_path)?;
    if let Some(seed) = seed_override {
        plan.base.seed = seed;
    }
    std::fs::create_dir_all(out)?;
    let mut jobs = Vec::new();
    for (scen_idx, &value) in plan.values.iter().enumerate() {
        let (cfg, id) = apply_sweep_value(&plan.base, &plan.sweep, value);
        cfg.validate()?;
        for rep in 0..plan.replications {
            jobs.push((scen_idx, id.clone(), cfg.clone(), rep));
        }
    }
    let methods = plan.methods.clone();
    let cells: Vec<Vec<SweepCell>> = jobs
        .par_iter()
        .map(|(scen_idx, id, cfg, rep)| {
            let mut cfg = cfg.clone();
            cfg.seed = derive_seed(
                plan.base.seed,
                &[stream::REPLICATION, *scen_idx as u64, *rep as u64],
            );
            sweep_one(&cfg, id, *rep, &methods)
        })
        .collect();

    let mut rows_csv = String::from(EVAL_CSV_HEADER);
    rows_csv.push('\n');
    let mut by_key: std::collections::BTreeMap<(String, String), Vec<&NodeEvaluation>> =
        std::collections::BTreeMap::new();
    let mut failures = 0usize;
    for cell in cells.iter().flatten() {
        if let Some(msg) = &cell.failure {
            failures += 1;
            eprintln!(
                "warning: {} rep {} method {} failed: {msg}",
                cell.scenario_id, cell.rep, cell.method
            );
            rows_csv.push_str(&format!(
                "{},{},-1,{},nan,nan,nan,-1\n",
                cell.scenario_id, cell.rep, cell.method
            ));
            continue;
        }
        for row in &cell.rows {
            rows_csv.push_str(&eval_csv_row(&cell.scenario_id, cell.rep, row));
            rows_csv.push('\n');
            by_key
                .entry((cell.scenario_id.clone(), row.method.to_string()))
                .or_default()
                .push(row);
        }
    }
    std::fs::write(out.join("rows.csv"), rows_csv)?;

    let mut agg = String::from(
        "scenario_id,method,nodes,mean_l2_error,mean_abs_cosine,q1_abs_cosine,median_abs_cosine,q3_abs_cosine,improved_ratio\n",
    );
    for ((scenario_id, method), rows) in &by_key {
        let n = rows.len() as f64;
        let mean_l2: f64 = rows.iter().map(|r| r.l2_error).sum::<f64>() / n;
        let cosines: Vec<f64> = rows.iter().map(|r| r.abs_cosine).collect();
        let mean_cos: f64 = cosines.iter().sum::<f64>() / n;
        let improved: Vec<&NodeEvaluation> = rows
            .iter()
            .filter(|r| r.improved.is_some())
            .copied()
            .collect();
        let ratio = if improved.is_empty() {
            f64::NAN
        } else {
            improved.iter().filter(|r| r.improved == Some(true)).count() as f64
                / improved.len() as f64
        };
        agg.push_str(&format!(
            "{scenario_id},{method},{},{mean_l2},{mean_cos},{},{},{},{ratio}\n",
            rows.len(),
            quantile(&cosines, 0.25),
            quantile(&cosines, 0.5),
            quantile(&cosines, 0.75),
        ));
    }
    std::fs::write(out.join("aggregate.csv"), agg)?;
    println!(
        "sweep: {} scenarios x {} reps, {} failures; wrote {}",
        plan.values.len(),
        plan.replications,
        failures,
        out.display()
    );
    Ok(())
}

fn sweep_one(
    cfg: &ProblemConfig,
    scenario_id: &str,
    rep: usize,
    methods: &[MethodId],
) -> Vec<SweepCell> {
    let spec = ScenarioSpec::from(cfg);
    let scenario = match Scenario::generate(&spec) {
        Ok(s) => s,
        Err(e) => {
            return methods
                .iter()
                .map(|&method| SweepCell {
                    scenario_id: scenario_id.to_string(),
                    rep,
                    rows: Vec::new(),
                    failure: Some(format!("generation failed: {e}")),
                    method,
                })
                .collect();
        }
    };
    // The per-node reference for the improvement flag.
    let reference: Option<Vec<NodeEvaluation>> = scenario
        .nodes
        .iter()
        .map(sls)
        .collect::<Result<Vec<_>>>()
        .ok()
        .and_then(|est| evaluate_nodes(&est, &scenario.nodes, MethodId::Sls, 0.0).ok());
    methods
        .iter()
        .map(|&method| {
            let outcome =
                run_method(cfg, method, cfg.lambda, &scenario.nodes).and_then(|(estimates, _)| {
                    let lambda = if method == MethodId::Sls || method == MethodId::Pls {
                        0.0
                    } else {
                        cfg.lambda
                    };
                    evaluate_nodes(&estimates, &scenario.nodes, method, lambda)
                });
            match outcome {
                Ok(mut rows) => {
                    if method != MethodId::Sls {
                        if let Some(reference) = &reference {
                            mark_improved(&mut rows, reference);
                        }
                    }
                    SweepCell {
                        scenario_id: scenario_id.to_string(),
                        rep,
                        rows,
                        failure: None,
                        method,
                    }
                }
                Err(e) => SweepCell {
                    scenario_id: scenario_id.to_string(),
                    rep,
                    rows: Vec::new(),
                    failure: Some(e.to_string()),
                    method,
                },
            }
        })
        .collect()
}

/// Socket server: accept `m` workers, run the distributed solver over
/// loopback TCP, write the same outputs as `run`.
pub fn cmd_serve(
    config: &Path,
    data: &Path,
    bind: &str,
    seed_override: Option<u64>,
    out: &Path,
) -> Result<()> {
    let (mut cfg, _) = load_config(config)?;
    if let Some(seed) = seed_override {
        cfg.seed = seed;
    }
    if cfg.init == InitKind::PooledXy {
        return Err(Error::Config {
            line: 0,
            msg: "pooled_xy initialization is not derivable node-side; use node_xy or random"
                .into(),
        });
    }
    let datasets = load_data(data)?;
    let listener = std::net::TcpListener::bind(bind)?;
    println!("listening on {}", listener.local_addr()?);
    let transport = SocketTransport::accept(&listener, cfg.m, DEFAULT_TIMEOUT)?;
    let initial = initial_betas(&cfg, &datasets);
    let rule = StopRule::from_config(&cfg);
    let engine = DirEngine::new(&cfg, cfg.lambda, &datasets, transport, initial)?;
    let (estimates, trace) = engine.run(&rule)?;
    let mut evals = evaluate_nodes(&estimates, &datasets, MethodId::Dir, cfg.lambda)?;
    let reference = datasets.iter().map(sls).collect::<Result<Vec<_>>>()?;
    let ref_evals = evaluate_nodes(&reference, &datasets, MethodId::Sls, 0.0)?;
    mark_improved(&mut evals, &ref_evals);
    std::fs::create_dir_all(out)?;
    let scenario_id = data
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scenario".into());
    write_eval_csv(&out.join("results.csv"), &scenario_id, 0, &evals)?;
    write_trace_csv(&out.join("trace.csv"), &trace)?;
    println!(
        "dir over sockets: {} rounds, {} scalars ({})",
        trace.rounds_executed,
        comm_cost(&trace),
        trace.stop
    );
    Ok(())
}

/// Socket worker: load this node's data, connect, and serve local
/// updates until the server closes the connection.
pub fn cmd_node(
    config: &Path,
    data: &Path,
    node_id: u32,
    connect: &str,
    seed_override: Option<u64>,
) -> Result<()> {
    let (mut cfg, _) = load_config(config)?;
    if let Some(seed) = seed_override {
        cfg.seed = seed;
    }
    let path = data.join(format!("node_{node_id}.csv"));
    let ds = crate::datagen::read_node_csv(&path)?;
    let initial = match cfg.init {
        InitKind::NodeXy => ds.xy.clone(),
        InitKind::Random => {
            // Same stream the server derives for this node index.
            use rand::Rng;
            use rand_distr::StandardNormal;
            let mut rng = crate::rng::rng_from(cfg.init_seed, &[stream::INIT, node_id as u64]);
            let scale = 1.0 / (cfg.p as f64).sqrt();
            nalgebra::DVector::from_fn(cfg.p, |_, _| {
                let z: f64 = rng.sample(StandardNormal);
                z * scale
            })
        }
        InitKind::PooledXy => {
            return Err(Error::Config {
                line: 0,
                msg: "pooled_xy initialization is not derivable node-side".into(),
            })
        }
    };
    let params = WorkerParams {
        alpha: cfg.alpha,
        epochs: cfg.epochs,
        scale: PenaltyScale::new(cfg.penalty_scale, cfg.lambda, cfg.m),
        variant: cfg.variant,
    };
    let stream = crate::harness::connect_worker(connect)?;
    let final_beta = crate::harness::worker_loop(stream, node_id, &ds, initial, params)?;
    println!(
        "node {node_id} done, final estimate norm {:.6}",
        final_beta.norm()
    );
    Ok(())
}

/// Run the verification suites; non-zero exit when a hard check fails.
pub fn cmd_check(seed: u64, out: Option<&Path>) -> Result<()> {
    let reports = crate::diagnostics::run_all(seed);
    for r in &reports {
        println!("{}", r.summary());
    }
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        crate::diagnostics::write_checks_csv(&dir.join("checks.csv"), &reports)?;
    }
    if !crate::diagnostics::all_passed(&reports) {
        return Err(Error::CheckFailed(
            reports
                .iter()
                .filter(|r| r.status == crate::diagnostics::CheckStatus::Fail)
                .map(|r| r.name.clone())
                .collect::<Vec<_>>()
                .join(", "),
        ));
    }
    Ok(())
}
