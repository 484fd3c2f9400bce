//! Warm-start selection of the regularization weight: sweep an ascending
//! grid, advancing when the validation accuracy plateaus and carrying the
//! solution forward as the next initialization; keep the best-validation
//! snapshot and retrain from it at the chosen weight.

use std::path::Path;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::harness::InMemoryTransport;
use crate::model::{NodeDataset, ProblemConfig, SignalVector};
use crate::objective::PenaltyScale;
use crate::solver::{initial_betas, DirEngine, StopRule};

/// Accuracy-plateau threshold for advancing to the next grid value.
const ADVANCE_TOL: f64 = 1e-4;
/// Consecutive plateau rounds required before advancing.
const ADVANCE_PATIENCE: usize = 3;

/// One node's train/validation pair.
pub struct NodeSplit {
    pub train: NodeDataset,
    pub val: NodeDataset,
}

/// Orientation-corrected sign-agreement on a validation set: the larger
/// of the agreement fraction and its complement, since channels with
/// `q < 1/2` anti-align the recoverable direction.
pub fn validation_accuracy(beta: &SignalVector, val: &NodeDataset) -> Result<f64> {
    if beta.norm() == 0.0 {
        return Err(Error::ZeroVector("validation of a zero estimate".into()));
    }
    if val.n() == 0 {
        return Err(Error::MismatchedNodes("empty validation set".into()));
    }
    let mut agree = 0usize;
    for i in 0..val.n() {
        let s = if val.x.column(i).dot(beta) >= 0.0 {
            1.0
        } else {
            -1.0
        };
        if s == val.y[i] {
            agree += 1;
        }
    }
    let a = agree as f64 / val.n() as f64;
    Ok(a.max(1.0 - a))
}

fn mean_accuracy(betas: &[SignalVector], splits: &[NodeSplit]) -> Result<f64> {
    let mut total = 0.0;
    for (beta, split) in betas.iter().zip(splits) {
        total += validation_accuracy(beta, &split.val)?;
    }
    Ok(total / splits.len() as f64)
}

/// Per-grid-value outcome on the warm-start path.
#[derive(Clone, Debug)]
pub struct LambdaSegment {
    pub lambda: f64,
    pub rounds: usize,
    pub val_accuracy: f64,
    pub is_chosen: bool,
}

#[derive(Clone, Debug)]
pub struct TuneReport {
    pub segments: Vec<LambdaSegment>,
    pub chosen_lambda: f64,
    /// Best mean validation accuracy over every visited snapshot,
    /// including retraining rounds.
    pub best_accuracy: f64,
    pub retrain_rounds: usize,
    pub total_rounds: usize,
    pub estimates: Vec<SignalVector>,
    pub wall_seconds: f64,
}

pub fn write_tune_csv(path: &Path, report: &TuneReport) -> Result<()> {
    let mut out = String::from("lambda,rounds,val_accuracy,is_chosen\n");
    for seg in &report.segments {
        out.push_str(&format!(
            "{},{},{},{}\n",
            seg.lambda,
            seg.rounds,
            seg.val_accuracy,
            if seg.is_chosen { 1 } else { 0 }
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn train_sets(splits: &[NodeSplit]) -> Vec<NodeDataset> {
    splits.iter().map(|s| s.train.clone()).collect()
}

/// Warm-start path over the ascending grid. The total round budget is
/// capped at `grid length * T`, retraining included.
pub fn warm_start_tune(cfg: &ProblemConfig, splits: &[NodeSplit]) -> Result<TuneReport> {
    let grid = &cfg.lambda_grid;
    if grid.is_empty() {
        return Err(Error::Config {
            line: 0,
            msg: "empty lambda grid".into(),
        });
    }
    if !grid.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::Config {
            line: 0,
            msg: "lambda grid must be strictly ascending".into(),
        });
    }
    let start = Instant::now();
    let datasets = train_sets(splits);
    let m = datasets.len();
    let budget = grid.len() * cfg.rounds;
    let mut betas = initial_betas(cfg, &datasets);
    let mut best_acc = mean_accuracy(&betas, splits)?;
    let mut best_betas = betas.clone();
    let mut best_lambda_idx = 0usize;
    let mut segments = Vec::with_capacity(grid.len());
    let mut total_rounds = 0usize;

    for (s, &lambda) in grid.iter().enumerate() {
        let scale = PenaltyScale::new(cfg.penalty_scale, lambda, m);
        let transport =
            InMemoryTransport::new(&datasets, betas.clone(), scale, cfg.epochs, cfg.variant);
        let mut engine = DirEngine::new(cfg, lambda, &datasets, transport, betas)?;
        let rule = StopRule::from_config(cfg);
        let mut plateau = 0usize;
        let mut prev_acc: Option<f64> = None;
        let mut rounds = 0usize;
        let mut acc = mean_accuracy(engine.betas(), splits)?;
        loop {
            if rounds >= cfg.rounds || total_rounds >= budget {
                break;
            }
            let more = engine.step(&rule)?;
            if engine.rounds_executed() > rounds {
                rounds = engine.rounds_executed();
                total_rounds += 1;
                acc = mean_accuracy(engine.betas(), splits)?;
                if acc > best_acc {
                    best_acc = acc;
                    best_betas = engine.betas().to_vec();
                    best_lambda_idx = s;
                }
                if let Some(prev) = prev_acc {
                    if (acc - prev).abs() < ADVANCE_TOL {
                        plateau += 1;
                    } else {
                        plateau = 0;
                    }
                }
                prev_acc = Some(acc);
            }
            if !more || plateau >= ADVANCE_PATIENCE {
                break;
            }
        }
        segments.push(LambdaSegment {
            lambda,
            rounds,
            val_accuracy: acc,
            is_chosen: false,
        });
        let (carried, _) = engine.into_parts();
        betas = carried;
    }

    // Retrain at the chosen weight from the best snapshot until the stop
    // rule fires, within the remaining budget.
    let chosen_lambda = grid[best_lambda_idx];
    segments[best_lambda_idx].is_chosen = true;
    let mut estimates = best_betas.clone();
    let mut retrain_rounds = 0usize;
    let remaining = budget.saturating_sub(total_rounds);
    if remaining > 0 {
        let scale = PenaltyScale::new(cfg.penalty_scale, chosen_lambda, m);
        let transport = InMemoryTransport::new(
            &datasets,
            best_betas.clone(),
            scale,
            cfg.epochs,
            cfg.variant,
        );
        let mut engine = DirEngine::new(cfg, chosen_lambda, &datasets, transport, best_betas)?;
        let rule = StopRule {
            max_rounds: remaining.min(cfg.rounds),
            rel_tol: cfg.tol,
            patience: cfg.patience,
        };
        loop {
            let more = engine.step(&rule)?;
            if engine.rounds_executed() > retrain_rounds {
                retrain_rounds = engine.rounds_executed();
                total_rounds += 1;
                let acc = mean_accuracy(engine.betas(), splits)?;
                if acc > best_acc {
                    best_acc = acc;
                }
            }
            if !more {
                break;
            }
        }
        let (final_betas, _) = engine.into_parts();
        estimates = final_betas;
    }

    Ok(TuneReport {
        segments,
        chosen_lambda,
        best_accuracy: best_acc,
        retrain_rounds,
        total_rounds,
        estimates,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Reference strategy for the timing comparison: every grid value is run
/// to full convergence from the default initialization, separately.
pub fn separate_tune(cfg: &ProblemConfig, splits: &[NodeSplit]) -> Result<TuneReport> {
    let grid = &cfg.lambda_grid;
    if grid.is_empty() {
        return Err(Error::Config {
            line: 0,
            msg: "empty lambda grid".into(),
        });
    }
    let start = Instant::now();
    let datasets = train_sets(splits);
    let mut segments = Vec::with_capacity(grid.len());
    let mut best: Option<(f64, usize, Vec<SignalVector>)> = None;
    let mut total_rounds = 0usize;
    for (s, &lambda) in grid.iter().enumerate() {
        let (estimates, trace) = crate::solver::run_dir(cfg, lambda, &datasets)?;
        let acc = mean_accuracy(&estimates, splits)?;
        total_rounds += trace.rounds_executed;
        segments.push(LambdaSegment {
            lambda,
            rounds: trace.rounds_executed,
            val_accuracy: acc,
            is_chosen: false,
        });
        if best.as_ref().map(|(a, _, _)| acc > *a).unwrap_or(true) {
            best = Some((acc, s, estimates));
        }
    }
    let (best_acc, idx, estimates) = best.expect("non-empty grid");
    segments[idx].is_chosen = true;
    Ok(TuneReport {
        chosen_lambda: grid[idx],
        segments,
        best_accuracy: best_acc,
        retrain_rounds: 0,
        total_rounds,
        estimates,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Split every node of a scenario with a seeded deterministic shuffle.
pub fn split_all(datasets: &[NodeDataset], fraction: f64, seed: u64) -> Result<Vec<NodeSplit>> {
    datasets
        .iter()
        .enumerate()
        .map(|(j, ds)| {
            let mut rng = crate::rng::rng_from(seed, &[crate::rng::stream::SPLIT, j as u64]);
            let (train, val) = crate::datagen::split_validation(ds, fraction, &mut rng)?;
            Ok(NodeSplit { train, val })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{gen_covariance, gen_measurements};
    use crate::model::{AllocationSpec, ProblemConfig, SizeSpec};
    use crate::rng::rng_from;
    use nalgebra::dvector;

    #[test]
    fn accuracy_perfect_and_sign_symmetric() {
        let (_, lf) = gen_covariance(3, 0.3);
        let truth = dvector![1.0, -0.5, 0.25];
        let mut rng = rng_from(71, &[1]);
        let ds = gen_measurements(&truth, 200, &lf, 0.0, 1.0, &mut rng).unwrap();
        assert_eq!(validation_accuracy(&truth, &ds).unwrap(), 1.0);
        let flipped = -&truth;
        assert_eq!(validation_accuracy(&flipped, &ds).unwrap(), 1.0);
    }

    #[test]
    fn accuracy_orthogonal_is_chance_level() {
        let (_, lf) = gen_covariance(2, 0.0);
        let truth = dvector![1.0, 0.0];
        let mut rng = rng_from(72, &[1]);
        let ds = gen_measurements(&truth, 10_000, &lf, 0.0, 1.0, &mut rng).unwrap();
        let perp = dvector![0.0, 1.0];
        let a = validation_accuracy(&perp, &ds).unwrap();
        assert!((a - 0.5).abs() < 0.05, "accuracy {a}");
    }

    fn tiny_config() -> ProblemConfig {
        ProblemConfig {
            p: 4,
            m: 3,
            sizes: SizeSpec::PerNode(50),
            alloc: AllocationSpec::Equal,
            rounds: 60,
            epochs: 3,
            lambda_grid: vec![0.4, 0.8],
            ..ProblemConfig::default()
        }
    }

    fn tiny_splits(cfg: &ProblemConfig, seed: u64) -> Vec<NodeSplit> {
        let spec = crate::datagen::ScenarioSpec {
            p: cfg.p,
            m: cfg.m,
            sizes: cfg.sizes,
            alloc: cfg.alloc.clone(),
            theta_max: cfg.theta_max,
            rho: cfg.rho,
            channels: cfg.channels.clone(),
            seed,
        };
        let scenario = crate::datagen::Scenario::generate(&spec).unwrap();
        split_all(&scenario.nodes, cfg.validation_fraction, seed).unwrap()
    }

    #[test]
    fn warm_start_reports_chosen_lambda_from_grid() {
        let cfg = tiny_config();
        let splits = tiny_splits(&cfg, 101);
        let report = warm_start_tune(&cfg, &splits).unwrap();
        assert!(cfg.lambda_grid.contains(&report.chosen_lambda));
        assert_eq!(report.segments.len(), 2);
        assert_eq!(report.segments.iter().filter(|s| s.is_chosen).count(), 1);
        assert!(report.total_rounds <= cfg.lambda_grid.len() * cfg.rounds);
        for seg in &report.segments {
            assert!((0.5..=1.0).contains(&seg.val_accuracy), "{seg:?}");
        }
        assert!(report.best_accuracy >= report.segments[0].val_accuracy - 1e-12);
    }

    #[test]
    fn single_element_grid_matches_plain_run_plus_retrain() {
        let mut cfg = tiny_config();
        cfg.lambda_grid = vec![0.6];
        let splits = tiny_splits(&cfg, 102);
        let report = warm_start_tune(&cfg, &splits).unwrap();
        assert_eq!(report.chosen_lambda, 0.6);
        assert_eq!(report.segments.len(), 1);
        assert!(report.segments[0].is_chosen);
    }

    #[test]
    fn warm_start_not_worse_than_first_grid_value() {
        for seed in 0..10u64 {
            let cfg = tiny_config();
            let splits = tiny_splits(&cfg, 200 + seed);
            let report = warm_start_tune(&cfg, &splits).unwrap();
            let datasets = train_sets(&splits);
            let (fixed, _) = crate::solver::run_dir(&cfg, cfg.lambda_grid[0], &datasets).unwrap();
            let fixed_acc = mean_accuracy(&fixed, &splits).unwrap();
            assert!(
                report.best_accuracy >= fixed_acc - 1e-9,
                "seed {seed}: warm {} vs fixed {fixed_acc}",
                report.best_accuracy
            );
        }
    }
}
