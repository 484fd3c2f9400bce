//! Flat `key = value` configuration files. Keys mirror the run
//! configuration and experiment plan field names; unknown keys are
//! errors, reported with their line number. Angles accept `pi/N` tokens
//! alongside plain floats.

use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::MethodId;
use crate::model::{AllocationSpec, Channel, InitKind, ProblemConfig, SizeSpec};
use crate::objective::{GradientVariant, PenaltyScaleKind};

/// Which scenario parameter a sweep varies.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SweepKind {
    PerNodeN,
    NodeCount,
    DirichletAlpha,
    NoiseLevel,
    FlipLevel,
    ThetaMax,
}

/// A sweep plan: the base configuration plus one varying axis, a
/// replication count, and the methods to run.
#[derive(Clone, Debug)]
pub struct ExperimentPlan {
    pub base: ProblemConfig,
    pub sweep: SweepKind,
    pub values: Vec<f64>,
    pub replications: usize,
    pub methods: Vec<MethodId>,
}

pub fn parse_angle(raw: &str, line: usize) -> Result<f64> {
    let s = raw.trim();
    if let Some(den) = s.strip_prefix("pi/") {
        let d: f64 = den.trim().parse().map_err(|_| Error::Config {
            line,
            msg: format!("bad angle {raw:?}"),
        })?;
        return Ok(std::f64::consts::PI / d);
    }
    if s == "pi" {
        return Ok(std::f64::consts::PI);
    }
    s.parse().map_err(|_| Error::Config {
        line,
        msg: format!("bad angle {raw:?}"),
    })
}

fn parse_f64(raw: &str, line: usize) -> Result<f64> {
    raw.trim().parse().map_err(|_| Error::Config {
        line,
        msg: format!("bad number {raw:?}"),
    })
}

fn parse_usize(raw: &str, line: usize) -> Result<usize> {
    raw.trim().parse().map_err(|_| Error::Config {
        line,
        msg: format!("bad count {raw:?}"),
    })
}

fn parse_u64(raw: &str, line: usize) -> Result<u64> {
    raw.trim().parse().map_err(|_| Error::Config {
        line,
        msg: format!("bad seed {raw:?}"),
    })
}

fn parse_bool(raw: &str, line: usize) -> Result<bool> {
    match raw.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(Error::Config {
            line,
            msg: format!("bad flag {other:?}"),
        }),
    }
}

/// `sigma:q` pairs with an optional `:weight`, comma separated.
fn parse_channels(raw: &str, line: usize) -> Result<Vec<Channel>> {
    let mut out = Vec::new();
    for part in raw.split(',') {
        let fields: Vec<&str> = part.trim().split(':').collect();
        if fields.len() != 2 && fields.len() != 3 {
            return Err(Error::Config {
                line,
                msg: format!("channel {part:?} is not sigma:q or sigma:q:weight"),
            });
        }
        let sigma = parse_f64(fields[0], line)?;
        let q = parse_f64(fields[1], line)?;
        let weight = if fields.len() == 3 {
            parse_f64(fields[2], line)?
        } else {
            1.0
        };
        out.push(Channel { sigma, q, weight });
    }
    if out.is_empty() {
        return Err(Error::Config {
            line,
            msg: "no channels given".into(),
        });
    }
    Ok(out)
}

fn parse_allocation(raw: &str, line: usize) -> Result<AllocationSpec> {
    let s = raw.trim();
    if s == "equal" {
        return Ok(AllocationSpec::Equal);
    }
    if let Some(rest) = s.strip_prefix("power:") {
        return Ok(AllocationSpec::PowerLaw {
            exponent: parse_f64(rest, line)?,
        });
    }
    if let Some(rest) = s.strip_prefix("dirichlet:") {
        return Ok(AllocationSpec::Dirichlet {
            alpha: parse_f64(rest, line)?,
        });
    }
    Err(Error::Config {
        line,
        msg: format!("allocation {s:?} is not equal | power:<a> | dirichlet:<alpha>"),
    })
}

fn parse_grid(raw: &str, line: usize) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for part in raw.split(',') {
        out.push(parse_f64(part, line)?);
    }
    Ok(out)
}

/// Raw key/value lines of a config file, with 1-based line numbers.
pub fn read_kv_file(path: &Path) -> Result<Vec<(usize, String, String)>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let (key, value) = trimmed.split_once('=').ok_or_else(|| Error::Config {
            line,
            msg: format!("expected key = value, got {trimmed:?}"),
        })?;
        out.push((line, key.trim().to_string(), value.trim().to_string()));
    }
    Ok(out)
}

/// Apply one key to a config under construction. Returns false when the
/// key is not a scenario/solver key (callers with extra keys, like the
/// sweep plan, try their own set next).
fn apply_config_key(
    cfg: &mut ProblemConfig,
    signals_csv: &mut Option<String>,
    line: usize,
    key: &str,
    value: &str,
) -> Result<bool> {
    match key {
        "p" => cfg.p = parse_usize(value, line)?,
        "m" => cfg.m = parse_usize(value, line)?,
        "n" => cfg.sizes = SizeSpec::PerNode(parse_usize(value, line)?),
        "total_n" => cfg.sizes = SizeSpec::TotalN(parse_usize(value, line)?),
        "allocation" => cfg.alloc = parse_allocation(value, line)?,
        "theta_max" => cfg.theta_max = parse_angle(value, line)?,
        "rho" => cfg.rho = parse_f64(value, line)?,
        "channels" => cfg.channels = parse_channels(value, line)?,
        "lambda" => cfg.lambda = parse_f64(value, line)?,
        "lambda_grid" => cfg.lambda_grid = parse_grid(value, line)?,
        "alpha" => cfg.alpha = parse_f64(value, line)?,
        "rounds" => cfg.rounds = parse_usize(value, line)?,
        "epochs" => cfg.epochs = parse_usize(value, line)?,
        "variant" => {
            cfg.variant = match value {
                "analytic" => GradientVariant::Analytic,
                "paper_literal" => GradientVariant::PaperLiteral,
                other => {
                    return Err(Error::Config {
                        line,
                        msg: format!("variant {other:?} is not analytic | paper_literal"),
                    })
                }
            }
        }
        "penalty_scale" => {
            cfg.penalty_scale = match value {
                "lambda_over_m" => PenaltyScaleKind::LambdaOverM,
                "lambda_over_2m" => PenaltyScaleKind::LambdaOver2M,
                other => {
                    return Err(Error::Config {
                        line,
                        msg: format!(
                            "penalty_scale {other:?} is not lambda_over_m | lambda_over_2m"
                        ),
                    })
                }
            }
        }
        "tol" => cfg.tol = parse_f64(value, line)?,
        "patience" => cfg.patience = parse_usize(value, line)?,
        "validation_fraction" => cfg.validation_fraction = parse_f64(value, line)?,
        "init" => {
            cfg.init = match value {
                "node_xy" => InitKind::NodeXy,
                "pooled_xy" => InitKind::PooledXy,
                "random" => InitKind::Random,
                other => {
                    return Err(Error::Config {
                        line,
                        msg: format!("init {other:?} is not node_xy | pooled_xy | random"),
                    })
                }
            }
        }
        "init_seed" => cfg.init_seed = parse_u64(value, line)?,
        "seed" => cfg.seed = parse_u64(value, line)?,
        "snapshot_betas" => cfg.snapshot_betas = parse_bool(value, line)?,
        "signals_csv" => *signals_csv = Some(value.to_string()),
        _ => return Ok(false),
    }
    Ok(true)
}

/// Parse a scenario/solver config file.
pub fn load_config(path: &Path) -> Result<(ProblemConfig, Option<String>)> {
    let mut cfg = ProblemConfig::default();
    let mut signals_csv = None;
    for (line, key, value) in read_kv_file(path)? {
        if !apply_config_key(&mut cfg, &mut signals_csv, line, &key, &value)? {
            return Err(Error::Config {
                line,
                msg: format!("unknown key {key:?}"),
            });
        }
    }
    cfg.validate()?;
    Ok((cfg, signals_csv))
}

/// Parse a sweep plan: config keys plus `sweep`, `sweep_values`,
/// `replications`, `methods`.
pub fn load_plan(path: &Path) -> Result<ExperimentPlan> {
    let mut cfg = ProblemConfig::default();
    let mut signals_csv = None;
    let mut sweep: Option<SweepKind> = None;
    let mut values: Vec<f64> = Vec::new();
    let mut replications = 20usize;
    let mut methods = vec![MethodId::Dir, MethodId::Sls, MethodId::Pls, MethodId::Cir];
    for (line, key, value) in read_kv_file(path)? {
        if apply_config_key(&mut cfg, &mut signals_csv, line, &key, &value)? {
            continue;
        }
        match key.as_str() {
            "sweep" => {
                sweep = Some(match value.as_str() {
                    "n" => SweepKind::PerNodeN,
                    "m" => SweepKind::NodeCount,
                    "dirichlet_alpha" => SweepKind::DirichletAlpha,
                    "noise_k" => SweepKind::NoiseLevel,
                    "flip_k" => SweepKind::FlipLevel,
                    "theta_max" => SweepKind::ThetaMax,
                    other => {
                        return Err(Error::Config {
                            line,
                            msg: format!(
                                "sweep {other:?} is not n | m | dirichlet_alpha | noise_k | flip_k | theta_max"
                            ),
                        })
                    }
                })
            }
            "sweep_values" => {
                values = value
                    .split(',')
                    .map(|v| parse_angle(v, line))
                    .collect::<Result<_>>()?
            }
            "replications" => replications = parse_usize(&value, line)?,
            "methods" => {
                methods = value
                    .split(',')
                    .map(|v| v.trim().parse())
                    .collect::<Result<_>>()?
            }
            other => {
                return Err(Error::Config {
                    line,
                    msg: format!("unknown key {other:?}"),
                })
            }
        }
    }
    let sweep = sweep.ok_or(Error::Config {
        line: 0,
        msg: "plan needs a sweep key".into(),
    })?;
    if values.is_empty() {
        return Err(Error::Config {
            line: 0,
            msg: "plan needs sweep_values".into(),
        });
    }
    if replications == 0 {
        return Err(Error::Config {
            line: 0,
            msg: "replications must be at least 1".into(),
        });
    }
    cfg.validate()?;
    Ok(ExperimentPlan {
        base: cfg,
        sweep,
        values,
        replications,
        methods,
    })
}

/// Materialize one sweep point as a concrete scenario configuration and
/// a stable scenario id.
pub fn apply_sweep_value(
    base: &ProblemConfig,
    sweep: &SweepKind,
    value: f64,
) -> (ProblemConfig, String) {
    let mut cfg = base.clone();
    let id = match sweep {
        SweepKind::PerNodeN => {
            cfg.sizes = SizeSpec::PerNode(value as usize);
            cfg.alloc = AllocationSpec::Equal;
            format!("n={}", value as usize)
        }
        SweepKind::NodeCount => {
            cfg.m = value as usize;
            format!("m={}", value as usize)
        }
        SweepKind::DirichletAlpha => {
            cfg.alloc = AllocationSpec::Dirichlet { alpha: value };
            format!("dirichlet_alpha={value}")
        }
        SweepKind::NoiseLevel => {
            let k = value;
            cfg.channels = vec![
                Channel {
                    sigma: 0.1,
                    q: 0.75,
                    weight: 0.5,
                },
                Channel {
                    sigma: 0.2 + 0.4 * (k - 1.0),
                    q: 0.125,
                    weight: 0.5,
                },
            ];
            format!("noise_k={k}")
        }
        SweepKind::FlipLevel => {
            let k = value;
            cfg.channels = vec![
                Channel {
                    sigma: 0.1,
                    q: 0.75,
                    weight: 0.5,
                },
                Channel {
                    sigma: 0.2,
                    q: 0.075 + 0.025 * (k - 1.0),
                    weight: 0.5,
                },
            ];
            format!("flip_k={k}")
        }
        SweepKind::ThetaMax => {
            cfg.theta_max = value;
            format!("theta_max={value:.4}")
        }
    };
    (cfg, id)
}
