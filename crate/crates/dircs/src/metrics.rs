//! Evaluation metrics and diagnostics: direction error, absolute cosine,
//! node-improvement ratio, the corrected-LS residual, and communication
//! cost accounting.

use std::fmt;
use std::path::Path;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::model::{NodeDataset, SignalVector};
use crate::solver::RunTrace;

/// Method identifiers used in result schemas. `Drd` is reserved so result
/// tables keep a stable column set, but no implementation backs it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MethodId {
    Dir,
    Sls,
    Pls,
    Cir,
    Drd,
}

impl fmt::Display for MethodId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            MethodId::Dir => "dir",
            MethodId::Sls => "sls",
            MethodId::Pls => "pls",
            MethodId::Cir => "cir",
            MethodId::Drd => "drd",
        };
        write!(f, "{s}")
    }
}

impl std::str::FromStr for MethodId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dir" => Ok(MethodId::Dir),
            "sls" => Ok(MethodId::Sls),
            "pls" => Ok(MethodId::Pls),
            "cir" => Ok(MethodId::Cir),
            "drd" => Ok(MethodId::Drd),
            other => Err(Error::Config {
                line: 0,
                msg: format!("unknown method {other:?}"),
            }),
        }
    }
}

/// One node's evaluation against ground truth.
#[derive(Clone, Debug)]
pub struct NodeEvaluation {
    pub node: usize,
    pub method: MethodId,
    pub lambda: f64,
    pub l2_error: f64,
    pub abs_cosine: f64,
    pub improved: Option<bool>,
}

fn unit(v: &SignalVector, what: &str) -> Result<SignalVector> {
    let n = v.norm();
    if n == 0.0 {
        return Err(Error::ZeroVector(what.into()));
    }
    Ok(v / n)
}

/// Direction error between unit vectors, signed by the channel: the
/// recoverable direction anti-aligns when the sign-keep probability is
/// below one half.
pub fn l2_error(estimate: &SignalVector, truth: &SignalVector, q: f64) -> Result<f64> {
    let e = unit(estimate, "l2_error estimate")?;
    let t = unit(truth, "l2_error truth")?;
    let s = if q > 0.5 { 1.0 } else { -1.0 };
    Ok((e - t * s).norm())
}

pub fn abs_cosine(estimate: &SignalVector, truth: &SignalVector) -> Result<f64> {
    Ok(crate::objective::cosine(estimate, truth)?.abs())
}

/// Fraction of nodes whose absolute cosine strictly exceeds the per-node
/// reference (separate least squares).
pub fn improved_ratio(evals: &[NodeEvaluation], reference: &[NodeEvaluation]) -> Result<f64> {
    if evals.len() != reference.len() || evals.is_empty() {
        return Err(Error::MismatchedNodes(format!(
            "{} evaluations vs {} references",
            evals.len(),
            reference.len()
        )));
    }
    let mut wins = 0usize;
    for (e, r) in evals.iter().zip(reference) {
        if e.node != r.node {
            return Err(Error::MismatchedNodes(format!(
                "node {} compared against node {}",
                e.node, r.node
            )));
        }
        if e.abs_cosine > r.abs_cosine {
            wins += 1;
        }
    }
    Ok(wins as f64 / evals.len() as f64)
}

/// Residual of the corrected-LS decomposition at node `j`:
/// `| beta_j - (X Xᵀ)^{-1} (X y + delta_j) |` with
/// `delta_j = sum_{k != j} (lambda / m) [I - P(beta_j)] P(beta_k) beta_j / |beta_j|^2`.
/// Report-only: the aggregated fixed point need not satisfy the
/// decomposition exactly.
pub fn corrected_ls_residual(
    j: usize,
    betas: &[SignalVector],
    datasets: &[NodeDataset],
    lambda: f64,
    m: usize,
) -> Result<f64> {
    let delta = correction_delta(j, betas, lambda, m)?;
    let ds = &datasets[j];
    let n = ds.n() as f64;
    // (X Xᵀ)^{-1} (X y + delta) = G^{-1} (c + delta / n).
    let rhs = &ds.xy + &delta / n;
    let eigen = ds.gram.clone().symmetric_eigen();
    let min = eigen.eigenvalues.min();
    let max = eigen.eigenvalues.amax();
    let cond = if min > 0.0 { max / min } else { f64::INFINITY };
    if cond.is_nan() || cond >= 1e12 {
        return Err(Error::SingularGram(cond));
    }
    let corrected = ds
        .gram
        .clone()
        .cholesky()
        .ok_or(Error::SingularGram(cond))?
        .solve(&rhs);
    Ok((&betas[j] - corrected).norm())
}

/// The bias-correction vector itself; always orthogonal to `beta_j`.
pub fn correction_delta(
    j: usize,
    betas: &[SignalVector],
    lambda: f64,
    m: usize,
) -> Result<SignalVector> {
    let p = betas[j].len();
    let bj = &betas[j];
    let nj2 = bj.norm_squared();
    if nj2 == 0.0 {
        return Err(Error::ZeroVector(format!("correction at node {j}")));
    }
    let mut delta = DVector::zeros(p);
    for (k, bk) in betas.iter().enumerate() {
        if k == j {
            continue;
        }
        let nk2 = bk.norm_squared();
        if nk2 == 0.0 {
            return Err(Error::ZeroVector(format!("correction neighbor {k}")));
        }
        // P(beta_k) beta_j, then remove the beta_j component.
        let proj_k = bk * (bk.dot(bj) / nk2);
        let perp = &proj_k - bj * (bj.dot(&proj_k) / nj2);
        delta += perp * (lambda / m as f64 / nj2);
    }
    Ok(delta)
}

/// Total scalars moved by a run: the sum of per-round counts, which is
/// `2 m p` per distributed round and zero for centralized traces.
pub fn comm_cost(trace: &RunTrace) -> u64 {
    trace.records.iter().map(|r| r.comm_scalars).sum()
}

/// Evaluate per-node estimates against the scenario truth.
pub fn evaluate_nodes(
    estimates: &[SignalVector],
    datasets: &[NodeDataset],
    method: MethodId,
    lambda: f64,
) -> Result<Vec<NodeEvaluation>> {
    if estimates.len() != datasets.len() {
        return Err(Error::MismatchedNodes(format!(
            "{} estimates vs {} datasets",
            estimates.len(),
            datasets.len()
        )));
    }
    let mut out = Vec::with_capacity(estimates.len());
    for (node, (est, ds)) in estimates.iter().zip(datasets).enumerate() {
        let truth = ds.truth.as_ref().ok_or_else(|| {
            Error::MismatchedNodes(format!("node {node} carries no ground truth"))
        })?;
        let l2 = l2_error(est, &truth.beta, truth.q)?;
        let cos = abs_cosine(est, &truth.beta)?;
        // Unit-vector identity cross-check: l2^2 = 2 - 2 s cos.
        let s = if truth.q > 0.5 { 1.0 } else { -1.0 };
        let signed_cos = s * crate::objective::cosine(est, &truth.beta)?;
        debug_assert!((l2 * l2 - (2.0 - 2.0 * signed_cos)).abs() < 1e-10);
        out.push(NodeEvaluation {
            node,
            method,
            lambda,
            l2_error: l2,
            abs_cosine: cos,
            improved: None,
        });
    }
    Ok(out)
}

/// Mark the improvement flag of `evals` against the reference evaluations.
pub fn mark_improved(evals: &mut [NodeEvaluation], reference: &[NodeEvaluation]) {
    for (e, r) in evals.iter_mut().zip(reference) {
        e.improved = Some(e.abs_cosine > r.abs_cosine);
    }
}

pub const EVAL_CSV_HEADER: &str =
    "scenario_id,rep,node_id,method,lambda,l2_error,abs_cosine,improved";

pub fn eval_csv_row(scenario_id: &str, rep: usize, e: &NodeEvaluation) -> String {
    let improved = match e.improved {
        Some(true) => "1",
        Some(false) => "0",
        None => "-1",
    };
    format!(
        "{scenario_id},{rep},{},{},{},{},{},{improved}",
        e.node, e.method, e.lambda, e.l2_error, e.abs_cosine
    )
}

pub fn write_eval_csv(
    path: &Path,
    scenario_id: &str,
    rep: usize,
    evals: &[NodeEvaluation],
) -> Result<()> {
    let mut out = String::from(EVAL_CSV_HEADER);
    out.push('\n');
    for e in evals {
        out.push_str(&eval_csv_row(scenario_id, rep, e));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Linear-interpolation quantile on a copy of the data.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if v.is_empty() {
        return f64::NAN;
    }
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        v[lo]
    } else {
        v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
    }
}
