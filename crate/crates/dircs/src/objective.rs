//! Both objective forms and every gradient used by the solvers.
//!
//! The original objective couples per-node quadratic losses through a
//! squared-cosine similarity penalty. The lifted form evaluates the same
//! quantity through the rank-1 representation and its trace identities,
//! which is what the distributed updates descend. Two local-gradient
//! variants ship: `Analytic` is the gradient of an explicitly stated
//! scalar surrogate (so it is finite-difference checkable), and
//! `PaperLiteral` reproduces the trace-based update formulas verbatim.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::model::{LiftedState, NodeDataset, SignalVector};

/// Which local penalty gradient the distributed update applies.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradientVariant {
    /// Trace-formula update taken verbatim from the lifted formulation.
    PaperLiteral,
    /// Gradient of the surrogate
    /// `P(beta) = (m - 1) (betaᵀ psi)^2 / (2 |beta|^2 |psi|^2)`, the
    /// neighbor-count-weighted squared cosine to the aggregate line.
    Analytic,
}

/// How the penalty weight enters the local update.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PenaltyScaleKind {
    /// `lambda / m`: each unordered pair appears twice in the double sum.
    LambdaOverM,
    /// `lambda / (2m)`: the raw double-sum coefficient.
    LambdaOver2M,
}

/// Resolved penalty weight for the local update: the pair coefficient
/// `value` plus the neighbor count the analytic surrogate stands in for.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PenaltyScale {
    pub value: f64,
    /// `m - 1`: the aggregate direction summarizes this many neighbors.
    pub neighbor_weight: f64,
}

impl PenaltyScale {
    pub fn new(kind: PenaltyScaleKind, lambda: f64, m: usize) -> Self {
        let value = match kind {
            PenaltyScaleKind::LambdaOverM => lambda / m as f64,
            PenaltyScaleKind::LambdaOver2M => lambda / (2.0 * m as f64),
        };
        PenaltyScale {
            value,
            neighbor_weight: (m as f64 - 1.0).max(0.0),
        }
    }
}

/// Per-node quadratic loss `|y - Xᵀ beta|^2 / n`, evaluated through the
/// sufficient statistics as `betaᵀ G beta - 2 cᵀ beta + 1`.
pub fn local_loss(beta: &SignalVector, ds: &NodeDataset) -> f64 {
    let gb = &ds.gram * beta;
    beta.dot(&gb) - 2.0 * ds.xy.dot(beta) + 1.0
}

fn nonzero(v: &SignalVector, what: &str) -> Result<f64> {
    let n = v.norm();
    if n == 0.0 {
        return Err(Error::ZeroVector(what.into()));
    }
    Ok(n)
}

/// Cosine of the angle between two nonzero vectors.
pub fn cosine(a: &SignalVector, b: &SignalVector) -> Result<f64> {
    let na = nonzero(a, "cosine: first argument")?;
    let nb = nonzero(b, "cosine: second argument")?;
    Ok(a.dot(b) / (na * nb))
}

/// Squared cosine similarity, in [0, 1].
pub fn cos2(a: &SignalVector, b: &SignalVector) -> Result<f64> {
    let c = cosine(a, b)?;
    Ok(c * c)
}

/// The raw similarity double sum `sum_j sum_k cos^2<beta_j, beta_k>`,
/// self-pairs included. Scale-invariant in every argument.
pub fn penalty_sum(betas: &[SignalVector]) -> Result<f64> {
    let m = betas.len();
    let mut total = 0.0;
    for j in 0..m {
        for k in 0..m {
            total += cos2(&betas[j], &betas[k])?;
        }
    }
    Ok(total)
}

/// Original objective: `sum_j [ L_j(beta_j) - (lambda / 2m) sum_k cos^2 ]`.
pub fn objective_g(betas: &[SignalVector], datasets: &[NodeDataset], lambda: f64) -> Result<f64> {
    let m = betas.len();
    if m != datasets.len() {
        return Err(Error::MismatchedNodes(format!(
            "{} estimates vs {} datasets",
            m,
            datasets.len()
        )));
    }
    let mut loss = 0.0;
    for (beta, ds) in betas.iter().zip(datasets) {
        loss += local_loss(beta, ds);
    }
    Ok(loss - lambda / (2.0 * m as f64) * penalty_sum(betas)?)
}

fn beta_norm2(v: &LiftedState) -> f64 {
    let p = v.len() - 1;
    v.rows(0, p).norm_squared()
}

/// Pairwise penalty of the lifted form, via the trace identities of the
/// rank-1 representation: numerator `(beta_jᵀ beta_k)^2`, denominators
/// `tr(A Aᵀ) - 1` evaluated as the beta-part norms. Always `<= 0`.
pub fn lifted_pair_penalty_g(vj: &LiftedState, vk: &LiftedState) -> Result<f64> {
    let dj = beta_norm2(vj);
    let dk = beta_norm2(vk);
    if dj <= 1e-12 || dk <= 1e-12 {
        return Err(Error::DegenerateLift(format!(
            "pair penalty with beta-part norms {dj:e}, {dk:e}"
        )));
    }
    let p = vj.len() - 1;
    let ip = vj.rows(0, p).dot(&vk.rows(0, p));
    Ok(-(ip * ip) / (dj * dk))
}

fn require_feasible(v: &LiftedState) -> Result<()> {
    let p = v.len() - 1;
    if (v[p] - 1.0).abs() > 1e-9 {
        return Err(Error::DegenerateLift(format!(
            "lifted state with last coordinate {} is not feasible",
            v[p]
        )));
    }
    Ok(())
}

/// Lifted objective on feasible states:
/// `sum_j f_j(v_j) + (lambda / 2m) sum_{j,k} g(v_j, v_k)` with
/// `f_j(v) = vᵀ M_j v` evaluated through the sufficient statistics.
pub fn objective_h(vs: &[LiftedState], datasets: &[NodeDataset], lambda: f64) -> Result<f64> {
    let m = vs.len();
    if m != datasets.len() {
        return Err(Error::MismatchedNodes(format!(
            "{} lifted states vs {} datasets",
            m,
            datasets.len()
        )));
    }
    let mut total = 0.0;
    for (v, ds) in vs.iter().zip(datasets) {
        require_feasible(v)?;
        total += v.dot(&ds.stat_apply(v));
    }
    let mut pen = 0.0;
    for j in 0..m {
        for k in 0..m {
            pen += lifted_pair_penalty_g(&vs[j], &vs[k])?;
        }
    }
    Ok(total + lambda / (2.0 * m as f64) * pen)
}

/// Gradient of the penalty part of the full original objective with
/// respect to `beta_j`. Each unordered pair appears in both the j-sum and
/// the k-sum, and differentiating the squared cosine contributes another
/// factor 2:
/// `-(2 lambda / m) sum_{k != j} [ (beta_jᵀ u_k) u_k / |beta_j|^2
///                                - (beta_jᵀ u_k)^2 beta_j / |beta_j|^4 ]`
/// with `u_k = beta_k / |beta_k|`.
pub fn exact_penalty_grad(
    j: usize,
    betas: &[SignalVector],
    lambda: f64,
    m: usize,
) -> Result<SignalVector> {
    let p = betas[j].len();
    let nj = nonzero(&betas[j], &format!("penalty gradient at node {j}"))?;
    let nj2 = nj * nj;
    let mut acc = DVector::zeros(p);
    for (k, bk) in betas.iter().enumerate() {
        if k == j {
            continue;
        }
        let nk = nonzero(bk, &format!("penalty gradient neighbor {k}"))?;
        let uk = bk / nk;
        let t = betas[j].dot(&uk);
        acc += &uk * (t / nj2) - &betas[j] * (t * t / (nj2 * nj2));
    }
    Ok(acc * (-2.0 * lambda / m as f64))
}

/// Local gradient of the distributed update. The data term is the exact
/// statistic reduction `sum_i S_i v / n`; the penalty term depends on the
/// aggregate direction `psi_j` received from the server.
pub fn psi_local_gradient(
    v: &LiftedState,
    psi_j: &DVector<f64>,
    ds: &NodeDataset,
    scale: PenaltyScale,
    variant: GradientVariant,
) -> Result<DVector<f64>> {
    let p = ds.p();
    if v.len() != p + 1 || psi_j.len() != p {
        return Err(Error::DimensionMismatch(format!(
            "lifted state {} / psi {} for dimension {}",
            v.len(),
            psi_j.len(),
            p
        )));
    }
    let mut out = ds.stat_apply(v);
    let s = scale.value;
    if s == 0.0 {
        return Ok(out);
    }
    match variant {
        GradientVariant::Analytic => {
            let beta = v.rows(0, p);
            let nb2 = beta.norm_squared();
            if nb2 < 1e-12 {
                return Err(Error::DegenerateLift(format!(
                    "analytic penalty with beta norm^2 {nb2:e}"
                )));
            }
            let npsi2 = psi_j.norm_squared();
            // A zero aggregate carries no neighbor information.
            if npsi2 >= 1e-12 {
                let ip = psi_j.dot(&beta);
                // Gradient of the surrogate
                //   P(beta) = (m - 1) (betaᵀ psi)^2 / (2 |beta|^2 |psi|^2),
                // i.e. (m - 1)/2 times the squared cosine to the aggregate
                // line, embedded with last coordinate 0. Matching the
                // squared-cosine normalization keeps the distributed fixed
                // point at the same penalty weight as the full objective.
                let w = s * scale.neighbor_weight / npsi2;
                let pen = psi_j * (ip / nb2) - beta * (ip * ip / (nb2 * nb2));
                let mut rows = out.rows_mut(0, p);
                rows -= pen * w;
            }
        }
        GradientVariant::PaperLiteral => {
            let tau = v[p] * v[p];
            if tau < 1e-12 {
                return Err(Error::DegenerateLift(format!(
                    "literal penalty with tau {tau:e}"
                )));
            }
            let mut w = DVector::zeros(p + 1);
            w.rows_mut(0, p).copy_from(psi_j);
            w[p] = 1.0;
            // Psi v = w (wᵀ v); zeta = tau * (Psi)_{p+1,p+1}.
            let wv = w.dot(v);
            let zeta = tau * (w[p] * w[p]);
            let pen = &w * (wv / tau) - v * (zeta / (tau * tau));
            out -= pen * s;
        }
    }
    Ok(out)
}

/// Which displacement kernel the invexity probe contracts the gradient
/// against.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EtaKernel {
    /// Pair-penalty-ratio kernel `-tau_j A~_j - A~_j / 2`, where `tau_j`
    /// rescales the reference state by the ratio of pair-penalty sums.
    ScaledReference,
    /// Plain displacement `A_j - A~_j`; turns the probe into a convexity
    /// check, used as a sanity oracle at `lambda = 0`.
    Displacement,
}

/// Full gradient of the lifted objective with respect to node `j`, in the
/// rank-1 column representation; self-pairs contribute constants on the
/// feasible set and are excluded.
fn lifted_full_gradient(
    j: usize,
    vs: &[LiftedState],
    datasets: &[NodeDataset],
    lambda: f64,
) -> Result<DVector<f64>> {
    let m = vs.len();
    let p = vs[j].len() - 1;
    let mut grad = datasets[j].stat_apply(&vs[j]) * 2.0;
    if lambda != 0.0 {
        let dj = vs[j].norm_squared() - 1.0;
        if dj.abs() < 1e-12 {
            return Err(Error::DegenerateLift(format!(
                "full gradient with tr(A Aᵀ) - 1 = {dj:e} at node {j}"
            )));
        }
        let w = lambda / m as f64;
        let beta_j = vs[j].rows(0, p).clone_owned();
        for (k, vk) in vs.iter().enumerate() {
            if k == j {
                continue;
            }
            let dk = vk.norm_squared() - 1.0;
            if dk.abs() < 1e-12 {
                return Err(Error::DegenerateLift(format!(
                    "full gradient with tr(A Aᵀ) - 1 = {dk:e} at node {k}"
                )));
            }
            let ip = beta_j.dot(&vk.rows(0, p));
            let mut bk = DVector::zeros(p + 1);
            bk.rows_mut(0, p).copy_from(&vk.rows(0, p));
            grad += (&vs[j] * (2.0 * ip * ip / (dj * dj * dk)) - bk * (2.0 * ip / (dj * dk))) * w;
        }
    }
    Ok(grad)
}

/// Invexity probe: `H(A) - H(A~) - sum_j <eta_j(A, A~), grad_j H(A~)>`
/// in the rank-1 representation. Nonnegative values are consistent with
/// invexity. Diagnostic only; reported, never asserted.
pub fn invexity_probe(
    vs_a: &[LiftedState],
    vs_b: &[LiftedState],
    datasets: &[NodeDataset],
    lambda: f64,
) -> Result<f64> {
    invexity_probe_with_kernel(vs_a, vs_b, datasets, lambda, EtaKernel::ScaledReference)
}

pub fn invexity_probe_with_kernel(
    vs_a: &[LiftedState],
    vs_b: &[LiftedState],
    datasets: &[NodeDataset],
    lambda: f64,
    kernel: EtaKernel,
) -> Result<f64> {
    let m = vs_a.len();
    if m != vs_b.len() || m != datasets.len() {
        return Err(Error::MismatchedNodes(
            "probe families and datasets must have equal length".into(),
        ));
    }
    let ha = objective_h(vs_a, datasets, lambda)?;
    let hb = objective_h(vs_b, datasets, lambda)?;
    let mut inner = 0.0;
    for j in 0..m {
        let grad_b = lifted_full_gradient(j, vs_b, datasets, lambda)?;
        match kernel {
            EtaKernel::Displacement => {
                inner += (&vs_a[j] - &vs_b[j]).dot(&grad_b);
            }
            EtaKernel::ScaledReference => {
                let mut g_a = 0.0;
                let mut g_b = 0.0;
                for k in 0..m {
                    if k == j {
                        continue;
                    }
                    g_a += lifted_pair_penalty_g(&vs_a[j], &vs_a[k])?;
                    g_b += lifted_pair_penalty_g(&vs_b[j], &vs_b[k])?;
                }
                if g_b.abs() < 1e-12 {
                    return Err(Error::DegenerateDenominator(format!(
                        "sum of pair penalties at reference node {j} is {g_b:e}"
                    )));
                }
                let da = vs_a[j].norm_squared() - 1.0;
                let tau = -0.5 * da * g_a / g_b;
                // eta_j = -tau A~_j - A~_j / 2.
                inner += (-tau - 0.5) * vs_b[j].dot(&grad_b);
            }
        }
    }
    Ok(ha - hb - inner)
}
