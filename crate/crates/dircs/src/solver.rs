//! Round orchestration for the distributed solver and its centralized
//! counterpart. One round is: broadcast the aggregate direction, run
//! local projected-gradient epochs on every node, collect estimates,
//! re-aggregate. The engine owns the stop rule, the step-size halving
//! schedule, and the trace.

use std::fmt;
use std::path::Path;
use std::time::Instant;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::harness::transport::{InMemoryTransport, RoundTransport};
use crate::model::{extract, lift, InitKind, NodeDataset, ProblemConfig, SignalVector};
use crate::objective::{
    exact_penalty_grad, objective_g, psi_local_gradient, GradientVariant, PenaltyScale,
};
use crate::rng::{rng_from, stream};

/// Divergence guard on the lifted state norm.
const DIVERGENCE_NORM: f64 = 1e12;
/// Objective increase that triggers a step-size halving.
const INCREASE_TOLERANCE: f64 = 1e-8;
/// Maximum number of halvings; encoded in the round tag low bits.
pub const MAX_HALVINGS: u32 = 10;

/// Round tags carry the round index in the high bits and the halving
/// count in the low four bits, so remote nodes can mirror the server's
/// step-size schedule without extra payload.
pub fn compose_round_tag(round: u64, halvings: u32) -> u64 {
    debug_assert!(halvings < 16);
    round * 16 + halvings as u64
}

pub fn decompose_round_tag(tag: u64) -> (u64, u32) {
    (tag / 16, (tag % 16) as u32)
}

/// Early-exit rule: stop after `patience` consecutive rounds whose
/// relative objective change stays below `rel_tol`; never before round 2.
#[derive(Clone, Copy, Debug)]
pub struct StopRule {
    pub max_rounds: usize,
    pub rel_tol: f64,
    pub patience: usize,
}

impl StopRule {
    pub fn from_config(cfg: &ProblemConfig) -> Self {
        StopRule {
            max_rounds: cfg.rounds,
            rel_tol: cfg.tol,
            patience: cfg.patience.max(1),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    RoundLimit,
    ObjectivePlateau,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StopReason::RoundLimit => write!(f, "round_limit"),
            StopReason::ObjectivePlateau => write!(f, "objective_plateau"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct RoundRecord {
    pub round: u64,
    pub objective: f64,
    pub comm_scalars: u64,
    pub wall_ms: f64,
}

/// Per-round record of the run plus the final estimates.
#[derive(Clone, Debug)]
pub struct RunTrace {
    pub records: Vec<RoundRecord>,
    pub snapshots: Option<Vec<Vec<SignalVector>>>,
    pub estimates: Vec<SignalVector>,
    pub rounds_executed: usize,
    pub stop: StopReason,
}

pub fn write_trace_csv(path: &Path, trace: &RunTrace) -> Result<()> {
    let mut out = String::from("round,objective,comm_scalars,wall_ms\n");
    for r in &trace.records {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.round, r.objective, r.comm_scalars, r.wall_ms
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// One node's local update: `K` projected gradient epochs against a
/// stale aggregate direction. The neighbor direction
/// `psi_j = psi - sigma_self * beta / |beta|` is fixed for the whole
/// call, exactly as the round protocol stages it; `sigma_self` is the
/// orientation sign under which the server folded this node's previous
/// report into the aggregate (+1 under plain summation).
#[allow(clippy::too_many_arguments)]
pub fn local_update(
    beta: &SignalVector,
    ds: &NodeDataset,
    psi: &DVector<f64>,
    sigma_self: f64,
    scale: PenaltyScale,
    alpha: f64,
    epochs: usize,
    variant: GradientVariant,
) -> Result<SignalVector> {
    if epochs == 0 {
        return Ok(beta.clone());
    }
    let psi_j = if scale.value == 0.0 {
        DVector::zeros(beta.len())
    } else {
        let norm = beta.norm();
        if norm == 0.0 {
            return Err(Error::ZeroVector("local update at zero estimate".into()));
        }
        psi - beta * (sigma_self / norm)
    };
    let mut v = lift(beta);
    for _ in 0..epochs {
        let grad = psi_local_gradient(&v, &psi_j, ds, scale, variant)?;
        v = crate::model::project(&(&v - grad * alpha));
        let norm = v.norm();
        if norm > DIVERGENCE_NORM {
            return Err(Error::StepDiverged(norm));
        }
    }
    extract(&v)
}

/// Sum of unit-normalized estimates, accumulated in ascending node order.
pub fn server_aggregate(betas: &[SignalVector]) -> Result<DVector<f64>> {
    let p = betas.first().map(|b| b.len()).unwrap_or(0);
    let mut psi = DVector::zeros(p);
    for (j, beta) in betas.iter().enumerate() {
        let norm = beta.norm();
        if norm == 0.0 {
            return Err(Error::ZeroVector(format!("node {j} estimate")));
        }
        psi += beta / norm;
    }
    Ok(psi)
}

/// Orientation sign of a report against an aggregation reference;
/// `sign(0) = +1` everywhere in this crate.
pub fn orientation_sign(beta: &SignalVector, reference: &DVector<f64>) -> f64 {
    if beta.dot(reference) >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Sign-coherent aggregate: each unit estimate enters the sum oriented
/// to align with the previous aggregate. The squared-cosine penalty only
/// sees estimate lines, so a report and its negation are equivalent; the
/// plain sum lets opposite orientations cancel and starves the penalty,
/// while the oriented sum keeps the aggregate pointing along the
/// consensus line at full strength.
pub fn server_aggregate_oriented(
    betas: &[SignalVector],
    reference: &DVector<f64>,
) -> Result<DVector<f64>> {
    let p = betas.first().map(|b| b.len()).unwrap_or(0);
    let mut psi = DVector::zeros(p);
    for (j, beta) in betas.iter().enumerate() {
        let norm = beta.norm();
        if norm == 0.0 {
            return Err(Error::ZeroVector(format!("node {j} estimate")));
        }
        psi += beta * (orientation_sign(beta, reference) / norm);
    }
    Ok(psi)
}

/// Starting estimates for every node.
pub fn initial_betas(cfg: &ProblemConfig, datasets: &[NodeDataset]) -> Vec<SignalVector> {
    match cfg.init {
        InitKind::NodeXy => datasets.iter().map(|d| d.xy.clone()).collect(),
        InitKind::PooledXy => {
            let total: f64 = datasets.iter().map(|d| d.n() as f64).sum();
            let mut pooled = DVector::zeros(cfg.p);
            for d in datasets {
                pooled += &d.xy * d.n() as f64;
            }
            pooled /= total;
            datasets.iter().map(|_| pooled.clone()).collect()
        }
        InitKind::Random => {
            use rand_distr::StandardNormal;
            let scale = 1.0 / (cfg.p as f64).sqrt();
            (0..datasets.len())
                .map(|j| {
                    let mut rng = rng_from(cfg.init_seed, &[stream::INIT, j as u64]);
                    DVector::from_fn(cfg.p, |_, _| {
                        use rand::Rng;
                        let z: f64 = rng.sample(StandardNormal);
                        z * scale
                    })
                })
                .collect()
        }
    }
}

/// Orchestrates synchronous rounds over any transport; the transport owns
/// the node-side state, the engine owns the server-side view.
pub struct DirEngine<'a, T: RoundTransport> {
    cfg: &'a ProblemConfig,
    lambda: f64,
    datasets: &'a [NodeDataset],
    transport: T,
    betas: Vec<SignalVector>,
    psi: DVector<f64>,
    round: u64,
    halvings: u32,
    objective: f64,
    plateau: usize,
    records: Vec<RoundRecord>,
    snapshots: Option<Vec<Vec<SignalVector>>>,
    stop: Option<StopReason>,
}

impl<'a, T: RoundTransport> DirEngine<'a, T> {
    pub fn new(
        cfg: &'a ProblemConfig,
        lambda: f64,
        datasets: &'a [NodeDataset],
        transport: T,
        initial: Vec<SignalVector>,
    ) -> Result<Self> {
        let psi = server_aggregate(&initial)?;
        let objective = objective_g(&initial, datasets, lambda)?;
        let records = vec![RoundRecord {
            round: 0,
            objective,
            comm_scalars: 0,
            wall_ms: 0.0,
        }];
        let snapshots = cfg.snapshot_betas.then(|| vec![initial.clone()]);
        Ok(DirEngine {
            cfg,
            lambda,
            datasets,
            transport,
            betas: initial,
            psi,
            round: 0,
            halvings: 0,
            objective,
            plateau: 0,
            records,
            snapshots,
            stop: None,
        })
    }

    pub fn betas(&self) -> &[SignalVector] {
        &self.betas
    }

    pub fn rounds_executed(&self) -> usize {
        self.round as usize
    }

    pub fn stopped(&self) -> Option<StopReason> {
        self.stop
    }

    pub fn alpha(&self) -> f64 {
        self.cfg.alpha / f64::powi(2.0, self.halvings as i32)
    }

    /// Execute one round. Returns `false` once the stop rule has fired.
    pub fn step(&mut self, rule: &StopRule) -> Result<bool> {
        if self.stop.is_some() {
            return Ok(false);
        }
        if self.round as usize >= rule.max_rounds {
            self.stop = Some(StopReason::RoundLimit);
            return Ok(false);
        }
        let start = Instant::now();
        self.round += 1;
        let tag = compose_round_tag(self.round, self.halvings);
        let before = self.transport.counters().scalars_sent;
        let betas = self.transport.exchange(tag, self.alpha(), &self.psi)?;
        let scalars = self.transport.counters().scalars_sent - before;
        // Sign-coherent aggregation against the direction just broadcast.
        let reference = self.psi.clone();
        self.psi = server_aggregate_oriented(&betas, &reference)?;
        self.betas = betas;
        let objective = objective_g(&self.betas, self.datasets, self.lambda)?;
        self.records.push(RoundRecord {
            round: self.round,
            objective,
            comm_scalars: scalars,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        });
        if let Some(snaps) = &mut self.snapshots {
            snaps.push(self.betas.clone());
        }
        if objective > self.objective + INCREASE_TOLERANCE && self.halvings < MAX_HALVINGS {
            self.halvings += 1;
        }
        let denom = self.objective.abs().max(1.0);
        if (objective - self.objective).abs() <= rule.rel_tol * denom {
            self.plateau += 1;
        } else {
            self.plateau = 0;
        }
        self.objective = objective;
        if self.round >= 2 && self.plateau >= rule.patience {
            self.stop = Some(StopReason::ObjectivePlateau);
            return Ok(false);
        }
        if self.round as usize >= rule.max_rounds {
            self.stop = Some(StopReason::RoundLimit);
            return Ok(false);
        }
        Ok(true)
    }

    /// Run until the stop rule fires, then return estimates and trace.
    pub fn run(mut self, rule: &StopRule) -> Result<(Vec<SignalVector>, RunTrace)> {
        while self.step(rule)? {}
        Ok(self.finish())
    }

    pub fn finish(self) -> (Vec<SignalVector>, RunTrace) {
        let trace = RunTrace {
            records: self.records,
            snapshots: self.snapshots,
            estimates: self.betas.clone(),
            rounds_executed: self.round as usize,
            stop: self.stop.unwrap_or(StopReason::RoundLimit),
        };
        (self.betas, trace)
    }

    /// Hand the node-side state back, e.g. to warm-start the next
    /// regularization level.
    pub fn into_parts(self) -> (Vec<SignalVector>, Vec<RoundRecord>) {
        (self.betas, self.records)
    }
}

/// Distributed run over the deterministic in-memory transport.
pub fn run_dir(
    cfg: &ProblemConfig,
    lambda: f64,
    datasets: &[NodeDataset],
) -> Result<(Vec<SignalVector>, RunTrace)> {
    let initial = initial_betas(cfg, datasets);
    run_dir_from(cfg, lambda, datasets, initial)
}

pub fn run_dir_from(
    cfg: &ProblemConfig,
    lambda: f64,
    datasets: &[NodeDataset],
    initial: Vec<SignalVector>,
) -> Result<(Vec<SignalVector>, RunTrace)> {
    let scale = PenaltyScale::new(cfg.penalty_scale, lambda, datasets.len());
    let transport =
        InMemoryTransport::new(datasets, initial.clone(), scale, cfg.epochs, cfg.variant);
    let rule = StopRule::from_config(cfg);
    DirEngine::new(cfg, lambda, datasets, transport, initial)?.run(&rule)
}

/// Distributed run with data-anchored continuation: a penalty-free phase
/// first contracts every node onto its own data solution, erasing the
/// initialization, and the penalized run continues from there. The
/// coupled objective has multiple stationary points at small sample
/// sizes; anchoring always selects the one connected to the data
/// solution, which makes the final estimates initialization-independent.
pub fn run_dir_anchored(
    cfg: &ProblemConfig,
    lambda: f64,
    datasets: &[NodeDataset],
) -> Result<(Vec<SignalVector>, RunTrace)> {
    let initial = initial_betas(cfg, datasets);
    let mut anchor_cfg = cfg.clone();
    anchor_cfg.tol = cfg.tol.min(1e-10);
    anchor_cfg.patience = cfg.patience.max(10);
    let (anchored, _) = run_dir_from(&anchor_cfg, 0.0, datasets, initial)?;
    run_dir_from(cfg, lambda, datasets, anchored)
}

/// Centralized counterpart: synchronous full-information gradient steps
/// on the original objective, no communication.
pub fn run_cir(
    cfg: &ProblemConfig,
    lambda: f64,
    datasets: &[NodeDataset],
) -> Result<(Vec<SignalVector>, RunTrace)> {
    let initial = initial_betas(cfg, datasets);
    run_cir_from(cfg, lambda, datasets, initial)
}

pub fn run_cir_from(
    cfg: &ProblemConfig,
    lambda: f64,
    datasets: &[NodeDataset],
    initial: Vec<SignalVector>,
) -> Result<(Vec<SignalVector>, RunTrace)> {
    let m = datasets.len();
    let rule = StopRule::from_config(cfg);
    let mut betas = initial;
    let mut objective = objective_g(&betas, datasets, lambda)?;
    let mut records = vec![RoundRecord {
        round: 0,
        objective,
        comm_scalars: 0,
        wall_ms: 0.0,
    }];
    let mut snapshots = cfg.snapshot_betas.then(|| vec![betas.clone()]);
    let mut halvings = 0u32;
    let mut plateau = 0usize;
    let mut stop = StopReason::RoundLimit;
    let mut executed = 0usize;
    for round in 1..=rule.max_rounds {
        let start = Instant::now();
        let alpha = cfg.alpha / f64::powi(2.0, halvings as i32);
        let mut next = Vec::with_capacity(m);
        for (j, (beta, ds)) in betas.iter().zip(datasets).enumerate() {
            let mut grad = (&ds.gram * beta - &ds.xy) * 2.0;
            if lambda != 0.0 {
                grad += exact_penalty_grad(j, &betas, lambda, m)?;
            }
            let stepped = beta - grad * alpha;
            let norm = stepped.norm();
            if norm > DIVERGENCE_NORM {
                return Err(Error::StepDiverged(norm));
            }
            next.push(stepped);
        }
        betas = next;
        executed = round;
        let g = objective_g(&betas, datasets, lambda)?;
        records.push(RoundRecord {
            round: round as u64,
            objective: g,
            comm_scalars: 0,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        });
        if let Some(snaps) = &mut snapshots {
            snaps.push(betas.clone());
        }
        if g > objective + INCREASE_TOLERANCE && halvings < MAX_HALVINGS {
            halvings += 1;
        }
        let denom = objective.abs().max(1.0);
        if (g - objective).abs() <= rule.rel_tol * denom {
            plateau += 1;
        } else {
            plateau = 0;
        }
        objective = g;
        if round >= 2 && plateau >= rule.patience {
            stop = StopReason::ObjectivePlateau;
            break;
        }
    }
    let trace = RunTrace {
        records,
        snapshots,
        estimates: betas.clone(),
        rounds_executed: executed,
        stop,
    };
    Ok((betas, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::sls;
    use crate::datagen::{gen_covariance, gen_measurements};
    use crate::model::{build_stats, AllocationSpec, SizeSpec};
    use crate::rng::rng_from;
    use nalgebra::{dvector, DMatrix};

    fn toy_config(p: usize, m: usize, n: usize) -> ProblemConfig {
        ProblemConfig {
            p,
            m,
            sizes: SizeSpec::PerNode(n),
            alloc: AllocationSpec::Equal,
            ..ProblemConfig::default()
        }
    }

    fn toy_dataset() -> NodeDataset {
        build_stats(
            DMatrix::from_column_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]),
            dvector![1.0, -1.0],
        )
        .unwrap()
    }

    #[test]
    fn round_tag_roundtrip() {
        for round in [0u64, 1, 2, 17, 299] {
            for h in 0..=MAX_HALVINGS {
                assert_eq!(decompose_round_tag(compose_round_tag(round, h)), (round, h));
            }
        }
    }

    #[test]
    fn local_update_zero_epochs_is_identity() {
        let ds = toy_dataset();
        let beta = dvector![0.4, -0.3];
        let scale = PenaltyScale {
            value: 0.2,
            neighbor_weight: 2.0,
        };
        let out = local_update(
            &beta,
            &ds,
            &dvector![1.0, 1.0],
            1.0,
            scale,
            0.05,
            0,
            GradientVariant::Analytic,
        )
        .unwrap();
        assert_eq!(out, beta);
    }

    /// Single-step arithmetic locked against an explicit hand evaluation:
    /// one projected step is `v - alpha * D` with the last coordinate
    /// reset to 1, so only the beta block moves.
    #[test]
    fn local_update_single_step_hand_checked() {
        let ds = toy_dataset();
        let beta = dvector![0.5, 0.25];
        let psi = dvector![1.0, -2.0];
        let scale = PenaltyScale {
            value: 0.3,
            neighbor_weight: 2.0,
        };
        let alpha = 0.1;
        // Re-derive the step term by term.
        let psi_j: SignalVector = &psi - &beta / beta.norm();
        let nb2 = beta.norm_squared();
        let ip = psi_j.dot(&beta);
        let data_beta = &ds.gram * &beta - &ds.xy;
        let w = scale.value * scale.neighbor_weight / psi_j.norm_squared();
        let pen = &psi_j * (ip / nb2) - &beta * (ip * ip / (nb2 * nb2));
        let expect = &beta - (data_beta - pen * w) * alpha;
        let got = local_update(
            &beta,
            &ds,
            &psi,
            1.0,
            scale,
            alpha,
            1,
            GradientVariant::Analytic,
        )
        .unwrap();
        assert!((got - expect).norm() < 1e-15);
    }

    #[test]
    fn aggregate_values_and_invariance() {
        let betas = vec![dvector![1.0, 0.0], dvector![0.0, 1.0]];
        assert_eq!(server_aggregate(&betas).unwrap(), dvector![1.0, 1.0]);
        let cancel = vec![dvector![1.0, 0.0], dvector![-1.0, 0.0]];
        assert_eq!(server_aggregate(&cancel).unwrap(), dvector![0.0, 0.0]);
        let scaled = vec![dvector![7.0, 0.0], dvector![0.0, 7.0]];
        assert_eq!(server_aggregate(&scaled).unwrap(), dvector![1.0, 1.0]);
        let zero = vec![dvector![0.0, 0.0]];
        assert!(matches!(server_aggregate(&zero), Err(Error::ZeroVector(_))));
    }

    /// At lambda = 0 the local problem is an unpenalized strongly convex
    /// quadratic, so enough epochs converge to the per-node LS solution.
    #[test]
    fn dir_lambda_zero_converges_to_sls() {
        let (_, lf) = gen_covariance(4, 0.3);
        let truth = dvector![0.8, -0.4, 0.2, 0.6];
        let mut cfg = toy_config(4, 3, 60);
        cfg.rounds = 800;
        cfg.tol = 1e-14;
        cfg.patience = 20;
        let mut rng = rng_from(31, &[1]);
        let datasets: Vec<_> = (0..3)
            .map(|_| gen_measurements(&truth, 60, &lf, 0.1, 0.75, &mut rng).unwrap())
            .collect();
        let (estimates, _) = run_dir(&cfg, 0.0, &datasets).unwrap();
        for (est, ds) in estimates.iter().zip(&datasets) {
            let ls = sls(ds).unwrap();
            assert!((est - &ls).norm() <= 1e-4, "gap {}", (est - &ls).norm());
        }
    }

    #[test]
    fn cir_lambda_zero_descends_each_node_independently() {
        let (_, lf) = gen_covariance(3, 0.3);
        let truth = dvector![1.0, 0.0, -0.5];
        let mut rng = rng_from(32, &[1]);
        let datasets: Vec<_> = (0..2)
            .map(|_| gen_measurements(&truth, 40, &lf, 0.1, 0.75, &mut rng).unwrap())
            .collect();
        let mut cfg = toy_config(3, 2, 40);
        cfg.rounds = 1500;
        cfg.tol = 0.0;
        let (estimates, trace) = run_cir(&cfg, 0.0, &datasets).unwrap();
        assert!(trace.records.iter().all(|r| r.comm_scalars == 0));
        for (est, ds) in estimates.iter().zip(&datasets) {
            let ls = sls(ds).unwrap();
            assert!((est - &ls).norm() < 1e-6);
        }
    }

    /// Traces are bit-identical across repeated runs and worker counts:
    /// per-node updates are independent given the broadcast and results
    /// are reduced in node order.
    #[test]
    fn trace_determinism_across_thread_counts() {
        let (_, lf) = gen_covariance(4, 0.3);
        let truth = dvector![0.7, -0.3, 0.2, 0.5];
        let mut rng = rng_from(34, &[1]);
        let datasets: Vec<_> = (0..6)
            .map(|_| gen_measurements(&truth, 40, &lf, 0.1, 0.75, &mut rng).unwrap())
            .collect();
        let mut cfg = toy_config(4, 6, 40);
        cfg.rounds = 30;
        let run_in_pool = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| run_dir(&cfg, 0.9, &datasets).unwrap())
        };
        let (est1, trace1) = run_in_pool(1);
        let (est4, trace4) = run_in_pool(4);
        for (a, b) in est1.iter().zip(&est4) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        for (ra, rb) in trace1.records.iter().zip(&trace4.records) {
            assert_eq!(ra.objective.to_bits(), rb.objective.to_bits());
        }
    }

    /// An absurd step size trips the divergence guard.
    #[test]
    fn oversized_step_diverges() {
        let ds = toy_dataset();
        let beta = dvector![1.0, 1.0];
        let scale = PenaltyScale {
            value: 0.0,
            neighbor_weight: 0.0,
        };
        let err = local_update(
            &beta,
            &ds,
            &dvector![0.0, 0.0],
            1.0,
            scale,
            1e9,
            4,
            GradientVariant::Analytic,
        )
        .unwrap_err();
        assert!(matches!(err, Error::StepDiverged(_)), "{err:?}");
    }

    /// The verbatim trace-formula variant runs end to end.
    #[test]
    fn literal_variant_smoke() {
        let (_, lf) = gen_covariance(3, 0.3);
        let truth = dvector![0.8, -0.2, 0.4];
        let mut rng = rng_from(37, &[1]);
        let datasets: Vec<_> = (0..3)
            .map(|_| gen_measurements(&truth, 30, &lf, 0.1, 0.75, &mut rng).unwrap())
            .collect();
        let mut cfg = toy_config(3, 3, 30);
        cfg.rounds = 25;
        cfg.variant = GradientVariant::PaperLiteral;
        let (estimates, trace) = run_dir(&cfg, 0.6, &datasets).unwrap();
        assert_eq!(estimates.len(), 3);
        assert!(trace.records.iter().all(|r| r.objective.is_finite()));
    }

    /// Even an instant plateau cannot stop the run before round 2.
    #[test]
    fn early_stop_waits_for_round_two() {
        let (_, lf) = gen_covariance(2, 0.0);
        let truth = dvector![1.0, 0.0];
        let mut rng = rng_from(36, &[1]);
        let datasets: Vec<_> = (0..2)
            .map(|_| gen_measurements(&truth, 20, &lf, 0.0, 1.0, &mut rng).unwrap())
            .collect();
        let mut cfg = toy_config(2, 2, 20);
        cfg.rounds = 50;
        cfg.tol = 1e9; // every round counts as a plateau
        cfg.patience = 1;
        let (_, trace) = run_dir(&cfg, 0.0, &datasets).unwrap();
        assert!(trace.rounds_executed >= 2, "{}", trace.rounds_executed);
        assert_eq!(trace.stop, StopReason::ObjectivePlateau);
    }

    #[test]
    fn snapshots_are_config_gated() {
        let (_, lf) = gen_covariance(3, 0.3);
        let truth = dvector![1.0, 0.2, -0.4];
        let mut rng = rng_from(35, &[1]);
        let datasets: Vec<_> = (0..2)
            .map(|_| gen_measurements(&truth, 30, &lf, 0.1, 0.75, &mut rng).unwrap())
            .collect();
        let mut cfg = toy_config(3, 2, 30);
        cfg.rounds = 4;
        let (_, trace) = run_dir(&cfg, 0.5, &datasets).unwrap();
        assert!(trace.snapshots.is_none());
        cfg.snapshot_betas = true;
        let (_, trace) = run_dir(&cfg, 0.5, &datasets).unwrap();
        let snaps = trace.snapshots.unwrap();
        assert_eq!(snaps.len(), trace.records.len());
    }

    /// The centralized gradient is a descent direction for the original
    /// objective at small step sizes.
    #[test]
    fn cir_gradient_descends_objective() {
        use crate::objective::objective_g;
        let mut rng = rng_from(33, &[1]);
        let (_, lf) = gen_covariance(4, 0.3);
        for trial in 0..50 {
            let truth = dvector![0.5, -0.5, 0.25, 1.0];
            let m = 3;
            let datasets: Vec<_> = (0..m)
                .map(|_| gen_measurements(&truth, 30, &lf, 0.1, 0.75, &mut rng).unwrap())
                .collect();
            let betas: Vec<_> = datasets.iter().map(|d| d.xy.clone()).collect();
            let lambda = 0.9;
            let g0 = objective_g(&betas, &datasets, lambda).unwrap();
            let alpha = 1e-4;
            let mut moved = Vec::new();
            for (j, (beta, ds)) in betas.iter().zip(&datasets).enumerate() {
                let grad = (&ds.gram * beta - &ds.xy) * 2.0
                    + exact_penalty_grad(j, &betas, lambda, m).unwrap();
                moved.push(beta - grad * alpha);
            }
            let g1 = objective_g(&moved, &datasets, lambda).unwrap();
            assert!(g1 <= g0 + 1e-12, "trial {trial}: {g0} -> {g1}");
        }
    }
}
