//! Core domain types: signals, lifted states, per-node sufficient
//! statistics, and the run configuration shared by the generators, the
//! solvers, and the CLI.
//!
//! A lifted state is stored as the `(p+1)`-vector `v = [beta; c]`
//! representing the rank-1 matrix whose only nonzero column is `v`; the
//! feasible set is `c == 1`. Keeping the vector instead of the matrix
//! preserves the constraint exactly and costs O(p) memory.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::objective::{GradientVariant, PenaltyScaleKind};

/// Dense signal or signal estimate of length `p`.
pub type SignalVector = DVector<f64>;

/// Lifted state `v = [beta; c]` of length `p + 1`; feasible when `c == 1`.
pub type LiftedState = DVector<f64>;

/// Threshold below which the last coordinate counts as zero.
pub const LAST_COORD_EPS: f64 = 1e-12;

/// Embed a signal into the feasible lifted set: `[beta; 1]`.
pub fn lift(beta: &SignalVector) -> LiftedState {
    let p = beta.len();
    let mut v = DVector::zeros(p + 1);
    v.rows_mut(0, p).copy_from(beta);
    v[p] = 1.0;
    v
}

/// Recover the signal from a lifted state: `v[..p] / v[p]`.
pub fn extract(v: &LiftedState) -> Result<SignalVector> {
    let p = v.len() - 1;
    let last = v[p];
    if last.abs() < LAST_COORD_EPS {
        return Err(Error::LastCoordinateZero(last));
    }
    Ok(v.rows(0, p).map(|x| x / last))
}

/// Project onto the feasible set: reset the last coordinate to 1, leave
/// everything else untouched. Idempotent.
pub fn project(v: &LiftedState) -> LiftedState {
    let mut out = v.clone();
    let p = out.len() - 1;
    out[p] = 1.0;
    out
}

/// Ground truth attached to a generated node.
#[derive(Clone, Debug)]
pub struct NodeTruth {
    pub beta: SignalVector,
    pub sigma: f64,
    pub q: f64,
}

/// One node's measurements plus the cached sufficient statistics
/// `gram = X Xᵀ / n` and `xy = X y / n`. Raw `X` and `y` are kept for
/// validation splits, prediction accuracy, and the corrected-LS
/// diagnostic; every per-iteration quantity only touches the statistics.
#[derive(Clone, Debug)]
pub struct NodeDataset {
    /// Measurement matrix, `p x n`, columns are measurement vectors.
    pub x: DMatrix<f64>,
    /// 1-bit measurements, entries exactly +1 or -1.
    pub y: DVector<f64>,
    /// `X Xᵀ / n`.
    pub gram: DMatrix<f64>,
    /// `X y / n`.
    pub xy: DVector<f64>,
    pub truth: Option<NodeTruth>,
}

impl NodeDataset {
    pub fn p(&self) -> usize {
        self.x.nrows()
    }

    pub fn n(&self) -> usize {
        self.x.ncols()
    }

    /// Apply the averaged lifted-measurement operator to a lifted state:
    /// `sum_i S_i v / n = [G beta - c v_last; -cᵀ beta + v_last]`, the exact
    /// reduction of the per-measurement outer products to `(gram, xy)`.
    pub fn stat_apply(&self, v: &LiftedState) -> DVector<f64> {
        let p = self.p();
        debug_assert_eq!(v.len(), p + 1);
        let beta = v.rows(0, p);
        let last = v[p];
        let mut out = DVector::zeros(p + 1);
        out.rows_mut(0, p)
            .copy_from(&(&self.gram * beta - &self.xy * last));
        out[p] = -self.xy.dot(&beta) + last;
        out
    }
}

/// Validate raw measurements and cache the sufficient statistics.
pub fn build_stats(x: DMatrix<f64>, y: DVector<f64>) -> Result<NodeDataset> {
    if y.len() != x.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "X has {} measurements but y has {}",
            x.ncols(),
            y.len()
        )));
    }
    if x.ncols() == 0 || x.nrows() == 0 {
        return Err(Error::DimensionMismatch("empty measurement matrix".into()));
    }
    for (i, &yi) in y.iter().enumerate() {
        if yi != 1.0 && yi != -1.0 {
            return Err(Error::NonBinaryMeasurement {
                index: i,
                value: yi,
            });
        }
    }
    let n = x.ncols() as f64;
    let gram = &x * x.transpose() / n;
    let xy = &x * &y / n;
    Ok(NodeDataset {
        x,
        y,
        gram,
        xy,
        truth: None,
    })
}

/// How the total measurement budget is spread over nodes.
#[derive(Clone, Debug, PartialEq)]
pub enum AllocationSpec {
    Equal,
    PowerLaw { exponent: f64 },
    Dirichlet { alpha: f64 },
}

/// Either a pooled total split by the allocation rule, or the same count
/// on every node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SizeSpec {
    TotalN(usize),
    PerNode(usize),
}

impl SizeSpec {
    pub fn total(&self, m: usize) -> usize {
        match *self {
            SizeSpec::TotalN(n) => n,
            SizeSpec::PerNode(n) => n * m,
        }
    }
}

/// A noise / sign-flip channel `(sigma, q)` with its selection weight.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Channel {
    pub sigma: f64,
    pub q: f64,
    pub weight: f64,
}

/// How node estimates are initialized before the first round.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitKind {
    /// Each node starts from its own correlation vector `X y / n`.
    NodeXy,
    /// Every node starts from the pooled correlation vector.
    PooledXy,
    /// Independent Gaussian draws keyed by `init_seed`.
    Random,
}

/// Full run configuration: scenario geometry, channels, and solver knobs.
#[derive(Clone, Debug)]
pub struct ProblemConfig {
    pub p: usize,
    pub m: usize,
    pub sizes: SizeSpec,
    pub alloc: AllocationSpec,
    /// Maximum angular deviation of the signal family, radians in (0, pi/2).
    pub theta_max: f64,
    /// Covariance decay: `Sigma[k, l] = rho^|k-l|`.
    pub rho: f64,
    pub channels: Vec<Channel>,
    pub lambda: f64,
    pub lambda_grid: Vec<f64>,
    /// Base step size; halved (up to 10 times) when the objective rises.
    pub alpha: f64,
    /// Maximum communication rounds `T`.
    pub rounds: usize,
    /// Local gradient epochs `K` per node per round.
    pub epochs: usize,
    pub variant: GradientVariant,
    pub penalty_scale: PenaltyScaleKind,
    /// Relative objective tolerance for early stopping.
    pub tol: f64,
    /// Rounds of plateau required before early stop.
    pub patience: usize,
    pub validation_fraction: f64,
    pub init: InitKind,
    pub init_seed: u64,
    pub seed: u64,
    /// Keep per-round estimate snapshots in the trace.
    pub snapshot_betas: bool,
}

impl Default for ProblemConfig {
    /// Desk-scale defaults: 30 nodes, 2400 pooled measurements with a
    /// power-law spread, dimension 20, tight angular similarity.
    fn default() -> Self {
        ProblemConfig {
            p: 20,
            m: 30,
            sizes: SizeSpec::TotalN(2400),
            alloc: AllocationSpec::PowerLaw { exponent: 0.8 },
            theta_max: std::f64::consts::FRAC_PI_8,
            rho: 0.3,
            channels: vec![
                Channel {
                    sigma: 0.1,
                    q: 0.75,
                    weight: 0.5,
                },
                Channel {
                    sigma: 0.2,
                    q: 0.125,
                    weight: 0.5,
                },
            ],
            lambda: 1.0,
            lambda_grid: vec![0.4, 0.6, 0.8, 1.0, 1.2, 1.4, 1.6],
            alpha: 0.05,
            rounds: 300,
            epochs: 5,
            variant: GradientVariant::Analytic,
            penalty_scale: PenaltyScaleKind::LambdaOverM,
            tol: 1e-6,
            patience: 5,
            validation_fraction: 0.2,
            init: InitKind::NodeXy,
            init_seed: 0,
            seed: 7,
            snapshot_betas: false,
        }
    }
}

impl ProblemConfig {
    /// Minimum measurements per node; the margin over `p` keeps tiny test
    /// Grams away from singularity.
    pub fn node_floor(&self) -> usize {
        self.p + 5
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Error::Config { line: 0, msg };
        if self.p == 0 || self.m == 0 {
            return Err(fail("p and m must be positive".into()));
        }
        if !(self.theta_max > 0.0 && self.theta_max < std::f64::consts::FRAC_PI_2) {
            return Err(fail(format!(
                "theta_max {} outside (0, pi/2)",
                self.theta_max
            )));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return Err(fail(format!("rho {} outside [0, 1)", self.rho)));
        }
        if self.channels.is_empty() {
            return Err(fail("at least one (sigma, q) channel required".into()));
        }
        for c in &self.channels {
            if !(0.0..=1.0).contains(&c.q) || c.q == 0.5 {
                return Err(fail(format!("q {} outside [0,1] \\ {{0.5}}", c.q)));
            }
            if c.sigma < 0.0 {
                return Err(fail(format!("sigma {} negative", c.sigma)));
            }
            if c.weight <= 0.0 {
                return Err(fail(format!("channel weight {} not positive", c.weight)));
            }
        }
        if self.lambda < 0.0 {
            return Err(fail(format!("lambda {} negative", self.lambda)));
        }
        if self.alpha <= 0.0 {
            return Err(fail(format!("alpha {} not positive", self.alpha)));
        }
        if self.rounds == 0 {
            return Err(fail("rounds must be at least 1".into()));
        }
        if !(0.0 < self.validation_fraction && self.validation_fraction < 0.5) {
            return Err(fail(format!(
                "validation_fraction {} outside (0, 0.5)",
                self.validation_fraction
            )));
        }
        let floor = self.node_floor();
        match self.sizes {
            SizeSpec::TotalN(n) => {
                if n < self.m * floor {
                    return Err(fail(format!(
                        "total_n {} below m * (p + 5) = {}",
                        n,
                        self.m * floor
                    )));
                }
            }
            SizeSpec::PerNode(n) => {
                if n < floor {
                    return Err(fail(format!("n {} below p + 5 = {}", n, floor)));
                }
            }
        }
        if !self.lambda_grid.windows(2).all(|w| w[0] < w[1]) {
            return Err(fail("lambda_grid must be strictly ascending".into()));
        }
        Ok(())
    }
}
