//! Synthetic scenario generation: AR(1) covariance, Bernoulli base signal,
//! a rotation-controlled signal family with a guaranteed pairwise
//! similarity bound, heterogeneous noise/sign-flip channels, and node
//! sample-size allocation. Also the CSV scenario format and external
//! signal ingestion.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};
use crate::model::{
    build_stats, AllocationSpec, Channel, NodeDataset, NodeTruth, ProblemConfig, SignalVector,
    SizeSpec,
};
use crate::rng::{rng_from, stream};

/// The datagen slice of a run configuration.
#[derive(Clone, Debug)]
pub struct ScenarioSpec {
    pub p: usize,
    pub m: usize,
    pub sizes: SizeSpec,
    pub alloc: AllocationSpec,
    pub theta_max: f64,
    pub rho: f64,
    pub channels: Vec<Channel>,
    pub seed: u64,
}

impl From<&ProblemConfig> for ScenarioSpec {
    fn from(cfg: &ProblemConfig) -> Self {
        ScenarioSpec {
            p: cfg.p,
            m: cfg.m,
            sizes: cfg.sizes,
            alloc: cfg.alloc.clone(),
            theta_max: cfg.theta_max,
            rho: cfg.rho,
            channels: cfg.channels.clone(),
            seed: cfg.seed,
        }
    }
}

/// AR(1) covariance `Sigma[k, l] = rho^|k-l|` and its lower Cholesky
/// factor for sampling.
pub fn gen_covariance(p: usize, rho: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let sigma = DMatrix::from_fn(p, p, |k, l| rho.powi((k as i32 - l as i32).abs()));
    let factor = sigma
        .clone()
        .cholesky()
        .expect("AR(1) covariance with |rho| < 1 is positive definite")
        .l();
    (sigma, factor)
}

pub fn elliptic_norm(beta: &SignalVector, sigma: &DMatrix<f64>) -> f64 {
    beta.dot(&(sigma * beta)).sqrt()
}

fn rescale_elliptic(beta: &SignalVector, sigma: &DMatrix<f64>) -> SignalVector {
    beta / elliptic_norm(beta, sigma)
}

/// Base signal: Bernoulli(0.5) entries in {0, 1}, rescaled to unit
/// elliptic norm. All-zero draws are resampled, at most 100 times.
pub fn gen_base_signal(
    p: usize,
    sigma: &DMatrix<f64>,
    rng: &mut ChaCha8Rng,
) -> Result<SignalVector> {
    const ATTEMPTS: usize = 100;
    for _ in 0..ATTEMPTS {
        let beta: SignalVector =
            DVector::from_fn(p, |_, _| if rng.random::<f64>() < 0.5 { 1.0 } else { 0.0 });
        if beta.iter().any(|&b| b != 0.0) {
            return Ok(rescale_elliptic(&beta, sigma));
        }
    }
    Err(Error::DegenerateSignal(ATTEMPTS))
}

/// Planar rotation of a unit vector toward a unit direction orthogonal
/// to it: `cos(theta) base + sin(theta) u`.
pub fn rotate_toward(base_unit: &SignalVector, u: &SignalVector, theta: f64) -> SignalVector {
    base_unit * theta.cos() + u * theta.sin()
}

/// Smallest pairwise absolute cosine over a family.
pub fn min_pairwise_abs_cos(family: &[SignalVector]) -> Result<f64> {
    let mut min = 1.0f64;
    for j in 0..family.len() {
        for k in j + 1..family.len() {
            let c = crate::objective::cosine(&family[j], &family[k])?.abs();
            min = min.min(c);
        }
    }
    Ok(min)
}

fn random_orthogonal_unit(base_unit: &SignalVector, rng: &mut ChaCha8Rng) -> Option<SignalVector> {
    let p = base_unit.len();
    if p < 2 {
        return None;
    }
    loop {
        let raw: SignalVector = DVector::from_fn(p, |_, _| rng.sample(StandardNormal));
        let ortho = &raw - base_unit * base_unit.dot(&raw);
        let n = ortho.norm();
        if n > 1e-8 {
            return Some(ortho / n);
        }
    }
}

/// Signal family around the base: node 1 keeps the base; each later node
/// is the base direction rotated by a deviation angle toward its own
/// random orthogonal direction, with an even chance of the anti-aligned
/// orientation, then rescaled to unit elliptic norm.
///
/// Deviation angles are drawn from `(0, theta_max / 2)` so any two nodes
/// are separated by less than `theta_max` as lines, which makes the
/// pairwise bound `|cos| >= cos(theta_max)` hold for every draw; the
/// family is still rejection-checked against that bound and regenerated
/// (fresh angles and directions) up to 50 times before giving up.
pub fn gen_signal_family(
    base: &SignalVector,
    m: usize,
    theta_max: f64,
    sigma: &DMatrix<f64>,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<SignalVector>> {
    const ATTEMPTS: usize = 50;
    let base_unit = base / base.norm();
    let bound = theta_max.cos();
    for _ in 0..ATTEMPTS {
        let mut family = Vec::with_capacity(m);
        family.push(base.clone());
        for _ in 1..m {
            let phi = rng.random::<f64>() * theta_max / 2.0;
            let flip = rng.random::<f64>() < 0.5;
            let rotated = match random_orthogonal_unit(&base_unit, rng) {
                Some(u) => rotate_toward(&base_unit, &u, phi),
                None => base_unit.clone(),
            };
            let oriented = if flip { -rotated } else { rotated };
            family.push(rescale_elliptic(&oriented, sigma));
        }
        if min_pairwise_abs_cos(&family)? >= bound - 1e-12 {
            return Ok(family);
        }
    }
    Err(Error::SimilarityUnsatisfiable(ATTEMPTS))
}

/// 1-bit measurements for one node: columns `x_i = L z`, noise
/// `N(0, sigma^2)`, sign kept with probability `q`, `sign(0) = +1`.
pub fn gen_measurements(
    beta: &SignalVector,
    n: usize,
    lfactor: &DMatrix<f64>,
    sigma_noise: f64,
    q: f64,
    rng: &mut ChaCha8Rng,
) -> Result<NodeDataset> {
    let p = beta.len();
    let mut x = DMatrix::zeros(p, n);
    let mut y = DVector::zeros(n);
    for i in 0..n {
        let z: DVector<f64> = DVector::from_fn(p, |_, _| rng.sample(StandardNormal));
        let col = lfactor * z;
        let noise: f64 = rng.sample::<f64, _>(StandardNormal) * sigma_noise;
        let keep = rng.random::<f64>() < q;
        let inner = col.dot(beta) + noise;
        let sign = if inner >= 0.0 { 1.0 } else { -1.0 };
        y[i] = if keep { sign } else { -sign };
        x.set_column(i, &col);
    }
    let mut ds = build_stats(x, y)?;
    ds.truth = Some(NodeTruth {
        beta: beta.clone(),
        sigma: sigma_noise,
        q,
    });
    Ok(ds)
}

/// Split a measurement budget over `m` nodes. Every node receives at
/// least `floor` measurements and the total is hit exactly, with the
/// rounding remainder absorbed by the largest node.
pub fn allocate_sizes(
    total: usize,
    m: usize,
    alloc: &AllocationSpec,
    floor: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>> {
    if total < m * floor {
        return Err(Error::InfeasibleAllocation { total, m, floor });
    }
    let weights: Vec<f64> = match alloc {
        AllocationSpec::Equal => vec![1.0; m],
        AllocationSpec::PowerLaw { exponent } => {
            (1..=m).map(|j| (j as f64).powf(-exponent)).collect()
        }
        AllocationSpec::Dirichlet { alpha } => {
            let gamma = Gamma::new(*alpha, 1.0).map_err(|e| Error::InfeasibleAllocation {
                total,
                m,
                floor: e as usize,
            })?;
            (0..m).map(|_| gamma.sample(rng).max(1e-300)).collect()
        }
    };
    let wsum: f64 = weights.iter().sum();
    let mut sizes: Vec<usize> = weights
        .iter()
        .map(|w| ((w / wsum * total as f64).round() as usize).max(floor))
        .collect();
    // Fix the rounding remainder on the largest node; when clamping left
    // a deficit that would push it under the floor, take the rest from
    // the other nodes' slack, biggest first.
    let assigned: i64 = sizes.iter().sum::<usize>() as i64;
    let mut remainder = total as i64 - assigned;
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| sizes[b].cmp(&sizes[a]).then(a.cmp(&b)));
    for &idx in &order {
        if remainder == 0 {
            break;
        }
        let room_down = sizes[idx] as i64 - floor as i64;
        if remainder > 0 {
            sizes[idx] = (sizes[idx] as i64 + remainder) as usize;
            remainder = 0;
        } else {
            let take = (-remainder).min(room_down);
            sizes[idx] -= take as usize;
            remainder += take;
        }
    }
    if remainder != 0 {
        return Err(Error::InfeasibleAllocation { total, m, floor });
    }
    debug_assert_eq!(sizes.iter().sum::<usize>(), total);
    Ok(sizes)
}

/// Deterministic seeded split into train and validation parts, with the
/// train statistics rebuilt from the retained columns.
pub fn split_validation(
    ds: &NodeDataset,
    fraction: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(NodeDataset, NodeDataset)> {
    if !(0.0 < fraction && fraction < 0.5) {
        return Err(Error::Config {
            line: 0,
            msg: format!("validation fraction {fraction} outside (0, 0.5)"),
        });
    }
    let n = ds.n();
    let p = ds.p();
    let n_train = (n as f64 * (1.0 - fraction)).floor() as usize;
    if n_train <= p {
        return Err(Error::TooFewMeasurements { train: n_train, p });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    // Fisher-Yates.
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    let take = |indices: &[usize]| -> Result<NodeDataset> {
        let mut x = DMatrix::zeros(p, indices.len());
        let mut y = DVector::zeros(indices.len());
        for (to, &from) in indices.iter().enumerate() {
            x.set_column(to, &ds.x.column(from));
            y[to] = ds.y[from];
        }
        let mut part = build_stats(x, y)?;
        part.truth = ds.truth.clone();
        Ok(part)
    };
    let train = take(&idx[..n_train])?;
    let val = take(&idx[n_train..])?;
    Ok((train, val))
}

/// A fully generated scenario.
pub struct Scenario {
    pub spec: ScenarioSpec,
    pub sigma: DMatrix<f64>,
    pub lfactor: DMatrix<f64>,
    pub nodes: Vec<NodeDataset>,
}

impl Scenario {
    /// Generate from the spec; all streams key off the spec seed.
    pub fn generate(spec: &ScenarioSpec) -> Result<Scenario> {
        let (sigma, lfactor) = gen_covariance(spec.p, spec.rho);
        let mut base_rng = rng_from(spec.seed, &[stream::BASE_SIGNAL]);
        let base = gen_base_signal(spec.p, &sigma, &mut base_rng)?;
        let mut family_rng = rng_from(spec.seed, &[stream::FAMILY]);
        let family = gen_signal_family(&base, spec.m, spec.theta_max, &sigma, &mut family_rng)?;
        Self::from_signals(spec, sigma, lfactor, family)
    }

    /// Generate measurements for externally supplied true signals,
    /// bypassing the rotation family.
    pub fn generate_with_signals(
        spec: &ScenarioSpec,
        signals: Vec<SignalVector>,
    ) -> Result<Scenario> {
        if signals.len() != spec.m {
            return Err(Error::MismatchedNodes(format!(
                "{} signals for {} nodes",
                signals.len(),
                spec.m
            )));
        }
        let (sigma, lfactor) = gen_covariance(spec.p, spec.rho);
        Self::from_signals(spec, sigma, lfactor, signals)
    }

    fn from_signals(
        spec: &ScenarioSpec,
        sigma: DMatrix<f64>,
        lfactor: DMatrix<f64>,
        family: Vec<SignalVector>,
    ) -> Result<Scenario> {
        let floor = spec.p + 5;
        let sizes = match spec.sizes {
            SizeSpec::PerNode(n) => {
                if n < floor {
                    return Err(Error::InfeasibleAllocation {
                        total: n * spec.m,
                        m: spec.m,
                        floor,
                    });
                }
                vec![n; spec.m]
            }
            SizeSpec::TotalN(total) => {
                let mut alloc_rng = rng_from(spec.seed, &[stream::ALLOCATION]);
                allocate_sizes(total, spec.m, &spec.alloc, floor, &mut alloc_rng)?
            }
        };
        let mut chan_rng = rng_from(spec.seed, &[stream::CHANNELS]);
        let wsum: f64 = spec.channels.iter().map(|c| c.weight).sum();
        let mut nodes = Vec::with_capacity(spec.m);
        for (j, beta) in family.iter().enumerate() {
            let mut pick = chan_rng.random::<f64>() * wsum;
            let mut channel = spec.channels[spec.channels.len() - 1];
            for c in &spec.channels {
                if pick < c.weight {
                    channel = *c;
                    break;
                }
                pick -= c.weight;
            }
            let mut meas_rng = rng_from(spec.seed, &[stream::MEASUREMENTS, j as u64]);
            nodes.push(gen_measurements(
                beta,
                sizes[j],
                &lfactor,
                channel.sigma,
                channel.q,
                &mut meas_rng,
            )?);
        }
        Ok(Scenario {
            spec: spec.clone(),
            sigma,
            lfactor,
            nodes,
        })
    }

    pub fn truths(&self) -> Vec<&NodeTruth> {
        self.nodes
            .iter()
            .map(|n| n.truth.as_ref().expect("generated nodes carry truth"))
            .collect()
    }
}

// --- CSV scenario format -------------------------------------------------
//
// One file per node, `node_<j>.csv`, comment header `# p,n,sigma,q` with
// the node's values, then one row per measurement: `x_1,...,x_p,y`.
// Ground truth in `truth.csv`: `node_id,beta_1..beta_p,sigma,q`.

pub fn write_scenario(dir: &Path, scenario: &Scenario) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (j, node) in scenario.nodes.iter().enumerate() {
        let mut out = String::new();
        let truth = node.truth.as_ref();
        let (sig, q) = truth
            .map(|t| (t.sigma, t.q))
            .unwrap_or((f64::NAN, f64::NAN));
        out.push_str(&format!("# {},{},{},{}\n", node.p(), node.n(), sig, q));
        for i in 0..node.n() {
            let mut fields: Vec<String> = node.x.column(i).iter().map(|v| format!("{v}")).collect();
            fields.push(format!("{}", node.y[i]));
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        fs::write(dir.join(format!("node_{j}.csv")), out)?;
    }
    let mut truth_out = String::new();
    let p = scenario.spec.p;
    let beta_cols: Vec<String> = (1..=p).map(|i| format!("beta_{i}")).collect();
    truth_out.push_str(&format!("node_id,{},sigma,q\n", beta_cols.join(",")));
    for (j, node) in scenario.nodes.iter().enumerate() {
        if let Some(t) = &node.truth {
            let betas: Vec<String> = t.beta.iter().map(|v| format!("{v}")).collect();
            truth_out.push_str(&format!("{j},{},{},{}\n", betas.join(","), t.sigma, t.q));
        }
    }
    fs::write(dir.join("truth.csv"), truth_out)?;
    Ok(())
}

pub fn read_node_csv(path: &Path) -> Result<NodeDataset> {
    let file = fs::File::open(path)?;
    let mut lines = BufReader::new(file).lines();
    let header = lines.next().ok_or_else(|| Error::Config {
        line: 1,
        msg: format!("{}: empty node file", path.display()),
    })??;
    let header = header.trim_start_matches('#').trim();
    let head: Vec<&str> = header.split(',').collect();
    if head.len() != 4 {
        return Err(Error::Config {
            line: 1,
            msg: format!("{}: node header needs p,n,sigma,q", path.display()),
        });
    }
    let parse = |s: &str, line: usize| -> Result<f64> {
        s.trim().parse::<f64>().map_err(|_| Error::Config {
            line,
            msg: format!("{}: bad number {s:?}", path.display()),
        })
    };
    let p = parse(head[0], 1)? as usize;
    let n = parse(head[1], 1)? as usize;
    let sigma = parse(head[2], 1)?;
    let q = parse(head[3], 1)?;
    let mut x = DMatrix::zeros(p, n);
    let mut y = DVector::zeros(n);
    let mut count = 0usize;
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != p + 1 {
            return Err(Error::Config {
                line: lineno + 2,
                msg: format!("{}: expected {} fields", path.display(), p + 1),
            });
        }
        if count >= n {
            return Err(Error::Config {
                line: lineno + 2,
                msg: format!("{}: more rows than declared n = {n}", path.display()),
            });
        }
        for (r, f) in fields[..p].iter().enumerate() {
            x[(r, count)] = parse(f, lineno + 2)?;
        }
        y[count] = parse(fields[p], lineno + 2)?;
        count += 1;
    }
    if count != n {
        return Err(Error::Config {
            line: count + 1,
            msg: format!("{}: {count} rows for declared n = {n}", path.display()),
        });
    }
    let mut ds = build_stats(x, y)?;
    if sigma.is_finite() && q.is_finite() {
        // Signal truth is attached later from truth.csv when present.
        ds.truth = Some(NodeTruth {
            beta: DVector::zeros(p),
            sigma,
            q,
        });
    }
    Ok(ds)
}

pub fn read_scenario(dir: &Path) -> Result<Vec<NodeDataset>> {
    let mut nodes = Vec::new();
    for j in 0.. {
        let path = dir.join(format!("node_{j}.csv"));
        if !path.exists() {
            break;
        }
        nodes.push(read_node_csv(&path)?);
    }
    if nodes.is_empty() {
        return Err(Error::Config {
            line: 0,
            msg: format!("{}: no node_<j>.csv files", dir.display()),
        });
    }
    let truth_path = dir.join("truth.csv");
    if truth_path.exists() {
        let truths = read_truth_csv(&truth_path)?;
        for (j, beta_sq) in truths {
            if let Some(node) = nodes.get_mut(j) {
                node.truth = Some(beta_sq);
            }
        }
    }
    Ok(nodes)
}

pub fn read_truth_csv(path: &Path) -> Result<Vec<(usize, NodeTruth)>> {
    let file = fs::File::open(path)?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if lineno == 0 || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 4 {
            return Err(Error::Config {
                line: lineno + 1,
                msg: format!("{}: truth row needs node_id,betas,sigma,q", path.display()),
            });
        }
        let parse = |s: &str| -> Result<f64> {
            s.trim().parse::<f64>().map_err(|_| Error::Config {
                line: lineno + 1,
                msg: format!("{}: bad number {s:?}", path.display()),
            })
        };
        let node_id = parse(fields[0])? as usize;
        let p = fields.len() - 3;
        let beta = DVector::from_fn(p, |i, _| parse(fields[1 + i]).unwrap_or(f64::NAN));
        if beta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config {
                line: lineno + 1,
                msg: format!("{}: non-finite beta entries", path.display()),
            });
        }
        out.push((
            node_id,
            NodeTruth {
                beta,
                sigma: parse(fields[p + 1])?,
                q: parse(fields[p + 2])?,
            },
        ));
    }
    Ok(out)
}

/// Plain CSV of true signals, one row per node, `p` columns, no header.
pub fn load_signals_csv(path: &Path, p: usize) -> Result<Vec<SignalVector>> {
    let file = fs::File::open(path)?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != p {
            return Err(Error::Config {
                line: lineno + 1,
                msg: format!("{}: expected {p} columns", path.display()),
            });
        }
        let mut beta = DVector::zeros(p);
        for (i, f) in fields.iter().enumerate() {
            beta[i] = f.trim().parse::<f64>().map_err(|_| Error::Config {
                line: lineno + 1,
                msg: format!("{}: bad number {f:?}", path.display()),
            })?;
        }
        out.push(beta);
    }
    Ok(out)
}

/// Write a signals CSV in the same plain format.
pub fn write_signals_csv(path: &Path, signals: &[SignalVector]) -> Result<()> {
    let mut out = String::new();
    for s in signals {
        let fields: Vec<String> = s.iter().map(|v| format!("{v}")).collect();
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    let mut f = fs::File::create(path)?;
    f.write_all(out.as_bytes())?;
    Ok(())
}
