//! Closed-form reference estimators: per-node least squares and pooled
//! least squares over the cached sufficient statistics.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{NodeDataset, SignalVector};

const MAX_CONDITION: f64 = 1e12;

/// Symmetric positive-definite solve with an explicit conditioning gate.
fn spd_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let eigen = a.clone().symmetric_eigen();
    let mut min = f64::INFINITY;
    let mut max: f64 = 0.0;
    for &ev in eigen.eigenvalues.iter() {
        min = min.min(ev);
        max = max.max(ev.abs());
    }
    let cond = if min > 0.0 { max / min } else { f64::INFINITY };
    if cond.is_nan() || cond >= MAX_CONDITION {
        return Err(Error::SingularGram(cond));
    }
    let chol = a.clone().cholesky().ok_or(Error::SingularGram(cond))?;
    Ok(chol.solve(b))
}

/// Separate least squares: solves `G beta = c` on one node.
pub fn sls(ds: &NodeDataset) -> Result<SignalVector> {
    spd_solve(&ds.gram, &ds.xy)
}

/// Pooled least squares: solves the aggregated normal equations
/// `(sum_j n_j G_j) beta = sum_j n_j c_j`; the single pooled direction
/// stands in for every node at evaluation time.
pub fn pls(datasets: &[NodeDataset]) -> Result<SignalVector> {
    if datasets.is_empty() {
        return Err(Error::MismatchedNodes("pls over zero nodes".into()));
    }
    let p = datasets[0].p();
    let mut gram = DMatrix::zeros(p, p);
    let mut rhs = DVector::zeros(p);
    for ds in datasets {
        let n = ds.n() as f64;
        gram += &ds.gram * n;
        rhs += &ds.xy * n;
    }
    spd_solve(&gram, &rhs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{gen_covariance, gen_measurements};
    use crate::model::build_stats;
    use crate::rng::rng_from;
    use nalgebra::dvector;

    #[test]
    fn sls_hand_solved_p1() {
        let x = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
        let y = dvector![1.0, -1.0];
        let ds = build_stats(x, y).unwrap();
        let beta = sls(&ds).unwrap();
        assert!((beta[0] - (-0.2)).abs() < 1e-14);
    }

    #[test]
    fn sls_exact_on_noiseless_orthonormal_design() {
        // X = I stacked twice, y = sign(x_iᵀ beta*) with |entries| matching.
        let p = 4;
        let mut x = DMatrix::zeros(p, 2 * p);
        for i in 0..p {
            x[(i, i)] = 1.0;
            x[(i, p + i)] = -1.0;
        }
        let truth = dvector![1.0, -1.0, 1.0, 1.0];
        let y = DVector::from_fn(2 * p, |i, _| {
            if x.column(i).dot(&truth) >= 0.0 {
                1.0
            } else {
                -1.0
            }
        });
        let ds = build_stats(x, y).unwrap();
        let beta = sls(&ds).unwrap();
        assert!((&beta - &truth).norm() < 1e-10);
    }

    #[test]
    fn sls_normal_equation_residual() {
        let (_, lf) = gen_covariance(5, 0.3);
        let truth = dvector![0.5, -0.2, 0.1, 0.9, -0.4];
        let mut rng = rng_from(21, &[1]);
        let ds = gen_measurements(&truth, 60, &lf, 0.1, 0.75, &mut rng).unwrap();
        let beta = sls(&ds).unwrap();
        assert!((&ds.gram * &beta - &ds.xy).norm() <= 1e-10);
        // Residual orthogonality in the raw data form.
        let resid = &ds.y - ds.x.transpose() * &beta;
        assert!((&ds.x * resid).norm() / ds.n() as f64 <= 1e-10);
    }

    #[test]
    fn sls_singular_gram() {
        let x = DMatrix::from_column_slice(2, 2, &[1.0, 0.0, 2.0, 0.0]);
        let ds = build_stats(x, dvector![1.0, -1.0]).unwrap();
        assert!(matches!(sls(&ds), Err(Error::SingularGram(_))));
    }

    #[test]
    fn pls_degenerate_cases() {
        let (_, lf) = gen_covariance(4, 0.3);
        let truth = dvector![1.0, 0.5, -0.5, 0.25];
        let mut rng = rng_from(22, &[1]);
        let ds = gen_measurements(&truth, 40, &lf, 0.1, 0.75, &mut rng).unwrap();
        let single = pls(std::slice::from_ref(&ds)).unwrap();
        assert!((&single - sls(&ds).unwrap()).norm() < 1e-12);
        let twice = pls(&[ds.clone(), ds.clone()]).unwrap();
        assert!((&twice - &single).norm() < 1e-12);
    }

    #[test]
    fn pls_matches_concatenated_raw_data() {
        let (_, lf) = gen_covariance(4, 0.3);
        let truth = dvector![1.0, 0.5, -0.5, 0.25];
        let mut rng = rng_from(23, &[1]);
        let parts: Vec<_> = (0..3)
            .map(|_| gen_measurements(&truth, 30 + 10, &lf, 0.1, 0.75, &mut rng).unwrap())
            .collect();
        let pooled = pls(&parts).unwrap();

        let total: usize = parts.iter().map(|d| d.n()).sum();
        let mut x = DMatrix::zeros(4, total);
        let mut y = DVector::zeros(total);
        let mut col = 0;
        for part in &parts {
            for i in 0..part.n() {
                x.set_column(col, &part.x.column(i));
                y[col] = part.y[i];
                col += 1;
            }
        }
        let dense = sls(&build_stats(x, y).unwrap()).unwrap();
        assert!((&pooled - &dense).norm() < 1e-10);
    }

    #[test]
    fn pls_permutation_invariant() {
        let (_, lf) = gen_covariance(3, 0.3);
        let truth = dvector![1.0, -0.5, 0.5];
        let mut rng = rng_from(24, &[1]);
        let a = gen_measurements(&truth, 20, &lf, 0.1, 0.75, &mut rng).unwrap();
        let b = gen_measurements(&truth, 35, &lf, 0.2, 0.125, &mut rng).unwrap();
        let fwd = pls(&[a.clone(), b.clone()]).unwrap();
        let rev = pls(&[b, a]).unwrap();
        assert!((fwd - rev).norm() < 1e-12);
    }
}
