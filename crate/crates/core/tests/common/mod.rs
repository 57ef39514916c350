//! Shared fixtures for integration tests: synthetic regression
//! benchmarks with realistic shape, and an independent dense linear
//! solver to check the sparse coordinate-descent path against.

use leafline::data::Dataset;
use leafline::encode::SparseDesign;
use leafline::rng::{derive_seed, rng_from_seed};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Center and rescale the response to unit sample variance so MSE
/// numbers are comparable across generators.
fn standardize(mut y: Vec<f64>) -> Vec<f64> {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    for v in y.iter_mut() {
        *v = (*v - mean) / std;
    }
    y
}

/// Five uniform predictors driving a smooth response with an
/// interaction, curvature, and linear parts plus Gaussian noise --
/// a stand-in for a mid-size tabular benchmark.
pub fn airfoil_like(n: usize, seed: u64) -> Dataset {
    let q = 5;
    let mut rng = rng_from_seed(derive_seed(seed, 0xA1));
    let mut features = Vec::with_capacity(n * q);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let x: Vec<f64> = (0..q).map(|_| rng.gen_range(0.0..1.0)).collect();
        let eps: f64 = StandardNormal.sample(&mut rng);
        y.push(
            10.0 * (std::f64::consts::PI * x[0] * x[1]).sin()
                + 20.0 * (x[2] - 0.5) * (x[2] - 0.5)
                + 10.0 * x[3]
                + 5.0 * x[4]
                + eps,
        );
        features.extend(x);
    }
    let names = (0..q).map(|j| format!("x{j}")).collect();
    Dataset::new(features, n, q, standardize(y), names).expect("valid synthetic data")
}

/// Four uniform predictors with stronger interactions and opposing
/// curvature -- a second, differently shaped benchmark.
pub fn chp_like(n: usize, seed: u64) -> Dataset {
    let q = 4;
    let mut rng = rng_from_seed(derive_seed(seed, 0xC4));
    let mut features = Vec::with_capacity(n * q);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let x: Vec<f64> = (0..q).map(|_| rng.gen_range(0.0..1.0)).collect();
        let eps: f64 = StandardNormal.sample(&mut rng);
        y.push(
            6.0 * x[0] * x[1] + 3.0 * (x[2] - 0.4) * (x[2] - 0.4) - 4.0 * x[3] * x[3]
                + 2.0 * (std::f64::consts::PI * x[0] * x[3]).sin()
                + eps,
        );
        features.extend(x);
    }
    let names = (0..q).map(|j| format!("x{j}")).collect();
    Dataset::new(features, n, q, standardize(y), names).expect("valid synthetic data")
}

/// Random dense design whose first column is the intercept, as both a
/// flat row-major matrix and the sparse form the solvers consume.
pub fn random_design(n: usize, p1: usize, seed: u64) -> (Vec<f64>, SparseDesign) {
    let mut rng = rng_from_seed(derive_seed(seed, 0xD5));
    let mut dense = vec![0.0; n * p1];
    for i in 0..n {
        dense[i * p1] = 1.0;
        for k in 1..p1 {
            dense[i * p1 + k] = StandardNormal.sample(&mut rng);
        }
    }
    let columns: Vec<Vec<(usize, f64)>> = (0..p1)
        .map(|k| (0..n).map(|i| (i, dense[i * p1 + k])).collect())
        .collect();
    let sparse = SparseDesign::from_columns(n, columns).expect("valid design");
    (dense, sparse)
}

/// Ridge solution via the normal equations (X'X + lambda*D) b = X'y with
/// D zero on the intercept, solved by Gauss-Jordan elimination with
/// partial pivoting. Independent of the iterative solver under test.
pub fn solve_normal_equations(
    dense: &[f64],
    n: usize,
    p1: usize,
    y: &[f64],
    lambda: f64,
) -> Vec<f64> {
    let mut a = vec![0.0; p1 * (p1 + 1)];
    for r in 0..p1 {
        for c in 0..p1 {
            let mut dot = 0.0;
            for i in 0..n {
                dot += dense[i * p1 + r] * dense[i * p1 + c];
            }
            if r == c && r > 0 {
                dot += lambda;
            }
            a[r * (p1 + 1) + c] = dot;
        }
        let mut rhs = 0.0;
        for i in 0..n {
            rhs += dense[i * p1 + r] * y[i];
        }
        a[r * (p1 + 1) + p1] = rhs;
    }
    let w = p1 + 1;
    for col in 0..p1 {
        let pivot = (col..p1)
            .max_by(|&x, &z| a[x * w + col].abs().total_cmp(&a[z * w + col].abs()))
            .unwrap();
        assert!(a[pivot * w + col].abs() > 1e-12, "singular system");
        for c in 0..w {
            a.swap(col * w + c, pivot * w + c);
        }
        let d = a[col * w + col];
        for c in 0..w {
            a[col * w + c] /= d;
        }
        for r in 0..p1 {
            if r != col {
                let f = a[r * w + col];
                for c in 0..w {
                    a[r * w + c] -= f * a[col * w + c];
                }
            }
        }
    }
    (0..p1).map(|r| a[r * w + p1]).collect()
}

/// Gaussian response over the design for solver tests.
pub fn random_response(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng_from_seed(derive_seed(seed, 0xE6));
    (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
}
