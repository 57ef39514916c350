//! Ridge and lasso refitting of leaf-design coefficients by cyclic
//! coordinate descent.
//!
//! The objective is the unscaled penalized sum of squares
//!
//! ```text
//! ridge:  sum_i (y_i - phi_i' beta)^2 + lambda * sum_{k>=1} b_k^2
//! lasso:  sum_i (y_i - phi_i' beta)^2 + lambda * sum_{k>=1} |b_k|
//! ```
//!
//! with the intercept b_0 left unpenalized. No 1/n or 1/2 factor scales
//! the squared error, so lambda values are comparable across dataset
//! sizes only as labels, not as constants.
//!
//! Stationarity conditions used by the tests: with residual r = y - Phi
//! beta, every unpenalized coordinate satisfies Phi_k' r = 0; a ridge
//! coordinate satisfies 2 Phi_k' r = 2 lambda b_k; a nonzero lasso
//! coordinate satisfies 2 Phi_k' r = lambda sign(b_k), and a zero one
//! |2 Phi_k' r| <= lambda.

use serde::{Deserialize, Serialize};

use crate::encode::{Coefficients, SparseDesign};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RefitMethod {
    Ridge,
    Lasso,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefitSpec {
    pub method: RefitMethod,
    pub lambda: f64,
    /// Sweep stops when the largest coefficient change falls below this.
    pub tol: f64,
    pub max_sweeps: usize,
}

impl RefitSpec {
    pub fn new(method: RefitMethod, lambda: f64) -> Self {
        Self {
            method,
            lambda,
            tol: 1e-7,
            max_sweeps: 10_000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidParam(format!(
                "lambda must be finite and >= 0, got {}",
                self.lambda
            )));
        }
        if self.tol.is_nan() || self.tol <= 0.0 {
            return Err(Error::InvalidParam("tol must be > 0".into()));
        }
        if self.max_sweeps == 0 {
            return Err(Error::InvalidParam("max_sweeps must be >= 1".into()));
        }
        Ok(())
    }
}

/// Solver output. `converged == false` means the sweep budget ran out;
/// the coefficients are still the best (latest) iterate.
#[derive(Debug, Clone)]
pub struct RefitResult {
    pub method: RefitMethod,
    pub lambda: f64,
    pub coefficients: Coefficients,
    pub sweeps_used: usize,
    pub converged: bool,
    /// Penalized objective after each completed sweep.
    pub objective_trace: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RefitResultFile {
    method: RefitMethod,
    lambda: f64,
    intercept: f64,
    n_columns: usize,
    /// Nonzero penalized coefficients as (column index, value) pairs.
    coefficients: Vec<(usize, f64)>,
    sweeps_used: usize,
    converged: bool,
}

impl RefitResult {
    pub fn to_json(&self) -> String {
        let beta = &self.coefficients.beta;
        let file = RefitResultFile {
            method: self.method,
            lambda: self.lambda,
            intercept: beta[0],
            n_columns: beta.len() - 1,
            coefficients: beta
                .iter()
                .enumerate()
                .skip(1)
                .filter(|(_, v)| **v != 0.0)
                .map(|(k, v)| (k, *v))
                .collect(),
            sweeps_used: self.sweeps_used,
            converged: self.converged,
        };
        serde_json::to_string_pretty(&file).expect("refit result serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: RefitResultFile = serde_json::from_str(s)?;
        let mut beta = vec![0.0; file.n_columns + 1];
        beta[0] = file.intercept;
        for (k, v) in file.coefficients {
            if k == 0 || k > file.n_columns {
                return Err(Error::InvalidParam(format!(
                    "coefficient index {k} outside 1..={}",
                    file.n_columns
                )));
            }
            beta[k] = v;
        }
        Ok(RefitResult {
            method: file.method,
            lambda: file.lambda,
            coefficients: Coefficients { beta },
            sweeps_used: file.sweeps_used,
            converged: file.converged,
            objective_trace: Vec::new(),
        })
    }
}

fn soft_threshold(z: f64, t: f64) -> f64 {
    z.signum() * (z.abs() - t).max(0.0)
}

fn penalty(beta: &[f64], first_penalized: usize, method: RefitMethod) -> f64 {
    beta[first_penalized..]
        .iter()
        .map(|b| match method {
            RefitMethod::Ridge => b * b,
            RefitMethod::Lasso => b.abs(),
        })
        .sum()
}

/// Penalized objective for coefficients `beta` (index 0 unpenalized).
pub fn objective(design: &SparseDesign, y: &[f64], beta: &[f64], spec: &RefitSpec) -> f64 {
    let preds = design.matvec(beta);
    let sse: f64 = y
        .iter()
        .zip(&preds)
        .map(|(yi, pi)| (yi - pi) * (yi - pi))
        .sum();
    sse + spec.lambda * penalty(beta, 1, spec.method)
}

fn cd_solve(
    design: &SparseDesign,
    y: &[f64],
    spec: &RefitSpec,
    first_penalized: usize,
    start: Option<&[f64]>,
) -> Result<RefitResult> {
    spec.validate()?;
    let n = design.n_rows();
    let p1 = design.n_cols();
    if y.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} responses for {} design rows",
            y.len(),
            n
        )));
    }
    if n == 0 || p1 == 0 {
        return Err(Error::EmptyData);
    }
    let sq: Vec<f64> = (0..p1)
        .map(|k| design.column(k).iter().map(|&(_, v)| v * v).sum())
        .collect();
    let mut beta: Vec<f64> = match start {
        Some(b) => {
            if b.len() != p1 {
                return Err(Error::DimensionMismatch(format!(
                    "warm start has {} coefficients for {} columns",
                    b.len(),
                    p1
                )));
            }
            b.to_vec()
        }
        None => vec![0.0; p1],
    };
    let preds = design.matvec(&beta);
    let mut residual: Vec<f64> = y.iter().zip(&preds).map(|(yi, pi)| yi - pi).collect();

    let mut trace = Vec::new();
    let mut converged = false;
    let mut sweeps_used = 0;
    for _ in 0..spec.max_sweeps {
        sweeps_used += 1;
        let mut max_delta = 0.0f64;
        for k in 0..p1 {
            if sq[k] == 0.0 {
                beta[k] = 0.0;
                continue;
            }
            let col = design.column(k);
            let dot: f64 = col.iter().map(|&(row, v)| v * residual[row]).sum();
            let rho = dot + beta[k] * sq[k];
            let b_new = if k < first_penalized {
                rho / sq[k]
            } else {
                match spec.method {
                    RefitMethod::Ridge => rho / (sq[k] + spec.lambda),
                    RefitMethod::Lasso => soft_threshold(rho, spec.lambda / 2.0) / sq[k],
                }
            };
            let delta = b_new - beta[k];
            if delta != 0.0 {
                for &(row, v) in col {
                    residual[row] -= v * delta;
                }
                beta[k] = b_new;
                max_delta = max_delta.max(delta.abs());
            }
        }
        let sse: f64 = residual.iter().map(|r| r * r).sum();
        trace.push(sse + spec.lambda * penalty(&beta, first_penalized, spec.method));
        if max_delta < spec.tol {
            converged = true;
            break;
        }
    }
    Ok(RefitResult {
        method: spec.method,
        lambda: spec.lambda,
        coefficients: Coefficients { beta },
        sweeps_used,
        converged,
        objective_trace: trace,
    })
}

/// Minimize the penalized objective over a leaf design whose column 0 is
/// the all-ones intercept column; the intercept is not penalized.
pub fn refit(design: &SparseDesign, y: &[f64], spec: &RefitSpec) -> Result<RefitResult> {
    cd_solve(design, y, spec, 1, None)
}

/// Variant that penalizes every column, for designs without an
/// intercept column.
pub fn refit_penalize_all(
    design: &SparseDesign,
    y: &[f64],
    spec: &RefitSpec,
) -> Result<RefitResult> {
    cd_solve(design, y, spec, 0, None)
}

/// Warm-started solutions along a descending lambda sequence.
pub fn regularization_path(
    design: &SparseDesign,
    y: &[f64],
    method: RefitMethod,
    lambdas: &[f64],
    tol: f64,
    max_sweeps: usize,
) -> Result<Vec<RefitResult>> {
    if lambdas.is_empty() {
        return Err(Error::InvalidParam("lambda list is empty".into()));
    }
    if lambdas.windows(2).any(|w| w[1] > w[0]) {
        return Err(Error::InvalidParam(
            "lambdas must be sorted in descending order".into(),
        ));
    }
    let mut out = Vec::with_capacity(lambdas.len());
    let mut warm: Option<Vec<f64>> = None;
    for &lambda in lambdas {
        let spec = RefitSpec {
            method,
            lambda,
            tol,
            max_sweeps,
        };
        let result = cd_solve(design, y, &spec, 1, warm.as_deref())?;
        warm = Some(result.coefficients.beta.clone());
        out.push(result);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::distributions::Distribution;
    use rand_distr::StandardNormal;

    use crate::boosting::{fit_gbdt, GbdtParams};
    use crate::data::synth_square;
    use crate::encode::{build_encoder, original_coefficients};
    use crate::rng::rng_from_seed;
    use crate::tree::TreeParams;

    /// Dense design with an all-ones first column; returns (sparse view,
    /// dense row-major copy).
    fn random_design(n: usize, p1: usize, seed: u64) -> (SparseDesign, Vec<f64>) {
        let mut rng = rng_from_seed(seed);
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
        (SparseDesign::from_columns(n, columns).unwrap(), dense)
    }

    fn random_response(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = rng_from_seed(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    /// Gauss-Jordan solve of (X'X + lambda*D) beta = X'y where D is the
    /// identity with zeros at unpenalized indices. Independent of the
    /// coordinate-descent code.
    fn normal_equation_oracle(
        dense: &[f64],
        n: usize,
        p1: usize,
        y: &[f64],
        lambda: f64,
        first_penalized: usize,
    ) -> Vec<f64> {
        let mut a = vec![0.0; p1 * p1];
        let mut b = vec![0.0; p1];
        for j in 0..p1 {
            for k in 0..p1 {
                let mut s = 0.0;
                for i in 0..n {
                    s += dense[i * p1 + j] * dense[i * p1 + k];
                }
                a[j * p1 + k] = s;
            }
            if j >= first_penalized {
                a[j * p1 + j] += lambda;
            }
            b[j] = (0..n).map(|i| dense[i * p1 + j] * y[i]).sum();
        }
        // Gauss-Jordan elimination with partial pivoting.
        for col in 0..p1 {
            let pivot = (col..p1)
                .max_by(|&r1, &r2| {
                    a[r1 * p1 + col]
                        .abs()
                        .partial_cmp(&a[r2 * p1 + col].abs())
                        .unwrap()
                })
                .unwrap();
            if pivot != col {
                for k in 0..p1 {
                    a.swap(col * p1 + k, pivot * p1 + k);
                }
                b.swap(col, pivot);
            }
            let d = a[col * p1 + col];
            assert!(d.abs() > 1e-12, "oracle: singular system");
            for k in 0..p1 {
                a[col * p1 + k] /= d;
            }
            b[col] /= d;
            for r in 0..p1 {
                if r != col {
                    let f = a[r * p1 + col];
                    if f != 0.0 {
                        for k in 0..p1 {
                            a[r * p1 + k] -= f * a[col * p1 + k];
                        }
                        b[r] -= f * b[col];
                    }
                }
            }
        }
        b
    }

    fn tight(method: RefitMethod, lambda: f64) -> RefitSpec {
        RefitSpec {
            method,
            lambda,
            tol: 1e-12,
            max_sweeps: 100_000,
        }
    }

    #[test]
    fn unpenalized_refit_matches_normal_equations() {
        let (design, dense) = random_design(20, 5, 1);
        let y = random_response(20, 2);
        let oracle = normal_equation_oracle(&dense, 20, 5, &y, 0.0, 1);
        for method in [RefitMethod::Ridge, RefitMethod::Lasso] {
            let result = refit(&design, &y, &tight(method, 0.0)).unwrap();
            assert!(result.converged);
            for (k, (b, o)) in result.coefficients.beta.iter().zip(&oracle).enumerate() {
                assert!(
                    (b - o).abs() <= 1e-8,
                    "{method:?} coefficient {k}: {b} vs oracle {o}"
                );
            }
        }
    }

    #[test]
    fn ridge_matches_normal_equations_with_penalty() {
        let (design, dense) = random_design(30, 6, 3);
        let y = random_response(30, 4);
        let lambda = 3.7;
        let oracle = normal_equation_oracle(&dense, 30, 6, &y, lambda, 1);
        let result = refit(&design, &y, &tight(RefitMethod::Ridge, lambda)).unwrap();
        for (k, (b, o)) in result.coefficients.beta.iter().zip(&oracle).enumerate() {
            assert!((b - o).abs() <= 1e-8, "coefficient {k}");
        }
    }

    #[test]
    fn ridge_stationarity_residual_is_small() {
        let (design, dense) = random_design(40, 8, 5);
        let y = random_response(40, 6);
        let lambda = 2.25;
        let spec = RefitSpec::new(RefitMethod::Ridge, lambda);
        let result = refit(&design, &y, &spec).unwrap();
        let beta = &result.coefficients.beta;
        // Stationarity: X'X beta + lambda D beta - X'y = 0.
        let preds = design.matvec(beta);
        let mut xty_norm = 0.0f64;
        let mut res_norm = 0.0f64;
        for k in 0..8 {
            let xty: f64 = (0..40).map(|i| dense[i * 8 + k] * y[i]).sum();
            let xtp: f64 = (0..40).map(|i| dense[i * 8 + k] * preds[i]).sum();
            let pen = if k >= 1 { lambda * beta[k] } else { 0.0 };
            xty_norm += xty * xty;
            let r = xtp + pen - xty;
            res_norm += r * r;
        }
        assert!(
            res_norm.sqrt() <= 1e-6 * xty_norm.sqrt(),
            "stationarity residual {} vs scale {}",
            res_norm.sqrt(),
            xty_norm.sqrt()
        );
    }

    #[test]
    fn one_dimensional_lasso_matches_closed_form() {
        // Single standardized column, no intercept: the minimizer of
        // sum (y - x b)^2 + lambda |b| is soft(x'y, lambda/2) / x'x.
        let n = 25;
        let mut rng = rng_from_seed(7);
        let raw: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mean = raw.iter().sum::<f64>() / n as f64;
        let sd = (raw.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64).sqrt();
        let x: Vec<f64> = raw.iter().map(|v| (v - mean) / sd).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|xi| {
                let e: f64 = StandardNormal.sample(&mut rng);
                0.8 * xi + 0.3 * e
            })
            .collect();
        let design = SparseDesign::from_columns(
            n,
            vec![x.iter().enumerate().map(|(i, &v)| (i, v)).collect()],
        )
        .unwrap();
        let xty: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
        let xtx: f64 = x.iter().map(|a| a * a).sum();
        for lambda in [0.0, 0.5, 2.0 * xty.abs(), 4.0 * xty.abs()] {
            let expected = soft_threshold(xty, lambda / 2.0) / xtx;
            let result =
                refit_penalize_all(&design, &y, &tight(RefitMethod::Lasso, lambda)).unwrap();
            assert!(
                (result.coefficients.beta[0] - expected).abs() <= 1e-10,
                "lambda {lambda}: {} vs closed form {expected}",
                result.coefficients.beta[0]
            );
        }
    }

    #[test]
    fn huge_ridge_penalty_leaves_only_the_intercept() {
        let (design, _) = random_design(30, 5, 9);
        let y: Vec<f64> = random_response(30, 10).iter().map(|v| v + 4.0).collect();
        let result = refit(&design, &y, &tight(RefitMethod::Ridge, 1e12)).unwrap();
        let beta = &result.coefficients.beta;
        for (k, b) in beta.iter().enumerate().skip(1) {
            assert!(b.abs() < 1e-6, "coefficient {k} = {b}");
        }
        let mean = y.iter().sum::<f64>() / 30.0;
        assert!((beta[0] - mean).abs() < 1e-6, "{} vs mean {mean}", beta[0]);
    }

    #[test]
    fn hand_solved_identity_ridge() {
        // 2x2 identity design, both columns penalized, y = (2, 0),
        // lambda = 1: b_1 = 2/(1+1) = 1, b_2 = 0.
        let design = SparseDesign::from_columns(2, vec![vec![(0, 1.0)], vec![(1, 1.0)]]).unwrap();
        let y = [2.0, 0.0];
        let result = refit_penalize_all(&design, &y, &tight(RefitMethod::Ridge, 1.0)).unwrap();
        assert!((result.coefficients.beta[0] - 1.0).abs() < 1e-12);
        assert!(result.coefficients.beta[1].abs() < 1e-12);
    }

    #[test]
    fn lasso_kkt_conditions_hold() {
        let (design, dense) = random_design(50, 20, 11);
        let y: Vec<f64> = {
            let mut rng = rng_from_seed(12);
            (0..50)
                .map(|i| {
                    let x = &dense[i * 20..(i + 1) * 20];
                    let e: f64 = StandardNormal.sample(&mut rng);
                    2.0 * x[1] - 1.5 * x[2] + 0.5 * x[3] + e
                })
                .collect()
        };
        let lambda = 8.0;
        let result = refit(&design, &y, &tight(RefitMethod::Lasso, lambda)).unwrap();
        assert!(result.converged);
        let beta = &result.coefficients.beta;
        let preds = design.matvec(beta);
        let residual: Vec<f64> = y.iter().zip(&preds).map(|(a, b)| a - b).collect();
        let mut xty_max = 0.0f64;
        for k in 0..20 {
            let xty: f64 = (0..50).map(|i| dense[i * 20 + k] * y[i]).sum();
            xty_max = xty_max.max(xty.abs());
        }
        let scale = 1e-6 * (1.0 + lambda + xty_max);
        for k in 0..20 {
            let grad: f64 = 2.0
                * (0..50)
                    .map(|i| dense[i * 20 + k] * residual[i])
                    .sum::<f64>();
            if k == 0 {
                assert!(grad.abs() <= scale, "intercept gradient {grad}");
            } else if beta[k] != 0.0 {
                assert!(
                    (grad - lambda * beta[k].signum()).abs() <= scale,
                    "active column {k}: gradient {grad}, b {}",
                    beta[k]
                );
            } else {
                assert!(
                    grad.abs() <= lambda + scale,
                    "inactive column {k}: |gradient| {} vs lambda {lambda}",
                    grad.abs()
                );
            }
        }
        // The planted sparse signal should keep a few columns active.
        let active = beta[1..].iter().filter(|b| **b != 0.0).count();
        assert!((2..20).contains(&active), "active set size {active}");
    }

    #[test]
    fn objective_basics_and_monotone_descent() {
        let (design, _) = random_design(40, 7, 13);
        let y = random_response(40, 14);
        let spec = RefitSpec::new(RefitMethod::Lasso, 3.0);
        let zero = vec![0.0; 7];
        let sum_sq: f64 = y.iter().map(|v| v * v).sum();
        assert!((objective(&design, &y, &zero, &spec) - sum_sq).abs() < 1e-12);

        for method in [RefitMethod::Ridge, RefitMethod::Lasso] {
            let spec = RefitSpec::new(method, 3.0);
            let result = refit(&design, &y, &spec).unwrap();
            let trace = &result.objective_trace;
            assert_eq!(trace.len(), result.sweeps_used);
            for w in trace.windows(2) {
                assert!(
                    w[1] <= w[0] + 1e-10 * trace[0],
                    "{method:?}: objective rose {} -> {}",
                    w[0],
                    w[1]
                );
            }
            // Trace values match the independent objective computation.
            let direct = objective(&design, &y, &result.coefficients.beta, &spec);
            let last = *trace.last().unwrap();
            assert!(
                (direct - last).abs() <= 1e-9 * (1.0 + direct.abs()),
                "trace end {last} vs direct {direct}"
            );
        }
    }

    #[test]
    fn coordinate_perturbations_never_improve_the_optimum() {
        let (design, _) = random_design(30, 6, 15);
        let y = random_response(30, 16);
        for method in [RefitMethod::Ridge, RefitMethod::Lasso] {
            let spec = tight(method, 1.5);
            let result = refit(&design, &y, &spec).unwrap();
            let base = objective(&design, &y, &result.coefficients.beta, &spec);
            for k in 0..6 {
                for delta in [-1e-3, 1e-3] {
                    let mut probe = result.coefficients.beta.clone();
                    probe[k] += delta;
                    let moved = objective(&design, &y, &probe, &spec);
                    assert!(
                        moved >= base - 1e-12 * (1.0 + base.abs()),
                        "{method:?} coordinate {k} delta {delta}: {moved} < {base}"
                    );
                }
            }
        }
    }

    #[test]
    fn refit_beats_original_coefficients_on_its_own_objective() {
        let ds = synth_square(150, 20).unwrap();
        let model = fit_gbdt(
            &ds,
            &GbdtParams {
                n_estimators: 30,
                learning_rate: 0.1,
                base_score: None,
                tree: TreeParams {
                    max_depth: 3,
                    ..TreeParams::default()
                },
            },
        )
        .unwrap();
        let enc = build_encoder(&model, &ds).unwrap();
        let design = enc.encode_rows(&ds).unwrap();
        let orig = original_coefficients(&model, &enc).unwrap();
        for (method, lambda) in [(RefitMethod::Ridge, 0.5), (RefitMethod::Lasso, 0.3)] {
            let spec = RefitSpec::new(method, lambda);
            let refitted = refit(&design, ds.response(), &spec).unwrap();
            let ours = objective(&design, ds.response(), &refitted.coefficients.beta, &spec);
            let theirs = objective(&design, ds.response(), &orig.beta, &spec);
            assert!(
                ours <= theirs + 1e-9,
                "{method:?}: refit objective {ours} vs original {theirs}"
            );
        }
    }

    #[test]
    fn zero_column_coefficient_is_forced_to_zero() {
        // Column 2 never fires.
        let design = SparseDesign::from_columns(
            3,
            vec![
                vec![(0, 1.0), (1, 1.0), (2, 1.0)],
                vec![(0, 1.0), (2, 2.0)],
                vec![],
            ],
        )
        .unwrap();
        let y = [1.0, 2.0, 3.0];
        for method in [RefitMethod::Ridge, RefitMethod::Lasso] {
            let result = refit(&design, &y, &tight(method, 0.4)).unwrap();
            assert_eq!(result.coefficients.beta[2], 0.0);
            assert!(result.converged);
        }
    }

    #[test]
    fn sweep_budget_exhaustion_is_flagged_not_fatal() {
        let (design, _) = random_design(40, 10, 17);
        let y = random_response(40, 18);
        let spec = RefitSpec {
            method: RefitMethod::Ridge,
            lambda: 0.1,
            tol: 1e-13,
            max_sweeps: 1,
        };
        let result = refit(&design, &y, &spec).unwrap();
        assert!(!result.converged);
        assert_eq!(result.sweeps_used, 1);
        assert!(result.coefficients.beta.iter().all(|b| b.is_finite()));
    }

    #[test]
    fn lasso_path_active_set_shrinks_with_lambda() {
        let (design, dense) = random_design(50, 20, 19);
        let y: Vec<f64> = {
            let mut rng = rng_from_seed(20);
            (0..50)
                .map(|i| {
                    let x = &dense[i * 20..(i + 1) * 20];
                    let e: f64 = StandardNormal.sample(&mut rng);
                    3.0 * x[1] - 2.0 * x[4] + x[7] - 0.5 * x[11] + e
                })
                .collect()
        };
        let lambdas = [200.0, 100.0, 50.0, 20.0, 8.0, 3.0, 1.0, 0.3];
        let path =
            regularization_path(&design, &y, RefitMethod::Lasso, &lambdas, 1e-10, 100_000).unwrap();
        let counts: Vec<usize> = path
            .iter()
            .map(|r| {
                r.coefficients.beta[1..]
                    .iter()
                    .filter(|b| b.abs() > 1e-6)
                    .count()
            })
            .collect();
        // Descending lambda order, so active sets may only grow.
        for w in counts.windows(2) {
            assert!(w[0] <= w[1], "active set shrank along the path: {counts:?}");
        }
        assert!(*counts.last().unwrap() >= 4);
    }

    #[test]
    fn ridge_path_norm_grows_as_lambda_falls() {
        let (design, _) = random_design(40, 8, 21);
        let y = random_response(40, 22);
        let lambdas = [100.0, 10.0, 1.0, 0.1, 0.0];
        let path =
            regularization_path(&design, &y, RefitMethod::Ridge, &lambdas, 1e-10, 100_000).unwrap();
        let norms: Vec<f64> = path
            .iter()
            .map(|r| {
                r.coefficients.beta[1..]
                    .iter()
                    .map(|b| b * b)
                    .sum::<f64>()
                    .sqrt()
            })
            .collect();
        for w in norms.windows(2) {
            assert!(
                w[0] <= w[1] + 1e-10,
                "penalized norm fell as lambda dropped: {norms:?}"
            );
        }
    }

    #[test]
    fn singleton_path_equals_direct_refit() {
        let (design, _) = random_design(25, 5, 23);
        let y = random_response(25, 24);
        let spec = RefitSpec::new(RefitMethod::Lasso, 2.0);
        let direct = refit(&design, &y, &spec).unwrap();
        let path = regularization_path(
            &design,
            &y,
            RefitMethod::Lasso,
            &[2.0],
            spec.tol,
            spec.max_sweeps,
        )
        .unwrap();
        assert_eq!(path.len(), 1);
        assert_eq!(path[0].coefficients.beta, direct.coefficients.beta);
    }

    #[test]
    fn path_rejects_ascending_lambdas() {
        let (design, _) = random_design(10, 3, 25);
        let y = random_response(10, 26);
        assert!(
            regularization_path(&design, &y, RefitMethod::Ridge, &[1.0, 2.0], 1e-7, 100).is_err()
        );
        assert!(regularization_path(&design, &y, RefitMethod::Ridge, &[], 1e-7, 100).is_err());
    }

    #[test]
    fn result_json_round_trips() {
        let (design, _) = random_design(30, 6, 27);
        let y = random_response(30, 28);
        let spec = RefitSpec::new(RefitMethod::Lasso, 5.0);
        let result = refit(&design, &y, &spec).unwrap();
        let js = result.to_json();
        let v: serde_json::Value = serde_json::from_str(&js).unwrap();
        assert_eq!(v["method"], "lasso");
        assert_eq!(v["lambda"], 5.0);
        assert!(v["converged"].as_bool().unwrap());
        let back = RefitResult::from_json(&js).unwrap();
        assert_eq!(back.coefficients.beta, result.coefficients.beta);
        assert_eq!(back.sweeps_used, result.sweeps_used);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let (design, _) = random_design(10, 3, 29);
        let y = random_response(10, 30);
        let mut spec = RefitSpec::new(RefitMethod::Ridge, -1.0);
        assert!(refit(&design, &y, &spec).is_err());
        spec = RefitSpec::new(RefitMethod::Ridge, 1.0);
        spec.tol = 0.0;
        assert!(refit(&design, &y, &spec).is_err());
        spec = RefitSpec::new(RefitMethod::Ridge, 1.0);
        spec.max_sweeps = 0;
        assert!(refit(&design, &y, &spec).is_err());
        let spec = RefitSpec::new(RefitMethod::Ridge, 1.0);
        assert!(refit(&design, &y[..5], &spec).is_err());
    }

    #[test]
    fn warm_start_speeds_up_neighboring_lambdas() {
        let (design, _) = random_design(60, 15, 31);
        let y = random_response(60, 32);
        let cold = refit(&design, &y, &RefitSpec::new(RefitMethod::Ridge, 1.0)).unwrap();
        let path = regularization_path(&design, &y, RefitMethod::Ridge, &[1.2, 1.0], 1e-7, 10_000)
            .unwrap();
        assert!(
            path[1].sweeps_used <= cold.sweeps_used,
            "warm {} vs cold {}",
            path[1].sweeps_used,
            cold.sweeps_used
        );
    }
}
