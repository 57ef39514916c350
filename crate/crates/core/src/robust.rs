//! Worst-case design perturbations and their regularization equivalents.
//!
//! For a linear model y ~ Phi beta, the adversary picks a perturbation
//! Delta inside an uncertainty set and the robust objective is
//! max ||y - (Phi + Delta) beta||_2. Three sets are supported:
//!
//! * per-column budgets ||Delta_i||_2 <= c_i, where the maximum is
//!   ||y - Phi beta||_2 + sum_i c_i |beta_i| (an L1 penalty);
//! * a global spectral budget ||Delta||_2 <= c ||beta||_2, and
//! * per-column budgets ||Delta_i||_2 <= c |beta_i|,
//!
//! both of which attain ||y - Phi beta||_2 + c ||beta||_2^2 (an L2
//! penalty). The attaining matrix is rank one: with unit residual
//! direction u, its i-th column is -c beta_i u, making Delta beta =
//! -c ||beta||^2 u so the perturbed residual aligns with u and the
//! norms add. Note the i-th column scales by beta_i itself, not
//! |beta_i|: with mixed signs the absolute-value variant fails to
//! reach the bound.
//!
//! `verify_theorem1` stress-tests all of this on random instances:
//! sampled feasible perturbations never beat the closed form, the
//! construction attains it, and minimizing the robust objective agrees
//! with minimizing the penalized form.

use rand::distributions::Distribution;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed};

/// Residuals smaller than this leave the unit direction u undefined;
/// the worst-case matrix is then reported as zero.
const ZERO_RESIDUAL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum UncertaintySet {
    /// Independent column budgets ||Delta_i||_2 <= c_i.
    PerColumnC { c: Vec<f64> },
    /// Spectral budget ||Delta||_2 <= c * ||beta||_2.
    GlobalBetaScaled { c: f64 },
    /// Column budgets ||Delta_i||_2 <= c * |beta_i|.
    PerColumnBetaScaled { c: f64 },
}

impl UncertaintySet {
    fn validate(&self, p: usize) -> Result<()> {
        match self {
            UncertaintySet::PerColumnC { c } => {
                if c.len() != p {
                    return Err(Error::DimensionMismatch(format!(
                        "{} column budgets for {p} columns",
                        c.len()
                    )));
                }
                if c.iter().any(|v| !v.is_finite() || *v < 0.0) {
                    return Err(Error::InvalidParam("column budgets must be >= 0".into()));
                }
            }
            UncertaintySet::GlobalBetaScaled { c } | UncertaintySet::PerColumnBetaScaled { c } => {
                if !c.is_finite() || *c < 0.0 {
                    return Err(Error::InvalidParam(format!(
                        "uncertainty scale must be finite and >= 0, got {c}"
                    )));
                }
            }
        }
        Ok(())
    }
}

fn matvec(a: &[f64], n: usize, p: usize, x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for i in 0..n {
        let row = &a[i * p..(i + 1) * p];
        out[i] = row.iter().zip(x).map(|(u, v)| u * v).sum();
    }
    out
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn residual(phi: &[f64], n: usize, p: usize, y: &[f64], beta: &[f64]) -> Vec<f64> {
    let preds = matvec(phi, n, p, beta);
    y.iter().zip(&preds).map(|(a, b)| a - b).collect()
}

fn check_shapes(phi: &[f64], n: usize, y: &[f64], beta: &[f64]) -> Result<usize> {
    let p = beta.len();
    if n == 0 || p == 0 || phi.len() != n * p || y.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "design {}x{p} with {} cells and {} responses",
            n,
            phi.len(),
            y.len()
        )));
    }
    Ok(p)
}

/// Largest singular value by power iteration on A'A (deterministic
/// start, tolerance 1e-10, at most 1000 iterations).
pub fn spectral_norm(a: &[f64], n: usize, p: usize) -> f64 {
    assert_eq!(a.len(), n * p, "matrix shape mismatch");
    if a.iter().all(|v| *v == 0.0) {
        return 0.0;
    }
    let mut best = 0.0f64;
    // A couple of restarts guard against a start vector orthogonal to
    // the leading singular direction.
    for restart in 0..3 {
        let mut v: Vec<f64> = if restart == 0 {
            vec![1.0 / (p as f64).sqrt(); p]
        } else {
            let mut rng = rng_from_seed(restart as u64);
            let raw: Vec<f64> = (0..p).map(|_| StandardNormal.sample(&mut rng)).collect();
            let nv = norm2(&raw);
            raw.iter().map(|x| x / nv).collect()
        };
        let mut sigma = 0.0f64;
        for _ in 0..1000 {
            let av = matvec(a, n, p, &v);
            let mut atav = vec![0.0; p];
            for i in 0..n {
                for j in 0..p {
                    atav[j] += a[i * p + j] * av[i];
                }
            }
            let norm = norm2(&atav);
            if norm == 0.0 {
                sigma = 0.0;
                break;
            }
            for j in 0..p {
                v[j] = atav[j] / norm;
            }
            let new_sigma = norm2(&matvec(a, n, p, &v));
            if (new_sigma - sigma).abs() <= 1e-10 * new_sigma.max(1.0) {
                sigma = new_sigma;
                break;
            }
            sigma = new_sigma;
        }
        best = best.max(sigma);
    }
    best
}

/// The adversary's matrix: rank one, aligned with the residual
/// direction, meeting the set's budget with equality. Returns the zero
/// matrix when the residual is (numerically) zero.
pub fn worst_case_perturbation(
    phi: &[f64],
    n: usize,
    y: &[f64],
    beta: &[f64],
    set: &UncertaintySet,
) -> Result<Vec<f64>> {
    let p = check_shapes(phi, n, y, beta)?;
    set.validate(p)?;
    let r = residual(phi, n, p, y, beta);
    let r_norm = norm2(&r);
    let mut delta = vec![0.0; n * p];
    if r_norm <= ZERO_RESIDUAL {
        return Ok(delta);
    }
    let u: Vec<f64> = r.iter().map(|v| v / r_norm).collect();
    for i in 0..n {
        for j in 0..p {
            let scale = match set {
                // sgn(0) resolves to +1 so the budget is met with
                // equality even for zero coefficients (their columns
                // cannot affect the objective).
                UncertaintySet::PerColumnC { c } => -c[j] * beta[j].signum(),
                UncertaintySet::GlobalBetaScaled { c }
                | UncertaintySet::PerColumnBetaScaled { c } => -c * beta[j],
            };
            delta[i * p + j] = scale * u[i];
        }
    }
    Ok(delta)
}

/// The exact maximum of ||y - (Phi + Delta) beta||_2 over the set.
pub fn robust_objective(
    phi: &[f64],
    n: usize,
    y: &[f64],
    beta: &[f64],
    set: &UncertaintySet,
) -> Result<f64> {
    let p = check_shapes(phi, n, y, beta)?;
    set.validate(p)?;
    let r_norm = norm2(&residual(phi, n, p, y, beta));
    let penalty = match set {
        UncertaintySet::PerColumnC { c } => c.iter().zip(beta).map(|(ci, bi)| ci * bi.abs()).sum(),
        UncertaintySet::GlobalBetaScaled { c } | UncertaintySet::PerColumnBetaScaled { c } => {
            c * beta.iter().map(|b| b * b).sum::<f64>()
        }
    };
    Ok(r_norm + penalty)
}

/// Rescale a candidate matrix onto (just inside) the set's boundary.
fn project_to_set(delta: &mut [f64], n: usize, p: usize, beta: &[f64], set: &UncertaintySet) {
    match set {
        UncertaintySet::PerColumnC { c } => {
            for j in 0..p {
                let col_norm = (0..n)
                    .map(|i| delta[i * p + j] * delta[i * p + j])
                    .sum::<f64>()
                    .sqrt();
                if col_norm > 0.0 {
                    let s = c[j] / col_norm;
                    for i in 0..n {
                        delta[i * p + j] *= s;
                    }
                }
            }
        }
        UncertaintySet::PerColumnBetaScaled { c } => {
            for j in 0..p {
                let col_norm = (0..n)
                    .map(|i| delta[i * p + j] * delta[i * p + j])
                    .sum::<f64>()
                    .sqrt();
                if col_norm > 0.0 {
                    let s = c * beta[j].abs() / col_norm;
                    for i in 0..n {
                        delta[i * p + j] *= s;
                    }
                }
            }
        }
        UncertaintySet::GlobalBetaScaled { c } => {
            let bound = c * norm2(beta);
            let sigma = spectral_norm(delta, n, p);
            if sigma > 0.0 {
                // Shrink slightly below the boundary so power-iteration
                // error cannot push the sample outside the set.
                let s = bound / sigma * (1.0 - 1e-8);
                for v in delta.iter_mut() {
                    *v *= s;
                }
            }
        }
    }
}

/// Stochastic lower bound on the robust objective: the best of `samples`
/// random boundary perturbations, a short projected-gradient ascent from
/// the best of them, and the closed-form construction itself.
pub fn robust_objective_sampled(
    phi: &[f64],
    n: usize,
    y: &[f64],
    beta: &[f64],
    set: &UncertaintySet,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    let p = check_shapes(phi, n, y, beta)?;
    set.validate(p)?;
    let r = residual(phi, n, p, y, beta);
    let value_of = |delta: &[f64]| -> f64 {
        let db = matvec(delta, n, p, beta);
        let v: Vec<f64> = r.iter().zip(&db).map(|(a, b)| a - b).collect();
        norm2(&v)
    };

    let mut rng = rng_from_seed(seed);
    let mut best_value = value_of(&vec![0.0; n * p]);
    let mut best_delta = vec![0.0; n * p];
    for _ in 0..samples {
        let mut delta: Vec<f64> = (0..n * p)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        project_to_set(&mut delta, n, p, beta, set);
        let v = value_of(&delta);
        if v > best_value {
            best_value = v;
            best_delta = delta;
        }
    }
    // Projected-gradient refinement from the best random start. The
    // ascent direction of ||r - Delta beta|| in Delta is -vhat beta'.
    let step = 0.25;
    for _ in 0..30 {
        let db = matvec(&best_delta, n, p, beta);
        let v: Vec<f64> = r.iter().zip(&db).map(|(a, b)| a - b).collect();
        let vn = norm2(&v);
        if vn == 0.0 {
            break;
        }
        let mut candidate = best_delta.clone();
        for i in 0..n {
            for j in 0..p {
                candidate[i * p + j] -= step * v[i] / vn * beta[j];
            }
        }
        project_to_set(&mut candidate, n, p, beta, set);
        let cv = value_of(&candidate);
        if cv > best_value {
            best_value = cv;
            best_delta = candidate;
        } else {
            break;
        }
    }
    // The analytic construction is always a candidate.
    let constructed = worst_case_perturbation(phi, n, y, beta, set)?;
    Ok(best_value.max(value_of(&constructed)))
}

/// Golden-section minimization of a unimodal function on [a, b].
fn golden_section<F: FnMut(f64) -> f64>(mut f: F, mut a: f64, mut b: f64, tol: f64) -> f64 {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while b - a > tol {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = f(x2);
        }
    }
    0.5 * (a + b)
}

/// Cyclic coordinate-wise golden-section minimizer for smooth convex
/// objectives in a handful of dimensions.
fn coordinate_minimize<F: Fn(&[f64]) -> f64>(
    f: F,
    p: usize,
    half_width: f64,
    sweep_tol: f64,
    max_sweeps: usize,
) -> Vec<f64> {
    let mut beta = vec![0.0; p];
    for _ in 0..max_sweeps {
        let mut max_move = 0.0f64;
        for j in 0..p {
            let current = beta[j];
            let mut probe = beta.clone();
            let best = golden_section(
                |t| {
                    probe[j] = t;
                    f(&probe)
                },
                current - half_width,
                current + half_width,
                1e-9 * (1.0 + half_width),
            );
            beta[j] = best;
            max_move = max_move.max((best - current).abs());
        }
        if max_move < sweep_tol {
            break;
        }
    }
    beta
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Theorem1Report {
    pub trials: usize,
    pub failures: usize,
    pub max_identity_residual: f64,
    pub failure_details: Vec<String>,
}

impl Theorem1Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Randomized verification of the robust/ridge equivalence.
///
/// Each trial draws a small random instance (1 <= p <= 5, p+2 <= n <= 12,
/// c in {0.1, 1, 10}) under one of the two beta-scaled sets and checks:
/// (a) none of 10^4 sampled feasible perturbations pushes the residual
/// past the closed form, (b) the constructed worst case attains the
/// closed form to 1e-10, and (c) minimizing the sampled-free robust
/// objective through the construction agrees coordinate-wise (1e-4)
/// with minimizing ||y - Phi beta||_2 + c ||beta||_2^2 directly.
pub fn verify_theorem1(trials: usize, seed: u64) -> Theorem1Report {
    const SAMPLES_PER_TRIAL: usize = 10_000;
    let mut failures = Vec::new();
    let mut max_identity_residual = 0.0f64;
    for trial in 0..trials {
        let mut rng = rng_from_seed(derive_seed(seed, trial as u64));
        let p = rng.gen_range(1..=5usize);
        let n = rng.gen_range(p + 2..=12usize);
        let phi: Vec<f64> = (0..n * p)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let y: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let beta: Vec<f64> = (0..p).map(|_| StandardNormal.sample(&mut rng)).collect();
        let c = [0.1, 1.0, 10.0][rng.gen_range(0..3usize)];
        let set = if trial % 2 == 0 {
            UncertaintySet::GlobalBetaScaled { c }
        } else {
            UncertaintySet::PerColumnBetaScaled { c }
        };

        let closed = robust_objective(&phi, n, &y, &beta, &set).expect("valid instance");

        // (a) sampled feasible perturbations stay below the closed form.
        let sampled = robust_objective_sampled(
            &phi,
            n,
            &y,
            &beta,
            &set,
            SAMPLES_PER_TRIAL,
            derive_seed(seed, 0x5a17 ^ trial as u64),
        )
        .expect("valid instance");
        if sampled > closed + 1e-10 {
            failures.push(format!(
                "trial {trial}: sampled objective {sampled:.12e} exceeds closed form {closed:.12e}"
            ));
        }

        // (b) the construction attains the closed form.
        let delta = worst_case_perturbation(&phi, n, &y, &beta, &set).expect("valid instance");
        let perturbed: Vec<f64> = (0..n * p).map(|i| phi[i] + delta[i]).collect();
        let attained = norm2(&residual(&perturbed, n, p, &y, &beta));
        let identity_residual = (attained - closed).abs();
        max_identity_residual = max_identity_residual.max(identity_residual);
        if identity_residual > 1e-10 {
            failures.push(format!(
                "trial {trial}: construction attains {attained:.12e}, closed form {closed:.12e}"
            ));
        }

        // (c) minimizer agreement between the two problem forms.
        let y_norm = norm2(&y);
        let half_width = 1.0 + 2.0 * (y_norm / c).sqrt();
        let via_construction = |b: &[f64]| -> f64 {
            let d = worst_case_perturbation(&phi, n, &y, b, &set).expect("valid instance");
            let pert: Vec<f64> = (0..n * p).map(|i| phi[i] + d[i]).collect();
            norm2(&residual(&pert, n, p, &y, b))
        };
        let penalized = |b: &[f64]| -> f64 {
            norm2(&residual(&phi, n, p, &y, b)) + c * b.iter().map(|v| v * v).sum::<f64>()
        };
        let min_a = coordinate_minimize(via_construction, p, half_width, 1e-7, 300);
        let min_b = coordinate_minimize(penalized, p, half_width, 1e-7, 300);
        for j in 0..p {
            if (min_a[j] - min_b[j]).abs() > 1e-4 {
                failures.push(format!(
                    "trial {trial}: minimizers disagree at coordinate {j}: {} vs {}",
                    min_a[j], min_b[j]
                ));
                break;
            }
        }
    }
    Theorem1Report {
        trials,
        failures: failures.len(),
        max_identity_residual,
        failure_details: failures,
    }
}
