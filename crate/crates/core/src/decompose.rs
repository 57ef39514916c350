//! Bootstrap estimation of the perturbed-risk decomposition.
//!
//! A fitting pipeline is trained on B bootstrap resamples of the
//! training set. Writing m(x) for the across-fit mean prediction, y for
//! the observed test response, and x~ for a noisy copy of a test row,
//! the perturbed risk mean((y - F_b(x~))^2) splits into
//!
//! * bias^2 + irreducible: mean over rows of (y - m(x))^2,
//! * variance:             mean over rows and fits of (F_b(x) - m(x))^2,
//! * perturbation:         mean over rows, fits, and noise draws of
//!   (F_b(x~) - F_b(x))^2.
//!
//! The three estimates do not sum to the directly measured perturbed
//! risk exactly — the perturbation enters through the same fitted model,
//! so the independence behind the expansion is violated — and the
//! shortfall is reported as `sum_gap` rather than hidden.
//!
//! `bias_split` further separates the bias term on synthetic data with
//! known noiseless truth, against reference coefficients over one fixed
//! leaf design.

use serde::{Deserialize, Serialize};

use crate::boosting::{fit_gbdt, staged_predict, GbdtParams};
use crate::data::{perturb, Dataset, PerturbationSpec};
use crate::encode::{build_encoder, original_coefficients, Coefficients, LeafEncoder};
use crate::error::{Error, Result};
use crate::refit::{refit, regularization_path, RefitMethod, RefitSpec};
use crate::rng::derive_seed;

/// One trained model, reduced to what risk estimation needs: the
/// ability to predict on any dataset.
pub enum FittedModel {
    /// A leaf design with coefficients (an ensemble's own leaf values or
    /// a regularized refit of them).
    Linearized {
        encoder: LeafEncoder,
        beta: Coefficients,
    },
    /// A constant predictor.
    Constant { value: f64 },
}

impl FittedModel {
    pub fn predict_dataset(&self, ds: &Dataset) -> Result<Vec<f64>> {
        match self {
            FittedModel::Linearized { encoder, beta } => {
                Ok(encoder.encode_rows(ds)?.matvec(&beta.beta))
            }
            FittedModel::Constant { value } => Ok(vec![*value; ds.n_rows()]),
        }
    }
}

/// A model-fitting procedure that is deterministic given its seed.
pub trait Pipeline {
    fn fit(&self, train: &Dataset, seed: u64) -> Result<FittedModel>;
}

/// Boosted ensemble used with its own leaf coefficients.
pub struct GbdtPipeline {
    pub params: GbdtParams,
}

impl Pipeline for GbdtPipeline {
    fn fit(&self, train: &Dataset, _seed: u64) -> Result<FittedModel> {
        let model = fit_gbdt(train, &self.params)?;
        let encoder = build_encoder(&model, train)?;
        let beta = original_coefficients(&model, &encoder)?;
        Ok(FittedModel::Linearized { encoder, beta })
    }
}

/// Boosted ensemble whose leaf coefficients are refit with a penalty.
pub struct RefitPipeline {
    pub gbdt: GbdtParams,
    pub spec: RefitSpec,
}

impl Pipeline for RefitPipeline {
    fn fit(&self, train: &Dataset, _seed: u64) -> Result<FittedModel> {
        let model = fit_gbdt(train, &self.gbdt)?;
        let encoder = build_encoder(&model, train)?;
        let design = encoder.encode_rows(train)?;
        let result = refit(&design, train.response(), &self.spec)?;
        Ok(FittedModel::Linearized {
            encoder,
            beta: result.coefficients,
        })
    }
}

/// Predicts the training-response mean.
pub struct MeanPipeline;

impl Pipeline for MeanPipeline {
    fn fit(&self, train: &Dataset, _seed: u64) -> Result<FittedModel> {
        let n = train.n_rows() as f64;
        Ok(FittedModel::Constant {
            value: train.response().iter().sum::<f64>() / n,
        })
    }
}

/// Ignores the data entirely; useful as a zero-variance baseline.
pub struct ConstantPipeline {
    pub value: f64,
}

impl Pipeline for ConstantPipeline {
    fn fit(&self, _train: &Dataset, _seed: u64) -> Result<FittedModel> {
        Ok(FittedModel::Constant { value: self.value })
    }
}

/// Estimated decomposition terms plus bookkeeping. All term fields are
/// means of squares and therefore non-negative.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RiskReport {
    pub bias_sq_plus_irreducible: f64,
    pub variance: f64,
    pub perturbation: f64,
    /// Sample MSE measured directly on perturbed test data.
    pub direct_risk: f64,
    /// The same MSE per perturbation repeat, for dispersion estimates.
    pub direct_risk_by_repeat: Vec<f64>,
    /// direct_risk minus the three-term sum.
    pub sum_gap: f64,
    /// Bootstrap fits that succeeded and entered the estimates.
    pub bootstrap_b: usize,
    /// Resamples skipped because the pipeline failed on them.
    pub failed_fits: usize,
    pub perturb_r: usize,
    /// Derived bootstrap seeds followed by perturbation seeds.
    pub seeds: Vec<u64>,
}

impl RiskReport {
    pub fn term_sum(&self) -> f64 {
        self.bias_sq_plus_irreducible + self.variance + self.perturbation
    }
}

fn boot_seed(base: u64, b: usize) -> u64 {
    derive_seed(derive_seed(base, 1), b as u64)
}

fn pert_seed(base: u64, r: usize) -> u64 {
    derive_seed(derive_seed(base, 2), r as u64)
}

fn perturbed_copies(
    test: &Dataset,
    reference_std: &[f64],
    spec: &PerturbationSpec,
) -> Result<Vec<Dataset>> {
    (0..spec.repeats)
        .map(|r| {
            let draw = PerturbationSpec::new(spec.sigma_fraction, pert_seed(spec.seed, r), 1);
            perturb(test, reference_std, &draw)
        })
        .collect()
}

/// Shared aggregation: clean predictions per fit, plus accumulated
/// perturbation/direct sums, into a report.
struct Accumulator {
    clean: Vec<Vec<f64>>,
    pert_sq_sum: f64,
    direct_sum_by_r: Vec<f64>,
}

impl Accumulator {
    fn new(repeats: usize) -> Self {
        Self {
            clean: Vec::new(),
            pert_sq_sum: 0.0,
            direct_sum_by_r: vec![0.0; repeats],
        }
    }

    /// Record one fit's clean predictions and its predictions on each
    /// perturbed copy.
    fn add_fit(&mut self, clean: Vec<f64>, perturbed: &[Vec<f64>], y: &[f64]) {
        for (r, pp) in perturbed.iter().enumerate() {
            for j in 0..y.len() {
                let d = pp[j] - clean[j];
                self.pert_sq_sum += d * d;
                let e = y[j] - pp[j];
                self.direct_sum_by_r[r] += e * e;
            }
        }
        self.clean.push(clean);
    }

    fn finalize(
        self,
        y: &[f64],
        failed: usize,
        requested_b: usize,
        repeats: usize,
        seeds: Vec<u64>,
    ) -> Result<RiskReport> {
        let b_eff = self.clean.len();
        if b_eff < 2 {
            return Err(Error::TooFewFits {
                failed,
                total: requested_b,
            });
        }
        let n = y.len();
        let mut mean_pred = vec![0.0; n];
        for fit in &self.clean {
            for j in 0..n {
                mean_pred[j] += fit[j];
            }
        }
        for m in mean_pred.iter_mut() {
            *m /= b_eff as f64;
        }
        let mut variance = 0.0;
        for fit in &self.clean {
            for j in 0..n {
                let d = fit[j] - mean_pred[j];
                variance += d * d;
            }
        }
        variance /= (b_eff * n) as f64;
        let bias_sq_plus_irreducible = y
            .iter()
            .zip(&mean_pred)
            .map(|(yi, mi)| (yi - mi) * (yi - mi))
            .sum::<f64>()
            / n as f64;
        let perturbation = self.pert_sq_sum / (b_eff * repeats * n) as f64;
        let direct_risk_by_repeat: Vec<f64> = self
            .direct_sum_by_r
            .iter()
            .map(|s| s / (b_eff * n) as f64)
            .collect();
        let direct_risk = direct_risk_by_repeat.iter().sum::<f64>() / repeats as f64;
        let sum_gap = direct_risk - (bias_sq_plus_irreducible + variance + perturbation);
        Ok(RiskReport {
            bias_sq_plus_irreducible,
            variance,
            perturbation,
            direct_risk,
            direct_risk_by_repeat,
            sum_gap,
            bootstrap_b: b_eff,
            failed_fits: failed,
            perturb_r: repeats,
            seeds,
        })
    }
}

fn validate_inputs(
    train: &Dataset,
    test: &Dataset,
    spec: &PerturbationSpec,
    b_boot: usize,
) -> Result<()> {
    if b_boot < 2 {
        return Err(Error::InvalidParam(format!(
            "need at least 2 bootstrap fits, got {b_boot}"
        )));
    }
    if spec.repeats < 1 {
        return Err(Error::InvalidParam(
            "perturbation repeats must be >= 1".into(),
        ));
    }
    if train.n_features() != test.n_features() {
        return Err(Error::DimensionMismatch(format!(
            "train has {} features, test has {}",
            train.n_features(),
            test.n_features()
        )));
    }
    Ok(())
}

/// Estimate the decomposition for one pipeline. Resamples on which the
/// pipeline fails are skipped and counted; at least two fits must
/// survive.
pub fn estimate_risk_decomposition(
    train: &Dataset,
    test: &Dataset,
    pipeline: &dyn Pipeline,
    spec: &PerturbationSpec,
    b_boot: usize,
) -> Result<RiskReport> {
    validate_inputs(train, test, spec, b_boot)?;
    let perturbed = perturbed_copies(test, train.column_std(), spec)?;
    let y = test.response();

    let mut acc = Accumulator::new(spec.repeats);
    let mut seeds = Vec::new();
    let mut failed = 0;
    for b in 0..b_boot {
        let seed = boot_seed(spec.seed, b);
        let resample = train.bootstrap_resample(seed);
        let fitted = match pipeline.fit(&resample, seed) {
            Ok(f) => f,
            Err(_) => {
                failed += 1;
                continue;
            }
        };
        let clean = fitted.predict_dataset(test)?;
        let pert_preds: Vec<Vec<f64>> = perturbed
            .iter()
            .map(|pds| fitted.predict_dataset(pds))
            .collect::<Result<_>>()?;
        acc.add_fit(clean, &pert_preds, y);
        seeds.push(seed);
    }
    seeds.extend((0..spec.repeats).map(|r| pert_seed(spec.seed, r)));
    acc.finalize(y, failed, b_boot, spec.repeats, seeds)
}

/// A family of nested or related pipelines swept over one index.
pub enum PipelineFamily {
    /// Truncations of a single boosted fit after 'stage' trees; staged
    /// prediction makes the whole sweep cost one fit per resample.
    BoostingRounds {
        params: GbdtParams,
        stages: Vec<usize>,
    },
    /// Penalized refits of one boosted fit along a descending lambda
    /// sequence, warm-started.
    RefitLambdas {
        gbdt: GbdtParams,
        method: RefitMethod,
        lambdas: Vec<f64>,
        tol: f64,
        max_sweeps: usize,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepEntry {
    /// The swept quantity: boosting rounds or lambda.
    pub index: f64,
    pub report: RiskReport,
}

/// Predictions for every sweep member on one dataset: [member][row].
type MemberRows = Vec<Vec<f64>>;
/// The same per perturbation repeat: [member][repeat][row].
type MemberRepeatRows = Vec<Vec<Vec<f64>>>;

/// Decomposition per family member, sharing bootstrap resamples and
/// perturbation draws across the whole sweep so members are directly
/// comparable.
pub fn decomposition_sweep(
    train: &Dataset,
    test: &Dataset,
    family: &PipelineFamily,
    spec: &PerturbationSpec,
    b_boot: usize,
) -> Result<Vec<SweepEntry>> {
    validate_inputs(train, test, spec, b_boot)?;
    let perturbed = perturbed_copies(test, train.column_std(), spec)?;
    let y = test.response();

    let indices: Vec<f64> = match family {
        PipelineFamily::BoostingRounds { params, stages } => {
            if stages.is_empty() {
                return Err(Error::InvalidParam("stage list is empty".into()));
            }
            if stages.iter().any(|&m| m > params.n_estimators) {
                return Err(Error::InvalidParam(format!(
                    "stages exceed n_estimators = {}",
                    params.n_estimators
                )));
            }
            params.validate()?;
            stages.iter().map(|&m| m as f64).collect()
        }
        PipelineFamily::RefitLambdas { lambdas, gbdt, .. } => {
            if lambdas.is_empty() {
                return Err(Error::InvalidParam("lambda list is empty".into()));
            }
            gbdt.validate()?;
            lambdas.clone()
        }
    };
    let n_members = indices.len();
    let mut accs: Vec<Accumulator> = (0..n_members)
        .map(|_| Accumulator::new(spec.repeats))
        .collect();
    let mut seeds = Vec::new();
    let mut failed = 0;

    for b in 0..b_boot {
        let seed = boot_seed(spec.seed, b);
        let resample = train.bootstrap_resample(seed);
        // Per-member predictions for this fit: clean is [member][row],
        // perturbed is [member][repeat][row].
        let fit_result: Result<(MemberRows, MemberRepeatRows)> = match family {
            PipelineFamily::BoostingRounds { params, stages } => {
                (|| {
                    let model = fit_gbdt(&resample, params)?;
                    let stage_rows = |ds: &Dataset| -> MemberRows {
                        let mut out = vec![Vec::with_capacity(ds.n_rows()); n_members];
                        for j in 0..ds.n_rows() {
                            let staged = staged_predict(&model, ds.row(j));
                            for (row, &m) in out.iter_mut().zip(stages) {
                                row.push(staged[m]);
                            }
                        }
                        out
                    };
                    let clean = stage_rows(test);
                    let pert: Vec<MemberRows> = perturbed.iter().map(&stage_rows).collect();
                    // Reorder perturbed to [member][repeat][row].
                    let pert_by_member: MemberRepeatRows = (0..n_members)
                        .map(|s| pert.iter().map(|p| p[s].clone()).collect())
                        .collect();
                    Ok((clean, pert_by_member))
                })()
            }
            PipelineFamily::RefitLambdas {
                gbdt,
                method,
                lambdas,
                tol,
                max_sweeps,
            } => (|| {
                let model = fit_gbdt(&resample, gbdt)?;
                let encoder = build_encoder(&model, &resample)?;
                let design = encoder.encode_rows(&resample)?;
                let path = regularization_path(
                    &design,
                    resample.response(),
                    *method,
                    lambdas,
                    *tol,
                    *max_sweeps,
                )?;
                let design_test = encoder.encode_rows(test)?;
                let clean: MemberRows = path
                    .iter()
                    .map(|r| design_test.matvec(&r.coefficients.beta))
                    .collect();
                let mut pert_by_member: MemberRepeatRows =
                    vec![Vec::with_capacity(perturbed.len()); n_members];
                for pds in &perturbed {
                    let design_pert = encoder.encode_rows(pds)?;
                    for (s, r) in path.iter().enumerate() {
                        pert_by_member[s].push(design_pert.matvec(&r.coefficients.beta));
                    }
                }
                Ok((clean, pert_by_member))
            })(),
        };
        match fit_result {
            Ok((clean, pert_by_member)) => {
                for (s, clean_s) in clean.into_iter().enumerate() {
                    accs[s].add_fit(clean_s, &pert_by_member[s], y);
                }
                seeds.push(seed);
            }
            Err(_) => failed += 1,
        }
    }
    seeds.extend((0..spec.repeats).map(|r| pert_seed(spec.seed, r)));

    indices
        .into_iter()
        .zip(accs)
        .map(|(index, acc)| {
            Ok(SweepEntry {
                index,
                report: acc.finalize(y, failed, b_boot, spec.repeats, seeds.clone())?,
            })
        })
        .collect()
}

/// The bias term separated into misspecification and in-class parts,
/// over one fixed leaf design shared by every fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BiasSplitReport {
    /// mean over test rows of (f(x) - Phi(x)' beta_0)^2.
    pub misspecification_bias: f64,
    /// mean over test rows of (Phi(x)' beta_0 - Phi(x)' mean(beta_hat))^2.
    pub in_class_bias: f64,
    pub reference_beta: Coefficients,
}

/// Reference coefficients: a ridge refit over the given encoder on a
/// (typically large) sample, standing in for the best-in-class linear
/// model.
pub fn ridge_reference(
    encoder: &LeafEncoder,
    sample: &Dataset,
    lambda: f64,
) -> Result<Coefficients> {
    let design = encoder.encode_rows(sample)?;
    let spec = RefitSpec::new(RefitMethod::Ridge, lambda);
    Ok(refit(&design, sample.response(), &spec)?.coefficients)
}

/// Split the bias over a fixed design. Every bootstrap resample of
/// `train` is re-encoded with `encoder` and its coefficients refit per
/// `refit_spec`; their average is compared against `reference` on test
/// rows, and `reference` against the test set's noiseless truth.
pub fn bias_split(
    train: &Dataset,
    test: &Dataset,
    encoder: &LeafEncoder,
    refit_spec: &RefitSpec,
    reference: &Coefficients,
    b_boot: usize,
    seed: u64,
) -> Result<BiasSplitReport> {
    let truth = test
        .truth()
        .ok_or_else(|| Error::InvalidParam("test data carries no noiseless truth".into()))?;
    if b_boot < 2 {
        return Err(Error::InvalidParam(format!(
            "need at least 2 bootstrap fits, got {b_boot}"
        )));
    }
    let p1 = encoder.n_columns() + 1;
    if reference.beta.len() != p1 {
        return Err(Error::DimensionMismatch(format!(
            "reference has {} coefficients for {} design columns",
            reference.beta.len(),
            p1
        )));
    }
    let mut mean_beta = vec![0.0; p1];
    for b in 0..b_boot {
        let resample = train.bootstrap_resample(boot_seed(seed, b));
        let design = encoder.encode_rows(&resample)?;
        let result = refit(&design, resample.response(), refit_spec)?;
        for (m, v) in mean_beta.iter_mut().zip(&result.coefficients.beta) {
            *m += v;
        }
    }
    for m in mean_beta.iter_mut() {
        *m /= b_boot as f64;
    }
    let design_test = encoder.encode_rows(test)?;
    let pred_ref = design_test.matvec(&reference.beta);
    let pred_mean = design_test.matvec(&mean_beta);
    let n = test.n_rows() as f64;
    let misspecification_bias = truth
        .iter()
        .zip(&pred_ref)
        .map(|(f, p)| (f - p) * (f - p))
        .sum::<f64>()
        / n;
    let in_class_bias = pred_ref
        .iter()
        .zip(&pred_mean)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n;
    Ok(BiasSplitReport {
        misspecification_bias,
        in_class_bias,
        reference_beta: Coefficients { beta: mean_beta },
    })
}
