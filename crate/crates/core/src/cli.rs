//! Command-line orchestration: train/encode/refit/evaluate pipelines,
//! risk-decomposition runs and sweeps, the equivalence verifier, and
//! full reproduction of a benchmark table from one JSON config.
//!
//! Exit codes: 0 success, 2 validation/configuration error, 3 numerical
//! non-convergence (or verifier failures).

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::boosting::{fit_gbdt, predict, GbdtModel, GbdtParams};
use crate::data::{load_csv, perturb, split, synth_square, Dataset, PerturbationSpec};
use crate::decompose::{
    decomposition_sweep, estimate_risk_decomposition, GbdtPipeline, Pipeline, PipelineFamily,
    RefitPipeline, SweepEntry,
};
use crate::encode::{build_encoder, original_coefficients, LeafEncoder};
use crate::error::{Error, Result};
use crate::refit::{refit, regularization_path, RefitMethod, RefitResult, RefitSpec};
use crate::rng::derive_seed;
use crate::robust::verify_theorem1;
use crate::tree::TreeParams;

// ---------------------------------------------------------------------
// Presets
// ---------------------------------------------------------------------

/// Tuned starting configuration for one benchmark dataset: boosting
/// parameters plus small/medium/large penalty levels per refit method.
/// Lasso levels are quoted in the common mean-squared (per-sample)
/// convention and are rescaled to this crate's sum-of-squares objective
/// by `2 * n_train` when resolved against data.
#[derive(Debug, Clone)]
pub struct Preset {
    pub name: &'static str,
    pub gbdt: GbdtParams,
    pub ridge: [f64; 3],
    pub lasso_alpha: [f64; 3],
}

pub fn preset(name: &str) -> Option<Preset> {
    let p = |n_estimators, learning_rate, max_depth, reg_alpha, reg_lambda, gamma| GbdtParams {
        n_estimators,
        learning_rate,
        base_score: None,
        tree: TreeParams {
            max_depth,
            min_samples_leaf: 1,
            gamma,
            reg_lambda,
            reg_alpha,
        },
    };
    match name {
        "airfoil" => Some(Preset {
            name: "airfoil",
            gbdt: p(500, 0.15, 7, 0.3, 0.2, 0.0),
            ridge: [0.1, 1.0, 10.0],
            lasso_alpha: [6e-5, 8e-5, 1e-4],
        }),
        "chp" => Some(Preset {
            name: "chp",
            gbdt: p(600, 0.1, 6, 1.75, 1.0, 0.0),
            ridge: [100.0, 400.0, 1000.0],
            lasso_alpha: [4e-4, 7e-4, 2e-3],
        }),
        "bike" => Some(Preset {
            name: "bike",
            gbdt: p(500, 0.07, 6, 1.55, 0.5, 0.07),
            ridge: [200.0, 400.0, 600.0],
            lasso_alpha: [2e-4, 3e-4, 4e-4],
        }),
        _ => None,
    }
}

/// The same ensemble shape with default (untuned) regularization:
/// no L1 or split penalty and the customary L2 of 1 on leaf weights.
pub fn plain_gbdt_variant(params: &GbdtParams) -> GbdtParams {
    GbdtParams {
        tree: TreeParams {
            reg_alpha: 0.0,
            reg_lambda: 1.0,
            gamma: 0.0,
            ..params.tree
        },
        ..*params
    }
}

// ---------------------------------------------------------------------
// Experiment configuration
// ---------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DatasetConfig {
    File { path: PathBuf, target: String },
    Synthetic { synthetic: String, n: usize },
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SplitConfig {
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train_fraction: default_train_fraction(),
            seed: 0,
        }
    }
}

fn default_train_fraction() -> f64 {
    0.8
}

/// Boosting parameters as configured: an optional named preset with
/// field-level overrides on top.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GbdtConfig {
    pub preset: Option<String>,
    pub n_estimators: Option<usize>,
    pub learning_rate: Option<f64>,
    pub base_score: Option<f64>,
    pub max_depth: Option<usize>,
    pub min_samples_leaf: Option<usize>,
    pub gamma: Option<f64>,
    pub reg_lambda: Option<f64>,
    pub reg_alpha: Option<f64>,
}

impl GbdtConfig {
    pub fn resolve(&self) -> Result<GbdtParams> {
        let mut params = match &self.preset {
            Some(name) => {
                preset(name)
                    .ok_or_else(|| {
                        Error::InvalidParam(format!(
                            "unknown preset {name:?}; expected airfoil, chp, or bike"
                        ))
                    })?
                    .gbdt
            }
            None => GbdtParams {
                n_estimators: 100,
                learning_rate: 0.1,
                base_score: None,
                tree: TreeParams::default(),
            },
        };
        if let Some(v) = self.n_estimators {
            params.n_estimators = v;
        }
        if let Some(v) = self.learning_rate {
            params.learning_rate = v;
        }
        if self.base_score.is_some() {
            params.base_score = self.base_score;
        }
        if let Some(v) = self.max_depth {
            params.tree.max_depth = v;
        }
        if let Some(v) = self.min_samples_leaf {
            params.tree.min_samples_leaf = v;
        }
        if let Some(v) = self.gamma {
            params.tree.gamma = v;
        }
        if let Some(v) = self.reg_lambda {
            params.tree.reg_lambda = v;
        }
        if let Some(v) = self.reg_alpha {
            params.tree.reg_alpha = v;
        }
        params.validate()?;
        Ok(params)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefitConfig {
    pub name: Option<String>,
    pub method: RefitMethod,
    pub lambda: f64,
    pub tol: Option<f64>,
    pub max_sweeps: Option<usize>,
}

impl RefitConfig {
    fn spec(&self) -> RefitSpec {
        let mut spec = RefitSpec::new(self.method, self.lambda);
        if let Some(t) = self.tol {
            spec.tol = t;
        }
        if let Some(s) = self.max_sweeps {
            spec.max_sweeps = s;
        }
        spec
    }

    fn display_name(&self) -> String {
        self.name.clone().unwrap_or_else(|| {
            let method = match self.method {
                RefitMethod::Ridge => "Ridge",
                RefitMethod::Lasso => "Lasso",
            };
            format!("OHE_{method}_{}", self.lambda)
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub gbdt: GbdtConfig,
    /// When absent, the preset's small/medium/large ridge and lasso
    /// levels are used.
    #[serde(default)]
    pub refits: Option<Vec<RefitConfig>>,
    #[serde(default = "default_perturbations")]
    pub perturbations: Vec<f64>,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default = "default_bootstrap_b", alias = "bootstrap_B")]
    pub bootstrap_b: usize,
    pub output_dir: PathBuf,
}

fn default_perturbations() -> Vec<f64> {
    vec![0.0, 0.02, 0.05]
}

fn default_repeats() -> usize {
    5
}

fn default_bootstrap_b() -> usize {
    20
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(s)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.split.train_fraction > 0.0 && self.split.train_fraction < 1.0) {
            return Err(Error::InvalidParam(format!(
                "train_fraction must lie in (0, 1), got {}",
                self.split.train_fraction
            )));
        }
        if self.perturbations.is_empty()
            || self
                .perturbations
                .iter()
                .any(|s| !(s.is_finite() && *s >= 0.0))
        {
            return Err(Error::InvalidParam(
                "perturbations must be a non-empty list of finite fractions >= 0".into(),
            ));
        }
        if self.repeats < 1 {
            return Err(Error::InvalidParam("repeats must be >= 1".into()));
        }
        if self.bootstrap_b < 2 {
            return Err(Error::InvalidParam("bootstrap_b must be >= 2".into()));
        }
        if let DatasetConfig::Synthetic { synthetic, n } = &self.dataset {
            if synthetic != "square" {
                return Err(Error::InvalidParam(format!(
                    "unknown synthetic dataset {synthetic:?}; only \"square\" is available"
                )));
            }
            if *n < 10 {
                return Err(Error::InvalidParam("synthetic n must be >= 10".into()));
            }
        }
        Ok(())
    }

    pub fn load_dataset(&self) -> Result<Dataset> {
        match &self.dataset {
            DatasetConfig::File { path, target } => load_csv(path, target),
            DatasetConfig::Synthetic { n, .. } => synth_square(*n, derive_seed(self.split.seed, 4)),
        }
    }

    /// The refit lineup: explicit entries, or the preset's three ridge
    /// levels and three lasso levels (lasso rescaled by 2 * n_train).
    pub fn resolved_refits(&self, n_train: usize) -> Result<Vec<(String, RefitSpec)>> {
        if let Some(list) = &self.refits {
            return Ok(list.iter().map(|c| (c.display_name(), c.spec())).collect());
        }
        let name = self.gbdt.preset.as_deref().ok_or_else(|| {
            Error::InvalidParam("no refits configured and no preset to take defaults from".into())
        })?;
        let preset =
            preset(name).ok_or_else(|| Error::InvalidParam(format!("unknown preset {name:?}")))?;
        let mut out = Vec::new();
        for (label, lambda) in ["s", "m", "l"].iter().zip(preset.ridge) {
            out.push((
                format!("OHE_Ridge_{label}"),
                RefitSpec::new(RefitMethod::Ridge, lambda),
            ));
        }
        for (label, alpha) in ["s", "m", "l"].iter().zip(preset.lasso_alpha) {
            out.push((
                format!("OHE_Lasso_{label}"),
                RefitSpec::new(RefitMethod::Lasso, 2.0 * n_train as f64 * alpha),
            ));
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------------
// Evaluation and the result table
// ---------------------------------------------------------------------

enum Predictor<'a> {
    Trees(&'a GbdtModel),
    Linear {
        encoder: &'a LeafEncoder,
        beta: &'a [f64],
    },
}

impl Predictor<'_> {
    fn predict(&self, ds: &Dataset) -> Result<Vec<f64>> {
        match self {
            Predictor::Trees(model) => Ok((0..ds.n_rows())
                .map(|i| predict(model, ds.row(i)))
                .collect()),
            Predictor::Linear { encoder, beta } => {
                if beta.len() != encoder.n_columns() + 1 {
                    return Err(Error::DimensionMismatch(format!(
                        "{} coefficients for {} design columns",
                        beta.len(),
                        encoder.n_columns() + 1
                    )));
                }
                Ok(encoder.encode_rows(ds)?.matvec(beta))
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResultRow {
    pub model: String,
    pub sigma_fraction: f64,
    pub test_mse: f64,
    pub perturbation_term: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
}

impl ResultTable {
    pub fn cell(&self, model: &str, sigma_fraction: f64) -> Option<&ResultRow> {
        self.rows
            .iter()
            .find(|r| r.model == model && r.sigma_fraction == sigma_fraction)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("model,sigma_fraction,test_mse,perturbation_term\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.model, r.sigma_fraction, r.test_mse, r.perturbation_term
            ));
        }
        out
    }
}

fn mean_sq_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

/// Mean test MSE and mean perturbation term across `repeats` noise
/// draws, for each noise scale. Draw r reuses one seed across scales so
/// scales differ only in magnitude, never in direction.
fn evaluate_predictor(
    predictor: &Predictor,
    test: &Dataset,
    reference_std: &[f64],
    sigma_fractions: &[f64],
    repeats: usize,
    seed: u64,
) -> Result<Vec<(f64, f64, f64)>> {
    let clean = predictor.predict(test)?;
    let y = test.response();
    let mut out = Vec::new();
    for &sigma in sigma_fractions {
        let mut mse = 0.0;
        let mut pert = 0.0;
        for r in 0..repeats {
            let spec = PerturbationSpec::new(sigma, derive_seed(seed, r as u64), 1);
            let noisy = perturb(test, reference_std, &spec)?;
            let preds = predictor.predict(&noisy)?;
            mse += mean_sq_diff(y, &preds);
            pert += mean_sq_diff(&clean, &preds);
        }
        out.push((sigma, mse / repeats as f64, pert / repeats as f64));
    }
    Ok(out)
}

// ---------------------------------------------------------------------
// Full pipeline
// ---------------------------------------------------------------------

pub struct PipelineOutput {
    pub table: ResultTable,
    /// Names of refit models whose solver hit the sweep budget.
    pub non_converged: Vec<String>,
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() {
                c.to_ascii_lowercase()
            } else {
                '_'
            }
        })
        .collect()
}

/// Fit, encode, refit, and evaluate every model under every noise scale
/// on an already-loaded dataset. With an output directory, writes model
/// JSON, the training design matrix, the encoder map, coefficient
/// files, and the result-table CSV.
pub fn run_pipeline_on(
    ds: &Dataset,
    config: &ExperimentConfig,
    write_artifacts: bool,
) -> Result<PipelineOutput> {
    config.validate()?;
    let (train, test) = split(ds, config.split.train_fraction, config.split.seed)?;
    let tuned = config.gbdt.resolve()?;
    let plain = plain_gbdt_variant(&tuned);

    let xgb = fit_gbdt(&train, &plain)?;
    let xgb_reg = fit_gbdt(&train, &tuned)?;
    let encoder = build_encoder(&xgb, &train)?;
    let design = encoder.encode_rows(&train)?;
    let beta_orig = original_coefficients(&xgb, &encoder)?;

    let refits = config.resolved_refits(train.n_rows())?;
    let mut fitted: Vec<(String, RefitResult)> = Vec::with_capacity(refits.len());
    // Warm-start within each method over descending lambda, then restore
    // the configured order.
    for method in [RefitMethod::Ridge, RefitMethod::Lasso] {
        let mut group: Vec<(usize, &(String, RefitSpec))> = refits
            .iter()
            .enumerate()
            .filter(|(_, (_, s))| s.method == method)
            .collect();
        if group.is_empty() {
            continue;
        }
        group.sort_by(|a, b| b.1 .1.lambda.total_cmp(&a.1 .1.lambda));
        let lambdas: Vec<f64> = group.iter().map(|(_, (_, s))| s.lambda).collect();
        let uniform = group.iter().all(|(_, (_, s))| {
            s.tol == group[0].1 .1.tol && s.max_sweeps == group[0].1 .1.max_sweeps
        });
        let strictly_descending = lambdas.windows(2).all(|w| w[0] > w[1]);
        if uniform && strictly_descending {
            let spec0 = group[0].1 .1;
            let path = regularization_path(
                &design,
                train.response(),
                method,
                &lambdas,
                spec0.tol,
                spec0.max_sweeps,
            )?;
            for ((_, (name, _)), result) in group.iter().zip(path) {
                fitted.push((name.clone(), result));
            }
        } else {
            for (_, (name, spec)) in &group {
                fitted.push((name.clone(), refit(&design, train.response(), spec)?));
            }
        }
    }
    fitted.sort_by_key(|(name, _)| {
        refits
            .iter()
            .position(|(n, _)| n == name)
            .expect("fitted model came from the refit list")
    });
    let non_converged: Vec<String> = fitted
        .iter()
        .filter(|(_, r)| !r.converged)
        .map(|(n, _)| n.clone())
        .collect();

    let eval_seed = derive_seed(config.split.seed, 3);
    let reference_std = train.column_std().to_vec();
    let mut table = ResultTable::default();
    let mut add_rows = |name: &str, predictor: &Predictor| -> Result<()> {
        for (sigma, mse, pert) in evaluate_predictor(
            predictor,
            &test,
            &reference_std,
            &config.perturbations,
            config.repeats,
            eval_seed,
        )? {
            table.rows.push(ResultRow {
                model: name.to_string(),
                sigma_fraction: sigma,
                test_mse: mse,
                perturbation_term: pert,
            });
        }
        Ok(())
    };
    add_rows("XGB", &Predictor::Trees(&xgb))?;
    add_rows("XGB_reg", &Predictor::Trees(&xgb_reg))?;
    for (name, result) in &fitted {
        add_rows(
            name,
            &Predictor::Linear {
                encoder: &encoder,
                beta: &result.coefficients.beta,
            },
        )?;
    }

    if write_artifacts {
        let dir = &config.output_dir;
        fs::create_dir_all(dir)?;
        fs::write(dir.join("xgb_model.json"), xgb.to_json())?;
        fs::write(dir.join("xgb_reg_model.json"), xgb_reg.to_json())?;
        fs::write(dir.join("train_design.mtx"), design.to_matrix_market())?;
        fs::write(dir.join("encoder_map.json"), encoder.map_json())?;
        fs::write(
            dir.join("beta_xgb.json"),
            serde_json::to_string_pretty(&beta_orig).expect("coefficients serialize"),
        )?;
        for (name, result) in &fitted {
            fs::write(
                dir.join(format!("beta_{}.json", sanitize(name))),
                result.to_json(),
            )?;
        }
        fs::write(dir.join("result_table.csv"), table.to_csv())?;
    }
    Ok(PipelineOutput {
        table,
        non_converged,
    })
}

pub fn run_pipeline(config: &ExperimentConfig) -> Result<PipelineOutput> {
    let ds = config.load_dataset()?;
    run_pipeline_on(&ds, config, true)
}

// ---------------------------------------------------------------------
// Cross-validated grid search
// ---------------------------------------------------------------------

/// Candidate values per boosting parameter; the search enumerates the
/// full cross product.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamGrid {
    pub n_estimators: Vec<usize>,
    pub learning_rate: Vec<f64>,
    pub max_depth: Vec<usize>,
    pub min_samples_leaf: Vec<usize>,
    pub gamma: Vec<f64>,
    pub reg_lambda: Vec<f64>,
    pub reg_alpha: Vec<f64>,
}

impl Default for ParamGrid {
    fn default() -> Self {
        Self {
            n_estimators: vec![100],
            learning_rate: vec![0.1],
            max_depth: vec![6],
            min_samples_leaf: vec![1],
            gamma: vec![0.0],
            reg_lambda: vec![0.0],
            reg_alpha: vec![0.0],
        }
    }
}

/// Mean validation MSE over a seeded k-fold split.
pub fn cv_mse(train: &Dataset, params: &GbdtParams, folds: usize, seed: u64) -> Result<f64> {
    if folds < 2 {
        return Err(Error::InvalidParam(format!(
            "cross-validation needs >= 2 folds, got {folds}"
        )));
    }
    let n = train.n_rows();
    if n < 2 * folds {
        return Err(Error::InvalidParam(format!(
            "{n} rows cannot support {folds}-fold cross-validation"
        )));
    }
    use rand::seq::SliceRandom;
    let mut indices: Vec<usize> = (0..n).collect();
    indices.shuffle(&mut crate::rng::rng_from_seed(derive_seed(seed, 5)));
    let mut total = 0.0;
    for f in 0..folds {
        let lo = f * n / folds;
        let hi = (f + 1) * n / folds;
        let val_idx = &indices[lo..hi];
        let fit_idx: Vec<usize> = indices[..lo]
            .iter()
            .chain(&indices[hi..])
            .copied()
            .collect();
        let fit_part = train.select_rows(&fit_idx)?;
        let val_part = train.select_rows(val_idx)?;
        let model = fit_gbdt(&fit_part, params)?;
        let preds: Vec<f64> = (0..val_part.n_rows())
            .map(|i| predict(&model, val_part.row(i)))
            .collect();
        total += mean_sq_diff(val_part.response(), &preds);
    }
    Ok(total / folds as f64)
}

/// Exhaustive seeded search minimizing cross-validated MSE. Ties break
/// toward fewer rounds, then shallower trees.
pub fn grid_search(
    train: &Dataset,
    grid: &ParamGrid,
    folds: usize,
    seed: u64,
) -> Result<GbdtParams> {
    let dims = [
        grid.n_estimators.len(),
        grid.learning_rate.len(),
        grid.max_depth.len(),
        grid.min_samples_leaf.len(),
        grid.gamma.len(),
        grid.reg_lambda.len(),
        grid.reg_alpha.len(),
    ];
    if dims.contains(&0) {
        return Err(Error::InvalidParam(
            "parameter grid has an empty axis".into(),
        ));
    }
    let mut best: Option<(f64, GbdtParams)> = None;
    for &n_estimators in &grid.n_estimators {
        for &learning_rate in &grid.learning_rate {
            for &max_depth in &grid.max_depth {
                for &min_samples_leaf in &grid.min_samples_leaf {
                    for &gamma in &grid.gamma {
                        for &reg_lambda in &grid.reg_lambda {
                            for &reg_alpha in &grid.reg_alpha {
                                let params = GbdtParams {
                                    n_estimators,
                                    learning_rate,
                                    base_score: None,
                                    tree: TreeParams {
                                        max_depth,
                                        min_samples_leaf,
                                        gamma,
                                        reg_lambda,
                                        reg_alpha,
                                    },
                                };
                                params.validate()?;
                                let score = cv_mse(train, &params, folds, seed)?;
                                let better = match &best {
                                    None => true,
                                    Some((s, p)) => {
                                        score < *s
                                            || (score == *s
                                                && (params.n_estimators, params.tree.max_depth)
                                                    < (p.n_estimators, p.tree.max_depth))
                                    }
                                };
                                if better {
                                    best = Some((score, params));
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(best.expect("grid has at least one point").1)
}

// ---------------------------------------------------------------------
// Plot-data emission
// ---------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    ComplexitySweep,
    LambdaSweep,
    DecompositionStack,
}

fn sample_se(values: &[f64]) -> f64 {
    let r = values.len();
    if r < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / r as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (r - 1) as f64;
    (var / r as f64).sqrt()
}

/// Sweep results as CSV with a self-describing header.
pub fn plot_data_csv(entries: &[SweepEntry], kind: PlotKind) -> String {
    let (label, index_col) = match kind {
        PlotKind::ComplexitySweep => ("complexity_sweep", "rounds"),
        PlotKind::LambdaSweep => ("lambda_sweep", "lambda"),
        PlotKind::DecompositionStack => ("decomposition_stack", "sigma_fraction"),
    };
    let mut out = format!(
        "# kind: {label}\n# {index_col} with decomposition terms; term_sum = \
bias_sq_plus_irreducible + variance + perturbation; direct_risk_se is the \
standard error of direct_risk over perturbation repeats\n{index_col},\
bias_sq_plus_irreducible,variance,perturbation,term_sum,direct_risk,sum_gap,direct_risk_se\n"
    );
    for e in entries {
        let r = &e.report;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            e.index,
            r.bias_sq_plus_irreducible,
            r.variance,
            r.perturbation,
            r.term_sum(),
            r.direct_risk,
            r.sum_gap,
            sample_se(&r.direct_risk_by_repeat),
        ));
    }
    out
}

pub fn emit_plot_data(entries: &[SweepEntry], kind: PlotKind, path: &Path) -> Result<()> {
    fs::write(path, plot_data_csv(entries, kind))?;
    Ok(())
}

// ---------------------------------------------------------------------
// Argument types
// ---------------------------------------------------------------------

#[derive(Parser)]
#[command(
    name = "leafline",
    version,
    about = "Boosted trees rewritten as sparse linear models: training, \
leaf encoding, penalized refits, perturbation-risk decomposition, and a \
robust-regression equivalence verifier."
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Fit a boosted ensemble on the training split and save it.
    Train(TrainArgs),
    /// Rebuild the leaf design of a saved model and export it.
    Encode(EncodeArgs),
    /// Refit leaf coefficients with a ridge or lasso penalty.
    Refit(RefitArgs),
    /// Measure test MSE and perturbation term under covariate noise.
    Evaluate(EvaluateArgs),
    /// Bootstrap estimate of the four-term risk decomposition.
    Decompose(DecomposeArgs),
    /// Decomposition along a rounds or lambda sweep, written as CSV.
    Sweep(SweepArgs),
    /// Numerically verify the robust/ridge equivalence on random instances.
    VerifyTheorem1(VerifyArgs),
    /// Run a full experiment config and write every artifact.
    Reproduce(ReproduceArgs),
}

#[derive(Args)]
struct DataArgs {
    /// CSV file with a header row.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Response column name in the CSV.
    #[arg(long)]
    target: Option<String>,
    /// Generate y = x^2 + noise instead of reading a file.
    #[arg(long, value_name = "N")]
    synthetic_square: Option<usize>,
    #[arg(long, default_value_t = 0.8)]
    train_fraction: f64,
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
}

impl DataArgs {
    fn load(&self) -> Result<Dataset> {
        match (&self.data, &self.synthetic_square) {
            (Some(path), None) => {
                let target = self.target.as_deref().ok_or_else(|| {
                    Error::InvalidParam("--target is required with --data".into())
                })?;
                load_csv(path, target)
            }
            (None, Some(n)) => synth_square(*n, derive_seed(self.split_seed, 4)),
            _ => Err(Error::InvalidParam(
                "provide exactly one of --data or --synthetic-square".into(),
            )),
        }
    }

    fn load_split(&self) -> Result<(Dataset, Dataset)> {
        split(&self.load()?, self.train_fraction, self.split_seed)
    }
}

#[derive(Args)]
struct GbdtArgs {
    /// Named starting configuration: airfoil, chp, or bike.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    n_estimators: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    base_score: Option<f64>,
    #[arg(long)]
    max_depth: Option<usize>,
    #[arg(long)]
    min_samples_leaf: Option<usize>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    reg_lambda: Option<f64>,
    #[arg(long)]
    reg_alpha: Option<f64>,
}

impl GbdtArgs {
    fn config(&self) -> GbdtConfig {
        GbdtConfig {
            preset: self.preset.clone(),
            n_estimators: self.n_estimators,
            learning_rate: self.learning_rate,
            base_score: self.base_score,
            max_depth: self.max_depth,
            min_samples_leaf: self.min_samples_leaf,
            gamma: self.gamma,
            reg_lambda: self.reg_lambda,
            reg_alpha: self.reg_alpha,
        }
    }
}

fn parse_method(s: &str) -> std::result::Result<RefitMethod, String> {
    match s {
        "ridge" => Ok(RefitMethod::Ridge),
        "lasso" => Ok(RefitMethod::Lasso),
        _ => Err(format!("unknown method {s:?}; expected ridge or lasso")),
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    gbdt: GbdtArgs,
    /// Where to write the model JSON.
    #[arg(long)]
    model_out: PathBuf,
}

#[derive(Args)]
struct EncodeArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Model JSON produced by `train` on the same data and split seed.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    design_out: Option<PathBuf>,
    #[arg(long)]
    map_out: Option<PathBuf>,
    /// Original (tree-derived) coefficients.
    #[arg(long)]
    coefficients_out: Option<PathBuf>,
}

#[derive(Args)]
struct RefitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    model: PathBuf,
    #[arg(long, value_parser = parse_method)]
    method: RefitMethod,
    #[arg(long)]
    lambda: f64,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_sweeps: Option<usize>,
    #[arg(long)]
    coefficients_out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    model: PathBuf,
    /// Refit coefficients JSON; without it the raw ensemble is evaluated.
    #[arg(long)]
    coefficients: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.02, 0.05])]
    sigma_fractions: Vec<f64>,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Optional CSV destination for the rows printed to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DecomposeArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    gbdt: GbdtArgs,
    /// With --method/--lambda the decomposed pipeline refits leaf
    /// coefficients; otherwise it uses the ensemble's own.
    #[arg(long, value_parser = parse_method)]
    method: Option<RefitMethod>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    sigma_fraction: f64,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    #[arg(long, default_value_t = 20)]
    bootstrap_b: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Report JSON destination (also printed to stdout).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Stacked-terms CSV destination.
    #[arg(long)]
    csv_out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    gbdt: GbdtArgs,
    /// rounds | lambda
    #[arg(long)]
    kind: String,
    /// Boosting-round counts for --kind rounds.
    #[arg(long, value_delimiter = ',')]
    stages: Option<Vec<usize>>,
    /// Descending penalty levels for --kind lambda.
    #[arg(long, value_delimiter = ',')]
    lambdas: Option<Vec<f64>>,
    #[arg(long, value_parser = parse_method)]
    method: Option<RefitMethod>,
    #[arg(long, default_value_t = 1e-7)]
    tol: f64,
    #[arg(long, default_value_t = 10_000)]
    max_sweeps: usize,
    #[arg(long)]
    sigma_fraction: f64,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    #[arg(long, default_value_t = 20)]
    bootstrap_b: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CSV destination.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReproduceArgs {
    /// Experiment config JSON.
    #[arg(long)]
    config: PathBuf,
}

// ---------------------------------------------------------------------
// Dispatch
// ---------------------------------------------------------------------

/// Parse arguments and run; returns the process exit code.
pub fn run() -> i32 {
    let cli = Cli::parse();
    match dispatch(cli.cmd) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}

fn exit_code_for(e: &Error) -> i32 {
    match e {
        Error::NonConvergence { .. } | Error::TooFewFits { .. } => 3,
        _ => 2,
    }
}

fn dispatch(cmd: Cmd) -> Result<i32> {
    match cmd {
        Cmd::Train(args) => cmd_train(args),
        Cmd::Encode(args) => cmd_encode(args),
        Cmd::Refit(args) => cmd_refit(args),
        Cmd::Evaluate(args) => cmd_evaluate(args),
        Cmd::Decompose(args) => cmd_decompose(args),
        Cmd::Sweep(args) => cmd_sweep(args),
        Cmd::VerifyTheorem1(args) => cmd_verify(args),
        Cmd::Reproduce(args) => cmd_reproduce(args),
    }
}

fn cmd_train(args: TrainArgs) -> Result<i32> {
    let (train, test) = args.data.load_split()?;
    let params = args.gbdt.config().resolve()?;
    let model = fit_gbdt(&train, &params)?;
    fs::write(&args.model_out, model.to_json())?;
    let train_preds: Vec<f64> = (0..train.n_rows())
        .map(|i| predict(&model, train.row(i)))
        .collect();
    let test_preds: Vec<f64> = (0..test.n_rows())
        .map(|i| predict(&model, test.row(i)))
        .collect();
    println!(
        "{}",
        json!({
            "model_path": args.model_out,
            "n_trees": model.n_trees(),
            "gamma0": model.gamma0,
            "train_mse": mean_sq_diff(train.response(), &train_preds),
            "test_mse": mean_sq_diff(test.response(), &test_preds),
        })
    );
    Ok(0)
}

fn cmd_encode(args: EncodeArgs) -> Result<i32> {
    let (train, _) = args.data.load_split()?;
    let model = GbdtModel::from_json(&fs::read_to_string(&args.model)?)?;
    let encoder = build_encoder(&model, &train)?;
    let design = encoder.encode_rows(&train)?;
    let beta = original_coefficients(&model, &encoder)?;
    if let Some(path) = &args.design_out {
        fs::write(path, design.to_matrix_market())?;
    }
    if let Some(path) = &args.map_out {
        fs::write(path, encoder.map_json())?;
    }
    if let Some(path) = &args.coefficients_out {
        fs::write(
            path,
            serde_json::to_string_pretty(&beta).expect("coefficients serialize"),
        )?;
    }
    let total_leaves: usize = model.trees.iter().map(|t| t.n_leaves()).sum();
    println!(
        "{}",
        json!({
            "n_rows": design.n_rows(),
            "n_columns": design.n_cols(),
            "merged_leaves": total_leaves - encoder.n_columns(),
        })
    );
    Ok(0)
}

fn cmd_refit(args: RefitArgs) -> Result<i32> {
    let (train, _) = args.data.load_split()?;
    let model = GbdtModel::from_json(&fs::read_to_string(&args.model)?)?;
    let encoder = build_encoder(&model, &train)?;
    let design = encoder.encode_rows(&train)?;
    let mut spec = RefitSpec::new(args.method, args.lambda);
    if let Some(t) = args.tol {
        spec.tol = t;
    }
    if let Some(s) = args.max_sweeps {
        spec.max_sweeps = s;
    }
    let result = refit(&design, train.response(), &spec)?;
    if let Some(path) = &args.coefficients_out {
        fs::write(path, result.to_json())?;
    }
    println!(
        "{}",
        json!({
            "method": result.method,
            "lambda": result.lambda,
            "sweeps_used": result.sweeps_used,
            "converged": result.converged,
            "objective": result.objective_trace.last(),
            "nonzero_coefficients": result
                .coefficients
                .beta
                .iter()
                .skip(1)
                .filter(|v| **v != 0.0)
                .count(),
        })
    );
    if !result.converged {
        return Err(Error::NonConvergence {
            sweeps: result.sweeps_used,
        });
    }
    Ok(0)
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<i32> {
    let (train, test) = args.data.load_split()?;
    let model = GbdtModel::from_json(&fs::read_to_string(&args.model)?)?;
    let refit_result = match &args.coefficients {
        Some(path) => Some(RefitResult::from_json(&fs::read_to_string(path)?)?),
        None => None,
    };
    let encoder;
    let (name, predictor) = match &refit_result {
        Some(r) => {
            encoder = build_encoder(&model, &train)?;
            (
                "refit",
                Predictor::Linear {
                    encoder: &encoder,
                    beta: &r.coefficients.beta,
                },
            )
        }
        None => ("model", Predictor::Trees(&model)),
    };
    let cells = evaluate_predictor(
        &predictor,
        &test,
        train.column_std(),
        &args.sigma_fractions,
        args.repeats,
        args.seed,
    )?;
    let mut table = ResultTable::default();
    for (sigma, mse, pert) in cells {
        table.rows.push(ResultRow {
            model: name.to_string(),
            sigma_fraction: sigma,
            test_mse: mse,
            perturbation_term: pert,
        });
    }
    if let Some(path) = &args.out {
        fs::write(path, table.to_csv())?;
    }
    println!(
        "{}",
        serde_json::to_string_pretty(&table).expect("table serializes")
    );
    Ok(0)
}

fn decompose_pipeline(
    gbdt: GbdtParams,
    method: Option<RefitMethod>,
    lambda: Option<f64>,
) -> Result<Box<dyn Pipeline>> {
    match (method, lambda) {
        (None, None) => Ok(Box::new(GbdtPipeline { params: gbdt })),
        (Some(method), Some(lambda)) => Ok(Box::new(RefitPipeline {
            gbdt,
            spec: RefitSpec::new(method, lambda),
        })),
        _ => Err(Error::InvalidParam(
            "--method and --lambda must be given together".into(),
        )),
    }
}

fn cmd_decompose(args: DecomposeArgs) -> Result<i32> {
    let (train, test) = args.data.load_split()?;
    let params = args.gbdt.config().resolve()?;
    let pipeline = decompose_pipeline(params, args.method, args.lambda)?;
    let spec = PerturbationSpec::new(args.sigma_fraction, args.seed, args.repeats);
    let report =
        estimate_risk_decomposition(&train, &test, pipeline.as_ref(), &spec, args.bootstrap_b)?;
    let rendered = serde_json::to_string_pretty(&report).expect("report serializes");
    if let Some(path) = &args.out {
        fs::write(path, &rendered)?;
    }
    if let Some(path) = &args.csv_out {
        let entry = SweepEntry {
            index: args.sigma_fraction,
            report: report.clone(),
        };
        emit_plot_data(
            std::slice::from_ref(&entry),
            PlotKind::DecompositionStack,
            path,
        )?;
    }
    println!("{rendered}");
    Ok(0)
}

fn cmd_sweep(args: SweepArgs) -> Result<i32> {
    let (train, test) = args.data.load_split()?;
    let gbdt = args.gbdt.config().resolve()?;
    let (family, kind) = match args.kind.as_str() {
        "rounds" => {
            let stages = args
                .stages
                .clone()
                .ok_or_else(|| Error::InvalidParam("--kind rounds requires --stages".into()))?;
            (
                PipelineFamily::BoostingRounds {
                    params: gbdt,
                    stages,
                },
                PlotKind::ComplexitySweep,
            )
        }
        "lambda" => {
            let lambdas = args
                .lambdas
                .clone()
                .ok_or_else(|| Error::InvalidParam("--kind lambda requires --lambdas".into()))?;
            let method = args
                .method
                .ok_or_else(|| Error::InvalidParam("--kind lambda requires --method".into()))?;
            (
                PipelineFamily::RefitLambdas {
                    gbdt,
                    method,
                    lambdas,
                    tol: args.tol,
                    max_sweeps: args.max_sweeps,
                },
                PlotKind::LambdaSweep,
            )
        }
        other => {
            return Err(Error::InvalidParam(format!(
                "unknown sweep kind {other:?}; expected rounds or lambda"
            )))
        }
    };
    let spec = PerturbationSpec::new(args.sigma_fraction, args.seed, args.repeats);
    let entries = decomposition_sweep(&train, &test, &family, &spec, args.bootstrap_b)?;
    emit_plot_data(&entries, kind, &args.out)?;
    println!("{}", json!({ "out": args.out, "entries": entries.len() }));
    Ok(0)
}

fn cmd_verify(args: VerifyArgs) -> Result<i32> {
    let report = verify_theorem1(args.trials, args.seed);
    let rendered = report.to_json();
    if let Some(path) = &args.out {
        fs::write(path, &rendered)?;
    }
    println!("{rendered}");
    Ok(if report.failures == 0 { 0 } else { 3 })
}

fn cmd_reproduce(args: ReproduceArgs) -> Result<i32> {
    let config = ExperimentConfig::from_json(&fs::read_to_string(&args.config)?)?;
    let output = run_pipeline(&config)?;
    println!(
        "{}",
        json!({
            "output_dir": config.output_dir,
            "table_rows": output.table.rows.len(),
            "non_converged": output.non_converged,
        })
    );
    Ok(if output.non_converged.is_empty() {
        0
    } else {
        3
    })
}

// ---------------------------------------------------------------------
