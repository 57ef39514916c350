//! Gradient boosting of regression trees for squared loss, with staged
//! prediction for complexity sweeps.
//!
//! Each round fits a tree to the current residuals (gradients are their
//! negatives, hessians are 1) and adds it with a learning-rate weight:
//! F_m = F_{m-1} + lr * f_m. The intercept is the training-response mean
//! unless overridden.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::tree::{fit_tree, predict_tree, Tree, TreeParams};

const MODEL_VERSION: &str = "gbdt-v1";

/// Ensemble hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GbdtParams {
    /// Number of boosting rounds (M).
    pub n_estimators: usize,
    /// Shrinkage applied to every tree's contribution; in (0, 1].
    pub learning_rate: f64,
    /// Fixed intercept; `None` means "use the training mean".
    pub base_score: Option<f64>,
    pub tree: TreeParams,
}

impl Default for GbdtParams {
    fn default() -> Self {
        Self {
            n_estimators: 100,
            learning_rate: 0.1,
            base_score: None,
            tree: TreeParams::default(),
        }
    }
}

impl GbdtParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_estimators < 1 {
            return Err(Error::InvalidParam("n_estimators must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::InvalidParam(format!(
                "learning_rate must lie in (0,1], got {}",
                self.learning_rate
            )));
        }
        if let Some(b) = self.base_score {
            if !b.is_finite() {
                return Err(Error::InvalidParam("base_score must be finite".into()));
            }
        }
        self.tree.validate()
    }
}

/// A trained boosted ensemble. Prediction is
/// `gamma0 + learning_rate * sum_m tree_m(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtModel {
    pub gamma0: f64,
    pub learning_rate: f64,
    pub trees: Vec<Tree>,
    pub params: GbdtParams,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: String,
    #[serde(flatten)]
    model: GbdtModel,
}

impl GbdtModel {
    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    /// Copy of the model keeping only the first `m` trees. Because
    /// boosting is sequential, this equals the model that training with
    /// `n_estimators = m` would have produced.
    pub fn truncate(&self, m: usize) -> GbdtModel {
        assert!(
            m <= self.trees.len(),
            "cannot keep {m} of {} trees",
            self.trees.len()
        );
        GbdtModel {
            gamma0: self.gamma0,
            learning_rate: self.learning_rate,
            trees: self.trees[..m].to_vec(),
            params: GbdtParams {
                n_estimators: m.max(1),
                ..self.params
            },
        }
    }

    pub fn to_json(&self) -> String {
        let file = ModelFile {
            version: MODEL_VERSION.to_string(),
            model: self.clone(),
        };
        serde_json::to_string_pretty(&file).expect("model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(s)?;
        if file.version != MODEL_VERSION {
            return Err(Error::InvalidParam(format!(
                "unsupported model version {:?}, expected {MODEL_VERSION:?}",
                file.version
            )));
        }
        Ok(file.model)
    }
}

/// Train a boosted ensemble on the dataset's response.
pub fn fit_gbdt(train: &Dataset, params: &GbdtParams) -> Result<GbdtModel> {
    params.validate()?;
    let n = train.n_rows();
    if n < 2 {
        return Err(Error::InvalidParam(format!(
            "boosting needs at least 2 rows, got {n}"
        )));
    }
    let y = train.response();
    let gamma0 = params
        .base_score
        .unwrap_or_else(|| y.iter().sum::<f64>() / n as f64);

    let mut current: Vec<f64> = vec![gamma0; n];
    let mut gradients = vec![0.0; n];
    let hessians = vec![1.0; n];
    let mut trees = Vec::with_capacity(params.n_estimators);
    for _ in 0..params.n_estimators {
        for i in 0..n {
            gradients[i] = current[i] - y[i];
        }
        let tree = fit_tree(
            train.features(),
            train.n_features(),
            &gradients,
            &hessians,
            &params.tree,
        )?;
        for (i, cur) in current.iter_mut().enumerate() {
            *cur += params.learning_rate * predict_tree(&tree, train.row(i));
        }
        trees.push(tree);
    }
    Ok(GbdtModel {
        gamma0,
        learning_rate: params.learning_rate,
        trees,
        params: *params,
    })
}

/// Ensemble prediction for one feature row.
pub fn predict(model: &GbdtModel, x: &[f64]) -> f64 {
    let sum: f64 = model.trees.iter().map(|t| predict_tree(t, x)).sum();
    model.gamma0 + model.learning_rate * sum
}

/// Predictions for every row of a dataset.
pub fn predict_dataset(model: &GbdtModel, ds: &Dataset) -> Vec<f64> {
    (0..ds.n_rows())
        .map(|i| predict(model, ds.row(i)))
        .collect()
}

/// Predictions using the first 0, 1, ..., M trees; entry 0 is the
/// intercept alone and the last entry equals [`predict`].
pub fn staged_predict(model: &GbdtModel, x: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(model.trees.len() + 1);
    let mut acc = 0.0;
    out.push(model.gamma0);
    for tree in &model.trees {
        acc += predict_tree(tree, x);
        out.push(model.gamma0 + model.learning_rate * acc);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::distributions::Distribution;
    use rand_distr::StandardNormal;

    use crate::data::synth_square;
    use crate::rng::rng_from_seed;

    fn dataset(x: Vec<f64>, y: Vec<f64>) -> Dataset {
        let n = x.len();
        Dataset::new(x, n, 1, y, vec!["x".into()]).unwrap()
    }

    fn mse(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>() / a.len() as f64
    }

    #[test]
    fn single_deep_tree_with_unit_rate_interpolates() {
        // Dyadic values keep every float operation exact, so the fit
        // reproduces the response bit-for-bit.
        let ds = dataset(
            (0..8).map(|i| i as f64).collect(),
            vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0],
        );
        let params = GbdtParams {
            n_estimators: 1,
            learning_rate: 1.0,
            base_score: None,
            tree: TreeParams {
                max_depth: 3,
                ..TreeParams::default()
            },
        };
        let model = fit_gbdt(&ds, &params).unwrap();
        assert_eq!(model.gamma0, 3.5);
        for i in 0..8 {
            assert_eq!(predict(&model, ds.row(i)), ds.response()[i]);
        }
    }

    #[test]
    fn constant_response_gives_zero_trees() {
        let ds = dataset(vec![0.0, 1.0, 2.0, 3.0], vec![2.5; 4]);
        let params = GbdtParams {
            n_estimators: 5,
            ..GbdtParams::default()
        };
        let model = fit_gbdt(&ds, &params).unwrap();
        assert_eq!(model.gamma0, 2.5);
        for tree in &model.trees {
            assert_eq!(tree.n_leaves(), 1);
            assert_eq!(tree.leaf_values(), vec![0.0]);
        }
        assert_eq!(predict(&model, &[100.0]), 2.5);
    }

    #[test]
    fn training_mse_strictly_decreases_on_square() {
        let ds = synth_square(200, 8).unwrap();
        let params = GbdtParams {
            n_estimators: 50,
            learning_rate: 0.1,
            base_score: None,
            tree: TreeParams {
                max_depth: 3,
                ..TreeParams::default()
            },
        };
        let model = fit_gbdt(&ds, &params).unwrap();
        // Per-stage training MSE from staged predictions.
        let staged: Vec<Vec<f64>> = (0..ds.n_rows())
            .map(|i| staged_predict(&model, ds.row(i)))
            .collect();
        let stage_mse: Vec<f64> = (0..=50)
            .map(|m| {
                let preds: Vec<f64> = staged.iter().map(|s| s[m]).collect();
                mse(&preds, ds.response())
            })
            .collect();
        // Stage 0 MSE is the response variance around its mean.
        let mean = ds.response().iter().sum::<f64>() / 200.0;
        let var = ds
            .response()
            .iter()
            .map(|y| (y - mean) * (y - mean))
            .sum::<f64>()
            / 200.0;
        assert!((stage_mse[0] - var).abs() < 1e-12);
        for m in 0..50 {
            assert!(
                stage_mse[m + 1] < stage_mse[m],
                "stage {m}: {} -> {}",
                stage_mse[m],
                stage_mse[m + 1]
            );
        }
        assert!(stage_mse[50] < 0.5 * stage_mse[0]);
    }

    #[test]
    fn staged_predict_is_consistent_with_predict() {
        let ds = synth_square(80, 4).unwrap();
        let params = GbdtParams {
            n_estimators: 12,
            learning_rate: 0.3,
            base_score: None,
            tree: TreeParams {
                max_depth: 2,
                ..TreeParams::default()
            },
        };
        let model = fit_gbdt(&ds, &params).unwrap();
        let mut rng = rng_from_seed(5);
        for _ in 0..50 {
            let x = [StandardNormal.sample(&mut rng)];
            let staged = staged_predict(&model, &x);
            assert_eq!(staged.len(), 13);
            assert_eq!(staged[0], model.gamma0);
            assert_eq!(*staged.last().unwrap(), predict(&model, &x));
            for m in 0..12 {
                let step = staged[m + 1] - staged[m];
                let direct = 0.3 * predict_tree(&model.trees[m], &x);
                assert!(
                    (step - direct).abs() < 1e-12,
                    "stage {m}: increment {step} vs {direct}"
                );
            }
        }
    }

    #[test]
    fn prefix_of_training_equals_shorter_training_run() {
        let ds = synth_square(120, 9).unwrap();
        let long = GbdtParams {
            n_estimators: 20,
            learning_rate: 0.2,
            base_score: None,
            tree: TreeParams {
                max_depth: 3,
                ..TreeParams::default()
            },
        };
        let short = GbdtParams {
            n_estimators: 7,
            ..long
        };
        let model_long = fit_gbdt(&ds, &long).unwrap();
        let model_short = fit_gbdt(&ds, &short).unwrap();
        assert_eq!(&model_long.trees[..7], &model_short.trees[..]);
        let truncated = model_long.truncate(7);
        for i in 0..ds.n_rows() {
            let a = predict(&truncated, ds.row(i));
            let b = predict(&model_short, ds.row(i));
            assert_eq!(a, b);
            assert_eq!(staged_predict(&model_long, ds.row(i))[7], a);
        }
    }

    #[test]
    fn json_round_trip_and_version_check() {
        let ds = synth_square(40, 2).unwrap();
        let model = fit_gbdt(
            &ds,
            &GbdtParams {
                n_estimators: 3,
                ..GbdtParams::default()
            },
        )
        .unwrap();
        let js = model.to_json();
        assert!(js.contains("\"version\": \"gbdt-v1\""));
        let back = GbdtModel::from_json(&js).unwrap();
        assert_eq!(model, back);

        let tampered = js.replace("gbdt-v1", "gbdt-v9");
        assert!(GbdtModel::from_json(&tampered).is_err());
    }

    #[test]
    fn rejects_invalid_params_and_data() {
        let ds = dataset(vec![0.0, 1.0], vec![0.0, 1.0]);
        let mut p = GbdtParams {
            n_estimators: 0,
            ..GbdtParams::default()
        };
        assert!(fit_gbdt(&ds, &p).is_err());
        p = GbdtParams::default();
        p.learning_rate = 0.0;
        assert!(fit_gbdt(&ds, &p).is_err());
        p.learning_rate = 1.5;
        assert!(fit_gbdt(&ds, &p).is_err());
        let single = dataset(vec![0.0], vec![0.0]);
        assert!(fit_gbdt(&single, &GbdtParams::default()).is_err());
    }

    #[test]
    fn fixed_base_score_is_respected() {
        let ds = dataset(vec![0.0, 1.0, 2.0, 3.0], vec![1.0, 1.0, 5.0, 5.0]);
        let params = GbdtParams {
            n_estimators: 1,
            learning_rate: 1.0,
            base_score: Some(0.0),
            tree: TreeParams {
                max_depth: 1,
                ..TreeParams::default()
            },
        };
        let model = fit_gbdt(&ds, &params).unwrap();
        assert_eq!(model.gamma0, 0.0);
        assert_eq!(predict(&model, &[0.0]), 1.0);
        assert_eq!(predict(&model, &[3.0]), 5.0);
    }
}
