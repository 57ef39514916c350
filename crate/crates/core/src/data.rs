//! Dataset ingestion, splitting, column statistics, Gaussian covariate
//! perturbation, and synthetic data generation.
//!
//! A [`Dataset`] is immutable after construction: every operation that
//! changes rows or cells returns a new `Dataset`. Feature matrices are
//! stored row-major in a flat `Vec<f64>`.

use std::io::Read;
use std::path::Path;

use rand::distributions::Distribution;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

/// Immutable tabular regression dataset: `n` rows by `q` predictors plus
/// a continuous response.
#[derive(Debug, Clone)]
pub struct Dataset {
    features: Vec<f64>,
    n: usize,
    q: usize,
    response: Vec<f64>,
    column_names: Vec<String>,
    column_std: Vec<f64>,
    /// Noiseless regression function values, carried by synthetic
    /// generators for bias-split experiments.
    truth: Option<Vec<f64>>,
}

/// Scale and repetition settings for Gaussian covariate perturbation.
///
/// `sigma_fraction` is expressed as a fraction of each predictor's
/// reference (training-set) standard deviation.
#[derive(Debug, Clone, Copy)]
pub struct PerturbationSpec {
    pub sigma_fraction: f64,
    pub seed: u64,
    pub repeats: usize,
}

impl PerturbationSpec {
    pub fn new(sigma_fraction: f64, seed: u64, repeats: usize) -> Self {
        Self {
            sigma_fraction,
            seed,
            repeats,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct DatasetSummary<'a> {
    pub n: usize,
    pub q: usize,
    pub column_names: &'a [String],
    pub column_std: &'a [f64],
}

impl Dataset {
    /// Build a dataset from a flat row-major feature matrix and a response.
    pub fn new(
        features: Vec<f64>,
        n: usize,
        q: usize,
        response: Vec<f64>,
        column_names: Vec<String>,
    ) -> Result<Self> {
        if n == 0 || q == 0 {
            return Err(Error::EmptyData);
        }
        if features.len() != n * q {
            return Err(Error::DimensionMismatch(format!(
                "feature buffer holds {} values, expected {}x{}",
                features.len(),
                n,
                q
            )));
        }
        if response.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "response has {} values for {} rows",
                response.len(),
                n
            )));
        }
        if column_names.len() != q {
            return Err(Error::DimensionMismatch(format!(
                "{} column names for {} columns",
                column_names.len(),
                q
            )));
        }
        if features
            .iter()
            .chain(response.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::InvalidParam(
                "features and response must be finite".into(),
            ));
        }
        let column_std = column_stats_of(&features, n, q);
        Ok(Self {
            features,
            n,
            q,
            response,
            column_names,
            column_std,
            truth: None,
        })
    }

    fn with_truth(mut self, truth: Vec<f64>) -> Self {
        debug_assert_eq!(truth.len(), self.n);
        self.truth = Some(truth);
        self
    }

    pub fn n_rows(&self) -> usize {
        self.n
    }

    pub fn n_features(&self) -> usize {
        self.q
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.q..(i + 1) * self.q]
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn response(&self) -> &[f64] {
        &self.response
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    /// Per-column population standard deviations, computed once at
    /// construction.
    pub fn column_std(&self) -> &[f64] {
        &self.column_std
    }

    /// Noiseless regression function values when the dataset was
    /// synthetically generated; `None` for real data.
    pub fn truth(&self) -> Option<&[f64]> {
        self.truth.as_deref()
    }

    pub fn summary(&self) -> DatasetSummary<'_> {
        DatasetSummary {
            n: self.n,
            q: self.q,
            column_names: &self.column_names,
            column_std: &self.column_std,
        }
    }

    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(&self.summary()).expect("summary serializes")
    }

    /// New dataset holding the given rows, in order. Row indices may repeat,
    /// which is how bootstrap resamples are formed.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::EmptyData);
        }
        let mut features = Vec::with_capacity(indices.len() * self.q);
        let mut response = Vec::with_capacity(indices.len());
        let mut truth = self
            .truth
            .as_ref()
            .map(|_| Vec::with_capacity(indices.len()));
        for &i in indices {
            features.extend_from_slice(self.row(i));
            response.push(self.response[i]);
            if let (Some(buf), Some(t)) = (truth.as_mut(), self.truth.as_ref()) {
                buf.push(t[i]);
            }
        }
        let column_std = column_stats_of(&features, indices.len(), self.q);
        Ok(Self {
            features,
            n: indices.len(),
            q: self.q,
            response,
            column_names: self.column_names.clone(),
            column_std,
            truth,
        })
    }

    /// Bootstrap resample of the same size, drawn with replacement.
    pub fn bootstrap_resample(&self, seed: u64) -> Self {
        let mut rng = rng_from_seed(seed);
        let indices: Vec<usize> = (0..self.n).map(|_| rng.gen_range(0..self.n)).collect();
        self.select_rows(&indices).expect("non-empty resample")
    }
}

/// Load a comma-delimited CSV with a header row. The `target_column`
/// becomes the response; every other column becomes a predictor, in
/// file order. All cells must parse as finite numbers.
pub fn load_csv(path: &Path, target_column: &str) -> Result<Dataset> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Csv(format!("cannot open {}: {}", path.display(), e)))?;
    load_csv_reader(file, target_column)
}

/// Same as [`load_csv`] but from any reader; used by tests.
pub fn load_csv_reader<R: Read>(reader: R, target_column: &str) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Csv(e.to_string()))?
        .iter()
        .map(|s| s.to_string())
        .collect();
    let target_idx = headers
        .iter()
        .position(|h| h == target_column)
        .ok_or_else(|| Error::MissingTargetColumn(target_column.to_string()))?;
    let column_names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != target_idx)
        .map(|(_, h)| h.clone())
        .collect();
    if column_names.is_empty() {
        return Err(Error::Csv("file has no predictor columns".into()));
    }

    let mut features = Vec::new();
    let mut response = Vec::new();
    let mut n = 0usize;
    for (row_idx, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| Error::Csv(e.to_string()))?;
        if record.len() != headers.len() {
            return Err(Error::Csv(format!(
                "data row {} has {} fields, header has {}",
                row_idx,
                record.len(),
                headers.len()
            )));
        }
        for (col_idx, cell) in record.iter().enumerate() {
            let value: f64 = cell.parse().map_err(|_| Error::NonNumericCell {
                row: row_idx,
                column: headers[col_idx].clone(),
                value: cell.to_string(),
            })?;
            if !value.is_finite() {
                return Err(Error::NonNumericCell {
                    row: row_idx,
                    column: headers[col_idx].clone(),
                    value: cell.to_string(),
                });
            }
            if col_idx == target_idx {
                response.push(value);
            } else {
                features.push(value);
            }
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyData);
    }
    Dataset::new(features, n, column_names.len(), response, column_names)
}

/// Deterministic seeded train/test split. The train side receives
/// `floor(train_fraction * n)` rows of a seeded shuffle.
pub fn split(ds: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidParam(format!(
            "train_fraction must lie in (0,1), got {train_fraction}"
        )));
    }
    let n = ds.n_rows();
    let n_train = (train_fraction * n as f64).floor() as usize;
    if n_train == 0 || n_train == n {
        return Err(Error::InvalidParam(format!(
            "split of {n} rows at fraction {train_fraction} leaves an empty part"
        )));
    }
    let mut indices: Vec<usize> = (0..n).collect();
    indices.shuffle(&mut rng_from_seed(seed));
    let train = ds.select_rows(&indices[..n_train])?;
    let test = ds.select_rows(&indices[n_train..])?;
    Ok((train, test))
}

/// Add i.i.d. Gaussian noise to every feature cell. Cell (i, j) becomes
/// `x_ij + sigma_fraction * reference_std[j] * z` with `z ~ N(0,1)`.
/// The response (and any truth vector) is unchanged. `reference_std`
/// is the TRAINING set's column standard deviations even when the data
/// being perturbed is a test set, so the noise scale is fixed by
/// training statistics.
pub fn perturb(ds: &Dataset, reference_std: &[f64], spec: &PerturbationSpec) -> Result<Dataset> {
    if reference_std.len() != ds.n_features() {
        return Err(Error::DimensionMismatch(format!(
            "reference_std has {} entries for {} predictors",
            reference_std.len(),
            ds.n_features()
        )));
    }
    if spec.sigma_fraction < 0.0 {
        return Err(Error::InvalidParam("sigma_fraction must be >= 0".into()));
    }
    if spec.sigma_fraction == 0.0 {
        return Ok(ds.clone());
    }
    let scales: Vec<f64> = reference_std
        .iter()
        .map(|s| spec.sigma_fraction * s)
        .collect();
    let mut rng = rng_from_seed(spec.seed);
    let q = ds.n_features();
    let mut features = ds.features.clone();
    for (idx, cell) in features.iter_mut().enumerate() {
        let z: f64 = StandardNormal.sample(&mut rng);
        *cell += scales[idx % q] * z;
    }
    let column_std = column_stats_of(&features, ds.n, ds.q);
    Ok(Dataset {
        features,
        n: ds.n,
        q: ds.q,
        response: ds.response.clone(),
        column_names: ds.column_names.clone(),
        column_std,
        truth: ds.truth.clone(),
    })
}

/// Synthetic one-predictor dataset: `x ~ N(0,1)`, `y = x^2 + eps` with
/// `eps ~ N(0,1)`. The noiseless `x^2` values are stored as the truth
/// vector.
pub fn synth_square(n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::EmptyData);
    }
    let mut rng = rng_from_seed(seed);
    let mut features = Vec::with_capacity(n);
    let mut response = Vec::with_capacity(n);
    let mut truth = Vec::with_capacity(n);
    for _ in 0..n {
        let x: f64 = StandardNormal.sample(&mut rng);
        let eps: f64 = StandardNormal.sample(&mut rng);
        features.push(x);
        truth.push(x * x);
        response.push(x * x + eps);
    }
    Ok(Dataset::new(features, n, 1, response, vec!["x".into()])?.with_truth(truth))
}

/// Per-column population standard deviations (divide by n), by
/// Welford's online algorithm.
pub fn column_stats(ds: &Dataset) -> Vec<f64> {
    ds.column_std.clone()
}

fn column_stats_of(features: &[f64], n: usize, q: usize) -> Vec<f64> {
    let mut mean = vec![0.0; q];
    let mut m2 = vec![0.0; q];
    for i in 0..n {
        let row = &features[i * q..(i + 1) * q];
        let count = (i + 1) as f64;
        for j in 0..q {
            let delta = row[j] - mean[j];
            mean[j] += delta / count;
            m2[j] += delta * (row[j] - mean[j]);
        }
    }
    m2.iter().map(|v| (v / n as f64).sqrt()).collect()
}
