//! One-hot encoding of ensemble leaves into a sparse linear design.
//!
//! Every leaf of every tree becomes a binary indicator column; column 0
//! is the constant 1. Leaves whose indicator patterns on the encoding
//! (training) dataset coincide are collapsed to a single column,
//! provided their leaf values are also identical — only then can one
//! shared coefficient reproduce the ensemble on every input, seen or
//! unseen. A collapsed column counts how many of its member leaves fire
//! on each row, so the design entries are small non-negative integers.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::boosting::GbdtModel;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::tree::assign_leaf;

/// Linear-model coefficients over a leaf design: index 0 is the
/// intercept, indices 1..=p align with design columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficients {
    pub beta: Vec<f64>,
}

impl Coefficients {
    pub fn intercept(&self) -> f64 {
        self.beta[0]
    }

    pub fn n_columns(&self) -> usize {
        self.beta.len() - 1
    }
}

/// Maps (tree index, leaf id) to a design column and can re-encode any
/// dataset with the model it was built from.
#[derive(Debug, Clone)]
pub struct LeafEncoder {
    model: GbdtModel,
    /// `mapping[tree][leaf_id]` = column index in 1..=p.
    mapping: Vec<Vec<usize>>,
    /// Column k (1-based) is represented by `representatives[k-1]` =
    /// (tree, leaf_id), the first member in tree order.
    representatives: Vec<(usize, usize)>,
    n_features: usize,
}

/// Column-major sparse design with integer-valued entries stored as
/// (row, count) pairs sorted by row. Column 0 is all ones.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseDesign {
    n_rows: usize,
    columns: Vec<Vec<(usize, f64)>>,
}

impl SparseDesign {
    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    /// Total number of columns including the intercept column.
    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, k: usize) -> &[(usize, f64)] {
        &self.columns[k]
    }

    /// Build directly from column lists; rows within a column must be
    /// ascending and entries nonzero. Used by solvers' tests and the
    /// robustness module.
    pub fn from_columns(n_rows: usize, columns: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        for col in &columns {
            let mut prev: Option<usize> = None;
            for &(row, v) in col {
                if row >= n_rows || v == 0.0 || !v.is_finite() {
                    return Err(Error::DimensionMismatch(format!(
                        "bad sparse entry (row {row}, value {v}) for {n_rows} rows"
                    )));
                }
                if let Some(p) = prev {
                    if row <= p {
                        return Err(Error::DimensionMismatch(
                            "sparse column rows must be strictly ascending".into(),
                        ));
                    }
                }
                prev = Some(row);
            }
        }
        Ok(Self { n_rows, columns })
    }

    /// Dense row-major copy, for small problems and tests.
    pub fn to_dense(&self) -> Vec<f64> {
        let p1 = self.n_cols();
        let mut out = vec![0.0; self.n_rows * p1];
        for (k, col) in self.columns.iter().enumerate() {
            for &(row, v) in col {
                out[row * p1 + k] = v;
            }
        }
        out
    }

    /// Matrix-vector product Φβ.
    pub fn matvec(&self, beta: &[f64]) -> Vec<f64> {
        assert_eq!(beta.len(), self.n_cols(), "beta length mismatch");
        let mut out = vec![0.0; self.n_rows];
        for (k, col) in self.columns.iter().enumerate() {
            let b = beta[k];
            if b == 0.0 {
                continue;
            }
            for &(row, v) in col {
                out[row] += v * b;
            }
        }
        out
    }

    /// Matrix Market coordinate-format text (1-based indices).
    pub fn to_matrix_market(&self) -> String {
        let nnz: usize = self.columns.iter().map(|c| c.len()).sum();
        let mut out = String::from("%%MatrixMarket matrix coordinate real general\n");
        out.push_str(&format!("{} {} {}\n", self.n_rows, self.n_cols(), nnz));
        for (k, col) in self.columns.iter().enumerate() {
            for &(row, v) in col {
                out.push_str(&format!("{} {} {}\n", row + 1, k + 1, v));
            }
        }
        out
    }
}

#[derive(Serialize, Deserialize)]
struct EncoderMapEntry {
    tree: usize,
    leaf_id: usize,
    column: usize,
}

impl LeafEncoder {
    /// Number of leaf columns p (excluding the intercept column).
    pub fn n_columns(&self) -> usize {
        self.representatives.len()
    }

    pub fn model(&self) -> &GbdtModel {
        &self.model
    }

    pub fn column_of(&self, tree: usize, leaf_id: usize) -> usize {
        self.mapping[tree][leaf_id]
    }

    /// The (tree, leaf) pair that represents column `k` (1-based).
    pub fn representative(&self, k: usize) -> (usize, usize) {
        self.representatives[k - 1]
    }

    /// JSON export of the full (tree, leaf) -> column map.
    pub fn map_json(&self) -> String {
        let entries: Vec<EncoderMapEntry> = self
            .mapping
            .iter()
            .enumerate()
            .flat_map(|(tree, leaves)| {
                leaves
                    .iter()
                    .enumerate()
                    .map(move |(leaf_id, &column)| EncoderMapEntry {
                        tree,
                        leaf_id,
                        column,
                    })
            })
            .collect();
        serde_json::to_string_pretty(&entries).expect("map serializes")
    }

    /// Encode every row of `ds`: column 0 gets 1, and each tree adds 1
    /// to the column of the leaf it routes the row to.
    pub fn encode_rows(&self, ds: &Dataset) -> Result<SparseDesign> {
        if ds.n_features() != self.n_features {
            return Err(Error::DimensionMismatch(format!(
                "encoder expects {} features, dataset has {}",
                self.n_features,
                ds.n_features()
            )));
        }
        let n = ds.n_rows();
        let p = self.n_columns();
        let mut columns: Vec<Vec<(usize, f64)>> = vec![Vec::new(); p + 1];
        columns[0] = (0..n).map(|i| (i, 1.0)).collect();
        for i in 0..n {
            let x = ds.row(i);
            for (tree_idx, tree) in self.model.trees.iter().enumerate() {
                let leaf = assign_leaf(tree, x);
                let col = &mut columns[self.mapping[tree_idx][leaf]];
                match col.last_mut() {
                    Some(entry) if entry.0 == i => entry.1 += 1.0,
                    _ => col.push((i, 1.0)),
                }
            }
        }
        Ok(SparseDesign { n_rows: n, columns })
    }
}

/// Enumerate all leaves of `model`, group those with identical indicator
/// patterns on `train` AND identical leaf values, and assign one design
/// column per group in first-appearance (tree, leaf) order.
pub fn build_encoder(model: &GbdtModel, train: &Dataset) -> Result<LeafEncoder> {
    let q = train.n_features();
    let max_feature = model
        .trees
        .iter()
        .flat_map(|t| t.nodes())
        .filter_map(|n| match n {
            crate::tree::Node::Internal { feature, .. } => Some(*feature),
            _ => None,
        })
        .max();
    if let Some(f) = max_feature {
        if f >= q {
            return Err(Error::DimensionMismatch(format!(
                "model splits on feature {f} but dataset has only {q} features"
            )));
        }
    }
    let n = train.n_rows();
    let words = n.div_ceil(64);
    // Key = (indicator bitset on train, leaf value bits).
    let mut groups: HashMap<(Vec<u64>, u64), usize> = HashMap::new();
    let mut mapping: Vec<Vec<usize>> = Vec::with_capacity(model.trees.len());
    let mut representatives: Vec<(usize, usize)> = Vec::new();
    for (tree_idx, tree) in model.trees.iter().enumerate() {
        let assignments: Vec<usize> = (0..n).map(|i| assign_leaf(tree, train.row(i))).collect();
        let values = tree.leaf_values();
        let mut tree_map = vec![0usize; tree.n_leaves()];
        let mut patterns: Vec<Vec<u64>> = vec![vec![0u64; words]; tree.n_leaves()];
        for (i, &leaf) in assignments.iter().enumerate() {
            patterns[leaf][i / 64] |= 1u64 << (i % 64);
        }
        for (leaf_id, pattern) in patterns.into_iter().enumerate() {
            let key = (pattern, values[leaf_id].to_bits());
            let next_col = representatives.len() + 1;
            let col = *groups.entry(key).or_insert_with(|| {
                representatives.push((tree_idx, leaf_id));
                next_col
            });
            tree_map[leaf_id] = col;
        }
        mapping.push(tree_map);
    }
    Ok(LeafEncoder {
        model: model.clone(),
        mapping,
        representatives,
        n_features: q,
    })
}

/// Coefficients that reproduce the ensemble exactly: intercept = gamma0,
/// and column k carries learning_rate times its representative leaf's
/// value.
pub fn original_coefficients(model: &GbdtModel, encoder: &LeafEncoder) -> Result<Coefficients> {
    if model.gamma0 != encoder.model.gamma0
        || model.learning_rate != encoder.model.learning_rate
        || model.trees != encoder.model.trees
    {
        return Err(Error::EncoderModelMismatch);
    }
    let mut beta = vec![0.0; encoder.n_columns() + 1];
    beta[0] = model.gamma0;
    for (k, &(tree, leaf)) in encoder.representatives.iter().enumerate() {
        beta[k + 1] = model.learning_rate * model.trees[tree].leaf_values()[leaf];
    }
    Ok(Coefficients { beta })
}
