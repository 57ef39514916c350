//! Single regression tree trained greedily on a gradient/hessian target
//! with regularized leaf values.
//!
//! Split search is exact: every midpoint between consecutive distinct
//! sorted values of every feature is scored. A sample routes left iff
//! its feature value is strictly below the threshold; ties go right.
//! Equal-gain candidates resolve to the lowest feature index, then the
//! lowest threshold, so training is deterministic.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hyperparameters for a single tree.
///
/// `gamma` is the minimum gain required to accept a split; `reg_lambda`
/// and `reg_alpha` are L2/L1 penalties on leaf values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub gamma: f64,
    pub reg_lambda: f64,
    pub reg_alpha: f64,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            max_depth: 6,
            min_samples_leaf: 1,
            gamma: 0.0,
            reg_lambda: 0.0,
            reg_alpha: 0.0,
        }
    }
}

impl TreeParams {
    pub fn validate(&self) -> Result<()> {
        if self.max_depth < 1 {
            return Err(Error::InvalidParam("max_depth must be >= 1".into()));
        }
        if self.min_samples_leaf < 1 {
            return Err(Error::InvalidParam("min_samples_leaf must be >= 1".into()));
        }
        for (name, v) in [
            ("gamma", self.gamma),
            ("reg_lambda", self.reg_lambda),
            ("reg_alpha", self.reg_alpha),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidParam(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Arena node. Children are indices into the tree's node vector.
#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Internal {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
        leaf_id: usize,
    },
}

/// A trained regression tree. Node 0 is the root; leaf ids are
/// contiguous `0..n_leaves` in depth-first (left-before-right) order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "NodeJson", try_from = "NodeJson")]
pub struct Tree {
    nodes: Vec<Node>,
    n_leaves: usize,
}

/// Wire form: nested nodes rather than the flat arena.
#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum NodeJson {
    Internal {
        feature: usize,
        threshold: f64,
        left: Box<NodeJson>,
        right: Box<NodeJson>,
    },
    Leaf {
        value: f64,
        leaf_id: usize,
    },
}

impl From<Tree> for NodeJson {
    fn from(tree: Tree) -> Self {
        fn nest(tree: &Tree, id: usize) -> NodeJson {
            match tree.nodes[id] {
                Node::Internal {
                    feature,
                    threshold,
                    left,
                    right,
                } => NodeJson::Internal {
                    feature,
                    threshold,
                    left: Box::new(nest(tree, left)),
                    right: Box::new(nest(tree, right)),
                },
                Node::Leaf { value, leaf_id } => NodeJson::Leaf { value, leaf_id },
            }
        }
        nest(&tree, 0)
    }
}

impl TryFrom<NodeJson> for Tree {
    type Error = Error;

    fn try_from(root: NodeJson) -> Result<Self> {
        fn flatten(node: NodeJson, nodes: &mut Vec<Node>, leaf_ids: &mut Vec<usize>) -> usize {
            let id = nodes.len();
            nodes.push(Node::Leaf {
                value: 0.0,
                leaf_id: 0,
            }); // placeholder
            match node {
                NodeJson::Internal {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    let l = flatten(*left, nodes, leaf_ids);
                    let r = flatten(*right, nodes, leaf_ids);
                    nodes[id] = Node::Internal {
                        feature,
                        threshold,
                        left: l,
                        right: r,
                    };
                }
                NodeJson::Leaf { value, leaf_id } => {
                    leaf_ids.push(leaf_id);
                    nodes[id] = Node::Leaf { value, leaf_id };
                }
            }
            id
        }
        let mut nodes = Vec::new();
        let mut leaf_ids = Vec::new();
        flatten(root, &mut nodes, &mut leaf_ids);
        let n_leaves = leaf_ids.len();
        let mut sorted = leaf_ids.clone();
        sorted.sort_unstable();
        if sorted != (0..n_leaves).collect::<Vec<_>>() {
            return Err(Error::InvalidParam(format!(
                "tree leaf ids must be exactly 0..{n_leaves}, got {leaf_ids:?}"
            )));
        }
        Ok(Tree { nodes, n_leaves })
    }
}

impl Tree {
    pub fn n_leaves(&self) -> usize {
        self.n_leaves
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    /// Leaf values indexed by leaf id.
    pub fn leaf_values(&self) -> Vec<f64> {
        let mut values = vec![0.0; self.n_leaves];
        for node in &self.nodes {
            if let Node::Leaf { value, leaf_id } = node {
                values[*leaf_id] = *value;
            }
        }
        values
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("tree serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Soft-threshold of the gradient sum by the L1 penalty.
fn shrink(g: f64, reg_alpha: f64) -> f64 {
    g.signum() * (g.abs() - reg_alpha).max(0.0)
}

/// Structure score S(G, H) of a node holding gradient sum G and hessian
/// sum H.
fn score(g: f64, h: f64, reg_lambda: f64, reg_alpha: f64) -> f64 {
    let t = shrink(g, reg_alpha);
    t * t / (h + reg_lambda)
}

fn leaf_weight(g: f64, h: f64, reg_lambda: f64, reg_alpha: f64) -> f64 {
    -shrink(g, reg_alpha) / (h + reg_lambda)
}

struct Builder<'a> {
    features: &'a [f64],
    q: usize,
    gradients: &'a [f64],
    hessians: &'a [f64],
    params: &'a TreeParams,
    nodes: Vec<Node>,
    n_leaves: usize,
}

#[derive(Clone, Copy)]
struct Split {
    gain: f64,
    feature: usize,
    threshold: f64,
}

impl<'a> Builder<'a> {
    fn feature_value(&self, row: usize, j: usize) -> f64 {
        self.features[row * self.q + j]
    }

    /// Best split over all (feature, midpoint) candidates for the rows in
    /// `indices`, or `None` when no candidate has positive gain.
    fn best_split(&self, indices: &[usize], g_sum: f64, h_sum: f64) -> Option<Split> {
        let p = self.params;
        let parent_score = score(g_sum, h_sum, p.reg_lambda, p.reg_alpha);
        let mut best: Option<Split> = None;
        let mut order: Vec<usize> = Vec::with_capacity(indices.len());
        for feature in 0..self.q {
            order.clear();
            order.extend_from_slice(indices);
            order.sort_unstable_by(|&a, &b| {
                self.feature_value(a, feature)
                    .partial_cmp(&self.feature_value(b, feature))
                    .expect("finite feature values")
            });
            let mut g_left = 0.0;
            let mut h_left = 0.0;
            for pos in 0..order.len() - 1 {
                let row = order[pos];
                g_left += self.gradients[row];
                h_left += self.hessians[row];
                let v = self.feature_value(row, feature);
                let v_next = self.feature_value(order[pos + 1], feature);
                if v == v_next {
                    continue;
                }
                let n_left = pos + 1;
                let n_right = order.len() - n_left;
                if n_left < p.min_samples_leaf || n_right < p.min_samples_leaf {
                    continue;
                }
                // Midpoint between consecutive distinct values; if rounding
                // pulls it down onto the lower value, fall back to the upper
                // value so `x < threshold` still reproduces this partition
                // (ties route right).
                let mut threshold = 0.5 * (v + v_next);
                if threshold <= v {
                    threshold = v_next;
                }
                let g_right = g_sum - g_left;
                let h_right = h_sum - h_left;
                let gain = 0.5
                    * (score(g_left, h_left, p.reg_lambda, p.reg_alpha)
                        + score(g_right, h_right, p.reg_lambda, p.reg_alpha)
                        - parent_score)
                    - p.gamma;
                let better = match best {
                    None => gain > 0.0,
                    Some(b) => gain > b.gain,
                };
                if better {
                    best = Some(Split {
                        gain,
                        feature,
                        threshold,
                    });
                }
            }
        }
        best
    }

    fn build(&mut self, indices: Vec<usize>, depth: usize) -> usize {
        let p = self.params;
        let g_sum: f64 = indices.iter().map(|&i| self.gradients[i]).sum();
        let h_sum: f64 = indices.iter().map(|&i| self.hessians[i]).sum();

        let split = if depth >= p.max_depth || indices.len() < 2 * p.min_samples_leaf {
            None
        } else {
            self.best_split(&indices, g_sum, h_sum)
        };

        let id = self.nodes.len();
        match split {
            Some(s) => {
                self.nodes.push(Node::Leaf {
                    value: 0.0,
                    leaf_id: 0,
                }); // placeholder until children exist
                let (left_idx, right_idx): (Vec<usize>, Vec<usize>) = indices
                    .into_iter()
                    .partition(|&i| self.feature_value(i, s.feature) < s.threshold);
                let left = self.build(left_idx, depth + 1);
                let right = self.build(right_idx, depth + 1);
                self.nodes[id] = Node::Internal {
                    feature: s.feature,
                    threshold: s.threshold,
                    left,
                    right,
                };
            }
            None => {
                let value = leaf_weight(g_sum, h_sum, p.reg_lambda, p.reg_alpha);
                self.nodes.push(Node::Leaf {
                    value,
                    leaf_id: self.n_leaves,
                });
                self.n_leaves += 1;
            }
        }
        id
    }
}

/// Train one tree on per-sample gradients and hessians.
///
/// `features` is row-major with `q` columns; the number of rows is taken
/// from `gradients.len()`.
pub fn fit_tree(
    features: &[f64],
    q: usize,
    gradients: &[f64],
    hessians: &[f64],
    params: &TreeParams,
) -> Result<Tree> {
    params.validate()?;
    let n = gradients.len();
    if n == 0 {
        return Err(Error::EmptyData);
    }
    if q == 0 || features.len() != n * q {
        return Err(Error::DimensionMismatch(format!(
            "feature buffer holds {} values, expected {}x{}",
            features.len(),
            n,
            q
        )));
    }
    if hessians.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} hessians for {} gradients",
            hessians.len(),
            n
        )));
    }
    if hessians.iter().any(|&h| h.is_nan() || h <= 0.0) {
        return Err(Error::InvalidParam(
            "hessians must be strictly positive".into(),
        ));
    }
    let mut builder = Builder {
        features,
        q,
        gradients,
        hessians,
        params,
        nodes: Vec::new(),
        n_leaves: 0,
    };
    builder.build((0..n).collect(), 0);
    Ok(Tree {
        nodes: builder.nodes,
        n_leaves: builder.n_leaves,
    })
}

/// Value of the unique leaf that `x` reaches.
pub fn predict_tree(tree: &Tree, x: &[f64]) -> f64 {
    let mut id = 0;
    loop {
        match tree.nodes[id] {
            Node::Internal {
                feature,
                threshold,
                left,
                right,
            } => {
                id = if x[feature] < threshold { left } else { right };
            }
            Node::Leaf { value, .. } => return value,
        }
    }
}

/// Id of the unique leaf that `x` reaches.
pub fn assign_leaf(tree: &Tree, x: &[f64]) -> usize {
    let mut id = 0;
    loop {
        match tree.nodes[id] {
            Node::Internal {
                feature,
                threshold,
                left,
                right,
            } => {
                id = if x[feature] < threshold { left } else { right };
            }
            Node::Leaf { leaf_id, .. } => return leaf_id,
        }
    }
}
