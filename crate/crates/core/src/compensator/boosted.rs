use serde::{Deserialize, Serialize};

use super::dataset::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoostParams {
    pub rounds: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    /// Minimum rows on each side of a split.
    pub min_samples_leaf: usize,
}

impl Default for BoostParams {
    fn default() -> Self {
        Self {
            rounds: 200,
            max_depth: 3,
            learning_rate: 0.1,
            min_samples_leaf: 1,
        }
    }
}

impl BoostParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.rounds == 0 || self.max_depth == 0 || self.min_samples_leaf == 0 {
            return Err("rounds, max_depth and min_samples_leaf must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(format!("learning_rate must be in (0, 1], got {}", self.learning_rate));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum Node {
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf { value: f64 },
}

/// A regression tree stored as a flat node array rooted at index 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] <= threshold { left } else { right },
            }
        }
    }
}

/// Squared-loss gradient boosting. Predictions start from the raw forecast
/// (feature 0) rather than a constant, so the trees learn the correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedModel {
    pub params: BoostParams,
    /// Index of the feature used as the starting prediction.
    pub base_feature: usize,
    pub trees: Vec<Tree>,
}

impl BoostedModel {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let lr = self.params.learning_rate;
        self.trees
            .iter()
            .fold(x[self.base_feature], |acc, t| acc + lr * t.predict(x))
    }
}

pub fn fit_boosted(data: &Dataset, params: &BoostParams) -> BoostedModel {
    let n = data.len();
    let p = data.n_features();
    // Row order of every feature, ascending, ties by row index.
    let sorted: Vec<Vec<usize>> = (0..p)
        .map(|j| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&a, &b| data.features[a][j].total_cmp(&data.features[b][j]).then(a.cmp(&b)));
            idx
        })
        .collect();
    let mut prediction: Vec<f64> = data.features.iter().map(|r| r[0]).collect();
    let mut trees = Vec::with_capacity(params.rounds);
    let mut node_of = vec![0usize; n];
    for _ in 0..params.rounds {
        let residual: Vec<f64> = data.targets.iter().zip(&prediction).map(|(y, f)| y - f).collect();
        let tree = grow_tree(data, &sorted, &residual, params, &mut node_of);
        for (i, row) in data.features.iter().enumerate() {
            prediction[i] += params.learning_rate * tree.predict(row);
        }
        trees.push(tree);
    }
    BoostedModel {
        params: *params,
        base_feature: 0,
        trees,
    }
}

struct Frontier {
    node: usize,
    depth: usize,
    count: usize,
    sum: f64,
}

struct BestSplit {
    gain: f64,
    feature: usize,
    threshold: f64,
}

/// Grow one tree level by level. `node_of[i]` tracks the node holding row i.
fn grow_tree(
    data: &Dataset,
    sorted: &[Vec<usize>],
    residual: &[f64],
    params: &BoostParams,
    node_of: &mut [usize],
) -> Tree {
    let n = residual.len();
    node_of.iter_mut().for_each(|v| *v = 0);
    let mut nodes = vec![Node::Leaf {
        value: residual.iter().sum::<f64>() / n as f64,
    }];
    let mut frontier = vec![Frontier {
        node: 0,
        depth: 0,
        count: n,
        sum: residual.iter().sum(),
    }];
    while !frontier.is_empty() {
        let open: Vec<&Frontier> = frontier
            .iter()
            .filter(|f| f.depth < params.max_depth && f.count >= 2 * params.min_samples_leaf)
            .collect();
        if open.is_empty() {
            break;
        }
        // Per-node scan state, indexed by node id.
        let mut slot = vec![usize::MAX; nodes.len()];
        for (k, f) in open.iter().enumerate() {
            slot[f.node] = k;
        }
        let mut best: Vec<Option<BestSplit>> = open.iter().map(|_| None).collect();
        for (j, order) in sorted.iter().enumerate() {
            let mut left_count = vec![0usize; open.len()];
            let mut left_sum = vec![0.0f64; open.len()];
            let mut last_value = vec![f64::NAN; open.len()];
            for &i in order {
                let k = slot[node_of[i]];
                if k == usize::MAX {
                    continue;
                }
                let x = data.features[i][j];
                let f = open[k];
                // Evaluate a split between the previous distinct value and x.
                if left_count[k] >= params.min_samples_leaf
                    && f.count - left_count[k] >= params.min_samples_leaf
                    && x > last_value[k]
                {
                    let (lc, ls) = (left_count[k] as f64, left_sum[k]);
                    let (rc, rs) = ((f.count - left_count[k]) as f64, f.sum - ls);
                    let gain = ls * ls / lc + rs * rs / rc - f.sum * f.sum / f.count as f64;
                    if gain > 1e-12 && best[k].as_ref().is_none_or(|b| gain > b.gain) {
                        best[k] = Some(BestSplit {
                            gain,
                            feature: j,
                            threshold: midpoint(last_value[k], x),
                        });
                    }
                }
                left_count[k] += 1;
                left_sum[k] += residual[i];
                last_value[k] = x;
            }
        }
        let mut next = Vec::new();
        let mut split_children: Vec<Option<(usize, usize, usize, f64)>> = vec![None; nodes.len()];
        for (k, f) in open.iter().enumerate() {
            let Some(b) = &best[k] else { continue };
            let left = nodes.len();
            let right = left + 1;
            nodes.push(Node::Leaf { value: 0.0 });
            nodes.push(Node::Leaf { value: 0.0 });
            nodes[f.node] = Node::Split {
                feature: b.feature,
                threshold: b.threshold,
                left,
                right,
            };
            split_children[f.node] = Some((left, right, b.feature, b.threshold));
        }
        // Route rows and accumulate child statistics.
        let mut count = vec![0usize; nodes.len()];
        let mut sum = vec![0.0f64; nodes.len()];
        for i in 0..n {
            if let Some(Some((l, r, feat, thr))) = split_children.get(node_of[i]) {
                node_of[i] = if data.features[i][*feat] <= *thr { *l } else { *r };
                count[node_of[i]] += 1;
                sum[node_of[i]] += residual[i];
            }
        }
        for f in &frontier {
            if let Some(Some((l, r, _, _))) = split_children.get(f.node) {
                for c in [*l, *r] {
                    nodes[c] = Node::Leaf {
                        value: sum[c] / count[c] as f64,
                    };
                    next.push(Frontier {
                        node: c,
                        depth: f.depth + 1,
                        count: count[c],
                        sum: sum[c],
                    });
                }
            }
        }
        frontier = next;
    }
    Tree { nodes }
}

/// A threshold strictly separating `lo < hi` under `<=`.
fn midpoint(lo: f64, hi: f64) -> f64 {
    let m = 0.5 * (lo + hi);
    if m < hi {
        m
    } else {
        lo
    }
}
