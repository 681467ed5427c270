//! CART regression trees grown greedily on variance reduction.

use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    /// Best threshold per candidate feature.
    Best,
    /// One uniformly drawn threshold per candidate feature (extra-trees).
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Fraction of features considered at each split.
    pub feature_fraction: f64,
    pub split_mode: SplitMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// Node 0 is the root. Rows with `x[feature] <= threshold` go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub nodes: Vec<Node>,
}

impl RegressionTree {
    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if row[feature] <= threshold {
                        left
                    } else {
                        right
                    }
                }
            }
        }
    }

    /// Feature indices used by at least one split.
    pub fn used_features(&self) -> Vec<usize> {
        let mut used: Vec<usize> = self
            .nodes
            .iter()
            .filter_map(|n| match n {
                Node::Split { feature, .. } => Some(*feature),
                Node::Leaf { .. } => None,
            })
            .collect();
        used.sort_unstable();
        used.dedup();
        used
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

struct Candidate {
    feature: usize,
    threshold: f64,
    gain: f64,
}

/// Grows a tree on the rows in `rows` (indices into `x`/`y`, repeats allowed
/// for bootstrap samples). `rng` is only consulted for feature subsampling
/// and random thresholds.
pub fn grow(
    x: &[Vec<f64>],
    y: &[f64],
    rows: Vec<usize>,
    params: &TreeParams,
    rng: &mut ChaCha8Rng,
) -> RegressionTree {
    let mut tree = RegressionTree { nodes: Vec::new() };
    let n_features = x.first().map_or(0, Vec::len);
    build(&mut tree, x, y, rows, 0, n_features, params, rng);
    tree
}

#[allow(clippy::too_many_arguments)]
fn build(
    tree: &mut RegressionTree,
    x: &[Vec<f64>],
    y: &[f64],
    rows: Vec<usize>,
    depth: usize,
    n_features: usize,
    params: &TreeParams,
    rng: &mut ChaCha8Rng,
) -> usize {
    let id = tree.nodes.len();
    let n = rows.len() as f64;
    let sum: f64 = rows.iter().map(|&r| y[r]).sum();
    let mean = sum / n;
    tree.nodes.push(Node::Leaf { value: mean });

    if depth >= params.max_depth || rows.len() < 2 * params.min_leaf.max(1) {
        return id;
    }
    let sse: f64 = rows.iter().map(|&r| (y[r] - mean).powi(2)).sum();
    if sse <= 1e-24 {
        return id;
    }

    let candidates = candidate_features(n_features, params.feature_fraction, rng);
    let mut best: Option<Candidate> = None;
    for &f in &candidates {
        let found = match params.split_mode {
            SplitMode::Best => best_threshold(x, y, &rows, f, params.min_leaf, sum),
            SplitMode::Random => random_threshold(x, y, &rows, f, params.min_leaf, sum, rng),
        };
        if let Some(c) = found {
            // Strictly better only: earlier features and lower thresholds win ties.
            if best.as_ref().is_none_or(|b| c.gain > b.gain) {
                best = Some(c);
            }
        }
    }
    let Some(split) = best.filter(|c| c.gain > 1e-12 * sse) else {
        return id;
    };

    let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows
        .iter()
        .partition(|&&r| x[r][split.feature] <= split.threshold);
    let left = build(tree, x, y, left_rows, depth + 1, n_features, params, rng);
    let right = build(tree, x, y, right_rows, depth + 1, n_features, params, rng);
    tree.nodes[id] = Node::Split {
        feature: split.feature,
        threshold: split.threshold,
        left,
        right,
    };
    id
}

fn candidate_features(n_features: usize, fraction: f64, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if fraction >= 1.0 {
        return (0..n_features).collect();
    }
    let k = ((fraction * n_features as f64).ceil() as usize).clamp(1, n_features);
    let mut picked = sample(rng, n_features, k).into_vec();
    picked.sort_unstable();
    picked
}

fn gain(sum_left: f64, n_left: usize, sum_total: f64, n_total: usize) -> f64 {
    let sum_right = sum_total - sum_left;
    let n_right = n_total - n_left;
    sum_left * sum_left / n_left as f64 + sum_right * sum_right / n_right as f64
        - sum_total * sum_total / n_total as f64
}

fn best_threshold(
    x: &[Vec<f64>],
    y: &[f64],
    rows: &[usize],
    feature: usize,
    min_leaf: usize,
    sum_total: f64,
) -> Option<Candidate> {
    let min_leaf = min_leaf.max(1);
    let mut order: Vec<usize> = rows.to_vec();
    order.sort_by(|&a, &b| x[a][feature].total_cmp(&x[b][feature]));
    let n = order.len();
    let mut best: Option<Candidate> = None;
    let mut sum_left = 0.0;
    for i in 0..n - 1 {
        sum_left += y[order[i]];
        let n_left = i + 1;
        let (lo, hi) = (x[order[i]][feature], x[order[i + 1]][feature]);
        if lo == hi || n_left < min_leaf || n - n_left < min_leaf {
            continue;
        }
        let g = gain(sum_left, n_left, sum_total, n);
        if best.as_ref().is_none_or(|b| g > b.gain) {
            let mid = lo + (hi - lo) / 2.0;
            let threshold = if mid < hi { mid } else { lo };
            best = Some(Candidate {
                feature,
                threshold,
                gain: g,
            });
        }
    }
    best
}

fn random_threshold(
    x: &[Vec<f64>],
    y: &[f64],
    rows: &[usize],
    feature: usize,
    min_leaf: usize,
    sum_total: f64,
    rng: &mut ChaCha8Rng,
) -> Option<Candidate> {
    let (lo, hi) = rows
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &r| {
            (lo.min(x[r][feature]), hi.max(x[r][feature]))
        });
    if lo >= hi {
        return None;
    }
    let threshold = rng.gen_range(lo..hi);
    let (sum_left, n_left) = rows
        .iter()
        .filter(|&&r| x[r][feature] <= threshold)
        .fold((0.0, 0usize), |(s, c), &r| (s + y[r], c + 1));
    let min_leaf = min_leaf.max(1);
    if n_left < min_leaf || rows.len() - n_left < min_leaf {
        return None;
    }
    Some(Candidate {
        feature,
        threshold,
        gain: gain(sum_left, n_left, sum_total, rows.len()),
    })
}
