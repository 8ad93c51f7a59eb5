//! Random forest of Gini classification trees.
//!
//! Each tree trains on a bootstrap resample, splits greedily on a random
//! feature subset, and stores the positive-class fraction at its leaves.
//! The forest prediction is the mean of per-tree leaf fractions. Per-tree
//! RNG streams are derived from the forest seed by a fixed hash, so parallel
//! and serial training produce identical forests.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{FeatureMatrix, LearnerSpec};
use crate::stats::derive_seed;

#[derive(Debug, Clone)]
pub struct Forest {
    trees: Vec<Tree>,
}

#[derive(Debug, Clone)]
struct Tree {
    nodes: Vec<Node>,
}

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        rate: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: u32,
        right: u32,
    },
}

impl Forest {
    pub fn predict_one(&self, x: &[f64]) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.predict(x)).sum();
        sum / self.trees.len() as f64
    }

    /// Per-tree leaf rates for a single row; the forest prediction is their mean.
    #[cfg(test)]
    pub(crate) fn tree_predictions(&self, x: &[f64]) -> Vec<f64> {
        self.trees.iter().map(|t| t.predict(x)).collect()
    }
}

impl Tree {
    fn predict(&self, x: &[f64]) -> f64 {
        let mut idx = 0usize;
        loop {
            match &self.nodes[idx] {
                Node::Leaf { rate } => return *rate,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    idx = if x[*feature] <= *threshold {
                        *left as usize
                    } else {
                        *right as usize
                    };
                }
            }
        }
    }
}

pub(super) fn train(spec: &LearnerSpec, features: &FeatureMatrix, labels: &[f64]) -> Forest {
    let trees: Vec<Tree> = (0..spec.trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[t as u64]));
            grow_tree(spec, features, labels, &mut rng)
        })
        .collect();
    Forest { trees }
}

fn grow_tree(
    spec: &LearnerSpec,
    features: &FeatureMatrix,
    labels: &[f64],
    rng: &mut ChaCha8Rng,
) -> Tree {
    let n = features.n_rows();
    let mut sample: Vec<u32> = (0..n).map(|_| rng.gen_range(0..n) as u32).collect();
    let mut nodes = Vec::new();
    let mut feature_pool: Vec<usize> = (0..features.n_cols()).collect();
    let m_try = ((spec.feature_subsample_fraction * features.n_cols() as f64).ceil() as usize)
        .clamp(1, features.n_cols());
    build_node(
        spec,
        features,
        labels,
        &mut sample,
        0,
        m_try,
        feature_pool.as_mut_slice(),
        &mut nodes,
        rng,
    );
    Tree { nodes }
}

#[allow(clippy::too_many_arguments)]
fn build_node(
    spec: &LearnerSpec,
    features: &FeatureMatrix,
    labels: &[f64],
    sample: &mut [u32],
    depth: usize,
    m_try: usize,
    feature_pool: &mut [usize],
    nodes: &mut Vec<Node>,
    rng: &mut ChaCha8Rng,
) -> u32 {
    let n = sample.len();
    let positives: f64 = sample.iter().map(|&i| labels[i as usize]).sum();
    let rate = positives / n as f64;

    let stop = depth >= spec.max_depth || n < 2 * spec.min_leaf || rate == 0.0 || rate == 1.0;
    if !stop {
        if let Some((feature, threshold, split_at)) =
            best_split(spec, features, labels, sample, m_try, feature_pool, rng)
        {
            let idx = nodes.len();
            nodes.push(Node::Leaf { rate }); // placeholder until children exist
            // partition in place: rows with value <= threshold first
            let mut lo = 0usize;
            let mut hi = sample.len();
            while lo < hi {
                if features.row(sample[lo] as usize)[feature] <= threshold {
                    lo += 1;
                } else {
                    hi -= 1;
                    sample.swap(lo, hi);
                }
            }
            debug_assert_eq!(lo, split_at);
            let (left_rows, right_rows) = sample.split_at_mut(split_at);
            let left = build_node(
                spec, features, labels, left_rows, depth + 1, m_try, feature_pool, nodes, rng,
            );
            let right = build_node(
                spec, features, labels, right_rows, depth + 1, m_try, feature_pool, nodes, rng,
            );
            nodes[idx] = Node::Split {
                feature,
                threshold,
                left,
                right,
            };
            return idx as u32;
        }
    }
    nodes.push(Node::Leaf { rate });
    (nodes.len() - 1) as u32
}

/// Exact greedy Gini split over a random feature subset. Returns the chosen
/// feature, threshold, and the left-child size.
fn best_split(
    spec: &LearnerSpec,
    features: &FeatureMatrix,
    labels: &[f64],
    sample: &[u32],
    m_try: usize,
    feature_pool: &mut [usize],
    rng: &mut ChaCha8Rng,
) -> Option<(usize, f64, usize)> {
    let n = sample.len();
    // partial Fisher-Yates for the feature subset
    for i in 0..m_try.min(feature_pool.len()) {
        let j = rng.gen_range(i..feature_pool.len());
        feature_pool.swap(i, j);
    }

    let mut best: Option<(usize, f64, usize, f64)> = None; // (feature, threshold, left_n, score)
    let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(n);
    for &feature in feature_pool.iter().take(m_try) {
        // 0/1 feature columns have a single candidate split; handle them
        // with one counting pass instead of a sort.
        if let Some(candidate) = binary_split(spec, features, labels, sample, feature) {
            consider(&mut best, candidate);
            continue;
        }
        pairs.clear();
        pairs.extend(
            sample
                .iter()
                .map(|&i| (features.row(i as usize)[feature], labels[i as usize])),
        );
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

        let total_pos: f64 = pairs.iter().map(|p| p.1).sum();
        let total = n as f64;
        let mut left_pos = 0.0;
        for i in 0..n - 1 {
            left_pos += pairs[i].1;
            if pairs[i].0 == pairs[i + 1].0 {
                continue; // not a boundary between distinct values
            }
            let left_n = (i + 1) as f64;
            let right_n = total - left_n;
            if (left_n as usize) < spec.min_leaf || (right_n as usize) < spec.min_leaf {
                continue;
            }
            let right_pos = total_pos - left_pos;
            // weighted Gini: sum over children of n_c * 2 p (1-p); smaller is better
            let score = 2.0
                * (left_pos * (left_n - left_pos) / left_n
                    + right_pos * (right_n - right_pos) / right_n);
            let threshold = 0.5 * (pairs[i].0 + pairs[i + 1].0);
            consider(&mut best, (feature, threshold, i + 1, score));
        }
    }
    best.map(|(f, t, l, _)| (f, t, l))
}

fn consider(best: &mut Option<(usize, f64, usize, f64)>, candidate: (usize, f64, usize, f64)) {
    let better = match best {
        None => true,
        Some((_, _, _, s)) => candidate.3 < *s,
    };
    if better {
        *best = Some(candidate);
    }
}

/// Counting-pass split for a strictly 0/1 feature column; None when the
/// column is not binary on this sample or the split is invalid.
fn binary_split(
    spec: &LearnerSpec,
    features: &FeatureMatrix,
    labels: &[f64],
    sample: &[u32],
    feature: usize,
) -> Option<(usize, f64, usize, f64)> {
    let mut n0 = 0.0f64;
    let mut pos0 = 0.0f64;
    let mut n1 = 0.0f64;
    let mut pos1 = 0.0f64;
    for &i in sample {
        let v = features.row(i as usize)[feature];
        let y = labels[i as usize];
        if v == 0.0 {
            n0 += 1.0;
            pos0 += y;
        } else if v == 1.0 {
            n1 += 1.0;
            pos1 += y;
        } else {
            return None;
        }
    }
    if (n0 as usize) < spec.min_leaf || (n1 as usize) < spec.min_leaf {
        return None;
    }
    let score = 2.0 * (pos0 * (n0 - pos0) / n0 + pos1 * (n1 - pos1) / n1);
    Some((feature, 0.5, n0 as usize, score))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::{fit, predict_proba, FittedModel};
    use rand::rngs::StdRng;

    fn forest_of(model: &FittedModel) -> &Forest {
        match &model.repr {
            crate::learners::ModelRepr::Forest(f) => f,
            _ => panic!("expected forest"),
        }
    }

    #[test]
    fn splits_perfectly_separable_binary_feature() {
        let rows: Vec<[f64; 1]> = (0..40).map(|i| [f64::from(i % 2 == 0)]).collect();
        let labels: Vec<f64> = rows.iter().map(|r| r[0]).collect();
        let x = FeatureMatrix::from_rows(&rows);
        let spec = LearnerSpec {
            trees: 25,
            ..LearnerSpec::forest()
        };
        let m = fit(&spec, &x, &labels).unwrap();
        let p = predict_proba(&m, &FeatureMatrix::from_rows(&[[0.0], [1.0]])).unwrap();
        assert!(p[0] < 0.1, "p(0) = {}", p[0]);
        assert!(p[1] > 0.9, "p(1) = {}", p[1]);
    }

    #[test]
    fn prediction_is_mean_of_tree_leaf_rates_and_stays_in_their_range() {
        let mut rng = StdRng::seed_from_u64(3);
        let rows: Vec<[f64; 2]> = (0..300)
            .map(|_| [f64::from(rng.gen_bool(0.5)), rng.gen_range(0.0..1.0)])
            .collect();
        let labels: Vec<f64> = rows
            .iter()
            .map(|r| f64::from(rng.gen_bool(0.2 + 0.6 * r[0])))
            .collect();
        let x = FeatureMatrix::from_rows(&rows);
        let m = fit(&LearnerSpec::forest().with_seed(5), &x, &labels).unwrap();
        let forest = forest_of(&m);
        for probe in [[0.0, 0.2], [1.0, 0.9], [0.0, 0.5]] {
            let per_tree = forest.tree_predictions(&probe);
            let lo = per_tree.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = per_tree.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let p = forest.predict_one(&probe);
            assert!(p >= lo - 1e-12 && p <= hi + 1e-12);
            let mean = per_tree.iter().sum::<f64>() / per_tree.len() as f64;
            assert!((p - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn min_leaf_is_respected() {
        // With min_leaf = 8 and 10 rows, no split can produce two valid
        // children of size >= 8, so every tree is a single leaf.
        let rows: Vec<[f64; 1]> = (0..10).map(|i| [i as f64]).collect();
        let labels: Vec<f64> = (0..10).map(|i| f64::from(i >= 5)).collect();
        let x = FeatureMatrix::from_rows(&rows);
        let spec = LearnerSpec {
            trees: 10,
            min_leaf: 8,
            ..LearnerSpec::forest()
        };
        let m = fit(&spec, &x, &labels).unwrap();
        let forest = forest_of(&m);
        for t in &forest.trees {
            assert_eq!(t.nodes.len(), 1);
        }
    }
}
