//! Bagged decision-tree classifier for merge and keep/discard decisions.
//!
//! Trees are grown CART-style: axis-aligned threshold splits chosen by Gini
//! impurity over a random feature subset, no depth limit, bootstrap sample
//! per tree. Tree index i draws from its own generator seeded with
//! `seed + i`, so training is deterministic no matter how trees are
//! scheduled. Prediction is a majority vote with ties going to class 0.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Serialized model format version.
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node {
    /// Samples with `x[feature] <= threshold` go left, the rest go right.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        prob: [f64; 2],
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Tree {
    /// Node 0 is the root; children refer to indices in this list.
    pub nodes: Vec<Node>,
}

impl Tree {
    fn leaf_prob(&self, x: &[f64]) -> [f64; 2] {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf { prob } => return *prob,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if x[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    };
                }
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ForestModel {
    pub version: u32,
    pub n_features: usize,
    pub feature_names: Vec<String>,
    pub seed: u64,
    pub trees: Vec<Tree>,
}

impl ForestModel {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<ForestModel> {
        let model: ForestModel =
            serde_json::from_str(text).map_err(|e| Error::Model(e.to_string()))?;
        model.validate()?;
        Ok(model)
    }

    /// Structural checks: in-range child and feature references, leaf
    /// probabilities summing to 1.
    pub fn validate(&self) -> Result<()> {
        if self.version != MODEL_VERSION {
            return Err(Error::Model(format!(
                "unsupported model version {}",
                self.version
            )));
        }
        if !self.feature_names.is_empty() && self.feature_names.len() != self.n_features {
            return Err(Error::Model(format!(
                "{} feature names for {} features",
                self.feature_names.len(),
                self.n_features
            )));
        }
        for (t, tree) in self.trees.iter().enumerate() {
            if tree.nodes.is_empty() {
                return Err(Error::Model(format!("tree {t} is empty")));
            }
            for node in &tree.nodes {
                match node {
                    Node::Split {
                        feature,
                        threshold,
                        left,
                        right,
                    } => {
                        if *feature >= self.n_features {
                            return Err(Error::Model(format!(
                                "tree {t}: feature index {feature} out of range"
                            )));
                        }
                        if !threshold.is_finite() {
                            return Err(Error::Model(format!("tree {t}: non-finite threshold")));
                        }
                        if *left >= tree.nodes.len() || *right >= tree.nodes.len() {
                            return Err(Error::Model(format!("tree {t}: child out of range")));
                        }
                    }
                    Node::Leaf { prob } => {
                        if (prob[0] + prob[1] - 1.0).abs() > 1e-9
                            || prob[0] < 0.0
                            || prob[1] < 0.0
                        {
                            return Err(Error::Model(format!(
                                "tree {t}: leaf probabilities {prob:?} do not sum to 1"
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RfParams {
    pub n_trees: usize,
    pub min_leaf: usize,
    /// Candidate features per split; `None` means floor(sqrt(n_features)).
    pub max_features: Option<usize>,
}

impl Default for RfParams {
    fn default() -> Self {
        RfParams {
            n_trees: 100,
            min_leaf: 1,
            max_features: None,
        }
    }
}

/// Trains a forest on rows of equal length with 0/1 class labels.
pub fn rf_train(
    features: &[Vec<f64>],
    classes: &[u8],
    feature_names: &[String],
    params: &RfParams,
    seed: u64,
) -> Result<ForestModel> {
    if features.len() != classes.len() {
        return Err(Error::invalid_parameter(format!(
            "{} feature rows vs {} class labels",
            features.len(),
            classes.len()
        )));
    }
    if features.is_empty() {
        return Err(Error::DegenerateTrainingSet {
            positives: 0,
            negatives: 0,
        });
    }
    let n_features = features[0].len();
    for row in features {
        if row.len() != n_features {
            return Err(Error::FeatureLengthMismatch {
                expected: n_features,
                actual: row.len(),
            });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid_parameter("non-finite feature value"));
        }
    }
    let positives = classes.iter().filter(|&&c| c == 1).count();
    let negatives = classes.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::DegenerateTrainingSet {
            positives,
            negatives,
        });
    }
    if params.n_trees == 0 {
        return Err(Error::invalid_parameter("forest needs at least one tree"));
    }
    let names = if feature_names.is_empty() {
        (0..n_features).map(|i| format!("f{i}")).collect()
    } else if feature_names.len() == n_features {
        feature_names.to_vec()
    } else {
        return Err(Error::invalid_parameter(format!(
            "{} feature names for {n_features} features",
            feature_names.len()
        )));
    };
    let m = params
        .max_features
        .unwrap_or_else(|| (n_features as f64).sqrt().floor() as usize)
        .clamp(1, n_features);
    let trees: Vec<Tree> = (0..params.n_trees)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
            grow_tree(features, classes, n_features, m, params.min_leaf, &mut rng)
        })
        .collect();
    Ok(ForestModel {
        version: MODEL_VERSION,
        n_features,
        feature_names: names,
        seed,
        trees,
    })
}

/// Majority vote over the trees; the probability is the mean class-1 leaf
/// probability. A tied vote returns class 0.
pub fn rf_predict(model: &ForestModel, x: &[f64]) -> Result<(u8, f64)> {
    if x.len() != model.n_features {
        return Err(Error::FeatureLengthMismatch {
            expected: model.n_features,
            actual: x.len(),
        });
    }
    let mut votes1 = 0usize;
    let mut p1_sum = 0.0;
    for tree in &model.trees {
        let prob = tree.leaf_prob(x);
        if prob[1] > prob[0] {
            votes1 += 1;
        }
        p1_sum += prob[1];
    }
    let class = if 2 * votes1 > model.trees.len() { 1 } else { 0 };
    Ok((class, p1_sum / model.trees.len() as f64))
}

fn gini(c0: f64, c1: f64) -> f64 {
    let n = c0 + c1;
    if n == 0.0 {
        return 0.0;
    }
    1.0 - (c0 / n).powi(2) - (c1 / n).powi(2)
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    score: f64,
}

/// Lowest weighted-Gini split of `samples` on one feature, if any.
fn eval_feature(
    features: &[Vec<f64>],
    classes: &[u8],
    samples: &[u32],
    feature: usize,
    min_leaf: usize,
) -> Option<(f64, f64)> {
    let mut pairs: Vec<(f64, u8)> = samples
        .iter()
        .map(|&i| (features[i as usize][feature], classes[i as usize]))
        .collect();
    pairs.sort_unstable_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let total1: usize = pairs.iter().filter(|p| p.1 == 1).count();
    let n = pairs.len();
    let mut best: Option<(f64, f64)> = None;
    let mut left1 = 0usize;
    for k in 1..n {
        if pairs[k - 1].1 == 1 {
            left1 += 1;
        }
        if pairs[k].0 == pairs[k - 1].0 {
            continue;
        }
        if k < min_leaf || n - k < min_leaf {
            continue;
        }
        let left0 = k - left1;
        let right1 = total1 - left1;
        let right0 = (n - k) - right1;
        let score = (k as f64 * gini(left0 as f64, left1 as f64)
            + (n - k) as f64 * gini(right0 as f64, right1 as f64))
            / n as f64;
        let threshold = pairs[k - 1].0 + (pairs[k].0 - pairs[k - 1].0) / 2.0;
        if best.is_none() || score < best.unwrap().1 {
            best = Some((threshold, score));
        }
    }
    best
}

fn grow_tree(
    features: &[Vec<f64>],
    classes: &[u8],
    n_features: usize,
    m: usize,
    min_leaf: usize,
    rng: &mut ChaCha8Rng,
) -> Tree {
    let n = features.len();
    let boot: Vec<u32> = (0..n).map(|_| rng.random_range(0..n) as u32).collect();
    let mut nodes: Vec<Node> = vec![Node::Leaf { prob: [1.0, 0.0] }];
    let mut stack: Vec<(usize, Vec<u32>)> = vec![(0, boot)];
    let mut pool: Vec<usize> = (0..n_features).collect();
    while let Some((slot, samples)) = stack.pop() {
        let c1 = samples
            .iter()
            .filter(|&&i| classes[i as usize] == 1)
            .count();
        let c0 = samples.len() - c1;
        if c0 == 0 || c1 == 0 || samples.len() < 2 * min_leaf {
            nodes[slot] = leaf_of(c0, c1);
            continue;
        }
        // draw m candidate features without replacement
        for i in 0..m {
            let j = rng.random_range(i..n_features);
            pool.swap(i, j);
        }
        let mut best: Option<BestSplit> = None;
        for &f in &pool[..m] {
            if let Some((threshold, score)) = eval_feature(features, classes, &samples, f, min_leaf)
            {
                if best.as_ref().is_none_or(|b| score < b.score) {
                    best = Some(BestSplit {
                        feature: f,
                        threshold,
                        score,
                    });
                }
            }
        }
        if best.is_none() {
            // sampled features were constant on this node; fall back to a
            // full scan so duplicated rows are the only unsplittable case
            for f in 0..n_features {
                if let Some((threshold, score)) =
                    eval_feature(features, classes, &samples, f, min_leaf)
                {
                    if best.as_ref().is_none_or(|b| score < b.score) {
                        best = Some(BestSplit {
                            feature: f,
                            threshold,
                            score,
                        });
                    }
                }
            }
        }
        let Some(split) = best else {
            nodes[slot] = leaf_of(c0, c1);
            continue;
        };
        let (left_samples, right_samples): (Vec<u32>, Vec<u32>) = samples
            .iter()
            .partition(|&&i| features[i as usize][split.feature] <= split.threshold);
        let left = nodes.len();
        nodes.push(Node::Leaf { prob: [1.0, 0.0] });
        let right = nodes.len();
        nodes.push(Node::Leaf { prob: [1.0, 0.0] });
        nodes[slot] = Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right,
        };
        stack.push((left, left_samples));
        stack.push((right, right_samples));
    }
    Tree { nodes }
}

fn leaf_of(c0: usize, c1: usize) -> Node {
    let n = (c0 + c1) as f64;
    Node::Leaf {
        prob: [c0 as f64 / n, c1 as f64 / n],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn separable_set(n: usize) -> (Vec<Vec<f64>>, Vec<u8>) {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for _ in 0..n {
            let a: f64 = rng.random_range(0.0..1.0);
            let b: f64 = rng.random_range(0.0..1.0);
            ys.push(u8::from(a > 0.5));
            xs.push(vec![a, b]);
        }
        (xs, ys)
    }

    #[test]
    fn separable_data_is_interpolated() {
        let (xs, ys) = separable_set(60);
        let model = rf_train(&xs, &ys, &[], &RfParams::default(), 11).unwrap();
        for (x, y) in xs.iter().zip(&ys) {
            let (class, _) = rf_predict(&model, x).unwrap();
            assert_eq!(class, *y);
        }
    }

    #[test]
    fn same_seed_gives_identical_serialization() {
        let (xs, ys) = separable_set(40);
        let a = rf_train(&xs, &ys, &[], &RfParams::default(), 99).unwrap();
        let b = rf_train(&xs, &ys, &[], &RfParams::default(), 99).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        let c = rf_train(&xs, &ys, &[], &RfParams::default(), 100).unwrap();
        assert_ne!(a.to_json(), c.to_json());
    }

    #[test]
    fn xor_pattern_is_learned() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for _ in 0..200 {
            let a: f64 = rng.random_range(0.0..1.0);
            let b: f64 = rng.random_range(0.0..1.0);
            ys.push(u8::from((a > 0.5) ^ (b > 0.5)));
            xs.push(vec![a, b]);
        }
        let model = rf_train(&xs, &ys, &[], &RfParams::default(), 12).unwrap();
        let correct = xs
            .iter()
            .zip(&ys)
            .filter(|(x, y)| rf_predict(&model, x).unwrap().0 == **y)
            .count();
        assert!(correct as f64 >= 0.95 * xs.len() as f64, "{correct}/200");
    }

    #[test]
    fn single_class_data_is_rejected() {
        let xs = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        let ys = vec![1, 1];
        assert!(matches!(
            rf_train(&xs, &ys, &[], &RfParams::default(), 1),
            Err(Error::DegenerateTrainingSet {
                positives: 2,
                negatives: 0
            })
        ));
    }

    #[test]
    fn tied_vote_prefers_class_zero() {
        let model = ForestModel {
            version: MODEL_VERSION,
            n_features: 1,
            feature_names: vec!["f0".into()],
            seed: 0,
            trees: vec![
                Tree {
                    nodes: vec![Node::Leaf { prob: [1.0, 0.0] }],
                },
                Tree {
                    nodes: vec![Node::Leaf { prob: [0.0, 1.0] }],
                },
            ],
        };
        let (class, p) = rf_predict(&model, &[0.3]).unwrap();
        assert_eq!(class, 0);
        assert_eq!(p, 0.5);
    }

    #[test]
    fn unanimous_vote_gives_full_probability() {
        let model = ForestModel {
            version: MODEL_VERSION,
            n_features: 1,
            feature_names: vec!["f0".into()],
            seed: 0,
            trees: vec![
                Tree {
                    nodes: vec![Node::Leaf { prob: [0.0, 1.0] }],
                };
                3
            ],
        };
        let (class, p) = rf_predict(&model, &[0.0]).unwrap();
        assert_eq!(class, 1);
        assert_eq!(p, 1.0);
    }

    #[test]
    fn feature_length_mismatch_is_rejected() {
        let (xs, ys) = separable_set(20);
        let model = rf_train(&xs, &ys, &[], &RfParams::default(), 3).unwrap();
        assert!(rf_predict(&model, &[0.1]).is_err());
        assert!(rf_predict(&model, &[0.1, 0.2, 0.3]).is_err());
    }

    #[test]
    fn json_round_trip_preserves_predictions() {
        let (xs, ys) = separable_set(30);
        let model = rf_train(&xs, &ys, &[], &RfParams::default(), 21).unwrap();
        let back = ForestModel::from_json(&model.to_json()).unwrap();
        assert_eq!(model.to_json(), back.to_json());
        for x in &xs {
            assert_eq!(
                rf_predict(&model, x).unwrap(),
                rf_predict(&back, x).unwrap()
            );
        }
    }

    #[test]
    fn corrupt_models_fail_validation() {
        let model = ForestModel {
            version: MODEL_VERSION,
            n_features: 2,
            feature_names: vec![],
            seed: 0,
            trees: vec![Tree {
                nodes: vec![Node::Split {
                    feature: 5,
                    threshold: 0.0,
                    left: 1,
                    right: 1,
                }],
            }],
        };
        assert!(model.validate().is_err());
        let bad_leaf = ForestModel {
            version: MODEL_VERSION,
            n_features: 1,
            feature_names: vec![],
            seed: 0,
            trees: vec![Tree {
                nodes: vec![Node::Leaf { prob: [0.7, 0.7] }],
            }],
        };
        assert!(bad_leaf.validate().is_err());
    }
}

