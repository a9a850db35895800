//! Honest regression forest.
//!
//! Each tree draws a resample of the training rows, splits the distinct rows
//! of the resample into a structure set (which chooses splits by variance
//! reduction) and a disjoint estimation set (which supplies the leaf means).

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ActeError, Result};
use crate::rng::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RfHyperparams {
    pub n_trees: usize,
    /// Features tried per split; `None` means `ceil(p / 3)`.
    pub mtry: Option<usize>,
    pub min_node_size: usize,
    /// Fraction of a tree's distinct resampled rows used to choose splits.
    pub honesty_fraction: f64,
    pub subsample_fraction: f64,
    pub replace: bool,
    pub seed: u64,
}

impl Default for RfHyperparams {
    fn default() -> Self {
        RfHyperparams {
            n_trees: 500,
            mtry: None,
            min_node_size: 5,
            honesty_fraction: 0.5,
            subsample_fraction: 1.0,
            replace: true,
            seed: 0,
        }
    }
}

impl RfHyperparams {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(ActeError::Config("n_trees must be positive".into()));
        }
        if self.mtry == Some(0) {
            return Err(ActeError::Config("mtry must be positive".into()));
        }
        if self.min_node_size == 0 {
            return Err(ActeError::Config("min_node_size must be positive".into()));
        }
        if !(self.honesty_fraction > 0.0 && self.honesty_fraction < 1.0) {
            return Err(ActeError::Config("honesty_fraction must lie in (0, 1)".into()));
        }
        if !(self.subsample_fraction > 0.0 && self.subsample_fraction <= 1.0) {
            return Err(ActeError::Config("subsample_fraction must lie in (0, 1]".into()));
        }
        Ok(())
    }

    pub fn effective_mtry(&self, n_features: usize) -> usize {
        let default = n_features.div_ceil(3);
        self.mtry.unwrap_or(default).clamp(1, n_features.max(1))
    }
}

const LEAF: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct Node {
    /// Split feature, or `LEAF`.
    feature: u32,
    /// Split threshold (`x <= threshold` goes left), or the leaf value.
    value: f64,
    left: u32,
    right: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HonestTree {
    seed: u64,
    nodes: Vec<Node>,
}

/// The resample a tree was grown from, split into its two honest halves.
/// Indices repeat according to their multiplicity in the resample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeSample {
    pub structure: Vec<usize>,
    pub estimation: Vec<usize>,
}

/// A split as (node depth-first position, feature, threshold).
pub type SplitSignature = Vec<(usize, u32, u64)>;

impl HonestTree {
    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| n.feature == LEAF).count()
    }

    /// Regenerates the structure/estimation resample from the tree's seed.
    pub fn sample(&self, n_train: usize, params: &RfHyperparams) -> TreeSample {
        draw_sample(self.seed, n_train, params)
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut at = 0usize;
        loop {
            let node = &self.nodes[at];
            if node.feature == LEAF {
                return node.value;
            }
            at = if row[node.feature as usize] <= node.value {
                node.left as usize
            } else {
                node.right as usize
            };
        }
    }

    /// Index of the leaf reached by `row`.
    pub fn leaf_of(&self, row: &[f64]) -> usize {
        let mut at = 0usize;
        loop {
            let node = &self.nodes[at];
            if node.feature == LEAF {
                return at;
            }
            at = if row[node.feature as usize] <= node.value {
                node.left as usize
            } else {
                node.right as usize
            };
        }
    }

    pub fn leaf_value(&self, leaf: usize) -> Option<f64> {
        self.nodes.get(leaf).filter(|n| n.feature == LEAF).map(|n| n.value)
    }

    /// Split structure with thresholds as raw bits.
    pub fn split_signature(&self) -> SplitSignature {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.feature != LEAF)
            .map(|(i, n)| (i, n.feature, n.value.to_bits()))
            .collect()
    }
}

fn draw_sample(seed: u64, n: usize, params: &RfHyperparams) -> TreeSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = ((params.subsample_fraction * n as f64).round() as usize).clamp(1, n);
    let mut counts = vec![0u32; n];
    if params.replace {
        for _ in 0..m {
            counts[rng.random_range(0..n)] += 1;
        }
    } else {
        for i in index::sample(&mut rng, n, m) {
            counts[i] += 1;
        }
    }
    let mut distinct: Vec<usize> = (0..n).filter(|&i| counts[i] > 0).collect();
    distinct.shuffle(&mut rng);
    let n_struct = if distinct.len() < 2 {
        distinct.len()
    } else {
        ((params.honesty_fraction * distinct.len() as f64).round() as usize).clamp(1, distinct.len() - 1)
    };
    let mut in_structure = vec![false; n];
    for &i in &distinct[..n_struct] {
        in_structure[i] = true;
    }
    let mut structure = Vec::with_capacity(m);
    let mut estimation = Vec::with_capacity(m);
    for i in 0..n {
        let target = if in_structure[i] { &mut structure } else { &mut estimation };
        for _ in 0..counts[i] {
            target.push(i);
        }
    }
    TreeSample { structure, estimation }
}

/// Honest random forest over a row-major feature matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HonestForest {
    params: RfHyperparams,
    n_features: usize,
    n_train: usize,
    trees: Vec<HonestTree>,
}

struct Grower<'a> {
    x: &'a [f64],
    y: &'a [f64],
    p: usize,
    mtry: usize,
    min_node: usize,
}

struct Pending {
    node: usize,
    start: usize,
    end: usize,
}

impl Grower<'_> {
    fn feature(&self, row: usize, f: usize) -> f64 {
        self.x[row * self.p + f]
    }

    /// Best (feature, threshold, gain) for the draws in `idx`.
    fn best_split(&self, idx: &[u32], rng: &mut ChaCha8Rng, buf: &mut Vec<(f64, f64)>) -> Option<(usize, f64)> {
        let n = idx.len();
        if n < 2 * self.min_node {
            return None;
        }
        let mean = idx.iter().map(|&i| self.y[i as usize]).sum::<f64>() / n as f64;
        let sse: f64 = idx.iter().map(|&i| (self.y[i as usize] - mean).powi(2)).sum();
        if sse <= 0.0 {
            return None;
        }
        let total: f64 = idx.iter().map(|&i| self.y[i as usize] - mean).sum();
        let base = total * total / n as f64;
        let mut best: Option<(usize, f64, f64)> = None;
        for f in index::sample(rng, self.p, self.mtry) {
            buf.clear();
            buf.extend(idx.iter().map(|&i| (self.feature(i as usize, f), self.y[i as usize] - mean)));
            buf.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
            if buf[0].0 == buf[n - 1].0 {
                continue;
            }
            let mut left = 0.0;
            for k in 0..n - 1 {
                left += buf[k].1;
                let n_left = k + 1;
                if n_left < self.min_node {
                    continue;
                }
                if n - n_left < self.min_node {
                    break;
                }
                let (lo, hi) = (buf[k].0, buf[k + 1].0);
                if lo == hi {
                    continue;
                }
                let right = total - left;
                let gain = left * left / n_left as f64 + right * right / (n - n_left) as f64 - base;
                if best.is_none_or(|(_, _, g)| gain > g) {
                    let mut thr = 0.5 * (lo + hi);
                    if thr >= hi {
                        thr = lo;
                    }
                    best = Some((f, thr, gain));
                }
            }
        }
        match best {
            Some((f, thr, gain)) if gain > 1e-12 * sse => Some((f, thr)),
            _ => None,
        }
    }

    fn grow(&self, structure: &[usize], rng: &mut ChaCha8Rng) -> Vec<Node> {
        let mut idx: Vec<u32> = structure.iter().map(|&i| i as u32).collect();
        let mut nodes = vec![Node {
            feature: LEAF,
            value: 0.0,
            left: 0,
            right: 0,
        }];
        let mut stack = vec![Pending {
            node: 0,
            start: 0,
            end: idx.len(),
        }];
        let mut buf = Vec::with_capacity(idx.len());
        while let Some(Pending { node, start, end }) = stack.pop() {
            let slice = &mut idx[start..end];
            let Some((f, thr)) = self.best_split(slice, rng, &mut buf) else {
                continue;
            };
            let mut split = 0;
            for k in 0..slice.len() {
                if self.feature(slice[k] as usize, f) <= thr {
                    slice.swap(k, split);
                    split += 1;
                }
            }
            let left = nodes.len();
            nodes.push(Node {
                feature: LEAF,
                value: 0.0,
                left: 0,
                right: 0,
            });
            nodes.push(Node {
                feature: LEAF,
                value: 0.0,
                left: 0,
                right: 0,
            });
            nodes[node] = Node {
                feature: f as u32,
                value: thr,
                left: left as u32,
                right: left as u32 + 1,
            };
            // right pushed first so the left subtree is expanded first
            stack.push(Pending {
                node: left + 1,
                start: start + split,
                end,
            });
            stack.push(Pending {
                node: left,
                start,
                end: start + split,
            });
        }
        nodes
    }
}

/// Fills leaf values with estimation-set means, falling back to the nearest
/// ancestor with estimation points, and finally to the structure mean.
fn honest_leaf_values(nodes: &mut [Node], x: &[f64], y: &[f64], p: usize, sample: &TreeSample) {
    let mut parent = vec![usize::MAX; nodes.len()];
    for (i, n) in nodes.iter().enumerate() {
        if n.feature != LEAF {
            parent[n.left as usize] = i;
            parent[n.right as usize] = i;
        }
    }
    let mut sum = vec![0.0; nodes.len()];
    let mut count = vec![0usize; nodes.len()];
    for &i in &sample.estimation {
        let row = &x[i * p..(i + 1) * p];
        let mut at = 0usize;
        loop {
            sum[at] += y[i];
            count[at] += 1;
            let n = &nodes[at];
            if n.feature == LEAF {
                break;
            }
            at = if row[n.feature as usize] <= n.value {
                n.left as usize
            } else {
                n.right as usize
            };
        }
    }
    let fallback = if sample.structure.is_empty() {
        0.0
    } else {
        sample.structure.iter().map(|&i| y[i]).sum::<f64>() / sample.structure.len() as f64
    };
    for leaf in 0..nodes.len() {
        if nodes[leaf].feature != LEAF {
            continue;
        }
        let mut at = leaf;
        let value = loop {
            if count[at] > 0 {
                break sum[at] / count[at] as f64;
            }
            if parent[at] == usize::MAX {
                break fallback;
            }
            at = parent[at];
        };
        nodes[leaf].value = value;
    }
}

impl HonestForest {
    /// Fits on row-major `x` (`y.len()` rows of `p` features).
    pub fn fit(params: &RfHyperparams, x: &[f64], p: usize, y: &[f64]) -> Result<Self> {
        params.validate()?;
        let n = y.len();
        if p == 0 {
            return Err(ActeError::InsufficientData("forest needs at least one feature".into()));
        }
        if x.len() != n * p {
            return Err(ActeError::Schema("feature matrix shape does not match targets".into()));
        }
        let grower = Grower {
            x,
            y,
            p,
            mtry: params.effective_mtry(p),
            min_node: params.min_node_size,
        };
        let trees = (0..params.n_trees)
            .into_par_iter()
            .map(|t| {
                let seed = derive_seed(params.seed, &[t as u64]);
                let sample = draw_sample(seed, n, params);
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[u64::MAX]));
                let mut nodes = grower.grow(&sample.structure, &mut rng);
                honest_leaf_values(&mut nodes, x, y, p, &sample);
                HonestTree { seed, nodes }
            })
            .collect();
        Ok(HonestForest {
            params: params.clone(),
            n_features: p,
            n_train: n,
            trees,
        })
    }

    pub fn params(&self) -> &RfHyperparams {
        &self.params
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_train(&self) -> usize {
        self.n_train
    }

    pub fn trees(&self) -> &[HonestTree] {
        &self.trees
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let s: f64 = self.trees.iter().map(|t| t.predict_row(row)).sum();
        s / self.trees.len() as f64
    }

    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        x.par_chunks(self.n_features).map(|row| self.predict_row(row)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn params(n_trees: usize, seed: u64) -> RfHyperparams {
        RfHyperparams {
            n_trees,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn constant_targets_predict_constant() {
        let x: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let y = vec![3.5; 50];
        let f = HonestForest::fit(&params(20, 1), &x, 1, &y).unwrap();
        for v in f.predict(&[0.0, 10.5, 100.0]) {
            assert_eq!(v, 3.5);
        }
        assert!(f.trees().iter().all(|t| t.n_nodes() == 1));
    }

    #[test]
    fn structure_and_estimation_are_disjoint() {
        let n = 300;
        let x: Vec<f64> = (0..n).map(|i| (i % 17) as f64).collect();
        let y: Vec<f64> = (0..n).map(|i| (i % 5) as f64).collect();
        let p = params(25, 9);
        let f = HonestForest::fit(&p, &x, 1, &y).unwrap();
        for t in f.trees() {
            let s = t.sample(n, &p);
            let mut mark = vec![0u8; n];
            for &i in &s.structure {
                mark[i] |= 1;
            }
            for &i in &s.estimation {
                mark[i] |= 2;
            }
            assert!(mark.iter().all(|&m| m != 3));
            assert_eq!(s.structure.len() + s.estimation.len(), n);
        }
    }

    #[test]
    fn leaf_values_are_estimation_means() {
        let n = 200;
        let x: Vec<f64> = (0..n).map(|i| (i % 10) as f64).collect();
        let y: Vec<f64> = (0..n).map(|i| (i % 10) as f64 * 2.0 + (i % 3) as f64).collect();
        let p = params(5, 4);
        let f = HonestForest::fit(&p, &x, 1, &y).unwrap();
        for t in f.trees() {
            let s = t.sample(n, &p);
            let mut acc: std::collections::HashMap<usize, (f64, usize)> = Default::default();
            for &i in &s.estimation {
                let e = acc.entry(t.leaf_of(&x[i..i + 1])).or_default();
                e.0 += y[i];
                e.1 += 1;
            }
            for (leaf, (sum, cnt)) in acc {
                let v = t.leaf_value(leaf).unwrap();
                assert!((v - sum / cnt as f64).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn invalid_hyperparameters() {
        let x = vec![0.0, 1.0];
        let y = vec![0.0, 1.0];
        let mut p = params(0, 0);
        assert!(HonestForest::fit(&p, &x, 1, &y).is_err());
        p.n_trees = 1;
        p.honesty_fraction = 1.0;
        assert!(HonestForest::fit(&p, &x, 1, &y).is_err());
        p.honesty_fraction = 0.5;
        p.subsample_fraction = 0.0;
        assert!(HonestForest::fit(&p, &x, 1, &y).is_err());
        p.subsample_fraction = 1.0;
        p.min_node_size = 0;
        assert!(HonestForest::fit(&p, &x, 1, &y).is_err());
    }

    #[test]
    fn fits_a_smooth_curve() {
        let n = 2000;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let noise = Normal::new(0.0, 0.1).unwrap();
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..30.0)).collect();
        let y: Vec<f64> = x.iter().map(|a| (a / 3.0).sin() + noise.sample(&mut rng)).collect();
        let f = HonestForest::fit(&params(200, 3), &x, 1, &y).unwrap();
        let test: Vec<f64> = (0..500).map(|i| 0.5 + i as f64 * 29.0 / 500.0).collect();
        let pred = f.predict(&test);
        let rmse = (test.iter().zip(&pred).map(|(a, p)| ((a / 3.0).sin() - p).powi(2)).sum::<f64>() / 500.0).sqrt();
        assert!(rmse <= 0.2, "rmse {rmse}");
    }
}
