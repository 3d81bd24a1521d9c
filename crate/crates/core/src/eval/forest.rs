//! Baseline classifiers on single segments: a class-weighted random forest of
//! Gini CART trees, and the majority class.

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::NUM_CLASSES;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_samples_split: usize,
    /// Bootstrap with probability inversely proportional to class frequency.
    pub balanced_bootstrap: bool,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 10,
            max_depth: 10,
            min_samples_split: 2,
            balanced_bootstrap: true,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 || self.max_depth == 0 {
            return Err(Error::Config("n_trees and max_depth must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Leaf {
        class: usize,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTree {
    root: Node,
}

fn gini(counts: &[usize; NUM_CLASSES], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>()
}

fn plurality(counts: &[usize; NUM_CLASSES]) -> usize {
    let mut best = 0;
    for c in 1..NUM_CLASSES {
        if counts[c] > counts[best] {
            best = c;
        }
    }
    best
}

struct Builder<'a, R> {
    x: ArrayView2<'a, f64>,
    y: &'a [usize],
    max_depth: usize,
    min_split: usize,
    n_features: usize,
    rng: &'a mut R,
}

impl<R: Rng> Builder<'_, R> {
    fn build(&mut self, idx: &mut [usize], depth: usize) -> Node {
        let mut counts = [0; NUM_CLASSES];
        for &i in idx.iter() {
            counts[self.y[i]] += 1;
        }
        let leaf = Node::Leaf { class: plurality(&counts) };
        if depth >= self.max_depth || idx.len() < self.min_split || counts.iter().filter(|&&c| c > 0).count() < 2 {
            return leaf;
        }
        let parent = gini(&counts, idx.len());
        let mut best: Option<(f64, usize, f64)> = None;
        let features = sample(self.rng, self.x.ncols(), self.n_features);
        for f in features.iter() {
            idx.sort_by(|&a, &b| self.x[[a, f]].total_cmp(&self.x[[b, f]]));
            let mut left = [0; NUM_CLASSES];
            for k in 1..idx.len() {
                left[self.y[idx[k - 1]]] += 1;
                let (lo, hi) = (self.x[[idx[k - 1], f]], self.x[[idx[k], f]]);
                if lo == hi {
                    continue;
                }
                let right: [usize; NUM_CLASSES] = std::array::from_fn(|c| counts[c] - left[c]);
                let n = idx.len() as f64;
                let impurity = (k as f64 * gini(&left, k) + (n - k as f64) * gini(&right, idx.len() - k)) / n;
                if best.is_none_or(|(b, _, _)| impurity < b) {
                    best = Some((impurity, f, 0.5 * (lo + hi)));
                }
            }
        }
        let Some((impurity, feature, threshold)) = best else {
            return leaf;
        };
        if impurity >= parent {
            return leaf;
        }
        let x = self.x;
        let split = partition(idx, |&i| x[[i, feature]] <= threshold);
        let (l, r) = idx.split_at_mut(split);
        Node::Split {
            feature,
            threshold,
            left: Box::new(self.build(l, depth + 1)),
            right: Box::new(self.build(r, depth + 1)),
        }
    }
}

fn partition<T, F: Fn(&T) -> bool>(v: &mut [T], pred: F) -> usize {
    let mut k = 0;
    for i in 0..v.len() {
        if pred(&v[i]) {
            v.swap(i, k);
            k += 1;
        }
    }
    k
}

impl DecisionTree {
    pub fn predict(&self, row: ArrayView1<f64>) -> usize {
        let mut node = &self.root;
        loop {
            match node {
                Node::Leaf { class } => return *class,
                Node::Split { feature, threshold, left, right } => {
                    node = if row[*feature] <= *threshold { left } else { right };
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RandomForest {
    trees: Vec<DecisionTree>,
}

fn check_training_set(x: &ArrayView2<f64>, y: &[usize]) -> Result<()> {
    if x.nrows() == 0 || x.nrows() != y.len() {
        return Err(Error::Shape(format!("{} rows, {} labels", x.nrows(), y.len())));
    }
    if let Some(&c) = y.iter().find(|&&c| c >= NUM_CLASSES) {
        return Err(Error::InvalidInput(format!("class index {c} out of range")));
    }
    Ok(())
}

impl RandomForest {
    /// `y` holds 0-based class indices.
    pub fn fit<R: Rng>(x: ArrayView2<f64>, y: &[usize], cfg: &ForestConfig, rng: &mut R) -> Result<Self> {
        check_training_set(&x, y)?;
        cfg.validate()?;
        let n = y.len();
        let mut counts = [0usize; NUM_CLASSES];
        for &c in y {
            counts[c] += 1;
        }
        let weights: Vec<f64> = y
            .iter()
            .map(|&c| if cfg.balanced_bootstrap { 1.0 / counts[c] as f64 } else { 1.0 })
            .collect();
        let draw = WeightedIndex::new(&weights).map_err(|e| Error::InvalidInput(e.to_string()))?;
        let n_features = ((x.ncols() as f64).sqrt().round() as usize).clamp(1, x.ncols());
        let trees = (0..cfg.n_trees)
            .map(|_| {
                let mut idx: Vec<usize> = (0..n).map(|_| draw.sample(rng)).collect();
                let mut b = Builder {
                    x,
                    y,
                    max_depth: cfg.max_depth,
                    min_split: cfg.min_samples_split.max(2),
                    n_features,
                    rng: &mut *rng,
                };
                DecisionTree { root: b.build(&mut idx, 0) }
            })
            .collect();
        Ok(RandomForest { trees })
    }

    /// Fraction of trees voting for each class, per row.
    pub fn predict_proba(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros((x.nrows(), NUM_CLASSES));
        let share = 1.0 / self.trees.len() as f64;
        for (row, mut o) in x.rows().into_iter().zip(out.rows_mut()) {
            for t in &self.trees {
                o[t.predict(row)] += share;
            }
        }
        out
    }
}

/// Always predicts the most frequent training class; ties go to the lower class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MajorityClassifier {
    pub class: usize,
}

impl MajorityClassifier {
    pub fn fit(y: &[usize]) -> Result<Self> {
        if y.is_empty() {
            return Err(Error::InvalidInput("empty training labels".into()));
        }
        let mut counts = [0usize; NUM_CLASSES];
        for &c in y {
            counts[c] += 1;
        }
        Ok(MajorityClassifier { class: plurality(&counts) })
    }

    pub fn predict_proba(&self, rows: usize) -> Array2<f64> {
        Array2::from_shape_fn((rows, NUM_CLASSES), |(_, c)| if c == self.class { 1.0 } else { 0.0 })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::argmax;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn predict(f: &RandomForest, x: &Array2<f64>) -> Vec<usize> {
        f.predict_proba(x.view()).rows().into_iter().map(argmax).collect()
    }

    #[test]
    fn separable_toy_set_fits_perfectly() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Array2::from_shape_fn((90, 2), |_| rng.random_range(0.0..1.0));
        let y: Vec<usize> = x
            .rows()
            .into_iter()
            .map(|r| if r[0] < 0.3 { 0 } else if r[1] < 0.5 { 1 } else { 2 })
            .collect();
        let f = RandomForest::fit(x.view(), &y, &ForestConfig::default(), &mut rng).unwrap();
        assert_eq!(predict(&f, &x), y);
    }

    #[test]
    fn single_class_training_set() {
        let x = Array2::from_shape_fn((10, 3), |(i, j)| (i * j) as f64);
        let y = vec![2; 10];
        let f = RandomForest::fit(x.view(), &y, &ForestConfig::default(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(predict(&f, &x).iter().all(|&c| c == 2));
    }

    #[test]
    fn reproducible_with_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Array2::from_shape_fn((60, 5), |_| rng.random_range(-1.0..1.0));
        let y: Vec<usize> = (0..60).map(|i| i % 3).collect();
        let a = RandomForest::fit(x.view(), &y, &ForestConfig::default(), &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let b = RandomForest::fit(x.view(), &y, &ForestConfig::default(), &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn majority_baseline() {
        let mut y = vec![0; 281];
        y.extend(vec![1; 2578]);
        y.extend(vec![2; 745]);
        assert_eq!(MajorityClassifier::fit(&y).unwrap().class, 1);
        assert_eq!(MajorityClassifier::fit(&[2, 1, 0]).unwrap().class, 0);
    }
}
