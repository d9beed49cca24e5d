//! The individual classifiers behind the baselines. All of them work on
//! dense TF-IDF rows and dense class indices `0..n_classes`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::params::{ForestParams, GbdtParams, LinearParams, MlpParams, NaiveBayesParams, TreeConfig};
use super::tree::{Target, Tree, TreeParams};

pub(crate) trait Classifier: Send + Sync + std::fmt::Debug {
    fn predict_row(&self, row: ArrayView1<'_, f64>) -> usize;
}

/// Index of the largest entry, lowest index on ties.
pub(crate) fn argmax(values: impl IntoIterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.into_iter().enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

fn softmax_rows(logits: &mut Array2<f64>) {
    for mut row in logits.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

fn one_hot(labels: &[usize], n_classes: usize) -> Array2<f64> {
    let mut y = Array2::zeros((labels.len(), n_classes));
    for (i, &l) in labels.iter().enumerate() {
        y[[i, l]] = 1.0;
    }
    y
}

#[derive(Debug, Clone)]
pub(crate) struct DecisionTree {
    tree: Tree,
}

impl DecisionTree {
    pub fn fit(x: ArrayView2<'_, f64>, labels: &[usize], n_classes: usize, params: &TreeConfig) -> Self {
        let tree = Tree::fit(
            x,
            (0..x.nrows()).collect(),
            Target::Classes { labels, n_classes },
            TreeParams {
                max_depth: params.max_depth,
                min_samples_split: params.min_samples_split,
                max_features: None,
            },
            None,
        );
        DecisionTree { tree }
    }
}

impl Classifier for DecisionTree {
    fn predict_row(&self, row: ArrayView1<'_, f64>) -> usize {
        argmax(self.tree.predict(row).iter().copied())
    }
}

/// Bootstrap-aggregated Gini trees with sqrt-feature subsampling; predicts
/// by averaging leaf class distributions.
#[derive(Debug, Clone)]
pub(crate) struct RandomForest {
    trees: Vec<Tree>,
    n_classes: usize,
}

impl RandomForest {
    pub fn fit(
        x: ArrayView2<'_, f64>,
        labels: &[usize],
        n_classes: usize,
        params: &ForestParams,
        seed: u64,
    ) -> Self {
        let n = x.nrows();
        let max_features = ((x.ncols() as f64).sqrt().ceil() as usize).max(1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let trees = (0..params.n_trees)
            .map(|_| {
                let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
                Tree::fit(
                    x,
                    rows,
                    Target::Classes { labels, n_classes },
                    TreeParams {
                        max_depth: params.max_depth,
                        min_samples_split: 2,
                        max_features: Some(max_features),
                    },
                    Some(&mut rng),
                )
            })
            .collect();
        RandomForest { trees, n_classes }
    }
}

impl Classifier for RandomForest {
    fn predict_row(&self, row: ArrayView1<'_, f64>) -> usize {
        let mut acc = vec![0.0; self.n_classes];
        for tree in &self.trees {
            for (a, p) in acc.iter_mut().zip(tree.predict(row)) {
                *a += p;
            }
        }
        argmax(acc)
    }
}

/// Multi-class gradient boosting on the softmax loss: one squared-error
/// regression tree per class per round, leaves set by a Newton step.
#[derive(Debug, Clone)]
pub(crate) struct GradientBoosting {
    init: Vec<f64>,
    rounds: Vec<Vec<Tree>>,
    learning_rate: f64,
}

impl GradientBoosting {
    pub fn fit(x: ArrayView2<'_, f64>, labels: &[usize], n_classes: usize, params: &GbdtParams) -> Self {
        let n = x.nrows();
        let y = one_hot(labels, n_classes);
        let init: Vec<f64> = (0..n_classes)
            .map(|k| {
                let prior = y.column(k).sum() / n as f64;
                prior.max(1e-12).ln()
            })
            .collect();
        let mut scores = Array2::from_shape_fn((n, n_classes), |(_, k)| init[k]);
        let factor = (n_classes as f64 - 1.0) / n_classes as f64;
        let mut rounds = Vec::with_capacity(params.n_rounds);
        for _ in 0..params.n_rounds {
            let mut probs = scores.clone();
            softmax_rows(&mut probs);
            let residual = &y - &probs;
            let mut round = Vec::with_capacity(n_classes);
            for k in 0..n_classes {
                let r: Vec<f64> = residual.column(k).to_vec();
                let mut tree = Tree::fit(
                    x,
                    (0..n).collect(),
                    Target::Values(&r),
                    TreeParams {
                        max_depth: params.max_depth,
                        min_samples_split: 2,
                        max_features: None,
                    },
                    None,
                );
                let leaves: Vec<usize> = (0..n).map(|i| tree.leaf_index(x.row(i))).collect();
                let mut sums: std::collections::BTreeMap<usize, (f64, f64)> = Default::default();
                for (i, &leaf) in leaves.iter().enumerate() {
                    let e = sums.entry(leaf).or_default();
                    e.0 += r[i];
                    e.1 += r[i].abs() * (1.0 - r[i].abs());
                }
                for (&leaf, &(num, den)) in &sums {
                    let gamma = if den.abs() < 1e-150 { 0.0 } else { factor * num / den };
                    tree.set_leaf_value(leaf, vec![gamma]);
                }
                for i in 0..n {
                    scores[[i, k]] += params.learning_rate * tree.predict(x.row(i))[0];
                }
                round.push(tree);
            }
            rounds.push(round);
        }
        GradientBoosting {
            init,
            rounds,
            learning_rate: params.learning_rate,
        }
    }
}

impl Classifier for GradientBoosting {
    fn predict_row(&self, row: ArrayView1<'_, f64>) -> usize {
        let mut scores = self.init.clone();
        for round in &self.rounds {
            for (s, tree) in scores.iter_mut().zip(round) {
                *s += self.learning_rate * tree.predict(row)[0];
            }
        }
        argmax(scores)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct MultinomialNb {
    log_prior: Array1<f64>,
    log_likelihood: Array2<f64>,
}

impl MultinomialNb {
    pub fn fit(x: ArrayView2<'_, f64>, labels: &[usize], n_classes: usize, params: &NaiveBayesParams) -> Self {
        let d = x.ncols();
        let mut feature_sums = Array2::<f64>::zeros((n_classes, d));
        let mut class_counts = vec![0.0f64; n_classes];
        for (i, &l) in labels.iter().enumerate() {
            let mut row = feature_sums.row_mut(l);
            row += &x.row(i);
            class_counts[l] += 1.0;
        }
        let n = labels.len() as f64;
        let log_prior = Array1::from_shape_fn(n_classes, |k| (class_counts[k].max(1e-12) / n).ln());
        let mut log_likelihood = feature_sums.mapv(|v| v + params.alpha);
        for mut row in log_likelihood.rows_mut() {
            let total = row.sum();
            row.mapv_inplace(|v| (v / total).ln());
        }
        MultinomialNb {
            log_prior,
            log_likelihood,
        }
    }
}

impl Classifier for MultinomialNb {
    fn predict_row(&self, row: ArrayView1<'_, f64>) -> usize {
        let scores = self.log_likelihood.dot(&row) + &self.log_prior;
        argmax(scores.iter().copied())
    }
}

/// Softmax regression trained by full-batch gradient descent with an L2
/// penalty on the weights.
#[derive(Debug, Clone)]
pub(crate) struct LogisticRegression {
    weights: Array2<f64>,
    bias: Array1<f64>,
}

impl LogisticRegression {
    pub fn fit(x: ArrayView2<'_, f64>, labels: &[usize], n_classes: usize, params: &LinearParams) -> Self {
        let (n, d) = x.dim();
        let y = one_hot(labels, n_classes);
        let mut weights = Array2::<f64>::zeros((n_classes, d));
        let mut bias = Array1::<f64>::zeros(n_classes);
        for _ in 0..params.iterations {
            let mut probs = x.dot(&weights.t()) + &bias;
            softmax_rows(&mut probs);
            let err = (probs - &y) / n as f64;
            let grad_w = err.t().dot(&x) + &weights * params.l2;
            let grad_b = err.sum_axis(Axis(0));
            weights.scaled_add(-params.learning_rate, &grad_w);
            bias.scaled_add(-params.learning_rate, &grad_b);
        }
        LogisticRegression { weights, bias }
    }
}

impl Classifier for LogisticRegression {
    fn predict_row(&self, row: ArrayView1<'_, f64>) -> usize {
        argmax((self.weights.dot(&row) + &self.bias).iter().copied())
    }
}

/// One-vs-rest linear SVM: hinge loss plus L2, full-batch subgradient
/// descent.
#[derive(Debug, Clone)]
pub(crate) struct LinearSvm {
    weights: Array2<f64>,
    bias: Array1<f64>,
}

impl LinearSvm {
    pub fn fit(x: ArrayView2<'_, f64>, labels: &[usize], n_classes: usize, params: &LinearParams) -> Self {
        let (n, d) = x.dim();
        let mut weights = Array2::<f64>::zeros((n_classes, d));
        let mut bias = Array1::<f64>::zeros(n_classes);
        for k in 0..n_classes {
            let y: Vec<f64> = labels.iter().map(|&l| if l == k { 1.0 } else { -1.0 }).collect();
            let mut w = Array1::<f64>::zeros(d);
            let mut b = 0.0;
            for _ in 0..params.iterations {
                let margins = x.dot(&w) + b;
                let mut grad_w = &w * params.l2;
                let mut grad_b = 0.0;
                for i in 0..n {
                    if y[i] * margins[i] < 1.0 {
                        grad_w.scaled_add(-y[i] / n as f64, &x.row(i));
                        grad_b -= y[i] / n as f64;
                    }
                }
                w.scaled_add(-params.learning_rate, &grad_w);
                b -= params.learning_rate * grad_b;
            }
            weights.row_mut(k).assign(&w);
            bias[k] = b;
        }
        LinearSvm { weights, bias }
    }
}

impl Classifier for LinearSvm {
    fn predict_row(&self, row: ArrayView1<'_, f64>) -> usize {
        argmax((self.weights.dot(&row) + &self.bias).iter().copied())
    }
}

/// One ReLU hidden layer, softmax output, full-batch Adam.
#[derive(Debug, Clone)]
pub(crate) struct Mlp {
    w1: Array2<f64>,
    b1: Array1<f64>,
    w2: Array2<f64>,
    b2: Array1<f64>,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(len: usize) -> Self {
        Adam {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    fn step<'a>(&mut self, lr: f64, params: impl Iterator<Item = (&'a mut f64, f64)>) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        self.t += 1;
        let c1 = 1.0 - B1.powi(self.t);
        let c2 = 1.0 - B2.powi(self.t);
        for (i, (p, g)) in params.enumerate() {
            self.m[i] = B1 * self.m[i] + (1.0 - B1) * g;
            self.v[i] = B2 * self.v[i] + (1.0 - B2) * g * g;
            *p -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + 1e-8);
        }
    }
}

impl Mlp {
    pub fn fit(
        x: ArrayView2<'_, f64>,
        labels: &[usize],
        n_classes: usize,
        params: &MlpParams,
        seed: u64,
    ) -> Self {
        let (n, d) = x.dim();
        let h = params.hidden_units.max(1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut glorot = |rows: usize, cols: usize| {
            let a = (6.0 / (rows + cols) as f64).sqrt();
            Array2::from_shape_fn((rows, cols), |_| rng.random_range(-a..a))
        };
        let mut w1 = glorot(d, h);
        let mut w2 = glorot(h, n_classes);
        let mut b1 = Array1::<f64>::zeros(h);
        let mut b2 = Array1::<f64>::zeros(n_classes);
        let y = one_hot(labels, n_classes);
        let mut adam = Adam::new(d * h + h + h * n_classes + n_classes);
        for _ in 0..params.epochs {
            let pre = x.dot(&w1) + &b1;
            let hidden = pre.mapv(|v| v.max(0.0));
            let mut probs = hidden.dot(&w2) + &b2;
            softmax_rows(&mut probs);
            let d_out = (probs - &y) / n as f64;
            let g_w2 = hidden.t().dot(&d_out) + &w2 * params.l2;
            let g_b2 = d_out.sum_axis(Axis(0));
            let mut d_hidden = d_out.dot(&w2.t());
            d_hidden.zip_mut_with(&pre, |g, &p| {
                if p <= 0.0 {
                    *g = 0.0
                }
            });
            let g_w1 = x.t().dot(&d_hidden) + &w1 * params.l2;
            let g_b1 = d_hidden.sum_axis(Axis(0));
            let grads: Vec<f64> = g_w1
                .iter()
                .chain(g_b1.iter())
                .chain(g_w2.iter())
                .chain(g_b2.iter())
                .copied()
                .collect();
            let params_iter = w1
                .iter_mut()
                .chain(b1.iter_mut())
                .chain(w2.iter_mut())
                .chain(b2.iter_mut())
                .zip(grads);
            adam.step(params.learning_rate, params_iter);
        }
        Mlp { w1, b1, w2, b2 }
    }
}

impl Classifier for Mlp {
    fn predict_row(&self, row: ArrayView1<'_, f64>) -> usize {
        let hidden = (row.dot(&self.w1) + &self.b1).mapv(|v| v.max(0.0));
        argmax((hidden.dot(&self.w2) + &self.b2).iter().copied())
    }
}
