//! CART trees: Gini classification and squared-error regression.

use ndarray::{ArrayView1, ArrayView2};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy)]
pub(crate) struct TreeParams {
    pub max_depth: usize,
    pub min_samples_split: usize,
    /// Features inspected per split (at least; the search continues until
    /// a valid split is found). `None` inspects all features.
    pub max_features: Option<usize>,
}

#[derive(Debug, Clone)]
enum Node {
    Leaf { value: Vec<f64> },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone)]
pub(crate) struct Tree {
    nodes: Vec<Node>,
}

pub(crate) enum Target<'a> {
    Classes { labels: &'a [usize], n_classes: usize },
    Values(&'a [f64]),
}

impl Target<'_> {
    fn leaf_value(&self, rows: &[usize]) -> Vec<f64> {
        match self {
            Target::Classes { labels, n_classes } => {
                let mut v = vec![0.0; *n_classes];
                for &r in rows {
                    v[labels[r]] += 1.0;
                }
                let n = rows.len() as f64;
                v.iter_mut().for_each(|x| *x /= n);
                v
            }
            Target::Values(values) => {
                vec![rows.iter().map(|&r| values[r]).sum::<f64>() / rows.len() as f64]
            }
        }
    }

    fn is_pure(&self, rows: &[usize]) -> bool {
        match self {
            Target::Classes { labels, .. } => rows.iter().all(|&r| labels[r] == labels[rows[0]]),
            Target::Values(values) => rows.iter().all(|&r| values[r] == values[rows[0]]),
        }
    }
}

/// Impurity accumulator updated as rows move from right to left.
enum Accumulator {
    Gini {
        left: Vec<f64>,
        right: Vec<f64>,
    },
    Squared {
        left_sum: f64,
        left_sq: f64,
        right_sum: f64,
        right_sq: f64,
    },
}

impl Accumulator {
    fn new(target: &Target<'_>, rows: &[usize]) -> Self {
        match target {
            Target::Classes { labels, n_classes } => {
                let mut right = vec![0.0; *n_classes];
                for &r in rows {
                    right[labels[r]] += 1.0;
                }
                Accumulator::Gini {
                    left: vec![0.0; *n_classes],
                    right,
                }
            }
            Target::Values(values) => {
                let (s, q) = rows
                    .iter()
                    .fold((0.0, 0.0), |(s, q), &r| (s + values[r], q + values[r] * values[r]));
                Accumulator::Squared {
                    left_sum: 0.0,
                    left_sq: 0.0,
                    right_sum: s,
                    right_sq: q,
                }
            }
        }
    }

    fn shift(&mut self, target: &Target<'_>, row: usize) {
        match (self, target) {
            (Accumulator::Gini { left, right }, Target::Classes { labels, .. }) => {
                left[labels[row]] += 1.0;
                right[labels[row]] -= 1.0;
            }
            (
                Accumulator::Squared {
                    left_sum,
                    left_sq,
                    right_sum,
                    right_sq,
                },
                Target::Values(values),
            ) => {
                let y = values[row];
                *left_sum += y;
                *left_sq += y * y;
                *right_sum -= y;
                *right_sq -= y * y;
            }
            _ => unreachable!("accumulator matches target kind"),
        }
    }

    /// Weighted child impurity (lower is better).
    fn cost(&self, n_left: f64, n_right: f64) -> f64 {
        match self {
            Accumulator::Gini { left, right } => {
                let gini = |counts: &[f64], n: f64| {
                    n - counts.iter().map(|c| c * c).sum::<f64>() / n
                };
                gini(left, n_left) + gini(right, n_right)
            }
            Accumulator::Squared {
                left_sum,
                left_sq,
                right_sum,
                right_sq,
            } => (left_sq - left_sum * left_sum / n_left) + (right_sq - right_sum * right_sum / n_right),
        }
    }
}

struct Builder<'a> {
    x: ArrayView2<'a, f64>,
    target: Target<'a>,
    params: TreeParams,
    rng: Option<&'a mut ChaCha8Rng>,
    nodes: Vec<Node>,
}

impl Builder<'_> {
    fn best_split(&mut self, rows: &[usize]) -> Option<(usize, f64)> {
        let n_features = self.x.ncols();
        let mut order: Vec<usize> = (0..n_features).collect();
        if let Some(rng) = self.rng.as_deref_mut() {
            order.shuffle(rng);
        }
        let quota = self.params.max_features.unwrap_or(n_features).max(1);
        let n = rows.len() as f64;
        let mut best: Option<(f64, usize, f64)> = None;
        let mut sorted: Vec<(f64, usize)> = Vec::with_capacity(rows.len());
        for (visited, &feature) in order.iter().enumerate() {
            if visited >= quota && best.is_some() {
                break;
            }
            sorted.clear();
            sorted.extend(rows.iter().map(|&r| (self.x[[r, feature]], r)));
            sorted.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            if sorted[0].0 == sorted[sorted.len() - 1].0 {
                continue;
            }
            let mut acc = Accumulator::new(&self.target, rows);
            for i in 0..sorted.len() - 1 {
                acc.shift(&self.target, sorted[i].1);
                if sorted[i].0 == sorted[i + 1].0 {
                    continue;
                }
                let n_left = (i + 1) as f64;
                let cost = acc.cost(n_left, n - n_left);
                if best.is_none_or(|(c, _, _)| cost < c - 1e-12) {
                    let threshold = 0.5 * (sorted[i].0 + sorted[i + 1].0);
                    best = Some((cost, feature, threshold));
                }
            }
        }
        best.map(|(_, f, t)| (f, t))
    }

    fn grow(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf {
            value: self.target.leaf_value(&rows),
        });
        if depth >= self.params.max_depth
            || rows.len() < self.params.min_samples_split.max(2)
            || self.target.is_pure(&rows)
        {
            return id;
        }
        let Some((feature, threshold)) = self.best_split(&rows) else {
            return id;
        };
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) =
            rows.iter().partition(|&&r| self.x[[r, feature]] <= threshold);
        let left = self.grow(left_rows, depth + 1);
        let right = self.grow(right_rows, depth + 1);
        self.nodes[id] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        id
    }
}

impl Tree {
    pub fn fit(
        x: ArrayView2<'_, f64>,
        rows: Vec<usize>,
        target: Target<'_>,
        params: TreeParams,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Tree {
        assert!(!rows.is_empty(), "tree needs at least one row");
        let mut builder = Builder {
            x,
            target,
            params,
            rng,
            nodes: Vec::new(),
        };
        builder.grow(rows, 0);
        Tree {
            nodes: builder.nodes,
        }
    }

    pub fn leaf_index(&self, row: ArrayView1<'_, f64>) -> usize {
        let mut id = 0;
        loop {
            match &self.nodes[id] {
                Node::Leaf { .. } => return id,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => id = if row[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn predict(&self, row: ArrayView1<'_, f64>) -> &[f64] {
        match &self.nodes[self.leaf_index(row)] {
            Node::Leaf { value } => value,
            Node::Split { .. } => unreachable!(),
        }
    }

    pub fn set_leaf_value(&mut self, leaf: usize, value: Vec<f64>) {
        if let Node::Leaf { value: v } = &mut self.nodes[leaf] {
            *v = value;
        }
    }
}
