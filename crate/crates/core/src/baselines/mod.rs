//! Classical comparison models: a uniform random scorer and TF-IDF
//! classifiers (random forest, gradient-boosted trees, and a hard-majority
//! vote over naive Bayes, a decision tree, logistic regression, an MLP and a
//! linear SVM).

mod models;
pub mod params;
pub mod tfidf;
mod tree;

use std::collections::BTreeMap;
use std::fmt;

use ndarray::ArrayView2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::GradeLevel;
use models::{
    Classifier, DecisionTree, GradientBoosting, LinearSvm, LogisticRegression, Mlp, MultinomialNb,
    RandomForest,
};
pub use params::BaselineParams;
pub use tfidf::{tfidf_fit, SparseVector, TfidfModel};

#[derive(Debug, thiserror::Error)]
pub enum BaselineError {
    #[error("TF-IDF needs at least one non-empty training text")]
    EmptyCorpus,
    #[error("feature width {found} does not match the fitted width {expected}")]
    WidthMismatch { expected: usize, found: usize },
    #[error("the Random baseline does not predict from features; sample it with random_score")]
    RandomHasNoPredict,
    #[error("training needs at least one labeled row")]
    NoTrainingData,
    #[error("{rows} feature rows but {labels} labels")]
    LabelCountMismatch { rows: usize, labels: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BaselineKind {
    Random,
    #[serde(rename = "RFDT")]
    RandomForest,
    #[serde(rename = "GBDT")]
    GradientBoosting,
    Vote,
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BaselineKind::Random => "Random",
            BaselineKind::RandomForest => "RFDT",
            BaselineKind::GradientBoosting => "GBDT",
            BaselineKind::Vote => "Vote",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum VoteMember {
    NaiveBayes,
    DecisionTree,
    LogisticRegression,
    MultilayerPerceptron,
    SupportVectorMachine,
}

pub const VOTE_MEMBERS: [VoteMember; 5] = [
    VoteMember::NaiveBayes,
    VoteMember::DecisionTree,
    VoteMember::LogisticRegression,
    VoteMember::MultilayerPerceptron,
    VoteMember::SupportVectorMachine,
];

#[derive(Debug)]
enum Fitted {
    Random,
    Constant(usize),
    Single(Box<dyn Classifier>),
    Vote(Vec<(VoteMember, Box<dyn Classifier>)>),
}

/// A fitted baseline. Immutable; prediction is safe from many threads.
#[derive(Debug)]
pub struct BaselineModel {
    kind: BaselineKind,
    classes: Vec<GradeLevel>,
    width: usize,
    fitted: Fitted,
}

/// `n` uniform draws over `0..num_levels`.
pub fn random_score(seed: u64, n: usize, num_levels: u32) -> Vec<GradeLevel> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| GradeLevel(rng.random_range(0..num_levels)))
        .collect()
}

/// Most frequent grade; ties go to the lowest grade.
pub fn majority_vote(votes: &[GradeLevel]) -> Option<GradeLevel> {
    let mut counts: BTreeMap<GradeLevel, usize> = BTreeMap::new();
    for &v in votes {
        *counts.entry(v).or_default() += 1;
    }
    let mut best: Option<(GradeLevel, usize)> = None;
    for (g, n) in counts {
        if best.is_none_or(|(_, top)| n > top) {
            best = Some((g, n));
        }
    }
    best.map(|(g, _)| g)
}

fn member_seed(seed: u64, member: VoteMember) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (member as u64 + 1)
}

fn fit_member(
    member: VoteMember,
    x: ArrayView2<'_, f64>,
    y: &[usize],
    n_classes: usize,
    params: &BaselineParams,
    seed: u64,
) -> Box<dyn Classifier> {
    match member {
        VoteMember::NaiveBayes => Box::new(MultinomialNb::fit(x, y, n_classes, &params.naive_bayes)),
        VoteMember::DecisionTree => Box::new(DecisionTree::fit(x, y, n_classes, &params.decision_tree)),
        VoteMember::LogisticRegression => Box::new(LogisticRegression::fit(
            x,
            y,
            n_classes,
            &params.logistic_regression,
        )),
        VoteMember::MultilayerPerceptron => Box::new(Mlp::fit(
            x,
            y,
            n_classes,
            &params.mlp,
            member_seed(seed, member),
        )),
        VoteMember::SupportVectorMachine => Box::new(LinearSvm::fit(x, y, n_classes, &params.svm)),
    }
}

/// Fits a baseline on dense feature rows. Single-class data yields a
/// constant predictor for every kind.
pub fn train_baseline(
    kind: BaselineKind,
    features: ArrayView2<'_, f64>,
    labels: &[GradeLevel],
    seed: u64,
    params: &BaselineParams,
) -> Result<BaselineModel, BaselineError> {
    if features.nrows() != labels.len() {
        return Err(BaselineError::LabelCountMismatch {
            rows: features.nrows(),
            labels: labels.len(),
        });
    }
    if labels.is_empty() {
        return Err(BaselineError::NoTrainingData);
    }
    let classes: Vec<GradeLevel> = {
        let mut c = labels.to_vec();
        c.sort();
        c.dedup();
        c
    };
    let y: Vec<usize> = labels
        .iter()
        .map(|l| classes.binary_search(l).expect("label is a class"))
        .collect();
    let n_classes = classes.len();
    let fitted = match kind {
        BaselineKind::Random => Fitted::Random,
        _ if n_classes == 1 => Fitted::Constant(0),
        BaselineKind::RandomForest => Fitted::Single(Box::new(RandomForest::fit(
            features,
            &y,
            n_classes,
            &params.random_forest,
            seed,
        ))),
        BaselineKind::GradientBoosting => Fitted::Single(Box::new(GradientBoosting::fit(
            features,
            &y,
            n_classes,
            &params.gradient_boosting,
        ))),
        BaselineKind::Vote => Fitted::Vote(
            VOTE_MEMBERS
                .iter()
                .map(|&m| (m, fit_member(m, features, &y, n_classes, params, seed)))
                .collect(),
        ),
    };
    Ok(BaselineModel {
        kind,
        classes,
        width: features.ncols(),
        fitted,
    })
}

impl BaselineModel {
    pub fn kind(&self) -> BaselineKind {
        self.kind
    }

    pub fn classes(&self) -> &[GradeLevel] {
        &self.classes
    }

    /// Per-member predictions for a Vote model, in member order.
    pub fn member_predictions(
        &self,
        features: ArrayView2<'_, f64>,
    ) -> Result<Vec<(VoteMember, Vec<GradeLevel>)>, BaselineError> {
        self.check_width(features)?;
        match &self.fitted {
            Fitted::Vote(members) => Ok(members
                .iter()
                .map(|(m, c)| {
                    let preds = features
                        .rows()
                        .into_iter()
                        .map(|row| self.classes[c.predict_row(row)])
                        .collect();
                    (*m, preds)
                })
                .collect()),
            _ => Ok(Vec::new()),
        }
    }

    fn check_width(&self, features: ArrayView2<'_, f64>) -> Result<(), BaselineError> {
        if features.nrows() > 0 && features.ncols() != self.width {
            return Err(BaselineError::WidthMismatch {
                expected: self.width,
                found: features.ncols(),
            });
        }
        Ok(())
    }

    pub fn predict(&self, features: ArrayView2<'_, f64>) -> Result<Vec<GradeLevel>, BaselineError> {
        if matches!(self.fitted, Fitted::Random) {
            return Err(BaselineError::RandomHasNoPredict);
        }
        self.check_width(features)?;
        let rows = features.rows().into_iter();
        Ok(match &self.fitted {
            Fitted::Random => unreachable!(),
            Fitted::Constant(c) => vec![self.classes[*c]; features.nrows()],
            Fitted::Single(model) => rows.map(|r| self.classes[model.predict_row(r)]).collect(),
            Fitted::Vote(members) => rows
                .map(|r| {
                    let votes: Vec<GradeLevel> = members
                        .iter()
                        .map(|(_, m)| self.classes[m.predict_row(r)])
                        .collect();
                    majority_vote(&votes).expect("five members vote")
                })
                .collect(),
        })
    }
}

pub fn predict_baseline(
    model: &BaselineModel,
    features: ArrayView2<'_, f64>,
) -> Result<Vec<GradeLevel>, BaselineError> {
    model.predict(features)
}
