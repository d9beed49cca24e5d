//! Human-machine agreement: Cohen's kappa and support-weighted F1.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::GradeLevel;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricError {
    #[error("rater vectors differ in length: {human} human vs {machine} machine")]
    LengthMismatch { human: usize, machine: usize },
    #[error("agreement metrics need at least one rated response")]
    Empty,
}

fn check(human: &[GradeLevel], machine: &[GradeLevel]) -> Result<(), MetricError> {
    if human.len() != machine.len() {
        return Err(MetricError::LengthMismatch {
            human: human.len(),
            machine: machine.len(),
        });
    }
    if human.is_empty() {
        return Err(MetricError::Empty);
    }
    Ok(())
}

/// Entry `(i, j)` counts responses graded `i` by the human and `j` by the
/// machine.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    counts: Vec<Vec<u64>>,
}

impl ConfusionCounts {
    pub fn from_labels(human: &[GradeLevel], machine: &[GradeLevel]) -> Result<Self, MetricError> {
        check(human, machine)?;
        let size = human
            .iter()
            .chain(machine)
            .map(|g| g.index() + 1)
            .max()
            .unwrap_or(0);
        let mut counts = vec![vec![0u64; size]; size];
        for (h, m) in human.iter().zip(machine) {
            counts[h.index()][m.index()] += 1;
        }
        Ok(ConfusionCounts { counts })
    }

    pub fn num_levels(&self) -> usize {
        self.counts.len()
    }

    pub fn get(&self, human: usize, machine: usize) -> u64 {
        self.counts[human][machine]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn rows(&self) -> &[Vec<u64>] {
        &self.counts
    }
}

/// `(p_o - p_e) / (1 - p_e)`, evaluated on integer counts so that rational
/// results come out exact. Returns 1 when `p_e = 1` (both raters constant
/// on the same grade).
pub fn cohens_kappa(human: &[GradeLevel], machine: &[GradeLevel]) -> Result<f64, MetricError> {
    check(human, machine)?;
    let n = human.len() as u128;
    let agree = human.iter().zip(machine).filter(|(h, m)| h == m).count() as u128;
    let mut marginals: BTreeMap<GradeLevel, (u128, u128)> = BTreeMap::new();
    for (h, m) in human.iter().zip(machine) {
        marginals.entry(*h).or_default().0 += 1;
        marginals.entry(*m).or_default().1 += 1;
    }
    let chance: u128 = marginals.values().map(|(a, b)| a * b).sum();
    let denominator = n * n - chance;
    if denominator == 0 {
        return Ok(1.0);
    }
    let numerator = (n * agree) as f64 - chance as f64;
    Ok(numerator / denominator as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum F1Average {
    /// Per-class F1 weighted by the human support of each class.
    #[default]
    Weighted,
    /// Unweighted mean over classes seen by either rater.
    Macro,
}

fn per_class_f1(human: &[GradeLevel], machine: &[GradeLevel]) -> BTreeMap<GradeLevel, (f64, usize)> {
    let mut stats: BTreeMap<GradeLevel, (usize, usize, usize, usize)> = BTreeMap::new();
    for (h, m) in human.iter().zip(machine) {
        stats.entry(*h).or_default().3 += 1;
        if h == m {
            stats.entry(*h).or_default().0 += 1;
        } else {
            stats.entry(*m).or_default().1 += 1;
            stats.entry(*h).or_default().2 += 1;
        }
    }
    stats
        .into_iter()
        .map(|(class, (tp, fp, fn_, support))| {
            let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
            let recall = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            (class, (f1, support))
        })
        .collect()
}

pub fn f1_score(
    human: &[GradeLevel],
    machine: &[GradeLevel],
    average: F1Average,
) -> Result<f64, MetricError> {
    check(human, machine)?;
    let per_class = per_class_f1(human, machine);
    Ok(match average {
        F1Average::Weighted => {
            per_class
                .values()
                .map(|(f1, support)| f1 * *support as f64)
                .sum::<f64>()
                / human.len() as f64
        }
        F1Average::Macro => {
            per_class.values().map(|(f1, _)| f1).sum::<f64>() / per_class.len() as f64
        }
    })
}

pub fn f1_weighted(human: &[GradeLevel], machine: &[GradeLevel]) -> Result<f64, MetricError> {
    f1_score(human, machine, F1Average::Weighted)
}
