//! Spectrum-based fault localization.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lang::CoverageMatrix;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SbflError {
    #[error("no failing tests: the program already passes")]
    NoFailingTests,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Suspicion {
    pub stmt_id: usize,
    pub score: f64,
}

/// Statements sorted by descending score, ties by ascending id.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SuspiciousnessReport {
    pub ranked: Vec<Suspicion>,
}

impl SuspiciousnessReport {
    pub fn score(&self, stmt: usize) -> f64 {
        self.ranked.iter().find(|s| s.stmt_id == stmt).map_or(0.0, |s| s.score)
    }

    /// Statements with a positive score, at most `k` of them.
    pub fn suspicious(&self, k: usize) -> Vec<Suspicion> {
        self.ranked.iter().filter(|s| s.score > 0.0).take(k).copied().collect()
    }

    pub fn is_empty(&self) -> bool {
        self.ranked.is_empty()
    }
}

/// Spectrum counts for one statement.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Counts {
    pub failed: usize,
    pub passed: usize,
    pub total_failed: usize,
    pub total_passed: usize,
}

pub fn ochiai_formula(c: Counts) -> f64 {
    let denom = (c.total_failed as f64 * (c.failed + c.passed) as f64).sqrt();
    if denom == 0.0 {
        0.0
    } else {
        c.failed as f64 / denom
    }
}

pub fn counts(cov: &CoverageMatrix) -> BTreeMap<usize, Counts> {
    let total_failed = cov.failing();
    let total_passed = cov.per_test.len() - total_failed;
    let mut out: BTreeMap<usize, Counts> = BTreeMap::new();
    for t in cov.per_test.values() {
        for &s in &t.executed {
            let c = out.entry(s).or_insert(Counts { failed: 0, passed: 0, total_failed, total_passed });
            if t.passed {
                c.passed += 1;
            } else {
                c.failed += 1;
            }
        }
    }
    out
}

/// Ranks every executed statement with an arbitrary formula.
pub fn rank_with(cov: &CoverageMatrix, formula: impl Fn(Counts) -> f64) -> Result<SuspiciousnessReport, SbflError> {
    if cov.failing() == 0 {
        return Err(SbflError::NoFailingTests);
    }
    let mut ranked: Vec<Suspicion> =
        counts(cov).into_iter().map(|(stmt_id, c)| Suspicion { stmt_id, score: formula(c) }).collect();
    ranked.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.stmt_id.cmp(&b.stmt_id)));
    Ok(SuspiciousnessReport { ranked })
}

pub fn ochiai(cov: &CoverageMatrix) -> Result<SuspiciousnessReport, SbflError> {
    rank_with(cov, ochiai_formula)
}
