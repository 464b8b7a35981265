//! Brute-force verification of accuracy-in-expectation, calibration,
//! (α, λ)-multicalibration and observable calibration against a known p*.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::population::{BoundCollection, GroundTruth};
use crate::predictor::{DensePredictor, DiscretizationGrid};

/// E_{i∼S}[x_i − p*_i].
pub fn ae_error(x: &DensePredictor, truth: &GroundTruth, members: &[usize]) -> Result<f64> {
    if members.is_empty() {
        return Err(Error::EmptySet);
    }
    let p = truth.probs();
    let xv = x.values();
    let sum: f64 = members.iter().map(|&i| xv[i] - p[i]).sum();
    Ok(sum / members.len() as f64)
}

/// ‖x − p*‖².
pub fn squared_error(x: &DensePredictor, truth: &GroundTruth) -> f64 {
    x.values()
        .iter()
        .zip(truth.probs())
        .map(|(a, b)| (a - b) * (a - b))
        .sum()
}

/// Squared distance between two prediction vectors.
pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Mean signed error of one category of a set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryError {
    pub center: f64,
    pub size: usize,
    pub signed_error: f64,
}

/// Per-category mean of `x − reference` over the grid categories of `members`.
fn category_errors(
    x: &DensePredictor,
    reference: &[f64],
    members: &[usize],
    grid: &DiscretizationGrid,
) -> Vec<CategoryError> {
    let xv = x.values();
    grid.bucket(x, members)
        .into_iter()
        .enumerate()
        .filter(|(_, b)| !b.is_empty())
        .map(|(cell, b)| {
            let sum: f64 = b.iter().map(|&i| xv[i] - reference[i]).sum();
            CategoryError {
                center: grid.center(cell),
                size: b.len(),
                signed_error: sum / b.len() as f64,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationCheck {
    pub calibrated: bool,
    /// Fraction of S outside the constructed S'.
    pub excluded_mass: f64,
    /// Categories removed from S' (the witnesses of miscalibration).
    pub excluded: Vec<CategoryError>,
}

/// α-calibration on S with S' built from the categories whose mean error is at
/// most α; passes iff the excluded mass is at most α|S|.
pub fn check_calibration(
    x: &DensePredictor,
    truth: &GroundTruth,
    members: &[usize],
    alpha: f64,
    grid: &DiscretizationGrid,
) -> Result<CalibrationCheck> {
    if members.is_empty() {
        return Err(Error::EmptySet);
    }
    let excluded: Vec<CategoryError> = category_errors(x, truth.probs(), members, grid)
        .into_iter()
        .filter(|c| c.signed_error.abs() > alpha)
        .collect();
    let mass: usize = excluded.iter().map(|c| c.size).sum();
    Ok(CalibrationCheck {
        calibrated: mass as f64 <= alpha * members.len() as f64,
        excluded_mass: mass as f64 / members.len() as f64,
        excluded,
    })
}

/// Observable calibration of `x` against realized outcomes on one set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservableCalibration {
    /// Largest |mean(x − o)| over the categories kept in S'.
    pub worst_error: f64,
    pub excluded_mass: f64,
}

impl ObservableCalibration {
    pub fn passes(&self, level: f64) -> bool {
        self.worst_error <= level
    }
}

/// Chooses S' (excluded mass at most α|S|) to minimize the worst remaining
/// category error against outcomes: categories are dropped in decreasing
/// order of error while the exclusion budget allows.
pub fn observable_calibration_error(
    x: &DensePredictor,
    outcomes: &[f64],
    members: &[usize],
    grid: &DiscretizationGrid,
    alpha: f64,
) -> Result<ObservableCalibration> {
    if members.is_empty() {
        return Err(Error::EmptySet);
    }
    let mut cats = category_errors(x, outcomes, members, grid);
    cats.sort_by(|a, b| b.signed_error.abs().total_cmp(&a.signed_error.abs()));
    let budget = alpha * members.len() as f64;
    let mut dropped = 0usize;
    let mut worst = 0.0;
    for c in &cats {
        if (dropped + c.size) as f64 <= budget {
            dropped += c.size;
        } else {
            worst = c.signed_error.abs();
            break;
        }
    }
    Ok(ObservableCalibration {
        worst_error: worst,
        excluded_mass: dropped as f64 / members.len() as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub center: f64,
    pub size: usize,
    pub signed_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetAudit {
    pub set: usize,
    pub size: usize,
    pub ae_error: f64,
    pub calibrated: bool,
    pub excluded_mass: f64,
    pub violations: Vec<Violation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorstViolation {
    pub set: usize,
    pub center: f64,
    pub size: usize,
    pub signed_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub alpha: f64,
    pub lambda: f64,
    pub violation_count: usize,
    pub worst_violation: Option<WorstViolation>,
    pub squared_error: f64,
    pub sets: Vec<SetAudit>,
}

impl AuditReport {
    pub fn is_clean(&self) -> bool {
        self.violation_count == 0
    }

    /// Sets failing plain α-calibration.
    pub fn uncalibrated_sets(&self) -> usize {
        self.sets.iter().filter(|s| !s.calibrated).count()
    }

    pub fn max_abs_ae(&self) -> f64 {
        self.sets.iter().map(|s| s.ae_error.abs()).fold(0.0, f64::max)
    }
}

/// Exhaustive (α, λ)-multicalibration scan: every set, every grid center,
/// every category with `|S_v| >= αλ|S|` whose mean error exceeds α.
pub fn check_al_multicalibration(
    x: &DensePredictor,
    truth: &GroundTruth,
    collection: &BoundCollection,
    alpha: f64,
    grid: &DiscretizationGrid,
) -> AuditReport {
    let mut sets = Vec::with_capacity(collection.len());
    let mut worst: Option<WorstViolation> = None;
    let mut count = 0;
    for (index, set) in collection.sets.iter().enumerate() {
        if set.is_empty() {
            sets.push(SetAudit {
                set: index,
                size: 0,
                ae_error: 0.0,
                calibrated: true,
                excluded_mass: 0.0,
                violations: Vec::new(),
            });
            continue;
        }
        let floor = alpha * grid.lambda() * set.len() as f64;
        let cats = category_errors(x, truth.probs(), &set.members, grid);
        let violations: Vec<Violation> = cats
            .iter()
            .filter(|c| c.size as f64 >= floor && c.signed_error.abs() > alpha)
            .map(|c| Violation {
                center: c.center,
                size: c.size,
                signed_error: c.signed_error,
            })
            .collect();
        for v in &violations {
            if worst
                .as_ref()
                .is_none_or(|w| v.signed_error.abs() > w.signed_error.abs())
            {
                worst = Some(WorstViolation {
                    set: index,
                    center: v.center,
                    size: v.size,
                    signed_error: v.signed_error,
                });
            }
        }
        count += violations.len();
        let excluded: usize = cats
            .iter()
            .filter(|c| c.signed_error.abs() > alpha)
            .map(|c| c.size)
            .sum();
        sets.push(SetAudit {
            set: index,
            size: set.len(),
            ae_error: ae_error(x, truth, &set.members).expect("non-empty"),
            calibrated: excluded as f64 <= alpha * set.len() as f64,
            excluded_mass: excluded as f64 / set.len() as f64,
            violations,
        });
    }
    AuditReport {
        alpha,
        lambda: grid.lambda(),
        violation_count: count,
        worst_violation: worst,
        squared_error: squared_error(x, truth),
        sets,
    }
}

/// Multi-AE audit: the sets whose |E_S[x − p*]| exceeds α.
pub fn multi_ae_violations(
    x: &DensePredictor,
    truth: &GroundTruth,
    collection: &BoundCollection,
    alpha: f64,
) -> Vec<(usize, f64)> {
    collection
        .sets
        .iter()
        .enumerate()
        .filter(|(_, s)| !s.is_empty())
        .map(|(i, s)| (i, ae_error(x, truth, &s.members).expect("non-empty")))
        .filter(|(_, e)| e.abs() > alpha)
        .collect()
}
