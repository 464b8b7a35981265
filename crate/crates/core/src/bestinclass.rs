//! Post-processing for best-in-class prediction: calibrate on C together with
//! the level sets of every candidate predictor, so the output is no worse than
//! the best candidate up to 6αN in squared error.

use serde::{Deserialize, Serialize};

use crate::auditor::{check_al_multicalibration, check_calibration, squared_distance, squared_error};
use crate::error::{Error, Result};
use crate::learners::{learn_multicalibrated, LearnTrace, MulticalibrationOutcome, MulticalibrationParams};
use crate::oracles::GuessCheck;
use crate::population::{BoundCollection, BoundSet, GroundTruth, Population, SetPredicate};
use crate::predictor::{DensePredictor, DiscretizationGrid, UpdateProgram};

/// The candidate class H, each member evaluated on the whole population.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PredictorFamily {
    pub members: Vec<(String, DensePredictor)>,
}

impl PredictorFamily {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, h: DensePredictor) {
        self.members.push((name.into(), h));
    }

    /// Adds a program-form member, expanded once on `pop`.
    pub fn push_program(&mut self, name: impl Into<String>, program: &UpdateProgram, pop: &Population) -> Result<()> {
        self.push(name, program.eval_all(pop)?);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// The level sets {i : h_i ∈ λ(v)} with at least `floor` members, as
/// explicit sets in grid order.
pub fn categories_of(h: &DensePredictor, grid: &DiscretizationGrid, floor: f64) -> Vec<SetPredicate> {
    let all: Vec<usize> = (0..h.len()).collect();
    grid.bucket(h, &all)
        .into_iter()
        .filter(|b| !b.is_empty() && b.len() as f64 >= floor)
        .map(SetPredicate::explicit)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryLemmaCheck {
    pub center: f64,
    pub size: usize,
    /// Σ ((y − p*)² − (x − p*)²) over the category.
    pub improvement: f64,
    /// Σ (v − x)² − (4α + λ)|S_v(y)|.
    pub required: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaReport {
    pub alpha: f64,
    pub lambda: f64,
    pub categories: Vec<CategoryLemmaCheck>,
    pub violations: usize,
    pub global_improvement: f64,
    pub global_required: f64,
    pub global_holds: bool,
}

/// Checks, on every level set S_v(y) with at least `floor` members, that
/// Σ((y−p*)² − (x−p*)²) ≥ Σ(v−x)² − (4α+λ)|S_v(y)|, and the same
/// inequality summed over the population with ‖x − y‖².
///
/// Fails with [`Error::Precondition`] unless x is α-calibrated on each of
/// those level sets.
pub fn verify_lemma_best(
    y: &DensePredictor,
    x: &DensePredictor,
    truth: &GroundTruth,
    grid: &DiscretizationGrid,
    alpha: f64,
    floor: f64,
) -> Result<LemmaReport> {
    let n = truth.len();
    if y.len() != n || x.len() != n {
        return Err(Error::Schema("predictor lengths differ from the population".into()));
    }
    let slack = 4.0 * alpha + grid.lambda();
    let p = truth.probs();
    let (xv, yv) = (x.values(), y.values());
    let all: Vec<usize> = (0..n).collect();
    let mut categories = Vec::new();
    for (cell, members) in grid.bucket(y, &all).into_iter().enumerate() {
        if members.is_empty() || (members.len() as f64) < floor {
            continue;
        }
        let check = check_calibration(x, truth, &members, alpha, grid)?;
        if !check.calibrated {
            return Err(Error::Precondition(format!(
                "x is not {alpha}-calibrated on the level set of y at {}",
                grid.center(cell)
            )));
        }
        let v = grid.center(cell);
        let improvement: f64 = members
            .iter()
            .map(|&i| (yv[i] - p[i]).powi(2) - (xv[i] - p[i]).powi(2))
            .sum();
        let spread: f64 = members.iter().map(|&i| (v - xv[i]).powi(2)).sum();
        let required = spread - slack * members.len() as f64;
        categories.push(CategoryLemmaCheck {
            center: v,
            size: members.len(),
            improvement,
            required,
            holds: improvement >= required - 1e-9 * n as f64,
        });
    }
    let global_improvement = squared_error(y, truth) - squared_error(x, truth);
    let global_required = squared_distance(xv, yv) - slack * n as f64;
    Ok(LemmaReport {
        alpha,
        lambda: grid.lambda(),
        violations: categories.iter().filter(|c| !c.holds).count(),
        categories,
        global_improvement,
        global_required,
        global_holds: global_improvement >= global_required - 1e-9 * n as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateError {
    pub name: String,
    pub squared_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditSummary {
    pub alpha: f64,
    pub sets: usize,
    pub violations: usize,
    pub clean: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostprocessReport {
    pub alpha: f64,
    pub lambda: f64,
    pub n: usize,
    pub level_sets: usize,
    pub candidates: Vec<CandidateError>,
    pub learned_squared_error: f64,
    pub best: CandidateError,
    pub gap: f64,
    /// 6αN.
    pub gap_bound: f64,
    pub within_bound: bool,
    /// (α, λ)-audit of the pre-closing output on the original collection.
    pub audit: AuditSummary,
    /// One check per candidate at calibration level α + λ.
    pub lemma: Vec<LemmaReport>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PostprocessParams {
    pub alpha: f64,
    pub lambda: f64,
    pub gamma: f64,
}

impl PostprocessParams {
    /// λ = α.
    pub fn new(alpha: f64, gamma: f64) -> Self {
        Self {
            alpha,
            lambda: alpha,
            gamma,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PostprocessOutcome {
    pub predictor: DensePredictor,
    pub pre_closing: DensePredictor,
    pub program: UpdateProgram,
    pub trace: LearnTrace,
    /// Present when the truth was supplied.
    pub report: Option<PostprocessReport>,
}

/// Runs the calibration learner on C ∪ S(H), where S(H) holds each
/// candidate's level sets of size at least αλN.
pub fn postprocess<G: GuessCheck + ?Sized>(
    collection: &BoundCollection,
    family: &PredictorFamily,
    params: &PostprocessParams,
    oracle: &mut G,
    truth: Option<&GroundTruth>,
) -> Result<PostprocessOutcome> {
    if family.is_empty() {
        return Err(Error::invalid("candidate family is empty"));
    }
    let n = collection.n;
    if let Some((name, _)) = family.members.iter().find(|(_, h)| h.len() != n) {
        return Err(Error::Schema(format!("candidate {name} does not cover the population")));
    }
    collection.check_floor(params.gamma)?;
    let grid = DiscretizationGrid::new(params.lambda)?;
    let floor = params.alpha * params.lambda * n as f64;
    let mut combined = collection.clone();
    let mut level_sets = 0;
    for (_, h) in &family.members {
        for predicate in categories_of(h, &grid, floor) {
            let SetPredicate::Explicit { ids } = &predicate else {
                unreachable!("categories are explicit sets")
            };
            combined.sets.push(BoundSet {
                members: ids.clone(),
                predicate,
            });
            level_sets += 1;
        }
    }
    let gamma = combined.min_density().min(params.gamma);
    combined.gamma = gamma;
    let learn_params = MulticalibrationParams::new(params.alpha, params.lambda, gamma);
    let MulticalibrationOutcome {
        predictor,
        pre_closing,
        program,
        trace,
    } = learn_multicalibrated(&combined, oracle, &learn_params, truth)?;

    let report = match truth {
        None => None,
        Some(truth) => {
            let candidates: Vec<CandidateError> = family
                .members
                .iter()
                .map(|(name, h)| CandidateError {
                    name: name.clone(),
                    squared_error: squared_error(h, truth),
                })
                .collect();
            let best = candidates
                .iter()
                .min_by(|a, b| a.squared_error.total_cmp(&b.squared_error))
                .cloned()
                .expect("family is non-empty");
            let learned = squared_error(&predictor, truth);
            let gap = learned - best.squared_error;
            let gap_bound = 6.0 * params.alpha * n as f64;
            let audit = check_al_multicalibration(&pre_closing, truth, collection, params.alpha, &grid);
            let certified = params.alpha + params.lambda;
            let lemma = family
                .members
                .iter()
                .map(|(_, h)| verify_lemma_best(h, &predictor, truth, &grid, certified, floor))
                .collect::<Result<Vec<_>>>()?;
            Some(PostprocessReport {
                alpha: params.alpha,
                lambda: params.lambda,
                n,
                level_sets,
                candidates,
                learned_squared_error: learned,
                best,
                gap,
                gap_bound,
                within_bound: gap < gap_bound,
                audit: AuditSummary {
                    alpha: params.alpha,
                    sets: collection.len(),
                    violations: audit.violation_count,
                    clean: audit.is_clean(),
                },
                lemma,
            })
        }
    };
    Ok(PostprocessOutcome {
        predictor,
        pre_closing,
        program,
        trace,
        report,
    })
}
