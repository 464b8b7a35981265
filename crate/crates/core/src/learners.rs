//! The two iterative learners: multi-accuracy-in-expectation from statistical
//! queries, and multicalibration from guess-and-check queries. Both start at
//! x ≡ 1/2 and sweep the collection until a full sweep changes nothing.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::auditor::squared_error;
use crate::error::{Error, Result};
use crate::oracles::{GuessCheck, GuessCheckQuery, GuessCheckResponse, OracleConfig, StatisticalQuery};
use crate::population::{BoundCollection, GroundTruth};
use crate::predictor::{
    precision_bits, quantize, stable_mean, DensePredictor, DiscretizationGrid, UpdateProgram, UpdateStep,
};

pub const DEFAULT_GUARD_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    MultiAe,
    Multicalibration,
    WeakAgnostic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateKind {
    #[default]
    Shift,
    /// Global additive correction of one interval (weak-agnostic learner only).
    Offset,
    /// Step along a weak hypothesis.
    Hypothesis,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateRecord {
    pub round: usize,
    #[serde(default)]
    pub kind: UpdateKind,
    /// Index into the collection; absent for updates not tied to one set.
    pub set: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub center: Option<f64>,
    /// |S| for multi-AE updates, |S_v| for calibration updates.
    pub size: usize,
    pub delta: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub potential_before: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub potential_after: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceTotals {
    pub algorithm: Algorithm,
    pub updates: usize,
    pub accepted: usize,
    pub queries: usize,
    pub sweeps: usize,
    pub wall_ms: f64,
    pub alpha: f64,
    pub lambda: Option<f64>,
    pub gamma: f64,
    pub n: usize,
    /// Theoretical cap on non-✓ updates.
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnTrace {
    pub records: Vec<UpdateRecord>,
    pub totals: TraceTotals,
}

impl LearnTrace {
    pub(crate) fn new(algorithm: Algorithm, alpha: f64, lambda: Option<f64>, gamma: f64, n: usize, bound: f64) -> Self {
        Self {
            records: Vec::new(),
            totals: TraceTotals {
                algorithm,
                updates: 0,
                accepted: 0,
                queries: 0,
                sweeps: 0,
                wall_ms: 0.0,
                alpha,
                lambda,
                gamma,
                n,
                bound,
            },
        }
    }

    /// One JSON object per update followed by a `{"totals": ...}` footer.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        out.push_str(&serde_json::to_string(&serde_json::json!({ "totals": self.totals }))?);
        out.push('\n');
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut records = Vec::new();
        let mut totals = None;
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let value: serde_json::Value = serde_json::from_str(line)?;
            match value.get("totals") {
                Some(t) => totals = Some(serde_json::from_value(t.clone())?),
                None => records.push(serde_json::from_value(value)?),
            }
        }
        let totals = totals.ok_or_else(|| Error::Malformed("trace has no totals footer".into()))?;
        Ok(Self { records, totals })
    }

    /// Potential curve ‖x − p*‖² after each update, starting from the first
    /// recorded "before" value. Empty when the run was not instrumented.
    pub fn potential_curve(&self) -> Vec<f64> {
        let mut curve = Vec::new();
        if let Some(first) = self.records.first().and_then(|r| r.potential_before) {
            curve.push(first);
        }
        curve.extend(self.records.iter().filter_map(|r| r.potential_after));
        curve
    }

    /// Updates whose potential drop falls short of `(α/4)² |S_v|`.
    pub fn progress_failures(&self, alpha: f64) -> usize {
        let per_member = (alpha / 4.0).powi(2);
        self.shortfalls(|r| per_member * r.size as f64)
    }

    /// Updates whose potential drop falls short of `required(record)`.
    pub fn shortfalls(&self, required: impl Fn(&UpdateRecord) -> f64) -> usize {
        let slack = 1e-9 * self.totals.n as f64;
        self.records
            .iter()
            .filter(|r| match (r.potential_before, r.potential_after) {
                (Some(b), Some(a)) => b - a < required(r) - slack,
                _ => false,
            })
            .count()
    }
}

/// Update cap for the multi-AE learner: 16/(3α²γ).
pub fn multi_ae_bound(alpha: f64, gamma: f64) -> f64 {
    16.0 / (3.0 * alpha * alpha * gamma)
}

/// Update cap for the multicalibration learner: 16/(α³λγ).
pub fn multicalibration_bound(alpha: f64, lambda: f64, gamma: f64) -> f64 {
    16.0 / (alpha.powi(3) * lambda * gamma)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub updates: usize,
    pub bound: f64,
    pub within: bool,
}

pub fn bound_check(trace: &LearnTrace, alpha: f64, lambda: f64, gamma: f64) -> BoundReport {
    let bound = match trace.totals.algorithm {
        Algorithm::MultiAe => multi_ae_bound(alpha, gamma),
        Algorithm::Multicalibration => multicalibration_bound(alpha, lambda, gamma),
        Algorithm::WeakAgnostic => trace.totals.bound,
    };
    BoundReport {
        updates: trace.totals.updates,
        bound,
        within: trace.totals.updates as f64 <= bound,
    }
}

pub(crate) fn check_unit(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v <= 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} = {v} must lie in (0, 1]")))
    }
}

fn sweep_order(len: usize, order: Option<&[usize]>) -> Result<Vec<usize>> {
    match order {
        None => Ok((0..len).collect()),
        Some(o) => {
            let mut seen = vec![false; len];
            for &i in o {
                if i >= len || std::mem::replace(&mut seen[i], true) {
                    return Err(Error::invalid("sweep order must be a permutation of the collection"));
                }
            }
            if seen.iter().any(|s| !s) {
                return Err(Error::invalid("sweep order must be a permutation of the collection"));
            }
            Ok(o.to_vec())
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiAeParams {
    pub alpha: f64,
    pub gamma: f64,
    pub guard_factor: f64,
}

impl MultiAeParams {
    pub fn new(alpha: f64, gamma: f64) -> Self {
        Self {
            alpha,
            gamma,
            guard_factor: DEFAULT_GUARD_FACTOR,
        }
    }
}

/// Multi-AE learner: for each S, Δ_S = p̃(S) − Σ_S x; if |Δ_S| > α|S| − τN,
/// shift S by Δ_S/|S| with clipping.
///
/// `truth`, when given, is used only to record the potential in the trace.
pub fn learn_multi_ae<Q: StatisticalQuery + ?Sized>(
    collection: &BoundCollection,
    oracle: &mut Q,
    params: &MultiAeParams,
    truth: Option<&GroundTruth>,
) -> Result<(DensePredictor, LearnTrace)> {
    let (alpha, gamma) = (params.alpha, params.gamma);
    check_unit("alpha", alpha)?;
    check_unit("gamma", gamma)?;
    collection.check_floor(gamma)?;
    let tau = oracle.tolerance();
    if tau > alpha * gamma / 4.0 + 1e-15 {
        return Err(Error::Precondition(format!(
            "SQ tolerance {tau} exceeds alpha*gamma/4 = {}",
            alpha * gamma / 4.0
        )));
    }
    let start = Instant::now();
    let n = collection.n;
    let bound = multi_ae_bound(alpha, gamma);
    let guard = params.guard_factor * (bound + collection.len() as f64);
    let mut trace = LearnTrace::new(Algorithm::MultiAe, alpha, None, gamma, n, bound);
    let mut x = DensePredictor::constant(n, 0.5)?;

    loop {
        trace.totals.sweeps += 1;
        let mut changed = false;
        for (index, set) in collection.sets.iter().enumerate() {
            if set.is_empty() {
                continue;
            }
            let answer = oracle.query(&set.members)?;
            trace.totals.queries += 1;
            let current: f64 = set.members.iter().map(|&i| x.values()[i]).sum();
            let delta = answer.value - current;
            let size = set.len() as f64;
            if delta.abs() <= alpha * size - tau * n as f64 {
                trace.totals.accepted += 1;
                continue;
            }
            let before = truth.map(|t| squared_error(&x, t));
            x.shift(&set.members, delta / size);
            trace.totals.updates += 1;
            trace.records.push(UpdateRecord {
                round: trace.totals.sweeps,
                kind: UpdateKind::Shift,
                set: Some(index),
                center: None,
                size: set.len(),
                delta: delta / size,
                potential_before: before,
                potential_after: truth.map(|t| squared_error(&x, t)),
            });
            changed = true;
            if trace.totals.updates as f64 > guard {
                return Err(Error::GuardTripped {
                    updates: trace.totals.updates,
                    limit: guard,
                });
            }
        }
        if !changed {
            break;
        }
    }
    trace.totals.wall_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok((x, trace))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MulticalibrationParams {
    pub alpha: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub guard_factor: f64,
    /// Sweep order over the collection; ascending set index when `None`.
    pub order: Option<Vec<usize>>,
}

impl MulticalibrationParams {
    pub fn new(alpha: f64, lambda: f64, gamma: f64) -> Self {
        Self {
            alpha,
            lambda,
            gamma,
            guard_factor: DEFAULT_GUARD_FACTOR,
            order: None,
        }
    }

    /// Smallest window the learner will ever request: α · αλγ / 4.
    pub fn smallest_window(&self) -> f64 {
        self.alpha * self.alpha * self.lambda * self.gamma / 4.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MulticalibrationOutcome {
    /// Output after the closing interval-averaging pass.
    pub predictor: DensePredictor,
    /// Output of the sweep loop, before the closing pass.
    pub pre_closing: DensePredictor,
    pub program: UpdateProgram,
    pub trace: LearnTrace,
}

/// Multicalibration learner. Categories S_v are re-derived from the current
/// predictor after every update; each category of size at least αλ|S| is
/// queried at guess v̄ (its mean prediction) and window αβ/4.
pub fn learn_multicalibrated<G: GuessCheck + ?Sized>(
    collection: &BoundCollection,
    oracle: &mut G,
    params: &MulticalibrationParams,
    truth: Option<&GroundTruth>,
) -> Result<MulticalibrationOutcome> {
    let MulticalibrationParams {
        alpha, lambda, gamma, ..
    } = *params;
    check_unit("alpha", alpha)?;
    check_unit("lambda", lambda)?;
    check_unit("gamma", gamma)?;
    collection.check_floor(gamma)?;
    if oracle.min_window() > params.smallest_window() {
        return Err(Error::Precondition(format!(
            "oracle minimum window {} exceeds the smallest query window {}",
            oracle.min_window(),
            params.smallest_window()
        )));
    }
    let order = sweep_order(collection.len(), params.order.as_deref())?;
    let start = Instant::now();
    let n = collection.n;
    let grid = DiscretizationGrid::new(lambda)?;
    let bits = precision_bits(alpha);
    let bound = multicalibration_bound(alpha, lambda, gamma);
    let guard = params.guard_factor * bound;
    let mut trace = LearnTrace::new(Algorithm::Multicalibration, alpha, Some(lambda), gamma, n, bound);
    let mut program = UpdateProgram::new(grid, bits);
    let mut x = DensePredictor::constant(n, UpdateProgram::INITIAL)?;

    loop {
        trace.totals.sweeps += 1;
        let mut changed = false;
        for &index in &order {
            let set = &collection.sets[index];
            let floor = alpha * lambda * set.len() as f64;
            let mut buckets = grid.bucket(&x, &set.members);
            for cell in 0..grid.cells() {
                let members = &buckets[cell];
                if members.is_empty() || (members.len() as f64) < floor {
                    continue;
                }
                let beta = members.len() as f64 / n as f64;
                let mean = stable_mean(members.iter().map(|&i| x.values()[i])).expect("non-empty category");
                let response = oracle.guess_check(GuessCheckQuery {
                    members,
                    guess: mean,
                    window: alpha * beta / 4.0,
                })?;
                trace.totals.queries += 1;
                let r = match response {
                    GuessCheckResponse::Accepted => {
                        trace.totals.accepted += 1;
                        continue;
                    }
                    GuessCheckResponse::Value(r) => r,
                };
                let delta = quantize(r - mean, bits);
                let before = truth.map(|t| squared_error(&x, t));
                x.shift_fixed(members, delta, bits);
                trace.totals.updates += 1;
                trace.records.push(UpdateRecord {
                    round: trace.totals.sweeps,
                    kind: UpdateKind::Shift,
                    set: Some(index),
                    center: Some(grid.center(cell)),
                    size: members.len(),
                    delta,
                    potential_before: before,
                    potential_after: truth.map(|t| squared_error(&x, t)),
                });
                program.steps.push(UpdateStep {
                    predicate: set.predicate.clone(),
                    cell,
                    delta,
                });
                changed = true;
                if trace.totals.updates as f64 > guard {
                    return Err(Error::GuardTripped {
                        updates: trace.totals.updates,
                        limit: guard,
                    });
                }
                // Predictions moved: later cells of this set see the new categories.
                buckets = grid.bucket(&x, &set.members);
            }
        }
        if !changed {
            break;
        }
    }

    let pre_closing = x.clone();
    let all: Vec<usize> = (0..n).collect();
    let mut table = vec![None; grid.cells()];
    for (cell, members) in grid.bucket(&pre_closing, &all).into_iter().enumerate() {
        // Members sit on the 2^-bits lattice, so the rounded mean stays
        // between the smallest and largest member and thus in the same cell.
        let Some(mean) = stable_mean(members.iter().map(|&i| pre_closing.values()[i])) else {
            continue;
        };
        let mean = quantize(mean, bits);
        table[cell] = Some(mean);
        let values = x.values_mut();
        for &i in &members {
            values[i] = mean;
        }
    }
    program.final_table = Some(table);
    trace.totals.wall_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(MulticalibrationOutcome {
        predictor: x,
        pre_closing,
        program,
        trace,
    })
}

fn default_guard_factor() -> f64 {
    DEFAULT_GUARD_FACTOR
}

/// Learner configuration as read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerConfig {
    pub alpha: f64,
    pub lambda: f64,
    pub gamma: f64,
    #[serde(default = "default_guard_factor")]
    pub max_rounds_factor: f64,
    pub seed: u64,
    pub oracle: OracleConfig,
}

impl LearnerConfig {
    pub fn multicalibration_params(&self) -> MulticalibrationParams {
        MulticalibrationParams {
            guard_factor: self.max_rounds_factor,
            ..MulticalibrationParams::new(self.alpha, self.lambda, self.gamma)
        }
    }
}

/// Default labeled-sample size for sample-based learning:
/// ceil(50 · ln(|C| / (αλγ · 0.05)) / (α⁴ λ^{3/2} γ^{3/2})).
pub fn default_sample_size(collection_size: usize, alpha: f64, lambda: f64, gamma: f64) -> u64 {
    let c = collection_size.max(1) as f64;
    let log = (c / (alpha * lambda * gamma * 0.05)).ln().max(1.0);
    (50.0 * log / (alpha.powi(4) * lambda.powf(1.5) * gamma.powf(1.5))).ceil() as u64
}
