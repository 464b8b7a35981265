//! Weak agnostic learning and multicalibration in both directions: learning a
//! calibrated predictor by repeatedly asking a weak learner for a hypothesis
//! correlated with the calibration residuals, and answering a weak-learning
//! query with the sign of a multicalibrated predictor.

use std::time::Instant;

use crate::auditor::squared_error;
use crate::error::{Error, Result};
use crate::learners::{
    check_unit, learn_multicalibrated, Algorithm, LearnTrace, MulticalibrationParams, UpdateKind, UpdateRecord,
    DEFAULT_GUARD_FACTOR,
};
use crate::oracles::ExactGuessCheck;
use crate::population::{draw_labeled_samples, BoundCollection, BoundSet, GroundTruth, Population, SetPredicate};
use crate::predictor::{DensePredictor, DiscretizationGrid};

/// (1/N) Σ a_i b_i.
pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "correlation needs equal-length vectors");
    if a.is_empty() {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / a.len() as f64
}

/// c_S as a ±1 vector over the population.
pub fn concept_values(set: &BoundSet, n: usize) -> Vec<f64> {
    let mut c = vec![-1.0; n];
    for &i in &set.members {
        c[i] = 1.0;
    }
    c
}

/// Maps a label in [−1, 1] to [0, 1].
pub fn label_to_unit(y: f64) -> f64 {
    (y + 1.0) / 2.0
}

pub fn unit_to_label(u: f64) -> f64 {
    2.0 * u - 1.0
}

/// One real label in [−1, 1] per individual.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelVector {
    values: Vec<f64>,
}

impl LabelVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(&v) = values.iter().find(|v| !(-1.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("label {v} lies outside [-1, 1]")));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Δ_i = (x_i − o_i)/2 on the interval `cell`, zero elsewhere.
pub fn build_delta_labels(x: &DensePredictor, outcomes: &[f64], grid: &DiscretizationGrid, cell: usize) -> Vec<f64> {
    x.values()
        .iter()
        .zip(outcomes)
        .map(|(&xi, &oi)| {
            if grid.cell_unchecked(xi) == cell {
                (xi - oi) / 2.0
            } else {
                0.0
            }
        })
        .collect()
}

/// A (ρ, τ) weak agnostic learning contract.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WalContract {
    pub rho: f64,
    pub tau: f64,
}

impl WalContract {
    pub fn new(rho: f64, tau: f64) -> Result<Self> {
        if !(tau > 0.0 && rho >= tau) {
            return Err(Error::invalid(format!("need rho >= tau > 0, got rho {rho}, tau {tau}")));
        }
        Ok(Self { rho, tau })
    }
}

/// A real-valued hypothesis over the population with range [−1, 1].
#[derive(Debug, Clone, PartialEq)]
pub enum Hypothesis {
    Constant(f64),
    Concept {
        set: usize,
        predicate: SetPredicate,
    },
    /// sgn(2x − 1) for a predictor x in [0, 1] (zero where x = 1/2).
    SignOfPredictor(DensePredictor),
    Tabulated(Vec<f64>),
}

impl Hypothesis {
    pub fn values(&self, pop: &Population) -> Result<Vec<f64>> {
        let n = pop.len();
        match self {
            Hypothesis::Constant(c) => Ok(vec![*c; n]),
            Hypothesis::Concept { predicate, .. } => (0..n)
                .map(|i| Ok(if predicate.contains(pop, i)? { 1.0 } else { -1.0 }))
                .collect(),
            Hypothesis::SignOfPredictor(x) => {
                if x.len() != n {
                    return Err(Error::Schema(format!(
                        "predictor covers {} ids, population has {n}",
                        x.len()
                    )));
                }
                Ok(x.values().iter().map(|&v| sign(unit_to_label(v))).collect())
            }
            Hypothesis::Tabulated(values) => {
                if values.len() != n {
                    return Err(Error::Schema(format!(
                        "table covers {} ids, population has {n}",
                        values.len()
                    )));
                }
                Ok(values.clone())
            }
        }
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// A hypothesis together with its values on every individual.
#[derive(Debug, Clone, PartialEq)]
pub struct WeakHypothesis {
    pub hypothesis: Hypothesis,
    pub values: Vec<f64>,
    /// Empirical correlation with the labels it was learned from.
    pub correlation: f64,
}

/// Given labeled examples (id, y), return a hypothesis whose empirical
/// correlation with y exceeds `tau`, or `None`.
pub trait WeakLearner {
    fn learn(&mut self, examples: &[(usize, f64)], tau: f64) -> Option<WeakHypothesis>;
}

/// Scans every concept of a collection and the constants ±1.
#[derive(Debug, Clone)]
pub struct ExhaustiveWeakLearner {
    n: usize,
    concepts: Vec<(usize, SetPredicate, Vec<bool>)>,
}

impl ExhaustiveWeakLearner {
    pub fn new(collection: &BoundCollection) -> Self {
        let concepts = collection
            .sets
            .iter()
            .enumerate()
            .map(|(index, set)| {
                let mut mask = vec![false; collection.n];
                set.members.iter().for_each(|&i| mask[i] = true);
                (index, set.predicate.clone(), mask)
            })
            .collect();
        Self {
            n: collection.n,
            concepts,
        }
    }
}

impl WeakLearner for ExhaustiveWeakLearner {
    fn learn(&mut self, examples: &[(usize, f64)], tau: f64) -> Option<WeakHypothesis> {
        if examples.is_empty() {
            return None;
        }
        let count = examples.len() as f64;
        let total: f64 = examples.iter().map(|e| e.1).sum();
        // (correlation, index into concepts or usize::MAX for a constant, constant value)
        let mut best = (total / count, usize::MAX, 1.0);
        if -total / count > best.0 {
            best = (-total / count, usize::MAX, -1.0);
        }
        for (k, (_, _, mask)) in self.concepts.iter().enumerate() {
            let inside: f64 = examples.iter().filter(|e| mask[e.0]).map(|e| e.1).sum();
            let corr = (2.0 * inside - total) / count;
            if corr > best.0 {
                best = (corr, k, 0.0);
            }
        }
        let (correlation, k, constant) = best;
        if correlation <= tau {
            return None;
        }
        Some(if k == usize::MAX {
            WeakHypothesis {
                hypothesis: Hypothesis::Constant(constant),
                values: vec![constant; self.n],
                correlation,
            }
        } else {
            let (set, predicate, mask) = &self.concepts[k];
            WeakHypothesis {
                hypothesis: Hypothesis::Concept {
                    set: *set,
                    predicate: predicate.clone(),
                },
                values: mask.iter().map(|&m| if m { 1.0 } else { -1.0 }).collect(),
                correlation,
            }
        })
    }
}

/// How outcomes are supplied to the weak-agnostic calibration learner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Labeling {
    /// Every individual labeled with o = p*; no sampling noise.
    Exact,
    /// A fresh batch of `size` uniform labeled draws per round.
    Sampled { size: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct WalParams {
    pub alpha: f64,
    pub lambda: f64,
    pub gamma: f64,
    /// Weak learner's correlation threshold; defaults to ρ = α²λγ/2.
    pub tau: Option<f64>,
    pub labeling: Labeling,
    pub guard_factor: f64,
}

impl WalParams {
    pub fn new(alpha: f64, lambda: f64, gamma: f64) -> Self {
        Self {
            alpha,
            lambda,
            gamma,
            tau: None,
            labeling: Labeling::Exact,
            guard_factor: DEFAULT_GUARD_FACTOR,
        }
    }

    /// Interval mass screen β = αλγ.
    pub fn beta(&self) -> f64 {
        self.alpha * self.lambda * self.gamma
    }

    /// ρ = α²λγ/2.
    pub fn rho(&self) -> f64 {
        self.alpha * self.beta() / 2.0
    }

    pub fn effective_tau(&self) -> f64 {
        self.tau.unwrap_or_else(|| self.rho())
    }
}

/// Labeled-example count for one round of the sampled weak-agnostic learner:
/// Hoeffding at accuracy τ/4 with a union bound over `hypotheses` hypotheses,
/// `cells` intervals and both label signs.
pub fn wal_sample_size(hypotheses: usize, cells: usize, tau: f64, xi: f64) -> usize {
    let events = 2.0 * (hypotheses.max(1) * cells.max(1)) as f64;
    ((2.0 * events / xi).ln() / (2.0 * (tau / 4.0).powi(2))).ceil() as usize
}

struct Round {
    /// (id, o) pairs; all N ids with o = p* under exact labeling.
    examples: Vec<(usize, f64)>,
    /// N / (number of examples).
    scale: f64,
}

fn draw_round(truth: &GroundTruth, labeling: Labeling, round: usize) -> Result<Round> {
    match labeling {
        Labeling::Exact => Ok(Round {
            examples: truth.probs().iter().copied().enumerate().collect(),
            scale: 1.0,
        }),
        Labeling::Sampled { size, seed } => {
            let pairs = draw_labeled_samples(truth, size, seed.wrapping_add(round as u64))?;
            Ok(Round {
                scale: truth.len() as f64 / size as f64,
                examples: pairs.into_iter().map(|(i, o)| (i, f64::from(o))).collect(),
            })
        }
    }
}

/// Calibration through a weak agnostic learner. Each round screens the
/// intervals X_v with |X_v| ≥ αλγN; an interval whose residual sum exceeds
/// τN/4 is first shifted by its mean residual, otherwise the learner is asked
/// for a hypothesis correlated with ±Δ and x moves by η = τ/(2β_v) along it
/// on X_v, where β_v = |X_v|/N. Stops when no interval yields a hypothesis.
///
/// `truth` supplies the outcomes (exactly or by sampling) and the potential
/// recorded in the trace.
pub fn learn_via_wal<L: WeakLearner + ?Sized>(
    learner: &mut L,
    truth: &GroundTruth,
    params: &WalParams,
) -> Result<(DensePredictor, LearnTrace)> {
    check_unit("alpha", params.alpha)?;
    check_unit("lambda", params.lambda)?;
    check_unit("gamma", params.gamma)?;
    let tau = params.effective_tau();
    if !(tau > 0.0) {
        return Err(Error::invalid("weak learner threshold must be positive"));
    }
    if tau > params.rho() * (1.0 + 1e-12) {
        return Err(Error::Precondition(format!(
            "weak learner threshold {tau} exceeds rho = {}",
            params.rho()
        )));
    }
    let start = Instant::now();
    let n = truth.len();
    let nf = n as f64;
    let grid = DiscretizationGrid::new(params.lambda)?;
    let screen = params.beta() * nf;
    let bound = 4.0 / (tau * tau);
    let guard = params.guard_factor / (tau * tau);
    let mut trace = LearnTrace::new(
        Algorithm::WeakAgnostic,
        params.alpha,
        Some(params.lambda),
        params.gamma,
        n,
        bound,
    );
    let mut x = DensePredictor::constant(n, 0.5)?;
    let all: Vec<usize> = (0..n).collect();

    'rounds: loop {
        trace.totals.sweeps += 1;
        let round = draw_round(truth, params.labeling, trace.totals.sweeps)?;
        let buckets = grid.bucket(&x, &all);
        for (cell, members) in buckets.iter().enumerate() {
            if (members.len() as f64) < screen || members.is_empty() {
                continue;
            }
            let in_cell: Vec<(usize, f64)> = round
                .examples
                .iter()
                .filter(|(i, _)| grid.cell_unchecked(x.values()[*i]) == cell)
                .copied()
                .collect();
            let residual: f64 = in_cell.iter().map(|&(i, o)| x.values()[i] - o).sum::<f64>() * round.scale;
            let before = squared_error(&x, truth);
            let beta_v = members.len() as f64 / nf;
            let center = Some(grid.center(cell));

            if residual.abs() > tau * nf / 4.0 {
                let shift = -residual / members.len() as f64;
                x.shift(members, shift);
                record(
                    &mut trace,
                    UpdateKind::Offset,
                    None,
                    center,
                    members.len(),
                    shift,
                    before,
                    &x,
                    truth,
                );
                check_guard(&trace, guard)?;
                continue 'rounds;
            }

            for direction in [1.0, -1.0] {
                let labels: Vec<(usize, f64)> = round
                    .examples
                    .iter()
                    .map(|&(i, o)| {
                        let xi = x.values()[i];
                        let d = if grid.cell_unchecked(xi) == cell {
                            (xi - o) / 2.0
                        } else {
                            0.0
                        };
                        (i, direction * d)
                    })
                    .collect();
                trace.totals.queries += 1;
                let Some(found) = learner.learn(&labels, tau) else {
                    continue;
                };
                let eta = tau / (2.0 * beta_v);
                let values = x.values_mut();
                for &i in members {
                    values[i] = (values[i] - direction * eta * found.values[i]).clamp(0.0, 1.0);
                }
                let set = match found.hypothesis {
                    Hypothesis::Concept { set, .. } => Some(set),
                    _ => None,
                };
                record(
                    &mut trace,
                    UpdateKind::Hypothesis,
                    set,
                    center,
                    members.len(),
                    -direction * eta,
                    before,
                    &x,
                    truth,
                );
                check_guard(&trace, guard)?;
                continue 'rounds;
            }
            trace.totals.accepted += 1;
        }
        break;
    }
    trace.totals.wall_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok((x, trace))
}

#[allow(clippy::too_many_arguments)]
fn record(
    trace: &mut LearnTrace,
    kind: UpdateKind,
    set: Option<usize>,
    center: Option<f64>,
    size: usize,
    delta: f64,
    before: f64,
    x: &DensePredictor,
    truth: &GroundTruth,
) {
    trace.totals.updates += 1;
    trace.records.push(UpdateRecord {
        round: trace.totals.sweeps,
        kind,
        set,
        center,
        size,
        delta,
        potential_before: Some(before),
        potential_after: Some(squared_error(x, truth)),
    });
}

fn check_guard(trace: &LearnTrace, guard: f64) -> Result<()> {
    if trace.totals.updates as f64 > guard {
        Err(Error::GuardTripped {
            updates: trace.totals.updates,
            limit: guard,
        })
    } else {
        Ok(())
    }
}

/// A learner that reaches multicalibration on a collection against a
/// benchmark in [0, 1].
pub trait McLearner {
    fn calibrate(
        &mut self,
        collection: &BoundCollection,
        benchmark: &GroundTruth,
        alpha: f64,
        lambda: f64,
    ) -> Result<DensePredictor>;
}

/// The guess-and-check learner driven by an exact oracle on the benchmark;
/// returns the interval-averaged output.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExactMcLearner;

impl McLearner for ExactMcLearner {
    fn calibrate(
        &mut self,
        collection: &BoundCollection,
        benchmark: &GroundTruth,
        alpha: f64,
        lambda: f64,
    ) -> Result<DensePredictor> {
        let mut oracle = ExactGuessCheck::new(benchmark, 0.0);
        let params = MulticalibrationParams::new(alpha, lambda, collection.min_density());
        Ok(learn_multicalibrated(collection, &mut oracle, &params, None)?.predictor)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WalBranch {
    /// ⟨−1, y⟩ ≥ ρ − 2γ.
    NegativeConstant,
    /// |mean y| > ρ/4.
    BiasedConstant,
    /// Sign of a multicalibrated predictor.
    Calibrated,
}

/// Answers a (ρ, τ) weak-learning query on labels `y` with a multicalibration
/// learner. Branch three calibrates on C ∪ {X} against (y + 1)/2 at accuracy
/// α/4 and resolution α/4 in [0, 1] (α/2 in label space after the closing
/// pass) and returns the sign hypothesis.
pub fn wal_from_multicalibration<M: McLearner + ?Sized>(
    mc: &mut M,
    collection: &BoundCollection,
    y: &LabelVector,
    contract: WalContract,
    gamma: f64,
    alpha: f64,
) -> Result<(Hypothesis, WalBranch)> {
    let n = collection.n;
    if y.len() != n {
        return Err(Error::Schema(format!("{} labels for a population of {n}", y.len())));
    }
    let limit = (contract.rho - 2.0 * gamma).min(contract.rho / 4.0 - 4.0 * alpha);
    if contract.tau > limit {
        return Err(Error::Precondition(format!(
            "tau {} exceeds min(rho - 2 gamma, rho/4 - 4 alpha) = {limit}",
            contract.tau
        )));
    }
    let mean = y.values().iter().sum::<f64>() / n as f64;
    if -mean >= contract.rho - 2.0 * gamma {
        return Ok((Hypothesis::Constant(-1.0), WalBranch::NegativeConstant));
    }
    if mean.abs() > contract.rho / 4.0 {
        return Ok((Hypothesis::Constant(sign(mean)), WalBranch::BiasedConstant));
    }
    let mut extended = collection.clone();
    if !extended.sets.iter().any(|s| s.predicate == SetPredicate::All) {
        extended.sets.push(BoundSet {
            predicate: SetPredicate::All,
            members: (0..n).collect(),
        });
    }
    let benchmark = GroundTruth::new(y.values().iter().map(|&v| label_to_unit(v)).collect())?;
    let x = mc.calibrate(&extended, &benchmark, alpha / 4.0, alpha / 4.0)?;
    Ok((Hypothesis::SignOfPredictor(x), WalBranch::Calibrated))
}
