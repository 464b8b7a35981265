//! Statistical-query and guess-and-check access to p*: exact (reads the
//! truth), empirical (reads a fixed labeled sample) and private (noisy
//! thresholding over the sample with a release budget).

mod private;

pub use private::{NoiseMode, NoiseScales, PrivacyBudget, PrivateOracle};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::population::{rng_from_seed, GroundTruth};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SqAnswer {
    pub value: f64,
    /// Absolute tolerance τ; the answer is within τN of the reference sum.
    pub tolerance: f64,
}

/// Answers Σ_{i∈S} p*_i up to ±τN.
pub trait StatisticalQuery {
    fn query(&mut self, members: &[usize]) -> Result<SqAnswer>;
    fn tolerance(&self) -> f64;
}

/// Exact statistical queries, optionally perturbed by a seeded adversary
/// within the declared tolerance.
#[derive(Debug, Clone)]
pub struct ExactSq<'a> {
    truth: &'a GroundTruth,
    tolerance: f64,
    perturbation: Option<ChaCha8Rng>,
}

impl<'a> ExactSq<'a> {
    pub fn new(truth: &'a GroundTruth, tolerance: f64) -> Result<Self> {
        if !(tolerance > 0.0) {
            return Err(Error::invalid("SQ tolerance must be positive"));
        }
        Ok(Self {
            truth,
            tolerance,
            perturbation: None,
        })
    }

    pub fn with_perturbation(mut self, seed: u64) -> Self {
        self.perturbation = Some(rng_from_seed(seed));
        self
    }
}

/// `p*_S`, shifted by a seeded amount in `[-τN, τN]` when `perturbation` is set.
pub fn sq_exact(
    truth: &GroundTruth,
    members: &[usize],
    tolerance: f64,
    perturbation: Option<&mut ChaCha8Rng>,
) -> Result<SqAnswer> {
    if !(tolerance > 0.0) {
        return Err(Error::invalid("SQ tolerance must be positive"));
    }
    let exact = truth.sum_over(members);
    let bound = tolerance * truth.len() as f64;
    let value = match perturbation {
        Some(rng) => exact + rng.random_range(-bound..=bound),
        None => exact,
    };
    Ok(SqAnswer { value, tolerance })
}

impl StatisticalQuery for ExactSq<'_> {
    fn query(&mut self, members: &[usize]) -> Result<SqAnswer> {
        sq_exact(self.truth, members, self.tolerance, self.perturbation.as_mut())
    }

    fn tolerance(&self) -> f64 {
        self.tolerance
    }
}

// ---------------------------------------------------------------------------
// Samples

/// A labeled sample X, kept as per-individual sufficient statistics: how
/// often each individual was drawn and how many of those draws had outcome 1.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleStore {
    draws: Vec<u32>,
    ones: Vec<u32>,
    total: u64,
}

impl SampleStore {
    pub fn from_pairs(n: usize, pairs: &[(usize, u8)]) -> Result<Self> {
        let mut draws = vec![0u32; n];
        let mut ones = vec![0u32; n];
        for &(id, o) in pairs {
            if id >= n {
                return Err(Error::IdOutOfRange { id, n });
            }
            draws[id] += 1;
            ones[id] += u32::from(o != 0);
        }
        Ok(Self {
            draws,
            ones,
            total: pairs.len() as u64,
        })
    }

    /// Every individual labeled exactly once with the given outcome.
    pub fn full(outcomes: &[u8]) -> Self {
        Self {
            draws: vec![1; outcomes.len()],
            ones: outcomes.iter().map(|&o| u32::from(o != 0)).collect(),
            total: outcomes.len() as u64,
        }
    }

    /// Draws `n` uniform labeled samples. Identical in distribution to
    /// [`crate::population::draw_labeled_samples`] but O(N): draw counts
    /// are multinomial and outcomes per individual binomial.
    pub fn draw(truth: &GroundTruth, n: u64, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("sample size must be at least 1"));
        }
        let size = truth.len();
        let mut rng = rng_from_seed(seed);
        let mut draws = vec![0u32; size];
        let mut ones = vec![0u32; size];
        let mut remaining = n;
        for i in 0..size {
            let left = (size - i) as f64;
            let k = if i + 1 == size {
                remaining
            } else {
                Binomial::new(remaining, 1.0 / left)
                    .map_err(|e| Error::invalid(e.to_string()))?
                    .sample(&mut rng)
            };
            remaining -= k;
            let k32 = u32::try_from(k).map_err(|_| Error::invalid("sample too large"))?;
            draws[i] = k32;
            if k > 0 {
                let p = truth.probs()[i];
                ones[i] = Binomial::new(k, p)
                    .map_err(|e| Error::invalid(e.to_string()))?
                    .sample(&mut rng) as u32;
            }
        }
        Ok(Self { draws, ones, total: n })
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn population_size(&self) -> usize {
        self.draws.len()
    }

    /// (|S ∩ X|, Σ_{i∈S∩X} o_i), counting repeated draws.
    pub fn intersect(&self, members: &[usize]) -> (u64, u64) {
        members.iter().fold((0, 0), |(c, o), &i| {
            (c + u64::from(self.draws[i]), o + u64::from(self.ones[i]))
        })
    }

    /// p̂_S(X) = (|S| / |S∩X|) Σ_{i∈S∩X} o_i.
    pub fn estimate(&self, members: &[usize]) -> Result<f64> {
        let (count, ones) = self.intersect(members);
        if count == 0 {
            return Err(Error::EmptyIntersection);
        }
        Ok(members.len() as f64 * ones as f64 / count as f64)
    }
}

/// Half-width of the two-sided Hoeffding interval for a mean of `count`
/// bounded draws at confidence `1 - xi`.
pub fn hoeffding_radius(count: u64, xi: f64) -> f64 {
    ((2.0 / xi).ln() / (2.0 * count as f64)).sqrt()
}

/// Confidence used when reporting an empirical SQ tolerance.
pub const EMPIRICAL_CONFIDENCE_XI: f64 = 0.05;

/// Empirical statistical query; the tolerance reports the Hoeffding radius of
/// the estimate (as a fraction of N) at confidence 1 − 0.05.
pub fn sq_empirical(store: &SampleStore, members: &[usize]) -> Result<SqAnswer> {
    let value = store.estimate(members)?;
    let (count, _) = store.intersect(members);
    let n = store.population_size() as f64;
    let radius = hoeffding_radius(count, EMPIRICAL_CONFIDENCE_XI) * members.len() as f64 / n;
    Ok(SqAnswer {
        value,
        tolerance: radius,
    })
}

#[derive(Debug, Clone)]
pub struct EmpiricalSq<'a> {
    pub store: &'a SampleStore,
}

impl StatisticalQuery for EmpiricalSq<'_> {
    fn query(&mut self, members: &[usize]) -> Result<SqAnswer> {
        sq_empirical(self.store, members)
    }

    fn tolerance(&self) -> f64 {
        0.0
    }
}

// ---------------------------------------------------------------------------
// Guess-and-check

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GuessCheckQuery<'a> {
    pub members: &'a [usize],
    pub guess: f64,
    pub window: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuessCheckResponse {
    Accepted,
    Value(f64),
}

impl GuessCheckResponse {
    pub fn is_accepted(&self) -> bool {
        matches!(self, GuessCheckResponse::Accepted)
    }
}

/// What to do when the deviation falls in [2ωN, 4ωN].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GrayZonePolicy {
    #[default]
    Accept,
    Answer,
}

pub trait GuessCheck {
    fn guess_check(&mut self, query: GuessCheckQuery<'_>) -> Result<GuessCheckResponse>;
    fn min_window(&self) -> f64;
}

/// The three conditions of a guess-and-check oracle with window `window`
/// against reference sum `reference` (= p_S).
pub fn satisfies_contract(
    response: GuessCheckResponse,
    reference: f64,
    size: usize,
    guess: f64,
    window: f64,
    n: usize,
) -> bool {
    let dev = (reference - size as f64 * guess).abs();
    let w = window * n as f64;
    match response {
        GuessCheckResponse::Accepted => dev <= 4.0 * w,
        GuessCheckResponse::Value(r) => {
            (0.0..=1.0).contains(&r) && dev >= 2.0 * w && (r * size as f64 - reference).abs() <= w
        }
    }
}

/// Deterministic decision against a reference sum: ✓ below 2ωN, an answer
/// above 4ωN, and the gray zone resolved by `policy`.
fn decide(reference: f64, size: usize, guess: f64, window: f64, n: usize, policy: GrayZonePolicy) -> bool {
    let dev = (reference - size as f64 * guess).abs();
    let w = window * n as f64;
    if dev < 2.0 * w {
        false
    } else if dev > 4.0 * w {
        true
    } else {
        policy == GrayZonePolicy::Answer
    }
}

pub(super) fn check_query(query: &GuessCheckQuery<'_>, min_window: f64) -> Result<()> {
    if query.window < min_window || !(query.window > 0.0) {
        return Err(Error::WindowBelowMinimum {
            window: query.window,
            min: min_window,
        });
    }
    if query.members.is_empty() {
        return Err(Error::EmptySet);
    }
    if !(0.0..=1.0).contains(&query.guess) {
        return Err(Error::OutOfUnitInterval(query.guess));
    }
    Ok(())
}

/// Guess-and-check against p*. An optional seeded perturbation moves the
/// released value anywhere within the ωN accuracy band.
#[derive(Debug, Clone)]
pub struct ExactGuessCheck<'a> {
    truth: &'a GroundTruth,
    min_window: f64,
    policy: GrayZonePolicy,
    perturbation: Option<ChaCha8Rng>,
}

impl<'a> ExactGuessCheck<'a> {
    pub fn new(truth: &'a GroundTruth, min_window: f64) -> Self {
        Self {
            truth,
            min_window,
            policy: GrayZonePolicy::Accept,
            perturbation: None,
        }
    }

    pub fn with_policy(mut self, policy: GrayZonePolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn with_perturbation(mut self, seed: u64) -> Self {
        self.perturbation = Some(rng_from_seed(seed));
        self
    }
}

/// Stateless exact guess-and-check (no perturbation).
pub fn gc_exact(
    truth: &GroundTruth,
    query: GuessCheckQuery<'_>,
    min_window: f64,
    policy: GrayZonePolicy,
) -> Result<GuessCheckResponse> {
    ExactGuessCheck::new(truth, min_window)
        .with_policy(policy)
        .guess_check(query)
}

impl GuessCheck for ExactGuessCheck<'_> {
    fn guess_check(&mut self, query: GuessCheckQuery<'_>) -> Result<GuessCheckResponse> {
        check_query(&query, self.min_window)?;
        let n = self.truth.len();
        let size = query.members.len();
        let reference = self.truth.sum_over(query.members);
        if !decide(reference, size, query.guess, query.window, n, self.policy) {
            return Ok(GuessCheckResponse::Accepted);
        }
        let mut r = reference / size as f64;
        if let Some(rng) = self.perturbation.as_mut() {
            let band = query.window * n as f64 / size as f64;
            r += rng.random_range(-band..=band);
        }
        Ok(GuessCheckResponse::Value(r.clamp(0.0, 1.0)))
    }

    fn min_window(&self) -> f64 {
        self.min_window
    }
}

/// Guess-and-check against the empirical estimate p̂_S(X).
#[derive(Debug, Clone)]
pub struct EmpiricalGuessCheck<'a> {
    store: &'a SampleStore,
    min_window: f64,
    policy: GrayZonePolicy,
}

impl<'a> EmpiricalGuessCheck<'a> {
    pub fn new(store: &'a SampleStore, min_window: f64) -> Self {
        Self {
            store,
            min_window,
            policy: GrayZonePolicy::Accept,
        }
    }

    pub fn with_policy(mut self, policy: GrayZonePolicy) -> Self {
        self.policy = policy;
        self
    }
}

pub fn gc_empirical(
    store: &SampleStore,
    query: GuessCheckQuery<'_>,
    min_window: f64,
    policy: GrayZonePolicy,
) -> Result<GuessCheckResponse> {
    EmpiricalGuessCheck::new(store, min_window)
        .with_policy(policy)
        .guess_check(query)
}

impl GuessCheck for EmpiricalGuessCheck<'_> {
    fn guess_check(&mut self, query: GuessCheckQuery<'_>) -> Result<GuessCheckResponse> {
        check_query(&query, self.min_window)?;
        let reference = self.store.estimate(query.members)?;
        let size = query.members.len();
        let n = self.store.population_size();
        if decide(reference, size, query.guess, query.window, n, self.policy) {
            Ok(GuessCheckResponse::Value((reference / size as f64).clamp(0.0, 1.0)))
        } else {
            Ok(GuessCheckResponse::Accepted)
        }
    }

    fn min_window(&self) -> f64 {
        self.min_window
    }
}

impl<T: GuessCheck + ?Sized> GuessCheck for &mut T {
    fn guess_check(&mut self, query: GuessCheckQuery<'_>) -> Result<GuessCheckResponse> {
        (**self).guess_check(query)
    }

    fn min_window(&self) -> f64 {
        (**self).min_window()
    }
}

impl<T: GuessCheck + ?Sized> GuessCheck for Box<T> {
    fn guess_check(&mut self, query: GuessCheckQuery<'_>) -> Result<GuessCheckResponse> {
        (**self).guess_check(query)
    }

    fn min_window(&self) -> f64 {
        (**self).min_window()
    }
}

// ---------------------------------------------------------------------------
// Configuration

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleFlavor {
    Exact,
    Empirical,
    Private,
}

fn default_tolerance() -> f64 {
    0.01
}
fn default_window_min() -> f64 {
    1e-12
}
fn default_epsilon() -> f64 {
    1.0
}
fn default_delta() -> f64 {
    1e-6
}
fn default_k_max() -> u64 {
    1_000_000
}
fn default_m_max() -> u64 {
    1_000
}
fn default_xi() -> f64 {
    0.05
}

/// Oracle configuration as read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    pub flavor: OracleFlavor,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_window_min")]
    pub window_min: f64,
    #[serde(default)]
    pub gray_zone: GrayZonePolicy,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_k_max")]
    pub k_max: u64,
    #[serde(default = "default_m_max")]
    pub m_max: u64,
    #[serde(default = "default_xi")]
    pub xi: f64,
    pub seed: u64,
    /// Labeled sample size for the empirical and private flavors; the
    /// learner's default sample-size rule applies when absent.
    #[serde(default)]
    pub samples: Option<u64>,
    #[serde(default)]
    pub noise: NoiseMode,
}

impl OracleConfig {
    pub fn exact(seed: u64) -> Self {
        Self {
            flavor: OracleFlavor::Exact,
            tolerance: default_tolerance(),
            window_min: default_window_min(),
            gray_zone: GrayZonePolicy::Accept,
            epsilon: default_epsilon(),
            delta: default_delta(),
            k_max: default_k_max(),
            m_max: default_m_max(),
            xi: default_xi(),
            seed,
            samples: None,
            noise: NoiseMode::Calibrated,
        }
    }

    pub fn budget(&self) -> PrivacyBudget {
        PrivacyBudget::new(self.epsilon, self.delta, self.k_max, self.m_max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(members: &[usize], guess: f64, window: f64) -> GuessCheckQuery<'_> {
        GuessCheckQuery { members, guess, window }
    }

    #[test]
    fn sq_exact_examples() {
        let truth = GroundTruth::constant(1000, 0.5).unwrap();
        let s: Vec<usize> = (0..100).collect();
        assert_eq!(sq_exact(&truth, &s, 0.01, None).unwrap().value, 50.0);
        let mut rng = rng_from_seed(4);
        for _ in 0..100 {
            let a = sq_exact(&truth, &s, 0.01, Some(&mut rng)).unwrap();
            assert!((a.value - 50.0).abs() <= 10.0);
        }
        assert!(sq_exact(&truth, &s, 0.0, None).is_err());
    }

    #[test]
    fn sq_empirical_examples() {
        let outcomes = vec![1u8, 0, 1, 1, 0];
        let store = SampleStore::full(&outcomes);
        assert_eq!(sq_empirical(&store, &[0, 1, 2]).unwrap().value, 2.0);
        let single = SampleStore::from_pairs(5, &[(3, 1)]).unwrap();
        assert_eq!(sq_empirical(&single, &[2, 3, 4]).unwrap().value, 3.0);
        assert!(matches!(sq_empirical(&single, &[0, 1]), Err(Error::EmptyIntersection)));
    }

    #[test]
    fn gc_exact_examples() {
        // p*_S = 50 on |S| = 100 of N = 1000.
        let mut p = vec![0.0; 1000];
        p.iter_mut()
            .take(100)
            .enumerate()
            .for_each(|(i, v)| *v = if i % 2 == 0 { 1.0 } else { 0.0 });
        let truth = GroundTruth::new(p).unwrap();
        let s: Vec<usize> = (0..100).collect();
        let pol = GrayZonePolicy::Accept;
        assert!(gc_exact(&truth, q(&s, 0.5, 0.004), 0.0, pol).unwrap().is_accepted());
        match gc_exact(&truth, q(&s, 0.9, 0.004), 0.0, pol).unwrap() {
            GuessCheckResponse::Value(r) => assert!((46.0..=54.0).contains(&(r * 100.0))),
            other => panic!("expected a value, got {other:?}"),
        }
        // Deviation exactly 3ωN: 3 * 0.004 * 1000 = 12 → guess 0.62.
        assert!(gc_exact(&truth, q(&s, 0.62, 0.004), 0.0, pol).unwrap().is_accepted());
        assert!(!gc_exact(&truth, q(&s, 0.62, 0.004), 0.0, GrayZonePolicy::Answer)
            .unwrap()
            .is_accepted());
        assert!(matches!(
            gc_exact(&truth, q(&s, 0.5, 0.001), 0.002, pol),
            Err(Error::WindowBelowMinimum { .. })
        ));
    }

    #[test]
    fn gc_empirical_matches_exact_on_full_store() {
        let outcomes: Vec<u8> = (0..300).map(|i| u8::from(i % 3 == 0)).collect();
        let store = SampleStore::full(&outcomes);
        let truth = GroundTruth::new(outcomes.iter().map(|&o| f64::from(o)).collect()).unwrap();
        let s: Vec<usize> = (0..120).collect();
        for guess in [0.0, 0.2, 1.0 / 3.0, 0.5, 0.9] {
            for window in [0.001, 0.01, 0.05] {
                for pol in [GrayZonePolicy::Accept, GrayZonePolicy::Answer] {
                    assert_eq!(
                        gc_empirical(&store, q(&s, guess, window), 0.0, pol).unwrap(),
                        gc_exact(&truth, q(&s, guess, window), 0.0, pol).unwrap()
                    );
                }
            }
        }
    }

    #[test]
    fn gc_empirical_exact_guess_and_planted_violation() {
        // Empirical mean on S is 0.25; N = 400, |S| = 200.
        let outcomes: Vec<u8> = (0..400).map(|i| u8::from(i % 4 == 0)).collect();
        let store = SampleStore::full(&outcomes);
        let s: Vec<usize> = (0..200).collect();
        let pol = GrayZonePolicy::Accept;
        assert!(gc_empirical(&store, q(&s, 0.25, 0.01), 0.0, pol).unwrap().is_accepted());
        // Deviation 8ωN with ω = 0.005: |50 − 200 v| = 16 → v = 0.33.
        match gc_empirical(&store, q(&s, 0.33, 0.005), 0.0, pol).unwrap() {
            GuessCheckResponse::Value(r) => assert!((r * 200.0 - 50.0).abs() <= 0.005 * 400.0),
            other => panic!("expected a value, got {other:?}"),
        }
    }

    #[test]
    fn aggregated_store_counts() {
        let truth = GroundTruth::new((0..50).map(|i| i as f64 / 49.0).collect()).unwrap();
        let store = SampleStore::draw(&truth, 10_000, 2).unwrap();
        assert_eq!(store.total(), 10_000);
        let all: Vec<usize> = (0..50).collect();
        assert_eq!(store.intersect(&all).0, 10_000);
        assert_eq!(store.ones[0], 0);
        assert_eq!(store.ones[49], store.draws[49]);
    }

    #[test]
    fn oracle_config_defaults() {
        let c: OracleConfig = serde_json::from_str(r#"{"flavor":"private","seed":3}"#).unwrap();
        assert_eq!(c.flavor, OracleFlavor::Private);
        assert_eq!(c.gray_zone, GrayZonePolicy::Accept);
        assert_eq!(c.xi, 0.05);
        let c: OracleConfig =
            serde_json::from_str(r#"{"flavor":"exact","seed":1,"gray_zone":"answer","tolerance":0.002}"#).unwrap();
        assert_eq!(c.gray_zone, GrayZonePolicy::Answer);
    }
}
