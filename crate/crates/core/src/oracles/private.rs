use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{GuessCheck, GuessCheckQuery, GuessCheckResponse, SampleStore};
use crate::error::{Error, Result};
use crate::population::rng_from_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    #[default]
    Calibrated,
    /// Noise scale zero; deterministic thresholding of the empirical estimate.
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrivacyBudget {
    pub epsilon: f64,
    pub delta: f64,
    pub k_max: u64,
    pub m_max: u64,
    pub queries: u64,
    pub answers: u64,
}

impl PrivacyBudget {
    pub fn new(epsilon: f64, delta: f64, k_max: u64, m_max: u64) -> Self {
        Self {
            epsilon,
            delta,
            k_max,
            m_max,
            queries: 0,
            answers: 0,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::invalid("epsilon must be positive"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::invalid("delta must lie in (0, 1)"));
        }
        Ok(())
    }

    /// Per-round privacy parameter under advanced composition over m_max
    /// above-threshold rounds.
    pub fn round_epsilon(&self) -> f64 {
        self.epsilon / (8.0 * self.m_max.max(1) as f64 * (1.0 / self.delta).ln()).sqrt()
    }

    pub fn remaining_answers(&self) -> u64 {
        self.m_max - self.answers
    }
}

/// Laplace scales in units of one query's count sensitivity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseScales {
    pub threshold: f64,
    pub query: f64,
    pub release: f64,
}

impl NoiseScales {
    fn for_round_epsilon(eps0: f64) -> Self {
        Self {
            threshold: 4.0 / eps0,
            query: 8.0 / eps0,
            release: 2.0 / eps0,
        }
    }

    /// Probability that the noise moves a decision or a release by more than
    /// the margin `margin` (count units) when the sensitivity is `sens`.
    pub fn failure_bound(&self, margin: f64, sens: f64) -> f64 {
        (-margin / (2.0 * self.threshold * sens)).exp()
            + (-margin / (2.0 * self.query * sens)).exp()
            + (-margin / (self.release * sens)).exp()
    }
}

fn laplace(rng: &mut ChaCha8Rng, scale: f64) -> f64 {
    if scale == 0.0 {
        return 0.0;
    }
    let u: f64 = rng.random_range(-0.5..0.5);
    -scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

/// Noisy guess-and-check over a labeled sample.
///
/// A query with window ω is answered at effective window 2ω: the deviation
/// |p̂_S(X) − |S|v| is compared against 6ωN plus a Laplace threshold, and an
/// above-threshold query releases p̂_S(X)/|S| plus Laplace noise. Each release
/// costs one unit of the answer budget and refreshes the noisy threshold.
#[derive(Debug, Clone)]
pub struct PrivateOracle<'a> {
    store: &'a SampleStore,
    budget: PrivacyBudget,
    min_window: f64,
    mode: NoiseMode,
    scales: NoiseScales,
    rng: ChaCha8Rng,
    threshold_noise: f64,
}

impl<'a> PrivateOracle<'a> {
    pub fn new(
        store: &'a SampleStore,
        budget: PrivacyBudget,
        min_window: f64,
        xi: f64,
        mode: NoiseMode,
        seed: u64,
    ) -> Result<Self> {
        budget.validate()?;
        if !(min_window > 0.0) {
            return Err(Error::invalid("private oracle needs a positive minimum window"));
        }
        if !(xi > 0.0 && xi < 1.0) {
            return Err(Error::invalid("xi must lie in (0, 1)"));
        }
        let scales = NoiseScales::for_round_epsilon(budget.round_epsilon());
        if mode == NoiseMode::Calibrated {
            let required = Self::required_samples(&budget, min_window, xi);
            if store.total() < required {
                return Err(Error::InsufficientSample {
                    required,
                    have: store.total(),
                });
            }
        }
        let mut rng = rng_from_seed(seed);
        let threshold_noise = match mode {
            NoiseMode::Calibrated => laplace(&mut rng, scales.threshold),
            NoiseMode::Off => 0.0,
        };
        Ok(Self {
            store,
            budget,
            min_window,
            mode,
            scales,
            rng,
            threshold_noise,
        })
    }

    /// Smallest sample for which the per-query failure bound stays below ξ at
    /// window `min_window`, assuming sensitivity N/n.
    pub fn required_samples(budget: &PrivacyBudget, min_window: f64, xi: f64) -> u64 {
        let effective = 2.0 * min_window;
        (16.0 * (3.0 / xi).ln() / (budget.round_epsilon() * effective)).ceil() as u64
    }

    pub fn budget(&self) -> &PrivacyBudget {
        &self.budget
    }

    pub fn scales(&self) -> NoiseScales {
        self.scales
    }

    fn noise(&mut self, scale: f64) -> f64 {
        match self.mode {
            NoiseMode::Calibrated => laplace(&mut self.rng, scale),
            NoiseMode::Off => 0.0,
        }
    }
}

impl GuessCheck for PrivateOracle<'_> {
    fn guess_check(&mut self, query: GuessCheckQuery<'_>) -> Result<GuessCheckResponse> {
        super::check_query(&query, self.min_window)?;
        if self.budget.queries >= self.budget.k_max {
            return Err(Error::BudgetExhausted(format!(
                "{} queries asked, cap {}",
                self.budget.queries, self.budget.k_max
            )));
        }
        if self.budget.answers >= self.budget.m_max {
            return Err(Error::BudgetExhausted(format!(
                "{} answers released, cap {}",
                self.budget.answers, self.budget.m_max
            )));
        }
        self.budget.queries += 1;

        let size = query.members.len();
        let (count, _) = self.store.intersect(query.members);
        let estimate = self.store.estimate(query.members)?;
        let sens = size as f64 / count as f64;
        let n = self.store.population_size() as f64;
        let threshold = 6.0 * query.window * n;
        let deviation = (estimate - size as f64 * query.guess).abs();

        let noisy = deviation + self.noise(self.scales.query * sens);
        if noisy <= threshold + self.threshold_noise * sens {
            return Ok(GuessCheckResponse::Accepted);
        }
        self.budget.answers += 1;
        let released = (estimate + self.noise(self.scales.release * sens)) / size as f64;
        self.threshold_noise = self.noise(self.scales.threshold);
        Ok(GuessCheckResponse::Value(released.clamp(0.0, 1.0)))
    }

    fn min_window(&self) -> f64 {
        self.min_window
    }
}
