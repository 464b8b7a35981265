//! The universe of individuals: feature rows, hidden Bernoulli parameters,
//! outcome sampling, and the protected collection of subsets.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::{self, Deserializer};
use serde::ser::{SerializeTuple, Serializer};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of decimal digits kept for ground-truth probabilities.
pub const TRUTH_DECIMALS: i32 = 9;

pub(crate) fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Rounds a probability to the decimal precision used by truth files.
pub fn round_probability(p: f64) -> f64 {
    let scale = 10f64.powi(TRUTH_DECIMALS);
    (p * scale).round() / scale
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributeKind {
    /// Stored as 0.0 / 1.0.
    Boolean,
    Real,
}

/// Fixed-width feature rows for individuals `0..n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    kinds: Vec<AttributeKind>,
    values: Vec<f64>,
    n: usize,
}

impl Population {
    pub fn new(kinds: Vec<AttributeKind>, rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::invalid("population needs at least one individual"));
        }
        let dim = kinds.len();
        let mut values = Vec::with_capacity(rows.len() * dim);
        for (id, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::Schema(format!(
                    "individual {id} has {} features, expected {dim}",
                    row.len()
                )));
            }
            for (attr, (&v, kind)) in row.iter().zip(&kinds).enumerate() {
                if !v.is_finite() {
                    return Err(Error::Malformed(format!(
                        "feature {attr} of individual {id} is not finite"
                    )));
                }
                if *kind == AttributeKind::Boolean && v != 0.0 && v != 1.0 {
                    return Err(Error::Schema(format!(
                        "boolean attribute {attr} of individual {id} has value {v}"
                    )));
                }
            }
            values.extend_from_slice(row);
        }
        Ok(Self {
            kinds,
            values,
            n: rows.len(),
        })
    }

    /// A population with no attributes; only `All` and `Explicit` predicates apply.
    pub fn featureless(n: usize) -> Result<Self> {
        Self::new(Vec::new(), vec![Vec::new(); n])
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.kinds.len()
    }

    pub fn kinds(&self) -> &[AttributeKind] {
        &self.kinds
    }

    /// The feature vector of individual `id`.
    pub fn features(&self, id: usize) -> &[f64] {
        let dim = self.dim();
        &self.values[id * dim..(id + 1) * dim]
    }
}

/// The hidden benchmark p*: one Bernoulli parameter per individual.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    probs: Vec<f64>,
}

impl GroundTruth {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::invalid("ground truth needs at least one individual"));
        }
        if let Some(&p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::OutOfUnitInterval(p));
        }
        Ok(Self { probs })
    }

    pub fn constant(n: usize, p: f64) -> Result<Self> {
        Self::new(vec![p; n])
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Σ_{i∈S} p*_i.
    pub fn sum_over(&self, members: &[usize]) -> f64 {
        members.iter().map(|&i| self.probs[i]).sum()
    }
}

/// One realized outcome bit per individual.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutcomeVector {
    pub bits: Vec<u8>,
    pub seed: Option<u64>,
}

impl OutcomeVector {
    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn as_reals(&self) -> Vec<f64> {
        self.bits.iter().map(|&b| f64::from(b)).collect()
    }
}

/// Independent Bernoulli draws, one per individual. Pure in `(truth, seed)`.
pub fn sample_outcomes(truth: &GroundTruth, seed: u64) -> OutcomeVector {
    let mut rng = rng_from_seed(seed);
    let bits = truth.probs.iter().map(|&p| u8::from(rng.random::<f64>() < p)).collect();
    OutcomeVector { bits, seed: Some(seed) }
}

/// `n` uniform draws of an individual (with replacement), each paired with a
/// fresh Bernoulli outcome.
pub fn draw_labeled_samples(truth: &GroundTruth, n: usize, seed: u64) -> Result<Vec<(usize, u8)>> {
    if n == 0 {
        return Err(Error::invalid("sample size must be at least 1"));
    }
    let mut rng = rng_from_seed(seed);
    let size = truth.len();
    Ok((0..n)
        .map(|_| {
            let id = rng.random_range(0..size);
            (id, u8::from(rng.random::<f64>() < truth.probs[id]))
        })
        .collect())
}

/// A conjunction literal. Boolean attributes match on equality, real
/// attributes on `feature >= value`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Literal {
    pub attr: usize,
    pub value: f64,
}

impl Serialize for Literal {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut tup = serializer.serialize_tuple(2)?;
        tup.serialize_element(&self.attr)?;
        tup.serialize_element(&self.value)?;
        tup.end()
    }
}

impl<'de> Deserialize<'de> for Literal {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Value {
            Bool(bool),
            Num(f64),
        }
        let (attr, value): (usize, Value) = Deserialize::deserialize(deserializer)?;
        let value = match value {
            Value::Bool(b) => f64::from(u8::from(b)),
            Value::Num(v) if v.is_finite() => v,
            Value::Num(_) => return Err(de::Error::custom("literal value must be finite")),
        };
        Ok(Literal { attr, value })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StumpDirection {
    Ge,
    Lt,
}

/// Membership circuit for one protected set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SetPredicate {
    Conjunction {
        literals: Vec<Literal>,
    },
    Stump {
        attr: usize,
        threshold: f64,
        direction: StumpDirection,
    },
    Explicit {
        ids: Vec<usize>,
    },
    All,
}

impl SetPredicate {
    pub fn conjunction(literals: impl IntoIterator<Item = (usize, f64)>) -> Self {
        SetPredicate::Conjunction {
            literals: literals
                .into_iter()
                .map(|(attr, value)| Literal { attr, value })
                .collect(),
        }
    }

    /// Builds an explicit set; ids are sorted and deduplicated.
    pub fn explicit(mut ids: Vec<usize>) -> Self {
        ids.sort_unstable();
        ids.dedup();
        SetPredicate::Explicit { ids }
    }

    /// Checks attribute and id ranges against a population.
    pub fn validate(&self, pop: &Population) -> Result<()> {
        let dim = pop.dim();
        match self {
            SetPredicate::Conjunction { literals } => {
                if let Some(l) = literals.iter().find(|l| l.attr >= dim) {
                    return Err(Error::AttributeOutOfRange { index: l.attr, dim });
                }
            }
            SetPredicate::Stump { attr, .. } => {
                if *attr >= dim {
                    return Err(Error::AttributeOutOfRange { index: *attr, dim });
                }
            }
            SetPredicate::Explicit { ids } => {
                if let Some(&id) = ids.iter().find(|&&id| id >= pop.len()) {
                    return Err(Error::IdOutOfRange { id, n: pop.len() });
                }
                if ids.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::Malformed("explicit ids must be sorted and distinct".into()));
                }
            }
            SetPredicate::All => {}
        }
        Ok(())
    }

    /// Membership of a bare feature row. `Explicit` sets cannot be decided
    /// from features alone and report `false`; use [`SetPredicate::contains`].
    pub fn eval_features(&self, kinds: &[AttributeKind], features: &[f64]) -> Result<bool> {
        let dim = kinds.len().min(features.len());
        match self {
            SetPredicate::All => Ok(true),
            SetPredicate::Explicit { .. } => Ok(false),
            SetPredicate::Stump {
                attr,
                threshold,
                direction,
            } => {
                let v = *features
                    .get(*attr)
                    .filter(|_| *attr < dim)
                    .ok_or(Error::AttributeOutOfRange { index: *attr, dim })?;
                Ok(match direction {
                    StumpDirection::Ge => v >= *threshold,
                    StumpDirection::Lt => v < *threshold,
                })
            }
            SetPredicate::Conjunction { literals } => {
                for lit in literals {
                    if lit.attr >= dim {
                        return Err(Error::AttributeOutOfRange { index: lit.attr, dim });
                    }
                    let v = features[lit.attr];
                    let holds = match kinds[lit.attr] {
                        AttributeKind::Boolean => (v >= 0.5) == (lit.value >= 0.5),
                        AttributeKind::Real => v >= lit.value,
                    };
                    if !holds {
                        return Ok(false);
                    }
                }
                Ok(true)
            }
        }
    }

    /// Membership of individual `id`.
    pub fn contains(&self, pop: &Population, id: usize) -> Result<bool> {
        if id >= pop.len() {
            return Err(Error::IdOutOfRange { id, n: pop.len() });
        }
        match self {
            SetPredicate::Explicit { ids } => Ok(ids.binary_search(&id).is_ok()),
            _ => self.eval_features(pop.kinds(), pop.features(id)),
        }
    }

    /// Exact member enumeration, sorted, with density |S|/N.
    pub fn members(&self, pop: &Population) -> Result<Membership> {
        self.validate(pop)?;
        let ids = match self {
            SetPredicate::Explicit { ids } => ids.clone(),
            SetPredicate::All => (0..pop.len()).collect(),
            _ => {
                let mut ids = Vec::new();
                for id in 0..pop.len() {
                    if self.eval_features(pop.kinds(), pop.features(id))? {
                        ids.push(id);
                    }
                }
                ids
            }
        };
        let density = ids.len() as f64 / pop.len() as f64;
        Ok(Membership { ids, density })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Membership {
    pub ids: Vec<usize>,
    pub density: f64,
}

/// The protected collection C with its declared density floor γ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetCollection {
    pub gamma: f64,
    pub sets: Vec<SetPredicate>,
}

impl SubsetCollection {
    /// Enumerates members and enforces `|S| >= gamma * N` for every set.
    pub fn bind(&self, pop: &Population) -> Result<BoundCollection> {
        let bound = self.bind_unchecked(pop)?;
        bound.check_floor(self.gamma)?;
        Ok(bound)
    }

    /// Enumerates members without the density check.
    pub fn bind_unchecked(&self, pop: &Population) -> Result<BoundCollection> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::invalid(format!("gamma {} must lie in (0, 1]", self.gamma)));
        }
        let sets = self
            .sets
            .iter()
            .map(|p| {
                Ok(BoundSet {
                    members: p.members(pop)?.ids,
                    predicate: p.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(BoundCollection {
            n: pop.len(),
            gamma: self.gamma,
            sets,
        })
    }
}

/// A predicate together with its enumerated members.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundSet {
    pub predicate: SetPredicate,
    pub members: Vec<usize>,
}

impl BoundSet {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// A collection materialized against a population.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundCollection {
    pub n: usize,
    pub gamma: f64,
    pub sets: Vec<BoundSet>,
}

impl BoundCollection {
    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    /// Smallest |S|/N over the collection (1.0 when empty).
    pub fn min_density(&self) -> f64 {
        self.sets
            .iter()
            .map(|s| s.len() as f64 / self.n as f64)
            .fold(1.0, f64::min)
    }

    pub fn check_floor(&self, gamma: f64) -> Result<()> {
        for (index, set) in self.sets.iter().enumerate() {
            let density = set.len() as f64 / self.n as f64;
            if density < gamma {
                return Err(Error::DensityFloor { index, density, gamma });
            }
        }
        Ok(())
    }

    /// The sets with `|S| >= gamma * N`, in their original order.
    pub fn dense_subcollection(&self, gamma: f64) -> BoundCollection {
        BoundCollection {
            n: self.n,
            gamma,
            sets: self
                .sets
                .iter()
                .filter(|s| s.len() as f64 >= gamma * self.n as f64)
                .cloned()
                .collect(),
        }
    }

    pub fn to_collection(&self) -> SubsetCollection {
        SubsetCollection {
            gamma: self.gamma,
            sets: self.sets.iter().map(|s| s.predicate.clone()).collect(),
        }
    }
}

// ---------------------------------------------------------------------------
// Synthetic instances

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TruthSpec {
    Constant {
        value: f64,
    },
    /// p* = base + Σ offsets over planted conjunctions (+ uniform jitter).
    Additive {
        base: f64,
        offsets: Vec<f64>,
        #[serde(default = "default_width")]
        width: usize,
        #[serde(default)]
        noise: f64,
        #[serde(default)]
        clip: bool,
    },
    /// A set S with a qualified half S' (p* = 1) and an unqualified half (p* = 0).
    HalfQualified {
        set_size: usize,
        #[serde(default = "default_outside")]
        outside: f64,
    },
}

fn default_width() -> usize {
    2
}

fn default_outside() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollectionSpec {
    /// Random conjunctions added on top of the planted/qualified sets.
    #[serde(default)]
    pub extra_conjunctions: usize,
    /// Maximum literals per random conjunction.
    #[serde(default = "default_width")]
    pub max_width: usize,
    #[serde(default)]
    pub include_all: bool,
    #[serde(default = "default_true")]
    pub include_planted: bool,
}

fn default_true() -> bool {
    true
}

impl Default for CollectionSpec {
    fn default() -> Self {
        Self {
            extra_conjunctions: 0,
            max_width: default_width(),
            include_all: false,
            include_planted: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n: usize,
    #[serde(default)]
    pub boolean_features: usize,
    #[serde(default)]
    pub real_features: usize,
    pub gamma: f64,
    pub truth: TruthSpec,
    #[serde(default)]
    pub collection: CollectionSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticInstance {
    pub population: Population,
    pub truth: GroundTruth,
    pub collection: SubsetCollection,
    /// Sets that shape p* (planted conjunctions, or S and S').
    pub planted: Vec<SetPredicate>,
}

const MAX_SET_ATTEMPTS: usize = 2000;

fn random_conjunction(
    pop: &Population,
    bool_attrs: &[usize],
    width: usize,
    gamma: f64,
    rng: &mut ChaCha8Rng,
) -> Result<SetPredicate> {
    if bool_attrs.is_empty() {
        return Err(Error::invalid("random conjunctions need boolean features"));
    }
    let width = width.clamp(1, bool_attrs.len());
    for _ in 0..MAX_SET_ATTEMPTS {
        let k = rng.random_range(1..=width);
        let mut attrs = bool_attrs.to_vec();
        attrs.shuffle(rng);
        attrs.truncate(k);
        attrs.sort_unstable();
        let pred = SetPredicate::conjunction(
            attrs
                .into_iter()
                .map(|a| (a, f64::from(u8::from(rng.random::<bool>())))),
        );
        if pred.members(pop)?.density >= gamma {
            return Ok(pred);
        }
    }
    Err(Error::invalid(format!(
        "could not draw a conjunction with density >= {gamma} in {MAX_SET_ATTEMPTS} attempts"
    )))
}

/// Deterministic instance generator.
pub fn generate_synthetic(config: &SyntheticConfig, seed: u64) -> Result<SyntheticInstance> {
    if config.n == 0 {
        return Err(Error::invalid("N must be at least 1"));
    }
    if !(config.gamma > 0.0 && config.gamma <= 1.0) {
        return Err(Error::invalid("gamma must lie in (0, 1]"));
    }
    let mut rng = rng_from_seed(seed);
    let n = config.n;

    // Half-qualified instances reserve two leading boolean attributes for S and S'.
    let reserved = usize::from(matches!(config.truth, TruthSpec::HalfQualified { .. })) * 2;
    let mut kinds = vec![AttributeKind::Boolean; reserved + config.boolean_features];
    kinds.extend(std::iter::repeat_n(AttributeKind::Real, config.real_features));

    let mut rows: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let mut row = vec![0.0; reserved];
            row.extend((0..config.boolean_features).map(|_| f64::from(u8::from(rng.random::<bool>()))));
            row.extend((0..config.real_features).map(|_| rng.random::<f64>()));
            row
        })
        .collect();

    if let TruthSpec::HalfQualified { set_size, .. } = config.truth {
        if set_size == 0 || set_size > n || set_size % 2 != 0 {
            return Err(Error::invalid(format!(
                "half-qualified set size {set_size} must be even and within 1..={n}"
            )));
        }
        let mut ids: Vec<usize> = (0..n).collect();
        ids.shuffle(&mut rng);
        for (rank, &id) in ids.iter().take(set_size).enumerate() {
            rows[id][0] = 1.0;
            if rank < set_size / 2 {
                rows[id][1] = 1.0;
            }
        }
    }

    let pop = Population::new(kinds, rows)?;
    let bool_attrs: Vec<usize> = (reserved..reserved + config.boolean_features).collect();

    let (probs, planted) = match &config.truth {
        TruthSpec::Constant { value } => {
            if !(0.0..=1.0).contains(value) {
                return Err(Error::OutOfUnitInterval(*value));
            }
            (vec![*value; n], Vec::new())
        }
        TruthSpec::HalfQualified { outside, .. } => {
            if !(0.0..=1.0).contains(outside) {
                return Err(Error::OutOfUnitInterval(*outside));
            }
            let s = SetPredicate::conjunction([(0, 1.0)]);
            let s_prime = SetPredicate::conjunction([(0, 1.0), (1, 1.0)]);
            let probs = (0..n)
                .map(|id| {
                    let f = pop.features(id);
                    match (f[0] >= 0.5, f[1] >= 0.5) {
                        (true, true) => 1.0,
                        (true, false) => 0.0,
                        _ => *outside,
                    }
                })
                .collect();
            (probs, vec![s, s_prime])
        }
        TruthSpec::Additive {
            base,
            offsets,
            width,
            noise,
            clip,
        } => {
            let mut planted = Vec::with_capacity(offsets.len());
            let mut probs = vec![*base; n];
            for &offset in offsets {
                let pred = random_conjunction(&pop, &bool_attrs, *width, config.gamma, &mut rng)?;
                for id in pred.members(&pop)?.ids {
                    probs[id] += offset;
                }
                planted.push(pred);
            }
            for p in probs.iter_mut() {
                if *noise > 0.0 {
                    *p += rng.random_range(-*noise..=*noise);
                }
                if !(0.0..=1.0).contains(p) {
                    if *clip {
                        *p = p.clamp(0.0, 1.0);
                    } else {
                        return Err(Error::invalid(format!(
                            "composed probability {p} leaves [0, 1]; enable clip to allow clipping"
                        )));
                    }
                }
            }
            (probs, planted)
        }
    };

    let truth = GroundTruth::new(probs.into_iter().map(round_probability).collect())?;

    let spec = &config.collection;
    let mut sets = Vec::new();
    if spec.include_all {
        sets.push(SetPredicate::All);
    }
    if spec.include_planted {
        sets.extend(planted.iter().cloned());
    }
    for _ in 0..spec.extra_conjunctions {
        sets.push(random_conjunction(
            &pop,
            &bool_attrs,
            spec.max_width,
            config.gamma,
            &mut rng,
        )?);
    }
    let collection = SubsetCollection {
        gamma: config.gamma,
        sets,
    };
    collection.bind(&pop)?;

    Ok(SyntheticInstance {
        population: pop,
        truth,
        collection,
        planted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_pop() -> Population {
        Population::new(
            vec![AttributeKind::Boolean, AttributeKind::Real, AttributeKind::Boolean],
            vec![vec![1.0, 0.3, 0.0], vec![1.0, 0.7, 1.0], vec![0.0, 0.5, 0.0]],
        )
        .unwrap()
    }

    #[test]
    fn degenerate_bernoulli_outcomes() {
        let zeros = GroundTruth::constant(50, 0.0).unwrap();
        let ones = GroundTruth::constant(50, 1.0).unwrap();
        for seed in 0..5 {
            assert!(sample_outcomes(&zeros, seed).bits.iter().all(|&b| b == 0));
            assert!(sample_outcomes(&ones, seed).bits.iter().all(|&b| b == 1));
        }
    }

    #[test]
    fn sampling_is_pure_in_seed() {
        let truth = GroundTruth::constant(200, 0.37).unwrap();
        assert_eq!(sample_outcomes(&truth, 9), sample_outcomes(&truth, 9));
        assert_ne!(sample_outcomes(&truth, 9).bits, sample_outcomes(&truth, 10).bits);
    }

    #[test]
    fn labeled_samples_preconditions() {
        let truth = GroundTruth::constant(1, 1.0).unwrap();
        assert!(draw_labeled_samples(&truth, 0, 1).is_err());
        assert_eq!(draw_labeled_samples(&truth, 5, 1).unwrap(), vec![(0, 1); 5]);
    }

    #[test]
    fn predicate_evaluation() {
        let pop = tiny_pop();
        assert!(SetPredicate::All.contains(&pop, 2).unwrap());
        let empty = SetPredicate::conjunction([]);
        assert!((0..3).all(|i| empty.contains(&pop, i).unwrap()));
        let conj = SetPredicate::conjunction([(0, 1.0), (2, 0.0)]);
        assert!(conj.contains(&pop, 0).unwrap());
        assert!(!conj.contains(&pop, 1).unwrap());
        assert!(!conj.contains(&pop, 2).unwrap());
        // Real literal acts as a threshold.
        let real = SetPredicate::conjunction([(1, 0.5)]);
        assert_eq!(real.members(&pop).unwrap().ids, vec![1, 2]);
        let stump = SetPredicate::Stump {
            attr: 1,
            threshold: 0.5,
            direction: StumpDirection::Lt,
        };
        assert_eq!(stump.members(&pop).unwrap().ids, vec![0]);
    }

    #[test]
    fn attribute_out_of_range_is_an_error() {
        let pop = tiny_pop();
        let bad = SetPredicate::conjunction([(7, 1.0)]);
        assert!(matches!(
            bad.contains(&pop, 0),
            Err(Error::AttributeOutOfRange { index: 7, dim: 3 })
        ));
        assert!(bad.members(&pop).is_err());
    }

    #[test]
    fn members_and_density() {
        let pop = Population::featureless(7).unwrap();
        let all = SetPredicate::All.members(&pop).unwrap();
        assert_eq!(all.ids, (0..7).collect::<Vec<_>>());
        assert_eq!(all.density, 1.0);
        let ex = SetPredicate::explicit(vec![5, 3]).members(&pop).unwrap();
        assert_eq!(ex.ids, vec![3, 5]);
        assert_eq!(ex.density, 2.0 / 7.0);
    }

    #[test]
    fn density_floor_enforced_at_bind() {
        let pop = Population::featureless(10).unwrap();
        let c = SubsetCollection {
            gamma: 0.3,
            sets: vec![SetPredicate::All, SetPredicate::explicit(vec![1, 2])],
        };
        assert!(matches!(c.bind(&pop), Err(Error::DensityFloor { index: 1, .. })));
        assert_eq!(c.bind_unchecked(&pop).unwrap().len(), 2);
    }

    #[test]
    fn literal_accepts_booleans() {
        let p: SetPredicate =
            serde_json::from_str(r#"{"kind":"conjunction","literals":[[0,true],[2,false]]}"#).unwrap();
        assert_eq!(p, SetPredicate::conjunction([(0, 1.0), (2, 0.0)]));
    }

    #[test]
    fn half_qualified_instance() {
        let cfg = SyntheticConfig {
            n: 400,
            boolean_features: 3,
            real_features: 0,
            gamma: 0.1,
            truth: TruthSpec::HalfQualified {
                set_size: 100,
                outside: 0.5,
            },
            collection: CollectionSpec::default(),
        };
        let inst = generate_synthetic(&cfg, 3).unwrap();
        let s = inst.planted[0].members(&inst.population).unwrap().ids;
        assert_eq!(s.len(), 100);
        let p = inst.truth.probs();
        assert_eq!(s.iter().filter(|&&i| p[i] == 1.0).count(), 50);
        assert_eq!(s.iter().filter(|&&i| p[i] == 0.0).count(), 50);
        assert_eq!(inst.collection.sets.len(), 2);
    }

    #[test]
    fn constant_truth_instance() {
        let cfg = SyntheticConfig {
            n: 50,
            boolean_features: 4,
            real_features: 1,
            gamma: 0.1,
            truth: TruthSpec::Constant { value: 0.5 },
            collection: CollectionSpec {
                extra_conjunctions: 3,
                ..Default::default()
            },
        };
        let inst = generate_synthetic(&cfg, 1).unwrap();
        assert!(inst.truth.probs().iter().all(|&p| p == 0.5));
        assert_eq!(inst.collection.sets.len(), 3);
        assert_eq!(generate_synthetic(&cfg, 1).unwrap(), inst);
    }

    #[test]
    fn additive_truth_requires_clip_when_out_of_range() {
        let mut cfg = SyntheticConfig {
            n: 200,
            boolean_features: 4,
            real_features: 0,
            gamma: 0.1,
            truth: TruthSpec::Additive {
                base: 0.9,
                offsets: vec![0.5],
                width: 1,
                noise: 0.0,
                clip: false,
            },
            collection: CollectionSpec::default(),
        };
        assert!(generate_synthetic(&cfg, 0).is_err());
        if let TruthSpec::Additive { clip, .. } = &mut cfg.truth {
            *clip = true;
        }
        let inst = generate_synthetic(&cfg, 0).unwrap();
        assert!(inst.truth.probs().iter().all(|p| (0.0..=1.0).contains(p)));
    }
}
