//! Dense predictors, λ-discretization, categories, and the update-program
//! representation emitted by the calibration learner.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::population::{Population, SetPredicate};

/// Predictions in [0, 1], one per individual.
#[derive(Debug, Clone, PartialEq)]
pub struct DensePredictor {
    values: Vec<f64>,
}

impl DensePredictor {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(&v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::OutOfUnitInterval(v));
        }
        Ok(Self { values })
    }

    pub fn constant(n: usize, value: f64) -> Result<Self> {
        Self::new(vec![value; n])
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

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Adds `delta` to every listed individual, projecting onto [0, 1].
    pub fn shift(&mut self, members: &[usize], delta: f64) {
        for &i in members {
            self.values[i] = (self.values[i] + delta).clamp(0.0, 1.0);
        }
    }

    /// Same as [`DensePredictor::shift`] but stays on the 2^-bits lattice.
    pub fn shift_fixed(&mut self, members: &[usize], delta: f64, bits: u32) {
        for &i in members {
            self.values[i] = fixed_add(self.values[i], delta, bits);
        }
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
}

/// Pure form of [`DensePredictor::shift`].
pub fn apply_update(x: &DensePredictor, members: &[usize], delta: f64) -> DensePredictor {
    let mut out = x.clone();
    out.shift(members, delta);
    out
}

// ---------------------------------------------------------------------------
// Fixed point

/// Fractional bits used for program arithmetic: max(ceil(log2(1/α)), 20).
pub fn precision_bits(alpha: f64) -> u32 {
    let needed = (1.0 / alpha).log2().ceil().max(0.0) as u32;
    needed.max(20)
}

pub fn quantize(value: f64, bits: u32) -> f64 {
    let scale = (bits as f64).exp2();
    (value * scale).round() / scale
}

/// `clip(value + delta)` rounded to the 2^-bits lattice. Exact in f64 when
/// both operands are already on the lattice.
pub fn fixed_add(value: f64, delta: f64, bits: u32) -> f64 {
    quantize((value + delta).clamp(0.0, 1.0), bits)
}

// ---------------------------------------------------------------------------
// Discretization grid

/// Partition of [0, 1] into `ceil(1/λ)` intervals `[jλ, (j+1)λ)`; the last
/// interval is closed at 1 and absorbs any remainder.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscretizationGrid {
    lambda: f64,
    cells: usize,
}

/// Values within this relative distance of an interval boundary are treated
/// as lying on it.
const BOUNDARY_EPS: f64 = 1e-9;

impl DiscretizationGrid {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda <= 1.0) {
            return Err(Error::invalid(format!("lambda {lambda} must lie in (0, 1]")));
        }
        let cells = ((1.0 / lambda) - BOUNDARY_EPS).ceil().max(1.0) as usize;
        Ok(Self { lambda, cells })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    /// Index of the interval containing `value`.
    pub fn cell_of(&self, value: f64) -> Result<usize> {
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::OutOfUnitInterval(value));
        }
        Ok(self.cell_unchecked(value))
    }

    pub(crate) fn cell_unchecked(&self, value: f64) -> usize {
        let t = value / self.lambda;
        let nearest = t.round();
        let idx = if (t - nearest).abs() < BOUNDARY_EPS {
            nearest
        } else {
            t.floor()
        };
        (idx.max(0.0) as usize).min(self.cells - 1)
    }

    /// Lower and upper bound of an interval (upper is exclusive except for the last).
    pub fn bounds(&self, cell: usize) -> (f64, f64) {
        let lo = cell as f64 * self.lambda;
        let hi = if cell + 1 == self.cells {
            1.0
        } else {
            (cell + 1) as f64 * self.lambda
        };
        (lo, hi)
    }

    pub fn center(&self, cell: usize) -> f64 {
        let (lo, hi) = self.bounds(cell);
        if cell + 1 == self.cells {
            (lo + hi) / 2.0
        } else {
            lo + self.lambda / 2.0
        }
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.cells).map(|c| self.center(c)).collect()
    }

    /// Center of the interval containing `value`.
    pub fn interval_of(&self, value: f64) -> Result<f64> {
        Ok(self.center(self.cell_of(value)?))
    }

    /// Maps a center back to its cell, tolerating rounding in serialized centers.
    pub fn cell_of_center(&self, center: f64) -> Option<usize> {
        (0..self.cells).find(|&c| (self.center(c) - center).abs() <= 1e-9_f64.max(self.lambda * 1e-6))
    }

    /// Groups `members` by the interval of their prediction under `x`.
    pub fn bucket(&self, x: &DensePredictor, members: &[usize]) -> Vec<Vec<usize>> {
        let mut buckets = vec![Vec::new(); self.cells];
        for &i in members {
            buckets[self.cell_unchecked(x.values[i])].push(i);
        }
        buckets
    }
}

/// Mean computed as `min + Σ(v - min)/k`, which returns `min` exactly when all
/// values coincide. The result stays within `[min, max]`.
pub(crate) fn stable_mean(values: impl Iterator<Item = f64> + Clone) -> Option<f64> {
    let (mut lo, mut hi, mut k) = (f64::INFINITY, f64::NEG_INFINITY, 0usize);
    for v in values.clone() {
        lo = lo.min(v);
        hi = hi.max(v);
        k += 1;
    }
    if k == 0 {
        return None;
    }
    let spread: f64 = values.map(|v| v - lo).sum();
    Some((lo + spread / k as f64).clamp(lo, hi))
}

/// Replaces each prediction by the mean prediction of its interval.
pub fn discretize(x: &DensePredictor, grid: &DiscretizationGrid) -> DensePredictor {
    let all: Vec<usize> = (0..x.len()).collect();
    let buckets = grid.bucket(x, &all);
    let mut out = x.clone();
    for members in buckets.iter().filter(|b| !b.is_empty()) {
        let mean = stable_mean(members.iter().map(|&i| x.values[i])).expect("non-empty");
        for &i in members {
            out.values[i] = mean;
        }
    }
    out
}

/// One category S_v(x) = {i ∈ S : x_i ∈ λ(v)}.
#[derive(Debug, Clone, PartialEq)]
pub struct Category {
    pub set: Option<usize>,
    pub cell: usize,
    pub center: f64,
    pub members: Vec<usize>,
    /// |S_v| / N.
    pub beta: f64,
}

pub fn category_of(
    pred: &SetPredicate,
    grid: &DiscretizationGrid,
    center: f64,
    x: &DensePredictor,
    pop: &Population,
) -> Result<Category> {
    let cell = grid
        .cell_of_center(center)
        .ok_or_else(|| Error::invalid(format!("{center} is not a grid center")))?;
    let members = pred.members(pop)?.ids;
    Ok(category_in(&members, grid, cell, x, None))
}

pub(crate) fn category_in(
    set_members: &[usize],
    grid: &DiscretizationGrid,
    cell: usize,
    x: &DensePredictor,
    set: Option<usize>,
) -> Category {
    let members: Vec<usize> = set_members
        .iter()
        .copied()
        .filter(|&i| grid.cell_unchecked(x.values[i]) == cell)
        .collect();
    Category {
        set,
        cell,
        center: grid.center(cell),
        beta: members.len() as f64 / x.len() as f64,
        members,
    }
}

// ---------------------------------------------------------------------------
// Update programs

/// "If the individual is in `predicate` and its current value is in the
/// interval `cell`, add `delta`."
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateStep {
    pub predicate: SetPredicate,
    pub cell: usize,
    pub delta: f64,
}

/// Compressed predictor: start at 1/2, apply the steps in order, then
/// optionally replace each value by its interval's table entry.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateProgram {
    pub grid: DiscretizationGrid,
    pub bits: u32,
    pub steps: Vec<UpdateStep>,
    pub final_table: Option<Vec<Option<f64>>>,
}

impl UpdateProgram {
    pub const INITIAL: f64 = 0.5;

    pub fn new(grid: DiscretizationGrid, bits: u32) -> Self {
        Self {
            grid,
            bits,
            steps: Vec::new(),
            final_table: None,
        }
    }

    pub fn size(&self) -> usize {
        self.steps.len()
    }

    /// Value of the program on individual `id`.
    pub fn eval(&self, pop: &Population, id: usize) -> Result<f64> {
        let mut value = Self::INITIAL;
        for step in &self.steps {
            if self.grid.cell_unchecked(value) == step.cell && step.predicate.contains(pop, id)? {
                value = fixed_add(value, step.delta, self.bits);
            }
        }
        if let Some(table) = &self.final_table {
            if let Some(Some(v)) = table.get(self.grid.cell_unchecked(value)) {
                value = *v;
            }
        }
        Ok(value)
    }

    pub fn eval_all(&self, pop: &Population) -> Result<DensePredictor> {
        let values = (0..pop.len()).map(|i| self.eval(pop, i)).collect::<Result<Vec<_>>>()?;
        DensePredictor::new(values)
    }
}

pub fn eval_program(prog: &UpdateProgram, pop: &Population, id: usize) -> Result<f64> {
    prog.eval(pop, id)
}

pub fn program_size(prog: &UpdateProgram) -> usize {
    prog.size()
}

#[derive(Serialize, Deserialize)]
struct StepWire {
    set: SetPredicate,
    v: f64,
    delta: f64,
}

#[derive(Serialize, Deserialize)]
struct ProgramWire {
    lambda: f64,
    bits: u32,
    steps: Vec<StepWire>,
    #[serde(rename = "final")]
    final_table: Option<std::collections::BTreeMap<String, f64>>,
}

impl Serialize for UpdateProgram {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let wire = ProgramWire {
            lambda: self.grid.lambda,
            bits: self.bits,
            steps: self
                .steps
                .iter()
                .map(|s| StepWire {
                    set: s.predicate.clone(),
                    v: self.grid.center(s.cell),
                    delta: s.delta,
                })
                .collect(),
            final_table: self.final_table.as_ref().map(|table| {
                table
                    .iter()
                    .enumerate()
                    .filter_map(|(c, v)| v.map(|v| (format!("{}", self.grid.center(c)), v)))
                    .collect()
            }),
        };
        wire.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for UpdateProgram {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let wire = ProgramWire::deserialize(deserializer)?;
        let grid = DiscretizationGrid::new(wire.lambda).map_err(D::Error::custom)?;
        let cell = |v: f64| {
            grid.cell_of_center(v)
                .ok_or_else(|| D::Error::custom(format!("{v} is not a center of the lambda={} grid", wire.lambda)))
        };
        let steps = wire
            .steps
            .into_iter()
            .map(|s| {
                Ok(UpdateStep {
                    predicate: s.set,
                    cell: cell(s.v)?,
                    delta: s.delta,
                })
            })
            .collect::<std::result::Result<Vec<_>, D::Error>>()?;
        let final_table = match wire.final_table {
            None => None,
            Some(map) => {
                let mut table = vec![None; grid.cells()];
                for (key, value) in map {
                    let center: f64 = key.parse().map_err(D::Error::custom)?;
                    table[cell(center)?] = Some(value);
                }
                Some(table)
            }
        };
        Ok(UpdateProgram {
            grid,
            bits: wire.bits,
            steps,
            final_table,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interval_boundaries() {
        let g = DiscretizationGrid::new(0.2).unwrap();
        assert_eq!(g.cells(), 5);
        assert!((g.interval_of(0.0).unwrap() - 0.1).abs() < 1e-12);
        assert!((g.interval_of(1.0).unwrap() - 0.9).abs() < 1e-12);
        assert!((g.interval_of(0.2).unwrap() - 0.3).abs() < 1e-12);
        assert!((g.interval_of(0.6).unwrap() - 0.7).abs() < 1e-12);
        assert!((g.interval_of(0.1999).unwrap() - 0.1).abs() < 1e-12);
        assert!(g.interval_of(1.0001).is_err());
        assert!(g.interval_of(-0.1).is_err());
    }

    #[test]
    fn non_integral_inverse_lambda() {
        let g = DiscretizationGrid::new(0.3).unwrap();
        assert_eq!(g.cells(), 4);
        assert_eq!(g.bounds(3), (0.8999999999999999, 1.0));
        assert_eq!(g.cell_of(0.95).unwrap(), 3);
        assert_eq!(g.cell_of(1.0).unwrap(), 3);
    }

    #[test]
    fn grid_centers_are_evenly_spaced() {
        let g = DiscretizationGrid::new(0.1).unwrap();
        let c = g.centers();
        assert_eq!(c.len(), 10);
        for w in c.windows(2) {
            assert!((w[1] - w[0] - 0.1).abs() < 1e-12);
        }
        assert!((c[9] - 0.95).abs() < 1e-12);
        for (i, &v) in c.iter().enumerate() {
            assert_eq!(g.cell_of_center(v), Some(i));
        }
    }

    #[test]
    fn discretize_examples() {
        let g = DiscretizationGrid::new(0.2).unwrap();
        let x = DensePredictor::constant(4, 0.5).unwrap();
        assert_eq!(discretize(&x, &g), x);
        let x = DensePredictor::new(vec![0.11, 0.19]).unwrap();
        let d = discretize(&x, &g);
        assert!((d.values()[0] - 0.15).abs() < 1e-12);
        assert_eq!(d.values()[0], d.values()[1]);
    }

    #[test]
    fn apply_update_examples() {
        let x = DensePredictor::new(vec![0.9, 0.4, 0.2]).unwrap();
        assert_eq!(apply_update(&x, &[0, 1], 0.0), x);
        let y = apply_update(&x, &[0], 0.3);
        assert_eq!(y.values(), &[1.0, 0.4, 0.2]);
        let z = apply_update(&x, &[1], -0.1);
        assert!((z.values()[1] - 0.3).abs() < 1e-12);
        assert_eq!(z.values()[0], 0.9);
    }

    #[test]
    fn precision_bits_floor() {
        assert_eq!(precision_bits(0.1), 20);
        assert_eq!(precision_bits(1e-7), 24);
    }

    #[test]
    fn fixed_add_is_exact_on_lattice() {
        let bits = 20;
        let a = quantize(0.3, bits);
        let d = quantize(0.123456, bits);
        let s = fixed_add(a, d, bits);
        assert_eq!(s, a + d);
        assert_eq!(fixed_add(0.9, 0.5, bits), 1.0);
        assert_eq!(fixed_add(0.1, -0.5, bits), 0.0);
    }

    #[test]
    fn program_evaluation() {
        let pop = Population::featureless(5).unwrap();
        let g = DiscretizationGrid::new(0.1).unwrap();
        let mut prog = UpdateProgram::new(g, 20);
        assert_eq!(program_size(&prog), 0);
        assert!((0..5).all(|i| eval_program(&prog, &pop, i).unwrap() == 0.5));
        prog.steps.push(UpdateStep {
            predicate: SetPredicate::All,
            cell: g.cell_of(0.5).unwrap(),
            delta: quantize(0.2, 20),
        });
        for i in 0..5 {
            assert!((eval_program(&prog, &pop, i).unwrap() - 0.7).abs() < 1e-6);
        }
        assert_eq!(program_size(&prog), 1);
    }

    #[test]
    fn category_examples() {
        let pop = Population::featureless(6).unwrap();
        let g = DiscretizationGrid::new(0.2).unwrap();
        let x = DensePredictor::constant(6, 0.5).unwrap();
        let c = category_of(&SetPredicate::All, &g, 0.5, &x, &pop).unwrap();
        assert_eq!(c.members.len(), 6);
        assert_eq!(c.beta, 1.0);
        let c = category_of(&SetPredicate::All, &g, 0.1, &x, &pop).unwrap();
        assert!(c.members.is_empty());
        assert_eq!(c.beta, 0.0);
        assert!(category_of(&SetPredicate::All, &g, 0.2, &x, &pop).is_err());
    }

    #[test]
    fn program_json_round_trip() {
        let g = DiscretizationGrid::new(0.1).unwrap();
        let prog = UpdateProgram {
            grid: g,
            bits: 20,
            steps: vec![UpdateStep {
                predicate: SetPredicate::conjunction([(0, 1.0)]),
                cell: 5,
                delta: quantize(-0.31, 20),
            }],
            final_table: Some((0..10).map(|c| (c % 2 == 0).then(|| g.center(c))).collect()),
        };
        let json = serde_json::to_string(&prog).unwrap();
        assert!(json.contains("\"final\""));
        let back: UpdateProgram = serde_json::from_str(&json).unwrap();
        assert_eq!(back, prog);
    }
}
