//! On-disk formats: CSV for per-individual data, JSON for everything else.
//!
//! * population: `id,f0,f1,...`; boolean columns hold `0`/`1`, real columns
//!   are written in shortest round-trip form and always carry a decimal point
//! * truth: `id,p` with nine decimals
//! * outcomes: `id,o`
//! * predictor: `id,x` in shortest round-trip form
//! * labels: `id,y` with y in [−1, 1]

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::bridge::{Hypothesis, LabelVector};
use crate::error::{Error, Result};
use crate::population::{
    AttributeKind, BoundCollection, GroundTruth, OutcomeVector, Population, SetPredicate, SubsetCollection,
    TRUTH_DECIMALS,
};
use crate::predictor::DensePredictor;

fn open_reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    Ok(csv::ReaderBuilder::new().has_headers(true).from_path(path)?)
}

/// Reads a two-column `id,<name>` file with ids 0..N−1 in order.
fn read_column(path: &Path, name: &str) -> Result<Vec<String>> {
    let mut reader = open_reader(path)?;
    let headers = reader.headers()?.clone();
    if headers.len() != 2 || &headers[0] != "id" || &headers[1] != name {
        return Err(Error::Schema(format!(
            "{}: expected header `id,{name}`, found `{}`",
            path.display(),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut out = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        check_id(path, row, &record[0])?;
        out.push(record[1].trim().to_string());
    }
    Ok(out)
}

fn check_id(path: &Path, row: usize, token: &str) -> Result<()> {
    let id: usize = token
        .trim()
        .parse()
        .map_err(|_| Error::Malformed(format!("{}: bad id `{token}` on row {}", path.display(), row + 1)))?;
    if id != row {
        return Err(Error::Malformed(format!(
            "{}: ids must run 0..N-1 in order, found {id} on row {}",
            path.display(),
            row + 1
        )));
    }
    Ok(())
}

fn parse_f64(path: &Path, row: usize, token: &str) -> Result<f64> {
    token
        .parse()
        .map_err(|_| Error::Malformed(format!("{}: bad number `{token}` on row {}", path.display(), row + 1)))
}

fn write_column<T>(path: &Path, name: &str, values: &[T], fmt: impl Fn(&T) -> String) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(["id", name])?;
    for (i, v) in values.iter().enumerate() {
        writer.write_record([i.to_string(), fmt(v)])?;
    }
    writer.flush()?;
    Ok(())
}

pub fn write_population(path: &Path, pop: &Population) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    let mut header = vec!["id".to_string()];
    header.extend((0..pop.dim()).map(|j| format!("f{j}")));
    writer.write_record(&header)?;
    for i in 0..pop.len() {
        let mut row = vec![i.to_string()];
        for (v, kind) in pop.features(i).iter().zip(pop.kinds()) {
            row.push(match kind {
                AttributeKind::Boolean => format!("{}", *v as u8),
                AttributeKind::Real => format!("{v:?}"),
            });
        }
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

/// A column is boolean iff every entry is exactly `0` or `1`.
pub fn read_population(path: &Path) -> Result<Population> {
    let mut reader = open_reader(path)?;
    let headers = reader.headers()?.clone();
    if headers.is_empty() || &headers[0] != "id" {
        return Err(Error::Schema(format!("{}: first column must be `id`", path.display())));
    }
    let dim = headers.len() - 1;
    let mut tokens: Vec<Vec<String>> = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != headers.len() {
            return Err(Error::Malformed(format!(
                "{}: row {} has {} fields",
                path.display(),
                row + 1,
                record.len()
            )));
        }
        check_id(path, row, &record[0])?;
        tokens.push(record.iter().skip(1).map(|t| t.trim().to_string()).collect());
    }
    let kinds: Vec<AttributeKind> = (0..dim)
        .map(|j| {
            if tokens.iter().all(|r| r[j] == "0" || r[j] == "1") {
                AttributeKind::Boolean
            } else {
                AttributeKind::Real
            }
        })
        .collect();
    let rows = tokens
        .iter()
        .enumerate()
        .map(|(row, r)| r.iter().map(|t| parse_f64(path, row, t)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    if rows.is_empty() {
        return Population::featureless(0);
    }
    Population::new(kinds, rows)
}

pub fn write_truth(path: &Path, truth: &GroundTruth) -> Result<()> {
    let digits = TRUTH_DECIMALS as usize;
    write_column(path, "p", truth.probs(), |p| format!("{p:.digits$}"))
}

pub fn read_truth(path: &Path) -> Result<GroundTruth> {
    let values = read_column(path, "p")?;
    let probs = values
        .iter()
        .enumerate()
        .map(|(row, t)| parse_f64(path, row, t))
        .collect::<Result<Vec<_>>>()?;
    GroundTruth::new(probs)
}

pub fn write_outcomes(path: &Path, outcomes: &OutcomeVector) -> Result<()> {
    write_column(path, "o", &outcomes.bits, |o| o.to_string())
}

pub fn read_outcomes(path: &Path) -> Result<OutcomeVector> {
    let bits = read_column(path, "o")?
        .iter()
        .enumerate()
        .map(|(row, t)| match t.as_str() {
            "0" => Ok(0u8),
            "1" => Ok(1u8),
            _ => Err(Error::Malformed(format!(
                "{}: outcome `{t}` on row {} is not 0 or 1",
                path.display(),
                row + 1
            ))),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(OutcomeVector { bits, seed: None })
}

pub fn write_predictor(path: &Path, x: &DensePredictor) -> Result<()> {
    write_column(path, "x", x.values(), |v| format!("{v:?}"))
}

pub fn read_predictor(path: &Path) -> Result<DensePredictor> {
    let values = read_column(path, "x")?
        .iter()
        .enumerate()
        .map(|(row, t)| parse_f64(path, row, t))
        .collect::<Result<Vec<_>>>()?;
    DensePredictor::new(values)
}

pub fn write_labels(path: &Path, y: &LabelVector) -> Result<()> {
    write_column(path, "y", y.values(), |v| format!("{v:?}"))
}

pub fn read_labels(path: &Path) -> Result<LabelVector> {
    let values = read_column(path, "y")?
        .iter()
        .enumerate()
        .map(|(row, t)| parse_f64(path, row, t))
        .collect::<Result<Vec<_>>>()?;
    LabelVector::new(values)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Reads a collection and binds it, enforcing its declared density floor.
pub fn read_collection(path: &Path, pop: &Population) -> Result<BoundCollection> {
    let collection: SubsetCollection = read_json(path)?;
    collection.bind(pop)
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum HypothesisWire {
    Constant { value: f64 },
    Concept { set: usize, predicate: SetPredicate },
    SignOfPredictor { predictor: PathBuf },
    Tabulated { values: Vec<f64> },
}

/// Writes a hypothesis as JSON. A sign-of-predictor hypothesis stores its
/// predictor as `<stem>.predictor.csv` next to `path` and refers to it by
/// file name.
pub fn write_hypothesis(path: &Path, h: &Hypothesis) -> Result<()> {
    let wire = match h {
        Hypothesis::Constant(value) => HypothesisWire::Constant { value: *value },
        Hypothesis::Concept { set, predicate } => HypothesisWire::Concept {
            set: *set,
            predicate: predicate.clone(),
        },
        Hypothesis::SignOfPredictor(x) => {
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("hypothesis");
            let name = PathBuf::from(format!("{stem}.predictor.csv"));
            write_predictor(&path.with_file_name(&name), x)?;
            HypothesisWire::SignOfPredictor { predictor: name }
        }
        Hypothesis::Tabulated(values) => HypothesisWire::Tabulated { values: values.clone() },
    };
    write_json(path, &wire)
}

pub fn read_hypothesis(path: &Path) -> Result<Hypothesis> {
    Ok(match read_json::<HypothesisWire>(path)? {
        HypothesisWire::Constant { value } => Hypothesis::Constant(value),
        HypothesisWire::Concept { set, predicate } => Hypothesis::Concept { set, predicate },
        HypothesisWire::SignOfPredictor { predictor } => {
            let resolved = match path.parent() {
                Some(dir) if predictor.is_relative() => dir.join(predictor),
                _ => predictor,
            };
            Hypothesis::SignOfPredictor(read_predictor(&resolved)?)
        }
        HypothesisWire::Tabulated { values } => Hypothesis::Tabulated(values),
    })
}
