//! Experiment grid: ablations, auxiliary-task combinations, multilingual
//! and zero-shot runs, each producing one metrics row.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::metrics::MetricsReport;
use super::trainer::{evaluate, train};
use crate::error::{Error, Result};
use crate::model::{ClassifierKind, ContextMode, Head};
use crate::text::ContextInstance;

/// How one grid cell modifies the base configuration.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Variant {
    Full,
    NoContext,
    NoBiaffine,
    NoMorph,
    NoDep,
    NoMorphDep,
    /// Exactly these auxiliary heads, e.g. `M+C+L`.
    Aux(Vec<Head>),
}

fn aux_code(h: Head) -> &'static str {
    match h {
        Head::Morph => "M",
        Head::Case => "C",
        Head::Lemma => "L",
        Head::Relation => "R",
        Head::Dep => "DP",
        Head::Sacti => "S",
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variant::Full => f.write_str("full"),
            Variant::NoContext => f.write_str("-context"),
            Variant::NoBiaffine => f.write_str("-BiAFF"),
            Variant::NoMorph => f.write_str("-morph"),
            Variant::NoDep => f.write_str("-DP"),
            Variant::NoMorphDep => f.write_str("-morph-DP"),
            Variant::Aux(heads) => {
                let codes: Vec<&str> = heads.iter().map(|&h| aux_code(h)).collect();
                f.write_str(&codes.join("+"))
            }
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "full" => Variant::Full,
            "-context" => Variant::NoContext,
            "-BiAFF" => Variant::NoBiaffine,
            "-morph" => Variant::NoMorph,
            "-DP" => Variant::NoDep,
            "-morph-DP" => Variant::NoMorphDep,
            combo => {
                let mut heads = Vec::new();
                for code in combo.split('+') {
                    let h = match code {
                        "M" => Head::Morph,
                        "C" => Head::Case,
                        "L" => Head::Lemma,
                        "R" => Head::Relation,
                        "DP" => Head::Dep,
                        _ => return Err(Error::Config(format!("unknown grid variant `{s}`"))),
                    };
                    if heads.contains(&h) {
                        return Err(Error::Config(format!("variant `{s}` repeats `{code}`")));
                    }
                    heads.push(h);
                }
                Variant::Aux(heads)
            }
        })
    }
}

impl TryFrom<String> for Variant {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Variant> for String {
    fn from(v: Variant) -> Self {
        v.to_string()
    }
}

impl Variant {
    pub fn apply(&self, base: &TrainConfig) -> TrainConfig {
        let mut c = base.clone();
        let without = |c: &mut TrainConfig, drop: &[Head]| c.enabled_heads.retain(|h| !drop.contains(h));
        match self {
            Variant::Full => {}
            Variant::NoContext => c.context_mode = ContextMode::Without,
            Variant::NoBiaffine => c.model.classifier = ClassifierKind::Pooled,
            Variant::NoMorph => without(&mut c, &[Head::Morph]),
            Variant::NoDep => without(&mut c, &[Head::Dep]),
            Variant::NoMorphDep => without(&mut c, &[Head::Morph, Head::Dep]),
            Variant::Aux(heads) => {
                c.enabled_heads = heads.clone();
                c.enabled_heads.push(Head::Sacti);
            }
        }
        c
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetSplits {
    pub train: Vec<ContextInstance>,
    pub dev: Option<Vec<ContextInstance>>,
    pub test: Vec<ContextInstance>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub name: String,
    #[serde(default = "full")]
    pub variant: Variant,
    /// Datasets whose training splits are concatenated.
    pub train_on: Vec<String>,
    /// Dataset whose test split is scored.
    pub eval_on: String,
}

fn full() -> Variant {
    Variant::Full
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub cells: Vec<GridCell>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub name: String,
    pub variant: String,
    pub train_on: Vec<String>,
    pub eval_on: String,
    /// Evaluation dataset was not among the training datasets.
    pub zero_shot: bool,
    pub metrics: MetricsReport,
}

fn dataset<'a>(all: &'a BTreeMap<String, DatasetSplits>, name: &str) -> Result<&'a DatasetSplits> {
    all.get(name)
        .ok_or_else(|| Error::Config(format!("grid refers to unknown dataset `{name}`")))
}

/// Runs every cell in order with the same base configuration and seed.
pub fn run_experiment_grid(
    base: &TrainConfig,
    datasets: &BTreeMap<String, DatasetSplits>,
    spec: &GridSpec,
) -> Result<Vec<GridRow>> {
    let mut rows = Vec::with_capacity(spec.cells.len());
    for cell in &spec.cells {
        if cell.train_on.is_empty() {
            return Err(Error::Config(format!("cell `{}` trains on nothing", cell.name)));
        }
        let mut train_set = Vec::new();
        let mut dev_set = Vec::new();
        let mut has_dev = true;
        for name in &cell.train_on {
            let d = dataset(datasets, name)?;
            train_set.extend(d.train.iter().cloned());
            match &d.dev {
                Some(dev) => dev_set.extend(dev.iter().cloned()),
                None => has_dev = false,
            }
        }
        let eval = dataset(datasets, &cell.eval_on)?;
        let zero_shot = !cell.train_on.contains(&cell.eval_on);
        let config = cell.variant.apply(base);
        let dev = (has_dev && !dev_set.is_empty()).then_some(dev_set.as_slice());
        let outcome = train(&train_set, dev, &config)?;
        let known: BTreeSet<&str> = outcome.model.labels.semantic.names().iter().map(String::as_str).collect();
        if let Some(bad) = eval.test.iter().find(|i| !known.contains(i.label.as_str())) {
            return Err(Error::LabelSpace(format!(
                "cell `{}`: label `{}` of `{}` is outside the label space trained on {:?}",
                cell.name, bad.label, cell.eval_on, cell.train_on
            )));
        }
        let result = evaluate(&outcome.model, &eval.test)?;
        rows.push(GridRow {
            name: cell.name.clone(),
            variant: cell.variant.to_string(),
            train_on: cell.train_on.clone(),
            eval_on: cell.eval_on.clone(),
            zero_shot,
            metrics: result.metrics,
        });
    }
    Ok(rows)
}

/// One CSV line per cell with the headline metrics.
pub fn grid_to_csv(rows: &[GridRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "name",
        "variant",
        "train_on",
        "eval_on",
        "zero_shot",
        "accuracy",
        "macro_precision",
        "macro_recall",
        "macro_f1",
        "instances",
    ])
    .map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.name.clone(),
            r.variant.clone(),
            r.train_on.join("+"),
            r.eval_on.clone(),
            r.zero_shot.to_string(),
            r.metrics.accuracy.to_string(),
            r.metrics.macro_precision.to_string(),
            r.metrics.macro_recall.to_string(),
            r.metrics.macro_f1.to_string(),
            r.metrics.total.to_string(),
        ])
        .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.into())
}
