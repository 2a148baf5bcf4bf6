//! Human annotation records and their aggregation into labels.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};

use super::{cohen_kappa, TextError};

/// Wire value of the "Not sure" option.
pub const NOT_SURE: &str = "NOT_SURE";

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "String", into = "String")]
pub enum Choice {
    Label(String),
    NotSure,
}

impl From<String> for Choice {
    fn from(s: String) -> Self {
        if s == NOT_SURE {
            Choice::NotSure
        } else {
            Choice::Label(s)
        }
    }
}

impl From<Choice> for String {
    fn from(c: Choice) -> Self {
        match c {
            Choice::Label(l) => l,
            Choice::NotSure => NOT_SURE.to_string(),
        }
    }
}

impl fmt::Display for Choice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Choice::Label(l) => f.write_str(l),
            Choice::NotSure => f.write_str(NOT_SURE),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationRecord {
    #[serde(default)]
    pub record_id: u64,
    pub instance_id: String,
    pub annotator_id: String,
    pub choice: Choice,
    #[serde(default)]
    pub comment: String,
    pub timestamp: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub idempotency_key: Option<String>,
}

impl AnnotationRecord {
    /// The choice must be one of `labels` or "Not sure".
    pub fn validate_choice(&self, labels: &[String]) -> Result<(), TextError> {
        match &self.choice {
            Choice::NotSure => Ok(()),
            Choice::Label(l) if labels.contains(l) => Ok(()),
            Choice::Label(l) => Err(TextError::Invalid(format!(
                "choice `{l}` is not one of {labels:?} or {NOT_SURE}"
            ))),
        }
    }

    /// Equality ignoring the store-assigned record id.
    pub fn same_content(&self, other: &AnnotationRecord) -> bool {
        self.instance_id == other.instance_id
            && self.annotator_id == other.annotator_id
            && self.choice == other.choice
            && self.comment == other.comment
            && self.timestamp == other.timestamp
            && self.idempotency_key == other.idempotency_key
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregatedLabel {
    pub instance_id: String,
    pub label: String,
    /// Annotators who chose `label`.
    pub votes: usize,
    /// Annotators who annotated the instance at all.
    pub annotators: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Aggregation {
    pub labels: Vec<AggregatedLabel>,
    pub dropped: Vec<String>,
}

/// Latest choice of each annotator per instance, instances in first-seen order.
fn latest_choices(records: &[AnnotationRecord]) -> Vec<(&str, BTreeMap<&str, &Choice>)> {
    let mut order: Vec<(&str, BTreeMap<&str, &Choice>)> = Vec::new();
    let mut slot: HashMap<&str, usize> = HashMap::new();
    for r in records {
        let i = *slot.entry(&r.instance_id).or_insert_with(|| {
            order.push((&r.instance_id, BTreeMap::new()));
            order.len() - 1
        });
        order[i].1.insert(&r.annotator_id, &r.choice);
    }
    order
}

/// Plurality vote per instance, ignoring "Not sure".
///
/// An annotator's latest record for an instance replaces earlier ones. An
/// instance is dropped when the winning label has fewer than `min_agree`
/// votes or when two labels tie for the most votes.
pub fn aggregate_annotations(records: &[AnnotationRecord], min_agree: usize) -> Aggregation {
    let mut out = Aggregation::default();
    for (instance, choices) in latest_choices(records) {
        let mut tally: BTreeMap<&str, usize> = BTreeMap::new();
        for c in choices.values() {
            if let Choice::Label(l) = c {
                *tally.entry(l).or_default() += 1;
            }
        }
        let top = tally.values().copied().max().unwrap_or(0);
        let winners: Vec<&str> = tally
            .iter()
            .filter(|(_, &c)| c == top)
            .map(|(l, _)| *l)
            .collect();
        if top == 0 || top < min_agree || winners.len() != 1 {
            out.dropped.push(instance.to_string());
        } else {
            out.labels.push(AggregatedLabel {
                instance_id: instance.to_string(),
                label: winners[0].to_string(),
                votes: top,
                annotators: choices.len(),
            });
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairKappa {
    pub annotator_a: String,
    pub annotator_b: String,
    /// Instances annotated by both.
    pub items: usize,
    /// `None` when the pair shares no instance.
    pub kappa: Option<f64>,
}

/// Cohen's kappa for every annotator pair over the instances both annotated;
/// "Not sure" counts as its own category.
pub fn pairwise_kappa(records: &[AnnotationRecord]) -> Vec<PairKappa> {
    let latest = latest_choices(records);
    let mut annotators: Vec<&str> = latest
        .iter()
        .flat_map(|(_, c)| c.keys().copied())
        .collect();
    annotators.sort_unstable();
    annotators.dedup();
    let mut out = Vec::new();
    for (i, a) in annotators.iter().enumerate() {
        for b in &annotators[i + 1..] {
            let (xs, ys): (Vec<&Choice>, Vec<&Choice>) = latest
                .iter()
                .filter_map(|(_, c)| Some((*c.get(a)?, *c.get(b)?)))
                .unzip();
            out.push(PairKappa {
                annotator_a: a.to_string(),
                annotator_b: b.to_string(),
                items: xs.len(),
                kappa: cohen_kappa(&xs, &ys).ok(),
            });
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotationSummary {
    pub labels: Vec<AggregatedLabel>,
    pub dropped: Vec<String>,
    pub kappa: Vec<PairKappa>,
}

pub fn summarize_annotations(records: &[AnnotationRecord], min_agree: usize) -> AnnotationSummary {
    let Aggregation { labels, dropped } = aggregate_annotations(records, min_agree);
    AnnotationSummary {
        labels,
        dropped,
        kappa: pairwise_kappa(records),
    }
}

pub fn parse_annotation_jsonl<R: Read>(reader: R) -> Result<Vec<AnnotationRecord>, TextError> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| TextError::Json {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn write_annotation_jsonl<W: Write>(
    mut writer: W,
    records: &[AnnotationRecord],
) -> Result<(), TextError> {
    for r in records {
        serde_json::to_writer(&mut writer, r).map_err(std::io::Error::from)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}
