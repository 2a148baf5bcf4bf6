//! Annotation queue and its append-only journal.

use std::collections::{BTreeSet, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use sacti_core::text::{
    summarize_annotations, AnnotationRecord, AnnotationSummary, Choice, NOT_SURE,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::input::InputItem;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("unknown instance `{0}`")]
    UnknownInstance(String),
    #[error("invalid `{field}`: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error("journal {}, line {line}: {message}", path.display())]
    Journal {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("duplicate instance id `{0}` in the queue")]
    DuplicateInstance(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn invalid(field: &'static str, reason: impl Into<String>) -> StoreError {
    StoreError::Invalid {
        field,
        reason: reason.into(),
    }
}

/// Administrator-controlled options.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdminSettings {
    pub labels: Vec<String>,
    /// Whether annotators see the sentence or only the compound.
    pub show_context: bool,
    /// Distinct annotators after which an instance leaves the queue.
    pub annotators_per_instance: usize,
    /// Votes a label needs to be kept in the export summary.
    pub min_agree: usize,
}

impl AdminSettings {
    pub fn new(labels: Vec<String>) -> Self {
        AdminSettings {
            labels,
            show_context: true,
            annotators_per_instance: 3,
            min_agree: 2,
        }
    }

    fn validate(&self) -> Result<(), StoreError> {
        if self.labels.is_empty() {
            return Err(invalid("labels", "must not be empty"));
        }
        let unique: BTreeSet<&String> = self.labels.iter().collect();
        if unique.len() != self.labels.len() {
            return Err(invalid("labels", "contains duplicates"));
        }
        if let Some(bad) = self.labels.iter().find(|l| l.trim().is_empty() || l.as_str() == NOT_SURE) {
            return Err(invalid("labels", format!("`{bad}` cannot be used as a label")));
        }
        if self.annotators_per_instance == 0 {
            return Err(invalid("annotators_per_instance", "must be positive"));
        }
        if self.min_agree == 0 {
            return Err(invalid("min_agree", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SettingsPatch {
    pub labels: Option<Vec<String>>,
    pub show_context: Option<bool>,
    pub annotators_per_instance: Option<usize>,
    pub min_agree: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", content = "data", rename_all = "snake_case")]
pub enum JournalEntry {
    Record(AnnotationRecord),
    Settings(AdminSettings),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Submission {
    pub annotator_id: String,
    pub choice: Choice,
    #[serde(default)]
    pub comment: String,
    /// Client-generated key; resubmitting it returns the original record.
    #[serde(default)]
    pub idempotency_key: Option<String>,
    /// Defaults to the server clock.
    #[serde(default)]
    pub timestamp: Option<String>,
}

/// What an annotator is shown for one instance.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub instance_id: String,
    pub tokens: Vec<String>,
    pub compound_index: usize,
    pub compound: String,
    pub choices: Vec<String>,
    pub annotations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Export {
    pub records: Vec<AnnotationRecord>,
    pub summary: AnnotationSummary,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImportReport {
    pub imported: usize,
    pub skipped: usize,
}

/// Reads a journal or a plain JSONL of annotation records.
pub fn read_records(path: &Path) -> Result<(Vec<AnnotationRecord>, Option<AdminSettings>), StoreError> {
    let mut records = Vec::new();
    let mut settings = None;
    for entry in read_entries(path)? {
        match entry {
            JournalEntry::Record(r) => records.push(r),
            JournalEntry::Settings(s) => settings = Some(s),
        }
    }
    Ok((records, settings))
}

fn read_entries(path: &Path) -> Result<Vec<JournalEntry>, StoreError> {
    let file = File::open(path)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let entry = match serde_json::from_str::<JournalEntry>(&line) {
            Ok(e) => e,
            Err(_) => JournalEntry::Record(serde_json::from_str(&line).map_err(|e| StoreError::Journal {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?),
        };
        out.push(entry);
    }
    Ok(out)
}

pub struct AnnotationStore {
    queue: Vec<(String, InputItem)>,
    index: HashMap<String, usize>,
    records: Vec<AnnotationRecord>,
    settings: AdminSettings,
    next_id: u64,
    journal: Option<File>,
}

impl AnnotationStore {
    /// Builds the queue and replays `journal` if it exists. New events are
    /// appended to it.
    pub fn open(items: Vec<InputItem>, settings: AdminSettings, journal: Option<&Path>) -> Result<Self, StoreError> {
        settings.validate()?;
        let mut queue = Vec::with_capacity(items.len());
        let mut index = HashMap::new();
        for (i, item) in items.into_iter().enumerate() {
            let id = item.id.clone().unwrap_or_else(|| (i + 1).to_string());
            if index.insert(id.clone(), i).is_some() {
                return Err(StoreError::DuplicateInstance(id));
            }
            queue.push((id, item));
        }
        let mut store = AnnotationStore {
            queue,
            index,
            records: Vec::new(),
            settings,
            next_id: 1,
            journal: None,
        };
        if let Some(path) = journal {
            if path.exists() {
                for entry in read_entries(path)? {
                    match entry {
                        JournalEntry::Record(r) => {
                            store.next_id = store.next_id.max(r.record_id + 1);
                            store.records.push(r);
                        }
                        JournalEntry::Settings(s) => store.settings = s,
                    }
                }
            }
            store.journal = Some(OpenOptions::new().create(true).append(true).open(path)?);
        }
        Ok(store)
    }

    pub fn settings(&self) -> &AdminSettings {
        &self.settings
    }

    pub fn records(&self) -> &[AnnotationRecord] {
        &self.records
    }

    fn append(&mut self, entry: &JournalEntry) -> Result<(), StoreError> {
        if let Some(f) = &mut self.journal {
            let mut line = serde_json::to_vec(entry).map_err(io::Error::from)?;
            line.push(b'\n');
            f.write_all(&line)?;
            f.sync_data()?;
        }
        Ok(())
    }

    pub fn update_settings(&mut self, patch: SettingsPatch) -> Result<&AdminSettings, StoreError> {
        let mut next = self.settings.clone();
        if let Some(l) = patch.labels {
            next.labels = l;
        }
        if let Some(c) = patch.show_context {
            next.show_context = c;
        }
        if let Some(n) = patch.annotators_per_instance {
            next.annotators_per_instance = n;
        }
        if let Some(m) = patch.min_agree {
            next.min_agree = m;
        }
        next.validate()?;
        if next != self.settings {
            self.append(&JournalEntry::Settings(next.clone()))?;
            self.settings = next;
        }
        Ok(&self.settings)
    }

    fn annotators_of(&self, instance_id: &str) -> BTreeSet<&str> {
        self.records
            .iter()
            .filter(|r| r.instance_id == instance_id)
            .map(|r| r.annotator_id.as_str())
            .collect()
    }

    /// The least-annotated instance this annotator has not seen and that still
    /// needs annotations; ties go to queue order.
    pub fn next_for(&self, annotator: &str) -> Option<Task> {
        let mut counts: HashMap<&str, BTreeSet<&str>> = HashMap::new();
        for r in &self.records {
            counts.entry(&r.instance_id).or_default().insert(&r.annotator_id);
        }
        let empty = BTreeSet::new();
        let (id, item, seen) = self
            .queue
            .iter()
            .map(|(id, item)| (id, item, counts.get(id.as_str()).unwrap_or(&empty)))
            .filter(|(_, _, seen)| seen.len() < self.settings.annotators_per_instance && !seen.contains(annotator))
            .min_by_key(|(_, _, seen)| seen.len())?;
        let compound = item.tokens[item.compound_index].clone();
        let (tokens, compound_index) = if self.settings.show_context {
            (item.tokens.clone(), item.compound_index)
        } else {
            (vec![compound.clone()], 0)
        };
        let mut choices = self.settings.labels.clone();
        choices.push(NOT_SURE.to_string());
        Some(Task {
            instance_id: id.clone(),
            tokens,
            compound_index,
            compound,
            choices,
            annotations: seen.len(),
        })
    }

    /// Records a choice. Returns the stored record and whether it already
    /// existed under the same idempotency key.
    pub fn submit(&mut self, instance_id: &str, sub: Submission) -> Result<(AnnotationRecord, bool), StoreError> {
        if !self.index.contains_key(instance_id) {
            return Err(StoreError::UnknownInstance(instance_id.to_string()));
        }
        if sub.annotator_id.trim().is_empty() {
            return Err(invalid("annotator_id", "must not be empty"));
        }
        if let Some(key) = &sub.idempotency_key {
            if let Some(r) = self.records.iter().find(|r| {
                r.idempotency_key.as_ref() == Some(key)
                    && r.annotator_id == sub.annotator_id
                    && r.instance_id == instance_id
            }) {
                return Ok((r.clone(), true));
            }
        }
        let record = AnnotationRecord {
            record_id: self.next_id,
            instance_id: instance_id.to_string(),
            annotator_id: sub.annotator_id,
            choice: sub.choice,
            comment: sub.comment,
            timestamp: sub
                .timestamp
                .unwrap_or_else(|| chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)),
            idempotency_key: sub.idempotency_key,
        };
        record
            .validate_choice(&self.settings.labels)
            .map_err(|e| invalid("choice", e.to_string()))?;
        self.append(&JournalEntry::Record(record.clone()))?;
        self.next_id += 1;
        self.records.push(record.clone());
        Ok((record, false))
    }

    pub fn export(&self) -> Export {
        Export {
            records: self.records.clone(),
            summary: summarize_annotations(&self.records, self.settings.min_agree),
        }
    }

    /// Appends records whose content is not already stored, under fresh
    /// record ids. Choices are checked against the current labels; instance
    /// ids are not, so exports from other deployments can be merged.
    pub fn import(&mut self, records: Vec<AnnotationRecord>) -> Result<ImportReport, StoreError> {
        for r in &records {
            r.validate_choice(&self.settings.labels)
                .map_err(|e| invalid("choice", e.to_string()))?;
        }
        let mut report = ImportReport {
            imported: 0,
            skipped: 0,
        };
        for mut r in records {
            if self.records.iter().any(|s| s.same_content(&r)) {
                report.skipped += 1;
                continue;
            }
            r.record_id = self.next_id;
            self.append(&JournalEntry::Record(r.clone()))?;
            self.next_id += 1;
            self.records.push(r);
            report.imported += 1;
        }
        Ok(report)
    }

    pub fn contains(&self, instance_id: &str) -> bool {
        self.index.contains_key(instance_id)
    }

    pub fn annotation_count(&self, instance_id: &str) -> usize {
        self.annotators_of(instance_id).len()
    }
}
