//! One labeled compound in context, and the JSONL dataset format.
//!
//! Each line of a dataset file is one JSON object:
//!
//! | field            | type              | required | meaning                                        |
//! |------------------|-------------------|----------|------------------------------------------------|
//! | `id`             | string            | no       | stable instance id (annotation workflows)      |
//! | `tokens`         | array of string   | yes      | context tokens `c_1..c_n`, surface forms        |
//! | `compound_index` | integer           | yes      | 0-based position of the compound in `tokens`   |
//! | `label`          | string            | yes      | semantic type name                             |
//! | `language`       | string            | no       | language code, default `"und"`                  |
//! | `morph_tags`     | array of string   | no       | one composite morphological tag per token      |
//! | `dep_heads`      | array of integer  | no       | head per token, 1-based, `0` is the root        |
//! | `dep_rels`       | array of string   | no       | dependency relation per token                  |
//! | `case_tags`      | array of string   | no       | case category per token                         |
//! | `lemma_tags`     | array of string   | no       | lemma class per token                           |
//! | `relation_tags`  | array of string   | no       | relation tag per token                          |
//!
//! Unknown fields are rejected. Blank lines are skipped.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::TextError;

fn default_language() -> String {
    "und".to_string()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContextInstance {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub tokens: Vec<String>,
    pub compound_index: usize,
    pub label: String,
    #[serde(default = "default_language")]
    pub language: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub morph_tags: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dep_heads: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dep_rels: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub case_tags: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lemma_tags: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relation_tags: Option<Vec<String>>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("field `{field}`: {reason}")]
pub struct InstanceError {
    pub field: &'static str,
    pub reason: String,
}

fn invalid(field: &'static str, reason: impl Into<String>) -> InstanceError {
    InstanceError {
        field,
        reason: reason.into(),
    }
}

/// True for tokens made of exactly two non-empty components joined by `-`.
pub(crate) fn is_binary_compound(token: &str) -> bool {
    let mut parts = token.split('-');
    matches!(
        (parts.next(), parts.next(), parts.next()),
        (Some(a), Some(b), None) if !a.is_empty() && !b.is_empty()
    )
}

impl ContextInstance {
    pub fn new(tokens: Vec<String>, compound_index: usize, label: impl Into<String>) -> Self {
        ContextInstance {
            id: None,
            tokens,
            compound_index,
            label: label.into(),
            language: default_language(),
            morph_tags: None,
            dep_heads: None,
            dep_rels: None,
            case_tags: None,
            lemma_tags: None,
            relation_tags: None,
        }
    }

    pub fn compound(&self) -> &str {
        &self.tokens[self.compound_index]
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn validate(&self) -> Result<(), InstanceError> {
        let n = self.tokens.len();
        if n == 0 {
            return Err(invalid("tokens", "must not be empty"));
        }
        if let Some(i) = self.tokens.iter().position(|t| t.is_empty()) {
            return Err(invalid("tokens", format!("token {i} is empty")));
        }
        if self.compound_index >= n {
            return Err(invalid(
                "compound_index",
                format!("{} is out of range for {n} tokens", self.compound_index),
            ));
        }
        if !is_binary_compound(self.compound()) {
            return Err(invalid(
                "compound_index",
                format!(
                    "token `{}` is not a binary compound of the form `first-second`",
                    self.compound()
                ),
            ));
        }
        if self.label.is_empty() {
            return Err(invalid("label", "must not be empty"));
        }
        let lengths: [(&'static str, Option<usize>); 6] = [
            ("morph_tags", self.morph_tags.as_ref().map(Vec::len)),
            ("dep_heads", self.dep_heads.as_ref().map(Vec::len)),
            ("dep_rels", self.dep_rels.as_ref().map(Vec::len)),
            ("case_tags", self.case_tags.as_ref().map(Vec::len)),
            ("lemma_tags", self.lemma_tags.as_ref().map(Vec::len)),
            ("relation_tags", self.relation_tags.as_ref().map(Vec::len)),
        ];
        for (field, len) in lengths {
            if let Some(len) = len {
                if len != n {
                    return Err(invalid(field, format!("has {len} entries for {n} tokens")));
                }
            }
        }
        if let Some(heads) = &self.dep_heads {
            for (i, &h) in heads.iter().enumerate() {
                if h > n {
                    return Err(invalid("dep_heads", format!("head {h} of token {i} exceeds {n}")));
                }
                if h == i + 1 {
                    return Err(invalid("dep_heads", format!("token {i} is its own head")));
                }
            }
        }
        Ok(())
    }

    /// The compound alone as its own context, with the token-level labels
    /// that still make sense for a one-token input.
    pub fn without_context(&self) -> ContextInstance {
        let p = self.compound_index;
        let pick = |v: &Option<Vec<String>>| v.as_ref().map(|tags| vec![tags[p].clone()]);
        ContextInstance {
            id: self.id.clone(),
            tokens: vec![self.tokens[p].clone()],
            compound_index: 0,
            label: self.label.clone(),
            language: self.language.clone(),
            morph_tags: pick(&self.morph_tags),
            dep_heads: None,
            dep_rels: None,
            case_tags: pick(&self.case_tags),
            lemma_tags: pick(&self.lemma_tags),
            relation_tags: pick(&self.relation_tags),
        }
    }
}

pub fn parse_jsonl_dataset<R: Read>(reader: R) -> Result<Vec<ContextInstance>, TextError> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let inst: ContextInstance =
            serde_json::from_str(&line).map_err(|e| TextError::Json {
                line: i + 1,
                message: e.to_string(),
            })?;
        inst.validate()
            .map_err(|source| TextError::Instance { line: i + 1, source })?;
        out.push(inst);
    }
    Ok(out)
}

pub fn load_jsonl_dataset(path: impl AsRef<Path>) -> Result<Vec<ContextInstance>, TextError> {
    parse_jsonl_dataset(fs::File::open(path)?)
}

pub fn write_jsonl_dataset<W: Write>(
    mut writer: W,
    instances: &[ContextInstance],
) -> Result<(), TextError> {
    for inst in instances {
        serde_json::to_writer(&mut writer, inst).map_err(std::io::Error::from)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}
