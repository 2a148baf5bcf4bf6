//! Lenient reader for unlabeled inputs.

use std::io::{BufRead, BufReader, Read};

use sacti_core::model::PredictRequest;
use sacti_core::text::TextError;
use serde::{Deserialize, Serialize};

/// One compound in context. Full dataset lines are accepted too; fields
/// other than these are ignored.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputItem {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub tokens: Vec<String>,
    pub compound_index: usize,
}

impl InputItem {
    pub fn request(&self) -> PredictRequest {
        PredictRequest {
            tokens: self.tokens.clone(),
            compound_index: self.compound_index,
        }
    }
}

pub fn parse_inputs<R: Read>(reader: R) -> Result<Vec<InputItem>, TextError> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item: InputItem = serde_json::from_str(&line).map_err(|e| TextError::Json {
            line: i + 1,
            message: e.to_string(),
        })?;
        item.request().to_instance().map_err(|e| TextError::Json {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(item);
    }
    Ok(out)
}
