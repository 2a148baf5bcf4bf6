//! Per-token classification heads: morphological tags and the auxiliary
//! case, lemma and relation tasks.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParameterStore, TensorError, Var};
use crate::nn::{init_linear, Forward};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TagTask {
    Morph,
    Case,
    Lemma,
    Relation,
}

impl TagTask {
    pub const ALL: [TagTask; 4] = [TagTask::Morph, TagTask::Case, TagTask::Lemma, TagTask::Relation];

    pub fn name(self) -> &'static str {
        match self {
            TagTask::Morph => "morph",
            TagTask::Case => "case",
            TagTask::Lemma => "lemma",
            TagTask::Relation => "relation",
        }
    }
}

impl fmt::Display for TagTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A linear layer followed by a softmax over `classes` tags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenClassifier {
    pub task: TagTask,
    pub classes: usize,
}

impl TokenClassifier {
    fn prefix(&self) -> String {
        format!("tagger.{}", self.task.name())
    }

    pub fn init(&self, store: &mut ParameterStore, input: usize) -> Result<(), TensorError> {
        init_linear(store, &self.prefix(), input, self.classes)
    }

    /// Logits for the `n` context tokens, `[n × classes]`. The appended
    /// compound row is dropped.
    pub fn logits(&self, fwd: &Forward, states: Var) -> Result<Var, TensorError> {
        let g = fwd.graph;
        let n = g.shape(states)[0] - 1;
        let ctx = g.slice_rows(states, 0..n)?;
        fwd.linear(&self.prefix(), ctx)
    }
}

/// Mean cross-entropy over tokens whose target is present. `None` when
/// every token is masked, so the head contributes neither loss nor gradient.
pub fn tagging_loss(g: &Graph, logits: Var, targets: &[Option<usize>]) -> Result<Option<Var>, TensorError> {
    let rows = g.shape(logits)[0];
    if targets.len() != rows {
        return Err(TensorError::InvalidArgument(format!(
            "{} targets for {rows} tokens",
            targets.len()
        )));
    }
    let (idx, gold): (Vec<usize>, Vec<usize>) = targets
        .iter()
        .enumerate()
        .filter_map(|(i, t)| t.map(|t| (i, t)))
        .unzip();
    if idx.is_empty() {
        return Ok(None);
    }
    let kept = if idx.len() == rows {
        logits
    } else {
        g.gather_rows(logits, &idx)?
    };
    g.cross_entropy(kept, &gold).map(Some)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    #[test]
    fn fully_masked_is_absent() {
        let g = Graph::new();
        let logits = g.leaf(Tensor::filled(&[3, 4], 0.2), true);
        assert!(tagging_loss(&g, logits, &[None, None, None]).unwrap().is_none());
    }

    #[test]
    fn uniform_over_ten_tags_is_ln10() {
        let g = Graph::new();
        let logits = g.constant(Tensor::zeros(&[1, 10]));
        let loss = tagging_loss(&g, logits, &[Some(7)]).unwrap().unwrap();
        assert!((g.value(loss).item() - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn masked_rows_get_no_gradient() {
        let g = Graph::new();
        let logits = g.leaf(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, -1.0]]).unwrap(), true);
        let loss = tagging_loss(&g, logits, &[None, Some(0)]).unwrap().unwrap();
        g.backward(loss).unwrap();
        let grad = g.grad(logits).unwrap();
        assert_eq!(grad.row(0), &[0.0, 0.0]);
        assert!(grad.row(1)[0] < 0.0);
    }

    #[test]
    fn out_of_range_tag_is_an_error() {
        let g = Graph::new();
        let logits = g.constant(Tensor::zeros(&[1, 3]));
        assert!(tagging_loss(&g, logits, &[Some(3)]).is_err());
    }
}
