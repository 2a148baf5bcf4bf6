use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::{ContextInstance, TextError};

/// Bijective mapping between label names and dense ids.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct LabelVocab {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl TryFrom<Vec<String>> for LabelVocab {
    type Error = TextError;

    fn try_from(names: Vec<String>) -> Result<Self, TextError> {
        LabelVocab::from_names(names)
    }
}

impl From<LabelVocab> for Vec<String> {
    fn from(v: LabelVocab) -> Self {
        v.names
    }
}

impl LabelVocab {
    /// Keeps the given order; names must be unique.
    pub fn from_names<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self, TextError> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        let mut index = HashMap::with_capacity(names.len());
        for (i, n) in names.iter().enumerate() {
            if index.insert(n.clone(), i).is_some() {
                return Err(TextError::Invalid(format!("duplicate label `{n}`")));
            }
        }
        Ok(LabelVocab { names, index })
    }

    /// Sorted, deduplicated inventory of everything observed.
    pub fn collect<'a>(observed: impl IntoIterator<Item = &'a str>) -> Self {
        let set: BTreeSet<&str> = observed.into_iter().collect();
        Self::from_names(set).expect("set is unique")
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.names.get(id).map(String::as_str)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    /// Maps every name, or reports the first unknown one.
    pub fn ids(&self, names: &[String]) -> Result<Vec<usize>, String> {
        names
            .iter()
            .map(|n| self.id(n).ok_or_else(|| n.clone()))
            .collect()
    }
}

/// Label inventories of every task, built from data rather than hard-coded.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskVocabs {
    pub semantic: LabelVocab,
    pub morph: LabelVocab,
    pub dep_rel: LabelVocab,
    pub case: LabelVocab,
    pub lemma: LabelVocab,
    pub relation: LabelVocab,
}

impl TaskVocabs {
    pub fn from_instances<'a>(data: impl IntoIterator<Item = &'a ContextInstance> + Clone) -> Self {
        fn tags<'a>(
            data: impl IntoIterator<Item = &'a ContextInstance>,
            f: fn(&ContextInstance) -> &Option<Vec<String>>,
        ) -> LabelVocab {
            LabelVocab::collect(
                data.into_iter()
                    .filter_map(|i| f(i).as_ref())
                    .flat_map(|v| v.iter().map(String::as_str)),
            )
        }
        TaskVocabs {
            semantic: LabelVocab::collect(data.clone().into_iter().map(|i| i.label.as_str())),
            morph: tags(data.clone(), |i| &i.morph_tags),
            dep_rel: tags(data.clone(), |i| &i.dep_rels),
            case: tags(data.clone(), |i| &i.case_tags),
            lemma: tags(data.clone(), |i| &i.lemma_tags),
            relation: tags(data, |i| &i.relation_tags),
        }
    }
}
