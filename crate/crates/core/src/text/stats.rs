use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::ContextInstance;

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitStats {
    pub name: String,
    pub instances: usize,
    pub unique_compounds: usize,
    pub per_label: BTreeMap<String, usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub splits: Vec<SplitStats>,
    /// Distinct compound surface forms over all splits.
    pub unique_compounds: usize,
    /// Distinct semantic types over all splits.
    pub label_count: usize,
}

pub fn dataset_stats(splits: &[(&str, &[ContextInstance])]) -> DatasetStats {
    let mut all_compounds = BTreeSet::new();
    let mut all_labels = BTreeSet::new();
    let splits = splits
        .iter()
        .map(|(name, data)| {
            let mut per_label = BTreeMap::new();
            let mut compounds = BTreeSet::new();
            for inst in data.iter() {
                *per_label.entry(inst.label.clone()).or_default() += 1;
                compounds.insert(inst.compound());
                all_compounds.insert(inst.compound().to_string());
                all_labels.insert(inst.label.as_str());
            }
            SplitStats {
                name: name.to_string(),
                instances: data.len(),
                unique_compounds: compounds.len(),
                per_label,
            }
        })
        .collect();
    DatasetStats {
        splits,
        unique_compounds: all_compounds.len(),
        label_count: all_labels.len(),
    }
}
