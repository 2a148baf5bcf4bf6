//! Small generated datasets for smoke tests, demos and convergence checks.
//!
//! Each instance places a compound among filler words and one cue word;
//! the cue alone determines the label, so a model must read the context.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::text::ContextInstance;

pub const LABELS: [&str; 4] = ["A", "B", "D", "T"];

const COMPOUNDS: [&str; 6] = [
    "pīta-ambaram",
    "rāma-īśvaraḥ",
    "deva-dattaḥ",
    "rāja-puruṣaḥ",
    "nīla-utpalam",
    "yathā-śakti",
];
const CUES: [&str; 4] = ["sadā", "yaḥ", "ca", "sya"];
const FILLERS: [&str; 6] = ["aham", "tatra", "gacchati", "vadati", "iti", "vanam"];
const MORPH: [&str; 3] = ["NOUN", "PART", "VERB"];

/// `n` instances cycling through the labels, with morphological and
/// dependency pseudo-labels attached.
pub fn separable_dataset(n: usize, seed: u64) -> Vec<ContextInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let label = i % LABELS.len();
            let len = rng.random_range(3..=5);
            let mut tokens: Vec<String> = (0..len)
                .map(|_| FILLERS.choose(&mut rng).expect("non-empty").to_string())
                .collect();
            let compound_index = rng.random_range(0..len);
            tokens[compound_index] = COMPOUNDS.choose(&mut rng).expect("non-empty").to_string();
            let mut cue = rng.random_range(0..len);
            if cue == compound_index {
                cue = (cue + 1) % len;
            }
            tokens[cue] = CUES[label].to_string();
            let morph = (0..len)
                .map(|t| {
                    if t == compound_index {
                        MORPH[0]
                    } else if t == cue {
                        MORPH[1]
                    } else {
                        MORPH[2]
                    }
                })
                .map(str::to_string)
                .collect();
            let heads = (0..len)
                .map(|t| if t == compound_index { 0 } else { compound_index + 1 })
                .collect();
            let rels = (0..len)
                .map(|t| if t == compound_index { "root" } else { "dep" }.to_string())
                .collect();
            let mut inst = ContextInstance::new(tokens, compound_index, LABELS[label]);
            inst.id = Some(format!("syn-{seed}-{i}"));
            inst.morph_tags = Some(morph);
            inst.dep_heads = Some(heads);
            inst.dep_rels = Some(rels);
            inst
        })
        .collect()
}
