use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::{ContextInstance, TextError};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
/// Reserved boundary marker id.
pub const BOUNDARY: u32 = 2;

const SPECIALS: [&str; 3] = ["<pad>", "<unk>", "<sep>"];

/// Byte-pair-merge subword vocabulary over Unicode scalar values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "StoredVocab", into = "StoredVocab")]
pub struct SubwordVocab {
    pieces: Vec<String>,
    merges: Vec<(String, String)>,
    index: HashMap<String, u32>,
    ranks: HashMap<(String, String), usize>,
}

#[derive(Serialize, Deserialize)]
struct StoredVocab {
    pieces: Vec<String>,
    merges: Vec<(String, String)>,
}

impl From<StoredVocab> for SubwordVocab {
    fn from(s: StoredVocab) -> Self {
        SubwordVocab::from_parts(s.pieces, s.merges)
    }
}

impl From<SubwordVocab> for StoredVocab {
    fn from(v: SubwordVocab) -> Self {
        StoredVocab {
            pieces: v.pieces,
            merges: v.merges,
        }
    }
}

/// Piece ids of a context with the compound appended, and the piece range of
/// every token (the last range belongs to the appended compound).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedInstance {
    pub pieces: Vec<u32>,
    pub spans: Vec<Range<usize>>,
}

impl SubwordVocab {
    fn from_parts(pieces: Vec<String>, merges: Vec<(String, String)>) -> Self {
        let index = pieces
            .iter()
            .enumerate()
            .map(|(i, p)| (p.clone(), i as u32))
            .collect();
        let ranks = merges
            .iter()
            .enumerate()
            .map(|(i, m)| (m.clone(), i))
            .collect();
        SubwordVocab {
            pieces,
            merges,
            index,
            ranks,
        }
    }

    /// Learns merges until the vocabulary holds `vocab_size` non-special
    /// pieces or no adjacent pair is left. The most frequent pair wins; ties
    /// go to the lexicographically smallest pair.
    pub fn train<'a, I>(corpus: I, vocab_size: usize) -> Result<Self, TextError>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for tok in corpus {
            if !tok.is_empty() {
                *counts.entry(tok).or_default() += 1;
            }
        }
        if counts.is_empty() {
            return Err(TextError::EmptyCorpus);
        }
        let chars: BTreeSet<char> = counts.keys().flat_map(|t| t.chars()).collect();
        if vocab_size < chars.len() {
            return Err(TextError::VocabTooSmall {
                requested: vocab_size,
                chars: chars.len(),
            });
        }
        let mut pieces: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        pieces.extend(chars.iter().map(|c| c.to_string()));
        let mut known: BTreeSet<String> = pieces.iter().cloned().collect();
        let mut words: Vec<(Vec<String>, usize)> = counts
            .into_iter()
            .map(|(w, c)| (w.chars().map(String::from).collect(), c))
            .collect();
        let mut merges = Vec::new();

        while pieces.len() - SPECIALS.len() < vocab_size {
            let mut pair_counts: BTreeMap<(&str, &str), usize> = BTreeMap::new();
            for (syms, c) in &words {
                for w in syms.windows(2) {
                    *pair_counts.entry((&w[0], &w[1])).or_default() += c;
                }
            }
            let mut best: Option<((&str, &str), usize)> = None;
            for (pair, c) in pair_counts {
                if best.is_none_or(|(_, bc)| c > bc) {
                    best = Some((pair, c));
                }
            }
            let Some(((l, r), _)) = best else { break };
            let (left, right) = (l.to_string(), r.to_string());
            for (syms, _) in words.iter_mut() {
                merge_pair(syms, &left, &right);
            }
            let merged = format!("{left}{right}");
            if known.insert(merged.clone()) {
                pieces.push(merged);
            }
            merges.push((left, right));
        }
        Ok(Self::from_parts(pieces, merges))
    }

    /// Total number of ids, including the special pieces.
    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn piece(&self, id: u32) -> Option<&str> {
        self.pieces.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, piece: &str) -> Option<u32> {
        self.index.get(piece).copied()
    }

    /// Splits `token` into piece strings by applying merges in rank order.
    pub fn segment(&self, token: &str) -> Vec<String> {
        let mut syms: Vec<String> = token.chars().map(String::from).collect();
        loop {
            let best = syms
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0].clone(), w[1].clone())))
                .min()
                .copied();
            let Some(rank) = best else { break };
            let (l, r) = &self.merges[rank];
            merge_pair(&mut syms, l, r);
        }
        syms
    }

    /// Encodes one token; the result is never empty for a non-empty token.
    pub fn encode(&self, token: &str) -> Vec<u32> {
        self.segment(token)
            .iter()
            .map(|p| self.id(p).unwrap_or(UNK))
            .collect()
    }

    /// Concatenates pieces; unknown pieces decode to U+FFFD and specials to nothing.
    pub fn decode(&self, ids: &[u32]) -> String {
        ids.iter()
            .map(|&id| match id {
                UNK => "\u{FFFD}",
                PAD | BOUNDARY => "",
                _ => self.piece(id).unwrap_or("\u{FFFD}"),
            })
            .collect()
    }

    /// Encodes `c_1..c_n` followed by a copy of the compound token.
    pub fn encode_instance(&self, inst: &ContextInstance) -> EncodedInstance {
        let mut pieces = Vec::new();
        let mut spans = Vec::with_capacity(inst.tokens.len() + 1);
        let compound = &inst.tokens[inst.compound_index];
        for tok in inst.tokens.iter().chain(std::iter::once(compound)) {
            let start = pieces.len();
            let mut ids = self.encode(tok);
            if ids.is_empty() {
                ids.push(UNK);
            }
            pieces.extend(ids);
            spans.push(start..pieces.len());
        }
        EncodedInstance { pieces, spans }
    }
}

fn merge_pair(syms: &mut Vec<String>, left: &str, right: &str) {
    let mut i = 0;
    while i + 1 < syms.len() {
        if syms[i] == left && syms[i + 1] == right {
            let r = syms.remove(i + 1);
            syms[i].push_str(&r);
        }
        i += 1;
    }
}
