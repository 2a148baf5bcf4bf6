//! Minimal CoNLL-U reader/writer and pseudo-label merging.
//!
//! Only basic word lines are kept: multiword ranges (`1-2`) and empty nodes
//! (`1.1`) are skipped on read and therefore not written back.

use std::fmt::Write as _;

use super::{ContextInstance, TextError};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConlluToken {
    pub id: usize,
    pub form: String,
    pub lemma: String,
    pub upos: String,
    pub xpos: String,
    pub feats: String,
    /// `None` when the column is `_`.
    pub head: Option<usize>,
    pub deprel: String,
    pub deps: String,
    pub misc: String,
}

impl ConlluToken {
    /// `UPOS|FEATS`, or just `UPOS` without features.
    pub fn morph_tag(&self) -> String {
        if self.feats == "_" || self.feats.is_empty() {
            self.upos.clone()
        } else {
            format!("{}|{}", self.upos, self.feats)
        }
    }

    /// Value of the `Case` feature, `_` when absent.
    pub fn case(&self) -> String {
        self.feats
            .split('|')
            .find_map(|f| f.strip_prefix("Case="))
            .unwrap_or("_")
            .to_string()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ConlluSentence {
    pub comments: Vec<String>,
    pub tokens: Vec<ConlluToken>,
}

pub fn parse_conllu(text: &str) -> Result<Vec<ConlluSentence>, TextError> {
    let mut sentences = Vec::new();
    let mut current = ConlluSentence::default();
    let err = |line: usize, message: String| TextError::Conllu { line, message };

    let mut finish = |current: &mut ConlluSentence, line: usize| -> Result<(), TextError> {
        if current.tokens.is_empty() {
            if !current.comments.is_empty() {
                return Err(err(line, "sentence has comments but no tokens".into()));
            }
            return Ok(());
        }
        let n = current.tokens.len();
        for t in &current.tokens {
            if let Some(h) = t.head {
                if h > n {
                    return Err(err(line, format!("head {h} of token {} exceeds {n}", t.id)));
                }
            }
        }
        sentences.push(std::mem::take(current));
        Ok(())
    };

    let mut last_line = 0;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        last_line = line_no;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            finish(&mut current, line_no)?;
            continue;
        }
        if let Some(c) = line.strip_prefix('#') {
            current.comments.push(c.trim_start().to_string());
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 10 {
            return Err(err(line_no, format!("expected 10 tab-separated columns, found {}", cols.len())));
        }
        if cols[0].contains('-') || cols[0].contains('.') {
            continue;
        }
        let id: usize = cols[0]
            .parse()
            .map_err(|_| err(line_no, format!("bad token id `{}`", cols[0])))?;
        if id != current.tokens.len() + 1 {
            return Err(err(line_no, format!("token id {id} out of sequence")));
        }
        let head = match cols[6] {
            "_" => None,
            h => Some(
                h.parse()
                    .map_err(|_| err(line_no, format!("bad head `{h}`")))?,
            ),
        };
        current.tokens.push(ConlluToken {
            id,
            form: cols[1].to_string(),
            lemma: cols[2].to_string(),
            upos: cols[3].to_string(),
            xpos: cols[4].to_string(),
            feats: cols[5].to_string(),
            head,
            deprel: cols[7].to_string(),
            deps: cols[8].to_string(),
            misc: cols[9].to_string(),
        });
    }
    finish(&mut current, last_line + 1)?;
    Ok(sentences)
}

pub fn write_conllu(sentences: &[ConlluSentence]) -> String {
    let mut out = String::new();
    for s in sentences {
        for c in &s.comments {
            let _ = writeln!(out, "# {c}");
        }
        for t in &s.tokens {
            let head = t.head.map_or("_".to_string(), |h| h.to_string());
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                t.id, t.form, t.lemma, t.upos, t.xpos, t.feats, head, t.deprel, t.deps, t.misc
            );
        }
        out.push('\n');
    }
    out
}

/// Fills missing auxiliary fields from parsed sentences aligned 1:1 with
/// `dataset`. Fields an instance already carries are left untouched.
pub fn merge_conllu_pseudolabels(
    dataset: &[ContextInstance],
    sentences: &[ConlluSentence],
) -> Result<Vec<ContextInstance>, TextError> {
    if dataset.len() != sentences.len() {
        return Err(TextError::Misaligned {
            sentence: dataset.len().min(sentences.len()),
            message: format!(
                "{} instances but {} sentences",
                dataset.len(),
                sentences.len()
            ),
        });
    }
    let mut out = Vec::with_capacity(dataset.len());
    for (idx, (inst, sent)) in dataset.iter().zip(sentences).enumerate() {
        if inst.tokens.len() != sent.tokens.len() {
            return Err(TextError::Misaligned {
                sentence: idx,
                message: format!(
                    "instance has {} tokens, sentence has {}",
                    inst.tokens.len(),
                    sent.tokens.len()
                ),
            });
        }
        let mut merged = inst.clone();
        let field = |f: fn(&super::ConlluToken) -> String| sent.tokens.iter().map(f).collect();
        merged.morph_tags.get_or_insert_with(|| field(ConlluToken::morph_tag));
        merged.case_tags.get_or_insert_with(|| field(ConlluToken::case));
        merged.lemma_tags.get_or_insert_with(|| field(|t| t.lemma.clone()));
        if merged.dep_heads.is_none() {
            let heads: Option<Vec<usize>> = sent.tokens.iter().map(|t| t.head).collect();
            let heads = heads.ok_or_else(|| TextError::Misaligned {
                sentence: idx,
                message: "sentence has tokens without a head".into(),
            })?;
            merged.dep_heads = Some(heads);
        }
        merged.dep_rels.get_or_insert_with(|| field(|t| t.deprel.clone()));
        merged.validate().map_err(|e| TextError::Misaligned {
            sentence: idx,
            message: e.to_string(),
        })?;
        out.push(merged);
    }
    Ok(out)
}
