//! Small trainable transformer encoder with wordpiece-average pooling.
//!
//! Post-norm layers with learned absolute positions. Nothing is pretrained;
//! the default sizes are chosen for CPU runs.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Init, ParameterStore, Tensor, TensorError, Var};
use crate::error::{Error, Result};
use crate::nn::{init_linear, Forward};

const LN_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub layers: usize,
    pub model_dim: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub max_pieces: usize,
    /// Layer whose piece states are pooled: `0` is the embedding output,
    /// `layers` (the default when absent) the final layer.
    #[serde(default)]
    pub feature_layer: Option<usize>,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            layers: 2,
            model_dim: 64,
            heads: 4,
            ff_dim: 128,
            max_pieces: 128,
            feature_layer: None,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.model_dim == 0 || self.heads == 0 || self.ff_dim == 0 || self.max_pieces == 0 {
            return bad("encoder sizes must be positive".into());
        }
        if self.model_dim % self.heads != 0 {
            return bad(format!(
                "model_dim {} is not divisible by {} heads",
                self.model_dim, self.heads
            ));
        }
        if self.feature_layer.is_some_and(|l| l > self.layers) {
            return bad(format!(
                "feature_layer {:?} exceeds {} layers",
                self.feature_layer, self.layers
            ));
        }
        Ok(())
    }

    fn feature_layer(&self) -> usize {
        self.feature_layer.unwrap_or(self.layers)
    }
}

/// Result of encoding one sequence.
pub struct EncoderOutput {
    /// `[pieces × dim]` states of the feature layer.
    pub piece_states: Var,
    /// `[(n+1) × dim]`, row `i` the mean of span `i` of `piece_states`.
    pub token_states: Var,
    /// `attention_maps[layer][head]` is a `[pieces × pieces]` row-stochastic matrix.
    pub attention_maps: Vec<Vec<Tensor>>,
}

pub struct Encoder {
    pub config: EncoderConfig,
    prefix: String,
}

fn check_spans(spans: &[Range<usize>], pieces: usize) -> Result<()> {
    let mut expected = 0;
    for s in spans {
        if s.start != expected || s.end <= s.start {
            return Err(Error::Input {
                field: "spans",
                reason: format!("span {s:?} does not continue the partition at {expected}"),
            });
        }
        expected = s.end;
    }
    if expected != pieces || spans.is_empty() {
        return Err(Error::Input {
            field: "spans",
            reason: format!("spans cover {expected} of {pieces} pieces"),
        });
    }
    Ok(())
}

impl Encoder {
    pub fn new(config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        Ok(Encoder {
            config,
            prefix: "encoder".into(),
        })
    }

    fn name(&self, rest: &str) -> String {
        format!("{}.{rest}", self.prefix)
    }

    pub fn init_params(&self, store: &mut ParameterStore, vocab_size: usize) -> Result<(), TensorError> {
        let c = &self.config;
        let d = c.model_dim;
        store.add(&self.name("tok_embed"), &[vocab_size, d], Init::Normal { std: 0.02 })?;
        store.add(&self.name("pos_embed"), &[c.max_pieces, d], Init::Normal { std: 0.02 })?;
        store.add(&self.name("embed_norm.gamma"), &[d], Init::Constant(1.0))?;
        store.add(&self.name("embed_norm.beta"), &[d], Init::Zeros)?;
        for l in 0..c.layers {
            let p = |s: &str| self.name(&format!("layer{l}.{s}"));
            for proj in ["wq", "wk", "wv", "wo"] {
                init_linear(store, &p(&format!("attn.{proj}")), d, d)?;
            }
            init_linear(store, &p("ff.in"), d, c.ff_dim)?;
            init_linear(store, &p("ff.out"), c.ff_dim, d)?;
            for ln in ["norm1", "norm2"] {
                store.add(&p(&format!("{ln}.gamma")), &[d], Init::Constant(1.0))?;
                store.add(&p(&format!("{ln}.beta")), &[d], Init::Zeros)?;
            }
        }
        Ok(())
    }

    /// Encodes piece ids. Inputs longer than `max_pieces` are rejected.
    pub fn encode(&self, fwd: &Forward, pieces: &[u32], spans: &[Range<usize>]) -> Result<EncoderOutput> {
        if pieces.len() > self.config.max_pieces {
            return Err(Error::TooLong {
                pieces: pieces.len(),
                max: self.config.max_pieces,
            });
        }
        if pieces.is_empty() {
            return Err(Error::Input {
                field: "pieces",
                reason: "empty sequence".into(),
            });
        }
        check_spans(spans, pieces.len())?;
        let g = fwd.graph;
        let table = fwd.param(&self.name("tok_embed"))?;
        let ids: Vec<usize> = pieces.iter().map(|&p| p as usize).collect();
        let tok = g.gather_rows(table, &ids)?;
        self.encode_embedded(fwd, tok, spans)
    }

    /// Same as [`Encoder::encode`] but starting from externally supplied
    /// `[pieces × dim]` piece embeddings instead of the learned table.
    pub fn encode_embedded(&self, fwd: &Forward, embeddings: Var, spans: &[Range<usize>]) -> Result<EncoderOutput> {
        let g = fwd.graph;
        let shape = g.shape(embeddings);
        let len = shape[0];
        if shape.len() != 2 || shape[1] != self.config.model_dim {
            return Err(Error::Input {
                field: "embeddings",
                reason: format!("expected [pieces, {}], got {shape:?}", self.config.model_dim),
            });
        }
        if len > self.config.max_pieces {
            return Err(Error::TooLong {
                pieces: len,
                max: self.config.max_pieces,
            });
        }
        check_spans(spans, len)?;
        let pos_table = fwd.param(&self.name("pos_embed"))?;
        let pos = g.slice_rows(pos_table, 0..len)?;
        let mut x = g.add(embeddings, pos)?;
        x = g.layer_norm(
            x,
            fwd.param(&self.name("embed_norm.gamma"))?,
            fwd.param(&self.name("embed_norm.beta"))?,
            LN_EPS,
        )?;
        x = fwd.dropout(x)?;

        let mut features = x;
        let mut attention_maps = Vec::with_capacity(self.config.layers);
        for l in 0..self.config.layers {
            let (out, maps) = self.layer(fwd, l, x)?;
            x = out;
            attention_maps.push(maps);
            if l + 1 == self.config.feature_layer() {
                features = x;
            }
        }
        let token_states = g.span_mean(features, spans)?;
        Ok(EncoderOutput {
            piece_states: features,
            token_states,
            attention_maps,
        })
    }

    fn layer(&self, fwd: &Forward, l: usize, x: Var) -> Result<(Var, Vec<Tensor>)> {
        let g = fwd.graph;
        let c = &self.config;
        let p = |s: &str| self.name(&format!("layer{l}.{s}"));
        let q = fwd.linear(&p("attn.wq"), x)?;
        let k = fwd.linear(&p("attn.wk"), x)?;
        let v = fwd.linear(&p("attn.wv"), x)?;
        let dh = c.model_dim / c.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut heads = Vec::with_capacity(c.heads);
        let mut maps = Vec::with_capacity(c.heads);
        for h in 0..c.heads {
            let cols = h * dh..(h + 1) * dh;
            let qh = g.slice_cols(q, cols.clone())?;
            let kh = g.slice_cols(k, cols.clone())?;
            let vh = g.slice_cols(v, cols)?;
            let scores = g.scale(g.matmul(qh, g.transpose(kh)?)?, scale);
            let attn = g.softmax(scores);
            maps.push((*g.value(attn)).clone());
            heads.push(g.matmul(attn, vh)?);
        }
        let merged = g.concat_cols(&heads)?;
        let attn_out = fwd.dropout(fwd.linear(&p("attn.wo"), merged)?)?;
        let x = g.layer_norm(
            g.add(x, attn_out)?,
            fwd.param(&p("norm1.gamma"))?,
            fwd.param(&p("norm1.beta"))?,
            LN_EPS,
        )?;
        let hidden = g.relu(fwd.linear(&p("ff.in"), x)?);
        let ff = fwd.dropout(fwd.linear(&p("ff.out"), hidden)?)?;
        let x = g.layer_norm(
            g.add(x, ff)?,
            fwd.param(&p("norm2.gamma"))?,
            fwd.param(&p("norm2.beta"))?,
            LN_EPS,
        )?;
        Ok((x, maps))
    }
}

/// Aggregates a piece-level attention map to tokens: queries are averaged
/// over the query token's pieces, keys summed over the key token's pieces,
/// so rows still sum to one.
pub fn attention_heatmap(
    maps: &[Vec<Tensor>],
    layer: usize,
    head: usize,
    spans: &[Range<usize>],
) -> Result<Tensor> {
    let map = maps
        .get(layer)
        .ok_or(TensorError::Index {
            op: "attention_heatmap.layer",
            index: layer,
            bound: maps.len(),
        })?
        .get(head)
        .ok_or(TensorError::Index {
            op: "attention_heatmap.head",
            index: head,
            bound: maps[layer].len(),
        })?;
    let pieces = map.rows();
    check_spans(spans, pieces)?;
    let n = spans.len();
    let mut out = vec![0.0; n * n];
    for (i, qs) in spans.iter().enumerate() {
        for (j, ks) in spans.iter().enumerate() {
            let mut total = 0.0;
            for q in qs.clone() {
                for k in ks.clone() {
                    total += map.get2(q, k);
                }
            }
            out[i * n + j] = total / qs.len() as f64;
        }
    }
    Ok(Tensor::new(vec![n, n], out)?)
}
