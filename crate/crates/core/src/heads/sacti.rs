//! Pairwise compound-type scoring between every context word and the
//! appended compound position, plus the voting decoder.
//!
//! Token states arrive as `[(n+1) × D]`: rows `0..n` are the context
//! words (the compound itself included) and row `n` is the appended copy
//! of the compound.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Init, ParameterStore, Tensor, TensorError, Var};
use crate::nn::{Forward, MlpSpec};

/// How the attachment probability `p(y_{n+1} | c_i)` is normalized.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttachmentNorm {
    /// Softmax over {compound, null} with the null score fixed at zero,
    /// i.e. `log σ(s_i)`.
    #[default]
    Binary,
    /// Softmax over the full pair-score row of `i`, every other position a
    /// candidate and `i` itself excluded.
    FullRow,
}

fn context_split(g: &Graph, z: Var) -> Result<(Var, Var, usize), TensorError> {
    let rows = g.shape(z)[0];
    if rows < 2 {
        return Err(TensorError::InvalidArgument(format!(
            "pair scoring needs at least one context row plus the compound, got {rows} rows"
        )));
    }
    let n = rows - 1;
    Ok((g.slice_rows(z, 0..n)?, g.slice_rows(z, n..rows)?, n))
}

/// `s_i = z_iᵀ U z_c + qᵀ z_i` for each context row, as `[n × 1]`.
pub fn pair_scores(g: &Graph, z: Var, u: Var, q: Var) -> Result<Var, TensorError> {
    let (ctx, zc, _) = context_split(g, z)?;
    let d = g.shape(z)[1];
    let uz = g.matmul(u, g.transpose(zc)?)?;
    let bilinear = g.matmul(ctx, uz)?;
    let bias = g.matmul(ctx, g.reshape(q, &[d, 1])?)?;
    g.add(bilinear, bias)
}

/// All-pairs version, `[(n+1) × (n+1)]` with entry `(i, j) = z_iᵀ U z_j + qᵀ z_i`.
pub fn full_pair_scores(g: &Graph, z: Var, u: Var, q: Var) -> Result<Var, TensorError> {
    let shape = g.shape(z);
    let (rows, d) = (shape[0], shape[1]);
    let bilinear = g.matmul(g.matmul(z, u)?, g.transpose(z)?)?;
    let bias = g.matmul(z, g.reshape(q, &[d, 1])?)?;
    let ones = g.constant(Tensor::filled(&[1, rows], 1.0));
    g.add(bilinear, g.matmul(bias, ones)?)
}

/// Log attachment probability of each context word to the compound, `[n × 1]`.
pub fn attachment_log_probs(g: &Graph, z: Var, u: Var, q: Var, norm: AttachmentNorm) -> Result<Var, TensorError> {
    match norm {
        AttachmentNorm::Binary => Ok(g.log_sigmoid(pair_scores(g, z, u, q)?)),
        AttachmentNorm::FullRow => {
            let full = full_pair_scores(g, z, u, q)?;
            let rows = g.shape(full)[0];
            let n = rows - 1;
            let ctx = g.slice_rows(full, 0..n)?;
            let mask: Vec<bool> = (0..n * rows).map(|k| k / rows == k % rows).collect();
            let logp = g.log_softmax(g.masked_fill(ctx, &mask, f64::NEG_INFINITY)?);
            g.slice_cols(logp, n..rows)
        }
    }
}

/// `r_{i,k} = z′_iᵀ U′_k z′_c + q′_kᵀ [z′_i ; z′_c] + b′_k`, as `[n × K]`.
///
/// `u` is the `[K, d, d]` stack, `q` is `[K, 2d]` and `b` is `[K]`.
pub fn label_scores(g: &Graph, z: Var, u: Var, q: Var, b: Var) -> Result<Var, TensorError> {
    let (ctx, zc, n) = context_split(g, z)?;
    let d = g.shape(z)[1];
    let us = g.shape(u);
    if us.len() != 3 || us[1] != d || us[2] != d {
        return Err(TensorError::Shape {
            op: "label_scores",
            lhs: g.shape(z),
            rhs: us,
        });
    }
    let k = us[0];
    let stacked = g.reshape(u, &[k * d, d])?;
    let per_label = g.reshape(g.matmul(stacked, g.transpose(zc)?)?, &[k, d])?;
    let bilinear = g.matmul(ctx, g.transpose(per_label)?)?;
    let pairs = g.concat_cols(&[ctx, g.repeat_rows(zc, n)?])?;
    let linear = g.matmul(pairs, g.transpose(q)?)?;
    g.add_row(g.add(bilinear, linear)?, b)
}

/// Negative log-likelihood summed over context words: each word's
/// attachment term plus the log-softmax of the gold label in its row.
pub fn sacti_loss(g: &Graph, attach_log_probs: Var, r: Var, gold: usize) -> Result<Var, TensorError> {
    let rows = g.shape(r)[0];
    let logp = g.log_softmax(r);
    let label = g.pick(logp, &vec![gold; rows])?;
    let total = g.add(g.sum(label), g.sum(attach_log_probs))?;
    Ok(g.scale(total, -1.0))
}

/// Softmax-normalized pair-score matrix used for the SaCTI heatmap.
pub fn sacti_pair_heatmap(scores: &Tensor) -> Tensor {
    let g = Graph::new();
    let s = g.constant(scores.clone());
    (*g.value(g.softmax(s))).clone()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoteResult {
    pub label: usize,
    /// Vote share per label id; sums to one.
    pub confidence: Vec<f64>,
    /// Label each context word voted for.
    pub votes: Vec<usize>,
    /// Per label, the sum over context words of the row log-softmax.
    pub log_prob_sums: Vec<f64>,
}

/// Summed log-probabilities closer than this are treated as equal, so
/// rounding in the sums cannot decide a tie.
pub const VOTE_TIE_EPS: f64 = 1e-9;

/// Plurality vote over per-row argmaxes. Rows vote for their lowest
/// maximal label; ties between labels go to the larger summed
/// log-probability, then to the lower id. Sums within [`VOTE_TIE_EPS`] of
/// the best one count as tied.
pub fn vote_decode(r: &Tensor) -> VoteResult {
    let (n, k) = (r.rows(), r.cols());
    let mut counts = vec![0usize; k];
    let mut votes = Vec::with_capacity(n);
    let mut log_prob_sums = vec![0.0; k];
    for i in 0..n {
        let row = r.row(i);
        let mut best = 0;
        for (j, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = j;
            }
        }
        counts[best] += 1;
        votes.push(best);
        let max = row[best];
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        for (acc, v) in log_prob_sums.iter_mut().zip(row) {
            *acc += v - lse;
        }
    }
    let top = counts.iter().copied().max().unwrap_or(0);
    let best_sum = (0..k)
        .filter(|&j| counts[j] == top)
        .map(|j| log_prob_sums[j])
        .fold(f64::NEG_INFINITY, f64::max);
    let label = (0..k)
        .find(|&j| counts[j] == top && log_prob_sums[j] >= best_sum - VOTE_TIE_EPS)
        .unwrap_or(0);
    let confidence = counts.iter().map(|&c| c as f64 / n as f64).collect();
    VoteResult {
        label,
        confidence,
        votes,
        log_prob_sums,
    }
}

/// Learned parameters of the pair and label scorers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiaffineClassifier {
    pub pair_mlp: MlpSpec,
    pub label_mlp: MlpSpec,
    pub labels: usize,
}

pub struct SactiScores {
    /// `[n × 1]` compound attachment scores.
    pub pair: Var,
    /// `[(n+1) × (n+1)]` all-pairs scores.
    pub full_pair: Var,
    pub attach_log_probs: Var,
    /// `[n × K]` per-word label scores.
    pub label: Var,
}

impl BiaffineClassifier {
    pub fn init(&self, store: &mut ParameterStore, input: usize) -> Result<(), TensorError> {
        let d = self.pair_mlp.output_dim(input);
        let d2 = self.label_mlp.output_dim(input);
        self.pair_mlp.init(store, "sacti.pair_mlp", input)?;
        store.add("sacti.pair_u", &[d, d], Init::XavierUniform)?;
        store.add("sacti.pair_q", &[d], Init::Zeros)?;
        self.label_mlp.init(store, "sacti.label_mlp", input)?;
        store.add("sacti.label_u", &[self.labels, d2, d2], Init::XavierUniform)?;
        store.add("sacti.label_q", &[self.labels, 2 * d2], Init::XavierUniform)?;
        store.add("sacti.label_b", &[self.labels], Init::Zeros)
    }

    pub fn forward(&self, fwd: &Forward, states: Var, norm: AttachmentNorm) -> Result<SactiScores, TensorError> {
        let g = fwd.graph;
        let z = self.pair_mlp.forward(fwd, "sacti.pair_mlp", states)?;
        let (u, q) = (fwd.param("sacti.pair_u")?, fwd.param("sacti.pair_q")?);
        let pair = pair_scores(g, z, u, q)?;
        let full_pair = full_pair_scores(g, z, u, q)?;
        let attach_log_probs = attachment_log_probs(g, z, u, q, norm)?;
        let z2 = self.label_mlp.forward(fwd, "sacti.label_mlp", states)?;
        let label = label_scores(
            g,
            z2,
            fwd.param("sacti.label_u")?,
            fwd.param("sacti.label_q")?,
            fwd.param("sacti.label_b")?,
        )?;
        Ok(SactiScores {
            pair,
            full_pair,
            attach_log_probs,
            label,
        })
    }
}

/// Ablated classifier: labels come from the appended compound state alone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PooledClassifier {
    pub mlp: MlpSpec,
    pub labels: usize,
}

impl PooledClassifier {
    pub fn init(&self, store: &mut ParameterStore, input: usize) -> Result<(), TensorError> {
        self.mlp.init(store, "pooled.mlp", input)?;
        crate::nn::init_linear(store, "pooled.out", self.mlp.output_dim(input), self.labels)
    }

    /// `[1 × K]` logits.
    pub fn forward(&self, fwd: &Forward, states: Var) -> Result<Var, TensorError> {
        let g = fwd.graph;
        let rows = g.shape(states)[0];
        let compound = g.slice_rows(states, rows - 1..rows)?;
        let h = self.mlp.forward(fwd, "pooled.mlp", compound)?;
        fwd.linear("pooled.out", h)
    }
}
