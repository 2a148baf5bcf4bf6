//! Biaffine dependency head (Dozat & Manning style) used as an auxiliary
//! signal and for the dependency heatmap.
//!
//! Candidate heads are `[root, token 1, …, token n]`, so column `j` is the
//! 1-based head index with `0` for the root. Scores are computed for all
//! `n+1` state rows; the appended compound row is masked like the token it
//! copies and only appears in heatmaps.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Init, ParameterStore, Tensor, TensorError, Var};
use crate::nn::{Forward, MlpSpec};

/// Mask of self-attachments for the `(n+1) × (n+1)` arc matrix.
pub fn self_mask(n: usize, compound_index: usize) -> Vec<bool> {
    let cols = n + 1;
    (0..cols * cols)
        .map(|k| {
            let (i, j) = (k / cols, k % cols);
            let own = if i < n { i } else { compound_index };
            j == own + 1
        })
        .collect()
}

fn candidates(g: &Graph, heads: Var, root: Var) -> Result<Var, TensorError> {
    let shape = g.shape(heads);
    let n = shape[0] - 1;
    g.concat_rows(&[g.reshape(root, &[1, shape[1]])?, g.slice_rows(heads, 0..n)?])
}

/// Masked arc scores `[(n+1) × (n+1)]`:
/// `s[i, j] = dep_iᵀ W cand_j + bᵀ cand_j`, self columns at `−∞`.
pub fn arc_scores(
    g: &Graph,
    dep: Var,
    head: Var,
    root: Var,
    w: Var,
    b: Var,
    compound_index: usize,
) -> Result<Var, TensorError> {
    let rows = g.shape(dep)[0];
    if rows < 2 || g.shape(head)[0] != rows {
        return Err(TensorError::Shape {
            op: "arc_scores",
            lhs: g.shape(dep),
            rhs: g.shape(head),
        });
    }
    let n = rows - 1;
    if compound_index >= n {
        return Err(TensorError::Index {
            op: "arc_scores",
            index: compound_index,
            bound: n,
        });
    }
    let cand = candidates(g, head, root)?;
    let d = g.shape(cand)[1];
    let bilinear = g.matmul(g.matmul(dep, w)?, g.transpose(cand)?)?;
    let prior = g.reshape(g.matmul(cand, g.reshape(b, &[d, 1])?)?, &[rows])?;
    let scores = g.add_row(bilinear, prior)?;
    g.masked_fill(scores, &self_mask(n, compound_index), f64::NEG_INFINITY)
}

/// Relation scorer parameters bound on one tape.
///
/// `w` is `[d × R·d]` with `W_k` in column block `k`; `a`, `c` are `[R × d]`
/// and `b` is `[R]`:
/// `rel[i, j, k] = dep_iᵀ W_k cand_j + a_kᵀ dep_i + c_kᵀ cand_j + b_k`.
#[derive(Clone, Copy, Debug)]
pub struct RelParams {
    pub w: Var,
    pub a: Var,
    pub c: Var,
    pub b: Var,
}

/// Relation scores for the pairs `(deps[m], heads[m])`, `[m × R]`.
/// `dep` holds dependent rows and `cand` the `[root; tokens]` candidates.
pub fn rel_scores_at(
    g: &Graph,
    dep: Var,
    cand: Var,
    p: RelParams,
    deps: &[usize],
    heads: &[usize],
) -> Result<Var, TensorError> {
    let d = g.shape(dep)[1];
    let r = g.shape(p.b)[0];
    let ds = g.gather_rows(dep, deps)?;
    let hs = g.gather_rows(cand, heads)?;
    let projected = g.matmul(ds, p.w)?;
    let tiled = g.concat_cols(&vec![hs; r])?;
    let mut blocks = vec![0.0; r * d * r];
    for k in 0..r {
        for a in 0..d {
            blocks[(k * d + a) * r + k] = 1.0;
        }
    }
    let blocks = g.constant(Tensor::new(vec![r * d, r], blocks)?);
    let bilinear = g.matmul(g.mul(projected, tiled)?, blocks)?;
    let linear = g.add(
        g.matmul(ds, g.transpose(p.a)?)?,
        g.matmul(hs, g.transpose(p.c)?)?,
    )?;
    g.add_row(g.add(bilinear, linear)?, p.b)
}

pub struct DepScores {
    /// Masked `[(n+1) × (n+1)]` arc scores including the appended row.
    pub arc_full: Var,
    /// `[n × (n+1)]` arc scores of the real tokens.
    pub arc: Var,
    pub rel_dep: Var,
    pub rel_cand: Var,
    pub rel: RelParams,
    pub n: usize,
}

impl DepScores {
    /// Full relation tensor `[n, n+1, R]` for decoding and display.
    pub fn rel_tensor(&self, g: &Graph) -> Result<Tensor, TensorError> {
        let n = self.n;
        let r = g.shape(self.rel.b)[0];
        let deps: Vec<usize> = (0..n).collect();
        let mut out = vec![0.0; n * (n + 1) * r];
        for j in 0..=n {
            let s = rel_scores_at(g, self.rel_dep, self.rel_cand, self.rel, &deps, &vec![j; n])?;
            let sv = g.value(s);
            for i in 0..n {
                out[(i * (n + 1) + j) * r..(i * (n + 1) + j + 1) * r].copy_from_slice(sv.row(i));
            }
        }
        Tensor::new(vec![n, n + 1, r], out)
    }
}

/// Arc cross-entropy over tokens with a gold head plus relation
/// cross-entropy at the gold head over tokens that also have a relation.
/// `None` when nothing is supervised.
pub fn dep_loss(
    g: &Graph,
    scores: &DepScores,
    heads: &[Option<usize>],
    rels: &[Option<usize>],
) -> Result<Option<Var>, TensorError> {
    let n = scores.n;
    if heads.len() != n || rels.len() != n {
        return Err(TensorError::InvalidArgument(format!(
            "{} heads and {} relations for {n} tokens",
            heads.len(),
            rels.len()
        )));
    }
    let mut arc_rows = Vec::new();
    let mut arc_gold = Vec::new();
    let mut rel_rows = Vec::new();
    let mut rel_heads = Vec::new();
    let mut rel_gold = Vec::new();
    for (i, (h, r)) in heads.iter().zip(rels).enumerate() {
        let Some(h) = *h else { continue };
        if h > n {
            return Err(TensorError::Index {
                op: "dep_loss.head",
                index: h,
                bound: n + 1,
            });
        }
        if h == i + 1 {
            return Err(TensorError::InvalidArgument(format!("token {} is its own head", i + 1)));
        }
        arc_rows.push(i);
        arc_gold.push(h);
        if let Some(r) = *r {
            rel_rows.push(i);
            rel_heads.push(h);
            rel_gold.push(r);
        }
    }
    if arc_rows.is_empty() {
        return Ok(None);
    }
    let arc = g.cross_entropy(g.gather_rows(scores.arc, &arc_rows)?, &arc_gold)?;
    if rel_rows.is_empty() {
        return Ok(Some(arc));
    }
    let rel_logits = rel_scores_at(g, scores.rel_dep, scores.rel_cand, scores.rel, &rel_rows, &rel_heads)?;
    let rel = g.cross_entropy(rel_logits, &rel_gold)?;
    g.add(arc, rel).map(Some)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Arc {
    /// 1-based head, `0` for the root.
    pub head: usize,
    pub relation: usize,
}

/// Independent per-token argmax; the result need not be a tree.
pub fn greedy_dep_decode(arc: &Tensor, rel: &Tensor) -> Vec<Arc> {
    let n = arc.rows();
    let cols = arc.cols();
    let r = rel.shape().get(2).copied().unwrap_or(0);
    (0..n)
        .map(|i| {
            let row = arc.row(i);
            let mut head = 0;
            for j in 1..cols {
                if j != i + 1 && row[j] > row[head] {
                    head = j;
                }
            }
            let base = (i * cols + head) * r;
            let scores = &rel.data()[base..base + r];
            let mut relation = 0;
            for (k, &v) in scores.iter().enumerate() {
                if v > scores[relation] {
                    relation = k;
                }
            }
            Arc { head, relation }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepHead {
    pub arc_mlp: MlpSpec,
    pub rel_mlp: MlpSpec,
    pub relations: usize,
}

impl DepHead {
    pub fn init(&self, store: &mut ParameterStore, input: usize) -> Result<(), TensorError> {
        let da = self.arc_mlp.output_dim(input);
        let dr = self.rel_mlp.output_dim(input);
        let r = self.relations.max(1);
        self.arc_mlp.init(store, "dep.arc_dep_mlp", input)?;
        self.arc_mlp.init(store, "dep.arc_head_mlp", input)?;
        self.rel_mlp.init(store, "dep.rel_dep_mlp", input)?;
        self.rel_mlp.init(store, "dep.rel_head_mlp", input)?;
        store.add("dep.arc_root", &[da], Init::Normal { std: 0.02 })?;
        store.add("dep.arc_w", &[da, da], Init::XavierUniform)?;
        store.add("dep.arc_b", &[da], Init::Zeros)?;
        store.add("dep.rel_root", &[dr], Init::Normal { std: 0.02 })?;
        store.add("dep.rel_w", &[dr, r * dr], Init::XavierUniform)?;
        store.add("dep.rel_a", &[r, dr], Init::XavierUniform)?;
        store.add("dep.rel_c", &[r, dr], Init::XavierUniform)?;
        store.add("dep.rel_b", &[r], Init::Zeros)
    }

    pub fn forward(&self, fwd: &Forward, states: Var, compound_index: usize) -> Result<DepScores, TensorError> {
        let g = fwd.graph;
        let n = g.shape(states)[0] - 1;
        let dep = self.arc_mlp.forward(fwd, "dep.arc_dep_mlp", states)?;
        let head = self.arc_mlp.forward(fwd, "dep.arc_head_mlp", states)?;
        let arc_full = arc_scores(
            g,
            dep,
            head,
            fwd.param("dep.arc_root")?,
            fwd.param("dep.arc_w")?,
            fwd.param("dep.arc_b")?,
            compound_index,
        )?;
        let arc = g.slice_rows(arc_full, 0..n)?;
        let rel_all = self.rel_mlp.forward(fwd, "dep.rel_dep_mlp", states)?;
        let rel_dep = g.slice_rows(rel_all, 0..n)?;
        let rel_heads = self.rel_mlp.forward(fwd, "dep.rel_head_mlp", states)?;
        let rel_cand = candidates(g, rel_heads, fwd.param("dep.rel_root")?)?;
        Ok(DepScores {
            arc_full,
            arc,
            rel_dep,
            rel_cand,
            rel: RelParams {
                w: fwd.param("dep.rel_w")?,
                a: fwd.param("dep.rel_a")?,
                c: fwd.param("dep.rel_c")?,
                b: fwd.param("dep.rel_b")?,
            },
            n,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(g: &Graph, n: usize, d: usize) -> (Var, Var, Var, Var, Var) {
        let rows: Vec<Vec<f64>> = (0..=n)
            .map(|i| (0..d).map(|a| ((i * d + a) as f64 * 0.37).sin()).collect())
            .collect();
        let x = g.constant(Tensor::from_rows(&rows).unwrap());
        let root = g.constant(Tensor::vector(vec![0.1; d]));
        let w = g.constant(Tensor::identity(d));
        let b = g.constant(Tensor::vector(vec![0.05; d]));
        (x, x, root, w, b)
    }

    #[test]
    fn single_token_must_attach_to_root() {
        let g = Graph::new();
        let (dep, head, root, w, b) = setup(&g, 1, 3);
        let full = arc_scores(&g, dep, head, root, w, b, 0).unwrap();
        let fv = g.value(full);
        assert_eq!(fv.shape(), &[2, 2]);
        assert_eq!(fv.get2(0, 1), f64::NEG_INFINITY);
        assert_eq!(fv.get2(1, 1), f64::NEG_INFINITY);
        let arc = g.slice_rows(full, 0..1).unwrap();
        let loss = g.cross_entropy(arc, &[0]).unwrap();
        assert_eq!(g.value(loss).item(), 0.0);
        let rel = Tensor::zeros(&[1, 2, 3]);
        assert_eq!(greedy_dep_decode(&g.value(arc), &rel)[0].head, 0);
    }

    #[test]
    fn self_attachment_is_never_decoded() {
        let arc = Tensor::from_rows(&[
            vec![0.0, f64::NEG_INFINITY, 1.0, 0.0],
            vec![0.0, 5.0, f64::NEG_INFINITY, 0.0],
            vec![0.0, 5.0, 0.0, f64::NEG_INFINITY],
        ])
        .unwrap();
        let rel = Tensor::zeros(&[3, 4, 2]);
        let heads: Vec<usize> = greedy_dep_decode(&arc, &rel).iter().map(|a| a.head).collect();
        assert_eq!(heads, vec![2, 1, 1]);
    }

    #[test]
    fn dominant_column_attracts_every_token() {
        let mut rows = vec![vec![0.0; 4]; 3];
        for (i, row) in rows.iter_mut().enumerate() {
            row[3] = 10.0;
            row[i + 1] = f64::NEG_INFINITY;
        }
        let arc = Tensor::from_rows(&rows).unwrap();
        let heads: Vec<usize> = greedy_dep_decode(&arc, &Tensor::zeros(&[3, 4, 1]))
            .iter()
            .map(|a| a.head)
            .collect();
        assert_eq!(heads, vec![3, 3, 0]);
    }

    #[test]
    fn bad_gold_heads_are_errors() {
        let mut store = ParameterStore::new(3);
        let head = DepHead {
            arc_mlp: MlpSpec::new(vec![4], Default::default()),
            rel_mlp: MlpSpec::new(vec![3], Default::default()),
            relations: 2,
        };
        head.init(&mut store, 5).unwrap();
        let g = Graph::new();
        let fwd = Forward::eval(&g, &store);
        let states = g.constant(Tensor::filled(&[3, 5], 0.3));
        let scores = head.forward(&fwd, states, 1).unwrap();
        assert_eq!(g.shape(scores.arc), vec![2, 3]);
        assert!(dep_loss(&g, &scores, &[Some(3), None], &[None, None]).is_err());
        assert!(dep_loss(&g, &scores, &[Some(1), None], &[None, None]).is_err());
        assert!(dep_loss(&g, &scores, &[None, None], &[None, None]).unwrap().is_none());
        assert!(dep_loss(&g, &scores, &[Some(2), Some(0)], &[Some(1), None]).unwrap().is_some());
        assert_eq!(scores.rel_tensor(&g).unwrap().shape(), &[2, 3, 2]);
    }
}
