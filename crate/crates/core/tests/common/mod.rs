//! Reference computations written with plain loops over `Vec<f64>`. They
//! share no code with the library beyond the types used to pass data in.
#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sacti_core::autodiff::Tensor;
use sacti_core::encoder::EncoderConfig;
use sacti_core::model::ModelConfig;
use sacti_core::nn::{Activation, MlpSpec};
use sacti_core::train::TrainConfig;

pub mod grad;

pub type Mat = Vec<Vec<f64>>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_mat(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat {
    (0..rows)
        .map(|_| (0..cols).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect()
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

pub fn tensor(m: &Mat) -> Tensor {
    Tensor::from_rows(m).unwrap()
}

pub fn flat(t: &Tensor) -> Vec<f64> {
    t.data().to_vec()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            if x == y {
                0.0
            } else {
                (x - y).abs()
            }
        })
        .fold(0.0, f64::max)
}

pub fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for &v in row {
        s += (v - m).exp();
    }
    m + s.ln()
}

pub fn log_softmax(row: &[f64]) -> Vec<f64> {
    let l = log_sum_exp(row);
    row.iter().map(|v| v - l).collect()
}

pub fn softmax(row: &[f64]) -> Vec<f64> {
    log_softmax(row).iter().map(|v| v.exp()).collect()
}

/// `s_i = Σ_ab z_i[a] U[a][b] z_c[b] + Σ_a q[a] z_i[a]`, `z` holding n+1 rows.
pub fn pair_scores(z: &Mat, u: &Mat, q: &[f64]) -> Vec<f64> {
    let n = z.len() - 1;
    let zc = &z[n];
    let d = zc.len();
    (0..n)
        .map(|i| {
            let mut s = 0.0;
            for a in 0..d {
                for b in 0..d {
                    s += z[i][a] * u[a][b] * zc[b];
                }
                s += q[a] * z[i][a];
            }
            s
        })
        .collect()
}

pub fn full_pair_scores(z: &Mat, u: &Mat, q: &[f64]) -> Mat {
    let d = z[0].len();
    z.iter()
        .map(|zi| {
            z.iter()
                .map(|zj| {
                    let mut s = 0.0;
                    for a in 0..d {
                        for b in 0..d {
                            s += zi[a] * u[a][b] * zj[b];
                        }
                        s += q[a] * zi[a];
                    }
                    s
                })
                .collect()
        })
        .collect()
}

/// `u[k]` is `d × d`, `q[k]` has `2d` entries.
pub fn label_scores(z: &Mat, u: &[Mat], q: &Mat, b: &[f64]) -> Mat {
    let n = z.len() - 1;
    let zc = &z[n];
    let d = zc.len();
    (0..n)
        .map(|i| {
            (0..u.len())
                .map(|k| {
                    let mut s = b[k];
                    for x in 0..d {
                        for y in 0..d {
                            s += z[i][x] * u[k][x][y] * zc[y];
                        }
                        s += q[k][x] * z[i][x] + q[k][d + x] * zc[x];
                    }
                    s
                })
                .collect()
        })
        .collect()
}

pub fn sacti_loss(attach_logp: &[f64], r: &Mat, gold: usize) -> f64 {
    let mut total = 0.0;
    for (i, row) in r.iter().enumerate() {
        total += attach_logp[i] + log_softmax(row)[gold];
    }
    -total
}

pub fn binary_attach(scores: &[f64]) -> Vec<f64> {
    // log(e^s / (e^s + e^0))
    scores.iter().map(|&s| s - log_sum_exp(&[s, 0.0])).collect()
}

pub fn full_row_attach(full: &Mat) -> Vec<f64> {
    let n = full.len() - 1;
    (0..n)
        .map(|i| {
            let others: Vec<f64> = (0..=n).filter(|&j| j != i).map(|j| full[i][j]).collect();
            full[i][n] - log_sum_exp(&others)
        })
        .collect()
}

/// Brute-force vote: per-row argmax (first maximal), plurality, then the
/// largest summed log-softmax within `eps`, then the smallest id.
pub fn vote(r: &Mat, eps: f64) -> (usize, Vec<f64>) {
    let k = r[0].len();
    let mut tally: BTreeMap<usize, usize> = BTreeMap::new();
    for row in r {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let choice = row.iter().position(|&v| v == max).unwrap();
        *tally.entry(choice).or_default() += 1;
    }
    let sums: Vec<f64> = (0..k)
        .map(|j| r.iter().map(|row| log_softmax(row)[j]).sum())
        .collect();
    let top = *tally.values().max().unwrap();
    let leaders: Vec<usize> = (0..k).filter(|j| tally.get(j) == Some(&top)).collect();
    let best = leaders.iter().map(|&j| sums[j]).fold(f64::NEG_INFINITY, f64::max);
    let winner = *leaders.iter().filter(|&&j| sums[j] >= best - eps).min().unwrap();
    let share = (0..k)
        .map(|j| *tally.get(&j).unwrap_or(&0) as f64 / r.len() as f64)
        .collect();
    (winner, share)
}

pub struct ClassOracle {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub struct MetricsOracle {
    pub accuracy: f64,
    pub macro_p: f64,
    pub macro_r: f64,
    pub macro_f1: f64,
    pub classes: Vec<ClassOracle>,
    pub confusion: Vec<Vec<usize>>,
}

pub fn metrics(gold: &[usize], pred: &[usize], k: usize) -> MetricsOracle {
    let n = gold.len();
    let accuracy = gold.iter().zip(pred).filter(|(g, p)| g == p).count() as f64 / n as f64;
    let mut classes = Vec::new();
    for c in 0..k {
        let tp = (0..n).filter(|&i| gold[i] == c && pred[i] == c).count() as f64;
        let fp = (0..n).filter(|&i| gold[i] != c && pred[i] == c).count() as f64;
        let fn_ = (0..n).filter(|&i| gold[i] == c && pred[i] != c).count() as f64;
        let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let recall = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
        // F1 as the harmonic form 2TP / (2TP + FP + FN).
        let f1 = if tp > 0.0 { 2.0 * tp / (2.0 * tp + fp + fn_) } else { 0.0 };
        classes.push(ClassOracle { precision, recall, f1 });
    }
    let mean = |f: &dyn Fn(&ClassOracle) -> f64| classes.iter().map(f).sum::<f64>() / k as f64;
    let macro_p = mean(&|c| c.precision);
    let macro_r = mean(&|c| c.recall);
    let macro_f1 = mean(&|c| c.f1);
    let mut confusion = vec![vec![0; k]; k];
    for i in 0..n {
        confusion[gold[i]][pred[i]] += 1;
    }
    MetricsOracle {
        accuracy,
        macro_p,
        macro_r,
        macro_f1,
        classes,
        confusion,
    }
}

/// κ = (p_o − p_e) / (1 − p_e) from explicit category counts.
pub fn kappa<T: Ord + Clone>(a: &[T], b: &[T]) -> f64 {
    let n = a.len() as f64;
    let mut cats: Vec<T> = a.iter().chain(b).cloned().collect();
    cats.sort();
    cats.dedup();
    let po = a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / n;
    let mut pe = 0.0;
    for c in &cats {
        let ca = a.iter().filter(|x| *x == c).count() as f64;
        let cb = b.iter().filter(|x| *x == c).count() as f64;
        pe += (ca / n) * (cb / n);
    }
    if pe == 1.0 {
        1.0
    } else {
        (po - pe) / (1.0 - pe)
    }
}

/// Masked arc scores with candidate rows `[root; head[0..n]]`.
pub fn arc_scores(dep: &Mat, head: &Mat, root: &[f64], w: &Mat, b: &[f64], compound: usize) -> Mat {
    let n = dep.len() - 1;
    let mut cand = vec![root.to_vec()];
    cand.extend(head[..n].iter().cloned());
    let d = root.len();
    (0..=n)
        .map(|i| {
            (0..=n)
                .map(|j| {
                    let own = if i < n { i } else { compound };
                    if j == own + 1 {
                        return f64::NEG_INFINITY;
                    }
                    let mut s = 0.0;
                    for x in 0..d {
                        for y in 0..d {
                            s += dep[i][x] * w[x][y] * cand[j][y];
                        }
                        s += b[x] * cand[j][x];
                    }
                    s
                })
                .collect()
        })
        .collect()
}

/// Mean negative log-likelihood of `targets` over rows with a target.
pub fn masked_ce(logits: &Mat, targets: &[Option<usize>]) -> Option<f64> {
    let mut total = 0.0;
    let mut count = 0;
    for (row, t) in logits.iter().zip(targets) {
        if let Some(t) = t {
            total -= log_softmax(row)[*t];
            count += 1;
        }
    }
    (count > 0).then(|| total / count as f64)
}

/// Mean of the piece rows in each span.
pub fn span_average(pieces: &Mat, spans: &[std::ops::Range<usize>]) -> Mat {
    spans
        .iter()
        .map(|s| {
            let d = pieces[0].len();
            let mut acc = vec![0.0; d];
            for p in s.clone() {
                for a in 0..d {
                    acc[a] += pieces[p][a];
                }
            }
            acc.iter().map(|v| v / s.len() as f64).collect()
        })
        .collect()
}

/// The 2-layer, 64-dimensional configuration used for convergence runs.
pub fn tiny_train_config() -> TrainConfig {
    TrainConfig {
        epochs: 200,
        batch_size: 8,
        dropout: 0.1,
        lr: 0.001,
        eval_every: 5,
        patience: Some(2),
        seed: 1,
        model: ModelConfig {
            encoder: EncoderConfig {
                layers: 2,
                model_dim: 64,
                heads: 4,
                ff_dim: 128,
                max_pieces: 64,
                feature_layer: None,
            },
            subword_vocab: 60,
            ..ModelConfig::default()
        },
        ..TrainConfig::default()
    }
}

/// A much smaller model for tests that only need the plumbing to run.
pub fn micro_train_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 4,
        dropout: 0.1,
        lr: 0.01,
        seed: 5,
        model: ModelConfig {
            encoder: EncoderConfig {
                layers: 1,
                model_dim: 8,
                heads: 2,
                ff_dim: 8,
                max_pieces: 64,
                feature_layer: None,
            },
            subword_vocab: 50,
            pair_mlp: MlpSpec::new(vec![6], Activation::Tanh),
            label_mlp: MlpSpec::new(vec![6], Activation::Tanh),
            arc_mlp: MlpSpec::new(vec![4], Activation::Tanh),
            rel_mlp: MlpSpec::new(vec![4], Activation::Tanh),
            ..ModelConfig::default()
        },
        ..TrainConfig::default()
    }
}

/// Directory holding the released `train.jsonl`, `dev.jsonl` and
/// `test.jsonl` base splits, from `SACTI_BASE_DIR` or `data/sacti-base` at
/// the workspace root.
pub fn base_split_dir() -> std::path::PathBuf {
    match std::env::var_os("SACTI_BASE_DIR") {
        Some(dir) => dir.into(),
        None => std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/sacti-base"),
    }
}

/// The three base splits, or `None` when any file is missing.
pub fn load_base_splits() -> Option<Vec<(&'static str, Vec<sacti_core::text::ContextInstance>)>> {
    let dir = base_split_dir();
    let mut out = Vec::new();
    for name in ["train", "dev", "test"] {
        let path = dir.join(format!("{name}.jsonl"));
        if !path.is_file() {
            return None;
        }
        let data = sacti_core::text::load_jsonl_dataset(&path)
            .unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        out.push((name, data));
    }
    Some(out)
}

pub fn fixture(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}
