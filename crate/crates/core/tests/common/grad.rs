//! Central-difference checks over random shapes for every tape op and
//! every head. Each case returns the worst relative error it saw.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sacti_core::autodiff::{Graph, ParameterStore, Tensor, TensorError, Var};
use sacti_core::encoder::{Encoder, EncoderConfig};
use sacti_core::gradcheck::{check_gradients, relative_error};
use sacti_core::heads::{
    attachment_log_probs, dep_loss, label_scores, pair_scores, sacti_loss, tagging_loss, AttachmentNorm, DepHead,
    TagTask, TokenClassifier,
};
use sacti_core::model::{total_loss, LossWeights, SactiModel};
use sacti_core::nn::{Activation, Forward, MlpSpec};

pub const H: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-3;

pub struct CaseResult {
    pub name: &'static str,
    pub shapes: usize,
    pub max_rel_err: f64,
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Contracts `x` with a fixed pseudo-random weight so every output entry
/// influences the scalar.
fn weighted_sum(g: &Graph, x: Var, seed: u64) -> Result<Var, TensorError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = rand_tensor(&mut rng, &g.shape(x));
    Ok(g.sum(g.mul(x, g.constant(w))?))
}

fn random_spans(rng: &mut ChaCha8Rng, tokens: usize) -> (usize, Vec<Range<usize>>) {
    let mut spans = Vec::new();
    let mut at = 0;
    for _ in 0..tokens {
        let len = rng.random_range(1..=3);
        spans.push(at..at + len);
        at += len;
    }
    (at, spans)
}

fn run<S, F>(name: &'static str, shapes: usize, seed: u64, mut setup: S) -> CaseResult
where
    S: FnMut(&mut ChaCha8Rng) -> (Vec<Tensor>, F),
    F: Fn(&Graph, &[Var]) -> Result<Var, TensorError>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..shapes {
        let (inputs, f) = setup(&mut rng);
        let report = check_gradients(&inputs, H, f).unwrap_or_else(|e| panic!("{name}: {e}"));
        worst = worst.max(report.max_rel_err);
    }
    CaseResult {
        name,
        shapes,
        max_rel_err: worst,
    }
}

fn dims(rng: &mut ChaCha8Rng) -> (usize, usize) {
    (rng.random_range(1..=5), rng.random_range(1..=6))
}

pub fn op_cases(shapes: usize) -> Vec<CaseResult> {
    let mut out = Vec::new();
    out.push(run("matmul", shapes, 1, |r| {
        let (m, k) = dims(r);
        let p = r.random_range(1..=4);
        (vec![rand_tensor(r, &[m, k]), rand_tensor(r, &[k, p])], |g: &Graph, v: &[Var]| {
            weighted_sum(g, g.matmul(v[0], v[1])?, 11)
        })
    }));
    out.push(run("transpose", shapes, 2, |r| {
        let (m, k) = dims(r);
        (vec![rand_tensor(r, &[m, k])], |g: &Graph, v: &[Var]| weighted_sum(g, g.transpose(v[0])?, 12))
    }));
    out.push(run("add", shapes, 3, |r| {
        let (m, k) = dims(r);
        (vec![rand_tensor(r, &[m, k]), rand_tensor(r, &[m, k])], |g: &Graph, v: &[Var]| {
            weighted_sum(g, g.add(v[0], v[1])?, 13)
        })
    }));
    out.push(run("add_row", shapes, 4, |r| {
        let (m, k) = dims(r);
        (vec![rand_tensor(r, &[m, k]), rand_tensor(r, &[k])], |g: &Graph, v: &[Var]| {
            weighted_sum(g, g.add_row(v[0], v[1])?, 14)
        })
    }));
    out.push(run("mul", shapes, 5, |r| {
        let (m, k) = dims(r);
        (vec![rand_tensor(r, &[m, k]), rand_tensor(r, &[m, k])], |g: &Graph, v: &[Var]| {
            weighted_sum(g, g.mul(v[0], v[1])?, 15)
        })
    }));
    out.push(run("scale", shapes, 6, |r| {
        let (m, k) = dims(r);
        (vec![rand_tensor(r, &[m, k])], |g: &Graph, v: &[Var]| weighted_sum(g, g.scale(v[0], -1.7), 16))
    }));
    out.push(run("tanh", shapes, 7, |r| {
        let (m, k) = dims(r);
        (vec![rand_tensor(r, &[m, k])], |g: &Graph, v: &[Var]| weighted_sum(g, g.tanh(v[0]), 17))
    }));
    out.push(run("relu", shapes, 8, |r| {
        let (m, k) = dims(r);
        (vec![rand_tensor(r, &[m, k])], |g: &Graph, v: &[Var]| weighted_sum(g, g.relu(v[0]), 18))
    }));
    out.push(run("log_sigmoid", shapes, 9, |r| {
        let (m, k) = dims(r);
        let t = rand_tensor(r, &[m, k]);
        let wide = Tensor::new(t.shape().to_vec(), t.data().iter().map(|x| x * 8.0).collect()).unwrap();
        (vec![wide], |g: &Graph, v: &[Var]| weighted_sum(g, g.log_sigmoid(v[0]), 19))
    }));
    out.push(run("sum", shapes, 10, |r| {
        let (m, k) = dims(r);
        (vec![rand_tensor(r, &[m, k])], |g: &Graph, v: &[Var]| Ok(g.sum(g.tanh(v[0]))))
    }));
    out.push(run("mean", shapes, 11, |r| {
        let (m, k) = dims(r);
        (vec![rand_tensor(r, &[m, k])], |g: &Graph, v: &[Var]| Ok(g.mean(g.tanh(v[0]))))
    }));
    out.push(run("row_sums", shapes, 12, |r| {
        let (m, k) = dims(r);
        (vec![rand_tensor(r, &[m, k])], |g: &Graph, v: &[Var]| weighted_sum(g, g.row_sums(v[0])?, 22))
    }));
    out.push(run("softmax", shapes, 13, |r| {
        let (m, k) = dims(r);
        (vec![rand_tensor(r, &[m, k])], |g: &Graph, v: &[Var]| weighted_sum(g, g.softmax(v[0]), 23))
    }));
    out.push(run("log_softmax", shapes, 14, |r| {
        let (m, k) = dims(r);
        (vec![rand_tensor(r, &[m, k])], |g: &Graph, v: &[Var]| weighted_sum(g, g.log_softmax(v[0]), 24))
    }));
    out.push(run("cross_entropy", shapes, 15, |r| {
        let (m, k) = dims(r);
        let targets: Vec<usize> = (0..m).map(|_| r.random_range(0..k)).collect();
        (vec![rand_tensor(r, &[m, k])], move |g: &Graph, v: &[Var]| g.cross_entropy(v[0], &targets))
    }));
    out.push(run("pick", shapes, 16, |r| {
        let (m, k) = dims(r);
        let idx: Vec<usize> = (0..m).map(|_| r.random_range(0..k)).collect();
        (vec![rand_tensor(r, &[m, k])], move |g: &Graph, v: &[Var]| weighted_sum(g, g.pick(v[0], &idx)?, 26))
    }));
    out.push(run("gather_rows", shapes, 17, |r| {
        let (m, k) = dims(r);
        let idx: Vec<usize> = (0..r.random_range(1..=6)).map(|_| r.random_range(0..m)).collect();
        (vec![rand_tensor(r, &[m, k])], move |g: &Graph, v: &[Var]| {
            weighted_sum(g, g.gather_rows(v[0], &idx)?, 27)
        })
    }));
    out.push(run("concat_rows", shapes, 18, |r| {
        let (m, k) = dims(r);
        let m2 = r.random_range(1..=3);
        (vec![rand_tensor(r, &[m, k]), rand_tensor(r, &[m2, k])], |g: &Graph, v: &[Var]| {
            weighted_sum(g, g.concat_rows(&[v[0], v[1], v[0]])?, 28)
        })
    }));
    out.push(run("concat_cols", shapes, 19, |r| {
        let (m, k) = dims(r);
        let k2 = r.random_range(1..=3);
        (vec![rand_tensor(r, &[m, k]), rand_tensor(r, &[m, k2])], |g: &Graph, v: &[Var]| {
            weighted_sum(g, g.concat_cols(&[v[0], v[1]])?, 29)
        })
    }));
    out.push(run("slice_rows", shapes, 20, |r| {
        let (m, k) = dims(r);
        let start = r.random_range(0..m);
        let end = r.random_range(start + 1..=m);
        (vec![rand_tensor(r, &[m, k])], move |g: &Graph, v: &[Var]| {
            weighted_sum(g, g.slice_rows(v[0], start..end)?, 30)
        })
    }));
    out.push(run("slice_cols", shapes, 21, |r| {
        let (m, k) = dims(r);
        let start = r.random_range(0..k);
        let end = r.random_range(start + 1..=k);
        (vec![rand_tensor(r, &[m, k])], move |g: &Graph, v: &[Var]| {
            weighted_sum(g, g.slice_cols(v[0], start..end)?, 31)
        })
    }));
    out.push(run("reshape", shapes, 22, |r| {
        let (m, k) = dims(r);
        (vec![rand_tensor(r, &[m, k])], move |g: &Graph, v: &[Var]| {
            weighted_sum(g, g.tanh(g.reshape(v[0], &[k, m])?), 32)
        })
    }));
    out.push(run("repeat_rows", shapes, 23, |r| {
        let (m, k) = dims(r);
        (vec![rand_tensor(r, &[k])], move |g: &Graph, v: &[Var]| {
            weighted_sum(g, g.repeat_rows(v[0], m)?, 33)
        })
    }));
    out.push(run("span_mean", shapes, 24, |r| {
        let (tokens, k) = dims(r);
        let (pieces, spans) = random_spans(r, tokens);
        (vec![rand_tensor(r, &[pieces, k])], move |g: &Graph, v: &[Var]| {
            weighted_sum(g, g.span_mean(v[0], &spans)?, 34)
        })
    }));
    out.push(run("masked_fill", shapes, 25, |r| {
        let (m, k) = dims(r);
        let mask: Vec<bool> = (0..m * k).map(|_| r.random_bool(0.3)).collect();
        (vec![rand_tensor(r, &[m, k])], move |g: &Graph, v: &[Var]| {
            weighted_sum(g, g.softmax(g.masked_fill(v[0], &mask, -2.5)?), 35)
        })
    }));
    out.push(run("dropout", shapes, 26, |r| {
        let (m, k) = dims(r);
        let seed = r.random::<u64>();
        (vec![rand_tensor(r, &[m, k])], move |g: &Graph, v: &[Var]| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            weighted_sum(g, g.dropout(v[0], 0.4, true, &mut rng)?, 36)
        })
    }));
    out.push(run("layer_norm", shapes, 27, |r| {
        let m = r.random_range(1..=5);
        let k = r.random_range(2..=6);
        (
            vec![rand_tensor(r, &[m, k]), rand_tensor(r, &[k]), rand_tensor(r, &[k])],
            |g: &Graph, v: &[Var]| weighted_sum(g, g.layer_norm(v[0], v[1], v[2], 1e-5)?, 37),
        )
    }));
    out
}

fn store_with<F: FnOnce(&mut ParameterStore)>(seed: u64, f: F) -> ParameterStore {
    let mut store = ParameterStore::new(seed);
    f(&mut store);
    store
}

fn random_targets(r: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<Option<usize>> {
    let mut t: Vec<Option<usize>> = (0..n)
        .map(|_| r.random_bool(0.7).then(|| r.random_range(0..k)))
        .collect();
    t[0] = Some(r.random_range(0..k));
    t
}

pub fn head_cases(shapes: usize) -> Vec<CaseResult> {
    let mut out = Vec::new();
    out.push(run("word pooling", shapes, 101, |r| {
        let (tokens, k) = dims(r);
        let (pieces, spans) = random_spans(r, tokens);
        (vec![rand_tensor(r, &[pieces, k])], move |g: &Graph, v: &[Var]| {
            let pooled = g.span_mean(g.tanh(v[0]), &spans)?;
            weighted_sum(g, pooled, 41)
        })
    }));
    out.push(run("pair scores", shapes, 102, |r| {
        let (n, d) = dims(r);
        (
            vec![rand_tensor(r, &[n + 1, d]), rand_tensor(r, &[d, d]), rand_tensor(r, &[d])],
            |g: &Graph, v: &[Var]| weighted_sum(g, pair_scores(g, v[0], v[1], v[2])?, 42),
        )
    }));
    for (name, norm, seed) in [
        ("attachment (binary)", AttachmentNorm::Binary, 103),
        ("attachment (full row)", AttachmentNorm::FullRow, 104),
    ] {
        out.push(run(name, shapes, seed, move |r| {
            let (n, d) = dims(r);
            (
                vec![rand_tensor(r, &[n + 1, d]), rand_tensor(r, &[d, d]), rand_tensor(r, &[d])],
                move |g: &Graph, v: &[Var]| Ok(g.sum(attachment_log_probs(g, v[0], v[1], v[2], norm)?)),
            )
        }));
    }
    out.push(run("label scores", shapes, 105, |r| {
        let (n, d) = dims(r);
        let k = r.random_range(2..=4);
        (
            vec![
                rand_tensor(r, &[n + 1, d]),
                rand_tensor(r, &[k, d, d]),
                rand_tensor(r, &[k, 2 * d]),
                rand_tensor(r, &[k]),
            ],
            |g: &Graph, v: &[Var]| weighted_sum(g, label_scores(g, v[0], v[1], v[2], v[3])?, 45),
        )
    }));
    out.push(run("compound-type loss", shapes, 106, |r| {
        let (n, d) = dims(r);
        let k = r.random_range(2..=4);
        let gold = r.random_range(0..k);
        (
            vec![
                rand_tensor(r, &[n + 1, d]),
                rand_tensor(r, &[d, d]),
                rand_tensor(r, &[d]),
                rand_tensor(r, &[k, d, d]),
                rand_tensor(r, &[k, 2 * d]),
                rand_tensor(r, &[k]),
            ],
            move |g: &Graph, v: &[Var]| {
                let attach = attachment_log_probs(g, v[0], v[1], v[2], AttachmentNorm::Binary)?;
                let labels = label_scores(g, v[0], v[3], v[4], v[5])?;
                sacti_loss(g, attach, labels, gold)
            },
        )
    }));
    for (name, task, seed) in [
        ("morph tagging", TagTask::Morph, 107),
        ("case tagging", TagTask::Case, 108),
        ("lemma tagging", TagTask::Lemma, 109),
        ("relation tagging", TagTask::Relation, 110),
    ] {
        out.push(run(name, shapes, seed, move |r| {
            let (n, d) = dims(r);
            let classes = r.random_range(2..=5);
            let head = TokenClassifier { task, classes };
            let store = store_with(r.random(), |s| head.init(s, d).unwrap());
            let targets = random_targets(r, n, classes);
            (vec![rand_tensor(r, &[n + 1, d])], move |g: &Graph, v: &[Var]| {
                let fwd = Forward::eval(g, &store);
                let logits = head.logits(&fwd, v[0])?;
                Ok(tagging_loss(g, logits, &targets)?.expect("one supervised token"))
            })
        }));
    }
    out.push(run("dependency", shapes, 111, |r| {
        let n = r.random_range(2..=5);
        let d = r.random_range(2..=6);
        let relations = r.random_range(1..=3);
        let head = DepHead {
            arc_mlp: MlpSpec::new(vec![r.random_range(2..=4)], Activation::Tanh),
            rel_mlp: MlpSpec::new(vec![r.random_range(2..=4)], Activation::Tanh),
            relations,
        };
        let store = store_with(r.random(), |s| head.init(s, d).unwrap());
        let compound = r.random_range(0..n);
        let heads: Vec<Option<usize>> = (0..n)
            .map(|i| {
                let mut h = r.random_range(0..=n);
                if h == i + 1 {
                    h = 0;
                }
                Some(h)
            })
            .collect();
        let rels: Vec<Option<usize>> = (0..n)
            .map(|_| r.random_bool(0.8).then(|| r.random_range(0..relations)))
            .collect();
        (vec![rand_tensor(r, &[n + 1, d])], move |g: &Graph, v: &[Var]| {
            let fwd = Forward::eval(g, &store);
            let scores = head.forward(&fwd, v[0], compound)?;
            Ok(dep_loss(g, &scores, &heads, &rels)?.expect("supervised"))
        })
    }));
    out.push(run("encoder", shapes, 112, |r| {
        let tokens = r.random_range(1..=4);
        let (pieces, spans) = random_spans(r, tokens);
        let encoder = Encoder::new(EncoderConfig {
            layers: r.random_range(1..=2),
            model_dim: 4,
            heads: 2,
            ff_dim: 6,
            max_pieces: 16,
            feature_layer: None,
        })
        .unwrap();
        let store = store_with(r.random(), |s| encoder.init_params(s, 10).unwrap());
        (vec![rand_tensor(r, &[pieces, 4])], move |g: &Graph, v: &[Var]| {
            let fwd = Forward::eval(g, &store);
            let out = encoder
                .encode_embedded(&fwd, v[0], &spans)
                .map_err(|e| TensorError::InvalidArgument(e.to_string()))?;
            weighted_sum(g, out.token_states, 52)
        })
    }));
    out
}

/// Perturbs stored parameters directly, so the check covers the full model
/// path from embeddings to the weighted multi-task loss.
pub fn model_parameter_case(model: &SactiModel, ex: &sacti_core::model::Example, samples: usize, seed: u64) -> f64 {
    let weights = LossWeights {
        morph: 1.0,
        dep: 0.5,
        aux: 1.0,
    };
    let loss_of = |store: &ParameterStore| -> (f64, Graph) {
        let g = Graph::new();
        let v = {
            let fwd = Forward::eval(&g, store);
            let out = model.forward(&fwd, ex).unwrap();
            let losses = model.losses(&g, &out, ex).unwrap();
            let total = total_loss(&g, &losses, &weights).unwrap();
            g.backward(total).unwrap();
            g.value(total).item()
        };
        (v, g)
    };
    let mut store = model.store.clone();
    store.zero_grads();
    let (_, g) = loss_of(&store);
    store.accumulate_grads(&g).unwrap();
    let analytic = store.clone();

    let names: Vec<String> = store.names().map(str::to_string).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for name in &names {
        let numel = store.get(name).unwrap().numel();
        for _ in 0..samples.min(numel) {
            let k = rng.random_range(0..numel);
            let orig = store.get(name).unwrap().data()[k];
            store.parameter_mut(name).unwrap().value.data_mut()[k] = orig + H;
            let plus = loss_of(&store).0;
            store.parameter_mut(name).unwrap().value.data_mut()[k] = orig - H;
            let minus = loss_of(&store).0;
            store.parameter_mut(name).unwrap().value.data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * H);
            let a = analytic.parameter(name).unwrap().grad[k];
            worst = worst.max(relative_error(a, numeric));
        }
    }
    worst
}
