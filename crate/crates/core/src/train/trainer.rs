use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::metrics::{compute_metrics, ConfusionMatrix, MetricsReport};
use crate::autodiff::{Graph, Optimizer, TensorError};
use crate::error::{Error, Result};
use crate::model::{total_loss, SactiModel};
use crate::nn::Forward;
use crate::text::{ContextInstance, LabelVocab, SubwordVocab, TaskVocabs};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DevSummary {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
}

impl From<&MetricsReport> for DevSummary {
    fn from(m: &MetricsReport) -> Self {
        DevSummary {
            accuracy: m.accuracy,
            macro_precision: m.macro_precision,
            macro_recall: m.macro_recall,
            macro_f1: m.macro_f1,
        }
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Optimizer steps taken so far.
    pub steps: u64,
    /// Mean loss per head over the examples where the head was supervised,
    /// plus the weighted `total`.
    pub losses: BTreeMap<String, f64>,
    pub dev: Option<DevSummary>,
    /// Whether this epoch produced the kept checkpoint.
    pub best: bool,
}

pub enum TrainEvent<'a> {
    /// A batch about to be used for one update, exactly as the model sees it.
    Batch {
        epoch: usize,
        step: u64,
        instances: Vec<&'a ContextInstance>,
    },
    Epoch(&'a EpochLog),
}

pub struct TrainOutcome {
    pub model: SactiModel,
    pub log: Vec<EpochLog>,
    /// Epoch of the kept parameters; `0` means the initialization.
    pub best_epoch: usize,
    pub best_dev_macro_f1: Option<f64>,
}

pub struct Evaluation {
    pub metrics: MetricsReport,
    pub confusion: ConfusionMatrix,
    pub predictions: Vec<usize>,
}

/// Builds the vocabularies from the training data and initializes a model.
pub fn build_model(train: &[ContextInstance], config: &TrainConfig) -> Result<SactiModel> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyDataset("train"));
    }
    for inst in train {
        inst.validate()?;
    }
    let spec = config.model_spec();
    let viewed: Vec<ContextInstance> = train.iter().map(|i| spec.context.view(i).into_owned()).collect();
    let corpus = viewed.iter().flat_map(|i| i.tokens.iter().map(String::as_str));
    let vocab = SubwordVocab::train(corpus, config.model.subword_vocab)?;
    let mut labels = TaskVocabs::from_instances(&viewed);
    if let Some(names) = &config.labels {
        let fixed = LabelVocab::from_names(names.iter().cloned())?;
        if let Some(missing) = labels.semantic.names().iter().find(|l| !fixed.contains(l)) {
            return Err(Error::LabelSpace(format!(
                "training label `{missing}` is not in the configured label set"
            )));
        }
        labels.semantic = fixed;
    }
    SactiModel::new(spec, vocab, labels, config.seed)
}

pub fn train(train: &[ContextInstance], dev: Option<&[ContextInstance]>, config: &TrainConfig) -> Result<TrainOutcome> {
    train_with(train, dev, config, &mut |_| {})
}

/// Mini-batch training with gradients averaged over each batch. With a dev
/// set, the parameters with the best dev macro-F1 are kept; otherwise the
/// final ones.
pub fn train_with(
    train: &[ContextInstance],
    dev: Option<&[ContextInstance]>,
    config: &TrainConfig,
    on_event: &mut dyn FnMut(TrainEvent<'_>),
) -> Result<TrainOutcome> {
    let mut model = build_model(train, config)?;
    if let Some(d) = dev {
        if d.is_empty() {
            return Err(Error::EmptyDataset("dev"));
        }
    }
    let viewed: Vec<ContextInstance> = train
        .iter()
        .map(|i| model.spec.context.view(i).into_owned())
        .collect();
    let examples = train
        .iter()
        .map(|i| model.prepare(i))
        .collect::<Result<Vec<_>>>()?;
    let optimizer = Optimizer::new(config.optimizer);
    let weights = config.loss_weights();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut log = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, crate::autodiff::ParameterStore)> = None;
    let mut stale = 0;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
        for batch in order.chunks(config.batch_size) {
            let step = model.store.step() + 1;
            on_event(TrainEvent::Batch {
                epoch,
                step,
                instances: batch.iter().map(|&i| &viewed[i]).collect(),
            });
            for &i in batch {
                let g = Graph::new();
                {
                    let fwd = Forward::new(&g, &model.store, true, rng.random()).with_dropout(config.dropout);
                    let out = model.forward(&fwd, &examples[i])?;
                    let losses = model.losses(&g, &out, &examples[i])?;
                    let total = total_loss(&g, &losses, &weights)?;
                    let value = g.value(total).item();
                    if !value.is_finite() {
                        return Err(Error::Diverged {
                            epoch,
                            step: step as usize,
                            message: format!("loss is {value}"),
                        });
                    }
                    for (k, v) in losses.values(&g) {
                        let e = sums.entry(k).or_default();
                        e.0 += v;
                        e.1 += 1;
                    }
                    let e = sums.entry("total".into()).or_default();
                    e.0 += value;
                    e.1 += 1;
                    g.backward(total)?;
                }
                model.store.accumulate_grads(&g)?;
            }
            model.store.scale_grads(1.0 / batch.len() as f64);
            optimizer
                .step(&mut model.store, config.lr)
                .map_err(|e| match e {
                    TensorError::NonFiniteGradient(name) => Error::Diverged {
                        epoch,
                        step: step as usize,
                        message: format!("non-finite gradient in `{name}`"),
                    },
                    other => other.into(),
                })?;
        }

        let mut entry = EpochLog {
            epoch,
            steps: model.store.step(),
            losses: sums.into_iter().map(|(k, (s, c))| (k, s / c as f64)).collect(),
            dev: None,
            best: false,
        };
        if let Some(dev) = dev {
            if epoch % config.eval_every == 0 || epoch == config.epochs {
                let eval = evaluate(&model, dev)?;
                let f1 = eval.metrics.macro_f1;
                entry.dev = Some(DevSummary::from(&eval.metrics));
                if best.as_ref().is_none_or(|(b, _, _)| f1 > *b) {
                    best = Some((f1, epoch, model.store.clone()));
                    entry.best = true;
                    stale = 0;
                } else {
                    stale += 1;
                }
            }
        }
        on_event(TrainEvent::Epoch(&entry));
        log.push(entry);
        if config.patience.is_some_and(|p| stale >= p) {
            break;
        }
    }

    let (best_epoch, best_dev_macro_f1) = match best {
        Some((f1, epoch, store)) => {
            model.store = store;
            (epoch, Some(f1))
        }
        None => (config.epochs, None),
    };
    Ok(TrainOutcome {
        model,
        log,
        best_epoch,
        best_dev_macro_f1,
    })
}

/// Scores voted predictions against gold labels. Every gold label must be
/// in the model's label space.
pub fn evaluate(model: &SactiModel, data: &[ContextInstance]) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::EmptyDataset("evaluation"));
    }
    let mut gold = Vec::with_capacity(data.len());
    let mut predictions = Vec::with_capacity(data.len());
    for inst in data {
        let ex = model.prepare(inst)?;
        let label = ex.label.ok_or_else(|| {
            Error::LabelSpace(format!("gold label `{}` is not known to the model", inst.label))
        })?;
        gold.push(label);
        predictions.push(model.classify(&ex)?.0);
    }
    let (metrics, confusion) = compute_metrics(&gold, &predictions, &model.labels.semantic)?;
    Ok(Evaluation {
        metrics,
        confusion,
        predictions,
    })
}

pub fn write_epoch_log<W: Write>(mut w: W, log: &[EpochLog]) -> Result<()> {
    for entry in log {
        serde_json::to_writer(&mut w, entry)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}
