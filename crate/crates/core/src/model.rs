//! The full multi-task compound classifier: subword encoder, pairwise
//! SaCTI scorer and the auxiliary heads, with prediction reports and
//! checkpoint packing.

use std::borrow::Cow;
use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::autodiff::{Checkpoint, Graph, ParameterStore, Tensor, Var};
use crate::encoder::{attention_heatmap, Encoder, EncoderConfig, EncoderOutput};
use crate::error::{Error, Result};
use crate::heads::{
    dep_loss, greedy_dep_decode, sacti_loss, sacti_pair_heatmap, tagging_loss, vote_decode, AttachmentNorm,
    BiaffineClassifier, DepHead, DepScores, PooledClassifier, SactiScores, TagTask, TokenClassifier,
};
use crate::nn::{Activation, Forward, MlpSpec};
use crate::text::{ContextInstance, InstanceError, LabelVocab, SubwordVocab, TaskVocabs};

impl From<InstanceError> for Error {
    fn from(e: InstanceError) -> Self {
        Error::Input {
            field: e.field,
            reason: e.reason,
        }
    }
}

/// Trainable outputs. `Sacti` is always on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    Sacti,
    Morph,
    Dep,
    Case,
    Lemma,
    Relation,
}

impl Head {
    pub const ALL: [Head; 6] = [Head::Sacti, Head::Morph, Head::Dep, Head::Case, Head::Lemma, Head::Relation];

    pub fn name(self) -> &'static str {
        match self {
            Head::Sacti => "sacti",
            Head::Morph => "morph",
            Head::Dep => "dep",
            Head::Case => "case",
            Head::Lemma => "lemma",
            Head::Relation => "relation",
        }
    }

    pub fn parse(s: &str) -> Option<Head> {
        Head::ALL.into_iter().find(|h| h.name() == s)
    }

    fn tag_task(self) -> Option<TagTask> {
        match self {
            Head::Morph => Some(TagTask::Morph),
            Head::Case => Some(TagTask::Case),
            Head::Lemma => Some(TagTask::Lemma),
            Head::Relation => Some(TagTask::Relation),
            Head::Sacti | Head::Dep => None,
        }
    }
}

impl fmt::Display for Head {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Sorted, deduplicated head list that always contains `Sacti`.
pub fn normalize_heads(heads: &[Head]) -> Vec<Head> {
    let mut out: Vec<Head> = heads.to_vec();
    out.push(Head::Sacti);
    out.sort();
    out.dedup();
    out
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    /// Pairwise biaffine scoring with voting.
    #[default]
    Biaffine,
    /// Single classifier on the appended compound state.
    Pooled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    /// Target number of learned subword pieces.
    pub subword_vocab: usize,
    pub pair_mlp: MlpSpec,
    pub label_mlp: MlpSpec,
    pub arc_mlp: MlpSpec,
    pub rel_mlp: MlpSpec,
    pub tag_mlp: MlpSpec,
    pub attachment: AttachmentNorm,
    pub classifier: ClassifierKind,
    /// Encoder layer whose attention the heatmap shows; the last when unset.
    pub heatmap_layer: Option<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            encoder: EncoderConfig::default(),
            subword_vocab: 2000,
            pair_mlp: MlpSpec::new(vec![64], Activation::Tanh),
            label_mlp: MlpSpec::new(vec![64], Activation::Tanh),
            arc_mlp: MlpSpec::new(vec![64], Activation::Tanh),
            rel_mlp: MlpSpec::new(vec![32], Activation::Tanh),
            tag_mlp: MlpSpec::new(vec![], Activation::Tanh),
            attachment: AttachmentNorm::Binary,
            classifier: ClassifierKind::Biaffine,
            heatmap_layer: None,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        for (name, mlp) in [
            ("pair_mlp", &self.pair_mlp),
            ("label_mlp", &self.label_mlp),
            ("arc_mlp", &self.arc_mlp),
            ("rel_mlp", &self.rel_mlp),
            ("tag_mlp", &self.tag_mlp),
        ] {
            if mlp.hidden.contains(&0) {
                return Err(Error::Config(format!("{name} has a zero-width layer")));
            }
        }
        if let Some(l) = self.heatmap_layer {
            if l >= self.encoder.layers {
                return Err(Error::Config(format!(
                    "heatmap_layer {l} is out of range for {} encoder layers",
                    self.encoder.layers
                )));
            }
        }
        Ok(())
    }
}

/// Whether the classifier sees the sentence or the compound alone.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextMode {
    #[default]
    With,
    /// The compound token is fed as its own one-word context.
    Without,
}

impl ContextMode {
    pub fn view<'a>(self, inst: &'a ContextInstance) -> Cow<'a, ContextInstance> {
        match self {
            ContextMode::With => Cow::Borrowed(inst),
            ContextMode::Without => Cow::Owned(inst.without_context()),
        }
    }
}

/// Everything needed to rebuild the parameter layout and input handling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub model: ModelConfig,
    pub heads: Vec<Head>,
    #[serde(default)]
    pub context: ContextMode,
}

/// An instance turned into ids, with every supervision signal resolved
/// against the model's vocabularies. Unknown auxiliary tags are masked.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub pieces: Vec<u32>,
    pub spans: Vec<Range<usize>>,
    pub compound_index: usize,
    pub label: Option<usize>,
    pub tags: BTreeMap<TagTask, Vec<Option<usize>>>,
    pub heads: Vec<Option<usize>>,
    pub rels: Vec<Option<usize>>,
}

impl Example {
    /// Number of context tokens, excluding the appended compound.
    pub fn len(&self) -> usize {
        self.spans.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub struct Outputs {
    pub encoder: EncoderOutput,
    pub sacti: Option<SactiScores>,
    pub pooled: Option<Var>,
    pub taggers: Vec<(TagTask, Var)>,
    pub dep: Option<DepScores>,
}

/// Per-head losses on one tape. Absent entries are disabled or fully masked.
#[derive(Clone, Debug)]
pub struct Losses {
    pub sacti: Var,
    pub morph: Option<Var>,
    pub dep: Option<Var>,
    pub aux: Vec<(TagTask, Var)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub morph: f64,
    pub dep: f64,
    pub aux: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            morph: 1.0,
            dep: 0.01,
            aux: 1.0,
        }
    }
}

/// `L_sacti + w_morph·L_morph + w_dep·L_dep + w_aux·Σ L_aux`, skipping
/// absent terms.
pub fn total_loss(g: &Graph, losses: &Losses, weights: &LossWeights) -> Result<Var> {
    let mut total = losses.sacti;
    if let Some(m) = losses.morph {
        total = g.add(total, g.scale(m, weights.morph))?;
    }
    if let Some(d) = losses.dep {
        total = g.add(total, g.scale(d, weights.dep))?;
    }
    for &(_, a) in &losses.aux {
        total = g.add(total, g.scale(a, weights.aux))?;
    }
    Ok(total)
}

impl Losses {
    /// Scalar value of every present term, keyed by head name.
    pub fn values(&self, g: &Graph) -> BTreeMap<String, f64> {
        let mut out = BTreeMap::new();
        out.insert("sacti".to_string(), g.value(self.sacti).item());
        if let Some(m) = self.morph {
            out.insert("morph".to_string(), g.value(m).item());
        }
        if let Some(d) = self.dep {
            out.insert("dep".to_string(), g.value(d).item());
        }
        for (t, a) in &self.aux {
            out.insert(t.name().to_string(), g.value(*a).item());
        }
        out
    }
}

/// Prediction input for a single unlabeled compound in context.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictRequest {
    pub tokens: Vec<String>,
    pub compound_index: usize,
}

impl PredictRequest {
    pub fn to_instance(&self) -> Result<ContextInstance> {
        let inst = ContextInstance::new(self.tokens.clone(), self.compound_index, "?");
        inst.validate()?;
        Ok(inst)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairReport {
    pub token: String,
    /// Raw attachment score `s_i`.
    pub score: f64,
    pub vote: String,
    /// Label distribution of this word's pair, in label order.
    pub distribution: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArcReport {
    /// 1-based head, `0` for the root.
    pub head: usize,
    pub relation: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Heatmaps {
    /// Row and column labels: the context tokens then the appended compound.
    pub tokens: Vec<String>,
    /// Row-softmax of the all-pairs attachment scores.
    pub sacti: Option<Vec<Vec<f64>>>,
    /// Row-softmax of the arc scores; column `j` is head `j` (`0` the root).
    pub dependency: Option<Vec<Vec<f64>>>,
    /// Attention of the `heatmap_layer` encoder layer, averaged over heads,
    /// at token level.
    pub attention: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionReport {
    pub tokens: Vec<String>,
    pub compound_index: usize,
    pub label: String,
    pub label_id: usize,
    pub labels: Vec<String>,
    /// Vote share per label.
    pub confidence: BTreeMap<String, f64>,
    /// Mean over pairs of the per-pair label distribution.
    pub mean_probability: BTreeMap<String, f64>,
    pub pairs: Vec<PairReport>,
    pub morph_tags: Option<Vec<String>>,
    pub dependency: Option<Vec<ArcReport>>,
    pub heatmaps: Heatmaps,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SactiModel {
    pub spec: ModelSpec,
    pub vocab: SubwordVocab,
    pub labels: TaskVocabs,
    pub store: ParameterStore,
}

fn tags_of(inst: &ContextInstance, task: TagTask) -> Option<&Vec<String>> {
    match task {
        TagTask::Morph => inst.morph_tags.as_ref(),
        TagTask::Case => inst.case_tags.as_ref(),
        TagTask::Lemma => inst.lemma_tags.as_ref(),
        TagTask::Relation => inst.relation_tags.as_ref(),
    }
}

fn vocab_of(labels: &TaskVocabs, task: TagTask) -> &LabelVocab {
    match task {
        TagTask::Morph => &labels.morph,
        TagTask::Case => &labels.case,
        TagTask::Lemma => &labels.lemma,
        TagTask::Relation => &labels.relation,
    }
}

fn rows_of(t: &Tensor) -> Vec<Vec<f64>> {
    t.to_rows()
}

impl SactiModel {
    pub fn new(spec: ModelSpec, vocab: SubwordVocab, labels: TaskVocabs, seed: u64) -> Result<Self> {
        spec.model.validate()?;
        if labels.semantic.is_empty() {
            return Err(Error::LabelSpace("no semantic labels".into()));
        }
        let spec = ModelSpec {
            heads: normalize_heads(&spec.heads),
            ..spec
        };
        let mut model = SactiModel {
            spec,
            vocab,
            labels,
            store: ParameterStore::new(seed),
        };
        model.init_params()?;
        Ok(model)
    }

    fn encoder(&self) -> Encoder {
        Encoder::new(self.spec.model.encoder.clone()).expect("validated at construction")
    }

    fn biaffine(&self) -> BiaffineClassifier {
        BiaffineClassifier {
            pair_mlp: self.spec.model.pair_mlp.clone(),
            label_mlp: self.spec.model.label_mlp.clone(),
            labels: self.labels.semantic.len(),
        }
    }

    fn pooled(&self) -> PooledClassifier {
        PooledClassifier {
            mlp: self.spec.model.label_mlp.clone(),
            labels: self.labels.semantic.len(),
        }
    }

    fn dep_head(&self) -> DepHead {
        DepHead {
            arc_mlp: self.spec.model.arc_mlp.clone(),
            rel_mlp: self.spec.model.rel_mlp.clone(),
            relations: self.labels.dep_rel.len(),
        }
    }

    pub fn has_head(&self, head: Head) -> bool {
        self.spec.heads.contains(&head)
    }

    /// Tagging heads that are enabled and have at least one tag.
    fn taggers(&self) -> Vec<TokenClassifier> {
        self.spec
            .heads
            .iter()
            .filter_map(|h| h.tag_task())
            .filter(|&t| !vocab_of(&self.labels, t).is_empty())
            .map(|task| TokenClassifier {
                task,
                classes: vocab_of(&self.labels, task).len(),
            })
            .collect()
    }

    fn init_params(&mut self) -> Result<()> {
        let dim = self.spec.model.encoder.model_dim;
        let mut store = std::mem::replace(&mut self.store, ParameterStore::new(0));
        let result = self.init_into(&mut store, dim);
        self.store = store;
        result
    }

    fn init_into(&self, store: &mut ParameterStore, dim: usize) -> Result<()> {
        self.encoder().init_params(store, self.vocab.len())?;
        match self.spec.model.classifier {
            ClassifierKind::Biaffine => self.biaffine().init(store, dim)?,
            ClassifierKind::Pooled => self.pooled().init(store, dim)?,
        }
        let tag_mlp = &self.spec.model.tag_mlp;
        let taggers = self.taggers();
        if !taggers.is_empty() {
            tag_mlp.init(store, "tagger.shared", dim)?;
        }
        for t in taggers {
            t.init(store, tag_mlp.output_dim(dim))?;
        }
        if self.has_head(Head::Dep) {
            self.dep_head().init(store, dim)?;
        }
        Ok(())
    }

    /// Resolves ids for an instance. The semantic label is `None` when it
    /// is not in the model's label space.
    pub fn prepare(&self, inst: &ContextInstance) -> Result<Example> {
        inst.validate()?;
        let inst = self.spec.context.view(inst);
        let inst = inst.as_ref();
        let enc = self.vocab.encode_instance(inst);
        if enc.pieces.len() > self.spec.model.encoder.max_pieces {
            return Err(Error::TooLong {
                pieces: enc.pieces.len(),
                max: self.spec.model.encoder.max_pieces,
            });
        }
        let n = inst.len();
        let mut tags = BTreeMap::new();
        for task in TagTask::ALL {
            let vocab = vocab_of(&self.labels, task);
            let ids = match tags_of(inst, task) {
                Some(v) => v.iter().map(|t| vocab.id(t)).collect(),
                None => vec![None; n],
            };
            tags.insert(task, ids);
        }
        let heads = match &inst.dep_heads {
            Some(h) => h.iter().map(|&h| Some(h)).collect(),
            None => vec![None; n],
        };
        let rels = match &inst.dep_rels {
            Some(r) => r.iter().map(|r| self.labels.dep_rel.id(r)).collect(),
            None => vec![None; n],
        };
        Ok(Example {
            pieces: enc.pieces,
            spans: enc.spans,
            compound_index: inst.compound_index,
            label: self.labels.semantic.id(&inst.label),
            tags,
            heads,
            rels,
        })
    }

    pub fn forward(&self, fwd: &Forward, ex: &Example) -> Result<Outputs> {
        let g = fwd.graph;
        let encoder = self.encoder().encode(fwd, &ex.pieces, &ex.spans)?;
        let states = encoder.token_states;
        let (sacti, pooled) = match self.spec.model.classifier {
            ClassifierKind::Biaffine => (
                Some(self.biaffine().forward(fwd, states, self.spec.model.attachment)?),
                None,
            ),
            ClassifierKind::Pooled => (None, Some(self.pooled().forward(fwd, states)?)),
        };
        let taggers = self.taggers();
        let mut tag_out = Vec::with_capacity(taggers.len());
        if !taggers.is_empty() {
            let shared = self.spec.model.tag_mlp.forward(fwd, "tagger.shared", states)?;
            for t in taggers {
                tag_out.push((t.task, t.logits(fwd, shared)?));
            }
        }
        let dep = if self.has_head(Head::Dep) {
            Some(self.dep_head().forward(fwd, states, ex.compound_index)?)
        } else {
            None
        };
        debug_assert_eq!(g.shape(states)[0], ex.spans.len());
        Ok(Outputs {
            encoder,
            sacti,
            pooled,
            taggers: tag_out,
            dep,
        })
    }

    pub fn losses(&self, g: &Graph, out: &Outputs, ex: &Example) -> Result<Losses> {
        let gold = ex
            .label
            .ok_or_else(|| Error::LabelSpace("instance label is not in the model's label space".into()))?;
        let sacti = match (&out.sacti, out.pooled) {
            (Some(s), _) => sacti_loss(g, s.attach_log_probs, s.label, gold)?,
            (None, Some(logits)) => g.cross_entropy(logits, &[gold])?,
            (None, None) => unreachable!("one classifier is always built"),
        };
        let mut morph = None;
        let mut aux = Vec::new();
        for &(task, logits) in &out.taggers {
            if let Some(l) = tagging_loss(g, logits, &ex.tags[&task])? {
                if task == TagTask::Morph {
                    morph = Some(l);
                } else {
                    aux.push((task, l));
                }
            }
        }
        let dep = match &out.dep {
            Some(d) => dep_loss(g, d, &ex.heads, &ex.rels)?,
            None => None,
        };
        Ok(Losses { sacti, morph, dep, aux })
    }

    /// Voted label id and the full vote for one example in eval mode.
    pub fn classify(&self, ex: &Example) -> Result<(usize, Vec<f64>)> {
        let g = Graph::new();
        let fwd = Forward::eval(&g, &self.store);
        let out = self.forward(&fwd, ex)?;
        Ok(self.decode(&g, &out))
    }

    fn decode(&self, g: &Graph, out: &Outputs) -> (usize, Vec<f64>) {
        match (&out.sacti, out.pooled) {
            (Some(s), _) => {
                let v = vote_decode(&g.value(s.label));
                (v.label, v.confidence)
            }
            (_, Some(logits)) => {
                let v = vote_decode(&g.value(logits));
                (v.label, v.confidence)
            }
            (None, None) => unreachable!("one classifier is always built"),
        }
    }

    pub fn predict(&self, req: &PredictRequest) -> Result<PredictionReport> {
        let original = req.to_instance()?;
        let ex = self.prepare(&original)?;
        let inst = self.spec.context.view(&original);
        let g = Graph::new();
        let fwd = Forward::eval(&g, &self.store);
        let out = self.forward(&fwd, &ex)?;
        let names = self.labels.semantic.names();
        let n = ex.len();

        let (label_id, confidence, mean_probability, pairs, sacti_map) = match (&out.sacti, out.pooled) {
            (Some(s), _) => {
                let r = g.value(s.label);
                let vote = vote_decode(&r);
                let probs = g.value(g.softmax(s.label));
                let scores = g.value(s.pair);
                let k = names.len();
                let mut mean = vec![0.0; k];
                for i in 0..n {
                    for (m, p) in mean.iter_mut().zip(probs.row(i)) {
                        *m += p / n as f64;
                    }
                }
                let pairs = (0..n)
                    .map(|i| PairReport {
                        token: inst.tokens[i].clone(),
                        score: scores.data()[i],
                        vote: names[vote.votes[i]].clone(),
                        distribution: probs.row(i).to_vec(),
                    })
                    .collect();
                let map = rows_of(&sacti_pair_heatmap(&g.value(s.full_pair)));
                (vote.label, vote.confidence, mean, pairs, Some(map))
            }
            (_, Some(logits)) => {
                let vote = vote_decode(&g.value(logits));
                let probs = g.value(g.softmax(logits)).data().to_vec();
                (vote.label, vote.confidence, probs, Vec::new(), None)
            }
            (None, None) => unreachable!("one classifier is always built"),
        };

        let morph_tags = out
            .taggers
            .iter()
            .find(|(t, _)| *t == TagTask::Morph)
            .map(|&(_, logits)| {
                vote_decode_rows(&g.value(logits))
                    .into_iter()
                    .map(|id| self.labels.morph.name(id).unwrap_or_default().to_string())
                    .collect()
            });

        let (dependency, dep_map) = match &out.dep {
            Some(d) => {
                let rel = d.rel_tensor(&g)?;
                let arcs = greedy_dep_decode(&g.value(d.arc), &rel)
                    .into_iter()
                    .map(|a| ArcReport {
                        head: a.head,
                        relation: self.labels.dep_rel.name(a.relation).map(str::to_string),
                    })
                    .collect();
                let map = rows_of(&g.value(g.softmax(d.arc_full)));
                (Some(arcs), Some(map))
            }
            None => (None, None),
        };

        let layers = out.encoder.attention_maps.len();
        let attention = if layers == 0 {
            vec![vec![1.0 / (n + 1) as f64; n + 1]; n + 1]
        } else {
            let layer = self.spec.model.heatmap_layer.unwrap_or(layers - 1).min(layers - 1);
            let heads = out.encoder.attention_maps[layer].len();
            let mut avg = vec![vec![0.0; n + 1]; n + 1];
            for h in 0..heads {
                let m = attention_heatmap(&out.encoder.attention_maps, layer, h, &ex.spans)?;
                for (row, src) in avg.iter_mut().zip(m.to_rows()) {
                    for (a, v) in row.iter_mut().zip(src) {
                        *a += v / heads as f64;
                    }
                }
            }
            avg
        };

        let mut tokens = inst.tokens.clone();
        tokens.push(inst.compound().to_string());
        let by_name = |values: &[f64]| -> BTreeMap<String, f64> {
            names.iter().cloned().zip(values.iter().copied()).collect()
        };
        Ok(PredictionReport {
            tokens: inst.tokens.clone(),
            compound_index: inst.compound_index,
            label: names[label_id].clone(),
            label_id,
            labels: names.to_vec(),
            confidence: by_name(&confidence),
            mean_probability: by_name(&mean_probability),
            pairs,
            morph_tags,
            dependency,
            heatmaps: Heatmaps {
                tokens,
                sacti: sacti_map,
                dependency: dep_map,
                attention,
            },
        })
    }

    pub fn to_checkpoint(&self, training: Value) -> Checkpoint {
        Checkpoint {
            config: serde_json::to_value(&self.spec).expect("spec serializes"),
            metadata: json!({
                "vocab": self.vocab,
                "labels": self.labels,
                "training": training,
            }),
            store: self.store.clone(),
        }
    }

    /// Rebuilds a model, checking that the stored parameters match the
    /// layout implied by the stored configuration.
    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        let spec: ModelSpec = serde_json::from_value(ckpt.config)?;
        let field = |name: &str| {
            ckpt.metadata
                .get(name)
                .cloned()
                .ok_or_else(|| Error::Config(format!("checkpoint metadata lacks `{name}`")))
        };
        let vocab: SubwordVocab = serde_json::from_value(field("vocab")?)?;
        let labels: TaskVocabs = serde_json::from_value(field("labels")?)?;
        let mut model = SactiModel::new(spec, vocab, labels, ckpt.store.seed())?;
        let expected: Vec<(&str, &[usize])> = model.store.iter().map(|(n, p)| (n, p.value.shape())).collect();
        let found: Vec<(&str, &[usize])> = ckpt.store.iter().map(|(n, p)| (n, p.value.shape())).collect();
        if expected != found {
            return Err(Error::Config(
                "checkpoint parameters do not match its configuration".into(),
            ));
        }
        model.store = ckpt.store;
        Ok(model)
    }
}

/// Per-row argmax, lowest index on ties.
fn vote_decode_rows(t: &Tensor) -> Vec<usize> {
    (0..t.rows())
        .map(|i| {
            let row = t.row(i);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    pub(crate) fn tiny_spec(heads: &[Head]) -> ModelSpec {
        ModelSpec {
            model: ModelConfig {
                encoder: EncoderConfig {
                    layers: 1,
                    model_dim: 8,
                    heads: 2,
                    ff_dim: 8,
                    max_pieces: 64,
                    feature_layer: None,
                },
                subword_vocab: 30,
                pair_mlp: MlpSpec::new(vec![6], Activation::Tanh),
                label_mlp: MlpSpec::new(vec![6], Activation::Tanh),
                arc_mlp: MlpSpec::new(vec![5], Activation::Tanh),
                rel_mlp: MlpSpec::new(vec![4], Activation::Tanh),
                tag_mlp: MlpSpec::new(vec![], Activation::Tanh),
                ..ModelConfig::default()
            },
            heads: heads.to_vec(),
            context: ContextMode::With,
        }
    }

    fn data() -> Vec<ContextInstance> {
        let mut a = ContextInstance::new(toks("aham pīta-ambaram namāmi"), 1, "B");
        a.morph_tags = Some(toks("PRON NOUN VERB"));
        a.dep_heads = Some(vec![3, 3, 0]);
        a.dep_rels = Some(toks("nsubj obj root"));
        let b = ContextInstance::new(toks("rāma-īśvaraḥ vadati"), 0, "T");
        vec![a, b]
    }

    fn model(heads: &[Head]) -> SactiModel {
        let d = data();
        let vocab = SubwordVocab::train(d.iter().flat_map(|i| i.tokens.iter().map(String::as_str)), 30).unwrap();
        let labels = TaskVocabs::from_instances(&d);
        SactiModel::new(tiny_spec(heads), vocab, labels, 11).unwrap()
    }

    #[test]
    fn prediction_report_invariants() {
        let m = model(&[Head::Morph, Head::Dep]);
        let req = PredictRequest {
            tokens: toks("aham pīta-ambaram namāmi"),
            compound_index: 1,
        };
        let rep = m.predict(&req).unwrap();
        assert!(m.labels.semantic.contains(&rep.label));
        assert!((rep.confidence.values().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((rep.mean_probability.values().sum::<f64>() - 1.0).abs() < 1e-9);
        for p in &rep.pairs {
            assert!((p.distribution.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        let maps = [
            rep.heatmaps.sacti.as_ref().unwrap(),
            rep.heatmaps.dependency.as_ref().unwrap(),
            &rep.heatmaps.attention,
        ];
        for map in maps {
            assert_eq!(map.len(), 4);
            for row in map {
                assert_eq!(row.len(), 4);
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
        assert_eq!(rep.morph_tags.as_ref().unwrap().len(), 3);
        assert_eq!(rep.dependency.as_ref().unwrap().len(), 3);
        assert_eq!(m.predict(&req).unwrap(), rep);
    }

    #[test]
    fn heatmap_layer_selects_the_attention_map() {
        let d = data();
        let vocab = SubwordVocab::train(d.iter().flat_map(|i| i.tokens.iter().map(String::as_str)), 30).unwrap();
        let labels = TaskVocabs::from_instances(&d);
        let build = |layer: Option<usize>| {
            let mut spec = tiny_spec(&[]);
            spec.model.encoder.layers = 2;
            spec.model.heatmap_layer = layer;
            SactiModel::new(spec, vocab.clone(), labels.clone(), 11)
        };
        let req = PredictRequest {
            tokens: toks("aham pīta-ambaram namāmi"),
            compound_index: 1,
        };
        let last = build(None).unwrap().predict(&req).unwrap();
        let explicit = build(Some(1)).unwrap().predict(&req).unwrap();
        let first = build(Some(0)).unwrap().predict(&req).unwrap();
        assert_eq!(last.heatmaps.attention, explicit.heatmaps.attention);
        assert_ne!(last.heatmaps.attention, first.heatmaps.attention);
        assert_eq!(last.label, first.label);
        assert!(matches!(build(Some(2)), Err(Error::Config(_))));
    }

    #[test]
    fn predict_rejects_non_compounds_by_field() {
        let m = model(&[]);
        let err = m
            .predict(&PredictRequest {
                tokens: toks("aham pītam"),
                compound_index: 1,
            })
            .unwrap_err();
        assert!(matches!(err, Error::Input { field: "compound_index", .. }));
    }

    #[test]
    fn disabled_heads_have_no_parameters() {
        let m = model(&[]);
        assert!(m.store.names().all(|n| !n.starts_with("dep.") && !n.starts_with("tagger.")));
        assert_eq!(m.spec.heads, vec![Head::Sacti]);
        let full = model(&[Head::Dep, Head::Morph, Head::Case]);
        assert!(full.store.contains("dep.arc_w"));
        assert!(full.store.contains("tagger.morph.weight"));
        // no case tags in the data, so no case head
        assert!(!full.store.contains("tagger.case.weight"));
    }

    #[test]
    fn checkpoint_round_trip_rebuilds_the_model() {
        let m = model(&[Head::Morph, Head::Dep]);
        let bytes = m.to_checkpoint(Value::Null).encode();
        let back = SactiModel::from_checkpoint(Checkpoint::decode(&bytes).unwrap()).unwrap();
        assert_eq!(back, m);
        let mut ck = m.to_checkpoint(Value::Null);
        ck.config = serde_json::to_value(tiny_spec(&[])).unwrap();
        assert!(SactiModel::from_checkpoint(ck).is_err());
    }

    #[test]
    fn unknown_label_is_a_label_space_error() {
        let m = model(&[]);
        let inst = ContextInstance::new(toks("x pīta-ambaram"), 1, "Z");
        let ex = m.prepare(&inst).unwrap();
        assert_eq!(ex.label, None);
        let g = Graph::new();
        let fwd = Forward::eval(&g, &m.store);
        let out = m.forward(&fwd, &ex).unwrap();
        assert!(matches!(m.losses(&g, &out, &ex), Err(Error::LabelSpace(_))));
    }
}
