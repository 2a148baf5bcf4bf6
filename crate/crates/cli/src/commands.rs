use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use sacti_core::autodiff::Checkpoint;
use sacti_core::model::{ContextMode, Head, SactiModel};
use sacti_core::text::{
    dataset_stats, load_jsonl_dataset, summarize_annotations, write_annotation_jsonl, ContextInstance,
};
use sacti_core::train::{
    evaluate, grid_to_csv, run_experiment_grid, train, write_epoch_log, DatasetSplits, GridSpec,
    TrainConfig,
};
use serde::Serialize;
use serde_json::{json, Value};

use crate::error::CliError;
use crate::input::{parse_inputs, InputItem};
use crate::store::{read_records, AdminSettings, AnnotationStore};
use crate::svg::heatmap_svg;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Parser)]
#[command(name = "sacti", version, about = "Compound type identification: training, evaluation and serving")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write its checkpoint and epoch log.
    Train(TrainArgs),
    /// Score a checkpoint on a labeled dataset.
    Eval(EvalArgs),
    /// Write a prediction report for every input line.
    Predict(PredictArgs),
    /// Run a grid of ablation and cross-lingual cells.
    Grid(GridArgs),
    /// Export the heatmap matrices of every input line.
    Heatmap(HeatmapArgs),
    /// Count instances, compounds and labels per split.
    DataStats(DataStatsArgs),
    /// Export annotation records and their aggregation summary.
    AnnotateExport(AnnotateExportArgs),
    /// Serve the HTTP API. The bind address is read from SACTI_BIND.
    Serve(ServeArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ContextArg {
    With,
    Without,
}

impl From<ContextArg> for ContextMode {
    fn from(c: ContextArg) -> Self {
        match c {
            ContextArg::With => ContextMode::With,
            ContextArg::Without => ContextMode::Without,
        }
    }
}

fn parse_head(s: &str) -> Result<Head, String> {
    Head::parse(s).ok_or_else(|| {
        let known: Vec<&str> = Head::ALL.iter().map(|h| h.name()).collect();
        format!("unknown head `{s}`; expected one of {}", known.join(", "))
    })
}

/// Settings that override the `--config` file.
#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Training configuration (JSON); unspecified fields take defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub context_mode: Option<ContextArg>,
    /// Comma-separated heads to train, e.g. `sacti,morph,dep`.
    #[arg(long, value_delimiter = ',', value_parser = parse_head)]
    pub heads: Option<Vec<Head>>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<TrainConfig> {
        let mut config: TrainConfig = match &self.config {
            Some(p) => serde_json::from_str(&read_text(p)?).map_err(|e| CliError::schema(p, e))?,
            None => TrainConfig::default(),
        };
        if let Some(s) = self.seed {
            config.seed = s;
        }
        if let Some(c) = self.context_mode {
            config.context_mode = c.into();
        }
        if let Some(h) = &self.heads {
            config.enabled_heads = h.clone();
        }
        if let Some(e) = self.epochs {
            config.epochs = e;
        }
        config.validate()?;
        Ok(config)
    }

    fn inputs(&self) -> Vec<PathBuf> {
        self.config.iter().cloned().collect()
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Training instances (JSONL).
    #[arg(long)]
    pub data: PathBuf,
    /// Development instances (JSONL) for model selection.
    #[arg(long)]
    pub dev: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Labeled instances (JSONL).
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// JSONL lines with `tokens` and `compound_index`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Grid specification (JSON).
    #[arg(long)]
    pub grid: PathBuf,
    /// Directory with one subdirectory per dataset holding `train.jsonl`,
    /// `test.jsonl` and optionally `dev.jsonl`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct HeatmapArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Also render each matrix as SVG.
    #[arg(long)]
    pub svg: bool,
}

#[derive(Debug, Args)]
pub struct DataStatsArgs {
    /// JSONL split files, or directories holding train/dev/test.jsonl.
    #[arg(long, required = true)]
    pub data: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AnnotateExportArgs {
    /// Service journal or a JSONL of annotation records.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Votes a label needs; defaults to the journal's setting, else 2.
    #[arg(long)]
    pub min_agree: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Model used by /predict; without it /predict answers 503.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Instances to annotate (JSONL with `tokens`, `compound_index`, optional `id`).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Comma-separated annotation labels; defaults to the checkpoint's.
    #[arg(long, value_delimiter = ',')]
    pub labels: Option<Vec<String>>,
    /// Directory for the annotation journal.
    #[arg(long)]
    pub out: PathBuf,
}

/// What a successful command reports on stdout.
#[derive(Debug, Serialize)]
pub struct Summary {
    pub command: &'static str,
    pub outputs: Vec<PathBuf>,
    #[serde(flatten)]
    pub details: Value,
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn load_dataset(path: &Path) -> Result<Vec<ContextInstance>> {
    if !path.exists() {
        return Err(CliError::io(path, std::io::ErrorKind::NotFound.into()));
    }
    load_jsonl_dataset(path).map_err(|e| CliError::schema(path, e))
}

fn load_inputs(path: &Path) -> Result<Vec<InputItem>> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    parse_inputs(file).map_err(|e| CliError::schema(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(SactiModel, Value)> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    let ckpt = Checkpoint::decode(&bytes).map_err(|e| CliError::schema(path, e))?;
    let training = ckpt.metadata.get("training").cloned().unwrap_or(Value::Null);
    let model = SactiModel::from_checkpoint(ckpt).map_err(|e| CliError::schema(path, e))?;
    Ok((model, training))
}

/// Output directory that refuses to write over any input file.
struct OutDir {
    dir: PathBuf,
    inputs: Vec<PathBuf>,
    written: Vec<PathBuf>,
}

impl OutDir {
    fn create(dir: &Path, inputs: impl IntoIterator<Item = PathBuf>) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let inputs = inputs.into_iter().filter_map(|p| p.canonicalize().ok()).collect();
        Ok(OutDir {
            dir: dir.to_path_buf(),
            inputs,
            written: Vec::new(),
        })
    }

    fn path(&self, name: &str) -> Result<PathBuf> {
        let p = self.dir.join(name);
        if let Ok(c) = p.canonicalize() {
            if self.inputs.contains(&c) {
                return Err(CliError::WouldOverwriteInput(p));
            }
        }
        Ok(p)
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let p = self.path(name)?;
        fs::write(&p, bytes).map_err(|e| CliError::io(&p, e))?;
        self.written.push(p);
        Ok(())
    }

    fn write_json(&mut self, name: &str, value: &impl Serialize) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(sacti_core::Error::from)?;
        bytes.push(b'\n');
        self.write(name, &bytes)
    }

    fn write_lines<T: Serialize>(&mut self, name: &str, items: &[T]) -> Result<()> {
        let p = self.path(name)?;
        let file = File::create(&p).map_err(|e| CliError::io(&p, e))?;
        let mut w = BufWriter::new(file);
        for item in items {
            serde_json::to_writer(&mut w, item).map_err(sacti_core::Error::from)?;
            w.write_all(b"\n").map_err(|e| CliError::io(&p, e))?;
        }
        w.flush().map_err(|e| CliError::io(&p, e))?;
        self.written.push(p);
        Ok(())
    }

    fn summary(self, command: &'static str, details: Value) -> Summary {
        Summary {
            command,
            outputs: self.written,
            details,
        }
    }
}

pub const CHECKPOINT_FILE: &str = "model.ckpt";

fn run_train(args: &TrainArgs) -> Result<Summary> {
    let config = args.config.resolve()?;
    let data = load_dataset(&args.data)?;
    let dev = args.dev.as_deref().map(load_dataset).transpose()?;
    let mut inputs = args.config.inputs();
    inputs.push(args.data.clone());
    inputs.extend(args.dev.clone());
    let mut out = OutDir::create(&args.out, inputs)?;
    let outcome = train(&data, dev.as_deref(), &config)?;
    let ckpt = outcome.model.to_checkpoint(serde_json::to_value(&config).map_err(sacti_core::Error::from)?);
    out.write(CHECKPOINT_FILE, &ckpt.encode())?;
    let mut log = Vec::new();
    write_epoch_log(&mut log, &outcome.log)?;
    out.write("train_log.jsonl", &log)?;
    out.write_json("config.json", &config)?;
    Ok(out.summary(
        "train",
        json!({
            "epochs_run": outcome.log.len(),
            "best_epoch": outcome.best_epoch,
            "best_dev_macro_f1": outcome.best_dev_macro_f1,
        }),
    ))
}

fn run_eval(args: &EvalArgs) -> Result<Summary> {
    let (model, _) = load_checkpoint(&args.checkpoint)?;
    let data = load_dataset(&args.data)?;
    let mut out = OutDir::create(&args.out, [args.checkpoint.clone(), args.data.clone()])?;
    let result = evaluate(&model, &data)?;
    let names = model.labels.semantic.names();
    let predictions: Vec<Value> = data
        .iter()
        .zip(&result.predictions)
        .map(|(inst, &p)| json!({"id": inst.id, "gold": inst.label, "predicted": names[p]}))
        .collect();
    out.write_json("metrics.json", &json!({"metrics": result.metrics, "confusion": result.confusion}))?;
    out.write_lines("predictions.jsonl", &predictions)?;
    Ok(out.summary(
        "eval",
        json!({"accuracy": result.metrics.accuracy, "macro_f1": result.metrics.macro_f1}),
    ))
}

fn run_predict(args: &PredictArgs) -> Result<Summary> {
    let (model, _) = load_checkpoint(&args.checkpoint)?;
    let items = load_inputs(&args.data)?;
    let mut out = OutDir::create(&args.out, [args.checkpoint.clone(), args.data.clone()])?;
    let reports = items
        .iter()
        .map(|i| model.predict(&i.request()))
        .collect::<Result<Vec<_>, _>>()?;
    out.write_lines("predictions.jsonl", &reports)?;
    Ok(out.summary("predict", json!({"instances": reports.len()})))
}

fn load_splits(dir: &Path) -> Result<DatasetSplits> {
    let dev = dir.join("dev.jsonl");
    Ok(DatasetSplits {
        train: load_dataset(&dir.join("train.jsonl"))?,
        dev: dev.exists().then(|| load_dataset(&dev)).transpose()?,
        test: load_dataset(&dir.join("test.jsonl"))?,
    })
}

fn run_grid(args: &GridArgs) -> Result<Summary> {
    let config = args.config.resolve()?;
    let spec: GridSpec =
        serde_json::from_str(&read_text(&args.grid)?).map_err(|e| CliError::schema(&args.grid, e))?;
    let mut datasets = BTreeMap::new();
    let mut inputs = args.config.inputs();
    inputs.push(args.grid.clone());
    for cell in &spec.cells {
        for name in cell.train_on.iter().chain([&cell.eval_on]) {
            if !datasets.contains_key(name) {
                let dir = args.data.join(name);
                datasets.insert(name.clone(), load_splits(&dir)?);
                inputs.extend(["train.jsonl", "dev.jsonl", "test.jsonl"].map(|f| dir.join(f)));
            }
        }
    }
    let mut out = OutDir::create(&args.out, inputs)?;
    let rows = run_experiment_grid(&config, &datasets, &spec)?;
    out.write("grid.csv", grid_to_csv(&rows)?.as_bytes())?;
    out.write_json("grid.json", &rows)?;
    Ok(out.summary("grid", json!({"cells": rows.len()})))
}

fn dependency_columns(tokens: &[String], width: usize) -> Vec<String> {
    std::iter::once("ROOT".to_string())
        .chain(tokens.iter().cloned())
        .take(width)
        .collect()
}

fn run_heatmap(args: &HeatmapArgs) -> Result<Summary> {
    let (model, _) = load_checkpoint(&args.checkpoint)?;
    let items = load_inputs(&args.data)?;
    let mut out = OutDir::create(&args.out, [args.checkpoint.clone(), args.data.clone()])?;
    for (n, item) in items.iter().enumerate() {
        let report = model.predict(&item.request())?;
        let h = &report.heatmaps;
        let stem = format!("heatmap-{}", n + 1);
        out.write_json(&format!("{stem}.json"), h)?;
        if args.svg {
            let mut maps = vec![("attention", h.tokens.clone(), &h.attention)];
            if let Some(m) = &h.sacti {
                maps.push(("sacti", h.tokens.clone(), m));
            }
            if let Some(m) = &h.dependency {
                let width = m.first().map_or(0, Vec::len);
                maps.push(("dependency", dependency_columns(&h.tokens, width), m));
            }
            for (kind, cols, matrix) in maps {
                let svg = heatmap_svg(&format!("{kind}: {}", report.tokens.join(" ")), &h.tokens, &cols, matrix);
                out.write(&format!("{stem}-{kind}.svg"), svg.as_bytes())?;
            }
        }
    }
    Ok(out.summary("heatmap", json!({"instances": items.len()})))
}

fn run_data_stats(args: &DataStatsArgs) -> Result<Summary> {
    let mut splits: Vec<(String, Vec<ContextInstance>)> = Vec::new();
    let mut inputs = Vec::new();
    for path in &args.data {
        if path.is_dir() {
            let mut found = false;
            for name in ["train", "dev", "test"] {
                let file = path.join(format!("{name}.jsonl"));
                if file.exists() {
                    splits.push((name.to_string(), load_dataset(&file)?));
                    inputs.push(file);
                    found = true;
                }
            }
            if !found {
                return Err(CliError::io(path.join("train.jsonl"), std::io::ErrorKind::NotFound.into()));
            }
        } else {
            let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("split").to_string();
            splits.push((name, load_dataset(path)?));
            inputs.push(path.clone());
        }
    }
    let mut out = OutDir::create(&args.out, inputs)?;
    let refs: Vec<(&str, &[ContextInstance])> = splits.iter().map(|(n, d)| (n.as_str(), d.as_slice())).collect();
    let stats = dataset_stats(&refs);
    out.write_json("stats.json", &stats)?;
    Ok(out.summary(
        "data-stats",
        json!({"unique_compounds": stats.unique_compounds, "label_count": stats.label_count}),
    ))
}

fn run_annotate_export(args: &AnnotateExportArgs) -> Result<Summary> {
    if !args.data.exists() {
        return Err(CliError::io(&args.data, std::io::ErrorKind::NotFound.into()));
    }
    let (records, settings) = read_records(&args.data)?;
    let min_agree = args
        .min_agree
        .or(settings.map(|s| s.min_agree))
        .unwrap_or(2);
    if min_agree == 0 {
        return Err(CliError::Usage("--min-agree must be positive".into()));
    }
    let mut out = OutDir::create(&args.out, [args.data.clone()])?;
    let mut jsonl = Vec::new();
    write_annotation_jsonl(&mut jsonl, &records).map_err(sacti_core::Error::from)?;
    out.write("annotations.jsonl", &jsonl)?;
    let summary = summarize_annotations(&records, min_agree);
    out.write_json("summary.json", &summary)?;
    Ok(out.summary(
        "annotate-export",
        json!({"records": records.len(), "labeled": summary.labels.len(), "dropped": summary.dropped.len()}),
    ))
}

pub const JOURNAL_FILE: &str = "annotations.journal.jsonl";

/// Everything `serve` needs before binding a socket.
pub struct Prepared {
    pub model: Option<SactiModel>,
    pub config: Value,
    pub store: AnnotationStore,
    pub journal: PathBuf,
}

pub fn prepare_serve(args: &ServeArgs) -> Result<Prepared> {
    let loaded = args.checkpoint.as_deref().map(load_checkpoint).transpose()?;
    let items = args.data.as_deref().map(load_inputs).transpose()?.unwrap_or_default();
    let labels = match (&args.labels, &loaded) {
        (Some(l), _) => l.clone(),
        (None, Some((m, _))) => m.labels.semantic.names().to_vec(),
        (None, None) => {
            return Err(CliError::Usage(
                "no label set: pass --labels or a --checkpoint".into(),
            ))
        }
    };
    let mut inputs: Vec<PathBuf> = args.checkpoint.iter().cloned().collect();
    inputs.extend(args.data.clone());
    let out = OutDir::create(&args.out, inputs)?;
    let journal = out.path(JOURNAL_FILE)?;
    let store = AnnotationStore::open(items, AdminSettings::new(labels), Some(&journal))?;
    let config = json!({
        "checkpoint": args.checkpoint,
        "training": loaded.as_ref().map(|(_, t)| t.clone()),
        "labels": loaded.as_ref().map(|(m, _)| m.labels.semantic.names().to_vec()),
        "journal": journal,
    });
    Ok(Prepared {
        model: loaded.map(|(m, _)| m),
        config,
        store,
        journal,
    })
}

/// Runs every subcommand except `serve`, which needs an async runtime.
pub fn run(command: &Command) -> Result<Summary> {
    match command {
        Command::Train(a) => run_train(a),
        Command::Eval(a) => run_eval(a),
        Command::Predict(a) => run_predict(a),
        Command::Grid(a) => run_grid(a),
        Command::Heatmap(a) => run_heatmap(a),
        Command::DataStats(a) => run_data_stats(a),
        Command::AnnotateExport(a) => run_annotate_export(a),
        Command::Serve(_) => Err(CliError::Usage("serve is handled by the binary".into())),
    }
}

