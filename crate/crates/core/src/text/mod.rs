//! Tokenization, dataset ingestion and annotation utilities.

mod agreement;
mod annotation;
mod bpe;
mod conllu;
mod instance;
mod labels;
mod stats;

pub use agreement::cohen_kappa;
pub use annotation::{
    aggregate_annotations, pairwise_kappa, parse_annotation_jsonl, summarize_annotations,
    write_annotation_jsonl, AggregatedLabel, Aggregation, AnnotationRecord, AnnotationSummary,
    Choice, PairKappa, NOT_SURE,
};
pub use bpe::{EncodedInstance, SubwordVocab, BOUNDARY, PAD, UNK};
pub use conllu::{
    merge_conllu_pseudolabels, parse_conllu, write_conllu, ConlluSentence, ConlluToken,
};
pub use instance::{
    load_jsonl_dataset, parse_jsonl_dataset, write_jsonl_dataset, ContextInstance, InstanceError,
};
pub use labels::{LabelVocab, TaskVocabs};
pub use stats::{dataset_stats, DatasetStats, SplitStats};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TextError {
    #[error("cannot train a subword vocabulary on an empty corpus")]
    EmptyCorpus,
    #[error("vocabulary size {requested} is smaller than the {chars} base characters")]
    VocabTooSmall { requested: usize, chars: usize },
    #[error("line {line}: {message}")]
    Json { line: usize, message: String },
    #[error("line {line}: {source}")]
    Instance {
        line: usize,
        #[source]
        source: InstanceError,
    },
    #[error("conllu line {line}: {message}")]
    Conllu { line: usize, message: String },
    #[error("sentence {sentence}: {message}")]
    Misaligned { sentence: usize, message: String },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
