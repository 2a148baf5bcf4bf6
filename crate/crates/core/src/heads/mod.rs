//! Output heads on top of the pooled token states.

pub mod dep;
pub mod sacti;
pub mod tagger;

pub use dep::{arc_scores, dep_loss, greedy_dep_decode, rel_scores_at, Arc, DepHead, DepScores, RelParams};
pub use sacti::{
    attachment_log_probs, full_pair_scores, label_scores, pair_scores, sacti_loss, sacti_pair_heatmap,
    vote_decode, AttachmentNorm, BiaffineClassifier, PooledClassifier, SactiScores, VoteResult, VOTE_TIE_EPS,
};
pub use tagger::{tagging_loss, TagTask, TokenClassifier};
