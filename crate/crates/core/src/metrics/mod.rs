//! Text-generation and classification metrics: BLEU-1..4, ROUGE-L, METEOR,
//! CIDEr-D, top-1 accuracy, and multi-label hit accuracy.
//!
//! All text metrics run on the shared canonical tokenizer, return scores on
//! a 0..100 scale, and are pure functions.

mod accuracy;
mod bleu;
mod cider;
mod meteor;
mod report;
mod rouge;
mod tokenize;

pub use accuracy::{multilabel_hit_accuracy, top1_accuracy};
pub use bleu::{bleu_n, corpus_bleu_n, BleuSmoothing};
pub use cider::cider;
pub use meteor::meteor;
pub use report::{evaluate_generation, ItemScores, MetricReport, GENERATION_METRICS};
pub use rouge::{rouge_l, rouge_l_weighted};
pub use tokenize::{tokenize, TokenizedText};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("empty corpus: at least one (hypothesis, references) pair is required")]
    EmptyCorpus,

    #[error("item {index}: hypothesis has no references")]
    MissingReferences { index: usize },

    #[error("hypothesis and reference lists differ in length: {hyps} vs {refs}")]
    LengthMismatch { hyps: usize, refs: usize },

    #[error("prediction ids do not align with gold ids (first difference at {index}: {pred:?} vs {gold:?})")]
    MisalignedIds {
        index: usize,
        pred: String,
        gold: String,
    },

    #[error("item {id:?} has an empty gold label set")]
    EmptyGoldSet { id: String },
}
