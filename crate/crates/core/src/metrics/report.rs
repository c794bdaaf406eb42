//! Corpus-level metric reports for generation tasks.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::bleu::{bleu_n, corpus_bleu_n, BleuSmoothing};
use super::cider::cider;
use super::meteor::meteor;
use super::rouge::rouge_l;
use super::tokenize::TokenizedText;
use super::MetricsError;

/// Column order used when reports are rendered as a table.
pub const GENERATION_METRICS: [&str; 7] = [
    "METEOR", "CIDEr", "ROUGE-L", "BLEU-1", "BLEU-2", "BLEU-3", "BLEU-4",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemScores {
    pub id: String,
    pub scores: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// metric name -> corpus score. BLEU values are corpus-level
    /// (aggregated clipped counts), not means of the per-item column.
    pub corpus: BTreeMap<String, f64>,
    pub per_item: Vec<ItemScores>,
    pub n_items: usize,
}

impl MetricReport {
    /// Fixed-width table in the [`GENERATION_METRICS`] column order.
    pub fn render_table(&self) -> String {
        let mut header = String::new();
        let mut row = String::new();
        for name in GENERATION_METRICS {
            header.push_str(&format!("{name:>9} "));
            let value = self.corpus.get(name).copied().unwrap_or(f64::NAN);
            row.push_str(&format!("{value:>9.2} "));
        }
        format!("{}\n{}\n", header.trim_end(), row.trim_end())
    }
}

/// Scores hypotheses against references with the full generation metric
/// set. `items` pairs an id with (hypothesis, references); references must
/// be non-empty per item. ROUGE-L and METEOR are single-reference metrics
/// and use the first reference.
pub fn evaluate_generation(
    items: &[(String, TokenizedText, Vec<TokenizedText>)],
) -> Result<MetricReport, MetricsError> {
    if items.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }
    for (index, (_, _, refs)) in items.iter().enumerate() {
        if refs.is_empty() {
            return Err(MetricsError::MissingReferences { index });
        }
    }

    let hyps: Vec<TokenizedText> = items.iter().map(|(_, h, _)| h.clone()).collect();
    let ref_sets: Vec<Vec<TokenizedText>> = items.iter().map(|(_, _, r)| r.clone()).collect();
    let (cider_corpus, cider_items) = cider(&hyps, &ref_sets)?;

    let mut per_item = Vec::with_capacity(items.len());
    let mut rouge_sum = 0.0;
    let mut meteor_sum = 0.0;
    for (i, (id, hyp, refs)) in items.iter().enumerate() {
        let r = rouge_l(hyp, &refs[0]);
        let m = meteor(hyp, &refs[0]);
        rouge_sum += r;
        meteor_sum += m;
        let mut scores = BTreeMap::new();
        scores.insert("ROUGE-L".to_string(), r);
        scores.insert("METEOR".to_string(), m);
        scores.insert("CIDEr".to_string(), cider_items[i]);
        for n in 1..=4 {
            scores.insert(
                format!("BLEU-{n}"),
                bleu_n(hyp, refs, n, BleuSmoothing::None),
            );
        }
        per_item.push(ItemScores {
            id: id.clone(),
            scores,
        });
    }

    let bleu_items: Vec<(TokenizedText, Vec<TokenizedText>)> = items
        .iter()
        .map(|(_, h, r)| (h.clone(), r.clone()))
        .collect();
    let mut corpus = BTreeMap::new();
    for n in 1..=4 {
        corpus.insert(
            format!("BLEU-{n}"),
            corpus_bleu_n(&bleu_items, n, BleuSmoothing::None),
        );
    }
    corpus.insert("ROUGE-L".to_string(), rouge_sum / items.len() as f64);
    corpus.insert("METEOR".to_string(), meteor_sum / items.len() as f64);
    corpus.insert("CIDEr".to_string(), cider_corpus);

    Ok(MetricReport {
        corpus,
        per_item,
        n_items: items.len(),
    })
}
