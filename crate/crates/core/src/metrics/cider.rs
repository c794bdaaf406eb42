//! CIDEr-D: consensus scoring of a hypothesis against its references by
//! tf-idf weighted n-gram similarity (n=1..4), with a Gaussian
//! length-difference penalty (σ=6) and the conventional ×10 scale.
//!
//! The corpus defines the idf table: document frequency counts each n-gram
//! once per item (over that item's reference set), and the idf normalizer is
//! ln(number of items).

use std::collections::BTreeMap;

use super::tokenize::TokenizedText;
use super::MetricsError;

const MAX_N: usize = 4;
const SIGMA: f64 = 6.0;

/// Ordered so that float accumulation visits n-grams in a fixed order:
/// scores must be byte-stable across processes, and hash-map iteration
/// would reorder the additions.
type Counts = BTreeMap<String, f64>;

fn ngram_counts(text: &TokenizedText, n: usize) -> Counts {
    let mut counts = Counts::new();
    for gram in text.ngrams(n) {
        *counts.entry(gram).or_insert(0.0) += 1.0;
    }
    counts
}

struct TfIdfVec {
    /// one weighted-count map per n-gram order
    weights: [Counts; MAX_N],
    norms: [f64; MAX_N],
    token_len: f64,
}

fn to_vec(text: &TokenizedText, df: &[Counts; MAX_N], log_n_items: f64) -> TfIdfVec {
    let mut weights: [Counts; MAX_N] = Default::default();
    let mut norms = [0.0; MAX_N];
    for k in 0..MAX_N {
        for (gram, tf) in ngram_counts(text, k + 1) {
            let gram_df = df[k].get(&gram).copied().unwrap_or(0.0);
            let idf = log_n_items - gram_df.max(1.0).ln();
            let w = tf * idf;
            norms[k] += w * w;
            weights[k].insert(gram, w);
        }
        norms[k] = norms[k].sqrt();
    }
    TfIdfVec {
        weights,
        norms,
        token_len: text.len() as f64,
    }
}

/// Clipped cosine per order with the length penalty applied, summed over
/// orders and divided by the number of orders by the caller.
// The order index couples weights, norms, and the output slot.
#[allow(clippy::needless_range_loop)]
fn similarity(hyp: &TfIdfVec, reference: &TfIdfVec) -> [f64; MAX_N] {
    let delta = hyp.token_len - reference.token_len;
    let length_penalty = (-(delta * delta) / (2.0 * SIGMA * SIGMA)).exp();
    let mut out = [0.0; MAX_N];
    for k in 0..MAX_N {
        let mut dot = 0.0;
        for (gram, &hw) in &hyp.weights[k] {
            if let Some(&rw) = reference.weights[k].get(gram) {
                dot += hw.min(rw) * rw;
            }
        }
        if hyp.norms[k] > 0.0 && reference.norms[k] > 0.0 {
            out[k] = dot / (hyp.norms[k] * reference.norms[k]) * length_penalty;
        }
    }
    out
}

/// Corpus CIDEr-D: mean over items of the per-item score, where each item
/// averages the per-reference, per-order clipped cosine and scales by 10.
// The order index couples each n-gram length to its df table.
#[allow(clippy::needless_range_loop)]
pub fn cider(
    hyps: &[TokenizedText],
    refs: &[Vec<TokenizedText>],
) -> Result<(f64, Vec<f64>), MetricsError> {
    if hyps.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }
    if hyps.len() != refs.len() {
        return Err(MetricsError::LengthMismatch {
            hyps: hyps.len(),
            refs: refs.len(),
        });
    }
    for (index, item_refs) in refs.iter().enumerate() {
        if item_refs.is_empty() {
            return Err(MetricsError::MissingReferences { index });
        }
    }

    // document frequency: each n-gram counted once per item
    let mut df: [Counts; MAX_N] = Default::default();
    for item_refs in refs {
        for k in 0..MAX_N {
            let mut seen: Counts = Counts::new();
            for r in item_refs {
                for gram in r.ngrams(k + 1) {
                    seen.insert(gram, 1.0);
                }
            }
            for gram in seen.into_keys() {
                *df[k].entry(gram).or_insert(0.0) += 1.0;
            }
        }
    }
    let log_n_items = (refs.len() as f64).ln();

    let mut per_item = Vec::with_capacity(hyps.len());
    for (hyp, item_refs) in hyps.iter().zip(refs) {
        let hyp_vec = to_vec(hyp, &df, log_n_items);
        let mut acc = [0.0; MAX_N];
        for r in item_refs {
            let ref_vec = to_vec(r, &df, log_n_items);
            let sim = similarity(&hyp_vec, &ref_vec);
            for k in 0..MAX_N {
                acc[k] += sim[k];
            }
        }
        let mean_over_orders: f64 = acc.iter().sum::<f64>() / MAX_N as f64;
        per_item.push(mean_over_orders / item_refs.len() as f64 * 10.0);
    }
    let corpus = per_item.iter().sum::<f64>() / per_item.len() as f64;
    Ok((corpus, per_item))
}
