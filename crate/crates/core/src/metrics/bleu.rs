//! BLEU-N: geometric mean of clipped n-gram precisions with a brevity
//! penalty, on a 0..100 scale.

use std::collections::HashMap;

use super::tokenize::TokenizedText;

/// Zero-overlap handling for the modified precisions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BleuSmoothing {
    /// Classical definition: any zero precision zeroes the whole score.
    #[default]
    None,
    /// Add one to numerator and denominator of every order above 1.
    AddOne,
}

fn ngram_counts(text: &TokenizedText, n: usize) -> HashMap<String, u64> {
    let mut counts = HashMap::new();
    for gram in text.ngrams(n) {
        *counts.entry(gram).or_insert(0) += 1;
    }
    counts
}

/// Clipped match count and total hypothesis n-gram count for one order.
fn clipped_counts(hyp: &TokenizedText, refs: &[TokenizedText], n: usize) -> (u64, u64) {
    let hyp_counts = ngram_counts(hyp, n);
    let total: u64 = hyp_counts.values().sum();
    let ref_counts: Vec<HashMap<String, u64>> =
        refs.iter().map(|r| ngram_counts(r, n)).collect();
    let mut clipped = 0;
    for (gram, &count) in &hyp_counts {
        let cap = ref_counts
            .iter()
            .filter_map(|rc| rc.get(gram))
            .copied()
            .max()
            .unwrap_or(0);
        clipped += count.min(cap);
    }
    (clipped, total)
}

/// Reference length closest to the hypothesis length; ties go to the
/// shorter reference.
fn closest_ref_len(hyp_len: usize, refs: &[TokenizedText]) -> usize {
    refs.iter()
        .map(|r| r.len())
        .min_by_key(|&rl| (rl.abs_diff(hyp_len), rl))
        .unwrap_or(0)
}

fn brevity_penalty(hyp_len: u64, ref_len: u64) -> f64 {
    if hyp_len == 0 {
        return 0.0;
    }
    if hyp_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    }
}

fn score_from_counts(
    clipped: &[u64],
    totals: &[u64],
    hyp_len: u64,
    ref_len: u64,
    smoothing: BleuSmoothing,
) -> f64 {
    let n = clipped.len();
    let mut log_sum = 0.0;
    for k in 0..n {
        let (num, den) = match smoothing {
            BleuSmoothing::None => (clipped[k] as f64, totals[k] as f64),
            BleuSmoothing::AddOne if k > 0 => (clipped[k] as f64 + 1.0, totals[k] as f64 + 1.0),
            BleuSmoothing::AddOne => (clipped[k] as f64, totals[k] as f64),
        };
        if num == 0.0 || den == 0.0 {
            return 0.0;
        }
        log_sum += (num / den).ln();
    }
    brevity_penalty(hyp_len, ref_len) * (log_sum / n as f64).exp() * 100.0
}

/// Sentence-level BLEU-n against one or more references.
pub fn bleu_n(hyp: &TokenizedText, refs: &[TokenizedText], n: usize, smoothing: BleuSmoothing) -> f64 {
    assert!((1..=4).contains(&n), "BLEU order must be 1..=4");
    if hyp.is_empty() || refs.is_empty() {
        return 0.0;
    }
    let mut clipped = Vec::with_capacity(n);
    let mut totals = Vec::with_capacity(n);
    for k in 1..=n {
        let (c, t) = clipped_counts(hyp, refs, k);
        clipped.push(c);
        totals.push(t);
    }
    let ref_len = closest_ref_len(hyp.len(), refs) as u64;
    score_from_counts(&clipped, &totals, hyp.len() as u64, ref_len, smoothing)
}

/// Corpus-level BLEU-n: clipped and total counts are aggregated over all
/// items before the precision ratio is taken, as are the hypothesis and
/// closest-reference lengths. Invariant under permutation of item order.
pub fn corpus_bleu_n(
    items: &[(TokenizedText, Vec<TokenizedText>)],
    n: usize,
    smoothing: BleuSmoothing,
) -> f64 {
    assert!((1..=4).contains(&n), "BLEU order must be 1..=4");
    let mut clipped = vec![0u64; n];
    let mut totals = vec![0u64; n];
    let mut hyp_len = 0u64;
    let mut ref_len = 0u64;
    for (hyp, refs) in items {
        for k in 1..=n {
            let (c, t) = clipped_counts(hyp, refs, k);
            clipped[k - 1] += c;
            totals[k - 1] += t;
        }
        hyp_len += hyp.len() as u64;
        ref_len += closest_ref_len(hyp.len(), refs) as u64;
    }
    score_from_counts(&clipped, &totals, hyp_len, ref_len, smoothing)
}
