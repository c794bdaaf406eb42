//! ROUGE-L: longest-common-subsequence F-measure on a 0..100 scale.

use super::tokenize::TokenizedText;

/// LCS length by dynamic programming over two token slices.
fn lcs_len(a: &[String], b: &[String]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for ai in a {
        for (j, bj) in b.iter().enumerate() {
            cur[j + 1] = if ai == bj {
                prev[j] + 1
            } else {
                prev[j + 1].max(cur[j])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Plain F1 variant (β=1), the default used in reports.
pub fn rouge_l(hyp: &TokenizedText, reference: &TokenizedText) -> f64 {
    rouge_l_weighted(hyp, reference, 1.0)
}

/// Recall-weighted variant: F = (1+β²)·P·R / (R + β²·P). β=1 reduces to F1;
/// large β approaches pure recall.
pub fn rouge_l_weighted(hyp: &TokenizedText, reference: &TokenizedText, beta: f64) -> f64 {
    let lcs = lcs_len(&hyp.tokens, &reference.tokens) as f64;
    if lcs == 0.0 {
        return 0.0;
    }
    let p = lcs / hyp.len() as f64;
    let r = lcs / reference.len() as f64;
    let b2 = beta * beta;
    (1.0 + b2) * p * r / (r + b2 * p) * 100.0
}
