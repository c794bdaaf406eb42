//! METEOR in its exact+stem variant: unigram alignment scored by a
//! recall-weighted harmonic mean (α=0.9) and discounted by a fragmentation
//! penalty (γ=0.5, β=3). 0..100 scale.
//!
//! Synonym matching is out of scope; it would require an external lexical
//! database.

use rust_stemmers::{Algorithm, Stemmer};

use super::tokenize::TokenizedText;

const ALPHA: f64 = 0.9;
const BETA: f64 = 3.0;
const GAMMA: f64 = 0.5;

/// One aligned unigram: (hypothesis position, reference position).
type MatchPair = (usize, usize);

/// Greedy leftmost alignment of `hyp_keys[i]` to equal unmatched
/// `ref_keys[j]`, preferring the position that continues the previous match
/// (keeps chunks contiguous), else the smallest unused position.
///
/// The canonical chunk-minimizing search is exponential in the worst case;
/// this deterministic rule is the fixed alignment contract here, and the
/// test oracle implements the same rule independently.
fn align_stage(
    hyp_keys: &[Option<&str>],
    ref_keys: &[Option<&str>],
    hyp_used: &mut [bool],
    ref_used: &mut [bool],
    pairs: &mut Vec<MatchPair>,
) {
    let mut last_ref: Option<usize> = None;
    for (i, key) in hyp_keys.iter().enumerate() {
        let Some(key) = key else { continue };
        if hyp_used[i] {
            continue;
        }
        let continuation = last_ref
            .map(|r| r + 1)
            .filter(|&j| j < ref_keys.len() && !ref_used[j] && ref_keys[j] == Some(*key));
        let chosen = continuation.or_else(|| {
            (0..ref_keys.len()).find(|&j| !ref_used[j] && ref_keys[j] == Some(*key))
        });
        if let Some(j) = chosen {
            hyp_used[i] = true;
            ref_used[j] = true;
            pairs.push((i, j));
            last_ref = Some(j);
        }
    }
}

/// Number of maximal runs of matches that are contiguous and identically
/// ordered on both sides.
fn count_chunks(pairs: &mut [MatchPair]) -> usize {
    if pairs.is_empty() {
        return 0;
    }
    pairs.sort_unstable();
    let mut chunks = 1;
    for w in pairs.windows(2) {
        let (h0, r0) = w[0];
        let (h1, r1) = w[1];
        if h1 != h0 + 1 || r1 != r0 + 1 {
            chunks += 1;
        }
    }
    chunks
}

pub fn meteor(hyp: &TokenizedText, reference: &TokenizedText) -> f64 {
    if hyp.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let mut hyp_used = vec![false; hyp.len()];
    let mut ref_used = vec![false; reference.len()];
    let mut pairs = Vec::new();

    let hyp_exact: Vec<Option<&str>> = hyp.tokens.iter().map(|t| Some(t.as_str())).collect();
    let ref_exact: Vec<Option<&str>> =
        reference.tokens.iter().map(|t| Some(t.as_str())).collect();
    align_stage(&hyp_exact, &ref_exact, &mut hyp_used, &mut ref_used, &mut pairs);

    let stemmer = Stemmer::create(Algorithm::English);
    let hyp_stems: Vec<String> = hyp.tokens.iter().map(|t| stemmer.stem(t).into_owned()).collect();
    let ref_stems: Vec<String> = reference
        .tokens
        .iter()
        .map(|t| stemmer.stem(t).into_owned())
        .collect();
    let hyp_keys: Vec<Option<&str>> = hyp_stems
        .iter()
        .enumerate()
        .map(|(i, s)| (!hyp_used[i]).then_some(s.as_str()))
        .collect();
    let ref_keys: Vec<Option<&str>> = ref_stems
        .iter()
        .enumerate()
        .map(|(j, s)| (!ref_used[j]).then_some(s.as_str()))
        .collect();
    align_stage(&hyp_keys, &ref_keys, &mut hyp_used, &mut ref_used, &mut pairs);

    let matches = pairs.len() as f64;
    if matches == 0.0 {
        return 0.0;
    }
    let precision = matches / hyp.len() as f64;
    let recall = matches / reference.len() as f64;
    let f_mean = precision * recall / (ALPHA * precision + (1.0 - ALPHA) * recall);
    let chunks = count_chunks(&mut pairs) as f64;
    let penalty = GAMMA * (chunks / matches).powf(BETA);
    f_mean * (1.0 - penalty) * 100.0
}
