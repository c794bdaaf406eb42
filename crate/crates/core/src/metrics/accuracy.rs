//! Classification accuracy: top-1 exact match and single-prediction hit
//! against a multi-label gold set. Both on a 0..100 scale.

use std::collections::BTreeSet;

use super::MetricsError;

fn align<P, G>(preds: &[(String, P)], gold: &[(String, G)]) -> Result<(), MetricsError> {
    if preds.len() != gold.len() {
        return Err(MetricsError::LengthMismatch {
            hyps: preds.len(),
            refs: gold.len(),
        });
    }
    for (index, ((pid, _), (gid, _))) in preds.iter().zip(gold).enumerate() {
        if pid != gid {
            return Err(MetricsError::MisalignedIds {
                index,
                pred: pid.clone(),
                gold: gid.clone(),
            });
        }
    }
    Ok(())
}

/// Fraction of items whose predicted label equals the gold label. Labels
/// compare verbatim, so an "unknown"/unparseable prediction counts as wrong
/// unless the gold label is literally that string.
pub fn top1_accuracy(
    preds: &[(String, String)],
    gold: &[(String, String)],
) -> Result<f64, MetricsError> {
    align(preds, gold)?;
    if preds.is_empty() {
        return Ok(0.0);
    }
    let hits = preds
        .iter()
        .zip(gold)
        .filter(|((_, p), (_, g))| p == g)
        .count();
    Ok(hits as f64 / preds.len() as f64 * 100.0)
}

/// Fraction of items whose single predicted label appears in the item's
/// gold label set.
pub fn multilabel_hit_accuracy(
    preds: &[(String, String)],
    gold_sets: &[(String, BTreeSet<String>)],
) -> Result<f64, MetricsError> {
    align(preds, gold_sets)?;
    for (id, set) in gold_sets {
        if set.is_empty() {
            return Err(MetricsError::EmptyGoldSet { id: id.clone() });
        }
    }
    if preds.is_empty() {
        return Ok(0.0);
    }
    let hits = preds
        .iter()
        .zip(gold_sets)
        .filter(|((_, p), (_, set))| set.contains(p))
        .count();
    Ok(hits as f64 / preds.len() as f64 * 100.0)
}
