//! Evaluation suite: stemmed exact-match F1@K for present phrases, R@K for
//! absent phrases, and alpha-NDCG@K for diversity, with gold and predictions
//! split by whether their stemmed token sequence occurs contiguously in the
//! stemmed source.
//!
//! Conventions (printed in report metadata by the CLI): predictions are
//! deduplicated by stemmed identity before truncation; the precision
//! denominator is `min(k, |predictions|)`; documents with no gold phrases on
//! a given side are excluded from that side's macro average; the ideal DCG
//! is computed greedily over the pool of predictions and gold phrases.

pub mod porter;

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

pub use porter::stem;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("k must be at least 1, got {0}")]
    BadK(usize),
    #[error("alpha must lie strictly between 0 and 1, got {0}")]
    BadAlpha(f64),
}

/// Stem every token of a phrase; the digit placeholder and other non-word
/// tokens pass through unchanged.
pub fn stem_phrase(tokens: &[String]) -> Vec<String> {
    tokens.iter().map(|t| stem(t)).collect()
}

fn contains_contiguous(hay: &[String], needle: &[String]) -> bool {
    !needle.is_empty()
        && needle.len() <= hay.len()
        && hay.windows(needle.len()).any(|w| w == needle)
}

/// Present iff the stemmed phrase occurs contiguously in the stemmed source.
pub fn is_present(stemmed_phrase: &[String], stemmed_source: &[String]) -> bool {
    contains_contiguous(stemmed_source, stemmed_phrase)
}

/// Partition stemmed gold phrases by contiguous occurrence in the source.
pub fn split_present_absent(
    gold: &[Vec<String>],
    stemmed_source: &[String],
) -> (Vec<Vec<String>>, Vec<Vec<String>>) {
    let mut present = Vec::new();
    let mut absent = Vec::new();
    for g in gold {
        if is_present(g, stemmed_source) {
            present.push(g.clone());
        } else {
            absent.push(g.clone());
        }
    }
    (present, absent)
}

/// Drop later stemmed-identical phrases, preserving order.
pub fn dedup_stemmed(phrases: &[Vec<String>]) -> Vec<Vec<String>> {
    let mut seen: BTreeSet<Vec<String>> = BTreeSet::new();
    let mut out = Vec::new();
    for p in phrases {
        if seen.insert(p.clone()) {
            out.push(p.clone());
        }
    }
    out
}

/// Precision, recall and F1 of the top-k predictions against gold, both
/// sides stemmed and deduplicated. Matching is stemmed exact equality; the
/// precision denominator is the truncated list size.
pub fn f1_at_k(
    predicted: &[Vec<String>],
    gold: &[Vec<String>],
    k: usize,
) -> Result<(f64, f64, f64), MetricsError> {
    if k == 0 {
        return Err(MetricsError::BadK(k));
    }
    let kept: Vec<&Vec<String>> = predicted.iter().take(k).collect();
    let matches = kept
        .iter()
        .filter(|p| gold.iter().any(|g| g == **p))
        .count() as f64;
    let precision = if kept.is_empty() {
        0.0
    } else {
        matches / kept.len() as f64
    };
    let recall = if gold.is_empty() {
        0.0
    } else {
        matches / gold.len() as f64
    };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok((precision, recall, f1))
}

/// Recall of the top-k absent predictions against absent gold.
pub fn recall_at_k(
    predicted_absent: &[Vec<String>],
    gold_absent: &[Vec<String>],
    k: usize,
) -> Result<f64, MetricsError> {
    if k == 0 {
        return Err(MetricsError::BadK(k));
    }
    if gold_absent.is_empty() {
        return Ok(0.0);
    }
    let matches = predicted_absent
        .iter()
        .take(k)
        .filter(|p| gold_absent.iter().any(|g| g == *p))
        .count();
    Ok(matches as f64 / gold_absent.len() as f64)
}

/// Two phrases are relevant iff one's word set contains the other's.
pub fn relevance(a: &[String], b: &[String]) -> bool {
    let sa: BTreeSet<&String> = a.iter().collect();
    let sb: BTreeSet<&String> = b.iter().collect();
    !sa.is_empty() && !sb.is_empty() && (sa.is_subset(&sb) || sb.is_subset(&sa))
}

fn discount(rank: usize) -> f64 {
    ((rank + 1) as f64).log2()
}

/// Gain-discounted score of one ordering: at each rank the gain of a phrase
/// is the sum over gold entries it is relevant to, each geometrically
/// discounted by how many earlier phrases were already relevant to that
/// entry.
fn dcg(ordering: &[&Vec<String>], gold: &[Vec<String>], alpha: f64, k: usize) -> f64 {
    let mut redundancy = vec![0u32; gold.len()];
    let mut total = 0.0;
    for (idx, phrase) in ordering.iter().take(k).enumerate() {
        let mut gain = 0.0;
        for (i, g) in gold.iter().enumerate() {
            if relevance(phrase, g) {
                gain += (1.0 - alpha).powi(redundancy[i] as i32);
                redundancy[i] += 1;
            }
        }
        total += gain / discount(idx + 1);
    }
    total
}

/// Greedy ideal ordering over `pool`: at each rank pick the candidate with
/// the highest marginal gain. Returns the ideal DCG at k.
fn greedy_ideal_dcg(pool: &[Vec<String>], gold: &[Vec<String>], alpha: f64, k: usize) -> f64 {
    let mut remaining: Vec<&Vec<String>> = pool.iter().collect();
    let mut redundancy = vec![0u32; gold.len()];
    let mut total = 0.0;
    for rank in 1..=k.min(pool.len()) {
        let mut best: Option<(usize, f64)> = None;
        for (idx, cand) in remaining.iter().enumerate() {
            let gain: f64 = gold
                .iter()
                .enumerate()
                .filter(|(_, g)| relevance(cand, g))
                .map(|(i, _)| (1.0 - alpha).powi(redundancy[i] as i32))
                .sum();
            if best.map_or(true, |(_, b)| gain > b) {
                best = Some((idx, gain));
            }
        }
        let (idx, gain) = best.expect("pool nonempty within bound");
        let picked = remaining.remove(idx);
        for (i, g) in gold.iter().enumerate() {
            if relevance(picked, g) {
                redundancy[i] += 1;
            }
        }
        total += gain / discount(rank);
    }
    total
}

/// alpha-NDCG@k of a prediction list against gold, both stemmed. The
/// normalizer is the greedy ideal over predictions plus gold; 0 when the
/// ideal is 0. Since the greedy ideal can occasionally be beaten by the
/// actual ordering (the exact ideal is intractable in general), the ratio
/// is clamped to 1.
pub fn alpha_ndcg_at_k(
    predicted: &[Vec<String>],
    gold: &[Vec<String>],
    alpha: f64,
    k: usize,
) -> Result<f64, MetricsError> {
    if k == 0 {
        return Err(MetricsError::BadK(k));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(MetricsError::BadAlpha(alpha));
    }
    if predicted.is_empty() {
        return Ok(0.0);
    }
    let ordering: Vec<&Vec<String>> = predicted.iter().collect();
    let actual = dcg(&ordering, gold, alpha, k);
    let mut pool = predicted.to_vec();
    pool.extend_from_slice(gold);
    let pool = dedup_stemmed(&pool);
    let ideal = greedy_ideal_dcg(&pool, gold, alpha, k);
    if ideal == 0.0 {
        Ok(0.0)
    } else {
        Ok((actual / ideal).min(1.0))
    }
}

/// One document ready for scoring: preprocessed (unstemmed) token phrases
/// plus the source tokens.
#[derive(Debug, Clone)]
pub struct EvalPair {
    pub id: String,
    pub predicted: Vec<Vec<String>>,
    pub gold: Vec<Vec<String>>,
    pub source_tokens: Vec<String>,
}

/// Per-document scores; a side's maps stay empty when the document has no
/// gold phrases on that side.
#[derive(Debug, Clone, Serialize)]
pub struct DocScores {
    pub id: String,
    pub present_f1: BTreeMap<usize, f64>,
    pub present_precision: BTreeMap<usize, f64>,
    pub present_recall: BTreeMap<usize, f64>,
    pub present_ndcg: BTreeMap<usize, f64>,
    pub absent_recall: BTreeMap<usize, f64>,
    pub absent_ndcg: BTreeMap<usize, f64>,
    pub has_present_gold: bool,
    pub has_absent_gold: bool,
}

/// Score one document: stem, dedup, split by presence, then apply every
/// metric at every requested k.
pub fn evaluate_document(
    pair: &EvalPair,
    ks: &[usize],
    alpha: f64,
) -> Result<DocScores, MetricsError> {
    let source: Vec<String> = stem_phrase(&pair.source_tokens);
    let predicted: Vec<Vec<String>> = dedup_stemmed(
        &pair
            .predicted
            .iter()
            .map(|p| stem_phrase(p))
            .collect::<Vec<_>>(),
    );
    let gold: Vec<Vec<String>> = dedup_stemmed(
        &pair
            .gold
            .iter()
            .map(|p| stem_phrase(p))
            .collect::<Vec<_>>(),
    );

    let (gold_present, gold_absent) = split_present_absent(&gold, &source);
    let (pred_present, pred_absent) = split_present_absent(&predicted, &source);

    let mut scores = DocScores {
        id: pair.id.clone(),
        present_f1: BTreeMap::new(),
        present_precision: BTreeMap::new(),
        present_recall: BTreeMap::new(),
        present_ndcg: BTreeMap::new(),
        absent_recall: BTreeMap::new(),
        absent_ndcg: BTreeMap::new(),
        has_present_gold: !gold_present.is_empty(),
        has_absent_gold: !gold_absent.is_empty(),
    };
    for &k in ks {
        if scores.has_present_gold {
            let (p, r, f1) = f1_at_k(&pred_present, &gold_present, k)?;
            scores.present_precision.insert(k, p);
            scores.present_recall.insert(k, r);
            scores.present_f1.insert(k, f1);
            scores
                .present_ndcg
                .insert(k, alpha_ndcg_at_k(&pred_present, &gold_present, alpha, k)?);
        }
        if scores.has_absent_gold {
            scores
                .absent_recall
                .insert(k, recall_at_k(&pred_absent, &gold_absent, k)?);
            scores
                .absent_ndcg
                .insert(k, alpha_ndcg_at_k(&pred_absent, &gold_absent, alpha, k)?);
        }
    }
    Ok(scores)
}

#[derive(Debug, Clone, Serialize, Default)]
pub struct EvalCounts {
    pub docs: usize,
    pub docs_with_present_gold: usize,
    pub docs_with_absent_gold: usize,
}

/// Macro-averaged corpus report. A document contributes to a side's average
/// only when it has gold phrases on that side.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    /// Present-phrase F1@K.
    pub f1_at: BTreeMap<usize, f64>,
    pub precision_at: BTreeMap<usize, f64>,
    pub recall_present_at: BTreeMap<usize, f64>,
    /// Absent-phrase recall@K.
    pub r_at: BTreeMap<usize, f64>,
    /// Present-phrase alpha-NDCG@K.
    pub ndcg_at: BTreeMap<usize, f64>,
    pub ndcg_absent_at: BTreeMap<usize, f64>,
    pub counts: EvalCounts,
}

pub fn evaluate_corpus(
    pairs: &[EvalPair],
    ks: &[usize],
    alpha: f64,
) -> Result<(EvalReport, Vec<DocScores>), MetricsError> {
    let mut docs = Vec::with_capacity(pairs.len());
    for pair in pairs {
        docs.push(evaluate_document(pair, ks, alpha)?);
    }
    let mut report = EvalReport {
        f1_at: BTreeMap::new(),
        precision_at: BTreeMap::new(),
        recall_present_at: BTreeMap::new(),
        r_at: BTreeMap::new(),
        ndcg_at: BTreeMap::new(),
        ndcg_absent_at: BTreeMap::new(),
        counts: EvalCounts {
            docs: docs.len(),
            docs_with_present_gold: docs.iter().filter(|d| d.has_present_gold).count(),
            docs_with_absent_gold: docs.iter().filter(|d| d.has_absent_gold).count(),
        },
    };
    let mean = |get: &dyn Fn(&DocScores) -> Option<f64>| -> Option<f64> {
        let values: Vec<f64> = docs.iter().filter_map(get).collect();
        if values.is_empty() {
            None
        } else {
            Some(values.iter().sum::<f64>() / values.len() as f64)
        }
    };
    for &k in ks {
        if let Some(v) = mean(&|d| d.present_f1.get(&k).copied()) {
            report.f1_at.insert(k, v);
        }
        if let Some(v) = mean(&|d| d.present_precision.get(&k).copied()) {
            report.precision_at.insert(k, v);
        }
        if let Some(v) = mean(&|d| d.present_recall.get(&k).copied()) {
            report.recall_present_at.insert(k, v);
        }
        if let Some(v) = mean(&|d| d.absent_recall.get(&k).copied()) {
            report.r_at.insert(k, v);
        }
        if let Some(v) = mean(&|d| d.present_ndcg.get(&k).copied()) {
            report.ndcg_at.insert(k, v);
        }
        if let Some(v) = mean(&|d| d.absent_ndcg.get(&k).copied()) {
            report.ndcg_absent_at.insert(k, v);
        }
    }
    Ok((report, docs))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ph(words: &[&str]) -> Vec<String> {
        words.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn stem_phrase_spec_examples() {
        assert_eq!(stem_phrase(&ph(&["caresses"])), ph(&["caress"]));
        assert_eq!(stem_phrase(&ph(&["agent"])), ph(&["agent"]));
        assert_eq!(stem_phrase(&ph(&["systems"])), ph(&["system"]));
        assert_eq!(stem_phrase(&ph(&["<digit>"])), ph(&["<digit>"]));
    }

    #[test]
    fn present_requires_contiguity() {
        let source = ph(&["a", "b", "c"]);
        let (present, absent) = split_present_absent(&[ph(&["a", "b"]), ph(&["a", "c"])], &source);
        assert_eq!(present, vec![ph(&["a", "b"])]);
        assert_eq!(absent, vec![ph(&["a", "c"])]);
    }

    #[test]
    fn empty_gold_splits_empty() {
        let (p, a) = split_present_absent(&[], &ph(&["a"]));
        assert!(p.is_empty() && a.is_empty());
    }

    #[test]
    fn f1_identity_case() {
        let gold = vec![ph(&["x"]), ph(&["y", "z"])];
        let (p, r, f1) = f1_at_k(&gold, &gold, 2).unwrap();
        assert_eq!((p, r, f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn f1_hand_computed_fixture() {
        // 2 matches among 5 kept predictions, 4 gold: P=0.4, R=0.5, F1=4/9
        let gold = vec![ph(&["g1"]), ph(&["g2"]), ph(&["g3"]), ph(&["g4"])];
        let predicted = vec![
            ph(&["g1"]),
            ph(&["junk1"]),
            ph(&["g2"]),
            ph(&["junk2"]),
            ph(&["junk3"]),
            ph(&["g3"]), // beyond k
        ];
        let (p, r, f1) = f1_at_k(&predicted, &gold, 5).unwrap();
        assert!((p - 0.4).abs() < 1e-12);
        assert!((r - 0.5).abs() < 1e-12);
        assert!((f1 - 4.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn f1_and_recall_reject_zero_k() {
        assert_eq!(f1_at_k(&[], &[], 0), Err(MetricsError::BadK(0)));
        assert_eq!(recall_at_k(&[], &[], 0), Err(MetricsError::BadK(0)));
    }

    #[test]
    fn recall_fixture() {
        let gold = vec![ph(&["a"]), ph(&["b"]), ph(&["c"]), ph(&["d"])];
        assert_eq!(recall_at_k(&gold, &gold, 10).unwrap(), 1.0);
        assert_eq!(recall_at_k(&[ph(&["z"])], &gold, 10).unwrap(), 0.0);
        assert_eq!(
            recall_at_k(&[ph(&["a"]), ph(&["q"])], &gold, 10).unwrap(),
            0.25
        );
    }

    #[test]
    fn relevance_subset_rule() {
        assert!(relevance(
            &ph(&["multi", "agent"]),
            &ph(&["multi", "agent", "system"])
        ));
        assert!(!relevance(&ph(&["norm", "conflict"]), &ph(&["agent"])));
        assert!(relevance(&ph(&["same", "words"]), &ph(&["same", "words"])));
        // word sets ignore order and multiplicity
        assert!(relevance(&ph(&["b", "a"]), &ph(&["a", "b", "c"])));
    }

    #[test]
    fn ndcg_single_relevant_prediction_is_one() {
        let gold = vec![ph(&["neural", "network"])];
        let pred = vec![ph(&["neural", "network"])];
        let v = alpha_ndcg_at_k(&pred, &gold, 0.5, 1).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ndcg_redundant_pair_cases() {
        // both predictions relevant only to the same single gold phrase
        let gold1 = vec![ph(&["net"])];
        let pred = vec![ph(&["net"]), ph(&["net", "fast"])];
        let v = alpha_ndcg_at_k(&pred, &gold1, 0.5, 2).unwrap();
        assert!(
            (v - 1.0).abs() < 1e-12,
            "redundancy unavoidable from the same pool: {}",
            v
        );

        // a second distinct gold phrase joins the pool: the ideal ordering
        // avoids the redundant slot while the actual one keeps it
        let gold2 = vec![ph(&["net"]), ph(&["graph"])];
        let v = alpha_ndcg_at_k(&pred, &gold2, 0.5, 2).unwrap();
        let log2_3 = 3f64.log2();
        let expect = (1.0 + 0.5 / log2_3) / (1.0 + 1.0 / log2_3);
        assert!((v - expect).abs() < 1e-12, "got {} want {}", v, expect);
    }

    #[test]
    fn ndcg_empty_predictions_zero() {
        let gold = vec![ph(&["x"])];
        assert_eq!(alpha_ndcg_at_k(&[], &gold, 0.5, 5).unwrap(), 0.0);
    }

    #[test]
    fn ndcg_rejects_bad_alpha() {
        let gold = vec![ph(&["x"])];
        let pred = vec![ph(&["x"])];
        for alpha in [0.0, 1.0, -0.3, 1.7] {
            assert!(alpha_ndcg_at_k(&pred, &gold, alpha, 1).is_err());
        }
    }

    #[test]
    fn duplicate_gold_entries_do_not_change_scores() {
        let source = ph(&["deep", "nets", "run"]);
        let gold_once = vec![ph(&["deep", "nets"]), ph(&["miss"])];
        let gold_dup = vec![
            ph(&["deep", "nets"]),
            ph(&["deep", "net"]), // same stemmed form
            ph(&["miss"]),
        ];
        let pred = vec![ph(&["deep", "nets"]), ph(&["other"])];
        let a = evaluate_document(
            &EvalPair {
                id: "d".into(),
                predicted: pred.clone(),
                gold: gold_once,
                source_tokens: source.clone(),
            },
            &[5],
            0.5,
        )
        .unwrap();
        let b = evaluate_document(
            &EvalPair {
                id: "d".into(),
                predicted: pred,
                gold: gold_dup,
                source_tokens: source,
            },
            &[5],
            0.5,
        )
        .unwrap();
        assert_eq!(a.present_f1, b.present_f1);
        assert_eq!(a.absent_recall, b.absent_recall);
        assert_eq!(a.present_ndcg, b.present_ndcg);
    }

    #[test]
    fn corpus_macro_average_skips_docs_without_gold_side() {
        let pairs = vec![
            EvalPair {
                id: "p".into(),
                predicted: vec![ph(&["sun"])],
                gold: vec![ph(&["sun"])],
                source_tokens: ph(&["sun", "rise"]),
            },
            // all-absent gold: excluded from the present-side average
            EvalPair {
                id: "a".into(),
                predicted: vec![ph(&["moon"])],
                gold: vec![ph(&["moon"])],
                source_tokens: ph(&["sun", "rise"]),
            },
        ];
        let (report, docs) = evaluate_corpus(&pairs, &[1], 0.5).unwrap();
        assert_eq!(docs.len(), 2);
        assert_eq!(report.counts.docs_with_present_gold, 1);
        assert_eq!(report.counts.docs_with_absent_gold, 1);
        assert_eq!(report.f1_at[&1], 1.0);
        assert_eq!(report.r_at[&1], 1.0);
    }
}
