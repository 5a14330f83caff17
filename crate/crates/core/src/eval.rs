//! Ranking metrics against ground-truth anomaly labels.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scoring::RankedUser;

/// Number of anomalous users among the first `k` of `ranking`.
pub fn top_k_hits(ranking: &[RankedUser], anomalous: &BTreeSet<String>, k: usize) -> usize {
    ranking
        .iter()
        .take(k)
        .filter(|r| anomalous.contains(&r.user_id))
        .count()
}

/// ROC AUC in the Mann-Whitney form: the fraction of (positive, negative)
/// pairs where the positive scores higher, tied pairs counting one half.
pub fn auc(scores: &[(f64, bool)]) -> Result<f64> {
    let n_pos = scores.iter().filter(|(_, l)| *l).count();
    let n_neg = scores.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass);
    }

    let mut sorted: Vec<(f64, bool)> = scores.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));

    // Walk tie groups in ascending score order, counting negatives seen below.
    let mut twice_wins = 0u128;
    let mut neg_below = 0u128;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j < sorted.len() && sorted[j].0 == sorted[i].0 {
            j += 1;
        }
        let pos = sorted[i..j].iter().filter(|(_, l)| *l).count() as u128;
        let neg = (j - i) as u128 - pos;
        twice_wins += pos * (2 * neg_below + neg);
        neg_below += neg;
        i = j;
    }
    Ok(twice_wins as f64 / (2.0 * n_pos as f64 * n_neg as f64))
}

/// Per-category fraction of members ranked within the first `k`.
/// Categories without members are absent from the result.
pub fn recall_at_k_by_category<C: Ord + Clone>(
    ranking: &[RankedUser],
    categories: &BTreeMap<String, C>,
    k: usize,
) -> BTreeMap<C, f64> {
    let top: BTreeSet<&str> = ranking.iter().take(k).map(|r| r.user_id.as_str()).collect();
    let mut tally: BTreeMap<C, (usize, usize)> = BTreeMap::new();
    for (user, category) in categories {
        let entry = tally.entry(category.clone()).or_default();
        entry.1 += 1;
        if top.contains(user.as_str()) {
            entry.0 += 1;
        }
    }
    tally
        .into_iter()
        .map(|(c, (hit, total))| (c, hit as f64 / total as f64))
        .collect()
}

/// Metrics of one ranking.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub top_k_hits: BTreeMap<usize, usize>,
    pub auc: f64,
    /// Keyed by `kind/intensity`, evaluated at the largest K.
    pub recall_by_category: BTreeMap<String, f64>,
    pub n_users: usize,
    pub n_anomalous: usize,
}

/// Evaluates `ranking` against `categories`, which maps each anomalous
/// user to its category label. Users absent from it are normal.
pub fn evaluate(ranking: &[RankedUser], categories: &BTreeMap<String, String>, ks: &[usize]) -> Result<EvalResult> {
    let anomalous: BTreeSet<String> = categories.keys().cloned().collect();
    let labelled: Vec<(f64, bool)> = ranking
        .iter()
        .map(|r| (r.score, anomalous.contains(&r.user_id)))
        .collect();
    let top_k_hits = ks.iter().map(|&k| (k, top_k_hits(ranking, &anomalous, k))).collect();
    let k_max = ks.iter().copied().max().unwrap_or(ranking.len());
    Ok(EvalResult {
        top_k_hits,
        auc: auc(&labelled)?,
        recall_by_category: recall_at_k_by_category(ranking, categories, k_max),
        n_users: ranking.len(),
        n_anomalous: anomalous.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ranking(users: &[&str]) -> Vec<RankedUser> {
        users
            .iter()
            .enumerate()
            .map(|(i, u)| RankedUser {
                user_id: u.to_string(),
                score: (users.len() - i) as f64,
                rank: i + 1,
            })
            .collect()
    }

    fn set(users: &[&str]) -> BTreeSet<String> {
        users.iter().map(|u| u.to_string()).collect()
    }

    #[test]
    fn perfect_ranking_hits() {
        let r = ranking(&["a", "b", "c", "d", "e", "f", "g"]);
        let anomalous = set(&["a", "b", "c", "d", "e"]);
        assert_eq!(top_k_hits(&r, &anomalous, 5), 5);
        assert_eq!(top_k_hits(&r, &anomalous, 100), 5);
        assert_eq!(top_k_hits(&r, &anomalous, 1), 1);
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[(0.9, true), (0.1, false), (0.8, true)]).unwrap(), 1.0);
        assert_eq!(auc(&[(0.9, true), (0.8, false), (0.3, true)]).unwrap(), 0.5);
        assert_eq!(auc(&[(1.0, true), (1.0, false), (1.0, false)]).unwrap(), 0.5);
        assert!(matches!(auc(&[(1.0, true), (2.0, true)]), Err(Error::SingleClass)));
        assert!(matches!(auc(&[]), Err(Error::SingleClass)));
    }

    #[test]
    fn recall_by_category_cases() {
        let r = ranking(&["a", "b", "c", "d"]);
        let cats = BTreeMap::from([
            ("a".to_string(), "x"),
            ("b".to_string(), "x"),
            ("d".to_string(), "y"),
        ]);
        let rec = recall_at_k_by_category(&r, &cats, 2);
        assert_eq!(rec["x"], 1.0);
        assert_eq!(rec["y"], 0.0);
        let rec = recall_at_k_by_category(&r, &cats, 1);
        assert_eq!(rec["x"], 0.5);
        assert_eq!(rec.len(), 2);
    }

    #[test]
    fn evaluate_keys_by_requested_ks() {
        let r = ranking(&["a", "b", "c", "d"]);
        let cats = BTreeMap::from([("b".to_string(), "work/red".to_string())]);
        let result = evaluate(&r, &cats, &[10, 100, 150]).unwrap();
        assert_eq!(result.top_k_hits.keys().copied().collect::<Vec<_>>(), vec![10, 100, 150]);
        assert_eq!(result.auc, 2.0 / 3.0);
        assert_eq!(result.n_anomalous, 1);
    }
}
