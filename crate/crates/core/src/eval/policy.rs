use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::ci::{mean_with_ci, MetricResult};
use super::metrics::{dcg_at_k, ndcg_at_k, rank_by_scores};
use crate::data::{query_groups, AnnotatedExample, Impression, MAX_GRADE};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankMetric {
    Ndcg,
    Dcg,
}

impl RankMetric {
    pub fn name(self) -> &'static str {
        match self {
            RankMetric::Ndcg => "ndcg",
            RankMetric::Dcg => "dcg",
        }
    }

    pub fn at_k(self, grades: &[u8], k: usize) -> f64 {
        match self {
            RankMetric::Ndcg => ndcg_at_k(grades, k),
            RankMetric::Dcg => dcg_at_k(grades, k),
        }
    }
}

/// Gain proxy for a logged position: `max(0, 5 - position)` capped at 4, so
/// the top four slots carry grades 4, 3, 2, 1.
pub fn position_proxy_grade(position: usize) -> u8 {
    (5usize.saturating_sub(position)).min(MAX_GRADE as usize) as u8
}

/// How well estimator scores reproduce the logged order: nDCG@k of the
/// estimator's ranking against [`position_proxy_grade`] of each logged
/// position. `scores[q][i]` scores `impressions[q].entries[i]`.
pub fn policy_accuracy(
    impressions: &[Impression],
    scores: &[Vec<f64>],
    k: usize,
) -> Result<MetricResult> {
    if scores.len() != impressions.len() {
        return Err(Error::validation(format!(
            "{} score lists for {} impressions",
            scores.len(),
            impressions.len()
        )));
    }
    let values = impressions
        .iter()
        .zip(scores)
        .map(|(imp, s)| {
            if s.len() != imp.entries.len() {
                return Err(Error::validation(format!(
                    "query {}: {} scores for {} documents",
                    imp.query_id,
                    s.len(),
                    imp.entries.len()
                )));
            }
            let ids: Vec<&str> = imp.entries.iter().map(|e| e.doc_id.as_str()).collect();
            let grades: Vec<u8> = rank_by_scores(s, &ids)
                .into_iter()
                .map(|i| position_proxy_grade(imp.entries[i].position))
                .collect();
            Ok(ndcg_at_k(&grades, k))
        })
        .collect::<Result<Vec<f64>>>()?;
    mean_with_ci(&values)
}

/// Per-query metric of a ranker over annotated queries. `scores[i]` scores
/// `annotations[i]`; ties are broken by ascending doc id.
pub fn per_query_metric(
    annotations: &[AnnotatedExample],
    scores: &[f64],
    k: usize,
    metric: RankMetric,
) -> Result<Vec<f64>> {
    if scores.len() != annotations.len() {
        return Err(Error::validation(format!(
            "{} scores for {} annotated documents",
            scores.len(),
            annotations.len()
        )));
    }
    Ok(query_groups(annotations)
        .into_iter()
        .map(|r| {
            let docs = &annotations[r.clone()];
            let ids: Vec<&str> = docs.iter().map(|d| d.doc_id.as_str()).collect();
            let grades: Vec<u8> = rank_by_scores(&scores[r], &ids)
                .into_iter()
                .map(|i| docs[i].grade)
                .collect();
            metric.at_k(&grades, k)
        })
        .collect())
}

/// Mean nDCG@k of a ranker on expert annotations.
pub fn policy_strength(
    annotations: &[AnnotatedExample],
    scores: &[f64],
    k: usize,
) -> Result<MetricResult> {
    mean_with_ci(&per_query_metric(annotations, scores, k, RankMetric::Ndcg)?)
}

/// A uniformly random permutation of `0..n` for each query size.
pub fn random_ranker(sizes: &[usize], seed: u64) -> Vec<Vec<usize>> {
    sizes
        .iter()
        .enumerate()
        .map(|(qi, &n)| {
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut seed::stream_rng(seed, "random_ranker", qi as u64));
            perm
        })
        .collect()
}

/// The random ranker expressed as distinct scores (first-ranked document
/// gets the highest), flattened in query order.
pub fn random_scores(sizes: &[usize], seed: u64) -> Vec<f64> {
    random_ranker(sizes, seed)
        .into_iter()
        .flat_map(|perm| {
            let n = perm.len();
            let mut scores = vec![0.0; n];
            for (rank, doc) in perm.into_iter().enumerate() {
                scores[doc] = (n - rank) as f64;
            }
            scores
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{FeatureVector, ImpressionEntry};

    fn impression(n: usize) -> Impression {
        Impression {
            query_id: "q".into(),
            entries: (0..n)
                .map(|i| ImpressionEntry {
                    doc_id: format!("d{i}"),
                    features: FeatureVector::zeros(1),
                    // Logged order is the reverse of doc order.
                    position: n - i,
                    clicked: false,
                })
                .collect(),
        }
    }

    #[test]
    fn proxy_grades() {
        let g: Vec<u8> = (1..=7).map(position_proxy_grade).collect();
        assert_eq!(g, [4, 3, 2, 1, 0, 0, 0]);
    }

    #[test]
    fn reciprocal_position_scores_are_perfect() {
        let imps = vec![impression(10), impression(4)];
        let scores: Vec<Vec<f64>> = imps
            .iter()
            .map(|imp| imp.entries.iter().map(|e| 1.0 / e.position as f64).collect())
            .collect();
        let acc = policy_accuracy(&imps, &scores, 10).unwrap();
        assert_eq!(acc.mean, 1.0);
    }

    #[test]
    fn reversed_scores_match_hand_computation() {
        let imp = impression(10);
        let scores: Vec<f64> = imp.entries.iter().map(|e| e.position as f64).collect();
        let acc = policy_accuracy(&[imp.clone(), imp], &[scores.clone(), scores], 10).unwrap();
        // Estimator ranks positions 10, 9, ..., 1: proxy grades 0,0,0,0,0,0,1,2,3,4.
        let dcg = 1.0 / 8f64.log2() + 3.0 / 9f64.log2() + 7.0 / 10f64.log2() + 15.0 / 11f64.log2();
        let ideal = 15.0 + 7.0 / 3f64.log2() + 3.0 / 4f64.log2() + 1.0 / 5f64.log2();
        assert!((acc.mean - dcg / ideal).abs() < 1e-12);
    }

    #[test]
    fn oracle_and_constant_strength() {
        let annotations: Vec<AnnotatedExample> = [2u8, 0, 4, 1]
            .iter()
            .enumerate()
            .map(|(i, &g)| AnnotatedExample {
                query_id: "q".into(),
                doc_id: format!("d{i}"),
                features: FeatureVector::zeros(1),
                grade: g,
            })
            .collect();
        let mut twice = annotations.clone();
        twice.extend(annotations.iter().map(|a| AnnotatedExample {
            query_id: "r".into(),
            ..a.clone()
        }));
        let oracle: Vec<f64> = twice.iter().map(|a| f64::from(a.grade)).collect();
        assert_eq!(policy_strength(&twice, &oracle, 10).unwrap().mean, 1.0);
        // Constant scores fall back to doc-id order: grades 2, 0, 4, 1.
        let constant = policy_strength(&twice, &[0.5; 8], 10).unwrap();
        assert!((constant.mean - ndcg_at_k(&[2, 0, 4, 1], 10)).abs() < 1e-15);
    }

    #[test]
    fn random_ranker_basics() {
        assert_eq!(random_ranker(&[1], 5), vec![vec![0]]);
        assert_eq!(random_ranker(&[4, 6], 5), random_ranker(&[4, 6], 5));
        let perms = random_ranker(&[3; 10_000], 17);
        let mut counts = std::collections::HashMap::new();
        for p in perms {
            *counts.entry(p).or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), 6);
        let p = 1.0 / 6.0;
        let tol = 3.0 * (p * (1.0 - p) / 10_000.0f64).sqrt();
        for c in counts.values() {
            assert!((*c as f64 / 10_000.0 - p).abs() <= tol, "{counts:?}");
        }
    }
}
