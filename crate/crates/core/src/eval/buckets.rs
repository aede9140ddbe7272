use serde::{Deserialize, Serialize};

use super::ci::mean_with_ci;
use super::policy::{per_query_metric, RankMetric};
use crate::data::AnnotatedExample;
use crate::error::{Error, Result};

/// Document-level scores of one ranker, aligned with the annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelScores {
    pub name: String,
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketStat {
    pub model: String,
    /// Mean nDCG@k of the bucket's queries; NaN for an empty bucket.
    pub mean: f64,
    pub ci_half_width: f64,
    pub n: usize,
    /// NaN when the random ranker's mean in this bucket is 0 or NaN.
    pub relative_to_random: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketReport {
    /// `(low, high]` cut points on estimated-policy nDCG; the first bucket
    /// is closed below.
    pub boundaries: Vec<(f64, f64)>,
    /// Bucket index of every query, in annotation order.
    pub assignment: Vec<usize>,
    /// `stats[b][m]` is model `m` in bucket `b`.
    pub stats: Vec<Vec<BucketStat>>,
}

/// Groups queries into `n_buckets` equal-count buckets by how well the
/// estimated logging policy ranks them, then reports each model's mean
/// nDCG@k per bucket and its ratio to the random ranker in that bucket.
/// Queries tied across a cut point go to the lower bucket.
pub fn bucket_analysis(
    annotations: &[AnnotatedExample],
    models: &[ModelScores],
    random_name: &str,
    policy_scores: &[f64],
    k: usize,
    n_buckets: usize,
) -> Result<BucketReport> {
    let policy = per_query_metric(annotations, policy_scores, k, RankMetric::Ndcg)?;
    let n = policy.len();
    if n_buckets == 0 || n < n_buckets {
        return Err(Error::validation(format!(
            "{n} queries cannot fill {n_buckets} buckets"
        )));
    }
    let random_idx = models
        .iter()
        .position(|m| m.name == random_name)
        .ok_or_else(|| Error::validation(format!("no model named {random_name:?} to normalize by")))?;
    let per_model: Vec<Vec<f64>> = models
        .iter()
        .map(|m| per_query_metric(annotations, &m.scores, k, RankMetric::Ndcg))
        .collect::<Result<_>>()?;

    let mut sorted = policy.clone();
    sorted.sort_by(f64::total_cmp);
    let uppers: Vec<f64> = (0..n_buckets)
        .map(|b| sorted[((b + 1) * n).div_ceil(n_buckets) - 1])
        .collect();
    let boundaries = (0..n_buckets)
        .map(|b| (if b == 0 { sorted[0] } else { uppers[b - 1] }, uppers[b]))
        .collect();
    let assignment: Vec<usize> = policy
        .iter()
        .map(|v| uppers.iter().position(|u| v <= u).unwrap_or(n_buckets - 1))
        .collect();

    let stats = (0..n_buckets)
        .map(|b| {
            let members: Vec<usize> = (0..n).filter(|&q| assignment[q] == b).collect();
            let summarize = |values: &[f64]| -> (f64, f64) {
                let picked: Vec<f64> = members.iter().map(|&q| values[q]).collect();
                match picked.len() {
                    0 => (f64::NAN, 0.0),
                    1 => (picked[0], 0.0),
                    _ => {
                        let r = mean_with_ci(&picked).expect("two or more values");
                        (r.mean, r.ci_half_width)
                    }
                }
            };
            let random_mean = summarize(&per_model[random_idx]).0;
            models
                .iter()
                .zip(&per_model)
                .map(|(m, values)| {
                    let (mean, ci_half_width) = summarize(values);
                    BucketStat {
                        model: m.name.clone(),
                        mean,
                        ci_half_width,
                        n: members.len(),
                        relative_to_random: if random_mean > 0.0 { mean / random_mean } else { f64::NAN },
                    }
                })
                .collect()
        })
        .collect();
    Ok(BucketReport {
        boundaries,
        assignment,
        stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::FeatureVector;
    use crate::eval::{mean_with_ci, random_scores};

    fn annotations(n_queries: usize) -> Vec<AnnotatedExample> {
        (0..n_queries)
            .flat_map(|q| {
                (0..6).map(move |d| AnnotatedExample {
                    query_id: format!("q{q:03}"),
                    doc_id: format!("d{d}"),
                    features: FeatureVector::zeros(1),
                    grade: ((q * 7 + d * 3) % 5) as u8,
                })
            })
            .collect()
    }

    fn models(ann: &[AnnotatedExample]) -> Vec<ModelScores> {
        let sizes = vec![6; ann.len() / 6];
        vec![
            ModelScores {
                name: "random".into(),
                scores: random_scores(&sizes, 1),
            },
            ModelScores {
                name: "oracle".into(),
                scores: ann.iter().map(|a| f64::from(a.grade)).collect(),
            },
            ModelScores {
                name: "doc_order".into(),
                scores: vec![0.0; ann.len()],
            },
        ]
    }

    #[test]
    fn single_bucket_equals_global_results() {
        let ann = annotations(40);
        let ms = models(&ann);
        let policy = random_scores(&vec![6; 40], 9);
        let report = bucket_analysis(&ann, &ms, "random", &policy, 10, 1).unwrap();
        for (stat, m) in report.stats[0].iter().zip(&ms) {
            let global =
                mean_with_ci(&per_query_metric(&ann, &m.scores, 10, RankMetric::Ndcg).unwrap()).unwrap();
            assert_eq!(stat.mean, global.mean);
            assert_eq!(stat.ci_half_width, global.ci_half_width);
            assert_eq!(stat.n, 40);
        }
    }

    #[test]
    fn relative_values_and_oracle_bound() {
        let ann = annotations(50);
        let ms = models(&ann);
        let policy = random_scores(&vec![6; 50], 2);
        let report = bucket_analysis(&ann, &ms, "random", &policy, 10, 5).unwrap();
        assert_eq!(report.assignment.len(), 50);
        let total: usize = report.stats.iter().map(|b| b[0].n).sum();
        assert_eq!(total, 50);
        for bucket in &report.stats {
            if bucket[0].n == 0 {
                continue;
            }
            assert_eq!(bucket[0].relative_to_random, 1.0);
            assert!(bucket.iter().all(|s| bucket[1].mean >= s.mean));
        }
    }

    #[test]
    fn no_relevant_documents_leaves_ratio_undefined() {
        let mut ann = annotations(10);
        for a in &mut ann {
            a.grade = 0;
        }
        let ms = models(&ann);
        let report = bucket_analysis(&ann, &ms, "random", &ms[0].scores, 10, 1).unwrap();
        assert_eq!(report.stats[0][0].mean, 0.0);
        assert!(report.stats[0].iter().all(|s| s.relative_to_random.is_nan()));
    }

    #[test]
    fn ties_go_to_the_lower_bucket() {
        let ann = annotations(10);
        let ms = models(&ann);
        // Ranking by the true grades gives every query policy nDCG 1.
        let report = bucket_analysis(&ann, &ms, "random", &ms[1].scores, 10, 3).unwrap();
        assert!(report.assignment.iter().all(|b| *b == 0));
        assert!(report.stats[1][0].mean.is_nan());
    }

    #[test]
    fn too_few_queries() {
        let ann = annotations(3);
        let ms = models(&ann);
        assert!(bucket_analysis(&ann, &ms, "random", &[0.0; 18], 10, 5).is_err());
        assert!(bucket_analysis(&ann, &ms, "missing", &[0.0; 18], 10, 1).is_err());
    }
}
