//! Synthetic worlds, a logging policy of tunable strength, and a
//! position-based click model.
//!
//! The logging policy scores each document with
//! `alpha * grade / 4 + (1 - alpha) * u`, `u ~ Uniform(0, 1)`, so `alpha = 0`
//! is a random shuffle and `alpha = 1` ranks by true grade. Clicks follow
//! `P(click) = exam(k) * attractiveness(grade)` with `exam(k) = k^-eta` and
//! `attractiveness(g) = epsilon + (1 - epsilon) * (2^g - 1) / 15`.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{AnnotatedExample, FeatureVector, Impression, ImpressionEntry, MAX_GRADE};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub n_queries: usize,
    pub docs_per_query: usize,
    pub feature_dim: usize,
    pub informative_dims: usize,
    pub feature_noise_sigma: f64,
    pub grade_probs: [f64; 5],
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            n_queries: 5000,
            docs_per_query: 10,
            feature_dim: 16,
            informative_dims: 8,
            feature_noise_sigma: 0.15,
            grade_probs: [0.5, 0.3, 0.1, 0.06, 0.04],
            seed: 0,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_queries == 0 {
            return Err(Error::validation("world.n_queries must be positive"));
        }
        if self.docs_per_query < 2 {
            return Err(Error::validation(
                "world.docs_per_query must be at least 2 for a ranking to exist",
            ));
        }
        if self.informative_dims == 0 || self.informative_dims > self.feature_dim {
            return Err(Error::validation(format!(
                "world.informative_dims must lie in 1..={}, got {}",
                self.feature_dim, self.informative_dims
            )));
        }
        if !(self.feature_noise_sigma >= 0.0 && self.feature_noise_sigma.is_finite()) {
            return Err(Error::validation("world.feature_noise_sigma must be >= 0"));
        }
        let sum: f64 = self.grade_probs.iter().sum();
        if self.grade_probs.iter().any(|p| !(*p >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::validation(format!(
                "world.grade_probs must be non-negative and sum to 1, got {:?}",
                self.grade_probs
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    /// Logging-policy strength: 0 shuffles, 1 sorts by true grade.
    pub alpha: f64,
    pub seed: u64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            alpha: 0.8,
            seed: 0,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::validation(format!(
                "policy.alpha must lie in [0, 1], got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClickConfig {
    /// Examination decay exponent.
    pub eta: f64,
    /// Click-noise floor on attractiveness.
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for ClickConfig {
    fn default() -> Self {
        ClickConfig {
            eta: 1.0,
            epsilon: 0.05,
            seed: 0,
        }
    }
}

impl ClickConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(Error::validation("clicks.eta must be >= 0"));
        }
        if !(0.0..1.0).contains(&self.epsilon) {
            return Err(Error::validation("clicks.epsilon must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn examination(&self, position: usize) -> f64 {
        (1.0 / position as f64).powf(self.eta)
    }

    pub fn attractiveness(&self, grade: u8) -> f64 {
        // ε + (1 − ε) can round to just above 1 at the top grade.
        (self.epsilon + (1.0 - self.epsilon) * (f64::from(1u32 << grade) - 1.0) / 15.0).min(1.0)
    }

    pub fn click_probability(&self, position: usize, grade: u8) -> f64 {
        self.examination(position) * self.attractiveness(grade)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDoc {
    pub doc_id: String,
    pub grade: u8,
    pub features: FeatureVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticQuery {
    pub query_id: String,
    pub docs: Vec<SyntheticDoc>,
}

/// Ground-truth queries, documents, grades and features.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticWorld {
    pub config: WorldConfig,
    pub queries: Vec<SyntheticQuery>,
}

impl SyntheticWorld {
    /// Looks up a query by id. Ids are `q` + zero-padded index.
    pub fn query(&self, query_id: &str) -> Option<&SyntheticQuery> {
        self.query_index(query_id).map(|i| &self.queries[i])
    }

    pub fn query_index(&self, query_id: &str) -> Option<usize> {
        let idx: usize = query_id.strip_prefix('q')?.parse().ok()?;
        self.queries
            .get(idx)
            .filter(|q| q.query_id == query_id)
            .map(|_| idx)
    }

    pub fn grade_of(&self, query_id: &str, doc_id: &str) -> Option<u8> {
        let q = self.query(query_id)?;
        let idx: usize = doc_id.strip_prefix('d')?.parse().ok()?;
        q.docs.get(idx).filter(|d| d.doc_id == doc_id).map(|d| d.grade)
    }

    /// All documents as annotated examples, grades included.
    pub fn annotations(&self) -> Vec<AnnotatedExample> {
        self.queries
            .iter()
            .flat_map(|q| {
                q.docs.iter().map(move |d| AnnotatedExample {
                    query_id: q.query_id.clone(),
                    doc_id: d.doc_id.clone(),
                    features: d.features.clone(),
                    grade: d.grade,
                })
            })
            .collect()
    }
}

fn id_width(n: usize) -> usize {
    n.saturating_sub(1).max(1).to_string().len().max(2)
}

/// Draws a world. Each query uses its own RNG stream, so the result does not
/// depend on generation order.
pub fn generate_world(config: &WorldConfig) -> Result<SyntheticWorld> {
    config.validate()?;
    let qw = id_width(config.n_queries);
    let dw = id_width(config.docs_per_query);
    let cdf: Vec<f64> = config
        .grade_probs
        .iter()
        .scan(0.0, |acc, p| {
            *acc += p;
            Some(*acc)
        })
        .collect();
    let noise = Normal::new(0.0, config.feature_noise_sigma)
        .map_err(|e| Error::validation(format!("feature noise: {e}")))?;
    let standard = Normal::new(0.0, 1.0).expect("unit normal");

    let queries = (0..config.n_queries)
        .map(|qi| {
            let mut rng = seed::stream_rng(config.seed, "world", qi as u64);
            let docs = (0..config.docs_per_query)
                .map(|di| {
                    let u: f64 = rng.random();
                    let grade = cdf
                        .iter()
                        .position(|c| u < *c)
                        .unwrap_or_else(|| {
                            // u landed in rounding slack above the cdf; take the last
                            // grade with positive mass.
                            config.grade_probs.iter().rposition(|p| *p > 0.0).unwrap_or(0)
                        }) as u8;
                    let mean = f64::from(grade) / f64::from(MAX_GRADE);
                    let values = (0..config.feature_dim)
                        .map(|j| {
                            if j < config.informative_dims {
                                mean + noise.sample(&mut rng)
                            } else {
                                standard.sample(&mut rng)
                            }
                        })
                        .collect();
                    SyntheticDoc {
                        doc_id: format!("d{di:0dw$}"),
                        grade,
                        features: FeatureVector::new(values).expect("finite draws"),
                    }
                })
                .collect();
            SyntheticQuery {
                query_id: format!("q{qi:0qw$}"),
                docs,
            }
        })
        .collect();
    Ok(SyntheticWorld {
        config: config.clone(),
        queries,
    })
}

/// Ranks every query with the logging policy. Clicks are left unset.
pub fn apply_logging_policy(
    world: &SyntheticWorld,
    policy: &PolicyConfig,
) -> Result<Vec<Impression>> {
    policy.validate()?;
    let alpha = policy.alpha;
    Ok(world
        .queries
        .iter()
        .enumerate()
        .map(|(qi, q)| {
            let mut rng = seed::stream_rng(policy.seed, "policy", qi as u64);
            let scores: Vec<f64> = q
                .docs
                .iter()
                .map(|d| {
                    let u: f64 = rng.random();
                    alpha * f64::from(d.grade) / f64::from(MAX_GRADE) + (1.0 - alpha) * u
                })
                .collect();
            // Doc ids are zero-padded, so index order is doc_id order.
            let mut order: Vec<usize> = (0..q.docs.len()).collect();
            order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
            let mut positions = vec![0; q.docs.len()];
            for (rank, &i) in order.iter().enumerate() {
                positions[i] = rank + 1;
            }
            Impression {
                query_id: q.query_id.clone(),
                entries: q
                    .docs
                    .iter()
                    .zip(positions)
                    .map(|(d, position)| ImpressionEntry {
                        doc_id: d.doc_id.clone(),
                        features: d.features.clone(),
                        position,
                        clicked: false,
                    })
                    .collect(),
            }
        })
        .collect())
}

/// Samples clicks for logged impressions of `world`.
pub fn simulate_clicks(
    world: &SyntheticWorld,
    impressions: &[Impression],
    click: &ClickConfig,
) -> Result<Vec<Impression>> {
    click.validate()?;
    impressions
        .iter()
        .map(|imp| {
            imp.validate_positions()?;
            let qi = world.query_index(&imp.query_id).ok_or_else(|| {
                Error::validation(format!("query {} is not part of the world", imp.query_id))
            })?;
            let mut rng = seed::stream_rng(click.seed, "clicks", qi as u64);
            let entries = imp
                .entries
                .iter()
                .map(|e| {
                    let grade = world.grade_of(&imp.query_id, &e.doc_id).ok_or_else(|| {
                        Error::validation(format!(
                            "doc {} of query {} is not part of the world",
                            e.doc_id, imp.query_id
                        ))
                    })?;
                    let p = click.click_probability(e.position, grade);
                    let u: f64 = rng.random();
                    Ok(ImpressionEntry {
                        clicked: u < p,
                        ..e.clone()
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Impression {
                query_id: imp.query_id.clone(),
                entries,
            })
        })
        .collect()
}

/// Pearson correlation between true grade and reciprocal position over every
/// logged document.
pub fn measure_position_relevance_correlation(
    world: &SyntheticWorld,
    impressions: &[Impression],
) -> Result<f64> {
    let mut pairs = Vec::new();
    for imp in impressions {
        for e in &imp.entries {
            let g = world.grade_of(&imp.query_id, &e.doc_id).ok_or_else(|| {
                Error::validation(format!("no grade for {}/{}", imp.query_id, e.doc_id))
            })?;
            pairs.push((f64::from(g), 1.0 / e.position as f64));
        }
    }
    pearson(&pairs).ok_or_else(|| {
        Error::validation("correlation undefined: grade or position has zero variance")
    })
}

fn pearson(pairs: &[(f64, f64)]) -> Option<f64> {
    let n = pairs.len() as f64;
    if pairs.len() < 2 {
        return None;
    }
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for &(x, y) in pairs {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn world(n: usize, probs: [f64; 5], seed: u64) -> SyntheticWorld {
        generate_world(&WorldConfig {
            n_queries: n,
            grade_probs: probs,
            seed,
            ..WorldConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn degenerate_grade_distribution() {
        let w = world(20, [1.0, 0.0, 0.0, 0.0, 0.0], 3);
        assert!(w.queries.iter().flat_map(|q| &q.docs).all(|d| d.grade == 0));
    }

    #[test]
    fn noiseless_grade_four_features_are_one() {
        let w = generate_world(&WorldConfig {
            n_queries: 5,
            feature_dim: 4,
            informative_dims: 4,
            feature_noise_sigma: 0.0,
            grade_probs: [0.0, 0.0, 0.0, 0.0, 1.0],
            ..WorldConfig::default()
        })
        .unwrap();
        for d in w.queries.iter().flat_map(|q| &q.docs) {
            assert_eq!(d.features.as_slice(), &[1.0; 4]);
        }
    }

    #[test]
    fn uniform_grade_frequencies() {
        let w = generate_world(&WorldConfig {
            n_queries: 1000,
            docs_per_query: 10,
            grade_probs: [0.2; 5],
            seed: 11,
            ..WorldConfig::default()
        })
        .unwrap();
        let mut counts = [0usize; 5];
        for d in w.queries.iter().flat_map(|q| &q.docs) {
            counts[d.grade as usize] += 1;
        }
        let tol = 3.0 * (0.2f64 * 0.8 / 10_000.0).sqrt();
        for c in counts {
            assert!((c as f64 / 10_000.0 - 0.2).abs() <= tol, "{counts:?}");
        }
    }

    #[test]
    fn config_validation() {
        let bad = WorldConfig {
            docs_per_query: 1,
            ..WorldConfig::default()
        };
        assert!(matches!(generate_world(&bad), Err(Error::Validation(_))));
        let bad = WorldConfig {
            informative_dims: 17,
            ..WorldConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = WorldConfig {
            grade_probs: [0.5, 0.5, 0.1, 0.0, 0.0],
            ..WorldConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!(PolicyConfig { alpha: 1.5, seed: 0 }.validate().is_err());
        assert!(ClickConfig {
            epsilon: 1.0,
            ..ClickConfig::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn generation_is_deterministic() {
        assert_eq!(world(30, [0.2; 5], 5), world(30, [0.2; 5], 5));
        assert_ne!(world(30, [0.2; 5], 5), world(30, [0.2; 5], 6));
    }

    #[test]
    fn oracle_policy_sorts_by_grade() {
        let mut w = world(1, [0.2; 5], 0);
        let grades = [1u8, 4, 0, 3, 2];
        w.queries[0].docs.truncate(5);
        for (d, g) in w.queries[0].docs.iter_mut().zip(grades) {
            d.grade = g;
        }
        let imps = apply_logging_policy(&w, &PolicyConfig { alpha: 1.0, seed: 9 }).unwrap();
        let pos: Vec<usize> = imps[0].entries.iter().map(|e| e.position).collect();
        assert_eq!(pos, [4, 1, 5, 2, 3]);
    }

    #[test]
    fn oracle_policy_tie_break_by_doc_id() {
        let w = world(3, [0.0, 0.0, 1.0, 0.0, 0.0], 0);
        let imps = apply_logging_policy(&w, &PolicyConfig { alpha: 1.0, seed: 2 }).unwrap();
        for imp in imps {
            let pos: Vec<usize> = imp.entries.iter().map(|e| e.position).collect();
            assert_eq!(pos, (1..=10).collect::<Vec<_>>());
        }
    }

    #[test]
    fn random_policy_is_uniform_over_top_slot() {
        let w = world(10_000, [0.2; 5], 1);
        let imps = apply_logging_policy(&w, &PolicyConfig { alpha: 0.0, seed: 4 }).unwrap();
        let n = 10.0;
        let mut top = [0usize; 10];
        for imp in &imps {
            imp.validate_positions().unwrap();
            let i = imp.entries.iter().position(|e| e.position == 1).unwrap();
            top[i] += 1;
        }
        let p: f64 = 1.0 / n;
        let tol = 3.0 * (p * (1.0 - p) / 10_000.0).sqrt();
        for c in top {
            assert!((c as f64 / 10_000.0 - p).abs() <= tol, "{top:?}");
        }
    }

    #[test]
    fn click_extremes() {
        let w = world(50, [0.5, 0.0, 0.0, 0.0, 0.5], 2);
        let imps = apply_logging_policy(&w, &PolicyConfig { alpha: 0.3, seed: 1 }).unwrap();
        let cfg = ClickConfig {
            eta: 0.0,
            epsilon: 0.0,
            seed: 8,
        };
        let clicked = simulate_clicks(&w, &imps, &cfg).unwrap();
        for imp in &clicked {
            for e in &imp.entries {
                let g = w.grade_of(&imp.query_id, &e.doc_id).unwrap();
                assert_eq!(e.clicked, g == 4, "grade {g} clicked={}", e.clicked);
            }
        }
    }

    #[test]
    fn click_rate_at_position_two() {
        let w = world(2000, [0.0, 0.0, 0.0, 0.0, 1.0], 3);
        let imps = apply_logging_policy(&w, &PolicyConfig { alpha: 0.0, seed: 1 }).unwrap();
        let cfg = ClickConfig {
            eta: 1.0,
            epsilon: 0.0,
            seed: 5,
        };
        // Ten clicked samples per query: 20k draws at position 2 over ten worlds
        // would be slow, so resample clicks with fresh seeds.
        let mut clicks = 0usize;
        let mut total = 0usize;
        for s in 0..10 {
            let c = simulate_clicks(&w, &imps, &ClickConfig { seed: s, ..cfg.clone() }).unwrap();
            for imp in &c {
                for e in imp.entries.iter().filter(|e| e.position == 2) {
                    clicks += usize::from(e.clicked);
                    total += 1;
                }
            }
        }
        assert_eq!(total, 20_000);
        let tol = 3.0 * (0.25f64 / 20_000.0).sqrt();
        assert!((clicks as f64 / total as f64 - 0.5).abs() <= tol);
    }

    #[test]
    fn correlation_under_random_and_oracle_policies() {
        let w = world(5000, [0.2; 5], 7);
        let random = apply_logging_policy(&w, &PolicyConfig { alpha: 0.0, seed: 1 }).unwrap();
        let r0 = measure_position_relevance_correlation(&w, &random).unwrap();
        assert!(r0.abs() <= 0.02, "{r0}");
        let oracle = apply_logging_policy(&w, &PolicyConfig { alpha: 1.0, seed: 1 }).unwrap();
        let r1 = measure_position_relevance_correlation(&w, &oracle).unwrap();
        assert!(r1 > r0);
    }

    #[test]
    fn correlation_of_distinct_grade_rankings() {
        // Five docs with grades 0..4 per query, ranked by grade: the correlation
        // is that of the fixed sequence (4,3,2,1,0) against (1, 1/2, ..., 1/5).
        let mut w = world(200, [0.2; 5], 2);
        for q in &mut w.queries {
            q.docs.truncate(5);
            for (g, d) in q.docs.iter_mut().enumerate() {
                d.grade = g as u8;
            }
        }
        let imps = apply_logging_policy(&w, &PolicyConfig { alpha: 1.0, seed: 0 }).unwrap();
        let r = measure_position_relevance_correlation(&w, &imps).unwrap();
        let pairs: Vec<(f64, f64)> = (0..5).map(|i| ((4 - i) as f64, 1.0 / (i + 1) as f64)).collect();
        let expected = pearson(&pairs).unwrap();
        assert!((r - expected).abs() < 1e-12);
        assert!(r > 0.9);
    }

    #[test]
    fn correlation_undefined_for_constant_grades() {
        let w = world(10, [0.0, 1.0, 0.0, 0.0, 0.0], 0);
        let imps = apply_logging_policy(&w, &PolicyConfig { alpha: 0.5, seed: 0 }).unwrap();
        assert!(measure_position_relevance_correlation(&w, &imps).is_err());
    }
}
