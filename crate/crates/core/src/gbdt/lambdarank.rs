use std::ops::Range;

use crate::eval::{gain, ideal_dcg_at_k, rank_by_scores};

fn discount(rank: usize, truncation: usize) -> f64 {
    if rank < truncation {
        1.0 / ((rank + 2) as f64).log2()
    } else {
        0.0
    }
}

/// Current 0-based rank of every document, by descending score with ties
/// going to the earlier row.
fn ranks_of(scores: &[f64]) -> Vec<usize> {
    let keys: Vec<usize> = (0..scores.len()).collect();
    let order = rank_by_scores(scores, &keys);
    let mut rank = vec![0; scores.len()];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r;
    }
    rank
}

/// |ΔnDCG@truncation| from exchanging documents `i` and `j` in the ranking
/// induced by `scores`. Zero when the query has no ideal gain.
pub fn swap_delta_ndcg(grades: &[u8], scores: &[f64], i: usize, j: usize, truncation: usize) -> f64 {
    let ideal = ideal_dcg_at_k(grades, truncation);
    if ideal == 0.0 {
        return 0.0;
    }
    let rank = ranks_of(scores);
    pair_delta(grades, &rank, i, j, truncation) / ideal
}

fn pair_delta(grades: &[u8], rank: &[usize], i: usize, j: usize, truncation: usize) -> f64 {
    ((gain(grades[i]) - gain(grades[j]))
        * (discount(rank[i], truncation) - discount(rank[j], truncation)))
        .abs()
}

/// LambdaRank gradients and hessians of the nDCG surrogate.
///
/// For each pair with `grade_i > grade_j` in a group,
/// `λ = −σ·|ΔnDCG|/(1 + exp(σ(s_i − s_j)))` is added to `i` and subtracted
/// from `j`; both receive the hessian `σ²·|ΔnDCG|·ρ(1−ρ)`. Groups without
/// ideal gain contribute nothing.
pub fn lambda_gradients(
    scores: &[f64],
    grades: &[u8],
    groups: &[Range<usize>],
    truncation: usize,
    sigma: f64,
) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(scores.len(), grades.len());
    let mut grad = vec![0.0; scores.len()];
    let mut hess = vec![0.0; scores.len()];
    for group in groups {
        let s = &scores[group.clone()];
        let g = &grades[group.clone()];
        let ideal = ideal_dcg_at_k(g, truncation);
        if ideal == 0.0 {
            continue;
        }
        let rank = ranks_of(s);
        let (gr, hs) = (&mut grad[group.clone()], &mut hess[group.clone()]);
        for i in 0..s.len() {
            for j in 0..s.len() {
                if g[i] <= g[j] {
                    continue;
                }
                let delta = pair_delta(g, &rank, i, j, truncation) / ideal;
                if delta == 0.0 {
                    continue;
                }
                let rho = 1.0 / (1.0 + (sigma * (s[i] - s[j])).exp());
                let lambda = -sigma * delta * rho;
                gr[i] += lambda;
                gr[j] -= lambda;
                let h = sigma * sigma * delta * rho * (1.0 - rho);
                hs[i] += h;
                hs[j] += h;
            }
        }
    }
    (grad, hess)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::dcg_at_k;
    use proptest::prelude::*;

    #[test]
    fn two_documents_equal_scores() {
        let (g, h) = lambda_gradients(&[0.0, 0.0], &[1, 0], &[0..2], 10, 1.0);
        // Swapping the pair moves gain 1 from rank 1 to rank 2.
        let delta = 1.0 - 1.0 / 3f64.log2();
        assert!((g[0] - (-delta / 2.0)).abs() < 1e-15);
        assert!((g[1] - delta / 2.0).abs() < 1e-15);
        assert!((h[0] - delta / 4.0).abs() < 1e-15);
        assert_eq!(h[0], h[1]);
    }

    #[test]
    fn degenerate_queries_have_no_gradient() {
        let (g, h) = lambda_gradients(&[0.3], &[4], &[0..1], 10, 1.0);
        assert_eq!((g, h), (vec![0.0], vec![0.0]));
        let (g, h) = lambda_gradients(&[0.3, 0.1, -2.0], &[2, 2, 2], &[0..3], 10, 1.0);
        assert!(g.iter().chain(&h).all(|&v| v == 0.0));
        let (g, _) = lambda_gradients(&[0.3, 0.1], &[0, 0], &[0..2], 10, 1.0);
        assert!(g.iter().all(|&v| v == 0.0));
    }

    /// Recomputes |ΔnDCG| by physically swapping two documents in the ranked
    /// grade list.
    fn swapped_ndcg_difference(grades: &[u8], scores: &[f64], i: usize, j: usize, k: usize) -> f64 {
        let keys: Vec<usize> = (0..scores.len()).collect();
        let order = rank_by_scores(scores, &keys);
        let ranked: Vec<u8> = order.iter().map(|&d| grades[d]).collect();
        let (ri, rj) = (
            order.iter().position(|&d| d == i).unwrap(),
            order.iter().position(|&d| d == j).unwrap(),
        );
        let mut swapped = ranked.clone();
        swapped.swap(ri, rj);
        (dcg_at_k(&ranked, k) - dcg_at_k(&swapped, k)).abs() / ideal_dcg_at_k(grades, k)
    }

    proptest! {
        #[test]
        fn gradients_sum_to_zero_per_query(
            docs in proptest::collection::vec((0u8..=4, -3.0f64..3.0), 1..40),
            cut in 0usize..40,
            sigma in 0.1f64..3.0,
        ) {
            let (grades, scores): (Vec<u8>, Vec<f64>) = docs.into_iter().unzip();
            let cut = cut.min(grades.len());
            let mut groups = vec![];
            if cut > 0 { groups.push(0..cut); }
            if cut < grades.len() { groups.push(cut..grades.len()); }
            let (g, h) = lambda_gradients(&scores, &grades, &groups, 10, sigma);
            for r in &groups {
                let sum: f64 = g[r.clone()].iter().sum();
                prop_assert!(sum.abs() <= 1e-12, "sum {sum}");
            }
            prop_assert!(h.iter().all(|&v| v >= 0.0));
        }

        #[test]
        fn swap_delta_matches_dcg_oracle(
            docs in proptest::collection::vec((0u8..=4, -3.0f64..3.0), 2..25),
            a in 0usize..25,
            b in 0usize..25,
            k in 1usize..12,
        ) {
            let (grades, scores): (Vec<u8>, Vec<f64>) = docs.into_iter().unzip();
            let (i, j) = (a % grades.len(), b % grades.len());
            prop_assume!(ideal_dcg_at_k(&grades, k) > 0.0);
            let got = swap_delta_ndcg(&grades, &scores, i, j, k);
            let expected = swapped_ndcg_difference(&grades, &scores, i, j, k);
            prop_assert!((got - expected).abs() <= 1e-12, "{got} vs {expected}");
        }
    }
}
