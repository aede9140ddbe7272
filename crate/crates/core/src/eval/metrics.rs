use std::cmp::Ordering;

/// Exponential gain `2^g - 1`.
#[inline]
pub fn gain(grade: u8) -> f64 {
    f64::from((1u32 << grade) - 1)
}

/// `sum_{i <= min(k, n)} (2^g_i - 1) / log2(i + 1)` over grades in ranked order.
pub fn dcg_at_k(grades: &[u8], k: usize) -> f64 {
    grades
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &g)| gain(g) / ((i + 2) as f64).log2())
        .sum()
}

pub fn ideal_dcg_at_k(grades: &[u8], k: usize) -> f64 {
    let mut sorted = grades.to_vec();
    sorted.sort_unstable_by(|a, b| b.cmp(a));
    dcg_at_k(&sorted, k)
}

/// DCG normalized by the ideal ordering; `0.0` when no document has gain.
pub fn ndcg_at_k(grades: &[u8], k: usize) -> f64 {
    let ideal = ideal_dcg_at_k(grades, k);
    if ideal == 0.0 {
        0.0
    } else {
        dcg_at_k(grades, k) / ideal
    }
}

/// Indices sorted by descending score; ties go to the smaller key.
pub fn rank_by_scores<K: Ord>(scores: &[f64], keys: &[K]) -> Vec<usize> {
    debug_assert_eq!(scores.len(), keys.len());
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| match scores[b].total_cmp(&scores[a]) {
        Ordering::Equal => keys[a].cmp(&keys[b]),
        o => o,
    });
    idx
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn dcg_examples() {
        assert_eq!(dcg_at_k(&[0, 0, 0], 10), 0.0);
        assert!((dcg_at_k(&[3, 2], 2) - 8.8928).abs() < 1e-4);
        assert_eq!(dcg_at_k(&[4], 10), 15.0);
    }

    #[test]
    fn ndcg_examples() {
        assert_eq!(ndcg_at_k(&[4, 3, 1, 0], 10), 1.0);
        assert_eq!(ndcg_at_k(&[0, 0], 10), 0.0);
        assert!((ndcg_at_k(&[2, 3], 2) - 0.8340).abs() < 1e-4);
    }

    #[test]
    fn ranking_ties_use_keys() {
        let order = rank_by_scores(&[1.0, 2.0, 1.0, 2.0], &["d", "c", "a", "b"]);
        assert_eq!(order, vec![3, 1, 2, 0]);
    }

    proptest! {
        #[test]
        fn ndcg_bounded(grades in proptest::collection::vec(0u8..=4, 0..15), k in 1usize..12) {
            let v = ndcg_at_k(&grades, k);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&v));
            prop_assert!(dcg_at_k(&grades, k) >= 0.0);
        }

        #[test]
        fn promoting_a_better_document_never_hurts(
            grades in proptest::collection::vec(0u8..=4, 2..12),
            i in 0usize..12,
            j in 0usize..12,
            k in 1usize..12,
        ) {
            let (i, j) = (i % grades.len(), j % grades.len());
            let (early, late) = (i.min(j), i.max(j));
            prop_assume!(grades[late] > grades[early]);
            let mut swapped = grades.clone();
            swapped.swap(early, late);
            prop_assert!(dcg_at_k(&swapped, k) >= dcg_at_k(&grades, k));
        }

        #[test]
        fn trailing_zero_grades_do_not_change_ndcg(
            grades in proptest::collection::vec(0u8..=4, 1..10),
            extra in 0usize..5,
        ) {
            let k = grades.len();
            let mut padded = grades.clone();
            padded.extend(std::iter::repeat_n(0, extra));
            prop_assert!((ndcg_at_k(&padded, k) - ndcg_at_k(&grades, k)).abs() < 1e-12);
        }
    }
}
