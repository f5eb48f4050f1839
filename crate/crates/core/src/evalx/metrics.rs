//! Single-target ranking metrics.

use std::collections::HashSet;

use thiserror::Error;

use crate::vocab::SemanticId;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("ranking contains {0:?} more than once")]
    DuplicateInRanking(SemanticId),
    #[error("K must be >= 1")]
    InvalidK,
}

fn target_rank(ranking: &[SemanticId], target: &SemanticId, k: usize) -> Result<Option<usize>, MetricError> {
    if k == 0 {
        return Err(MetricError::InvalidK);
    }
    let mut seen = HashSet::with_capacity(ranking.len());
    for sid in ranking {
        if !seen.insert(sid) {
            return Err(MetricError::DuplicateInRanking(sid.clone()));
        }
    }
    Ok(ranking.iter().position(|s| s == target).map(|p| p + 1))
}

/// 1 iff the target appears within the first `k` entries.
pub fn recall_at_k(ranking: &[SemanticId], target: &SemanticId, k: usize) -> Result<u32, MetricError> {
    Ok(match target_rank(ranking, target, k)? {
        Some(rank) if rank <= k => 1,
        _ => 0,
    })
}

/// `1 / log2(1 + rank)` when the target is within the cutoff, else 0. With a
/// single relevant item the ideal DCG is 1.
pub fn ndcg_at_k(ranking: &[SemanticId], target: &SemanticId, k: usize) -> Result<f64, MetricError> {
    Ok(match target_rank(ranking, target, k)? {
        Some(rank) if rank <= k => 1.0 / ((1 + rank) as f64).log2(),
        _ => 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ranking(n: u32) -> Vec<SemanticId> {
        (0..n).map(|i| SemanticId::new(vec![i])).collect()
    }

    fn at(rank: u32) -> SemanticId {
        SemanticId::new(vec![rank - 1])
    }

    #[test]
    fn recall_table() {
        let r = ranking(12);
        assert_eq!(recall_at_k(&r, &at(1), 1).unwrap(), 1);
        assert_eq!(recall_at_k(&r, &at(7), 5).unwrap(), 0);
        assert_eq!(recall_at_k(&r, &at(3), 10).unwrap(), 1);
        assert_eq!(recall_at_k(&r, &SemanticId::new(vec![99]), 10).unwrap(), 0);
    }

    #[test]
    fn ndcg_table() {
        let r = ranking(12);
        for k in [1, 5, 10] {
            assert_eq!(ndcg_at_k(&r, &at(1), k).unwrap(), 1.0);
        }
        assert_eq!(ndcg_at_k(&r, &at(3), 10).unwrap(), 0.5);
        assert_eq!(ndcg_at_k(&r, &at(6), 5).unwrap(), 0.0);
    }

    #[test]
    fn errors() {
        let mut r = ranking(3);
        assert_eq!(recall_at_k(&r, &at(1), 0), Err(MetricError::InvalidK));
        r.push(at(2));
        assert_eq!(ndcg_at_k(&r, &at(1), 3), Err(MetricError::DuplicateInRanking(at(2))));
    }

    #[test]
    fn monotone_in_k() {
        let r = ranking(20);
        for rank in 1..=20 {
            let t = at(rank);
            for k in 1..20 {
                assert!(recall_at_k(&r, &t, k).unwrap() <= recall_at_k(&r, &t, k + 1).unwrap());
                assert!(ndcg_at_k(&r, &t, k).unwrap() <= ndcg_at_k(&r, &t, k + 1).unwrap());
            }
            assert_eq!(recall_at_k(&r, &t, 1).unwrap() as f64, ndcg_at_k(&r, &t, 1).unwrap());
        }
    }
}
