use std::collections::HashSet;

use serde::Serialize;

use super::{ComplexModel, KgeError};
use crate::kg::IndexedTriple;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TripleRank {
    pub triple: IndexedTriple,
    /// Rank of the true subject among all subject substitutions.
    pub subject_rank: usize,
    /// Rank of the true object among all object substitutions.
    pub object_rank: usize,
}

/// Filtered link-prediction metrics over both corruption directions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankingReport {
    pub mrr: f64,
    pub hits_at_1: f64,
    pub hits_at_3: f64,
    pub hits_at_10: f64,
    pub mean_rank: f64,
    pub ranks: Vec<TripleRank>,
    pub filtered: bool,
}

/// Ranks every test triple against all subject and object substitutions,
/// skipping substitutions that are themselves in `filter`. Ties count
/// against the true triple.
pub fn evaluate_ranking(
    model: &ComplexModel,
    test: &[IndexedTriple],
    filter: &HashSet<IndexedTriple>,
) -> Result<RankingReport, KgeError> {
    if test.is_empty() {
        return Err(KgeError::EmptyEvaluation);
    }
    let n = model.n_entities() as u32;
    let mut ranks = Vec::with_capacity(test.len());
    for &t in test {
        model.check(t)?;
        if !filter.contains(&t) {
            return Err(KgeError::NotInFilter(t));
        }
        let target = model.score_unchecked(t);
        let mut object_rank = 1;
        let mut subject_rank = 1;
        for e in 0..n {
            if e != t.object {
                let c = IndexedTriple { object: e, ..t };
                if model.score_unchecked(c) >= target && !filter.contains(&c) {
                    object_rank += 1;
                }
            }
            if e != t.subject {
                let c = IndexedTriple { subject: e, ..t };
                if model.score_unchecked(c) >= target && !filter.contains(&c) {
                    subject_rank += 1;
                }
            }
        }
        ranks.push(TripleRank { triple: t, subject_rank, object_rank });
    }
    Ok(summarize(ranks))
}

pub(crate) fn summarize(ranks: Vec<TripleRank>) -> RankingReport {
    let all: Vec<usize> = ranks.iter().flat_map(|r| [r.subject_rank, r.object_rank]).collect();
    let (mrr, mean_rank, hits) = rank_metrics(&all);
    RankingReport { mrr, hits_at_1: hits[0], hits_at_3: hits[1], hits_at_10: hits[2], mean_rank, ranks, filtered: true }
}

/// (MRR, mean rank, [Hits@1, Hits@3, Hits@10]) of a non-empty rank list.
pub(crate) fn rank_metrics(ranks: &[usize]) -> (f64, f64, [f64; 3]) {
    let n = ranks.len() as f64;
    let mrr = ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n;
    let mean = ranks.iter().sum::<usize>() as f64 / n;
    let hits = [1, 3, 10].map(|c| ranks.iter().filter(|&&r| r <= c).count() as f64 / n);
    (mrr, mean, hits)
}
