//! HR@K, MRR@K and NDCG@K for single-target ranking, plus whole-model
//! evaluation over a split.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::InteractionGraph;
use crate::ingest::{Split, TestCase};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("target item {0} is not among the candidates")]
    TargetAbsent(u32),
    #[error("K={k} outside 1..={candidates}")]
    BadK { k: usize, candidates: usize },
    #[error("{0} scores for {1} candidates")]
    ScoreCount(usize, usize),
    #[error("no test cases")]
    EmptyTestSet,
}

/// Higher score first; `-0.0` and `0.0` compare equal so they fall through
/// to the id tie-break.
pub fn score_desc(a: f64, b: f64) -> std::cmp::Ordering {
    (b + 0.0).total_cmp(&(a + 0.0))
}

/// A held-out target among scored candidates.
#[derive(Clone, Debug, PartialEq)]
pub struct RankedCase {
    pub user: u32,
    pub target: u32,
    pub candidates: Vec<u32>,
    pub scores: Vec<f64>,
}

impl RankedCase {
    /// 1-based rank of the target; ties go to the lower item id.
    pub fn target_rank(&self) -> Result<usize, MetricsError> {
        if self.scores.len() != self.candidates.len() {
            return Err(MetricsError::ScoreCount(
                self.scores.len(),
                self.candidates.len(),
            ));
        }
        let pos = self
            .candidates
            .iter()
            .position(|&c| c == self.target)
            .ok_or(MetricsError::TargetAbsent(self.target))?;
        let st = self.scores[pos];
        let ahead = self
            .candidates
            .iter()
            .zip(&self.scores)
            .filter(|&(&c, &s)| c != self.target && (s > st || (s == st && c < self.target)))
            .count();
        Ok(ahead + 1)
    }

    /// Candidates in ranked order.
    pub fn ranking(&self) -> Vec<u32> {
        let mut order: Vec<usize> = (0..self.candidates.len()).collect();
        order.sort_by(|&a, &b| {
            score_desc(self.scores[a], self.scores[b])
                .then(self.candidates[a].cmp(&self.candidates[b]))
        });
        order.into_iter().map(|i| self.candidates[i]).collect()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CaseMetrics {
    pub hr: f64,
    pub mrr: f64,
    pub ndcg: f64,
}

/// Metrics of one target rank at cutoff `k`.
pub fn metrics_at_rank(rank: usize, k: usize) -> CaseMetrics {
    if rank == 0 || rank > k {
        return CaseMetrics::default();
    }
    CaseMetrics {
        hr: 1.0,
        mrr: 1.0 / rank as f64,
        ndcg: 1.0 / ((rank + 1) as f64).log2(),
    }
}

pub fn rank_metrics(case: &RankedCase, k: usize) -> Result<CaseMetrics, MetricsError> {
    if k == 0 || k > case.candidates.len() {
        return Err(MetricsError::BadK {
            k,
            candidates: case.candidates.len(),
        });
    }
    Ok(metrics_at_rank(case.target_rank()?, k))
}

/// Anything that scores every item for a user; higher ranks first.
pub trait Scorer {
    fn item_count(&self) -> usize;
    fn score_all(&self, user: u32) -> Vec<f64>;
}

/// Ranks items by training interaction count.
#[derive(Clone, Debug)]
pub struct Popularity {
    counts: Vec<f64>,
}

impl Popularity {
    pub fn fit(train: &InteractionGraph) -> Self {
        Self {
            counts: train
                .item_popularity()
                .into_iter()
                .map(|c| c as f64)
                .collect(),
        }
    }
}

impl Scorer for Popularity {
    fn item_count(&self) -> usize {
        self.counts.len()
    }

    fn score_all(&self, _user: u32) -> Vec<f64> {
        self.counts.clone()
    }
}

/// Candidate set per test case.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    /// Target plus the split's sampled negatives.
    Sampled,
    /// Every item except the user's training and validation items.
    FullRanking,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub k: usize,
    pub hr: f64,
    pub mrr: f64,
    pub ndcg: f64,
}

fn build_case(
    scorer: &dyn Scorer,
    split: &Split,
    case: &TestCase,
    protocol: Protocol,
) -> RankedCase {
    let all = scorer.score_all(case.user);
    let candidates: Vec<u32> = match protocol {
        Protocol::Sampled => std::iter::once(case.target)
            .chain(case.negatives.iter().copied())
            .collect(),
        Protocol::FullRanking => {
            let seen = split.seen_items(case.user);
            (0..scorer.item_count() as u32)
                .filter(|i| *i == case.target || seen.binary_search(i).is_err())
                .collect()
        }
    };
    let scores = candidates.iter().map(|&i| all[i as usize]).collect();
    RankedCase {
        user: case.user,
        target: case.target,
        candidates,
        scores,
    }
}

/// Mean metrics over `cases` for each cutoff.
pub fn evaluate_cases(
    scorer: &dyn Scorer,
    split: &Split,
    cases: &[TestCase],
    ks: &[usize],
    protocol: Protocol,
) -> Result<Vec<MetricSummary>, MetricsError> {
    if cases.is_empty() {
        return Err(MetricsError::EmptyTestSet);
    }
    let mut sums = vec![CaseMetrics::default(); ks.len()];
    for case in cases {
        let ranked = build_case(scorer, split, case, protocol);
        for (slot, &k) in sums.iter_mut().zip(ks) {
            let m = rank_metrics(&ranked, k)?;
            slot.hr += m.hr;
            slot.mrr += m.mrr;
            slot.ndcg += m.ndcg;
        }
    }
    let n = cases.len() as f64;
    Ok(ks
        .iter()
        .zip(sums)
        .map(|(&k, s)| MetricSummary {
            k,
            hr: s.hr / n,
            mrr: s.mrr / n,
            ndcg: s.ndcg / n,
        })
        .collect())
}

/// Mean metrics over the split's test cases.
pub fn evaluate_model(
    scorer: &dyn Scorer,
    split: &Split,
    ks: &[usize],
    protocol: Protocol,
) -> Result<Vec<MetricSummary>, MetricsError> {
    evaluate_cases(scorer, split, &split.test, ks, protocol)
}

/// `metric<TAB>K<TAB>value` lines.
pub fn write_metrics_tsv<W: Write>(mut w: W, summaries: &[MetricSummary]) -> std::io::Result<()> {
    for s in summaries {
        writeln!(w, "hr\t{}\t{:.6}", s.k, s.hr)?;
        writeln!(w, "mrr\t{}\t{:.6}", s.k, s.mrr)?;
        writeln!(w, "ndcg\t{}\t{:.6}", s.k, s.ndcg)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn case_with_rank(rank: usize, n: usize) -> RankedCase {
        let candidates: Vec<u32> = (0..n as u32).collect();
        let scores = candidates.iter().map(|&c| -(c as f64)).collect();
        RankedCase {
            user: 0,
            target: rank as u32 - 1,
            candidates,
            scores,
        }
    }

    #[test]
    fn closed_form_examples() {
        let m = rank_metrics(&case_with_rank(1, 100), 10).unwrap();
        assert_eq!(
            m,
            CaseMetrics {
                hr: 1.0,
                mrr: 1.0,
                ndcg: 1.0
            }
        );
        let m = rank_metrics(&case_with_rank(4, 100), 10).unwrap();
        assert_eq!(m.hr, 1.0);
        assert_eq!(m.mrr, 0.25);
        assert!((m.ndcg - 0.430_676_558).abs() < 1e-9);
        let m = rank_metrics(&case_with_rank(15, 100), 10).unwrap();
        assert_eq!(m, CaseMetrics::default());
    }

    #[test]
    fn absent_target_and_bad_k_rejected() {
        let mut c = case_with_rank(1, 5);
        assert!(matches!(
            rank_metrics(&c, 6),
            Err(MetricsError::BadK { .. })
        ));
        assert!(matches!(
            rank_metrics(&c, 0),
            Err(MetricsError::BadK { .. })
        ));
        c.target = 99;
        assert_eq!(rank_metrics(&c, 3), Err(MetricsError::TargetAbsent(99)));
    }

    #[test]
    fn ties_favor_lower_ids() {
        let c = RankedCase {
            user: 0,
            target: 5,
            candidates: vec![9, 5, 2],
            scores: vec![1.0, 1.0, 1.0],
        };
        assert_eq!(c.target_rank().unwrap(), 2);
        assert_eq!(c.ranking(), [2, 5, 9]);
    }

    proptest! {
        #[test]
        fn monotone_in_k_and_bounded(scores in prop::collection::vec(-5i32..5, 2..40), t in 0usize..40) {
            let n = scores.len();
            let c = RankedCase {
                user: 0,
                target: (t % n) as u32,
                candidates: (0..n as u32).collect(),
                scores: scores.iter().map(|&s| s as f64).collect(),
            };
            let mut prev = CaseMetrics::default();
            for k in 1..=n {
                let m = rank_metrics(&c, k).unwrap();
                prop_assert!(m.hr >= prev.hr && m.mrr >= prev.mrr && m.ndcg >= prev.ndcg);
                prop_assert!(m.hr >= m.ndcg && m.ndcg >= 0.0 && m.hr >= m.mrr && m.mrr >= 0.0);
                prev = m;
            }
            // rank agrees with the position in the sorted ranking
            let pos = c.ranking().iter().position(|&x| x == c.target).unwrap() + 1;
            prop_assert_eq!(c.target_rank().unwrap(), pos);
        }
    }
}
