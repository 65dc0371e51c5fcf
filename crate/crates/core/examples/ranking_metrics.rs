//! Scores one held-out item among candidates and prints HR, MRR and NDCG
//! at several cutoffs.
//!
//! Usage: cargo run --release --example ranking_metrics

use ramgnn::metrics::{rank_metrics, MetricsError, RankedCase};

fn main() -> Result<(), MetricsError> {
    let case = RankedCase {
        user: 0,
        target: 7,
        candidates: (0..10).collect(),
        scores: vec![0.9, 0.1, 0.8, 0.3, 0.75, 0.2, 0.0, 0.7, 0.4, 0.5],
    };
    println!("ranking {:?}", case.ranking());
    println!("target rank {}", case.target_rank()?);
    for k in [1, 3, 5, 10] {
        let m = rank_metrics(&case, k)?;
        println!(
            "@{k:<2} hr {:.0}  mrr {:.3}  ndcg {:.3}",
            m.hr, m.mrr, m.ndcg
        );
    }
    Ok(())
}
