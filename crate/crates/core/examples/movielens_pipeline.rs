//! Runs the whole pipeline (ingest, pre-training, fine-tuning, evaluation)
//! on MovieLens-100K in a chosen mode and prints the metrics next to the
//! popularity baseline.
//!
//! Usage: cargo run --release --example movielens_pipeline -- [data/ml-100k] [full|single|rns-only|rel-only]

use ramgnn::pipeline::{run_stages, PipelineConfig, Stage};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let path = args.next().unwrap_or_else(|| "data/ml-100k".into());
    let mode = args.next().unwrap_or_else(|| "full".into());
    let cfg = PipelineConfig::from_toml(&format!(
        r#"
        [run]
        mode = "{mode}"

        [dataset]
        kind = "movielens"
        path = "{path}"

        [pretrain]
        epochs = 30

        [finetune]
        lr = 0.02
        max_epochs = 150
        min_epochs = 100

        [eval]
        protocol = "full-ranking"
        "#
    ))?;

    let art = run_stages(&cfg, Stage::Evaluate)?;
    let r = &art.report;
    println!(
        "mode {}  users {}  items {}",
        r.mode, r.dataset.users, r.dataset.items
    );
    for (m, p) in r.metrics.iter().zip(&r.popularity) {
        println!(
            "@{:<2}  hr {:.4}  mrr {:.4}  ndcg {:.4}  (popularity hr {:.4})",
            m.k, m.hr, m.mrr, m.ndcg, p.hr
        );
    }
    Ok(())
}
