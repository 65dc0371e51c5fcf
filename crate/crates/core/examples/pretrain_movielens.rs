//! Pre-trains item embeddings on the MovieLens-100K attribute graph and
//! prints the loss curve and the frozen neighbor thresholds.
//!
//! Usage: cargo run --release --example pretrain_movielens -- [data/ml-100k] [epochs]

use std::path::PathBuf;
use std::time::Instant;

use ramgnn::ingest::{build_shared_attribute_graph, default_item_specs, load_movielens};
use ramgnn::pretrain::{pretrain_run, PretrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "data/ml-100k".into()));
    let epochs: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(60);

    let ds = load_movielens(&dir)?;
    let graph = build_shared_attribute_graph(&ds.items, &default_item_specs())?;
    println!(
        "item graph: {} entities, {} quads, relations {:?}",
        graph.entity_count(),
        graph.quad_count(),
        graph.rel_type_names()
    );

    let mut cfg = PretrainConfig {
        epochs,
        ..Default::default()
    };
    if let Some(c) = args.next() {
        cfg.composition = c.parse()?;
    }
    let start = Instant::now();
    let out = pretrain_run(&graph, &cfg)?;
    for l in out.losses.iter().step_by(10) {
        println!(
            "epoch {:>4}  loss {:>12.4}  gnn {:>12.4}  sim {:>12.4}",
            l.epoch, l.total, l.gnn, l.sim
        );
    }
    for (t, arm) in out.bandit.arms().iter().enumerate() {
        println!(
            "{:<14} k={:<4} bounds={:?} capped={}",
            graph.rel_type_names()[t],
            arm.k(),
            arm.bounds(),
            arm.hit_cap()
        );
    }
    println!("similarity loss active through epoch {}", out.sim_epochs);
    println!("{:.2}s", start.elapsed().as_secs_f64());
    Ok(())
}
