//! Fine-tunes the recommender on a block-diagonal toy: users 0-1 interact
//! with items 0-3, users 2-3 with items 4-7. Each user's fourth item is
//! held out and should come back at the top of the list.
//!
//! Usage: cargo run --release --example finetune_toy

use ramgnn::finetune::{train_finetune, FinetuneConfig, SideInit};
use ramgnn::graph::InteractionGraph;
use ramgnn::ingest::{Split, TestCase};
use ramgnn::metrics::Protocol;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut train = InteractionGraph::new(4, 8);
    let mut test = Vec::new();
    for u in 0..4u32 {
        let block = if u < 2 { 0 } else { 4 };
        let held = block + u % 2 * 3;
        for i in block..block + 4 {
            if i != held {
                train.add(u, i, None)?;
            }
        }
        test.push(TestCase {
            user: u,
            target: held,
            negatives: Vec::new(),
        });
    }
    let split = Split {
        train,
        validation: Vec::new(),
        test,
    };

    let d = 8;
    let values_of = vec![Vec::new(); 8];
    let users = SideInit::random(4, 1, d, values_of[..4].to_vec(), 7, 0);
    let items = SideInit::random(8, 1, d, values_of, 7, 1);
    let cfg = FinetuneConfig {
        lr: 0.02,
        max_epochs: 200,
        seed: 7,
        ..Default::default()
    };
    let out = train_finetune(&split, &users, &items, &cfg, Protocol::FullRanking)?;
    for e in out.epochs.iter().step_by(40) {
        println!("epoch {:>3}  bpr {:.4}", e.epoch, e.loss);
    }
    for case in &split.test {
        let seen = split.train.items_of(case.user);
        let top = out.model.recommend_topk(case.user, 2, seen);
        println!(
            "user {}  held-out {}  top {:?}",
            case.user, case.target, top
        );
    }
    Ok(())
}
