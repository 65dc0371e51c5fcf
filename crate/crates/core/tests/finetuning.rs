use proptest::prelude::*;
use ramgnn::autodiff::Tensor;
use ramgnn::finetune::{train_finetune, FinetuneConfig, RecModel, SideInit};
use ramgnn::graph::InteractionGraph;
use ramgnn::ingest::{Split, TestCase};
use ramgnn::metrics::Protocol;
use ramgnn::rng;
use rand::Rng;

/// Users 0-1 with items 0-1, users 2-3 with items 2-3. One edge per block
/// is held out: `(0, 1)` and `(2, 3)`.
fn block_diagonal() -> Split {
    let mut train = InteractionGraph::new(4, 4);
    for (u, i) in [(0, 0), (1, 0), (1, 1), (2, 2), (3, 2), (3, 3)] {
        train.add(u, i, None).unwrap();
    }
    let test = [(0, 1), (2, 3)]
        .map(|(user, target)| TestCase {
            user,
            target,
            negatives: Vec::new(),
        })
        .to_vec();
    Split {
        train,
        validation: Vec::new(),
        test,
    }
}

/// Every block item of `u`, held out or trained, scores above both items of
/// the other block.
fn block_separated(model: &RecModel, u: u32) -> bool {
    let own = u / 2 * 2;
    let other = 2 - own;
    let lowest_own = model.score(u, own).min(model.score(u, own + 1));
    lowest_own > model.score(u, other).max(model.score(u, other + 1))
}

fn sides(seed: u64, d: usize) -> (SideInit, SideInit) {
    let none = vec![Vec::new(); 4];
    (
        SideInit::random(4, 1, d, none.clone(), seed, 0),
        SideInit::random(4, 1, d, none, seed, 1),
    )
}

fn toy_config(seed: u64) -> FinetuneConfig {
    FinetuneConfig {
        max_epochs: 200,
        seed,
        ..Default::default()
    }
}

#[test]
fn held_out_block_item_outranks_other_block() {
    let split = block_diagonal();
    for seed in 0..3 {
        let (users, items) = sides(seed, 16);
        let out = train_finetune(
            &split,
            &users,
            &items,
            &toy_config(seed),
            Protocol::FullRanking,
        )
        .unwrap();
        assert_eq!(out.epochs.len(), 200);
        let wins = (0..4).filter(|&u| block_separated(&out.model, u)).count();
        assert!(wins >= 3, "seed {seed}: {wins} of 4 users");
    }
}

/// Six training edges make a single epoch's mean BPR loss noisy, so the
/// curve is smoothed over disjoint 50-epoch blocks.
#[test]
fn smoothed_bpr_loss_does_not_increase() {
    let split = block_diagonal();
    for seed in 0..5 {
        let (users, items) = sides(seed, 16);
        let out = train_finetune(
            &split,
            &users,
            &items,
            &toy_config(seed),
            Protocol::FullRanking,
        )
        .unwrap();
        let losses: Vec<f64> = out.epochs.iter().map(|e| e.loss).collect();
        let blocks: Vec<f64> = losses
            .chunks(50)
            .map(|w| w.iter().sum::<f64>() / w.len() as f64)
            .collect();
        assert_eq!(blocks.len(), 4);
        for w in blocks.windows(2) {
            assert!(w[1] <= w[0], "seed {seed}: block means {blocks:?}");
        }
    }
}

#[test]
fn same_seed_gives_identical_parameters() {
    let split = block_diagonal();
    let (users, items) = sides(2, 8);
    let cfg = FinetuneConfig {
        max_epochs: 30,
        ..toy_config(2)
    };
    let a = train_finetune(&split, &users, &items, &cfg, Protocol::FullRanking).unwrap();
    let b = train_finetune(&split, &users, &items, &cfg, Protocol::FullRanking).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.model, b.model);
}

/// Full descending sort with ascending-id tie-break, then the first `k`.
fn argsort_prefix(scores: &[f64], exclude: &[u32], k: usize) -> Vec<u32> {
    let mut ids: Vec<u32> = (0..scores.len() as u32)
        .filter(|i| !exclude.contains(i))
        .collect();
    ids.sort_by(|&a, &b| {
        scores[b as usize]
            .partial_cmp(&scores[a as usize])
            .unwrap()
            .then(a.cmp(&b))
    });
    ids.truncate(k);
    ids
}

#[test]
fn topk_is_the_prefix_of_a_full_argsort() {
    for seed in 0..100u64 {
        let mut r = rng::stream(seed, 0x544F504B);
        let (nu, ni, d) = (
            r.random_range(1..6),
            r.random_range(1..40),
            r.random_range(1..5),
        );
        // coarse values so ties actually happen
        let mut coarse = |n: usize| {
            (0..n)
                .map(|_| r.random_range(-2..=2) as f64)
                .collect::<Vec<_>>()
        };
        let model = RecModel {
            users: Tensor::matrix(nu, d, coarse(nu * d)),
            items: Tensor::matrix(ni, d, coarse(ni * d)),
        };
        let user = r.random_range(0..nu as u32);
        let mut exclude: Vec<u32> = (0..ni as u32).filter(|_| r.random_bool(0.3)).collect();
        exclude.sort_unstable();
        let k = r.random_range(0..ni + 3);
        let scores: Vec<f64> = (0..ni as u32).map(|i| model.score(user, i)).collect();
        let got: Vec<u32> = model
            .recommend_topk(user, k, &exclude)
            .into_iter()
            .map(|(i, _)| i)
            .collect();
        assert_eq!(got, argsort_prefix(&scores, &exclude, k), "seed {seed}");
    }
}

proptest! {
    #[test]
    fn topk_never_returns_excluded_items(seed in any::<u64>(), k in 0usize..30) {
        let mut r = rng::stream(seed, 1);
        let model = RecModel {
            users: Tensor::matrix(2, 3, rng::uniform(&mut r, 6, 1.0)),
            items: Tensor::matrix(20, 3, rng::uniform(&mut r, 60, 1.0)),
        };
        let exclude: Vec<u32> = (0..20).filter(|i| i % 3 == 0).collect();
        let top = model.recommend_topk(1, k, &exclude);
        prop_assert_eq!(top.len(), k.min(20 - exclude.len()));
        prop_assert!(top.iter().all(|(i, _)| !exclude.contains(i)));
        prop_assert!(top.windows(2).all(|w| w[0].1 >= w[1].1));
    }
}
