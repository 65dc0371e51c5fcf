use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::IngestError;
use crate::graph::InteractionGraph;
use crate::rng;

/// Leave-one-out protocol parameters.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSpec {
    /// Sampled negative candidates per held-out case.
    pub negatives: usize,
    #[serde(skip)]
    pub seed: u64,
    /// Also hold out the second-to-last interaction of users with at least
    /// three, for early stopping.
    pub validation: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            negatives: 99,
            seed: 0,
            validation: true,
        }
    }
}

/// One held-out interaction and its sampled negatives.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TestCase {
    pub user: u32,
    pub target: u32,
    /// Items the user never interacted with, sorted ascending.
    pub negatives: Vec<u32>,
}

#[derive(Clone, Debug)]
pub struct Split {
    pub train: InteractionGraph,
    pub validation: Vec<TestCase>,
    pub test: Vec<TestCase>,
}

impl Split {
    /// Items that must not be ranked for `user` at test time: train and
    /// validation interactions.
    pub fn seen_items(&self, user: u32) -> Vec<u32> {
        let mut seen = self.train.items_of(user).to_vec();
        if let Some(v) = self.validation.iter().find(|c| c.user == user) {
            seen.push(v.target);
            seen.sort_unstable();
        }
        seen
    }
}

fn sample_negatives(
    g: &InteractionGraph,
    user: u32,
    n: usize,
    seed: u64,
    kind: u64,
) -> Result<Vec<u32>, IngestError> {
    if n == 0 {
        return Ok(Vec::new());
    }
    let seen = g.items_of(user);
    let pool: Vec<u32> = (0..g.item_count() as u32)
        .filter(|i| seen.binary_search(i).is_err())
        .collect();
    if pool.len() < n {
        return Err(IngestError::NotEnoughCandidates {
            user,
            requested: n,
            available: pool.len(),
        });
    }
    let mut r = rng::stream(seed, rng::mix(&[0x53504C4954, user as u64, kind]));
    let mut picked: Vec<u32> = index::sample(&mut r, pool.len(), n)
        .into_iter()
        .map(|i| pool[i])
        .collect();
    picked.sort_unstable();
    Ok(picked)
}

/// Holds out each user's last interaction (by timestamp, ties and missing
/// timestamps broken by file order). Users with one interaction stay in
/// training only.
pub fn split_interactions(g: &InteractionGraph, spec: &SplitSpec) -> Result<Split, IngestError> {
    let mut per_user: Vec<Vec<usize>> = vec![Vec::new(); g.user_count()];
    for (idx, ev) in g.events().iter().enumerate() {
        per_user[ev.user as usize].push(idx);
    }
    let events = g.events();
    let mut held = vec![false; events.len()];
    let mut validation = Vec::new();
    let mut test = Vec::new();
    for (user, idxs) in per_user.iter_mut().enumerate() {
        if idxs.len() < 2 {
            continue;
        }
        idxs.sort_by_key(|&i| (events[i].timestamp.unwrap_or(i64::MIN), i));
        let last = idxs[idxs.len() - 1];
        held[last] = true;
        let user = user as u32;
        test.push(TestCase {
            user,
            target: events[last].item,
            negatives: sample_negatives(g, user, spec.negatives, spec.seed, 0)?,
        });
        if spec.validation && idxs.len() >= 3 {
            let prev = idxs[idxs.len() - 2];
            held[prev] = true;
            validation.push(TestCase {
                user,
                target: events[prev].item,
                negatives: sample_negatives(g, user, spec.negatives, spec.seed, 1)?,
            });
        }
    }
    let mut train = InteractionGraph::new(g.user_count(), g.item_count());
    for (ev, h) in events.iter().zip(&held) {
        if !h {
            train.add(ev.user, ev.item, ev.timestamp)?;
        }
    }
    Ok(Split {
        train,
        validation,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn graph(events: &[(u32, u32, i64)], users: usize, items: usize) -> InteractionGraph {
        let mut g = InteractionGraph::new(users, items);
        for &(u, i, t) in events {
            g.add(u, i, Some(t)).unwrap();
        }
        g
    }

    #[test]
    fn two_interactions_give_one_train_one_test() {
        let g = graph(&[(0, 3, 10), (0, 1, 5)], 1, 10);
        let s = split_interactions(
            &g,
            &SplitSpec {
                negatives: 4,
                seed: 1,
                validation: true,
            },
        )
        .unwrap();
        assert_eq!(s.train.len(), 1);
        assert!(s.train.contains(0, 1));
        assert_eq!(s.test.len(), 1);
        assert_eq!(s.test[0].target, 3);
        assert!(s.validation.is_empty());
        assert_eq!(s.test[0].negatives.len(), 4);
        assert!(s.test[0].negatives.iter().all(|&i| i != 1 && i != 3));
    }

    #[test]
    fn single_interaction_users_are_train_only() {
        let g = graph(&[(0, 0, 1), (1, 0, 1), (1, 1, 2)], 2, 5);
        let s = split_interactions(
            &g,
            &SplitSpec {
                negatives: 2,
                seed: 1,
                validation: false,
            },
        )
        .unwrap();
        assert!(s.train.contains(0, 0));
        assert_eq!(s.test.iter().map(|c| c.user).collect::<Vec<_>>(), [1]);
    }

    #[test]
    fn timestamp_ties_prefer_later_rows() {
        let g = graph(&[(0, 0, 7), (0, 1, 7), (0, 2, 3)], 1, 5);
        let s = split_interactions(
            &g,
            &SplitSpec {
                negatives: 0,
                seed: 1,
                validation: true,
            },
        )
        .unwrap();
        assert_eq!(s.test[0].target, 1);
        assert_eq!(s.validation[0].target, 0);
        assert_eq!(s.seen_items(0), [0, 2]);
    }

    #[test]
    fn too_many_negatives_rejected() {
        let g = graph(&[(0, 0, 1), (0, 1, 2)], 1, 4);
        let err = split_interactions(
            &g,
            &SplitSpec {
                negatives: 3,
                seed: 1,
                validation: false,
            },
        )
        .unwrap_err();
        assert!(matches!(
            err,
            IngestError::NotEnoughCandidates {
                requested: 3,
                available: 2,
                ..
            }
        ));
    }

    proptest! {
        #[test]
        fn split_is_disjoint_and_deterministic(
            raw in prop::collection::vec((0u32..8, 0u32..30, 0i64..50), 1..120),
            seed in any::<u64>(),
        ) {
            let mut g = InteractionGraph::new(8, 30);
            for (u, i, t) in raw { g.add(u, i, Some(t)).unwrap(); }
            let spec = SplitSpec { negatives: 5, seed, validation: true };
            let a = split_interactions(&g, &spec).unwrap();
            let b = split_interactions(&g, &spec).unwrap();
            prop_assert_eq!(&a.test, &b.test);
            prop_assert_eq!(&a.validation, &b.validation);
            prop_assert_eq!(a.train.events(), b.train.events());
            for c in a.test.iter().chain(&a.validation) {
                prop_assert!(!a.train.contains(c.user, c.target));
                for n in &c.negatives { prop_assert!(!g.contains(c.user, *n)); }
            }
            prop_assert_eq!(a.train.len() + a.test.len() + a.validation.len(), g.len());
        }
    }
}
