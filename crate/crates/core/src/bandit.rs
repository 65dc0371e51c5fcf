//! Per-relation neighbor filtering thresholds tuned by a two-action bandit.
//!
//! Each relation type owns an arm holding an integer threshold `k`. Every
//! iteration the trainer reports the relation's average neighbor distance
//! (AND); a non-increasing AND earns `+1`, anything else `-1`, and `k` moves
//! by `reward * epsilon` within `[1, max degree]`. An arm freezes once more
//! than `window` iterations have passed and the recent rewards cancel out to
//! within `epsilon`, or when the iteration cap is reached.

use std::collections::VecDeque;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{EntityId, MultiRelGraph, RelTypeId};
use crate::metrics::score_desc;

#[derive(Debug, Error, PartialEq)]
pub enum BanditError {
    #[error("average neighbor distance of node {0} over an empty neighbor set")]
    EmptySelection(EntityId),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BanditConfig {
    pub initial_k: usize,
    pub epsilon: usize,
    /// Rewards remembered for the termination test.
    pub window: usize,
    /// Iteration after which every arm is frozen.
    pub max_iterations: usize,
}

impl Default for BanditConfig {
    fn default() -> Self {
        Self {
            initial_k: 5,
            epsilon: 2,
            window: 10,
            max_iterations: 200,
        }
    }
}

/// `+1` when the distance did not grow, `-1` otherwise.
pub fn reward(and_prev: f64, and_curr: f64) -> i32 {
    if and_prev >= and_curr {
        1
    } else {
        -1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepOutcome {
    Moved,
    /// The arm is terminated; nothing changed.
    Frozen,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Arm {
    k: usize,
    k_min: usize,
    k_max: usize,
    prev_and: Option<f64>,
    window: VecDeque<i32>,
    terminated: bool,
    capped: bool,
}

impl Arm {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn bounds(&self) -> (usize, usize) {
        (self.k_min, self.k_max)
    }

    pub fn rewards(&self) -> impl Iterator<Item = i32> + '_ {
        self.window.iter().copied()
    }

    pub fn is_terminated(&self) -> bool {
        self.terminated
    }

    /// Frozen by the iteration cap rather than the reward test.
    pub fn hit_cap(&self) -> bool {
        self.capped
    }
}

/// One `(gamma, rel_type, k, AND)` observation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub gamma: usize,
    pub rel_type: RelTypeId,
    pub k: usize,
    pub and: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BanditState {
    config: BanditConfig,
    arms: Vec<Arm>,
    trajectory: Vec<TrajectoryPoint>,
}

impl BanditState {
    /// One arm per relation type; `max_degrees[t]` bounds arm `t`.
    pub fn new(config: BanditConfig, max_degrees: &[usize]) -> Self {
        let arms = max_degrees
            .iter()
            .map(|&d| {
                let k_max = d.max(1);
                Arm {
                    k: config.initial_k.clamp(1, k_max),
                    k_min: 1,
                    k_max,
                    prev_and: None,
                    window: VecDeque::with_capacity(config.window),
                    terminated: false,
                    capped: false,
                }
            })
            .collect();
        Self {
            config,
            arms,
            trajectory: Vec::new(),
        }
    }

    pub fn for_graph(config: BanditConfig, g: &MultiRelGraph) -> Self {
        let degrees: Vec<usize> = (0..g.rel_type_count() as u32)
            .map(|t| g.max_degree(t))
            .collect();
        Self::new(config, &degrees)
    }

    pub fn config(&self) -> &BanditConfig {
        &self.config
    }

    pub fn arm(&self, t: RelTypeId) -> &Arm {
        &self.arms[t as usize]
    }

    pub fn arms(&self) -> &[Arm] {
        &self.arms
    }

    pub fn thresholds(&self) -> Vec<usize> {
        self.arms.iter().map(|a| a.k).collect()
    }

    pub fn all_terminated(&self) -> bool {
        self.arms.iter().all(|a| a.terminated)
    }

    pub fn trajectory(&self) -> &[TrajectoryPoint] {
        &self.trajectory
    }

    /// Moves `k` by `r * epsilon` and remembers `r`.
    pub fn step(&mut self, t: RelTypeId, r: i32) -> StepOutcome {
        let eps = self.config.epsilon as i64;
        let window = self.config.window;
        let arm = &mut self.arms[t as usize];
        if arm.terminated {
            return StepOutcome::Frozen;
        }
        let k = arm.k as i64 + r as i64 * eps;
        arm.k = k.clamp(arm.k_min as i64, arm.k_max as i64) as usize;
        if arm.window.len() == window {
            arm.window.pop_front();
        }
        arm.window.push_back(r);
        StepOutcome::Moved
    }

    /// Freezes the arm iff `gamma > window` and the remembered rewards sum
    /// to at most `epsilon` in absolute value.
    pub fn check_termination(&mut self, t: RelTypeId, gamma: usize) -> bool {
        let eps = self.config.epsilon as i32;
        let window = self.config.window;
        let arm = &mut self.arms[t as usize];
        if !arm.terminated && gamma > window {
            let total: i32 = arm.window.iter().sum();
            if total.abs() <= eps {
                arm.terminated = true;
            }
        }
        arm.terminated
    }

    /// Runs one full iteration for relation `t`: records the AND measured
    /// with the current `k`, rewards against the previous AND, steps and
    /// checks termination. Returns the reward, if one was issued.
    pub fn observe(&mut self, t: RelTypeId, gamma: usize, and: f64) -> Option<i32> {
        if self.arms[t as usize].terminated {
            return None;
        }
        self.trajectory.push(TrajectoryPoint {
            gamma,
            rel_type: t,
            k: self.arms[t as usize].k,
            and,
        });
        let r = self.arms[t as usize].prev_and.map(|prev| reward(prev, and));
        if let Some(r) = r {
            self.step(t, r);
        }
        self.arms[t as usize].prev_and = Some(and);
        self.check_termination(t, gamma);
        let cap = self.config.max_iterations;
        let arm = &mut self.arms[t as usize];
        if !arm.terminated && gamma >= cap {
            arm.terminated = true;
            arm.capped = true;
        }
        r
    }

    /// Freezes every arm (used when training stops early).
    pub fn freeze_all(&mut self) {
        for a in &mut self.arms {
            a.terminated = true;
        }
    }
}

/// Similarity of two nodes from their scalar projections.
pub fn similarity(score_i: f64, score_j: f64) -> f64 {
    1.0 - (score_i - score_j).abs()
}

/// Distinct neighbors of `node` under `t` ranked by similarity, highest
/// first, ties by ascending id; at most `k` of them.
pub fn select_neighbors(
    g: &MultiRelGraph,
    node: EntityId,
    t: RelTypeId,
    k: usize,
    scores: &[f64],
) -> Vec<EntityId> {
    let list = match g.neighbors_by_relation(node, t) {
        Ok(l) => l,
        Err(_) => return Vec::new(),
    };
    let mut distinct: Vec<EntityId> = list.iter().map(|&(j, _)| j).collect();
    distinct.dedup();
    let si = scores[node as usize];
    let order = |a: &EntityId, b: &EntityId| {
        score_desc(
            similarity(si, scores[*a as usize]),
            similarity(si, scores[*b as usize]),
        )
        .then(a.cmp(b))
    };
    if k == 0 {
        return Vec::new();
    }
    if k < distinct.len() {
        distinct.select_nth_unstable_by(k - 1, order);
        distinct.truncate(k);
    }
    distinct.sort_by(order);
    distinct
}

/// Mean distance from `node` to `selected`.
pub fn average_neighbor_distance(
    node: EntityId,
    selected: &[EntityId],
    scores: &[f64],
) -> Result<f64, BanditError> {
    if selected.is_empty() {
        return Err(BanditError::EmptySelection(node));
    }
    let si = scores[node as usize];
    Ok(selected
        .iter()
        .map(|&j| (si - scores[j as usize]).abs())
        .sum::<f64>()
        / selected.len() as f64)
}

/// Mean per-node AND over nodes with at least one neighbor under `t`;
/// zero when there are none.
pub fn relation_and(g: &MultiRelGraph, t: RelTypeId, k: usize, scores: &[f64]) -> f64 {
    let mut total = 0.0;
    let mut nodes = 0usize;
    for i in 0..g.entity_count() as EntityId {
        let sel = select_neighbors(g, i, t, k, scores);
        if let Ok(a) = average_neighbor_distance(i, &sel, scores) {
            total += a;
            nodes += 1;
        }
    }
    if nodes == 0 {
        0.0
    } else {
        total / nodes as f64
    }
}

/// `gamma<TAB>rel_type<TAB>k_t<TAB>AND` lines, relation types by name.
pub fn write_trajectory_tsv<W: Write>(
    mut w: W,
    points: &[TrajectoryPoint],
    rel_names: &[String],
) -> std::io::Result<()> {
    for p in points {
        let name = rel_names
            .get(p.rel_type as usize)
            .map(String::as_str)
            .unwrap_or("?");
        writeln!(w, "{}\t{}\t{}\t{:.6}", p.gamma, name, p.k, p.and)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Quad;
    use proptest::prelude::*;

    fn star() -> MultiRelGraph {
        let mut g = MultiRelGraph::with_counts(5, 1, 2);
        for j in 1..5 {
            g.add_quad(Quad::new(0, 0, 0, j)).unwrap();
        }
        g.add_quad(Quad::new(0, 0, 1, 1)).unwrap();
        g
    }

    #[test]
    fn reward_examples() {
        assert_eq!(reward(0.30, 0.25), 1);
        assert_eq!(reward(0.25, 0.30), -1);
        assert_eq!(reward(0.3, 0.3), 1);
    }

    #[test]
    fn step_examples() {
        let mut s = BanditState::new(BanditConfig::default(), &[100]);
        assert_eq!(s.arm(0).k(), 5);
        s.step(0, 1);
        assert_eq!(s.arm(0).k(), 7);

        let mut s = BanditState::new(
            BanditConfig {
                initial_k: 1,
                ..Default::default()
            },
            &[100],
        );
        s.step(0, -1);
        assert_eq!(s.arm(0).k(), 1);
        s.arms[0].terminated = true;
        assert_eq!(s.step(0, 1), StepOutcome::Frozen);
        assert_eq!(s.arm(0).k(), 1);
        assert_eq!(s.arm(0).rewards().count(), 1);
    }

    #[test]
    fn termination_examples() {
        let mut s = BanditState::new(BanditConfig::default(), &[100]);
        for i in 0..10 {
            s.step(0, if i % 2 == 0 { 1 } else { -1 });
        }
        assert!(!s.check_termination(0, 8));
        assert!(s.check_termination(0, 11));

        let mut s = BanditState::new(BanditConfig::default(), &[100]);
        for _ in 0..10 {
            s.step(0, 1);
        }
        assert!(!s.check_termination(0, 11));
    }

    #[test]
    fn initial_k_clamped_to_degree() {
        let s = BanditState::new(BanditConfig::default(), &[3, 0]);
        assert_eq!(s.thresholds(), [3, 1]);
        assert_eq!(s.arm(1).bounds(), (1, 1));
    }

    #[test]
    fn selection_examples() {
        let g = star();
        let scores = [0.5, 0.45, 0.9, 0.1, 0.55];
        // similarities to node 0: 1 -> .95, 2 -> .6, 3 -> .6, 4 -> .95
        assert_eq!(select_neighbors(&g, 0, 0, 2, &scores), [1, 4]);
        assert_eq!(select_neighbors(&g, 0, 0, 3, &scores), [1, 4, 2]);
        assert_eq!(select_neighbors(&g, 0, 0, 10, &scores).len(), 4);
        assert_eq!(select_neighbors(&g, 1, 0, 10, &scores), [0]);
    }

    #[test]
    fn and_examples() {
        let scores = [0.5, 0.3, 0.9, 1.2];
        assert!((average_neighbor_distance(0, &[1, 2], &scores).unwrap() - 0.3).abs() < 1e-12);
        assert!((average_neighbor_distance(0, &[3], &scores).unwrap() - 0.7).abs() < 1e-12);
        assert_eq!(
            average_neighbor_distance(0, &[1, 2], &[0.4; 3]).unwrap(),
            0.0
        );
        assert_eq!(
            average_neighbor_distance(0, &[], &scores),
            Err(BanditError::EmptySelection(0))
        );
    }

    #[test]
    fn observe_runs_first_iteration_without_reward() {
        let mut s = BanditState::new(BanditConfig::default(), &[50]);
        assert_eq!(s.observe(0, 1, 0.4), None);
        assert_eq!(s.observe(0, 2, 0.3), Some(1));
        assert_eq!(s.arm(0).k(), 7);
        assert_eq!(s.observe(0, 3, 0.35), Some(-1));
        assert_eq!(s.arm(0).k(), 5);
        assert_eq!(s.trajectory().len(), 3);
    }

    #[test]
    fn cap_freezes_every_arm() {
        let cfg = BanditConfig {
            max_iterations: 30,
            ..Default::default()
        };
        let mut s = BanditState::new(cfg, &[1000]);
        for gamma in 1..=40 {
            // steadily falling AND: rewards all +1, never balanced
            s.observe(0, gamma, 1.0 / gamma as f64);
        }
        assert!(s.arm(0).is_terminated());
        assert!(s.arm(0).hit_cap());
        assert_eq!(s.trajectory().len(), 30);
    }

    proptest! {
        #[test]
        fn thresholds_stay_in_bounds(rewards in prop::collection::vec(prop::bool::ANY, 0..300), kmax in 0usize..40) {
            let mut s = BanditState::new(BanditConfig::default(), &[kmax]);
            let mut frozen_at = None;
            for (i, up) in rewards.iter().enumerate() {
                let before = s.arm(0).k();
                s.step(0, if *up { 1 } else { -1 });
                let (lo, hi) = s.arm(0).bounds();
                prop_assert!(lo <= s.arm(0).k() && s.arm(0).k() <= hi);
                prop_assert!(s.arm(0).rewards().count() <= 10);
                if let Some(k) = frozen_at {
                    prop_assert_eq!(s.arm(0).k(), k);
                    prop_assert_eq!(before, k);
                }
                if s.check_termination(0, i + 1) && frozen_at.is_none() {
                    frozen_at = Some(s.arm(0).k());
                }
            }
        }
    }
}
