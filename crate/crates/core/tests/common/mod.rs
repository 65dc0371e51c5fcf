//! Shared builders for gradient checks and toy graphs.
#![allow(dead_code)]

use std::sync::Arc;

use ramgnn::autodiff::{AutodiffError, CsrMatrix, Graph, NodeId, PrimitiveTag, Segments, Tensor};
use ramgnn::finetune::{SideInit, Structure};
use ramgnn::graph::{InteractionGraph, MultiRelGraph, Quad};
use ramgnn::pretrain::{
    forward, loss, Composition, DistanceMlp, Neighborhoods, Objective, ParamLayout, PretrainConfig,
    Pretrainer, Samples, ENTITY,
};
use ramgnn::rng;
use rand::Rng;

pub type ObjectiveFn = Box<dyn Fn(&mut Graph, &[NodeId]) -> Result<NodeId, AutodiffError>>;

/// A scalar objective and the point to check it at.
pub struct Case {
    pub params: Vec<Tensor>,
    pub f: ObjectiveFn,
}

fn dense(r: &mut rng::Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(rows, cols, rng::uniform(r, rows * cols, 1.0))
}

/// Values in `[0.2, 1.0]` with random sign: kinks at zero stay out of
/// reach of the difference step.
fn away_from_zero(r: &mut rng::Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| r.random_range(0.2..1.0) * if r.random_bool(0.5) { 1.0 } else { -1.0 })
        .collect()
}

/// `Σ out ⊙ w` for a fixed random `w`, so every output coordinate matters.
fn weighted_sum(g: &mut Graph, out: NodeId, w: &Tensor) -> Result<NodeId, AutodiffError> {
    if g.value(out).shape.numel() == 1 && g.value(out).shape.rank() == 0 {
        return Ok(out);
    }
    let wc = g.constant(w.clone());
    let h = g.hadamard(out, wc)?;
    g.sum(h)
}

fn readout(r: &mut rng::Rng, shape_of: &Tensor) -> Tensor {
    Tensor::new(
        shape_of.shape.clone(),
        rng::uniform(r, shape_of.data.len(), 1.0),
    )
}

/// Random instance exercising one primitive.
pub fn primitive_case(tag: PrimitiveTag, seed: u64) -> Case {
    let mut r = rng::stream(seed, rng::mix(&[tag as u64, 0x4752414443484B]));
    let n = r.random_range(2..5usize);
    let m = r.random_range(2..5usize);
    let unary = |t: Tensor,
                 op: fn(&mut Graph, NodeId) -> Result<NodeId, AutodiffError>,
                 r: &mut rng::Rng| {
        let mut g = Graph::new();
        let x = g.constant(t.clone());
        let y = op(&mut g, x).unwrap();
        let w = readout(r, g.value(y));
        Case {
            params: vec![t],
            f: Box::new(move |g, ids| {
                let y = op(g, ids[0])?;
                weighted_sum(g, y, &w)
            }),
        }
    };
    let binary = |a: Tensor,
                  b: Tensor,
                  op: fn(&mut Graph, NodeId, NodeId) -> Result<NodeId, AutodiffError>,
                  r: &mut rng::Rng| {
        let mut g = Graph::new();
        let (x, y) = (g.constant(a.clone()), g.constant(b.clone()));
        let z = op(&mut g, x, y).unwrap();
        let w = readout(r, g.value(z));
        Case {
            params: vec![a, b],
            f: Box::new(move |g, ids| {
                let z = op(g, ids[0], ids[1])?;
                weighted_sum(g, z, &w)
            }),
        }
    };
    match tag {
        PrimitiveTag::MatVec => {
            let (a, x) = (
                dense(&mut r, n, m),
                Tensor::vector(rng::uniform(&mut r, m, 1.0)),
            );
            binary(a, x, |g, a, b| g.matvec(a, b), &mut r)
        }
        PrimitiveTag::MatMul => {
            let k = r.random_range(2..5usize);
            let (a, b) = (dense(&mut r, n, k), dense(&mut r, k, m));
            binary(a, b, |g, a, b| g.matmul(a, b), &mut r)
        }
        PrimitiveTag::Add | PrimitiveTag::Sub | PrimitiveTag::Hadamard => {
            let a = dense(&mut r, n, m);
            // Equal shape, row broadcast or scalar broadcast.
            let b = match r.random_range(0..3) {
                0 => dense(&mut r, n, m),
                1 => Tensor::vector(rng::uniform(&mut r, m, 1.0)),
                _ => Tensor::scalar(r.random_range(-1.0..1.0)),
            };
            let op: fn(&mut Graph, NodeId, NodeId) -> Result<NodeId, AutodiffError> = match tag {
                PrimitiveTag::Add => |g, a, b| g.add(a, b),
                PrimitiveTag::Sub => |g, a, b| g.sub(a, b),
                _ => |g, a, b| g.hadamard(a, b),
            };
            binary(a, b, op, &mut r)
        }
        PrimitiveTag::Concat => {
            let (a, b) = if r.random_bool(0.5) {
                (dense(&mut r, n, m), dense(&mut r, n, 3))
            } else {
                (
                    Tensor::vector(rng::uniform(&mut r, n, 1.0)),
                    Tensor::vector(rng::uniform(&mut r, m, 1.0)),
                )
            };
            binary(a, b, |g, a, b| g.concat(&[a, b]), &mut r)
        }
        PrimitiveTag::Sum => unary(dense(&mut r, n, m), |g, x| g.sum(x), &mut r),
        PrimitiveTag::Mean => unary(dense(&mut r, n, m), |g, x| g.mean(x), &mut r),
        PrimitiveTag::Scale => {
            let c = r.random_range(-2.0..2.0);
            let x = dense(&mut r, n, m);
            let w = dense(&mut r, n, m);
            Case {
                params: vec![x],
                f: Box::new(move |g, ids| {
                    let y = g.scale(ids[0], c)?;
                    weighted_sum(g, y, &w)
                }),
            }
        }
        PrimitiveTag::Softmax => unary(
            Tensor::vector(rng::uniform(&mut r, n + 1, 2.0)),
            |g, x| g.softmax(x),
            &mut r,
        ),
        PrimitiveTag::Sigmoid => unary(dense(&mut r, n, m), |g, x| g.sigmoid(x), &mut r),
        PrimitiveTag::LeakyRelu => unary(
            Tensor::matrix(n, m, away_from_zero(&mut r, n * m)),
            |g, x| g.leaky_relu(x),
            &mut r,
        ),
        PrimitiveTag::L1Norm => {
            let x = if r.random_bool(0.5) {
                Tensor::matrix(n, m, away_from_zero(&mut r, n * m))
            } else {
                Tensor::vector(away_from_zero(&mut r, m))
            };
            unary(x, |g, x| g.l1_norm(x), &mut r)
        }
        PrimitiveTag::CircCorr => {
            let d = r.random_range(2..7usize);
            let (a, b) = if r.random_bool(0.5) {
                (dense(&mut r, n, d), dense(&mut r, n, d))
            } else {
                (
                    Tensor::vector(rng::uniform(&mut r, d, 1.0)),
                    Tensor::vector(rng::uniform(&mut r, d, 1.0)),
                )
            };
            binary(a, b, |g, a, b| g.circ_corr(a, b), &mut r)
        }
        PrimitiveTag::Dot => {
            let (a, b) = if r.random_bool(0.5) {
                (dense(&mut r, n, m), dense(&mut r, n, m))
            } else {
                (
                    Tensor::vector(rng::uniform(&mut r, m, 1.0)),
                    Tensor::vector(rng::uniform(&mut r, m, 1.0)),
                )
            };
            binary(a, b, |g, a, b| g.dot(a, b), &mut r)
        }
        PrimitiveTag::Gather => {
            let x = dense(&mut r, n, m);
            let idx: Arc<[usize]> = (0..r.random_range(1..8))
                .map(|_| r.random_range(0..n))
                .collect();
            let w = Tensor::matrix(idx.len(), m, rng::uniform(&mut r, idx.len() * m, 1.0));
            Case {
                params: vec![x],
                f: Box::new(move |g, ids| {
                    let y = g.gather(ids[0], idx.clone())?;
                    weighted_sum(g, y, &w)
                }),
            }
        }
        PrimitiveTag::PairDot => {
            let rb = r.random_range(1..5usize);
            let (a, b) = (dense(&mut r, n, m), dense(&mut r, rb, m));
            let k = r.random_range(1..8usize);
            let ia: Arc<[usize]> = (0..k).map(|_| r.random_range(0..n)).collect();
            let ib: Arc<[usize]> = (0..k).map(|_| r.random_range(0..rb)).collect();
            let w = Tensor::vector(rng::uniform(&mut r, k, 1.0));
            Case {
                params: vec![a, b],
                f: Box::new(move |g, ids| {
                    let y = g.pair_dot(ids[0], ids[1], ia.clone(), ib.clone())?;
                    weighted_sum(g, y, &w)
                }),
            }
        }
        PrimitiveTag::SegmentSum | PrimitiveTag::SegmentSoftmax => {
            let lengths: Vec<usize> = (0..n).map(|_| r.random_range(0..4)).collect();
            let seg = Arc::new(Segments::from_lengths(lengths));
            let rows = seg.total();
            let softmax = tag == PrimitiveTag::SegmentSoftmax;
            let x = if softmax {
                Tensor::vector(rng::uniform(&mut r, rows, 2.0))
            } else {
                dense(&mut r, rows, m)
            };
            let out_len = if softmax { rows } else { seg.count() * m };
            let w = Tensor::new(
                if softmax {
                    ramgnn::autodiff::Shape::vector(rows)
                } else {
                    ramgnn::autodiff::Shape::matrix(seg.count(), m)
                },
                rng::uniform(&mut r, out_len, 1.0),
            );
            Case {
                params: vec![x],
                f: Box::new(move |g, ids| {
                    let y = if softmax {
                        g.segment_softmax(ids[0], seg.clone())?
                    } else {
                        g.segment_sum(ids[0], seg.clone())?
                    };
                    weighted_sum(g, y, &w)
                }),
            }
        }
        PrimitiveTag::RowScale => {
            let (x, s) = (
                dense(&mut r, n, m),
                Tensor::vector(rng::uniform(&mut r, n, 1.0)),
            );
            binary(x, s, |g, a, b| g.row_scale(a, b), &mut r)
        }
        PrimitiveTag::SpMM => {
            let cols = r.random_range(2..5usize);
            let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
            for row in rows.iter_mut() {
                for c in 0..cols {
                    if r.random_bool(0.6) {
                        row.push((c, r.random_range(-1.0..1.0)));
                    }
                }
            }
            let a = Arc::new(CsrMatrix::from_rows(cols, &rows));
            let x = dense(&mut r, cols, m);
            let w = dense(&mut r, n, m);
            Case {
                params: vec![x],
                f: Box::new(move |g, ids| {
                    let y = g.spmm(a.clone(), ids[0])?;
                    weighted_sum(g, y, &w)
                }),
            }
        }
        PrimitiveTag::Ln | PrimitiveTag::Sqrt => {
            let x = Tensor::matrix(n, m, (0..n * m).map(|_| r.random_range(0.3..2.0)).collect());
            let op: fn(&mut Graph, NodeId) -> Result<NodeId, AutodiffError> =
                if tag == PrimitiveTag::Ln {
                    |g, x| g.ln(x)
                } else {
                    |g, x| g.sqrt(x)
                };
            unary(x, op, &mut r)
        }
        PrimitiveTag::Clamp => {
            // Bounds sit between sample values, at least 0.05 from each.
            let x: Vec<f64> = (0..n * m)
                .map(|i| -1.0 + 0.2 * i as f64 + r.random_range(0.0..0.1))
                .collect();
            let (lo, hi) = (-0.65, 0.55);
            let x = Tensor::matrix(n, m, x);
            let w = dense(&mut r, n, m);
            Case {
                params: vec![x],
                f: Box::new(move |g, ids| {
                    let y = g.clamp(ids[0], lo, hi)?;
                    weighted_sum(g, y, &w)
                }),
            }
        }
        PrimitiveTag::LogSigmoid => unary(
            Tensor::matrix(n, m, rng::uniform(&mut r, n * m, 4.0)),
            |g, x| g.log_sigmoid(x),
            &mut r,
        ),
    }
}

/// Two relation types over 10 entities: two 5-cliques under type 0 with
/// two values, and a sparse chain under type 1.
pub fn ten_node_graph() -> MultiRelGraph {
    let mut g = MultiRelGraph::with_counts(10, 2, 3);
    for c in 0..2u32 {
        for a in 0..5 {
            for b in a + 1..5 {
                let (i, j) = (c * 5 + a, c * 5 + b);
                let v = (a + b) % 2;
                g.add_quad(Quad::new(i, 0, v, j)).unwrap();
            }
        }
    }
    for i in (0..9u32).step_by(2) {
        g.add_quad(Quad::new(i, 1, 2, i + 1)).unwrap();
    }
    g
}

/// Smallest and largest `|p_a - p_b|` over sampled pairs, where `p` is the
/// distance projection of the input and of the final embeddings.
fn pair_distance_range(
    params: &[Tensor],
    layout: &ParamLayout,
    nb: &Neighborhoods,
    samples: &Samples,
    composition: Composition,
    attention: bool,
) -> (f64, f64) {
    let mut g = Graph::new();
    let ids: Vec<NodeId> = params.iter().map(|t| g.constant(t.clone())).collect();
    let h = forward(&mut g, layout, &ids, nb, composition, attention).unwrap();
    let mlp = DistanceMlp::from_params(layout, params);
    let mut range = (f64::INFINITY, 0.0f64);
    for x in [&params[ENTITY], g.value(h)] {
        let p = mlp.project_rows(x);
        for &(a, b) in samples.positives.iter().chain(&samples.negatives) {
            let d = (p[a as usize] - p[b as usize]).abs();
            range = (range.0.min(d), range.1.max(d));
        }
    }
    range
}

/// The pre-training objective (attention GNN loss, similarity loss and
/// regularizer) on the 10-node graph, with composition and attention chosen
/// by `seed`.
///
/// Parameters are redrawn until every sampled pair distance lies in
/// `[0.02, 0.98]`: the cross-entropy terms are `ln d` and `ln(1 - d)`, whose
/// difference quotients lose all precision as `d` approaches 0 or 1.
pub fn pretrain_case(seed: u64) -> Case {
    let graph = ten_node_graph();
    let composition = [Composition::Add, Composition::Mul, Composition::Corr][(seed % 3) as usize];
    let attention = seed % 2 == 0;
    let cfg = PretrainConfig {
        dim: 4,
        layers: 2,
        composition,
        attention,
        negatives: 2,
        seed,
        ..Default::default()
    };
    let mut trainer = Pretrainer::new(&graph, cfg).unwrap();
    let layout = trainer.layout().clone();
    let base = trainer.params().to_vec();
    let samples = trainer.sample(1).unwrap();
    for attempt in 0u64.. {
        let mut r = rng::stream(seed, rng::mix(&[0x5350524541, attempt]));
        for (p, b) in trainer.params_mut().iter_mut().zip(&base) {
            for (v, bv) in p.data.iter_mut().zip(&b.data) {
                *v = bv + r.random_range(-0.5..0.5);
            }
        }
        for v in trainer.params_mut()[layout.mlp_w2].data.iter_mut() {
            *v *= 6.0;
        }
        let scores = trainer.node_scores();
        let sel = trainer.select(&[3, 1], &scores);
        let nb = Neighborhoods::build(&graph, &sel);
        let (lo, hi) = pair_distance_range(
            trainer.params(),
            &layout,
            &nb,
            &samples,
            composition,
            attention,
        );
        if lo < 0.02 || hi > 0.98 {
            continue;
        }
        let obj = Objective {
            composition,
            attention,
            lambda_sim: 0.1,
            lambda_reg: 1e-2,
        };
        let layout = layout.clone();
        let samples = samples.clone();
        return Case {
            params: trainer.params().to_vec(),
            f: Box::new(move |g, ids| Ok(loss(g, &layout, ids, &nb, &samples, &obj)?.total)),
        };
    }
    unreachable!()
}

/// 3 users and 3 items with 5 interactions.
pub fn six_node_interactions() -> InteractionGraph {
    let mut g = InteractionGraph::new(3, 3);
    for (u, i) in [(0, 0), (0, 1), (1, 1), (2, 2), (1, 2)] {
        g.add(u, i, None).unwrap();
    }
    g
}

/// The fine-tuning BPR objective on the 6-node graph.
pub fn bpr_case(seed: u64) -> Case {
    let g = six_node_interactions();
    let d = 4;
    let users = SideInit::random(3, 2, d, vec![vec![0], vec![0, 1], vec![]], seed, 0);
    let items = SideInit::random(3, 2, d, vec![vec![1], vec![], vec![0, 1]], seed, 1);
    let s = Structure::new(&g, &users, &items, 4).unwrap();
    let params = s.init_params(&users, &items, seed);
    let triples = vec![(0, 0, 2), (0, 1, 2), (1, 1, 0), (2, 2, 1), (1, 2, 0)];
    Case {
        params,
        f: Box::new(move |g, ids| s.bpr_objective(g, ids, &triples, 1e-2)),
    }
}
