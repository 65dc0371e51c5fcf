use std::collections::HashMap;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{sigmoid, AutodiffError, Graph, NodeId, Segments, Tensor, LEAKY_SLOPE};
use crate::graph::{EntityId, MultiRelGraph, RelTypeId, RelValueId};
use crate::rng;

/// How a neighbor embedding is merged with its relation embedding.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Composition {
    Add,
    Mul,
    Corr,
}

impl FromStr for Composition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "add" => Ok(Self::Add),
            "mul" => Ok(Self::Mul),
            "corr" => Ok(Self::Corr),
            other => Err(format!(
                "unknown composition {other:?} (expected add, mul or corr)"
            )),
        }
    }
}

impl Composition {
    pub fn name(self) -> &'static str {
        match self {
            Self::Add => "add",
            Self::Mul => "mul",
            Self::Corr => "corr",
        }
    }

    pub fn apply(self, g: &mut Graph, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        match self {
            Self::Add => g.add(a, b),
            Self::Mul => g.hadamard(a, b),
            Self::Corr => g.circ_corr(a, b),
        }
    }

    /// Plain evaluation on two equal-length vectors.
    pub fn eval(self, a: &[f64], b: &[f64]) -> Vec<f64> {
        assert_eq!(a.len(), b.len());
        let d = a.len();
        match self {
            Self::Add => a.iter().zip(b).map(|(x, y)| x + y).collect(),
            Self::Mul => a.iter().zip(b).map(|(x, y)| x * y).collect(),
            Self::Corr => (0..d)
                .map(|k| (0..d).map(|i| a[i] * b[(i + k) % d]).sum())
                .collect(),
        }
    }
}

fn leaky(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        LEAKY_SLOPE * v
    }
}

/// Indices of the parameter tensors of one attention/aggregation layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerSlots {
    pub w_key: usize,
    pub w_qry: usize,
    pub bias: usize,
    pub p: usize,
    pub w_val: usize,
}

/// Layout of the flat parameter list.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamLayout {
    pub dim: usize,
    pub entities: usize,
    pub rel_types: usize,
    pub rel_values: usize,
    pub layers: Vec<LayerSlots>,
    pub mlp_w1: usize,
    pub mlp_b1: usize,
    pub mlp_w2: usize,
    pub mlp_b2: usize,
}

pub const ENTITY: usize = 0;
pub const REL_TYPE: usize = 1;
pub const REL_VALUE: usize = 2;

impl ParamLayout {
    pub fn new(
        dim: usize,
        layers: usize,
        entities: usize,
        rel_types: usize,
        rel_values: usize,
    ) -> Self {
        let mut next = 3;
        let mut slots = Vec::new();
        for _ in 0..layers {
            slots.push(LayerSlots {
                w_key: next,
                w_qry: next + 1,
                bias: next + 2,
                p: next + 3,
                w_val: next + 4,
            });
            next += 5;
        }
        Self {
            dim,
            entities,
            rel_types,
            rel_values,
            layers: slots,
            mlp_w1: next,
            mlp_b1: next + 1,
            mlp_w2: next + 2,
            mlp_b2: next + 3,
        }
    }

    pub fn len(&self) -> usize {
        self.mlp_b2 + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Uniform(-1/sqrt(d), 1/sqrt(d)) initialization of every tensor.
    pub fn init(&self, seed: u64) -> Vec<Tensor> {
        let d = self.dim;
        let h = d / 2;
        let a = 1.0 / (d as f64).sqrt();
        let mut r = rng::stream(seed, rng::mix(&[0x5052_4554, 0]));
        let mut mat = |rows: usize, cols: usize| {
            Tensor::matrix(rows, cols, rng::uniform(&mut r, rows * cols, a))
        };
        let mut out = vec![
            mat(self.entities, d),
            mat(self.rel_types, h),
            mat(self.rel_values, h),
        ];
        for _ in &self.layers {
            out.push(mat(d, d));
            out.push(mat(d, d));
            out.push(Tensor::vector(mat(1, d).data));
            out.push(Tensor::vector(mat(1, d).data));
            out.push(mat(2 * d, d));
        }
        out.push(mat(d, d));
        out.push(Tensor::vector(mat(1, d).data));
        out.push(mat(d, 1));
        out.push(Tensor::vector(mat(1, 1).data));
        out
    }
}

/// The distance projection `e -> sigmoid(MLP(e))`: one LeakyReLU hidden
/// layer of width d, scalar output.
#[derive(Clone, Copy, Debug)]
pub struct DistanceMlp<'a> {
    pub w1: &'a Tensor,
    pub b1: &'a Tensor,
    pub w2: &'a Tensor,
    pub b2: &'a Tensor,
}

impl<'a> DistanceMlp<'a> {
    pub fn from_params(layout: &ParamLayout, params: &'a [Tensor]) -> Self {
        Self {
            w1: &params[layout.mlp_w1],
            b1: &params[layout.mlp_b1],
            w2: &params[layout.mlp_w2],
            b2: &params[layout.mlp_b2],
        }
    }

    /// `sigmoid(MLP(e))`.
    pub fn project(&self, e: &[f64]) -> f64 {
        let d = self.w1.shape.cols();
        let mut z = self.b2.data[0];
        for c in 0..d {
            let mut h = self.b1.data[c];
            for (r, x) in e.iter().enumerate() {
                h += x * self.w1.data[r * d + c];
            }
            z += leaky(h) * self.w2.data[c];
        }
        sigmoid(z)
    }

    /// Projection of every row.
    pub fn project_rows(&self, e: &Tensor) -> Vec<f64> {
        (0..e.shape.rows())
            .map(|r| self.project(e.row(r)))
            .collect()
    }

    /// `(d, s)` with `d = |proj(e_i) - proj(e_j)|` and `s = 1 - d`.
    pub fn pair_distance(&self, ei: &[f64], ej: &[f64]) -> (f64, f64) {
        let d = (self.project(ei) - self.project(ej)).abs();
        (d, 1.0 - d)
    }

    /// Builds the projection of every row of `x` as an `[n, 1]` node.
    pub fn apply(
        g: &mut Graph,
        layout: &ParamLayout,
        ids: &[NodeId],
        x: NodeId,
    ) -> Result<NodeId, AutodiffError> {
        let h = g.matmul(x, ids[layout.mlp_w1])?;
        let h = g.add(h, ids[layout.mlp_b1])?;
        let h = g.leaky_relu(h)?;
        let z = g.matmul(h, ids[layout.mlp_w2])?;
        let z = g.add(z, ids[layout.mlp_b2])?;
        g.sigmoid(z)
    }
}

pub const SIM_CLAMP: (f64, f64) = (1e-7, 1.0 - 1e-7);

/// Binary cross-entropy over similarities: positives want `s -> 1`,
/// negatives `s -> 0`.
pub fn similarity_loss(pos_sims: &[f64], neg_sims: &[f64]) -> f64 {
    let c = |s: f64| s.clamp(SIM_CLAMP.0, SIM_CLAMP.1);
    -pos_sims.iter().map(|&s| c(s).ln()).sum::<f64>()
        - neg_sims.iter().map(|&s| c(1.0 - s).ln()).sum::<f64>()
}

/// Attention weights of one center over its `(neighbor, relation)` pairs,
/// each given as `(e_j, e_n)`.
pub fn attention_weights(
    pairs: &[(&[f64], &[f64])],
    w_key: &Tensor,
    w_qry: &Tensor,
    bias: &[f64],
    p: &[f64],
) -> Result<Vec<f64>, AutodiffError> {
    if pairs.is_empty() {
        return Err(AutodiffError::EmptyInput(
            crate::autodiff::PrimitiveTag::Softmax,
        ));
    }
    let d = bias.len();
    let logits: Vec<f64> = pairs
        .iter()
        .map(|(ej, en)| {
            (0..d)
                .map(|c| {
                    let mut v = bias[c];
                    for r in 0..d {
                        v += ej[r] * w_key.data[r * d + c] + en[r] * w_qry.data[r * d + c];
                    }
                    p[c] * leaky(v)
                })
                .sum()
        })
        .collect();
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = e.iter().sum();
    Ok(e.into_iter().map(|v| v / z).collect())
}

/// Selected neighbors per `(node, relation type)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Selection {
    pub rel_types: usize,
    /// `lists[node * rel_types + t]`
    pub lists: Vec<Vec<EntityId>>,
}

impl Selection {
    pub fn get(&self, node: EntityId, t: RelTypeId) -> &[EntityId] {
        &self.lists[node as usize * self.rel_types + t as usize]
    }

    /// Every neighbor under every relation.
    pub fn all(g: &MultiRelGraph) -> Self {
        let nt = g.rel_type_count();
        let mut lists = Vec::with_capacity(g.entity_count() * nt);
        for i in 0..g.entity_count() as EntityId {
            for t in 0..nt as RelTypeId {
                let mut l: Vec<EntityId> = g
                    .neighbors_by_relation(i, t)
                    .unwrap()
                    .iter()
                    .map(|&(j, _)| j)
                    .collect();
                l.dedup();
                lists.push(l);
            }
        }
        Self {
            rel_types: nt,
            lists,
        }
    }
}

/// Flattened message list for one selection: one row per
/// `(center, neighbor, relation type, relation value)`, grouped by center.
#[derive(Clone, Debug)]
pub struct Neighborhoods {
    pub neighbor: Arc<[usize]>,
    pub pair: Arc<[usize]>,
    pub segments: Arc<Segments>,
    pub pair_types: Arc<[usize]>,
    pub pair_values: Arc<[usize]>,
}

impl Neighborhoods {
    pub fn build(g: &MultiRelGraph, sel: &Selection) -> Self {
        let mut pair_index: HashMap<(RelTypeId, RelValueId), usize> = HashMap::new();
        let mut pair_types = Vec::new();
        let mut pair_values = Vec::new();
        let mut neighbor = Vec::new();
        let mut pair = Vec::new();
        let mut lengths = Vec::with_capacity(g.entity_count());
        for i in 0..g.entity_count() as EntityId {
            let before = neighbor.len();
            for t in 0..sel.rel_types as RelTypeId {
                let adj = g.neighbors_by_relation(i, t).unwrap();
                for &j in sel.get(i, t) {
                    let start = adj.partition_point(|&(n, _)| n < j);
                    for &(n, v) in adj[start..].iter().take_while(|&&(n, _)| n == j) {
                        let _ = n;
                        let next = pair_index.len();
                        let p = *pair_index.entry((t, v)).or_insert_with(|| {
                            pair_types.push(t as usize);
                            pair_values.push(v as usize);
                            next
                        });
                        neighbor.push(j as usize);
                        pair.push(p);
                    }
                }
            }
            lengths.push(neighbor.len() - before);
        }
        Self {
            neighbor: neighbor.into(),
            pair: pair.into(),
            segments: Arc::new(Segments::from_lengths(lengths)),
            pair_types: pair_types.into(),
            pair_values: pair_values.into(),
        }
    }

    pub fn message_count(&self) -> usize {
        self.neighbor.len()
    }
}

/// Positive and negative `(center, other)` pairs for the similarity losses.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Samples {
    pub positives: Vec<(EntityId, EntityId)>,
    pub negatives: Vec<(EntityId, EntityId)>,
}

/// Graph nodes of one loss evaluation.
#[derive(Clone, Copy, Debug)]
pub struct LossNodes {
    pub total: NodeId,
    pub gnn: NodeId,
    pub sim: Option<NodeId>,
    pub reg: NodeId,
    pub embeddings: NodeId,
}

/// Static switches and weights of the objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Objective {
    pub composition: Composition,
    pub attention: bool,
    pub lambda_sim: f64,
    pub lambda_reg: f64,
}

/// Stacked attention/aggregation layers over `nb`, starting from the entity
/// table. Returns the final-layer embeddings.
pub fn forward(
    g: &mut Graph,
    layout: &ParamLayout,
    ids: &[NodeId],
    nb: &Neighborhoods,
    composition: Composition,
    attention: bool,
) -> Result<NodeId, AutodiffError> {
    let mut h = ids[ENTITY];
    if layout.layers.is_empty() {
        return Ok(h);
    }
    let et = g.gather(ids[REL_TYPE], nb.pair_types.clone())?;
    let ev = g.gather(ids[REL_VALUE], nb.pair_values.clone())?;
    let en = g.concat(&[et, ev])?;
    let en_msg = g.gather(en, nb.pair.clone())?;
    let uniform = if attention {
        None
    } else {
        let mut w = vec![0.0; nb.message_count()];
        for s in 0..nb.segments.count() {
            let r = nb.segments.range(s);
            let n = r.len() as f64;
            for x in &mut w[r] {
                *x = 1.0 / n;
            }
        }
        Some(g.constant(Tensor::vector(w)))
    };
    for slots in &layout.layers {
        let hj = g.gather(h, nb.neighbor.clone())?;
        let alpha = match uniform {
            Some(u) => u,
            None => {
                let hk = g.matmul(h, ids[slots.w_key])?;
                let hk = g.gather(hk, nb.neighbor.clone())?;
                let q = g.matmul(en, ids[slots.w_qry])?;
                let q = g.gather(q, nb.pair.clone())?;
                let pre = g.add(hk, q)?;
                let pre = g.add(pre, ids[slots.bias])?;
                let act = g.leaky_relu(pre)?;
                let logits = g.matvec(act, ids[slots.p])?;
                g.segment_softmax(logits, nb.segments.clone())?
            }
        };
        let msg = composition.apply(g, hj, en_msg)?;
        let msg = g.row_scale(msg, alpha)?;
        let agg = g.segment_sum(msg, nb.segments.clone())?;
        let cat = g.concat(&[agg, h])?;
        let z = g.matmul(cat, ids[slots.w_val])?;
        h = g.leaky_relu(z)?;
    }
    Ok(h)
}

/// Cross-entropy over sampled pairs, using the shared distance projection
/// of the rows of `x`. Returns `None` when there are no samples.
pub fn pair_loss(
    g: &mut Graph,
    layout: &ParamLayout,
    ids: &[NodeId],
    x: NodeId,
    samples: &Samples,
) -> Result<Option<NodeId>, AutodiffError> {
    let proj = DistanceMlp::apply(g, layout, ids, x)?;
    let mut terms = Vec::new();
    for (pairs, positive) in [(&samples.positives, true), (&samples.negatives, false)] {
        if pairs.is_empty() {
            continue;
        }
        let a: Arc<[usize]> = pairs.iter().map(|p| p.0 as usize).collect();
        let b: Arc<[usize]> = pairs.iter().map(|p| p.1 as usize).collect();
        let pa = g.gather(proj, a)?;
        let pb = g.gather(proj, b)?;
        let diff = g.sub(pa, pb)?;
        let dist = g.l1_norm(diff)?;
        let target = if positive {
            // s = 1 - d
            let neg = g.scale(dist, -1.0)?;
            let one = g.constant(Tensor::scalar(1.0));
            g.add(neg, one)?
        } else {
            // 1 - s = d
            dist
        };
        let c = g.clamp(target, SIM_CLAMP.0, SIM_CLAMP.1)?;
        let l = g.ln(c)?;
        let s = g.sum(l)?;
        terms.push(g.scale(s, -1.0)?);
    }
    let mut acc: Option<NodeId> = None;
    for t in terms {
        acc = Some(match acc {
            None => t,
            Some(a) => g.add(a, t)?,
        });
    }
    Ok(acc)
}

/// The joint objective: cross-entropy on final-layer embeddings, plus
/// `lambda_sim` times the same loss on the input embeddings (skipped when
/// zero), plus `lambda_reg` times the L2 norm of every parameter.
pub fn loss(
    g: &mut Graph,
    layout: &ParamLayout,
    ids: &[NodeId],
    nb: &Neighborhoods,
    samples: &Samples,
    obj: &Objective,
) -> Result<LossNodes, AutodiffError> {
    let h = forward(g, layout, ids, nb, obj.composition, obj.attention)?;
    let zero = g.constant(Tensor::scalar(0.0));
    let gnn = pair_loss(g, layout, ids, h, samples)?.unwrap_or(zero);
    let mut total = gnn;
    let mut sim = None;
    if obj.lambda_sim != 0.0 {
        if let Some(s) = pair_loss(g, layout, ids, ids[ENTITY], samples)? {
            let w = g.scale(s, obj.lambda_sim)?;
            total = g.add(total, w)?;
            sim = Some(s);
        }
    }
    let reg = g.l2_norm_of(ids)?;
    let w = g.scale(reg, obj.lambda_reg)?;
    total = g.add(total, w)?;
    Ok(LossNodes {
        total,
        gnn,
        sim,
        reg,
        embeddings: h,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Quad;

    #[test]
    fn composition_examples() {
        assert_eq!(Composition::Add.eval(&[1.0, 2.0], &[3.0, 4.0]), [4.0, 6.0]);
        assert_eq!(Composition::Mul.eval(&[1.0, 2.0], &[3.0, 4.0]), [3.0, 8.0]);
        assert_eq!(
            Composition::Corr.eval(&[1.0, 2.0], &[3.0, 4.0]),
            [11.0, 10.0]
        );
        assert!("sub".parse::<Composition>().is_err());
        assert_eq!("corr".parse::<Composition>().unwrap(), Composition::Corr);
    }

    #[test]
    fn add_with_zero_relation_is_identity() {
        let mut g = Graph::new();
        let a = g.param(Tensor::matrix(2, 3, vec![0.1, -0.2, 0.3, 0.4, 0.5, -0.6]));
        let z = g.constant(Tensor::zeros(crate::autodiff::Shape::matrix(2, 3)));
        let out = Composition::Add.apply(&mut g, a, z).unwrap();
        assert_eq!(g.value(out), g.value(a));
    }

    fn small_layout() -> (ParamLayout, Vec<Tensor>) {
        let layout = ParamLayout::new(4, 2, 3, 1, 2);
        let params = layout.init(7);
        (layout, params)
    }

    #[test]
    fn attention_examples() {
        let (layout, params) = small_layout();
        let s = layout.layers[0];
        let (wk, wq, b, p) = (
            &params[s.w_key],
            &params[s.w_qry],
            &params[s.bias].data,
            &params[s.p].data,
        );
        let ej = [0.1, 0.2, -0.3, 0.4];
        let en = [0.5, -0.1, 0.0, 0.2];
        assert_eq!(
            attention_weights(&[(&ej, &en)], wk, wq, b, p).unwrap(),
            [1.0]
        );
        let w = attention_weights(&[(&ej, &en), (&ej, &en)], wk, wq, b, p).unwrap();
        assert_eq!(w, [0.5, 0.5]);
        let other = [0.9, -0.8, 0.7, 0.1];
        let w =
            attention_weights(&[(&ej, &en), (&other, &en), (&ej, &other)], wk, wq, b, p).unwrap();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(attention_weights(&[], wk, wq, b, p).is_err());
    }

    #[test]
    fn pair_distance_properties() {
        let (layout, params) = small_layout();
        let mlp = DistanceMlp::from_params(&layout, &params);
        let x = [0.3, -0.1, 0.8, 0.2];
        let y = [-0.5, 0.4, 0.1, 0.9];
        assert_eq!(mlp.pair_distance(&x, &x), (0.0, 1.0));
        let (d, s) = mlp.pair_distance(&x, &y);
        assert_eq!(mlp.pair_distance(&y, &x).0, d);
        assert!((0.0..1.0).contains(&d));
        assert_eq!(s, 1.0 - d);
    }

    #[test]
    fn similarity_loss_examples() {
        assert!(similarity_loss(&[1.0], &[]) < 1e-6);
        assert!(similarity_loss(&[], &[0.0]) < 1e-6);
        assert!((similarity_loss(&[0.5], &[0.5]) - 2.0 * 2f64.ln()).abs() < 1e-12);
        assert_eq!(similarity_loss(&[], &[]), 0.0);
    }

    fn path_graph() -> MultiRelGraph {
        let mut g = MultiRelGraph::with_counts(3, 1, 2);
        g.add_quad(Quad::new(0, 0, 0, 1)).unwrap();
        g.add_quad(Quad::new(1, 0, 1, 2)).unwrap();
        g
    }

    #[test]
    fn neighborhoods_group_messages_by_center() {
        let g = path_graph();
        let nb = Neighborhoods::build(&g, &Selection::all(&g));
        assert_eq!(nb.segments.count(), 3);
        assert_eq!(nb.segments.len_of(0), 1);
        assert_eq!(nb.segments.len_of(1), 2);
        assert_eq!(&nb.neighbor[..], &[1, 0, 2, 1]);
    }

    #[test]
    fn isolated_node_aggregates_zero() {
        let mut g = MultiRelGraph::with_counts(2, 1, 1);
        g.set_entity_names(vec!["a".into(), "b".into()]);
        let layout = ParamLayout::new(4, 1, 2, 1, 1);
        let params = layout.init(3);
        let nb = Neighborhoods::build(&g, &Selection::all(&g));
        let mut graph = Graph::new();
        let ids: Vec<NodeId> = params.iter().map(|t| graph.param(t.clone())).collect();
        let h = forward(&mut graph, &layout, &ids, &nb, Composition::Corr, true).unwrap();
        // leaky(W_val [0 ; e_i])
        let wv = &params[layout.layers[0].w_val];
        let e0 = params[ENTITY].row(0);
        for c in 0..4 {
            let z: f64 = (0..4).map(|r| e0[r] * wv.data[(4 + r) * 4 + c]).sum();
            assert!((graph.value(h).row(0)[c] - leaky(z)).abs() < 1e-12);
        }
    }

    #[test]
    fn two_layers_reach_two_hops() {
        let g = path_graph();
        let nb = Neighborhoods::build(&g, &Selection::all(&g));
        let run = |layers: usize, bump: f64| {
            let layout = ParamLayout::new(4, layers, 3, 1, 2);
            let mut params = layout.init(5);
            params[ENTITY].row_mut(2)[0] += bump;
            let mut graph = Graph::new();
            let ids: Vec<NodeId> = params.iter().map(|t| graph.param(t.clone())).collect();
            let h = forward(&mut graph, &layout, &ids, &nb, Composition::Mul, true).unwrap();
            graph.value(h).row(0).to_vec()
        };
        assert_eq!(run(1, 0.0), run(1, 0.5));
        assert_ne!(run(2, 0.0), run(2, 0.5));
    }

    #[test]
    fn batched_attention_matches_plain() {
        let g = path_graph();
        let nb = Neighborhoods::build(&g, &Selection::all(&g));
        let layout = ParamLayout::new(4, 1, 3, 1, 2);
        let params = layout.init(11);
        let mut graph = Graph::new();
        let ids: Vec<NodeId> = params.iter().map(|t| graph.param(t.clone())).collect();
        let h = forward(&mut graph, &layout, &ids, &nb, Composition::Add, true).unwrap();
        // center 1 attends over (0, v0) and (2, v1)
        let en = |v: usize| [params[REL_TYPE].row(0), params[REL_VALUE].row(v)].concat();
        let (e0, e2) = (params[ENTITY].row(0), params[ENTITY].row(2));
        let (n0, n1) = (en(0), en(1));
        let s = layout.layers[0];
        let a = attention_weights(
            &[(e0, &n0), (e2, &n1)],
            &params[s.w_key],
            &params[s.w_qry],
            &params[s.bias].data,
            &params[s.p].data,
        )
        .unwrap();
        let m0 = Composition::Add.eval(e0, &n0);
        let m2 = Composition::Add.eval(e2, &n1);
        let agg: Vec<f64> = (0..4).map(|c| a[0] * m0[c] + a[1] * m2[c]).collect();
        let cat = [agg.as_slice(), params[ENTITY].row(1)].concat();
        let wv = &params[s.w_val];
        for c in 0..4 {
            let z: f64 = (0..8).map(|r| cat[r] * wv.data[r * 4 + c]).sum();
            assert!((graph.value(h).row(1)[c] - leaky(z)).abs() < 1e-12);
        }
    }

    #[test]
    fn loss_matches_plain_cross_entropy() {
        let g = path_graph();
        let nb = Neighborhoods::build(&g, &Selection::all(&g));
        let (layout, params) = {
            let l = ParamLayout::new(4, 2, 3, 1, 2);
            let p = l.init(2);
            (l, p)
        };
        let samples = Samples {
            positives: vec![(0, 1), (2, 1)],
            negatives: vec![(0, 2)],
        };
        let obj = Objective {
            composition: Composition::Corr,
            attention: true,
            lambda_sim: 0.0,
            lambda_reg: 0.0,
        };
        let mut graph = Graph::new();
        let ids: Vec<NodeId> = params.iter().map(|t| graph.param(t.clone())).collect();
        let nodes = loss(&mut graph, &layout, &ids, &nb, &samples, &obj).unwrap();
        let h = graph.value(nodes.embeddings).clone();
        let mlp = DistanceMlp::from_params(&layout, &params);
        let s = |a: u32, b: u32| mlp.pair_distance(h.row(a as usize), h.row(b as usize)).1;
        let expected = similarity_loss(&[s(0, 1), s(2, 1)], &[s(0, 2)]);
        assert!((graph.scalar(nodes.total) - expected).abs() < 1e-12);
        assert!(nodes.sim.is_none());
    }

    #[test]
    fn no_samples_give_zero_gnn_loss() {
        let g = MultiRelGraph::with_counts(1, 1, 1);
        let layout = ParamLayout::new(2, 2, 1, 1, 1);
        let params = layout.init(1);
        let nb = Neighborhoods::build(&g, &Selection::all(&g));
        let obj = Objective {
            composition: Composition::Add,
            attention: true,
            lambda_sim: 0.1,
            lambda_reg: 0.0,
        };
        let mut graph = Graph::new();
        let ids: Vec<NodeId> = params.iter().map(|t| graph.param(t.clone())).collect();
        let nodes = loss(&mut graph, &layout, &ids, &nb, &Samples::default(), &obj).unwrap();
        assert_eq!(graph.scalar(nodes.gnn), 0.0);
        assert_eq!(graph.scalar(nodes.total), 0.0);
    }
}
