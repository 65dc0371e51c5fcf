//! Reverse-mode differentiation over small dense tensors.
//!
//! A [`Graph`] records every primitive applied during a forward pass. Leaves
//! are either parameters (which receive gradients) or constants. Node ids are
//! handed out in creation order, and a node's parents always exist before it,
//! so descending id order is a valid reverse topological order.

mod check;
mod ops;
mod sparse;
mod tensor;

use std::collections::BTreeMap;
use std::sync::Arc;

use thiserror::Error;

pub use check::{grad_check, GradCheckReport, DENOMINATOR_FLOOR};
pub(crate) use ops::sigmoid;
pub use ops::{Op, PrimitiveTag};
pub use sparse::{CsrMatrix, Segments};
pub use tensor::{Shape, Tensor};

/// Slope of every LeakyReLU in the models.
pub const LEAKY_SLOPE: f64 = 0.01;

pub type NodeId = usize;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("{tag}: shape mismatch {shapes:?}: {reason}")]
    Shape {
        tag: PrimitiveTag,
        shapes: Vec<Shape>,
        reason: String,
    },
    #[error("{0}: empty input")]
    EmptyInput(PrimitiveTag),
    #[error("{0}: non-finite input")]
    NonFinite(PrimitiveTag),
    #[error("{0} needs parameters; build it with Op directly")]
    MissingParameters(PrimitiveTag),
    #[error("unknown node id {0}")]
    UnknownNode(NodeId),
    #[error("backward root must be scalar, got shape {0}")]
    NonScalarRoot(Shape),
    #[error("objective is not finite: {0}")]
    NonFiniteObjective(f64),
}

/// One node of the computation graph.
#[derive(Clone, Debug)]
pub struct DiffNode {
    pub id: NodeId,
    pub value: Tensor,
    pub grad: Vec<f64>,
    /// `None` for leaves.
    pub op: Option<Op>,
    pub parents: Vec<NodeId>,
    requires_grad: bool,
}

impl DiffNode {
    pub fn shape(&self) -> &Shape {
        &self.value.shape
    }

    pub fn is_leaf(&self) -> bool {
        self.parents.is_empty()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }
}

/// Leaf gradients produced by [`Graph::backward`], keyed by node id.
pub type GradientMap = BTreeMap<NodeId, Vec<f64>>;

#[derive(Default)]
pub struct Graph {
    nodes: Vec<DiffNode>,
    fault: Option<(PrimitiveTag, f64)>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push_leaf(&mut self, value: Tensor, requires_grad: bool) -> NodeId {
        let id = self.nodes.len();
        let grad = vec![0.0; value.data.len()];
        self.nodes.push(DiffNode {
            id,
            value,
            grad,
            op: None,
            parents: Vec::new(),
            requires_grad,
        });
        id
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.push_leaf(value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push_leaf(value, false)
    }

    pub fn node(&self, id: NodeId) -> &DiffNode {
        &self.nodes[id]
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id].value
    }

    /// Value of a scalar node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        self.nodes[id].value.data[0]
    }

    pub fn grad(&self, id: NodeId) -> &[f64] {
        &self.nodes[id].grad
    }

    /// Applies a parameter-free primitive.
    pub fn apply_primitive(
        &mut self,
        tag: PrimitiveTag,
        inputs: &[NodeId],
    ) -> Result<NodeId, AutodiffError> {
        let op = Op::from_tag(tag).ok_or(AutodiffError::MissingParameters(tag))?;
        self.apply(op, inputs)
    }

    pub fn apply(&mut self, op: Op, inputs: &[NodeId]) -> Result<NodeId, AutodiffError> {
        if let Some(&bad) = inputs.iter().find(|&&i| i >= self.nodes.len()) {
            return Err(AutodiffError::UnknownNode(bad));
        }
        let values: Vec<&Tensor> = inputs.iter().map(|&i| &self.nodes[i].value).collect();
        let value = ops::forward(&op, &values)?;
        let requires_grad = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        let id = self.nodes.len();
        let grad = vec![0.0; value.data.len()];
        self.nodes.push(DiffNode {
            id,
            value,
            grad,
            op: Some(op),
            parents: inputs.to_vec(),
            requires_grad,
        });
        Ok(id)
    }

    /// Multiplies the backward rule of `tag` by `factor`. Only for exercising
    /// gradient checks against a known-broken rule.
    #[doc(hidden)]
    pub fn inject_backward_fault(&mut self, tag: PrimitiveTag, factor: f64) {
        self.fault = Some((tag, factor));
    }

    /// Reverse sweep from a scalar root.
    ///
    /// Leaf gradients accumulate across calls until [`Graph::zero_grad`];
    /// interior adjoints are recomputed on every sweep.
    pub fn backward(&mut self, root: NodeId) -> Result<GradientMap, AutodiffError> {
        if root >= self.nodes.len() {
            return Err(AutodiffError::UnknownNode(root));
        }
        if !self.nodes[root].value.shape.is_scalar() {
            return Err(AutodiffError::NonScalarRoot(
                self.nodes[root].value.shape.clone(),
            ));
        }
        for node in self.nodes[..=root].iter_mut().filter(|n| !n.is_leaf()) {
            node.grad.iter_mut().for_each(|g| *g = 0.0);
        }
        let mut reachable = vec![false; root + 1];
        reachable[root] = true;
        // Interior gradients still holding zeros; their first contribution is moved in.
        let mut fresh = vec![true; root + 1];
        fresh[root] = false;
        if self.nodes[root].is_leaf() {
            self.nodes[root].grad[0] += 1.0;
        } else {
            self.nodes[root].grad[0] = 1.0;
        }

        for id in (0..=root).rev() {
            if !reachable[id] || self.nodes[id].is_leaf() {
                continue;
            }
            let (before, rest) = self.nodes.split_at_mut(id);
            let node = &rest[0];
            for &p in &node.parents {
                reachable[p] = true;
            }
            if !node.requires_grad {
                continue;
            }
            let op = node.op.as_ref().expect("interior node has an op");
            let inputs: Vec<&Tensor> = node.parents.iter().map(|&p| &before[p].value).collect();
            let needs: Vec<bool> = node
                .parents
                .iter()
                .map(|&p| before[p].requires_grad)
                .collect();
            let mut contributions = ops::backward(op, &inputs, &node.value, &node.grad, &needs);
            if let Some((tag, factor)) = self.fault {
                if tag == op.tag() {
                    for c in contributions.iter_mut().flatten() {
                        c.iter_mut().for_each(|v| *v *= factor);
                    }
                }
            }
            let parents = node.parents.clone();
            for (p, contrib) in parents.into_iter().zip(contributions) {
                if let Some(c) = contrib {
                    let target = &mut before[p];
                    if fresh[p] && !target.is_leaf() && c.len() == target.grad.len() {
                        target.grad = c;
                    } else {
                        for (g, v) in target.grad.iter_mut().zip(c) {
                            *g += v;
                        }
                    }
                    fresh[p] = false;
                }
            }
        }

        Ok(self.nodes[..=root]
            .iter()
            .filter(|n| n.is_leaf() && n.requires_grad && reachable[n.id])
            .map(|n| (n.id, n.grad.clone()))
            .collect())
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    // Convenience wrappers.

    pub fn matvec(&mut self, a: NodeId, x: NodeId) -> Result<NodeId, AutodiffError> {
        self.apply(Op::MatVec, &[a, x])
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.apply(Op::MatMul, &[a, b])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.apply(Op::Add, &[a, b])
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.apply(Op::Sub, &[a, b])
    }

    pub fn hadamard(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.apply(Op::Hadamard, &[a, b])
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId, AutodiffError> {
        self.apply(Op::Concat, parts)
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId, AutodiffError> {
        self.apply(Op::Sum, &[x])
    }

    pub fn mean(&mut self, x: NodeId) -> Result<NodeId, AutodiffError> {
        self.apply(Op::Mean, &[x])
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> Result<NodeId, AutodiffError> {
        self.apply(Op::Scale(c), &[x])
    }

    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId, AutodiffError> {
        self.apply(Op::Softmax, &[x])
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId, AutodiffError> {
        self.apply(Op::Sigmoid, &[x])
    }

    pub fn leaky_relu(&mut self, x: NodeId) -> Result<NodeId, AutodiffError> {
        self.apply(Op::LeakyRelu(LEAKY_SLOPE), &[x])
    }

    pub fn l1_norm(&mut self, x: NodeId) -> Result<NodeId, AutodiffError> {
        self.apply(Op::L1Norm, &[x])
    }

    pub fn circ_corr(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.apply(Op::CircCorr, &[a, b])
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.apply(Op::Dot, &[a, b])
    }

    /// Row `ia[k]` of `a` dotted with row `ib[k]` of `b`, for every `k`.
    pub fn pair_dot(
        &mut self,
        a: NodeId,
        b: NodeId,
        ia: Arc<[usize]>,
        ib: Arc<[usize]>,
    ) -> Result<NodeId, AutodiffError> {
        self.apply(Op::PairDot(ia, ib), &[a, b])
    }

    pub fn gather(&mut self, x: NodeId, idx: Arc<[usize]>) -> Result<NodeId, AutodiffError> {
        self.apply(Op::Gather(idx), &[x])
    }

    pub fn segment_sum(&mut self, x: NodeId, seg: Arc<Segments>) -> Result<NodeId, AutodiffError> {
        self.apply(Op::SegmentSum(seg), &[x])
    }

    pub fn segment_softmax(
        &mut self,
        x: NodeId,
        seg: Arc<Segments>,
    ) -> Result<NodeId, AutodiffError> {
        self.apply(Op::SegmentSoftmax(seg), &[x])
    }

    pub fn row_scale(&mut self, x: NodeId, w: NodeId) -> Result<NodeId, AutodiffError> {
        self.apply(Op::RowScale, &[x, w])
    }

    pub fn spmm(&mut self, m: Arc<CsrMatrix>, x: NodeId) -> Result<NodeId, AutodiffError> {
        self.apply(Op::SpMM(m), &[x])
    }

    pub fn ln(&mut self, x: NodeId) -> Result<NodeId, AutodiffError> {
        self.apply(Op::Ln, &[x])
    }

    pub fn clamp(&mut self, x: NodeId, lo: f64, hi: f64) -> Result<NodeId, AutodiffError> {
        self.apply(Op::Clamp { lo, hi }, &[x])
    }

    pub fn sqrt(&mut self, x: NodeId) -> Result<NodeId, AutodiffError> {
        self.apply(Op::Sqrt, &[x])
    }

    pub fn log_sigmoid(&mut self, x: NodeId) -> Result<NodeId, AutodiffError> {
        self.apply(Op::LogSigmoid, &[x])
    }

    /// `sqrt(Σ ‖x‖²)` over several nodes.
    pub fn l2_norm_of(&mut self, xs: &[NodeId]) -> Result<NodeId, AutodiffError> {
        let mut total: Option<NodeId> = None;
        for &x in xs {
            let sq = self.hadamard(x, x)?;
            let s = self.sum(sq)?;
            total = Some(match total {
                Some(t) => self.add(t, s)?,
                None => s,
            });
        }
        let total = match total {
            Some(t) => t,
            None => self.constant(Tensor::scalar(0.0)),
        };
        self.sqrt(total)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn sigmoid_of_zero_is_half() {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(0.0));
        let y = g.sigmoid(x).unwrap();
        assert_eq!(g.scalar(y), 0.5);
        let grads = g.backward(y).unwrap();
        assert_eq!(grads[&x], vec![0.25]);
    }

    #[test]
    fn matvec_identity() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::identity(3));
        let x = g.constant(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let y = g.matvec(a, x).unwrap();
        assert_eq!(g.value(y).data, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn leaky_relu_negative_slope() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::scalar(-1.0));
        let y = g.leaky_relu(x).unwrap();
        assert_abs_diff_eq!(g.scalar(y), -0.01, epsilon = 1e-15);
    }

    #[test]
    fn shape_mismatch_names_tag_and_shapes() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(Shape::matrix(2, 3)));
        let x = g.constant(Tensor::zeros(Shape::vector(2)));
        let err = g.matvec(a, x).unwrap_err();
        let msg = err.to_string();
        assert!(
            msg.contains("matvec") && msg.contains("[2, 3]") && msg.contains("[2]"),
            "{msg}"
        );
    }

    #[test]
    fn circ_corr_examples() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::vector(vec![1.0, 2.0]));
        let b = g.constant(Tensor::vector(vec![3.0, 4.0]));
        let c = g.circ_corr(a, b).unwrap();
        assert_eq!(g.value(c).data, vec![11.0, 10.0]);

        let one_hot = g.constant(Tensor::vector(vec![1.0, 0.0, 0.0, 0.0]));
        let v = g.constant(Tensor::vector(vec![0.3, -1.5, 2.25, 7.0]));
        let c = g.circ_corr(one_hot, v).unwrap();
        assert_eq!(g.value(c).data, vec![0.3, -1.5, 2.25, 7.0]);

        let zero = g.constant(Tensor::zeros(Shape::vector(4)));
        let c = g.circ_corr(zero, v).unwrap();
        assert_eq!(g.value(c).data, vec![0.0; 4]);

        let short = g.constant(Tensor::vector(vec![1.0]));
        assert!(g.circ_corr(short, v).is_err());
    }

    #[test]
    fn softmax_examples_and_errors() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(vec![0.0, 0.0]));
        let y = g.softmax(x).unwrap();
        assert_eq!(g.value(y).data, vec![0.5, 0.5]);

        let x = g.constant(Tensor::vector(vec![812.5; 3]));
        let y = g.softmax(x).unwrap();
        for v in &g.value(y).data {
            assert_abs_diff_eq!(*v, 1.0 / 3.0, epsilon = 1e-15);
        }

        let x = g.constant(Tensor::vector(vec![-4.0]));
        let y = g.softmax(x).unwrap();
        assert_eq!(g.value(y).data, vec![1.0]);

        let empty = g.constant(Tensor::vector(vec![]));
        assert_eq!(
            g.softmax(empty),
            Err(AutodiffError::EmptyInput(PrimitiveTag::Softmax))
        );
        let bad = g.constant(Tensor::vector(vec![1.0, f64::NAN]));
        assert_eq!(
            g.softmax(bad),
            Err(AutodiffError::NonFinite(PrimitiveTag::Softmax))
        );
    }

    #[test]
    fn sum_of_add_gradient_is_ones() {
        let mut g = Graph::new();
        let a = g.param(Tensor::vector(vec![1.0, -2.0, 3.0]));
        let b = g.param(Tensor::vector(vec![0.5, 0.5, 0.5]));
        let s = g.add(a, b).unwrap();
        let total = g.sum(s).unwrap();
        let grads = g.backward(total).unwrap();
        assert_eq!(grads[&a], vec![1.0; 3]);
        assert_eq!(grads[&b], vec![1.0; 3]);
    }

    #[test]
    fn backward_rejects_non_scalar_root() {
        let mut g = Graph::new();
        let a = g.param(Tensor::vector(vec![1.0, 2.0]));
        let y = g.sigmoid(a).unwrap();
        assert!(matches!(
            g.backward(y),
            Err(AutodiffError::NonScalarRoot(_))
        ));
    }

    #[test]
    fn repeated_backward_accumulates_until_reset() {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(2.0));
        let y = g.hadamard(x, x).unwrap();
        g.backward(y).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads[&x], vec![8.0]);
        g.zero_grad();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads[&x], vec![4.0]);
    }

    #[test]
    fn backward_is_bit_deterministic() {
        let build = || {
            let mut g = Graph::new();
            let w = g.param(Tensor::matrix(2, 3, vec![0.1, -0.7, 0.3, 1.1, 0.05, -0.2]));
            let x = g.param(Tensor::vector(vec![0.4, -0.9, 2.0]));
            let h = g.matvec(w, x).unwrap();
            let a = g.leaky_relu(h).unwrap();
            let s = g.softmax(a).unwrap();
            let l = g.l1_norm(s).unwrap();
            let q = g.dot(a, a).unwrap();
            let root = g.add(l, q).unwrap();
            (g, root, w, x)
        };
        let (mut g1, r1, w, x) = build();
        let (mut g2, r2, _, _) = build();
        let a = g1.backward(r1).unwrap();
        let b = g2.backward(r2).unwrap();
        for id in [w, x] {
            let bits_a: Vec<u64> = a[&id].iter().map(|v| v.to_bits()).collect();
            let bits_b: Vec<u64> = b[&id].iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits_a, bits_b);
        }
    }

    #[test]
    fn constants_get_no_gradient_entry() {
        let mut g = Graph::new();
        let c = g.constant(Tensor::scalar(3.0));
        let x = g.param(Tensor::scalar(1.5));
        let y = g.hadamard(c, x).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.len(), 1);
        assert_eq!(grads[&x], vec![3.0]);
    }

    #[test]
    fn segment_ops_handle_empty_segments() {
        let seg = Arc::new(Segments::from_lengths([2, 0, 1]));
        let mut g = Graph::new();
        let x = g.param(Tensor::matrix(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let s = g.segment_sum(x, seg.clone()).unwrap();
        assert_eq!(g.value(s).data, vec![4.0, 6.0, 0.0, 0.0, 5.0, 6.0]);
        let scores = g.constant(Tensor::vector(vec![0.0, 0.0, 9.0]));
        let a = g.segment_softmax(scores, seg).unwrap();
        assert_eq!(g.value(a).data, vec![0.5, 0.5, 1.0]);
    }

    #[test]
    fn apply_primitive_requires_parameters_for_parametric_tags() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::scalar(1.0));
        assert_eq!(
            g.apply_primitive(PrimitiveTag::Scale, &[x]),
            Err(AutodiffError::MissingParameters(PrimitiveTag::Scale))
        );
        let y = g.apply_primitive(PrimitiveTag::Sigmoid, &[x]).unwrap();
        assert!(g.scalar(y) > 0.5);
    }
}
