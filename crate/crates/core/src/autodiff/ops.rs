//! Forward and backward rules for every primitive.

use std::sync::Arc;

use super::sparse::{CsrMatrix, Segments};
use super::tensor::{Shape, Tensor};
use super::AutodiffError;

/// The kind of a primitive, without its parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PrimitiveTag {
    MatVec,
    MatMul,
    Add,
    Sub,
    Hadamard,
    Concat,
    Sum,
    Mean,
    Scale,
    Softmax,
    Sigmoid,
    LeakyRelu,
    L1Norm,
    CircCorr,
    Dot,
    Gather,
    SegmentSum,
    SegmentSoftmax,
    RowScale,
    SpMM,
    Ln,
    Clamp,
    Sqrt,
    LogSigmoid,
    PairDot,
}

impl PrimitiveTag {
    pub const ALL: [PrimitiveTag; 25] = [
        PrimitiveTag::MatVec,
        PrimitiveTag::MatMul,
        PrimitiveTag::Add,
        PrimitiveTag::Sub,
        PrimitiveTag::Hadamard,
        PrimitiveTag::Concat,
        PrimitiveTag::Sum,
        PrimitiveTag::Mean,
        PrimitiveTag::Scale,
        PrimitiveTag::Softmax,
        PrimitiveTag::Sigmoid,
        PrimitiveTag::LeakyRelu,
        PrimitiveTag::L1Norm,
        PrimitiveTag::CircCorr,
        PrimitiveTag::Dot,
        PrimitiveTag::Gather,
        PrimitiveTag::SegmentSum,
        PrimitiveTag::SegmentSoftmax,
        PrimitiveTag::RowScale,
        PrimitiveTag::SpMM,
        PrimitiveTag::Ln,
        PrimitiveTag::Clamp,
        PrimitiveTag::Sqrt,
        PrimitiveTag::LogSigmoid,
        PrimitiveTag::PairDot,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PrimitiveTag::MatVec => "matvec",
            PrimitiveTag::MatMul => "matmul",
            PrimitiveTag::Add => "add",
            PrimitiveTag::Sub => "sub",
            PrimitiveTag::Hadamard => "hadamard",
            PrimitiveTag::Concat => "concat",
            PrimitiveTag::Sum => "sum",
            PrimitiveTag::Mean => "mean",
            PrimitiveTag::Scale => "scale",
            PrimitiveTag::Softmax => "softmax",
            PrimitiveTag::Sigmoid => "sigmoid",
            PrimitiveTag::LeakyRelu => "leaky_relu",
            PrimitiveTag::L1Norm => "l1_norm",
            PrimitiveTag::CircCorr => "circ_corr",
            PrimitiveTag::Dot => "dot",
            PrimitiveTag::Gather => "gather",
            PrimitiveTag::SegmentSum => "segment_sum",
            PrimitiveTag::SegmentSoftmax => "segment_softmax",
            PrimitiveTag::RowScale => "row_scale",
            PrimitiveTag::SpMM => "spmm",
            PrimitiveTag::Ln => "ln",
            PrimitiveTag::Clamp => "clamp",
            PrimitiveTag::Sqrt => "sqrt",
            PrimitiveTag::LogSigmoid => "log_sigmoid",
            PrimitiveTag::PairDot => "pair_dot",
        }
    }
}

impl std::fmt::Display for PrimitiveTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A primitive together with its constant parameters.
///
/// Shape rules:
/// - `MatVec`: `[r, c] x [c] -> [r]`; `MatMul`: `[r, k] x [k, c] -> [r, c]`.
/// - `Add`/`Sub`/`Hadamard`: equal shapes, or the right operand is a scalar or
///   a vector matching the left operand's last dimension (row broadcast).
/// - `Concat`: vectors append; matrices with equal row counts join columns.
/// - `Sum`/`Mean`: any shape to a scalar.
/// - `L1Norm`/`Dot`: vectors to a scalar, matrices row-wise to a vector.
/// - `CircCorr`: `[a ⋆ b]_k = Σ_i a_i b_{(i+k) mod d}`, on vectors or row-wise.
/// - `Softmax`: non-empty finite vector.
/// - `Gather`: picks rows (or vector entries) by index.
/// - `SegmentSum`/`SegmentSoftmax`: reduce/normalize contiguous row groups.
/// - `RowScale`: `[r, c] x [r] -> [r, c]`, row `i` times weight `i`.
/// - `SpMM`: constant sparse `[r, n]` times dense `[n, c]`.
/// - `PairDot`: `[ra, c] x [rb, c] -> [n]`, entry `k` is `a[ia_k] · b[ib_k]`.
#[derive(Clone, Debug)]
pub enum Op {
    MatVec,
    MatMul,
    Add,
    Sub,
    Hadamard,
    Concat,
    Sum,
    Mean,
    Scale(f64),
    Softmax,
    Sigmoid,
    LeakyRelu(f64),
    L1Norm,
    CircCorr,
    Dot,
    Gather(Arc<[usize]>),
    SegmentSum(Arc<Segments>),
    SegmentSoftmax(Arc<Segments>),
    RowScale,
    SpMM(Arc<CsrMatrix>),
    Ln,
    Clamp { lo: f64, hi: f64 },
    Sqrt,
    LogSigmoid,
    PairDot(Arc<[usize]>, Arc<[usize]>),
}

impl Op {
    pub fn tag(&self) -> PrimitiveTag {
        match self {
            Op::MatVec => PrimitiveTag::MatVec,
            Op::MatMul => PrimitiveTag::MatMul,
            Op::Add => PrimitiveTag::Add,
            Op::Sub => PrimitiveTag::Sub,
            Op::Hadamard => PrimitiveTag::Hadamard,
            Op::Concat => PrimitiveTag::Concat,
            Op::Sum => PrimitiveTag::Sum,
            Op::Mean => PrimitiveTag::Mean,
            Op::Scale(_) => PrimitiveTag::Scale,
            Op::Softmax => PrimitiveTag::Softmax,
            Op::Sigmoid => PrimitiveTag::Sigmoid,
            Op::LeakyRelu(_) => PrimitiveTag::LeakyRelu,
            Op::L1Norm => PrimitiveTag::L1Norm,
            Op::CircCorr => PrimitiveTag::CircCorr,
            Op::Dot => PrimitiveTag::Dot,
            Op::Gather(_) => PrimitiveTag::Gather,
            Op::SegmentSum(_) => PrimitiveTag::SegmentSum,
            Op::SegmentSoftmax(_) => PrimitiveTag::SegmentSoftmax,
            Op::RowScale => PrimitiveTag::RowScale,
            Op::SpMM(_) => PrimitiveTag::SpMM,
            Op::Ln => PrimitiveTag::Ln,
            Op::Clamp { .. } => PrimitiveTag::Clamp,
            Op::Sqrt => PrimitiveTag::Sqrt,
            Op::LogSigmoid => PrimitiveTag::LogSigmoid,
            Op::PairDot(..) => PrimitiveTag::PairDot,
        }
    }

    /// Builds the parameter-free op for a tag, or `None` when the tag needs
    /// parameters (`Scale`, `LeakyRelu`, `Gather`, segments, `SpMM`, `Clamp`,
    /// `PairDot`).
    pub fn from_tag(tag: PrimitiveTag) -> Option<Op> {
        Some(match tag {
            PrimitiveTag::MatVec => Op::MatVec,
            PrimitiveTag::MatMul => Op::MatMul,
            PrimitiveTag::Add => Op::Add,
            PrimitiveTag::Sub => Op::Sub,
            PrimitiveTag::Hadamard => Op::Hadamard,
            PrimitiveTag::Concat => Op::Concat,
            PrimitiveTag::Sum => Op::Sum,
            PrimitiveTag::Mean => Op::Mean,
            PrimitiveTag::Softmax => Op::Softmax,
            PrimitiveTag::Sigmoid => Op::Sigmoid,
            PrimitiveTag::L1Norm => Op::L1Norm,
            PrimitiveTag::CircCorr => Op::CircCorr,
            PrimitiveTag::Dot => Op::Dot,
            PrimitiveTag::RowScale => Op::RowScale,
            PrimitiveTag::Ln => Op::Ln,
            PrimitiveTag::Sqrt => Op::Sqrt,
            PrimitiveTag::LogSigmoid => Op::LogSigmoid,
            _ => return None,
        })
    }
}

fn shape_err(tag: PrimitiveTag, inputs: &[&Tensor], reason: impl Into<String>) -> AutodiffError {
    AutodiffError::Shape {
        tag,
        shapes: inputs.iter().map(|t| t.shape.clone()).collect(),
        reason: reason.into(),
    }
}

fn arity(tag: PrimitiveTag, inputs: &[&Tensor], n: usize) -> Result<(), AutodiffError> {
    if inputs.len() != n {
        return Err(shape_err(
            tag,
            inputs,
            format!("expected {n} input(s), got {}", inputs.len()),
        ));
    }
    Ok(())
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Broadcast {
    Same,
    Scalar,
    Row,
}

fn broadcast_kind(tag: PrimitiveTag, inputs: &[&Tensor]) -> Result<Broadcast, AutodiffError> {
    let (a, b) = (&inputs[0].shape, &inputs[1].shape);
    if a == b {
        Ok(Broadcast::Same)
    } else if b.numel() == 1 && b.rank() <= 1 {
        Ok(Broadcast::Scalar)
    } else if a.rank() == 2 && b.rank() == 1 && b.0[0] == a.0[1] {
        Ok(Broadcast::Row)
    } else {
        Err(shape_err(
            tag,
            inputs,
            "operands neither equal nor broadcastable",
        ))
    }
}

#[inline]
fn reduce_to(kind: Broadcast, g: &[f64], cols: usize, len: usize, sign: f64) -> Vec<f64> {
    match kind {
        Broadcast::Same => g.iter().map(|v| sign * v).collect(),
        Broadcast::Scalar => vec![sign * g.iter().sum::<f64>()],
        Broadcast::Row => {
            let mut out = vec![0.0; len];
            for row in g.chunks_exact(cols.max(1)) {
                for (o, v) in out.iter_mut().zip(row) {
                    *o += sign * v;
                }
            }
            out
        }
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn log_sigmoid(x: f64) -> f64 {
    x.min(0.0) - (-x.abs()).exp().ln_1p()
}

fn softmax_slice(x: &[f64], out: &mut [f64]) {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, v) in out.iter_mut().zip(x) {
        *o = (v - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

fn dot_slices(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

/// `out_k = Σ_i a_i b_{(i+k) mod d}`, the wrap-around split into two
/// contiguous runs.
fn circ_corr_row(a: &[f64], b: &[f64], out: &mut [f64]) {
    let d = a.len();
    for (k, o) in out.iter_mut().enumerate() {
        *o = dot_slices(&a[..d - k], &b[k..]) + dot_slices(&a[d - k..], &b[..k]);
    }
}

/// `out_j += Σ_i a_i g_{(j-i) mod d}`.
fn circ_conv_row_acc(a: &[f64], g: &[f64], out: &mut [f64]) {
    let d = a.len();
    for (i, &ai) in a.iter().enumerate() {
        for (o, gv) in out[i..].iter_mut().zip(&g[..d - i]) {
            *o += ai * gv;
        }
        for (o, gv) in out[..i].iter_mut().zip(&g[d - i..]) {
            *o += ai * gv;
        }
    }
}

/// `C += A · B` for row-major `A: [r, k]`, `B: [k, c]`.
fn gemm_acc(a: &[f64], b: &[f64], c: &mut [f64], r: usize, k: usize, cols: usize) {
    for i in 0..r {
        let crow = &mut c[i * cols..(i + 1) * cols];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * cols..(p + 1) * cols];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

pub(crate) fn forward(op: &Op, inputs: &[&Tensor]) -> Result<Tensor, AutodiffError> {
    let tag = op.tag();
    match op {
        Op::MatVec => {
            arity(tag, inputs, 2)?;
            let (a, x) = (inputs[0], inputs[1]);
            if a.shape.rank() != 2 || x.shape.rank() != 1 || a.shape.0[1] != x.shape.0[0] {
                return Err(shape_err(tag, inputs, "expected [r, c] and [c]"));
            }
            let (r, c) = (a.shape.0[0], a.shape.0[1]);
            let out = (0..r)
                .map(|i| {
                    a.data[i * c..(i + 1) * c]
                        .iter()
                        .zip(&x.data)
                        .map(|(p, q)| p * q)
                        .sum()
                })
                .collect();
            Ok(Tensor::vector(out))
        }
        Op::MatMul => {
            arity(tag, inputs, 2)?;
            let (a, b) = (inputs[0], inputs[1]);
            if a.shape.rank() != 2 || b.shape.rank() != 2 || a.shape.0[1] != b.shape.0[0] {
                return Err(shape_err(tag, inputs, "expected [r, k] and [k, c]"));
            }
            let (r, k, c) = (a.shape.0[0], a.shape.0[1], b.shape.0[1]);
            let mut out = vec![0.0; r * c];
            gemm_acc(&a.data, &b.data, &mut out, r, k, c);
            Ok(Tensor::matrix(r, c, out))
        }
        Op::Add | Op::Sub | Op::Hadamard => {
            arity(tag, inputs, 2)?;
            broadcast_kind(tag, inputs)?;
            let (a, b) = (inputs[0], inputs[1]);
            let out = a
                .data
                .iter()
                .zip(b.data.iter().cycle())
                .map(|(&x, &y)| match op {
                    Op::Add => x + y,
                    Op::Sub => x - y,
                    _ => x * y,
                })
                .collect();
            Ok(Tensor::new(a.shape.clone(), out))
        }
        Op::Concat => {
            if inputs.len() < 2 {
                return Err(shape_err(tag, inputs, "needs at least two inputs"));
            }
            let rank = inputs[0].shape.rank();
            if rank == 1 && inputs.iter().all(|t| t.shape.rank() == 1) {
                let data: Vec<f64> = inputs.iter().flat_map(|t| t.data.iter().copied()).collect();
                return Ok(Tensor::vector(data));
            }
            let rows = inputs[0].shape.rows();
            if rank != 2
                || inputs
                    .iter()
                    .any(|t| t.shape.rank() != 2 || t.shape.rows() != rows)
            {
                return Err(shape_err(
                    tag,
                    inputs,
                    "expected all vectors or matrices with equal rows",
                ));
            }
            let total: usize = inputs.iter().map(|t| t.shape.cols()).sum();
            let mut out = Vec::with_capacity(rows * total);
            for r in 0..rows {
                for t in inputs {
                    out.extend_from_slice(t.row(r));
                }
            }
            Ok(Tensor::matrix(rows, total, out))
        }
        Op::Sum | Op::Mean => {
            arity(tag, inputs, 1)?;
            let x = inputs[0];
            let s: f64 = x.data.iter().sum();
            if matches!(op, Op::Mean) {
                if x.data.is_empty() {
                    return Err(AutodiffError::EmptyInput(tag));
                }
                Ok(Tensor::scalar(s / x.data.len() as f64))
            } else {
                Ok(Tensor::scalar(s))
            }
        }
        Op::Scale(c) => {
            arity(tag, inputs, 1)?;
            let x = inputs[0];
            Ok(Tensor::new(
                x.shape.clone(),
                x.data.iter().map(|v| c * v).collect(),
            ))
        }
        Op::Softmax => {
            arity(tag, inputs, 1)?;
            let x = inputs[0];
            if x.shape.rank() != 1 {
                return Err(shape_err(tag, inputs, "expected a vector"));
            }
            if x.data.is_empty() {
                return Err(AutodiffError::EmptyInput(tag));
            }
            if !x.is_finite() {
                return Err(AutodiffError::NonFinite(tag));
            }
            let mut out = vec![0.0; x.data.len()];
            softmax_slice(&x.data, &mut out);
            Ok(Tensor::vector(out))
        }
        Op::Sigmoid | Op::LeakyRelu(_) | Op::Ln | Op::Clamp { .. } | Op::Sqrt | Op::LogSigmoid => {
            arity(tag, inputs, 1)?;
            let x = inputs[0];
            let f = |v: f64| match op {
                Op::Sigmoid => sigmoid(v),
                Op::LeakyRelu(s) => {
                    if v > 0.0 {
                        v
                    } else {
                        s * v
                    }
                }
                Op::Ln => v.ln(),
                Op::Clamp { lo, hi } => v.clamp(*lo, *hi),
                Op::Sqrt => v.sqrt(),
                _ => log_sigmoid(v),
            };
            Ok(Tensor::new(
                x.shape.clone(),
                x.data.iter().map(|&v| f(v)).collect(),
            ))
        }
        Op::L1Norm => {
            arity(tag, inputs, 1)?;
            let x = inputs[0];
            match x.shape.rank() {
                1 => Ok(Tensor::scalar(x.data.iter().map(|v| v.abs()).sum())),
                2 => {
                    let rows = x.shape.rows();
                    Ok(Tensor::vector(
                        (0..rows)
                            .map(|r| x.row(r).iter().map(|v| v.abs()).sum())
                            .collect(),
                    ))
                }
                _ => Err(shape_err(tag, inputs, "expected a vector or matrix")),
            }
        }
        Op::CircCorr | Op::Dot => {
            arity(tag, inputs, 2)?;
            let (a, b) = (inputs[0], inputs[1]);
            if a.shape != b.shape || a.shape.rank() == 0 {
                return Err(shape_err(
                    tag,
                    inputs,
                    "operands must have equal vector or matrix shapes",
                ));
            }
            let rows = if a.shape.rank() == 1 {
                1
            } else {
                a.shape.rows()
            };
            let d = a.data.len() / rows.max(1);
            if matches!(op, Op::CircCorr) {
                let mut out = vec![0.0; a.data.len()];
                for r in 0..rows {
                    let span = r * d..(r + 1) * d;
                    circ_corr_row(&a.data[span.clone()], &b.data[span.clone()], &mut out[span]);
                }
                Ok(Tensor::new(a.shape.clone(), out))
            } else {
                let dots: Vec<f64> = (0..rows)
                    .map(|r| {
                        let span = r * d..(r + 1) * d;
                        a.data[span.clone()]
                            .iter()
                            .zip(&b.data[span])
                            .map(|(p, q)| p * q)
                            .sum()
                    })
                    .collect();
                if a.shape.rank() == 1 {
                    Ok(Tensor::scalar(dots[0]))
                } else {
                    Ok(Tensor::vector(dots))
                }
            }
        }
        Op::PairDot(ia, ib) => {
            arity(tag, inputs, 2)?;
            let (a, b) = (inputs[0], inputs[1]);
            if a.shape.rank() != 2 || b.shape.rank() != 2 || a.shape.cols() != b.shape.cols() {
                return Err(shape_err(
                    tag,
                    inputs,
                    "expected matrices with equal column counts",
                ));
            }
            if ia.len() != ib.len() {
                return Err(shape_err(tag, inputs, "index lists differ in length"));
            }
            for (idx, rows) in [(ia, a.shape.rows()), (ib, b.shape.rows())] {
                if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
                    return Err(shape_err(
                        tag,
                        inputs,
                        format!("index {bad} out of range for {rows} rows"),
                    ));
                }
            }
            let c = a.shape.cols();
            let out = ia
                .iter()
                .zip(ib.iter())
                .map(|(&i, &j)| {
                    a.data[i * c..(i + 1) * c]
                        .iter()
                        .zip(&b.data[j * c..(j + 1) * c])
                        .map(|(p, q)| p * q)
                        .sum()
                })
                .collect();
            Ok(Tensor::vector(out))
        }
        Op::Gather(idx) => {
            arity(tag, inputs, 1)?;
            let x = inputs[0];
            if x.shape.rank() == 0 {
                return Err(shape_err(tag, inputs, "cannot gather from a scalar"));
            }
            let rows = x.shape.rows();
            if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
                return Err(shape_err(
                    tag,
                    inputs,
                    format!("index {bad} out of range for {rows} rows"),
                ));
            }
            let c = x.shape.cols();
            let mut out = Vec::with_capacity(idx.len() * c);
            for &i in idx.iter() {
                out.extend_from_slice(&x.data[i * c..(i + 1) * c]);
            }
            let shape = if x.shape.rank() == 1 {
                Shape::vector(idx.len())
            } else {
                Shape::matrix(idx.len(), c)
            };
            Ok(Tensor::new(shape, out))
        }
        Op::SegmentSum(seg) => {
            arity(tag, inputs, 1)?;
            let x = inputs[0];
            if x.shape.rank() == 0 || x.shape.rows() != seg.total() {
                return Err(shape_err(
                    tag,
                    inputs,
                    format!("segments cover {} rows", seg.total()),
                ));
            }
            let c = x.shape.cols();
            let mut out = vec![0.0; seg.count() * c];
            for s in 0..seg.count() {
                let o = &mut out[s * c..(s + 1) * c];
                for r in seg.range(s) {
                    for (ov, xv) in o.iter_mut().zip(&x.data[r * c..(r + 1) * c]) {
                        *ov += xv;
                    }
                }
            }
            let shape = if x.shape.rank() == 1 {
                Shape::vector(seg.count())
            } else {
                Shape::matrix(seg.count(), c)
            };
            Ok(Tensor::new(shape, out))
        }
        Op::SegmentSoftmax(seg) => {
            arity(tag, inputs, 1)?;
            let x = inputs[0];
            if x.shape.rank() != 1 || x.data.len() != seg.total() {
                return Err(shape_err(
                    tag,
                    inputs,
                    format!("expected a vector of {} scores", seg.total()),
                ));
            }
            if !x.is_finite() {
                return Err(AutodiffError::NonFinite(tag));
            }
            let mut out = vec![0.0; x.data.len()];
            for s in 0..seg.count() {
                let r = seg.range(s);
                if !r.is_empty() {
                    softmax_slice(&x.data[r.clone()], &mut out[r]);
                }
            }
            Ok(Tensor::vector(out))
        }
        Op::RowScale => {
            arity(tag, inputs, 2)?;
            let (x, w) = (inputs[0], inputs[1]);
            if x.shape.rank() != 2 || w.shape.rank() != 1 || w.data.len() != x.shape.rows() {
                return Err(shape_err(tag, inputs, "expected [r, c] and [r]"));
            }
            let c = x.shape.cols();
            let mut out = Vec::with_capacity(x.data.len());
            for (row, wv) in x.data.chunks_exact(c.max(1)).zip(&w.data) {
                out.extend(row.iter().map(|v| v * wv));
            }
            Ok(Tensor::new(x.shape.clone(), out))
        }
        Op::SpMM(m) => {
            arity(tag, inputs, 1)?;
            let x = inputs[0];
            if x.shape.rank() != 2 || x.shape.rows() != m.cols() {
                return Err(shape_err(
                    tag,
                    inputs,
                    format!("sparse operand is [{}, {}]", m.rows(), m.cols()),
                ));
            }
            let c = x.shape.cols();
            let mut out = vec![0.0; m.rows() * c];
            for r in 0..m.rows() {
                let o = &mut out[r * c..(r + 1) * c];
                for (j, w) in m.row(r) {
                    for (ov, xv) in o.iter_mut().zip(x.row(j)) {
                        *ov += w * xv;
                    }
                }
            }
            Ok(Tensor::matrix(m.rows(), c, out))
        }
    }
}

/// Gradients of the output with respect to each input whose `needs` flag is
/// set, given the upstream gradient `g` (same length as `out`).
pub(crate) fn backward(
    op: &Op,
    inputs: &[&Tensor],
    out: &Tensor,
    g: &[f64],
    needs: &[bool],
) -> Vec<Option<Vec<f64>>> {
    let mut grads: Vec<Option<Vec<f64>>> = vec![None; inputs.len()];
    match op {
        Op::MatVec => {
            let (a, x) = (inputs[0], inputs[1]);
            let (r, c) = (a.shape.0[0], a.shape.0[1]);
            if needs[0] {
                let mut da = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        da[i * c + j] = g[i] * x.data[j];
                    }
                }
                grads[0] = Some(da);
            }
            if needs[1] {
                let mut dx = vec![0.0; c];
                for i in 0..r {
                    for j in 0..c {
                        dx[j] += a.data[i * c + j] * g[i];
                    }
                }
                grads[1] = Some(dx);
            }
        }
        Op::MatMul => {
            let (a, b) = (inputs[0], inputs[1]);
            let (r, k, c) = (a.shape.0[0], a.shape.0[1], b.shape.0[1]);
            if needs[0] {
                // dA = G · Bᵀ
                let mut da = vec![0.0; r * k];
                for i in 0..r {
                    let grow = &g[i * c..(i + 1) * c];
                    for p in 0..k {
                        let brow = &b.data[p * c..(p + 1) * c];
                        da[i * k + p] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                    }
                }
                grads[0] = Some(da);
            }
            if needs[1] {
                // dB = Aᵀ · G
                let mut db = vec![0.0; k * c];
                for i in 0..r {
                    let grow = &g[i * c..(i + 1) * c];
                    for p in 0..k {
                        let av = a.data[i * k + p];
                        if av == 0.0 {
                            continue;
                        }
                        for (dv, gv) in db[p * c..(p + 1) * c].iter_mut().zip(grow) {
                            *dv += av * gv;
                        }
                    }
                }
                grads[1] = Some(db);
            }
        }
        Op::Add | Op::Sub | Op::Hadamard => {
            let (a, b) = (inputs[0], inputs[1]);
            let kind = if a.shape == b.shape {
                Broadcast::Same
            } else if b.data.len() == 1 {
                Broadcast::Scalar
            } else {
                Broadcast::Row
            };
            let cols = a.shape.cols();
            match op {
                Op::Add | Op::Sub => {
                    if needs[0] {
                        grads[0] = Some(g.to_vec());
                    }
                    if needs[1] {
                        let sign = if matches!(op, Op::Sub) { -1.0 } else { 1.0 };
                        grads[1] = Some(reduce_to(kind, g, cols, b.data.len(), sign));
                    }
                }
                _ => {
                    if needs[0] {
                        grads[0] = Some(
                            g.iter()
                                .zip(b.data.iter().cycle())
                                .map(|(gv, bv)| gv * bv)
                                .collect(),
                        );
                    }
                    if needs[1] {
                        let prod: Vec<f64> =
                            g.iter().zip(&a.data).map(|(gv, av)| gv * av).collect();
                        grads[1] = Some(reduce_to(kind, &prod, cols, b.data.len(), 1.0));
                    }
                }
            }
        }
        Op::Concat => {
            if out.shape.rank() == 1 {
                let mut off = 0;
                for (k, t) in inputs.iter().enumerate() {
                    let n = t.data.len();
                    if needs[k] {
                        grads[k] = Some(g[off..off + n].to_vec());
                    }
                    off += n;
                }
            } else {
                let rows = out.shape.rows();
                let total = out.shape.cols();
                let mut col_off = 0;
                for (k, t) in inputs.iter().enumerate() {
                    let c = t.shape.cols();
                    if needs[k] {
                        let mut dg = Vec::with_capacity(rows * c);
                        for r in 0..rows {
                            dg.extend_from_slice(&g[r * total + col_off..r * total + col_off + c]);
                        }
                        grads[k] = Some(dg);
                    }
                    col_off += c;
                }
            }
        }
        Op::Sum => {
            if needs[0] {
                grads[0] = Some(vec![g[0]; inputs[0].data.len()]);
            }
        }
        Op::Mean => {
            if needs[0] {
                let n = inputs[0].data.len() as f64;
                grads[0] = Some(vec![g[0] / n; inputs[0].data.len()]);
            }
        }
        Op::Scale(c) => {
            if needs[0] {
                grads[0] = Some(g.iter().map(|v| c * v).collect());
            }
        }
        Op::Softmax => {
            if needs[0] {
                let y = &out.data;
                let gy: f64 = g.iter().zip(y).map(|(a, b)| a * b).sum();
                grads[0] = Some(y.iter().zip(g).map(|(yv, gv)| yv * (gv - gy)).collect());
            }
        }
        Op::Sigmoid => {
            if needs[0] {
                grads[0] = Some(
                    out.data
                        .iter()
                        .zip(g)
                        .map(|(y, gv)| gv * y * (1.0 - y))
                        .collect(),
                );
            }
        }
        Op::LeakyRelu(s) => {
            if needs[0] {
                grads[0] = Some(
                    inputs[0]
                        .data
                        .iter()
                        .zip(g)
                        .map(|(x, gv)| if *x > 0.0 { *gv } else { s * gv })
                        .collect(),
                );
            }
        }
        Op::Ln => {
            if needs[0] {
                grads[0] = Some(inputs[0].data.iter().zip(g).map(|(x, gv)| gv / x).collect());
            }
        }
        Op::Clamp { lo, hi } => {
            if needs[0] {
                grads[0] = Some(
                    inputs[0]
                        .data
                        .iter()
                        .zip(g)
                        .map(|(x, gv)| if *x >= *lo && *x <= *hi { *gv } else { 0.0 })
                        .collect(),
                );
            }
        }
        Op::Sqrt => {
            if needs[0] {
                grads[0] = Some(
                    out.data
                        .iter()
                        .zip(g)
                        .map(|(y, gv)| if *y > 0.0 { 0.5 * gv / y } else { 0.0 })
                        .collect(),
                );
            }
        }
        Op::LogSigmoid => {
            if needs[0] {
                grads[0] = Some(
                    inputs[0]
                        .data
                        .iter()
                        .zip(g)
                        .map(|(x, gv)| gv * sigmoid(-x))
                        .collect(),
                );
            }
        }
        Op::L1Norm => {
            if needs[0] {
                let x = inputs[0];
                let c = if x.shape.rank() == 1 {
                    x.data.len()
                } else {
                    x.shape.cols()
                };
                let mut dx = Vec::with_capacity(x.data.len());
                for (row, &gv) in x.data.chunks_exact(c.max(1)).zip(g) {
                    dx.extend(row.iter().map(|v| {
                        if *v > 0.0 {
                            gv
                        } else if *v < 0.0 {
                            -gv
                        } else {
                            0.0
                        }
                    }));
                }
                grads[0] = Some(dx);
            }
        }
        Op::CircCorr => {
            let (a, b) = (inputs[0], inputs[1]);
            let rows = if a.shape.rank() == 1 {
                1
            } else {
                a.shape.rows()
            };
            let d = a.data.len() / rows.max(1);
            let mut da = needs[0].then(|| vec![0.0; a.data.len()]);
            let mut db = needs[1].then(|| vec![0.0; b.data.len()]);
            for r in 0..rows {
                let off = r * d;
                let (ar, br, gr) = (
                    &a.data[off..off + d],
                    &b.data[off..off + d],
                    &g[off..off + d],
                );
                if let Some(da) = da.as_mut() {
                    circ_corr_row(gr, br, &mut da[off..off + d]);
                }
                if let Some(db) = db.as_mut() {
                    circ_conv_row_acc(ar, gr, &mut db[off..off + d]);
                }
            }
            grads[0] = da;
            grads[1] = db;
        }
        Op::Dot => {
            let (a, b) = (inputs[0], inputs[1]);
            let rows = if a.shape.rank() == 1 {
                1
            } else {
                a.shape.rows()
            };
            let d = a.data.len() / rows.max(1);
            let scaled = |x: &Tensor| -> Vec<f64> {
                let mut out = Vec::with_capacity(x.data.len());
                for (row, &gv) in x.data.chunks_exact(d.max(1)).zip(g) {
                    out.extend(row.iter().map(|v| gv * v));
                }
                out
            };
            if needs[0] {
                grads[0] = Some(scaled(b));
            }
            if needs[1] {
                grads[1] = Some(scaled(a));
            }
        }
        Op::PairDot(ia, ib) => {
            let (a, b) = (inputs[0], inputs[1]);
            let c = a.shape.cols();
            let mut da = needs[0].then(|| vec![0.0; a.data.len()]);
            let mut db = needs[1].then(|| vec![0.0; b.data.len()]);
            for ((&i, &j), &gv) in ia.iter().zip(ib.iter()).zip(g) {
                let (ra, rb) = (i * c..(i + 1) * c, j * c..(j + 1) * c);
                if let Some(da) = da.as_mut() {
                    for (dv, bv) in da[ra.clone()].iter_mut().zip(&b.data[rb.clone()]) {
                        *dv += gv * bv;
                    }
                }
                if let Some(db) = db.as_mut() {
                    for (dv, av) in db[rb].iter_mut().zip(&a.data[ra]) {
                        *dv += gv * av;
                    }
                }
            }
            grads[0] = da;
            grads[1] = db;
        }
        Op::Gather(idx) => {
            if needs[0] {
                let x = inputs[0];
                let c = x.shape.cols();
                let mut dx = vec![0.0; x.data.len()];
                for (k, &i) in idx.iter().enumerate() {
                    for (dv, gv) in dx[i * c..(i + 1) * c]
                        .iter_mut()
                        .zip(&g[k * c..(k + 1) * c])
                    {
                        *dv += gv;
                    }
                }
                grads[0] = Some(dx);
            }
        }
        Op::SegmentSum(seg) => {
            if needs[0] {
                let x = inputs[0];
                let c = x.shape.cols();
                let mut dx = vec![0.0; x.data.len()];
                for s in 0..seg.count() {
                    let gs = &g[s * c..(s + 1) * c];
                    for r in seg.range(s) {
                        dx[r * c..(r + 1) * c].copy_from_slice(gs);
                    }
                }
                grads[0] = Some(dx);
            }
        }
        Op::SegmentSoftmax(seg) => {
            if needs[0] {
                let y = &out.data;
                let mut dx = vec![0.0; y.len()];
                for s in 0..seg.count() {
                    let r = seg.range(s);
                    let gy: f64 = g[r.clone()]
                        .iter()
                        .zip(&y[r.clone()])
                        .map(|(a, b)| a * b)
                        .sum();
                    for i in r {
                        dx[i] = y[i] * (g[i] - gy);
                    }
                }
                grads[0] = Some(dx);
            }
        }
        Op::RowScale => {
            let (x, w) = (inputs[0], inputs[1]);
            let c = x.shape.cols();
            let c = c.max(1);
            if needs[0] {
                let mut dx = Vec::with_capacity(g.len());
                for (row, wv) in g.chunks_exact(c).zip(&w.data) {
                    dx.extend(row.iter().map(|gv| gv * wv));
                }
                grads[0] = Some(dx);
            }
            if needs[1] {
                let dw = g
                    .chunks_exact(c)
                    .zip(x.data.chunks_exact(c))
                    .map(|(gr, xr)| gr.iter().zip(xr).map(|(a, b)| a * b).sum())
                    .collect();
                grads[1] = Some(dw);
            }
        }
        Op::SpMM(m) => {
            if needs[0] {
                let x = inputs[0];
                let c = x.shape.cols();
                let mut dx = vec![0.0; x.data.len()];
                for r in 0..m.rows() {
                    let gr = &g[r * c..(r + 1) * c];
                    for (j, w) in m.row(r) {
                        for (dv, gv) in dx[j * c..(j + 1) * c].iter_mut().zip(gr) {
                            *dv += w * gv;
                        }
                    }
                }
                grads[0] = Some(dx);
            }
        }
    }
    grads
}
