//! Checks reverse-mode gradients of a small attention-style objective
//! against central differences, then shows how an injected backward fault
//! is caught.
//!
//! Usage: cargo run --release --example gradient_check

use ramgnn::autodiff::{grad_check, AutodiffError, Graph, NodeId, PrimitiveTag, Tensor};

fn objective(g: &mut Graph, p: &[NodeId]) -> Result<NodeId, AutodiffError> {
    // ln σ(softmax(W x) · (x ⋆ b))
    let h = g.matvec(p[0], p[1])?;
    let a = g.softmax(h)?;
    let c = g.circ_corr(p[1], p[2])?;
    let s = g.dot(a, c)?;
    g.log_sigmoid(s)
}

fn main() -> Result<(), AutodiffError> {
    let params = vec![
        Tensor::matrix(3, 3, vec![0.3, -0.2, 0.5, 0.1, 0.4, -0.6, -0.3, 0.2, 0.7]),
        Tensor::vector(vec![0.9, -0.4, 0.25]),
        Tensor::vector(vec![0.5, 1.5, -0.75]),
    ];
    let report = grad_check(objective, &params, 1e-5)?;
    println!(
        "clean:  max relative error {:.2e} over {} coordinates",
        report.max_rel_error, report.coordinates
    );

    let faulty = |g: &mut Graph, p: &[NodeId]| {
        g.inject_backward_fault(PrimitiveTag::Softmax, 1.1);
        objective(g, p)
    };
    let report = grad_check(faulty, &params, 1e-5)?;
    println!(
        "faulty: max relative error {:.2e} at {:?}",
        report.max_rel_error, report.worst
    );
    Ok(())
}
