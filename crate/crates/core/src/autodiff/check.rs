use super::{AutodiffError, Graph, NodeId, Tensor};

/// Smallest denominator of the relative error. Below it, rounding in the
/// objective (about `1e-14` absolute for losses in the hundreds, divided by
/// `2h`) dominates the difference quotient, so tiny gradients are compared
/// with an absolute tolerance of `tol * DENOMINATOR_FLOOR` instead.
pub const DENOMINATOR_FLOOR: f64 = 1e-5;

/// Outcome of comparing analytic gradients with central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(parameter index, coordinate)` of the worst coordinate.
    pub worst: Option<(usize, usize)>,
    pub coordinates: usize,
}

/// Compares the gradient of a scalar objective with central differences.
///
/// `f` receives a fresh graph and the leaf ids of `params` (in order) and
/// returns the id of the scalar objective. Each coordinate's error is
/// `|analytic - numeric| / max(DENOMINATOR_FLOOR, |analytic| + |numeric|)`.
pub fn grad_check<F>(f: F, params: &[Tensor], h: f64) -> Result<GradCheckReport, AutodiffError>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId, AutodiffError>,
{
    let eval = |values: &[Tensor]| -> Result<(Graph, Vec<NodeId>, NodeId), AutodiffError> {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = values.iter().map(|t| g.param(t.clone())).collect();
        let root = f(&mut g, &ids)?;
        Ok((g, ids, root))
    };

    let (mut g, ids, root) = eval(params)?;
    let base = g.scalar(root);
    if !base.is_finite() {
        return Err(AutodiffError::NonFiniteObjective(base));
    }
    let grads = g.backward(root)?;
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .map(|id| {
            grads
                .get(id)
                .cloned()
                .unwrap_or_else(|| vec![0.0; g.value(*id).data.len()])
        })
        .collect();
    drop(g);

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        coordinates: 0,
    };
    let mut work: Vec<Tensor> = params.to_vec();
    for p in 0..params.len() {
        for c in 0..params[p].data.len() {
            let orig = work[p].data[c];
            work[p].data[c] = orig + h;
            let (g_plus, _, r_plus) = eval(&work)?;
            let f_plus = g_plus.scalar(r_plus);
            work[p].data[c] = orig - h;
            let (g_minus, _, r_minus) = eval(&work)?;
            let f_minus = g_minus.scalar(r_minus);
            work[p].data[c] = orig;
            if !f_plus.is_finite() || !f_minus.is_finite() {
                return Err(AutodiffError::NonFiniteObjective(if f_plus.is_finite() {
                    f_minus
                } else {
                    f_plus
                }));
            }
            let numeric = (f_plus - f_minus) / (2.0 * h);
            let a = analytic[p][c];
            let err = (a - numeric).abs() / (a.abs() + numeric.abs()).max(DENOMINATOR_FLOOR);
            report.coordinates += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some((p, c));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::PrimitiveTag;

    #[test]
    fn square_at_three() {
        let report = grad_check(
            |g, ids| g.hadamard(ids[0], ids[0]),
            &[Tensor::scalar(3.0)],
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-8, "{report:?}");
    }

    #[test]
    fn sigmoid_matvec_chain() {
        let w = Tensor::matrix(2, 3, vec![0.3, -0.2, 0.9, -1.1, 0.4, 0.25]);
        let x = Tensor::vector(vec![0.5, -1.5, 0.8]);
        let report = grad_check(
            |g, ids| {
                let h = g.matvec(ids[0], ids[1])?;
                let s = g.sigmoid(h)?;
                g.sum(s)
            },
            &[w, x],
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn corrupted_rule_is_detected() {
        let report = grad_check(
            |g, ids| {
                g.inject_backward_fault(PrimitiveTag::Sigmoid, 2.0);
                let s = g.sigmoid(ids[0])?;
                g.sum(s)
            },
            &[Tensor::vector(vec![0.3, -0.7])],
            1e-5,
        )
        .unwrap();
        assert!(
            (report.max_rel_error - 1.0 / 3.0).abs() < 1e-4,
            "{report:?}"
        );
    }

    #[test]
    fn non_finite_objective_is_rejected() {
        let r = grad_check(|g, ids| g.ln(ids[0]), &[Tensor::scalar(-1.0)], 1e-5);
        assert!(matches!(r, Err(AutodiffError::NonFiniteObjective(_))));
    }
}
