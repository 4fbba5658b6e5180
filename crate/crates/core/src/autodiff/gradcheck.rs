//! Central finite-difference gradient checks.

use super::{AutodiffError, Tape, Tensor};
use crate::autodiff::tape::NodeId;

type Result<T> = std::result::Result<T, AutodiffError>;

/// Per-coordinate outcome of a gradient check.
#[derive(Debug, Clone)]
pub struct CoordCheck {
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
    /// True when the one-sided differences disagree, i.e. the coordinate sits
    /// at (or within a step of) a non-differentiability such as a min tie, a
    /// relu kink, or a branch boundary. Excluded coordinates do not count as
    /// failures.
    pub excluded: bool,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub per_coord: Vec<CoordCheck>,
    /// Maximum relative error over non-excluded coordinates.
    pub max_rel_err: f64,
    pub excluded_count: usize,
}

/// Checks the analytic gradient of a scalar-valued tensor function against
/// central finite differences at `x`.
///
/// `f` must be deterministic: it is re-evaluated at perturbed inputs. The
/// relative error per coordinate is
/// `|analytic − numeric| / max(|analytic|, |numeric|, 1e-8)`.
pub fn grad_check<F>(f: F, x: &Tensor, step: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, NodeId) -> Result<NodeId>,
{
    let eval = |t: &Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let mut input = t.clone();
        input.set_requires_grad(false);
        let leaf = tape.leaf(input);
        let root = f(&mut tape, leaf)?;
        Ok(tape.value(root).item())
    };

    let mut tape = Tape::new();
    let leaf = tape.leaf(x.clone().with_grad());
    let root = f(&mut tape, leaf)?;
    if !tape.value(root).is_scalar() {
        return Err(AutodiffError::NonScalarRoot {
            shape: tape.value(root).shape().to_vec(),
        });
    }
    let grads = tape.backward(root)?;
    let analytic = grads
        .wrt(leaf)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(x.shape()));

    let base = tape.value(root).item();
    let mut per_coord = Vec::with_capacity(x.len());
    let mut max_rel_err: f64 = 0.0;
    let mut excluded_count = 0;
    for i in 0..x.len() {
        let mut plus = x.clone();
        plus.data_mut()[i] += step;
        let mut minus = x.clone();
        minus.data_mut()[i] -= step;
        let f_plus = eval(&plus)?;
        let f_minus = eval(&minus)?;
        let numeric = (f_plus - f_minus) / (2.0 * step);
        let a = analytic.data()[i];

        // One-sided slopes bracket the kink if there is one.
        let fwd = (f_plus - base) / step;
        let bwd = (base - f_minus) / step;
        let scale = fwd.abs().max(bwd.abs()).max(1.0);
        let excluded = (fwd - bwd).abs() > 1e-2 * scale;

        let rel_err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        if excluded {
            excluded_count += 1;
        } else if rel_err > max_rel_err {
            max_rel_err = rel_err;
        }
        per_coord.push(CoordCheck {
            analytic: a,
            numeric,
            rel_err,
            excluded,
        });
    }
    Ok(GradCheckReport {
        per_coord,
        max_rel_err,
        excluded_count,
    })
}
