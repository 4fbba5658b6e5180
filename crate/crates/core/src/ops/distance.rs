//! Tape-level entity–query distances, matching [`crate::geometry`]'s pure
//! outside/inside formulas.

use crate::autodiff::{NodeId, Tape, Tensor};
use crate::geometry;

use super::{ConeNodes, DnfNodes, OpsError};

type Result<T> = std::result::Result<T, OpsError>;

/// d_o: scalar outside distance. Per dimension the term is zeroed when the
/// (wrapped) entity axis lies on the arc; inside that region the function is
/// locally constant, so masking with a value-level indicator is the exact
/// subgradient.
pub fn outside_distance_node(
    tape: &mut Tape,
    entity_axes: NodeId,
    cone: ConeNodes,
) -> Result<NodeId> {
    let half = tape.mul_scalar(cone.apertures, 0.5)?;
    let lower_bound = tape.sub(cone.axes, half)?;
    let upper_bound = tape.add(cone.axes, half)?;
    let lower = tape.sub(entity_axes, lower_bound)?;
    let upper = tape.sub(entity_axes, upper_bound)?;
    let dl = half_angle_sine(tape, lower)?;
    let du = half_angle_sine(tape, upper)?;
    let m = tape.element_min(dl, du)?;

    let mask: Vec<f64> = {
        let v = tape.value(entity_axes).data();
        let ax = tape.value(cone.axes).data();
        let ap = tape.value(cone.apertures).data();
        (0..v.len())
            .map(|i| {
                let lo = ax[i] - ap[i] / 2.0;
                if geometry::wrap_positive(v[i] - lo) <= ap[i] || ap[i] >= geometry::TWO_PI {
                    0.0
                } else {
                    1.0
                }
            })
            .collect()
    };
    let mask = tape.constant(Tensor::vector(mask));
    let masked = tape.mul(m, mask)?;
    Ok(tape.sum(masked)?)
}

/// d_i: scalar inside distance, min of the half-angle sine to the axis and
/// the aperture cap |sin(θ_ap/4)| per dimension.
pub fn inside_distance_node(
    tape: &mut Tape,
    entity_axes: NodeId,
    cone: ConeNodes,
) -> Result<NodeId> {
    let delta = tape.sub(entity_axes, cone.axes)?;
    let to_axis = half_angle_sine(tape, delta)?;
    let quarter = tape.mul_scalar(cone.apertures, 0.25)?;
    let s = tape.sin(quarter)?;
    let cap = tape.abs(s)?;
    let m = tape.element_min(to_axis, cap)?;
    Ok(tape.sum(m)?)
}

/// d_con = d_o + λ·d_i.
pub fn cone_distance_node(
    tape: &mut Tape,
    entity_axes: NodeId,
    cone: ConeNodes,
    lambda: f64,
) -> Result<NodeId> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(OpsError::Geometry(geometry::GeometryError::InvalidLambda(
            lambda,
        )));
    }
    let outside = outside_distance_node(tape, entity_axes, cone)?;
    let inside = inside_distance_node(tape, entity_axes, cone)?;
    let weighted = tape.mul_scalar(inside, lambda)?;
    Ok(tape.add(outside, weighted)?)
}

/// d_dis: minimum cone distance over the conjuncts. Ties route the gradient
/// to the earliest conjunct.
pub fn dnf_distance_node(
    tape: &mut Tape,
    entity_axes: NodeId,
    dnf: &DnfNodes,
    lambda: f64,
) -> Result<NodeId> {
    let mut best: Option<NodeId> = None;
    for &c in &dnf.conjuncts {
        let d = cone_distance_node(tape, entity_axes, c, lambda)?;
        best = Some(match best {
            None => d,
            Some(b) => tape.element_min(b, d)?,
        });
    }
    best.ok_or(OpsError::EmptyInput)
}

fn half_angle_sine(tape: &mut Tape, delta: NodeId) -> Result<NodeId> {
    let h = tape.mul_scalar(delta, 0.5)?;
    let s = tape.sin(h)?;
    Ok(tape.abs(s)?)
}
