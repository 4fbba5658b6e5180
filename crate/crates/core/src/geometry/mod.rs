//! Pure sector-cone geometry: parameterization, complement, angular
//! distances, overlap measures, and membership decisions.
//!
//! A sector-cone in the plane is parameterized by an axis angle in [−π, π)
//! and an aperture in [0, 2π]; a batch is a d-ary Cartesian product of such
//! cones. Everything in this module is non-differentiable reference code:
//! the learned operators live in [`crate::ops`] and must agree with these
//! functions wherever both are defined.

mod arcs;

pub use arcs::ArcSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// Substituted for a zero x-coordinate before computing point angles.
pub const ARG_X_CLAMP: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("angle must be finite, got {0}")]
    NonFiniteAngle(f64),
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("cone batch must have dimension >= 1")]
    EmptyBatch,
    #[error("axis {value} at dimension {dim} outside [-pi, pi)")]
    AxisOutOfRange { dim: usize, value: f64 },
    #[error("aperture {value} at dimension {dim} outside [0, 2pi]")]
    ApertureOutOfRange { dim: usize, value: f64 },
    #[error("DNF embedding needs at least one conjunct")]
    EmptyDnf,
    #[error("inside-distance weight lambda must lie in (0, 1), got {0}")]
    InvalidLambda(f64),
    #[error("membership fraction must lie in (0, 1], got {0}")]
    InvalidFraction(f64),
}

type Result<T> = std::result::Result<T, GeometryError>;

/// Wraps an angle into [−π, π). Callers own the finiteness check.
#[inline]
pub(crate) fn wrap(a: f64) -> f64 {
    let r = (a + std::f64::consts::PI).rem_euclid(TWO_PI) - std::f64::consts::PI;
    // rem_euclid can land exactly on 2π for inputs just below a period
    // boundary, which would leave r == π.
    if r >= std::f64::consts::PI {
        -std::f64::consts::PI
    } else {
        r
    }
}

/// Wraps an angle into [0, 2π).
#[inline]
pub(crate) fn wrap_positive(a: f64) -> f64 {
    let r = a.rem_euclid(TWO_PI);
    if r >= TWO_PI {
        0.0
    } else {
        r
    }
}

/// Normalizes an angle into [−π, π), preserving its value modulo 2π.
pub fn normalize_angle(a: f64) -> Result<f64> {
    if !a.is_finite() {
        return Err(GeometryError::NonFiniteAngle(a));
    }
    Ok(wrap(a))
}

/// Is `theta` on the arc that starts at `lower` and spans `aperture` radians
/// counter-clockwise? Boundary angles count as inside.
#[inline]
fn angle_in_arc(theta: f64, lower: f64, aperture: f64) -> bool {
    if aperture >= TWO_PI {
        return true;
    }
    wrap_positive(theta - lower) <= aperture
}

/// A d-ary Cartesian product of sector-cones: paired axis/aperture angles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConeBatch {
    axes: Vec<f64>,
    apertures: Vec<f64>,
}

impl ConeBatch {
    /// Builds a batch, validating the axis/aperture range invariants.
    pub fn new(axes: Vec<f64>, apertures: Vec<f64>) -> Result<Self> {
        if axes.len() != apertures.len() {
            return Err(GeometryError::DimensionMismatch {
                left: axes.len(),
                right: apertures.len(),
            });
        }
        if axes.is_empty() {
            return Err(GeometryError::EmptyBatch);
        }
        for (i, &ax) in axes.iter().enumerate() {
            if !ax.is_finite() || ax < -std::f64::consts::PI || ax >= std::f64::consts::PI {
                return Err(GeometryError::AxisOutOfRange { dim: i, value: ax });
            }
        }
        for (i, &ap) in apertures.iter().enumerate() {
            if !ap.is_finite() || ap < 0.0 || ap > TWO_PI {
                return Err(GeometryError::ApertureOutOfRange { dim: i, value: ap });
            }
        }
        Ok(Self { axes, apertures })
    }

    /// Builds a batch from raw (unconstrained) angles, wrapping axes into
    /// [−π, π) and clamping apertures into [0, 2π].
    pub fn from_raw(axes: &[f64], apertures: &[f64]) -> Result<Self> {
        let wrapped: Vec<f64> = axes.iter().map(|&a| wrap(a)).collect();
        let clamped: Vec<f64> = apertures.iter().map(|&a| a.clamp(0.0, TWO_PI)).collect();
        Self::new(wrapped, clamped)
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn axes(&self) -> &[f64] {
        &self.axes
    }

    pub fn apertures(&self) -> &[f64] {
        &self.apertures
    }

    /// θ_L = θ_ax − θ_ap/2 per dimension (not re-wrapped).
    pub fn lower_bounds(&self) -> Vec<f64> {
        self.axes
            .iter()
            .zip(&self.apertures)
            .map(|(ax, ap)| ax - ap / 2.0)
            .collect()
    }

    /// θ_U = θ_ax + θ_ap/2 per dimension (not re-wrapped).
    pub fn upper_bounds(&self) -> Vec<f64> {
        self.axes
            .iter()
            .zip(&self.apertures)
            .map(|(ax, ap)| ax + ap / 2.0)
            .collect()
    }

    /// Total aperture mass, the learned-cardinality proxy.
    pub fn aperture_l1(&self) -> f64 {
        self.apertures.iter().map(|a| a.abs()).sum()
    }

    /// The arc covered by dimension `i`, as a set of linear pieces.
    pub fn arc(&self, i: usize) -> ArcSet {
        ArcSet::from_arc(self.axes[i], self.apertures[i])
    }
}

/// An entity: a cone batch with every aperture exactly zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityEmbedding {
    axes: Vec<f64>,
}

impl EntityEmbedding {
    pub fn new(axes: Vec<f64>) -> Result<Self> {
        for (i, &ax) in axes.iter().enumerate() {
            if !ax.is_finite() || ax < -std::f64::consts::PI || ax >= std::f64::consts::PI {
                return Err(GeometryError::AxisOutOfRange { dim: i, value: ax });
            }
        }
        if axes.is_empty() {
            return Err(GeometryError::EmptyBatch);
        }
        Ok(Self { axes })
    }

    /// Wraps raw stored angles into range; raw parameters are unconstrained.
    pub fn from_raw(raw: &[f64]) -> Self {
        Self {
            axes: raw.iter().map(|&a| wrap(a)).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn axes(&self) -> &[f64] {
        &self.axes
    }

    pub fn to_cone(&self) -> ConeBatch {
        ConeBatch {
            axes: self.axes.clone(),
            apertures: vec![0.0; self.axes.len()],
        }
    }
}

/// Disjunction of cone batches: one conjunct per union branch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DnfEmbedding {
    conjuncts: Vec<ConeBatch>,
}

impl DnfEmbedding {
    pub fn new(conjuncts: Vec<ConeBatch>) -> Result<Self> {
        let Some(first) = conjuncts.first() else {
            return Err(GeometryError::EmptyDnf);
        };
        let d = first.dim();
        for c in &conjuncts {
            if c.dim() != d {
                return Err(GeometryError::DimensionMismatch {
                    left: d,
                    right: c.dim(),
                });
            }
        }
        Ok(Self { conjuncts })
    }

    pub fn single(cone: ConeBatch) -> Self {
        Self {
            conjuncts: vec![cone],
        }
    }

    pub fn dim(&self) -> usize {
        self.conjuncts[0].dim()
    }

    pub fn conjuncts(&self) -> &[ConeBatch] {
        &self.conjuncts
    }

    pub fn into_conjuncts(self) -> Vec<ConeBatch> {
        self.conjuncts
    }
}

/// Per-dimension 2D points, the intermediate of the semantic average.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanarCoordinates {
    x: Vec<f64>,
    y: Vec<f64>,
}

impl PlanarCoordinates {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if x.len() != y.len() {
            return Err(GeometryError::DimensionMismatch {
                left: x.len(),
                right: y.len(),
            });
        }
        Ok(Self { x, y })
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }
}

/// Complement: opposite semantic center, aperture mirrored to 2π − θ_ap.
pub fn complement(c: &ConeBatch) -> ConeBatch {
    let axes = c
        .axes
        .iter()
        .map(|&ax| {
            if ax >= 0.0 {
                ax - std::f64::consts::PI
            } else {
                ax + std::f64::consts::PI
            }
        })
        .collect();
    let apertures = c.apertures.iter().map(|&ap| TWO_PI - ap).collect();
    ConeBatch { axes, apertures }
}

/// Four-quadrant point angles in [−π, π), with the x = 0 clamp: a zero
/// x-coordinate is replaced by [`ARG_X_CLAMP`] before the division.
pub fn arg(p: &PlanarCoordinates) -> Vec<f64> {
    p.x.iter()
        .zip(&p.y)
        .map(|(&x, &y)| {
            let x = if x == 0.0 { ARG_X_CLAMP } else { x };
            let r = y.atan2(x);
            // atan2 ranges over (−π, π]; only the +π endpoint needs remapping.
            if r >= std::f64::consts::PI {
                -std::f64::consts::PI
            } else {
                r
            }
        })
        .collect()
}

fn check_dims(e: &EntityEmbedding, c: &ConeBatch) -> Result<()> {
    if e.dim() != c.dim() {
        return Err(GeometryError::DimensionMismatch {
            left: e.dim(),
            right: c.dim(),
        });
    }
    Ok(())
}

/// Outside distance d_o: zero on dimensions where the entity axis lies on the
/// arc, otherwise the smaller half-angle sine distance to the two bounds;
/// summed over dimensions.
pub fn outside_distance(e: &EntityEmbedding, c: &ConeBatch) -> Result<f64> {
    check_dims(e, c)?;
    let mut total = 0.0;
    for i in 0..e.dim() {
        let v = e.axes[i];
        let ap = c.apertures[i];
        let lower = c.axes[i] - ap / 2.0;
        let upper = c.axes[i] + ap / 2.0;
        if angle_in_arc(v, lower, ap) {
            continue;
        }
        let dl = ((v - lower) / 2.0).sin().abs();
        let du = ((v - upper) / 2.0).sin().abs();
        total += dl.min(du);
    }
    Ok(total)
}

/// Inside distance d_i: per-dimension distance from the entity axis to the
/// cone axis, capped by the aperture half-width term |sin(θ_ap/4)|.
pub fn inside_distance(e: &EntityEmbedding, c: &ConeBatch) -> Result<f64> {
    check_dims(e, c)?;
    let mut total = 0.0;
    for i in 0..e.dim() {
        let to_axis = ((e.axes[i] - c.axes[i]) / 2.0).sin().abs();
        let cap = (c.apertures[i] / 4.0).sin().abs();
        total += to_axis.min(cap);
    }
    Ok(total)
}

/// d_con = d_o + λ·d_i with λ ∈ (0, 1).
pub fn cone_distance(e: &EntityEmbedding, c: &ConeBatch, lambda: f64) -> Result<f64> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(GeometryError::InvalidLambda(lambda));
    }
    Ok(outside_distance(e, c)? + lambda * inside_distance(e, c)?)
}

/// d_dis: minimum cone distance over the conjuncts.
pub fn dnf_distance(e: &EntityEmbedding, dnf: &DnfEmbedding, lambda: f64) -> Result<f64> {
    let mut best = f64::INFINITY;
    for c in &dnf.conjuncts {
        let d = cone_distance(e, c, lambda)?;
        if d < best {
            best = d;
        }
    }
    Ok(best)
}

/// Per-dimension angular length of the intersection of the two arcs,
/// wraparound-aware (two large arcs can meet in two disjoint pieces).
pub fn arc_overlap(a: &ConeBatch, b: &ConeBatch) -> Result<Vec<f64>> {
    if a.dim() != b.dim() {
        return Err(GeometryError::DimensionMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    Ok((0..a.dim())
        .map(|i| a.arc(i).intersect(&b.arc(i)).measure())
        .collect())
}

/// Mean over dimensions of |A∩B| / |A|. A zero-aperture dimension of `a`
/// contributes 1 when its axis lies on `b`'s arc, else 0.
pub fn containment_ratio(a: &ConeBatch, b: &ConeBatch) -> Result<f64> {
    let overlaps = arc_overlap(a, b)?;
    let mut sum = 0.0;
    for i in 0..a.dim() {
        if a.apertures[i] == 0.0 {
            let lower = b.axes[i] - b.apertures[i] / 2.0;
            if angle_in_arc(a.axes[i], lower, b.apertures[i]) {
                sum += 1.0;
            }
        } else {
            sum += overlaps[i] / a.apertures[i];
        }
    }
    Ok(sum / a.dim() as f64)
}

/// Mean over dimensions of |A∩B| / |A∪B|. When both apertures are zero the
/// dimension contributes 1 if the axes coincide, else 0.
pub fn jaccard_ratio(a: &ConeBatch, b: &ConeBatch) -> Result<f64> {
    let overlaps = arc_overlap(a, b)?;
    let mut sum = 0.0;
    for i in 0..a.dim() {
        let denom = a.apertures[i] + b.apertures[i] - overlaps[i];
        if denom == 0.0 {
            if a.apertures[i] == 0.0 && b.apertures[i] == 0.0 && a.axes[i] == b.axes[i] {
                sum += 1.0;
            }
        } else {
            sum += overlaps[i] / denom;
        }
    }
    Ok(sum / a.dim() as f64)
}

/// Threshold membership: against the conjunct with the most containing
/// dimensions, the entity is a member when at least ⌈fraction·d⌉ of its axes
/// lie on the corresponding arcs.
pub fn membership_decide(
    e: &EntityEmbedding,
    dnf: &DnfEmbedding,
    fraction: f64,
) -> Result<(bool, usize)> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(GeometryError::InvalidFraction(fraction));
    }
    if e.dim() != dnf.dim() {
        return Err(GeometryError::DimensionMismatch {
            left: e.dim(),
            right: dnf.dim(),
        });
    }
    let mut best = 0usize;
    for c in &dnf.conjuncts {
        let mut count = 0usize;
        for i in 0..e.dim() {
            let lower = c.axes[i] - c.apertures[i] / 2.0;
            if angle_in_arc(e.axes[i], lower, c.apertures[i]) {
                count += 1;
            }
        }
        best = best.max(count);
    }
    let needed = (fraction * e.dim() as f64).ceil() as usize;
    Ok((best >= needed, best))
}
