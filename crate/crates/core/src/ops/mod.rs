//! Differentiable logical operators over cone embeddings.
//!
//! Each operator builds tape nodes; inference-mode values agree with the
//! pure [`crate::geometry`] reference wherever one exists (negation, union,
//! distances). Axes and apertures always travel as separate `[d]` vectors.

mod distance;
mod params;

pub use distance::{cone_distance_node, dnf_distance_node, inside_distance_node, outside_distance_node};
pub use params::{Linear, MlpNodes, ModelParams, ParamNodes};

use rand::Rng;
use thiserror::Error;

use crate::autodiff::{Axis, AutodiffError, NodeId, Tape, Tensor};
use crate::geometry::{ConeBatch, DnfEmbedding, GeometryError, TWO_PI};

#[derive(Debug, Error)]
pub enum OpsError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("unknown relation id {0}")]
    UnknownRelation(usize),
    #[error("unknown entity id {0}")]
    UnknownEntity(usize),
    #[error("operator needs at least one input cone")]
    EmptyInput,
    #[error("scale parameters must be positive: lambda1={0}, lambda2={1}")]
    InvalidScale(f64, f64),
}

type Result<T> = std::result::Result<T, OpsError>;

/// Fixed scales of the range-squashing map `g`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ScaleConfig {
    pub lambda_axis: f64,
    pub lambda_aperture: f64,
}

impl Default for ScaleConfig {
    fn default() -> Self {
        ScaleConfig {
            lambda_axis: 1.0,
            lambda_aperture: 2.0,
        }
    }
}

impl ScaleConfig {
    pub fn new(lambda_axis: f64, lambda_aperture: f64) -> Result<Self> {
        if lambda_axis <= 0.0 || lambda_aperture <= 0.0 {
            return Err(OpsError::InvalidScale(lambda_axis, lambda_aperture));
        }
        Ok(ScaleConfig {
            lambda_axis,
            lambda_aperture,
        })
    }
}

/// A cone batch on the tape: axis and aperture vectors of length d.
#[derive(Debug, Clone, Copy)]
pub struct ConeNodes {
    pub axes: NodeId,
    pub apertures: NodeId,
}

/// A DNF embedding on the tape: one cone per conjunct.
#[derive(Debug, Clone)]
pub struct DnfNodes {
    pub conjuncts: Vec<ConeNodes>,
}

/// Column-normalized attention over n input cones, `[n, d]`, every entry
/// positive and every column summing to one.
#[derive(Debug, Clone)]
pub struct AttentionWeights {
    weights: Vec<f64>,
    n: usize,
    d: usize,
}

impl AttentionWeights {
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let (n, d) = (t.rows(), t.cols());
        for j in 0..d {
            let col: f64 = (0..n).map(|i| t.data()[i * d + j]).sum();
            if (col - 1.0).abs() > 1e-10 || (0..n).any(|i| t.data()[i * d + j] <= 0.0) {
                return Err(OpsError::Autodiff(AutodiffError::NonFinite {
                    op: "attention_weights",
                }));
            }
        }
        Ok(AttentionWeights {
            weights: t.data().to_vec(),
            n,
            d,
        })
    }

    pub fn get(&self, input: usize, dim: usize) -> f64 {
        self.weights[input * self.d + dim]
    }

    pub fn inputs(&self) -> usize {
        self.n
    }
}

/// Sigmoid gate in (0, 1)^d that shrinks the element-wise aperture minimum.
#[derive(Debug, Clone)]
pub struct GateVector(pub Vec<f64>);

impl GateVector {
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        if t.data().iter().any(|&g| !(0.0 < g && g < 1.0)) {
            return Err(OpsError::Autodiff(AutodiffError::NonFinite {
                op: "deepsets_gate",
            }));
        }
        Ok(GateVector(t.data().to_vec()))
    }
}

/// Registers a plain value cone (no gradients) on the tape.
pub fn cone_constant(tape: &mut Tape, cone: &ConeBatch) -> ConeNodes {
    ConeNodes {
        axes: tape.constant(Tensor::vector(cone.axes().to_vec())),
        apertures: tape.constant(Tensor::vector(cone.apertures().to_vec())),
    }
}

/// Reads a cone batch back out of the tape, wrapping axes into range.
pub fn cone_values(tape: &Tape, cone: ConeNodes) -> Result<ConeBatch> {
    Ok(ConeBatch::from_raw(
        tape.value(cone.axes).data(),
        tape.value(cone.apertures).data(),
    )?)
}

/// The anchor cone of one entity: gathered axis row, zero apertures.
pub fn entity_cone(tape: &mut Tape, params: &ParamNodes, entity: usize) -> Result<ConeNodes> {
    let table = tape.value(params.entity_axes);
    if entity >= table.rows() {
        return Err(OpsError::UnknownEntity(entity));
    }
    let axes = tape.gather_row(params.entity_axes, entity)?;
    let apertures = tape.constant(Tensor::vector(vec![0.0; params.dim]));
    Ok(ConeNodes { axes, apertures })
}

/// Range-squashing map: the first d inputs become axes π·tanh(λ1·x), the
/// last d become apertures π·tanh(λ2·x) + π.
pub fn scale_g(tape: &mut Tape, x: NodeId, scale: ScaleConfig) -> Result<ConeNodes> {
    let len = tape.value(x).len();
    let d = len / 2;
    let xa = tape.slice(x, 0, d)?;
    let xp = tape.slice(x, d, d)?;
    let ta = tape.mul_scalar(xa, scale.lambda_axis)?;
    let ta = tape.tanh(ta)?;
    let axes = tape.mul_scalar(ta, std::f64::consts::PI)?;
    let tp = tape.mul_scalar(xp, scale.lambda_aperture)?;
    let tp = tape.tanh(tp)?;
    let tp = tape.mul_scalar(tp, std::f64::consts::PI)?;
    let apertures = tape.add_scalar(tp, std::f64::consts::PI)?;
    Ok(ConeNodes { axes, apertures })
}

/// Projection operator: relational translation followed by the shared MLP
/// and the range map `g`.
pub fn project(
    tape: &mut Tape,
    cone: ConeNodes,
    relation: usize,
    params: &ParamNodes,
    scale: ScaleConfig,
) -> Result<ConeNodes> {
    let table = tape.value(params.relation_embeddings);
    if relation >= table.rows() {
        return Err(OpsError::UnknownRelation(relation));
    }
    let d = params.dim;
    let r = tape.gather_row(params.relation_embeddings, relation)?;
    let r_ax = tape.slice(r, 0, d)?;
    let r_ap = tape.slice(r, d, d)?;
    let ax = tape.add(cone.axes, r_ax)?;
    let ap = tape.add(cone.apertures, r_ap)?;
    let x = tape.concat(ax, ap)?;
    let h = params.projection.forward(tape, x)?;
    scale_g(tape, h, scale)
}

/// `[θ_ax − θ_ap/2 ; θ_ax + θ_ap/2]`, the bounds form fed to the attention
/// and gate networks.
fn bounds_features(tape: &mut Tape, cone: ConeNodes) -> Result<NodeId> {
    let half = tape.mul_scalar(cone.apertures, 0.5)?;
    let lower = tape.sub(cone.axes, half)?;
    let upper = tape.add(cone.axes, half)?;
    Ok(tape.concat(lower, upper)?)
}

/// Per-dimension softmax attention over the input cones; entry (i, j) is the
/// weight of input i in dimension j and each column sums to one.
pub fn attention_weights(
    tape: &mut Tape,
    cones: &[ConeNodes],
    params: &ParamNodes,
) -> Result<NodeId> {
    if cones.is_empty() {
        return Err(OpsError::EmptyInput);
    }
    let mut logits = Vec::with_capacity(cones.len());
    for &c in cones {
        let x = bounds_features(tape, c)?;
        logits.push(params.attention.forward(tape, x)?);
    }
    let stacked = tape.stack_rows(&logits)?;
    Ok(tape.softmax(stacked, Axis::Rows)?)
}

/// Attention-weighted average of axes on the unit circle, recovered via the
/// four-quadrant angle map. Wraparound-safe where an arithmetic mean of the
/// raw angles is not.
pub fn semantic_average(
    tape: &mut Tape,
    cones: &[ConeNodes],
    params: &ParamNodes,
) -> Result<NodeId> {
    let weights = attention_weights(tape, cones, params)?;
    let mut cos_rows = Vec::with_capacity(cones.len());
    let mut sin_rows = Vec::with_capacity(cones.len());
    for &c in cones {
        cos_rows.push(tape.cos(c.axes)?);
        sin_rows.push(tape.sin(c.axes)?);
    }
    let cos_stack = tape.stack_rows(&cos_rows)?;
    let sin_stack = tape.stack_rows(&sin_rows)?;
    let wc = tape.mul(weights, cos_stack)?;
    let ws = tape.mul(weights, sin_stack)?;
    let x = tape.sum_axis0(wc)?;
    let y = tape.sum_axis0(ws)?;
    let angles = tape.atan2(y, x)?;
    Ok(tape.wrap_angle(angles)?)
}

/// DeepSets gate: per-input inner MLP, mean pool, outer MLP, sigmoid.
/// Permutation-invariant in the inputs.
pub fn deepsets_gate(tape: &mut Tape, cones: &[ConeNodes], params: &ParamNodes) -> Result<NodeId> {
    if cones.is_empty() {
        return Err(OpsError::EmptyInput);
    }
    let mut inner = Vec::with_capacity(cones.len());
    for &c in cones {
        let x = bounds_features(tape, c)?;
        inner.push(params.gate_inner.forward(tape, x)?);
    }
    let stacked = tape.stack_rows(&inner)?;
    let pooled = tape.mean_axis0(stacked)?;
    let out = params.gate_outer.forward(tape, pooled)?;
    Ok(tape.sigmoid(out)?)
}

/// Aperture of the intersection: element-wise minimum over the inputs,
/// shrunk by the DeepSets gate. Dropout (training only) applies to the min
/// vector before the gate multiply.
#[allow(clippy::too_many_arguments)]
pub fn card_min<R: Rng>(
    tape: &mut Tape,
    cones: &[ConeNodes],
    params: &ParamNodes,
    dropout_rate: f64,
    training: bool,
    rng: &mut R,
) -> Result<NodeId> {
    if cones.is_empty() {
        return Err(OpsError::EmptyInput);
    }
    let aps: Vec<NodeId> = cones.iter().map(|c| c.apertures).collect();
    let stacked = tape.stack_rows(&aps)?;
    let mins = tape.min_axis0(stacked)?;
    let mins = tape.dropout(mins, dropout_rate, training, rng)?;
    let gate = deepsets_gate(tape, cones, params)?;
    Ok(tape.mul(mins, gate)?)
}

/// Intersection operator: semantic-average axes, card-min apertures.
pub fn intersect<R: Rng>(
    tape: &mut Tape,
    cones: &[ConeNodes],
    params: &ParamNodes,
    dropout_rate: f64,
    training: bool,
    rng: &mut R,
) -> Result<ConeNodes> {
    let axes = semantic_average(tape, cones, params)?;
    let apertures = card_min(tape, cones, params, dropout_rate, training, rng)?;
    Ok(ConeNodes { axes, apertures })
}

/// Complement operator: opposite semantic center, aperture 2π − θ_ap.
/// Identical values to the pure complement; axis gradient 1, aperture
/// gradient −1.
pub fn negate(tape: &mut Tape, cone: ConeNodes) -> Result<ConeNodes> {
    let axes = tape.opposite_angle(cone.axes)?;
    let neg_ap = tape.neg(cone.apertures)?;
    let apertures = tape.add_scalar(neg_ap, TWO_PI)?;
    Ok(ConeNodes { axes, apertures })
}

/// Union in DNF form: the branches' conjunct lists concatenated in order.
pub fn union_dnf(branches: &[DnfNodes]) -> Result<DnfNodes> {
    if branches.is_empty() {
        return Err(OpsError::EmptyInput);
    }
    Ok(DnfNodes {
        conjuncts: branches
            .iter()
            .flat_map(|b| b.conjuncts.iter().copied())
            .collect(),
    })
}

/// De Morgan union: ¬(∩ ¬Sᵢ). Always yields a single sector-cone product,
/// unlike the DNF union.
pub fn union_demorgan<R: Rng>(
    tape: &mut Tape,
    cones: &[ConeNodes],
    params: &ParamNodes,
    dropout_rate: f64,
    training: bool,
    rng: &mut R,
) -> Result<ConeNodes> {
    if cones.is_empty() {
        return Err(OpsError::EmptyInput);
    }
    let mut negated = Vec::with_capacity(cones.len());
    for &c in cones {
        negated.push(negate(tape, c)?);
    }
    let inter = intersect(tape, &negated, params, dropout_rate, training, rng)?;
    negate(tape, inter)
}

/// Runs the projection on plain values (inference, no gradients).
pub fn project_values(
    params: &ModelParams,
    cone: &ConeBatch,
    relation: usize,
    scale: ScaleConfig,
) -> Result<ConeBatch> {
    let mut tape = Tape::new();
    let nodes = params.register(&mut tape, false);
    let c = cone_constant(&mut tape, cone);
    let out = project(&mut tape, c, relation, &nodes, scale)?;
    cone_values(&tape, out)
}

/// Runs the intersection on plain values (inference, no gradients).
pub fn intersect_values(params: &ModelParams, cones: &[ConeBatch]) -> Result<ConeBatch> {
    let mut tape = Tape::new();
    let nodes = params.register(&mut tape, false);
    let handles: Vec<ConeNodes> = cones.iter().map(|c| cone_constant(&mut tape, c)).collect();
    let mut rng = rand::rngs::mock::StepRng::new(0, 0);
    let out = intersect(&mut tape, &handles, &nodes, 0.0, false, &mut rng)?;
    cone_values(&tape, out)
}

/// Runs the De Morgan union on plain values (inference, no gradients).
pub fn union_demorgan_values(params: &ModelParams, cones: &[ConeBatch]) -> Result<ConeBatch> {
    let mut tape = Tape::new();
    let nodes = params.register(&mut tape, false);
    let handles: Vec<ConeNodes> = cones.iter().map(|c| cone_constant(&mut tape, c)).collect();
    let mut rng = rand::rngs::mock::StepRng::new(0, 0);
    let out = union_demorgan(&mut tape, &handles, &nodes, 0.0, false, &mut rng)?;
    cone_values(&tape, out)
}

/// Extracts a value-level DNF embedding from tape handles.
pub fn dnf_values(tape: &Tape, dnf: &DnfNodes) -> Result<DnfEmbedding> {
    let cones = dnf
        .conjuncts
        .iter()
        .map(|&c| cone_values(tape, c))
        .collect::<Result<Vec<_>>>()?;
    Ok(DnfEmbedding::new(cones)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;
    use crate::geometry;
    use rand::rngs::mock::StepRng;
    use rand::{Rng as _, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn tiny_params(seed: u64) -> ModelParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ModelParams::init(6, 3, 4, 8, &mut rng)
    }

    fn random_cone(rng: &mut ChaCha8Rng, d: usize) -> ConeBatch {
        let axes: Vec<f64> = (0..d).map(|_| rng.gen_range(-PI..PI)).collect();
        let aps: Vec<f64> = (0..d).map(|_| rng.gen_range(0.0..TWO_PI)).collect();
        ConeBatch::new(axes, aps).unwrap()
    }

    #[test]
    fn scale_g_examples() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![0.0, 0.0, 0.0, 0.0]));
        let out = scale_g(&mut tape, x, ScaleConfig::default()).unwrap();
        assert_eq!(tape.value(out.axes).data(), &[0.0, 0.0]);
        assert_eq!(tape.value(out.apertures).data(), &[PI, PI]);

        // Saturation pushes toward the open bounds.
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![50.0, 50.0]));
        let out = scale_g(&mut tape, x, ScaleConfig::default()).unwrap();
        let ax = tape.value(out.axes).data()[0];
        let ap = tape.value(out.apertures).data()[0];
        assert!(ax < PI && ax > PI - 1e-9);
        assert!(ap < TWO_PI && ap > TWO_PI - 1e-9);

        // Scalar oracle: π·tanh(0.5).
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![0.5, 0.0]));
        let out = scale_g(&mut tape, x, ScaleConfig::default()).unwrap();
        let expected = PI * 0.5f64.tanh();
        assert!((tape.value(out.axes).data()[0] - expected).abs() < 1e-12);
        assert!((expected - 1.45178).abs() < 1e-4);
    }

    #[test]
    fn project_output_ranges_hold() {
        let params = tiny_params(3);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..1000 {
            let cone = random_cone(&mut rng, 4);
            let rel = rng.gen_range(0..3);
            let out = project_values(&params, &cone, rel, ScaleConfig::default()).unwrap();
            for i in 0..4 {
                assert!(out.axes()[i] > -PI && out.axes()[i] < PI);
                assert!(out.apertures()[i] > 0.0 && out.apertures()[i] < TWO_PI);
            }
        }
    }

    #[test]
    fn project_with_zero_params_is_forced_by_g() {
        let params = ModelParams::zeros(4, 2, 4, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cone = random_cone(&mut rng, 4);
        let out = project_values(&params, &cone, 0, ScaleConfig::default()).unwrap();
        assert_eq!(out.axes(), &[0.0; 4]);
        assert_eq!(out.apertures(), &[PI; 4]);
    }

    #[test]
    fn project_unknown_relation_errors() {
        let params = tiny_params(3);
        let cone = ConeBatch::new(vec![0.0; 4], vec![1.0; 4]).unwrap();
        let err = project_values(&params, &cone, 99, ScaleConfig::default()).unwrap_err();
        assert!(matches!(err, OpsError::UnknownRelation(99)));
    }

    #[test]
    fn project_gradient_wrt_relation_embedding() {
        let params = tiny_params(5);
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let cone = random_cone(&mut rng, 4);
        let rel_row = Tensor::vector(
            params.relation_embeddings.data()[0..8].to_vec(),
        );
        let report = grad_check(
            |tape, rel_leaf| {
                let nodes = params.register(tape, false);
                let c = cone_constant(tape, &cone);
                let d = 4;
                let r_ax = tape.slice(rel_leaf, 0, d)?;
                let r_ap = tape.slice(rel_leaf, d, d)?;
                let ax = tape.add(c.axes, r_ax)?;
                let ap = tape.add(c.apertures, r_ap)?;
                let x = tape.concat(ax, ap)?;
                let h = nodes.projection.forward(tape, x)?;
                let out = scale_g(tape, h, ScaleConfig::default())?;
                let s1 = tape.sum(out.axes)?;
                let s2 = tape.sum(out.apertures)?;
                tape.add(s1, s2)
            },
            &rel_row,
            1e-6,
        )
        .unwrap();
        assert!(
            report.max_rel_err < 1e-4,
            "rel err {}",
            report.max_rel_err
        );
    }

    #[test]
    fn attention_uniform_for_identical_inputs() {
        let params = tiny_params(7);
        let mut tape = Tape::new();
        let nodes = params.register(&mut tape, false);
        let cone = ConeBatch::new(vec![0.3; 4], vec![1.0; 4]).unwrap();
        let handles: Vec<ConeNodes> = (0..3).map(|_| cone_constant(&mut tape, &cone)).collect();
        let w = attention_weights(&mut tape, &handles, &nodes).unwrap();
        let weights = AttentionWeights::from_tensor(tape.value(w)).unwrap();
        for i in 0..3 {
            for j in 0..4 {
                assert!((weights.get(i, j) - 1.0 / 3.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn attention_single_input_is_all_ones() {
        let params = tiny_params(7);
        let mut tape = Tape::new();
        let nodes = params.register(&mut tape, false);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cone = random_cone(&mut rng, 4);
        let handles = vec![cone_constant(&mut tape, &cone)];
        let w = attention_weights(&mut tape, &handles, &nodes).unwrap();
        for &v in tape.value(w).data() {
            assert_eq!(v, 1.0);
        }
        assert!(attention_weights(&mut tape, &[], &nodes).is_err());
    }

    #[test]
    fn attention_columns_sum_to_one() {
        let params = tiny_params(13);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let mut tape = Tape::new();
            let nodes = params.register(&mut tape, false);
            let n = rng.gen_range(1..5);
            let handles: Vec<ConeNodes> = (0..n)
                .map(|_| {
                    let c = random_cone(&mut rng, 4);
                    cone_constant(&mut tape, &c)
                })
                .collect();
            let w = attention_weights(&mut tape, &handles, &nodes).unwrap();
            // from_tensor enforces positivity and 1e-10 column sums.
            AttentionWeights::from_tensor(tape.value(w)).unwrap();
        }
    }

    #[test]
    fn semantic_average_preserves_shared_axis() {
        let params = tiny_params(17);
        let mut tape = Tape::new();
        let nodes = params.register(&mut tape, false);
        let a = ConeBatch::new(vec![1.2; 4], vec![0.5; 4]).unwrap();
        let b = ConeBatch::new(vec![1.2; 4], vec![2.5; 4]).unwrap();
        let handles = vec![
            cone_constant(&mut tape, &a),
            cone_constant(&mut tape, &b),
        ];
        let axes = semantic_average(&mut tape, &handles, &nodes).unwrap();
        for &v in tape.value(axes).data() {
            assert!((v - 1.2).abs() < 1e-12);
        }
    }

    #[test]
    fn semantic_average_wraps_rather_than_averaging_raw_angles() {
        // Zero attention parameters force exactly equal weights.
        let params = ModelParams::zeros(4, 2, 1, 8);
        let mut tape = Tape::new();
        let nodes = params.register(&mut tape, false);
        let a = ConeBatch::new(vec![PI - 0.1], vec![0.0]).unwrap();
        let b = ConeBatch::new(vec![-PI + 0.2], vec![0.0]).unwrap();
        let handles = vec![
            cone_constant(&mut tape, &a),
            cone_constant(&mut tape, &b),
        ];
        let axes = semantic_average(&mut tape, &handles, &nodes).unwrap();
        let got = tape.value(axes).data()[0];

        // Four-quadrant arctangent oracle.
        let x = ((PI - 0.1).cos() + (-PI + 0.2).cos()) / 2.0;
        let y = ((PI - 0.1).sin() + (-PI + 0.2).sin()) / 2.0;
        let oracle = y.atan2(x);
        assert!((got - oracle).abs() < 1e-12);
        // Near π wrapped, not near the raw-angle mean 0.05.
        assert!((got - (-PI + 0.05)).abs() < 1e-3);
        let raw_mean = ((PI - 0.1) + (-PI + 0.2)) / 2.0;
        assert!((raw_mean - 0.05).abs() < 1e-12);
        assert!((got - raw_mean).abs() > 3.0);
    }

    #[test]
    fn semantic_average_is_permutation_invariant() {
        let params = tiny_params(23);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let cones: Vec<ConeBatch> = (0..3).map(|_| random_cone(&mut rng, 4)).collect();
        let run = |order: &[usize]| {
            let mut tape = Tape::new();
            let nodes = params.register(&mut tape, false);
            let handles: Vec<ConeNodes> = order
                .iter()
                .map(|&i| cone_constant(&mut tape, &cones[i]))
                .collect();
            let axes = semantic_average(&mut tape, &handles, &nodes).unwrap();
            tape.value(axes).data().to_vec()
        };
        let base = run(&[0, 1, 2]);
        for order in [[1, 0, 2], [2, 1, 0], [1, 2, 0]] {
            let permuted = run(&order);
            for (x, y) in base.iter().zip(&permuted) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn deepsets_gate_properties() {
        // Zero parameters: sigmoid(0) = 0.5 in every dimension.
        let zero = ModelParams::zeros(4, 2, 4, 8);
        let mut tape = Tape::new();
        let nodes = zero.register(&mut tape, false);
        let c = ConeBatch::new(vec![0.5; 4], vec![1.0; 4]).unwrap();
        let handles = vec![cone_constant(&mut tape, &c)];
        let g = deepsets_gate(&mut tape, &handles, &nodes).unwrap();
        assert_eq!(tape.value(g).data(), &[0.5; 4]);

        // Random parameters: strictly inside (0, 1), permutation-invariant.
        let params = tiny_params(31);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let cones: Vec<ConeBatch> = (0..3).map(|_| random_cone(&mut rng, 4)).collect();
        let run = |order: &[usize]| {
            let mut tape = Tape::new();
            let nodes = params.register(&mut tape, false);
            let handles: Vec<ConeNodes> = order
                .iter()
                .map(|&i| cone_constant(&mut tape, &cones[i]))
                .collect();
            let g = deepsets_gate(&mut tape, &handles, &nodes).unwrap();
            GateVector::from_tensor(tape.value(g)).unwrap().0
        };
        let base = run(&[0, 1, 2]);
        let permuted = run(&[2, 0, 1]);
        for (x, y) in base.iter().zip(&permuted) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn card_min_bounds() {
        let params = tiny_params(37);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..200 {
            let mut tape = Tape::new();
            let nodes = params.register(&mut tape, false);
            let n = rng.gen_range(1..4);
            let cones: Vec<ConeBatch> = (0..n).map(|_| random_cone(&mut rng, 4)).collect();
            let handles: Vec<ConeNodes> =
                cones.iter().map(|c| cone_constant(&mut tape, c)).collect();
            let mut step = StepRng::new(0, 0);
            let ap = card_min(&mut tape, &handles, &nodes, 0.05, false, &mut step).unwrap();
            for j in 0..4 {
                let min_in = cones
                    .iter()
                    .map(|c| c.apertures()[j])
                    .fold(f64::INFINITY, f64::min);
                let got = tape.value(ap).data()[j];
                assert!(got <= min_in, "gate must shrink the min");
                assert!(got >= 0.0);
            }
        }
    }

    #[test]
    fn card_min_zero_aperture_absorbs() {
        let params = tiny_params(41);
        let mut tape = Tape::new();
        let nodes = params.register(&mut tape, false);
        let a = ConeBatch::new(vec![0.1; 4], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let b = ConeBatch::new(vec![0.2; 4], vec![1.0, 0.0, 2.0, 3.0]).unwrap();
        let handles = vec![
            cone_constant(&mut tape, &a),
            cone_constant(&mut tape, &b),
        ];
        let mut step = StepRng::new(0, 0);
        let ap = card_min(&mut tape, &handles, &nodes, 0.0, false, &mut step).unwrap();
        assert_eq!(tape.value(ap).data()[0], 0.0);
        assert_eq!(tape.value(ap).data()[1], 0.0);
    }

    #[test]
    fn intersect_of_copies_keeps_axes_and_shrinks_apertures() {
        let params = tiny_params(43);
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let c = random_cone(&mut rng, 4);
        let out = intersect_values(&params, &[c.clone(), c.clone(), c.clone()]).unwrap();
        for j in 0..4 {
            assert!((out.axes()[j] - c.axes()[j]).abs() < 1e-12);
            assert!(out.apertures()[j] <= c.apertures()[j]);
        }
    }

    #[test]
    fn negate_matches_pure_complement_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        for _ in 0..10_000 {
            let c = random_cone(&mut rng, 2);
            let mut tape = Tape::new();
            let h = cone_constant(&mut tape, &c);
            let n = negate(&mut tape, h).unwrap();
            let got = cone_values(&tape, n).unwrap();
            let expected = geometry::complement(&c);
            assert_eq!(got.axes(), expected.axes());
            assert_eq!(got.apertures(), expected.apertures());
        }
    }

    #[test]
    fn negate_gradients_are_plus_minus_one() {
        let mut tape = Tape::new();
        let axes = tape.leaf(Tensor::vector(vec![0.4, -0.7]).with_grad());
        let aps = tape.leaf(Tensor::vector(vec![1.0, 2.0]).with_grad());
        let out = negate(&mut tape, ConeNodes { axes, apertures: aps }).unwrap();
        let s_ap = tape.sum(out.apertures).unwrap();
        let grads = tape.backward(s_ap).unwrap();
        assert_eq!(grads.wrt(aps).unwrap().data(), &[-1.0, -1.0]);
        let s_ax = tape.sum(out.axes).unwrap();
        let grads = tape.backward(s_ax).unwrap();
        assert_eq!(grads.wrt(axes).unwrap().data(), &[1.0, 1.0]);

        // negate ∘ negate has identity gradient.
        let twice = negate(&mut tape, out).unwrap();
        let s = tape.sum(twice.apertures).unwrap();
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.wrt(aps).unwrap().data(), &[1.0, 1.0]);
    }

    #[test]
    fn union_dnf_concatenates() {
        let mut tape = Tape::new();
        let mk = |tape: &mut Tape, ax: f64| {
            let c = ConeBatch::new(vec![ax], vec![1.0]).unwrap();
            DnfNodes {
                conjuncts: vec![cone_constant(tape, &c)],
            }
        };
        let a = mk(&mut tape, 0.1);
        let b = mk(&mut tape, 0.2);
        let u = union_dnf(&[a.clone(), b]).unwrap();
        assert_eq!(u.conjuncts.len(), 2);
        let single = union_dnf(&[a.clone()]).unwrap();
        assert_eq!(single.conjuncts.len(), a.conjuncts.len());
        assert!(union_dnf(&[]).is_err());
    }

    #[test]
    fn union_demorgan_stays_in_range() {
        let params = tiny_params(47);
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        for _ in 0..100 {
            let a = random_cone(&mut rng, 4);
            let b = random_cone(&mut rng, 4);
            let out = union_demorgan_values(&params, &[a, b]).unwrap();
            for j in 0..4 {
                assert!(out.axes()[j] >= -PI && out.axes()[j] < PI);
                assert!(out.apertures()[j] >= 0.0 && out.apertures()[j] <= TWO_PI);
            }
        }
    }
}
