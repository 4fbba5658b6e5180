//! Learned model state: the entity axis table, relation translations, and
//! the three shared perceptrons (projection, attention, gate).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{NodeId, Tape, Tensor};

use super::OpsError;

type Result<T> = std::result::Result<T, OpsError>;

/// One linear layer, weight `[out, in]` plus bias `[out]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    fn init<R: Rng>(out_dim: usize, in_dim: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let weight = Tensor::matrix(
            out_dim,
            in_dim,
            (0..out_dim * in_dim)
                .map(|_| rng.gen_range(-bound..bound))
                .collect(),
        )
        .expect("weight shape");
        Linear {
            weight,
            bias: Tensor::vector(vec![0.0; out_dim]),
        }
    }

    fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Linear {
            weight: Tensor::zeros(&[out_dim, in_dim]),
            bias: Tensor::zeros(&[out_dim]),
        }
    }
}

/// Three linear layers with ReLU after the first two.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// `in_dim → hidden → hidden → out_dim`.
    fn init<R: Rng>(in_dim: usize, hidden: usize, out_dim: usize, rng: &mut R) -> Self {
        Mlp {
            layers: vec![
                Linear::init(hidden, in_dim, rng),
                Linear::init(hidden, hidden, rng),
                Linear::init(out_dim, hidden, rng),
            ],
        }
    }

    fn zeros(in_dim: usize, hidden: usize, out_dim: usize) -> Self {
        Mlp {
            layers: vec![
                Linear::zeros(hidden, in_dim),
                Linear::zeros(hidden, hidden),
                Linear::zeros(out_dim, hidden),
            ],
        }
    }
}

/// Tape handles for one registered MLP.
#[derive(Debug, Clone)]
pub struct MlpNodes {
    layers: Vec<(NodeId, NodeId)>,
}

impl MlpNodes {
    pub fn forward(&self, tape: &mut Tape, x: NodeId) -> Result<NodeId> {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, (w, b)) in self.layers.iter().enumerate() {
            let wx = tape.matvec(*w, h)?;
            h = tape.add(wx, *b)?;
            if i < last {
                h = tape.relu(h)?;
            }
        }
        Ok(h)
    }
}

/// All trainable state of the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Raw (unconstrained) entity axis angles, `[num_entities, d]`.
    pub entity_axes: Tensor,
    /// Per-relation translation `(θ_ax,r ; θ_ap,r)`, `[num_relations, 2d]`.
    pub relation_embeddings: Tensor,
    /// 2d → 2d, produces the pre-activation of the projected cone.
    pub projection_mlp: Mlp,
    /// 2d → d, per-dimension attention logits over the intersected cones.
    pub attention_mlp: Mlp,
    /// 2d → hidden, the inner (per-element) half of the aperture gate.
    pub gate_inner_mlp: Mlp,
    /// hidden → d, the outer half applied to the pooled representation.
    pub gate_outer_mlp: Mlp,
    pub dim: usize,
    pub hidden: usize,
}

impl ModelParams {
    /// Random initialization: entity axes uniform in [−π, π), relation
    /// embeddings uniform in [−0.5, 0.5], perceptron weights uniform in
    /// ±1/√fan_in with zero biases.
    pub fn init<R: Rng>(
        num_entities: usize,
        num_relations: usize,
        dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let pi = std::f64::consts::PI;
        let entity_axes = Tensor::matrix(
            num_entities,
            dim,
            (0..num_entities * dim)
                .map(|_| rng.gen_range(-pi..pi))
                .collect(),
        )
        .expect("entity table shape");
        let relation_embeddings = Tensor::matrix(
            num_relations,
            2 * dim,
            (0..num_relations * 2 * dim)
                .map(|_| rng.gen_range(-0.5..0.5))
                .collect(),
        )
        .expect("relation table shape");
        ModelParams {
            entity_axes,
            relation_embeddings,
            projection_mlp: Mlp::init(2 * dim, hidden, 2 * dim, rng),
            attention_mlp: Mlp::init(2 * dim, hidden, dim, rng),
            gate_inner_mlp: Mlp::init(2 * dim, hidden, hidden, rng),
            gate_outer_mlp: Mlp::init(hidden, hidden, dim, rng),
            dim,
            hidden,
        }
    }

    /// All-zero parameters; useful for pinning operator outputs in tests.
    pub fn zeros(num_entities: usize, num_relations: usize, dim: usize, hidden: usize) -> Self {
        ModelParams {
            entity_axes: Tensor::zeros(&[num_entities, dim]),
            relation_embeddings: Tensor::zeros(&[num_relations, 2 * dim]),
            projection_mlp: Mlp::zeros(2 * dim, hidden, 2 * dim),
            attention_mlp: Mlp::zeros(2 * dim, hidden, dim),
            gate_inner_mlp: Mlp::zeros(2 * dim, hidden, hidden),
            gate_outer_mlp: Mlp::zeros(hidden, hidden, dim),
            dim,
            hidden,
        }
    }

    pub fn num_entities(&self) -> usize {
        self.entity_axes.rows()
    }

    pub fn num_relations(&self) -> usize {
        self.relation_embeddings.rows()
    }

    /// Registers every tensor as a tape leaf. With `trainable` set, leaves
    /// participate in backward passes.
    pub fn register(&self, tape: &mut Tape, trainable: bool) -> ParamNodes {
        let mut reg = |t: &Tensor| {
            let mut v = t.clone();
            v.set_requires_grad(trainable);
            tape.leaf(v)
        };
        let entity_axes = reg(&self.entity_axes);
        let relation_embeddings = reg(&self.relation_embeddings);
        let mut reg_mlp = |m: &Mlp, tape: &mut Tape| MlpNodes {
            layers: m
                .layers
                .iter()
                .map(|l| {
                    let mut w = l.weight.clone();
                    w.set_requires_grad(trainable);
                    let mut b = l.bias.clone();
                    b.set_requires_grad(trainable);
                    (tape.leaf(w), tape.leaf(b))
                })
                .collect(),
        };
        ParamNodes {
            entity_axes,
            relation_embeddings,
            projection: reg_mlp(&self.projection_mlp, tape),
            attention: reg_mlp(&self.attention_mlp, tape),
            gate_inner: reg_mlp(&self.gate_inner_mlp, tape),
            gate_outer: reg_mlp(&self.gate_outer_mlp, tape),
            dim: self.dim,
        }
    }

    /// Stable-order visit of every named tensor; the optimizer and the
    /// checkpoints rely on this ordering.
    pub fn visit<'a>(&'a self, mut f: impl FnMut(String, &'a Tensor)) {
        f("entity_axes".into(), &self.entity_axes);
        f("relation_embeddings".into(), &self.relation_embeddings);
        for (name, mlp) in self.mlps() {
            for (i, layer) in mlp.layers.iter().enumerate() {
                f(format!("{name}.w{i}"), &layer.weight);
                f(format!("{name}.b{i}"), &layer.bias);
            }
        }
    }

    pub fn visit_mut(&mut self, mut f: impl FnMut(&str, &mut Tensor)) {
        f("entity_axes", &mut self.entity_axes);
        f("relation_embeddings", &mut self.relation_embeddings);
        let named: [(&str, &mut Mlp); 4] = [
            ("projection_mlp", &mut self.projection_mlp),
            ("attention_mlp", &mut self.attention_mlp),
            ("gate_inner_mlp", &mut self.gate_inner_mlp),
            ("gate_outer_mlp", &mut self.gate_outer_mlp),
        ];
        for (name, mlp) in named {
            for (i, layer) in mlp.layers.iter_mut().enumerate() {
                f(&format!("{name}.w{i}"), &mut layer.weight);
                f(&format!("{name}.b{i}"), &mut layer.bias);
            }
        }
    }

    fn mlps(&self) -> [(&'static str, &Mlp); 4] {
        [
            ("projection_mlp", &self.projection_mlp),
            ("attention_mlp", &self.attention_mlp),
            ("gate_inner_mlp", &self.gate_inner_mlp),
            ("gate_outer_mlp", &self.gate_outer_mlp),
        ]
    }

    /// Wrapped axes of one entity as a typed embedding.
    pub fn entity_embedding(&self, entity: usize) -> Result<crate::geometry::EntityEmbedding> {
        if entity >= self.num_entities() {
            return Err(OpsError::UnknownEntity(entity));
        }
        let d = self.dim;
        let row = &self.entity_axes.data()[entity * d..(entity + 1) * d];
        Ok(crate::geometry::EntityEmbedding::from_raw(row))
    }
}

/// Tape handles for all registered parameters.
#[derive(Debug, Clone)]
pub struct ParamNodes {
    pub entity_axes: NodeId,
    pub relation_embeddings: NodeId,
    pub projection: MlpNodes,
    pub attention: MlpNodes,
    pub gate_inner: MlpNodes,
    pub gate_outer: MlpNodes,
    pub dim: usize,
}
