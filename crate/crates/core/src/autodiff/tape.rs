//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Tape`] records primitive operations in execution order; [`Tape::backward`]
//! walks the record in exact reverse and accumulates gradients for every node
//! whose value requires them. Calling `backward` repeatedly on the same tape is
//! allowed and yields identical results: the sweep reads the tape without
//! mutating it.
//!
//! Subgradient convention: wherever a minimum has a tie, the gradient routes
//! entirely to the first (left) argument, so backward passes are deterministic.

use rand::Rng;

use super::{AutodiffError, Tensor};

type Result<T> = std::result::Result<T, AutodiffError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

/// Axis selector for softmax.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    /// Down the rows of a matrix (normalizes each column), or along a vector.
    Rows,
    /// Across the columns of a matrix (normalizes each row).
    Cols,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Neg(NodeId),
    AddScalar(NodeId),
    MulScalar(NodeId, f64),
    MatMul(NodeId, NodeId),
    MatVec(NodeId, NodeId),
    Concat(NodeId, NodeId),
    Slice(NodeId, usize),
    GatherRow(NodeId, usize),
    StackRows(Vec<NodeId>),
    SumAxis0(NodeId),
    MeanAxis0(NodeId),
    MinAxis0(NodeId, Vec<usize>),
    Softmax(NodeId, Axis),
    Tanh(NodeId),
    Sin(NodeId),
    Cos(NodeId),
    Sigmoid(NodeId),
    Relu(NodeId),
    Abs(NodeId),
    LogSigmoid(NodeId),
    ElementMin(NodeId, NodeId, Vec<bool>),
    Sum(NodeId),
    Mean(NodeId),
    L1Norm(NodeId),
    Dropout(NodeId, Vec<f64>),
    Atan2 { y: NodeId, x: NodeId, clamped_x: Vec<f64> },
    WrapAngle(NodeId),
    OppositeAngle(NodeId),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Neg(..) => "neg",
            Op::AddScalar(..) => "add_scalar",
            Op::MulScalar(..) => "mul_scalar",
            Op::MatMul(..) => "matmul",
            Op::MatVec(..) => "matvec",
            Op::Concat(..) => "concat",
            Op::Slice(..) => "slice",
            Op::GatherRow(..) => "gather_row",
            Op::StackRows(..) => "stack_rows",
            Op::SumAxis0(..) => "sum_axis0",
            Op::MeanAxis0(..) => "mean_axis0",
            Op::MinAxis0(..) => "min_axis0",
            Op::Softmax(..) => "softmax",
            Op::Tanh(..) => "tanh",
            Op::Sin(..) => "sin",
            Op::Cos(..) => "cos",
            Op::Sigmoid(..) => "sigmoid",
            Op::Relu(..) => "relu",
            Op::Abs(..) => "abs",
            Op::LogSigmoid(..) => "log_sigmoid",
            Op::ElementMin(..) => "element_min",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::L1Norm(..) => "l1_norm",
            Op::Dropout(..) => "dropout",
            Op::Atan2 { .. } => "atan2",
            Op::WrapAngle(..) => "wrap_angle",
            Op::OppositeAngle(..) => "opposite_angle",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients of a scalar root with respect to tape nodes.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient w.r.t. `id`, if that node required one and was reached.
    pub fn wrt(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Registers an input tensor; gradient tracking follows its
    /// `requires_grad` flag.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        let requires_grad = value.requires_grad();
        self.push_unchecked(value, Op::Leaf, requires_grad)
    }

    /// Registers a constant (never differentiated).
    pub fn constant(&mut self, mut value: Tensor) -> NodeId {
        value.set_requires_grad(false);
        self.push_unchecked(value, Op::Leaf, false)
    }

    fn push_unchecked(&mut self, value: Tensor, op: Op, requires_grad: bool) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        id
    }

    fn push(&mut self, data: Vec<f64>, shape: Vec<usize>, op: Op, inputs: &[NodeId]) -> Result<NodeId> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(AutodiffError::NonFinite { op: op.name() });
        }
        let requires_grad = inputs.iter().any(|id| self.nodes[id.0].requires_grad);
        let mut value = Tensor::new(shape, data)?;
        value.set_requires_grad(requires_grad);
        Ok(self.push_unchecked(value, op, requires_grad))
    }

    fn same_shape(&self, a: NodeId, b: NodeId, op: &'static str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(AutodiffError::ShapeMismatch {
                op,
                detail: format!(
                    "{:?} vs {:?}",
                    self.value(a).shape(),
                    self.value(b).shape()
                ),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "add")?;
        let data = zip_map(self.value(a), self.value(b), |x, y| x + y);
        self.push(data, self.value(a).shape().to_vec(), Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "sub")?;
        let data = zip_map(self.value(a), self.value(b), |x, y| x - y);
        self.push(data, self.value(a).shape().to_vec(), Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "mul")?;
        let data = zip_map(self.value(a), self.value(b), |x, y| x * y);
        self.push(data, self.value(a).shape().to_vec(), Op::Mul(a, b), &[a, b])
    }

    pub fn neg(&mut self, a: NodeId) -> Result<NodeId> {
        let data = self.value(a).data().iter().map(|x| -x).collect();
        self.push(data, self.value(a).shape().to_vec(), Op::Neg(a), &[a])
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        let data = self.value(a).data().iter().map(|x| x + c).collect();
        self.push(data, self.value(a).shape().to_vec(), Op::AddScalar(a), &[a])
    }

    pub fn mul_scalar(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        let data = self.value(a).data().iter().map(|x| x * c).collect();
        self.push(data, self.value(a).shape().to_vec(), Op::MulScalar(a, c), &[a])
    }

    /// Matrix product of two 2-D tensors.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (self.value(a), self.value(b));
        if !ta.is_matrix() || !tb.is_matrix() || ta.cols() != tb.rows() {
            return Err(AutodiffError::ShapeMismatch {
                op: "matmul",
                detail: format!("{:?} x {:?}", ta.shape(), tb.shape()),
            });
        }
        let (m, n, k) = (ta.rows(), ta.cols(), tb.cols());
        let mut data = vec![0.0; m * k];
        for i in 0..m {
            for l in 0..n {
                let av = ta.data()[i * n + l];
                if av == 0.0 {
                    continue;
                }
                for j in 0..k {
                    data[i * k + j] += av * tb.data()[l * k + j];
                }
            }
        }
        self.push(data, vec![m, k], Op::MatMul(a, b), &[a, b])
    }

    /// Matrix–vector product: `w` is `[m, n]`, `x` is `[n]`.
    pub fn matvec(&mut self, w: NodeId, x: NodeId) -> Result<NodeId> {
        let (tw, tx) = (self.value(w), self.value(x));
        if !tw.is_matrix() || !tx.is_vector() || tw.cols() != tx.len() {
            return Err(AutodiffError::ShapeMismatch {
                op: "matvec",
                detail: format!("{:?} x {:?}", tw.shape(), tx.shape()),
            });
        }
        let (m, n) = (tw.rows(), tw.cols());
        let data = (0..m)
            .map(|i| {
                (0..n)
                    .map(|j| tw.data()[i * n + j] * tx.data()[j])
                    .sum::<f64>()
            })
            .collect();
        self.push(data, vec![m], Op::MatVec(w, x), &[w, x])
    }

    /// Concatenation of two vectors.
    pub fn concat(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (self.value(a), self.value(b));
        if !ta.is_vector() || !tb.is_vector() {
            return Err(AutodiffError::ShapeMismatch {
                op: "concat",
                detail: format!("{:?} ++ {:?}", ta.shape(), tb.shape()),
            });
        }
        let mut data = ta.data().to_vec();
        data.extend_from_slice(tb.data());
        let len = data.len();
        self.push(data, vec![len], Op::Concat(a, b), &[a, b])
    }

    /// Contiguous slice of a vector.
    pub fn slice(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let ta = self.value(a);
        if !ta.is_vector() || start + len > ta.len() || len == 0 {
            return Err(AutodiffError::ShapeMismatch {
                op: "slice",
                detail: format!("[{start}..{}] of {:?}", start + len, ta.shape()),
            });
        }
        let data = ta.data()[start..start + len].to_vec();
        self.push(data, vec![len], Op::Slice(a, start), &[a])
    }

    /// Row `row` of a 2-D table; the gradient scatters back into the table.
    pub fn gather_row(&mut self, table: NodeId, row: usize) -> Result<NodeId> {
        let t = self.value(table);
        if !t.is_matrix() || row >= t.rows() {
            return Err(AutodiffError::ShapeMismatch {
                op: "gather_row",
                detail: format!("row {row} of {:?}", t.shape()),
            });
        }
        let c = t.cols();
        let data = t.data()[row * c..(row + 1) * c].to_vec();
        self.push(data, vec![c], Op::GatherRow(table, row), &[table])
    }

    /// Stacks n equal-length vectors into an `[n, d]` matrix.
    pub fn stack_rows(&mut self, rows: &[NodeId]) -> Result<NodeId> {
        if rows.is_empty() {
            return Err(AutodiffError::ShapeMismatch {
                op: "stack_rows",
                detail: "no rows".into(),
            });
        }
        let d = self.value(rows[0]).len();
        let mut data = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            let t = self.value(r);
            if !t.is_vector() || t.len() != d {
                return Err(AutodiffError::ShapeMismatch {
                    op: "stack_rows",
                    detail: format!("expected [{d}], got {:?}", t.shape()),
                });
            }
            data.extend_from_slice(t.data());
        }
        self.push(
            data,
            vec![rows.len(), d],
            Op::StackRows(rows.to_vec()),
            rows,
        )
    }

    pub fn sum_axis0(&mut self, a: NodeId) -> Result<NodeId> {
        let t = self.matrix_only(a, "sum_axis0")?;
        let (n, d) = (t.rows(), t.cols());
        let data = (0..d)
            .map(|j| (0..n).map(|i| t.data()[i * d + j]).sum())
            .collect();
        self.push(data, vec![d], Op::SumAxis0(a), &[a])
    }

    pub fn mean_axis0(&mut self, a: NodeId) -> Result<NodeId> {
        let t = self.matrix_only(a, "mean_axis0")?;
        let (n, d) = (t.rows(), t.cols());
        let data = (0..d)
            .map(|j| (0..n).map(|i| t.data()[i * d + j]).sum::<f64>() / n as f64)
            .collect();
        self.push(data, vec![d], Op::MeanAxis0(a), &[a])
    }

    /// Column-wise minimum of a matrix; ties go to the lowest row index.
    pub fn min_axis0(&mut self, a: NodeId) -> Result<NodeId> {
        let t = self.matrix_only(a, "min_axis0")?;
        let (n, d) = (t.rows(), t.cols());
        let mut data = Vec::with_capacity(d);
        let mut argmin = Vec::with_capacity(d);
        for j in 0..d {
            let mut best = t.data()[j];
            let mut best_i = 0usize;
            for i in 1..n {
                let v = t.data()[i * d + j];
                if v < best {
                    best = v;
                    best_i = i;
                }
            }
            data.push(best);
            argmin.push(best_i);
        }
        self.push(data, vec![d], Op::MinAxis0(a, argmin), &[a])
    }

    fn matrix_only(&self, a: NodeId, op: &'static str) -> Result<&Tensor> {
        let t = self.value(a);
        if !t.is_matrix() {
            return Err(AutodiffError::ShapeMismatch {
                op,
                detail: format!("{:?}", t.shape()),
            });
        }
        Ok(t)
    }

    /// Softmax over the given axis. `Axis::Rows` normalizes each column of a
    /// matrix (and a whole vector); `Axis::Cols` normalizes each row.
    pub fn softmax(&mut self, a: NodeId, axis: Axis) -> Result<NodeId> {
        let t = self.value(a);
        let data = match (t.shape().len(), axis) {
            (1, Axis::Rows) => softmax_slice(t.data()),
            (2, _) => {
                let (n, d) = (t.rows(), t.cols());
                let mut out = vec![0.0; n * d];
                match axis {
                    Axis::Rows => {
                        for j in 0..d {
                            let col: Vec<f64> = (0..n).map(|i| t.data()[i * d + j]).collect();
                            for (i, v) in softmax_slice(&col).into_iter().enumerate() {
                                out[i * d + j] = v;
                            }
                        }
                    }
                    Axis::Cols => {
                        for i in 0..n {
                            let row = &t.data()[i * d..(i + 1) * d];
                            out[i * d..(i + 1) * d].copy_from_slice(&softmax_slice(row));
                        }
                    }
                }
                out
            }
            _ => {
                return Err(AutodiffError::ShapeMismatch {
                    op: "softmax",
                    detail: format!("{:?}", t.shape()),
                })
            }
        };
        self.push(data, t.shape().to_vec(), Op::Softmax(a, axis), &[a])
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        let data = self.value(a).data().iter().map(|x| x.tanh()).collect();
        self.push(data, self.value(a).shape().to_vec(), Op::Tanh(a), &[a])
    }

    pub fn sin(&mut self, a: NodeId) -> Result<NodeId> {
        let data = self.value(a).data().iter().map(|x| x.sin()).collect();
        self.push(data, self.value(a).shape().to_vec(), Op::Sin(a), &[a])
    }

    pub fn cos(&mut self, a: NodeId) -> Result<NodeId> {
        let data = self.value(a).data().iter().map(|x| x.cos()).collect();
        self.push(data, self.value(a).shape().to_vec(), Op::Cos(a), &[a])
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        let data = self.value(a).data().iter().map(|&x| sigmoid(x)).collect();
        self.push(data, self.value(a).shape().to_vec(), Op::Sigmoid(a), &[a])
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        let data = self.value(a).data().iter().map(|x| x.max(0.0)).collect();
        self.push(data, self.value(a).shape().to_vec(), Op::Relu(a), &[a])
    }

    pub fn abs(&mut self, a: NodeId) -> Result<NodeId> {
        let data = self.value(a).data().iter().map(|x| x.abs()).collect();
        self.push(data, self.value(a).shape().to_vec(), Op::Abs(a), &[a])
    }

    /// Numerically stable log σ(x) = −softplus(−x).
    pub fn log_sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        let data = self
            .value(a)
            .data()
            .iter()
            .map(|&x| {
                if x >= 0.0 {
                    -((-x).exp().ln_1p())
                } else {
                    x - x.exp().ln_1p()
                }
            })
            .collect();
        self.push(data, self.value(a).shape().to_vec(), Op::LogSigmoid(a), &[a])
    }

    /// Element-wise minimum; on ties the gradient routes to `a`.
    pub fn element_min(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape(a, b, "element_min")?;
        let (ta, tb) = (self.value(a), self.value(b));
        let left: Vec<bool> = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| x <= y)
            .collect();
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| x.min(*y))
            .collect();
        self.push(
            data,
            ta.shape().to_vec(),
            Op::ElementMin(a, b, left),
            &[a, b],
        )
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).data().iter().sum();
        self.push(vec![v], Vec::new(), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        let t = self.value(a);
        let v = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push(vec![v], Vec::new(), Op::Mean(a), &[a])
    }

    pub fn l1_norm(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).data().iter().map(|x| x.abs()).sum();
        self.push(vec![v], Vec::new(), Op::L1Norm(a), &[a])
    }

    /// Inverted dropout: at training time, keeps each activation with
    /// probability `1 − rate` and scales kept values by `1/(1 − rate)`.
    /// With `training == false` (or zero rate) this is the identity and
    /// records nothing.
    pub fn dropout<R: Rng>(
        &mut self,
        a: NodeId,
        rate: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<NodeId> {
        if !(0.0..1.0).contains(&rate) {
            return Err(AutodiffError::InvalidDropoutRate(rate));
        }
        if !training || rate == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 - rate;
        let mask: Vec<f64> = (0..self.value(a).len())
            .map(|_| {
                if rng.gen::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            })
            .collect();
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(&mask)
            .map(|(x, m)| x * m)
            .collect();
        self.push(
            data,
            self.value(a).shape().to_vec(),
            Op::Dropout(a, mask),
            &[a],
        )
    }

    /// Four-quadrant angle of points (x, y), element-wise, in (−π, π].
    /// A zero x-coordinate is replaced by 1e-3 in both the forward value and
    /// the gradient formula.
    pub fn atan2(&mut self, y: NodeId, x: NodeId) -> Result<NodeId> {
        self.same_shape(y, x, "atan2")?;
        let clamped_x: Vec<f64> = self
            .value(x)
            .data()
            .iter()
            .map(|&v| if v == 0.0 { crate::geometry::ARG_X_CLAMP } else { v })
            .collect();
        let data = self
            .value(y)
            .data()
            .iter()
            .zip(&clamped_x)
            .map(|(&yv, &xv)| yv.atan2(xv))
            .collect();
        self.push(
            data,
            self.value(y).shape().to_vec(),
            Op::Atan2 { y, x, clamped_x },
            &[y, x],
        )
    }

    /// Wraps angles into [−π, π); a piecewise shift by multiples of 2π, so
    /// the gradient is the identity.
    pub fn wrap_angle(&mut self, a: NodeId) -> Result<NodeId> {
        let data = self
            .value(a)
            .data()
            .iter()
            .map(|&x| crate::geometry::wrap(x))
            .collect();
        self.push(data, self.value(a).shape().to_vec(), Op::WrapAngle(a), &[a])
    }

    /// Maps each angle to its opposite point on the circle, staying in
    /// [−π, π): a constant ±π shift after wrapping, so the gradient is the
    /// identity.
    pub fn opposite_angle(&mut self, a: NodeId) -> Result<NodeId> {
        let data = self
            .value(a)
            .data()
            .iter()
            .map(|&x| {
                // Already-normalized angles pass through untouched so the op
                // is bitwise-equal to the pure complement on valid input.
                let w = if (-std::f64::consts::PI..std::f64::consts::PI).contains(&x) {
                    x
                } else {
                    crate::geometry::wrap(x)
                };
                if w >= 0.0 {
                    w - std::f64::consts::PI
                } else {
                    w + std::f64::consts::PI
                }
            })
            .collect();
        self.push(
            data,
            self.value(a).shape().to_vec(),
            Op::OppositeAngle(a),
            &[a],
        )
    }

    /// Reverse sweep from a scalar root. Gradients are accumulated for every
    /// node on a path to the root whose value requires gradients.
    pub fn backward(&self, root: NodeId) -> Result<Gradients> {
        if !self.value(root).is_scalar() {
            return Err(AutodiffError::NonScalarRoot {
                shape: self.value(root).shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=root.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], target: NodeId, delta: Tensor) {
        if !self.nodes[target.0].requires_grad {
            return;
        }
        match &mut grads[target.0] {
            Some(existing) => {
                for (e, d) in existing.data_mut().iter_mut().zip(delta.data()) {
                    *e += d;
                }
            }
            slot => {
                *slot = Some(delta);
            }
        }
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let shape_of = |id: NodeId| self.value(id).shape().to_vec();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                let neg = map_tensor(g, |v| -v);
                self.accumulate(grads, *b, neg);
            }
            Op::Mul(a, b) => {
                let da = zip_tensor(g, self.value(*b), |gv, bv| gv * bv);
                let db = zip_tensor(g, self.value(*a), |gv, av| gv * av);
                self.accumulate(grads, *a, da);
                self.accumulate(grads, *b, db);
            }
            Op::Neg(a) => self.accumulate(grads, *a, map_tensor(g, |v| -v)),
            Op::AddScalar(a) => self.accumulate(grads, *a, g.clone()),
            Op::MulScalar(a, c) => {
                let c = *c;
                self.accumulate(grads, *a, map_tensor(g, |v| v * c));
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, n, k) = (ta.rows(), ta.cols(), tb.cols());
                let mut da = vec![0.0; m * n];
                let mut db = vec![0.0; n * k];
                for i in 0..m {
                    for j in 0..k {
                        let gv = g.data()[i * k + j];
                        if gv == 0.0 {
                            continue;
                        }
                        for l in 0..n {
                            da[i * n + l] += gv * tb.data()[l * k + j];
                            db[l * k + j] += gv * ta.data()[i * n + l];
                        }
                    }
                }
                self.accumulate(grads, *a, Tensor::new(vec![m, n], da).unwrap());
                self.accumulate(grads, *b, Tensor::new(vec![n, k], db).unwrap());
            }
            Op::MatVec(w, x) => {
                let (tw, tx) = (self.value(*w), self.value(*x));
                let (m, n) = (tw.rows(), tw.cols());
                let mut dw = vec![0.0; m * n];
                let mut dx = vec![0.0; n];
                for i in 0..m {
                    let gv = g.data()[i];
                    if gv == 0.0 {
                        continue;
                    }
                    for j in 0..n {
                        dw[i * n + j] += gv * tx.data()[j];
                        dx[j] += gv * tw.data()[i * n + j];
                    }
                }
                self.accumulate(grads, *w, Tensor::new(vec![m, n], dw).unwrap());
                self.accumulate(grads, *x, Tensor::vector(dx));
            }
            Op::Concat(a, b) => {
                let na = self.value(*a).len();
                self.accumulate(grads, *a, Tensor::vector(g.data()[..na].to_vec()));
                self.accumulate(grads, *b, Tensor::vector(g.data()[na..].to_vec()));
            }
            Op::Slice(a, start) => {
                let mut full = Tensor::zeros(&shape_of(*a));
                full.data_mut()[*start..*start + g.len()].copy_from_slice(g.data());
                self.accumulate(grads, *a, full);
            }
            Op::GatherRow(table, row) => {
                let mut full = Tensor::zeros(&shape_of(*table));
                let c = g.len();
                full.data_mut()[row * c..(row + 1) * c].copy_from_slice(g.data());
                self.accumulate(grads, *table, full);
            }
            Op::StackRows(rows) => {
                let d = g.len() / rows.len();
                for (i, &r) in rows.iter().enumerate() {
                    self.accumulate(
                        grads,
                        r,
                        Tensor::vector(g.data()[i * d..(i + 1) * d].to_vec()),
                    );
                }
            }
            Op::SumAxis0(a) => {
                let shape = shape_of(*a);
                let (n, d) = (shape[0], shape[1]);
                let mut da = vec![0.0; n * d];
                for i in 0..n {
                    da[i * d..(i + 1) * d].copy_from_slice(g.data());
                }
                self.accumulate(grads, *a, Tensor::new(shape, da).unwrap());
            }
            Op::MeanAxis0(a) => {
                let shape = shape_of(*a);
                let (n, d) = (shape[0], shape[1]);
                let mut da = vec![0.0; n * d];
                for i in 0..n {
                    for j in 0..d {
                        da[i * d + j] = g.data()[j] / n as f64;
                    }
                }
                self.accumulate(grads, *a, Tensor::new(shape, da).unwrap());
            }
            Op::MinAxis0(a, argmin) => {
                let shape = shape_of(*a);
                let d = shape[1];
                let mut da = vec![0.0; shape[0] * d];
                for j in 0..d {
                    da[argmin[j] * d + j] = g.data()[j];
                }
                self.accumulate(grads, *a, Tensor::new(shape, da).unwrap());
            }
            Op::Softmax(a, axis) => {
                let s = &node.value;
                let shape = shape_of(*a);
                let mut da = vec![0.0; s.len()];
                let jacobian = |sv: &[f64], gv: &[f64], out: &mut [f64]| {
                    let dot: f64 = sv.iter().zip(gv).map(|(si, gi)| si * gi).sum();
                    for ((o, &si), &gi) in out.iter_mut().zip(sv).zip(gv) {
                        *o = si * (gi - dot);
                    }
                };
                if s.is_vector() {
                    jacobian(s.data(), g.data(), &mut da);
                } else {
                    let (n, d) = (s.rows(), s.cols());
                    match axis {
                        Axis::Rows => {
                            for j in 0..d {
                                let col_s: Vec<f64> = (0..n).map(|i| s.data()[i * d + j]).collect();
                                let col_g: Vec<f64> = (0..n).map(|i| g.data()[i * d + j]).collect();
                                let mut col_out = vec![0.0; n];
                                jacobian(&col_s, &col_g, &mut col_out);
                                for i in 0..n {
                                    da[i * d + j] = col_out[i];
                                }
                            }
                        }
                        Axis::Cols => {
                            for i in 0..n {
                                let row = i * d..(i + 1) * d;
                                let (sv, gv) = (&s.data()[row.clone()], &g.data()[row.clone()]);
                                let mut out = vec![0.0; d];
                                jacobian(sv, gv, &mut out);
                                da[row].copy_from_slice(&out);
                            }
                        }
                    }
                }
                self.accumulate(grads, *a, Tensor::new(shape, da).unwrap());
            }
            Op::Tanh(a) => {
                let da = zip_tensor(g, &node.value, |gv, y| gv * (1.0 - y * y));
                self.accumulate(grads, *a, da);
            }
            Op::Sin(a) => {
                let da = zip_tensor(g, self.value(*a), |gv, x| gv * x.cos());
                self.accumulate(grads, *a, da);
            }
            Op::Cos(a) => {
                let da = zip_tensor(g, self.value(*a), |gv, x| -gv * x.sin());
                self.accumulate(grads, *a, da);
            }
            Op::Sigmoid(a) => {
                let da = zip_tensor(g, &node.value, |gv, y| gv * y * (1.0 - y));
                self.accumulate(grads, *a, da);
            }
            Op::Relu(a) => {
                let da = zip_tensor(g, self.value(*a), |gv, x| if x > 0.0 { gv } else { 0.0 });
                self.accumulate(grads, *a, da);
            }
            Op::Abs(a) => {
                let da = zip_tensor(g, self.value(*a), |gv, x| gv * sign(x));
                self.accumulate(grads, *a, da);
            }
            Op::LogSigmoid(a) => {
                let da = zip_tensor(g, self.value(*a), |gv, x| gv * sigmoid(-x));
                self.accumulate(grads, *a, da);
            }
            Op::ElementMin(a, b, left) => {
                let mut da = Tensor::zeros(&shape_of(*a));
                let mut db = Tensor::zeros(&shape_of(*b));
                for (i, &is_left) in left.iter().enumerate() {
                    if is_left {
                        da.data_mut()[i] = g.data()[i];
                    } else {
                        db.data_mut()[i] = g.data()[i];
                    }
                }
                self.accumulate(grads, *a, da);
                self.accumulate(grads, *b, db);
            }
            Op::Sum(a) => {
                let da = Tensor::full(&shape_of(*a), g.item());
                self.accumulate(grads, *a, da);
            }
            Op::Mean(a) => {
                let len = self.value(*a).len() as f64;
                let da = Tensor::full(&shape_of(*a), g.item() / len);
                self.accumulate(grads, *a, da);
            }
            Op::L1Norm(a) => {
                let gv = g.item();
                let da = map_tensor(self.value(*a), |x| gv * sign(x));
                self.accumulate(grads, *a, da);
            }
            Op::Dropout(a, mask) => {
                let mut da = Tensor::zeros(&shape_of(*a));
                for i in 0..mask.len() {
                    da.data_mut()[i] = g.data()[i] * mask[i];
                }
                self.accumulate(grads, *a, da);
            }
            Op::Atan2 { y, x, clamped_x } => {
                let ty = self.value(*y);
                let mut dy = Tensor::zeros(&shape_of(*y));
                let mut dx = Tensor::zeros(&shape_of(*x));
                for i in 0..ty.len() {
                    let yv = ty.data()[i];
                    let xv = clamped_x[i];
                    let denom = xv * xv + yv * yv;
                    dy.data_mut()[i] = g.data()[i] * xv / denom;
                    dx.data_mut()[i] = -g.data()[i] * yv / denom;
                }
                self.accumulate(grads, *y, dy);
                self.accumulate(grads, *x, dx);
            }
            Op::WrapAngle(a) | Op::OppositeAngle(a) => {
                self.accumulate(grads, *a, g.clone());
            }
        }
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn softmax_slice(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.data().iter().zip(b.data()).map(|(x, y)| f(*x, *y)).collect()
}

fn zip_tensor(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let mut out = Tensor::zeros(a.shape());
    for (i, (x, y)) in a.data().iter().zip(b.data()).enumerate() {
        out.data_mut()[i] = f(*x, *y);
    }
    out
}

fn map_tensor(a: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    let mut out = Tensor::zeros(a.shape());
    for (i, x) in a.data().iter().enumerate() {
        out.data_mut()[i] = f(*x);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn tanh_at_zero_has_unit_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![0.0]).with_grad());
        let y = tape.tanh(x).unwrap();
        assert_eq!(tape.value(y).data()[0], 0.0);
        let s = tape.sum(y).unwrap();
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.wrt(x).unwrap().data()[0], 1.0);
    }

    #[test]
    fn element_min_routes_subgradient_to_argmin() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::vector(vec![3.0, 1.0]).with_grad());
        let b = tape.leaf(Tensor::vector(vec![2.0, 4.0]).with_grad());
        let m = tape.element_min(a, b).unwrap();
        assert_eq!(tape.value(m).data(), &[2.0, 1.0]);
        let s = tape.sum(m).unwrap();
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.wrt(a).unwrap().data(), &[0.0, 1.0]);
        assert_eq!(grads.wrt(b).unwrap().data(), &[1.0, 0.0]);
    }

    #[test]
    fn element_min_tie_prefers_left() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::vector(vec![2.0]).with_grad());
        let b = tape.leaf(Tensor::vector(vec![2.0]).with_grad());
        let m = tape.element_min(a, b).unwrap();
        let s = tape.sum(m).unwrap();
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.wrt(a).unwrap().data(), &[1.0]);
        assert_eq!(grads.wrt(b).unwrap().data(), &[0.0]);
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![0.0, 0.0]));
        let s = tape.softmax(x, Axis::Rows).unwrap();
        assert_eq!(tape.value(s).data(), &[0.5, 0.5]);
    }

    #[test]
    fn sum_backward_is_all_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, -2.0, 3.0]).with_grad());
        let s = tape.sum(x).unwrap();
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.wrt(x).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn l1_norm_backward_on_positive_input_is_all_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0, 0.5]).with_grad());
        let n = tape.l1_norm(x).unwrap();
        let grads = tape.backward(n).unwrap();
        assert_eq!(grads.wrt(x).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn sigmoid_of_dot_product_gradient_at_zero_weights() {
        // root = sigmoid(w·x) at w = 0 has gradient 0.25·x.
        let x_vals = [0.3, -1.2, 0.7];
        let mut tape = Tape::new();
        let w = tape.leaf(Tensor::matrix(1, 3, vec![0.0; 3]).unwrap().with_grad());
        let x = tape.leaf(Tensor::vector(x_vals.to_vec()));
        let wx = tape.matvec(w, x).unwrap();
        let y = tape.sigmoid(wx).unwrap();
        let root = tape.sum(y).unwrap();
        let grads = tape.backward(root).unwrap();
        for (g, xv) in grads.wrt(w).unwrap().data().iter().zip(x_vals) {
            assert!((g - 0.25 * xv).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_requires_scalar_root() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]).with_grad());
        assert!(matches!(
            tape.backward(x),
            Err(AutodiffError::NonScalarRoot { .. })
        ));
    }

    #[test]
    fn backward_twice_yields_identical_results() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![0.4, -0.9]).with_grad());
        let y = tape.tanh(x).unwrap();
        let s = tape.sum(y).unwrap();
        let g1 = tape.backward(s).unwrap();
        let g2 = tape.backward(s).unwrap();
        assert_eq!(g1.wrt(x).unwrap().data(), g2.wrt(x).unwrap().data());
    }

    #[test]
    fn dropout_is_identity_when_not_training() {
        let mut tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        let y = tape.dropout(x, 0.5, false, &mut rng).unwrap();
        assert_eq!(x, y);
        assert!(tape.dropout(x, 1.0, true, &mut rng).is_err());
    }

    #[test]
    fn dropout_scales_kept_activations() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0; 1000]));
        let y = tape.dropout(x, 0.25, true, &mut rng).unwrap();
        for &v in tape.value(y).data() {
            assert!(v == 0.0 || (v - 1.0 / 0.75).abs() < 1e-12);
        }
        let kept = tape.value(y).data().iter().filter(|&&v| v != 0.0).count();
        assert!((650..850).contains(&kept), "kept {kept} of 1000 at rate 0.25");
    }

    #[test]
    fn non_finite_intermediate_reports_op() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1e308]));
        let err = tape.add(x, x).unwrap_err();
        assert!(matches!(err, AutodiffError::NonFinite { op: "add" }));
    }

    #[test]
    fn matmul_matches_hand_computation() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let b = tape.leaf(Tensor::matrix(2, 2, vec![5.0, 6.0, 7.0, 8.0]).unwrap());
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn gather_row_scatters_gradient() {
        let mut tape = Tape::new();
        let table = tape.leaf(Tensor::matrix(3, 2, vec![1.0; 6]).unwrap().with_grad());
        let row = tape.gather_row(table, 1).unwrap();
        let s = tape.sum(row).unwrap();
        let grads = tape.backward(s).unwrap();
        assert_eq!(
            grads.wrt(table).unwrap().data(),
            &[0.0, 0.0, 1.0, 1.0, 0.0, 0.0]
        );
    }

    #[test]
    fn opposite_angle_matches_complement_axis() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![0.5, -0.5, 0.0]));
        let y = tape.opposite_angle(x).unwrap();
        let got = tape.value(y).data();
        assert!((got[0] - (0.5 - std::f64::consts::PI)).abs() < 1e-15);
        assert!((got[1] - (-0.5 + std::f64::consts::PI)).abs() < 1e-15);
        assert!((got[2] - (-std::f64::consts::PI)).abs() < 1e-15);
    }
}
