use std::collections::BTreeMap;

use super::kernels;
use super::tensor::{dims2, Real, Tensor};
use crate::error::{Error, Result};

/// Epsilon used by every layer-normalization node.
pub const LAYER_NORM_EPS: Real = 1e-12;

/// Handle to a node inside one [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation tag of a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    Add,
    Sub,
    Mul,
    AddRow,
    MatMul,
    Transpose,
    Concat,
    Slice,
    Softmax,
    LogSoftmax,
    Log,
    Exp,
    LayerNorm,
    Gelu,
    Tanh,
    Dropout,
    Scale,
    Sum,
    Mean,
    L2Norm,
    Gather,
}

impl OpKind {
    pub fn name(self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::AddRow => "add_row",
            OpKind::MatMul => "matmul",
            OpKind::Transpose => "transpose",
            OpKind::Concat => "concat",
            OpKind::Slice => "slice",
            OpKind::Softmax => "softmax",
            OpKind::LogSoftmax => "log_softmax",
            OpKind::Log => "log",
            OpKind::Exp => "exp",
            OpKind::LayerNorm => "layer_norm",
            OpKind::Gelu => "gelu",
            OpKind::Tanh => "tanh",
            OpKind::Dropout => "dropout",
            OpKind::Scale => "scale",
            OpKind::Sum => "sum",
            OpKind::Mean => "mean",
            OpKind::L2Norm => "l2_norm",
            OpKind::Gather => "gather",
        }
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Concat { parts: Vec<NodeId>, axis: usize },
    Slice { src: NodeId, axis: usize, start: usize, end: usize },
    Softmax(NodeId),
    LogSoftmax(NodeId),
    Log(NodeId),
    Exp(NodeId),
    LayerNorm { x: NodeId, gamma: NodeId, beta: NodeId },
    Gelu(NodeId),
    Tanh(NodeId),
    Dropout { src: NodeId, scaled_mask: Vec<Real> },
    Scale(NodeId, Real),
    Sum(NodeId),
    Mean(NodeId),
    L2Norm(NodeId),
    Gather { table: NodeId, ids: Vec<usize> },
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::AddRow(..) => OpKind::AddRow,
            Op::MatMul(..) => OpKind::MatMul,
            Op::Transpose(..) => OpKind::Transpose,
            Op::Concat { .. } => OpKind::Concat,
            Op::Slice { .. } => OpKind::Slice,
            Op::Softmax(..) => OpKind::Softmax,
            Op::LogSoftmax(..) => OpKind::LogSoftmax,
            Op::Log(..) => OpKind::Log,
            Op::Exp(..) => OpKind::Exp,
            Op::LayerNorm { .. } => OpKind::LayerNorm,
            Op::Gelu(..) => OpKind::Gelu,
            Op::Tanh(..) => OpKind::Tanh,
            Op::Dropout { .. } => OpKind::Dropout,
            Op::Scale(..) => OpKind::Scale,
            Op::Sum(..) => OpKind::Sum,
            Op::Mean(..) => OpKind::Mean,
            Op::L2Norm(..) => OpKind::L2Norm,
            Op::Gather { .. } => OpKind::Gather,
        }
    }

    fn parents(&self) -> Vec<NodeId> {
        match self {
            Op::Leaf => Vec::new(),
            Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddRow(a, b)
            | Op::MatMul(a, b) => vec![*a, *b],
            Op::Concat { parts, .. } => parts.clone(),
            Op::LayerNorm { x, gamma, beta } => vec![*x, *gamma, *beta],
            Op::Transpose(a)
            | Op::Softmax(a)
            | Op::LogSoftmax(a)
            | Op::Log(a)
            | Op::Exp(a)
            | Op::Gelu(a)
            | Op::Tanh(a)
            | Op::Scale(a, _)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::L2Norm(a)
            | Op::Slice { src: a, .. }
            | Op::Dropout { src: a, .. }
            | Op::Gather { table: a, .. } => vec![*a],
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    shape: Vec<usize>,
    value: Option<Vec<Real>>,
    requires_grad: bool,
    track_grad: bool,
}

/// Read-only view of one node.
#[derive(Debug, Clone)]
pub struct ComputeNode<'a> {
    pub op_kind: OpKind,
    pub parents: Vec<NodeId>,
    pub shape: &'a [usize],
    pub output: Option<&'a [Real]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Building,
    Evaluated,
    Differentiated,
}

/// Pass counters, used to account for the cost of training steps.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PassCounts {
    pub forward: usize,
    pub backward: usize,
}

/// Tape of tensor operations built once, evaluated by [`Graph::forward`] and
/// differentiated by [`Graph::backward`].
///
/// Nodes are appended in topological order, so a node's parents always have
/// smaller indices. Once `forward` has run the graph is sealed.
#[derive(Debug, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<Real>>>,
    phase: Phase,
    counts: PassCounts,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            phase: Phase::Building,
            counts: PassCounts::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn counts(&self) -> PassCounts {
        self.counts
    }

    pub fn node(&self, id: NodeId) -> ComputeNode<'_> {
        let node = &self.nodes[id.0];
        ComputeNode {
            op_kind: node.op.kind(),
            parents: node.op.parents(),
            shape: &node.shape,
            output: node.value.as_deref(),
        }
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    /// Cached output of a node; `None` before `forward`.
    pub fn value(&self, id: NodeId) -> Option<&[Real]> {
        self.nodes[id.0].value.as_deref()
    }

    /// Gradient of the last backward root with respect to `id`, when computed.
    pub fn grad(&self, id: NodeId) -> Option<&[Real]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    /// Node output packaged as a tensor, carrying its gradient when available.
    pub fn tensor(&self, id: NodeId) -> Option<Tensor> {
        let node = &self.nodes[id.0];
        let value = node.value.clone()?;
        let mut t = Tensor::new(node.shape.clone(), value)
            .ok()?
            .with_requires_grad(node.requires_grad);
        if let Some(g) = self.grad(id) {
            t.set_grad(g.to_vec()).ok()?;
        }
        Some(t)
    }

    /// Mark an interior node as a gradient target so `backward` computes
    /// `∂root/∂node` even when no upstream leaf requires a gradient.
    pub fn track_grad(&mut self, id: NodeId) -> Result<()> {
        self.ensure_building()?;
        self.nodes[id.0].track_grad = true;
        Ok(())
    }

    fn ensure_building(&self) -> Result<()> {
        if self.phase != Phase::Building {
            return Err(Error::State("graph is sealed once forward has run".into()));
        }
        Ok(())
    }

    fn push(&mut self, op: Op, shape: Vec<usize>) -> Result<NodeId> {
        self.ensure_building()?;
        self.nodes.push(Node {
            op,
            shape,
            value: None,
            requires_grad: false,
            track_grad: false,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    // ---- leaves ----

    pub fn leaf(&mut self, tensor: Tensor) -> Result<NodeId> {
        self.ensure_building()?;
        let requires_grad = tensor.requires_grad();
        let shape = tensor.shape().to_vec();
        self.nodes.push(Node {
            op: Op::Leaf,
            shape,
            value: Some(tensor.into_values()),
            requires_grad,
            track_grad: false,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, tensor: Tensor) -> Result<NodeId> {
        self.leaf(tensor.with_requires_grad(false))
    }

    // ---- elementwise ----

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<Vec<usize>> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::Dimension {
                op,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        Ok(sa.to_vec())
    }

    fn rows_of(&self, op: &'static str, a: NodeId) -> Result<(usize, usize)> {
        dims2(self.shape(a)).ok_or_else(|| Error::Dimension {
            op,
            lhs: self.shape(a).to_vec(),
            rhs: vec![],
        })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let shape = self.same_shape("add", a, b)?;
        self.push(Op::Add(a, b), shape)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let shape = self.same_shape("sub", a, b)?;
        self.push(Op::Sub(a, b), shape)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let shape = self.same_shape("mul", a, b)?;
        self.push(Op::Mul(a, b), shape)
    }

    /// Adds the vector `row` to every row of `a`.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let (_, cols) = self.rows_of("add_row", a)?;
        let n: usize = self.shape(row).iter().product();
        if n != cols {
            return Err(Error::Dimension {
                op: "add_row",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(row).to_vec(),
            });
        }
        let shape = self.shape(a).to_vec();
        self.push(Op::AddRow(a, row), shape)
    }

    pub fn scale(&mut self, a: NodeId, factor: Real) -> Result<NodeId> {
        let shape = self.shape(a).to_vec();
        self.push(Op::Scale(a, factor), shape)
    }

    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        let shape = self.shape(a).to_vec();
        self.push(Op::Log(a), shape)
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        let shape = self.shape(a).to_vec();
        self.push(Op::Exp(a), shape)
    }

    pub fn gelu(&mut self, a: NodeId) -> Result<NodeId> {
        let shape = self.shape(a).to_vec();
        self.push(Op::Gelu(a), shape)
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        let shape = self.shape(a).to_vec();
        self.push(Op::Tanh(a), shape)
    }

    /// Multiplies by a fixed 0/1 `mask` and rescales kept entries by `1/keep_prob`.
    pub fn dropout(&mut self, a: NodeId, mask: &[bool], keep_prob: Real) -> Result<NodeId> {
        let shape = self.shape(a).to_vec();
        if mask.len() != shape.iter().product::<usize>() {
            return Err(Error::Dimension {
                op: "dropout",
                lhs: shape,
                rhs: vec![mask.len()],
            });
        }
        if !(keep_prob > 0.0 && keep_prob <= 1.0) {
            return Err(Error::Config(format!("keep probability {keep_prob} outside (0, 1]")));
        }
        let scaled_mask = mask
            .iter()
            .map(|&keep| if keep { 1.0 / keep_prob } else { 0.0 })
            .collect();
        self.push(Op::Dropout { src: a, scaled_mask }, shape)
    }

    // ---- matrix ops ----

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        match (sa.as_slice(), sb.as_slice()) {
            ([m, k], [k2, n]) if k == k2 => {
                let shape = vec![*m, *n];
                self.push(Op::MatMul(a, b), shape)
            }
            _ => Err(Error::Dimension {
                op: "matmul",
                lhs: sa,
                rhs: sb,
            }),
        }
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        match *self.shape(a) {
            [r, c] => self.push(Op::Transpose(a), vec![c, r]),
            _ => Err(Error::Dimension {
                op: "transpose",
                lhs: self.shape(a).to_vec(),
                rhs: vec![],
            }),
        }
    }

    pub fn concat(&mut self, parts: &[NodeId], axis: usize) -> Result<NodeId> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        if axis > 1 {
            return Err(Error::Contract(format!("concat axis {axis} out of range")));
        }
        let (rows, cols) = self.rows_of("concat", first)?;
        let mut total = 0;
        for &p in parts {
            let (r, c) = self.rows_of("concat", p)?;
            let ok = if axis == 0 { c == cols } else { r == rows };
            if !ok || self.shape(p).len() != 2 {
                return Err(Error::Dimension {
                    op: "concat",
                    lhs: self.shape(first).to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
            total += if axis == 0 { r } else { c };
        }
        let shape = if axis == 0 {
            vec![total, cols]
        } else {
            vec![rows, total]
        };
        self.push(
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            shape,
        )
    }

    /// Rows (`axis = 0`) or columns (`axis = 1`) `start..end` of a matrix.
    pub fn slice(&mut self, src: NodeId, axis: usize, start: usize, end: usize) -> Result<NodeId> {
        let shape = self.shape(src).to_vec();
        let (rows, cols) = match shape.as_slice() {
            [r, c] => (*r, *c),
            _ => {
                return Err(Error::Dimension {
                    op: "slice",
                    lhs: shape,
                    rhs: vec![],
                })
            }
        };
        let extent = if axis == 0 { rows } else { cols };
        if axis > 1 || start >= end || end > extent {
            return Err(Error::Contract(format!(
                "slice {start}..{end} on axis {axis} of {shape:?}"
            )));
        }
        let out = if axis == 0 {
            vec![end - start, cols]
        } else {
            vec![rows, end - start]
        };
        self.push(
            Op::Slice {
                src,
                axis,
                start,
                end,
            },
            out,
        )
    }

    /// Gathers rows `ids` of `table` into an `ids.len() × cols` matrix.
    pub fn gather(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        let (rows, cols) = match *self.shape(table) {
            [r, c] => (r, c),
            _ => {
                return Err(Error::Dimension {
                    op: "gather",
                    lhs: self.shape(table).to_vec(),
                    rhs: vec![],
                })
            }
        };
        if ids.is_empty() {
            return Err(Error::Contract("gather with no ids".into()));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(Error::Input(format!("id {bad} outside table of {rows} rows")));
        }
        self.push(
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            vec![ids.len(), cols],
        )
    }

    // ---- row-wise ----

    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId> {
        self.rows_of("softmax", a)?;
        let shape = self.shape(a).to_vec();
        self.push(Op::Softmax(a), shape)
    }

    pub fn log_softmax(&mut self, a: NodeId) -> Result<NodeId> {
        self.rows_of("log_softmax", a)?;
        let shape = self.shape(a).to_vec();
        self.push(Op::LogSoftmax(a), shape)
    }

    /// Row-wise normalization with learned gain and bias, eps = [`LAYER_NORM_EPS`].
    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId) -> Result<NodeId> {
        let (_, cols) = self.rows_of("layer_norm", x)?;
        for p in [gamma, beta] {
            if self.shape(p).iter().product::<usize>() != cols {
                return Err(Error::Dimension {
                    op: "layer_norm",
                    lhs: self.shape(x).to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
        }
        let shape = self.shape(x).to_vec();
        self.push(Op::LayerNorm { x, gamma, beta }, shape)
    }

    // ---- reductions ----

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Sum(a), vec![1])
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Mean(a), vec![1])
    }

    pub fn l2_norm(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::L2Norm(a), vec![1])
    }

    // ---- evaluation ----

    /// Evaluates every node and returns the value of `root`.
    pub fn forward(&mut self, root: NodeId) -> Result<Tensor> {
        if self.phase == Phase::Building {
            self.evaluate()?;
            self.phase = Phase::Evaluated;
            self.counts.forward += 1;
        }
        self.tensor(root)
            .ok_or_else(|| Error::State("root has no value".into()))
    }

    pub(crate) fn evaluate(&mut self) -> Result<()> {
        for i in 0..self.nodes.len() {
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let out = self.eval_node(i);
            if out.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric {
                    node: i,
                    op: self.nodes[i].op.kind().name(),
                });
            }
            self.nodes[i].value = Some(out);
        }
        Ok(())
    }

    fn val(&self, id: NodeId) -> &[Real] {
        self.nodes[id.0]
            .value
            .as_deref()
            .expect("parents evaluated before children")
    }

    fn eval_node(&self, i: usize) -> Vec<Real> {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => unreachable!("leaves carry their values"),
            Op::Add(a, b) => zip_map(self.val(*a), self.val(*b), |x, y| x + y),
            Op::Sub(a, b) => zip_map(self.val(*a), self.val(*b), |x, y| x - y),
            Op::Mul(a, b) => zip_map(self.val(*a), self.val(*b), |x, y| x * y),
            Op::AddRow(a, row) => {
                let r = self.val(*row);
                let mut out = self.val(*a).to_vec();
                for chunk in out.chunks_mut(r.len()) {
                    for (o, v) in chunk.iter_mut().zip(r) {
                        *o += v;
                    }
                }
                out
            }
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                kernels::matmul(self.val(*a), self.val(*b), m, k, n)
            }
            Op::Transpose(a) => {
                let (r, c) = (self.shape(*a)[0], self.shape(*a)[1]);
                kernels::transpose(self.val(*a), r, c)
            }
            Op::Concat { parts, axis } => {
                let (rows, cols) = (node.shape[0], node.shape[1]);
                if *axis == 0 {
                    parts.iter().flat_map(|p| self.val(*p).iter().copied()).collect()
                } else {
                    let mut out = Vec::with_capacity(rows * cols);
                    for r in 0..rows {
                        for p in parts {
                            let pc = self.shape(*p)[1];
                            out.extend_from_slice(&self.val(*p)[r * pc..(r + 1) * pc]);
                        }
                    }
                    out
                }
            }
            Op::Slice {
                src,
                axis,
                start,
                end,
            } => {
                let v = self.val(*src);
                let (rows, cols) = (self.shape(*src)[0], self.shape(*src)[1]);
                if *axis == 0 {
                    v[start * cols..end * cols].to_vec()
                } else {
                    (0..rows)
                        .flat_map(|r| v[r * cols + start..r * cols + end].iter().copied())
                        .collect()
                }
            }
            Op::Softmax(a) => {
                let cols = *node.shape.last().expect("rank >= 1");
                kernels::softmax_rows(self.val(*a), cols)
            }
            Op::LogSoftmax(a) => {
                let cols = *node.shape.last().expect("rank >= 1");
                kernels::log_softmax_rows(self.val(*a), cols)
            }
            Op::Log(a) => self.val(*a).iter().map(|v| v.ln()).collect(),
            Op::Exp(a) => self.val(*a).iter().map(|v| v.exp()).collect(),
            Op::LayerNorm { x, gamma, beta } => {
                let cols = *node.shape.last().expect("rank >= 1");
                let (g, b) = (self.val(*gamma), self.val(*beta));
                let mut out = self.val(*x).to_vec();
                for row in out.chunks_mut(cols) {
                    let (mean, inv) = kernels::row_moments(row, LAYER_NORM_EPS);
                    for (j, v) in row.iter_mut().enumerate() {
                        *v = g[j] * (*v - mean) * inv + b[j];
                    }
                }
                out
            }
            Op::Gelu(a) => self.val(*a).iter().map(|&v| kernels::gelu(v)).collect(),
            Op::Tanh(a) => self.val(*a).iter().map(|v| v.tanh()).collect(),
            Op::Dropout { src, scaled_mask } => zip_map(self.val(*src), scaled_mask, |x, m| x * m),
            Op::Scale(a, c) => self.val(*a).iter().map(|v| v * c).collect(),
            Op::Sum(a) => vec![self.val(*a).iter().sum()],
            Op::Mean(a) => {
                let v = self.val(*a);
                vec![v.iter().sum::<Real>() / v.len() as Real]
            }
            Op::L2Norm(a) => vec![self.val(*a).iter().map(|v| v * v).sum::<Real>().sqrt()],
            Op::Gather { table, ids } => {
                let cols = node.shape[1];
                let t = self.val(*table);
                ids.iter()
                    .flat_map(|&id| t[id * cols..(id + 1) * cols].iter().copied())
                    .collect()
            }
        }
    }

    /// Reverse-mode pass from a scalar `root`. Returns the gradient of every
    /// leaf that requires one; interior gradients stay readable via [`Graph::grad`].
    pub fn backward(&mut self, root: NodeId) -> Result<BTreeMap<NodeId, Tensor>> {
        if self.phase == Phase::Building {
            return Err(Error::State("backward called before forward".into()));
        }
        if self.shape(root).iter().product::<usize>() != 1 {
            return Err(Error::Contract(format!(
                "backward root must be scalar, got shape {:?}",
                self.shape(root)
            )));
        }
        let needs = self.needs_grad();
        let mut grads: Vec<Option<Vec<Real>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(vec![1.0]);

        for i in (0..=root.0).rev() {
            let (lower, upper) = grads.split_at_mut(i);
            let Some(g) = upper[0].as_deref() else {
                continue;
            };
            self.backprop_node(i, g, lower, &needs);
        }

        self.grads = grads;
        self.phase = Phase::Differentiated;
        self.counts.backward += 1;

        let mut leaves = BTreeMap::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && node.requires_grad {
                let id = NodeId(i);
                let mut t = self.tensor(id).expect("leaf value present");
                if t.grad().is_none() {
                    t.set_grad(vec![0.0; t.len()])?;
                }
                leaves.insert(id, t);
            }
        }
        Ok(leaves)
    }

    fn needs_grad(&self) -> Vec<bool> {
        let mut needs = vec![false; self.nodes.len()];
        for (i, node) in self.nodes.iter().enumerate() {
            needs[i] = node.track_grad
                || (matches!(node.op, Op::Leaf) && node.requires_grad)
                || node.op.parents().iter().any(|p| needs[p.0]);
        }
        needs
    }

    fn backprop_node(&self, i: usize, g: &[Real], grads: &mut [Option<Vec<Real>>], needs: &[bool]) {
        let node = &self.nodes[i];
        let out = node.value.as_deref().expect("evaluated");
        macro_rules! buf {
            ($p:expr) => {
                grads_buf(self, $p, grads)
            };
        }
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for p in [*a, *b] {
                    if needs[p.0] {
                        let gb = buf!(p);
                        add_into(gb, g);
                    }
                }
            }
            Op::Sub(a, b) => {
                if needs[a.0] {
                    add_into(buf!(*a), g);
                }
                if needs[b.0] {
                    let gb = buf!(*b);
                    for (o, v) in gb.iter_mut().zip(g) {
                        *o -= v;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.val(*a), self.val(*b));
                if needs[a.0] {
                    let ga = buf!(*a);
                    for ((o, gv), bv) in ga.iter_mut().zip(g).zip(vb) {
                        *o += gv * bv;
                    }
                }
                if needs[b.0] {
                    let gb = buf!(*b);
                    for ((o, gv), av) in gb.iter_mut().zip(g).zip(va) {
                        *o += gv * av;
                    }
                }
            }
            Op::AddRow(a, row) => {
                if needs[a.0] {
                    add_into(buf!(*a), g);
                }
                if needs[row.0] {
                    let gr = buf!(*row);
                    let cols = gr.len();
                    for chunk in g.chunks(cols) {
                        add_into(gr, chunk);
                    }
                }
            }
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                if needs[a.0] {
                    let vb = self.val(*b);
                    kernels::matmul_bt_acc(g, vb, buf!(*a), m, k, n);
                }
                if needs[b.0] {
                    let va = self.val(*a);
                    kernels::matmul_at_acc(va, g, buf!(*b), m, k, n);
                }
            }
            Op::Transpose(a) => {
                if needs[a.0] {
                    let (r, c) = (self.shape(*a)[0], self.shape(*a)[1]);
                    // g is c×r
                    let gt = kernels::transpose(g, c, r);
                    add_into(buf!(*a), &gt);
                }
            }
            Op::Concat { parts, axis } => {
                let (rows, cols) = (node.shape[0], node.shape[1]);
                let mut offset = 0;
                for &p in parts {
                    let (pr, pc) = (self.shape(p)[0], self.shape(p)[1]);
                    if needs[p.0] {
                        let gp = grads_buf(self, p, grads);
                        if *axis == 0 {
                            add_into(gp, &g[offset * cols..(offset + pr) * cols]);
                        } else {
                            for r in 0..rows {
                                let src = &g[r * cols + offset..r * cols + offset + pc];
                                add_into(&mut gp[r * pc..(r + 1) * pc], src);
                            }
                        }
                    }
                    offset += if *axis == 0 { pr } else { pc };
                }
            }
            Op::Slice {
                src,
                axis,
                start,
                end,
            } => {
                if needs[src.0] {
                    let (rows, cols) = (self.shape(*src)[0], self.shape(*src)[1]);
                    let gs = buf!(*src);
                    if *axis == 0 {
                        add_into(&mut gs[start * cols..end * cols], g);
                    } else {
                        let w = end - start;
                        for r in 0..rows {
                            add_into(
                                &mut gs[r * cols + start..r * cols + end],
                                &g[r * w..(r + 1) * w],
                            );
                        }
                    }
                }
            }
            Op::Softmax(a) => {
                if needs[a.0] {
                    let cols = *node.shape.last().expect("rank >= 1");
                    let ga = buf!(*a);
                    for ((go, gi), y) in ga.chunks_mut(cols).zip(g.chunks(cols)).zip(out.chunks(cols)) {
                        let dot: Real = gi.iter().zip(y).map(|(a, b)| a * b).sum();
                        for j in 0..cols {
                            go[j] += y[j] * (gi[j] - dot);
                        }
                    }
                }
            }
            Op::LogSoftmax(a) => {
                if needs[a.0] {
                    let cols = *node.shape.last().expect("rank >= 1");
                    let ga = buf!(*a);
                    for ((go, gi), y) in ga.chunks_mut(cols).zip(g.chunks(cols)).zip(out.chunks(cols)) {
                        let total: Real = gi.iter().sum();
                        for j in 0..cols {
                            go[j] += gi[j] - y[j].exp() * total;
                        }
                    }
                }
            }
            Op::Log(a) => {
                if needs[a.0] {
                    let va = self.val(*a);
                    let ga = buf!(*a);
                    for ((o, gv), x) in ga.iter_mut().zip(g).zip(va) {
                        *o += gv / x;
                    }
                }
            }
            Op::Exp(a) => {
                if needs[a.0] {
                    let ga = buf!(*a);
                    for ((o, gv), y) in ga.iter_mut().zip(g).zip(out) {
                        *o += gv * y;
                    }
                }
            }
            Op::LayerNorm { x, gamma, beta } => {
                let cols = *node.shape.last().expect("rank >= 1");
                let vx = self.val(*x);
                let vg = self.val(*gamma);
                if needs[gamma.0] || needs[beta.0] {
                    let mut dgamma = vec![0.0; cols];
                    let mut dbeta = vec![0.0; cols];
                    for (row, gi) in vx.chunks(cols).zip(g.chunks(cols)) {
                        let (mean, inv) = kernels::row_moments(row, LAYER_NORM_EPS);
                        for j in 0..cols {
                            dgamma[j] += gi[j] * (row[j] - mean) * inv;
                            dbeta[j] += gi[j];
                        }
                    }
                    if needs[gamma.0] {
                        add_into(grads_buf(self, *gamma, grads), &dgamma);
                    }
                    if needs[beta.0] {
                        add_into(grads_buf(self, *beta, grads), &dbeta);
                    }
                }
                if needs[x.0] {
                    let gx = buf!(*x);
                    let n = cols as Real;
                    for ((row, gi), go) in vx.chunks(cols).zip(g.chunks(cols)).zip(gx.chunks_mut(cols)) {
                        let (mean, inv) = kernels::row_moments(row, LAYER_NORM_EPS);
                        let mut sum_d = 0.0;
                        let mut sum_dx = 0.0;
                        for j in 0..cols {
                            let d = gi[j] * vg[j];
                            let xhat = (row[j] - mean) * inv;
                            sum_d += d;
                            sum_dx += d * xhat;
                        }
                        for j in 0..cols {
                            let d = gi[j] * vg[j];
                            let xhat = (row[j] - mean) * inv;
                            go[j] += inv * (d - sum_d / n - xhat * sum_dx / n);
                        }
                    }
                }
            }
            Op::Gelu(a) => {
                if needs[a.0] {
                    let va = self.val(*a);
                    let ga = buf!(*a);
                    for ((o, gv), &x) in ga.iter_mut().zip(g).zip(va) {
                        *o += gv * kernels::gelu_grad(x);
                    }
                }
            }
            Op::Tanh(a) => {
                if needs[a.0] {
                    let ga = buf!(*a);
                    for ((o, gv), y) in ga.iter_mut().zip(g).zip(out) {
                        *o += gv * (1.0 - y * y);
                    }
                }
            }
            Op::Dropout { src, scaled_mask } => {
                if needs[src.0] {
                    let gs = buf!(*src);
                    for ((o, gv), m) in gs.iter_mut().zip(g).zip(scaled_mask) {
                        *o += gv * m;
                    }
                }
            }
            Op::Scale(a, c) => {
                if needs[a.0] {
                    let ga = buf!(*a);
                    for (o, gv) in ga.iter_mut().zip(g) {
                        *o += gv * c;
                    }
                }
            }
            Op::Sum(a) => {
                if needs[a.0] {
                    let ga = buf!(*a);
                    for o in ga.iter_mut() {
                        *o += g[0];
                    }
                }
            }
            Op::Mean(a) => {
                if needs[a.0] {
                    let ga = buf!(*a);
                    let share = g[0] / ga.len() as Real;
                    for o in ga.iter_mut() {
                        *o += share;
                    }
                }
            }
            Op::L2Norm(a) => {
                if needs[a.0] && out[0] > 0.0 {
                    let va = self.val(*a);
                    let ga = buf!(*a);
                    for (o, x) in ga.iter_mut().zip(va) {
                        *o += g[0] * x / out[0];
                    }
                }
            }
            Op::Gather { table, ids } => {
                if needs[table.0] {
                    let cols = node.shape[1];
                    let gt = buf!(*table);
                    for (r, &id) in ids.iter().enumerate() {
                        add_into(&mut gt[id * cols..(id + 1) * cols], &g[r * cols..(r + 1) * cols]);
                    }
                }
            }
        }
    }

    /// Overwrites a leaf value and re-evaluates the graph (used by finite differences).
    pub(crate) fn set_leaf_value(&mut self, leaf: NodeId, values: Vec<Real>) -> Result<()> {
        let node = &mut self.nodes[leaf.0];
        if !matches!(node.op, Op::Leaf) {
            return Err(Error::Contract("only leaves can be overwritten".into()));
        }
        if node.value.as_ref().map(Vec::len) != Some(values.len()) {
            return Err(Error::Dimension {
                op: "set_leaf_value",
                lhs: node.shape.clone(),
                rhs: vec![values.len()],
            });
        }
        node.value = Some(values);
        Ok(())
    }

    pub(crate) fn is_leaf(&self, id: NodeId) -> bool {
        matches!(self.nodes[id.0].op, Op::Leaf)
    }
}

fn grads_buf<'g>(graph: &Graph, p: NodeId, grads: &'g mut [Option<Vec<Real>>]) -> &'g mut Vec<Real> {
    let len = graph.nodes[p.0].shape.iter().product();
    grads[p.0].get_or_insert_with(|| vec![0.0; len])
}

fn zip_map(a: &[Real], b: &[Real], f: impl Fn(Real, Real) -> Real) -> Vec<Real> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn add_into(dst: &mut [Real], src: &[Real]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
