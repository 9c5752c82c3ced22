use super::{matmul_nt, matmul_raw, matmul_tn, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How per-row losses are combined into a scalar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Reduction {
    #[default]
    Mean,
    Sum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    MatMul,
    Add,
    AddRow,
    Scale,
    Relu,
    MeanPool,
    L2Normalize,
    Similarity,
    SoftmaxCrossEntropy,
    SigmoidCrossEntropy,
    SumSquares,
    Sum,
}

/// One recorded operation: kind, inputs and the node it produced.
#[derive(Debug, Clone, PartialEq)]
pub struct OpRecord {
    pub kind: OpKind,
    pub inputs: Vec<NodeId>,
    pub output: NodeId,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Scale(NodeId, f64),
    Relu(NodeId),
    MeanPool {
        input: NodeId,
        group: usize,
    },
    L2Normalize {
        input: NodeId,
        eps: f64,
        norms: Vec<f64>,
    },
    Similarity(NodeId, NodeId),
    SoftmaxCrossEntropy {
        logits: NodeId,
        targets: Vec<usize>,
        reduction: Reduction,
        probs: Vec<f64>,
    },
    SigmoidCrossEntropy {
        logits: NodeId,
        targets: Vec<f64>,
        mask: Vec<f64>,
        active: f64,
    },
    SumSquares(NodeId),
    Sum(NodeId),
}

impl Op {
    fn kind(&self) -> Option<OpKind> {
        Some(match self {
            Op::Leaf => return None,
            Op::MatMul(..) => OpKind::MatMul,
            Op::Add(..) => OpKind::Add,
            Op::AddRow(..) => OpKind::AddRow,
            Op::Scale(..) => OpKind::Scale,
            Op::Relu(..) => OpKind::Relu,
            Op::MeanPool { .. } => OpKind::MeanPool,
            Op::L2Normalize { .. } => OpKind::L2Normalize,
            Op::Similarity(..) => OpKind::Similarity,
            Op::SoftmaxCrossEntropy { .. } => OpKind::SoftmaxCrossEntropy,
            Op::SigmoidCrossEntropy { .. } => OpKind::SigmoidCrossEntropy,
            Op::SumSquares(..) => OpKind::SumSquares,
            Op::Sum(..) => OpKind::Sum,
        })
    }

    fn inputs(&self) -> Vec<NodeId> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::AddRow(a, b) | Op::Similarity(a, b) => {
                vec![*a, *b]
            }
            Op::Scale(a, _) | Op::Relu(a) | Op::SumSquares(a) | Op::Sum(a) => vec![*a],
            Op::MeanPool { input, .. } | Op::L2Normalize { input, .. } => vec![*input],
            Op::SoftmaxCrossEntropy { logits, .. } | Op::SigmoidCrossEntropy { logits, .. } => {
                vec![*logits]
            }
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Single-writer recording of a computation.
///
/// Nodes are appended in evaluation order, so every input id is smaller than
/// the id of its consumer. [`Tape::backward`] walks the nodes in exact reverse
/// recording order and accumulates gradients into every node whose value
/// requires them. Constants (`requires_grad == false`) never receive
/// gradients, which is how frozen parameters are kept out of the update.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Dimension {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
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

    /// Records an input. Gradients flow to it iff `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: Tensor) -> NodeId {
        self.push(tensor, Op::Leaf)
    }

    /// Records a trainable input.
    pub fn param(&mut self, tensor: Tensor) -> NodeId {
        self.leaf(tensor.with_grad())
    }

    /// Records an input that never receives a gradient.
    pub fn constant(&mut self, mut tensor: Tensor) -> NodeId {
        tensor.set_requires_grad(false);
        tensor.zero_grad();
        self.leaf(tensor)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.nodes[id.0].value.grad()
    }

    pub fn records(&self) -> Vec<OpRecord> {
        self.nodes
            .iter()
            .enumerate()
            .filter_map(|(i, node)| {
                node.op.kind().map(|kind| OpRecord {
                    kind,
                    inputs: node.op.inputs(),
                    output: NodeId(i),
                })
            })
            .collect()
    }

    fn push(&mut self, mut value: Tensor, op: Op) -> NodeId {
        if !matches!(op, Op::Leaf) {
            let needs = op
                .inputs()
                .iter()
                .any(|id| self.nodes[id.0].value.requires_grad());
            value.set_requires_grad(needs);
        }
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = ta.dims2("matmul")?;
        let (k2, n) = tb.dims2("matmul")?;
        if k != k2 {
            return Err(shape_err("matmul", ta, tb));
        }
        let out = matmul_raw(ta.data(), tb.data(), m, k, n);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err("add", ta, tb));
        }
        let out: Vec<f64> = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let shape = ta.shape().to_vec();
        Ok(self.push(Tensor::new(shape, out)?, Op::Add(a, b)))
    }

    /// Adds a length-`d` vector to every row of an `n x d` matrix.
    pub fn add_row(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        let (ta, tb) = (self.value(a), self.value(bias));
        let (_, d) = ta.dims2("add_row")?;
        if tb.shape() != [d] {
            return Err(shape_err("add_row", ta, tb));
        }
        let out: Vec<f64> = ta
            .rows()
            .flat_map(|row| row.iter().zip(tb.data()).map(|(x, b)| x + b))
            .collect();
        let shape = ta.shape().to_vec();
        Ok(self.push(Tensor::new(shape, out)?, Op::AddRow(a, bias)))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> Result<NodeId> {
        let ta = self.value(a);
        let out: Vec<f64> = ta.data().iter().map(|x| x * factor).collect();
        let shape = ta.shape().to_vec();
        Ok(self.push(Tensor::new(shape, out)?, Op::Scale(a, factor)))
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        let ta = self.value(a);
        let out: Vec<f64> = ta.data().iter().map(|&x| x.max(0.0)).collect();
        let shape = ta.shape().to_vec();
        Ok(self.push(Tensor::new(shape, out)?, Op::Relu(a)))
    }

    /// Averages consecutive groups of `group` rows: `(n * group) x h -> n x h`.
    pub fn mean_pool(&mut self, a: NodeId, group: usize) -> Result<NodeId> {
        let ta = self.value(a);
        let (rows, h) = ta.dims2("mean_pool")?;
        if group == 0 || rows % group != 0 {
            return Err(Error::Dimension {
                op: "mean_pool",
                left: ta.shape().to_vec(),
                right: vec![group],
            });
        }
        let n = rows / group;
        let inv = 1.0 / group as f64;
        let mut out = vec![0.0; n * h];
        for (r, row) in ta.rows().enumerate() {
            let dst = &mut out[(r / group) * h..(r / group + 1) * h];
            dst.iter_mut().zip(row).for_each(|(o, x)| *o += x);
        }
        out.iter_mut().for_each(|o| *o *= inv);
        Ok(self.push(Tensor::new(vec![n, h], out)?, Op::MeanPool { input: a, group }))
    }

    /// Divides each row by `max(||row||, eps)`.
    pub fn l2_normalize_rows(&mut self, a: NodeId, eps: f64) -> Result<NodeId> {
        let ta = self.value(a);
        let (n, d) = ta.dims2("l2_normalize_rows")?;
        let mut norms = Vec::with_capacity(n);
        let mut out = Vec::with_capacity(n * d);
        for row in ta.rows() {
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            let denom = norm.max(eps);
            norms.push(norm);
            out.extend(row.iter().map(|x| x / denom));
        }
        Ok(self.push(
            Tensor::new(vec![n, d], out)?,
            Op::L2Normalize {
                input: a,
                eps,
                norms,
            },
        ))
    }

    /// `S[i][j] = a_i . b_j`.
    pub fn similarity(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (n, d) = ta.dims2("similarity")?;
        let (m, d2) = tb.dims2("similarity")?;
        if d != d2 {
            return Err(shape_err("similarity", ta, tb));
        }
        let out = matmul_nt(ta.data(), tb.data(), n, d, m);
        Ok(self.push(Tensor::new(vec![n, m], out)?, Op::Similarity(a, b)))
    }

    /// Row-wise softmax cross-entropy against integer targets, stabilized by
    /// subtracting each row's maximum.
    pub fn softmax_cross_entropy_rows(
        &mut self,
        logits: NodeId,
        targets: &[usize],
        reduction: Reduction,
    ) -> Result<NodeId> {
        let tl = self.value(logits);
        let (n, c) = tl.dims2("softmax_cross_entropy_rows")?;
        if targets.len() != n {
            return Err(Error::Dimension {
                op: "softmax_cross_entropy_rows",
                left: tl.shape().to_vec(),
                right: vec![targets.len()],
            });
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= c) {
            return Err(Error::IndexOutOfRange {
                op: "softmax_cross_entropy_rows",
                index: bad,
                size: c,
            });
        }
        let mut probs = Vec::with_capacity(n * c);
        let mut total = 0.0;
        for (row, &t) in tl.rows().zip(targets) {
            // log Z = max + log1p(sum of the non-max terms), which keeps tiny
            // losses accurate when the target dominates.
            let (arg, max) = row
                .iter()
                .copied()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (j, x)| if x > acc.1 { (j, x) } else { acc });
            let rest: f64 = row
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != arg)
                .map(|(_, x)| (x - max).exp())
                .sum();
            total += (max - row[t]) + rest.ln_1p();
            let sum_exp = 1.0 + rest;
            probs.extend(row.iter().map(|x| (x - max).exp() / sum_exp));
        }
        let value = match reduction {
            Reduction::Mean => total / n as f64,
            Reduction::Sum => total,
        };
        Ok(self.push(
            Tensor::scalar(value),
            Op::SoftmaxCrossEntropy {
                logits,
                targets: targets.to_vec(),
                reduction,
                probs,
            },
        ))
    }

    /// Mean sigmoid cross-entropy over the `n x L` entries whose column is
    /// active in `mask` (1 = active, 0 = excluded).
    pub fn sigmoid_cross_entropy(
        &mut self,
        logits: NodeId,
        targets: &Tensor,
        mask: &[f64],
    ) -> Result<NodeId> {
        let tl = self.value(logits);
        let (n, l) = tl.dims2("sigmoid_cross_entropy")?;
        if targets.shape() != tl.shape() || mask.len() != l {
            return Err(shape_err("sigmoid_cross_entropy", tl, targets));
        }
        let active = n as f64 * mask.iter().sum::<f64>();
        let mut total = 0.0;
        for (i, (z, y)) in tl.data().iter().zip(targets.data()).enumerate() {
            let w = mask[i % l];
            if w != 0.0 {
                // log(1 + e^z) - y z, written to stay finite for large |z|.
                total += w * (z.max(0.0) - z * y + (-z.abs()).exp().ln_1p());
            }
        }
        let value = if active > 0.0 { total / active } else { 0.0 };
        Ok(self.push(
            Tensor::scalar(value),
            Op::SigmoidCrossEntropy {
                logits,
                targets: targets.data().to_vec(),
                mask: mask.to_vec(),
                active,
            },
        ))
    }

    pub fn sum_squares(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).data().iter().map(|x| x * x).sum();
        Ok(self.push(Tensor::scalar(v), Op::SumSquares(a)))
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).data().iter().sum();
        Ok(self.push(Tensor::scalar(v), Op::Sum(a)))
    }

    /// Reverse pass from a scalar node. Gradients are accumulated into every
    /// node that requires them; read them back with [`Tape::grad`].
    pub fn backward(&mut self, root: NodeId) -> Result<()> {
        let root_value = &self.nodes[root.0].value;
        if !root_value.is_scalar() {
            return Err(Error::NonScalar(root_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![1.0]);

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if !node.value.requires_grad() {
                continue;
            }
            for (input, delta) in self.input_grads(idx, &g) {
                if !self.nodes[input.0].value.requires_grad() {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.iter_mut().zip(&delta).for_each(|(a, d)| *a += d),
                    slot => *slot = Some(delta),
                }
            }
            self.nodes[idx].value.accumulate_grad(&g);
        }
        Ok(())
    }

    fn input_grads(&self, idx: usize, g: &[f64]) -> Vec<(NodeId, Vec<f64>)> {
        let node = &self.nodes[idx];
        let val = |id: NodeId| &self.nodes[id.0].value;
        let wants = |id: NodeId| self.nodes[id.0].value.requires_grad();
        match &node.op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (m, k) = (ta.shape()[0], ta.shape()[1]);
                let n = tb.shape()[1];
                let mut out = Vec::new();
                if wants(*a) {
                    out.push((*a, matmul_nt(g, tb.data(), m, n, k)));
                }
                if wants(*b) {
                    out.push((*b, matmul_tn(ta.data(), g, m, k, n)));
                }
                out
            }
            Op::Add(a, b) => vec![(*a, g.to_vec()), (*b, g.to_vec())],
            Op::AddRow(a, bias) => {
                let d = val(*bias).len();
                let mut db = vec![0.0; d];
                for row in g.chunks(d) {
                    db.iter_mut().zip(row).for_each(|(acc, x)| *acc += x);
                }
                vec![(*a, g.to_vec()), (*bias, db)]
            }
            Op::Scale(a, f) => vec![(*a, g.iter().map(|x| x * f).collect())],
            Op::Relu(a) => {
                let x = val(*a).data();
                let dx = g
                    .iter()
                    .zip(x)
                    .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                    .collect();
                vec![(*a, dx)]
            }
            Op::MeanPool { input, group } => {
                let h = node.value.shape()[1];
                let inv = 1.0 / *group as f64;
                let rows = val(*input).shape()[0];
                let mut dx = Vec::with_capacity(rows * h);
                for r in 0..rows {
                    let src = &g[(r / group) * h..(r / group + 1) * h];
                    dx.extend(src.iter().map(|x| x * inv));
                }
                vec![(*input, dx)]
            }
            Op::L2Normalize { input, eps, norms } => {
                let y = &node.value;
                let d = y.shape()[1];
                let mut dx = Vec::with_capacity(y.len());
                for ((yr, gr), &norm) in y.rows().zip(g.chunks(d)).zip(norms) {
                    if norm > *eps {
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        dx.extend(yr.iter().zip(gr).map(|(y, g)| (g - y * dot) / norm));
                    } else {
                        dx.extend(gr.iter().map(|g| g / eps));
                    }
                }
                vec![(*input, dx)]
            }
            Op::Similarity(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (n, d) = (ta.shape()[0], ta.shape()[1]);
                let m = tb.shape()[0];
                let mut out = Vec::new();
                if wants(*a) {
                    out.push((*a, matmul_raw(g, tb.data(), n, m, d)));
                }
                if wants(*b) {
                    out.push((*b, matmul_tn(g, ta.data(), n, m, d)));
                }
                out
            }
            Op::SoftmaxCrossEntropy {
                logits,
                targets,
                reduction,
                probs,
            } => {
                let c = val(*logits).shape()[1];
                let scale = match reduction {
                    Reduction::Mean => g[0] / targets.len() as f64,
                    Reduction::Sum => g[0],
                };
                let mut dx: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                for (i, &t) in targets.iter().enumerate() {
                    dx[i * c + t] -= scale;
                }
                vec![(*logits, dx)]
            }
            Op::SigmoidCrossEntropy {
                logits,
                targets,
                mask,
                active,
            } => {
                let z = val(*logits).data();
                let l = mask.len();
                let scale = if *active > 0.0 { g[0] / active } else { 0.0 };
                let dx = z
                    .iter()
                    .zip(targets)
                    .enumerate()
                    .map(|(i, (z, y))| mask[i % l] * scale * (sigmoid(*z) - y))
                    .collect();
                vec![(*logits, dx)]
            }
            Op::SumSquares(a) => vec![(*a, val(*a).data().iter().map(|x| 2.0 * x * g[0]).collect())],
            Op::Sum(a) => vec![(*a, vec![g[0]; val(*a).len()])],
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}
