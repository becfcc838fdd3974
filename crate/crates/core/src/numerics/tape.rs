//! Define-by-run reverse-mode autodiff tape.
//!
//! Every forward op records one node; `backward` replays the records in
//! reverse, visiting each node exactly once. The tape is rebuilt per forward
//! pass and belongs to one logical thread; distinct tapes on distinct
//! threads share nothing mutable.

use std::rc::Rc;

use super::kernels;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a recorded tensor.
pub type NodeId = usize;

/// Softmax temperature: a fixed constant or a learnable 1x1 node.
#[derive(Debug, Clone, Copy)]
pub enum TempSpec {
    Const(f64),
    Node(NodeId),
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Matmul { a: NodeId, b: NodeId },
    Transpose { a: NodeId },
    Add { a: NodeId, b: NodeId },
    /// a[r,c] + row vector b[1,c] broadcast over rows.
    AddRowVec { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Scale { a: NodeId, c: f64 },
    /// True division by a constant (not multiplication by a reciprocal), so
    /// x / x is exactly 1.
    DivConst { a: NodeId, c: f64 },
    /// Elementwise product with a constant (no gradient into the constant).
    MulConst { a: NodeId, c: Rc<Vec<f64>> },
    Sigmoid { a: NodeId },
    Silu { a: NodeId },
    Relu { a: NodeId },
    Softplus { a: NodeId },
    /// Row softmax of z / tau with an optional keep-mask.
    SoftmaxRows { z: NodeId, temp: TempSpec, mask: Option<Rc<Vec<bool>>> },
    RmsNorm { a: NodeId, eps: f64 },
    /// out.data[p] = table.data[idx[p]]; usize::MAX means "emit 0.0".
    Gather { table: NodeId, idx: Rc<Vec<usize>> },
    Concat { parts: Vec<NodeId>, axis: usize },
    Slice { a: NodeId, axis: usize, start: usize, len: usize },
    SumAll { a: NodeId },
    MeanAll { a: NodeId },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recording tape. Gradients are zero-initialized at the start of every
/// backward pass and live alongside the nodes until the next one.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    /// Multiply-add count across all matmuls, for FLOPs cross-checking.
    mac_count: u64,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Multiply-adds performed by matmuls recorded so far.
    pub fn mac_count(&self) -> u64 {
        self.mac_count
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id].value
    }

    /// Gradient of the last backward pass w.r.t. node `id`, if it received one.
    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.grads.get(id).and_then(|g| g.as_deref())
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node { value, op, requires_grad });
        self.nodes.len() - 1
    }

    fn shape_err(&self, op: &'static str, a: NodeId, b: NodeId) -> Error {
        Error::Shape {
            op,
            lhs: self.nodes[a].value.shape().to_vec(),
            rhs: self.nodes[b].value.shape().to_vec(),
        }
    }

    // ── Forward ops ─────────────────────────────────────────────────────

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> NodeId {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.leaf(value, false)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (&self.nodes[a].value, &self.nodes[b].value);
        if va.shape().len() != 2 || vb.shape().len() != 2 || va.cols() != vb.rows() {
            return Err(self.shape_err("matmul", a, b));
        }
        let (m, k, n) = (va.rows(), va.cols(), vb.cols());
        let mut out = vec![0.0; m * n];
        kernels::matmul(va.data(), vb.data(), m, k, n, &mut out);
        self.mac_count += (m * k * n) as u64;
        let rg = self.nodes[a].requires_grad || self.nodes[b].requires_grad;
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::Matmul { a, b }, rg))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let va = &self.nodes[a].value;
        if va.shape().len() != 2 {
            return Err(Error::Contract(format!(
                "transpose expects a matrix, got shape {:?}",
                va.shape()
            )));
        }
        let (r, c) = (va.rows(), va.cols());
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = va.at(i, j);
            }
        }
        let rg = self.nodes[a].requires_grad;
        Ok(self.push(Tensor::matrix(c, r, out)?, Op::Transpose { a }, rg))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.nodes[a].value.shape() != self.nodes[b].value.shape() {
            return Err(self.shape_err("add", a, b));
        }
        let data: Vec<f64> = self.nodes[a]
            .value
            .data()
            .iter()
            .zip(self.nodes[b].value.data())
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.nodes[a].value.shape().to_vec();
        let rg = self.nodes[a].requires_grad || self.nodes[b].requires_grad;
        Ok(self.push(Tensor::new(shape, data)?, Op::Add { a, b }, rg))
    }

    pub fn add_row_vec(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (&self.nodes[a].value, &self.nodes[b].value);
        if vb.rows() != 1 || vb.cols() != va.cols() {
            return Err(self.shape_err("add_row_vec", a, b));
        }
        let (r, c) = (va.rows(), va.cols());
        let mut data = va.data().to_vec();
        for i in 0..r {
            for j in 0..c {
                data[i * c + j] += vb.data()[j];
            }
        }
        let rg = self.nodes[a].requires_grad || self.nodes[b].requires_grad;
        Ok(self.push(Tensor::matrix(r, c, data)?, Op::AddRowVec { a, b }, rg))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.nodes[a].value.shape() != self.nodes[b].value.shape() {
            return Err(self.shape_err("mul", a, b));
        }
        let data: Vec<f64> = self.nodes[a]
            .value
            .data()
            .iter()
            .zip(self.nodes[b].value.data())
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.nodes[a].value.shape().to_vec();
        let rg = self.nodes[a].requires_grad || self.nodes[b].requires_grad;
        Ok(self.push(Tensor::new(shape, data)?, Op::Mul { a, b }, rg))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let data: Vec<f64> = self.nodes[a].value.data().iter().map(|x| x * c).collect();
        let shape = self.nodes[a].value.shape().to_vec();
        let rg = self.nodes[a].requires_grad;
        let value = Tensor::new(shape, data).expect("same shape");
        self.push(value, Op::Scale { a, c }, rg)
    }

    pub fn div_const(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        if c == 0.0 || !c.is_finite() {
            return Err(Error::Domain(format!("division by {c}")));
        }
        let data: Vec<f64> = self.nodes[a].value.data().iter().map(|x| x / c).collect();
        let shape = self.nodes[a].value.shape().to_vec();
        let rg = self.nodes[a].requires_grad;
        Ok(self.push(Tensor::new(shape, data)?, Op::DivConst { a, c }, rg))
    }

    pub fn mul_const(&mut self, a: NodeId, c: Rc<Vec<f64>>) -> Result<NodeId> {
        if self.nodes[a].value.numel() != c.len() {
            return Err(Error::Contract(format!(
                "mul_const: constant has {} elements, tensor has {}",
                c.len(),
                self.nodes[a].value.numel()
            )));
        }
        let data: Vec<f64> = self.nodes[a]
            .value
            .data()
            .iter()
            .zip(c.iter())
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.nodes[a].value.shape().to_vec();
        let rg = self.nodes[a].requires_grad;
        Ok(self.push(Tensor::new(shape, data)?, Op::MulConst { a, c }, rg))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.unary(a, kernels::sigmoid, Op::Sigmoid { a })
    }

    pub fn silu(&mut self, a: NodeId) -> NodeId {
        self.unary(a, kernels::silu, Op::Silu { a })
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.unary(a, |x| x.max(0.0), Op::Relu { a })
    }

    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        self.unary(a, kernels::softplus, Op::Softplus { a })
    }

    fn unary(&mut self, a: NodeId, f: impl Fn(f64) -> f64, op: Op) -> NodeId {
        let data: Vec<f64> = self.nodes[a].value.data().iter().map(|&x| f(x)).collect();
        let shape = self.nodes[a].value.shape().to_vec();
        let rg = self.nodes[a].requires_grad;
        self.push(Tensor::new(shape, data).expect("same shape"), op, rg)
    }

    /// Row softmax of `z / temperature`. A constant temperature must be
    /// positive and finite; a node temperature must be a positive 1x1 value.
    pub fn softmax_rows(&mut self, z: NodeId, temp: TempSpec) -> Result<NodeId> {
        self.softmax_rows_masked(z, temp, None)
    }

    pub fn softmax_rows_masked(
        &mut self,
        z: NodeId,
        temp: TempSpec,
        mask: Option<Rc<Vec<bool>>>,
    ) -> Result<NodeId> {
        let tau = match temp {
            TempSpec::Const(t) => {
                if !t.is_finite() || t <= 0.0 {
                    return Err(Error::Domain(format!(
                        "softmax temperature must be positive and finite, got {t}"
                    )));
                }
                t
            }
            TempSpec::Node(id) => {
                let v = &self.nodes[id].value;
                if v.numel() != 1 {
                    return Err(Error::Contract(format!(
                        "temperature node must be a scalar, got shape {:?}",
                        v.shape()
                    )));
                }
                let t = v.data()[0];
                if !t.is_finite() || t <= 0.0 {
                    return Err(Error::Numeric {
                        context: format!("softmax temperature evaluated to {t}"),
                    });
                }
                t
            }
        };
        let vz = &self.nodes[z].value;
        if vz.shape().len() != 2 {
            return Err(Error::Contract(format!(
                "softmax_rows expects a matrix, got shape {:?}",
                vz.shape()
            )));
        }
        let (r, c) = (vz.rows(), vz.cols());
        if let Some(m) = &mask {
            if m.len() != r * c {
                return Err(Error::Contract(format!(
                    "softmax mask has {} entries for a {r}x{c} matrix",
                    m.len()
                )));
            }
        }
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let zrow = &vz.data()[i * c..(i + 1) * c];
            let mrow = mask.as_ref().map(|m| &m[i * c..(i + 1) * c]);
            kernels::softmax_row_masked(zrow, mrow, tau, &mut out[i * c..(i + 1) * c]);
        }
        let mut rg = self.nodes[z].requires_grad;
        if let TempSpec::Node(id) = temp {
            rg |= self.nodes[id].requires_grad;
        }
        Ok(self.push(Tensor::matrix(r, c, out)?, Op::SoftmaxRows { z, temp, mask }, rg))
    }

    pub fn rmsnorm(&mut self, a: NodeId, eps: f64) -> Result<NodeId> {
        let va = &self.nodes[a].value;
        if va.shape().len() != 2 {
            return Err(Error::Contract(format!(
                "rmsnorm expects a matrix, got shape {:?}",
                va.shape()
            )));
        }
        let (r, c) = (va.rows(), va.cols());
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            kernels::rmsnorm_row(&va.data()[i * c..(i + 1) * c], eps, &mut out[i * c..(i + 1) * c]);
        }
        let rg = self.nodes[a].requires_grad;
        Ok(self.push(Tensor::matrix(r, c, out)?, Op::RmsNorm { a, eps }, rg))
    }

    /// Flat gather: element p of the output reads `table.data[idx[p]]`.
    /// An index of usize::MAX emits 0.0 and routes no gradient.
    pub fn gather(&mut self, table: NodeId, idx: Rc<Vec<usize>>, shape: Vec<usize>) -> Result<NodeId> {
        let numel: usize = shape.iter().product();
        if numel != idx.len() {
            return Err(Error::Contract(format!(
                "gather: {} indices for output shape {:?}",
                idx.len(),
                shape
            )));
        }
        let tdata = self.nodes[table].value.data();
        let mut out = vec![0.0; numel];
        for (o, &ix) in out.iter_mut().zip(idx.iter()) {
            if ix != usize::MAX {
                debug_assert!(ix < tdata.len());
                *o = tdata[ix];
            }
        }
        let rg = self.nodes[table].requires_grad;
        Ok(self.push(Tensor::new(shape, out)?, Op::Gather { table, idx }, rg))
    }

    /// Concatenate matrices along axis 0 (stack rows) or 1 (widen columns).
    pub fn concat(&mut self, parts: &[NodeId], axis: usize) -> Result<NodeId> {
        if parts.is_empty() || axis > 1 {
            return Err(Error::Contract(format!(
                "concat needs parts and axis in {{0,1}}, got {} parts, axis {axis}",
                parts.len()
            )));
        }
        let first = self.nodes[parts[0]].value.shape().to_vec();
        let fixed = 1 - axis;
        for &p in parts {
            let s = self.nodes[p].value.shape();
            if s.len() != 2 || s[fixed] != first[fixed] {
                return Err(self.shape_err("concat", parts[0], p));
            }
        }
        let (r, c);
        let mut out;
        if axis == 0 {
            r = parts.iter().map(|&p| self.nodes[p].value.rows()).sum();
            c = first[1];
            out = Vec::with_capacity(r * c);
            for &p in parts {
                out.extend_from_slice(self.nodes[p].value.data());
            }
        } else {
            r = first[0];
            c = parts.iter().map(|&p| self.nodes[p].value.cols()).sum();
            out = vec![0.0; r * c];
            let mut col0 = 0;
            for &p in parts {
                let v = &self.nodes[p].value;
                let pc = v.cols();
                for i in 0..r {
                    out[i * c + col0..i * c + col0 + pc]
                        .copy_from_slice(&v.data()[i * pc..(i + 1) * pc]);
                }
                col0 += pc;
            }
        }
        let rg = parts.iter().any(|&p| self.nodes[p].requires_grad);
        Ok(self.push(
            Tensor::matrix(r, c, out)?,
            Op::Concat { parts: parts.to_vec(), axis },
            rg,
        ))
    }

    /// Contiguous slice of rows (axis 0) or columns (axis 1).
    pub fn slice(&mut self, a: NodeId, axis: usize, start: usize, len: usize) -> Result<NodeId> {
        let va = &self.nodes[a].value;
        if va.shape().len() != 2 || axis > 1 || start + len > va.shape()[axis] {
            return Err(Error::Contract(format!(
                "slice [{start}, {start}+{len}) on axis {axis} of shape {:?}",
                va.shape()
            )));
        }
        let (r, c) = (va.rows(), va.cols());
        let out = if axis == 0 {
            va.data()[start * c..(start + len) * c].to_vec()
        } else {
            let mut o = Vec::with_capacity(r * len);
            for i in 0..r {
                o.extend_from_slice(&va.data()[i * c + start..i * c + start + len]);
            }
            o
        };
        let shape = if axis == 0 { vec![len, c] } else { vec![r, len] };
        let rg = self.nodes[a].requires_grad;
        Ok(self.push(Tensor::new(shape, out)?, Op::Slice { a, axis, start, len }, rg))
    }

    /// Reshape without moving data. The element count must be unchanged.
    pub fn reshape(&mut self, a: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let numel: usize = shape.iter().product();
        if numel != self.nodes[a].value.numel() {
            return Err(Error::Contract(format!(
                "reshape {:?} -> {:?} changes element count",
                self.nodes[a].value.shape(),
                shape
            )));
        }
        // A slice covering everything has an identity backward, so reuse it.
        let data = self.nodes[a].value.data().to_vec();
        let rg = self.nodes[a].requires_grad;
        Ok(self.push(
            Tensor::new(shape, data)?,
            Op::Slice { a, axis: 0, start: 0, len: self.nodes[a].value.shape()[0] },
            rg,
        ))
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let s: f64 = self.nodes[a].value.data().iter().sum();
        let rg = self.nodes[a].requires_grad;
        self.push(Tensor::scalar(s), Op::SumAll { a }, rg)
    }

    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let n = self.nodes[a].value.numel() as f64;
        let s: f64 = self.nodes[a].value.data().iter().sum();
        let rg = self.nodes[a].requires_grad;
        self.push(Tensor::scalar(s / n), Op::MeanAll { a }, rg)
    }

    // ── Backward ────────────────────────────────────────────────────────

    /// Populate gradients of `loss` (a scalar node) w.r.t. every recorded
    /// node that requires gradients. Gradients are freshly zero-initialized.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.nodes[loss].value.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.nodes[loss].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss] = Some(vec![1.0]);

        for id in (0..=loss).rev() {
            if !self.nodes[id].requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.propagate(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn propagate(&self, id: NodeId, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        let needs = |i: NodeId| self.nodes[i].requires_grad;
        // Accumulate into one input's gradient buffer, allocating zeros on
        // first touch. Each arm writes a single buffer at a time.
        macro_rules! acc {
            ($i:expr, $numel:expr, |$dst:ident| $body:block) => {
                if needs($i) {
                    let $dst: &mut Vec<f64> = grads[$i].get_or_insert_with(|| vec![0.0; $numel]);
                    $body
                }
            };
        }

        match &node.op {
            Op::Leaf => {}
            Op::Matmul { a, b } => {
                let (va, vb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                let (m, k, n) = (va.rows(), va.cols(), vb.cols());
                acc!(*a, m * k, |dst| {
                    kernels::matmul_nt_acc(g, vb.data(), m, n, k, dst);
                });
                acc!(*b, k * n, |dst| {
                    kernels::matmul_tn_acc(va.data(), g, m, k, n, dst);
                });
            }
            Op::Transpose { a } => {
                let va = &self.nodes[*a].value;
                let (r, c) = (va.rows(), va.cols());
                acc!(*a, r * c, |dst| {
                    // g has shape [c, r]
                    for i in 0..r {
                        for j in 0..c {
                            dst[i * c + j] += g[j * r + i];
                        }
                    }
                });
            }
            Op::Add { a, b } => {
                let numel = node.value.numel();
                acc!(*a, numel, |dst| {
                    for (d, &gv) in dst.iter_mut().zip(g) {
                        *d += gv;
                    }
                });
                acc!(*b, numel, |dst| {
                    for (d, &gv) in dst.iter_mut().zip(g) {
                        *d += gv;
                    }
                });
            }
            Op::AddRowVec { a, b } => {
                let va = &self.nodes[*a].value;
                let (r, c) = (va.rows(), va.cols());
                acc!(*a, r * c, |dst| {
                    for (d, &gv) in dst.iter_mut().zip(g) {
                        *d += gv;
                    }
                });
                acc!(*b, c, |dst| {
                    for i in 0..r {
                        for j in 0..c {
                            dst[j] += g[i * c + j];
                        }
                    }
                });
            }
            Op::Mul { a, b } => {
                let numel = node.value.numel();
                let (va, vb) = (&self.nodes[*a].value, &self.nodes[*b].value);
                acc!(*a, numel, |dst| {
                    for i in 0..numel {
                        dst[i] += g[i] * vb.data()[i];
                    }
                });
                acc!(*b, numel, |dst| {
                    for i in 0..numel {
                        dst[i] += g[i] * va.data()[i];
                    }
                });
            }
            Op::Scale { a, c } => {
                acc!(*a, node.value.numel(), |dst| {
                    for (d, &gv) in dst.iter_mut().zip(g) {
                        *d += gv * c;
                    }
                });
            }
            Op::DivConst { a, c } => {
                acc!(*a, node.value.numel(), |dst| {
                    for (d, &gv) in dst.iter_mut().zip(g) {
                        *d += gv / c;
                    }
                });
            }
            Op::MulConst { a, c } => {
                acc!(*a, node.value.numel(), |dst| {
                    for i in 0..dst.len() {
                        dst[i] += g[i] * c[i];
                    }
                });
            }
            Op::Sigmoid { a } => {
                let y = node.value.data();
                acc!(*a, y.len(), |dst| {
                    for i in 0..dst.len() {
                        dst[i] += g[i] * y[i] * (1.0 - y[i]);
                    }
                });
            }
            Op::Silu { a } => {
                let x = self.nodes[*a].value.data();
                acc!(*a, x.len(), |dst| {
                    for i in 0..dst.len() {
                        dst[i] += g[i] * kernels::silu_grad(x[i]);
                    }
                });
            }
            Op::Relu { a } => {
                let x = self.nodes[*a].value.data();
                acc!(*a, x.len(), |dst| {
                    for i in 0..dst.len() {
                        if x[i] > 0.0 {
                            dst[i] += g[i];
                        }
                    }
                });
            }
            Op::Softplus { a } => {
                let x = self.nodes[*a].value.data();
                acc!(*a, x.len(), |dst| {
                    for i in 0..dst.len() {
                        dst[i] += g[i] * kernels::sigmoid(x[i]);
                    }
                });
            }
            Op::SoftmaxRows { z, temp, mask } => {
                let p = node.value.data();
                let vz = &self.nodes[*z].value;
                let (r, c) = (vz.rows(), vz.cols());
                let tau = match temp {
                    TempSpec::Const(t) => *t,
                    TempSpec::Node(id) => self.nodes[*id].value.data()[0],
                };
                let allowed = |i: usize, j: usize| {
                    mask.as_ref().map_or(true, |m| m[i * c + j])
                };
                // Per row: dL/du_j = p_j * (g_j - sum_k g_k p_k), u = z / tau.
                acc!(*z, r * c, |dst| {
                    for i in 0..r {
                        let mut dot = 0.0;
                        for j in 0..c {
                            dot += g[i * c + j] * p[i * c + j];
                        }
                        for j in 0..c {
                            if allowed(i, j) {
                                let du = p[i * c + j] * (g[i * c + j] - dot);
                                dst[i * c + j] += du / tau;
                            }
                        }
                    }
                });
                if let TempSpec::Node(tid) = temp {
                    acc!(*tid, 1, |dst| {
                        let mut dtau = 0.0;
                        for i in 0..r {
                            let mut dot = 0.0;
                            for j in 0..c {
                                dot += g[i * c + j] * p[i * c + j];
                            }
                            for j in 0..c {
                                if allowed(i, j) {
                                    let du = p[i * c + j] * (g[i * c + j] - dot);
                                    dtau -= du * vz.at(i, j) / (tau * tau);
                                }
                            }
                        }
                        dst[0] += dtau;
                    });
                }
            }
            Op::RmsNorm { a, eps } => {
                let va = &self.nodes[*a].value;
                let (r, c) = (va.rows(), va.cols());
                let nf = c as f64;
                acc!(*a, r * c, |dst| {
                    for i in 0..r {
                        let x = &va.data()[i * c..(i + 1) * c];
                        let grow = &g[i * c..(i + 1) * c];
                        let ms = x.iter().map(|v| v * v).sum::<f64>() / nf + eps;
                        let rms = ms.sqrt();
                        let dot: f64 = grow.iter().zip(x).map(|(gv, xv)| gv * xv).sum();
                        for j in 0..c {
                            dst[i * c + j] += grow[j] / rms - x[j] * dot / (nf * rms * ms);
                        }
                    }
                });
            }
            Op::Gather { table, idx } => {
                let numel = self.nodes[*table].value.numel();
                acc!(*table, numel, |dst| {
                    for (p, &ix) in idx.iter().enumerate() {
                        if ix != usize::MAX {
                            dst[ix] += g[p];
                        }
                    }
                });
            }
            Op::Concat { parts, axis } => {
                if *axis == 0 {
                    let mut row0 = 0;
                    let c = node.value.cols();
                    for &p in parts {
                        let pr = self.nodes[p].value.rows();
                        acc!(p, pr * c, |dst| {
                            for (d, &gv) in dst.iter_mut().zip(&g[row0 * c..(row0 + pr) * c]) {
                                *d += gv;
                            }
                        });
                        row0 += pr;
                    }
                } else {
                    let r = node.value.rows();
                    let c = node.value.cols();
                    let mut col0 = 0;
                    for &p in parts {
                        let pc = self.nodes[p].value.cols();
                        acc!(p, r * pc, |dst| {
                            for i in 0..r {
                                for j in 0..pc {
                                    dst[i * pc + j] += g[i * c + col0 + j];
                                }
                            }
                        });
                        col0 += pc;
                    }
                }
            }
            Op::Slice { a, axis, start, len } => {
                let va = &self.nodes[*a].value;
                let (r, c) = (va.rows(), va.cols());
                acc!(*a, r * c, |dst| {
                    if *axis == 0 {
                        for (d, &gv) in dst[start * c..(start + len) * c].iter_mut().zip(g) {
                            *d += gv;
                        }
                    } else {
                        for i in 0..r {
                            for j in 0..*len {
                                dst[i * c + start + j] += g[i * len + j];
                            }
                        }
                    }
                });
            }
            Op::SumAll { a } => {
                acc!(*a, self.nodes[*a].value.numel(), |dst| {
                    for d in dst.iter_mut() {
                        *d += g[0];
                    }
                });
            }
            Op::MeanAll { a } => {
                let n = self.nodes[*a].value.numel();
                acc!(*a, n, |dst| {
                    let gv = g[0] / n as f64;
                    for d in dst.iter_mut() {
                        *d += gv;
                    }
                });
            }
        }
    }
}
