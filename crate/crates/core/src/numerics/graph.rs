//! Reverse-mode differentiation over a flat op tape.
//!
//! A [`Graph`] records every forward op together with its inputs; `backward`
//! walks the tape in reverse accumulating vector-Jacobian products. One graph
//! is single-writer; independent graphs can be built and differentiated
//! concurrently.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::numerics::tensor::{DType, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub usize);

/// Op kinds addressable through the generic `forward_op` dispatcher.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    MatMul,
    Add,
    Mul,
    Softmax,
    LogSoftmax,
    Gelu,
    Mean,
    Sum,
    Transpose,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul,
    Transpose,
    Add,
    Mul,
    Scale(f64),
    EmbeddingGather(Vec<usize>),
    Softmax,
    LogSoftmax,
    LayerNorm { eps: f64 },
    Gelu,
    Reshape,
    Concat,
    Mean,
    Sum,
    CrossEntropy(Vec<usize>),
    Pick(Vec<usize>),
    SliceRows { start: usize },
}

#[derive(Debug)]
struct Node {
    op: Op,
    inputs: Vec<NodeId>,
    value: Tensor,
    name: Option<String>,
}

#[derive(Debug)]
pub struct Graph {
    dtype: DType,
    nodes: Vec<Node>,
}

/// Per-node gradients produced by `backward`.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(String, NodeId)>,
}

impl Gradients {
    pub fn wrt(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    /// Gradients of every named parameter leaf, keyed by name.
    pub fn by_name(&self) -> HashMap<String, Tensor> {
        self.params
            .iter()
            .filter_map(|(name, id)| self.grads[id.0].clone().map(|g| (name.clone(), g)))
            .collect()
    }
}

fn shape_err(op: &str, detail: String) -> Error {
    Error::ShapeMismatch { op: op.into(), detail }
}

fn softmax_rows(values: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; values.len()];
    for r in 0..rows {
        let row = &values[r * cols..(r + 1) * cols];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (o, v) in out[r * cols..(r + 1) * cols].iter_mut().zip(row) {
            *o = (v - max).exp();
            sum += *o;
        }
        for o in &mut out[r * cols..(r + 1) * cols] {
            *o /= sum;
        }
    }
    out
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

impl Graph {
    pub fn new(dtype: DType) -> Self {
        Graph { dtype, nodes: Vec::new() }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
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

    pub fn leaf(&mut self, t: Tensor) -> NodeId {
        self.push(Op::Leaf, vec![], t, None)
    }

    pub fn param(&mut self, name: &str, t: Tensor) -> NodeId {
        self.push(Op::Leaf, vec![], t, Some(name.to_string()))
    }

    fn push(&mut self, op: Op, inputs: Vec<NodeId>, mut value: Tensor, name: Option<String>) -> NodeId {
        value.round_to(self.dtype);
        debug_assert!(value.is_finite(), "non-finite value out of {:?}", op);
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op, inputs, value, name });
        id
    }

    /// Dispatcher for ops that take only node inputs.
    pub fn forward_op(&mut self, kind: OpKind, inputs: &[NodeId]) -> Result<NodeId> {
        let need = |n: usize| -> Result<()> {
            if inputs.len() != n {
                Err(Error::InvalidArgument(format!("{kind:?} expects {n} inputs, got {}", inputs.len())))
            } else {
                Ok(())
            }
        };
        match kind {
            OpKind::MatMul => {
                need(2)?;
                self.matmul(inputs[0], inputs[1])
            }
            OpKind::Add => {
                need(2)?;
                self.add(inputs[0], inputs[1])
            }
            OpKind::Mul => {
                need(2)?;
                self.mul(inputs[0], inputs[1])
            }
            OpKind::Softmax => {
                need(1)?;
                self.softmax(inputs[0])
            }
            OpKind::LogSoftmax => {
                need(1)?;
                self.log_softmax(inputs[0])
            }
            OpKind::Gelu => {
                need(1)?;
                self.gelu(inputs[0])
            }
            OpKind::Mean => {
                need(1)?;
                self.mean(inputs[0])
            }
            OpKind::Sum => {
                need(1)?;
                self.sum(inputs[0])
            }
            OpKind::Transpose => {
                need(1)?;
                self.transpose(inputs[0])
            }
        }
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.value(a).shape().to_vec(), self.value(b).shape().to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err("matmul", format!("{sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        let t = Tensor::new(vec![m, n], out).unwrap();
        Ok(self.push(Op::MatMul, vec![a, b], t, None))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.value(a).shape().to_vec();
        if s.len() != 2 {
            return Err(shape_err("transpose", format!("{s:?}")));
        }
        let (r, c) = (s[0], s[1]);
        let src = self.value(a).data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        let t = Tensor::new(vec![c, r], out).unwrap();
        Ok(self.push(Op::Transpose, vec![a], t, None))
    }

    /// Elementwise add; `b` may also be a per-column bias or a scalar.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.value(a).shape().to_vec(), self.value(b).shape().to_vec());
        let va = self.value(a).data();
        let vb = self.value(b).data();
        let out: Vec<f64> = if sa == sb {
            va.iter().zip(vb).map(|(x, y)| x + y).collect()
        } else if self.value(b).is_scalar() {
            va.iter().map(|x| x + vb[0]).collect()
        } else if sa.len() == 2 && sb == vec![sa[1]] {
            va.iter().enumerate().map(|(i, x)| x + vb[i % sa[1]]).collect()
        } else {
            return Err(shape_err("add", format!("{sa:?} + {sb:?}")));
        };
        let t = Tensor::new(sa, out).unwrap();
        Ok(self.push(Op::Add, vec![a, b], t, None))
    }

    /// Elementwise multiply; `b` may be a scalar.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.value(a).shape().to_vec(), self.value(b).shape().to_vec());
        let va = self.value(a).data();
        let vb = self.value(b).data();
        let out: Vec<f64> = if sa == sb {
            va.iter().zip(vb).map(|(x, y)| x * y).collect()
        } else if self.value(b).is_scalar() {
            va.iter().map(|x| x * vb[0]).collect()
        } else {
            return Err(shape_err("mul", format!("{sa:?} * {sb:?}")));
        };
        let t = Tensor::new(sa, out).unwrap();
        Ok(self.push(Op::Mul, vec![a, b], t, None))
    }

    /// Multiply by a compile-time constant (no gradient through `c`).
    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.value(a);
        let t = Tensor::new(v.shape().to_vec(), v.data().iter().map(|x| x * c).collect()).unwrap();
        self.push(Op::Scale(c), vec![a], t, None)
    }

    /// Gather rows of an embedding table: `table[V, d]` indexed by `ids`.
    pub fn embedding_gather(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        let s = self.value(table).shape().to_vec();
        if s.len() != 2 {
            return Err(shape_err("embedding-gather", format!("table {s:?}")));
        }
        let (v, d) = (s[0], s[1]);
        if let Some(bad) = ids.iter().find(|&&i| i >= v) {
            return Err(Error::InvalidArgument(format!("embedding id {bad} out of range (table rows {v})")));
        }
        let data = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(&data[i * d..(i + 1) * d]);
        }
        let t = Tensor::new(vec![ids.len(), d], out).unwrap();
        Ok(self.push(Op::EmbeddingGather(ids.to_vec()), vec![table], t, None))
    }

    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a);
        let (r, c) = (v.rows(), v.cols());
        let out = softmax_rows(v.data(), r, c);
        let t = Tensor::new(v.shape().to_vec(), out).unwrap();
        Ok(self.push(Op::Softmax, vec![a], t, None))
    }

    pub fn log_softmax(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a);
        let (r, c) = (v.rows(), v.cols());
        let mut out = vec![0.0; v.numel()];
        for i in 0..r {
            let row = &v.data()[i * c..(i + 1) * c];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            for (o, x) in out[i * c..(i + 1) * c].iter_mut().zip(row) {
                *o = x - lse;
            }
        }
        let t = Tensor::new(v.shape().to_vec(), out).unwrap();
        Ok(self.push(Op::LogSoftmax, vec![a], t, None))
    }

    /// Row-wise layer norm with learned gain and bias over the last axis.
    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId, eps: f64) -> Result<NodeId> {
        let v = self.value(x);
        let (r, c) = (v.rows(), v.cols());
        let sg = self.value(gain).shape().to_vec();
        let sb = self.value(bias).shape().to_vec();
        if sg != vec![c] || sb != vec![c] {
            return Err(shape_err("layer-norm", format!("x cols {c}, gain {sg:?}, bias {sb:?}")));
        }
        let g = self.value(gain).data().to_vec();
        let b = self.value(bias).data().to_vec();
        let mut out = vec![0.0; v.numel()];
        for i in 0..r {
            let row = &v.data()[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for j in 0..c {
                out[i * c + j] = g[j] * (row[j] - mean) * inv + b[j];
            }
        }
        let t = Tensor::new(v.shape().to_vec(), out).unwrap();
        Ok(self.push(Op::LayerNorm { eps }, vec![x, gain, bias], t, None))
    }

    pub fn gelu(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a);
        let t = Tensor::new(v.shape().to_vec(), v.data().iter().map(|&x| gelu(x)).collect()).unwrap();
        Ok(self.push(Op::Gelu, vec![a], t, None))
    }

    pub fn reshape(&mut self, a: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let v = self.value(a);
        let numel: usize = shape.iter().product();
        if numel != v.numel() {
            return Err(shape_err("reshape", format!("{:?} -> {shape:?}", v.shape())));
        }
        let t = Tensor::new(shape, v.data().to_vec()).unwrap();
        Ok(self.push(Op::Reshape, vec![a], t, None))
    }

    /// Concatenate two rank-2 tensors along axis 0.
    pub fn concat(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.value(a).shape().to_vec(), self.value(b).shape().to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
            return Err(shape_err("concat", format!("{sa:?} ++ {sb:?}")));
        }
        let mut out = self.value(a).data().to_vec();
        out.extend_from_slice(self.value(b).data());
        let t = Tensor::new(vec![sa[0] + sb[0], sa[1]], out).unwrap();
        Ok(self.push(Op::Concat, vec![a, b], t, None))
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a);
        if v.numel() == 0 {
            return Err(Error::InvalidArgument("mean over empty tensor".into()));
        }
        let m = v.data().iter().sum::<f64>() / v.numel() as f64;
        Ok(self.push(Op::Mean, vec![a], Tensor::scalar(m), None))
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.value(a).data().iter().sum::<f64>();
        Ok(self.push(Op::Sum, vec![a], Tensor::scalar(s), None))
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax of `logits`.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: &[usize]) -> Result<NodeId> {
        let v = self.value(logits);
        let (r, c) = (v.rows(), v.cols());
        if v.shape().len() != 2 || targets.len() != r {
            return Err(shape_err(
                "cross-entropy",
                format!("logits {:?}, {} targets", v.shape(), targets.len()),
            ));
        }
        if let Some(bad) = targets.iter().find(|&&t| t >= c) {
            return Err(Error::InvalidArgument(format!("target {bad} out of range (classes {c})")));
        }
        let mut total = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            let row = &v.data()[i * c..(i + 1) * c];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            total += lse - row[t];
        }
        let t = Tensor::scalar(total / r as f64);
        Ok(self.push(Op::CrossEntropy(targets.to_vec()), vec![logits], t, None))
    }

    /// Select one entry per row: `out[i] = a[i, indices[i]]`.
    pub fn pick(&mut self, a: NodeId, indices: &[usize]) -> Result<NodeId> {
        let v = self.value(a);
        let (r, c) = (v.rows(), v.cols());
        if v.shape().len() != 2 || indices.len() != r {
            return Err(shape_err("pick", format!("input {:?}, {} indices", v.shape(), indices.len())));
        }
        if let Some(bad) = indices.iter().find(|&&i| i >= c) {
            return Err(Error::InvalidArgument(format!("pick index {bad} out of range (cols {c})")));
        }
        let out: Vec<f64> = indices.iter().enumerate().map(|(i, &j)| v.data()[i * c + j]).collect();
        let t = Tensor::from_vec(out);
        Ok(self.push(Op::Pick(indices.to_vec()), vec![a], t, None))
    }

    /// Rows `start..end` of a rank-2 tensor.
    pub fn slice_rows(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let v = self.value(a);
        let (r, c) = (v.rows(), v.cols());
        if v.shape().len() != 2 || start > end || end > r {
            return Err(shape_err("slice-rows", format!("{:?} rows {start}..{end}", v.shape())));
        }
        let t = Tensor::new(vec![end - start, c], v.data()[start * c..end * c].to_vec()).unwrap();
        Ok(self.push(Op::SliceRows { start }, vec![a], t, None))
    }

    /// Reverse-mode sweep from a scalar `loss` node.
    pub fn backward(&mut self, loss: NodeId) -> Result<Gradients> {
        if !self.value(loss).is_scalar() {
            return Err(Error::InvalidArgument(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(gout) = grads[idx].clone() else { continue };
            let node = &self.nodes[idx];
            let inputs = node.inputs.clone();
            match &node.op {
                Op::Leaf => {}
                Op::MatMul => {
                    let a = &self.nodes[inputs[0].0].value;
                    let b = &self.nodes[inputs[1].0].value;
                    let (m, k, n) = (a.rows(), a.cols(), b.cols());
                    // dA = dC B^T
                    let mut da = vec![0.0; m * k];
                    for i in 0..m {
                        for j in 0..n {
                            let g = gout.data()[i * n + j];
                            if g == 0.0 {
                                continue;
                            }
                            for p in 0..k {
                                da[i * k + p] += g * b.data()[p * n + j];
                            }
                        }
                    }
                    // dB = A^T dC
                    let mut db = vec![0.0; k * n];
                    for i in 0..m {
                        for p in 0..k {
                            let av = a.data()[i * k + p];
                            if av == 0.0 {
                                continue;
                            }
                            for j in 0..n {
                                db[p * n + j] += av * gout.data()[i * n + j];
                            }
                        }
                    }
                    self.accumulate(&mut grads, inputs[0], Tensor::new(vec![m, k], da).unwrap());
                    self.accumulate(&mut grads, inputs[1], Tensor::new(vec![k, n], db).unwrap());
                }
                Op::Transpose => {
                    let (r, c) = (gout.rows(), gout.cols());
                    let mut g = vec![0.0; r * c];
                    for i in 0..r {
                        for j in 0..c {
                            g[j * r + i] = gout.data()[i * c + j];
                        }
                    }
                    self.accumulate(&mut grads, inputs[0], Tensor::new(vec![c, r], g).unwrap());
                }
                Op::Add => {
                    let sa = self.nodes[inputs[0].0].value.shape().to_vec();
                    let sb = self.nodes[inputs[1].0].value.shape().to_vec();
                    self.accumulate(&mut grads, inputs[0], gout.clone());
                    let gb = reduce_to_shape(&gout, &sa, &sb);
                    self.accumulate(&mut grads, inputs[1], gb);
                }
                Op::Mul => {
                    let a = self.nodes[inputs[0].0].value.clone();
                    let b = self.nodes[inputs[1].0].value.clone();
                    let ga: Vec<f64> = if b.is_scalar() && !a.is_scalar() {
                        gout.data().iter().map(|g| g * b.item()).collect()
                    } else {
                        gout.data().iter().zip(b.data()).map(|(g, y)| g * y).collect()
                    };
                    self.accumulate(&mut grads, inputs[0], Tensor::new(a.shape().to_vec(), ga).unwrap());
                    let gb_full: Vec<f64> = gout.data().iter().zip(a.data().iter().cycle()).map(|(g, x)| g * x).collect();
                    let gb_t = Tensor::new(a.shape().to_vec(), gb_full).unwrap();
                    let gb = reduce_to_shape(&gb_t, a.shape(), b.shape());
                    self.accumulate(&mut grads, inputs[1], gb);
                }
                Op::Scale(c) => {
                    let c = *c;
                    let g: Vec<f64> = gout.data().iter().map(|g| g * c).collect();
                    let shape = self.nodes[inputs[0].0].value.shape().to_vec();
                    self.accumulate(&mut grads, inputs[0], Tensor::new(shape, g).unwrap());
                }
                Op::EmbeddingGather(ids) => {
                    let ids = ids.clone();
                    let table = &self.nodes[inputs[0].0].value;
                    let (v, d) = (table.rows(), table.cols());
                    let mut g = vec![0.0; v * d];
                    for (row, &id) in ids.iter().enumerate() {
                        for j in 0..d {
                            g[id * d + j] += gout.data()[row * d + j];
                        }
                    }
                    self.accumulate(&mut grads, inputs[0], Tensor::new(vec![v, d], g).unwrap());
                }
                Op::Softmax => {
                    let y = node.value.clone();
                    let (r, c) = (y.rows(), y.cols());
                    let mut g = vec![0.0; y.numel()];
                    for i in 0..r {
                        let yrow = &y.data()[i * c..(i + 1) * c];
                        let grow = &gout.data()[i * c..(i + 1) * c];
                        let dot: f64 = yrow.iter().zip(grow).map(|(y, g)| y * g).sum();
                        for j in 0..c {
                            g[i * c + j] = yrow[j] * (grow[j] - dot);
                        }
                    }
                    let shape = y.shape().to_vec();
                    self.accumulate(&mut grads, inputs[0], Tensor::new(shape, g).unwrap());
                }
                Op::LogSoftmax => {
                    let y = node.value.clone();
                    let (r, c) = (y.rows(), y.cols());
                    let mut g = vec![0.0; y.numel()];
                    for i in 0..r {
                        let grow = &gout.data()[i * c..(i + 1) * c];
                        let gsum: f64 = grow.iter().sum();
                        for j in 0..c {
                            let p = y.data()[i * c + j].exp();
                            g[i * c + j] = grow[j] - p * gsum;
                        }
                    }
                    let shape = y.shape().to_vec();
                    self.accumulate(&mut grads, inputs[0], Tensor::new(shape, g).unwrap());
                }
                Op::LayerNorm { eps } => {
                    let eps = *eps;
                    let x = self.nodes[inputs[0].0].value.clone();
                    let gain = self.nodes[inputs[1].0].value.clone();
                    let (r, c) = (x.rows(), x.cols());
                    let mut gx = vec![0.0; x.numel()];
                    let mut gg = vec![0.0; c];
                    let mut gb = vec![0.0; c];
                    for i in 0..r {
                        let row = &x.data()[i * c..(i + 1) * c];
                        let grow = &gout.data()[i * c..(i + 1) * c];
                        let mean = row.iter().sum::<f64>() / c as f64;
                        let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / c as f64;
                        let inv = 1.0 / (var + eps).sqrt();
                        let xhat: Vec<f64> = row.iter().map(|x| (x - mean) * inv).collect();
                        let dxhat: Vec<f64> = grow.iter().zip(gain.data()).map(|(g, gn)| g * gn).collect();
                        let m1 = dxhat.iter().sum::<f64>() / c as f64;
                        let m2 = dxhat.iter().zip(&xhat).map(|(d, h)| d * h).sum::<f64>() / c as f64;
                        for j in 0..c {
                            gx[i * c + j] = inv * (dxhat[j] - m1 - xhat[j] * m2);
                            gg[j] += grow[j] * xhat[j];
                            gb[j] += grow[j];
                        }
                    }
                    let shape = x.shape().to_vec();
                    self.accumulate(&mut grads, inputs[0], Tensor::new(shape, gx).unwrap());
                    self.accumulate(&mut grads, inputs[1], Tensor::from_vec(gg));
                    self.accumulate(&mut grads, inputs[2], Tensor::from_vec(gb));
                }
                Op::Gelu => {
                    let x = self.nodes[inputs[0].0].value.clone();
                    let g: Vec<f64> = x.data().iter().zip(gout.data()).map(|(&x, g)| g * gelu_grad(x)).collect();
                    self.accumulate(&mut grads, inputs[0], Tensor::new(x.shape().to_vec(), g).unwrap());
                }
                Op::Reshape => {
                    let shape = self.nodes[inputs[0].0].value.shape().to_vec();
                    self.accumulate(&mut grads, inputs[0], Tensor::new(shape, gout.data().to_vec()).unwrap());
                }
                Op::Concat => {
                    let sa = self.nodes[inputs[0].0].value.shape().to_vec();
                    let sb = self.nodes[inputs[1].0].value.shape().to_vec();
                    let na = sa.iter().product::<usize>();
                    let ga = Tensor::new(sa, gout.data()[..na].to_vec()).unwrap();
                    let gb = Tensor::new(sb, gout.data()[na..].to_vec()).unwrap();
                    self.accumulate(&mut grads, inputs[0], ga);
                    self.accumulate(&mut grads, inputs[1], gb);
                }
                Op::Mean => {
                    let x = self.nodes[inputs[0].0].value.clone();
                    let g = gout.item() / x.numel() as f64;
                    self.accumulate(&mut grads, inputs[0], Tensor::new(x.shape().to_vec(), vec![g; x.numel()]).unwrap());
                }
                Op::Sum => {
                    let x = self.nodes[inputs[0].0].value.clone();
                    let g = gout.item();
                    self.accumulate(&mut grads, inputs[0], Tensor::new(x.shape().to_vec(), vec![g; x.numel()]).unwrap());
                }
                Op::CrossEntropy(targets) => {
                    let targets = targets.clone();
                    let x = self.nodes[inputs[0].0].value.clone();
                    let (r, c) = (x.rows(), x.cols());
                    let mut g = softmax_rows(x.data(), r, c);
                    let scale = gout.item() / r as f64;
                    for (i, &t) in targets.iter().enumerate() {
                        g[i * c + t] -= 1.0;
                    }
                    for v in &mut g {
                        *v *= scale;
                    }
                    self.accumulate(&mut grads, inputs[0], Tensor::new(vec![r, c], g).unwrap());
                }
                Op::SliceRows { start } => {
                    let start = *start;
                    let x = self.nodes[inputs[0].0].value.clone();
                    let (r, c) = (x.rows(), x.cols());
                    let mut g = vec![0.0; r * c];
                    g[start * c..start * c + gout.numel()].copy_from_slice(gout.data());
                    self.accumulate(&mut grads, inputs[0], Tensor::new(vec![r, c], g).unwrap());
                }
                Op::Pick(indices) => {
                    let indices = indices.clone();
                    let x = self.nodes[inputs[0].0].value.clone();
                    let (r, c) = (x.rows(), x.cols());
                    let mut g = vec![0.0; r * c];
                    for (i, &j) in indices.iter().enumerate() {
                        g[i * c + j] += gout.data()[i];
                    }
                    self.accumulate(&mut grads, inputs[0], Tensor::new(vec![r, c], g).unwrap());
                }
            }
        }

        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| n.name.clone().map(|name| (name, NodeId(i))))
            .collect();
        Ok(Gradients { grads, params })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], id: NodeId, mut g: Tensor) {
        g.round_to(self.dtype);
        match &mut grads[id.0] {
            Some(existing) => {
                for (e, v) in existing.data_mut().iter_mut().zip(g.data()) {
                    *e += v;
                }
            }
            slot => *slot = Some(g),
        }
    }
}

/// Sum a full-shaped gradient down to a broadcast operand's shape.
fn reduce_to_shape(g: &Tensor, full: &[usize], target: &[usize]) -> Tensor {
    if full == target {
        return g.clone();
    }
    if target.is_empty() || target == [1] {
        let mut t = Tensor::zeros(target.to_vec());
        t.data_mut()[0] = g.data().iter().sum();
        return t;
    }
    // bias case: [r, c] -> [c]
    let c = target[0];
    let mut out = vec![0.0; c];
    for (i, v) in g.data().iter().enumerate() {
        out[i % c] += v;
    }
    Tensor::from_vec(out)
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
    out
}
