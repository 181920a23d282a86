//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every primitive operation in the order it is applied,
//! so the node vector is already a topological order and the backward pass
//! walks it in reverse.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use super::kernels::{self, Window};
use super::value::{check_shape, Tensor};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Mul(Var, Var),
    Sum(Var),
    Relu(Var),
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Reshape(Var),
    TileRows(Var),
    MaxPool {
        input: Var,
        argmax: Vec<usize>,
    },
    Conv {
        input: Var,
        weight: Var,
        bias: Var,
        window: Window,
        c_out: usize,
    },
    SoftmaxRows(Var),
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    tracked: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Untracked input; no gradient is ever computed for it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Tracked leaf whose gradient is reported by [`Graph::backward`].
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    pub fn is_tracked(&self, var: Var) -> bool {
        self.nodes[var.0].tracked
    }

    fn push(&mut self, value: Tensor, op: Op, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn tracked_any(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].tracked)
    }

    fn mat(&self, op: &'static str, var: Var) -> Result<(usize, usize)> {
        match self.shape(var) {
            &[r, c] => Ok((r, c)),
            s => Err(Error::InvalidShape {
                op,
                shape: s.to_vec(),
                reason: "expected a matrix".into(),
            }),
        }
    }

    fn map3(&self, op: &'static str, var: Var) -> Result<(usize, usize, usize)> {
        match self.shape(var) {
            &[h, w, c] => Ok((h, w, c)),
            s => Err(Error::InvalidShape {
                op,
                shape: s.to_vec(),
                reason: "expected an H×W×C map".into(),
            }),
        }
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::ShapeMismatch {
                op,
                left: self.shape(a).to_vec(),
                right: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.mat("matmul", a)?;
        let (k2, n) = self.mat("matmul", b)?;
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                left: vec![m, k],
                right: vec![k2, n],
            });
        }
        let data = kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        let tracked = self.tracked_any(&[a, b]);
        Ok(self.push(Tensor::new([m, n], data)?, Op::MatMul(a, b), tracked))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.mat("transpose", a)?;
        let data = kernels::transpose(self.value(a).data(), r, c);
        let tracked = self.tracked_any(&[a]);
        Ok(self.push(Tensor::new([c, r], data)?, Op::Transpose(a), tracked))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let data = zip_map(self.value(a), self.value(b), |x, y| x + y);
        let shape = self.shape(a).to_vec();
        let tracked = self.tracked_any(&[a, b]);
        Ok(self.push(Tensor::new(shape, data)?, Op::Add(a, b), tracked))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let data = zip_map(self.value(a), self.value(b), |x, y| x - y);
        let shape = self.shape(a).to_vec();
        let tracked = self.tracked_any(&[a, b]);
        Ok(self.push(Tensor::new(shape, data)?, Op::Sub(a, b), tracked))
    }

    /// Adds a length-`n` vector to every row of an `m×n` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (m, n) = self.mat("add_row", a)?;
        if self.value(row).len() != n {
            return Err(Error::ShapeMismatch {
                op: "add_row",
                left: vec![m, n],
                right: self.shape(row).to_vec(),
            });
        }
        let r = self.value(row).data();
        let mut data = self.value(a).data().to_vec();
        for chunk in data.chunks_exact_mut(n) {
            for (x, &b) in chunk.iter_mut().zip(r) {
                *x += b;
            }
        }
        let tracked = self.tracked_any(&[a, row]);
        Ok(self.push(Tensor::new([m, n], data)?, Op::AddRow(a, row), tracked))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a);
        let data = value.data().iter().map(|x| x * factor).collect();
        let t = Tensor::new(value.shape().to_vec(), data).expect("shape preserved");
        let tracked = self.tracked_any(&[a]);
        self.push(t, Op::Scale(a, factor), tracked)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let data = zip_map(self.value(a), self.value(b), |x, y| x * y);
        let shape = self.shape(a).to_vec();
        let tracked = self.tracked_any(&[a, b]);
        Ok(self.push(Tensor::new(shape, data)?, Op::Mul(a, b), tracked))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let tracked = self.tracked_any(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), tracked)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a);
        let data = value.data().iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect();
        let t = Tensor::new(value.shape().to_vec(), data).expect("shape preserved");
        let tracked = self.tracked_any(&[a]);
        self.push(t, Op::Relu(a), tracked)
    }

    /// Concatenates tensors whose shapes agree everywhere except along `axis`.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = *inputs.first().ok_or(Error::Empty("concat inputs"))?;
        let rank = self.shape(first).len();
        if axis >= rank {
            return Err(Error::InvalidShape {
                op: "concat",
                shape: self.shape(first).to_vec(),
                reason: format!("axis {axis} out of range"),
            });
        }
        let mut out_shape = self.shape(first).to_vec();
        out_shape[axis] = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == rank
                && s.iter()
                    .zip(self.shape(first))
                    .enumerate()
                    .all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    left: self.shape(first).to_vec(),
                    right: s.to_vec(),
                });
            }
            out_shape[axis] += s[axis];
        }
        let outer: usize = out_shape[..axis].iter().product();
        let mut data = Vec::with_capacity(out_shape.iter().product());
        for o in 0..outer {
            for &v in inputs {
                let t = self.value(v);
                let chunk: usize = t.shape()[axis..].iter().product();
                data.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let tracked = self.tracked_any(inputs);
        Ok(self.push(
            Tensor::new(out_shape, data)?,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            tracked,
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let shape = shape.into();
        check_shape("reshape", &shape)?;
        if shape.iter().product::<usize>() != self.value(a).len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                left: self.shape(a).to_vec(),
                right: shape,
            });
        }
        let t = self.value(a).reshaped(shape)?;
        let tracked = self.tracked_any(&[a]);
        Ok(self.push(t, Op::Reshape(a), tracked))
    }

    /// Repeats a vector as `count` identical rows.
    pub fn tile_rows(&mut self, row: Var, count: usize) -> Result<Var> {
        if count == 0 {
            return Err(Error::Empty("tile_rows count"));
        }
        let r = self.value(row).data();
        let n = r.len();
        let data = r.repeat(count);
        let tracked = self.tracked_any(&[row]);
        Ok(self.push(Tensor::new([count, n], data)?, Op::TileRows(row), tracked))
    }

    /// Max pooling over an `H×W×C` map with a valid window.
    pub fn maxpool(&mut self, input: Var, pool: (usize, usize), stride: (usize, usize)) -> Result<Var> {
        let (h, w, c) = self.map3("maxpool", input)?;
        let window = Window::new(h, w, c, pool, stride).ok_or_else(|| Error::WindowTooLarge {
            op: "maxpool",
            input: vec![h, w, c],
            window: pool,
        })?;
        let (values, argmax) = kernels::maxpool(self.value(input).data(), &window);
        let t = Tensor::new([window.out_h, window.out_w, c], values)?;
        let tracked = self.tracked_any(&[input]);
        Ok(self.push(t, Op::MaxPool { input, argmax }, tracked))
    }

    /// Valid cross-correlation of an `H×W×Cin` map with a
    /// `kh×kw×Cin×Cout` kernel plus a `Cout` bias.
    pub fn conv_valid(&mut self, input: Var, weight: Var, bias: Var, stride: (usize, usize)) -> Result<Var> {
        let (h, w, c_in) = self.map3("conv_valid", input)?;
        let (kh, kw, c_out) = match self.shape(weight) {
            &[kh, kw, ci, co] if ci == c_in => (kh, kw, co),
            s => {
                return Err(Error::ShapeMismatch {
                    op: "conv_valid",
                    left: vec![h, w, c_in],
                    right: s.to_vec(),
                })
            }
        };
        if self.value(bias).len() != c_out {
            return Err(Error::ShapeMismatch {
                op: "conv_valid",
                left: self.shape(weight).to_vec(),
                right: self.shape(bias).to_vec(),
            });
        }
        let window = Window::new(h, w, c_in, (kh, kw), stride).ok_or_else(|| Error::WindowTooLarge {
            op: "conv_valid",
            input: vec![h, w, c_in],
            window: (kh, kw),
        })?;
        let data = kernels::conv(
            self.value(input).data(),
            self.value(weight).data(),
            self.value(bias).data(),
            &window,
            c_out,
        );
        let t = Tensor::new([window.out_h, window.out_w, c_out], data)?;
        let tracked = self.tracked_any(&[input, weight, bias]);
        Ok(self.push(
            t,
            Op::Conv {
                input,
                weight,
                bias,
                window,
                c_out,
            },
            tracked,
        ))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.mat("softmax_rows", a)?;
        let data = kernels::softmax_rows(self.value(a).data(), r, c);
        let tracked = self.tracked_any(&[a]);
        Ok(self.push(Tensor::new([r, c], data)?, Op::SoftmaxRows(a), tracked))
    }

    /// Mean over rows of `-log softmax(logits)[label]`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (n, k) = self.mat("cross_entropy", logits)?;
        if labels.len() != n {
            return Err(Error::ShapeMismatch {
                op: "cross_entropy",
                left: vec![n, k],
                right: vec![labels.len()],
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::LabelOutOfRange { label: bad, classes: k });
        }
        let z = self.value(logits);
        let mut total = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            let row = z.row(i);
            total += kernels::log_sum_exp(row) - row[y];
        }
        let probs = kernels::softmax_rows(z.data(), n, k);
        let tracked = self.tracked_any(&[logits]);
        Ok(self.push(
            Tensor::scalar(total / n as f64),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            tracked,
        ))
    }

    /// Hash of every branch decision taken in the forward pass (ReLU gates and
    /// max-pool winners). Two evaluations with equal signatures lie on the same
    /// smooth piece of the function.
    pub fn branch_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu(a) => {
                    for &x in self.value(*a).data() {
                        (x > 0.0).hash(&mut h);
                    }
                }
                Op::MaxPool { argmax, .. } => argmax.hash(&mut h),
                _ => {}
            }
        }
        h.finish()
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let loss_value = self.value(loss);
        if !loss_value.is_scalar() {
            return Err(Error::NonScalarLoss(loss_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].tracked {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(Tensor::full(loss_value.shape().to_vec(), 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.tracked {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let gd = g.data();
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let (m, k) = self.value(*a).dims2()?;
                    let n = self.value(*b).shape()[1];
                    if self.is_tracked(*a) {
                        let da = kernels::matmul_a_bt(gd, self.value(*b).data(), m, n, k);
                        self.accumulate(&mut grads, *a, da);
                    }
                    if self.is_tracked(*b) {
                        let db = kernels::matmul_at_b(self.value(*a).data(), gd, m, k, n);
                        self.accumulate(&mut grads, *b, db);
                    }
                }
                Op::Transpose(a) => {
                    let (r, c) = self.value(*a).dims2()?;
                    self.accumulate(&mut grads, *a, kernels::transpose(gd, c, r));
                }
                Op::Add(a, b) => {
                    self.accumulate(&mut grads, *a, gd.to_vec());
                    self.accumulate(&mut grads, *b, gd.to_vec());
                }
                Op::Sub(a, b) => {
                    self.accumulate(&mut grads, *a, gd.to_vec());
                    self.accumulate(&mut grads, *b, gd.iter().map(|x| -x).collect());
                }
                Op::AddRow(a, row) => {
                    self.accumulate(&mut grads, *a, gd.to_vec());
                    if self.is_tracked(*row) {
                        let n = self.value(*row).len();
                        let mut dr = vec![0.0; n];
                        for chunk in gd.chunks_exact(n) {
                            for (d, &x) in dr.iter_mut().zip(chunk) {
                                *d += x;
                            }
                        }
                        self.accumulate(&mut grads, *row, dr);
                    }
                }
                Op::Scale(a, f) => {
                    self.accumulate(&mut grads, *a, gd.iter().map(|x| x * f).collect());
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                    if self.is_tracked(*a) {
                        self.accumulate(&mut grads, *a, gd.iter().zip(bv).map(|(g, y)| g * y).collect());
                    }
                    if self.is_tracked(*b) {
                        self.accumulate(&mut grads, *b, gd.iter().zip(av).map(|(g, x)| g * x).collect());
                    }
                }
                Op::Sum(a) => {
                    let n = self.value(*a).len();
                    self.accumulate(&mut grads, *a, vec![gd[0]; n]);
                }
                Op::Relu(a) => {
                    let x = self.value(*a).data();
                    let d = gd.iter().zip(x).map(|(&g, &x)| if x > 0.0 { g } else { 0.0 }).collect();
                    self.accumulate(&mut grads, *a, d);
                }
                Op::Concat { inputs, axis } => {
                    let out_shape = node.value.shape();
                    let outer: usize = out_shape[..*axis].iter().product();
                    let mut parts: Vec<Vec<f64>> = inputs
                        .iter()
                        .map(|v| Vec::with_capacity(self.value(*v).len()))
                        .collect();
                    let mut pos = 0;
                    for _ in 0..outer {
                        for (part, v) in parts.iter_mut().zip(inputs) {
                            let chunk: usize = self.shape(*v)[*axis..].iter().product();
                            part.extend_from_slice(&gd[pos..pos + chunk]);
                            pos += chunk;
                        }
                    }
                    for (part, v) in parts.into_iter().zip(inputs) {
                        self.accumulate(&mut grads, *v, part);
                    }
                }
                Op::Reshape(a) => self.accumulate(&mut grads, *a, gd.to_vec()),
                Op::TileRows(row) => {
                    let n = self.value(*row).len();
                    let mut dr = vec![0.0; n];
                    for chunk in gd.chunks_exact(n) {
                        for (d, &x) in dr.iter_mut().zip(chunk) {
                            *d += x;
                        }
                    }
                    self.accumulate(&mut grads, *row, dr);
                }
                Op::MaxPool { input, argmax } => {
                    let mut d = vec![0.0; self.value(*input).len()];
                    for (&src, &gv) in argmax.iter().zip(gd) {
                        d[src] += gv;
                    }
                    self.accumulate(&mut grads, *input, d);
                }
                Op::Conv {
                    input,
                    weight,
                    bias,
                    window,
                    c_out,
                } => {
                    let (d_in, d_w, d_b) = kernels::conv_backward(
                        self.value(*input).data(),
                        self.value(*weight).data(),
                        gd,
                        window,
                        *c_out,
                    );
                    self.accumulate(&mut grads, *input, d_in);
                    self.accumulate(&mut grads, *weight, d_w);
                    self.accumulate(&mut grads, *bias, d_b);
                }
                Op::SoftmaxRows(a) => {
                    let s = node.value.data();
                    let cols = node.value.shape()[1];
                    let mut d = vec![0.0; s.len()];
                    for ((drow, srow), grow) in d
                        .chunks_exact_mut(cols)
                        .zip(s.chunks_exact(cols))
                        .zip(gd.chunks_exact(cols))
                    {
                        let dot: f64 = srow.iter().zip(grow).map(|(a, b)| a * b).sum();
                        for ((dv, &sv), &gv) in drow.iter_mut().zip(srow).zip(grow) {
                            *dv = sv * (gv - dot);
                        }
                    }
                    self.accumulate(&mut grads, *a, d);
                }
                Op::CrossEntropy { logits, labels, probs } => {
                    let k = self.shape(*logits)[1];
                    let scale = gd[0] / labels.len() as f64;
                    let mut d: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                    for (i, &y) in labels.iter().enumerate() {
                        d[i * k + y] -= scale;
                    }
                    self.accumulate(&mut grads, *logits, d);
                }
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], var: Var, delta: Vec<f64>) {
        if !self.nodes[var.0].tracked {
            return;
        }
        match &mut grads[var.0] {
            Some(existing) => {
                for (e, d) in existing.data_mut().iter_mut().zip(delta) {
                    *e += d;
                }
            }
            slot @ None => {
                let shape = self.shape(var).to_vec();
                *slot = Some(Tensor::new(shape, delta).expect("gradient shape matches value"));
            }
        }
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect()
}
