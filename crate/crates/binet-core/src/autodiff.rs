//! Tape-based reverse-mode automatic differentiation.
//!
//! Ops are recorded eagerly on a [`Tape`]; [`Tape::backward`] replays them in
//! reverse creation order (a reverse topological order, since an op can only
//! consume earlier nodes) and accumulates gradients additively across fan-out.
//!
//! Binarization enters through [`Tape::custom_grad`] / [`Tape::custom_node`]:
//! nodes whose forward value is arbitrary and whose backward rule is an
//! elementwise multiplier evaluated on the saved input. That is the hook the
//! sign function uses to inject its surrogate derivative.

use crate::error::{BinetError, Result};
use crate::kernels::{self, BnCache, BnRunningStats, ConvGeom};
use crate::tensor::Tensor;

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    Conv2d { input: Var, weight: Var, cols: Vec<f32>, geom: ConvGeom },
    Linear { input: Var, weight: Var },
    BatchNorm { input: Var, gamma: Var, beta: Var, cache: BnCache },
    Hardtanh { input: Var },
    MaxPool { input: Var, argmax: Vec<usize> },
    Subsample { input: Var, stride: usize },
    ChannelPad { input: Var, extra: usize },
    GlobalAvgPool { input: Var },
    Reshape { input: Var },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { input: Var, factor: f32 },
    /// Elementwise custom backward: grad_in = grad_out ⊙ deriv.
    CustomGrad { input: Var, deriv: Vec<f32> },
    CrossEntropy { logits: Var, labels: Vec<usize>, softmax: Vec<f32>, classes: usize },
    SumAll { input: Var },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Gradient tape. One tape per training step; build the graph, call
/// [`Tape::backward`] once, read leaf gradients, drop.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f32>>>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient accumulated for `v`, if any reached it during backward.
    pub fn grad(&self, v: Var) -> Option<&[f32]> {
        self.grads[v.0].as_deref()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    // ── ops ──────────────────────────────────────────────────────────

    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> Result<Var> {
        let (out, cols, geom) =
            kernels::conv2d_forward(self.value(input), self.value(weight), stride, padding)?;
        Ok(self.push(out, Op::Conv2d { input, weight, cols, geom }))
    }

    pub fn linear(&mut self, input: Var, weight: Var) -> Result<Var> {
        let out = kernels::linear_forward(self.value(input), self.value(weight))?;
        Ok(self.push(out, Op::Linear { input, weight }))
    }

    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        running: &mut BnRunningStats,
        training: bool,
        momentum: f64,
        eps: f64,
    ) -> Result<Var> {
        let (out, cache) = kernels::batch_norm_forward(
            self.value(input),
            self.value(gamma),
            self.value(beta),
            running,
            training,
            momentum,
            eps,
        )?;
        Ok(self.push(out, Op::BatchNorm { input, gamma, beta, cache }))
    }

    pub fn hardtanh(&mut self, input: Var) -> Var {
        let out = kernels::hardtanh_forward(self.value(input));
        self.push(out, Op::Hardtanh { input })
    }

    pub fn max_pool2d(&mut self, input: Var, kernel: usize) -> Result<Var> {
        let (out, argmax) = kernels::max_pool2d_forward(self.value(input), kernel)?;
        Ok(self.push(out, Op::MaxPool { input, argmax }))
    }

    pub fn subsample(&mut self, input: Var, stride: usize) -> Result<Var> {
        let out = kernels::subsample_forward(self.value(input), stride)?;
        Ok(self.push(out, Op::Subsample { input, stride }))
    }

    pub fn channel_pad(&mut self, input: Var, extra: usize) -> Result<Var> {
        let out = kernels::channel_pad_forward(self.value(input), extra)?;
        Ok(self.push(out, Op::ChannelPad { input, extra }))
    }

    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let out = kernels::global_avg_pool_forward(self.value(input))?;
        Ok(self.push(out, Op::GlobalAvgPool { input }))
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(input).reshape(shape)?;
        Ok(self.push(out, Op::Reshape { input }))
    }

    pub fn flatten(&mut self, input: Var) -> Result<Var> {
        let shape = self.value(input).shape();
        if shape.is_empty() {
            return Err(BinetError::ShapeMismatch("flatten on scalar".into()));
        }
        let n = shape[0];
        let rest: usize = shape[1..].iter().product();
        self.reshape(input, &[n, rest])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(BinetError::ShapeMismatch(format!(
                "add {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let data: Vec<f32> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data().iter())
            .map(|(&x, &y)| x + y)
            .collect();
        let out = Tensor::new(self.value(a).shape().to_vec(), data)?;
        Ok(self.push(out, Op::Add { a, b }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(BinetError::ShapeMismatch(format!(
                "mul {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let data: Vec<f32> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data().iter())
            .map(|(&x, &y)| x * y)
            .collect();
        let out = Tensor::new(self.value(a).shape().to_vec(), data)?;
        Ok(self.push(out, Op::Mul { a, b }))
    }

    pub fn scale(&mut self, input: Var, factor: f32) -> Var {
        let out = self.value(input).scale(factor);
        self.push(out, Op::Scale { input, factor })
    }

    /// Elementwise op with a caller-supplied derivative: forward value is
    /// `forward_fn` applied elementwise, and during backward the incoming
    /// gradient is multiplied elementwise by `backward_fn(saved input)`.
    pub fn custom_grad(
        &mut self,
        input: Var,
        forward_fn: impl Fn(f32) -> f32,
        backward_fn: impl Fn(f32) -> f32,
    ) -> Var {
        let value = self.value(input).map(&forward_fn);
        let deriv: Vec<f32> = self.value(input).data().iter().map(|&x| backward_fn(x)).collect();
        self.push(value, Op::CustomGrad { input, deriv })
    }

    /// Generalized custom node: arbitrary precomputed forward value with an
    /// elementwise gradient multiplier. Used when the forward transform
    /// depends on tensor-level statistics (the weight binarizer).
    pub fn custom_node(&mut self, input: Var, value: Tensor, deriv: Vec<f32>) -> Result<Var> {
        if self.value(input).numel() != value.numel() || value.numel() != deriv.len() {
            return Err(BinetError::ShapeMismatch(
                "custom_node value/deriv must match input element count".into(),
            ));
        }
        Ok(self.push(value, Op::CustomGrad { input, deriv }))
    }

    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (loss, softmax) = kernels::cross_entropy_forward(self.value(logits), labels)?;
        let classes = self.value(logits).shape()[1];
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy { logits, labels: labels.to_vec(), softmax, classes },
        ))
    }

    pub fn sum_all(&mut self, input: Var) -> Var {
        let s: f64 = self.value(input).data().iter().map(|&x| x as f64).sum();
        self.push(Tensor::scalar(s as f32), Op::SumAll { input })
    }

    // ── backward ─────────────────────────────────────────────────────

    /// Reverse pass from a scalar loss. Each trainable leaf ends up holding
    /// dLoss/dLeaf, readable via [`Tape::grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(BinetError::InvalidArgument(format!(
                "backward requires a scalar loss, got {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        let Tape { nodes, grads } = self;
        grads[loss.0] = Some(vec![1.0]);

        for id in (0..nodes.len()).rev() {
            let dout = match &grads[id] {
                Some(g) => g.clone(),
                None => continue,
            };
            match &nodes[id].op {
                Op::Leaf => {}
                Op::Conv2d { input, weight, cols, geom } => {
                    let (di, dw) =
                        kernels::conv2d_backward(&dout, &nodes[weight.0].value, cols, geom);
                    accum(grads, input.0, di.data());
                    accum(grads, weight.0, dw.data());
                }
                Op::Linear { input, weight } => {
                    let (di, dw) = kernels::linear_backward(
                        &dout,
                        &nodes[input.0].value,
                        &nodes[weight.0].value,
                    );
                    accum(grads, input.0, di.data());
                    accum(grads, weight.0, dw.data());
                }
                Op::BatchNorm { input, gamma, beta, cache } => {
                    let (dx, dgamma, dbeta) = kernels::batch_norm_backward(
                        &dout,
                        nodes[input.0].value.shape(),
                        &nodes[gamma.0].value,
                        cache,
                    );
                    accum(grads, input.0, dx.data());
                    accum(grads, gamma.0, dgamma.data());
                    accum(grads, beta.0, dbeta.data());
                }
                Op::Hardtanh { input } => {
                    let dx = kernels::hardtanh_backward(&dout, &nodes[input.0].value);
                    accum(grads, input.0, dx.data());
                }
                Op::MaxPool { input, argmax } => {
                    let dx = kernels::max_pool2d_backward(
                        &dout,
                        nodes[input.0].value.shape(),
                        argmax,
                    );
                    accum(grads, input.0, dx.data());
                }
                Op::Subsample { input, stride } => {
                    let dx = kernels::subsample_backward(
                        &dout,
                        nodes[input.0].value.shape(),
                        *stride,
                    );
                    accum(grads, input.0, dx.data());
                }
                Op::ChannelPad { input, extra } => {
                    let dx = kernels::channel_pad_backward(
                        &dout,
                        nodes[input.0].value.shape(),
                        *extra,
                    );
                    accum(grads, input.0, dx.data());
                }
                Op::GlobalAvgPool { input } => {
                    let dx =
                        kernels::global_avg_pool_backward(&dout, nodes[input.0].value.shape());
                    accum(grads, input.0, dx.data());
                }
                Op::Reshape { input } => {
                    accum(grads, input.0, &dout);
                }
                Op::Add { a, b } => {
                    accum(grads, a.0, &dout);
                    accum(grads, b.0, &dout);
                }
                Op::Mul { a, b } => {
                    let da: Vec<f32> = dout
                        .iter()
                        .zip(nodes[b.0].value.data().iter())
                        .map(|(&d, &v)| d * v)
                        .collect();
                    let db: Vec<f32> = dout
                        .iter()
                        .zip(nodes[a.0].value.data().iter())
                        .map(|(&d, &v)| d * v)
                        .collect();
                    accum(grads, a.0, &da);
                    accum(grads, b.0, &db);
                }
                Op::Scale { input, factor } => {
                    let dx: Vec<f32> = dout.iter().map(|&d| d * factor).collect();
                    accum(grads, input.0, &dx);
                }
                Op::CustomGrad { input, deriv } => {
                    let dx: Vec<f32> =
                        dout.iter().zip(deriv.iter()).map(|(&d, &m)| d * m).collect();
                    accum(grads, input.0, &dx);
                }
                Op::CrossEntropy { logits, labels, softmax, classes } => {
                    let dx =
                        kernels::cross_entropy_backward(dout[0], softmax, labels, *classes);
                    accum(grads, logits.0, dx.data());
                }
                Op::SumAll { input } => {
                    let n = nodes[input.0].value.numel();
                    let dx = vec![dout[0]; n];
                    accum(grads, input.0, &dx);
                }
            }
        }
        Ok(())
    }
}

fn accum(grads: &mut [Option<Vec<f32>>], id: usize, delta: &[f32]) {
    match &mut grads[id] {
        Some(g) => {
            for (dst, &d) in g.iter_mut().zip(delta.iter()) {
                *dst += d;
            }
        }
        None => grads[id] = Some(delta.to_vec()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_leaf_gives_ones() {
        let mut tape = Tape::new();
        let w = tape.leaf(Tensor::from_vec(vec![2.0, -1.0, 7.0]));
        let loss = tape.sum_all(w);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(w).unwrap(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn sum_of_squares_grad() {
        let mut tape = Tape::new();
        let w = tape.leaf(Tensor::from_vec(vec![1.0, 2.0]));
        let sq = tape.mul(w, w).unwrap();
        let loss = tape.sum_all(sq);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(w).unwrap(), &[2.0, 4.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::new();
        let w = tape.leaf(Tensor::from_vec(vec![1.0, 2.0]));
        assert!(tape.backward(w).is_err());
    }

    #[test]
    fn custom_grad_identity_estimator() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_vec(vec![0.7]));
        let s = tape.custom_grad(x, |v| if v >= 0.0 { 1.0 } else { -1.0 }, |_| 1.0);
        let scaled = tape.scale(s, 2.0);
        let loss = tape.sum_all(scaled);
        tape.backward(loss).unwrap();
        assert_eq!(tape.value(s).data(), &[1.0]);
        assert_eq!(tape.grad(x).unwrap(), &[2.0]);
    }

    #[test]
    fn custom_grad_zero_estimator_blocks_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_vec(vec![0.7, -0.2]));
        let s = tape.custom_grad(x, |v| if v >= 0.0 { 1.0 } else { -1.0 }, |_| 0.0);
        let loss = tape.sum_all(s);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[0.0, 0.0]);
    }

    #[test]
    fn fanout_accumulates() {
        // loss = sum(w) + sum(w) → grad 2 per element
        let mut tape = Tape::new();
        let w = tape.leaf(Tensor::from_vec(vec![3.0]));
        let a = tape.sum_all(w);
        let b = tape.sum_all(w);
        let loss = tape.add(a, b).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(w).unwrap(), &[2.0]);
    }

    #[test]
    fn backward_is_deterministic() {
        let run = || {
            let mut tape = Tape::new();
            let x = tape.leaf(Tensor::from_vec(vec![0.3, -1.7, 0.9, 0.1]));
            let w = tape.leaf(Tensor::from_vec(vec![1.5, -0.4, 0.2, 0.8]));
            let p = tape.mul(x, w).unwrap();
            let h = tape.hardtanh(p);
            let loss = tape.sum_all(h);
            tape.backward(loss).unwrap();
            tape.grad(w).unwrap().to_vec()
        };
        assert_eq!(run(), run());
    }
}
