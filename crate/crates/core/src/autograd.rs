//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every value produced through a [`Tape`] is stored as a node; operations
//! whose inputs require gradients also record how to propagate them back.
//! Nodes are appended in evaluation order, so the tape is topologically
//! sorted by construction and [`Tape::backward`] is a single reverse sweep.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ops::{self, ConvDims, Padding, PoolDims, PoolKind, Window};
use crate::tensor::{Scalar, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Conv {
        input: Var,
        kernel: Var,
        bias: Var,
        dims: ConvDims,
    },
    Pool {
        input: Var,
        kind: PoolKind,
        dims: PoolDims,
        argmax: Vec<usize>,
    },
    Relu {
        input: Var,
    },
    Dense {
        input: Var,
        weight: Var,
        bias: Var,
        dims: (usize, usize, usize),
    },
    Concat {
        inputs: Vec<Var>,
    },
    GlobalAvgPool {
        input: Var,
        inner: usize,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
    Sum {
        input: Var,
    },
    Dot {
        a: Var,
        b: Var,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Option<Op<T>>,
}

/// Recorded computation. Values live on the tape until it is dropped.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Record an input. Gradients are tracked iff `tensor.requires_grad`.
    pub fn leaf(&mut self, mut tensor: Tensor<T>) -> Var {
        tensor.grad = None;
        self.push(tensor, None)
    }

    /// Record an input that never receives a gradient.
    pub fn constant(&mut self, mut tensor: Tensor<T>) -> Var {
        tensor.requires_grad = false;
        self.leaf(tensor)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Gradient populated by the last [`Tape::backward`], if `v` tracks one.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad.as_deref()
    }

    pub fn take_value(&mut self, v: Var) -> Tensor<T> {
        std::mem::replace(&mut self.nodes[v.0].value, Tensor::scalar(T::zero()))
    }

    fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].value.requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Option<Op<T>>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Append a result; the op is kept only when some input needs a gradient.
    fn record(&mut self, shape: Vec<usize>, data: Vec<T>, inputs: &[Var], op: Op<T>) -> Result<Var> {
        let tracked = inputs.iter().any(|&v| self.requires_grad(v));
        let mut value = Tensor::new(shape, data)?;
        value.requires_grad = tracked;
        Ok(self.push(value, tracked.then_some(op)))
    }

    /// Cross-correlation over 2 or 3 spatial axes (`stride.len()`).
    pub fn conv(&mut self, input: Var, kernel: Var, bias: Var, stride: &[usize], padding: &[Padding]) -> Result<Var> {
        let (dims, shape) = ops::conv_dims(
            self.value(input).shape(),
            self.value(kernel).shape(),
            self.value(bias).shape(),
            stride,
            padding,
        )?;
        let out = ops::conv_forward(
            self.value(input).data(),
            self.value(kernel).data(),
            self.value(bias).data(),
            &dims,
        );
        self.record(shape, out, &[input, kernel, bias], Op::Conv { input, kernel, bias, dims })
    }

    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Var, stride: [usize; 2], padding: [Padding; 2]) -> Result<Var> {
        self.conv(input, kernel, bias, &stride, &padding)
    }

    pub fn conv3d(&mut self, input: Var, kernel: Var, bias: Var, stride: [usize; 3], padding: [Padding; 3]) -> Result<Var> {
        self.conv(input, kernel, bias, &stride, &padding)
    }

    fn pool(&mut self, kind: PoolKind, input: Var, window: &Window) -> Result<Var> {
        let (dims, shape) = ops::pool_dims(self.value(input).shape(), window)?;
        let (out, argmax) = ops::pool_forward(kind, self.value(input).data(), &dims);
        self.record(shape, out, &[input], Op::Pool { input, kind, dims, argmax })
    }

    pub fn max_pool(&mut self, input: Var, window: &Window) -> Result<Var> {
        self.pool(PoolKind::Max, input, window)
    }

    pub fn avg_pool(&mut self, input: Var, window: &Window) -> Result<Var> {
        self.pool(PoolKind::Avg, input, window)
    }

    pub fn relu(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let shape = x.shape().to_vec();
        let out = ops::relu(x).into_data();
        self.record(shape, out, &[input], Op::Relu { input })
    }

    pub fn dense(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (x, w, b) = (self.value(input), self.value(weight), self.value(bias));
        let y = ops::dense(x, w, b)?;
        let dims = (x.shape()[0], x.shape()[1], w.shape()[1]);
        let shape = y.shape().to_vec();
        self.record(shape, y.into_data(), &[input, weight, bias], Op::Dense { input, weight, bias, dims })
    }

    pub fn concat_channels(&mut self, inputs: &[Var]) -> Result<Var> {
        let tensors: Vec<&Tensor<T>> = inputs.iter().map(|&v| self.value(v)).collect();
        let y = ops::concat_channels(&tensors)?;
        let shape = y.shape().to_vec();
        self.record(shape, y.into_data(), inputs, Op::Concat { inputs: inputs.to_vec() })
    }

    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let inner = x.shape()[2..].iter().product();
        let y = ops::global_avg_pool(x)?;
        let shape = y.shape().to_vec();
        self.record(shape, y.into_data(), &[input], Op::GlobalAvgPool { input, inner })
    }

    /// Mean categorical cross-entropy, as a `[1]` tensor.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let z = self.value(logits);
        let (n, c) = ops::loss_dims(z.shape(), labels)?;
        let (loss, probs) = ops::softmax_cross_entropy_forward(z.data(), labels, n, c);
        self.record(
            vec![1],
            vec![loss],
            &[logits],
            Op::SoftmaxCrossEntropy { logits, labels: labels.to_vec(), probs },
        )
    }

    /// Sum of all elements, as a `[1]` tensor.
    pub fn sum(&mut self, input: Var) -> Result<Var> {
        let mut s = T::zero();
        for &v in self.value(input).data() {
            s += v;
        }
        self.record(vec![1], vec![s], &[input], Op::Sum { input })
    }

    /// Inner product of two equally-shaped tensors, as a `[1]` tensor.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(Error::shape("dot", format!("{:?} vs {:?}", x.shape(), y.shape())));
        }
        let mut s = T::zero();
        for (&p, &q) in x.data().iter().zip(y.data()) {
            s += p * q;
        }
        self.record(vec![1], vec![s], &[a, b], Op::Dot { a, b })
    }

    /// Reverse sweep from a scalar `loss`. Afterwards every gradient-tracking
    /// node holds its total derivative; tracked nodes the loss does not
    /// depend on hold zeros.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be a scalar, got shape {:?}", self.value(loss).shape()),
            ));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        if self.requires_grad(loss) {
            grads[loss.0] = Some(vec![T::one()]);
        }

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if let Some(op) = &self.nodes[i].op {
                for (target, contribution) in self.vjp(op, &g) {
                    accumulate(&mut grads[target.0], contribution);
                }
            }
            grads[i] = Some(g);
        }

        for (i, node) in self.nodes.iter_mut().enumerate() {
            if node.value.requires_grad {
                let g = grads
                    .get_mut(i)
                    .and_then(Option::take)
                    .unwrap_or_else(|| vec![T::zero(); node.value.len()]);
                node.value.grad = Some(g);
            }
        }
        Ok(())
    }

    /// Vector-Jacobian products of one op for the inputs that track gradients.
    fn vjp(&self, op: &Op<T>, g: &[T]) -> Vec<(Var, Vec<T>)> {
        let tracked = |v: Var| self.requires_grad(v);
        let mut out = Vec::new();
        match op {
            Op::Conv { input, kernel, bias, dims } => {
                let (dx, dk, db) = ops::conv_backward(
                    self.value(*input).data(),
                    self.value(*kernel).data(),
                    g,
                    dims,
                    tracked(*input),
                );
                if let Some(dx) = dx {
                    out.push((*input, dx));
                }
                if tracked(*kernel) {
                    out.push((*kernel, dk));
                }
                if tracked(*bias) {
                    out.push((*bias, db));
                }
            }
            Op::Pool { input, kind, dims, argmax } => {
                if tracked(*input) {
                    out.push((*input, ops::pool_backward(*kind, g, argmax, dims)));
                }
            }
            Op::Relu { input } => {
                if tracked(*input) {
                    let x = self.value(*input).data();
                    let dx = x
                        .iter()
                        .zip(g)
                        .map(|(&xi, &gi)| if xi > T::zero() { gi } else { T::zero() })
                        .collect();
                    out.push((*input, dx));
                }
            }
            Op::Dense { input, weight, bias, dims } => {
                let (n, d, c) = *dims;
                let (dx, dw, db) =
                    ops::dense_backward(self.value(*input).data(), self.value(*weight).data(), g, n, d, c);
                if tracked(*input) {
                    out.push((*input, dx));
                }
                if tracked(*weight) {
                    out.push((*weight, dw));
                }
                if tracked(*bias) {
                    out.push((*bias, db));
                }
            }
            Op::Concat { inputs } => {
                let shapes: Vec<Vec<usize>> = inputs.iter().map(|&v| self.value(v).shape().to_vec()).collect();
                for (v, part) in inputs.iter().zip(ops::concat_backward(g, &shapes)) {
                    if tracked(*v) {
                        out.push((*v, part));
                    }
                }
            }
            Op::GlobalAvgPool { input, inner } => {
                if tracked(*input) {
                    out.push((*input, ops::gap_backward(g, *inner)));
                }
            }
            Op::SoftmaxCrossEntropy { logits, labels, probs } => {
                if tracked(*logits) {
                    let c = self.value(*logits).shape()[1];
                    out.push((*logits, ops::softmax_cross_entropy_backward(probs, labels, c, g[0])));
                }
            }
            Op::Sum { input } => {
                if tracked(*input) {
                    out.push((*input, vec![g[0]; self.value(*input).len()]));
                }
            }
            Op::Dot { a, b } => {
                if tracked(*a) {
                    out.push((*a, self.value(*b).data().iter().map(|&y| y * g[0]).collect()));
                }
                if tracked(*b) {
                    out.push((*b, self.value(*a).data().iter().map(|&x| x * g[0]).collect()));
                }
            }
        }
        out
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Vec<T>>, contribution: Vec<T>) {
    match slot {
        Some(acc) => {
            for (a, c) in acc.iter_mut().zip(contribution) {
                *a += c;
            }
        }
        None => *slot = Some(contribution),
    }
}

/// A scalar-valued function of named tensors, evaluable at any precision.
///
/// Gradient checks evaluate the analytic gradient at the caller's precision
/// and the central differences in `f64`.
pub trait Differentiable: Sync {
    fn eval<T: Scalar>(&self, tape: &mut Tape<T>, inputs: &[Var]) -> Result<Var>;
}

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub epsilon: f64,
    /// Check at most this many coordinates per tensor (sampled); `None` checks all.
    pub max_coords: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            epsilon: 1e-6,
            max_coords: None,
            seed: 0,
        }
    }
}

/// Worst relative error per checked tensor, `|a - b| / max(|a|, |b|, 1e-8)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub per_tensor: BTreeMap<String, f64>,
}

impl GradCheckReport {
    pub fn worst(&self) -> f64 {
        self.per_tensor.values().copied().fold(0.0, f64::max)
    }
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Compare backward-computed gradients of `f` against central differences
/// `(f(θ+ε) − f(θ−ε)) / 2ε` for every tensor flagged `requires_grad`.
pub fn grad_check<T: Scalar, F: Differentiable>(
    f: &F,
    inputs: &[(String, Tensor<T>)],
    options: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let mut tape = Tape::<T>::new();
    let vars: Vec<Var> = inputs.iter().map(|(_, t)| tape.leaf(t.clone())).collect();
    let loss = f.eval(&mut tape, &vars)?;
    tape.backward(loss)?;

    let reference: Vec<Tensor<f64>> = inputs.iter().map(|(_, t)| t.cast()).collect();
    let eval_at = |point: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::<f64>::new();
        let vars: Vec<Var> = point.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f.eval(&mut tape, &vars)?;
        Ok(tape.value(out).data()[0])
    };

    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut per_tensor = BTreeMap::new();
    for (i, (name, tensor)) in inputs.iter().enumerate() {
        if !tensor.requires_grad {
            continue;
        }
        let analytic = tape.grad(vars[i]).expect("tracked leaf has a gradient");
        let coords: Vec<usize> = match options.max_coords {
            Some(m) if m < tensor.len() => {
                let mut c = sample(&mut rng, tensor.len(), m).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..tensor.len()).collect(),
        };
        let mut worst: f64 = 0.0;
        let mut point = reference.clone();
        for j in coords {
            let original = point[i].data()[j];
            point[i].data_mut()[j] = original + options.epsilon;
            let plus = eval_at(&point)?;
            point[i].data_mut()[j] = original - options.epsilon;
            let minus = eval_at(&point)?;
            point[i].data_mut()[j] = original;
            let numeric = (plus - minus) / (2.0 * options.epsilon);
            worst = worst.max(relative_error(analytic[j].to_f64(), numeric));
        }
        per_tensor.insert(name.clone(), worst);
    }
    Ok(GradCheckReport { per_tensor })
}
