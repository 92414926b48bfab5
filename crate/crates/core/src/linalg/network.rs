//! Fully connected networks over a flat parameter vector θ.
//!
//! Parameter layout, per layer in order: the `out × in` weight matrix in
//! row-major order, then the `out` biases. Forward and backward passes
//! keep activations and gradients in `f64`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::linalg::rng::RngStream;
use crate::linalg::tensor::Tensor;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Elu,
    Identity,
}

impl Activation {
    #[inline(always)]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Elu => {
                if z > 0.0 {
                    z
                } else {
                    z.exp_m1()
                }
            }
            Activation::Identity => z,
        }
    }

    #[inline(always)]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Elu => {
                if z > 0.0 {
                    1.0
                } else {
                    z.exp()
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layer {
    pub width: usize,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub layers: Vec<Layer>,
}

impl NetworkSpec {
    /// Hidden layers share `activation`; the output layer is linear.
    pub fn mlp(input_dim: usize, hidden: &[usize], output_dim: usize, activation: Activation) -> Self {
        let mut layers: Vec<Layer> = hidden
            .iter()
            .map(|&width| Layer { width, activation })
            .collect();
        layers.push(Layer {
            width: output_dim,
            activation: Activation::Identity,
        });
        Self { input_dim, layers }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::InvalidArgument("network input dimension must be >= 1".into()));
        }
        if self.layers.is_empty() {
            return Err(Error::InvalidArgument("network needs at least one layer".into()));
        }
        if let Some(i) = self.layers.iter().position(|l| l.width == 0) {
            return Err(Error::InvalidArgument(format!("layer {i} has zero width")));
        }
        Ok(())
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.width)
    }

    /// Ambient dimension D: all weights plus all biases.
    pub fn param_count(&self) -> usize {
        self.shapes().map(|(fan_in, fan_out)| fan_in * fan_out + fan_out).sum()
    }

    /// `(fan_in, fan_out)` per layer.
    pub fn shapes(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let ins = std::iter::once(self.input_dim).chain(self.layers.iter().map(|l| l.width));
        ins.zip(self.layers.iter().map(|l| l.width))
    }

    /// Layer-wise fan-in initialization: weights and biases ~ U(-1/√fan_in, 1/√fan_in).
    pub fn init_params<T: Scalar>(&self, stream: &RngStream) -> Vec<T> {
        let mut rng = stream.rng();
        let mut theta = Vec::with_capacity(self.param_count());
        for (fan_in, fan_out) in self.shapes() {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for _ in 0..fan_in * fan_out + fan_out {
                theta.push(T::of(rng.gen_range(-bound..bound)));
            }
        }
        theta
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    CrossEntropy,
    ZeroOne,
}

/// Summed statistics of one pass over a batch.
#[derive(Debug, Clone, Copy, Default)]
pub struct BatchStats {
    /// Sum of per-example cross-entropy.
    pub loss_sum: f64,
    pub correct: usize,
    pub rows: usize,
}

#[inline]
fn dot_mixed<T: Scalar>(w: &[T], x: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let cw = w.chunks_exact(4);
    let cx = x.chunks_exact(4);
    let (rw, rx) = (cw.remainder(), cx.remainder());
    for (a, b) in cw.zip(cx) {
        acc[0] += a[0].f64() * b[0];
        acc[1] += a[1].f64() * b[1];
        acc[2] += a[2].f64() * b[2];
        acc[3] += a[3].f64() * b[3];
    }
    let mut tail = 0.0;
    for (a, b) in rw.iter().zip(rx) {
        tail += a.f64() * b;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn check_theta(spec: &NetworkSpec, len: usize) -> Result<()> {
    let d = spec.param_count();
    if len != d {
        return Err(dim_err("theta length (D)", d, len));
    }
    Ok(())
}

/// Pre-activations and activations for every layer; index 0 of `acts` is the input.
struct Trace {
    pre: Vec<Vec<f64>>,
    acts: Vec<Vec<f64>>,
}

fn forward_trace<T: Scalar>(spec: &NetworkSpec, theta: &[T], x: &[T], rows: usize) -> Trace {
    let mut acts: Vec<Vec<f64>> = vec![x.iter().map(|v| v.f64()).collect()];
    let mut pre = Vec::with_capacity(spec.layers.len());
    let mut offset = 0;
    for (layer, (fan_in, fan_out)) in spec.layers.iter().zip(spec.shapes()) {
        let w = &theta[offset..offset + fan_in * fan_out];
        let b = &theta[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
        offset += fan_in * fan_out + fan_out;
        let input = acts.last().expect("input present");
        let mut z = vec![0.0; rows * fan_out];
        for r in 0..rows {
            let xr = &input[r * fan_in..(r + 1) * fan_in];
            let zr = &mut z[r * fan_out..(r + 1) * fan_out];
            for o in 0..fan_out {
                zr[o] = b[o].f64() + dot_mixed(&w[o * fan_in..(o + 1) * fan_in], xr);
            }
        }
        let a: Vec<f64> = z.iter().map(|&v| layer.activation.apply(v)).collect();
        pre.push(z);
        acts.push(a);
    }
    Trace { pre, acts }
}

/// Cross-entropy and accuracy over `rows` examples; when `grad` is given,
/// the gradient of the *mean* cross-entropy is added into it.
///
/// No validation: callers guarantee shapes and label ranges.
pub fn forward_backward<T: Scalar>(
    spec: &NetworkSpec,
    theta: &[T],
    x: &[T],
    labels: &[usize],
    grad: Option<&mut [f64]>,
) -> BatchStats {
    let rows = labels.len();
    let trace = forward_trace(spec, theta, x, rows);
    let classes = spec.output_dim();
    let logits = trace.acts.last().expect("output layer");

    let mut stats = BatchStats {
        rows,
        ..Default::default()
    };
    let mut delta = vec![0.0; rows * classes];
    let inv_rows = 1.0 / rows as f64;
    for r in 0..rows {
        let z = &logits[r * classes..(r + 1) * classes];
        let y = labels[r];
        let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = z.iter().map(|&v| (v - max).exp()).sum();
        let lse = max + sum.ln();
        stats.loss_sum += lse - z[y];
        if argmax(z) == y {
            stats.correct += 1;
        }
        let dr = &mut delta[r * classes..(r + 1) * classes];
        for (c, d) in dr.iter_mut().enumerate() {
            *d = (z[c] - lse).exp() * inv_rows;
        }
        dr[y] -= inv_rows;
    }

    let Some(grad) = grad else {
        return stats;
    };

    let shapes: Vec<(usize, usize)> = spec.shapes().collect();
    let mut offsets = Vec::with_capacity(shapes.len());
    let mut off = 0;
    for &(fan_in, fan_out) in &shapes {
        offsets.push(off);
        off += fan_in * fan_out + fan_out;
    }

    for li in (0..spec.layers.len()).rev() {
        let (fan_in, fan_out) = shapes[li];
        let off = offsets[li];
        let input = &trace.acts[li];
        {
            let (gw, gb) = grad[off..off + fan_in * fan_out + fan_out].split_at_mut(fan_in * fan_out);
            for r in 0..rows {
                let xr = &input[r * fan_in..(r + 1) * fan_in];
                let dr = &delta[r * fan_out..(r + 1) * fan_out];
                for o in 0..fan_out {
                    let d = dr[o];
                    if d == 0.0 {
                        continue;
                    }
                    gb[o] += d;
                    for (g, &xv) in gw[o * fan_in..(o + 1) * fan_in].iter_mut().zip(xr) {
                        *g += d * xv;
                    }
                }
            }
        }
        if li == 0 {
            break;
        }
        let w = &theta[off..off + fan_in * fan_out];
        let prev_act = spec.layers[li - 1].activation;
        let prev_pre = &trace.pre[li - 1];
        let mut next = vec![0.0; rows * fan_in];
        for r in 0..rows {
            let dr = &delta[r * fan_out..(r + 1) * fan_out];
            let nr = &mut next[r * fan_in..(r + 1) * fan_in];
            for o in 0..fan_out {
                let d = dr[o];
                if d == 0.0 {
                    continue;
                }
                for (n, wv) in nr.iter_mut().zip(&w[o * fan_in..(o + 1) * fan_in]) {
                    *n += d * wv.f64();
                }
            }
            let zr = &prev_pre[r * fan_in..(r + 1) * fan_in];
            for (n, &z) in nr.iter_mut().zip(zr) {
                *n *= prev_act.derivative(z);
            }
        }
        delta = next;
    }
    stats
}

/// Per-example logits, `batch × out`.
pub fn forward<T: Scalar>(spec: &NetworkSpec, theta: &Tensor<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    check_theta(spec, theta.len())?;
    if x.shape().len() != 2 || x.shape()[1] != spec.input_dim {
        return Err(dim_err(
            "forward input",
            format!("[batch, {}]", spec.input_dim),
            format!("{:?}", x.shape()),
        ));
    }
    let rows = x.rows();
    let trace = forward_trace(spec, theta.data(), x.data(), rows);
    let out = trace.acts.last().expect("output layer");
    Tensor::matrix(rows, spec.output_dim(), out.iter().map(|&v| T::of(v)).collect())
        .map_err(|_| Error::NonFinite("forward logits"))
}

/// Inputs with their integer class labels.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a, T> {
    pub x: &'a Tensor<T>,
    pub labels: &'a [usize],
}

/// Mean loss over the batch, plus the gradient w.r.t. θ for cross-entropy.
///
/// Zero-one loss is the misclassification fraction and has no gradient;
/// asking for one is an error.
pub fn loss_and_grad<T: Scalar>(
    spec: &NetworkSpec,
    theta: &Tensor<T>,
    batch: Batch<'_, T>,
    kind: LossKind,
    want_grad: bool,
) -> Result<(f64, Option<Tensor<f64>>)> {
    check_theta(spec, theta.len())?;
    let x = batch.x;
    if x.shape().len() != 2 || x.shape()[1] != spec.input_dim {
        return Err(dim_err(
            "batch input",
            format!("[batch, {}]", spec.input_dim),
            format!("{:?}", x.shape()),
        ));
    }
    if x.rows() != batch.labels.len() {
        return Err(dim_err("batch labels", x.rows(), batch.labels.len()));
    }
    let classes = spec.output_dim();
    if let Some(&bad) = batch.labels.iter().find(|&&y| y >= classes) {
        return Err(Error::InvalidArgument(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }
    match kind {
        LossKind::ZeroOne if want_grad => Err(Error::Unsupported("zero-one loss has no gradient")),
        LossKind::ZeroOne => {
            let stats = forward_backward(spec, theta.data(), x.data(), batch.labels, None);
            Ok((1.0 - stats.correct as f64 / stats.rows as f64, None))
        }
        LossKind::CrossEntropy => {
            let mut grad = want_grad.then(|| vec![0.0; theta.len()]);
            let stats = forward_backward(spec, theta.data(), x.data(), batch.labels, grad.as_deref_mut());
            let loss = stats.loss_sum / stats.rows as f64;
            if !loss.is_finite() {
                return Err(Error::NonFinite("cross-entropy"));
            }
            let grad = grad.map(Tensor::vector).transpose()?;
            Ok((loss, grad))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::rng::gaussian_vec;

    fn small_net() -> NetworkSpec {
        NetworkSpec::mlp(4, &[6, 5], 3, Activation::Relu)
    }

    #[test]
    fn param_count_is_exact() {
        let spec = NetworkSpec::mlp(16, &[96, 64, 32], 2, Activation::Relu);
        assert_eq!(spec.param_count(), 16 * 96 + 96 + 96 * 64 + 64 + 64 * 32 + 32 + 32 * 2 + 2);
    }

    #[test]
    fn linear_net_on_unit_vector_returns_first_weight_column() {
        let spec = NetworkSpec::mlp(3, &[], 2, Activation::Relu);
        // W = [[1,2,3],[4,5,6]], b = 0
        let theta = Tensor::vector(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 0.0, 0.0]).unwrap();
        let x = Tensor::matrix(1, 3, vec![1.0, 0.0, 0.0]).unwrap();
        let out = forward(&spec, &theta, &x).unwrap();
        assert_eq!(out.data(), &[1.0, 4.0]);
    }

    #[test]
    fn zero_theta_gives_zero_logits() {
        let spec = small_net();
        let theta = Tensor::<f64>::zeros(vec![spec.param_count()]);
        let x = Tensor::matrix(2, 4, gaussian_vec(&RngStream::new(1), 8)).unwrap();
        let out = forward(&spec, &theta, &x).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_layer_relu_matches_straight_line_evaluation() {
        let spec = NetworkSpec::mlp(3, &[4], 2, Activation::Relu);
        let th: Vec<f64> = gaussian_vec(&RngStream::new(5), spec.param_count());
        let x = [0.3, -1.2, 0.7];
        // layer 1: W1 (4x3) at 0..12, b1 at 12..16; layer 2: W2 (2x4) at 16..24, b2 at 24..26
        let mut h = [0.0; 4];
        for o in 0..4 {
            let z = th[o * 3] * x[0] + th[o * 3 + 1] * x[1] + th[o * 3 + 2] * x[2] + th[12 + o];
            h[o] = if z > 0.0 { z } else { 0.0 };
        }
        let mut expect = [0.0; 2];
        for o in 0..2 {
            expect[o] = th[16 + o * 4] * h[0]
                + th[16 + o * 4 + 1] * h[1]
                + th[16 + o * 4 + 2] * h[2]
                + th[16 + o * 4 + 3] * h[3]
                + th[24 + o];
        }
        let out = forward(
            &spec,
            &Tensor::vector(th).unwrap(),
            &Tensor::matrix(1, 3, x.to_vec()).unwrap(),
        )
        .unwrap();
        for (a, b) in out.data().iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_logits_give_log_classes() {
        let spec = small_net();
        let theta = Tensor::<f64>::zeros(vec![spec.param_count()]);
        let x = Tensor::matrix(2, 4, vec![1.0; 8]).unwrap();
        let (loss, _) =
            loss_and_grad(&spec, &theta, Batch { x: &x, labels: &[0, 2] }, LossKind::CrossEntropy, false)
                .unwrap();
        assert!((loss - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn zero_one_is_zero_for_confident_correct_logits() {
        let spec = NetworkSpec::mlp(2, &[], 2, Activation::Relu);
        // identity weights with margin
        let theta = Tensor::vector(vec![5.0, 0.0, 0.0, 5.0, 0.0, 0.0]).unwrap();
        let x = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let (loss, g) =
            loss_and_grad(&spec, &theta, Batch { x: &x, labels: &[0, 1] }, LossKind::ZeroOne, false).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.is_none());
    }

    #[test]
    fn zero_one_gradient_is_rejected() {
        let spec = small_net();
        let theta = Tensor::<f64>::zeros(vec![spec.param_count()]);
        let x = Tensor::matrix(1, 4, vec![1.0; 4]).unwrap();
        let err = loss_and_grad(&spec, &theta, Batch { x: &x, labels: &[0] }, LossKind::ZeroOne, true);
        assert!(matches!(err, Err(Error::Unsupported(_))));
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let spec = small_net();
        let theta = Tensor::<f64>::zeros(vec![spec.param_count() - 1]);
        let x = Tensor::matrix(1, 4, vec![1.0; 4]).unwrap();
        assert!(matches!(forward(&spec, &theta, &x), Err(Error::Dimension { .. })));
    }

    #[test]
    fn gradient_matches_central_differences() {
        for act in [Activation::Relu, Activation::Elu] {
            let spec = NetworkSpec::mlp(5, &[7, 6], 3, act);
            let theta: Vec<f64> = gaussian_vec(&RngStream::new(11), spec.param_count());
            let x: Vec<f64> = gaussian_vec(&RngStream::new(12), 8 * 5);
            let labels = [0, 1, 2, 0, 1, 2, 2, 1];
            let mut grad = vec![0.0; theta.len()];
            forward_backward(&spec, &theta, &x, &labels, Some(&mut grad));
            let loss = |t: &[f64]| forward_backward(&spec, t, &x, &labels, None).loss_sum / 8.0;
            let h = 1e-5;
            for i in 0..theta.len() {
                let mut tp = theta.clone();
                let mut tm = theta.clone();
                tp[i] += h;
                tm[i] -= h;
                let fd = (loss(&tp) - loss(&tm)) / (2.0 * h);
                let err = (fd - grad[i]).abs() / (fd.abs().max(grad[i].abs()).max(1e-6));
                assert!(err < 1e-4 || (fd - grad[i]).abs() < 1e-9, "{act:?} coord {i}: fd {fd} vs {}", grad[i]);
            }
        }
    }

    #[test]
    fn forward_is_pure() {
        let spec = small_net();
        let theta = Tensor::vector(gaussian_vec::<f64>(&RngStream::new(3), spec.param_count())).unwrap();
        let x = Tensor::matrix(3, 4, gaussian_vec(&RngStream::new(4), 12)).unwrap();
        let a = forward(&spec, &theta, &x).unwrap();
        let b = forward(&spec, &theta, &x).unwrap();
        assert_eq!(a, b);
    }
}
