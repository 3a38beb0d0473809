//! Classical layers with hand-written backward passes, softmax
//! cross-entropy and Adam.
//!
//! Images are stored height x width x channels, row-major. Convolution
//! kernels are `[out_channels, in_channels, kh, kw]`; dense weights are
//! `[out, in]`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Shaped value buffer with a gradient buffer of the same length.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    values: Vec<T>,
    grad: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, values: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != values.len() {
            return Err(Error::Dimension(format!(
                "shape {shape:?} holds {n} values, got {}",
                values.len()
            )));
        }
        Ok(Self { grad: vec![T::zero(); n], shape, values })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self { shape, values: vec![T::zero(); n], grad: vec![T::zero(); n] }
    }

    /// Values drawn uniformly from `[low, high)`.
    pub fn uniform<R: Rng>(shape: Vec<usize>, low: f64, high: f64, rng: &mut R) -> Self {
        let n: usize = shape.iter().product();
        let values = (0..n).map(|_| T::lit(rng.gen_range(low..high))).collect();
        Self { shape, values, grad: vec![T::zero(); n] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn grad(&self) -> &[T] {
        &self.grad
    }

    pub fn grad_mut(&mut self) -> &mut [T] {
        &mut self.grad
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = T::zero());
    }

    pub fn accumulate_grad(&mut self, g: &[T]) {
        debug_assert_eq!(g.len(), self.grad.len());
        for (a, &b) in self.grad.iter_mut().zip(g) {
            *a = *a + b;
        }
    }

    fn dims3(&self) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [h, w, c] => Ok((h, w, c)),
            _ => Err(Error::Dimension(format!("expected HxWxC tensor, got {:?}", self.shape))),
        }
    }
}

fn kernel_dims<T: Scalar>(kernels: &Tensor<T>) -> Result<(usize, usize, usize, usize)> {
    match kernels.shape[..] {
        [o, c, kh, kw] => Ok((o, c, kh, kw)),
        _ => Err(Error::Dimension(format!("expected [out, in, kh, kw] kernels, got {:?}", kernels.shape))),
    }
}

/// Output spatial size of a valid convolution.
pub fn conv_out_dim(input: usize, kernel: usize, stride: usize) -> usize {
    (input - kernel) / stride + 1
}

/// Valid (unpadded) cross-correlation plus per-channel bias.
pub fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
) -> Result<Tensor<T>> {
    let (h, w, c) = input.dims3()?;
    let (oc, ic, kh, kw) = kernel_dims(kernels)?;
    if ic != c || h < kh || w < kw || stride == 0 || bias.len() != oc {
        return Err(Error::Dimension(format!(
            "conv {:?} with kernels {:?}, bias {:?}, stride {stride}",
            input.shape, kernels.shape, bias.shape
        )));
    }
    let (oh, ow) = (conv_out_dim(h, kh, stride), conv_out_dim(w, kw, stride));
    let mut out = vec![T::zero(); oh * ow * oc];
    let x = input.values();
    let k = kernels.values();
    for oy in 0..oh {
        for ox in 0..ow {
            for o in 0..oc {
                let mut acc = bias.values()[o];
                for ky in 0..kh {
                    for kx in 0..kw {
                        let base = ((oy * stride + ky) * w + ox * stride + kx) * c;
                        for ch in 0..c {
                            acc = acc + x[base + ch] * k[((o * ic + ch) * kh + ky) * kw + kx];
                        }
                    }
                }
                out[(oy * ow + ox) * oc + o] = acc;
            }
        }
    }
    Tensor::new(vec![oh, ow, oc], out)
}

pub struct ConvGrads<T> {
    pub input: Vec<T>,
    pub kernels: Vec<T>,
    pub bias: Vec<T>,
}

pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    stride: usize,
    grad_out: &[T],
) -> Result<ConvGrads<T>> {
    let (h, w, c) = input.dims3()?;
    let (oc, ic, kh, kw) = kernel_dims(kernels)?;
    let (oh, ow) = (conv_out_dim(h, kh, stride), conv_out_dim(w, kw, stride));
    if grad_out.len() != oh * ow * oc {
        return Err(Error::Dimension("conv gradient has wrong length".into()));
    }
    let x = input.values();
    let k = kernels.values();
    let mut gi = vec![T::zero(); x.len()];
    let mut gk = vec![T::zero(); k.len()];
    let mut gb = vec![T::zero(); oc];
    for oy in 0..oh {
        for ox in 0..ow {
            for o in 0..oc {
                let g = grad_out[(oy * ow + ox) * oc + o];
                gb[o] = gb[o] + g;
                for ky in 0..kh {
                    for kx in 0..kw {
                        let base = ((oy * stride + ky) * w + ox * stride + kx) * c;
                        for ch in 0..c {
                            let ki = ((o * ic + ch) * kh + ky) * kw + kx;
                            gk[ki] = gk[ki] + g * x[base + ch];
                            gi[base + ch] = gi[base + ch] + g * k[ki];
                        }
                    }
                }
            }
        }
    }
    Ok(ConvGrads { input: gi, kernels: gk, bias: gb })
}

/// Mean over non-overlapping `(wh, ww)` windows.
pub fn avgpool2d<T: Scalar>(input: &Tensor<T>, window: (usize, usize)) -> Result<Tensor<T>> {
    let (h, w, c) = input.dims3()?;
    let (wh, ww) = window;
    if wh == 0 || ww == 0 || h % wh != 0 || w % ww != 0 {
        return Err(Error::Dimension(format!(
            "{h}x{w} input not divisible by {wh}x{ww} pooling window"
        )));
    }
    let (oh, ow) = (h / wh, w / ww);
    let scale = T::one() / T::lit((wh * ww) as f64);
    let x = input.values();
    let mut out = vec![T::zero(); oh * ow * c];
    for y in 0..h {
        for xx in 0..w {
            let dst = ((y / wh) * ow + xx / ww) * c;
            for ch in 0..c {
                out[dst + ch] = out[dst + ch] + x[(y * w + xx) * c + ch];
            }
        }
    }
    out.iter_mut().for_each(|v| *v = *v * scale);
    Tensor::new(vec![oh, ow, c], out)
}

pub fn avgpool2d_backward<T: Scalar>(
    input_shape: &[usize],
    window: (usize, usize),
    grad_out: &[T],
) -> Result<Vec<T>> {
    let [h, w, c] = input_shape[..] else {
        return Err(Error::Dimension(format!("expected HxWxC shape, got {input_shape:?}")));
    };
    let (wh, ww) = window;
    let ow = w / ww;
    if grad_out.len() != (h / wh) * ow * c {
        return Err(Error::Dimension("pool gradient has wrong length".into()));
    }
    let scale = T::one() / T::lit((wh * ww) as f64);
    let mut gi = vec![T::zero(); h * w * c];
    for y in 0..h {
        for x in 0..w {
            let src = ((y / wh) * ow + x / ww) * c;
            for ch in 0..c {
                gi[(y * w + x) * c + ch] = grad_out[src + ch] * scale;
            }
        }
    }
    Ok(gi)
}

/// `W x + b`.
pub fn dense_forward<T: Scalar>(input: &[T], weights: &Tensor<T>, bias: &Tensor<T>) -> Result<Vec<T>> {
    let [out_dim, in_dim] = weights.shape[..] else {
        return Err(Error::Dimension(format!("dense weights must be 2-D, got {:?}", weights.shape)));
    };
    if in_dim != input.len() || bias.len() != out_dim {
        return Err(Error::Dimension(format!(
            "dense {out_dim}x{in_dim} applied to {} inputs with {} biases",
            input.len(),
            bias.len()
        )));
    }
    let w = weights.values();
    Ok((0..out_dim)
        .map(|o| {
            w[o * in_dim..(o + 1) * in_dim]
                .iter()
                .zip(input)
                .fold(bias.values()[o], |acc, (&a, &b)| acc + a * b)
        })
        .collect())
}

pub struct DenseGrads<T> {
    pub input: Vec<T>,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

pub fn dense_backward<T: Scalar>(input: &[T], weights: &Tensor<T>, grad_out: &[T]) -> DenseGrads<T> {
    let in_dim = input.len();
    let w = weights.values();
    let mut gi = vec![T::zero(); in_dim];
    let mut gw = vec![T::zero(); w.len()];
    for (o, &g) in grad_out.iter().enumerate() {
        let row = &w[o * in_dim..(o + 1) * in_dim];
        let grow = &mut gw[o * in_dim..(o + 1) * in_dim];
        for i in 0..in_dim {
            grow[i] = g * input[i];
            gi[i] = gi[i] + g * row[i];
        }
    }
    DenseGrads { input: gi, weights: gw, bias: grad_out.to_vec() }
}

pub fn relu<T: Scalar>(x: &[T]) -> Vec<T> {
    x.iter().map(|&v| v.max(T::zero())).collect()
}

pub fn relu_backward<T: Scalar>(pre: &[T], grad: &[T]) -> Vec<T> {
    pre.iter()
        .zip(grad)
        .map(|(&p, &g)| if p > T::zero() { g } else { T::zero() })
        .collect()
}

pub fn sigmoid<T: Scalar>(x: &[T]) -> Vec<T> {
    x.iter().map(|&v| T::one() / (T::one() + (-v).exp())).collect()
}

/// Backward through a sigmoid given its outputs.
pub fn sigmoid_backward<T: Scalar>(out: &[T], grad: &[T]) -> Vec<T> {
    out.iter().zip(grad).map(|(&s, &g)| g * s * (T::one() - s)).collect()
}

pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `-log softmax(logits)[label]` and its gradient `softmax - onehot`.
pub fn softmax_cross_entropy<T: Scalar>(logits: &[T], label: usize) -> Result<(T, Vec<T>)> {
    if label >= logits.len() {
        return Err(Error::Data(format!("label {label} outside {} classes", logits.len())));
    }
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let log_sum = logits.iter().map(|&l| (l - max).exp()).sum::<T>().ln() + max;
    let loss = log_sum - logits[label];
    let mut grad = softmax(logits);
    grad[label] = grad[label] - T::one();
    Ok((loss, grad))
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub learning_rate: T,
    pub beta1: T,
    pub beta2: T,
    pub epsilon: T,
    step_count: u64,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(learning_rate: T) -> Self {
        Self {
            learning_rate,
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            epsilon: T::lit(1e-8),
            step_count: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Update every tensor from its gradient buffer, then zero the gradients.
    pub fn step(&mut self, params: &mut [&mut Tensor<T>]) -> Result<()> {
        if self.first.is_empty() {
            self.first = params.iter().map(|p| vec![T::zero(); p.len()]).collect();
            self.second = self.first.clone();
        }
        if self.first.len() != params.len()
            || self.first.iter().zip(params.iter()).any(|(m, p)| m.len() != p.len())
        {
            return Err(Error::Dimension("parameter set changed between Adam steps".into()));
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = T::one() - self.beta1.powi(t);
        let bc2 = T::one() - self.beta2.powi(t);
        for ((p, m), v) in params.iter_mut().zip(&mut self.first).zip(&mut self.second) {
            let Tensor { values, grad, .. } = &mut **p;
            for i in 0..values.len() {
                let g = grad[i];
                m[i] = self.beta1 * m[i] + (T::one() - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (T::one() - self.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                values[i] = values[i] - self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
                grad[i] = T::zero();
            }
        }
        Ok(())
    }
}
