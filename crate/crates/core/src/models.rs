//! The three hybrid architectures (QuanNN, QCNN, QResNet) behind one
//! forward/backward/train/evaluate contract, plus JSON checkpoints.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grad::{evaluate as eval_circuit, Derivatives, QuantumLayerEval};
use crate::nn::{self, Adam, Tensor};
use crate::scalar::Scalar;
use crate::templates::{qcnn_block, qcnn_max_stages, CircuitTemplate, EntanglerKind, MAX_LAYERS};

pub const N_CLASSES: usize = 4;
/// Layer count used wherever an experiment does not vary it.
pub const DEFAULT_LAYERS: usize = 4;
pub const IMAGE_SIDE: usize = 28;

const CHECKPOINT_FORMAT: &str = "hqnn-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Algo {
    QuanNN,
    QCNN,
    QResNet,
}

impl Algo {
    pub const ALL: [Algo; 3] = [Algo::QuanNN, Algo::QCNN, Algo::QResNet];

    pub fn as_str(self) -> &'static str {
        match self {
            Algo::QuanNN => "quann",
            Algo::QCNN => "qcnn",
            Algo::QResNet => "qresnet",
        }
    }
}

impl fmt::Display for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "quann" | "quannn" | "quanvolutional" => Ok(Algo::QuanNN),
            "qcnn" => Ok(Algo::QCNN),
            "qresnet" => Ok(Algo::QResNet),
            other => Err(Error::Config(format!("unknown algorithm '{other}'"))),
        }
    }
}

/// One cell of the experiment grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelConfig {
    pub algo: Algo,
    pub entangler: EntanglerKind,
    pub n_layers: usize,
    pub n_qubits: usize,
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(algo: Algo, entangler: EntanglerKind, n_layers: usize, n_qubits: usize, seed: u64) -> Self {
        Self { algo, entangler, n_layers, n_qubits, seed }
    }

    pub fn validate(&self) -> Result<()> {
        match self.algo {
            Algo::QuanNN | Algo::QResNet => {
                if self.n_qubits != 4 && self.n_qubits != 9 {
                    return Err(Error::Config(format!(
                        "{} needs a square qubit count (4 or 9), got {}",
                        self.algo, self.n_qubits
                    )));
                }
                if self.n_layers == 0 || self.n_layers > MAX_LAYERS {
                    return Err(Error::Config(format!(
                        "{} takes 1..={MAX_LAYERS} layers, got {}",
                        self.algo, self.n_layers
                    )));
                }
            }
            Algo::QCNN => {
                if self.entangler != EntanglerKind::BE {
                    return Err(Error::Config(format!(
                        "QCNN only supports the basic entangling circuit, got {}",
                        self.entangler
                    )));
                }
                if self.n_qubits != 4 && self.n_qubits != 8 {
                    return Err(Error::Config(format!(
                        "QCNN needs 4 or 8 qubits, got {}",
                        self.n_qubits
                    )));
                }
                let max = qcnn_max_stages(self.n_qubits);
                if self.n_layers == 0 || self.n_layers > max {
                    return Err(Error::Config(format!(
                        "QCNN on {} qubits takes 1..={max} layers, got {}",
                        self.n_qubits, self.n_layers
                    )));
                }
            }
        }
        Ok(())
    }

    /// Stable identifier, e.g. `quann-se-l4-q9-s0`.
    pub fn run_id(&self) -> String {
        format!(
            "{}-{}-l{}-q{}-s{}",
            self.algo, self.entangler, self.n_layers, self.n_qubits, self.seed
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Conv<T> {
    kernels: Tensor<T>,
    bias: Tensor<T>,
}

impl<T: Scalar> Conv<T> {
    fn init(out_c: usize, in_c: usize, k: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / ((in_c * k * k) as f64).sqrt();
        Self {
            kernels: Tensor::uniform(vec![out_c, in_c, k, k], -bound, bound, rng),
            bias: Tensor::uniform(vec![out_c], -bound, bound, rng),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Dense<T> {
    weights: Tensor<T>,
    bias: Tensor<T>,
}

impl<T: Scalar> Dense<T> {
    fn init(out_dim: usize, in_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        Self {
            weights: Tensor::uniform(vec![out_dim, in_dim], -bound, bound, rng),
            bias: Tensor::uniform(vec![out_dim], -bound, bound, rng),
        }
    }

    fn forward(&self, x: &[T]) -> Result<Vec<T>> {
        nn::dense_forward(x, &self.weights, &self.bias)
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Stages<T> {
    /// Shared quantum filter over non-overlapping `patch x patch` tiles.
    Quanvolution { patch: usize },
    /// Padded 3x3 conv, ReLU, average pool down to one value per qubit, sigmoid.
    Downsize { conv: Conv<T>, pool: (usize, usize) },
    /// Conv, ReLU, 2x2 pool, dense projection to the qubit count, sigmoid;
    /// the quantum output is added back onto these features.
    Residual { conv: Conv<T>, proj: Dense<T> },
}

/// A hybrid model for one [`ModelConfig`] and input size.
#[derive(Clone, Debug, PartialEq)]
pub struct HybridModel<T> {
    config: ModelConfig,
    height: usize,
    width: usize,
    stages: Stages<T>,
    template: CircuitTemplate,
    quantum: Tensor<T>,
    head: Dense<T>,
}

/// Cached activations of one forward pass.
#[derive(Clone, Debug)]
pub struct Pass<T> {
    logits: Vec<T>,
    head_input: Vec<T>,
    cache: Cache<T>,
}

#[derive(Clone, Debug)]
enum Cache<T> {
    Quanvolution {
        patch_to_unique: Vec<usize>,
        evals: Vec<QuantumLayerEval<T>>,
    },
    Downsize {
        padded: Tensor<T>,
        conv_pre: Vec<T>,
        relu_shape: Vec<usize>,
        encoded: Vec<T>,
        eval: QuantumLayerEval<T>,
    },
    Residual {
        image: Tensor<T>,
        conv_pre: Vec<T>,
        relu_shape: Vec<usize>,
        pooled: Vec<T>,
        encoded: Vec<T>,
        eval: QuantumLayerEval<T>,
    },
}

impl<T> Pass<T> {
    pub fn logits(&self) -> &[T] {
        &self.logits
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Forward only.
    Eval,
    /// Forward plus the Jacobians needed by [`HybridModel::backward`].
    Train,
}

impl<T: Scalar> HybridModel<T> {
    /// Build the model for 28x28 inputs.
    pub fn new(config: ModelConfig) -> Result<Self> {
        Self::with_input_size(config, IMAGE_SIDE, IMAGE_SIDE)
    }

    pub fn with_input_size(config: ModelConfig, height: usize, width: usize) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let n = config.n_qubits;
        let (stages, template, head_in) = match config.algo {
            Algo::QuanNN => {
                let patch = (n as f64).sqrt().round() as usize;
                let template = config.entangler.build(n, config.n_layers, config.seed)?.encoded()?;
                let tiles = height.div_ceil(patch) * width.div_ceil(patch);
                (Stages::Quanvolution { patch }, template, tiles * n)
            }
            Algo::QCNN => {
                let pool = match n {
                    4 => (height / 2, width / 2),
                    _ => (height / 4, width / 2),
                };
                if pool.0 == 0 || pool.1 == 0 || !height.is_multiple_of(pool.0) || !width.is_multiple_of(pool.1) {
                    return Err(Error::Dimension(format!(
                        "{height}x{width} input cannot be pooled to {n} QCNN features"
                    )));
                }
                let conv = Conv::init(1, 1, 3, &mut rng);
                let template = qcnn_block(n, config.n_layers)?.encoded()?;
                let width_out = template.n_outputs();
                (Stages::Downsize { conv, pool }, template, width_out)
            }
            Algo::QResNet => {
                if height < 4 || width < 4 || !(height - 2).is_multiple_of(2) || !(width - 2).is_multiple_of(2) {
                    return Err(Error::Dimension(format!(
                        "{height}x{width} input unsupported by the residual extractor"
                    )));
                }
                let conv = Conv::init(1, 1, 3, &mut rng);
                let pooled = ((height - 2) / 2) * ((width - 2) / 2);
                let proj = Dense::init(n, pooled, &mut rng);
                let template = config.entangler.build(n, config.n_layers, config.seed)?.encoded()?;
                (Stages::Residual { conv, proj }, template, n)
            }
        };
        let quantum = Tensor::uniform(vec![template.n_params()], 0.0, std::f64::consts::PI, &mut rng);
        let head = Dense::init(N_CLASSES, head_in, &mut rng);
        Ok(Self { config, height, width, stages, template, quantum, head })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn input_size(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// Encoding plus variational circuit of the quantum stage.
    pub fn template(&self) -> &CircuitTemplate {
        &self.template
    }

    pub fn head_width(&self) -> usize {
        self.head.weights.shape()[0]
    }

    pub fn head_inputs(&self) -> usize {
        self.head.weights.shape()[1]
    }

    /// Named trainable tensors in a fixed order.
    pub fn params(&self) -> Vec<(&'static str, &Tensor<T>)> {
        let mut out = Vec::new();
        match &self.stages {
            Stages::Quanvolution { .. } => {}
            Stages::Downsize { conv, .. } => {
                out.push(("conv.kernels", &conv.kernels));
                out.push(("conv.bias", &conv.bias));
            }
            Stages::Residual { conv, proj } => {
                out.push(("conv.kernels", &conv.kernels));
                out.push(("conv.bias", &conv.bias));
                out.push(("proj.weights", &proj.weights));
                out.push(("proj.bias", &proj.bias));
            }
        }
        out.push(("quantum", &self.quantum));
        out.push(("head.weights", &self.head.weights));
        out.push(("head.bias", &self.head.bias));
        out
    }

    /// Mutable tensors, same order as [`HybridModel::params`].
    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        match &mut self.stages {
            Stages::Quanvolution { .. } => {}
            Stages::Downsize { conv, .. } => {
                out.push(&mut conv.kernels);
                out.push(&mut conv.bias);
            }
            Stages::Residual { conv, proj } => {
                out.push(&mut conv.kernels);
                out.push(&mut conv.bias);
                out.push(&mut proj.weights);
                out.push(&mut proj.bias);
            }
        }
        out.push(&mut self.quantum);
        out.push(&mut self.head.weights);
        out.push(&mut self.head.bias);
        out
    }

    pub fn n_trainable(&self) -> usize {
        self.params().iter().map(|(_, t)| t.len()).sum()
    }

    fn check_image(&self, image: &[T]) -> Result<()> {
        if image.len() != self.height * self.width {
            return Err(Error::Dimension(format!(
                "model expects {}x{} images, got {} pixels",
                self.height,
                self.width,
                image.len()
            )));
        }
        Ok(())
    }

    /// Pixel values of every tile, zero-padded on the right and bottom.
    /// Tile `(ty, tx)` is at index `ty * tiles_x + tx`; within a tile,
    /// pixel `(dy, dx)` feeds wire `dy * patch + dx`.
    pub fn patches(&self, image: &[T]) -> Result<Vec<Vec<T>>> {
        self.check_image(image)?;
        let Stages::Quanvolution { patch } = self.stages else {
            return Err(Error::Config(format!("{} has no patch decomposition", self.config.algo)));
        };
        let (ty_n, tx_n) = (self.height.div_ceil(patch), self.width.div_ceil(patch));
        let mut out = Vec::with_capacity(ty_n * tx_n);
        for ty in 0..ty_n {
            for tx in 0..tx_n {
                let mut p = Vec::with_capacity(patch * patch);
                for dy in 0..patch {
                    for dx in 0..patch {
                        let (y, x) = (ty * patch + dy, tx * patch + dx);
                        p.push(if y < self.height && x < self.width {
                            image[y * self.width + x]
                        } else {
                            T::zero()
                        });
                    }
                }
                out.push(p);
            }
        }
        Ok(out)
    }

    fn quantum_derivatives(&self, mode: Mode, needs_inputs: bool) -> Derivatives {
        match (mode, needs_inputs) {
            (Mode::Eval, _) => Derivatives::None,
            (Mode::Train, false) => Derivatives::Params,
            (Mode::Train, true) => Derivatives::ParamsAndInputs,
        }
    }

    pub fn forward(&self, image: &[T], mode: Mode) -> Result<Pass<T>> {
        self.check_image(image)?;
        let q = self.quantum.values();
        let (head_input, cache) = match &self.stages {
            Stages::Quanvolution { .. } => {
                let patches = self.patches(image)?;
                // Tiles with identical pixels share one circuit evaluation.
                let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
                let mut unique: Vec<&[T]> = Vec::new();
                let patch_to_unique: Vec<usize> = patches
                    .iter()
                    .map(|p| {
                        let key = p.iter().map(|v| v.as_f64().to_bits()).collect();
                        *index.entry(key).or_insert_with(|| {
                            unique.push(p);
                            unique.len() - 1
                        })
                    })
                    .collect();
                let derivs = self.quantum_derivatives(mode, false);
                let evals = unique
                    .par_iter()
                    .map(|p| eval_circuit(&self.template, q, p, derivs))
                    .collect::<Result<Vec<_>>>()?;
                let features = patch_to_unique
                    .iter()
                    .flat_map(|&u| evals[u].outputs.iter().copied())
                    .collect();
                (features, Cache::Quanvolution { patch_to_unique, evals })
            }
            Stages::Downsize { conv, pool } => {
                let padded = pad_one(image, self.height, self.width)?;
                let pre = nn::conv2d_forward(&padded, &conv.kernels, &conv.bias, 1)?;
                let relu_shape = pre.shape().to_vec();
                let act = Tensor::new(relu_shape.clone(), nn::relu(pre.values()))?;
                let pooled = nn::avgpool2d(&act, *pool)?;
                let encoded = nn::sigmoid(pooled.values());
                let eval = eval_circuit(&self.template, q, &encoded, self.quantum_derivatives(mode, true))?;
                let out = eval.outputs.clone();
                let conv_pre = pre.values().to_vec();
                (out, Cache::Downsize { padded, conv_pre, relu_shape, encoded, eval })
            }
            Stages::Residual { conv, proj } => {
                let img = Tensor::new(vec![self.height, self.width, 1], image.to_vec())?;
                let pre = nn::conv2d_forward(&img, &conv.kernels, &conv.bias, 1)?;
                let relu_shape = pre.shape().to_vec();
                let act = Tensor::new(relu_shape.clone(), nn::relu(pre.values()))?;
                let pooled = nn::avgpool2d(&act, (2, 2))?.values().to_vec();
                let encoded = nn::sigmoid(&proj.forward(&pooled)?);
                let eval = eval_circuit(&self.template, q, &encoded, self.quantum_derivatives(mode, true))?;
                let residual = encoded.iter().zip(&eval.outputs).map(|(&f, &o)| f + o).collect();
                let conv_pre = pre.values().to_vec();
                (residual, Cache::Residual { image: img, conv_pre, relu_shape, pooled, encoded, eval })
            }
        };
        let logits = self.head.forward(&head_input)?;
        Ok(Pass { logits, head_input, cache })
    }

    pub fn logits(&self, image: &[T]) -> Result<Vec<T>> {
        Ok(self.forward(image, Mode::Eval)?.logits)
    }

    pub fn predict(&self, image: &[T]) -> Result<usize> {
        Ok(argmax(&self.logits(image)?))
    }

    /// Gradients of a scalar loss, given its gradient on the logits, for
    /// every tensor of [`HybridModel::params`] (same order).
    pub fn backward(&self, pass: &Pass<T>, grad_logits: &[T]) -> Result<Vec<Vec<T>>> {
        let head = nn::dense_backward(&pass.head_input, &self.head.weights, grad_logits);
        let g_head_in = head.input;
        let missing = || Error::Config("forward pass was run without gradients".into());
        let mut grads = Vec::new();
        let g_quantum = match (&self.stages, &pass.cache) {
            (Stages::Quanvolution { .. }, Cache::Quanvolution { patch_to_unique, evals }) => {
                let n = self.template.n_outputs();
                let mut upstream = vec![vec![T::zero(); n]; evals.len()];
                for (p, &u) in patch_to_unique.iter().enumerate() {
                    for (acc, &g) in upstream[u].iter_mut().zip(&g_head_in[p * n..(p + 1) * n]) {
                        *acc = *acc + g;
                    }
                }
                let mut gq = vec![T::zero(); self.quantum.len()];
                for (eval, up) in evals.iter().zip(&upstream) {
                    let jac = eval.jac_params.as_ref().ok_or_else(missing)?;
                    for (acc, v) in gq.iter_mut().zip(jac.vjp(up)) {
                        *acc = *acc + v;
                    }
                }
                gq
            }
            (Stages::Downsize { conv, pool }, Cache::Downsize { padded, conv_pre, relu_shape, encoded, eval }) => {
                let jp = eval.jac_params.as_ref().ok_or_else(missing)?;
                let ji = eval.jac_inputs.as_ref().ok_or_else(missing)?;
                let g_enc = ji.vjp(&g_head_in);
                let g_pooled = nn::sigmoid_backward(encoded, &g_enc);
                let g_act = nn::avgpool2d_backward(relu_shape, *pool, &g_pooled)?;
                let g_pre = nn::relu_backward(conv_pre, &g_act);
                let cg = nn::conv2d_backward(padded, &conv.kernels, 1, &g_pre)?;
                grads.push(cg.kernels);
                grads.push(cg.bias);
                jp.vjp(&g_head_in)
            }
            (Stages::Residual { conv, proj }, Cache::Residual { image, conv_pre, relu_shape, pooled, encoded, eval }) => {
                let jp = eval.jac_params.as_ref().ok_or_else(missing)?;
                let ji = eval.jac_inputs.as_ref().ok_or_else(missing)?;
                // Skip path plus the path through the circuit inputs.
                let g_enc: Vec<T> = g_head_in.iter().zip(ji.vjp(&g_head_in)).map(|(&a, b)| a + b).collect();
                let g_proj_out = nn::sigmoid_backward(encoded, &g_enc);
                let pg = nn::dense_backward(pooled, &proj.weights, &g_proj_out);
                let g_act = nn::avgpool2d_backward(relu_shape, (2, 2), &pg.input)?;
                let g_pre = nn::relu_backward(conv_pre, &g_act);
                let cg = nn::conv2d_backward(image, &conv.kernels, 1, &g_pre)?;
                grads.push(cg.kernels);
                grads.push(cg.bias);
                grads.push(pg.weights);
                grads.push(pg.bias);
                jp.vjp(&g_head_in)
            }
            _ => return Err(Error::Config("forward pass does not belong to this model".into())),
        };
        grads.push(g_quantum);
        grads.push(head.weights);
        grads.push(head.bias);
        Ok(grads)
    }

    /// Cross-entropy of one sample and its parameter gradients.
    pub fn loss_and_grads(&self, image: &[T], label: usize) -> Result<(T, usize, Vec<Vec<T>>)> {
        let pass = self.forward(image, Mode::Train)?;
        let (loss, g) = nn::softmax_cross_entropy(&pass.logits, label)?;
        let grads = self.backward(&pass, &g)?;
        Ok((loss, argmax(&pass.logits), grads))
    }

    pub fn loss(&self, image: &[T], label: usize) -> Result<T> {
        Ok(nn::softmax_cross_entropy(&self.logits(image)?, label)?.0)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            config: self.config,
            height: self.height,
            width: self.width,
            tensors: self
                .params()
                .into_iter()
                .map(|(name, t)| TensorRecord {
                    name: name.to_string(),
                    shape: t.shape().to_vec(),
                    values: t.values().iter().map(|v| v.as_f64()).collect(),
                })
                .collect(),
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.format != CHECKPOINT_FORMAT || ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Format {
                offset: 0,
                msg: format!("unsupported checkpoint {} v{}", ckpt.format, ckpt.version),
            });
        }
        let mut model = Self::with_input_size(ckpt.config, ckpt.height, ckpt.width)?;
        let names: Vec<&str> = model.params().iter().map(|(n, _)| *n).collect();
        if names.len() != ckpt.tensors.len() {
            return Err(Error::Format { offset: 0, msg: "checkpoint tensor count mismatch".into() });
        }
        for ((name, tensor), rec) in names.into_iter().zip(model.params_mut()).zip(&ckpt.tensors) {
            if rec.name != name || rec.shape != tensor.shape() || rec.values.len() != tensor.len() {
                return Err(Error::Format {
                    offset: 0,
                    msg: format!("checkpoint tensor '{}' does not match '{name}'", rec.name),
                });
            }
            for (dst, &src) in tensor.values_mut().iter_mut().zip(&rec.values) {
                *dst = T::lit(src);
            }
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(&self.checkpoint())
            .map_err(|e| Error::Data(format!("serialising checkpoint: {e}")))?;
        std::fs::write(path, json).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let ckpt: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::Format {
            offset: e.line() as u64,
            msg: format!("checkpoint JSON: {e}"),
        })?;
        Self::from_checkpoint(&ckpt)
    }
}

fn pad_one<T: Scalar>(image: &[T], h: usize, w: usize) -> Result<Tensor<T>> {
    let (ph, pw) = (h + 2, w + 2);
    let mut out = vec![T::zero(); ph * pw];
    for y in 0..h {
        out[(y + 1) * pw + 1..(y + 1) * pw + 1 + w].copy_from_slice(&image[y * w..(y + 1) * w]);
    }
    Tensor::new(vec![ph, pw, 1], out)
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<T: Scalar>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Versioned, flat model record: config plus every trainable tensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: ModelConfig,
    pub height: usize,
    pub width: usize,
    pub tensors: Vec<TensorRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// Mean loss and accuracy of one optimizer step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats<T> {
    pub loss: T,
    pub accuracy: f64,
}

/// Forward and backward every sample, average the gradients and take one
/// Adam step. Per-sample work runs in parallel; gradients are summed in
/// batch order.
pub fn train_step<T: Scalar>(
    model: &mut HybridModel<T>,
    optimizer: &mut Adam<T>,
    batch: &[(&[T], usize)],
) -> Result<StepStats<T>> {
    if batch.is_empty() {
        return Err(Error::Data("empty training batch".into()));
    }
    let results = {
        let m = &*model;
        batch
            .par_iter()
            .map(|(image, label)| m.loss_and_grads(image, *label))
            .collect::<Result<Vec<_>>>()?
    };
    let inv = T::one() / T::lit(batch.len() as f64);
    let mut total = T::zero();
    let mut correct = 0usize;
    let mut params = model.params_mut();
    for ((loss, pred, grads), (_, label)) in results.iter().zip(batch) {
        total = total + *loss;
        correct += usize::from(*pred == *label);
        for (p, g) in params.iter_mut().zip(grads) {
            let scaled: Vec<T> = g.iter().map(|&v| v * inv).collect();
            p.accumulate_grad(&scaled);
        }
    }
    optimizer.step(&mut params)?;
    Ok(StepStats { loss: total * inv, accuracy: correct as f64 / batch.len() as f64 })
}

/// Fraction of samples whose argmax logit equals the label.
pub fn evaluate<T: Scalar>(model: &HybridModel<T>, samples: &[(&[T], usize)]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Data("cannot evaluate on an empty dataset".into()));
    }
    let hits = samples
        .par_iter()
        .map(|(image, label)| model.predict(image).map(|p| usize::from(p == *label)))
        .collect::<Result<Vec<_>>>()?;
    Ok(hits.iter().sum::<usize>() as f64 / samples.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(algo: Algo, ent: EntanglerKind, layers: usize, qubits: usize) -> ModelConfig {
        ModelConfig::new(algo, ent, layers, qubits, 0)
    }

    fn zero_params<T: Scalar>(model: &mut HybridModel<T>) {
        for t in model.params_mut() {
            t.values_mut().iter_mut().for_each(|v| *v = T::zero());
        }
    }

    fn gradient_image(h: usize, w: usize) -> Vec<f64> {
        (0..h * w).map(|i| ((i * 37 % 101) as f64) / 100.0).collect()
    }

    #[test]
    fn config_validation() {
        use Algo::*;
        use EntanglerKind::*;
        assert!(cfg(QuanNN, RC, 6, 9).validate().is_ok());
        assert!(cfg(QuanNN, BE, 4, 8).validate().is_err());
        assert!(cfg(QResNet, SE, 7, 4).validate().is_err());
        assert!(cfg(QCNN, SE, 1, 4).validate().is_err());
        assert!(cfg(QCNN, BE, 2, 4).validate().is_ok());
        assert!(cfg(QCNN, BE, 3, 4).validate().is_err());
        assert!(cfg(QCNN, BE, 3, 8).validate().is_ok());
        assert!(cfg(QCNN, BE, 1, 9).validate().is_err());
        assert!(HybridModel::<f64>::new(cfg(QCNN, RC, 1, 4)).is_err());
        assert_eq!(cfg(QuanNN, SE, 4, 9).run_id(), "quann-se-l4-q9-s0");
    }

    #[test]
    fn quann_feature_counts() {
        let m = HybridModel::<f64>::new(cfg(Algo::QuanNN, EntanglerKind::BE, 1, 4)).unwrap();
        assert_eq!(m.head_inputs(), 14 * 14 * 4);
        let m = HybridModel::<f64>::new(cfg(Algo::QuanNN, EntanglerKind::BE, 1, 9)).unwrap();
        assert_eq!(m.head_inputs(), 10 * 10 * 9);
    }

    #[test]
    fn quann_patches_tile_padded_image_once() {
        for qubits in [4, 9] {
            let m = HybridModel::<f64>::new(cfg(Algo::QuanNN, EntanglerKind::BE, 1, qubits)).unwrap();
            let k = if qubits == 4 { 2 } else { 3 };
            let image: Vec<f64> = (0..784).map(|i| (i + 1) as f64).collect();
            let patches = m.patches(&image).unwrap();
            let side = 28usize.div_ceil(k);
            let padded = side * k;
            let mut rebuilt = vec![-1.0; padded * padded];
            for (t, p) in patches.iter().enumerate() {
                let (ty, tx) = (t / side, t % side);
                for (i, &v) in p.iter().enumerate() {
                    let cell = &mut rebuilt[(ty * k + i / k) * padded + tx * k + i % k];
                    assert_eq!(*cell, -1.0, "tile overlap");
                    *cell = v;
                }
            }
            for y in 0..padded {
                for x in 0..padded {
                    let want = if y < 28 && x < 28 { image[y * 28 + x] } else { 0.0 };
                    assert_eq!(rebuilt[y * padded + x], want);
                }
            }
        }
    }

    #[test]
    fn quann_zero_image_zero_angles() {
        let mut m = HybridModel::<f64>::new(cfg(Algo::QuanNN, EntanglerKind::SE, 2, 4)).unwrap();
        m.quantum.values_mut().iter_mut().for_each(|v| *v = 0.0);
        let pass = m.forward(&[0.0; 784], Mode::Eval).unwrap();
        assert!(pass.head_input.iter().all(|&v| v == 1.0));
        let ones = vec![1.0; m.head_inputs()];
        assert_eq!(pass.logits(), nn::dense_forward(&ones, &m.head.weights, &m.head.bias).unwrap().as_slice());
    }

    #[test]
    fn qcnn_shapes_and_zero_init() {
        let m = HybridModel::<f64>::new(cfg(Algo::QCNN, EntanglerKind::BE, 2, 4)).unwrap();
        assert_eq!(m.quantum.len(), 24);
        assert_eq!(m.head_inputs(), 1);
        let m8 = HybridModel::<f64>::new(cfg(Algo::QCNN, EntanglerKind::BE, 3, 8)).unwrap();
        assert_eq!(m8.template().readout().len(), 1);
        assert_eq!(m8.template().n_inputs(), 8);

        // All-zero weights: every pooled feature is sigmoid(0) = 1/2, the
        // encoding yields |+>^n, which the zero-angle block leaves alone,
        // so the surviving <Z> is 0 whatever the image.
        let mut m = m;
        zero_params(&mut m);
        for image in [vec![0.0; 784], gradient_image(28, 28)] {
            let pass = m.forward(&image, Mode::Eval).unwrap();
            assert!(pass.head_input[0].abs() < 1e-12, "{:?}", pass.head_input);
        }
    }

    #[test]
    fn qresnet_residual_sum() {
        let mut m = HybridModel::<f64>::new(cfg(Algo::QResNet, EntanglerKind::BE, 2, 4)).unwrap();
        m.quantum.values_mut().iter_mut().for_each(|v| *v = 0.0);
        let image = gradient_image(28, 28);
        let pass = m.forward(&image, Mode::Eval).unwrap();
        let Cache::Residual { encoded: f, .. } = &pass.cache else { panic!() };
        let c: Vec<f64> = f.iter().map(|&x| (std::f64::consts::PI * x).cos()).collect();
        let q = crate::grad::forward(m.template(), m.quantum.values(), f).unwrap();
        for i in 0..4 {
            assert!((pass.head_input[i] - (f[i] + q[i])).abs() < 1e-12);
        }
        // Zero RX angles leave only the CNOT ring, a basis permutation that
        // XORs the encoded bits, so each <Z> is a product of cos(pi f_j).
        let one = crate::templates::basic_entangling(4, 1).unwrap().encoded().unwrap();
        let q1 = crate::grad::forward(&one, &[0.0; 4], f).unwrap();
        let want = [c[1] * c[2] * c[3], c[0] * c[1], c[0] * c[1] * c[2], c[0] * c[1] * c[2] * c[3]];
        for i in 0..4 {
            assert!((q1[i] - want[i]).abs() < 1e-12, "{q1:?} vs {want:?}");
        }

        let zeros = crate::grad::forward(m.template(), m.quantum.values(), &[0.0; 4]).unwrap();
        assert!(zeros.iter().all(|&z| (z - 1.0).abs() < 1e-12));
        assert_eq!(m.head_width(), N_CLASSES);
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = HybridModel::<f64>::new(cfg(Algo::QResNet, EntanglerKind::RC, 3, 4)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        m.save(&path).unwrap();
        let back = HybridModel::<f64>::load(&path).unwrap();
        assert_eq!(back, m);

        let mut bad = m.checkpoint();
        bad.version = 99;
        assert!(HybridModel::<f64>::from_checkpoint(&bad).is_err());
        let mut bad = m.checkpoint();
        bad.tensors[0].values.pop();
        assert!(HybridModel::<f64>::from_checkpoint(&bad).is_err());
    }

    #[test]
    fn eval_pass_cannot_backprop() {
        let m = HybridModel::<f64>::new(cfg(Algo::QuanNN, EntanglerKind::BE, 1, 4)).unwrap();
        let pass = m.forward(&[0.5; 784], Mode::Eval).unwrap();
        assert!(m.backward(&pass, &[0.0; 4]).is_err());
        assert!(m.forward(&[0.5; 100], Mode::Eval).is_err());
    }

    #[test]
    fn empty_inputs_rejected() {
        let mut m = HybridModel::<f64>::new(cfg(Algo::QuanNN, EntanglerKind::BE, 1, 4)).unwrap();
        let mut opt = Adam::new(0.01);
        assert!(train_step(&mut m, &mut opt, &[]).is_err());
        assert!(evaluate(&m, &[]).is_err());
    }

    #[test]
    fn argmax_prefers_first() {
        assert_eq!(argmax(&[0.1, 0.3, 0.3, -1.0]), 1);
        assert_eq!(argmax(&[0.0f64; 4]), 0);
    }
}
