//! Depth-7 one-dimensional GoogLeNet variant.
//!
//! ```text
//! conv1 (k7 s2 p3, 64) + ReLU
//! maxpool (k3 s2 p1)
//! inception 3a  -> 256 channels
//! inception 3b  -> 480 channels
//! avgpool (k3 s2 p1)
//! reduce conv (k1, 64) + ReLU
//! global average pool over time
//! fully connected 64 -> n_classes
//! ```

mod io;

pub use io::{load_model, load_saved, save_model, save_saved, SavedModel, FORMAT_VERSION, MAGIC};

use crate::tensor::{
    self, avgpool1d, avgpool1d_backward, concat_channels, concat_channels_backward, global_avg_pool,
    global_avg_pool_backward, linear, linear_backward, maxpool1d, maxpool1d_backward, relu_backward,
    softmax_cross_entropy, ConvSpec, PoolSpec, Scalar, Tensor, TensorError,
};
use crate::tensor::conv1d_backward_opt;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a model file (bad magic bytes)")]
    BadMagic,
    #[error("unsupported model format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("model file truncated: {0}")]
    Truncated(String),
    #[error("parameter checksum mismatch: header says {expected:#010x}, blob hashes to {found:#010x}")]
    ChecksumMismatch { expected: u32, found: u32 },
    #[error("malformed model header: {0}")]
    Header(String),
}

pub type Result<T> = std::result::Result<T, ModelError>;

pub const CONV1_CHANNELS: usize = 64;
pub const REDUCE_CHANNELS: usize = 64;
/// Shortest input whose floor chain through the three stride-2 stages stays ≥ 1 at T/8.
pub const MIN_INPUT_LENGTH: usize = 8;

const CONV1: (usize, usize, usize) = (7, 2, 3);
const MAXPOOL: PoolSpec = PoolSpec { kernel: 3, stride: 2, padding: 1 };
const AVGPOOL: PoolSpec = PoolSpec { kernel: 3, stride: 2, padding: 1 };
const BRANCH_POOL: PoolSpec = PoolSpec { kernel: 3, stride: 1, padding: 1 };

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub n_classes: usize,
    pub input_length: usize,
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(in_channels: usize, n_classes: usize, input_length: usize, seed: u64) -> Self {
        Self { in_channels, n_classes, input_length, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.n_classes == 0 {
            return Err(ModelError::Config(format!(
                "in_channels ({}) and n_classes ({}) must be positive",
                self.in_channels, self.n_classes
            )));
        }
        if self.input_length < MIN_INPUT_LENGTH {
            return Err(ModelError::Config(format!(
                "input_length {} is too short for three stride-2 stages (minimum {MIN_INPUT_LENGTH})",
                self.input_length
            )));
        }
        Ok(())
    }

    /// Temporal length after each stage: input, conv1, maxpool, 3a, 3b, avgpool, reduce, global pool.
    pub fn stage_lengths(&self) -> Result<Vec<usize>> {
        let t0 = self.input_length;
        let t1 = conv1_spec(self.in_channels).output_len(t0)?;
        let t2 = MAXPOOL.output_len(t1)?;
        let t5 = AVGPOOL.output_len(t2)?;
        Ok(vec![t0, t1, t2, t2, t2, t5, t5, 1])
    }
}

fn conv1_spec(in_channels: usize) -> ConvSpec {
    ConvSpec::new(in_channels, CONV1_CHANNELS, CONV1.0, CONV1.1, CONV1.2)
}

/// Branch widths of one inception block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InceptionWidths {
    pub input: usize,
    pub branch1: usize,
    pub branch2_reduce: usize,
    pub branch2: usize,
    pub branch3_reduce: usize,
    pub branch3: usize,
    pub pool_proj: usize,
}

impl InceptionWidths {
    pub const INCEPTION_3A: Self = Self {
        input: 64,
        branch1: 64,
        branch2_reduce: 96,
        branch2: 128,
        branch3_reduce: 16,
        branch3: 32,
        pool_proj: 32,
    };
    pub const INCEPTION_3B: Self = Self {
        input: 256,
        branch1: 128,
        branch2_reduce: 128,
        branch2: 192,
        branch3_reduce: 32,
        branch3: 96,
        pool_proj: 64,
    };

    pub fn output(&self) -> usize {
        self.branch1 + self.branch2 + self.branch3 + self.pool_proj
    }
}

/// Convolution followed by ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer<S: Scalar = f32> {
    pub spec: ConvSpec,
    pub weight: Tensor<S>,
    pub bias: Tensor<S>,
}

/// Weight and bias gradients of one [`ConvLayer`].
struct ConvLayerGrads<S: Scalar> {
    weight: Vec<S>,
    bias: Vec<S>,
}

impl<S: Scalar> ConvLayer<S> {
    fn zeros(spec: ConvSpec) -> Self {
        Self { spec, weight: Tensor::zeros(&spec.weight_shape()), bias: Tensor::zeros(&[spec.out_channels]) }
    }

    pub fn forward(&self, input: &Tensor<S>) -> tensor::Result<Tensor<S>> {
        let mut out = tensor::conv1d_forward(input, &self.weight, &self.bias, &self.spec)?;
        out.data_mut().iter_mut().for_each(|v| *v = v.max(S::zero()));
        Ok(out)
    }

    /// Back through ReLU and the convolution. `output` is this layer's post-ReLU output,
    /// which is positive exactly where the pre-activation was.
    fn backward(
        &self,
        input: &Tensor<S>,
        output: &Tensor<S>,
        upstream: &Tensor<S>,
        want_input: bool,
    ) -> tensor::Result<(Option<Tensor<S>>, ConvLayerGrads<S>)> {
        let pre = relu_backward(output, upstream)?;
        let g = conv1d_backward_opt(input, &self.weight, &self.spec, &pre, want_input)?;
        Ok((g.input, ConvLayerGrads { weight: g.weight.into_data(), bias: g.bias.into_data() }))
    }
}

/// Four parallel branches (1×1; 1×1→3-wide; 1×1→5-wide; 3-wide max-pool→1×1),
/// each ReLU-activated and concatenated across channels. Temporal length is preserved.
#[derive(Debug, Clone, PartialEq)]
pub struct InceptionBlock<S: Scalar = f32> {
    pub widths: InceptionWidths,
    pub branch1: ConvLayer<S>,
    pub branch2_reduce: ConvLayer<S>,
    pub branch2: ConvLayer<S>,
    pub branch3_reduce: ConvLayer<S>,
    pub branch3: ConvLayer<S>,
    pub pool_proj: ConvLayer<S>,
}

struct InceptionTrace<S: Scalar> {
    b1: Tensor<S>,
    b2r: Tensor<S>,
    b2: Tensor<S>,
    b3r: Tensor<S>,
    b3: Tensor<S>,
    pooled: Tensor<S>,
    pool_argmax: Vec<usize>,
    pp: Tensor<S>,
}

const BRANCH_NAMES: [&str; 6] = ["branch1", "branch2_reduce", "branch2", "branch3_reduce", "branch3", "pool_proj"];

impl<S: Scalar> InceptionBlock<S> {
    pub fn zeros(w: InceptionWidths) -> Self {
        Self {
            widths: w,
            branch1: ConvLayer::zeros(ConvSpec::pointwise(w.input, w.branch1)),
            branch2_reduce: ConvLayer::zeros(ConvSpec::pointwise(w.input, w.branch2_reduce)),
            branch2: ConvLayer::zeros(ConvSpec::new(w.branch2_reduce, w.branch2, 3, 1, 1)),
            branch3_reduce: ConvLayer::zeros(ConvSpec::pointwise(w.input, w.branch3_reduce)),
            branch3: ConvLayer::zeros(ConvSpec::new(w.branch3_reduce, w.branch3, 5, 1, 2)),
            pool_proj: ConvLayer::zeros(ConvSpec::pointwise(w.input, w.pool_proj)),
        }
    }

    /// Branch layers in parameter order.
    fn layers(&self) -> [&ConvLayer<S>; 6] {
        [&self.branch1, &self.branch2_reduce, &self.branch2, &self.branch3_reduce, &self.branch3, &self.pool_proj]
    }

    fn layers_mut(&mut self) -> [&mut ConvLayer<S>; 6] {
        [
            &mut self.branch1,
            &mut self.branch2_reduce,
            &mut self.branch2,
            &mut self.branch3_reduce,
            &mut self.branch3,
            &mut self.pool_proj,
        ]
    }

    pub fn forward(&self, input: &Tensor<S>) -> tensor::Result<Tensor<S>> {
        Ok(self.forward_traced(input)?.0)
    }

    fn forward_traced(&self, input: &Tensor<S>) -> tensor::Result<(Tensor<S>, InceptionTrace<S>)> {
        let (c, _) = input.dims2("inception")?;
        if c != self.widths.input {
            return Err(TensorError::Shape {
                op: "inception",
                detail: format!("input has {c} channels, block expects {}", self.widths.input),
            });
        }
        let b1 = self.branch1.forward(input)?;
        let b2r = self.branch2_reduce.forward(input)?;
        let b2 = self.branch2.forward(&b2r)?;
        let b3r = self.branch3_reduce.forward(input)?;
        let b3 = self.branch3.forward(&b3r)?;
        let (pooled, pool_argmax) = maxpool1d(input, &BRANCH_POOL)?;
        let pp = self.pool_proj.forward(&pooled)?;
        let out = concat_channels(&[&b1, &b2, &b3, &pp])?;
        Ok((out, InceptionTrace { b1, b2r, b2, b3r, b3, pooled, pool_argmax, pp }))
    }

    /// Returns the input gradient and the branch gradients in parameter order.
    fn backward(
        &self,
        input: &Tensor<S>,
        tr: &InceptionTrace<S>,
        upstream: &Tensor<S>,
    ) -> tensor::Result<(Tensor<S>, Vec<ConvLayerGrads<S>>)> {
        let w = &self.widths;
        let parts = concat_channels_backward(upstream, &[w.branch1, w.branch2, w.branch3, w.pool_proj])?;
        let (g_pooled, pp) = self.pool_proj.backward(&tr.pooled, &tr.pp, &parts[3], true)?;
        let (g_b3r, b3) = self.branch3.backward(&tr.b3r, &tr.b3, &parts[2], true)?;
        let (g3, b3r) = self.branch3_reduce.backward(input, &tr.b3r, &g_b3r.expect("input grad"), true)?;
        let (g_b2r, b2) = self.branch2.backward(&tr.b2r, &tr.b2, &parts[1], true)?;
        let (g2, b2r) = self.branch2_reduce.backward(input, &tr.b2r, &g_b2r.expect("input grad"), true)?;
        let (g1, b1) = self.branch1.backward(input, &tr.b1, &parts[0], true)?;

        let mut total = maxpool1d_backward(input.shape(), &tr.pool_argmax, &g_pooled.expect("input grad"))?;
        for g in [g1, g2, g3].into_iter().flatten() {
            total.data_mut().iter_mut().zip(g.data()).for_each(|(a, &b)| *a = *a + b);
        }
        Ok((total, vec![b1, b2r, b2, b3r, b3, pp]))
    }
}

/// The full classifier and its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<S: Scalar = f32> {
    config: ModelConfig,
    pub conv1: ConvLayer<S>,
    pub inception3a: InceptionBlock<S>,
    pub inception3b: InceptionBlock<S>,
    pub reduce: ConvLayer<S>,
    pub fc_weight: Tensor<S>,
    pub fc_bias: Tensor<S>,
}

/// Per-parameter gradient buffers in [`Model::parameters`] order.
pub type ParamGrads<S> = Vec<Vec<S>>;

struct Trace<S: Scalar> {
    c1: Tensor<S>,
    mp_argmax: Vec<usize>,
    mp: Tensor<S>,
    t3a: InceptionTrace<S>,
    out3a: Tensor<S>,
    t3b: InceptionTrace<S>,
    out3b: Tensor<S>,
    ap: Tensor<S>,
    red: Tensor<S>,
    gap: Tensor<S>,
}

/// Builds the f32 training model with seeded initial weights.
pub fn build_model(config: ModelConfig) -> Result<Model<f32>> {
    Model::new(config)
}

fn fnv1a(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

impl<S: Scalar> Model<S> {
    /// Allocates the stack with all-zero parameters.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        config.stage_lengths()?;
        Ok(Self {
            config,
            conv1: ConvLayer::zeros(conv1_spec(config.in_channels)),
            inception3a: InceptionBlock::zeros(InceptionWidths::INCEPTION_3A),
            inception3b: InceptionBlock::zeros(InceptionWidths::INCEPTION_3B),
            reduce: ConvLayer::zeros(ConvSpec::pointwise(InceptionWidths::INCEPTION_3B.output(), REDUCE_CHANNELS)),
            fc_weight: Tensor::zeros(&[config.n_classes, REDUCE_CHANNELS]),
            fc_bias: Tensor::zeros(&[config.n_classes]),
        })
    }

    /// Fan-in scaled uniform weights, zero biases. Each weight tensor draws from its own
    /// ChaCha stream selected by a hash of the parameter name.
    pub fn new(config: ModelConfig) -> Result<Self> {
        let mut model = Self::zeros(config)?;
        for (name, param) in model.parameters_mut() {
            if !name.ends_with(".weight") {
                continue;
            }
            let fan_in: usize = param.shape()[1..].iter().product();
            let bound = if name == "fc.weight" {
                (1.0 / fan_in as f64).sqrt()
            } else {
                (6.0 / fan_in as f64).sqrt()
            };
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(fnv1a(&name));
            for v in param.data_mut() {
                let u: f64 = rng.random_range(-bound..bound);
                *v = S::of_f64(u as f32 as f64);
            }
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn conv_layers(&self) -> Vec<(String, &ConvLayer<S>)> {
        let mut out = vec![("conv1".to_string(), &self.conv1)];
        for (block_name, block) in [("inception3a", &self.inception3a), ("inception3b", &self.inception3b)] {
            for (name, layer) in BRANCH_NAMES.iter().zip(block.layers()) {
                out.push((format!("{block_name}.{name}"), layer));
            }
        }
        out.push(("reduce".to_string(), &self.reduce));
        out
    }

    /// Named parameters in canonical order.
    pub fn parameters(&self) -> Vec<(String, &Tensor<S>)> {
        let mut out = Vec::new();
        for (prefix, layer) in self.conv_layers() {
            out.push((format!("{prefix}.weight"), &layer.weight));
            out.push((format!("{prefix}.bias"), &layer.bias));
        }
        out.push(("fc.weight".into(), &self.fc_weight));
        out.push(("fc.bias".into(), &self.fc_bias));
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<(String, &mut Tensor<S>)> {
        let mut layers: Vec<(String, &mut ConvLayer<S>)> = vec![("conv1".to_string(), &mut self.conv1)];
        for (block_name, block) in [("inception3a", &mut self.inception3a), ("inception3b", &mut self.inception3b)] {
            for (name, layer) in BRANCH_NAMES.iter().zip(block.layers_mut()) {
                layers.push((format!("{block_name}.{name}"), layer));
            }
        }
        layers.push(("reduce".to_string(), &mut self.reduce));
        let mut out = Vec::new();
        for (prefix, layer) in layers {
            out.push((format!("{prefix}.weight"), &mut layer.weight));
            out.push((format!("{prefix}.bias"), &mut layer.bias));
        }
        out.push(("fc.weight".into(), &mut self.fc_weight));
        out.push(("fc.bias".into(), &mut self.fc_bias));
        out
    }

    pub fn param_count(&self) -> usize {
        self.parameters().iter().map(|(_, t)| t.len()).sum()
    }

    fn check_input(&self, x: &Tensor<S>) -> tensor::Result<()> {
        let (c, t) = x.dims2("model forward")?;
        if c != self.config.in_channels || t != self.config.input_length {
            return Err(TensorError::Shape {
                op: "model forward",
                detail: format!(
                    "sample is {c}×{t}, model expects {}×{}",
                    self.config.in_channels, self.config.input_length
                ),
            });
        }
        Ok(())
    }

    fn forward_traced(&self, x: &Tensor<S>) -> tensor::Result<(Tensor<S>, Trace<S>)> {
        self.check_input(x)?;
        let c1 = self.conv1.forward(x)?;
        let (mp, mp_argmax) = maxpool1d(&c1, &MAXPOOL)?;
        let (out3a, t3a) = self.inception3a.forward_traced(&mp)?;
        let (out3b, t3b) = self.inception3b.forward_traced(&out3a)?;
        let ap = avgpool1d(&out3b, &AVGPOOL)?;
        let red = self.reduce.forward(&ap)?;
        let gap = global_avg_pool(&red)?;
        let logits = linear(&gap, &self.fc_weight, &self.fc_bias)?;
        Ok((logits, Trace { c1, mp_argmax, mp, t3a, out3a, t3b, out3b, ap, red, gap }))
    }

    /// Logits for one channels×time sample.
    pub fn forward_sample(&self, x: &Tensor<S>) -> tensor::Result<Tensor<S>> {
        Ok(self.forward_traced(x)?.0)
    }

    /// Logits `B×n_classes` for a `B×C×T` batch.
    pub fn forward(&self, batch: &Tensor<S>) -> tensor::Result<Tensor<S>> {
        let [b, _, _] = batch.shape()[..] else {
            return Err(TensorError::Shape {
                op: "model forward",
                detail: format!("expected B×C×T batch, got {:?}", batch.shape()),
            });
        };
        let mut out = Vec::with_capacity(b * self.config.n_classes);
        for i in 0..b {
            out.extend_from_slice(self.forward_sample(&batch.batch_item(i)?)?.data());
        }
        Tensor::from_vec(&[b, self.config.n_classes], out)
    }

    /// Cross-entropy loss of one sample and the gradient of every parameter.
    pub fn loss_and_grad(&self, x: &Tensor<S>, label: usize) -> tensor::Result<(S, ParamGrads<S>)> {
        let (logits, tr) = self.forward_traced(x)?;
        let (loss, g_logits) = softmax_cross_entropy(logits.data(), label)?;
        let g_logits = Tensor::from_vec(&[self.config.n_classes], g_logits)?;

        let fc = linear_backward(&tr.gap, &self.fc_weight, &g_logits)?;
        let g_red = global_avg_pool_backward(tr.red.shape(), &fc.input)?;
        let (g_ap, reduce) = self.reduce.backward(&tr.ap, &tr.red, &g_red, true)?;
        let g_3b = avgpool1d_backward(tr.out3b.shape(), &AVGPOOL, &g_ap.expect("input grad"))?;
        let (g_3a, grads_3b) = self.inception3b.backward(&tr.out3a, &tr.t3b, &g_3b)?;
        let (g_mp, grads_3a) = self.inception3a.backward(&tr.mp, &tr.t3a, &g_3a)?;
        let g_c1 = maxpool1d_backward(tr.c1.shape(), &tr.mp_argmax, &g_mp)?;
        let (_, conv1) = self.conv1.backward(x, &tr.c1, &g_c1, false)?;

        let mut grads = Vec::with_capacity(2 * 14 + 2);
        for g in std::iter::once(conv1).chain(grads_3a).chain(grads_3b).chain(std::iter::once(reduce)) {
            grads.push(g.weight);
            grads.push(g.bias);
        }
        grads.push(fc.weight.into_data());
        grads.push(fc.bias.into_data());
        Ok((loss, grads))
    }
}

#[cfg(test)]
mod tests;
