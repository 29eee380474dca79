use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::activation::{Activation, Dropout};
use super::batchnorm::{BatchNorm3d, BnCache};
use super::dense::Dense;
use super::pool::Pool3d;
use super::{ArchitectureSpec, Batch5D, Conv3d, KERNEL_TAPS};
use crate::error::{Error, Result};
use crate::math;
use crate::rng::SeededRng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Conv(Conv3d),
    BatchNorm(BatchNorm3d),
    Activation(Activation),
    Pool(Pool3d),
    Flatten,
    Dropout(Dropout),
    Dense(Dense),
}

/// What a learnable tensor is; only multiplicative weights carry the l2 penalty.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    ConvWeight,
    ConvBias,
    BnGamma,
    BnBeta,
    DenseWeight,
    DenseBias,
}

impl ParamKind {
    pub fn is_weight(self) -> bool {
        matches!(self, ParamKind::ConvWeight | ParamKind::DenseWeight)
    }
}

impl Layer {
    fn params(&self) -> Vec<(ParamKind, &Vec<f64>)> {
        match self {
            Layer::Conv(c) => vec![(ParamKind::ConvWeight, &c.weights), (ParamKind::ConvBias, &c.bias)],
            Layer::BatchNorm(b) => vec![(ParamKind::BnGamma, &b.gamma), (ParamKind::BnBeta, &b.beta)],
            Layer::Dense(d) => vec![(ParamKind::DenseWeight, &d.weights), (ParamKind::DenseBias, &d.bias)],
            _ => Vec::new(),
        }
    }

    fn params_mut(&mut self) -> Vec<(ParamKind, &mut Vec<f64>)> {
        match self {
            Layer::Conv(c) => vec![(ParamKind::ConvWeight, &mut c.weights), (ParamKind::ConvBias, &mut c.bias)],
            Layer::BatchNorm(b) => vec![(ParamKind::BnGamma, &mut b.gamma), (ParamKind::BnBeta, &mut b.beta)],
            Layer::Dense(d) => {
                vec![(ParamKind::DenseWeight, &mut d.weights), (ParamKind::DenseBias, &mut d.bias)]
            }
            _ => Vec::new(),
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Layer::Conv(_) => "conv",
            Layer::BatchNorm(_) => "bn",
            Layer::Activation(_) => "act",
            Layer::Pool(_) => "pool",
            Layer::Flatten => "flatten",
            Layer::Dropout(_) => "dropout",
            Layer::Dense(_) => "dense",
        }
    }
}

/// Output of a forward pass. `embeddings[i]` is the activation after the
/// i-th conv layer (batch-major; flatten one sample with [`Batch5D::sample`]).
#[derive(Clone, Debug, PartialEq)]
pub struct Forward {
    pub logits: Batch5D,
    pub embeddings: Vec<Batch5D>,
}

enum Aux {
    None,
    Bn(BnCache),
    Pool(Vec<usize>),
    Mask(Vec<f64>),
}

/// Everything a backward pass needs from the matching forward pass.
pub struct Tape {
    mode: Mode,
    inputs: Vec<Batch5D>,
    aux: Vec<Aux>,
}

/// Gradients aligned with [`Model::params`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Vec<f64>>,
}

/// A named state tensor (learnable parameter or batch-norm running statistic).
#[derive(Clone, Debug, PartialEq)]
pub struct StateTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// A sequential network.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    spec: Option<ArchitectureSpec>,
    layers: Vec<Layer>,
}

fn uniform_fill(rng: &mut SeededRng, n: usize, bound: f64) -> Vec<f64> {
    (0..n).map(|_| rng.uniform_range(-bound, bound)).collect()
}

fn he_uniform_conv(c_in: usize, c_out: usize, rng: &mut SeededRng) -> Conv3d {
    let fan_in = c_in * KERNEL_TAPS;
    let w = uniform_fill(rng, c_out * fan_in, math::sqrt(6.0 / fan_in as f64));
    Conv3d::from_parts(c_in, c_out, w, vec![0.0; c_out]).expect("consistent conv shapes")
}

/// Builds a family member. Conv weights are He-uniform (`±sqrt(6/fan_in)`),
/// dense weights LeCun-uniform (`±sqrt(3/fan_in)`), biases zero, BN at
/// `gamma = 1, beta = 0`. Draws happen in layer order.
pub fn build_model(spec: &ArchitectureSpec, rng: &mut SeededRng) -> Result<Model> {
    spec.validate()?;
    let mut layers = Vec::new();
    let convs = spec.conv_layers();
    let mut next = 0;
    for (block, extra) in spec.insertion_counts().into_iter().enumerate() {
        for _ in 0..=extra {
            let (ci, co) = convs[next];
            next += 1;
            layers.push(Layer::Conv(he_uniform_conv(ci, co, rng)));
            layers.push(Layer::BatchNorm(BatchNorm3d::new(co, spec.bn_momentum, spec.bn_epsilon)));
            layers.push(Layer::Activation(spec.activation));
        }
        layers.push(Layer::Pool(Pool3d::new(spec.pooling_sizes[block], spec.pool_kind)));
    }
    layers.push(Layer::Flatten);
    layers.push(Layer::Dropout(Dropout::new(spec.dropout_p)));
    let fan_in = spec.fc_input_len();
    let w = uniform_fill(rng, spec.num_classes * fan_in, math::sqrt(3.0 / fan_in as f64));
    layers.push(Layer::Dense(Dense::from_parts(fan_in, spec.num_classes, w, vec![0.0; spec.num_classes])?));
    Ok(Model { spec: Some(spec.clone()), layers })
}

impl Model {
    /// A bare layer list without an architecture spec.
    pub fn from_layers(layers: Vec<Layer>) -> Self {
        Self { spec: None, layers }
    }

    /// Plain stack of same-padded conv layers with the given filter counts.
    pub fn conv_stack(in_channels: usize, filters: &[usize], rng: &mut SeededRng) -> Self {
        let mut c = in_channels;
        let layers = filters
            .iter()
            .map(|&f| {
                let conv = he_uniform_conv(c, f, rng);
                c = f;
                Layer::Conv(conv)
            })
            .collect();
        Self::from_layers(layers)
    }

    pub fn spec(&self) -> Option<&ArchitectureSpec> {
        self.spec.as_ref()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    /// Number of learnable scalars.
    pub fn count_parameters(&self) -> usize {
        self.params().iter().map(|(_, p)| p.len()).sum()
    }

    /// Learnable scalars in conv layers only (weights and biases).
    pub fn count_conv_parameters(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match l {
                Layer::Conv(c) => c.parameter_count(),
                _ => 0,
            })
            .sum()
    }

    pub fn conv_layer_count(&self) -> usize {
        self.layers.iter().filter(|l| matches!(l, Layer::Conv(_))).count()
    }

    pub fn params(&self) -> Vec<(ParamKind, &Vec<f64>)> {
        self.layers.iter().flat_map(Layer::params).collect()
    }

    pub fn params_mut(&mut self) -> Vec<(ParamKind, &mut Vec<f64>)> {
        self.layers.iter_mut().flat_map(Layer::params_mut).collect()
    }

    /// Rounds every stored value to single precision (the checkpoint precision).
    pub fn round_to_f32(&mut self) {
        for layer in &mut self.layers {
            let tensors: Vec<&mut Vec<f64>> = match layer {
                Layer::Conv(c) => vec![&mut c.weights, &mut c.bias],
                Layer::BatchNorm(b) => vec![&mut b.gamma, &mut b.beta, &mut b.running_mean, &mut b.running_var],
                Layer::Dense(d) => vec![&mut d.weights, &mut d.bias],
                _ => Vec::new(),
            };
            for t in tensors {
                t.iter_mut().for_each(|v| *v = *v as f32 as f64);
            }
        }
    }

    /// All persistent tensors in layer order.
    pub fn state(&self) -> Vec<StateTensor> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut push = |field: &str, shape: Vec<usize>, data: &[f64]| {
                out.push(StateTensor { name: format!("{i}.{}.{field}", layer.name()), shape, data: data.to_vec() })
            };
            match layer {
                Layer::Conv(c) => {
                    let (o, ci) = (c.out_channels(), c.in_channels());
                    push("weight", vec![o, ci, 3, 3, 3], &c.weights);
                    push("bias", vec![o], &c.bias);
                }
                Layer::BatchNorm(b) => {
                    let n = b.channels();
                    push("gamma", vec![n], &b.gamma);
                    push("beta", vec![n], &b.beta);
                    push("running_mean", vec![n], &b.running_mean);
                    push("running_var", vec![n], &b.running_var);
                }
                Layer::Dense(d) => {
                    push("weight", vec![d.out_features(), d.in_features()], &d.weights);
                    push("bias", vec![d.out_features()], &d.bias);
                }
                _ => {}
            }
        }
        out
    }

    /// Replaces every persistent tensor; names and shapes must match [`Model::state`].
    pub fn load_state(&mut self, tensors: &[StateTensor]) -> Result<()> {
        let expected = self.state();
        if expected.len() != tensors.len() {
            return Err(Error::ShapeMismatch(format!("{} state tensors, expected {}", tensors.len(), expected.len())));
        }
        for (want, got) in expected.iter().zip(tensors) {
            if want.name != got.name || want.shape != got.shape || got.data.len() != want.data.len() {
                return Err(Error::ShapeMismatch(format!(
                    "state tensor {} {:?} does not match {} {:?}",
                    got.name, got.shape, want.name, want.shape
                )));
            }
        }
        let mut it = tensors.iter().map(|t| t.data.clone());
        let mut next = || it.next().expect("length checked");
        for layer in &mut self.layers {
            match layer {
                Layer::Conv(c) => {
                    c.weights = next();
                    c.bias = next();
                }
                Layer::BatchNorm(b) => {
                    b.gamma = next();
                    b.beta = next();
                    b.running_mean = next();
                    b.running_var = next();
                }
                Layer::Dense(d) => {
                    d.weights = next();
                    d.bias = next();
                }
                _ => {}
            }
        }
        Ok(())
    }

    fn check_input(&self, x: &Batch5D) -> Result<()> {
        if let Some(spec) = &self.spec {
            if x.spatial() != spec.input_dims || x.channels() != spec.in_channels {
                return Err(Error::ShapeMismatch(format!(
                    "model expects {} channel(s) of {}, got {} of {}",
                    spec.in_channels,
                    spec.input_dims,
                    x.channels(),
                    x.spatial()
                )));
            }
        }
        Ok(())
    }

    /// Runs the layer chain, capturing per-conv-layer embeddings.
    ///
    /// Train mode uses batch statistics (and updates the running ones) and
    /// draws dropout masks from `rng`; infer mode draws nothing.
    pub fn forward(&mut self, x: &Batch5D, mode: Mode, rng: &mut SeededRng) -> Result<Forward> {
        let (logits, embeddings, _) = self.run(x, mode, rng, false, true)?;
        Ok(Forward { logits, embeddings })
    }

    /// Infer-mode logits without touching `self`.
    pub fn infer(&self, x: &Batch5D) -> Result<Batch5D> {
        let mut scratch = SeededRng::new(0);
        Ok(self.clone().run(x, Mode::Infer, &mut scratch, false, false)?.0)
    }

    /// Infer-mode logits plus embeddings.
    pub fn infer_with_embeddings(&self, x: &Batch5D) -> Result<Forward> {
        let mut scratch = SeededRng::new(0);
        let (logits, embeddings, _) = self.clone().run(x, Mode::Infer, &mut scratch, false, true)?;
        Ok(Forward { logits, embeddings })
    }

    /// Forward pass that records what [`Model::backward`] needs.
    pub fn forward_tape(&mut self, x: &Batch5D, mode: Mode, rng: &mut SeededRng) -> Result<(Batch5D, Tape)> {
        let (logits, _, tape) = self.run(x, mode, rng, true, false)?;
        Ok((logits, tape.expect("tape requested")))
    }

    fn run(
        &mut self,
        x: &Batch5D,
        mode: Mode,
        rng: &mut SeededRng,
        record: bool,
        capture: bool,
    ) -> Result<(Batch5D, Vec<Batch5D>, Option<Tape>)> {
        self.check_input(x)?;
        let mut tape = Tape { mode, inputs: Vec::new(), aux: Vec::new() };
        let mut embeddings = Vec::new();
        let mut cur = x.clone();
        let mut after_conv = false;
        for layer in &mut self.layers {
            let (next, aux) = match layer {
                Layer::Conv(c) => {
                    after_conv = true;
                    (c.forward(&cur)?, Aux::None)
                }
                Layer::BatchNorm(b) => match mode {
                    Mode::Train => {
                        let (y, cache) = b.forward_train(&cur)?;
                        (y, Aux::Bn(cache))
                    }
                    Mode::Infer => (b.forward_infer(&cur)?, Aux::None),
                },
                Layer::Activation(a) => (a.forward(&cur), Aux::None),
                Layer::Pool(p) => {
                    let (y, argmax) = p.forward(&cur);
                    (y, Aux::Pool(argmax))
                }
                Layer::Flatten => {
                    let n = cur.sample_len();
                    (Batch5D::from_raw([cur.batch(), n, 1, 1, 1], cur.data().to_vec()), Aux::None)
                }
                Layer::Dropout(d) => match mode {
                    Mode::Train => {
                        let (y, mask) = d.forward_train(&cur, rng);
                        (y, Aux::Mask(mask))
                    }
                    Mode::Infer => (cur.clone(), Aux::None),
                },
                Layer::Dense(d) => (d.forward(&cur)?, Aux::None),
            };
            if capture && after_conv && matches!(layer, Layer::Activation(_)) {
                embeddings.push(next.clone());
                after_conv = false;
            }
            if record {
                tape.inputs.push(core::mem::replace(&mut cur, next));
                tape.aux.push(aux);
            } else {
                cur = next;
            }
        }
        Ok((cur, embeddings, record.then_some(tape)))
    }

    /// Gradients of `sum(grad_logits * logits)` with respect to every parameter.
    pub fn backward(&self, tape: &Tape, grad_logits: &Batch5D) -> Result<Gradients> {
        if tape.inputs.len() != self.layers.len() {
            return Err(Error::ShapeMismatch(format!(
                "tape of {} layers for a model of {}",
                tape.inputs.len(),
                self.layers.len()
            )));
        }
        let mut per_layer: Vec<Vec<Vec<f64>>> = vec![Vec::new(); self.layers.len()];
        let mut g = grad_logits.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let x = &tape.inputs[i];
            let need_input = i > 0;
            g = match (layer, &tape.aux[i]) {
                (Layer::Conv(c), _) => {
                    let grads = c.backward(x, &g, need_input)?;
                    per_layer[i] = vec![grads.weights, grads.bias];
                    match grads.input {
                        Some(gi) => gi,
                        None => break,
                    }
                }
                (Layer::BatchNorm(b), aux) => {
                    let grads = match (tape.mode, aux) {
                        (Mode::Train, Aux::Bn(cache)) => b.backward_train(x, cache, &g),
                        _ => b.backward_infer(x, &g),
                    };
                    per_layer[i] = vec![grads.gamma, grads.beta];
                    grads.input
                }
                (Layer::Activation(a), _) => a.backward(x, &g),
                (Layer::Pool(p), Aux::Pool(argmax)) => p.backward(x.shape(), argmax, &g),
                (Layer::Flatten, _) => Batch5D::from_raw(x.shape(), g.into_data()),
                (Layer::Dropout(d), Aux::Mask(mask)) => d.backward(mask, &g),
                (Layer::Dropout(_), _) => g,
                (Layer::Dense(d), _) => {
                    let grads = d.backward(x, &g)?;
                    per_layer[i] = vec![grads.weights, grads.bias];
                    grads.input
                }
                (Layer::Pool(_), _) => unreachable!("pool layers always record argmax"),
            };
        }
        Ok(Gradients { tensors: per_layer.into_iter().flatten().collect() })
    }
}
