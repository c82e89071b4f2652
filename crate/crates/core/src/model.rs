//! Small feed-forward velocity network with sinusoidal time features and
//! hand-written reverse-mode gradients.
//!
//! Input is `[x, phi(t), context]`, where `phi` holds `F` features
//! alternating `sin(pi 2^j t)` and `cos(pi 2^j t)`. Hidden layers use a C^1
//! activation; the output layer is linear with width `D`. Parameters are one
//! flat vector: for each layer the row-major weight matrix followed by the
//! bias.

use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{BridgeError, Result};
use crate::numerics::{RngStream, Tensor};
use crate::sampler::VelocityField;

const PARAM_MAGIC: &[u8; 8] = b"BFPARAMS";
const PARAM_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
    /// Softplus, `ln(1 + e^z)`.
    SmoothRelu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::SmoothRelu => {
                if z > 30.0 {
                    z + (-z).exp().ln_1p()
                } else {
                    z.exp().ln_1p()
                }
            }
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::SmoothRelu => 1.0 / (1.0 + (-z).exp()),
        }
    }
}

impl FromStr for Activation {
    type Err = BridgeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "smooth_relu" | "smooth-relu" | "softplus" => Ok(Activation::SmoothRelu),
            other => Err(BridgeError::Config(format!("unknown activation '{other}'"))),
        }
    }
}

/// What the network output means; displacement outputs are divided by
/// `1 - t` when used as a velocity field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Prediction {
    #[default]
    Velocity,
    Displacement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    #[serde(default = "default_time_features")]
    pub time_features: usize,
    #[serde(default)]
    pub context_dim: usize,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default)]
    pub prediction: Prediction,
}

fn default_time_features() -> usize {
    8
}

impl ModelConfig {
    pub fn new(input_dim: usize, hidden: Vec<usize>) -> Self {
        Self {
            input_dim,
            hidden,
            time_features: default_time_features(),
            context_dim: 0,
            activation: Activation::Tanh,
            prediction: Prediction::Velocity,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(BridgeError::Config("model input dimension must be positive".into()));
        }
        if self.hidden.iter().any(|&w| w == 0) {
            return Err(BridgeError::Config("hidden widths must be positive".into()));
        }
        Ok(())
    }

    fn network_input_dim(&self) -> usize {
        self.input_dim + self.time_features + self.context_dim
    }

    /// `(fan_in, fan_out)` of each affine layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut widths = Vec::with_capacity(self.hidden.len() + 2);
        widths.push(self.network_input_dim());
        widths.extend(&self.hidden);
        widths.push(self.input_dim);
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o + o).sum()
    }
}

fn time_features(count: usize, t: f64, out: &mut Vec<f64>) {
    for j in 0..count {
        let freq = PI * f64::from(1u32 << (j / 2).min(30));
        out.push(if j % 2 == 0 { (freq * t).sin() } else { (freq * t).cos() });
    }
}

/// Flat parameter vector `theta`.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    values: Tensor,
}

impl Parameters {
    pub fn from_tensor(config: &ModelConfig, values: Tensor) -> Result<Self> {
        let n = config.parameter_count();
        if values.shape() != [n] {
            return Err(BridgeError::ShapeMismatch {
                expected: vec![n],
                actual: values.shape().to_vec(),
            });
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut Tensor {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Hidden layers Glorot-uniform, biases zero, output layer all zero.
pub fn init(config: &ModelConfig, rng: &mut RngStream) -> Result<Parameters> {
    config.validate()?;
    let dims = config.layer_dims();
    let mut values = Vec::with_capacity(config.parameter_count());
    for (l, &(fan_in, fan_out)) in dims.iter().enumerate() {
        if l + 1 == dims.len() {
            values.extend(std::iter::repeat(0.0).take(fan_in * fan_out + fan_out));
        } else {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            values.extend((0..fan_in * fan_out).map(|_| rng.uniform_range(-bound, bound)));
            values.extend(std::iter::repeat(0.0).take(fan_out));
        }
    }
    Parameters::from_tensor(config, Tensor::from_vec(values)?)
}

struct ForwardCache {
    /// Input to each affine layer.
    inputs: Vec<Vec<f64>>,
    /// Pre-activations of the hidden layers.
    pre_activations: Vec<Vec<f64>>,
}

fn check_inputs(config: &ModelConfig, x: &Tensor, context: Option<&Tensor>) -> Result<()> {
    if x.len() != config.input_dim {
        return Err(BridgeError::ShapeMismatch {
            expected: vec![config.input_dim],
            actual: x.shape().to_vec(),
        });
    }
    let got = context.map_or(0, Tensor::len);
    if got != config.context_dim {
        return Err(BridgeError::ShapeMismatch {
            expected: vec![config.context_dim],
            actual: vec![got],
        });
    }
    Ok(())
}

fn forward_cached(
    params: &Parameters,
    config: &ModelConfig,
    x: &Tensor,
    t: f64,
    context: Option<&Tensor>,
) -> Result<(Vec<f64>, ForwardCache)> {
    check_inputs(config, x, context)?;
    if params.len() != config.parameter_count() {
        return Err(BridgeError::ShapeMismatch {
            expected: vec![config.parameter_count()],
            actual: vec![params.len()],
        });
    }
    let mut input = Vec::with_capacity(config.network_input_dim());
    input.extend_from_slice(x.data());
    time_features(config.time_features, t, &mut input);
    if let Some(c) = context {
        input.extend_from_slice(c.data());
    }

    let theta = params.values.data();
    let dims = config.layer_dims();
    let mut cache = ForwardCache {
        inputs: Vec::with_capacity(dims.len()),
        pre_activations: Vec::with_capacity(dims.len().saturating_sub(1)),
    };
    let mut offset = 0;
    let mut current = input;
    for (l, &(fan_in, fan_out)) in dims.iter().enumerate() {
        let weights = &theta[offset..offset + fan_in * fan_out];
        let bias = &theta[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
        offset += fan_in * fan_out + fan_out;
        let z: Vec<f64> = (0..fan_out)
            .map(|o| {
                let row = &weights[o * fan_in..(o + 1) * fan_in];
                bias[o] + row.iter().zip(&current).map(|(w, a)| w * a).sum::<f64>()
            })
            .collect();
        let last = l + 1 == dims.len();
        let next = if last {
            z.clone()
        } else {
            z.iter().map(|&v| config.activation.apply(v)).collect()
        };
        cache.inputs.push(std::mem::replace(&mut current, next));
        if !last {
            cache.pre_activations.push(z);
        }
    }
    Ok((current, cache))
}

/// Network output for one state.
pub fn forward(
    params: &Parameters,
    config: &ModelConfig,
    x: &Tensor,
    t: f64,
    context: Option<&Tensor>,
) -> Result<Tensor> {
    let (out, _) = forward_cached(params, config, x, t, context)?;
    Ok(Tensor::from_parts(x.shape().to_vec(), out))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub params: Tensor,
    pub x: Tensor,
}

/// Gradients of `<forward(x, t, context), upstream>`.
pub fn backward(
    params: &Parameters,
    config: &ModelConfig,
    x: &Tensor,
    t: f64,
    context: Option<&Tensor>,
    upstream: &Tensor,
) -> Result<Gradients> {
    let mut grad_params = vec![0.0; params.len()];
    let grad_x = backward_accumulate(params, config, x, t, context, upstream, &mut grad_params)?;
    Ok(Gradients {
        params: Tensor::from_parts(vec![params.len()], grad_params),
        x: grad_x,
    })
}

/// Like [`backward`], adding parameter gradients into `grad_params`.
pub fn backward_accumulate(
    params: &Parameters,
    config: &ModelConfig,
    x: &Tensor,
    t: f64,
    context: Option<&Tensor>,
    upstream: &Tensor,
    grad_params: &mut [f64],
) -> Result<Tensor> {
    if upstream.len() != config.input_dim {
        return Err(BridgeError::ShapeMismatch {
            expected: vec![config.input_dim],
            actual: upstream.shape().to_vec(),
        });
    }
    if grad_params.len() != params.len() {
        return Err(BridgeError::ShapeMismatch {
            expected: vec![params.len()],
            actual: vec![grad_params.len()],
        });
    }
    let (_, cache) = forward_cached(params, config, x, t, context)?;
    let theta = params.values.data();
    let dims = config.layer_dims();
    let mut offsets = Vec::with_capacity(dims.len());
    let mut offset = 0;
    for &(fan_in, fan_out) in &dims {
        offsets.push(offset);
        offset += fan_in * fan_out + fan_out;
    }

    let mut delta = upstream.data().to_vec();
    for l in (0..dims.len()).rev() {
        let (fan_in, fan_out) = dims[l];
        let base = offsets[l];
        let input = &cache.inputs[l];
        {
            let (gw, gb) = grad_params[base..base + fan_in * fan_out + fan_out].split_at_mut(fan_in * fan_out);
            for o in 0..fan_out {
                let d = delta[o];
                gb[o] += d;
                for (g, a) in gw[o * fan_in..(o + 1) * fan_in].iter_mut().zip(input) {
                    *g += d * a;
                }
            }
        }
        let weights = &theta[base..base + fan_in * fan_out];
        let mut back = vec![0.0; fan_in];
        for o in 0..fan_out {
            let d = delta[o];
            for (b, w) in back.iter_mut().zip(&weights[o * fan_in..(o + 1) * fan_in]) {
                *b += d * w;
            }
        }
        if l > 0 {
            for (b, &z) in back.iter_mut().zip(&cache.pre_activations[l - 1]) {
                *b *= config.activation.derivative(z);
            }
        }
        delta = back;
    }
    delta.truncate(config.input_dim);
    Ok(Tensor::from_parts(x.shape().to_vec(), delta))
}

/// Network plus its configuration; usable directly as a [`VelocityField`].
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityModel {
    pub config: ModelConfig,
    pub params: Parameters,
}

#[derive(Serialize, Deserialize)]
struct ParamHeader {
    config: ModelConfig,
    parameter_count: usize,
}

impl VelocityModel {
    pub fn new(config: ModelConfig, rng: &mut RngStream) -> Result<Self> {
        let params = init(&config, rng)?;
        Ok(Self { config, params })
    }

    pub fn forward(&self, x: &Tensor, t: f64, context: Option<&Tensor>) -> Result<Tensor> {
        forward(&self.params, &self.config, x, t, context)
    }

    /// Versioned container: magic, version, JSON header, then raw
    /// little-endian `f64` payload.
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&ParamHeader {
            config: self.config.clone(),
            parameter_count: self.params.len(),
        })
        .expect("config serializes");
        let mut out = Vec::with_capacity(24 + header.len() + 8 * self.params.len());
        out.extend_from_slice(PARAM_MAGIC);
        out.extend_from_slice(&PARAM_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for v in self.params.values().data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |why: &str| BridgeError::format(path, why);
        if bytes.len() < 16 || &bytes[..8] != PARAM_MAGIC {
            return Err(bad("not a parameter file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != PARAM_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let header_len = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let header_end = 16 + header_len;
        let header: ParamHeader = serde_json::from_slice(bytes.get(16..header_end).ok_or_else(|| bad("truncated header"))?)
            .map_err(|e| bad(&e.to_string()))?;
        header.config.validate()?;
        if header.parameter_count != header.config.parameter_count() {
            return Err(bad("parameter count does not match config"));
        }
        let payload = &bytes[header_end..];
        if payload.len() != 8 * header.parameter_count {
            return Err(bad("payload length does not match parameter count"));
        }
        let values = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let params = Parameters::from_tensor(&header.config, Tensor::from_vec(values)?)?;
        Ok(Self {
            config: header.config,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| BridgeError::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    /// Writes the container to any sink (used for hashing).
    pub fn write_to(&self, sink: &mut impl Write) -> std::io::Result<()> {
        sink.write_all(&self.to_bytes())
    }
}

impl VelocityField for VelocityModel {
    fn velocity(&self, state: &Tensor, t: f64, context: Option<&Tensor>) -> Result<Tensor> {
        let out = self.forward(state, t, context)?;
        Ok(match self.config.prediction {
            Prediction::Velocity => out,
            Prediction::Displacement => out.scale(1.0 / (1.0 - t)),
        })
    }
}

/// The model with its context input replaced by zeros.
pub struct WithoutContext<'a>(pub &'a VelocityModel);

impl VelocityField for WithoutContext<'_> {
    fn velocity(&self, state: &Tensor, t: f64, _context: Option<&Tensor>) -> Result<Tensor> {
        let zeros = Tensor::zeros(&[self.0.config.context_dim]);
        let context = (self.0.config.context_dim > 0).then_some(&zeros);
        self.0.velocity(state, t, context)
    }
}
