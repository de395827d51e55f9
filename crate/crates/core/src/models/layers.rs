//! Layer primitives on top of candle tensors: convolutions, batch norm with
//! tracked statistics, dense layers, sinusoidal time embeddings and spatial
//! self-attention. All parameters live in a [`ParamSet`] under stable names
//! so optimizers, checkpoints and hashing see one flat registry.

use candle_core::{DType, Device, Tensor, Var};
use sha2::{Digest, Sha256};
use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::rng::Prng;

pub(crate) const DEVICE: Device = Device::Cpu;

/// One named parameter; `trainable: false` marks tracked statistics that the
/// optimizer must never touch but checkpoints must keep.
struct ParamEntry {
    name: String,
    var: Var,
    trainable: bool,
}

/// Flat registry of every tensor a network owns.
#[derive(Default)]
pub struct ParamSet {
    entries: Vec<ParamEntry>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    fn register(&mut self, name: &str, tensor: Tensor, trainable: bool) -> Result<Var> {
        if self.entries.iter().any(|e| e.name == name) {
            return Err(Error::Config(format!("duplicate parameter name `{name}`")));
        }
        let var = Var::from_tensor(&tensor)?;
        self.entries.push(ParamEntry {
            name: name.to_string(),
            var: var.clone(),
            trainable,
        });
        Ok(var)
    }

    pub fn trainable_vars(&self) -> Vec<Var> {
        self.entries
            .iter()
            .filter(|e| e.trainable)
            .map(|e| e.var.clone())
            .collect()
    }

    pub fn named_trainable_vars(&self) -> Vec<(String, Var)> {
        self.entries
            .iter()
            .filter(|e| e.trainable)
            .map(|e| (e.name.clone(), e.var.clone()))
            .collect()
    }

    /// Number of trainable scalar parameters.
    pub fn param_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.trainable)
            .map(|e| e.var.elem_count())
            .sum()
    }

    /// Current values of every entry (trainable and statistics), detached.
    pub fn named_tensors(&self) -> Vec<(String, Tensor)> {
        self.entries
            .iter()
            .map(|e| (e.name.clone(), e.var.as_tensor().detach()))
            .collect()
    }

    /// SHA-256 over names and raw parameter bytes, in registration order.
    /// Used to prove a frozen network really was left untouched.
    pub fn content_hash(&self) -> Result<String> {
        let mut hasher = Sha256::new();
        for e in &self.entries {
            hasher.update(e.name.as_bytes());
            let flat: Vec<f32> = e.var.as_tensor().flatten_all()?.to_vec1()?;
            for v in flat {
                hasher.update(v.to_le_bytes());
            }
        }
        let digest = hasher.finalize();
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }

    /// Overwrites every entry from `map`; missing or extra names are errors.
    pub fn load_named(&mut self, map: &HashMap<String, Tensor>) -> Result<()> {
        if map.len() != self.entries.len() {
            return Err(Error::Config(format!(
                "checkpoint has {} tensors, network expects {}",
                map.len(),
                self.entries.len()
            )));
        }
        for e in &self.entries {
            let t = map
                .get(&e.name)
                .ok_or_else(|| Error::Config(format!("checkpoint missing tensor `{}`", e.name)))?;
            e.var.set(t)?;
        }
        Ok(())
    }
}

fn he_normal(rng: &mut Prng, fan_in: usize, n: usize) -> Vec<f32> {
    let std = (2.0 / fan_in as f64).sqrt();
    (0..n).map(|_| (rng.standard_normal() * std) as f32).collect()
}

/// 3x3-style convolution; bias is omitted when batch norm follows (the norm
/// would cancel it and starve it of gradient).
pub struct Conv2d {
    weight: Var,
    bias: Option<Var>,
    stride: usize,
    padding: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn init(
        params: &mut ParamSet,
        rng: &mut Prng,
        name: &str,
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        with_bias: bool,
    ) -> Result<Self> {
        let fan_in = in_c * kernel * kernel;
        let w = Tensor::from_vec(
            he_normal(rng, fan_in, out_c * fan_in),
            (out_c, in_c, kernel, kernel),
            &DEVICE,
        )?;
        let weight = params.register(&format!("{name}.weight"), w, true)?;
        let bias = if with_bias {
            let b = Tensor::zeros((out_c,), DType::F32, &DEVICE)?;
            Some(params.register(&format!("{name}.bias"), b, true)?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            stride,
            padding,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv2d(self.weight.as_tensor(), self.padding, self.stride, 1, 1)?;
        match &self.bias {
            Some(b) => {
                let c = b.elem_count();
                Ok(y.broadcast_add(&b.as_tensor().reshape((1, c, 1, 1))?)?)
            }
            None => Ok(y),
        }
    }
}

/// Transposed convolution for 2x upsampling (kernel 4, stride 2, padding 1).
pub struct ConvTranspose2d {
    weight: Var,
    stride: usize,
    padding: usize,
}

impl ConvTranspose2d {
    pub fn init(
        params: &mut ParamSet,
        rng: &mut Prng,
        name: &str,
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let fan_in = in_c * kernel * kernel / (stride * stride);
        let w = Tensor::from_vec(
            he_normal(rng, fan_in.max(1), in_c * out_c * kernel * kernel),
            (in_c, out_c, kernel, kernel),
            &DEVICE,
        )?;
        let weight = params.register(&format!("{name}.weight"), w, true)?;
        Ok(Self {
            weight,
            stride,
            padding,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.conv_transpose2d(self.weight.as_tensor(), self.padding, 0, self.stride, 1)?)
    }
}

/// Spatial batch normalization with tracked running statistics.
///
/// Training mode normalizes with batch statistics and updates the tracked
/// mean/variance; evaluation mode normalizes with the tracked values only,
/// so outputs are deterministic functions of the input.
pub struct BatchNorm2d {
    gamma: Var,
    beta: Var,
    running_mean: Var,
    running_var: Var,
    eps: f64,
    momentum: f64,
}

impl BatchNorm2d {
    pub fn init(params: &mut ParamSet, rng: &mut Prng, name: &str, channels: usize) -> Result<Self> {
        let _ = rng;
        let gamma = params.register(
            &format!("{name}.gamma"),
            Tensor::ones((channels,), DType::F32, &DEVICE)?,
            true,
        )?;
        let beta = params.register(
            &format!("{name}.beta"),
            Tensor::zeros((channels,), DType::F32, &DEVICE)?,
            true,
        )?;
        let running_mean = params.register(
            &format!("{name}.running_mean"),
            Tensor::zeros((channels,), DType::F32, &DEVICE)?,
            false,
        )?;
        let running_var = params.register(
            &format!("{name}.running_var"),
            Tensor::ones((channels,), DType::F32, &DEVICE)?,
            false,
        )?;
        Ok(Self {
            gamma,
            beta,
            running_mean,
            running_var,
            eps: 1e-5,
            momentum: 0.1,
        })
    }

    pub fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let (_b, c, _h, _w) = x.dims4()?;
        if train {
            // (C, B*H*W) view for per-channel statistics.
            let xt = x.transpose(0, 1)?.contiguous()?.flatten_from(1)?;
            let n = xt.dim(1)? as f64;
            let mean = xt.mean_keepdim(1)?;
            let centered = xt.broadcast_sub(&mean)?;
            let var = centered.sqr()?.mean_keepdim(1)?;

            // Track statistics outside the autodiff graph.
            let mean_flat = mean.flatten_all()?.detach();
            let var_unbiased = (var.flatten_all()?.detach() * (n / (n - 1.0).max(1.0)))?;
            self.running_mean.set(
                &((self.running_mean.as_tensor() * (1.0 - self.momentum))?
                    + (mean_flat * self.momentum)?)?,
            )?;
            self.running_var.set(
                &((self.running_var.as_tensor() * (1.0 - self.momentum))?
                    + (var_unbiased * self.momentum)?)?,
            )?;

            let norm = centered.broadcast_div(&(var + self.eps)?.sqrt()?)?;
            let scaled = norm
                .broadcast_mul(&self.gamma.as_tensor().reshape((c, 1))?)?
                .broadcast_add(&self.beta.as_tensor().reshape((c, 1))?)?;
            let dims = x.dims4()?;
            Ok(scaled
                .reshape((c, dims.0, dims.2, dims.3))?
                .transpose(0, 1)?
                .contiguous()?)
        } else {
            let shape = (1, c, 1, 1);
            let mean = self.running_mean.as_tensor().reshape(shape)?;
            let var = self.running_var.as_tensor().reshape(shape)?;
            let norm = x.broadcast_sub(&mean)?.broadcast_div(&(var + self.eps)?.sqrt()?)?;
            Ok(norm
                .broadcast_mul(&self.gamma.as_tensor().reshape(shape)?)?
                .broadcast_add(&self.beta.as_tensor().reshape(shape)?)?)
        }
    }
}

/// Fully connected layer; weight stored as `(in, out)` so forward is a plain
/// matmul.
pub struct Dense {
    weight: Var,
    bias: Var,
}

impl Dense {
    pub fn init(
        params: &mut ParamSet,
        rng: &mut Prng,
        name: &str,
        in_dim: usize,
        out_dim: usize,
    ) -> Result<Self> {
        let w = Tensor::from_vec(he_normal(rng, in_dim, in_dim * out_dim), (in_dim, out_dim), &DEVICE)?;
        let weight = params.register(&format!("{name}.weight"), w, true)?;
        let bias = params.register(
            &format!("{name}.bias"),
            Tensor::zeros((out_dim,), DType::F32, &DEVICE)?,
            true,
        )?;
        Ok(Self { weight, bias })
    }

    /// `x`: (batch, in) -> (batch, out).
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x
            .matmul(self.weight.as_tensor())?
            .broadcast_add(self.bias.as_tensor())?)
    }
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> Result<Tensor> {
    Ok(candle_nn::ops::leaky_relu(x, slope)?)
}

/// Softmax over the last dimension built from differentiable primitives.
/// The max shift is detached; softmax is invariant to it, so gradients are
/// unaffected.
pub fn softmax_last_dim(x: &Tensor) -> Result<Tensor> {
    let dim = x.rank() - 1;
    let max = x.max_keepdim(dim)?.detach();
    let exp = x.broadcast_sub(&max)?.exp()?;
    let sum = exp.sum_keepdim(dim)?;
    Ok(exp.broadcast_div(&sum)?)
}

/// Sinusoidal embedding of a scalar step index followed by a two-layer MLP.
pub struct TimeEmbedding {
    dim: usize,
    fc1: Dense,
    fc2: Dense,
}

impl TimeEmbedding {
    pub fn init(params: &mut ParamSet, rng: &mut Prng, name: &str, dim: usize) -> Result<Self> {
        let fc1 = Dense::init(params, rng, &format!("{name}.fc1"), dim, dim)?;
        let fc2 = Dense::init(params, rng, &format!("{name}.fc2"), dim, dim)?;
        Ok(Self { dim, fc1, fc2 })
    }

    /// Embeds a step index as a `(1, dim)` feature row.
    pub fn forward(&self, t: usize) -> Result<Tensor> {
        let half = self.dim / 2;
        let mut feats = Vec::with_capacity(self.dim);
        for i in 0..half {
            let freq = (10_000f64).powf(-(i as f64) / half as f64);
            feats.push(((t as f64) * freq).sin() as f32);
        }
        for i in 0..half {
            let freq = (10_000f64).powf(-(i as f64) / half as f64);
            feats.push(((t as f64) * freq).cos() as f32);
        }
        let x = Tensor::from_vec(feats, (1, self.dim), &DEVICE)?;
        let x = leaky_relu(&self.fc1.forward(&x)?, 0.2)?;
        self.fc2.forward(&x)
    }
}

/// Projects a time feature row onto a block's channel count for broadcast
/// addition onto `(B, C, H, W)` activations.
pub struct TimeProjection {
    proj: Dense,
    channels: usize,
}

impl TimeProjection {
    pub fn init(
        params: &mut ParamSet,
        rng: &mut Prng,
        name: &str,
        time_dim: usize,
        channels: usize,
    ) -> Result<Self> {
        let proj = Dense::init(params, rng, &format!("{name}.proj"), time_dim, channels)?;
        Ok(Self { proj, channels })
    }

    pub fn add_to(&self, x: &Tensor, time_feat: &Tensor) -> Result<Tensor> {
        let row = self.proj.forward(time_feat)?; // (1, C)
        Ok(x.broadcast_add(&row.reshape((1, self.channels, 1, 1))?)?)
    }
}

/// Spatial self-attention over the flattened H*W positions of a feature map.
pub struct SelfAttention2d {
    q: Dense,
    k: Dense,
    v: Dense,
    o: Dense,
    channels: usize,
}

impl SelfAttention2d {
    pub fn init(params: &mut ParamSet, rng: &mut Prng, name: &str, channels: usize) -> Result<Self> {
        Ok(Self {
            q: Dense::init(params, rng, &format!("{name}.q"), channels, channels)?,
            k: Dense::init(params, rng, &format!("{name}.k"), channels, channels)?,
            v: Dense::init(params, rng, &format!("{name}.v"), channels, channels)?,
            o: Dense::init(params, rng, &format!("{name}.o"), channels, channels)?,
            channels,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, c, h, w) = x.dims4()?;
        if c != self.channels {
            shape_mismatch!("attention built for {} channels, got {c}", self.channels);
        }
        let flat = x.reshape((b, c, h * w))?.transpose(1, 2)?.contiguous()?; // (B, HW, C)
        let rows = flat.reshape((b * h * w, c))?;
        let q = self.q.forward(&rows)?.reshape((b, h * w, c))?;
        let k = self.k.forward(&rows)?.reshape((b, h * w, c))?;
        let v = self.v.forward(&rows)?.reshape((b, h * w, c))?;
        let scale = 1.0 / (c as f64).sqrt();
        let attn = (q.matmul(&k.transpose(1, 2)?.contiguous()?)? * scale)?;
        let attn = softmax_last_dim(&attn)?;
        let mixed = attn.matmul(&v)?; // (B, HW, C)
        let out = self.o.forward(&mixed.reshape((b * h * w, c))?)?;
        let out = out.reshape((b, h * w, c))?.transpose(1, 2)?.contiguous()?;
        Ok((x + out.reshape((b, c, h, w))?)?)
    }
}
