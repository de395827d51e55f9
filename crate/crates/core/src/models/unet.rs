//! The three network builders: the skip-connected reconstruction U-net, the
//! skip-free autoencoder denoiser, and the step-conditioned noise-prediction
//! net for the diffusion chain. One shared topology covers all three; flags
//! select skips, output squashing and time conditioning.

use candle_core::Tensor;

use crate::error::{Error, Result};
use crate::rng::Prng;

use super::layers::{
    leaky_relu, BatchNorm2d, Conv2d, ConvTranspose2d, ParamSet, SelfAttention2d, TimeEmbedding,
    TimeProjection,
};

/// Shape of a U-net style network.
#[derive(Debug, Clone, PartialEq)]
pub struct UNetConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    /// Number of down/up-sampling blocks.
    pub depth: usize,
    /// Channel count of the first block; deeper blocks double it.
    pub base_width: usize,
    /// Spatial self-attention at the two deepest resolutions (diffusion net).
    pub use_attention: bool,
    pub negative_slope: f64,
}

impl UNetConfig {
    pub fn new(in_channels: usize, out_channels: usize, depth: usize, base_width: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            depth,
            base_width,
            use_attention: false,
            negative_slope: 0.2,
        }
    }

    pub fn with_attention(mut self, on: bool) -> Self {
        self.use_attention = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth < 1 {
            return Err(Error::Config("unet depth must be >= 1".into()));
        }
        if self.base_width < 1 {
            return Err(Error::Config("unet base_width must be >= 1".into()));
        }
        Ok(())
    }

    /// Channels at level `l` (0 = full resolution).
    fn channels(&self, l: usize) -> usize {
        if l == 0 {
            self.base_width
        } else {
            self.base_width << (l - 1)
        }
    }

    /// Flattened length of the deepest encoder activation for `(h, w)` input.
    pub fn latent_len(&self, h: usize, w: usize) -> usize {
        let f = 1 << self.depth;
        self.channels(self.depth) * (h / f) * (w / f)
    }
}

/// conv -> batch norm -> optional time feature -> leaky relu.
struct ConvUnit {
    conv: Conv2d,
    bn: BatchNorm2d,
    time: Option<TimeProjection>,
    slope: f64,
}

impl ConvUnit {
    #[allow(clippy::too_many_arguments)]
    fn init(
        params: &mut ParamSet,
        rng: &mut Prng,
        name: &str,
        in_c: usize,
        out_c: usize,
        stride: usize,
        time_dim: Option<usize>,
        slope: f64,
    ) -> Result<Self> {
        let conv = Conv2d::init(params, rng, &format!("{name}.conv"), in_c, out_c, 3, stride, 1, false)?;
        let bn = BatchNorm2d::init(params, rng, &format!("{name}.bn"), out_c)?;
        let time = match time_dim {
            Some(d) => Some(TimeProjection::init(params, rng, &format!("{name}.time"), d, out_c)?),
            None => None,
        };
        Ok(Self { conv, bn, time, slope })
    }

    fn forward(&self, x: &Tensor, t_feat: Option<&Tensor>, train: bool) -> Result<Tensor> {
        let mut y = self.bn.forward(&self.conv.forward(x)?, train)?;
        if let (Some(proj), Some(feat)) = (&self.time, t_feat) {
            y = proj.add_to(&y, feat)?;
        }
        leaky_relu(&y, self.slope)
    }
}

/// transposed conv -> batch norm -> optional time feature -> leaky relu.
struct UpUnit {
    tconv: ConvTranspose2d,
    bn: BatchNorm2d,
    time: Option<TimeProjection>,
    slope: f64,
}

impl UpUnit {
    #[allow(clippy::too_many_arguments)]
    fn init(
        params: &mut ParamSet,
        rng: &mut Prng,
        name: &str,
        in_c: usize,
        out_c: usize,
        time_dim: Option<usize>,
        slope: f64,
    ) -> Result<Self> {
        let tconv =
            ConvTranspose2d::init(params, rng, &format!("{name}.tconv"), in_c, out_c, 4, 2, 1)?;
        let bn = BatchNorm2d::init(params, rng, &format!("{name}.bn"), out_c)?;
        let time = match time_dim {
            Some(d) => Some(TimeProjection::init(params, rng, &format!("{name}.time"), d, out_c)?),
            None => None,
        };
        Ok(Self { tconv, bn, time, slope })
    }

    fn forward(&self, x: &Tensor, t_feat: Option<&Tensor>, train: bool) -> Result<Tensor> {
        let mut y = self.bn.forward(&self.tconv.forward(x)?, train)?;
        if let (Some(proj), Some(feat)) = (&self.time, t_feat) {
            y = proj.add_to(&y, feat)?;
        }
        leaky_relu(&y, self.slope)
    }
}

struct EncLevel {
    down: ConvUnit,
    refine: ConvUnit,
    attn: Option<SelfAttention2d>,
}

struct DecLevel {
    up: UpUnit,
    merge: ConvUnit,
    attn: Option<SelfAttention2d>,
}

/// Shared encoder-decoder topology.
pub(crate) struct UNetCore {
    cfg: UNetConfig,
    stem: ConvUnit,
    enc: Vec<EncLevel>,
    dec: Vec<DecLevel>,
    head: Conv2d,
    skips: bool,
    squash_output: bool,
    time: Option<TimeEmbedding>,
    params: ParamSet,
}

pub(crate) struct UNetOptions {
    pub skips: bool,
    pub squash_output: bool,
    pub with_time: bool,
}

impl UNetCore {
    pub(crate) fn init(cfg: UNetConfig, opts: UNetOptions, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut params = ParamSet::new();
        let mut rng = Prng::from_seed(seed);
        let slope = cfg.negative_slope;
        let time_dim = if opts.with_time { Some(4 * cfg.base_width) } else { None };
        let time = match time_dim {
            Some(d) => Some(TimeEmbedding::init(&mut params, &mut rng, "time_embed", d)?),
            None => None,
        };

        let stem = ConvUnit::init(
            &mut params,
            &mut rng,
            "stem",
            cfg.in_channels,
            cfg.channels(0),
            1,
            time_dim,
            slope,
        )?;

        let mut enc = Vec::with_capacity(cfg.depth);
        for l in 1..=cfg.depth {
            let name = format!("enc{l}");
            let down = ConvUnit::init(
                &mut params,
                &mut rng,
                &format!("{name}.down"),
                cfg.channels(l - 1),
                cfg.channels(l),
                2,
                time_dim,
                slope,
            )?;
            let refine = ConvUnit::init(
                &mut params,
                &mut rng,
                &format!("{name}.refine"),
                cfg.channels(l),
                cfg.channels(l),
                1,
                time_dim,
                slope,
            )?;
            let attn = if cfg.use_attention && l + 1 >= cfg.depth {
                Some(SelfAttention2d::init(
                    &mut params,
                    &mut rng,
                    &format!("{name}.attn"),
                    cfg.channels(l),
                )?)
            } else {
                None
            };
            enc.push(EncLevel { down, refine, attn });
        }

        let mut dec = Vec::with_capacity(cfg.depth);
        for l in (1..=cfg.depth).rev() {
            let name = format!("dec{l}");
            let up = UpUnit::init(
                &mut params,
                &mut rng,
                &format!("{name}.up"),
                cfg.channels(l),
                cfg.channels(l - 1),
                time_dim,
                slope,
            )?;
            let merge_in = if opts.skips { 2 * cfg.channels(l - 1) } else { cfg.channels(l - 1) };
            let merge = ConvUnit::init(
                &mut params,
                &mut rng,
                &format!("{name}.merge"),
                merge_in,
                cfg.channels(l - 1),
                1,
                time_dim,
                slope,
            )?;
            let attn = if cfg.use_attention && l == cfg.depth && cfg.depth >= 2 {
                Some(SelfAttention2d::init(
                    &mut params,
                    &mut rng,
                    &format!("{name}.attn"),
                    cfg.channels(l - 1),
                )?)
            } else {
                None
            };
            dec.push(DecLevel { up, merge, attn });
        }

        let head = Conv2d::init(
            &mut params,
            &mut rng,
            "head",
            cfg.channels(0),
            cfg.out_channels,
            3,
            1,
            1,
            true,
        )?;

        Ok(Self {
            cfg,
            stem,
            enc,
            dec,
            head,
            skips: opts.skips,
            squash_output: opts.squash_output,
            time,
            params,
        })
    }

    pub(crate) fn cfg(&self) -> &UNetConfig {
        &self.cfg
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let (_b, c, h, w) = x.dims4()?;
        if c != self.cfg.in_channels {
            shape_mismatch!("expected {} input channels, got {c}", self.cfg.in_channels);
        }
        let f = 1usize << self.cfg.depth;
        if h % f != 0 || w % f != 0 {
            return Err(Error::Config(format!(
                "input {h}x{w} not divisible by 2^depth = {f}"
            )));
        }
        Ok(())
    }

    /// Full pass. Returns the output and, when requested, the flattened
    /// deepest encoder activation per sample.
    pub(crate) fn run(
        &self,
        x: &Tensor,
        t: Option<usize>,
        train: bool,
        want_latent: bool,
    ) -> Result<(Tensor, Option<Tensor>)> {
        self.check_input(x)?;
        let t_feat = match (&self.time, t) {
            (Some(te), Some(step)) => Some(te.forward(step)?),
            _ => None,
        };
        let t_feat = t_feat.as_ref();

        let mut cur = self.stem.forward(x, t_feat, train)?;
        let mut skips: Vec<Tensor> = Vec::with_capacity(self.cfg.depth);
        for level in &self.enc {
            skips.push(cur.clone());
            cur = level.down.forward(&cur, t_feat, train)?;
            cur = level.refine.forward(&cur, t_feat, train)?;
            if let Some(attn) = &level.attn {
                cur = attn.forward(&cur)?;
            }
        }

        let latent = if want_latent {
            Some(cur.flatten_from(1)?)
        } else {
            None
        };

        for (level, skip) in self.dec.iter().zip(skips.iter().rev()) {
            cur = level.up.forward(&cur, t_feat, train)?;
            if self.skips {
                cur = Tensor::cat(&[&cur, skip], 1)?;
            }
            cur = level.merge.forward(&cur, t_feat, train)?;
            if let Some(attn) = &level.attn {
                cur = attn.forward(&cur)?;
            }
        }

        let mut out = self.head.forward(&cur)?;
        if self.squash_output {
            out = out.tanh()?;
        }
        Ok((out, latent))
    }
}

/// Image reconstruction U-net with skip connections and `[-1, 1]` output.
pub struct ReconNet {
    core: UNetCore,
}

/// Builds the reconstruction network; weights are a deterministic function of
/// the seed.
pub fn build_unet(cfg: UNetConfig, seed: u64) -> Result<ReconNet> {
    let core = UNetCore::init(
        cfg,
        UNetOptions {
            skips: true,
            squash_output: true,
            with_time: false,
        },
        seed,
    )?;
    Ok(ReconNet { core })
}

impl ReconNet {
    pub fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        Ok(self.core.run(x, None, train, false)?.0)
    }

    /// Reconstruction plus the flattened deepest-encoder activation, the
    /// latent the correlation penalty operates on.
    pub fn forward_with_latent(&self, x: &Tensor, train: bool) -> Result<(Tensor, Tensor)> {
        let (out, latent) = self.core.run(x, None, train, true)?;
        Ok((out, latent.expect("latent requested")))
    }

    pub fn params(&self) -> &ParamSet {
        &self.core.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.core.params
    }

    pub fn config(&self) -> &UNetConfig {
        self.core.cfg()
    }
}

/// Skip-free autoencoder used as the one-step blind Gaussian denoiser.
pub struct AutoencoderNet {
    core: UNetCore,
}

pub fn build_autoencoder(cfg: UNetConfig, seed: u64) -> Result<AutoencoderNet> {
    let core = UNetCore::init(
        cfg,
        UNetOptions {
            skips: false,
            squash_output: true,
            with_time: false,
        },
        seed,
    )?;
    Ok(AutoencoderNet { core })
}

impl AutoencoderNet {
    pub fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        Ok(self.core.run(x, None, train, false)?.0)
    }

    pub fn params(&self) -> &ParamSet {
        &self.core.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.core.params
    }

    pub fn config(&self) -> &UNetConfig {
        self.core.cfg()
    }
}

/// Noise-prediction network: same backbone conditioned on the step index via
/// a sinusoidal time embedding, unbounded linear output.
pub struct DiffusionNet {
    core: UNetCore,
    schedule_len: usize,
}

pub fn build_diffusion_net(cfg: UNetConfig, schedule_len: usize, seed: u64) -> Result<DiffusionNet> {
    if schedule_len == 0 {
        return Err(Error::Config("diffusion net needs a nonempty schedule".into()));
    }
    let core = UNetCore::init(
        cfg,
        UNetOptions {
            skips: true,
            squash_output: false,
            with_time: true,
        },
        seed,
    )?;
    Ok(DiffusionNet { core, schedule_len })
}

impl DiffusionNet {
    /// Predicted noise for `x` at step `t`.
    pub fn predict(&self, x: &Tensor, t: usize, train: bool) -> Result<Tensor> {
        if t >= self.schedule_len {
            invalid_arg!("step index {t} out of range for schedule of length {}", self.schedule_len);
        }
        Ok(self.core.run(x, Some(t), train, false)?.0)
    }

    pub fn schedule_len(&self) -> usize {
        self.schedule_len
    }

    pub fn params(&self) -> &ParamSet {
        &self.core.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.core.params
    }

    pub fn config(&self) -> &UNetConfig {
        self.core.cfg()
    }
}
