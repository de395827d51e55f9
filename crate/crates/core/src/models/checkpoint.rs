//! Checkpoint container: a directory holding the parameter arrays under
//! stable names (`params.safetensors`) and a key-value metadata file
//! (`meta.txt`) with the network config, the schedule record where one
//! applies, and the training-step counter. The pair reproduces a network
//! exactly, tracked batch-norm statistics included.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::denoisers::{NoiseSchedule, ScheduleRecord};
use crate::error::{Error, Result};
use crate::models::{
    build_autoencoder, build_diffusion_net, build_unet, AutoencoderNet, DiffusionNet, ReconNet,
    UNetConfig,
};

const PARAMS_FILE: &str = "params.safetensors";
const META_FILE: &str = "meta.txt";

/// Which builder a checkpoint belongs to, with realization-specific extras.
#[derive(Debug, Clone, PartialEq)]
pub enum NetKind {
    Recon,
    /// Carries the sigma range the blind denoiser was trained over.
    Autoencoder { sigma_lo: f64, sigma_hi: f64 },
    Diffusion { schedule: ScheduleRecord },
}

/// Everything needed to rebuild a network.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointMeta {
    pub kind: NetKind,
    pub config: UNetConfig,
    pub step: u64,
}

/// A network rebuilt from disk.
pub enum LoadedNet {
    Recon(ReconNet),
    Autoencoder {
        net: AutoencoderNet,
        sigma_lo: f64,
        sigma_hi: f64,
    },
    Diffusion {
        net: DiffusionNet,
        schedule: NoiseSchedule,
    },
}

fn meta_string(meta: &CheckpointMeta) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# network checkpoint");
    let kind = match &meta.kind {
        NetKind::Recon => "recon",
        NetKind::Autoencoder { .. } => "autoencoder",
        NetKind::Diffusion { .. } => "diffusion",
    };
    let _ = writeln!(s, "kind = {kind}");
    let c = &meta.config;
    let _ = writeln!(s, "in_channels = {}", c.in_channels);
    let _ = writeln!(s, "out_channels = {}", c.out_channels);
    let _ = writeln!(s, "depth = {}", c.depth);
    let _ = writeln!(s, "base_width = {}", c.base_width);
    let _ = writeln!(s, "use_attention = {}", c.use_attention);
    let _ = writeln!(s, "negative_slope = {}", c.negative_slope);
    let _ = writeln!(s, "step = {}", meta.step);
    match &meta.kind {
        NetKind::Recon => {}
        NetKind::Autoencoder { sigma_lo, sigma_hi } => {
            let _ = writeln!(s, "sigma_lo = {sigma_lo}");
            let _ = writeln!(s, "sigma_hi = {sigma_hi}");
        }
        NetKind::Diffusion { schedule } => {
            let _ = writeln!(s, "schedule_kind = {}", schedule.kind);
            let _ = writeln!(s, "schedule_len = {}", schedule.len);
            let _ = writeln!(s, "abar_first = {}", schedule.abar_first);
            let _ = writeln!(s, "abar_last = {}", schedule.abar_last);
        }
    }
    s
}

fn parse_meta(text: &str) -> Result<CheckpointMeta> {
    let mut kv = HashMap::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("bad meta line `{line}`")))?;
        kv.insert(k.trim().to_string(), v.trim().to_string());
    }
    let get = |key: &str| -> Result<&String> {
        kv.get(key)
            .ok_or_else(|| Error::Config(format!("checkpoint meta missing `{key}`")))
    };
    let parse_f = |key: &str| -> Result<f64> {
        get(key)?
            .parse()
            .map_err(|_| Error::Config(format!("bad float for `{key}`")))
    };
    let parse_u = |key: &str| -> Result<usize> {
        get(key)?
            .parse()
            .map_err(|_| Error::Config(format!("bad integer for `{key}`")))
    };

    let config = UNetConfig {
        in_channels: parse_u("in_channels")?,
        out_channels: parse_u("out_channels")?,
        depth: parse_u("depth")?,
        base_width: parse_u("base_width")?,
        use_attention: get("use_attention")? == "true",
        negative_slope: parse_f("negative_slope")?,
    };
    let step = get("step")?
        .parse()
        .map_err(|_| Error::Config("bad integer for `step`".into()))?;
    let kind = match get("kind")?.as_str() {
        "recon" => NetKind::Recon,
        "autoencoder" => NetKind::Autoencoder {
            sigma_lo: parse_f("sigma_lo")?,
            sigma_hi: parse_f("sigma_hi")?,
        },
        "diffusion" => NetKind::Diffusion {
            schedule: ScheduleRecord {
                kind: get("schedule_kind")?.clone(),
                len: parse_u("schedule_len")?,
                abar_first: parse_f("abar_first")?,
                abar_last: parse_f("abar_last")?,
            },
        },
        other => return Err(Error::Config(format!("unknown checkpoint kind `{other}`"))),
    };
    Ok(CheckpointMeta { kind, config, step })
}

/// Writes `meta.txt` and `params.safetensors` under `dir`.
pub fn save_checkpoint(dir: &Path, meta: &CheckpointMeta, params: &super::ParamSet) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(META_FILE), meta_string(meta))?;
    let tensors: HashMap<String, candle_core::Tensor> =
        params.named_tensors().into_iter().collect();
    candle_core::safetensors::save(&tensors, dir.join(PARAMS_FILE))?;
    Ok(())
}

pub fn read_meta(dir: &Path) -> Result<CheckpointMeta> {
    parse_meta(&std::fs::read_to_string(dir.join(META_FILE))?)
}

/// Rebuilds the network recorded under `dir` and restores every tensor.
pub fn load_checkpoint(dir: &Path) -> Result<(LoadedNet, CheckpointMeta)> {
    let meta = read_meta(dir)?;
    let tensors = candle_core::safetensors::load(dir.join(PARAMS_FILE), &candle_core::Device::Cpu)?;
    let net = match &meta.kind {
        NetKind::Recon => {
            let mut net = build_unet(meta.config.clone(), 0)?;
            net.params_mut().load_named(&tensors)?;
            LoadedNet::Recon(net)
        }
        NetKind::Autoencoder { sigma_lo, sigma_hi } => {
            let mut net = build_autoencoder(meta.config.clone(), 0)?;
            net.params_mut().load_named(&tensors)?;
            LoadedNet::Autoencoder {
                net,
                sigma_lo: *sigma_lo,
                sigma_hi: *sigma_hi,
            }
        }
        NetKind::Diffusion { schedule } => {
            let sched = NoiseSchedule::from_record(schedule)?;
            let mut net = build_diffusion_net(meta.config.clone(), sched.len(), 0)?;
            net.params_mut().load_named(&tensors)?;
            LoadedNet::Diffusion { net, schedule: sched }
        }
    };
    Ok((net, meta))
}
