//! Pre-training of the supervising denoisers on unpaired clean images, and
//! the semi-supervised loop mixing paired and unpaired mini-batches under a
//! frozen supervisor.

pub mod report;

pub use report::{MetricsRow, RunManifest, TrainHistory};

use candle_core::Tensor;
use candle_nn::Optimizer;

use crate::denoisers::{Denoiser, NoiseSchedule};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::losses::{
    correlation_loss, denoiser_loss, paired_loss, sud_pseudo_label, LossWeights,
};
use crate::models::{
    build_autoencoder, build_diffusion_net, images_from_tensor, tensor_of_images, AutoencoderNet,
    DiffusionNet, ReconNet, UNetConfig,
};
use crate::rng::Prng;
use crate::tasks::{metrics, DatasetBundle};

/// Optimizer settings: adaptive-moment with decoupled weight decay, constant
/// learning rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            weight_decay: 1e-4,
        }
    }
}

fn adamw(params: &crate::models::ParamSet, opt: &OptimizerConfig) -> Result<candle_nn::AdamW> {
    Ok(candle_nn::AdamW::new(
        params.trainable_vars(),
        candle_nn::ParamsAdamW {
            lr: opt.learning_rate,
            weight_decay: opt.weight_decay,
            ..Default::default()
        },
    )?)
}

/// Semi-supervised training configuration.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub weights: LossWeights,
    /// Roundtrip depth used by a diffusion supervisor.
    pub diffusion_steps: usize,
    pub optimizer: OptimizerConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Fraction of each step's batch drawn from the paired set.
    pub paired_fraction: f64,
    /// Fraction of unpaired measurements carved out for held-out evaluation.
    pub heldout_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            weights: LossWeights::paper_defaults(),
            diffusion_steps: 40,
            optimizer: OptimizerConfig::default(),
            batch_size: 8,
            epochs: 50,
            seed: 0,
            paired_fraction: 0.25,
            heldout_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config(
                "batch_size must be >= 2 (the correlation loss needs two samples)".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.paired_fraction) {
            return Err(Error::Config("paired_fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Pre-training progress: per-epoch mean losses.
#[derive(Debug, Clone)]
pub struct PretrainReport {
    pub epoch_losses: Vec<f64>,
    pub final_loss: f64,
}

/// Settings shared by both pre-training loops.
#[derive(Debug, Clone)]
pub struct PretrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
}

impl Default for PretrainOptions {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 8,
            optimizer: OptimizerConfig::default(),
            seed: 0,
        }
    }
}

fn sample_indices(rng: &mut Prng, n: usize, k: usize, with_replacement: bool) -> Vec<usize> {
    if with_replacement || k >= n {
        (0..k).map(|_| rng.index(n)).collect()
    } else {
        // Partial Fisher-Yates over an index table.
        let mut idx: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + rng.index(n - i);
            idx.swap(i, j);
        }
        idx.truncate(k);
        idx
    }
}

fn gather<'a>(images: &'a [Image], idx: &[usize]) -> Vec<&'a Image> {
    idx.iter().map(|&i| &images[i]).collect()
}

/// Trains a blind Gaussian denoiser: per sample, corrupt a clean image with
/// noise of std drawn uniformly from `sigma_range` and regress the clean
/// image under MSE.
pub fn pretrain_denoiser(
    u_x: &[Image],
    model_cfg: &UNetConfig,
    sigma_range: (f64, f64),
    opts: &PretrainOptions,
) -> Result<(AutoencoderNet, PretrainReport)> {
    if u_x.is_empty() {
        return Err(Error::Config("pretrain_denoiser needs a nonempty U_x".into()));
    }
    if sigma_range.0 > sigma_range.1 || sigma_range.0 < 0.0 {
        invalid_arg!("bad sigma range {sigma_range:?}");
    }
    let net = build_autoencoder(model_cfg.clone(), opts.seed)?;
    let mut optim = adamw(net.params(), &opts.optimizer)?;
    let mut rng = Prng::from_seed(opts.seed ^ 0xae5e_77a1);

    let steps_per_epoch = u_x.len().div_ceil(opts.batch_size).max(1);
    let mut epoch_losses = Vec::with_capacity(opts.epochs);
    for _epoch in 0..opts.epochs {
        let mut acc = 0.0;
        for _ in 0..steps_per_epoch {
            let idx = sample_indices(&mut rng, u_x.len(), opts.batch_size.min(u_x.len()), false);
            let clean = tensor_of_images(&gather(u_x, &idx))?;
            let sigma = rng.uniform(sigma_range.0, sigma_range.1.max(sigma_range.0 + 1e-12));
            let noise = Tensor::from_vec(
                rng.normal_vec_f32(clean.elem_count()),
                clean.shape(),
                clean.device(),
            )?;
            let noisy = (&clean + (noise * sigma)?)?;
            let out = net.forward(&noisy, true)?;
            let loss = out.sub(&clean)?.sqr()?.mean_all()?;
            let grads = loss.backward()?;
            optim.step(&grads)?;
            let val = loss.to_scalar::<f32>()? as f64;
            if !val.is_finite() {
                return Err(Error::Numerical("denoiser pre-training diverged".into()));
            }
            acc += val;
        }
        epoch_losses.push(acc / steps_per_epoch as f64);
    }
    let final_loss = *epoch_losses.last().unwrap_or(&f64::NAN);
    Ok((net, PretrainReport { epoch_losses, final_loss }))
}

/// Trains the noise-prediction network with the standard epsilon objective:
/// regress the injected noise from `sqrt(abar_t) x + sqrt(1 - abar_t) eps`
/// at a uniformly drawn step.
pub fn pretrain_ddpm(
    u_x: &[Image],
    model_cfg: &UNetConfig,
    schedule: &NoiseSchedule,
    opts: &PretrainOptions,
) -> Result<(DiffusionNet, PretrainReport)> {
    if u_x.is_empty() {
        return Err(Error::Config("pretrain_ddpm needs a nonempty U_x".into()));
    }
    let net = build_diffusion_net(model_cfg.clone(), schedule.len(), opts.seed)?;
    let mut optim = adamw(net.params(), &opts.optimizer)?;
    let mut rng = Prng::from_seed(opts.seed ^ 0xddf0_31b7);

    let steps_per_epoch = u_x.len().div_ceil(opts.batch_size).max(1);
    let mut epoch_losses = Vec::with_capacity(opts.epochs);
    for _epoch in 0..opts.epochs {
        let mut acc = 0.0;
        for _ in 0..steps_per_epoch {
            let idx = sample_indices(&mut rng, u_x.len(), opts.batch_size.min(u_x.len()), false);
            let clean = tensor_of_images(&gather(u_x, &idx))?;
            let t = rng.index(schedule.len());
            let abar = schedule.alpha_bar(t);
            let eps = Tensor::from_vec(
                rng.normal_vec_f32(clean.elem_count()),
                clean.shape(),
                clean.device(),
            )?;
            let noisy = ((clean * abar.sqrt())? + (&eps * (1.0 - abar).sqrt())?)?;
            let pred = net.predict(&noisy, t, true)?;
            let loss = pred.sub(&eps)?.sqr()?.mean_all()?;
            let grads = loss.backward()?;
            optim.step(&grads)?;
            let val = loss.to_scalar::<f32>()? as f64;
            if !val.is_finite() {
                return Err(Error::Numerical("diffusion pre-training diverged".into()));
            }
            acc += val;
        }
        epoch_losses.push(acc / steps_per_epoch as f64);
    }
    let final_loss = *epoch_losses.last().unwrap_or(&f64::NAN);
    Ok((net, PretrainReport { epoch_losses, final_loss }))
}

/// Normalized output diversity: mean pairwise L2 distance between batch
/// outputs divided by the mean output norm. Near zero means the network maps
/// everything to one image.
pub fn collapse_metric(outputs: &Tensor) -> Result<f64> {
    let dims = outputs.dims();
    let b = dims[0];
    if b < 2 {
        invalid_arg!("collapse metric needs a batch of at least 2 outputs");
    }
    let flat: Vec<f32> = outputs.contiguous()?.flatten_all()?.to_vec1()?;
    let per = flat.len() / b;
    let row = |i: usize| &flat[i * per..(i + 1) * per];
    let mut pair_acc = 0.0;
    let mut pairs = 0usize;
    for i in 0..b {
        for j in (i + 1)..b {
            let d: f64 = row(i)
                .iter()
                .zip(row(j).iter())
                .map(|(&a, &c)| ((a - c) as f64) * ((a - c) as f64))
                .sum();
            pair_acc += d.sqrt();
            pairs += 1;
        }
    }
    let mean_norm: f64 = (0..b)
        .map(|i| row(i).iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt())
        .sum::<f64>()
        / b as f64;
    Ok(pair_acc / pairs as f64 / mean_norm.max(1e-12))
}

/// Everything `fit_sud2` hands back: the metric log plus the frozen-
/// supervisor proof and the held-out summary.
pub struct SudOutcome {
    pub history: TrainHistory,
    pub supervisor_hash_before: String,
    pub supervisor_hash_after: String,
    pub initial_collapse: f64,
    pub final_collapse: f64,
    pub final_eval_psnr: Option<f64>,
    pub final_eval_ssim: Option<f64>,
    /// Indices of the held-out measurements (for external evaluation).
    pub heldout_indices: Vec<usize>,
    pub sampled_with_replacement: bool,
}

/// Optional extra penalty: an image-distance callback applied to the paired
/// and pseudo-label residuals.
pub type PerceptualHook<'a> = &'a dyn Fn(&Tensor, &Tensor) -> Result<Tensor>;

/// Called after each epoch with the epoch index and the live network, e.g.
/// to emit sample grids or periodic checkpoints.
pub type EpochHook<'a> = &'a mut dyn FnMut(usize, &ReconNet) -> Result<()>;

/// The semi-supervised loop. Each step draws a paired sub-batch and an
/// unpaired sub-batch, computes the paired risk, the stop-gradient denoiser
/// loss against supervisor pseudo-labels, and the correlation penalty on the
/// encoder latents, then takes one optimizer step on the weighted total.
/// The supervisor is never optimized; its parameter hash is recorded before
/// and after as proof.
pub fn fit_sud2(
    bundle: &DatasetBundle,
    recon: &ReconNet,
    supervisor: &dyn Denoiser,
    cfg: &TrainConfig,
    perceptual: Option<PerceptualHook<'_>>,
    mut epoch_hook: Option<EpochHook<'_>>,
) -> Result<SudOutcome> {
    cfg.validate()?;
    bundle.validate()?;
    if bundle.paired.is_empty() {
        return Err(Error::Config("semi-supervised run needs paired data".into()));
    }

    let weights = cfg.weights;
    let use_unpaired = (weights.lambda1 > 0.0 || weights.lambda2 > 0.0)
        && !bundle.unpaired_measure.is_empty();

    let mut rng = Prng::from_seed(cfg.seed);
    let supervisor_hash_before = supervisor.content_hash()?;

    // Held-out split carved from the unpaired measurements when their ground
    // truth is known.
    let n_measure = bundle.unpaired_measure.len();
    let have_truth = !bundle.unpaired_measure_truth.is_empty();
    let mut heldout: Vec<usize> = Vec::new();
    let mut train_measure: Vec<usize> = (0..n_measure).collect();
    if have_truth && n_measure >= 2 && cfg.heldout_fraction > 0.0 {
        let k = ((n_measure as f64 * cfg.heldout_fraction).ceil() as usize)
            .clamp(1, n_measure - 1);
        heldout = sample_indices(&mut rng, n_measure, k, false);
        heldout.sort_unstable();
        train_measure = (0..n_measure).filter(|i| !heldout.contains(i)).collect();
    }

    let paired_n = ((cfg.batch_size as f64 * cfg.paired_fraction).round() as usize)
        .clamp(1, cfg.batch_size);
    let unpaired_n = if use_unpaired {
        (cfg.batch_size - paired_n).max(2)
    } else {
        0
    };

    let mut sampled_with_replacement = false;
    if paired_n > bundle.paired.len() {
        eprintln!(
            "warning: paired sub-batch {} exceeds |P| = {}; sampling with replacement",
            paired_n,
            bundle.paired.len()
        );
        sampled_with_replacement = true;
    }
    if use_unpaired && unpaired_n > train_measure.len() {
        eprintln!(
            "warning: unpaired sub-batch {} exceeds available measurements {}; sampling with replacement",
            unpaired_n,
            train_measure.len()
        );
        sampled_with_replacement = true;
    }

    let mut optim = adamw(recon.params(), &cfg.optimizer)?;

    // Fixed probe batch for the collapse diagnostic.
    let probe_src = if use_unpaired { &train_measure } else { &heldout };
    let probe: Vec<usize> = if n_measure >= 2 {
        let src = if probe_src.is_empty() { &(0..n_measure).collect::<Vec<_>>() } else { probe_src };
        src.iter().copied().take(8.max(2).min(src.len())).collect()
    } else {
        Vec::new()
    };
    let probe_tensor = if probe.len() >= 2 {
        Some(tensor_of_images(
            &probe.iter().map(|&i| &bundle.unpaired_measure[i]).collect::<Vec<_>>(),
        )?)
    } else {
        None
    };

    let collapse_of = |net: &ReconNet| -> Result<Option<f64>> {
        match &probe_tensor {
            Some(t) => Ok(Some(collapse_metric(&net.forward(t, false)?)?)),
            None => Ok(None),
        }
    };

    let eval_of = |net: &ReconNet| -> Result<(Option<f64>, Option<f64>)> {
        if heldout.is_empty() || !have_truth {
            return Ok((None, None));
        }
        let mut psnr_acc = 0.0;
        let mut ssim_acc = 0.0;
        for &i in &heldout {
            let y = tensor_of_images(&[&bundle.unpaired_measure[i]])?;
            let out = images_from_tensor(&net.forward(&y, false)?)?.remove(0);
            psnr_acc += metrics::psnr(&out, &bundle.unpaired_measure_truth[i])?;
            ssim_acc += metrics::ssim(&out, &bundle.unpaired_measure_truth[i])?;
        }
        let n = heldout.len() as f64;
        Ok((Some(psnr_acc / n), Some(ssim_acc / n)))
    };

    let initial_collapse = collapse_of(recon)?.unwrap_or(f64::NAN);

    // An epoch nominally consumes |U_y| samples' worth of batches (or |P|
    // for paired-only runs).
    let steps_per_epoch = if use_unpaired {
        train_measure.len().div_ceil(cfg.batch_size).max(1)
    } else {
        bundle.paired.len().div_ceil(paired_n).max(1)
    };

    let mut history = TrainHistory::default();
    let mut global_step = 0usize;
    let mut last_eval = (None, None);
    for epoch in 0..cfg.epochs {
        for _ in 0..steps_per_epoch {
            // One forward over the concatenated paired + unpaired batch;
            // slices feed the individual loss terms.
            let idx = sample_indices(
                &mut rng,
                bundle.paired.len(),
                paired_n,
                paired_n > bundle.paired.len(),
            );
            let xs: Vec<&Image> = idx.iter().map(|&i| &bundle.paired[i].0).collect();
            let mut inputs: Vec<&Image> = idx.iter().map(|&i| &bundle.paired[i].1).collect();
            let x_p = tensor_of_images(&xs)?;
            let uidx = if use_unpaired {
                sample_indices(
                    &mut rng,
                    train_measure.len(),
                    unpaired_n,
                    unpaired_n > train_measure.len(),
                )
            } else {
                Vec::new()
            };
            for &i in &uidx {
                inputs.push(&bundle.unpaired_measure[train_measure[i]]);
            }
            let y_all = tensor_of_images(&inputs)?;
            let (pred_all, latents_all) = recon.forward_with_latent(&y_all, true)?;
            let pred_p = pred_all.narrow(0, 0, paired_n)?;
            let l_paired = paired_loss(&pred_p, &x_p)?;

            let mut l_perc_val = 0.0;
            let mut total = l_paired.clone();
            if let Some(hook) = perceptual {
                let lp = hook(&pred_p, &x_p)?;
                l_perc_val += lp.to_scalar::<f32>()? as f64;
                total = (total + lp)?;
            }

            let (mut l_den_val, mut l_reg_val) = (0.0, 0.0);
            if use_unpaired {
                let pred_u = pred_all.narrow(0, paired_n, uidx.len())?;
                let latents = latents_all.narrow(0, paired_n, uidx.len())?;

                if weights.lambda1 > 0.0 {
                    let labels = sud_pseudo_label(&pred_u, supervisor, &weights, &mut rng)?;
                    let l_den = denoiser_loss(&pred_u, &labels)?;
                    l_den_val = l_den.to_scalar::<f32>()? as f64;
                    total = (total + (l_den * weights.lambda1)?)?;
                    if let Some(hook) = perceptual {
                        let lp = (hook(&pred_u, &labels)? * weights.lambda1)?;
                        l_perc_val += lp.to_scalar::<f32>()? as f64;
                        total = (total + lp)?;
                    }
                }
                if weights.lambda2 > 0.0 {
                    let _ = &latents;
                    let l_reg = correlation_loss(&pred_u.flatten_from(1)?.contiguous()?)?;
                    l_reg_val = l_reg.to_scalar::<f32>()? as f64;
                    total = (total + (l_reg * weights.lambda2)?)?;
                }
            }

            let total_val = total.to_scalar::<f32>()? as f64;
            if !total_val.is_finite() {
                return Err(Error::Numerical(format!(
                    "total loss became non-finite at epoch {epoch}"
                )));
            }
            let grads = total.backward()?;
            optim.step(&grads)?;

            history.push(MetricsRow {
                epoch,
                step: global_step,
                loss_paired: l_paired.to_scalar::<f32>()? as f64,
                loss_denoiser: l_den_val,
                loss_reg: l_reg_val,
                loss_perceptual: l_perc_val,
                loss_total: total_val,
                ..Default::default()
            });
            global_step += 1;
        }

        // Epoch diagnostics on the last row of the epoch.
        let collapse = collapse_of(recon)?;
        last_eval = eval_of(recon)?;
        if let Some(row) = history.rows.last_mut() {
            row.collapse_metric = collapse;
            row.eval_psnr = last_eval.0;
            row.eval_ssim = last_eval.1;
        }
        if let Some(hook) = epoch_hook.as_mut() {
            hook(epoch, recon)?;
        }
    }

    let supervisor_hash_after = supervisor.content_hash()?;
    let final_collapse = collapse_of(recon)?.unwrap_or(f64::NAN);
    Ok(SudOutcome {
        history,
        supervisor_hash_before,
        supervisor_hash_after,
        initial_collapse,
        final_collapse,
        final_eval_psnr: last_eval.0,
        final_eval_ssim: last_eval.1,
        heldout_indices: heldout,
        sampled_with_replacement,
    })
}
