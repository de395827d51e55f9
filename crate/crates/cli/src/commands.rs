//! Subcommand implementations: pretrain, train, verify, eval, plot.

use std::path::{Path, PathBuf};

use sud2_core::denoisers::{AnalyticGmmDenoiser, AutoencoderDenoiser, DdpmDenoiser, Denoiser, NoiseSchedule};
use sud2_core::distributions::GaussianMixture;
use sud2_core::losses::{gog_distance, LossWeights};
use sud2_core::models::checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta, LoadedNet, NetKind};
use sud2_core::models::{build_unet, tensor_of_image, images_from_tensor, ReconNet, UNetConfig};
use sud2_core::tasks::{load_image_folder, make_toy_dataset, metrics, save_bundle, DatasetBundle, Provenance, Task, ToyFamily};
use sud2_core::trainer::{fit_sud2, pretrain_ddpm, pretrain_denoiser, OptimizerConfig, PretrainOptions, RunManifest, TrainConfig};
use sud2_core::verify::{check_kl_collapse, check_kl_toy, check_mode_shift, check_theorem1, check_tweedie, write_report_file, KlToyConfig, VerificationReport};
use sud2_core::{Error, Image, Tensor};

use crate::config::{ConfigError, KvConfig};
use crate::grid;

/// Process exit codes: 0 success, 1 verification/acceptance failure,
/// 2 configuration error, 3 numerical failure.
pub fn exit_code_of(err: &Error) -> u8 {
    match err {
        Error::Numerical(_) => 3,
        _ => 2,
    }
}

fn from_cfg_err(e: ConfigError) -> Error {
    Error::Config(e.to_string())
}

/// Output root override honored by every command.
fn resolve_output_dir(cfg: &KvConfig) -> Result<PathBuf, Error> {
    let dir = cfg.get("experiment", "output_dir").map_err(from_cfg_err)?;
    let path = match std::env::var("SUD2_OUTPUT_ROOT") {
        Ok(root) if !root.is_empty() => Path::new(&root).join(dir),
        _ => PathBuf::from(dir),
    };
    std::fs::create_dir_all(&path)?;
    Ok(path)
}

fn load_bundle_from_dir(dir: &Path, channels: usize, target: Option<(usize, usize)>) -> Result<DatasetBundle, Error> {
    let paired_dir = dir.join("paired");
    let mut paired = Vec::new();
    if paired_dir.is_dir() {
        let all = load_image_folder(&paired_dir, channels, target, true)?;
        // pair_XXXXX_x.png sorts immediately before its pair_XXXXX_y.png.
        for chunk in all.chunks(2) {
            if chunk.len() == 2 {
                paired.push((chunk[0].clone(), chunk[1].clone()));
            }
        }
    }
    let unpaired_clean = match load_image_folder(&dir.join("unpaired_clean"), channels, target, true) {
        Ok(v) => v,
        Err(_) => Vec::new(),
    };
    let (mut unpaired_measure, mut unpaired_measure_truth) = (Vec::new(), Vec::new());
    let measure_dir = dir.join("unpaired_measure");
    if measure_dir.is_dir() {
        let mut names: Vec<_> = std::fs::read_dir(&measure_dir)?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .collect();
        names.sort();
        for file in names {
            let name = file.file_name().unwrap_or_default().to_string_lossy().to_string();
            if let Ok(img) = Image::load(&file, channels, target) {
                if name.starts_with("truth_") {
                    unpaired_measure_truth.push(img);
                } else {
                    unpaired_measure.push(img);
                }
            }
        }
    }
    let bundle = DatasetBundle {
        paired,
        unpaired_clean,
        unpaired_measure,
        unpaired_measure_truth,
        provenance: Provenance {
            generator: format!("folder:{}", dir.display()),
            seed: 0,
            params: Vec::new(),
        },
    };
    bundle.validate()?;
    Ok(bundle)
}

/// Builds the dataset from either a generator spec or an on-disk bundle.
fn resolve_bundle(cfg: &KvConfig) -> Result<DatasetBundle, Error> {
    let channels = cfg.get_usize_or("experiment", "channels", 1).map_err(from_cfg_err)?;
    if cfg.has("experiment", "dataset_dir") {
        let dir = cfg.get("experiment", "dataset_dir").map_err(from_cfg_err)?;
        let target = if cfg.has("experiment", "height") {
            Some((
                cfg.get_usize("experiment", "height").map_err(from_cfg_err)?,
                cfg.get_usize("experiment", "width").map_err(from_cfg_err)?,
            ))
        } else {
            None
        };
        return load_bundle_from_dir(Path::new(dir), channels, target);
    }
    let task = Task::parse(cfg.get_or("experiment", "task", "inpaint")).map_err(|e| e)?;
    let family = ToyFamily::parse(cfg.get_or(
        "experiment",
        "family",
        if task == Task::Dehaze { "rooms" } else { "blobs" },
    ))?;
    let h = cfg.get_usize_or("experiment", "height", 64).map_err(from_cfg_err)?;
    let w = cfg.get_usize_or("experiment", "width", 64).map_err(from_cfg_err)?;
    let counts = (
        cfg.get_usize_or("experiment", "paired", 5).map_err(from_cfg_err)?,
        cfg.get_usize_or("experiment", "unpaired_clean", 60).map_err(from_cfg_err)?,
        cfg.get_usize_or("experiment", "unpaired_measure", 200).map_err(from_cfg_err)?,
    );
    let seed = cfg.get_u64_or("experiment", "data_seed", 0).map_err(from_cfg_err)?;
    make_toy_dataset(task, family, channels, (h, w), counts, seed)
}

fn model_cfg_from(cfg: &KvConfig, section: &str, fallback: &UNetConfig) -> Result<UNetConfig, Error> {
    Ok(UNetConfig {
        in_channels: fallback.in_channels,
        out_channels: fallback.out_channels,
        depth: cfg.get_usize_or(section, "depth", fallback.depth).map_err(from_cfg_err)?,
        base_width: cfg
            .get_usize_or(section, "base_width", fallback.base_width)
            .map_err(from_cfg_err)?,
        use_attention: cfg
            .get_bool_or(section, "use_attention", fallback.use_attention)
            .map_err(from_cfg_err)?,
        negative_slope: cfg
            .get_f64_or(section, "negative_slope", fallback.negative_slope)
            .map_err(from_cfg_err)?,
    })
}

fn optimizer_from(cfg: &KvConfig, section: &str) -> Result<OptimizerConfig, Error> {
    Ok(OptimizerConfig {
        learning_rate: cfg.get_f64_or(section, "learning_rate", 1e-3).map_err(from_cfg_err)?,
        weight_decay: cfg.get_f64_or(section, "weight_decay", 1e-4).map_err(from_cfg_err)?,
    })
}

pub fn cmd_pretrain(config_path: &Path) -> Result<(), Error> {
    let cfg = KvConfig::load(config_path).map_err(from_cfg_err)?;
    let out_dir = resolve_output_dir(&cfg)?;
    let bundle = resolve_bundle(&cfg)?;
    if bundle.unpaired_clean.is_empty() {
        return Err(Error::Config("pre-training needs unpaired clean images".into()));
    }
    let (c, _, _) = bundle.image_shape()?;
    let base = UNetConfig::new(c, c, 3, 8);
    let net_cfg = model_cfg_from(&cfg, "pretrain", &base)?;
    let opts = PretrainOptions {
        epochs: cfg.get_usize_or("pretrain", "epochs", 30).map_err(from_cfg_err)?,
        batch_size: cfg.get_usize_or("pretrain", "batch_size", 8).map_err(from_cfg_err)?,
        optimizer: optimizer_from(&cfg, "pretrain")?,
        seed: cfg.get_u64_or("pretrain", "seed", 0).map_err(from_cfg_err)?,
    };

    let kind = cfg.get_or("pretrain", "kind", "autoencoder").to_string();
    let ckpt_dir = out_dir.join("checkpoint");
    let mut manifest = RunManifest::default();
    manifest.put("command", "pretrain");
    manifest.put("config_hash", format!("{:016x}", cfg.content_hash()));
    manifest.put("bundle_hash", format!("{:016x}", bundle.content_hash()));
    manifest.put("seed", opts.seed);
    manifest.put("kind", &kind);

    let report = match kind.as_str() {
        "autoencoder" => {
            let sigma_lo = cfg.get_f64_or("pretrain", "sigma_lo", 0.05).map_err(from_cfg_err)?;
            let sigma_hi = cfg.get_f64_or("pretrain", "sigma_hi", 0.4).map_err(from_cfg_err)?;
            let (net, report) =
                pretrain_denoiser(&bundle.unpaired_clean, &net_cfg, (sigma_lo, sigma_hi), &opts)?;
            save_checkpoint(
                &ckpt_dir,
                &CheckpointMeta {
                    kind: NetKind::Autoencoder { sigma_lo, sigma_hi },
                    config: net_cfg,
                    step: (opts.epochs * bundle.unpaired_clean.len().div_ceil(opts.batch_size)) as u64,
                },
                net.params(),
            )?;
            report
        }
        "ddpm" => {
            let schedule = NoiseSchedule::linear_alpha_bar(
                cfg.get_usize_or("pretrain", "schedule_len", 100).map_err(from_cfg_err)?,
                cfg.get_f64_or("pretrain", "abar_first", 0.9999).map_err(from_cfg_err)?,
                cfg.get_f64_or("pretrain", "abar_last", 0.01).map_err(from_cfg_err)?,
            )?;
            let (net, report) = pretrain_ddpm(&bundle.unpaired_clean, &net_cfg, &schedule, &opts)?;
            save_checkpoint(
                &ckpt_dir,
                &CheckpointMeta {
                    kind: NetKind::Diffusion {
                        schedule: schedule.record().clone(),
                    },
                    config: net_cfg,
                    step: (opts.epochs * bundle.unpaired_clean.len().div_ceil(opts.batch_size)) as u64,
                },
                net.params(),
            )?;
            report
        }
        other => return Err(Error::Config(format!("unknown pretrain kind `{other}`"))),
    };

    // Per-epoch loss curve.
    let mut csv = String::from("epoch,loss\n");
    for (i, l) in report.epoch_losses.iter().enumerate() {
        csv.push_str(&format!("{i},{l:.9e}\n"));
    }
    std::fs::write(out_dir.join("pretrain_loss.csv"), csv)?;
    manifest.put("final_loss", format!("{:.9e}", report.final_loss));
    manifest.save(&out_dir.join("manifest.txt"))?;
    println!(
        "pretrained {kind}: final loss {:.6} -> {}",
        report.final_loss,
        ckpt_dir.display()
    );
    Ok(())
}

/// Loads whichever supervisor the config names.
fn resolve_supervisor(cfg: &KvConfig) -> Result<Box<dyn Denoiser>, Error> {
    match cfg.get_or("train", "supervisor", "autoencoder") {
        "analytic" => {
            let gmm_path = cfg.get("train", "gmm_path").map_err(from_cfg_err)?;
            let sigma = cfg.get_f64_or("train", "analytic_sigma", 0.3).map_err(from_cfg_err)?;
            let gmm = GaussianMixture::load(Path::new(gmm_path))?;
            Ok(Box::new(AnalyticGmmDenoiser::new(gmm, sigma)?))
        }
        "autoencoder" => {
            let path = cfg.get("train", "supervisor_checkpoint").map_err(from_cfg_err)?;
            match load_checkpoint(Path::new(path))? {
                (LoadedNet::Autoencoder { net, sigma_lo, sigma_hi }, _) => {
                    Ok(Box::new(AutoencoderDenoiser::new(net, 0.5 * (sigma_lo + sigma_hi))))
                }
                _ => Err(Error::Config(format!("{path} is not an autoencoder checkpoint"))),
            }
        }
        "ddpm" => {
            let path = cfg.get("train", "supervisor_checkpoint").map_err(from_cfg_err)?;
            match load_checkpoint(Path::new(path))? {
                (LoadedNet::Diffusion { net, schedule }, _) => {
                    let default_depth = (2 * schedule.len()) / 5;
                    let depth = cfg
                        .get_usize_or("train", "diffusion_steps", default_depth)
                        .map_err(from_cfg_err)?;
                    Ok(Box::new(DdpmDenoiser::new(net, schedule, depth)?))
                }
                _ => Err(Error::Config(format!("{path} is not a diffusion checkpoint"))),
            }
        }
        other => Err(Error::Config(format!("unknown supervisor `{other}`"))),
    }
}

pub fn cmd_train(config_path: &Path) -> Result<(), Error> {
    let cfg = KvConfig::load(config_path).map_err(from_cfg_err)?;
    let out_dir = resolve_output_dir(&cfg)?;
    let bundle = resolve_bundle(&cfg)?;
    let (c, h, w) = bundle.image_shape()?;

    let supervisor = resolve_supervisor(&cfg)?;

    // Ablation toggles.
    let use_injection = cfg.get_bool_or("train", "noise_injection", true).map_err(from_cfg_err)?;
    let use_correlation = cfg.get_bool_or("train", "correlation_loss", true).map_err(from_cfg_err)?;
    let sigma2 = if !use_injection {
        0.0
    } else if cfg.get_or("train", "sigma2", "auto") == "auto" {
        supervisor.default_injection_sigma()
    } else {
        cfg.get_f64("train", "sigma2").map_err(from_cfg_err)?
    };
    let lambda2 = if use_correlation {
        cfg.get_f64_or("train", "lambda2", 10.0).map_err(from_cfg_err)?
    } else {
        0.0
    };
    let weights = LossWeights::new(
        cfg.get_f64_or("train", "lambda1", 0.01).map_err(from_cfg_err)?,
        lambda2,
        sigma2,
    )?;

    let train_cfg = TrainConfig {
        weights,
        diffusion_steps: cfg.get_usize_or("train", "diffusion_steps", 40).map_err(from_cfg_err)?,
        optimizer: optimizer_from(&cfg, "train")?,
        batch_size: cfg.get_usize_or("train", "batch_size", 8).map_err(from_cfg_err)?,
        epochs: cfg.get_usize_or("train", "epochs", 50).map_err(from_cfg_err)?,
        seed: cfg.get_u64_or("train", "seed", 0).map_err(from_cfg_err)?,
        paired_fraction: cfg.get_f64_or("train", "paired_fraction", 0.25).map_err(from_cfg_err)?,
        heldout_fraction: cfg.get_f64_or("train", "heldout_fraction", 0.1).map_err(from_cfg_err)?,
    };

    let recon_cfg = model_cfg_from(&cfg, "model", &UNetConfig::new(c, c, 4, 8))?;
    let recon = build_unet(recon_cfg.clone(), train_cfg.seed)?;

    let grid_every = cfg.get_usize_or("train", "grid_every", 10).map_err(from_cfg_err)?;
    let grid_dir = out_dir.join("grids");
    std::fs::create_dir_all(&grid_dir)?;
    // Grid sources: a few measurements with their references when known.
    let grid_rows: Vec<(Image, Option<Image>)> = bundle
        .unpaired_measure
        .iter()
        .take(4)
        .enumerate()
        .map(|(i, y)| (y.clone(), bundle.unpaired_measure_truth.get(i).cloned()))
        .collect();
    let mut emit_grid = |epoch: usize, net: &ReconNet| -> Result<(), Error> {
        if grid_rows.is_empty() || (epoch + 1) % grid_every != 0 {
            return Ok(());
        }
        let mut rows = Vec::new();
        let mut recon_imgs = Vec::new();
        for (y, _) in &grid_rows {
            let pred = net.forward(&tensor_of_image(y)?, false)?;
            let mut img = images_from_tensor(&pred)?.remove(0);
            img.clamp_unit();
            recon_imgs.push(img);
        }
        for (i, (y, x)) in grid_rows.iter().enumerate() {
            let mut row = vec![y, &recon_imgs[i]];
            if let Some(reference) = x {
                row.push(reference);
            }
            rows.push(row);
        }
        let sheet = grid::assemble_grid(&rows)?;
        sheet.save_png(&grid_dir.join(format!("epoch_{:04}.png", epoch + 1)))?;
        Ok(())
    };

    let perceptual_kind = cfg.get_or("train", "perceptual", "none").to_string();
    let hook = |a: &Tensor, b: &Tensor| gog_distance(a, b);
    let perceptual = match perceptual_kind.as_str() {
        "none" => None,
        "gog" => Some(&hook as sud2_core::trainer::PerceptualHook<'_>),
        other => return Err(Error::Config(format!("unknown perceptual hook `{other}`"))),
    };

    let outcome = fit_sud2(
        &bundle,
        &recon,
        supervisor.as_ref(),
        &train_cfg,
        perceptual,
        Some(&mut emit_grid),
    )?;

    outcome.history.save_csv(&out_dir.join("metrics.csv"))?;
    save_checkpoint(
        &out_dir.join("checkpoint"),
        &CheckpointMeta {
            kind: NetKind::Recon,
            config: recon_cfg,
            step: outcome.history.rows.len() as u64,
        },
        recon.params(),
    )?;

    let mut manifest = RunManifest::default();
    manifest.put("command", "train");
    manifest.put("config_hash", format!("{:016x}", cfg.content_hash()));
    manifest.put("bundle_hash", format!("{:016x}", bundle.content_hash()));
    manifest.put("image_shape", format!("{c}x{h}x{w}"));
    manifest.put("seed", train_cfg.seed);
    manifest.put("lambda1", weights.lambda1);
    manifest.put("lambda2", weights.lambda2);
    manifest.put("sigma2", weights.sigma2);
    manifest.put("supervisor", cfg.get_or("train", "supervisor", "autoencoder"));
    manifest.put("supervisor_hash_before", &outcome.supervisor_hash_before);
    manifest.put("supervisor_hash_after", &outcome.supervisor_hash_after);
    manifest.put("supervisor_frozen", outcome.supervisor_hash_before == outcome.supervisor_hash_after);
    manifest.put("initial_collapse", outcome.initial_collapse);
    manifest.put("final_collapse", outcome.final_collapse);
    if let Some(p) = outcome.final_eval_psnr {
        manifest.put("final_eval_psnr", p);
    }
    if let Some(s) = outcome.final_eval_ssim {
        manifest.put("final_eval_ssim", s);
    }
    manifest.put("sampled_with_replacement", outcome.sampled_with_replacement);

    // Collapse warning threshold: 5% of the initial diversity.
    if outcome.final_collapse < 0.05 * outcome.initial_collapse {
        eprintln!(
            "warning: collapse detected (final diversity {:.4} < 5% of initial {:.4})",
            outcome.final_collapse, outcome.initial_collapse
        );
        manifest.put("collapse_warning", true);
    }
    manifest.save(&out_dir.join("manifest.txt"))?;

    if !bundle.provenance.generator.starts_with("folder:") {
        save_bundle(&bundle, &out_dir.join("dataset"))?;
    }
    println!(
        "trained: final collapse {:.4}, eval psnr {:?} -> {}",
        outcome.final_collapse,
        outcome.final_eval_psnr,
        out_dir.display()
    );
    Ok(())
}

/// Standard mixture configurations exercised by the verification suites.
fn standard_mixtures() -> Vec<(String, GaussianMixture)> {
    let bimodal = GaussianMixture::symmetric_bimodal(1.0, 0.04).unwrap();
    let three = GaussianMixture::new(
        vec![0.4, 0.35, 0.25],
        vec![vec![0.0, 0.0], vec![3.0, 1.0], vec![-2.0, 2.0]],
        vec![0.3, 0.25, 0.4],
    )
    .unwrap();
    let mut m1 = vec![0.5; 16];
    m1[3] = 2.0;
    let wide = GaussianMixture::new(vec![0.6, 0.4], vec![m1, vec![-0.5; 16]], vec![0.5, 0.8]).unwrap();
    vec![
        ("bimodal_1d".into(), bimodal),
        ("three_component_2d".into(), three),
        ("two_component_16d".into(), wide),
    ]
}

pub struct VerifyArgs {
    pub suite: String,
    pub sigma: Option<f64>,
    pub seed: u64,
    pub points: Option<usize>,
    pub gmm_path: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

/// Runs the selected checks. Returns the reports; the caller maps any
/// failure to exit status 1.
pub fn cmd_verify(args: &VerifyArgs) -> Result<Vec<VerificationReport>, Error> {
    let mixtures = match &args.gmm_path {
        Some(path) => vec![("custom".to_string(), GaussianMixture::load(path)?)],
        None => standard_mixtures(),
    };
    let sigma = args.sigma.unwrap_or(0.5);
    let seed = args.seed;
    let mut reports = Vec::new();

    let run_tweedie = |reports: &mut Vec<VerificationReport>| -> Result<(), Error> {
        for (name, gmm) in &mixtures {
            let mut r = check_tweedie(gmm, sigma, args.points.unwrap_or(100), seed, 1e-5)?;
            r.check = format!("tweedie/{name}");
            reports.push(r);
        }
        Ok(())
    };
    let run_theorem1 = |reports: &mut Vec<VerificationReport>| -> Result<(), Error> {
        for (name, gmm) in &mixtures {
            let mut r = check_theorem1(gmm, sigma, args.points.unwrap_or(50), seed, 1e-4)?;
            r.check = format!("theorem1/{name}");
            reports.push(r);
        }
        Ok(())
    };
    let run_mode_shift = |reports: &mut Vec<VerificationReport>| -> Result<(), Error> {
        let mut last = 0.0;
        for m in [0.5, 1.0, 2.0] {
            let outcome = check_mode_shift(m, 0.04, &[0.1, 3.0 * m], seed)?;
            let mut r = outcome.report;
            r.check = format!("mode_shift/m{m}");
            // Monotonicity of the critical sigma across separations.
            r.sub_metrics.push((
                "monotone_in_m".into(),
                if outcome.critical_sigma > last { 0.0 } else { 1.0 },
                0.5,
            ));
            r.pass = r.pass && outcome.critical_sigma > last;
            last = outcome.critical_sigma;
            reports.push(r);
        }
        Ok(())
    };
    let run_kl = |reports: &mut Vec<VerificationReport>| -> Result<(), Error> {
        let gmm = GaussianMixture::new(
            vec![0.4, 0.35, 0.25],
            vec![vec![0.0, 0.0], vec![3.0, 1.0], vec![-2.0, 2.0]],
            vec![0.3, 0.25, 0.4],
        )?;
        let cfg = KlToyConfig::default();
        let toy = check_kl_toy(&gmm, args.sigma.unwrap_or(0.3), 400, 1600, seed, &cfg)?;
        reports.push(toy.report);
        let collapse = check_kl_collapse(&gmm, args.sigma.unwrap_or(0.3), 400, 1600, seed, &cfg)?;
        reports.push(collapse.report);
        Ok(())
    };

    match args.suite.as_str() {
        "tweedie" => run_tweedie(&mut reports)?,
        "theorem1" => run_theorem1(&mut reports)?,
        "mode-shift" => run_mode_shift(&mut reports)?,
        "kl" => run_kl(&mut reports)?,
        "theorems" | "all" => {
            run_tweedie(&mut reports)?;
            run_theorem1(&mut reports)?;
            run_mode_shift(&mut reports)?;
            run_kl(&mut reports)?;
        }
        other => return Err(Error::Config(format!("unknown verify suite `{other}`"))),
    }

    for r in &reports {
        println!("{r}");
    }
    if let Some(out) = &args.out {
        if let Some(parent) = out.parent() {
            std::fs::create_dir_all(parent)?;
        }
        write_report_file(&reports, out)?;
    }
    Ok(reports)
}

pub struct EvalArgs {
    pub checkpoint: PathBuf,
    pub dataset: PathBuf,
    pub channels: usize,
    pub out: Option<PathBuf>,
    pub compare: Option<PathBuf>,
}

struct EvalSummary {
    rows: Vec<(usize, f64, f64)>,
    mean_psnr: f64,
    median_psnr: f64,
    mean_ssim: f64,
    median_ssim: f64,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn eval_checkpoint(ckpt: &Path, pairs: &[(Image, Image)]) -> Result<EvalSummary, Error> {
    enum Net {
        Identity,
        Recon(Box<ReconNet>),
    }
    let net = if ckpt.as_os_str() == "identity" {
        Net::Identity
    } else {
        match load_checkpoint(ckpt)? {
            (LoadedNet::Recon(net), _) => Net::Recon(Box::new(net)),
            _ => {
                return Err(Error::Config(format!(
                    "{} is not a reconstruction checkpoint",
                    ckpt.display()
                )))
            }
        }
    };
    let mut rows = Vec::new();
    let (mut psnrs, mut ssims) = (Vec::new(), Vec::new());
    for (i, (x, y)) in pairs.iter().enumerate() {
        let pred = match &net {
            Net::Identity => y.clone(),
            Net::Recon(net) => {
                let mut img = images_from_tensor(&net.forward(&tensor_of_image(y)?, false)?)?
                    .remove(0);
                img.clamp_unit();
                img
            }
        };
        let p = metrics::psnr(&pred, x)?;
        let s = metrics::ssim(&pred, x)?;
        rows.push((i, p, s));
        psnrs.push(p);
        ssims.push(s);
    }
    let n = rows.len() as f64;
    Ok(EvalSummary {
        mean_psnr: psnrs.iter().sum::<f64>() / n,
        mean_ssim: ssims.iter().sum::<f64>() / n,
        median_psnr: median(&mut psnrs),
        median_ssim: median(&mut ssims),
        rows,
    })
}

/// Evaluates a checkpoint on a dataset directory, reporting both the mean
/// and the median of PSNR/SSIM, with an optional side-by-side comparison.
pub fn cmd_eval(args: &EvalArgs) -> Result<(), Error> {
    // Evaluation pairs: the paired set, plus measurement/truth pairs.
    let bundle = load_bundle_from_dir(&args.dataset, args.channels, None)?;
    let mut pairs: Vec<(Image, Image)> = bundle.paired.clone();
    for (y, x) in bundle
        .unpaired_measure
        .iter()
        .zip(bundle.unpaired_measure_truth.iter())
    {
        pairs.push((x.clone(), y.clone()));
    }
    if pairs.is_empty() {
        return Err(Error::Config("dataset has no evaluable pairs".into()));
    }

    let main = eval_checkpoint(&args.checkpoint, &pairs)?;
    let mut csv = String::from("index,psnr,ssim\n");
    for (i, p, s) in &main.rows {
        csv.push_str(&format!("{i},{p:.12e},{s:.12e}\n"));
    }
    println!(
        "eval {}: n={} mean psnr {:.4} median psnr {:.4} mean ssim {:.4} median ssim {:.4}",
        args.checkpoint.display(),
        main.rows.len(),
        main.mean_psnr,
        main.median_psnr,
        main.mean_ssim,
        main.median_ssim
    );

    if let Some(other) = &args.compare {
        let alt = eval_checkpoint(other, &pairs)?;
        println!(
            "compare {}: mean psnr {:.4} ({:+.4}) mean ssim {:.4} ({:+.4})",
            other.display(),
            alt.mean_psnr,
            alt.mean_psnr - main.mean_psnr,
            alt.mean_ssim,
            alt.mean_ssim - main.mean_ssim
        );
    }

    if let Some(out) = &args.out {
        if let Some(parent) = out.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(out, &csv)?;
        let summary = format!(
            "n = {}\nmean_psnr = {:.9}\nmedian_psnr = {:.9}\nmean_ssim = {:.9}\nmedian_ssim = {:.9}\n",
            main.rows.len(),
            main.mean_psnr,
            main.median_psnr,
            main.mean_ssim,
            main.median_ssim
        );
        std::fs::write(out.with_extension("summary.txt"), summary)?;
    }
    Ok(())
}

/// Renders loss and diagnostic curves from a metrics CSV into PNG charts.
pub fn cmd_plot(metrics_csv: &Path, out_dir: &Path) -> Result<(), Error> {
    let text = std::fs::read_to_string(metrics_csv)?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| Error::Config("empty metrics csv".into()))?
        .split(',')
        .collect();
    let col = |name: &str| -> Result<usize, Error> {
        header
            .iter()
            .position(|h| *h == name)
            .ok_or_else(|| Error::Config(format!("metrics csv missing column `{name}`")))
    };
    let step_col = col("step")?;
    let loss_cols = [
        ("loss_paired", col("loss_paired")?),
        ("loss_denoiser", col("loss_denoiser")?),
        ("loss_reg", col("loss_reg")?),
        ("loss_total", col("loss_total")?),
    ];
    let diag_cols = [
        ("collapse_metric", col("collapse_metric")?),
        ("eval_psnr", col("eval_psnr")?),
    ];

    let mut losses: Vec<(&str, Vec<(f64, f64)>)> =
        loss_cols.iter().map(|(n, _)| (*n, Vec::new())).collect();
    let mut diags: Vec<(&str, Vec<(f64, f64)>)> =
        diag_cols.iter().map(|(n, _)| (*n, Vec::new())).collect();
    for line in lines {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != header.len() {
            continue;
        }
        let step: f64 = fields[step_col].parse().unwrap_or(f64::NAN);
        for (slot, (_, c)) in losses.iter_mut().zip(loss_cols.iter()) {
            if let Ok(v) = fields[*c].parse::<f64>() {
                slot.1.push((step, v));
            }
        }
        for (slot, (_, c)) in diags.iter_mut().zip(diag_cols.iter()) {
            if let Ok(v) = fields[*c].parse::<f64>() {
                slot.1.push((step, v));
            }
        }
    }

    std::fs::create_dir_all(out_dir)?;
    let loss_img = grid::plot_series(
        &losses.iter().map(|(n, v)| (*n, v.clone())).collect::<Vec<_>>(),
        256,
        512,
    );
    loss_img.save_png(&out_dir.join("losses.png"))?;
    let diag_img = grid::plot_series(
        &diags.iter().map(|(n, v)| (*n, v.clone())).collect::<Vec<_>>(),
        256,
        512,
    );
    diag_img.save_png(&out_dir.join("diagnostics.png"))?;
    println!("wrote {} and {}", out_dir.join("losses.png").display(), out_dir.join("diagnostics.png").display());
    Ok(())
}
