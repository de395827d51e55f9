//! Learned-denoiser behavior against the analytic oracles: the blind
//! autoencoder's residuals must align with the mixture score (the learned
//! Tweedie check), and the trained diffusion chain must act as a family-
//! preserving denoiser.

use candle_core::{Device, Tensor};
use sud2_core::denoisers::{
    ddpm_forward, ddpm_reverse, ddpm_roundtrip, tweedie_score, AutoencoderDenoiser, Denoiser,
    NoiseSchedule,
};
use sud2_core::distributions::{GaussianMixture, SmoothingNoise};
use sud2_core::models::{images_from_tensor, tensor_of_image, tensor_of_images, UNetConfig};
use sud2_core::tasks::{metrics, render_scene, ToyFamily};
use sud2_core::trainer::{pretrain_ddpm, pretrain_denoiser, OptimizerConfig, PretrainOptions};
use sud2_core::{Image, Prng};

/// Two 4x4 template images as the means of a pixel-space mixture in R^16.
fn template_mixture() -> (GaussianMixture, Vec<Image>) {
    let t1: Vec<f64> = vec![
        -0.4, -0.2, -0.2, -0.4, //
        -0.2, 0.5, 0.5, -0.2, //
        -0.2, 0.5, 0.5, -0.2, //
        -0.4, -0.2, -0.2, -0.4,
    ];
    let t2: Vec<f64> = vec![
        0.6, 0.4, 0.2, 0.0, //
        0.4, 0.2, 0.0, -0.2, //
        0.2, 0.0, -0.2, -0.4, //
        0.0, -0.2, -0.4, -0.6,
    ];
    let tau2 = 0.15 * 0.15;
    let gmm = GaussianMixture::new(vec![0.5, 0.5], vec![t1, t2], vec![tau2, tau2]).unwrap();
    let samples = gmm
        .sample(400, 31)
        .into_iter()
        .map(|v| Image::new(1, 4, 4, v.into_iter().map(|x| x as f32).collect()).unwrap())
        .collect();
    (gmm, samples)
}

#[test]
fn learned_tweedie_residuals_track_the_analytic_score() {
    let (gmm, images) = template_mixture();
    let cfg = UNetConfig::new(1, 1, 1, 16);
    let sigma = 0.3;
    let opts = PretrainOptions {
        epochs: 120,
        batch_size: 16,
        optimizer: OptimizerConfig {
            learning_rate: 2e-3,
            weight_decay: 0.0,
        },
        seed: 5,
    };
    let (net, report) = pretrain_denoiser(&images, &cfg, (0.2, 0.4), &opts).unwrap();
    assert!(report.final_loss < 0.05, "denoiser must learn: {}", report.final_loss);
    let denoiser = AutoencoderDenoiser::new(net, sigma);

    // Noisy probes from the smoothed mixture.
    let smoothed = gmm.smooth(SmoothingNoise::new(sigma).unwrap());
    let probes = smoothed.sample(64, 77);
    let mut rng = Prng::from_seed(3);

    let mut learned_all = Vec::new();
    let mut analytic_all = Vec::new();
    let mut cosine_acc = 0.0;
    for p in &probes {
        let img = Tensor::from_vec(
            p.iter().map(|&v| v as f32).collect::<Vec<f32>>(),
            (1, 1, 4, 4),
            &Device::Cpu,
        )
        .unwrap();
        let learned: Vec<f32> = tweedie_score(&denoiser, &img, sigma, &mut rng)
            .unwrap()
            .flatten_all()
            .unwrap()
            .to_vec1()
            .unwrap();
        let analytic = smoothed.score(p).unwrap();
        let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
        for (l, a) in learned.iter().zip(analytic.iter()) {
            let l = *l as f64;
            dot += l * a;
            na += l * l;
            nb += a * a;
            learned_all.push(l);
            analytic_all.push(*a);
        }
        cosine_acc += dot / (na.sqrt() * nb.sqrt()).max(1e-12);
    }
    let mean_cosine = cosine_acc / probes.len() as f64;
    assert!(
        mean_cosine >= 0.9,
        "cosine similarity to analytic score: {mean_cosine}"
    );

    // Pooled Pearson correlation across all coordinates.
    let n = learned_all.len() as f64;
    let ml = learned_all.iter().sum::<f64>() / n;
    let ma = analytic_all.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vl = 0.0;
    let mut va = 0.0;
    for (l, a) in learned_all.iter().zip(analytic_all.iter()) {
        cov += (l - ml) * (a - ma);
        vl += (l - ml) * (l - ml);
        va += (a - ma) * (a - ma);
    }
    let pearson = cov / (vl.sqrt() * va.sqrt()).max(1e-12);
    assert!(pearson >= 0.9, "pearson correlation: {pearson}");
}

#[test]
fn untrained_autoencoder_stays_near_its_initialization_scale() {
    // Pre-training baseline: the freshly built net is not an identity, but
    // its output on in-range data stays bounded and finite.
    let cfg = UNetConfig::new(1, 1, 2, 8);
    let net = sud2_core::models::build_autoencoder(cfg, 9).unwrap();
    let mut rng = Prng::from_seed(1);
    let scene = render_scene(ToyFamily::Blobs, 1, 16, 16, &mut rng);
    let x = tensor_of_image(&scene.image).unwrap();
    let y: Vec<f32> = net
        .forward(&x, false)
        .unwrap()
        .flatten_all()
        .unwrap()
        .to_vec1()
        .unwrap();
    assert!(y.iter().all(|v| v.is_finite() && v.abs() <= 1.0));
}

#[test]
fn degenerate_single_image_diffusion_recovers_the_constant() {
    // One constant training image: the full reverse chain from pure noise
    // must land on it.
    let constant = Image::splat(1, 8, 8, 0.35);
    let schedule = NoiseSchedule::linear_alpha_bar(60, 0.9999, 0.01).unwrap();
    let cfg = UNetConfig::new(1, 1, 2, 8);
    let opts = PretrainOptions {
        epochs: 900,
        batch_size: 4,
        optimizer: OptimizerConfig {
            learning_rate: 2e-3,
            weight_decay: 0.0,
        },
        seed: 11,
    };
    let data = vec![constant.clone()];
    let (net, report) = pretrain_ddpm(&data, &cfg, &schedule, &opts).unwrap();
    // Better-than-chance epsilon regression (target variance is 1).
    assert!(report.final_loss < 1.0, "eps mse {}", report.final_loss);

    let mut rng = Prng::from_seed(2);
    let mut mse_acc = 0.0;
    let runs = 8;
    for _ in 0..runs {
        let noise = Tensor::from_vec(rng.normal_vec_f32(64), (1, 1, 8, 8), &Device::Cpu).unwrap();
        let out = ddpm_reverse(&noise, schedule.len() - 1, &schedule, &net, &mut rng).unwrap();
        let img = images_from_tensor(&out).unwrap().remove(0);
        mse_acc += img.mse(&constant).unwrap();
    }
    let mse = mse_acc / runs as f64;
    assert!(mse <= 0.05, "reverse chain must land near the constant: mse {mse}");
}

fn trained_blob_ddpm() -> (sud2_core::models::DiffusionNet, NoiseSchedule, Vec<Image>) {
    let mut rng = Prng::from_seed(8);
    let train: Vec<Image> = (0..120)
        .map(|_| render_scene(ToyFamily::Blobs, 1, 16, 16, &mut rng).image)
        .collect();
    let held: Vec<Image> = (0..6)
        .map(|_| render_scene(ToyFamily::Blobs, 1, 16, 16, &mut rng).image)
        .collect();
    let schedule = NoiseSchedule::linear_alpha_bar(50, 0.9999, 0.01).unwrap();
    let cfg = UNetConfig::new(1, 1, 2, 16);
    let opts = PretrainOptions {
        epochs: 120,
        batch_size: 8,
        optimizer: OptimizerConfig::default(),
        seed: 13,
    };
    let (net, report) = pretrain_ddpm(&train, &cfg, &schedule, &opts).unwrap();
    assert!(report.final_loss < 1.0, "eps mse {}", report.final_loss);
    (net, schedule, held)
}

#[test]
fn roundtrip_denoises_at_band_depth_and_scrambles_at_full_depth() {
    let (net, schedule, held) = trained_blob_ddpm();
    let depth = 20; // 40% of the chain, the recommended band
    let mut rng = Prng::from_seed(4);

    // Roundtrip improves on the noisy intermediate by at least 6 dB, and
    // stays closer to its own input than to an unrelated image.
    let mut gain_acc = 0.0;
    let mut own_acc = 0.0;
    let mut other_acc = 0.0;
    for (i, img) in held.iter().enumerate() {
        let x = tensor_of_image(img).unwrap();
        let noisy = ddpm_forward(&x, depth, &schedule, &mut rng).unwrap();
        let rt = ddpm_roundtrip(&x, depth, &schedule, &net, &mut rng).unwrap();
        let mut noisy_img = images_from_tensor(&noisy).unwrap().remove(0);
        noisy_img.clamp_unit();
        let mut rt_img = images_from_tensor(&rt).unwrap().remove(0);
        rt_img.clamp_unit();
        gain_acc += metrics::psnr(&rt_img, img).unwrap() - metrics::psnr(&noisy_img, img).unwrap();
        own_acc += metrics::psnr(&rt_img, img).unwrap();
        other_acc += metrics::psnr(&rt_img, &held[(i + 1) % held.len()]).unwrap();
    }
    let mean_gain = gain_acc / held.len() as f64;
    assert!(
        mean_gain >= 6.0,
        "roundtrip should out-denoise the forward intermediate by 6 dB, got {mean_gain}"
    );
    assert!(
        own_acc > other_acc,
        "roundtrip must stay near its input: own {own_acc} vs other {other_acc}"
    );

    // Full-depth roundtrip no longer resembles the input: two different
    // inputs under a shared noise stream give outputs more alike than either
    // output is to its input.
    let full = schedule.len() - 1;
    let a = tensor_of_image(&held[0]).unwrap();
    let b = tensor_of_image(&held[1]).unwrap();
    let out_a = ddpm_roundtrip(&a, full, &schedule, &net, &mut Prng::from_seed(99)).unwrap();
    let out_b = ddpm_roundtrip(&b, full, &schedule, &net, &mut Prng::from_seed(99)).unwrap();
    let va: Vec<f32> = out_a.flatten_all().unwrap().to_vec1().unwrap();
    let vb: Vec<f32> = out_b.flatten_all().unwrap().to_vec1().unwrap();
    let ia: Vec<f32> = a.flatten_all().unwrap().to_vec1().unwrap();
    let corr = |x: &[f32], y: &[f32]| {
        let n = x.len() as f64;
        let mx = x.iter().map(|&v| v as f64).sum::<f64>() / n;
        let my = y.iter().map(|&v| v as f64).sum::<f64>() / n;
        let mut cov = 0.0;
        let mut vx = 0.0;
        let mut vy = 0.0;
        for (&a, &b) in x.iter().zip(y.iter()) {
            cov += (a as f64 - mx) * (b as f64 - my);
            vx += (a as f64 - mx) * (a as f64 - mx);
            vy += (b as f64 - my) * (b as f64 - my);
        }
        cov / (vx.sqrt() * vy.sqrt()).max(1e-12)
    };
    let cross_output = corr(&va, &vb);
    let input_output = corr(&va, &ia);
    assert!(
        cross_output > input_output,
        "full-depth outputs should decouple from inputs: cross {cross_output} vs in-out {input_output}"
    );
}

#[test]
fn batched_images_round_trip_shapes() {
    let mut rng = Prng::from_seed(0);
    let imgs: Vec<Image> = (0..3)
        .map(|_| render_scene(ToyFamily::Blobs, 1, 16, 16, &mut rng).image)
        .collect();
    let refs: Vec<&Image> = imgs.iter().collect();
    let t = tensor_of_images(&refs).unwrap();
    let back = images_from_tensor(&t).unwrap();
    assert_eq!(back, imgs);
}
