//! Benchmarks for the numeric kernels on the hot paths: mixture density and
//! score evaluation, the diffusion chains, image metrics and the network
//! forward pass.

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use std::hint::black_box;

use sud2_core::denoisers::{ddpm_forward, NoiseSchedule};
use sud2_core::distributions::{GaussianMixture, SmoothingNoise};
use sud2_core::models::{build_unet, tensor_of_image, UNetConfig};
use sud2_core::tasks::{metrics, render_scene, ToyFamily};
use sud2_core::verify::knn;
use sud2_core::{Image, Prng};

fn wide_mixture() -> GaussianMixture {
    let mut m1 = vec![0.5; 16];
    m1[3] = 2.0;
    GaussianMixture::new(vec![0.6, 0.4], vec![m1, vec![-0.5; 16]], vec![0.5, 0.8]).unwrap()
}

fn bench_mixture(c: &mut Criterion) {
    let gmm = wide_mixture();
    let noise = SmoothingNoise::new(0.5).unwrap();
    let mut rng = Prng::from_seed(1);
    let point: Vec<f64> = (0..16).map(|_| rng.uniform(-2.0, 2.0)).collect();

    c.bench_function("gmm_log_density_16d", |b| {
        b.iter(|| gmm.log_density(black_box(&point)).unwrap())
    });
    c.bench_function("gmm_score_16d", |b| {
        b.iter(|| gmm.score(black_box(&point)).unwrap())
    });
    c.bench_function("gmm_mmse_denoise_16d", |b| {
        b.iter(|| gmm.mmse_denoise(black_box(&point), noise).unwrap())
    });
}

fn bench_ddpm_chain(c: &mut Criterion) {
    let schedule = NoiseSchedule::desk_default();
    let mut rng = Prng::from_seed(2);
    let scene = render_scene(ToyFamily::Blobs, 1, 64, 64, &mut rng);
    let x = tensor_of_image(&scene.image).unwrap();

    c.bench_function("ddpm_forward_40_of_100_64px", |b| {
        b.iter_batched(
            || Prng::from_seed(3),
            |mut rng| ddpm_forward(black_box(&x), 40, &schedule, &mut rng).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

fn bench_metrics(c: &mut Criterion) {
    let mut rng = Prng::from_seed(4);
    let a = render_scene(ToyFamily::Blobs, 1, 64, 64, &mut rng).image;
    let b_img = render_scene(ToyFamily::Blobs, 1, 64, 64, &mut rng).image;

    c.bench_function("psnr_64px", |b| {
        b.iter(|| metrics::psnr(black_box(&a), black_box(&b_img)).unwrap())
    });
    c.bench_function("ssim_64px", |b| {
        b.iter(|| metrics::ssim(black_box(&a), black_box(&b_img)).unwrap())
    });
}

fn bench_unet_forward(c: &mut Criterion) {
    let net = build_unet(UNetConfig::new(1, 1, 4, 8), 7).unwrap();
    let mut rng = Prng::from_seed(5);
    let img = Image::new(
        1,
        64,
        64,
        (0..64 * 64).map(|_| rng.uniform(-1.0, 1.0) as f32).collect(),
    )
    .unwrap();
    let x = tensor_of_image(&img).unwrap();
    c.bench_function("unet_forward_depth4_base8_64px", |b| {
        b.iter(|| net.forward(black_box(&x), false).unwrap())
    });
}

fn bench_knn(c: &mut Criterion) {
    let gmm = GaussianMixture::new(
        vec![0.5, 0.5],
        vec![vec![0.0, 0.0], vec![2.0, 1.0]],
        vec![0.3, 0.4],
    )
    .unwrap();
    let p = gmm.sample(400, 6);
    let q = gmm.sample(2000, 7);
    c.bench_function("knn_kl_divergence_400v2000", |b| {
        b.iter(|| knn::knn_kl_divergence(black_box(&p), black_box(&q), 3))
    });
}

criterion_group!(
    benches,
    bench_mixture,
    bench_ddpm_chain,
    bench_metrics,
    bench_unet_forward,
    bench_knn
);
criterion_main!(benches);
