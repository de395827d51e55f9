//! Training objectives: paired empirical risk, the denoiser loss with
//! stop-gradient pseudo-labels and noise injection, the correlation
//! (diversity) penalty on encoder latents, and the weighted total.

use candle_core::Tensor;

use crate::denoisers::Denoiser;
use crate::error::Result;
use crate::rng::Prng;

/// Scalar weights of the combined objective plus the injection noise level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    /// Weight of the denoiser (pseudo-label) loss.
    pub lambda1: f64,
    /// Weight of the correlation regularizer.
    pub lambda2: f64,
    /// Std of the noise injected onto reconstructions before denoising.
    pub sigma2: f64,
}

impl LossWeights {
    pub fn new(lambda1: f64, lambda2: f64, sigma2: f64) -> Result<Self> {
        if lambda1 < 0.0 || lambda2 < 0.0 || sigma2 < 0.0 {
            invalid_arg!("loss weights must be nonnegative: {lambda1}, {lambda2}, {sigma2}");
        }
        Ok(Self {
            lambda1,
            lambda2,
            sigma2,
        })
    }

    /// The published default weighting: lambda1 = 0.01, lambda2 = 10.
    pub fn paper_defaults() -> Self {
        Self {
            lambda1: 0.01,
            lambda2: 10.0,
            sigma2: 0.0,
        }
    }
}

fn batched_mean_sq_norm(a: &Tensor, b: &Tensor, what: &str) -> Result<Tensor> {
    if a.shape() != b.shape() {
        shape_mismatch!("{what}: {:?} vs {:?}", a.shape(), b.shape());
    }
    let batch = a.dim(0)? as f64;
    let diff = (a - b)?;
    Ok((diff.sqr()?.sum_all()? / batch)?)
}

/// Empirical risk on paired data: mean over the batch of the squared L2
/// distance per sample. The gradient with respect to each prediction is
/// `2 (pred - target) / batch`.
pub fn paired_loss(predictions: &Tensor, targets: &Tensor) -> Result<Tensor> {
    batched_mean_sq_norm(predictions, targets, "paired_loss")
}

/// Denoiser loss on unpaired data; `labels` must already be gradient-blocked
/// (see [`sud_pseudo_label`]). Same mean-squared form as the paired risk, so
/// the gradient per reconstruction is `2 (recon - label) / batch`.
pub fn denoiser_loss(reconstructions: &Tensor, labels: &Tensor) -> Result<Tensor> {
    batched_mean_sq_norm(reconstructions, labels, "denoiser_loss")
}

/// Generates the pseudo-label `D(recon + nu2)` with `nu2 ~ N(0, sigma2^2 I)`
/// and blocks gradients: the returned tensor is a constant for
/// differentiation, so no gradient reaches the denoiser or flows back into
/// the reconstruction through the label. With `sigma2 = 0` this is the plain
/// supervision-by-denoising label.
pub fn sud_pseudo_label(
    reconstruction: &Tensor,
    denoiser: &dyn Denoiser,
    weights: &LossWeights,
    rng: &mut Prng,
) -> Result<Tensor> {
    let mut input = reconstruction.detach();
    if weights.sigma2 > 0.0 {
        let noise = Tensor::from_vec(
            rng.normal_vec_f32(input.elem_count()),
            input.shape(),
            input.device(),
        )?;
        input = (input + (noise * weights.sigma2)?)?;
    }
    Ok(denoiser.denoise(&input, rng)?.detach())
}

/// Mean squared off-diagonal entry of the batch PCC matrix of flattened
/// latents. 0 means pairwise uncorrelated, 1 means perfectly (anti-)
/// correlated; squaring penalizes both signs.
pub fn correlation_loss(latents: &Tensor) -> Result<Tensor> {
    let (b, _len) = latents.dims2()?;
    if b < 2 {
        invalid_arg!("correlation loss needs a batch of at least 2 latents, got {b}");
    }
    let mean = latents.mean_keepdim(1)?;
    let centered = latents.broadcast_sub(&mean)?;
    // Epsilon in the normalizer keeps zero-variance latents defined.
    let norms = (centered.sqr()?.sum_keepdim(1)?.sqrt()? + 1e-8)?;
    let z = centered.broadcast_div(&norms)?;
    let pcc = z.matmul(&z.t()?)?;
    let sq = pcc.sqr()?;
    // Sum minus trace, averaged over the off-diagonal count.
    let eye = Tensor::eye(b, candle_core::DType::F32, latents.device())?;
    let off = ((&sq - (&sq * &eye)?)?).sum_all()?;
    Ok((off / (b * (b - 1)) as f64)?)
}

/// Weighted sum `paired + lambda1 * denoiser + lambda2 * reg`, with an
/// optional extra penalty from a pluggable image-distance callback. A batch
/// with no paired samples contributes `paired = 0`.
pub fn total_loss(
    paired: f64,
    denoiser: f64,
    reg: f64,
    weights: &LossWeights,
    perceptual: Option<f64>,
) -> f64 {
    paired + weights.lambda1 * denoiser + weights.lambda2 * reg + perceptual.unwrap_or(0.0)
}

/// Cheap perceptual distance: mean squared difference between
/// gradient-of-Gaussian feature maps of the two images. Serves as the stock
/// callback for the perceptual hook.
pub fn gog_distance(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        shape_mismatch!("gog_distance: {:?} vs {:?}", a.shape(), b.shape());
    }
    let fa = gog_features(a)?;
    let fb = gog_features(b)?;
    Ok((fa.0 - fb.0)?.sqr()?.mean_all()?.add(&(fa.1 - fb.1)?.sqr()?.mean_all()?)?)
}

fn gog_features(x: &Tensor) -> Result<(Tensor, Tensor)> {
    let (_b, c, _h, _w) = x.dims4()?;
    let dev = x.device();
    // 3x3 Gaussian blur followed by central differences, depthwise.
    let blur: Vec<f32> = vec![
        1.0 / 16.0, 2.0 / 16.0, 1.0 / 16.0,
        2.0 / 16.0, 4.0 / 16.0, 2.0 / 16.0,
        1.0 / 16.0, 2.0 / 16.0, 1.0 / 16.0,
    ];
    let dx: Vec<f32> = vec![0.0, 0.0, 0.0, -0.5, 0.0, 0.5, 0.0, 0.0, 0.0];
    let dy: Vec<f32> = vec![0.0, -0.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.5, 0.0];
    let depthwise = |k: &[f32]| -> Result<Tensor> {
        let one = Tensor::from_vec(k.to_vec(), (1, 1, 3, 3), dev)?;
        Ok(Tensor::cat(&vec![&one; c], 0)?)
    };
    let smoothed = x.conv2d(&depthwise(&blur)?, 1, 1, 1, c)?;
    let gx = smoothed.conv2d(&depthwise(&dx)?, 1, 1, 1, c)?;
    let gy = smoothed.conv2d(&depthwise(&dy)?, 1, 1, 1, c)?;
    Ok((gx, gy))
}
