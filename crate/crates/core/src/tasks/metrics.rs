//! PSNR and SSIM on `[-1, 1]` images, internally rescaled to `[0, 1]`.

use crate::error::Result;
use crate::image::Image;

/// Cap reported when the error is exactly zero (PSNR is infinite).
pub const PSNR_CAP_DB: f64 = 99.0;

const SSIM_WINDOW: usize = 7;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

/// Peak signal-to-noise ratio in dB with peak 1 after rescaling to `[0, 1]`.
pub fn psnr(x: &Image, y: &Image) -> Result<f64> {
    if !x.same_shape(y) {
        shape_mismatch!("psnr: {:?} vs {:?}", x.shape(), y.shape());
    }
    // [-1,1] -> [0,1] halves every difference, so MSE scales by 1/4.
    let mse = x.mse(y)? / 4.0;
    if mse <= 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((-10.0 * mse.log10()).min(PSNR_CAP_DB))
}

/// Mean structural similarity over all valid 7x7 windows and channels,
/// with the standard stabilizers.
pub fn ssim(x: &Image, y: &Image) -> Result<f64> {
    if !x.same_shape(y) {
        shape_mismatch!("ssim: {:?} vs {:?}", x.shape(), y.shape());
    }
    let (c, h, w) = x.shape();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        invalid_arg!("ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} images, got {h}x{w}");
    }

    let mut total = 0.0;
    let mut count = 0usize;
    for ch in 0..c {
        // Summed-area tables over the rescaled channel.
        let at = |img: &Image, yy: usize, xx: usize| (img.get(ch, yy, xx) as f64 + 1.0) / 2.0;
        let mut sx = vec![0.0; (h + 1) * (w + 1)];
        let mut sy = vec![0.0; (h + 1) * (w + 1)];
        let mut sxx = vec![0.0; (h + 1) * (w + 1)];
        let mut syy = vec![0.0; (h + 1) * (w + 1)];
        let mut sxy = vec![0.0; (h + 1) * (w + 1)];
        let idx = |yy: usize, xx: usize| yy * (w + 1) + xx;
        for yy in 0..h {
            for xx in 0..w {
                let a = at(x, yy, xx);
                let b = at(y, yy, xx);
                let base = sx[idx(yy + 1, xx)] + sx[idx(yy, xx + 1)] - sx[idx(yy, xx)];
                sx[idx(yy + 1, xx + 1)] = base + a;
                let base = sy[idx(yy + 1, xx)] + sy[idx(yy, xx + 1)] - sy[idx(yy, xx)];
                sy[idx(yy + 1, xx + 1)] = base + b;
                let base = sxx[idx(yy + 1, xx)] + sxx[idx(yy, xx + 1)] - sxx[idx(yy, xx)];
                sxx[idx(yy + 1, xx + 1)] = base + a * a;
                let base = syy[idx(yy + 1, xx)] + syy[idx(yy, xx + 1)] - syy[idx(yy, xx)];
                syy[idx(yy + 1, xx + 1)] = base + b * b;
                let base = sxy[idx(yy + 1, xx)] + sxy[idx(yy, xx + 1)] - sxy[idx(yy, xx)];
                sxy[idx(yy + 1, xx + 1)] = base + a * b;
            }
        }
        let window_sum = |s: &[f64], y0: usize, x0: usize| {
            s[idx(y0 + SSIM_WINDOW, x0 + SSIM_WINDOW)] + s[idx(y0, x0)]
                - s[idx(y0 + SSIM_WINDOW, x0)]
                - s[idx(y0, x0 + SSIM_WINDOW)]
        };
        let n = (SSIM_WINDOW * SSIM_WINDOW) as f64;
        for y0 in 0..=(h - SSIM_WINDOW) {
            for x0 in 0..=(w - SSIM_WINDOW) {
                let mx = window_sum(&sx, y0, x0) / n;
                let my = window_sum(&sy, y0, x0) / n;
                let vx = (window_sum(&sxx, y0, x0) / n - mx * mx).max(0.0);
                let vy = (window_sum(&syy, y0, x0) / n - my * my).max(0.0);
                let cov = window_sum(&sxy, y0, x0) / n - mx * my;
                let val = ((2.0 * mx * my + SSIM_C1) * (2.0 * cov + SSIM_C2))
                    / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2));
                total += val;
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}
