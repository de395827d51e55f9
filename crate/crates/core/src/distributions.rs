//! Isotropic Gaussian mixtures with closed-form density, score, Gaussian
//! smoothing and the exact MMSE denoiser.
//!
//! This is the analytic oracle the verification suite is built on: smoothing
//! a mixture by `N(0, sigma^2 I)` stays inside the family (component
//! variances grow by `sigma^2`), so the smoothed log-density, its gradient
//! and the posterior mean `E[x | x + noise = r]` are all available in closed
//! form.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::Prng;

const WEIGHT_SUM_TOL: f64 = 1e-12;

/// Mixture of isotropic Gaussians in `R^d`.
///
/// Each component has a scalar variance (covariance `variance * I`), which
/// keeps smoothing and the MMSE denoiser closed-form.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    variances: Vec<f64>,
    dim: usize,
}

/// Standard deviation of the isotropic smoothing noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothingNoise {
    pub sigma: f64,
}

impl SmoothingNoise {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma >= 0.0) {
            invalid_arg!("smoothing sigma must be nonnegative, got {sigma}");
        }
        Ok(Self { sigma })
    }
}

impl GaussianMixture {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, variances: Vec<f64>) -> Result<Self> {
        if weights.is_empty() || weights.len() != means.len() || weights.len() != variances.len() {
            invalid_arg!(
                "component count mismatch: {} weights, {} means, {} variances",
                weights.len(),
                means.len(),
                variances.len()
            );
        }
        let dim = means[0].len();
        if dim == 0 {
            invalid_arg!("mixture dimension must be positive");
        }
        for m in &means {
            if m.len() != dim {
                invalid_arg!("all means must have length {dim}, got {}", m.len());
            }
        }
        for &w in &weights {
            if !(w > 0.0) {
                invalid_arg!("weights must be positive, got {w}");
            }
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            invalid_arg!("weights must sum to 1 within {WEIGHT_SUM_TOL}, got {sum}");
        }
        for &v in &variances {
            if !(v > 0.0) {
                invalid_arg!("variances must be positive, got {v}");
            }
        }
        Ok(Self {
            weights,
            means,
            variances,
            dim,
        })
    }

    /// Single Gaussian `N(mean, variance * I)`.
    pub fn single(mean: Vec<f64>, variance: f64) -> Result<Self> {
        Self::new(vec![1.0], vec![mean], vec![variance])
    }

    /// Equal-weight symmetric 1-D pair at `-m` and `+m`, used throughout the
    /// mode-shift experiments.
    pub fn symmetric_bimodal(m: f64, variance: f64) -> Result<Self> {
        Self::new(vec![0.5, 0.5], vec![vec![-m], vec![m]], vec![variance, variance])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_components(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            invalid_arg!("point has length {}, mixture dim is {}", x.len(), self.dim);
        }
        Ok(())
    }

    /// Per-component log of `w_k * N(x; mu_k, var_k I)`.
    fn component_log_terms(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim as f64;
        self.weights
            .iter()
            .zip(self.means.iter().zip(self.variances.iter()))
            .map(|(&w, (mu, &var))| {
                let sq: f64 = x
                    .iter()
                    .zip(mu.iter())
                    .map(|(&xi, &mi)| (xi - mi) * (xi - mi))
                    .sum();
                w.ln() - 0.5 * d * (2.0 * std::f64::consts::PI * var).ln() - 0.5 * sq / var
            })
            .collect()
    }

    /// `ln p(x)` via log-sum-exp; stays finite far into the tails.
    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        Ok(log_sum_exp(&self.component_log_terms(x)))
    }

    /// Convolves the mixture with `N(0, sigma^2 I)`: every component variance
    /// grows by `sigma^2`, weights and means are untouched.
    pub fn smooth(&self, noise: SmoothingNoise) -> GaussianMixture {
        let s2 = noise.sigma * noise.sigma;
        GaussianMixture {
            weights: self.weights.clone(),
            means: self.means.clone(),
            variances: self.variances.iter().map(|&v| v + s2).collect(),
            dim: self.dim,
        }
    }

    /// Score `grad_x ln p(x)`: the responsibility-weighted sum of
    /// `(mu_k - x) / var_k`.
    pub fn score(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_point(x)?;
        let resp = softmax(&self.component_log_terms(x));
        let mut out = vec![0.0; self.dim];
        for (k, r) in resp.iter().enumerate() {
            let var = self.variances[k];
            for (o, (&mi, &xi)) in out.iter_mut().zip(self.means[k].iter().zip(x.iter())) {
                *o += r * (mi - xi) / var;
            }
        }
        Ok(out)
    }

    /// Exact posterior mean `E[x | x + nu = r]` for `nu ~ N(0, sigma^2 I)`,
    /// computed as `r + sigma^2 * score of the smoothed mixture at r`.
    pub fn mmse_denoise(&self, r: &[f64], noise: SmoothingNoise) -> Result<Vec<f64>> {
        if noise.sigma <= 0.0 {
            invalid_arg!(
                "mmse denoiser needs sigma > 0 (got {}); with no noise use r directly",
                noise.sigma
            );
        }
        self.check_point(r)?;
        let s2 = noise.sigma * noise.sigma;
        let score = self.smooth(noise).score(r)?;
        Ok(r.iter().zip(score.iter()).map(|(&ri, &si)| ri + s2 * si).collect())
    }

    /// `n` i.i.d. draws; identical seeds give identical draws.
    pub fn sample(&self, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = Prng::from_seed(seed);
        self.sample_with(n, &mut rng)
    }

    pub fn sample_with(&self, n: usize, rng: &mut Prng) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| {
                let k = rng.categorical(&self.weights);
                let std = self.variances[k].sqrt();
                self.means[k]
                    .iter()
                    .map(|&m| m + std * rng.standard_normal())
                    .collect()
            })
            .collect()
    }

    /// Mixture mean.
    pub fn mean(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (w, mu) in self.weights.iter().zip(self.means.iter()) {
            for (o, &m) in out.iter_mut().zip(mu.iter()) {
                *o += w * m;
            }
        }
        out
    }

    /// Trace of the mixture covariance: within-component spread plus the
    /// spread of the means.
    pub fn covariance_trace(&self) -> f64 {
        let mean = self.mean();
        let d = self.dim as f64;
        let mut tr = 0.0;
        for ((w, mu), var) in self.weights.iter().zip(self.means.iter()).zip(self.variances.iter())
        {
            let sq: f64 = mu.iter().zip(mean.iter()).map(|(&a, &b)| (a - b) * (a - b)).sum();
            tr += w * (d * var + sq);
        }
        tr
    }

    /// Serializes to the key-value text format used by verification configs.
    pub fn to_kv_string(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# isotropic gaussian mixture");
        let _ = writeln!(s, "dim = {}", self.dim);
        let _ = writeln!(s, "components = {}", self.num_components());
        let _ = writeln!(s, "weights = {}", join_floats(&self.weights));
        let flat: Vec<f64> = self.means.iter().flatten().copied().collect();
        let _ = writeln!(s, "means = {}", join_floats(&flat));
        let _ = writeln!(s, "variances = {}", join_floats(&self.variances));
        s
    }

    pub fn from_kv_str(text: &str) -> Result<Self> {
        let mut dim = None;
        let mut components = None;
        let mut weights: Option<Vec<f64>> = None;
        let mut means_flat: Option<Vec<f64>> = None;
        let mut variances: Option<Vec<f64>> = None;
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("expected `key = value`, got `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "dim" => dim = Some(parse_usize(key, value)?),
                "components" => components = Some(parse_usize(key, value)?),
                "weights" => weights = Some(parse_floats(key, value)?),
                "means" => means_flat = Some(parse_floats(key, value)?),
                "variances" => variances = Some(parse_floats(key, value)?),
                other => return Err(Error::Config(format!("unknown mixture key `{other}`"))),
            }
        }
        let dim = dim.ok_or_else(|| Error::Config("missing `dim`".into()))?;
        let k = components.ok_or_else(|| Error::Config("missing `components`".into()))?;
        let weights = weights.ok_or_else(|| Error::Config("missing `weights`".into()))?;
        let means_flat = means_flat.ok_or_else(|| Error::Config("missing `means`".into()))?;
        let variances = variances.ok_or_else(|| Error::Config("missing `variances`".into()))?;
        if means_flat.len() != k * dim {
            return Err(Error::Config(format!(
                "means has {} values, expected components*dim = {}",
                means_flat.len(),
                k * dim
            )));
        }
        let means = means_flat.chunks(dim).map(|c| c.to_vec()).collect();
        Self::new(weights, means, variances)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_kv_string())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_kv_str(&std::fs::read_to_string(path)?)
    }
}

fn parse_usize(key: &str, value: &str) -> Result<usize> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad integer for `{key}`: `{value}`")))
}

fn parse_floats(key: &str, value: &str) -> Result<Vec<f64>> {
    value
        .split_whitespace()
        .map(|tok| {
            tok.parse()
                .map_err(|_| Error::Config(format!("bad float for `{key}`: `{tok}`")))
        })
        .collect()
}

fn join_floats(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(" ")
}

/// Numerically stable `ln(sum(exp(terms)))`.
pub fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = terms.iter().map(|&t| (t - max).exp()).sum();
    max + sum.ln()
}

fn softmax(terms: &[f64]) -> Vec<f64> {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = terms.iter().map(|&t| (t - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}
