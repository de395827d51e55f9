//! The supervising-denoiser abstraction and its three realizations: the
//! analytic Gaussian-mixture MMSE denoiser, the one-step autoencoder, and
//! the multi-step diffusion forward/reverse chain.

use candle_core::Tensor;

use crate::distributions::{GaussianMixture, SmoothingNoise};
use crate::error::{Error, Result};
use crate::models::{AutoencoderNet, DiffusionNet};
use crate::rng::Prng;

/// The alpha / alpha-bar sequence driving the diffusion chains.
///
/// `alpha_bars[t]` is the running product of `alphas[0..=t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
    record: ScheduleRecord,
}

/// Reproducibility record: a schedule is a pure function of this triple.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleRecord {
    pub kind: String,
    pub len: usize,
    pub abar_first: f64,
    pub abar_last: f64,
}

impl NoiseSchedule {
    /// Schedule whose cumulative product decays linearly between the two
    /// endpoints.
    pub fn linear_alpha_bar(len: usize, abar_first: f64, abar_last: f64) -> Result<Self> {
        if len == 0 {
            invalid_arg!("schedule length must be positive");
        }
        if !(0.0 < abar_last && abar_last <= abar_first && abar_first <= 1.0) {
            invalid_arg!("need 0 < abar_last <= abar_first <= 1, got {abar_first}, {abar_last}");
        }
        let mut alpha_bars = Vec::with_capacity(len);
        for t in 0..len {
            let frac = if len == 1 { 0.0 } else { t as f64 / (len - 1) as f64 };
            alpha_bars.push(abar_first + (abar_last - abar_first) * frac);
        }
        let mut alphas = Vec::with_capacity(len);
        for t in 0..len {
            let a = if t == 0 {
                alpha_bars[0]
            } else {
                alpha_bars[t] / alpha_bars[t - 1]
            };
            alphas.push(a);
        }
        Ok(Self {
            alphas,
            alpha_bars,
            record: ScheduleRecord {
                kind: "linear_alpha_bar".to_string(),
                len,
                abar_first,
                abar_last,
            },
        })
    }

    /// Desk-scale default: 100 steps.
    pub fn desk_default() -> Self {
        Self::linear_alpha_bar(100, 0.9999, 0.01).expect("valid default")
    }

    /// Paper-scale default: 1000 steps.
    pub fn paper_default() -> Self {
        Self::linear_alpha_bar(1000, 0.9999, 0.01).expect("valid default")
    }

    pub fn from_alphas(alphas: Vec<f64>) -> Result<Self> {
        if alphas.is_empty() {
            invalid_arg!("schedule length must be positive");
        }
        for &a in &alphas {
            if !(a > 0.0 && a <= 1.0) {
                invalid_arg!("every alpha must lie in (0, 1], got {a}");
            }
        }
        let mut alpha_bars = Vec::with_capacity(alphas.len());
        let mut prod = 1.0;
        for &a in &alphas {
            prod *= a;
            alpha_bars.push(prod);
        }
        let record = ScheduleRecord {
            kind: "explicit".to_string(),
            len: alphas.len(),
            abar_first: alpha_bars[0],
            abar_last: *alpha_bars.last().unwrap(),
        };
        Ok(Self {
            alphas,
            alpha_bars,
            record,
        })
    }

    pub fn from_record(record: &ScheduleRecord) -> Result<Self> {
        match record.kind.as_str() {
            "linear_alpha_bar" => {
                Self::linear_alpha_bar(record.len, record.abar_first, record.abar_last)
            }
            other => Err(Error::Config(format!("unknown schedule kind `{other}`"))),
        }
    }

    pub fn record(&self) -> &ScheduleRecord {
        &self.record
    }

    pub fn len(&self) -> usize {
        self.alphas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alphas.is_empty()
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    fn check_step(&self, t: usize) -> Result<()> {
        if t >= self.len() {
            invalid_arg!("step {t} out of range for schedule of length {}", self.len());
        }
        Ok(())
    }
}

/// Behavioral contract of a supervising denoiser: a same-shape estimate of
/// the clean signal underlying `input`.
pub trait Denoiser {
    fn denoise(&self, input: &Tensor, rng: &mut Prng) -> Result<Tensor>;

    /// Whether repeated calls with different rng states can differ.
    fn is_stochastic(&self) -> bool;

    /// Injection noise the realization pairs naturally with: the training
    /// sigma for learned one-step denoisers, zero when the forward chain
    /// already injects noise.
    fn default_injection_sigma(&self) -> f64 {
        0.0
    }

    /// Hash over whatever state the denoiser owns; trainers record it before
    /// and after a run to prove the supervisor stayed frozen.
    fn content_hash(&self) -> Result<String> {
        Ok("stateless".to_string())
    }
}

/// Noise-prediction function used by the reverse chain; implemented by the
/// diffusion net and, in tests, by closed-form predictors.
pub trait NoisePredictor {
    fn predict_noise(&self, x: &Tensor, t: usize) -> Result<Tensor>;
}

impl NoisePredictor for DiffusionNet {
    fn predict_noise(&self, x: &Tensor, t: usize) -> Result<Tensor> {
        self.predict(x, t, false)
    }
}

impl<F> NoisePredictor for F
where
    F: Fn(&Tensor, usize) -> Result<Tensor>,
{
    fn predict_noise(&self, x: &Tensor, t: usize) -> Result<Tensor> {
        self(x, t)
    }
}

fn noise_like(x: &Tensor, rng: &mut Prng) -> Result<Tensor> {
    let n = x.elem_count();
    Ok(Tensor::from_vec(rng.normal_vec_f32(n), x.shape(), x.device())?)
}

/// Iterative noising operator: `t + 1` successive steps
/// `r <-
/// sqrt(alpha_i) * r + (1 - alpha_i) * z_i` with fresh standard normal
/// `z_i`, exactly the nested chain driving the roundtrip supervisor.
pub fn ddpm_forward(r: &Tensor, t: usize, schedule: &NoiseSchedule, rng: &mut Prng) -> Result<Tensor> {
    schedule.check_step(t)?;
    let mut cur = r.clone();
    for i in 0..=t {
        let a = schedule.alpha(i);
        let z = noise_like(&cur, rng)?;
        cur = ((cur * a.sqrt())? + (z * (1.0 - a))?)?;
    }
    Ok(cur)
}

/// Iterative denoising operator walking steps `t, t-1, ..., 0`:
/// `x <- (x - (1 - alpha_i) / sqrt(1 - alpha_bar_i) * eps(x, i)) / sqrt(alpha_i)
///        + sqrt(1 - alpha_i) * z_i`,
/// with the final step omitting the added noise so the estimate is
/// deterministic given the predictor outputs.
pub fn ddpm_reverse(
    noisy: &Tensor,
    t: usize,
    schedule: &NoiseSchedule,
    eps_net: &dyn NoisePredictor,
    rng: &mut Prng,
) -> Result<Tensor> {
    schedule.check_step(t)?;
    let mut cur = noisy.clone();
    for i in (0..=t).rev() {
        let a = schedule.alpha(i);
        let abar = schedule.alpha_bar(i);
        let eps = eps_net.predict_noise(&cur, i)?;
        if eps.shape() != cur.shape() {
            shape_mismatch!(
                "noise predictor returned {:?} for input {:?}",
                eps.shape(),
                cur.shape()
            );
        }
        // With alpha = 1 no noise was ever added; the residual coefficient's
        // 0/0 limit is 0.
        let coeff = if abar < 1.0 { (1.0 - a) / (1.0 - abar).sqrt() } else { 0.0 };
        cur = ((cur - (eps * coeff)?)? / a.sqrt())?;
        if i > 0 {
            let z = noise_like(&cur, rng)?;
            cur = (cur + (z * (1.0 - a).sqrt())?)?;
        }
    }
    Ok(cur)
}

/// Forward chain to depth `t` followed by the matching reverse chain: the
/// pseudo-label generator `R(F(r))`.
pub fn ddpm_roundtrip(
    r: &Tensor,
    t: usize,
    schedule: &NoiseSchedule,
    eps_net: &dyn NoisePredictor,
    rng: &mut Prng,
) -> Result<Tensor> {
    let noisy = ddpm_forward(r, t, schedule, rng)?;
    ddpm_reverse(&noisy, t, schedule, eps_net, rng)
}

/// One-step pass through a trained autoencoder denoiser (evaluation mode).
pub fn autoencoder_denoise(net: &AutoencoderNet, r: &Tensor) -> Result<Tensor> {
    let out = net.forward(r, false)?;
    if out.shape() != r.shape() {
        shape_mismatch!("autoencoder returned {:?} for input {:?}", out.shape(), r.shape());
    }
    Ok(out)
}

/// Score estimate from a denoiser residual: `(D(r) - r) / sigma^2`.
pub fn tweedie_score(
    denoiser: &dyn Denoiser,
    r: &Tensor,
    sigma: f64,
    rng: &mut Prng,
) -> Result<Tensor> {
    if sigma <= 0.0 {
        invalid_arg!("tweedie score needs sigma > 0, got {sigma}");
    }
    let denoised = denoiser.denoise(r, rng)?;
    Ok(((denoised - r)? / (sigma * sigma))?)
}

/// Exact MMSE denoiser for a Gaussian mixture; rows of the input are points
/// in `R^d`.
pub struct AnalyticGmmDenoiser {
    gmm: GaussianMixture,
    noise: SmoothingNoise,
}

impl AnalyticGmmDenoiser {
    pub fn new(gmm: GaussianMixture, sigma: f64) -> Result<Self> {
        if sigma <= 0.0 {
            invalid_arg!("analytic denoiser needs sigma > 0, got {sigma}");
        }
        Ok(Self {
            gmm,
            noise: SmoothingNoise::new(sigma)?,
        })
    }

    pub fn sigma(&self) -> f64 {
        self.noise.sigma
    }

    pub fn gmm(&self) -> &GaussianMixture {
        &self.gmm
    }
}

impl Denoiser for AnalyticGmmDenoiser {
    fn denoise(&self, input: &Tensor, _rng: &mut Prng) -> Result<Tensor> {
        let dims = input.dims().to_vec();
        let rows = dims[0];
        let d: usize = dims[1..].iter().product();
        if d != self.gmm.dim() {
            shape_mismatch!("input rows have {d} elements, mixture dim is {}", self.gmm.dim());
        }
        let flat: Vec<f32> = input.contiguous()?.flatten_all()?.to_vec1()?;
        let mut out = Vec::with_capacity(flat.len());
        for row in 0..rows {
            let point: Vec<f64> = flat[row * d..(row + 1) * d].iter().map(|&v| v as f64).collect();
            let denoised = self.gmm.mmse_denoise(&point, self.noise)?;
            out.extend(denoised.into_iter().map(|v| v as f32));
        }
        Ok(Tensor::from_vec(out, input.shape(), input.device())?)
    }

    fn is_stochastic(&self) -> bool {
        false
    }

    fn content_hash(&self) -> Result<String> {
        // The mixture and sigma fully determine the denoiser.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in self.gmm.to_kv_string().bytes().chain(format!("{}", self.noise.sigma).bytes()) {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        Ok(format!("gmm:{h:016x}"))
    }
}

/// Trained one-step blind Gaussian denoiser.
pub struct AutoencoderDenoiser {
    net: AutoencoderNet,
    training_sigma: f64,
}

impl AutoencoderDenoiser {
    pub fn new(net: AutoencoderNet, training_sigma: f64) -> Self {
        Self { net, training_sigma }
    }

    pub fn net(&self) -> &AutoencoderNet {
        &self.net
    }
}

impl Denoiser for AutoencoderDenoiser {
    fn denoise(&self, input: &Tensor, _rng: &mut Prng) -> Result<Tensor> {
        autoencoder_denoise(&self.net, input)
    }

    fn is_stochastic(&self) -> bool {
        false
    }

    fn default_injection_sigma(&self) -> f64 {
        self.training_sigma
    }

    fn content_hash(&self) -> Result<String> {
        self.net.params().content_hash()
    }
}

/// Multi-step diffusion roundtrip denoiser: `D(r) = R(F(r))` at a fixed
/// depth. The forward chain supplies the noise injection by construction.
pub struct DdpmDenoiser {
    eps_net: DiffusionNet,
    schedule: NoiseSchedule,
    depth: usize,
}

impl DdpmDenoiser {
    pub fn new(eps_net: DiffusionNet, schedule: NoiseSchedule, depth: usize) -> Result<Self> {
        if depth >= schedule.len() {
            invalid_arg!("roundtrip depth {depth} out of range for schedule length {}", schedule.len());
        }
        if eps_net.schedule_len() != schedule.len() {
            return Err(Error::Config(format!(
                "eps net built for schedule length {}, got {}",
                eps_net.schedule_len(),
                schedule.len()
            )));
        }
        Ok(Self {
            eps_net,
            schedule,
            depth,
        })
    }

    pub fn eps_net(&self) -> &DiffusionNet {
        &self.eps_net
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    pub fn depth(&self) -> usize {
        self.depth
    }
}

impl Denoiser for DdpmDenoiser {
    fn denoise(&self, input: &Tensor, rng: &mut Prng) -> Result<Tensor> {
        ddpm_roundtrip(input, self.depth, &self.schedule, &self.eps_net, rng)
    }

    fn is_stochastic(&self) -> bool {
        true
    }

    fn content_hash(&self) -> Result<String> {
        self.eps_net.params().content_hash()
    }
}
