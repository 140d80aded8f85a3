//! Fading laws, binary-input fading channel densities and the capacity
//! quantities derived from them.
//!
//! The channel is `Y = H·X + Z` with `X ∈ {−1, +1}` (bit 0 ↦ +1),
//! `Z ~ N(0, σ²)` and `H` Rayleigh or Rician. With receiver CSI the output is
//! the pair `(Y, H)`; with CDI only `Y` is observed.

use std::f64::consts::{LN_2, PI};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, ensure_positive, Error, Result};
use crate::numeric::special::{bessel_i0e, exp_e1, softplus, EULER_GAMMA};
use crate::numeric::{integrate, integrate_pieces, QuadConfig};

/// Tail mass beyond which the gain axis is truncated.
pub const GAIN_TAIL_MASS: f64 = 1e-14;

/// Half-width, in noise deviations, of the output axis around the signal.
pub const OUTPUT_SPREAD: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FadingKind {
    Rayleigh,
    Rician,
}

/// Law of the channel gain `H ≥ 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FadingDistribution {
    pub kind: FadingKind,
    /// Scale parameter σ_h.
    pub sigma_h: f64,
    /// Rician non-centrality; zero for Rayleigh.
    #[serde(default)]
    pub s: f64,
}

impl FadingDistribution {
    pub fn rayleigh(sigma_h: f64) -> Result<Self> {
        ensure_positive("sigma_h", sigma_h)?;
        Ok(Self { kind: FadingKind::Rayleigh, sigma_h, s: 0.0 })
    }

    pub fn rician(sigma_h: f64, s: f64) -> Result<Self> {
        ensure_positive("sigma_h", sigma_h)?;
        ensure_finite("s", s)?;
        if s < 0.0 {
            return Err(Error::Domain(format!("Rician non-centrality must be >= 0, got {s}")));
        }
        Ok(Self { kind: FadingKind::Rician, sigma_h, s })
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            FadingKind::Rayleigh => Self::rayleigh(self.sigma_h).map(|_| ()),
            FadingKind::Rician => Self::rician(self.sigma_h, self.s).map(|_| ()),
        }
    }

    /// Density `P_H(h)`; zero for negative `h`.
    pub fn density(&self, h: f64) -> f64 {
        if h <= 0.0 {
            return 0.0;
        }
        let v = self.sigma_h * self.sigma_h;
        match self.kind {
            FadingKind::Rayleigh => h / v * (-h * h / (2.0 * v)).exp(),
            FadingKind::Rician => {
                // e^{-(h²+s²)/2v} I0(hs/v) = e^{-(h-s)²/2v} · I0e(hs/v)
                let d = h - self.s;
                h / v * (-d * d / (2.0 * v)).exp() * bessel_i0e(h * self.s / v)
            }
        }
    }

    /// Gain beyond which the remaining probability mass is below `tau`.
    pub fn tail_cutoff(&self, tau: f64) -> f64 {
        let base = self.sigma_h * (2.0 * (1.0 / tau).ln()).sqrt();
        match self.kind {
            FadingKind::Rayleigh => base,
            // Rician tail is dominated by a Rayleigh tail shifted by s.
            FadingKind::Rician => self.s + base,
        }
    }

    /// Upper end of the gain axis used by every quadrature.
    pub fn gain_limit(&self) -> f64 {
        self.tail_cutoff(GAIN_TAIL_MASS)
    }

    /// `P(H ≤ h)`.
    pub fn cdf(&self, h: f64) -> f64 {
        if h <= 0.0 {
            return 0.0;
        }
        match self.kind {
            FadingKind::Rayleigh => -(-h * h / (2.0 * self.sigma_h * self.sigma_h)).exp_m1(),
            FadingKind::Rician => {
                let hi = h.min(self.gain_limit());
                integrate(|t| self.density(t), 0.0, hi, QuadConfig::new(1e-14, 1e-12))
                    .map(|e| e.value.min(1.0))
                    .unwrap_or(f64::NAN)
            }
        }
    }

    /// `E[H²]`.
    pub fn second_moment(&self) -> f64 {
        2.0 * self.sigma_h * self.sigma_h + self.s * self.s
    }

    /// Draws one gain.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let a: f64 = rng.sample(StandardNormal);
        let b: f64 = rng.sample(StandardNormal);
        let re = self.s + self.sigma_h * a;
        let im = self.sigma_h * b;
        re.hypot(im)
    }

    /// Integrates `g(h)·P_H(h)` over the truncated gain axis.
    pub fn expectation<F: FnMut(f64) -> f64>(&self, mut g: F, cfg: QuadConfig) -> Result<f64> {
        let hi = self.gain_limit();
        let mut pts = vec![0.0, 0.25 * self.sigma_h, self.sigma_h, 2.0 * self.sigma_h];
        if self.s > 0.0 {
            pts.push(self.s);
        }
        pts.push(hi);
        pts.retain(|&p| p <= hi);
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        Ok(integrate_pieces(|h| self.density(h) * g(h), &pts, cfg)?.value)
    }
}

/// `P_H(h)`; domain error for non-finite `h`.
pub fn pdf_h(dist: &FadingDistribution, h: f64) -> Result<f64> {
    ensure_finite("h", h)?;
    Ok(dist.density(h))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CsiMode {
    /// Realized gain known at the receiver.
    ReceiverCsi,
    /// Only the gain law is known.
    CdiOnly,
}

impl CsiMode {
    pub fn label(&self) -> &'static str {
        match self {
            CsiMode::ReceiverCsi => "csi",
            CsiMode::CdiOnly => "cdi",
        }
    }
}

/// Binary-input fading channel with AWGN deviation σ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FadingChannelSpec {
    pub dist: FadingDistribution,
    pub sigma: f64,
    pub csi: CsiMode,
}

/// BPSK symbol; bit 0 maps to +1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bpsk {
    Plus,
    Minus,
}

impl Bpsk {
    pub fn from_bit(bit: u8) -> Self {
        if bit == 0 {
            Bpsk::Plus
        } else {
            Bpsk::Minus
        }
    }

    pub fn value(self) -> f64 {
        match self {
            Bpsk::Plus => 1.0,
            Bpsk::Minus => -1.0,
        }
    }

    pub fn flip(self) -> Self {
        match self {
            Bpsk::Plus => Bpsk::Minus,
            Bpsk::Minus => Bpsk::Plus,
        }
    }
}

/// Log-likelihood ratio together with the ratio itself (may be infinite).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LikelihoodRatio {
    pub llr: f64,
    pub lr: f64,
}

impl FadingChannelSpec {
    /// `σ ≥ 0` is accepted so that noiseless links can be simulated; the
    /// density and capacity routines require `σ > 0`.
    pub fn new(dist: FadingDistribution, sigma: f64, csi: CsiMode) -> Result<Self> {
        dist.validate()?;
        ensure_finite("sigma", sigma)?;
        if sigma < 0.0 {
            return Err(Error::Domain(format!("sigma must be >= 0, got {sigma}")));
        }
        Ok(Self { dist, sigma, csi })
    }

    /// Channel whose average SNR `2σ_h²/σ²` equals `snr_db`.
    ///
    /// For Rician fading σ_h is set the same way and `s` is added on top.
    pub fn from_snr_db(kind: FadingKind, snr_db: f64, sigma: f64, s: f64, csi: CsiMode) -> Result<Self> {
        ensure_finite("snr_db", snr_db)?;
        ensure_positive("sigma", sigma)?;
        let sigma_h = (sigma * sigma * 10f64.powf(snr_db / 10.0) / 2.0).sqrt();
        let dist = match kind {
            FadingKind::Rayleigh => FadingDistribution::rayleigh(sigma_h)?,
            FadingKind::Rician => FadingDistribution::rician(sigma_h, s)?,
        };
        Self::new(dist, sigma, csi)
    }

    /// Average SNR `2σ_h²/σ²` (linear).
    pub fn snr(&self) -> f64 {
        2.0 * self.dist.sigma_h * self.dist.sigma_h / (self.sigma * self.sigma)
    }

    pub fn snr_db(&self) -> f64 {
        10.0 * self.snr().log10()
    }

    pub fn with_csi(mut self, csi: CsiMode) -> Self {
        self.csi = csi;
        self
    }

    fn require_noise(&self) -> Result<()> {
        ensure_positive("sigma", self.sigma)
    }

    fn require_mode(&self, mode: CsiMode) -> Result<()> {
        if self.csi == mode {
            Ok(())
        } else {
            Err(Error::Contract(format!("operation requires {} mode", mode.label())))
        }
    }
}

/// `P_{Y,H|X}(y, h | x) = P_H(h) φ_σ(y − x h)`.
pub fn transition_pdf_csi(ch: &FadingChannelSpec, y: f64, h: f64, x: Bpsk) -> Result<f64> {
    ch.require_mode(CsiMode::ReceiverCsi)?;
    ch.require_noise()?;
    ensure_finite("y", y)?;
    ensure_finite("h", h)?;
    Ok(joint_density(ch, y, h, x))
}

pub(crate) fn joint_density(ch: &FadingChannelSpec, y: f64, h: f64, x: Bpsk) -> f64 {
    let d = y - x.value() * h;
    let s = ch.sigma;
    ch.dist.density(h) * (-d * d / (2.0 * s * s)).exp() / ((2.0 * PI).sqrt() * s)
}

/// Natural-log likelihood ratio `2yh/σ²` of the CSI channel.
pub fn likelihood_ratio_csi(ch: &FadingChannelSpec, y: f64, h: f64) -> Result<LikelihoodRatio> {
    ch.require_mode(CsiMode::ReceiverCsi)?;
    ch.require_noise()?;
    ensure_finite("y", y)?;
    ensure_finite("h", h)?;
    let llr = 2.0 * y * h / (ch.sigma * ch.sigma);
    Ok(LikelihoodRatio { llr, lr: llr.exp() })
}

/// Marginal output density of the CDI channel, evaluated in log domain.
#[derive(Debug, Clone, Copy)]
pub struct CdiDensity {
    ch: FadingChannelSpec,
    h_max: f64,
    cfg: QuadConfig,
}

impl CdiDensity {
    pub fn new(ch: &FadingChannelSpec) -> Result<Self> {
        ch.require_noise()?;
        Ok(Self { ch: *ch, h_max: ch.dist.gain_limit(), cfg: QuadConfig::new(0.0, 1e-12) })
    }

    /// `ln P(y | x)` via `P(y|x) = e^{-y²/2σ²}/(√(2π)σ) · ∫ P_H(h) e^{(2xyh − h²)/2σ²} dh`,
    /// with the integrand scaled by its peak value.
    pub fn ln_density(&self, y: f64, x: Bpsk) -> Result<f64> {
        let s2 = self.ch.sigma * self.ch.sigma;
        let xy = x.value() * y;
        let peak = xy.clamp(0.0, self.h_max);
        let g = |h: f64| (2.0 * xy * h - h * h) / (2.0 * s2);
        let g_peak = g(peak);
        let dist = self.ch.dist;
        let integrand = |h: f64| dist.density(h) * (g(h) - g_peak).exp();
        let mut pts = vec![0.0, peak, self.h_max];
        for extra in [0.5 * dist.sigma_h, dist.sigma_h, 2.0 * dist.sigma_h] {
            if extra < self.h_max {
                pts.push(extra);
            }
        }
        let w = 6.0 * self.ch.sigma;
        for extra in [peak - w, peak + w] {
            if extra > 0.0 && extra < self.h_max {
                pts.push(extra);
            }
        }
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        let est = integrate_pieces(integrand, &pts, self.cfg)?;
        if est.value <= 0.0 {
            return Ok(f64::NEG_INFINITY);
        }
        Ok(est.value.ln() + g_peak - y * y / (2.0 * s2) - ((2.0 * PI).sqrt() * self.ch.sigma).ln())
    }

    pub fn density(&self, y: f64, x: Bpsk) -> Result<f64> {
        Ok(self.ln_density(y, x)?.exp())
    }

    /// `ln P(y|+1) − ln P(y|−1)`.
    pub fn llr(&self, y: f64) -> Result<f64> {
        Ok(self.ln_density(y, Bpsk::Plus)? - self.ln_density(y, Bpsk::Minus)?)
    }

    /// Output axis bound: largest gain plus the noise spread.
    pub fn output_limit(&self) -> f64 {
        self.h_max + OUTPUT_SPREAD * self.ch.sigma
    }
}

/// `P_{Y|X}(y | x) = ∫ P_{Y,H|X}(y, h | x) dh`.
pub fn transition_pdf_cdi(ch: &FadingChannelSpec, y: f64, x: Bpsk) -> Result<f64> {
    ch.require_mode(CsiMode::CdiOnly)?;
    ensure_finite("y", y)?;
    CdiDensity::new(ch)?.density(y, x)
}

/// Per-gain capacity `1 − E_{Y|+1}[log2(1 + e^{−2Yh/σ²})]` of BPSK over AWGN.
fn bpsk_capacity_at_gain(h: f64, sigma: f64, cfg: QuadConfig) -> Result<f64> {
    if h <= 0.0 {
        return Ok(0.0);
    }
    let s2 = sigma * sigma;
    // Integrate over the standardized output t = (y − h)/σ.
    let integrand = |t: f64| {
        let y = h + sigma * t;
        let phi = (-0.5 * t * t).exp() / (2.0 * PI).sqrt();
        phi * softplus(-2.0 * y * h / s2) / LN_2
    };
    let est = integrate_pieces(integrand, &[-OUTPUT_SPREAD, -2.0, 0.0, 2.0, OUTPUT_SPREAD], cfg)?;
    Ok((1.0 - est.value).clamp(0.0, 1.0))
}

/// `C(W̃) = I(X; Y | H)` with uniform input, by nested quadrature.
pub fn capacity_csi(ch: &FadingChannelSpec, tol: f64) -> Result<f64> {
    ch.require_mode(CsiMode::ReceiverCsi)?;
    ch.require_noise()?;
    ensure_positive("tol", tol)?;
    let inner_cfg = QuadConfig::new(tol * 1e-2, 1e-12);
    let mut failure = None;
    let outer = ch.dist.expectation(
        |h| match bpsk_capacity_at_gain(h, ch.sigma, inner_cfg) {
            Ok(v) => v,
            Err(e) => {
                failure.get_or_insert(e);
                0.0
            }
        },
        QuadConfig::new(tol * 0.5, 0.0),
    );
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(outer?.clamp(0.0, 1.0))
}

/// Capacity of the CDI channel `X → Y` (the gain is marginalized).
pub fn capacity_cdi(ch: &FadingChannelSpec, tol: f64) -> Result<f64> {
    ch.require_mode(CsiMode::CdiOnly)?;
    ensure_positive("tol", tol)?;
    let dens = CdiDensity::new(ch)?;
    let lim = dens.output_limit();
    let mut failure = None;
    let integrand = |y: f64| {
        let r = (|| -> Result<f64> {
            let lp = dens.ln_density(y, Bpsk::Plus)?;
            let lm = dens.ln_density(y, Bpsk::Minus)?;
            if lp == f64::NEG_INFINITY {
                return Ok(0.0);
            }
            Ok(lp.exp() * (1.0 - softplus(lm - lp) / LN_2))
        })();
        r.unwrap_or_else(|e| {
            failure.get_or_insert(e);
            0.0
        })
    };
    let sh = ch.dist.sigma_h;
    let mut pts = vec![-lim, -2.0 * sh, -0.5 * sh, 0.0, 0.5 * sh, 2.0 * sh, 4.0 * sh, lim];
    pts.retain(|p| p.abs() <= lim);
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    let est = integrate_pieces(integrand, &pts, QuadConfig::new(tol * 0.5, 0.0));
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(est?.value.clamp(0.0, 1.0))
}

/// CSI capacity for a Rician law; errors if the channel is not Rician.
pub fn capacity_rician_csi(ch: &FadingChannelSpec, tol: f64) -> Result<f64> {
    if ch.dist.kind != FadingKind::Rician {
        return Err(Error::Contract("capacity_rician_csi requires a Rician law".into()));
    }
    capacity_csi(ch, tol)
}

/// Poltyrev capacity (bits per dimension) with its standard error; the
/// error is zero for closed-form or quadrature evaluations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoltyrevCapacity {
    pub value: f64,
    pub std_error: f64,
}

/// Rayleigh closed form `−½ log2(2πeσ² e^ζ / (2σ_h²))`.
pub fn poltyrev_capacity(dist: &FadingDistribution, sigma: f64) -> Result<f64> {
    ensure_positive("sigma", sigma)?;
    match dist.kind {
        FadingKind::Rayleigh => {
            let arg = 2.0 * PI * std::f64::consts::E * sigma * sigma * EULER_GAMMA.exp()
                / (2.0 * dist.sigma_h * dist.sigma_h);
            Ok(-0.5 * arg.log2())
        }
        FadingKind::Rician => poltyrev_capacity_quadrature(dist, sigma),
    }
}

/// `E_h[½ log2(h² / (2πeσ²))]` by quadrature, for any law.
pub fn poltyrev_capacity_quadrature(dist: &FadingDistribution, sigma: f64) -> Result<f64> {
    ensure_positive("sigma", sigma)?;
    let c = 2.0 * PI * std::f64::consts::E * sigma * sigma;
    dist.expectation(|h| 0.5 * (h * h / c).log2(), QuadConfig::new(1e-13, 1e-13))
}

/// `E_h[½ log2(h² / (2πeσ²))]` by plain Monte Carlo.
pub fn poltyrev_capacity_monte_carlo<R: Rng + ?Sized>(
    dist: &FadingDistribution,
    sigma: f64,
    draws: usize,
    rng: &mut R,
) -> Result<PoltyrevCapacity> {
    ensure_positive("sigma", sigma)?;
    if draws < 2 {
        return Err(Error::Domain("Monte Carlo needs at least two draws".into()));
    }
    let c = 2.0 * PI * std::f64::consts::E * sigma * sigma;
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for k in 0..draws {
        let h = dist.sample(rng);
        let v = 0.5 * (h * h / c).log2();
        let delta = v - mean;
        mean += delta / (k + 1) as f64;
        m2 += delta * (v - mean);
    }
    let var = m2 / (draws - 1) as f64;
    Ok(PoltyrevCapacity { value: mean, std_error: (var / draws as f64).sqrt() })
}

/// Ergodic capacity `E_h[½ log2(1 + P h²/σ²)]` with Gaussian input.
///
/// Rayleigh uses `½ log2(e) · e^x E1(x)`, `x = σ²/(2σ_h² P)`.
pub fn ergodic_capacity_power(dist: &FadingDistribution, sigma: f64, power: f64) -> Result<f64> {
    ensure_positive("sigma", sigma)?;
    ensure_positive("power", power)?;
    match dist.kind {
        FadingKind::Rayleigh => {
            let x = sigma * sigma / (2.0 * dist.sigma_h * dist.sigma_h * power);
            Ok(0.5 / LN_2 * exp_e1(x))
        }
        FadingKind::Rician => dist.expectation(
            |h| 0.5 * (power * h * h / (sigma * sigma)).ln_1p() / LN_2,
            QuadConfig::new(1e-13, 1e-13),
        ),
    }
}
