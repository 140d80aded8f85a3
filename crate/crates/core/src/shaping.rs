//! Lattice Gaussian shaping over a binary partition chain `vℤ/2vℤ/…/2^r vℤ`.
//!
//! Lattice points are integer labels `k` (the point is `v·k`); the level-ℓ
//! bit of a label is taken relative to the lower levels already fixed, as in
//! the integer-lift Construction D of [`crate::lattice`].
//!
//! With MMSE scaling `t = α(h)·y/v` and `s̃ = σ̃(h)/v`, the posterior of the
//! level-ℓ bit given the lower levels (offset `base`) depends only on
//! `u = (t − base)/2^{ℓ−1}` and equals [`parity_llr`]`(u, s̃/2^{ℓ−1})`; the
//! Gaussian prior is already folded in.

use std::f64::consts::{E, LN_2, PI};

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::{hard_decision, polar_transform_int, trial_rng, ScEngine};
use crate::construction::{construct_all_depths, SelectionTarget, MAX_M};
use crate::error::{ensure_finite, ensure_positive, Error, Result};
use crate::fading::{ergodic_capacity_power, FadingDistribution, FadingKind};
use crate::lattice::parity_llr;
use crate::numeric::special::{binary_entropy, bsc_capacity_from_llr};
use crate::numeric::theta::ln_aliased_gaussian;
use crate::numeric::{integrate_pieces, QuadConfig};
use crate::partition::PartitionChain;
use crate::quantizer::{quantize_by_llr, DiscreteBmsc, GainDomain, JointDensity, QuantizerParams};
use crate::stats::{chi_square_test, fmt_sig, wilson_interval, Z95};

pub use crate::numeric::theta::flatness_factor;

/// Deviations kept in the truncated support of a lattice Gaussian.
pub const SUPPORT_DEVIATIONS: f64 = 12.0;

/// Largest truncated support accepted.
const MAX_SUPPORT: usize = 10_000_000;

/// Default Bhattacharyya margin below 1 for a source bit to count as uniform.
pub const DEFAULT_SHAPING_THETA: f64 = 1e-3;

/// `D_{vℤ, σ_s, c}` parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatticeGaussianSpec {
    pub scale: f64,
    pub sigma_s: f64,
    #[serde(default)]
    pub center: f64,
}

impl LatticeGaussianSpec {
    pub fn new(scale: f64, sigma_s: f64) -> Result<Self> {
        let s = Self { scale, sigma_s, center: 0.0 };
        s.validate()?;
        Ok(s)
    }

    pub fn with_center(mut self, center: f64) -> Result<Self> {
        ensure_finite("center", center)?;
        self.center = center;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        ensure_positive("scale", self.scale)?;
        ensure_positive("sigma_s", self.sigma_s)?;
        ensure_finite("center", self.center)
    }

    /// Label range `[k_min, k_max]` with `|v k − c| ≤ 12 σ_s`.
    pub fn support(&self) -> (i64, i64) {
        let w = SUPPORT_DEVIATIONS * self.sigma_s;
        (((self.center - w) / self.scale).ceil() as i64, ((self.center + w) / self.scale).floor() as i64)
    }
}

/// Tabulated lattice Gaussian: pmf, inverse-CDF sampler and moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteGaussian {
    pub spec: LatticeGaussianSpec,
    pub k_min: i64,
    probs: Vec<f64>,
    cdf: Vec<f64>,
    /// Second moment `Σ p(k)(v k)²`.
    pub power: f64,
}

impl DiscreteGaussian {
    pub fn new(spec: LatticeGaussianSpec) -> Result<Self> {
        spec.validate()?;
        let (k_min, k_max) = spec.support();
        if k_max < k_min {
            return Err(Error::Domain("lattice Gaussian support is empty".into()));
        }
        let len = (k_max - k_min + 1) as usize;
        if len > MAX_SUPPORT {
            return Err(Error::Domain(format!("support of {len} points is too large")));
        }
        let w: Vec<f64> = (k_min..=k_max)
            .map(|k| {
                let d = spec.scale * k as f64 - spec.center;
                (-d * d / (2.0 * spec.sigma_s * spec.sigma_s)).exp()
            })
            .collect();
        let total: f64 = w.iter().sum();
        let probs: Vec<f64> = w.iter().map(|x| x / total).collect();
        let mut acc = 0.0;
        let cdf = probs
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        let power = probs
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let x = spec.scale * (k_min + i as i64) as f64;
                p * x * x
            })
            .sum();
        Ok(Self { spec, k_min, probs, cdf, power })
    }

    pub fn k_max(&self) -> i64 {
        self.k_min + self.probs.len() as i64 - 1
    }

    /// Probabilities over `k_min..=k_max`.
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Probability of label `k` (zero outside the support).
    pub fn pmf(&self, k: i64) -> f64 {
        if k < self.k_min || k > self.k_max() {
            return 0.0;
        }
        self.probs[(k - self.k_min) as usize]
    }

    /// Draws a label by inverse CDF.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> i64 {
        let u: f64 = rng.random::<f64>() * self.cdf[self.cdf.len() - 1];
        let i = self.cdf.partition_point(|&c| c <= u).min(self.probs.len() - 1);
        self.k_min + i as i64
    }

    /// `log Σ_k exp(−(vk − c)²/(2σ_s²))` over the support.
    fn ln_theta(&self) -> f64 {
        let (k_min, k_max) = self.spec.support();
        let s2 = 2.0 * self.spec.sigma_s * self.spec.sigma_s;
        let d0 = {
            let k0 = (self.spec.center / self.spec.scale).round().clamp(k_min as f64, k_max as f64);
            let d = self.spec.scale * k0 - self.spec.center;
            -d * d / s2
        };
        let acc: f64 = (k_min..=k_max)
            .map(|k| {
                let d = self.spec.scale * k as f64 - self.spec.center;
                (-d * d / s2 - d0).exp()
            })
            .sum();
        d0 + acc.ln()
    }
}

/// `D_{Λ,σ_s,c}(λ)` for a lattice point `λ = v·k`; zero off the lattice.
pub fn discrete_gaussian_pmf(dg: &DiscreteGaussian, lambda: f64) -> f64 {
    let k = (lambda / dg.spec.scale).round();
    if (k * dg.spec.scale - lambda).abs() > 1e-9 * dg.spec.scale.max(lambda.abs()) {
        return 0.0;
    }
    dg.pmf(k as i64)
}

/// MMSE scaling for `y = h x + N(0, σ²)` with `x ~ D_{Λ,σ_s}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MmseParams {
    pub sigma_s: f64,
    pub sigma: f64,
}

impl MmseParams {
    /// `α(h) = h σ_s² / (h² σ_s² + σ²)`.
    pub fn alpha(&self, h: f64) -> f64 {
        let s2 = self.sigma_s * self.sigma_s;
        h * s2 / (h * h * s2 + self.sigma * self.sigma)
    }

    /// `σ̃(h) = σ_s σ / √(h² σ_s² + σ²)`.
    pub fn sigma_tilde(&self, h: f64) -> f64 {
        self.sigma_s * self.sigma / (h * h * self.sigma_s * self.sigma_s + self.sigma * self.sigma).sqrt()
    }
}

/// Lattice-Gaussian masses of the residue classes of the chain labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelPriors {
    pub r: usize,
    /// `masses[ℓ][ρ] = D(k ≡ ρ mod 2^ℓ)` for `ℓ = 0..=r`.
    pub masses: Vec<Vec<f64>>,
}

impl LevelPriors {
    /// `P(X_ℓ = bit | k ≡ ρ mod 2^{ℓ−1})` with binary-digit labels.
    pub fn conditional(&self, level: usize, rho: i64, bit: u8) -> f64 {
        let half = 1i64 << (level - 1);
        let lower = rho.rem_euclid(half);
        let num = self.masses[level][(lower + half * i64::from(bit & 1)) as usize];
        let den = self.masses[level - 1][lower as usize];
        if den > 0.0 {
            num / den
        } else {
            0.5
        }
    }

    /// Prior LLR of the level-ℓ code bit given the lower-level offset
    /// `base`: `ln D(k ≡ base) − ln D(k ≡ base + 2^{ℓ−1})`, both mod `2^ℓ`.
    pub fn llr(&self, level: usize, base: i64) -> f64 {
        let p = 1i64 << level;
        let m = &self.masses[level];
        let a = m[base.rem_euclid(p) as usize];
        let b = m[(base + p / 2).rem_euclid(p) as usize];
        a.ln() - b.ln()
    }

    /// `H(X_ℓ | X_{1:ℓ−1})` in bits.
    pub fn conditional_entropy(&self, level: usize) -> f64 {
        let half = 1usize << (level - 1);
        (0..half)
            .map(|r| {
                let den = self.masses[level - 1][r];
                if den > 0.0 {
                    den * binary_entropy(self.masses[level][r] / den)
                } else {
                    0.0
                }
            })
            .sum()
    }

    /// Source model of level ℓ as joint masses over the lower residue.
    pub fn source_channel(&self, level: usize) -> Result<DiscreteBmsc> {
        let half = 1usize << (level - 1);
        let pairs = (0..half).map(|r| (self.masses[level][r], self.masses[level][r + half])).collect();
        DiscreteBmsc::from_masses(pairs, 0.0)
    }
}

/// Exact conditional level priors by summing `D` over cosets.
pub fn level_bit_priors(dg: &DiscreteGaussian, chain: &PartitionChain) -> Result<LevelPriors> {
    if (chain.top_scale - dg.spec.scale).abs() > 1e-12 * chain.top_scale {
        return Err(Error::Contract(format!(
            "chain top scale {} differs from the Gaussian lattice scale {}",
            chain.top_scale, dg.spec.scale
        )));
    }
    let r = chain.r;
    if r > 30 {
        return Err(Error::Domain("at most 30 levels".into()));
    }
    let mut masses = Vec::with_capacity(r + 1);
    for l in 0..=r {
        let p = 1i64 << l;
        let mut m = vec![0.0; p as usize];
        for (i, &pr) in dg.probs.iter().enumerate() {
            m[(dg.k_min + i as i64).rem_euclid(p) as usize] += pr;
        }
        masses.push(m);
    }
    Ok(LevelPriors { r, masses })
}

/// Shaped transition density `P(y, h | x_{1:ℓ})` (the lower-level bits fix
/// the coset `A_ℓ = {k ≡ Σ x_i 2^{i−1} mod 2^ℓ}`); `ℓ = 0` is the marginal.
///
/// `bits` holds `x_1..x_ℓ` as binary digits of the label.
pub fn asym_level_pdf(
    dg: &DiscreteGaussian,
    priors: &LevelPriors,
    dist: &FadingDistribution,
    sigma: f64,
    bits: &[u8],
    y: f64,
    h: f64,
) -> Result<f64> {
    let level = bits.len();
    if level > priors.r {
        return Err(Error::Domain(format!("{level} bits for {} levels", priors.r)));
    }
    if dg.spec.center != 0.0 {
        return Err(Error::Contract("shaped level densities need a zero center".into()));
    }
    let rho: i64 = bits.iter().enumerate().map(|(i, &b)| i64::from(b & 1) << i).sum();
    let mass = priors.masses[level][rho as usize];
    if mass <= 0.0 {
        return Err(Error::Contract("coset carries no probability".into()));
    }
    let mm = MmseParams { sigma_s: dg.spec.sigma_s, sigma };
    let v = dg.spec.scale;
    let s = mm.sigma_tilde(h) / v;
    let t = mm.alpha(h) * y / v;
    let period = (1u64 << level) as f64;
    let s2 = sigma * sigma + h * h * dg.spec.sigma_s * dg.spec.sigma_s;
    // Σ_{k∈A} exp(−(k − t)²/(2 s²)) = √(2π) s f_{s, 2^ℓ ℤ}(ρ − t)
    let ln_coset = 0.5 * (2.0 * PI).ln() + s.ln() + ln_aliased_gaussian(rho as f64 - t, s, period);
    let ln = -y * y / (2.0 * s2) + ln_coset - dg.ln_theta() - (2.0 * PI).sqrt().ln() - sigma.ln() - mass.ln();
    Ok(ln.exp() * dist.density(h))
}

/// Symmetrized level-ℓ channel in the coordinate `u ∈ [−1, 1)` (one period).
///
/// Summed over the lower residues,
/// `p(b, u | h) = √(h²σ_s² + σ²)/(h σ_s Θ) · f_{s,2ℤ}(u − b) · S(u)` with
/// `s = σ̃/(v 2^{ℓ−1})` and `S(u) = Σ_{j mod 2^ℓ < 2^{ℓ−1}} exp(−(2^{ℓ−1}u + j)²/(2τ²))`,
/// `τ = α √(σ² + h²σ_s²)/v`, `Θ = Σ_k exp(−v²k²/(2σ_s²))`.
#[derive(Debug, Clone, Copy)]
pub struct ShapedLevelChannel {
    pub level: usize,
    pub scale: f64,
    pub sigma_s: f64,
    pub sigma: f64,
    pub dist: FadingDistribution,
    ln_theta: f64,
}

/// Per-gain quantities of a [`ShapedLevelChannel`].
#[derive(Debug, Clone, Copy)]
struct GainTerms {
    s: f64,
    tau: f64,
    ln_pref: f64,
}

impl ShapedLevelChannel {
    pub fn new(dg: &DiscreteGaussian, level: usize, dist: FadingDistribution, sigma: f64) -> Result<Self> {
        ensure_positive("sigma", sigma)?;
        if level == 0 || level > 30 {
            return Err(Error::Domain(format!("level {level} outside 1..=30")));
        }
        if dg.spec.center != 0.0 {
            return Err(Error::Contract("shaped level channels need a zero center".into()));
        }
        Ok(Self { level, scale: dg.spec.scale, sigma_s: dg.spec.sigma_s, sigma, dist, ln_theta: dg.ln_theta() })
    }

    fn half(&self) -> f64 {
        (1u64 << (self.level - 1)) as f64
    }

    fn mmse(&self) -> MmseParams {
        MmseParams { sigma_s: self.sigma_s, sigma: self.sigma }
    }

    /// Noise deviation of the level-ℓ parity channel at gain `h`.
    pub fn parity_sigma(&self, h: f64) -> f64 {
        self.mmse().sigma_tilde(h) / (self.scale * self.half())
    }

    fn terms(&self, h: f64) -> GainTerms {
        let m = self.mmse();
        let q = h * h * self.sigma_s * self.sigma_s + self.sigma * self.sigma;
        GainTerms {
            s: self.parity_sigma(h),
            tau: m.alpha(h) * q.sqrt() / self.scale,
            ln_pref: 0.5 * q.ln() - h.ln() - self.sigma_s.ln() - self.ln_theta,
        }
    }

    fn envelope(&self, u: f64, tau: f64) -> f64 {
        let half = self.half();
        let period = 2 * (1i64 << (self.level - 1));
        let x = half * u;
        let w = SUPPORT_DEVIATIONS * tau;
        let (lo, hi) = ((-x - w).ceil() as i64, (-x + w).floor() as i64);
        let inv = 1.0 / (2.0 * tau * tau);
        (lo..=hi)
            .filter(|j| j.rem_euclid(period) < period / 2)
            .map(|j| {
                let d = x + j as f64;
                (-d * d * inv).exp()
            })
            .sum()
    }

    /// `(p(0, u | h), p(1, u | h))` without the gain density.
    fn conditional(&self, u: f64, h: f64) -> (f64, f64) {
        if h <= 0.0 {
            return (0.0, 0.0);
        }
        let g = self.terms(h);
        let env = self.envelope(u, g.tau);
        if env == 0.0 {
            return (0.0, 0.0);
        }
        let c = g.ln_pref + env.ln();
        let p0 = (c + ln_aliased_gaussian(u, g.s, 2.0)).exp();
        let p1 = (c + ln_aliased_gaussian(u - 1.0, g.s, 2.0)).exp();
        (p0, p1)
    }

    /// Spike centres of the envelope within `[−1, 1]`.
    fn envelope_centres(&self) -> Vec<f64> {
        let half = 1i64 << (self.level - 1);
        let period = 2 * half;
        (-half..=half).filter(|j| j.rem_euclid(period) < half).map(|j| -(j as f64) / half as f64).collect()
    }

    fn cell_grid(&self, h: f64) -> Vec<f64> {
        let mut pts: Vec<f64> = (0..=32).map(|i| -1.0 + i as f64 / 16.0).collect();
        if h > 0.0 {
            let g = self.terms(h);
            let tau_u = g.tau / self.half();
            let mut local = |centres: &[f64], w: f64| {
                if w < 0.25 {
                    for &c in centres {
                        for i in -28..=28 {
                            let x = c + 0.5 * w * i as f64;
                            if x > -1.0 && x < 1.0 {
                                pts.push(x);
                            }
                        }
                    }
                }
            };
            local(&[-1.0, 0.0, 1.0], g.s);
            local(&self.envelope_centres(), tau_u);
        }
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        pts
    }

    /// `1 − H(X | U, h)` of the symmetrized channel at gain `h`.
    pub fn symmetrized_capacity_at_gain(&self, h: f64) -> Result<f64> {
        if h <= 0.0 {
            return Ok(0.0);
        }
        let s = self.parity_sigma(h);
        let pts = self.cell_grid(h);
        let est = integrate_pieces(
            |u| {
                let (p0, p1) = self.conditional(u, h);
                let tot = p0 + p1;
                if tot <= 0.0 {
                    return 0.0;
                }
                tot * bsc_capacity_from_llr(parity_llr(u, s))
            },
            &pts,
            QuadConfig::new(1e-12, 1e-11),
        )?;
        Ok(est.value)
    }

    /// `E_h[1 − H(X | U, h)]`.
    pub fn symmetrized_capacity(&self) -> Result<f64> {
        let mut err = None;
        let v = self.dist.expectation(
            |h| match self.symmetrized_capacity_at_gain(h) {
                Ok(c) => c,
                Err(e) => {
                    err.get_or_insert(e);
                    0.0
                }
            },
            QuadConfig::new(1e-10, 1e-10),
        )?;
        match err {
            Some(e) => Err(e),
            None => Ok(v.clamp(0.0, 1.0)),
        }
    }
}

impl JointDensity for ShapedLevelChannel {
    fn joint(&self, _k: usize, u: f64, h: f64) -> (f64, f64) {
        let (p0, p1) = self.conditional(u, h);
        let d = self.dist.density(h);
        (p0 * d, p1 * d)
    }

    fn llr(&self, _k: usize, u: f64, h: f64) -> f64 {
        parity_llr(u, self.parity_sigma(h))
    }

    fn inner_range(&self, _k: usize, _h: f64) -> (f64, f64, f64) {
        (-1.0, 1.0, 1.0 / 16.0)
    }

    fn knots(&self, _k: usize, _h: f64) -> Vec<f64> {
        vec![-1.0, 0.0, 1.0]
    }

    fn grid(&self, _k: usize, h: f64) -> Vec<f64> {
        self.cell_grid(h)
    }

    fn gain_breaks(&self, thresholds: &[f64], h_max: f64) -> Vec<f64> {
        // the peak LLR parity_llr(0, s(h)) grows with h
        let peak = |h: f64| parity_llr(0.0, self.parity_sigma(h));
        let (p_lo, p_hi) = (peak(0.0), peak(h_max));
        let mut out = Vec::new();
        for &t in thresholds {
            if !(t.is_finite() && t > p_lo && t < p_hi) {
                continue;
            }
            let (mut a, mut b) = (0.0, h_max);
            for _ in 0..200 {
                let m = 0.5 * (a + b);
                if peak(m) < t {
                    a = m;
                } else {
                    b = m;
                }
                if b - a <= 1e-13 * b {
                    break;
                }
            }
            out.push(0.5 * (a + b));
        }
        out
    }

    fn symmetric(&self) -> bool {
        false
    }
}

/// `I(Y, H; X_ℓ | X_{1:ℓ−1})` for every level, by direct quadrature.
pub fn level_mutual_informations(
    dg: &DiscreteGaussian,
    chain: &PartitionChain,
    dist: &FadingDistribution,
    sigma: f64,
) -> Result<Vec<f64>> {
    let priors = level_bit_priors(dg, chain)?;
    (1..=chain.r)
        .into_par_iter()
        .map(|l| {
            let ch = ShapedLevelChannel::new(dg, l, *dist, sigma)?;
            Ok((ch.symmetrized_capacity()? - 1.0 + priors.conditional_entropy(l)).max(0.0))
        })
        .collect()
}

/// `I(Y, H; K)` for `K ~ D_{vℤ,σ_s}` by direct quadrature over `y` and `h`.
pub fn total_mutual_information(dg: &DiscreteGaussian, dist: &FadingDistribution, sigma: f64) -> Result<f64> {
    ensure_positive("sigma", sigma)?;
    let v = dg.spec.scale;
    let support: Vec<(f64, f64)> =
        dg.probs.iter().enumerate().filter(|(_, &p)| p > 1e-300).map(|(i, &p)| (v * (dg.k_min + i as i64) as f64, p)).collect();
    let x_max = support.iter().map(|p| p.0.abs()).fold(0.0, f64::max);
    let ln_norm = -(2.0 * PI).sqrt().ln() - sigma.ln();
    let gauss_entropy = 0.5 * (2.0 * PI * E * sigma * sigma).log2();
    let at_gain = |h: f64| -> Result<f64> {
        let density = |y: f64| {
            let lead = support.iter().map(|&(x, _)| -(y - h * x).powi(2)).fold(f64::NEG_INFINITY, f64::max);
            let acc: f64 =
                support.iter().map(|&(x, p)| p * ((-(y - h * x).powi(2) - lead) / (2.0 * sigma * sigma)).exp()).sum();
            lead / (2.0 * sigma * sigma) + acc.ln() + ln_norm
        };
        let w = h * x_max + SUPPORT_DEVIATIONS * sigma;
        let step = (h * v).max(sigma).min(w);
        let cells = ((2.0 * w) / step).ceil() as usize;
        let pts: Vec<f64> = (0..=cells).map(|i| -w + 2.0 * w * i as f64 / cells as f64).collect();
        let est = integrate_pieces(
            |y| {
                let l = density(y);
                -l.exp() * l / LN_2
            },
            &pts,
            QuadConfig::new(1e-12, 1e-11),
        )?;
        Ok(est.value - gauss_entropy)
    };
    let mut err = None;
    let val = dist.expectation(
        |h| match at_gain(h) {
            Ok(x) => x,
            Err(e) => {
                err.get_or_insert(e);
                0.0
            }
        },
        QuadConfig::new(1e-9, 1e-10),
    )?;
    match err {
        Some(e) => Err(e),
        None => Ok(val),
    }
}

/// One branch of the auxiliary flatness condition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsTBranch {
    pub t: f64,
    pub eps_t: f64,
    /// `π ε_t/(1 − ε_t) ≤ ε`.
    pub admissible: bool,
}

/// Lower bound on `E_h[I_D(h)]` and its hypothesis checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiLowerBound {
    pub power: f64,
    pub ergodic_capacity: f64,
    /// `½ ∫_{h_l}^∞ P_H(h) P h²/σ² dh`.
    pub tail_penalty: f64,
    /// `ε = ε_Λ(σ̃(h_l))`.
    pub eps: f64,
    /// `5ε/n`, `n = 1`.
    pub flatness_penalty: f64,
    pub branches: Vec<EpsTBranch>,
    /// `None` when the hypotheses fail; see `diagnostic`.
    pub value: Option<f64>,
    pub diagnostic: Option<String>,
}

/// `E_h[½ log2(1 + P h²/σ²)] − tail − 5ε` for the lattice Gaussian `dg`.
///
/// The auxiliary condition is checked at `t = 1/e` and at `t = 1/(2e)`;
/// the bound itself does not depend on `t`.
pub fn mi_lower_bound(dg: &DiscreteGaussian, dist: &FadingDistribution, sigma: f64, h_l: f64) -> Result<MiLowerBound> {
    ensure_positive("sigma", sigma)?;
    ensure_positive("h_l", h_l)?;
    let power = dg.power;
    let ergodic = ergodic_capacity_power(dist, sigma, power)?;
    let tail_penalty = match dist.kind {
        FadingKind::Rayleigh => {
            let sh2 = dist.sigma_h * dist.sigma_h;
            0.5 * (h_l * h_l / sh2 + 2.0) * (power * sh2 / (sigma * sigma)) * (-h_l * h_l / (2.0 * sh2)).exp()
        }
        FadingKind::Rician => {
            let hi = dist.gain_limit();
            if h_l >= hi {
                0.0
            } else {
                let f = |h: f64| 0.5 * dist.density(h) * power * h * h / (sigma * sigma);
                integrate_pieces(f, &[h_l, hi], QuadConfig::new(1e-15, 1e-10))?.value
            }
        }
    } / LN_2;
    let v = dg.spec.scale;
    let eps = flatness_factor(v, MmseParams { sigma_s: dg.spec.sigma_s, sigma }.sigma_tilde(h_l));
    let branch = |t: f64| {
        let base = flatness_factor(v, dg.spec.sigma_s * ((PI - t) / PI).sqrt());
        let eps_t = if t >= 1.0 / E { base } else { (t.powi(-4) + 1.0) * base };
        EpsTBranch { t, eps_t, admissible: eps_t < 1.0 && PI * eps_t / (1.0 - eps_t) <= eps }
    };
    let branches = vec![branch(1.0 / E), branch(0.5 / E)];
    let flatness_penalty = 5.0 * eps;
    let (value, diagnostic) = if !(eps < 0.5) {
        (None, Some(format!("flatness factor {eps:e} at the large gain is not below 1/2")))
    } else if !branches.iter().any(|b| b.admissible) {
        (None, Some("auxiliary flatness condition fails on both branches".to_string()))
    } else {
        (Some(ergodic - tail_penalty - flatness_penalty), None)
    };
    Ok(MiLowerBound { power, ergodic_capacity: ergodic, tail_penalty, eps, flatness_penalty, branches, value, diagnostic })
}

/// `Σ_{λ ∈ Λ′∖{0}} D_{Λ′,σ_s}(λ)` for `Λ′ = bottom·ℤ`, by direct summation.
pub fn out_of_voronoi_probability(bottom: f64, sigma_s: f64) -> Result<f64> {
    ensure_positive("bottom", bottom)?;
    ensure_positive("sigma_s", sigma_s)?;
    let mut tail = 0.0;
    let mut m = 1.0f64;
    loop {
        let w = (-(bottom * m).powi(2) / (2.0 * sigma_s * sigma_s)).exp();
        tail += 2.0 * w;
        if w < 1e-300 || w <= tail * 1e-17 {
            break;
        }
        m += 1.0;
    }
    Ok(tail / (1.0 + tail))
}

/// Quantized symmetrized channel, source model and their polarizations
/// for one shaped level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapedLevelConstruction {
    pub level: usize,
    /// `I(Y, H; X_ℓ | X_{1:ℓ−1})` by direct quadrature.
    pub mutual_information: f64,
    /// `E_h[1 − H(X_ℓ | U, h)]` by direct quadrature.
    pub symmetrized_capacity: f64,
    pub quantized_capacity: f64,
    /// `H(X_ℓ | X_{1:ℓ−1})`.
    pub source_entropy: f64,
    pub channel_hash: String,
    pub mu: usize,
    /// `Z(U_i | U^{i−1}, Y, H)` estimates by depth.
    pub z_channel: Vec<Vec<f64>>,
    /// `Z(U_i | U^{i−1})` by depth.
    pub z_source: Vec<Vec<f64>>,
}

/// Builds every shaped level of `chain` up to `N = 2^m`.
pub fn construct_shaped_levels(
    dg: &DiscreteGaussian,
    chain: &PartitionChain,
    dist: &FadingDistribution,
    sigma: f64,
    m: usize,
    params: QuantizerParams,
    mu: usize,
) -> Result<Vec<ShapedLevelConstruction>> {
    if m > MAX_M {
        return Err(Error::Domain(format!("m = {m} exceeds {MAX_M}")));
    }
    params.validate()?;
    let priors = level_bit_priors(dg, chain)?;
    (1..=chain.r)
        .into_par_iter()
        .map(|level| {
            let ch = ShapedLevelChannel::new(dg, level, *dist, sigma)?;
            let symmetrized_capacity = ch.symmetrized_capacity()?;
            let w = quantize_by_llr(&ch, params, GainDomain::Faded(*dist))?;
            let quantized_capacity = w.capacity();
            let gap = symmetrized_capacity - quantized_capacity;
            if gap < -1e-6 || gap > 1.0 / params.q as f64 + 1e-6 {
                return Err(Error::Numerical {
                    what: "shaped level quantization cross-check",
                    requested: symmetrized_capacity,
                    achieved: quantized_capacity,
                });
            }
            let source_entropy = priors.conditional_entropy(level);
            let src = priors.source_channel(level)?;
            Ok(ShapedLevelConstruction {
                level,
                mutual_information: (symmetrized_capacity - 1.0 + source_entropy).max(0.0),
                symmetrized_capacity,
                quantized_capacity,
                source_entropy,
                channel_hash: w.content_hash(),
                mu,
                z_channel: construct_all_depths(&w, m, mu)?,
                z_source: construct_all_depths(&src, m, mu)?,
            })
        })
        .collect()
}

/// Role of a synthesized index in a shaped level code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BitRole {
    Info,
    /// Shared uniformly random bit.
    Frozen,
    /// Drawn from the source posterior by randomized rounding.
    Shaping,
}

/// One level of a shaped multilevel polar code.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapedLevel {
    pub level: usize,
    pub mutual_information: f64,
    pub z_channel: Vec<f64>,
    pub z_source: Vec<f64>,
    pub roles: Vec<BitRole>,
}

impl ShapedLevel {
    pub fn info_indices(&self) -> Vec<usize> {
        (0..self.roles.len()).filter(|&i| self.roles[i] == BitRole::Info).collect()
    }

    pub fn count(&self, role: BitRole) -> usize {
        self.roles.iter().filter(|&&r| r == role).count()
    }

    pub fn rate(&self) -> f64 {
        self.count(BitRole::Info) as f64 / self.roles.len() as f64
    }

    /// `Σ_{i ∈ info} Z_channel[i]` in increasing index order.
    pub fn z_sum(&self) -> f64 {
        self.info_indices().iter().map(|&i| self.z_channel[i]).sum()
    }
}

/// Multilevel polar code with lattice Gaussian shaping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapedLattice {
    pub chain: PartitionChain,
    pub gaussian: DiscreteGaussian,
    pub priors: LevelPriors,
    pub dist: FadingDistribution,
    pub sigma: f64,
    /// Source bits with `Z ≥ 1 − θ` count as uniform.
    pub theta: f64,
    pub levels: Vec<ShapedLevel>,
}

impl ShapedLattice {
    pub fn n(&self) -> usize {
        self.levels[0].roles.len()
    }

    pub fn r(&self) -> usize {
        self.levels.len()
    }

    /// Information bits per dimension.
    pub fn rate_sum(&self) -> f64 {
        self.levels.iter().map(ShapedLevel::rate).sum()
    }

    pub fn info_sizes(&self) -> Vec<usize> {
        self.levels.iter().map(|l| l.count(BitRole::Info)).collect()
    }

    pub fn mmse(&self) -> MmseParams {
        MmseParams { sigma_s: self.gaussian.spec.sigma_s, sigma: self.sigma }
    }
}

/// Assigns roles at `N = 2^m`.
///
/// Indices whose source Bhattacharyya is below `1 − θ` are shaping bits.
/// The others are candidates; information indices are chosen among all
/// candidates of all levels by increasing channel `Z` (ties: lower level,
/// then lower index) until `target` is met. Remaining candidates are frozen.
/// `Budget` applies to the whole bound, out-of-Voronoi term included.
#[allow(clippy::too_many_arguments)]
pub fn assemble_shaped(
    dg: &DiscreteGaussian,
    chain: &PartitionChain,
    dist: &FadingDistribution,
    sigma: f64,
    constructions: &[ShapedLevelConstruction],
    m: usize,
    theta: f64,
    target: SelectionTarget,
) -> Result<ShapedLattice> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::Domain(format!("theta {theta} outside (0, 1)")));
    }
    if constructions.len() != chain.r {
        return Err(Error::Contract(format!("{} level constructions for r = {}", constructions.len(), chain.r)));
    }
    let priors = level_bit_priors(dg, chain)?;
    let n = 1usize << m;
    let mut levels = Vec::with_capacity(chain.r);
    let mut cands: Vec<(f64, usize, usize)> = Vec::new();
    for (l, c) in constructions.iter().enumerate() {
        if c.level != l + 1 {
            return Err(Error::Contract("level constructions out of order".into()));
        }
        let zc = c.z_channel.get(m).ok_or_else(|| Error::Contract(format!("construction lacks depth {m}")))?;
        let zs = c.z_source.get(m).ok_or_else(|| Error::Contract(format!("construction lacks depth {m}")))?;
        let roles: Vec<BitRole> =
            zs.iter().map(|&z| if z < 1.0 - theta { BitRole::Shaping } else { BitRole::Frozen }).collect();
        for i in 0..n {
            if roles[i] == BitRole::Frozen {
                cands.push((zc[i], l, i));
            }
        }
        levels.push(ShapedLevel {
            level: c.level,
            mutual_information: c.mutual_information,
            z_channel: zc.clone(),
            z_source: zs.clone(),
            roles,
        });
    }
    cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let p_out = n as f64 * out_of_voronoi_probability(chain.bottom_scale(), dg.spec.sigma_s)?;
    let take = match target {
        SelectionTarget::Rate(r) => {
            if !(r >= 0.0 && r.is_finite()) {
                return Err(Error::Domain(format!("rate {r} must be nonnegative")));
            }
            let k = (r * n as f64 + 1e-9).floor() as usize;
            if k > cands.len() {
                return Err(Error::Build(format!("rate {r} needs {k} indices but only {} are available", cands.len())));
            }
            k
        }
        SelectionTarget::Budget(b) => {
            let mut acc = p_out;
            let mut k = 0;
            for c in &cands {
                if acc + c.0 > b {
                    break;
                }
                acc += c.0;
                k += 1;
            }
            k
        }
        SelectionTarget::Threshold(beta) => {
            let thr = (-(n as f64).powf(beta) * LN_2).exp();
            cands.iter().take_while(|c| c.0 <= thr).count()
        }
    };
    for &(_, l, i) in &cands[..take] {
        levels[l].roles[i] = BitRole::Info;
    }
    Ok(ShapedLattice { chain: *chain, gaussian: dg.clone(), priors, dist: *dist, sigma, theta, levels })
}

/// Union bound of a shaped code.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapedBound {
    pub per_level: Vec<f64>,
    pub z_sum: f64,
    /// `N · Σ_{λ∈Λ′∖{0}} D_{Λ′,σ_s}(λ)`.
    pub out_of_voronoi_term: f64,
    pub total: f64,
}

pub fn shaped_union_bound(code: &ShapedLattice) -> Result<ShapedBound> {
    let per_level: Vec<f64> = code.levels.iter().map(ShapedLevel::z_sum).collect();
    let z_sum = per_level.iter().sum();
    let out = code.n() as f64 * out_of_voronoi_probability(code.chain.bottom_scale(), code.gaussian.spec.sigma_s)?;
    Ok(ShapedBound { per_level, z_sum, out_of_voronoi_term: out, total: z_sum + out })
}

/// Randomness shared by encoder and decoder for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SharedRandomness {
    /// Values of frozen indices, full length per level.
    pub frozen: Vec<Vec<u8>>,
    /// Uniforms driving the randomized rounding, full length per level.
    pub uniforms: Vec<Vec<f64>>,
}

impl SharedRandomness {
    pub fn draw<R: Rng + ?Sized>(code: &ShapedLattice, rng: &mut R) -> Self {
        let n = code.n();
        let mut frozen = Vec::with_capacity(code.r());
        let mut uniforms = Vec::with_capacity(code.r());
        for _ in 0..code.r() {
            frozen.push((0..n).map(|_| (rng.next_u32() & 1) as u8).collect());
            uniforms.push((0..n).map(|_| rng.random::<f64>()).collect());
        }
        Self { frozen, uniforms }
    }
}

/// Randomized rounding: `0` iff `U < P(0) = 1/(1 + e^{−l})`.
fn round_bit(llr: f64, u: f64) -> u8 {
    let p0 = if llr >= 0.0 { 1.0 / (1.0 + (-llr).exp()) } else { let e = llr.exp(); e / (1.0 + e) };
    u8::from(u >= p0)
}

/// Encoder output.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapedFrame {
    /// Full `u` vectors per level.
    pub u: Vec<Vec<u8>>,
    /// Integer labels; the transmitted point is `v·k`.
    pub k: Vec<i64>,
    pub x: Vec<f64>,
}

/// Per-residue conditional tables for the bottom integer.
#[derive(Debug, Clone)]
struct CosetSampler {
    /// For residue `ρ` mod `2^r`: labels and cumulative masses.
    tables: Vec<(Vec<i64>, Vec<f64>)>,
}

impl CosetSampler {
    fn new(dg: &DiscreteGaussian, r: usize) -> Self {
        let p = 1i64 << r;
        let mut tables = vec![(Vec::new(), Vec::new()); p as usize];
        for (i, &pr) in dg.probs.iter().enumerate() {
            let k = dg.k_min + i as i64;
            let (ks, cs) = &mut tables[k.rem_euclid(p) as usize];
            let acc = cs.last().copied().unwrap_or(0.0) + pr;
            ks.push(k);
            cs.push(acc);
        }
        Self { tables }
    }

    fn sample<R: Rng + ?Sized>(&self, base: i64, r: usize, rng: &mut R) -> i64 {
        let (ks, cs) = &self.tables[base.rem_euclid(1i64 << r) as usize];
        if ks.is_empty() {
            // coset outside the truncated support: nearest point to zero
            let p = 1i64 << r;
            let rho = base.rem_euclid(p);
            return if rho <= p / 2 { rho } else { rho - p };
        }
        let u = rng.random::<f64>() * cs[cs.len() - 1];
        ks[cs.partition_point(|&c| c <= u).min(ks.len() - 1)]
    }
}

fn lift_bits(u: &[u8]) -> Vec<i64> {
    polar_transform_int(&u.iter().map(|&b| i64::from(b & 1)).collect::<Vec<_>>())
}

/// Reusable shaped encoder.
pub struct ShapedEncoder {
    engine: ScEngine<1>,
    llr: Vec<[f64; 1]>,
    coset: CosetSampler,
}

impl ShapedEncoder {
    pub fn new(code: &ShapedLattice) -> Self {
        let n = code.n();
        Self { engine: ScEngine::new(n), llr: vec![[0.0]; n], coset: CosetSampler::new(&code.gaussian, code.r()) }
    }

    /// Encodes one frame; `rng` draws the bottom integer.
    pub fn encode<R: Rng + ?Sized>(
        &mut self,
        code: &ShapedLattice,
        info_bits: &[Vec<u8>],
        shared: &SharedRandomness,
        rng: &mut R,
    ) -> Result<ShapedFrame> {
        let n = code.n();
        let r = code.r();
        if info_bits.len() != r || shared.frozen.len() != r || shared.uniforms.len() != r {
            return Err(Error::Contract(format!("expected {r} levels of bits and shared randomness")));
        }
        let mut base = vec![0i64; n];
        let mut u_all = Vec::with_capacity(r);
        for (l, lv) in code.levels.iter().enumerate() {
            let want = lv.count(BitRole::Info);
            if info_bits[l].len() != want {
                return Err(Error::Contract(format!("level {} has {} bits, expected {want}", l + 1, info_bits[l].len())));
            }
            if shared.frozen[l].len() != n || shared.uniforms[l].len() != n {
                return Err(Error::Contract("shared randomness length mismatch".into()));
            }
            for j in 0..n {
                self.llr[j][0] = code.priors.llr(l + 1, base[j]);
            }
            let mut next = info_bits[l].iter();
            let (fr, un) = (&shared.frozen[l], &shared.uniforms[l]);
            let mut u = vec![0u8; n];
            self.engine.run(&self.llr, &mut u, |i, x| match lv.roles[i] {
                BitRole::Info => *next.next().expect("length checked") & 1,
                BitRole::Frozen => fr[i] & 1,
                BitRole::Shaping => round_bit(x[0], un[i]),
            });
            let lift = lift_bits(&u);
            for j in 0..n {
                base[j] += lift[j] << l;
            }
            u_all.push(u);
        }
        let k: Vec<i64> = base.iter().map(|&b| self.coset.sample(b, r, rng)).collect();
        let v = code.gaussian.spec.scale;
        let x = k.iter().map(|&q| v * q as f64).collect();
        Ok(ShapedFrame { u: u_all, k, x })
    }
}

/// One-shot [`ShapedEncoder::encode`].
pub fn shaped_encode<R: Rng + ?Sized>(
    code: &ShapedLattice,
    info_bits: &[Vec<u8>],
    shared: &SharedRandomness,
    rng: &mut R,
) -> Result<ShapedFrame> {
    ShapedEncoder::new(code).encode(code, info_bits, shared, rng)
}

/// Decoder output.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapedDecision {
    pub u: Vec<Vec<u8>>,
    pub k: Vec<i64>,
}

impl ShapedDecision {
    pub fn info_bits(&self, code: &ShapedLattice) -> Vec<Vec<u8>> {
        code.levels.iter().zip(&self.u).map(|(lv, u)| lv.info_indices().iter().map(|&i| u[i]).collect()).collect()
    }
}

/// Reusable shaped multistage decoder.
///
/// Lane 0 carries the channel posterior of the MMSE-scaled signal, lane 1
/// the source posterior; shaping bits are re-drawn from lane 1 with the
/// shared uniforms, so they match the encoder whenever earlier bits do.
pub struct ShapedDecoder {
    engine: ScEngine<2>,
    llr: Vec<[f64; 2]>,
    t: Vec<f64>,
    s: Vec<f64>,
}

impl ShapedDecoder {
    pub fn new(code: &ShapedLattice) -> Self {
        let n = code.n();
        Self { engine: ScEngine::new(n), llr: vec![[0.0; 2]; n], t: vec![0.0; n], s: vec![0.0; n] }
    }

    pub fn decode(&mut self, code: &ShapedLattice, y: &[f64], h: &[f64], shared: &SharedRandomness) -> Result<ShapedDecision> {
        let n = code.n();
        let r = code.r();
        if y.len() != n || h.len() != n {
            return Err(Error::Contract(format!("expected {n} outputs and gains")));
        }
        if shared.frozen.len() != r || shared.uniforms.len() != r {
            return Err(Error::Contract(format!("expected {r} levels of shared randomness")));
        }
        let mm = code.mmse();
        let v = code.gaussian.spec.scale;
        for j in 0..n {
            if mm.sigma == 0.0 {
                self.t[j] = y[j] / (h[j] * v);
                self.s[j] = 0.0;
            } else {
                self.t[j] = mm.alpha(h[j]) * y[j] / v;
                self.s[j] = mm.sigma_tilde(h[j]) / v;
            }
        }
        let mut base = vec![0i64; n];
        let mut u_all = Vec::with_capacity(r);
        for (l, lv) in code.levels.iter().enumerate() {
            let half = (1u64 << l) as f64;
            for j in 0..n {
                self.llr[j][0] = parity_llr((self.t[j] - base[j] as f64) / half, self.s[j] / half);
                self.llr[j][1] = code.priors.llr(l + 1, base[j]);
            }
            let (fr, un) = (&shared.frozen[l], &shared.uniforms[l]);
            let mut u = vec![0u8; n];
            self.engine.run(&self.llr, &mut u, |i, x| match lv.roles[i] {
                BitRole::Info => hard_decision(x[0]),
                BitRole::Frozen => fr[i] & 1,
                BitRole::Shaping => round_bit(x[1], un[i]),
            });
            let lift = lift_bits(&u);
            for j in 0..n {
                base[j] += lift[j] << l;
            }
            u_all.push(u);
        }
        let p = (1u64 << r) as f64;
        let k = (0..n).map(|j| base[j] + ((self.t[j] - base[j] as f64) / p).round() as i64 * (1i64 << r)).collect();
        Ok(ShapedDecision { u: u_all, k })
    }
}

/// One-shot [`ShapedDecoder::decode`].
pub fn shaped_multistage_decode(
    code: &ShapedLattice,
    y: &[f64],
    h: &[f64],
    shared: &SharedRandomness,
) -> Result<ShapedDecision> {
    ShapedDecoder::new(code).decode(code, y, h, shared)
}

/// Monte Carlo outcome of a shaped code.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapedStats {
    pub trials: u64,
    pub frame_errors: u64,
    pub fer: f64,
    pub fer_ci: (f64, f64),
    /// Mean of `x²` over all transmitted symbols.
    pub empirical_power: f64,
}

/// Per-trial randomness order: information bits, shared randomness, bottom
/// integers, gains, noise.
fn trial_frame<R: Rng>(code: &ShapedLattice, enc: &mut ShapedEncoder, rng: &mut R) -> (Vec<Vec<u8>>, SharedRandomness, ShapedFrame) {
    let bits: Vec<Vec<u8>> =
        code.info_sizes().iter().map(|&k| (0..k).map(|_| (rng.next_u32() & 1) as u8).collect()).collect();
    let shared = SharedRandomness::draw(code, rng);
    let frame = enc.encode(code, &bits, &shared, rng).expect("sizes match");
    (bits, shared, frame)
}

/// Simulates shaped transmission at the code's `σ` and fading law.
pub fn simulate_shaped(code: &ShapedLattice, trials: u64, seed: u64) -> Result<ShapedStats> {
    if trials == 0 {
        return Err(Error::Domain("trials must be >= 1".into()));
    }
    let n = code.n();
    let rows: Vec<(bool, f64)> = (0..trials)
        .into_par_iter()
        .map_init(
            || (ShapedEncoder::new(code), ShapedDecoder::new(code)),
            |(enc, dec), t| {
                let mut rng = trial_rng(seed, t);
                let (bits, shared, frame) = trial_frame(code, enc, &mut rng);
                let h: Vec<f64> = (0..n).map(|_| code.dist.sample(&mut rng)).collect();
                let y: Vec<f64> = (0..n)
                    .map(|j| h[j] * frame.x[j] + code.sigma * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                let d = dec.decode(code, &y, &h, &shared).expect("sizes match");
                let wrong = d.info_bits(code) != bits || d.k != frame.k;
                (wrong, frame.x.iter().map(|x| x * x).sum::<f64>())
            },
        )
        .collect();
    let frame_errors = rows.iter().filter(|r| r.0).count() as u64;
    let energy: f64 = rows.iter().map(|r| r.1).sum();
    Ok(ShapedStats {
        trials,
        frame_errors,
        fer: frame_errors as f64 / trials as f64,
        fer_ci: wilson_interval(frame_errors, trials, Z95),
        empirical_power: energy / (trials as f64 * n as f64),
    })
}

/// Encoder output statistics against the lattice Gaussian marginal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapingTest {
    pub symbols: u64,
    pub chi_square: f64,
    pub dof: usize,
    pub p_value: f64,
    pub empirical_power: f64,
    pub power: f64,
}

/// Encodes `frames` random frames and tests the label histogram against
/// `D_{Λ,σ_s}` (cells with expected count below 5 pooled).
pub fn shaping_distribution_test(code: &ShapedLattice, frames: u64, seed: u64) -> Result<ShapingTest> {
    if frames == 0 {
        return Err(Error::Domain("frames must be >= 1".into()));
    }
    let dg = &code.gaussian;
    let cells = dg.probs.len();
    let hists: Vec<(Vec<u64>, f64)> = (0..frames)
        .into_par_iter()
        .map_init(
            || ShapedEncoder::new(code),
            |enc, t| {
                let mut rng = trial_rng(seed, t);
                let (_, _, frame) = trial_frame(code, enc, &mut rng);
                let mut hist = vec![0u64; cells + 1];
                for &k in &frame.k {
                    let idx = k - dg.k_min;
                    if idx >= 0 && (idx as usize) < cells {
                        hist[idx as usize] += 1;
                    } else {
                        hist[cells] += 1;
                    }
                }
                (hist, frame.x.iter().map(|x| x * x).sum::<f64>())
            },
        )
        .collect();
    let mut hist = vec![0u64; cells + 1];
    let mut energy = 0.0;
    for (h, e) in &hists {
        hist.iter_mut().zip(h).for_each(|(a, b)| *a += b);
        energy += e;
    }
    let mut probs = dg.probs.clone();
    probs.push(0.0);
    let (chi_square, dof, p_value) = chi_square_test(&hist, &probs, 5.0);
    let symbols = frames * code.n() as u64;
    Ok(ShapingTest { symbols, chi_square, dof, p_value, empirical_power: energy / symbols as f64, power: dg.power })
}

/// Header of [`shaped_bound_csv_row`] for `r` levels.
pub fn shaped_bound_csv_header(r: usize) -> String {
    let mut h = String::from("n,rate");
    for l in 1..=r {
        h += &format!(",z_sum_level_{l}");
    }
    h + ",out_of_voronoi,union_bound"
}

pub fn shaped_bound_csv_row(code: &ShapedLattice, bound: &ShapedBound) -> String {
    let mut row = format!("{},{}", code.n(), fmt_sig(code.rate_sum()));
    for z in &bound.per_level {
        row += &format!(",{}", fmt_sig(*z));
    }
    row + &format!(",{},{}", fmt_sig(bound.out_of_voronoi_term), fmt_sig(bound.total))
}

pub const SHAPED_LEVEL_CSV_HEADER: &str = "level,mutual_information,symmetrized_capacity,quantized_capacity,source_entropy";

pub fn shaped_level_csv(levels: &[ShapedLevelConstruction]) -> String {
    let mut out = format!("{SHAPED_LEVEL_CSV_HEADER}\n");
    for l in levels {
        out += &format!(
            "{},{},{},{},{}\n",
            l.level,
            fmt_sig(l.mutual_information),
            fmt_sig(l.symmetrized_capacity),
            fmt_sig(l.quantized_capacity),
            fmt_sig(l.source_entropy)
        );
    }
    out
}
