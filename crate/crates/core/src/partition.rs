//! One-dimensional binary partition chains `Λ = vℤ / 2vℤ / … / 2^r vℤ = Λ′`
//! and the fading mod-lattice and per-level channels they induce.
//!
//! With receiver CSI the received `y = h x + z` is scaled by `1/h` and
//! reduced, so a gain `h` turns into noise deviation `σ/h`.

use std::f64::consts::{E, LN_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{ensure_positive, Error, Result};
use crate::fading::{FadingDistribution, FadingKind};
use crate::numeric::special::{q_function, EULER_GAMMA};
use crate::numeric::theta::{aliased_gaussian, aliasing_entropy_gap, binary_partition_capacity, ln_aliased_gaussian, mod_channel_capacity};
use crate::numeric::QuadConfig;
use crate::quantizer::{quantize_by_llr, DiscreteBmsc, GainDomain, JointDensity, QuantizerParams};

/// Inner quadrature settings for per-gain capacities.
const INNER: QuadConfig = QuadConfig { abs_tol: 1e-13, rel_tol: 1e-12, max_intervals: 4000 };

/// Outer (gain) quadrature settings.
const OUTER: QuadConfig = QuadConfig { abs_tol: 1e-11, rel_tol: 1e-11, max_intervals: 4000 };

/// Default bound on `C_H(Λ, σ²)` for chain design.
pub const DEFAULT_EPS1_TARGET: f64 = 5e-3;

/// Default bound on `E_h[P_e(Λ′, σ²/h²)]` for chain design.
pub const DEFAULT_PE_TARGET: f64 = 5e-3;

/// Relative tolerance of scale bisections.
pub const SCALE_TOL: f64 = 1e-6;

/// Chain `top_scale·ℤ / 2 top_scale·ℤ / … / 2^r top_scale·ℤ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartitionChain {
    pub top_scale: f64,
    pub r: usize,
    /// Large-gain design point.
    pub h_l: f64,
    /// Small-gain design point.
    pub h_s: f64,
    pub delta: f64,
}

impl PartitionChain {
    /// Chain with no design points (`h_l = ∞`, `h_s = 0`).
    pub fn new(top_scale: f64, r: usize) -> Result<Self> {
        ensure_positive("top_scale", top_scale)?;
        if r == 0 {
            return Err(Error::Domain("a partition chain needs r >= 1".into()));
        }
        Ok(Self { top_scale, r, h_l: f64::INFINITY, h_s: 0.0, delta: 0.0 })
    }

    /// Scale of `Λ_ℓ`, `ℓ = 0..=r`.
    pub fn lattice_scale(&self, level: usize) -> f64 {
        self.top_scale * (1u64 << level) as f64
    }

    pub fn bottom_scale(&self) -> f64 {
        self.lattice_scale(self.r)
    }

    /// `log2(V(Λ′)/V(Λ))`.
    pub fn log_volume_ratio(&self) -> f64 {
        (self.bottom_scale() / self.top_scale).log2()
    }

    /// The `Λ_{ℓ−1}/Λ_ℓ` channel, `ℓ = 1..=r`.
    pub fn level(&self, level: usize, dist: FadingDistribution, sigma: f64) -> Result<LevelFadingChannel> {
        if level == 0 || level > self.r {
            return Err(Error::Domain(format!("level {level} outside 1..={}", self.r)));
        }
        ensure_positive("sigma", sigma)?;
        Ok(LevelFadingChannel { chain: *self, level, sigma, dist })
    }

    /// Whether `C_H(Λ) ≤ eps1` and `E_h[P_e(Λ′)] ≤ pe` hold for this chain.
    pub fn satisfies(&self, dist: &FadingDistribution, sigma: f64, eps1: f64, pe: f64) -> Result<bool> {
        let c = mod_capacity(self.top_scale, dist, sigma)?;
        let u = uncoded_error_expectation(self.bottom_scale(), dist, sigma, self.h_s.max(0.0))?;
        Ok(c <= eps1 && u.exact <= pe)
    }
}

/// `P_H(h) · f_{σ/h, vℤ}(ỹ − x)`.
pub fn mod_fading_pdf(v: f64, dist: &FadingDistribution, sigma: f64, ytilde: f64, h: f64, x: f64) -> f64 {
    let ph = dist.density(h);
    if ph == 0.0 {
        return 0.0;
    }
    ph * aliased_gaussian(ytilde - x, sigma / h, v)
}

/// The binary `Λ_{ℓ−1}/Λ_ℓ` fading channel.
///
/// Input bit `b` selects the coset `b·d` of `Λ_ℓ = 2dℤ` in `Λ_{ℓ−1} = dℤ`;
/// the output is `(ỹ, h)` with `ỹ` reduced modulo `2d`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelFadingChannel {
    pub chain: PartitionChain,
    pub level: usize,
    pub sigma: f64,
    pub dist: FadingDistribution,
}

impl LevelFadingChannel {
    /// Coset spacing `d = V(Λ_{ℓ−1})`.
    pub fn spacing(&self) -> f64 {
        self.chain.lattice_scale(self.level - 1)
    }

    /// Output permutation exchanging the roles of the two inputs.
    pub fn conjugate(&self, ytilde: f64) -> f64 {
        let p = 2.0 * self.spacing();
        (ytilde - self.spacing()).rem_euclid(p)
    }

    /// Natural-log LLR at `(ỹ, h)`.
    pub fn llr(&self, ytilde: f64, h: f64) -> f64 {
        let d = self.spacing();
        let s = self.sigma / h;
        ln_aliased_gaussian(ytilde, s, 2.0 * d) - ln_aliased_gaussian(ytilde - d, s, 2.0 * d)
    }
}

/// `P(ỹ, h | x)` of a level channel.
pub fn level_channel_pdf(lc: &LevelFadingChannel, x: u8, ytilde: f64, h: f64) -> f64 {
    let d = lc.spacing();
    mod_fading_pdf(2.0 * d, &lc.dist, lc.sigma, ytilde, h, f64::from(x & 1) * d)
}

impl JointDensity for LevelFadingChannel {
    fn joint(&self, _: usize, y: f64, h: f64) -> (f64, f64) {
        (0.5 * level_channel_pdf(self, 0, y, h), 0.5 * level_channel_pdf(self, 1, y, h))
    }

    fn llr(&self, _: usize, y: f64, h: f64) -> f64 {
        LevelFadingChannel::llr(self, y, h)
    }

    fn inner_range(&self, _: usize, h: f64) -> (f64, f64, f64) {
        let d = self.spacing();
        (-d, d, (d / 8.0).min(0.25 * self.sigma / h))
    }

    fn knots(&self, _: usize, _: f64) -> Vec<f64> {
        let d = self.spacing();
        vec![-0.5 * d, 0.0, 0.5 * d]
    }

    fn gain_breaks(&self, thresholds: &[f64], h_max: f64) -> Vec<f64> {
        // the LLR peaks at ỹ = 0 and its peak grows with h
        let peak = |h: f64| LevelFadingChannel::llr(self, 0.0, h);
        let top = peak(h_max);
        thresholds
            .iter()
            .filter(|&&t| t > 0.0 && t < top)
            .map(|&t| {
                let (mut lo, mut hi) = (0.0, h_max);
                while hi - lo > 1e-13 * h_max {
                    let mid = 0.5 * (lo + hi);
                    if peak(mid) < t {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                0.5 * (lo + hi)
            })
            .collect()
    }
}

/// `E_h[g(σ/h)]`; the gain axis is split where `σ/h` meets `breaks`.
fn gain_expectation<F: FnMut(f64) -> Result<f64>>(
    dist: &FadingDistribution,
    sigma: f64,
    breaks: &[f64],
    cfg: QuadConfig,
    mut g: F,
) -> Result<f64> {
    let hi = dist.gain_limit();
    let mut pts = vec![0.0, dist.sigma_h, hi];
    if dist.s > 0.0 {
        pts.push(dist.s);
    }
    for &b in breaks {
        let h = sigma / b;
        if h > 0.0 && h < hi {
            pts.push(h);
        }
    }
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    let mut failure = None;
    let est = crate::numeric::integrate_pieces(
        |h| {
            if h <= 0.0 {
                return 0.0;
            }
            let ph = dist.density(h);
            if ph == 0.0 {
                return 0.0;
            }
            match g(sigma / h) {
                Ok(v) => ph * v,
                Err(e) => {
                    failure.get_or_insert(e);
                    0.0
                }
            }
        },
        &pts,
        cfg,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(est?.value)
}

/// `E_h[C(Λ_{ℓ−1}/Λ_ℓ, σ²/h²)]` by nested quadrature.
pub fn level_capacity_direct(lc: &LevelFadingChannel) -> Result<f64> {
    let d = lc.spacing();
    gain_expectation(&lc.dist, lc.sigma, &[0.1 * d, 0.3 * d, d, 3.0 * d], OUTER, |s| {
        binary_partition_capacity(s, d, INNER)
    })
}

/// Capacity of the level channel through the quantizer.
pub fn level_capacity_quantized(lc: &LevelFadingChannel, params: QuantizerParams) -> Result<(f64, DiscreteBmsc)> {
    let ch = quantize_level_channel(lc, params)?;
    Ok((ch.capacity(), ch))
}

pub fn quantize_level_channel(lc: &LevelFadingChannel, params: QuantizerParams) -> Result<DiscreteBmsc> {
    quantize_by_llr(lc, params, GainDomain::Faded(lc.dist))
}

/// Level capacity by direct quadrature, cross-checked against the
/// quantized channel: the two must satisfy `0 ≤ C − C_Q ≤ 1/Q` up to `tol`.
pub fn level_capacity(lc: &LevelFadingChannel, params: QuantizerParams, tol: f64) -> Result<f64> {
    let direct = level_capacity_direct(lc)?;
    let (quantized, _) = level_capacity_quantized(lc, params)?;
    let gap = direct - quantized;
    if gap < -tol || gap > 1.0 / params.q as f64 + tol {
        return Err(Error::Numerical { what: "level capacity cross-check", requested: direct, achieved: quantized });
    }
    Ok(direct)
}

/// `C_H(vℤ, σ²) = E_h[log2 v − 𝔥(vℤ, σ²/h²)]`.
pub fn mod_capacity(v: f64, dist: &FadingDistribution, sigma: f64) -> Result<f64> {
    ensure_positive("scale", v)?;
    ensure_positive("sigma", sigma)?;
    gain_expectation(dist, sigma, &[0.1 * v, 0.3 * v, v, 3.0 * v], OUTER, |s| mod_channel_capacity(s, v, INNER))
}

/// Fading mod-lattice capacity at a single gain.
pub fn mod_capacity_at_gain(v: f64, sigma: f64, h: f64) -> Result<f64> {
    mod_channel_capacity(sigma / h, v, INNER)
}

/// `C_H(Λ/Λ′)` as the difference of the two mod-lattice capacities.
pub fn partition_capacity(chain: &PartitionChain, dist: &FadingDistribution, sigma: f64) -> Result<f64> {
    Ok(mod_capacity(chain.bottom_scale(), dist, sigma)? - mod_capacity(chain.top_scale, dist, sigma)?)
}

/// `E_h[½ log2(2πe σ²/h²) − 𝔥(vℤ, σ²/h²)]`, nonnegative.
pub fn entropy_gap_expectation(v: f64, dist: &FadingDistribution, sigma: f64) -> Result<f64> {
    gain_expectation(dist, sigma, &[0.1 * v, 0.3 * v, v], OUTER, |s| aliasing_entropy_gap(s, v, INNER))
}

/// `E_h[½ log2(2πe σ²/h²)]`: closed form for Rayleigh, quadrature otherwise.
pub fn expected_gaussian_entropy(dist: &FadingDistribution, sigma: f64) -> Result<f64> {
    match dist.kind {
        FadingKind::Rayleigh => {
            Ok(0.5 * (2.0 * PI * E * sigma * sigma * EULER_GAMMA.exp() / (2.0 * dist.sigma_h * dist.sigma_h)).log2())
        }
        FadingKind::Rician => dist.expectation(
            |h| 0.5 * (2.0 * PI * E * sigma * sigma / (h * h)).log2(),
            QuadConfig::new(1e-13, 1e-13),
        ),
    }
}

/// Probability that Gaussian noise of deviation `s` leaves the Voronoi
/// cell of `vℤ`: `2Q(v/(2s))`.
pub fn uncoded_error(v: f64, s: f64) -> f64 {
    2.0 * q_function(v / (2.0 * s))
}

/// Exact uncoded error expectation and the two-term bound at `h_s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UncodedError {
    pub exact: f64,
    pub bound: f64,
}

/// `E_h[P_e(Λ′, σ²/h²)]` and `P(H < h_s) + P_e(Λ′, σ²/h_s²)·P(H ≥ h_s)`.
pub fn uncoded_error_expectation(v: f64, dist: &FadingDistribution, sigma: f64, h_s: f64) -> Result<UncodedError> {
    ensure_positive("scale", v)?;
    if sigma == 0.0 {
        return Ok(UncodedError { exact: 0.0, bound: dist.cdf(h_s) });
    }
    ensure_positive("sigma", sigma)?;
    let exact = gain_expectation(dist, sigma, &[0.05 * v, 0.2 * v, v], QuadConfig::new(1e-14, 1e-11), |s| {
        Ok(uncoded_error(v, s))
    })?;
    let below = dist.cdf(h_s);
    let at = if h_s > 0.0 { uncoded_error(v, sigma / h_s) } else { 1.0 };
    let bound = below + at * (1.0 - below);
    if exact > bound * (1.0 + 1e-9) + 1e-15 {
        return Err(Error::Numerical { what: "uncoded error bound", requested: bound, achieved: exact });
    }
    Ok(UncodedError { exact, bound })
}

/// Outcome of [`design_chain`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainDesign {
    pub chain: PartitionChain,
    /// Smallest admissible bottom scale before rounding `r` up.
    pub bottom_scale_min: f64,
    /// `C(Λ, σ²/h_l²)` at the chosen top scale.
    pub eps1_at_h_l: f64,
    /// `P_e(Λ′, σ²/h_s²)` at the chosen bottom scale.
    pub pe_at_h_s: f64,
    /// `C_H(Λ, σ²)` over the full gain law.
    pub eps1: f64,
    pub uncoded: UncodedError,
}

/// Picks `h_l = N`, `h_s = N^{−δ}`, the largest top scale with
/// `C(Λ, σ²/h_l²) ≤ eps1_target` and the smallest bottom scale with
/// `P_e(Λ′, σ²/h_s²) ≤ pe_target`, then `r = ⌈log2(V(Λ′)/V(Λ))⌉`.
pub fn design_chain(
    dist: &FadingDistribution,
    sigma: f64,
    n: usize,
    delta: f64,
    eps1_target: f64,
    pe_target: f64,
) -> Result<ChainDesign> {
    ensure_positive("sigma", sigma)?;
    if n < 2 || !n.is_power_of_two() {
        return Err(Error::Domain(format!("N = {n} is not a power of two >= 2")));
    }
    if !(delta > 0.0) {
        return Err(Error::Domain(format!("delta must be > 0, got {delta}")));
    }
    if !(eps1_target > 0.0 && eps1_target < 1.0) || !(pe_target > 0.0 && pe_target < 1.0) {
        return Err(Error::Design(format!("targets eps1={eps1_target}, pe={pe_target} must lie in (0, 1)")));
    }
    let h_l = n as f64;
    let h_s = (n as f64).powf(-delta);
    let (lo, hi) = (1e-12, 1e12);
    let cap = |v: f64| mod_capacity_at_gain(v, sigma, h_l);
    // capacity grows with the scale
    if cap(lo)? > eps1_target {
        return Err(Error::Design(format!("top scale: capacity {:e} at the smallest scale exceeds target", cap(lo)?)));
    }
    let top = bisect(lo, hi, |v| Ok(cap(v)? <= eps1_target))?;
    let pe = |v: f64| uncoded_error(v, sigma / h_s);
    if pe(hi) > pe_target {
        return Err(Error::Design(format!("bottom scale: error {:e} at the largest scale exceeds target", pe(hi))));
    }
    // error falls with the scale; find the smallest admissible scale
    let bottom_min = bisect(lo, hi, |v| Ok(pe(v) > pe_target))?;
    let bottom_min = bottom_min * (1.0 + SCALE_TOL);
    let r = (bottom_min / top).log2().ceil().max(1.0) as usize;
    let chain = PartitionChain { top_scale: top, r, h_l, h_s, delta };
    Ok(ChainDesign {
        chain,
        bottom_scale_min: bottom_min,
        eps1_at_h_l: cap(top)?,
        pe_at_h_s: pe(chain.bottom_scale()),
        eps1: mod_capacity(top, dist, sigma)?,
        uncoded: uncoded_error_expectation(chain.bottom_scale(), dist, sigma, h_s)?,
    })
}

/// Largest `x` in `[lo, hi]` (geometric bisection) with `ok(x)`, given
/// `ok(lo)` and monotonicity.
fn bisect<F: FnMut(f64) -> Result<bool>>(mut lo: f64, mut hi: f64, mut ok: F) -> Result<f64> {
    while hi / lo > 1.0 + SCALE_TOL {
        let mid = (lo * hi).sqrt();
        if ok(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Level capacities `ℓ = 1..=r`, computed in parallel.
pub fn level_capacities(chain: &PartitionChain, dist: &FadingDistribution, sigma: f64) -> Result<Vec<f64>> {
    use rayon::prelude::*;
    (1..=chain.r)
        .into_par_iter()
        .map(|l| level_capacity_direct(&chain.level(l, *dist, sigma)?))
        .collect()
}

/// Fading capacity in bits at a fixed gain of the `vℤ/2vℤ` channel.
pub fn level_capacity_at_gain(d: f64, sigma: f64, h: f64) -> Result<f64> {
    binary_partition_capacity(sigma / h, d, INNER)
}

/// `E_h[log2 h]` helper used by asymptotic sanity checks.
pub fn expected_log2_gain(dist: &FadingDistribution) -> Result<f64> {
    match dist.kind {
        FadingKind::Rayleigh => Ok(0.5 * (2.0 * dist.sigma_h * dist.sigma_h).log2() - EULER_GAMMA / (2.0 * LN_2)),
        FadingKind::Rician => dist.expectation(|h| h.log2(), QuadConfig::new(1e-13, 1e-13)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::integrate_pieces;
    use rand::{Rng, SeedableRng};

    #[test]
    fn integer_chain_meets_default_targets() {
        let chain = PartitionChain::new(1.0, 4).unwrap();
        assert!(chain.satisfies(&fig8_dist(), 1.0, DEFAULT_EPS1_TARGET, DEFAULT_PE_TARGET).unwrap());
        let coarse = PartitionChain::new(1.0, 3).unwrap();
        assert!(!coarse.satisfies(&fig8_dist(), 1.0, DEFAULT_EPS1_TARGET, DEFAULT_PE_TARGET).unwrap());
    }

    fn fig8_dist() -> FadingDistribution {
        FadingDistribution::rayleigh(1.2575).unwrap()
    }

    #[test]
    fn mod_pdf_integrates_to_one() {
        let d = fig8_dist();
        let v = 1.0;
        let total = d
            .expectation(
                |h| {
                    integrate_pieces(|y| aliased_gaussian(y - 0.3, 1.0 / h, v), &[0.0, 0.3, v], QuadConfig::new(1e-12, 1e-12))
                        .unwrap()
                        .value
                },
                QuadConfig::new(1e-10, 1e-10),
            )
            .unwrap();
        assert!((total - 1.0).abs() < 1e-6);
    }

    #[test]
    fn mod_pdf_factorizes_and_flattens() {
        let d = fig8_dist();
        let p = mod_fading_pdf(2.0, &d, 1.0, 0.4, 1.5, 1.1);
        assert!((p - d.density(1.5) * aliased_gaussian(0.4 - 1.1, 1.0 / 1.5, 2.0)).abs() < 1e-12);
        let h = 0.01;
        let flat = mod_fading_pdf(1.0, &d, 1.0, 0.2, h, 0.7);
        assert!((flat / (d.density(h) / 1.0) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn level_channel_symmetry() {
        let chain = PartitionChain::new(1.0, 4).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        for l in 1..=4 {
            let lc = chain.level(l, fig8_dist(), 1.0).unwrap();
            let p = 2.0 * lc.spacing();
            for _ in 0..50 {
                let y: f64 = rng.random_range(0.0..p);
                let h: f64 = rng.random_range(0.01..6.0);
                let a = level_channel_pdf(&lc, 0, y, h);
                let b = level_channel_pdf(&lc, 1, lc.conjugate(y), h);
                assert!((a - b).abs() <= 1e-14 * a.max(1e-300), "{a} {b}");
            }
        }
    }

    #[test]
    fn level_capacity_limits() {
        let d = fig8_dist();
        let wide = PartitionChain::new(200.0, 1).unwrap().level(1, d, 1e-3).unwrap();
        assert!((level_capacity_direct(&wide).unwrap() - 1.0).abs() < 1e-6);
        let narrow = PartitionChain::new(1e-4, 1).unwrap().level(1, d, 1.0).unwrap();
        assert!(level_capacity_direct(&narrow).unwrap() < 1e-3);
    }

    #[test]
    fn chain_rule_telescopes() {
        let d = fig8_dist();
        let chain = PartitionChain::new(1.0, 4).unwrap();
        let sum: f64 = level_capacities(&chain, &d, 1.0).unwrap().iter().sum();
        let total = partition_capacity(&chain, &d, 1.0).unwrap();
        assert!((sum - total).abs() < 1e-4, "{sum} vs {total}");
    }

    #[test]
    fn levels_strictly_degrade_upward() {
        let d = fig8_dist();
        let caps = level_capacities(&PartitionChain::new(0.5, 5).unwrap(), &d, 1.0).unwrap();
        for w in caps.windows(2) {
            assert!(w[1] > w[0], "{caps:?}");
        }
    }

    #[test]
    fn mod_capacity_limits_and_monotonicity() {
        let d = fig8_dist();
        assert!(mod_capacity(1e-6, &d, 1.0).unwrap() < 1e-6);
        let c: Vec<f64> = [0.5, 1.0, 2.0].iter().map(|&s| mod_capacity(2.0, &d, s).unwrap()).collect();
        assert!(c[0] > c[1] && c[1] > c[2]);
    }

    /// Large scale: capacity ≈ log2 v − E[½ log2(2πe σ²/h²)] once the
    /// wrap-around is negligible, estimated by Monte Carlo over the gain.
    #[test]
    fn mod_capacity_large_scale_monte_carlo() {
        let d = fig8_dist();
        let v = 64.0;
        let c = mod_capacity(v, &d, 1.0).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let draws = 200_000;
        let mc: f64 = (0..draws)
            .map(|_| {
                let h = d.sample(&mut rng);
                (v.log2() - 0.5 * (2.0 * PI * E / (h * h)).log2()).max(0.0).min(v.log2() + 40.0)
            })
            .sum::<f64>()
            / draws as f64;
        assert!((c - mc).abs() < 0.01, "{c} vs {mc}");
    }

    #[test]
    fn uncoded_error_matches_rayleigh_closed_form() {
        let d = fig8_dist();
        for &v in &[1.0, 4.0, 16.0, 50.0] {
            let a = v / 2.0;
            let closed = 1.0 - a * d.sigma_h / (1.0 + a * a * d.sigma_h * d.sigma_h).sqrt();
            let u = uncoded_error_expectation(v, &d, 1.0, 0.1).unwrap();
            assert!((u.exact / closed - 1.0).abs() < 1e-8, "v={v}: {} vs {closed}", u.exact);
        }
    }

    #[test]
    fn uncoded_error_limits() {
        let d = fig8_dist();
        assert!(uncoded_error_expectation(1e9, &d, 1.0, 0.1).unwrap().exact < 1e-9);
        assert!(uncoded_error_expectation(4.0, &d, 1e-11, 0.1).unwrap().exact < 1e-9);
    }

    #[test]
    fn uncoded_error_below_bound_on_grid() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..30 {
            let d = FadingDistribution::rayleigh(rng.random_range(0.3..3.0)).unwrap();
            let v = rng.random_range(0.5..100.0);
            let s = rng.random_range(0.1..3.0);
            let hs = rng.random_range(0.0..2.0);
            let u = uncoded_error_expectation(v, &d, s, hs).unwrap();
            assert!(u.exact <= u.bound);
        }
    }

    #[test]
    fn design_monotone_in_eps1() {
        let d = fig8_dist();
        let a = design_chain(&d, 1.0, 1 << 10, 0.5, 1e-2, 1e-3).unwrap();
        let b = design_chain(&d, 1.0, 1 << 10, 0.5, 1e-3, 1e-3).unwrap();
        assert!(b.chain.top_scale < a.chain.top_scale);
        assert!(a.eps1_at_h_l <= 1e-2 && a.pe_at_h_s <= 1e-3);
        assert!(a.chain.bottom_scale() >= a.bottom_scale_min);
    }

    #[test]
    fn design_level_count_grows_with_n() {
        let d = fig8_dist();
        let delta = 0.5;
        let rs: Vec<f64> = [10, 11, 12]
            .iter()
            .map(|&m| design_chain(&d, 1.0, 1 << m, delta, 1e-2, 1e-3).unwrap())
            .map(|c| (c.bottom_scale_min / c.chain.top_scale).log2())
            .collect();
        for w in rs.windows(2) {
            assert!(((w[1] - w[0]) - (1.0 + delta)).abs() < 1e-3, "{rs:?}");
        }
    }

    #[test]
    fn design_rejects_bad_targets() {
        let d = fig8_dist();
        assert!(matches!(design_chain(&d, 1.0, 1 << 10, 0.5, 0.0, 1e-3), Err(Error::Design(_))));
        assert!(design_chain(&d, 1.0, 1000, 0.5, 1e-2, 1e-3).is_err());
    }
}
