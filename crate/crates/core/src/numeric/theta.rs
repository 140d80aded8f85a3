//! Periodized ("aliased") Gaussian densities over one-dimensional lattices
//! `v·ℤ`, and the information quantities built from them.
//!
//! For narrow noise the direct lattice sum is used, truncated at twelve
//! standard deviations; for wide noise the Poisson-dual cosine series is
//! used instead, which converges in a handful of terms.

use std::f64::consts::{LN_2, PI};

use super::quad::{integrate_pieces, QuadConfig};
use super::special::softplus;
use crate::error::Result;

/// Ratio `s / v` above which the dual (Fourier) series is used.
const DUAL_SWITCH: f64 = 0.6;

/// Deviations kept in direct lattice sums.
pub const THETA_DEVIATIONS: f64 = 12.0;

fn reduce(u: f64, v: f64) -> f64 {
    u - v * (u / v).round()
}

/// `ln f_{s, vℤ}(u)` where `f_{s,Λ}(u) = Σ_{λ∈Λ} φ_s(u - λ)`.
pub fn ln_aliased_gaussian(u: f64, s: f64, v: f64) -> f64 {
    let u0 = reduce(u, v);
    let rho = s / v;
    if rho <= DUAL_SWITCH {
        let k_max = (THETA_DEVIATIONS * rho).ceil() as i64 + 1;
        let inv = 1.0 / (2.0 * s * s);
        let lead = -u0 * u0 * inv;
        let mut acc = 0.0;
        for k in -k_max..=k_max {
            let d = u0 + k as f64 * v;
            acc += (-d * d * inv - lead).exp();
        }
        lead + acc.ln() - (s * (2.0 * PI).sqrt()).ln()
    } else {
        let a = 2.0 * PI * PI * rho * rho;
        let mut acc = 1.0;
        let mut k = 1.0f64;
        loop {
            let w = (-a * k * k).exp();
            if w < 1e-18 {
                break;
            }
            acc += 2.0 * w * (2.0 * PI * k * u0 / v).cos();
            k += 1.0;
        }
        acc.ln() - v.ln()
    }
}

/// `f_{s, vℤ}(u)`.
pub fn aliased_gaussian(u: f64, s: f64, v: f64) -> f64 {
    ln_aliased_gaussian(u, s, v).exp()
}

/// Half-width of the region around the origin that carries essentially all
/// of the aliased mass, capped at half a period.
fn support_half_width(s: f64, v: f64) -> f64 {
    (0.5 * v).min(14.0 * s)
}

fn breakpoints(w: f64, extra: &[f64]) -> Vec<f64> {
    let mut pts = vec![-w, 0.0, w];
    for &e in extra {
        if e > -w && e < w {
            pts.push(e);
        }
    }
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    pts
}

/// Capacity in bits of the mod-`vℤ` Gaussian channel with noise deviation `s`:
/// `log2 v − h(vℤ, s²) = ∫ f log2(v f)` over a fundamental region.
pub fn mod_channel_capacity(s: f64, v: f64, cfg: QuadConfig) -> Result<f64> {
    let rho = s / v;
    if rho > 4.0 {
        // Deviation from uniform below 1e-130.
        return Ok(0.0);
    }
    let w = support_half_width(s, v);
    let ln_v = v.ln();
    let integrand = |u: f64| {
        let lf = ln_aliased_gaussian(u, s, v);
        let f = lf.exp();
        if f == 0.0 {
            0.0
        } else {
            f * (lf + ln_v) / LN_2
        }
    };
    let pts = breakpoints(w, &[-0.5 * w, 0.5 * w]);
    let est = integrate_pieces(integrand, &pts, cfg)?;
    Ok(est.value.max(0.0))
}

/// Differential entropy (bits) of the `vℤ`-aliased Gaussian of deviation `s`
/// over a fundamental region.
pub fn aliased_entropy(s: f64, v: f64, cfg: QuadConfig) -> Result<f64> {
    Ok(v.log2() - mod_channel_capacity(s, v, cfg)?)
}

/// Gap `½ log2(2πe s²) − h(vℤ, s²)` between the entropy of an unaliased and
/// an aliased Gaussian; nonnegative.
pub fn aliasing_entropy_gap(s: f64, v: f64, cfg: QuadConfig) -> Result<f64> {
    let gauss = 0.5 * (2.0 * PI * std::f64::consts::E * s * s).log2();
    let rho = s / v;
    if rho < 0.05 {
        // Mass outside the fundamental region is below e^{-50}.
        let w = 0.5 * v;
        let tail = 2.0 * super::special::normal_sf(w / s);
        if tail < 1e-300 {
            return Ok(0.0);
        }
    }
    let h = aliased_entropy(s, v, cfg)?;
    Ok((gauss - h).max(0.0))
}

/// Capacity in bits of the binary partition channel `vℤ / 2vℤ` with noise
/// deviation `s`. Input bit `b` selects the coset `b·v`; the output is
/// reduced modulo `2v`.
pub fn binary_partition_capacity(s: f64, v: f64, cfg: QuadConfig) -> Result<f64> {
    let rho = s / v;
    if rho > 3.0 {
        return Ok(0.0);
    }
    let period = 2.0 * v;
    let w = (0.5 * period).min(14.0 * s);
    let integrand = |u: f64| {
        let l0 = ln_aliased_gaussian(u, s, period);
        let l1 = ln_aliased_gaussian(u - v, s, period);
        let f0 = l0.exp();
        if f0 == 0.0 {
            return 0.0;
        }
        // log2(2 f0 / (f0 + f1)) = 1 − log2(1 + e^{l1 − l0})
        f0 * (1.0 - softplus(l1 - l0) / LN_2)
    };
    let pts = breakpoints(w, &[-0.5 * v, 0.5 * v]);
    let est = integrate_pieces(integrand, &pts, cfg)?;
    Ok(est.value.clamp(0.0, 1.0))
}

/// Flatness factor of `vℤ` at deviation `s`:
/// `max_x |v f_{s,vℤ}(x) − 1|`, attained at `x = 0` or `x = v/2`.
///
/// In the wide-noise regime the deviation is summed from the dual series
/// directly, so values far below machine epsilon keep their accuracy.
pub fn flatness_factor(v: f64, s: f64) -> f64 {
    let rho = s / v;
    if rho > DUAL_SWITCH {
        let a = 2.0 * PI * PI * rho * rho;
        let (mut even, mut alt) = (0.0, 0.0);
        let mut k = 1.0f64;
        loop {
            let w = (-a * k * k).exp();
            if w == 0.0 || w < 1e-18 * even {
                break;
            }
            even += 2.0 * w;
            alt += if k as u64 % 2 == 0 { 2.0 * w } else { -2.0 * w };
            k += 1.0;
        }
        return even.max(alt.abs());
    }
    let at_zero = (v * aliased_gaussian(0.0, s, v) - 1.0).abs();
    let at_half = (v * aliased_gaussian(0.5 * v, s, v) - 1.0).abs();
    at_zero.max(at_half)
}
