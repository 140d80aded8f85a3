//! Special functions used by the capacity and density code.

use std::f64::consts::{LN_2, PI, SQRT_2};

use libm::erfc;

/// Euler–Mascheroni constant.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Binary entropy in bits, with `0 log 0 = 0`.
pub fn binary_entropy(p: f64) -> f64 {
    if p <= 0.0 || p >= 1.0 {
        return 0.0;
    }
    -(p * p.log2() + (1.0 - p) * (1.0 - p).log2())
}

/// Inverse of the binary entropy restricted to `[0, 1/2]`.
///
/// Returns `None` when `y` lies outside `[0, 1]`.
pub fn binary_entropy_inv(y: f64) -> Option<f64> {
    if !(0.0..=1.0).contains(&y) || y.is_nan() {
        return None;
    }
    if y == 0.0 {
        return Some(0.0);
    }
    if y == 1.0 {
        return Some(0.5);
    }
    let (mut lo, mut hi) = (0.0f64, 0.5f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if binary_entropy(mid) < y {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Capacity of a BSC whose log-likelihood ratio (natural log) is `llr`:
/// `1 - h2(1 / (1 + e^{|llr|}))`.
pub fn bsc_capacity_from_llr(llr: f64) -> f64 {
    let l = llr.abs();
    if l.is_infinite() {
        return 1.0;
    }
    // p = 1/(1+e^l), 1-p = 1/(1+e^{-l})
    let ln_p = -softplus(l);
    let ln_q = -softplus(-l);
    let p = ln_p.exp();
    let q = ln_q.exp();
    1.0 + (p * ln_p + q * ln_q) / LN_2
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `ln(e^a + e^b)`.
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// `ln Σ e^{x_i}` over an iterator.
pub fn log_sum_exp<I: IntoIterator<Item = f64>>(xs: I) -> f64 {
    let v: Vec<f64> = xs.into_iter().collect();
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Standard normal upper tail `P(Z > x)`.
pub fn normal_sf(x: f64) -> f64 {
    if x == f64::INFINITY {
        0.0
    } else if x == f64::NEG_INFINITY {
        1.0
    } else {
        0.5 * erfc(x / SQRT_2)
    }
}

/// `P(a <= X < b)` for `X ~ N(mean, sd^2)`, evaluated on whichever tail keeps
/// full relative precision.
pub fn normal_interval(mean: f64, sd: f64, a: f64, b: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let ta = (a - mean) / sd;
    let tb = (b - mean) / sd;
    if ta >= 0.0 {
        normal_sf(ta) - normal_sf(tb)
    } else if tb <= 0.0 {
        normal_sf(-tb) - normal_sf(-ta)
    } else {
        1.0 - normal_sf(tb) - normal_sf(-ta)
    }
}

/// Gaussian Q-function.
pub fn q_function(x: f64) -> f64 {
    normal_sf(x)
}

/// Exponentially scaled modified Bessel function `e^{-x} I_0(x)` for `x >= 0`.
pub fn bessel_i0e(x: f64) -> f64 {
    let x = x.abs();
    if x <= 20.0 {
        let q = 0.25 * x * x;
        let mut term = 1.0;
        let mut sum = 1.0;
        let mut k = 1.0;
        loop {
            term *= q / (k * k);
            sum += term;
            if term < 1e-17 * sum {
                break;
            }
            k += 1.0;
        }
        sum * (-x).exp()
    } else {
        let mut term = 1.0;
        let mut sum = 1.0;
        let mut k = 1.0f64;
        loop {
            let next = term * (2.0 * k - 1.0).powi(2) / (k * 8.0 * x);
            if next >= term || next < 1e-17 * sum {
                break;
            }
            term = next;
            sum += term;
            k += 1.0;
        }
        sum / (2.0 * PI * x).sqrt()
    }
}

/// `e^x E_1(x)` for `x > 0`: power series below 1, continued fraction above.
pub fn exp_e1(x: f64) -> f64 {
    assert!(x > 0.0, "exp_e1 requires x > 0");
    if x < 1.0 {
        let mut sum = 0.0;
        let mut term = 1.0;
        let mut k = 1.0;
        loop {
            term *= -x / k;
            let add = term / k;
            sum += add;
            if add.abs() < 1e-17 * sum.abs().max(1e-300) {
                break;
            }
            k += 1.0;
        }
        x.exp() * (-EULER_GAMMA - x.ln() - sum)
    } else {
        // Modified Lentz evaluation of 1/(x+1- 1/(x+3- 4/(x+5- ...))).
        let tiny = 1e-300;
        let mut b = x + 1.0;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..10_000 {
            let an = -((i * i) as f64);
            b += 2.0;
            d = 1.0 / (an * d + b);
            c = b + an / c;
            let del = c * d;
            h *= del;
            if (del - 1.0).abs() < 1e-16 {
                break;
            }
        }
        h
    }
}

/// Exponential integral `E_1(x)`.
pub fn e1(x: f64) -> f64 {
    exp_e1(x) * (-x).exp()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entropy_inverse_round_trip() {
        for &y in &[1e-6, 0.01, 0.3, 0.5, 0.9, 0.999999] {
            let p = binary_entropy_inv(y).unwrap();
            assert!((binary_entropy(p) - y).abs() < 1e-13, "y={y}");
        }
        assert_eq!(binary_entropy_inv(1.0), Some(0.5));
        assert_eq!(binary_entropy_inv(0.0), Some(0.0));
        assert_eq!(binary_entropy_inv(1.5), None);
    }

    #[test]
    fn bsc_capacity_matches_entropy() {
        let p: f64 = 0.11;
        let llr = ((1.0 - p) / p).ln();
        assert!((bsc_capacity_from_llr(llr) - (1.0 - binary_entropy(p))).abs() < 1e-14);
        assert_eq!(bsc_capacity_from_llr(f64::INFINITY), 1.0);
        assert!(bsc_capacity_from_llr(0.0).abs() < 1e-15);
        assert!((bsc_capacity_from_llr(800.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn i0e_reference_values() {
        // I0(1) = 1.2660658777520082, I0(30) = 7.816722978239774e11
        assert!((bessel_i0e(1.0) * 1f64.exp() - 1.266_065_877_752_008_2).abs() < 1e-14);
        let v = bessel_i0e(30.0) * 30f64.exp();
        assert!((v / 7.816_722_978_239_774e11 - 1.0).abs() < 1e-12);
        // both branches agree at the switch point
        let below = bessel_i0e(20.0);
        let above = bessel_i0e(20.0 + 1e-12);
        assert!((below / above - 1.0).abs() < 1e-12);
    }

    #[test]
    fn e1_reference_values() {
        // E1(0.5) = 0.5597735947761608, E1(1) = 0.21938393439552029, E1(5) = 0.001148295591275326
        assert!((e1(0.5) - 0.559_773_594_776_160_8).abs() < 1e-14);
        assert!((e1(1.0) - 0.219_383_934_395_520_3).abs() < 1e-14);
        assert!((e1(5.0) / 0.001_148_295_591_275_326 - 1.0).abs() < 1e-12);
        // continuity across the branch switch
        assert!((exp_e1(1.0 - 1e-12) / exp_e1(1.0) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn normal_interval_tails() {
        assert!((normal_interval(0.0, 1.0, f64::NEG_INFINITY, f64::INFINITY) - 1.0).abs() < 1e-15);
        let far = normal_interval(0.0, 1.0, 30.0, f64::INFINITY);
        assert!(far > 0.0 && far < 1e-190);
        assert!((normal_interval(1.0, 2.0, -1.0, 3.0) - 0.682_689_492_137_085_9).abs() < 1e-12);
    }
}
