//! Polar encoding, channel LLRs, successive cancellation decoding and
//! single-link Monte Carlo simulation.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::construction::PolarCodeSpec;
use crate::error::{Error, Result};
use crate::fading::{CdiDensity, CsiMode, FadingChannelSpec};
use crate::stats::{fmt_sig, wilson_interval, Z95};

/// Per-trial generator: stream `trial` of the ChaCha generator keyed by `seed`.
pub fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

/// In-place `x = u · F^{⊗m}` over GF(2).
pub fn polar_transform(x: &mut [u8]) {
    let n = x.len();
    assert!(n.is_power_of_two(), "length must be a power of two");
    let mut half = 1;
    while half < n {
        for block in (0..n).step_by(2 * half) {
            for j in block..block + half {
                x[j] ^= x[j + half];
            }
        }
        half *= 2;
    }
}

/// `u · F^{⊗m}` with integer addition; reduces mod 2 to [`polar_transform`].
pub fn polar_transform_int(u: &[i64]) -> Vec<i64> {
    let n = u.len();
    assert!(n.is_power_of_two(), "length must be a power of two");
    let mut x = u.to_vec();
    let mut half = 1;
    while half < n {
        for block in (0..n).step_by(2 * half) {
            for j in block..block + half {
                x[j] += x[j + half];
            }
        }
        half *= 2;
    }
    x
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrozenFill {
    Zeros,
    SeededRandom(u64),
}

impl FrozenFill {
    /// Values for the frozen positions, in increasing index order.
    pub fn values(&self, count: usize) -> Vec<u8> {
        match *self {
            FrozenFill::Zeros => vec![0; count],
            FrozenFill::SeededRandom(seed) => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                (0..count).map(|_| (rng.next_u32() & 1) as u8).collect()
            }
        }
    }
}

/// One encoded block.
#[derive(Debug, Clone, PartialEq)]
pub struct CodewordFrame {
    pub u: Vec<u8>,
    pub x_bits: Vec<u8>,
    /// BPSK symbols, bit 0 ↦ +1.
    pub x: Vec<f64>,
    pub frozen_fill: FrozenFill,
}

/// Places `info_bits` and the frozen fill into `u`.
pub fn assemble_u(spec: &PolarCodeSpec, info_bits: &[u8], fill: FrozenFill) -> Result<Vec<u8>> {
    let k = spec.info_len();
    if info_bits.len() != k {
        return Err(Error::Contract(format!("expected {k} information bits, got {}", info_bits.len())));
    }
    let frozen_vals = fill.values(spec.n() - k);
    let (mut a, mut b) = (0, 0);
    Ok(spec
        .frozen
        .iter()
        .map(|&f| {
            if f {
                b += 1;
                frozen_vals[b - 1]
            } else {
                a += 1;
                info_bits[a - 1] & 1
            }
        })
        .collect())
}

pub fn encode(spec: &PolarCodeSpec, info_bits: &[u8], fill: FrozenFill) -> Result<CodewordFrame> {
    let u = assemble_u(spec, info_bits, fill)?;
    let mut x_bits = u.clone();
    polar_transform(&mut x_bits);
    let x = x_bits.iter().map(|&b| if b == 0 { 1.0 } else { -1.0 }).collect();
    Ok(CodewordFrame { u, x_bits, x, frozen_fill: fill })
}

/// `2yh/σ²`; with `σ = 0` the sign of `yh` at infinite magnitude.
pub fn llr_csi(ch: &FadingChannelSpec, y: f64, h: f64) -> Result<f64> {
    if ch.csi != CsiMode::ReceiverCsi {
        return Err(Error::Contract("llr_csi requires receiver CSI".into()));
    }
    Ok(raw_llr_csi(ch.sigma, y, h))
}

fn raw_llr_csi(sigma: f64, y: f64, h: f64) -> f64 {
    if sigma == 0.0 {
        let s = y * h;
        return if s > 0.0 {
            f64::INFINITY
        } else if s < 0.0 {
            f64::NEG_INFINITY
        } else {
            0.0
        };
    }
    2.0 * y * h / (sigma * sigma)
}

/// Tabulated CDI log-likelihood ratio `ln P(y|+1)/P(y|−1)`.
///
/// Stored on a uniform grid over `[0, y_max]`, extended as an odd function,
/// and interpolated by cubic Hermite segments with fourth-order
/// finite-difference slopes.
#[derive(Debug, Clone)]
pub struct CdiLlrTable {
    step: f64,
    values: Vec<f64>,
    slopes: Vec<f64>,
    y_max: f64,
}

impl CdiLlrTable {
    pub const DEFAULT_STEP: f64 = 0.01;

    pub fn new(ch: &FadingChannelSpec, step: f64) -> Result<Self> {
        if ch.csi != CsiMode::CdiOnly {
            return Err(Error::Contract("CDI table requires CDI mode".into()));
        }
        let dens = CdiDensity::new(ch)?;
        let y_max = dens.output_limit();
        let n = (y_max / step).ceil() as usize;
        // two guard points each side for the slope stencil
        let raw: Vec<f64> = (0..n + 3)
            .into_par_iter()
            .map(|k| dens.llr(k as f64 * step))
            .collect::<Result<_>>()?;
        let at = |i: isize| -> f64 {
            if i < 0 {
                -raw[(-i) as usize]
            } else {
                raw[i as usize]
            }
        };
        let values: Vec<f64> = raw[..=n].to_vec();
        let slopes = (0..=n as isize)
            .map(|i| (at(i - 2) - 8.0 * at(i - 1) + 8.0 * at(i + 1) - at(i + 2)) / (12.0 * step))
            .collect();
        Ok(Self { step, values, slopes, y_max: n as f64 * step })
    }

    pub fn y_max(&self) -> f64 {
        self.y_max
    }

    /// Interpolated LLR and whether `|y|` was clamped to the table range.
    pub fn llr(&self, y: f64) -> (f64, bool) {
        let a = y.abs();
        let (v, sat) = if a >= self.y_max {
            (*self.values.last().unwrap_or(&0.0), a > self.y_max)
        } else {
            let t = a / self.step;
            let i = (t.floor() as usize).min(self.values.len() - 2);
            let s = t - i as f64;
            let (p0, p1) = (self.values[i], self.values[i + 1]);
            let (m0, m1) = (self.slopes[i] * self.step, self.slopes[i + 1] * self.step);
            let s2 = s * s;
            let s3 = s2 * s;
            let v = (2.0 * s3 - 3.0 * s2 + 1.0) * p0
                + (s3 - 2.0 * s2 + s) * m0
                + (-2.0 * s3 + 3.0 * s2) * p1
                + (s3 - s2) * m1;
            (v, false)
        };
        (if y < 0.0 { -v } else { v }, sat)
    }
}

/// `llr_cdi` through a table; see [`CdiLlrTable`].
pub fn llr_cdi(table: &CdiLlrTable, y: f64) -> (f64, bool) {
    table.llr(y)
}

/// Check-node update `2 atanh(tanh(a/2) tanh(b/2))` in a stable form.
#[inline]
pub fn f_exact(a: f64, b: f64) -> f64 {
    if a.is_infinite() && b.is_infinite() {
        return if (a > 0.0) == (b > 0.0) { f64::INFINITY } else { f64::NEG_INFINITY };
    }
    let sgn = if (a >= 0.0) == (b >= 0.0) { 1.0 } else { -1.0 };
    let r = sgn * a.abs().min(b.abs()) + (-(a + b).abs()).exp().ln_1p() - (-(a - b).abs()).exp().ln_1p();
    if r.is_nan() {
        0.0
    } else {
        r
    }
}

/// Variable-node update given the decided left bit.
#[inline]
pub fn g_update(a: f64, b: f64, bit: u8) -> f64 {
    let r = if bit == 0 { b + a } else { b - a };
    if r.is_nan() {
        0.0
    } else {
        r
    }
}

/// Successive cancellation over `L` parallel LLR lanes sharing decisions.
///
/// `decide(i, lanes)` returns the bit for index `i`; the engine feeds the
/// decided bits back into every lane.
pub struct ScEngine<const L: usize> {
    buf: Vec<[f64; L]>,
    x: Vec<u8>,
}

impl<const L: usize> ScEngine<L> {
    pub fn new(n: usize) -> Self {
        assert!(n.is_power_of_two());
        Self { buf: vec![[0.0; L]; n.max(1)], x: vec![0; n] }
    }

    /// Decodes into `u`, returning the re-encoded codeword bits.
    pub fn run<D: FnMut(usize, &[f64; L]) -> u8>(&mut self, llr: &[[f64; L]], u: &mut [u8], mut decide: D) -> &[u8] {
        let n = llr.len();
        assert_eq!(n, self.x.len());
        assert_eq!(n, u.len());
        rec(llr, &mut self.buf, &mut self.x, 0, u, &mut decide);
        &self.x
    }
}

fn rec<const L: usize, D: FnMut(usize, &[f64; L]) -> u8>(
    llr: &[[f64; L]],
    buf: &mut [[f64; L]],
    x: &mut [u8],
    base: usize,
    u: &mut [u8],
    decide: &mut D,
) {
    let n = llr.len();
    if n == 1 {
        let b = decide(base, &llr[0]) & 1;
        u[base] = b;
        x[0] = b;
        return;
    }
    let half = n / 2;
    let (child, rest) = buf.split_at_mut(half);
    let (top, bottom) = llr.split_at(half);
    for j in 0..half {
        for l in 0..L {
            child[j][l] = f_exact(top[j][l], bottom[j][l]);
        }
    }
    let (xl, xr) = x.split_at_mut(half);
    rec(child, rest, xl, base, u, decide);
    for j in 0..half {
        for l in 0..L {
            child[j][l] = g_update(top[j][l], bottom[j][l], xl[j]);
        }
    }
    rec(child, rest, xr, base + half, u, decide);
    for j in 0..half {
        xl[j] ^= xr[j];
    }
}

/// Hard decision; ties decide 0.
#[inline]
pub fn hard_decision(llr: f64) -> u8 {
    u8::from(llr < 0.0)
}

/// SC decoding with frozen positions forced to `frozen_values` (given in
/// increasing index order).
pub fn sc_decode(spec: &PolarCodeSpec, channel_llrs: &[f64], frozen_values: &[u8]) -> Result<Vec<u8>> {
    let n = spec.n();
    if channel_llrs.len() != n {
        return Err(Error::Contract(format!("expected {n} LLRs, got {}", channel_llrs.len())));
    }
    if channel_llrs.iter().any(|l| l.is_nan()) {
        return Err(Error::Contract("LLRs must not be NaN".into()));
    }
    let fixed = frozen_map(spec, frozen_values)?;
    let lanes: Vec<[f64; 1]> = channel_llrs.iter().map(|&l| [l]).collect();
    let mut u = vec![0u8; n];
    ScEngine::<1>::new(n).run(&lanes, &mut u, |i, l| fixed[i].unwrap_or_else(|| hard_decision(l[0])));
    Ok(u)
}

/// Per-index forced value (`Some` for frozen indices).
pub fn frozen_map(spec: &PolarCodeSpec, frozen_values: &[u8]) -> Result<Vec<Option<u8>>> {
    let nf = spec.n() - spec.info_len();
    if frozen_values.len() != nf {
        return Err(Error::Contract(format!("expected {nf} frozen values, got {}", frozen_values.len())));
    }
    let mut it = frozen_values.iter();
    Ok(spec.frozen.iter().map(|&f| if f { it.next().map(|b| b & 1) } else { None }).collect())
}

/// Monte Carlo outcome of one link configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkStats {
    pub trials: u64,
    pub frame_errors: u64,
    pub bit_errors: u64,
    pub info_bits: u64,
    pub fer: f64,
    pub ber: f64,
    pub fer_ci: (f64, f64),
    pub ber_ci: (f64, f64),
    /// Receptions whose CDI LLR left the table range.
    pub saturated: u64,
}

impl LinkStats {
    fn from_counts(trials: u64, frame_errors: u64, bit_errors: u64, k: u64, saturated: u64) -> Self {
        let bits = trials * k;
        let fer = frame_errors as f64 / trials as f64;
        let ber = if bits == 0 { 0.0 } else { bit_errors as f64 / bits as f64 };
        Self {
            trials,
            frame_errors,
            bit_errors,
            info_bits: k,
            fer,
            ber,
            fer_ci: wilson_interval(frame_errors, trials, Z95),
            ber_ci: wilson_interval(bit_errors, bits, Z95),
            saturated,
        }
    }
}

pub const LINK_CSV_HEADER: &str = "N,rate,snr_db,dist,csi_mode,trials,frame_errors,bit_errors,fer,ber,fer_lo,fer_hi,seed";

/// One CSV row in [`LINK_CSV_HEADER`] order.
pub fn link_csv_row(ch: &FadingChannelSpec, spec: &PolarCodeSpec, stats: &LinkStats, seed: u64) -> String {
    let dist = match ch.dist.kind {
        crate::fading::FadingKind::Rayleigh => "rayleigh".to_string(),
        crate::fading::FadingKind::Rician => format!("rician(s={})", fmt_sig(ch.dist.s)),
    };
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{}",
        spec.n(),
        fmt_sig(spec.rate),
        fmt_sig(ch.snr_db()),
        dist,
        ch.csi.label(),
        stats.trials,
        stats.frame_errors,
        stats.bit_errors,
        fmt_sig(stats.fer),
        fmt_sig(stats.ber),
        fmt_sig(stats.fer_ci.0),
        fmt_sig(stats.fer_ci.1),
        seed
    )
}

/// Channel realization for one trial: gains and noise, drawn after the
/// information bits so that different codes of equal dimension see the
/// same bits and the same channel under the same seed.
fn draw_trial(rng: &mut ChaCha8Rng, ch: &FadingChannelSpec, k: usize, n: usize) -> (Vec<u8>, Vec<f64>, Vec<f64>) {
    let info: Vec<u8> = (0..k).map(|_| (rng.next_u32() & 1) as u8).collect();
    let h: Vec<f64> = (0..n).map(|_| ch.dist.sample(rng)).collect();
    let z: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    (info, h, z)
}

/// Runs `trials` frames; deterministic in `seed` regardless of threading.
///
/// The decoder uses `ch.csi`: exact LLRs with CSI, the tabulated marginal
/// LLR otherwise. Frozen bits are zero.
pub fn simulate_link(ch: &FadingChannelSpec, spec: &PolarCodeSpec, trials: u64, seed: u64) -> Result<LinkStats> {
    if trials == 0 {
        return Err(Error::Domain("trials must be >= 1".into()));
    }
    let table = match ch.csi {
        CsiMode::CdiOnly if ch.sigma > 0.0 => Some(CdiLlrTable::new(ch, CdiLlrTable::DEFAULT_STEP)?),
        _ => None,
    };
    simulate_link_with(ch, spec, trials, seed, table.as_ref())
}

/// As [`simulate_link`] with a prebuilt CDI table.
pub fn simulate_link_with(
    ch: &FadingChannelSpec,
    spec: &PolarCodeSpec,
    trials: u64,
    seed: u64,
    table: Option<&CdiLlrTable>,
) -> Result<LinkStats> {
    let n = spec.n();
    let k = spec.info_len();
    let info_idx = spec.info_indices();
    let frozen = vec![0u8; n - k];
    let fixed = frozen_map(spec, &frozen)?;
    let counts: Vec<(u64, u64, u64)> = (0..trials)
        .into_par_iter()
        .map_init(
            || (ScEngine::<1>::new(n), vec![[0.0f64; 1]; n], vec![0u8; n]),
            |(engine, llr, u), t| {
                let mut rng = trial_rng(seed, t);
                let (info, h, z) = draw_trial(&mut rng, ch, k, n);
                let mut x = assemble_u(spec, &info, FrozenFill::Zeros).expect("length checked");
                polar_transform(&mut x);
                let mut sat = 0;
                for j in 0..n {
                    let s = if x[j] == 0 { 1.0 } else { -1.0 };
                    let y = h[j] * s + ch.sigma * z[j];
                    llr[j][0] = match (ch.csi, table) {
                        (CsiMode::CdiOnly, Some(tab)) => {
                            let (l, clamped) = tab.llr(y);
                            sat += u64::from(clamped);
                            l
                        }
                        _ => raw_llr_csi(ch.sigma, y, h[j]),
                    };
                }
                engine.run(llr, u, |i, l| fixed[i].unwrap_or_else(|| hard_decision(l[0])));
                let errs = info_idx.iter().zip(&info).filter(|(&i, &b)| u[i] != b).count() as u64;
                (u64::from(errs > 0), errs, sat)
            },
        )
        .collect();
    let (fe, be, sat) = counts.iter().fold((0, 0, 0), |a, c| (a.0 + c.0, a.1 + c.1, a.2 + c.2));
    Ok(LinkStats::from_counts(trials, fe, be, k as u64, sat))
}
