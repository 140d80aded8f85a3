//! Finite-output binary memoryless symmetric channels, reduction of
//! continuous-output channels to them by capacity binning, and greedy
//! degrading merge.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fading::{Bpsk, CdiDensity, CsiMode, FadingChannelSpec, FadingDistribution};
use crate::numeric::quad::{gauss_legendre8_nodes, integrate_vec, QuadConfig};
use crate::numeric::special::{binary_entropy_inv, normal_interval};

/// Relative tolerance under which two likelihood ratios count as equal.
const LR_TIE: f64 = 1e-13;

/// A BMSC stored as conjugate pairs `(w0, w1)`, `w0 ≥ w1`, plus an erasure.
///
/// Pair `i` stands for two outputs `y, ȳ` with `W(y|0) = W(ȳ|1) = w0` and
/// `W(y|1) = W(ȳ|0) = w1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteBmsc {
    pairs: Vec<(f64, f64)>,
    erasure: f64,
}

fn pair_capacity(w0: f64, w1: f64) -> f64 {
    let s = w0 + w1;
    if s <= 0.0 {
        return 0.0;
    }
    let mut c = 0.0;
    if w0 > 0.0 {
        c += w0 * (2.0 * w0 / s).log2();
    }
    if w1 > 0.0 {
        c += w1 * (2.0 * w1 / s).log2();
    }
    c
}

/// `a.lr > b.lr` ordering by cross products (no division).
/// `ln(w0/w1)`; compared in the log domain since cross products of tiny
/// masses underflow.
fn log_lr(p: (f64, f64)) -> f64 {
    p.0.ln() - p.1.ln()
}

fn lr_equal(a: (f64, f64), b: (f64, f64)) -> bool {
    let (x, y) = (log_lr(a), log_lr(b));
    x == y || (x - y).abs() <= LR_TIE
}

impl DiscreteBmsc {
    /// Validates and canonicalizes; masses must sum to one within 1e-12.
    pub fn new(pairs: Vec<(f64, f64)>, erasure: f64) -> Result<Self> {
        for &(a, b) in &pairs {
            if !(a >= 0.0 && b >= 0.0 && a.is_finite() && b.is_finite()) {
                return Err(Error::Domain(format!("invalid pair mass ({a}, {b})")));
            }
        }
        if !(erasure >= 0.0 && erasure.is_finite()) {
            return Err(Error::Domain(format!("invalid erasure mass {erasure}")));
        }
        let total: f64 = pairs.iter().map(|p| p.0 + p.1).sum::<f64>() + erasure;
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Domain(format!("masses sum to {total}, expected 1")));
        }
        Ok(Self::canonical(pairs, erasure))
    }

    /// Canonicalizes without the mass check, rescaling to unit total.
    ///
    /// Used for integrated masses that carry quadrature error.
    pub fn from_masses(pairs: Vec<(f64, f64)>, erasure: f64) -> Result<Self> {
        let total: f64 = pairs.iter().map(|p| p.0 + p.1).sum::<f64>() + erasure;
        if !(total.is_finite() && (total - 1.0).abs() <= 1e-6) {
            return Err(Error::Numerical { what: "quantized channel mass", requested: 1.0, achieved: total });
        }
        let inv = 1.0 / total;
        let pairs = pairs.into_iter().map(|(a, b)| (a * inv, b * inv)).collect();
        Ok(Self::canonical(pairs, erasure * inv))
    }

    fn canonical(pairs: Vec<(f64, f64)>, mut erasure: f64) -> Self {
        let mut out: Vec<(f64, f64)> = Vec::with_capacity(pairs.len());
        for (a, b) in pairs {
            let (w0, w1) = if a >= b { (a, b) } else { (b, a) };
            if w0 <= 0.0 {
                continue;
            }
            if w0 - w1 <= LR_TIE * (w0 + w1) {
                erasure += w0 + w1;
                continue;
            }
            out.push((w0, w1));
        }
        let mut keyed: Vec<(f64, (f64, f64))> = out.into_iter().map(|p| (log_lr(p), p)).collect();
        keyed.sort_by(|a, b| b.0.total_cmp(&a.0));
        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(keyed.len());
        for (_, p) in keyed {
            match merged.last_mut() {
                Some(last) if lr_equal(*last, p) => {
                    last.0 += p.0;
                    last.1 += p.1;
                }
                _ => merged.push(p),
            }
        }
        Self { pairs: merged, erasure }
    }

    pub fn bsc(p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Domain(format!("crossover {p} outside [0, 1]")));
        }
        Self::new(vec![(1.0 - p, p)], 0.0)
    }

    pub fn bec(eps: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&eps) {
            return Err(Error::Domain(format!("erasure probability {eps} outside [0, 1]")));
        }
        Self::new(vec![(1.0 - eps, 0.0)], eps)
    }

    pub fn perfect() -> Self {
        Self { pairs: vec![(1.0, 0.0)], erasure: 0.0 }
    }

    pub fn pairs(&self) -> &[(f64, f64)] {
        &self.pairs
    }

    pub fn erasure(&self) -> f64 {
        self.erasure
    }

    /// Output alphabet size.
    pub fn symbols(&self) -> usize {
        2 * self.pairs.len() + usize::from(self.erasure > 0.0)
    }

    /// Capacity in bits.
    pub fn capacity(&self) -> f64 {
        self.pairs.iter().map(|&(a, b)| pair_capacity(a, b)).sum::<f64>().clamp(0.0, 1.0)
    }

    pub fn bhattacharyya(&self) -> f64 {
        let z: f64 = self.pairs.iter().map(|&(a, b)| 2.0 * (a * b).sqrt()).sum::<f64>() + self.erasure;
        z.clamp(0.0, 1.0)
    }

    /// MAP error probability of a single use.
    pub fn error_probability(&self) -> f64 {
        self.pairs.iter().map(|p| p.1).sum::<f64>() + 0.5 * self.erasure
    }

    /// Pairs with the erasure folded in as `(e/2, e/2)`.
    fn pair_list(&self) -> Vec<(f64, f64)> {
        let mut v = self.pairs.clone();
        if self.erasure > 0.0 {
            v.push((0.5 * self.erasure, 0.5 * self.erasure));
        }
        v
    }

    /// Exact `W⁻` for two independent uses, before any merging.
    pub fn minus(&self) -> Self {
        let p = self.pair_list();
        let mut out = Vec::with_capacity(p.len() * (p.len() + 1) / 2);
        for i in 0..p.len() {
            let (a0, a1) = p[i];
            for (j, &(b0, b1)) in p.iter().enumerate().skip(i) {
                let k = if i == j { 1.0 } else { 2.0 };
                out.push((k * (a0 * b0 + a1 * b1), k * (a0 * b1 + a1 * b0)));
            }
        }
        Self::canonical(out, 0.0)
    }

    /// Exact `W⁺` for two independent uses, before any merging.
    pub fn plus(&self) -> Self {
        let p = self.pair_list();
        let mut out = Vec::with_capacity(p.len() * (p.len() + 1));
        for i in 0..p.len() {
            let (a0, a1) = p[i];
            for (j, &(b0, b1)) in p.iter().enumerate().skip(i) {
                let k = if i == j { 1.0 } else { 2.0 };
                out.push((k * a0 * b0, k * a1 * b1));
                out.push((k * a1 * b0, k * a0 * b1));
            }
        }
        Self::canonical(out, 0.0)
    }

    /// Hash of the canonical masses; used as a cache key.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.erasure.to_le_bytes());
        for &(a, b) in &self.pairs {
            h.update(a.to_le_bytes());
            h.update(b.to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    /// CSV artifact: two comment lines (erasure, hash) then `w0,w1` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# erasure={:e}", self.erasure);
        let _ = writeln!(s, "# sha256={}", self.content_hash());
        s.push_str("w0,w1\n");
        for &(a, b) in &self.pairs {
            let _ = writeln!(s, "{a:e},{b:e}");
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut erasure = None;
        let mut hash = None;
        let mut pairs = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if let Some(rest) = line.strip_prefix("# erasure=") {
                erasure = Some(rest.parse::<f64>().map_err(|e| Error::Artifact(e.to_string()))?);
            } else if let Some(rest) = line.strip_prefix("# sha256=") {
                hash = Some(rest.to_string());
            } else if line.is_empty() || line == "w0,w1" {
                continue;
            } else {
                let (a, b) = line
                    .split_once(',')
                    .ok_or_else(|| Error::Artifact(format!("malformed row {line:?}")))?;
                let a: f64 = a.parse().map_err(|_| Error::Artifact(format!("bad number {a:?}")))?;
                let b: f64 = b.parse().map_err(|_| Error::Artifact(format!("bad number {b:?}")))?;
                pairs.push((a, b));
            }
        }
        let erasure = erasure.ok_or_else(|| Error::Artifact("missing erasure header".into()))?;
        let ch = Self { pairs, erasure };
        if let Some(h) = hash {
            if h != ch.content_hash() {
                return Err(Error::Artifact("channel hash mismatch".into()));
            }
        }
        Ok(ch)
    }
}

/// Capacity in bits.
pub fn capacity(ch: &DiscreteBmsc) -> f64 {
    ch.capacity()
}

pub fn bhattacharyya(ch: &DiscreteBmsc) -> f64 {
    ch.bhattacharyya()
}

/// Number of capacity bins `Q` and output alphabet cap `μ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantizerParams {
    pub q: usize,
    pub mu: usize,
}

impl QuantizerParams {
    /// `μ = 2Q`.
    pub fn new(q: usize) -> Result<Self> {
        Self::with_mu(q, 2 * q)
    }

    pub fn with_mu(q: usize, mu: usize) -> Result<Self> {
        let p = Self { q, mu };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.q < 1 {
            return Err(Error::Domain("Q must be >= 1".into()));
        }
        if self.mu < 2 {
            return Err(Error::Domain("mu must be >= 2".into()));
        }
        Ok(())
    }

    /// `|LLR|` thresholds `t_0 = 0 < t_1 < … < t_Q = ∞`; bin `k` holds
    /// outputs whose BSC capacity lies in `[k/Q, (k+1)/Q)`.
    pub fn llr_thresholds(&self) -> Result<Vec<f64>> {
        let q = self.q;
        let mut t = Vec::with_capacity(q + 1);
        t.push(0.0);
        for k in 1..q {
            let y = (q - k) as f64 / q as f64;
            let p = binary_entropy_inv(y).ok_or(Error::Numerical {
                what: "inverse binary entropy",
                requested: y,
                achieved: f64::NAN,
            })?;
            if !(p > 0.0 && p < 0.5) {
                return Err(Error::Numerical { what: "inverse binary entropy", requested: y, achieved: p });
            }
            t.push((1.0 / p - 1.0).ln());
        }
        t.push(f64::INFINITY);
        Ok(t)
    }
}

fn bin_of(thresholds: &[f64], llr: f64) -> usize {
    let a = llr.abs();
    let k = thresholds.partition_point(|&t| t <= a);
    k.saturating_sub(1).min(thresholds.len() - 2)
}

/// Reduces the CSI fading BPSK channel to `Q` conjugate pairs.
///
/// Pair `k` collects `(y, h)` with `yh ∈ [δ_k, δ_{k+1})` (and its mirror),
/// `δ = σ²/2 · t`; each mass is an outer gain quadrature of Gaussian
/// interval probabilities in `y`.
pub fn quantize_fading_bpsk(ch: &FadingChannelSpec, params: QuantizerParams) -> Result<DiscreteBmsc> {
    params.validate()?;
    if ch.csi != CsiMode::ReceiverCsi {
        return Err(Error::Contract("quantize_fading_bpsk requires receiver CSI".into()));
    }
    crate::error::ensure_positive("sigma", ch.sigma)?;
    let t = params.llr_thresholds()?;
    let delta: Vec<f64> = t.iter().map(|&x| 0.5 * ch.sigma * ch.sigma * x).collect();
    let q = params.q;
    let sigma = ch.sigma;
    let dist = ch.dist;
    let f = |h: f64, out: &mut [f64]| {
        let ph = dist.density(h);
        if ph == 0.0 {
            out.fill(0.0);
            return;
        }
        for k in 0..q {
            let (lo, hi) = (delta[k] / h, delta[k + 1] / h);
            out[2 * k] = ph * normal_interval(h, sigma, lo, hi);
            out[2 * k + 1] = ph * normal_interval(h, sigma, -hi, -lo);
        }
    };
    let masses = gain_integral(&dist, f, 2 * q, &[])?;
    let pairs = (0..q).map(|k| (masses[2 * k], masses[2 * k + 1])).collect();
    let ch = DiscreteBmsc::from_masses(pairs, 0.0)?;
    Ok(degrading_merge(&ch, params.mu))
}

/// `∫ f(h) dh` over the gain support, split at `breaks`.
///
/// Each piece `[a, b]` is mapped through `h = a + (b − a)(3u² − 2u³)`, which
/// turns square-root kinks at the ends (bins appearing as the gain grows)
/// into smooth behaviour.
fn gain_integral<F: FnMut(f64, &mut [f64])>(dist: &FadingDistribution, mut f: F, dim: usize, breaks: &[f64]) -> Result<Vec<f64>> {
    let hi = dist.gain_limit();
    let mut pts = vec![0.0, hi, dist.sigma_h];
    if dist.s > 0.0 {
        pts.push(dist.s);
    }
    pts.extend(breaks.iter().copied().filter(|&h| h > 0.0 && h < hi));
    pts.sort_by(f64::total_cmp);
    pts.dedup_by(|x, y| (*x - *y).abs() <= 1e-12 * hi);
    let pieces = (pts.len() - 1) as f64;
    let cfg = QuadConfig::new(1e-12 / pieces, 1e-10).with_max_intervals(20_000);
    let mut total = vec![0.0; dim];
    for w in pts.windows(2) {
        let (a, len) = (w[0], w[1] - w[0]);
        let (v, _) = integrate_vec(
            |u, out: &mut [f64]| {
                let h = a + len * u * u * (3.0 - 2.0 * u);
                let jac = 6.0 * len * u * (1.0 - u);
                if jac <= 0.0 {
                    out.fill(0.0);
                    return;
                }
                f(h, out);
                out.iter_mut().for_each(|o| *o *= jac);
            },
            dim,
            0.0,
            1.0,
            cfg,
        )?;
        total.iter_mut().zip(&v).for_each(|(t, x)| *t += x);
    }
    Ok(total)
}

/// Joint densities `p_b = P(X = b, output)` of a binary-input channel with
/// uniform input, over outputs `(k, y, h)`: a discrete component `k`, a
/// real coordinate `y` and an optional gain `h`.
pub trait JointDensity: Sync {
    /// `(p_0, p_1)` at an output point.
    fn joint(&self, k: usize, y: f64, h: f64) -> (f64, f64);

    /// Natural-log likelihood ratio; override where it has a closed form.
    fn llr(&self, k: usize, y: f64, h: f64) -> f64 {
        let (p0, p1) = self.joint(k, y, h);
        p0.ln() - p1.ln()
    }

    /// Number of discrete side-information components.
    fn components(&self) -> usize {
        1
    }

    /// Integration range `(lo, hi)` of `y` for component `k` at gain `h`,
    /// and the largest cell width on which `p_b` is smooth enough for an
    /// 8-point Gauss–Legendre rule.
    fn inner_range(&self, k: usize, h: f64) -> (f64, f64, f64);

    /// Points that must be cell boundaries, e.g. LLR extrema, so that the
    /// LLR is monotone on every cell.
    fn knots(&self, _k: usize, _h: f64) -> Vec<f64> {
        Vec::new()
    }

    /// Gains at which the partition of outputs into bins changes topology,
    /// e.g. where the largest attainable LLR reaches a threshold.
    fn gain_breaks(&self, _thresholds: &[f64], _h_max: f64) -> Vec<f64> {
        Vec::new()
    }

    /// Sorted cell boundaries for component `k` at gain `h`. The default is
    /// a uniform grid over [`inner_range`](Self::inner_range) plus the knots.
    fn grid(&self, k: usize, h: f64) -> Vec<f64> {
        let (lo, hi, width) = self.inner_range(k, h);
        if hi <= lo {
            return Vec::new();
        }
        let cells = ((hi - lo) / width).ceil().max(1.0) as usize;
        let step = (hi - lo) / cells as f64;
        let mut grid: Vec<f64> = (0..=cells).map(|i| if i == cells { hi } else { lo + step * i as f64 }).collect();
        grid.extend(self.knots(k, h).into_iter().filter(|&x| x > lo && x < hi));
        grid.sort_by(f64::total_cmp);
        grid.dedup();
        grid
    }

    /// Whether `∫_{L≥0} p_0 = ∫_{L<0} p_1` must hold per bin.
    fn symmetric(&self) -> bool {
        true
    }
}

/// Where the gain coordinate lives.
#[derive(Debug, Clone, Copy)]
pub enum GainDomain {
    /// No gain; the evaluator is called with `h = 1`.
    None,
    /// Gain integrated against its law; `joint` must include `P_H(h)`.
    Faded(FadingDistribution),
}

/// Binning into `Q` capacity classes exactly as for fading BPSK, for any
/// channel given as a [`JointDensity`].
pub fn quantize_by_llr<E: JointDensity>(eval: &E, params: QuantizerParams, gain: GainDomain) -> Result<DiscreteBmsc> {
    params.validate()?;
    let t = params.llr_thresholds()?;
    let q = params.q;
    // Layout: [w0, w1] per bin, then [∫_{L≥0} p0, ∫_{L<0} p1] per bin.
    let dim = 4 * q;
    let masses = match gain {
        GainDomain::None => {
            let mut out = vec![0.0; dim];
            inner_bins(eval, &t, 1.0, &mut out);
            out
        }
        GainDomain::Faded(dist) => {
            let breaks = eval.gain_breaks(&t, dist.gain_limit());
            gain_integral(&dist, |h, out: &mut [f64]| inner_bins(eval, &t, h, out), dim, &breaks)?
        }
    };
    if eval.symmetric() {
        for k in 0..q {
            let (a, b) = (masses[2 * q + 2 * k], masses[2 * q + 2 * k + 1]);
            if (a - b).abs() > 1e-9 {
                return Err(Error::Contract(format!("symmetry violated in bin {k}: {a:e} vs {b:e}")));
            }
        }
    }
    let pairs = (0..q).map(|k| (masses[2 * k], masses[2 * k + 1])).collect();
    let ch = DiscreteBmsc::from_masses(pairs, 0.0)?;
    Ok(degrading_merge(&ch, params.mu))
}

/// CDI marginal `P(y|x)` as a [`JointDensity`] over `y` alone.
struct CdiEvaluator {
    dens: CdiDensity,
    sigma: f64,
}

impl JointDensity for CdiEvaluator {
    fn joint(&self, _: usize, y: f64, _: f64) -> (f64, f64) {
        // a failed quadrature surfaces as a non-finite mass in from_masses
        let p = |x| self.dens.density(y, x).unwrap_or(f64::NAN);
        (0.5 * p(Bpsk::Plus), 0.5 * p(Bpsk::Minus))
    }

    fn llr(&self, _: usize, y: f64, _: f64) -> f64 {
        self.dens.llr(y).unwrap_or(f64::NAN)
    }

    fn inner_range(&self, _: usize, _: f64) -> (f64, f64, f64) {
        let lim = self.dens.output_limit();
        (-lim, lim, 0.25 * self.sigma)
    }
}

/// Reduces the CDI channel (receiver knows only the gain law) to `Q`
/// conjugate pairs by the same capacity binning as the CSI quantizer.
pub fn quantize_cdi(ch: &FadingChannelSpec, params: QuantizerParams) -> Result<DiscreteBmsc> {
    params.validate()?;
    if ch.csi != CsiMode::CdiOnly {
        return Err(Error::Contract("quantize_cdi requires CDI mode".into()));
    }
    let eval = CdiEvaluator { dens: CdiDensity::new(ch)?, sigma: ch.sigma };
    quantize_by_llr(&eval, params, GainDomain::None)
}

/// Quantizes either mode: [`quantize_fading_bpsk`] with CSI, [`quantize_cdi`] otherwise.
pub fn quantize_channel(ch: &FadingChannelSpec, params: QuantizerParams) -> Result<DiscreteBmsc> {
    match ch.csi {
        CsiMode::ReceiverCsi => quantize_fading_bpsk(ch, params),
        CsiMode::CdiOnly => quantize_cdi(ch, params),
    }
}

/// Discrete-output channel given by its joint masses `P(X=b, y)` per output.
pub fn quantize_points(points: &[(f64, f64)], params: QuantizerParams) -> Result<DiscreteBmsc> {
    params.validate()?;
    let t = params.llr_thresholds()?;
    let q = params.q;
    let mut w = vec![(0.0, 0.0); q];
    for &(p0, p1) in points {
        if p0 == 0.0 && p1 == 0.0 {
            continue;
        }
        let k = bin_of(&t, p0.ln() - p1.ln());
        w[k].0 += p0.max(p1);
        w[k].1 += p0.min(p1);
    }
    let ch = DiscreteBmsc::from_masses(w, 0.0)?;
    Ok(degrading_merge(&ch, params.mu))
}

/// Class of an output: bin index and LLR sign, or `None` where both
/// densities vanish.
fn class_of(t: &[f64], l: f64) -> Option<(usize, bool)> {
    if l.is_nan() {
        return None;
    }
    Some((bin_of(t, l), l >= 0.0))
}

/// Root of `llr(y) = c` on `[a, b]` where `llr(a) − c` and `llr(b) − c`
/// differ in sign (Illinois variant of regula falsi).
fn solve_level<E: JointDensity>(eval: &E, comp: usize, h: f64, c: f64, (mut a, mut fa): (f64, f64), (mut b, mut fb): (f64, f64)) -> f64 {
    let tol = 1e-14 * (b - a).abs().max(a.abs().max(b.abs()) * 1e-2);
    let mut side = 0i8;
    for _ in 0..100 {
        if (b - a).abs() <= tol {
            break;
        }
        let mut x = if fa.is_finite() && fb.is_finite() && fa != fb { (a * fb - b * fa) / (fb - fa) } else { 0.5 * (a + b) };
        if !(x > a.min(b) && x < a.max(b)) {
            x = 0.5 * (a + b);
        }
        let fx = eval.llr(comp, x, h) - c;
        if fx.is_nan() {
            x = 0.5 * (a + b);
        }
        let fx = if fx.is_nan() { eval.llr(comp, x, h) - c } else { fx };
        if fx == 0.0 || fx.is_nan() {
            return x;
        }
        if (fx > 0.0) == (fa > 0.0) {
            a = x;
            fa = fx;
            if side == -1 {
                fb *= 0.5;
            }
            side = -1;
        } else {
            b = x;
            fb = fx;
            if side == 1 {
                fa *= 0.5;
            }
            side = 1;
        }
    }
    0.5 * (a + b)
}

/// LLR levels crossed strictly between `la` and `lb`: the signed
/// thresholds and zero, ordered from `la` towards `lb`.
fn crossed_levels(t: &[f64], la: f64, lb: f64) -> Vec<f64> {
    let (lo, hi) = if la <= lb { (la, lb) } else { (lb, la) };
    let mut v = Vec::new();
    for &x in t[1..t.len() - 1].iter().rev() {
        if -x > lo && -x < hi {
            v.push(-x);
        }
    }
    if 0.0 > lo && 0.0 < hi {
        v.push(0.0);
    }
    for &x in &t[1..t.len() - 1] {
        if x > lo && x < hi {
            v.push(x);
        }
    }
    if la > lb {
        v.reverse();
    }
    v
}

/// Appends the class boundaries strictly inside `(a, b)` to `cuts`.
fn cell_cuts<E: JointDensity>(eval: &E, comp: usize, h: f64, t: &[f64], (a, la): (f64, f64), (b, lb): (f64, f64), cuts: &mut Vec<f64>) {
    if la.is_finite() && lb.is_finite() {
        for c in crossed_levels(t, la, lb) {
            let root = solve_level(eval, comp, h, c, (a, la - c), (b, lb - c));
            if root > *cuts.last().unwrap_or(&a) && root < b {
                cuts.push(root);
            }
        }
        return;
    }
    // cells are monotone, so equal end classes leave nothing inside
    let c0 = class_of(t, la);
    if c0 == class_of(t, lb) {
        return;
    }
    let m = 0.5 * (a + b);
    if b - a <= 1e-13 * a.abs().max(b.abs()).max(1.0) || m <= a || m >= b {
        if c0 != class_of(t, lb) {
            cuts.push(m);
        }
        return;
    }
    // an end with infinite or undefined LLR: split until the ends are finite
    let lm = eval.llr(comp, m, h);
    cell_cuts(eval, comp, h, t, (a, la), (m, lm), cuts);
    cuts.push(m);
    cell_cuts(eval, comp, h, t, (m, lm), (b, lb), cuts);
}

fn inner_bins<E: JointDensity>(eval: &E, t: &[f64], h: f64, out: &mut [f64]) {
    out.fill(0.0);
    let q = t.len() - 1;
    for comp in 0..eval.components() {
        let grid = eval.grid(comp, h);
        if grid.len() < 2 {
            continue;
        }
        let llrs: Vec<f64> = grid.iter().map(|&y| eval.llr(comp, y, h)).collect();
        let mut cuts: Vec<f64> = Vec::with_capacity(grid.len());
        for i in 0..grid.len() - 1 {
            cuts.push(grid[i]);
            cell_cuts(eval, comp, h, t, (grid[i], llrs[i]), (grid[i + 1], llrs[i + 1]), &mut cuts);
        }
        cuts.push(grid[grid.len() - 1]);
        for w in cuts.windows(2) {
            let (a, b) = (w[0], w[1]);
            if b <= a {
                continue;
            }
            let lm = eval.llr(comp, 0.5 * (a + b), h);
            let Some((bin, positive)) = class_of(t, lm) else { continue };
            let (mut s0, mut s1) = (0.0, 0.0);
            for (x, wt) in gauss_legendre8_nodes(a, b) {
                let (p0, p1) = eval.joint(comp, x, h);
                s0 += wt * p0;
                s1 += wt * p1;
            }
            if lm == 0.0 {
                // no orientation: half the mass on each side
                let m = 0.5 * (s0 + s1);
                out[2 * bin] += m;
                out[2 * bin + 1] += m;
                out[2 * q + 2 * bin] += 0.5 * s0;
                out[2 * q + 2 * bin + 1] += 0.5 * s1;
            } else if positive {
                out[2 * bin] += s0;
                out[2 * bin + 1] += s1;
                out[2 * q + 2 * bin] += s0;
            } else {
                out[2 * bin] += s1;
                out[2 * bin + 1] += s0;
                out[2 * q + 2 * bin + 1] += s1;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct HeapItem {
    loss: f64,
    left: usize,
    ver_left: u64,
    ver_right: u64,
}

impl Eq for HeapItem {}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on (loss, left)
        other.loss.total_cmp(&self.loss).then_with(|| other.left.cmp(&self.left))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn merge_loss(a: (f64, f64), b: (f64, f64)) -> f64 {
    (pair_capacity(a.0, a.1) + pair_capacity(b.0, b.1) - pair_capacity(a.0 + b.0, a.1 + b.1)).max(0.0)
}

/// Greedy degrading merge down to at most `μ` output symbols.
pub fn degrading_merge(ch: &DiscreteBmsc, mu: usize) -> DiscreteBmsc {
    degrading_merge_with_loss(ch, mu).0
}

/// As [`degrading_merge`], also returning the capacity lost.
///
/// Adjacent pairs in LR order are merged one at a time, always the pair
/// whose merge loses the least capacity (ties: leftmost). When needed the
/// erasure takes part as the pair `(e/2, e/2)` at the low end.
pub fn degrading_merge_with_loss(ch: &DiscreteBmsc, mu: usize) -> (DiscreteBmsc, f64) {
    assert!(mu >= 2, "mu must be >= 2");
    if ch.symbols() <= mu {
        return (ch.clone(), 0.0);
    }
    let target = mu / 2;
    let mut p = ch.pair_list();
    let n = p.len();
    let mut prev: Vec<usize> = (0..n).map(|i| i.wrapping_sub(1)).collect();
    let mut next: Vec<usize> = (1..=n).collect();
    let mut version = vec![0u64; n];
    let mut alive = n;
    let mut heap = BinaryHeap::with_capacity(n);
    for i in 0..n - 1 {
        heap.push(HeapItem { loss: merge_loss(p[i], p[i + 1]), left: i, ver_left: 0, ver_right: 0 });
    }
    let mut lost = 0.0;
    while alive > target {
        let Some(item) = heap.pop() else { break };
        let l = item.left;
        let r = next[l];
        if r >= n || version[l] != item.ver_left || version[r] != item.ver_right {
            continue;
        }
        lost += item.loss;
        p[l].0 += p[r].0;
        p[l].1 += p[r].1;
        version[l] += 1;
        version[r] = u64::MAX;
        let rn = next[r];
        next[l] = rn;
        if rn < n {
            prev[rn] = l;
            heap.push(HeapItem { loss: merge_loss(p[l], p[rn]), left: l, ver_left: version[l], ver_right: version[rn] });
        }
        let lp = prev[l];
        if lp < n {
            heap.push(HeapItem { loss: merge_loss(p[lp], p[l]), left: lp, ver_left: version[lp], ver_right: version[l] });
        }
        alive -= 1;
    }
    let kept: Vec<(f64, f64)> = (0..n).filter(|&i| version[i] != u64::MAX).map(|i| p[i]).collect();
    (DiscreteBmsc::canonical(kept, 0.0), lost)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fading::{capacity_csi, FadingKind};
    use crate::numeric::special::binary_entropy;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn random_channel(n: usize, seed: u64) -> DiscreteBmsc {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let raw: Vec<(f64, f64)> = (0..n).map(|_| (rng.random::<f64>(), rng.random::<f64>())).collect();
        let s: f64 = raw.iter().map(|p| p.0 + p.1).sum();
        DiscreteBmsc::from_masses(raw.into_iter().map(|(a, b)| (a / s, b / s)).collect(), 0.0).unwrap()
    }

    /// Rescans every adjacent pair after each merge.
    fn naive_merge(ch: &DiscreteBmsc, mu: usize) -> DiscreteBmsc {
        let mut p = ch.pair_list();
        while p.len() > mu / 2 {
            let mut best = (f64::INFINITY, 0);
            for i in 0..p.len() - 1 {
                let l = merge_loss(p[i], p[i + 1]);
                if l < best.0 {
                    best = (l, i);
                }
            }
            let i = best.1;
            let r = p.remove(i + 1);
            p[i].0 += r.0;
            p[i].1 += r.1;
        }
        DiscreteBmsc::canonical(p, 0.0)
    }

    #[test]
    fn bsc_closed_forms() {
        let ch = DiscreteBmsc::bsc(0.11).unwrap();
        assert!((ch.bhattacharyya() - 2.0 * (0.11f64 * 0.89).sqrt()).abs() < 1e-15);
        assert!((ch.capacity() - (1.0 - binary_entropy(0.11))).abs() < 1e-15);
        assert!((ch.bhattacharyya() - 0.6258).abs() < 1e-4);
        assert!((ch.capacity() - 0.5002).abs() < 5e-4);
    }

    #[test]
    fn bec_identities() {
        for &e in &[0.0, 0.2, 0.5, 1.0] {
            let ch = DiscreteBmsc::bec(e).unwrap();
            assert!((ch.bhattacharyya() - e).abs() < 1e-15);
            assert!((ch.capacity() - (1.0 - e)).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_bad_masses() {
        assert!(DiscreteBmsc::new(vec![(0.5, 0.4)], 0.0).is_err());
        assert!(DiscreteBmsc::new(vec![(-0.1, 1.1)], 0.0).is_err());
        assert!(DiscreteBmsc::new(vec![(f64::NAN, 0.5)], 0.5).is_err());
    }

    #[test]
    fn canonical_orders_and_merges_ties() {
        let ch = DiscreteBmsc::new(vec![(0.1, 0.2), (0.3, 0.1), (0.15, 0.05), (0.05, 0.05)], 0.0).unwrap();
        assert_eq!(ch.pairs().len(), 2);
        assert!((ch.pairs()[0].0 - 0.45).abs() < 1e-15);
        assert!((ch.erasure() - 0.1).abs() < 1e-15);
        let again = DiscreteBmsc::canonical(ch.pairs().to_vec(), ch.erasure());
        assert_eq!(again, ch);
    }

    #[test]
    fn small_channels_unchanged_by_merge() {
        let ch = random_channel(10, 3);
        let (m, lost) = degrading_merge_with_loss(&ch, 64);
        assert_eq!(m, ch);
        assert_eq!(lost, 0.0);
    }

    #[test]
    fn identical_lr_merge_is_lossless() {
        let a = (0.3, 0.1);
        assert_eq!(merge_loss(a, (0.6, 0.2)), 0.0);
    }

    #[test]
    fn merge_matches_naive_oracle() {
        let ch = random_channel(1024, 11);
        assert_eq!(ch.pairs().len(), 1024);
        let (fast, lost) = degrading_merge_with_loss(&ch, 64);
        let slow = naive_merge(&ch, 64);
        assert!(fast.symbols() <= 64);
        assert!(ch.capacity() - fast.capacity() >= 0.0);
        assert!((fast.capacity() - slow.capacity()).abs() < 1e-12);
        assert!((ch.capacity() - fast.capacity() - lost).abs() < 1e-12);
        assert_eq!(fast.pairs().len(), slow.pairs().len());
        for (x, y) in fast.pairs().iter().zip(slow.pairs()) {
            assert!((x.0 - y.0).abs() < 1e-12 && (x.1 - y.1).abs() < 1e-12);
        }
    }

    #[test]
    fn merge_with_erasure_respects_cap() {
        let mut pairs: Vec<(f64, f64)> = random_channel(40, 5).pairs().iter().map(|&(a, b)| (0.5 * a, 0.5 * b)).collect();
        pairs.push((0.0, 0.0));
        let ch = DiscreteBmsc::new(pairs, 0.5).unwrap();
        for mu in [2, 3, 4, 7, 20] {
            let m = degrading_merge(&ch, mu);
            assert!(m.symbols() <= mu, "mu={mu}: {}", m.symbols());
            assert!(m.capacity() <= ch.capacity() + 1e-15);
        }
    }

    #[test]
    fn thresholds_are_capacity_levels() {
        let p = QuantizerParams::new(16).unwrap();
        let t = p.llr_thresholds().unwrap();
        assert_eq!(t[0], 0.0);
        assert_eq!(t[16], f64::INFINITY);
        for k in 1..16 {
            let c = crate::numeric::special::bsc_capacity_from_llr(t[k]);
            assert!((c - k as f64 / 16.0).abs() < 1e-12);
        }
    }

    #[test]
    fn quantized_points_bsc() {
        let p = 0.07;
        let ch = quantize_points(&[(0.5 * (1.0 - p), 0.5 * p), (0.5 * p, 0.5 * (1.0 - p))], QuantizerParams::new(8).unwrap())
            .unwrap();
        assert_eq!(ch.pairs().len(), 1);
        assert!((ch.pairs()[0].0 - (1.0 - p)).abs() < 1e-15);
        assert!((ch.capacity() - (1.0 - binary_entropy(p))).abs() < 1e-14);
    }

    struct Bpsk {
        ch: FadingChannelSpec,
    }

    impl JointDensity for Bpsk {
        fn joint(&self, _: usize, y: f64, h: f64) -> (f64, f64) {
            let s = self.ch.sigma;
            let ph = self.ch.dist.density(h);
            let g = |m: f64| (-(y - m) * (y - m) / (2.0 * s * s)).exp() / ((2.0 * std::f64::consts::PI).sqrt() * s);
            (0.5 * ph * g(h), 0.5 * ph * g(-h))
        }
        fn llr(&self, _: usize, y: f64, h: f64) -> f64 {
            2.0 * y * h / (self.ch.sigma * self.ch.sigma)
        }
        fn inner_range(&self, _: usize, h: f64) -> (f64, f64, f64) {
            let w = h + 10.0 * self.ch.sigma;
            (-w, w, 0.25 * self.ch.sigma)
        }
    }

    #[test]
    fn generic_binning_matches_fading_bpsk() {
        let ch = FadingChannelSpec::from_snr_db(FadingKind::Rayleigh, 5.0, 1.0, 0.0, CsiMode::ReceiverCsi).unwrap();
        let params = QuantizerParams::new(16).unwrap();
        let a = quantize_fading_bpsk(&ch, params).unwrap();
        let b = quantize_by_llr(&Bpsk { ch }, params, GainDomain::Faded(ch.dist)).unwrap();
        assert_eq!(a.pairs().len(), b.pairs().len());
        for (x, y) in a.pairs().iter().zip(b.pairs()) {
            assert!((x.0 - y.0).abs() < 1e-9 && (x.1 - y.1).abs() < 1e-9, "{x:?} {y:?}");
        }
    }

    #[test]
    fn noiseless_channel_is_perfect() {
        struct Clean;
        impl JointDensity for Clean {
            fn joint(&self, _: usize, y: f64, _: f64) -> (f64, f64) {
                if y >= 0.0 {
                    (1.0, 0.0)
                } else {
                    (0.0, 1.0)
                }
            }
            fn inner_range(&self, _: usize, _: f64) -> (f64, f64, f64) {
                (-0.5, 0.5, 0.1)
            }
        }
        let ch = quantize_by_llr(&Clean, QuantizerParams::new(4).unwrap(), GainDomain::None).unwrap();
        assert_eq!(ch.pairs(), &[(1.0, 0.0)]);
        assert_eq!(ch.capacity(), 1.0);
    }

    #[test]
    fn asymmetric_evaluator_is_rejected() {
        struct Skew;
        impl JointDensity for Skew {
            fn joint(&self, _: usize, y: f64, _: f64) -> (f64, f64) {
                if y >= 0.0 {
                    (0.8, 0.2)
                } else {
                    (0.1, 0.9)
                }
            }
            fn inner_range(&self, _: usize, _: f64) -> (f64, f64, f64) {
                (-0.5, 0.5, 0.1)
            }
        }
        let r = quantize_by_llr(&Skew, QuantizerParams::new(4).unwrap(), GainDomain::None);
        assert!(matches!(r, Err(Error::Contract(_))));
    }

    #[test]
    fn quantization_loss_within_one_over_q() {
        let ch = FadingChannelSpec::from_snr_db(FadingKind::Rayleigh, 5.0, 1.0, 0.0, CsiMode::ReceiverCsi).unwrap();
        let c = capacity_csi(&ch, 1e-10).unwrap();
        for q in [4, 16, 64] {
            let cq = quantize_fading_bpsk(&ch, QuantizerParams::new(q).unwrap()).unwrap().capacity();
            let gap = c - cq;
            assert!(gap >= -1e-10 && gap <= 1.0 / q as f64, "Q={q}: gap {gap}");
        }
    }

    #[test]
    fn cdi_quantization_loss_within_one_over_q() {
        let ch = FadingChannelSpec::from_snr_db(FadingKind::Rayleigh, 5.0, 1.0, 0.0, CsiMode::CdiOnly).unwrap();
        let c = crate::fading::capacity_cdi(&ch, 1e-10).unwrap();
        for q in [4, 16, 64] {
            let cq = quantize_cdi(&ch, QuantizerParams::new(q).unwrap()).unwrap().capacity();
            let gap = c - cq;
            assert!(gap >= -1e-8 && gap <= 1.0 / q as f64, "Q={q}: gap {gap}");
        }
        assert!(quantize_cdi(&ch.with_csi(CsiMode::ReceiverCsi), QuantizerParams::new(4).unwrap()).is_err());
        let a = quantize_channel(&ch, QuantizerParams::new(8).unwrap()).unwrap();
        assert_eq!(a, quantize_cdi(&ch, QuantizerParams::new(8).unwrap()).unwrap());
    }

    #[test]
    fn csv_round_trip() {
        let ch = random_channel(7, 1);
        let back = DiscreteBmsc::from_csv(&ch.to_csv()).unwrap();
        assert_eq!(back, ch);
        let tampered = ch.to_csv().replace("# erasure=0e0", "# erasure=1e-3");
        assert!(DiscreteBmsc::from_csv(&tampered).is_err());
    }

    proptest! {
        #[test]
        fn classical_inequalities(seed in 0u64..1000, n in 1usize..30) {
            let ch = random_channel(n, seed);
            let c = ch.capacity();
            let z = ch.bhattacharyya();
            prop_assert!(c + z >= 1.0 - 1e-12);
            prop_assert!(c * c + z * z <= 1.0 + 1e-12);
        }

        #[test]
        fn merge_is_degrading(seed in 0u64..1000, n in 2usize..200, mu in 2usize..40) {
            let ch = random_channel(n, seed);
            let m = degrading_merge(&ch, mu);
            prop_assert!(m.symbols() <= mu.max(ch.symbols().min(mu)));
            prop_assert!(m.capacity() <= ch.capacity() + 1e-14);
            prop_assert!(m.bhattacharyya() >= ch.bhattacharyya() - 1e-14);
        }

        #[test]
        fn canonical_is_idempotent(seed in 0u64..1000, n in 1usize..50) {
            let ch = random_channel(n, seed);
            let again = DiscreteBmsc::canonical(ch.pairs().to_vec(), ch.erasure());
            prop_assert_eq!(again, ch);
        }
    }
}
