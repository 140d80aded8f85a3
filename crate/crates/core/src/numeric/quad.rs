//! Adaptive Gauss–Kronrod quadrature (7/15 point pair) for scalar and
//! vector-valued integrands, plus a fixed 8-point Gauss–Legendre cell rule.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

const GL8_X: [f64; 4] = [
    0.183_434_642_495_649_8,
    0.525_532_409_916_329_0,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_2,
];
const GL8_W: [f64; 4] = [
    0.362_683_783_378_362_0,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_5,
    0.101_228_536_290_376_3,
];

/// Tolerances and limits for adaptive integration.
#[derive(Debug, Clone, Copy)]
pub struct QuadConfig {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_intervals: usize,
}

impl QuadConfig {
    pub const fn new(abs_tol: f64, rel_tol: f64) -> Self {
        Self {
            abs_tol,
            rel_tol,
            max_intervals: 4000,
        }
    }

    pub const fn with_max_intervals(mut self, n: usize) -> Self {
        self.max_intervals = n;
        self
    }
}

impl Default for QuadConfig {
    fn default() -> Self {
        Self::new(1e-12, 1e-12)
    }
}

/// Result of an adaptive integration: value and estimated absolute error.
#[derive(Debug, Clone, Copy)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
}

fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        kronrod += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

/// Integrates `f` over `[a, b]`, bisecting the segment with the largest error
/// estimate until the total error meets `cfg`.
pub fn integrate<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    cfg: QuadConfig,
) -> Result<Estimate> {
    if a == b {
        return Ok(Estimate { value: 0.0, error: 0.0 });
    }
    let (value, error) = gk15(&mut f, a, b);
    let mut heap = BinaryHeap::new();
    heap.push(Segment { a, b, value, error });
    let mut total = value;
    let mut total_err = error;
    let mut count = 1;
    loop {
        let target = cfg.abs_tol.max(cfg.rel_tol * total.abs());
        if total_err <= target {
            break;
        }
        if count >= cfg.max_intervals {
            return Err(Error::Numerical {
                what: "adaptive quadrature",
                requested: target,
                achieved: total_err,
            });
        }
        let seg = heap.pop().expect("heap is never empty");
        let mid = 0.5 * (seg.a + seg.b);
        if mid <= seg.a || mid >= seg.b {
            // Interval can no longer be split in double precision.
            heap.push(Segment { error: 0.0, ..seg });
            total_err = heap.iter().map(|s| s.error).sum();
            if total_err <= target {
                break;
            }
            continue;
        }
        let (v1, e1) = gk15(&mut f, seg.a, mid);
        let (v2, e2) = gk15(&mut f, mid, seg.b);
        total += v1 + v2 - seg.value;
        total_err += e1 + e2 - seg.error;
        heap.push(Segment { a: seg.a, b: mid, value: v1, error: e1 });
        heap.push(Segment { a: mid, b: seg.b, value: v2, error: e2 });
        count += 1;
        if count % 64 == 0 {
            // Re-sum to shed accumulated rounding in the running totals.
            total = heap.iter().map(|s| s.value).sum();
            total_err = heap.iter().map(|s| s.error).sum();
        }
    }
    let value = heap.iter().map(|s| s.value).sum();
    let error = heap.iter().map(|s| s.error).sum();
    Ok(Estimate { value, error })
}

/// Integrates over consecutive breakpoints, summing the pieces. Each piece
/// gets an equal share of the absolute tolerance.
pub fn integrate_pieces<F: FnMut(f64) -> f64>(
    mut f: F,
    points: &[f64],
    cfg: QuadConfig,
) -> Result<Estimate> {
    let pieces = points.len().saturating_sub(1).max(1) as f64;
    let piece_cfg = QuadConfig {
        abs_tol: cfg.abs_tol / pieces,
        ..cfg
    };
    let mut out = Estimate { value: 0.0, error: 0.0 };
    for w in points.windows(2) {
        let e = integrate(&mut f, w[0], w[1], piece_cfg)?;
        out.value += e.value;
        out.error += e.error;
    }
    Ok(out)
}

fn gk15_vec<F: FnMut(f64, &mut [f64])>(
    f: &mut F,
    a: f64,
    b: f64,
    buf: &mut [f64],
    kron: &mut [f64],
    gauss: &mut [f64],
) -> f64 {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    kron.iter_mut().for_each(|v| *v = 0.0);
    gauss.iter_mut().for_each(|v| *v = 0.0);
    f(c, buf);
    for k in 0..buf.len() {
        kron[k] += WGK[7] * buf[k];
        gauss[k] += WG[3] * buf[k];
    }
    for j in 0..7 {
        let dx = h * XGK[j];
        for x in [c - dx, c + dx] {
            f(x, buf);
            for k in 0..buf.len() {
                kron[k] += WGK[j] * buf[k];
                if j % 2 == 1 {
                    gauss[k] += WG[j / 2] * buf[k];
                }
            }
        }
    }
    let mut err = 0.0f64;
    for k in 0..buf.len() {
        kron[k] *= h;
        gauss[k] *= h;
        err = err.max((kron[k] - gauss[k]).abs());
    }
    err
}

struct VecSegment {
    a: f64,
    b: f64,
    values: Vec<f64>,
    error: f64,
}

impl PartialEq for VecSegment {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for VecSegment {}

impl PartialOrd for VecSegment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for VecSegment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error).then_with(|| other.a.total_cmp(&self.a))
    }
}

/// Adaptive integration of a vector-valued integrand; the error criterion is
/// the largest component error summed over segments, against the tolerance
/// scaled by the largest component of the running total.
pub fn integrate_vec<F: FnMut(f64, &mut [f64])>(
    mut f: F,
    dim: usize,
    a: f64,
    b: f64,
    cfg: QuadConfig,
) -> Result<(Vec<f64>, f64)> {
    let mut buf = vec![0.0; dim];
    let mut kron = vec![0.0; dim];
    let mut gauss = vec![0.0; dim];
    let err = gk15_vec(&mut f, a, b, &mut buf, &mut kron, &mut gauss);
    let mut totals = kron.clone();
    let mut total_err = err;
    let mut heap = BinaryHeap::new();
    heap.push(VecSegment { a, b, values: kron.clone(), error: err });
    let mut count = 1usize;
    let mut since_resum = 0usize;
    loop {
        let scale = totals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let target = cfg.abs_tol.max(cfg.rel_tol * scale);
        if total_err <= target {
            // guard against drift in the running sum
            let exact: f64 = heap.iter().map(|s| s.error).sum();
            if exact <= target {
                break;
            }
            total_err = exact;
            continue;
        }
        if count >= cfg.max_intervals {
            return Err(Error::Numerical { what: "vector adaptive quadrature", requested: target, achieved: total_err });
        }
        let seg = heap.pop().expect("nonempty");
        let mid = 0.5 * (seg.a + seg.b);
        if mid <= seg.a || mid >= seg.b || seg.error == 0.0 {
            total_err -= seg.error;
            heap.push(VecSegment { error: 0.0, ..seg });
            if heap.peek().is_some_and(|s| s.error == 0.0) {
                break;
            }
            continue;
        }
        let e1 = gk15_vec(&mut f, seg.a, mid, &mut buf, &mut kron, &mut gauss);
        let left = VecSegment { a: seg.a, b: mid, values: kron.clone(), error: e1 };
        let e2 = gk15_vec(&mut f, mid, seg.b, &mut buf, &mut kron, &mut gauss);
        let right = VecSegment { a: mid, b: seg.b, values: kron.clone(), error: e2 };
        for ((t, o), (l, r)) in totals.iter_mut().zip(&seg.values).zip(left.values.iter().zip(&right.values)) {
            *t += l + r - o;
        }
        total_err += e1 + e2 - seg.error;
        heap.push(left);
        heap.push(right);
        count += 1;
        since_resum += 1;
        if since_resum >= 256 {
            since_resum = 0;
            total_err = heap.iter().map(|s| s.error).sum();
        }
    }
    // Sum in left-to-right order so results do not depend on refinement history order.
    let mut segs = heap.into_vec();
    segs.sort_by(|x, y| x.a.total_cmp(&y.a));
    let mut out = vec![0.0; dim];
    let mut err = 0.0;
    for s in &segs {
        for (o, v) in out.iter_mut().zip(&s.values) {
            *o += v;
        }
        err += s.error;
    }
    Ok((out, err))
}

/// Fixed 8-point Gauss–Legendre rule on `[a, b]`.
pub fn gauss_legendre8<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64) -> f64 {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut acc = 0.0;
    for (x, w) in GL8_X.iter().zip(GL8_W.iter()) {
        acc += w * (f(c - h * x) + f(c + h * x));
    }
    acc * h
}

/// Nodes and weights of the 8-point Gauss–Legendre rule mapped to `[a, b]`.
pub fn gauss_legendre8_nodes(a: f64, b: f64) -> [(f64, f64); 8] {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut out = [(0.0, 0.0); 8];
    for k in 0..4 {
        out[2 * k] = (c - h * GL8_X[k], h * GL8_W[k]);
        out[2 * k + 1] = (c + h * GL8_X[k], h * GL8_W[k]);
    }
    out
}
