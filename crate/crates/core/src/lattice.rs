//! Multilevel polar lattices by Construction D over a one-dimensional
//! binary partition chain, with multistage SC decoding.
//!
//! Points are kept in integer coordinates (units of the top scale):
//! `Σ_ℓ 2^{ℓ−1} lift(u_ℓ G_N) + 2^r z`, where `lift` evaluates the polar
//! transform over the integers.

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::{frozen_map, hard_decision, polar_transform_int, trial_rng, ScEngine};
use crate::construction::{construct_all_depths, select_frozen_for, PolarCodeSpec, SelectionTarget, MAX_M};
use crate::error::{Error, Result};
use crate::fading::FadingDistribution;
use crate::numeric::theta::ln_aliased_gaussian;
use crate::partition::{
    entropy_gap_expectation, expected_gaussian_entropy, level_capacity_direct, mod_capacity, quantize_level_channel,
    uncoded_error_expectation, PartitionChain,
};
use crate::quantizer::QuantizerParams;
use crate::stats::{fmt_sig, wilson_interval, Z95};

/// Absolute tolerance of the VNR decomposition check.
pub const VNR_IDENTITY_TOL: f64 = 1e-6;

/// Quantized level channel and its Bhattacharyya estimates at every depth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelConstruction {
    pub level: usize,
    /// `E_h[C(Λ_{ℓ−1}/Λ_ℓ, σ²/h²)]` by direct quadrature.
    pub capacity: f64,
    pub quantized_capacity: f64,
    pub channel_hash: String,
    pub mu: usize,
    /// `z_by_depth[d]` holds the `2^d` estimates for `N = 2^d`.
    pub z_by_depth: Vec<Vec<f64>>,
}

/// Quantizes and polarizes every level of `chain` up to `N = 2^m`.
///
/// Levels run in parallel. The quantized capacity must lie within `1/Q` below
/// the direct value.
pub fn construct_levels(
    chain: &PartitionChain,
    dist: &FadingDistribution,
    sigma: f64,
    m: usize,
    params: QuantizerParams,
    mu: usize,
) -> Result<Vec<LevelConstruction>> {
    if m > MAX_M {
        return Err(Error::Domain(format!("m = {m} exceeds {MAX_M}")));
    }
    params.validate()?;
    (1..=chain.r)
        .into_par_iter()
        .map(|level| {
            let lc = chain.level(level, *dist, sigma)?;
            let capacity = level_capacity_direct(&lc)?;
            let w = quantize_level_channel(&lc, params)?;
            let quantized_capacity = w.capacity();
            let gap = capacity - quantized_capacity;
            if gap < -1e-6 || gap > 1.0 / params.q as f64 + 1e-6 {
                return Err(Error::Numerical {
                    what: "level quantization cross-check",
                    requested: capacity,
                    achieved: quantized_capacity,
                });
            }
            Ok(LevelConstruction {
                level,
                capacity,
                quantized_capacity,
                channel_hash: w.content_hash(),
                mu,
                z_by_depth: construct_all_depths(&w, m, mu)?,
            })
        })
        .collect()
}

/// One component code of a lattice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelCode {
    pub level: usize,
    pub capacity: f64,
    pub spec: PolarCodeSpec,
}

impl LevelCode {
    /// `C_ℓ − R_ℓ`.
    pub fn eps3(&self) -> f64 {
        self.capacity - self.spec.rate
    }
}

/// Construction-D lattice from nested polar codes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolarLattice {
    pub chain: PartitionChain,
    pub dist: FadingDistribution,
    pub sigma: f64,
    pub levels: Vec<LevelCode>,
    /// Indices removed to make `info(ℓ−1) ⊆ info(ℓ)`.
    pub nesting_corrections: usize,
}

impl PolarLattice {
    pub fn m(&self) -> usize {
        self.levels[0].spec.m
    }

    pub fn n(&self) -> usize {
        1 << self.m()
    }

    pub fn r(&self) -> usize {
        self.levels.len()
    }

    /// `R_C = Σ R_ℓ` in bits per dimension.
    pub fn rate_sum(&self) -> f64 {
        self.levels.iter().map(|l| l.spec.rate).sum()
    }

    /// `log2 V(L) = N(log2 V(Λ′) − R_C)`.
    pub fn log2_volume(&self) -> f64 {
        self.n() as f64 * (self.chain.bottom_scale().log2() - self.rate_sum())
    }

    pub fn info_sizes(&self) -> Vec<usize> {
        self.levels.iter().map(|l| l.spec.info_len()).collect()
    }
}

/// Selects information sets at `N = 2^m` and enforces nesting.
///
/// `targets` has one entry per level, or a single entry used for all.
/// Nesting is enforced from the top level down by intersection, so union
/// bounds can only shrink. A level whose rate exceeds its capacity is a
/// build error.
pub fn assemble_lattice(
    chain: &PartitionChain,
    dist: &FadingDistribution,
    sigma: f64,
    constructions: &[LevelConstruction],
    m: usize,
    targets: &[SelectionTarget],
) -> Result<PolarLattice> {
    let r = chain.r;
    if constructions.len() != r {
        return Err(Error::Contract(format!("{} level constructions for r = {r}", constructions.len())));
    }
    if targets.len() != r && targets.len() != 1 {
        return Err(Error::Contract(format!("{} targets for r = {r}", targets.len())));
    }
    let mut levels = Vec::with_capacity(r);
    for (i, c) in constructions.iter().enumerate() {
        if c.level != i + 1 {
            return Err(Error::Contract("level constructions out of order".into()));
        }
        let z = c.z_by_depth.get(m).ok_or_else(|| Error::Contract(format!("construction lacks depth {m}")))?;
        let target = targets[if targets.len() == 1 { 0 } else { i }];
        let spec = select_frozen_for(z, target, c.mu, c.channel_hash.clone())?;
        levels.push(LevelCode { level: c.level, capacity: c.capacity, spec });
    }
    let mut corrections = 0;
    for l in (1..r).rev() {
        let (lower, upper) = levels.split_at_mut(l);
        let (low, up) = (&mut lower[l - 1].spec, &upper[0].spec);
        for i in 0..low.frozen.len() {
            if !low.frozen[i] && up.frozen[i] {
                low.frozen[i] = true;
                corrections += 1;
            }
        }
        low.refresh();
    }
    for lv in &levels {
        if lv.eps3() < 0.0 {
            return Err(Error::Build(format!(
                "level {} rate {} exceeds its capacity {}",
                lv.level, lv.spec.rate, lv.capacity
            )));
        }
    }
    Ok(PolarLattice { chain: *chain, dist: *dist, sigma, levels, nesting_corrections: corrections })
}

/// [`construct_levels`] followed by [`assemble_lattice`] at the full depth.
pub fn build_lattice(
    chain: &PartitionChain,
    dist: &FadingDistribution,
    sigma: f64,
    m: usize,
    params: QuantizerParams,
    mu: usize,
    targets: &[SelectionTarget],
) -> Result<PolarLattice> {
    let c = construct_levels(chain, dist, sigma, m, params, mu)?;
    assemble_lattice(chain, dist, sigma, &c, m, targets)
}

/// Integer coordinates `Σ_ℓ 2^{ℓ−1} lift(u_ℓ G_N) + 2^r z` from full `u`
/// vectors (information and frozen positions).
pub fn lattice_point(u_levels: &[Vec<u8>], z: &[i64]) -> Result<Vec<i64>> {
    let n = z.len();
    let r = u_levels.len();
    let mut x: Vec<i64> = z.iter().map(|&v| v << r).collect();
    for (l, u) in u_levels.iter().enumerate() {
        if u.len() != n {
            return Err(Error::Contract(format!("level {} has {} bits, expected {n}", l + 1, u.len())));
        }
        let lift = polar_transform_int(&u.iter().map(|&b| i64::from(b & 1)).collect::<Vec<_>>());
        for (xi, li) in x.iter_mut().zip(&lift) {
            *xi += li << l;
        }
    }
    Ok(x)
}

/// Lattice point scaled by the top scale. Frozen positions are zero.
pub fn encode_lattice(lat: &PolarLattice, info_bits: &[Vec<u8>], z: &[i64]) -> Result<Vec<f64>> {
    if info_bits.len() != lat.r() {
        return Err(Error::Contract(format!("{} bit vectors for {} levels", info_bits.len(), lat.r())));
    }
    if z.len() != lat.n() {
        return Err(Error::Contract(format!("integer part has length {}, expected {}", z.len(), lat.n())));
    }
    let mut u_levels = Vec::with_capacity(lat.r());
    for (lv, bits) in lat.levels.iter().zip(info_bits) {
        u_levels.push(crate::codec::assemble_u(&lv.spec, bits, crate::codec::FrozenFill::Zeros)?);
    }
    let x = lattice_point(&u_levels, z)?;
    Ok(x.iter().map(|&v| v as f64 * lat.chain.top_scale).collect())
}

/// LLR of the parity of the nearest integer to `t` under `N(0, s²)` noise,
/// i.e. the `ℤ/2ℤ` level channel in normalized units.
pub fn parity_llr(t: f64, s: f64) -> f64 {
    if s == 0.0 {
        return if t.round().rem_euclid(2.0) == 0.0 { f64::INFINITY } else { f64::NEG_INFINITY };
    }
    let l = ln_aliased_gaussian(t, s, 2.0) - ln_aliased_gaussian(t - 1.0, s, 2.0);
    if l.is_nan() {
        0.0
    } else {
        l
    }
}

/// Output of [`multistage_decode`].
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeDecision {
    /// Full `u` estimates per level.
    pub u: Vec<Vec<u8>>,
    pub z: Vec<i64>,
}

impl LatticeDecision {
    /// Information bits per level.
    pub fn info_bits(&self, lat: &PolarLattice) -> Vec<Vec<u8>> {
        lat.levels.iter().zip(&self.u).map(|(lv, u)| lv.spec.info_indices().iter().map(|&i| u[i]).collect()).collect()
    }
}

/// Reusable decoder buffers for one worker.
pub struct MultistageDecoder {
    engine: ScEngine<1>,
    llr: Vec<[f64; 1]>,
    resid: Vec<f64>,
    scale: Vec<f64>,
    fixed: Vec<Vec<Option<u8>>>,
}

impl MultistageDecoder {
    pub fn new(lat: &PolarLattice) -> Self {
        let n = lat.n();
        let fixed = lat
            .levels
            .iter()
            .map(|lv| frozen_map(&lv.spec, &vec![0; n - lv.spec.info_len()]).expect("sizes match"))
            .collect();
        Self { engine: ScEngine::new(n), llr: vec![[0.0]; n], resid: vec![0.0; n], scale: vec![0.0; n], fixed }
    }

    /// Decodes `y = h·x + noise` with receiver CSI. With `genie`, each level
    /// is decoded after subtracting the true lower levels instead of the
    /// decided ones.
    pub fn decode(
        &mut self,
        lat: &PolarLattice,
        y: &[f64],
        h: &[f64],
        genie: Option<&[Vec<u8>]>,
    ) -> Result<LatticeDecision> {
        let n = lat.n();
        if y.len() != n || h.len() != n {
            return Err(Error::Contract(format!("expected {n} outputs and gains")));
        }
        let v = lat.chain.top_scale;
        for j in 0..n {
            self.resid[j] = y[j] / (h[j] * v);
            self.scale[j] = lat.sigma / (h[j] * v);
        }
        let mut u_all = Vec::with_capacity(lat.r());
        for (l, fixed) in self.fixed.iter().enumerate() {
            for j in 0..n {
                self.llr[j][0] = parity_llr(self.resid[j], self.scale[j]);
            }
            let mut u = vec![0u8; n];
            self.engine.run(&self.llr, &mut u, |i, x| fixed[i].unwrap_or_else(|| hard_decision(x[0])));
            let src = genie.map_or(&u, |g| &g[l]);
            let lift = polar_transform_int(&src.iter().map(|&b| i64::from(b)).collect::<Vec<_>>());
            for j in 0..n {
                self.resid[j] = 0.5 * (self.resid[j] - lift[j] as f64);
                self.scale[j] *= 0.5;
            }
            u_all.push(u);
        }
        let z = self.resid.iter().map(|&t| t.round() as i64).collect();
        Ok(LatticeDecision { u: u_all, z })
    }
}

/// Multistage decoding with receiver CSI; frozen bits are zero.
pub fn multistage_decode(lat: &PolarLattice, y: &[f64], h: &[f64]) -> Result<LatticeDecision> {
    MultistageDecoder::new(lat).decode(lat, y, h, None)
}

/// Union bound on the multistage block error probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticeBound {
    /// `Σ_{i∈info_ℓ} Z_ℓ[i]` per level.
    pub per_level: Vec<f64>,
    pub z_sum: f64,
    /// `N · E_h[P_e(Λ′, σ²/h²)]`.
    pub uncoded_term: f64,
    pub total: f64,
}

pub fn union_bound(lat: &PolarLattice) -> Result<LatticeBound> {
    let per_level: Vec<f64> = lat.levels.iter().map(|l| l.spec.union_bound).collect();
    let z_sum = per_level.iter().sum();
    let pe = uncoded_error_expectation(lat.chain.bottom_scale(), &lat.dist, lat.sigma, lat.chain.h_s.max(0.0))?;
    let uncoded_term = lat.n() as f64 * pe.exact;
    Ok(LatticeBound { per_level, z_sum, uncoded_term, total: z_sum + uncoded_term })
}

/// Logarithmic VNR gap and its decomposition (bits, `n = 1`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VnrGap {
    pub rate_sum: f64,
    /// `log2(γ_L(σ)/(2πe)·2σ_h²/e^ζ)` computed from volumes.
    pub log_vnr_gap: f64,
    pub eps1: f64,
    pub eps2: f64,
    pub eps3: f64,
    /// `2(ε1 + ε3)`.
    pub bound: f64,
}

/// Computes the VNR gap directly and through `2(ε1 − ε2 + ε3)`; the two
/// must agree within [`VNR_IDENTITY_TOL`].
pub fn vnr_gap(lat: &PolarLattice) -> Result<VnrGap> {
    let rate_sum = lat.rate_sum();
    let h_gauss = expected_gaussian_entropy(&lat.dist, lat.sigma)?;
    let log_vnr_gap = -2.0 * rate_sum + 2.0 * lat.chain.bottom_scale().log2() - 2.0 * h_gauss;
    let eps1 = mod_capacity(lat.chain.top_scale, &lat.dist, lat.sigma)?;
    let eps2 = entropy_gap_expectation(lat.chain.bottom_scale(), &lat.dist, lat.sigma)?;
    let eps3 = lat.levels.iter().map(|l| l.capacity).sum::<f64>() - rate_sum;
    let via = 2.0 * (eps1 - eps2 + eps3);
    if (via - log_vnr_gap).abs() > VNR_IDENTITY_TOL {
        return Err(Error::Numerical { what: "VNR decomposition", requested: log_vnr_gap, achieved: via });
    }
    // quadrature noise can push tiny terms a hair below zero
    let (eps1, eps2) = (eps1.max(0.0), eps2.max(0.0));
    if eps3 < 0.0 {
        return Err(Error::Build(format!("total rate {rate_sum} exceeds the level capacities")));
    }
    Ok(VnrGap { rate_sum, log_vnr_gap, eps1, eps2, eps3, bound: 2.0 * (eps1 + eps3) })
}

/// Monte Carlo outcome for a lattice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticeStats {
    pub trials: u64,
    pub frame_errors: u64,
    /// Frames whose first wrong level is `ℓ` (index `ℓ−1`); the last entry
    /// counts frames wrong only in the integer part.
    pub first_error_level: Vec<u64>,
    /// Genie-aided errors per level (true lower levels subtracted).
    pub genie_level_errors: Vec<u64>,
    pub fer: f64,
    pub fer_ci: (f64, f64),
}

/// Simulates multistage decoding at the lattice's `σ` and fading law.
///
/// Information bits and `z ∈ [−z_range, z_range]^N` are uniform. Each trial
/// decodes twice: multistage (for the frame error) and genie-aided (for the
/// per-level counts).
pub fn simulate_lattice(lat: &PolarLattice, trials: u64, seed: u64, z_range: i64) -> Result<LatticeStats> {
    if trials == 0 {
        return Err(Error::Domain("trials must be >= 1".into()));
    }
    if z_range < 0 {
        return Err(Error::Domain("z_range must be >= 0".into()));
    }
    let n = lat.n();
    let r = lat.r();
    let infos: Vec<Vec<usize>> = lat.levels.iter().map(|l| l.spec.info_indices()).collect();
    let rows: Vec<(Option<usize>, Vec<bool>)> = (0..trials)
        .into_par_iter()
        .map_init(
            || MultistageDecoder::new(lat),
            |dec, t| {
                let mut rng = trial_rng(seed, t);
                let bits: Vec<Vec<u8>> =
                    infos.iter().map(|ix| (0..ix.len()).map(|_| (rng.next_u32() & 1) as u8).collect()).collect();
                let z: Vec<i64> = (0..n).map(|_| rng.random_range(-z_range..=z_range)).collect();
                let h: Vec<f64> = (0..n).map(|_| lat.dist.sample(&mut rng)).collect();
                let noise: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                let x = encode_lattice(lat, &bits, &z).expect("sizes match");
                let y: Vec<f64> = (0..n).map(|j| h[j] * x[j] + lat.sigma * noise[j]).collect();
                let d = dec.decode(lat, &y, &h, None).expect("sizes match");
                let wrong = |u: &[u8], l: usize| infos[l].iter().zip(&bits[l]).any(|(&i, &b)| u[i] != b);
                let first = (0..r).find(|&l| wrong(&d.u[l], l)).or_else(|| (d.z != z).then_some(r));
                let truth: Vec<Vec<u8>> = lat
                    .levels
                    .iter()
                    .zip(&bits)
                    .map(|(lv, b)| crate::codec::assemble_u(&lv.spec, b, crate::codec::FrozenFill::Zeros).expect("sizes"))
                    .collect();
                let g = dec.decode(lat, &y, &h, Some(&truth)).expect("sizes match");
                let genie = (0..r).map(|l| wrong(&g.u[l], l)).collect();
                (first, genie)
            },
        )
        .collect();
    let mut first_error_level = vec![0u64; r + 1];
    let mut genie_level_errors = vec![0u64; r];
    for (first, genie) in &rows {
        if let Some(l) = first {
            first_error_level[*l] += 1;
        }
        for (c, &e) in genie_level_errors.iter_mut().zip(genie) {
            *c += u64::from(e);
        }
    }
    let frame_errors = first_error_level.iter().sum();
    Ok(LatticeStats {
        trials,
        frame_errors,
        first_error_level,
        genie_level_errors,
        fer: frame_errors as f64 / trials as f64,
        fer_ci: wilson_interval(frame_errors, trials, Z95),
    })
}

pub const LATTICE_LEVEL_CSV_HEADER: &str = "level,rate,capacity,z_sum,eps3";

/// Per-level rows in [`LATTICE_LEVEL_CSV_HEADER`] order.
pub fn lattice_level_csv(lat: &PolarLattice) -> String {
    let mut out = format!("{LATTICE_LEVEL_CSV_HEADER}\n");
    for l in &lat.levels {
        out += &format!(
            "{},{},{},{},{}\n",
            l.level,
            fmt_sig(l.spec.rate),
            fmt_sig(l.capacity),
            fmt_sig(l.spec.union_bound),
            fmt_sig(l.eps3())
        );
    }
    out
}

/// Lattice-level quantities as `quantity,value` rows.
pub fn lattice_summary_csv(lat: &PolarLattice, gap: &VnrGap, bound: &LatticeBound) -> String {
    let rows = [
        ("N", lat.n() as f64),
        ("r", lat.r() as f64),
        ("top_scale", lat.chain.top_scale),
        ("R_C", gap.rate_sum),
        ("vnr_gap_bits", gap.log_vnr_gap),
        ("eps1", gap.eps1),
        ("eps2", gap.eps2),
        ("eps3", gap.eps3),
        ("z_sum", bound.z_sum),
        ("uncoded_term", bound.uncoded_term),
        ("union_bound", bound.total),
        ("nesting_corrections", lat.nesting_corrections as f64),
    ];
    let mut out = String::from("quantity,value\n");
    for (k, v) in rows {
        out += &format!("{k},{}\n", fmt_sig(v));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::sc_decode;
    use crate::partition::LevelFadingChannel;
    use rand::SeedableRng;
    use std::sync::OnceLock;

    fn dist() -> FadingDistribution {
        FadingDistribution::rayleigh(1.2575).unwrap()
    }

    fn fig8_chain() -> PartitionChain {
        PartitionChain::new(1.0, 4).unwrap()
    }

    /// ℤ/…/16ℤ at σ = 1, Q = 64, μ = 128, up to N = 2^10.
    fn shared() -> &'static Vec<LevelConstruction> {
        static C: OnceLock<Vec<LevelConstruction>> = OnceLock::new();
        C.get_or_init(|| construct_levels(&fig8_chain(), &dist(), 1.0, 10, QuantizerParams::new(64).unwrap(), 128).unwrap())
    }

    fn lattice(m: usize, target: SelectionTarget) -> PolarLattice {
        assemble_lattice(&fig8_chain(), &dist(), 1.0, shared(), m, &[target]).unwrap()
    }

    #[test]
    fn nesting_and_nonnegative_eps3() {
        let lat = lattice(10, SelectionTarget::Budget(1e-3));
        for w in lat.levels.windows(2) {
            for i in 0..lat.n() {
                assert!(w[0].spec.frozen[i] || !w[1].spec.frozen[i]);
            }
        }
        assert!(lat.levels.iter().all(|l| l.eps3() >= 0.0));
        let sizes = lat.info_sizes();
        assert!(sizes.windows(2).all(|w| w[0] <= w[1]), "{sizes:?}");
    }

    #[test]
    fn rate_above_capacity_is_a_build_error() {
        let e = assemble_lattice(&fig8_chain(), &dist(), 1.0, shared(), 6, &[SelectionTarget::Rate(0.5)]);
        assert!(matches!(e, Err(Error::Build(_))));
    }

    #[test]
    fn zero_input_encodes_to_zero_and_reduces_mod_bottom() {
        let lat = lattice(6, SelectionTarget::Budget(1e-2));
        let zero: Vec<Vec<u8>> = lat.info_sizes().iter().map(|&k| vec![0; k]).collect();
        assert!(encode_lattice(&lat, &zero, &vec![0; 64]).unwrap().iter().all(|&x| x == 0.0));
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let bits: Vec<Vec<u8>> = lat.info_sizes().iter().map(|&k| (0..k).map(|_| rng.random_range(0..2)).collect()).collect();
        let z: Vec<i64> = (0..64).map(|_| rng.random_range(-5..=5)).collect();
        let x = encode_lattice(&lat, &bits, &z).unwrap();
        let x0 = encode_lattice(&lat, &bits, &vec![0; 64]).unwrap();
        for (a, b) in x.iter().zip(&x0) {
            assert_eq!((a - b).rem_euclid(16.0), 0.0);
        }
        // mod 2: the first-level codeword
        let u1 = crate::codec::assemble_u(&lat.levels[0].spec, &bits[0], crate::codec::FrozenFill::Zeros).unwrap();
        let mut c1 = u1.clone();
        crate::codec::polar_transform(&mut c1);
        for (a, &c) in x.iter().zip(&c1) {
            assert_eq!((*a as i64).rem_euclid(2), i64::from(c));
        }
    }

    #[test]
    fn differences_of_points_decode_at_zero_noise() {
        let mut lat = lattice(6, SelectionTarget::Budget(1e-2));
        lat.sigma = 0.0;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let h = vec![1.0; 64];
        for _ in 0..20 {
            let mut draw = || -> (Vec<Vec<u8>>, Vec<i64>) {
                let b = lat.info_sizes().iter().map(|&k| (0..k).map(|_| rng.random_range(0..2)).collect()).collect();
                (b, (0..64).map(|_| rng.random_range(-3..=3)).collect())
            };
            let (b1, z1) = draw();
            let (b2, z2) = draw();
            let x1 = encode_lattice(&lat, &b1, &z1).unwrap();
            let x2 = encode_lattice(&lat, &b2, &z2).unwrap();
            let d: Vec<f64> = x1.iter().zip(&x2).map(|(a, b)| a - b).collect();
            let dec = multistage_decode(&lat, &d, &h).unwrap();
            let rebuilt = lattice_point(&dec.u, &dec.z).unwrap();
            for (a, b) in rebuilt.iter().zip(&d) {
                assert_eq!(*a as f64, *b);
            }
        }
    }

    #[test]
    fn zero_noise_recovers_every_level() {
        let mut lat = lattice(8, SelectionTarget::Budget(1e-2));
        lat.sigma = 0.0;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let bits: Vec<Vec<u8>> =
                lat.info_sizes().iter().map(|&k| (0..k).map(|_| rng.random_range(0..2)).collect()).collect();
            let z: Vec<i64> = (0..256).map(|_| rng.random_range(-4..=4)).collect();
            let h: Vec<f64> = (0..256).map(|_| dist().sample(&mut rng)).collect();
            let x = encode_lattice(&lat, &bits, &z).unwrap();
            let y: Vec<f64> = x.iter().zip(&h).map(|(a, b)| a * b).collect();
            let d = multistage_decode(&lat, &y, &h).unwrap();
            assert_eq!(d.info_bits(&lat), bits);
            assert_eq!(d.z, z);
        }
    }

    #[test]
    fn single_level_matches_sc_decoder() {
        let chain = PartitionChain::new(1.0, 1).unwrap();
        let c = vec![shared()[0].clone()];
        let lat = assemble_lattice(&chain, &dist(), 1.0, &c, 8, &[SelectionTarget::Budget(1e-2)]).unwrap();
        let lc = LevelFadingChannel { chain, level: 1, sigma: 1.0, dist: dist() };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(13);
        for _ in 0..20 {
            let bits: Vec<u8> = (0..lat.info_sizes()[0]).map(|_| rng.random_range(0..2)).collect();
            let z = vec![0i64; 256];
            let h: Vec<f64> = (0..256).map(|_| dist().sample(&mut rng)).collect();
            let x = encode_lattice(&lat, &[bits], &z).unwrap();
            let y: Vec<f64> = (0..256).map(|j| h[j] * x[j] + rng.sample::<f64, _>(StandardNormal)).collect();
            let d = multistage_decode(&lat, &y, &h).unwrap();
            let llr: Vec<f64> = (0..256).map(|j| lc.llr((y[j] / h[j]).rem_euclid(2.0), h[j])).collect();
            let spec = &lat.levels[0].spec;
            let u = sc_decode(spec, &llr, &vec![0; 256 - spec.info_len()]).unwrap();
            assert_eq!(d.u[0], u);
        }
    }

    #[test]
    fn union_bound_parts() {
        let lat = lattice(10, SelectionTarget::Budget(1e-3));
        let b = union_bound(&lat).unwrap();
        let sum: f64 = lat.levels.iter().map(|l| l.spec.union_bound).sum();
        assert_eq!(b.z_sum, sum);
        let zero = lattice(10, SelectionTarget::Rate(0.0));
        let bz = union_bound(&zero).unwrap();
        assert_eq!(bz.z_sum, 0.0);
        assert_eq!(bz.total, bz.uncoded_term);
        // removing an information index lowers the bound
        let mut fewer = lat.clone();
        let top = fewer.levels.last_mut().unwrap();
        let i = top.spec.info_indices()[0];
        top.spec.frozen[i] = true;
        top.spec.refresh();
        assert!(union_bound(&fewer).unwrap().total < b.total);
    }

    #[test]
    fn vnr_identity_holds() {
        let lat = lattice(10, SelectionTarget::Budget(1e-3));
        let g = vnr_gap(&lat).unwrap();
        assert!(g.eps1 >= 0.0 && g.eps2 >= 0.0 && g.eps3 >= 0.0);
        assert!(g.log_vnr_gap <= g.bound + 1e-9);
    }

    #[test]
    fn simulated_fer_within_union_bound() {
        let lat = lattice(8, SelectionTarget::Budget(0.05));
        let b = union_bound(&lat).unwrap();
        let s = simulate_lattice(&lat, 2000, 17, 4).unwrap();
        assert!(s.fer_ci.0 <= b.total, "{s:?} vs {b:?}");
        assert_eq!(s.first_error_level.len(), 5);
        // determinism
        assert_eq!(simulate_lattice(&lat, 200, 4, 4).unwrap(), simulate_lattice(&lat, 200, 4, 4).unwrap());
    }

    #[test]
    fn csv_shapes() {
        let lat = lattice(6, SelectionTarget::Budget(1e-2));
        let csv = lattice_level_csv(&lat);
        assert_eq!(csv.lines().count(), 5);
        assert!(csv.starts_with(LATTICE_LEVEL_CSV_HEADER));
    }
}
