//! Acceptance criteria: one PASS/FAIL line each; exits non-zero on failure.

use std::time::Instant;

use polar_fading::codec::{polar_transform, simulate_link};
use polar_fading::construction::{construct, construct_all_depths, select_frozen_for, SelectionTarget, MU_UNBOUNDED};
use polar_fading::fading::{
    capacity_cdi, capacity_csi, capacity_rician_csi, ergodic_capacity_power, CsiMode, FadingChannelSpec,
    FadingDistribution, FadingKind,
};
use polar_fading::lattice::{build_lattice, vnr_gap, VNR_IDENTITY_TOL};
use polar_fading::partition::{level_capacity_direct, PartitionChain};
use polar_fading::quantizer::{quantize_cdi, quantize_fading_bpsk, DiscreteBmsc, QuantizerParams};
use polar_fading::shaping::{
    assemble_shaped, construct_shaped_levels, level_mutual_informations, out_of_voronoi_probability,
    shaped_union_bound, shaping_distribution_test, DiscreteGaussian, LatticeGaussianSpec, ShapedLevelConstruction,
    DEFAULT_SHAPING_THETA,
};

const SIGMA_H: f64 = 1.2575;

type Outcome = Result<String, String>;

fn rayleigh() -> FadingDistribution {
    FadingDistribution::rayleigh(SIGMA_H).unwrap()
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn e<E: std::fmt::Display>(x: E) -> String {
    x.to_string()
}

fn c1_capacities() -> Outcome {
    let csi = FadingChannelSpec::from_snr_db(FadingKind::Rayleigh, 5.0, 1.0, 0.0, CsiMode::ReceiverCsi).map_err(e)?;
    let a = capacity_csi(&csi, 1e-9).map_err(e)?;
    let b = capacity_cdi(&csi.with_csi(CsiMode::CdiOnly), 1e-9).map_err(e)?;
    let ric = FadingChannelSpec::from_snr_db(FadingKind::Rician, 5.0, 1.0, 1.0, CsiMode::ReceiverCsi).map_err(e)?;
    let c = capacity_rician_csi(&ric, 1e-9).map_err(e)?;
    let ok = (a - 0.6709).abs() <= 0.002 && (b - 0.6352).abs() <= 0.002 && (c - 0.7326).abs() <= 0.002;
    check(ok, format!("CSI {a:.5} (0.6709), CDI {b:.5} (0.6352), Rician {c:.5} (0.7326), tol 0.002"))
}

fn c2_quantization() -> Outcome {
    let params = QuantizerParams::new(128).map_err(e)?;
    let mut worst = (f64::INFINITY, f64::NEG_INFINITY);
    for db in 0..=10 {
        let ch =
            FadingChannelSpec::from_snr_db(FadingKind::Rayleigh, db as f64, 1.0, 0.0, CsiMode::ReceiverCsi).map_err(e)?;
        let c = capacity_csi(&ch, 1e-10).map_err(e)?;
        let cq = quantize_fading_bpsk(&ch, params).map_err(e)?.capacity();
        let gap = c - cq;
        worst = (worst.0.min(gap), worst.1.max(gap));
    }
    check(
        worst.0 >= 0.0 && worst.1 <= 1.0 / 128.0,
        format!("C - C_Q over 0..10 dB in [{:.3e}, {:.3e}], bound 1/128 = {:.3e}", worst.0, worst.1, 1.0 / 128.0),
    )
}

fn c3_level_capacities() -> Outcome {
    let chain = PartitionChain::new(1.0, 4).map_err(e)?;
    let want = [0.1172, 0.4929, 0.8200, 0.9500];
    let mut got = Vec::new();
    for l in 1..=4 {
        got.push(level_capacity_direct(&chain.level(l, rayleigh(), 1.0).map_err(e)?).map_err(e)?);
    }
    let ok = got.iter().zip(want).all(|(g, w)| (g - w).abs() <= 0.003);
    check(ok, format!("levels {got:.5?} vs {want:?}, tol 0.003"))
}

fn c4_shaped_mi() -> Outcome {
    let dg = DiscreteGaussian::new(LatticeGaussianSpec::new(1.0, 3.0).map_err(e)?).map_err(e)?;
    let chain = PartitionChain::new(1.0, 5).map_err(e)?;
    let mi = level_mutual_informations(&dg, &chain, &rayleigh(), 1.0).map_err(e)?;
    let erg = ergodic_capacity_power(&rayleigh(), 1.0, dg.power).map_err(e)?;
    let want = [0.1213, 0.5105, 0.8437, 0.5859, 0.0307];
    let ok = mi.iter().zip(want).all(|(g, w)| (g - w).abs() <= 0.01) && (erg - 2.0967).abs() <= 0.001;
    check(ok, format!("level MIs {mi:.4?} vs {want:?} (tol 0.01); ergodic {erg:.5} vs 2.0967 (tol 0.001)"))
}

/// `Z(W_N^{(i)})` by enumerating every input and output sequence.
fn exhaustive_z(w: &[(f64, f64)], m: usize) -> Vec<f64> {
    let n = 1usize << m;
    // outputs: y_{2p} has (W(y|0), W(y|1)) = pair p, y_{2p+1} is its conjugate
    let out: Vec<(f64, f64)> = w.iter().flat_map(|&(a, b)| [(a, b), (b, a)]).collect();
    let q = out.len();
    let total_y = q.pow(n as u32);
    let mut x_of_u = Vec::with_capacity(1 << n);
    for idx in 0..(1usize << n) {
        let mut u: Vec<u8> = (0..n).map(|j| ((idx >> (n - 1 - j)) & 1) as u8).collect();
        polar_transform(&mut u);
        x_of_u.push(u);
    }
    // Neumaier-compensated totals: 4^8 outputs would otherwise cost ~1e-11
    let mut z = vec![(0.0f64, 0.0f64); n];
    let mut p = vec![0.0; 1 << n];
    let mut y = vec![0usize; n];
    for yi in 0..total_y {
        let mut r = yi;
        for s in y.iter_mut() {
            *s = r % q;
            r /= q;
        }
        for (idx, x) in x_of_u.iter().enumerate() {
            let mut prod = 1.0 / (1u64 << n) as f64;
            for j in 0..n {
                let (a, b) = out[y[j]];
                prod *= if x[j] == 0 { a } else { b };
            }
            p[idx] = prod;
        }
        // p over prefixes of length n; marginalize the suffix one bit at a time
        let mut cur = p.clone();
        for i in (0..n).rev() {
            let term: f64 = (0..(1usize << i)).map(|pre| 2.0 * (cur[2 * pre] * cur[2 * pre + 1]).sqrt()).sum();
            let (sum, comp) = &mut z[i];
            let t = *sum + term;
            *comp += if sum.abs() >= term.abs() { (*sum - t) + term } else { (term - t) + *sum };
            *sum = t;
            cur = (0..(1usize << i)).map(|pre| cur[2 * pre] + cur[2 * pre + 1]).collect();
        }
    }
    z.into_iter().map(|(s, c)| s + c).collect()
}

fn c5_construction_oracle() -> Outcome {
    let pairs = [(0.42, 0.08), (0.3, 0.2)];
    let w = DiscreteBmsc::new(pairs.to_vec(), 0.0).map_err(e)?;
    let mut worst: f64 = 0.0;
    for m in 1..=3 {
        let got = construct(&w, m, MU_UNBOUNDED).map_err(e)?;
        let want = exhaustive_z(&pairs, m);
        for (a, b) in got.iter().zip(&want) {
            worst = worst.max((a - b).abs());
        }
    }
    check(worst <= 1e-12, format!("4-symbol channel, N = 2, 4, 8, mu unbounded: max |dZ| = {worst:.2e}"))
}

fn c6_bec() -> Outcome {
    let mut worst: f64 = 0.0;
    for &eps in &[0.1, 0.3, 0.5, 0.77] {
        let all = construct_all_depths(&DiscreteBmsc::bec(eps).map_err(e)?, 10, MU_UNBOUNDED).map_err(e)?;
        let mut z = vec![eps];
        for (d, got) in all.iter().enumerate() {
            if d > 0 {
                z = z.iter().flat_map(|&x| [2.0 * x - x * x, x * x]).collect();
            }
            for (a, b) in got.iter().zip(&z) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    check(worst <= 1e-12, format!("BEC eps in {{0.1, 0.3, 0.5, 0.77}}, N <= 2^10: max |dZ| = {worst:.2e}"))
}

fn c7_sim_vs_bound() -> Outcome {
    let ch = FadingChannelSpec::from_snr_db(FadingKind::Rayleigh, 5.0, 1.0, 0.0, CsiMode::ReceiverCsi).map_err(e)?;
    let w = quantize_fading_bpsk(&ch, QuantizerParams::new(128).map_err(e)?).map_err(e)?;
    let z = construct_all_depths(&w, 14, 128).map_err(e)?;
    let trials = 10_000;
    let mut lines = Vec::new();
    let mut ok = true;
    let budgets = (10..=14)
        .map(|m| select_frozen_for(&z[m], SelectionTarget::Budget(0.05), 128, w.content_hash()))
        .collect::<Result<Vec<_>, _>>()
        .map_err(e)?;
    // the fixed rate is that of the largest budget code, so every point sits in the waterfall
    let r_fix = budgets[4].rate;
    let mut fixed = Vec::new();
    for (budget, m) in budgets.iter().zip(10..=14usize) {
        let s = simulate_link(&ch, budget, trials, 100 + m as u64).map_err(e)?;
        let within = s.fer_ci.0 <= budget.union_bound;
        ok &= within;
        let rate = select_frozen_for(&z[m], SelectionTarget::Rate(r_fix), 128, w.content_hash()).map_err(e)?;
        let f = simulate_link(&ch, &rate, trials, 200).map_err(e)?;
        fixed.push(f.fer);
        lines.push(format!(
            "N=2^{m}: budget R={:.3} FER {:.4} [{:.4},{:.4}] bound {:.4}; R={r_fix:.3} FER {:.4}",
            budget.rate, s.fer, s.fer_ci.0, s.fer_ci.1, budget.union_bound, f.fer
        ));
    }
    let mono = fixed.windows(2).all(|p| p[1] < p[0]);
    check(ok && mono, format!("{trials} frames/point, strictly decreasing at R={r_fix:.3}: {mono}; {}", lines.join("; ")))
}

fn c8_csi_cdi() -> Outcome {
    let csi = FadingChannelSpec::from_snr_db(FadingKind::Rayleigh, 5.0, 1.0, 0.0, CsiMode::ReceiverCsi).map_err(e)?;
    let cdi = csi.with_csi(CsiMode::CdiOnly);
    let params = QuantizerParams::new(128).map_err(e)?;
    let (wa, wb) = (quantize_fading_bpsk(&csi, params).map_err(e)?, quantize_cdi(&cdi, params).map_err(e)?);
    let za = construct_all_depths(&wa, 12, 128).map_err(e)?;
    let zb = construct_all_depths(&wb, 12, 128).map_err(e)?;
    let mut ok = true;
    let mut lines = Vec::new();
    for m in [10usize, 12] {
        for rate in [0.45, 0.55] {
            let sa = select_frozen_for(&za[m], SelectionTarget::Rate(rate), 128, wa.content_hash()).map_err(e)?;
            let sb = select_frozen_for(&zb[m], SelectionTarget::Rate(rate), 128, wb.content_hash()).map_err(e)?;
            let seed = 300 + m as u64;
            let a = simulate_link(&csi, &sa, 2000, seed).map_err(e)?;
            let b = simulate_link(&cdi, &sb, 2000, seed).map_err(e)?;
            ok &= b.fer >= a.fer;
            lines.push(format!("N=2^{m} R={rate}: CSI {:.4} CDI {:.4}", a.fer, b.fer));
        }
    }
    check(ok, format!("2000 paired frames/point, each mode decoding its own construction; {}", lines.join("; ")))
}

fn c9_vnr_identity() -> Outcome {
    let chain = PartitionChain::new(1.0, 4).map_err(e)?;
    let lat = build_lattice(
        &chain,
        &rayleigh(),
        1.0,
        14,
        QuantizerParams::new(64).map_err(e)?,
        64,
        &[SelectionTarget::Budget(2.5e-4)],
    )
    .map_err(e)?;
    match vnr_gap(&lat) {
        Ok(g) => check(
            g.eps1 >= 0.0 && g.eps2 >= 0.0 && g.eps3 >= 0.0,
            format!(
                "N=2^14, R_C {:.4}: log-VNR gap {:.6} = 2(eps1 - eps2 + eps3) within {VNR_IDENTITY_TOL:e}; eps1 {:.3e} eps2 {:.3e} eps3 {:.4}",
                g.rate_sum, g.log_vnr_gap, g.eps1, g.eps2, g.eps3
            ),
        ),
        Err(err) => Err(format!("identity check failed: {err}")),
    }
}

struct ShapedSetup {
    dg: DiscreteGaussian,
    chain: PartitionChain,
    levels: Vec<ShapedLevelConstruction>,
}

fn shaped_setup() -> Result<ShapedSetup, String> {
    let dg = DiscreteGaussian::new(LatticeGaussianSpec::new(1.0, 3.0).map_err(e)?).map_err(e)?;
    let chain = PartitionChain::new(1.0, 5).map_err(e)?;
    let levels =
        construct_shaped_levels(&dg, &chain, &rayleigh(), 1.0, 14, QuantizerParams::new(64).map_err(e)?, 64).map_err(e)?;
    Ok(ShapedSetup { dg, chain, levels })
}

fn c10_shaped_bound(s: &ShapedSetup) -> Outcome {
    let rates = [0.8, 0.9, 1.0];
    let mut curves = vec![Vec::new(); rates.len()];
    let mut gaps = Vec::new();
    for m in 10..=14 {
        for (k, &r) in rates.iter().enumerate() {
            let code = assemble_shaped(&s.dg, &s.chain, &rayleigh(), 1.0, &s.levels, m, DEFAULT_SHAPING_THETA, SelectionTarget::Rate(r))
                .map_err(e)?;
            curves[k].push(shaped_union_bound(&code).map_err(e)?.total);
        }
        let code = assemble_shaped(
            &s.dg,
            &s.chain,
            &rayleigh(),
            1.0,
            &s.levels,
            m,
            DEFAULT_SHAPING_THETA,
            SelectionTarget::Budget(1e-5),
        )
        .map_err(e)?;
        gaps.push(2.0967 - code.rate_sum());
    }
    let mono = curves.iter().all(|c| c.windows(2).all(|p| p[1] < p[0]));
    let shrink = gaps.windows(2).all(|p| p[1] < p[0]);
    check(
        mono && shrink,
        format!(
            "N=2^10..2^14: bounds at R=0.8/0.9/1.0 decreasing: {mono}; gap to 2.0967 at bound 1e-5: {gaps:.4?} (strictly shrinking: {shrink})"
        ),
    )
}

fn c11_shaping_distribution(s: &ShapedSetup) -> Outcome {
    let code = assemble_shaped(
        &s.dg,
        &s.chain,
        &rayleigh(),
        1.0,
        &s.levels,
        12,
        DEFAULT_SHAPING_THETA,
        SelectionTarget::Budget(1e-5),
    )
    .map_err(e)?;
    let t = shaping_distribution_test(&code, 245, 11).map_err(e)?;
    let rel = (t.empirical_power / t.power - 1.0).abs();
    check(
        t.p_value > 0.01 && rel <= 0.03 && t.symbols >= 1_000_000,
        format!(
            "N=2^12, {} symbols: chi2 {:.2} on {} dof, p {:.3}; power {:.4} vs {:.4} ({:.2}%)",
            t.symbols,
            t.chi_square,
            t.dof,
            t.p_value,
            t.empirical_power,
            t.power,
            100.0 * rel
        ),
    )
}

fn c12_out_of_voronoi() -> Outcome {
    let p = out_of_voronoi_probability(32.0, 3.0).map_err(e)?;
    // independent: the nonzero points of 32Z summed outward-in, no cancellation
    let w = |m: f64| (-(32.0 * m).powi(2) / 18.0).exp();
    let tail: f64 = (1..=50).rev().map(|m| 2.0 * w(m as f64)).sum();
    let direct = tail / (1.0 + tail);
    check(p < 1e-20 && (p - direct).abs() <= 1e-6 * direct, format!("bottom 32Z, sigma_s 3: {p:.4e} (direct {direct:.4e})"))
}

fn main() {
    let mut failed = 0;
    let mut report = |id: usize, name: &str, f: &dyn Fn() -> Outcome| {
        let t = Instant::now();
        let out = f();
        let secs = t.elapsed().as_secs_f64();
        match out {
            Ok(d) => println!("PASS criterion {id} ({name}, {secs:.1}s): {d}"),
            Err(d) => {
                failed += 1;
                println!("FAIL criterion {id} ({name}, {secs:.1}s): {d}");
            }
        }
    };
    report(1, "capacities", &c1_capacities);
    report(2, "quantization bound", &c2_quantization);
    report(3, "partition-level capacities", &c3_level_capacities);
    report(4, "shaped level MIs", &c4_shaped_mi);
    report(5, "construction oracle", &c5_construction_oracle);
    report(6, "BEC recursion", &c6_bec);
    report(7, "simulation vs bound", &c7_sim_vs_bound);
    report(8, "CSI/CDI ordering", &c8_csi_cdi);
    report(9, "lattice identity", &c9_vnr_identity);
    let setup = shaped_setup();
    report(10, "shaped bound", &|| c10_shaped_bound(setup.as_ref().map_err(Clone::clone)?));
    report(11, "shaping distribution", &|| c11_shaping_distribution(setup.as_ref().map_err(Clone::clone)?));
    report(12, "out-of-Voronoi", &c12_out_of_voronoi);
    println!("{} of 12 criteria passed", 12 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
