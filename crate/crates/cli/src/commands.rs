//! Subcommand bodies. Every number comes from a library call; this module
//! only orchestrates, caches and formats.

use polar_fading::codec::{link_csv_row, simulate_link, LINK_CSV_HEADER};
use polar_fading::construction::{construct_all_depths, select_frozen_for};
use polar_fading::fading::{capacity_cdi, capacity_csi, capacity_rician_csi};
use polar_fading::lattice::{
    assemble_lattice, construct_levels, lattice_level_csv, lattice_summary_csv, simulate_lattice, union_bound, vnr_gap,
    LevelConstruction,
};
use polar_fading::quantizer::quantize_channel;
use polar_fading::shaping::{
    assemble_shaped, construct_shaped_levels, shaped_bound_csv_header, shaped_bound_csv_row, shaped_level_csv,
    shaped_union_bound, shaping_distribution_test, ShapedLevelConstruction,
};
use polar_fading::stats::fmt_sig;
use polar_fading::{
    CsiMode, DiscreteBmsc, DiscreteGaussian, FadingChannelSpec, FadingKind, LatticeGaussianSpec, PartitionChain,
    PolarCodeSpec, PolarLattice, SelectionTarget,
};
use serde_json::json;

use crate::cache::Cache;
use crate::config::{ExperimentConfig, Target};
use crate::output::Output;
use crate::RunError;

pub const CAPACITY_TOL: f64 = 1e-10;

pub fn dist_label(ch: &FadingChannelSpec) -> String {
    match ch.dist.kind {
        FadingKind::Rayleigh => "rayleigh".into(),
        FadingKind::Rician => format!("rician(s={})", fmt_sig(ch.dist.s)),
    }
}

pub fn channel_capacity(ch: &FadingChannelSpec) -> polar_fading::Result<f64> {
    match (ch.csi, ch.dist.kind) {
        (CsiMode::CdiOnly, _) => capacity_cdi(ch, CAPACITY_TOL),
        (CsiMode::ReceiverCsi, FadingKind::Rician) => capacity_rician_csi(ch, CAPACITY_TOL),
        (CsiMode::ReceiverCsi, FadingKind::Rayleigh) => capacity_csi(ch, CAPACITY_TOL),
    }
}

/// Quantized channel for the configured CSI mode.
pub fn quantized(cfg: &ExperimentConfig, cache: &Cache) -> Result<DiscreteBmsc, RunError> {
    let ch = cfg.channel_spec()?;
    let params = cfg.quantizer_params()?;
    Ok(cache.channel("bmsc", &json!({ "channel": ch, "params": params }), || quantize_channel(&ch, params))?)
}

/// Bhattacharyya estimates for every depth up to the largest configured `m`.
pub fn z_by_depth(cfg: &ExperimentConfig, cache: &Cache, w: &DiscreteBmsc) -> Result<Vec<Vec<f64>>, RunError> {
    let (m, mu) = (cfg.m_max(), cfg.mu());
    Ok(cache.json("z", &json!({ "channel": w.content_hash(), "m": m, "mu": mu }), || {
        construct_all_depths(w, m, mu)
    })?)
}

pub fn code(cfg: &ExperimentConfig, w: &DiscreteBmsc, z: &[Vec<f64>], m: usize, t: Target) -> Result<PolarCodeSpec, RunError> {
    Ok(select_frozen_for(&z[m], t.0, cfg.mu(), w.content_hash())?)
}

pub fn chain(cfg: &ExperimentConfig, r: usize) -> Result<PartitionChain, RunError> {
    Ok(PartitionChain::new(cfg.lattice.top_scale, r)?)
}

pub fn level_constructions(cfg: &ExperimentConfig, cache: &Cache) -> Result<Vec<LevelConstruction>, RunError> {
    let c = chain(cfg, cfg.lattice.r)?;
    let dist = cfg.fading()?;
    let sigma = cfg.channel.sigma;
    let (m, params, mu) = (cfg.m_max(), cfg.quantizer_params()?, cfg.mu());
    let key = json!({ "chain": c, "dist": dist, "sigma": sigma, "m": m, "params": params, "mu": mu });
    Ok(cache.json("levels", &key, || construct_levels(&c, &dist, sigma, m, params, mu))?)
}

pub fn lattice(cfg: &ExperimentConfig, levels: &[LevelConstruction], m: usize, targets: &[SelectionTarget]) -> Result<PolarLattice, RunError> {
    let c = chain(cfg, cfg.lattice.r)?;
    Ok(assemble_lattice(&c, &cfg.fading()?, cfg.channel.sigma, levels, m, targets)?)
}

pub fn gaussian(cfg: &ExperimentConfig) -> Result<DiscreteGaussian, RunError> {
    Ok(DiscreteGaussian::new(LatticeGaussianSpec::new(cfg.lattice.top_scale, cfg.shaping.sigma_s)?)?)
}

pub fn shaped_constructions(cfg: &ExperimentConfig, cache: &Cache) -> Result<Vec<ShapedLevelConstruction>, RunError> {
    let dg = gaussian(cfg)?;
    let c = chain(cfg, cfg.shaping.r)?;
    let dist = cfg.fading()?;
    let sigma = cfg.channel.sigma;
    let (m, params, mu) = (cfg.m_max(), cfg.quantizer_params()?, cfg.mu());
    let key = json!({ "gaussian": dg.spec, "chain": c, "dist": dist, "sigma": sigma, "m": m, "params": params, "mu": mu });
    Ok(cache.json("shaped", &key, || construct_shaped_levels(&dg, &c, &dist, sigma, m, params, mu))?)
}

pub fn capacity(cfg: &ExperimentConfig, out: &mut Output) -> Result<(), RunError> {
    let ch = cfg.channel_spec()?;
    let c = channel_capacity(&ch)?;
    let csv = format!(
        "dist,snr_db,sigma_h,sigma,csi,capacity\n{},{},{},{},{},{}\n",
        dist_label(&ch),
        fmt_sig(ch.snr_db()),
        fmt_sig(ch.dist.sigma_h),
        fmt_sig(ch.sigma),
        ch.csi.label(),
        fmt_sig(c)
    );
    out.emit("capacity.csv", &csv, true)
}

pub fn quantize(cfg: &ExperimentConfig, cache: &Cache, out: &mut Output) -> Result<(), RunError> {
    let ch = cfg.channel_spec()?;
    let w = quantized(cfg, cache)?;
    let c = channel_capacity(&ch)?;
    let csv = format!(
        "dist,snr_db,csi,q,symbols,capacity,quantized_capacity,bhattacharyya,sha256\n{},{},{},{},{},{},{},{},{}\n",
        dist_label(&ch),
        fmt_sig(ch.snr_db()),
        ch.csi.label(),
        cfg.quantizer.q,
        w.symbols(),
        fmt_sig(c),
        fmt_sig(w.capacity()),
        fmt_sig(w.bhattacharyya()),
        w.content_hash()
    );
    out.emit("quantize.csv", &csv, true)?;
    out.emit("channel.csv", &w.to_csv(), false)
}

const CODE_CSV_HEADER: &str = "N,target,rate,info_len,union_bound,diagnostic";

fn code_row(spec: &PolarCodeSpec, t: Target) -> String {
    format!(
        "{},{},{},{},{},{}\n",
        spec.n(),
        t,
        fmt_sig(spec.rate),
        spec.info_len(),
        fmt_sig(spec.union_bound),
        spec.diagnostic.as_deref().unwrap_or("").replace(',', ";")
    )
}

pub fn construct(cfg: &ExperimentConfig, cache: &Cache, out: &mut Output) -> Result<(), RunError> {
    let w = quantized(cfg, cache)?;
    let z = z_by_depth(cfg, cache, &w)?;
    let mut summary = format!("{CODE_CSV_HEADER}\n");
    for &m in &cfg.m {
        let mut zcsv = String::from("index,z\n");
        for (i, v) in z[m].iter().enumerate() {
            zcsv += &format!("{i},{}\n", fmt_sig(*v));
        }
        out.emit(&format!("z-m{m}.csv"), &zcsv, false)?;
        for (k, &t) in cfg.targets.iter().enumerate() {
            let spec = code(cfg, &w, &z, m, t)?;
            summary += &code_row(&spec, t);
            out.emit(&format!("code-m{m}-t{k}.json"), &(spec.to_json()? + "\n"), false)?;
        }
    }
    out.meta("channel_sha256", w.content_hash());
    out.emit("codes.csv", &summary, true)
}

pub fn simulate(cfg: &ExperimentConfig, cache: &Cache, out: &mut Output) -> Result<(), RunError> {
    let ch = cfg.channel_spec()?;
    let w = quantized(cfg, cache)?;
    let z = z_by_depth(cfg, cache, &w)?;
    let mut csv = format!("{LINK_CSV_HEADER},target,union_bound\n");
    for &m in &cfg.m {
        for &t in &cfg.targets {
            let spec = code(cfg, &w, &z, m, t)?;
            let stats = simulate_link(&ch, &spec, cfg.trials, cfg.seed)?;
            csv += &format!("{},{},{}\n", link_csv_row(&ch, &spec, &stats, cfg.seed), t, fmt_sig(spec.union_bound));
        }
    }
    out.emit("link.csv", &csv, true)
}

fn lattice_row(lat: &PolarLattice, t: Target) -> Result<(String, String, String), RunError> {
    let gap = vnr_gap(lat)?;
    let bound = union_bound(lat)?;
    let row = format!(
        "{},{},{},{},{},{},{},{},{},{},{}\n",
        lat.n(),
        t,
        fmt_sig(gap.rate_sum),
        fmt_sig(gap.log_vnr_gap),
        fmt_sig(gap.eps1),
        fmt_sig(gap.eps2),
        fmt_sig(gap.eps3),
        fmt_sig(bound.z_sum),
        fmt_sig(bound.uncoded_term),
        fmt_sig(bound.total),
        lat.nesting_corrections
    );
    Ok((row, lattice_level_csv(lat), lattice_summary_csv(lat, &gap, &bound)))
}

const LATTICE_CSV_HEADER: &str =
    "N,target,R_C,vnr_gap_bits,eps1,eps2,eps3,z_sum,uncoded_term,union_bound,nesting_corrections";

pub fn lattice_build(cfg: &ExperimentConfig, cache: &Cache, out: &mut Output) -> Result<(), RunError> {
    let levels = level_constructions(cfg, cache)?;
    out.meta("level_capacities", levels.iter().map(|l| l.capacity).collect::<Vec<_>>());
    let mut csv = format!("{LATTICE_CSV_HEADER}\n");
    for &m in &cfg.m {
        for (k, &t) in cfg.targets.iter().enumerate() {
            let lat = lattice(cfg, &levels, m, &[t.0])?;
            let (row, level_csv, summary) = lattice_row(&lat, t)?;
            csv += &row;
            out.emit(&format!("lattice-m{m}-t{k}-levels.csv"), &level_csv, false)?;
            out.emit(&format!("lattice-m{m}-t{k}-summary.csv"), &summary, false)?;
        }
    }
    out.emit("lattice.csv", &csv, true)
}

pub fn lattice_sim_header(r: usize) -> String {
    let mut h = String::from("N,target,R_C,trials,frame_errors,fer,fer_lo,fer_hi");
    for l in 1..=r {
        h += &format!(",first_error_level_{l}");
    }
    h += ",integer_errors";
    for l in 1..=r {
        h += &format!(",genie_errors_level_{l}");
    }
    h + ",seed"
}

pub fn lattice_sim_row(cfg: &ExperimentConfig, lat: &PolarLattice, label: &str) -> Result<String, RunError> {
    let s = simulate_lattice(lat, cfg.trials, cfg.seed, cfg.lattice.z_range)?;
    let mut row = format!(
        "{},{},{},{},{},{},{},{}",
        lat.n(),
        label,
        fmt_sig(lat.rate_sum()),
        s.trials,
        s.frame_errors,
        fmt_sig(s.fer),
        fmt_sig(s.fer_ci.0),
        fmt_sig(s.fer_ci.1)
    );
    for c in s.first_error_level.iter().chain(&s.genie_level_errors) {
        row += &format!(",{c}");
    }
    Ok(row + &format!(",{}\n", cfg.seed))
}

pub fn lattice_sim(cfg: &ExperimentConfig, cache: &Cache, out: &mut Output) -> Result<(), RunError> {
    let levels = level_constructions(cfg, cache)?;
    let mut csv = lattice_sim_header(cfg.lattice.r) + "\n";
    for &m in &cfg.m {
        for &t in &cfg.targets {
            let lat = lattice(cfg, &levels, m, &[t.0])?;
            csv += &lattice_sim_row(cfg, &lat, &t.to_string())?;
        }
    }
    out.emit("lattice_sim.csv", &csv, true)
}

pub const POWER_CSV_HEADER: &str = "n,rate,symbols,empirical_power,power,chi_square,dof,p_value,seed";

pub fn shaped_bound(cfg: &ExperimentConfig, cache: &Cache, power_frames: u64, out: &mut Output) -> Result<(), RunError> {
    let dg = gaussian(cfg)?;
    let c = chain(cfg, cfg.shaping.r)?;
    let dist = cfg.fading()?;
    let levels = shaped_constructions(cfg, cache)?;
    out.emit("shaped_levels.csv", &shaped_level_csv(&levels), false)?;
    out.meta("level_mutual_informations", levels.iter().map(|l| l.mutual_information).collect::<Vec<_>>());
    let mut csv = shaped_bound_csv_header(c.r) + "\n";
    let mut power = format!("{POWER_CSV_HEADER}\n");
    for &m in &cfg.m {
        for &t in &cfg.targets {
            let code = assemble_shaped(&dg, &c, &dist, cfg.channel.sigma, &levels, m, cfg.shaping.theta, t.0)?;
            csv += &(shaped_bound_csv_row(&code, &shaped_union_bound(&code)?) + "\n");
            if power_frames > 0 {
                let s = shaping_distribution_test(&code, power_frames, cfg.seed)?;
                power += &format!(
                    "{},{},{},{},{},{},{},{},{}\n",
                    code.n(),
                    fmt_sig(code.rate_sum()),
                    s.symbols,
                    fmt_sig(s.empirical_power),
                    fmt_sig(s.power),
                    fmt_sig(s.chi_square),
                    s.dof,
                    fmt_sig(s.p_value),
                    cfg.seed
                );
            }
        }
    }
    if power_frames > 0 {
        out.emit("shaped_power.csv", &power, false)?;
    }
    out.emit("shaped_bound.csv", &csv, true)
}
