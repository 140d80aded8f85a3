//! Figure bundles at desk scale (`N ≤ 2^14`), with `--full` for the long runs.

use clap::ValueEnum;
use polar_fading::codec::{link_csv_row, simulate_link, LINK_CSV_HEADER};
use polar_fading::fading::{capacity_cdi, capacity_csi, ergodic_capacity_power};
use polar_fading::lattice::simulate_lattice;
use polar_fading::quantizer::quantize_fading_bpsk;
use polar_fading::shaping::{assemble_shaped, shaped_bound_csv_header, shaped_bound_csv_row, shaped_union_bound};
use polar_fading::stats::{fmt_sig, wilson_interval, Z95};
use polar_fading::{CsiMode, Error, SelectionTarget};
use serde::Serialize;

use crate::cache::Cache;
use crate::commands::{self, CAPACITY_TOL};
use crate::config::{Csi, Dist, ExperimentConfig, Target};
use crate::output::Output;
use crate::RunError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Figure {
    /// Quantized vs exact capacity (and CDI) over SNR.
    Fig3,
    /// Rayleigh CSI link FER vs rate.
    Fig4,
    /// Rayleigh CDI link FER vs rate.
    Fig5,
    /// Rician CSI link FER vs rate.
    Fig6,
    /// Partition-level channels of the ℤ/…/16ℤ chain at N = 2^14.
    Fig8,
    /// Shaped polar-lattice union bounds vs rate.
    Fig9,
}

const SIGMA_H: f64 = 1.2575;

fn rates(lo: f64, hi: f64, step: f64) -> Vec<Target> {
    let n = ((hi - lo) / step).round() as usize;
    (0..=n).map(|i| Target(SelectionTarget::Rate(((lo + step * i as f64) * 1e6).round() / 1e6))).collect()
}

/// Desk-scale defaults for a figure; flags are applied on top.
pub fn figure_defaults(fig: Figure, full: bool) -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    let long = |desk: Vec<usize>, extra: &[usize]| if full { desk.into_iter().chain(extra.iter().copied()).collect() } else { desk };
    match fig {
        Figure::Fig3 => {
            c.m = vec![1];
        }
        Figure::Fig4 | Figure::Fig5 | Figure::Fig6 => {
            c.m = long(vec![10, 12, 14], &[16, 18, 20]);
            c.trials = 1000;
            c.targets = match fig {
                Figure::Fig6 => rates(0.40, 0.70, 0.05),
                _ => rates(0.30, 0.65, 0.05),
            };
            if fig == Figure::Fig5 {
                c.channel.csi = Csi::Cdi;
            }
            if fig == Figure::Fig6 {
                c.channel.dist = Dist::Rician;
                c.channel.s = 1.0;
            }
        }
        Figure::Fig8 => {
            c.channel.sigma_h = Some(SIGMA_H);
            c.quantizer.q = 64;
            c.quantizer.mu = 64;
            c.m = vec![14];
            c.trials = 200;
            c.targets = rates(0.02, 0.98, 0.02);
        }
        Figure::Fig9 => {
            c.channel.sigma_h = Some(SIGMA_H);
            c.quantizer.q = 64;
            c.quantizer.mu = 64;
            c.m = long(vec![10, 11, 12, 13, 14], &[16, 18, 20]);
            c.targets = rates(0.5, 1.9, 0.1);
        }
    }
    c
}

pub fn run(fig: Figure, full: bool, cfg: &ExperimentConfig, cache: &Cache, out: &mut Output) -> Result<(), RunError> {
    out.meta("figure", fig);
    out.meta("full", full);
    match fig {
        Figure::Fig3 => fig3(cfg, full, out),
        Figure::Fig4 | Figure::Fig5 | Figure::Fig6 => link_figure(cfg, cache, out),
        Figure::Fig8 => fig8(cfg, cache, out),
        Figure::Fig9 => fig9(cfg, cache, out),
    }
}

fn fig3(cfg: &ExperimentConfig, full: bool, out: &mut Output) -> Result<(), RunError> {
    let step = if full { 0.25 } else { 1.0 };
    let params = cfg.quantizer_params()?;
    let mut csv = String::from("snr_db,capacity_csi,capacity_csi_quantized,capacity_cdi\n");
    for i in 0..=((10.0 / step) as usize) {
        let mut c = cfg.clone();
        c.channel.sigma_h = None;
        c.channel.snr_db = i as f64 * step;
        c.channel.csi = Csi::Csi;
        let ch = c.channel_spec()?;
        let exact = capacity_csi(&ch, CAPACITY_TOL)?;
        let q = quantize_fading_bpsk(&ch, params)?.capacity();
        let cdi = capacity_cdi(&ch.with_csi(CsiMode::CdiOnly), CAPACITY_TOL)?;
        csv += &format!("{},{},{},{}\n", fmt_sig(c.channel.snr_db), fmt_sig(exact), fmt_sig(q), fmt_sig(cdi));
    }
    out.meta("q", cfg.quantizer.q);
    out.emit("fig3.csv", &csv, true)
}

fn link_figure(cfg: &ExperimentConfig, cache: &Cache, out: &mut Output) -> Result<(), RunError> {
    let ch = cfg.channel_spec()?;
    out.meta("capacity", commands::channel_capacity(&ch)?);
    let w = commands::quantized(cfg, cache)?;
    out.meta("quantized_capacity", w.capacity());
    let z = commands::z_by_depth(cfg, cache, &w)?;
    let mut csv = format!("{LINK_CSV_HEADER},union_bound\n");
    for &m in &cfg.m {
        for &t in &cfg.targets {
            let spec = commands::code(cfg, &w, &z, m, t)?;
            let stats = simulate_link(&ch, &spec, cfg.trials, cfg.seed)?;
            csv += &format!("{},{}\n", link_csv_row(&ch, &spec, &stats, cfg.seed), fmt_sig(spec.union_bound));
        }
    }
    out.emit("fer_vs_rate.csv", &csv, true)
}

/// Per-level union bounds over the rate grid, and genie-aided per-level FER
/// from lattices that isolate one level: lower levels carry no information
/// and upper levels use the same rate, which their larger capacities allow.
fn fig8(cfg: &ExperimentConfig, cache: &Cache, out: &mut Output) -> Result<(), RunError> {
    let levels = commands::level_constructions(cfg, cache)?;
    let caps: Vec<f64> = levels.iter().map(|l| l.capacity).collect();
    out.meta("level_capacities", &caps);
    let mut caps_csv = String::from("level,capacity,quantized_capacity\n");
    for l in &levels {
        caps_csv += &format!("{},{},{}\n", l.level, fmt_sig(l.capacity), fmt_sig(l.quantized_capacity));
    }
    out.emit("fig8_levels.csv", &caps_csv, false)?;
    let m = cfg.m_max();
    let mut bounds = String::from("level,N,rate,union_bound\n");
    for l in &levels {
        for &t in &cfg.targets {
            let spec = polar_fading::construction::select_frozen_for(&l.z_by_depth[m], t.0, l.mu, l.channel_hash.clone())?;
            bounds += &format!("{},{},{},{}\n", l.level, spec.n(), fmt_sig(spec.rate), fmt_sig(spec.union_bound));
        }
    }
    out.emit("fig8_bounds.csv", &bounds, false)?;
    let r = levels.len();
    let mut csv = String::from("level,N,rate,capacity,union_bound,trials,genie_errors,fer,fer_lo,fer_hi,seed\n");
    for (li, l) in levels.iter().enumerate() {
        for &t in &cfg.targets {
            let SelectionTarget::Rate(rho) = t.0 else {
                return Err(RunError::Config("fig8 targets must be rates".into()));
            };
            if rho >= l.capacity || rho < l.capacity - 0.2 {
                continue;
            }
            let targets: Vec<SelectionTarget> =
                (0..r).map(|j| if j < li { SelectionTarget::Rate(0.0) } else { SelectionTarget::Rate(rho) }).collect();
            let lat = commands::lattice(cfg, &levels, m, &targets)?;
            let s = simulate_lattice(&lat, cfg.trials, cfg.seed, cfg.lattice.z_range)?;
            let k = s.genie_level_errors[li];
            let (lo, hi) = wilson_interval(k, s.trials, Z95);
            let spec = &lat.levels[li].spec;
            csv += &format!(
                "{},{},{},{},{},{},{},{},{},{},{}\n",
                l.level,
                lat.n(),
                fmt_sig(spec.rate),
                fmt_sig(l.capacity),
                fmt_sig(spec.union_bound),
                s.trials,
                k,
                fmt_sig(k as f64 / s.trials as f64),
                fmt_sig(lo),
                fmt_sig(hi),
                cfg.seed
            );
        }
    }
    out.emit("fig8_fer.csv", &csv, true)
}

fn fig9(cfg: &ExperimentConfig, cache: &Cache, out: &mut Output) -> Result<(), RunError> {
    let dg = commands::gaussian(cfg)?;
    let chain = commands::chain(cfg, cfg.shaping.r)?;
    let dist = cfg.fading()?;
    let sigma = cfg.channel.sigma;
    let levels = commands::shaped_constructions(cfg, cache)?;
    out.meta("ergodic_capacity", ergodic_capacity_power(&dist, sigma, dg.power)?);
    out.meta("power", dg.power);
    out.meta("level_mutual_informations", levels.iter().map(|l| l.mutual_information).collect::<Vec<_>>());
    out.emit("fig9_levels.csv", &polar_fading::shaping::shaped_level_csv(&levels), false)?;
    let mut csv = shaped_bound_csv_header(chain.r) + "\n";
    let mut budget = String::from("n,budget,rate,union_bound\n");
    let mut skipped = Vec::new();
    for &m in &cfg.m {
        for &t in &cfg.targets {
            match assemble_shaped(&dg, &chain, &dist, sigma, &levels, m, cfg.shaping.theta, t.0) {
                Ok(code) => csv += &(shaped_bound_csv_row(&code, &shaped_union_bound(&code)?) + "\n"),
                // a rate beyond what the levels can carry at this N
                Err(Error::Build(_)) => skipped.push(format!("m={m} {t}")),
                Err(e) => return Err(e.into()),
            }
        }
        let code = assemble_shaped(&dg, &chain, &dist, sigma, &levels, m, cfg.shaping.theta, SelectionTarget::Budget(1e-5))?;
        let b = shaped_union_bound(&code)?;
        budget += &format!("{},1e-5,{},{}\n", code.n(), fmt_sig(code.rate_sum()), fmt_sig(b.total));
    }
    out.meta("skipped_targets", skipped);
    out.emit("fig9_budget.csv", &budget, false)?;
    out.emit("fig9_bounds.csv", &csv, true)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_capped() {
        for fig in Figure::value_variants() {
            let c = figure_defaults(*fig, false);
            c.validate().unwrap();
            assert!(c.m_max() <= 14, "{fig:?}");
            assert!(figure_defaults(*fig, true).validate().is_ok());
        }
        assert_eq!(figure_defaults(Figure::Fig9, true).m_max(), 20);
    }

    #[test]
    fn rate_grid_is_exact() {
        let r = rates(0.3, 0.65, 0.05);
        assert_eq!(r.len(), 8);
        assert_eq!(r[7].0, SelectionTarget::Rate(0.65));
        assert_eq!(r[1].0, SelectionTarget::Rate(0.35));
    }
}
