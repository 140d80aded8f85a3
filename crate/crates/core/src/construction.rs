//! Channel polarization over [`DiscreteBmsc`]s and information-set selection.
//!
//! Index convention: `G_N = F^{⊗m}` in natural order. The synthesized channel
//! with index `i` (0-based) has binary expansion `b_1 … b_m` (most
//! significant first); `b_k = 0` means the `k`-th transform applied is `W⁻`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quantizer::{degrading_merge, DiscreteBmsc};

/// Largest supported `m`.
pub const MAX_M: usize = 20;

/// Default memory budget for one tree level of channels.
pub const DEFAULT_MEMORY_BUDGET: usize = 4 << 30;

/// `μ` value meaning "never merge".
pub const MU_UNBOUNDED: usize = usize::MAX;

/// One polarization step followed by degrading merge of both children.
pub fn polarize_step(w: &DiscreteBmsc, mu: usize) -> (DiscreteBmsc, DiscreteBmsc) {
    let minus = w.minus();
    let plus = w.plus();
    if mu == MU_UNBOUNDED {
        (minus, plus)
    } else {
        (degrading_merge(&minus, mu), degrading_merge(&plus, mu))
    }
}

fn check_memory(level: usize, count: usize, mu: usize, budget: usize) -> Result<()> {
    if mu == MU_UNBOUNDED {
        return Ok(());
    }
    // Each channel holds at most μ/2 + 1 pairs of 16 bytes, and a plus step
    // briefly holds (μ/2+1)² more.
    let per = (mu / 2 + 1) * 16;
    let need = count.saturating_mul(per).saturating_add((mu / 2 + 1).pow(2) * 16);
    if need > budget {
        return Err(Error::Resource { level, detail: format!("{need} bytes needed, budget {budget}") });
    }
    Ok(())
}

/// Bhattacharyya estimates for every depth `d = 0..=m` (`2^d` values each).
///
/// Depth `d` entries are the values a length-`2^d` construction would
/// return, so one run serves every shorter block length.
pub fn construct_all_depths(w: &DiscreteBmsc, m: usize, mu: usize) -> Result<Vec<Vec<f64>>> {
    construct_all_depths_with_budget(w, m, mu, DEFAULT_MEMORY_BUDGET)
}

pub fn construct_all_depths_with_budget(
    w: &DiscreteBmsc,
    m: usize,
    mu: usize,
    budget: usize,
) -> Result<Vec<Vec<f64>>> {
    if m > MAX_M {
        return Err(Error::Domain(format!("m = {m} exceeds the supported maximum {MAX_M}")));
    }
    if mu < 2 {
        return Err(Error::Domain("mu must be >= 2".into()));
    }
    let mut out = Vec::with_capacity(m + 1);
    let root = if mu == MU_UNBOUNDED { w.clone() } else { degrading_merge(w, mu) };
    let mut level = vec![root];
    out.push(vec![level[0].bhattacharyya()]);
    for d in 1..=m {
        check_memory(d, 1 << d, mu, budget)?;
        let last = d == m;
        let children: Vec<(DiscreteBmsc, DiscreteBmsc)> =
            level.par_iter().map(|ch| polarize_step(ch, mu)).collect();
        let z: Vec<f64> = children.iter().flat_map(|(a, b)| [a.bhattacharyya(), b.bhattacharyya()]).collect();
        out.push(z);
        if last {
            break;
        }
        level = children.into_iter().flat_map(|(a, b)| [a, b]).collect();
    }
    Ok(out)
}

/// Bhattacharyya estimates of the `N = 2^m` synthesized channels.
pub fn construct(w: &DiscreteBmsc, m: usize, mu: usize) -> Result<Vec<f64>> {
    Ok(construct_all_depths(w, m, mu)?.pop().unwrap_or_default())
}

/// How the information set is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode", content = "value")]
pub enum SelectionTarget {
    /// `⌊RN⌋` indices with the smallest `Z`.
    Rate(f64),
    /// Largest set whose `Z`-sum does not exceed the budget.
    Budget(f64),
    /// `{i : Z_i ≤ 2^{−N^β}}`.
    Threshold(f64),
}

/// A constructed polar code.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolarCodeSpec {
    pub m: usize,
    pub mu: usize,
    pub channel_hash: String,
    pub z_values: Vec<f64>,
    /// `frozen[i]` is true for frozen indices.
    pub frozen: Vec<bool>,
    pub rate: f64,
    pub beta: Option<f64>,
    pub target: SelectionTarget,
    /// `Σ_{i ∈ info} z_values[i]`, summed in increasing index order.
    pub union_bound: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
}

impl PolarCodeSpec {
    pub fn n(&self) -> usize {
        1 << self.m
    }

    /// Information indices in increasing order.
    pub fn info_indices(&self) -> Vec<usize> {
        (0..self.frozen.len()).filter(|&i| !self.frozen[i]).collect()
    }

    pub fn info_len(&self) -> usize {
        self.frozen.iter().filter(|&&f| !f).count()
    }

    /// Rebuilds `rate` and `union_bound` after the frozen set changed.
    pub fn refresh(&mut self) {
        let info = self.info_indices();
        self.rate = info.len() as f64 / self.n() as f64;
        self.union_bound = info.iter().map(|&i| self.z_values[i]).sum();
    }

    /// Replaces the information set.
    pub fn with_info(mut self, info: &[usize]) -> Self {
        self.frozen = vec![true; self.n()];
        for &i in info {
            self.frozen[i] = false;
        }
        self.refresh();
        self
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if self.z_values.len() != n || self.frozen.len() != n {
            return Err(Error::Artifact("code spec length mismatch".into()));
        }
        let ub: f64 = self.info_indices().iter().map(|&i| self.z_values[i]).sum();
        if (ub - self.union_bound).abs() > 1e-12 {
            return Err(Error::Artifact("stored union bound disagrees with z-values".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Artifact(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: Self = serde_json::from_str(text).map_err(|e| Error::Artifact(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }
}

/// Indices sorted by increasing `Z`, ties by lower index.
pub fn reliability_order(z: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..z.len()).collect();
    idx.sort_by(|&a, &b| z[a].total_cmp(&z[b]).then(a.cmp(&b)));
    idx
}

/// Chooses the information set from Bhattacharyya estimates.
pub fn select_frozen(z_values: &[f64], target: SelectionTarget) -> Result<PolarCodeSpec> {
    select_frozen_for(z_values, target, 0, String::new())
}

/// As [`select_frozen`], recording the construction's `μ` and channel hash.
pub fn select_frozen_for(z_values: &[f64], target: SelectionTarget, mu: usize, channel_hash: String) -> Result<PolarCodeSpec> {
    let n = z_values.len();
    if n == 0 || !n.is_power_of_two() {
        return Err(Error::Domain(format!("block length {n} is not a power of two")));
    }
    let m = n.trailing_zeros() as usize;
    let order = reliability_order(z_values);
    let mut diagnostic = None;
    let mut beta = None;
    let k = match target {
        SelectionTarget::Rate(r) => {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::Domain(format!("rate {r} outside [0, 1]")));
            }
            (r * n as f64).floor() as usize
        }
        SelectionTarget::Budget(pb) => {
            if !(pb > 0.0) {
                return Err(Error::Domain(format!("block-error budget must be > 0, got {pb}")));
            }
            let mut sum = 0.0;
            let mut k = 0;
            for &i in &order {
                if sum + z_values[i] > pb {
                    break;
                }
                sum += z_values[i];
                k += 1;
            }
            if k == 0 {
                diagnostic = Some(format!(
                    "budget {pb:e} infeasible: smallest Bhattacharyya parameter is {:e}",
                    z_values[order[0]]
                ));
            }
            k
        }
        SelectionTarget::Threshold(b) => {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Domain(format!("beta {b} outside [0, 1)")));
            }
            beta = Some(b);
            let thr = 2f64.powf(-(n as f64).powf(b));
            order.iter().take_while(|&&i| z_values[i] <= thr).count()
        }
    };
    let mut spec = PolarCodeSpec {
        m,
        mu,
        channel_hash,
        z_values: z_values.to_vec(),
        frozen: vec![true; n],
        rate: 0.0,
        beta,
        target,
        union_bound: 0.0,
        diagnostic,
    };
    for &i in &order[..k] {
        spec.frozen[i] = false;
    }
    spec.refresh();
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn bec_recursion(e: f64, m: usize) -> Vec<f64> {
        let mut z = vec![e];
        for _ in 0..m {
            z = z.iter().flat_map(|&x| [2.0 * x - x * x, x * x]).collect();
        }
        z
    }

    #[test]
    fn bec_step_exact() {
        let (a, b) = polarize_step(&DiscreteBmsc::bec(0.5).unwrap(), 16);
        assert_eq!(a.bhattacharyya(), 0.75);
        assert_eq!(b.bhattacharyya(), 0.25);
    }

    #[test]
    fn bec_tree_matches_recursion() {
        let z = construct(&DiscreteBmsc::bec(0.5).unwrap(), 3, 4).unwrap();
        let r = bec_recursion(0.5, 3);
        for (a, b) in z.iter().zip(&r) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn perfect_channel_is_fixed_point() {
        let (a, b) = polarize_step(&DiscreteBmsc::perfect(), 8);
        assert_eq!(a.bhattacharyya(), 0.0);
        assert_eq!(b.bhattacharyya(), 0.0);
        assert_eq!(a.capacity(), 1.0);
    }

    #[test]
    fn capacity_conserved_before_merge() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let n = rng.random_range(1..12);
            let raw: Vec<(f64, f64)> = (0..n).map(|_| (rng.random(), rng.random())).collect();
            let e: f64 = rng.random::<f64>() * 0.3;
            let s: f64 = raw.iter().map(|p| p.0 + p.1).sum::<f64>() / (1.0 - e);
            let w = DiscreteBmsc::from_masses(raw.iter().map(|&(a, b)| (a / s, b / s)).collect(), e).unwrap();
            let (a, b) = polarize_step(&w, MU_UNBOUNDED);
            assert!((a.capacity() + b.capacity() - 2.0 * w.capacity()).abs() < 1e-10);
            assert!(a.capacity() <= w.capacity() + 1e-14 && b.capacity() >= w.capacity() - 1e-14);
        }
    }

    #[test]
    fn resource_error_names_level() {
        let w = DiscreteBmsc::bsc(0.1).unwrap();
        match construct_all_depths_with_budget(&w, 10, 256, 1 << 16) {
            Err(Error::Resource { level, .. }) => assert!(level >= 1),
            other => panic!("expected resource error, got {other:?}"),
        }
        assert!(construct(&w, 21, 4).is_err());
    }

    #[test]
    fn extreme_rates() {
        let z = bec_recursion(0.3, 4);
        let s0 = select_frozen(&z, SelectionTarget::Rate(0.0)).unwrap();
        assert!(s0.frozen.iter().all(|&f| f));
        assert_eq!(s0.union_bound, 0.0);
        let s1 = select_frozen(&z, SelectionTarget::Rate(1.0)).unwrap();
        assert!(s1.frozen.iter().all(|&f| !f));
        assert_eq!(s1.rate, 1.0);
        assert!(select_frozen(&z, SelectionTarget::Rate(1.5)).is_err());
    }

    #[test]
    fn rate_mode_ties_prefer_lower_index() {
        let z = vec![0.5, 0.1, 0.1, 0.9];
        let s = select_frozen(&z, SelectionTarget::Rate(0.25)).unwrap();
        assert_eq!(s.info_indices(), vec![1]);
    }

    #[test]
    fn budget_mode_is_maximal() {
        let z = bec_recursion(0.4, 10);
        let pb = 1e-5;
        let s = select_frozen(&z, SelectionTarget::Budget(pb)).unwrap();
        assert!(s.union_bound <= pb);
        let order = reliability_order(&z);
        let k = s.info_len();
        assert!(s.union_bound + z[order[k]] > pb);
        s.validate().unwrap();
    }

    #[test]
    fn infeasible_budget_gives_rate_zero() {
        let z = vec![0.2, 0.3];
        let s = select_frozen(&z, SelectionTarget::Budget(0.1)).unwrap();
        assert_eq!(s.rate, 0.0);
        assert!(s.diagnostic.is_some());
    }

    #[test]
    fn threshold_mode() {
        let z = vec![1e-9, 0.01, 0.3, 1e-20];
        let s = select_frozen(&z, SelectionTarget::Threshold(0.5)).unwrap();
        // threshold 2^{-2} = 0.25
        assert_eq!(s.info_indices(), vec![0, 1, 3]);
    }

    #[test]
    fn json_round_trip() {
        let z = bec_recursion(0.4, 5);
        let s = select_frozen_for(&z, SelectionTarget::Budget(1e-2), 64, "abc".into()).unwrap();
        let back = PolarCodeSpec::from_json(&s.to_json().unwrap()).unwrap();
        assert_eq!(back, s);
    }
}
