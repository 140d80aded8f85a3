//! Experiment configuration: TOML file plus command-line overrides.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, ValueEnum};
use polar_fading::construction::MU_UNBOUNDED;
use polar_fading::{CsiMode, FadingChannelSpec, FadingDistribution, FadingKind, QuantizerParams, SelectionTarget};
use serde::{Deserialize, Serialize};

/// Parse or validation failure; maps to exit code 1.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

fn bad<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Dist {
    Rayleigh,
    Rician,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Csi {
    Csi,
    Cdi,
}

/// Information-set rule, written `rate:0.5`, `budget:1e-3` or `threshold:0.01`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Target(pub SelectionTarget);

impl FromStr for Target {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (kind, value) = s.split_once(':').ok_or_else(|| format!("target {s:?} is not kind:value"))?;
        let v: f64 = value.trim().parse().map_err(|_| format!("target value {value:?} is not a number"))?;
        if !v.is_finite() || v < 0.0 {
            return Err(format!("target value {v} must be finite and >= 0"));
        }
        let t = match kind.trim() {
            "rate" if v <= 1.0 => SelectionTarget::Rate(v),
            "rate" => return Err(format!("rate {v} exceeds 1")),
            "budget" => SelectionTarget::Budget(v),
            "threshold" => SelectionTarget::Threshold(v),
            other => return Err(format!("unknown target kind {other:?} (rate, budget, threshold)")),
        };
        Ok(Target(t))
    }
}

impl TryFrom<String> for Target {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl From<Target> for String {
    fn from(t: Target) -> String {
        t.to_string()
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            SelectionTarget::Rate(v) => write!(f, "rate:{v}"),
            SelectionTarget::Budget(v) => write!(f, "budget:{v}"),
            SelectionTarget::Threshold(v) => write!(f, "threshold:{v}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelConfig {
    pub dist: Dist,
    /// Average SNR `2σ_h²/σ²` in dB; ignored when `sigma_h` is set.
    pub snr_db: f64,
    pub sigma_h: Option<f64>,
    pub sigma: f64,
    /// Rician non-centrality.
    pub s: f64,
    pub csi: Csi,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self { dist: Dist::Rayleigh, snr_db: 5.0, sigma_h: None, sigma: 1.0, s: 0.0, csi: Csi::Csi }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuantizerConfig {
    pub q: usize,
    /// Output budget of the polarization merges; 0 means unbounded.
    pub mu: usize,
}

impl Default for QuantizerConfig {
    fn default() -> Self {
        Self { q: 128, mu: 128 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatticeConfig {
    pub r: usize,
    pub top_scale: f64,
    pub z_range: i64,
}

impl Default for LatticeConfig {
    fn default() -> Self {
        Self { r: 4, top_scale: 1.0, z_range: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShapingConfig {
    pub sigma_s: f64,
    pub r: usize,
    pub theta: f64,
}

impl Default for ShapingConfig {
    fn default() -> Self {
        Self { sigma_s: 3.0, r: 5, theta: polar_fading::shaping::DEFAULT_SHAPING_THETA }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub channel: ChannelConfig,
    pub quantizer: QuantizerConfig,
    /// Block lengths as `log2 N`.
    pub m: Vec<usize>,
    pub targets: Vec<Target>,
    pub trials: u64,
    pub seed: u64,
    pub lattice: LatticeConfig,
    pub shaping: ShapingConfig,
    pub output: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            channel: ChannelConfig::default(),
            quantizer: QuantizerConfig::default(),
            m: vec![10],
            targets: vec![Target(SelectionTarget::Rate(0.5))],
            trials: 1000,
            seed: 1,
            lattice: LatticeConfig::default(),
            shaping: ShapingConfig::default(),
            output: None,
        }
    }
}

/// Flags shared by every subcommand; each one overrides the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub dist: Option<Dist>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub snr_db: Option<f64>,
    #[arg(long, global = true)]
    pub sigma_h: Option<f64>,
    #[arg(long, global = true)]
    pub sigma: Option<f64>,
    /// Rician non-centrality.
    #[arg(long = "rician-s", global = true)]
    pub s: Option<f64>,
    #[arg(long, global = true, value_enum)]
    pub csi: Option<Csi>,
    #[arg(long, global = true)]
    pub q: Option<usize>,
    /// Polarization output budget; 0 for unbounded.
    #[arg(long, global = true)]
    pub mu: Option<usize>,
    /// Block length exponents, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    pub m: Option<Vec<usize>>,
    /// Selection targets, comma separated (rate:R, budget:B, threshold:T).
    #[arg(long, global = true, value_delimiter = ',')]
    pub target: Option<Vec<Target>>,
    #[arg(long, global = true)]
    pub trials: Option<u64>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub levels: Option<usize>,
    #[arg(long, global = true)]
    pub top_scale: Option<f64>,
    #[arg(long, global = true)]
    pub z_range: Option<i64>,
    #[arg(long, global = true)]
    pub sigma_s: Option<f64>,
    #[arg(long, global = true)]
    pub theta: Option<f64>,
    /// Output directory for CSV files and the run manifest.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Loads the file named by `--config` (if any), applies overrides and
    /// validates. `shaped` switches the level-count flag to the shaping chain.
    pub fn resolve(o: &Overrides, shaped: bool) -> Result<Self, ConfigError> {
        let mut c = match &o.config {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        c.apply(o, shaped);
        c.validate()?;
        Ok(c)
    }

    pub fn apply(&mut self, o: &Overrides, shaped: bool) {
        let ch = &mut self.channel;
        set(&mut ch.dist, o.dist);
        if o.snr_db.is_some() {
            ch.sigma_h = None;
        }
        set(&mut ch.snr_db, o.snr_db);
        if o.sigma_h.is_some() {
            ch.sigma_h = o.sigma_h;
        }
        set(&mut ch.sigma, o.sigma);
        set(&mut ch.s, o.s);
        set(&mut ch.csi, o.csi);
        set(&mut self.quantizer.q, o.q);
        set(&mut self.quantizer.mu, o.mu);
        set(&mut self.m, o.m.clone());
        set(&mut self.targets, o.target.clone());
        set(&mut self.trials, o.trials);
        set(&mut self.seed, o.seed);
        if shaped {
            set(&mut self.shaping.r, o.levels);
        } else {
            set(&mut self.lattice.r, o.levels);
        }
        set(&mut self.lattice.top_scale, o.top_scale);
        set(&mut self.lattice.z_range, o.z_range);
        set(&mut self.shaping.sigma_s, o.sigma_s);
        set(&mut self.shaping.theta, o.theta);
        if o.out.is_some() {
            self.output = o.out.clone();
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let ch = &self.channel;
        if !ch.snr_db.is_finite() {
            return bad("channel.snr_db must be finite");
        }
        if !(ch.sigma.is_finite() && ch.sigma > 0.0) {
            return bad("channel.sigma must be > 0");
        }
        if let Some(h) = ch.sigma_h {
            if !(h.is_finite() && h > 0.0) {
                return bad("channel.sigma_h must be > 0");
            }
        }
        if !(ch.s.is_finite() && ch.s >= 0.0) {
            return bad("channel.s must be >= 0");
        }
        if !(1..=1 << 16).contains(&self.quantizer.q) {
            return bad("quantizer.q must lie in [1, 65536]");
        }
        if self.quantizer.mu == 1 {
            return bad("quantizer.mu must be 0 (unbounded) or >= 2");
        }
        if self.m.is_empty() || self.m.iter().any(|&m| m == 0 || m > polar_fading::construction::MAX_M) {
            return bad(format!("m must list exponents in [1, {}]", polar_fading::construction::MAX_M));
        }
        if self.targets.is_empty() {
            return bad("at least one target is required");
        }
        if self.trials == 0 {
            return bad("trials must be >= 1");
        }
        if !(1..=8).contains(&self.lattice.r) || !(1..=8).contains(&self.shaping.r) {
            return bad("level counts must lie in [1, 8]");
        }
        if !(self.lattice.top_scale.is_finite() && self.lattice.top_scale > 0.0) {
            return bad("lattice.top_scale must be > 0");
        }
        if self.lattice.z_range < 0 {
            return bad("lattice.z_range must be >= 0");
        }
        if !(self.shaping.sigma_s.is_finite() && self.shaping.sigma_s > 0.0) {
            return bad("shaping.sigma_s must be > 0");
        }
        if !(self.shaping.theta > 0.0 && self.shaping.theta < 1.0) {
            return bad("shaping.theta must lie in (0, 1)");
        }
        Ok(())
    }

    pub fn m_max(&self) -> usize {
        self.m.iter().copied().max().unwrap_or(1)
    }

    pub fn mu(&self) -> usize {
        if self.quantizer.mu == 0 {
            MU_UNBOUNDED
        } else {
            self.quantizer.mu
        }
    }

    pub fn quantizer_params(&self) -> polar_fading::Result<QuantizerParams> {
        QuantizerParams::new(self.quantizer.q)
    }

    pub fn fading(&self) -> polar_fading::Result<FadingDistribution> {
        Ok(self.channel_spec()?.dist)
    }

    pub fn channel_spec(&self) -> polar_fading::Result<FadingChannelSpec> {
        let ch = &self.channel;
        let kind = match ch.dist {
            Dist::Rayleigh => FadingKind::Rayleigh,
            Dist::Rician => FadingKind::Rician,
        };
        let csi = match ch.csi {
            Csi::Csi => CsiMode::ReceiverCsi,
            Csi::Cdi => CsiMode::CdiOnly,
        };
        match ch.sigma_h {
            Some(h) => {
                let dist = match kind {
                    FadingKind::Rayleigh => FadingDistribution::rayleigh(h)?,
                    FadingKind::Rician => FadingDistribution::rician(h, ch.s)?,
                };
                FadingChannelSpec::new(dist, ch.sigma, csi)
            }
            None => FadingChannelSpec::from_snr_db(kind, ch.snr_db, ch.sigma, ch.s, csi),
        }
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        ExperimentConfig::default().validate().unwrap();
    }

    #[test]
    fn toml_round_trip() {
        let text = r#"
            m = [10, 12]
            targets = ["rate:0.5", "budget:1e-3"]
            trials = 200
            seed = 7
            [channel]
            dist = "rician"
            snr_db = 5.0
            s = 1.0
            csi = "cdi"
        "#;
        let c = ExperimentConfig::from_toml(text).unwrap();
        assert_eq!(c.m, vec![10, 12]);
        assert_eq!(c.targets[1].0, SelectionTarget::Budget(1e-3));
        assert_eq!(c.channel.csi, Csi::Cdi);
        let back = ExperimentConfig::from_toml(&toml::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(ExperimentConfig::from_toml("trails = 3").is_err());
        assert!(ExperimentConfig::from_toml("[channel]\nsnr = 3").is_err());
    }

    #[test]
    fn targets_parse() {
        assert_eq!("rate:0.25".parse::<Target>().unwrap().0, SelectionTarget::Rate(0.25));
        assert_eq!("threshold:1e-2".parse::<Target>().unwrap().0, SelectionTarget::Threshold(0.01));
        assert!("rate:1.5".parse::<Target>().is_err());
        assert!("speed:1".parse::<Target>().is_err());
        assert!("budget".parse::<Target>().is_err());
    }

    #[test]
    fn overrides_win() {
        let o = Overrides { snr_db: Some(3.0), trials: Some(5), levels: Some(3), ..Default::default() };
        let c = ExperimentConfig::resolve(&o, false).unwrap();
        assert_eq!(c.channel.snr_db, 3.0);
        assert_eq!(c.trials, 5);
        assert_eq!(c.lattice.r, 3);
        assert_eq!(c.shaping.r, 5);
    }

    #[test]
    fn invalid_values_rejected() {
        let mut c = ExperimentConfig::default();
        c.trials = 0;
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::default();
        c.quantizer.q = 0;
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::default();
        c.m = vec![];
        assert!(c.validate().is_err());
    }

    #[test]
    fn sigma_h_overrides_snr() {
        let mut c = ExperimentConfig::default();
        c.channel.sigma_h = Some(1.2575);
        assert_eq!(c.channel_spec().unwrap().dist.sigma_h, 1.2575);
        let c = ExperimentConfig::default();
        assert!((c.channel_spec().unwrap().snr_db() - 5.0).abs() < 1e-12);
    }
}
