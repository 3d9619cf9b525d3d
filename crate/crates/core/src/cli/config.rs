use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::clustering::DpgmmConfig;
use crate::controller::{DetectionRule, RewardConfig, TrainingConfig};
use crate::error::{Error, Result};
use crate::farmsim::StormScenario;
use crate::layout::FarmLayout;
use crate::scada::{Bounds, SteadyStateParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Normalization {
    /// kW, typically 0 and rated power.
    pub power: Bounds,
    /// rpm, typically 0 and rated rotor speed.
    pub rotor: Bounds,
}

impl Default for Normalization {
    fn default() -> Self {
        Normalization {
            power: Bounds { min: 0.0, max: 2000.0 },
            rotor: Bounds { min: 0.0, max: 16.0 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScadaConfig {
    pub window_s: i64,
    pub steady_state: SteadyStateParams,
}

impl Default for ScadaConfig {
    fn default() -> Self {
        ScadaConfig {
            window_s: 120,
            steady_state: SteadyStateParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusteringConfig {
    pub truncation: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
    pub concentration: Option<f64>,
    pub covariance_prior_scale: f64,
    /// Start of the window whose per-turbine means are clustered; `None`
    /// takes each turbine's first full window.
    pub window_start: Option<i64>,
    /// Fit each zone a second time and keep splits that pass the adoption rule.
    pub subcluster: bool,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        let d = DpgmmConfig::default();
        ClusteringConfig {
            truncation: d.truncation,
            tol: d.tol,
            max_iter: d.max_iter,
            seed: d.seed,
            concentration: d.concentration,
            covariance_prior_scale: d.covariance_prior_scale,
            window_start: None,
            subcluster: false,
        }
    }
}

impl ClusteringConfig {
    pub fn dpgmm(&self) -> DpgmmConfig {
        DpgmmConfig {
            truncation: self.truncation,
            tol: self.tol,
            max_iter: self.max_iter,
            seed: self.seed,
            concentration: self.concentration,
            covariance_prior_scale: self.covariance_prior_scale,
            ..DpgmmConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProfilingConfig {
    pub bin_count: usize,
    /// Restrict profiles to `[window_start, window_start + window_s)`.
    pub window_start: Option<i64>,
    pub window_s: Option<i64>,
    /// Offset seed for the normality subsample.
    pub seed: u64,
}

impl Default for ProfilingConfig {
    fn default() -> Self {
        ProfilingConfig {
            bin_count: crate::profiles::DEFAULT_BIN_COUNT,
            window_start: None,
            window_s: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub seed: u64,
    pub policy: Option<PathBuf>,
    /// Skip the per-second wind trace CSV.
    pub skip_traces: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardSweep {
    pub penalties: Vec<f64>,
    pub horizon: Option<f64>,
}

impl Default for RewardSweep {
    fn default() -> Self {
        RewardSweep {
            penalties: vec![1.0, 5.0, 10.0],
            horizon: None,
        }
    }
}

impl RewardSweep {
    pub fn config(&self, penalty: f64) -> RewardConfig {
        RewardConfig {
            penalty,
            horizon: self.horizon,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub scada: Option<PathBuf>,
    pub assignment: Option<PathBuf>,
    pub out: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            scada: None,
            assignment: None,
            out: PathBuf::from("out"),
        }
    }
}

/// Everything a run needs. Missing keys take their defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub layout: FarmLayout,
    pub normalization: Normalization,
    pub scada: ScadaConfig,
    pub clustering: ClusteringConfig,
    pub profiling: ProfilingConfig,
    pub scenario: StormScenario,
    pub simulation: SimulationConfig,
    pub detection: DetectionRule,
    pub reward: RewardSweep,
    pub training: TrainingConfig,
    pub paths: Paths,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: RunConfig = serde_json::from_str(&text).map_err(|source| Error::Json {
            context: path.display().to_string(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Overrides every seed in the configuration.
    pub fn set_seed(&mut self, seed: u64) {
        self.clustering.seed = seed;
        self.profiling.seed = seed;
        self.simulation.seed = seed;
        self.training.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.layout.validate()?;
        self.normalization.power.validate()?;
        self.normalization.rotor.validate()?;
        if self.scada.window_s <= 0 {
            return Err(Error::config("scada.window_s must be positive"));
        }
        if self.clustering.truncation == 0 || !(self.clustering.tol > 0.0) {
            return Err(Error::config("clustering needs truncation >= 1 and tol > 0"));
        }
        if self.profiling.bin_count == 0 {
            return Err(Error::config("profiling.bin_count must be at least 1"));
        }
        if self.profiling.window_start.is_some() != self.profiling.window_s.is_some() {
            return Err(Error::config("profiling.window_start and window_s go together"));
        }
        self.scenario.validate()?;
        self.detection.validate()?;
        if self.reward.penalties.is_empty() {
            return Err(Error::config("reward.penalties is empty"));
        }
        for &p in &self.reward.penalties {
            self.reward.config(p).validate()?;
        }
        self.training.validate()?;
        Ok(())
    }
}

/// `key = value  (source)` lines for `--explain-defaults`.
pub fn explain_defaults() -> String {
    let c = RunConfig::default();
    let published = "published";
    let choice = "design decision";
    let rows: Vec<(String, String, &str, &str)> = vec![
        ("layout".into(), format!("{} rows x {} columns, spacing {} m", c.layout.rows, c.layout.columns, c.layout.spacing_m), published, "55-turbine farm in 11 rows of 5"),
        ("layout.missing".into(), c.layout.missing.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(", "), published, "turbines without storm alarm data"),
        ("normalization.power".into(), format!("[{}, {}] kW", c.normalization.power.min, c.normalization.power.max), choice, "rated power of the synthetic fleet"),
        ("normalization.rotor".into(), format!("[{}, {}] rpm", c.normalization.rotor.min, c.normalization.rotor.max), choice, "rated rotor speed of the synthetic fleet"),
        ("scada.window_s".into(), c.scada.window_s.to_string(), published, "2-min averaging windows"),
        ("scada.steady_state".into(), format!("pre {} s, window {} s, speed tol {}, direction tol {} deg", c.scada.steady_state.pre_window_s, c.scada.steady_state.window_s, c.scada.steady_state.speed_tol, c.scada.steady_state.dir_tol), choice, "only the extremes are published"),
        ("clustering.truncation".into(), c.clustering.truncation.to_string(), published, "expected maximum of 6 clusters"),
        ("clustering.tol".into(), c.clustering.tol.to_string(), published, "convergence error < 1e-5"),
        ("clustering.max_iter".into(), c.clustering.max_iter.to_string(), choice, "non-convergence is reported, not fatal"),
        ("clustering.concentration".into(), "1 / truncation".into(), choice, "only the expected cluster count is published"),
        ("clustering.effective threshold".into(), "weight >= 2 / n".into(), choice, "no published pruning rule"),
        ("clustering.subcluster".into(), c.clustering.subcluster.to_string(), choice, "second-level fit is opt-in; splits need >= 4 members per subcluster"),
        ("profiling.bin_count".into(), c.profiling.bin_count.to_string(), choice, "no published binning"),
        ("profiling.discrepancy".into(), "Hellinger distance".into(), choice, "bounded, symmetric"),
        ("normality level".into(), "p > 0.05 passes".into(), published, "Shapiro-Wilk per cluster and parameter"),
        ("scenario.direction".into(), format!("{} deg", c.scenario.direction), published, "storm angle"),
        ("scenario.alarm_threshold".into(), format!("{} m/s", c.scenario.alarm_threshold), published, "high-wind-speed alarm"),
        ("scenario.horizon".into(), format!("{} s", c.scenario.horizon), published, "1 hour of 1-second logs"),
        ("scenario.front_speed".into(), format!("{} m/s ({} s per row)", c.scenario.front_speed, c.layout.spacing_m / c.scenario.front_speed), choice, "no published timing"),
        ("scenario.onset".into(), format!("{} s", c.scenario.onset), choice, "illustrative"),
        ("scenario.beacon_lead".into(), format!("{} s", c.scenario.beacon_lead), choice, "beacon rows trigger earlier, amount unpublished"),
        ("scenario.row_jitter_std".into(), format!("{} s", c.scenario.row_jitter_std), choice, "illustrative"),
        ("scenario.gust_noise_std".into(), format!("{} m/s", c.scenario.gust_noise_std), choice, "illustrative"),
        ("detection.beacon_rows".into(), format!("{:?}", c.detection.beacon_rows), published, "the two beacon rows"),
        ("detection.alarm_quorum".into(), c.detection.alarm_quorum.to_string(), published, "three turbines of the beacon rows"),
        ("reward.penalties".into(), format!("{:?}", c.reward.penalties), published, "conservative P = 10 to risky P = 1"),
        ("reward.horizon".into(), "rest of the log after detection".into(), choice, "time origin at detection"),
        ("training.iterations".into(), c.training.iterations.to_string(), published, "1000 iterations"),
        ("training.sigma0".into(), format!("{} s", c.training.sigma0), published, "standard deviation of 30 seconds"),
        ("training.decay".into(), c.training.decay.to_string(), published, "decay factor 0.99"),
        ("training.learning_rate".into(), c.training.learning_rate.to_string(), choice, "per-row natural-gradient step; no published rate"),
        ("training.baseline".into(), format!("{:?} ({})", c.training.baseline, c.training.baseline_decay), choice, "per-row moving average of returns"),
        ("training.advantage_clip".into(), c.training.advantage_clip.to_string(), choice, "normalized advantage clipped"),
        ("training.initial_delay".into(), format!("{} s", c.training.initial_delay), choice, "start from immediate shutdown"),
    ];
    let mut out = String::new();
    for (key, value, source, note) in rows {
        out.push_str(&format!("{key} = {value}  ({source}: {note})\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_config_matches_defaults() {
        let text = include_str!("../../../../config/default.json");
        let cfg: RunConfig = serde_json::from_str(text).unwrap();
        assert_eq!(cfg, RunConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"layuot": {}}"#).is_err());
        let partial: RunConfig = serde_json::from_str(r#"{"training": {"iterations": 5}}"#).unwrap();
        assert_eq!(partial.training.iterations, 5);
        assert_eq!(partial.scenario, StormScenario::default());
    }

    #[test]
    fn seed_override_reaches_every_stage() {
        let mut c = RunConfig::default();
        c.set_seed(42);
        assert_eq!(
            (c.clustering.seed, c.profiling.seed, c.simulation.seed, c.training.seed),
            (42, 42, 42, 42)
        );
    }
}
