//! Experiment configuration, loaded from TOML.

use std::fmt;
use std::path::{Path, PathBuf};

use gridfuzz_core::baselines::RANDOM_INTERVAL;
use gridfuzz_core::scenario::ScenarioSetup;
use gridfuzz_core::search::GaConfig;
use serde::{Deserialize, Serialize};

use crate::error::{io_at, HarnessError, Result};

/// Environment variable holding the default output directory.
pub const OUTPUT_ENV: &str = "GRIDFUZZ_OUT";

#[derive(
    Debug,
    Clone,
    Copy,
    PartialEq,
    Eq,
    Hash,
    PartialOrd,
    Ord,
    Serialize,
    Deserialize,
    clap::ValueEnum,
)]
#[serde(rename_all = "lowercase")]
pub enum Technique {
    /// Ego-relative grid plans evolved by the GA.
    Pafot,
    /// Manoeuvre sequences evolved by the same GA.
    Avfuzzer,
    /// Independent random manoeuvre scenarios.
    Random,
}

impl Technique {
    pub const ALL: [Technique; 3] = [Technique::Pafot, Technique::Avfuzzer, Technique::Random];

    pub fn as_str(self) -> &'static str {
        match self {
            Technique::Pafot => "pafot",
            Technique::Avfuzzer => "avfuzzer",
            Technique::Random => "random",
        }
    }
}

impl fmt::Display for Technique {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RandomConfig {
    /// Seconds between fresh manoeuvres.
    pub interval: f64,
    /// Scenarios per run; defaults to population_size × generations.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scenarios: Option<usize>,
}

impl Default for RandomConfig {
    fn default() -> Self {
        RandomConfig {
            interval: RANDOM_INTERVAL,
            scenarios: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub technique: Technique,
    pub runs: usize,
    pub ga: GaConfig,
    /// Road, ego, controller and fitness parameters. The scenario budget is
    /// always taken from `ga.scenario_budget`.
    pub setup: ScenarioSetup,
    pub random: RandomConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Write a full state trace for every collision scenario.
    pub traces: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let ga = GaConfig::default();
        ExperimentConfig {
            technique: Technique::Pafot,
            runs: 10,
            setup: ScenarioSetup {
                budget: ga.scenario_budget,
                ..ScenarioSetup::default()
            },
            ga,
            random: RandomConfig::default(),
            output_dir: None,
            traces: false,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_at(path))?;
        Self::from_toml(&text).map_err(|e| match e {
            HarnessError::Config(message) => HarnessError::ConfigParse {
                path: path.to_owned(),
                message,
            },
            other => other,
        })
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let mut cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.sync_budget();
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration is always representable as TOML")
    }

    /// Copies the GA's scenario budget into the scenario setup.
    pub fn sync_budget(&mut self) {
        self.setup.budget = self.ga.scenario_budget;
    }

    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(HarnessError::Config("runs must be at least 1".into()));
        }
        self.ga.validate()?;
        self.setup.validate()?;
        if self.setup.budget != self.ga.scenario_budget {
            return Err(HarnessError::Config(
                "setup.budget differs from ga.scenario_budget".into(),
            ));
        }
        if self.random.interval.is_nan() || self.random.interval <= 0.0 {
            return Err(HarnessError::Config(
                "random.interval must be positive".into(),
            ));
        }
        if self.random.scenarios == Some(0) {
            return Err(HarnessError::Config(
                "random.scenarios must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn random_scenarios(&self) -> usize {
        self.random
            .scenarios
            .unwrap_or(self.ga.population_size * self.ga.generations)
    }

    /// Output directory: the configured one, else `$GRIDFUZZ_OUT`, else `./gridfuzz-out`.
    pub fn resolved_output_dir(&self) -> PathBuf {
        self.output_dir
            .clone()
            .or_else(|| std::env::var_os(OUTPUT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("gridfuzz-out"))
    }

    /// The configuration used by the desk-scale comparisons: k = 8,
    /// 20 generations, 30 s scenarios, 2 NPCs, 10 runs.
    pub fn desk_scale(technique: Technique) -> Self {
        let mut cfg = ExperimentConfig {
            technique,
            runs: 10,
            ga: GaConfig {
                population_size: 8,
                generations: 20,
                scenario_budget: 30.0,
                ..GaConfig::default()
            },
            ..ExperimentConfig::default()
        };
        cfg.sync_budget();
        cfg
    }
}
