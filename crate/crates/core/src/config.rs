//! Run configuration, loaded from TOML and overridden by command-line flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::impute::{ImputationConfig, Strategy};
use crate::simgen::{DgmId, Method, StudyConfig};

/// Every setting a subcommand may read. Missing keys take the defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub methods: Vec<String>,
    pub dgms: Vec<String>,
    pub n_sim: usize,
    pub n_obs: usize,
    pub m: usize,
    pub iterations: usize,
    pub sia_groups: usize,
    pub smcfcs_max_rejections: usize,
    pub n_probe: usize,
    pub calibration_tol: f64,
    pub threads: Option<usize>,
    pub data: Option<PathBuf>,
    pub formula: Option<String>,
    pub moderator: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let imp = ImputationConfig::default();
        Self {
            seed: 1,
            out: PathBuf::from("out"),
            methods: Method::ALL.iter().map(|m| m.to_string()).collect(),
            dgms: vec![DgmId::D1.to_string()],
            n_sim: 200,
            n_obs: 10_000,
            m: imp.m,
            iterations: imp.iterations,
            sia_groups: imp.sia_groups,
            smcfcs_max_rejections: imp.smcfcs_max_rejections,
            n_probe: 1_000_000,
            calibration_tol: 1e-3,
            threads: None,
            data: None,
            formula: None,
            moderator: None,
        }
    }
}

fn config_err(key: &str, message: impl Into<String>) -> Error {
    Error::Config {
        key: key.to_string(),
        message: message.into(),
    }
}

impl RunConfig {
    /// Parses TOML text. Unknown keys and type mismatches name the key.
    pub fn from_toml(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| config_err("<file>", e.message()))?;
        let known = toml::Table::try_from(RunConfig::default()).expect("default config serialises");
        for (key, value) in &table {
            if !known.contains_key(key) && !matches!(key.as_str(), "threads" | "data" | "formula" | "moderator") {
                return Err(config_err(key, "unknown key"));
            }
            let mut single = toml::Table::new();
            single.insert(key.clone(), value.clone());
            single
                .try_into::<RunConfig>()
                .map_err(|e| config_err(key, e.message().trim()))?;
        }
        table.try_into().map_err(|e| config_err("<file>", e.message().trim()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn parsed_methods(&self) -> Result<Vec<Method>> {
        self.methods
            .iter()
            .map(|m| m.parse().map_err(|_| config_err("methods", format!("unknown method `{m}`"))))
            .collect()
    }

    pub fn parsed_dgms(&self) -> Result<Vec<DgmId>> {
        self.dgms
            .iter()
            .map(|d| d.parse().map_err(|_| config_err("dgms", format!("unknown mechanism `{d}`"))))
            .collect()
    }

    pub fn imputation(&self, strategy: Strategy) -> ImputationConfig {
        ImputationConfig {
            strategy,
            m: self.m,
            iterations: self.iterations,
            seed: self.seed,
            sia_groups: self.sia_groups,
            smcfcs_max_rejections: self.smcfcs_max_rejections,
            moderator: self.moderator.clone(),
        }
    }

    /// Checks every field before any work starts.
    pub fn validate(&self) -> Result<()> {
        self.imputation(Strategy::Passive)
            .validate()
            .map_err(|e| config_err("m/iterations/sia_groups", e.to_string()))?;
        if self.parsed_methods()?.is_empty() {
            return Err(config_err("methods", "at least one method is required"));
        }
        self.parsed_dgms()?;
        if self.n_sim == 0 {
            return Err(config_err("n_sim", "must be positive"));
        }
        if self.n_obs < 20 {
            return Err(config_err("n_obs", "must be at least 20"));
        }
        if self.n_probe == 0 {
            return Err(config_err("n_probe", "must be positive"));
        }
        if !(self.calibration_tol > 0.0) {
            return Err(config_err("calibration_tol", "must be positive"));
        }
        if self.threads == Some(0) {
            return Err(config_err("threads", "must be positive"));
        }
        Ok(())
    }

    pub fn study(&self) -> Result<StudyConfig> {
        Ok(StudyConfig {
            dgms: self.parsed_dgms()?,
            methods: self.parsed_methods()?,
            n_sim: self.n_sim,
            n_obs: self.n_obs,
            base_seed: self.seed,
            imputation: self.imputation(Strategy::Passive),
            n_probe: self.n_probe,
            calibration_tol: self.calibration_tol,
            threads: self.threads,
        })
    }
}
