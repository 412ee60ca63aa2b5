//! Run configuration (TOML) and the replayable JSON manifest.

use selsieve::error::{Error, Result};
use selsieve::montecarlo::{DgpTag, Estimator, SimConfig};
use selsieve::pipeline::FitRecipe;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub out_dir: Option<PathBuf>,
    pub simulate: Option<SimulateCfg>,
    pub fit: Option<FitCfg>,
    pub bootstrap: Option<BootstrapCfg>,
    pub decompose: Option<DecomposeCfg>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateCfg {
    /// "ordered" or "multinomial".
    pub architecture: String,
    pub dgp: u8,
    pub n: usize,
    pub replications: usize,
    pub estimators: Vec<String>,
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Bootstrap replications; switches the run to a bootstrap SE study.
    pub bootstrap: Option<usize>,
}

fn default_delta() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitCfg {
    pub data: PathBuf,
    pub d: String,
    pub y: String,
    #[serde(default)]
    pub categorical: Vec<String>,
    #[serde(flatten)]
    pub recipe: FitRecipe,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BootstrapCfg {
    #[serde(flatten)]
    pub fit: FitCfg,
    pub b: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecomposeCfg {
    /// CSV with columns category, mean_a, mean_b, share_a, share_b, beta.
    pub input: PathBuf,
}

/// Written next to every run's outputs; loading it as `--config` replays the
/// run bitwise.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config: RunConfig,
    pub seed: u64,
    pub versions: Versions,
    pub wall_time_secs: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Versions {
    pub selsieve: String,
    pub cli: String,
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Io { path: path.display().to_string(), source: e })?;
    if let Ok(man) = serde_json::from_str::<Manifest>(&text) {
        return Ok(man.config);
    }
    toml::from_str(&text)
        .map_err(|e| Error::InvalidArgument(format!("config parse failed: {e}")))
}

impl SimulateCfg {
    pub fn to_sim_config(&self, seed: u64) -> Result<SimConfig> {
        let dgp = match self.architecture.as_str() {
            "ordered" => {
                if !(1..=3).contains(&self.dgp) {
                    return Err(Error::InvalidArgument(format!(
                        "ordered DGP must be 1-3, got {}",
                        self.dgp
                    )));
                }
                DgpTag::Ordered(self.dgp)
            }
            "multinomial" => {
                if !(1..=4).contains(&self.dgp) {
                    return Err(Error::InvalidArgument(format!(
                        "multinomial DGP must be 1-4, got {}",
                        self.dgp
                    )));
                }
                DgpTag::Multinomial(self.dgp)
            }
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown architecture '{other}' (expected 'ordered' or 'multinomial')"
                )))
            }
        };
        let estimators = self
            .estimators
            .iter()
            .map(|s| parse_estimator(s, &self.architecture))
            .collect::<Result<Vec<_>>>()?;
        Ok(SimConfig {
            dgp,
            n: self.n,
            replications: self.replications,
            seed,
            estimators,
            delta: self.delta,
            bootstrap: self.bootstrap,
        })
    }
}

pub fn parse_estimator(name: &str, architecture: &str) -> Result<Estimator> {
    let est = match name.to_ascii_lowercase().as_str() {
        "ols" => Estimator::Ols,
        "linear" => Estimator::Linear,
        "oracle" => Estimator::Oracle,
        "sieve" => Estimator::Sieve,
        "mlogit" => Estimator::Mlogit,
        "exch" | "exch-l2" => Estimator::Exch,
        other => return Err(Error::InvalidArgument(format!("unknown estimator '{other}'"))),
    };
    let ok = match est {
        Estimator::Linear => architecture == "ordered",
        Estimator::Mlogit | Estimator::Exch => architecture == "multinomial",
        _ => true,
    };
    if !ok {
        return Err(Error::IncompatibleVariant(format!(
            "estimator '{name}' is not available under architecture '{architecture}'"
        )));
    }
    Ok(est)
}
