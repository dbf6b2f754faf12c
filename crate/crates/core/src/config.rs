//! Run configuration: a TOML file with one section per module plus `--set` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::grid::{GridSpec, RadialGrid};
use crate::mpa::SolverParams;
use crate::nonlinearity::{Nonlinearity, NonlinearityConfig};
use crate::solver::{Context, ContinuationSchedule};
use crate::weights::{TabulatedWeights, WeightConfig, Weights};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightsBlock {
    #[serde(flatten)]
    pub params: WeightConfig,
    /// Optional `r,A,Q` CSV replacing the built-in profiles.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub table: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverBlock {
    #[serde(flatten)]
    pub params: SolverParams,
    pub angular_order: usize,
    pub parallel: bool,
}

impl Default for SolverBlock {
    fn default() -> Self {
        Self {
            params: SolverParams::default(),
            angular_order: 16,
            parallel: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub basic_samples: usize,
    pub sani_samples: usize,
    pub hls_samples: usize,
    /// Multiplies the fitted HLS constant; values below 1 force failures.
    pub hls_calibration: f64,
    pub gradient_pairs: usize,
    /// Moser indices; the Moser suite is skipped when empty.
    pub moser_n: Vec<f64>,
    pub seed: u64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            basic_samples: 10_000,
            sani_samples: 10_000,
            hls_samples: 200,
            hls_calibration: 1.0,
            gradient_pairs: 50,
            moser_n: Vec::new(),
            seed: 7,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputBlock {
    pub dir: PathBuf,
}

impl Default for OutputBlock {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub weights: WeightsBlock,
    pub nonlinearity: NonlinearityConfig,
    pub grid: GridSpec,
    pub solver: SolverBlock,
    pub schedule: ContinuationSchedule,
    pub verify: VerifyConfig,
    pub output: OutputBlock,
}

impl RunConfig {
    /// Parses TOML text, applying `section.key=value` overrides first.
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self> {
        let mut value: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Parse(e.to_string()))?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        toml::Value::Table(value)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Parse(e.to_string()))
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text, overrides).map_err(|e| match e {
            Error::Parse(m) => Error::Parse(format!("{}: {m}", path.display())),
            other => other,
        })?;
        // Relative table paths are resolved against the config file.
        if let (Some(t), Some(dir)) = (cfg.weights.table.as_mut(), path.parent()) {
            if t.is_relative() {
                *t = dir.join(&*t);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// sha256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        format!("{:x}", Sha256::digest(json.as_bytes()))
    }

    pub fn execution(&self) -> Execution {
        Execution::from_flag(self.solver.parallel)
    }

    pub fn weights(&self) -> Result<Weights> {
        self.weights.params.validate()?;
        Ok(match &self.weights.table {
            None => Weights::BuiltIn(self.weights.params.clone()),
            Some(path) => Weights::Tabulated(self.weights.params.clone(), TabulatedWeights::from_csv(path)?),
        })
    }

    pub fn nonlinearity(&self) -> Result<Nonlinearity> {
        Nonlinearity::new(self.nonlinearity.clone(), self.weights.params.n_dim)
    }

    pub fn context(&self, cache_dir: Option<PathBuf>) -> Result<Context> {
        let weights = self.weights()?;
        let nonlinearity = self.nonlinearity()?;
        let grid = RadialGrid::new(self.weights.params.n_dim, &self.grid)?;
        Ok(Context {
            weights,
            nonlinearity,
            grid,
            angular_order: self.solver.angular_order,
            exec: self.execution(),
            cache_dir,
            params: self.solver.params.clone(),
        })
    }
}

fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Parse(format!("override `{assignment}` is not key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    let raw = raw.trim();
    // Bare words are taken as strings.
    let value: toml::Value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let (last, parents) = path.split_last().expect("split yields one element");
    let mut cur = table;
    for p in parents {
        cur = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::Parse(format!("override `{key}`: `{p}` is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}
