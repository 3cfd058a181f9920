//! Run configuration and the versioned JSON envelope used for every artifact.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::confidence::IouncConfig;
use crate::error::{Error, Result};
use crate::geometry::IouKind;
use crate::simulator::{NoiseModel, SceneConfig};
use crate::training::{FitConfig, TaskGraph};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NmsConfig {
    pub threshold: f64,
    pub kind: IouKind,
}

impl Default for NmsConfig {
    fn default() -> Self {
        Self {
            threshold: 0.25,
            kind: IouKind::Bev,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HtlConfig {
    pub total_epochs: usize,
    pub window: usize,
    /// `(task, pre-tasks)` pairs; the detector hierarchy when absent.
    pub graph: Option<Vec<(String, Vec<String>)>>,
}

impl Default for HtlConfig {
    fn default() -> Self {
        Self {
            total_epochs: 60,
            window: 3,
            graph: None,
        }
    }
}

impl HtlConfig {
    pub fn task_graph(&self) -> Result<TaskGraph> {
        match &self.graph {
            Some(spec) => TaskGraph::new(spec),
            None => Ok(TaskGraph::detector_default()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub scenes_per_seed: usize,
    /// Consecutive seeds simulated, starting at the run seed.
    pub seeds: usize,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            scenes_per_seed: 500,
            seeds: 1,
        }
    }
}

/// Everything a run depends on besides its inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub scene: SceneConfig,
    pub noise: NoiseModel,
    pub iounc: IouncConfig,
    pub nms: NmsConfig,
    pub loss: FitConfig,
    pub htl: HtlConfig,
    pub simulation: SimulationConfig,
    pub output_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let cfg: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.noise.validate()?;
        self.iounc.validate()?;
        if !(0.0..=1.0).contains(&self.nms.threshold) {
            return Err(Error::Config(format!("NMS threshold {} outside [0, 1]", self.nms.threshold)));
        }
        self.htl.task_graph()?;
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form, excluding the output directory.
    pub fn hash(&self) -> String {
        let canonical = Self {
            output_dir: None,
            ..self.clone()
        };
        let bytes = serde_json::to_vec(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }
}

/// Wrapper naming the payload type and schema version of a JSON artifact.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Envelope<T> {
    pub schema: String,
    pub version: u32,
    pub data: T,
}

fn schema_name(kind: &str) -> String {
    format!("gupkit.{kind}")
}

pub fn to_json<T: Serialize>(kind: &str, data: &T) -> Result<String> {
    let env = Envelope {
        schema: schema_name(kind),
        version: SCHEMA_VERSION,
        data,
    };
    Ok(serde_json::to_string_pretty(&env)? + "\n")
}

pub fn from_json<T: DeserializeOwned>(kind: &str, text: &str) -> Result<T> {
    let env: Envelope<T> = serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
    if env.schema != schema_name(kind) {
        return Err(Error::Schema(format!(
            "expected schema `{}`, found `{}`",
            schema_name(kind),
            env.schema
        )));
    }
    if env.version != SCHEMA_VERSION {
        return Err(Error::Schema(format!(
            "unsupported schema version {} (expected {SCHEMA_VERSION})",
            env.version
        )));
    }
    Ok(env.data)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputRecord {
    pub file: String,
    pub sha256: String,
}

/// Run metadata. The only place a wall-clock timestamp is recorded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub command: String,
    pub tool_version: String,
    pub schema_version: u32,
    pub config_hash: String,
    pub seed: Option<u64>,
    pub created_unix: u64,
    pub outputs: Vec<OutputRecord>,
}
