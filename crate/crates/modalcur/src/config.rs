//! Run configuration: one TOML file per run, with a canonical serialisation
//! used for hashing.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agent::AgentConfig;
use crate::curriculum::CurriculumConfig;
use crate::modal::{MaterialSpec, ModalModel, PlateGeometry};
use crate::{Error, Result};

/// Where the modal model comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum ModelSource {
    /// Finite-element plate assembly.
    Assemble {
        geometry: PlateGeometry,
        material: MaterialSpec,
        /// Target mesh spacing in metres.
        mesh_spacing: f64,
    },
    /// Closed-form cantilever beam discretised on a line.
    Analytical { length: f64, n_points: usize },
    /// Previously written modal data file.
    Load { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSource,
    pub n_sensors: usize,
    pub n_modes: usize,
    pub split_fraction: f64,
    pub split_seed: u64,
    pub budget: u64,
    pub eval_episodes: usize,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub curriculum: CurriculumConfig,
    #[serde(default)]
    pub agent: AgentConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelSource::Assemble {
                geometry: PlateGeometry::cantilever_default(),
                material: MaterialSpec::steel(),
                mesh_spacing: 0.005,
            },
            n_sensors: 5,
            n_modes: 5,
            split_fraction: 0.75,
            split_seed: 0,
            budget: 20_000_000,
            eval_episodes: 100,
            out_dir: PathBuf::from("runs/default"),
            curriculum: CurriculumConfig::default(),
            agent: AgentConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        let cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        match &self.model {
            ModelSource::Assemble {
                geometry,
                material,
                mesh_spacing,
            } => {
                geometry.validate()?;
                material.validate()?;
                if !(*mesh_spacing > 0.0) {
                    return Err(Error::InvalidConfig(
                        "mesh_spacing must be positive".into(),
                    ));
                }
            }
            ModelSource::Analytical { length, n_points } => {
                if !(*length > 0.0) {
                    return Err(Error::InvalidConfig("beam length must be positive".into()));
                }
                if *n_points < 2 {
                    return Err(Error::InvalidConfig("n_points must be >= 2".into()));
                }
            }
            ModelSource::Load { path } => {
                if !path.exists() {
                    return Err(Error::InvalidConfig(format!(
                        "model file {} does not exist",
                        path.display()
                    )));
                }
            }
        }
        if self.n_sensors == 0 || self.n_modes == 0 {
            return Err(Error::InvalidConfig(
                "n_sensors and n_modes must be positive".into(),
            ));
        }
        if self.n_sensors < self.n_modes {
            // The effective-independence baseline needs at least as many
            // sensors as modes on the full-mode level.
            return Err(Error::InvalidConfig(
                "n_sensors must be >= n_modes".into(),
            ));
        }
        if !(self.split_fraction > 0.0 && self.split_fraction <= 1.0) {
            return Err(Error::InvalidConfig(
                "split_fraction must be in (0, 1]".into(),
            ));
        }
        if self.eval_episodes == 0 {
            return Err(Error::InvalidConfig("eval_episodes must be >= 1".into()));
        }
        self.curriculum.validate()?;
        self.agent.validate()?;
        Ok(())
    }

    /// Build (or load) the modal model this config describes.
    pub fn build_model(&self) -> Result<ModalModel> {
        let model = match &self.model {
            ModelSource::Assemble {
                geometry,
                material,
                mesh_spacing,
            } => crate::modal::assemble_plate_model(geometry, material, *mesh_spacing, self.n_modes)?,
            ModelSource::Analytical { length, n_points } => {
                crate::modal::beam_modes_analytical(*length, *n_points, self.n_modes)?
            }
            ModelSource::Load { path } => {
                let m = ModalModel::load(path)?;
                if m.n_modes() < self.n_modes {
                    return Err(Error::InvalidConfig(format!(
                        "model file has {} modes, config needs {}",
                        m.n_modes(),
                        self.n_modes
                    )));
                }
                m
            }
        };
        Ok(model)
    }

    /// Canonical serialisation: the TOML rendering of the parsed struct,
    /// independent of the formatting of the input file.
    pub fn canonical_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(format!("serialise: {e}")))
    }

    /// SHA-256 of the canonical serialisation.
    pub fn hash(&self) -> Result<String> {
        let mut h = Sha256::new();
        h.update(self.canonical_toml()?.as_bytes());
        Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
    }
}
