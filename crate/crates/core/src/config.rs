//! Experiment configuration file.
//!
//! The file is TOML. Every table is optional; omitted keys take the defaults
//! below, and unknown keys are rejected with the path of the offending field.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::moga::GaConfig;
use crate::plant::{ArmModel, CartesianPoint, ElbowBranch};
use crate::trajectory::{TrajectoryKind, TrajectorySpec};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config error at `{field}`: {reason}")]
    Parse { field: String, reason: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// A named trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryEntry {
    pub id: String,
    pub spec: TrajectorySpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Replication {
    /// Replicate `i` runs with seed `base_seed + i`.
    pub base_seed: u64,
    pub replicates: usize,
}

impl Default for Replication {
    fn default() -> Self {
        Self { base_seed: 1, replicates: 5 }
    }
}

impl Replication {
    pub fn seeds(&self) -> Vec<u64> {
        (0..self.replicates as u64).map(|i| self.base_seed + i).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PopSweep {
    pub sizes: Vec<usize>,
    /// Trajectory tuned at every size.
    pub trajectory: String,
}

impl Default for PopSweep {
    fn default() -> Self {
        Self { sizes: vec![10, 20, 30, 50, 80], trajectory: "spiral".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenericVsSpecific {
    /// Trajectory both controllers are judged on.
    pub target: String,
    /// Trajectories averaged by the generic controller. Empty means all.
    pub training: Vec<String>,
}

impl Default for GenericVsSpecific {
    fn default() -> Self {
        Self { target: "pyramid".into(), training: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpeedStudy {
    pub trajectory: String,
    /// Durations in seconds.
    pub durations: Vec<f64>,
}

impl Default for SpeedStudy {
    fn default() -> Self {
        Self { trajectory: "spiral".into(), durations: vec![3.0, 4.0, 5.0, 6.0] }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    /// Trajectories to emit. Empty means all.
    pub trajectories: Vec<String>,
    /// Cap on emitted members per front, spread evenly along f_acc. Unset means all.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_members: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuneOutput {
    /// Cap on the rollout files written by `tune`. Unset means one per front member.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_rollouts: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub output_dir: PathBuf,
    /// Control period in seconds.
    pub dt: f64,
    pub branch: ElbowBranch,
    pub model: ArmModel,
    pub trajectories: Vec<TrajectoryEntry>,
    pub ga: GaConfig,
    pub replication: Replication,
    pub tune: TuneOutput,
    pub popsweep: PopSweep,
    pub generic_vs_specific: GenericVsSpecific,
    pub speed_study: SpeedStudy,
    pub dataset: DatasetConfig,
}

pub fn default_trajectories() -> Vec<TrajectoryEntry> {
    vec![
        TrajectoryEntry {
            id: "spiral".into(),
            spec: TrajectorySpec::Spiral {
                center: CartesianPoint::new(0.9, 0.4),
                r0: 0.05,
                r1: 0.35,
                turns: 3.0,
                duration: 5.0,
            },
        },
        TrajectoryEntry {
            id: "pyramid".into(),
            spec: TrajectorySpec::Pyramid {
                center: CartesianPoint::new(0.9, 0.0),
                half_width: 0.4,
                height: 0.4,
                n_teeth: 2,
                duration: 5.0,
            },
        },
        TrajectoryEntry {
            id: "random".into(),
            spec: TrajectorySpec::Random { seed: 7, n_waypoints: 6, duration: 5.0, r_min: None, r_max: None },
        },
    ]
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            output_dir: PathBuf::from("out"),
            dt: 0.002,
            branch: ElbowBranch::default(),
            model: ArmModel::default(),
            trajectories: default_trajectories(),
            ga: GaConfig::default(),
            replication: Replication::default(),
            tune: TuneOutput::default(),
            popsweep: PopSweep::default(),
            generic_vs_specific: GenericVsSpecific::default(),
            speed_study: SpeedStudy::default(),
            dataset: DatasetConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let de = toml::Deserializer::parse(text).map_err(|e| ConfigError::Parse {
            field: "<document>".into(),
            reason: e.to_string().trim().to_string(),
        })?;
        let config: Self = serde_path_to_error::deserialize(de).map_err(|e| ConfigError::Parse {
            field: e.path().to_string(),
            reason: e.inner().to_string().trim().to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        Self::from_toml_str(&text)
    }

    /// Copy with every optional default filled in, as written to run manifests.
    pub fn resolved(&self) -> Self {
        let mut out = self.clone();
        let genes = 2 * self.model.n_links();
        out.ga.mutation_probability = Some(self.ga.mutation_probability_for(genes));
        if out.generic_vs_specific.training.is_empty() {
            out.generic_vs_specific.training = self.trajectory_ids();
        }
        if out.dataset.trajectories.is_empty() {
            out.dataset.trajectories = self.trajectory_ids();
        }
        out
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    pub fn trajectory_ids(&self) -> Vec<String> {
        self.trajectories.iter().map(|t| t.id.clone()).collect()
    }

    pub fn trajectory(&self, id: &str) -> Result<&TrajectoryEntry, ConfigError> {
        self.trajectories.iter().find(|t| t.id == id).ok_or_else(|| {
            ConfigError::Invalid(format!(
                "unknown trajectory id `{id}` (configured: {})",
                self.trajectory_ids().join(", ")
            ))
        })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |msg: String| Err(ConfigError::Invalid(msg));
        self.model.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.ga.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return invalid(format!("dt must be > 0, got {}", self.dt));
        }
        let mut seen = BTreeSet::new();
        for t in &self.trajectories {
            if t.id.is_empty() || !t.id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
                return invalid(format!("trajectory id `{}` must be non-empty and use only [A-Za-z0-9_-]", t.id));
            }
            if !seen.insert(t.id.as_str()) {
                return invalid(format!("duplicate trajectory id `{}`", t.id));
            }
        }
        if self.replication.replicates == 0 {
            return invalid("replication.replicates must be >= 1".into());
        }
        for &size in &self.popsweep.sizes {
            let mut ga = self.ga.clone();
            ga.population_size = size;
            ga.validate().map_err(|e| ConfigError::Invalid(format!("popsweep.sizes: {e}")))?;
        }
        if self.speed_study.durations.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
            return invalid("speed_study.durations must all be > 0".into());
        }
        if self.dataset.max_members == Some(0) || self.tune.max_rollouts == Some(0) {
            return invalid("member caps must be >= 1 when set".into());
        }
        Ok(())
    }

    /// Checks the references made by one experiment. Only the command that
    /// needs a section validates it, so a config written for `tune` need not
    /// carry a usable speed study.
    pub fn check_popsweep(&self) -> Result<(), ConfigError> {
        if self.popsweep.sizes.is_empty() {
            return Err(ConfigError::Invalid("popsweep.sizes must not be empty".into()));
        }
        self.trajectory(&self.popsweep.trajectory).map(|_| ())
    }

    pub fn check_generic_vs_specific(&self) -> Result<(), ConfigError> {
        let resolved = self.resolved();
        let g = &resolved.generic_vs_specific;
        self.trajectory(&g.target)?;
        for id in &g.training {
            self.trajectory(id)?;
        }
        if g.training.len() < 2 {
            return Err(ConfigError::Invalid(
                "generic_vs_specific needs at least 2 training trajectories".into(),
            ));
        }
        Ok(())
    }

    pub fn check_speed_study(&self) -> Result<(), ConfigError> {
        if self.speed_study.durations.is_empty() {
            return Err(ConfigError::Invalid("speed_study.durations must not be empty".into()));
        }
        let entry = self.trajectory(&self.speed_study.trajectory)?;
        if entry.spec.kind() != TrajectoryKind::Spiral {
            return Err(ConfigError::Invalid(format!(
                "speed_study.trajectory `{}` must be a spiral",
                entry.id
            )));
        }
        Ok(())
    }

    pub fn check_dataset(&self) -> Result<(), ConfigError> {
        for id in &self.dataset.trajectories {
            self.trajectory(id)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let c = ExperimentConfig::from_toml_str("").unwrap();
        assert_eq!(c, ExperimentConfig::default());
        assert_eq!(c.replication.seeds(), vec![1, 2, 3, 4, 5]);
        assert_eq!(c.trajectory_ids(), vec!["spiral", "pyramid", "random"]);
    }

    #[test]
    fn resolved_config_round_trips() {
        let c = ExperimentConfig::default().resolved();
        assert_eq!(c.ga.mutation_probability, Some(0.25));
        assert_eq!(c.generic_vs_specific.training.len(), 3);
        let back = ExperimentConfig::from_toml_str(&c.to_toml_string()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn model_base_defaults_to_origin() {
        let text = "[model]\nlink_lengths = [1.0, 0.8]\nlink_masses = [2.0, 1.5]\nviscous_damping = [0.1, 0.1]\ntorque_limits = [50.0, 50.0]\ngravity = 9.81\n";
        assert_eq!(ExperimentConfig::from_toml_str(text).unwrap().model, ArmModel::default());
    }

    #[test]
    fn unknown_key_reports_field_path() {
        let err = ExperimentConfig::from_toml_str("[ga]\npopulation_sise = 10\n").unwrap_err();
        match err {
            ConfigError::Parse { field, reason } => {
                assert_eq!(field, "ga.population_sise");
                assert!(reason.contains("population_sise"), "{reason}");
            }
            other => panic!("unexpected {other:?}"),
        }
        let err = ExperimentConfig::from_toml_str("[model]\ngravity = \"down\"\n").unwrap_err();
        assert!(matches!(err, ConfigError::Parse { ref field, .. } if field == "model.gravity"), "{err}");
    }

    #[test]
    fn trajectories_parse_from_tables() {
        let text = r#"
            [[trajectories]]
            id = "wide"
            spec = { kind = "spiral", center = { x = 1.0, y = 0.2 }, r0 = 0.1, r1 = 0.3, turns = 2.0, duration = 4.0 }

            [[trajectories]]
            id = "rnd"
            [trajectories.spec]
            kind = "random"
            seed = 3
            n_waypoints = 5
            duration = 5.0
        "#;
        let c = ExperimentConfig::from_toml_str(text).unwrap();
        assert_eq!(c.trajectory_ids(), vec!["wide", "rnd"]);
        assert_eq!(c.trajectory("rnd").unwrap().spec.kind(), TrajectoryKind::Random);
        assert!(c.trajectory("spiral").is_err());
    }

    #[test]
    fn validation_rejects_bad_values() {
        for text in [
            "dt = 0.0",
            "[ga]\npopulation_size = 7",
            "[replication]\nreplicates = 0",
            "[popsweep]\nsizes = [10, 3]",
            "[[trajectories]]\nid = \"a b\"\nspec = { kind = \"random\", seed = 1, n_waypoints = 4, duration = 2.0 }",
        ] {
            assert!(
                matches!(ExperimentConfig::from_toml_str(text), Err(ConfigError::Invalid(_))),
                "{text}"
            );
        }
    }

    #[test]
    fn experiment_checks() {
        let mut c = ExperimentConfig::default();
        assert!(c.check_popsweep().is_ok() && c.check_generic_vs_specific().is_ok());
        assert!(c.check_speed_study().is_ok() && c.check_dataset().is_ok());
        c.speed_study.trajectory = "pyramid".into();
        assert!(c.check_speed_study().is_err());
        c.generic_vs_specific.training = vec!["pyramid".into()];
        assert!(c.check_generic_vs_specific().is_err());
        c.popsweep.sizes.clear();
        assert!(c.check_popsweep().is_err());
    }
}
