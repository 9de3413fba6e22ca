use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelDef;
use crate::trace::{load_trace, Trace};

/// Name of the manifest inside a dataset directory.
pub const MANIFEST: &str = "dataset.json";

/// One recorded trial: inputs plus reference joint torques.
#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub name: String,
    pub emg: Trace,
    pub angles: Trace,
    /// One column per DOF, named after the joint.
    pub tau_id: Trace,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationDataset {
    pub dofs: Vec<String>,
    pub trials: Vec<Trial>,
}

impl CalibrationDataset {
    pub fn validate(&self, model: &ModelDef) -> Result<()> {
        if self.dofs.is_empty() || self.trials.is_empty() {
            return Err(Error::InvalidArgument(
                "calibration dataset needs at least one DOF and one trial".into(),
            ));
        }
        for d in &self.dofs {
            if model.joint_index(d).is_none() {
                return Err(Error::InvalidArgument(format!("DOF {d} is not a model joint")));
            }
        }
        for t in &self.trials {
            t.tau_id
                .require_channels(&self.dofs)
                .map_err(|e| Error::InvalidTrace(format!("trial {}: {e}", t.name)))?;
            if t.tau_id.is_empty() {
                return Err(Error::InvalidTrace(format!("trial {} has no rows", t.name)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DatasetManifest {
    /// Free-form description, e.g. the walking speed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub dofs: Vec<String>,
    pub trials: Vec<TrialEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TrialEntry {
    pub name: String,
    pub emg: String,
    pub angles: String,
    pub tau_id: String,
}

/// Loads `dir/dataset.json` and every trial CSV it lists.
pub fn load_dataset(dir: impl AsRef<Path>, model: &ModelDef) -> Result<CalibrationDataset> {
    let dir = dir.as_ref();
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: DatasetManifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.clone(),
        line: e.line() as u64,
        msg: e.to_string(),
    })?;
    let channels = model.emg_channels();
    let joints = model.joint_names();
    let trials = manifest
        .trials
        .iter()
        .map(|t| {
            Ok(Trial {
                name: t.name.clone(),
                emg: load_trace(dir.join(&t.emg), &channels)?,
                angles: load_trace(dir.join(&t.angles), &joints)?,
                tau_id: load_trace(dir.join(&t.tau_id), &manifest.dofs)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let ds = CalibrationDataset {
        dofs: manifest.dofs,
        trials,
    };
    ds.validate(model)?;
    Ok(ds)
}

pub fn write_manifest(dir: impl AsRef<Path>, manifest: &DatasetManifest) -> Result<()> {
    let path = dir.as_ref().join(MANIFEST);
    let text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}
