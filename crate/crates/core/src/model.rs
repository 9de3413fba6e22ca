//! Musculoskeletal model definition and its JSON file format.
//!
//! ```json
//! {
//!   "schema_version": 1,
//!   "name": "ankle pair",
//!   "joints": [{ "name": "ankle_r", "kind": "rotational", "angle_range": [-0.5, 0.6] }],
//!   "mvc": { "sol_r": 0.31 },
//!   "mtus": [{
//!     "name": "sol_r",
//!     "joints": ["ankle_r"],
//!     "emg_channel": "sol_r",
//!     "params": { "shape_factor": -1.0, "f_max_iso": 2839.0, "l_opt": 0.05,
//!                 "l_slack": 0.25, "alpha_opt": 0.436, "damping": 0.1 },
//!     "geometry": "geometry/sol_r.csv"
//!   }]
//! }
//! ```
//!
//! `emg_channel` may be `null` (or omitted), in which case the unit is
//! passive: its activation is identically zero. Geometry paths are relative
//! to the model file. Angles are radians throughout.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{fit_surrogate, load_grid, write_grid, GeometryGrid, GeometrySurrogate};

pub const SCHEMA_VERSION: u32 = 1;

/// Lowest shape factor accepted anywhere.
pub const SHAPE_FACTOR_MIN: f64 = -3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum JointKind {
    #[default]
    Rotational,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointDef {
    pub name: String,
    #[serde(default)]
    pub kind: JointKind,
    pub angle_range: [f64; 2],
}

/// Calibratable properties of one muscle-tendon unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MtuParams {
    /// EMG-to-activation shape factor, in `[-3, 0)`.
    pub shape_factor: f64,
    /// Maximal isometric force (N).
    pub f_max_iso: f64,
    /// Optimal fiber length (m).
    pub l_opt: f64,
    /// Tendon slack length (m).
    pub l_slack: f64,
    /// Pennation angle at optimal fiber length (rad).
    pub alpha_opt: f64,
    /// Linear fiber damping, normalized force per normalized velocity.
    #[serde(default = "default_damping")]
    pub damping: f64,
}

pub const DEFAULT_DAMPING: f64 = 0.1;

fn default_damping() -> f64 {
    DEFAULT_DAMPING
}

impl MtuParams {
    pub fn validate(&self) -> std::result::Result<(), String> {
        let p = self;
        if !(p.shape_factor >= SHAPE_FACTOR_MIN && p.shape_factor < 0.0) {
            return Err(format!("shape_factor {} outside [-3, 0)", p.shape_factor));
        }
        if !(p.f_max_iso > 0.0 && p.f_max_iso.is_finite()) {
            return Err(format!("f_max_iso {} must be positive", p.f_max_iso));
        }
        if !(p.l_opt > 0.0 && p.l_opt.is_finite()) {
            return Err(format!("l_opt {} must be positive", p.l_opt));
        }
        if !(p.l_slack > 0.0 && p.l_slack.is_finite()) {
            return Err(format!("l_slack {} must be positive", p.l_slack));
        }
        if !(p.alpha_opt >= 0.0 && p.alpha_opt < std::f64::consts::FRAC_PI_2) {
            return Err(format!("alpha_opt {} outside [0, pi/2)", p.alpha_opt));
        }
        if !(p.damping >= 0.0 && p.damping.is_finite()) {
            return Err(format!("damping {} must be non-negative", p.damping));
        }
        Ok(())
    }
}

/// One muscle-tendon unit as declared in the model file.
#[derive(Debug, Clone, PartialEq)]
pub struct MtuDef {
    pub name: String,
    pub joints: Vec<String>,
    pub emg_channel: Option<String>,
    pub params: MtuParams,
}

/// Validated model with fitted geometry surrogates.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelDef {
    pub name: String,
    pub joints: Vec<JointDef>,
    pub mtus: Vec<MtuDef>,
    /// Channel name to MVC amplitude, sorted by channel name.
    pub mvc: Vec<(String, f64)>,
    pub grids: Vec<GeometryGrid>,
    pub surrogates: Vec<GeometrySurrogate>,
    /// For each MTU, the model joint index of each surrogate DOF.
    pub dof_joints: Vec<Vec<usize>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    schema_version: u32,
    #[serde(default)]
    name: String,
    joints: Vec<JointDef>,
    mvc: BTreeMap<String, f64>,
    mtus: Vec<MtuFile>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MtuFile {
    name: String,
    joints: Vec<String>,
    #[serde(default)]
    emg_channel: Option<String>,
    params: MtuParams,
    geometry: PathBuf,
}

impl ModelDef {
    /// Assembles and validates a model from in-memory parts.
    pub fn new(
        name: impl Into<String>,
        joints: Vec<JointDef>,
        mtus: Vec<MtuDef>,
        mvc: Vec<(String, f64)>,
        grids: Vec<GeometryGrid>,
    ) -> Result<Self> {
        let bad = Error::InvalidModel;
        for (i, j) in joints.iter().enumerate() {
            if joints[..i].iter().any(|o| o.name == j.name) {
                return Err(bad(format!("duplicate joint {}", j.name)));
            }
            let [lo, hi] = j.angle_range;
            if !(lo < hi) {
                return Err(bad(format!("joint {}: angle range [{lo}, {hi}] is empty", j.name)));
            }
        }
        let mut mvc = mvc;
        mvc.sort_by(|a, b| a.0.cmp(&b.0));
        for (ch, v) in &mvc {
            if !(*v > 0.0 && v.is_finite()) {
                return Err(bad(format!("MVC for channel {ch} must be positive, got {v}")));
            }
        }
        if grids.len() != mtus.len() {
            return Err(bad(format!("{} geometry grids for {} MTUs", grids.len(), mtus.len())));
        }
        let mut surrogates = Vec::with_capacity(mtus.len());
        let mut dof_joints = Vec::with_capacity(mtus.len());
        for (i, (m, g)) in mtus.iter().zip(&grids).enumerate() {
            if mtus[..i].iter().any(|o| o.name == m.name) {
                return Err(bad(format!("duplicate MTU {}", m.name)));
            }
            if m.joints.is_empty() {
                return Err(bad(format!("MTU {} spans no joints", m.name)));
            }
            for jn in &m.joints {
                if !joints.iter().any(|j| &j.name == jn) {
                    return Err(bad(format!("MTU {} references unknown joint {jn}", m.name)));
                }
            }
            m.params
                .validate()
                .map_err(|e| bad(format!("MTU {}: {e}", m.name)))?;
            if let Some(ch) = &m.emg_channel {
                if !mvc.iter().any(|(c, _)| c == ch) {
                    return Err(bad(format!(
                        "MTU {} uses EMG channel {ch} with no MVC entry",
                        m.name
                    )));
                }
            }
            if g.mtu != m.name {
                return Err(bad(format!("geometry grid {} paired with MTU {}", g.mtu, m.name)));
            }
            let mut spanned: Vec<&String> = m.joints.iter().collect();
            let mut covered: Vec<&String> = g.dofs.iter().collect();
            spanned.sort();
            covered.sort();
            if spanned != covered {
                return Err(bad(format!(
                    "MTU {}: geometry DOFs {:?} differ from spanned joints {:?}",
                    m.name, g.dofs, m.joints
                )));
            }
            let mut idx = Vec::with_capacity(g.dofs.len());
            for (dof, (lo, hi)) in g.dofs.iter().zip(g.domain()) {
                let j = joints.iter().position(|j| &j.name == dof).expect("checked above");
                let [rlo, rhi] = joints[j].angle_range;
                if lo > rlo + 1e-9 || hi < rhi - 1e-9 {
                    return Err(bad(format!(
                        "MTU {}: geometry grid [{lo}, {hi}] does not cover joint {dof} range [{rlo}, {rhi}]",
                        m.name
                    )));
                }
                idx.push(j);
            }
            surrogates.push(fit_surrogate(g)?);
            dof_joints.push(idx);
        }
        Ok(Self {
            name: name.into(),
            joints,
            mtus,
            mvc,
            grids,
            surrogates,
            dof_joints,
        })
    }

    pub fn joint_names(&self) -> Vec<String> {
        self.joints.iter().map(|j| j.name.clone()).collect()
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }

    pub fn mtu_index(&self, name: &str) -> Option<usize> {
        self.mtus.iter().position(|m| m.name == name)
    }

    /// EMG channels referenced by at least one MTU, in MVC-table order.
    pub fn emg_channels(&self) -> Vec<String> {
        self.mvc
            .iter()
            .filter(|(c, _)| self.mtus.iter().any(|m| m.emg_channel.as_deref() == Some(c)))
            .map(|(c, _)| c.clone())
            .collect()
    }

    pub fn mvc_of(&self, channel: &str) -> Option<f64> {
        self.mvc.iter().find(|(c, _)| c == channel).map(|(_, v)| *v)
    }

    pub fn params(&self) -> Vec<MtuParams> {
        self.mtus.iter().map(|m| m.params).collect()
    }

    /// Copy of the model with new per-MTU parameters (same order as `mtus`).
    pub fn with_params(&self, params: &[MtuParams]) -> Result<Self> {
        if params.len() != self.mtus.len() {
            return Err(Error::InvalidArgument(format!(
                "{} parameter sets for {} MTUs",
                params.len(),
                self.mtus.len()
            )));
        }
        let mut out = self.clone();
        for (m, p) in out.mtus.iter_mut().zip(params) {
            p.validate()
                .map_err(|e| Error::InvalidModel(format!("MTU {}: {e}", m.name)))?;
            m.params = *p;
        }
        Ok(out)
    }
}

/// Reads and validates a model file, fitting each geometry surrogate.
pub fn load_model(path: impl AsRef<Path>) -> Result<ModelDef> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: ModelFile = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line() as u64,
        msg: e.to_string(),
    })?;
    if file.schema_version != SCHEMA_VERSION {
        return Err(Error::InvalidModel(format!(
            "unsupported schema_version {} (expected {SCHEMA_VERSION})",
            file.schema_version
        )));
    }
    let base = path.parent().unwrap_or(Path::new("."));
    let mut mtus = Vec::with_capacity(file.mtus.len());
    let mut grids = Vec::with_capacity(file.mtus.len());
    for m in file.mtus {
        let emg_channel = m.emg_channel.filter(|c| c != "none");
        // joint references are checked before touching geometry files
        for jn in &m.joints {
            if !file.joints.iter().any(|j| &j.name == jn) {
                return Err(Error::InvalidModel(format!(
                    "MTU {} references unknown joint {jn}",
                    m.name
                )));
            }
        }
        grids.push(load_grid(base.join(&m.geometry), &m.name)?);
        mtus.push(MtuDef {
            name: m.name,
            joints: m.joints,
            emg_channel,
            params: m.params,
        });
    }
    ModelDef::new(file.name, file.joints, mtus, file.mvc.into_iter().collect(), grids)
}

/// Writes `model` to `path`, with its geometry grids under `geometry/`
/// next to it.
pub fn save_model(model: &ModelDef, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new("."));
    let geo_dir = base.join("geometry");
    fs::create_dir_all(&geo_dir).map_err(|e| Error::io(&geo_dir, e))?;
    let mut mtus = Vec::with_capacity(model.mtus.len());
    for (m, g) in model.mtus.iter().zip(&model.grids) {
        let rel = PathBuf::from("geometry").join(format!("{}.csv", m.name));
        write_grid(g, base.join(&rel))?;
        mtus.push(MtuFile {
            name: m.name.clone(),
            joints: m.joints.clone(),
            emg_channel: m.emg_channel.clone(),
            params: m.params,
            geometry: rel,
        });
    }
    let file = ModelFile {
        schema_version: SCHEMA_VERSION,
        name: model.name.clone(),
        joints: model.joints.clone(),
        mvc: model.mvc.iter().cloned().collect(),
        mtus,
    };
    let text = serde_json::to_string_pretty(&file).expect("model serializes");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    fn minimal(dir: &Path, joint_ref: &str) -> PathBuf {
        write(
            dir,
            "sol.csv",
            "ankle_r,lmt\n-0.6,0.33\n-0.3,0.315\n0.0,0.3\n0.3,0.285\n0.6,0.27\n",
        );
        write(
            dir,
            "model.json",
            &format!(
                r#"{{
  "schema_version": 1,
  "joints": [{{"name": "ankle_r", "angle_range": [-0.5, 0.5]}}],
  "mvc": {{"sol_r": 0.3}},
  "mtus": [{{
    "name": "sol_r", "joints": ["{joint_ref}"], "emg_channel": "sol_r",
    "params": {{"shape_factor": -1.0, "f_max_iso": 2839.0, "l_opt": 0.05,
               "l_slack": 0.25, "alpha_opt": 0.436}},
    "geometry": "sol.csv"
  }}]
}}"#
            ),
        )
    }

    #[test]
    fn loads_minimal_model() {
        let dir = tempfile::tempdir().unwrap();
        let m = load_model(minimal(dir.path(), "ankle_r")).unwrap();
        assert_eq!(m.joints.len(), 1);
        assert_eq!(m.mtus.len(), 1);
        assert_eq!(m.mtus[0].params.damping, DEFAULT_DAMPING);
        assert_eq!(m.emg_channels(), vec!["sol_r".to_string()]);
    }

    #[test]
    fn loading_twice_is_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p = minimal(dir.path(), "ankle_r");
        assert_eq!(load_model(&p).unwrap(), load_model(&p).unwrap());
    }

    #[test]
    fn unknown_joint_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_model(minimal(dir.path(), "knee_x")).unwrap_err();
        assert!(err.to_string().contains("knee_x"), "{err}");
    }

    #[test]
    fn syntax_error_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "bad.json", "{\n  \"schema_version\": 1,\n  oops\n}");
        match load_model(p).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn invariants_are_enforced() {
        let dir = tempfile::tempdir().unwrap();
        let p = minimal(dir.path(), "ankle_r");
        let base = load_model(&p).unwrap();
        let mut params = base.params();
        params[0].shape_factor = 0.0;
        assert!(base.with_params(&params).is_err());

        let text = fs::read_to_string(&p).unwrap();
        let no_mvc = text.replace("\"sol_r\": 0.3", "\"other\": 0.3");
        let p2 = write(dir.path(), "m2.json", &no_mvc);
        let err = load_model(p2).unwrap_err().to_string();
        assert!(err.contains("no MVC"), "{err}");

        let narrow = text.replace("[-0.5, 0.5]", "[-0.9, 0.5]");
        let p3 = write(dir.path(), "m3.json", &narrow);
        assert!(load_model(p3).unwrap_err().to_string().contains("does not cover"));

        let none = text.replace("\"emg_channel\": \"sol_r\"", "\"emg_channel\": \"none\"");
        let p4 = write(dir.path(), "m4.json", &none);
        assert_eq!(load_model(p4).unwrap().mtus[0].emg_channel, None);
    }

    #[test]
    fn save_then_load_is_identical() {
        let dir = tempfile::tempdir().unwrap();
        let m = load_model(minimal(dir.path(), "ankle_r")).unwrap();
        let out = dir.path().join("out").join("m.json");
        fs::create_dir_all(out.parent().unwrap()).unwrap();
        save_model(&m, &out).unwrap();
        assert_eq!(load_model(&out).unwrap(), m);
    }
}
