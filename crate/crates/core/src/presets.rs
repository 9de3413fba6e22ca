//! Built-in lower-limb models with smooth synthetic geometry.
//!
//! Ankle angles are positive in plantarflexion and knee angles positive in
//! flexion, so plantarflexors shorten as the ankle angle grows and the
//! gastrocnemii also shorten with knee flexion.

use crate::error::Result;
use crate::geometry::GeometryGrid;
use crate::model::{JointDef, JointKind, ModelDef, MtuDef, MtuParams, DEFAULT_DAMPING};

pub const ANKLE_RANGE: [f64; 2] = [-0.5, 0.7];
pub const KNEE_RANGE: [f64; 2] = [0.0, 1.4];
/// MVC assigned to every channel of the presets (mV).
pub const PRESET_MVC: f64 = 0.5;

const ANKLE_KNOTS: usize = 13;
const KNEE_KNOTS: usize = 11;

struct UnitSpec {
    name: &'static str,
    emg: bool,
    f_max: f64,
    l_opt: f64,
    l_slack: f64,
    alpha: f64,
    /// Length change per unit sine of the ankle angle (m).
    ankle: f64,
    /// Length change per unit sine of the knee angle (m); zero if the unit
    /// does not span the knee.
    knee: f64,
}

const UNITS: [UnitSpec; 7] = [
    UnitSpec { name: "soleus", emg: true, f_max: 2839.0, l_opt: 0.050, l_slack: 0.250, alpha: 0.436, ankle: -0.045, knee: 0.0 },
    UnitSpec { name: "tibialis_anterior", emg: true, f_max: 905.0, l_opt: 0.098, l_slack: 0.223, alpha: 0.087, ankle: 0.035, knee: 0.0 },
    UnitSpec { name: "gastrocnemius_medialis", emg: true, f_max: 1558.0, l_opt: 0.060, l_slack: 0.390, alpha: 0.297, ankle: -0.048, knee: -0.025 },
    UnitSpec { name: "gastrocnemius_lateralis", emg: true, f_max: 683.0, l_opt: 0.064, l_slack: 0.380, alpha: 0.140, ankle: -0.045, knee: -0.022 },
    UnitSpec { name: "peroneus_longus", emg: false, f_max: 754.0, l_opt: 0.049, l_slack: 0.345, alpha: 0.175, ankle: -0.012, knee: 0.0 },
    UnitSpec { name: "peroneus_brevis", emg: false, f_max: 435.0, l_opt: 0.050, l_slack: 0.161, alpha: 0.087, ankle: -0.010, knee: 0.0 },
    UnitSpec { name: "peroneus_tertius", emg: false, f_max: 90.0, l_opt: 0.079, l_slack: 0.100, alpha: 0.227, ankle: 0.025, knee: 0.0 },
];

fn linspace([lo, hi]: [f64; 2], n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

fn joint(name: String, range: [f64; 2]) -> JointDef {
    JointDef { name, kind: JointKind::Rotational, angle_range: range }
}

fn unit(u: &UnitSpec, side: &str) -> (MtuDef, GeometryGrid) {
    let name = format!("{}_{side}", u.name);
    let ankle = format!("ankle_{side}");
    let neutral = u.l_slack + u.l_opt * u.alpha.cos();
    let (joints, grid) = if u.knee == 0.0 {
        let grid = GeometryGrid::sample(
            name.clone(),
            vec![ankle.clone()],
            vec![linspace(ANKLE_RANGE, ANKLE_KNOTS)],
            |q| neutral + u.ankle * q[0].sin(),
        );
        (vec![ankle], grid)
    } else {
        let knee = format!("knee_{side}");
        let grid = GeometryGrid::sample(
            name.clone(),
            vec![ankle.clone(), knee.clone()],
            vec![linspace(ANKLE_RANGE, ANKLE_KNOTS), linspace(KNEE_RANGE, KNEE_KNOTS)],
            |q| neutral + u.ankle * q[0].sin() + u.knee * q[1].sin() + 0.002 * q[0] * q[1],
        );
        (vec![ankle, knee], grid)
    };
    let mtu = MtuDef {
        emg_channel: u.emg.then(|| name.clone()),
        name,
        joints,
        params: MtuParams {
            shape_factor: -1.0,
            f_max_iso: u.f_max,
            l_opt: u.l_opt,
            l_slack: u.l_slack,
            alpha_opt: u.alpha,
            damping: DEFAULT_DAMPING,
        },
    };
    (mtu, grid)
}

fn assemble(name: &str, joints: Vec<JointDef>, parts: Vec<(MtuDef, GeometryGrid)>) -> Result<ModelDef> {
    let mvc = parts
        .iter()
        .filter_map(|(m, _)| m.emg_channel.clone())
        .map(|c| (c, PRESET_MVC))
        .collect();
    let (mtus, grids) = parts.into_iter().unzip();
    ModelDef::new(name, joints, mtus, mvc, grids)
}

/// Right ankle driven by soleus and tibialis anterior.
pub fn ankle2() -> Result<ModelDef> {
    assemble(
        "ankle2",
        vec![joint("ankle_r".into(), ANKLE_RANGE)],
        UNITS[..2].iter().map(|u| unit(u, "r")).collect(),
    )
}

/// Both ankles and knees with seven units per leg, four of them EMG-driven.
pub fn bilateral14() -> Result<ModelDef> {
    let joints = ["ankle_l", "ankle_r"]
        .iter()
        .map(|n| joint(n.to_string(), ANKLE_RANGE))
        .chain(["knee_l", "knee_r"].iter().map(|n| joint(n.to_string(), KNEE_RANGE)))
        .collect();
    let parts = ["l", "r"]
        .iter()
        .flat_map(|side| UNITS.iter().map(move |u| unit(u, side)))
        .collect();
    assemble("bilateral14", joints, parts)
}

pub fn by_name(name: &str) -> Option<Result<ModelDef>> {
    match name {
        "ankle2" => Some(ankle2()),
        "bilateral14" => Some(bilateral14()),
        _ => None,
    }
}

pub const PRESET_NAMES: [&str; 2] = ["ankle2", "bilateral14"];

/// Copy of `model` with every muscle-tendon length multiplied by `factor`,
/// as for a uniformly larger limb. Parameters are left unchanged.
pub fn scale_geometry(model: &ModelDef, factor: f64) -> Result<ModelDef> {
    let grids = model
        .grids
        .iter()
        .map(|g| GeometryGrid {
            lmt: g.lmt.iter().map(|l| l * factor).collect(),
            ..g.clone()
        })
        .collect();
    ModelDef::new(
        model.name.clone(),
        model.joints.clone(),
        model.mtus.clone(),
        model.mvc.clone(),
        grids,
    )
}
