//! Joint torque estimation and assistance shaping.
//!
//! The [`Pipeline`] is the causal, per-sample estimator: EMG envelope and
//! joint angles in, biological and support torque per joint out. Muscle
//! forces act through `r = −∂L/∂θ`, so a unit that shortens as a joint
//! angle increases produces positive torque about that joint.

use std::sync::Arc;

use crate::activation::{activation_unchecked, normalize_sample, EmgMode, EnvelopeFilter};
use crate::curves::CurveSet;
use crate::error::{Error, Result};
use crate::geometry::{GeometryEval, GeometrySurrogate};
use crate::model::ModelDef;
use crate::muscle::{MtuState, MtuUnit};
use crate::trace::{common_grid, Trace};

/// Fixed estimator sample period.
pub const SAMPLE_PERIOD: f64 = 1e-3;
pub const DEFAULT_TORQUE_CAP: f64 = 40.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssistanceConfig {
    pub support_ratio: f64,
    pub torque_cap: f64,
}

impl AssistanceConfig {
    pub fn new(support_ratio: f64, torque_cap: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&support_ratio) {
            return Err(Error::InvalidArgument(format!(
                "support ratio {support_ratio} outside [0, 1]"
            )));
        }
        if !(torque_cap > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "torque cap {torque_cap} must be positive"
            )));
        }
        Ok(Self {
            support_ratio,
            torque_cap,
        })
    }

    pub fn with_ratio(support_ratio: f64) -> Result<Self> {
        Self::new(support_ratio, DEFAULT_TORQUE_CAP)
    }
}

impl Default for AssistanceConfig {
    fn default() -> Self {
        Self {
            support_ratio: 0.0,
            torque_cap: DEFAULT_TORQUE_CAP,
        }
    }
}

/// Scales biological torque by the support ratio and caps it per joint.
#[inline]
pub fn shape_assistance(tau_bio: f64, cfg: &AssistanceConfig) -> f64 {
    (cfg.support_ratio * tau_bio).clamp(-cfg.torque_cap, cfg.torque_cap)
}

/// `∂L/∂θ` of one unit about one model joint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentArm {
    pub joint: usize,
    pub d_length: f64,
}

/// `τ_j = Σ_i F_i · (−∂L_i/∂θ_j)` over the units spanning each joint.
pub fn joint_torque(forces: &[f64], arms: &[Vec<MomentArm>], n_joints: usize) -> Vec<f64> {
    let mut tau = vec![0.0; n_joints];
    accumulate_torque(forces, arms, &mut tau);
    tau
}

fn accumulate_torque(forces: &[f64], arms: &[Vec<MomentArm>], tau: &mut [f64]) {
    tau.iter_mut().for_each(|t| *t = 0.0);
    for (f, unit_arms) in forces.iter().zip(arms) {
        for arm in unit_arms {
            tau[arm.joint] += f * -arm.d_length;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointTorqueFrame {
    pub t: f64,
    pub tau_bio: Vec<f64>,
    pub tau_support: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineOptions {
    pub emg_mode: EmgMode,
    pub envelope_cutoff_hz: f64,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            emg_mode: EmgMode::Envelope,
            envelope_cutoff_hz: crate::activation::DEFAULT_ENVELOPE_CUTOFF_HZ,
        }
    }
}

/// Maps each unit to the EMG channel driving it.
#[derive(Debug, Clone)]
pub(crate) struct Wiring {
    pub channels: Vec<String>,
    /// Per MTU: index into `channels` and that channel's MVC.
    pub drive: Vec<Option<(usize, f64)>>,
}

impl Wiring {
    pub fn new(model: &ModelDef) -> Self {
        let channels = model.emg_channels();
        let drive = model
            .mtus
            .iter()
            .map(|m| {
                m.emg_channel.as_ref().map(|c| {
                    let idx = channels.iter().position(|x| x == c).expect("wired channel");
                    (idx, model.mvc_of(c).expect("validated MVC"))
                })
            })
            .collect();
        Self { channels, drive }
    }

    #[inline]
    pub fn excitation(&self, mtu: usize, emg: &[f64]) -> f64 {
        match self.drive[mtu] {
            Some((ch, mvc)) => normalize_sample(emg[ch], mvc),
            None => 0.0,
        }
    }
}

/// Gathers a unit's DOF angles from the model-ordered joint vector.
#[inline]
pub(crate) fn unit_geometry(s: &GeometrySurrogate, dofs: &[usize], angles: &[f64]) -> GeometryEval {
    let mut local = [0.0; 2];
    for (k, &j) in dofs.iter().enumerate() {
        local[k] = angles[j];
    }
    s.evaluate(&local[..dofs.len()])
}

/// Streaming torque estimator. One instance per independent input stream.
#[derive(Debug, Clone)]
pub struct Pipeline {
    joint_names: Vec<String>,
    wiring: Wiring,
    shape_factors: Vec<f64>,
    surrogates: Vec<GeometrySurrogate>,
    dof_joints: Vec<Vec<usize>>,
    units: Vec<MtuUnit>,
    cfg: AssistanceConfig,
    envelopes: Option<Vec<EnvelopeFilter>>,
    opts: PipelineOptions,
    last_t: Option<f64>,
    clamp_reported: bool,
    forces: Vec<f64>,
    arms: Vec<Vec<MomentArm>>,
    states: Vec<Option<MtuState>>,
}

impl Pipeline {
    pub fn new(model: &ModelDef, cfg: AssistanceConfig, opts: PipelineOptions) -> Result<Self> {
        Self::with_curves(model, cfg, opts, Arc::new(CurveSet::standard()))
    }

    pub fn with_curves(
        model: &ModelDef,
        cfg: AssistanceConfig,
        opts: PipelineOptions,
        curves: Arc<CurveSet>,
    ) -> Result<Self> {
        AssistanceConfig::new(cfg.support_ratio, cfg.torque_cap)?;
        let wiring = Wiring::new(model);
        let envelopes = match opts.emg_mode {
            EmgMode::Envelope => None,
            EmgMode::Raw => {
                let f = EnvelopeFilter::new(opts.envelope_cutoff_hz, SAMPLE_PERIOD)?;
                Some(vec![f; wiring.channels.len()])
            }
        };
        let arms = model
            .dof_joints
            .iter()
            .map(|d| {
                d.iter()
                    .map(|&joint| MomentArm {
                        joint,
                        d_length: 0.0,
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            joint_names: model.joint_names(),
            shape_factors: model.mtus.iter().map(|m| m.params.shape_factor).collect(),
            surrogates: model.surrogates.clone(),
            dof_joints: model.dof_joints.clone(),
            units: model
                .mtus
                .iter()
                .map(|m| MtuUnit::new(m.params, curves.clone()))
                .collect(),
            wiring,
            cfg,
            envelopes,
            opts,
            last_t: None,
            clamp_reported: false,
            forces: vec![0.0; model.mtus.len()],
            arms,
            states: vec![None; model.mtus.len()],
        })
    }

    /// EMG channel order expected by [`Pipeline::step`].
    pub fn emg_channels(&self) -> &[String] {
        &self.wiring.channels
    }

    pub fn joint_names(&self) -> &[String] {
        &self.joint_names
    }

    pub fn options(&self) -> PipelineOptions {
        self.opts
    }

    /// Latest equilibrium state of every unit.
    pub fn states(&self) -> &[Option<MtuState>] {
        &self.states
    }

    pub fn set_assistance(&mut self, cfg: AssistanceConfig) -> Result<()> {
        self.cfg = AssistanceConfig::new(cfg.support_ratio, cfg.torque_cap)?;
        Ok(())
    }

    /// Processes one sample. `emg` follows [`Pipeline::emg_channels`];
    /// `angles` follows the model's joint order.
    pub fn step(&mut self, t: f64, emg: &[f64], angles: &[f64]) -> Result<JointTorqueFrame> {
        if emg.len() != self.wiring.channels.len() || angles.len() != self.joint_names.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} EMG and {} angle values, got {} and {}",
                self.wiring.channels.len(),
                self.joint_names.len(),
                emg.len(),
                angles.len()
            )));
        }
        let dt = match self.last_t {
            Some(prev) if t > prev => t - prev,
            Some(prev) => {
                return Err(Error::InvalidArgument(format!(
                    "time went from {prev} to {t}"
                )))
            }
            None => SAMPLE_PERIOD,
        };
        self.last_t = Some(t);
        let mut env_buf;
        let emg = match &mut self.envelopes {
            Some(filters) => {
                env_buf = Vec::with_capacity(emg.len());
                env_buf.extend(filters.iter_mut().zip(emg).map(|(f, &x)| f.process(x)));
                &env_buf[..]
            }
            None => emg,
        };
        for i in 0..self.units.len() {
            let u = self.wiring.excitation(i, emg);
            let a = activation_unchecked(u, self.shape_factors[i]);
            let geo = unit_geometry(&self.surrogates[i], &self.dof_joints[i], angles);
            if geo.clamped && !self.clamp_reported {
                self.clamp_reported = true;
                log::warn!(
                    "{}: joint angles outside the geometry domain at t = {t}; clamping",
                    self.surrogates[i].mtu()
                );
            }
            let state = self.units[i].step(geo.lmt, a, dt)?;
            self.forces[i] = state.forces.f_mtu;
            for (arm, g) in self.arms[i].iter_mut().zip(geo.gradient) {
                arm.d_length = g;
            }
            self.states[i] = Some(state);
        }
        let mut tau_bio = vec![0.0; self.joint_names.len()];
        accumulate_torque(&self.forces, &self.arms, &mut tau_bio);
        let tau_support = tau_bio.iter().map(|&t| shape_assistance(t, &self.cfg)).collect();
        Ok(JointTorqueFrame {
            t,
            tau_bio,
            tau_support,
        })
    }
}

/// EMG and angle traces resampled onto the shared 1 kHz grid, with columns
/// in pipeline order.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedInputs {
    pub emg: Trace,
    pub angles: Trace,
}

impl AlignedInputs {
    pub fn time(&self) -> &[f64] {
        self.angles.time()
    }
}

/// Checks channels against the model and resamples both traces to 1 kHz.
pub fn align_inputs(model: &ModelDef, emg: &Trace, angles: &Trace) -> Result<AlignedInputs> {
    let channels = model.emg_channels();
    let joints = model.joint_names();
    emg.require_channels(&channels)?;
    angles.require_channels(&joints)?;
    let grid = common_grid(&[emg, angles], SAMPLE_PERIOD)?;
    let pick = |tr: &Trace, names: &[String]| -> Result<Trace> {
        let cols = names
            .iter()
            .map(|n| tr.column(n).expect("checked").to_vec())
            .collect();
        Trace::new(names.to_vec(), tr.time().to_vec(), cols)?.resample(&grid)
    };
    Ok(AlignedInputs {
        emg: pick(emg, &channels)?,
        angles: pick(angles, &joints)?,
    })
}

/// Output column names: `<joint>_tau_bio` then `<joint>_tau_support`.
pub fn torque_columns(joints: &[String]) -> Vec<String> {
    joints
        .iter()
        .map(|j| format!("{j}_tau_bio"))
        .chain(joints.iter().map(|j| format!("{j}_tau_support")))
        .collect()
}

pub fn frames_to_trace(joints: &[String], frames: &[JointTorqueFrame]) -> Result<Trace> {
    let n = joints.len();
    let mut cols = vec![Vec::with_capacity(frames.len()); 2 * n];
    for f in frames {
        for j in 0..n {
            cols[j].push(f.tau_bio[j]);
            cols[n + j].push(f.tau_support[j]);
        }
    }
    Trace::new(
        torque_columns(joints),
        frames.iter().map(|f| f.t).collect(),
        cols,
    )
}

/// Runs the estimator over already aligned inputs.
pub fn run_aligned(
    pipeline: &mut Pipeline,
    inputs: &AlignedInputs,
) -> Result<Vec<JointTorqueFrame>> {
    let mut frames = Vec::with_capacity(inputs.emg.len());
    let n_ch = inputs.emg.channels().len();
    let n_j = inputs.angles.channels().len();
    let mut emg = vec![0.0; n_ch];
    let mut ang = vec![0.0; n_j];
    for (k, &t) in inputs.time().iter().enumerate() {
        for (c, v) in emg.iter_mut().enumerate() {
            *v = inputs.emg.column_at(c)[k];
        }
        for (j, v) in ang.iter_mut().enumerate() {
            *v = inputs.angles.column_at(j)[k];
        }
        let frame = pipeline.step(t, &emg, &ang).map_err(|e| Error::Frame {
            frame: k,
            time: t,
            source: Box::new(e),
        })?;
        frames.push(frame);
    }
    Ok(frames)
}

/// Whole-trace convenience wrapper: align, stream every sample, tabulate.
pub fn run_pipeline(
    model: &ModelDef,
    emg: &Trace,
    angles: &Trace,
    cfg: AssistanceConfig,
    opts: PipelineOptions,
) -> Result<Trace> {
    let inputs = align_inputs(model, emg, angles)?;
    let mut pipeline = Pipeline::new(model, cfg, opts)?;
    let frames = run_aligned(&mut pipeline, &inputs)?;
    frames_to_trace(&model.joint_names(), &frames)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_unit_torque_sign() {
        let arms = vec![vec![MomentArm { joint: 0, d_length: -0.05 }]];
        assert_eq!(joint_torque(&[100.0], &arms, 1), vec![5.0]);
    }

    #[test]
    fn antagonists_cancel() {
        let arms = vec![
            vec![MomentArm { joint: 0, d_length: -0.04 }],
            vec![MomentArm { joint: 0, d_length: 0.04 }],
        ];
        assert_eq!(joint_torque(&[250.0, 250.0], &arms, 1), vec![0.0]);
    }

    #[test]
    fn units_only_load_spanned_joints() {
        let arms = vec![
            vec![MomentArm { joint: 0, d_length: -0.05 }, MomentArm { joint: 1, d_length: -0.02 }],
            vec![MomentArm { joint: 0, d_length: 0.03 }],
        ];
        let tau = joint_torque(&[100.0, 50.0], &arms, 3);
        assert!((tau[0] - (5.0 - 1.5)).abs() < 1e-12);
        assert!((tau[1] - 2.0).abs() < 1e-12);
        assert_eq!(tau[2], 0.0);
    }

    #[test]
    fn shaping_examples() {
        let zero = AssistanceConfig::with_ratio(0.0).unwrap();
        assert_eq!(shape_assistance(123.0, &zero), 0.0);
        let full = AssistanceConfig::with_ratio(1.0).unwrap();
        assert_eq!(shape_assistance(30.0, &full), 30.0);
        let cfg = AssistanceConfig::with_ratio(0.7).unwrap();
        assert_eq!(shape_assistance(80.0, &cfg), 40.0);
        assert_eq!(shape_assistance(-80.0, &cfg), -40.0);
    }

    #[test]
    fn invalid_assistance_rejected() {
        assert!(AssistanceConfig::new(1.2, 40.0).is_err());
        assert!(AssistanceConfig::new(-0.1, 40.0).is_err());
        assert!(AssistanceConfig::new(0.5, 0.0).is_err());
    }
}
