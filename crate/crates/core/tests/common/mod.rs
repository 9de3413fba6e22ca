#![allow(dead_code)]

use std::f64::consts::PI;

use nmbc_core::calibration::{CalibrationDataset, Trial};
use nmbc_core::{run_pipeline, AssistanceConfig, ModelDef, PipelineOptions, Trace};

/// Gait-like inputs for every channel and joint of `model`: ankles swing
/// sinusoidally, plantarflexor bursts precede push-off and the tibialis
/// fires around swing. `phase` shifts the whole trial.
pub fn gait_inputs(model: &ModelDef, seconds: f64, cadence: f64, phase: f64) -> (Trace, Trace) {
    let n = (seconds * 1000.0).round() as usize + 1;
    let time: Vec<f64> = (0..n).map(|i| i as f64 * 1e-3).collect();
    let cyc = |t: f64| 2.0 * PI * (cadence * t + phase);
    let burst = |x: f64, centre: f64, width: f64| {
        let d = (x - centre + PI).rem_euclid(2.0 * PI) - PI;
        (-(d / width).powi(2)).exp()
    };
    let channels = model.emg_channels();
    let emg = channels
        .iter()
        .map(|c| {
            let mvc = model.mvc_of(c).unwrap();
            let (centre, level) = if c.contains("tibialis") { (4.2, 0.35) } else { (1.2, 0.6) };
            time.iter()
                .map(|&t| mvc * (0.03 + level * burst(cyc(t), centre, 0.6)))
                .collect()
        })
        .collect();
    let joints = model.joint_names();
    let angles = joints
        .iter()
        .map(|j| {
            time.iter()
                .map(|&t| {
                    if j.starts_with("knee") {
                        0.15 + 0.5 * burst(cyc(t), 4.0, 0.7)
                    } else {
                        0.1 + 0.25 * cyc(t).sin()
                    }
                })
                .collect()
        })
        .collect();
    (
        Trace::new(channels, time.clone(), emg).unwrap(),
        Trace::new(joints, time, angles).unwrap(),
    )
}

/// Reference torques produced by `model` itself on the given inputs.
pub fn model_torque(model: &ModelDef, emg: &Trace, angles: &Trace, dofs: &[String]) -> Trace {
    let out = run_pipeline(
        model,
        emg,
        angles,
        AssistanceConfig::default(),
        PipelineOptions::default(),
    )
    .unwrap();
    let cols = dofs
        .iter()
        .map(|d| out.column(&format!("{d}_tau_bio")).unwrap().to_vec())
        .collect();
    Trace::new(dofs.to_vec(), out.time().to_vec(), cols).unwrap()
}

pub fn self_dataset(model: &ModelDef, trials: usize, seconds: f64) -> CalibrationDataset {
    let dofs = model.joint_names();
    let trials = (0..trials)
        .map(|k| {
            let (emg, angles) = gait_inputs(model, seconds, 1.0 + 0.1 * k as f64, 0.13 * k as f64);
            let tau_id = model_torque(model, &emg, &angles, &dofs);
            Trial { name: format!("trial_{k}"), emg, angles, tau_id }
        })
        .collect();
    CalibrationDataset { dofs, trials }
}
