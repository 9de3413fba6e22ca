//! Synthetic walking trials generated by a ground-truth model.
//!
//! Each stride starts at heel strike. Ankle angle dorsiflexes through stance
//! and plantarflexes at push-off; knee angle has a small loading bump and a
//! large swing peak, so stride segmentation keys on swing. Plantarflexor
//! EMG bursts ahead of push-off and tibialis anterior fires around heel
//! strike and in swing. Reference torques come from running the ground-truth
//! model on the noise-free EMG.

use std::fs;
use std::path::Path;

use nmbc_core::calibration::{write_manifest, DatasetManifest, Trial, TrialEntry};
use nmbc_core::torque::run_pipeline;
use nmbc_core::{
    write_trace, AssistanceConfig, Error, ModelDef, MtuParams, PipelineOptions, Result, Trace,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    /// Seconds per trial.
    pub duration: f64,
    /// Strides per second.
    pub cadence: f64,
    pub label: Option<String>,
    pub seed: u64,
    /// EMG noise standard deviation as a fraction of each channel's MVC.
    pub noise: f64,
    pub trials: usize,
    /// Fraction of muscular effort taken over by an exoskeleton: EMG is
    /// scaled by `1 − support_ratio`.
    pub support_ratio: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            duration: 10.0,
            cadence: 1.0,
            label: None,
            seed: 0,
            noise: 0.0,
            trials: 1,
            support_ratio: 0.0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = self.duration > 0.0
            && self.cadence > 0.0
            && self.noise >= 0.0
            && self.trials >= 1
            && (0.0..=1.0).contains(&self.support_ratio);
        if !ok {
            return Err(Error::InvalidArgument(format!("invalid synthesis settings {self:?}")));
        }
        Ok(())
    }
}

/// Periodic bump centred at stride phase `centre` (both in strides).
fn bump(phase: f64, centre: f64, width: f64) -> f64 {
    let d = (phase - centre + 0.5).rem_euclid(1.0) - 0.5;
    (-(d / width).powi(2)).exp()
}

pub fn ankle_angle(phase: f64) -> f64 {
    0.03 - 0.22 * bump(phase, 0.45, 0.12) + 0.35 * bump(phase, 0.64, 0.06)
}

pub fn knee_angle(phase: f64) -> f64 {
    0.08 + 0.15 * bump(phase, 0.15, 0.06) + 1.0 * bump(phase, 0.72, 0.09)
}

/// EMG as a fraction of MVC for a channel named after its muscle.
pub fn emg_level(channel: &str, phase: f64) -> f64 {
    let rest = 0.03;
    if channel.contains("tibialis") {
        rest + 0.3 * bump(phase, 0.02, 0.06) + 0.25 * bump(phase, 0.75, 0.1)
    } else if channel.contains("gastrocnemius") {
        rest + 0.5 * bump(phase, 0.47, 0.09)
    } else {
        rest + 0.6 * bump(phase, 0.45, 0.1)
    }
}

fn side_of(name: &str) -> Option<&str> {
    ["_l", "_r"]
        .into_iter()
        .find(|s| name.ends_with(s) || name.contains(&format!("{s}_")))
}

/// Left-side channels run half a stride behind the right.
fn side_offset(name: &str) -> f64 {
    if side_of(name) == Some("_l") {
        0.5
    } else {
        0.0
    }
}

/// Angle channels written for `model`: its joints, plus a knee for every
/// side that has an ankle but no knee so that strides can be segmented.
pub fn angle_channels(model: &ModelDef) -> Vec<String> {
    let mut names = model.joint_names();
    for j in model.joint_names() {
        if let Some(side) = j.strip_prefix("ankle") {
            let knee = format!("knee{side}");
            if !names.contains(&knee) {
                names.push(knee);
            }
        }
    }
    names
}

/// Noise-free EMG and angles for one trial.
fn trial_inputs(model: &ModelDef, spec: &SynthSpec, start_phase: f64) -> Result<(Trace, Trace)> {
    let n = (spec.duration * 1000.0).round() as usize + 1;
    let time: Vec<f64> = (0..n).map(|i| i as f64 * 1e-3).collect();
    let phase = |t: f64, name: &str| start_phase + spec.cadence * t + side_offset(name);
    let channels = model.emg_channels();
    let emg = channels
        .iter()
        .map(|c| {
            let mvc = model.mvc_of(c).expect("wired channel has MVC");
            let scale = mvc * (1.0 - spec.support_ratio);
            time.iter().map(|&t| scale * emg_level(c, phase(t, c))).collect()
        })
        .collect();
    let joints = angle_channels(model);
    let angles = joints
        .iter()
        .map(|j| {
            time.iter()
                .map(|&t| {
                    let p = phase(t, j);
                    if j.starts_with("knee") {
                        knee_angle(p)
                    } else {
                        ankle_angle(p)
                    }
                })
                .collect()
        })
        .collect();
    Ok((Trace::new(channels, time.clone(), emg)?, Trace::new(joints, time, angles)?))
}

fn reference_torque(model: &ModelDef, emg: &Trace, angles: &Trace) -> Result<Trace> {
    let out = run_pipeline(model, emg, angles, AssistanceConfig::default(), PipelineOptions::default())?;
    let dofs = model.joint_names();
    let cols = dofs
        .iter()
        .map(|d| out.column(&format!("{d}_tau_bio")).expect("pipeline column").to_vec())
        .collect();
    Trace::new(dofs, out.time().to_vec(), cols)
}

/// Generates `spec.trials` trials from `truth`.
pub fn synth(spec: &SynthSpec, truth: &ModelDef) -> Result<Vec<Trial>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    (0..spec.trials)
        .map(|k| {
            let start_phase = if k == 0 { 0.0 } else { rng.random::<f64>() };
            let (emg, angles) = trial_inputs(truth, spec, start_phase)?;
            let tau_id = reference_torque(truth, &emg, &angles)?;
            let emg = if spec.noise > 0.0 {
                let cols = emg
                    .channels()
                    .iter()
                    .enumerate()
                    .map(|(c, name)| {
                        let sd = spec.noise * truth.mvc_of(name).expect("wired channel");
                        emg.column_at(c)
                            .iter()
                            .map(|v| (v + sd * noise.sample(&mut rng)).max(0.0))
                            .collect()
                    })
                    .collect();
                Trace::new(emg.channels().to_vec(), emg.time().to_vec(), cols)?
            } else {
                emg
            };
            Ok(Trial { name: format!("trial_{k}"), emg, angles, tau_id })
        })
        .collect()
}

/// Writes each trial to `dir/<name>/{emg,angles,tau_id}.csv` plus the
/// dataset manifest.
pub fn write_dataset(dir: &Path, trials: &[Trial], dofs: &[String], label: Option<String>) -> Result<()> {
    let mut entries = Vec::with_capacity(trials.len());
    for t in trials {
        let sub = dir.join(&t.name);
        fs::create_dir_all(&sub).map_err(|e| Error::Io { path: sub.clone(), source: e })?;
        write_trace(&t.emg, sub.join("emg.csv"))?;
        write_trace(&t.angles, sub.join("angles.csv"))?;
        write_trace(&t.tau_id, sub.join("tau_id.csv"))?;
        entries.push(TrialEntry {
            name: t.name.clone(),
            emg: format!("{}/emg.csv", t.name),
            angles: format!("{}/angles.csv", t.name),
            tau_id: format!("{}/tau_id.csv", t.name),
        });
    }
    write_manifest(dir, &DatasetManifest { label, dofs: dofs.to_vec(), trials: entries })
}

/// Seeded perturbation of every unit's parameters, kept well inside the
/// calibration boxes.
pub fn perturb_params(params: &[MtuParams], seed: u64) -> Vec<MtuParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_7a11);
    params
        .iter()
        .map(|p| MtuParams {
            shape_factor: rng.random_range(-2.5..-0.5),
            f_max_iso: p.f_max_iso * rng.random_range(0.8..1.2),
            l_opt: p.l_opt * rng.random_range(0.99..1.01),
            l_slack: p.l_slack * rng.random_range(0.98..1.02),
            ..*p
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nmbc_core::gait::segment;
    use nmbc_core::presets::{ankle2, bilateral14};

    #[test]
    fn fixed_seed_is_reproducible() {
        let m = ankle2().unwrap();
        let spec = SynthSpec { duration: 2.0, noise: 0.05, trials: 2, seed: 9, ..Default::default() };
        assert_eq!(synth(&spec, &m).unwrap(), synth(&spec, &m).unwrap());
    }

    #[test]
    fn ten_seconds_at_one_hertz_gives_nine_or_ten_cycles() {
        let m = bilateral14().unwrap();
        let spec = SynthSpec { duration: 10.0, ..Default::default() };
        let t = &synth(&spec, &m).unwrap()[0];
        for knee in ["knee_r", "knee_l"] {
            let n = segment(&t.angles, knee, 0.8).unwrap().len();
            assert!((9..=10).contains(&n), "{knee}: {n}");
        }
    }

    #[test]
    fn ankle_only_model_gets_a_knee_channel() {
        let m = ankle2().unwrap();
        assert_eq!(angle_channels(&m), vec!["ankle_r".to_string(), "knee_r".to_string()]);
    }

    #[test]
    fn support_reduces_reference_torque() {
        let m = ankle2().unwrap();
        let base = SynthSpec { duration: 3.0, ..Default::default() };
        let helped = SynthSpec { support_ratio: 0.3, ..base.clone() };
        let peak = |s: &SynthSpec| {
            synth(s, &m).unwrap()[0]
                .tau_id
                .column_at(0)
                .iter()
                .fold(0.0f64, |a, v| a.max(*v))
        };
        assert!(peak(&helped) < peak(&base));
    }
}
