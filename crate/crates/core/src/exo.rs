//! Series-elastic actuator simulation with a PD + feedforward torque loop
//! and a disturbance observer.
//!
//! The motor (inertia and torque reflected through the gear) drives the
//! joint through a linear rotary spring; the spring torque is the torque the
//! exoskeleton applies. Integration uses the implicit midpoint rule with the
//! motor torque held over each step, which keeps the discrete energy balance
//! exact: the change of kinetic plus spring energy equals the injected work
//! minus viscous losses.

use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{prewarp, Biquad};
use crate::trace::{common_grid, Trace};

/// Columns of a written simulation result.
pub const SIM_COLUMNS: [&str; 4] = ["tau_ref", "tau_exo", "tau_dist", "angle"];

/// Minimum simulated duration (s).
pub const MIN_DURATION: f64 = 1.0;

/// Spring torque beyond this multiple of the torque limit counts as divergence.
const DIVERGENCE_FACTOR: f64 = 10.0;

/// Actuator constants. Torques, inertia and speeds are referred to the
/// output side of the gear.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeaPlant {
    /// N·m/rad
    pub spring_k: f64,
    pub gear_ratio: f64,
    /// Reflected motor inertia (kg·m²).
    pub motor_inertia: f64,
    /// Reflected viscous friction (N·m·s/rad).
    pub motor_damping: f64,
    /// N·m
    pub torque_limit: f64,
    /// rad/s
    pub speed_limit: f64,
    /// s
    pub dt: f64,
}

impl Default for SeaPlant {
    fn default() -> Self {
        Self {
            spring_k: 1534.0,
            gear_ratio: 100.0,
            motor_inertia: 0.12,
            motor_damping: 1.0,
            torque_limit: 100.0,
            speed_limit: 5.0,
            dt: 1e-3,
        }
    }
}

impl SeaPlant {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.spring_k,
            self.gear_ratio,
            self.motor_inertia,
            self.torque_limit,
            self.speed_limit,
            self.dt,
        ];
        if all.iter().any(|v| !(v.is_finite() && *v > 0.0))
            || !(self.motor_damping.is_finite() && self.motor_damping >= 0.0)
        {
            return Err(Error::InvalidArgument(format!("invalid actuator constants {self:?}")));
        }
        Ok(())
    }
}

/// Inner-loop gains and disturbance observer settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DobController {
    /// Proportional gain on spring-torque error (dimensionless).
    pub kp: f64,
    /// Derivative gain on measured spring torque (s).
    pub kd: f64,
    pub q_cutoff_hz: f64,
    pub q_damping: f64,
    /// Nominal reflected inertia used by the observer.
    pub nominal_inertia: f64,
    /// Nominal spring stiffness used by the observer.
    pub nominal_stiffness: f64,
    /// Fraction of the disturbance estimate fed back, in (0, 1]. Full
    /// cancellation of the motor inertia seen through the spring makes the
    /// apparent impedance non-passive; a partial gain keeps it passive.
    pub dob_gain: f64,
    pub dob_enabled: bool,
}

impl Default for DobController {
    fn default() -> Self {
        Self::for_plant(&SeaPlant::default())
    }
}

impl DobController {
    pub fn for_plant(plant: &SeaPlant) -> Self {
        Self {
            kp: 4.0,
            kd: 0.08,
            q_cutoff_hz: 30.0,
            q_damping: std::f64::consts::FRAC_1_SQRT_2,
            nominal_inertia: plant.motor_inertia,
            nominal_stiffness: plant.spring_k,
            dob_gain: 0.7,
            dob_enabled: true,
        }
    }

    pub fn without_dob(mut self) -> Self {
        self.dob_enabled = false;
        self
    }

    /// Observer filters: `Q·P⁻¹` on spring torque and `Q` on motor torque.
    fn filters(&self, dt: f64) -> Result<(Biquad, Biquad)> {
        let nyquist = 0.5 / dt;
        if !(self.q_cutoff_hz > 0.0 && self.q_cutoff_hz < nyquist)
            || !(self.q_damping > 0.0)
            || !(self.nominal_inertia > 0.0 && self.nominal_stiffness > 0.0)
            || !(self.kp >= 0.0 && self.kd >= 0.0)
            || !(self.dob_gain > 0.0 && self.dob_gain <= 1.0)
        {
            return Err(Error::InvalidArgument(format!("invalid controller {self:?}")));
        }
        let w = prewarp(self.q_cutoff_hz, dt);
        let den = [w * w, 2.0 * self.q_damping * w, 1.0];
        let inv_plant = Biquad::from_analog(
            [w * w, 0.0, w * w * self.nominal_inertia / self.nominal_stiffness],
            den,
            dt,
        );
        let q = Biquad::from_analog([w * w, 0.0, 0.0], den, dt);
        if !(inv_plant.is_stable() && q.is_stable()) {
            return Err(Error::InvalidArgument("observer filters are unstable".into()));
        }
        Ok((inv_plant, q))
    }
}

/// Sampled outputs of one simulation.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimResult {
    pub time: Vec<f64>,
    pub tau_ref: Vec<f64>,
    /// Spring torque, `k·(φ − θ)`.
    pub tau_exo: Vec<f64>,
    /// Observer disturbance estimate.
    pub tau_dist: Vec<f64>,
    /// Joint angle (rad).
    pub angle: Vec<f64>,
    /// Applied motor torque over the step starting at each sample.
    pub tau_motor: Vec<f64>,
    /// Kinetic plus spring energy of the actuator at each sample (J).
    pub energy: Vec<f64>,
    /// Work injected by motor and joint during the step ending at each
    /// sample (J); zero at the first sample.
    pub injected_work: Vec<f64>,
    /// RMS of `tau_exo − tau_ref` (N·m).
    pub rms_error: f64,
}

impl SimResult {
    pub fn to_trace(&self) -> Result<Trace> {
        Trace::new(
            SIM_COLUMNS.iter().map(|s| s.to_string()).collect(),
            self.time.clone(),
            vec![
                self.tau_ref.clone(),
                self.tau_exo.clone(),
                self.tau_dist.clone(),
                self.angle.clone(),
            ],
        )
    }
}

fn rms(v: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x * x, n + 1));
    if n == 0 {
        0.0
    } else {
        (sum / n as f64).sqrt()
    }
}

/// RMS spring torque of a zero-reference run: the residual interaction
/// torque the wearer feels.
pub fn transparency_metric(res: &SimResult) -> f64 {
    rms(res.tau_exo.iter().copied())
}

/// Per-sample controller state shared by both plant models.
struct Loop {
    plant: SeaPlant,
    ctrl: DobController,
    observer: Option<(Biquad, Biquad)>,
    prev_tau_exo: Option<f64>,
    prev_motor: f64,
}

impl Loop {
    fn new(plant: &SeaPlant, ctrl: &DobController) -> Result<Self> {
        plant.validate()?;
        let filters = ctrl.filters(plant.dt)?;
        Ok(Self {
            plant: *plant,
            ctrl: *ctrl,
            observer: ctrl.dob_enabled.then_some(filters),
            prev_tau_exo: None,
            prev_motor: 0.0,
        })
    }

    /// Motor torque for the coming step and the disturbance estimate.
    fn command(&mut self, tau_ref: f64, tau_exo: f64, omega: f64) -> (f64, f64) {
        let d_hat = match &mut self.observer {
            Some((inv_plant, q)) => {
                self.ctrl.dob_gain * (inv_plant.process(tau_exo) - q.process(self.prev_motor))
            }
            None => 0.0,
        };
        let rate = self
            .prev_tau_exo
            .map_or(0.0, |prev| (tau_exo - prev) / self.plant.dt);
        self.prev_tau_exo = Some(tau_exo);
        let u = tau_ref + self.ctrl.kp * (tau_ref - tau_exo) - self.ctrl.kd * rate;
        let limit = self.plant.torque_limit;
        let mut motor = (u - d_hat).clamp(-limit, limit);
        // At the speed limit the drive only allows torque that does not
        // accelerate the motor further.
        let hold = tau_exo + self.plant.motor_damping * omega;
        if omega >= self.plant.speed_limit {
            motor = motor.min(hold);
        } else if omega <= -self.plant.speed_limit {
            motor = motor.max(hold);
        }
        self.prev_motor = motor;
        (motor, d_hat)
    }

    fn check(&self, t: f64, tau_exo: f64) -> Result<()> {
        if !tau_exo.is_finite() || tau_exo.abs() > DIVERGENCE_FACTOR * self.plant.torque_limit {
            return Err(Error::Diverged { time: t, torque: tau_exo });
        }
        Ok(())
    }
}

fn column0(tr: &Trace, what: &str) -> Result<()> {
    if tr.channels().len() != 1 {
        return Err(Error::InvalidTrace(format!(
            "{what} trace must have exactly one data column, found {}",
            tr.channels().len()
        )));
    }
    Ok(())
}

/// Simulates the actuator tracking `tau_ref` while the joint follows the
/// prescribed `joint_motion`. Both traces hold one data column; they are
/// resampled onto a common grid at the plant period.
pub fn simulate(
    plant: &SeaPlant,
    ctrl: &DobController,
    tau_ref: &Trace,
    joint_motion: &Trace,
) -> Result<SimResult> {
    column0(tau_ref, "reference")?;
    column0(joint_motion, "motion")?;
    let grid = common_grid(&[tau_ref, joint_motion], plant.dt)?;
    let r = tau_ref.resample(&grid)?;
    let m = joint_motion.resample(&grid)?;
    simulate_samples(plant, ctrl, &grid, r.column_at(0), m.column_at(0))
}

/// As [`simulate`] with inputs already sampled on a uniform grid of period
/// `plant.dt`.
pub fn simulate_samples(
    plant: &SeaPlant,
    ctrl: &DobController,
    time: &[f64],
    tau_ref: &[f64],
    angle: &[f64],
) -> Result<SimResult> {
    let n = time.len();
    if tau_ref.len() != n || angle.len() != n || n < 2 {
        return Err(Error::InvalidTrace("simulation inputs must have equal length ≥ 2".into()));
    }
    if time[n - 1] - time[0] < MIN_DURATION - 0.5 * plant.dt {
        return Err(Error::InvalidTrace(format!(
            "simulation needs at least {MIN_DURATION} s of input, got {:.3} s",
            time[n - 1] - time[0]
        )));
    }
    let mut lp = Loop::new(plant, ctrl)?;
    let (j, b, k, h) = (plant.motor_inertia, plant.motor_damping, plant.spring_k, plant.dt);
    let c = h * (b / 2.0 + h * k / 4.0);

    let mut phi = angle[0];
    let mut omega = (angle[1] - angle[0]) / h;
    let mut out = SimResult::default();
    let energy = |phi: f64, omega: f64, theta: f64| {
        0.5 * j * omega * omega + 0.5 * k * (phi - theta) * (phi - theta)
    };
    let mut work = 0.0;
    for i in 0..n {
        let tau_exo = k * (phi - angle[i]);
        lp.check(time[i], tau_exo)?;
        let (motor, d_hat) = lp.command(tau_ref[i], tau_exo, omega);
        out.time.push(time[i]);
        out.tau_ref.push(tau_ref[i]);
        out.tau_exo.push(tau_exo);
        out.tau_dist.push(d_hat);
        out.angle.push(angle[i]);
        out.tau_motor.push(motor);
        out.energy.push(energy(phi, omega, angle[i]));
        out.injected_work.push(work);
        if i + 1 == n {
            break;
        }
        let theta_mid = 0.5 * (angle[i] + angle[i + 1]);
        let omega1 = ((j - c) * omega + h * (motor - k * (phi - theta_mid))) / (j + c);
        let omega_mid = 0.5 * (omega + omega1);
        let phi1 = phi + h * omega_mid;
        let spring_mid = k * (0.5 * (phi + phi1) - theta_mid);
        work = h * omega_mid * motor - spring_mid * (angle[i + 1] - angle[i]);
        phi = phi1;
        omega = omega1;
    }
    out.rms_error = rms(out.tau_exo.iter().zip(&out.tau_ref).map(|(a, r)| a - r));
    Ok(out)
}

/// Passive joint-side load: `inertia·θ̈ = τ_exo − stiffness·θ − damping·θ̇`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub inertia: f64,
    pub stiffness: f64,
    pub damping: f64,
}

/// Simulates the actuator coupled to a passive environment, starting at
/// rest with the joint displaced by `theta0`.
pub fn simulate_environment(
    plant: &SeaPlant,
    ctrl: &DobController,
    env: &Environment,
    tau_ref: &[f64],
    theta0: f64,
) -> Result<SimResult> {
    if !(env.inertia > 0.0 && env.stiffness >= 0.0 && env.damping >= 0.0) {
        return Err(Error::InvalidArgument(format!("invalid environment {env:?}")));
    }
    let mut lp = Loop::new(plant, ctrl)?;
    let (j, b, k, h) = (plant.motor_inertia, plant.motor_damping, plant.spring_k, plant.dt);
    let (je, ke, be) = (env.inertia, env.stiffness, env.damping);
    // x = [φ, ω, θ, θ̇]
    #[rustfmt::skip]
    let a = Matrix4::new(
        0.0, 1.0, 0.0, 0.0,
        -k / j, -b / j, k / j, 0.0,
        0.0, 0.0, 0.0, 1.0,
        k / je, 0.0, -(k + ke) / je, -be / je,
    );
    let input = Vector4::new(0.0, 1.0 / j, 0.0, 0.0);
    let id = Matrix4::identity();
    let lhs = (id - a * (h / 2.0))
        .try_inverse()
        .ok_or_else(|| Error::InvalidArgument("singular environment system".into()))?;
    let step = lhs * (id + a * (h / 2.0));
    let drive = lhs * input * h;

    let mut x = Vector4::new(theta0, 0.0, theta0, 0.0);
    let mut out = SimResult::default();
    for (i, &r) in tau_ref.iter().enumerate() {
        let t = i as f64 * h;
        let tau_exo = k * (x[0] - x[2]);
        lp.check(t, tau_exo)?;
        let (motor, d_hat) = lp.command(r, tau_exo, x[1]);
        out.time.push(t);
        out.tau_ref.push(r);
        out.tau_exo.push(tau_exo);
        out.tau_dist.push(d_hat);
        out.angle.push(x[2]);
        out.tau_motor.push(motor);
        out.energy.push(
            0.5 * j * x[1] * x[1]
                + 0.5 * k * (x[0] - x[2]).powi(2)
                + 0.5 * je * x[3] * x[3]
                + 0.5 * ke * x[2] * x[2],
        );
        out.injected_work.push(0.0);
        x = step * x + drive * motor;
    }
    out.rms_error = rms(out.tau_exo.iter().zip(&out.tau_ref).map(|(a, r)| a - r));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn grid(seconds: f64) -> Vec<f64> {
        (0..=(seconds * 1000.0).round() as usize)
            .map(|i| i as f64 * 1e-3)
            .collect()
    }

    #[test]
    fn rest_stays_at_rest() {
        let t = grid(1.5);
        let zeros = vec![0.0; t.len()];
        let r = simulate_samples(&SeaPlant::default(), &DobController::default(), &t, &zeros, &zeros)
            .unwrap();
        assert!(r.tau_exo.iter().all(|v| v.abs() <= 1e-9));
        assert_eq!(transparency_metric(&r), 0.0);
    }

    #[test]
    fn step_settles_quickly() {
        let t = grid(1.0);
        let reference: Vec<f64> = t.iter().map(|&t| if t >= 0.1 { 10.0 } else { 0.0 }).collect();
        let locked = vec![0.0; t.len()];
        let r = simulate_samples(&SeaPlant::default(), &DobController::default(), &t, &reference, &locked)
            .unwrap();
        let last_out = r
            .tau_exo
            .iter()
            .enumerate()
            .filter(|(_, v)| (*v - 10.0).abs() > 0.2)
            .map(|(i, _)| t[i])
            .fold(0.0, f64::max);
        assert!(last_out - 0.1 <= 0.15, "settled at {last_out}");
    }

    #[test]
    fn observer_filters_are_stable() {
        let (a, b) = DobController::default().filters(1e-3).unwrap();
        assert!(a.is_stable() && b.is_stable());
        assert!((b.dc_gain() - 1.0).abs() < 1e-12);
        assert!((a.dc_gain() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn observer_improves_transparency() {
        let t = grid(3.0);
        let zeros = vec![0.0; t.len()];
        let motion: Vec<f64> = t.iter().map(|&t| 0.3 * (2.0 * PI * t).sin()).collect();
        let plant = SeaPlant::default();
        let on = simulate_samples(&plant, &DobController::default(), &t, &zeros, &motion).unwrap();
        let off =
            simulate_samples(&plant, &DobController::default().without_dob(), &t, &zeros, &motion)
                .unwrap();
        assert!(transparency_metric(&on) < transparency_metric(&off));
    }

    #[test]
    fn energy_never_exceeds_injected_work() {
        let t = grid(2.0);
        let reference: Vec<f64> = t.iter().map(|&t| 20.0 * (2.0 * PI * t).sin()).collect();
        let motion: Vec<f64> = t.iter().map(|&t| 0.2 * (2.0 * PI * 1.3 * t).sin()).collect();
        let r = simulate_samples(&SeaPlant::default(), &DobController::default(), &t, &reference, &motion)
            .unwrap();
        for i in 1..t.len() {
            let gain = r.energy[i] - r.energy[i - 1];
            assert!(gain <= r.injected_work[i] + 1e-6, "step {i}: {gain} > {}", r.injected_work[i]);
        }
    }

    #[test]
    fn undamped_light_joint_oscillation_decays() {
        // Full inertia cancellation sustains this oscillation at the
        // torque limit; the partial observer gain must let it die out.
        let n = 6000;
        let pulse: Vec<f64> = (0..n).map(|i| if i < 100 { 10.0 } else { 0.0 }).collect();
        for stiffness in [50.0, 200.0, 1000.0] {
            let env = Environment { inertia: 0.05, stiffness, damping: 0.0 };
            let r = simulate_environment(&SeaPlant::default(), &DobController::default(), &env, &pulse, 0.1)
                .unwrap();
            let peak = r.tau_exo.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let tail = r.tau_exo[n - 1000..].iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(tail < 0.01 * peak, "k={stiffness}: tail {tail} vs peak {peak}");
        }
    }

    #[test]
    fn rejects_bad_configuration() {
        let t = grid(0.5);
        let z = vec![0.0; t.len()];
        assert!(simulate_samples(&SeaPlant::default(), &DobController::default(), &t, &z, &z).is_err());
        let ctrl = DobController { q_cutoff_hz: 0.0, ..Default::default() };
        let t = grid(1.0);
        let z = vec![0.0; t.len()];
        assert!(simulate_samples(&SeaPlant::default(), &ctrl, &t, &z, &z).is_err());
    }

    #[test]
    fn divergence_is_reported_with_time() {
        let t = grid(1.0);
        let z = vec![0.0; t.len()];
        let reference: Vec<f64> = t.iter().map(|&t| if t > 0.2 { 50.0 } else { 0.0 }).collect();
        let ctrl = DobController { kp: -3.5, ..Default::default() };
        let err = simulate_samples(&SeaPlant::default(), &ctrl, &t, &reference, &z);
        // A negative gain is rejected up front.
        assert!(matches!(err, Err(Error::InvalidArgument(_))));
        // Torque and speed limits bound the loop itself, so force it with a
        // joint jerked far faster than the motor can follow.
        let jerk: Vec<f64> = t.iter().map(|&t| if t > 0.5 { 2.0 } else { 0.0 }).collect();
        match simulate_samples(&SeaPlant::default(), &DobController::default(), &t, &z, &jerk) {
            Err(Error::Diverged { time, torque }) => {
                assert!((time - 0.501).abs() < 1e-9 && torque.abs() > 1000.0);
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
