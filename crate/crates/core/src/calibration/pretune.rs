//! Pre-tuning of optimal fiber length and tendon slack length so that a
//! generic unit reproduces the lengths of a scaled geometry.

use crate::curves::{tendon_strain_for_force, CurveSet};
use crate::error::{Error, Result};
use crate::model::{ModelDef, MtuParams};
use crate::muscle::solve_equilibrium;

use super::nelder_mead::{minimize, NelderMeadOptions};

pub const PRETUNE_POSES: usize = 11;

/// Pretune search box, as multiples of the initial lengths.
const BOX: (f64, f64) = (0.5, 2.0);

#[derive(Debug, Clone, PartialEq)]
pub struct PretuneSample {
    /// 1-based pose number.
    pub pose_index: usize,
    /// Angles of the joints the unit spans (rad).
    pub angles: Vec<f64>,
    pub lmt_scaled: f64,
    /// Normalized fiber length of the generic unit.
    pub lnorm_unscaled: f64,
    /// Normalized fiber force of the generic unit at full activation.
    pub fnorm_max: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PretuneResult {
    pub l_opt: f64,
    pub l_slack: f64,
    pub initial_objective: f64,
    /// Sum of squared length errors (m²).
    pub objective: f64,
    pub converged: bool,
}

/// Muscle-tendon length predicted by candidate lengths for one pose.
pub fn predicted_lmt(l_opt: f64, l_slack: f64, s: &PretuneSample) -> f64 {
    let strain = tendon_strain_for_force(s.fnorm_max * s.alpha.cos());
    l_slack * (1.0 + strain) + l_opt * s.lnorm_unscaled * s.alpha.cos()
}

pub fn pretune_objective(l_opt: f64, l_slack: f64, samples: &[PretuneSample]) -> f64 {
    samples
        .iter()
        .map(|s| {
            let e = s.lmt_scaled - predicted_lmt(l_opt, l_slack, s);
            e * e
        })
        .sum()
}

/// Eleven poses with every spanned joint moved together from the lower to
/// the upper end of its range.
pub fn pretune_samples(scaled: &ModelDef, generic: &ModelDef, mtu: usize) -> Result<Vec<PretuneSample>> {
    let name = &scaled.mtus[mtu].name;
    let g = generic.mtu_index(name).ok_or_else(|| {
        Error::InvalidModel(format!("generic model has no unit named {name}"))
    })?;
    let params = generic.mtus[g].params;
    let curves = CurveSet::standard();
    let joints = &scaled.dof_joints[mtu];
    (0..PRETUNE_POSES)
        .map(|i| {
            let frac = i as f64 / (PRETUNE_POSES - 1) as f64;
            let angles: Vec<f64> = joints
                .iter()
                .map(|&j| {
                    let [lo, hi] = scaled.joints[j].angle_range;
                    lo + frac * (hi - lo)
                })
                .collect();
            let lmt_scaled = scaled.surrogates[mtu].lmt(&angles)?;
            let lmt_generic = generic.surrogates[g].lmt(&angles)?;
            let tol = 1e-6 * params.f_max_iso;
            let state = solve_equilibrium(lmt_generic, 0.0, 1.0, &params, &curves, tol)?;
            Ok(PretuneSample {
                pose_index: i + 1,
                angles,
                lmt_scaled,
                lnorm_unscaled: state.fiber_length / params.l_opt,
                fnorm_max: (state.forces.f_active + state.forces.f_passive) / params.f_max_iso,
                alpha: state.pennation,
            })
        })
        .collect()
}

/// Fits `(l_opt, l_slack)` to the samples, starting from `init`.
pub fn pretune(samples: &[PretuneSample], init: &MtuParams) -> Result<PretuneResult> {
    if samples.len() != PRETUNE_POSES {
        return Err(Error::InvalidArgument(format!(
            "pretune needs {PRETUNE_POSES} poses, got {}",
            samples.len()
        )));
    }
    let x0 = [init.l_opt, init.l_slack];
    let lower = [BOX.0 * init.l_opt, BOX.0 * init.l_slack];
    let upper = [BOX.1 * init.l_opt, BOX.1 * init.l_slack];
    let f = |x: &[f64]| pretune_objective(x[0], x[1], samples);
    let initial_objective = f(&x0);
    let opts = NelderMeadOptions {
        f_tol: 1e-30,
        x_tol: 1e-13,
        ..Default::default()
    };
    let r = minimize(f, &x0, &lower, &upper, opts);
    let (l_opt, l_slack, objective) = if r.f <= initial_objective {
        (r.x[0], r.x[1], r.f)
    } else {
        (x0[0], x0[1], initial_objective)
    };
    if !r.converged {
        log::warn!("pretune stopped after {} iterations without converging", r.iterations);
    }
    Ok(PretuneResult {
        l_opt,
        l_slack,
        initial_objective,
        objective,
        converged: r.converged,
    })
}

/// Pretunes every unit of `scaled` against the generic model and returns
/// the scaled model with updated lengths.
pub fn pretune_model(scaled: &ModelDef, generic: &ModelDef) -> Result<(ModelDef, Vec<PretuneResult>)> {
    let mut params = scaled.params();
    let mut results = Vec::with_capacity(params.len());
    for (m, p) in params.iter_mut().enumerate() {
        let samples = pretune_samples(scaled, generic, m)?;
        let r = pretune(&samples, p).map_err(|e| {
            Error::InvalidModel(format!("pretune of {}: {e}", scaled.mtus[m].name))
        })?;
        p.l_opt = r.l_opt;
        p.l_slack = r.l_slack;
        results.push(r);
    }
    Ok((scaled.with_params(&params)?, results))
}
