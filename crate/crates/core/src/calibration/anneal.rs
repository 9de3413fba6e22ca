//! Box-constrained simulated annealing with Corana-style step adaptation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelDef, MtuParams};

use super::dataset::CalibrationDataset;
use super::objective::{Objective, UnitContribution};

/// Calibrated quantities per unit, in this order.
pub const PARAMS_PER_UNIT: usize = 4;

/// Search boxes. Length boxes are relative to the pretuned values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBounds {
    pub shape_factor: (f64, f64),
    pub force_scale: (f64, f64),
    pub l_opt_rel: f64,
    pub l_slack_rel: f64,
}

impl Default for CalibrationBounds {
    fn default() -> Self {
        Self {
            shape_factor: (-3.0, -1e-3),
            force_scale: (0.5, 1.5),
            l_opt_rel: 0.025,
            l_slack_rel: 0.05,
        }
    }
}

impl CalibrationBounds {
    fn boxes(&self, base: &MtuParams) -> [(f64, f64); PARAMS_PER_UNIT] {
        [
            self.shape_factor,
            self.force_scale,
            (base.l_opt * (1.0 - self.l_opt_rel), base.l_opt * (1.0 + self.l_opt_rel)),
            (
                base.l_slack * (1.0 - self.l_slack_rel),
                base.l_slack * (1.0 + self.l_slack_rel),
            ),
        ]
    }

    /// True if `p` lies in the boxes centred on `base`.
    pub fn contains(&self, base: &MtuParams, p: &MtuParams) -> bool {
        let b = self.boxes(base);
        let scale = p.f_max_iso / base.f_max_iso;
        let inside = |v: f64, (lo, hi): (f64, f64)| v >= lo && v <= hi;
        inside(p.shape_factor, b[0])
            && inside(scale, (b[1].0 - 1e-12, b[1].1 + 1e-12))
            && inside(p.l_opt, b[2])
            && inside(p.l_slack, b[3])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnnealOptions {
    /// Starting temperature; `None` uses the initial objective.
    pub initial_temperature: Option<f64>,
    pub cooling: f64,
    /// Sweeps over all coordinates per temperature.
    pub cycles: usize,
    pub step_factor: f64,
    /// Minimum improvement of the best value over `patience` temperatures.
    pub tolerance: f64,
    pub patience: usize,
    pub max_evaluations: usize,
}

impl Default for AnnealOptions {
    fn default() -> Self {
        Self {
            initial_temperature: None,
            cooling: 0.85,
            cycles: 20,
            step_factor: 2.0,
            tolerance: 1e-6,
            patience: 4,
            max_evaluations: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub params: Vec<MtuParams>,
    pub force_scales: Vec<f64>,
    pub initial_objective: f64,
    pub final_objective: f64,
    /// Best objective at the end of each temperature.
    pub history: Vec<f64>,
    pub rmse_per_dof: Vec<f64>,
    pub evaluations: usize,
    pub temperatures: usize,
    /// False if the evaluation budget ran out first.
    pub converged: bool,
}

fn to_params(base: &MtuParams, x: &[f64]) -> MtuParams {
    MtuParams {
        shape_factor: x[0],
        f_max_iso: base.f_max_iso * x[1],
        l_opt: x[2],
        l_slack: x[3],
        ..*base
    }
}

/// Calibrates every unit of `model` against `ds`. The model's current
/// parameters are the starting point and centre the length boxes.
pub fn calibrate_sa(
    ds: &CalibrationDataset,
    model: &ModelDef,
    bounds: &CalibrationBounds,
    seed: u64,
    opts: &AnnealOptions,
) -> Result<CalibrationResult> {
    if !(opts.cooling > 0.0 && opts.cooling < 1.0) || opts.cycles == 0 || opts.patience == 0 {
        return Err(Error::InvalidArgument("invalid annealing schedule".into()));
    }
    let objective = Objective::new(ds, model)?;
    let base = model.params();
    let n_units = base.len();
    let n = n_units * PARAMS_PER_UNIT;
    let mut lower = Vec::with_capacity(n);
    let mut upper = Vec::with_capacity(n);
    let mut x = Vec::with_capacity(n);
    for p in &base {
        let start = [p.shape_factor, 1.0, p.l_opt, p.l_slack];
        for (b, s) in bounds.boxes(p).iter().zip(start) {
            lower.push(b.0);
            upper.push(b.1);
            x.push(s.clamp(b.0, b.1));
        }
    }
    let unit_params = |x: &[f64], m: usize| {
        to_params(&base[m], &x[m * PARAMS_PER_UNIT..(m + 1) * PARAMS_PER_UNIT])
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut contrib: Vec<UnitContribution> = (0..n_units)
        .map(|m| objective.unit_contribution(m, &unit_params(&x, m)))
        .collect::<Result<_>>()?;
    let mut f = objective.combine(&contrib);
    let initial_objective = f;
    let mut evaluations = 1;
    let mut best_x = x.clone();
    let mut best_f = f;
    let mut best_contrib = contrib.clone();
    let mut step: Vec<f64> = lower.iter().zip(&upper).map(|(l, u)| 0.5 * (u - l)).collect();
    let mut temperature = opts.initial_temperature.unwrap_or(f.max(f64::MIN_POSITIVE));
    let mut history = Vec::new();
    let mut converged = false;

    'outer: loop {
        let mut accepted = vec![0usize; n];
        for _ in 0..opts.cycles {
            for h in 0..n {
                if evaluations >= opts.max_evaluations {
                    break 'outer;
                }
                let mut xp = x.clone();
                xp[h] = x[h] + rng.random_range(-1.0..=1.0) * step[h];
                if xp[h] < lower[h] || xp[h] > upper[h] {
                    xp[h] = lower[h] + rng.random::<f64>() * (upper[h] - lower[h]);
                }
                let m = h / PARAMS_PER_UNIT;
                let candidate = objective.unit_contribution(m, &unit_params(&xp, m));
                evaluations += 1;
                // A failed solve makes the candidate infeasible.
                let Ok(candidate) = candidate else { continue };
                let old = std::mem::replace(&mut contrib[m], candidate);
                let fp = objective.combine(&contrib);
                let accept = fp <= f || {
                    let p = ((f - fp) / temperature).exp();
                    rng.random::<f64>() < p
                };
                if accept {
                    x = xp;
                    f = fp;
                    accepted[h] += 1;
                    if f < best_f {
                        best_f = f;
                        best_x.clone_from(&x);
                        best_contrib.clone_from(&contrib);
                    }
                } else {
                    contrib[m] = old;
                }
            }
        }
        for h in 0..n {
            let ratio = accepted[h] as f64 / opts.cycles as f64;
            if ratio > 0.6 {
                step[h] *= 1.0 + opts.step_factor * (ratio - 0.6) / 0.4;
            } else if ratio < 0.4 {
                step[h] /= 1.0 + opts.step_factor * (0.4 - ratio) / 0.4;
            }
            step[h] = step[h].min(upper[h] - lower[h]);
        }
        history.push(best_f);
        let k = history.len();
        if k > opts.patience && history[k - 1 - opts.patience] - best_f < opts.tolerance {
            converged = true;
            break;
        }
        temperature *= opts.cooling;
        x.clone_from(&best_x);
        f = best_f;
        contrib.clone_from(&best_contrib);
    }
    if !converged {
        log::warn!("annealing stopped after {evaluations} evaluations without converging");
        history.push(best_f);
    }

    let params: Vec<MtuParams> = (0..n_units).map(|m| unit_params(&best_x, m)).collect();
    Ok(CalibrationResult {
        force_scales: (0..n_units).map(|m| best_x[m * PARAMS_PER_UNIT + 1]).collect(),
        rmse_per_dof: objective.rmse_per_dof(&best_contrib),
        initial_objective,
        final_objective: best_f,
        temperatures: history.len(),
        history,
        evaluations,
        converged,
        params,
    })
}
