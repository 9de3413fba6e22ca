//! Mean squared torque error of the forward model over a dataset.
//!
//! Inputs that do not depend on the calibrated parameters (excitations,
//! lengths, moment arms, time steps) are computed once. Each unit's torque
//! contribution can then be recomputed on its own, which is what lets the
//! annealer re-simulate only the unit whose parameter it perturbed.

use std::sync::Arc;

use crate::activation::activation_unchecked;
use crate::curves::CurveSet;
use crate::error::{Error, Result};
use crate::geometry::GeometryEval;
use crate::model::{ModelDef, MtuParams};
use crate::muscle::MtuUnit;
use crate::torque::{align_inputs, unit_geometry, Wiring, SAMPLE_PERIOD};

use super::dataset::CalibrationDataset;

struct PreparedTrial {
    name: String,
    dt: Vec<f64>,
    /// `[mtu][row]`
    excitation: Vec<Vec<f64>>,
    /// `[mtu][row]`
    geometry: Vec<Vec<GeometryEval>>,
    /// `[dof][row]`
    tau_id: Vec<Vec<f64>>,
}

/// Per-trial torque contributions of one unit: `[trial][slot][row]`, where
/// slot indexes the DOFs of the dataset that the unit spans.
pub type UnitContribution = Vec<Vec<Vec<f64>>>;

/// Dataset-bound objective.
pub struct Objective {
    curves: Arc<CurveSet>,
    trials: Vec<PreparedTrial>,
    /// Per unit: `(dataset DOF index, surrogate gradient slot)`.
    spans: Vec<Vec<(usize, usize)>>,
    n_dofs: usize,
    total_rows: usize,
}

impl Objective {
    pub fn new(ds: &CalibrationDataset, model: &ModelDef) -> Result<Self> {
        ds.validate(model)?;
        let wiring = Wiring::new(model);
        let dof_joint: Vec<usize> = ds
            .dofs
            .iter()
            .map(|d| model.joint_index(d).expect("validated"))
            .collect();
        let spans = model
            .dof_joints
            .iter()
            .map(|joints| {
                dof_joint
                    .iter()
                    .enumerate()
                    .filter_map(|(k, j)| joints.iter().position(|x| x == j).map(|slot| (k, slot)))
                    .collect()
            })
            .collect();
        let mut trials = Vec::with_capacity(ds.trials.len());
        for trial in &ds.trials {
            let wrap = |e: Error| Error::Trial {
                trial: trial.name.clone(),
                source: Box::new(e),
            };
            let inputs = align_inputs(model, &trial.emg, &trial.angles).map_err(wrap)?;
            let time = inputs.time();
            let tau = trial.tau_id.resample(time).map_err(wrap)?;
            let n = time.len();
            let mut dt = Vec::with_capacity(n);
            dt.push(SAMPLE_PERIOD);
            dt.extend(time.windows(2).map(|w| w[1] - w[0]));
            let mut excitation = vec![Vec::with_capacity(n); model.mtus.len()];
            let mut geometry = vec![Vec::with_capacity(n); model.mtus.len()];
            let mut emg = vec![0.0; inputs.emg.channels().len()];
            let mut ang = vec![0.0; inputs.angles.channels().len()];
            for k in 0..n {
                for (c, v) in emg.iter_mut().enumerate() {
                    *v = inputs.emg.column_at(c)[k];
                }
                for (j, v) in ang.iter_mut().enumerate() {
                    *v = inputs.angles.column_at(j)[k];
                }
                for m in 0..model.mtus.len() {
                    excitation[m].push(wiring.excitation(m, &emg));
                    geometry[m].push(unit_geometry(
                        &model.surrogates[m],
                        &model.dof_joints[m],
                        &ang,
                    ));
                }
            }
            let tau_id = ds
                .dofs
                .iter()
                .map(|d| tau.column(d).expect("validated").to_vec())
                .collect();
            trials.push(PreparedTrial {
                name: trial.name.clone(),
                dt,
                excitation,
                geometry,
                tau_id,
            });
        }
        Ok(Self {
            curves: Arc::new(CurveSet::standard()),
            total_rows: trials.iter().map(|t| t.dt.len()).sum(),
            trials,
            spans,
            n_dofs: ds.dofs.len(),
        })
    }

    pub fn n_units(&self) -> usize {
        self.spans.len()
    }

    pub fn n_dofs(&self) -> usize {
        self.n_dofs
    }

    /// Simulates unit `m` with `params` over every trial.
    pub fn unit_contribution(&self, m: usize, params: &MtuParams) -> Result<UnitContribution> {
        let spans = &self.spans[m];
        self.trials
            .iter()
            .map(|trial| {
                let mut unit = MtuUnit::new(*params, self.curves.clone());
                let n = trial.dt.len();
                let mut out = vec![Vec::with_capacity(n); spans.len()];
                for k in 0..n {
                    let geo = &trial.geometry[m][k];
                    let a = activation_unchecked(trial.excitation[m][k], params.shape_factor);
                    let state = unit.step(geo.lmt, a, trial.dt[k]).map_err(|e| Error::Trial {
                        trial: trial.name.clone(),
                        source: Box::new(Error::Frame {
                            frame: k,
                            time: trial.dt[..=k].iter().sum(),
                            source: Box::new(e),
                        }),
                    })?;
                    let f = state.forces.f_mtu;
                    for (s, &(_, slot)) in spans.iter().enumerate() {
                        out[s].push(f * -geo.gradient[slot]);
                    }
                }
                Ok(out)
            })
            .collect()
    }

    /// Predicted torque `[trial][dof][row]` from per-unit contributions,
    /// summed in unit order.
    pub fn predicted(&self, contributions: &[UnitContribution]) -> Vec<Vec<Vec<f64>>> {
        self.trials
            .iter()
            .enumerate()
            .map(|(t, trial)| {
                let n = trial.dt.len();
                let mut pred = vec![vec![0.0; n]; self.n_dofs];
                for (m, spans) in self.spans.iter().enumerate() {
                    for (s, &(dof, _)) in spans.iter().enumerate() {
                        for (p, c) in pred[dof].iter_mut().zip(&contributions[m][t][s]) {
                            *p += c;
                        }
                    }
                }
                pred
            })
            .collect()
    }

    /// Mean squared error over all rows, DOFs and trials.
    pub fn combine(&self, contributions: &[UnitContribution]) -> f64 {
        let pred = self.predicted(contributions);
        let mut sum = 0.0;
        for (trial, p) in self.trials.iter().zip(&pred) {
            for (dof_pred, dof_ref) in p.iter().zip(&trial.tau_id) {
                for (a, b) in dof_pred.iter().zip(dof_ref) {
                    let e = a - b;
                    sum += e * e;
                }
            }
        }
        sum / (self.total_rows * self.n_dofs) as f64
    }

    /// Root-mean-square error per DOF across all trials.
    pub fn rmse_per_dof(&self, contributions: &[UnitContribution]) -> Vec<f64> {
        let pred = self.predicted(contributions);
        (0..self.n_dofs)
            .map(|d| {
                let mut sum = 0.0;
                for (trial, p) in self.trials.iter().zip(&pred) {
                    for (a, b) in p[d].iter().zip(&trial.tau_id[d]) {
                        sum += (a - b) * (a - b);
                    }
                }
                (sum / self.total_rows as f64).sqrt()
            })
            .collect()
    }

    /// Largest absolute reference torque in the dataset.
    pub fn peak_reference(&self) -> f64 {
        self.trials
            .iter()
            .flat_map(|t| t.tau_id.iter().flatten())
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn contributions(&self, params: &[MtuParams]) -> Result<Vec<UnitContribution>> {
        params
            .iter()
            .enumerate()
            .map(|(m, p)| self.unit_contribution(m, p))
            .collect()
    }

    pub fn evaluate(&self, params: &[MtuParams]) -> Result<f64> {
        if params.len() != self.n_units() {
            return Err(Error::InvalidArgument(format!(
                "{} parameter sets for {} units",
                params.len(),
                self.n_units()
            )));
        }
        Ok(self.combine(&self.contributions(params)?))
    }
}

/// Mean squared torque error (N·m)² of `model` with `params` on `ds`.
pub fn calibration_objective(
    params: &[MtuParams],
    ds: &CalibrationDataset,
    model: &ModelDef,
) -> Result<f64> {
    Objective::new(ds, model)?.evaluate(params)
}
