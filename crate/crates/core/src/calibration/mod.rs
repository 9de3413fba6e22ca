//! Model personalization: length pre-tuning and annealing refinement.

mod anneal;
mod dataset;
mod nelder_mead;
mod objective;
mod pretune;

pub use anneal::{calibrate_sa, AnnealOptions, CalibrationBounds, CalibrationResult, PARAMS_PER_UNIT};
pub use dataset::{load_dataset, write_manifest, CalibrationDataset, DatasetManifest, Trial, TrialEntry, MANIFEST};
pub use nelder_mead::{minimize as nelder_mead, NelderMeadOptions, NelderMeadResult};
pub use objective::{calibration_objective, Objective, UnitContribution};
pub use pretune::{
    predicted_lmt, pretune, pretune_model, pretune_objective, pretune_samples, PretuneResult,
    PretuneSample, PRETUNE_POSES,
};
