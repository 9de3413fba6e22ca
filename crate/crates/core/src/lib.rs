//! Neuromechanical model-based joint torque estimation.
//!
//! EMG envelopes and joint angles drive personalized Hill-type
//! muscle-tendon units whose forces, projected through B-spline moment
//! arms, give biological joint torque. The crate also calibrates those
//! units against reference torques, simulates a series-elastic actuator
//! tracking the resulting assistance, and summarizes gait-cycle outcomes.

pub mod activation;
pub mod calibration;
pub mod curves;
pub mod error;
pub mod exo;
pub mod gait;
pub mod geometry;
pub mod model;
pub mod muscle;
pub mod presets;
pub mod signal;
pub mod torque;
pub mod trace;

pub use activation::{activation, envelope, normalize_mvc, EmgMode};
pub use calibration::{
    calibrate_sa, calibration_objective, load_dataset, pretune, CalibrationBounds,
    CalibrationDataset, CalibrationResult, PretuneSample,
};
pub use curves::{tendon_force_norm, CurveSet, TendonCurve};
pub use error::{Error, Result};
pub use exo::{simulate, transparency_metric, DobController, SeaPlant, SimResult};
pub use gait::{
    analyze_condition, cycle_rms, percent_change, remove_outliers, segment, ConditionSummary,
    GaitCycle,
};
pub use geometry::{fit_surrogate, GeometryGrid, GeometrySurrogate};
pub use model::{load_model, save_model, JointDef, ModelDef, MtuDef, MtuParams};
pub use muscle::{solve_equilibrium, MtuState, MtuUnit};
pub use torque::{
    joint_torque, run_pipeline, shape_assistance, AssistanceConfig, JointTorqueFrame, Pipeline,
    PipelineOptions,
};
pub use trace::{load_trace, write_trace, Frame, Trace};
