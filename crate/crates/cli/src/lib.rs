//! Command-line front end: model presets, synthetic data, calibration,
//! torque estimation, actuator simulation and gait analysis.

pub mod app;
pub mod session;
pub mod synth;

pub use app::{run, EXIT_DATA, EXIT_NUMERICAL, EXIT_USAGE};

/// Routes `log` output to stderr, filtered by the `NMBC_LOG` variable
/// (default `info`).
pub fn init_logging() {
    let env = env_logger::Env::new().filter_or("NMBC_LOG", "info");
    let _ = env_logger::Builder::from_env(env)
        .target(env_logger::Target::Stderr)
        .format_timestamp(None)
        .try_init();
}
