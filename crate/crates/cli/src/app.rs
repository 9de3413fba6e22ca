use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nmbc_core::calibration::{
    calibrate_sa, load_dataset, pretune_model, AnnealOptions, CalibrationBounds,
};
use nmbc_core::curves::{active_fl_knots, force_velocity_knots, passive_fl_knots, TENDON_TOE_STRAIN};
use nmbc_core::exo::{simulate, transparency_metric, DobController, SeaPlant};
use nmbc_core::{
    load_model, load_trace, presets, run_pipeline, save_model, write_trace, AssistanceConfig,
    CurveSet, EmgMode, Error, PipelineOptions, Trace,
};

use crate::session::{analyze_session, load_session, write_report};
use crate::synth::{perturb_params, synth, write_dataset, SynthSpec};

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "nmbc", version, about = "EMG-driven joint torque estimation and exoskeleton assistance tools")]
#[command(after_help = "Logging goes to stderr; set NMBC_LOG (e.g. NMBC_LOG=debug) to change verbosity.")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a built-in model (JSON plus geometry CSVs).
    InitModel(InitModelArgs),
    /// Generate synthetic walking trials from a ground-truth model.
    Synth(SynthArgs),
    /// Fit optimal fiber and tendon slack lengths to a scaled geometry.
    Pretune(PretuneArgs),
    /// Refine unit parameters against reference torques by simulated annealing.
    Calibrate(CalibrateArgs),
    /// Estimate biological and support torques from EMG and joint angles.
    Run(RunArgs),
    /// Simulate the series-elastic actuator tracking a torque reference.
    SimulateExo(SimulateExoArgs),
    /// Summarize gait cycles of several conditions against a baseline.
    Analyze(AnalyzeArgs),
    /// Write the normalized force curves as CSV.
    DumpCurves(DumpCurvesArgs),
}

#[derive(Debug, Args)]
struct InitModelArgs {
    /// Built-in model name.
    #[arg(long, value_parser = presets::PRESET_NAMES)]
    preset: String,
    /// Output model file; geometry goes to a `geometry/` directory beside it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Ground-truth model.
    #[arg(long)]
    model: PathBuf,
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
    /// Seconds per trial.
    #[arg(long, default_value_t = 10.0, value_parser = positive)]
    duration: f64,
    /// Strides per second.
    #[arg(long, default_value_t = 1.0, value_parser = positive)]
    cadence: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// EMG noise standard deviation as a fraction of MVC.
    #[arg(long, default_value_t = 0.0, value_parser = non_negative)]
    noise: f64,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    trials: u32,
    /// Share of muscular effort taken by the exoskeleton; scales EMG by (1 − ratio).
    #[arg(long, default_value_t = 0.0, value_parser = unit_interval)]
    support_ratio: f64,
    /// Free-form label stored in the manifest (e.g. walking speed).
    #[arg(long)]
    label: Option<String>,
    /// Randomly perturb the ground-truth parameters (seeded) and write them
    /// to `truth_model.json` in the output directory.
    #[arg(long)]
    perturb: bool,
}

#[derive(Debug, Args)]
struct PretuneArgs {
    /// Model whose geometry describes the subject.
    #[arg(long)]
    model: PathBuf,
    /// Generic model providing the reference operating points; defaults to `--model`.
    #[arg(long)]
    generic: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Per-unit CSV report; defaults to stdout.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CalibrateArgs {
    /// Dataset directory holding `dataset.json`.
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Objective evaluation budget.
    #[arg(long, default_value_t = 100_000, value_parser = clap::value_parser!(u64).range(1..))]
    max_evals: u64,
    /// Starting temperature; defaults to the initial objective.
    #[arg(long, value_parser = positive)]
    t0: Option<f64>,
    /// Per-unit CSV of calibrated parameters.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum EmgModeArg {
    /// Inputs are already envelopes.
    Envelope,
    /// Inputs are raw EMG; rectify and low-pass in the pipeline.
    Raw,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    emg: PathBuf,
    #[arg(long)]
    angles: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.0, value_parser = unit_interval)]
    support_ratio: f64,
    /// Symmetric support torque limit (N·m).
    #[arg(long, default_value_t = 40.0, value_parser = positive)]
    torque_cap: f64,
    #[arg(long, value_enum, default_value_t = EmgModeArg::Envelope)]
    emg_mode: EmgModeArg,
    /// Envelope low-pass cutoff in raw mode (Hz).
    #[arg(long, default_value_t = 2.0, value_parser = positive)]
    cutoff: f64,
}

#[derive(Debug, Args)]
struct SimulateExoArgs {
    /// Torque reference CSV.
    #[arg(long = "ref")]
    reference: PathBuf,
    /// Joint motion CSV (radians, or a `[deg]` header).
    #[arg(long)]
    motion: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Reference column; required if the file has several.
    #[arg(long)]
    ref_column: Option<String>,
    /// Motion column; required if the file has several.
    #[arg(long)]
    motion_column: Option<String>,
    /// Disable the disturbance observer.
    #[arg(long)]
    no_dob: bool,
    /// Reflected motor inertia (kg·m²).
    #[arg(long, default_value_t = 0.12, value_parser = positive)]
    motor_inertia: f64,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    /// Session directory (or its `session.json`).
    #[arg(long)]
    session: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct DumpCurvesArgs {
    /// Output CSV; defaults to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Evenly spaced points per curve, in addition to the knots.
    #[arg(long, default_value_t = 101, value_parser = clap::value_parser!(u32).range(2..))]
    points: u32,
}

fn parse_f64(s: &str) -> Result<f64, String> {
    s.parse::<f64>()
        .map_err(|e| e.to_string())
        .and_then(|v| if v.is_finite() { Ok(v) } else { Err("must be finite".into()) })
}

fn positive(s: &str) -> Result<f64, String> {
    parse_f64(s).and_then(|v| if v > 0.0 { Ok(v) } else { Err("must be positive".into()) })
}

fn non_negative(s: &str) -> Result<f64, String> {
    parse_f64(s).and_then(|v| if v >= 0.0 { Ok(v) } else { Err("must not be negative".into()) })
}

fn unit_interval(s: &str) -> Result<f64, String> {
    parse_f64(s).and_then(|v| {
        if (0.0..=1.0).contains(&v) {
            Ok(v)
        } else {
            Err("must lie in [0, 1]".into())
        }
    })
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> Failure + '_ {
    move |e| Failure::Core(Error::Io { path: path.to_path_buf(), source: e })
}

type CmdResult = Result<(), Failure>;

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::InitModel(a) => init_model(a),
        Command::Synth(a) => synth_cmd(a),
        Command::Pretune(a) => pretune_cmd(a),
        Command::Calibrate(a) => calibrate_cmd(a),
        Command::Run(a) => run_cmd(a),
        Command::SimulateExo(a) => simulate_exo_cmd(a),
        Command::Analyze(a) => analyze_cmd(a),
        Command::DumpCurves(a) => dump_curves_cmd(a),
    };
    match result {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            log::error!("{msg}");
            EXIT_USAGE
        }
        Err(Failure::Core(e)) => {
            log::error!("{e}");
            if e.is_numerical() {
                EXIT_NUMERICAL
            } else {
                EXIT_DATA
            }
        }
    }
}

fn init_model(a: InitModelArgs) -> CmdResult {
    let model = presets::by_name(&a.preset)
        .ok_or_else(|| Failure::Usage(format!("unknown preset {}", a.preset)))??;
    save_model(&model, &a.out)?;
    log::info!("wrote {} ({} units, {} joints)", a.out.display(), model.mtus.len(), model.joints.len());
    Ok(())
}

fn synth_cmd(a: SynthArgs) -> CmdResult {
    let model = load_model(&a.model)?;
    fs::create_dir_all(&a.out).map_err(io_err(&a.out))?;
    let truth = if a.perturb {
        let t = model.with_params(&perturb_params(&model.params(), a.seed))?;
        save_model(&t, a.out.join("truth_model.json"))?;
        t
    } else {
        model
    };
    let spec = SynthSpec {
        duration: a.duration,
        cadence: a.cadence,
        label: a.label,
        seed: a.seed,
        noise: a.noise,
        trials: a.trials as usize,
        support_ratio: a.support_ratio,
    };
    let trials = synth(&spec, &truth)?;
    write_dataset(&a.out, &trials, &truth.joint_names(), spec.label.clone())?;
    log::info!("wrote {} trial(s) of {} s to {}", trials.len(), spec.duration, a.out.display());
    Ok(())
}

fn report_writer(path: &Option<PathBuf>) -> Result<Box<dyn Write>, Failure> {
    Ok(match path {
        Some(p) => Box::new(File::create(p).map_err(io_err(p))?),
        None => Box::new(io::stdout().lock()),
    })
}

fn pretune_cmd(a: PretuneArgs) -> CmdResult {
    let scaled = load_model(&a.model)?;
    let generic = match &a.generic {
        Some(p) => load_model(p)?,
        None => scaled.clone(),
    };
    let (tuned, results) = pretune_model(&scaled, &generic)?;
    save_model(&tuned, &a.out)?;
    let target = a.report.clone().unwrap_or_else(|| PathBuf::from("<stdout>"));
    let mut w = csv::Writer::from_writer(report_writer(&a.report)?);
    let write = |w: &mut csv::Writer<Box<dyn Write>>| -> csv::Result<()> {
        w.write_record(["mtu", "l_opt", "l_slack", "initial_objective", "objective", "converged"])?;
        for (m, r) in tuned.mtus.iter().zip(&results) {
            w.write_record([
                m.name.clone(),
                format!("{:?}", r.l_opt),
                format!("{:?}", r.l_slack),
                format!("{:?}", r.initial_objective),
                format!("{:?}", r.objective),
                r.converged.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    };
    write(&mut w).map_err(|e| Failure::Core(Error::Io { path: target, source: e.into() }))?;
    for (m, r) in tuned.mtus.iter().zip(&results) {
        if !r.converged {
            log::warn!("{}: pretune did not converge (objective {:.3e} m²)", m.name, r.objective);
        }
    }
    Ok(())
}

fn calibrate_cmd(a: CalibrateArgs) -> CmdResult {
    let model = load_model(&a.model)?;
    let ds = load_dataset(&a.dataset, &model)?;
    let opts = AnnealOptions {
        initial_temperature: a.t0,
        max_evaluations: a.max_evals as usize,
        ..Default::default()
    };
    let r = calibrate_sa(&ds, &model, &CalibrationBounds::default(), a.seed, &opts)?;
    let calibrated = model.with_params(&r.params)?;
    save_model(&calibrated, &a.out)?;
    log::info!(
        "objective {:.4} -> {:.4} (N·m)² after {} evaluations over {} temperatures",
        r.initial_objective,
        r.final_objective,
        r.evaluations,
        r.temperatures
    );
    if !r.converged {
        log::warn!("evaluation budget exhausted before the annealing schedule converged");
    }
    if let Some(path) = &a.report {
        let mut w = csv::Writer::from_path(path)
            .map_err(|e| Failure::Core(Error::Io { path: path.clone(), source: e.into() }))?;
        let mut write = || -> csv::Result<()> {
            w.write_record(["mtu", "shape_factor", "force_scale", "f_max_iso", "l_opt", "l_slack"])?;
            for ((m, p), s) in calibrated.mtus.iter().zip(&r.params).zip(&r.force_scales) {
                w.write_record([
                    m.name.clone(),
                    format!("{:?}", p.shape_factor),
                    format!("{s:?}"),
                    format!("{:?}", p.f_max_iso),
                    format!("{:?}", p.l_opt),
                    format!("{:?}", p.l_slack),
                ])?;
            }
            w.flush()?;
            Ok(())
        };
        write().map_err(|e| Failure::Core(Error::Io { path: path.clone(), source: e.into() }))?;
    }
    let mut out = io::stdout().lock();
    let mut lines = vec![
        ("initial_objective".to_string(), format!("{:?}", r.initial_objective)),
        ("final_objective".to_string(), format!("{:?}", r.final_objective)),
        ("evaluations".to_string(), r.evaluations.to_string()),
        ("converged".to_string(), r.converged.to_string()),
    ];
    for (d, v) in ds.dofs.iter().zip(&r.rmse_per_dof) {
        lines.push((format!("rmse_{d}"), format!("{v:?}")));
    }
    let mut text = String::from("metric,value\n");
    for (k, v) in lines {
        text.push_str(&format!("{k},{v}\n"));
    }
    out.write_all(text.as_bytes()).map_err(io_err(Path::new("<stdout>")))?;
    Ok(())
}

fn run_cmd(a: RunArgs) -> CmdResult {
    let model = load_model(&a.model)?;
    let emg = load_trace(&a.emg, &model.emg_channels())?;
    let angles = load_trace(&a.angles, &model.joint_names())?;
    let cfg = AssistanceConfig::new(a.support_ratio, a.torque_cap)?;
    let opts = PipelineOptions {
        emg_mode: match a.emg_mode {
            EmgModeArg::Envelope => EmgMode::Envelope,
            EmgModeArg::Raw => EmgMode::Raw,
        },
        envelope_cutoff_hz: a.cutoff,
    };
    let out = run_pipeline(&model, &emg, &angles, cfg, opts)?;
    write_trace(&out, &a.out)?;
    log::info!("wrote {} frames to {}", out.len(), a.out.display());
    Ok(())
}

fn single_column(tr: Trace, column: Option<&str>, what: &str) -> Result<Trace, Failure> {
    match column {
        Some(c) => Ok(tr.select(&[c])?),
        None if tr.channels().len() == 1 => Ok(tr),
        None => Err(Failure::Usage(format!(
            "{what} has columns {:?}; choose one with --{what}-column",
            tr.channels()
        ))),
    }
}

fn simulate_exo_cmd(a: SimulateExoArgs) -> CmdResult {
    let reference = single_column(load_trace::<&str>(&a.reference, &[])?, a.ref_column.as_deref(), "ref")?;
    let motion = single_column(load_trace::<&str>(&a.motion, &[])?, a.motion_column.as_deref(), "motion")?;
    let plant = SeaPlant { motor_inertia: a.motor_inertia, ..Default::default() };
    let mut ctrl = DobController::for_plant(&plant);
    if a.no_dob {
        ctrl = ctrl.without_dob();
    }
    let res = simulate(&plant, &ctrl, &reference, &motion)?;
    write_trace(&res.to_trace()?, &a.out)?;
    let text = format!(
        "metric,value\nrms_error,{:?}\nrms_tau_exo,{:?}\n",
        res.rms_error,
        transparency_metric(&res)
    );
    io::stdout().lock().write_all(text.as_bytes()).map_err(io_err(Path::new("<stdout>")))?;
    log::info!("tracking RMS error {:.3} N·m over {} samples", res.rms_error, res.time.len());
    Ok(())
}

fn analyze_cmd(a: AnalyzeArgs) -> CmdResult {
    let (session, base) = load_session(&a.session)?;
    let rows = analyze_session(&session, &base)?;
    let file = File::create(&a.out).map_err(io_err(&a.out))?;
    write_report(&rows, file).map_err(io_err(&a.out))?;
    log::info!("wrote {} report rows to {}", rows.len(), a.out.display());
    Ok(())
}

/// Knots plus an even grid over the knot span, sorted and deduplicated.
fn curve_points(knots: &[f64], extra: usize) -> Vec<f64> {
    let (lo, hi) = (knots[0], knots[knots.len() - 1]);
    let mut xs: Vec<f64> = knots.to_vec();
    xs.extend((0..extra).map(|i| lo + (hi - lo) * i as f64 / (extra - 1) as f64));
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    xs
}

fn dump_curves_cmd(a: DumpCurvesArgs) -> CmdResult {
    let curves = CurveSet::standard();
    let n = a.points as usize;
    let mut rows: Vec<(&str, f64, f64)> = Vec::new();
    for (name, knots, curve) in [
        ("active_fl", active_fl_knots().0, &curves.active_fl),
        ("passive_fl", passive_fl_knots().0, &curves.passive_fl),
        ("fv", force_velocity_knots().0, &curves.fv),
    ] {
        rows.extend(curve_points(knots, n).into_iter().map(|x| (name, x, curve.eval(x))));
    }
    let strains = curve_points(&[0.0, TENDON_TOE_STRAIN, 0.1], n);
    rows.extend(strains.into_iter().map(|x| ("tendon", x, curves.tendon.force(x))));

    let target = a.out.clone().unwrap_or_else(|| PathBuf::from("<stdout>"));
    let mut w = csv::Writer::from_writer(report_writer(&a.out)?);
    let mut write = || -> csv::Result<()> {
        w.write_record(["curve", "x", "y"])?;
        for (c, x, y) in &rows {
            w.write_record([c.to_string(), format!("{x:?}"), format!("{y:?}")])?;
        }
        w.flush()?;
        Ok(())
    };
    write().map_err(|e| Failure::Core(Error::Io { path: target, source: e.into() }))
}
