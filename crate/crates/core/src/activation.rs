//! EMG to muscle activation.

use crate::error::{Error, Result};
use crate::signal::Biquad;
use crate::trace::Trace;

/// Default envelope low-pass cutoff.
pub const DEFAULT_ENVELOPE_CUTOFF_HZ: f64 = 2.0;

/// How EMG inputs arrive at the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EmgMode {
    /// Already rectified and low-pass filtered.
    #[default]
    Envelope,
    /// Raw EMG; enveloped in software before normalization.
    Raw,
}

/// Full-wave rectifier followed by a 2nd-order Butterworth low-pass.
#[derive(Debug, Clone)]
pub struct EnvelopeFilter {
    lp: Biquad,
}

impl EnvelopeFilter {
    pub fn new(cutoff_hz: f64, dt: f64) -> Result<Self> {
        let nyquist = 0.5 / dt;
        if !(cutoff_hz > 0.0) || cutoff_hz >= nyquist {
            return Err(Error::InvalidArgument(format!(
                "envelope cutoff {cutoff_hz} Hz must lie in (0, {nyquist}) Hz"
            )));
        }
        Ok(Self {
            lp: Biquad::lowpass(cutoff_hz, dt),
        })
    }

    pub fn process(&mut self, x: f64) -> f64 {
        // the low-pass can ring slightly below zero on sharp onsets
        self.lp.process(x.abs()).max(0.0)
    }
}

/// Rectifies and low-pass filters every channel of a uniformly sampled trace.
pub fn envelope(raw: &Trace, cutoff_hz: f64) -> Result<Trace> {
    if raw.len() < 2 {
        return Err(Error::InvalidTrace("envelope needs at least two samples".into()));
    }
    let dt = raw.duration() / (raw.len() - 1) as f64;
    let proto = EnvelopeFilter::new(cutoff_hz, dt)?;
    let columns = (0..raw.channels().len())
        .map(|c| {
            let mut f = proto.clone();
            raw.column_at(c).iter().map(|&x| f.process(x)).collect()
        })
        .collect();
    Trace::new(raw.channels().to_vec(), raw.time().to_vec(), columns)
}

/// `clamp(env / mvc, 0, 1)`.
#[inline]
pub fn normalize_sample(env: f64, mvc: f64) -> f64 {
    (env / mvc).clamp(0.0, 1.0)
}

/// Divides each listed channel by its MVC value and clamps to `[0, 1]`.
///
/// Channels of `env` without an MVC entry are dropped; a listed channel
/// missing from `env` is an error.
pub fn normalize_mvc(env: &Trace, mvc: &[(String, f64)]) -> Result<Trace> {
    let mut names = Vec::with_capacity(mvc.len());
    let mut columns = Vec::with_capacity(mvc.len());
    for (name, value) in mvc {
        if !(*value > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "MVC for {name} must be positive, got {value}"
            )));
        }
        let col = env
            .column(name)
            .ok_or_else(|| Error::InvalidTrace(format!("missing channel {name}")))?;
        names.push(name.clone());
        columns.push(col.iter().map(|&e| normalize_sample(e, *value)).collect());
    }
    Trace::new(names, env.time().to_vec(), columns)
}

/// Nonlinear excitation-to-activation mapping
/// `A = (exp(E·u) − 1) / (exp(E) − 1)` for shape factor `E < 0`.
pub fn activation(u_bar: f64, shape_factor: f64) -> Result<f64> {
    if !(shape_factor < 0.0) {
        return Err(Error::InvalidArgument(format!(
            "shape factor must be negative, got {shape_factor}"
        )));
    }
    if !(0.0..=1.0).contains(&u_bar) {
        return Err(Error::InvalidArgument(format!(
            "excitation {u_bar} outside [0, 1]"
        )));
    }
    Ok(activation_unchecked(u_bar, shape_factor))
}

#[inline]
pub(crate) fn activation_unchecked(u_bar: f64, shape_factor: f64) -> f64 {
    (shape_factor * u_bar).exp_m1() / shape_factor.exp_m1()
}
