//! Time-stamped multichannel sample streams and their CSV form.
//!
//! A trace file is UTF-8 CSV with a header row whose first column is `time`
//! (seconds). Remaining headers name channels; a header may carry a unit
//! suffix, `ankle_r[deg]`, in which case the column is converted to radians
//! on load. Written files always use bare names and SI units, with floats in
//! shortest round-trip form so `load_trace` reproduces every bit.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// One sample instant across all channels of a [`Trace`].
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub t: f64,
    pub values: Vec<f64>,
}

/// Column-major multichannel time series with strictly increasing time.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    channels: Vec<String>,
    time: Vec<f64>,
    columns: Vec<Vec<f64>>,
}

impl Trace {
    pub fn new(channels: Vec<String>, time: Vec<f64>, columns: Vec<Vec<f64>>) -> Result<Self> {
        if channels.len() != columns.len() {
            return Err(Error::InvalidTrace(format!(
                "{} channel names for {} columns",
                channels.len(),
                columns.len()
            )));
        }
        for (name, col) in channels.iter().zip(&columns) {
            if col.len() != time.len() {
                return Err(Error::InvalidTrace(format!(
                    "channel {name} has {} samples, time has {}",
                    col.len(),
                    time.len()
                )));
            }
        }
        for (i, name) in channels.iter().enumerate() {
            if channels[..i].contains(name) {
                return Err(Error::InvalidTrace(format!("duplicate channel {name}")));
            }
        }
        check_monotone(&time)?;
        Ok(Self {
            channels,
            time,
            columns,
        })
    }

    pub fn channels(&self) -> &[String] {
        &self.channels
    }

    pub fn time(&self) -> &[f64] {
        &self.time
    }

    pub fn len(&self) -> usize {
        self.time.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time.is_empty()
    }

    pub fn channel_index(&self, name: &str) -> Option<usize> {
        self.channels.iter().position(|c| c == name)
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.channel_index(name).map(|i| self.columns[i].as_slice())
    }

    pub fn column_at(&self, index: usize) -> &[f64] {
        &self.columns[index]
    }

    pub fn frame(&self, i: usize) -> Frame {
        Frame {
            t: self.time[i],
            values: self.columns.iter().map(|c| c[i]).collect(),
        }
    }

    pub fn frames(&self) -> impl Iterator<Item = Frame> + '_ {
        (0..self.len()).map(|i| self.frame(i))
    }

    pub fn duration(&self) -> f64 {
        match (self.time.first(), self.time.last()) {
            (Some(a), Some(b)) => b - a,
            _ => 0.0,
        }
    }

    /// Fails naming the first channel in `expected` that is absent.
    pub fn require_channels<S: AsRef<str>>(&self, expected: &[S]) -> Result<()> {
        for name in expected {
            if self.channel_index(name.as_ref()).is_none() {
                return Err(Error::InvalidTrace(format!(
                    "missing channel {}",
                    name.as_ref()
                )));
            }
        }
        Ok(())
    }

    /// A trace holding only the named channels, in the given order.
    pub fn select<S: AsRef<str>>(&self, names: &[S]) -> Result<Trace> {
        self.require_channels(names)?;
        let columns = names
            .iter()
            .map(|n| self.column(n.as_ref()).expect("checked").to_vec())
            .collect();
        Trace::new(
            names.iter().map(|n| n.as_ref().to_string()).collect(),
            self.time.clone(),
            columns,
        )
    }

    /// Keeps only the samples with `t <= t_end`.
    pub fn truncate_after(&self, t_end: f64) -> Trace {
        let n = self.time.partition_point(|&t| t <= t_end);
        Trace {
            channels: self.channels.clone(),
            time: self.time[..n].to_vec(),
            columns: self.columns.iter().map(|c| c[..n].to_vec()).collect(),
        }
    }

    /// Shifts every timestamp by `offset` seconds.
    pub fn shifted(&self, offset: f64) -> Trace {
        Trace {
            channels: self.channels.clone(),
            time: self.time.iter().map(|t| t + offset).collect(),
            columns: self.columns.clone(),
        }
    }

    /// Linear interpolation of every channel at the instants of `grid`.
    ///
    /// Grid points must lie inside the trace's time span.
    pub fn resample(&self, grid: &[f64]) -> Result<Trace> {
        let (Some(&t0), Some(&t1)) = (self.time.first(), self.time.last()) else {
            return Err(Error::InvalidTrace("cannot resample an empty trace".into()));
        };
        let mut columns = vec![Vec::with_capacity(grid.len()); self.columns.len()];
        for &t in grid {
            if t < t0 || t > t1 {
                return Err(Error::InvalidTrace(format!(
                    "resample point {t} outside [{t0}, {t1}]"
                )));
            }
            let hi = self.time.partition_point(|&s| s < t);
            if self.time[hi] == t {
                for (out, col) in columns.iter_mut().zip(&self.columns) {
                    out.push(col[hi]);
                }
            } else {
                let lo = hi - 1;
                let w = (t - self.time[lo]) / (self.time[hi] - self.time[lo]);
                for (out, col) in columns.iter_mut().zip(&self.columns) {
                    out.push(col[lo] + w * (col[hi] - col[lo]));
                }
            }
        }
        Trace::new(self.channels.clone(), grid.to_vec(), columns)
    }
}

/// Uniform grid `t0 + k·dt` covering the time span shared by all traces.
pub fn common_grid(traces: &[&Trace], dt: f64) -> Result<Vec<f64>> {
    let mut start = f64::NEG_INFINITY;
    let mut end = f64::INFINITY;
    for tr in traces {
        let (Some(&a), Some(&b)) = (tr.time.first(), tr.time.last()) else {
            return Err(Error::InvalidTrace("empty trace".into()));
        };
        start = start.max(a);
        end = end.min(b);
    }
    if end < start {
        return Err(Error::InvalidTrace(
            "traces do not overlap in time".into(),
        ));
    }
    let n = ((end - start) / dt + 1e-9).floor() as usize + 1;
    Ok((0..n).map(|k| start + k as f64 * dt).collect())
}

fn check_monotone(time: &[f64]) -> Result<()> {
    for (i, w) in time.windows(2).enumerate() {
        if !(w[1] > w[0]) {
            return Err(Error::InvalidTrace(format!(
                "time not strictly increasing at row {} ({} -> {})",
                i + 2,
                w[0],
                w[1]
            )));
        }
    }
    if let Some(t) = time.iter().find(|t| !t.is_finite()) {
        return Err(Error::InvalidTrace(format!("non-finite time {t}")));
    }
    Ok(())
}

enum Unit {
    Native,
    Degrees,
}

fn split_header(raw: &str) -> Result<(String, Unit)> {
    let raw = raw.trim();
    if let Some(open) = raw.find('[') {
        let Some(unit) = raw[open + 1..].strip_suffix(']') else {
            return Err(Error::InvalidTrace(format!("malformed header {raw}")));
        };
        let unit = match unit.trim() {
            "deg" => Unit::Degrees,
            "rad" | "" => Unit::Native,
            other => return Err(Error::InvalidTrace(format!("unknown unit {other} in {raw}"))),
        };
        Ok((raw[..open].trim().to_string(), unit))
    } else {
        Ok((raw.to_string(), Unit::Native))
    }
}

/// Reads a trace CSV, checking that every name in `expected` is present.
pub fn load_trace<S: AsRef<str>>(path: impl AsRef<Path>, expected: &[S]) -> Result<Trace> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let parse_err = |line: u64, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let headers = rdr
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    if headers.get(0).map(str::trim) != Some("time") {
        return Err(parse_err(1, "first column must be \"time\"".into()));
    }
    let mut channels = Vec::new();
    let mut units = Vec::new();
    for h in headers.iter().skip(1) {
        let (name, unit) = split_header(h).map_err(|e| parse_err(1, e.to_string()))?;
        channels.push(name);
        units.push(unit);
    }
    let mut time = Vec::new();
    let mut columns = vec![Vec::new(); channels.len()];
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != channels.len() + 1 {
            return Err(parse_err(
                line,
                format!("expected {} fields, found {}", channels.len() + 1, rec.len()),
            ));
        }
        let mut cells = rec.iter().enumerate().map(|(j, cell)| {
            cell.trim().parse::<f64>().map_err(|_| {
                let col = headers.get(j).unwrap_or("?");
                parse_err(line, format!("non-numeric cell {cell:?} in column {col}"))
            })
        });
        time.push(cells.next().expect("time column")?);
        for (col, v) in columns.iter_mut().zip(cells) {
            col.push(v?);
        }
    }
    for (col, unit) in columns.iter_mut().zip(&units) {
        if let Unit::Degrees = unit {
            col.iter_mut().for_each(|v| *v = v.to_radians());
        }
    }
    let trace = Trace::new(channels, time, columns).map_err(|e| match e {
        Error::InvalidTrace(msg) => Error::InvalidTrace(format!("{}: {msg}", path.display())),
        other => other,
    })?;
    trace
        .require_channels(expected)
        .map_err(|e| Error::InvalidTrace(format!("{}: {e}", path.display())))?;
    Ok(trace)
}

/// Writes `trace` as CSV with LF line endings.
pub fn write_trace(trace: &Trace, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_trace_to(trace, &mut out).map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn write_trace_to<W: Write>(trace: &Trace, out: &mut W) -> std::io::Result<()> {
    write!(out, "time")?;
    for c in &trace.channels {
        write!(out, ",{c}")?;
    }
    writeln!(out)?;
    for i in 0..trace.len() {
        write!(out, "{:?}", trace.time[i])?;
        for col in &trace.columns {
            write!(out, ",{:?}", col[i])?;
        }
        writeln!(out)?;
    }
    Ok(())
}
