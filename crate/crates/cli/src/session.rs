//! Multi-condition gait analysis described by a `session.json` manifest.
//!
//! ```json
//! {
//!   "baseline": "nonassisted",
//!   "knee_channel": "knee_r",
//!   "conditions": [
//!     { "label": "nonassisted", "data": "na/tau.csv", "angles": "na/angles.csv" },
//!     { "label": "assisted", "data": "a/tau.csv", "angles": "a/angles.csv" }
//!   ]
//! }
//! ```
//!
//! Paths are relative to the manifest. Every data channel is summarized per
//! gait cycle; strides are cut at peaks of the knee channel of `angles`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nmbc_core::gait::{analyze_condition, average_sides, percent_change, ConditionSummary, DEFAULT_MIN_PERIOD};
use nmbc_core::{load_trace, Error, Result};
use serde::{Deserialize, Serialize};

pub const SESSION_FILE: &str = "session.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Session {
    pub baseline: String,
    #[serde(default = "default_knee")]
    pub knee_channel: String,
    #[serde(default = "default_min_period")]
    pub min_period: f64,
    pub conditions: Vec<ConditionEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionEntry {
    pub label: String,
    pub data: PathBuf,
    pub angles: PathBuf,
    /// Overrides the session knee channel.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub knee_channel: Option<String>,
}

fn default_knee() -> String {
    "knee_r".into()
}

fn default_min_period() -> f64 {
    DEFAULT_MIN_PERIOD
}

/// One line of the analysis report.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub condition: String,
    pub channel: String,
    pub mean_rms: f64,
    pub cycles_before: usize,
    pub cycles_after: usize,
    /// Relative to the baseline condition; `None` for the baseline itself
    /// or when undefined.
    pub percent_change: Option<f64>,
}

/// Accepts either a directory holding `session.json` or the file itself.
pub fn load_session(path: &Path) -> Result<(Session, PathBuf)> {
    let file = if path.is_dir() { path.join(SESSION_FILE) } else { path.to_path_buf() };
    let text = fs::read_to_string(&file).map_err(|e| Error::Io { path: file.clone(), source: e })?;
    let session: Session = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: file.clone(),
        line: e.line() as u64,
        msg: e.to_string(),
    })?;
    if !session.conditions.iter().any(|c| c.label == session.baseline) {
        return Err(Error::InvalidArgument(format!(
            "baseline condition {} is not listed",
            session.baseline
        )));
    }
    let base = file.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((session, base))
}

fn rows_for(summary: &ConditionSummary, baseline: &ConditionSummary, is_base: bool) -> Result<Vec<ReportRow>> {
    let change = percent_change(summary, baseline)?;
    Ok(summary
        .channels
        .iter()
        .enumerate()
        .map(|(i, ch)| ReportRow {
            condition: summary.label.clone(),
            channel: ch.clone(),
            mean_rms: summary.mean_rms[i],
            cycles_before: summary.count_before,
            cycles_after: summary.count_after[i],
            percent_change: if is_base { None } else { change[i] },
        })
        .collect())
}

/// Summarizes every condition. Per-channel rows come first, followed by
/// rows for left/right-averaged channels where both sides are present.
pub fn analyze_session(session: &Session, base: &Path) -> Result<Vec<ReportRow>> {
    let mut summaries = Vec::with_capacity(session.conditions.len());
    for c in &session.conditions {
        let wrap = |e: Error| Error::Trial { trial: c.label.clone(), source: Box::new(e) };
        let knee = c.knee_channel.as_deref().unwrap_or(&session.knee_channel);
        let data = load_trace::<&str>(base.join(&c.data), &[]).map_err(wrap)?;
        let angles = load_trace(base.join(&c.angles), &[knee]).map_err(wrap)?;
        let (cycles, summary) =
            analyze_condition(&c.label, &data, &angles, knee, session.min_period).map_err(wrap)?;
        if cycles.is_empty() {
            log::warn!("condition {}: no gait cycles", c.label);
        }
        log::info!("condition {}: {} cycles", c.label, cycles.len());
        summaries.push(summary);
    }
    let b = session
        .conditions
        .iter()
        .position(|c| c.label == session.baseline)
        .expect("checked on load");
    let averaged: Vec<ConditionSummary> = summaries.iter().map(average_sides).collect();
    let mut rows = Vec::new();
    for (i, s) in summaries.iter().enumerate() {
        rows.extend(rows_for(s, &summaries[b], i == b)?);
    }
    for (i, s) in averaged.iter().enumerate() {
        let merged: Vec<ReportRow> = rows_for(s, &averaged[b], i == b)?
            .into_iter()
            .filter(|r| !summaries[i].channels.contains(&r.channel))
            .collect();
        rows.extend(merged);
    }
    Ok(rows)
}

pub fn write_report<W: Write>(rows: &[ReportRow], out: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["condition", "channel", "mean_rms", "cycles_before", "cycles_after", "percent_change"])?;
    for r in rows {
        w.write_record([
            r.condition.clone(),
            r.channel.clone(),
            format!("{:?}", r.mean_rms),
            r.cycles_before.to_string(),
            r.cycles_after.to_string(),
            r.percent_change.map_or(String::new(), |v| format!("{v:?}")),
        ])?;
    }
    w.flush()
}
