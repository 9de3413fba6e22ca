//! Stride segmentation and per-cycle summaries.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::trace::Trace;

/// Samples per resampled cycle (0 to 100 % of the gait cycle).
pub const CYCLE_POINTS: usize = 101;
pub const DEFAULT_MIN_PERIOD: f64 = 0.8;
/// Peak prominence threshold as a fraction of the peak-to-peak range.
pub const PROMINENCE_FRACTION: f64 = 0.2;
/// Outlier fence: values above `Q3 + OUTLIER_IQR_FACTOR·IQR` are dropped.
pub const OUTLIER_IQR_FACTOR: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CycleBounds {
    pub index: usize,
    pub t_start: f64,
    pub t_end: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaitCycle {
    pub index: usize,
    pub t_start: f64,
    pub t_end: f64,
    pub channels: Vec<String>,
    /// `[channel][point]`, each of length [`CYCLE_POINTS`].
    pub resampled: Vec<Vec<f64>>,
    pub rms: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionSummary {
    pub label: String,
    pub channels: Vec<String>,
    /// Mean over retained cycles of the per-cycle RMS.
    pub mean_rms: Vec<f64>,
    pub count_before: usize,
    /// Retained cycles per channel.
    pub count_after: Vec<usize>,
}

/// Indices of local maxima with at least `min_prominence` and at least
/// `min_distance` samples between them. Flat tops count once, at their
/// middle sample. When peaks are too close, the higher one wins.
pub fn find_peaks(x: &[f64], min_prominence: f64, min_distance: usize) -> Vec<usize> {
    let n = x.len();
    let mut peaks = Vec::new();
    let mut i = 1;
    while i + 1 < n {
        if x[i - 1] < x[i] {
            let mut ahead = i + 1;
            while ahead + 1 < n && x[ahead] == x[i] {
                ahead += 1;
            }
            if x[ahead] < x[i] {
                peaks.push((i + ahead - 1) / 2);
                i = ahead;
            }
        }
        i += 1;
    }

    let mut keep = vec![true; peaks.len()];
    if min_distance > 1 {
        let mut order: Vec<usize> = (0..peaks.len()).collect();
        // Highest first; ties resolved by position for determinism.
        order.sort_by(|&a, &b| x[peaks[b]].total_cmp(&x[peaks[a]]).then(a.cmp(&b)));
        for &p in &order {
            if !keep[p] {
                continue;
            }
            let mut k = p;
            while k > 0 && peaks[p] - peaks[k - 1] < min_distance {
                keep[k - 1] = false;
                k -= 1;
            }
            k = p + 1;
            while k < peaks.len() && peaks[k] - peaks[p] < min_distance {
                keep[k] = false;
                k += 1;
            }
        }
    }

    peaks
        .into_iter()
        .zip(keep)
        .filter(|&(p, k)| k && prominence(x, p) >= min_prominence)
        .map(|(p, _)| p)
        .collect()
}

/// Height of a peak above the higher of the two minima that separate it
/// from taller samples (or the trace ends).
fn prominence(x: &[f64], p: usize) -> f64 {
    let h = x[p];
    let mut left_min = h;
    for &v in x[..p].iter().rev() {
        if v > h {
            break;
        }
        left_min = left_min.min(v);
    }
    let mut right_min = h;
    for &v in &x[p + 1..] {
        if v > h {
            break;
        }
        right_min = right_min.min(v);
    }
    h - left_min.max(right_min)
}

/// Cycle boundaries between consecutive knee-angle peaks.
pub fn segment_samples(time: &[f64], knee: &[f64], min_period: f64) -> Result<Vec<CycleBounds>> {
    if !(min_period > 0.0) || time.len() != knee.len() {
        return Err(Error::InvalidArgument(format!("invalid segmentation period {min_period}")));
    }
    let duration = time.last().zip(time.first()).map_or(0.0, |(b, a)| b - a);
    if duration <= 2.0 * min_period {
        return Err(Error::InvalidTrace(format!(
            "segmentation needs more than {} s of data, got {duration} s",
            2.0 * min_period
        )));
    }
    let dt = duration / (time.len() - 1) as f64;
    let (lo, hi) = knee
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let range = hi - lo;
    if !(range > 0.0) {
        log::warn!("knee angle is constant; no gait cycles found");
        return Ok(Vec::new());
    }
    let distance = (min_period / dt).round().max(1.0) as usize;
    let peaks = find_peaks(knee, PROMINENCE_FRACTION * range, distance);
    if peaks.len() < 2 {
        log::warn!("found {} knee-angle peaks; no gait cycles", peaks.len());
        return Ok(Vec::new());
    }
    Ok(peaks
        .windows(2)
        .enumerate()
        .map(|(index, w)| CycleBounds {
            index,
            t_start: time[w[0]],
            t_end: time[w[1]],
        })
        .collect())
}

/// Segments on the named channel of `knee`.
pub fn segment(knee: &Trace, channel: &str, min_period: f64) -> Result<Vec<CycleBounds>> {
    let values = knee
        .column(channel)
        .ok_or_else(|| Error::InvalidTrace(format!("missing channel {channel}")))?;
    segment_samples(knee.time(), values, min_period)
}

pub fn cycle_rms(samples: &[f64]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    (samples.iter().map(|v| v * v).sum::<f64>() / samples.len() as f64).sqrt()
}

fn interpolate(time: &[f64], values: &[f64], t: f64) -> f64 {
    let i = time.partition_point(|&s| s <= t);
    if i == 0 {
        return values[0];
    }
    if i == time.len() {
        return values[i - 1];
    }
    let (t0, t1) = (time[i - 1], time[i]);
    values[i - 1] + (values[i] - values[i - 1]) * (t - t0) / (t1 - t0)
}

/// Cuts every channel of `data` into the given cycles. RMS uses the
/// native samples with `t_start <= t < t_end`.
pub fn build_cycles(data: &Trace, bounds: &[CycleBounds]) -> Result<Vec<GaitCycle>> {
    let time = data.time();
    bounds
        .iter()
        .map(|b| {
            if !(b.t_end > b.t_start) {
                return Err(Error::InvalidArgument(format!("empty cycle {}", b.index)));
            }
            let first = time.partition_point(|&t| t < b.t_start);
            let last = time.partition_point(|&t| t < b.t_end);
            if first >= last || b.t_start < time[0] || b.t_end > time[time.len() - 1] {
                return Err(Error::InvalidTrace(format!(
                    "cycle {} [{}, {}] is not covered by the data",
                    b.index, b.t_start, b.t_end
                )));
            }
            let mut resampled = Vec::with_capacity(data.channels().len());
            let mut rms = Vec::with_capacity(data.channels().len());
            for c in 0..data.channels().len() {
                let col = data.column_at(c);
                rms.push(cycle_rms(&col[first..last]));
                resampled.push(
                    (0..CYCLE_POINTS)
                        .map(|p| {
                            let t = if p + 1 == CYCLE_POINTS {
                                b.t_end
                            } else {
                                b.t_start
                                    + (b.t_end - b.t_start) * p as f64 / (CYCLE_POINTS - 1) as f64
                            };
                            interpolate(time, col, t)
                        })
                        .collect(),
                );
            }
            Ok(GaitCycle {
                index: b.index,
                t_start: b.t_start,
                t_end: b.t_end,
                channels: data.channels().to_vec(),
                resampled,
                rms,
            })
        })
        .collect()
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}

/// Drops values above `Q3 + 3·IQR`, keeping the order of the rest.
pub fn remove_outliers(values: &[f64]) -> Vec<f64> {
    if values.len() < 4 {
        log::warn!("{} values are too few for outlier removal", values.len());
        return values.to_vec();
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q1 = quantile(&sorted, 0.25);
    let q3 = quantile(&sorted, 0.75);
    let fence = q3 + OUTLIER_IQR_FACTOR * (q3 - q1);
    values.iter().copied().filter(|&v| v <= fence).collect()
}

pub fn summarize(label: &str, cycles: &[GaitCycle], channels: &[String]) -> ConditionSummary {
    let mut mean_rms = Vec::with_capacity(channels.len());
    let mut count_after = Vec::with_capacity(channels.len());
    for c in 0..channels.len() {
        let values: Vec<f64> = cycles.iter().map(|cy| cy.rms[c]).collect();
        let kept = remove_outliers(&values);
        count_after.push(kept.len());
        mean_rms.push(if kept.is_empty() {
            f64::NAN
        } else {
            kept.iter().sum::<f64>() / kept.len() as f64
        });
    }
    ConditionSummary {
        label: label.to_string(),
        channels: channels.to_vec(),
        mean_rms,
        count_before: cycles.len(),
        count_after,
    }
}

/// `100·(assisted − nonassisted)/nonassisted`; `None` when undefined.
pub fn percent_change_value(assisted: f64, nonassisted: f64) -> Option<f64> {
    let v = 100.0 * (assisted - nonassisted) / nonassisted;
    (nonassisted != 0.0 && v.is_finite()).then_some(v)
}

pub fn percent_change(
    assisted: &ConditionSummary,
    nonassisted: &ConditionSummary,
) -> Result<Vec<Option<f64>>> {
    if assisted.channels != nonassisted.channels {
        return Err(Error::InvalidArgument(format!(
            "conditions {} and {} have different channels",
            assisted.label, nonassisted.label
        )));
    }
    Ok(assisted
        .mean_rms
        .iter()
        .zip(&nonassisted.mean_rms)
        .map(|(&a, &n)| percent_change_value(a, n))
        .collect())
}

/// Splits a side marker (`_l`/`_r` at the end or followed by `_`) out of
/// a channel name: `ankle_l_tau_bio` gives `("ankle_tau_bio", 'l')`.
fn split_side(name: &str) -> Option<(String, char)> {
    for side in ['l', 'r'] {
        let suffix = format!("_{side}");
        if let Some(base) = name.strip_suffix(&suffix) {
            return Some((base.to_string(), side));
        }
        let infix = format!("_{side}_");
        if let Some(i) = name.find(&infix) {
            return Some((format!("{}{}", &name[..i], &name[i + 2..]), side));
        }
    }
    None
}

/// Merges left/right channel pairs (`ankle_l`/`ankle_r`,
/// `ankle_l_tau_bio`/`ankle_r_tau_bio`) into one channel holding the mean of
/// the two sides; unpaired channels pass through.
pub fn average_sides(s: &ConditionSummary) -> ConditionSummary {
    let mut out = ConditionSummary {
        label: s.label.clone(),
        channels: Vec::new(),
        mean_rms: Vec::new(),
        count_before: s.count_before,
        count_after: Vec::new(),
    };
    let split: Vec<Option<(String, char)>> = s.channels.iter().map(|c| split_side(c)).collect();
    let mut used = vec![false; s.channels.len()];
    for i in 0..s.channels.len() {
        if used[i] {
            continue;
        }
        let partner = split[i].as_ref().and_then(|(base, side)| {
            (0..s.channels.len())
                .find(|&j| {
                    !used[j]
                        && j != i
                        && split[j].as_ref().is_some_and(|(b, o)| b == base && o != side)
                })
                .map(|j| (base.clone(), j))
        });
        match partner {
            Some((base, j)) => {
                used[j] = true;
                out.channels.push(base);
                out.mean_rms.push((s.mean_rms[i] + s.mean_rms[j]) / 2.0);
                out.count_after.push(s.count_after[i] + s.count_after[j]);
            }
            None => {
                out.channels.push(s.channels[i].clone());
                out.mean_rms.push(s.mean_rms[i]);
                out.count_after.push(s.count_after[i]);
            }
        }
    }
    out
}

/// Segments on the knee channel and summarizes every channel of `data`.
pub fn analyze_condition(
    label: &str,
    data: &Trace,
    knee: &Trace,
    knee_channel: &str,
    min_period: f64,
) -> Result<(Vec<GaitCycle>, ConditionSummary)> {
    let bounds = segment(knee, knee_channel, min_period)?;
    let cycles = build_cycles(data, &bounds)?;
    let summary = summarize(label, &cycles, data.channels());
    Ok((cycles, summary))
}
