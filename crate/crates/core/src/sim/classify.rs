//! Trajectory verdicts: settled, drifting (loss of synchronism), or
//! neither.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

use super::log::TimeSeriesLog;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING-KEBAB-CASE")]
pub enum Classification {
    Stable,
    UnstableAngleDrift,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityVerdict {
    pub classification: Classification,
    /// Largest angle excursion from the pre-event value (rad).
    pub max_angle_excursion: f64,
    /// Largest `|ω − 1|` over the final window (p.u.).
    pub final_frequency_error: f64,
    pub recovered_to_prefault: bool,
    /// First time the excursion exceeded one full turn.
    pub drift_time: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifyOptions {
    /// Final window length (s).
    pub window: f64,
    pub angle_tolerance: f64,
    pub frequency_tolerance: f64,
    pub winding_limit: f64,
    /// Excursions are measured from the last sample strictly before this
    /// time.
    pub reference_time: Option<f64>,
    pub voltage_recovery_tolerance: f64,
}

impl Default for ClassifyOptions {
    fn default() -> Self {
        Self {
            window: 0.5,
            angle_tolerance: 0.05,
            frequency_tolerance: 1e-3,
            winding_limit: 2.0 * PI,
            reference_time: None,
            voltage_recovery_tolerance: 1e-2,
        }
    }
}

fn wrap(a: f64) -> f64 {
    (a + PI).rem_euclid(2.0 * PI) - PI
}

/// Angle series that must stay bounded: each `δ_k` against the grid, or
/// every pairwise difference when islanded.
fn angle_series(log: &TimeSeriesLog) -> Vec<Vec<f64>> {
    let d: Vec<&Vec<f64>> = log.converters.iter().map(|c| &c.delta).collect();
    if !log.islanded {
        return d.into_iter().cloned().collect();
    }
    let mut out = Vec::new();
    for j in 0..d.len() {
        for k in (j + 1)..d.len() {
            out.push(d[k].iter().zip(d[j]).map(|(a, b)| a - b).collect());
        }
    }
    out
}

pub fn classify_log(log: &TimeSeriesLog, opts: &ClassifyOptions) -> Result<StabilityVerdict> {
    let n = log.t.len();
    if n < 2 || log.converters.is_empty() {
        return Err(Error::Input("log needs at least two samples and one converter".into()));
    }
    let (t0, t_end) = (log.t[0], log.t[n - 1]);
    if t_end - t0 < opts.window {
        return Err(Error::Input(format!(
            "log spans {} s, shorter than the {} s classification window",
            t_end - t0,
            opts.window
        )));
    }
    for c in &log.converters {
        if c.delta.len() != n || c.freq.len() != n {
            return Err(Error::Input(format!("converter '{}' lacks delta or freq samples", c.id)));
        }
    }

    let series = angle_series(log);
    let r = opts
        .reference_time
        .map(|tr| log.t.iter().rposition(|&t| t < tr - 1e-9).unwrap_or(0))
        .unwrap_or(0);

    let mut excursion = 0.0f64;
    let mut drift_time: Option<f64> = None;
    for s in &series {
        for i in r..n {
            let e = (s[i] - s[r]).abs();
            excursion = excursion.max(e);
            if e > opts.winding_limit {
                drift_time = Some(drift_time.map_or(log.t[i], |d| d.min(log.t[i])));
                break;
            }
        }
    }

    let w0 = log.t.iter().position(|&t| t >= t_end - opts.window - 1e-12).unwrap_or(0);
    let settled = series
        .iter()
        .all(|s| s[w0..].iter().all(|x| (x - s[n - 1]).abs() < opts.angle_tolerance));
    let freq_err = log
        .converters
        .iter()
        .flat_map(|c| c.freq[w0..].iter().map(|f| (f - 1.0).abs()))
        .fold(0.0, f64::max);

    let recovered = log.converters.iter().all(|c| {
        c.vmag.len() != n || (c.vmag[n - 1] - c.vmag[r]).abs() < opts.voltage_recovery_tolerance
    }) && series.iter().all(|s| wrap(s[n - 1] - s[r]).abs() < opts.angle_tolerance);

    let classification = if drift_time.is_some() {
        Classification::UnstableAngleDrift
    } else if settled && freq_err < opts.frequency_tolerance {
        Classification::Stable
    } else {
        Classification::Inconclusive
    };
    Ok(StabilityVerdict {
        classification,
        max_angle_excursion: excursion,
        final_frequency_error: freq_err,
        recovered_to_prefault: recovered,
        drift_time,
    })
}
