//! Sampled trajectories and their CSV form.

use std::io::{Read, Write};

use crate::control::Mode;
use crate::error::{Error, Result};

use super::spec::CHANNELS;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConverterTrace {
    pub id: String,
    /// Terminal voltage magnitude.
    pub vmag: Vec<f64>,
    /// Output current magnitude on the converter's own base.
    pub imag: Vec<f64>,
    /// Continuous angle against the grid, or against converter 1 when
    /// islanded.
    pub delta: Vec<f64>,
    pub mu_f: Vec<f64>,
    pub mode: Vec<Mode>,
    /// Frequency (p.u.).
    pub freq: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TimeSeriesLog {
    pub t: Vec<f64>,
    pub converters: Vec<ConverterTrace>,
    pub islanded: bool,
}

/// Twelve significant digits.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.11e}")
}

impl TimeSeriesLog {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Writes the channels in `outputs` (all when empty), converters
    /// numbered from 1.
    pub fn write_csv<W: Write>(&self, out: W, outputs: &[String]) -> Result<()> {
        let channels: Vec<&str> = if outputs.is_empty() {
            CHANNELS.to_vec()
        } else {
            CHANNELS.iter().copied().filter(|c| outputs.iter().any(|o| o == c)).collect()
        };
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        for k in 1..=self.converters.len() {
            header.extend(channels.iter().map(|c| format!("conv{k}.{c}")));
        }
        w.write_record(&header).map_err(csv_io)?;
        for (i, t) in self.t.iter().enumerate() {
            let mut row = vec![fmt_float(*t)];
            for c in &self.converters {
                for ch in &channels {
                    row.push(match *ch {
                        "vmag" => fmt_float(c.vmag[i]),
                        "imag" => fmt_float(c.imag[i]),
                        "delta" => fmt_float(c.delta[i]),
                        "mu_f" => fmt_float(c.mu_f[i]),
                        "mode" => (if c.mode[i] == Mode::Saturated { "1" } else { "0" }).to_string(),
                        _ => fmt_float(c.freq[i]),
                    });
                }
            }
            w.write_record(&row).map_err(csv_io)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a log written by [`TimeSeriesLog::write_csv`]. Missing channels
    /// are left empty.
    pub fn read_csv<R: Read>(input: R, islanded: bool) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let header: Vec<String> = r.headers().map_err(csv_io)?.iter().map(str::to_string).collect();
        if header.first().map(String::as_str) != Some("t") {
            return Err(Error::Input("first CSV column must be 't'".into()));
        }
        let mut cols: Vec<(usize, String)> = Vec::new();
        let mut n = 0;
        for h in &header[1..] {
            let (conv, ch) = h
                .strip_prefix("conv")
                .and_then(|s| s.split_once('.'))
                .ok_or_else(|| Error::Input(format!("unrecognised column '{h}'")))?;
            let k: usize = conv.parse().map_err(|_| Error::Input(format!("bad converter index in '{h}'")))?;
            if k == 0 || !CHANNELS.contains(&ch) {
                return Err(Error::Input(format!("unrecognised column '{h}'")));
            }
            n = n.max(k);
            cols.push((k - 1, ch.to_string()));
        }
        let mut log = TimeSeriesLog {
            t: Vec::new(),
            converters: (1..=n).map(|k| ConverterTrace { id: format!("conv{k}"), ..Default::default() }).collect(),
            islanded,
        };
        for (line, rec) in r.records().enumerate() {
            let rec = rec.map_err(csv_io)?;
            let num = |s: &str| -> Result<f64> {
                s.trim().parse().map_err(|_| Error::Input(format!("row {}: '{s}' is not a number", line + 1)))
            };
            log.t.push(num(&rec[0])?);
            for (j, (k, ch)) in cols.iter().enumerate() {
                let c = &mut log.converters[*k];
                let cell = &rec[j + 1];
                match ch.as_str() {
                    "vmag" => c.vmag.push(num(cell)?),
                    "imag" => c.imag.push(num(cell)?),
                    "delta" => c.delta.push(num(cell)?),
                    "mu_f" => c.mu_f.push(num(cell)?),
                    "mode" => c.mode.push(if num(cell)? != 0.0 { Mode::Saturated } else { Mode::Normal }),
                    _ => c.freq.push(num(cell)?),
                }
            }
        }
        Ok(log)
    }
}

fn csv_io(e: csv::Error) -> Error {
    Error::Input(format!("CSV: {e}"))
}
