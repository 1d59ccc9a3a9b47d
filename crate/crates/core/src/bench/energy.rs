//! Energy-saving estimator.
//!
//! For file size `i` and configuration `j` (1 = no encryption, 2 = AES
//! baseline, 3 = Populus) a trace holds the whole-device energy `EC[i][j]`
//! and elapsed time `ET[i][j]`; `SP` is idle system power. Writing the
//! device energy as file work `FE` plus OS overhead `SP * ET` plus the
//! cipher's own cost (`AE` for the baseline, `PE` for Populus) gives
//!
//! ```text
//! GE_i = (AE - PE) / AE
//!      = ((EC2 - EC3) - SP (ET2 - ET3)) / ((EC2 - EC1) - SP (ET2 - ET1))
//! ```
//!
//! Trace CSV: header `i,conf,EC_j,ET_j`, one row per size and configuration,
//! plus one row `SP,,<watts>,`.

use std::io;

use serde::Serialize;

use crate::error::{Error, Result};

/// Idle power used for the reference device measurements, in watts.
pub const REFERENCE_IDLE_POWER_W: f64 = 0.294;
/// Reference range of mean GE from device measurements. Reported, never asserted.
pub const REFERENCE_GE_RANGE: (f64, f64) = (0.50, 0.70);
pub const DEFAULT_GE_EPSILON: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct SizeTrace {
    pub size: String,
    /// Joules, indexed by configuration 1..=3 at 0..=2.
    pub ec: [f64; 3],
    /// Seconds, same indexing.
    pub et: [f64; 3],
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnergyTrace {
    pub sp: f64,
    pub sizes: Vec<SizeTrace>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GeEntry {
    pub i: String,
    pub ge: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GeResult {
    pub sizes: Vec<GeEntry>,
    pub mean: f64,
}

pub fn compute_ge(trace: &EnergyTrace) -> Result<GeResult> {
    compute_ge_with(trace, DEFAULT_GE_EPSILON)
}

/// `epsilon` is the smallest denominator magnitude accepted.
pub fn compute_ge_with(trace: &EnergyTrace, epsilon: f64) -> Result<GeResult> {
    if !(trace.sp.is_finite() && trace.sp >= 0.0) {
        return Err(Error::InvalidTrace(format!("SP = {} must be finite and non-negative", trace.sp)));
    }
    if trace.sizes.is_empty() {
        return Err(Error::InvalidTrace("no file sizes".into()));
    }
    let sp = trace.sp;
    let mut sizes = Vec::with_capacity(trace.sizes.len());
    for s in &trace.sizes {
        if s.ec.iter().chain(&s.et).any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidTrace(format!("size {}: entries must be finite and non-negative", s.size)));
        }
        let [ec1, ec2, ec3] = s.ec;
        let [et1, et2, et3] = s.et;
        let num = (ec2 - ec3) - sp * (et2 - et3);
        let den = (ec2 - ec1) - sp * (et2 - et1);
        if den.abs() < epsilon {
            return Err(Error::DegenerateTrace { size: s.size.clone(), denominator: den });
        }
        sizes.push(GeEntry { i: s.size.clone(), ge: num / den });
    }
    let mean = sizes.iter().map(|e| e.ge).sum::<f64>() / sizes.len() as f64;
    Ok(GeResult { sizes, mean })
}

fn field(rec: &csv::StringRecord, idx: usize, line: u64) -> Result<&str> {
    rec.get(idx).map(str::trim).ok_or_else(|| Error::InvalidTrace(format!("line {line}: missing column {idx}")))
}

fn number(text: &str, what: &str, line: u64) -> Result<f64> {
    text.parse().map_err(|_| Error::InvalidTrace(format!("line {line}: {what} {text:?} is not a number")))
}

pub fn parse_energy_csv<R: io::Read>(input: R) -> Result<EnergyTrace> {
    let mut r = csv::ReaderBuilder::new().flexible(true).from_reader(input);
    let header = r.headers().map_err(|e| Error::InvalidTrace(e.to_string()))?;
    if header.iter().map(str::trim).ne(["i", "conf", "EC_j", "ET_j"]) {
        return Err(Error::InvalidTrace(format!("expected header i,conf,EC_j,ET_j, got {header:?}")));
    }
    let mut sp = None;
    // (EC, ET) per configuration, filled in any row order
    type Row = [Option<(f64, f64)>; 3];
    let mut sizes: Vec<(String, Row)> = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::InvalidTrace(e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let i = field(&rec, 0, line)?;
        if i == "SP" {
            if sp.replace(number(field(&rec, 2, line)?, "SP", line)?).is_some() {
                return Err(Error::InvalidTrace(format!("line {line}: second SP row")));
            }
            continue;
        }
        let conf: usize = field(&rec, 1, line)?
            .parse()
            .ok()
            .filter(|c| (1..=3).contains(c))
            .ok_or_else(|| Error::InvalidTrace(format!("line {line}: conf must be 1, 2 or 3")))?;
        let ec = number(field(&rec, 2, line)?, "EC", line)?;
        let et = number(field(&rec, 3, line)?, "ET", line)?;
        let idx = match sizes.iter().position(|(s, _)| s == i) {
            Some(idx) => idx,
            None => {
                sizes.push((i.to_string(), [None; 3]));
                sizes.len() - 1
            }
        };
        if sizes[idx].1[conf - 1].replace((ec, et)).is_some() {
            return Err(Error::InvalidTrace(format!("line {line}: duplicate row for size {i}, conf {conf}")));
        }
    }
    let sp = sp.ok_or_else(|| Error::InvalidTrace("missing SP row".into()))?;
    let sizes = sizes
        .into_iter()
        .map(|(size, confs)| {
            let mut ec = [0.0; 3];
            let mut et = [0.0; 3];
            for (c, v) in confs.iter().enumerate() {
                let (e, t) = v.ok_or_else(|| Error::InvalidTrace(format!("size {size} lacks conf {}", c + 1)))?;
                ec[c] = e;
                et[c] = t;
            }
            Ok(SizeTrace { size, ec, et })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EnergyTrace { sp, sizes })
}

pub fn write_ge_csv<W: io::Write>(out: W, result: &GeResult) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| Error::Io(io::Error::other(e));
    w.write_record(["i", "ge"]).map_err(err)?;
    for e in &result.sizes {
        w.write_record([e.i.as_str(), &e.ge.to_string()]).map_err(err)?;
    }
    w.write_record(["mean", &result.mean.to_string()]).map_err(err)?;
    w.flush()?;
    Ok(())
}

pub fn write_ge_json<W: io::Write>(out: W, result: &GeResult) -> Result<()> {
    let doc = serde_json::json!({
        "sizes": result.sizes,
        "mean": result.mean,
        "reference": {
            "idle_power_w": REFERENCE_IDLE_POWER_W,
            "ge_range": [REFERENCE_GE_RANGE.0, REFERENCE_GE_RANGE.1],
            "note": "device measurements for comparison only; not reproduced here",
        },
    });
    serde_json::to_writer_pretty(out, &doc).map_err(|e| Error::Io(e.into()))
}
