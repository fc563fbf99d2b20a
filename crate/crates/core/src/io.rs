//! CSV input and output. State labels are 1-based in files and 0-based in
//! memory.

use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::simulate::LabeledSeries;

fn column(headers: &csv::StringRecord, name: &str) -> Option<usize> {
    headers.iter().position(|h| h.trim() == name)
}

fn parse_f64(s: &str, row: usize, what: &str) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|_| Error::InvalidData {
        index: row,
        reason: format!("cannot parse {what} `{s}`"),
    })
}

fn parse_label(s: &str, row: usize) -> Result<usize> {
    match s.trim().parse::<usize>() {
        Ok(v) if v >= 1 => Ok(v - 1),
        _ => Err(Error::InvalidData {
            index: row,
            reason: format!("state labels must be integers >= 1, got `{s}`"),
        }),
    }
}

/// Reads a CSV with a mandatory `x` column and an optional `state` column.
/// `subtract` is removed from every observation.
pub fn read_series(path: &Path, subtract: f64) -> Result<LabeledSeries> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    let xi = column(&headers, "x")
        .ok_or_else(|| Error::Config(format!("{}: missing column `x`", path.display())))?;
    let si = column(&headers, "state");
    let mut x = Vec::new();
    let mut states = si.map(|_| Vec::new());
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        let v = parse_f64(&rec[xi], row, "x")? - subtract;
        if !v.is_finite() {
            return Err(Error::InvalidData {
                index: row,
                reason: "non-finite observation".into(),
            });
        }
        x.push(v);
        if let (Some(si), Some(states)) = (si, states.as_mut()) {
            states.push(parse_label(&rec[si], row)?);
        }
    }
    if x.is_empty() {
        return Err(Error::Config(format!("{}: no observations", path.display())));
    }
    Ok(LabeledSeries { x, states })
}

/// Writes `t,x,state` (or `t,x` when unlabeled).
pub fn write_series(path: &Path, s: &LabeledSeries) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    match &s.states {
        Some(states) => {
            w.write_record(["t", "x", "state"])?;
            for (t, (x, st)) in s.x.iter().zip(states).enumerate() {
                w.write_record([(t + 1).to_string(), x.to_string(), (st + 1).to_string()])?;
            }
        }
        None => {
            w.write_record(["t", "x"])?;
            for (t, x) in s.x.iter().enumerate() {
                w.write_record([(t + 1).to_string(), x.to_string()])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Output of local and global decoding for one series.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub x: Vec<f64>,
    pub truth: Option<Vec<usize>>,
    pub viterbi: Vec<usize>,
    /// T x N local state probabilities.
    pub probs: DMatrix<f64>,
}

/// Writes `t,x,[state,]viterbi_state,p_state_1..p_state_N`; the `state`
/// column appears only when true labels are known.
pub fn write_decoded(path: &Path, d: &Decoded) -> Result<()> {
    let n = d.probs.ncols();
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["t".to_string(), "x".into()];
    if d.truth.is_some() {
        header.push("state".into());
    }
    header.push("viterbi_state".into());
    header.extend((1..=n).map(|i| format!("p_state_{i}")));
    w.write_record(&header)?;
    for t in 0..d.x.len() {
        let mut rec = vec![(t + 1).to_string(), d.x[t].to_string()];
        if let Some(truth) = &d.truth {
            rec.push((truth[t] + 1).to_string());
        }
        rec.push((d.viterbi[t] + 1).to_string());
        rec.extend((0..n).map(|i| d.probs[(t, i)].to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_decoded(path: &Path) -> Result<Decoded> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    let missing = |c: &str| Error::Config(format!("{}: missing column `{c}`", path.display()));
    let xi = column(&headers, "x").ok_or_else(|| missing("x"))?;
    let vi = column(&headers, "viterbi_state").ok_or_else(|| missing("viterbi_state"))?;
    let si = column(&headers, "state");
    let mut pcols = Vec::new();
    while let Some(c) = column(&headers, &format!("p_state_{}", pcols.len() + 1)) {
        pcols.push(c);
    }
    if pcols.is_empty() {
        return Err(missing("p_state_1"));
    }
    let mut x = Vec::new();
    let mut truth = si.map(|_| Vec::new());
    let mut viterbi = Vec::new();
    let mut probs = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        x.push(parse_f64(&rec[xi], row, "x")?);
        viterbi.push(parse_label(&rec[vi], row)?);
        if let (Some(si), Some(truth)) = (si, truth.as_mut()) {
            truth.push(parse_label(&rec[si], row)?);
        }
        for &c in &pcols {
            probs.push(parse_f64(&rec[c], row, "probability")?);
        }
    }
    let probs = DMatrix::from_row_slice(x.len(), pcols.len(), &probs);
    Ok(Decoded {
        x,
        truth,
        viterbi,
        probs,
    })
}
