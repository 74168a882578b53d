//! Long-format CSV panels.
//!
//! Counts: `t,location,value`. Covariates: `covariate,t,location,value`.
//! Time is 0-based, locations and covariates are 1-based; the header is mandatory.

use crate::error::{invalid, Result};
use crate::model::{CountPanel, CovariatePanel};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

#[derive(Debug, Serialize, Deserialize)]
struct CountRecord {
    t: usize,
    location: usize,
    value: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct CovariateRecord {
    covariate: usize,
    t: usize,
    location: usize,
    value: f64,
}

/// Fills a dense (T+1)×p grid, rejecting gaps, duplicates and 0 indices.
fn dense_panel(entries: impl Iterator<Item = (usize, usize, f64)>, what: &str) -> Result<(usize, usize, Vec<f64>)> {
    let entries: Vec<_> = entries.collect();
    if entries.is_empty() {
        return invalid(format!("{what} file has no rows"));
    }
    if entries.iter().any(|e| e.1 == 0) {
        return invalid(format!("{what} locations are 1-based"));
    }
    let len = entries.iter().map(|e| e.0).max().unwrap_or(0) + 1;
    let p = entries.iter().map(|e| e.1).max().unwrap_or(0);
    let mut data = vec![f64::NAN; len * p];
    for &(t, loc, v) in &entries {
        let slot = &mut data[t * p + loc - 1];
        if !slot.is_nan() {
            return invalid(format!("{what} value for t = {t}, location = {loc} appears twice"));
        }
        *slot = v;
    }
    if let Some(i) = data.iter().position(|v| v.is_nan()) {
        return invalid(format!("{what} value missing for t = {}, location = {}", i / p, i % p + 1));
    }
    Ok((len, p, data))
}

pub fn read_counts<R: Read>(r: R) -> Result<CountPanel> {
    let mut rdr = csv::Reader::from_reader(r);
    let rows: Vec<CountRecord> = rdr.deserialize().collect::<std::result::Result<_, _>>()?;
    let (_, p, data) = dense_panel(rows.into_iter().map(|r| (r.t, r.location, r.value)), "count")?;
    CountPanel::new(p, data)
}

/// Writes any time-major panel of p columns in the count layout.
pub fn write_panel<W: Write>(w: W, p: usize, data: &[f64]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for (idx, &value) in data.iter().enumerate() {
        out.serialize(CountRecord { t: idx / p, location: idx % p + 1, value })?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_counts<W: Write>(w: W, y: &CountPanel) -> Result<()> {
    write_panel(w, y.p(), y.as_slice())
}

pub fn read_covariates<R: Read>(r: R) -> Result<CovariatePanel> {
    let mut rdr = csv::Reader::from_reader(r);
    let rows: Vec<CovariateRecord> = rdr.deserialize().collect::<std::result::Result<_, _>>()?;
    if rows.iter().any(|r| r.covariate == 0) {
        return invalid("covariate indices are 1-based");
    }
    let m = rows.iter().map(|r| r.covariate).max().unwrap_or(0);
    let procs = (1..=m)
        .map(|k| {
            let (len, p, data) = dense_panel(rows.iter().filter(|r| r.covariate == k).map(|r| (r.t, r.location, r.value)), "covariate")?;
            Ok((0..len).map(|t| data[t * p..(t + 1) * p].to_vec()).collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;
    CovariatePanel::from_processes(&procs)
}

pub fn write_covariates<W: Write>(w: W, x: &CovariatePanel) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for k in 0..x.m() {
        for t in 0..x.len() {
            for (i, &value) in x.slice(k, t).iter().enumerate() {
                out.serialize(CovariateRecord { covariate: k + 1, t, location: i + 1, value })?;
            }
        }
    }
    out.flush()?;
    Ok(())
}
