//! Per-province in-, out- and self-flow series.

use std::path::Path;

use chrono::NaiveDate;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::io::{fmt_f64, write_atomic};
use crate::od::{DailyOd, Granularity};
use crate::territory::TerritoryIndex;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowSeries {
    pub province: String,
    pub dates: Vec<NaiveDate>,
    pub in_flow: Vec<u64>,
    pub out_flow: Vec<u64>,
    pub self_flow: Vec<u64>,
}

impl FlowSeries {
    pub fn in_norm(&self) -> Vec<f64> {
        normalize(&self.in_flow)
    }

    pub fn out_norm(&self) -> Vec<f64> {
        normalize(&self.out_flow)
    }

    pub fn self_norm(&self) -> Vec<f64> {
        normalize(&self.self_flow)
    }

    /// Writes `date,in,out,self,in_norm,out_norm,self_norm`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let (i, o, s) = (self.in_norm(), self.out_norm(), self.self_norm());
        write_atomic(path, |w| {
            writeln!(w, "date,in,out,self,in_norm,out_norm,self_norm")?;
            for k in 0..self.dates.len() {
                writeln!(
                    w,
                    "{},{},{},{},{},{},{}",
                    self.dates[k],
                    self.in_flow[k],
                    self.out_flow[k],
                    self.self_flow[k],
                    fmt_f64(i[k]),
                    fmt_f64(o[k]),
                    fmt_f64(s[k])
                )?;
            }
            Ok(())
        })
    }
}

/// Divides by the series maximum; an all-zero series stays all zero.
pub fn normalize(raw: &[u64]) -> Vec<f64> {
    let max = raw.iter().copied().max().unwrap_or(0);
    if max == 0 {
        return vec![0.0; raw.len()];
    }
    raw.iter().map(|&v| v as f64 / max as f64).collect()
}

/// In-, out- and self-flow of `province` for each day of `ods`.
pub fn compute_flows(ods: &[DailyOd], province: &str, index: &TerritoryIndex) -> Result<FlowSeries> {
    if !index.contains_province(province) {
        return Err(Error::UnknownProvince(province.to_owned()));
    }
    let mut series = FlowSeries {
        province: province.to_owned(),
        dates: Vec::with_capacity(ods.len()),
        in_flow: Vec::with_capacity(ods.len()),
        out_flow: Vec::with_capacity(ods.len()),
        self_flow: Vec::with_capacity(ods.len()),
    };
    for od in ods {
        od.require(Granularity::Province)?;
        let (mut inflow, mut outflow, mut selfflow) = (0, 0, 0);
        for (o, d, c) in od.iter() {
            match (o == province, d == province) {
                (true, true) => selfflow += c,
                (true, false) => outflow += c,
                (false, true) => inflow += c,
                (false, false) => {}
            }
        }
        series.dates.push(od.date);
        series.in_flow.push(inflow);
        series.out_flow.push(outflow);
        series.self_flow.push(selfflow);
    }
    Ok(series)
}
