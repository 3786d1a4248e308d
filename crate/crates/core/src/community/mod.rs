//! Map-equation communities ("local job markets") of the daily
//! municipality flow graph.

mod flow;
mod graph;
mod infomap;
mod mapeq;

use std::path::Path;

use chrono::{Datelike, NaiveDate, Weekday};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::Result;
use crate::io::{write_atomic, write_json};
use crate::od::{sum_matrices, DailyOd, Granularity};

pub use flow::{stationary_flow, StationaryFlow, DEFAULT_MAX_ITERATIONS, DEFAULT_TELEPORT, DEFAULT_TOLERANCE};
pub use graph::FlowGraph;
pub use infomap::{infomap, infomap_on_flow, infomap_traced, InfomapConfig, LevelCheck, Partition, MIN_GAIN};
pub use mapeq::map_equation;

#[derive(Debug, Clone, Default)]
pub struct CommunityOptions {
    pub infomap: InfomapConfig,
    /// Days summed into each day's graph (1 = that day only).
    pub window: usize,
    /// Municipalities to include as nodes even without flow.
    pub registry_nodes: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DailyCommunities {
    pub date: NaiveDate,
    pub graph: FlowGraph,
    pub partition: Option<Partition>,
    /// No trips that day.
    pub empty: bool,
}

impl DailyCommunities {
    /// Module count; on an empty day every registry node is its own module.
    pub fn count(&self) -> usize {
        self.partition
            .as_ref()
            .map_or(self.graph.node_count(), |p| p.module_count)
    }

    pub fn codelength(&self) -> Option<f64> {
        self.partition.as_ref().map(|p| p.codelength)
    }

    /// Modules as sorted municipality lists, keeping only members accepted
    /// by `keep` and dropping modules left empty.
    pub fn modules_filtered(&self, keep: impl Fn(&str) -> bool) -> Vec<Vec<String>> {
        let names = self.graph.names();
        let modules: Vec<Vec<usize>> = match &self.partition {
            Some(p) => p.modules(),
            None => (0..names.len()).map(|i| vec![i]).collect(),
        };
        modules
            .into_iter()
            .map(|m| {
                let mut v: Vec<String> =
                    m.into_iter().map(|i| names[i].clone()).filter(|n| keep(n)).collect();
                v.sort();
                v
            })
            .filter(|m| !m.is_empty())
            .collect()
    }
}

/// Runs the optimizer on every day's municipality graph (optionally a
/// trailing window of days). Days are independent and run in parallel.
pub fn community_count_series(ods: &[DailyOd], opts: &CommunityOptions) -> Result<Vec<DailyCommunities>> {
    let window = opts.window.max(1);
    let extra: Vec<&str> = opts
        .registry_nodes
        .iter()
        .flatten()
        .map(String::as_str)
        .collect();
    (0..ods.len())
        .into_par_iter()
        .map(|i| {
            let day = &ods[i];
            day.require(Granularity::Municipality)?;
            let od = if window == 1 {
                day.clone()
            } else {
                sum_matrices(&ods[(i + 1).saturating_sub(window)..=i], day.date, Granularity::Municipality)?
            };
            let graph = FlowGraph::from_od(&od, extra.iter().copied())?;
            if od.is_empty() {
                log::warn!("{}: no trips; reporting {} isolated nodes", od.date, graph.node_count());
                return Ok(DailyCommunities {
                    date: od.date,
                    graph,
                    partition: None,
                    empty: true,
                });
            }
            let partition = infomap(&graph, &opts.infomap)?;
            Ok(DailyCommunities {
                date: od.date,
                graph,
                partition: Some(partition),
                empty: false,
            })
        })
        .collect()
}

/// `date,community_count,sunday`.
pub fn write_counts_csv(days: &[DailyCommunities], path: &Path) -> Result<()> {
    write_atomic(path, |w| {
        writeln!(w, "date,community_count,sunday")?;
        for d in days {
            let sunday = d.date.weekday() == Weekday::Sun;
            writeln!(w, "{},{},{}", d.date, d.count(), u8::from(sunday))?;
        }
        Ok(())
    })
}

#[derive(Serialize)]
struct ModuleDump {
    id: usize,
    municipalities: Vec<String>,
}

#[derive(Serialize)]
struct PartitionDump {
    date: NaiveDate,
    modules: Vec<ModuleDump>,
    codelength: Option<f64>,
    empty: bool,
}

/// `{date, modules: [{id, municipalities}], codelength}` for one day,
/// restricted to municipalities accepted by `keep`.
pub fn write_partition_json(day: &DailyCommunities, path: &Path, keep: impl Fn(&str) -> bool) -> Result<()> {
    let dump = PartitionDump {
        date: day.date,
        modules: day
            .modules_filtered(keep)
            .into_iter()
            .enumerate()
            .map(|(id, municipalities)| ModuleDump { id, municipalities })
            .collect(),
        codelength: day.codelength(),
        empty: day.empty,
    };
    write_json(path, &dump)
}

/// Median of the counts; mean of the middle pair for even lengths.
pub fn median(counts: &[usize]) -> Option<f64> {
    if counts.is_empty() {
        return None;
    }
    let mut v = counts.to_vec();
    v.sort_unstable();
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2] as f64
    } else {
        (v[n / 2 - 1] + v[n / 2]) as f64 / 2.0
    })
}
