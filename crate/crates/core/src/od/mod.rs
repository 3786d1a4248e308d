//! Daily origin-destination matrices.

mod store;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::Trip;
use crate::territory::TerritoryIndex;

pub use store::{OdStore, SCHEMA_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Municipality,
    Province,
}

impl Granularity {
    pub fn as_str(self) -> &'static str {
        match self {
            Granularity::Municipality => "municipality",
            Granularity::Province => "province",
        }
    }
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Granularity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "municipality" => Ok(Granularity::Municipality),
            "province" => Ok(Granularity::Province),
            other => Err(Error::InvalidArgument(format!("unknown granularity `{other}`"))),
        }
    }
}

/// Sparse trip counts for one day. Stored cells are always ≥ 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DailyOd {
    pub date: NaiveDate,
    pub granularity: Granularity,
    cells: BTreeMap<(String, String), u64>,
}

impl DailyOd {
    pub fn new(date: NaiveDate, granularity: Granularity) -> Self {
        Self {
            date,
            granularity,
            cells: BTreeMap::new(),
        }
    }

    /// Adds `count` trips to a cell. Zero counts are ignored, and
    /// municipality self-loops are rejected since a trip needs two
    /// different municipalities.
    pub fn add(&mut self, origin: &str, destination: &str, count: u64) -> Result<()> {
        if count == 0 {
            return Ok(());
        }
        if self.granularity == Granularity::Municipality && origin == destination {
            return Err(Error::InvalidArgument(format!(
                "self-loop on municipality `{origin}`"
            )));
        }
        *self
            .cells
            .entry((origin.to_owned(), destination.to_owned()))
            .or_insert(0) += count;
        Ok(())
    }

    pub fn get(&self, origin: &str, destination: &str) -> u64 {
        // BTreeMap<(String, String)> can't be probed with (&str, &str).
        self.cells
            .range((origin.to_owned(), destination.to_owned())..)
            .next()
            .filter(|((o, d), _)| o == origin && d == destination)
            .map(|(_, &c)| c)
            .unwrap_or(0)
    }

    /// Cells in (origin, destination) order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, u64)> {
        self.cells.iter().map(|((o, d), &c)| (o.as_str(), d.as_str(), c))
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.cells.values().sum()
    }

    /// Trips whose origin and destination differ.
    pub fn off_diagonal_total(&self) -> u64 {
        self.iter().filter(|(o, d, _)| o != d).map(|(_, _, c)| c).sum()
    }

    pub fn require(&self, granularity: Granularity) -> Result<()> {
        if self.granularity != granularity {
            return Err(Error::GranularityMismatch {
                expected: granularity,
                found: self.granularity,
            });
        }
        Ok(())
    }
}

/// Counts trips per (origin, destination). Every trip is assumed to be
/// dated `date`.
pub fn build_daily_od(trips: &[Trip], date: NaiveDate) -> DailyOd {
    let mut counts: HashMap<(&Arc<str>, &Arc<str>), u64> = HashMap::new();
    for t in trips {
        *counts.entry((&t.origin, &t.destination)).or_insert(0) += 1;
    }
    let cells = counts
        .into_iter()
        .filter(|((o, d), _)| o != d)
        .map(|((o, d), c)| ((o.to_string(), d.to_string()), c))
        .collect();
    DailyOd {
        date,
        granularity: Granularity::Municipality,
        cells,
    }
}

/// Re-keys every cell through `map` and sums colliding cells. Unmapped ids
/// are a hard error.
pub fn aggregate_with<F>(od: &DailyOd, target: Granularity, map: F) -> Result<DailyOd>
where
    F: Fn(&str) -> Option<String>,
{
    let mut out = DailyOd::new(od.date, target);
    let mut cache: HashMap<&str, String> = HashMap::new();
    let mut lookup = |id| -> Result<String> {
        if let Some(p) = cache.get(id) {
            return Ok(p.clone());
        }
        let p = map(id).ok_or_else(|| Error::UnmappedMunicipality(id.to_owned()))?;
        cache.insert(id, p.clone());
        Ok(p)
    };
    for (o, d, c) in od.iter() {
        let key = (lookup(o)?, lookup(d)?);
        *out.cells.entry(key).or_insert(0) += c;
    }
    Ok(out)
}

/// Sums municipality cells into province cells. Intra-province trips land
/// on the province's self-loop.
pub fn aggregate_to_province(od: &DailyOd, index: &TerritoryIndex) -> Result<DailyOd> {
    match od.granularity {
        Granularity::Province => Ok(od.clone()),
        Granularity::Municipality => {
            aggregate_with(od, Granularity::Province, |m| index.province_of(m).cloned())
        }
    }
}

/// Element-wise sum of matrices of one granularity, dated `date`.
pub fn sum_matrices<'a, I>(ods: I, date: NaiveDate, granularity: Granularity) -> Result<DailyOd>
where
    I: IntoIterator<Item = &'a DailyOd>,
{
    let mut out = DailyOd::new(date, granularity);
    for od in ods {
        od.require(granularity)?;
        for ((o, d), c) in &od.cells {
            *out.cells.entry((o.clone(), d.clone())).or_insert(0) += c;
        }
    }
    Ok(out)
}
