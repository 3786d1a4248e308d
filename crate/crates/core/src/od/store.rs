//! Flat-file OD persistence: `od/<granularity>/<YYYY-MM-DD>.csv` plus a
//! per-granularity `manifest.json`.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::{DailyOd, Granularity};
use crate::error::{Error, Result};
use crate::io::{read_json, write_atomic, write_json};

pub const SCHEMA_VERSION: u32 = 1;
const HEADER: &str = "origin,destination,count";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct Manifest {
    schema_version: u32,
    granularity: Granularity,
    dates: BTreeSet<NaiveDate>,
    territory_checksum: String,
}

/// Handle on an OD directory tied to one territory. Stores for different
/// days may run concurrently; manifest updates are serialized.
#[derive(Debug)]
pub struct OdStore {
    root: PathBuf,
    territory_checksum: String,
    manifest_lock: Mutex<()>,
}

impl OdStore {
    pub fn open(root: impl Into<PathBuf>, territory_checksum: impl Into<String>) -> Self {
        Self {
            root: root.into(),
            territory_checksum: territory_checksum.into(),
            manifest_lock: Mutex::new(()),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn dir(&self, granularity: Granularity) -> PathBuf {
        self.root.join("od").join(granularity.as_str())
    }

    pub fn path_for(&self, date: NaiveDate, granularity: Granularity) -> PathBuf {
        self.dir(granularity).join(format!("{}.csv", date.format("%Y-%m-%d")))
    }

    fn read_manifest(&self, granularity: Granularity) -> Result<Option<Manifest>> {
        let path = self.dir(granularity).join("manifest.json");
        if !path.exists() {
            return Ok(None);
        }
        let raw: serde_json::Value = read_json(&path)?;
        let version = raw.get("schema_version").and_then(|v| v.as_u64());
        if version != Some(SCHEMA_VERSION as u64) {
            return Err(Error::SchemaVersion {
                path,
                found: raw
                    .get("schema_version")
                    .map(|v| v.to_string())
                    .unwrap_or_else(|| "none".into()),
                expected: SCHEMA_VERSION.to_string(),
            });
        }
        let manifest: Manifest = serde_json::from_value(raw).map_err(|e| Error::json(&path, e))?;
        if manifest.territory_checksum != self.territory_checksum {
            return Err(Error::TerritoryMismatch {
                stored: manifest.territory_checksum,
                requested: self.territory_checksum.clone(),
            });
        }
        Ok(Some(manifest))
    }

    /// Writes one day's matrix (temp file + rename) and records it in the
    /// manifest. Returns the matrix file path.
    pub fn store(&self, od: &DailyOd) -> Result<PathBuf> {
        let path = self.path_for(od.date, od.granularity);
        write_atomic(&path, |w| {
            writeln!(w, "{HEADER}")?;
            for (o, d, c) in od.iter() {
                writeln!(w, "{o},{d},{c}")?;
            }
            Ok(())
        })?;
        let _guard = self.manifest_lock.lock().unwrap_or_else(|e| e.into_inner());
        let mut manifest = self.read_manifest(od.granularity)?.unwrap_or_else(|| Manifest {
            schema_version: SCHEMA_VERSION,
            granularity: od.granularity,
            dates: BTreeSet::new(),
            territory_checksum: self.territory_checksum.clone(),
        });
        if manifest.dates.insert(od.date) {
            write_json(&self.dir(od.granularity).join("manifest.json"), &manifest)?;
        }
        Ok(path)
    }

    pub fn load(&self, date: NaiveDate, granularity: Granularity) -> Result<DailyOd> {
        let manifest = self.read_manifest(granularity)?;
        if !manifest.is_some_and(|m| m.dates.contains(&date)) {
            return Err(Error::NotFound { date, granularity });
        }
        let path = self.path_for(date, granularity);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(Error::NotFound { date, granularity })
            }
            Err(e) => return Err(Error::io(&path, e)),
        };
        let mut lines = text.lines();
        let header = lines.next().unwrap_or_default();
        if header != HEADER {
            return Err(Error::SchemaVersion {
                path,
                found: header.to_owned(),
                expected: HEADER.to_owned(),
            });
        }
        let mut od = DailyOd::new(date, granularity);
        for (i, line) in lines.enumerate() {
            let bad = |message: &str| Error::InvalidRow {
                path: path.clone(),
                line: i as u64 + 2,
                message: message.to_owned(),
            };
            let mut parts = line.rsplitn(2, ',');
            let count = parts
                .next()
                .and_then(|c| c.parse::<u64>().ok())
                .ok_or_else(|| bad("bad count"))?;
            let (o, d) = parts
                .next()
                .and_then(|rest| rest.split_once(','))
                .ok_or_else(|| bad("expected origin,destination,count"))?;
            if count == 0 {
                return Err(bad("zero count stored"));
            }
            od.add(o, d, count).map_err(|e| bad(&e.to_string()))?;
        }
        Ok(od)
    }

    /// Stored dates, ascending.
    pub fn dates(&self, granularity: Granularity) -> Result<Vec<NaiveDate>> {
        Ok(self
            .read_manifest(granularity)?
            .map(|m| m.dates.into_iter().collect())
            .unwrap_or_default())
    }

    /// Every stored matrix with `from <= date <= to`, in date order.
    pub fn load_range(
        &self,
        granularity: Granularity,
        from: Option<NaiveDate>,
        to: Option<NaiveDate>,
    ) -> Result<Vec<DailyOd>> {
        self.dates(granularity)?
            .into_iter()
            .filter(|d| from.is_none_or(|f| *d >= f) && to.is_none_or(|t| *d <= t))
            .map(|d| self.load(d, granularity))
            .collect()
    }
}
