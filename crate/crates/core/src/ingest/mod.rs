//! Record ingestion: CDR/XDR parsing into a unified event stream and
//! dwell-validated trip extraction.

mod parse;
mod trips;

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::territory::TerritoryIndex;

pub use parse::{
    parse_records, read_cdr_file, read_xdr_file, write_cdr_file, write_registry_file,
    write_xdr_file, FileTally, ParsedRecords,
};
pub use trips::{extract_trips, trips_by_day, DEFAULT_DWELL_SECONDS};

/// One phone call, as logged for the caller.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CdrRecord {
    pub caller_id: String,
    pub callee_id: String,
    pub timestamp: i64,
    pub antenna_start: String,
    pub antenna_end: String,
    pub duration_min: u32,
}

/// One data session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct XdrRecord {
    pub user_id: String,
    pub timestamp: i64,
    pub antenna: String,
    pub kilobytes: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Antenna {
    pub lat: f64,
    pub lon: f64,
    pub municipality: Arc<str>,
    pub province: Arc<str>,
}

/// Immutable antenna → (position, municipality, province) table.
#[derive(Debug, Clone, Default)]
pub struct AntennaRegistry {
    entries: BTreeMap<String, Antenna>,
    municipalities: BTreeMap<String, (Arc<str>, Arc<str>)>,
    provinces: BTreeMap<String, Arc<str>>,
}

impl AntennaRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds an antenna, checking coordinates and that the municipality is
    /// not already assigned to a different province.
    pub fn insert(
        &mut self,
        antenna_id: impl Into<String>,
        lat: f64,
        lon: f64,
        municipality: &str,
        province: &str,
    ) -> Result<()> {
        let antenna_id = antenna_id.into();
        if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
            return Err(Error::InvalidArgument(format!(
                "antenna `{antenna_id}` has coordinates out of range ({lat}, {lon})"
            )));
        }
        let (municipality, province) = match self.municipalities.get(municipality) {
            Some((_, p)) if &**p != province => {
                return Err(Error::ConflictingProvince {
                    municipality: municipality.to_owned(),
                    first: p.to_string(),
                    second: province.to_owned(),
                })
            }
            Some((m, p)) => (m.clone(), p.clone()),
            None => {
                let p = self
                    .provinces
                    .entry(province.to_owned())
                    .or_insert_with(|| Arc::from(province))
                    .clone();
                let m: Arc<str> = Arc::from(municipality);
                self.municipalities
                    .insert(municipality.to_owned(), (m.clone(), p.clone()));
                (m, p)
            }
        };
        self.entries.insert(
            antenna_id,
            Antenna {
                lat,
                lon,
                municipality,
                province,
            },
        );
        Ok(())
    }

    pub fn get(&self, antenna_id: &str) -> Option<&Antenna> {
        self.entries.get(antenna_id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Antenna)> {
        self.entries.iter()
    }

    pub fn territory(&self) -> TerritoryIndex {
        TerritoryIndex::from_pairs(
            self.municipalities
                .iter()
                .map(|(m, (_, p))| (m.clone(), p.to_string())),
        )
        .expect("registry enforces one province per municipality")
    }

    pub fn load(path: &Path) -> Result<Self> {
        parse::read_registry_file(path)
    }
}

/// A user observed in a municipality at a point in time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordEvent {
    pub user_id: Arc<str>,
    pub timestamp: i64,
    pub municipality: Arc<str>,
    pub province: Arc<str>,
}

/// A dwell-validated move between two municipalities.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trip {
    pub user_id: Arc<str>,
    pub origin: Arc<str>,
    pub destination: Arc<str>,
    pub departure_time: i64,
    pub arrival_time: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IngestOptions {
    /// Seconds per unit of the CDR `duration` column.
    pub duration_unit_secs: i64,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            duration_unit_secs: 60,
        }
    }
}

/// Events produced by one call: the caller at the start antenna at `t` and
/// at the end antenna at `t + duration`. The callee's location is not part
/// of the record. `None` if either antenna is unregistered.
pub fn cdr_events(
    rec: &CdrRecord,
    caller: Arc<str>,
    registry: &AntennaRegistry,
    opts: &IngestOptions,
) -> Option<[RecordEvent; 2]> {
    let start = registry.get(&rec.antenna_start)?;
    let end = registry.get(&rec.antenna_end)?;
    Some([
        RecordEvent {
            user_id: caller.clone(),
            timestamp: rec.timestamp,
            municipality: start.municipality.clone(),
            province: start.province.clone(),
        },
        RecordEvent {
            user_id: caller,
            timestamp: rec.timestamp + rec.duration_min as i64 * opts.duration_unit_secs,
            municipality: end.municipality.clone(),
            province: end.province.clone(),
        },
    ])
}

pub fn xdr_event(rec: &XdrRecord, user: Arc<str>, registry: &AntennaRegistry) -> Option<RecordEvent> {
    let a = registry.get(&rec.antenna)?;
    Some(RecordEvent {
        user_id: user,
        timestamp: rec.timestamp,
        municipality: a.municipality.clone(),
        province: a.province.clone(),
    })
}

/// Groups events by user and orders each user's events by time. The sort is
/// stable, so equal timestamps keep their input order.
pub fn sort_events(events: &mut [RecordEvent]) {
    events.sort_by(|a, b| {
        a.user_id
            .cmp(&b.user_id)
            .then(a.timestamp.cmp(&b.timestamp))
    });
}

/// Converts in-memory records into the sorted event stream. Records with
/// unknown antennas are skipped and counted in the returned tally.
pub fn events_from_records(
    cdr: &[CdrRecord],
    xdr: &[XdrRecord],
    registry: &AntennaRegistry,
    opts: &IngestOptions,
) -> (Vec<RecordEvent>, u64) {
    let mut interner = parse::Interner::default();
    let mut events = Vec::with_capacity(cdr.len() * 2 + xdr.len());
    let mut rejected = 0;
    for rec in cdr {
        match cdr_events(rec, interner.get(&rec.caller_id), registry, opts) {
            Some(pair) => events.extend(pair),
            None => rejected += 1,
        }
    }
    for rec in xdr {
        match xdr_event(rec, interner.get(&rec.user_id), registry) {
            Some(ev) => events.push(ev),
            None => rejected += 1,
        }
    }
    sort_events(&mut events);
    (events, rejected)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn registry() -> AntennaRegistry {
        let mut r = AntennaRegistry::new();
        r.insert("A7", 45.0, 9.0, "M3", "P1").unwrap();
        r.insert("A9", 45.1, 9.1, "M4", "P1").unwrap();
        r
    }

    #[test]
    fn xdr_maps_fields() {
        let rec = XdrRecord {
            user_id: "u1".into(),
            timestamp: 1000,
            antenna: "A7".into(),
            kilobytes: 512,
        };
        let (events, rejected) = events_from_records(&[], &[rec], &registry(), &IngestOptions::default());
        assert_eq!(rejected, 0);
        assert_eq!(events.len(), 1);
        assert_eq!((&*events[0].user_id, events[0].timestamp, &*events[0].municipality), ("u1", 1000, "M3"));
    }

    #[test]
    fn cdr_yields_caller_start_and_end() {
        let rec = CdrRecord {
            caller_id: "u1".into(),
            callee_id: "u2".into(),
            timestamp: 1000,
            antenna_start: "A7".into(),
            antenna_end: "A9".into(),
            duration_min: 5,
        };
        let (events, _) = events_from_records(&[rec], &[], &registry(), &IngestOptions::default());
        let got: Vec<_> = events
            .iter()
            .map(|e| (&*e.user_id, e.timestamp, &*e.municipality))
            .collect();
        assert_eq!(got, vec![("u1", 1000, "M3"), ("u1", 1300, "M4")]);
    }

    #[test]
    fn unknown_antenna_rejects_whole_record() {
        let rec = CdrRecord {
            caller_id: "u1".into(),
            callee_id: "u2".into(),
            timestamp: 1000,
            antenna_start: "A7".into(),
            antenna_end: "A99".into(),
            duration_min: 1,
        };
        let (events, rejected) = events_from_records(&[rec], &[], &registry(), &IngestOptions::default());
        assert!(events.is_empty());
        assert_eq!(rejected, 1);
    }

    #[test]
    fn registry_rejects_bad_coordinates_and_conflicts() {
        let mut r = registry();
        assert!(r.insert("B1", 91.0, 0.0, "M5", "P1").is_err());
        assert!(r.insert("B2", 0.0, -181.0, "M5", "P1").is_err());
        assert!(matches!(
            r.insert("B3", 0.0, 0.0, "M3", "P2"),
            Err(Error::ConflictingProvince { .. })
        ));
        r.insert("B4", 0.0, 0.0, "M3", "P1").unwrap();
        assert_eq!(r.territory().municipality_count(), 2);
    }

    #[test]
    fn sort_is_stable_on_ties() {
        let reg = registry();
        let xdr = vec![
            XdrRecord { user_id: "b".into(), timestamp: 5, antenna: "A7".into(), kilobytes: 0 },
            XdrRecord { user_id: "a".into(), timestamp: 5, antenna: "A9".into(), kilobytes: 0 },
            XdrRecord { user_id: "a".into(), timestamp: 5, antenna: "A7".into(), kilobytes: 0 },
            XdrRecord { user_id: "a".into(), timestamp: 1, antenna: "A7".into(), kilobytes: 0 },
        ];
        let (events, _) = events_from_records(&[], &xdr, &reg, &IngestOptions::default());
        let got: Vec<_> = events
            .iter()
            .map(|e| (&*e.user_id, e.timestamp, &*e.municipality))
            .collect();
        assert_eq!(got, vec![("a", 1, "M3"), ("a", 5, "M4"), ("a", 5, "M3"), ("b", 5, "M3")]);
    }
}
