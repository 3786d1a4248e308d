use std::collections::HashMap;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use super::{cdr_events, sort_events, xdr_event, AntennaRegistry, CdrRecord, IngestOptions, RecordEvent, XdrRecord};
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::time::TimestampFormat;

const CDR_COLUMNS: [&str; 6] = [
    "caller_id",
    "callee_id",
    "timestamp",
    "antenna_start",
    "antenna_end",
    "duration_min",
];
const XDR_COLUMNS: [&str; 4] = ["user_id", "timestamp", "antenna", "kilobytes"];
const REGISTRY_COLUMNS: [&str; 5] = ["antenna_id", "lat", "lon", "municipality_id", "province_id"];

/// Per-file rejection counts.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct FileTally {
    pub path: PathBuf,
    pub accepted: u64,
    pub unknown_antenna: u64,
    pub malformed: u64,
}

impl FileTally {
    pub fn rejected(&self) -> u64 {
        self.unknown_antenna + self.malformed
    }
}

#[derive(Debug, Default)]
pub struct ParsedRecords {
    /// Grouped by user, each user's events in time order.
    pub events: Vec<RecordEvent>,
    pub tallies: Vec<FileTally>,
}

impl ParsedRecords {
    pub fn total_rejected(&self) -> u64 {
        self.tallies.iter().map(FileTally::rejected).sum()
    }

    /// Slices of the event stream, one per user.
    pub fn by_user(&self) -> impl Iterator<Item = &[RecordEvent]> {
        self.events.chunk_by(|a, b| a.user_id == b.user_id)
    }
}

#[derive(Default)]
pub(crate) struct Interner(HashMap<String, Arc<str>>);

impl Interner {
    pub(crate) fn get(&mut self, s: &str) -> Arc<str> {
        if let Some(v) = self.0.get(s) {
            return v.clone();
        }
        let v: Arc<str> = Arc::from(s);
        self.0.insert(s.to_owned(), v.clone());
        v
    }
}

struct Table {
    path: PathBuf,
    reader: csv::Reader<BufReader<File>>,
    columns: Vec<usize>,
}

impl Table {
    fn open(path: &Path, required: &[&str]) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = csv::ReaderBuilder::new()
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(BufReader::new(file));
        let headers = reader.headers().map_err(|e| Error::csv(path, e))?.clone();
        let columns = required
            .iter()
            .map(|name| {
                headers
                    .iter()
                    .position(|h| h == *name)
                    .ok_or_else(|| Error::MissingColumn {
                        path: path.to_owned(),
                        column: (*name).to_owned(),
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            path: path.to_owned(),
            reader,
            columns,
        })
    }

    /// Calls `row` with the required fields in declared order, or `None`
    /// for a line that cannot be split into them.
    fn for_each<F>(mut self, mut row: F) -> Result<()>
    where
        F: FnMut(Option<(u64, Vec<&str>)>),
    {
        let mut record = csv::StringRecord::new();
        loop {
            match self.reader.read_record(&mut record) {
                Ok(false) => return Ok(()),
                Ok(true) => {
                    let line = record.position().map(|p| p.line()).unwrap_or(0);
                    let fields: Option<Vec<&str>> =
                        self.columns.iter().map(|&i| record.get(i)).collect();
                    row(fields.map(|f| (line, f)));
                }
                Err(e) if matches!(e.kind(), csv::ErrorKind::Utf8 { .. }) => row(None),
                Err(e) => return Err(Error::csv(&self.path, e)),
            }
        }
    }
}

/// Lazily detected timestamp encoding for one column.
#[derive(Default)]
struct TimestampColumn(Option<TimestampFormat>);

impl TimestampColumn {
    fn parse(&mut self, raw: &str) -> Option<i64> {
        let fmt = match self.0 {
            Some(f) => f,
            None => {
                let f = TimestampFormat::detect(raw)?;
                self.0 = Some(f);
                f
            }
        };
        fmt.parse(raw)
    }
}

fn parse_cdr_row(fields: &[&str], ts: &mut TimestampColumn) -> Option<CdrRecord> {
    let [caller, callee, t, a_s, a_e, d] = fields else {
        return None;
    };
    if caller.is_empty() || a_s.is_empty() || a_e.is_empty() {
        return None;
    }
    Some(CdrRecord {
        caller_id: (*caller).to_owned(),
        callee_id: (*callee).to_owned(),
        timestamp: ts.parse(t)?,
        antenna_start: (*a_s).to_owned(),
        antenna_end: (*a_e).to_owned(),
        duration_min: d.parse().ok()?,
    })
}

fn parse_xdr_row(fields: &[&str], ts: &mut TimestampColumn) -> Option<XdrRecord> {
    let [user, t, antenna, kb] = fields else {
        return None;
    };
    if user.is_empty() || antenna.is_empty() {
        return None;
    }
    Some(XdrRecord {
        user_id: (*user).to_owned(),
        timestamp: ts.parse(t)?,
        antenna: (*antenna).to_owned(),
        kilobytes: kb.parse().ok()?,
    })
}

/// Reads a CDR file into records; malformed lines are counted, not fatal.
pub fn read_cdr_file(path: &Path) -> Result<(Vec<CdrRecord>, FileTally)> {
    let mut out = Vec::new();
    let mut tally = FileTally {
        path: path.to_owned(),
        ..Default::default()
    };
    let mut ts = TimestampColumn::default();
    Table::open(path, &CDR_COLUMNS)?.for_each(|row| {
        match row.and_then(|(_, f)| parse_cdr_row(&f, &mut ts)) {
            Some(r) => out.push(r),
            None => tally.malformed += 1,
        }
    })?;
    Ok((out, tally))
}

pub fn read_xdr_file(path: &Path) -> Result<(Vec<XdrRecord>, FileTally)> {
    let mut out = Vec::new();
    let mut tally = FileTally {
        path: path.to_owned(),
        ..Default::default()
    };
    let mut ts = TimestampColumn::default();
    Table::open(path, &XDR_COLUMNS)?.for_each(|row| {
        match row.and_then(|(_, f)| parse_xdr_row(&f, &mut ts)) {
            Some(r) => out.push(r),
            None => tally.malformed += 1,
        }
    })?;
    Ok((out, tally))
}

pub(crate) fn read_registry_file(path: &Path) -> Result<AntennaRegistry> {
    let mut registry = AntennaRegistry::new();
    let mut failure = None;
    Table::open(path, &REGISTRY_COLUMNS)?.for_each(|row| {
        if failure.is_some() {
            return;
        }
        let outcome = match row {
            None => Err("unreadable line".to_owned()),
            Some((line, f)) => {
                let parsed = f[1].parse::<f64>().ok().zip(f[2].parse::<f64>().ok());
                match parsed {
                    None => Err(format!("line {line}: bad coordinates")),
                    Some((lat, lon)) => registry
                        .insert(f[0], lat, lon, f[3], f[4])
                        .map_err(|e| format!("line {line}: {e}")),
                }
            }
        };
        if let Err(message) = outcome {
            failure = Some(message);
        }
    })?;
    match failure {
        Some(message) => Err(Error::InvalidRow {
            path: path.to_owned(),
            line: 0,
            message,
        }),
        None => Ok(registry),
    }
}

enum Source<'a> {
    Cdr(&'a Path),
    Xdr(&'a Path),
}

/// Parses CDR and XDR files into one event stream grouped by user and
/// sorted by time. Files are read in parallel; event order among equal
/// timestamps follows input order (CDR files first, then XDR files, each
/// in the order given).
pub fn parse_records<P: AsRef<Path> + Sync>(
    cdr_files: &[P],
    xdr_files: &[P],
    registry: &AntennaRegistry,
    opts: &IngestOptions,
) -> Result<ParsedRecords> {
    let sources: Vec<Source> = cdr_files
        .iter()
        .map(|p| Source::Cdr(p.as_ref()))
        .chain(xdr_files.iter().map(|p| Source::Xdr(p.as_ref())))
        .collect();
    let per_file = sources
        .par_iter()
        .map(|src| -> Result<(Vec<RecordEvent>, FileTally)> {
            let mut interner = Interner::default();
            let mut events = Vec::new();
            let tally = match src {
                Source::Cdr(path) => {
                    let (records, mut tally) = read_cdr_file(path)?;
                    for r in &records {
                        match cdr_events(r, interner.get(&r.caller_id), registry, opts) {
                            Some(pair) => {
                                events.extend(pair);
                                tally.accepted += 1;
                            }
                            None => tally.unknown_antenna += 1,
                        }
                    }
                    tally
                }
                Source::Xdr(path) => {
                    let (records, mut tally) = read_xdr_file(path)?;
                    for r in &records {
                        match xdr_event(r, interner.get(&r.user_id), registry) {
                            Some(e) => {
                                events.push(e);
                                tally.accepted += 1;
                            }
                            None => tally.unknown_antenna += 1,
                        }
                    }
                    tally
                }
            };
            Ok((events, tally))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut parsed = ParsedRecords::default();
    parsed.events.reserve(per_file.iter().map(|(e, _)| e.len()).sum());
    for (events, tally) in per_file {
        if tally.rejected() > 0 {
            log::warn!(
                "{}: rejected {} records ({} unknown antenna, {} malformed)",
                tally.path.display(),
                tally.rejected(),
                tally.unknown_antenna,
                tally.malformed
            );
        }
        parsed.events.extend(events);
        parsed.tallies.push(tally);
    }
    sort_events(&mut parsed.events);
    Ok(parsed)
}

pub fn write_cdr_file(path: &Path, records: &[CdrRecord]) -> Result<()> {
    write_atomic(path, |w| {
        writeln!(w, "{}", CDR_COLUMNS.join(","))?;
        for r in records {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                r.caller_id, r.callee_id, r.timestamp, r.antenna_start, r.antenna_end, r.duration_min
            )?;
        }
        Ok(())
    })
}

pub fn write_xdr_file(path: &Path, records: &[XdrRecord]) -> Result<()> {
    write_atomic(path, |w| {
        writeln!(w, "{}", XDR_COLUMNS.join(","))?;
        for r in records {
            writeln!(w, "{},{},{},{}", r.user_id, r.timestamp, r.antenna, r.kilobytes)?;
        }
        Ok(())
    })
}

pub fn write_registry_file(path: &Path, registry: &AntennaRegistry) -> Result<()> {
    write_atomic(path, |w| {
        writeln!(w, "{}", REGISTRY_COLUMNS.join(","))?;
        for (id, a) in registry.iter() {
            writeln!(w, "{},{:.6},{:.6},{},{}", id, a.lat, a.lon, a.municipality, a.province)?;
        }
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn registry() -> AntennaRegistry {
        let mut r = AntennaRegistry::new();
        r.insert("A7", 45.0, 9.0, "M3", "P1").unwrap();
        r.insert("A9", 45.1, 9.1, "M4", "P1").unwrap();
        r
    }

    #[test]
    fn parses_mixed_files_with_rejections() {
        let dir = tempfile::tempdir().unwrap();
        let cdr = dir.path().join("cdr.csv");
        let xdr = dir.path().join("xdr.csv");
        fs::write(
            &cdr,
            "caller_id,callee_id,timestamp,antenna_start,antenna_end,duration_min\n\
             u1,u2,1000,A7,A9,5\n\
             u1,u2,2000,A99,A9,5\n\
             u1,u2,notatime,A7,A9,5\n\
             u3,u2,3000,A7,A7\n",
        )
        .unwrap();
        fs::write(
            &xdr,
            "user_id,timestamp,antenna,kilobytes\n\
             u1,1100,A7,512\n\
             u2,900,A9,-4\n",
        )
        .unwrap();
        let parsed = parse_records(&[&cdr], &[&xdr], &registry(), &IngestOptions::default()).unwrap();
        let got: Vec<_> = parsed
            .events
            .iter()
            .map(|e| (&*e.user_id, e.timestamp, &*e.municipality))
            .collect();
        assert_eq!(got, vec![("u1", 1000, "M3"), ("u1", 1100, "M3"), ("u1", 1300, "M4")]);
        assert_eq!(parsed.tallies[0].accepted, 1);
        assert_eq!(parsed.tallies[0].unknown_antenna, 1);
        assert_eq!(parsed.tallies[0].malformed, 2);
        assert_eq!(parsed.tallies[1].malformed, 1);
        assert_eq!(parsed.total_rejected(), 4);
    }

    #[test]
    fn iso_timestamps_and_column_order() {
        let dir = tempfile::tempdir().unwrap();
        let xdr = dir.path().join("xdr.csv");
        fs::write(
            &xdr,
            "kilobytes,antenna,timestamp,user_id\n\
             1,A7,2020-03-01T00:00:00Z,u1\n\
             1,A7,1583020800,u1\n",
        )
        .unwrap();
        let (recs, tally) = read_xdr_file(&xdr).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].timestamp, 1_583_020_800);
        // Format is locked to the first value seen in the column.
        assert_eq!(tally.malformed, 1);
    }

    #[test]
    fn missing_column_is_fatal() {
        let dir = tempfile::tempdir().unwrap();
        let xdr = dir.path().join("xdr.csv");
        fs::write(&xdr, "user_id,timestamp,kilobytes\nu1,1,2\n").unwrap();
        assert!(matches!(read_xdr_file(&xdr), Err(Error::MissingColumn { .. })));
    }

    #[test]
    fn registry_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("registry.csv");
        write_registry_file(&path, &registry()).unwrap();
        let back = AntennaRegistry::load(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(&*back.get("A9").unwrap().municipality, "M4");
        assert_eq!(back.territory(), registry().territory());
    }

    #[test]
    fn registry_file_bad_row_is_fatal() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("registry.csv");
        fs::write(&path, "antenna_id,lat,lon,municipality_id,province_id\nA1,100,0,M1,P1\n").unwrap();
        assert!(matches!(AntennaRegistry::load(&path), Err(Error::InvalidRow { .. })));
    }
}
