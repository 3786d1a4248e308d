//! Timestamp parsing and calendar-day windows.

use chrono::{DateTime, Datelike, NaiveDate, NaiveDateTime, TimeZone, Weekday};
pub use chrono_tz::Tz;

pub const DEFAULT_TIMEZONE: Tz = chrono_tz::Europe::Rome;

/// How a timestamp column is encoded. Detected from the first value seen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimestampFormat {
    EpochSeconds,
    Iso8601,
}

impl TimestampFormat {
    pub fn detect(raw: &str) -> Option<Self> {
        let raw = raw.trim();
        if raw.parse::<i64>().is_ok() {
            Some(Self::EpochSeconds)
        } else if parse_iso(raw).is_some() {
            Some(Self::Iso8601)
        } else {
            None
        }
    }

    pub fn parse(self, raw: &str) -> Option<i64> {
        let raw = raw.trim();
        match self {
            Self::EpochSeconds => raw.parse().ok(),
            Self::Iso8601 => parse_iso(raw),
        }
    }
}

/// RFC 3339 with offset, or a naive date-time interpreted as UTC.
fn parse_iso(raw: &str) -> Option<i64> {
    if let Ok(dt) = DateTime::parse_from_rfc3339(raw) {
        return Some(dt.timestamp());
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(raw, fmt) {
            return Some(dt.and_utc().timestamp());
        }
    }
    None
}

/// Calendar day of an epoch timestamp in `tz`.
pub fn local_date(ts: i64, tz: Tz) -> NaiveDate {
    let utc = DateTime::from_timestamp(ts, 0).unwrap_or_default();
    utc.with_timezone(&tz).date_naive()
}

/// Epoch seconds of `date` at `hour:minute` local time. Ambiguous times
/// (DST fall-back) resolve to the earlier instant; skipped ones roll forward.
pub fn local_timestamp(date: NaiveDate, seconds_of_day: u32, tz: Tz) -> i64 {
    let naive = date.and_hms_opt(0, 0, 0).unwrap() + chrono::Duration::seconds(seconds_of_day as i64);
    match tz.from_local_datetime(&naive) {
        chrono::LocalResult::Single(dt) => dt.timestamp(),
        chrono::LocalResult::Ambiguous(a, _) => a.timestamp(),
        chrono::LocalResult::None => {
            let later = naive + chrono::Duration::hours(1);
            tz.from_local_datetime(&later).earliest().map(|d| d.timestamp()).unwrap_or(0)
        }
    }
}

pub fn is_weekend(date: NaiveDate) -> bool {
    matches!(date.weekday(), Weekday::Sat | Weekday::Sun)
}

pub fn parse_timezone(name: &str) -> Option<Tz> {
    name.parse().ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detects_formats() {
        assert_eq!(TimestampFormat::detect("1583020800"), Some(TimestampFormat::EpochSeconds));
        assert_eq!(TimestampFormat::detect("2020-03-01T00:00:00Z"), Some(TimestampFormat::Iso8601));
        assert_eq!(TimestampFormat::detect("2020-03-01 00:00:00"), Some(TimestampFormat::Iso8601));
        assert_eq!(TimestampFormat::detect("yesterday"), None);
        assert_eq!(
            TimestampFormat::Iso8601.parse("2020-03-01T01:00:00+01:00"),
            Some(1_583_020_800)
        );
    }

    #[test]
    fn rome_day_boundary() {
        // 2020-03-01T23:30:00Z is already March 2nd in Rome (UTC+1).
        let ts = TimestampFormat::Iso8601.parse("2020-03-01T23:30:00Z").unwrap();
        assert_eq!(local_date(ts, DEFAULT_TIMEZONE), NaiveDate::from_ymd_opt(2020, 3, 2).unwrap());
        let midnight = local_timestamp(NaiveDate::from_ymd_opt(2020, 3, 2).unwrap(), 0, DEFAULT_TIMEZONE);
        assert_eq!(midnight, ts - 30 * 60);
    }
}
