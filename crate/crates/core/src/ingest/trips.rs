use std::collections::BTreeMap;

use chrono::NaiveDate;
use chrono_tz::Tz;
use rayon::prelude::*;

use super::{RecordEvent, Trip};
use crate::time::local_date;

/// Minimum stay at the destination for a move to count as a trip.
pub const DEFAULT_DWELL_SECONDS: i64 = 3600;

/// Extracts trips from an event stream grouped by user and sorted by time.
///
/// Every pair of consecutive events of a user in different municipalities
/// is a candidate trip. The dwell at the destination runs from the arrival
/// event to the user's next event in another municipality; a candidate is
/// kept iff the dwell reaches `dwell_threshold`. When the stream ends (or
/// the user changes) while still at the destination the dwell counts as
/// satisfied.
pub fn extract_trips(events: &[RecordEvent], dwell_threshold: i64) -> Vec<Trip> {
    let mut trips = Vec::new();
    for user_events in events.chunk_by(|a, b| a.user_id == b.user_id) {
        extract_user(user_events, dwell_threshold, &mut trips);
    }
    trips
}

fn extract_user(events: &[RecordEvent], dwell_threshold: i64, out: &mut Vec<Trip>) {
    let mut pending: Option<Trip> = None;
    for pair in events.windows(2) {
        let (prev, cur) = (&pair[0], &pair[1]);
        if prev.municipality == cur.municipality {
            continue;
        }
        // Leaving the pending candidate's destination ends its dwell.
        if let Some(trip) = pending.take() {
            if cur.timestamp - trip.arrival_time >= dwell_threshold {
                out.push(trip);
            }
        }
        pending = Some(Trip {
            user_id: cur.user_id.clone(),
            origin: prev.municipality.clone(),
            destination: cur.municipality.clone(),
            departure_time: prev.timestamp,
            arrival_time: cur.timestamp,
        });
    }
    out.extend(pending);
}

/// Cuts each user's events at local calendar-day boundaries in `tz` and
/// extracts trips within each day. Users are processed in parallel; the
/// per-day trip lists keep user order.
pub fn trips_by_day(events: &[RecordEvent], tz: Tz, dwell_threshold: i64) -> BTreeMap<NaiveDate, Vec<Trip>> {
    let users: Vec<&[RecordEvent]> = events.chunk_by(|a, b| a.user_id == b.user_id).collect();
    let per_user: Vec<Vec<(NaiveDate, Vec<Trip>)>> = users
        .par_iter()
        .map(|evs| {
            let mut days = Vec::new();
            let mut start = 0;
            while start < evs.len() {
                let day = local_date(evs[start].timestamp, tz);
                let mut end = start + 1;
                while end < evs.len() && local_date(evs[end].timestamp, tz) == day {
                    end += 1;
                }
                let mut trips = Vec::new();
                extract_user(&evs[start..end], dwell_threshold, &mut trips);
                if !trips.is_empty() {
                    days.push((day, trips));
                }
                start = end;
            }
            days
        })
        .collect();
    let mut by_day: BTreeMap<NaiveDate, Vec<Trip>> = BTreeMap::new();
    for (day, trips) in per_user.into_iter().flatten() {
        by_day.entry(day).or_default().extend(trips);
    }
    by_day
}
