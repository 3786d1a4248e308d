//! Synthetic CDR/XDR scenarios with known ground truth.
//!
//! Provinces sit on a grid, each split into communities of municipalities.
//! Every user has a home municipality and, unless working from home, a
//! fixed work place drawn from three tiers: same community, another
//! community of the same province (a bridge), or another province. On
//! weekdays users commute; on weekends they make leisure trips to freshly
//! drawn destinations. A regime schedule scales inter-province trips
//! (`flow_scale`), bridge trips (`bridge_scale`) and restricts weekend
//! inter-province leisure to the nearest fraction of provinces
//! (`weekend_concentration`).
//!
//! Daily event timelines keep at least an hour at every destination, except
//! for planted short visits, so the expected trip counts are exact.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::NaiveDate;
use chrono_tz::Tz;
use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{
    events_from_records, write_cdr_file, write_registry_file, write_xdr_file, AntennaRegistry,
    CdrRecord, IngestOptions, RecordEvent, XdrRecord, DEFAULT_DWELL_SECONDS,
};
use crate::io::write_json;
use crate::time::{is_weekend, local_timestamp, parse_timezone};

const GRID_SPACING: f64 = 0.5;
const MUNICIPALITY_RADIUS: f64 = 0.05;
const ORIGIN: (f64, f64) = (40.0, 10.0);
/// Added to distances in the gravity kernel w = pop / (d + offset)^γ.
const DISTANCE_OFFSET: f64 = 0.1;

const SAME_COMMUNITY: usize = 0;
const BRIDGE: usize = 1;
const OTHER_PROVINCE: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerritoryConfig {
    pub n_provinces: usize,
    pub municipalities_per_province: usize,
    #[serde(default = "default_communities")]
    pub communities_per_province: usize,
    #[serde(default = "default_antennas")]
    pub antennas_per_municipality: usize,
}

fn default_communities() -> usize {
    2
}

fn default_antennas() -> usize {
    2
}

/// Mobility regime in force from `start` until the next regime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Regime {
    pub start: NaiveDate,
    pub flow_scale: f64,
    pub bridge_scale: f64,
    pub weekend_concentration: f64,
}

impl Regime {
    fn baseline(start: NaiveDate) -> Self {
        Regime {
            start,
            flow_scale: 1.0,
            bridge_scale: 1.0,
            weekend_concentration: 1.0,
        }
    }

    fn scale(&self, tier: usize) -> f64 {
        match tier {
            BRIDGE => self.bridge_scale,
            OTHER_PROVINCE => self.flow_scale,
            _ => 1.0,
        }
    }
}

/// Trip-generation constants. Tier weights are (same community, bridge,
/// other province).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MobilityConfig {
    pub work_at_home: f64,
    pub commute_probability: f64,
    pub commute_tiers: [f64; 3],
    pub leisure_probability: f64,
    pub leisure_tiers: [f64; 3],
    pub commute_gamma: f64,
    pub leisure_gamma: f64,
}

impl Default for MobilityConfig {
    fn default() -> Self {
        MobilityConfig {
            work_at_home: 0.2,
            commute_probability: 0.9,
            commute_tiers: [0.6, 0.25, 0.15],
            leisure_probability: 0.6,
            leisure_tiers: [0.4, 0.2, 0.4],
            commute_gamma: 2.0,
            leisure_gamma: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub start_date: NaiveDate,
    pub days: u32,
    #[serde(default = "default_timezone")]
    pub timezone: String,
    pub territory: TerritoryConfig,
    pub population_per_municipality: u32,
    #[serde(default)]
    pub regimes: Vec<Regime>,
    /// Target out-flow diversity per planted group. Province `p` gets level
    /// `p mod k` and sends its inter-province trips uniformly to its
    /// round(N^level) nearest provinces.
    #[serde(default)]
    pub planted_cluster_levels: Option<Vec<f64>>,
    #[serde(default)]
    pub mobility: MobilityConfig,
    /// Share of trips that return home within the hour.
    #[serde(default)]
    pub short_visit_fraction: f64,
    /// Emit the evening return home. Without it each day records only the
    /// outbound trip.
    #[serde(default = "default_true")]
    pub record_returns: bool,
}

fn default_timezone() -> String {
    "Europe/Rome".into()
}

fn default_true() -> bool {
    true
}

impl ScenarioConfig {
    /// 20 provinces × 10 municipalities over 60 days from Monday
    /// 2020-02-10; from day 30 inter-province trips drop to 40%, bridges to
    /// 20% and weekend leisure shrinks to the nearest tenth of provinces.
    pub fn lockdown(seed: u64) -> Self {
        let start = NaiveDate::from_ymd_opt(2020, 2, 10).unwrap();
        ScenarioConfig {
            seed,
            start_date: start,
            days: 60,
            timezone: default_timezone(),
            territory: TerritoryConfig {
                n_provinces: 20,
                municipalities_per_province: 10,
                communities_per_province: 2,
                antennas_per_municipality: 2,
            },
            population_per_municipality: 50,
            regimes: vec![
                Regime::baseline(start),
                Regime {
                    start: start + chrono::Duration::days(30),
                    flow_scale: 0.4,
                    bridge_scale: 0.2,
                    weekend_concentration: 0.1,
                },
            ],
            planted_cluster_levels: None,
            mobility: MobilityConfig::default(),
            short_visit_fraction: 0.0,
            record_returns: true,
        }
    }

    /// Many small provinces whose out-flow diversity follows planted
    /// levels; every commuter works in another province.
    pub fn planted(seed: u64, n_provinces: usize, levels: Vec<f64>) -> Self {
        ScenarioConfig {
            seed,
            start_date: NaiveDate::from_ymd_opt(2020, 2, 3).unwrap(),
            days: 14,
            timezone: default_timezone(),
            territory: TerritoryConfig {
                n_provinces,
                municipalities_per_province: 2,
                communities_per_province: 1,
                antennas_per_municipality: 1,
            },
            population_per_municipality: 150,
            regimes: Vec::new(),
            planted_cluster_levels: Some(levels),
            mobility: MobilityConfig {
                work_at_home: 0.0,
                commute_tiers: [0.0, 0.0, 1.0],
                leisure_tiers: [0.0, 0.0, 1.0],
                ..MobilityConfig::default()
            },
            short_visit_fraction: 0.0,
            record_returns: false,
        }
    }

    pub fn dates(&self) -> Vec<NaiveDate> {
        (0..self.days)
            .map(|i| self.start_date + chrono::Duration::days(i as i64))
            .collect()
    }

    pub fn validate(&self) -> Result<Tz> {
        let bad = |msg: String| Err(Error::InvalidScenario(msg));
        let t = &self.territory;
        if self.population_per_municipality == 0 {
            return bad("population per municipality is zero".into());
        }
        if t.n_provinces == 0 || t.municipalities_per_province == 0 || t.antennas_per_municipality == 0 {
            return bad("territory must have provinces, municipalities and antennas".into());
        }
        if t.communities_per_province == 0 || t.communities_per_province > t.municipalities_per_province {
            return bad(format!(
                "communities per province must be in 1..={}",
                t.municipalities_per_province
            ));
        }
        if self.days == 0 {
            return bad("scenario has no days".into());
        }
        for w in self.regimes.windows(2) {
            if w[0].start >= w[1].start {
                return bad(format!("regime dates not increasing at {}", w[1].start));
            }
        }
        for r in &self.regimes {
            for (name, v) in [
                ("flow_scale", r.flow_scale),
                ("bridge_scale", r.bridge_scale),
                ("weekend_concentration", r.weekend_concentration),
            ] {
                if !(v > 0.0 && v <= 1.0) {
                    return bad(format!("{name} = {v} outside (0, 1] in regime starting {}", r.start));
                }
            }
        }
        if let Some(levels) = &self.planted_cluster_levels {
            if levels.is_empty() || levels.iter().any(|l| !(0.0..=1.0).contains(l)) {
                return bad("planted levels must be non-empty and within [0, 1]".into());
            }
            let mut sorted = levels.clone();
            sorted.sort_by(f64::total_cmp);
            if sorted.windows(2).any(|w| w[0] == w[1]) {
                return bad("planted levels must be distinct".into());
            }
        }
        let m = &self.mobility;
        let probs = [
            m.work_at_home,
            m.commute_probability,
            m.leisure_probability,
            self.short_visit_fraction,
        ];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return bad("probabilities must be within [0, 1]".into());
        }
        if m.commute_tiers.iter().chain(&m.leisure_tiers).any(|w| !(*w >= 0.0 && w.is_finite())) {
            return bad("tier weights must be finite and non-negative".into());
        }
        parse_timezone(&self.timezone)
            .ok_or_else(|| Error::InvalidScenario(format!("unknown timezone `{}`", self.timezone)))
    }

    /// Regime list covering every scenario day.
    fn effective_regimes(&self) -> Vec<Regime> {
        let mut out = Vec::new();
        if self.regimes.first().map_or(true, |r| r.start > self.start_date) {
            out.push(Regime::baseline(self.start_date));
        }
        out.extend(self.regimes.iter().cloned());
        out
    }

    /// First day of the last regime, when it starts inside the scenario.
    pub fn split_date(&self) -> Option<NaiveDate> {
        let last = self.regimes.last()?.start;
        let end = self.start_date + chrono::Duration::days(self.days as i64);
        (last > self.start_date && last < end).then_some(last)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DayTruth {
    pub date: NaiveDate,
    pub trips_zero_dwell: u64,
    /// Trips surviving the default dwell threshold.
    pub trips_min_dwell: u64,
    /// Trips between different provinces at the default dwell threshold.
    pub inter_province_trips: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub seed: u64,
    pub min_dwell_seconds: i64,
    pub split_date: Option<NaiveDate>,
    pub days: Vec<DayTruth>,
    /// Municipality → planted community.
    pub communities: BTreeMap<String, String>,
    /// Province → index into the planted levels.
    pub planted_levels: Option<BTreeMap<String, usize>>,
}

impl GroundTruth {
    /// Mean daily inter-province trips before and from the split date.
    pub fn inter_province_means(&self) -> Option<(f64, f64)> {
        let split = self.split_date?;
        let mean = |post: bool| {
            let v: Vec<u64> = self
                .days
                .iter()
                .filter(|d| (d.date >= split) == post)
                .map(|d| d.inter_province_trips)
                .collect();
            v.iter().sum::<u64>() as f64 / v.len().max(1) as f64
        };
        Some((mean(false), mean(true)))
    }
}

#[derive(Debug, Clone)]
pub struct DayRecords {
    pub date: NaiveDate,
    pub cdr: Vec<CdrRecord>,
    pub xdr: Vec<XdrRecord>,
}

#[derive(Debug, Clone)]
pub struct GeneratedScenario {
    pub config: ScenarioConfig,
    pub registry: AntennaRegistry,
    pub days: Vec<DayRecords>,
    pub ground_truth: GroundTruth,
}

impl GeneratedScenario {
    /// All records as one sorted event stream.
    pub fn events(&self) -> Vec<RecordEvent> {
        let cdr: Vec<CdrRecord> = self.days.iter().flat_map(|d| d.cdr.iter().cloned()).collect();
        let xdr: Vec<XdrRecord> = self.days.iter().flat_map(|d| d.xdr.iter().cloned()).collect();
        events_from_records(&cdr, &xdr, &self.registry, &IngestOptions::default()).0
    }

    /// Writes `registry.csv`, `cdr/<date>.csv`, `xdr/<date>.csv`,
    /// `ground_truth.json` and `scenario.json` under `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        for sub in ["cdr", "xdr"] {
            let p = dir.join(sub);
            std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        }
        write_registry_file(&dir.join("registry.csv"), &self.registry)?;
        self.days.par_iter().try_for_each(|d| -> Result<()> {
            write_cdr_file(&dir.join("cdr").join(format!("{}.csv", d.date)), &d.cdr)?;
            write_xdr_file(&dir.join("xdr").join(format!("{}.csv", d.date)), &d.xdr)
        })?;
        write_json(&dir.join("ground_truth.json"), &self.ground_truth)?;
        write_json(&dir.join("scenario.json"), &self.config)
    }
}

struct Municipality {
    id: String,
    province: usize,
    community: usize,
    pos: (f64, f64),
    antennas: Vec<String>,
}

struct Province {
    id: String,
    center: (f64, f64),
    municipalities: Vec<usize>,
}

struct Picker {
    items: Vec<usize>,
    dist: WeightedIndex<f64>,
}

impl Picker {
    fn new(weighted: Vec<(usize, f64)>) -> Option<Self> {
        let (items, weights): (Vec<usize>, Vec<f64>) = weighted.into_iter().filter(|(_, w)| *w > 0.0).unzip();
        let dist = WeightedIndex::new(&weights).ok()?;
        Some(Picker { items, dist })
    }

    fn uniform(items: Vec<usize>) -> Option<Self> {
        Self::new(items.into_iter().map(|i| (i, 1.0)).collect())
    }

    fn pick(&self, rng: &mut impl Rng) -> usize {
        self.items[self.dist.sample(rng)]
    }
}

fn distance(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

fn gravity(d: f64, mass: f64, gamma: f64) -> f64 {
    mass / (d + DISTANCE_OFFSET).powf(gamma)
}

/// Destination samplers for one distance exponent.
struct Tiers {
    same_community: Vec<Option<Picker>>,
    bridge: Vec<Option<Picker>>,
}

struct World {
    provinces: Vec<Province>,
    municipalities: Vec<Municipality>,
    communities: Vec<String>,
}

impl World {
    fn build(t: &TerritoryConfig) -> Self {
        let cols = (t.n_provinces as f64).sqrt().ceil() as usize;
        let mut provinces = Vec::new();
        let mut municipalities = Vec::new();
        let mut communities = Vec::new();
        let pw = digits(t.n_provinces);
        let mw = digits(t.municipalities_per_province);
        for p in 0..t.n_provinces {
            let center = (
                ORIGIN.0 + (p / cols) as f64 * GRID_SPACING,
                ORIGIN.1 + (p % cols) as f64 * GRID_SPACING,
            );
            let id = format!("P{p:0pw$}");
            let first_community = communities.len();
            for c in 0..t.communities_per_province {
                communities.push(format!("{id}-C{c}"));
            }
            let mut members = Vec::new();
            for j in 0..t.municipalities_per_province {
                let angle = std::f64::consts::TAU * j as f64 / t.municipalities_per_province as f64;
                let pos = if t.municipalities_per_province == 1 {
                    center
                } else {
                    (
                        center.0 + MUNICIPALITY_RADIUS * angle.sin(),
                        center.1 + MUNICIPALITY_RADIUS * angle.cos(),
                    )
                };
                let mid = format!("{id}M{j:0mw$}");
                let antennas = (0..t.antennas_per_municipality).map(|a| format!("{mid}A{a}")).collect();
                members.push(municipalities.len());
                municipalities.push(Municipality {
                    id: mid,
                    province: p,
                    community: first_community + j * t.communities_per_province / t.municipalities_per_province,
                    pos,
                    antennas,
                });
            }
            provinces.push(Province {
                id,
                center,
                municipalities: members,
            });
        }
        World {
            provinces,
            municipalities,
            communities,
        }
    }

    fn registry(&self) -> Result<AntennaRegistry> {
        let mut r = AntennaRegistry::new();
        for m in &self.municipalities {
            let n = m.antennas.len() as f64;
            for (a, id) in m.antennas.iter().enumerate() {
                let offset = 0.005 * a as f64 / n;
                r.insert(
                    id.clone(),
                    m.pos.0 + offset,
                    m.pos.1 + offset,
                    &m.id,
                    &self.provinces[m.province].id,
                )?;
            }
        }
        Ok(r)
    }

    fn tiers(&self, gamma: f64) -> Tiers {
        let picker = |from: &Municipality, keep: &dyn Fn(&Municipality) -> bool| {
            Picker::new(
                self.provinces[from.province]
                    .municipalities
                    .iter()
                    .map(|&i| (i, &self.municipalities[i]))
                    .filter(|(_, m)| m.id != from.id && keep(m))
                    .map(|(i, m)| (i, gravity(distance(from.pos, m.pos), 1.0, gamma)))
                    .collect(),
            )
        };
        Tiers {
            same_community: self
                .municipalities
                .iter()
                .map(|m| picker(m, &|o| o.community == m.community))
                .collect(),
            bridge: self
                .municipalities
                .iter()
                .map(|m| picker(m, &|o| o.community != m.community))
                .collect(),
        }
    }

    /// Other provinces ordered by distance from `p` (ties by index).
    fn nearest(&self, p: usize) -> Vec<usize> {
        let mut others: Vec<usize> = (0..self.provinces.len()).filter(|&q| q != p).collect();
        let c = self.provinces[p].center;
        others.sort_by(|&a, &b| {
            distance(c, self.provinces[a].center)
                .total_cmp(&distance(c, self.provinces[b].center))
                .then(a.cmp(&b))
        });
        others
    }

    /// Gravity sampler over the nearest `fraction` of the other provinces.
    fn province_picker(&self, p: usize, gamma: f64, fraction: f64, mass: f64) -> Option<Picker> {
        let nearest = self.nearest(p);
        let keep = ((fraction * nearest.len() as f64).ceil() as usize).min(nearest.len());
        let c = self.provinces[p].center;
        Picker::new(
            nearest[..keep]
                .iter()
                .map(|&q| (q, gravity(distance(c, self.provinces[q].center), mass, gamma)))
                .collect(),
        )
    }
}

fn digits(n: usize) -> usize {
    n.saturating_sub(1).max(1).to_string().len()
}

/// Number of nearest partner provinces whose uniform share gives
/// normalized entropy `level` among `n` provinces.
pub fn planted_partner_count(level: f64, n: usize) -> usize {
    ((n as f64).powf(level).round() as usize).clamp(1, n.saturating_sub(1).max(1))
}

struct Samplers {
    commute: Tiers,
    leisure: Tiers,
    commute_province: Vec<Option<Picker>>,
    /// Per effective regime, per province.
    leisure_province: Vec<Vec<Option<Picker>>>,
}

#[derive(Clone, Copy)]
struct Work {
    municipality: usize,
    tier: usize,
}

struct Generator<'a> {
    config: &'a ScenarioConfig,
    tz: Tz,
    world: World,
    samplers: Samplers,
    regimes: Vec<Regime>,
    users: Vec<(String, usize, Option<Work>)>,
}

impl Generator<'_> {
    fn pick_tier(&self, weights: &[f64; 3], tiers: &Tiers, home: usize, province_pickers: &[Option<Picker>], rng: &mut ChaCha8Rng) -> Option<usize> {
        let p = self.world.municipalities[home].province;
        let available = [
            tiers.same_community[home].is_some(),
            tiers.bridge[home].is_some(),
            province_pickers[p].is_some(),
        ];
        let w: Vec<(usize, f64)> = (0..3).map(|t| (t, if available[t] { weights[t] } else { 0.0 })).collect();
        Picker::new(w).map(|pk| pk.pick(rng))
    }

    fn destination(&self, tier: usize, tiers: &Tiers, home: usize, province_pickers: &[Option<Picker>], rng: &mut ChaCha8Rng) -> usize {
        match tier {
            SAME_COMMUNITY => tiers.same_community[home].as_ref().unwrap().pick(rng),
            BRIDGE => tiers.bridge[home].as_ref().unwrap().pick(rng),
            _ => {
                let p = self.world.municipalities[home].province;
                let q = province_pickers[p].as_ref().unwrap().pick(rng);
                let members = &self.world.provinces[q].municipalities;
                members[rng.gen_range(0..members.len())]
            }
        }
    }

    fn assign_work(&mut self) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        let m = &self.config.mobility;
        let pop = self.config.population_per_municipality as usize;
        let width = digits(self.world.municipalities.len() * pop);
        let mut users = Vec::with_capacity(self.world.municipalities.len() * pop);
        for home in 0..self.world.municipalities.len() {
            for _ in 0..pop {
                let id = format!("U{:0width$}", users.len());
                let work = if rng.gen::<f64>() < m.work_at_home {
                    None
                } else {
                    let s = &self.samplers;
                    self.pick_tier(&m.commute_tiers, &s.commute, home, &s.commute_province, &mut rng)
                        .map(|tier| Work {
                            municipality: self.destination(tier, &s.commute, home, &s.commute_province, &mut rng),
                            tier,
                        })
                };
                users.push((id, home, work));
            }
        }
        self.users = users;
    }

    fn regime_index(&self, date: NaiveDate) -> usize {
        self.regimes.iter().rposition(|r| r.start <= date).unwrap_or(0)
    }

    fn antenna(&self, muni: usize, rng: &mut ChaCha8Rng) -> &str {
        let a = &self.world.municipalities[muni].antennas;
        &a[rng.gen_range(0..a.len())]
    }

    fn at(&self, date: NaiveDate, from_secs: u32, span: u32, rng: &mut ChaCha8Rng) -> i64 {
        local_timestamp(date, from_secs + rng.gen_range(0..span), self.tz)
    }

    fn xdr(&self, user: &str, ts: i64, muni: usize, rng: &mut ChaCha8Rng) -> XdrRecord {
        XdrRecord {
            user_id: user.to_owned(),
            timestamp: ts,
            antenna: self.antenna(muni, rng).to_owned(),
            kilobytes: rng.gen_range(1..5000),
        }
    }

    fn day(&self, index: u32) -> (DayRecords, DayTruth) {
        let date = self.config.start_date + chrono::Duration::days(index as i64);
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(1 + index as u64);
        let ri = self.regime_index(date);
        let regime = &self.regimes[ri];
        let weekend = is_weekend(date);
        let m = &self.config.mobility;
        let s = &self.samplers;
        let mut cdr = Vec::new();
        let mut xdr = Vec::new();
        let mut truth = DayTruth {
            date,
            trips_zero_dwell: 0,
            trips_min_dwell: 0,
            inter_province_trips: 0,
        };
        const H: u32 = 3600;
        for (user, home, work) in &self.users {
            let home = *home;
            xdr.push(self.xdr(user, self.at(date, 6 * H + H / 2, H, &mut rng), home, &mut rng));
            let trip = if weekend {
                if rng.gen::<f64>() < m.leisure_probability {
                    let pickers = &s.leisure_province[ri];
                    self.pick_tier(&m.leisure_tiers, &s.leisure, home, pickers, &mut rng)
                        .map(|tier| (self.destination(tier, &s.leisure, home, pickers, &mut rng), tier))
                } else {
                    None
                }
            } else {
                work.map(|w| (w.municipality, w.tier))
            };
            let scale = |tier: usize| if weekend { 1.0 } else { m.commute_probability } * regime.scale(tier);
            let dest = trip.filter(|(_, tier)| rng.gen::<f64>() < scale(*tier)).map(|(d, _)| d);
            let Some(dest) = dest else {
                if self.config.record_returns {
                    xdr.push(self.xdr(user, self.at(date, 21 * H, H, &mut rng), home, &mut rng));
                }
                continue;
            };
            let inter = self.world.municipalities[dest].province != self.world.municipalities[home].province;
            let arrival = self.at(date, 8 * H + H / 2, H, &mut rng);
            xdr.push(self.xdr(user, arrival, dest, &mut rng));
            if rng.gen::<f64>() < self.config.short_visit_fraction {
                // Back within the hour: only the return survives the dwell rule.
                let back = arrival + rng.gen_range(20 * 60..50 * 60);
                xdr.push(self.xdr(user, back, home, &mut rng));
                truth.trips_zero_dwell += 2;
                truth.trips_min_dwell += 1;
                truth.inter_province_trips += u64::from(inter);
                if self.config.record_returns {
                    xdr.push(self.xdr(user, self.at(date, 21 * H, H, &mut rng), home, &mut rng));
                }
                continue;
            }
            let callee = &self.users[rng.gen_range(0..self.users.len())].0;
            cdr.push(CdrRecord {
                caller_id: user.clone(),
                callee_id: callee.clone(),
                timestamp: self.at(date, 12 * H, H, &mut rng),
                antenna_start: self.antenna(dest, &mut rng).to_owned(),
                antenna_end: self.antenna(dest, &mut rng).to_owned(),
                duration_min: rng.gen_range(1..=10),
            });
            let legs = if self.config.record_returns {
                xdr.push(self.xdr(user, self.at(date, 17 * H, 2 * H, &mut rng), home, &mut rng));
                xdr.push(self.xdr(user, self.at(date, 21 * H, H, &mut rng), home, &mut rng));
                2
            } else {
                1
            };
            truth.trips_zero_dwell += legs;
            truth.trips_min_dwell += legs;
            truth.inter_province_trips += legs * u64::from(inter);
        }
        (DayRecords { date, cdr, xdr }, truth)
    }
}

/// Generates the scenario in memory. Days are generated in parallel, each
/// from its own stream of the seeded generator, so output does not depend
/// on scheduling.
pub fn generate(config: &ScenarioConfig) -> Result<GeneratedScenario> {
    let tz = config.validate()?;
    let world = World::build(&config.territory);
    let registry = world.registry()?;
    let regimes = config.effective_regimes();
    let m = &config.mobility;
    let n = world.provinces.len();
    let province_mass = (config.territory.municipalities_per_province as u64 * config.population_per_municipality as u64) as f64;

    let planted: Option<Vec<usize>> = config
        .planted_cluster_levels
        .as_ref()
        .map(|levels| (0..n).map(|p| p % levels.len()).collect());
    let planted_picker = |p: usize| {
        let (assign, levels) = (planted.as_ref()?, config.planted_cluster_levels.as_ref()?);
        let m = planted_partner_count(levels[assign[p]], n);
        Picker::uniform(world.nearest(p).into_iter().take(m).collect())
    };
    let commute_province = (0..n)
        .map(|p| match planted {
            Some(_) => planted_picker(p),
            None => world.province_picker(p, m.commute_gamma, 1.0, province_mass),
        })
        .collect();
    let leisure_province = regimes
        .iter()
        .map(|r| {
            (0..n)
                .map(|p| match planted {
                    Some(_) => planted_picker(p),
                    None => world.province_picker(p, m.leisure_gamma, r.weekend_concentration, province_mass),
                })
                .collect()
        })
        .collect();
    let samplers = Samplers {
        commute: world.tiers(m.commute_gamma),
        leisure: world.tiers(m.leisure_gamma),
        commute_province,
        leisure_province,
    };

    let communities = world
        .municipalities
        .iter()
        .map(|mu| (mu.id.clone(), world.communities[mu.community].clone()))
        .collect();
    let planted_levels = planted.map(|assign| {
        assign
            .iter()
            .enumerate()
            .map(|(p, l)| (world.provinces[p].id.clone(), *l))
            .collect()
    });

    let mut gen = Generator {
        config,
        tz,
        world,
        samplers,
        regimes,
        users: Vec::new(),
    };
    gen.assign_work();
    let (days, truths): (Vec<DayRecords>, Vec<DayTruth>) = (0..config.days).into_par_iter().map(|i| gen.day(i)).unzip();

    Ok(GeneratedScenario {
        config: config.clone(),
        registry,
        days,
        ground_truth: GroundTruth {
            seed: config.seed,
            min_dwell_seconds: DEFAULT_DWELL_SECONDS,
            split_date: config.split_date(),
            days: truths,
            communities,
            planted_levels,
        },
    })
}
