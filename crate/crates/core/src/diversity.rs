//! Normalized Shannon-entropy diversity of province in- and out-flows.
//!
//! For province A and direction `in`, the partners are the provinces with
//! non-zero flow into A and p(x) is x's share of A's incoming trips. The
//! diversity is −Σ p(x)·ln p(x) / ln N, where N is the number of provinces
//! in the territory. Out-flow diversity uses A's outgoing trips instead.
//! Self-loops are excluded unless [`DiversityOptions::include_self`] is set.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{fmt_opt, write_atomic};
use crate::od::{DailyOd, Granularity};
use crate::territory::TerritoryIndex;
use crate::time::is_weekend;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    In,
    Out,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::In => "in",
            Direction::Out => "out",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "in" => Ok(Direction::In),
            "out" => Ok(Direction::Out),
            other => Err(Error::InvalidArgument(format!("unknown direction `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DiversityOptions {
    /// Count the province's own self-loop as one of its partners.
    pub include_self: bool,
}

/// Entropy of the proportions of `counts` (natural log). Zero counts are
/// skipped; `None` if everything is zero.
pub fn entropy(counts: &[u64]) -> Option<f64> {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return None;
    }
    let total = total as f64;
    let h = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total;
            -p * p.ln()
        })
        .sum::<f64>();
    Some(h.max(0.0))
}

fn partner_counts(od: &DailyOd, province: &str, direction: Direction, opts: DiversityOptions) -> Vec<u64> {
    od.iter()
        .filter(|&(o, d, _)| {
            let (this, other) = match direction {
                Direction::In => (d, o),
                Direction::Out => (o, d),
            };
            this == province && (opts.include_self || other != province)
        })
        .map(|(_, _, c)| c)
        .collect()
}

/// Normalized flow diversity of `province` on one day, in [0, 1]. `None`
/// when the province has no flow in that direction.
pub fn flow_diversity(
    od: &DailyOd,
    province: &str,
    direction: Direction,
    province_count: usize,
    opts: DiversityOptions,
) -> Result<Option<f64>> {
    if province_count < 2 {
        return Err(Error::TooFewProvinces(province_count));
    }
    od.require(Granularity::Province)?;
    let counts = partner_counts(od, province, direction, opts);
    let norm = (province_count as f64).ln();
    Ok(entropy(&counts).map(|h| (h / norm).clamp(0.0, 1.0)))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiversitySeries {
    pub province: String,
    pub direction: Direction,
    pub dates: Vec<NaiveDate>,
    /// `None` marks a day without flow, distinct from a zero diversity.
    pub values: Vec<Option<f64>>,
}

impl DiversitySeries {
    pub fn defined(&self) -> impl Iterator<Item = (NaiveDate, f64)> + '_ {
        self.dates
            .iter()
            .zip(&self.values)
            .filter_map(|(d, v)| v.map(|v| (*d, v)))
    }
}

pub fn diversity_series(
    ods: &[DailyOd],
    province: &str,
    direction: Direction,
    province_count: usize,
    opts: DiversityOptions,
) -> Result<DiversitySeries> {
    let values = ods
        .iter()
        .map(|od| flow_diversity(od, province, direction, province_count, opts))
        .collect::<Result<Vec<_>>>()?;
    Ok(DiversitySeries {
        province: province.to_owned(),
        direction,
        dates: ods.iter().map(|od| od.date).collect(),
        values,
    })
}

/// Diversity series for every province of the territory, in province order.
pub fn all_provinces(
    ods: &[DailyOd],
    index: &TerritoryIndex,
    direction: Direction,
    opts: DiversityOptions,
) -> Result<Vec<DiversitySeries>> {
    let provinces: Vec<&String> = index.provinces().collect();
    provinces
        .par_iter()
        .map(|p| diversity_series(ods, p, direction, index.province_count(), opts))
        .collect()
}

/// Mean over the defined values of one (period, day-type) cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CellMean {
    pub mean: Option<f64>,
    pub count: usize,
    pub absent: usize,
}

impl CellMean {
    fn from_values<'a>(values: impl Iterator<Item = &'a Option<f64>>) -> Self {
        let (mut sum, mut count, mut absent) = (0.0, 0, 0);
        for v in values {
            match v {
                Some(v) => {
                    sum += v;
                    count += 1;
                }
                None => absent += 1,
            }
        }
        CellMean {
            mean: (count > 0).then(|| sum / count as f64),
            count,
            absent,
        }
    }
}

/// Weekday/weekend means before and from `split_date` on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WeekendContrast {
    pub pre_weekday: CellMean,
    pub pre_weekend: CellMean,
    pub post_weekday: CellMean,
    pub post_weekend: CellMean,
}

impl WeekendContrast {
    /// Weekend minus weekday mean before the split.
    pub fn pre_delta(&self) -> Option<f64> {
        Some(self.pre_weekend.mean? - self.pre_weekday.mean?)
    }

    pub fn post_delta(&self) -> Option<f64> {
        Some(self.post_weekend.mean? - self.post_weekday.mean?)
    }
}

pub fn weekend_contrast(series: &DiversitySeries, split_date: NaiveDate) -> WeekendContrast {
    pooled_weekend_contrast(std::slice::from_ref(series), split_date)
}

/// Same as [`weekend_contrast`] with the values of many series pooled.
pub fn pooled_weekend_contrast(series: &[DiversitySeries], split_date: NaiveDate) -> WeekendContrast {
    let pick = |post: bool, weekend: bool| {
        CellMean::from_values(series.iter().flat_map(|s| {
            s.dates
                .iter()
                .zip(&s.values)
                .filter(move |(d, _)| (**d >= split_date) == post && is_weekend(**d) == weekend)
                .map(|(_, v)| v)
        }))
    };
    WeekendContrast {
        pre_weekday: pick(false, false),
        pre_weekend: pick(false, true),
        post_weekday: pick(true, false),
        post_weekend: pick(true, true),
    }
}

/// Long table `date,province,direction,diversity`; absent values are empty.
pub fn write_long_csv(series: &[DiversitySeries], path: &Path) -> Result<()> {
    write_atomic(path, |w| {
        writeln!(w, "date,province,direction,diversity")?;
        for s in series {
            for (d, v) in s.dates.iter().zip(&s.values) {
                writeln!(w, "{},{},{},{}", d, s.province, s.direction, fmt_opt(*v))?;
            }
        }
        Ok(())
    })
}

/// Wide table: one row per province, one column per date.
pub fn write_wide_csv(series: &[DiversitySeries], path: &Path) -> Result<()> {
    let dates: BTreeSet<NaiveDate> = series.iter().flat_map(|s| s.dates.iter().copied()).collect();
    write_atomic(path, |w| {
        write!(w, "province")?;
        for d in &dates {
            write!(w, ",{d}")?;
        }
        writeln!(w)?;
        for s in series {
            write!(w, "{}", s.province)?;
            for d in &dates {
                let v = s.dates.iter().position(|x| x == d).and_then(|i| s.values[i]);
                write!(w, ",{}", fmt_opt(v))?;
            }
            writeln!(w)?;
        }
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn day(n: i64) -> NaiveDate {
        // 2020-03-02 is a Monday.
        NaiveDate::from_ymd_opt(2020, 3, 2).unwrap() + chrono::Duration::days(n)
    }

    fn inflows(n: i64, sources: &[(&str, u64)]) -> DailyOd {
        let mut od = DailyOd::new(day(n), Granularity::Province);
        for &(s, c) in sources {
            od.add(s, "A", c).unwrap();
        }
        od
    }

    /// Straight-line evaluation of −Σ p ln p / ln N.
    fn oracle(counts: &[u64], n: usize) -> f64 {
        let total: f64 = counts.iter().map(|&c| c as f64).sum();
        let mut h = 0.0;
        for &c in counts {
            if c > 0 {
                let p = c as f64 / total;
                h -= p * p.ln();
            }
        }
        h / (n as f64).ln()
    }

    #[test]
    fn uniform_over_all_other_provinces() {
        let names: Vec<String> = (0..109).map(|i| format!("S{i}")).collect();
        let sources: Vec<(&str, u64)> = names.iter().map(|n| (n.as_str(), 3)).collect();
        let e = flow_diversity(&inflows(0, &sources), "A", Direction::In, 110, Default::default())
            .unwrap()
            .unwrap();
        assert!((e - 109f64.ln() / 110f64.ln()).abs() < 1e-12);
        assert!((e - 0.99806).abs() < 5e-6);
    }

    #[test]
    fn point_mass_is_zero() {
        let e = flow_diversity(&inflows(0, &[("B", 5)]), "A", Direction::In, 110, Default::default()).unwrap();
        assert_eq!(e, Some(0.0));
    }

    #[test]
    fn two_sources() {
        let e = flow_diversity(&inflows(0, &[("B", 30), ("C", 10)]), "A", Direction::In, 110, Default::default())
            .unwrap()
            .unwrap();
        let expected = -(0.75f64 * 0.75f64.ln() + 0.25 * 0.25f64.ln()) / 110f64.ln();
        assert!((e - expected).abs() < 1e-12);
        assert!((e - 0.11963).abs() < 5e-6);
    }

    #[test]
    fn self_loop_excluded_unless_requested() {
        let mut od = inflows(0, &[("B", 5)]);
        od.add("A", "A", 5).unwrap();
        let n = 110;
        assert_eq!(flow_diversity(&od, "A", Direction::In, n, Default::default()).unwrap(), Some(0.0));
        let with_self = flow_diversity(&od, "A", Direction::In, n, DiversityOptions { include_self: true })
            .unwrap()
            .unwrap();
        assert!((with_self - 2f64.ln() / 110f64.ln()).abs() < 1e-12);
        // Out direction: only the self-loop leaves A.
        assert_eq!(flow_diversity(&od, "A", Direction::Out, n, Default::default()).unwrap(), None);
    }

    #[test]
    fn errors() {
        let od = inflows(0, &[("B", 5)]);
        assert!(matches!(
            flow_diversity(&od, "A", Direction::In, 1, Default::default()),
            Err(Error::TooFewProvinces(1))
        ));
        let muni = DailyOd::new(day(0), Granularity::Municipality);
        assert!(flow_diversity(&muni, "A", Direction::In, 5, Default::default()).is_err());
    }

    #[test]
    fn series_keeps_absent_days() {
        let ods = [inflows(0, &[("B", 1), ("C", 1)]), inflows(1, &[]), inflows(2, &[("B", 1), ("C", 1)])];
        let s = diversity_series(&ods, "A", Direction::In, 10, Default::default()).unwrap();
        assert_eq!(s.values[1], None);
        assert_eq!(s.values[0], s.values[2]);
        assert!(s.values[0].unwrap() > 0.0);
    }

    #[test]
    fn contrast_of_constant_and_weekend_indicator() {
        let dates: Vec<NaiveDate> = (0..28).map(day).collect();
        let constant = DiversitySeries {
            province: "A".into(),
            direction: Direction::In,
            dates: dates.clone(),
            values: vec![Some(0.4); 28],
        };
        let c = weekend_contrast(&constant, day(14));
        for cell in [c.pre_weekday, c.pre_weekend, c.post_weekday, c.post_weekend] {
            assert!((cell.mean.unwrap() - 0.4).abs() < 1e-15);
        }

        let indicator = DiversitySeries {
            values: dates.iter().map(|d| Some(if is_weekend(*d) { 0.0 } else { 1.0 })).collect(),
            ..constant
        };
        let c = weekend_contrast(&indicator, day(14));
        assert_eq!(c.pre_weekday.mean, Some(1.0));
        assert_eq!(c.pre_weekend.mean, Some(0.0));
        assert_eq!(c.post_weekday.mean, Some(1.0));
        assert_eq!(c.post_weekend.mean, Some(0.0));
        assert_eq!(c.pre_weekend.count, 4);
    }

    #[test]
    fn empty_cell_is_absent() {
        let s = DiversitySeries {
            province: "A".into(),
            direction: Direction::In,
            dates: vec![day(0), day(5)],
            values: vec![Some(0.5), None],
        };
        let c = weekend_contrast(&s, day(3));
        assert_eq!(c.pre_weekday.mean, Some(0.5));
        assert_eq!(c.pre_weekend.count, 0);
        assert_eq!(c.pre_weekend.mean, None);
        assert_eq!(c.post_weekend.absent, 1);
        assert_eq!(c.post_weekend.mean, None);
    }

    #[test]
    fn csv_exports() {
        let dir = tempfile::tempdir().unwrap();
        let s = DiversitySeries {
            province: "A".into(),
            direction: Direction::Out,
            dates: vec![day(0), day(1)],
            values: vec![Some(0.5), None],
        };
        write_long_csv(std::slice::from_ref(&s), &dir.path().join("long.csv")).unwrap();
        write_wide_csv(&[s], &dir.path().join("wide.csv")).unwrap();
        let long = std::fs::read_to_string(dir.path().join("long.csv")).unwrap();
        assert_eq!(long, "date,province,direction,diversity\n2020-03-02,A,out,0.500000000000\n2020-03-03,A,out,\n");
        let wide = std::fs::read_to_string(dir.path().join("wide.csv")).unwrap();
        assert_eq!(wide, "province,2020-03-02,2020-03-03\nA,0.500000000000,\n");
    }

    proptest! {
        #[test]
        fn matches_direct_summation(counts in prop::collection::vec(1u64..10_000, 1..109)) {
            let names: Vec<String> = (0..counts.len()).map(|i| format!("S{i}")).collect();
            let sources: Vec<(&str, u64)> = names.iter().map(|n| n.as_str()).zip(counts.iter().copied()).collect();
            let e = flow_diversity(&inflows(0, &sources), "A", Direction::In, 110, Default::default()).unwrap().unwrap();
            prop_assert!((e - oracle(&counts, 110)).abs() < 1e-12);
            prop_assert!(e >= 0.0);
            prop_assert!(e <= (counts.len() as f64).ln() / 110f64.ln() + 1e-12);
        }

        #[test]
        fn scale_invariant(counts in prop::collection::vec(1u64..1000, 1..30), c in 2u64..50) {
            let names: Vec<String> = (0..counts.len()).map(|i| format!("S{i}")).collect();
            let a: Vec<(&str, u64)> = names.iter().map(|n| n.as_str()).zip(counts.iter().copied()).collect();
            let b: Vec<(&str, u64)> = names.iter().map(|n| n.as_str()).zip(counts.iter().map(|x| x * c)).collect();
            let ea = flow_diversity(&inflows(0, &a), "A", Direction::In, 40, Default::default()).unwrap().unwrap();
            let eb = flow_diversity(&inflows(0, &b), "A", Direction::In, 40, Default::default()).unwrap().unwrap();
            prop_assert!((ea - eb).abs() < 1e-12);
        }

        #[test]
        fn log_base_invariant(counts in prop::collection::vec(1u64..1000, 1..30)) {
            let total: f64 = counts.iter().map(|&c| c as f64).sum();
            let h2: f64 = counts.iter().map(|&c| { let p = c as f64 / total; -p * p.log2() }).sum();
            let h10: f64 = counts.iter().map(|&c| { let p = c as f64 / total; -p * p.log10() }).sum();
            let e = oracle(&counts, 50);
            prop_assert!((h2 / 50f64.log2() - e).abs() < 1e-12);
            prop_assert!((h10 / 50f64.log10() - e).abs() < 1e-12);
        }

        #[test]
        fn merging_equal_sources_lowers_diversity(counts in prop::collection::vec(1u64..1000, 0..20), x in 1u64..1000) {
            let mut split = counts.clone();
            split.extend([x, x]);
            let mut merged = counts;
            merged.push(2 * x);
            prop_assert!(entropy(&merged).unwrap() < entropy(&split).unwrap());
        }
    }
}
