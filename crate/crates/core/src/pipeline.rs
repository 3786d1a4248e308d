//! End-to-end orchestration: records → ODs → flows, diversity, clusters and
//! communities, plus the headline summary.

use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use chrono_tz::Tz;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::{select_k, write_members_csv, write_selection_json, KSelection, SeriesMatrix, DEFAULT_RESTARTS};
use crate::community::{
    community_count_series, median, write_counts_csv, write_partition_json, CommunityOptions,
    DailyCommunities, InfomapConfig,
};
use crate::diversity::{
    all_provinces, pooled_weekend_contrast, write_long_csv, write_wide_csv, Direction, DiversityOptions,
    DiversitySeries, WeekendContrast,
};
use crate::error::{Error, Result};
use crate::flows::{compute_flows, FlowSeries};
use crate::ingest::{parse_records, trips_by_day, AntennaRegistry, FileTally, IngestOptions, RecordEvent, DEFAULT_DWELL_SECONDS};
use crate::io::{read_json, write_json};
use crate::od::{aggregate_to_province, build_daily_od, DailyOd, Granularity, OdStore};
use crate::synth::GroundTruth;
use crate::territory::TerritoryIndex;
use crate::time::DEFAULT_TIMEZONE;

/// Input directory layout: `registry.csv`, `cdr/*.csv`, `xdr/*.csv`.
#[derive(Debug, Clone)]
pub struct InputLayout {
    pub registry: PathBuf,
    pub cdr: Vec<PathBuf>,
    pub xdr: Vec<PathBuf>,
}

impl InputLayout {
    pub fn discover(dir: &Path) -> Result<Self> {
        let registry = dir.join("registry.csv");
        if !registry.is_file() {
            return Err(Error::InvalidArgument(format!("{} not found", registry.display())));
        }
        let list = |sub: &str| -> Result<Vec<PathBuf>> {
            let d = dir.join(sub);
            if !d.is_dir() {
                return Ok(Vec::new());
            }
            let mut files: Vec<PathBuf> = std::fs::read_dir(&d)
                .map_err(|e| Error::io(&d, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "csv"))
                .collect();
            files.sort();
            Ok(files)
        };
        let (cdr, xdr) = (list("cdr")?, list("xdr")?);
        if cdr.is_empty() && xdr.is_empty() {
            return Err(Error::InvalidArgument(format!("no cdr/ or xdr/ csv files under {}", dir.display())));
        }
        Ok(Self { registry, cdr, xdr })
    }
}

#[derive(Debug, Clone)]
pub struct BuildOptions {
    pub timezone: Tz,
    pub dwell_seconds: i64,
    pub from: Option<NaiveDate>,
    pub to: Option<NaiveDate>,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            timezone: DEFAULT_TIMEZONE,
            dwell_seconds: DEFAULT_DWELL_SECONDS,
            from: None,
            to: None,
        }
    }
}

/// Daily municipality ODs over an unbroken date range.
#[derive(Debug, Clone)]
pub struct OdBuild {
    pub territory: TerritoryIndex,
    pub municipality: Vec<DailyOd>,
    pub tallies: Vec<FileTally>,
}

/// One OD per day from `from` to `to`; without bounds, the span of days
/// that have trips. Days without trips get empty matrices.
pub fn ods_from_events(events: &[RecordEvent], opts: &BuildOptions) -> Result<Vec<DailyOd>> {
    if let (Some(f), Some(t)) = (opts.from, opts.to) {
        if f > t {
            return Err(Error::InvalidArgument(format!("empty date range {f}..{t}")));
        }
    }
    let by_day = trips_by_day(events, opts.timezone, opts.dwell_seconds);
    let first = opts.from.or_else(|| by_day.keys().next().copied());
    let last = opts.to.or_else(|| by_day.keys().next_back().copied());
    let (Some(first), Some(last)) = (first, last) else {
        return Ok(Vec::new());
    };
    Ok(first
        .iter_days()
        .take_while(|d| *d <= last)
        .map(|d| build_daily_od(by_day.get(&d).map(Vec::as_slice).unwrap_or_default(), d))
        .collect())
}

pub fn build_od(input: &InputLayout, opts: &BuildOptions) -> Result<OdBuild> {
    let registry = AntennaRegistry::load(&input.registry)?;
    let parsed = parse_records(&input.cdr, &input.xdr, &registry, &IngestOptions::default())?;
    let municipality = ods_from_events(&parsed.events, opts)?;
    Ok(OdBuild {
        territory: registry.territory(),
        municipality,
        tallies: parsed.tallies,
    })
}

#[derive(Debug, Clone)]
pub struct AnalysisOptions {
    pub seed: u64,
    pub teleport: f64,
    pub trials: usize,
    pub k_range: RangeInclusive<usize>,
    pub restarts: usize,
    pub include_self: bool,
    /// First post-intervention day; defaults to the middle of the range.
    pub split: Option<NaiveDate>,
    pub window: usize,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            teleport: crate::community::DEFAULT_TELEPORT,
            trials: 10,
            k_range: 2..=20,
            restarts: DEFAULT_RESTARTS,
            include_self: false,
            split: None,
            window: 1,
        }
    }
}

/// Headline numbers of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    /// Drop of mean daily inter-province trips after the split, in percent.
    pub flow_drop_pct: Option<f64>,
    /// Weekend minus weekday mean diversity before the split, pooled over
    /// provinces and both directions.
    pub weekend_diversity_delta_pre: Option<f64>,
    pub weekend_diversity_delta_post: Option<f64>,
    /// k* of the in-flow diversity clustering.
    pub k_star: usize,
    pub community_count_pre_median: Option<f64>,
    pub community_count_post_median: Option<f64>,
    pub split_date: NaiveDate,
    pub from: NaiveDate,
    pub to: NaiveDate,
    pub seed: u64,
}

pub struct Analysis {
    pub split: NaiveDate,
    pub province: Vec<DailyOd>,
    pub flows: Vec<FlowSeries>,
    pub diversity_in: Vec<DiversitySeries>,
    pub diversity_out: Vec<DiversitySeries>,
    pub contrast_in: WeekendContrast,
    pub contrast_out: WeekendContrast,
    pub contrast_pooled: WeekendContrast,
    pub clusters_in: (SeriesMatrix, KSelection),
    pub clusters_out: (SeriesMatrix, KSelection),
    pub communities: Vec<DailyCommunities>,
    pub summary: Summary,
}

/// Daily inter-province trips (province OD off-diagonal).
pub fn inter_province_volume(province: &[DailyOd]) -> Vec<u64> {
    province.iter().map(DailyOd::off_diagonal_total).collect()
}

/// Percent drop of the mean of `volume` from the days before `split` to the
/// days from `split` on.
pub fn flow_drop_pct(dates: &[NaiveDate], volume: &[u64], split: NaiveDate) -> Option<f64> {
    let mean = |post: bool| {
        let v: Vec<u64> = dates
            .iter()
            .zip(volume)
            .filter(|(d, _)| (**d >= split) == post)
            .map(|(_, v)| *v)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<u64>() as f64 / v.len() as f64)
    };
    let (pre, post) = (mean(false)?, mean(true)?);
    (pre > 0.0).then(|| 100.0 * (1.0 - post / pre))
}

fn cluster(series: &[DiversitySeries], opts: &AnalysisOptions) -> Result<(SeriesMatrix, KSelection)> {
    let matrix = SeriesMatrix::from_series(series)?;
    if !matrix.dropped.is_empty() {
        log::warn!("dropped {} provinces with too many absent days", matrix.dropped.len());
    }
    let sel = select_k(&matrix, opts.k_range.clone(), opts.seed, opts.restarts)?;
    Ok((matrix, sel))
}

pub fn analyze(municipality: &[DailyOd], territory: &TerritoryIndex, opts: &AnalysisOptions) -> Result<Analysis> {
    let (Some(first), Some(last)) = (municipality.first(), municipality.last()) else {
        return Err(Error::InvalidArgument("no days to analyze".into()));
    };
    let (from, to) = (first.date, last.date);
    let split = opts.split.unwrap_or_else(|| default_split(from, to));
    if split <= from || split > to {
        return Err(Error::InvalidArgument(format!("split date {split} outside ({from}, {to}]")));
    }
    let province: Vec<DailyOd> = municipality
        .par_iter()
        .map(|od| aggregate_to_province(od, territory))
        .collect::<Result<_>>()?;
    let provinces: Vec<&String> = territory.provinces().collect();
    let flows = provinces
        .par_iter()
        .map(|p| compute_flows(&province, p, territory))
        .collect::<Result<Vec<_>>>()?;
    let dopts = DiversityOptions {
        include_self: opts.include_self,
    };
    let diversity_in = all_provinces(&province, territory, Direction::In, dopts)?;
    let diversity_out = all_provinces(&province, territory, Direction::Out, dopts)?;
    let [contrast_in, contrast_out, contrast_pooled] = contrasts(&diversity_in, &diversity_out, split);
    let clusters_in = cluster(&diversity_in, opts)?;
    let clusters_out = cluster(&diversity_out, opts)?;

    let communities = community_count_series(
        municipality,
        &CommunityOptions {
            infomap: InfomapConfig {
                teleport: opts.teleport,
                trials: opts.trials,
                seed: opts.seed,
            },
            window: opts.window,
            registry_nodes: None,
        },
    )?;
    let counts = |post: bool| {
        let c: Vec<usize> = communities
            .iter()
            .filter(|d| (d.date >= split) == post)
            .map(DailyCommunities::count)
            .collect();
        median(&c)
    };
    let dates: Vec<NaiveDate> = province.iter().map(|od| od.date).collect();
    let summary = Summary {
        flow_drop_pct: flow_drop_pct(&dates, &inter_province_volume(&province), split),
        weekend_diversity_delta_pre: contrast_pooled.pre_delta(),
        weekend_diversity_delta_post: contrast_pooled.post_delta(),
        k_star: clusters_in.1.k_star,
        community_count_pre_median: counts(false),
        community_count_post_median: counts(true),
        split_date: split,
        from,
        to,
        seed: opts.seed,
    };
    Ok(Analysis {
        split,
        province,
        flows,
        diversity_in,
        diversity_out,
        contrast_in,
        contrast_out,
        contrast_pooled,
        clusters_in,
        clusters_out,
        communities,
        summary,
    })
}

#[derive(Serialize)]
struct ContrastExport<'a> {
    split_date: NaiveDate,
    r#in: &'a WeekendContrast,
    out: &'a WeekendContrast,
    pooled: &'a WeekendContrast,
}

fn mkdir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

/// Pre/post weekday/weekend contrasts for in, out and both directions.
pub fn contrasts(
    diversity_in: &[DiversitySeries],
    diversity_out: &[DiversitySeries],
    split: NaiveDate,
) -> [WeekendContrast; 3] {
    let both: Vec<DiversitySeries> = diversity_in.iter().chain(diversity_out).cloned().collect();
    [
        pooled_weekend_contrast(diversity_in, split),
        pooled_weekend_contrast(diversity_out, split),
        pooled_weekend_contrast(&both, split),
    ]
}

/// Day after the middle of `from..=to`.
pub fn default_split(from: NaiveDate, to: NaiveDate) -> NaiveDate {
    from + chrono::Duration::days((to - from).num_days() / 2 + 1)
}

/// `<province>.csv` per province.
pub fn write_flows(dir: &Path, flows: &[FlowSeries]) -> Result<()> {
    mkdir(dir)?;
    flows
        .par_iter()
        .try_for_each(|f| f.write_csv(&dir.join(format!("{}.csv", f.province))))
}

/// `in.csv`, `out.csv` (long), `in_wide.csv`, `out_wide.csv` and
/// `weekend_contrast.json`.
pub fn write_diversity(
    dir: &Path,
    diversity_in: &[DiversitySeries],
    diversity_out: &[DiversitySeries],
    split: NaiveDate,
) -> Result<()> {
    mkdir(dir)?;
    for (name, series) in [("in", diversity_in), ("out", diversity_out)] {
        write_long_csv(series, &dir.join(format!("{name}.csv")))?;
        write_wide_csv(series, &dir.join(format!("{name}_wide.csv")))?;
    }
    let [r#in, out, pooled] = contrasts(diversity_in, diversity_out, split);
    write_json(
        &dir.join("weekend_contrast.json"),
        &ContrastExport {
            split_date: split,
            r#in: &r#in,
            out: &out,
            pooled: &pooled,
        },
    )
}

/// `<name>.json` and `<name>_members.csv` per clustering.
pub fn write_clusters(dir: &Path, clusters: &[(&str, &(SeriesMatrix, KSelection))]) -> Result<()> {
    mkdir(dir)?;
    for (name, (matrix, sel)) in clusters {
        write_selection_json(matrix, sel, &dir.join(format!("{name}.json")))?;
        write_members_csv(matrix, &sel.best, &dir.join(format!("{name}_members.csv")))?;
    }
    Ok(())
}

/// `counts.csv` and `partitions/<date>.json`, the dumps restricted to
/// municipalities accepted by `keep`.
pub fn write_communities(dir: &Path, days: &[DailyCommunities], keep: &(dyn Fn(&str) -> bool + Sync)) -> Result<()> {
    mkdir(&dir.join("partitions"))?;
    write_counts_csv(days, &dir.join("counts.csv"))?;
    days.par_iter().try_for_each(|d| {
        write_partition_json(d, &dir.join("partitions").join(format!("{}.json", d.date)), keep)
    })
}

/// Stores `ods` under `root/od/<granularity>/`, replacing any previous
/// matrices of that granularity only once all have been written.
pub fn store_ods(root: &Path, checksum: &str, granularity: Granularity, ods: &[DailyOd]) -> Result<()> {
    let od_dir = root.join("od");
    mkdir(&od_dir)?;
    let staging = tempfile::Builder::new()
        .prefix(".odflow-staging-")
        .tempdir_in(&od_dir)
        .map_err(|e| Error::io(&od_dir, e))?;
    let store = OdStore::open(staging.path(), checksum);
    ods.par_iter().try_for_each(|od| {
        od.require(granularity)?;
        store.store(od).map(|_| ())
    })?;
    let staged = store.root().join("od").join(granularity.as_str());
    mkdir(&staged)?;
    let target = od_dir.join(granularity.as_str());
    if target.exists() {
        std::fs::remove_dir_all(&target).map_err(|e| Error::io(&target, e))?;
    }
    std::fs::rename(&staged, &target).map_err(|e| Error::io(&target, e))
}

/// Writes every table of `analysis` (and the ODs) under `dir`.
pub fn write_analysis(dir: &Path, build: &OdBuild, analysis: &Analysis) -> Result<()> {
    let checksum = build.territory.checksum();
    store_ods(dir, &checksum, Granularity::Municipality, &build.municipality)?;
    store_ods(dir, &checksum, Granularity::Province, &analysis.province)?;
    write_flows(&dir.join("flows"), &analysis.flows)?;
    write_diversity(&dir.join("diversity"), &analysis.diversity_in, &analysis.diversity_out, analysis.split)?;
    write_clusters(
        &dir.join("cluster"),
        &[("in", &analysis.clusters_in), ("out", &analysis.clusters_out)],
    )?;
    write_communities(&dir.join("communities"), &analysis.communities, &|_| true)?;
    write_json(&dir.join("summary.json"), &analysis.summary)
}

/// Territory of the registry at `registry` and the stored matrices of
/// `granularity` under `root` within the optional bounds.
pub fn load_ods(
    root: &Path,
    registry: &Path,
    granularity: Granularity,
    from: Option<NaiveDate>,
    to: Option<NaiveDate>,
) -> Result<(TerritoryIndex, Vec<DailyOd>)> {
    let territory = AntennaRegistry::load(registry)?.territory();
    let store = OdStore::open(root, territory.checksum());
    let ods = store.load_range(granularity, from, to)?;
    if ods.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no {granularity} matrices under {} in the requested range",
            root.display()
        )));
    }
    Ok((territory, ods))
}

/// Split date recorded by the generator next to the records, if any.
pub fn recorded_split(input_dir: &Path) -> Result<Option<NaiveDate>> {
    let path = input_dir.join("ground_truth.json");
    if !path.is_file() {
        return Ok(None);
    }
    let truth: GroundTruth = read_json(&path)?;
    Ok(truth.split_date)
}

/// Builds the output in a staging directory beside `out` and renames it
/// into place, so a failed run leaves no partial output.
pub fn with_staging<T>(out: &Path, fill: impl FnOnce(&Path) -> Result<T>) -> Result<T> {
    let parent = match out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    mkdir(&parent)?;
    let staging = tempfile::Builder::new()
        .prefix(".odflow-staging-")
        .tempdir_in(&parent)
        .map_err(|e| Error::io(&parent, e))?;
    let value = fill(staging.path())?;
    if out.exists() {
        std::fs::remove_dir_all(out).map_err(|e| Error::io(out, e))?;
    }
    let staged = staging.keep();
    if let Err(e) = std::fs::rename(&staged, out) {
        let _ = std::fs::remove_dir_all(&staged);
        return Err(Error::io(out, e));
    }
    Ok(value)
}

/// Full run from an input directory into `out`.
pub fn report(input_dir: &Path, out: &Path, build: &BuildOptions, opts: &AnalysisOptions) -> Result<Summary> {
    let layout = InputLayout::discover(input_dir)?;
    let mut opts = opts.clone();
    if opts.split.is_none() {
        opts.split = recorded_split(input_dir)?;
    }
    let built = build_od(&layout, build)?;
    let analysis = analyze(&built.municipality, &built.territory, &opts)?;
    with_staging(out, |dir| {
        let registry = dir.join("registry.csv");
        std::fs::copy(&layout.registry, &registry).map_err(|e| Error::io(&registry, e))?;
        write_analysis(dir, &built, &analysis)
    })?;
    Ok(analysis.summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(n: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2020, 3, n).unwrap()
    }

    #[test]
    fn drop_of_halved_volume() {
        let dates = [d(1), d(2), d(3), d(4)];
        assert_eq!(flow_drop_pct(&dates, &[10, 10, 5, 5], d(3)), Some(50.0));
        assert_eq!(flow_drop_pct(&dates, &[0, 0, 5, 5], d(3)), None);
        assert_eq!(flow_drop_pct(&dates, &[1, 1, 1, 1], d(9)), None);
    }

    #[test]
    fn staging_leaves_nothing_on_failure() {
        let root = tempfile::tempdir().unwrap();
        let out = root.path().join("results");
        let r: Result<()> = with_staging(&out, |dir| {
            std::fs::write(dir.join("partial.csv"), "x").unwrap();
            Err(Error::InvalidArgument("boom".into()))
        });
        assert!(r.is_err());
        assert_eq!(std::fs::read_dir(root.path()).unwrap().count(), 0);

        with_staging(&out, |dir| {
            std::fs::write(dir.join("a"), "1").map_err(|e| Error::io(dir, e))
        })
        .unwrap();
        assert!(out.join("a").is_file());
    }

    #[test]
    fn empty_range_rejected() {
        let opts = BuildOptions {
            from: Some(d(5)),
            to: Some(d(4)),
            ..Default::default()
        };
        assert!(ods_from_events(&[], &opts).is_err());
    }
}
