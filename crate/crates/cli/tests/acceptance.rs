//! Acceptance criteria, one line each. Run with
//! `cargo test -p odflow-cli --test acceptance` (optionally followed by
//! `-- <substring>` to select criteria).

#[path = "../../core/tests/support/mod.rs"]
mod support;

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use odflow::community::{infomap, stationary_flow, FlowGraph, InfomapConfig, DEFAULT_MAX_ITERATIONS, DEFAULT_TOLERANCE};
use odflow::diversity::{all_provinces, flow_diversity, Direction};
use odflow::ingest::{extract_trips, RecordEvent, Trip};
use odflow::pipeline::{analyze, ods_from_events, AnalysisOptions, BuildOptions};
use odflow::synth::{generate, ScenarioConfig};
use odflow::{aggregate_to_province, build_daily_od, select_k, DailyOd, Granularity, OdStore, SeriesMatrix, TerritoryIndex};

const TAU: f64 = 0.15;

type Outcome = Result<String, String>;

struct Criterion {
    id: u32,
    name: &'static str,
    limit: Duration,
    run: fn() -> Outcome,
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn day0() -> NaiveDate {
    NaiveDate::from_ymd_opt(2020, 3, 2).unwrap()
}

fn province_names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("P{i:03}")).collect()
}

fn entropy_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.gen_range(2..=120);
        let names = province_names(n);
        let target = rng.gen_range(0..n);
        let mut od = DailyOd::new(day0(), Granularity::Province);
        let mut counts = Vec::new();
        for (i, name) in names.iter().enumerate() {
            if i == target || !rng.gen_bool(0.6) {
                continue;
            }
            let c: u64 = if rng.gen_bool(0.1) { rng.gen_range(1..1_000_000) } else { rng.gen_range(1..50) };
            od.add(name, &names[target], c).map_err(|e| e.to_string())?;
            counts.push(c);
        }
        if counts.is_empty() {
            continue;
        }
        let got = flow_diversity(&od, &names[target], Direction::In, n, Default::default())
            .map_err(|e| e.to_string())?
            .ok_or("diversity absent for non-empty flow")?;
        worst = worst.max((got - support::normalized_entropy(&counts, n)).abs());
    }
    ensure(worst <= 1e-12, || format!("max |Δ| vs direct summation = {worst:e}"))?;

    let names = province_names(110);
    let mut uniform = DailyOd::new(day0(), Granularity::Province);
    for name in &names[1..] {
        uniform.add(name, &names[0], 7).unwrap();
    }
    let u = flow_diversity(&uniform, &names[0], Direction::In, 110, Default::default())
        .unwrap()
        .unwrap();
    let expected = 109f64.ln() / 110f64.ln();
    ensure((u - expected).abs() <= 1e-12, || format!("uniform-109 {u} vs {expected}"))?;

    let mut point = DailyOd::new(day0(), Granularity::Province);
    point.add(&names[5], &names[0], 12345).unwrap();
    let p = flow_diversity(&point, &names[0], Direction::In, 110, Default::default())
        .unwrap()
        .unwrap();
    ensure(p == 0.0, || format!("point mass gave {p}"))?;
    Ok(format!("max |Δ| = {worst:.1e} over 1000 vectors; uniform-109 Δ = {:.1e}; point mass = 0", (u - expected).abs()))
}

fn graph(n: usize, edges: &[(usize, usize, f64)]) -> FlowGraph {
    FlowGraph::from_edges((0..n).map(|i| format!("n{i}")).collect(), edges.iter().copied()).unwrap()
}

fn random_graph(rng: &mut ChaCha8Rng, n: usize) -> Vec<(usize, usize, f64)> {
    let density = rng.gen_range(0.1..0.6);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in 0..n {
            if u != v && rng.gen_bool(density) {
                edges.push((u, v, rng.gen_range(0.1..10.0)));
            }
        }
    }
    if edges.is_empty() {
        edges.push((0, 1, 1.0));
    }
    edges
}

fn map_equation_optimality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    let mut eight = 0;
    for i in 0..50 {
        let n = if i % 2 == 0 { 8 } else { rng.gen_range(2..=7) };
        eight += usize::from(n == 8);
        let edges = random_graph(&mut rng, n);
        let p = infomap(&graph(n, &edges), &InfomapConfig { teleport: TAU, trials: 10, seed: i })
            .map_err(|e| e.to_string())?;
        let (best, _) = support::exhaustive_min_codelength(n, &edges, TAU);
        let gap = p.codelength - best;
        ensure(gap.abs() <= 1e-9, || format!("graph {i} (n={n}): infomap L = {} vs exhaustive {best}", p.codelength))?;
        worst = worst.max(gap.abs());
    }
    Ok(format!("50/50 graphs at the exhaustive minimum ({eight} with 8 nodes, {} partitions each); max |ΔL| = {worst:.1e}", support::set_partitions(8).len()))
}

fn stationary_flow_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut worst, mut worst_sum): (f64, f64) = (0.0, 0.0);
    for _ in 0..100 {
        let n = rng.gen_range(2..=50);
        let edges = random_graph(&mut rng, n);
        let f = stationary_flow(&graph(n, &edges), TAU, DEFAULT_TOLERANCE, DEFAULT_MAX_ITERATIONS)
            .map_err(|e| e.to_string())?;
        let dense = support::dense_stationary(n, &edges, TAU);
        for (a, b) in f.visit_rates.iter().zip(&dense) {
            worst = worst.max((a - b).abs());
        }
        worst_sum = worst_sum.max((f.visit_rates.iter().sum::<f64>() - 1.0).abs());
    }
    ensure(worst <= 1e-9, || format!("max |Δp| = {worst:e}"))?;
    ensure(worst_sum <= 1e-10, || format!("max |Σp − 1| = {worst_sum:e}"))?;
    Ok(format!("100 graphs: max |Δp| = {worst:.1e}, max |Σp − 1| = {worst_sum:.1e}"))
}

fn od_conservation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (n_prov, per) = (20, 10);
    let munis: Vec<Arc<str>> = (0..n_prov * per).map(|i| Arc::from(format!("M{i:03}"))).collect();
    let province_of = |m: usize| format!("P{:02}", m / per);
    let territory = TerritoryIndex::from_pairs((0..munis.len()).map(|m| (munis[m].to_string(), province_of(m))))
        .map_err(|e| e.to_string())?;
    let user: Arc<str> = Arc::from("u");
    let mut trips = Vec::with_capacity(1_000_000);
    let mut oracle: HashMap<(String, String), u64> = HashMap::new();
    for _ in 0..1_000_000 {
        let o = rng.gen_range(0..munis.len());
        let mut d = rng.gen_range(0..munis.len() - 1);
        if d >= o {
            d += 1;
        }
        *oracle.entry((province_of(o), province_of(d))).or_default() += 1;
        trips.push(Trip {
            user_id: user.clone(),
            origin: munis[o].clone(),
            destination: munis[d].clone(),
            departure_time: 0,
            arrival_time: 1,
        });
    }
    let muni = build_daily_od(&trips, day0());
    let prov = aggregate_to_province(&muni, &territory).map_err(|e| e.to_string())?;
    ensure(muni.total() == 1_000_000, || format!("municipality total {}", muni.total()))?;
    ensure(prov.total() == muni.total(), || format!("province total {} != {}", prov.total(), muni.total()))?;
    ensure(prov.len() == oracle.len(), || "province cell count differs from group-by oracle".into())?;
    for ((o, d), c) in &oracle {
        ensure(prov.get(o, d) == *c, || format!("cell ({o},{d}) {} vs oracle {c}", prov.get(o, d)))?;
    }

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let store = OdStore::open(dir.path(), territory.checksum());
    store.store(&muni).map_err(|e| e.to_string())?;
    store.store(&prov).map_err(|e| e.to_string())?;
    let back_m = store.load(day0(), Granularity::Municipality).map_err(|e| e.to_string())?;
    let back_p = store.load(day0(), Granularity::Province).map_err(|e| e.to_string())?;
    ensure(back_m == muni && back_p == prov, || "store/load round-trip changed a matrix".into())?;
    Ok(format!(
        "10^6 trips: totals equal, {} province cells match group-by oracle; round-trip identity ({} + {} cells)",
        oracle.len(),
        muni.len(),
        prov.len()
    ))
}

fn trip_rule_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut raw: Vec<(u32, i64, u32)> = Vec::new();
    for user in 0..10_000u32 {
        let len = rng.gen_range(0..=50);
        let places = rng.gen_range(1..=4);
        let mut t: i64 = rng.gen_range(0..86_400);
        for _ in 0..len {
            t += match rng.gen_range(0..4) {
                0 => 0,
                1 => rng.gen_range(0..1800),
                2 => rng.gen_range(1800..4000),
                _ => rng.gen_range(4000..10_000),
            };
            raw.push((user, t, rng.gen_range(0..places)));
        }
    }
    let names: Vec<Arc<str>> = (0..4).map(|m| Arc::from(format!("M{m}"))).collect();
    let users: Vec<Arc<str>> = (0..10_000u32).map(|u| Arc::from(format!("U{u:05}"))).collect();
    let events: Vec<RecordEvent> = raw
        .iter()
        .map(|&(u, t, m)| RecordEvent {
            user_id: users[u as usize].clone(),
            timestamp: t,
            municipality: names[m as usize].clone(),
            province: Arc::from("P"),
        })
        .collect();
    let mut total = 0;
    for dwell in [0, 1800, 3600, 7200] {
        let got: Vec<(u32, u32, u32, i64, i64)> = extract_trips(&events, dwell)
            .iter()
            .map(|t| {
                (
                    t.user_id[1..].parse().unwrap(),
                    t.origin[1..].parse().unwrap(),
                    t.destination[1..].parse().unwrap(),
                    t.departure_time,
                    t.arrival_time,
                )
            })
            .collect();
        let want = support::brute_force_trips(&raw, dwell);
        ensure(got == want, || format!("dwell {dwell}: streaming {} trips vs brute force {}", got.len(), want.len()))?;
        total += want.len();
    }
    Ok(format!("10,000 streams ({} events) × 4 thresholds: identical ({total} trips)", raw.len()))
}

fn qualitative_reproduction() -> Outcome {
    let mut detail = Vec::new();
    let (mut drops, mut community_up) = (Vec::new(), 0);
    for seed in 0..20u64 {
        let config = ScenarioConfig::lockdown(seed);
        let scenario = generate(&config).map_err(|e| e.to_string())?;
        let territory = scenario.registry.territory();
        let ods = ods_from_events(&scenario.events(), &BuildOptions::default()).map_err(|e| e.to_string())?;
        let a = analyze(
            &ods,
            &territory,
            &AnalysisOptions {
                seed,
                split: config.split_date(),
                ..Default::default()
            },
        )
        .map_err(|e| e.to_string())?;
        let s = &a.summary;
        let drop = s.flow_drop_pct.ok_or("no flow drop")?;
        ensure(drop >= 50.0 && (drop - 60.0).abs() <= 5.0, || format!("seed {seed}: flow drop {drop:.2}%"))?;
        drops.push(drop);
        for (name, c) in [("in", &a.contrast_in), ("out", &a.contrast_out)] {
            let (pre, post) = (c.pre_delta().ok_or("no pre cells")?, c.post_delta().ok_or("no post cells")?);
            ensure(pre >= 0.0 && post < 0.0, || {
                format!("seed {seed} {name}-flow: weekend−weekday pre {pre:.4}, post {post:.4}")
            })?;
        }
        let (pre, post) = (
            s.community_count_pre_median.ok_or("no pre days")?,
            s.community_count_post_median.ok_or("no post days")?,
        );
        community_up += usize::from(post > pre);
        if seed == 0 {
            detail.push(format!(
                "seed 0: Δweekend pre {:+.3} post {:+.3}, median communities {pre} → {post}",
                s.weekend_diversity_delta_pre.unwrap(),
                s.weekend_diversity_delta_post.unwrap()
            ));
        }
    }
    ensure(community_up >= 19, || format!("community median rose in {community_up}/20 seeds"))?;
    let (lo, hi) = drops.iter().fold((f64::MAX, f64::MIN), |(l, h), d| (l.min(*d), h.max(*d)));
    Ok(format!(
        "(a) drop {lo:.2}–{hi:.2}% in 20/20 seeds; (b) weekend inversion in 20/20 seeds, both directions; (c) community median up in {community_up}/20; {}",
        detail.join("")
    ))
}

fn cluster_recovery() -> Outcome {
    let levels = vec![0.1, 0.3, 0.5, 0.7, 0.9];
    let mut hits = 0;
    let mut ks = BTreeMap::new();
    for seed in 0..20u64 {
        let config = ScenarioConfig::planted(seed, 110, levels.clone());
        let scenario = generate(&config).map_err(|e| e.to_string())?;
        let territory = scenario.registry.territory();
        let ods = ods_from_events(&scenario.events(), &BuildOptions::default()).map_err(|e| e.to_string())?;
        let prov = ods
            .iter()
            .map(|od| aggregate_to_province(od, &territory))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| e.to_string())?;
        let series = all_provinces(&prov, &territory, Direction::Out, Default::default()).map_err(|e| e.to_string())?;
        let matrix = SeriesMatrix::from_series(&series).map_err(|e| e.to_string())?;
        ensure(matrix.rows() == 110, || format!("seed {seed}: {} provinces dropped", matrix.dropped.len()))?;
        let sel = select_k(&matrix, 2..=20, seed, 10).map_err(|e| e.to_string())?;
        *ks.entry(sel.k_star).or_insert(0) += 1;
        hits += usize::from(sel.k_star == 5);
    }
    ensure(hits >= 19, || format!("k* = 5 in {hits}/20 seeds ({ks:?})"))?;
    Ok(format!("k* = 5 in {hits}/20 seeds (k* histogram {ks:?})"))
}

fn files(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn odflow(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_odflow"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("odflow {args:?} failed: {}", String::from_utf8_lossy(&out.stderr)));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let p = |s: &str| dir.path().join(s).to_string_lossy().into_owned();
    let mut config = ScenarioConfig::lockdown(11);
    config.days = 28;
    config.regimes[1].start = config.start_date + chrono::Duration::days(14);
    std::fs::write(p("scenario.json"), serde_json::to_vec_pretty(&config).unwrap()).map_err(|e| e.to_string())?;
    odflow(&["synth", "--config", &p("scenario.json"), "--out", &p("data")])?;
    odflow(&["report", "--in", &p("data"), "--out", &p("run1"), "--seed", "7"])?;
    odflow(&["report", "--in", &p("data"), "--out", &p("run2"), "--seed", "7"])?;
    let (a, b) = (files(Path::new(&p("run1"))), files(Path::new(&p("run2"))));
    ensure(a.keys().eq(b.keys()), || "runs produced different file sets".into())?;
    for (path, bytes) in &a {
        ensure(b[path] == *bytes, || format!("{} differs between runs", path.display()))?;
    }
    ensure(a.contains_key(Path::new("summary.json")), || "summary.json missing".into())?;
    let bytes: usize = a.values().map(Vec::len).sum();
    Ok(format!("{} files ({} bytes) byte-identical across two runs", a.len(), bytes))
}

fn main() {
    let criteria = [
        Criterion { id: 1, name: "entropy correctness", limit: Duration::from_secs(1), run: entropy_correctness },
        Criterion { id: 2, name: "map-equation optimality oracle", limit: Duration::from_secs(120), run: map_equation_optimality },
        Criterion { id: 3, name: "stationary-flow oracle", limit: Duration::from_secs(30), run: stationary_flow_oracle },
        Criterion { id: 4, name: "OD conservation", limit: Duration::from_secs(30), run: od_conservation },
        Criterion { id: 5, name: "trip-rule oracle", limit: Duration::from_secs(60), run: trip_rule_oracle },
        Criterion { id: 6, name: "qualitative reproduction", limit: Duration::from_secs(300), run: qualitative_reproduction },
        Criterion { id: 7, name: "cluster-selection recovery", limit: Duration::from_secs(120), run: cluster_recovery },
        Criterion { id: 8, name: "determinism", limit: Duration::from_secs(300), run: determinism },
    ];
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for c in &criteria {
        if !filters.is_empty() && !filters.iter().any(|f| c.name.contains(f.as_str()) || c.id.to_string() == *f) {
            continue;
        }
        let start = Instant::now();
        let result = (c.run)();
        let took = start.elapsed();
        let result = match result {
            Ok(d) if took > c.limit => Err(format!("{d}; runtime over limit")),
            r => r,
        };
        let (tag, detail) = match &result {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        failed += usize::from(result.is_err());
        println!(
            "{tag} [{}] {} ({:.2}s, limit {}s): {detail}",
            c.id,
            c.name,
            took.as_secs_f64(),
            c.limit.as_secs()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
