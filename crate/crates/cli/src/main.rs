use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand, ValueEnum};

use odflow::cluster::{select_k, SeriesMatrix};
use odflow::community::{community_count_series, CommunityOptions, InfomapConfig};
use odflow::diversity::{all_provinces, Direction, DiversityOptions};
use odflow::flows::compute_flows;
use odflow::io::read_json;
use odflow::od::aggregate_to_province;
use odflow::pipeline::{
    build_od, default_split, load_ods, recorded_split, report, store_ods, with_staging, write_clusters,
    write_communities, write_diversity, write_flows, AnalysisOptions, BuildOptions, InputLayout,
};
use odflow::synth::{generate, ScenarioConfig};
use odflow::time::parse_timezone;
use odflow::{Error, Granularity};

#[derive(Parser)]
#[command(name = "odflow", version, about = "Mobility-flow analytics over mobile-phone records")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scenario (registry, CDR/XDR files, ground truth)
    Synth(SynthArgs),
    /// Records → daily municipality OD matrices
    BuildOd(BuildOdArgs),
    /// Municipality ODs → province ODs
    Aggregate(AggregateArgs),
    /// Per-province in/out/self flow tables
    Flows(FlowsArgs),
    /// Per-province in/out flow diversity tables and weekend contrast
    Diversity(DiversityArgs),
    /// k-means clustering of diversity series
    Cluster(ClusterArgs),
    /// Daily map-equation communities of the municipality graph
    Communities(CommunitiesArgs),
    /// Run every stage and write summary.json
    Report(ReportArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the seed of the config file
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Clone, Copy)]
struct RangeArgs {
    #[arg(long)]
    from: Option<NaiveDate>,
    #[arg(long)]
    to: Option<NaiveDate>,
}

#[derive(Args)]
struct StoreArgs {
    /// Directory holding od/<granularity>/ and registry.csv
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Antenna registry; defaults to <in>/registry.csv
    #[arg(long)]
    registry: Option<PathBuf>,
    #[command(flatten)]
    range: RangeArgs,
}

#[derive(Args)]
struct BuildOdArgs {
    /// Directory with registry.csv, cdr/*.csv and xdr/*.csv
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    range: RangeArgs,
    #[arg(long, default_value_t = odflow::ingest::DEFAULT_DWELL_SECONDS)]
    dwell_seconds: i64,
    #[arg(long, default_value = "Europe/Rome")]
    timezone: String,
}

#[derive(Args)]
struct AggregateArgs {
    #[command(flatten)]
    store: StoreArgs,
    /// Target granularity
    #[arg(long, value_enum, default_value_t = GranularityArg::Province)]
    granularity: GranularityArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum GranularityArg {
    Municipality,
    Province,
}

impl From<GranularityArg> for Granularity {
    fn from(g: GranularityArg) -> Self {
        match g {
            GranularityArg::Municipality => Granularity::Municipality,
            GranularityArg::Province => Granularity::Province,
        }
    }
}

#[derive(Args)]
struct FlowsArgs {
    #[command(flatten)]
    store: StoreArgs,
    /// Restrict to these provinces (repeatable)
    #[arg(long)]
    province: Vec<String>,
}

#[derive(Args)]
struct DiversityOpts {
    #[arg(long)]
    include_self_flow_in_diversity: bool,
}

#[derive(Args)]
struct DiversityArgs {
    #[command(flatten)]
    store: StoreArgs,
    #[command(flatten)]
    diversity: DiversityOpts,
    /// First post-intervention day of the weekend contrast
    #[arg(long)]
    split: Option<NaiveDate>,
}

#[derive(Clone, Copy, ValueEnum)]
enum DirectionArg {
    In,
    Out,
    Both,
}

#[derive(Args)]
struct KArgs {
    /// Inclusive k range, e.g. 2..20
    #[arg(long, default_value = "2..20", value_parser = parse_k_range)]
    k_range: RangeInclusive<usize>,
    #[arg(long, default_value_t = odflow::cluster::DEFAULT_RESTARTS)]
    restarts: usize,
}

#[derive(Args)]
struct ClusterArgs {
    #[command(flatten)]
    store: StoreArgs,
    #[arg(long)]
    seed: u64,
    #[command(flatten)]
    k: KArgs,
    #[command(flatten)]
    diversity: DiversityOpts,
    #[arg(long, value_enum, default_value_t = DirectionArg::Both)]
    direction: DirectionArg,
}

#[derive(Args)]
struct InfomapArgs {
    #[arg(long, default_value_t = odflow::community::DEFAULT_TELEPORT)]
    tau: f64,
    #[arg(long, default_value_t = 10)]
    trials: usize,
    /// Days summed into each graph (trailing window)
    #[arg(long, default_value_t = 1)]
    window: usize,
}

#[derive(Args)]
struct CommunitiesArgs {
    #[command(flatten)]
    store: StoreArgs,
    #[arg(long)]
    seed: u64,
    #[command(flatten)]
    infomap: InfomapArgs,
    /// Restrict partition dumps to municipalities of this province
    #[arg(long)]
    region: Option<String>,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory with registry.csv, cdr/*.csv and xdr/*.csv
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: u64,
    #[command(flatten)]
    range: RangeArgs,
    #[arg(long, default_value_t = odflow::ingest::DEFAULT_DWELL_SECONDS)]
    dwell_seconds: i64,
    #[arg(long, default_value = "Europe/Rome")]
    timezone: String,
    #[command(flatten)]
    infomap: InfomapArgs,
    #[command(flatten)]
    k: KArgs,
    #[command(flatten)]
    diversity: DiversityOpts,
    /// First post-intervention day; defaults to the generator's regime
    /// change when present, else the middle of the range
    #[arg(long)]
    split: Option<NaiveDate>,
}

fn parse_k_range(raw: &str) -> Result<RangeInclusive<usize>, String> {
    let (lo, hi) = raw
        .split_once("..=")
        .or_else(|| raw.split_once(".."))
        .or_else(|| raw.split_once('-'))
        .ok_or_else(|| format!("expected LO..HI, got `{raw}`"))?;
    let lo: usize = lo.trim().parse().map_err(|e| format!("bad lower bound: {e}"))?;
    let hi: usize = hi.trim().parse().map_err(|e| format!("bad upper bound: {e}"))?;
    if lo < 1 || lo > hi {
        return Err(format!("k range {lo}..{hi} must satisfy 1 <= LO <= HI"));
    }
    Ok(lo..=hi)
}

enum Failure {
    Usage(String),
    Data(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Data(e)
    }
}

type Outcome = Result<(), Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn check_range(r: RangeArgs) -> Outcome {
    match (r.from, r.to) {
        (Some(f), Some(t)) if f > t => Err(usage(format!("--from {f} is after --to {t}"))),
        _ => Ok(()),
    }
}

fn check_dir(p: &Path, flag: &str) -> Outcome {
    if p.is_dir() {
        Ok(())
    } else {
        Err(usage(format!("{flag} {} is not a directory", p.display())))
    }
}

fn timezone(name: &str) -> Result<odflow::time::Tz, Failure> {
    parse_timezone(name).ok_or_else(|| usage(format!("unknown timezone `{name}`")))
}

fn infomap_config(args: &InfomapArgs, seed: u64) -> Result<InfomapConfig, Failure> {
    if !(args.tau > 0.0 && args.tau < 1.0) {
        return Err(usage(format!("--tau {} outside (0, 1)", args.tau)));
    }
    if args.trials == 0 || args.window == 0 {
        return Err(usage("--trials and --window must be at least 1"));
    }
    Ok(InfomapConfig {
        teleport: args.tau,
        trials: args.trials,
        seed,
    })
}

impl StoreArgs {
    fn validate(&self) -> Result<PathBuf, Failure> {
        check_dir(&self.input, "--in")?;
        check_range(self.range)?;
        let registry = self.registry.clone().unwrap_or_else(|| self.input.join("registry.csv"));
        if !registry.is_file() {
            return Err(usage(format!(
                "registry {} not found (pass --registry)",
                registry.display()
            )));
        }
        Ok(registry)
    }

    fn load(&self, granularity: Granularity) -> Result<(odflow::TerritoryIndex, Vec<odflow::DailyOd>), Failure> {
        let registry = self.validate()?;
        Ok(load_ods(&self.input, &registry, granularity, self.range.from, self.range.to)?)
    }
}

fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}

fn synth(args: SynthArgs) -> Outcome {
    if !args.config.is_file() {
        return Err(usage(format!("--config {} not found", args.config.display())));
    }
    let mut config: ScenarioConfig = read_json(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let scenario = generate(&config)?;
    with_staging(&args.out, |dir| scenario.write(dir))?;
    log::info!("wrote {} days to {}", scenario.days.len(), args.out.display());
    Ok(())
}

fn build(args: BuildOdArgs) -> Outcome {
    check_dir(&args.input, "--in")?;
    check_range(args.range)?;
    let layout = InputLayout::discover(&args.input).map_err(|e| usage(e.to_string()))?;
    let opts = BuildOptions {
        timezone: timezone(&args.timezone)?,
        dwell_seconds: args.dwell_seconds,
        from: args.range.from,
        to: args.range.to,
    };
    let built = build_od(&layout, &opts)?;
    let rejected: u64 = built.tallies.iter().map(|t| t.rejected()).sum();
    if rejected > 0 {
        log::warn!("{rejected} records rejected in total");
    }
    std::fs::create_dir_all(&args.out).map_err(|e| Error::Io {
        path: args.out.clone(),
        source: e,
    })?;
    store_ods(&args.out, &built.territory.checksum(), Granularity::Municipality, &built.municipality)?;
    let registry = args.out.join("registry.csv");
    if absolute(&registry) != absolute(&layout.registry) {
        odflow::io::write_atomic(&registry, |w| {
            w.write_all(&std::fs::read(&layout.registry)?)?;
            Ok(())
        })?;
    }
    Ok(())
}

fn aggregate(args: AggregateArgs) -> Outcome {
    let (territory, ods) = args.store.load(Granularity::Municipality)?;
    let target: Granularity = args.granularity.into();
    let out = match target {
        Granularity::Province => ods
            .iter()
            .map(|od| aggregate_to_province(od, &territory))
            .collect::<Result<Vec<_>, _>>()?,
        Granularity::Municipality => ods,
    };
    store_ods(&args.store.out, &territory.checksum(), target, &out)?;
    Ok(())
}

fn flows(args: FlowsArgs) -> Outcome {
    let (territory, ods) = args.store.load(Granularity::Province)?;
    let provinces: Vec<String> = if args.province.is_empty() {
        territory.provinces().cloned().collect()
    } else {
        args.province.clone()
    };
    let series = provinces
        .iter()
        .map(|p| compute_flows(&ods, p, &territory))
        .collect::<Result<Vec<_>, _>>()?;
    with_staging(&args.store.out.join("flows"), |dir| write_flows(dir, &series))?;
    Ok(())
}

fn diversity_opts(d: &DiversityOpts) -> DiversityOptions {
    DiversityOptions {
        include_self: d.include_self_flow_in_diversity,
    }
}

fn diversity(args: DiversityArgs) -> Outcome {
    let (territory, ods) = args.store.load(Granularity::Province)?;
    let opts = diversity_opts(&args.diversity);
    let d_in = all_provinces(&ods, &territory, Direction::In, opts)?;
    let d_out = all_provinces(&ods, &territory, Direction::Out, opts)?;
    let split = args
        .split
        .unwrap_or_else(|| default_split(ods[0].date, ods[ods.len() - 1].date));
    with_staging(&args.store.out.join("diversity"), |dir| {
        write_diversity(dir, &d_in, &d_out, split)
    })?;
    Ok(())
}

fn cluster(args: ClusterArgs) -> Outcome {
    let (territory, ods) = args.store.load(Granularity::Province)?;
    let opts = diversity_opts(&args.diversity);
    let directions: &[Direction] = match args.direction {
        DirectionArg::In => &[Direction::In],
        DirectionArg::Out => &[Direction::Out],
        DirectionArg::Both => &[Direction::In, Direction::Out],
    };
    let mut results = Vec::new();
    for &direction in directions {
        let series = all_provinces(&ods, &territory, direction, opts)?;
        let matrix = SeriesMatrix::from_series(&series)?;
        let sel = select_k(&matrix, args.k.k_range.clone(), args.seed, args.k.restarts)?;
        log::info!("{direction}: k* = {}", sel.k_star);
        results.push((direction.as_str(), (matrix, sel)));
    }
    let refs: Vec<(&str, &_)> = results.iter().map(|(n, r)| (*n, r)).collect();
    with_staging(&args.store.out.join("cluster"), |dir| write_clusters(dir, &refs))?;
    Ok(())
}

fn communities(args: CommunitiesArgs) -> Outcome {
    let infomap = infomap_config(&args.infomap, args.seed)?;
    let (territory, ods) = args.store.load(Granularity::Municipality)?;
    if let Some(region) = &args.region {
        if !territory.contains_province(region) {
            return Err(usage(format!("--region `{region}` is not a province of the registry")));
        }
    }
    let days = community_count_series(
        &ods,
        &CommunityOptions {
            infomap,
            window: args.infomap.window,
            registry_nodes: None,
        },
    )?;
    let keep = |m: &str| match &args.region {
        Some(r) => territory.province_of(m) == Some(r),
        None => true,
    };
    with_staging(&args.store.out.join("communities"), |dir| write_communities(dir, &days, &keep))?;
    Ok(())
}

fn run_report(args: ReportArgs) -> Outcome {
    check_dir(&args.input, "--in")?;
    check_range(args.range)?;
    let (input, out) = (absolute(&args.input), absolute(&args.out));
    if input.starts_with(&out) {
        return Err(usage("--out must not contain --in"));
    }
    let build = BuildOptions {
        timezone: timezone(&args.timezone)?,
        dwell_seconds: args.dwell_seconds,
        from: args.range.from,
        to: args.range.to,
    };
    let infomap = infomap_config(&args.infomap, args.seed)?;
    let split = match args.split {
        Some(s) => Some(s),
        None => recorded_split(&args.input)?,
    };
    let opts = AnalysisOptions {
        seed: args.seed,
        teleport: infomap.teleport,
        trials: infomap.trials,
        k_range: args.k.k_range.clone(),
        restarts: args.k.restarts,
        include_self: args.diversity.include_self_flow_in_diversity,
        split,
        window: args.infomap.window,
    };
    let summary = report(&args.input, &args.out, &build, &opts)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&summary).expect("summary serializes")
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let outcome = match cli.command {
        Command::Synth(a) => synth(a),
        Command::BuildOd(a) => build(a),
        Command::Aggregate(a) => aggregate(a),
        Command::Flows(a) => flows(a),
        Command::Diversity(a) => diversity(a),
        Command::Cluster(a) => cluster(a),
        Command::Communities(a) => communities(a),
        Command::Report(a) => run_report(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
