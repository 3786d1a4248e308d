//! Mobility-flow analytics over pseudonymized mobile-phone records.
//!
//! The pipeline turns CDR/XDR event files into daily origin-destination
//! matrices and derives three products from them: per-province flow
//! volume series, normalized entropy flow diversity (with k-means
//! clustering of provinces), and map-equation communities of the
//! municipality flow graph.
//!
//! ```text
//! records ─▶ ingest ─▶ trips ─▶ od (municipality) ─▶ od (province) ─▶ flows
//!                                     │                    └────────▶ diversity ─▶ cluster
//!                                     └──────────────────────────────▶ community
//! ```

pub mod cluster;
pub mod community;
pub mod diversity;
pub mod error;
pub mod flows;
pub mod ingest;
pub mod io;
pub mod od;
pub mod pipeline;
pub mod synth;
pub mod territory;
pub mod time;

pub use cluster::{kmeans, select_k, Clustering, KSelection, SeriesMatrix};
pub use community::{
    community_count_series, infomap, map_equation, stationary_flow, FlowGraph, InfomapConfig,
    Partition, StationaryFlow,
};
pub use diversity::{
    diversity_series, flow_diversity, weekend_contrast, Direction, DiversityOptions,
    DiversitySeries, WeekendContrast,
};
pub use error::{Error, Result};
pub use flows::{compute_flows, FlowSeries};
pub use ingest::{
    extract_trips, parse_records, AntennaRegistry, CdrRecord, RecordEvent, Trip, XdrRecord,
};
pub use od::{aggregate_to_province, build_daily_od, DailyOd, Granularity, OdStore};
pub use synth::{generate, GeneratedScenario, GroundTruth, Regime, ScenarioConfig};
pub use territory::TerritoryIndex;
