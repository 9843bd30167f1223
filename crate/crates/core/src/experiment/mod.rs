//! End-to-end virtual experiments: configuration, seeding and acquisition runs.

pub mod config;
pub mod runner;
pub mod seed;

pub use config::{parse_config, AberrationSpec, AnalysisConfig, ExperimentConfig, MapConfig};
pub use runner::{
    assemble_report, load_reference, quality_maps, run_quality_map, run_reference, run_scan,
    simulate_point, simulate_reference, simulate_stacks, FitOutcome, OutputLayout, QualityMaps,
    ReferenceRecord, ReferenceRun, Routing, ScanPlan, ScanReport, ScanVariable,
};
pub use seed::derive_seed;
