//! Scenario harness: configured worlds, the invariant suite and reports.

mod checks;
mod fuzz;
mod report;
mod scenario;
mod world;

pub use checks::{
    AGGREGATE, ATOMICITY, BALANCES, CENSORSHIP, COLLUSION, CONSERVATION, CORRECTNESS, EXPECTATIONS,
    GLOBAL_CHECKS, IDENTITY, INTEGRITY, INTER_CENSORSHIP, ISSUANCE, NON_EQUIVOCATION, PRIVACY,
    RECOVERY, VERIFIABILITY,
};
pub use fuzz::{fuzz_config, fuzz_transfers, FuzzOptions, FuzzSummary, Violation};
pub use report::{
    CensorshipRow, CheckResult, HeightRow, RunReport, SupplyRow, TransferOutcome, TransferRow,
};
pub use scenario::{
    bundled_names, Action, ClientSpec, ConfigError, Expectations, Expected, ImscMode, InstanceSpec,
    PolicySpec, ScenarioConfig, Scheduled, BUNDLED,
};
pub use world::{SetupError, World};

/// Builds the world for `cfg` and runs it to the end.
pub fn run_scenario(cfg: ScenarioConfig) -> Result<RunReport, SetupError> {
    Ok(World::new(cfg)?.run())
}
