//! Simulation study: data generator, analytic oracles, and replicated
//! experiment runners.

pub mod dgp;
pub mod experiments;
pub mod oracle;

pub use dgp::{draw_trial, draw_trial_observed_z, Scenario, SimulatedTrial, SizeSpec};
pub use experiments::{
    preset, run_bias_bound_experiment, run_power_experiment, run_type1_experiment,
    scenario_preset, BiasBoundCell, BiasBoundConfig, ExperimentPreset, ExperimentSettings, Method,
    PowerSummary, RejectionCell, RejectionConfig, ScenarioSpec,
};
pub use oracle::{oracle_nuisance_fits, oracle_values, oracle_values_mc, McOracle, OracleValues};
