//! Integrator anti-windup for position-limited servo loops, built on a
//! control barrier function whose quadratic program has a closed-form
//! solution.
//!
//! The crate covers LTI plant handling, LQR servo synthesis, the
//! anti-windup law with an independent QP check, fixed-step closed-loop
//! simulation, saturated-mode and loop-gain analysis, and the scenario
//! files and CSV output used by the `cbf-aw` binary.

// `!(a < b)` is used on purpose so NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod aw;
pub mod config;
pub mod linalg;
pub mod lqr;
pub mod lti;
pub mod output;
pub mod scenario;
pub mod sim;
pub mod verify;

pub use analysis::{loop_gain_response, saturated_mode_matrix, FrequencyResponse, SaturatedClosedLoop};
pub use aw::{evaluate_aw, qp_reference_solve, AwEvaluation, CbfParams};
pub use config::{parse_scenario, Scenario};
pub use lqr::{design_servo, solve_care, LqrWeights, ServoGains};
pub use lti::{build_extended_system, ExtendedSystem, PlantModel, PositionLimits};
pub use scenario::{run_scenario, Overrides, ScenarioRun};
pub use sim::{integrate, SimConfig, SimTrace};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("config: {0}")]
    Config(#[from] config::ConfigError),
    #[error("unknown scenario '{0}'; bundled scenarios are {list}", list = scenario::SCENARIO_NAMES.join(", "))]
    UnknownScenario(String),
    #[error(transparent)]
    Lti(#[from] lti::LtiError),
    #[error("synthesis: {0}")]
    Synthesis(#[from] lqr::SynthesisError),
    #[error("anti-windup: {0}")]
    Aw(#[from] aw::AwError),
    #[error("simulation: {0}")]
    Sim(#[from] sim::SimError),
    #[error("analysis: {0}")]
    Analysis(#[from] analysis::AnalysisError),
    #[error("{context}: {source}")]
    Io {
        context: String,
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    /// 1 for bad input, 2 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::UnknownScenario(_) | Error::Lti(_) => 1,
            Error::Sim(sim::SimError::Config(_)) => 1,
            _ => 2,
        }
    }
}
