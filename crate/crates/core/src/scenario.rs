//! The four bundled pitch-doublet scenarios and a runner for any scenario.

use std::path::Path;
use std::time::{Duration, Instant};

use crate::analysis::{saturated_mode_matrix, AnalysisError, SPECTRUM_TOL};
use crate::config::{load_scenario, parse_scenario, Scenario};
use crate::lqr::ServoGains;
use crate::output::{emit_csv, render_summary};
use crate::sim::{integrate, SimSummary, SimTrace};
use crate::Error;

pub const SCENARIO_NAMES: [&str; 4] = [
    "fig2_unlimited",
    "fig3_limited_no_aw",
    "fig4_limited_aw",
    "fig6_disturbance",
];

pub fn fixture_text(name: &str) -> Option<&'static str> {
    Some(match name {
        "fig2_unlimited" => include_str!("../fixtures/fig2_unlimited.cfg"),
        "fig3_limited_no_aw" => include_str!("../fixtures/fig3_limited_no_aw.cfg"),
        "fig4_limited_aw" => include_str!("../fixtures/fig4_limited_aw.cfg"),
        "fig6_disturbance" => include_str!("../fixtures/fig6_disturbance.cfg"),
        _ => return None,
    })
}

pub fn bundled(name: &str) -> Result<Scenario, Error> {
    let text = fixture_text(name).ok_or_else(|| Error::UnknownScenario(name.to_string()))?;
    Ok(parse_scenario(text)?)
}

/// A path to a scenario file, or the name of a bundled scenario when no
/// such file exists.
pub fn resolve(spec: &str) -> Result<Scenario, Error> {
    let path = Path::new(spec);
    if !path.exists() && fixture_text(spec).is_some() {
        return bundled(spec);
    }
    Ok(load_scenario(path)?)
}

/// Command-line style overrides applied on top of a scenario.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Overrides {
    pub dt: Option<f64>,
    pub aw: Option<bool>,
    pub limits: Option<bool>,
}

impl Overrides {
    pub fn apply(&self, s: &mut Scenario) -> Result<(), Error> {
        if let Some(dt) = self.dt {
            s.sim.dt = dt;
        }
        if let Some(aw) = self.aw {
            s.sim.aw_enabled = aw;
        }
        if let Some(l) = self.limits {
            s.sim.limits_enabled = l;
        }
        s.sim.validate(s.plant.n_p(), s.plant.m())?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub scenario: Scenario,
    pub gains: ServoGains,
    pub trace: SimTrace,
    pub summary: SimSummary,
    /// Saturated-mode spectrum deviation from `{−α} ∪ eig(A_p)`.
    pub spectrum_deviation: f64,
    pub wall_time: Duration,
}

impl ScenarioRun {
    /// Writes `trace.csv` and `summary` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), Error> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        let csv = dir.join("trace.csv");
        emit_csv(&self.trace, &self.scenario.output.columns, &csv)
            .map_err(|e| Error::io(format!("writing {}", csv.display()), e))?;
        let summary = dir.join("summary");
        std::fs::write(&summary, self.summary_text())
            .map_err(|e| Error::io(format!("writing {}", summary.display()), e))?;
        Ok(())
    }

    pub fn summary_text(&self) -> String {
        let s = &self.scenario.sim;
        render_summary(
            &self.scenario.name,
            &self.summary,
            &[
                ("aw_enabled", s.aw_enabled.to_string()),
                ("limits_enabled", s.limits_enabled.to_string()),
                ("dt", format!("{:?}", s.dt)),
                ("rows", self.trace.rows.len().to_string()),
                ("kkt_holds", self.trace.kkt.holds().to_string()),
                (
                    "spectrum_check",
                    if self.spectrum_deviation <= SPECTRUM_TOL { "pass" } else { "fail" }.to_string(),
                ),
                ("wall_time_s", format!("{:.3}", self.wall_time.as_secs_f64())),
            ],
        )
    }
}

pub fn run(scenario: Scenario) -> Result<ScenarioRun, Error> {
    let start = Instant::now();
    let gains = scenario.servo_gains()?;
    let trace = integrate(&scenario.sim, &scenario.plant, &gains, &scenario.limits, scenario.params)?;
    let summary = trace.summary();
    let spectrum_deviation = saturated_mode_matrix(&scenario.plant, &gains, scenario.params)?
        .spectrum_deviation(&scenario.plant, scenario.params)
        .map_err(AnalysisError::from)?;
    Ok(ScenarioRun {
        scenario,
        gains,
        trace,
        summary,
        spectrum_deviation,
        wall_time: start.elapsed(),
    })
}

/// Runs a bundled scenario by name.
pub fn run_scenario(name: &str, overrides: Overrides) -> Result<ScenarioRun, Error> {
    let mut s = bundled(name)?;
    overrides.apply(&mut s)?;
    run(s)
}
