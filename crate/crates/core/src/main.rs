use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use cbf_antiwindup::analysis::{loop_gain_response, saturated_mode_matrix, FrequencyResponse, SPECTRUM_TOL};
use cbf_antiwindup::config::Scenario;
use cbf_antiwindup::lti::build_extended_system;
use cbf_antiwindup::scenario::{resolve, run, Overrides};
use cbf_antiwindup::verify::{Verifier, DEFAULT_SEED};
use cbf_antiwindup::Error;

#[derive(Parser)]
#[command(name = "cbf-aw", version, about = "CBF integrator anti-windup: design, simulate, analyze, verify")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

impl From<Switch> for bool {
    fn from(s: Switch) -> bool {
        matches!(s, Switch::On)
    }
}

#[derive(clap::Args)]
struct Common {
    /// Scenario file, or the name of a bundled scenario
    #[arg(long)]
    config: String,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the integration step
    #[arg(long)]
    dt: Option<f64>,
    /// Force anti-windup on or off
    #[arg(long, value_enum)]
    aw: Option<Switch>,
    /// Force the position limits on or off
    #[arg(long, value_enum)]
    limits: Option<Switch>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write trace.csv and summary
    Simulate(Common),
    /// Write the saturated-mode spectrum and the loop-gain response
    Analyze(Common),
    /// Print the servo gains
    Lqr(Common),
    /// Run the acceptance checks; exit 3 if any fails
    Verify {
        /// Accepted for symmetry; the suite always uses the bundled scenarios
        #[arg(long)]
        config: Option<String>,
        /// Where to write the scenario CSV artifacts
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
    },
}

fn load(c: &Common) -> Result<Scenario, Error> {
    let mut s = resolve(&c.config)?;
    Overrides {
        dt: c.dt,
        aw: c.aw.map(Into::into),
        limits: c.limits.map(Into::into),
    }
    .apply(&mut s)?;
    Ok(s)
}

fn out_dir(c: &Common, s: &Scenario) -> PathBuf {
    c.out
        .clone()
        .or_else(|| s.output.directory.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn write(path: &Path, text: &str) -> Result<(), Error> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn simulate(c: &Common) -> Result<(), Error> {
    let s = load(c)?;
    let dir = out_dir(c, &s);
    let r = run(s)?;
    r.write(&dir)?;
    print!("{}", r.summary_text());
    Ok(())
}

fn frequency_csv(fr: &FrequencyResponse) -> String {
    let mut out = String::from("omega");
    let m = fr.channels.len();
    for i in 0..m {
        for j in 0..m {
            out.push_str(&format!(",re_L_{i}{j},im_L_{i}{j}"));
        }
    }
    for i in 0..m {
        out.push_str(&format!(",mag_db_{i},phase_deg_{i}"));
    }
    out.push('\n');
    for (k, w) in fr.frequencies.iter().enumerate() {
        out.push_str(&format!("{w:.16e}"));
        for i in 0..m {
            for j in 0..m {
                let z = fr.loop_gain[k][(i, j)];
                out.push_str(&format!(",{:.16e},{:.16e}", z.re, z.im));
            }
        }
        for ch in &fr.channels {
            out.push_str(&format!(",{:.16e},{:.16e}", ch.magnitude_db[k], ch.phase_deg[k]));
        }
        out.push('\n');
    }
    out
}

fn analyze(c: &Common) -> Result<(), Error> {
    let s = load(c)?;
    let dir = out_dir(c, &s);
    let gains = s.servo_gains()?;
    let sc = saturated_mode_matrix(&s.plant, &gains, s.params)?;
    let deviation = sc.spectrum_deviation(&s.plant, s.params).map_err(cbf_antiwindup::analysis::AnalysisError::from)?;
    let mut spectrum = sc.spectrum.clone();
    cbf_antiwindup::linalg::sort_spectrum(&mut spectrum, SPECTRUM_TOL);
    let mut text = String::from("index,re,im\n");
    for (i, z) in spectrum.iter().enumerate() {
        text.push_str(&format!("{i},{:.16e},{:.16e}\n", z.re, z.im));
    }
    write(&dir.join("spectrum.csv"), &text)?;

    let ext = build_extended_system(&s.plant)?;
    let act = s.analysis.include_actuator.then_some(&s.sim.actuator);
    let fr = loop_gain_response(&ext, &gains, &s.analysis.grid(), act)?;
    write(&dir.join("frequency_response.csv"), &frequency_csv(&fr))?;

    let mut summary = format!(
        "scenario={}\nspectrum_deviation={deviation:.3e}\nspectrum_check={}\nactuator_in_loop={}\n",
        s.name,
        if deviation <= SPECTRUM_TOL { "pass" } else { "fail" },
        act.is_some()
    );
    for (i, ch) in fr.channels.iter().enumerate() {
        let fmt = |x: Option<f64>| x.map_or("none".to_string(), |v| format!("{v:.6}"));
        summary.push_str(&format!("channel_{i}.crossover_rad_s={}\n", fmt(ch.crossover())));
        summary.push_str(&format!("channel_{i}.phase_margin_deg={}\n", fmt(ch.phase_margin())));
        summary.push_str(&format!("channel_{i}.gain_margin_db={}\n", fmt(ch.gain_margin())));
        if let Some(w) = ch.worst_phase_margin() {
            summary.push_str(&format!("channel_{i}.worst_phase_margin_deg={:.6}@{:.6}\n", w.margin, w.omega));
        }
        if let Some(w) = ch.worst_gain_margin() {
            summary.push_str(&format!("channel_{i}.worst_gain_margin_db={:.6}@{:.6}\n", w.margin, w.omega));
        }
    }
    for (w, why) in &fr.skipped {
        eprintln!("skipped ω = {w}: {why}");
    }
    write(&dir.join("analysis_summary"), &summary)?;
    print!("{summary}");
    Ok(())
}

fn lqr(c: &Common) -> Result<(), Error> {
    let s = load(c)?;
    let (g, care) = s.design()?;
    let row = |m: &nalgebra::DMatrix<f64>| {
        (0..m.nrows())
            .map(|i| {
                let cells: Vec<String> = m.row(i).iter().map(|x| format!("{x:.6}")).collect();
                format!("[{}]", cells.join(", "))
            })
            .collect::<Vec<_>>()
            .join(", ")
    };
    println!("K_I = {}", row(g.k_i()));
    println!("K_P = {}", row(g.k_p()));
    if let Some(care) = care {
        println!("riccati_residual = {:.3e}", care.residual);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match &cli.command {
        Command::Simulate(c) => simulate(c),
        Command::Analyze(c) => analyze(c),
        Command::Lqr(c) => lqr(c),
        Command::Verify { out, seed, .. } => {
            let mut v = Verifier::new(*seed);
            if let Some(dir) = out {
                v = v.with_artifacts(dir);
            }
            let outcomes = v.run_all();
            for o in &outcomes {
                println!("{o}");
            }
            let failed = outcomes.iter().filter(|o| !o.passed).count();
            println!("{} of {} criteria passed", outcomes.len() - failed, outcomes.len());
            if failed > 0 {
                return ExitCode::from(3);
            }
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
