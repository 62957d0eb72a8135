//! Loop gain at the elevator input for the short-period design, with and
//! without the actuator in series.

use cbf_antiwindup::analysis::{default_grid, loop_gain_response, FrequencyResponse};
use cbf_antiwindup::lqr::{design_servo, short_period_weights};
use cbf_antiwindup::lti::{build_extended_system, PlantModel};
use cbf_antiwindup::sim::ActuatorModel;

fn report(label: &str, fr: &FrequencyResponse) {
    let ch = &fr.channels[0];
    println!("{label}");
    match (fr.crossover(), fr.phase_margin()) {
        (Some(w), Some(pm)) => println!("  crossover {w:.4} rad/s, phase margin {pm:.3} deg"),
        _ => println!("  no 0 dB crossing on the grid"),
    }
    match ch.phase_crossings.first() {
        Some(c) => println!("  phase crossover {:.4} rad/s, gain margin {:.3} dB", c.omega, c.margin),
        None => println!("  no -180 deg crossing, gain margin infinite"),
    }
    for c in &ch.gain_crossings[1..] {
        println!("  additional 0 dB crossing at {:.4} rad/s (PM {:.3})", c.omega, c.margin);
    }
}

fn main() {
    let plant = PlantModel::short_period();
    let (gains, _) = design_servo(&plant, &short_period_weights()).expect("design");
    let ext = build_extended_system(&plant).expect("extended system");
    let grid = default_grid();

    let bare = loop_gain_response(&ext, &gains, &grid, None).expect("sweep");
    report("design model", &bare);

    let act = ActuatorModel::elevator(true);
    let with_act = loop_gain_response(&ext, &gains, &grid, Some(&act)).expect("sweep");
    report("with 70 rad/s actuator", &with_act);

    println!("\n  omega [rad/s]   |L| [dB]   phase [deg]");
    for i in (0..with_act.frequencies.len()).step_by(40) {
        println!(
            "  {:>12.4} {:>10.3} {:>12.3}",
            with_act.frequencies[i], with_act.channels[0].magnitude_db[i], with_act.channels[0].phase_deg[i]
        );
    }
}
