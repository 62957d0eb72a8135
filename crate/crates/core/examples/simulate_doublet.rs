//! The pitch doublet against +-10 deg elevator limits, with and without
//! anti-windup, plus the unlimited reference and the disturbed case.

use cbf_antiwindup::scenario::{run_scenario, Overrides, SCENARIO_NAMES};

fn main() {
    println!("{:<20} {:>10} {:>10} {:>10} {:>10}", "scenario", "|e_yI|max", "|u_cmd|max", "sat time", "settle");
    let mut runs = Vec::new();
    for name in SCENARIO_NAMES {
        let r = run_scenario(name, Overrides::default()).expect("scenario runs");
        let s = r.summary;
        println!(
            "{name:<20} {:>10.4} {:>10.4} {:>9.2}s {:>9.2}s",
            s.peak_abs_e_yi, s.peak_abs_u_cmd, s.saturated_time, s.settling_time
        );
        runs.push(r);
    }

    // alpha response of the limited cases, once per second
    println!("\n{:>5} {:>9} {:>12} {:>12}", "t", "y_cmd", "alpha no AW", "alpha AW");
    let (no_aw, aw) = (&runs[1].trace, &runs[2].trace);
    for k in (0..no_aw.rows.len()).step_by(1000) {
        println!(
            "{:>5.1} {:>9.4} {:>12.4} {:>12.4}",
            no_aw.rows[k].t, no_aw.rows[k].y_cmd[0], no_aw.rows[k].y_reg[0], aw.rows[k].y_reg[0]
        );
    }
}
