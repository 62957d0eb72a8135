//! Closed-loop matrix while the elevator sits on a limit, its spectrum,
//! and a direct check against the anti-windup law.

use cbf_antiwindup::analysis::{saturated_mode_consistency, saturated_mode_matrix, SaturatedClosedLoop, StateSample};
use cbf_antiwindup::aw::CbfParams;
use cbf_antiwindup::lqr::{design_servo, short_period_weights};
use cbf_antiwindup::lti::{PlantModel, PositionLimits};
use nalgebra::dvector;

fn main() {
    let plant = PlantModel::short_period();
    let (gains, _) = design_servo(&plant, &short_period_weights()).expect("design");
    let limits = PositionLimits::symmetric(1, 10f64.to_radians()).expect("limits");

    for alpha in [1.0, 4.4721, 20.0] {
        let params = CbfParams::new(alpha).expect("alpha");
        let sc = saturated_mode_matrix(&plant, &gains, params).expect("matrix");
        let predicted = SaturatedClosedLoop::predicted_spectrum(&plant, params).expect("eig");
        println!("alpha = {alpha}");
        println!("  A~ =\n{:.4}  C0 = {:.4}", sc.a_tilde, sc.c0.transpose());
        println!("  spectrum  {:?}", sc.spectrum.iter().map(|z| format!("{:.4}{:+.4}j", z.re, z.im)).collect::<Vec<_>>());
        println!("  predicted {:?}", predicted.iter().map(|z| format!("{:.4}{:+.4}j", z.re, z.im)).collect::<Vec<_>>());
        println!("  deviation {:.2e}", sc.spectrum_deviation(&plant, params).expect("eig"));
    }

    // a state well beyond the upper limit with the barrier pulling back
    let sample = StateSample {
        e_yi: dvector![0.06],
        x_p: dvector![0.0, 0.0],
        y_cmd: dvector![-0.2],
    };
    let dev = saturated_mode_consistency(&plant, &gains, &limits, CbfParams::new(4.4721).unwrap(), &[sample])
        .expect("state is in the saturated mode");
    println!("integrator rate, law vs matrix form: {dev:.2e}");
}
