//! LQR PI servo design for the short-period model.

use cbf_antiwindup::linalg::eigenvalues;
use cbf_antiwindup::lqr::{design_servo, LqrWeights};
use cbf_antiwindup::lti::{build_extended_system, check_augmentation_controllable, PlantModel};

fn main() {
    let plant = PlantModel::short_period();
    assert!(check_augmentation_controllable(&plant), "integral augmentation must be controllable");
    let ext = build_extended_system(&plant).expect("extended system");
    println!("extended A =\n{:.4}", ext.a);

    // weights on (e_yI, alpha, q) and on the elevator
    let weights = LqrWeights::diagonal(&[20.0, 0.0, 0.2], &[1.0]).expect("weights");
    let (gains, care) = design_servo(&plant, &weights).expect("design");
    println!("K_I = {:.5}", gains.k_i()[(0, 0)]);
    println!("K_P = ({:.5}, {:.5})", gains.k_p()[(0, 0)], gains.k_p()[(0, 1)]);
    println!("Riccati residual {:.2e} after {} Newton steps", care.residual, care.newton_steps);

    let closed = &ext.a - &ext.b * gains.k();
    for z in eigenvalues(&closed).expect("eigenvalues") {
        println!("closed-loop pole {:.4} {:+.4}j", z.re, z.im);
    }

    // heavier integral weight: faster tracking, larger gains
    let heavy = LqrWeights::diagonal(&[80.0, 0.0, 0.2], &[1.0]).expect("weights");
    let (g2, _) = design_servo(&plant, &heavy).expect("design");
    println!("with Q_11 = 80: K_I = {:.5}", g2.k_i()[(0, 0)]);
}
