//! The closed-form anti-windup signal next to a brute-force QP solution.

use cbf_antiwindup::aw::{evaluate_aw, qp_reference_solve, CbfParams};
use cbf_antiwindup::lqr::{design_servo, short_period_weights, ServoGains};
use cbf_antiwindup::lti::{PlantModel, PositionLimits};
use nalgebra::{dmatrix, dvector, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() {
    let plant = PlantModel::short_period();
    let (gains, _) = design_servo(&plant, &short_period_weights()).expect("design");
    let limits = PositionLimits::symmetric(1, 10f64.to_radians()).expect("limits");
    let params = CbfParams::new(4.4721).expect("alpha");

    println!("{:>8} {:>8} {:>8} {:>10} {:>10} {:>10} {:>12} {:>12}", "e_yI", "y_cmd", "u_cmd", "lambda1", "lambda2", "v", "v_qp", "G active");
    let states: [(f64, DVector<f64>, f64); 5] = [
        (0.0, dvector![0.0, 0.0], 0.0),
        (0.02, dvector![0.0, 0.0], 0.1),
        (0.0447, dvector![0.0, 0.0], -0.2),
        (-0.06, dvector![0.1, -0.2], 0.3),
        (0.3, dvector![-0.2, 0.5], 0.0),
    ];
    for (e, x_p, y) in states {
        let ev = evaluate_aw(&dvector![e], &x_p, &dvector![y], &plant, &gains, &limits, params).expect("evaluate");
        let v_qp = qp_reference_solve(&ev.delta1, &ev.delta2, &gains).expect("qp");
        let g_active = if ev.lambda1[0] > 0.0 {
            ev.big_g1[0]
        } else if ev.lambda2[0] > 0.0 {
            ev.big_g2[0]
        } else {
            f64::NAN
        };
        println!(
            "{:>8.4} {:>8.3} {:>8.4} {:>10.5} {:>10.5} {:>10.5} {:>12.5} {:>12.1e}",
            e, y, ev.u_cmd[0], ev.lambda1[0], ev.lambda2[0], ev.v[0], v_qp[0], g_active
        );
        assert!(ev.kkt(&gains).holds());
    }

    two_channel();
}

// With two inputs the closed form treats the channels jointly. It matches
// the QP when K_I is diagonal; coupled K_I can pick a different point.
fn two_channel() {
    let plant = PlantModel::new(
        dmatrix![-1.0, 0.3; -0.2, -2.0],
        dmatrix![1.0, 0.2; 0.1, 1.0],
        DMatrix::identity(2, 2),
        DMatrix::zeros(2, 2),
    )
    .expect("plant");
    let limits = PositionLimits::symmetric(2, 0.2).expect("limits");
    let params = CbfParams::new(2.0).expect("alpha");
    let k_p = dmatrix![0.4, 0.1; -0.2, 0.3];
    let cases = [
        ("diagonal K_I", ServoGains::new(dmatrix![-3.0, 0.0; 0.0, -2.0], k_p.clone()).unwrap()),
        ("coupled K_I", ServoGains::new(dmatrix![-3.0, 1.2; 0.8, -2.0], k_p).unwrap()),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    println!();
    for (label, gains) in &cases {
        let (mut worst, mut differing) = (0.0f64, 0);
        for _ in 0..2000 {
            let e = DVector::from_fn(2, |_, _| rng.gen_range(-0.3..0.3));
            let x = DVector::from_fn(2, |_, _| rng.gen_range(-1.0..1.0));
            let y = DVector::from_fn(2, |_, _| rng.gen_range(-0.5..0.5));
            let ev = evaluate_aw(&e, &x, &y, &plant, gains, &limits, params).expect("evaluate");
            let v_qp = qp_reference_solve(&ev.delta1, &ev.delta2, gains).expect("qp");
            let d = (&ev.v - v_qp).amax();
            worst = worst.max(d);
            differing += usize::from(d > 1e-9);
        }
        println!("{label}: closed form vs QP max |dv| {worst:.2e}, {differing} of 2000 states differ");
    }
}
