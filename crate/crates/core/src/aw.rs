//! Control-barrier-function integrator anti-windup.
//!
//! The position limits `u_min <= u_cmd <= u_max` are written as
//! `g1 = u_min − u_cmd <= 0` and `g2 = u_cmd − u_max <= 0`. The barrier
//! conditions `ġ_k + α g_k <= 0`, evaluated along the saturated closed
//! loop, are affine in the integrator modification `v`:
//!
//! ```text
//! G1 =  K_I v + Δ1,   Δ1 =  K_I e_y + K_P ẋ_p + α g1
//! G2 = −K_I v + Δ2,   Δ2 = −K_I e_y − K_P ẋ_p + α g2
//! ```
//!
//! and `v` is the minimum-norm input satisfying `G <= 0`. The closed form
//! is `λ_k = 2 max(0, (K_I K_Iᵀ)⁻¹ Δ_k)`, `v = −½ K_Iᵀ (λ1 − λ2)`.
//! [`qp_reference_solve`] solves the same problem by brute-force active-set
//! enumeration and is kept independent of the closed form so the two can be
//! cross-checked.

use nalgebra::{DMatrix, DVector};

use crate::lqr::ServoGains;
use crate::lti::{saturate, PlantModel, PositionLimits};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AwError {
    #[error("alpha_cbf must be positive and finite, got {0}")]
    Alpha(f64),
    #[error("K_I K_Iᵀ is singular")]
    SingularKi,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("barrier constraint set is infeasible")]
    Infeasible,
    #[error("reference QP supports at most 4 channels, got {0}")]
    TooManyChannels(usize),
}

/// Barrier decay rate `α_cbf` in 1/s.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CbfParams {
    alpha_cbf: f64,
}

impl CbfParams {
    pub fn new(alpha_cbf: f64) -> Result<Self, AwError> {
        if alpha_cbf > 0.0 && alpha_cbf.is_finite() {
            Ok(Self { alpha_cbf })
        } else {
            Err(AwError::Alpha(alpha_cbf))
        }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha_cbf
    }
}

/// Everything computed by one pass of the anti-windup law.
#[derive(Debug, Clone, PartialEq)]
pub struct AwEvaluation {
    pub u_cmd: DVector<f64>,
    pub u_sat: DVector<f64>,
    pub deficiency: DVector<f64>,
    /// Tracking error with the saturated control in `y_reg`.
    pub e_y: DVector<f64>,
    /// Nominal plant rate under the saturated control (no disturbance).
    pub x_p_dot: DVector<f64>,
    pub g1: DVector<f64>,
    pub g2: DVector<f64>,
    pub delta1: DVector<f64>,
    pub delta2: DVector<f64>,
    pub lambda1: DVector<f64>,
    pub lambda2: DVector<f64>,
    pub v: DVector<f64>,
    pub big_g1: DVector<f64>,
    pub big_g2: DVector<f64>,
}

/// Worst-case violations of the optimality conditions for one evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KktResiduals {
    /// Most negative multiplier component (0 when all are non-negative).
    pub dual: f64,
    /// `‖2v + K_Iᵀ(λ1 − λ2)‖∞`.
    pub stationarity: f64,
    /// `|λ1ᵀG1 + λ2ᵀG2|`.
    pub slackness: f64,
    /// Largest barrier value `max_k G_k`.
    pub primal: f64,
}

impl KktResiduals {
    pub fn worst(self, other: Self) -> Self {
        Self {
            dual: self.dual.min(other.dual),
            stationarity: self.stationarity.max(other.stationarity),
            slackness: self.slackness.max(other.slackness),
            primal: self.primal.max(other.primal),
        }
    }

    /// Dual feasibility, exact stationarity and slackness within `1e-9`.
    pub fn holds(&self) -> bool {
        self.dual >= 0.0 && self.stationarity == 0.0 && self.slackness <= 1e-9
    }
}

impl AwEvaluation {
    pub fn kkt(&self, gains: &ServoGains) -> KktResiduals {
        let dual = self
            .lambda1
            .iter()
            .chain(self.lambda2.iter())
            .fold(0.0_f64, |acc, &l| acc.min(l));
        let stat = &self.v * 2.0 + gains.k_i().transpose() * (&self.lambda1 - &self.lambda2);
        let slackness = (self.lambda1.dot(&self.big_g1) + self.lambda2.dot(&self.big_g2)).abs();
        let primal = self
            .big_g1
            .iter()
            .chain(self.big_g2.iter())
            .fold(f64::NEG_INFINITY, |acc, &g| acc.max(g));
        KktResiduals {
            dual,
            stationarity: stat.amax(),
            slackness,
            primal,
        }
    }

    pub fn saturated(&self) -> bool {
        self.deficiency.iter().any(|&d| d != 0.0)
    }
}

/// `u_cmd = −K_I e_yI − K_P x_p`.
pub fn commanded_control(e_yi: &DVector<f64>, x_p: &DVector<f64>, gains: &ServoGains) -> DVector<f64> {
    -(gains.k_i() * e_yi) - gains.k_p() * x_p
}

/// `sat(u_cmd) − u_cmd`.
pub fn control_deficiency(u_cmd: &DVector<f64>, limits: &PositionLimits) -> DVector<f64> {
    saturate(u_cmd, limits) - u_cmd
}

pub fn constraint_values(u_cmd: &DVector<f64>, limits: &PositionLimits) -> (DVector<f64>, DVector<f64>) {
    (limits.u_min() - u_cmd, u_cmd - limits.u_max())
}

pub fn delta_terms(
    e_y: &DVector<f64>,
    x_p_dot: &DVector<f64>,
    g1: &DVector<f64>,
    g2: &DVector<f64>,
    gains: &ServoGains,
    params: CbfParams,
) -> (DVector<f64>, DVector<f64>) {
    let rate = gains.k_i() * e_y + gains.k_p() * x_p_dot;
    let a = params.alpha();
    (&rate + g1 * a, -rate + g2 * a)
}

pub fn lagrange_multipliers(
    delta1: &DVector<f64>,
    delta2: &DVector<f64>,
    gains: &ServoGains,
) -> Result<(DVector<f64>, DVector<f64>), AwError> {
    let kk = gains.k_i() * gains.k_i().transpose();
    let kk_inv = kk.try_inverse().ok_or(AwError::SingularKi)?;
    let clip = |d: &DVector<f64>| (&kk_inv * d).map(|x| 2.0 * x.max(0.0));
    Ok((clip(delta1), clip(delta2)))
}

/// `v = −½ K_Iᵀ (λ1 − λ2)`.
pub fn aw_signal(lambda1: &DVector<f64>, lambda2: &DVector<f64>, gains: &ServoGains) -> DVector<f64> {
    (gains.k_i().transpose() * (lambda1 - lambda2)) * -0.5
}

/// Barrier values computed directly from their definition
/// `G1 = K_I(e_y + v) + K_P ẋ_p + α g1`, `G2 = −K_I(e_y + v) − K_P ẋ_p + α g2`.
pub fn barrier_values(
    e_y: &DVector<f64>,
    v: &DVector<f64>,
    x_p_dot: &DVector<f64>,
    g1: &DVector<f64>,
    g2: &DVector<f64>,
    gains: &ServoGains,
    params: CbfParams,
) -> (DVector<f64>, DVector<f64>) {
    let a = params.alpha();
    let inner = gains.k_i() * (e_y + v) + gains.k_p() * x_p_dot;
    (&inner + g1 * a, -inner + g2 * a)
}

fn check_dims(
    e_yi: &DVector<f64>,
    x_p: &DVector<f64>,
    y_cmd: &DVector<f64>,
    plant: &PlantModel,
    gains: &ServoGains,
    limits: &PositionLimits,
) -> Result<(), AwError> {
    let (np, m) = (plant.n_p(), plant.m());
    if e_yi.len() != m || y_cmd.len() != m || x_p.len() != np {
        return Err(AwError::Dimension(format!(
            "state (e_yI {}, x_p {}, y_cmd {}) vs plant n_p={np}, m={m}",
            e_yi.len(),
            x_p.len(),
            y_cmd.len()
        )));
    }
    if gains.m() != m || gains.n_p() != np || limits.m() != m {
        return Err(AwError::Dimension(format!(
            "gains ({}x{}) or limits ({}) inconsistent with plant n_p={np}, m={m}",
            gains.m(),
            gains.n_p(),
            limits.m()
        )));
    }
    Ok(())
}

/// Runs the full anti-windup pipeline at one state.
pub fn evaluate_aw(
    e_yi: &DVector<f64>,
    x_p: &DVector<f64>,
    y_cmd: &DVector<f64>,
    plant: &PlantModel,
    gains: &ServoGains,
    limits: &PositionLimits,
    params: CbfParams,
) -> Result<AwEvaluation, AwError> {
    check_dims(e_yi, x_p, y_cmd, plant, gains, limits)?;
    let u_cmd = commanded_control(e_yi, x_p, gains);
    let u_sat = saturate(&u_cmd, limits);
    let deficiency = &u_sat - &u_cmd;
    let e_y = plant.regulated_output(x_p, &u_sat) - y_cmd;
    let x_p_dot = plant.state_derivative(x_p, &u_sat);
    let (g1, g2) = constraint_values(&u_cmd, limits);
    let (delta1, delta2) = delta_terms(&e_y, &x_p_dot, &g1, &g2, gains, params);
    let (lambda1, lambda2) = lagrange_multipliers(&delta1, &delta2, gains)?;
    let v = aw_signal(&lambda1, &lambda2, gains);
    let (big_g1, big_g2) = barrier_values(&e_y, &v, &x_p_dot, &g1, &g2, gains, params);
    Ok(AwEvaluation {
        u_cmd,
        u_sat,
        deficiency,
        e_y,
        x_p_dot,
        g1,
        g2,
        delta1,
        delta2,
        lambda1,
        lambda2,
        v,
        big_g1,
        big_g2,
    })
}

/// Minimum-norm `v` subject to `[I; −I] K_I v + [Δ1; Δ2] <= 0`, by
/// enumerating every subset of the `2m` constraints as the active set.
/// Each subset with independent rows yields a KKT candidate; the
/// primal- and dual-feasible candidate of least norm is returned.
pub fn qp_reference_solve(
    delta1: &DVector<f64>,
    delta2: &DVector<f64>,
    gains: &ServoGains,
) -> Result<DVector<f64>, AwError> {
    let m = gains.m();
    if m > 4 {
        return Err(AwError::TooManyChannels(m));
    }
    if delta1.len() != m || delta2.len() != m {
        return Err(AwError::Dimension("delta length differs from K_I".into()));
    }
    let rows = 2 * m;
    let mut a = DMatrix::zeros(rows, m);
    a.view_mut((0, 0), (m, m)).copy_from(gains.k_i());
    a.view_mut((m, 0), (m, m)).copy_from(&(-gains.k_i()));
    let mut b = DVector::zeros(rows);
    b.rows_mut(0, m).copy_from(delta1);
    b.rows_mut(m, m).copy_from(delta2);

    let scale = 1.0 + b.amax() + a.amax();
    let tol = 1e-12 * scale;
    let mut best: Option<DVector<f64>> = None;
    for mask in 0u32..(1u32 << rows) {
        let active: Vec<usize> = (0..rows).filter(|i| mask & (1 << i) != 0).collect();
        let v = if active.is_empty() {
            DVector::zeros(m)
        } else {
            let k = active.len();
            let a_s = DMatrix::from_fn(k, m, |r, c| a[(active[r], c)]);
            let b_s = DVector::from_fn(k, |r, _| b[active[r]]);
            let gram = &a_s * a_s.transpose();
            if crate::linalg::rank(&gram) < k {
                continue;
            }
            let Some(gram_inv) = gram.try_inverse() else {
                continue;
            };
            let mu = gram_inv * b_s * 2.0;
            if mu.iter().any(|&x| x < -tol) {
                continue;
            }
            a_s.transpose() * mu * -0.5
        };
        let g = &a * &v + &b;
        if g.iter().any(|&x| x > tol * (1.0 + v.amax())) {
            continue;
        }
        if best.as_ref().is_none_or(|bv| v.norm() < bv.norm()) {
            best = Some(v);
        }
    }
    best.ok_or(AwError::Infeasible)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};

    fn reference_gains() -> ServoGains {
        ServoGains::new(dmatrix![-4.4721], dmatrix![-1.0369, -0.58504]).unwrap()
    }

    fn lim() -> PositionLimits {
        PositionLimits::symmetric(1, 0.17453).unwrap()
    }

    #[test]
    fn commanded_control_examples() {
        let g = reference_gains();
        assert_eq!(commanded_control(&dvector![0.0], &dvector![0.0, 0.0], &g)[0], 0.0);
        let u = commanded_control(&dvector![0.1], &dvector![0.0, 0.0], &g)[0];
        assert!((u - 0.44721).abs() < 1e-12);
        let u = commanded_control(&dvector![0.0], &dvector![0.1, 0.0], &g)[0];
        assert!((u - 0.10369).abs() < 1e-12);
    }

    #[test]
    fn deficiency_examples() {
        assert!((control_deficiency(&dvector![0.2], &lim())[0] + 0.02547).abs() < 1e-12);
        assert_eq!(control_deficiency(&dvector![0.1], &lim())[0], 0.0);
        assert!((control_deficiency(&dvector![-0.2], &lim())[0] - 0.02547).abs() < 1e-12);
    }

    #[test]
    fn constraint_examples() {
        let (g1, g2) = constraint_values(&dvector![0.0], &lim());
        assert_eq!((g1[0], g2[0]), (-0.17453, -0.17453));
        let (g1, g2) = constraint_values(&dvector![0.2], &lim());
        assert!((g1[0] + 0.37453).abs() < 1e-12 && (g2[0] - 0.02547).abs() < 1e-12);
        let (_, g2) = constraint_values(&dvector![0.17453], &lim());
        assert_eq!(g2[0], 0.0);
    }

    #[test]
    fn delta_examples() {
        let g = reference_gains();
        let p = CbfParams::new(4.4721).unwrap();
        let z = dvector![0.0];
        let (d1, d2) = delta_terms(&z, &dvector![0.0, 0.0], &z, &z, &g, p);
        assert_eq!((d1[0], d2[0]), (0.0, 0.0));
        let gg = dvector![-0.1];
        let (d1, d2) = delta_terms(&z, &dvector![0.0, 0.0], &gg, &gg, &g, p);
        assert!((d1[0] + 0.44721).abs() < 1e-12 && (d2[0] + 0.44721).abs() < 1e-12);
        let (d1, d2) = delta_terms(&dvector![0.3], &dvector![0.2, -0.7], &dvector![0.05], &dvector![-0.4], &g, p);
        assert!((d1[0] + d2[0] - 4.4721 * (0.05 - 0.4)).abs() < 1e-12);
    }

    #[test]
    fn multiplier_examples() {
        let g = reference_gains();
        let (l1, l2) = lagrange_multipliers(&dvector![-1.0], &dvector![-1.0], &g).unwrap();
        assert_eq!((l1[0], l2[0]), (0.0, 0.0));
        let (l1, l2) = lagrange_multipliers(&dvector![1.0], &dvector![-1.0], &g).unwrap();
        assert!((l1[0] - 2.0 / (4.4721 * 4.4721)).abs() < 1e-15);
        assert!((l1[0] - 0.1).abs() < 1e-5);
        assert_eq!(l2[0], 0.0);
        // exact zero tie stays inactive
        let (l1, _) = lagrange_multipliers(&dvector![0.0], &dvector![-1.0], &g).unwrap();
        assert_eq!(l1[0], 0.0);
    }

    #[test]
    fn signal_examples() {
        let g = reference_gains();
        assert_eq!(aw_signal(&dvector![0.0], &dvector![0.0], &g)[0], 0.0);
        let v = aw_signal(&dvector![0.1], &dvector![0.0], &g)[0];
        assert!((v - 0.223605).abs() < 1e-12);
        assert_eq!(aw_signal(&dvector![0.3], &dvector![0.3], &g)[0], 0.0);
    }

    #[test]
    fn reference_qp_examples() {
        let g = reference_gains();
        assert_eq!(qp_reference_solve(&dvector![-1.0], &dvector![-1.0], &g).unwrap()[0], 0.0);
        let v = qp_reference_solve(&dvector![-3.0], &dvector![1.0], &g).unwrap()[0];
        assert!((v - 1.0 / -4.4721).abs() < 1e-12);
        assert!((v + 0.22361).abs() < 1e-5);
    }

    #[test]
    fn reference_qp_infeasible() {
        let g = reference_gains();
        // both barrier conditions demand opposite signs of K_I v
        assert_eq!(
            qp_reference_solve(&dvector![1.0], &dvector![1.0], &g),
            Err(AwError::Infeasible)
        );
    }

    #[test]
    fn unsaturated_state_has_zero_v() {
        let plant = PlantModel::short_period();
        let g = reference_gains();
        let p = CbfParams::new(4.4721).unwrap();
        let ev = evaluate_aw(&dvector![0.0], &dvector![0.0, 0.0], &dvector![0.0], &plant, &g, &lim(), p).unwrap();
        assert_eq!(ev.v[0], 0.0);
        assert_eq!(ev.big_g1, ev.delta1);
        assert_eq!(ev.big_g2, ev.delta2);
        assert!(!ev.saturated());
    }

    #[test]
    fn saturated_above_max_but_receding() {
        let plant = PlantModel::short_period();
        let g = reference_gains();
        let p = CbfParams::new(4.4721).unwrap();
        // u_cmd = 0.2 > u_max with x_p = 0, y_cmd = 0: the saturated elevator
        // already drives u_cmd back toward the limit fast enough, Δ2 < 0
        let e = dvector![0.2 / 4.4721];
        let ev = evaluate_aw(&e, &dvector![0.0, 0.0], &dvector![0.0], &plant, &g, &lim(), p).unwrap();
        assert!((ev.u_cmd[0] - 0.2).abs() < 1e-12);
        assert!(ev.saturated());
        assert!(ev.delta2[0] < 0.0);
        assert_eq!((ev.lambda1[0], ev.lambda2[0], ev.v[0]), (0.0, 0.0, 0.0));
        let oracle = qp_reference_solve(&ev.delta1, &ev.delta2, &g).unwrap();
        assert_eq!(oracle[0], 0.0);
    }

    #[test]
    fn saturated_above_max_active() {
        let plant = PlantModel::short_period();
        let g = reference_gains();
        let p = CbfParams::new(4.4721).unwrap();
        let e = dvector![0.2 / 4.4721];
        let ev = evaluate_aw(&e, &dvector![0.0, 0.0], &dvector![-0.2], &plant, &g, &lim(), p).unwrap();
        assert!(ev.lambda2[0] > 0.0);
        assert_eq!(ev.lambda1[0], 0.0);
        assert!(ev.v[0] < 0.0);
        assert!(ev.big_g2[0].abs() < 1e-9);
        let oracle = qp_reference_solve(&ev.delta1, &ev.delta2, &g).unwrap();
        assert!((oracle[0] - ev.v[0]).abs() < 1e-12);
        assert!(ev.kkt(&g).holds());
    }

    #[test]
    fn alpha_must_be_positive() {
        assert!(CbfParams::new(0.0).is_err());
        assert!(CbfParams::new(f64::NAN).is_err());
    }

    #[test]
    fn dimension_mismatch() {
        let plant = PlantModel::short_period();
        let p = CbfParams::new(1.0).unwrap();
        assert!(matches!(
            evaluate_aw(&dvector![0.0], &dvector![0.0], &dvector![0.0], &plant, &reference_gains(), &lim(), p),
            Err(AwError::Dimension(_))
        ));
    }
}
