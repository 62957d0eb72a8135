//! Fixed-step RK4 simulation of the position-limited servo loop with the
//! anti-windup integrator, optional second-order actuator and an additive
//! disturbance that the controller does not see.
//!
//! State layout: `[e_yI (m), x_p (n_p), x_a (m), ẋ_a (m)]`.

use nalgebra::DVector;
use std::f64::consts::PI;

use crate::aw::{evaluate_aw, AwError, AwEvaluation, CbfParams, KktResiduals};
use crate::lqr::ServoGains;
use crate::lti::{PlantModel, PositionLimits};

/// Largest admissible step; resolves a 70 rad/s actuator comfortably.
pub const MAX_DT: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("non-finite value in state at step {step} (t = {t})")]
    NonFinite { step: usize, t: f64 },
    #[error(transparent)]
    Aw(#[from] AwError),
}

/// Second-order servo `ẍ_a = ωn²(u − x_a) − 2ζωn ẋ_a`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActuatorModel {
    pub natural_frequency: f64,
    pub damping_ratio: f64,
    pub enabled: bool,
}

impl ActuatorModel {
    pub fn new(natural_frequency: f64, damping_ratio: f64, enabled: bool) -> Result<Self, SimError> {
        if !(natural_frequency > 0.0 && natural_frequency.is_finite()) {
            return Err(SimError::Config(format!(
                "actuator natural frequency must be positive, got {natural_frequency}"
            )));
        }
        if !(damping_ratio > 0.0 && damping_ratio.is_finite()) {
            return Err(SimError::Config(format!(
                "actuator damping ratio must be positive, got {damping_ratio}"
            )));
        }
        Ok(Self {
            natural_frequency,
            damping_ratio,
            enabled,
        })
    }

    /// 70 rad/s, ζ = 0.7.
    pub fn elevator(enabled: bool) -> Self {
        Self {
            natural_frequency: 70.0,
            damping_ratio: 0.7,
            enabled,
        }
    }

    pub fn disabled() -> Self {
        Self::elevator(false)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignalKind {
    Zero,
    Step,
    Doublet,
    Sinusoid,
}

impl SignalKind {
    pub fn name(self) -> &'static str {
        match self {
            SignalKind::Zero => "zero",
            SignalKind::Step => "step",
            SignalKind::Doublet => "doublet",
            SignalKind::Sinusoid => "sinusoid",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "zero" => SignalKind::Zero,
            "step" => SignalKind::Step,
            "doublet" => SignalKind::Doublet,
            "sinusoid" => SignalKind::Sinusoid,
            _ => return None,
        })
    }
}

/// Scalar test signal. Steps start at `t_start`; doublets hold
/// `+amplitude` on `[t_start, t_half)` and `−amplitude` on `[t_half, t_end)`;
/// sinusoids are `amplitude sin(frequency t)` for all `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignalSpec {
    pub kind: SignalKind,
    pub amplitude: f64,
    pub t_start: f64,
    pub t_half: f64,
    pub t_end: f64,
    pub frequency: f64,
}

impl Default for SignalSpec {
    fn default() -> Self {
        Self::zero()
    }
}

impl SignalSpec {
    pub fn zero() -> Self {
        Self {
            kind: SignalKind::Zero,
            amplitude: 0.0,
            t_start: 1.0,
            t_half: 6.0,
            t_end: 11.0,
            frequency: 0.0,
        }
    }

    pub fn step(amplitude: f64, t_start: f64) -> Self {
        Self {
            kind: SignalKind::Step,
            amplitude,
            t_start,
            ..Self::zero()
        }
    }

    pub fn doublet(amplitude: f64, t_start: f64, t_half: f64, t_end: f64) -> Self {
        Self {
            kind: SignalKind::Doublet,
            amplitude,
            t_start,
            t_half,
            t_end,
            frequency: 0.0,
        }
    }

    /// 10 deg doublet at 1 s / 6 s / 11 s.
    pub fn pitch_doublet() -> Self {
        Self::doublet(10.0 * PI / 180.0, 1.0, 6.0, 11.0)
    }

    pub fn sinusoid(amplitude: f64, frequency: f64) -> Self {
        Self {
            kind: SignalKind::Sinusoid,
            amplitude,
            frequency,
            ..Self::zero()
        }
    }

    /// `4π/180 · sin(2t)`.
    pub fn gust() -> Self {
        Self::sinusoid(4.0 * PI / 180.0, 2.0)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let finite = [self.amplitude, self.t_start, self.t_half, self.t_end, self.frequency]
            .iter()
            .all(|x| x.is_finite());
        if !finite {
            return Err(SimError::Config("signal parameters must be finite".into()));
        }
        match self.kind {
            SignalKind::Step if self.t_start < 0.0 => {
                Err(SimError::Config("step start time must be non-negative".into()))
            }
            SignalKind::Doublet
                if !(0.0 <= self.t_start && self.t_start < self.t_half && self.t_half < self.t_end) =>
            {
                Err(SimError::Config(format!(
                    "doublet needs 0 <= t_start < t_half < t_end, got {} / {} / {}",
                    self.t_start, self.t_half, self.t_end
                )))
            }
            SignalKind::Sinusoid if self.frequency < 0.0 => {
                Err(SimError::Config("sinusoid frequency must be non-negative".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn value(&self, t: f64) -> f64 {
        match self.kind {
            SignalKind::Zero => 0.0,
            SignalKind::Step => {
                if t >= self.t_start {
                    self.amplitude
                } else {
                    0.0
                }
            }
            SignalKind::Doublet => command_doublet(t, self.amplitude, self.t_start, self.t_half, self.t_end),
            SignalKind::Sinusoid => sinusoidal_disturbance(t, self.amplitude, self.frequency),
        }
    }

    fn piecewise_constant(&self) -> bool {
        !matches!(self.kind, SignalKind::Sinusoid)
    }

    /// Value used by an integration stage at time `t` within the step
    /// starting at `t0`. Piecewise-constant signals are sampled once at the
    /// step midpoint so that switching instants fall on step boundaries.
    pub fn value_in_step(&self, t0: f64, dt: f64, t: f64) -> f64 {
        if self.piecewise_constant() {
            self.value(t0 + 0.5 * dt)
        } else {
            self.value(t)
        }
    }
}

pub fn command_doublet(t: f64, amplitude: f64, t_start: f64, t_half: f64, t_end: f64) -> f64 {
    if t >= t_start && t < t_half {
        amplitude
    } else if t >= t_half && t < t_end {
        -amplitude
    } else {
        0.0
    }
}

pub fn sinusoidal_disturbance(t: f64, amplitude: f64, frequency: f64) -> f64 {
    amplitude * (frequency * t).sin()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub dt: f64,
    pub duration: f64,
    pub aw_enabled: bool,
    pub limits_enabled: bool,
    pub actuator: ActuatorModel,
    pub command: SignalSpec,
    /// Per-channel scaling of the scalar command; all ones by default.
    pub command_direction: DVector<f64>,
    pub disturbance: SignalSpec,
    pub disturbance_column: DVector<f64>,
    pub initial_state: DVector<f64>,
}

impl SimConfig {
    /// Defaults for a plant with `n_p` states and `m` inputs: 1 ms step,
    /// 15 s, no command, no disturbance, everything else off.
    pub fn new(n_p: usize, m: usize) -> Self {
        let mut column = DVector::zeros(n_p);
        if n_p > 0 {
            column[0] = 1.0;
        }
        Self {
            dt: 1e-3,
            duration: 15.0,
            aw_enabled: false,
            limits_enabled: false,
            actuator: ActuatorModel::disabled(),
            command: SignalSpec::zero(),
            command_direction: DVector::from_element(m, 1.0),
            disturbance: SignalSpec::zero(),
            disturbance_column: column,
            initial_state: DVector::zeros(n_p + 3 * m),
        }
    }

    pub fn steps(&self) -> usize {
        (self.duration / self.dt + 1e-9).floor() as usize
    }

    pub fn validate(&self, n_p: usize, m: usize) -> Result<(), SimError> {
        if !(self.dt > 0.0 && self.dt <= self.duration && self.duration.is_finite()) {
            return Err(SimError::Config(format!(
                "need 0 < dt <= duration, got dt = {}, duration = {}",
                self.dt, self.duration
            )));
        }
        if self.dt > MAX_DT {
            return Err(SimError::Config(format!("dt = {} exceeds {MAX_DT}", self.dt)));
        }
        ActuatorModel::new(self.actuator.natural_frequency, self.actuator.damping_ratio, true)?;
        self.command.validate()?;
        self.disturbance.validate()?;
        if self.command_direction.len() != m {
            return Err(SimError::Config(format!(
                "command direction has {} entries, expected {m}",
                self.command_direction.len()
            )));
        }
        if self.disturbance_column.len() != n_p {
            return Err(SimError::Config(format!(
                "disturbance column has {} entries, expected {n_p}",
                self.disturbance_column.len()
            )));
        }
        if self.initial_state.len() != n_p + 3 * m {
            return Err(SimError::Config(format!(
                "initial state has {} entries, expected n + 2m = {}",
                self.initial_state.len(),
                n_p + 3 * m
            )));
        }
        if self.initial_state.iter().any(|x| !x.is_finite())
            || self.command_direction.iter().any(|x| !x.is_finite())
            || self.disturbance_column.iter().any(|x| !x.is_finite())
        {
            return Err(SimError::Config("vectors must be finite".into()));
        }
        Ok(())
    }
}

/// Everything the closed loop needs, borrowed.
#[derive(Debug, Clone, Copy)]
pub struct ClosedLoop<'a> {
    pub plant: &'a PlantModel,
    pub gains: &'a ServoGains,
    pub limits: &'a PositionLimits,
    pub params: CbfParams,
    pub config: &'a SimConfig,
}

/// Derivative plus the signals that produced it.
#[derive(Debug, Clone)]
pub struct StageEval {
    pub derivative: DVector<f64>,
    pub aw: AwEvaluation,
    /// Applied integrator modification (zero when AW is off).
    pub v: DVector<f64>,
    /// Control fed to the actuator / plant input path.
    pub u: DVector<f64>,
    /// Control actually entering the plant.
    pub u_plant: DVector<f64>,
    pub y_reg: DVector<f64>,
    pub y_cmd: DVector<f64>,
    pub d: f64,
}

impl<'a> ClosedLoop<'a> {
    fn dims(&self) -> (usize, usize) {
        (self.plant.n_p(), self.plant.m())
    }

    /// Derivative with explicit exogenous inputs.
    pub fn evaluate(&self, state: &DVector<f64>, y_cmd_scalar: f64, d: f64) -> Result<StageEval, SimError> {
        let (np, m) = self.dims();
        let cfg = self.config;
        let e_yi = state.rows(0, m).into_owned();
        let x_p = state.rows(m, np).into_owned();
        let x_a = state.rows(m + np, m).into_owned();
        let x_a_dot = state.rows(2 * m + np, m).into_owned();
        let y_cmd = &cfg.command_direction * y_cmd_scalar;

        let aw = evaluate_aw(&e_yi, &x_p, &y_cmd, self.plant, self.gains, self.limits, self.params)?;
        let u = if cfg.limits_enabled {
            aw.u_sat.clone()
        } else {
            aw.u_cmd.clone()
        };
        let v = if cfg.aw_enabled {
            aw.v.clone()
        } else {
            DVector::zeros(m)
        };
        let u_plant = if cfg.actuator.enabled { x_a.clone() } else { u.clone() };

        let x_p_dot = self.plant.state_derivative(&x_p, &u_plant) + &cfg.disturbance_column * d;
        let y_reg = self.plant.regulated_output(&x_p, &u_plant);
        let e_yi_dot = &y_reg - &y_cmd + &v;

        let mut deriv = DVector::zeros(state.len());
        deriv.rows_mut(0, m).copy_from(&e_yi_dot);
        deriv.rows_mut(m, np).copy_from(&x_p_dot);
        if cfg.actuator.enabled {
            let wn = cfg.actuator.natural_frequency;
            let zeta = cfg.actuator.damping_ratio;
            let acc = (&u - &x_a) * (wn * wn) - &x_a_dot * (2.0 * zeta * wn);
            deriv.rows_mut(m + np, m).copy_from(&x_a_dot);
            deriv.rows_mut(2 * m + np, m).copy_from(&acc);
        }
        Ok(StageEval {
            derivative: deriv,
            aw,
            v,
            u,
            u_plant,
            y_reg,
            y_cmd,
            d,
        })
    }
}

/// Closed-loop state derivative at time `t`, with the command and the
/// disturbance evaluated pointwise at `t`.
pub fn closed_loop_derivative(
    state: &DVector<f64>,
    t: f64,
    config: &SimConfig,
    plant: &PlantModel,
    gains: &ServoGains,
    limits: &PositionLimits,
    params: CbfParams,
) -> Result<DVector<f64>, SimError> {
    let cl = ClosedLoop {
        plant,
        gains,
        limits,
        params,
        config,
    };
    Ok(cl
        .evaluate(state, config.command.value(t), config.disturbance.value(t))?
        .derivative)
}

/// One logged sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SimRow {
    pub t: f64,
    pub y_cmd: DVector<f64>,
    pub y_cmd_plus_v: DVector<f64>,
    pub y_reg: DVector<f64>,
    pub e_yi: DVector<f64>,
    pub x_p: DVector<f64>,
    pub u_cmd: DVector<f64>,
    /// Control applied ahead of the actuator (saturated when limits are on).
    pub u: DVector<f64>,
    /// First difference of `u`.
    pub u_rate: DVector<f64>,
    pub x_a: DVector<f64>,
    pub x_a_dot: DVector<f64>,
    pub v: DVector<f64>,
    pub lambda1: DVector<f64>,
    pub lambda2: DVector<f64>,
    pub g1: DVector<f64>,
    pub g2: DVector<f64>,
    pub big_g1: DVector<f64>,
    pub big_g2: DVector<f64>,
    pub d: f64,
    pub saturated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    pub n_p: usize,
    pub m: usize,
    pub dt: f64,
    pub rows: Vec<SimRow>,
    pub final_state: DVector<f64>,
    /// Worst optimality-condition residuals over every AW evaluation made
    /// during the run, including intermediate RK4 stages.
    pub kkt: KktResiduals,
    pub aw_evaluations: usize,
}

/// Peak / duration metrics over a trace.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SimSummary {
    pub peak_abs_e_yi: f64,
    pub peak_abs_u_cmd: f64,
    pub peak_abs_u: f64,
    pub saturated_time: f64,
    pub peak_violation: f64,
    /// Largest barrier value among samples with a positive multiplier.
    pub peak_active_barrier: f64,
    /// Largest barrier value over all samples.
    pub peak_barrier: f64,
    /// Time after which `|y_reg − y_cmd|` stays within 2% of the peak command.
    pub settling_time: f64,
    pub final_tracking_error: f64,
}

fn amax(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |a, x| a.max(x.abs()))
}

fn vmax(v: &DVector<f64>) -> f64 {
    v.iter().fold(f64::NEG_INFINITY, |a, &x| a.max(x))
}

impl SimTrace {
    pub fn summary(&self) -> SimSummary {
        let mut s = SimSummary::default();
        let mut peak_cmd: f64 = 0.0;
        let mut saturated = 0usize;
        for r in &self.rows {
            s.peak_abs_e_yi = s.peak_abs_e_yi.max(amax(&r.e_yi));
            s.peak_abs_u_cmd = s.peak_abs_u_cmd.max(amax(&r.u_cmd));
            s.peak_abs_u = s.peak_abs_u.max(amax(&r.u));
            saturated += usize::from(r.saturated);
            s.peak_violation = s.peak_violation.max(vmax(&r.g1).max(vmax(&r.g2)).max(0.0));
            for k in 0..self.m {
                if r.lambda1[k] > 0.0 {
                    s.peak_active_barrier = s.peak_active_barrier.max(r.big_g1[k]);
                }
                if r.lambda2[k] > 0.0 {
                    s.peak_active_barrier = s.peak_active_barrier.max(r.big_g2[k]);
                }
            }
            peak_cmd = peak_cmd.max(amax(&r.y_cmd));
        }
        s.saturated_time = saturated as f64 * self.dt;
        s.peak_barrier = self
            .rows
            .iter()
            .map(|r| vmax(&r.big_g1).max(vmax(&r.big_g2)))
            .fold(f64::NEG_INFINITY, f64::max);
        if !s.peak_barrier.is_finite() {
            s.peak_barrier = 0.0;
        }
        if peak_cmd > 0.0 {
            let band = 0.02 * peak_cmd;
            s.settling_time = self
                .rows
                .iter()
                .rev()
                .find(|r| amax(&(&r.y_reg - &r.y_cmd)) > band)
                .map_or(0.0, |r| r.t);
        }
        if let Some(last) = self.rows.last() {
            s.final_tracking_error = amax(&(&last.y_reg - &last.y_cmd));
        }
        s
    }
}

fn record(
    cl: &ClosedLoop,
    state: &DVector<f64>,
    t: f64,
    prev_u: Option<&DVector<f64>>,
    kkt: &mut KktResiduals,
) -> Result<SimRow, SimError> {
    let (np, m) = cl.dims();
    let cfg = cl.config;
    let st = cl.evaluate(state, cfg.command.value(t), cfg.disturbance.value(t))?;
    *kkt = kkt.worst(st.aw.kkt(cl.gains));
    let (lambda1, lambda2, big_g1, big_g2) = if cfg.aw_enabled {
        (st.aw.lambda1.clone(), st.aw.lambda2.clone(), st.aw.big_g1.clone(), st.aw.big_g2.clone())
    } else {
        // no modification applied: multipliers idle, barrier values at v = 0
        (DVector::zeros(m), DVector::zeros(m), st.aw.delta1.clone(), st.aw.delta2.clone())
    };
    let u_rate = match prev_u {
        Some(p) => (&st.u - p) / cfg.dt,
        None => DVector::zeros(m),
    };
    Ok(SimRow {
        t,
        y_cmd_plus_v: &st.y_cmd + &st.v,
        y_cmd: st.y_cmd,
        y_reg: st.y_reg,
        e_yi: state.rows(0, m).into_owned(),
        x_p: state.rows(m, np).into_owned(),
        saturated: st.aw.saturated(),
        u_cmd: st.aw.u_cmd.clone(),
        u: st.u,
        u_rate,
        x_a: state.rows(m + np, m).into_owned(),
        x_a_dot: state.rows(2 * m + np, m).into_owned(),
        v: st.v,
        lambda1,
        lambda2,
        g1: st.aw.g1.clone(),
        g2: st.aw.g2.clone(),
        big_g1,
        big_g2,
        d: st.d,
    })
}

fn row_finite(r: &SimRow) -> bool {
    let vecs = [
        &r.y_cmd, &r.y_cmd_plus_v, &r.y_reg, &r.e_yi, &r.x_p, &r.u_cmd, &r.u, &r.u_rate, &r.x_a,
        &r.x_a_dot, &r.v, &r.lambda1, &r.lambda2, &r.g1, &r.g2, &r.big_g1, &r.big_g2,
    ];
    r.d.is_finite() && vecs.iter().all(|v| v.iter().all(|x| x.is_finite()))
}

/// Classical fixed-step RK4. Sample `k` is taken at `t = k dt`; the AW
/// signal is recomputed at every stage from the stage state.
pub fn integrate(
    config: &SimConfig,
    plant: &PlantModel,
    gains: &ServoGains,
    limits: &PositionLimits,
    params: CbfParams,
) -> Result<SimTrace, SimError> {
    let (np, m) = (plant.n_p(), plant.m());
    config.validate(np, m)?;
    if gains.m() != m || gains.n_p() != np || limits.m() != m {
        return Err(SimError::Config("gains or limits inconsistent with plant".into()));
    }
    let cl = ClosedLoop {
        plant,
        gains,
        limits,
        params,
        config,
    };
    let steps = config.steps();
    let dt = config.dt;
    let mut kkt = KktResiduals::default();
    let mut evals = 0usize;
    let mut rows = Vec::with_capacity(steps + 1);
    let mut x = config.initial_state.clone();

    let first = record(&cl, &x, 0.0, None, &mut kkt)?;
    evals += 1;
    if !row_finite(&first) {
        return Err(SimError::NonFinite { step: 0, t: 0.0 });
    }
    rows.push(first);

    for k in 0..steps {
        let t0 = k as f64 * dt;
        let mut stage = |state: &DVector<f64>, c: f64| -> Result<DVector<f64>, SimError> {
            let t = t0 + c * dt;
            let ycmd = config.command.value_in_step(t0, dt, t);
            let d = config.disturbance.value_in_step(t0, dt, t);
            let st = cl.evaluate(state, ycmd, d)?;
            kkt = kkt.worst(st.aw.kkt(gains));
            evals += 1;
            Ok(st.derivative)
        };
        let k1 = stage(&x, 0.0)?;
        let k2 = stage(&(&x + &k1 * (0.5 * dt)), 0.5)?;
        let k3 = stage(&(&x + &k2 * (0.5 * dt)), 0.5)?;
        let k4 = stage(&(&x + &k3 * dt), 1.0)?;
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);

        let t1 = (k + 1) as f64 * dt;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(SimError::NonFinite { step: k + 1, t: t1 });
        }
        let prev_u = rows.last().map(|r: &SimRow| r.u.clone());
        let row = record(&cl, &x, t1, prev_u.as_ref(), &mut kkt)?;
        evals += 1;
        if !row_finite(&row) {
            return Err(SimError::NonFinite { step: k + 1, t: t1 });
        }
        rows.push(row);
    }
    Ok(SimTrace {
        n_p: np,
        m,
        dt,
        rows,
        final_state: x,
        kkt,
        aw_evaluations: evals,
    })
}
