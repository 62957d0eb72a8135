//! Saturated-mode closed-loop matrix and its spectrum, plus the loop gain
//! at the plant-input break point with classical stability margins.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::aw::{evaluate_aw, AwError, CbfParams};
use crate::linalg::{self, EigenError};
use crate::lqr::ServoGains;
use crate::lti::{ExtendedSystem, PlantModel, PositionLimits};
use crate::sim::ActuatorModel;

/// Tolerance for the sorted eigenvalue multiset comparison.
pub const SPECTRUM_TOL: f64 = 1e-9;

/// Slack allowed on `g_k >= 0` so that states built to sit exactly on a
/// limit are not rejected over rounding.
pub const BOUNDARY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AnalysisError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("sample {index} is not in an active saturated mode: {reason}")]
    NotSaturated { index: usize, reason: String },
    #[error("frequency grid invalid: {0}")]
    Grid(String),
    #[error(transparent)]
    Eigen(#[from] EigenError),
    #[error(transparent)]
    Aw(#[from] AwError),
}

/// Closed loop while a channel sits on a limit with its barrier active:
/// `ẋ = Ã x + C0 sat(u_cmd)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SaturatedClosedLoop {
    pub a_tilde: DMatrix<f64>,
    pub c0: DMatrix<f64>,
    pub spectrum: Vec<Complex64>,
}

impl SaturatedClosedLoop {
    /// `{−α} × m ∪ eig(A_p)`, the spectrum the block-triangular structure
    /// predicts.
    pub fn predicted_spectrum(plant: &PlantModel, params: CbfParams) -> Result<Vec<Complex64>, EigenError> {
        let mut s = vec![Complex64::new(-params.alpha(), 0.0); plant.m()];
        s.extend(linalg::eigenvalues(&plant.a_p)?);
        Ok(s)
    }

    /// Largest pairwise deviation between the computed and predicted
    /// spectra after lexicographic sorting.
    pub fn spectrum_deviation(&self, plant: &PlantModel, params: CbfParams) -> Result<f64, EigenError> {
        let predicted = Self::predicted_spectrum(plant, params)?;
        Ok(linalg::spectrum_deviation(&self.spectrum, &predicted, SPECTRUM_TOL))
    }

    /// Integrator rate from the matrix form (top block row).
    pub fn integrator_rate(&self, e_yi: &DVector<f64>, x_p: &DVector<f64>, u_sat: &DVector<f64>) -> DVector<f64> {
        let m = e_yi.len();
        let mut x = DVector::zeros(m + x_p.len());
        x.rows_mut(0, m).copy_from(e_yi);
        x.rows_mut(m, x_p.len()).copy_from(x_p);
        let full = &self.a_tilde * x + &self.c0 * u_sat;
        full.rows(0, m).into_owned()
    }
}

/// Builds `Ã = [[−αI, −K_I⁻¹K_P(A_p + αI)], [0, A_p]]` and
/// `C0 = [−K_I⁻¹(αI + K_P B_p); B_p]`.
pub fn saturated_mode_matrix(
    plant: &PlantModel,
    gains: &ServoGains,
    params: CbfParams,
) -> Result<SaturatedClosedLoop, AnalysisError> {
    let (np, m) = (plant.n_p(), plant.m());
    if gains.m() != m || gains.n_p() != np {
        return Err(AnalysisError::Dimension(format!(
            "gains {}x{} vs plant n_p={np}, m={m}",
            gains.m(),
            gains.n_p()
        )));
    }
    let a = params.alpha();
    let ki_inv = gains.k_i_inverse();
    let n = np + m;
    let mut a_tilde = DMatrix::zeros(n, n);
    a_tilde
        .view_mut((0, 0), (m, m))
        .copy_from(&(DMatrix::<f64>::identity(m, m) * -a));
    let shifted = &plant.a_p + DMatrix::<f64>::identity(np, np) * a;
    a_tilde
        .view_mut((0, m), (m, np))
        .copy_from(&(-(&ki_inv * gains.k_p() * shifted)));
    a_tilde.view_mut((m, m), (np, np)).copy_from(&plant.a_p);

    let mut c0 = DMatrix::zeros(n, m);
    let inner = DMatrix::<f64>::identity(m, m) * a + gains.k_p() * &plant.b_p;
    c0.view_mut((0, 0), (m, m)).copy_from(&(-(&ki_inv * inner)));
    c0.view_mut((m, 0), (np, m)).copy_from(&plant.b_p);

    let spectrum = linalg::eigenvalues(&a_tilde)?;
    Ok(SaturatedClosedLoop {
        a_tilde,
        c0,
        spectrum,
    })
}

/// One state sample for the dual-path check.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSample {
    pub e_yi: DVector<f64>,
    pub x_p: DVector<f64>,
    pub y_cmd: DVector<f64>,
}

/// Compares the integrator rate `e_y + v` from the anti-windup law with the
/// matrix form `Ã x + C0 sat(u_cmd)` and returns the largest absolute
/// difference. Every sample must have one barrier fully active (all
/// components of λ1 positive and λ2 zero, or the reverse); other samples are
/// rejected because the matrix form does not describe them.
pub fn saturated_mode_consistency(
    plant: &PlantModel,
    gains: &ServoGains,
    limits: &PositionLimits,
    params: CbfParams,
    samples: &[StateSample],
) -> Result<f64, AnalysisError> {
    let closed = saturated_mode_matrix(plant, gains, params)?;
    let mut worst: f64 = 0.0;
    for (index, s) in samples.iter().enumerate() {
        let ev = evaluate_aw(&s.e_yi, &s.x_p, &s.y_cmd, plant, gains, limits, params)?;
        if let Some(reason) = active_mode_violation(&ev.lambda1, &ev.lambda2, &ev.g1, &ev.g2) {
            return Err(AnalysisError::NotSaturated { index, reason });
        }
        let law = &ev.e_y + &ev.v;
        let matrix = closed.integrator_rate(&s.e_yi, &s.x_p, &ev.u_sat);
        worst = worst.max((law - matrix).amax());
    }
    Ok(worst)
}

/// `None` when the sample is in a fully active saturated mode, on or
/// beyond the limit.
pub fn active_mode_violation(
    lambda1: &DVector<f64>,
    lambda2: &DVector<f64>,
    g1: &DVector<f64>,
    g2: &DVector<f64>,
) -> Option<String> {
    let lower = lambda1.iter().all(|&l| l > 0.0) && lambda2.iter().all(|&l| l == 0.0);
    let upper = lambda2.iter().all(|&l| l > 0.0) && lambda1.iter().all(|&l| l == 0.0);
    if !(lower || upper) {
        return Some("barrier multipliers are not all active on one side".into());
    }
    let g = if lower { g1 } else { g2 };
    if g.iter().any(|&x| x < -BOUNDARY_TOL) {
        return Some("commanded control is strictly inside the limits".into());
    }
    None
}

/// Stability margin at one crossing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Crossing {
    pub omega: f64,
    pub margin: f64,
}

/// Margins of one loop channel.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopMargins {
    pub magnitude_db: Vec<f64>,
    pub phase_deg: Vec<f64>,
    /// 0 dB crossings with the phase margin (deg) at each.
    pub gain_crossings: Vec<Crossing>,
    /// −180° crossings with the gain margin (dB) at each.
    pub phase_crossings: Vec<Crossing>,
}

impl LoopMargins {
    /// Phase margin at the first gain crossover.
    pub fn phase_margin(&self) -> Option<f64> {
        self.gain_crossings.first().map(|c| c.margin)
    }

    /// Gain margin at the first phase crossover.
    pub fn gain_margin(&self) -> Option<f64> {
        self.phase_crossings.first().map(|c| c.margin)
    }

    pub fn crossover(&self) -> Option<f64> {
        self.gain_crossings.first().map(|c| c.omega)
    }

    pub fn worst_phase_margin(&self) -> Option<Crossing> {
        self.gain_crossings
            .iter()
            .copied()
            .min_by(|a, b| a.margin.abs().total_cmp(&b.margin.abs()))
    }

    pub fn worst_gain_margin(&self) -> Option<Crossing> {
        self.phase_crossings
            .iter()
            .copied()
            .min_by(|a, b| a.margin.abs().total_cmp(&b.margin.abs()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyResponse {
    pub frequencies: Vec<f64>,
    /// `L(jω)` (m × m) at each retained frequency.
    pub loop_gain: Vec<DMatrix<Complex64>>,
    /// Per channel `i`, margins of the diagonal element `L_ii`.
    pub channels: Vec<LoopMargins>,
    /// Grid points dropped because the resolvent was singular.
    pub skipped: Vec<(f64, String)>,
}

impl FrequencyResponse {
    pub fn gain_margin(&self) -> Option<f64> {
        self.channels.first().and_then(LoopMargins::gain_margin)
    }

    pub fn phase_margin(&self) -> Option<f64> {
        self.channels.first().and_then(LoopMargins::phase_margin)
    }

    pub fn crossover(&self) -> Option<f64> {
        self.channels.first().and_then(LoopMargins::crossover)
    }
}

/// `n` logarithmically spaced points on `[lo, hi]`.
pub fn log_grid(n: usize, lo: f64, hi: f64) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.log10(), hi.log10());
    (0..n)
        .map(|i| 10f64.powf(a + (b - a) * i as f64 / (n - 1) as f64))
        .collect()
}

/// 400 points on [1e-2, 1e3] rad/s.
pub fn default_grid() -> Vec<f64> {
    log_grid(400, 1e-2, 1e3)
}

fn validate_grid(grid: &[f64]) -> Result<(), AnalysisError> {
    if grid.len() < 2 {
        return Err(AnalysisError::Grid("need at least two frequencies".into()));
    }
    if grid.iter().any(|&w| !(1e-3..=1e4).contains(&w)) {
        return Err(AnalysisError::Grid("frequencies must lie in [1e-3, 1e4] rad/s".into()));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(AnalysisError::Grid("frequencies must be strictly increasing".into()));
    }
    Ok(())
}

/// Loop gain `L(jω) = K (jωI − A)⁻¹ B`, optionally in series with the
/// actuator `ωn² / (s² + 2ζωn s + ωn²)`, and its margins.
pub fn loop_gain_response(
    extended: &ExtendedSystem,
    gains: &ServoGains,
    grid: &[f64],
    actuator: Option<&ActuatorModel>,
) -> Result<FrequencyResponse, AnalysisError> {
    validate_grid(grid)?;
    let n = extended.n();
    let m = extended.m;
    if gains.m() != m || gains.n_p() != extended.n_p {
        return Err(AnalysisError::Dimension("gains do not match the extended system".into()));
    }
    let a = extended.a.map(|x| Complex64::new(x, 0.0));
    let b = extended.b.map(|x| Complex64::new(x, 0.0));
    let k = gains.k().map(|x| Complex64::new(x, 0.0));
    let bnorm = extended.b.norm().max(1e-300);

    let mut frequencies = Vec::with_capacity(grid.len());
    let mut loop_gain = Vec::with_capacity(grid.len());
    let mut skipped = Vec::new();
    for &w in grid {
        let s = Complex64::new(0.0, w);
        let resolvent = DMatrix::<Complex64>::identity(n, n) * s - &a;
        let sol = resolvent.lu().solve(&b);
        let x = match sol {
            Some(x) if x.iter().all(|z| z.re.is_finite() && z.im.is_finite()) && x.norm() < 1e12 * bnorm => x,
            _ => {
                skipped.push((w, format!("resolvent singular at ω = {w}")));
                continue;
            }
        };
        let mut l = &k * x;
        if let Some(act) = actuator {
            let wn = act.natural_frequency;
            let g = Complex64::new(wn * wn, 0.0)
                / (s * s + s * (2.0 * act.damping_ratio * wn) + Complex64::new(wn * wn, 0.0));
            l *= g;
        }
        frequencies.push(w);
        loop_gain.push(l);
    }

    let channels = (0..m)
        .map(|i| {
            let values: Vec<Complex64> = loop_gain.iter().map(|l| l[(i, i)]).collect();
            channel_margins(&frequencies, &values)
        })
        .collect();
    Ok(FrequencyResponse {
        frequencies,
        loop_gain,
        channels,
        skipped,
    })
}

fn unwrap_phase(values: &[Complex64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut prev: Option<f64> = None;
    for z in values {
        let mut p = z.arg().to_degrees();
        if let Some(q) = prev {
            while p - q > 180.0 {
                p -= 360.0;
            }
            while p - q < -180.0 {
                p += 360.0;
            }
        }
        out.push(p);
        prev = Some(p);
    }
    out
}

/// Interpolation weight of a crossing of `level` between samples.
fn crossing_fraction(a: f64, b: f64, level: f64) -> Option<f64> {
    let (da, db) = (a - level, b - level);
    if da == 0.0 {
        return Some(0.0);
    }
    if (da < 0.0) != (db < 0.0) && db != 0.0 {
        return Some(da / (da - db));
    }
    None
}

fn lerp_log(w0: f64, w1: f64, f: f64) -> f64 {
    10f64.powf(w0.log10() + f * (w1.log10() - w0.log10()))
}

fn wrap_deg(x: f64) -> f64 {
    let mut y = (x + 180.0).rem_euclid(360.0) - 180.0;
    if y == -180.0 {
        y = 180.0;
    }
    y
}

fn channel_margins(freqs: &[f64], values: &[Complex64]) -> LoopMargins {
    let magnitude_db: Vec<f64> = values.iter().map(|z| 20.0 * z.norm().log10()).collect();
    let phase_deg = unwrap_phase(values);
    let mut gain_crossings = Vec::new();
    let mut phase_crossings = Vec::new();
    for i in 0..freqs.len().saturating_sub(1) {
        if let Some(f) = crossing_fraction(magnitude_db[i], magnitude_db[i + 1], 0.0) {
            let omega = lerp_log(freqs[i], freqs[i + 1], f);
            let phase = phase_deg[i] + f * (phase_deg[i + 1] - phase_deg[i]);
            gain_crossings.push(Crossing {
                omega,
                margin: wrap_deg(phase + 180.0),
            });
        }
        // −180° + 360k crossings
        let lo = phase_deg[i].min(phase_deg[i + 1]);
        let hi = phase_deg[i].max(phase_deg[i + 1]);
        let k_lo = ((lo + 180.0) / 360.0).ceil() as i64;
        let k_hi = ((hi + 180.0) / 360.0).floor() as i64;
        for k in k_lo..=k_hi {
            let level = -180.0 + 360.0 * k as f64;
            if let Some(f) = crossing_fraction(phase_deg[i], phase_deg[i + 1], level) {
                let omega = lerp_log(freqs[i], freqs[i + 1], f);
                let mag = magnitude_db[i] + f * (magnitude_db[i + 1] - magnitude_db[i]);
                phase_crossings.push(Crossing { omega, margin: -mag });
            }
        }
    }
    LoopMargins {
        magnitude_db,
        phase_deg,
        gain_crossings,
        phase_crossings,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lqr::{design_servo, short_period_weights};
    use crate::lti::build_extended_system;
    use nalgebra::dmatrix;

    fn reference_design() -> (PlantModel, ServoGains) {
        let plant = PlantModel::short_period();
        let (g, _) = design_servo(&plant, &short_period_weights()).unwrap();
        (plant, g)
    }

    #[test]
    fn short_period_spectrum() {
        let (plant, g) = reference_design();
        let p = CbfParams::new(4.4721).unwrap();
        let sc = saturated_mode_matrix(&plant, &g, p).unwrap();
        assert!(sc.spectrum_deviation(&plant, p).unwrap() <= SPECTRUM_TOL);
        let mut s = sc.spectrum.clone();
        linalg::sort_spectrum(&mut s, SPECTRUM_TOL);
        assert!((s[0].re + 4.4721).abs() < 1e-12);
        assert!((s[1].re + 1.5717).abs() < 1e-12 && (s[1].im + 1.99503).abs() < 1e-4);
    }

    #[test]
    fn identity_plant_spectrum() {
        let plant = PlantModel::new(
            -DMatrix::<f64>::identity(2, 2),
            dmatrix![1.0; 2.0],
            dmatrix![1.0, 0.0],
            dmatrix![0.0],
        )
        .unwrap();
        let g = ServoGains::new(dmatrix![3.0], dmatrix![0.5, -2.0]).unwrap();
        let sc = saturated_mode_matrix(&plant, &g, CbfParams::new(1.0).unwrap()).unwrap();
        assert!(sc.spectrum.iter().all(|z| (z - Complex64::new(-1.0, 0.0)).norm() < 1e-9));
    }

    #[test]
    fn consistency_rejects_interior_state() {
        let (plant, g) = reference_design();
        let lim = PositionLimits::symmetric(1, 10f64.to_radians()).unwrap();
        let s = StateSample {
            e_yi: DVector::zeros(1),
            x_p: DVector::zeros(2),
            y_cmd: DVector::zeros(1),
        };
        assert!(matches!(
            saturated_mode_consistency(&plant, &g, &lim, CbfParams::new(4.4721).unwrap(), &[s]),
            Err(AnalysisError::NotSaturated { index: 0, .. })
        ));
    }

    #[test]
    fn integrator_loop_margins() {
        let ext = ExtendedSystem {
            a: dmatrix![0.0],
            b: dmatrix![1.0],
            b_cmd: dmatrix![-1.0],
            n_p: 0,
            m: 1,
        };
        let g = ServoGains::new(dmatrix![1.0], DMatrix::zeros(1, 0)).unwrap();
        let fr = loop_gain_response(&ext, &g, &log_grid(401, 1e-2, 1e2), None).unwrap();
        // grid contains ω = 1 exactly at index 200
        let l = fr.loop_gain[200][(0, 0)];
        assert!((l.norm() - 1.0).abs() < 1e-12);
        assert!((l.arg().to_degrees() + 90.0).abs() < 1e-9);
        assert!((fr.phase_margin().unwrap() - 90.0).abs() < 1e-9);
        assert!((fr.crossover().unwrap() - 1.0).abs() < 1e-9);
        assert!(fr.gain_margin().is_none());
    }

    #[test]
    fn short_period_low_frequency_gain_grows() {
        let (plant, g) = reference_design();
        let ext = build_extended_system(&plant).unwrap();
        let fr = loop_gain_response(&ext, &g, &default_grid(), None).unwrap();
        let m = &fr.channels[0].magnitude_db;
        assert!(m[0] > m[10] && m[10] > m[40]);
        assert!(m[0] > 40.0);
    }

    #[test]
    fn grid_validation() {
        let (plant, g) = reference_design();
        let ext = build_extended_system(&plant).unwrap();
        assert!(loop_gain_response(&ext, &g, &[1.0, 0.5], None).is_err());
        assert!(loop_gain_response(&ext, &g, &[1e-4, 1.0], None).is_err());
    }

    #[test]
    fn resolvent_singularity_is_skipped() {
        // oscillator with poles at ±j, grid hits ω = 1 exactly
        let ext = ExtendedSystem {
            a: dmatrix![0.0, 1.0; -1.0, 0.0],
            b: dmatrix![0.0; 1.0],
            b_cmd: dmatrix![-1.0; 0.0],
            n_p: 1,
            m: 1,
        };
        let g = ServoGains::new(dmatrix![1.0], dmatrix![0.0]).unwrap();
        let fr = loop_gain_response(&ext, &g, &[0.5, 1.0, 2.0], None).unwrap();
        assert_eq!(fr.skipped.len(), 1);
        assert_eq!(fr.frequencies, vec![0.5, 2.0]);
    }
}
