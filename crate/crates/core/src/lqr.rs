//! Continuous-time LQR synthesis of the baseline PI servo gains.
//!
//! The Riccati equation `AᵀP + PA − PBR⁻¹BᵀP + Q = 0` is solved by taking
//! the stable invariant subspace of the Hamiltonian from its eigenvectors,
//! then polishing with Newton–Kleinman iterations until the residual is at
//! the requested tolerance.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::linalg::{self, EigenError};
use crate::lti::{build_extended_system, LtiError, PlantModel};

const SYMMETRY_TOL: f64 = 1e-12;
const MAX_NEWTON_STEPS: usize = 30;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SynthesisError {
    #[error("invalid weights: {0}")]
    Weights(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("Hamiltonian has {0} eigenvalue(s) on the imaginary axis; (A, B) not stabilizable or (A, Q) not detectable")]
    ImaginaryAxis(usize),
    #[error("stable invariant subspace is degenerate (X1 condition {0:e})")]
    DegenerateSubspace(f64),
    #[error("Riccati iteration failed to reach tolerance: residual {residual:e} (tolerance {tolerance:e})")]
    Residual { residual: f64, tolerance: f64 },
    #[error("closed loop A - BK is not Hurwitz (spectral abscissa {0:e})")]
    NotStabilizing(f64),
    #[error("integral gain K_I is singular")]
    SingularIntegralGain,
    #[error(transparent)]
    Eigen(#[from] EigenError),
    #[error(transparent)]
    Lti(#[from] LtiError),
}

/// State and control cost weights.
#[derive(Debug, Clone, PartialEq)]
pub struct LqrWeights {
    q: DMatrix<f64>,
    r: DMatrix<f64>,
}

impl LqrWeights {
    pub fn new(q: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self, SynthesisError> {
        check_symmetric(&q, "Q")?;
        check_symmetric(&r, "R")?;
        if r.clone().cholesky().is_none() {
            return Err(SynthesisError::Weights("R is not positive definite".into()));
        }
        let qmin = q.clone().symmetric_eigen().eigenvalues.min();
        if qmin < -SYMMETRY_TOL * (1.0 + q.norm()) {
            return Err(SynthesisError::Weights(format!(
                "Q is not positive semidefinite (min eigenvalue {qmin:e})"
            )));
        }
        Ok(Self { q, r })
    }

    pub fn diagonal(q_diag: &[f64], r_diag: &[f64]) -> Result<Self, SynthesisError> {
        Self::new(
            DMatrix::from_diagonal(&DVector::from_column_slice(q_diag)),
            DMatrix::from_diagonal(&DVector::from_column_slice(r_diag)),
        )
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }
}

fn check_symmetric(m: &DMatrix<f64>, name: &str) -> Result<(), SynthesisError> {
    if !m.is_square() || m.nrows() == 0 {
        return Err(SynthesisError::Weights(format!("{name} must be square and non-empty")));
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(SynthesisError::Weights(format!("{name} has non-finite entries")));
    }
    let asym = (m - m.transpose()).amax();
    if asym > SYMMETRY_TOL * (1.0 + m.amax()) {
        return Err(SynthesisError::Weights(format!(
            "{name} is not symmetric (max asymmetry {asym:e})"
        )));
    }
    Ok(())
}

/// Baseline servo gains: `u = −K_I e_yI − K_P x_p`.
#[derive(Debug, Clone, PartialEq)]
pub struct ServoGains {
    k_i: DMatrix<f64>,
    k_p: DMatrix<f64>,
}

impl ServoGains {
    pub fn new(k_i: DMatrix<f64>, k_p: DMatrix<f64>) -> Result<Self, SynthesisError> {
        let m = k_i.nrows();
        if !k_i.is_square() || m == 0 {
            return Err(SynthesisError::Dimension(format!(
                "K_I must be square, got {}x{}",
                k_i.nrows(),
                k_i.ncols()
            )));
        }
        if k_p.nrows() != m {
            return Err(SynthesisError::Dimension(format!(
                "K_P must have {m} rows, got {}",
                k_p.nrows()
            )));
        }
        if !linalg::is_nonsingular(&k_i) {
            return Err(SynthesisError::SingularIntegralGain);
        }
        Ok(Self { k_i, k_p })
    }

    pub fn k_i(&self) -> &DMatrix<f64> {
        &self.k_i
    }

    pub fn k_p(&self) -> &DMatrix<f64> {
        &self.k_p
    }

    pub fn m(&self) -> usize {
        self.k_i.nrows()
    }

    pub fn n_p(&self) -> usize {
        self.k_p.ncols()
    }

    /// Full feedback row `K = [K_I, K_P]`.
    pub fn k(&self) -> DMatrix<f64> {
        let m = self.m();
        let mut k = DMatrix::zeros(m, m + self.n_p());
        k.view_mut((0, 0), (m, m)).copy_from(&self.k_i);
        k.view_mut((0, m), (m, self.n_p())).copy_from(&self.k_p);
        k
    }

    pub fn k_i_inverse(&self) -> DMatrix<f64> {
        self.k_i
            .clone()
            .try_inverse()
            .expect("K_I checked nonsingular at construction")
    }
}

/// Stabilizing Riccati solution with convergence diagnostics.
#[derive(Debug, Clone)]
pub struct CareSolution {
    pub p: DMatrix<f64>,
    pub residual: f64,
    pub newton_steps: usize,
}

pub fn care_residual(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r_inv: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> f64 {
    (a.transpose() * p + p * a - p * b * r_inv * b.transpose() * p + q).norm()
}

/// Solves the continuous algebraic Riccati equation for the stabilizing
/// solution. The residual (Frobenius) is driven below `1e-8 (1 + ‖P‖)`.
pub fn solve_care(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<CareSolution, SynthesisError> {
    let n = a.nrows();
    if !a.is_square() || n == 0 {
        return Err(SynthesisError::Dimension("A must be square".into()));
    }
    if b.nrows() != n {
        return Err(SynthesisError::Dimension(format!("B must have {n} rows")));
    }
    let m = b.ncols();
    if q.shape() != (n, n) || r.shape() != (m, m) {
        return Err(SynthesisError::Dimension(format!(
            "Q must be {n}x{n} and R {m}x{m}"
        )));
    }
    LqrWeights::new(q.clone(), r.clone())?;
    let r_inv = r
        .clone()
        .try_inverse()
        .ok_or_else(|| SynthesisError::Weights("R is singular".into()))?;
    let s = b * &r_inv * b.transpose();

    let mut h = DMatrix::zeros(2 * n, 2 * n);
    h.view_mut((0, 0), (n, n)).copy_from(a);
    h.view_mut((0, n), (n, n)).copy_from(&(-&s));
    h.view_mut((n, 0), (n, n)).copy_from(&(-q));
    h.view_mut((n, n), (n, n)).copy_from(&(-a.transpose()));

    let eig = linalg::qr_eigenvalues(&h)?;
    let hnorm = h.norm();
    let on_axis = eig.iter().filter(|z| z.re.abs() <= 1e-9 * (1.0 + hnorm)).count();
    if on_axis > 0 {
        return Err(SynthesisError::ImaginaryAxis(on_axis));
    }
    let stable: Vec<Complex64> = eig.iter().copied().filter(|z| z.re < 0.0).collect();
    if stable.len() != n {
        return Err(SynthesisError::ImaginaryAxis(2 * n - 2 * stable.len().min(n)));
    }

    let p0 = match hamiltonian_eigvec_solution(&h, &stable, n) {
        Some(p) => p,
        None => spectral_product_solution(&h, &eig, n)?,
    };
    let mut p = linalg::symmetrize(&p0);

    let tolerance = |p: &DMatrix<f64>| 1e-8 * (1.0 + p.norm());
    let mut residual = care_residual(a, b, q, &r_inv, &p);
    let mut steps = 0;
    // Newton–Kleinman: Lyapunov solve with the current gain; stops when a
    // step no longer reduces the residual.
    while steps < MAX_NEWTON_STEPS {
        let k = &r_inv * b.transpose() * &p;
        let acl = a - b * &k;
        let rhs = q + k.transpose() * r * &k;
        let Some(next) = linalg::solve_lyapunov(&acl, &rhs) else {
            break;
        };
        let next = linalg::symmetrize(&next);
        let next_res = care_residual(a, b, q, &r_inv, &next);
        steps += 1;
        if !(next_res < residual) {
            break;
        }
        p = next;
        residual = next_res;
        if residual <= 1e-3 * tolerance(&p) {
            break;
        }
    }

    if residual > tolerance(&p) {
        return Err(SynthesisError::Residual {
            residual,
            tolerance: tolerance(&p),
        });
    }
    let k = &r_inv * b.transpose() * &p;
    let acl_eig = linalg::eigenvalues(&(a - b * k))?;
    let abscissa = linalg::spectral_abscissa(&acl_eig);
    if abscissa >= 0.0 {
        return Err(SynthesisError::NotStabilizing(abscissa));
    }
    Ok(CareSolution {
        p,
        residual,
        newton_steps: steps,
    })
}

/// `P = Re(X2 X1⁻¹)` from eigenvectors of the stable eigenvalues, each
/// found by inverse iteration. `None` when X1 is ill-conditioned.
fn hamiltonian_eigvec_solution(
    h: &DMatrix<f64>,
    stable: &[Complex64],
    n: usize,
) -> Option<DMatrix<f64>> {
    let dim = 2 * n;
    let hc: DMatrix<Complex64> = h.map(|x| Complex64::new(x, 0.0));
    let shift_eps = 1e-10 * (1.0 + h.norm());
    let mut x = DMatrix::<Complex64>::zeros(dim, n);
    let mut col = 0;
    let mut i = 0;
    let mut ordered = stable.to_vec();
    ordered.sort_by(linalg::cmp_complex);
    while i < ordered.len() {
        let lambda = ordered[i];
        let mu = lambda + Complex64::new(shift_eps, shift_eps);
        let shifted = &hc - DMatrix::<Complex64>::identity(dim, dim) * mu;
        let lu = shifted.lu();
        let mut v = DVector::<Complex64>::from_fn(dim, |k, _| {
            Complex64::new(1.0 + 0.1 * k as f64, 0.05 * (k % 3) as f64)
        });
        for _ in 0..4 {
            v = lu.solve(&v)?;
            let nrm = v.norm();
            if !nrm.is_finite() || nrm == 0.0 {
                return None;
            }
            v /= Complex64::new(nrm, 0.0);
        }
        x.set_column(col, &v);
        col += 1;
        i += 1;
        if lambda.im.abs() > 0.0 && i < ordered.len() && col < n {
            // conjugate partner sits next to it after sorting
            let partner = ordered[i];
            if (partner - lambda.conj()).norm() <= 1e-8 * (1.0 + lambda.norm()) {
                x.set_column(col, &v.map(|z| z.conj()));
                col += 1;
                i += 1;
            }
        }
    }
    if col != n {
        return None;
    }
    let x1 = x.view((0, 0), (n, n)).into_owned();
    let x2 = x.view((n, 0), (n, n)).into_owned();
    let sv = x1.clone().svd(false, false).singular_values;
    let cond = sv.min() / sv.max();
    if !(cond > 1e-10) {
        return None;
    }
    let x1_inv = x1.try_inverse()?;
    let pc = x2 * x1_inv;
    let p = pc.map(|z| z.re);
    if p.iter().any(|v| !v.is_finite()) {
        return None;
    }
    Some(p)
}

/// Stable subspace as the range of the product of `(H − λI)` over the
/// unstable eigenvalues. Used when eigenvectors are not linearly
/// independent (repeated eigenvalues).
fn spectral_product_solution(
    h: &DMatrix<f64>,
    eig: &[Complex64],
    n: usize,
) -> Result<DMatrix<f64>, SynthesisError> {
    let dim = 2 * n;
    let id = DMatrix::<f64>::identity(dim, dim);
    let mut prod = id.clone();
    let h2 = h * h;
    for z in eig.iter().filter(|z| z.re > 0.0) {
        let factor = if z.im.abs() < 1e-12 * (1.0 + z.norm()) {
            h - &id * z.re
        } else if z.im > 0.0 {
            &h2 - h * (2.0 * z.re) + &id * z.norm_sqr()
        } else {
            continue;
        };
        prod = factor * prod;
        let s = prod.norm();
        if s > 0.0 {
            prod /= s;
        }
    }
    let svd = prod.svd(true, false);
    let u = svd.u.expect("requested U");
    // singular values are sorted descending by nalgebra
    let mut idx: Vec<usize> = (0..dim).collect();
    idx.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let mut basis = DMatrix::zeros(dim, n);
    for (c, &k) in idx.iter().take(n).enumerate() {
        basis.set_column(c, &u.column(k));
    }
    let x1 = basis.view((0, 0), (n, n)).into_owned();
    let x2 = basis.view((n, 0), (n, n)).into_owned();
    let sv = x1.clone().svd(false, false).singular_values;
    let cond = sv.min() / sv.max();
    if !(cond > 1e-12) {
        return Err(SynthesisError::DegenerateSubspace(cond));
    }
    Ok(x2 * x1.try_inverse().ok_or(SynthesisError::DegenerateSubspace(0.0))?)
}

/// `K = R⁻¹BᵀP` split column-wise into `K_I` (first `m` columns) and
/// `K_P` (remaining `n_p`).
pub fn servo_gains(
    p: &DMatrix<f64>,
    b: &DMatrix<f64>,
    r: &DMatrix<f64>,
    n_p: usize,
    m: usize,
) -> Result<ServoGains, SynthesisError> {
    let n = n_p + m;
    if p.shape() != (n, n) || b.shape() != (n, m) || r.shape() != (m, m) {
        return Err(SynthesisError::Dimension(format!(
            "expected P {n}x{n}, B {n}x{m}, R {m}x{m}"
        )));
    }
    let r_inv = r
        .clone()
        .try_inverse()
        .ok_or_else(|| SynthesisError::Weights("R is singular".into()))?;
    let k = r_inv * b.transpose() * p;
    ServoGains::new(
        k.view((0, 0), (m, m)).into_owned(),
        k.view((0, m), (m, n_p)).into_owned(),
    )
}

/// LQR design on the integral-augmented plant.
pub fn design_servo(
    plant: &PlantModel,
    weights: &LqrWeights,
) -> Result<(ServoGains, CareSolution), SynthesisError> {
    let ext = build_extended_system(plant)?;
    let sol = solve_care(&ext.a, &ext.b, weights.q(), weights.r())?;
    let gains = servo_gains(&sol.p, &ext.b, weights.r(), ext.n_p, ext.m)?;
    Ok((gains, sol))
}

/// The weights `Q = diag(20, 0, 0.2)`, `R = 1` for the short-period model.
pub fn short_period_weights() -> LqrWeights {
    LqrWeights::diagonal(&[20.0, 0.0, 0.2], &[1.0]).expect("valid constant weights")
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    #[test]
    fn scalar_integrator() {
        let sol = solve_care(&dmatrix![0.0], &dmatrix![1.0], &dmatrix![1.0], &dmatrix![1.0]).unwrap();
        assert!((sol.p[(0, 0)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn scalar_stable() {
        let sol = solve_care(&dmatrix![-1.0], &dmatrix![1.0], &dmatrix![1.0], &dmatrix![1.0]).unwrap();
        assert!((sol.p[(0, 0)] - (2f64.sqrt() - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn short_period_gains() {
        let (g, sol) = design_servo(&PlantModel::short_period(), &short_period_weights()).unwrap();
        let k = g.k();
        let expected = [-4.4721, -1.0369, -0.58504];
        for (i, e) in expected.iter().enumerate() {
            assert!(((k[(0, i)] - e) / e).abs() < 1e-3, "K[{i}] = {}", k[(0, i)]);
        }
        // K_I = -sqrt(q11 / r) exactly for this structure
        assert!((g.k_i()[(0, 0)] + 20f64.sqrt()).abs() < 1e-9);
        assert!(sol.residual <= 1e-8 * (1.0 + sol.p.norm()));
    }

    #[test]
    fn gain_split_examples() {
        let g = servo_gains(&dmatrix![1.0], &dmatrix![1.0], &dmatrix![1.0], 0, 1).unwrap();
        assert_eq!(g.k_i()[(0, 0)], 1.0);
        let p = DMatrix::<f64>::identity(2, 2) * 2.0;
        let g = servo_gains(&p, &dmatrix![1.0; 0.0], &dmatrix![1.0], 1, 1).unwrap();
        assert_eq!(g.k_i()[(0, 0)], 2.0);
        assert_eq!(g.k_p()[(0, 0)], 0.0);
    }

    #[test]
    fn singular_integral_gain_rejected() {
        let p = dmatrix![0.0, 0.0; 0.0, 1.0];
        assert_eq!(
            servo_gains(&p, &dmatrix![1.0; 1.0], &dmatrix![1.0], 1, 1),
            Err(SynthesisError::SingularIntegralGain)
        );
    }

    #[test]
    fn unstabilizable_pair_rejected() {
        // unstable mode not reachable from B
        let a = dmatrix![1.0, 0.0; 0.0, -1.0];
        let b = dmatrix![0.0; 1.0];
        let q = DMatrix::<f64>::identity(2, 2);
        assert!(solve_care(&a, &b, &q, &dmatrix![1.0]).is_err());
    }

    #[test]
    fn bad_weights() {
        assert!(LqrWeights::new(dmatrix![1.0, 2.0; 0.0, 1.0], dmatrix![1.0]).is_err());
        assert!(LqrWeights::new(dmatrix![-1.0], dmatrix![1.0]).is_err());
        assert!(LqrWeights::new(dmatrix![1.0], dmatrix![0.0]).is_err());
    }

    #[test]
    fn repeated_eigenvalues_fall_back() {
        // two identical decoupled channels give repeated Hamiltonian eigenvalues
        let a = DMatrix::<f64>::identity(2, 2) * -1.0;
        let b = DMatrix::<f64>::identity(2, 2);
        let q = DMatrix::<f64>::identity(2, 2);
        let r = DMatrix::<f64>::identity(2, 2);
        let sol = solve_care(&a, &b, &q, &r).unwrap();
        let expected = 2f64.sqrt() - 1.0;
        assert!((sol.p[(0, 0)] - expected).abs() < 1e-10);
        assert!(sol.p[(0, 1)].abs() < 1e-10);
    }
}
