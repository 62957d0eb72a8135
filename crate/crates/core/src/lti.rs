//! Open-loop plant, the integral-augmented extended system and the
//! position saturation element.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::linalg::{self, EigenError};

/// Strict stability margin for the Hurwitz test.
pub const HURWITZ_MARGIN: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LtiError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("A_p is not Hurwitz: spectral abscissa {abscissa:e} (eigenvalues {eigenvalues:?})")]
    NotHurwitz {
        abscissa: f64,
        eigenvalues: Vec<Complex64>,
    },
    #[error("invalid position limits: {0}")]
    Limits(String),
    #[error(transparent)]
    Eigen(#[from] EigenError),
}

/// Open-loop plant `ẋ_p = A_p x_p + B_p u`, `y_reg = C_p_reg x_p + D_p_reg u`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantModel {
    pub a_p: DMatrix<f64>,
    pub b_p: DMatrix<f64>,
    pub c_p_reg: DMatrix<f64>,
    pub d_p_reg: DMatrix<f64>,
}

impl PlantModel {
    /// Checks dimensional consistency only. Stability is a separate test
    /// ([`check_hurwitz`]) because some callers build plants on purpose
    /// that fail it.
    pub fn new(
        a_p: DMatrix<f64>,
        b_p: DMatrix<f64>,
        c_p_reg: DMatrix<f64>,
        d_p_reg: DMatrix<f64>,
    ) -> Result<Self, LtiError> {
        let np = a_p.nrows();
        if !a_p.is_square() || np == 0 {
            return Err(LtiError::Dimension(format!(
                "A_p must be square and non-empty, got {}x{}",
                a_p.nrows(),
                a_p.ncols()
            )));
        }
        let m = b_p.ncols();
        if m == 0 {
            return Err(LtiError::Dimension("B_p has no columns".into()));
        }
        if b_p.nrows() != np {
            return Err(LtiError::Dimension(format!(
                "B_p must be {np}x{m}, got {}x{}",
                b_p.nrows(),
                b_p.ncols()
            )));
        }
        if c_p_reg.shape() != (m, np) {
            return Err(LtiError::Dimension(format!(
                "C_p_reg must be {m}x{np}, got {}x{}",
                c_p_reg.nrows(),
                c_p_reg.ncols()
            )));
        }
        if d_p_reg.shape() != (m, m) {
            return Err(LtiError::Dimension(format!(
                "D_p_reg must be {m}x{m}, got {}x{}",
                d_p_reg.nrows(),
                d_p_reg.ncols()
            )));
        }
        Ok(Self {
            a_p,
            b_p,
            c_p_reg,
            d_p_reg,
        })
    }

    /// The short-period pitch model used throughout the examples and the
    /// bundled scenarios: state (angle of attack, pitch rate), input elevator,
    /// regulated output angle of attack.
    pub fn short_period() -> Self {
        Self::new(
            DMatrix::from_row_slice(2, 2, &[-2.241, 0.9897, -4.474, -0.9024]),
            DMatrix::from_row_slice(2, 1, &[-0.23307, -4.5926]),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            DMatrix::zeros(1, 1),
        )
        .expect("static dimensions")
    }

    pub fn n_p(&self) -> usize {
        self.a_p.nrows()
    }

    pub fn m(&self) -> usize {
        self.b_p.ncols()
    }

    pub fn n(&self) -> usize {
        self.n_p() + self.m()
    }

    pub fn state_derivative(&self, x_p: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.a_p * x_p + &self.b_p * u
    }

    pub fn regulated_output(&self, x_p: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.c_p_reg * x_p + &self.d_p_reg * u
    }
}

/// Integral-augmented system with state `x = (e_yI, x_p)`:
/// `ẋ = A x + B u + B_cmd y_cmd`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedSystem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub b_cmd: DMatrix<f64>,
    pub n_p: usize,
    pub m: usize,
}

impl ExtendedSystem {
    pub fn n(&self) -> usize {
        self.n_p + self.m
    }
}

pub fn build_extended_system(plant: &PlantModel) -> Result<ExtendedSystem, LtiError> {
    // re-run the dimension checks so hand-built structs are caught too
    let plant = PlantModel::new(
        plant.a_p.clone(),
        plant.b_p.clone(),
        plant.c_p_reg.clone(),
        plant.d_p_reg.clone(),
    )?;
    let (np, m) = (plant.n_p(), plant.m());
    let n = np + m;
    let mut a = DMatrix::zeros(n, n);
    a.view_mut((0, m), (m, np)).copy_from(&plant.c_p_reg);
    a.view_mut((m, m), (np, np)).copy_from(&plant.a_p);
    let mut b = DMatrix::zeros(n, m);
    b.view_mut((0, 0), (m, m)).copy_from(&plant.d_p_reg);
    b.view_mut((m, 0), (np, m)).copy_from(&plant.b_p);
    let mut b_cmd = DMatrix::zeros(n, m);
    b_cmd
        .view_mut((0, 0), (m, m))
        .copy_from(&(-DMatrix::<f64>::identity(m, m)));
    Ok(ExtendedSystem {
        a,
        b,
        b_cmd,
        n_p: np,
        m,
    })
}

/// Component-wise actuator position limits.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionLimits {
    u_min: DVector<f64>,
    u_max: DVector<f64>,
}

impl PositionLimits {
    pub fn new(u_min: DVector<f64>, u_max: DVector<f64>) -> Result<Self, LtiError> {
        if u_min.len() != u_max.len() || u_min.is_empty() {
            return Err(LtiError::Limits(format!(
                "u_min has {} entries, u_max has {}",
                u_min.len(),
                u_max.len()
            )));
        }
        for i in 0..u_min.len() {
            if !(u_min[i] < u_max[i]) {
                return Err(LtiError::Limits(format!(
                    "channel {i}: u_min = {} is not below u_max = {}",
                    u_min[i], u_max[i]
                )));
            }
        }
        Ok(Self { u_min, u_max })
    }

    /// Limits `[-bound, bound]` on every one of `m` channels.
    pub fn symmetric(m: usize, bound: f64) -> Result<Self, LtiError> {
        Self::new(
            DVector::from_element(m, -bound),
            DVector::from_element(m, bound),
        )
    }

    pub fn u_min(&self) -> &DVector<f64> {
        &self.u_min
    }

    pub fn u_max(&self) -> &DVector<f64> {
        &self.u_max
    }

    pub fn m(&self) -> usize {
        self.u_min.len()
    }

    pub fn contains(&self, u: &DVector<f64>) -> bool {
        u.iter()
            .enumerate()
            .all(|(i, &x)| self.u_min[i] <= x && x <= self.u_max[i])
    }
}

/// Component-wise clamp of `u_cmd` into the position limits.
pub fn saturate(u_cmd: &DVector<f64>, limits: &PositionLimits) -> DVector<f64> {
    DVector::from_iterator(
        u_cmd.len(),
        u_cmd
            .iter()
            .enumerate()
            .map(|(i, &u)| u.clamp(limits.u_min[i], limits.u_max[i])),
    )
}

/// Eigenvalues of `a_p` if every real part is below `-HURWITZ_MARGIN`,
/// otherwise a `NotHurwitz` diagnostic carrying the spectrum.
pub fn hurwitz_spectrum(a_p: &DMatrix<f64>) -> Result<Vec<Complex64>, LtiError> {
    let eig = linalg::eigenvalues(a_p)?;
    let abscissa = linalg::spectral_abscissa(&eig);
    if abscissa < -HURWITZ_MARGIN {
        Ok(eig)
    } else {
        Err(LtiError::NotHurwitz {
            abscissa,
            eigenvalues: eig,
        })
    }
}

/// True iff every eigenvalue of `a_p` has real part below `-1e-12`.
/// Eigen-solver failures are surfaced as errors rather than `false`.
pub fn check_hurwitz(a_p: &DMatrix<f64>) -> Result<bool, LtiError> {
    match hurwitz_spectrum(a_p) {
        Ok(_) => Ok(true),
        Err(LtiError::NotHurwitz { .. }) => Ok(false),
        Err(e) => Err(e),
    }
}

/// `[[A_p, B_p], [C_p_reg, D_p_reg]]`.
pub fn augmentation_test_matrix(plant: &PlantModel) -> DMatrix<f64> {
    let (np, m) = (plant.n_p(), plant.m());
    let mut t = DMatrix::zeros(np + m, np + m);
    t.view_mut((0, 0), (np, np)).copy_from(&plant.a_p);
    t.view_mut((0, np), (np, m)).copy_from(&plant.b_p);
    t.view_mut((np, 0), (m, np)).copy_from(&plant.c_p_reg);
    t.view_mut((np, np), (m, m)).copy_from(&plant.d_p_reg);
    t
}

/// The integral augmentation is controllable iff the plant has no
/// transmission zero at the origin, i.e. the test matrix is nonsingular.
pub fn check_augmentation_controllable(plant: &PlantModel) -> bool {
    linalg::is_nonsingular(&augmentation_test_matrix(plant))
}

/// `[B, AB, ..., A^{n-1}B]`.
pub fn controllability_matrix(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let m = b.ncols();
    let mut out = DMatrix::zeros(n, n * m);
    let mut blk = b.clone();
    for k in 0..n {
        out.view_mut((0, k * m), (n, m)).copy_from(&blk);
        blk = a * blk;
    }
    out
}

pub fn is_controllable(a: &DMatrix<f64>, b: &DMatrix<f64>) -> bool {
    linalg::rank(&controllability_matrix(a, b)) == a.nrows()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};

    #[test]
    fn short_period_extension() {
        let ext = build_extended_system(&PlantModel::short_period()).unwrap();
        let a = dmatrix![0.0, 1.0, 0.0; 0.0, -2.241, 0.9897; 0.0, -4.474, -0.9024];
        assert_eq!(ext.a, a);
        assert_eq!(ext.b, dmatrix![0.0; -0.23307; -4.5926]);
        assert_eq!(ext.b_cmd, dmatrix![-1.0; 0.0; 0.0]);
    }

    #[test]
    fn scalar_extension() {
        let p = PlantModel::new(dmatrix![-1.0], dmatrix![1.0], dmatrix![1.0], dmatrix![0.0]).unwrap();
        let ext = build_extended_system(&p).unwrap();
        assert_eq!(ext.a, dmatrix![0.0, 1.0; 0.0, -1.0]);
        assert_eq!(ext.b, dmatrix![0.0; 1.0]);
    }

    #[test]
    fn dimension_errors() {
        assert!(matches!(
            PlantModel::new(dmatrix![-1.0, 0.0], dmatrix![1.0], dmatrix![1.0], dmatrix![0.0]),
            Err(LtiError::Dimension(_))
        ));
        assert!(matches!(
            PlantModel::new(dmatrix![-1.0], dmatrix![1.0], dmatrix![1.0, 2.0], dmatrix![0.0]),
            Err(LtiError::Dimension(_))
        ));
        assert!(matches!(
            PlantModel::new(dmatrix![-1.0], dmatrix![1.0], dmatrix![1.0], dmatrix![0.0, 1.0]),
            Err(LtiError::Dimension(_))
        ));
    }

    #[test]
    fn saturate_examples() {
        let lim = PositionLimits::symmetric(1, 0.17453).unwrap();
        assert_eq!(saturate(&dvector![0.2], &lim)[0], 0.17453);
        assert_eq!(saturate(&dvector![0.1], &lim)[0], 0.1);
        assert_eq!(saturate(&dvector![-0.3], &lim)[0], -0.17453);
    }

    #[test]
    fn limits_must_be_ordered() {
        assert!(PositionLimits::new(dvector![1.0], dvector![1.0]).is_err());
        assert!(PositionLimits::new(dvector![0.0, 0.0], dvector![1.0]).is_err());
    }

    #[test]
    fn hurwitz_examples() {
        assert!(check_hurwitz(&PlantModel::short_period().a_p).unwrap());
        assert!(!check_hurwitz(&dmatrix![0.0, 1.0; -1.0, 0.0]).unwrap());
        assert!(check_hurwitz(&(-DMatrix::<f64>::identity(3, 3))).unwrap());
        // marginal
        assert!(!check_hurwitz(&dmatrix![0.0]).unwrap());
        match hurwitz_spectrum(&dmatrix![1.0, 0.0; 0.0, -1.0]) {
            Err(LtiError::NotHurwitz { abscissa, .. }) => assert!((abscissa - 1.0).abs() < 1e-12),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn augmentation_examples() {
        let sp = PlantModel::short_period();
        assert!(check_augmentation_controllable(&sp));
        let det = augmentation_test_matrix(&sp).determinant();
        // cofactor expansion along the last row: 1 * (0.9897*-4.5926 - (-0.23307)(-0.9024))
        let cof = 0.9897 * -4.5926 - (-0.23307 * -0.9024);
        assert!((det - cof).abs() < 1e-12);
        assert!((det + 4.7556).abs() < 1e-4);

        let zero = PlantModel::new(sp.a_p.clone(), sp.b_p.clone(), DMatrix::zeros(1, 2), DMatrix::zeros(1, 1))
            .unwrap();
        assert!(!check_augmentation_controllable(&zero));

        let tri = PlantModel::new(dmatrix![-1.0], dmatrix![1.0], dmatrix![0.0], dmatrix![1.0]).unwrap();
        assert!(check_augmentation_controllable(&tri));
    }

    #[test]
    fn extended_structural_zero_block() {
        let ext = build_extended_system(&PlantModel::short_period()).unwrap();
        for i in 0..ext.n() {
            assert_eq!(ext.a[(i, 0)], 0.0);
        }
    }
}
