//! Dense linear-algebra helpers: a real nonsymmetric eigenvalue solver
//! (balancing, Hessenberg reduction, Francis double-shift QR), rank and
//! singularity tests, a Lyapunov solver and spectrum comparison.

#![allow(clippy::needless_range_loop)]

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use std::cmp::Ordering;

/// Relative singular-value threshold used by every rank / singularity test.
pub const SINGULAR_RTOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EigenError {
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix contains non-finite entries")]
    NonFinite,
    #[error("QR iteration did not converge after {iterations} iterations ({remaining} eigenvalues unresolved)")]
    NoConvergence { iterations: usize, remaining: usize },
    #[error("QR eigenvalues disagree with characteristic-polynomial roots by {deviation:e}")]
    CrossCheck { deviation: f64 },
}

/// Eigenvalues of a real square matrix.
///
/// For `n <= 3` the QR result is also compared against the roots of the
/// characteristic polynomial and an error is raised if the two disagree.
pub fn eigenvalues(a: &DMatrix<f64>) -> Result<Vec<Complex64>, EigenError> {
    let eig = qr_eigenvalues(a)?;
    let n = a.nrows();
    if n <= 3 && n > 0 {
        let roots = charpoly_roots(a);
        let dev = max_matching_deviation(&eig, &roots);
        let scale = 1.0 + a.iter().map(|x| x * x).sum::<f64>().sqrt();
        if dev > 1e-6 * scale {
            return Err(EigenError::CrossCheck { deviation: dev });
        }
    }
    Ok(eig)
}

/// Eigenvalues by balancing, Hessenberg reduction and shifted QR only.
/// The iteration budget is `100 * n` QR sweeps in total.
pub fn qr_eigenvalues(a: &DMatrix<f64>) -> Result<Vec<Complex64>, EigenError> {
    if !a.is_square() {
        return Err(EigenError::NotSquare {
            rows: a.nrows(),
            cols: a.ncols(),
        });
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(EigenError::NonFinite);
    }
    let n = a.nrows();
    let mut h: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| a[(i, j)]).collect()).collect();
    balance(&mut h);
    hessenberg(&mut h);
    hqr(&mut h)
}

fn balance(a: &mut [Vec<f64>]) {
    const RADIX: f64 = 2.0;
    let sqrdx = RADIX * RADIX;
    let n = a.len();
    let mut done = false;
    while !done {
        done = true;
        for i in 0..n {
            let mut r = 0.0;
            let mut c = 0.0;
            for j in 0..n {
                if j != i {
                    c += a[j][i].abs();
                    r += a[i][j].abs();
                }
            }
            if c != 0.0 && r != 0.0 {
                let mut g = r / RADIX;
                let mut f = 1.0;
                let s = c + r;
                while c < g {
                    f *= RADIX;
                    c *= sqrdx;
                }
                g = r * RADIX;
                while c > g {
                    f /= RADIX;
                    c /= sqrdx;
                }
                if (c + r) / f < 0.95 * s {
                    done = false;
                    let g = 1.0 / f;
                    for j in 0..n {
                        a[i][j] *= g;
                    }
                    for row in a.iter_mut() {
                        row[i] *= f;
                    }
                }
            }
        }
    }
}

/// Reduction to upper Hessenberg form by stabilized elementary similarity
/// transforms. Entries below the subdiagonal are zeroed on exit.
fn hessenberg(a: &mut [Vec<f64>]) {
    let n = a.len();
    for m in 1..n.saturating_sub(1) {
        let mut x: f64 = 0.0;
        let mut piv = m;
        for j in m..n {
            if a[j][m - 1].abs() > x.abs() {
                x = a[j][m - 1];
                piv = j;
            }
        }
        if piv != m {
            a.swap(piv, m);
            for row in a.iter_mut() {
                row.swap(piv, m);
            }
        }
        if x != 0.0 {
            for i in (m + 1)..n {
                let mut y = a[i][m - 1];
                if y != 0.0 {
                    y /= x;
                    a[i][m - 1] = y;
                    for j in m..n {
                        a[i][j] -= y * a[m][j];
                    }
                    for row in a.iter_mut() {
                        row[m] += y * row[i];
                    }
                }
            }
        }
    }
    for i in 2..n {
        for j in 0..(i - 1) {
            a[i][j] = 0.0;
        }
    }
}

fn sign(a: f64, b: f64) -> f64 {
    if b >= 0.0 {
        a.abs()
    } else {
        -a.abs()
    }
}

fn hqr(a: &mut [Vec<f64>]) -> Result<Vec<Complex64>, EigenError> {
    let n = a.len();
    let mut out = vec![Complex64::new(0.0, 0.0); n];
    if n == 0 {
        return Ok(out);
    }
    let budget = 100 * n;
    let mut total_its = 0usize;

    let mut anorm = 0.0;
    for i in 0..n {
        for j in i.saturating_sub(1)..n {
            anorm += a[i][j].abs();
        }
    }

    let mut nn = n as isize - 1;
    let mut t = 0.0;
    while nn >= 0 {
        let mut its = 0;
        loop {
            let nu = nn as usize;
            let mut l = nu;
            while l >= 1 {
                let mut s = a[l - 1][l - 1].abs() + a[l][l].abs();
                if s == 0.0 {
                    s = anorm;
                }
                if a[l][l - 1].abs() + s == s {
                    a[l][l - 1] = 0.0;
                    break;
                }
                l -= 1;
            }
            let mut x = a[nu][nu];
            if l == nu {
                out[nu] = Complex64::new(x + t, 0.0);
                nn -= 1;
                break;
            }
            let mut y = a[nu - 1][nu - 1];
            let mut w = a[nu][nu - 1] * a[nu - 1][nu];
            if l == nu - 1 {
                let p = 0.5 * (y - x);
                let q = p * p + w;
                let z = q.abs().sqrt();
                x += t;
                if q >= 0.0 {
                    let z = p + sign(z, p);
                    let mut lo = x + z;
                    let hi = x + z;
                    if z != 0.0 {
                        lo = x - w / z;
                    }
                    out[nu - 1] = Complex64::new(hi, 0.0);
                    out[nu] = Complex64::new(lo, 0.0);
                } else {
                    out[nu - 1] = Complex64::new(x + p, -z);
                    out[nu] = Complex64::new(x + p, z);
                }
                nn -= 2;
                break;
            }
            if total_its >= budget {
                return Err(EigenError::NoConvergence {
                    iterations: total_its,
                    remaining: nu + 1,
                });
            }
            if its > 0 && its % 10 == 0 {
                // exceptional shift
                t += x;
                for (i, row) in a.iter_mut().enumerate().take(nu + 1) {
                    row[i] -= x;
                }
                let s = a[nu][nu - 1].abs() + a[nu - 1][nu - 2].abs();
                x = 0.75 * s;
                y = x;
                w = -0.4375 * s * s;
            }
            its += 1;
            total_its += 1;

            let (mut p, mut q, mut r);
            let mut m = nu - 2;
            loop {
                let z = a[m][m];
                let rr = x - z;
                let ss = y - z;
                p = (rr * ss - w) / a[m + 1][m] + a[m][m + 1];
                q = a[m + 1][m + 1] - z - rr - ss;
                r = a[m + 2][m + 1];
                let s = p.abs() + q.abs() + r.abs();
                p /= s;
                q /= s;
                r /= s;
                if m == l {
                    break;
                }
                let u = a[m][m - 1].abs() * (q.abs() + r.abs());
                let v = p.abs() * (a[m - 1][m - 1].abs() + z.abs() + a[m + 1][m + 1].abs());
                if u + v == v {
                    break;
                }
                m -= 1;
            }
            for i in (m + 2)..=nu {
                a[i][i - 2] = 0.0;
                if i != m + 2 {
                    a[i][i - 3] = 0.0;
                }
            }
            let mut k = m;
            while k < nu {
                let mut xk = 0.0;
                if k != m {
                    p = a[k][k - 1];
                    q = a[k + 1][k - 1];
                    r = if k != nu - 1 { a[k + 2][k - 1] } else { 0.0 };
                    xk = p.abs() + q.abs() + r.abs();
                    if xk != 0.0 {
                        p /= xk;
                        q /= xk;
                        r /= xk;
                    }
                }
                let s = sign((p * p + q * q + r * r).sqrt(), p);
                if s != 0.0 {
                    if k == m {
                        if l != m {
                            a[k][k - 1] = -a[k][k - 1];
                        }
                    } else {
                        a[k][k - 1] = -s * xk;
                    }
                    p += s;
                    let xx = p / s;
                    let yy = q / s;
                    let zz = r / s;
                    q /= p;
                    r /= p;
                    for j in k..=nu {
                        let mut pp = a[k][j] + q * a[k + 1][j];
                        if k != nu - 1 {
                            pp += r * a[k + 2][j];
                            a[k + 2][j] -= pp * zz;
                        }
                        a[k + 1][j] -= pp * yy;
                        a[k][j] -= pp * xx;
                    }
                    let mmin = if nu < k + 3 { nu } else { k + 3 };
                    for row in a.iter_mut().take(mmin + 1).skip(l) {
                        let mut pp = xx * row[k] + yy * row[k + 1];
                        if k != nu - 1 {
                            pp += zz * row[k + 2];
                            row[k + 2] -= pp * r;
                        }
                        row[k + 1] -= pp * q;
                        row[k] -= pp;
                    }
                }
                k += 1;
            }
        }
    }
    Ok(out)
}

/// Roots of the characteristic polynomial for `n <= 3`, in closed form
/// followed by a few Newton polishing steps.
pub fn charpoly_roots(a: &DMatrix<f64>) -> Vec<Complex64> {
    let n = a.nrows();
    match n {
        0 => vec![],
        1 => vec![Complex64::new(a[(0, 0)], 0.0)],
        2 => {
            let tr = a[(0, 0)] + a[(1, 1)];
            let det = a[(0, 0)] * a[(1, 1)] - a[(0, 1)] * a[(1, 0)];
            quadratic_roots(-tr, det).to_vec()
        }
        3 => {
            let tr = a.trace();
            let minors = a[(0, 0)] * a[(1, 1)] - a[(0, 1)] * a[(1, 0)]
                + a[(0, 0)] * a[(2, 2)]
                - a[(0, 2)] * a[(2, 0)]
                + a[(1, 1)] * a[(2, 2)]
                - a[(1, 2)] * a[(2, 1)];
            let det = a.determinant();
            let coeffs = [-tr, minors, -det];
            cubic_roots(coeffs)
                .into_iter()
                .map(|z| polish_root(&coeffs, z))
                .collect()
        }
        _ => panic!("charpoly_roots supports n <= 3"),
    }
}

/// Roots of `x^2 + b x + c`.
fn quadratic_roots(b: f64, c: f64) -> [Complex64; 2] {
    let disc = b * b - 4.0 * c;
    if disc >= 0.0 {
        let q = -0.5 * (b + sign(disc.sqrt(), b));
        if q == 0.0 {
            return [Complex64::new(0.0, 0.0); 2];
        }
        [Complex64::new(q, 0.0), Complex64::new(c / q, 0.0)]
    } else {
        let re = -0.5 * b;
        let im = 0.5 * (-disc).sqrt();
        [Complex64::new(re, im), Complex64::new(re, -im)]
    }
}

/// Roots of `x^3 + c[0] x^2 + c[1] x + c[2]`.
fn cubic_roots(c: [f64; 3]) -> Vec<Complex64> {
    let (a, b, cc) = (c[0], c[1], c[2]);
    let q = (a * a - 3.0 * b) / 9.0;
    let r = (2.0 * a * a * a - 9.0 * a * b + 27.0 * cc) / 54.0;
    let shift = a / 3.0;
    if r * r < q * q * q {
        let theta = (r / (q * q * q).sqrt()).clamp(-1.0, 1.0).acos();
        let sq = -2.0 * q.sqrt();
        let tau = std::f64::consts::TAU;
        vec![
            Complex64::new(sq * (theta / 3.0).cos() - shift, 0.0),
            Complex64::new(sq * ((theta + tau) / 3.0).cos() - shift, 0.0),
            Complex64::new(sq * ((theta - tau) / 3.0).cos() - shift, 0.0),
        ]
    } else {
        let big_a = -sign((r.abs() + (r * r - q * q * q).max(0.0).sqrt()).cbrt(), r);
        let big_b = if big_a == 0.0 { 0.0 } else { q / big_a };
        let real = big_a + big_b - shift;
        let re2 = -0.5 * (big_a + big_b) - shift;
        let im2 = 0.5 * 3f64.sqrt() * (big_a - big_b);
        vec![
            Complex64::new(real, 0.0),
            Complex64::new(re2, im2),
            Complex64::new(re2, -im2),
        ]
    }
}

fn polish_root(c: &[f64; 3], mut z: Complex64) -> Complex64 {
    for _ in 0..3 {
        let p = ((z + c[0]) * z + c[1]) * z + c[2];
        let dp = (3.0 * z + 2.0 * c[0]) * z + c[1];
        if dp.norm() == 0.0 {
            break;
        }
        let step = p / dp;
        let next = z - step;
        let pn = ((next + c[0]) * next + c[1]) * next + c[2];
        if pn.norm() >= p.norm() {
            break;
        }
        z = next;
    }
    z
}

/// Greedy nearest-neighbour matching distance between two eigenvalue lists.
pub fn max_matching_deviation(a: &[Complex64], b: &[Complex64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    let mut used = vec![false; b.len()];
    let mut worst: f64 = 0.0;
    for za in a {
        let (idx, d) = b
            .iter()
            .enumerate()
            .filter(|(i, _)| !used[*i])
            .map(|(i, zb)| (i, (za - zb).norm()))
            .min_by(|x, y| x.1.total_cmp(&y.1))
            .expect("lengths match");
        used[idx] = true;
        worst = worst.max(d);
    }
    worst
}

/// Sorts eigenvalues lexicographically by (real, imag); real parts closer
/// than `tol` are treated as equal so conjugate pairs stay aligned.
pub fn sort_spectrum(spec: &mut [Complex64], tol: f64) {
    spec.sort_by(|a, b| {
        if (a.re - b.re).abs() <= tol {
            a.im.total_cmp(&b.im)
        } else {
            a.re.total_cmp(&b.re)
        }
    });
}

/// Multiset comparison of two spectra: sort both, then return the largest
/// pairwise absolute deviation.
pub fn spectrum_deviation(a: &[Complex64], b: &[Complex64], tol: f64) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sort_spectrum(&mut sa, tol);
    sort_spectrum(&mut sb, tol);
    sa.iter()
        .zip(&sb)
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

pub fn singular_values(m: &DMatrix<f64>) -> DVector<f64> {
    m.clone().svd(false, false).singular_values
}

/// A matrix is nonsingular when its smallest singular value exceeds
/// `SINGULAR_RTOL` times its largest.
pub fn is_nonsingular(m: &DMatrix<f64>) -> bool {
    if !m.is_square() || m.nrows() == 0 {
        return false;
    }
    let sv = singular_values(m);
    let max = sv.max();
    let min = sv.min();
    max > 0.0 && min > SINGULAR_RTOL * max
}

/// Numerical rank with the relative threshold `SINGULAR_RTOL`.
pub fn rank(m: &DMatrix<f64>) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = singular_values(m);
    let max = sv.max();
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > SINGULAR_RTOL * max).count()
}

pub fn spectral_abscissa(spec: &[Complex64]) -> f64 {
    spec.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max)
}

/// Solves `Aᵀ X + X A + M = 0` by Kronecker vectorization. Returns `None`
/// when the Lyapunov operator is singular.
pub fn solve_lyapunov(a: &DMatrix<f64>, m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    let nn = n * n;
    // vec(Aᵀ X) = (I ⊗ Aᵀ) vec X, vec(X A) = (Aᵀ ⊗ I) vec X (column-major)
    let mut op = DMatrix::<f64>::zeros(nn, nn);
    for j in 0..n {
        for i in 0..n {
            let row = i + j * n;
            for k in 0..n {
                // (Aᵀ X)_{ij} = Σ_k A_{ki} X_{kj}
                op[(row, k + j * n)] += a[(k, i)];
                // (X A)_{ij} = Σ_k X_{ik} A_{kj}
                op[(row, i + k * n)] += a[(k, j)];
            }
        }
    }
    let rhs = DVector::from_iterator(nn, m.iter().map(|x| -x));
    let sol = op.lu().solve(&rhs)?;
    if sol.iter().any(|x| !x.is_finite()) {
        return None;
    }
    Some(DMatrix::from_column_slice(n, n, sol.as_slice()))
}

pub fn symmetrize(p: &DMatrix<f64>) -> DMatrix<f64> {
    (p + p.transpose()) * 0.5
}

pub(crate) fn cmp_complex(a: &Complex64, b: &Complex64) -> Ordering {
    a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    fn sorted(mut v: Vec<Complex64>) -> Vec<Complex64> {
        v.sort_by(cmp_complex);
        v
    }

    #[test]
    fn short_period_eigenvalues() {
        let a = dmatrix![-2.241, 0.9897; -4.474, -0.9024];
        let e = sorted(eigenvalues(&a).unwrap());
        // trace -3.1434, det 6.4502 -> -1.5717 ± 1.99503j
        let tr: f64 = -3.1434;
        let det: f64 = -2.241 * -0.9024 - 0.9897 * -4.474;
        let im = (det - tr * tr / 4.0).sqrt();
        assert!((e[0].re - tr / 2.0).abs() < 1e-12);
        assert!((e[0].im + im).abs() < 1e-12);
        assert!((e[1].im - im).abs() < 1e-12);
        assert!((im - 1.9950).abs() < 1e-4);
    }

    #[test]
    fn rotation_is_imaginary() {
        let a = dmatrix![0.0, 1.0; -1.0, 0.0];
        let e = sorted(eigenvalues(&a).unwrap());
        assert!(e[0].re.abs() < 1e-14);
        assert!((e[0].im + 1.0).abs() < 1e-14);
    }

    #[test]
    fn larger_matrix_matches_trace_and_known_spectrum() {
        // companion matrix of (s+1)(s+2)(s+3)(s+4)(s^2+2s+5)
        // coefficients via expansion
        let roots = [-1.0, -2.0, -3.0, -4.0];
        let mut poly = vec![1.0];
        for r in roots {
            let mut next = vec![0.0; poly.len() + 1];
            for (i, c) in poly.iter().enumerate() {
                next[i] += c;
                next[i + 1] -= c * r;
            }
            poly = next;
        }
        let quad = [1.0, 2.0, 5.0];
        let mut full = vec![0.0; poly.len() + 2];
        for (i, c) in poly.iter().enumerate() {
            for (j, d) in quad.iter().enumerate() {
                full[i + j] += c * d;
            }
        }
        let n = full.len() - 1;
        let mut comp = DMatrix::<f64>::zeros(n, n);
        for j in 0..n {
            comp[(0, j)] = -full[j + 1];
        }
        for i in 1..n {
            comp[(i, i - 1)] = 1.0;
        }
        let e = eigenvalues(&comp).unwrap();
        let expected = vec![
            Complex64::new(-1.0, 0.0),
            Complex64::new(-2.0, 0.0),
            Complex64::new(-3.0, 0.0),
            Complex64::new(-4.0, 0.0),
            Complex64::new(-1.0, 2.0),
            Complex64::new(-1.0, -2.0),
        ];
        assert!(max_matching_deviation(&e, &expected) < 1e-8);
    }

    #[test]
    fn cubic_cross_check_triple_root() {
        let a = -DMatrix::<f64>::identity(3, 3);
        let r = charpoly_roots(&a);
        assert!(r.iter().all(|z| (z - Complex64::new(-1.0, 0.0)).norm() < 1e-12));
        assert!(eigenvalues(&a).is_ok());
    }

    #[test]
    fn cubic_with_complex_pair() {
        let a = dmatrix![0.0, 1.0, 0.0; 0.0, -2.241, 0.9897; 0.0, -4.474, -0.9024];
        let r = charpoly_roots(&a);
        let q = qr_eigenvalues(&a).unwrap();
        assert!(max_matching_deviation(&r, &q) < 1e-12);
    }

    #[test]
    fn nonfinite_rejected() {
        let a = dmatrix![f64::NAN, 0.0; 0.0, 1.0];
        assert_eq!(qr_eigenvalues(&a), Err(EigenError::NonFinite));
    }

    #[test]
    fn lyapunov_scalar() {
        let a = dmatrix![-1.0];
        let m = dmatrix![2.0];
        let x = solve_lyapunov(&a, &m).unwrap();
        assert!((x[(0, 0)] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn lyapunov_residual() {
        let a = dmatrix![-1.0, 2.0, 0.0; 0.0, -3.0, 1.0; 0.5, 0.0, -2.0];
        let m = dmatrix![2.0, 0.1, 0.0; 0.1, 1.0, 0.3; 0.0, 0.3, 4.0];
        let x = solve_lyapunov(&a, &m).unwrap();
        let res = a.transpose() * &x + &x * &a + &m;
        assert!(res.norm() < 1e-12);
    }

    #[test]
    fn rank_and_singularity() {
        let s = dmatrix![1.0, 2.0; 2.0, 4.0];
        assert!(!is_nonsingular(&s));
        assert_eq!(rank(&s), 1);
        assert!(is_nonsingular(&dmatrix![1.0, 0.0; 0.0, 1e-6]));
    }

    #[test]
    fn spectrum_sort_keeps_conjugates_paired() {
        let a = vec![Complex64::new(-1.0 + 1e-15, 2.0), Complex64::new(-1.0, -2.0)];
        let b = vec![Complex64::new(-1.0, -2.0), Complex64::new(-1.0, 2.0)];
        assert!(spectrum_deviation(&a, &b, 1e-9) < 1e-14);
    }
}
