//! Dense helpers for the small matrices this crate works with: a cyclic
//! Jacobi symmetric eigensolver, closed-form 2x2 spectra, Lyapunov
//! equations and single-input pole placement.

use nalgebra::{Complex, DMatrix, DVector};

/// Off-diagonal Frobenius norm at which Jacobi sweeps stop.
pub const JACOBI_TOL: f64 = 1e-12;
/// Allowed asymmetry `max |S - S^T|` relative to `max(1, max |S|)`.
pub const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LinalgError {
    #[error("matrix is not square ({0}x{1})")]
    NotSquare(usize, usize),
    #[error("matrix is not symmetric (asymmetry {0:.3e})")]
    NotSymmetric(f64),
    #[error("matrix is singular")]
    Singular,
    #[error("pair (A, b) is not controllable")]
    Uncontrollable,
    #[error("Jacobi iteration did not converge")]
    NoConvergence,
}

fn check_symmetric(s: &DMatrix<f64>) -> Result<(), LinalgError> {
    if !s.is_square() {
        return Err(LinalgError::NotSquare(s.nrows(), s.ncols()));
    }
    let scale = s.amax().max(1.0);
    let mut asym = 0.0f64;
    for i in 0..s.nrows() {
        for j in (i + 1)..s.ncols() {
            asym = asym.max((s[(i, j)] - s[(j, i)]).abs());
        }
    }
    if asym > SYMMETRY_TOL * scale {
        return Err(LinalgError::NotSymmetric(asym));
    }
    Ok(())
}

/// All eigenvalues of a symmetric matrix, ascending, by cyclic Jacobi
/// rotations.
pub fn sym_eigenvalues(s: &DMatrix<f64>) -> Result<Vec<f64>, LinalgError> {
    check_symmetric(s)?;
    let n = s.nrows();
    let mut a = s.clone();
    // symmetrize away rounding-level asymmetry
    for i in 0..n {
        for j in (i + 1)..n {
            let m = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = m;
            a[(j, i)] = m;
        }
    }
    let scale = a.norm().max(1.0);
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)] * a[(i, j)])
            .sum::<f64>()
            .sqrt();
        if off <= JACOBI_TOL * scale {
            let mut ev: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
            ev.sort_by(f64::total_cmp);
            return Ok(ev);
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - sn * akq;
                    a[(k, q)] = sn * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - sn * aqk;
                    a[(q, k)] = sn * apk + c * aqk;
                }
            }
        }
    }
    Err(LinalgError::NoConvergence)
}

/// Largest eigenvalue of a symmetric matrix.
pub fn max_eig_sym(s: &DMatrix<f64>) -> Result<f64, LinalgError> {
    if s.nrows() == 0 {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(*sym_eigenvalues(s)?.last().unwrap())
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eig_sym(s: &DMatrix<f64>) -> Result<f64, LinalgError> {
    if s.nrows() == 0 {
        return Ok(f64::INFINITY);
    }
    Ok(sym_eigenvalues(s)?[0])
}

/// `M A + A^T M`.
pub fn he(m: &DMatrix<f64>, a: &DMatrix<f64>) -> DMatrix<f64> {
    let ma = m * a;
    &ma + ma.transpose()
}

/// Eigenvalues of a real 2x2 matrix from its characteristic polynomial.
pub fn eig2x2(a: &DMatrix<f64>) -> [Complex<f64>; 2] {
    assert_eq!(a.shape(), (2, 2));
    let half_tr = 0.5 * (a[(0, 0)] + a[(1, 1)]);
    // discriminant in the cancellation-free form ((a-d)/2)^2 + bc
    let hd = 0.5 * (a[(0, 0)] - a[(1, 1)]);
    let disc = hd * hd + a[(0, 1)] * a[(1, 0)];
    if disc >= 0.0 {
        let r = disc.sqrt();
        [
            Complex::new(half_tr - r, 0.0),
            Complex::new(half_tr + r, 0.0),
        ]
    } else {
        let r = (-disc).sqrt();
        [Complex::new(half_tr, -r), Complex::new(half_tr, r)]
    }
}

/// Eigenvalues of a general real square matrix.
pub fn eigenvalues(a: &DMatrix<f64>) -> Vec<Complex<f64>> {
    match a.nrows() {
        0 => Vec::new(),
        1 => vec![Complex::new(a[(0, 0)], 0.0)],
        2 => eig2x2(a).to_vec(),
        _ => a.clone().complex_eigenvalues().iter().copied().collect(),
    }
}

/// Solves `A^T X + X A = -Q` for `X` via the Kronecker form.
pub fn lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>, LinalgError> {
    let n = a.nrows();
    if !a.is_square() {
        return Err(LinalgError::NotSquare(a.nrows(), a.ncols()));
    }
    let eye = DMatrix::<f64>::identity(n, n);
    let at = a.transpose();
    // vec(A^T X) = (I ⊗ A^T) vec X, vec(X A) = (A^T ⊗ I) vec X (column-major vec)
    let k = eye.kronecker(&at) + at.kronecker(&eye);
    let rhs = DVector::from_iterator(n * n, q.iter().map(|v| -v));
    let sol = k.lu().solve(&rhs).ok_or(LinalgError::Singular)?;
    let x = DMatrix::from_column_slice(n, n, sol.as_slice());
    Ok(0.5 * (&x + x.transpose()))
}

/// Coefficients `[c_0, …, c_{n-1}]` of the monic polynomial with the
/// given roots (conjugate pairs must both be listed).
pub fn poly_from_roots(roots: &[Complex<f64>]) -> Vec<f64> {
    let mut c = vec![Complex::new(1.0, 0.0)];
    for r in roots {
        let mut next = vec![Complex::new(0.0, 0.0); c.len() + 1];
        for (k, ck) in c.iter().enumerate() {
            next[k + 1] += ck;
            next[k] -= ck * r;
        }
        c = next;
    }
    c.pop();
    c.into_iter().map(|z| z.re).collect()
}

/// Ackermann's formula for `u = K x` (sign convention of this crate):
/// returns `K` such that `A + b K` has characteristic polynomial
/// `s^n + c_{n-1} s^{n-1} + … + c_0`.
pub fn place_siso(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    coeffs: &[f64],
) -> Result<DMatrix<f64>, LinalgError> {
    let n = a.nrows();
    assert_eq!(coeffs.len(), n);
    let mut ctrb = DMatrix::zeros(n, n);
    let mut col = b.clone();
    for j in 0..n {
        ctrb.set_column(j, &col);
        col = a * col;
    }
    let inv = ctrb.try_inverse().ok_or(LinalgError::Uncontrollable)?;
    // p(A) = A^n + sum c_k A^k
    let mut pa = DMatrix::zeros(n, n);
    let mut power = DMatrix::<f64>::identity(n, n);
    for &c in coeffs {
        pa += c * &power;
        power = &power * a;
    }
    pa += power;
    let last = inv.rows(n - 1, 1).into_owned();
    Ok(-(last * pa))
}
