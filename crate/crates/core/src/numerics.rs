//! Dense complex matrix primitives.

use nalgebra::DMatrix;
use num_complex::Complex64;
use thiserror::Error;

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;
pub type RMat = DMatrix<f64>;

pub const PSD_TOL: f64 = 1e-9;
pub const HERMITIAN_TOL: f64 = 1e-12;
const JACOBI_SWEEPS: usize = 100;
const JACOBI_TOL: f64 = 1e-13;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("matrix is not Hermitian (max deviation {0:e})")]
    NotHermitian(f64),
    #[error("matrix has a non-finite entry")]
    NonFinite,
    #[error("eigensolver did not converge after {0} sweeps")]
    NoConvergence(usize),
    #[error("matrix has eigenvalue {0:e} below tolerance")]
    Negative(f64),
}

pub type Result<T> = std::result::Result<T, NumericsError>;

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn r(re: f64) -> C64 {
    C64::new(re, 0.0)
}

/// Hermitian matrix checked at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianOp {
    matrix: CMat,
}

impl HermitianOp {
    pub fn new(matrix: CMat) -> Result<Self> {
        if !matrix.is_square() {
            return Err(NumericsError::Dimension(format!(
                "{}x{} is not square",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        if matrix.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(NumericsError::NonFinite);
        }
        let dev = hermitian_deviation(&matrix);
        if dev > HERMITIAN_TOL * (1.0 + max_abs(&matrix)) {
            return Err(NumericsError::NotHermitian(dev));
        }
        Ok(Self { matrix: hermitian_part(&matrix) })
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &CMat {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMat {
        self.matrix
    }
}

pub fn max_abs(a: &CMat) -> f64 {
    a.iter().fold(0.0, |m, z| m.max(z.norm()))
}

pub fn hermitian_deviation(a: &CMat) -> f64 {
    let n = a.nrows();
    let mut dev: f64 = 0.0;
    for i in 0..n {
        for j in i..n {
            dev = dev.max((a[(i, j)] - a[(j, i)].conj()).norm());
        }
    }
    dev
}

pub fn hermitian_part(a: &CMat) -> CMat {
    (a + a.adjoint()).scale(0.5)
}

pub fn to_complex(a: &RMat) -> CMat {
    a.map(|x| C64::new(x, 0.0))
}

pub fn identity(n: usize) -> CMat {
    CMat::identity(n, n)
}

pub fn trace(a: &CMat) -> C64 {
    a.diagonal().iter().sum()
}

/// Real part of tr(A B) without forming the product.
pub fn trace_product_re(a: &CMat, b: &CMat) -> f64 {
    let mut s = 0.0;
    for i in 0..a.nrows() {
        for k in 0..a.ncols() {
            let x = a[(i, k)] * b[(k, i)];
            s += x.re;
        }
    }
    s
}

pub fn kron(a: &CMat, b: &CMat) -> CMat {
    a.kronecker(b)
}

pub fn kron_all(ops: &[CMat]) -> CMat {
    ops.iter()
        .fold(CMat::identity(1, 1), |acc, op| acc.kronecker(op))
}

pub fn frobenius_distance(a: &CMat, b: &CMat) -> f64 {
    (a - b).norm()
}

/// Cyclic Jacobi eigendecomposition. Eigenvalues ascending, eigenvectors as columns.
pub fn eig_hermitian(h: &HermitianOp) -> Result<(Vec<f64>, CMat)> {
    eig_hermitian_raw(h.matrix())
}

pub fn eig_hermitian_raw(h: &CMat) -> Result<(Vec<f64>, CMat)> {
    let n = h.nrows();
    if !h.is_square() {
        return Err(NumericsError::Dimension("eigensolver needs a square matrix".into()));
    }
    let mut a = hermitian_part(h);
    let mut v = CMat::identity(n, n);
    let scale = a.norm().max(f64::MIN_POSITIVE);
    let mut converged = n < 2;
    for _ in 0..JACOBI_SWEEPS {
        if converged {
            break;
        }
        let off: f64 = off_diagonal_norm(&a);
        if off <= JACOBI_TOL * scale {
            converged = true;
            break;
        }
        for p in 0..n - 1 {
            for q in p + 1..n {
                let b = a[(p, q)];
                let babs = b.norm();
                if babs <= f64::MIN_POSITIVE || babs < 1e-3 * JACOBI_TOL * scale / n as f64 {
                    continue;
                }
                let u = b / babs;
                let app = a[(p, p)].re;
                let aqq = a[(q, q)].re;
                let tau = (aqq - app) / (2.0 * babs);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let cs = 1.0 / (1.0 + t * t).sqrt();
                let sn = t * cs;
                let ubar = u.conj();
                // columns: A <- A U with U = [[c, s], [-s ubar, c ubar]]
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = akp * cs - akq * ubar * sn;
                    a[(k, q)] = akp * sn + akq * ubar * cs;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = apk * cs - aqk * u * sn;
                    a[(q, k)] = apk * sn + aqk * u * cs;
                }
                a[(p, q)] = C64::new(0.0, 0.0);
                a[(q, p)] = C64::new(0.0, 0.0);
                a[(p, p)] = C64::new(a[(p, p)].re, 0.0);
                a[(q, q)] = C64::new(a[(q, q)].re, 0.0);
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = vkp * cs - vkq * ubar * sn;
                    v[(k, q)] = vkp * sn + vkq * ubar * cs;
                }
            }
        }
    }
    if !converged && off_diagonal_norm(&a) > JACOBI_TOL * scale {
        return Err(NumericsError::NoConvergence(JACOBI_SWEEPS));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].re.total_cmp(&a[(j, j)].re));
    let vals = order.iter().map(|&i| a[(i, i)].re).collect();
    let vecs = CMat::from_fn(n, n, |r, c| v[(r, order[c])]);
    Ok((vals, vecs))
}

fn off_diagonal_norm(a: &CMat) -> f64 {
    let n = a.nrows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a[(i, j)].norm_sqr();
            }
        }
    }
    s.sqrt()
}

pub fn eigvals_hermitian(h: &CMat) -> Result<Vec<f64>> {
    Ok(eig_hermitian_raw(h)?.0)
}

/// Real symmetric Jacobi, same conventions as [`eig_hermitian_raw`].
pub fn eig_symmetric(s: &RMat) -> Result<(Vec<f64>, RMat)> {
    let n = s.nrows();
    if !s.is_square() {
        return Err(NumericsError::Dimension("eigensolver needs a square matrix".into()));
    }
    let mut a = (s + s.transpose()).scale(0.5);
    let mut v = RMat::identity(n, n);
    let scale = a.norm().max(f64::MIN_POSITIVE);
    let off = |a: &RMat| {
        let mut t = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    t += a[(i, j)] * a[(i, j)];
                }
            }
        }
        t.sqrt()
    };
    let mut converged = n < 2;
    for _ in 0..JACOBI_SWEEPS {
        if converged {
            break;
        }
        if off(&a) <= JACOBI_TOL * scale {
            converged = true;
            break;
        }
        for p in 0..n - 1 {
            for q in p + 1..n {
                let b = a[(p, q)];
                if b.abs() <= f64::MIN_POSITIVE || b.abs() < 1e-3 * JACOBI_TOL * scale / n as f64 {
                    continue;
                }
                let tau = (a[(q, q)] - a[(p, p)]) / (2.0 * b);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let cs = 1.0 / (1.0 + t * t).sqrt();
                let sn = t * cs;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = akp * cs - akq * sn;
                    a[(k, q)] = akp * sn + akq * cs;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = apk * cs - aqk * sn;
                    a[(q, k)] = apk * sn + aqk * cs;
                }
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = vkp * cs - vkq * sn;
                    v[(k, q)] = vkp * sn + vkq * cs;
                }
            }
        }
    }
    if !converged && off(&a) > JACOBI_TOL * scale {
        return Err(NumericsError::NoConvergence(JACOBI_SWEEPS));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]));
    let vals = order.iter().map(|&i| a[(i, i)]).collect();
    let vecs = RMat::from_fn(n, n, |r, c| v[(r, order[c])]);
    Ok((vals, vecs))
}

pub fn min_eigenvalue(h: &CMat) -> Result<f64> {
    if h.nrows() == 0 {
        return Ok(0.0);
    }
    Ok(eigvals_hermitian(h)?[0])
}

/// Sum of singular values.
pub fn trace_norm(a: &CMat) -> Result<f64> {
    if !a.is_square() {
        return Err(NumericsError::Dimension(format!(
            "trace norm of {}x{} matrix",
            a.nrows(),
            a.ncols()
        )));
    }
    if hermitian_deviation(a) <= HERMITIAN_TOL * (1.0 + max_abs(a)) {
        return Ok(eigvals_hermitian(a)?.iter().map(|x| x.abs()).sum());
    }
    let svd = a.clone().try_svd(false, false, f64::EPSILON, 1000).ok_or(NumericsError::NoConvergence(1000))?;
    Ok(svd.singular_values.sum())
}

pub fn is_psd(h: &CMat, tol: f64) -> Result<bool> {
    Ok(min_eigenvalue(h)? >= -tol)
}

pub fn matrix_sqrt_psd(h: &HermitianOp, tol: f64) -> Result<HermitianOp> {
    let (vals, vecs) = eig_hermitian(h)?;
    if let Some(&lo) = vals.first() {
        if lo < -tol {
            return Err(NumericsError::Negative(lo));
        }
    }
    let d = CMat::from_diagonal(&nalgebra::DVector::from_iterator(
        vals.len(),
        vals.iter().map(|x| C64::new(x.max(0.0).sqrt(), 0.0)),
    ));
    HermitianOp::new(&vecs * d * vecs.adjoint())
}

fn check_dims(n: usize, dims: &[usize]) -> Result<()> {
    let prod: usize = dims.iter().product();
    if prod != n {
        return Err(NumericsError::Dimension(format!(
            "subsystem dims {dims:?} have product {prod}, matrix has {n}"
        )));
    }
    Ok(())
}

/// Partial trace over all subsystems not listed in `keep`. Subsystem 0 is the most significant.
pub fn partial_trace(a: &CMat, dims: &[usize], keep: &[usize]) -> Result<CMat> {
    if !a.is_square() {
        return Err(NumericsError::Dimension("partial trace needs a square matrix".into()));
    }
    check_dims(a.nrows(), dims)?;
    if keep.iter().any(|&k| k >= dims.len()) {
        return Err(NumericsError::Dimension(format!("keep {keep:?} out of range")));
    }
    let n = a.nrows();
    let kept: Vec<bool> = (0..dims.len()).map(|s| keep.contains(&s)).collect();
    let dk: usize = (0..dims.len()).filter(|&s| kept[s]).map(|s| dims[s]).product();
    let mut kidx = vec![0usize; n];
    let mut tidx = vec![0usize; n];
    for (i, (ki, ti)) in kidx.iter_mut().zip(tidx.iter_mut()).enumerate() {
        let mut rem = i;
        let (mut k, mut kstride, mut t, mut tstride) = (0, 1, 0, 1);
        for s in (0..dims.len()).rev() {
            let digit = rem % dims[s];
            rem /= dims[s];
            if kept[s] {
                k += digit * kstride;
                kstride *= dims[s];
            } else {
                t += digit * tstride;
                tstride *= dims[s];
            }
        }
        *ki = k;
        *ti = t;
    }
    let mut out = CMat::zeros(dk, dk);
    for j in 0..n {
        for i in 0..n {
            if tidx[i] == tidx[j] {
                out[(kidx[i], kidx[j])] += a[(i, j)];
            }
        }
    }
    Ok(out)
}

/// Index map for a subsystem permutation: position `p` of the result holds old subsystem `perm[p]`.
pub fn permutation_index_map(dims: &[usize], perm: &[usize]) -> Result<Vec<usize>> {
    let k = dims.len();
    let mut seen = vec![false; k];
    if perm.len() != k || perm.iter().any(|&p| p >= k || std::mem::replace(&mut seen[p], true)) {
        return Err(NumericsError::Dimension(format!("{perm:?} is not a permutation of {k}")));
    }
    let n: usize = dims.iter().product();
    let mut old_stride = vec![1usize; k];
    for s in (0..k.saturating_sub(1)).rev() {
        old_stride[s] = old_stride[s + 1] * dims[s + 1];
    }
    let new_dims: Vec<usize> = perm.iter().map(|&p| dims[p]).collect();
    let mut map = vec![0usize; n];
    for (inew, slot) in map.iter_mut().enumerate() {
        let mut rem = inew;
        let mut old = 0;
        for p in (0..k).rev() {
            let digit = rem % new_dims[p];
            rem /= new_dims[p];
            old += digit * old_stride[perm[p]];
        }
        *slot = old;
    }
    Ok(map)
}

pub fn permute_subsystems(a: &CMat, dims: &[usize], perm: &[usize]) -> Result<CMat> {
    check_dims(a.nrows(), dims)?;
    let map = permutation_index_map(dims, perm)?;
    let n = a.nrows();
    Ok(CMat::from_fn(n, n, |i, j| a[(map[i], map[j])]))
}

pub fn permutation_matrix(dims: &[usize], perm: &[usize]) -> Result<CMat> {
    let map = permutation_index_map(dims, perm)?;
    let n = map.len();
    let mut p = CMat::zeros(n, n);
    for (i, &o) in map.iter().enumerate() {
        p[(i, o)] = C64::new(1.0, 0.0);
    }
    Ok(p)
}

/// Row-major vectorization |A>> = sum_ij A_ij |i>|j>.
pub fn vec_row_major(a: &CMat) -> nalgebra::DVector<C64> {
    let (r, c) = a.shape();
    nalgebra::DVector::from_fn(r * c, |k, _| a[(k / c, k % c)])
}

pub fn projector(v: &nalgebra::DVector<C64>) -> CMat {
    v * v.adjoint()
}

pub fn is_unitary(u: &CMat, tol: f64) -> bool {
    u.is_square() && max_abs(&(u.adjoint() * u - CMat::identity(u.nrows(), u.ncols()))) <= tol
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pauli_x() -> CMat {
        CMat::from_row_slice(2, 2, &[r(0.0), r(1.0), r(1.0), r(0.0)])
    }

    #[test]
    fn diagonal_spectrum() {
        let h = CMat::from_diagonal(&nalgebra::DVector::from_vec(vec![r(3.0), r(1.0), r(2.0)]));
        let (vals, _) = eig_hermitian_raw(&h).unwrap();
        assert_eq!(vals, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn pauli_x_spectrum() {
        let (vals, v) = eig_hermitian_raw(&pauli_x()).unwrap();
        assert!((vals[0] + 1.0).abs() < 1e-14 && (vals[1] - 1.0).abs() < 1e-14);
        assert!(is_unitary(&v, 1e-12));
    }

    #[test]
    fn trace_norm_basics() {
        assert_eq!(trace_norm(&CMat::zeros(3, 3)).unwrap(), 0.0);
        let d = CMat::from_diagonal(&nalgebra::DVector::from_vec(vec![r(1.0), r(-2.0)]));
        assert!((trace_norm(&d).unwrap() - 3.0).abs() < 1e-14);
        assert!(trace_norm(&CMat::zeros(2, 3)).is_err());
    }

    #[test]
    fn pure_state_difference() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let one = CMat::from_row_slice(2, 2, &[r(0.0), r(0.0), r(0.0), r(1.0)]);
        let plus = CMat::from_element(2, 2, r(0.5));
        let overlap_sq: f64 = s * s;
        let oracle = 2.0 * (1.0 - overlap_sq).sqrt();
        assert!((trace_norm(&(one - plus)).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn sqrt_and_psd() {
        let h = HermitianOp::new(CMat::from_diagonal(&nalgebra::DVector::from_vec(vec![r(4.0), r(9.0)]))).unwrap();
        let s = matrix_sqrt_psd(&h, PSD_TOL).unwrap();
        assert!((s.matrix()[(0, 0)].re - 2.0).abs() < 1e-12);
        assert!((s.matrix()[(1, 1)].re - 3.0).abs() < 1e-12);
        let tiny = CMat::from_diagonal(&nalgebra::DVector::from_vec(vec![r(1.0), r(-1e-15)]));
        assert!(is_psd(&tiny, 1e-9).unwrap());
        let neg = HermitianOp::new(CMat::from_diagonal(&nalgebra::DVector::from_vec(vec![r(1.0), r(-1.0)]))).unwrap();
        assert!(matches!(matrix_sqrt_psd(&neg, PSD_TOL), Err(NumericsError::Negative(_))));
    }

    #[test]
    fn kron_products() {
        let i2 = identity(2);
        let x = pauli_x();
        let lhs = kron(&i2, &x) * kron(&x, &i2);
        assert!(frobenius_distance(&lhs, &kron(&x, &x)) < 1e-15);
    }

    #[test]
    fn partial_trace_product_and_bell() {
        let rho = CMat::from_row_slice(2, 2, &[r(0.7), c(0.1, 0.2), c(0.1, -0.2), r(0.3)]);
        let sigma = CMat::from_row_slice(2, 2, &[r(0.4), c(0.0, 0.3), c(0.0, -0.3), r(0.6)]);
        let pt = partial_trace(&kron(&rho, &sigma), &[2, 2], &[0]).unwrap();
        assert!(frobenius_distance(&pt, &rho) < 1e-15);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let phi = nalgebra::DVector::from_vec(vec![r(s), r(0.0), r(0.0), r(s)]);
        let pt = partial_trace(&projector(&phi), &[2, 2], &[0]).unwrap();
        assert!(frobenius_distance(&pt, &identity(2).scale(0.5)) < 1e-15);
        assert!(partial_trace(&identity(4), &[2, 3], &[0]).is_err());
    }

    #[test]
    fn permutation_swaps_factors() {
        let a = CMat::from_fn(2, 2, |i, j| c(i as f64, j as f64));
        let b = CMat::from_fn(3, 3, |i, j| c((i * j) as f64, 1.0));
        let ab = kron(&a, &b);
        let ba = permute_subsystems(&ab, &[2, 3], &[1, 0]).unwrap();
        assert!(frobenius_distance(&ba, &kron(&b, &a)) < 1e-15);
        let p = permutation_matrix(&[2, 3], &[1, 0]).unwrap();
        assert!(frobenius_distance(&(&p * &ab * p.adjoint()), &ba) < 1e-15);
    }

    #[test]
    fn hermitian_op_rejects_asymmetric() {
        let m = CMat::from_row_slice(2, 2, &[r(0.0), r(1.0), r(0.0), r(0.0)]);
        assert!(matches!(HermitianOp::new(m), Err(NumericsError::NotHermitian(_))));
    }
}
