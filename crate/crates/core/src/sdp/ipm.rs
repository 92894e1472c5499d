//! Primal-dual interior-point method with Nesterov-Todd scaling and Mehrotra correction.
//!
//! Standard form: minimize <C, X> subject to A(X) = b, X PSD (block diagonal, real symmetric).
//! Dual: maximize b'y subject to Z = C - A^T(y) PSD.

use nalgebra::{DMatrix, DVector};

use super::SdpError;
use crate::numerics::RMat;

pub type RVec = DVector<f64>;

pub trait ConicModel {
    fn block_dims(&self) -> &[usize];
    fn n_constraints(&self) -> usize;
    fn b(&self) -> &RVec;
    fn c(&self) -> &[RMat];
    fn apply_a(&self, x: &[RMat]) -> RVec;
    fn apply_at(&self, y: &RVec) -> Vec<RMat>;
    /// Factor the operator y -> A(W A^T(y) W) for the current scaling matrices.
    fn schur<'a>(&'a self, w: &'a [RMat]) -> Result<Box<dyn SchurSolver + 'a>, SdpError>;
}

pub trait SchurSolver {
    fn solve(&self, rhs: &RVec) -> Result<RVec, SdpError>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IpmOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub step_fraction: f64,
}

impl Default for IpmOptions {
    fn default() -> Self {
        Self { tol: 1e-9, max_iter: 200, step_fraction: 0.98 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum IpmStatus {
    Optimal,
    MaxIterations,
    Stalled,
}

#[derive(Debug, Clone)]
pub struct IpmResult {
    pub x: Vec<RMat>,
    pub y: RVec,
    pub z: Vec<RMat>,
    /// <C, X>
    pub primal_objective: f64,
    /// b'y
    pub dual_objective: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub complementarity: f64,
    pub iterations: usize,
    pub status: IpmStatus,
}

fn inner(a: &[RMat], b: &[RMat]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.dot(y)).sum()
}

fn fro(a: &[RMat]) -> f64 {
    a.iter().map(|x| x.norm_squared()).sum::<f64>().sqrt()
}

fn sym(a: &RMat) -> RMat {
    (a + a.transpose()).scale(0.5)
}

struct Scaling {
    g: RMat,
    g_inv: RMat,
    w: RMat,
    lambda: Vec<f64>,
}

fn chol_lower(a: &RMat) -> Result<RMat, SdpError> {
    a.clone()
        .cholesky()
        .map(|c| c.l())
        .ok_or_else(|| SdpError::Numerical("iterate lost positive definiteness".into()))
}

fn nt_scaling(x: &RMat, z: &RMat) -> Result<Scaling, SdpError> {
    let n = x.nrows();
    let lx = chol_lower(x)?;
    let lz = chol_lower(z)?;
    let svd = (lz.transpose() * &lx).svd(true, true);
    let v = svd.v_t.ok_or_else(|| SdpError::Numerical("svd failed".into()))?.transpose();
    let s = svd.singular_values;
    if s.iter().any(|&x| x <= 0.0 || !x.is_finite()) {
        return Err(SdpError::Numerical("degenerate scaling point".into()));
    }
    let inv_sqrt = RMat::from_diagonal(&s.map(|x| 1.0 / x.sqrt()));
    let sqrt = RMat::from_diagonal(&s.map(|x| x.sqrt()));
    let g = &lx * &v * inv_sqrt;
    let lx_inv = lx
        .clone()
        .solve_lower_triangular(&RMat::identity(n, n))
        .ok_or_else(|| SdpError::Numerical("singular Cholesky factor".into()))?;
    let g_inv = sqrt * v.transpose() * lx_inv;
    let w = sym(&(&g * g.transpose()));
    Ok(Scaling { g, g_inv, w, lambda: s.iter().copied().collect() })
}

/// Largest step alpha with Lambda + alpha * D PSD, where D is a scaled direction.
fn max_step(lambda: &[f64], d: &RMat) -> Result<f64, SdpError> {
    let n = lambda.len();
    let m = RMat::from_fn(n, n, |i, j| d[(i, j)] / (lambda[i] * lambda[j]).sqrt());
    let lo = sym(&m).symmetric_eigenvalues().min();
    if !lo.is_finite() {
        return Err(SdpError::Numerical("non-finite step direction".into()));
    }
    Ok(if lo < 0.0 { -1.0 / lo } else { f64::INFINITY })
}

struct Direction {
    dx: Vec<RMat>,
    dy: RVec,
    dz: Vec<RMat>,
}

#[allow(clippy::too_many_arguments)]
fn direction(
    model: &dyn ConicModel,
    schur: &dyn SchurSolver,
    sc: &[Scaling],
    rp: &RVec,
    rd: &[RMat],
    rt: &[RMat],
) -> Result<Direction, SdpError> {
    // R_c = G V G^T with Lambda o V = Rt
    let rc: Vec<RMat> = sc
        .iter()
        .zip(rt)
        .map(|(s, r)| {
            let n = s.lambda.len();
            let v = RMat::from_fn(n, n, |i, j| 2.0 * r[(i, j)] / (s.lambda[i] + s.lambda[j]));
            sym(&(&s.g * v * s.g.transpose()))
        })
        .collect();
    let tmp: Vec<RMat> = rc.iter().zip(sc).zip(rd).map(|((c, s), d)| c - &s.w * d * &s.w).collect();
    let rhs = rp - model.apply_a(&tmp);
    let mut dy = schur.solve(&rhs)?;
    // iterative refinement against the exact operator y -> A(W A^T(y) W)
    let scale = rhs.amax().max(1e-300);
    for _ in 0..4 {
        let at: Vec<RMat> = model.apply_at(&dy).iter().zip(sc).map(|(a, s)| &s.w * a * &s.w).collect();
        let res = &rhs - model.apply_a(&at);
        if res.amax() <= 1e-14 * scale {
            break;
        }
        dy += schur.solve(&res)?;
    }
    let at = model.apply_at(&dy);
    let dz: Vec<RMat> = rd.iter().zip(&at).map(|(d, a)| d - a).collect();
    let dx: Vec<RMat> = rc.iter().zip(sc).zip(&dz).map(|((c, s), z)| sym(&(c - &s.w * z * &s.w))).collect();
    Ok(Direction { dx, dy, dz })
}

pub fn solve_ipm(model: &dyn ConicModel, opts: &IpmOptions) -> Result<IpmResult, SdpError> {
    let dims = model.block_dims().to_vec();
    let total: usize = dims.iter().sum();
    let b = model.b().clone();
    let c = model.c().to_vec();
    let bnorm = b.amax();
    let cnorm = c.iter().map(|m| m.amax()).fold(0.0, f64::max);
    let xi = 10.0 * bnorm.max(1.0);
    let zeta = 10.0 * cnorm.max(1.0);
    let mut x: Vec<RMat> = dims.iter().map(|&n| RMat::identity(n, n).scale(xi)).collect();
    let mut z: Vec<RMat> = dims.iter().map(|&n| RMat::identity(n, n).scale(zeta)).collect();
    let mut y = RVec::zeros(model.n_constraints());
    let b2 = b.norm();
    let c2 = fro(&c);
    let mut status = IpmStatus::MaxIterations;
    let mut iterations = 0;
    let mut best_stall = 0usize;
    let mut last_merit = f64::INFINITY;
    for it in 0..=opts.max_iter {
        iterations = it;
        let rp = &b - model.apply_a(&x);
        let at = model.apply_at(&y);
        let rd: Vec<RMat> = c.iter().zip(&at).zip(&z).map(|((ci, a), zi)| ci - a - zi).collect();
        let pobj = inner(&c, &x);
        let dobj = b.dot(&y);
        let comp = inner(&x, &z);
        let denom = 1.0 + pobj.abs() + dobj.abs();
        let rel_gap = (pobj - dobj).abs() / denom;
        let rel_comp = comp / denom;
        let pinf = rp.norm() / (1.0 + b2);
        let dinf = fro(&rd) / (1.0 + c2);
        let merit = rel_gap.max(rel_comp).max(pinf).max(dinf);
        if merit <= opts.tol {
            status = IpmStatus::Optimal;
            break;
        }
        if it == opts.max_iter {
            break;
        }
        if merit > 0.5 * last_merit.min(1e300) && merit < 1e-6 {
            best_stall += 1;
            if best_stall > 8 {
                status = IpmStatus::Stalled;
                break;
            }
        } else {
            best_stall = 0;
        }
        last_merit = last_merit.min(merit);
        let mu = comp / total as f64;
        let sc: Vec<Scaling> = x.iter().zip(&z).map(|(xb, zb)| nt_scaling(xb, zb)).collect::<Result<_, _>>()?;
        let ws: Vec<RMat> = sc.iter().map(|s| s.w.clone()).collect();
        let schur = model.schur(&ws)?;
        // predictor
        let rt_aff: Vec<RMat> = sc
            .iter()
            .map(|s| RMat::from_diagonal(&RVec::from_iterator(s.lambda.len(), s.lambda.iter().map(|l| -l * l))))
            .collect();
        let aff = direction(model, schur.as_ref(), &sc, &rp, &rd, &rt_aff)?;
        let scaled = |d: &[RMat], primal: bool| -> Vec<RMat> {
            d.iter()
                .zip(&sc)
                .map(|(m, s)| {
                    if primal {
                        sym(&(&s.g_inv * m * s.g_inv.transpose()))
                    } else {
                        sym(&(s.g.transpose() * m * &s.g))
                    }
                })
                .collect()
        };
        let dxa = scaled(&aff.dx, true);
        let dza = scaled(&aff.dz, false);
        let mut ap: f64 = 1.0;
        let mut ad: f64 = 1.0;
        for (k, s) in sc.iter().enumerate() {
            ap = ap.min(max_step(&s.lambda, &dxa[k])?);
            ad = ad.min(max_step(&s.lambda, &dza[k])?);
        }
        let mut mu_aff = 0.0;
        for k in 0..x.len() {
            mu_aff += (&x[k] + aff.dx[k].scale(ap)).dot(&(&z[k] + aff.dz[k].scale(ad)));
        }
        mu_aff /= total as f64;
        let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);
        // corrector
        let rt: Vec<RMat> = sc
            .iter()
            .enumerate()
            .map(|(k, s)| {
                let n = s.lambda.len();
                let mut r = RMat::from_fn(n, n, |i, j| if i == j { sigma * mu - s.lambda[i] * s.lambda[i] } else { 0.0 });
                let cross = &dxa[k] * &dza[k];
                r -= sym(&cross);
                r
            })
            .collect();
        let dir = direction(model, schur.as_ref(), &sc, &rp, &rd, &rt)?;
        let dxs = scaled(&dir.dx, true);
        let dzs = scaled(&dir.dz, false);
        let mut ap: f64 = 1.0;
        let mut ad: f64 = 1.0;
        for (k, s) in sc.iter().enumerate() {
            ap = ap.min(opts.step_fraction * max_step(&s.lambda, &dxs[k])?);
            ad = ad.min(opts.step_fraction * max_step(&s.lambda, &dzs[k])?);
        }
        for k in 0..x.len() {
            x[k] = sym(&(&x[k] + dir.dx[k].scale(ap)));
            z[k] = sym(&(&z[k] + dir.dz[k].scale(ad)));
        }
        y += dir.dy.scale(ad);
    }
    let rp = &b - model.apply_a(&x);
    let at = model.apply_at(&y);
    let rd: Vec<RMat> = c.iter().zip(&at).zip(&z).map(|((ci, a), zi)| ci - a - zi).collect();
    Ok(IpmResult {
        primal_objective: inner(&c, &x),
        dual_objective: b.dot(&y),
        primal_residual: rp.amax(),
        dual_residual: rd.iter().map(|m| m.amax()).fold(0.0, f64::max),
        complementarity: inner(&x, &z),
        x,
        y,
        z,
        iterations,
        status,
    })
}

const CHOLESKY_BLOCK: usize = 64;

/// Right-looking blocked Cholesky; trailing updates go through gemm. Returns the lower factor.
fn blocked_cholesky(mut a: DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    let mut k = 0;
    while k < n {
        let b = CHOLESKY_BLOCK.min(n - k);
        let l11 = a.view((k, k), (b, b)).clone_owned().cholesky()?.unpack();
        a.view_mut((k, k), (b, b)).copy_from(&l11);
        if k + b < n {
            let rest = n - k - b;
            let l21t = l11.solve_lower_triangular(&a.view((k + b, k), (rest, b)).transpose())?;
            let l21 = l21t.transpose();
            a.view_mut((k + b, k), (rest, b)).copy_from(&l21);
            // lower trapezoid of the trailing block only
            let mut c = 0;
            while c < rest {
                let w = CHOLESKY_BLOCK.min(rest - c);
                a.view_mut((k + b + c, k + b + c), (rest - c, w)).gemm(
                    -1.0,
                    &l21.rows(c, rest - c),
                    &l21t.columns(c, w),
                    1.0,
                );
                c += w;
            }
        }
        k += b;
    }
    a.fill_upper_triangle(0.0, 1);
    Some(a)
}

/// Solve a symmetric positive definite system given by its lower triangle. A failed Cholesky
/// factorization is retried with a small diagonal shift before falling back to LU; callers refine
/// against the exact operator.
pub fn spd_solver(m: DMatrix<f64>) -> Result<Box<dyn Fn(&RVec) -> RVec>, SdpError> {
    let top = m.diagonal().amax().max(1e-300);
    for shift in [0.0, 1e-15, 1e-13, 1e-11] {
        let mut a = m.clone();
        for i in 0..a.nrows() {
            a[(i, i)] += shift * top;
        }
        if let Some(l) = blocked_cholesky(a) {
            return Ok(Box::new(move |r: &RVec| {
                let y = l.solve_lower_triangular(r).unwrap_or_else(|| r.clone());
                l.tr_solve_lower_triangular(&y).unwrap_or(y)
            }));
        }
    }
    let mut full = m;
    full.fill_upper_triangle_with_lower_triangle();
    let lu = full.lu();
    if lu.is_invertible() {
        return Ok(Box::new(move |r: &RVec| lu.solve(r).unwrap_or_else(|| r.clone())));
    }
    Err(SdpError::Numerical("singular Schur complement".into()))
}
