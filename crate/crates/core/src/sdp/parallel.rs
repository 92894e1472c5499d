//! Full-space two-outcome parallel tester SDP with a structured Schur solver.
//!
//! maximize 1/2 tr(M_1 P_1) + 1/2 tr(M_2 P_2) s.t. P_1 + P_2 = I_K (x) X, tr X = 1, all PSD.
//! The Schur matrix is assembled entrywise from the scaling blocks, without explicit constraint
//! matrices.

use nalgebra::DMatrix;

use super::ipm::{self, ConicModel, IpmOptions, RVec, SchurSolver};
use super::problem::{solution_from_real, SdpSolution};
use super::{Result, SdpError};
use crate::numerics::{CMat, RMat};

pub struct ParallelModel {
    k: usize,
    h: usize,
    dims: Vec<usize>,
    c: Vec<RMat>,
    b: RVec,
}

impl ParallelModel {
    /// `m1`, `m2` act on K (x) H with K the leading factor of dimension `k`.
    pub fn new(m1: &CMat, m2: &CMat, k: usize, h: usize) -> Result<Self> {
        let n = k * h;
        if m1.shape() != (n, n) || m2.shape() != (n, n) {
            return Err(SdpError::Structure(format!("Choi operators must be {n}x{n}")));
        }
        if m1.iter().chain(m2.iter()).any(|z| z.im.abs() > 1e-12) {
            return Err(SdpError::Structure("structured parallel model needs real Choi operators".into()));
        }
        let re = |m: &CMat| m.map(|z| z.re);
        let rows = n * (n + 1) / 2 + 1;
        let mut b = RVec::zeros(rows);
        b[rows - 1] = 1.0;
        Ok(Self {
            k,
            h,
            dims: vec![n, n, h],
            c: vec![re(m1).scale(-0.5), re(m2).scale(-0.5), RMat::zeros(h, h)],
            b,
        })
    }

    fn n(&self) -> usize {
        self.k * self.h
    }

    fn partial_trace_k(&self, y: &RMat) -> RMat {
        let h = self.h;
        let mut out = RMat::zeros(h, h);
        for q in 0..self.k {
            out += y.view((q * h, q * h), (h, h));
        }
        out
    }

    fn lift(&self, z: &RMat) -> RMat {
        RMat::identity(self.k, self.k).kronecker(z)
    }

    fn y_matrix(&self, y: &RVec) -> RMat {
        let n = self.n();
        let mut m = RMat::zeros(n, n);
        let mut idx = 0;
        for p in 0..n {
            for q in p..n {
                if p == q {
                    m[(p, p)] = y[idx];
                } else {
                    m[(p, q)] = 0.5 * y[idx];
                    m[(q, p)] = 0.5 * y[idx];
                }
                idx += 1;
            }
        }
        m
    }
}

impl ConicModel for ParallelModel {
    fn block_dims(&self) -> &[usize] {
        &self.dims
    }

    fn n_constraints(&self) -> usize {
        self.b.len()
    }

    fn b(&self) -> &RVec {
        &self.b
    }

    fn c(&self) -> &[RMat] {
        &self.c
    }

    fn apply_a(&self, x: &[RMat]) -> RVec {
        let s = &x[0] + &x[1] - self.lift(&x[2]);
        let n = self.n();
        let mut v = RVec::zeros(self.b.len());
        let mut idx = 0;
        for p in 0..n {
            for q in p..n {
                v[idx] = s[(p, q)];
                idx += 1;
            }
        }
        v[idx] = x[2].trace();
        v
    }

    fn apply_at(&self, y: &RVec) -> Vec<RMat> {
        let ym = self.y_matrix(y);
        let t = y[y.len() - 1];
        let x = RMat::identity(self.h, self.h).scale(t) - self.partial_trace_k(&ym);
        vec![ym.clone(), ym, x]
    }

    fn schur<'a>(&'a self, w: &'a [RMat]) -> Result<Box<dyn SchurSolver + 'a>> {
        let n = self.n();
        let h = self.h;
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|p| (p..n).map(move |q| (p, q))).collect();
        let m = pairs.len() + 1;
        let mut s = DMatrix::<f64>::zeros(m, m);
        let (w1, w2) = (&w[0], &w[1]);
        // lower triangle only, column by column
        for (j, &(r, t)) in pairs.iter().enumerate() {
            for (i, &(p, q)) in pairs.iter().enumerate().skip(j) {
                s[(i, j)] = 0.5
                    * (w1[(p, r)] * w1[(q, t)] + w1[(p, t)] * w1[(q, r)] + w2[(p, r)] * w2[(q, t)] + w2[(p, t)] * w2[(q, r)]);
            }
        }
        // rows whose X coefficient is nonzero: p, q inside one diagonal K block
        let w3 = &w[2];
        let w3sq = w3 * w3;
        let x_rows: Vec<(usize, usize, usize)> = pairs
            .iter()
            .enumerate()
            .filter(|(_, (p, q))| p / h == q / h)
            .map(|(i, (p, q))| (i, p % h, q % h))
            .collect();
        for &(i, a, b) in &x_rows {
            for &(j, c, d) in x_rows.iter().filter(|r| r.0 <= i) {
                s[(i, j)] += 0.5 * (w3[(a, c)] * w3[(b, d)] + w3[(a, d)] * w3[(b, c)]);
            }
            s[(m - 1, i)] -= w3sq[(a, b)];
        }
        s[(m - 1, m - 1)] = w3sq.trace();
        Ok(Box::new(DenseSolve(ipm::spd_solver(s)?)))
    }
}

struct DenseSolve(Box<dyn Fn(&RVec) -> RVec>);

impl SchurSolver for DenseSolve {
    fn solve(&self, rhs: &RVec) -> Result<RVec> {
        Ok((self.0)(rhs))
    }
}

/// Optimal two-outcome parallel tester for real Choi operators on K (x) H.
pub fn solve_parallel(m1: &CMat, m2: &CMat, k: usize, h: usize, opts: &IpmOptions) -> Result<SdpSolution> {
    let model = ParallelModel::new(m1, m2, k, h)?;
    let res = ipm::solve_ipm(&model, opts)?;
    Ok(solution_from_real(res))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::C64;

    #[test]
    fn structured_solve_inverts_schur_operator() {
        let (k, h) = (2, 3);
        let n = k * h;
        let m = CMat::from_fn(n, n, |i, j| C64::new(((i * 7 + j * 3) % 5) as f64 + if i == j { 9.0 } else { 0.0 }, 0.0));
        let m = &m + m.transpose();
        let model = ParallelModel::new(&m, &m, k, h).unwrap();
        let spd = |s: usize, seed: usize| {
            let g = RMat::from_fn(s, s, |i, j| (((i + 1) * (j + 2) * (seed + 3)) % 7) as f64 - 3.0);
            &g * g.transpose() + RMat::identity(s, s)
        };
        let w = vec![spd(n, 1), spd(n, 2), spd(h, 3)];
        let solver = model.schur(&w).unwrap();
        let y = RVec::from_fn(model.n_constraints(), |i, _| ((i * 13) % 11) as f64 - 5.0);
        let at = model.apply_at(&y);
        let wat: Vec<RMat> = at.iter().zip(&w).map(|(a, wb)| wb * a * wb).collect();
        let r = model.apply_a(&wat);
        let back = solver.solve(&r).unwrap();
        assert!((back - y).amax() < 1e-8);
    }
}
