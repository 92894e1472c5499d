//! Closed forms and scalar optimizations.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI};

use crate::choi::{self, choi_pair, eta_full};
use crate::numerics::{self, CMat, HermitianOp, RMat, C64};
use crate::su2rep::{CouplingOrder, IsoTypicOp, Scaling};

use super::{Ordering, Result, TaskError};

/// Pre-scan resolution for scalar maximization.
pub const SCAN_POINTS: usize = 10_000;
/// Grid intervals for the diamond-norm scan.
pub const DIAMOND_GRID: usize = 2048;
const GOLDEN_WIDTH: f64 = 1e-9;
const BISECTION_WIDTH: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarMax {
    pub argmax: f64,
    pub value: f64,
    /// Interior local maxima seen on the pre-scan; 1 for a unimodal objective.
    pub local_maxima: usize,
}

/// Maximize `f` on [lo, hi]: dense pre-scan, golden section inside the bracket around the best
/// scan point, then bisection on the sign of `df` when it is supplied.
pub fn maximize_scalar(f: &dyn Fn(f64) -> f64, df: Option<&dyn Fn(f64) -> f64>, lo: f64, hi: f64, n_scan: usize) -> ScalarMax {
    let n = n_scan.max(2);
    let h = (hi - lo) / n as f64;
    let vals: Vec<f64> = (0..=n).map(|i| f(lo + h * i as f64)).collect();
    let best = (0..=n).fold(0, |b, i| if vals[i] > vals[b] { i } else { b });
    let local_maxima = (1..n).filter(|&i| vals[i] > vals[i - 1] && vals[i] >= vals[i + 1]).count()
        + usize::from(vals[0] > vals[1])
        + usize::from(vals[n] > vals[n - 1]);
    let mut a = lo + h * best.saturating_sub(1) as f64;
    let mut b = lo + h * (best + 1).min(n) as f64;
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > GOLDEN_WIDTH {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    let mut t = 0.5 * (a + b);
    if let Some(df) = df {
        let (mut l, mut r) = (a - GOLDEN_WIDTH, b + GOLDEN_WIDTH);
        if df(l) > 0.0 && df(r) < 0.0 {
            while r - l > BISECTION_WIDTH {
                let m = 0.5 * (l + r);
                if df(m) > 0.0 {
                    l = m;
                } else {
                    r = m;
                }
            }
            t = 0.5 * (l + r);
        }
    }
    let mut out = ScalarMax { argmax: t, value: f(t), local_maxima };
    let scan_t = lo + h * best as f64;
    if vals[best] > out.value {
        out = ScalarMax { argmax: scan_t, value: vals[best], local_maxima };
    }
    out
}

fn real_block(op: &IsoTypicOp, j2: u32, l2: u32) -> Result<RMat> {
    op.block(j2, l2)
        .map(|m| m.map(|z| z.re))
        .ok_or_else(|| TaskError::Consistency(format!("missing block ({j2}/2, {l2}/2)")))
}

fn trace_norm_real(m: &RMat) -> Result<f64> {
    Ok(numerics::trace_norm(&numerics::to_complex(m))?)
}

/// M^(1) - M^(2) for the parallel (1,1) problem, block by block.
#[derive(Debug, Clone)]
pub struct DiamondBlocks {
    /// (1/2, 1/2), 4x4
    pub hh: RMat,
    /// (3/2, 1/2), 2x2
    pub qh: RMat,
    /// (1/2, 3/2), 2x2
    pub hq: RMat,
    /// (3/2, 3/2), 1x1
    pub qq: RMat,
}

impl DiamondBlocks {
    pub fn new() -> Result<Self> {
        let pair = choi_pair(&Ordering::TargetLast.assignment())?;
        let diff = |j2, l2| -> Result<RMat> { Ok(real_block(&pair.blocks[0], j2, l2)? - real_block(&pair.blocks[1], j2, l2)?) };
        Ok(Self { hh: diff(1, 1)?, qh: diff(3, 1)?, hq: diff(1, 3)?, qq: diff(3, 3)? })
    }

    /// (Delta_q, Delta'_q) for X_q = cos^2 t |hat0><hat0| + sin^2 t |hat1><hat1|.
    pub fn p1_terms(&self, t: f64) -> Result<(f64, f64)> {
        let s = RMat::from_diagonal(&nalgebra::DVector::from_vec(vec![t.cos().abs(), t.sin().abs()]));
        let s2 = RMat::identity(2, 2).kronecker(&s);
        Ok((trace_norm_real(&(&s2 * &self.hh * &s2))?, trace_norm_real(&(&s * &self.qh * &s))?))
    }

    /// Delta'': all input weight on the spin-3/2 sector.
    pub fn p0_term(&self) -> Result<f64> {
        Ok(trace_norm_real(&self.hq)? + trace_norm_real(&self.qq)?)
    }

    /// Trace norm of the compressed difference for a Haar-symmetric input with spin-1/2 block
    /// `x_half` (2x2, hat basis) and spin-3/2 weight `x_quarter`, both Input-scaled.
    pub fn compressed_norm(&self, x_half: &RMat, x_quarter: f64) -> Result<f64> {
        let sx = psd_sqrt_real(x_half)?;
        let s2 = RMat::identity(2, 2).kronecker(&sx);
        let q = x_quarter.max(0.0);
        Ok(trace_norm_real(&(&s2 * &self.hh * &s2))?
            + trace_norm_real(&(&sx * &self.qh * &sx))?
            + q * (trace_norm_real(&self.hq)? + trace_norm_real(&self.qq)?))
    }
}

fn psd_sqrt_real(x: &RMat) -> Result<RMat> {
    let s = numerics::matrix_sqrt_psd(&HermitianOp::new(numerics::to_complex(x))?, numerics::PSD_TOL)?;
    Ok(s.matrix().map(|z| z.re))
}

/// (2/sqrt3) sin t (1 + cos t): the p = 1 branch of the diamond norm.
pub fn diamond_p1_closed_form(t: f64) -> f64 {
    2.0 / 3f64.sqrt() * t.sin() * (1.0 + t.cos())
}

#[derive(Debug, Clone)]
pub struct DiamondScan {
    pub t: Vec<f64>,
    /// Weight on |hat0>: q = cos^2 t.
    pub q: Vec<f64>,
    pub delta_q: Vec<f64>,
    pub delta_prime_q: Vec<f64>,
    pub delta_pp: f64,
    /// p = 1 objective refined by golden section.
    pub p1: ScalarMax,
    /// Success probability of the p = 0 branch.
    pub p0_asp: f64,
    /// 1/2 + 1/4 max over both branches.
    pub optimum: f64,
    pub branch: u8,
}

/// Scan t in [0, pi/2] with `intervals` steps and maximize over the two extreme branches.
pub fn diamond_scan_11(intervals: usize) -> Result<DiamondScan> {
    let blocks = DiamondBlocks::new()?;
    let n = intervals.max(1000);
    let mut scan = DiamondScan {
        t: Vec::with_capacity(n + 1),
        q: Vec::with_capacity(n + 1),
        delta_q: Vec::with_capacity(n + 1),
        delta_prime_q: Vec::with_capacity(n + 1),
        delta_pp: blocks.p0_term()?,
        p1: ScalarMax { argmax: 0.0, value: 0.0, local_maxima: 0 },
        p0_asp: 0.0,
        optimum: 0.0,
        branch: 1,
    };
    for i in 0..=n {
        let t = FRAC_PI_2 * i as f64 / n as f64;
        let (d, dp) = blocks.p1_terms(t)?;
        scan.t.push(t);
        scan.q.push(t.cos().powi(2));
        scan.delta_q.push(d);
        scan.delta_prime_q.push(dp);
    }
    let f = |t: f64| blocks.p1_terms(t).map(|(a, b)| a + b).unwrap_or(f64::NEG_INFINITY);
    scan.p1 = maximize_scalar(&f, None, 0.0, FRAC_PI_2, n);
    scan.p0_asp = 0.5 + 0.25 * scan.delta_pp;
    let p1_asp = 0.5 + 0.25 * scan.p1.value;
    if p1_asp >= scan.p0_asp {
        scan.optimum = p1_asp;
        scan.branch = 1;
    } else {
        scan.optimum = scan.p0_asp;
        scan.branch = 0;
    }
    Ok(scan)
}

/// ||(I (x) sqrt X)(M1 - M2)(I (x) sqrt X)||_1 on the full 64-dim space for the branch-`p`
/// input with parameter t.
pub fn diamond_full_space(p: f64, t: f64) -> Result<f64> {
    let pair = choi_pair(&Ordering::TargetLast.assignment())?;
    let order = CouplingOrder::Sequential(3);
    let mut blocks = BTreeMap::new();
    let xq = CMat::from_diagonal(&nalgebra::DVector::from_vec(vec![
        C64::new(p * t.cos().powi(2), 0.0),
        C64::new(p * t.sin().powi(2), 0.0),
    ]));
    blocks.insert((0, 1), xq);
    blocks.insert((0, 3), CMat::from_element(1, 1, C64::new(1.0 - p, 0.0)));
    let x = IsoTypicOp::from_blocks(CouplingOrder::Sequential(0), order, Scaling::Input, blocks)?.to_full()?;
    let sx = numerics::matrix_sqrt_psd(&HermitianOp::new(x)?, numerics::PSD_TOL)?;
    let s = CMat::identity(8, 8).kronecker(sx.matrix());
    Ok(numerics::trace_norm(&(&s * (&pair.full[0] - &pair.full[1]) * &s))?)
}

/// Objective of the restricted-entanglement scheme (the bracket in 1/2 + g/4).
pub fn restricted_objective(t: f64) -> f64 {
    let k = 2.0 / (3.0 * 3f64.sqrt());
    (2.0 * t).sin() / 3.0 + k * t.cos().powi(2) + k * t.cos() * (2.0 - (2.0 * t).cos()).sqrt()
}

pub fn restricted_derivative(t: f64) -> f64 {
    let k = 2.0 / (3.0 * 3f64.sqrt());
    let r = (2.0 - (2.0 * t).cos()).sqrt();
    2.0 / 3.0 * (2.0 * t).cos() - k * (2.0 * t).sin() + k * (-t.sin() * r + t.cos() * (2.0 * t).sin() / r)
}

/// Maximum over t in [0, pi/2] of 1/2 + g(t)/4.
pub fn restricted_entanglement() -> ScalarMax {
    let f = |t: f64| 0.5 + 0.25 * restricted_objective(t);
    let df = |t: f64| restricted_derivative(t);
    maximize_scalar(&f, Some(&df), 0.0, FRAC_PI_2, SCAN_POINTS)
}

/// Block-level value for the product input X_1 (x) I/2 with X_1 = sin^2 t I_0 + cos^2 t I_1/3.
pub fn restricted_block_norm(blocks: &DiamondBlocks, t: f64) -> Result<f64> {
    let r = t.sin().powi(2);
    let x_half = RMat::from_diagonal(&nalgebra::DVector::from_vec(vec![r, (1.0 - r) / 3.0]));
    blocks.compressed_norm(&x_half, 2.0 / 3.0 * (1.0 - r))
}

/// Haar-averaged Choi operators for the known-U1 one-sample problem on K1 K2 H1 H2:
/// E1 (target = known U1 = I, sample of U2 in slot 1) and E2 (target = U2).
pub fn one_sample_operators() -> Result<(CMat, CMat)> {
    let one = C64::new(1.0, 0.0);
    let mut choi_id = CMat::zeros(4, 4);
    for (i, j) in [(0, 0), (0, 3), (3, 0), (3, 3)] {
        choi_id[(i, j)] = one;
    }
    let haar1 = CMat::identity(4, 4).unscale(2.0);
    // order K1 H1 K2 H2 -> K1 K2 H1 H2
    let e1 = numerics::permute_subsystems(&haar1.kronecker(&choi_id), &[2; 4], &[0, 2, 1, 3])?;
    Ok((e1, eta_full(2)?))
}

/// sqrt(X_t) on H1 H2 with X_t = sin^2 t P_0 + cos^2 t (I - P_0)/3.
fn one_sample_sqrt_input(t: f64) -> CMat {
    let s = 1.0 / 2f64.sqrt();
    let singlet = nalgebra::DVector::from_vec(vec![C64::new(0.0, 0.0), C64::new(s, 0.0), C64::new(-s, 0.0), C64::new(0.0, 0.0)]);
    let p0 = numerics::projector(&singlet);
    let id = CMat::identity(4, 4);
    p0.scale(t.sin().abs()) + (id - &p0).scale(t.cos().abs() / 3f64.sqrt())
}

/// (I (x) sqrt X_t)(E2 - E1)(I (x) sqrt X_t).
pub fn one_sample_compressed(e: &(CMat, CMat), t: f64) -> CMat {
    let s = CMat::identity(4, 4).kronecker(&one_sample_sqrt_input(t));
    &s * (&e.1 - &e.0) * &s
}

/// Eigenvalue families of the compressed 16-dim difference with their multiplicities.
pub fn one_sample_families(t: f64) -> Vec<(f64, usize)> {
    let c2 = (2.0 * t).cos();
    let c4 = (4.0 * t).cos();
    let a = (357.0 - 352.0 * c2 + 20.0 * c4).max(0.0).sqrt();
    let b = (87.0 - 4.0 * c2 - 10.0 * c4).max(0.0).sqrt();
    vec![
        (t.cos().powi(2) / 9.0, 5),
        ((11.0 - 16.0 * c2 + a) / 72.0, 1),
        ((11.0 - 16.0 * c2 - a) / 72.0, 1),
        ((-7.0 + 2.0 * c2 + b) / 72.0, 3),
        ((-7.0 + 2.0 * c2 - b) / 72.0, 3),
        (0.0, 3),
    ]
}

pub fn one_sample_norm(t: f64) -> f64 {
    one_sample_families(t).iter().map(|&(v, m)| v.abs() * m as f64).sum()
}

/// Maximum over t in [0, pi/2] of 1/2 + N(t)/4.
pub fn one_sample_max() -> ScalarMax {
    let f = |t: f64| 0.5 + 0.25 * one_sample_norm(t);
    maximize_scalar(&f, None, 0.0, FRAC_PI_2, SCAN_POINTS)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenCheck {
    pub points: usize,
    /// Largest |formula - direct| over all sorted eigenvalues and sample points.
    pub max_eigenvalue_deviation: f64,
    pub max_norm_deviation: f64,
}

/// Compare the eigenvalue families with direct diagonalization at `points` values of t.
pub fn one_sample_eigen_check(points: usize) -> Result<EigenCheck> {
    let e = one_sample_operators()?;
    let mut out = EigenCheck { points, max_eigenvalue_deviation: 0.0, max_norm_deviation: 0.0 };
    for k in 0..points {
        let t = FRAC_PI_2 * (k as f64 + 0.5) / points as f64;
        let direct = numerics::eigvals_hermitian(&one_sample_compressed(&e, t))?;
        let mut formula: Vec<f64> =
            one_sample_families(t).iter().flat_map(|&(v, m)| std::iter::repeat_n(v, m)).collect();
        formula.sort_by(f64::total_cmp);
        let dev = direct.iter().zip(&formula).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let norm_direct: f64 = direct.iter().map(|x| x.abs()).sum();
        out.max_eigenvalue_deviation = out.max_eigenvalue_deviation.max(dev);
        out.max_norm_deviation = out.max_norm_deviation.max((norm_direct - one_sample_norm(t)).abs());
    }
    Ok(out)
}

/// Eigenphases of a 2x2 unitary in [-pi, pi), ascending.
pub fn eigenphases_2x2(w: &CMat) -> Result<[f64; 2]> {
    if w.shape() != (2, 2) || !numerics::is_unitary(w, 1e-9) {
        return Err(TaskError::Scenario("expected a 2x2 unitary".into()));
    }
    let tr = w[(0, 0)] + w[(1, 1)];
    let det = w[(0, 0)] * w[(1, 1)] - w[(0, 1)] * w[(1, 0)];
    let disc = (tr * tr - det * 4.0).sqrt();
    let wrap = |z: C64| {
        let a = z.arg();
        if a >= PI {
            a - 2.0 * PI
        } else {
            a
        }
    };
    let mut th = [wrap((tr + disc) / 2.0), wrap((tr - disc) / 2.0)];
    th.sort_by(f64::total_cmp);
    Ok(th)
}

/// Length of the shortest arc of the unit circle containing all phases (sorted ascending).
pub fn phase_spread(theta: &[f64]) -> f64 {
    let n = theta.len();
    if n < 2 {
        return 0.0;
    }
    let mut max_gap = theta[0] + 2.0 * PI - theta[n - 1];
    for w in theta.windows(2) {
        max_gap = max_gap.max(w[1] - w[0]);
    }
    2.0 * PI - max_gap
}

/// Optimal probability of telling known U1 (prior eta1) from known U2 with one use.
pub fn known_pair_optimal(u1: &CMat, u2: &CMat, eta1: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&eta1) {
        return Err(TaskError::Scenario(format!("prior {eta1} outside [0, 1]")));
    }
    let theta = eigenphases_2x2(&(u1.adjoint() * u2))?;
    let spread = phase_spread(&theta);
    if spread >= PI {
        return Ok(1.0);
    }
    let c = (spread / 2.0).cos();
    Ok(0.5 * (1.0 + (1.0 - 4.0 * eta1 * (1.0 - eta1) * c * c).max(0.0).sqrt()))
}

/// 1/2 + (1/pi) int_0^pi sin^3 t dt, with the integral from the antiderivative -cos t + cos^3 t / 3.
pub fn known_both_haar_average() -> f64 {
    let anti = |t: f64| -t.cos() + t.cos().powi(3) / 3.0;
    0.5 + (anti(PI) - anti(0.0)) / PI
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonteCarloEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub samples: usize,
}

/// Average of `known_pair_optimal` over Haar-random pairs with equal priors.
pub fn known_both_monte_carlo(samples: usize, seed: u64) -> Result<MonteCarloEstimate> {
    if samples < 2 {
        return Err(TaskError::Scenario("need at least two samples".into()));
    }
    let (mut sum, mut sum2) = (0.0, 0.0);
    let shards = samples.div_ceil(choi::SHARD_SIZE);
    for s in 0..shards {
        let count = choi::SHARD_SIZE.min(samples - s * choi::SHARD_SIZE);
        let mut rng = choi::rng_for(seed, s as u64);
        for _ in 0..count {
            let u1 = choi::haar_su2(&mut rng);
            let u2 = choi::haar_su2(&mut rng);
            let p = known_pair_optimal(&u1, &u2, 0.5)?;
            sum += p;
            sum2 += p * p;
        }
    }
    let n = samples as f64;
    let mean = sum / n;
    let var = (sum2 / n - mean * mean).max(0.0) * n / (n - 1.0);
    Ok(MonteCarloEstimate { mean, stderr: (var / n).sqrt(), samples })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_maximizer_finds_interior_peak() {
        let f = |t: f64| -(t - 0.3).powi(2);
        let df = |t: f64| -2.0 * (t - 0.3);
        let m = maximize_scalar(&f, Some(&df), 0.0, 1.0, 1000);
        assert!((m.argmax - 0.3).abs() < 1e-11);
        assert_eq!(m.local_maxima, 1);
        let m = maximize_scalar(&|t: f64| t, None, 0.0, 1.0, 100);
        assert_eq!(m.argmax, 1.0);
    }

    #[test]
    fn diamond_branches_match_closed_forms() {
        let b = DiamondBlocks::new().unwrap();
        for k in 0..=40 {
            let t = FRAC_PI_2 * k as f64 / 40.0;
            let (d, dp) = b.p1_terms(t).unwrap();
            assert!((d + dp - diamond_p1_closed_form(t)).abs() < 1e-12, "t={t}");
        }
        assert!((b.p0_term().unwrap() - 3f64.sqrt() / 3.0).abs() < 1e-12);
    }

    #[test]
    fn restricted_block_form_matches_scalar_objective() {
        let b = DiamondBlocks::new().unwrap();
        for k in 0..=20 {
            let t = FRAC_PI_2 * k as f64 / 20.0;
            let v = restricted_block_norm(&b, t).unwrap();
            assert!((v - restricted_objective(t)).abs() < 1e-12, "t={t}: {v} vs {}", restricted_objective(t));
        }
    }

    #[test]
    fn restricted_derivative_matches_difference_quotient() {
        for t in [0.1, 0.5, 1.0, 1.4] {
            let h = 1e-6;
            let fd = (restricted_objective(t + h) - restricted_objective(t - h)) / (2.0 * h);
            assert!((fd - restricted_derivative(t)).abs() < 1e-8);
        }
    }

    #[test]
    fn phase_spread_wraps() {
        assert!((phase_spread(&[-0.5, 0.5]) - 1.0).abs() < 1e-15);
        assert!((phase_spread(&[-3.0, 3.0]) - (2.0 * PI - 6.0)).abs() < 1e-12);
    }
}
