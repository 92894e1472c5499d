//! Quantum testers: outcome operators plus the causal normalization chain.
//!
//! Slots are numbered layer by layer. The full space is K_1..K_n H_1..H_n, with K the output
//! and H the input of each box. Chain element `j` (1-based) lives on
//! K(layers 1..j-1) (x) H(layers 1..j).

use rand::Rng;
use rand_distr::StandardNormal;
use serde_json::json;
use thiserror::Error;

use crate::choi::{self, BoxAssignment};
use crate::numerics::{self, CMat, HermitianOp, C64};
use crate::su2rep::{self, CouplingOrder};

pub const CHAIN_TOL: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum TesterError {
    #[error("tester structure: {0}")]
    Structure(String),
    #[error("negative outcome probability {0:e}")]
    NegativeProbability(f64),
    #[error(transparent)]
    Numerics(#[from] numerics::NumericsError),
    #[error(transparent)]
    Choi(#[from] choi::ChoiError),
    #[error(transparent)]
    Rep(#[from] su2rep::RepError),
}

pub type Result<T> = std::result::Result<T, TesterError>;

#[derive(Debug, Clone, PartialEq)]
pub struct TesterChain {
    /// Number of slots in each layer.
    pub layers: Vec<usize>,
    pub outcomes: Vec<CMat>,
    pub chain: Vec<CMat>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TesterReport {
    pub residuals: Vec<(String, f64)>,
    pub min_eigenvalues: Vec<(String, f64)>,
    pub pass: bool,
}

impl TesterReport {
    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().map(|r| r.1).fold(0.0, f64::max)
    }
}

/// Y on K(a) (x) H(h) -> I (x) Y on K(a) K(new) (x) H(h), all qubits.
pub fn embed_identity_k(y: &CMat, k_before: usize, k_new: usize, h: usize) -> Result<CMat> {
    let dim = 1usize << (k_before + h);
    if y.shape() != (dim, dim) {
        return Err(TesterError::Structure(format!(
            "operator of shape {:?} on {k_before}+{h} qubits",
            y.shape()
        )));
    }
    let x = CMat::identity(1 << k_new, 1 << k_new).kronecker(y);
    // x order: K(new) K(before) H; target: K(before) K(new) H
    let total = k_before + k_new + h;
    let mut perm: Vec<usize> = (k_new..k_new + k_before).collect();
    perm.extend(0..k_new);
    perm.extend(k_new + k_before..total);
    Ok(numerics::permute_subsystems(&x, &vec![2; total], &perm)?)
}

/// Trace out the last `count` qubits of an operator on `total` qubits.
pub fn trace_last(y: &CMat, total: usize, count: usize) -> Result<CMat> {
    let keep: Vec<usize> = (0..total - count).collect();
    Ok(numerics::partial_trace(y, &vec![2; total], &keep)?)
}

impl TesterChain {
    pub fn n_slots(&self) -> usize {
        self.layers.iter().sum()
    }

    fn prefix(&self, j: usize) -> usize {
        self.layers[..j].iter().sum()
    }

    pub fn dim(&self) -> usize {
        1 << (2 * self.n_slots())
    }

    fn check_shapes(&self) -> Result<()> {
        if self.layers.is_empty() || self.layers.contains(&0) {
            return Err(TesterError::Structure("layers must be non-empty".into()));
        }
        if self.chain.len() != self.layers.len() {
            return Err(TesterError::Structure(format!(
                "{} chain operators for {} layers",
                self.chain.len(),
                self.layers.len()
            )));
        }
        if self.outcomes.len() < 2 {
            return Err(TesterError::Structure("need at least two outcomes".into()));
        }
        for p in &self.outcomes {
            if p.shape() != (self.dim(), self.dim()) {
                return Err(TesterError::Structure(format!("outcome shape {:?}", p.shape())));
            }
        }
        for (j, y) in self.chain.iter().enumerate() {
            let q = self.prefix(j) + self.prefix(j + 1);
            if y.shape() != (1 << q, 1 << q) {
                return Err(TesterError::Structure(format!("chain element {} shape {:?}", j + 1, y.shape())));
            }
        }
        Ok(())
    }

    /// Residual of every normalization constraint and the smallest eigenvalue of every operator.
    pub fn validate(&self) -> Result<TesterReport> {
        self.check_shapes()?;
        let r = self.layers.len();
        let n = self.n_slots();
        let mut residuals = Vec::new();
        let sum: CMat = self.outcomes.iter().fold(CMat::zeros(self.dim(), self.dim()), |a, b| a + b);
        let top = embed_identity_k(&self.chain[r - 1], self.prefix(r - 1), self.layers[r - 1], n)?;
        residuals.push(("outcome-sum".to_string(), numerics::frobenius_distance(&sum, &top)));
        for j in (1..r).rev() {
            let k = self.prefix(j);
            let h = self.prefix(j + 1);
            let lhs = trace_last(&self.chain[j], k + h, self.layers[j])?;
            let rhs = embed_identity_k(&self.chain[j - 1], self.prefix(j - 1), self.layers[j - 1], k)?;
            residuals.push((format!("chain-{}", j + 1), numerics::frobenius_distance(&lhs, &rhs)));
        }
        let tr = numerics::trace(&self.chain[0]);
        residuals.push(("normalization".to_string(), (tr - C64::new(1.0, 0.0)).norm()));
        let mut min_eigenvalues = Vec::new();
        for (i, p) in self.outcomes.iter().enumerate() {
            min_eigenvalues.push((format!("outcome-{}", i + 1), numerics::min_eigenvalue(p)?));
        }
        for (j, y) in self.chain.iter().enumerate() {
            min_eigenvalues.push((format!("chain-{}", j + 1), numerics::min_eigenvalue(y)?));
        }
        let pass = residuals.iter().all(|x| x.1 <= CHAIN_TOL)
            && min_eigenvalues.iter().all(|x| x.1 >= -numerics::PSD_TOL);
        Ok(TesterReport { residuals, min_eigenvalues, pass })
    }

    /// True when the second chain element acts as the identity on the first layer's outputs.
    pub fn parallelizable_prefix(&self) -> Result<bool> {
        self.check_shapes()?;
        if self.layers.len() < 2 {
            return Err(TesterError::Structure("needs at least two layers".into()));
        }
        let y = &self.chain[1];
        let k1 = self.layers[0];
        let h = self.prefix(2);
        let total = k1 + h;
        let rest: Vec<usize> = (k1..total).collect();
        let reduced = numerics::partial_trace(y, &vec![2; total], &rest)?;
        let d = (1usize << k1) as f64;
        let rebuilt = CMat::identity(1 << k1, 1 << k1).kronecker(&reduced).unscale(d);
        Ok(numerics::frobenius_distance(y, &rebuilt) <= CHAIN_TOL)
    }

    /// 1/2 sum_i tr(M_i T_i).
    pub fn asp(&self, m1: &CMat, m2: &CMat) -> Result<f64> {
        if m1.shape() != (self.dim(), self.dim()) || m2.shape() != m1.shape() {
            return Err(TesterError::Structure("Choi operators do not match the tester".into()));
        }
        Ok(0.5 * (numerics::trace_product_re(m1, &self.outcomes[0]) + numerics::trace_product_re(m2, &self.outcomes[1])))
    }

    pub fn swapped_outcomes(&self) -> Self {
        let mut t = self.clone();
        t.outcomes.swap(0, 1);
        t
    }

    /// Tester that always answers 1: outcome 1 is I_K (x) rho on one parallel layer.
    pub fn always_guess_first(n_slots: usize) -> Self {
        let dh = 1usize << n_slots;
        let rho = CMat::identity(dh, dh).unscale(dh as f64);
        let full = CMat::identity(dh, dh).kronecker(&rho);
        TesterChain {
            layers: vec![n_slots],
            outcomes: vec![full.clone(), CMat::zeros(full.nrows(), full.ncols())],
            chain: vec![rho],
        }
    }

    /// One-layer tester from a POVM {E_i} on K (x) ancilla-free H and an input state X:
    /// T_i = (I (x) sqrt X) E_i (I (x) sqrt X).
    pub fn from_povm(n_slots: usize, povm: &[CMat], x: &CMat) -> Result<Self> {
        let sx = numerics::matrix_sqrt_psd(&HermitianOp::new(x.clone())?, numerics::PSD_TOL)?;
        let s = CMat::identity(1 << n_slots, 1 << n_slots).kronecker(sx.matrix());
        let outcomes = povm.iter().map(|e| &s * e * &s).collect();
        Ok(TesterChain { layers: vec![n_slots], outcomes, chain: vec![x.clone()] })
    }

    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "layers": self.layers,
            "outcomes": self.outcomes.iter().map(su2rep::matrix_to_json).collect::<Vec<_>>(),
            "chain": self.chain.iter().map(su2rep::matrix_to_json).collect::<Vec<_>>(),
        })
    }

    pub fn from_json(v: &serde_json::Value) -> Result<Self> {
        let bad = |what: &str| TesterError::Structure(format!("malformed tester JSON: {what}"));
        let layers = v["layers"]
            .as_array()
            .ok_or_else(|| bad("layers"))?
            .iter()
            .map(|x| x.as_u64().map(|u| u as usize).ok_or_else(|| bad("layers")))
            .collect::<Result<Vec<_>>>()?;
        let mats = |key: &str| -> Result<Vec<CMat>> {
            v[key]
                .as_array()
                .ok_or_else(|| bad(key))?
                .iter()
                .map(|m| su2rep::matrix_from_json(m).ok_or_else(|| bad(key)))
                .collect()
        };
        let t = TesterChain { layers, outcomes: mats("outcomes")?, chain: mats("chain")? };
        t.check_shapes()?;
        Ok(t)
    }
}

fn random_complex<R: Rng + ?Sized>(rng: &mut R, n: usize) -> CMat {
    CMat::from_fn(n, n, |_, _| C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
}

fn random_positive<R: Rng + ?Sized>(rng: &mut R, n: usize) -> CMat {
    let g = random_complex(rng, n);
    &g * g.adjoint() + CMat::identity(n, n).scale(1e-3)
}

fn inverse_sqrt(h: &CMat) -> Result<CMat> {
    let (vals, vecs) = numerics::eig_hermitian_raw(h)?;
    let d = CMat::from_diagonal(&nalgebra::DVector::from_iterator(
        vals.len(),
        vals.iter().map(|&x| C64::new(1.0 / x.max(1e-300).sqrt(), 0.0)),
    ));
    Ok(&vecs * d * vecs.adjoint())
}

/// Random valid two-outcome tester for the given layer pattern.
pub fn random_tester<R: Rng + ?Sized>(layers: &[usize], rng: &mut R) -> Result<TesterChain> {
    if layers.is_empty() || layers.contains(&0) {
        return Err(TesterError::Structure("layers must be non-empty".into()));
    }
    let prefix = |j: usize| layers[..j].iter().sum::<usize>();
    let d1 = 1usize << layers[0];
    let y1 = random_positive(rng, d1);
    let tr = numerics::trace(&y1).re;
    let mut chain = vec![y1.unscale(tr)];
    for j in 1..layers.len() {
        let z = embed_identity_k(&chain[j - 1], prefix(j - 1), layers[j - 1], prefix(j))?;
        let sz = numerics::matrix_sqrt_psd(&HermitianOp::new(z)?, numerics::PSD_TOL)?;
        let q = prefix(j) + prefix(j + 1);
        let g = random_positive(rng, 1 << q);
        let t = trace_last(&g, q, layers[j])?;
        let dh = 1usize << layers[j];
        let ti = inverse_sqrt(&t)?.kronecker(&CMat::identity(dh, dh));
        let c = &ti * g * &ti;
        let s = sz.matrix().kronecker(&CMat::identity(dh, dh));
        chain.push(numerics::hermitian_part(&(&s * c * &s)));
    }
    let r = layers.len();
    let n = prefix(r);
    let z = embed_identity_k(&chain[r - 1], prefix(r - 1), layers[r - 1], n)?;
    let sz = numerics::matrix_sqrt_psd(&HermitianOp::new(z)?, numerics::PSD_TOL)?;
    let h = random_complex(rng, 1 << (2 * n));
    let h = numerics::hermitian_part(&h);
    let (vals, vecs) = numerics::eig_hermitian_raw(&h)?;
    let e = &vecs
        * CMat::from_diagonal(&nalgebra::DVector::from_iterator(
            vals.len(),
            vals.iter().map(|&x| C64::new(1.0 / (1.0 + (-x).exp()), 0.0)),
        ))
        * vecs.adjoint();
    let id = CMat::identity(e.nrows(), e.ncols());
    let p1 = numerics::hermitian_part(&(sz.matrix() * &e * sz.matrix()));
    let p2 = numerics::hermitian_part(&(sz.matrix() * (id - &e) * sz.matrix()));
    Ok(TesterChain { layers: layers.to_vec(), outcomes: vec![p1, p2], chain })
}

/// Outcome operators rotated into the coupled basis and stored as sparse triplets.
struct SparseOutcome {
    entries: Vec<(usize, usize, C64)>,
}

fn sparse_coupled(p: &CMat, b: &CMat) -> SparseOutcome {
    let t = b.transpose() * p * b;
    let scale = numerics::max_abs(&t).max(1.0);
    let mut entries = Vec::new();
    for j in 0..t.ncols() {
        for i in 0..t.nrows() {
            if t[(i, j)].norm() > 1e-13 * scale {
                entries.push((i, j, t[(i, j)]));
            }
        }
    }
    SparseOutcome { entries }
}

impl SparseOutcome {
    fn expectation(&self, v: &[C64]) -> f64 {
        self.entries.iter().map(|&(i, j, a)| (v[i].conj() * a * v[j]).re).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulationReport {
    pub mean: f64,
    pub stderr: f64,
    pub trials: usize,
}

/// Play the discrimination game `n_trials` times with Haar-random references.
pub fn simulate_discrimination(
    tester: &TesterChain,
    assignment: &BoxAssignment,
    n_trials: usize,
    seed: u64,
) -> Result<SimulationReport> {
    tester.check_shapes()?;
    let n = assignment.n_slots();
    if tester.n_slots() != n {
        return Err(TesterError::Structure(format!(
            "tester has {} slots, assignment has {n}",
            tester.n_slots()
        )));
    }
    if n_trials == 0 {
        return Err(TesterError::Structure("n_trials must be at least 1".into()));
    }
    let basis = su2rep::coupled_basis(CouplingOrder::Sequential(n))?;
    let bk = basis.complex_matrix();
    let bfull = bk.kronecker(&bk);
    let sparse: Vec<SparseOutcome> = tester.outcomes.iter().take(2).map(|p| sparse_coupled(p, &bfull)).collect();
    let mut wins = 0usize;
    let shards = n_trials.div_ceil(choi::SHARD_SIZE);
    for s in 0..shards {
        let count = choi::SHARD_SIZE.min(n_trials - s * choi::SHARD_SIZE);
        let mut rng = choi::rng_for(seed, s as u64);
        for _ in 0..count {
            let u1 = choi::haar_su2(&mut rng);
            let u2 = choi::haar_su2(&mut rng);
            let i = if rng.random::<bool>() { 1 } else { 2 };
            let w = choi::slot_unitary(assignment, i, &u1, &u2);
            // |W>> in coupled coordinates is vec(B^T W B)
            let wc = bk.transpose() * w * &bk;
            let v: Vec<C64> = (0..wc.nrows() * wc.ncols()).map(|k| wc[(k / wc.ncols(), k % wc.ncols())]).collect();
            let p1 = sparse[0].expectation(&v);
            let p2 = sparse[1].expectation(&v);
            for p in [p1, p2] {
                if p < -1e-9 {
                    return Err(TesterError::NegativeProbability(p));
                }
            }
            let (p1, p2) = (p1.max(0.0), p2.max(0.0));
            let guess = if rng.random::<f64>() * (p1 + p2) < p1 { 1 } else { 2 };
            if guess == i {
                wins += 1;
            }
        }
    }
    let mean = wins as f64 / n_trials as f64;
    let stderr = (mean * (1.0 - mean) / n_trials as f64).sqrt();
    Ok(SimulationReport { mean, stderr, trials: n_trials })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embed_identity_orders_subsystems() {
        let y = CMat::from_fn(4, 4, |i, j| C64::new((i * 4 + j) as f64, 0.0));
        // Y on K1 H1 -> I_K2 inserted between
        let e = embed_identity_k(&y, 1, 1, 1).unwrap();
        let direct = numerics::permute_subsystems(&CMat::identity(2, 2).kronecker(&y), &[2, 2, 2], &[1, 0, 2]).unwrap();
        assert_eq!(e, direct);
    }

    #[test]
    fn guess_first_is_half() {
        let t = TesterChain::always_guess_first(3);
        assert!(t.validate().unwrap().pass);
        let a = BoxAssignment::parse("U1 U2 Ui").unwrap();
        let pair = crate::choi::choi_pair(&a).unwrap();
        assert!((t.asp(&pair.full[0], &pair.full[1]).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn scaled_outcome_fails() {
        let mut t = TesterChain::always_guess_first(1);
        t.outcomes[0] = t.outcomes[0].scale(1.1);
        assert!(!t.validate().unwrap().pass);
    }

    #[test]
    fn random_testers_validate() {
        let mut rng = crate::choi::rng_for(3, 0);
        for layers in [vec![1], vec![1, 1], vec![2, 1], vec![1, 1, 1]] {
            let t = random_tester(&layers, &mut rng).unwrap();
            let rep = t.validate().unwrap();
            assert!(rep.pass, "{layers:?}: {rep:?}");
        }
    }
}
