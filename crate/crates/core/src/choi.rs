//! Haar-averaged Choi operators of the candidate box sequences.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use crate::su2rep::{IsoTypicOp, Scaling};

use crate::numerics::{self, CMat, C64};
use crate::su2rep::{self, CouplingOrder, RepError};

#[derive(Debug, Error)]
pub enum ChoiError {
    #[error("inconsistent box assignment: {0}")]
    Assignment(String),
    #[error(transparent)]
    Rep(#[from] RepError),
    #[error(transparent)]
    Numerics(#[from] numerics::NumericsError),
}

pub type Result<T> = std::result::Result<T, ChoiError>;

/// Samples per Monte-Carlo shard; shard `s` draws from stream `s` of the seed.
pub const SHARD_SIZE: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Ref1,
    Ref2,
    Target,
}

impl Label {
    pub fn short(self) -> &'static str {
        match self {
            Label::Ref1 => "U1",
            Label::Ref2 => "U2",
            Label::Target => "Ui",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short())
    }
}

impl FromStr for Label {
    type Err = ChoiError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "U1" | "R1" | "1" => Ok(Label::Ref1),
            "U2" | "R2" | "2" => Ok(Label::Ref2),
            "Ui" | "T" | "t" | "i" => Ok(Label::Target),
            other => Err(ChoiError::Assignment(format!("unknown box label {other:?}"))),
        }
    }
}

/// Which box sits in each circuit slot. The target box is U1 or U2 with probability 1/2 each.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoxAssignment {
    pub labels: Vec<Label>,
}

impl BoxAssignment {
    pub fn new(labels: Vec<Label>) -> Result<Self> {
        let t = labels.iter().filter(|&&l| l == Label::Target).count();
        if t != 1 {
            return Err(ChoiError::Assignment(format!("expected exactly one target slot, found {t}")));
        }
        if labels.len() > 4 {
            return Err(ChoiError::Assignment(format!("{} slots exceeds four", labels.len())));
        }
        Ok(Self { labels })
    }

    pub fn parse(s: &str) -> Result<Self> {
        let labels = s
            .split([',', ' '])
            .filter(|x| !x.is_empty())
            .map(Label::from_str)
            .collect::<Result<Vec<_>>>()?;
        Self::new(labels)
    }

    pub fn n_slots(&self) -> usize {
        self.labels.len()
    }

    /// (N1, N2): reference sample counts.
    pub fn sample_counts(&self) -> (usize, usize) {
        let c = |l| self.labels.iter().filter(|&&x| x == l).count();
        (c(Label::Ref1), c(Label::Ref2))
    }

    /// Slots carrying U1 and U2 when the target is candidate `i` (1 or 2).
    pub fn slots_for(&self, i: usize) -> (Vec<usize>, Vec<usize>) {
        let resolve = |l: Label| match l {
            Label::Target if i == 1 => Label::Ref1,
            Label::Target => Label::Ref2,
            x => x,
        };
        let mut s1 = Vec::new();
        let mut s2 = Vec::new();
        for (k, &l) in self.labels.iter().enumerate() {
            match resolve(l) {
                Label::Ref1 => s1.push(k),
                _ => s2.push(k),
            }
        }
        (s1, s2)
    }

    pub fn describe(&self) -> String {
        self.labels.iter().map(|l| l.short()).collect::<Vec<_>>().join(" ")
    }
}

/// Full-space Haar average of |U^{(x)n}>><<U^{(x)n}| on K_1..K_n H_1..H_n.
pub fn eta_full(n: usize) -> Result<CMat> {
    if n == 0 {
        return Ok(CMat::identity(1, 1));
    }
    let b = su2rep::coupled_basis(CouplingOrder::Sequential(n))?;
    let d = b.dim();
    let mut out = CMat::zeros(d * d, d * d);
    for blk in &b.blocks {
        let w = 1.0 / blk.dim as f64;
        for i in 0..blk.dim {
            for ip in 0..blk.dim {
                let mut v = DVector::<f64>::zeros(d * d);
                for k in 0..blk.mult {
                    let a = b.matrix.column(blk.column(k, i));
                    let c = b.matrix.column(blk.column(k, ip));
                    v += a.kronecker(&c);
                }
                let vc = v.map(|x| C64::new(x, 0.0));
                out += (&vc * vc.adjoint()).scale(w);
            }
        }
    }
    Ok(out)
}

/// Block form of eta: Output-scaled blocks |phi_J><phi_J| on (J, J), phi_J = sum_k |k>|k>.
pub fn eta(n: usize) -> Result<IsoTypicOp> {
    let order = CouplingOrder::Sequential(n);
    let b = su2rep::coupled_basis(order)?;
    let mut blocks = BTreeMap::new();
    for blk in &b.blocks {
        let m = blk.mult;
        let mut phi = DVector::<C64>::zeros(m * m);
        for k in 0..m {
            phi[k * m + k] = C64::new(1.0, 0.0);
        }
        blocks.insert((blk.j2, blk.j2), &phi * phi.adjoint());
    }
    Ok(IsoTypicOp::from_blocks(order, order, Scaling::Output, blocks)?)
}

/// Choi operators of both hypotheses for one assignment.
#[derive(Debug, Clone)]
pub struct ChoiPair {
    pub assignment: BoxAssignment,
    pub full: [CMat; 2],
    pub blocks: [IsoTypicOp; 2],
}

fn choi_full_for(assignment: &BoxAssignment, i: usize) -> Result<CMat> {
    let n = assignment.n_slots();
    let (s1, s2) = assignment.slots_for(i);
    let x = eta_full(s1.len())?.kronecker(&eta_full(s2.len())?);
    // subsystem order of x: K(s1) H(s1) K(s2) H(s2)
    let mut old: Vec<(bool, usize)> = Vec::with_capacity(2 * n);
    old.extend(s1.iter().map(|&k| (true, k)));
    old.extend(s1.iter().map(|&k| (false, k)));
    old.extend(s2.iter().map(|&k| (true, k)));
    old.extend(s2.iter().map(|&k| (false, k)));
    let target = (0..n).map(|k| (true, k)).chain((0..n).map(|k| (false, k)));
    let perm: Vec<usize> = target
        .map(|t| old.iter().position(|&o| o == t).expect("every subsystem present"))
        .collect();
    Ok(numerics::permute_subsystems(&x, &vec![2; 2 * n], &perm)?)
}

/// M_i = integral of |W_i>><<W_i| with W_i the slot-ordered tensor product, i = 1, 2.
pub fn choi_pair(assignment: &BoxAssignment) -> Result<ChoiPair> {
    let order = CouplingOrder::Sequential(assignment.n_slots());
    let f1 = choi_full_for(assignment, 1)?;
    let f2 = choi_full_for(assignment, 2)?;
    let b1 = IsoTypicOp::from_full(&f1, order, order, Scaling::Output)?;
    let b2 = IsoTypicOp::from_full(&f2, order, order, Scaling::Output)?;
    Ok(ChoiPair { assignment: assignment.clone(), full: [f1, f2], blocks: [b1, b2] })
}

/// Relabel slots: slot p of the result is slot `perm[p]` of the input. Blocks are conjugated by
/// the multiplicity representations of the permutation on both sides.
pub fn choi_reorder(m: &IsoTypicOp, perm: &[usize]) -> Result<IsoTypicOp> {
    let (CouplingOrder::Sequential(n), CouplingOrder::Sequential(n2)) = (m.out_order, m.in_order) else {
        return Err(ChoiError::Rep(RepError::Structure("reordering needs sequential bases".into())));
    };
    if n != n2 {
        return Err(ChoiError::Assignment("output and input slot counts differ".into()));
    }
    let b = su2rep::coupled_basis(m.out_order)?;
    let mut reps = BTreeMap::new();
    for j in b.spins() {
        reps.insert(j, su2rep::permutation_rep(n, perm, j)?);
    }
    Ok(m.conjugate(&reps, &reps))
}

/// Swap slots i and j (1-based).
pub fn choi_swap(m: &IsoTypicOp, i: usize, j: usize) -> Result<IsoTypicOp> {
    let n = m.out_order.n_qubits();
    if i == 0 || j == 0 || i > n || j > n {
        return Err(ChoiError::Assignment(format!("slots {i},{j} out of range")));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.swap(i - 1, j - 1);
    choi_reorder(m, &perm)
}

/// Deterministic generator for stream `stream` of `seed` (ChaCha8).
pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Haar-random element of SU(2): a normalized Gaussian 4-vector mapped to [[a, -b*], [b, a*]].
pub fn haar_su2<R: Rng + ?Sized>(rng: &mut R) -> CMat {
    loop {
        let g: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
        let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-12 {
            continue;
        }
        let a = C64::new(g[0], g[1]) / norm;
        let b = C64::new(g[2], g[3]) / norm;
        return CMat::from_row_slice(2, 2, &[a, -b.conj(), b, a.conj()]);
    }
}

/// Tensor product of the slot unitaries with the target resolved to candidate `i`.
pub fn slot_unitary(assignment: &BoxAssignment, i: usize, u1: &CMat, u2: &CMat) -> CMat {
    let ops: Vec<CMat> = assignment
        .labels
        .iter()
        .map(|&l| match (l, i) {
            (Label::Ref1, _) | (Label::Target, 1) => u1.clone(),
            _ => u2.clone(),
        })
        .collect();
    numerics::kron_all(&ops)
}

/// Sample mean of |W_i>><<W_i| using a caller-supplied sampler for (U1, U2).
pub fn monte_carlo_choi_with(
    assignment: &BoxAssignment,
    i: usize,
    n_samples: usize,
    mut sampler: impl FnMut() -> (CMat, CMat),
) -> CMat {
    let d = 1usize << (2 * assignment.n_slots());
    let mut acc = CMat::zeros(d, d);
    for _ in 0..n_samples {
        let (u1, u2) = sampler();
        let v = numerics::vec_row_major(&slot_unitary(assignment, i, &u1, &u2));
        acc.gerc(C64::new(1.0, 0.0), &v, &v, C64::new(1.0, 0.0));
    }
    acc.unscale(n_samples.max(1) as f64)
}

/// Sharded Monte-Carlo estimate of M_i; identical for identical (seed, n_samples).
pub fn monte_carlo_choi(assignment: &BoxAssignment, i: usize, n_samples: usize, seed: u64) -> Result<CMat> {
    if n_samples == 0 {
        return Err(ChoiError::Assignment("n_samples must be at least 1".into()));
    }
    if i != 1 && i != 2 {
        return Err(ChoiError::Assignment(format!("candidate {i} is not 1 or 2")));
    }
    let d = 1usize << (2 * assignment.n_slots());
    let mut total = CMat::zeros(d, d);
    let shards = n_samples.div_ceil(SHARD_SIZE);
    for s in 0..shards {
        let count = SHARD_SIZE.min(n_samples - s * SHARD_SIZE);
        let mut rng = rng_for(seed, s as u64);
        let part = monte_carlo_choi_with(assignment, i, count, || (haar_su2(&mut rng), haar_su2(&mut rng)));
        total += part.scale(count as f64);
    }
    Ok(total.unscale(n_samples as f64))
}
