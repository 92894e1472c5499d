//! Angular-momentum coupling of qubits and operators on multiplicity spaces.
//!
//! Spins are stored as twice their value (`j2`), so spin 1/2 is `1`.
//! Qubit 1 is the most significant bit of a computational index and bit 0 is m = +1/2.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{self, CMat, RMat, C64};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RepError {
    #[error("invalid quantum numbers: {0}")]
    Domain(String),
    #[error("unsupported coupling: {0}")]
    Unsupported(String),
    #[error("block structure mismatch: {0}")]
    Structure(String),
    #[error(transparent)]
    Numerics(#[from] numerics::NumericsError),
}

pub type Result<T> = std::result::Result<T, RepError>;

pub fn spin_label(j2: u32) -> String {
    if j2 % 2 == 0 {
        format!("{}", j2 / 2)
    } else {
        format!("{j2}/2")
    }
}

pub fn parse_spin(s: &str) -> Option<u32> {
    let s = s.trim();
    match s.split_once('/') {
        Some((num, "2")) => num.parse::<u32>().ok().filter(|n| n % 2 == 1),
        Some(_) => None,
        None => s.parse::<u32>().ok().map(|j| 2 * j),
    }
}

fn factorial(n: i64) -> f64 {
    (1..=n).fold(1.0, |acc, k| acc * k as f64)
}

/// Clebsch-Gordan coefficient <j1 m1; j2 m2 | j m> (Condon-Shortley), all arguments doubled.
pub fn cg_coefficient(j1: u32, m1: i32, j2: u32, m2: i32, j: u32, m: i32) -> Result<f64> {
    for (jj, mm) in [(j1, m1), (j2, m2), (j, m)] {
        if mm.unsigned_abs() > jj || (jj as i32 + mm) % 2 != 0 {
            return Err(RepError::Domain(format!(
                "m={} not allowed for j={}",
                mm as f64 / 2.0,
                spin_label(jj)
            )));
        }
    }
    if m1 + m2 != m || j > j1 + j2 || j < j1.abs_diff(j2) || (j1 + j2 + j) % 2 != 0 {
        return Ok(0.0);
    }
    let (j1, j2, j, m1, m2, m) = (j1 as i64, j2 as i64, j as i64, m1 as i64, m2 as i64, m as i64);
    let h = |x: i64| x / 2;
    let pre = ((j + 1) as f64 * factorial(h(j1 + j2 - j)) * factorial(h(j1 - j2 + j)) * factorial(h(-j1 + j2 + j))
        / factorial(h(j1 + j2 + j) + 1))
        .sqrt();
    let norm = (factorial(h(j + m))
        * factorial(h(j - m))
        * factorial(h(j1 - m1))
        * factorial(h(j1 + m1))
        * factorial(h(j2 - m2))
        * factorial(h(j2 + m2)))
    .sqrt();
    let mut sum = 0.0;
    for k in 0..=h(j1 + j2 - j) {
        let d = [
            h(j1 + j2 - j) - k,
            h(j1 - m1) - k,
            h(j2 + m2) - k,
            h(j - j2 + m1) + k,
            h(j - j1 - m2) + k,
        ];
        if d.iter().any(|&x| x < 0) {
            continue;
        }
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        sum += sign / (factorial(k) * d.iter().map(|&x| factorial(x)).product::<f64>());
    }
    Ok(pre * norm * sum)
}

/// Named coupling schemes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CouplingOrder {
    /// (((1 2) 3) ...) n; `Sequential(3)` is the (12)3 basis.
    Sequential(usize),
    /// (13)2, the default three-qubit basis |v_i>.
    Default3,
    /// (23)1.
    Tilde3,
    /// ((13)2)4: the |v_i> basis coupled with a fourth qubit.
    FirstList4,
    /// (12)(34).
    Paired4,
}

pub const HAT3: CouplingOrder = CouplingOrder::Sequential(3);

#[derive(Debug, Clone)]
enum Tree {
    Leaf(usize),
    Node(Box<Tree>, Box<Tree>),
}

fn node(a: Tree, b: Tree) -> Tree {
    Tree::Node(Box::new(a), Box::new(b))
}

impl CouplingOrder {
    pub fn n_qubits(self) -> usize {
        match self {
            CouplingOrder::Sequential(n) => n,
            CouplingOrder::Default3 | CouplingOrder::Tilde3 => 3,
            CouplingOrder::FirstList4 | CouplingOrder::Paired4 => 4,
        }
    }

    pub fn name(self) -> String {
        match self {
            CouplingOrder::Sequential(0) => "()".into(),
            CouplingOrder::Sequential(1) => "1".into(),
            CouplingOrder::Sequential(n) => {
                let mut s = "(12)".to_string();
                for q in 3..=n {
                    s = if q == n { format!("{s}{q}") } else { format!("({s}{q})") };
                }
                if n == 2 {
                    "(12)".into()
                } else {
                    s
                }
            }
            CouplingOrder::Default3 => "(13)2".into(),
            CouplingOrder::Tilde3 => "(23)1".into(),
            CouplingOrder::FirstList4 => "((13)2)4".into(),
            CouplingOrder::Paired4 => "(12)(34)".into(),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let t: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        let order = match t.as_str() {
            "()" => CouplingOrder::Sequential(0),
            "1" => CouplingOrder::Sequential(1),
            "(12)" | "12" => CouplingOrder::Sequential(2),
            "(12)3" | "hat" => CouplingOrder::Sequential(3),
            "((12)3)4" => CouplingOrder::Sequential(4),
            "(13)2" | "default" => CouplingOrder::Default3,
            "(23)1" | "tilde" => CouplingOrder::Tilde3,
            "((13)2)4" => CouplingOrder::FirstList4,
            "(12)(34)" => CouplingOrder::Paired4,
            _ => return Err(RepError::Unsupported(format!("coupling order {s:?}"))),
        };
        Ok(order)
    }

    fn tree(self) -> Result<Tree> {
        let leaf = Tree::Leaf;
        Ok(match self {
            CouplingOrder::Sequential(0) => {
                return Err(RepError::Unsupported("empty coupling tree".into()));
            }
            CouplingOrder::Sequential(n) if n <= 6 => {
                let mut t = leaf(0);
                for q in 1..n {
                    t = node(t, leaf(q));
                }
                t
            }
            CouplingOrder::Sequential(n) => {
                return Err(RepError::Unsupported(format!("{n} qubits")));
            }
            CouplingOrder::Default3 => node(node(leaf(0), leaf(2)), leaf(1)),
            CouplingOrder::Tilde3 => node(node(leaf(1), leaf(2)), leaf(0)),
            CouplingOrder::FirstList4 => node(node(node(leaf(0), leaf(2)), leaf(1)), leaf(3)),
            CouplingOrder::Paired4 => node(node(leaf(0), leaf(1)), node(leaf(2), leaf(3))),
        })
    }

    /// Global signs pinned on multiplicity vectors so columns match the conventional printed vectors.
    fn sign(self, j2: u32) -> f64 {
        match (self, j2) {
            (CouplingOrder::Tilde3, 1) => -1.0,
            _ => 1.0,
        }
    }
}

impl fmt::Display for CouplingOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IrrepBlock {
    pub j2: u32,
    pub dim: usize,
    pub mult: usize,
    pub offset: usize,
    /// Intermediate spins (doubled) of each multiplicity label, post-order over the coupling tree.
    pub paths: Vec<Vec<u32>>,
}

impl IrrepBlock {
    pub fn column(&self, k: usize, i: usize) -> usize {
        self.offset + k * self.dim + i
    }
}

/// Orthogonal change of basis into coupled vectors. Column `offset + k*d_J + i` holds
/// multiplicity label `k` with m = J - i.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledBasis {
    pub order: CouplingOrder,
    pub n_qubits: usize,
    pub matrix: RMat,
    pub blocks: Vec<IrrepBlock>,
}

struct Multiplet {
    j2: u32,
    path: Vec<u32>,
    states: Vec<DVector<f64>>,
}

fn couple(tree: &Tree, n: usize) -> Result<Vec<Multiplet>> {
    let dim = 1usize << n;
    match tree {
        Tree::Leaf(q) => {
            let mut up = DVector::zeros(dim);
            up[0] = 1.0;
            let mut down = DVector::zeros(dim);
            down[1 << (n - 1 - q)] = 1.0;
            Ok(vec![Multiplet { j2: 1, path: vec![], states: vec![up, down] }])
        }
        Tree::Node(l, r) => {
            let left = couple(l, n)?;
            let right = couple(r, n)?;
            let (li, ri) = (matches!(**l, Tree::Node(..)), matches!(**r, Tree::Node(..)));
            let mut out = Vec::new();
            for a in &left {
                for b in &right {
                    let mut path = a.path.clone();
                    path.extend(&b.path);
                    if li {
                        path.push(a.j2);
                    }
                    if ri {
                        path.push(b.j2);
                    }
                    let mut j = a.j2.abs_diff(b.j2);
                    while j <= a.j2 + b.j2 {
                        let mut states = Vec::with_capacity(j as usize + 1);
                        for i in 0..=j {
                            let m = j as i32 - 2 * i as i32;
                            let mut v = DVector::zeros(dim);
                            for (ia, va) in a.states.iter().enumerate() {
                                let ma = a.j2 as i32 - 2 * ia as i32;
                                let mb = m - ma;
                                if mb.unsigned_abs() > b.j2 {
                                    continue;
                                }
                                let ib = ((b.j2 as i32 - mb) / 2) as usize;
                                let coef = cg_coefficient(a.j2, ma, b.j2, mb, j, m)?;
                                if coef == 0.0 {
                                    continue;
                                }
                                let vb = &b.states[ib];
                                for x in 0..dim {
                                    if va[x] == 0.0 {
                                        continue;
                                    }
                                    for y in 0..dim {
                                        if vb[y] != 0.0 {
                                            v[x | y] += coef * va[x] * vb[y];
                                        }
                                    }
                                }
                            }
                            states.push(v);
                        }
                        out.push(Multiplet { j2: j, path: path.clone(), states });
                        j += 2;
                    }
                }
            }
            Ok(out)
        }
    }
}

fn build_basis(order: CouplingOrder) -> Result<CoupledBasis> {
    let n = order.n_qubits();
    if n == 0 {
        return Ok(CoupledBasis {
            order,
            n_qubits: 0,
            matrix: RMat::identity(1, 1),
            blocks: vec![IrrepBlock { j2: 0, dim: 1, mult: 1, offset: 0, paths: vec![vec![]] }],
        });
    }
    let mut mults = couple(&order.tree()?, n)?;
    mults.sort_by(|a, b| (a.j2, &a.path).cmp(&(b.j2, &b.path)));
    let dim = 1usize << n;
    let mut matrix = RMat::zeros(dim, dim);
    let mut blocks: Vec<IrrepBlock> = Vec::new();
    let mut col = 0;
    for m in &mults {
        if blocks.last().map(|b| b.j2) != Some(m.j2) {
            blocks.push(IrrepBlock { j2: m.j2, dim: m.j2 as usize + 1, mult: 0, offset: col, paths: vec![] });
        }
        let blk = blocks.last_mut().expect("block pushed above");
        blk.mult += 1;
        blk.paths.push(m.path.clone());
        let s = order.sign(m.j2);
        for st in &m.states {
            matrix.set_column(col, &(st * s));
            col += 1;
        }
    }
    Ok(CoupledBasis { order, n_qubits: n, matrix, blocks })
}

static BASES: OnceLock<Mutex<HashMap<CouplingOrder, Arc<CoupledBasis>>>> = OnceLock::new();

pub fn coupled_basis(order: CouplingOrder) -> Result<Arc<CoupledBasis>> {
    let cache = BASES.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(b) = cache.lock().expect("basis cache poisoned").get(&order) {
        return Ok(b.clone());
    }
    let b = Arc::new(build_basis(order)?);
    cache.lock().expect("basis cache poisoned").insert(order, b.clone());
    Ok(b)
}

impl CoupledBasis {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn block(&self, j2: u32) -> Option<&IrrepBlock> {
        self.blocks.iter().find(|b| b.j2 == j2)
    }

    pub fn mult(&self, j2: u32) -> usize {
        self.block(j2).map_or(0, |b| b.mult)
    }

    pub fn spins(&self) -> Vec<u32> {
        self.blocks.iter().map(|b| b.j2).collect()
    }

    pub fn vector(&self, j2: u32, k: usize, i: usize) -> DVector<f64> {
        let b = self.block(j2).expect("spin present in basis");
        self.matrix.column(b.column(k, i)).into_owned()
    }

    pub fn complex_matrix(&self) -> CMat {
        numerics::to_complex(&self.matrix)
    }

    pub fn path_index(&self, j2: u32, path: &[u32]) -> Option<usize> {
        self.block(j2)?.paths.iter().position(|p| p == path)
    }
}

/// Overlap R[k,k'] = <from_k|to_k'> on the multiplicity space of spin `j2`.
pub fn multiplicity_relation(from: CouplingOrder, to: CouplingOrder, j2: u32) -> Result<RMat> {
    if from.n_qubits() != to.n_qubits() {
        return Err(RepError::Unsupported(format!("relation between {from} and {to}")));
    }
    let bf = coupled_basis(from)?;
    let bt = coupled_basis(to)?;
    let (f, t) = match (bf.block(j2), bt.block(j2)) {
        (Some(f), Some(t)) => (f, t),
        _ => return Err(RepError::Domain(format!("spin {} absent", spin_label(j2)))),
    };
    Ok(RMat::from_fn(f.mult, t.mult, |k, kp| {
        bf.matrix.column(f.column(k, 0)).dot(&bt.matrix.column(t.column(kp, 0)))
    }))
}

/// Three-qubit J=1/2 relation: column k' expresses `to` vector k' in the `from` multiplicity basis.
pub fn basis_relation(from: CouplingOrder, to: CouplingOrder) -> Result<CMat> {
    if from.n_qubits() != 3 || to.n_qubits() != 3 {
        return Err(RepError::Unsupported("basis relation is defined for three qubits".into()));
    }
    if from == to {
        return Err(RepError::Domain("orders must differ".into()));
    }
    Ok(numerics::to_complex(&multiplicity_relation(from, to, 1)?))
}

/// The 2x2 matrix V(j1, j3, j13), arguments doubled.
pub fn v_matrix(j1: u32, j3: u32, j13: u32) -> Result<CMat> {
    let (a, b, c) = (j1 as f64 / 2.0, j3 as f64 / 2.0, j13 as f64 / 2.0);
    let sign = if (j1 + j3 + j13) % 2 == 0 { 1.0 } else { -1.0 };
    let pref = sign / ((2.0 * c + 2.0) * (2.0 * a + 1.0)).sqrt();
    let r11 = (b + 0.5).powi(2) - (c - a + 0.5).powi(2);
    let r12 = (c + a + 1.5).powi(2) - (b + 0.5).powi(2);
    for rad in [r11, r12] {
        if rad < -1e-12 {
            return Err(RepError::Domain(format!("negative radicand {rad}")));
        }
    }
    let v11 = pref * r11.max(0.0).sqrt();
    let v12 = pref * r12.max(0.0).sqrt();
    Ok(CMat::from_row_slice(2, 2, &[C64::new(v11, 0.0), C64::new(v12, 0.0), C64::new(v12, 0.0), C64::new(-v11, 0.0)]))
}

fn swap_matrix(n: usize, i: usize, j: usize) -> CMat {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.swap(i, j);
    numerics::permutation_matrix(&vec![2; n], &perm).expect("valid permutation")
}

fn rep_of(order: CouplingOrder, full: &CMat, j2: u32) -> Result<CMat> {
    let b = coupled_basis(order)?;
    let blk = b.block(j2).ok_or_else(|| RepError::Domain(format!("spin {} absent", spin_label(j2))))?;
    let cols: Vec<DVector<C64>> = (0..blk.mult)
        .map(|k| b.vector(j2, k, 0).map(|x| C64::new(x, 0.0)))
        .collect();
    Ok(CMat::from_fn(blk.mult, blk.mult, |k, kp| cols[k].dotc(&(full * &cols[kp]))))
}

/// Action of the adjacent qubit swap (i, i+1) (1-based) on the multiplicity space of spin `j2`,
/// in the sequential basis.
pub fn swap_rep(n: usize, i: usize, j: usize, j2: u32) -> Result<CMat> {
    if !(2..=4).contains(&n) || i == 0 || j != i + 1 || j > n {
        return Err(RepError::Unsupported(format!("swap {i}:{j} on {n} qubits")));
    }
    rep_of(CouplingOrder::Sequential(n), &swap_matrix(n, i - 1, j - 1), j2)
}

/// Adjacent transpositions (0-based position p swaps p and p+1), applied first to last,
/// that carry the identity arrangement to `perm` (position p ends up holding qubit perm[p]).
pub fn adjacent_swaps(perm: &[usize]) -> Vec<usize> {
    let mut arr: Vec<usize> = (0..perm.len()).collect();
    let mut out = Vec::new();
    for p in 0..perm.len() {
        let mut q = arr.iter().position(|&x| x == perm[p]).expect("perm is a permutation");
        while q > p {
            arr.swap(q - 1, q);
            out.push(q - 1);
            q -= 1;
        }
    }
    out
}

/// Multiplicity-space representation of the qubit permutation whose full-space matrix is
/// `numerics::permutation_matrix(&[2; n], perm)`, composed from adjacent swaps.
pub fn permutation_rep(n: usize, perm: &[usize], j2: u32) -> Result<CMat> {
    if perm.len() != n {
        return Err(RepError::Domain(format!("permutation of length {} on {n} qubits", perm.len())));
    }
    let m = coupled_basis(CouplingOrder::Sequential(n))?.mult(j2);
    let mut rep = CMat::identity(m, m);
    for p in adjacent_swaps(perm) {
        rep = swap_rep(n, p + 1, p + 2, j2)? * rep;
    }
    Ok(rep)
}

/// Wigner-D blocks of U^{(x)n}, one per spin, in the sequential basis.
pub fn decompose_tensor_power(u: &CMat, n: usize) -> Result<Vec<(u32, CMat)>> {
    if u.shape() != (2, 2) || !numerics::is_unitary(u, 1e-10) {
        return Err(RepError::Domain("expected a 2x2 unitary".into()));
    }
    let b = coupled_basis(CouplingOrder::Sequential(n))?;
    let full = numerics::kron_all(&vec![u.clone(); n]);
    let mut out = Vec::new();
    for blk in &b.blocks {
        let cols: Vec<DVector<C64>> = (0..blk.dim)
            .map(|i| b.vector(blk.j2, 0, i).map(|x| C64::new(x, 0.0)))
            .collect();
        let d = CMat::from_fn(blk.dim, blk.dim, |i, ip| cols[i].dotc(&(&full * &cols[ip])));
        out.push((blk.j2, d));
    }
    Ok(out)
}

/// Largest entry of B^T U^{(x)n} B outside the declared irrep blocks, plus deviation of the
/// blocks from `U_J (x) I_m`.
pub fn block_leakage(u: &CMat, order: CouplingOrder) -> Result<f64> {
    let n = order.n_qubits();
    let b = coupled_basis(order)?;
    let bc = b.complex_matrix();
    let full = numerics::kron_all(&vec![u.clone(); n]);
    let t = bc.transpose() * full * &bc;
    let mut ideal = CMat::zeros(t.nrows(), t.ncols());
    for blk in &b.blocks {
        for k in 0..blk.mult {
            for i in 0..blk.dim {
                for ip in 0..blk.dim {
                    ideal[(blk.column(k, i), blk.column(k, ip))] = t[(blk.column(0, i), blk.column(0, ip))];
                }
            }
        }
    }
    Ok(numerics::max_abs(&(t - ideal)))
}

/// Parent of a sequential multiplicity label: (spin of the first n-1 qubits, its label index).
pub fn sequential_parent(n: usize, j2: u32, k: usize) -> Result<(u32, usize)> {
    let b = coupled_basis(CouplingOrder::Sequential(n))?;
    let path = &b
        .block(j2)
        .ok_or_else(|| RepError::Domain(format!("spin {} absent", spin_label(j2))))?
        .paths[k];
    match n {
        0 => Err(RepError::Domain("no parent for zero qubits".into())),
        1 => Ok((0, 0)),
        2 => Ok((1, 0)),
        _ => {
            let pj = *path.last().expect("path non-empty for n >= 3");
            let pb = coupled_basis(CouplingOrder::Sequential(n - 1))?;
            let idx = pb
                .path_index(pj, &path[..path.len() - 1])
                .ok_or_else(|| RepError::Structure("parent path missing".into()))?;
            Ok((pj, idx))
        }
    }
}

/// 0/1 map between multiplicity labels of n and n-1 sequentially coupled qubits.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiplicityMap {
    pub parent_n: usize,
    pub child_n: usize,
    pub parent_j2: u32,
    pub child_j2: u32,
    /// child multiplicity x parent multiplicity
    pub matrix: RMat,
}

pub fn multiplicity_map(child_n: usize, child_j2: u32, parent_j2: u32) -> Result<MultiplicityMap> {
    let cb = coupled_basis(CouplingOrder::Sequential(child_n))?;
    let pb = coupled_basis(CouplingOrder::Sequential(child_n.saturating_sub(1)))?;
    let (mc, mp) = (cb.mult(child_j2), pb.mult(parent_j2));
    let mut matrix = RMat::zeros(mc, mp);
    for k in 0..mc {
        let (pj, pk) = sequential_parent(child_n, child_j2, k)?;
        if pj == parent_j2 {
            matrix[(k, pk)] = 1.0;
        }
    }
    Ok(MultiplicityMap { parent_n: child_n - 1, child_n, parent_j2, child_j2, matrix })
}

/// How the irrep factor of each side is normalized in the full-space operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scaling {
    /// sum (I_J / d_J) (x) I_L (x) M_JL, used for Choi operators.
    Output,
    /// sum I_J (x) (I_L / d_L) (x) Y_JL, used for tester operators.
    Input,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Side {
    Out,
    In,
}

/// Operator on K (x) H commuting with the SU(2) actions on each side, stored per (J, L) as a
/// matrix on V_J (x) V_L with row index k * m_L + l.
#[derive(Debug, Clone, PartialEq)]
pub struct IsoTypicOp {
    pub out_order: CouplingOrder,
    pub in_order: CouplingOrder,
    pub scaling: Scaling,
    pub blocks: BTreeMap<(u32, u32), CMat>,
}

impl IsoTypicOp {
    pub fn zeros(out_order: CouplingOrder, in_order: CouplingOrder, scaling: Scaling) -> Result<Self> {
        let bo = coupled_basis(out_order)?;
        let bi = coupled_basis(in_order)?;
        let mut blocks = BTreeMap::new();
        for a in &bo.blocks {
            for b in &bi.blocks {
                blocks.insert((a.j2, b.j2), CMat::zeros(a.mult * b.mult, a.mult * b.mult));
            }
        }
        Ok(Self { out_order, in_order, scaling, blocks })
    }

    pub fn identity(out_order: CouplingOrder, in_order: CouplingOrder, scaling: Scaling) -> Result<Self> {
        let mut op = Self::zeros(out_order, in_order, scaling)?;
        for ((j, l), blk) in op.blocks.iter_mut() {
            let n = blk.nrows();
            let s = match scaling {
                Scaling::Output => *j as f64 + 1.0,
                Scaling::Input => *l as f64 + 1.0,
            };
            *blk = CMat::identity(n, n).scale(s);
        }
        Ok(op)
    }

    pub fn from_blocks(
        out_order: CouplingOrder,
        in_order: CouplingOrder,
        scaling: Scaling,
        blocks: BTreeMap<(u32, u32), CMat>,
    ) -> Result<Self> {
        let mut op = Self::zeros(out_order, in_order, scaling)?;
        for (key, m) in blocks {
            let slot = op
                .blocks
                .get_mut(&key)
                .ok_or_else(|| RepError::Structure(format!("unexpected block {key:?}")))?;
            if slot.shape() != m.shape() {
                return Err(RepError::Structure(format!(
                    "block {key:?} has shape {:?}, expected {:?}",
                    m.shape(),
                    slot.shape()
                )));
            }
            *slot = m;
        }
        Ok(op)
    }

    pub fn block(&self, j2: u32, l2: u32) -> Option<&CMat> {
        self.blocks.get(&(j2, l2))
    }

    fn scale_factor(&self, j2: u32, l2: u32) -> f64 {
        match self.scaling {
            Scaling::Output => 1.0 / (j2 as f64 + 1.0),
            Scaling::Input => 1.0 / (l2 as f64 + 1.0),
        }
    }

    pub fn out_dim(&self) -> usize {
        1 << self.out_order.n_qubits()
    }

    pub fn in_dim(&self) -> usize {
        1 << self.in_order.n_qubits()
    }

    fn coupled_coordinates(&self) -> Result<CMat> {
        let bo = coupled_basis(self.out_order)?;
        let bi = coupled_basis(self.in_order)?;
        let (no, ni) = (bo.dim(), bi.dim());
        let mut d = CMat::zeros(no * ni, no * ni);
        for ((j, l), m) in &self.blocks {
            let (a, b) = (bo.block(*j).expect("spin"), bi.block(*l).expect("spin"));
            let s = self.scale_factor(*j, *l);
            for k in 0..a.mult {
                for kp in 0..a.mult {
                    for ll in 0..b.mult {
                        for lp in 0..b.mult {
                            let v = m[(k * b.mult + ll, kp * b.mult + lp)] * s;
                            if v == C64::new(0.0, 0.0) {
                                continue;
                            }
                            for i in 0..a.dim {
                                for x in 0..b.dim {
                                    d[(a.column(k, i) * ni + b.column(ll, x), a.column(kp, i) * ni + b.column(lp, x))] = v;
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(d)
    }

    fn joint_basis(&self) -> Result<CMat> {
        let bo = coupled_basis(self.out_order)?;
        let bi = coupled_basis(self.in_order)?;
        Ok(numerics::to_complex(&bo.matrix.kronecker(&bi.matrix)))
    }

    /// Full-space operator on K (x) H.
    pub fn to_full(&self) -> Result<CMat> {
        let b = self.joint_basis()?;
        let d = self.coupled_coordinates()?;
        Ok(&b * d * b.transpose())
    }

    /// Block extraction by averaging over irrep indices. Use [`IsoTypicOp::leakage`] to check the input
    /// actually has the commutant structure.
    pub fn from_full(x: &CMat, out_order: CouplingOrder, in_order: CouplingOrder, scaling: Scaling) -> Result<Self> {
        let mut op = Self::zeros(out_order, in_order, scaling)?;
        if x.shape() != (op.out_dim() * op.in_dim(), op.out_dim() * op.in_dim()) {
            return Err(RepError::Structure(format!("operator shape {:?}", x.shape())));
        }
        let b = op.joint_basis()?;
        let t = b.transpose() * x * &b;
        let bo = coupled_basis(out_order)?;
        let bi = coupled_basis(in_order)?;
        let ni = bi.dim();
        let keys: Vec<(u32, u32)> = op.blocks.keys().copied().collect();
        for (j, l) in keys {
            let (a, bb) = (bo.block(j).expect("spin"), bi.block(l).expect("spin"));
            let s = op.scale_factor(j, l);
            let w = 1.0 / (s * (a.dim * bb.dim) as f64);
            let blk = op.blocks.get_mut(&(j, l)).expect("key");
            for k in 0..a.mult {
                for kp in 0..a.mult {
                    for ll in 0..bb.mult {
                        for lp in 0..bb.mult {
                            let mut acc = C64::new(0.0, 0.0);
                            for i in 0..a.dim {
                                for y in 0..bb.dim {
                                    acc += t[(a.column(k, i) * ni + bb.column(ll, y), a.column(kp, i) * ni + bb.column(lp, y))];
                                }
                            }
                            blk[(k * bb.mult + ll, kp * bb.mult + lp)] = acc * w;
                        }
                    }
                }
            }
        }
        Ok(op)
    }

    /// Max-entry distance between `x` and the reconstruction of its block extraction.
    pub fn leakage(x: &CMat, out_order: CouplingOrder, in_order: CouplingOrder) -> Result<f64> {
        let op = Self::from_full(x, out_order, in_order, Scaling::Output)?;
        Ok(numerics::max_abs(&(x - op.to_full()?)))
    }

    pub fn trace(&self) -> f64 {
        self.blocks
            .iter()
            .map(|((j, l), m)| {
                let w = match self.scaling {
                    Scaling::Output => *l as f64 + 1.0,
                    Scaling::Input => *j as f64 + 1.0,
                };
                w * numerics::trace(m).re
            })
            .sum()
    }

    pub fn rescaled(&self, scaling: Scaling) -> Self {
        if scaling == self.scaling {
            return self.clone();
        }
        let blocks = self
            .blocks
            .iter()
            .map(|(&(j, l), m)| {
                let (dj, dl) = (j as f64 + 1.0, l as f64 + 1.0);
                let f = match scaling {
                    Scaling::Input => dl / dj,
                    Scaling::Output => dj / dl,
                };
                ((j, l), m.scale(f))
            })
            .collect();
        Self { out_order: self.out_order, in_order: self.in_order, scaling, blocks }
    }

    /// sum_JL tr(A_JL B_JL); equals the full-space tr(A B) when one operand is Output- and the other Input-scaled.
    pub fn block_inner(&self, other: &Self) -> Result<f64> {
        self.check_compatible(other)?;
        Ok(self
            .blocks
            .iter()
            .map(|(key, a)| numerics::trace_product_re(a, &other.blocks[key]))
            .sum())
    }

    fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.out_order != other.out_order || self.in_order != other.in_order {
            return Err(RepError::Structure("operators use different bases".into()));
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_compatible(other)?;
        if self.scaling != other.scaling {
            return Err(RepError::Structure("operators use different scalings".into()));
        }
        let blocks = self.blocks.iter().map(|(k, a)| (*k, a + &other.blocks[k])).collect();
        Ok(Self { blocks, ..self.clone() })
    }

    pub fn scale(&self, s: f64) -> Self {
        let blocks = self.blocks.iter().map(|(k, a)| (*k, a.scale(s))).collect();
        Self { blocks, ..self.clone() }
    }

    /// Conjugate the blocks by per-spin multiplicity unitaries on each side: Y -> (R_J (x) S_L) Y (R_J (x) S_L)^dagger.
    pub fn conjugate(&self, out_reps: &BTreeMap<u32, CMat>, in_reps: &BTreeMap<u32, CMat>) -> Self {
        let blocks = self
            .blocks
            .iter()
            .map(|(&(j, l), m)| {
                let u = out_reps[&j].kronecker(&in_reps[&l]);
                ((j, l), &u * m * u.adjoint())
            })
            .collect();
        Self { blocks, ..self.clone() }
    }

    fn change_side_order(&self, side: Side, to: CouplingOrder) -> Result<Self> {
        let from = match side {
            Side::Out => self.out_order,
            Side::In => self.in_order,
        };
        let b = coupled_basis(from)?;
        let mut reps = BTreeMap::new();
        for j in b.spins() {
            reps.insert(j, numerics::to_complex(&multiplicity_relation(from, to, j)?.transpose()));
        }
        let other_side = match side {
            Side::Out => self.in_order,
            Side::In => self.out_order,
        };
        let ob = coupled_basis(other_side)?;
        let ident: BTreeMap<u32, CMat> = ob
            .blocks
            .iter()
            .map(|blk| (blk.j2, CMat::identity(blk.mult, blk.mult)))
            .collect();
        let mut out = match side {
            Side::Out => self.conjugate(&reps, &ident),
            Side::In => self.conjugate(&ident, &reps),
        };
        match side {
            Side::Out => out.out_order = to,
            Side::In => out.in_order = to,
        }
        Ok(out)
    }

    pub fn with_out_order(&self, to: CouplingOrder) -> Result<Self> {
        self.change_side_order(Side::Out, to)
    }

    pub fn with_in_order(&self, to: CouplingOrder) -> Result<Self> {
        self.change_side_order(Side::In, to)
    }

    /// Y'_{new} = sum over old spins of coef * (S (x) I) Y (S (x) I)^T with S from the sequential parent maps.
    fn map_side(&self, side: Side, child_n: usize, grow: bool, coef: impl Fn(u32, u32) -> f64) -> Result<Self> {
        let seq = CouplingOrder::Sequential;
        let (new_out, new_in) = match (side, grow) {
            (Side::Out, true) => (seq(child_n), self.in_order),
            (Side::Out, false) => (seq(child_n - 1), self.in_order),
            (Side::In, true) => (self.out_order, seq(child_n)),
            (Side::In, false) => (self.out_order, seq(child_n - 1)),
        };
        let mut out = Self::zeros(new_out, new_in, self.scaling)?;
        let (parent_b, child_b) = (coupled_basis(seq(child_n - 1))?, coupled_basis(seq(child_n))?);
        for (&(j, l), y) in &self.blocks {
            let (old_spin, fixed) = match side {
                Side::Out => (j, l),
                Side::In => (l, j),
            };
            let fixed_m = match side {
                Side::Out => coupled_basis(self.in_order)?.mult(fixed),
                Side::In => coupled_basis(self.out_order)?.mult(fixed),
            };
            let targets: Vec<u32> = if grow {
                child_b.spins().into_iter().filter(|c| c.abs_diff(old_spin) == 1).collect()
            } else {
                parent_b.spins().into_iter().filter(|p| p.abs_diff(old_spin) == 1).collect()
            };
            for t in targets {
                let (child_j, parent_j) = if grow { (t, old_spin) } else { (old_spin, t) };
                let sel = numerics::to_complex(&multiplicity_map(child_n, child_j, parent_j)?.matrix);
                let s = if grow { sel } else { sel.transpose() };
                let id = CMat::identity(fixed_m, fixed_m);
                let e = match side {
                    Side::Out => s.kronecker(&id),
                    Side::In => id.kronecker(&s),
                };
                let key = match side {
                    Side::Out => (t, fixed),
                    Side::In => (fixed, t),
                };
                let term = (&e * y * e.transpose()).scale(coef(old_spin, t));
                let slot = out.blocks.get_mut(&key).expect("target block");
                *slot += term;
            }
        }
        Ok(out)
    }

    /// Append one output qubit carrying an identity: X -> X (x) I on the new last K qubit.
    /// Requires `Scaling::Input` and a sequential output basis.
    pub fn extend_out_identity(&self) -> Result<Self> {
        let CouplingOrder::Sequential(n) = self.out_order else {
            return Err(RepError::Structure("output side must be sequentially coupled".into()));
        };
        if self.scaling != Scaling::Input {
            return Err(RepError::Structure("identity extension needs input scaling".into()));
        }
        let x = self.map_side(Side::Out, n + 1, true, |_, _| 1.0)?;
        Ok(x)
    }

    /// Partial trace over the last input qubit. Requires `Scaling::Input` and a sequential input basis.
    pub fn trace_in_last(&self) -> Result<Self> {
        let CouplingOrder::Sequential(n) = self.in_order else {
            return Err(RepError::Structure("input side must be sequentially coupled".into()));
        };
        if self.scaling != Scaling::Input || n == 0 {
            return Err(RepError::Structure("trace of the last input qubit needs input scaling".into()));
        }
        self.map_side(Side::In, n, false, |_, _| 1.0)
    }

    /// Partial trace over the last output qubit. Requires `Scaling::Output` and a sequential output basis.
    pub fn trace_out_last(&self) -> Result<Self> {
        let CouplingOrder::Sequential(n) = self.out_order else {
            return Err(RepError::Structure("output side must be sequentially coupled".into()));
        };
        if self.scaling != Scaling::Output || n == 0 {
            return Err(RepError::Structure("trace of the last output qubit needs output scaling".into()));
        }
        self.map_side(Side::Out, n, false, |_, _| 1.0)
    }

    /// X -> X (x) I/2 on a new last output qubit. Requires `Scaling::Output` and a sequential output basis.
    pub fn extend_out_maximally_mixed(&self) -> Result<Self> {
        let CouplingOrder::Sequential(n) = self.out_order else {
            return Err(RepError::Structure("output side must be sequentially coupled".into()));
        };
        if self.scaling != Scaling::Output {
            return Err(RepError::Structure("mixed extension needs output scaling".into()));
        }
        self.map_side(Side::Out, n + 1, true, |old, new| (new as f64 + 1.0) / (2.0 * (old as f64 + 1.0)))
    }

    pub fn max_hermitian_deviation(&self) -> f64 {
        self.blocks.values().map(numerics::hermitian_deviation).fold(0.0, f64::max)
    }

    pub fn to_json(&self) -> serde_json::Value {
        let bo = coupled_basis(self.out_order).expect("order valid");
        let bi = coupled_basis(self.in_order).expect("order valid");
        let blocks: Vec<serde_json::Value> = self
            .blocks
            .iter()
            .map(|(&(j, l), m)| {
                serde_json::json!({
                    "j_out": spin_label(j),
                    "j_in": spin_label(l),
                    "mult_out": bo.mult(j),
                    "mult_in": bi.mult(l),
                    "matrix": matrix_to_json(m),
                })
            })
            .collect();
        serde_json::json!({
            "out_basis": self.out_order.name(),
            "in_basis": self.in_order.name(),
            "scaling": match self.scaling { Scaling::Output => "output", Scaling::Input => "input" },
            "dims": [self.out_dim(), self.in_dim()],
            "blocks": blocks,
        })
    }
}

/// Nested `[re, im]` pairs, row by row.
pub fn matrix_to_json(m: &CMat) -> serde_json::Value {
    let rows: Vec<serde_json::Value> = (0..m.nrows())
        .map(|i| {
            serde_json::Value::Array(
                (0..m.ncols())
                    .map(|j| serde_json::json!([clean(m[(i, j)].re), clean(m[(i, j)].im)]))
                    .collect(),
            )
        })
        .collect();
    serde_json::Value::Array(rows)
}

fn clean(x: f64) -> f64 {
    if x.abs() < 1e-15 {
        0.0
    } else {
        x
    }
}

pub fn matrix_from_json(v: &serde_json::Value) -> Option<CMat> {
    let rows = v.as_array()?;
    let n = rows.len();
    let m = rows.first().map_or(Some(0), |r| r.as_array().map(|a| a.len()))?;
    let mut out = CMat::zeros(n, m);
    for (i, row) in rows.iter().enumerate() {
        let row = row.as_array()?;
        if row.len() != m {
            return None;
        }
        for (j, z) in row.iter().enumerate() {
            let pair = z.as_array()?;
            if pair.len() != 2 {
                return None;
            }
            out[(i, j)] = C64::new(pair[0].as_f64()?, pair[1].as_f64()?);
        }
    }
    Some(out)
}

/// Partial trace of the third qubit for a single-space operator given in the (13)2 basis,
/// stored with output scaling and a trivial input side. The result is in the (12) basis.
pub fn multiplicity_partial_trace(rho: &IsoTypicOp) -> Result<IsoTypicOp> {
    if rho.out_order != CouplingOrder::Default3 || rho.in_order != CouplingOrder::Sequential(0) {
        return Err(RepError::Structure("expected a three-qubit operator in the (13)2 basis".into()));
    }
    if rho.scaling != Scaling::Output {
        return Err(RepError::Structure("expected output scaling".into()));
    }
    rho.with_out_order(HAT3)?.trace_out_last()
}

/// Inverse direction: sigma on two qubits -> sigma (x) I/2, returned in the (13)2 basis.
pub fn multiplicity_extend(sigma: &IsoTypicOp) -> Result<IsoTypicOp> {
    if sigma.out_order != CouplingOrder::Sequential(2) || sigma.in_order != CouplingOrder::Sequential(0) {
        return Err(RepError::Structure("expected a two-qubit operator".into()));
    }
    if sigma.scaling != Scaling::Output {
        return Err(RepError::Structure("expected output scaling".into()));
    }
    sigma.extend_out_maximally_mixed()?.with_out_order(CouplingOrder::Default3)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cg_values() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert!((cg_coefficient(1, 1, 1, -1, 0, 0).unwrap() - s).abs() < 1e-15);
        assert!((cg_coefficient(1, -1, 1, 1, 0, 0).unwrap() + s).abs() < 1e-15);
        assert!((cg_coefficient(1, 1, 1, 1, 2, 2).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cg_coefficient(1, 1, 1, 1, 2, 0).unwrap(), 0.0);
        assert!(cg_coefficient(1, 3, 1, 1, 2, 2).is_err());
    }

    #[test]
    fn spin_labels_round_trip() {
        for j in 0..6 {
            assert_eq!(parse_spin(&spin_label(j)), Some(j));
        }
        assert_eq!(parse_spin("2/2"), None);
    }

    #[test]
    fn order_names_parse() {
        for o in [
            CouplingOrder::Sequential(2),
            HAT3,
            CouplingOrder::Sequential(4),
            CouplingOrder::Default3,
            CouplingOrder::Tilde3,
            CouplingOrder::FirstList4,
            CouplingOrder::Paired4,
        ] {
            assert_eq!(CouplingOrder::parse(&o.name()).unwrap(), o);
        }
    }

    #[test]
    fn sequential_block_sizes() {
        let b = coupled_basis(CouplingOrder::Sequential(4)).unwrap();
        let shape: Vec<(u32, usize)> = b.blocks.iter().map(|x| (x.j2, x.mult)).collect();
        assert_eq!(shape, vec![(0, 2), (2, 3), (4, 1)]);
    }

    #[test]
    fn v_matrix_half_half_zero() {
        let v = v_matrix(1, 1, 0).unwrap();
        let h = 3f64.sqrt() / 2.0;
        let want = [0.5, h, h, -0.5];
        for (i, w) in want.iter().enumerate() {
            assert!((v[(i / 2, i % 2)].re - w).abs() < 1e-15);
        }
    }
}
