//! Block SDP models with Hermitian data, compiled to the real solver form.

use std::collections::BTreeMap;

use serde_json::json;

use super::ipm::{self, ConicModel, IpmOptions, IpmResult, IpmStatus, RVec, SchurSolver};
use super::SdpError;
use crate::numerics::{self, CMat, RMat, C64};
use crate::su2rep::matrix_to_json;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Field {
    Real,
    Complex,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockSpec {
    pub name: String,
    pub dim: usize,
}

/// sum_b tr(A_b X_b) = rhs, every A_b Hermitian.
#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub label: String,
    pub terms: Vec<(usize, CMat)>,
    pub rhs: f64,
}

/// maximize sum_b tr(C_b X_b) subject to equality constraints and X_b PSD.
#[derive(Debug, Clone, PartialEq)]
pub struct SdpProblem {
    pub name: String,
    pub field: Field,
    pub blocks: Vec<BlockSpec>,
    pub objective: Vec<CMat>,
    pub constraints: Vec<Constraint>,
}

#[derive(Debug, Clone)]
pub struct SdpSolution {
    pub primal_value: f64,
    pub dual_value: f64,
    pub gap: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub iterations: usize,
    pub status: IpmStatus,
    pub blocks: Vec<CMat>,
    /// One multiplier per constraint of the original problem; dropped dependent rows get 0.
    pub multipliers: Vec<f64>,
    pub dual_slacks: Vec<CMat>,
}

impl SdpSolution {
    pub fn converged(&self) -> bool {
        self.status == IpmStatus::Optimal
    }

    pub fn to_json(&self, names: &[BlockSpec]) -> serde_json::Value {
        json!({
            "primal_value": self.primal_value,
            "dual_value": self.dual_value,
            "gap": self.gap,
            "primal_residual": self.primal_residual,
            "dual_residual": self.dual_residual,
            "iterations": self.iterations,
            "status": self.status,
            "blocks": names.iter().zip(&self.blocks).map(|(s, m)| json!({"name": s.name, "matrix": matrix_to_json(m)})).collect::<Vec<_>>(),
            "multipliers": self.multipliers,
        })
    }
}

impl SdpProblem {
    pub fn new(name: impl Into<String>, field: Field) -> Self {
        Self { name: name.into(), field, blocks: vec![], objective: vec![], constraints: vec![] }
    }

    pub fn add_block(&mut self, name: impl Into<String>, dim: usize) -> usize {
        self.blocks.push(BlockSpec { name: name.into(), dim });
        self.objective.push(CMat::zeros(dim, dim));
        self.blocks.len() - 1
    }

    pub fn add_constraint(&mut self, label: impl Into<String>, terms: Vec<(usize, CMat)>, rhs: f64) {
        self.constraints.push(Constraint { label: label.into(), terms, rhs });
    }

    /// Entrywise equality sum_t F_t(X_{b_t}) = rhs for Hermitian-preserving linear maps F_t,
    /// compiled by evaluating each map on unit matrices.
    pub fn add_matrix_equality(&mut self, label: &str, terms: &[(usize, &dyn Fn(&CMat) -> CMat)], rhs: &CMat) {
        let d = rhs.nrows();
        let mut rows: BTreeMap<(usize, usize, bool), Vec<(usize, CMat)>> = BTreeMap::new();
        for &(blk, f) in terms {
            let n = self.blocks[blk].dim;
            // coefficient tensors: out_{pq} = sum_{rs} K[p,q][r,s] X_{rs}
            let mut coef: Vec<CMat> = vec![CMat::zeros(n, n); d * d];
            for r in 0..n {
                for s in 0..n {
                    let mut e = CMat::zeros(n, n);
                    e[(r, s)] = C64::new(1.0, 0.0);
                    let out = f(&e);
                    for p in 0..d {
                        for q in 0..d {
                            // tr(A X) = sum A_{sr} X_{rs}
                            coef[p * d + q][(s, r)] = out[(p, q)];
                        }
                    }
                }
            }
            for p in 0..d {
                for q in p..d {
                    let a = &coef[p * d + q];
                    let re = numerics::hermitian_part(a);
                    let im = (a - a.adjoint()) * C64::new(0.0, -0.5);
                    rows.entry((p, q, false)).or_default().push((blk, re));
                    if p != q && self.field == Field::Complex {
                        rows.entry((p, q, true)).or_default().push((blk, im));
                    }
                }
            }
        }
        for ((p, q, imag), terms) in rows {
            let value = if imag { rhs[(p, q)].im } else { rhs[(p, q)].re };
            let tag = if imag { "im" } else { "re" };
            self.add_constraint(format!("{label}[{p},{q}].{tag}"), terms, value);
        }
    }

    pub fn validate(&self) -> Result<(), SdpError> {
        for (b, c) in self.objective.iter().enumerate() {
            if c.shape() != (self.blocks[b].dim, self.blocks[b].dim) {
                return Err(SdpError::Structure(format!("objective block {b} shape")));
            }
            if numerics::hermitian_deviation(c) > 1e-10 {
                return Err(SdpError::Structure(format!("objective block {b} not Hermitian")));
            }
        }
        for con in &self.constraints {
            for (b, a) in &con.terms {
                let Some(spec) = self.blocks.get(*b) else {
                    return Err(SdpError::Structure(format!("{}: unknown block {b}", con.label)));
                };
                if a.shape() != (spec.dim, spec.dim) {
                    return Err(SdpError::Structure(format!("{}: coefficient shape", con.label)));
                }
                if numerics::hermitian_deviation(a) > 1e-10 {
                    return Err(SdpError::Structure(format!("{}: coefficient not Hermitian", con.label)));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "name": self.name,
            "field": self.field,
            "blocks": self.blocks.iter().map(|b| json!({"name": b.name, "dim": b.dim})).collect::<Vec<_>>(),
            "objective": self.objective.iter().map(matrix_to_json).collect::<Vec<_>>(),
            "constraints": self.constraints.iter().map(|c| json!({
                "label": c.label,
                "rhs": c.rhs,
                "terms": c.terms.iter().map(|(b, a)| json!({"block": b, "matrix": matrix_to_json(a)})).collect::<Vec<_>>(),
            })).collect::<Vec<_>>(),
        })
    }
}

type SparseSym = Vec<(usize, usize, f64)>;

/// Real standard-form model with explicit sparse constraint matrices.
pub struct GenericModel {
    dims: Vec<usize>,
    c: Vec<RMat>,
    b: RVec,
    rows: Vec<Vec<(usize, SparseSym)>>,
    by_block: Vec<Vec<usize>>,
}

fn sparse_of(a: &RMat) -> SparseSym {
    let mut out = Vec::new();
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            if a[(i, j)] != 0.0 {
                out.push((i, j, a[(i, j)]));
            }
        }
    }
    out
}

impl GenericModel {
    pub fn new(dims: Vec<usize>, c: Vec<RMat>, rows: Vec<(Vec<(usize, RMat)>, f64)>) -> Self {
        let mut by_block = vec![Vec::new(); dims.len()];
        let mut sparse_rows = Vec::with_capacity(rows.len());
        let mut b = RVec::zeros(rows.len());
        for (i, (terms, rhs)) in rows.into_iter().enumerate() {
            b[i] = rhs;
            let mut row = Vec::new();
            for (blk, a) in terms {
                let s = sparse_of(&a);
                if !s.is_empty() {
                    by_block[blk].push(i);
                    row.push((blk, s));
                }
            }
            sparse_rows.push(row);
        }
        Self { dims, c, b, rows: sparse_rows, by_block }
    }
}

struct DenseSchur {
    solve: Box<dyn Fn(&RVec) -> RVec>,
}

impl SchurSolver for DenseSchur {
    fn solve(&self, rhs: &RVec) -> Result<RVec, SdpError> {
        Ok((self.solve)(rhs))
    }
}

impl ConicModel for GenericModel {
    fn block_dims(&self) -> &[usize] {
        &self.dims
    }

    fn n_constraints(&self) -> usize {
        self.rows.len()
    }

    fn b(&self) -> &RVec {
        &self.b
    }

    fn c(&self) -> &[RMat] {
        &self.c
    }

    fn apply_a(&self, x: &[RMat]) -> RVec {
        RVec::from_iterator(
            self.rows.len(),
            self.rows.iter().map(|row| {
                row.iter()
                    .map(|(blk, s)| s.iter().map(|&(i, j, v)| v * x[*blk][(i, j)]).sum::<f64>())
                    .sum::<f64>()
            }),
        )
    }

    fn apply_at(&self, y: &RVec) -> Vec<RMat> {
        let mut out: Vec<RMat> = self.dims.iter().map(|&n| RMat::zeros(n, n)).collect();
        for (k, row) in self.rows.iter().enumerate() {
            for (blk, s) in row {
                for &(i, j, v) in s {
                    out[*blk][(i, j)] += y[k] * v;
                }
            }
        }
        out
    }

    fn schur<'a>(&'a self, w: &'a [RMat]) -> Result<Box<dyn SchurSolver + 'a>, SdpError> {
        let m = self.rows.len();
        let mut mat = RMat::zeros(m, m);
        for (blk, cons) in self.by_block.iter().enumerate() {
            let wb = &w[blk];
            let n = wb.nrows();
            for &j in cons {
                let s = &self.rows[j].iter().find(|(b, _)| *b == blk).expect("indexed").1;
                // T = W A_j W
                let mut t = RMat::zeros(n, n);
                for &(r, c, v) in s {
                    let wr = wb.column(r);
                    let wc = wb.row(c);
                    t.ger(v, &wr, &wc.transpose(), 1.0);
                }
                for &i in cons {
                    if i < j {
                        continue;
                    }
                    let si = &self.rows[i].iter().find(|(b, _)| *b == blk).expect("indexed").1;
                    let val: f64 = si.iter().map(|&(r, c, v)| v * t[(r, c)]).sum();
                    mat[(i, j)] += val;
                    if i != j {
                        mat[(j, i)] += val;
                    }
                }
            }
        }
        Ok(Box::new(DenseSchur { solve: ipm::spd_solver(mat)? }))
    }
}

fn embed(a: &CMat, field: Field) -> RMat {
    match field {
        Field::Real => a.map(|z| z.re),
        Field::Complex => {
            let n = a.nrows();
            RMat::from_fn(2 * n, 2 * n, |i, j| {
                let z = a[(i % n, j % n)];
                match (i < n, j < n) {
                    (true, true) | (false, false) => z.re,
                    (true, false) => -z.im,
                    (false, true) => z.im,
                }
            })
        }
    }
}

fn unembed(s: &RMat, field: Field) -> CMat {
    match field {
        Field::Real => numerics::to_complex(s),
        Field::Complex => {
            let n = s.nrows() / 2;
            CMat::from_fn(n, n, |i, j| {
                C64::new(
                    0.5 * (s[(i, j)] + s[(i + n, j + n)]),
                    0.5 * (s[(i + n, j)] - s[(i, j + n)]),
                )
            })
        }
    }
}

/// Indices of a maximal linearly independent subset of the rows (modified Gram-Schmidt).
fn independent_rows(rows: &[Vec<(usize, RMat)>], dims: &[usize]) -> Vec<usize> {
    let offsets: Vec<usize> = dims
        .iter()
        .scan(0, |acc, &n| {
            let o = *acc;
            *acc += n * (n + 1) / 2;
            Some(o)
        })
        .collect();
    let len: usize = dims.iter().map(|n| n * (n + 1) / 2).sum();
    let mut basis: Vec<RVec> = Vec::new();
    let mut keep = Vec::new();
    for (k, row) in rows.iter().enumerate() {
        let mut v = RVec::zeros(len);
        for (blk, a) in row {
            let n = dims[*blk];
            let mut idx = offsets[*blk];
            for i in 0..n {
                for j in i..n {
                    v[idx] += if i == j { a[(i, i)] } else { a[(i, j)] + a[(j, i)] };
                    idx += 1;
                }
            }
        }
        let norm0 = v.norm();
        if norm0 == 0.0 {
            continue;
        }
        for q in &basis {
            let p = q.dot(&v);
            v.axpy(-p, q, 1.0);
        }
        for q in &basis {
            let p = q.dot(&v);
            v.axpy(-p, q, 1.0);
        }
        let norm = v.norm();
        if norm > 1e-9 * norm0 {
            basis.push(v / norm);
            keep.push(k);
        }
    }
    keep
}

/// Solve a maximization problem. Dependent equality rows are removed before factorization.
pub fn solve(problem: &SdpProblem, opts: &IpmOptions) -> Result<SdpSolution, SdpError> {
    problem.validate()?;
    let field = problem.field;
    let scale = if field == Field::Complex { 0.5 } else { 1.0 };
    let dims: Vec<usize> = problem
        .blocks
        .iter()
        .map(|b| if field == Field::Complex { 2 * b.dim } else { b.dim })
        .collect();
    let c: Vec<RMat> = problem.objective.iter().map(|m| -embed(m, field) * scale).collect();
    let all_rows: Vec<Vec<(usize, RMat)>> = problem
        .constraints
        .iter()
        .map(|con| con.terms.iter().map(|(b, a)| (*b, embed(a, field) * scale)).collect())
        .collect();
    let keep = independent_rows(&all_rows, &dims);
    let rows: Vec<(Vec<(usize, RMat)>, f64)> = keep
        .iter()
        .map(|&k| (all_rows[k].clone(), problem.constraints[k].rhs))
        .collect();
    let model = GenericModel::new(dims, c, rows);
    let res = ipm::solve_ipm(&model, opts)?;
    let mut multipliers = vec![0.0; problem.constraints.len()];
    for (pos, &k) in keep.iter().enumerate() {
        multipliers[k] = -res.y[pos];
    }
    let blocks: Vec<CMat> = res.x.iter().map(|x| unembed(x, field)).collect();
    // residual against every original row, dropped ones included
    let mut primal_residual: f64 = 0.0;
    for con in &problem.constraints {
        let v: f64 = con.terms.iter().map(|(b, a)| numerics::trace_product_re(a, &blocks[*b])).sum();
        primal_residual = primal_residual.max((v - con.rhs).abs());
    }
    Ok(finish(res, blocks, multipliers, primal_residual, field))
}

fn finish(res: IpmResult, blocks: Vec<CMat>, multipliers: Vec<f64>, primal_residual: f64, field: Field) -> SdpSolution {
    let primal_value = -res.primal_objective;
    let dual_value = -res.dual_objective;
    SdpSolution {
        primal_value,
        dual_value,
        gap: (primal_value - dual_value).abs(),
        primal_residual,
        dual_residual: res.dual_residual,
        iterations: res.iterations,
        status: res.status,
        blocks,
        multipliers,
        dual_slacks: res.z.iter().map(|z| unembed(z, field)).collect(),
    }
}

/// Wrap a raw solver result for a real model whose blocks are the problem blocks.
pub(crate) fn solution_from_real(res: IpmResult) -> SdpSolution {
    let blocks = res.x.iter().map(numerics::to_complex).collect();
    let primal_residual = res.primal_residual;
    let multipliers = res.y.iter().map(|v| -v).collect();
    finish(res, blocks, multipliers, primal_residual, Field::Real)
}
