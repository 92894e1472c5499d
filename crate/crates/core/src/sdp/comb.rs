//! Tester (comb) SDPs in the isotypic block form.
//!
//! Every variable is an Input-scaled [`IsoTypicOp`] in sequential bases; each (J, L) block becomes
//! one real PSD block of the SDP. Linear constraints are compiled by evaluating the block maps on
//! unit matrices.

use std::collections::BTreeMap;

use super::ipm::IpmOptions;
use super::problem::{self, Field, SdpProblem, SdpSolution};
use super::{Result, SdpError};
use crate::numerics::{CMat, RMat, C64};
use crate::su2rep::{spin_label, CouplingOrder, IsoTypicOp, Scaling};
use crate::tester::TesterChain;

type IsoMap<'a> = &'a dyn Fn(&IsoTypicOp) -> crate::su2rep::Result<IsoTypicOp>;

#[derive(Debug, Clone)]
pub struct IsoVar {
    pub name: String,
    pub out_order: CouplingOrder,
    pub in_order: CouplingOrder,
    /// (spin pair, SDP block index, block dimension)
    pub slots: Vec<((u32, u32), usize, usize)>,
}

#[derive(Debug, Clone)]
pub struct IsoBuilder {
    pub problem: SdpProblem,
    pub vars: Vec<IsoVar>,
}

impl IsoBuilder {
    pub fn new(name: impl Into<String>) -> Self {
        Self { problem: SdpProblem::new(name, Field::Real), vars: vec![] }
    }

    pub fn add_var(&mut self, name: &str, out_order: CouplingOrder, in_order: CouplingOrder) -> Result<usize> {
        let z = IsoTypicOp::zeros(out_order, in_order, Scaling::Input)?;
        let mut slots = Vec::new();
        for (&(j, l), m) in &z.blocks {
            let n = m.nrows();
            if n == 0 {
                continue;
            }
            let b = self.problem.add_block(format!("{name}[{},{}]", spin_label(j), spin_label(l)), n);
            slots.push(((j, l), b, n));
        }
        self.vars.push(IsoVar { name: name.to_string(), out_order, in_order, slots });
        Ok(self.vars.len() - 1)
    }

    /// Adds weight * sum_JL tr(C_JL X_JL) to the objective; `c` is Output-scaled.
    pub fn add_objective(&mut self, var: usize, c: &IsoTypicOp, weight: f64) -> Result<()> {
        let v = &self.vars[var];
        if c.out_order != v.out_order || c.in_order != v.in_order || c.scaling != Scaling::Output {
            return Err(SdpError::Structure(format!("objective operator does not match {}", v.name)));
        }
        for &(key, b, _) in &v.slots {
            let blk = &c.blocks[&key];
            self.problem.objective[b] += blk.map(|z| C64::new(z.re, 0.0)).scale(weight);
        }
        Ok(())
    }

    fn unit(&self, var: usize, key: (u32, u32), r: usize, s: usize) -> Result<IsoTypicOp> {
        let v = &self.vars[var];
        let mut x = IsoTypicOp::zeros(v.out_order, v.in_order, Scaling::Input)?;
        let blk = x.blocks.get_mut(&key).expect("slot key");
        blk[(r, s)] = C64::new(1.0, 0.0);
        blk[(s, r)] = C64::new(1.0, 0.0);
        Ok(x)
    }

    /// sum_t f_t(X_t) = rhs, entrywise on the upper triangle of every block of `rhs`.
    pub fn add_equality(&mut self, label: &str, terms: &[(usize, IsoMap<'_>)], rhs: &IsoTypicOp) -> Result<()> {
        type Row = BTreeMap<usize, RMat>;
        let mut rows: BTreeMap<((u32, u32), usize, usize), Row> = BTreeMap::new();
        for (key, m) in &rhs.blocks {
            for p in 0..m.nrows() {
                for q in p..m.nrows() {
                    rows.insert((*key, p, q), Row::new());
                }
            }
        }
        for &(var, f) in terms {
            let slots = self.vars[var].slots.clone();
            for (key, b, n) in slots {
                for r in 0..n {
                    for s in r..n {
                        let out = f(&self.unit(var, key, r, s)?)?;
                        if out.scaling != rhs.scaling || out.out_order != rhs.out_order || out.in_order != rhs.in_order {
                            return Err(SdpError::Structure(format!("{label}: term maps to a different space")));
                        }
                        for (okey, m) in &out.blocks {
                            for p in 0..m.nrows() {
                                for q in p..m.nrows() {
                                    let c = m[(p, q)].re;
                                    if c.abs() < 1e-14 {
                                        continue;
                                    }
                                    let row = rows.get_mut(&(*okey, p, q)).expect("rhs covers output");
                                    let a = row.entry(b).or_insert_with(|| RMat::zeros(n, n));
                                    if r == s {
                                        a[(r, r)] += c;
                                    } else {
                                        a[(r, s)] += 0.5 * c;
                                        a[(s, r)] += 0.5 * c;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        for (((j, l), p, q), row) in rows {
            let value = rhs.blocks[&(j, l)][(p, q)].re;
            let terms = row.into_iter().map(|(b, a)| (b, a.map(|x| C64::new(x, 0.0)))).collect::<Vec<_>>();
            if terms.is_empty() && value.abs() > 1e-12 {
                return Err(SdpError::Infeasible(format!("{label}: constant row with nonzero right-hand side")));
            }
            if terms.is_empty() {
                continue;
            }
            self.problem.add_constraint(format!("{label}[{},{}]({p},{q})", spin_label(j), spin_label(l)), terms, value);
        }
        Ok(())
    }

    pub fn value(&self, var: usize, sol: &SdpSolution) -> Result<IsoTypicOp> {
        let v = &self.vars[var];
        let mut x = IsoTypicOp::zeros(v.out_order, v.in_order, Scaling::Input)?;
        for &(key, b, _) in &v.slots {
            x.blocks.insert(key, sol.blocks[b].map(|z| C64::new(z.re, 0.0)));
        }
        Ok(x)
    }
}

fn seq(n: usize) -> CouplingOrder {
    CouplingOrder::Sequential(n)
}

fn repeat(x: &IsoTypicOp, times: usize, f: fn(&IsoTypicOp) -> crate::su2rep::Result<IsoTypicOp>) -> crate::su2rep::Result<IsoTypicOp> {
    let mut y = x.clone();
    for _ in 0..times {
        y = f(&y)?;
    }
    Ok(y)
}

/// Tester SDP for a layer pattern: outcome operators Pi_1, Pi_2 and chain Y^(1..r).
#[derive(Debug, Clone)]
pub struct CombSdp {
    pub layers: Vec<usize>,
    pub builder: IsoBuilder,
    pub outcomes: [usize; 2],
    pub chain: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct CombResult {
    pub value: f64,
    pub solution: SdpSolution,
    pub outcomes: [IsoTypicOp; 2],
    pub chain: Vec<IsoTypicOp>,
}

impl CombResult {
    /// Full-space tester (outcome operators on K_1..K_n H_1..H_n).
    pub fn tester(&self, layers: &[usize]) -> Result<TesterChain> {
        Ok(TesterChain {
            layers: layers.to_vec(),
            outcomes: vec![self.outcomes[0].to_full()?, self.outcomes[1].to_full()?],
            chain: self.chain.iter().map(|y| y.to_full()).collect::<std::result::Result<_, _>>()?,
        })
    }
}

/// maximize 1/2 sum_i tr(M_i Pi_i) over testers with the given layers; `choi` is Output-scaled in
/// sequential bases with slots numbered layer by layer.
pub fn build_comb(layers: &[usize], choi: &[IsoTypicOp; 2]) -> Result<CombSdp> {
    if layers.is_empty() || layers.contains(&0) {
        return Err(SdpError::Structure("layers must be non-empty".into()));
    }
    let n: usize = layers.iter().sum();
    let prefix = |j: usize| layers[..j].iter().sum::<usize>();
    let name = format!("comb{:?}", layers);
    let mut b = IsoBuilder::new(name);
    let p1 = b.add_var("Pi1", seq(n), seq(n))?;
    let p2 = b.add_var("Pi2", seq(n), seq(n))?;
    let mut chain = Vec::new();
    for j in 0..layers.len() {
        chain.push(b.add_var(&format!("Y{}", j + 1), seq(prefix(j)), seq(prefix(j + 1)))?);
    }
    b.add_objective(p1, &choi[0], 0.5)?;
    b.add_objective(p2, &choi[1], 0.5)?;

    let r = layers.len();
    let id = |x: &IsoTypicOp| Ok(x.clone());
    let s_last = layers[r - 1];
    let top = move |x: &IsoTypicOp| Ok(repeat(x, s_last, IsoTypicOp::extend_out_identity)?.scale(-1.0));
    let zero_n = IsoTypicOp::zeros(seq(n), seq(n), Scaling::Input)?;
    b.add_equality("outcome-sum", &[(p1, &id), (p2, &id), (chain[r - 1], &top)], &zero_n)?;
    for j in 1..r {
        let (sj, sprev) = (layers[j], layers[j - 1]);
        let down = move |x: &IsoTypicOp| repeat(x, sj, IsoTypicOp::trace_in_last);
        let up = move |x: &IsoTypicOp| Ok(repeat(x, sprev, IsoTypicOp::extend_out_identity)?.scale(-1.0));
        let zero = IsoTypicOp::zeros(seq(prefix(j)), seq(prefix(j)), Scaling::Input)?;
        b.add_equality(&format!("chain-{}", j + 1), &[(chain[j], &down), (chain[j - 1], &up)], &zero)?;
    }
    let s0 = layers[0];
    let norm = move |x: &IsoTypicOp| repeat(x, s0, IsoTypicOp::trace_in_last);
    let one = IsoTypicOp::identity(seq(0), seq(0), Scaling::Input)?;
    b.add_equality("normalization", &[(chain[0], &norm)], &one)?;
    Ok(CombSdp { layers: layers.to_vec(), builder: b, outcomes: [p1, p2], chain })
}

impl CombSdp {
    pub fn solve(&self, opts: &IpmOptions) -> Result<CombResult> {
        let solution = problem::solve(&self.builder.problem, opts)?;
        let outcomes = [
            self.builder.value(self.outcomes[0], &solution)?,
            self.builder.value(self.outcomes[1], &solution)?,
        ];
        let chain = self.chain.iter().map(|&v| self.builder.value(v, &solution)).collect::<Result<Vec<_>>>()?;
        Ok(CombResult { value: solution.primal_value, solution, outcomes, chain })
    }
}

pub fn solve_comb(layers: &[usize], choi: &[IsoTypicOp; 2], opts: &IpmOptions) -> Result<CombResult> {
    build_comb(layers, choi)?.solve(opts)
}

/// Trivial single-box check: two known states rho_1, rho_2 with equal priors (Helstrom bound).
pub fn helstrom(rho1: &CMat, rho2: &CMat, opts: &IpmOptions) -> Result<SdpSolution> {
    let n = rho1.nrows();
    let mut p = SdpProblem::new("helstrom", Field::Complex);
    let a = p.add_block("E1", n);
    let b = p.add_block("E2", n);
    p.objective[a] = rho1.scale(0.5);
    p.objective[b] = rho2.scale(0.5);
    let id = |x: &CMat| x.clone();
    p.add_matrix_equality("povm", &[(a, &id), (b, &id)], &CMat::identity(n, n));
    problem::solve(&p, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::choi::{choi_pair, BoxAssignment};

    #[test]
    fn helstrom_orthogonal_and_identical() {
        let opts = IpmOptions::default();
        let r0 = CMat::from_diagonal(&nalgebra::DVector::from_vec(vec![C64::new(1.0, 0.0), C64::new(0.0, 0.0)]));
        let r1 = CMat::from_diagonal(&nalgebra::DVector::from_vec(vec![C64::new(0.0, 0.0), C64::new(1.0, 0.0)]));
        assert!((helstrom(&r0, &r1, &opts).unwrap().primal_value - 1.0).abs() < 1e-7);
        assert!((helstrom(&r0, &r0, &opts).unwrap().primal_value - 0.5).abs() < 1e-7);
    }

    #[test]
    fn parallel_one_one_is_seven_eighths() {
        let a = BoxAssignment::parse("R1 T R2").unwrap();
        let pair = choi_pair(&a).unwrap();
        let res = solve_comb(&[3], &pair.blocks, &IpmOptions::default()).unwrap();
        assert!((res.value - 0.875).abs() < 1e-7, "{}", res.value);
        let t = res.tester(&[3]).unwrap();
        assert!(t.validate().unwrap().pass);
        let asp = t.asp(&pair.full[0], &pair.full[1]).unwrap();
        assert!((asp - 0.875).abs() < 1e-7);
    }
}
