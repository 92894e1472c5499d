//! Scenario computations: closed forms, scalar optimizations and tester SDPs.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;
use serde_json::{json, Value};
use thiserror::Error;

use crate::choi::{choi_pair, BoxAssignment, ChoiError};
use crate::numerics::{self, CMat, C64};
use crate::sdp::comb::{self, CombResult};
use crate::sdp::dual::{self, CertificateReport, DualCertificate};
use crate::sdp::parallel::solve_parallel;
use crate::sdp::{self, IpmOptions, SdpError, SdpSolution};
use crate::su2rep::RepError;
use crate::tester::{TesterChain, TesterError};

pub mod catalog;
pub mod closed;
pub mod tables;

pub use catalog::{Circuit, Class, Pattern};

/// Closed form and SDP must agree to this.
pub const CONSISTENCY_TOL: f64 = 1e-6;
/// Certificate bound and primal optimum must agree to this.
pub const CERTIFICATE_AGREEMENT: f64 = 1e-7;
/// asp(witness) vs reported optimum.
pub const WITNESS_TOL: f64 = 1e-6;
/// Eigenvalue families vs direct diagonalization.
pub const EIGEN_TOL: f64 = 1e-9;

const TARGET_LAST_CERT: &str = include_str!("../../../../data/certificates/general11-target-last.json");
const TARGET_MIDDLE_CERT: &str = include_str!("../../../../data/certificates/general11-target-middle.json");

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("invalid scenario: {0}")]
    Scenario(String),
    #[error("consistency check failed: {0}")]
    Consistency(String),
    #[error("classification failed: {0}")]
    Classification(String),
    #[error(transparent)]
    Sdp(#[from] SdpError),
    #[error(transparent)]
    Choi(#[from] ChoiError),
    #[error(transparent)]
    Tester(#[from] TesterError),
    #[error(transparent)]
    Numerics(#[from] numerics::NumericsError),
    #[error(transparent)]
    Rep(#[from] RepError),
}

pub type Result<T> = std::result::Result<T, TaskError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Ordering {
    TargetFirst,
    TargetMiddle,
    TargetLast,
}

impl Ordering {
    pub const ALL: [Ordering; 3] = [Ordering::TargetFirst, Ordering::TargetMiddle, Ordering::TargetLast];

    pub fn name(self) -> &'static str {
        match self {
            Ordering::TargetFirst => "target-first",
            Ordering::TargetMiddle => "target-middle",
            Ordering::TargetLast => "target-last",
        }
    }

    pub fn labels(self) -> &'static str {
        match self {
            Ordering::TargetFirst => "T R1 R2",
            Ordering::TargetMiddle => "R1 T R2",
            Ordering::TargetLast => "R1 R2 T",
        }
    }

    pub fn assignment(self) -> BoxAssignment {
        BoxAssignment::parse(self.labels()).expect("fixed labels parse")
    }

    /// Shipped exact certificate, if there is one for this ordering.
    pub fn shipped_certificate(self) -> Option<&'static str> {
        match self {
            Ordering::TargetFirst => None,
            Ordering::TargetMiddle => Some(TARGET_MIDDLE_CERT),
            Ordering::TargetLast => Some(TARGET_LAST_CERT),
        }
    }
}

impl FromStr for Ordering {
    type Err = TaskError;

    fn from_str(s: &str) -> Result<Self> {
        Ordering::ALL
            .into_iter()
            .find(|o| o.name() == s)
            .ok_or_else(|| TaskError::Scenario(format!("unknown ordering {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Scenario {
    Parallel11,
    Restricted11,
    General11(Ordering),
    KnownU1NoSample,
    /// One sample of U1, none of U2.
    Samples10,
    KnownU1OneSample,
    Task21(Circuit),
    KnownBoth,
}

impl Scenario {
    /// Every named scenario: the (1,1) and known-box cases, then Table-I circuits, then the twelve
    /// fully ordered arrangements.
    pub fn all() -> Vec<Scenario> {
        let mut v = vec![Scenario::Parallel11, Scenario::Restricted11];
        v.extend(Ordering::ALL.into_iter().map(Scenario::General11));
        v.extend([Scenario::KnownU1NoSample, Scenario::Samples10, Scenario::KnownU1OneSample, Scenario::KnownBoth]);
        v.extend(catalog::table_i().into_iter().map(Scenario::Task21));
        v.extend(catalog::fully_ordered().into_iter().map(Scenario::Task21));
        v
    }

    pub fn name(&self) -> String {
        match self {
            Scenario::Parallel11 => "parallel11".into(),
            Scenario::Restricted11 => "restricted11".into(),
            Scenario::General11(o) => format!("general11-{}", o.name()),
            Scenario::KnownU1NoSample => "known-u1-no-sample".into(),
            Scenario::Samples10 => "samples10".into(),
            Scenario::KnownU1OneSample => "known-u1-one-sample".into(),
            Scenario::Task21(c) => format!("task21-{}", c.name),
            Scenario::KnownBoth => "known-both".into(),
        }
    }

    /// Slot assignment of the Haar game, when the scenario has one.
    pub fn assignment(&self) -> Option<BoxAssignment> {
        match self {
            Scenario::Parallel11 | Scenario::Restricted11 => Some(Ordering::TargetLast.assignment()),
            Scenario::General11(o) => Some(o.assignment()),
            Scenario::Samples10 => Some(BoxAssignment::parse("R1 T").expect("fixed labels parse")),
            Scenario::Task21(c) => c.assignment().ok(),
            _ => None,
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for Scenario {
    type Err = TaskError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(o) = s.strip_prefix("general11-") {
            return Ok(Scenario::General11(o.parse()?));
        }
        if let Some(c) = s.strip_prefix("task21-") {
            return catalog::find(c)
                .map(Scenario::Task21)
                .ok_or_else(|| TaskError::Scenario(format!("unknown circuit {c:?}")));
        }
        match s {
            "parallel11" => Ok(Scenario::Parallel11),
            "restricted11" => Ok(Scenario::Restricted11),
            "general11" => Ok(Scenario::General11(Ordering::TargetLast)),
            "known-u1-no-sample" => Ok(Scenario::KnownU1NoSample),
            "samples10" => Ok(Scenario::Samples10),
            "known-u1-one-sample" => Ok(Scenario::KnownU1OneSample),
            "known-both" => Ok(Scenario::KnownBoth),
            other => Err(TaskError::Scenario(format!("unknown scenario {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    ClosedForm,
    ScalarScan,
    Sdp,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::ClosedForm => "closed-form",
            Method::ScalarScan => "scalar-scan",
            Method::Sdp => "sdp",
        }
    }
}

#[derive(Debug, Clone)]
pub enum Witness {
    Tester(TesterChain),
    Certificate(DualCertificate),
}

impl Witness {
    pub fn to_json(&self) -> Value {
        match self {
            Witness::Tester(t) => json!({"kind": "tester", "tester": t.to_json()}),
            Witness::Certificate(c) => json!({"kind": "certificate", "certificate": c.to_json()}),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioResult {
    pub scenario: String,
    pub optimal_asp: f64,
    pub method: Method,
    pub witness: Option<Witness>,
    pub diagnostics: BTreeMap<String, Value>,
}

impl ScenarioResult {
    fn new(scenario: &Scenario, optimal_asp: f64, method: Method) -> Self {
        Self { scenario: scenario.name(), optimal_asp, method, witness: None, diagnostics: BTreeMap::new() }
    }

    fn diag(&mut self, key: &str, v: impl Into<Value>) {
        self.diagnostics.insert(key.to_string(), v.into());
    }

    pub fn tester(&self) -> Option<&TesterChain> {
        match &self.witness {
            Some(Witness::Tester(t)) => Some(t),
            _ => None,
        }
    }

    /// Record {scenario, method, value, witness_path, diagnostics}.
    pub fn to_json(&self, witness_path: Option<&str>) -> Value {
        json!({
            "scenario": self.scenario,
            "method": self.method.name(),
            "value": self.optimal_asp,
            "witness_path": witness_path,
            "diagnostics": self.diagnostics,
        })
    }
}

pub fn run(scenario: &Scenario, opts: &IpmOptions) -> Result<ScenarioResult> {
    match scenario {
        Scenario::Parallel11 => optimal_parallel_11(opts),
        Scenario::Restricted11 => restricted_entanglement_11(),
        Scenario::General11(o) => general_11(*o, opts),
        Scenario::KnownU1NoSample => known_u1_no_sample(opts),
        Scenario::Samples10 => samples_10(opts),
        Scenario::KnownU1OneSample => known_u1_one_sample(opts),
        Scenario::Task21(c) => task_21(c, opts),
        Scenario::KnownBoth => known_both(DEFAULT_MC_SAMPLES, DEFAULT_SEED),
    }
}

pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_MC_SAMPLES: usize = 1_000_000;

fn check_solution(s: &SdpSolution, what: &str) -> Result<()> {
    if !s.converged() {
        return Err(SdpError::NotConverged(format!("{what}: status {:?} after {} iterations", s.status, s.iterations)).into());
    }
    Ok(())
}

fn sdp_diagnostics(r: &mut ScenarioResult, s: &SdpSolution) {
    r.diag("sdp_value", s.primal_value);
    r.diag("sdp_dual_value", s.dual_value);
    r.diag("sdp_gap", s.gap);
    r.diag("sdp_iterations", s.iterations as u64);
}

/// Validate the witness and check that it attains `value` on (m1, m2).
fn attach_tester(r: &mut ScenarioResult, tester: TesterChain, m1: &CMat, m2: &CMat) -> Result<()> {
    let report = tester.validate()?;
    let asp = tester.asp(m1, m2)?;
    r.diag("witness_chain_residual", report.max_residual());
    r.diag("witness_asp", asp);
    if !report.pass {
        return Err(TaskError::Consistency(format!("{}: witness violates the tester chain", r.scenario)));
    }
    if (asp - r.optimal_asp).abs() > WITNESS_TOL {
        return Err(TaskError::Consistency(format!("{}: witness attains {asp}, optimum {}", r.scenario, r.optimal_asp)));
    }
    r.witness = Some(Witness::Tester(tester));
    Ok(())
}

fn comb_for(assignment: &BoxAssignment, layers: &[usize], opts: &IpmOptions) -> Result<(crate::choi::ChoiPair, CombResult)> {
    let pair = choi_pair(assignment)?;
    let res = comb::solve_comb(layers, &pair.blocks, opts)?;
    check_solution(&res.solution, "tester SDP")?;
    Ok((pair, res))
}

/// Parallel (1,1): diamond-norm scan, cross-checked by the multiplicity-block SDP.
pub fn optimal_parallel_11(opts: &IpmOptions) -> Result<ScenarioResult> {
    let scan = closed::diamond_scan_11(closed::DIAMOND_GRID)?;
    let (pair, res) = comb_for(&Ordering::TargetLast.assignment(), &[3], opts)?;
    if (res.value - scan.optimum).abs() > CONSISTENCY_TOL {
        return Err(TaskError::Consistency(format!("scan {} vs block SDP {}", scan.optimum, res.value)));
    }
    let mut r = ScenarioResult::new(&Scenario::Parallel11, scan.optimum, Method::ClosedForm);
    r.diag("argmax_t", scan.p1.argmax);
    r.diag("branch", scan.branch as u64);
    r.diag("p0_branch_asp", scan.p0_asp);
    r.diag("delta_pp", scan.delta_pp);
    r.diag("grid_points", scan.t.len() as u64);
    sdp_diagnostics(&mut r, &res.solution);
    attach_tester(&mut r, res.tester(&[3])?, &pair.full[0], &pair.full[1])?;
    Ok(r)
}

/// Parallel (1,1) solved on the full 64-dim space without symmetry reduction.
pub fn full_space_parallel_11(opts: &IpmOptions) -> Result<SdpSolution> {
    let pair = choi_pair(&Ordering::TargetLast.assignment())?;
    let s = solve_parallel(&pair.full[0], &pair.full[1], 8, 8, opts)?;
    check_solution(&s, "full-space SDP")?;
    Ok(s)
}

pub fn restricted_entanglement_11() -> Result<ScenarioResult> {
    let m = closed::restricted_entanglement();
    let blocks = closed::DiamondBlocks::new()?;
    let block_value = 0.5 + 0.25 * closed::restricted_block_norm(&blocks, m.argmax)?;
    if (block_value - m.value).abs() > CONSISTENCY_TOL {
        return Err(TaskError::Consistency(format!("scalar {} vs block evaluation {block_value}", m.value)));
    }
    let mut r = ScenarioResult::new(&Scenario::Restricted11, m.value, Method::ScalarScan);
    r.diag("argmax_t", m.argmax);
    r.diag("local_maxima", m.local_maxima as u64);
    r.diag("block_value", block_value);
    r.diag("value_at_zero", 0.5 + 0.25 * closed::restricted_objective(0.0));
    Ok(r)
}

fn certificate_for(ordering: Ordering, m: &[crate::su2rep::IsoTypicOp; 2], opts: &IpmOptions) -> Result<(DualCertificate, CertificateReport, bool)> {
    match ordering.shipped_certificate() {
        Some(text) => {
            let v: Value = serde_json::from_str(text).map_err(|e| TaskError::Scenario(format!("shipped certificate: {e}")))?;
            let cert = DualCertificate::from_json(&v)?;
            let rep = dual::verify_certificate(&cert, m)?;
            Ok((cert, rep, true))
        }
        None => {
            let s = sdp::solve(&dual::build_dual(m)?, opts)?;
            check_solution(&s, "dual SDP")?;
            let cert = DualCertificate::from_vector(ordering.name(), &s.multipliers)?;
            let rep = dual::verify_certificate(&cert, m)?;
            Ok((cert, rep, false))
        }
    }
}

/// General (sequential) (1,1): comb SDP plus a dual certificate for the same operators.
pub fn general_11(ordering: Ordering, opts: &IpmOptions) -> Result<ScenarioResult> {
    let (pair, res) = comb_for(&ordering.assignment(), &[1, 1, 1], opts)?;
    let (cert, rep, shipped) = certificate_for(ordering, &pair.blocks, opts)?;
    if !rep.feasible {
        return Err(TaskError::Consistency(format!(
            "{} certificate infeasible (max violation {:e})",
            ordering.name(),
            rep.max_violation
        )));
    }
    if (rep.lambda - res.value).abs() > CERTIFICATE_AGREEMENT {
        return Err(TaskError::Consistency(format!("certificate bound {} vs SDP {}", rep.lambda, res.value)));
    }
    let scenario = Scenario::General11(ordering);
    let mut r = ScenarioResult::new(&scenario, res.value, Method::Sdp);
    sdp_diagnostics(&mut r, &res.solution);
    r.diag("certificate_source", if shipped { "shipped" } else { "dual-sdp" });
    r.diag("certificate", cert.to_json());
    r.diag("certificate_report", rep.to_json());
    let tester = res.tester(&[1, 1, 1])?;
    r.diag("parallelizable_prefix", tester.parallelizable_prefix()?);
    attach_tester(&mut r, tester, &pair.full[0], &pair.full[1])?;
    Ok(r)
}

fn max_entangled_choi() -> CMat {
    let mut m = CMat::zeros(4, 4);
    for (i, j) in [(0, 0), (0, 3), (3, 0), (3, 3)] {
        m[(i, j)] = C64::new(1.0, 0.0);
    }
    m
}

fn parallel_tester(n_slots: usize, s: &SdpSolution) -> TesterChain {
    TesterChain { layers: vec![n_slots], outcomes: vec![s.blocks[0].clone(), s.blocks[1].clone()], chain: vec![s.blocks[2].clone()] }
}

/// Optimum of 1/4 (a2 + 3 b2 + 4 a1) over a1 + a2 = b1 + b2 = 1/2, all nonnegative. The objective
/// is linear, so the maximum sits on a vertex of the product of two segments.
pub fn known_u1_no_sample_rational() -> Ratio<i64> {
    let half = Ratio::new(1, 2);
    let zero = Ratio::from_integer(0);
    let mut best = Ratio::from_integer(-1);
    for a1 in [zero, half] {
        for b2 in [zero, half] {
            let a2 = half - a1;
            let v = Ratio::new(1, 4) * (a2 + Ratio::from_integer(3) * b2 + Ratio::from_integer(4) * a1);
            if v > best {
                best = v;
            }
        }
    }
    best
}

/// Known U1, no sample of U2: identity channel vs the completely depolarizing channel.
pub fn known_u1_no_sample(opts: &IpmOptions) -> Result<ScenarioResult> {
    let exact = known_u1_no_sample_rational();
    let value = *exact.numer() as f64 / *exact.denom() as f64;
    let e1 = max_entangled_choi();
    let e2 = CMat::identity(4, 4).unscale(2.0);
    let s = solve_parallel(&e1, &e2, 2, 2, opts)?;
    check_solution(&s, "known-U1 SDP")?;
    let swapped = solve_parallel(&e2, &e1, 2, 2, opts)?;
    check_solution(&swapped, "known-U1 SDP (swapped)")?;
    if (s.primal_value - value).abs() > 1e-8 || (swapped.primal_value - value).abs() > 1e-8 {
        return Err(TaskError::Consistency(format!("rational {exact} vs SDP {} / {}", s.primal_value, swapped.primal_value)));
    }
    let mut r = ScenarioResult::new(&Scenario::KnownU1NoSample, value, Method::ClosedForm);
    r.diag("exact", exact.to_string());
    r.diag("swapped_sdp_value", swapped.primal_value);
    sdp_diagnostics(&mut r, &s);
    attach_tester(&mut r, parallel_tester(1, &s), &e1, &e2)?;
    Ok(r)
}

/// Known U1 with one sample of U2 under parallel schemes.
pub fn known_u1_one_sample(opts: &IpmOptions) -> Result<ScenarioResult> {
    let m = closed::one_sample_max();
    let check = closed::one_sample_eigen_check(50)?;
    if check.max_eigenvalue_deviation > EIGEN_TOL || check.max_norm_deviation > EIGEN_TOL {
        return Err(TaskError::Consistency(format!(
            "eigenvalue families deviate from direct diagonalization by {:e}",
            check.max_eigenvalue_deviation
        )));
    }
    let (e1, e2) = closed::one_sample_operators()?;
    let s = solve_parallel(&e1, &e2, 4, 4, opts)?;
    check_solution(&s, "one-sample SDP")?;
    if (s.primal_value - m.value).abs() > CONSISTENCY_TOL {
        return Err(TaskError::Consistency(format!("scan {} vs SDP {}", m.value, s.primal_value)));
    }
    let mut r = ScenarioResult::new(&Scenario::KnownU1OneSample, m.value, Method::ScalarScan);
    r.diag("argmax_t", m.argmax);
    r.diag("local_maxima", m.local_maxima as u64);
    r.diag("eigen_check_points", check.points as u64);
    r.diag("eigen_check_max_deviation", check.max_eigenvalue_deviation);
    sdp_diagnostics(&mut r, &s);
    attach_tester(&mut r, parallel_tester(2, &s), &e1, &e2)?;
    Ok(r)
}

/// One sample of U1 and none of U2, two slots in parallel.
pub fn samples_10(opts: &IpmOptions) -> Result<ScenarioResult> {
    let scenario = Scenario::Samples10;
    let a = scenario.assignment().expect("game scenario");
    let (pair, res) = comb_for(&a, &[2], opts)?;
    let mut r = ScenarioResult::new(&scenario, res.value, Method::Sdp);
    sdp_diagnostics(&mut r, &res.solution);
    attach_tester(&mut r, res.tester(&[2])?, &pair.full[0], &pair.full[1])?;
    Ok(r)
}

/// (2,1) determination for one circuit; the value must fall in one of the two classes.
pub fn task_21(circuit: &Circuit, opts: &IpmOptions) -> Result<ScenarioResult> {
    let layers = circuit.layer_sizes();
    let (pair, res) = comb_for(&circuit.assignment()?, &layers, opts)?;
    let class = Class::classify(res.value)
        .ok_or_else(|| TaskError::Classification(format!("{}: value {} matches neither class", circuit.name, res.value)))?;
    let mut r = ScenarioResult::new(&Scenario::Task21(circuit.clone()), res.value, Method::Sdp);
    r.diag("circuit", circuit.describe());
    r.diag("pattern", circuit.pattern().map(|p| p.name()).unwrap_or("?"));
    r.diag("class", class.number() as u64);
    sdp_diagnostics(&mut r, &res.solution);
    attach_tester(&mut r, res.tester(&layers)?, &pair.full[0], &pair.full[1])?;
    Ok(r)
}

/// Both unitaries known: analytic Haar average with a Monte-Carlo cross-check.
pub fn known_both(samples: usize, seed: u64) -> Result<ScenarioResult> {
    let value = closed::known_both_haar_average();
    let mc = closed::known_both_monte_carlo(samples, seed)?;
    let mut r = ScenarioResult::new(&Scenario::KnownBoth, value, Method::ClosedForm);
    r.diag("monte_carlo_mean", mc.mean);
    r.diag("monte_carlo_stderr", mc.stderr);
    r.diag("monte_carlo_samples", mc.samples as u64);
    r.diag("seed", seed);
    Ok(r)
}
