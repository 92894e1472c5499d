//! Dual of the three-slot sequential tester SDP in multiplicity blocks, and certificate checks.
//!
//! Variables: lambda, Omega_JL for J, L in {1/2, 3/2} on the (12)3 multiplicity spaces (Output
//! scaling), and four scalars Omega1_JL for the two-slot level, J, L in {0, 1}.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;
use serde_json::{json, Value};

use super::problem::{Field, SdpProblem};
use super::{Result, SdpError};
use crate::numerics::{self, CMat, RMat, C64};
use crate::su2rep::{parse_spin, spin_label, CouplingOrder, IsoTypicOp};

/// Eigenvalue slack for the block inequalities.
pub const CERT_PSD_TOL: f64 = 1e-9;
/// Slack for the scalar inequalities.
pub const CERT_SCALAR_TOL: f64 = 1e-12;

const HALF: u32 = 1;
const THREE_HALVES: u32 = 3;
/// (J, L) keys in storage order with their block dimensions.
const OMEGA_KEYS: [((u32, u32), usize); 4] = [
    ((HALF, HALF), 4),
    ((HALF, THREE_HALVES), 2),
    ((THREE_HALVES, HALF), 2),
    ((THREE_HALVES, THREE_HALVES), 1),
];
pub const N_DUAL_VARS: usize = 1 + 10 + 3 + 3 + 1 + 4;

/// p/q * sqrt(radicand), radicand square-free.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExactValue {
    pub coef: Ratio<i64>,
    pub radicand: u32,
}

impl ExactValue {
    pub fn rational(coef: Ratio<i64>) -> Self {
        Self { coef, radicand: 1 }
    }

    pub fn to_f64(self) -> f64 {
        (*self.coef.numer() as f64 / *self.coef.denom() as f64) * (self.radicand as f64).sqrt()
    }

    pub fn as_rational(self) -> Option<Ratio<i64>> {
        (self.radicand == 1 || *self.coef.numer() == 0).then_some(self.coef)
    }
}

impl fmt::Display for ExactValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.radicand == 1 || *self.coef.numer() == 0 {
            write!(f, "{}", self.coef)
        } else {
            write!(f, "{}*sqrt({})", self.coef, self.radicand)
        }
    }
}

fn square_free(mut s: u32, coef: Ratio<i64>) -> (u32, Ratio<i64>) {
    let mut c = coef;
    let mut k = 2;
    while k * k <= s {
        while s % (k * k) == 0 {
            s /= k * k;
            c *= Ratio::from_integer(k as i64);
        }
        k += 1;
    }
    (s, c)
}

impl FromStr for ExactValue {
    type Err = SdpError;

    /// Accepts `p`, `p/q`, `p/q*sqrt(s)`, `sqrt(s)`, `sqrt(s)/q`, each optionally negated.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || SdpError::Structure(format!("cannot parse exact value {s:?}"));
        let t: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        let (neg, body) = match t.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, t.as_str()),
        };
        let parse_ratio = |x: &str| -> Result<Ratio<i64>> {
            match x.split_once('/') {
                Some((p, q)) => {
                    let q: i64 = q.parse().map_err(|_| bad())?;
                    if q == 0 {
                        return Err(bad());
                    }
                    Ok(Ratio::new(p.parse().map_err(|_| bad())?, q))
                }
                None => Ok(Ratio::from_integer(x.parse().map_err(|_| bad())?)),
            }
        };
        let parse_sqrt = |x: &str| -> Result<u32> {
            x.strip_prefix("sqrt(")
                .and_then(|r| r.strip_suffix(')'))
                .and_then(|r| r.parse().ok())
                .ok_or_else(bad)
        };
        let (coef, radicand) = if let Some((c, r)) = body.split_once('*') {
            (parse_ratio(c)?, parse_sqrt(r)?)
        } else if body.starts_with("sqrt(") {
            let close = body.find(')').ok_or_else(bad)?;
            let rad = parse_sqrt(&body[..=close])?;
            let rest = &body[close + 1..];
            let coef = match rest.strip_prefix('/') {
                Some(q) => Ratio::new(1, q.parse().map_err(|_| bad())?),
                None if rest.is_empty() => Ratio::from_integer(1),
                None => return Err(bad()),
            };
            (coef, rad)
        } else {
            (parse_ratio(body)?, 1)
        };
        if radicand == 0 {
            return Ok(Self::rational(Ratio::from_integer(0)));
        }
        let (radicand, coef) = square_free(radicand, coef);
        Ok(Self { coef: if neg { -coef } else { coef }, radicand })
    }
}

/// Certificate entry: exact when read from a data file, floating point when produced by a solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scalar {
    Exact(ExactValue),
    Float(f64),
}

impl Scalar {
    pub fn value(self) -> f64 {
        match self {
            Scalar::Exact(e) => e.to_f64(),
            Scalar::Float(x) => x,
        }
    }

    fn rational(self) -> Option<Ratio<i64>> {
        match self {
            Scalar::Exact(e) => e.as_rational(),
            Scalar::Float(_) => None,
        }
    }

    fn to_json(self) -> Value {
        match self {
            Scalar::Exact(e) => Value::String(e.to_string()),
            Scalar::Float(x) => json!(x),
        }
    }

    fn from_json(v: &Value) -> Result<Self> {
        match v {
            Value::String(s) => Ok(Scalar::Exact(s.parse()?)),
            Value::Number(n) => n
                .as_f64()
                .map(Scalar::Float)
                .ok_or_else(|| SdpError::Structure("non-finite certificate entry".into())),
            _ => Err(SdpError::Structure(format!("certificate entry {v} is neither string nor number"))),
        }
    }
}

/// Feasible point (lambda, Omega, Omega1) of the multiplicity-block dual.
#[derive(Debug, Clone, PartialEq)]
pub struct DualCertificate {
    pub ordering: String,
    pub lambda: Scalar,
    pub omega: BTreeMap<(u32, u32), Vec<Vec<Scalar>>>,
    /// Omega1_00, Omega1_01, Omega1_10, Omega1_11
    pub omega1: [Scalar; 4],
}

#[derive(Debug, Clone, PartialEq)]
pub struct CertificateReport {
    pub feasible: bool,
    pub max_violation: f64,
    /// Minimum eigenvalue (blocks) or slack (scalars) per inequality.
    pub checks: Vec<(String, f64)>,
    pub lambda: f64,
    pub exact_lambda: Option<Ratio<i64>>,
    /// Exact slack of each scalar inequality whose entries are all rational.
    pub exact_slacks: Vec<(String, Ratio<i64>)>,
}

impl CertificateReport {
    pub fn to_json(&self) -> Value {
        json!({
            "feasible": self.feasible,
            "max_violation": self.max_violation,
            "lambda": self.lambda,
            "exact_lambda": self.exact_lambda.map(|r| r.to_string()),
            "checks": self.checks.iter().map(|(n, v)| json!({"name": n, "value": v})).collect::<Vec<_>>(),
            "exact_slacks": self.exact_slacks.iter().map(|(n, r)| json!({"name": n, "value": r.to_string()})).collect::<Vec<_>>(),
        })
    }
}

fn hat_order() -> CouplingOrder {
    CouplingOrder::Sequential(3)
}

fn check_choi(m: &[IsoTypicOp; 2]) -> Result<()> {
    for op in m {
        if op.out_order != hat_order() || op.in_order != hat_order() {
            return Err(SdpError::Structure("dual blocks need three-slot Choi operators in the (12)3 basis".into()));
        }
    }
    Ok(())
}

impl DualCertificate {
    fn omega_matrix(&self, key: (u32, u32)) -> RMat {
        let rows = &self.omega[&key];
        RMat::from_fn(rows.len(), rows.len(), |i, j| rows[i][j].value())
    }

    /// Flat variable vector: lambda, upper triangles of the Omega blocks (row-major), Omega1.
    pub fn to_vector(&self) -> Vec<f64> {
        let mut v = vec![self.lambda.value()];
        for (key, n) in OMEGA_KEYS {
            let m = self.omega_matrix(key);
            for i in 0..n {
                for j in i..n {
                    v.push(m[(i, j)]);
                }
            }
        }
        v.extend(self.omega1.iter().map(|s| s.value()));
        v
    }

    pub fn from_vector(ordering: &str, v: &[f64]) -> Result<Self> {
        if v.len() != N_DUAL_VARS {
            return Err(SdpError::Structure(format!("{} dual variables, expected {N_DUAL_VARS}", v.len())));
        }
        let mut idx = 1;
        let mut omega = BTreeMap::new();
        for (key, n) in OMEGA_KEYS {
            let mut m = vec![vec![Scalar::Float(0.0); n]; n];
            for i in 0..n {
                for j in i..n {
                    m[i][j] = Scalar::Float(v[idx]);
                    m[j][i] = Scalar::Float(v[idx]);
                    idx += 1;
                }
            }
            omega.insert(key, m);
        }
        let omega1 = std::array::from_fn(|k| Scalar::Float(v[idx + k]));
        Ok(Self { ordering: ordering.to_string(), lambda: Scalar::Float(v[0]), omega, omega1 })
    }

    pub fn to_json(&self) -> Value {
        json!({
            "scenario": "general11",
            "ordering": self.ordering,
            "basis": hat_order().name(),
            "lambda": self.lambda.to_json(),
            "omega": self.omega.iter().map(|(&(j, l), m)| json!({
                "j_out": spin_label(j),
                "j_in": spin_label(l),
                "matrix": m.iter().map(|r| r.iter().map(|s| s.to_json()).collect::<Vec<_>>()).collect::<Vec<_>>(),
            })).collect::<Vec<_>>(),
            "omega1": {
                "00": self.omega1[0].to_json(),
                "01": self.omega1[1].to_json(),
                "10": self.omega1[2].to_json(),
                "11": self.omega1[3].to_json(),
            },
        })
    }

    pub fn from_json(v: &Value) -> Result<Self> {
        let bad = |what: &str| SdpError::Structure(format!("malformed certificate: {what}"));
        let ordering = v["ordering"].as_str().ok_or_else(|| bad("ordering"))?.to_string();
        let lambda = Scalar::from_json(&v["lambda"])?;
        let mut omega = BTreeMap::new();
        for blk in v["omega"].as_array().ok_or_else(|| bad("omega"))? {
            let j = blk["j_out"].as_str().and_then(parse_spin).ok_or_else(|| bad("j_out"))?;
            let l = blk["j_in"].as_str().and_then(parse_spin).ok_or_else(|| bad("j_in"))?;
            let n = OMEGA_KEYS
                .iter()
                .find(|(k, _)| *k == (j, l))
                .map(|(_, n)| *n)
                .ok_or_else(|| bad("spin pair"))?;
            let rows = blk["matrix"].as_array().ok_or_else(|| bad("matrix"))?;
            if rows.len() != n {
                return Err(bad("block dimension"));
            }
            let mut m = Vec::with_capacity(n);
            for r in rows {
                let r = r.as_array().ok_or_else(|| bad("matrix row"))?;
                if r.len() != n {
                    return Err(bad("block dimension"));
                }
                m.push(r.iter().map(Scalar::from_json).collect::<Result<Vec<_>>>()?);
            }
            for i in 0..n {
                for k in 0..i {
                    if (m[i][k].value() - m[k][i].value()).abs() > 1e-14 {
                        return Err(bad("block not symmetric"));
                    }
                }
            }
            omega.insert((j, l), m);
        }
        if omega.len() != OMEGA_KEYS.len() {
            return Err(bad("missing omega blocks"));
        }
        let o1 = &v["omega1"];
        let omega1 = [
            Scalar::from_json(&o1["00"])?,
            Scalar::from_json(&o1["01"])?,
            Scalar::from_json(&o1["10"])?,
            Scalar::from_json(&o1["11"])?,
        ];
        Ok(Self { ordering, lambda, omega, omega1 })
    }
}

/// Left-hand sides of every inequality at the flat point `x`; each must be PSD.
pub fn dual_lmis(x: &[f64], m: &[IsoTypicOp; 2]) -> Vec<(String, RMat)> {
    let lambda = x[0];
    let mut idx = 1;
    let mut omega: BTreeMap<(u32, u32), RMat> = BTreeMap::new();
    for (key, n) in OMEGA_KEYS {
        let mut b = RMat::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                b[(i, j)] = x[idx];
                b[(j, i)] = x[idx];
                idx += 1;
            }
        }
        omega.insert(key, b);
    }
    let o1 = &x[idx..idx + 4];
    let mut out = Vec::new();
    for (i, mi) in m.iter().enumerate() {
        for (key, _) in OMEGA_KEYS {
            let mb = mi.blocks[&key].map(|z| z.re);
            out.push((
                format!("omega-minus-choi{}[{},{}]", i + 1, spin_label(key.0), spin_label(key.1)),
                &omega[&key] - mb.scale(0.5),
            ));
        }
    }
    let hh = &omega[&(HALF, HALF)];
    let ht = &omega[&(HALF, THREE_HALVES)];
    let th = &omega[&(THREE_HALVES, HALF)];
    let tt = omega[&(THREE_HALVES, THREE_HALVES)][(0, 0)];
    let diag = |a: f64, b: f64| RMat::from_diagonal(&nalgebra::DVector::from_vec(vec![a, b]));
    out.push(("level1-j0-l1/2".into(), diag(o1[0], o1[1]) - hh.view((0, 0), (2, 2))));
    out.push(("level1-j0-l3/2".into(), RMat::from_element(1, 1, o1[1] - ht[(0, 0)])));
    out.push(("level1-j1-l1/2".into(), diag(o1[2], o1[3]) - hh.view((2, 2), (2, 2)) - th));
    out.push(("level1-j1-l3/2".into(), RMat::from_element(1, 1, o1[3] - ht[(1, 1)] - tt)));
    out.push(("lambda-l0".into(), RMat::from_element(1, 1, lambda - o1[0] - o1[2])));
    out.push(("lambda-l1".into(), RMat::from_element(1, 1, lambda - o1[1] - o1[3])));
    out
}

/// Check every inequality of the dual at the certificate point.
pub fn verify_certificate(cert: &DualCertificate, m: &[IsoTypicOp; 2]) -> Result<CertificateReport> {
    check_choi(m)?;
    let x = cert.to_vector();
    let mut checks = Vec::new();
    let mut feasible = true;
    let mut max_violation: f64 = 0.0;
    for (name, lhs) in dual_lmis(&x, m) {
        let v = if lhs.nrows() == 1 {
            let s = lhs[(0, 0)];
            feasible &= s >= -CERT_SCALAR_TOL;
            s
        } else {
            let e = numerics::min_eigenvalue(&numerics::to_complex(&lhs))?;
            feasible &= e >= -CERT_PSD_TOL;
            e
        };
        max_violation = max_violation.max(-v);
        checks.push((name, v));
    }
    let exact_lambda = cert.lambda.rational();
    let mut exact_slacks = Vec::new();
    let o1: Vec<Option<Ratio<i64>>> = cert.omega1.iter().map(|s| s.rational()).collect();
    let entry = |key: (u32, u32), i: usize, j: usize| cert.omega[&key][i][j].rational();
    let candidates: [(&str, Vec<(i64, Option<Ratio<i64>>)>); 4] = [
        ("level1-j0-l3/2", vec![(1, o1[1]), (-1, entry((HALF, THREE_HALVES), 0, 0))]),
        (
            "level1-j1-l3/2",
            vec![(1, o1[3]), (-1, entry((HALF, THREE_HALVES), 1, 1)), (-1, entry((THREE_HALVES, THREE_HALVES), 0, 0))],
        ),
        ("lambda-l0", vec![(1, exact_lambda), (-1, o1[0]), (-1, o1[2])]),
        ("lambda-l1", vec![(1, exact_lambda), (-1, o1[1]), (-1, o1[3])]),
    ];
    for (name, terms) in candidates {
        let mut acc = Ratio::from_integer(0);
        let mut exact = true;
        for (sign, t) in terms {
            match t {
                Some(r) => acc += r * sign,
                None => exact = false,
            }
        }
        if exact {
            exact_slacks.push((name.to_string(), acc));
        }
    }
    Ok(CertificateReport {
        feasible,
        max_violation: max_violation.max(0.0),
        checks,
        lambda: cert.lambda.value(),
        exact_lambda,
        exact_slacks,
    })
}

/// Conic dual of the LMI problem "minimize lambda s.t. every dual_lmis block is PSD", written as a
/// maximization over one PSD block per inequality. Its optimum equals the minimal lambda, and the
/// equality multipliers of a solution are the dual variables in `to_vector` order.
pub fn build_dual(m: &[IsoTypicOp; 2]) -> Result<SdpProblem> {
    check_choi(m)?;
    let zero = vec![0.0; N_DUAL_VARS];
    let f0 = dual_lmis(&zero, m);
    let mut p = SdpProblem::new("general11-dual", Field::Real);
    for (name, lhs) in &f0 {
        let b = p.add_block(name.clone(), lhs.nrows());
        p.objective[b] = numerics::to_complex(&(-lhs));
    }
    for k in 0..N_DUAL_VARS {
        let mut e = zero.clone();
        e[k] = 1.0;
        let fk = dual_lmis(&e, m);
        let terms: Vec<(usize, CMat)> = fk
            .iter()
            .zip(&f0)
            .enumerate()
            .filter_map(|(b, ((_, a), (_, a0)))| {
                let d = a - a0;
                (d.amax() > 0.0).then(|| (b, d.map(|v| C64::new(v, 0.0))))
            })
            .collect();
        p.add_constraint(format!("x{k}"), terms, if k == 0 { 1.0 } else { 0.0 });
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::choi::{choi_pair, BoxAssignment};
    use crate::sdp::{problem, IpmOptions};

    fn load(name: &str) -> DualCertificate {
        let path = format!("{}/../../data/certificates/{name}.json", env!("CARGO_MANIFEST_DIR"));
        let v: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
        DualCertificate::from_json(&v).unwrap()
    }

    #[test]
    fn exact_values_parse() {
        let v: ExactValue = "-1/12*sqrt(3)".parse().unwrap();
        assert!((v.to_f64() + 3f64.sqrt() / 12.0).abs() < 1e-16);
        let v: ExactValue = "sqrt(12)/6".parse().unwrap();
        assert_eq!(v.radicand, 3);
        assert_eq!(v.coef, Ratio::new(1, 3));
        assert_eq!("5/12".parse::<ExactValue>().unwrap().as_rational(), Some(Ratio::new(5, 12)));
        assert!("1/0".parse::<ExactValue>().is_err());
        assert!("sqrt3".parse::<ExactValue>().is_err());
    }

    #[test]
    fn shipped_certificates_are_feasible() {
        for (name, labels) in [("general11-target-last", "R1 R2 T"), ("general11-target-middle", "R1 T R2")] {
            let cert = load(name);
            let pair = choi_pair(&BoxAssignment::parse(labels).unwrap()).unwrap();
            let rep = verify_certificate(&cert, &pair.blocks).unwrap();
            assert!(rep.feasible, "{name}: {:?}", rep.checks);
            assert!(rep.max_violation <= 1e-9);
            assert_eq!(rep.exact_lambda, Some(Ratio::new(7, 8)));
            assert!(rep.exact_slacks.iter().all(|(_, s)| *s >= Ratio::from_integer(0)));
            let mut lowered = cert.clone();
            lowered.lambda = Scalar::Float(0.875 - 0.01);
            assert!(!verify_certificate(&lowered, &pair.blocks).unwrap().feasible);
        }
    }

    #[test]
    fn dual_optimum_is_seven_eighths() {
        let pair = choi_pair(&BoxAssignment::parse("R1 R2 T").unwrap()).unwrap();
        let p = build_dual(&pair.blocks).unwrap();
        let sol = problem::solve(&p, &IpmOptions::default()).unwrap();
        assert!((sol.primal_value - 0.875).abs() < 1e-7, "{}", sol.primal_value);
        let cert = DualCertificate::from_vector("target-last", &sol.multipliers).unwrap();
        let rep = verify_certificate(&cert, &pair.blocks).unwrap();
        assert!((rep.lambda - 0.875).abs() < 1e-7);
        assert!(rep.max_violation < 1e-7, "{:?}", rep.checks);
    }
}
