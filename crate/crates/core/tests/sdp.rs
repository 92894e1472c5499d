use eqdet::choi::{choi_pair, rng_for, BoxAssignment, ChoiPair};
use eqdet::numerics::{c, r, CMat};
use eqdet::sdp::comb::{build_comb, helstrom, solve_comb};
use eqdet::sdp::dual::{build_dual, verify_certificate, DualCertificate, Scalar};
use eqdet::sdp::parallel::solve_parallel;
use eqdet::sdp::{self, IpmOptions, IpmStatus};
use eqdet::tasks::catalog::{CLASS2_VALUE, CLASS_TOL};
use eqdet::tester::random_tester;
use serde_json::Value;

fn pair(labels: &str) -> ChoiPair {
    choi_pair(&BoxAssignment::parse(labels).unwrap()).unwrap()
}

fn shipped(name: &str) -> DualCertificate {
    let path = format!("{}/../../data/certificates/{name}.json", env!("CARGO_MANIFEST_DIR"));
    let v: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    DualCertificate::from_json(&v).unwrap()
}

#[test]
fn helstrom_zero_plus() {
    let zero = CMat::from_row_slice(2, 2, &[r(1.0), r(0.0), r(0.0), r(0.0)]);
    let plus = CMat::from_element(2, 2, r(0.5));
    let s = helstrom(&zero, &plus, &IpmOptions::default()).unwrap();
    assert_eq!(s.status, IpmStatus::Optimal);
    assert!((s.primal_value - (0.5 + 2f64.sqrt() / 4.0)).abs() < 1e-7);
    assert!(s.gap.abs() < 1e-7);

    let y = CMat::from_row_slice(2, 2, &[r(0.5), c(0.0, -0.5), c(0.0, 0.5), r(0.5)]);
    let s = helstrom(&y, &plus, &IpmOptions::default()).unwrap();
    assert!((s.primal_value - (0.5 + 2f64.sqrt() / 4.0)).abs() < 1e-7);
}

#[test]
fn parallel_block_sdp_is_seven_eighths() {
    let p = pair("R1 R2 T");
    let comb = build_comb(&[3], &p.blocks).unwrap();
    let mut dims: Vec<usize> = comb.outcomes.iter().flat_map(|&v| comb.builder.vars[v].slots.iter().map(|s| s.2)).collect();
    dims.sort_unstable_by(|a, b| b.cmp(a));
    assert_eq!(dims, vec![4, 4, 2, 2, 2, 2, 1, 1]);
    let res = comb.solve(&IpmOptions::default()).unwrap();
    assert!(res.solution.converged());
    assert!((res.value - 0.875).abs() < 1e-7);
    assert!(res.solution.dual_value >= res.solution.primal_value - 1e-8);
    assert!((res.solution.dual_value - 0.875).abs() < 1e-7);
}

#[test]
fn full_space_agrees_with_blocks() {
    let p = pair("R1 R2 T");
    let full = solve_parallel(&p.full[0], &p.full[1], 8, 8, &IpmOptions::default()).unwrap();
    assert!(full.converged());
    let blocks = solve_comb(&[3], &p.blocks, &IpmOptions::default()).unwrap();
    assert!((full.primal_value - blocks.value).abs() < 1e-6);
}

#[test]
fn dual_sdp_matches_primal_and_yields_certificate() {
    for (ordering, labels) in [("target-last", "R1 R2 T"), ("target-middle", "R1 T R2"), ("target-first", "T R1 R2")] {
        let p = pair(labels);
        let primal = solve_comb(&[1, 1, 1], &p.blocks, &IpmOptions::default()).unwrap();
        let dual = sdp::solve(&build_dual(&p.blocks).unwrap(), &IpmOptions::default()).unwrap();
        assert!((dual.primal_value - primal.value).abs() < 1e-7, "{ordering}");
        let cert = DualCertificate::from_vector(ordering, &dual.multipliers).unwrap();
        let rep = verify_certificate(&cert, &p.blocks).unwrap();
        assert!((rep.lambda - primal.value).abs() < 1e-7);
        assert!(rep.max_violation < 1e-7, "{ordering}: {:?}", rep.checks);
    }
}

#[test]
fn shipped_certificates_bound_random_testers() {
    let mut rng = rng_for(11, 0);
    for (name, labels) in [("general11-target-last", "R1 R2 T"), ("general11-target-middle", "R1 T R2")] {
        let p = pair(labels);
        let cert = shipped(name);
        let rep = verify_certificate(&cert, &p.blocks).unwrap();
        assert!(rep.feasible);
        let mut lowered = cert.clone();
        lowered.lambda = Scalar::Float(rep.lambda - 0.01);
        assert!(!verify_certificate(&lowered, &p.blocks).unwrap().feasible);
        let back = DualCertificate::from_json(&cert.to_json()).unwrap();
        assert_eq!(back, cert);
        for i in 0..100 {
            let layers: &[usize] = if i % 2 == 0 { &[1, 1, 1] } else { &[3] };
            let t = random_tester(layers, &mut rng).unwrap();
            assert!(t.asp(&p.full[0], &p.full[1]).unwrap() <= rep.lambda + 1e-6);
        }
    }
}

#[test]
fn four_slot_parallel_tester_lands_in_class_two() {
    let p = pair("R1 R1 T R2");
    let res = solve_comb(&[4], &p.blocks, &IpmOptions::default()).unwrap();
    assert!(res.solution.converged());
    assert!((res.value - CLASS2_VALUE).abs() < CLASS_TOL, "{}", res.value);
}

#[test]
fn malformed_inputs_are_rejected() {
    let p = pair("R1 R2 T");
    assert!(build_comb(&[], &p.blocks).is_err());
    assert!(solve_parallel(&p.full[0], &p.full[1], 4, 8, &IpmOptions::default()).is_err());
    assert!(DualCertificate::from_vector("target-last", &[0.0; 3]).is_err());
    let mut v = shipped("general11-target-last").to_json();
    v["lambda"] = Value::Bool(true);
    assert!(DualCertificate::from_json(&v).is_err());
}
