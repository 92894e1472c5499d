use eqdet::choi::{choi_pair, rng_for, BoxAssignment, ChoiPair};
use eqdet::numerics::{self, r, CMat};
use eqdet::sdp::IpmOptions;
use eqdet::tasks;
use eqdet::tester::{self, random_tester, simulate_discrimination, TesterChain, TesterError};
use proptest::prelude::*;

fn pair(labels: &str) -> ChoiPair {
    choi_pair(&BoxAssignment::parse(labels).unwrap()).unwrap()
}

fn phi_plus() -> CMat {
    let mut m = CMat::zeros(4, 4);
    for (i, j) in [(0, 0), (0, 3), (3, 0), (3, 3)] {
        m[(i, j)] = r(1.0);
    }
    m
}

/// Two-layer tester on one slot each; chain[1] acts on K1 H1 H2.
fn two_layer(y2: CMat) -> TesterChain {
    let top = tester::embed_identity_k(&y2, 1, 1, 2).unwrap().scale(0.5);
    TesterChain { layers: vec![1, 1], outcomes: vec![top.clone(), top], chain: vec![CMat::identity(2, 2).scale(0.5), y2] }
}

#[test]
fn povm_tester_validates() {
    let e1 = phi_plus().scale(0.5);
    let e2 = CMat::identity(4, 4) - &e1;
    let t = TesterChain::from_povm(1, &[e1, e2], &CMat::identity(2, 2).scale(0.5)).unwrap();
    let rep = t.validate().unwrap();
    assert!(rep.pass, "{rep:?}");
    assert!(rep.max_residual() < 1e-12);

    let mut bad = t.clone();
    bad.outcomes[0] = bad.outcomes[0].scale(1.1);
    let rep = bad.validate().unwrap();
    assert!(!rep.pass);
    assert!(rep.max_residual() > 1e-3);
}

#[test]
fn parallelizable_prefix_detects_entangled_memory() {
    let product = two_layer(CMat::identity(8, 8).scale(0.25));
    assert!(product.validate().unwrap().pass);
    assert!(product.parallelizable_prefix().unwrap());

    // |I>> on (K1, H2) with H1 maximally mixed; index bits are k h1 h2
    let y2 = CMat::from_fn(8, 8, |a, b| {
        let (k, h1, h2) = (a >> 2, (a >> 1) & 1, a & 1);
        let (k_, h1_, h2_) = (b >> 2, (b >> 1) & 1, b & 1);
        r(if k == h2 && k_ == h2_ && h1 == h1_ { 0.5 } else { 0.0 })
    });
    let entangled = two_layer(y2);
    assert!(entangled.validate().unwrap().pass);
    assert!(!entangled.parallelizable_prefix().unwrap());
    let one = TesterChain::always_guess_first(2);
    assert!(matches!(one.parallelizable_prefix(), Err(TesterError::Structure(_))));
}

#[test]
fn guessing_blindly_succeeds_half_the_time() {
    for labels in ["R1 T", "R1 R2 T", "R1 R1 T R2"] {
        let p = pair(labels);
        let t = TesterChain::always_guess_first(p.assignment.n_slots());
        assert!(t.validate().unwrap().pass);
        assert!((t.asp(&p.full[0], &p.full[1]).unwrap() - 0.5).abs() < 1e-12);
        assert!((t.swapped_outcomes().asp(&p.full[0], &p.full[1]).unwrap() - 0.5).abs() < 1e-12);
    }
}

#[test]
fn optimal_parallel_witness_reaches_seven_eighths() {
    let r = tasks::optimal_parallel_11(&IpmOptions::default()).unwrap();
    let t = r.tester().unwrap();
    assert!(t.validate().unwrap().pass);
    let p = pair("R1 R2 T");
    assert!((t.asp(&p.full[0], &p.full[1]).unwrap() - 0.875).abs() < 1e-6);
    let sim = simulate_discrimination(t, &p.assignment, 100_000, 9).unwrap();
    assert!((sim.mean - 0.875).abs() <= 3.0 * (0.875f64 * 0.125 / 1e5).sqrt());
}

#[test]
fn random_testers_are_valid_and_below_optimum() {
    let p = pair("R1 R2 T");
    let mut rng = rng_for(2024, 0);
    for layers in [&[3][..], &[1, 1, 1], &[2, 1], &[1, 2]] {
        for _ in 0..10 {
            let t = random_tester(layers, &mut rng).unwrap();
            let rep = t.validate().unwrap();
            assert!(rep.pass, "{layers:?}: {rep:?}");
            let v = t.asp(&p.full[0], &p.full[1]).unwrap();
            assert!((0.0..=0.875 + 1e-6).contains(&v), "{layers:?}: {v}");
        }
    }
}

#[test]
fn simulation_matches_exact_success_probability() {
    let p = pair("R1 T R2");
    let mut rng = rng_for(5, 1);
    for layers in [&[3][..], &[1, 1, 1]] {
        let t = random_tester(layers, &mut rng).unwrap();
        let exact = t.asp(&p.full[0], &p.full[1]).unwrap();
        let n = 100_000;
        let sim = simulate_discrimination(&t, &p.assignment, n, 77).unwrap();
        assert_eq!(sim.trials, n);
        let sigma = (exact * (1.0 - exact) / n as f64).sqrt();
        assert!((sim.mean - exact).abs() <= 3.0 * sigma, "{layers:?}: {} vs {exact}", sim.mean);
        assert_eq!(sim, simulate_discrimination(&t, &p.assignment, n, 77).unwrap());
    }
}

#[test]
fn json_round_trip_and_shape_errors() {
    let t = random_tester(&[1, 2], &mut rng_for(3, 0)).unwrap();
    let back = TesterChain::from_json(&t.to_json()).unwrap();
    for (a, b) in t.outcomes.iter().zip(&back.outcomes).chain(t.chain.iter().zip(&back.chain)) {
        assert!(numerics::frobenius_distance(a, b) < 1e-15);
    }
    assert_eq!(t.layers, back.layers);

    let p = pair("R1 T");
    assert!(matches!(t.asp(&p.full[0], &p.full[1]), Err(TesterError::Structure(_))));
    assert!(simulate_discrimination(&t, &p.assignment, 10, 0).is_err());
    assert!(simulate_discrimination(&TesterChain::always_guess_first(2), &p.assignment, 0, 0).is_err());
    let mut v = t.to_json();
    v["layers"] = serde_json::json!([2, 2]);
    assert!(TesterChain::from_json(&v).is_err());
    assert!(random_tester(&[], &mut rng_for(0, 0)).is_err());
}

#[test]
fn embed_then_trace_recovers_operator() {
    let y = random_tester(&[1, 1], &mut rng_for(8, 0)).unwrap().chain[1].clone();
    let e = tester::embed_identity_k(&y, 1, 2, 2).unwrap();
    assert_eq!(e.nrows(), 32);
    let back = numerics::partial_trace(&e, &[2; 5], &[0, 3, 4]).unwrap();
    assert!(numerics::frobenius_distance(&back, &y.scale(4.0)) < 1e-12);
    let t = tester::trace_last(&y, 3, 1).unwrap();
    assert!(numerics::frobenius_distance(&t, &numerics::partial_trace(&y, &[2, 2, 2], &[0, 1]).unwrap()) < 1e-15);
    assert!(tester::embed_identity_k(&y, 2, 1, 2).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn swapping_outcomes_sums_to_full_overlap(seed in any::<u64>(), split in 0usize..3) {
        let layers: &[usize] = [&[3][..], &[1, 2], &[1, 1, 1]][split];
        let p = pair("T R1 R2");
        let t = random_tester(layers, &mut rng_for(seed, 0)).unwrap();
        let lhs = t.asp(&p.full[0], &p.full[1]).unwrap() + t.swapped_outcomes().asp(&p.full[0], &p.full[1]).unwrap();
        let rhs = 0.5 * numerics::trace_product_re(&(&p.full[0] + &p.full[1]), &(&t.outcomes[0] + &t.outcomes[1]));
        prop_assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn random_testers_never_beat_the_optimum(seed in any::<u64>()) {
        let p = pair("R1 R2 T");
        let t = random_tester(&[1, 1, 1], &mut rng_for(seed, 3)).unwrap();
        prop_assert!(t.validate().unwrap().pass);
        prop_assert!(t.asp(&p.full[0], &p.full[1]).unwrap() <= 0.875 + 1e-6);
    }
}
