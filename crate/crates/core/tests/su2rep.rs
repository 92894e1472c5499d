use std::collections::BTreeMap;

use eqdet::choi::{haar_su2, rng_for};
use eqdet::numerics::{self, c, r, CMat};
use eqdet::su2rep::{
    self, basis_relation, block_leakage, cg_coefficient, coupled_basis, decompose_tensor_power, multiplicity_extend,
    multiplicity_partial_trace, swap_rep, v_matrix, CouplingOrder, IsoTypicOp, Scaling, HAT3,
};
use proptest::prelude::*;
use rand::Rng;

const S2: f64 = std::f64::consts::FRAC_1_SQRT_2;

fn column(order: CouplingOrder, col: usize) -> Vec<f64> {
    coupled_basis(order).unwrap().matrix.column(col).iter().copied().collect()
}

fn ket(n: usize, terms: &[(&str, f64)]) -> Vec<f64> {
    let mut v = vec![0.0; 1 << n];
    for (bits, a) in terms {
        v[usize::from_str_radix(bits, 2).unwrap()] += a;
    }
    v
}

fn assert_vec_eq(got: &[f64], want: &[f64]) {
    for (g, w) in got.iter().zip(want) {
        assert!((g - w).abs() < 1e-12, "{got:?} vs {want:?}");
    }
}

fn assert_mat_eq(got: &CMat, want: &[f64]) {
    let n = got.ncols();
    for (k, w) in want.iter().enumerate() {
        assert!((got[(k / n, k % n)] - r(*w)).norm() < 1e-12, "{got} vs {want:?}");
    }
}

#[test]
fn clebsch_gordan_examples() {
    assert!((cg_coefficient(1, 1, 1, -1, 0, 0).unwrap() - S2).abs() < 1e-15);
    assert!((cg_coefficient(1, 1, 1, 1, 2, 2).unwrap() - 1.0).abs() < 1e-15);
    assert_eq!(cg_coefficient(1, 1, 1, 1, 0, 0).unwrap(), 0.0);
    // (j1, j2) = (1, 1/2): the 6x6 coefficient table is orthogonal
    let mut rows = Vec::new();
    for (j, m) in [(1, 1), (1, -1), (3, 3), (3, 1), (3, -1), (3, -3)] {
        let mut row = Vec::new();
        for m1 in [2, 0, -2] {
            for m2 in [1, -1] {
                row.push(cg_coefficient(2, m1, 1, m2, j, m).unwrap());
            }
        }
        rows.push(row);
    }
    for a in 0..6 {
        for b in 0..6 {
            let dot: f64 = rows[a].iter().zip(&rows[b]).map(|(x, y)| x * y).sum();
            assert!((dot - if a == b { 1.0 } else { 0.0 }).abs() < 1e-14);
        }
    }
}

#[test]
fn printed_basis_vectors() {
    let s6 = (1.0f64 / 6.0).sqrt();
    assert_vec_eq(
        &column(CouplingOrder::Default3, 2),
        &ket(3, &[("010", (2.0f64 / 3.0).sqrt()), ("001", -s6), ("100", -s6)]),
    );
    assert_vec_eq(&column(CouplingOrder::Default3, 0), &ket(3, &[("001", S2), ("100", -S2)]));
    assert_vec_eq(&column(CouplingOrder::Sequential(2), 0), &ket(2, &[("01", S2), ("10", -S2)]));
    assert_vec_eq(&column(CouplingOrder::Sequential(2), 1), &ket(2, &[("00", 1.0)]));
    let w1 = ket(2, &[("01", S2), ("10", -S2)]);
    let w1w1: Vec<f64> = (0..16).map(|i| w1[i >> 2] * w1[i & 3]).collect();
    assert_vec_eq(&column(CouplingOrder::Paired4, 0), &w1w1);
}

#[test]
fn block_structure() {
    let shape = |o| coupled_basis(o).unwrap().blocks.iter().map(|b| (b.j2, b.mult)).collect::<Vec<_>>();
    assert_eq!(shape(CouplingOrder::Sequential(2)), vec![(0, 1), (2, 1)]);
    assert_eq!(shape(HAT3), vec![(1, 2), (3, 1)]);
    assert_eq!(shape(CouplingOrder::Default3), vec![(1, 2), (3, 1)]);
    assert_eq!(shape(CouplingOrder::Paired4), vec![(0, 2), (2, 3), (4, 1)]);
    for o in [HAT3, CouplingOrder::Tilde3, CouplingOrder::FirstList4, CouplingOrder::Sequential(4)] {
        let b = coupled_basis(o).unwrap();
        let total: usize = b.blocks.iter().map(|x| x.dim * x.mult).sum();
        assert_eq!(total, b.dim());
        let m = &b.matrix;
        assert!((m.transpose() * m - nalgebra::DMatrix::<f64>::identity(b.dim(), b.dim())).amax() < 1e-12);
    }
}

#[test]
fn hat_and_tilde_relations() {
    let h = 3f64.sqrt() / 2.0;
    let hat = basis_relation(CouplingOrder::Default3, HAT3).unwrap();
    assert_mat_eq(&hat, &[0.5, h, h, -0.5]);
    let tilde = basis_relation(CouplingOrder::Default3, CouplingOrder::Tilde3).unwrap();
    assert_mat_eq(&tilde, &[-0.5, h, h, 0.5]);
    let back = basis_relation(HAT3, CouplingOrder::Default3).unwrap();
    assert!(numerics::frobenius_distance(&(&hat * &back), &CMat::identity(2, 2)) < 1e-12);
    // overlap of explicit vectors
    let d = coupled_basis(CouplingOrder::Default3).unwrap();
    let t = coupled_basis(HAT3).unwrap();
    for k in 0..2 {
        for kp in 0..2 {
            let o = d.vector(1, k, 0).dot(&t.vector(1, kp, 0));
            assert!((hat[(k, kp)].re - o).abs() < 1e-12);
        }
    }
}

#[test]
fn v_matrices() {
    let h = 3f64.sqrt() / 2.0;
    assert_mat_eq(&v_matrix(1, 1, 0).unwrap(), &[0.5, h, h, -0.5]);
    for (a, b, cc) in [(1, 1, 0), (1, 1, 2), (2, 1, 1), (2, 1, 3), (0, 1, 1), (3, 1, 2)] {
        let v = v_matrix(a, b, cc).unwrap();
        assert!(v.iter().all(|z| z.im == 0.0));
        let g = &v * v.adjoint();
        assert!(g[(0, 1)].norm() < 1e-12);
        assert!((g[(0, 0)] - g[(1, 1)]).norm() < 1e-12);
    }
    assert!(v_matrix(0, 5, 0).is_err());
}

#[test]
fn printed_swap_representations() {
    assert_mat_eq(&swap_rep(4, 1, 2, 0).unwrap(), &[-1.0, 0.0, 0.0, 1.0]);
    assert_mat_eq(&swap_rep(4, 1, 2, 4).unwrap(), &[1.0]);
    assert!(numerics::frobenius_distance(&swap_rep(4, 2, 3, 0).unwrap(), &v_matrix(1, 1, 0).unwrap().transpose()) < 1e-12);
    assert!(swap_rep(4, 1, 3, 0).is_err());
}

#[test]
fn swap_reps_reproduce_qubit_swaps() {
    for n in 2..=4 {
        let b = coupled_basis(CouplingOrder::Sequential(n)).unwrap();
        let bc = b.complex_matrix();
        for i in 1..n {
            let mut direct = CMat::zeros(b.dim(), b.dim());
            for blk in &b.blocks {
                let u = swap_rep(n, i, i + 1, blk.j2).unwrap();
                assert!(numerics::is_unitary(&u, 1e-12));
                for k in 0..blk.mult {
                    for kp in 0..blk.mult {
                        for m in 0..blk.dim {
                            direct[(blk.column(k, m), blk.column(kp, m))] = u[(k, kp)];
                        }
                    }
                }
            }
            let mut perm: Vec<usize> = (0..n).collect();
            perm.swap(i - 1, i);
            let swap = numerics::permutation_matrix(&vec![2; n], &perm).unwrap();
            let rebuilt = &bc * direct * bc.transpose();
            assert!(numerics::frobenius_distance(&rebuilt, &swap) < 1e-10, "n={n} swap {i}");
        }
    }
}

#[test]
fn tensor_power_blocks() {
    for n in 1..=4 {
        for (_, blk) in decompose_tensor_power(&CMat::identity(2, 2), n).unwrap() {
            assert!(numerics::frobenius_distance(&blk, &CMat::identity(blk.nrows(), blk.nrows())) < 1e-12);
        }
    }
    let th: f64 = 0.37;
    let u = CMat::from_row_slice(2, 2, &[c(th.cos(), th.sin()), r(0.0), r(0.0), c(th.cos(), -th.sin())]);
    let blocks = decompose_tensor_power(&u, 2).unwrap();
    assert!((blocks[0].1[(0, 0)] - r(1.0)).norm() < 1e-12);
    let e = |x: f64| c(x.cos(), x.sin());
    for (i, want) in [e(2.0 * th), r(1.0), e(-2.0 * th)].iter().enumerate() {
        assert!((blocks[1].1[(i, i)] - want).norm() < 1e-12);
    }
    assert!(decompose_tensor_power(&CMat::identity(2, 2).scale(2.0), 2).is_err());
}

#[test]
fn block_diagonalization_of_tensor_powers() {
    let mut rng = rng_for(2024, 0);
    let orders = [
        CouplingOrder::Sequential(2),
        HAT3,
        CouplingOrder::Default3,
        CouplingOrder::Tilde3,
        CouplingOrder::Sequential(4),
        CouplingOrder::FirstList4,
        CouplingOrder::Paired4,
    ];
    for _ in 0..100 {
        let u = haar_su2(&mut rng);
        for o in orders {
            assert!(block_leakage(&u, o).unwrap() <= 1e-10, "{o}");
        }
    }
}

fn random_psd(rng: &mut impl Rng, n: usize) -> CMat {
    let g = CMat::from_fn(n, n, |_, _| c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
    &g * g.adjoint()
}

fn random_single_space(seed: u64, order: CouplingOrder) -> IsoTypicOp {
    let mut rng = rng_for(seed, 3);
    let b = coupled_basis(order).unwrap();
    let blocks: BTreeMap<(u32, u32), CMat> = b.blocks.iter().map(|x| ((x.j2, 0), random_psd(&mut rng, x.mult))).collect();
    IsoTypicOp::from_blocks(order, CouplingOrder::Sequential(0), Scaling::Output, blocks).unwrap()
}

#[test]
fn multiplicity_trace_examples() {
    let h = 3f64.sqrt() / 2.0;
    let hat0 = CMat::from_row_slice(2, 1, &[r(0.5), r(h)]);
    let mut blocks = BTreeMap::new();
    blocks.insert((1, 0), &hat0 * hat0.adjoint());
    let rho = IsoTypicOp::from_blocks(CouplingOrder::Default3, CouplingOrder::Sequential(0), Scaling::Output, blocks)
        .unwrap();
    let s = multiplicity_partial_trace(&rho).unwrap();
    assert!((s.block(0, 0).unwrap()[(0, 0)] - r(1.0)).norm() < 1e-12);
    assert!(s.block(2, 0).unwrap()[(0, 0)].norm() < 1e-12);
    assert!((s.trace() - rho.trace()).abs() < 1e-12);

    let quarter = IsoTypicOp::from_full(
        &CMat::identity(4, 4).scale(0.25),
        CouplingOrder::Sequential(2),
        CouplingOrder::Sequential(0),
        Scaling::Output,
    )
    .unwrap();
    let ext = multiplicity_extend(&quarter).unwrap();
    assert!(numerics::frobenius_distance(&ext.to_full().unwrap(), &CMat::identity(8, 8).scale(0.125)) < 1e-12);

    let wrong = random_single_space(1, HAT3);
    assert!(multiplicity_partial_trace(&wrong).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn multiplicity_trace_matches_full_space(seed in any::<u64>()) {
        let rho = random_single_space(seed, CouplingOrder::Default3);
        let sigma = multiplicity_partial_trace(&rho).unwrap();
        let full = numerics::partial_trace(&rho.to_full().unwrap(), &[2, 2, 2], &[0, 1]).unwrap();
        prop_assert!(numerics::frobenius_distance(&sigma.to_full().unwrap(), &full) < 1e-10);
    }

    #[test]
    fn multiplicity_extend_matches_kron(seed in any::<u64>()) {
        let sigma = random_single_space(seed, CouplingOrder::Sequential(2));
        let ext = multiplicity_extend(&sigma).unwrap();
        let want = numerics::kron(&sigma.to_full().unwrap(), &CMat::identity(2, 2).scale(0.5));
        prop_assert!(numerics::frobenius_distance(&ext.to_full().unwrap(), &want) < 1e-10);
    }

    #[test]
    fn basis_changes_round_trip(seed in any::<u64>()) {
        let op = random_single_space(seed, HAT3);
        let there = op.with_out_order(CouplingOrder::Tilde3).unwrap();
        prop_assert!(numerics::frobenius_distance(&there.to_full().unwrap(), &op.to_full().unwrap()) < 1e-10);
        let back = there.with_out_order(HAT3).unwrap();
        for (k, m) in &op.blocks {
            prop_assert!(numerics::frobenius_distance(m, &back.blocks[k]) < 1e-10);
        }
    }

    #[test]
    fn random_tensor_powers_stay_in_blocks(seed in any::<u64>()) {
        let mut rng = rng_for(seed, 0);
        let u = haar_su2(&mut rng);
        for n in 2..=4 {
            let b = coupled_basis(CouplingOrder::Sequential(n)).unwrap();
            let bc = b.complex_matrix();
            let blocks = decompose_tensor_power(&u, n).unwrap();
            let mut direct = CMat::zeros(b.dim(), b.dim());
            for (j2, d) in &blocks {
                let blk = b.block(*j2).unwrap();
                for k in 0..blk.mult {
                    for i in 0..blk.dim {
                        for ip in 0..blk.dim {
                            direct[(blk.column(k, i), blk.column(k, ip))] = d[(i, ip)];
                        }
                    }
                }
            }
            let full = numerics::kron_all(&vec![u.clone(); n]);
            prop_assert!(numerics::frobenius_distance(&(&bc * direct * bc.transpose()), &full) < 1e-10);
        }
    }
}

#[test]
fn spin_labels() {
    assert_eq!(su2rep::spin_label(3), "3/2");
    assert_eq!(su2rep::spin_label(2), "1");
    assert_eq!(su2rep::parse_spin("1/2"), Some(1));
}
