use eqdet::choi::{haar_su2, rng_for};
use eqdet::numerics::{self, c, r, CMat, HermitianOp, NumericsError, C64};
use proptest::prelude::*;
use rand::Rng;

fn diag(v: &[f64]) -> CMat {
    CMat::from_fn(v.len(), v.len(), |i, j| if i == j { r(v[i]) } else { r(0.0) })
}

fn pauli_x() -> CMat {
    CMat::from_row_slice(2, 2, &[r(0.0), r(1.0), r(1.0), r(0.0)])
}

fn random_hermitian(seed: u64, n: usize) -> CMat {
    let mut rng = rng_for(seed, 0);
    let g = CMat::from_fn(n, n, |_, _| c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
    numerics::hermitian_part(&g)
}

fn random_unitary(seed: u64, n: usize) -> CMat {
    let h = random_hermitian(seed, n);
    let (_, v) = numerics::eig_hermitian_raw(&h).unwrap();
    v
}

#[test]
fn eig_small_spectra() {
    let (vals, _) = numerics::eig_hermitian(&HermitianOp::new(diag(&[3.0, 1.0, 2.0])).unwrap()).unwrap();
    assert_eq!(vals, vec![1.0, 2.0, 3.0]);
    let (vals, vecs) = numerics::eig_hermitian(&HermitianOp::new(pauli_x()).unwrap()).unwrap();
    assert!((vals[0] + 1.0).abs() < 1e-14 && (vals[1] - 1.0).abs() < 1e-14);
    assert!(numerics::is_unitary(&vecs, 1e-12));
}

#[test]
fn trace_norm_examples() {
    assert_eq!(numerics::trace_norm(&CMat::zeros(3, 3)).unwrap(), 0.0);
    assert!((numerics::trace_norm(&diag(&[1.0, -2.0])).unwrap() - 3.0).abs() < 1e-14);
    let one = CMat::from_row_slice(2, 2, &[r(0.0), r(0.0), r(0.0), r(1.0)]);
    let plus = CMat::from_element(2, 2, r(0.5));
    assert!((numerics::trace_norm(&(one - plus)).unwrap() - 2f64.sqrt()).abs() < 1e-12);
    assert!(matches!(numerics::trace_norm(&CMat::zeros(2, 3)), Err(NumericsError::Dimension(_))));
}

#[test]
fn partial_trace_examples() {
    let rho = diag(&[0.25, 0.75]);
    let sigma = CMat::from_row_slice(2, 2, &[r(0.5), c(0.0, 0.5), c(0.0, -0.5), r(0.5)]);
    let t = numerics::partial_trace(&numerics::kron(&rho, &sigma), &[2, 2], &[0]).unwrap();
    assert!(numerics::frobenius_distance(&t, &rho) < 1e-15);

    let mut phi = CMat::zeros(4, 1);
    phi[(0, 0)] = r(std::f64::consts::FRAC_1_SQRT_2);
    phi[(3, 0)] = r(std::f64::consts::FRAC_1_SQRT_2);
    let t = numerics::partial_trace(&(&phi * phi.adjoint()), &[2, 2], &[0]).unwrap();
    assert!(numerics::frobenius_distance(&t, &CMat::identity(2, 2).scale(0.5)) < 1e-15);

    let a = random_hermitian(5, 8);
    let step = numerics::partial_trace(&numerics::partial_trace(&a, &[2, 2, 2], &[0, 1]).unwrap(), &[2, 2], &[0]).unwrap();
    let once = numerics::partial_trace(&a, &[2, 2, 2], &[0]).unwrap();
    assert!(numerics::frobenius_distance(&step, &once) < 1e-13);
    assert!(numerics::partial_trace(&a, &[2, 3], &[0]).is_err());
}

#[test]
fn kron_sqrt_and_psd() {
    let x = pauli_x();
    let i2 = CMat::identity(2, 2);
    let lhs = numerics::kron(&i2, &x) * numerics::kron(&x, &i2);
    assert!(numerics::frobenius_distance(&lhs, &numerics::kron(&x, &x)) < 1e-15);

    let s = numerics::matrix_sqrt_psd(&HermitianOp::new(diag(&[4.0, 9.0])).unwrap(), 1e-9).unwrap();
    assert!(numerics::frobenius_distance(s.matrix(), &diag(&[2.0, 3.0])) < 1e-12);
    assert!(numerics::is_psd(&diag(&[1.0, -1e-15]), 1e-9).unwrap());
    assert!(!numerics::is_psd(&diag(&[1.0, -1e-3]), 1e-9).unwrap());
    assert!(numerics::matrix_sqrt_psd(&HermitianOp::new(diag(&[1.0, -1e-3])).unwrap(), 1e-9).is_err());
}

#[test]
fn hermitian_op_rejects_non_hermitian() {
    let m = CMat::from_row_slice(2, 2, &[r(1.0), r(1.0), r(0.0), r(1.0)]);
    assert!(HermitianOp::new(m).is_err());
}

#[test]
fn eig_reconstructs_dim_64() {
    let h = random_hermitian(11, 64);
    let (vals, v) = numerics::eig_hermitian_raw(&h).unwrap();
    assert!(vals.windows(2).all(|w| w[0] <= w[1]));
    let lam = CMat::from_fn(64, 64, |i, j| if i == j { r(vals[i]) } else { r(0.0) });
    let back = &v * lam * v.adjoint();
    assert!(numerics::frobenius_distance(&back, &h) <= 1e-10 * h.norm());
    assert!(numerics::frobenius_distance(&(v.adjoint() * &v), &CMat::identity(64, 64)) < 1e-10);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn eig_reconstruction(seed in any::<u64>(), n in 1usize..=16) {
        let h = random_hermitian(seed, n);
        let (vals, v) = numerics::eig_hermitian_raw(&h).unwrap();
        let lam = CMat::from_fn(n, n, |i, j| if i == j { r(vals[i]) } else { r(0.0) });
        prop_assert!(numerics::frobenius_distance(&(&v * lam * v.adjoint()), &h) <= 1e-10 * h.norm().max(1.0));
    }

    #[test]
    fn trace_norm_unitary_invariance(seed in any::<u64>(), n in 2usize..=8) {
        let a = CMat::from_fn(n, n, |i, j| c(((seed as usize + 3 * i + 7 * j) % 11) as f64 - 5.0, (i as f64) - (j as f64)));
        let u = random_unitary(seed, n);
        let v = random_unitary(seed.wrapping_add(1), n);
        let t0 = numerics::trace_norm(&a).unwrap();
        let t1 = numerics::trace_norm(&(&u * &a * &v)).unwrap();
        prop_assert!((t0 - t1).abs() <= 1e-9 * t0.max(1.0));
    }

    #[test]
    fn partial_trace_linear_and_trace_preserving(seed in any::<u64>(), keep in 0usize..3, w in -2.0f64..2.0) {
        let a = random_hermitian(seed, 8);
        let b = random_hermitian(seed ^ 0x5555, 8);
        let dims = [2, 2, 2];
        let pt = |m: &CMat| numerics::partial_trace(m, &dims, &[keep]).unwrap();
        let lin = pt(&(&a + b.scale(w)));
        prop_assert!(numerics::frobenius_distance(&lin, &(pt(&a) + pt(&b).scale(w))) < 1e-12);
        prop_assert!((numerics::trace(&pt(&a)) - numerics::trace(&a)).norm() < 1e-12);
    }

    #[test]
    fn haar_conjugation_preserves_trace_norm(seed in any::<u64>()) {
        let mut rng = rng_for(seed, 1);
        let u = haar_su2(&mut rng);
        let a = random_hermitian(seed, 2);
        let t0 = numerics::trace_norm(&a).unwrap();
        let t1 = numerics::trace_norm(&(&u * &a * u.adjoint())).unwrap();
        prop_assert!((t0 - t1).abs() < 1e-12);
        prop_assert!((numerics::trace(&(&u * u.adjoint())) - C64::new(2.0, 0.0)).norm() < 1e-12);
    }
}
