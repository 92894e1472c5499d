//! Operators printed in closed form, shared by the integration tests and the acceptance run.
#![allow(dead_code)]

use std::collections::BTreeMap;

use eqdet::numerics::{CMat, C64};

pub fn real(rows: &[&[f64]]) -> CMat {
    CMat::from_fn(rows.len(), rows[0].len(), |i, j| C64::new(rows[i][j], 0.0))
}

/// sum of |e_a> with a = k * m_l + l for each (k, l), as a projector on an m_j*m_l space.
pub fn proj(m_j: usize, m_l: usize, terms: &[(usize, usize)]) -> CMat {
    let d = m_j * m_l;
    let mut v = CMat::zeros(d, 1);
    for &(k, l) in terms {
        v[(k * m_l + l, 0)] += C64::new(1.0, 0.0);
    }
    &v * v.adjoint()
}

pub type Blocks = BTreeMap<(u32, u32), CMat>;

/// Three-slot blocks in the (12)3 basis; keys are doubled spins.
pub fn three_slot_blocks(target_last_candidate: usize) -> Blocks {
    let s = 1.0 / 3f64.sqrt();
    let sign = if target_last_candidate == 1 { 1.0 } else { -1.0 };
    let mut b = BTreeMap::new();
    b.insert(
        (1, 1),
        real(&[
            &[1.0, 0.0, 0.0, 1.0],
            &[0.0, 1.0, 1.0, sign * 2.0 * s],
            &[0.0, 1.0, 1.0, sign * 2.0 * s],
            &[1.0, sign * 2.0 * s, sign * 2.0 * s, 7.0 / 3.0],
        ])
        .scale(0.25),
    );
    b.insert((1, 3), real(&[&[1.0, -sign * s], &[-sign * s, 1.0 / 3.0]]).scale(0.25));
    b.insert((3, 1), real(&[&[1.0, -sign * s], &[-sign * s, 1.0 / 3.0]]).scale(0.5));
    b.insert((3, 3), real(&[&[2.0 / 3.0]]));
    b
}

pub fn target_middle_first_blocks() -> Blocks {
    let mut b = BTreeMap::new();
    b.insert(
        (1, 1),
        real(&[&[1.0, 0.0, 0.0, 0.0], &[0.0, 0.0, 0.0, 0.0], &[0.0, 0.0, 0.0, 0.0], &[0.0, 0.0, 0.0, 1.0 / 3.0]]),
    );
    b.insert((1, 3), real(&[&[0.0, 0.0], &[0.0, 1.0 / 3.0]]));
    b.insert((3, 1), real(&[&[0.0, 0.0], &[0.0, 2.0 / 3.0]]));
    b.insert((3, 3), real(&[&[2.0 / 3.0]]));
    b
}

/// Four-qubit multiplicities for J = 0, 1, 2.
fn mult4(j2: u32) -> usize {
    match j2 {
        0 => 2,
        2 => 3,
        _ => 1,
    }
}

fn four_slot(entries: &[((u32, u32), f64, &[(usize, usize)])]) -> Blocks {
    let mut b: Blocks = BTreeMap::new();
    for j in [0, 2, 4] {
        for l in [0, 2, 4] {
            b.insert((j, l), CMat::zeros(mult4(j) * mult4(l), mult4(j) * mult4(l)));
        }
    }
    for &((j, l), w, terms) in entries {
        *b.get_mut(&(j, l)).unwrap() += proj(mult4(j), mult4(l), terms).scale(w);
    }
    b
}

/// Candidate 1 of slots (U1 U1 Ui U2), sequential ((12)3)4 basis.
pub fn two_one_first_blocks() -> Blocks {
    let pair: &[(usize, usize)] = &[(0, 0), (1, 1)];
    four_slot(&[
        ((0, 0), 0.25, pair),
        ((0, 2), 0.25, pair),
        ((2, 0), 0.75, pair),
        ((2, 2), 0.75, pair),
        ((2, 2), 3.0 / 8.0, &[(2, 2)]),
        ((2, 4), 3.0 / 8.0, &[(2, 0)]),
        ((4, 2), 5.0 / 8.0, &[(0, 2)]),
        ((4, 4), 5.0 / 8.0, &[(0, 0)]),
    ])
}

/// Candidate 2 of slots (U1 U1 Ui U2), paired (12)(34) basis.
pub fn two_one_second_blocks() -> Blocks {
    four_slot(&[
        ((0, 0), 1.0, &[(0, 0)]),
        ((0, 0), 1.0 / 9.0, &[(1, 1)]),
        ((0, 2), 1.0 / 9.0, &[(1, 2)]),
        ((0, 4), 1.0 / 9.0, &[(1, 0)]),
        ((2, 0), 1.0 / 3.0, &[(2, 1)]),
        ((2, 2), 1.0, &[(1, 1)]),
        ((2, 2), 1.0, &[(0, 0)]),
        ((2, 2), 1.0 / 3.0, &[(2, 2)]),
        ((2, 4), 1.0 / 3.0, &[(2, 0)]),
        ((4, 0), 5.0 / 9.0, &[(0, 1)]),
        ((4, 2), 5.0 / 9.0, &[(0, 2)]),
        ((4, 4), 5.0 / 9.0, &[(0, 0)]),
    ])
}

pub fn max_block_deviation(got: &BTreeMap<(u32, u32), CMat>, want: &Blocks) -> f64 {
    let mut worst: f64 = 0.0;
    for (key, w) in want {
        let g = got.get(key).unwrap_or_else(|| panic!("missing block {key:?}"));
        assert_eq!(g.shape(), w.shape(), "block {key:?}");
        worst = worst.max((g - w).iter().map(|z| z.norm()).fold(0.0, f64::max));
    }
    worst
}
