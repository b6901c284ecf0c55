// SPDX-License-Identifier: MIT OR Apache-2.0

//! Tensor-train arithmetic against dense references.

use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tthjb::oracles::random_tt;
use tthjb::tt_core::checkpoint::{decode, encode, read_file, write_file, MAGIC, VERSION};
use tthjb::tt_core::{laplace_like_sum, Core, DenseTensor, RoundMode, TensorTrain};
use tthjb::Error;

fn random_dense(sizes: &[usize], seed: u64) -> DenseTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DenseTensor::from_fn(sizes.to_vec(), |_| rng.random_range(-1.0..1.0)).unwrap()
}

fn random_matrix(r: usize, c: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

fn outer(vs: &[Vec<f64>]) -> DenseTensor {
    let sizes: Vec<usize> = vs.iter().map(Vec::len).collect();
    DenseTensor::from_fn(sizes, |idx| idx.iter().zip(vs).map(|(&i, v)| v[i]).product()).unwrap()
}

#[test]
fn zero_tensor_from_dense_has_unit_ranks() {
    let z = DenseTensor::zeros(vec![2, 2, 2]).unwrap();
    let tt = TensorTrain::from_dense(&z, 0.0).unwrap();
    assert_eq!(tt.ranks(), vec![1, 1, 1, 1]);
    assert!(tt.cores().iter().all(|c| c.data().iter().all(|&v| v == 0.0)));
    let r = tt.round(&RoundMode::Tol(1e-8)).unwrap();
    assert_eq!(r, tt);
}

#[test]
fn outer_product_compresses_to_rank_one() {
    let vs = vec![vec![1.0, -2.0, 0.5], vec![0.3, 0.7], vec![2.0, 1.0, -1.0, 0.25]];
    let tt = TensorTrain::from_dense(&outer(&vs), 1e-12).unwrap();
    assert_eq!(tt.ranks(), vec![1, 1, 1, 1]);
    let rank_one = TensorTrain::rank_one(&vs).unwrap();
    assert!(rank_one.to_dense().unwrap().rel_dist(&outer(&vs)) < 1e-15);
}

#[test]
fn dense_round_trip_at_zero_tolerance() {
    let t = random_dense(&[3, 3, 3, 3], 1);
    let tt = TensorTrain::from_dense(&t, 0.0).unwrap();
    assert!(tt.to_dense().unwrap().rel_dist(&t) <= 1e-12);
}

#[test]
fn from_dense_respects_tolerance() {
    let t = random_dense(&[4, 3, 5, 2], 2);
    for tol in [1e-1, 1e-2, 0.3] {
        let tt = TensorTrain::from_dense(&t, tol).unwrap();
        assert!(tt.to_dense().unwrap().rel_dist(&t) <= tol * (1.0 + 1e-10));
    }
}

#[test]
fn dense_size_guard() {
    let tt = TensorTrain::zeros(&[100, 100, 100, 100]);
    assert!(matches!(tt.to_dense(), Err(Error::SizeGuard { .. })));
}

#[test]
fn sum_of_rank_one_trains_is_sum_of_outer_products() {
    let u = vec![vec![1.0, 2.0], vec![0.5, -1.0, 3.0]];
    let v = vec![vec![-1.0, 0.25], vec![2.0, 2.0, 1.0]];
    let s = TensorTrain::rank_one(&u).unwrap().add_scaled(&TensorTrain::rank_one(&v).unwrap(), 1.0).unwrap();
    let expect = outer(&u).add_scaled(&outer(&v), 1.0).unwrap();
    assert!(s.to_dense().unwrap().rel_dist(&expect) < 1e-15);
    assert_eq!(s.ranks(), vec![1, 2, 1]);
}

#[test]
fn add_scaled_identities() {
    let a = random_tt(&[3, 4, 2], &[2, 3], 3).unwrap();
    let b = random_tt(&[3, 4, 2], &[3, 2], 4).unwrap();
    let (ad, bd) = (a.to_dense().unwrap(), b.to_dense().unwrap());
    assert!(a.add_scaled(&b, 0.0).unwrap().to_dense().unwrap().rel_dist(&ad) < 1e-15);
    assert!(a.add_scaled(&a, -1.0).unwrap().norm() <= 1e-12 * a.norm());
    let s = a.add_scaled(&b, 2.5).unwrap();
    assert_eq!(s.ranks(), vec![1, 5, 5, 1]);
    assert!(s.to_dense().unwrap().rel_dist(&ad.add_scaled(&bd, 2.5).unwrap()) <= 1e-12);
}

#[test]
fn add_scaled_rejects_shape_mismatch() {
    let a = random_tt(&[3, 4], &[2], 3).unwrap();
    let b = random_tt(&[3, 5], &[2], 4).unwrap();
    assert!(matches!(a.add_scaled(&b, 1.0), Err(Error::ShapeMismatch(_))));
}

#[test]
fn inner_products() {
    let e = TensorTrain::rank_one(&[vec![0.0, 1.0], vec![1.0, 0.0, 0.0]]).unwrap();
    assert_eq!(e.inner(&e).unwrap(), 1.0);
    let z = TensorTrain::zeros(&[2, 3]);
    assert_eq!(e.inner(&z).unwrap(), 0.0);
    let a = random_tt(&[3, 4, 5], &[2, 3], 5).unwrap();
    let b = random_tt(&[3, 4, 5], &[4, 2], 6).unwrap();
    let dense = a.to_dense().unwrap().dot(&b.to_dense().unwrap());
    assert!((a.inner(&b).unwrap() - dense).abs() <= 1e-12 * dense.abs());
    let n2 = a.to_dense().unwrap().norm().powi(2);
    assert!((a.inner(&a).unwrap() - n2).abs() <= 1e-12 * n2);
    assert!((a.norm() - n2.sqrt()).abs() <= 1e-12 * n2.sqrt());
}

#[test]
fn hidden_rank_deficiency_is_removed() {
    let u = vec![vec![1.0, 2.0, 3.0], vec![1.0, -1.0], vec![0.5, 0.5, 2.0]];
    let one = TensorTrain::rank_one(&u).unwrap();
    let doubled = one.add_scaled(&one, 1.0).unwrap();
    assert_eq!(doubled.interior_ranks(), vec![2, 2]);
    let r = doubled.round(&RoundMode::Tol(1e-12)).unwrap();
    assert_eq!(r.interior_ranks(), vec![1, 1]);
    assert!(r.to_dense().unwrap().rel_dist(&outer(&u).add_scaled(&outer(&u), 1.0).unwrap()) < 1e-12);
}

#[test]
fn matrix_rounding_matches_truncated_svd() {
    let m = random_matrix(6, 5, 7);
    let dense = DenseTensor::new(vec![6, 5], m.transpose().as_slice().to_vec()).unwrap();
    let tt = TensorTrain::from_dense(&dense, 0.0).unwrap();
    let sv = m.clone().svd(false, false).singular_values;
    for k in 1..5 {
        let r = tt.round(&RoundMode::MaxRanks(vec![k])).unwrap();
        let err = r.to_dense().unwrap().add_scaled(&dense, -1.0).unwrap().norm();
        let optimum: f64 = sv.iter().skip(k).map(|s| s * s).sum::<f64>().sqrt();
        assert_eq!(r.interior_ranks(), vec![k]);
        assert!((err - optimum).abs() <= 1e-12 * optimum.max(1.0), "k={k} err={err} opt={optimum}");
    }
}

#[test]
fn zero_tolerance_rounding_is_exact() {
    let a = random_tt(&[3, 3, 4], &[2, 3], 8).unwrap();
    let r = a.round(&RoundMode::Tol(0.0)).unwrap();
    assert!(r.to_dense().unwrap().rel_dist(&a.to_dense().unwrap()) < 1e-13);
}

#[test]
fn rounding_reports_discarded_norm() {
    let a = random_tt(&[4, 4, 4, 4], &[4, 5, 4], 9).unwrap();
    let out = a.round_with_error(&RoundMode::MaxRanks(vec![2, 2, 2])).unwrap();
    let err = out.tt.to_dense().unwrap().add_scaled(&a.to_dense().unwrap(), -1.0).unwrap().norm();
    assert!((out.error - err).abs() <= 1e-10 * a.norm());
    assert!((out.norm - a.norm()).abs() <= 1e-12 * a.norm());
}

#[test]
fn mode_vector_contraction() {
    let a = random_tt(&[3, 4, 2], &[2, 3], 10).unwrap();
    let dense = a.to_dense().unwrap();
    let e = |n: usize, i: usize| {
        let mut v = vec![0.0; n];
        v[i] = 1.0;
        v
    };
    let (v0, v1, v2) = (e(3, 2), e(4, 1), e(2, 0));
    assert_eq!(a.contract_mode_vectors(&[&v0, &v1, &v2]).unwrap(), dense.get(&[2, 1, 0]));
    let (z0, z1, z2) = (vec![0.0; 3], vec![0.0; 4], vec![0.0; 2]);
    assert_eq!(a.contract_mode_vectors(&[&z0, &z1, &z2]).unwrap(), 0.0);
    let vs = [vec![0.3, -1.0, 2.0], vec![1.0, 0.5, -0.5, 0.25], vec![-2.0, 0.7]];
    let refs: Vec<&[f64]> = vs.iter().map(|v| v.as_slice()).collect();
    let expect = dense.dot(&outer(&vs));
    assert!((a.contract_mode_vectors(&refs).unwrap() - expect).abs() <= 1e-12 * expect.abs());
    assert!(a.contract_mode_vectors(&refs[..2]).is_err());
}

#[test]
fn single_mode_matrix_action() {
    let a = random_tt(&[3, 4, 2], &[2, 3], 11).unwrap();
    let ad = a.to_dense().unwrap();
    let id = a.apply_mode_matrix(1, &DMatrix::identity(4, 4)).unwrap();
    assert!(id.to_dense().unwrap().rel_dist(&ad) < 1e-15);
    assert_eq!(a.apply_mode_matrix(1, &DMatrix::zeros(4, 4)).unwrap().norm(), 0.0);
    let m = random_matrix(6, 4, 12);
    let out = a.apply_mode_matrix(1, &m).unwrap();
    assert_eq!(out.ranks(), a.ranks());
    assert_eq!(out.mode_sizes(), vec![3, 6, 2]);
    assert!(out.to_dense().unwrap().rel_dist(&ad.mode_product(1, &m).unwrap()) <= 1e-12);
    assert!(a.apply_mode_matrix(0, &m).is_err());
}

#[test]
fn laplace_like_application() {
    let a = random_tt(&[3, 4, 2], &[2, 3], 13).unwrap();
    let ad = a.to_dense().unwrap();
    let ms: Vec<DMatrix<f64>> = [3, 4, 2].iter().enumerate().map(|(k, &n)| random_matrix(n, n, 20 + k as u64)).collect();
    let out = a.laplace_like_apply(&ms).unwrap();
    assert_eq!(out.interior_ranks(), vec![4, 6]);
    let mut expect = DenseTensor::zeros(vec![3, 4, 2]).unwrap();
    for (k, m) in ms.iter().enumerate() {
        expect = expect.add_scaled(&ad.mode_product(k, m).unwrap(), 1.0).unwrap();
    }
    assert!(out.to_dense().unwrap().rel_dist(&expect) <= 1e-12);
    let zeros: Vec<DMatrix<f64>> = [3, 4, 2].iter().map(|&n| DMatrix::zeros(n, n)).collect();
    assert_eq!(a.laplace_like_apply(&zeros).unwrap().norm(), 0.0);
    let b = random_tt(&[5], &[], 14).unwrap();
    let m = random_matrix(5, 5, 15);
    let one = b.laplace_like_apply(&[m.clone()]).unwrap();
    assert!(one.to_dense().unwrap().rel_dist(&b.apply_mode_matrix(0, &m).unwrap().to_dense().unwrap()) < 1e-15);
}

#[test]
fn laplace_like_sum_of_cores() {
    let base = random_tt(&[2, 3, 2], &[2, 2], 16).unwrap();
    let modified = random_tt(&[2, 3, 2], &[2, 2], 17).unwrap();
    let s = laplace_like_sum(base.cores(), modified.cores()).unwrap();
    let mut expect = DenseTensor::zeros(vec![2, 3, 2]).unwrap();
    for k in 0..3 {
        let mut cores: Vec<Core> = base.cores().to_vec();
        cores[k] = modified.core(k).clone();
        expect = expect.add_scaled(&TensorTrain::new(cores).unwrap().to_dense().unwrap(), 1.0).unwrap();
    }
    assert!(s.to_dense().unwrap().rel_dist(&expect) <= 1e-12);
}

#[test]
fn inconsistent_core_chain_is_rejected() {
    let c0 = Core::zeros(1, 2, 2);
    let c1 = Core::zeros(3, 2, 1);
    assert!(TensorTrain::new(vec![c0, c1]).is_err());
    assert!(Core::from_vec(1, 2, 1, vec![1.0]).is_err());
    let nan = Core::from_vec(1, 2, 1, vec![1.0, f64::NAN]).unwrap();
    assert!(TensorTrain::new(vec![nan]).is_err());
}

#[test]
fn orthogonalized_cores_are_orthonormal() {
    let a = random_tt(&[3, 4, 4, 2], &[3, 4, 2], 18).unwrap();
    let r = a.right_orthogonalized();
    for c in &r.cores()[1..] {
        let u = c.right_unfolding();
        assert!((&u * u.transpose() - DMatrix::identity(u.nrows(), u.nrows())).amax() < 1e-12);
    }
    let l = a.orthogonalized_at(2);
    for c in &l.cores()[..2] {
        let u = c.left_unfolding();
        assert!((u.transpose() * &u - DMatrix::identity(u.ncols(), u.ncols())).amax() < 1e-12);
    }
    assert!(l.to_dense().unwrap().rel_dist(&a.to_dense().unwrap()) < 1e-13);
}

#[test]
fn checkpoint_round_trip_is_bitwise() {
    let a = random_tt(&[3, 5, 2], &[2, 3], 19).unwrap();
    let bytes = encode(&a, 0.125);
    assert_eq!(&bytes[..4], MAGIC);
    assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), VERSION);
    let (b, t) = decode(&bytes).unwrap();
    assert_eq!(t, 0.125);
    for (x, y) in a.cores().iter().zip(b.cores()) {
        assert!(x.data().iter().zip(y.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.ttck");
    write_file(&path, &a, 3.5).unwrap();
    let (c, t) = read_file(&path).unwrap();
    assert_eq!((c, t), (a, 3.5));
}

#[test]
fn checkpoint_rejects_corruption() {
    let a = random_tt(&[3, 2], &[2], 20).unwrap();
    let bytes = encode(&a, 1.0);
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(decode(&bad).is_err());
    assert!(decode(&bytes[..bytes.len() - 1]).is_err());
    let mut version = bytes.clone();
    version[4] = 99;
    assert!(decode(&version).is_err());
}

/// Running sums of rank-one terms produce exactly rank-deficient unfoldings with
/// zero rows; rounding at tolerance 0 must reproduce them to round-off.
#[test]
fn rounding_of_rank_deficient_sums_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let d = 10;
    let mut acc = TensorTrain::zeros(&[3; 10]);
    let mut exact = DenseTensor::zeros(vec![3; d]).unwrap();
    for step in 0..12 {
        let vs: Vec<Vec<f64>> = (0..d).map(|_| (0..3).map(|_| rng.random_range(-3.0..3.0)).collect()).collect();
        let term = TensorTrain::rank_one(&vs).unwrap();
        exact = exact.add_scaled(&term.to_dense().unwrap(), 1.0).unwrap();
        acc = acc.add_scaled(&term, 1.0).unwrap().round(&RoundMode::Tol(0.0)).unwrap();
        assert!(acc.to_dense().unwrap().rel_dist(&exact) <= 1e-13, "step {step}");
        // generic terms: each unfolding rank is the term count, capped by its shape
        let expect: Vec<usize> = (0..d - 1)
            .map(|k| (step + 1).min(3usize.pow(k as u32 + 1)).min(3usize.pow((d - k - 1) as u32)))
            .collect();
        assert_eq!(acc.round(&RoundMode::Tol(1e-12)).unwrap().interior_ranks(), expect, "step {step}");
    }
}

/// A 6×2 rank-one unfolding with zero rows, as met in the sum above.
#[test]
fn rounding_handles_rank_one_unfolding_with_zero_rows() {
    let col = [156.0741653682109, -161.05924359817877, -63.313781035010166, 0.0, 0.0, 0.0];
    let ratio = 243.07;
    let mut core = Core::zeros(2, 3, 2);
    for (row, v) in col.iter().enumerate() {
        let (a, i) = (row / 3, row % 3);
        core.set(a, i, 0, *v);
        core.set(a, i, 1, v * ratio);
    }
    let first = Core::from_vec(1, 2, 2, vec![1.0, 0.3, -0.2, 0.7]).unwrap();
    let last = Core::from_vec(2, 2, 1, vec![0.5, -1.0, 2.0, 0.25]).unwrap();
    let tt = TensorTrain::new(vec![first, core, last]).unwrap();
    let rounded = tt.round(&RoundMode::Tol(1e-12)).unwrap();
    assert!(rounded.to_dense().unwrap().rel_dist(&tt.to_dense().unwrap()) <= 1e-12);
    assert_eq!(rounded.interior_ranks()[1], 1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn add_scaled_is_dense_linear(seed in 0u64..1000, c in -3.0f64..3.0) {
        let a = random_tt(&[2, 3, 2, 3], &[2, 2, 3], seed).unwrap();
        let b = random_tt(&[2, 3, 2, 3], &[3, 1, 2], seed + 5000).unwrap();
        let lhs = a.add_scaled(&b, c).unwrap().to_dense().unwrap();
        let rhs = a.to_dense().unwrap().add_scaled(&b.to_dense().unwrap(), c).unwrap();
        prop_assert!(lhs.rel_dist(&rhs) <= 1e-12);
    }

    #[test]
    fn rounding_error_and_ranks_bounded(seed in 0u64..1000, tol in 1e-6f64..0.5) {
        let a = random_tt(&[3, 3, 3, 3], &[3, 4, 3], seed).unwrap();
        let r = a.round(&RoundMode::Tol(tol)).unwrap();
        let err = r.to_dense().unwrap().add_scaled(&a.to_dense().unwrap(), -1.0).unwrap().norm();
        prop_assert!(err <= tol * a.norm() * (1.0 + 1e-10));
        for (x, y) in r.ranks().iter().zip(a.ranks()) {
            prop_assert!(*x <= y);
        }
    }

    #[test]
    fn laplace_like_doubles_ranks(seed in 0u64..1000, r1 in 1usize..4, r2 in 1usize..4) {
        let a = random_tt(&[3, 3, 3], &[r1, r2], seed).unwrap();
        let ms: Vec<DMatrix<f64>> = (0..3).map(|k| random_matrix(3, 3, seed * 7 + k)).collect();
        prop_assert_eq!(a.laplace_like_apply(&ms).unwrap().interior_ranks(), vec![2 * r1, 2 * r2]);
    }

    #[test]
    fn self_inner_is_squared_norm(seed in 0u64..1000) {
        let a = random_tt(&[2, 4, 3], &[2, 3], seed).unwrap();
        let n2 = a.to_dense().unwrap().norm().powi(2);
        let ip = a.inner(&a).unwrap();
        prop_assert!(ip >= 0.0);
        prop_assert!((ip - n2).abs() <= 1e-12 * n2);
    }
}
