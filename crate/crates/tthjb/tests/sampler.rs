// SPDX-License-Identifier: MIT OR Apache-2.0

//! Score evaluation from TT snapshots and the reverse-time sampler.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tthjb::cli::diagonal_snapshot;
use tthjb::hjb_operators::{build_potential_tt, PotentialSpec};
use tthjb::integrator::SolutionSnapshot;
use tthjb::oracles::{quadratic_tt_cores, random_tt, GaussianScore};
use tthjb::poly_basis::PolySpace;
use tthjb::sampler::{
    covariance_error, eval_v, grad_v, grad_v_into, metadata, reverse_sample_on_grid, GradScratch, LangevinTarget,
    SampleBatch, SamplerConfig, ScoreField,
};
use tthjb::Error;

fn uniform_grid(t_final: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|k| t_final * k as f64 / n as f64).collect()
}

fn doublewell_snapshot() -> (SolutionSnapshot, PolySpace) {
    let spec = PotentialSpec {
        terms: vec![],
        builtins: vec![PotentialSpec::builtin("doublewell", vec![0, 1])],
    };
    let space = PolySpace::new(&[(-2.0, 2.0); 2], &[4, 4]).unwrap();
    let tt = build_potential_tt(&spec, &space, 1e-14).unwrap();
    (SolutionSnapshot::new(0.0, tt), space)
}

/// Dense evaluation `Σ_α A[α] ∏ p_{α_i}(x_i)`.
fn dense_eval(snap: &SolutionSnapshot, space: &PolySpace, x: &[f64]) -> f64 {
    let dense = snap.coeffs.to_dense().unwrap();
    let vals: Vec<Vec<f64>> = space.bases().iter().zip(x).map(|(b, &xi)| b.evaluate(xi)).collect();
    let mut idx = vec![0; x.len()];
    let mut total = 0.0;
    for (flat, &c) in dense.entries().iter().enumerate() {
        dense.unflatten_into(flat, &mut idx);
        total += c * idx.iter().enumerate().map(|(k, &i)| vals[k][i]).product::<f64>();
    }
    total
}

#[test]
fn value_examples() {
    let (snap, space) = diagonal_snapshot(&[1.0, 1.0, 1.0]).unwrap();
    assert!((eval_v(&snap, &space, &[1.0, 1.0, 1.0]) - 1.5).abs() < 1e-12);
    assert!(eval_v(&snap, &space, &[0.0, 0.0, 0.0]).abs() < 1e-12);
    let space = PolySpace::new(&[(-1.0, 2.0), (-3.0, 0.5), (0.0, 1.0)], &[3, 2, 3]).unwrap();
    let a = random_tt(&space.mode_sizes(), &[2, 3], 7).unwrap();
    let snap = SolutionSnapshot::new(0.0, a);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..20 {
        let x: Vec<f64> = space.intervals().iter().map(|&(lo, hi)| rng.random_range(lo..hi)).collect();
        let dense = dense_eval(&snap, &space, &x);
        assert!((eval_v(&snap, &space, &x) - dense).abs() <= 1e-10 * (1.0 + dense.abs()));
    }
}

#[test]
fn gradient_examples() {
    let (snap, space) = diagonal_snapshot(&[1.0, 1.0, 1.0]).unwrap();
    let g = grad_v(&snap, &space, &[0.3, -1.2, 2.0]);
    for (gi, xi) in g.iter().zip([0.3, -1.2, 2.0]) {
        assert!((gi - xi).abs() < 1e-12);
    }
    let (snap, space) = doublewell_snapshot();
    let g = grad_v(&snap, &space, &[1.0, 1.0]);
    assert!((g[0] + 4.4).abs() < 1e-11 && (g[1] + 3.9).abs() < 1e-11, "{g:?}");
}

#[test]
fn gradient_matches_finite_differences() {
    let space = PolySpace::new(&[(-2.0, 2.0), (-1.0, 3.0), (-4.0, 0.0), (0.0, 1.0)], &[4, 3, 5, 2]).unwrap();
    let snap = SolutionSnapshot::new(0.0, random_tt(&space.mode_sizes(), &[3, 2, 2], 9).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let h = 1e-6;
    for _ in 0..50 {
        let x: Vec<f64> = space.intervals().iter().map(|&(lo, hi)| rng.random_range(lo..hi)).collect();
        let g = grad_v(&snap, &space, &x);
        for k in 0..x.len() {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp[k] += h;
            xm[k] -= h;
            let fd = (eval_v(&snap, &space, &xp) - eval_v(&snap, &space, &xm)) / (2.0 * h);
            assert!((fd - g[k]).abs() <= 1e-5 * (1.0 + g[k].abs()), "k={k}: {fd} vs {}", g[k]);
        }
    }
}

#[test]
fn gradient_buffers_match_allocating_path() {
    let space = PolySpace::new(&[(-2.0, 2.0); 3], &[4, 4, 4]).unwrap();
    let mut scratch = GradScratch::default();
    let mut out = vec![0.0; 3];
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    // reuse one scratch across snapshots of different ranks and degrees
    for (seed, ranks, degrees) in [(1, [2, 3], [4, 4, 4]), (2, [1, 1], [2, 3, 4]), (3, [4, 2], [4, 1, 3])] {
        let sizes: Vec<usize> = degrees.iter().map(|n| n + 1).collect();
        let snap = SolutionSnapshot::new(0.0, random_tt(&sizes, &ranks, seed).unwrap());
        let sp = snap.space(&space).unwrap();
        for _ in 0..10 {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-2.5..2.5)).collect();
            grad_v_into(&snap, &sp, &x, &mut scratch, &mut out);
            assert_eq!(out, grad_v(&snap, &sp, &x));
        }
    }
}

#[test]
fn covariance_error_examples() {
    let (snap, space) = diagonal_snapshot(&[1.0, 1.0]).unwrap();
    assert!(covariance_error(&snap, &space).unwrap() < 1e-12);
    let sigma_inv = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
    let space = PolySpace::new(&[(-3.0, 3.0); 2], &[2, 2]).unwrap();
    let snap = SolutionSnapshot::new(0.0, quadratic_tt_cores(&sigma_inv, &space).unwrap());
    let expect = (&sigma_inv - DMatrix::identity(2, 2) * 0.5).norm() / (DMatrix::<f64>::identity(2, 2) * 0.5).norm();
    assert!((covariance_error(&snap, &space).unwrap() - expect).abs() < 1e-12);
}

#[test]
fn config_validation() {
    assert!(SamplerConfig::new(1.5, 10, 0).validate().is_err());
    assert!(SamplerConfig::new(-0.1, 10, 0).validate().is_err());
    let mut c = SamplerConfig::new(0.5, 10, 0);
    c.langevin_steps = 3;
    assert!(c.validate().is_err());
    c.langevin_tau = 0.01;
    assert!(c.validate().is_ok());
    assert_eq!(c.langevin_target, LangevinTarget::PostStep);
    let score = GaussianScore::new(DMatrix::from_element(1, 1, 0.5)).unwrap();
    let bad_grid = [0.0, 1.0, 1.0];
    assert!(reverse_sample_on_grid(&score, &bad_grid, &SamplerConfig::new(0.0, 4, 0)).is_err());
}

#[test]
fn zero_particles_give_header_only_csv() {
    let score = GaussianScore::new(DMatrix::identity(2, 2) * 0.5).unwrap();
    let batch = reverse_sample_on_grid(&score, &uniform_grid(1.0, 10), &SamplerConfig::new(0.0, 0, 1)).unwrap();
    assert!(batch.is_empty());
    let mut out = Vec::new();
    batch.write_csv(&mut out).unwrap();
    assert_eq!(String::from_utf8(out).unwrap(), "x1,x2,flags\n");
}

#[test]
fn csv_layout_and_flags() {
    let batch = SampleBatch {
        d: 2,
        samples: vec![0.5, -1.0, f64::NAN, 2.0],
        out_of_domain: vec![3, 0],
        aborted: vec![false, true],
    };
    let mut out = Vec::new();
    batch.write_csv(&mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "x1,x2,flags");
    assert!(lines[1].ends_with(",3"));
    assert!(lines[2].ends_with(",-1"));
    let first: Vec<f64> = lines[1].split(',').take(2).map(|v| v.parse().unwrap()).collect();
    assert_eq!(first, vec![0.5, -1.0]);
}

#[test]
fn sampling_is_seeded_and_parallel_safe() {
    let score = GaussianScore::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 0.4])).unwrap();
    let grid = uniform_grid(2.0, 40);
    let mut cfg = SamplerConfig::new(0.3, 64, 42);
    cfg.langevin_steps = 2;
    cfg.langevin_tau = 0.01;
    let a = reverse_sample_on_grid(&score, &grid, &cfg).unwrap();
    let b = reverse_sample_on_grid(&score, &grid, &cfg).unwrap();
    assert_eq!(a, b);
    cfg.seed = 43;
    assert_ne!(a.samples, reverse_sample_on_grid(&score, &grid, &cfg).unwrap().samples);
    // a particle's path depends only on its own stream
    cfg.seed = 42;
    cfg.n_particles = 16;
    let prefix = reverse_sample_on_grid(&score, &grid, &cfg).unwrap();
    assert_eq!(prefix.samples[..], a.samples[..16 * 2]);
    let meta = metadata(&a, &cfg, &grid);
    assert_eq!(meta.grid, grid);
    assert_eq!(meta.aborted, 0);
}

#[test]
fn flow_ode_is_deterministic_given_initial_draws() {
    let score = GaussianScore::new(DMatrix::from_element(1, 1, 0.25)).unwrap();
    let grid = uniform_grid(3.0, 300);
    let a = reverse_sample_on_grid(&score, &grid, &SamplerConfig::new(1.0, 100, 5)).unwrap();
    let b = reverse_sample_on_grid(&score, &grid, &SamplerConfig::new(1.0, 100, 5)).unwrap();
    assert_eq!(a, b);
    // the flow is monotone in one dimension: particle order is preserved
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    rng.set_stream(0);
    let z0: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    rng.set_stream(1);
    let z1: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng);
    assert_eq!((z0 < z1), (a.samples[0] < a.samples[1]));
}

#[test]
fn moderate_gaussian_statistics() {
    // target variance c = 2: Φ(x) = x²/(2c)
    let c = 2.0;
    let grid = uniform_grid(6.0, 1500);
    let score = GaussianScore::with_times(DMatrix::from_element(1, 1, 1.0 / (2.0 * c)), &grid).unwrap();
    let n = 20_000;
    for lambda in [0.0, 0.5, 1.0] {
        let batch = reverse_sample_on_grid(&score, &grid, &SamplerConfig::new(lambda, n, 17)).unwrap();
        let mean = batch.samples.iter().sum::<f64>() / n as f64;
        let var = batch.samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = c * (2.0 / (n - 1) as f64).sqrt();
        assert!((var - c).abs() <= 4.0 * se, "lambda {lambda}: var {var}");
    }
}

/// Score that diverges on part of the space.
struct Blowup {
    threshold: f64,
}

impl ScoreField for Blowup {
    fn dim(&self) -> usize {
        1
    }

    fn grad(&self, _t: f64, x: &[f64], out: &mut [f64]) -> tthjb::Result<u64> {
        out[0] = if x[0] > self.threshold { f64::NAN } else { x[0] };
        Ok(0)
    }
}

#[test]
fn non_finite_particles_are_flagged_then_abort_the_run() {
    let grid = uniform_grid(1.0, 5);
    let few = reverse_sample_on_grid(&Blowup { threshold: 2.5 }, &grid, &SamplerConfig::new(0.0, 2000, 3)).unwrap();
    let flagged = few.aborted.iter().filter(|&&a| a).count();
    assert!(flagged > 0 && flagged * 10 <= 2000, "{flagged}");
    let mut out = Vec::new();
    few.write_csv(&mut out).unwrap();
    assert_eq!(String::from_utf8(out).unwrap().lines().filter(|l| l.ends_with(",-1")).count(), flagged);
    let many = reverse_sample_on_grid(&Blowup { threshold: 0.0 }, &grid, &SamplerConfig::new(0.0, 2000, 3));
    assert!(matches!(many, Err(Error::SamplerAbort { .. })));
}

#[test]
fn clamping_keeps_particles_in_the_domain() {
    let (snap, space) = diagonal_snapshot(&[1.0]).unwrap();
    let traj_space = space.clone();
    struct Fixed(SolutionSnapshot, PolySpace);
    impl ScoreField for Fixed {
        fn dim(&self) -> usize {
            1
        }
        fn grad(&self, _t: f64, x: &[f64], out: &mut [f64]) -> tthjb::Result<u64> {
            out.copy_from_slice(&grad_v(&self.0, &self.1, x));
            Ok(tthjb::sampler::out_of_domain_count(&self.1, x))
        }
        fn domain(&self) -> Option<Vec<(f64, f64)>> {
            Some(self.1.intervals())
        }
    }
    let score = Fixed(snap, traj_space);
    let grid = uniform_grid(1.0, 20);
    let mut cfg = SamplerConfig::new(0.0, 500, 4);
    cfg.clamp_to_domain = true;
    let batch = reverse_sample_on_grid(&score, &grid, &cfg).unwrap();
    assert!(batch.samples.iter().all(|x| (-3.0..=3.0).contains(x)));
    // only the initial draw, scored before the first clamp, can lie outside
    assert!(batch.out_of_domain.iter().all(|&c| c <= 1));
}
