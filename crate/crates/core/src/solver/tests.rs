use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::model::{cost, CoupledDataset, Dims, PartitionedFactors, Ranks, SolverConfig};
use crate::tensor::{khatri_rao, Tensor3};

fn random_theta(dims: &Dims, ranks: &Ranks, seed: u64) -> PartitionedFactors {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut th = PartitionedFactors::zeros(dims, ranks);
    let mut fill = |m: &mut DMatrix<f64>| m.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
    fill(&mut th.s_shared);
    fill(&mut th.v_shared);
    for k in 0..dims.datasets() {
        fill(&mut th.s_distinct[k]);
        fill(&mut th.v_distinct[k]);
        fill(&mut th.t_shared[k]);
        fill(&mut th.t_distinct[k]);
    }
    th
}

fn random_data(dims: &Dims, seed: u64) -> CoupledDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    CoupledDataset::new(
        dims.times
            .iter()
            .map(|&t| Tensor3::from_fn([dims.subjects, dims.voxels, t], |_, _, _| rng.random_range(-1.0..1.0)).unwrap())
            .collect(),
    )
    .unwrap()
}

fn exact_data(theta: &PartitionedFactors) -> CoupledDataset {
    CoupledDataset::new((0..theta.datasets()).map(|k| theta.reconstruct(k).unwrap()).collect()).unwrap()
}

fn small() -> (Dims, Ranks) {
    (
        Dims { subjects: 6, voxels: 7, times: vec![2, 3] },
        Ranks::new(1, vec![1, 2]).unwrap(),
    )
}

#[test]
fn init_is_deterministic_and_unit_norm() {
    let (dims, ranks) = small();
    let a = init_random(&dims, &ranks, 7);
    assert_eq!(a, init_random(&dims, &ranks, 7));
    assert_ne!(a, init_random(&dims, &ranks, 8));
    for seed in 0..1000 {
        let th = init_random(&dims, &ranks, seed);
        let mut blocks = vec![&th.s_shared, &th.v_shared];
        for k in 0..2 {
            blocks.extend([&th.s_distinct[k], &th.v_distinct[k], &th.t_shared[k], &th.t_distinct[k]]);
        }
        for m in blocks {
            for c in m.column_iter() {
                assert!((c.norm() - 1.0).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn single_dataset_subject_update_is_cp_als_step() {
    let dims = Dims { subjects: 5, voxels: 6, times: vec![4] };
    let ranks = Ranks::new(1, vec![2]).unwrap();
    let data = random_data(&dims, 1);
    let mut th = random_theta(&dims, &ranks, 2);
    let (_, v, t) = th.assemble(0).unwrap();
    let w = khatri_rao(&t, &v).unwrap();
    let oracle = data.tensor(0).unfold(1).unwrap() * &w * (w.tr_mul(&w)).try_inverse().unwrap();
    update_subjects(&mut th, &data);
    let got = th.assembled_subjects(0);
    assert!((got - oracle).abs().max() < 1e-10);
}

#[test]
fn exact_data_is_interpolated_in_one_update() {
    let (dims, ranks) = small();
    let truth = random_theta(&dims, &ranks, 3);
    let data = exact_data(&truth);

    let mut th = truth.clone();
    let scrambled = random_theta(&dims, &ranks, 4);
    th.s_shared = scrambled.s_shared.clone();
    th.s_distinct = scrambled.s_distinct.clone();
    update_subjects(&mut th, &data);
    assert!((&th.s_shared - &truth.s_shared).abs().max() < 1e-8);
    for k in 0..2 {
        assert!((&th.s_distinct[k] - &truth.s_distinct[k]).abs().max() < 1e-8);
    }

    let mut th = truth.clone();
    th.t_shared = scrambled.t_shared.clone();
    th.t_distinct = scrambled.t_distinct.clone();
    update_times(&mut th, &data);
    for k in 0..2 {
        assert!((&th.t_shared[k] - &truth.t_shared[k]).abs().max() < 1e-8);
        assert!((&th.t_distinct[k] - &truth.t_distinct[k]).abs().max() < 1e-8);
    }
}

#[test]
fn time_update_matches_independent_oracles() {
    let (dims, ranks) = small();
    let data = random_data(&dims, 5);
    let mut th = random_theta(&dims, &ranks, 6);
    let before = th.clone();
    update_times(&mut th, &data);
    for k in 0..2 {
        let (s, v, _) = before.assemble(k).unwrap();
        let w = khatri_rao(&v, &s).unwrap();
        let oracle = data.tensor(k).unfold(3).unwrap() * &w * (w.tr_mul(&w)).try_inverse().unwrap();
        assert!((th.assembled_times(k) - oracle).abs().max() < 1e-9);
    }
}

#[test]
fn block_updates_do_not_increase_cost() {
    let (dims, ranks) = small();
    for seed in 0..20 {
        let data = random_data(&dims, 100 + seed);
        let mut th = random_theta(&dims, &ranks, 200 + seed);
        for lambda in [0.0, 0.5] {
            let mut prev = cost(&th, &data, lambda).unwrap();
            for step in 0..3 {
                match step {
                    0 => update_subjects(&mut th, &data),
                    1 => update_voxels(&mut th, &data, lambda, &QnSettings::default()),
                    _ => update_times(&mut th, &data),
                };
                let now = cost(&th, &data, lambda).unwrap();
                assert!(now <= prev + 1e-9, "seed {seed} step {step}: {prev} -> {now}");
                prev = now;
            }
        }
    }
}

#[test]
fn quasi_newton_matches_exact_least_squares_without_penalty() {
    let (dims, ranks) = small();
    for seed in 0..5 {
        let data = random_data(&dims, 300 + seed);
        let start = random_theta(&dims, &ranks, 400 + seed);
        let mut exact = start.clone();
        update_voxels(&mut exact, &data, 0.0, &QnSettings::default());
        let mut qn = start.clone();
        let settings = QnSettings { memory: 10, max_inner: 2000 };
        update_voxels_quasi_newton(&mut qn, &data, 0.0, &settings);
        let scale = exact.v_shared.norm().max(1.0);
        assert!((&qn.v_shared - &exact.v_shared).norm() / scale < 1e-6);
        for k in 0..2 {
            let scale = exact.v_distinct[k].norm().max(1.0);
            assert!((&qn.v_distinct[k] - &exact.v_distinct[k]).norm() / scale < 1e-6);
        }
    }
}

#[test]
fn gradient_vanishes_at_exact_orthonormal_solution() {
    let (dims, ranks) = small();
    let mut truth = random_theta(&dims, &ranks, 9);
    // Columns e0 (shared), e1 (dataset 0), e2, e3 (dataset 1).
    let e = |i: usize| DMatrix::from_fn(7, 1, move |r, _| (r == i) as u8 as f64);
    truth.v_shared = e(0);
    truth.v_distinct[0] = e(1);
    truth.v_distinct[1] = nalgebra::stack![e(2), e(3)];
    let data = exact_data(&truth);
    for lambda in [0.0, 1.0, 1e3] {
        let (gs, gd) = voxel_gradient(&truth, &data, lambda);
        assert!(gs.abs().max() < 1e-8);
        assert!(gd.iter().all(|g| g.abs().max() < 1e-8));
    }
}

#[test]
fn gradient_matches_central_differences() {
    let (dims, ranks) = small();
    let data = random_data(&dims, 11);
    let th = random_theta(&dims, &ranks, 12);
    for lambda in [0.0, 1.0, 1e3] {
        let (gs, gd) = voxel_gradient(&th, &data, lambda);
        let h = 1e-6;
        let fd = |perturb: &dyn Fn(&mut PartitionedFactors, f64)| {
            let mut p = th.clone();
            perturb(&mut p, h);
            let mut m = th.clone();
            perturb(&mut m, -h);
            (cost(&p, &data, lambda).unwrap() - cost(&m, &data, lambda).unwrap()) / (2.0 * h)
        };
        let mut num = 0.0;
        let mut den = 0.0;
        for idx in 0..th.v_shared.len() {
            let d = fd(&|t: &mut PartitionedFactors, h| t.v_shared[idx] += h);
            num += (d - gs[idx]).powi(2);
            den += d * d;
        }
        for k in 0..2 {
            for idx in 0..th.v_distinct[k].len() {
                let d = fd(&|t: &mut PartitionedFactors, h| t.v_distinct[k][idx] += h);
                num += (d - gd[k][idx]).powi(2);
                den += d * d;
            }
        }
        assert!((num / den).sqrt() < 1e-5, "lambda {lambda}: {}", (num / den).sqrt());
    }
}

#[test]
fn one_iteration_gives_two_trace_entries() {
    let (dims, ranks) = small();
    let data = random_data(&dims, 13);
    let mut cfg = SolverConfig::new(ranks, 0.1);
    cfg.max_iters = 1;
    let res = bcd_solve(&data, &cfg).unwrap();
    assert_eq!(res.iterations, 1);
    assert_eq!(res.cost_trace.len(), 2);
    assert!(res.cost_trace[1] <= res.cost_trace[0]);
}

#[test]
fn loose_tolerance_converges_early() {
    let (dims, ranks) = small();
    let data = random_data(&dims, 14);
    let mut cfg = SolverConfig::new(ranks, 0.1);
    cfg.rel_tol = 1e-2;
    cfg.max_iters = 200;
    let res = bcd_solve(&data, &cfg).unwrap();
    assert!(res.converged);
    assert!(res.cost_trace.len() < 200);
}

#[test]
fn solve_is_deterministic_and_keeps_shared_columns() {
    let (dims, ranks) = small();
    let data = random_data(&dims, 15);
    let mut cfg = SolverConfig::new(ranks, 1.0);
    cfg.max_iters = 20;
    cfg.seed = 3;
    let a = bcd_solve(&data, &cfg).unwrap();
    let b = bcd_solve(&data, &cfg).unwrap();
    assert_eq!(a.cost_trace, b.cost_trace);
    assert_eq!(a.theta, b.theta);
    let init = init_random(&dims, &cfg.ranks, 3);
    bcd_solve_from(&data, &cfg, init, |ev| {
        let s0 = ev.theta.assembled_subjects(0);
        let s1 = ev.theta.assembled_subjects(1);
        assert_eq!(s0.columns(0, 1), s1.columns(0, 1));
        assert!(ev.cost_after <= ev.cost_before);
    })
    .unwrap();
}

#[test]
fn rank_mismatch_is_rejected() {
    let (dims, _) = small();
    let data = random_data(&dims, 16);
    let cfg = SolverConfig::new(Ranks::new(1, vec![1]).unwrap(), 0.0);
    assert!(bcd_solve(&data, &cfg).is_err());
}
