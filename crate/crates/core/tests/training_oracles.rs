use hbtrain_core::linalg::{self, c, max_abs_diff, CMat};
use hbtrain_core::model::{eigen_basis, CorrelationPair, EigenBasis, SystemConfig};
use hbtrain_core::rng::{self, Purpose, Stream};
use hbtrain_core::training::*;
use num_complex::Complex64;

fn toy_cfg(q: usize, energy: f64) -> SystemConfig {
    SystemConfig {
        n_tx: 4,
        n_rx: 4,
        n_rf: 2,
        q_slots: q,
        energy_budget: energy,
        n_streams: 2,
        rho: c(0.8, 0.0),
        ..SystemConfig::default()
    }
}

fn basis_of(cfg: &SystemConfig) -> EigenBasis {
    eigen_basis(&CorrelationPair::from_config(cfg).unwrap()).unwrap()
}

/// `Σ_q Σ_k (1/λ + α_q/σ²)^{-1}` for a given allocation.
fn objective(blocks: &[Vec<f64>], alloc: &[f64], s2: f64) -> f64 {
    blocks
        .iter()
        .zip(alloc)
        .map(|(b, a)| b.iter().map(|l| 1.0 / (1.0 / l + a / s2)).sum::<f64>())
        .sum()
}

/// Exhaustive minimizer over the budget simplex at resolution `energy/steps`.
fn grid_minimizer(blocks: &[Vec<f64>], energy: f64, s2: f64, steps: usize) -> Vec<f64> {
    fn rec(
        blocks: &[Vec<f64>],
        energy: f64,
        s2: f64,
        steps: usize,
        left: usize,
        cur: &mut Vec<f64>,
        best: &mut (f64, Vec<f64>),
    ) {
        if cur.len() + 1 == blocks.len() {
            cur.push(left as f64 * energy / steps as f64);
            let j = objective(blocks, cur, s2);
            if j < best.0 {
                *best = (j, cur.clone());
            }
            cur.pop();
            return;
        }
        for k in 0..=left {
            cur.push(k as f64 * energy / steps as f64);
            rec(blocks, energy, s2, steps, left - k, cur, best);
            cur.pop();
        }
    }
    let mut best = (f64::INFINITY, Vec::new());
    rec(blocks, energy, s2, steps, steps, &mut Vec::new(), &mut best);
    best.1
}

/// Golden-section refinement of a two-block split, used to sharpen the grid
/// answer to well below its resolution.
fn two_block_minimizer(blocks: &[Vec<f64>], energy: f64, s2: f64) -> f64 {
    let f = |a: f64| objective(blocks, &[a, energy - a], s2);
    let (mut lo, mut hi) = (0.0, energy);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..200 {
        let x1 = hi - g * (hi - lo);
        let x2 = lo + g * (hi - lo);
        if f(x1) <= f(x2) {
            hi = x2;
        } else {
            lo = x1;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn two_blocks_match_dense_grid() {
    let blocks = vec![vec![4.0], vec![1.0]];
    let spec = BlockSpectrum::from_blocks(blocks.clone()).unwrap();
    let sol = waterfill(&spec, 1.0, 1.0, 1e-12).unwrap();
    let grid = grid_minimizer(&blocks, 1.0, 1.0, 100_000);
    for (a, g) in sol.powers.iter().zip(&grid) {
        assert!((a - g).abs() < 1e-4, "{a} vs grid {g}");
    }
    // Stationarity with one block switched off gives (4, 1) → α = (1, 0) here.
    assert!((sol.powers[0] - two_block_minimizer(&blocks, 1.0, 1.0)).abs() < 1e-6);
}

#[test]
fn small_block_sets_match_grid() {
    let cases: Vec<(Vec<Vec<f64>>, f64, f64)> = vec![
        (vec![vec![2.0], vec![1.5], vec![0.4]], 3.0, 1.0),
        (vec![vec![1.2, 0.3], vec![0.9, 0.6], vec![0.2, 0.1]], 2.5, 0.5),
        (vec![vec![3.0], vec![2.0], vec![1.0], vec![0.5]], 4.0, 1.0),
        (vec![vec![1.0, 0.5], vec![0.8, 0.8], vec![0.6, 0.1], vec![0.3, 0.3]], 2.0, 1.0),
    ];
    for (blocks, energy, s2) in cases {
        let spec = BlockSpectrum::from_blocks(blocks.clone()).unwrap();
        let sol = waterfill(&spec, energy, s2, 1e-12).unwrap();
        let steps = if blocks.len() == 3 { 2000 } else { 400 };
        let grid = grid_minimizer(&blocks, energy, s2, steps);
        let j_wf = objective(&blocks, &sol.powers, s2);
        let j_grid = objective(&blocks, &grid, s2);
        assert!(j_wf <= j_grid + 1e-12, "{j_wf} > grid {j_grid}");
        let res = energy / steps as f64;
        for (a, g) in sol.powers.iter().zip(&grid) {
            assert!((a - g).abs() <= 2.0 * res, "{a} vs {g} at resolution {res}");
        }
    }
}

#[test]
fn kkt_and_budget_hold() {
    for &(rho, energy) in &[(0.8, 2.0), (0.5, 30.0), (0.95, 0.3), (0.2, 500.0)] {
        let cfg = SystemConfig {
            rho: c(rho, 0.0),
            ..toy_cfg(8, energy)
        };
        let spec = BlockSpectrum::from_basis(&basis_of(&cfg), 2).unwrap();
        let sol = waterfill(&spec, energy, 1.0, 1e-6).unwrap();
        let total: f64 = sol.powers.iter().sum();
        assert!((total - energy).abs() <= 1e-6 * energy, "budget {total} vs {energy}");
        for (eigs, &a) in spec.block_eigs.iter().zip(&sol.powers) {
            assert!(a >= 0.0);
            if a > 0.0 {
                let lhs: f64 = eigs.iter().map(|l| (1.0 / l + a).powi(-2)).sum();
                assert!((lhs - sol.mu0).abs() < 1e-8, "stationarity {lhs} vs {}", sol.mu0);
            } else {
                assert!(zero_power_threshold(eigs, 1.0) <= sol.mu0 + 1e-8);
            }
        }
    }
}

#[test]
fn powers_grow_with_budget() {
    let cfg = toy_cfg(8, 1.0);
    let spec = BlockSpectrum::from_basis(&basis_of(&cfg), 2).unwrap();
    let mut prev = waterfill(&spec, 0.1, 1.0, 1e-6).unwrap().powers;
    for e in [0.3, 1.0, 3.0, 10.0, 100.0] {
        let cur = waterfill(&spec, e, 1.0, 1e-6).unwrap().powers;
        for (a, b) in cur.iter().zip(&prev) {
            assert!(*a >= b - 1e-8, "{a} < {b} at E_T = {e}");
        }
        prev = cur;
    }
}

#[test]
fn stronger_proportional_block_gets_more() {
    let base = [1.0, 0.4, 0.2];
    let blocks: Vec<Vec<f64>> = [1.0, 0.7, 1.3, 0.2]
        .iter()
        .map(|s| base.iter().map(|l| l * s).collect())
        .collect();
    let spec = BlockSpectrum::from_blocks(blocks).unwrap();
    for e in [0.5, 3.0, 20.0] {
        let p = waterfill(&spec, e, 1.0, 1e-8).unwrap().powers;
        assert!(p[2] >= p[0] && p[0] >= p[1] && p[1] >= p[3], "{p:?}");
    }
}

#[test]
fn large_budget_spreads_evenly() {
    let cfg = toy_cfg(8, 1e5);
    let plan = design_training(&basis_of(&cfg), &cfg).unwrap();
    assert_eq!(plan.q_nz, 8);
    let p = plan.powers();
    let ratio = p.iter().cloned().fold(0.0, f64::max) / p.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(ratio < 1.01, "{ratio}");
}

#[test]
fn white_channel_full_plan() {
    let cfg = SystemConfig {
        rho: c(0.0, 0.0),
        ..toy_cfg(8, 16.0)
    };
    let b = basis_of(&cfg);
    let plan = design_training(&b, &cfg).unwrap();
    let mut covered = CMat::zeros(4, 4);
    for s in &plan.slots {
        assert!((s.power - 2.0).abs() < 1e-7);
        covered += &s.combiner * s.combiner.adjoint();
    }
    // Two disjoint column blocks per transmit direction cover the identity twice over four directions.
    assert!(max_abs_diff(&covered, &linalg::identity(4).scale(4.0)) < 1e-12);
}

/// Every 3-block selection with grid-optimal powers; the designed selection must not lose.
#[test]
fn truncated_design_beats_every_three_block_selection() {
    let cfg = toy_cfg(3, 20.0);
    let b = basis_of(&cfg);
    let spec = BlockSpectrum::from_basis(&b, 2).unwrap();
    let plan = design_training(&b, &cfg).unwrap();
    assert_eq!(plan.case, DesignCase::Truncated);
    let mut chosen = plan.dir_indices();
    let mut top: Vec<usize> = spec.sort_perm[..3].to_vec();
    chosen.sort();
    top.sort();
    assert_eq!(chosen, top);
    let j_design = j_mmse_aligned(&spec, &plan.dir_indices(), &plan.powers(), 1.0);
    let mut count = 0;
    for a in 0..8 {
        for bb in a + 1..8 {
            for cc in bb + 1..8 {
                count += 1;
                let sel = [a, bb, cc];
                let blocks: Vec<Vec<f64>> = sel.iter().map(|&i| spec.block_eigs[i].clone()).collect();
                let grid = grid_minimizer(&blocks, 20.0, 1.0, 400);
                let j = j_mmse_aligned(&spec, &sel, &grid, 1.0);
                assert!(j_design <= j + 1e-9, "selection {sel:?}: {j} < designed {j_design}");
            }
        }
    }
    assert_eq!(count, 56);
}

#[test]
fn full_plan_gamma_is_diagonal_with_repeated_powers() {
    for energy in [0.5, 6.0, 60.0] {
        let cfg = toy_cfg(8, energy);
        let b = basis_of(&cfg);
        let plan = design_training(&b, &cfg).unwrap();
        let gamma = gamma_squared_definition(&plan.beamformers(), &b, 1.0).unwrap();
        let mut expected = vec![0.0; 16];
        for s in &plan.slots {
            expected[2 * s.block] = s.power;
            expected[2 * s.block + 1] = s.power;
        }
        assert!(max_abs_diff(&gamma, &linalg::real_diag(&expected)) < 1e-10);
        let j = j_mmse_from_gamma(&gamma, b.lam_kron.as_slice()).unwrap();
        let spec = BlockSpectrum::from_basis(&b, 2).unwrap();
        let closed = j_mmse_aligned(&spec, &plan.dir_indices(), &plan.powers(), 1.0);
        assert!((j - closed).abs() < 1e-9 * closed);
    }
}

#[test]
fn truncated_gamma_matches_sorted_powers() {
    for q in [2, 3] {
        let cfg = toy_cfg(q, 4.0);
        let b = basis_of(&cfg);
        let plan = design_training(&b, &cfg).unwrap();
        let gamma = gamma_squared_fast(&plan.beamformers(), &b, 1.0).unwrap();
        let mut got: Vec<f64> = gamma.diagonal().iter().map(|z| z.re).filter(|x| *x > 1e-12).collect();
        let mut want: Vec<f64> = plan.powers().iter().flat_map(|&p| [p, p]).filter(|p| *p > 0.0).collect();
        got.sort_by(|a, b| b.total_cmp(a));
        want.sort_by(|a, b| b.total_cmp(a));
        assert_eq!(got.len(), want.len());
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-9);
        }
        // Reordering blocks by trace makes Γ² diagonal with the powers leading.
        let spec = BlockSpectrum::from_basis(&b, 2).unwrap();
        let perm = block_permutation(&spec.sort_perm, 2);
        let sorted = perm.adjoint() * &gamma * &perm;
        let off = sorted.clone() - CMat::from_diagonal(&sorted.diagonal());
        assert!(linalg::max_abs(&off) < 1e-10);
    }
}

fn semi_unitary(rng: &mut Stream, rows: usize, cols: usize) -> CMat {
    let s = linalg::svd_desc(&rng::complex_normal_matrix(rng, rows, cols, 1.0)).unwrap();
    &s.u * s.v.adjoint()
}

fn random_beamformers(rng: &mut Stream, slots: usize) -> Vec<SlotBeamformer> {
    (0..slots)
        .map(|_| {
            let v = rng::complex_normal_vector(rng, 4, 1.0);
            let z = 0.3 + rand::Rng::random_range(rng, 0.0..1.5);
            SlotBeamformer {
                precoder: v.unscale(v.norm()).scale(z),
                combiner: semi_unitary(rng, 4, 2),
            }
        })
        .collect()
}

#[test]
fn gamma_routes_agree_and_ignore_combiner_mixing() {
    let cfg = SystemConfig {
        rho: Complex64::from_polar(0.7, 1.1),
        ..toy_cfg(8, 1.0)
    };
    let b = basis_of(&cfg);
    let mut rng = rng::stream(11, Purpose::Check, &[]);
    for trial in 0..100 {
        let bfs = random_beamformers(&mut rng, 1 + trial % 8);
        let def = gamma_squared_definition(&bfs, &b, 0.7).unwrap();
        let fast = gamma_squared_fast(&bfs, &b, 0.7).unwrap();
        assert!(max_abs_diff(&def, &fast) < 1e-10);

        let ups = upsilon(&bfs).unwrap();
        for d in (ups.adjoint() * &ups).diagonal().iter() {
            assert!((d - linalg::ONE).norm() < 1e-10);
        }
        let energy: f64 = bfs.iter().map(|x| 2.0 * x.precoder.norm_squared()).sum();
        assert!((linalg::trace_re(&fast) - energy / 0.7).abs() < 1e-9);

        let rotated: Vec<SlotBeamformer> = bfs
            .iter()
            .map(|x| SlotBeamformer {
                precoder: x.precoder.clone(),
                combiner: &x.combiner * semi_unitary(&mut rng, 2, 2),
            })
            .collect();
        let scaled: Vec<SlotBeamformer> = bfs
            .iter()
            .map(|x| SlotBeamformer {
                precoder: x.precoder.clone(),
                combiner: x.combiner.scale(3.0),
            })
            .collect();
        let mixed: Vec<SlotBeamformer> = bfs
            .iter()
            .map(|x| {
                let mut d = rng::complex_normal_matrix(&mut rng, 2, 2, 1.0);
                d[(0, 0)] += c(2.0, 0.0);
                d[(1, 1)] += c(2.0, 0.0);
                SlotBeamformer {
                    precoder: x.precoder.clone(),
                    combiner: &x.combiner * d,
                }
            })
            .collect();
        for variant in [&rotated, &scaled, &mixed] {
            assert!(max_abs_diff(&gamma_squared_definition(variant, &b, 0.7).unwrap(), &def) < 1e-10);
            assert!(max_abs_diff(&gamma_squared_fast(variant, &b, 0.7).unwrap(), &def) < 1e-10);
        }
    }
}

/// Perturbed directions (re-orthonormalized) with the same energies never beat the design.
#[test]
fn designed_plan_beats_perturbed_plans() {
    let cfg = toy_cfg(8, 5.0);
    let b = basis_of(&cfg);
    let plan = design_training(&b, &cfg).unwrap();
    let fd = plan.beamformers();
    let j_design = j_mmse_from_gamma(&gamma_squared_fast(&fd, &b, 1.0).unwrap(), b.lam_kron.as_slice()).unwrap();
    let mut rng = rng::stream(5, Purpose::Check, &[]);
    for _ in 0..100 {
        let perturbed: Vec<SlotBeamformer> = fd
            .iter()
            .map(|x| {
                let z = x.precoder.norm();
                let v = &x.precoder.unscale(z) + rng::complex_normal_vector(&mut rng, 4, 0.01);
                let w = &x.combiner + rng::complex_normal_matrix(&mut rng, 4, 2, 0.01);
                let s = linalg::svd_desc(&w).unwrap();
                SlotBeamformer {
                    precoder: v.unscale(v.norm()).scale(z),
                    combiner: &s.u * s.v.adjoint(),
                }
            })
            .collect();
        let j = j_mmse_from_gamma(&gamma_squared_fast(&perturbed, &b, 1.0).unwrap(), b.lam_kron.as_slice()).unwrap();
        assert!(j_design <= j + 1e-12, "{j} < {j_design}");
    }
}

#[test]
fn equal_power_plan_splits_evenly() {
    let cfg = toy_cfg(8, 4.0);
    let plan = equal_power_plan(&basis_of(&cfg), &cfg).unwrap();
    assert_eq!(plan.dir_indices(), (0..8).collect::<Vec<_>>());
    assert!(plan.powers().iter().all(|&p| p == 0.5));
    let cfg = toy_cfg(3, 3.0);
    let b = basis_of(&cfg);
    let spec = BlockSpectrum::from_basis(&b, 2).unwrap();
    let plan = equal_power_plan(&b, &cfg).unwrap();
    assert_eq!(plan.dir_indices(), spec.sort_perm[..3].to_vec());
}
