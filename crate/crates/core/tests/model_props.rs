use hbtrain_core::linalg::{self, max_abs_diff, CMat};
use hbtrain_core::model::*;
use hbtrain_core::rng::{self, Purpose};
use num_complex::Complex64;
use proptest::prelude::*;

fn rho_strategy() -> impl Strategy<Value = Complex64> {
    (0.0..0.95f64, 0.0..std::f64::consts::TAU).prop_map(|(r, t)| Complex64::from_polar(r, t))
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::with_cases(64) })]

    #[test]
    fn exponential_correlation_is_hermitian_unit_diagonal(rho in rho_strategy(), n in 1usize..=64) {
        let s = exp_correlation(rho, n).unwrap();
        prop_assert_eq!(linalg::hermitian_defect(&s), 0.0);
        for d in s.diagonal().iter() {
            prop_assert_eq!(*d, linalg::ONE);
        }
    }

    #[test]
    fn eigen_basis_reconstructs(rho in rho_strategy(), n_tx in 1usize..12, n_rx in 1usize..12) {
        let pair = CorrelationPair::exponential(rho, n_tx, n_rx).unwrap();
        let b = eigen_basis(&pair).unwrap();
        let tx = &b.u_tx * linalg::real_diag(b.lam_tx.as_slice()) * b.u_tx.adjoint();
        let rx = &b.u_rx * linalg::real_diag(b.lam_rx.as_slice()) * b.u_rx.adjoint();
        prop_assert!(max_abs_diff(&tx, &pair.s_tx) < 1e-9);
        prop_assert!(max_abs_diff(&rx, &pair.s_rx) < 1e-9);
        prop_assert!(b.lam_tx.as_slice().windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn psi_blocks_form_a_unitary(rho in rho_strategy(), n_tx in 1usize..6, half in 1usize..3) {
        let n_rf = 2;
        let n_rx = half * n_rf;
        let b = eigen_basis(&CorrelationPair::exponential(rho, n_tx, n_rx).unwrap()).unwrap();
        let slots = n_tx * n_rx / n_rf;
        let mut stacked = CMat::zeros(n_tx * n_rx, slots * n_rf);
        for q in 1..=slots {
            let blk = build_psi_block(&b, q, n_rf).unwrap();
            stacked.columns_mut((q - 1) * n_rf, n_rf).copy_from(&blk);
        }
        prop_assert!(max_abs_diff(&stacked, &b.psi()) < 1e-10);
        prop_assert!(max_abs_diff(&(stacked.adjoint() * &stacked), &linalg::identity(n_tx * n_rx)) < 1e-10);
    }

    #[test]
    fn slot_map_is_a_bijection(n in 1usize..8, nu in 1usize..5, n_rf in 1usize..4) {
        let m = nu * n_rf;
        let mut seen = vec![false; n * nu];
        for q in 1..=n * nu {
            let (n_q, m_q) = slot_index_map(q, m, n_rf).unwrap();
            prop_assert!((1..=n).contains(&n_q) && (1..=nu).contains(&m_q));
            let idx = (n_q - 1) * nu + (m_q - 1);
            prop_assert!(!seen[idx]);
            seen[idx] = true;
        }
    }
}

#[test]
fn virtual_channel_variances_match_kronecker_eigenvalues() {
    let b = eigen_basis(&CorrelationPair::exponential(Complex64::new(0.7, 0.0), 4, 4).unwrap()).unwrap();
    let trials = 20_000;
    let mut power = [0.0; 16];
    for t in 0..trials {
        let ch = sample_channel(&b, &mut rng::stream(3, Purpose::Channel, &[t]));
        for (p, z) in power.iter_mut().zip(linalg::vec_cols(&ch.h_virtual).iter()) {
            *p += z.norm_sqr();
        }
    }
    for (i, p) in power.iter().enumerate() {
        let lam = b.lam_kron[i];
        if lam > 0.01 {
            let mean = p / trials as f64;
            assert!((mean - lam).abs() < 0.05 * lam, "entry {i}: {mean} vs {lam}");
        }
    }
}
