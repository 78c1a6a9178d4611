use hbtrain_core::evaluation::*;
use hbtrain_core::hybrid::AltMinOptions;
use hbtrain_core::linalg::{self, c, CMat};
use hbtrain_core::model::{eigen_basis, CorrelationPair, SystemConfig};
use hbtrain_core::rng::{self, Purpose};
use hbtrain_core::training::design_training;

fn small() -> SystemConfig {
    SystemConfig {
        n_tx: 8,
        n_rx: 4,
        n_rf: 2,
        q_slots: 16,
        energy_budget: 16.0,
        n_streams: 2,
        rho: c(0.8, 0.0),
        ..SystemConfig::default()
    }
}

/// `η log₂ det(I + E^{-1} S)` assembled with a general inverse and LU determinant.
fn se_direct(h: &CMat, h_hat: &CMat, t: &CMat, q: &CMat, s2: f64, eta: f64) -> f64 {
    let he = h - h_hat;
    let e = q.adjoint() * (&he * t * t.adjoint() * he.adjoint() + CMat::identity(h.nrows(), h.nrows()).scale(s2)) * q;
    let s = q.adjoint() * h_hat * t * t.adjoint() * h_hat.adjoint() * q;
    let k = e.nrows();
    let m = CMat::identity(k, k) + e.try_inverse().unwrap() * s;
    eta * m.determinant().norm().log2()
}

#[test]
fn spectral_efficiency_matches_direct_determinant() {
    let cfg = SystemConfig {
        n_tx: 4,
        n_rx: 4,
        n_rf: 2,
        q_slots: 8,
        n_streams: 2,
        ..SystemConfig::default()
    };
    let mut r = rng::stream(21, Purpose::Check, &[]);
    for _ in 0..20 {
        let h = rng::complex_normal_matrix(&mut r, 4, 4, 1.0);
        let h_hat = &h + rng::complex_normal_matrix(&mut r, 4, 4, 0.1);
        let bf = design_data_beamformers::<rand_chacha::ChaCha8Rng>(&h_hat, &cfg, None).unwrap();
        let got = spectral_efficiency(&h, &h_hat, &bf.t_total, &bf.q_total, 0.5, 0.9).unwrap();
        let want = se_direct(&h, &h_hat, &bf.t_total, &bf.q_total, 0.5, 0.9);
        assert!((got - want).abs() < 1e-9 * (1.0 + want), "{got} vs {want}");
    }
}

#[test]
fn single_stream_uses_dominant_direction() {
    let cfg = SystemConfig {
        n_streams: 1,
        ..small()
    };
    let mut r = rng::stream(2, Purpose::Check, &[]);
    let h = rng::complex_normal_matrix(&mut r, 4, 8, 1.0);
    let bf = design_data_beamformers::<rand_chacha::ChaCha8Rng>(&h, &cfg, None).unwrap();
    let top = linalg::svd_desc(&h).unwrap().singular_values[0];
    assert!(((&h * &bf.t_total).norm() - top).abs() < 1e-10);
    assert!((bf.t_total.norm() - 1.0).abs() < 1e-12);
}

#[test]
fn hybrid_data_beamformers_stay_within_residual() {
    let cfg = small();
    let mut r = rng::stream(3, Purpose::Check, &[]);
    let h = rng::complex_normal_matrix(&mut r, 4, 8, 1.0);
    let opts = AltMinOptions::default();
    let bf = design_data_beamformers(&h, &cfg, Some((&opts, &mut r))).unwrap();
    let (t, q) = bf.applied();
    let (ft, fq) = bf.hybrid.as_ref().unwrap();
    assert!(((&bf.t_total - &t).norm() - ft.residual).abs() < 1e-10);
    assert!(((&bf.q_total - &q).norm() - fq.residual).abs() < 1e-10);
}

#[test]
fn thread_count_does_not_change_results() {
    let cfg = small();
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| {
                run_sweep(
                    &cfg,
                    SweepAxis::Energy,
                    &[0.0, 10.0],
                    &[Scheme::WaterfillHybrid, Scheme::EqualFd],
                    16,
                    &SweepOptions::default(),
                )
                .unwrap()
            })
    };
    let a = run(1);
    let b = run(4);
    assert_eq!(a.len(), 4);
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.nmse.to_bits(), y.nmse.to_bits());
        assert_eq!(x.se_bits.to_bits(), y.se_bits.to_bits());
    }
}

#[test]
fn failed_point_is_marked_not_dropped() {
    let recs = run_sweep(&small(), SweepAxis::Rho, &[0.5, 1.5], &[Scheme::WaterfillFd], 4, &SweepOptions::default()).unwrap();
    assert_eq!(recs.len(), 2);
    assert!(recs[0].error.is_none() && recs[0].nmse.is_finite());
    assert!(recs[1].error.as_deref().unwrap().contains("rho"));
    assert!(recs[1].nmse.is_nan());
}

#[test]
fn nmse_falls_with_correlation() {
    let values = [0.1, 0.4, 0.7, 0.9];
    let recs = run_sweep(&small(), SweepAxis::Rho, &values, &[Scheme::WaterfillFd], 300, &SweepOptions::default()).unwrap();
    for w in recs.windows(2) {
        let band = 3.0 * (w[0].nmse_stderr + w[1].nmse_stderr);
        assert!(w[1].nmse <= w[0].nmse + band, "{} -> {}", w[0].nmse, w[1].nmse);
    }
}

#[test]
fn nmse_falls_with_slots_and_energy() {
    let opts = SweepOptions::default();
    let slots = run_sweep(&small(), SweepAxis::Slots, &[2.0, 4.0, 8.0, 16.0], &[Scheme::WaterfillFd], 300, &opts).unwrap();
    let energy = run_sweep(&small(), SweepAxis::Energy, &[0.0, 10.0, 20.0, 30.0], &[Scheme::WaterfillFd], 300, &opts).unwrap();
    for recs in [&slots, &energy] {
        for w in recs.windows(2) {
            let band = 3.0 * (w[0].nmse_stderr + w[1].nmse_stderr);
            assert!(w[1].nmse <= w[0].nmse + band);
        }
    }
}

#[test]
fn perfect_csi_bounds_estimated_csi() {
    let opts = SweepOptions::default();
    let recs = run_sweep(&small(), SweepAxis::Energy, &[0.0, 20.0], &[Scheme::WaterfillFd, Scheme::PerfectCsi], 300, &opts).unwrap();
    for pair in recs.chunks(2) {
        let (est, perfect) = (&pair[0], &pair[1]);
        assert_eq!(perfect.eta, 1.0);
        assert_eq!(perfect.q_nz, 0);
        // Compare at η = 1.
        let est_se = est.se_bits / est.eta;
        assert!(est_se <= perfect.se_bits + 3.0 * (est.se_stderr + perfect.se_stderr));
    }
}

#[test]
fn waterfill_powers_flatten_at_high_energy() {
    let cfg = SweepAxis::Energy.apply(&SystemConfig::default(), 60.0).unwrap();
    let basis = eigen_basis(&CorrelationPair::from_config(&cfg).unwrap()).unwrap();
    let p = design_training(&basis, &cfg).unwrap().powers();
    let ratio = p.iter().cloned().fold(0.0, f64::max) / p.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(ratio < 1.1, "{ratio}");
}

#[test]
fn weak_correlation_small_array_uses_every_slot() {
    let cfg = SystemConfig {
        n_tx: 16,
        n_rx: 8,
        n_rf: 8,
        q_slots: 16,
        energy_budget: 64.0,
        ..SystemConfig::default()
    };
    let rows = qnz_profile(&cfg, &[8], &[0.1]).unwrap();
    assert_eq!(rows[0].q_nz, rows[0].q);
    assert_eq!(rows[0].ratio, 1.0);
}
