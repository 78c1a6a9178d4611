//! Toy-size invariant suite behind `hbtrain selfcheck`.

use std::f64::consts::PI;
use std::fmt;

use hbtrain_core::estimator::{LinearMmse, MeasurementModel};
use hbtrain_core::hybrid::{pe_altmin, split_precoder_vector};
use hbtrain_core::linalg::{self, c, CMat, CVec, RVec};
use hbtrain_core::model::{exp_correlation_raw, slot_index_map, EigenBasis};
use hbtrain_core::rng::{self, Purpose, Stream};
use hbtrain_core::training::{
    design_training, gamma_squared_definition, gamma_squared_fast, upsilon, waterfill,
    zero_power_threshold, BlockSpectrum, SlotBeamformer,
};
use hbtrain_core::{Result, SystemConfig};
use num_complex::Complex64;

/// Deliberate defects used to prove the suite can fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Fault {
    #[default]
    None,
    /// Build the correlation matrices without conjugating the lower triangle.
    SkipHermitianization,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub label: &'static str,
    pub residual: f64,
    pub tol: f64,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.residual <= self.tol
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Report {
    pub checks: Vec<Check>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(Check::passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed())
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for ch in &self.checks {
            let tag = if ch.passed() { "PASS" } else { "FAIL" };
            writeln!(f, "{tag}  {:<48} residual={:.3e} tol={:.0e}", ch.label, ch.residual, ch.tol)?;
        }
        let failed = self.failures().count();
        write!(f, "{} checks, {failed} failed", self.checks.len())
    }
}

const M: usize = 4;
const N: usize = 4;
const N_RF: usize = 2;
const PLANS: u64 = 100;

fn toy_config() -> SystemConfig {
    SystemConfig {
        n_tx: N,
        n_rx: M,
        n_rf: N_RF,
        q_slots: N * M / N_RF,
        energy_budget: 6.0,
        n_streams: 2,
        rho: Complex64::from_polar(0.6, PI / 5.0),
        ..SystemConfig::default()
    }
}

/// Eigen-factorization of the toy correlation pair, skipping the input
/// validation so an injected fault reaches the numerical checks.
fn toy_basis(cfg: &SystemConfig, fault: Fault) -> Result<(EigenBasis, CMat, CMat)> {
    let hermitian = fault != Fault::SkipHermitianization;
    let s_tx = exp_correlation_raw(cfg.rho, cfg.n_tx, hermitian)?;
    let s_rx = exp_correlation_raw(cfg.rho, cfg.n_rx, hermitian)?;
    let (lt, u_tx) = linalg::hermitian_eigen_desc(&s_tx);
    let (lr, u_rx) = linalg::hermitian_eigen_desc(&s_rx);
    let lam_kron = RVec::from_iterator(lt.len() * lr.len(), lt.iter().flat_map(|a| lr.iter().map(move |b| a * b)));
    let basis = EigenBasis {
        u_tx,
        lam_tx: RVec::from_vec(lt),
        u_rx,
        lam_rx: RVec::from_vec(lr),
        lam_kron,
    };
    Ok((basis, s_tx, s_rx))
}

fn reconstruction_error(u: &CMat, lam: &RVec, s: &CMat) -> f64 {
    let rebuilt = u * linalg::real_diag(lam.as_slice()) * u.adjoint();
    linalg::max_abs_diff(&rebuilt, s)
}

fn random_semi_unitary(rng: &mut Stream, rows: usize, cols: usize) -> Result<CMat> {
    let svd = linalg::svd_desc(&rng::complex_normal_matrix(rng, rows, cols, 1.0))?;
    Ok(&svd.u * svd.v.adjoint())
}

/// Random slot beamformers: unit-norm precoders with random energies and
/// semi-unitary combiners, plus a copy whose combiners carry random
/// invertible mixing factors.
fn random_plan(rng: &mut Stream) -> Result<(Vec<SlotBeamformer>, Vec<SlotBeamformer>)> {
    let slots = N * M / N_RF;
    let mut plain = Vec::with_capacity(slots);
    let mut mixed = Vec::with_capacity(slots);
    for _ in 0..slots {
        let dir = rng::complex_normal_vector(rng, N, 1.0);
        let z: f64 = rand::Rng::random_range(rng, 0.2..2.0);
        let precoder = dir.unscale(dir.norm()).scale(z);
        let k = random_semi_unitary(rng, M, N_RF)?;
        let mut d = rng::complex_normal_matrix(rng, N_RF, N_RF, 1.0);
        for i in 0..N_RF {
            d[(i, i)] += c(2.0, 0.0);
        }
        mixed.push(SlotBeamformer {
            precoder: precoder.clone(),
            combiner: &k * d,
        });
        plain.push(SlotBeamformer { precoder, combiner: k });
    }
    Ok((plain, mixed))
}

fn gamma_checks(basis: &EigenBasis, s_tx: &CMat, s_rx: &CMat, noise_var: f64) -> Result<Vec<Check>> {
    let basis_defect = reconstruction_error(&basis.u_tx, &basis.lam_tx, s_tx)
        .max(reconstruction_error(&basis.u_rx, &basis.lam_rx, s_rx));
    let mut equivalence = basis_defect;
    let mut independence: f64 = 0.0;
    let mut diag_ones: f64 = 0.0;
    let mut trace: f64 = 0.0;
    let mut rng = rng::stream(0x5e1f, Purpose::Check, &[1]);
    for _ in 0..PLANS {
        let (plain, mixed) = random_plan(&mut rng)?;
        let def = gamma_squared_definition(&plain, basis, noise_var)?;
        let fast = gamma_squared_fast(&plain, basis, noise_var)?;
        equivalence = equivalence.max(linalg::max_abs_diff(&def, &fast));
        let def_mixed = gamma_squared_definition(&mixed, basis, noise_var)?;
        let fast_mixed = gamma_squared_fast(&mixed, basis, noise_var)?;
        independence = independence
            .max(linalg::max_abs_diff(&def_mixed, &fast_mixed))
            .max(linalg::max_abs_diff(&def_mixed, &def));
        let ups = upsilon(&plain)?;
        let gram = ups.adjoint() * &ups;
        diag_ones = gram.diagonal().iter().fold(diag_ones, |a, d| a.max((d - linalg::ONE).norm()));
        let energy: f64 = plain.iter().map(|b| b.precoder.norm_squared() * N_RF as f64).sum();
        trace = trace.max((linalg::trace_re(&fast) - energy / noise_var).abs());
    }
    Ok(vec![
        Check {
            label: "Gamma^2 equivalence (definition vs fast)",
            residual: equivalence,
            tol: 1e-10,
        },
        Check {
            label: "Gamma^2 invariance to combiner mixing D_q, Z_q",
            residual: independence,
            tol: 1e-10,
        },
        Check {
            label: "diag(Upsilon^H Upsilon) = 1",
            residual: diag_ones,
            tol: 1e-10,
        },
        Check {
            label: "Tr(Gamma^2) = Tr(D(Z))/sigma^2",
            residual: trace,
            tol: 1e-9,
        },
    ])
}

fn design_checks(basis: &EigenBasis, cfg: &SystemConfig) -> Result<Vec<Check>> {
    let plan = design_training(basis, cfg)?;
    let gamma = gamma_squared_definition(&plan.beamformers(), basis, cfg.noise_var)?;
    let mut expected = vec![0.0; N * M];
    for s in plan.slots.iter().filter(|s| s.power > 0.0) {
        for k in 0..N_RF {
            expected[s.block * N_RF + k] = s.power / cfg.noise_var;
        }
    }
    let diagonality = linalg::max_abs_diff(&gamma, &linalg::real_diag(&expected));

    let mut sorted_identity: f64 = 0.0;
    for q in [2, 3] {
        let small = SystemConfig { q_slots: q, ..cfg.clone() };
        let plan = design_training(basis, &small)?;
        let gamma = gamma_squared_fast(&plan.beamformers(), basis, small.noise_var)?;
        let mut got: Vec<f64> = gamma.diagonal().iter().map(|z| z.re).filter(|&x| x > 1e-12).collect();
        let mut want: Vec<f64> = plan
            .slots
            .iter()
            .filter(|s| s.power > 0.0)
            .flat_map(|s| std::iter::repeat_n(s.power / small.noise_var, N_RF))
            .collect();
        got.sort_by(|a, b| b.total_cmp(a));
        want.sort_by(|a, b| b.total_cmp(a));
        sorted_identity = sorted_identity.max(if got.len() == want.len() {
            got.iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
        } else {
            f64::INFINITY
        });
    }
    Ok(vec![
        Check {
            label: "Case-1 Gamma^2 diagonal with repeated powers",
            residual: diagonality,
            tol: 1e-10,
        },
        Check {
            label: "truncated-design Gamma^2 diagonal for Q in {2, 3}",
            residual: sorted_identity,
            tol: 1e-9,
        },
    ])
}

fn waterfill_checks(basis: &EigenBasis, cfg: &SystemConfig) -> Result<Vec<Check>> {
    // Two single-eigenvalue blocks against a fine grid on the budget line.
    let spec = BlockSpectrum::from_blocks(vec![vec![4.0], vec![1.0]])?;
    let sol = waterfill(&spec, 1.0, 1.0, 1e-12)?;
    let objective = |a: f64| 1.0 / (0.25 + a) + 1.0 / (1.0 + (1.0 - a));
    let steps = 100_000;
    let best = (0..=steps)
        .map(|i| i as f64 / steps as f64)
        .min_by(|a, b| objective(*a).total_cmp(&objective(*b)))
        .unwrap_or(0.0);
    let grid = (sol.powers[0] - best).abs().max((sol.powers[1] - (1.0 - best)).abs());

    let spec = BlockSpectrum::from_basis(basis, N_RF)?;
    let sol = waterfill(&spec, cfg.energy_budget, cfg.noise_var, cfg.tol)?;
    let mut kkt = (sol.powers.iter().sum::<f64>() - cfg.energy_budget).abs() / cfg.energy_budget;
    for (eigs, &a) in spec.block_eigs.iter().zip(&sol.powers) {
        if a > 0.0 {
            let lhs: f64 = eigs.iter().map(|l| (1.0 / l + a / cfg.noise_var).powi(-2)).sum::<f64>() / cfg.noise_var;
            kkt = kkt.max((lhs - sol.mu0).abs());
        } else {
            kkt = kkt.max(zero_power_threshold(eigs, cfg.noise_var) - sol.mu0 - 1e-8).max(0.0);
        }
    }
    Ok(vec![
        Check {
            label: "water-filling vs grid oracle",
            residual: grid,
            tol: 1e-4,
        },
        Check {
            label: "water-filling KKT and budget",
            residual: kkt,
            tol: 1e-8,
        },
    ])
}

fn hybrid_checks() -> Result<Vec<Check>> {
    let mut rng = rng::stream(0x5e1f, Purpose::Check, &[2]);
    let mut split: f64 = 0.0;
    for i in 0..PLANS {
        let v = rng::complex_normal_vector(&mut rng, 1 + (i as usize % 16), 1.0);
        let f = split_precoder_vector(&v, 2 + (i as usize % 3))?;
        let recomposed: CVec = f.effective().column(0).into_owned();
        split = split.max((recomposed - v).norm());
    }
    let mut rise: f64 = 0.0;
    for _ in 0..20 {
        let target = random_semi_unitary(&mut rng, M, N_RF)?;
        let f = pe_altmin(&target, N_RF, 200, 1e-9, &mut rng)?;
        rise = f.objective.windows(2).fold(rise, |a, w| a.max(w[1] - w[0]));
    }
    Ok(vec![
        Check {
            label: "exact two-phase-shifter precoder split",
            residual: split,
            tol: 1e-10,
        },
        Check {
            label: "PE-AltMin objective non-increasing",
            residual: rise.max(0.0),
            tol: 1e-12,
        },
    ])
}

fn estimator_checks(basis: &EigenBasis, cfg: &SystemConfig) -> Result<Vec<Check>> {
    let plan = design_training(basis, cfg)?;
    let model = MeasurementModel::new(plan.beamformers(), basis, cfg.noise_var)?;
    let est = LinearMmse::new(&model.f_matrix, &model.noise_cov, basis.lam_kron.as_slice())?;
    let info = model.f_matrix.adjoint()
        * linalg::hpd_inverse(&model.noise_cov).unwrap_or_else(|| CMat::zeros(0, 0))
        * &model.f_matrix
        + linalg::real_diag(&basis.lam_kron.iter().map(|l| 1.0 / l).collect::<Vec<_>>());
    let forms = match linalg::hpd_inverse(&info) {
        Some(inv) => linalg::max_abs_diff(&inv, &est.err_cov),
        None => f64::INFINITY,
    };

    let psi = basis.psi();
    let mut structure = linalg::max_abs_diff(&(psi.adjoint() * &psi), &linalg::identity(N * M));
    let mut seen = [false; N * (M / N_RF)];
    for q in 1..=N * M / N_RF {
        let (n_q, m_q) = slot_index_map(q, M, N_RF)?;
        let slot = (n_q - 1) * (M / N_RF) + (m_q - 1);
        if seen[slot] {
            structure = f64::INFINITY;
        }
        seen[slot] = true;
    }
    Ok(vec![
        Check {
            label: "MMSE error covariance, both algebraic forms",
            residual: forms,
            tol: 1e-9,
        },
        Check {
            label: "Psi unitary and slot map bijective",
            residual: structure,
            tol: 1e-10,
        },
    ])
}

/// Runs every toy-size invariant check.
pub fn selfcheck(fault: Fault) -> Result<Report> {
    let cfg = toy_config();
    let (basis, s_tx, s_rx) = toy_basis(&cfg, fault)?;
    let mut checks = gamma_checks(&basis, &s_tx, &s_rx, cfg.noise_var)?;
    checks.extend(design_checks(&basis, &cfg)?);
    checks.extend(waterfill_checks(&basis, &cfg)?);
    checks.extend(hybrid_checks()?);
    checks.extend(estimator_checks(&basis, &cfg)?);
    Ok(Report { checks })
}
