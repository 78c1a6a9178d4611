//! Training measurements and the linear MMSE estimate of the eigen-domain channel.

use rand::Rng;

use crate::error::{Error, Result};
use crate::hybrid::{pe_altmin_best, split_precoder_vector, AltMinOptions};
use crate::linalg::{self, CMat, CVec};
use crate::model::{sample_channel, ChannelRealization, EigenBasis, SystemConfig};
use crate::rng::{self, Purpose};
use crate::training::{SlotBeamformer, TrainingPlan};

/// Which noise covariance the estimator assumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoiseModel {
    /// `σ² blkdg(W_q^H W_q)` from the combiners actually applied.
    #[default]
    Matched,
    /// `σ² I`, as if every combiner were semi-unitary.
    Ideal,
}

/// Beamformers the hardware applies for the positive-power slots of `plan`.
///
/// With `hybrid` set the precoder goes through the exact two-phase-shifter
/// split and the combiner through PE-AltMin; otherwise the fully-digital
/// pair is used as designed.
pub fn realize_beamformers<R: Rng + ?Sized>(
    plan: &TrainingPlan,
    hybrid: bool,
    n_rf: usize,
    opts: &AltMinOptions,
    rng: &mut R,
) -> Result<Vec<SlotBeamformer>> {
    let digital = plan.beamformers();
    if !hybrid {
        return Ok(digital);
    }
    digital
        .into_iter()
        .map(|bf| {
            let v = split_precoder_vector(&bf.precoder, n_rf)?.effective();
            let w = pe_altmin_best(&bf.combiner, n_rf, opts, rng)?.effective();
            Ok(SlotBeamformer {
                precoder: v.column(0).into_owned(),
                combiner: w,
            })
        })
        .collect()
}

/// `F = Φ Ψ` and the noise covariance for a fixed set of slot beamformers.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementModel {
    pub beamformers: Vec<SlotBeamformer>,
    /// `L × MN`.
    pub f_matrix: CMat,
    /// Block-diagonal `σ² W_q^H W_q`.
    pub noise_cov: CMat,
    pub noise_var: f64,
}

impl MeasurementModel {
    pub fn new(beamformers: Vec<SlotBeamformer>, basis: &EigenBasis, noise_var: f64) -> Result<Self> {
        let (n, m) = (basis.n_tx(), basis.n_rx());
        let mut rows = 0;
        for (q, bf) in beamformers.iter().enumerate() {
            if bf.precoder.len() != n || bf.combiner.nrows() != m {
                return Err(Error::DimensionMismatch(format!(
                    "slot {q}: precoder {} and combiner {}x{} for a {m}x{n} channel",
                    bf.precoder.len(),
                    bf.combiner.nrows(),
                    bf.combiner.ncols()
                )));
            }
            rows += bf.combiner.ncols();
        }
        let psi = basis.psi();
        let mut f_matrix = CMat::zeros(rows, n * m);
        let mut noise_cov = CMat::zeros(rows, rows);
        let mut at = 0;
        for bf in &beamformers {
            let k = bf.combiner.ncols();
            let phi = bf.precoder.transpose().kronecker(&bf.combiner.adjoint());
            f_matrix.rows_mut(at, k).copy_from(&(phi * &psi));
            let gram = bf.combiner.adjoint() * &bf.combiner;
            noise_cov.view_mut((at, at), (k, k)).copy_from(&gram.scale(noise_var));
            at += k;
        }
        Ok(MeasurementModel {
            beamformers,
            f_matrix,
            noise_cov,
            noise_var,
        })
    }

    pub fn n_measurements(&self) -> usize {
        self.f_matrix.nrows()
    }

    /// Noise covariance the estimator should assume under `model`.
    pub fn assumed_noise_cov(&self, model: NoiseModel) -> CMat {
        match model {
            NoiseModel::Matched => self.noise_cov.clone(),
            NoiseModel::Ideal => linalg::identity(self.n_measurements()).scale(self.noise_var),
        }
    }

    /// Stacked `y_q = W_q^H (H v_q + n_q)` with `n_q ~ CN(0, σ² I_M)`.
    pub fn measure<R: Rng + ?Sized>(&self, channel: &ChannelRealization, rng: &mut R) -> Result<MeasurementSet> {
        let (m, n) = channel.h.shape();
        if self.f_matrix.ncols() != m * n {
            return Err(Error::DimensionMismatch(format!(
                "model built for {} channel entries, got {m}x{n}",
                self.f_matrix.ncols()
            )));
        }
        let mut y = CVec::zeros(self.n_measurements());
        let mut at = 0;
        for bf in &self.beamformers {
            let noise = rng::complex_normal_vector(rng, m, self.noise_var);
            let received = &channel.h * &bf.precoder + noise;
            let out = bf.combiner.adjoint() * received;
            y.rows_mut(at, out.len()).copy_from(&out);
            at += out.len();
        }
        Ok(MeasurementSet {
            y,
            f_matrix: self.f_matrix.clone(),
            noise_cov: self.noise_cov.clone(),
        })
    }
}

/// Stacked measurements with the matrices needed to estimate from them.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet {
    pub y: CVec,
    pub f_matrix: CMat,
    pub noise_cov: CMat,
}

/// Measurements of one channel through the beamformers of `plan`.
pub fn simulate_training<R: Rng + ?Sized>(
    channel: &ChannelRealization,
    plan: &TrainingPlan,
    hybrid: bool,
    basis: &EigenBasis,
    cfg: &SystemConfig,
    rng: &mut R,
) -> Result<MeasurementSet> {
    let opts = AltMinOptions {
        max_iter: cfg.altmin_max_iter,
        tol: cfg.altmin_tol,
        restarts: 1,
    };
    let bfs = realize_beamformers(plan, hybrid, cfg.n_rf, &opts, rng)?;
    MeasurementModel::new(bfs, basis, cfg.noise_var)?.measure(channel, rng)
}

/// Linear MMSE estimator `A_o = R_v F^H (F R_v F^H + R_n)^{-1}` with
/// `R_v = diag(λ)`, precomputed for repeated use.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearMmse {
    /// `MN × L`.
    pub gain: CMat,
    pub err_cov: CMat,
    pub j_mmse: f64,
}

impl LinearMmse {
    pub fn new(f_matrix: &CMat, noise_cov: &CMat, lam_kron: &[f64]) -> Result<Self> {
        let mn = lam_kron.len();
        if f_matrix.ncols() != mn || noise_cov.nrows() != f_matrix.nrows() || !noise_cov.is_square() {
            return Err(Error::DimensionMismatch(format!(
                "F is {}x{}, R_n is {}x{}, {mn} eigenvalues",
                f_matrix.nrows(),
                f_matrix.ncols(),
                noise_cov.nrows(),
                noise_cov.ncols()
            )));
        }
        let r_v = linalg::real_diag(lam_kron);
        if f_matrix.nrows() == 0 {
            return Ok(LinearMmse {
                gain: CMat::zeros(mn, 0),
                j_mmse: lam_kron.iter().sum(),
                err_cov: r_v,
            });
        }
        let f_rv = f_matrix * &r_v;
        let g = &f_rv * f_matrix.adjoint() + noise_cov;
        let x = linalg::hpd_solve(&g, &f_rv)
            .ok_or_else(|| Error::numeric("mmse", "measurement covariance is not positive definite"))?;
        let err_cov = linalg::hermitian_part(&(r_v - f_rv.adjoint() * &x));
        Ok(LinearMmse {
            gain: x.adjoint(),
            j_mmse: linalg::trace_re(&err_cov),
            err_cov,
        })
    }

    pub fn apply(&self, y: &CVec) -> CVec {
        &self.gain * y
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateResult {
    pub h_v_hat: CVec,
    pub h_hat: CMat,
    pub err_cov: CMat,
    pub j_mmse: f64,
}

pub fn mmse_estimate(meas: &MeasurementSet, basis: &EigenBasis) -> Result<EstimateResult> {
    let est = LinearMmse::new(&meas.f_matrix, &meas.noise_cov, basis.lam_kron.as_slice())?;
    let h_v_hat = est.apply(&meas.y);
    let h_hat = basis.to_antenna(&linalg::unvec(&h_v_hat, basis.n_rx(), basis.n_tx()));
    Ok(EstimateResult {
        h_v_hat,
        h_hat,
        err_cov: est.err_cov,
        j_mmse: est.j_mmse,
    })
}

/// Monte Carlo mean of `‖h_v − ĥ_v‖²` over `trials` channel and noise draws,
/// each trial on its own stream derived from `seed`.
pub fn empirical_mse(
    cfg: &SystemConfig,
    plan: &TrainingPlan,
    basis: &EigenBasis,
    trials: usize,
    seed: u64,
) -> Result<f64> {
    if trials == 0 {
        return Err(Error::param("trials", "must be at least 1"));
    }
    let model = MeasurementModel::new(plan.beamformers(), basis, cfg.noise_var)?;
    let est = LinearMmse::new(&model.f_matrix, &model.noise_cov, basis.lam_kron.as_slice())?;
    let mut total = 0.0;
    for t in 0..trials as u64 {
        let channel = sample_channel(basis, &mut rng::stream(seed, Purpose::Channel, &[t]));
        let meas = model.measure(&channel, &mut rng::stream(seed, Purpose::Noise, &[t]))?;
        let err = linalg::vec_cols(&channel.h_virtual) - est.apply(&meas.y);
        total += err.norm_squared();
    }
    Ok(total / trials as f64)
}
