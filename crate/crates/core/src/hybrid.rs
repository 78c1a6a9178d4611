//! Analog/digital factorizations of fully-digital beamformers.

use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{self, c, CMat, CVec};
use crate::rng;

/// Relative slack allowed on the AltMin objective before it counts as an increase.
const MONOTONE_RTOL: f64 = 1e-12;

/// `target ≈ analog · digital` with every analog entry on the unit circle.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridFactors {
    pub analog: CMat,
    pub digital: CMat,
    /// `‖target − analog · digital‖_F`.
    pub residual: f64,
    /// Squared AltMin objective after each iteration; empty for the exact split.
    pub objective: Vec<f64>,
}

impl HybridFactors {
    pub fn effective(&self) -> CMat {
        &self.analog * &self.digital
    }

    pub fn iterations(&self) -> usize {
        self.objective.len()
    }
}

pub fn effective_beamformer(factors: &HybridFactors) -> CMat {
    factors.effective()
}

fn check_finite(m: &CMat) -> Result<()> {
    if m.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
        return Err(Error::InvalidInput("target has non-finite entries".into()));
    }
    Ok(())
}

/// Exact split of a vector over two phase shifters per antenna.
///
/// Each entry `f e^{jω}` is written as `f_max (e^{j(ω−θ)} + e^{j(ω+θ)})` with
/// `cos θ = f / (2 f_max)`; the remaining RF chains get phase zero and a zero
/// digital weight.
pub fn split_precoder_vector(v: &CVec, n_rf: usize) -> Result<HybridFactors> {
    if n_rf < 2 {
        return Err(Error::InsufficientRfChains { rf_chains: n_rf });
    }
    let target = CMat::from_column_slice(v.len(), 1, v.as_slice());
    check_finite(&target)?;
    let n = v.len();
    let f_max = v.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let mut analog = CMat::from_element(n, n_rf, linalg::ONE);
    let mut digital = CMat::zeros(n_rf, 1);
    if f_max > 0.0 {
        for (i, z) in v.iter().enumerate() {
            let f = z.norm();
            let omega = if f > 0.0 { z.arg() } else { 0.0 };
            let theta = (f / (2.0 * f_max)).clamp(0.0, 1.0).acos();
            analog[(i, 0)] = Complex64::from_polar(1.0, omega - theta);
            analog[(i, 1)] = Complex64::from_polar(1.0, omega + theta);
        }
        digital[(0, 0)] = c(f_max, 0.0);
        digital[(1, 0)] = c(f_max, 0.0);
    }
    let residual = (&target - &analog * &digital).norm();
    Ok(HybridFactors {
        analog,
        digital,
        residual,
        objective: Vec::new(),
    })
}

/// Unit-modulus matrix carrying the phases of `m`; zero entries map to phase 0.
pub fn phase_extract(m: &CMat) -> CMat {
    m.map(|z| {
        if z.norm() > 0.0 {
            Complex64::from_polar(1.0, z.arg())
        } else {
            linalg::ONE
        }
    })
}

/// Semi-unitary digital factor maximizing `Re Tr(D^H A^H W)`.
fn procrustes(target: &CMat, analog: &CMat) -> Result<CMat> {
    let svd = linalg::svd_desc(&(target.adjoint() * analog))?;
    Ok(&svd.v * svd.u.adjoint())
}

/// `‖W‖² − τ²/K` evaluated as `‖W − sAD‖² + s²‖A − A D D^H‖²` with
/// `s = τ/K`, which avoids cancellation as the fit becomes exact.
fn surrogate(target: &CMat, analog: &CMat, digital: &CMat, scale: f64) -> f64 {
    let ad = analog * digital;
    let tau = ad.iter().zip(target.iter()).map(|(a, w)| (a.conj() * w).re).sum::<f64>();
    let s = tau / scale;
    let fit = (target - ad.scale(s)).norm_squared();
    let leak = (analog - &ad * digital.adjoint()).norm_squared();
    fit + s * s * leak
}

/// Stopping and restart controls for [`pe_altmin`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AltMinOptions {
    pub max_iter: usize,
    pub tol: f64,
    pub restarts: usize,
}

impl Default for AltMinOptions {
    fn default() -> Self {
        AltMinOptions {
            max_iter: 500,
            tol: 1e-6,
            restarts: 1,
        }
    }
}

/// Phase-extraction alternating minimization from a random-phase start.
///
/// Each iteration takes the Procrustes digital factor `D = V U^H` for the
/// current analog matrix, then sets the analog phases to those of `W D^H`.
/// Both steps increase `τ = Re Tr(A^H W D^H)`, so the tracked objective
/// `‖W‖² − τ²/(rows·N^RF)` never increases; it equals `min_c ‖W − c A D‖²`
/// when `D` is square. Iteration stops once the square root of the
/// objective drops by less than `tol` relative. The returned digital factor is `D` scaled by the
/// least-squares gain, and `residual` is the exact distance to the target.
pub fn pe_altmin<R: Rng + ?Sized>(
    target: &CMat,
    n_rf: usize,
    max_iter: usize,
    tol: f64,
    rng: &mut R,
) -> Result<HybridFactors> {
    check_finite(target)?;
    if max_iter == 0 {
        return Err(Error::param("altmin_max_iter", "must be at least 1"));
    }
    if n_rf == 0 || target.ncols() > n_rf {
        return Err(Error::param(
            "n_rf",
            format!("{} target columns do not fit {n_rf} RF chains", target.ncols()),
        ));
    }
    let (rows, cols) = target.shape();
    let mut analog = rng::random_phases(rng, rows, n_rf);
    let target_sq = target.norm_squared();
    if target_sq == 0.0 {
        return Ok(HybridFactors {
            analog,
            digital: CMat::zeros(n_rf, cols),
            residual: 0.0,
            objective: vec![0.0],
        });
    }
    let scale = (rows * n_rf) as f64;
    let mut digital = procrustes(target, &analog)?;
    let mut objective: Vec<f64> = Vec::new();
    for _ in 0..max_iter {
        analog = phase_extract(&(target * digital.adjoint()));
        digital = procrustes(target, &analog)?;
        let value = surrogate(target, &analog, &digital, scale);
        if let Some(&prev) = objective.last() {
            if value > prev + MONOTONE_RTOL * target_sq {
                return Err(Error::numeric(
                    "pe-altmin",
                    format!("objective rose from {prev:e} to {value:e}"),
                ));
            }
            objective.push(value);
            if prev == 0.0 || 1.0 - (value / prev).sqrt() <= tol {
                break;
            }
        } else {
            objective.push(value);
        }
    }
    let recomposed = &analog * &digital;
    let gain = recomposed.norm_squared();
    if gain > 0.0 {
        let inner: Complex64 = recomposed
            .iter()
            .zip(target.iter())
            .map(|(r, t)| r.conj() * t)
            .sum();
        digital *= inner / gain;
    }
    let residual = (target - &analog * &digital).norm();
    Ok(HybridFactors {
        analog,
        digital,
        residual,
        objective,
    })
}

/// [`pe_altmin`] over `opts.restarts` random starts, keeping the smallest residual.
pub fn pe_altmin_best<R: Rng + ?Sized>(
    target: &CMat,
    n_rf: usize,
    opts: &AltMinOptions,
    rng: &mut R,
) -> Result<HybridFactors> {
    let mut best: Option<HybridFactors> = None;
    for _ in 0..opts.restarts.max(1) {
        let f = pe_altmin(target, n_rf, opts.max_iter, opts.tol, rng)?;
        if best.as_ref().is_none_or(|b| f.residual < b.residual) {
            best = Some(f);
        }
    }
    Ok(best.expect("at least one restart"))
}
