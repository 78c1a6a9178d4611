//! NMSE, spectral efficiency, and the seeded Monte Carlo sweep engine.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimator::{realize_beamformers, LinearMmse, MeasurementModel, NoiseModel};
use crate::hybrid::{pe_altmin_best, AltMinOptions, HybridFactors};
use crate::linalg::{self, c, CMat};
use crate::model::{eigen_basis, sample_channel, CorrelationPair, EigenBasis, SystemConfig, SPEED_OF_LIGHT};
use crate::rng::{self, Purpose};
use crate::training::{design_training, equal_power_plan, TrainingPlan};

/// `‖ĥ − h‖_F² / ‖h‖_F²`.
pub fn nmse(h_hat: &CMat, h: &CMat) -> Result<f64> {
    if h_hat.shape() != h.shape() {
        return Err(Error::DimensionMismatch(format!(
            "estimate is {:?}, channel is {:?}",
            h_hat.shape(),
            h.shape()
        )));
    }
    let den = h.norm_squared();
    if den == 0.0 {
        return Err(Error::ZeroChannel);
    }
    Ok((h_hat - h).norm_squared() / den)
}

pub fn to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prelog {
    /// Coherence time in seconds.
    pub t_c: f64,
    pub eta: f64,
    /// Training used more than the coherence interval and `η` was clamped to 0.
    pub clamped: bool,
}

/// Coherence time `√(9/(16π)) / f_m` with `f_m = v f_c / c`, and the
/// fraction `η = 1 − Q_nz / (T_c B_w)` of it left for data.
pub fn coherence_prelog(cfg: &SystemConfig, q_nz: usize) -> Prelog {
    let f_m = cfg.velocity_mps / SPEED_OF_LIGHT * cfg.carrier_hz;
    let t_c = (9.0 / (16.0 * std::f64::consts::PI)).sqrt() / f_m;
    let raw = 1.0 - q_nz as f64 / (t_c * cfg.bandwidth_hz);
    if raw < 0.0 {
        log::warn!("{q_nz} training slots exceed the coherence interval");
    }
    Prelog {
        t_c,
        eta: raw.clamp(0.0, 1.0),
        clamped: raw < 0.0,
    }
}

/// Data-phase beamformers designed on a channel estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct DataBeamformers {
    /// Fully-digital precoder, `N × N_s`.
    pub t_total: CMat,
    /// Fully-digital combiner, `M × N_s`.
    pub q_total: CMat,
    /// PE-AltMin factors of `(T, Q)` when hybrid hardware is modelled.
    pub hybrid: Option<(HybridFactors, HybridFactors)>,
}

impl DataBeamformers {
    /// Precoder and combiner the hardware actually applies.
    pub fn applied(&self) -> (CMat, CMat) {
        match &self.hybrid {
            Some((t, q)) => (t.effective(), q.effective()),
            None => (self.t_total.clone(), self.q_total.clone()),
        }
    }
}

/// Top-`N_s` singular-vector beamformers of `h_hat` with unit power per stream.
pub fn design_data_beamformers<R: Rng + ?Sized>(
    h_hat: &CMat,
    cfg: &SystemConfig,
    hybrid: Option<(&AltMinOptions, &mut R)>,
) -> Result<DataBeamformers> {
    let ns = cfg.n_streams;
    if ns > cfg.n_rf {
        return Err(Error::param("n_streams", "cannot exceed n_rf"));
    }
    if ns > h_hat.nrows().min(h_hat.ncols()) {
        return Err(Error::param("n_streams", "cannot exceed min(n_rx, n_tx)"));
    }
    let svd = linalg::svd_desc(h_hat)?;
    let top = svd.singular_values.first().copied().unwrap_or(0.0);
    if svd.singular_values[ns - 1] <= 1e-12 * top.max(f64::MIN_POSITIVE) {
        log::warn!("estimate has rank below {ns}; padding with weaker singular vectors");
    }
    // P_d = N_s: unit power per stream.
    let data_power = ns as f64;
    let t_total = svd.v.columns(0, ns).scale((data_power / ns as f64).sqrt());
    let q_total = svd.u.columns(0, ns).into_owned();
    let hybrid = match hybrid {
        Some((opts, rng)) => Some((
            pe_altmin_best(&t_total, cfg.n_rf, opts, rng)?,
            pe_altmin_best(&q_total, cfg.n_rf, opts, rng)?,
        )),
        None => None,
    };
    Ok(DataBeamformers {
        t_total,
        q_total,
        hybrid,
    })
}

/// `η log₂ det(I + E^{-1} Q^H Ĥ T T^H Ĥ^H Q)` with the estimation error
/// folded into `E = Q^H (H_e T T^H H_e^H + σ² I) Q`.
pub fn spectral_efficiency(
    h: &CMat,
    h_hat: &CMat,
    t_total: &CMat,
    q_total: &CMat,
    noise_var: f64,
    eta: f64,
) -> Result<f64> {
    let (m, n) = h.shape();
    if h_hat.shape() != (m, n) || t_total.nrows() != n || q_total.nrows() != m {
        return Err(Error::DimensionMismatch("spectral efficiency operands".into()));
    }
    let h_err = h - h_hat;
    let qe = q_total.adjoint() * &h_err * t_total;
    let qs = q_total.adjoint() * h_hat * t_total;
    let e = &qe * qe.adjoint() + (q_total.adjoint() * q_total).scale(noise_var);
    let total = &e + &qs * qs.adjoint();
    let mut e_ridged = e.clone();
    let mut logdet_e = linalg::hpd_log2_det(&e);
    if logdet_e.is_none() {
        for i in 0..e_ridged.nrows() {
            e_ridged[(i, i)] += c(1e-12, 0.0);
        }
        logdet_e = linalg::hpd_log2_det(&e_ridged);
    }
    let (Some(le), Some(lt)) = (logdet_e, linalg::hpd_log2_det(&(&total + (&e_ridged - &e)))) else {
        log::warn!("interference-plus-noise matrix is singular; spectral efficiency set to 0");
        return Ok(0.0);
    };
    Ok(eta * (lt - le).max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    WaterfillFd,
    WaterfillHybrid,
    EqualFd,
    EqualHybrid,
    PerfectCsi,
}

impl Scheme {
    pub const ALL: [Scheme; 5] = [
        Scheme::WaterfillFd,
        Scheme::WaterfillHybrid,
        Scheme::EqualFd,
        Scheme::EqualHybrid,
        Scheme::PerfectCsi,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::WaterfillFd => "waterfill-fd",
            Scheme::WaterfillHybrid => "waterfill-hybrid",
            Scheme::EqualFd => "equal-fd",
            Scheme::EqualHybrid => "equal-hybrid",
            Scheme::PerfectCsi => "perfect-csi",
        }
    }

    pub fn is_hybrid(self) -> bool {
        matches!(self, Scheme::WaterfillHybrid | Scheme::EqualHybrid)
    }

    fn stream_tag(self) -> u64 {
        self as u64 + 1
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown scheme '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SweepAxis {
    /// Single point at the base configuration.
    None,
    /// `E_T/σ²` in dB.
    Energy,
    Slots,
    /// `|ρ|`, keeping the phase of the base `ρ`.
    Rho,
    RxAntennas,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::None => "none",
            SweepAxis::Energy => "energy",
            SweepAxis::Slots => "slots",
            SweepAxis::Rho => "rho",
            SweepAxis::RxAntennas => "rx_antennas",
        }
    }

    /// Base configuration with the swept parameter set to `value`.
    pub fn apply(self, base: &SystemConfig, value: f64) -> Result<SystemConfig> {
        let mut cfg = base.clone();
        let count = |name: &'static str| {
            if value >= 1.0 && value.fract() == 0.0 {
                Ok(value as usize)
            } else {
                Err(Error::param(name, format!("sweep value {value} is not a positive integer")))
            }
        };
        match self {
            SweepAxis::None => {}
            SweepAxis::Energy => cfg.energy_budget = base.noise_var * 10f64.powf(value / 10.0),
            SweepAxis::Slots => cfg.q_slots = count("q_slots")?,
            SweepAxis::Rho => {
                let phase = if base.rho.norm() > 0.0 { base.rho.arg() } else { 0.0 };
                cfg.rho = Complex64::from_polar(value, phase);
            }
            SweepAxis::RxAntennas => {
                cfg.n_rx = count("n_rx")?;
                let full = cfg.n_tx * cfg.n_rx / cfg.n_rf.max(1);
                cfg.q_slots = if base.q_slots == base.full_slots() {
                    full
                } else {
                    base.q_slots.min(full)
                };
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            SweepAxis::None,
            SweepAxis::Energy,
            SweepAxis::Slots,
            SweepAxis::Rho,
            SweepAxis::RxAntennas,
        ]
        .into_iter()
        .find(|x| x.name() == s)
        .ok_or_else(|| Error::InvalidInput(format!("unknown sweep axis '{s}'")))
    }
}

/// Knobs of the sweep engine not carried by [`SystemConfig`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepOptions {
    pub noise_model: NoiseModel,
    pub altmin_restarts: usize,
    /// Perfect-CSI rows charge no training time (`η` with `Q_nz = 0`).
    pub perfect_csi_free_training: bool,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            noise_model: NoiseModel::Matched,
            altmin_restarts: 1,
            perfect_csi_free_training: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationRecord {
    pub axis: SweepAxis,
    pub sweep_value: f64,
    pub scheme: Scheme,
    pub trials: usize,
    /// Mean NMSE, linear.
    pub nmse: f64,
    pub nmse_stderr: f64,
    pub se_bits: f64,
    pub se_stderr: f64,
    pub q_nz: usize,
    pub eta: f64,
    pub seed: u64,
    /// Set when the point could not be evaluated; the metrics are NaN.
    pub error: Option<String>,
}

impl EvaluationRecord {
    pub fn nmse_db(&self) -> f64 {
        to_db(self.nmse)
    }

    pub fn nmse_db_stderr(&self) -> f64 {
        10.0 / std::f64::consts::LN_10 * self.nmse_stderr / self.nmse
    }
}

fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

struct PointContext {
    cfg: SystemConfig,
    basis: EigenBasis,
    waterfill: TrainingPlan,
}

impl PointContext {
    fn new(cfg: SystemConfig) -> Result<Self> {
        let basis = eigen_basis(&CorrelationPair::from_config(&cfg)?)?;
        let waterfill = design_training(&basis, &cfg)?;
        Ok(PointContext { cfg, basis, waterfill })
    }
}

struct PointOutcome {
    nmse: f64,
    nmse_stderr: f64,
    se: f64,
    se_stderr: f64,
    q_nz: usize,
    eta: f64,
}

fn evaluate_point(
    ctx: &PointContext,
    point: u64,
    scheme: Scheme,
    trials: usize,
    opts: &SweepOptions,
) -> Result<PointOutcome> {
    let cfg = &ctx.cfg;
    let seed = cfg.seed;
    let altmin = AltMinOptions {
        max_iter: cfg.altmin_max_iter,
        tol: cfg.altmin_tol,
        restarts: opts.altmin_restarts.max(1),
    };
    let tag = scheme.stream_tag();
    let equal;
    let plan = match scheme {
        Scheme::EqualFd | Scheme::EqualHybrid => {
            equal = equal_power_plan(&ctx.basis, cfg)?;
            &equal
        }
        _ => &ctx.waterfill,
    };
    let q_nz = if scheme == Scheme::PerfectCsi && opts.perfect_csi_free_training {
        0
    } else {
        plan.q_nz
    };
    let eta = coherence_prelog(cfg, q_nz).eta;

    let estimator = if scheme == Scheme::PerfectCsi {
        None
    } else {
        let mut hw_rng = rng::stream(seed, Purpose::TrainingHybrid, &[point, tag]);
        let bfs = realize_beamformers(plan, scheme.is_hybrid(), cfg.n_rf, &altmin, &mut hw_rng)?;
        let model = MeasurementModel::new(bfs, &ctx.basis, cfg.noise_var)?;
        let est = LinearMmse::new(
            &model.f_matrix,
            &model.assumed_noise_cov(opts.noise_model),
            ctx.basis.lam_kron.as_slice(),
        )?;
        Some((model, est))
    };

    let per_trial: Vec<(f64, f64)> = (0..trials as u64)
        .into_par_iter()
        .map(|t| -> Result<(f64, f64)> {
            let channel = sample_channel(&ctx.basis, &mut rng::stream(seed, Purpose::Channel, &[point, t]));
            let h_hat = match &estimator {
                None => channel.h.clone(),
                Some((model, est)) => {
                    let mut noise = rng::stream(seed, Purpose::Noise, &[point, tag, t]);
                    let meas = model.measure(&channel, &mut noise)?;
                    let h_v_hat = est.apply(&meas.y);
                    ctx.basis.to_antenna(&linalg::unvec(&h_v_hat, cfg.n_rx, cfg.n_tx))
                }
            };
            let err = nmse(&h_hat, &channel.h)?;
            let mut data_rng = rng::stream(seed, Purpose::DataHybrid, &[point, tag, t]);
            let hybrid = scheme.is_hybrid().then_some((&altmin, &mut data_rng));
            let (t_applied, q_applied) = design_data_beamformers(&h_hat, cfg, hybrid)?.applied();
            let se = spectral_efficiency(&channel.h, &h_hat, &t_applied, &q_applied, cfg.noise_var, eta)?;
            Ok((err, se))
        })
        .collect::<Result<_>>()?;
    let nmse_samples: Vec<f64> = per_trial.iter().map(|p| p.0).collect();
    let se_samples: Vec<f64> = per_trial.iter().map(|p| p.1).collect();
    let (nmse, nmse_stderr) = mean_stderr(&nmse_samples);
    let (se, se_stderr) = mean_stderr(&se_samples);
    Ok(PointOutcome {
        nmse,
        nmse_stderr,
        se,
        se_stderr,
        q_nz,
        eta,
    })
}

/// Monte Carlo evaluation of every `scheme` at every sweep `value`.
///
/// All schemes at a point see the same channel draws; noise and hybrid
/// randomness are drawn per scheme. Every trial owns a stream derived from
/// `cfg.seed`, and results are gathered in index order, so the output does
/// not depend on the thread count. A point that fails is reported with NaN
/// metrics and its error message.
pub fn run_sweep(
    cfg: &SystemConfig,
    axis: SweepAxis,
    values: &[f64],
    schemes: &[Scheme],
    trials: usize,
    opts: &SweepOptions,
) -> Result<Vec<EvaluationRecord>> {
    if values.is_empty() {
        return Err(Error::param("values", "sweep needs at least one value"));
    }
    if schemes.is_empty() {
        return Err(Error::param("schemes", "at least one scheme is required"));
    }
    if trials == 0 {
        return Err(Error::param("trials", "must be at least 1"));
    }
    let contexts: Vec<Result<PointContext>> = values
        .par_iter()
        .map(|&v| axis.apply(cfg, v).and_then(PointContext::new))
        .collect();
    let jobs: Vec<(usize, Scheme)> = (0..values.len())
        .flat_map(|p| schemes.iter().map(move |&s| (p, s)))
        .collect();
    Ok(jobs
        .par_iter()
        .map(|&(p, scheme)| {
            let outcome = contexts[p]
                .as_ref()
                .map_err(Clone::clone)
                .and_then(|ctx| evaluate_point(ctx, p as u64, scheme, trials, opts));
            let mut rec = EvaluationRecord {
                axis,
                sweep_value: values[p],
                scheme,
                trials,
                nmse: f64::NAN,
                nmse_stderr: f64::NAN,
                se_bits: f64::NAN,
                se_stderr: f64::NAN,
                q_nz: 0,
                eta: f64::NAN,
                seed: cfg.seed,
                error: None,
            };
            match outcome {
                Ok(o) => {
                    rec.nmse = o.nmse;
                    rec.nmse_stderr = o.nmse_stderr;
                    rec.se_bits = o.se;
                    rec.se_stderr = o.se_stderr;
                    rec.q_nz = o.q_nz;
                    rec.eta = o.eta;
                }
                Err(e) => {
                    log::error!("{axis}={} {scheme}: {e}", values[p]);
                    rec.error = Some(e.to_string());
                }
            }
            rec
        })
        .collect())
}

/// One row of the training-slot utilization profile.
#[derive(Debug, Clone, PartialEq)]
pub struct QnzRow {
    pub n_rx: usize,
    pub rho: f64,
    pub q: usize,
    pub q_nz: usize,
    pub ratio: f64,
}

/// `Q_nz / Q` of the water-filling design with `Q = MN/N^RF`, for every
/// receive array size and correlation magnitude.
pub fn qnz_profile(cfg: &SystemConfig, m_values: &[usize], rho_values: &[f64]) -> Result<Vec<QnzRow>> {
    let mut rows = Vec::with_capacity(m_values.len() * rho_values.len());
    for &m in m_values {
        for &rho in rho_values {
            let mut sized = cfg.clone();
            sized.n_rx = m;
            sized.q_slots = sized.full_slots();
            let point = SweepAxis::Rho.apply(&sized, rho)?;
            let basis = eigen_basis(&CorrelationPair::from_config(&point)?)?;
            let plan = design_training(&basis, &point)?;
            rows.push(QnzRow {
                n_rx: m,
                rho,
                q: point.q_slots,
                q_nz: plan.q_nz,
                ratio: plan.q_nz as f64 / point.q_slots as f64,
            });
        }
    }
    Ok(rows)
}
