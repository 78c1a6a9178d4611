//! Kronecker-correlated channel model and the eigen-domain measurement basis.
//!
//! Conventions used throughout the crate:
//! * `vec(·)` stacks columns.
//! * Eigenvalues on each side are sorted descending and every eigenvector has
//!   its largest-magnitude entry real and positive.
//! * `lam_kron[i * M + j] = lam_tx[i] * lam_rx[j]`, the diagonal of
//!   `Λ_t ⊗ Λ_r`, and eigen-direction block `b` covers entries
//!   `b * n_rf .. (b + 1) * n_rf`.

use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result, Side};
use crate::linalg::{self, c, CMat, RVec};
use crate::rng;

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Eigenvalues below this are treated as a rank-deficient correlation.
pub const EIGEN_FLOOR: f64 = 1e-12;

/// Scenario scalars shared by every stage of the simulator.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig {
    /// Transmit antennas `N`.
    pub n_tx: usize,
    /// Receive antennas `M`.
    pub n_rx: usize,
    /// RF chains at each end.
    pub n_rf: usize,
    /// Training slots available, `Q`.
    pub q_slots: usize,
    /// Total training energy `E_T`.
    pub energy_budget: f64,
    pub noise_var: f64,
    /// Correlation coefficient shared by both ends.
    pub rho: Complex64,
    pub n_streams: usize,
    pub bandwidth_hz: f64,
    pub velocity_mps: f64,
    pub carrier_hz: f64,
    /// Squared budget-gap tolerance of the water-filling bisection.
    pub tol: f64,
    pub altmin_max_iter: usize,
    pub altmin_tol: f64,
    pub seed: u64,
}

impl Default for SystemConfig {
    /// The desk-scale reference scenario: `|ρ| = 0.8`, `N = 32`, `M = 16`,
    /// eight RF chains, four streams, `E_T/σ² = 64` over `Q = MN/N^RF` slots.
    fn default() -> Self {
        let (n_tx, n_rx, n_rf) = (32, 16, 8);
        SystemConfig {
            n_tx,
            n_rx,
            n_rf,
            q_slots: n_tx * n_rx / n_rf,
            energy_budget: 64.0,
            noise_var: 1.0,
            rho: c(0.8, 0.0),
            n_streams: 4,
            bandwidth_hz: 1.5e6,
            velocity_mps: 50.0 / 3.6,
            carrier_hz: 2e9,
            tol: 1e-6,
            altmin_max_iter: 500,
            altmin_tol: 1e-6,
            seed: 1,
        }
    }
}

impl SystemConfig {
    /// Slots needed to visit every eigen-direction block once, `MN / N^RF`.
    pub fn full_slots(&self) -> usize {
        self.n_tx * self.n_rx / self.n_rf
    }

    /// Receive blocks per transmit eigenvector, `ν = M / N^RF`.
    pub fn nu(&self) -> usize {
        self.n_rx / self.n_rf
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &'static str, x: f64| {
            if x.is_finite() && x > 0.0 {
                Ok(())
            } else {
                Err(Error::param(name, format!("must be positive, got {x}")))
            }
        };
        if self.n_tx == 0 {
            return Err(Error::param("n_tx", "must be at least 1"));
        }
        if self.n_rx == 0 {
            return Err(Error::param("n_rx", "must be at least 1"));
        }
        if self.n_rf < 2 {
            return Err(Error::param("n_rf", format!("must be at least 2, got {}", self.n_rf)));
        }
        if !self.n_rx.is_multiple_of(self.n_rf) {
            return Err(Error::param(
                "n_rx",
                format!("{} receive antennas are not divisible by {} RF chains", self.n_rx, self.n_rf),
            ));
        }
        if self.n_rf > self.n_rx || self.n_rf > self.n_tx {
            return Err(Error::param("n_rf", "cannot exceed the antenna count at either end"));
        }
        if self.q_slots == 0 || self.q_slots > self.full_slots() {
            return Err(Error::param(
                "q_slots",
                format!("must lie in 1..={}, got {}", self.full_slots(), self.q_slots),
            ));
        }
        if !(self.energy_budget.is_finite() && self.energy_budget >= 0.0) {
            return Err(Error::param("energy_budget", "must be non-negative and finite"));
        }
        positive("noise_var", self.noise_var)?;
        if !(self.rho.norm() < 1.0) {
            return Err(Error::param("rho", format!("|rho| must be below 1, got {}", self.rho.norm())));
        }
        if self.n_streams == 0 || self.n_streams > self.n_rf {
            return Err(Error::param("n_streams", "must lie in 1..=n_rf"));
        }
        if self.n_streams > self.n_rx.min(self.n_tx) {
            return Err(Error::param("n_streams", "cannot exceed min(n_rx, n_tx)"));
        }
        positive("bandwidth_hz", self.bandwidth_hz)?;
        positive("velocity_mps", self.velocity_mps)?;
        positive("carrier_hz", self.carrier_hz)?;
        positive("tol", self.tol)?;
        positive("altmin_tol", self.altmin_tol)?;
        if self.altmin_max_iter == 0 {
            return Err(Error::param("altmin_max_iter", "must be at least 1"));
        }
        Ok(())
    }
}

/// Exponential correlation matrix: `S(i, j) = ρ^(j−i)` above the diagonal
/// and its conjugate below, so the result is Hermitian for complex `ρ`.
pub fn exp_correlation(rho: Complex64, n: usize) -> Result<CMat> {
    exp_correlation_raw(rho, n, true)
}

/// Same as [`exp_correlation`], optionally leaving the lower triangle as
/// `ρ^(i−j)` without conjugation. Only the self-check fault injection uses
/// `hermitian = false`.
pub fn exp_correlation_raw(rho: Complex64, n: usize, hermitian: bool) -> Result<CMat> {
    if !(rho.norm() < 1.0) {
        return Err(Error::param("rho", format!("|rho| must be below 1, got {}", rho.norm())));
    }
    if n == 0 {
        return Err(Error::param("n", "matrix size must be at least 1"));
    }
    let mut s = CMat::zeros(n, n);
    for i in 0..n {
        s[(i, i)] = linalg::ONE;
        let mut p = linalg::ONE;
        for j in (i + 1)..n {
            p *= rho;
            s[(i, j)] = p;
            s[(j, i)] = if hermitian { p.conj() } else { p };
        }
    }
    Ok(s)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationPair {
    pub s_tx: CMat,
    pub s_rx: CMat,
}

impl CorrelationPair {
    pub fn new(s_tx: CMat, s_rx: CMat) -> Result<Self> {
        for (name, s) in [("s_tx", &s_tx), ("s_rx", &s_rx)] {
            if !s.is_square() || s.nrows() == 0 {
                return Err(Error::param(name, "must be a non-empty square matrix"));
            }
            let defect = linalg::hermitian_defect(s);
            if defect > 1e-12 {
                return Err(Error::param(name, format!("not Hermitian (defect {defect:e})")));
            }
            if s.diagonal().iter().any(|d| (d - linalg::ONE).norm() > 1e-12) {
                return Err(Error::param(name, "diagonal must be all ones"));
            }
        }
        Ok(CorrelationPair { s_tx, s_rx })
    }

    /// Both ends use the exponential model with the same `ρ`.
    pub fn exponential(rho: Complex64, n_tx: usize, n_rx: usize) -> Result<Self> {
        Ok(CorrelationPair {
            s_tx: exp_correlation(rho, n_tx)?,
            s_rx: exp_correlation(rho, n_rx)?,
        })
    }

    pub fn from_config(cfg: &SystemConfig) -> Result<Self> {
        Self::exponential(cfg.rho, cfg.n_tx, cfg.n_rx)
    }
}

/// Eigen factorizations of both correlation matrices plus the Kronecker
/// eigenvalue diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenBasis {
    pub u_tx: CMat,
    pub lam_tx: RVec,
    pub u_rx: CMat,
    pub lam_rx: RVec,
    pub lam_kron: RVec,
}

fn side_eigen(s: &CMat, side: Side) -> Result<(RVec, CMat)> {
    let (mut values, vectors) = linalg::hermitian_eigen_desc(s);
    for (index, v) in values.iter_mut().enumerate() {
        if *v < -1e-10 {
            return Err(Error::param(
                match side {
                    Side::Transmit => "s_tx",
                    Side::Receive => "s_rx",
                },
                format!("not positive semidefinite: eigenvalue #{index} = {v:e}"),
            ));
        }
        if *v < 0.0 {
            *v = 0.0;
        }
        if *v < EIGEN_FLOOR {
            return Err(Error::RankDeficient {
                side,
                index,
                value: *v,
            });
        }
    }
    Ok((RVec::from_vec(values), vectors))
}

pub fn eigen_basis(corr: &CorrelationPair) -> Result<EigenBasis> {
    let (lam_tx, u_tx) = side_eigen(&corr.s_tx, Side::Transmit)?;
    let (lam_rx, u_rx) = side_eigen(&corr.s_rx, Side::Receive)?;
    let (n, m) = (lam_tx.len(), lam_rx.len());
    let mut lam_kron = RVec::zeros(n * m);
    for i in 0..n {
        for j in 0..m {
            lam_kron[i * m + j] = lam_tx[i] * lam_rx[j];
        }
    }
    Ok(EigenBasis {
        u_tx,
        lam_tx,
        u_rx,
        lam_rx,
        lam_kron,
    })
}

impl EigenBasis {
    pub fn n_tx(&self) -> usize {
        self.lam_tx.len()
    }

    pub fn n_rx(&self) -> usize {
        self.lam_rx.len()
    }

    /// `U Λ^{1/2} U^H` for the transmit side.
    pub fn sqrt_tx(&self) -> CMat {
        sqrt_from_eigen(&self.u_tx, &self.lam_tx)
    }

    pub fn sqrt_rx(&self) -> CMat {
        sqrt_from_eigen(&self.u_rx, &self.lam_rx)
    }

    /// Full eigen-domain map `Ψ = conj(U_t) ⊗ U_r`, so `vec(H) = Ψ vec(H_v)`.
    pub fn psi(&self) -> CMat {
        self.u_tx.map(|z| z.conj()).kronecker(&self.u_rx)
    }

    /// Antenna-domain channel from an eigen-domain one: `U_r H_v U_t^H`.
    pub fn to_antenna(&self, h_virtual: &CMat) -> CMat {
        &self.u_rx * h_virtual * self.u_tx.adjoint()
    }

    pub fn to_virtual(&self, h: &CMat) -> CMat {
        self.u_rx.adjoint() * h * &self.u_tx
    }
}

fn sqrt_from_eigen(u: &CMat, lam: &RVec) -> CMat {
    let d = CMat::from_diagonal(&lam.map(|x| c(x.max(0.0).sqrt(), 0.0)));
    u * d * u.adjoint()
}

/// One channel draw in the antenna, white, and eigen domains.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub h: CMat,
    pub h_white: CMat,
    pub h_virtual: CMat,
}

impl ChannelRealization {
    pub fn from_white(basis: &EigenBasis, h_white: CMat) -> Self {
        let h = basis.sqrt_rx() * &h_white * basis.sqrt_tx();
        let h_virtual = basis.to_virtual(&h);
        ChannelRealization {
            h,
            h_white,
            h_virtual,
        }
    }
}

/// Draws `H = S_r^{1/2} H_w S_t^{1/2}` with iid unit-variance `CN` entries in `H_w`.
pub fn sample_channel<R: Rng + ?Sized>(basis: &EigenBasis, rng: &mut R) -> ChannelRealization {
    let h_white = rng::complex_normal_matrix(rng, basis.n_rx(), basis.n_tx(), 1.0);
    ChannelRealization::from_white(basis, h_white)
}

/// Maps slot `q` (1-based) to its transmit eigenvector index `n_q` and
/// receive block index `m_q`, both 1-based.
pub fn slot_index_map(q: usize, m: usize, n_rf: usize) -> Result<(usize, usize)> {
    if n_rf == 0 || !m.is_multiple_of(n_rf) {
        return Err(Error::param(
            "n_rf",
            format!("{m} receive antennas are not divisible by {n_rf} RF chains"),
        ));
    }
    if q == 0 {
        return Err(Error::param("q", "slot indices start at 1"));
    }
    let nu = m / n_rf;
    let n_q = q.div_ceil(nu);
    let m_q = match q % nu {
        0 => nu,
        r => r,
    };
    Ok((n_q, m_q))
}

/// Transmit eigenvector (0-based column of `U_t`) and receive column range
/// of eigen-direction block `block` (0-based).
pub fn block_columns(block: usize, n_rx: usize, n_rf: usize) -> (usize, std::ops::Range<usize>) {
    let nu = n_rx / n_rf;
    let tx = block / nu;
    let rx0 = (block % nu) * n_rf;
    (tx, rx0..rx0 + n_rf)
}

/// `Ψ_q = conj(U_t[:, n_q]) ⊗ U_r[:, block m_q]`, an `MN × N^RF` slice of `Ψ`.
pub fn build_psi_block(basis: &EigenBasis, q: usize, n_rf: usize) -> Result<CMat> {
    let (n_q, m_q) = slot_index_map(q, basis.n_rx(), n_rf)?;
    if n_q > basis.n_tx() {
        return Err(Error::param(
            "q",
            format!("slot {q} exceeds the {} available blocks", basis.n_tx() * basis.n_rx() / n_rf),
        ));
    }
    let tx = basis.u_tx.column(n_q - 1).map(|z| z.conj());
    let rx = basis.u_rx.columns((m_q - 1) * n_rf, n_rf);
    Ok(tx.kronecker(&rx))
}
