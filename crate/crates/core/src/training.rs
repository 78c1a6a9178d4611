//! MMSE training design: per-block water-filling and the fully-digital
//! training beamformers built from the correlation eigenvectors.

use crate::error::{Error, Result};
use crate::linalg::{self, c, CMat, CVec};
use crate::model::{block_columns, EigenBasis, SystemConfig};

/// Hard cap on water-filling bisection steps.
pub const WATERFILL_MAX_ITER: usize = 10_000;

/// Budget equality demanded on top of the squared-gap tolerance, relative to `E_T`.
pub const BUDGET_RTOL: f64 = 1e-9;

const NEWTON_MAX_ITER: usize = 200;

/// `Λ` partitioned into consecutive `N^RF`-sized eigen-direction blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockSpectrum {
    /// `block_eigs[b][k]`: `k`-th eigenvalue of block `b`.
    pub block_eigs: Vec<Vec<f64>>,
    pub block_traces: Vec<f64>,
    /// Block indices ordered by trace, descending; ties keep ascending index.
    pub sort_perm: Vec<usize>,
}

impl BlockSpectrum {
    pub fn from_lam_kron(lam_kron: &[f64], n_rf: usize) -> Result<Self> {
        if n_rf == 0 || lam_kron.is_empty() || !lam_kron.len().is_multiple_of(n_rf) {
            return Err(Error::InvalidSpectrum(format!(
                "{} eigenvalues cannot be split into blocks of {n_rf}",
                lam_kron.len()
            )));
        }
        Self::from_blocks(lam_kron.chunks(n_rf).map(<[f64]>::to_vec).collect())
    }

    pub fn from_basis(basis: &EigenBasis, n_rf: usize) -> Result<Self> {
        Self::from_lam_kron(basis.lam_kron.as_slice(), n_rf)
    }

    pub fn from_blocks(block_eigs: Vec<Vec<f64>>) -> Result<Self> {
        if block_eigs.is_empty() || block_eigs.iter().any(Vec::is_empty) {
            return Err(Error::InvalidSpectrum("empty block".into()));
        }
        if let Some(bad) = block_eigs.iter().flatten().find(|&&x| !(x > 0.0 && x.is_finite())) {
            return Err(Error::InvalidSpectrum(format!(
                "eigenvalues must be positive and finite, found {bad}"
            )));
        }
        let block_traces: Vec<f64> = block_eigs.iter().map(|b| b.iter().sum()).collect();
        let mut sort_perm: Vec<usize> = (0..block_eigs.len()).collect();
        sort_perm.sort_by(|&a, &b| {
            block_traces[b]
                .partial_cmp(&block_traces[a])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        Ok(BlockSpectrum {
            block_eigs,
            block_traces,
            sort_perm,
        })
    }

    pub fn n_blocks(&self) -> usize {
        self.block_eigs.len()
    }

    pub fn subset(&self, blocks: &[usize]) -> Result<Self> {
        Self::from_blocks(blocks.iter().map(|&b| self.block_eigs[b].clone()).collect())
    }
}

/// `μ₀^{(q)} = (1/σ²) Σ_k λ_k²`: the multiplier above which block `q` gets no power.
pub fn zero_power_threshold(block_eigs: &[f64], noise_var: f64) -> f64 {
    block_eigs.iter().map(|l| l * l).sum::<f64>() / noise_var
}

/// `(1/σ²) Σ_k (1/λ_k + α/σ²)^{-2} − μ₀` and its derivative in `α`.
fn stationarity(block_eigs: &[f64], alpha: f64, mu0: f64, noise_var: f64) -> (f64, f64) {
    let mut value = 0.0;
    let mut slope = 0.0;
    for &l in block_eigs {
        let d = 1.0 / l + alpha / noise_var;
        let inv2 = 1.0 / (d * d);
        value += inv2;
        slope -= 2.0 * inv2 / d;
    }
    (value / noise_var - mu0, slope / (noise_var * noise_var))
}

/// Power of one block at a fixed multiplier `μ₀`.
///
/// The stationarity residual is convex and strictly decreasing in `α`, so
/// Newton started at `α = 0` approaches the root from the left without
/// overshooting. A bisection pass finishes the job if Newton stalls.
pub fn newton_block_power(block_eigs: &[f64], mu0: f64, noise_var: f64) -> Result<f64> {
    if let Some(bad) = block_eigs.iter().find(|&&l| !(l > 0.0 && l.is_finite())) {
        return Err(Error::InvalidSpectrum(format!("eigenvalue {bad} is not positive")));
    }
    if !(mu0 > 0.0 && mu0.is_finite()) {
        return Err(Error::param("mu0", format!("must be positive, got {mu0}")));
    }
    if !(noise_var > 0.0) {
        return Err(Error::param("noise_var", "must be positive"));
    }
    let (r0, _) = stationarity(block_eigs, 0.0, mu0, noise_var);
    if r0 <= 0.0 {
        return Ok(0.0);
    }
    let target = 1e-13 * mu0;
    let mut alpha = 0.0f64;
    for _ in 0..NEWTON_MAX_ITER {
        let (r, dr) = stationarity(block_eigs, alpha, mu0, noise_var);
        if r.abs() <= target {
            return Ok(alpha);
        }
        let next = alpha - r / dr;
        if !(next.is_finite()) || next <= alpha {
            break;
        }
        alpha = next;
    }
    let (r, _) = stationarity(block_eigs, alpha, mu0, noise_var);
    if r.abs() <= 1e-10 * mu0 {
        return Ok(alpha);
    }
    bisect_block_power(block_eigs, mu0, noise_var, alpha)
}

fn bisect_block_power(block_eigs: &[f64], mu0: f64, noise_var: f64, lo_start: f64) -> Result<f64> {
    let residual = |a: f64| stationarity(block_eigs, a, mu0, noise_var).0;
    let mut lo = lo_start.max(0.0);
    if residual(lo) < 0.0 {
        lo = 0.0;
    }
    let mut hi = (lo * 2.0).max(1.0);
    while residual(hi) > 0.0 {
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(Error::numeric("block power", "could not bracket the root"));
        }
    }
    for _ in 0..2_000 {
        let mid = 0.5 * (lo + hi);
        let r = residual(mid);
        if r.abs() <= 1e-10 * mu0 || mid <= lo || mid >= hi {
            return Ok(mid);
        }
        if r > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::numeric("block power", "bisection did not converge"))
}

/// Water-filling allocation together with its multiplier.
#[derive(Debug, Clone, PartialEq)]
pub struct WaterfillSolution {
    pub powers: Vec<f64>,
    pub mu0: f64,
    pub iterations: usize,
}

impl WaterfillSolution {
    pub fn q_nz(&self) -> usize {
        self.powers.iter().filter(|&&a| a > 0.0).count()
    }
}

fn powers_at(spectrum: &BlockSpectrum, mu0: f64, noise_var: f64) -> Result<Vec<f64>> {
    spectrum
        .block_eigs
        .iter()
        .map(|b| newton_block_power(b, mu0, noise_var))
        .collect()
}

/// Splits `energy` across the blocks of `spectrum` to minimize
/// `Σ_q Tr((Λ̃_q^{-1} + α_q/σ² I)^{-1})`.
///
/// Bisection on the common multiplier `μ₀ ∈ [0, μ_max]`, stopping once the
/// squared budget gap is at most `tol` and the gap is also within
/// [`BUDGET_RTOL`] of the budget.
pub fn waterfill(
    spectrum: &BlockSpectrum,
    energy: f64,
    noise_var: f64,
    tol: f64,
) -> Result<WaterfillSolution> {
    if !(energy > 0.0 && energy.is_finite()) {
        return Err(Error::param("energy_budget", format!("must be positive, got {energy}")));
    }
    if !(noise_var > 0.0) {
        return Err(Error::param("noise_var", "must be positive"));
    }
    if !(tol > 0.0) {
        return Err(Error::param("tol", "must be positive"));
    }
    let mu_max = spectrum
        .block_eigs
        .iter()
        .map(|b| zero_power_threshold(b, noise_var))
        .fold(0.0, f64::max);
    let (mut lo, mut hi) = (0.0f64, mu_max);
    let mut last_gap = f64::NAN;
    for iter in 1..=WATERFILL_MAX_ITER {
        let mu0 = 0.5 * (lo + hi);
        let collapsed = mu0 <= lo || mu0 >= hi;
        let powers = powers_at(spectrum, mu0, noise_var)?;
        let gap = powers.iter().sum::<f64>() - energy;
        last_gap = gap;
        if (gap * gap <= tol && gap.abs() <= BUDGET_RTOL * energy)
            || (collapsed && gap.abs() <= 1e-6 * energy)
        {
            return Ok(WaterfillSolution {
                powers,
                mu0,
                iterations: iter,
            });
        }
        if collapsed {
            break;
        }
        if gap < 0.0 {
            hi = mu0;
        } else {
            lo = mu0;
        }
    }
    Err(Error::numeric(
        "water-filling",
        format!("budget gap {last_gap:e} after bisection stopped"),
    ))
}

/// One training slot: eigen-direction block, unit-norm precoder direction,
/// energy, and semi-unitary combiner.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSlot {
    /// 0-based eigen-direction block (`i_q − 1`).
    pub block: usize,
    pub direction: CVec,
    pub power: f64,
    pub combiner: CMat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DesignCase {
    /// Every positive-power block fits in the available slots.
    AllBlocks,
    /// More blocks want energy than there are slots; the strongest blocks by
    /// trace are trained and the budget is re-allocated among them.
    Truncated,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPlan {
    pub slots: Vec<TrainingSlot>,
    pub q_nz: usize,
    pub case: DesignCase,
}

/// Beamformer pair actually applied in one slot; the precoder carries the
/// slot energy (`v_q = √α_q ṽ_q`).
#[derive(Debug, Clone, PartialEq)]
pub struct SlotBeamformer {
    pub precoder: CVec,
    pub combiner: CMat,
}

impl TrainingPlan {
    pub fn powers(&self) -> Vec<f64> {
        self.slots.iter().map(|s| s.power).collect()
    }

    pub fn dir_indices(&self) -> Vec<usize> {
        self.slots.iter().map(|s| s.block).collect()
    }

    pub fn total_energy(&self) -> f64 {
        self.slots.iter().map(|s| s.power).sum()
    }

    /// Fully-digital beamformers of the positive-power slots.
    pub fn beamformers(&self) -> Vec<SlotBeamformer> {
        self.slots
            .iter()
            .filter(|s| s.power > 0.0)
            .map(|s| SlotBeamformer {
                precoder: s.direction.scale(s.power.sqrt()),
                combiner: s.combiner.clone(),
            })
            .collect()
    }
}

/// Slot aligned to block `block`: precoder `U_t[:, n]`, combiner the
/// matching `N^RF` columns of `U_r`.
pub fn eigen_slot(basis: &EigenBasis, n_rf: usize, block: usize, power: f64) -> TrainingSlot {
    let (tx, rx) = block_columns(block, basis.n_rx(), n_rf);
    TrainingSlot {
        block,
        direction: basis.u_tx.column(tx).into_owned(),
        power,
        combiner: basis.u_rx.columns(rx.start, rx.len()).into_owned(),
    }
}

fn check_dims(basis: &EigenBasis, cfg: &SystemConfig) -> Result<()> {
    if basis.n_tx() != cfg.n_tx || basis.n_rx() != cfg.n_rx {
        return Err(Error::DimensionMismatch(format!(
            "basis is {}x{}, config expects {}x{}",
            basis.n_rx(),
            basis.n_tx(),
            cfg.n_rx,
            cfg.n_tx
        )));
    }
    Ok(())
}

/// MMSE-optimal fully-digital training plan.
///
/// Water-fills over every block first. If no more than `Q` blocks receive
/// energy those blocks are trained in natural order and the remaining slots
/// stay idle with zero power. Otherwise the `Q` blocks with the largest
/// traces are trained and the budget is water-filled over them only.
pub fn design_training(basis: &EigenBasis, cfg: &SystemConfig) -> Result<TrainingPlan> {
    cfg.validate()?;
    check_dims(basis, cfg)?;
    let spectrum = BlockSpectrum::from_basis(basis, cfg.n_rf)?;
    let full = waterfill(&spectrum, cfg.energy_budget, cfg.noise_var, cfg.tol)?;
    let q = cfg.q_slots;
    let full_q_nz = full.q_nz();
    if full_q_nz <= q {
        let positive = (0..spectrum.n_blocks()).filter(|&b| full.powers[b] > 0.0);
        let idle = (0..spectrum.n_blocks()).filter(|&b| full.powers[b] <= 0.0);
        let slots = positive
            .chain(idle)
            .take(q)
            .map(|b| eigen_slot(basis, cfg.n_rf, b, full.powers[b].max(0.0)))
            .collect();
        return Ok(TrainingPlan {
            slots,
            q_nz: full_q_nz,
            case: DesignCase::AllBlocks,
        });
    }
    let chosen = &spectrum.sort_perm[..q];
    let reduced = waterfill(&spectrum.subset(chosen)?, cfg.energy_budget, cfg.noise_var, cfg.tol)?;
    let slots: Vec<TrainingSlot> = chosen
        .iter()
        .zip(&reduced.powers)
        .map(|(&b, &p)| eigen_slot(basis, cfg.n_rf, b, p))
        .collect();
    Ok(TrainingPlan {
        q_nz: reduced.q_nz(),
        slots,
        case: DesignCase::Truncated,
    })
}

/// Same eigen-direction beamformers, budget split evenly over `Q` slots.
/// With fewer slots than blocks the strongest blocks by trace are used.
pub fn equal_power_plan(basis: &EigenBasis, cfg: &SystemConfig) -> Result<TrainingPlan> {
    cfg.validate()?;
    check_dims(basis, cfg)?;
    let spectrum = BlockSpectrum::from_basis(basis, cfg.n_rf)?;
    let q = cfg.q_slots;
    let blocks: Vec<usize> = if q == spectrum.n_blocks() {
        (0..q).collect()
    } else {
        spectrum.sort_perm[..q].to_vec()
    };
    let alpha = cfg.energy_budget / q as f64;
    let slots = blocks
        .into_iter()
        .map(|b| eigen_slot(basis, cfg.n_rf, b, alpha))
        .collect();
    Ok(TrainingPlan {
        slots,
        q_nz: if alpha > 0.0 { q } else { 0 },
        case: if q == spectrum.n_blocks() {
            DesignCase::AllBlocks
        } else {
            DesignCase::Truncated
        },
    })
}

fn combiner_noise_inverse(w: &CMat, slot: usize) -> Result<CMat> {
    let gram = w.adjoint() * w;
    let (eigs, _) = linalg::hermitian_eigen_desc(&gram);
    let top = eigs.first().copied().unwrap_or(0.0);
    let bottom = eigs.last().copied().unwrap_or(0.0);
    if !(top > 0.0 && bottom > 1e-12 * top) {
        return Err(Error::DegenerateCombiner { slot });
    }
    linalg::hpd_inverse(&gram).ok_or(Error::DegenerateCombiner { slot })
}

/// `Γ² = F^H R_n^{-1} F` straight from its definition, with
/// `F = Φ Ψ` and `R_n = σ² blkdg(W_q^H W_q)`.
pub fn gamma_squared_definition(
    beamformers: &[SlotBeamformer],
    basis: &EigenBasis,
    noise_var: f64,
) -> Result<CMat> {
    let mn = basis.n_tx() * basis.n_rx();
    let psi = basis.psi();
    let mut gamma = CMat::zeros(mn, mn);
    for (q, bf) in beamformers.iter().enumerate() {
        let phi_q = bf.precoder.transpose().kronecker(&bf.combiner.adjoint());
        let f_q = phi_q * &psi;
        let rn_inv = combiner_noise_inverse(&bf.combiner, q)?.unscale(noise_var);
        gamma += f_q.adjoint() * rn_inv * f_q;
    }
    Ok(linalg::hermitian_part(&gamma))
}

/// Left singular vectors `K_q` of a combiner.
fn combiner_left_basis(w: &CMat, slot: usize) -> Result<CMat> {
    let svd = linalg::svd_desc(w)?;
    let smax = svd.singular_values.first().copied().unwrap_or(0.0);
    let smin = svd.singular_values.last().copied().unwrap_or(0.0);
    if svd.singular_values.len() < w.ncols() || !(smin > 1e-12 * smax.max(1e-300)) {
        return Err(Error::DegenerateCombiner { slot });
    }
    Ok(svd.u)
}

/// `Υ(Ṽ, K)`, the `MN × L` matrix whose `q`-th column block is
/// `conj(ṽ_q) ⊗ K_q`. Slots with a zero precoder are skipped.
pub fn upsilon(beamformers: &[SlotBeamformer]) -> Result<CMat> {
    let mut blocks = Vec::new();
    for (q, bf) in beamformers.iter().enumerate() {
        let z = bf.precoder.norm();
        if z == 0.0 {
            continue;
        }
        let dir = bf.precoder.unscale(z);
        let k = combiner_left_basis(&bf.combiner, q)?;
        blocks.push(linalg::conj_vec(&dir).kronecker(&k));
    }
    let rows = blocks.first().map_or(0, |b| b.nrows());
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = CMat::zeros(rows, cols);
    let mut at = 0;
    for b in blocks {
        out.columns_mut(at, b.ncols()).copy_from(&b);
        at += b.ncols();
    }
    Ok(out)
}

/// `D(Z) = blkdg(z_q² I)` diagonal, matching the column layout of [`upsilon`].
pub fn energy_diagonal(beamformers: &[SlotBeamformer]) -> Vec<f64> {
    beamformers
        .iter()
        .filter(|bf| bf.precoder.norm() > 0.0)
        .flat_map(|bf| std::iter::repeat_n(bf.precoder.norm_squared(), bf.combiner.ncols()))
        .collect()
}

/// `Γ² = (1/σ²) Ψ^H Υ D(Z) Υ^H Ψ`, which only depends on the combiners'
/// left singular vectors.
pub fn gamma_squared_fast(
    beamformers: &[SlotBeamformer],
    basis: &EigenBasis,
    noise_var: f64,
) -> Result<CMat> {
    let mn = basis.n_tx() * basis.n_rx();
    let ups = upsilon(beamformers)?;
    if ups.ncols() == 0 {
        return Ok(CMat::zeros(mn, mn));
    }
    let d = energy_diagonal(beamformers);
    let a = basis.psi().adjoint() * ups;
    let mut ad = a.clone();
    for (j, mut col) in ad.column_iter_mut().enumerate() {
        col *= c(d[j] / noise_var, 0.0);
    }
    Ok(linalg::hermitian_part(&(ad * a.adjoint())))
}

/// Block permutation `𝒰 = P ⊗ I_{N^RF}` whose `k`-th block column is
/// block `order[k]`.
pub fn block_permutation(order: &[usize], n_rf: usize) -> CMat {
    let n = order.len() * n_rf;
    let mut p = CMat::zeros(n, n);
    for (k, &b) in order.iter().enumerate() {
        for i in 0..n_rf {
            p[(b * n_rf + i, k * n_rf + i)] = linalg::ONE;
        }
    }
    p
}

/// `J = Tr((Λ^{-1} + Γ²)^{-1})`; only for well-conditioned spectra.
pub fn j_mmse_from_gamma(gamma: &CMat, lam_kron: &[f64]) -> Result<f64> {
    let mut a = gamma.clone();
    for (i, &l) in lam_kron.iter().enumerate() {
        a[(i, i)] += c(1.0 / l, 0.0);
    }
    let inv = linalg::hpd_inverse(&a).ok_or_else(|| Error::numeric("J_MMSE", "singular information matrix"))?;
    Ok(linalg::trace_re(&inv))
}

/// Closed-form `J` of an eigen-aligned plan:
/// `Σ_{trained} Σ_k (1/λ + α/σ²)^{-1} + Σ_{untrained} Σ_k λ`.
pub fn j_mmse_aligned(spectrum: &BlockSpectrum, blocks: &[usize], powers: &[f64], noise_var: f64) -> f64 {
    let mut alloc = vec![0.0; spectrum.n_blocks()];
    for (&b, &p) in blocks.iter().zip(powers) {
        alloc[b] += p;
    }
    spectrum
        .block_eigs
        .iter()
        .zip(&alloc)
        .map(|(eigs, &a)| eigs.iter().map(|&l| 1.0 / (1.0 / l + a / noise_var)).sum::<f64>())
        .sum()
}
