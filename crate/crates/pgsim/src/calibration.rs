//! Internal-parameter calibration from Saleh-Valenzuela targets.
//!
//! Maps the ray decay rate rho2 to gamma, the cluster decay rate rho1 to
//! beta (and to the per-link gain of the original parametrization), and the
//! K-factor to alpha through the band-integrated LOS/NLOS power chain:
//! the bounce-power recursion, its closed-form sums P_S1/P_S2, the MGF
//! weighting Q and the NLOS power prediction.
//!
//! All math here is SI (seconds, Hz); decay rates are dB/s. Config ingestion
//! converts the dB/ns interface convention.

use std::f64::consts::LN_10;
use std::f64::consts::TAU;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{PgError, Result};
use crate::geometry::{DelaySet, DelayStats};

/// Margin threshold for the phase-independence assumption: the
/// approximation is trusted when `sqrt(Var tau) * f_min` exceeds this.
pub const VALIDITY_THRESHOLD: f64 = 8.0;

/// Frequency band over which powers are integrated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct Band {
    pub f_min: f64,
    pub f_max: f64,
}

impl Band {
    pub fn validate(&self) -> Result<()> {
        if !(self.f_min > 0.0 && self.f_min < self.f_max) {
            return Err(PgError::ValidationError(format!(
                "band requires 0 < fMin < fMax (got {} .. {})",
                self.f_min, self.f_max
            )));
        }
        Ok(())
    }
}

/// Saleh-Valenzuela fitting targets: cluster and ray decay rates (dB/s,
/// negative for decaying profiles), K-factor and the band it refers to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct SvTarget {
    pub rho1_db_per_s: f64,
    pub rho2_db_per_s: f64,
    pub k_factor: f64,
    pub band: Band,
}

impl SvTarget {
    pub fn validate(&self) -> Result<()> {
        if !(self.k_factor > 0.0) {
            return Err(PgError::ValidationError(format!(
                "kFactor must be > 0 (got {})",
                self.k_factor
            )));
        }
        self.band.validate()
    }
}

/// Empirical moment-generating-function values at 2 gamma.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MgfEstimates {
    /// E{exp(2 gamma tau_T)} over Tx-to-scatterer delays.
    pub m_tau_t: f64,
    /// E{exp(2 gamma tau_R)} over scatterer-to-Rx delays.
    pub m_tau_r: f64,
    /// E{exp(2 gamma (tau_T + tau_R))} over joint Tx-scatterer-Rx paths,
    /// pairing each scatterer's Tx-side delay with its own Rx-side delay.
    pub m_tau_sum: f64,
    /// Number of joint-path samples behind `m_tau_sum`.
    pub sample_count: usize,
}

/// Band-integrated power predictions of the analytic chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PowerPrediction {
    pub p_los: f64,
    pub p_nlos: f64,
    pub q: f64,
    pub p_s1: f64,
    pub p_s2: f64,
}

/// Calibrated internal parameters for both parametrizations, derived once
/// from a base configuration and held fixed across sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CalibratedInternals {
    /// Magnitude scale of the scatterer-phase parametrization, Hz.
    pub alpha: f64,
    /// Inter-scatterer gain of the scatterer-phase parametrization.
    pub beta: f64,
    /// Exponential delay-weighting rate, 1/s.
    pub gamma: f64,
    /// Per-link gain of the original parametrization.
    pub gain: f64,
}

/// Exponent convention for mapping the dB/s decay rates onto the amplitude
/// quantities beta and gamma.
///
/// The reference formulas apply the power-domain exponent (divide dB by 10)
/// directly to the amplitudes; squaring in the power chain then doubles the
/// realized decay rates. The amplitude-matched convention divides by 20
/// instead, so fitted cluster and ray decay rates land on the requested
/// rho1 and rho2. Both are exposed; calibration pipelines default to
/// amplitude-matched.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DecayExponent {
    /// Divide dB rates by 10 when forming amplitudes. Realized power decay
    /// rates come out at twice the requested rho1 / rho2.
    AsPrinted,
    /// Divide dB rates by 20 when forming amplitudes. Realized power decay
    /// rates match the requested rho1 / rho2 exactly.
    #[default]
    AmplitudeMatched,
}

/// Ray decay rate (dB/s) to the exponential delay-weighting rate (1/s),
/// reference form: `gamma = rho2 ln(10) / 10`.
///
/// Tap power along a path of delay tau then decays as `exp(2 gamma tau)`,
/// i.e. at 2 rho2 dB/s; see [`gamma_from_rho2_with`] for the convention that
/// realizes rho2 itself.
pub fn gamma_from_rho2(rho2_db_per_s: f64) -> f64 {
    gamma_from_rho2_with(rho2_db_per_s, DecayExponent::AsPrinted)
}

/// Ray decay rate to delay-weighting rate under a chosen convention.
pub fn gamma_from_rho2_with(rho2_db_per_s: f64, exponent: DecayExponent) -> f64 {
    let divisor = match exponent {
        DecayExponent::AsPrinted => 10.0,
        DecayExponent::AmplitudeMatched => 20.0,
    };
    rho2_db_per_s * LN_10 / divisor
}

/// Inter-scatterer gain from the cluster decay rate.
///
/// One bounce multiplies NLOS power by `(N_S - 1) beta^2` and delays it by
/// the mean inter-scatterer delay, which pins beta given rho1.
pub fn beta_from_rho1(
    rho1_db_per_s: f64,
    mean_tau_b: f64,
    num_scatterers: usize,
    exponent: DecayExponent,
) -> Result<f64> {
    if num_scatterers < 2 {
        return Err(PgError::ValidationError(format!(
            "beta calibration requires at least 2 scatterers (got {num_scatterers})"
        )));
    }
    let divisor = match exponent {
        DecayExponent::AsPrinted => 10.0,
        DecayExponent::AmplitudeMatched => 20.0,
    };
    let n1 = (num_scatterers - 1) as f64;
    let beta = (1.0 / n1).sqrt() * 10f64.powf(mean_tau_b * rho1_db_per_s / divisor);
    let loop_gain = n1 * beta * beta;
    if loop_gain >= 1.0 {
        return Err(PgError::InfeasibleBeta {
            loop_gain,
            rho1_db_per_s,
        });
    }
    Ok(beta)
}

/// Per-link gain of the original parametrization matched to the same
/// per-bounce power decay: `g = sqrt(N_S - 1) * 10^(E{tau_B} rho1 / 20)`,
/// so `g^2 / (N_S - 1) = 10^(E{tau_B} rho1 / 10)`.
pub fn gain_from_rho1(rho1_db_per_s: f64, mean_tau_b: f64, num_scatterers: usize) -> Result<f64> {
    if num_scatterers < 2 {
        return Err(PgError::ValidationError(format!(
            "gain calibration requires at least 2 scatterers (got {num_scatterers})"
        )));
    }
    let gain =
        ((num_scatterers - 1) as f64).sqrt() * 10f64.powf(mean_tau_b * rho1_db_per_s / 20.0);
    if gain >= 1.0 {
        return Err(PgError::InfeasibleGain { gain });
    }
    Ok(gain)
}

/// Empirical MGF values at `2 gamma` from one realization's delays.
pub fn estimate_mgf(delays: &DelaySet, gamma: f64) -> MgfEstimates {
    estimate_mgf_pooled(std::slice::from_ref(delays), gamma)
}

/// Empirical MGF values pooled over an ensemble of realizations.
///
/// Sums run in a fixed order (realization, then entry), so results do not
/// depend on any parallel schedule upstream.
pub fn estimate_mgf_pooled(ensembles: &[DelaySet], gamma: f64) -> MgfEstimates {
    let mut sum_t = 0.0;
    let mut count_t = 0usize;
    let mut sum_r = 0.0;
    let mut count_r = 0usize;
    let mut sum_joint = 0.0;
    let mut count_joint = 0usize;

    for delays in ensembles {
        for &tau in delays.tau_t.iter() {
            sum_t += (2.0 * gamma * tau).exp();
            count_t += 1;
        }
        for &tau in delays.tau_r.iter() {
            sum_r += (2.0 * gamma * tau).exp();
            count_r += 1;
        }
        let n_s = delays.tau_t.nrows();
        let n_t = delays.tau_t.ncols();
        let n_r = delays.tau_r.nrows();
        for m in 0..n_r {
            for i in 0..n_s {
                for n in 0..n_t {
                    let joint = delays.tau_r[(m, i)] + delays.tau_t[(i, n)];
                    sum_joint += (2.0 * gamma * joint).exp();
                    count_joint += 1;
                }
            }
        }
    }

    MgfEstimates {
        m_tau_t: sum_t / count_t.max(1) as f64,
        m_tau_r: sum_r / count_r.max(1) as f64,
        m_tau_sum: sum_joint / count_joint.max(1) as f64,
        sample_count: count_joint,
    }
}

/// Expected squared magnitudes of diagonal and off-diagonal entries of B^k
/// under unit-circle phase independence: `k` applications of the 2x2
/// recursion matrix `[[0, (N-1) b^2], [b^2, (N-2) b^2]]` from (1, 0).
pub fn b_power_recursion(beta: f64, num_scatterers: usize, k: usize) -> (f64, f64) {
    let b2 = beta * beta;
    let n = num_scatterers as f64;
    let mut diag = 1.0;
    let mut off = 0.0;
    for _ in 0..k {
        let next_diag = (n - 1.0) * b2 * off;
        let next_off = b2 * diag + (n - 2.0) * b2 * off;
        diag = next_diag;
        off = next_off;
    }
    (diag, off)
}

/// Closed-form sums of the bounce-power recursion over all orders:
/// expected squared magnitudes of diagonal and off-diagonal entries of
/// S = sum_k B^k.
pub fn s_power_closed(beta: f64, num_scatterers: usize) -> Result<(f64, f64)> {
    let b2 = beta * beta;
    let n1 = (num_scatterers - 1) as f64;
    let loop_gain = n1 * b2;
    if loop_gain >= 1.0 {
        return Err(PgError::DivergentSeries { loop_gain });
    }
    let tail = 1.0 / (1.0 - loop_gain);
    let p_s1 = (1.0 - n1 * b2 / (1.0 + b2)) * tail;
    let p_s2 = b2 / (1.0 + b2) * tail;
    Ok((p_s1, p_s2))
}

/// MGF-weighted scattering sum entering the NLOS power prediction.
/// The MGF estimates must be evaluated at `2 gamma`.
pub fn q_factor(beta: f64, mgf: &MgfEstimates, num_scatterers: usize) -> Result<f64> {
    let b2 = beta * beta;
    let n1 = (num_scatterers - 1) as f64;
    let loop_gain = n1 * b2;
    if loop_gain >= 1.0 {
        return Err(PgError::DivergentSeries { loop_gain });
    }
    Ok((mgf.m_tau_sum
        + n1 * b2 / (1.0 + b2) * (mgf.m_tau_r * mgf.m_tau_t - mgf.m_tau_sum))
        / (1.0 - loop_gain))
}

/// Band-integrated LOS power:
/// `eps_D (f_max - f_min) / ((4 pi)^2 f_max f_min) * sum tau_D^-2`.
pub fn p_los(tau_d: &DMatrix<f64>, los_visible: bool, band: &Band) -> Result<f64> {
    band.validate()?;
    if !los_visible {
        return Ok(0.0);
    }
    let mut inv_sq_sum = 0.0;
    for m in 0..tau_d.nrows() {
        for n in 0..tau_d.ncols() {
            let tau = tau_d[(m, n)];
            if tau == 0.0 {
                return Err(PgError::DegenerateDelay {
                    matrix: "D",
                    row: m,
                    col: n,
                });
            }
            inv_sq_sum += 1.0 / (tau * tau);
        }
    }
    let four_pi_sq = (4.0 * std::f64::consts::PI).powi(2);
    Ok((band.f_max - band.f_min) / (four_pi_sq * band.f_max * band.f_min) * inv_sq_sum)
}

/// Band-integrated NLOS power prediction:
/// `alpha^2 N_R N_T N_S (f_max - f_min) / (f_min f_max) * Q`.
pub fn p_nlos_predict(
    alpha: f64,
    beta: f64,
    mgf: &MgfEstimates,
    num_rx: usize,
    num_tx: usize,
    num_scatterers: usize,
    band: &Band,
) -> Result<f64> {
    band.validate()?;
    let q = q_factor(beta, mgf, num_scatterers)?;
    let counts = (num_rx * num_tx * num_scatterers) as f64;
    Ok(alpha * alpha * counts * (band.f_max - band.f_min) / (band.f_min * band.f_max) * q)
}

/// Magnitude scale from the K-factor target: the algebraic inverse of
/// `p_los / p_nlos_predict = K`.
pub fn alpha_from_k(
    target: &SvTarget,
    tau_d: &DMatrix<f64>,
    los_visible: bool,
    beta: f64,
    mgf: &MgfEstimates,
    num_rx: usize,
    num_tx: usize,
    num_scatterers: usize,
) -> Result<f64> {
    target.validate()?;
    if !los_visible {
        return Err(PgError::NoLosPath);
    }
    let mut inv_sq_sum = 0.0;
    for m in 0..tau_d.nrows() {
        for n in 0..tau_d.ncols() {
            let tau = tau_d[(m, n)];
            if tau == 0.0 {
                return Err(PgError::DegenerateDelay {
                    matrix: "D",
                    row: m,
                    col: n,
                });
            }
            inv_sq_sum += 1.0 / (tau * tau);
        }
    }
    let q = q_factor(beta, mgf, num_scatterers)?;
    let four_pi_sq = (4.0 * std::f64::consts::PI).powi(2);
    let counts = (num_rx * num_tx * num_scatterers) as f64;
    Ok((inv_sq_sum / (four_pi_sq * target.k_factor * counts * q)).sqrt())
}

/// Worst-case phase-independence margin `min_A sqrt(Var tau_A) * f_min`
/// over the T, R, B delay matrices. Callers should warn when the margin is
/// at or below [`VALIDITY_THRESHOLD`].
pub fn validity_margin(stats: &DelayStats, f_min: f64) -> f64 {
    stats.min_delay_std() * f_min
}

/// Monte-Carlo estimate of the diagonal / off-diagonal squared magnitudes
/// of S = (I - B)^-1 under i.i.d. uniform phases on the B entries.
///
/// This is the brute-force counterpart of [`s_power_closed`]: it samples
/// the distributional assumption behind the recursion directly and reports
/// standard errors of the two means.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SPowerMc {
    pub mean_diag: f64,
    pub stderr_diag: f64,
    pub mean_off_diag: f64,
    pub stderr_off_diag: f64,
    pub draws: usize,
}

pub fn mc_s_power(
    num_scatterers: usize,
    beta: f64,
    draws: usize,
    rng: &mut impl Rng,
) -> Result<SPowerMc> {
    let n = num_scatterers;
    let eye = DMatrix::<Complex64>::identity(n, n);
    let mut diag_means = Vec::with_capacity(draws);
    let mut off_means = Vec::with_capacity(draws);

    for _ in 0..draws {
        let b = DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                Complex64::new(0.0, 0.0)
            } else {
                Complex64::from_polar(beta, rng.random::<f64>() * TAU)
            }
        });
        let s = (&eye - &b)
            .lu()
            .solve(&eye)
            .ok_or(PgError::SingularSolve { frequency_index: 0 })?;
        let mut diag_sum = 0.0;
        let mut off_sum = 0.0;
        for i in 0..n {
            for j in 0..n {
                let mag_sq = s[(i, j)].norm_sqr();
                if i == j {
                    diag_sum += mag_sq;
                } else {
                    off_sum += mag_sq;
                }
            }
        }
        diag_means.push(diag_sum / n as f64);
        off_means.push(off_sum / (n * (n - 1)) as f64);
    }

    let stats = |values: &[f64]| {
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
            / (values.len() - 1) as f64;
        (mean, (var / values.len() as f64).sqrt())
    };
    let (mean_diag, stderr_diag) = stats(&diag_means);
    let (mean_off_diag, stderr_off_diag) = stats(&off_means);

    Ok(SPowerMc {
        mean_diag,
        stderr_diag,
        mean_off_diag,
        stderr_off_diag,
        draws,
    })
}
