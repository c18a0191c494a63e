//! Observables: windowed impulse responses, singular-value ensembles,
//! empirical K ratios and fitted decay rates.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::Serialize;

use crate::calibration::CalibratedInternals;
use crate::channel::{evaluate_over_grid, h_nlos_closed, FrequencyGrid};
use crate::error::{PgError, Result};
use crate::geometry::{compute_delays, sample_geometry, GeometryConfig};
use crate::parametrization::{NewParams, OriginalParams, ParamSet};
use crate::seed::{substream_rng, sweep_index, Domain};

/// Which part of the channel a CIR is synthesized from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelPart {
    Los,
    Nlos,
    Total,
}

/// Windowed impulse response on a uniform delay axis, one tap sequence per
/// Rx-Tx pair (pair index = rx * num_tx + tx).
#[derive(Debug, Clone)]
pub struct Cir {
    pub delays: Vec<f64>,
    pub taps: Vec<Vec<Complex64>>,
    pub num_rx: usize,
    pub num_tx: usize,
    pub window_kind: String,
}

impl Cir {
    /// Power delay profile summed over all antenna pairs.
    pub fn aggregated_power(&self) -> Vec<f64> {
        let mut pdp = vec![0.0; self.delays.len()];
        for pair in &self.taps {
            for (acc, tap) in pdp.iter_mut().zip(pair) {
                *acc += tap.norm_sqr();
            }
        }
        pdp
    }
}

/// Hann-windowed inverse DFT of the transfer function on a uniform grid.
///
/// The window has unit mean square over the grid; the inverse DFT is
/// unitary (1/sqrt(N)), so sum |taps|^2 equals the windowed spectrum energy
/// exactly. The delay step is 1 / (N * spacing), i.e. the reciprocal of the
/// DFT's implicit bandwidth.
pub fn cir_from_grid(samples: &[crate::channel::ChannelSample], part: ChannelPart) -> Result<Cir> {
    if samples.len() < 2 {
        return Err(PgError::ValidationError(
            "cir synthesis needs at least 2 grid samples".into(),
        ));
    }
    let n = samples.len();
    let spacing = samples[1].frequency - samples[0].frequency;
    let mut max_deviation = 0.0_f64;
    for w in samples.windows(2) {
        let step = w[1].frequency - w[0].frequency;
        max_deviation = max_deviation.max(((step - spacing) / spacing).abs());
    }
    if max_deviation > 1e-9 {
        return Err(PgError::NonuniformGrid { max_deviation });
    }

    let num_rx = samples[0].h_los.nrows();
    let num_tx = samples[0].h_los.ncols();

    // Hann over the grid, scaled to unit mean square.
    let raw: Vec<f64> = (0..n)
        .map(|i| 0.5 * (1.0 - (std::f64::consts::TAU * i as f64 / (n - 1) as f64).cos()))
        .collect();
    let ms = raw.iter().map(|w| w * w).sum::<f64>() / n as f64;
    let window: Vec<f64> = raw.iter().map(|w| w / ms.sqrt()).collect();

    let mut planner = FftPlanner::new();
    let ifft = planner.plan_fft_inverse(n);
    let scale = 1.0 / (n as f64).sqrt();

    let mut taps = Vec::with_capacity(num_rx * num_tx);
    for m in 0..num_rx {
        for t in 0..num_tx {
            let mut buf: Vec<Complex64> = samples
                .iter()
                .zip(&window)
                .map(|(s, w)| {
                    let h = match part {
                        ChannelPart::Los => s.h_los[(m, t)],
                        ChannelPart::Nlos => s.h_nlos[(m, t)],
                        ChannelPart::Total => s.h_los[(m, t)] + s.h_nlos[(m, t)],
                    };
                    h * w
                })
                .collect();
            ifft.process(&mut buf);
            for tap in &mut buf {
                *tap *= scale;
            }
            taps.push(buf);
        }
    }

    let delay_step = 1.0 / (n as f64 * spacing);
    Ok(Cir {
        delays: (0..n).map(|i| i as f64 * delay_step).collect(),
        taps,
        num_rx,
        num_tx,
        window_kind: "hann".into(),
    })
}

/// Singular values of a complex matrix, descending.
pub fn singular_values(h: &DMatrix<Complex64>) -> Result<Vec<f64>> {
    const MAX_SWEEPS: usize = 10_000;
    let k = h.nrows().min(h.ncols());
    let svd = nalgebra::SVD::try_new(h.clone(), false, false, f64::EPSILON, MAX_SWEEPS)
        .ok_or(PgError::NoConvergence {
            iterations: MAX_SWEEPS,
        })?;
    let mut values: Vec<f64> = svd.singular_values.iter().copied().collect();
    values.sort_by(|a, b| b.partial_cmp(a).expect("singular values are finite"));
    values.truncate(k);
    Ok(values)
}

/// Which geometry knob a singular-value sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub enum SweepParameter {
    /// Antenna spacing factor kappa.
    Kappa,
    /// Scatterer box side L in meters; the minimum scatterer distance is
    /// set to zero for this sweep.
    BoxSide,
}

impl SweepParameter {
    pub fn label(&self) -> &'static str {
        match self {
            SweepParameter::Kappa => "kappa",
            SweepParameter::BoxSide => "box_side_m",
        }
    }

    fn apply(&self, base: &GeometryConfig, value: f64) -> GeometryConfig {
        match self {
            SweepParameter::Kappa => GeometryConfig {
                spacing_factor: value,
                ..base.clone()
            },
            SweepParameter::BoxSide => GeometryConfig {
                box_side: value,
                min_scatterer_distance: 0.0,
                ..base.clone()
            },
        }
    }
}

/// Index-wise averaged singular values along a sweep.
#[derive(Debug, Clone, Serialize)]
pub struct SvCurve {
    pub sweep_parameter: SweepParameter,
    pub values: Vec<f64>,
    /// Per sweep point: mean singular values, descending, length
    /// min(num_rx, num_tx); the mean runs over realizations and evaluation
    /// frequencies.
    pub mean_singular_values: Vec<Vec<f64>>,
    pub realization_count: usize,
}

/// Which parametrization an experiment evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub enum ParametrizationKind {
    Original,
    New,
}

/// Draw a realization's parameter set. The geometry is drawn first from the
/// same substream, so two runs with different parametrizations share
/// scatterer positions realization by realization.
fn draw_realization(
    config: &GeometryConfig,
    kind: ParametrizationKind,
    internals: &CalibratedInternals,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<(crate::geometry::DelaySet, ParamSet)> {
    let geometry = sample_geometry(config, rng)?;
    let delays = compute_delays(&geometry, config.speed_of_light);
    let params = match kind {
        ParametrizationKind::New => ParamSet::New(NewParams::sample(
            internals.alpha,
            internals.beta,
            internals.gamma,
            config.num_scatterers,
            config.los_visible,
            rng,
        )?),
        ParametrizationKind::Original => ParamSet::Original(OriginalParams::sample_fully_connected(
            internals.gain,
            config.num_tx,
            config.num_rx,
            config.num_scatterers,
            config.los_visible,
            rng,
        )?),
    };
    Ok((delays, params))
}

/// Average singular values of the NLOS channel along a geometry sweep.
///
/// Internal model parameters stay fixed at their base-configuration
/// calibration while the sweep varies the geometry; each (sweep point,
/// realization) has its own seed substream, so results are independent of
/// the parallel schedule.
pub fn sv_sweep(
    base: &GeometryConfig,
    kind: ParametrizationKind,
    internals: &CalibratedInternals,
    sweep: SweepParameter,
    values: &[f64],
    eval_frequencies: &[f64],
    realizations: usize,
    master_seed: u64,
) -> Result<SvCurve> {
    assert!(realizations >= 1, "need at least one realization");
    assert!(!eval_frequencies.is_empty(), "need evaluation frequencies");
    let sigma_count = base.num_rx.min(base.num_tx);

    let mut mean_singular_values = Vec::with_capacity(values.len());
    for (point, &value) in values.iter().enumerate() {
        let config = sweep.apply(base, value);
        let per_realization: Vec<Result<Vec<f64>>> = (0..realizations)
            .into_par_iter()
            .map(|realization| {
                let mut rng =
                    substream_rng(master_seed, Domain::Sweep, sweep_index(point, realization));
                let (delays, params) = draw_realization(&config, kind, internals, &mut rng)?;
                let mut sums = vec![0.0; sigma_count];
                for &f in eval_frequencies {
                    let transfer = params.build(&delays, f)?;
                    let h = h_nlos_closed(&transfer)?;
                    for (acc, sigma) in sums.iter_mut().zip(singular_values(&h)?) {
                        *acc += sigma;
                    }
                }
                Ok(sums)
            })
            .collect();

        let mut totals = vec![0.0; sigma_count];
        for sums in per_realization {
            for (acc, s) in totals.iter_mut().zip(sums?) {
                *acc += s;
            }
        }
        let scale = (realizations * eval_frequencies.len()) as f64;
        mean_singular_values.push(totals.iter().map(|s| s / scale).collect());
    }

    Ok(SvCurve {
        sweep_parameter: sweep,
        values: values.to_vec(),
        mean_singular_values,
        realization_count: realizations,
    })
}

/// Per-frequency LOS/NLOS power ratio statistics over an ensemble.
#[derive(Debug, Clone, Serialize)]
pub struct KCurve {
    pub frequencies: Vec<f64>,
    /// Mean over realizations of ||H_LOS(f)||^2 / ||H_NLOS(f)||^2.
    pub mean_ratio: Vec<f64>,
    /// Sample standard deviation of the same ratio.
    pub std_ratio: Vec<f64>,
    pub target_k: f64,
    /// Band-integrated K: trapezoidal integrals of the ensemble-mean LOS
    /// and NLOS powers, then their ratio.
    pub band_k: f64,
    pub realization_count: usize,
}

fn trapezoid(frequencies: &[f64], values: &[f64]) -> f64 {
    frequencies
        .windows(2)
        .zip(values.windows(2))
        .map(|(f, v)| 0.5 * (v[0] + v[1]) * (f[1] - f[0]))
        .sum()
}

struct RealizationPowers {
    los: Vec<f64>,
    nlos: Vec<f64>,
}

fn ensemble_powers(
    config: &GeometryConfig,
    kind: ParametrizationKind,
    internals: &CalibratedInternals,
    grid: &FrequencyGrid,
    realizations: usize,
    master_seed: u64,
) -> Result<Vec<RealizationPowers>> {
    grid.validate()?;
    (0..realizations)
        .into_par_iter()
        .map(|realization| {
            let mut rng = substream_rng(master_seed, Domain::Main, realization as u64);
            let (delays, params) = draw_realization(config, kind, internals, &mut rng)?;
            let samples = evaluate_over_grid(&delays, &params, grid)?;
            Ok(RealizationPowers {
                los: samples.iter().map(|s| s.h_los.norm_squared()).collect(),
                nlos: samples.iter().map(|s| s.h_nlos.norm_squared()).collect(),
            })
        })
        .collect()
}

/// LOS/NLOS ratio curve for the scatterer-phase parametrization, plus the
/// band-integrated empirical K.
pub fn empirical_k_curve(
    config: &GeometryConfig,
    internals: &CalibratedInternals,
    grid: &FrequencyGrid,
    realizations: usize,
    master_seed: u64,
    target_k: f64,
) -> Result<KCurve> {
    if realizations < 2 {
        return Err(PgError::ValidationError(
            "k curve needs at least 2 realizations for the std band".into(),
        ));
    }
    let powers = ensemble_powers(
        config,
        ParametrizationKind::New,
        internals,
        grid,
        realizations,
        master_seed,
    )?;
    let frequencies = grid.frequencies();
    let n_f = frequencies.len();
    let m = realizations as f64;

    let mut mean_ratio = Vec::with_capacity(n_f);
    let mut std_ratio = Vec::with_capacity(n_f);
    let mut mean_los = Vec::with_capacity(n_f);
    let mut mean_nlos = Vec::with_capacity(n_f);
    for fi in 0..n_f {
        let mut ratios = Vec::with_capacity(powers.len());
        for (realization, p) in powers.iter().enumerate() {
            if p.nlos[fi] == 0.0 {
                return Err(PgError::DivisionByZero { realization });
            }
            ratios.push(p.los[fi] / p.nlos[fi]);
        }
        let mean = ratios.iter().sum::<f64>() / m;
        let var = ratios.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (m - 1.0);
        mean_ratio.push(mean);
        std_ratio.push(var.sqrt());
        mean_los.push(powers.iter().map(|p| p.los[fi]).sum::<f64>() / m);
        mean_nlos.push(powers.iter().map(|p| p.nlos[fi]).sum::<f64>() / m);
    }

    let band_k = trapezoid(&frequencies, &mean_los) / trapezoid(&frequencies, &mean_nlos);

    Ok(KCurve {
        frequencies,
        mean_ratio,
        std_ratio,
        target_k,
        band_k,
        realization_count: realizations,
    })
}

/// Per-realization band-integrated NLOS power (trapezoidal quadrature of
/// ||H_NLOS(f)||_F^2 over the grid) for the scatterer-phase parametrization.
/// These draws back the Monte-Carlo side of the derivation verifier.
pub fn nlos_band_power_draws(
    config: &GeometryConfig,
    internals: &CalibratedInternals,
    grid: &FrequencyGrid,
    realizations: usize,
    master_seed: u64,
) -> Result<Vec<f64>> {
    let powers = ensemble_powers(
        config,
        ParametrizationKind::New,
        internals,
        grid,
        realizations,
        master_seed,
    )?;
    let frequencies = grid.frequencies();
    Ok(powers
        .iter()
        .map(|p| trapezoid(&frequencies, &p.nlos))
        .collect())
}

/// Impulse-response power profile of one geometry averaged over fresh phase
/// draws, returned as a single-trace CIR whose tap magnitudes are the RMS
/// ensemble taps. Removes per-realization fading while keeping the path
/// structure of the geometry, which is what the decay-rate fitter needs.
pub fn phase_averaged_cir(
    config: &GeometryConfig,
    internals: &CalibratedInternals,
    grid: &FrequencyGrid,
    phase_draws: usize,
    master_seed: u64,
    geometry_index: usize,
) -> Result<Cir> {
    grid.validate()?;
    let mut geometry_rng = substream_rng(
        master_seed,
        Domain::Sweep,
        sweep_index(geometry_index, 0),
    );
    let geometry = sample_geometry(config, &mut geometry_rng)?;
    let delays = compute_delays(&geometry, config.speed_of_light);

    let mut mean_pdp: Vec<f64> = Vec::new();
    let mut delays_axis: Vec<f64> = Vec::new();
    for draw in 0..phase_draws {
        let mut rng = substream_rng(
            master_seed,
            Domain::Sweep,
            sweep_index(geometry_index, draw + 1),
        );
        let params = ParamSet::New(NewParams::sample(
            internals.alpha,
            internals.beta,
            internals.gamma,
            config.num_scatterers,
            config.los_visible,
            &mut rng,
        )?);
        let samples = evaluate_over_grid(&delays, &params, grid)?;
        let cir = cir_from_grid(&samples, ChannelPart::Nlos)?;
        let pdp = cir.aggregated_power();
        if mean_pdp.is_empty() {
            mean_pdp = pdp;
            delays_axis = cir.delays;
        } else {
            for (acc, p) in mean_pdp.iter_mut().zip(pdp) {
                *acc += p;
            }
        }
    }
    let scale = phase_draws as f64;
    let taps: Vec<Complex64> = mean_pdp
        .iter()
        .map(|&p| Complex64::new((p / scale).sqrt(), 0.0))
        .collect();
    Ok(Cir {
        delays: delays_axis,
        taps: vec![taps],
        num_rx: 1,
        num_tx: 1,
        window_kind: "hann-phase-averaged".into(),
    })
}

/// Band-integrated K-factor of the original parametrization, estimated by
/// Monte Carlo over realizations and trapezoidal quadrature over the grid.
/// Used as the K target when comparing the two parametrizations.
pub fn numeric_k_for_original(
    config: &GeometryConfig,
    internals: &CalibratedInternals,
    grid: &FrequencyGrid,
    realizations: usize,
    master_seed: u64,
) -> Result<f64> {
    let powers = ensemble_powers(
        config,
        ParametrizationKind::Original,
        internals,
        grid,
        realizations,
        master_seed,
    )?;
    let frequencies = grid.frequencies();
    let m = realizations as f64;
    let mean_los: Vec<f64> = (0..frequencies.len())
        .map(|fi| powers.iter().map(|p| p.los[fi]).sum::<f64>() / m)
        .collect();
    let mean_nlos: Vec<f64> = (0..frequencies.len())
        .map(|fi| powers.iter().map(|p| p.nlos[fi]).sum::<f64>() / m)
        .collect();
    let denominator = trapezoid(&frequencies, &mean_nlos);
    if denominator == 0.0 {
        return Err(PgError::DivisionByZero { realization: 0 });
    }
    Ok(trapezoid(&frequencies, &mean_los) / denominator)
}

/// Knobs for the decay-rate fitter.
#[derive(Debug, Clone)]
pub struct DecayFitOptions {
    /// Rise (dB) from the preceding-window minimum that qualifies a local
    /// maximum as a cluster onset.
    pub prominence_db: f64,
    /// Half-width (s) of the local-maximum neighborhood.
    pub neighborhood: f64,
    /// Dynamic range (dB) below the strongest tap considered signal.
    pub noise_floor_db: f64,
    /// Minimum number of above-floor taps required in the first cluster.
    pub min_cluster_taps: usize,
    /// When set, cluster peaks after the strongest tap are taken as window
    /// maxima on a grid of this pitch (s). Suits profiles whose bounce
    /// generations overlap too much for prominence detection.
    pub cluster_window: Option<f64>,
    /// When set, the ray fit regresses over path peaks within this window
    /// (s) after the first cluster onset instead of every tap up to the
    /// second onset. Use a window shorter than the earliest second-bounce
    /// arrival (the minimum inter-scatterer delay).
    pub ray_window: Option<f64>,
}

impl Default for DecayFitOptions {
    fn default() -> Self {
        DecayFitOptions {
            prominence_db: 6.0,
            neighborhood: 2e-9,
            noise_floor_db: 50.0,
            min_cluster_taps: 5,
            cluster_window: None,
            ray_window: None,
        }
    }
}

fn least_squares_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points
        .iter()
        .map(|p| (p.0 - mean_x) * (p.1 - mean_y))
        .sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mean_x) * (p.0 - mean_x)).sum();
    sxy / sxx
}

/// Cluster and ray decay rates (dB/s) fitted to a CIR.
///
/// The aggregated power profile in dB is scanned for cluster onsets: local
/// maxima within `neighborhood` that rise at least `prominence_db` above
/// the minimum seen over the preceding neighborhood. The ray decay is the
/// least-squares slope across the first cluster's taps; the cluster decay
/// is the slope across cluster peak powers. With `cluster_window` set, the
/// peaks after the strongest tap are window maxima on that pitch instead.
pub fn fit_decay_rates(cir: &Cir, options: &DecayFitOptions) -> Result<(f64, f64)> {
    let pdp = cir.aggregated_power();
    let delay_step = cir.delays[1] - cir.delays[0];
    let floor = pdp.iter().cloned().fold(0.0_f64, f64::max) * 10f64.powf(-options.noise_floor_db / 10.0);
    let db: Vec<f64> = pdp.iter().map(|&p| 10.0 * p.max(f64::MIN_POSITIVE).log10()).collect();
    let floor_db = 10.0 * floor.log10();

    let peaks: Vec<usize> = match options.cluster_window {
        None => detect_prominent_peaks(&db, floor_db, delay_step, options),
        Some(window) => detect_windowed_peaks(&db, floor_db, delay_step, window),
    };

    if peaks.len() < 2 {
        return Err(PgError::InsufficientClusters { found: peaks.len() });
    }

    // Cluster decay: peak power (dB) versus peak delay.
    let peak_points: Vec<(f64, f64)> = peaks.iter().map(|&i| (cir.delays[i], db[i])).collect();
    let rho1_hat = least_squares_slope(&peak_points);

    // Ray decay across the first cluster. Continuous profiles (no window
    // set) use every above-floor tap between the first two onsets. Windowed
    // profiles from sparse scatterer sets are combs of resolved path taps
    // with sidelobe valleys between them, so there the fit runs over the
    // path peaks (local maxima) inside the pre-second-bounce ray window.
    let first = peaks[0];
    let ray_points: Vec<(f64, f64)> = match options.ray_window {
        None => {
            let end = peaks[1].min(db.len());
            (first..end)
                .filter(|&i| db[i] > floor_db)
                .map(|i| (cir.delays[i], db[i]))
                .collect()
        }
        Some(window) => {
            let end = (first + ((window / delay_step).round() as usize).max(2)).min(db.len());
            let path_floor = (db[first] - 30.0).max(floor_db);
            (first..end)
                .filter(|&i| {
                    db[i] > path_floor
                        && (i == first
                            || ((i == 0 || db[i] >= db[i - 1])
                                && (i + 1 >= db.len() || db[i] > db[i + 1])))
                })
                .map(|i| (cir.delays[i], db[i]))
                .collect()
        }
    };
    if ray_points.len() < options.min_cluster_taps {
        return Err(PgError::InsufficientTaps {
            found: ray_points.len(),
            needed: options.min_cluster_taps,
        });
    }
    let rho2_hat = least_squares_slope(&ray_points);

    Ok((rho1_hat, rho2_hat))
}

fn detect_prominent_peaks(
    db: &[f64],
    floor_db: f64,
    delay_step: f64,
    options: &DecayFitOptions,
) -> Vec<usize> {
    let w = ((options.neighborhood / delay_step).round() as usize).max(1);
    let mut peaks = Vec::new();
    for i in 0..db.len() {
        if db[i] <= floor_db {
            continue;
        }
        let lo = i.saturating_sub(w);
        let hi = (i + w).min(db.len() - 1);
        let left_max = (lo..i).map(|j| db[j]).fold(f64::NEG_INFINITY, f64::max);
        let right_max = (i + 1..=hi).map(|j| db[j]).fold(f64::NEG_INFINITY, f64::max);
        if db[i] < left_max || db[i] <= right_max {
            continue;
        }
        let left_min = (lo..=i).map(|j| db[j]).fold(f64::INFINITY, f64::min);
        if db[i] - left_min >= options.prominence_db {
            peaks.push(i);
        }
    }
    peaks
}

fn detect_windowed_peaks(db: &[f64], floor_db: f64, delay_step: f64, window: f64) -> Vec<usize> {
    let pitch = ((window / delay_step).round() as usize).max(2);
    let anchor = db
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite power"))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let mut peaks = vec![anchor];
    let mut start = anchor + pitch / 2;
    while start < db.len() {
        let end = (start + pitch).min(db.len());
        if let Some((i, &value)) = db[start..end]
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite power"))
            .map(|(i, v)| (start + i, v))
        {
            if value <= floor_db {
                break;
            }
            peaks.push(i);
        }
        start = end;
    }
    peaks
}
