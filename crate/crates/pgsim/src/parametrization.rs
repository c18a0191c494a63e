//! Transfer-matrix parametrizations.
//!
//! Two ways to fill the four transfer matrices D, T, R, B at a frequency:
//! the widely used per-link parametrization (a random phase on every active
//! T, R, B link, inverse-delay magnitudes) and the scatterer-phase
//! parametrization (one random phase per scatterer and side, exponential
//! delay weighting, constant inter-scatterer magnitude).
//!
//! Phases are drawn once per realization and held fixed across frequency;
//! they model path-geometry offsets, not per-frequency noise.

use std::f64::consts::TAU;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;

use crate::error::{PgError, Result};
use crate::geometry::DelaySet;

/// The four transfer matrices evaluated at one frequency.
///
/// Shapes: `d` is Rx x Tx, `t` is scatterer x Tx, `r` is Rx x scatterer,
/// `b` is scatterer x scatterer with a zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferSet {
    pub d: DMatrix<Complex64>,
    pub t: DMatrix<Complex64>,
    pub r: DMatrix<Complex64>,
    pub b: DMatrix<Complex64>,
    pub frequency: f64,
}

/// Per-link parametrization: gain `g`, binary link indicators per matrix and
/// one uniform random phase per active T, R, B link.
#[derive(Debug, Clone, PartialEq)]
pub struct OriginalParams {
    pub gain: f64,
    pub eps_d: DMatrix<bool>,
    pub eps_t: DMatrix<bool>,
    pub eps_r: DMatrix<bool>,
    pub eps_b: DMatrix<bool>,
    pub phi_t: DMatrix<f64>,
    pub phi_r: DMatrix<f64>,
    pub phi_b: DMatrix<f64>,
}

impl OriginalParams {
    /// Draw phases for the given link indicators.
    ///
    /// Exactly one uniform draw is consumed per active link, scanning T, R,
    /// then B in row-major order, so the stream position is a function of
    /// the indicator pattern alone. Diagonal B indicators are rejected:
    /// scatterers must not see themselves.
    pub fn sample(
        gain: f64,
        eps_d: DMatrix<bool>,
        eps_t: DMatrix<bool>,
        eps_r: DMatrix<bool>,
        eps_b: DMatrix<bool>,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if !(gain > 0.0) {
            return Err(PgError::ValidationError(format!(
                "original-parametrization gain must be > 0 (got {gain})"
            )));
        }
        for i in 0..eps_b.nrows() {
            if eps_b[(i, i)] {
                return Err(PgError::ValidationError(format!(
                    "eps_B[{i},{i}] must be 0: scatterers must not see themselves"
                )));
            }
        }
        let mut draw_phases = |eps: &DMatrix<bool>| {
            let mut phi = DMatrix::zeros(eps.nrows(), eps.ncols());
            for m in 0..eps.nrows() {
                for n in 0..eps.ncols() {
                    if eps[(m, n)] {
                        phi[(m, n)] = rng.random::<f64>() * TAU;
                    }
                }
            }
            phi
        };
        let phi_t = draw_phases(&eps_t);
        let phi_r = draw_phases(&eps_r);
        let phi_b = draw_phases(&eps_b);
        Ok(OriginalParams {
            gain,
            eps_d,
            eps_t,
            eps_r,
            eps_b,
            phi_t,
            phi_r,
            phi_b,
        })
    }

    /// All links active (B diagonal excluded), D links per `los_visible`.
    pub fn sample_fully_connected(
        gain: f64,
        num_tx: usize,
        num_rx: usize,
        num_scatterers: usize,
        los_visible: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let eps_d = DMatrix::from_element(num_rx, num_tx, los_visible);
        let eps_t = DMatrix::from_element(num_scatterers, num_tx, true);
        let eps_r = DMatrix::from_element(num_rx, num_scatterers, true);
        let eps_b = DMatrix::from_fn(num_scatterers, num_scatterers, |i, j| i != j);
        Self::sample(gain, eps_d, eps_t, eps_r, eps_b, rng)
    }
}

/// Scatterer-phase parametrization with internal parameters alpha (Hz),
/// beta (dimensionless) and gamma (1/s).
#[derive(Debug, Clone, PartialEq)]
pub struct NewParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    /// One phase per scatterer on the Tx side; applied to row m of T.
    pub phi_tx_side: Vec<f64>,
    /// One phase per scatterer on the Rx side; applied to column n of R.
    pub phi_rx_side: Vec<f64>,
    pub los_visible: bool,
}

impl NewParams {
    /// Draw the 2 * N_S scatterer phases: Tx side first, then Rx side, in
    /// scatterer index order.
    pub fn sample(
        alpha: f64,
        beta: f64,
        gamma: f64,
        num_scatterers: usize,
        los_visible: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if !(alpha > 0.0) {
            return Err(PgError::ValidationError(format!("alpha must be > 0 (got {alpha})")));
        }
        if !(beta >= 0.0) {
            return Err(PgError::ValidationError(format!("beta must be >= 0 (got {beta})")));
        }
        let phi_tx_side = (0..num_scatterers).map(|_| rng.random::<f64>() * TAU).collect();
        let phi_rx_side = (0..num_scatterers).map(|_| rng.random::<f64>() * TAU).collect();
        Ok(NewParams {
            alpha,
            beta,
            gamma,
            phi_tx_side,
            phi_rx_side,
            los_visible,
        })
    }
}

/// Rescale alpha, leaving everything else (including drawn phases) intact.
/// The NLOS channel is exactly linear in alpha.
pub fn scale_alpha(params: &NewParams, factor: f64) -> NewParams {
    assert!(factor > 0.0, "alpha scale factor must be > 0");
    NewParams {
        alpha: params.alpha * factor,
        ..params.clone()
    }
}

/// Direct-path matrix shared by both parametrizations:
/// `eps / (4 pi tau f) * exp(-j 2 pi tau f)` per active link.
fn build_direct(
    tau_d: &DMatrix<f64>,
    eps_d: impl Fn(usize, usize) -> bool,
    f: f64,
) -> Result<DMatrix<Complex64>> {
    let mut d = DMatrix::zeros(tau_d.nrows(), tau_d.ncols());
    for m in 0..tau_d.nrows() {
        for n in 0..tau_d.ncols() {
            if !eps_d(m, n) {
                continue;
            }
            let tau = tau_d[(m, n)];
            if tau == 0.0 {
                return Err(PgError::DegenerateDelay {
                    matrix: "D",
                    row: m,
                    col: n,
                });
            }
            d[(m, n)] = Complex64::from_polar(1.0 / (4.0 * std::f64::consts::PI * tau * f), -TAU * tau * f);
        }
    }
    Ok(d)
}

/// Evaluate the per-link parametrization at frequency `f`.
///
/// T and R entries carry `1 / sqrt(4 pi f tau_bar) * tau^-1 / sqrt(S)` with
/// the indicator-weighted mean delay `tau_bar` and inverse-square sum `S` of
/// their own matrix; B rows are normalized to magnitude sum `g`.
pub fn build_original(delays: &DelaySet, params: &OriginalParams, f: f64) -> Result<TransferSet> {
    assert!(f > 0.0, "frequency must be > 0");

    let weighted_stats = |tau: &DMatrix<f64>,
                          eps: &DMatrix<bool>,
                          name: &'static str|
     -> Result<(f64, f64)> {
        let mut count = 0usize;
        let mut sum = 0.0;
        let mut inv_sq_sum = 0.0;
        for m in 0..tau.nrows() {
            for n in 0..tau.ncols() {
                if eps[(m, n)] {
                    let t = tau[(m, n)];
                    if t == 0.0 {
                        return Err(PgError::DegenerateDelay {
                            matrix: name,
                            row: m,
                            col: n,
                        });
                    }
                    count += 1;
                    sum += t;
                    inv_sq_sum += 1.0 / (t * t);
                }
            }
        }
        if count == 0 {
            return Ok((0.0, 0.0));
        }
        Ok((sum / count as f64, inv_sq_sum))
    };

    let (tau_bar_t, s_t) = weighted_stats(&delays.tau_t, &params.eps_t, "T")?;
    let (tau_bar_r, s_r) = weighted_stats(&delays.tau_r, &params.eps_r, "R")?;

    let d = build_direct(&delays.tau_d, |m, n| params.eps_d[(m, n)], f)?;

    let scattered = |tau: &DMatrix<f64>,
                     eps: &DMatrix<bool>,
                     phi: &DMatrix<f64>,
                     tau_bar: f64,
                     s: f64| {
        DMatrix::from_fn(tau.nrows(), tau.ncols(), |m, n| {
            if !eps[(m, n)] {
                return Complex64::new(0.0, 0.0);
            }
            let t = tau[(m, n)];
            let mag = 1.0 / (4.0 * std::f64::consts::PI * f * tau_bar).sqrt() / (t * s.sqrt());
            Complex64::from_polar(mag, -TAU * t * f + phi[(m, n)])
        })
    };
    let t = scattered(&delays.tau_t, &params.eps_t, &params.phi_t, tau_bar_t, s_t);
    let r = scattered(&delays.tau_r, &params.eps_r, &params.phi_r, tau_bar_r, s_r);

    let n_s = delays.tau_b.nrows();
    let mut b = DMatrix::zeros(n_s, n_s);
    for m in 0..n_s {
        let row_links = (0..n_s).filter(|&n| params.eps_b[(m, n)]).count();
        if row_links == 0 {
            continue;
        }
        for n in 0..n_s {
            if params.eps_b[(m, n)] {
                let mag = params.gain / row_links as f64;
                b[(m, n)] =
                    Complex64::from_polar(mag, -TAU * delays.tau_b[(m, n)] * f + params.phi_b[(m, n)]);
            }
        }
    }

    Ok(TransferSet {
        d,
        t,
        r,
        b,
        frequency: f,
    })
}

/// Evaluate the scatterer-phase parametrization at frequency `f`.
///
/// `|T_mn| = |R_mn| = sqrt(alpha / f) * exp(tau gamma)`, with the scatterer's
/// phase on each entry (row of T, column of R); `|B_mn| = beta` off the
/// diagonal with no extra random phase.
pub fn build_new(delays: &DelaySet, params: &NewParams, f: f64) -> Result<TransferSet> {
    assert!(f > 0.0, "frequency must be > 0");

    let eps_d = params.los_visible;
    let d = build_direct(&delays.tau_d, |_, _| eps_d, f)?;

    let amp = (params.alpha / f).sqrt();
    let t = DMatrix::from_fn(delays.tau_t.nrows(), delays.tau_t.ncols(), |m, n| {
        let tau = delays.tau_t[(m, n)];
        Complex64::from_polar(
            amp * (tau * params.gamma).exp(),
            -TAU * tau * f + params.phi_tx_side[m],
        )
    });
    let r = DMatrix::from_fn(delays.tau_r.nrows(), delays.tau_r.ncols(), |m, n| {
        let tau = delays.tau_r[(m, n)];
        Complex64::from_polar(
            amp * (tau * params.gamma).exp(),
            -TAU * tau * f + params.phi_rx_side[n],
        )
    });

    let n_s = delays.tau_b.nrows();
    let b = DMatrix::from_fn(n_s, n_s, |m, n| {
        if m == n {
            Complex64::new(0.0, 0.0)
        } else {
            Complex64::from_polar(params.beta, -TAU * delays.tau_b[(m, n)] * f)
        }
    });

    Ok(TransferSet {
        d,
        t,
        r,
        b,
        frequency: f,
    })
}

/// Either parametrization, for grid evaluation and experiment dispatch.
#[derive(Debug, Clone)]
pub enum ParamSet {
    Original(OriginalParams),
    New(NewParams),
}

impl ParamSet {
    pub fn build(&self, delays: &DelaySet, f: f64) -> Result<TransferSet> {
        match self {
            ParamSet::Original(p) => build_original(delays, p, f),
            ParamSet::New(p) => build_new(delays, p, f),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{compute_delays, sample_geometry, GeometryConfig};
    use approx::assert_relative_eq;
    use rand::{RngCore, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn table_delays(seed: u64) -> DelaySet {
        let config = GeometryConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let geom = sample_geometry(&config, &mut rng).unwrap();
        compute_delays(&geom, config.speed_of_light)
    }

    fn sample_original(delays: &DelaySet, gain: f64, seed: u64) -> OriginalParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        OriginalParams::sample_fully_connected(
            gain,
            delays.tau_t.ncols(),
            delays.tau_r.nrows(),
            delays.tau_b.nrows(),
            true,
            &mut rng,
        )
        .unwrap()
    }

    fn sample_new(delays: &DelaySet, alpha: f64, beta: f64, gamma: f64, seed: u64) -> NewParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        NewParams::sample(alpha, beta, gamma, delays.tau_b.nrows(), true, &mut rng).unwrap()
    }

    /// RngCore adapter counting 64-bit words drawn.
    struct CountingRng<R: RngCore> {
        inner: R,
        words: usize,
    }

    impl<R: RngCore> RngCore for CountingRng<R> {
        fn next_u32(&mut self) -> u32 {
            self.words += 1;
            self.inner.next_u32()
        }
        fn next_u64(&mut self) -> u64 {
            self.words += 1;
            self.inner.next_u64()
        }
        fn fill_bytes(&mut self, dest: &mut [u8]) {
            self.words += dest.len().div_ceil(8);
            self.inner.fill_bytes(dest);
        }
    }

    #[test]
    fn original_b_rows_sum_to_gain() {
        let delays = table_delays(1);
        let params = sample_original(&delays, 0.7, 2);
        let transfer = build_original(&delays, &params, 5e9).unwrap();
        let n_s = transfer.b.nrows();
        for m in 0..n_s {
            let row_sum: f64 = (0..n_s).map(|n| transfer.b[(m, n)].norm()).sum();
            assert_relative_eq!(row_sum, 0.7, max_relative = 1e-12);
            for n in 0..n_s {
                if m != n {
                    assert_relative_eq!(
                        transfer.b[(m, n)].norm(),
                        0.7 / (n_s - 1) as f64,
                        max_relative = 1e-12
                    );
                }
            }
            assert_eq!(transfer.b[(m, m)], Complex64::new(0.0, 0.0));
        }
    }

    #[test]
    fn obstructed_links_are_zero() {
        let delays = table_delays(3);
        let mut params = sample_original(&delays, 0.5, 4);
        params.eps_t[(2, 1)] = false;
        params.eps_d[(0, 0)] = false;
        let transfer = build_original(&delays, &params, 5e9).unwrap();
        assert_eq!(transfer.t[(2, 1)], Complex64::new(0.0, 0.0));
        assert_eq!(transfer.d[(0, 0)], Complex64::new(0.0, 0.0));
        assert!(transfer.t[(1, 2)].norm() > 0.0);
    }

    #[test]
    fn original_t_matches_scalar_reevaluation() {
        let delays = table_delays(5);
        let params = sample_original(&delays, 0.6, 6);
        let f = 5e9;
        let transfer = build_original(&delays, &params, f).unwrap();

        // Independent scalar path: recompute tau_bar, S and each entry from
        // raw loops, no shared helpers.
        let mut sum = 0.0;
        let mut count = 0.0;
        let mut s_t = 0.0;
        for &tau in delays.tau_t.iter() {
            sum += tau;
            count += 1.0;
            s_t += tau.powi(-2);
        }
        let tau_bar = sum / count;
        let mut fro_sq = 0.0;
        for m in 0..delays.tau_t.nrows() {
            for n in 0..delays.tau_t.ncols() {
                let tau = delays.tau_t[(m, n)];
                let mag = 1.0 / (4.0 * std::f64::consts::PI * f * tau_bar).sqrt()
                    * (1.0 / tau)
                    / s_t.sqrt();
                let phase = -TAU * tau * f + params.phi_t[(m, n)];
                let expected = Complex64::new(mag * phase.cos(), mag * phase.sin());
                let got = transfer.t[(m, n)];
                assert_relative_eq!(got.re, expected.re, max_relative = 1e-12);
                assert_relative_eq!(got.im, expected.im, max_relative = 1e-12);
                fro_sq += mag * mag;
            }
        }
        assert!(fro_sq.is_finite());
        assert_relative_eq!(transfer.t.norm_squared(), fro_sq, max_relative = 1e-12);
        // The normalization makes ||T||_F^2 = 1 / (4 pi f tau_bar).
        assert_relative_eq!(
            transfer.t.norm_squared(),
            1.0 / (4.0 * std::f64::consts::PI * f * tau_bar),
            max_relative = 1e-12
        );
    }

    #[test]
    fn degenerate_delay_is_reported() {
        let mut delays = table_delays(7);
        delays.tau_t[(0, 0)] = 0.0;
        let params = sample_original(&delays, 0.5, 8);
        match build_original(&delays, &params, 5e9) {
            Err(PgError::DegenerateDelay { matrix: "T", row: 0, col: 0 }) => {}
            other => panic!("expected DegenerateDelay, got {other:?}"),
        }
    }

    #[test]
    fn new_zero_gamma_gives_flat_magnitudes() {
        let delays = table_delays(9);
        let params = sample_new(&delays, 2.0, 0.05, 0.0, 10);
        let f = 4e9;
        let transfer = build_new(&delays, &params, f).unwrap();
        let expected = (2.0 / f).sqrt();
        for entry in transfer.t.iter().chain(transfer.r.iter()) {
            assert_relative_eq!(entry.norm(), expected, max_relative = 1e-12);
        }
    }

    #[test]
    fn new_b_has_zero_diagonal_and_beta_magnitude() {
        let delays = table_delays(11);
        let params = sample_new(&delays, 1.0, 0.08, -4e8, 12);
        for f in [1e9, 5e9, 9e9] {
            let transfer = build_new(&delays, &params, f).unwrap();
            let n_s = transfer.b.nrows();
            for m in 0..n_s {
                assert_eq!(transfer.b[(m, m)], Complex64::new(0.0, 0.0));
                for n in 0..n_s {
                    if m != n {
                        assert_relative_eq!(transfer.b[(m, n)].norm(), 0.08, max_relative = 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn new_exponential_weighting_arithmetic() {
        // alpha = 1 Hz, f = 1 Hz, gamma = -0.46052 / ns, tau = 10 ns
        // => |T| = exp(-4.6052) ~ 1.0e-2.
        let tau = 1e-8;
        let gamma = -0.46052e9;
        let delays = DelaySet {
            tau_d: DMatrix::from_element(1, 1, tau),
            tau_t: DMatrix::from_element(1, 1, tau),
            tau_r: DMatrix::from_element(1, 1, tau),
            tau_b: DMatrix::zeros(1, 1),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let params = NewParams::sample(1.0, 0.0, gamma, 1, true, &mut rng).unwrap();
        let transfer = build_new(&delays, &params, 1.0).unwrap();
        assert_relative_eq!(transfer.t[(0, 0)].norm(), 1.0e-2, max_relative = 1e-4);
    }

    #[test]
    fn phase_draw_counts() {
        let delays = table_delays(15);
        let (n_s, n_t, n_r) = (
            delays.tau_b.nrows(),
            delays.tau_t.ncols(),
            delays.tau_r.nrows(),
        );

        let mut counting = CountingRng {
            inner: ChaCha8Rng::seed_from_u64(16),
            words: 0,
        };
        NewParams::sample(1.0, 0.05, 0.0, n_s, true, &mut counting).unwrap();
        assert_eq!(counting.words, 2 * n_s);

        let mut counting = CountingRng {
            inner: ChaCha8Rng::seed_from_u64(17),
            words: 0,
        };
        OriginalParams::sample_fully_connected(0.5, n_t, n_r, n_s, true, &mut counting).unwrap();
        assert_eq!(counting.words, n_s * n_t + n_r * n_s + n_s * (n_s - 1));

        // Obstructing links reduces the number of draws accordingly.
        let mut eps_t = DMatrix::from_element(n_s, n_t, true);
        eps_t[(0, 0)] = false;
        eps_t[(3, 2)] = false;
        let mut counting = CountingRng {
            inner: ChaCha8Rng::seed_from_u64(18),
            words: 0,
        };
        OriginalParams::sample(
            0.5,
            DMatrix::from_element(n_r, n_t, true),
            eps_t,
            DMatrix::from_element(n_r, n_s, true),
            DMatrix::from_fn(n_s, n_s, |i, j| i != j),
            &mut counting,
        )
        .unwrap();
        assert_eq!(counting.words, n_s * n_t - 2 + n_r * n_s + n_s * (n_s - 1));
    }

    #[test]
    fn frequency_coherence_is_deterministic_per_entry() {
        let delays = table_delays(19);
        let (f1, f2) = (4.2e9, 5.7e9);

        let new_params = sample_new(&delays, 1.5, 0.06, -4.6e8, 20);
        let t1 = build_new(&delays, &new_params, f1).unwrap();
        let t2 = build_new(&delays, &new_params, f2).unwrap();
        for m in 0..t1.t.nrows() {
            for n in 0..t1.t.ncols() {
                let ratio = t2.t[(m, n)] / t1.t[(m, n)];
                let expected = Complex64::from_polar(
                    (f1 / f2).sqrt(),
                    -TAU * delays.tau_t[(m, n)] * (f2 - f1),
                );
                assert_relative_eq!(ratio.re, expected.re, max_relative = 1e-10);
                assert_relative_eq!(ratio.im, expected.im, max_relative = 1e-10);
            }
        }

        let orig_params = sample_original(&delays, 0.6, 21);
        let o1 = build_original(&delays, &orig_params, f1).unwrap();
        let o2 = build_original(&delays, &orig_params, f2).unwrap();
        for m in 0..o1.b.nrows() {
            for n in 0..o1.b.ncols() {
                if m == n {
                    continue;
                }
                let ratio = o2.b[(m, n)] / o1.b[(m, n)];
                let expected = Complex64::from_polar(1.0, -TAU * delays.tau_b[(m, n)] * (f2 - f1));
                assert_relative_eq!(ratio.re, expected.re, max_relative = 1e-10);
                assert_relative_eq!(ratio.im, expected.im, max_relative = 1e-10);
            }
        }
    }

    #[test]
    fn scale_alpha_touches_only_alpha() {
        let delays = table_delays(23);
        let params = sample_new(&delays, 2.0, 0.05, -4e8, 24);
        let same = scale_alpha(&params, 1.0);
        assert_eq!(params, same);
        let scaled = scale_alpha(&params, 4.0);
        assert_eq!(scaled.alpha, 8.0);
        assert_eq!(scaled.beta, params.beta);
        assert_eq!(scaled.gamma, params.gamma);
        assert_eq!(scaled.phi_tx_side, params.phi_tx_side);
        assert_eq!(scaled.phi_rx_side, params.phi_rx_side);
    }
}
