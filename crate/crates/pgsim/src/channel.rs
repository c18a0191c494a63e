//! Channel assembly from a transfer set.
//!
//! The NLOS channel sums all scattering orders: R (sum_k B^k) T. When the
//! spectral radius of B is below one the series has the closed form
//! R (I - B)^-1 T, evaluated here with a dense LU solve. The truncated
//! series stays available as a brute-force oracle.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{PgError, Result};
use crate::geometry::DelaySet;
use crate::parametrization::{ParamSet, TransferSet};

/// Margin below one at which the scatterer graph is treated as unstable;
/// avoids near-singular solves.
pub const STABILITY_MARGIN: f64 = 1e-6;

const POWER_ITERATION_BUDGET: usize = 50_000;

/// Uniform frequency grid, inclusive of both endpoints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct FrequencyGrid {
    pub f_min: f64,
    pub f_max: f64,
    pub num_points: usize,
}

impl FrequencyGrid {
    pub fn new(f_min: f64, f_max: f64, num_points: usize) -> Result<Self> {
        let grid = FrequencyGrid {
            f_min,
            f_max,
            num_points,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.f_min > 0.0 && self.f_min < self.f_max) {
            return Err(PgError::ValidationError(format!(
                "frequency grid requires 0 < fMin < fMax (got {} .. {})",
                self.f_min, self.f_max
            )));
        }
        if self.num_points < 2 {
            return Err(PgError::ValidationError(format!(
                "frequency grid requires numPoints >= 2 (got {})",
                self.num_points
            )));
        }
        Ok(())
    }

    pub fn spacing(&self) -> f64 {
        (self.f_max - self.f_min) / (self.num_points - 1) as f64
    }

    pub fn frequencies(&self) -> Vec<f64> {
        let step = self.spacing();
        (0..self.num_points)
            .map(|i| self.f_min + i as f64 * step)
            .collect()
    }
}

/// LOS and NLOS channel matrices at one frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSample {
    pub h_los: DMatrix<Complex64>,
    pub h_nlos: DMatrix<Complex64>,
    pub frequency: f64,
}

/// The LOS channel is the direct-path matrix.
pub fn h_los(transfer: &TransferSet) -> DMatrix<Complex64> {
    transfer.d.clone()
}

/// Largest eigenvalue magnitude by power iteration.
///
/// Uses the norm-growth estimate with a deterministic start vector;
/// accuracy is driven to 1e-10 relative change sustained over several
/// iterations. Fails with `NoConvergence` when eigenvalue moduli are too
/// close for the iteration to settle (use [`spectral_radius_dense`] then).
pub fn spectral_radius(b: &DMatrix<Complex64>) -> Result<f64> {
    assert_eq!(b.nrows(), b.ncols(), "spectral radius needs a square matrix");
    let n = b.nrows();
    if b.iter().all(|z| z.norm_sqr() == 0.0) {
        return Ok(0.0);
    }

    // Deterministic dense start vector with irrational phase steps so it is
    // not orthogonal to the dominant eigenspace for any structured B.
    let mut v = nalgebra::DVector::from_fn(n, |i, _| Complex64::cis(1.0 + 2.399963 * i as f64));
    v /= Complex64::new(v.norm(), 0.0);

    let mut estimate = 0.0_f64;
    let mut stable = 0usize;
    for iteration in 0..POWER_ITERATION_BUDGET {
        let w = b * &v;
        let growth = w.norm();
        if growth == 0.0 {
            // v landed in the null space; the iteration cannot recover.
            return Ok(0.0);
        }
        let change = (growth - estimate).abs() / growth.max(f64::MIN_POSITIVE);
        estimate = growth;
        v = w / Complex64::new(growth, 0.0);
        if change < 1e-12 {
            stable += 1;
            if stable >= 5 {
                return Ok(estimate);
            }
        } else {
            stable = 0;
        }
        if iteration == POWER_ITERATION_BUDGET - 1 {
            break;
        }
    }
    Err(PgError::NoConvergence {
        iterations: POWER_ITERATION_BUDGET,
    })
}

/// Largest eigenvalue magnitude by a full dense eigensolve.
///
/// The complex matrix B = X + iY embeds into the real matrix
/// [[X, -Y], [Y, X]], whose eigenvalues are those of B plus their
/// conjugates; the spectral radius is unchanged.
pub fn spectral_radius_dense(b: &DMatrix<Complex64>) -> f64 {
    let n = b.nrows();
    // The Schur iteration underlying complex_eigenvalues does not terminate
    // on the zero matrix.
    if b.iter().all(|z| z.norm_sqr() == 0.0) {
        return 0.0;
    }
    let mut embed = DMatrix::<f64>::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            let z = b[(i, j)];
            embed[(i, j)] = z.re;
            embed[(i, j + n)] = -z.im;
            embed[(i + n, j)] = z.im;
            embed[(i + n, j + n)] = z.re;
        }
    }
    embed
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Row-sum (Gershgorin) bound on the spectral radius of B.
pub fn gershgorin_bound(b: &DMatrix<Complex64>) -> f64 {
    (0..b.nrows())
        .map(|m| (0..b.ncols()).map(|n| b[(m, n)].norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Check that the scatterer graph dissipates: cheap row-sum bound first,
/// full eigensolve only when the bound is inconclusive.
fn ensure_stable(b: &DMatrix<Complex64>) -> Result<()> {
    let limit = 1.0 - STABILITY_MARGIN;
    if gershgorin_bound(b) < limit {
        return Ok(());
    }
    let rho = spectral_radius_dense(b);
    if rho >= limit {
        return Err(PgError::UnstableGraph {
            rho,
            limit,
            frequency_index: 0,
        });
    }
    Ok(())
}

/// NLOS channel via the closed form R (I - B)^-1 T using a dense LU solve.
pub fn h_nlos_closed(transfer: &TransferSet) -> Result<DMatrix<Complex64>> {
    ensure_stable(&transfer.b)?;
    let n_s = transfer.b.nrows();
    let eye = DMatrix::<Complex64>::identity(n_s, n_s);
    let system = &eye - &transfer.b;
    let x = system
        .lu()
        .solve(&transfer.t)
        .ok_or(PgError::SingularSolve { frequency_index: 0 })?;
    Ok(&transfer.r * x)
}

/// NLOS channel via the truncated series R (sum_{k=0}^K B^k) T.
pub fn h_nlos_truncated(transfer: &TransferSet, max_bounces: usize) -> DMatrix<Complex64> {
    let mut partial = transfer.t.clone();
    let mut term = transfer.t.clone();
    for _ in 1..=max_bounces {
        term = &transfer.b * term;
        partial += &term;
    }
    &transfer.r * partial
}

/// Evaluate LOS and NLOS channels on every grid point.
///
/// Pure in its inputs: phases live in `params`, so any parallel schedule
/// over frequencies or realizations yields identical samples.
pub fn evaluate_over_grid(
    delays: &DelaySet,
    params: &ParamSet,
    grid: &FrequencyGrid,
) -> Result<Vec<ChannelSample>> {
    grid.validate()?;
    grid.frequencies()
        .iter()
        .enumerate()
        .map(|(index, &f)| {
            let transfer = params.build(delays, f)?;
            let h_nlos = h_nlos_closed(&transfer).map_err(|e| match e {
                PgError::UnstableGraph { rho, limit, .. } => PgError::UnstableGraph {
                    rho,
                    limit,
                    frequency_index: index,
                },
                PgError::SingularSolve { .. } => PgError::SingularSolve {
                    frequency_index: index,
                },
                other => other,
            })?;
            Ok(ChannelSample {
                h_los: h_los(&transfer),
                h_nlos,
                frequency: f,
            })
        })
        .collect()
}
