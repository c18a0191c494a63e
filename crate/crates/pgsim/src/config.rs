//! Experiment configuration: JSON ingestion, defaults and validation.
//!
//! Decay rates enter in dB/ns (the usual tabulation convention) and are
//! converted to SI on ingestion; everything downstream is seconds and Hz.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::calibration::{Band, DecayExponent, SvTarget};
use crate::channel::FrequencyGrid;
use crate::error::{PgError, Result};
use crate::geometry::GeometryConfig;

/// Preset experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// One realization, both parametrizations on shared scatterer
    /// positions; emits windowed NLOS impulse responses.
    RealizationCompare,
    /// Average NLOS singular values versus the antenna spacing factor.
    SvVsKappa,
    /// Average NLOS singular values versus the scatterer box side
    /// (minimum scatterer distance zero).
    SvVsBox,
    /// LOS/NLOS power ratio versus frequency against the K target.
    KVsFrequency,
    /// Closed-form power chain versus Monte Carlo, with standard errors.
    VerifyDerivation,
}

impl Preset {
    pub const ALL: [Preset; 5] = [
        Preset::RealizationCompare,
        Preset::SvVsKappa,
        Preset::SvVsBox,
        Preset::KVsFrequency,
        Preset::VerifyDerivation,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Preset::RealizationCompare => "realization-compare",
            Preset::SvVsKappa => "sv-vs-kappa",
            Preset::SvVsBox => "sv-vs-box",
            Preset::KVsFrequency => "k-vs-frequency",
            Preset::VerifyDerivation => "verify-derivation",
        }
    }

    pub fn description(&self) -> &'static str {
        match self {
            Preset::RealizationCompare => {
                "windowed NLOS impulse responses of both parametrizations on shared scatterers"
            }
            Preset::SvVsKappa => "average NLOS singular values over the antenna spacing factor",
            Preset::SvVsBox => "average NLOS singular values over the scatterer box side",
            Preset::KVsFrequency => "LOS/NLOS power ratio over frequency against the K target",
            Preset::VerifyDerivation => "closed-form power chain versus Monte Carlo",
        }
    }

    pub fn parse(name: &str) -> Result<Preset> {
        Preset::ALL
            .iter()
            .copied()
            .find(|p| p.name() == name)
            .ok_or_else(|| {
                let valid: Vec<&str> = Preset::ALL.iter().map(|p| p.name()).collect();
                PgError::ValidationError(format!(
                    "unknown preset {name:?}; valid presets: {}",
                    valid.join(", ")
                ))
            })
    }
}

/// Which parametrizations an experiment evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ParametrizationChoice {
    Original,
    New,
    #[default]
    Both,
}

impl ParametrizationChoice {
    pub fn includes_original(&self) -> bool {
        matches!(self, ParametrizationChoice::Original | ParametrizationChoice::Both)
    }

    pub fn includes_new(&self) -> bool {
        matches!(self, ParametrizationChoice::New | ParametrizationChoice::Both)
    }
}

/// Saleh-Valenzuela targets in interface units (dB/ns).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields, default)]
pub struct SvTargetConfig {
    pub rho1_db_per_ns: f64,
    pub rho2_db_per_ns: f64,
    pub k_factor: f64,
    pub band: Band,
}

impl Default for SvTargetConfig {
    fn default() -> Self {
        SvTargetConfig {
            rho1_db_per_ns: -1.0,
            rho2_db_per_ns: -2.0,
            k_factor: 180.0,
            band: Band {
                f_min: 4e9,
                f_max: 6e9,
            },
        }
    }
}

impl SvTargetConfig {
    /// Convert to SI decay rates (dB/s).
    pub fn to_si(self) -> SvTarget {
        SvTarget {
            rho1_db_per_s: self.rho1_db_per_ns * 1e9,
            rho2_db_per_s: self.rho2_db_per_ns * 1e9,
            k_factor: self.k_factor,
            band: self.band,
        }
    }
}

fn log_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (log_lo, log_hi) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (log_lo + (log_hi - log_lo) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

fn default_kappa_sweep() -> Vec<f64> {
    log_space(0.01, 2.0, 16)
}

fn default_box_sweep() -> Vec<f64> {
    log_space(0.05, 20.0, 16)
}

/// Sweep ranges and analysis knobs, all defaulted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields, default)]
pub struct Overrides {
    /// Antenna spacing factors for the kappa sweep.
    pub kappa_sweep: Vec<f64>,
    /// Box sides (m) for the box sweep.
    pub box_sweep: Vec<f64>,
    /// Evaluation frequencies per sweep point, spread over the target band.
    pub sv_eval_points: usize,
    /// Evaluate sweeps at the carrier frequency only.
    pub sv_single_frequency: bool,
    /// Grid points for impulse-response synthesis over the target band.
    pub cir_points: usize,
    /// Pilot-ensemble size for delay statistics and MGF estimation.
    pub pilot_realizations: usize,
    /// Monte-Carlo draws for the derivation verifier.
    pub mc_draws: usize,
    /// Bypass beta calibration with a fixed value (derivation verifier).
    pub beta_override: Option<f64>,
    /// Exponent convention mapping dB/ns targets to amplitudes.
    pub decay_calibration: DecayExponent,
}

impl Default for Overrides {
    fn default() -> Self {
        Overrides {
            kappa_sweep: default_kappa_sweep(),
            box_sweep: default_box_sweep(),
            sv_eval_points: 64,
            sv_single_frequency: false,
            cir_points: 1024,
            pilot_realizations: 200,
            mc_draws: 10_000,
            beta_override: None,
            decay_calibration: DecayExponent::default(),
        }
    }
}

/// Full experiment description. An empty JSON object deserializes to the
/// reference 4x4 scene: 10 scatterers in a 5 m cube, rho1 = -1 dB/ns,
/// rho2 = -2 dB/ns, K = 180 on [4, 6] GHz, M = 1000 realizations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub preset: String,
    pub geometry: GeometryConfig,
    pub sv_target: SvTargetConfig,
    pub realizations: usize,
    pub master_seed: u64,
    pub grid: FrequencyGrid,
    pub parametrization: ParametrizationChoice,
    pub output_dir: PathBuf,
    pub overrides: Overrides,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            preset: Preset::VerifyDerivation.name().into(),
            geometry: GeometryConfig::default(),
            sv_target: SvTargetConfig::default(),
            realizations: 1000,
            master_seed: 1,
            grid: FrequencyGrid {
                f_min: 1e9,
                f_max: 10e9,
                num_points: 256,
            },
            parametrization: ParametrizationChoice::default(),
            output_dir: PathBuf::from("pgsim-out"),
            overrides: Overrides::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn preset(&self) -> Result<Preset> {
        Preset::parse(&self.preset)
    }

    pub fn validate(&self) -> Result<()> {
        self.preset()?;
        self.geometry.validate()?;
        self.sv_target.to_si().validate()?;
        self.grid.validate()?;
        if self.realizations < 1 {
            return Err(PgError::ValidationError(
                "realizations must be >= 1".into(),
            ));
        }
        let o = &self.overrides;
        if o.kappa_sweep.is_empty() || o.kappa_sweep.iter().any(|&v| v < 0.0) {
            return Err(PgError::ValidationError(
                "kappaSweep must be a non-empty list of values >= 0".into(),
            ));
        }
        if o.box_sweep.is_empty() || o.box_sweep.iter().any(|&v| v < 0.0) {
            return Err(PgError::ValidationError(
                "boxSweep must be a non-empty list of values >= 0".into(),
            ));
        }
        if o.sv_eval_points < 1 {
            return Err(PgError::ValidationError("svEvalPoints must be >= 1".into()));
        }
        if o.cir_points < 2 {
            return Err(PgError::ValidationError("cirPoints must be >= 2".into()));
        }
        if o.pilot_realizations < 1 {
            return Err(PgError::ValidationError(
                "pilotRealizations must be >= 1".into(),
            ));
        }
        if o.mc_draws < 2 {
            return Err(PgError::ValidationError("mcDraws must be >= 2".into()));
        }
        if let Some(beta) = o.beta_override {
            if !(beta >= 0.0) {
                return Err(PgError::ValidationError(format!(
                    "betaOverride must be >= 0 (got {beta})"
                )));
            }
        }
        Ok(())
    }
}

/// Parse and validate a JSON config file; omitted fields take the
/// reference defaults.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| PgError::ParseError(format!("{}: {e}", path.display())))?;
    let config: ExperimentConfig = serde_json::from_str(&text)
        .map_err(|e| PgError::ParseError(format!("{}: {e}", path.display())))?;
    config.validate()?;
    Ok(config)
}
