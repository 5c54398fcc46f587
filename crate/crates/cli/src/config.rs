//! Run configuration: one TOML document collecting every tunable, validated
//! fail-closed (unknown keys abort before any computation).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use nvem_core::constants::PhysicalConstants;
use nvem_core::sensitivity::ProtocolParams;
use nvem_core::spectrum::{BroadeningParams, SampleParams, SynthesisConfig, TemperaturePreset};
use nvem_core::theory::OrbitalInputs;
use nvem_core::McConfig;

use crate::AppError;

/// Full configuration of one toolkit run. Every section is optional; an
/// empty file yields the reference-sample defaults.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub sample: SampleParams,
    pub broadening: BroadeningParams,
    pub protocol: ProtocolParams,
    pub orbitals: OrbitalInputs,
    pub constants: PhysicalConstants,
    pub mc: McConfig,
    pub synthesis: SynthesisConfig,
    /// Named broadening/contrast preset; overrides `broadening` and the
    /// sample contrast factor when set.
    pub preset: Option<String>,
    /// Fixed ρ_eff/ρ_c ratio. Unset means calibrate against Monte Carlo
    /// using `calibration_samples` and the run seed.
    pub rho_eff_ratio: Option<f64>,
    pub calibration_samples: usize,
    pub seeds: Vec<u64>,
    pub output_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            sample: SampleParams::default(),
            broadening: BroadeningParams::default(),
            protocol: ProtocolParams::default(),
            orbitals: OrbitalInputs::default(),
            constants: PhysicalConstants::default(),
            mc: McConfig::default(),
            synthesis: SynthesisConfig::default(),
            preset: None,
            rho_eff_ratio: None,
            calibration_samples: 100_000,
            seeds: vec![42],
            output_dir: None,
        }
    }
}

impl RunConfig {
    /// Loads and validates a TOML config; parse errors carry line/column.
    pub fn load(path: &Path) -> Result<Self, AppError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| AppError::config(format!("cannot read {}: {e}", path.display())))?;
        let config: RunConfig = toml::from_str(&text)
            .map_err(|e| AppError::config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    /// Applies a named temperature preset to broadening and contrast.
    pub fn apply_preset(&mut self, name: &str) -> Result<(), AppError> {
        let preset = TemperaturePreset::from_name(name).ok_or_else(|| {
            AppError::config(format!(
                "unknown preset {name:?}; expected one of 5K, 40K, 55K, 100K"
            ))
        })?;
        let (broadening, epsilon_c) = preset.params();
        self.broadening = broadening;
        self.sample.epsilon_c = epsilon_c;
        Ok(())
    }

    pub fn validate(&self) -> Result<Vec<String>, AppError> {
        self.constants
            .validate()
            .map_err(|e| AppError::config(format!("constants: {e}")))?;
        if self.sample.rho_c.ppm() < 0.0 {
            return Err(AppError::config(
                "sample.rho_c: charge density must be non-negative".to_string(),
            ));
        }
        let warnings = self
            .sample
            .validate()
            .map_err(|e| AppError::config(format!("sample.{e}")))?;
        self.broadening
            .validate()
            .map_err(|e| AppError::config(format!("broadening.{e}")))?;
        self.protocol
            .validate()
            .map_err(|e| AppError::config(format!("protocol.{e}")))?;
        self.orbitals
            .validate()
            .map_err(|e| AppError::config(format!("orbitals: {e}")))?;
        if let Some(r) = self.rho_eff_ratio {
            if !(r > 0.0) {
                return Err(AppError::config(format!(
                    "rho_eff_ratio: must be positive, got {r}"
                )));
            }
        }
        if let Some(name) = &self.preset {
            if TemperaturePreset::from_name(name).is_none() && name != "custom" {
                return Err(AppError::config(format!(
                    "preset: unknown preset {name:?}"
                )));
            }
        }
        if self.seeds.is_empty() {
            return Err(AppError::config("seeds: at least one seed required"));
        }
        Ok(warnings)
    }

    /// Stable digest of the configuration for output provenance headers.
    /// The output directory is excluded: it places results, it does not
    /// shape them.
    pub fn digest(&self) -> String {
        let mut canonical = self.clone();
        canonical.output_dir = None;
        let text = serde_json::to_string(&canonical).expect("config serializes");
        format!("{:016x}", fnv1a64(text.as_bytes()))
    }
}

/// FNV-1a 64-bit hash; used for config digests and output file digests.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}
