//! TOML run configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::quadrature::PhaseSource;
use crate::state::HeraldedStateModel;
use crate::synth::AcquisitionConfig;
use crate::tomography::EfficiencyMode;

/// State parameters pinned by calibration against the baseline negativity.
pub const DEFAULT_STATE: HeraldedStateModel = HeraldedStateModel {
    r: 0.35,
    xi: 0.83,
    eta_prep: 0.85,
    fock_dim: 12,
};

/// Which temporal mode the traces are projected on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ModeSource {
    /// Dominant eigenvector of the autocorrelation matrix at each point.
    #[default]
    Reconstructed,
    /// Theoretical mode sampled on the point's grid.
    Ideal,
}

impl std::str::FromStr for ModeSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reconstructed" => Ok(Self::Reconstructed),
            "ideal" => Ok(Self::Ideal),
            other => Err(Error::param(
                "mode_source",
                format!("expected reconstructed or ideal, got {other}"),
            )),
        }
    }
}

impl std::fmt::Display for ModeSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Reconstructed => "reconstructed",
            Self::Ideal => "ideal",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TomographyConfig {
    pub iterations: usize,
    pub efficiency_mode: EfficiencyMode,
    pub phase_source: PhaseSource,
    /// Relative slack of the side-variance plausibility check.
    pub phase_tolerance: f64,
    /// Rescale projected quadratures so that shot noise passed through the
    /// processed chain has variance 1/2.
    pub shot_noise_units: bool,
    pub wigner_half_width: f64,
    pub wigner_points: usize,
}

impl Default for TomographyConfig {
    fn default() -> Self {
        Self {
            iterations: 1000,
            efficiency_mode: EfficiencyMode::Povm,
            phase_source: PhaseSource::Truth,
            phase_tolerance: 0.25,
            shot_noise_units: true,
            wigner_half_width: 4.0,
            wigner_points: 81,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub fc_list_hz: Vec<f64>,
    /// Decimation factors; the sampling rates are fs_exp / n.
    pub n_list: Vec<usize>,
    pub mode_source: ModeSource,
    /// Also reconstruct with the other mode source for comparison.
    pub compare_mode_sources: bool,
    /// (f_c in Hz, n) points whose Wigner grids are exported.
    pub wigner_panels: Vec<(f64, usize)>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            fc_list_hz: vec![11e6, 31e6, 51e6, 101e6, 151e6, 201e6, 301e6],
            n_list: vec![1, 2, 9, 17, 21, 25, 33],
            mode_source: ModeSource::Reconstructed,
            compare_mode_sources: true,
            wigner_panels: vec![(301e6, 1), (301e6, 21), (31e6, 1), (31e6, 21)],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub acquisition: AcquisitionConfig,
    pub tomography: TomographyConfig,
    pub sweep: SweepConfig,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.acquisition.validate()?;
        let t = &self.tomography;
        if t.iterations == 0 {
            return Err(Error::param("tomography.iterations", "need at least one iteration"));
        }
        if !(t.phase_tolerance >= 0.0 && t.phase_tolerance.is_finite()) {
            return Err(Error::param("tomography.phase_tolerance", "must be non-negative"));
        }
        if !(t.wigner_half_width > 0.0 && t.wigner_half_width.is_finite()) || t.wigner_points < 2 {
            return Err(Error::param("tomography.wigner", "need a positive span and >= 2 points"));
        }
        let s = &self.sweep;
        if let Some(fc) = s.fc_list_hz.iter().find(|f| !(**f > 0.0 && f.is_finite())) {
            return Err(Error::param("sweep.fc_list_hz", format!("cutoff {fc} is not positive")));
        }
        if s.n_list.contains(&0) {
            return Err(Error::param("sweep.n_list", "decimation factors must be >= 1"));
        }
        Ok(())
    }

    /// First eight bytes (little endian) of the SHA-256 of the canonical
    /// TOML serialization.
    pub fn hash(&self) -> Result<u64> {
        Ok(hash_text(&self.to_toml_string()?))
    }
}

pub fn hash_text(text: &str) -> u64 {
    let digest = Sha256::digest(text.as_bytes());
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}
