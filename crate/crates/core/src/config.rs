//! Experiment configuration files. The JSON schema carries explicit units:
//! every frequency in a file is in Hz (field names end in `_hz`), while the
//! core works in angular frequencies (rad/s). Parsing is strict — unknown
//! fields are rejected and validation failures report the schema path.

use std::f64::consts::TAU;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{CouplingProfile, LatticeConfig, TreeCouplingSpec};
use crate::presets;
use crate::twa::NoiseSpec;
use crate::waveform::WaveformKind;

/// Lattice section of a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeSection {
    /// Number of array sites M.
    pub sites: usize,
    /// Mean atom number n per site.
    pub atoms_per_site: f64,
    /// Bloch oscillation frequency ω_B/2π in Hz per site.
    pub omega_b_hz: f64,
    /// Quadratic Zeeman shift q/2π in Hz.
    pub q_hz: f64,
    pub periodic: bool,
}

/// One coupling profile entry; amplitudes in Hz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingEntry {
    pub r: usize,
    pub re_hz: f64,
    #[serde(default)]
    pub im_hz: f64,
}

/// Coupling specification: an explicit profile, a power-law tree profile,
/// or a reference to a named preset's profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CouplingSection {
    Profile {
        entries: Vec<CouplingEntry>,
        /// Set J(0) = 2Σ_{r>0}|J(r)| after loading (required for a
        /// realizable non-negative intensity waveform).
        #[serde(default)]
        apply_onsite_rule: bool,
        /// Mirror each J(r) onto J(M−r) for ring couplings.
        #[serde(default)]
        symmetrize: bool,
    },
    Tree {
        /// Power-law exponent s in J(r) ∝ r^s at r ∈ {1, 2, 4, …, M/2}.
        s: f64,
        base_amplitude_hz: f64,
    },
    Preset { name: String },
}

/// Measurement noise in file units (jitter in Hz).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSection {
    pub larmor_jitter_sigma_hz: f64,
    pub larmor_site_sigma_hz: f64,
    pub crosstalk_epsilon: f64,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Complete description of one experiment run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub lattice: LatticeSection,
    pub couplings: CouplingSection,
    pub drive: WaveformKind,
    /// Interaction time in Bloch periods.
    pub periods: u32,
    pub trajectories: usize,
    #[serde(default)]
    pub noise: NoiseSection,
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Free-form label recorded in artifacts.
    #[serde(default)]
    pub label: String,
}

impl ExperimentConfig {
    /// Parse and validate a config file. Schema violations report the JSON
    /// path of the offending field.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let config: ExperimentConfig = serde_path_to_error::deserialize(de)
            .map_err(|e| Error::Config(format!("at {}: {}", e.path(), e.inner())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.to_lattice()?;
        self.noise_spec().validate()?;
        if self.trajectories == 0 {
            return Err(Error::Config("at trajectories: must be positive".into()));
        }
        if self.drive == WaveformKind::Pulsed && !self.lattice.periodic {
            return Err(Error::Config(
                "at drive: pulsed drive requires lattice.periodic = true".into(),
            ));
        }
        match &self.couplings {
            CouplingSection::Profile { entries, .. } => {
                if entries.is_empty() {
                    return Err(Error::Config(
                        "at couplings.entries: at least one entry required".into(),
                    ));
                }
                for (i, e) in entries.iter().enumerate() {
                    if e.r >= self.lattice.sites {
                        return Err(Error::Config(format!(
                            "at couplings.entries[{i}].r: separation {} out of range for {} sites",
                            e.r, self.lattice.sites
                        )));
                    }
                }
            }
            CouplingSection::Tree { base_amplitude_hz, .. } => {
                if *base_amplitude_hz <= 0.0 {
                    return Err(Error::Config(
                        "at couplings.base_amplitude_hz: must be positive".into(),
                    ));
                }
            }
            CouplingSection::Preset { name } => {
                presets::preset(name).map_err(|e| {
                    Error::Config(format!("at couplings.name: {e}"))
                })?;
            }
        }
        Ok(())
    }

    /// Core lattice parameters in rad/s.
    pub fn to_lattice(&self) -> Result<LatticeConfig> {
        LatticeConfig::new(
            self.lattice.sites,
            self.lattice.atoms_per_site,
            TAU * self.lattice.omega_b_hz,
            TAU * self.lattice.q_hz,
            self.lattice.periodic,
        )
        .map_err(|e| Error::Config(format!("at lattice: {e}")))
    }

    /// Core noise spec in rad/s.
    pub fn noise_spec(&self) -> NoiseSpec {
        NoiseSpec {
            larmor_jitter_sigma: TAU * self.noise.larmor_jitter_sigma_hz,
            larmor_site_sigma: TAU * self.noise.larmor_site_sigma_hz,
            crosstalk_epsilon: self.noise.crosstalk_epsilon,
        }
    }

    /// Resolve the coupling section to a concrete profile in rad/s.
    pub fn resolve_profile(&self) -> Result<CouplingProfile> {
        let m = self.lattice.sites;
        match &self.couplings {
            CouplingSection::Profile { entries, apply_onsite_rule, symmetrize } => {
                let mut profile = CouplingProfile::new(m, self.label.clone());
                for e in entries {
                    profile.set(
                        e.r,
                        num_complex::Complex64::new(TAU * e.re_hz, TAU * e.im_hz),
                    )?;
                }
                if *symmetrize {
                    profile.symmetrize_pbc();
                }
                if *apply_onsite_rule {
                    profile.apply_onsite_rule();
                }
                Ok(profile)
            }
            CouplingSection::Tree { s, base_amplitude_hz } => {
                crate::lattice::tree_profile(&TreeCouplingSpec {
                    m,
                    s: *s,
                    base_amplitude: TAU * base_amplitude_hz,
                })
            }
            CouplingSection::Preset { name } => {
                let preset = presets::preset(name)?;
                if preset.lattice.sites != m {
                    return Err(Error::Config(format!(
                        "at couplings.name: preset '{name}' defines {} sites but lattice.sites = {m}",
                        preset.lattice.sites
                    )));
                }
                preset.resolve_profile()
            }
        }
    }
}
