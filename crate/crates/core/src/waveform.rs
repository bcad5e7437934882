//! Compile a coupling profile into the time-domain drive waveform Ĵ(t),
//! continuous (open chain) or pulsed (periodic boundary conditions), derive
//! the dispersion relation χ_k, and invert the synthesis for verification.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{CouplingProfile, LatticeConfig};

/// Number of quadrature samples per Bloch period used when extracting
/// couplings from a continuous waveform. Trapezoidal rule on a periodic
/// band-limited signal is spectrally accurate at this resolution.
pub const QUADRATURE_SAMPLES: usize = 4096;

/// Pulse duration as a fraction of the pulse spacing τ_B/M.
pub const PULSE_WIDTH_FRACTION_OF_SPACING: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WaveformKind {
    Continuous,
    Pulsed,
}

/// One harmonic of the intensity modulation: 2|J(r)|[cos(r ω_B t + φ_r) + 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HarmonicTerm {
    pub r: usize,
    pub amplitude: f64,
    pub phase: f64,
}

/// Pulse train imposing periodic boundary conditions: M rectangular pulses
/// per Bloch period, the pulse at t_m = m τ_B/M carrying weight Ĵ_k at
/// k = 2πm/M. The time integral of pulse m equals (τ_B/M)·weight_m, so the
/// rectangle height is weight/width_fraction_of_spacing. `delta_mode`
/// replaces the rectangles by ideal kicks (used by the analytic propagator).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseTrain {
    pub weights: Vec<f64>,
    pub width_fraction: f64,
    pub delta_mode: bool,
}

/// Time-domain drive waveform over one Bloch period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriveWaveform {
    pub kind: WaveformKind,
    pub terms: Vec<HarmonicTerm>,
    pub dc_offset: f64,
    pub omega_b: f64,
    pub pulses: Option<PulseTrain>,
}

impl DriveWaveform {
    pub fn tau_b(&self) -> f64 {
        2.0 * PI / self.omega_b
    }

    /// Continuous envelope Ĵ_env(t) = J(0) + Σ_r 2|J(r)| cos(r ω_B t + φ_r).
    pub fn envelope(&self, t: f64) -> f64 {
        let mut v = self.dc_offset;
        for term in &self.terms {
            v += 2.0 * term.amplitude * (term.r as f64 * self.omega_b * t + term.phase).cos();
        }
        v
    }

    /// Instantaneous drive intensity Ĵ(t). For a pulsed waveform this is the
    /// rectangular pulse train: every rectangle is centered on its nominal
    /// time t_m = m τ_B/M, which cancels the first-order sweep of the
    /// sampled momentum across the finite pulse width. Width
    /// w = width_fraction·τ_B.
    pub fn value(&self, t: f64) -> f64 {
        match &self.pulses {
            None => self.envelope(t),
            Some(train) => {
                let tau = self.tau_b();
                let m = train.weights.len();
                let spacing = tau / m as f64;
                let width = train.width_fraction * tau;
                let phase = t.rem_euclid(tau);
                let idx = (phase / spacing + 0.5).floor() as usize;
                if (phase - idx as f64 * spacing).abs() <= width / 2.0 {
                    train.weights[idx % m] * spacing / width
                } else {
                    0.0
                }
            }
        }
    }

    /// Pulse windows covering [t0, t0 + periods·τ_B], as (start, end,
    /// weight) triples; empty for continuous waveforms. Windows follow the
    /// `value` convention: rectangles centered on the absolute grid times
    /// t_m = m τ_B/M. Rectangles that straddle an endpoint of the span are
    /// clipped there, carrying weight in proportion to the retained length
    /// (the rectangle height is unchanged), so evolving period by period
    /// reproduces one longer evolution exactly regardless of where the span
    /// cuts the train.
    pub fn pulse_windows(&self, t0: f64, periods: usize) -> Vec<(f64, f64, f64)> {
        let Some(train) = &self.pulses else { return Vec::new() };
        let tau = self.tau_b();
        let m = train.weights.len();
        let spacing = tau / m as f64;
        let width = train.width_fraction * tau;
        let half = width / 2.0;
        let t1 = t0 + periods as f64 * tau;
        let first = ((t0 - half) / spacing).ceil() as i64;
        let last = ((t1 + half) / spacing).floor() as i64;
        let mut windows = Vec::with_capacity((last - first + 1).max(0) as usize);
        for j in first..=last {
            let center = j as f64 * spacing;
            let (start, end) = ((center - half).max(t0), (center + half).min(t1));
            if end <= start {
                continue;
            }
            let weight =
                train.weights[j.rem_euclid(m as i64) as usize] * (end - start) / width;
            windows.push((start, end, weight));
        }
        windows
    }
}

/// Momentum-space coupling χ_k = -2n·Ĵ(k/ω_B) on either the M-point ring
/// grid (PBC) or a dense grid (open chain).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dispersion {
    pub k: Vec<f64>,
    pub chi: Vec<f64>,
    pub config: LatticeConfig,
}

/// Dense-grid oversampling factor for open boundary conditions; mode
/// independence is only approximate there, so the grid is a diagnostic.
pub const OPEN_BC_GRID_FACTOR: usize = 64;

impl Dispersion {
    /// Momentum in [0, π] at which the pair-creation growth rate is
    /// maximal, i.e. where χ_k is most negative (the dispersion minimum).
    pub fn growth_peak(&self) -> f64 {
        let mut best = (f64::INFINITY, 0.0);
        for (&k, &chi) in self.k.iter().zip(&self.chi) {
            if chi < best.0 {
                best = (chi, k);
            }
        }
        let k = best.1.rem_euclid(2.0 * PI);
        if k > PI {
            2.0 * PI - k
        } else {
            k
        }
    }
}

fn real_terms(profile: &CouplingProfile) -> Result<(Vec<HarmonicTerm>, f64)> {
    if !profile.phases_real() {
        return Err(Error::Unsupported(
            "complex (non-real) couplings cannot be synthesized; phases must be in {0, π}".into(),
        ));
    }
    let mut terms = Vec::new();
    for (r, j) in profile.offsite_entries() {
        let amplitude = j.norm();
        if amplitude < 0.0 {
            return Err(Error::domain("negative coupling magnitude"));
        }
        let phase = if j.re >= 0.0 { 0.0 } else { PI };
        terms.push(HarmonicTerm { r, amplitude, phase });
    }
    // On-site coupling: explicit entry if present, else the Methods rule
    // J(0) = 2 Σ_{r>0} |J(r)| that the modulation formula realizes.
    let auto_dc = 2.0 * profile.sum_offsite_abs();
    let j0 = profile.get(0);
    let dc = if j0 == Complex64::ZERO { auto_dc } else { j0.re };
    Ok((terms, dc))
}

fn build_envelope(profile: &CouplingProfile, config: &LatticeConfig) -> Result<DriveWaveform> {
    let (terms, dc_offset) = real_terms(profile)?;
    if terms.is_empty() && dc_offset == 0.0 {
        return Err(Error::Synthesis("empty coupling profile".into()));
    }
    Ok(DriveWaveform {
        kind: WaveformKind::Continuous,
        terms,
        dc_offset,
        omega_b: config.omega_b,
        pulses: None,
    })
}

/// Build the continuous intensity waveform whose Fourier coefficient at
/// r·ω_B equals J(r) for every profile entry and whose DC component equals
/// J(0).
pub fn synthesize_continuous(
    profile: &CouplingProfile,
    config: &LatticeConfig,
) -> Result<DriveWaveform> {
    let waveform = build_envelope(profile, config)?;
    // Intensity modulation cannot be negative.
    let tau = waveform.tau_b();
    let min = (0..QUADRATURE_SAMPLES)
        .map(|i| waveform.envelope(i as f64 * tau / QUADRATURE_SAMPLES as f64))
        .fold(f64::INFINITY, f64::min);
    if min < -1e-9 * waveform.dc_offset.abs().max(1e-300) {
        return Err(Error::Synthesis(format!(
            "waveform dips to {min:.3e}; raise J(0) (needs J(0) >= 2 sum |J(r)|)"
        )));
    }
    Ok(waveform)
}

/// Build the pulsed (PBC) waveform: the continuous envelope sampled at the
/// M pulse centers t_m = m τ_B/M, delivered as short rectangular pulses.
/// Only the emitted pulse weights must be nonnegative; the envelope between
/// pulse centers is never emitted.
pub fn synthesize_pulsed(profile: &CouplingProfile, config: &LatticeConfig) -> Result<DriveWaveform> {
    if !config.periodic {
        return Err(Error::domain(
            "pulsed synthesis requires periodic boundary conditions",
        ));
    }
    let continuous = build_envelope(profile, config)?;
    let m = config.m;
    let tau = continuous.tau_b();
    let weights: Vec<f64> = (0..m)
        .map(|i| continuous.envelope(i as f64 * tau / m as f64))
        .collect();
    if let Some(&w) = weights.iter().find(|&&w| w < -1e-9 * continuous.dc_offset.abs()) {
        return Err(Error::Synthesis(format!(
            "negative pulse weight {w:.3e}; raise J(0)"
        )));
    }
    Ok(DriveWaveform {
        kind: WaveformKind::Pulsed,
        pulses: Some(PulseTrain {
            weights,
            width_fraction: PULSE_WIDTH_FRACTION_OF_SPACING / m as f64,
            delta_mode: false,
        }),
        ..continuous
    })
}

/// Dispersion relation χ_k = -2n Ĵ(k/ω_B). Pulsed waveforms give the exact
/// M-point ring grid; continuous waveforms are sampled on the ring grid
/// under PBC or a dense grid otherwise.
pub fn dispersion(waveform: &DriveWaveform, config: &LatticeConfig) -> Dispersion {
    let n = config.n;
    match &waveform.pulses {
        Some(train) => {
            let m = train.weights.len();
            let k: Vec<f64> = (0..m).map(|i| 2.0 * PI * i as f64 / m as f64).collect();
            let chi = train.weights.iter().map(|&w| -2.0 * n * w).collect();
            Dispersion { k, chi, config: config.clone() }
        }
        None => {
            let points = if config.periodic {
                config.m
            } else {
                OPEN_BC_GRID_FACTOR * config.m
            };
            let k: Vec<f64> = (0..points)
                .map(|i| 2.0 * PI * i as f64 / points as f64)
                .collect();
            let chi = k
                .iter()
                .map(|&k| -2.0 * n * waveform.envelope(k / waveform.omega_b))
                .collect();
            Dispersion { k, chi, config: config.clone() }
        }
    }
}

/// Recover the couplings from a waveform: the Fourier integral
/// J(r) = (1/τ_B) ∫ e^{i r ω_B t} Ĵ(t) dt, evaluated by exact DFT for
/// pulsed waveforms and trapezoidal quadrature for continuous ones.
pub fn extract_couplings(waveform: &DriveWaveform, config: &LatticeConfig) -> CouplingProfile {
    let m = config.m;
    let mut profile = CouplingProfile::new(m, "extracted");
    match &waveform.pulses {
        Some(train) => {
            let mp = train.weights.len();
            for r in 0..m.min(mp) {
                let mut acc = Complex64::ZERO;
                for (i, &w) in train.weights.iter().enumerate() {
                    let phase = 2.0 * PI * (r * i) as f64 / mp as f64;
                    acc += Complex64::from_polar(w, phase);
                }
                acc /= mp as f64;
                if acc.norm() > 1e-12 * train.weights.iter().fold(0.0f64, |a, &w| a.max(w.abs())) {
                    profile.set(r, acc).expect("r < m by construction");
                }
            }
        }
        None => {
            let tau = waveform.tau_b();
            let n_s = QUADRATURE_SAMPLES;
            let samples: Vec<f64> = (0..n_s)
                .map(|i| waveform.envelope(i as f64 * tau / n_s as f64))
                .collect();
            let peak = samples.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
            for r in 0..m {
                let mut acc = Complex64::ZERO;
                for (i, &v) in samples.iter().enumerate() {
                    let phase = 2.0 * PI * (r * i) as f64 / n_s as f64;
                    acc += Complex64::from_polar(v, phase);
                }
                acc /= n_s as f64;
                if acc.norm() > 1e-10 * peak {
                    profile.set(r, acc).expect("r < m by construction");
                }
            }
        }
    }
    profile
}
