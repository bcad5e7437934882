//! Core domain types: lattice parameters, coupling profiles, and the
//! number-theoretic utilities behind the treelike geometry.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Static parameters of the ensemble array: site count `m`, atoms per site
/// `n`, Bloch angular frequency `omega_b` (rad/s per site spacing), quadratic
/// Zeeman shift `q` (rad/s), and whether the drive enforces periodic
/// boundary conditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticeConfig {
    pub m: usize,
    pub n: f64,
    pub omega_b: f64,
    pub q: f64,
    pub periodic: bool,
}

impl LatticeConfig {
    pub fn new(m: usize, n: f64, omega_b: f64, q: f64, periodic: bool) -> Result<Self> {
        if m < 2 {
            return Err(Error::domain(format!("site count M must be >= 2, got {m}")));
        }
        if !(omega_b > 0.0) {
            return Err(Error::domain("omega_b must be positive"));
        }
        if !(n >= 1.0) {
            return Err(Error::domain("atoms per site n must be >= 1"));
        }
        Ok(Self { m, n, omega_b, q, periodic })
    }

    /// Bloch period `2π/ω_B`, the natural clock for drive modulation.
    pub fn tau_b(&self) -> f64 {
        2.0 * PI / self.omega_b
    }

    /// Floquet validity: the time-averaged description requires both the
    /// collective coupling `n·max|J|` and `q` to be small compared to
    /// `ω_B`. Returns `false` as a warning flag, never an error.
    pub fn floquet_valid(&self, profile: &CouplingProfile) -> bool {
        let max_j = profile
            .entries()
            .map(|(_, j)| j.norm())
            .fold(0.0_f64, f64::max);
        self.n * max_j < self.omega_b && self.q < self.omega_b
    }
}

/// Target couplings J(r): the "program" compiled into a drive waveform.
///
/// Entries are stored for nonnegative distances `0 <= r < M` with the
/// hermiticity convention `J(-r) = conj(J(r))`. For the experimentally
/// accessible waveforms the phases are restricted to {0, π}, i.e. real
/// couplings of either sign.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingProfile {
    m: usize,
    entries: BTreeMap<usize, Complex64>,
    pub label: String,
}

/// JSON wire format: `{"M":16,"entries":[{"r":1,"re":1.0,"im":0.0},...],"label":"..."}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ProfileJson {
    #[serde(rename = "M")]
    m: usize,
    entries: Vec<EntryJson>,
    label: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EntryJson {
    r: usize,
    re: f64,
    im: f64,
}

impl CouplingProfile {
    pub fn new(m: usize, label: impl Into<String>) -> Self {
        Self { m, entries: BTreeMap::new(), label: label.into() }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn set(&mut self, r: usize, j: Complex64) -> Result<()> {
        if r >= self.m {
            return Err(Error::domain(format!(
                "distance r={r} out of range for M={}",
                self.m
            )));
        }
        if j == Complex64::ZERO {
            self.entries.remove(&r);
        } else {
            self.entries.insert(r, j);
        }
        Ok(())
    }

    pub fn set_real(&mut self, r: usize, j: f64) -> Result<()> {
        self.set(r, Complex64::new(j, 0.0))
    }

    /// Coupling at nonnegative distance r; zero if absent.
    pub fn get(&self, r: usize) -> Complex64 {
        self.entries.get(&r).copied().unwrap_or(Complex64::ZERO)
    }

    /// Coupling at signed distance, using J(-r) = conj(J(r)).
    pub fn coupling_at(&self, r: i64) -> Complex64 {
        if r >= 0 {
            self.get(r as usize)
        } else {
            self.get((-r) as usize).conj()
        }
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, Complex64)> + '_ {
        self.entries.iter().map(|(&r, &j)| (r, j))
    }

    pub fn offsite_entries(&self) -> impl Iterator<Item = (usize, Complex64)> + '_ {
        self.entries().filter(|&(r, _)| r > 0)
    }

    /// True when every off-site coupling is real, i.e. its phase is in {0, π}.
    pub fn phases_real(&self) -> bool {
        self.offsite_entries()
            .all(|(_, j)| j.im.abs() <= 1e-12 * j.norm().max(1.0))
    }

    pub fn sum_offsite_abs(&self) -> f64 {
        self.offsite_entries().map(|(_, j)| j.norm()).sum()
    }

    /// Set the on-site coupling per the rule J(0) = 2 Σ_{r>0} |J(r)|,
    /// which keeps the synthesized intensity waveform nonnegative.
    pub fn apply_onsite_rule(&mut self) {
        let j0 = 2.0 * self.sum_offsite_abs();
        self.entries.insert(0, Complex64::new(j0, 0.0));
    }

    /// Symmetrize for periodic boundary conditions: mirror each entry at
    /// 0 < r < M/2 to M-r. A coupling at r = M/2 is its own mirror and is
    /// counted once (single distance class on the ring).
    pub fn symmetrize_pbc(&mut self) {
        let mirrored: Vec<(usize, Complex64)> = self
            .offsite_entries()
            .filter(|&(r, _)| 2 * r < self.m)
            .map(|(r, j)| (self.m - r, j))
            .collect();
        for (r, j) in mirrored {
            self.entries.insert(r, j);
        }
    }

    /// Uniformly rescale every entry, on-site included.
    pub fn scale(&mut self, factor: f64) {
        for j in self.entries.values_mut() {
            *j *= factor;
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        let entries = self
            .entries()
            .map(|(r, j)| EntryJson { r, re: j.re, im: j.im })
            .collect();
        serde_json::to_value(ProfileJson { m: self.m, entries, label: self.label.clone() })
            .expect("profile serialization cannot fail")
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        let raw: ProfileJson = serde_json::from_value(value.clone())?;
        let mut profile = CouplingProfile::new(raw.m, raw.label);
        for e in raw.entries {
            profile.set(e.r, Complex64::new(e.re, e.im))?;
        }
        Ok(profile)
    }
}

/// Specification of the hierarchical coupling family J(r) ∝ |r|^s supported
/// on power-of-two distances; `s < 0` is chain-like, `s > 0` treelike.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeCouplingSpec {
    pub s: f64,
    pub m: usize,
    pub base_amplitude: f64,
}

/// Bit-reversal permutation of a `bit_width`-bit site index, mapping
/// physical order to tree-leaf order.
pub fn monna_map(i: usize, bit_width: u32) -> Result<usize> {
    if bit_width == 0 || bit_width > usize::BITS {
        return Err(Error::domain(format!("invalid bit width {bit_width}")));
    }
    if i >= (1usize << bit_width) {
        return Err(Error::domain(format!(
            "site index {i} out of range for bit width {bit_width}"
        )));
    }
    Ok(i.reverse_bits() >> (usize::BITS - bit_width))
}

/// 2-adic valuation of a nonzero integer: the largest a with 2^a | r.
pub fn two_adic_valuation(r: i64) -> Result<u32> {
    if r == 0 {
        return Err(Error::domain("2-adic valuation of zero is undefined"));
    }
    Ok(r.unsigned_abs().trailing_zeros())
}

/// 2-adic norm |r|_2 = 2^{-a}, the ultrametric of the tree geometry.
/// Exact in f64 for any i64 input.
pub fn two_adic_norm(r: i64) -> Result<f64> {
    Ok(0.5f64.powi(two_adic_valuation(r)? as i32))
}

/// Generate the treelike coupling profile: J(r) = base·r^s at
/// r ∈ {1, 2, 4, ..., M/2}, zero otherwise, symmetrized for the ring and
/// with J(0) set by the on-site rule.
pub fn tree_profile(spec: &TreeCouplingSpec) -> Result<CouplingProfile> {
    if !spec.m.is_power_of_two() || spec.m < 4 {
        return Err(Error::domain(format!(
            "tree profile requires M a power of two >= 4, got {}",
            spec.m
        )));
    }
    let mut profile = CouplingProfile::new(spec.m, format!("tree_s{}", spec.s));
    let mut r = 1usize;
    while r <= spec.m / 2 {
        profile.set_real(r, spec.base_amplitude * (r as f64).powf(spec.s))?;
        r *= 2;
    }
    profile.symmetrize_pbc();
    profile.apply_onsite_rule();
    Ok(profile)
}
