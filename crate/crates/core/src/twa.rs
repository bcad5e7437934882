//! Truncated Wigner simulation: sample initial Wigner fluctuations per site,
//! integrate the nonlinear mean-field equations of motion under the
//! time-dependent drive, apply measurement noise models, and emit
//! per-realization observables.
//!
//! Per site l the state is a three-component amplitude ζ = (ζ₊, ζ₀, ζ₋) with
//! Σ_m |ζ_m|² ≈ n. In the rotating (gradient-dressed) frame the equations of
//! motion are
//!
//!   dζ₊/dt = +2i Ĵ(t) ũ_l* ζ₀
//!   dζ₀/dt = +i q ζ₀ + 2i Ĵ(t) (ũ_l* ζ₋ + ũ_l ζ₊)
//!   dζ₋/dt = +2i Ĵ(t) ũ_l ζ₀
//!
//! with ũ_l = U v_l*, U = Σ_l v_l (ζ₊* ζ₀ + ζ₀* ζ₋), v_l = e^{i l ω_B t}.
//! In the lab frame the v_l phases move into the diagonal gradient term
//! ∓ i l ω_B ζ_± and U carries no phases; the two frames agree exactly at
//! integer Bloch periods.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::LatticeConfig;
use crate::waveform::DriveWaveform;

/// Reference frame for the evolution. Observables are recorded in each
/// site's rotating frame; at integer Bloch periods the frames coincide.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frame {
    Lab,
    Rotating,
}

/// Measurement noise model: shot-to-shot Larmor frequency jitter (a global
/// per-realization offset plus an independent per-site component, both in
/// rad/s, applied as phases on ζ_± at readout) and nearest-neighbor imaging
/// crosstalk on the population channels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub larmor_jitter_sigma: f64,
    pub larmor_site_sigma: f64,
    pub crosstalk_epsilon: f64,
}

impl NoiseSpec {
    pub fn none() -> Self {
        Self { larmor_jitter_sigma: 0.0, larmor_site_sigma: 0.0, crosstalk_epsilon: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..0.5).contains(&self.crosstalk_epsilon) {
            return Err(Error::domain(format!(
                "crosstalk epsilon must be in [0, 0.5), got {}",
                self.crosstalk_epsilon
            )));
        }
        if self.larmor_jitter_sigma < 0.0 || self.larmor_site_sigma < 0.0 {
            return Err(Error::domain("jitter sigma must be nonnegative"));
        }
        Ok(())
    }
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self::none()
    }
}

/// Integrator controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvolveOptions {
    /// Relative tolerance of the adaptive embedded Runge–Kutta 4(5)
    /// integrator used for continuous drives.
    pub rtol: f64,
    /// Fixed Runge–Kutta-4 substeps inside each rectangular pulse.
    pub substeps_per_pulse: usize,
    /// Fixed-step mode for continuous drives (RK4 steps per Bloch period),
    /// for reproducibility studies; `None` selects the adaptive integrator.
    pub fixed_steps_per_period: Option<usize>,
    /// Freeze the m=0 pump: drop the interaction backreaction on ζ₀ so pair
    /// creation proceeds without depletion (validation of the linear model).
    pub frozen_pump: bool,
    /// Guard on the relative drift of the total norm per trajectory.
    pub max_norm_drift: f64,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-9,
            substeps_per_pulse: 64,
            fixed_steps_per_period: None,
            frozen_pump: false,
            max_norm_drift: 1e-6,
        }
    }
}

/// Mean-field state of one realization: 3M amplitudes ordered
/// (site 0: +, 0, −; site 1: …) and the absolute time.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryState {
    pub zeta: Vec<Complex64>,
    pub t: f64,
}

impl TrajectoryState {
    pub fn sites(&self) -> usize {
        self.zeta.len() / 3
    }

    /// Total norm Σ |ζ|², conserved by the evolution.
    pub fn total_norm(&self) -> f64 {
        self.zeta.iter().map(|z| z.norm_sqr()).sum()
    }

    /// Total z-magnetization Σ_l (|ζ₊|² − |ζ₋|²), conserved because pair
    /// creation produces m = ±1 together.
    pub fn total_fz(&self) -> f64 {
        (0..self.sites())
            .map(|l| self.zeta[3 * l].norm_sqr() - self.zeta[3 * l + 2].norm_sqr())
            .sum()
    }

    /// Transverse spin Fx_l = √2 Re[ζ₊* ζ₀ + ζ₀* ζ₋] in the site's rotating
    /// frame, without measurement noise.
    pub fn transverse_spin(&self, l: usize) -> f64 {
        let (p, z, m) = (self.zeta[3 * l], self.zeta[3 * l + 1], self.zeta[3 * l + 2]);
        std::f64::consts::SQRT_2 * (p.conj() * z + z.conj() * m).re
    }
}

/// Observables of one realization: per-site populations (Wigner means,
/// including the vacuum half-quantum) and transverse spin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleRecord {
    pub realization: usize,
    pub seed: u64,
    /// Bloch periods elapsed at measurement (t/τ_B).
    pub periods: f64,
    pub n_plus: Vec<f64>,
    pub n_zero: Vec<f64>,
    pub n_minus: Vec<f64>,
    pub fx: Vec<f64>,
}

impl EnsembleRecord {
    /// Fraction of atoms converted out of m=0, with the vacuum half-quantum
    /// per side removed: Σ_i (n₊ + n₋ − 1) / (n M).
    pub fn converted_fraction(&self, n: f64) -> f64 {
        let m = self.n_plus.len();
        let total: f64 = self
            .n_plus
            .iter()
            .zip(&self.n_minus)
            .map(|(a, b)| a + b - 1.0)
            .sum();
        total / (n * m as f64)
    }
}

/// Draw the initial Wigner sample: ζ₀ = √n + X, ζ_± = X with independent
/// complex Gaussians X of total variance 1/2 (1/4 per quadrature).
pub fn sample_initial(config: &LatticeConfig, rng: &mut impl Rng) -> TrajectoryState {
    let root_n = config.n.sqrt();
    let mut zeta = Vec::with_capacity(3 * config.m);
    for _ in 0..config.m {
        for component in 0..3 {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            let mut z = Complex64::new(re / 2.0, im / 2.0);
            if component == 1 {
                z += root_n;
            }
            zeta.push(z);
        }
    }
    TrajectoryState { zeta, t: 0.0 }
}

struct Engine {
    m: usize,
    q: f64,
    omega_b: f64,
    frame: Frame,
    frozen_pump: bool,
}

impl Engine {
    /// dζ/dt at time t with instantaneous drive intensity j.
    fn deriv(&self, t: f64, j: f64, y: &[Complex64], out: &mut [Complex64]) {
        let step = Complex64::from_polar(1.0, self.omega_b * t);
        // U = Σ_l v_l (ζ₊* ζ₀ + ζ₀* ζ₋); v_l = 1 in the lab frame.
        let mut u = Complex64::ZERO;
        let mut v = Complex64::ONE;
        for l in 0..self.m {
            let pair = y[3 * l].conj() * y[3 * l + 1] + y[3 * l + 1].conj() * y[3 * l + 2];
            match self.frame {
                Frame::Rotating => {
                    u += v * pair;
                    v *= step;
                }
                Frame::Lab => u += pair,
            }
        }
        let iq = Complex64::new(0.0, self.q);
        let two_ij = Complex64::new(0.0, 2.0 * j);
        let mut v = Complex64::ONE;
        for l in 0..self.m {
            let ul = match self.frame {
                Frame::Rotating => u * v.conj(),
                Frame::Lab => u,
            };
            let (yp, y0, ym) = (y[3 * l], y[3 * l + 1], y[3 * l + 2]);
            let mut dp = two_ij * ul.conj() * y0;
            let mut d0 = iq * y0;
            if !self.frozen_pump {
                d0 += two_ij * (ul.conj() * ym + ul * yp);
            }
            let mut dm = two_ij * ul * y0;
            if let Frame::Lab = self.frame {
                let grad = Complex64::new(0.0, l as f64 * self.omega_b);
                dp -= grad * yp;
                dm += grad * ym;
            } else {
                v *= step;
            }
            out[3 * l] = dp;
            out[3 * l + 1] = d0;
            out[3 * l + 2] = dm;
        }
    }

    /// Exact diagonal evolution over dt where the drive is off.
    fn free_evolve(&self, y: &mut [Complex64], dt: f64) {
        let ph0 = Complex64::from_polar(1.0, self.q * dt);
        for l in 0..self.m {
            y[3 * l + 1] *= ph0;
            if let Frame::Lab = self.frame {
                let g = Complex64::from_polar(1.0, l as f64 * self.omega_b * dt);
                y[3 * l] *= g.conj();
                y[3 * l + 2] *= g;
            }
        }
    }

    /// Fixed-step RK4 over [t0, t0+span] with constant drive intensity j.
    fn rk4(&self, y: &mut Vec<Complex64>, t0: f64, span: f64, j: f64, steps: usize) {
        let n = y.len();
        let h = span / steps as f64;
        let mut k1 = vec![Complex64::ZERO; n];
        let mut k2 = vec![Complex64::ZERO; n];
        let mut k3 = vec![Complex64::ZERO; n];
        let mut k4 = vec![Complex64::ZERO; n];
        let mut tmp = vec![Complex64::ZERO; n];
        let mut t = t0;
        for _ in 0..steps {
            self.deriv(t, j, y, &mut k1);
            for i in 0..n {
                tmp[i] = y[i] + 0.5 * h * k1[i];
            }
            self.deriv(t + 0.5 * h, j, &tmp, &mut k2);
            for i in 0..n {
                tmp[i] = y[i] + 0.5 * h * k2[i];
            }
            self.deriv(t + 0.5 * h, j, &tmp, &mut k3);
            for i in 0..n {
                tmp[i] = y[i] + h * k3[i];
            }
            self.deriv(t + h, j, &tmp, &mut k4);
            for i in 0..n {
                y[i] += h / 6.0 * (k1[i] + 2.0 * (k2[i] + k3[i]) + k4[i]);
            }
            t += h;
        }
    }

    /// Adaptive Dormand–Prince RK5(4) over [t0, t1] for a continuous drive,
    /// evaluating the envelope at every stage.
    fn dormand_prince(
        &self,
        y: &mut Vec<Complex64>,
        waveform: &DriveWaveform,
        t0: f64,
        t1: f64,
        rtol: f64,
        scale: f64,
    ) -> Result<()> {
        const A: [[f64; 6]; 6] = [
            [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
            [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
            [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
            [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
            [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
        ];
        const B5: [f64; 7] = [
            35.0 / 384.0,
            0.0,
            500.0 / 1113.0,
            125.0 / 192.0,
            -2187.0 / 6784.0,
            11.0 / 84.0,
            0.0,
        ];
        const B4: [f64; 7] = [
            5179.0 / 57600.0,
            0.0,
            7571.0 / 16695.0,
            393.0 / 640.0,
            -92097.0 / 339200.0,
            187.0 / 2100.0,
            1.0 / 40.0,
        ];
        const C: [f64; 6] = [1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];

        let n = y.len();
        let mut k = vec![vec![Complex64::ZERO; n]; 7];
        let mut tmp = vec![Complex64::ZERO; n];
        let tau = 2.0 * std::f64::consts::PI / self.omega_b;
        let mut t = t0;
        let mut h = (tau / 200.0).min(t1 - t0);
        let mut steps = 0usize;
        while t < t1 {
            if steps > 50_000_000 {
                return Err(Error::domain("adaptive integrator exceeded step budget"));
            }
            steps += 1;
            h = h.min(t1 - t);
            self.deriv(t, waveform.envelope(t), y, &mut k[0]);
            for s in 0..6 {
                for i in 0..n {
                    let mut acc = Complex64::ZERO;
                    for (j, row) in A[s].iter().enumerate().take(s + 1) {
                        acc += *row * k[j][i];
                    }
                    tmp[i] = y[i] + h * acc;
                }
                let ts = t + C[s] * h;
                self.deriv(ts, waveform.envelope(ts), &tmp, &mut k[s + 1]);
            }
            // Embedded error estimate on the 4th/5th-order difference.
            let mut err = 0.0;
            for i in 0..n {
                let mut e = Complex64::ZERO;
                for s in 0..7 {
                    e += (B5[s] - B4[s]) * k[s][i];
                }
                let sc = rtol * (y[i].norm() + scale);
                let r = h * e.norm() / sc;
                err += r * r;
            }
            let err = (err / n as f64).sqrt();
            if err <= 1.0 {
                for i in 0..n {
                    let mut acc = Complex64::ZERO;
                    for s in 0..7 {
                        acc += B5[s] * k[s][i];
                    }
                    y[i] += h * acc;
                }
                t += h;
            }
            let factor = if err > 0.0 {
                (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
            } else {
                5.0
            };
            h *= factor;
        }
        Ok(())
    }
}

/// Advance a trajectory by an integer number of Bloch periods.
///
/// Pulsed drives alternate exact diagonal free evolution with fixed-step
/// RK4 inside each rectangular pulse window; continuous drives use the
/// adaptive (or fixed-step) integrator. Errors if the total norm drifts
/// beyond tolerance.
pub fn evolve(
    mut state: TrajectoryState,
    waveform: &DriveWaveform,
    config: &LatticeConfig,
    periods: u32,
    frame: Frame,
    opts: &EvolveOptions,
) -> Result<TrajectoryState> {
    if state.zeta.len() != 3 * config.m {
        return Err(Error::domain(format!(
            "state has {} sites but config has {}",
            state.sites(),
            config.m
        )));
    }
    if (waveform.omega_b - config.omega_b).abs() > 1e-9 * config.omega_b {
        return Err(Error::domain("waveform and lattice disagree on omega_b"));
    }
    let tau = config.tau_b();
    let t_end = state.t + periods as f64 * tau;
    if periods == 0 {
        return Ok(state);
    }
    let engine = Engine {
        m: config.m,
        q: config.q,
        omega_b: config.omega_b,
        frame,
        frozen_pump: opts.frozen_pump,
    };
    let norm0 = state.total_norm();

    match &waveform.pulses {
        Some(train) => {
            let substeps = opts.substeps_per_pulse.max(1);
            let spacing = tau / train.weights.len() as f64;
            let mut t = state.t;
            for (start, end, weight) in waveform.pulse_windows(state.t, periods as usize) {
                // Ideal-kick mode: concentrate the same integral into a
                // window 100x narrower at the nominal pulse time (clipped
                // windows collapse onto their boundary edge).
                let (start, end) = if train.delta_mode {
                    let nominal = ((0.5 * (start + end)) / spacing).round() * spacing;
                    let len = 0.01 * (end - start);
                    if nominal <= start {
                        (start, start + len)
                    } else if nominal >= end {
                        (end - len, end)
                    } else {
                        (nominal - len / 2.0, nominal + len / 2.0)
                    }
                } else {
                    (start, end)
                };
                if weight == 0.0 {
                    continue;
                }
                engine.free_evolve(&mut state.zeta, start - t);
                let height = weight * spacing / (end - start);
                engine.rk4(&mut state.zeta, start, end - start, height, substeps);
                t = end;
            }
            engine.free_evolve(&mut state.zeta, t_end - t);
        }
        None => match opts.fixed_steps_per_period {
            Some(steps) => {
                // Fixed-step RK4 with the envelope sampled at stage times.
                let steps = steps.max(1) * periods as usize;
                let h = (t_end - state.t) / steps as f64;
                let n = state.zeta.len();
                let mut k1 = vec![Complex64::ZERO; n];
                let mut k2 = vec![Complex64::ZERO; n];
                let mut k3 = vec![Complex64::ZERO; n];
                let mut k4 = vec![Complex64::ZERO; n];
                let mut tmp = vec![Complex64::ZERO; n];
                let mut t = state.t;
                for _ in 0..steps {
                    let y = &mut state.zeta;
                    engine.deriv(t, waveform.envelope(t), y, &mut k1);
                    for i in 0..n {
                        tmp[i] = y[i] + 0.5 * h * k1[i];
                    }
                    let tm = t + 0.5 * h;
                    engine.deriv(tm, waveform.envelope(tm), &tmp, &mut k2);
                    for i in 0..n {
                        tmp[i] = y[i] + 0.5 * h * k2[i];
                    }
                    engine.deriv(tm, waveform.envelope(tm), &tmp, &mut k3);
                    for i in 0..n {
                        tmp[i] = y[i] + h * k3[i];
                    }
                    engine.deriv(t + h, waveform.envelope(t + h), &tmp, &mut k4);
                    for i in 0..n {
                        y[i] += h / 6.0 * (k1[i] + 2.0 * (k2[i] + k3[i]) + k4[i]);
                    }
                    t += h;
                }
            }
            None if waveform.terms.is_empty() && waveform.dc_offset == 0.0 => {
                // Silent drive: the evolution is exactly diagonal.
                engine.free_evolve(&mut state.zeta, t_end - state.t);
            }
            None => {
                let scale = config.n.sqrt();
                engine.dormand_prince(
                    &mut state.zeta,
                    waveform,
                    state.t,
                    t_end,
                    opts.rtol,
                    scale,
                )?;
            }
        },
    }
    state.t = t_end;

    if !opts.frozen_pump {
        let drift = (state.total_norm() - norm0).abs() / norm0;
        if drift > opts.max_norm_drift {
            return Err(Error::Integration { drift });
        }
    }
    Ok(state)
}

/// Nearest-neighbor signal spillover: x′_i = (1−2ε)x_i + ε(x_{i−1} + x_{i+1}),
/// wrapping on the ring; edge sites of an open chain leak one-sided without
/// renormalization.
pub fn apply_crosstalk(values: &[f64], epsilon: f64, periodic: bool) -> Vec<f64> {
    if epsilon == 0.0 {
        return values.to_vec();
    }
    let m = values.len();
    (0..m)
        .map(|i| {
            let mut v = (1.0 - 2.0 * epsilon) * values[i];
            if periodic {
                v += epsilon * (values[(i + m - 1) % m] + values[(i + 1) % m]);
            } else {
                if i > 0 {
                    v += epsilon * values[i - 1];
                }
                if i + 1 < m {
                    v += epsilon * values[i + 1];
                }
            }
            v
        })
        .collect()
}

/// Read out one realization: populations from |ζ|², transverse spin with
/// Larmor-jitter phases on ζ_±, crosstalk on the population channels.
pub fn measure(
    state: &TrajectoryState,
    config: &LatticeConfig,
    noise: &NoiseSpec,
    rng: &mut impl Rng,
) -> EnsembleRecord {
    let m = state.sites();
    let global: f64 = rng.sample::<f64, _>(StandardNormal) * noise.larmor_jitter_sigma;
    let site_offsets: Vec<f64> = (0..m)
        .map(|_| rng.sample::<f64, _>(StandardNormal) * noise.larmor_site_sigma)
        .collect();

    let mut n_plus = Vec::with_capacity(m);
    let mut n_zero = Vec::with_capacity(m);
    let mut n_minus = Vec::with_capacity(m);
    let mut fx = Vec::with_capacity(m);
    for l in 0..m {
        let (zp, z0, zm) = (state.zeta[3 * l], state.zeta[3 * l + 1], state.zeta[3 * l + 2]);
        n_plus.push(zp.norm_sqr());
        n_zero.push(z0.norm_sqr());
        n_minus.push(zm.norm_sqr());
        // Frequency offset δω accumulated over the hold time appears as a
        // phase e^{∓iδωt} on ζ_± at readout.
        let phase = Complex64::from_polar(1.0, (global + site_offsets[l]) * state.t);
        let zp = zp * phase.conj();
        let zm = zm * phase;
        fx.push(std::f64::consts::SQRT_2 * (zp.conj() * z0 + z0.conj() * zm).re);
    }
    let eps = noise.crosstalk_epsilon;
    EnsembleRecord {
        realization: 0,
        seed: 0,
        periods: state.t / config.tau_b(),
        n_plus: apply_crosstalk(&n_plus, eps, config.periodic),
        n_zero: apply_crosstalk(&n_zero, eps, config.periodic),
        n_minus: apply_crosstalk(&n_minus, eps, config.periodic),
        fx,
    }
}

/// Natural start time of an observation window under this drive. Pulsed
/// evolutions open half a pulse slot before the first pulse so that every
/// pulse lies whole inside each period of the window; a window cutting a
/// pulse in half would give the momentum mode addressed by that pulse an
/// anomalous (roughly halved) per-period gain. Continuous drives start at
/// t = 0.
pub fn drive_start_time(waveform: &DriveWaveform) -> f64 {
    match &waveform.pulses {
        Some(train) => -0.5 * waveform.tau_b() / train.weights.len() as f64,
        None => 0.0,
    }
}

fn trajectory_rng(seed: u64, realization: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(realization as u64 + 1);
    rng
}

/// Run an ensemble to T Bloch periods, measuring once at the end. Each
/// realization is sample → evolve → measure with an independent RNG stream
/// derived from (seed, realization), so results are reproducible and
/// independent of scheduling.
#[allow(clippy::too_many_arguments)]
pub fn run_ensemble(
    waveform: &DriveWaveform,
    config: &LatticeConfig,
    noise: &NoiseSpec,
    trajectories: usize,
    periods: u32,
    seed: u64,
    frame: Frame,
    opts: &EvolveOptions,
) -> Result<Vec<EnsembleRecord>> {
    if trajectories == 0 {
        return Err(Error::domain("ensemble needs at least one trajectory"));
    }
    noise.validate()?;
    (0..trajectories)
        .into_par_iter()
        .map(|j| {
            let mut rng = trajectory_rng(seed, j);
            let t0 = drive_start_time(waveform);
            let mut state = sample_initial(config, &mut rng);
            state.t = t0;
            let mut state = evolve(state, waveform, config, periods, frame, opts)
                .map_err(|e| Error::Trajectory { index: j, source: Box::new(e) })?;
            // Measurement works with the elapsed hold time T·τ_B.
            state.t -= t0;
            let mut rec = measure(&state, config, noise, &mut rng);
            rec.realization = j;
            rec.seed = seed;
            Ok(rec)
        })
        .collect()
}

/// Run an ensemble with a measurement snapshot after every Bloch period.
/// Element p-1 of the result holds the records at T = p. With periods = 0,
/// a single snapshot of the initial samples is returned.
#[allow(clippy::too_many_arguments)]
pub fn run_ensemble_series(
    waveform: &DriveWaveform,
    config: &LatticeConfig,
    noise: &NoiseSpec,
    trajectories: usize,
    periods: u32,
    seed: u64,
    frame: Frame,
    opts: &EvolveOptions,
) -> Result<Vec<Vec<EnsembleRecord>>> {
    if trajectories == 0 {
        return Err(Error::domain("ensemble needs at least one trajectory"));
    }
    noise.validate()?;
    let per_trajectory: Vec<Vec<EnsembleRecord>> = (0..trajectories)
        .into_par_iter()
        .map(|j| {
            let mut rng = trajectory_rng(seed, j);
            let t0 = drive_start_time(waveform);
            let mut state = sample_initial(config, &mut rng);
            state.t = t0;
            let mut records = Vec::new();
            let snapshot = |state: &TrajectoryState, rng: &mut ChaCha8Rng| {
                // Measurement works with the elapsed hold time.
                let mut probe = state.clone();
                probe.t -= t0;
                let mut rec = measure(&probe, config, noise, rng);
                rec.realization = j;
                rec.seed = seed;
                rec
            };
            if periods == 0 {
                records.push(snapshot(&state, &mut rng));
            }
            for _ in 0..periods {
                state = evolve(state, waveform, config, 1, frame, opts)
                    .map_err(|e| Error::Trajectory { index: j, source: Box::new(e) })?;
                records.push(snapshot(&state, &mut rng));
            }
            Ok(records)
        })
        .collect::<Result<_>>()?;
    // Transpose to period-major order.
    let snapshots = per_trajectory[0].len();
    let mut out = vec![Vec::with_capacity(trajectories); snapshots];
    for records in per_trajectory {
        for (p, rec) in records.into_iter().enumerate() {
            out[p].push(rec);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::CouplingProfile;
    use crate::waveform::{synthesize_pulsed, WaveformKind};
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn silent_waveform(omega_b: f64) -> DriveWaveform {
        DriveWaveform {
            kind: WaveformKind::Continuous,
            terms: Vec::new(),
            dc_offset: 0.0,
            omega_b,
            pulses: None,
        }
    }

    /// M=8 ring with a nearest-neighbor ferromagnetic drive scaled so the
    /// per-period kick at k = 2π/8 is χτ = −1; qτ_B = π/4.
    fn nn_setup() -> (LatticeConfig, DriveWaveform) {
        let m = 8usize;
        let n = 1e4;
        let omega_b = 2.0 * PI * 1530.0;
        let tau = 2.0 * PI / omega_b;
        let q = (PI / 4.0) / tau;
        let config = LatticeConfig::new(m, n, omega_b, q, true).unwrap();
        let j = 1.0 / (4.0 * n * tau * (1.0 + (2.0 * PI / m as f64).cos()));
        let mut p = CouplingProfile::new(m, "nn");
        p.set_real(1, j).unwrap();
        let w = synthesize_pulsed(&p, &config).unwrap();
        (config, w)
    }

    #[test]
    fn initial_sample_statistics() {
        let config = LatticeConfig::new(4, 1e4, 2.0 * PI * 1530.0, 0.0, true).unwrap();
        let mut rng = trajectory_rng(3, 0);
        let samples = 20_000usize;
        let (mut var_fx, mut mean_np) = (0.0, 0.0);
        for _ in 0..samples {
            let s = sample_initial(&config, &mut rng);
            var_fx += s.transverse_spin(0).powi(2);
            mean_np += s.zeta[0].norm_sqr();
        }
        var_fx /= samples as f64;
        mean_np /= samples as f64;
        // Var(Fx) = n, SE ≈ n√(2/samples) ≈ 0.01n.
        assert!((var_fx / config.n - 1.0).abs() < 0.04, "Var(Fx)/n = {}", var_fx / config.n);
        // ⟨n₊⟩ = 1/2 from the vacuum half-quantum.
        assert!((mean_np - 0.5).abs() < 0.02, "mean n+ = {mean_np}");
    }

    #[test]
    fn sampling_is_deterministic() {
        let config = LatticeConfig::new(6, 100.0, 1.0, 0.0, true).unwrap();
        let a = sample_initial(&config, &mut trajectory_rng(9, 4));
        let b = sample_initial(&config, &mut trajectory_rng(9, 4));
        assert_eq!(a, b);
        let c = sample_initial(&config, &mut trajectory_rng(9, 5));
        assert_ne!(a, c);
    }

    #[test]
    fn silent_drive_rotates_only_the_pump_phase() {
        // Ĵ = 0: ζ₀(t) = e^{iqt} ζ₀(0), ζ_± unchanged (rotating frame),
        // all populations constant.
        let q = 2.0 * PI * 290.0;
        let config = LatticeConfig::new(4, 1e4, 2.0 * PI * 1530.0, q, true).unwrap();
        let w = silent_waveform(config.omega_b);
        let start = sample_initial(&config, &mut trajectory_rng(1, 0));
        let end = evolve(start.clone(), &w, &config, 2, Frame::Rotating, &EvolveOptions::default())
            .unwrap();
        let phase = Complex64::from_polar(1.0, q * 2.0 * config.tau_b());
        for l in 0..4 {
            assert!((end.zeta[3 * l] - start.zeta[3 * l]).norm() < 1e-9);
            assert!((end.zeta[3 * l + 2] - start.zeta[3 * l + 2]).norm() < 1e-9);
            assert!((end.zeta[3 * l + 1] - phase * start.zeta[3 * l + 1]).norm() < 1e-9);
        }
    }

    #[test]
    fn conservation_laws_continuous_drive() {
        let m = 8usize;
        let n = 1e4;
        let omega_b = 2.0 * PI * 1530.0;
        let tau = 2.0 * PI / omega_b;
        let config = LatticeConfig::new(m, n, omega_b, (PI / 4.0) / tau, false).unwrap();
        let mut p = CouplingProfile::new(m, "nn");
        p.set_real(1, 1.0 / (8.0 * n * tau)).unwrap();
        p.apply_onsite_rule();
        let w = crate::waveform::synthesize_continuous(&p, &config).unwrap();
        let opts = EvolveOptions { rtol: 1e-11, ..Default::default() };
        let start = sample_initial(&config, &mut trajectory_rng(2, 0));
        let norm0 = start.total_norm();
        let fz0 = start.total_fz();
        let end = evolve(start, &w, &config, 2, Frame::Rotating, &opts).unwrap();
        let scale = n * m as f64;
        assert!((end.total_norm() - norm0).abs() / norm0 < 1e-8);
        assert!((end.total_fz() - fz0).abs() / scale < 1e-8);
    }

    /// Exact linearized prediction of E|F̃ᵡ_k|²/n after T periods of pulsed
    /// drive. The pulse at grid time m·τ_B/M addresses momentum mode m, so
    /// within the observation window (which opens half a slot before the
    /// first pulse) mode m is kicked once per period at the time fraction
    /// tf = (m + 1/2)/M by K = I + iχτ[[-1,-1],[1,1]] on (a_k, b†_-k),
    /// with free rotation R(φ) = diag(e^{-iφ}, e^{iφ}) between kicks.
    fn exact_structure_factor(chit: &[f64], qt: f64, t: u32) -> Vec<f64> {
        type M2 = [[Complex64; 2]; 2];
        let matmul = |a: &M2, b: &M2| -> M2 {
            let mut c = [[Complex64::ZERO; 2]; 2];
            for i in 0..2 {
                for j in 0..2 {
                    c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
                }
            }
            c
        };
        let rot = |phi: f64| -> M2 {
            [
                [Complex64::from_polar(1.0, -phi), Complex64::ZERO],
                [Complex64::ZERO, Complex64::from_polar(1.0, phi)],
            ]
        };
        let m = chit.len();
        let kick_matrix = |ct: f64| -> M2 {
            let i = Complex64::I;
            [
                [Complex64::ONE - i * ct, -i * ct],
                [i * ct, Complex64::ONE + i * ct],
            ]
        };
        let energy = |ct: f64, kick_index: usize| -> f64 {
            let kick = kick_matrix(ct);
            let tfrac = (kick_index as f64 + 0.5) / m as f64;
            let mut p = matmul(&rot(qt * (1.0 - tfrac)), &kick);
            for _ in 1..t {
                p = matmul(&p, &matmul(&rot(qt), &kick));
            }
            let p = matmul(&p, &rot(qt * tfrac));
            let row = [p[0][0] + p[1][0], p[0][1] + p[1][1]];
            0.5 * (row[0].norm_sqr() + row[1].norm_sqr())
        };
        (0..m)
            .map(|idx| {
                let mirror = (m - idx) % m;
                if mirror == idx {
                    energy(chit[idx], idx)
                } else {
                    0.5 * (energy(chit[idx], idx) + energy(chit[idx], mirror))
                }
            })
            .collect()
    }

    fn ensemble_structure_factor(records: &[EnsembleRecord]) -> Vec<f64> {
        let m = records[0].fx.len();
        let mut s = vec![0.0; m];
        for rec in records {
            for (k, sk) in s.iter_mut().enumerate() {
                let mut acc = Complex64::ZERO;
                for (l, &f) in rec.fx.iter().enumerate() {
                    acc += Complex64::from_polar(f, 2.0 * PI * (k * l) as f64 / m as f64);
                }
                *sk += acc.norm_sqr() / m as f64;
            }
        }
        for sk in &mut s {
            *sk /= records.len() as f64;
        }
        s
    }

    #[test]
    fn pulsed_structure_factor_matches_exact_linear_theory() {
        let (config, w) = nn_setup();
        let records = run_ensemble(
            &w,
            &config,
            &NoiseSpec::none(),
            4000,
            1,
            11,
            Frame::Rotating,
            &EvolveOptions::default(),
        )
        .unwrap();
        let s = ensemble_structure_factor(&records);

        let d = crate::waveform::dispersion(&w, &config);
        let tau = config.tau_b();
        let chit: Vec<f64> = d.chi.iter().map(|&c| c * tau).collect();
        let pred = exact_structure_factor(&chit, config.q * tau, 1);
        for (k, (&sim, &exact)) in s.iter().zip(&pred).enumerate() {
            let ratio = sim / (config.n * exact);
            assert!(
                (ratio - 1.0).abs() < 0.10,
                "mode {k}: sim {sim:.1} vs exact {:.1} (ratio {ratio:.3})",
                config.n * exact
            );
        }
        // Growth is real: the strongest mode sits well above vacuum.
        assert!(s[0] > 3.0 * config.n);
    }

    #[test]
    fn frames_agree_at_integer_periods() {
        let (config, w) = nn_setup();
        let opts = EvolveOptions::default();
        let mut rng = trajectory_rng(5, 1);
        let start = sample_initial(&config, &mut rng);
        let rot = evolve(start.clone(), &w, &config, 2, Frame::Rotating, &opts).unwrap();
        let lab = evolve(start, &w, &config, 2, Frame::Lab, &opts).unwrap();
        let scale = config.n.sqrt();
        for (a, b) in rot.zeta.iter().zip(&lab.zeta) {
            assert!((a - b).norm() / scale < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn delta_mode_approximates_rectangles() {
        let (config, w) = nn_setup();
        let mut wd = w.clone();
        wd.pulses.as_mut().unwrap().delta_mode = true;
        let opts = EvolveOptions::default();
        let a = run_ensemble(&w, &config, &NoiseSpec::none(), 400, 1, 3, Frame::Rotating, &opts)
            .unwrap();
        let b = run_ensemble(&wd, &config, &NoiseSpec::none(), 400, 1, 3, Frame::Rotating, &opts)
            .unwrap();
        let sa = ensemble_structure_factor(&a);
        let sb = ensemble_structure_factor(&b);
        for (x, y) in sa.iter().zip(&sb) {
            assert_relative_eq!(x, y, max_relative = 0.05);
        }
    }

    #[test]
    fn pair_symmetry_and_determinism() {
        let (config, w) = nn_setup();
        let opts = EvolveOptions::default();
        let run = || {
            run_ensemble(&w, &config, &NoiseSpec::none(), 300, 1, 17, Frame::Rotating, &opts)
                .unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a, b);
        let tot_plus: f64 = a.iter().flat_map(|r| &r.n_plus).sum();
        let tot_minus: f64 = a.iter().flat_map(|r| &r.n_minus).sum();
        // Pair creation: ensemble means of Σn₊ and Σn₋ agree within a few
        // percent statistically.
        assert!(
            (tot_plus - tot_minus).abs() / tot_plus < 0.05,
            "n+ {tot_plus:.1} vs n- {tot_minus:.1}"
        );
        // Composition contract: trajectory j of the ensemble equals
        // sample → evolve → measure with the derived stream.
        let mut rng = trajectory_rng(17, 4);
        let t0 = drive_start_time(&w);
        let mut state = sample_initial(&config, &mut rng);
        state.t = t0;
        let mut state = evolve(state, &w, &config, 1, Frame::Rotating, &opts).unwrap();
        state.t -= t0;
        let rec = measure(&state, &config, &NoiseSpec::none(), &mut rng);
        assert_eq!(rec.fx, a[4].fx);
        assert_eq!(rec.n_plus, a[4].n_plus);
    }

    #[test]
    fn frozen_pump_keeps_pump_population() {
        let (config, w) = nn_setup();
        let opts = EvolveOptions { frozen_pump: true, ..Default::default() };
        let start = sample_initial(&config, &mut trajectory_rng(2, 0));
        let pump0: Vec<f64> = (0..config.m).map(|l| start.zeta[3 * l + 1].norm_sqr()).collect();
        let end = evolve(start, &w, &config, 2, Frame::Rotating, &opts).unwrap();
        for l in 0..config.m {
            assert_relative_eq!(end.zeta[3 * l + 1].norm_sqr(), pump0[l], max_relative = 1e-9);
        }
        // Sidemodes still grow against the frozen pump.
        let grown: f64 = (0..config.m).map(|l| end.zeta[3 * l].norm_sqr()).sum();
        assert!(grown > config.m as f64);
    }

    #[test]
    fn site_jitter_decorrelates_transverse_spin() {
        let (config, w) = nn_setup();
        let noisy = NoiseSpec {
            larmor_jitter_sigma: 0.0,
            larmor_site_sigma: 400.0 / config.tau_b(), // hundreds of radians over the hold
            crosstalk_epsilon: 0.0,
        };
        let opts = EvolveOptions::default();
        let clean =
            run_ensemble(&w, &config, &NoiseSpec::none(), 800, 1, 23, Frame::Rotating, &opts)
                .unwrap();
        let jittered = run_ensemble(&w, &config, &noisy, 800, 1, 23, Frame::Rotating, &opts)
            .unwrap();
        let cross = |recs: &[EnsembleRecord], i: usize, j: usize| {
            let mi: f64 = recs.iter().map(|r| r.fx[i]).sum::<f64>() / recs.len() as f64;
            let mj: f64 = recs.iter().map(|r| r.fx[j]).sum::<f64>() / recs.len() as f64;
            let cov: f64 = recs.iter().map(|r| (r.fx[i] - mi) * (r.fx[j] - mj)).sum::<f64>()
                / recs.len() as f64;
            let vi: f64 = recs.iter().map(|r| (r.fx[i] - mi).powi(2)).sum::<f64>()
                / recs.len() as f64;
            let vj: f64 = recs.iter().map(|r| (r.fx[j] - mj).powi(2)).sum::<f64>()
                / recs.len() as f64;
            cov / (vi * vj).sqrt()
        };
        let c_clean = cross(&clean, 0, 1);
        let c_jit = cross(&jittered, 0, 1);
        assert!(c_clean.abs() > 0.2, "clean NN correlation should be strong, got {c_clean:.3}");
        assert!(c_jit.abs() < 0.12, "jitter should wash out correlations, got {c_jit:.3}");
        // Populations are phase-insensitive: identical with and without jitter.
        for (a, b) in clean.iter().zip(&jittered) {
            assert_eq!(a.n_plus, b.n_plus);
            assert_eq!(a.n_minus, b.n_minus);
        }
    }

    #[test]
    fn crosstalk_spike_and_conservation() {
        // A unit population spike leaks 9% to each neighbor.
        let spread = apply_crosstalk(&[0.0, 0.0, 1.0, 0.0, 0.0], 0.09, false);
        assert_relative_eq!(spread[2], 0.82);
        assert_relative_eq!(spread[1], 0.09);
        assert_relative_eq!(spread[3], 0.09);
        assert_relative_eq!(spread[0], 0.0);
        // Ring crosstalk conserves the total signal; open edges lose it.
        let vals = [0.3, 1.2, 0.0, 0.7, 2.1, 0.4];
        let total: f64 = vals.iter().sum();
        let ring: f64 = apply_crosstalk(&vals, 0.12, true).iter().sum();
        assert_relative_eq!(ring, total, max_relative = 1e-12);
        let open: f64 = apply_crosstalk(&vals, 0.12, false).iter().sum();
        assert!(open < total);
    }

    #[test]
    fn noise_spec_validation() {
        assert!(NoiseSpec::none().validate().is_ok());
        let bad = NoiseSpec { crosstalk_epsilon: 0.5, ..NoiseSpec::none() };
        assert!(bad.validate().is_err());
        let bad = NoiseSpec { larmor_jitter_sigma: -1.0, ..NoiseSpec::none() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn series_snapshots_grow_monotonically() {
        let (config, w) = nn_setup();
        let series = run_ensemble_series(
            &w,
            &config,
            &NoiseSpec::none(),
            200,
            2,
            29,
            Frame::Rotating,
            &EvolveOptions::default(),
        )
        .unwrap();
        assert_eq!(series.len(), 2);
        let converted = |recs: &[EnsembleRecord]| -> f64 {
            recs.iter().map(|r| r.converted_fraction(config.n)).sum::<f64>() / recs.len() as f64
        };
        let c1 = converted(&series[0]);
        let c2 = converted(&series[1]);
        assert!(c1 > 0.0 && c2 > c1, "converted fractions {c1:.2e}, {c2:.2e}");
        assert_relative_eq!(series[1][0].periods, 2.0, max_relative = 1e-12);
    }
}
