//! Virtual rig: a forced seventh-order Duffing-like oscillator with additive
//! band-limited process noise, integrated by fixed-step RK4.
//!
//! ```text
//! x'' + b x' + wn^2 x + mu x^3 + nu x^5 + rho x^7 = F(t) + w(t)
//! ```
//!
//! The applied force has a smooth part evaluated inside the integrator and a
//! sampled part held constant over each step (a digital controller). Noise is
//! a zero-order hold at its own sample rate, read at the start of each step.

pub mod noise;

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::analytic::TildeParams;
use crate::error::{invalid, Error, Result};
use crate::rk4;

pub use noise::{make_noise, make_noise_block, ButterworthLowpass, NoiseConfig};

/// Default force scale linking the base-acceleration channel to the forcing.
pub const DEFAULT_C_A_TRUE: f64 = 0.025;

/// Default bound on |x| before a run is declared diverged.
pub const DEFAULT_DIVERGENCE_BOUND: f64 = 25.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DuffingParams {
    pub omega_n: f64,
    pub b: f64,
    pub mu: f64,
    pub nu: f64,
    pub rho: f64,
}

impl DuffingParams {
    pub fn linear(omega_n: f64, b: f64) -> Self {
        Self {
            omega_n,
            b,
            mu: 0.0,
            nu: 0.0,
            rho: 0.0,
        }
    }

    /// Dimensional parameters from the normalized view; `zeta` is ignored.
    pub fn from_tilde(t: &TildeParams, omega_n: f64) -> Self {
        let w2 = omega_n * omega_n;
        Self {
            omega_n,
            b: t.b_t * omega_n,
            mu: t.mu_t * w2,
            nu: t.nu_t * w2,
            rho: t.rho_t * w2,
        }
    }

    /// Normalized view bound to the forcing frequency `omega`.
    pub fn tilde(&self, omega: f64) -> TildeParams {
        let w2 = self.omega_n * self.omega_n;
        TildeParams {
            mu_t: self.mu / w2,
            nu_t: self.nu / w2,
            rho_t: self.rho / w2,
            b_t: self.b / self.omega_n,
            zeta: omega / self.omega_n,
        }
    }

    pub fn f_n_hz(&self) -> f64 {
        self.omega_n / (2.0 * PI)
    }

    pub fn is_linear(&self) -> bool {
        self.mu == 0.0 && self.nu == 0.0 && self.rho == 0.0
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.omega_n > 0.0) || !self.omega_n.is_finite() {
            return invalid(format!("omega_n must be positive, got {}", self.omega_n));
        }
        if ![self.b, self.mu, self.nu, self.rho].iter().all(|v| v.is_finite()) {
            return invalid("model coefficients must be finite");
        }
        Ok(())
    }

    /// wn^2 x + mu x^3 + nu x^5 + rho x^7
    #[inline]
    pub fn restoring(&self, x: f64) -> f64 {
        let x2 = x * x;
        x * (self.omega_n * self.omega_n + x2 * (self.mu + x2 * (self.nu + x2 * self.rho)))
    }

    /// d(restoring)/dx
    #[inline]
    pub fn stiffness(&self, x: f64) -> f64 {
        let x2 = x * x;
        self.omega_n * self.omega_n + x2 * (3.0 * self.mu + x2 * (5.0 * self.nu + x2 * 7.0 * self.rho))
    }

    pub fn potential(&self, x: f64) -> f64 {
        let x2 = x * x;
        x2 * (0.5 * self.omega_n * self.omega_n + x2 * (0.25 * self.mu + x2 * (self.nu / 6.0 + x2 * self.rho / 8.0)))
    }

    pub fn energy(&self, x: f64, v: f64) -> f64 {
        0.5 * v * v + self.potential(x)
    }

    /// Linear amplitude response to a unit force at `omega`.
    pub fn linear_gain(&self, omega: f64) -> f64 {
        let w2 = self.omega_n * self.omega_n;
        1.0 / ((w2 - omega * omega).powi(2) + (self.b * omega).powi(2)).sqrt()
    }
}

/// Optional second-order low-pass between commanded and realized force.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShakerFilter {
    pub corner_hz: f64,
    pub damping: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantConfig {
    pub params: DuffingParams,
    pub c_a_true: f64,
    pub shaker: Option<ShakerFilter>,
    pub divergence_bound: f64,
}

impl PlantConfig {
    pub fn new(params: DuffingParams) -> Self {
        Self {
            params,
            c_a_true: DEFAULT_C_A_TRUE,
            shaker: None,
            divergence_bound: DEFAULT_DIVERGENCE_BOUND,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if !(self.c_a_true > 0.0) || !self.c_a_true.is_finite() {
            return invalid(format!("c_a_true must be positive, got {}", self.c_a_true));
        }
        if !(self.divergence_bound > 0.0) {
            return invalid("divergence bound must be positive");
        }
        if let Some(s) = self.shaker {
            if !(s.corner_hz > 0.0) || !(s.damping > 0.0) {
                return invalid("shaker corner and damping must be positive");
            }
        }
        Ok(())
    }

    /// Base acceleration corresponding to a force value.
    pub fn base_accel(&self, force: f64) -> f64 {
        force / (self.c_a_true * self.params.omega_n * self.params.omega_n)
    }

    /// Largest admissible step: fifty steps per natural period.
    pub fn max_dt(&self) -> f64 {
        1.0 / (50.0 * self.params.f_n_hz())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PlantState {
    pub x: f64,
    pub v: f64,
    pub t: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SimulationRecord {
    pub dt: f64,
    pub times: Vec<f64>,
    pub x: Vec<f64>,
    pub forcing: Vec<f64>,
    pub base_accel: Vec<f64>,
    pub noise: Vec<f64>,
}

impl SimulationRecord {
    fn with_capacity(dt: f64, n: usize) -> Self {
        Self {
            dt,
            times: Vec::with_capacity(n),
            x: Vec::with_capacity(n),
            forcing: Vec::with_capacity(n),
            base_accel: Vec::with_capacity(n),
            noise: Vec::with_capacity(n),
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Drops the first `n` samples.
    pub fn skip(&self, n: usize) -> Self {
        let n = n.min(self.len());
        Self {
            dt: self.dt,
            times: self.times[n..].to_vec(),
            x: self.x[n..].to_vec(),
            forcing: self.forcing[n..].to_vec(),
            base_accel: self.base_accel[n..].to_vec(),
            noise: self.noise[n..].to_vec(),
        }
    }
}

/// Force applied to the plant, excluding process noise.
pub trait Forcing {
    /// Sampled part, computed at the start of each step and held over it.
    fn sample(&mut self, _t: f64, _x: f64, _x_prev: f64, _dt: f64) -> f64 {
        0.0
    }

    /// Continuous part, evaluated at every integrator stage.
    fn smooth(&self, _t: f64) -> f64 {
        0.0
    }
}

pub struct NoForcing;

impl Forcing for NoForcing {}

/// `a cos(omega t) + b sin(omega t)`
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HarmonicForcing {
    pub a: f64,
    pub b: f64,
    pub omega: f64,
}

impl HarmonicForcing {
    pub fn cosine(amplitude: f64, omega: f64) -> Self {
        Self { a: amplitude, b: 0.0, omega }
    }
}

impl Forcing for HarmonicForcing {
    #[inline]
    fn smooth(&self, t: f64) -> f64 {
        let (s, c) = (self.omega * t).sin_cos();
        self.a * c + self.b * s
    }
}

/// Harmonic forcing whose phase stays continuous when the frequency changes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChirpForcing {
    pub amplitude: f64,
    pub omega: f64,
    /// Phase at `t0`.
    pub phase0: f64,
    pub t0: f64,
}

impl ChirpForcing {
    pub fn phase_at(&self, t: f64) -> f64 {
        self.phase0 + self.omega * (t - self.t0)
    }

    /// Switches frequency at time `t` without a phase jump.
    pub fn retune(&mut self, omega: f64, t: f64) {
        self.phase0 = self.phase_at(t).rem_euclid(2.0 * PI);
        self.t0 = t;
        self.omega = omega;
    }
}

impl Forcing for ChirpForcing {
    #[inline]
    fn smooth(&self, t: f64) -> f64 {
        self.amplitude * self.phase_at(t).cos()
    }
}

/// Noise samples produced lazily in independent blocks.
#[derive(Clone, Debug)]
struct NoiseStream {
    config: NoiseConfig,
    block_len: usize,
    block_index: Option<u64>,
    block: Vec<f64>,
}

impl NoiseStream {
    fn new(config: NoiseConfig, block_len: usize) -> Self {
        Self {
            config,
            block_len: block_len.max(1),
            block_index: None,
            block: Vec::new(),
        }
    }

    fn at(&mut self, index: u64) -> Result<f64> {
        if self.config.level == 0.0 {
            return Ok(0.0);
        }
        let b = index / self.block_len as u64;
        if self.block_index != Some(b) {
            self.block = make_noise_block(&self.config, b, self.block_len)?;
            self.block_index = Some(b);
        }
        Ok(self.block[(index % self.block_len as u64) as usize])
    }
}

/// Default noise block length for long-running rigs [s].
pub const NOISE_BLOCK_SECONDS: f64 = 20.0;

/// Stateful rig that carries the plant state across consecutive runs.
#[derive(Clone, Debug)]
pub struct Rig {
    config: PlantConfig,
    noise: NoiseStream,
    dt: f64,
    t0: f64,
    step: u64,
    /// Noise sample index at `t0`.
    noise_base: u64,
    y: [f64; 4],
    x_prev: f64,
}

impl Rig {
    pub fn new(config: PlantConfig, noise: NoiseConfig, init: PlantState, dt: f64) -> Result<Self> {
        let block = (NOISE_BLOCK_SECONDS * noise.sample_rate_hz).ceil() as usize;
        Self::with_noise_block(config, noise, init, dt, block)
    }

    fn with_noise_block(config: PlantConfig, noise: NoiseConfig, init: PlantState, dt: f64, block: usize) -> Result<Self> {
        config.validate()?;
        noise.validate()?;
        if !(dt > 0.0) || !dt.is_finite() {
            return invalid(format!("dt must be positive, got {dt}"));
        }
        if dt > config.max_dt() * (1.0 + 1e-12) {
            return invalid(format!(
                "dt = {dt} exceeds 1/(50 f_n) = {}",
                config.max_dt()
            ));
        }
        if !(init.x.is_finite() && init.v.is_finite() && init.t.is_finite()) {
            return Err(Error::NonFinite("initial state".into()));
        }
        Ok(Self {
            config,
            noise: NoiseStream::new(noise, block),
            dt,
            t0: init.t,
            step: 0,
            noise_base: 0,
            y: [init.x, init.v, 0.0, 0.0],
            x_prev: init.x - init.v * dt,
        })
    }

    pub fn config(&self) -> &PlantConfig {
        &self.config
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn time(&self) -> f64 {
        self.t0 + self.step as f64 * self.dt
    }

    pub fn state(&self) -> PlantState {
        PlantState {
            x: self.y[0],
            v: self.y[1],
            t: self.time(),
        }
    }

    /// Replaces position and velocity, keeping time and noise position.
    pub fn set_state(&mut self, x: f64, v: f64) {
        self.y[0] = x;
        self.y[1] = v;
        self.x_prev = x - v * self.dt;
    }

    /// Changes the step size from now on, keeping state, clock and noise
    /// position.
    pub fn set_dt(&mut self, dt: f64) -> Result<()> {
        if !(dt > 0.0) || !dt.is_finite() || dt > self.config.max_dt() * (1.0 + 1e-12) {
            return invalid(format!("dt = {dt} must be positive and at most 1/(50 f_n)"));
        }
        let fs = self.noise.config.sample_rate_hz;
        self.noise_base += (self.step as f64 * self.dt * fs + 1e-9).floor() as u64;
        self.t0 = self.time();
        self.step = 0;
        self.dt = dt;
        self.x_prev = self.y[0] - self.y[1] * dt;
        Ok(())
    }

    /// Realized force of the shaker filter (equals the command when off).
    fn shaker_out(&self, command: f64) -> f64 {
        if self.config.shaker.is_some() {
            self.y[2]
        } else {
            command
        }
    }

    fn advance_inner(&mut self, forcing: &mut dyn Forcing, n_steps: usize, mut rec: Option<&mut SimulationRecord>) -> Result<()> {
        let p = self.config.params;
        let dt = self.dt;
        let fs = self.noise.config.sample_rate_hz;
        let shaker = self.config.shaker.map(|s| (2.0 * PI * s.corner_hz, s.damping));
        let bound = self.config.divergence_bound;
        for _ in 0..n_steps {
            let t = self.time();
            let rel = self.step as f64 * dt;
            let w = self.noise.at(self.noise_base + (rel * fs + 1e-9).floor() as u64)?;
            let held = forcing.sample(t, self.y[0], self.x_prev, dt);
            let command = held + forcing.smooth(t);
            let applied = self.shaker_out(command);
            if let Some(r) = rec.as_deref_mut() {
                r.times.push(t);
                r.x.push(self.y[0]);
                r.forcing.push(applied);
                r.base_accel.push(self.config.base_accel(applied));
                r.noise.push(w);
            }
            let f_ref = &*forcing;
            let rhs = |tt: f64, y: &[f64; 4]| {
                let u = held + f_ref.smooth(tt);
                let (force, ds, dsd) = match shaker {
                    Some((ws, zs)) => (y[2], y[3], ws * ws * (u - y[2]) - 2.0 * zs * ws * y[3]),
                    None => (u, 0.0, 0.0),
                };
                [y[1], force + w - p.b * y[1] - p.restoring(y[0]), ds, dsd]
            };
            self.x_prev = self.y[0];
            self.y = rk4::step(&rhs, t, &self.y, dt);
            self.step += 1;
            let x = self.y[0];
            if !x.is_finite() || !self.y[1].is_finite() || x.abs() > bound {
                return Err(Error::Diverged { t: self.time(), x });
            }
        }
        Ok(())
    }

    /// Runs `n_steps` steps without recording.
    pub fn advance(&mut self, forcing: &mut dyn Forcing, n_steps: usize) -> Result<()> {
        self.advance_inner(forcing, n_steps, None)
    }

    /// Runs `n_steps` steps, recording the state at the start of each step.
    pub fn run(&mut self, forcing: &mut dyn Forcing, n_steps: usize) -> Result<SimulationRecord> {
        let mut rec = SimulationRecord::with_capacity(self.dt, n_steps);
        self.advance_inner(forcing, n_steps, Some(&mut rec))?;
        Ok(rec)
    }
}

/// Integrates the plant from `init` for `duration`, recording every step.
pub fn simulate(
    config: &PlantConfig,
    forcing: &mut dyn Forcing,
    noise: &NoiseConfig,
    init: PlantState,
    duration: f64,
    dt: f64,
) -> Result<SimulationRecord> {
    if !(duration > 0.0) || !duration.is_finite() {
        return invalid(format!("duration must be positive, got {duration}"));
    }
    let n_steps = (duration / dt).round() as usize;
    let block = (duration * noise.sample_rate_hz).ceil() as usize + 1;
    let mut rig = Rig::with_noise_block(*config, *noise, init, dt, block)?;
    rig.run(forcing, n_steps)
}
