//! Open-loop stepped sweeps in frequency or forcing amplitude, jump
//! detection and linear modal estimation by the half-power method.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::plant::noise::NoiseConfig;
use crate::plant::{ChirpForcing, PlantConfig, PlantState, Rig};
use crate::signal::{self, wrap_phase};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Up,
    Down,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSettings {
    pub settle_periods: usize,
    pub avg_periods: usize,
    pub steps_per_period: usize,
    pub n_harm: usize,
    /// Jump when |dX| exceeds this multiple of the median |dX| of the sweep.
    pub jump_factor: f64,
    /// Settling from rest before the first point.
    pub initial_settle_periods: usize,
    /// Steady-state gate: when X over the two halves of the averaging
    /// window differs by more than this fraction, settle another block and
    /// measure again. Infinite disables the gate.
    pub steady_tol: f64,
    /// Cap on extra settle blocks per point.
    pub max_extra_settles: usize,
}

impl Default for SweepSettings {
    fn default() -> Self {
        Self {
            settle_periods: 50,
            avg_periods: 10,
            steps_per_period: 512,
            n_harm: signal::DEFAULT_N_HARM,
            jump_factor: 5.0,
            initial_settle_periods: 200,
            steady_tol: 0.005,
            max_extra_settles: 6,
        }
    }
}

impl SweepSettings {
    pub fn validate(&self) -> Result<()> {
        if self.avg_periods < 1 {
            return invalid("avg_periods must be at least 1");
        }
        if self.n_harm < 1 || self.steps_per_period < 2 * self.n_harm + 1 {
            return invalid("steps_per_period must resolve n_harm harmonics");
        }
        if !(self.jump_factor > 0.0) {
            return invalid("jump_factor must be positive");
        }
        if !(self.steady_tol > 0.0) {
            return invalid("steady_tol must be positive (infinite disables the gate)");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub freq_hz: f64,
    /// Realized forcing fundamental amplitude.
    pub forcing_amp: f64,
    pub base_accel_amp: f64,
    pub x_amp: f64,
    pub theta: f64,
    pub jumped: bool,
    /// RMS of the response left after removing its harmonic fit: the
    /// noise-driven part of the response.
    #[serde(default)]
    pub residual_rms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub direction: Direction,
    pub points: Vec<SweepPoint>,
    pub diagnostic: Option<String>,
    /// Step at which the response left the potential well, if it did.
    #[serde(default)]
    pub escape: Option<Escape>,
}

/// Forcing step during which the plant diverged. On a softening-at-large-X
/// plant an upward jump can overshoot the potential barrier, so an escape
/// marks a jump off the lower branch whose target was never measured.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Escape {
    pub freq_hz: f64,
    pub forcing_amp: f64,
    pub base_accel_amp: f64,
}

impl Sweep {
    pub fn jumps(&self) -> impl Iterator<Item = &SweepPoint> {
        self.points.iter().filter(|p| p.jumped)
    }

    /// Forcing amplitudes of all jump events, including an escape.
    pub fn jump_forcings(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.jumps().map(|p| p.forcing_amp).collect();
        v.extend(self.escape.map(|e| e.forcing_amp));
        v
    }

    fn not_run(direction: Direction, why: &str) -> Self {
        Self {
            direction,
            points: Vec::new(),
            diagnostic: Some(why.into()),
            escape: None,
        }
    }
}

/// Evenly spaced grid from `lo` to `hi` (inclusive within rounding), ordered
/// by `direction`.
pub fn grid(lo: f64, hi: f64, step: f64, direction: Direction) -> Result<Vec<f64>> {
    if !(step > 0.0) || !lo.is_finite() || !hi.is_finite() || hi < lo {
        return invalid("grid needs lo <= hi and a positive step");
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    let mut g: Vec<f64> = (0..=n).map(|i| lo + step * i as f64).collect();
    if direction == Direction::Down {
        g.reverse();
    }
    Ok(g)
}

/// Open-loop rig with phase-continuous harmonic forcing.
#[derive(Clone, Debug)]
pub struct OpenLoopRig {
    pub rig: Rig,
    pub forcing: ChirpForcing,
    settings: SweepSettings,
    started: bool,
}

impl OpenLoopRig {
    pub fn new(config: &PlantConfig, noise: &NoiseConfig, omega: f64, amplitude: f64, settings: &SweepSettings) -> Result<Self> {
        settings.validate()?;
        if !(omega > 0.0) || !omega.is_finite() || !amplitude.is_finite() {
            return invalid("forcing frequency must be positive and amplitude finite");
        }
        let dt = 2.0 * PI / omega / settings.steps_per_period as f64;
        Ok(Self {
            rig: Rig::new(*config, *noise, PlantState::default(), dt)?,
            forcing: ChirpForcing {
                amplitude,
                omega,
                phase0: 0.0,
                t0: 0.0,
            },
            settings: *settings,
            started: false,
        })
    }

    /// Moves to a new forcing frequency and amplitude, settles and measures.
    pub fn measure(&mut self, omega: f64, amplitude: f64) -> Result<SweepPoint> {
        let s = self.settings;
        if omega != self.forcing.omega {
            self.rig.set_dt(2.0 * PI / omega / s.steps_per_period as f64)?;
            self.forcing.retune(omega, self.rig.time());
        }
        self.forcing.amplitude = amplitude;
        let settle = if self.started {
            s.settle_periods
        } else {
            s.settle_periods.max(s.initial_settle_periods)
        };
        self.started = true;
        let spp = s.steps_per_period;
        self.rig.advance(&mut self.forcing, settle * spp)?;
        let mut rec = self.rig.run(&mut self.forcing, s.avg_periods * spp)?;
        let mut extra = 0;
        while extra < s.max_extra_settles && drift(&rec.x, rec.dt, omega, &s)? > s.steady_tol {
            self.rig.advance(&mut self.forcing, s.settle_periods * spp)?;
            rec = self.rig.run(&mut self.forcing, s.avg_periods * spp)?;
            extra += 1;
        }
        let x = signal::project(&rec.x, rec.dt, omega, s.n_harm, s.avg_periods)?;
        let f = signal::project(&rec.forcing, rec.dt, omega, s.n_harm, s.avg_periods)?;
        let a = signal::project(&rec.base_accel, rec.dt, omega, s.n_harm, s.avg_periods)?;
        if !(x.is_finite() && f.is_finite() && a.is_finite()) {
            return Err(Error::NonFinite("sweep coefficients".into()));
        }
        let residual_rms = signal::metrics(&x, &rec.x, rec.dt)?.residual_rms;
        Ok(SweepPoint {
            freq_hz: omega / (2.0 * PI),
            forcing_amp: f.fundamental_amplitude(),
            base_accel_amp: a.fundamental_amplitude(),
            x_amp: x.fundamental_amplitude(),
            theta: wrap_phase(x.fundamental_phase() - f.fundamental_phase()),
            jumped: false,
            residual_rms,
        })
    }

    /// Visits `(omega, amplitude)` pairs in order. A blow-up ends the sweep
    /// with a diagnostic.
    pub fn sweep(&mut self, steps: &[(f64, f64)], direction: Direction) -> Sweep {
        let mut points = Vec::with_capacity(steps.len());
        let mut diagnostic = None;
        let mut escape = None;
        for &(w, amp) in steps {
            match self.measure(w, amp) {
                Ok(p) => points.push(p),
                Err(e) => {
                    if matches!(e, Error::Diverged { .. }) {
                        escape = Some(Escape {
                            freq_hz: w / (2.0 * PI),
                            forcing_amp: amp,
                            base_accel_amp: self.rig.config().base_accel(amp),
                        });
                    }
                    diagnostic = Some(format!("sweep stopped at {:.4} Hz, amplitude {amp}: {e}", w / (2.0 * PI)));
                    break;
                }
            }
        }
        mark_jumps(&mut points, self.settings.jump_factor);
        Sweep {
            direction,
            points,
            diagnostic,
            escape,
        }
    }
}

/// Relative change of X between the two halves of the averaging window.
fn drift(x: &[f64], dt: f64, omega: f64, s: &SweepSettings) -> Result<f64> {
    let h = s.avg_periods / 2;
    if h == 0 || !s.steady_tol.is_finite() {
        return Ok(0.0);
    }
    let spp = s.steps_per_period;
    let first = signal::project(&x[..h * spp], dt, omega, s.n_harm, h)?.fundamental_amplitude();
    let second = signal::project(&x[x.len() - h * spp..], dt, omega, s.n_harm, h)?.fundamental_amplitude();
    Ok((second - first).abs() / second.max(f64::MIN_POSITIVE))
}

/// Stepped frequency sweep at constant forcing amplitude, from rest.
#[allow(clippy::too_many_arguments)]
pub fn frequency_sweep(
    config: &PlantConfig,
    noise: &NoiseConfig,
    forcing_amp: f64,
    f_lo: f64,
    f_hi: f64,
    f_step: f64,
    direction: Direction,
    settings: &SweepSettings,
) -> Result<Sweep> {
    let freqs = grid(f_lo, f_hi, f_step, direction)?;
    let steps: Vec<(f64, f64)> = freqs.iter().map(|f| (2.0 * PI * f, forcing_amp)).collect();
    let mut rig = OpenLoopRig::new(config, noise, steps[0].0, forcing_amp, settings)?;
    Ok(rig.sweep(&steps, direction))
}

/// Stepped forcing-amplitude sweep at fixed `omega`, from rest.
#[allow(clippy::too_many_arguments)]
pub fn amplitude_sweep(
    config: &PlantConfig,
    noise: &NoiseConfig,
    omega: f64,
    amp_lo: f64,
    amp_hi: f64,
    amp_step: f64,
    direction: Direction,
    settings: &SweepSettings,
) -> Result<Sweep> {
    let amps = grid(amp_lo, amp_hi, amp_step, direction)?;
    let steps: Vec<(f64, f64)> = amps.iter().map(|&a| (omega, a)).collect();
    let mut rig = OpenLoopRig::new(config, noise, omega, amps[0], settings)?;
    Ok(rig.sweep(&steps, direction))
}

/// Up sweep followed by a down sweep that continues from the final state of
/// the up sweep, as on a physical rig.
pub fn up_down_frequency_sweep(
    config: &PlantConfig,
    noise: &NoiseConfig,
    forcing_amp: f64,
    f_lo: f64,
    f_hi: f64,
    f_step: f64,
    settings: &SweepSettings,
) -> Result<(Sweep, Sweep)> {
    let up = grid(f_lo, f_hi, f_step, Direction::Up)?;
    let steps: Vec<(f64, f64)> = up.iter().map(|f| (2.0 * PI * f, forcing_amp)).collect();
    let mut rig = OpenLoopRig::new(config, noise, steps[0].0, forcing_amp, settings)?;
    let a = rig.sweep(&steps, Direction::Up);
    let down: Vec<(f64, f64)> = steps.iter().rev().copied().collect();
    let b = if a.diagnostic.is_none() {
        rig.sweep(&down, Direction::Down)
    } else {
        Sweep::not_run(Direction::Down, "not run after the up sweep stopped")
    };
    Ok((a, b))
}

/// Amplitude counterpart of [`up_down_frequency_sweep`].
pub fn up_down_amplitude_sweep(
    config: &PlantConfig,
    noise: &NoiseConfig,
    omega: f64,
    amp_lo: f64,
    amp_hi: f64,
    amp_step: f64,
    settings: &SweepSettings,
) -> Result<(Sweep, Sweep)> {
    let up = grid(amp_lo, amp_hi, amp_step, Direction::Up)?;
    let steps: Vec<(f64, f64)> = up.iter().map(|&a| (omega, a)).collect();
    let mut rig = OpenLoopRig::new(config, noise, omega, up[0], settings)?;
    let a = rig.sweep(&steps, Direction::Up);
    let down: Vec<(f64, f64)> = steps.iter().rev().copied().collect();
    let b = if a.diagnostic.is_none() {
        rig.sweep(&down, Direction::Down)
    } else {
        Sweep::not_run(Direction::Down, "not run after the up sweep stopped")
    };
    Ok((a, b))
}

/// How the down sweep reaches the resonant branch: a frequency sweep at the
/// top forcing amplitude from `f_start_hz` up to the test frequency. On a
/// hardening branch this follows the resonance without a jump.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Approach {
    pub f_start_hz: f64,
    pub f_step_hz: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BistableSweeps {
    pub up: Sweep,
    /// Preparation of the down sweep; not part of the amplitude data.
    pub approach: Sweep,
    pub down: Sweep,
}

/// Mixes a seed so the down-sweep rig sees a noise realization unrelated
/// to the up-sweep rig.
fn down_seed(seed: u64) -> u64 {
    seed ^ 0x9e37_79b9_7f4a_7c15
}

/// Amplitude sweeps over a bistable interval on two rig runs. The up sweep
/// starts from rest at `amp_lo` and stays on the lower branch until it
/// jumps (or escapes). The down sweep first climbs the resonant branch in
/// frequency at `amp_hi`, then steps the amplitude down through the lower
/// fold.
#[allow(clippy::too_many_arguments)]
pub fn bistable_amplitude_sweeps(
    config: &PlantConfig,
    noise: &NoiseConfig,
    omega: f64,
    amp_lo: f64,
    amp_hi: f64,
    amp_step: f64,
    approach: &Approach,
    settings: &SweepSettings,
) -> Result<BistableSweeps> {
    let f_test = omega / (2.0 * PI);
    if !(approach.f_start_hz > 0.0 && approach.f_start_hz < f_test && approach.f_step_hz > 0.0) {
        return invalid("approach needs 0 < f_start_hz < test frequency and a positive step");
    }
    let up_amps = grid(amp_lo, amp_hi, amp_step, Direction::Up)?;
    let steps: Vec<(f64, f64)> = up_amps.iter().map(|&a| (omega, a)).collect();
    let mut rig = OpenLoopRig::new(config, noise, omega, amp_lo, settings)?;
    let up = rig.sweep(&steps, Direction::Up);

    let top = *up_amps.last().expect("grid is non-empty");
    let mut freqs = grid(approach.f_start_hz, f_test, approach.f_step_hz, Direction::Up)?;
    if freqs.last().is_some_and(|f| (f - f_test).abs() > 1e-9 * f_test) {
        freqs.push(f_test);
    }
    *freqs.last_mut().expect("grid is non-empty") = f_test;
    let path: Vec<(f64, f64)> = freqs.iter().map(|f| (2.0 * PI * f, top)).collect();
    let down_noise = noise.with_seed(down_seed(noise.seed));
    let mut rig = OpenLoopRig::new(config, &down_noise, path[0].0, top, settings)?;
    let approach_sweep = rig.sweep(&path, Direction::Up);
    let down = if approach_sweep.diagnostic.is_none() {
        let steps: Vec<(f64, f64)> = up_amps.iter().rev().skip(1).map(|&a| (omega, a)).collect();
        let mut d = rig.sweep(&steps, Direction::Down);
        // The last approach point is the first amplitude of the down sweep.
        d.points.insert(0, *approach_sweep.points.last().expect("approach measured"));
        mark_jumps(&mut d.points, settings.jump_factor);
        d
    } else {
        Sweep::not_run(Direction::Down, "not run after the approach sweep stopped")
    };
    Ok(BistableSweeps {
        up,
        approach: approach_sweep,
        down,
    })
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Flags point `i` when `|X_i - X_{i-1}|` exceeds `factor` times the median
/// step. A run of consecutive flags with the same sign counts as one event,
/// attributed to its first point.
pub fn mark_jumps(points: &mut [SweepPoint], factor: f64) {
    for p in points.iter_mut() {
        p.jumped = false;
    }
    if points.len() < 3 {
        return;
    }
    let dx: Vec<f64> = points.windows(2).map(|w| w[1].x_amp - w[0].x_amp).collect();
    let thr = factor * median(dx.iter().map(|d| d.abs()).collect());
    let mut prev_sign = 0.0;
    for (i, d) in dx.iter().enumerate() {
        if d.abs() > thr && d.abs() > 0.0 {
            if d.signum() != prev_sign {
                points[i + 1].jumped = true;
            }
            prev_sign = d.signum();
        } else {
            prev_sign = 0.0;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearModal {
    pub f_n_hz: f64,
    /// Lehr's damping ratio from the half-power bandwidth.
    pub damping_ratio: f64,
    pub peak_up_hz: f64,
    pub peak_down_hz: f64,
    /// Set when the response at the peak is not small enough to count as
    /// linear.
    pub warning: Option<String>,
}

/// Half-power bandwidth of one sweep: a least-squares quadratic in `f^2` is
/// fitted to `1/X^2` on the points above half the peak amplitude, and the
/// bandwidth is the distance between the two frequencies where the fit is
/// twice its minimum.
fn half_power_bandwidth(points: &[SweepPoint]) -> Result<(f64, f64)> {
    let (imax, peak) = points
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.x_amp.total_cmp(&b.1.x_amp))
        .ok_or_else(|| Error::InvalidInput("empty sweep".into()))?;
    let mut sel: Vec<&SweepPoint> = points.iter().filter(|p| p.x_amp >= 0.5 * peak.x_amp).collect();
    if sel.len() < 3 {
        let lo = imax.saturating_sub(1).min(points.len().saturating_sub(3));
        sel = points[lo..(lo + 3).min(points.len())].iter().collect();
    }
    if sel.len() < 3 {
        return Err(Error::InvalidInput("too few points for a bandwidth estimate".into()));
    }
    // Centered and scaled abscissa for conditioning.
    let u0 = peak.freq_hz * peak.freq_hz;
    let mut ata = [[0.0; 3]; 3];
    let mut atb = [0.0; 3];
    for p in &sel {
        let u = p.freq_hz * p.freq_hz - u0;
        let y = 1.0 / (p.x_amp * p.x_amp);
        let row = [1.0, u, u * u];
        for i in 0..3 {
            atb[i] += row[i] * y;
            for j in 0..3 {
                ata[i][j] += row[i] * row[j];
            }
        }
    }
    let m = nalgebra::Matrix3::from_fn(|i, j| ata[i][j]);
    let c = m
        .lu()
        .solve(&nalgebra::Vector3::from(atb))
        .ok_or_else(|| Error::InvalidInput("degenerate bandwidth fit".into()))?;
    let (c0, c1, c2) = (c[0], c[1], c[2]);
    if !(c2 > 0.0) {
        return Err(Error::InvalidInput("response has no resonance peak in range".into()));
    }
    let u_min = -c1 / (2.0 * c2);
    let y_min = c0 - c1 * c1 / (4.0 * c2);
    if !(y_min > 0.0) {
        return Err(Error::InvalidInput("degenerate bandwidth fit".into()));
    }
    // c2 (u - u_min)^2 + y_min = 2 y_min
    let half = (y_min / c2).sqrt();
    let (u1, u2) = (u0 + u_min - half, u0 + u_min + half);
    if !(u1 > 0.0) {
        return Err(Error::InvalidInput("bandwidth extends below zero frequency".into()));
    }
    let f_peak = (u0 + u_min).sqrt();
    Ok((u2.sqrt() - u1.sqrt(), f_peak))
}

/// Peak grid frequency of a sweep; a peak on the first or last point means
/// the range is too narrow.
fn peak_locus(sweep: &Sweep) -> Result<f64> {
    let pts = &sweep.points;
    let (i, p) = pts
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.x_amp.total_cmp(&b.1.x_amp))
        .ok_or_else(|| Error::InvalidInput("empty sweep".into()))?;
    if i == 0 || i + 1 == pts.len() {
        return Err(Error::InvalidInput(format!(
            "response peak at the edge of the frequency range ({:.3} Hz)",
            p.freq_hz
        )));
    }
    Ok(p.freq_hz)
}

/// Natural frequency and damping ratio from low-amplitude up and down sweeps.
pub fn estimate_linear_modal(
    config: &PlantConfig,
    noise: &NoiseConfig,
    low_amp: f64,
    f_range: (f64, f64),
    f_step: f64,
    settings: &SweepSettings,
) -> Result<LinearModal> {
    let (up, down) = up_down_frequency_sweep(config, noise, low_amp, f_range.0, f_range.1, f_step, settings)?;
    if let Some(d) = up.diagnostic.as_ref().or(down.diagnostic.as_ref()) {
        return Err(Error::InvalidInput(format!("modal sweep failed: {d}")));
    }
    modal_from_sweeps(config, &up, &down)
}

/// Modal estimate from a pair of recorded sweeps.
pub fn modal_from_sweeps(config: &PlantConfig, up: &Sweep, down: &Sweep) -> Result<LinearModal> {
    let peak_up_hz = peak_locus(up)?;
    let peak_down_hz = peak_locus(down)?;
    let f_n_hz = 0.5 * (peak_up_hz + peak_down_hz);
    let (bw_up, _) = half_power_bandwidth(&up.points)?;
    let (bw_down, _) = half_power_bandwidth(&down.points)?;
    let damping_ratio = 0.5 * (bw_up + bw_down) / (2.0 * f_n_hz);
    let x_peak = up.points.iter().chain(&down.points).map(|p| p.x_amp).fold(0.0, f64::max);
    let p = config.params;
    let w2 = p.omega_n * p.omega_n;
    let x2 = x_peak * x_peak;
    let ratio = (x2 * (p.mu + x2 * (p.nu + x2 * p.rho)) / w2).abs();
    let warning = (ratio >= 0.01).then(|| {
        format!("nonlinear restoring force is {:.2}% of the linear one at the peak; estimate may be biased", 100.0 * ratio)
    });
    Ok(LinearModal {
        f_n_hz,
        damping_ratio,
        peak_up_hz,
        peak_down_hz,
        warning,
    })
}
