//! Simplified control-based continuation: sweep the target fundamental
//! coefficient B1*, wait for the closed loop to settle, remove the
//! higher-harmonic control effort by fixed-point iteration on the target and
//! record the fundamental forcing amplitude Phi.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::controller::{ControlGains, ControlTarget, PdController};
use crate::error::{invalid, Error, Result};
use crate::plant::noise::NoiseConfig;
use crate::plant::{PlantConfig, PlantState, Rig};
use crate::signal::{self, wrap_phase, HarmonicCoeffs};

/// When acceptance is [`Acceptance::Auto`], runs with noise RMS above this
/// level accept points whose higher harmonics did not reach tolerance.
pub const DEFAULT_LENIENT_NOISE_LEVEL: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Acceptance {
    /// Unconverged points are marked `accepted = false`.
    Strict,
    /// Every measured point is accepted.
    Lenient,
    /// Strict below the given noise RMS, lenient at or above it.
    Auto(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CbcSettings {
    pub delta_b1: f64,
    /// Bound on the forcing higher-harmonic norm, force units.
    pub hh_tolerance: f64,
    pub max_fp_iters: usize,
    pub settle_periods: usize,
    pub avg_periods: usize,
    pub correct_higher_harmonics: bool,
    pub acceptance: Acceptance,
    pub steps_per_period: usize,
    pub n_harm: usize,
    /// Extra settling before the first point, from rest.
    pub initial_settle_periods: usize,
}

impl Default for CbcSettings {
    fn default() -> Self {
        Self {
            delta_b1: 0.025,
            hh_tolerance: 3.0,
            max_fp_iters: 10,
            settle_periods: 50,
            avg_periods: 10,
            correct_higher_harmonics: true,
            acceptance: Acceptance::Auto(DEFAULT_LENIENT_NOISE_LEVEL),
            steps_per_period: 1024,
            n_harm: signal::DEFAULT_N_HARM,
            initial_settle_periods: 100,
        }
    }
}

impl CbcSettings {
    pub fn validate(&self) -> Result<()> {
        if self.delta_b1 == 0.0 || !self.delta_b1.is_finite() {
            return invalid("delta_b1 must be finite and non-zero");
        }
        if !(self.hh_tolerance > 0.0) {
            return invalid("hh_tolerance must be positive");
        }
        if self.avg_periods < 1 {
            return invalid("avg_periods must be at least 1");
        }
        if self.max_fp_iters < 1 {
            return invalid("max_fp_iters must be at least 1");
        }
        if self.n_harm < 1 || self.steps_per_period < 2 * self.n_harm + 1 {
            return invalid("steps_per_period must resolve n_harm harmonics");
        }
        if let Acceptance::Auto(level) = self.acceptance {
            if !(level >= 0.0) {
                return invalid("lenient noise level must be non-negative");
            }
        }
        Ok(())
    }

    fn strict_for(&self, noise_level: f64) -> bool {
        match self.acceptance {
            Acceptance::Strict => true,
            Acceptance::Lenient => false,
            Acceptance::Auto(level) => noise_level < level,
        }
    }
}

/// Coefficients averaged over the measurement window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub response: HarmonicCoeffs,
    /// Total applied force, excluding process noise.
    pub forcing: HarmonicCoeffs,
    pub base_accel: HarmonicCoeffs,
}

impl Measurement {
    pub fn phi(&self) -> f64 {
        self.forcing.fundamental_amplitude()
    }

    /// Response phase relative to the fundamental forcing.
    pub fn theta(&self) -> f64 {
        wrap_phase(self.response.fundamental_phase() - self.forcing.fundamental_phase())
    }
}

/// Closed-loop rig at a fixed frequency.
#[derive(Clone, Debug)]
pub struct CbcRig {
    pub rig: Rig,
    pub omega: f64,
    pub noise_level: f64,
    steps_per_period: usize,
}

impl CbcRig {
    pub fn new(config: &PlantConfig, noise: &NoiseConfig, omega: f64, steps_per_period: usize) -> Result<Self> {
        if !(omega > 0.0) || !omega.is_finite() {
            return invalid(format!("omega must be positive, got {omega}"));
        }
        let dt = 2.0 * PI / omega / steps_per_period as f64;
        let rig = Rig::new(*config, *noise, PlantState::default(), dt)?;
        Ok(Self {
            rig,
            omega,
            noise_level: noise.level,
            steps_per_period,
        })
    }

    pub fn steps_per_period(&self) -> usize {
        self.steps_per_period
    }
}

/// Runs the closed loop for `settle_periods`, then projects response, forcing
/// and base acceleration over `avg_periods` whole periods.
pub fn measure_steady_state(
    rig: &mut CbcRig,
    controller: &mut PdController,
    settle_periods: usize,
    settings: &CbcSettings,
) -> Result<Measurement> {
    if (controller.omega() - rig.omega).abs() > 1e-12 * rig.omega {
        return Err(Error::HarmonicMismatch(format!(
            "controller at {} rad/s, rig at {} rad/s",
            controller.omega(),
            rig.omega
        )));
    }
    let spp = rig.steps_per_period;
    rig.rig.advance(controller, settle_periods * spp)?;
    let rec = rig.rig.run(controller, settings.avg_periods * spp)?;
    let dt = rec.dt;
    let n = settings.n_harm;
    let w = rig.omega;
    let response = signal::project(&rec.x, dt, w, n, settings.avg_periods)?;
    let forcing = signal::project(&rec.forcing, dt, w, n, settings.avg_periods)?;
    let base_accel = signal::project(&rec.base_accel, dt, w, n, settings.avg_periods)?;
    if !(response.is_finite() && forcing.is_finite() && base_accel.is_finite()) {
        return Err(Error::NonFinite("steady-state coefficients".into()));
    }
    Ok(Measurement {
        response,
        forcing,
        base_accel,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Correction {
    pub target: ControlTarget,
    pub measurement: Measurement,
    /// Measurements taken, including the first.
    pub iterations: usize,
    pub converged: bool,
    /// Forcing higher-harmonic norm after each measurement.
    pub history: Vec<f64>,
}

/// Fixed-point iteration: the target's non-fundamental coefficients are set to
/// the measured response ones and the loop is measured again, until the
/// forcing higher-harmonic norm drops below `hh_tolerance`.
pub fn correct_higher_harmonics(
    rig: &mut CbcRig,
    controller: &mut PdController,
    first: Measurement,
    settings: &CbcSettings,
) -> Result<Correction> {
    let mut m = first;
    let mut history = vec![m.forcing.higher_harmonic_norm()];
    let mut iterations = 1;
    let enabled = settings.correct_higher_harmonics && settings.hh_tolerance.is_finite();
    while enabled && history[iterations - 1] > settings.hh_tolerance && iterations < settings.max_fp_iters {
        controller.target = controller.target.with_higher_harmonics_of(&m.response)?;
        m = measure_steady_state(rig, controller, settings.settle_periods, settings)?;
        history.push(m.forcing.higher_harmonic_norm());
        iterations += 1;
    }
    let converged = history[iterations - 1] <= settings.hh_tolerance;
    Ok(Correction {
        target: controller.target.clone(),
        measurement: m,
        iterations,
        converged,
        history,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchPoint {
    pub b1_target: f64,
    pub phi: f64,
    pub base_accel_amp: f64,
    pub x_amp: f64,
    pub theta: f64,
    pub response: HarmonicCoeffs,
    pub forcing: HarmonicCoeffs,
    pub target: ControlTarget,
    pub fp_iters_used: usize,
    pub hh_residual: f64,
    pub accepted: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CbcBranch {
    pub omega: f64,
    pub gains: ControlGains,
    pub settings: CbcSettings,
    pub noise: NoiseConfig,
    pub points: Vec<BranchPoint>,
    /// Why the sweep stopped early, if it did.
    pub diagnostic: Option<String>,
}

impl CbcBranch {
    pub fn accepted(&self) -> impl Iterator<Item = &BranchPoint> {
        self.points.iter().filter(|p| p.accepted)
    }
}

/// Target values visited by a sweep from `start` toward `stop` in steps of
/// `delta` (sign taken from the range).
pub fn sweep_targets(start: f64, stop: f64, delta: f64) -> Result<Vec<f64>> {
    if !start.is_finite() || !stop.is_finite() || delta == 0.0 || !delta.is_finite() {
        return invalid("sweep range and step must be finite with non-zero step");
    }
    let step = delta.abs() * (stop - start).signum();
    if step == 0.0 {
        return Ok(vec![start]);
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| start + step * i as f64).collect())
}

/// Amplitude sweep at fixed `omega`. Each point starts from the previous
/// steady state. The open-loop part of the forcing is zero, so the feedback
/// supplies the whole force and X follows B1* monotonically.
pub fn run_amplitude_sweep(
    config: &PlantConfig,
    noise: &NoiseConfig,
    omega: f64,
    b1_range: (f64, f64),
    gains: ControlGains,
    settings: &CbcSettings,
) -> Result<CbcBranch> {
    settings.validate()?;
    gains.validate()?;
    let targets = sweep_targets(b1_range.0, b1_range.1, settings.delta_b1)?;
    let mut rig = CbcRig::new(config, noise, omega, settings.steps_per_period)?;
    let strict = settings.strict_for(noise.level);
    let mut controller = PdController {
        target: ControlTarget::fundamental(omega, settings.n_harm, targets[0])?,
        gains,
        a_open: 0.0,
        b_open: 0.0,
    };
    let mut points = Vec::with_capacity(targets.len());
    let mut diagnostic = None;
    for (i, &b1) in targets.iter().enumerate() {
        controller.target.set_b1(b1);
        let settle = if i == 0 {
            settings.initial_settle_periods.max(settings.settle_periods)
        } else {
            settings.settle_periods
        };
        let step = measure_steady_state(&mut rig, &mut controller, settle, settings)
            .and_then(|m| correct_higher_harmonics(&mut rig, &mut controller, m, settings));
        let corr = match step {
            Ok(c) => c,
            Err(Error::Diverged { t, x }) => {
                diagnostic = Some(format!("plant diverged at t = {t:.4} s (x = {x:.3}) with B1* = {b1}"));
                break;
            }
            Err(e) => return Err(e),
        };
        let m = &corr.measurement;
        points.push(BranchPoint {
            b1_target: b1,
            phi: m.phi(),
            base_accel_amp: m.base_accel.fundamental_amplitude(),
            x_amp: m.response.fundamental_amplitude(),
            theta: m.theta(),
            response: m.response.clone(),
            forcing: m.forcing.clone(),
            target: corr.target.clone(),
            fp_iters_used: corr.iterations,
            hh_residual: m.forcing.higher_harmonic_norm(),
            accepted: corr.converged || !strict,
        });
    }
    Ok(CbcBranch {
        omega,
        gains,
        settings: *settings,
        noise: *noise,
        points,
        diagnostic,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::{DuffingParams, HarmonicForcing};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    const WN: f64 = 2.0 * PI * 19.95;
    const W24: f64 = 2.0 * PI * 24.0;

    fn linear_config(b: f64) -> PlantConfig {
        PlantConfig::new(DuffingParams::linear(WN, b))
    }

    fn fast_settings() -> CbcSettings {
        CbcSettings {
            settle_periods: 40,
            steps_per_period: 512,
            ..Default::default()
        }
    }

    /// Exact linear steady state for forcing `f cos(w t)`.
    fn linear_orbit(params: &DuffingParams, f: f64, w: f64, n: usize) -> HarmonicCoeffs {
        let w2 = params.omega_n * params.omega_n;
        let den = (w2 - w * w).powi(2) + (params.b * w).powi(2);
        let mut c = HarmonicCoeffs::zeros(w, n);
        c.a[0] = f * (w2 - w * w) / den;
        c.b[0] = f * params.b * w / den;
        c
    }

    #[test]
    fn on_target_linear_forcing_has_no_higher_harmonics() {
        let cfg = linear_config(10.0);
        let s = fast_settings();
        let f = 500.0;
        let orbit = linear_orbit(&cfg.params, f, W24, s.n_harm);
        // Shift time so the response has A1 = 0 would require a phase change;
        // instead keep the orbit and let the target follow it.
        let mut target = ControlTarget::fundamental(W24, s.n_harm, 0.0).unwrap();
        let mut rig = CbcRig::new(&cfg, &NoiseConfig::silent(), W24, s.steps_per_period).unwrap();
        let phase = orbit.fundamental_phase();
        // Rotate the forcing so the orbit reads B1 sin(w t).
        let rot = -PI / 2.0 - phase;
        let (a_f, b_f) = (f * rot.cos(), -f * rot.sin());
        target.set_b1(orbit.fundamental_amplitude());
        let x_amp = orbit.fundamental_amplitude();
        rig.rig.set_state(0.0, x_amp * W24);
        let mut ctl = PdController {
            target,
            gains: ControlGains::default(),
            a_open: a_f,
            b_open: b_f,
        };
        let m = measure_steady_state(&mut rig, &mut ctl, 200, &s).unwrap();
        assert!(m.forcing.higher_harmonic_norm() <= 1e-6 * m.phi(), "{}", m.forcing.higher_harmonic_norm());
        assert_relative_eq!(m.phi(), f, max_relative = 5e-3);
        let c = correct_higher_harmonics(&mut rig, &mut ctl, m, &CbcSettings { hh_tolerance: 1e-6 * f, ..s }).unwrap();
        assert_eq!(c.iterations, 1);
        assert!(c.converged);
    }

    #[test]
    fn disabled_control_reproduces_open_loop() {
        let cfg = PlantConfig::new(DuffingParams::from_tilde(
            &crate::analytic::TildeParams {
                mu_t: 0.2999,
                nu_t: -0.0258,
                rho_t: -0.00025,
                b_t: 0.05,
                zeta: 1.0,
            },
            WN,
        ));
        let s = fast_settings();
        let f = 300.0;
        let mut rig = CbcRig::new(&cfg, &NoiseConfig::silent(), W24, s.steps_per_period).unwrap();
        let mut ctl = PdController {
            target: ControlTarget::fundamental(W24, s.n_harm, 0.0).unwrap(),
            gains: ControlGains::OFF,
            a_open: f,
            b_open: 0.0,
        };
        let m = measure_steady_state(&mut rig, &mut ctl, 300, &s).unwrap();
        let rec = crate::plant::simulate(
            &cfg,
            &mut HarmonicForcing::cosine(f, W24),
            &NoiseConfig::silent(),
            PlantState::default(),
            310.0 * 2.0 * PI / W24,
            rig.rig.dt(),
        )
        .unwrap();
        let spp = s.steps_per_period;
        let tail = &rec.x[300 * spp..310 * spp];
        let open = signal::project(tail, rec.dt, W24, s.n_harm, 10).unwrap();
        assert_relative_eq!(m.response.fundamental_amplitude(), open.fundamental_amplitude(), max_relative = 5e-3);
        assert_relative_eq!(m.phi(), f, max_relative = 1e-9);
    }

    #[test]
    fn infinite_tolerance_measures_once() {
        let cfg = linear_config(10.0);
        let s = CbcSettings {
            hh_tolerance: f64::INFINITY,
            ..fast_settings()
        };
        let mut rig = CbcRig::new(&cfg, &NoiseConfig::silent(), W24, s.steps_per_period).unwrap();
        let target = ControlTarget::fundamental(W24, s.n_harm, 0.3).unwrap();
        let mut ctl = PdController {
            target: target.clone(),
            gains: ControlGains::default(),
            a_open: 0.0,
            b_open: 0.0,
        };
        let m = measure_steady_state(&mut rig, &mut ctl, 20, &s).unwrap();
        let c = correct_higher_harmonics(&mut rig, &mut ctl, m, &s).unwrap();
        assert_eq!(c.iterations, 1);
        assert_eq!(c.target, target);
    }

    #[test]
    fn mismatched_frequency_is_rejected() {
        let cfg = linear_config(10.0);
        let s = fast_settings();
        let mut rig = CbcRig::new(&cfg, &NoiseConfig::silent(), W24, s.steps_per_period).unwrap();
        let mut ctl = PdController {
            target: ControlTarget::fundamental(1.1 * W24, s.n_harm, 0.3).unwrap(),
            gains: ControlGains::default(),
            a_open: 0.0,
            b_open: 0.0,
        };
        assert!(matches!(
            measure_steady_state(&mut rig, &mut ctl, 1, &s),
            Err(Error::HarmonicMismatch(_))
        ));
    }

    #[test]
    fn linear_sweep_is_a_line_with_frf_slope() {
        let cfg = linear_config(5.0);
        let s = CbcSettings {
            delta_b1: 0.1,
            ..fast_settings()
        };
        let br = run_amplitude_sweep(&cfg, &NoiseConfig::silent(), W24, (0.1, 1.0), ControlGains::default(), &s).unwrap();
        assert_eq!(br.points.len(), 10);
        let gain = cfg.params.linear_gain(W24);
        for p in &br.points {
            assert!(p.accepted);
            assert_relative_eq!(p.x_amp / p.phi, gain, max_relative = 5e-3);
            assert_eq!(p.phi, p.forcing.fundamental_amplitude());
            assert_relative_eq!(p.base_accel_amp, p.phi / (cfg.c_a_true * WN * WN), max_relative = 1e-9);
        }
    }

    #[test]
    fn blow_up_truncates_branch() {
        let mut cfg = linear_config(5.0);
        cfg.divergence_bound = 0.5;
        let s = CbcSettings {
            delta_b1: 0.2,
            ..fast_settings()
        };
        let br = run_amplitude_sweep(&cfg, &NoiseConfig::silent(), W24, (0.1, 1.5), ControlGains::default(), &s).unwrap();
        assert!(br.diagnostic.is_some());
        assert!(br.points.len() < 8);
        assert!(br.points.iter().all(|p| p.x_amp < 0.5));
    }

    #[test]
    fn sweep_targets_follow_range() {
        assert_eq!(sweep_targets(0.0, 1.0, 0.25).unwrap(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(sweep_targets(1.0, 0.5, 0.25).unwrap(), vec![1.0, 0.75, 0.5]);
        assert!(sweep_targets(0.0, 1.0, 0.0).is_err());
        assert!(CbcSettings { avg_periods: 0, ..Default::default() }.validate().is_err());
        assert!(CbcSettings { hh_tolerance: 0.0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn acceptance_policy() {
        let s = CbcSettings::default();
        assert!(s.strict_for(0.0));
        assert!(!s.strict_for(DEFAULT_LENIENT_NOISE_LEVEL));
        assert!(CbcSettings { acceptance: Acceptance::Strict, ..s }.strict_for(1e9));
        assert!(!CbcSettings { acceptance: Acceptance::Lenient, ..s }.strict_for(0.0));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn sweep_targets_are_evenly_spaced(start in -2.0f64..2.0, len in 0.0f64..3.0, d in 0.01f64..0.5) {
            let t = sweep_targets(start, start + len, d).unwrap();
            prop_assert!((t[0] - start).abs() < 1e-15);
            for w in t.windows(2) {
                prop_assert!((w[1] - w[0] - d).abs() < 1e-12);
            }
            prop_assert!(*t.last().unwrap() <= start + len + 1e-9);
            prop_assert!(*t.last().unwrap() > start + len - d - 1e-9);
        }
    }
}
