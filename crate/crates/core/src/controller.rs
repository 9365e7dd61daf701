//! Non-invasive PD control and the Fourier algebra of the total forcing.
//!
//! The control force is `kp (x* - x) + kd (x*' - v)` with `v` a backward
//! difference of the sampled response and `x*'` the exact derivative of the
//! target series.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::plant::Forcing;
use crate::signal::HarmonicCoeffs;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlGains {
    pub kp: f64,
    pub kd: f64,
}

impl ControlGains {
    pub const OFF: Self = Self { kp: 0.0, kd: 0.0 };

    pub fn validate(&self) -> Result<()> {
        if !self.kp.is_finite() || !self.kd.is_finite() {
            return invalid("control gains must be finite");
        }
        Ok(())
    }
}

impl Default for ControlGains {
    /// Gains giving a closed-loop Floquet multiplier modulus of about 0.9
    /// on the nominal model at 24 Hz.
    fn default() -> Self {
        Self { kp: 2.0e4, kd: 4.0 }
    }
}

/// Control target with the cosine fundamental pinned to zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlTarget {
    coeffs: HarmonicCoeffs,
}

impl ControlTarget {
    pub fn new(coeffs: HarmonicCoeffs) -> Result<Self> {
        coeffs.validate()?;
        if coeffs.a[0] != 0.0 {
            return invalid(format!("target must have A1* = 0, got {}", coeffs.a[0]));
        }
        Ok(Self { coeffs })
    }

    /// Pure `b1 sin(omega t)` target.
    pub fn fundamental(omega: f64, n_harm: usize, b1: f64) -> Result<Self> {
        let mut c = HarmonicCoeffs::zeros(omega, n_harm);
        c.b[0] = b1;
        Self::new(c)
    }

    pub fn coeffs(&self) -> &HarmonicCoeffs {
        &self.coeffs
    }

    pub fn b1(&self) -> f64 {
        self.coeffs.b[0]
    }

    pub fn set_b1(&mut self, b1: f64) {
        self.coeffs.b[0] = b1;
    }

    /// Target whose constant and higher harmonics are taken from `response`,
    /// keeping `A1* = 0` and `B1*`.
    pub fn with_higher_harmonics_of(&self, response: &HarmonicCoeffs) -> Result<Self> {
        self.coeffs.check_compatible(response)?;
        let mut c = response.clone();
        c.omega = self.coeffs.omega;
        c.a[0] = 0.0;
        c.b[0] = self.coeffs.b[0];
        Ok(Self { coeffs: c })
    }

    #[inline]
    pub fn value_at(&self, t: f64) -> f64 {
        self.coeffs.value_at(t)
    }

    #[inline]
    pub fn derivative_at(&self, t: f64) -> f64 {
        self.coeffs.derivative_at(t)
    }
}

/// PD control force at time `t` from the current and previous samples.
#[inline]
pub fn control_force(x_now: f64, x_prev: f64, dt: f64, target: &ControlTarget, gains: &ControlGains, t: f64) -> f64 {
    let v_hat = (x_now - x_prev) / dt;
    gains.kp * (target.value_at(t) - x_now) + gains.kd * (target.derivative_at(t) - v_hat)
}

/// Fourier coefficients of the total forcing
/// `a_open cos(omega t) + b_open sin(omega t) + kp e + kd e'`, `e = x* - x`.
pub fn forcing_coefficients(
    a_open: f64,
    b_open: f64,
    target: &ControlTarget,
    response: &HarmonicCoeffs,
    gains: &ControlGains,
    omega: f64,
) -> Result<HarmonicCoeffs> {
    let tc = target.coeffs();
    tc.check_compatible(response)?;
    if (tc.omega - omega).abs() > 1e-12 * omega.abs() {
        return Err(crate::error::Error::HarmonicMismatch(format!(
            "forcing frequency {omega} differs from target frequency {}",
            tc.omega
        )));
    }
    let n = tc.n_harm;
    let mut f = HarmonicCoeffs::zeros(omega, n);
    f.a0 = gains.kp * (tc.a0 - response.a0);
    for k in 1..=n {
        let ea = tc.a[k - 1] - response.a[k - 1];
        let eb = tc.b[k - 1] - response.b[k - 1];
        let kw = k as f64 * omega;
        f.a[k - 1] = gains.kp * ea + gains.kd * kw * eb;
        f.b[k - 1] = gains.kp * eb - gains.kd * kw * ea;
    }
    f.a[0] += a_open;
    f.b[0] += b_open;
    Ok(f)
}

/// Open-loop harmonic forcing plus sampled PD feedback.
#[derive(Clone, Debug)]
pub struct PdController {
    pub target: ControlTarget,
    pub gains: ControlGains,
    pub a_open: f64,
    pub b_open: f64,
}

impl PdController {
    pub fn omega(&self) -> f64 {
        self.target.coeffs().omega
    }
}

impl Forcing for PdController {
    #[inline]
    fn sample(&mut self, t: f64, x: f64, x_prev: f64, dt: f64) -> f64 {
        control_force(x, x_prev, dt, &self.target, &self.gains, t)
    }

    #[inline]
    fn smooth(&self, t: f64) -> f64 {
        if self.a_open == 0.0 && self.b_open == 0.0 {
            return 0.0;
        }
        let (s, c) = (self.omega() * t).sin_cos();
        self.a_open * c + self.b_open * s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::{DuffingParams, NoiseConfig, PlantConfig, PlantState, Rig};
    use crate::signal::{project, synthesize};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    const W: f64 = 2.0 * PI * 24.0;

    fn random_target(rng: &mut ChaCha8Rng, n: usize) -> ControlTarget {
        let mut c = HarmonicCoeffs::zeros(W, n);
        c.a0 = rng.random_range(-0.5..0.5);
        for k in 0..n {
            c.a[k] = rng.random_range(-1.0..1.0);
            c.b[k] = rng.random_range(-1.0..1.0);
        }
        c.a[0] = 0.0;
        ControlTarget::new(c).unwrap()
    }

    fn random_series(rng: &mut ChaCha8Rng, n: usize) -> HarmonicCoeffs {
        let mut c = HarmonicCoeffs::zeros(W, n);
        c.a0 = rng.random_range(-0.5..0.5);
        for k in 0..n {
            c.a[k] = rng.random_range(-1.0..1.0);
            c.b[k] = rng.random_range(-1.0..1.0);
        }
        c
    }

    #[test]
    fn proportional_only() {
        let t = ControlTarget::fundamental(W, 7, 0.0).unwrap();
        let g = ControlGains { kp: 1.0, kd: 0.0 };
        // x* = 0 at all times, so x* - x = 0.2 for x = -0.2.
        assert!((control_force(-0.2, -0.2, 1e-4, &t, &g, 0.3) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn on_target_force_vanishes_with_dt() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t = random_target(&mut rng, 7);
        let g = ControlGains { kp: 2e4, kd: 4.0 };
        // Backward-difference error is at most dt/2 * max|x*''|.
        let c = t.coeffs();
        let acc_max: f64 = (1..=7)
            .map(|k| (k as f64 * W).powi(2) * (c.a[k - 1].abs() + c.b[k - 1].abs()))
            .sum();
        let mut prev = f64::INFINITY;
        for &dt in &[1e-4, 1e-5, 1e-6] {
            let mut worst: f64 = 0.0;
            for j in 0..50 {
                let time = 0.001 * j as f64;
                let f = control_force(t.value_at(time), t.value_at(time - dt), dt, &t, &g, time);
                worst = worst.max(f.abs());
            }
            assert!(worst <= g.kd * acc_max * dt / 2.0 + 1e-8, "dt {dt}: {worst}");
            assert!(worst < prev / 5.0);
            prev = worst;
        }
    }

    #[test]
    fn non_invasive_when_target_equals_response() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let t = random_target(&mut rng, 7);
        let g = ControlGains { kp: 3e4, kd: 7.0 };
        let f = forcing_coefficients(1.5, -2.5, &t, t.coeffs(), &g, W).unwrap();
        assert_eq!(f.a[0], 1.5);
        assert_eq!(f.b[0], -2.5);
        assert_eq!(f.higher_harmonic_norm(), 0.0);
    }

    #[test]
    fn kd_zero_reduces_to_proportional_fundamental() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let t = random_target(&mut rng, 7);
        let r = random_series(&mut rng, 7);
        let g = ControlGains { kp: 123.0, kd: 0.0 };
        let f = forcing_coefficients(0.7, 0.0, &t, &r, &g, W).unwrap();
        assert_eq!(f.a[0], 0.7 + 123.0 * (0.0 - r.a[0]));
    }

    #[test]
    fn mismatch_rejected() {
        let t = ControlTarget::fundamental(W, 7, 1.0).unwrap();
        let g = ControlGains::default();
        assert!(forcing_coefficients(0.0, 0.0, &t, &HarmonicCoeffs::zeros(W, 5), &g, W).is_err());
        assert!(forcing_coefficients(0.0, 0.0, &t, &HarmonicCoeffs::zeros(W * 1.1, 7), &g, W).is_err());
        assert!(forcing_coefficients(0.0, 0.0, &t, &HarmonicCoeffs::zeros(W, 7), &g, 2.0 * W).is_err());
        let mut c = HarmonicCoeffs::zeros(W, 3);
        c.a[0] = 0.1;
        assert!(ControlTarget::new(c).is_err());
    }

    /// Oracle: project the continuous-time total forcing built from
    /// synthesized target and response with exact derivatives.
    fn projected_forcing(a: f64, b: f64, t: &ControlTarget, r: &HarmonicCoeffs, g: &ControlGains) -> HarmonicCoeffs {
        let spp = 256;
        let dt = 2.0 * PI / (W * spp as f64);
        let times: Vec<f64> = (0..spp).map(|j| j as f64 * dt).collect();
        let xs = synthesize(t.coeffs(), &times);
        let xr = synthesize(r, &times);
        let f: Vec<f64> = times
            .iter()
            .enumerate()
            .map(|(j, &tt)| {
                let (s, c) = (W * tt).sin_cos();
                a * c + b * s + g.kp * (xs[j] - xr[j]) + g.kd * (t.derivative_at(tt) - r.derivative_at(tt))
            })
            .collect();
        project(&f, dt, W, t.coeffs().n_harm, 1).unwrap()
    }

    #[test]
    fn algebra_matches_synthesis_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..20 {
            let t = random_target(&mut rng, 7);
            let r = random_series(&mut rng, 7);
            let g = ControlGains { kp: rng.random_range(0.0..100.0), kd: rng.random_range(0.0..1.0) };
            let (a, b) = (rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
            let f = forcing_coefficients(a, b, &t, &r, &g, W).unwrap();
            let o = projected_forcing(a, b, &t, &r, &g);
            assert!((f.a0 - o.a0).abs() < 1e-8);
            for k in 0..7 {
                assert!((f.a[k] - o.a[k]).abs() < 1e-8, "a{} {} vs {}", k + 1, f.a[k], o.a[k]);
                assert!((f.b[k] - o.b[k]).abs() < 1e-8, "b{} {} vs {}", k + 1, f.b[k], o.b[k]);
            }
        }
    }

    #[test]
    fn control_force_equals_synthesized_algebra_for_band_limited_response() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let t = random_target(&mut rng, 7);
        let r = random_series(&mut rng, 7);
        let g = ControlGains { kp: 50.0, kd: 0.0 };
        let f = forcing_coefficients(0.0, 0.0, &t, &r, &g, W).unwrap();
        for j in 0..40 {
            let tt = 0.0013 * j as f64;
            let direct = control_force(r.value_at(tt), r.value_at(tt - 1e-4), 1e-4, &t, &g, tt);
            assert!((direct - f.value_at(tt)).abs() < 1e-8);
        }
    }

    fn closed_loop_check(gains: ControlGains) -> (HarmonicCoeffs, HarmonicCoeffs) {
        let p = DuffingParams::linear(2.0 * PI * 19.95, 1.0);
        let spp = 1024;
        let dt = 2.0 * PI / (W * spp as f64);
        let mut c = HarmonicCoeffs::zeros(W, 7);
        c.b[0] = 0.5;
        c.a[2] = 0.05;
        let target = ControlTarget::new(c).unwrap();
        let mut ctl = PdController { target: target.clone(), gains, a_open: 30.0, b_open: -10.0 };
        let mut rig = Rig::new(PlantConfig::new(p), NoiseConfig::silent(), PlantState::default(), dt).unwrap();
        rig.advance(&mut ctl, 200 * spp).unwrap();
        let rec = rig.run(&mut ctl, 4 * spp).unwrap();
        let resp = project(&rec.x, dt, W, 7, 4).unwrap();
        let measured = project(&rec.forcing, dt, W, 7, 4).unwrap();
        let predicted = forcing_coefficients(30.0, -10.0, &target, &resp, &gains, W).unwrap();
        (measured, predicted)
    }

    #[test]
    fn closed_loop_forcing_matches_prediction_with_proportional_control() {
        let (m, p) = closed_loop_check(ControlGains { kp: 2e4, kd: 0.0 });
        assert!((m.a0 - p.a0).abs() < 1e-6);
        for k in 0..7 {
            assert!((m.a[k] - p.a[k]).abs() < 1e-6 && (m.b[k] - p.b[k]).abs() < 1e-6);
        }
    }

    #[test]
    fn closed_loop_forcing_with_derivative_within_backward_difference_bias() {
        let kd = 4.0;
        let (m, p) = closed_loop_check(ControlGains { kp: 2e4, kd });
        let dt = 1.0 / (24.0 * 1024.0);
        for k in 1..=7 {
            let kw = k as f64 * W;
            // Backward difference lags the true derivative by half a step.
            let amp = (p.a[k - 1] - m.a[k - 1]).hypot(p.b[k - 1] - m.b[k - 1]);
            let bound = kd * kw * kw * dt * 0.6 + 1e-6;
            assert!(amp < bound, "harmonic {k}: {amp} > {bound}");
        }
    }

    proptest! {
        #[test]
        fn affine_in_gains(kp1 in 0.0..1e4f64, kd1 in 0.0..10.0f64, kp2 in 0.0..1e4f64, kd2 in 0.0..10.0f64,
                           lam in 0.0..1.0f64, seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = random_target(&mut rng, 7);
            let r = random_series(&mut rng, 7);
            let g1 = ControlGains { kp: kp1, kd: kd1 };
            let g2 = ControlGains { kp: kp2, kd: kd2 };
            let gm = ControlGains { kp: lam * kp1 + (1.0 - lam) * kp2, kd: lam * kd1 + (1.0 - lam) * kd2 };
            let f1 = forcing_coefficients(1.0, 2.0, &t, &r, &g1, W).unwrap();
            let f2 = forcing_coefficients(1.0, 2.0, &t, &r, &g2, W).unwrap();
            let fm = forcing_coefficients(1.0, 2.0, &t, &r, &gm, W).unwrap();
            let tol = 1e-9 * (1.0 + kp1 + kp2 + W * (kd1 + kd2) * 7.0);
            prop_assert!((fm.a0 - (lam * f1.a0 + (1.0 - lam) * f2.a0)).abs() < tol);
            for k in 0..7 {
                prop_assert!((fm.a[k] - (lam * f1.a[k] + (1.0 - lam) * f2.a[k])).abs() < tol);
                prop_assert!((fm.b[k] - (lam * f1.b[k] + (1.0 - lam) * f2.b[k])).abs() < tol);
            }
        }

        #[test]
        fn target_equal_response_is_exactly_open_loop(seed in 0u64..1000, kp in -1e5..1e5f64, kd in -50.0..50.0f64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = random_target(&mut rng, 7);
            let f = forcing_coefficients(0.3, 0.4, &t, t.coeffs(), &ControlGains { kp, kd }, W).unwrap();
            prop_assert_eq!(f.higher_harmonic_norm(), 0.0);
            prop_assert_eq!((f.a[0], f.b[0]), (0.3, 0.4));
        }
    }
}
