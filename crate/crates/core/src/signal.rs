//! Truncated Fourier series: projection of sampled signals, synthesis and
//! amplitude/phase/residual metrics.
//!
//! A series with `n_harm` harmonics at angular frequency `omega` reads
//!
//! ```text
//! s(t) = a0/2 + sum_k (a_k cos(k omega t) + b_k sin(k omega t))
//! ```

use std::f64::consts::PI;

use serde::de::{self, MapAccess, Visitor};
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{invalid, Error, Result};

/// Harmonic count used by the controller.
pub const DEFAULT_N_HARM: usize = 7;

/// Relative slack allowed when checking that a period is an integer number
/// of samples.
const PERIOD_SLACK: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct HarmonicCoeffs {
    pub omega: f64,
    pub n_harm: usize,
    pub a0: f64,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl HarmonicCoeffs {
    pub fn zeros(omega: f64, n_harm: usize) -> Self {
        Self {
            omega,
            n_harm,
            a0: 0.0,
            a: vec![0.0; n_harm],
            b: vec![0.0; n_harm],
        }
    }

    /// Builds a validated series from its parts.
    pub fn new(omega: f64, a0: f64, a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        let c = Self {
            omega,
            n_harm: a.len(),
            a0,
            a,
            b,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.omega > 0.0) || !self.omega.is_finite() {
            return invalid(format!("omega must be positive and finite, got {}", self.omega));
        }
        if self.n_harm == 0 {
            return invalid("n_harm must be at least 1");
        }
        if self.a.len() != self.n_harm || self.b.len() != self.n_harm {
            return invalid(format!(
                "coefficient lengths ({}, {}) do not match n_harm = {}",
                self.a.len(),
                self.b.len(),
                self.n_harm
            ));
        }
        Ok(())
    }

    pub fn period(&self) -> f64 {
        2.0 * PI / self.omega
    }

    /// Cosine coefficient of harmonic `k` (1-based).
    pub fn a_k(&self, k: usize) -> f64 {
        self.a[k - 1]
    }

    pub fn b_k(&self, k: usize) -> f64 {
        self.b[k - 1]
    }

    pub fn value_at(&self, t: f64) -> f64 {
        let mut s = 0.5 * self.a0;
        for k in 1..=self.n_harm {
            let (sn, cs) = (k as f64 * self.omega * t).sin_cos();
            s += self.a[k - 1] * cs + self.b[k - 1] * sn;
        }
        s
    }

    /// Exact time derivative of the series.
    pub fn derivative_at(&self, t: f64) -> f64 {
        let mut s = 0.0;
        for k in 1..=self.n_harm {
            let kw = k as f64 * self.omega;
            let (sn, cs) = (kw * t).sin_cos();
            s += kw * (self.b[k - 1] * cs - self.a[k - 1] * sn);
        }
        s
    }

    pub fn fundamental_amplitude(&self) -> f64 {
        self.a[0].hypot(self.b[0])
    }

    /// Phase of the fundamental such that it reads `X cos(omega t + phase)`.
    pub fn fundamental_phase(&self) -> f64 {
        wrap_phase((-self.b[0]).atan2(self.a[0]))
    }

    /// `sqrt(a0^2/2 + sum_{k>=2} (a_k^2 + b_k^2))`.
    pub fn higher_harmonic_norm(&self) -> f64 {
        let mut s = 0.5 * self.a0 * self.a0;
        for k in 1..self.n_harm {
            s += self.a[k] * self.a[k] + self.b[k] * self.b[k];
        }
        s.sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.a0.is_finite()
            && self.a.iter().all(|v| v.is_finite())
            && self.b.iter().all(|v| v.is_finite())
    }

    /// Errors unless both series share frequency and harmonic count.
    pub fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.n_harm != other.n_harm {
            return Err(Error::HarmonicMismatch(format!(
                "n_harm {} vs {}",
                self.n_harm, other.n_harm
            )));
        }
        let tol = 1e-12 * self.omega.abs().max(other.omega.abs());
        if (self.omega - other.omega).abs() > tol {
            return Err(Error::HarmonicMismatch(format!(
                "omega {} vs {}",
                self.omega, other.omega
            )));
        }
        Ok(())
    }

    /// Copy truncated or zero-padded to `n_harm` harmonics.
    pub fn resized(&self, n_harm: usize) -> Self {
        let mut out = Self::zeros(self.omega, n_harm);
        out.a0 = self.a0;
        let m = n_harm.min(self.n_harm);
        out.a[..m].copy_from_slice(&self.a[..m]);
        out.b[..m].copy_from_slice(&self.b[..m]);
        out
    }

    /// Column names of the flat record for `n_harm` harmonics.
    pub fn flat_header(n_harm: usize) -> Vec<String> {
        let mut h = vec!["omega".to_string(), "n_harm".to_string(), "a0".to_string()];
        h.extend((1..=n_harm).map(|k| format!("a{k}")));
        h.extend((1..=n_harm).map(|k| format!("b{k}")));
        h
    }

    /// Flat record as decimal text with 17 significant digits.
    pub fn flat_values(&self) -> Vec<String> {
        let mut v = vec![fmt17(self.omega), self.n_harm.to_string(), fmt17(self.a0)];
        v.extend(self.a.iter().map(|x| fmt17(*x)));
        v.extend(self.b.iter().map(|x| fmt17(*x)));
        v
    }
}

/// Formats with 17 significant digits, enough to round-trip any `f64`.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

impl Serialize for HarmonicCoeffs {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut m = s.serialize_map(Some(3 + 2 * self.n_harm))?;
        m.serialize_entry("omega", &self.omega)?;
        m.serialize_entry("n_harm", &self.n_harm)?;
        m.serialize_entry("a0", &self.a0)?;
        for (k, v) in self.a.iter().enumerate() {
            m.serialize_entry(&format!("a{}", k + 1), v)?;
        }
        for (k, v) in self.b.iter().enumerate() {
            m.serialize_entry(&format!("b{}", k + 1), v)?;
        }
        m.end()
    }
}

impl<'de> Deserialize<'de> for HarmonicCoeffs {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct FlatVisitor;

        impl<'de> Visitor<'de> for FlatVisitor {
            type Value = HarmonicCoeffs;

            fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
                f.write_str("a flat harmonic coefficient record")
            }

            fn visit_map<M: MapAccess<'de>>(self, mut map: M) -> std::result::Result<Self::Value, M::Error> {
                let mut entries: Vec<(String, f64)> = Vec::new();
                while let Some((k, v)) = map.next_entry::<String, f64>()? {
                    entries.push((k, v));
                }
                let get = |name: &str| entries.iter().find(|(k, _)| k == name).map(|(_, v)| *v);
                let omega = get("omega").ok_or_else(|| de::Error::missing_field("omega"))?;
                let n = get("n_harm").ok_or_else(|| de::Error::missing_field("n_harm"))?;
                if n < 1.0 || n.fract() != 0.0 {
                    return Err(de::Error::custom("n_harm must be a positive integer"));
                }
                let n = n as usize;
                let a0 = get("a0").ok_or_else(|| de::Error::missing_field("a0"))?;
                let mut a = Vec::with_capacity(n);
                let mut b = Vec::with_capacity(n);
                for k in 1..=n {
                    a.push(get(&format!("a{k}")).ok_or_else(|| de::Error::custom(format!("missing a{k}")))?);
                    b.push(get(&format!("b{k}")).ok_or_else(|| de::Error::custom(format!("missing b{k}")))?);
                }
                HarmonicCoeffs::new(omega, a0, a, b).map_err(de::Error::custom)
            }
        }

        d.deserialize_map(FlatVisitor)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HarmonicMetrics {
    pub fundamental_amplitude: f64,
    pub fundamental_phase: f64,
    pub higher_harmonic_norm: f64,
    pub residual_rms: f64,
}

/// Wraps an angle into (-pi, pi].
pub fn wrap_phase(phi: f64) -> f64 {
    let mut p = phi.rem_euclid(2.0 * PI);
    if p > PI {
        p -= 2.0 * PI;
    }
    if p <= -PI {
        p += 2.0 * PI;
    }
    p
}

/// Integer number of samples per period for `omega` at step `dt`.
pub fn samples_per_period(omega: f64, dt: f64) -> Result<usize> {
    if !(omega > 0.0) || !(dt > 0.0) || !omega.is_finite() || !dt.is_finite() {
        return invalid(format!("omega ({omega}) and dt ({dt}) must be positive"));
    }
    let spp_f = 2.0 * PI / (omega * dt);
    let spp = spp_f.round();
    if spp < 1.0 || (spp_f - spp).abs() > PERIOD_SLACK * spp {
        return Err(Error::Window(format!(
            "period is {spp_f:.9} samples, not an integer"
        )));
    }
    Ok(spp as usize)
}

/// Checks that `len` samples cover exactly `n_periods` periods (one sample
/// of slack) and returns the samples per period.
fn check_window(len: usize, dt: f64, omega: f64, n_harm: usize, n_periods: usize) -> Result<usize> {
    if n_periods == 0 {
        return invalid("n_periods must be at least 1");
    }
    if n_harm == 0 {
        return invalid("n_harm must be at least 1");
    }
    let spp = samples_per_period(omega, dt)?;
    if spp < 2 * n_harm + 1 {
        return Err(Error::Window(format!(
            "{spp} samples per period cannot resolve {n_harm} harmonics (need {})",
            2 * n_harm + 1
        )));
    }
    let need = n_periods * spp;
    if len < need || len > need + 1 {
        return Err(Error::Window(format!(
            "{len} samples do not cover {n_periods} periods of {spp} samples"
        )));
    }
    Ok(spp)
}

/// Fourier coefficients of `samples`, computed per period by quadrature and
/// averaged over `n_periods`. The phase reference is the first sample.
pub fn project(samples: &[f64], dt: f64, omega: f64, n_harm: usize, n_periods: usize) -> Result<HarmonicCoeffs> {
    let spp = check_window(samples.len(), dt, omega, n_harm, n_periods)?;
    let used = &samples[..n_periods * spp];
    if used.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("sample sequence".into()));
    }
    let table = PhaseTable::new(spp, n_harm);
    let mut out = HarmonicCoeffs::zeros(omega, n_harm);
    let mut sum0 = 0.0;
    let mut sa = vec![0.0; n_harm];
    let mut sb = vec![0.0; n_harm];
    for period in used.chunks_exact(spp) {
        for (j, &s) in period.iter().enumerate() {
            sum0 += s;
            for k in 0..n_harm {
                let (c, sn) = table.get(k + 1, j);
                sa[k] += s * c;
                sb[k] += s * sn;
            }
        }
    }
    let scale = 2.0 / (spp * n_periods) as f64;
    out.a0 = sum0 * scale;
    for k in 0..n_harm {
        out.a[k] = sa[k] * scale;
        out.b[k] = sb[k] * scale;
    }
    Ok(out)
}

/// cos/sin of `2 pi k j / spp` for one period.
struct PhaseTable {
    spp: usize,
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl PhaseTable {
    fn new(spp: usize, _n_harm: usize) -> Self {
        let (sin, cos) = (0..spp)
            .map(|j| (2.0 * PI * j as f64 / spp as f64).sin_cos())
            .unzip();
        Self { spp, cos, sin }
    }

    fn get(&self, k: usize, j: usize) -> (f64, f64) {
        let idx = (k * j) % self.spp;
        (self.cos[idx], self.sin[idx])
    }
}

pub fn synthesize(coeffs: &HarmonicCoeffs, times: &[f64]) -> Vec<f64> {
    times.iter().map(|&t| coeffs.value_at(t)).collect()
}

/// Amplitude, phase, higher-harmonic norm and fit residual of `samples`
/// against `coeffs`, using the same window convention as [`project`].
pub fn metrics(coeffs: &HarmonicCoeffs, samples: &[f64], dt: f64) -> Result<HarmonicMetrics> {
    coeffs.validate()?;
    let spp = samples_per_period(coeffs.omega, dt)?;
    let n_periods = samples.len() / spp;
    if n_periods == 0 {
        return Err(Error::Window(format!(
            "{} samples are shorter than one period of {spp}",
            samples.len()
        )));
    }
    check_window(samples.len(), dt, coeffs.omega, coeffs.n_harm, n_periods)?;
    let used = &samples[..n_periods * spp];
    let mut ss = 0.0;
    for (j, &s) in used.iter().enumerate() {
        let r = s - coeffs.value_at(j as f64 * dt);
        ss += r * r;
    }
    Ok(HarmonicMetrics {
        fundamental_amplitude: coeffs.fundamental_amplitude(),
        fundamental_phase: coeffs.fundamental_phase(),
        higher_harmonic_norm: coeffs.higher_harmonic_norm(),
        residual_rms: (ss / used.len() as f64).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const W: f64 = 2.0 * PI * 24.0;
    const SPP: usize = 64;

    fn dt() -> f64 {
        2.0 * PI / (W * SPP as f64)
    }

    fn sample(f: impl Fn(f64) -> f64, n_periods: usize) -> Vec<f64> {
        (0..n_periods * SPP).map(|j| f(j as f64 * dt())).collect()
    }

    fn random_coeffs(rng: &mut ChaCha8Rng, n: usize) -> HarmonicCoeffs {
        let mut c = HarmonicCoeffs::zeros(W, n);
        c.a0 = rng.random_range(-1.0..1.0);
        for k in 0..n {
            c.a[k] = rng.random_range(-1.0..1.0);
            c.b[k] = rng.random_range(-1.0..1.0);
        }
        c
    }

    fn assert_coeffs_close(x: &HarmonicCoeffs, y: &HarmonicCoeffs, tol: f64) {
        assert_eq!(x.n_harm, y.n_harm);
        assert_abs_diff_eq!(x.a0, y.a0, epsilon = tol);
        for k in 0..x.n_harm {
            assert_abs_diff_eq!(x.a[k], y.a[k], epsilon = tol);
            assert_abs_diff_eq!(x.b[k], y.b[k], epsilon = tol);
        }
    }

    #[test]
    fn pure_cosine_projects_to_a1() {
        let s = sample(|t| 2.0 * (W * t).cos(), 3);
        let c = project(&s, dt(), W, 7, 3).unwrap();
        assert_abs_diff_eq!(c.a[0], 2.0, epsilon = 1e-10);
        assert_abs_diff_eq!(c.a0, 0.0, epsilon = 1e-10);
        assert_abs_diff_eq!(c.b[0], 0.0, epsilon = 1e-10);
        for k in 1..7 {
            assert_abs_diff_eq!(c.a[k], 0.0, epsilon = 1e-10);
            assert_abs_diff_eq!(c.b[k], 0.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn constant_projects_to_half_a0() {
        let s = sample(|_| 0.5, 2);
        let c = project(&s, dt(), W, 7, 2).unwrap();
        assert_abs_diff_eq!(0.5 * c.a0, 0.5, epsilon = 1e-12);
        assert!(c.a.iter().chain(c.b.iter()).all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn one_sample_of_slack_is_accepted() {
        let s = sample(|t| (W * t).cos(), 2);
        let mut longer = s.clone();
        longer.push(1.0);
        let c = project(&longer, dt(), W, 7, 2).unwrap();
        assert_abs_diff_eq!(c.a[0], 1.0, epsilon = 1e-12);
        longer.push(1.0);
        assert!(matches!(project(&longer, dt(), W, 7, 2), Err(Error::Window(_))));
    }

    #[test]
    fn rejects_short_or_misaligned_windows() {
        let s = sample(|t| (W * t).cos(), 2);
        assert!(matches!(project(&s[..100], dt(), W, 7, 2), Err(Error::Window(_))));
        assert!(matches!(project(&s, dt() * 1.01, W, 7, 2), Err(Error::Window(_))));
        assert!(project(&s, dt(), W, 7, 0).is_err());
        // 64 samples per period cannot carry 32 harmonics.
        assert!(matches!(project(&s, dt(), W, 32, 2), Err(Error::Window(_))));
    }

    #[test]
    fn rejects_non_finite_samples() {
        let mut s = sample(|t| (W * t).cos(), 1);
        s[3] = f64::NAN;
        assert!(matches!(project(&s, dt(), W, 3, 1), Err(Error::NonFinite(_))));
    }

    #[test]
    fn synthesize_basics() {
        let z = HarmonicCoeffs::zeros(W, 7);
        assert!(synthesize(&z, &[0.0, 0.1, 0.7]).iter().all(|v| *v == 0.0));
        let mut c = HarmonicCoeffs::zeros(W, 7);
        c.a[0] = 3.0;
        c.b[0] = 4.0;
        assert_eq!(synthesize(&c, &[0.0])[0], 3.0);
    }

    #[test]
    fn round_trip_random_series() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let c = random_coeffs(&mut rng, 7);
            let times: Vec<f64> = (0..2 * SPP).map(|j| j as f64 * dt()).collect();
            let back = project(&synthesize(&c, &times), dt(), W, 7, 2).unwrap();
            assert_coeffs_close(&back, &c, 1e-10);
        }
    }

    #[test]
    fn three_four_five() {
        let mut c = HarmonicCoeffs::zeros(W, 7);
        c.a[0] = 3.0;
        c.b[0] = 4.0;
        let times: Vec<f64> = (0..SPP).map(|j| j as f64 * dt()).collect();
        let m = metrics(&c, &synthesize(&c, &times), dt()).unwrap();
        assert_abs_diff_eq!(m.fundamental_amplitude, 5.0, epsilon = 1e-14);
        assert_abs_diff_eq!(m.residual_rms, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn pure_cosine_has_zero_phase_and_no_higher_harmonics() {
        let s = sample(|t| 1.7 * (W * t).cos(), 4);
        let c = project(&s, dt(), W, 7, 4).unwrap();
        let m = metrics(&c, &s, dt()).unwrap();
        assert_abs_diff_eq!(m.fundamental_phase, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m.higher_harmonic_norm, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn metrics_rejects_mismatched_window() {
        let s = sample(|t| (W * t).cos(), 2);
        let c = project(&s, dt(), W, 7, 2).unwrap();
        assert!(matches!(metrics(&c, &s[..SPP + 10], dt()), Err(Error::Window(_))));
        assert!(matches!(metrics(&c, &s[..10], dt()), Err(Error::Window(_))));
    }

    fn uniform_noise(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
        // Uniform on [-sqrt(3), sqrt(3)) has unit variance.
        sigma * 3f64.sqrt() * rng.random_range(-1.0..1.0)
    }

    #[test]
    fn residual_rms_recovers_noise_level() {
        let sigma = 0.1;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 200;
        let s: Vec<f64> = (0..n * SPP)
            .map(|j| 0.8 * (W * j as f64 * dt() + 0.3).cos() + uniform_noise(&mut rng, sigma))
            .collect();
        let c = project(&s, dt(), W, 7, n).unwrap();
        let m = metrics(&c, &s, dt()).unwrap();
        assert!((m.residual_rms / sigma - 1.0).abs() < 0.1, "rms {}", m.residual_rms);
    }

    #[test]
    fn averaging_reduces_scatter_by_sqrt_n() {
        let sigma = 0.1;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let trials = 200;
        let scatter = |n_periods: usize, rng: &mut ChaCha8Rng| {
            let vals: Vec<f64> = (0..trials)
                .map(|_| {
                    let s: Vec<f64> = (0..n_periods * SPP)
                        .map(|j| (W * j as f64 * dt()).cos() + uniform_noise(rng, sigma))
                        .collect();
                    project(&s, dt(), W, 7, n_periods).unwrap().a[0]
                })
                .collect();
            let mean = vals.iter().sum::<f64>() / trials as f64;
            (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (trials - 1) as f64).sqrt()
        };
        let s1 = scatter(1, &mut rng);
        let s10 = scatter(10, &mut rng);
        let ratio = s10 / s1;
        let expected = 1.0 / 10f64.sqrt();
        assert!((ratio / expected - 1.0).abs() < 0.3, "ratio {ratio}, expected {expected}");
    }

    #[test]
    fn wrap_phase_range() {
        assert_eq!(wrap_phase(-PI), PI);
        assert_eq!(wrap_phase(PI), PI);
        assert_abs_diff_eq!(wrap_phase(3.0 * PI / 2.0), -PI / 2.0, epsilon = 1e-15);
        // B1 = +0 with A1 < 0 lands on the closed end of the interval.
        let mut c = HarmonicCoeffs::zeros(W, 1);
        c.a[0] = -1.0;
        assert_eq!(c.fundamental_phase(), PI);
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let c = random_coeffs(&mut rng, 5);
        let h = 1e-7;
        for &t in &[0.0, 0.013, 0.2] {
            let fd = (c.value_at(t + h) - c.value_at(t - h)) / (2.0 * h);
            assert!((fd - c.derivative_at(t)).abs() < 1e-5 * (1.0 + fd.abs()));
        }
    }

    #[test]
    fn json_flat_record_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = random_coeffs(&mut rng, 7);
        let js = serde_json::to_string(&c).unwrap();
        assert!(js.contains("\"a7\"") && js.contains("\"b1\""));
        let back: HarmonicCoeffs = serde_json::from_str(&js).unwrap();
        assert_eq!(back, c);
        let vals = c.flat_values();
        assert_eq!(vals.len(), HarmonicCoeffs::flat_header(7).len());
        assert_eq!(vals[2].parse::<f64>().unwrap(), c.a0);
    }

    #[test]
    fn invalid_coefficients_rejected() {
        assert!(HarmonicCoeffs::new(-1.0, 0.0, vec![1.0], vec![0.0]).is_err());
        assert!(HarmonicCoeffs::new(1.0, 0.0, vec![1.0, 2.0], vec![0.0]).is_err());
        assert!(HarmonicCoeffs::new(1.0, 0.0, vec![], vec![]).is_err());
        let a = HarmonicCoeffs::zeros(1.0, 3);
        assert!(a.check_compatible(&HarmonicCoeffs::zeros(1.0, 4)).is_err());
        assert!(a.check_compatible(&HarmonicCoeffs::zeros(1.1, 3)).is_err());
    }

    fn coeff_strategy() -> impl Strategy<Value = HarmonicCoeffs> {
        (
            -5.0..5.0f64,
            prop::collection::vec(-5.0..5.0f64, 7),
            prop::collection::vec(-5.0..5.0f64, 7),
        )
            .prop_map(|(a0, a, b)| HarmonicCoeffs::new(W, a0, a, b).unwrap())
    }

    proptest! {
        #[test]
        fn projection_is_linear(c1 in coeff_strategy(), c2 in coeff_strategy(),
                                alpha in -3.0..3.0f64, beta in -3.0..3.0f64) {
            let times: Vec<f64> = (0..SPP).map(|j| j as f64 * dt()).collect();
            let s1 = synthesize(&c1, &times);
            let s2 = synthesize(&c2, &times);
            let mix: Vec<f64> = s1.iter().zip(&s2).map(|(x, y)| alpha * x + beta * y).collect();
            let p = project(&mix, dt(), W, 7, 1).unwrap();
            let p1 = project(&s1, dt(), W, 7, 1).unwrap();
            let p2 = project(&s2, dt(), W, 7, 1).unwrap();
            prop_assert!((p.a0 - (alpha * p1.a0 + beta * p2.a0)).abs() < 1e-10);
            for k in 0..7 {
                prop_assert!((p.a[k] - (alpha * p1.a[k] + beta * p2.a[k])).abs() < 1e-10);
                prop_assert!((p.b[k] - (alpha * p1.b[k] + beta * p2.b[k])).abs() < 1e-10);
            }
        }

        #[test]
        fn parseval(c in coeff_strategy()) {
            let times: Vec<f64> = (0..SPP).map(|j| j as f64 * dt()).collect();
            let s = synthesize(&c, &times);
            let ms = s.iter().map(|v| v * v).sum::<f64>() / SPP as f64;
            let series = (0.5 * c.a0).powi(2)
                + 0.5 * c.a.iter().chain(c.b.iter()).map(|v| v * v).sum::<f64>();
            prop_assert!((ms - series).abs() <= 1e-8 * series.max(1e-12));
        }

        #[test]
        fn phase_round_trip(x in 1e-3..10.0f64, theta in -PI..PI) {
            let theta = if theta == -PI { PI } else { theta };
            let s = sample(|t| x * (W * t + theta).cos(), 1);
            let c = project(&s, dt(), W, 7, 1).unwrap();
            let m = metrics(&c, &s, dt()).unwrap();
            prop_assert!((m.fundamental_amplitude - x).abs() < 1e-8 * x.max(1.0));
            let d = wrap_phase(m.fundamental_phase - theta);
            prop_assert!(d.abs() < 1e-8);
            prop_assert!(m.fundamental_phase > -PI && m.fundamental_phase <= PI);
        }

        #[test]
        fn metrics_non_negative(c in coeff_strategy()) {
            let times: Vec<f64> = (0..SPP).map(|j| j as f64 * dt()).collect();
            let m = metrics(&c, &synthesize(&c, &times), dt()).unwrap();
            prop_assert!(m.fundamental_amplitude >= 0.0);
            prop_assert!(m.higher_harmonic_norm >= 0.0);
            prop_assert!(m.residual_rms >= 0.0 && m.residual_rms < 1e-10);
        }
    }
}
