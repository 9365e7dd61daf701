//! Band-limited process noise: uniform white samples through a Butterworth
//! low-pass filter, rescaled to a requested RMS.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    /// RMS of the generated force (0 disables noise).
    pub level: f64,
    pub cutoff_hz: f64,
    pub filter_order: usize,
    pub sample_rate_hz: f64,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            level: 0.0,
            cutoff_hz: 50.0,
            filter_order: 2,
            sample_rate_hz: 5000.0,
            seed: 0,
        }
    }
}

impl NoiseConfig {
    pub fn silent() -> Self {
        Self::default()
    }

    pub fn with_level(&self, level: f64) -> Self {
        Self { level, ..*self }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..*self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.level >= 0.0) || !self.level.is_finite() {
            return invalid(format!("noise level must be finite and >= 0, got {}", self.level));
        }
        if !(self.sample_rate_hz > 0.0) || !self.sample_rate_hz.is_finite() {
            return invalid(format!("noise sample rate must be positive, got {}", self.sample_rate_hz));
        }
        if !(self.cutoff_hz > 0.0) || self.cutoff_hz >= 0.5 * self.sample_rate_hz {
            return invalid(format!(
                "noise cutoff {} Hz must lie in (0, Nyquist = {} Hz)",
                self.cutoff_hz,
                0.5 * self.sample_rate_hz
            ));
        }
        if self.filter_order == 0 {
            return invalid("noise filter order must be at least 1");
        }
        Ok(())
    }
}

/// Second-order section in transposed direct form II.
#[derive(Clone, Debug)]
struct Biquad {
    b: [f64; 3],
    a: [f64; 2],
    z: [f64; 2],
}

impl Biquad {
    #[inline]
    fn process(&mut self, x: f64) -> f64 {
        let y = self.b[0] * x + self.z[0];
        self.z[0] = self.b[1] * x - self.a[0] * y + self.z[1];
        self.z[1] = self.b[2] * x - self.a[1] * y;
        y
    }

    /// Complex response at normalized angle `w` (rad/sample).
    fn response(&self, w: f64) -> (f64, f64) {
        let (s1, c1) = (-w).sin_cos();
        let (s2, c2) = (-2.0 * w).sin_cos();
        let num = (self.b[0] + self.b[1] * c1 + self.b[2] * c2, self.b[1] * s1 + self.b[2] * s2);
        let den = (1.0 + self.a[0] * c1 + self.a[1] * c2, self.a[0] * s1 + self.a[1] * s2);
        let d2 = den.0 * den.0 + den.1 * den.1;
        (
            (num.0 * den.0 + num.1 * den.1) / d2,
            (num.1 * den.0 - num.0 * den.1) / d2,
        )
    }
}

/// Digital Butterworth low-pass by bilinear transform with prewarping.
#[derive(Clone, Debug)]
pub struct ButterworthLowpass {
    sections: Vec<Biquad>,
    sample_rate_hz: f64,
}

impl ButterworthLowpass {
    pub fn design(order: usize, cutoff_hz: f64, sample_rate_hz: f64) -> Result<Self> {
        if order == 0 {
            return invalid("filter order must be at least 1");
        }
        if !(cutoff_hz > 0.0) || cutoff_hz >= 0.5 * sample_rate_hz {
            return invalid(format!("cutoff {cutoff_hz} Hz is not below Nyquist"));
        }
        let k = 2.0 * sample_rate_hz;
        let wc = k * (PI * cutoff_hz / sample_rate_hz).tan();
        let mut sections = Vec::new();
        for i in 0..order / 2 {
            // Analog pair s^2 + 2 z wc s + wc^2.
            let z = (PI * (2 * i + 1) as f64 / (2 * order) as f64).sin();
            let a1 = 2.0 * z * wc;
            let a0 = wc * wc;
            let d0 = k * k + a1 * k + a0;
            sections.push(Biquad {
                b: [a0 / d0, 2.0 * a0 / d0, a0 / d0],
                a: [(2.0 * a0 - 2.0 * k * k) / d0, (k * k - a1 * k + a0) / d0],
                z: [0.0; 2],
            });
        }
        if order % 2 == 1 {
            let d0 = k + wc;
            sections.push(Biquad {
                b: [wc / d0, wc / d0, 0.0],
                a: [(wc - k) / d0, 0.0],
                z: [0.0; 2],
            });
        }
        Ok(Self { sections, sample_rate_hz })
    }

    #[inline]
    pub fn process(&mut self, x: f64) -> f64 {
        self.sections.iter_mut().fold(x, |v, s| s.process(v))
    }

    pub fn reset(&mut self) {
        for s in &mut self.sections {
            s.z = [0.0; 2];
        }
    }

    /// Magnitude of the frequency response at `f_hz`.
    pub fn magnitude(&self, f_hz: f64) -> f64 {
        let w = 2.0 * PI * f_hz / self.sample_rate_hz;
        let (mut re, mut im) = (1.0, 0.0);
        for s in &self.sections {
            let (r, i) = s.response(w);
            (re, im) = (re * r - im * i, re * i + im * r);
        }
        re.hypot(im)
    }
}

/// Noise sequence of `ceil(duration * sample_rate)` samples, RMS = level.
pub fn make_noise(config: &NoiseConfig, duration: f64) -> Result<Vec<f64>> {
    if !(duration > 0.0) || !duration.is_finite() {
        return invalid(format!("noise duration must be positive, got {duration}"));
    }
    let n = (duration * config.sample_rate_hz).ceil() as usize;
    make_noise_block(config, 0, n)
}

/// Independent block `stream` of `n` samples for the same seed.
pub fn make_noise_block(config: &NoiseConfig, stream: u64, n: usize) -> Result<Vec<f64>> {
    config.validate()?;
    if config.level == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let mut filter = ButterworthLowpass::design(config.filter_order, config.cutoff_hz, config.sample_rate_hz)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(stream);
    let warmup = ((50.0 * config.sample_rate_hz / config.cutoff_hz).ceil() as usize).max(2000);
    for _ in 0..warmup {
        filter.process(rng.random_range(-1.0..1.0));
    }
    let mut out: Vec<f64> = (0..n).map(|_| filter.process(rng.random_range(-1.0..1.0))).collect();
    let rms = (out.iter().map(|v| v * v).sum::<f64>() / n.max(1) as f64).sqrt();
    if rms > 0.0 {
        let g = config.level / rms;
        out.iter_mut().for_each(|v| *v *= g);
    }
    Ok(out)
}
