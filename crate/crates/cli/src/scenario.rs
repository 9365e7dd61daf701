//! Scenario files: a versioned TOML tree describing the plant, noise ladder,
//! control and sweep protocols, identification options and seeds.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use cbc_core::analytic::TildeParams;
use cbc_core::cbc::{Acceptance, CbcSettings};
use cbc_core::controller::ControlGains;
use cbc_core::experiment::{CbcProtocol, OpenLoopProtocol, TrialConfig};
use cbc_core::ident::{Bounds, FitOptions, IdParams};
use cbc_core::openloop::{Approach, SweepSettings};
use cbc_core::plant::noise::NoiseConfig;
use cbc_core::plant::{DuffingParams, PlantConfig, ShakerFilter, DEFAULT_C_A_TRUE, DEFAULT_DIVERGENCE_BOUND};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub plant: PlantSection,
    #[serde(default)]
    pub noise: NoiseSection,
    #[serde(default)]
    pub control: ControlSection,
    #[serde(default)]
    pub sweeps: SweepSection,
    #[serde(default)]
    pub analytic: AnalyticSection,
    #[serde(default)]
    pub colloc: CollocSection,
    #[serde(default)]
    pub identification: IdentSection,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Relative paths resolve against the current directory.
    #[serde(default)]
    pub output_dir: Option<String>,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

/// Normalized parameters are canonical; `dimensional` holds a parameter set
/// in rig units, taken as given.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSection {
    pub f_n_hz: f64,
    #[serde(default)]
    pub tilde: Option<TildeSection>,
    #[serde(default)]
    pub dimensional: Option<DimensionalSection>,
    #[serde(default = "default_c_a")]
    pub c_a_true: f64,
    #[serde(default)]
    pub shaker: ShakerSection,
    #[serde(default = "default_bound")]
    pub divergence_bound: f64,
}

fn default_c_a() -> f64 {
    DEFAULT_C_A_TRUE
}

fn default_bound() -> f64 {
    DEFAULT_DIVERGENCE_BOUND
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TildeSection {
    pub mu_t: f64,
    pub nu_t: f64,
    pub rho_t: f64,
    pub b_t: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DimensionalSection {
    pub mu: f64,
    pub nu: f64,
    pub rho: f64,
    pub b: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShakerSection {
    #[serde(default)]
    pub enabled: bool,
    #[serde(default = "default_corner")]
    pub corner_hz: f64,
    #[serde(default = "default_shaker_damping")]
    pub damping: f64,
}

fn default_corner() -> f64 {
    60.0
}

fn default_shaker_damping() -> f64 {
    0.7
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    /// RMS noise force of level N1; level Nk has RMS k * sigma_1.
    pub sigma_1: f64,
    pub cutoff_hz: f64,
    pub filter_order: usize,
    pub sample_rate_hz: f64,
    /// Multipliers k of the levels to run.
    pub ladder: Vec<f64>,
}

impl Default for NoiseSection {
    fn default() -> Self {
        let n = NoiseConfig::default();
        Self {
            sigma_1: cbc_core::experiment::NOMINAL_SIGMA_1,
            cutoff_hz: n.cutoff_hz,
            filter_order: n.filter_order,
            sample_rate_hz: n.sample_rate_hz,
            ladder: vec![0.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlSection {
    pub frequency_hz: f64,
    pub kp: f64,
    pub kd: f64,
    pub b1_lo: f64,
    pub b1_hi: f64,
    pub delta_b1: f64,
    pub hh_tolerance: f64,
    pub max_fp_iters: usize,
    pub settle_periods: usize,
    pub avg_periods: usize,
    pub initial_settle_periods: usize,
    pub correct_higher_harmonics: bool,
    /// "strict", "lenient" or "auto".
    pub acceptance: String,
    /// Noise level above which "auto" acceptance turns lenient.
    pub lenient_noise_level: f64,
    pub steps_per_period: usize,
    pub n_harm: usize,
}

impl Default for ControlSection {
    fn default() -> Self {
        let s = CbcSettings::default();
        let g = ControlGains::default();
        Self {
            frequency_hz: cbc_core::experiment::NOMINAL_FREQ_HZ,
            kp: g.kp,
            kd: g.kd,
            b1_lo: 0.05,
            b1_hi: 2.3,
            delta_b1: s.delta_b1,
            hh_tolerance: s.hh_tolerance,
            max_fp_iters: s.max_fp_iters,
            settle_periods: s.settle_periods,
            avg_periods: s.avg_periods,
            initial_settle_periods: s.initial_settle_periods,
            correct_higher_harmonics: s.correct_higher_harmonics,
            acceptance: "auto".into(),
            lenient_noise_level: cbc_core::cbc::DEFAULT_LENIENT_NOISE_LEVEL,
            steps_per_period: s.steps_per_period,
            n_harm: s.n_harm,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    /// Base-acceleration amplitude grid of the open-loop sweeps.
    pub a_lo: f64,
    pub a_hi: f64,
    pub a_step: f64,
    pub approach_f_start_hz: f64,
    pub approach_f_step_hz: f64,
    pub settle_periods: usize,
    pub avg_periods: usize,
    pub initial_settle_periods: usize,
    pub steady_tol: f64,
    pub max_extra_settles: usize,
    pub jump_factor: f64,
    pub steps_per_period: usize,
    pub n_harm: usize,
    /// Low-amplitude linear sweep for modal estimation.
    pub linear_f_lo_hz: f64,
    pub linear_f_hi_hz: f64,
    pub linear_f_step_hz: f64,
    pub linear_a_base: f64,
}

impl Default for SweepSection {
    fn default() -> Self {
        let s = SweepSettings::default();
        Self {
            a_lo: 0.2,
            a_hi: 16.0,
            a_step: 0.2,
            approach_f_start_hz: 12.0,
            approach_f_step_hz: 0.1,
            settle_periods: s.settle_periods,
            avg_periods: s.avg_periods,
            initial_settle_periods: s.initial_settle_periods,
            steady_tol: s.steady_tol,
            max_extra_settles: s.max_extra_settles,
            jump_factor: s.jump_factor,
            steps_per_period: s.steps_per_period,
            n_harm: s.n_harm,
            linear_f_lo_hz: 19.0,
            linear_f_hi_hz: 21.0,
            linear_f_step_hz: 0.1,
            linear_a_base: 0.02,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyticSection {
    pub x_max: f64,
    pub points: usize,
    /// Normalized static deflection of the frequency response.
    pub frf_forcing: f64,
    pub zeta_lo: f64,
    pub zeta_hi: f64,
    pub zeta_points: usize,
}

impl Default for AnalyticSection {
    fn default() -> Self {
        Self {
            x_max: cbc_core::analytic::DEFAULT_X_MAX,
            points: cbc_core::analytic::DEFAULT_GRID_POINTS,
            frf_forcing: 0.012,
            zeta_lo: 0.8,
            zeta_hi: 1.6,
            zeta_points: 801,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollocSection {
    pub n_harm: usize,
    /// The branch is traced over an evenly spaced amplitude grid up to
    /// `x_max`, which passes through both folds.
    pub x_max: f64,
    pub points: usize,
}

impl Default for CollocSection {
    fn default() -> Self {
        Self {
            n_harm: cbc_core::colloc::DEFAULT_N_HARM,
            x_max: 2.3,
            points: 460,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdentSection {
    pub init: IdParams,
    pub lower: IdParams,
    pub upper: IdParams,
    pub multi_start: bool,
    /// Natural frequency forming zeta = f / f_n; the plant value when absent.
    #[serde(default)]
    pub f_n_hz: Option<f64>,
    /// Confidence level of the exported response bands.
    pub band_level: f64,
}

impl Default for IdentSection {
    fn default() -> Self {
        let b = Bounds::default();
        Self {
            init: IdParams::GENERIC_INIT,
            lower: b.lo,
            upper: b.hi,
            multi_start: true,
            f_n_hz: None,
            band_level: 0.95,
        }
    }
}

/// Validation failures, each prefixed with the offending field path.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemaErrors(pub Vec<String>);

impl std::fmt::Display for SchemaErrors {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for SchemaErrors {}

struct Check(Vec<String>);

impl Check {
    fn that(&mut self, ok: bool, path: &str, msg: impl std::fmt::Display) {
        if !ok {
            self.0.push(format!("{path}: {msg}"));
        }
    }

    fn positive(&mut self, v: f64, path: &str) {
        self.that(v > 0.0 && v.is_finite(), path, format!("must be positive and finite, got {v}"));
    }

    fn core(&mut self, r: cbc_core::Result<()>, path: &str) {
        if let Err(e) = r {
            self.0.push(format!("{path}: {e}"));
        }
    }
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, SchemaErrors> {
        let s: Scenario = toml::from_str(text).map_err(|e| SchemaErrors(vec![e.to_string()]))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<(Self, String), SchemaErrors> {
        let text = std::fs::read_to_string(path).map_err(|e| SchemaErrors(vec![format!("{}: {e}", path.display())]))?;
        let s = Self::from_toml(&text)?;
        Ok((s, hash_text(&text)))
    }

    pub fn omega_n(&self) -> f64 {
        2.0 * std::f64::consts::PI * self.plant.f_n_hz
    }

    pub fn params(&self) -> DuffingParams {
        let wn = self.omega_n();
        match (&self.plant.tilde, &self.plant.dimensional) {
            (Some(t), _) => DuffingParams::from_tilde(
                &TildeParams {
                    mu_t: t.mu_t,
                    nu_t: t.nu_t,
                    rho_t: t.rho_t,
                    b_t: t.b_t,
                    zeta: 1.0,
                },
                wn,
            ),
            (None, Some(d)) => DuffingParams {
                omega_n: wn,
                b: d.b,
                mu: d.mu,
                nu: d.nu,
                rho: d.rho,
            },
            (None, None) => DuffingParams::linear(wn, 0.0),
        }
    }

    pub fn plant_config(&self) -> PlantConfig {
        let p = &self.plant;
        PlantConfig {
            params: self.params(),
            c_a_true: p.c_a_true,
            shaker: p.shaker.enabled.then_some(ShakerFilter {
                corner_hz: p.shaker.corner_hz,
                damping: p.shaker.damping,
            }),
            divergence_bound: p.divergence_bound,
        }
    }

    pub fn noise_template(&self) -> NoiseConfig {
        NoiseConfig {
            level: 0.0,
            cutoff_hz: self.noise.cutoff_hz,
            filter_order: self.noise.filter_order,
            sample_rate_hz: self.noise.sample_rate_hz,
            seed: 0,
        }
    }

    /// `(name, noise RMS)` for each ladder entry.
    pub fn levels(&self) -> Vec<(String, f64)> {
        self.noise.ladder.iter().map(|&k| (format!("N{k}"), k * self.noise.sigma_1)).collect()
    }

    pub fn acceptance(&self) -> Acceptance {
        match self.control.acceptance.as_str() {
            "strict" => Acceptance::Strict,
            "lenient" => Acceptance::Lenient,
            _ => Acceptance::Auto(self.control.lenient_noise_level),
        }
    }

    pub fn trial_config(&self) -> TrialConfig {
        let c = &self.control;
        let s = &self.sweeps;
        let id = &self.identification;
        TrialConfig {
            plant: self.plant_config(),
            noise: self.noise_template(),
            freq_hz: c.frequency_hz,
            f_n_hz: id.f_n_hz.unwrap_or(self.plant.f_n_hz),
            openloop: OpenLoopProtocol {
                a_lo: s.a_lo,
                a_hi: s.a_hi,
                a_step: s.a_step,
                approach: Approach {
                    f_start_hz: s.approach_f_start_hz,
                    f_step_hz: s.approach_f_step_hz,
                },
                settings: self.sweep_settings(),
            },
            cbc: CbcProtocol {
                b1_lo: c.b1_lo,
                b1_hi: c.b1_hi,
                gains: ControlGains { kp: c.kp, kd: c.kd },
                settings: CbcSettings {
                    delta_b1: c.delta_b1,
                    hh_tolerance: c.hh_tolerance,
                    max_fp_iters: c.max_fp_iters,
                    settle_periods: c.settle_periods,
                    avg_periods: c.avg_periods,
                    correct_higher_harmonics: c.correct_higher_harmonics,
                    acceptance: self.acceptance(),
                    steps_per_period: c.steps_per_period,
                    n_harm: c.n_harm,
                    initial_settle_periods: c.initial_settle_periods,
                },
            },
            init: id.init,
            fit: FitOptions {
                bounds: Bounds { lo: id.lower, hi: id.upper },
                multi_start: id.multi_start,
                ..Default::default()
            },
        }
    }

    pub fn sweep_settings(&self) -> SweepSettings {
        let s = &self.sweeps;
        SweepSettings {
            settle_periods: s.settle_periods,
            avg_periods: s.avg_periods,
            steps_per_period: s.steps_per_period,
            n_harm: s.n_harm,
            jump_factor: s.jump_factor,
            initial_settle_periods: s.initial_settle_periods,
            steady_tol: s.steady_tol,
            max_extra_settles: s.max_extra_settles,
        }
    }

    /// Every schema violation, each with its field path.
    pub fn validate(&self) -> Result<(), SchemaErrors> {
        let mut c = Check(Vec::new());
        c.that(
            self.schema_version == SCHEMA_VERSION,
            "schema_version",
            format!("unsupported version {} (expected {SCHEMA_VERSION})", self.schema_version),
        );
        c.that(!self.name.trim().is_empty(), "name", "must not be empty");
        c.that(
            self.name.chars().all(|ch| ch.is_ascii_alphanumeric() || "-_.".contains(ch)),
            "name",
            "may contain only ASCII letters, digits, '-', '_' and '.'",
        );

        let p = &self.plant;
        c.positive(p.f_n_hz, "plant.f_n_hz");
        c.that(
            p.tilde.is_some() != p.dimensional.is_some(),
            "plant",
            "exactly one of plant.tilde and plant.dimensional must be given",
        );
        c.positive(p.c_a_true, "plant.c_a_true");
        c.positive(p.divergence_bound, "plant.divergence_bound");
        if p.shaker.enabled {
            c.positive(p.shaker.corner_hz, "plant.shaker.corner_hz");
            c.positive(p.shaker.damping, "plant.shaker.damping");
        }
        if p.f_n_hz > 0.0 && (p.tilde.is_some() || p.dimensional.is_some()) {
            c.core(self.params().validate(), "plant");
        }

        let n = &self.noise;
        c.that(n.sigma_1 >= 0.0 && n.sigma_1.is_finite(), "noise.sigma_1", "must be finite and >= 0");
        c.positive(n.sample_rate_hz, "noise.sample_rate_hz");
        c.that(
            n.cutoff_hz > 0.0 && n.cutoff_hz < 0.5 * n.sample_rate_hz,
            "noise.cutoff_hz",
            format!("must lie in (0, Nyquist = {} Hz), got {}", 0.5 * n.sample_rate_hz, n.cutoff_hz),
        );
        c.that(n.filter_order >= 1, "noise.filter_order", "must be at least 1");
        c.that(!n.ladder.is_empty(), "noise.ladder", "must not be empty");
        for (i, k) in n.ladder.iter().enumerate() {
            c.that(*k >= 0.0 && k.is_finite(), &format!("noise.ladder[{i}]"), format!("multiplier must be >= 0, got {k}"));
        }

        let ctl = &self.control;
        c.positive(ctl.frequency_hz, "control.frequency_hz");
        c.that(ctl.b1_lo > 0.0 && ctl.b1_hi > ctl.b1_lo, "control.b1_lo", "needs 0 < b1_lo < b1_hi");
        c.that(
            ["strict", "lenient", "auto"].contains(&ctl.acceptance.as_str()),
            "control.acceptance",
            format!("must be \"strict\", \"lenient\" or \"auto\", got {:?}", ctl.acceptance),
        );
        c.core(ControlGains { kp: ctl.kp, kd: ctl.kd }.validate(), "control");

        let s = &self.sweeps;
        c.that(s.a_lo > 0.0 && s.a_hi > s.a_lo, "sweeps.a_lo", "needs 0 < a_lo < a_hi");
        c.positive(s.a_step, "sweeps.a_step");
        c.that(
            s.approach_f_start_hz > 0.0 && s.approach_f_start_hz < ctl.frequency_hz,
            "sweeps.approach_f_start_hz",
            "must lie between 0 and control.frequency_hz",
        );
        c.positive(s.approach_f_step_hz, "sweeps.approach_f_step_hz");
        c.that(s.linear_f_lo_hz > 0.0 && s.linear_f_hi_hz > s.linear_f_lo_hz, "sweeps.linear_f_lo_hz", "needs 0 < linear_f_lo_hz < linear_f_hi_hz");
        c.positive(s.linear_f_step_hz, "sweeps.linear_f_step_hz");
        c.positive(s.linear_a_base, "sweeps.linear_a_base");
        c.core(self.sweep_settings().validate(), "sweeps");

        let a = &self.analytic;
        c.positive(a.x_max, "analytic.x_max");
        c.that(a.points >= 20, "analytic.points", "must be at least 20");
        c.that(a.frf_forcing >= 0.0, "analytic.frf_forcing", "must be >= 0");
        c.that(a.zeta_lo > 0.0 && a.zeta_hi > a.zeta_lo, "analytic.zeta_lo", "needs 0 < zeta_lo < zeta_hi");
        c.that(a.zeta_points >= 2, "analytic.zeta_points", "must be at least 2");

        let co = &self.colloc;
        c.that(co.n_harm >= 1, "colloc.n_harm", "must be at least 1");
        c.positive(co.x_max, "colloc.x_max");
        c.that(co.points >= 2, "colloc.points", "must be at least 2");

        let id = &self.identification;
        let b = Bounds { lo: id.lower, hi: id.upper };
        c.that(b.contains(&id.init), "identification.init", "must lie inside [lower, upper]");
        c.that(id.band_level > 0.0 && id.band_level < 1.0, "identification.band_level", "must lie in (0, 1)");
        if let Some(f) = id.f_n_hz {
            c.positive(f, "identification.f_n_hz");
        }
        c.that(!self.seeds.is_empty(), "seeds", "must not be empty");

        if c.0.is_empty() {
            if let Err(e) = self.trial_config().validate() {
                c.0.push(format!("scenario: {e}"));
            }
            if let Err(e) = self.noise_template().with_level(1.0).validate() {
                c.0.push(format!("noise: {e}"));
            }
        }
        if c.0.is_empty() {
            Ok(())
        } else {
            Err(SchemaErrors(c.0))
        }
    }
}

/// Hex SHA-256 of the scenario text.
pub fn hash_text(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}
