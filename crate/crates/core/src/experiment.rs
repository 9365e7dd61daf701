//! One comparison trial: open-loop up/down forcing-amplitude sweeps and a
//! CBC amplitude sweep on the same plant and noise level, each followed by
//! identification of the normalized model parameters.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::analytic::TildeParams;
use crate::cbc::{self, CbcBranch, CbcSettings};
use crate::controller::ControlGains;
use crate::error::{invalid, Result};
use crate::ident::{self, DataPoint, Dataset, FitOptions, FitResult, IdParams, Source};
use crate::openloop::{self, Approach, BistableSweeps, Sweep, SweepSettings};
use crate::plant::noise::NoiseConfig;
use crate::plant::{DuffingParams, PlantConfig};

/// Nominal normalized parameters used as plant truth.
pub const NOMINAL_TILDE: TildeParams = TildeParams {
    mu_t: 0.2999,
    nu_t: -0.0258,
    rho_t: -0.00025,
    b_t: 0.00798,
    zeta: 1.0,
};
pub const NOMINAL_F_N_HZ: f64 = 19.95;
pub const NOMINAL_FREQ_HZ: f64 = 24.0;
/// Reference noise RMS (force units) of level N1.
pub const NOMINAL_SIGMA_1: f64 = 100.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpenLoopProtocol {
    /// Base-acceleration amplitude grid of the up sweep; the down sweep
    /// retraces it.
    pub a_lo: f64,
    pub a_hi: f64,
    pub a_step: f64,
    pub approach: Approach,
    pub settings: SweepSettings,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CbcProtocol {
    pub b1_lo: f64,
    pub b1_hi: f64,
    pub gains: ControlGains,
    pub settings: CbcSettings,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    pub plant: PlantConfig,
    /// Template; level and seed are set per trial.
    pub noise: NoiseConfig,
    pub freq_hz: f64,
    /// Natural frequency used to form `zeta = f / f_n` for identification.
    pub f_n_hz: f64,
    pub openloop: OpenLoopProtocol,
    pub cbc: CbcProtocol,
    pub init: IdParams,
    pub fit: FitOptions,
}

impl TrialConfig {
    pub fn nominal() -> Self {
        let omega_n = 2.0 * PI * NOMINAL_F_N_HZ;
        Self {
            plant: PlantConfig::new(DuffingParams::from_tilde(&NOMINAL_TILDE, omega_n)),
            noise: NoiseConfig::default(),
            freq_hz: NOMINAL_FREQ_HZ,
            f_n_hz: NOMINAL_F_N_HZ,
            openloop: OpenLoopProtocol {
                a_lo: 0.2,
                a_hi: 16.0,
                a_step: 0.2,
                approach: Approach {
                    f_start_hz: 12.0,
                    f_step_hz: 0.1,
                },
                settings: SweepSettings::default(),
            },
            cbc: CbcProtocol {
                b1_lo: 0.05,
                b1_hi: 2.3,
                gains: ControlGains::default(),
                settings: CbcSettings::default(),
            },
            init: IdParams::GENERIC_INIT,
            fit: FitOptions::default(),
        }
    }

    pub fn omega(&self) -> f64 {
        2.0 * PI * self.freq_hz
    }

    pub fn zeta(&self) -> f64 {
        self.freq_hz / self.f_n_hz
    }

    /// Force amplitude that produces base-acceleration amplitude `a`.
    pub fn force_for_accel(&self, a: f64) -> f64 {
        a * self.plant.c_a_true * self.plant.params.omega_n.powi(2)
    }

    pub fn validate(&self) -> Result<()> {
        self.plant.validate()?;
        self.noise.validate()?;
        self.openloop.settings.validate()?;
        self.cbc.settings.validate()?;
        self.cbc.gains.validate()?;
        if !(self.freq_hz > 0.0) || !(self.f_n_hz > 0.0) {
            return invalid("forcing and natural frequencies must be positive");
        }
        let o = &self.openloop;
        if !(o.a_lo > 0.0 && o.a_hi > o.a_lo && o.a_step > 0.0) {
            return invalid("open-loop grid needs 0 < a_lo < a_hi and a_step > 0");
        }
        if !(self.cbc.b1_lo > 0.0 && self.cbc.b1_hi > self.cbc.b1_lo) {
            return invalid("CBC range needs 0 < b1_lo < b1_hi");
        }
        if !self.fit.bounds.contains(&self.init) {
            return invalid("initial identification parameters lie outside the bounds");
        }
        Ok(())
    }
}

pub fn run_openloop(cfg: &TrialConfig, noise: &NoiseConfig) -> Result<BistableSweeps> {
    let o = &cfg.openloop;
    openloop::bistable_amplitude_sweeps(
        &cfg.plant,
        noise,
        cfg.omega(),
        cfg.force_for_accel(o.a_lo),
        cfg.force_for_accel(o.a_hi),
        cfg.force_for_accel(o.a_step),
        &o.approach,
        &o.settings,
    )
}

pub fn run_cbc(cfg: &TrialConfig, noise: &NoiseConfig) -> Result<CbcBranch> {
    let c = &cfg.cbc;
    cbc::run_amplitude_sweep(&cfg.plant, noise, cfg.omega(), (c.b1_lo, c.b1_hi), c.gains, &c.settings)
}

pub fn openloop_dataset(cfg: &TrialConfig, up: &Sweep, down: &Sweep, level: f64) -> Result<Dataset> {
    let zeta = cfg.zeta();
    let pts = up
        .points
        .iter()
        .chain(&down.points)
        .map(|p| DataPoint {
            a_base: p.base_accel_amp,
            zeta,
            x_amp: p.x_amp,
        })
        .collect();
    Dataset::new(pts, Source::OpenLoop, level)
}

pub fn cbc_dataset(cfg: &TrialConfig, branch: &CbcBranch, level: f64) -> Result<Dataset> {
    let zeta = cfg.zeta();
    let pts = branch
        .accepted()
        .map(|p| DataPoint {
            a_base: p.base_accel_amp,
            zeta,
            x_amp: p.x_amp,
        })
        .collect();
    Dataset::new(pts, Source::Cbc, level)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub level: f64,
    pub seed: u64,
    pub openloop: BistableSweeps,
    pub cbc: CbcBranch,
    pub ol_data: Dataset,
    pub cbc_data: Dataset,
    pub ol_fit: Option<FitResult>,
    pub cbc_fit: Option<FitResult>,
    /// Identification failures and early sweep stops.
    pub notes: Vec<String>,
}

fn fit_or_note(cfg: &TrialConfig, data: &Dataset, notes: &mut Vec<String>) -> Option<FitResult> {
    match ident::fit(data, &cfg.init, &cfg.fit) {
        Ok(f) => Some(f),
        Err(e) => {
            notes.push(format!("{} identification failed: {e}", data.source.as_str()));
            None
        }
    }
}

/// Runs both methods at noise RMS `level` with noise seed `seed`.
pub fn run_trial(cfg: &TrialConfig, level: f64, seed: u64) -> Result<TrialResult> {
    cfg.validate()?;
    let noise = cfg.noise.with_level(level).with_seed(seed);
    noise.validate()?;
    let ol = run_openloop(cfg, &noise)?;
    let branch = run_cbc(cfg, &noise)?;
    let mut notes = Vec::new();
    for (name, d) in [
        ("open-loop up sweep", &ol.up.diagnostic),
        ("open-loop approach sweep", &ol.approach.diagnostic),
        ("open-loop down sweep", &ol.down.diagnostic),
        ("CBC sweep", &branch.diagnostic),
    ] {
        if let Some(d) = d {
            notes.push(format!("{name}: {d}"));
        }
    }
    let ol_data = openloop_dataset(cfg, &ol.up, &ol.down, level)?;
    let cbc_data = cbc_dataset(cfg, &branch, level)?;
    let ol_fit = fit_or_note(cfg, &ol_data, &mut notes);
    let cbc_fit = fit_or_note(cfg, &cbc_data, &mut notes);
    Ok(TrialResult {
        level,
        seed,
        openloop: ol,
        cbc: branch,
        ol_data,
        cbc_data,
        ol_fit,
        cbc_fit,
        notes,
    })
}

/// Noise-free CBC data synthesized from the model itself at amplitudes
/// `xs`, as a stand-in for an ideal experiment.
pub fn synthetic_cbc_dataset(truth: &IdParams, zeta: f64, xs: &[f64]) -> Result<Dataset> {
    let pts = xs
        .iter()
        .map(|&x| DataPoint {
            a_base: ident::model(truth, zeta, x),
            zeta,
            x_amp: x,
        })
        .collect();
    Dataset::new(pts, Source::Synthetic, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nominal_config_is_valid_and_consistent() {
        let c = TrialConfig::nominal();
        c.validate().unwrap();
        assert!((c.plant.params.f_n_hz() - NOMINAL_F_N_HZ).abs() < 1e-12);
        let t = c.plant.params.tilde(c.plant.params.omega_n);
        assert!((t.mu_t - NOMINAL_TILDE.mu_t).abs() < 1e-15);
        // Base acceleration maps back to the static deflection scale.
        let f = c.force_for_accel(1.0);
        assert!((c.plant.base_accel(f) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_grids_are_rejected() {
        let mut c = TrialConfig::nominal();
        c.openloop.a_step = 0.0;
        assert!(c.validate().is_err());
        let mut c = TrialConfig::nominal();
        c.cbc.b1_hi = 0.01;
        assert!(c.validate().is_err());
        let mut c = TrialConfig::nominal();
        c.init.mu_t = 10.0;
        assert!(c.validate().is_err());
    }
}
