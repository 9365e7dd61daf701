//! Closed-form multiple-scales response of the septic Duffing oscillator.
//!
//! With `g(X) = (35/64) rho X^7 + (5/8) nu X^5 + (3/4) mu X^3 - X (zeta^2 - 1)`
//! (tilde parameters), the phase and static deflection are
//!
//! ```text
//! theta  = atan2(-b zeta X, g(X))
//! delta  = |g / cos theta|  =  |X b zeta / sin theta|
//! ```
//!
//! so that the forcing amplitude is `delta * wn^2`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Upper end of the default amplitude window. The nominal septic model
/// folds a third time near X = 2.65, outside the physical S-curve.
pub const DEFAULT_X_MAX: f64 = 2.4;

pub const DEFAULT_GRID_POINTS: usize = 2000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TildeParams {
    pub mu_t: f64,
    pub nu_t: f64,
    pub rho_t: f64,
    pub b_t: f64,
    /// Forcing-to-natural frequency ratio.
    pub zeta: f64,
}

impl TildeParams {
    pub fn linear(b_t: f64, zeta: f64) -> Self {
        Self {
            mu_t: 0.0,
            nu_t: 0.0,
            rho_t: 0.0,
            b_t,
            zeta,
        }
    }

    pub fn with_zeta(&self, zeta: f64) -> Self {
        Self { zeta, ..*self }
    }

    /// Nonlinear coefficients multiplied by `s`.
    pub fn scaled_nonlinearity(&self, s: f64) -> Self {
        Self {
            mu_t: self.mu_t * s,
            nu_t: self.nu_t * s,
            rho_t: self.rho_t * s,
            ..*self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if ![self.mu_t, self.nu_t, self.rho_t, self.b_t, self.zeta].iter().all(|v| v.is_finite()) {
            return invalid("tilde parameters must be finite");
        }
        if self.b_t < 0.0 {
            return invalid(format!("b_t must be >= 0, got {}", self.b_t));
        }
        if !(self.zeta > 0.0) {
            return invalid(format!("zeta must be positive, got {}", self.zeta));
        }
        Ok(())
    }
}

/// `g(X)/X`, finite at X = 0.
#[inline]
fn g_over_x(x: f64, p: &TildeParams) -> f64 {
    let x2 = x * x;
    x2 * (0.75 * p.mu_t + x2 * (0.625 * p.nu_t + x2 * (35.0 / 64.0) * p.rho_t)) - (p.zeta * p.zeta - 1.0)
}

/// Amplitude-dependent in-phase term `g(X)`.
pub fn backbone_term(x_amp: f64, p: &TildeParams) -> f64 {
    x_amp * g_over_x(x_amp, p)
}

/// Response phase relative to the forcing, in (-pi, 0]. At X = 0 the
/// small-amplitude limit is returned; with b = 0 above the backbone the
/// closure value -pi is returned.
pub fn phase_angle(x_amp: f64, p: &TildeParams) -> f64 {
    (-p.b_t * p.zeta).atan2(g_over_x(x_amp, p))
}

/// Static deflection `delta_st` needed to sustain amplitude `x_amp`.
pub fn static_deflection(x_amp: f64, p: &TildeParams) -> f64 {
    let h = g_over_x(x_amp, p);
    let bz = p.b_t * p.zeta;
    let (s, c) = (-bz).atan2(h).sin_cos();
    if c.abs() >= s.abs() {
        x_amp * (h / c).abs()
    } else {
        x_amp * (bz / s).abs()
    }
}

/// Central-difference slope of `delta_st(X)`.
pub fn deflection_slope(x_amp: f64, p: &TildeParams) -> f64 {
    let h = 1e-6 * x_amp.max(1e-3);
    (static_deflection(x_amp + h, p) - static_deflection((x_amp - h).max(0.0), p)) / (x_amp + h - (x_amp - h).max(0.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResponsePoint {
    pub x_amp: f64,
    pub delta_st: f64,
    pub theta: f64,
    pub stable_hint: bool,
}

/// Increasing amplitude grid: geometric near zero, uniform above.
pub fn x_grid(x_max: f64, n: usize) -> Result<Vec<f64>> {
    if !(x_max > 0.0) || n < 20 {
        return invalid(format!("grid needs x_max > 0 and >= 20 points (got {x_max}, {n})"));
    }
    let n_log = n / 10;
    let x_knee = 0.02 * x_max;
    let x_min = 1e-4 * x_max;
    let mut g: Vec<f64> = (0..n_log)
        .map(|i| x_min * (x_knee / x_min).powf(i as f64 / n_log as f64))
        .collect();
    let n_lin = n - n_log;
    g.extend((0..n_lin).map(|i| x_knee + (x_max - x_knee) * i as f64 / (n_lin - 1) as f64));
    Ok(g)
}

pub fn default_x_grid() -> Vec<f64> {
    x_grid(DEFAULT_X_MAX, DEFAULT_GRID_POINTS).expect("default grid is valid")
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return invalid("amplitude grid is empty");
    }
    if grid[0] <= 0.0 || grid.windows(2).any(|w| !(w[1] > w[0])) {
        return invalid("amplitude grid must be positive and strictly increasing");
    }
    Ok(())
}

/// Phase, deflection and slope-based stability hint along `x_grid`.
pub fn s_curve(p: &TildeParams, x_grid: &[f64]) -> Result<Vec<ResponsePoint>> {
    p.validate()?;
    check_grid(x_grid)?;
    Ok(x_grid
        .iter()
        .map(|&x| ResponsePoint {
            x_amp: x,
            delta_st: static_deflection(x, p),
            theta: phase_angle(x, p),
            stable_hint: deflection_slope(x, p) > 0.0,
        })
        .collect())
}

/// Amplitude solutions at one frequency ratio.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrequencyRoots {
    pub zeta: f64,
    pub roots: Vec<f64>,
}

fn bisect<F: Fn(f64) -> f64>(f: &F, mut lo: f64, mut hi: f64, rel_tol: f64) -> f64 {
    let mut flo = f(lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if hi - lo <= rel_tol * mid.abs().max(f64::MIN_POSITIVE) {
            return mid;
        }
        let fm = f(mid);
        if fm == 0.0 {
            return mid;
        }
        if (fm > 0.0) == (flo > 0.0) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Sign-change roots of `f` on `grid` refined by bisection, with an
/// optional leading point at zero.
fn scan_roots<F: Fn(f64) -> f64>(f: &F, grid: &[f64], rel_tol: f64) -> Vec<f64> {
    let mut roots = Vec::new();
    let mut prev_x = grid[0];
    let mut prev_f = f(prev_x);
    if prev_f == 0.0 {
        roots.push(prev_x);
    }
    for &x in &grid[1..] {
        let fx = f(x);
        if fx == 0.0 {
            roots.push(x);
        } else if prev_f != 0.0 && (fx > 0.0) != (prev_f > 0.0) {
            roots.push(bisect(f, prev_x, x, rel_tol));
        }
        prev_x = x;
        prev_f = fx;
    }
    roots
}

/// All amplitudes with `static_deflection = delta_st` for each ratio in
/// `zeta_grid`, scanning the default amplitude window.
pub fn frequency_response(p: &TildeParams, delta_st: f64, zeta_grid: &[f64]) -> Result<Vec<FrequencyRoots>> {
    frequency_response_on(p, delta_st, zeta_grid, &default_x_grid())
}

pub fn frequency_response_on(p: &TildeParams, delta_st: f64, zeta_grid: &[f64], x_grid: &[f64]) -> Result<Vec<FrequencyRoots>> {
    if !(delta_st >= 0.0) || !delta_st.is_finite() {
        return invalid(format!("delta_st must be finite and >= 0, got {delta_st}"));
    }
    check_grid(x_grid)?;
    let mut out = Vec::with_capacity(zeta_grid.len());
    for &zeta in zeta_grid {
        let pz = p.with_zeta(zeta);
        pz.validate()?;
        if delta_st == 0.0 {
            out.push(FrequencyRoots { zeta, roots: vec![0.0] });
            continue;
        }
        let f = |x: f64| static_deflection(x, &pz) - delta_st;
        let roots = scan_roots(&f, x_grid, 1e-10);
        if roots.len() > 3 {
            return Err(Error::Structure(format!(
                "{} amplitude roots at zeta = {zeta}; expected at most 3",
                roots.len()
            )));
        }
        out.push(FrequencyRoots { zeta, roots });
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fold {
    pub x_amp: f64,
    pub delta_st: f64,
}

/// Turning points of `delta_st(X)` in the default amplitude window.
pub fn find_folds(p: &TildeParams) -> Result<Vec<Fold>> {
    find_folds_on(p, &default_x_grid())
}

pub fn find_folds_on(p: &TildeParams, x_grid: &[f64]) -> Result<Vec<Fold>> {
    p.validate()?;
    check_grid(x_grid)?;
    let slope = |x: f64| deflection_slope(x, p);
    let roots = scan_roots(&slope, x_grid, 1e-12);
    if roots.len() % 2 == 1 {
        return Err(Error::Structure(format!(
            "odd number of folds ({}) in the scanned window",
            roots.len()
        )));
    }
    Ok(roots
        .into_iter()
        .map(|x| Fold {
            x_amp: x,
            delta_st: static_deflection(x, p),
        })
        .collect())
}
