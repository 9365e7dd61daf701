//! Periodic orbits of the forced oscillator by harmonic balance (Fourier
//! collocation on evenly spaced phase points), pseudo-arclength
//! continuation and Floquet stability.
//!
//! In the phase variable `s = omega t` and tilde units the orbit solves
//!
//! ```text
//! zeta^2 x'' + b zeta x' + x + mu x^3 + nu x^5 + rho x^7 = delta cos(s)
//! ```
//!
//! Unknowns are ordered `[a0, a1..aN, b1..bN]` with the series convention of
//! [`crate::signal`].

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::analytic::TildeParams;
use crate::error::{invalid, Error, Result};
use crate::plant::DuffingParams;
use crate::signal::HarmonicCoeffs;

pub const DEFAULT_N_HARM: usize = 15;
pub const NEWTON_TOL: f64 = 1e-10;
pub const FLOQUET_STEPS: usize = 1000;
/// Both multiplier moduli must stay below `1 - STABILITY_MARGIN`.
pub const STABILITY_MARGIN: f64 = 1e-6;
const MAX_NEWTON_ITERS: usize = 60;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Multiplier {
    pub re: f64,
    pub im: f64,
}

impl Multiplier {
    pub fn modulus(&self) -> f64 {
        self.re.hypot(self.im)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeriodicSolution {
    /// Orbit in response units, referenced to the forcing `cos(omega t)`.
    pub coeffs: HarmonicCoeffs,
    pub omega: f64,
    pub delta_st: f64,
    pub residual_norm: f64,
    pub multipliers: [Multiplier; 2],
    pub stable: bool,
}

impl PeriodicSolution {
    pub fn x_amp(&self) -> f64 {
        self.coeffs.fundamental_amplitude()
    }

    pub fn theta(&self) -> f64 {
        self.coeffs.fundamental_phase()
    }

    pub fn max_multiplier(&self) -> f64 {
        self.multipliers[0].modulus().max(self.multipliers[1].modulus())
    }
}

/// Harmonic-balance discretization with `n` harmonics on `m` phase points.
struct Hb {
    n: usize,
    m: usize,
    /// cos(k s_j), k = 0..=n, row-major by j.
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl Hb {
    fn new(n: usize) -> Self {
        // Products up to x^7 times a basis function stay below m/2 harmonics.
        let m = (8 * n + 2).next_power_of_two();
        let mut cos = Vec::with_capacity(m * (n + 1));
        let mut sin = Vec::with_capacity(m * (n + 1));
        for j in 0..m {
            let s = 2.0 * PI * j as f64 / m as f64;
            for k in 0..=n {
                let (sk, ck) = (k as f64 * s).sin_cos();
                cos.push(ck);
                sin.push(sk);
            }
        }
        Self { n, m, cos, sin }
    }

    fn dim(&self) -> usize {
        2 * self.n + 1
    }

    #[inline]
    fn basis(&self, j: usize, i: usize) -> f64 {
        let n = self.n;
        let row = j * (n + 1);
        if i == 0 {
            0.5
        } else if i <= n {
            self.cos[row + i]
        } else {
            self.sin[row + i - n]
        }
    }

    fn values(&self, c: &[f64]) -> Vec<f64> {
        let n = self.n;
        (0..self.m)
            .map(|j| {
                let row = j * (n + 1);
                let mut x = 0.5 * c[0];
                for k in 1..=n {
                    x += c[k] * self.cos[row + k] + c[n + k] * self.sin[row + k];
                }
                x
            })
            .collect()
    }

    /// Fourier coefficients of point values, same convention as the unknowns.
    fn project(&self, vals: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut out = vec![0.0; self.dim()];
        for (j, &v) in vals.iter().enumerate() {
            let row = j * (n + 1);
            out[0] += v;
            for k in 1..=n {
                out[k] += v * self.cos[row + k];
                out[n + k] += v * self.sin[row + k];
            }
        }
        let s = 2.0 / self.m as f64;
        out.iter_mut().for_each(|v| *v *= s);
        out
    }

    fn nonlinear(p: &TildeParams, x: f64) -> (f64, f64) {
        let x2 = x * x;
        let f = x * x2 * (p.mu_t + x2 * (p.nu_t + x2 * p.rho_t));
        let df = x2 * (3.0 * p.mu_t + x2 * (5.0 * p.nu_t + x2 * 7.0 * p.rho_t));
        (f, df)
    }

    /// Residual of the balance equations for coefficients `c` and forcing
    /// `delta cos(s)`.
    fn residual(&self, p: &TildeParams, c: &[f64], delta: f64) -> Vec<f64> {
        let n = self.n;
        let xs = self.values(c);
        let nl: Vec<f64> = xs.iter().map(|&x| Self::nonlinear(p, x).0).collect();
        let mut r = self.project(&nl);
        let z2 = p.zeta * p.zeta;
        let bz = p.b_t * p.zeta;
        r[0] += c[0];
        for k in 1..=n {
            let kf = k as f64;
            let lin = 1.0 - z2 * kf * kf;
            r[k] += lin * c[k] + bz * kf * c[n + k];
            r[n + k] += lin * c[n + k] - bz * kf * c[k];
        }
        r[1] -= delta;
        r
    }

    fn jacobian(&self, p: &TildeParams, c: &[f64]) -> DMatrix<f64> {
        let n = self.n;
        let d = self.dim();
        let xs = self.values(c);
        let dn: Vec<f64> = xs.iter().map(|&x| Self::nonlinear(p, x).1).collect();
        let mut jac = DMatrix::<f64>::zeros(d, d);
        let s = 2.0 / self.m as f64;
        // Row basis is projection (cos/sin without the 1/2 on a0).
        for (j, &dnj) in dn.iter().enumerate() {
            let w = dnj * s;
            if w == 0.0 {
                continue;
            }
            let row = j * (n + 1);
            for col in 0..d {
                let bc = self.basis(j, col) * w;
                jac[(0, col)] += bc;
                for k in 1..=n {
                    jac[(k, col)] += bc * self.cos[row + k];
                    jac[(n + k, col)] += bc * self.sin[row + k];
                }
            }
        }
        let z2 = p.zeta * p.zeta;
        let bz = p.b_t * p.zeta;
        jac[(0, 0)] += 1.0;
        for k in 1..=n {
            let kf = k as f64;
            let lin = 1.0 - z2 * kf * kf;
            jac[(k, k)] += lin;
            jac[(k, n + k)] += bz * kf;
            jac[(n + k, n + k)] += lin;
            jac[(n + k, k)] -= bz * kf;
        }
        jac
    }

    /// d(residual)/d(zeta).
    fn d_zeta(&self, p: &TildeParams, c: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut r = vec![0.0; self.dim()];
        for k in 1..=n {
            let kf = k as f64;
            r[k] = -2.0 * p.zeta * kf * kf * c[k] + p.b_t * kf * c[n + k];
            r[n + k] = -2.0 * p.zeta * kf * kf * c[n + k] - p.b_t * kf * c[k];
        }
        r
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn rel_residual(r: &[f64], c: &[f64], delta: f64) -> f64 {
    norm(r) / (delta.abs() + norm(c)).max(1e-300)
}

fn coeffs_from_vec(c: &[f64], omega: f64, n: usize) -> HarmonicCoeffs {
    HarmonicCoeffs {
        omega,
        n_harm: n,
        a0: c[0],
        a: c[1..=n].to_vec(),
        b: c[n + 1..].to_vec(),
    }
}

fn vec_from_coeffs(c: &HarmonicCoeffs, n: usize) -> Vec<f64> {
    let r = c.resized(n);
    let mut v = Vec::with_capacity(2 * n + 1);
    v.push(r.a0);
    v.extend_from_slice(&r.a);
    v.extend_from_slice(&r.b);
    v
}

fn solve_linear(jac: DMatrix<f64>, rhs: &[f64]) -> Option<Vec<f64>> {
    let sol = jac.lu().solve(&DVector::from_column_slice(rhs))?;
    if sol.iter().all(|v| v.is_finite()) {
        Some(sol.iter().copied().collect())
    } else {
        None
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollocOptions {
    pub n_harm: usize,
    pub tol: f64,
    pub floquet_steps: usize,
}

impl Default for CollocOptions {
    fn default() -> Self {
        Self {
            n_harm: DEFAULT_N_HARM,
            tol: NEWTON_TOL,
            floquet_steps: FLOQUET_STEPS,
        }
    }
}

fn check_inputs(params: &DuffingParams, omega: f64, opts: &CollocOptions) -> Result<()> {
    params.validate()?;
    if !(omega > 0.0) || !omega.is_finite() {
        return invalid(format!("omega must be positive, got {omega}"));
    }
    if opts.n_harm == 0 {
        return invalid("n_harm must be at least 1");
    }
    if opts.floquet_steps < 500 {
        return invalid("Floquet integration needs at least 500 steps per period");
    }
    Ok(())
}

/// Damped Newton on the balance equations at fixed forcing.
fn newton_fixed(hb: &Hb, p: &TildeParams, mut c: Vec<f64>, delta: f64, tol: f64) -> Result<(Vec<f64>, f64)> {
    let mut r = hb.residual(p, &c, delta);
    let mut res = rel_residual(&r, &c, delta);
    for _ in 0..MAX_NEWTON_ITERS {
        if res <= tol {
            return Ok((c, res));
        }
        let neg: Vec<f64> = r.iter().map(|v| -v).collect();
        let Some(dc) = solve_linear(hb.jacobian(p, &c), &neg) else {
            break;
        };
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let trial: Vec<f64> = c.iter().zip(&dc).map(|(a, d)| a + lambda * d).collect();
            let rt = hb.residual(p, &trial, delta);
            if rt.iter().all(|v| v.is_finite()) && norm(&rt) < norm(&r) {
                c = trial;
                r = rt;
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        res = rel_residual(&r, &c, delta);
        if !accepted {
            break;
        }
    }
    if res <= tol {
        return Ok((c, res));
    }
    Err(Error::NewtonFailed {
        iterations: MAX_NEWTON_ITERS,
        residual: res,
    })
}

fn finish(params: &DuffingParams, omega: f64, delta: f64, c: &[f64], res: f64, n: usize, opts: &CollocOptions) -> Result<PeriodicSolution> {
    let coeffs = coeffs_from_vec(c, omega, n);
    let multipliers = monodromy_multipliers(params, &coeffs, opts.floquet_steps)?;
    let stable = multipliers.iter().all(|m| m.modulus() < 1.0 - STABILITY_MARGIN);
    Ok(PeriodicSolution {
        coeffs,
        omega,
        delta_st: delta,
        residual_norm: res,
        multipliers,
        stable,
    })
}

/// Periodic orbit under forcing `delta_st wn^2 cos(omega t)` from `guess`.
pub fn solve_periodic(params: &DuffingParams, delta_st: f64, omega: f64, guess: &HarmonicCoeffs) -> Result<PeriodicSolution> {
    solve_periodic_with(params, delta_st, omega, guess, &CollocOptions::default())
}

pub fn solve_periodic_with(
    params: &DuffingParams,
    delta_st: f64,
    omega: f64,
    guess: &HarmonicCoeffs,
    opts: &CollocOptions,
) -> Result<PeriodicSolution> {
    check_inputs(params, omega, opts)?;
    if !delta_st.is_finite() {
        return invalid("delta_st must be finite");
    }
    let hb = Hb::new(opts.n_harm);
    let p = params.tilde(omega);
    let c0 = vec_from_coeffs(guess, opts.n_harm);
    let (c, res) = newton_fixed(&hb, &p, c0, delta_st, opts.tol)?;
    finish(params, omega, delta_st, &c, res, opts.n_harm, opts)
}

/// Periodic orbit whose fundamental amplitude equals `x_amp`; the forcing
/// amplitude is an output. Regular through folds of the amplitude branch.
pub fn solve_at_amplitude(params: &DuffingParams, omega: f64, x_amp: f64, guess: Option<&PeriodicSolution>) -> Result<PeriodicSolution> {
    solve_at_amplitude_with(params, omega, x_amp, guess, &CollocOptions::default())
}

pub fn solve_at_amplitude_with(
    params: &DuffingParams,
    omega: f64,
    x_amp: f64,
    guess: Option<&PeriodicSolution>,
    opts: &CollocOptions,
) -> Result<PeriodicSolution> {
    check_inputs(params, omega, opts)?;
    if !(x_amp > 0.0) || !x_amp.is_finite() {
        return invalid(format!("x_amp must be positive, got {x_amp}"));
    }
    let n = opts.n_harm;
    let hb = Hb::new(n);
    let p = params.tilde(omega);
    // Response frame: x = a0/2 + X cos s + sum_{k>=2}, forcing q1 cos s + q2 sin s.
    // Unknowns y = [a0, a2..aN, b2..bN, q1, q2].
    let mut y = vec![0.0; 2 * n + 1];
    match guess {
        Some(g) => {
            let gc = g.coeffs.resized(n);
            let psi = -gc.fundamental_phase();
            let rot = rotate(&gc, psi);
            let scale = x_amp / rot.a[0].max(1e-300);
            y[0] = rot.a0 * scale;
            for k in 2..=n {
                y[k - 1] = rot.a[k - 1] * scale;
                y[n - 1 + k - 1] = rot.b[k - 1] * scale;
            }
            let th = g.theta();
            y[2 * n - 1] = g.delta_st * th.cos();
            y[2 * n] = g.delta_st * th.sin();
        }
        None => {
            let d = crate::analytic::static_deflection(x_amp, &p);
            let th = crate::analytic::phase_angle(x_amp, &p);
            y[2 * n - 1] = d * th.cos();
            y[2 * n] = d * th.sin();
        }
    }
    let full = |y: &[f64]| -> Vec<f64> {
        let mut c = vec![0.0; 2 * n + 1];
        c[0] = y[0];
        c[1] = x_amp;
        for k in 2..=n {
            c[k] = y[k - 1];
            c[n + k] = y[n - 1 + k - 1];
        }
        c
    };
    let resid = |y: &[f64]| -> Vec<f64> {
        let c = full(y);
        let mut r = hb.residual(&p, &c, 0.0);
        r[1] -= y[2 * n - 1];
        r[n + 1] -= y[2 * n];
        r
    };
    let mut r = resid(&y);
    let scale_of = |y: &[f64]| norm(&full(y)) + y[2 * n - 1].hypot(y[2 * n]);
    let mut res = norm(&r) / scale_of(&y);
    let mut iters = 0;
    while res > opts.tol && iters < MAX_NEWTON_ITERS {
        iters += 1;
        let jc = hb.jacobian(&p, &full(&y));
        let d = 2 * n + 1;
        let mut jac = DMatrix::<f64>::zeros(d, d);
        // Column map from y to c: y[0] -> c0, y[k-1] -> a_k, y[n+k-2] -> b_k.
        for row in 0..d {
            jac[(row, 0)] = jc[(row, 0)];
            for k in 2..=n {
                jac[(row, k - 1)] = jc[(row, k)];
                jac[(row, n + k - 2)] = jc[(row, n + k)];
            }
        }
        jac[(1, 2 * n - 1)] = -1.0;
        jac[(n + 1, 2 * n)] = -1.0;
        let neg: Vec<f64> = r.iter().map(|v| -v).collect();
        let Some(dy) = solve_linear(jac, &neg) else {
            break;
        };
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let trial: Vec<f64> = y.iter().zip(&dy).map(|(a, b)| a + lambda * b).collect();
            let rt = resid(&trial);
            if rt.iter().all(|v| v.is_finite()) && norm(&rt) < norm(&r) {
                y = trial;
                r = rt;
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        res = norm(&r) / scale_of(&y);
        if !accepted {
            break;
        }
    }
    if res > opts.tol {
        return Err(Error::NewtonFailed { iterations: iters, residual: res });
    }
    let (q1, q2) = (y[2 * n - 1], y[2 * n]);
    let delta = q1.hypot(q2);
    // Shift the phase origin so the forcing reads delta cos(s').
    let psi = q2.atan2(q1);
    let c = coeffs_from_vec(&full(&y), omega, n);
    let shifted = rotate(&c, psi);
    let v = vec_from_coeffs(&shifted, n);
    let res_fixed = rel_residual(&hb.residual(&p, &v, delta), &v, delta);
    finish(params, omega, delta, &v, res_fixed, n, opts)
}

/// Series of `x(s + psi)` given the series of `x(s)`.
fn rotate(c: &HarmonicCoeffs, psi: f64) -> HarmonicCoeffs {
    let mut out = c.clone();
    for k in 1..=c.n_harm {
        let (s, co) = (k as f64 * psi).sin_cos();
        let (a, b) = (c.a[k - 1], c.b[k - 1]);
        out.a[k - 1] = a * co + b * s;
        out.b[k - 1] = b * co - a * s;
    }
    out
}

/// Floquet multipliers of the orbit from the variational equation
/// `y'' + b y' + K(x(t)) y = 0` integrated over one period by RK4.
pub fn floquet_stability(solution: &PeriodicSolution, params: &DuffingParams) -> Result<([Multiplier; 2], bool)> {
    let m = monodromy_multipliers(params, &solution.coeffs, FLOQUET_STEPS)?;
    let stable = m.iter().all(|v| v.modulus() < 1.0 - STABILITY_MARGIN);
    Ok((m, stable))
}

fn monodromy_multipliers(params: &DuffingParams, orbit: &HarmonicCoeffs, steps: usize) -> Result<[Multiplier; 2]> {
    let t_period = orbit.period();
    let h = t_period / steps as f64;
    let b = params.b;
    let rhs = |t: f64, y: &[f64; 4]| {
        let k = params.stiffness(orbit.value_at(t));
        [y[1], -b * y[1] - k * y[0], y[3], -b * y[3] - k * y[2]]
    };
    let y = crate::rk4::integrate(&rhs, 0.0, [1.0, 0.0, 0.0, 1.0], h, steps);
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("monodromy matrix".into()));
    }
    // Columns are the images of the unit initial conditions.
    let (m11, m21, m12, m22) = (y[0], y[1], y[2], y[3]);
    let tr = m11 + m22;
    let det = m11 * m22 - m12 * m21;
    let disc = 0.25 * tr * tr - det;
    Ok(if disc >= 0.0 {
        let s = disc.sqrt();
        // Stable evaluation of the smaller root.
        let big = 0.5 * tr + s.copysign(tr);
        let small = if big != 0.0 { det / big } else { 0.5 * tr - s.copysign(tr) };
        [Multiplier { re: big, im: 0.0 }, Multiplier { re: small, im: 0.0 }]
    } else {
        let s = (-disc).sqrt();
        [Multiplier { re: 0.5 * tr, im: s }, Multiplier { re: 0.5 * tr, im: -s }]
    })
}

/// Continuation parameter held free along a branch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Fixed {
    /// Frequency fixed, forcing amplitude `delta_st` free.
    Omega(f64),
    /// Forcing fixed, frequency free.
    DeltaSt(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContinuationSettings {
    /// Range of the free parameter (`delta_st` or `omega`).
    pub lo: f64,
    pub hi: f64,
    pub step0: f64,
    pub step_min: f64,
    pub step_max: f64,
    pub max_points: usize,
    /// Stop once the fundamental amplitude exceeds this value.
    pub x_max: Option<f64>,
    /// Amplitude scale used to normalize coefficients.
    pub amp_scale: f64,
    pub max_corrector_iters: usize,
}

impl ContinuationSettings {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self {
            lo,
            hi,
            step0: 1e-2,
            step_min: 1e-5,
            step_max: 1e-1,
            max_points: 20_000,
            x_max: None,
            amp_scale: 1.0,
            max_corrector_iters: 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollocBranch {
    pub points: Vec<PeriodicSolution>,
    /// Why the branch ended early, if it did.
    pub diagnostic: Option<String>,
}

/// Pseudo-arclength continuation from `seed` with secant predictor and
/// Newton corrector, traversing folds.
pub fn continue_branch(params: &DuffingParams, fixed: Fixed, settings: &ContinuationSettings, seed: &PeriodicSolution) -> Result<CollocBranch> {
    continue_branch_with(params, fixed, settings, seed, &CollocOptions::default())
}

pub fn continue_branch_with(
    params: &DuffingParams,
    fixed: Fixed,
    settings: &ContinuationSettings,
    seed: &PeriodicSolution,
    opts: &CollocOptions,
) -> Result<CollocBranch> {
    let s = settings;
    if !(s.hi > s.lo) || !(s.step_min > 0.0) || !(s.step_max >= s.step_min) || !(s.amp_scale > 0.0) {
        return invalid("continuation settings need lo < hi and positive step bounds");
    }
    let n = opts.n_harm;
    let d = 2 * n + 1;
    let hb = Hb::new(n);
    let span = s.hi - s.lo;
    let omega_n = params.omega_n;
    let (omega0, delta0) = match fixed {
        Fixed::Omega(w) => (w, seed.delta_st),
        Fixed::DeltaSt(dl) => (seed.omega, dl),
    };
    check_inputs(params, omega0, opts)?;
    let lam0 = match fixed {
        Fixed::Omega(_) => delta0,
        Fixed::DeltaSt(_) => omega0,
    };
    // Free-parameter value to (omega, delta).
    let unpack = |lam: f64| match fixed {
        Fixed::Omega(w) => (w, lam),
        Fixed::DeltaSt(dl) => (lam, dl),
    };
    let tilde_at = |lam: f64| params.tilde(unpack(lam).0);
    let resid = |c: &[f64], lam: f64| hb.residual(&tilde_at(lam), c, unpack(lam).1);
    let jac_c = |c: &[f64], lam: f64| hb.jacobian(&tilde_at(lam), c);
    let d_lam = |c: &[f64], lam: f64| -> Vec<f64> {
        match fixed {
            Fixed::Omega(_) => {
                let mut v = vec![0.0; d];
                v[1] = -1.0;
                v
            }
            Fixed::DeltaSt(_) => hb.d_zeta(&tilde_at(lam), c).iter().map(|x| x / omega_n).collect(),
        }
    };
    // Scaled coordinates u = [c / amp_scale, (lam - lo) / span].
    let to_u = |c: &[f64], lam: f64| -> Vec<f64> {
        let mut u: Vec<f64> = c.iter().map(|v| v / s.amp_scale).collect();
        u.push((lam - s.lo) / span);
        u
    };
    let from_u = |u: &[f64]| -> (Vec<f64>, f64) {
        (u[..d].iter().map(|v| v * s.amp_scale).collect(), s.lo + u[d] * span)
    };

    let c_seed = vec_from_coeffs(&seed.coeffs, n);
    let (c_seed, res_seed) = newton_fixed(&hb, &tilde_at(lam0), c_seed, unpack(lam0).1, opts.tol)?;
    let mut points = vec![finish(params, omega0, delta0, &c_seed, res_seed, n, opts)?];

    // Initial tangent from J_c dc = -J_lam, oriented toward increasing lam.
    let mut u_prev = to_u(&c_seed, lam0);
    let jl = d_lam(&c_seed, lam0);
    let neg: Vec<f64> = jl.iter().map(|v| -v).collect();
    let dc = solve_linear(hb.jacobian(&tilde_at(lam0), &c_seed), &neg)
        .ok_or_else(|| Error::Structure("singular Jacobian at the seed".into()))?;
    let mut tangent: Vec<f64> = dc.iter().map(|v| v / s.amp_scale * span).collect();
    tangent.push(1.0);
    let tn = norm(&tangent);
    tangent.iter_mut().for_each(|v| *v /= tn);

    let mut h = s.step0.clamp(s.step_min, s.step_max);
    let mut diagnostic = None;
    while points.len() < s.max_points {
        let pred: Vec<f64> = u_prev.iter().zip(&tangent).map(|(a, t)| a + h * t).collect();
        match palc_correct(&resid, &jac_c, &d_lam, &from_u, &u_prev, &tangent, pred, h, s, opts.tol) {
            Some((u_new, iters)) => {
                let (c, lam) = from_u(&u_new);
                if lam < s.lo || lam > s.hi {
                    break;
                }
                let (omega, delta) = unpack(lam);
                let r = resid(&c, lam);
                let sol = finish(params, omega, delta, &c, rel_residual(&r, &c, delta), n, opts)?;
                let x = sol.x_amp();
                let mut sec: Vec<f64> = u_new.iter().zip(&u_prev).map(|(a, b)| a - b).collect();
                let sn = norm(&sec);
                sec.iter_mut().for_each(|v| *v /= sn);
                tangent = sec;
                u_prev = u_new;
                points.push(sol);
                if let Some(xm) = s.x_max {
                    if x > xm {
                        break;
                    }
                }
                if iters <= 3 {
                    h = (h * 1.3).min(s.step_max);
                }
            }
            None => {
                h *= 0.5;
                if h < s.step_min {
                    diagnostic = Some(format!(
                        "step size fell below {:e} after {} points",
                        s.step_min,
                        points.len()
                    ));
                    break;
                }
            }
        }
    }
    Ok(CollocBranch { points, diagnostic })
}

/// Newton corrector on the balance equations plus the arclength constraint,
/// all in scaled coordinates.
#[allow(clippy::too_many_arguments)]
fn palc_correct<R, J, D, F>(
    resid: &R,
    jac_c: &J,
    d_lam: &D,
    from_u: &F,
    u_prev: &[f64],
    tangent: &[f64],
    mut u: Vec<f64>,
    h: f64,
    s: &ContinuationSettings,
    tol: f64,
) -> Option<(Vec<f64>, usize)>
where
    R: Fn(&[f64], f64) -> Vec<f64>,
    J: Fn(&[f64], f64) -> DMatrix<f64>,
    D: Fn(&[f64], f64) -> Vec<f64>,
    F: Fn(&[f64]) -> (Vec<f64>, f64),
{
    let d = u.len() - 1;
    let span = s.hi - s.lo;
    for it in 1..=s.max_corrector_iters {
        let (c, lam) = from_u(&u);
        let r = resid(&c, lam);
        if r.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let arc: f64 = u.iter().zip(u_prev).zip(tangent).map(|((a, b), t)| (a - b) * t).sum::<f64>() - h;
        let jc = jac_c(&c, lam);
        let jl = d_lam(&c, lam);
        let mut jac = DMatrix::<f64>::zeros(d + 1, d + 1);
        for i in 0..d {
            for j in 0..d {
                jac[(i, j)] = jc[(i, j)] * s.amp_scale;
            }
            jac[(i, d)] = jl[i] * span;
        }
        for j in 0..=d {
            jac[(d, j)] = tangent[j];
        }
        let mut rhs: Vec<f64> = r.iter().map(|v| -v).collect();
        rhs.push(-arc);
        let du = solve_linear(jac, &rhs)?;
        u.iter_mut().zip(&du).for_each(|(a, b)| *a += b);
        let (c2, lam2) = from_u(&u);
        let r2 = resid(&c2, lam2);
        if rel_residual(&r2, &c2, 0.0) <= tol && norm(&du) <= 1e-6 {
            return Some((u, it));
        }
    }
    None
}

/// Orbits at fixed `omega` for each amplitude in `x_amps`, warm-started in order.
pub fn amplitude_branch(params: &DuffingParams, omega: f64, x_amps: &[f64]) -> Result<Vec<PeriodicSolution>> {
    let mut out: Vec<PeriodicSolution> = Vec::with_capacity(x_amps.len());
    for &x in x_amps {
        let sol = solve_at_amplitude(params, omega, x, out.last())?;
        out.push(sol);
    }
    Ok(out)
}

/// Turning point of `delta_st(X)` at fixed `omega` inside `[x_lo, x_hi]`,
/// located by bisection on the sign of the slope.
pub fn refine_fold(params: &DuffingParams, omega: f64, x_lo: f64, x_hi: f64) -> Result<PeriodicSolution> {
    if !(x_hi > x_lo) || !(x_lo > 0.0) {
        return invalid("fold bracket needs 0 < x_lo < x_hi");
    }
    let slope = |x: f64, guess: Option<&PeriodicSolution>| -> Result<(f64, PeriodicSolution)> {
        let h = 1e-6 * x;
        let a = solve_at_amplitude(params, omega, x - h, guess)?;
        let b = solve_at_amplitude(params, omega, x + h, Some(&a))?;
        Ok(((b.delta_st - a.delta_st) / (2.0 * h), a))
    };
    let (mut lo, mut hi) = (x_lo, x_hi);
    let (s_lo, g) = slope(lo, None)?;
    let (s_hi, _) = slope(hi, Some(&g))?;
    if s_lo.signum() == s_hi.signum() {
        return Err(Error::Structure(format!("no turning point of delta_st in [{x_lo}, {x_hi}]")));
    }
    let mut guess = g;
    while hi - lo > 1e-9 * hi {
        let mid = 0.5 * (lo + hi);
        let (s_mid, g) = slope(mid, Some(&guess))?;
        guess = g;
        if s_mid.signum() == s_lo.signum() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    solve_at_amplitude(params, omega, 0.5 * (lo + hi), Some(&guess))
}

/// Indices `i` where `delta_st` reverses direction between points `i-1, i, i+1`.
pub fn turning_indices(branch: &[PeriodicSolution]) -> Vec<usize> {
    let mut out = Vec::new();
    for i in 1..branch.len().saturating_sub(1) {
        let d0 = branch[i].delta_st - branch[i - 1].delta_st;
        let d1 = branch[i + 1].delta_st - branch[i].delta_st;
        if d0 * d1 < 0.0 {
            out.push(i);
        }
    }
    out
}
