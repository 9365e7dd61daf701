//! Least-squares identification of `(mu_t, nu_t, rho_t, b_t, c_a)` from
//! amplitude-response data `(A_base, zeta, X)`, with asymptotic standard
//! deviations and confidence bands from the linearised model.

pub mod praxis;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::analytic::{static_deflection, TildeParams};
use crate::error::{invalid, Error, Result};
use crate::plant::DuffingParams;

pub const N_PARAMS: usize = 5;
pub const PARAM_NAMES: [&str; N_PARAMS] = ["mu_t", "nu_t", "rho_t", "b_t", "c_a"];
/// Relative singular-value threshold below which a direction of the
/// sensitivity matrix counts as unidentifiable.
pub const SINGULAR_RCOND: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdParams {
    pub mu_t: f64,
    pub nu_t: f64,
    pub rho_t: f64,
    pub b_t: f64,
    pub c_a: f64,
}

impl IdParams {
    /// Generic starting point used when nothing better is known.
    pub const GENERIC_INIT: IdParams = IdParams {
        mu_t: 0.2,
        nu_t: 0.0,
        rho_t: 0.0,
        b_t: 0.01,
        c_a: 0.03,
    };

    pub fn to_array(&self) -> [f64; N_PARAMS] {
        [self.mu_t, self.nu_t, self.rho_t, self.b_t, self.c_a]
    }

    pub fn from_array(a: &[f64]) -> Self {
        Self {
            mu_t: a[0],
            nu_t: a[1],
            rho_t: a[2],
            b_t: a[3],
            c_a: a[4],
        }
    }

    pub fn tilde(&self, zeta: f64) -> TildeParams {
        TildeParams {
            mu_t: self.mu_t,
            nu_t: self.nu_t,
            rho_t: self.rho_t,
            b_t: self.b_t,
            zeta,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lo: IdParams,
    pub hi: IdParams,
}

impl Default for Bounds {
    fn default() -> Self {
        Self {
            lo: IdParams {
                mu_t: -2.0,
                nu_t: -1.0,
                rho_t: -0.5,
                b_t: 0.0,
                c_a: 1e-4,
            },
            hi: IdParams {
                mu_t: 2.0,
                nu_t: 1.0,
                rho_t: 0.5,
                b_t: 0.5,
                c_a: 1.0,
            },
        }
    }
}

impl Bounds {
    pub fn contains(&self, p: &IdParams) -> bool {
        let (lo, hi, v) = (self.lo.to_array(), self.hi.to_array(), p.to_array());
        (0..N_PARAMS).all(|i| v[i] >= lo[i] && v[i] <= hi[i])
    }

    pub fn clamp(&self, p: &IdParams) -> IdParams {
        let (lo, hi, v) = (self.lo.to_array(), self.hi.to_array(), p.to_array());
        let c: Vec<f64> = (0..N_PARAMS).map(|i| v[i].clamp(lo[i], hi[i])).collect();
        IdParams::from_array(&c)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    OpenLoop,
    Cbc,
    Synthetic,
}

impl Source {
    pub fn as_str(&self) -> &'static str {
        match self {
            Source::OpenLoop => "openloop",
            Source::Cbc => "cbc",
            Source::Synthetic => "synthetic",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataPoint {
    pub a_base: f64,
    pub zeta: f64,
    pub x_amp: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub points: Vec<DataPoint>,
    pub source: Source,
    pub noise_level: f64,
}

impl Dataset {
    pub fn new(points: Vec<DataPoint>, source: Source, noise_level: f64) -> Result<Self> {
        let d = Self {
            points,
            source,
            noise_level,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, p) in self.points.iter().enumerate() {
            if !(p.x_amp >= 0.0) || !(p.zeta > 0.0) || !p.a_base.is_finite() || !p.zeta.is_finite() || !p.x_amp.is_finite() {
                return invalid(format!("data point {i} needs x_amp >= 0, zeta > 0 and finite values"));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Model base-acceleration amplitude `delta_st(X, zeta) / c_a`.
pub fn model(p: &IdParams, zeta: f64, x_amp: f64) -> f64 {
    static_deflection(x_amp, &p.tilde(zeta)) / p.c_a
}

/// Sum of squared base-acceleration residuals.
pub fn objective(data: &Dataset, p: &IdParams) -> Result<f64> {
    if p.c_a == 0.0 || !p.c_a.is_finite() {
        return invalid("c_a must be finite and non-zero");
    }
    Ok(raw_objective(data, p))
}

fn raw_objective(data: &Dataset, p: &IdParams) -> f64 {
    data.points.iter().map(|d| (d.a_base - model(p, d.zeta, d.x_amp)).powi(2)).sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub bounds: Bounds,
    /// Also start from an 8-point lattice around the initial point.
    pub multi_start: bool,
    /// Replace the initial `c_a` by its least-squares value given the other
    /// initial parameters.
    pub init_scale_from_data: bool,
    pub ftol: f64,
    pub max_evals: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            bounds: Bounds::default(),
            multi_start: true,
            init_scale_from_data: true,
            ftol: 1e-12,
            max_evals: 200_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitResult {
    pub p_star: IdParams,
    pub residual: f64,
    /// Infinite where the parameter lies on an unidentifiable direction.
    pub estd: [f64; N_PARAMS],
    pub covariance: [[f64; N_PARAMS]; N_PARAMS],
    pub m: usize,
    pub converged: bool,
    pub singular_flags: [bool; N_PARAMS],
    pub evaluations: usize,
}

/// Least-squares `c_a` for fixed tilde parameters: `1/c = sum(A d) / sum(d^2)`.
pub fn scale_for(data: &Dataset, p: &IdParams) -> Option<f64> {
    let (mut ad, mut dd) = (0.0, 0.0);
    for d in &data.points {
        let delta = static_deflection(d.x_amp, &p.tilde(d.zeta));
        ad += d.a_base * delta;
        dd += delta * delta;
    }
    (ad > 0.0 && dd > 0.0).then(|| dd / ad)
}

/// Starting points: the initial point and eight lattice neighbours varying
/// mu_t (+-0.1), b_t (x0.5 or x1.5) and c_a (x0.7 or x1.3).
pub fn start_lattice(init: &IdParams, bounds: &Bounds) -> Vec<IdParams> {
    let mut out = vec![*init];
    for k in 0..8u32 {
        let s = |bit: u32| if k & (1 << bit) != 0 { 1.0 } else { -1.0 };
        let p = IdParams {
            mu_t: init.mu_t + 0.1 * s(0),
            b_t: init.b_t * (1.0 + 0.5 * s(1)),
            c_a: init.c_a * (1.0 + 0.3 * s(2)),
            ..*init
        };
        out.push(bounds.clamp(&p));
    }
    out
}

/// Derivative-free local fit from `init`, optionally multi-started.
pub fn fit(data: &Dataset, init: &IdParams, opts: &FitOptions) -> Result<FitResult> {
    data.validate()?;
    if data.len() < N_PARAMS {
        return invalid(format!("need at least {N_PARAMS} data points, got {}", data.len()));
    }
    if !opts.bounds.contains(init) {
        return invalid("initial parameters outside the bounds");
    }
    let mut init = *init;
    if opts.init_scale_from_data {
        if let Some(c) = scale_for(data, &init) {
            let cand = IdParams { c_a: c, ..init };
            if opts.bounds.contains(&cand) && raw_objective(data, &cand) <= raw_objective(data, &init) {
                init = cand;
            }
        }
    }
    let starts = if opts.multi_start {
        start_lattice(&init, &opts.bounds)
    } else {
        vec![init]
    };
    let lo = opts.bounds.lo.to_array();
    let hi = opts.bounds.hi.to_array();
    let floor = [0.05, 0.01, 1e-3, 1e-3, 1e-6];
    let popts = praxis::PraxisOptions {
        ftol: opts.ftol,
        max_evals: opts.max_evals,
        ..Default::default()
    };
    let mut best: Option<praxis::Minimum> = None;
    let mut evals = 0;
    for s in &starts {
        let x0 = s.to_array();
        let scale: Vec<f64> = (0..N_PARAMS).map(|i| x0[i].abs().max(floor[i])).collect();
        let f = |x: &[f64]| raw_objective(data, &IdParams::from_array(x));
        let r = praxis::minimize(f, &x0, &lo, &hi, &scale, &popts);
        evals += r.evals;
        if best.as_ref().is_none_or(|b| r.f < b.f) {
            best = Some(r);
        }
    }
    let best = best.expect("at least one start");
    let p_star = IdParams::from_array(&best.x);
    let (estd, covariance, singular_flags) = asymptotic_stddev(data, &p_star)?;
    Ok(FitResult {
        p_star,
        residual: best.f,
        estd,
        covariance,
        m: data.len(),
        converged: best.converged,
        singular_flags,
        evaluations: evals,
    })
}

fn fd_step(v: f64) -> f64 {
    (1e-6 * v.abs()).max(1e-9)
}

/// Gradient of the model output with respect to the parameters by central
/// differences.
pub fn model_gradient(p: &IdParams, zeta: f64, x_amp: f64) -> [f64; N_PARAMS] {
    let base = p.to_array();
    let mut g = [0.0; N_PARAMS];
    for j in 0..N_PARAMS {
        let h = fd_step(base[j]);
        let mut up = base;
        let mut dn = base;
        up[j] += h;
        dn[j] -= h;
        g[j] = (model(&IdParams::from_array(&up), zeta, x_amp) - model(&IdParams::from_array(&dn), zeta, x_amp)) / (2.0 * h);
    }
    g
}

/// Sensitivity matrix of the model at every data point.
pub fn model_jacobian(data: &Dataset, p: &IdParams) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(data.len(), N_PARAMS);
    for (i, d) in data.points.iter().enumerate() {
        let g = model_gradient(p, d.zeta, d.x_amp);
        for k in 0..N_PARAMS {
            j[(i, k)] = g[k];
        }
    }
    j
}

type Covariance = [[f64; N_PARAMS]; N_PARAMS];

/// Estimated standard deviations, covariance `sigma^2 (J^T J)^-1` and
/// singular flags. The Jacobian columns are scaled by parameter magnitude
/// before an SVD; directions whose relative singular value falls below
/// [`SINGULAR_RCOND`] are left out of the inverse, and parameters with a
/// significant share in them get an infinite ESTD.
pub fn asymptotic_stddev(data: &Dataset, p: &IdParams) -> Result<([f64; N_PARAMS], Covariance, [bool; N_PARAMS])> {
    let m = data.len();
    if m <= N_PARAMS {
        return invalid(format!("need more than {N_PARAMS} data points, got {m}"));
    }
    if p.c_a == 0.0 {
        return invalid("c_a must be non-zero");
    }
    let sigma2 = raw_objective(data, p) / (m - N_PARAMS) as f64;
    let j = model_jacobian(data, p);
    if j.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("identification Jacobian".into()));
    }
    let pa = p.to_array();
    let scale: Vec<f64> = pa.iter().map(|v| v.abs().max(1e-12)).collect();
    let js = DMatrix::from_fn(m, N_PARAMS, |r, c| j[(r, c)] * scale[c]);
    let svd = js.svd(false, true);
    let vt = svd.v_t.ok_or_else(|| Error::Structure("SVD failed".into()))?;
    let s = svd.singular_values;
    let smax = s.iter().copied().fold(0.0, f64::max);
    let mut cov = [[0.0; N_PARAMS]; N_PARAMS];
    let mut null_weight = [0.0; N_PARAMS];
    for k in 0..N_PARAMS {
        let regular = smax > 0.0 && s[k] >= SINGULAR_RCOND * smax;
        for a in 0..N_PARAMS {
            if !regular {
                null_weight[a] += vt[(k, a)] * vt[(k, a)];
                continue;
            }
            for b in 0..N_PARAMS {
                cov[a][b] += sigma2 * scale[a] * scale[b] * vt[(k, a)] * vt[(k, b)] / (s[k] * s[k]);
            }
        }
    }
    let mut flags = [false; N_PARAMS];
    let mut estd = [0.0; N_PARAMS];
    for a in 0..N_PARAMS {
        flags[a] = null_weight[a] > 0.1;
        estd[a] = if flags[a] { f64::INFINITY } else { cov[a][a].max(0.0).sqrt() };
    }
    Ok((estd, cov, flags))
}

/// Two-sided standard-normal quantile for confidence `level`.
pub fn z_value(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return invalid(format!("confidence level must be in (0, 1), got {level}"));
    }
    let n = Normal::new(0.0, 1.0).map_err(|e| Error::InvalidInput(e.to_string()))?;
    Ok(n.inverse_cdf(0.5 * (1.0 + level)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandPoint {
    pub x_amp: f64,
    pub a_base: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceBand {
    pub zeta: f64,
    pub level: f64,
    pub points: Vec<BandPoint>,
    pub warning: Option<String>,
}

impl ConfidenceBand {
    /// Band width integrated over X by the trapezoidal rule.
    pub fn area(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| 0.5 * (w[1].x_amp - w[0].x_amp) * ((w[0].upper - w[0].lower) + (w[1].upper - w[1].lower)))
            .sum()
    }
}

/// `model +- z sqrt(g^T C g)` on `x_grid` with `g` the model gradient.
pub fn confidence_band(fit: &FitResult, zeta: f64, x_grid: &[f64], level: f64) -> Result<ConfidenceBand> {
    let z = z_value(level)?;
    let warning = fit
        .singular_flags
        .iter()
        .any(|f| *f)
        .then(|| "covariance is singular; band covers the identifiable subspace only".to_string());
    let mut points = Vec::with_capacity(x_grid.len());
    for &x in x_grid {
        let g = model_gradient(&fit.p_star, zeta, x);
        let mut var = 0.0;
        for a in 0..N_PARAMS {
            for b in 0..N_PARAMS {
                var += g[a] * fit.covariance[a][b] * g[b];
            }
        }
        let c = model(&fit.p_star, zeta, x);
        let half = z * var.max(0.0).sqrt();
        points.push(BandPoint {
            x_amp: x,
            a_base: c,
            lower: c - half,
            upper: c + half,
        });
    }
    Ok(ConfidenceBand {
        zeta,
        level,
        points,
        warning,
    })
}

/// Dimensional model parameters from the normalized ones.
pub fn recover_dimensional(p: &IdParams, omega_n: f64) -> DuffingParams {
    DuffingParams::from_tilde(&p.tilde(1.0), omega_n)
}

#[derive(Serialize, Deserialize)]
struct NamedParams {
    mu_t: Option<f64>,
    nu_t: Option<f64>,
    rho_t: Option<f64>,
    b_t: Option<f64>,
    c_a: Option<f64>,
}

impl NamedParams {
    fn from(a: [f64; N_PARAMS]) -> Self {
        let f = |v: f64| v.is_finite().then_some(v);
        Self {
            mu_t: f(a[0]),
            nu_t: f(a[1]),
            rho_t: f(a[2]),
            b_t: f(a[3]),
            c_a: f(a[4]),
        }
    }

    fn to_array(&self) -> [f64; N_PARAMS] {
        let f = |v: Option<f64>| v.unwrap_or(f64::INFINITY);
        [f(self.mu_t), f(self.nu_t), f(self.rho_t), f(self.b_t), f(self.c_a)]
    }
}

#[derive(Serialize, Deserialize)]
struct NamedFlags {
    mu_t: bool,
    nu_t: bool,
    rho_t: bool,
    b_t: bool,
    c_a: bool,
}

#[derive(Serialize, Deserialize)]
struct FitResultJson {
    params: NamedParams,
    /// `null` marks an unidentifiable parameter.
    estd: NamedParams,
    residual: f64,
    m: usize,
    converged: bool,
    singular_flags: NamedFlags,
    covariance: [[f64; N_PARAMS]; N_PARAMS],
    evaluations: usize,
}

impl Serialize for FitResult {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let f = self.singular_flags;
        FitResultJson {
            params: NamedParams::from(self.p_star.to_array()),
            estd: NamedParams::from(self.estd),
            residual: self.residual,
            m: self.m,
            converged: self.converged,
            singular_flags: NamedFlags {
                mu_t: f[0],
                nu_t: f[1],
                rho_t: f[2],
                b_t: f[3],
                c_a: f[4],
            },
            covariance: self.covariance,
            evaluations: self.evaluations,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for FitResult {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let j = FitResultJson::deserialize(d)?;
        let f = &j.singular_flags;
        Ok(FitResult {
            p_star: IdParams::from_array(&j.params.to_array()),
            residual: j.residual,
            estd: j.estd.to_array(),
            covariance: j.covariance,
            m: j.m,
            converged: j.converged,
            singular_flags: [f.mu_t, f.nu_t, f.rho_t, f.b_t, f.c_a],
            evaluations: j.evaluations,
        })
    }
}
