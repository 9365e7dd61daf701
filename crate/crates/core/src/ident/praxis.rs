//! Derivative-free minimization by conjugate directions with periodic
//! principal-axis resets (Powell's method as refined in Brent's PRAXIS),
//! restricted to a box.

use nalgebra::DMatrix;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PraxisOptions {
    /// Stop when an outer iteration lowers f by less than this fraction.
    pub ftol: f64,
    /// Stop when an outer iteration moves less than this (scaled units).
    pub xtol: f64,
    pub max_evals: usize,
    /// Outer iterations between principal-axis resets.
    pub reset_every: usize,
}

impl Default for PraxisOptions {
    fn default() -> Self {
        Self {
            ftol: 1e-12,
            xtol: 1e-13,
            max_evals: 200_000,
            reset_every: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub evals: usize,
    pub converged: bool,
}

struct Problem<'a, F> {
    f: F,
    x0: &'a [f64],
    scale: &'a [f64],
    lo: Vec<f64>,
    hi: Vec<f64>,
    evals: usize,
}

impl<F: FnMut(&[f64]) -> f64> Problem<'_, F> {
    /// Objective in scaled coordinates `z`, with `x = x0 + scale * z`.
    fn eval(&mut self, z: &[f64]) -> f64 {
        self.evals += 1;
        let x: Vec<f64> = z.iter().zip(self.x0).zip(self.scale).map(|((z, x0), s)| x0 + s * z).collect();
        let v = (self.f)(&x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    }

    /// Feasible step range along `d` from `z`.
    fn alpha_range(&self, z: &[f64], d: &[f64]) -> (f64, f64) {
        let (mut a, mut b) = (f64::NEG_INFINITY, f64::INFINITY);
        for i in 0..z.len() {
            if d[i].abs() < 1e-300 {
                continue;
            }
            let t1 = (self.lo[i] - z[i]) / d[i];
            let t2 = (self.hi[i] - z[i]) / d[i];
            a = a.max(t1.min(t2));
            b = b.min(t1.max(t2));
        }
        (a.min(0.0), b.max(0.0))
    }

    /// Line minimum of f(z + t d) for t in the feasible range; returns
    /// `(t, f)` with `f <= f0`.
    fn line(&mut self, z: &[f64], d: &[f64], f0: f64, h0: f64) -> (f64, f64) {
        let (amin, amax) = self.alpha_range(z, d);
        if amax - amin <= 0.0 {
            return (0.0, f0);
        }
        let at = |t: f64, p: &mut Self| {
            let zt: Vec<f64> = z.iter().zip(d).map(|(a, b)| a + t * b).collect();
            p.eval(&zt)
        };
        // Bracket: find a < b < c with f(b) below both ends.
        let h = h0.abs().max(1e-10);
        let mut b = h.min(amax);
        let mut fb = if b > 0.0 { at(b, self) } else { f64::INFINITY };
        let mut a = 0.0;
        if fb >= f0 {
            let t = (-h).max(amin);
            let ft = if t < 0.0 { at(t, self) } else { f64::INFINITY };
            if ft < f0 {
                b = t;
                fb = ft;
            } else {
                // Minimum between the two probes.
                let lo = if t < 0.0 { t } else { 0.0 };
                let hi = if b > 0.0 { b } else { 0.0 };
                return self.brent(z, d, lo, hi, 0.0, f0);
            }
        }
        // Expand in the descent direction.
        loop {
            let c = (b + 1.618_033_988_749_895 * (b - a)).clamp(amin, amax);
            if c == b {
                // Minimum is at the box edge.
                return (b, fb);
            }
            let fc = at(c, self);
            if fc >= fb {
                let (lo, hi) = if a < c { (a, c) } else { (c, a) };
                return self.brent(z, d, lo, hi, b, fb);
            }
            a = b;
            b = c;
            fb = fc;
        }
    }

    /// Brent's parabolic/golden-section minimization on `[lo, hi]` starting
    /// from the interior point `x` with value `fx`.
    fn brent(&mut self, z: &[f64], d: &[f64], mut lo: f64, mut hi: f64, x0: f64, fx0: f64) -> (f64, f64) {
        const CGOLD: f64 = 0.381_966_011_250_105;
        let tol = 1.5e-8;
        let at = |t: f64, p: &mut Self| {
            let zt: Vec<f64> = z.iter().zip(d).map(|(a, b)| a + t * b).collect();
            p.eval(&zt)
        };
        let (mut x, mut fx) = (x0, fx0);
        if !(x > lo && x < hi) {
            x = lo + CGOLD * (hi - lo);
            fx = at(x, self);
        }
        let (mut w, mut fw, mut v, mut fv) = (x, fx, x, fx);
        let (mut dstep, mut e): (f64, f64) = (0.0, 0.0);
        for _ in 0..100 {
            let xm = 0.5 * (lo + hi);
            let tol1 = tol * x.abs() + 1e-14;
            let tol2 = 2.0 * tol1;
            if (x - xm).abs() <= tol2 - 0.5 * (hi - lo) {
                break;
            }
            let mut golden = true;
            if e.abs() > tol1 {
                let r = (x - w) * (fx - fv);
                let mut q = (x - v) * (fx - fw);
                let mut p = (x - v) * q - (x - w) * r;
                q = 2.0 * (q - r);
                if q > 0.0 {
                    p = -p;
                }
                q = q.abs();
                let etemp = e;
                e = dstep;
                if p.abs() < (0.5 * q * etemp).abs() && p > q * (lo - x) && p < q * (hi - x) {
                    dstep = p / q;
                    let u = x + dstep;
                    if u - lo < tol2 || hi - u < tol2 {
                        dstep = tol1.copysign(xm - x);
                    }
                    golden = false;
                }
            }
            if golden {
                e = if x >= xm { lo - x } else { hi - x };
                dstep = CGOLD * e;
            }
            let u = if dstep.abs() >= tol1 { x + dstep } else { x + tol1.copysign(dstep) };
            let fu = at(u, self);
            if fu <= fx {
                if u >= x {
                    lo = x;
                } else {
                    hi = x;
                }
                v = w;
                fv = fw;
                w = x;
                fw = fx;
                x = u;
                fx = fu;
            } else {
                if u < x {
                    lo = u;
                } else {
                    hi = u;
                }
                if fu <= fw || w == x {
                    v = w;
                    fv = fw;
                    w = u;
                    fw = fu;
                } else if fu <= fv || v == x || v == w {
                    v = u;
                    fv = fu;
                }
            }
        }
        (x, fx)
    }
}

/// Minimizes `f` over the box `[lo, hi]` from `x0`. Coordinates are scaled
/// by `scale` internally; the result never has a higher value than `x0`.
pub fn minimize<F: FnMut(&[f64]) -> f64>(f: F, x0: &[f64], lo: &[f64], hi: &[f64], scale: &[f64], opts: &PraxisOptions) -> Minimum {
    let n = x0.len();
    assert!(lo.len() == n && hi.len() == n && scale.len() == n, "dimension mismatch");
    let mut p = Problem {
        f,
        x0,
        scale,
        lo: (0..n).map(|i| (lo[i] - x0[i]) / scale[i]).collect(),
        hi: (0..n).map(|i| (hi[i] - x0[i]) / scale[i]).collect(),
        evals: 0,
    };
    let mut z = vec![0.0; n];
    let mut fz = p.eval(&z);
    let mut dirs = identity(n);
    let mut steps = vec![0.1; n];
    let mut converged = false;
    let mut on_axes = false;
    let mut quiet = 0;
    let mut iter = 0;
    while p.evals < opts.max_evals {
        iter += 1;
        let (z_start, f_start) = (z.clone(), fz);
        let (mut big, mut ibig) = (0.0, 0);
        for i in 0..n {
            let before = fz;
            let (t, ft) = p.line(&z, &dirs[i], fz, steps[i]);
            if ft < fz {
                for j in 0..n {
                    z[j] += t * dirs[i][j];
                }
                fz = ft;
            }
            steps[i] = t.abs().max(1e-3 * steps[i]);
            if before - fz > big {
                big = before - fz;
                ibig = i;
            }
        }
        let mut new_dir: Vec<f64> = z.iter().zip(&z_start).map(|(a, b)| a - b).collect();
        let len = new_dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        if len > 0.0 {
            new_dir.iter_mut().for_each(|v| *v /= len);
            let (t, ft) = p.line(&z, &new_dir, fz, len);
            if ft < fz {
                for j in 0..n {
                    z[j] += t * new_dir[j];
                }
                fz = ft;
            }
            dirs[ibig] = new_dir;
            steps[ibig] = (len + t.abs()).max(1e-12);
        }
        let moved = z.iter().zip(&z_start).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let small_f = 2.0 * (f_start - fz) <= opts.ftol * (f_start.abs() + fz.abs()) + 1e-300;
        let small_x = moved <= opts.xtol * (1.0 + z.iter().map(|v| v * v).sum::<f64>().sqrt());
        if small_f || small_x {
            quiet += 1;
            if quiet >= 2 {
                // Conjugate directions can stall against an active bound;
                // only stop once a pass along the coordinate axes is quiet too.
                if on_axes {
                    converged = true;
                    break;
                }
                dirs = identity(n);
                steps = vec![0.1; n];
                on_axes = true;
                quiet = 0;
            }
        } else {
            quiet = 0;
            on_axes = false;
        }
        if iter % opts.reset_every == 0 {
            dirs = principal_axes(&dirs, &steps);
        }
    }
    let x = z.iter().zip(x0).zip(scale).map(|((z, x0), s)| x0 + s * z).collect();
    Minimum {
        x,
        f: fz,
        evals: p.evals,
        converged,
    }
}

fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect()
}

/// Left singular vectors of the direction matrix weighted by recent step
/// lengths: an orthonormal basis aligned with the valley's principal axes.
fn principal_axes(dirs: &[Vec<f64>], steps: &[f64]) -> Vec<Vec<f64>> {
    let n = dirs.len();
    let smax = steps.iter().copied().fold(0.0, f64::max).max(1e-300);
    let m = DMatrix::from_fn(n, n, |i, j| dirs[j][i] * steps[j].max(1e-6 * smax));
    let svd = m.svd(true, false);
    match svd.u {
        Some(u) => (0..n).map(|j| u.column(j).iter().copied().collect()).collect(),
        None => dirs.to_vec(),
    }
}
