//! Classical fourth-order Runge-Kutta step on fixed-size states.

/// Advances `y` from `t` to `t + h` for `dy/dt = f(t, y)`.
#[inline]
pub fn step<const N: usize, F>(f: &F, t: f64, y: &[f64; N], h: f64) -> [f64; N]
where
    F: Fn(f64, &[f64; N]) -> [f64; N],
{
    let k1 = f(t, y);
    let k2 = f(t + 0.5 * h, &axpy(y, 0.5 * h, &k1));
    let k3 = f(t + 0.5 * h, &axpy(y, 0.5 * h, &k2));
    let k4 = f(t + h, &axpy(y, h, &k3));
    let mut out = *y;
    for i in 0..N {
        out[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

#[inline]
fn axpy<const N: usize>(y: &[f64; N], a: f64, k: &[f64; N]) -> [f64; N] {
    let mut out = *y;
    for i in 0..N {
        out[i] += a * k[i];
    }
    out
}

/// Integrates `n_steps` fixed steps from `t0`, returning the final state.
pub fn integrate<const N: usize, F>(f: &F, t0: f64, y0: [f64; N], h: f64, n_steps: usize) -> [f64; N]
where
    F: Fn(f64, &[f64; N]) -> [f64; N],
{
    let mut y = y0;
    for j in 0..n_steps {
        y = step(f, t0 + j as f64 * h, &y, h);
    }
    y
}
