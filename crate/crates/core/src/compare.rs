//! Curve and statistics comparisons shared by the experiment pipeline and
//! the acceptance checks.

/// Relative distance from `p` to the polyline `curve` in the max norm:
/// the smallest `max(|da|/|p.0|, |db|/|p.1|)` over all points on the
/// segments. Unlike a vertical gap this stays meaningful near folds, where
/// the curve is vertical in one coordinate.
pub fn graph_distance(p: (f64, f64), curve: &[(f64, f64)]) -> f64 {
    let (sa, sb) = (p.0.abs().max(f64::MIN_POSITIVE), p.1.abs().max(f64::MIN_POSITIVE));
    let dist = |q: (f64, f64)| ((q.0 - p.0) / sa).abs().max(((q.1 - p.1) / sb).abs());
    match curve.len() {
        0 => f64::INFINITY,
        1 => dist(curve[0]),
        _ => curve.windows(2).map(|w| segment_distance(p, w[0], w[1], sa, sb)).fold(f64::INFINITY, f64::min),
    }
}

fn segment_distance(p: (f64, f64), q0: (f64, f64), q1: (f64, f64), sa: f64, sb: f64) -> f64 {
    // Both components are affine in t, so the max of their moduli is convex
    // and piecewise linear: the minimum sits at an end, at a zero of either
    // component, or where the two moduli cross.
    let (a0, da) = ((q0.0 - p.0) / sa, (q1.0 - q0.0) / sa);
    let (b0, db) = ((q0.1 - p.1) / sb, (q1.1 - q0.1) / sb);
    let mut ts = vec![0.0, 1.0];
    for (num, den) in [(-a0, da), (-b0, db), (b0 - a0, da - db), (-(a0 + b0), da + db)] {
        if den != 0.0 {
            ts.push(num / den);
        }
    }
    ts.into_iter()
        .filter(|t| (0.0..=1.0).contains(t))
        .map(|t| (a0 + t * da).abs().max((b0 + t * db).abs()))
        .fold(f64::INFINITY, f64::min)
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Ranks starting at 1, ties sharing their average rank.
pub fn ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut r = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let avg = 0.5 * (i + j) as f64 + 1.0;
        for k in i..=j {
            r[idx[k]] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation (Pearson correlation of the ranks). NaN when
/// either input is constant or the lengths differ.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    if x.len() != y.len() || x.len() < 2 {
        return f64::NAN;
    }
    pearson(&ranks(x), &ranks(y))
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    sxy / (sxx * syy).sqrt()
}

/// Sample mean and standard deviation (n - 1 denominator).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let m = values.iter().sum::<f64>() / n;
    let s = (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    (m, s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn distance_to_vertical_segment() {
        // A vertical segment: the vertical gap would be undefined.
        let c = [(1.0, 0.0), (1.0, 2.0)];
        assert!((graph_distance((1.01, 1.0), &c) - 0.01 / 1.01).abs() < 1e-15);
        assert_eq!(graph_distance((1.0, 1.0), &c), 0.0);
        assert!((graph_distance((1.0, 3.0), &c) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(graph_distance((1.0, 1.0), &[]), f64::INFINITY);
    }

    #[test]
    fn spearman_known_values() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0, 4.0], &[10.0, 20.0, 25.0, 100.0]), 1.0);
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), -1.0);
        // Textbook example with ties: ranks (1, 2.5, 2.5, 4).
        assert_eq!(ranks(&[1.0, 5.0, 5.0, 9.0]), vec![1.0, 2.5, 2.5, 4.0]);
        let r = spearman(&[1.0, 2.0, 3.0, 4.0, 5.0], &[2.0, 1.0, 4.0, 3.0, 5.0]);
        assert!((r - 0.8).abs() < 1e-12);
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    proptest! {
        #[test]
        fn distance_brute_force(px in 0.1f64..3.0, py in 0.1f64..3.0, q in proptest::collection::vec((0.0f64..3.0, 0.0f64..3.0), 2..6)) {
            let d = graph_distance((px, py), &q);
            let mut brute = f64::INFINITY;
            for w in q.windows(2) {
                for k in 0..=2000 {
                    let t = k as f64 / 2000.0;
                    let a = w[0].0 + t * (w[1].0 - w[0].0);
                    let b = w[0].1 + t * (w[1].1 - w[0].1);
                    brute = brute.min(((a - px) / px).abs().max(((b - py) / py).abs()));
                }
            }
            prop_assert!(d <= brute + 1e-12);
            prop_assert!(brute - d <= 3.0 * 3.0 / 2000.0 / px.min(py));
        }

        #[test]
        fn spearman_invariant_under_monotone_maps(v in proptest::collection::vec(-10.0f64..10.0, 3..20), w in proptest::collection::vec(-10.0f64..10.0, 3..20)) {
            let n = v.len().min(w.len());
            let (v, w) = (&v[..n], &w[..n]);
            let r = spearman(v, w);
            let ve: Vec<f64> = v.iter().map(|x| x.exp()).collect();
            let r2 = spearman(&ve, w);
            prop_assert!(r.is_nan() && r2.is_nan() || (r - r2).abs() < 1e-12);
        }
    }
}
