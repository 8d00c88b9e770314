//! Small optimization utilities: a safeguarded one-dimensional maximizer
//! driven by the analytic derivative, and a Nelder-Mead simplex search for
//! the benchmark likelihoods that have no cheap gradients.

/// Result of a one-dimensional maximization over a closed box.
#[derive(Debug, Clone, Copy)]
pub struct Line1d {
    pub theta: f64,
    /// Derivative at the returned point.
    pub score: f64,
    /// False only when the bracketing/root iteration gave up.
    pub converged: bool,
    /// The maximum sits on a box edge; the score need not vanish there.
    pub at_boundary: bool,
}

/// Maximize a smooth function on [lo, hi] given only its derivative.
///
/// The derivative is scanned on a uniform grid; a sign change from + to -
/// brackets an interior maximum that Brent's method then polishes. Exact
/// zeros are treated as missing information (they arise from probability
/// underflow near correlation caps), so plateaus of zeros at the edges do
/// not masquerade as boundary maxima. A derivative that never changes sign
/// puts the maximum on the matching edge.
pub fn maximize_scored<F: FnMut(f64) -> f64>(
    mut score: F,
    lo: f64,
    hi: f64,
    grid: usize,
    tol: f64,
) -> Line1d {
    debug_assert!(lo < hi && grid >= 2);
    let h = (hi - lo) / grid as f64;
    let mut ts = Vec::with_capacity(grid + 1);
    let mut ss = Vec::with_capacity(grid + 1);
    for i in 0..=grid {
        let t = if i == grid { hi } else { lo + i as f64 * h };
        let s = score(t);
        if !s.is_nan() {
            ts.push(t);
            ss.push(s);
        }
    }
    let any_pos = ss.iter().any(|&s| s > 0.0);
    let any_neg = ss.iter().any(|&s| s < 0.0);
    match (any_pos, any_neg) {
        (false, false) => {
            // flat score: no information in the box
            let theta = 0.0f64.clamp(lo, hi);
            Line1d { theta, score: 0.0, converged: true, at_boundary: false }
        }
        (true, false) => Line1d {
            theta: hi,
            score: *ss.last().unwrap(),
            converged: true,
            at_boundary: true,
        },
        (false, true) => Line1d { theta: lo, score: ss[0], converged: true, at_boundary: true },
        (true, true) => {
            // bracket the first + to - crossing, skipping zero plateaus
            let mut j = None;
            for (idx, &s) in ss.iter().enumerate() {
                if s < 0.0 && ss[..idx].iter().any(|&v| v > 0.0) {
                    j = Some(idx);
                    break;
                }
            }
            let Some(j) = j else {
                // negatives only precede positives: rising overall
                return Line1d {
                    theta: hi,
                    score: *ss.last().unwrap(),
                    converged: true,
                    at_boundary: true,
                };
            };
            let i = (0..j).rev().find(|&i| ss[i] > 0.0).unwrap();
            let (theta, sc, ok) = brent_root(&mut score, ts[i], ts[j], ss[i], ss[j], tol);
            Line1d { theta, score: sc, converged: ok, at_boundary: false }
        }
    }
}

/// Brent's root finder on [a, b] with fa > 0 >= fb (or general sign change).
/// Returns (root, f(root), converged).
fn brent_root<F: FnMut(f64) -> f64>(
    f: &mut F,
    mut a: f64,
    mut b: f64,
    mut fa: f64,
    mut fb: f64,
    tol: f64,
) -> (f64, f64, bool) {
    if fa == 0.0 {
        return (a, fa, true);
    }
    if fb == 0.0 {
        return (b, fb, true);
    }
    debug_assert!(fa * fb < 0.0);
    let mut c = a;
    let mut fc = fa;
    let mut d = b - a;
    let mut e = d;
    for _ in 0..100 {
        if fb.abs() > fc.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol1 = 2.0 * f64::EPSILON * b.abs() + 0.5 * 1e-12;
        let xm = 0.5 * (c - b);
        if xm.abs() <= tol1 || fb.abs() <= tol {
            return (b, fb, true);
        }
        if e.abs() >= tol1 && fa.abs() > fb.abs() {
            // inverse quadratic / secant step
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * xm * s;
                q = 1.0 - s;
            } else {
                let qq = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * xm * qq * (qq - r) - (b - a) * (r - 1.0));
                q = (qq - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            }
            p = p.abs();
            if 2.0 * p < (3.0 * xm * q - (tol1 * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = xm;
                e = d;
            }
        } else {
            d = xm;
            e = d;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol1 { d } else { tol1 * xm.signum() };
        fb = f(b);
        if (fb > 0.0) == (fc > 0.0) {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
    }
    (b, fb, false)
}

/// Nelder-Mead minimization. Returns (argmin, min).
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    start: &[f64],
    step: f64,
    ftol: f64,
    max_iter: usize,
) -> (Vec<f64>, f64) {
    let n = start.len();
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(start.to_vec());
    for i in 0..n {
        let mut v = start.to_vec();
        v[i] += if v[i].abs() > 1e-8 { step * v[i].abs() } else { step };
        simplex.push(v);
    }
    let mut fv: Vec<f64> = simplex.iter().map(|v| f(v)).collect();

    for _ in 0..max_iter {
        // order ascending by value
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&i, &j| fv[i].partial_cmp(&fv[j]).unwrap());
        let best = order[0];
        let worst = order[n];
        let second_worst = order[n - 1];
        if (fv[worst] - fv[best]).abs() <= ftol * (1.0 + fv[best].abs()) {
            return (simplex[best].clone(), fv[best]);
        }
        // centroid excluding the worst vertex
        let mut centroid = vec![0.0; n];
        for (i, v) in simplex.iter().enumerate() {
            if i == worst {
                continue;
            }
            for c in 0..n {
                centroid[c] += v[c] / n as f64;
            }
        }
        let blend = |a: f64| -> Vec<f64> {
            (0..n).map(|c| centroid[c] + a * (simplex[worst][c] - centroid[c])).collect()
        };
        let refl = blend(-1.0);
        let f_refl = f(&refl);
        if f_refl < fv[best] {
            let exp = blend(-2.0);
            let f_exp = f(&exp);
            if f_exp < f_refl {
                simplex[worst] = exp;
                fv[worst] = f_exp;
            } else {
                simplex[worst] = refl;
                fv[worst] = f_refl;
            }
        } else if f_refl < fv[second_worst] {
            simplex[worst] = refl;
            fv[worst] = f_refl;
        } else {
            let contr = if f_refl < fv[worst] { blend(-0.5) } else { blend(0.5) };
            let f_contr = f(&contr);
            if f_contr < fv[worst].min(f_refl) {
                simplex[worst] = contr;
                fv[worst] = f_contr;
            } else {
                // shrink toward the best vertex
                let b = simplex[best].clone();
                for (i, v) in simplex.iter_mut().enumerate() {
                    if i == best {
                        continue;
                    }
                    for c in 0..n {
                        v[c] = b[c] + 0.5 * (v[c] - b[c]);
                    }
                    fv[i] = f(v);
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..=n).collect();
    order.sort_by(|&i, &j| fv[i].partial_cmp(&fv[j]).unwrap());
    (simplex[order[0]].clone(), fv[order[0]])
}
