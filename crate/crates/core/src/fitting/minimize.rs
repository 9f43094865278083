//! Derivative-free minimizers: bounded Brent for one parameter, Nelder–Mead
//! for a few.

/// Result of a scalar minimization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Minimum {
    pub x: f64,
    pub fx: f64,
    pub evaluations: usize,
    pub converged: bool,
}

const GOLDEN: f64 = 0.381_966_011_250_105_1;
const REL_TOL: f64 = 1e-12;

/// Brent's golden-section / parabolic minimization of `f` on `[a, b]`.
/// Stops when the bracket around the best point is within `xtol`.
pub fn brent_bounded<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, xtol: f64, max_iter: usize) -> Minimum {
    let (mut a, mut b) = (a.min(b), a.max(b));
    let mut x = a + GOLDEN * (b - a);
    let (mut w, mut v) = (x, x);
    let mut fx = f(x);
    let (mut fw, mut fv) = (fx, fx);
    let (mut d, mut e) = (0.0f64, 0.0f64);
    let mut evaluations = 1;

    for _ in 0..max_iter {
        let m = 0.5 * (a + b);
        let tol = REL_TOL * x.abs() + xtol / 3.0;
        let tol2 = 2.0 * tol;
        if (x - m).abs() <= tol2 - 0.5 * (b - a) {
            return Minimum { x, fx, evaluations, converged: true };
        }
        let mut golden = true;
        if e.abs() > tol {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            } else {
                q = -q;
            }
            let e_prev = e;
            e = d;
            if p.abs() < (0.5 * q * e_prev).abs() && p > q * (a - x) && p < q * (b - x) {
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = if x < m { tol } else { -tol };
                }
                golden = false;
            }
        }
        if golden {
            e = if x < m { b - x } else { a - x };
            d = GOLDEN * e;
        }
        let u = if d.abs() >= tol { x + d } else { x + tol.copysign(d) };
        let fu = f(u);
        evaluations += 1;
        if fu <= fx {
            if u < x {
                b = x;
            } else {
                a = x;
            }
            (v, fv, w, fw, x, fx) = (w, fw, x, fx, u, fu);
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                (v, fv, w, fw) = (w, fw, u, fu);
            } else if fu <= fv || v == x || v == w {
                (v, fv) = (u, fu);
            }
        }
    }
    Minimum { x, fx, evaluations, converged: false }
}

/// Global-then-local scalar minimization on `[lo, hi]` (`0 < lo < hi`):
/// a log-spaced scan locates the best region, Brent refines inside the
/// neighbouring grid cells.
pub fn minimize_bracketed<F: FnMut(f64) -> f64>(mut f: F, lo: f64, hi: f64, xtol: f64) -> Minimum {
    const SCAN: usize = 121;
    let ratio = (hi / lo).ln();
    let grid: Vec<f64> = (0..SCAN)
        .map(|i| match i {
            0 => lo,
            i if i == SCAN - 1 => hi,
            i => lo * (ratio * i as f64 / (SCAN - 1) as f64).exp(),
        })
        .collect();
    let values: Vec<f64> = grid.iter().map(|&x| f(x)).collect();
    let best = values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .expect("non-empty scan");
    let a = grid[best.saturating_sub(1)];
    let b = grid[(best + 1).min(SCAN - 1)];
    let mut m = brent_bounded(&mut f, a, b, xtol, 500);
    m.evaluations += SCAN;
    if values[best] < m.fx {
        m.x = grid[best];
        m.fx = values[best];
    }
    m
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimplexMinimum {
    pub x: Vec<f64>,
    pub fx: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Nelder–Mead simplex search. Terminates when both the spread of function
/// values and the simplex diameter fall below the tolerances.
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x0: &[f64],
    step: &[f64],
    ftol: f64,
    xtol: f64,
    max_iter: usize,
) -> SimplexMinimum {
    let n = x0.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((x0.to_vec(), f(x0)));
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += step[i];
        let fx = f(&x);
        simplex.push((x, fx));
    }
    let blend = |a: &[f64], b: &[f64], t: f64| -> Vec<f64> {
        a.iter().zip(b).map(|(ai, bi)| ai + t * (bi - ai)).collect()
    };

    for iter in 0..max_iter {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let f_spread = simplex.iter().map(|s| (s.1 - simplex[0].1).abs()).fold(0.0, f64::max);
        let x_spread = simplex
            .iter()
            .flat_map(|s| s.0.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if f_spread <= ftol && x_spread <= xtol {
            let (x, fx) = simplex.swap_remove(0);
            return SimplexMinimum { x, fx, iterations: iter, converged: true };
        }

        let mut centroid = vec![0.0; n];
        for (x, _) in &simplex[..n] {
            for (c, xi) in centroid.iter_mut().zip(x) {
                *c += xi / n as f64;
            }
        }
        let worst = simplex[n].clone();
        let reflected = blend(&centroid, &worst.0, -1.0);
        let fr = f(&reflected);
        if fr < simplex[0].1 {
            let expanded = blend(&centroid, &worst.0, -2.0);
            let fe = f(&expanded);
            simplex[n] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
            continue;
        }
        if fr < simplex[n - 1].1 {
            simplex[n] = (reflected, fr);
            continue;
        }
        let (contracted, fc) = if fr < worst.1 {
            let c = blend(&centroid, &reflected, 0.5);
            let fc = f(&c);
            (c, fc)
        } else {
            let c = blend(&centroid, &worst.0, 0.5);
            let fc = f(&c);
            (c, fc)
        };
        if fc < worst.1.min(fr) {
            simplex[n] = (contracted, fc);
            continue;
        }
        let best = simplex[0].0.clone();
        for s in simplex.iter_mut().skip(1) {
            s.0 = blend(&best, &s.0, 0.5);
            s.1 = f(&s.0);
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, fx) = simplex.swap_remove(0);
    SimplexMinimum { x, fx, iterations: max_iter, converged: false }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn brent_finds_quadratic_minimum() {
        let m = brent_bounded(|x| (x - 1.234_567).powi(2), -10.0, 10.0, 1e-10, 200);
        assert!(m.converged);
        assert!((m.x - 1.234_567).abs() < 1e-9);
        // with an offset, location is only resolvable to ~sqrt(eps)
        let m = brent_bounded(|x| (x - 1.234_567).powi(2) + 3.0, -10.0, 10.0, 1e-10, 200);
        assert!((m.x - 1.234_567).abs() < 1e-7);
        assert!((m.fx - 3.0).abs() < 1e-15);
    }

    #[test]
    fn brent_respects_bounds() {
        let m = brent_bounded(|x| x, 2.0, 5.0, 1e-10, 200);
        assert!(m.x >= 2.0 && m.x - 2.0 < 1e-8);
    }

    #[test]
    fn bracketed_escapes_local_minimum() {
        // local minimum near 0.5, global near 30
        let f = |x: f64| -(-(x - 0.5).powi(2) * 40.0).exp() - 2.0 * (-((x - 30.0) / 3.0).powi(2)).exp();
        let m = minimize_bracketed(f, 1e-3, 100.0, 1e-10);
        assert!((m.x - 30.0).abs() < 1e-6, "{m:?}");
    }

    #[test]
    fn nelder_mead_rosenbrock() {
        let f = |p: &[f64]| (1.0 - p[0]).powi(2) + 100.0 * (p[1] - p[0] * p[0]).powi(2);
        let m = nelder_mead(f, &[-1.2, 1.0], &[0.1, 0.1], 1e-16, 1e-10, 5000);
        assert!(m.converged);
        assert!((m.x[0] - 1.0).abs() < 1e-6 && (m.x[1] - 1.0).abs() < 1e-6, "{m:?}");
    }
}
