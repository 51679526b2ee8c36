//! Small scalar routines shared by the solver, the renormalization and the
//! estimators: bracketed minimization, bisection and log-log regression.

const GOLDEN: f64 = 0.381_966_011_250_105_1;

/// Brent's minimizer on `[a, b]` (golden section with parabolic steps).
///
/// Returns the abscissa and value of a local minimum inside the bracket.
/// `xtol` is an absolute tolerance on the abscissa.
pub fn brent_minimize<F>(mut f: F, a: f64, b: f64, xtol: f64, max_iter: usize) -> (f64, f64)
where
    F: FnMut(f64) -> f64,
{
    let (mut a, mut b) = if a <= b { (a, b) } else { (b, a) };
    let mut x = a + GOLDEN * (b - a);
    let mut w = x;
    let mut v = x;
    let mut fx = f(x);
    let mut fw = fx;
    let mut fv = fx;
    let mut d: f64 = 0.0;
    let mut e: f64 = 0.0;

    for _ in 0..max_iter {
        let xm = 0.5 * (a + b);
        let tol1 = xtol + 1e-15 * x.abs();
        let tol2 = 2.0 * tol1;
        if (x - xm).abs() <= tol2 - 0.5 * (b - a) {
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
            e = d;
            if p.abs() < (0.5 * q * etemp).abs() && p > q * (a - x) && p < q * (b - x) {
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = if xm >= x { tol1 } else { -tol1 };
                }
                golden = false;
            }
        }
        if golden {
            e = if x >= xm { a - x } else { b - x };
            d = GOLDEN * e;
        }
        let u = if d.abs() >= tol1 {
            x + d
        } else if d >= 0.0 {
            x + tol1
        } else {
            x - tol1
        };
        let fu = f(u);
        if fu <= fx {
            if u >= x {
                a = x;
            } else {
                b = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
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

/// Bisection for a root of `g` on `[lo, hi]` given `g(lo) > 0 >= g(hi)`.
///
/// Stops when the bracket is narrower than `tol`; returns the upper end, where
/// `g <= 0` holds.
pub fn bisect_decreasing<G>(mut g: G, mut lo: f64, mut hi: f64, tol: f64) -> f64
where
    G: FnMut(f64) -> f64,
{
    // 200 halvings exhaust any f64 bracket
    for _ in 0..200 {
        if hi - lo <= tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

/// Least-squares line through `(x_i, y_i)`; returns `(slope, intercept, max |residual|)`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let resid = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - (intercept + slope * x)).abs())
        .fold(0.0, f64::max);
    (slope, intercept, resid)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn brent_finds_parabola_vertex() {
        let (x, fx) = brent_minimize(|t| (t - 0.3) * (t - 0.3) + 2.0, -1.0, 2.0, 1e-12, 200);
        assert!((x - 0.3).abs() < 1e-8);
        assert!((fx - 2.0).abs() < 1e-15);
    }

    #[test]
    fn brent_handles_kink() {
        let (x, _) = brent_minimize(|t: f64| (t - 0.25).abs(), -1.0, 1.0, 1e-12, 500);
        assert!((x - 0.25).abs() < 1e-9);
    }

    #[test]
    fn bisection_sqrt_two() {
        let r = bisect_decreasing(|x| 2.0 - x * x, 1.0, 2.0, 1e-14);
        assert!((r - 2f64.sqrt()).abs() < 1e-13);
    }

    #[test]
    fn exact_line() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let ys: Vec<f64> = xs.iter().map(|x| 1.5 * x - 0.5).collect();
        let (s, c, r) = linear_fit(&xs, &ys);
        assert!((s - 1.5).abs() < 1e-14 && (c + 0.5).abs() < 1e-14 && r < 1e-14);
    }
}
