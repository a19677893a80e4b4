//! Minimizers used by the QMLE: BFGS with Armijo backtracking and a
//! Nelder-Mead simplex used as a restart when the line search stalls.

use nalgebra::{DMatrix, DVector};

/// Objective to be minimized. `None` means the point is infeasible
/// (non-finite value), which the line search treats as `+inf`.
pub(crate) trait Objective {
    fn value(&self, x: &[f64]) -> Option<f64>;
    fn value_grad(&self, x: &[f64]) -> Option<(f64, Vec<f64>)>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum StopReason {
    GradientTolerance,
    MaxIterations,
    LineSearchFailed,
}

#[derive(Debug, Clone)]
pub(crate) struct Outcome {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad: Vec<f64>,
    pub iterations: usize,
    pub reason: StopReason,
}

pub(crate) struct BfgsSettings {
    pub max_iter: usize,
    /// Stop when `max|grad| <= tol * (1 + |f|)`.
    pub tol: f64,
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, &b| a.max(b.abs()))
}

/// BFGS on the inverse Hessian. `h0` is the initial inverse Hessian
/// approximation (identity if `None`).
pub(crate) fn bfgs<O: Objective>(
    obj: &O,
    x0: &[f64],
    h0: Option<DMatrix<f64>>,
    settings: &BfgsSettings,
) -> Option<Outcome> {
    let n = x0.len();
    let h_init = h0.unwrap_or_else(|| DMatrix::identity(n, n));
    let mut h = h_init.clone();
    let mut x = DVector::from_column_slice(x0);
    let (mut f, g) = obj.value_grad(x.as_slice())?;
    let mut g = DVector::from_vec(g);
    let mut reset = false;

    for it in 0..settings.max_iter {
        if max_abs(g.as_slice()) <= settings.tol * (1.0 + f.abs()) {
            return Some(done(x, f, g, it, StopReason::GradientTolerance));
        }
        let mut d = -(&h * &g);
        let mut slope = g.dot(&d);
        if !(slope < 0.0) {
            h.copy_from(&h_init);
            d = -(&h * &g);
            slope = g.dot(&d);
            if !(slope < 0.0) {
                return Some(done(x, f, g, it, StopReason::LineSearchFailed));
            }
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let xn = &x + step * &d;
            if let Some(fv) = obj.value(xn.as_slice()) {
                if fv <= f + 1e-4 * step * slope {
                    accepted = Some((xn, fv));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((xn, _)) = accepted else {
            if reset {
                return Some(done(x, f, g, it, StopReason::LineSearchFailed));
            }
            reset = true;
            h.copy_from(&h_init);
            continue;
        };
        reset = false;
        let (fn_, gn) = obj.value_grad(xn.as_slice())?;
        let gn = DVector::from_vec(gn);
        let s = &xn - &x;
        let yv = &gn - &g;
        let sy = s.dot(&yv);
        if sy > 1e-12 * s.norm() * yv.norm() {
            let rho = 1.0 / sy;
            let hy = &h * &yv;
            let yhy = yv.dot(&hy);
            // H+ = H - rho (s hy' + hy s') + (rho^2 y'Hy + rho) s s'
            h -= rho * (&s * hy.transpose() + &hy * s.transpose());
            h += (rho * rho * yhy + rho) * (&s * s.transpose());
        }
        x = xn;
        f = fn_;
        g = gn;
    }
    let it = settings.max_iter;
    let reason = if max_abs(g.as_slice()) <= settings.tol * (1.0 + f.abs()) {
        StopReason::GradientTolerance
    } else {
        StopReason::MaxIterations
    };
    Some(done(x, f, g, it, reason))
}

fn done(x: DVector<f64>, f: f64, g: DVector<f64>, iterations: usize, reason: StopReason) -> Outcome {
    Outcome {
        x: x.as_slice().to_vec(),
        f,
        grad: g.as_slice().to_vec(),
        iterations,
        reason,
    }
}

/// Derivative-free simplex search. Returns the best vertex and its value.
pub(crate) fn nelder_mead<O: Objective>(
    obj: &O,
    x0: &[f64],
    scale: f64,
    max_iter: usize,
) -> Option<(Vec<f64>, f64)> {
    let n = x0.len();
    let eval = |x: &[f64]| obj.value(x).unwrap_or(f64::INFINITY);
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((x0.to_vec(), eval(x0)));
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += if v[i].abs() > 1e-8 { scale * v[i].abs().max(0.1) } else { scale };
        let fv = eval(&v);
        simplex.push((v, fv));
    }
    if !simplex[0].1.is_finite() {
        return None;
    }
    for _ in 0..max_iter {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (best, worst) = (simplex[0].1, simplex[n].1);
        if (worst - best).abs() <= 1e-14 * (1.0 + best.abs()) {
            break;
        }
        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|v| v.0[j]).sum::<f64>() / n as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            centroid.iter().zip(&simplex[n].0).map(|(c, w)| c + t * (w - c)).collect()
        };
        let xr = along(-1.0);
        let fr = eval(&xr);
        if fr < simplex[0].1 {
            let xe = along(-2.0);
            let fe = eval(&xe);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
        } else {
            let (xc, fc) = if fr < simplex[n].1 {
                let xc = along(-0.5);
                let fc = eval(&xc);
                (xc, fc)
            } else {
                let xc = along(0.5);
                let fc = eval(&xc);
                (xc, fc)
            };
            if fc < simplex[n].1.min(fr) {
                simplex[n] = (xc, fc);
            } else {
                let x_best = simplex[0].0.clone();
                for v in simplex.iter_mut().skip(1) {
                    for (vj, bj) in v.0.iter_mut().zip(&x_best) {
                        *vj = bj + 0.5 * (*vj - bj);
                    }
                    v.1 = eval(&v.0);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, f) = simplex.swap_remove(0);
    f.is_finite().then_some((x, f))
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Rosenbrock;

    impl Objective for Rosenbrock {
        fn value(&self, x: &[f64]) -> Option<f64> {
            Some((1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2))
        }
        fn value_grad(&self, x: &[f64]) -> Option<(f64, Vec<f64>)> {
            let g0 = -2.0 * (1.0 - x[0]) - 400.0 * x[0] * (x[1] - x[0] * x[0]);
            let g1 = 200.0 * (x[1] - x[0] * x[0]);
            Some((self.value(x)?, vec![g0, g1]))
        }
    }

    #[test]
    fn bfgs_solves_rosenbrock() {
        let out = bfgs(&Rosenbrock, &[-1.2, 1.0], None, &BfgsSettings { max_iter: 500, tol: 1e-10 })
            .unwrap();
        assert_eq!(out.reason, StopReason::GradientTolerance);
        assert!((out.x[0] - 1.0).abs() < 1e-6 && (out.x[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn nelder_mead_solves_rosenbrock() {
        let (x, f) = nelder_mead(&Rosenbrock, &[-1.2, 1.0], 0.5, 5000).unwrap();
        assert!(f < 1e-10, "f = {f}");
        assert!((x[0] - 1.0).abs() < 1e-4);
    }
}
