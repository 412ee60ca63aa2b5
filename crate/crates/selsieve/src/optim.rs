//! Damped-Newton maximizer with backtracking line search for smooth concave
//! log-likelihoods. Falls back to gradient ascent when the (regularized)
//! Hessian fails to be negative definite.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

pub trait Objective {
    fn dim(&self) -> usize;
    /// Objective value and analytic gradient.
    fn value_grad(&self, theta: &DVector<f64>) -> (f64, DVector<f64>);
    /// Analytic Hessian when available; otherwise a finite-difference
    /// Hessian of the gradient is used.
    fn hessian(&self, _theta: &DVector<f64>) -> Option<DMatrix<f64>> {
        None
    }
}

#[derive(Debug, Clone)]
pub struct OptOptions {
    pub gtol: f64,
    pub max_iter: usize,
    /// Compare the analytic gradient against central finite differences at
    /// the initial point and error out on relative error > 1e-4.
    pub check_gradient: bool,
}

impl Default for OptOptions {
    fn default() -> Self {
        OptOptions { gtol: 1e-8, max_iter: 200, check_gradient: false }
    }
}

#[derive(Debug, Clone)]
pub struct OptResult {
    pub argmax: DVector<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

pub fn fd_gradient<O: Objective>(obj: &O, theta: &DVector<f64>) -> DVector<f64> {
    let mut g = DVector::zeros(theta.len());
    for j in 0..theta.len() {
        let h = 1e-6 * (1.0 + theta[j].abs());
        let mut tp = theta.clone();
        let mut tm = theta.clone();
        tp[j] += h;
        tm[j] -= h;
        g[j] = (obj.value_grad(&tp).0 - obj.value_grad(&tm).0) / (2.0 * h);
    }
    g
}

fn fd_hessian<O: Objective>(obj: &O, theta: &DVector<f64>) -> DMatrix<f64> {
    let d = theta.len();
    let mut h = DMatrix::zeros(d, d);
    for j in 0..d {
        let step = 1e-5 * (1.0 + theta[j].abs());
        let mut tp = theta.clone();
        let mut tm = theta.clone();
        tp[j] += step;
        tm[j] -= step;
        let gp = obj.value_grad(&tp).1;
        let gm = obj.value_grad(&tm).1;
        let col = (gp - gm) / (2.0 * step);
        for i in 0..d {
            h[(i, j)] = col[i];
        }
    }
    // symmetrize
    for i in 0..d {
        for j in 0..i {
            let v = 0.5 * (h[(i, j)] + h[(j, i)]);
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
    h
}

pub fn maximize<O: Objective>(obj: &O, init: DVector<f64>, opts: &OptOptions) -> Result<OptResult> {
    let d = init.len();
    if d != obj.dim() {
        return Err(Error::DimensionMismatch { expected: obj.dim(), got: d });
    }
    let (mut f, mut g) = obj.value_grad(&init);
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteObjective(0));
    }
    if opts.check_gradient {
        let fdg = fd_gradient(obj, &init);
        let denom = g.norm().max(fdg.norm()).max(1.0);
        let rel = (&g - &fdg).norm() / denom;
        if rel > 1e-4 {
            return Err(Error::InvalidArgument(format!(
                "analytic gradient fails finite-difference check (relative error {rel:.3e})"
            )));
        }
    }
    let mut theta = init;
    let mut gnorm = g.amax();
    for iter in 0..opts.max_iter {
        if gnorm <= opts.gtol {
            return Ok(OptResult { argmax: theta, value: f, grad_norm: gnorm, iterations: iter, converged: true });
        }
        let hess = obj.hessian(&theta).unwrap_or_else(|| fd_hessian(obj, &theta));
        // Solve (-H + eps I) dir = g with eps doubling until positive definite.
        let mut neg_h = -hess;
        let mut eps = 0.0_f64;
        let dir = loop {
            if eps > 0.0 {
                for i in 0..d {
                    neg_h[(i, i)] += eps;
                }
            }
            match neg_h.clone().cholesky() {
                Some(ch) => break Some(ch.solve(&g)),
                None => {
                    eps = if eps == 0.0 { 1e-8 } else { eps }; // next loop adds eps again, doubling below
                }
            }
            if eps > 1e12 {
                break None;
            }
            eps *= 2.0;
        };
        // Gradient-ascent fallback when the Hessian is hopeless or the
        // Newton direction is not an ascent direction.
        let dir = match dir {
            Some(dvec) if dvec.dot(&g) > 0.0 => dvec,
            _ => g.clone() / g.norm().max(1.0),
        };
        // Backtracking line search enforcing monotone ascent (Armijo).
        let slope = dir.dot(&g);
        let mut step = 1.0_f64;
        let mut accepted = false;
        for _ in 0..60 {
            let cand = &theta + &dir * step;
            let (fc, gc) = obj.value_grad(&cand);
            if fc.is_finite() && gc.iter().all(|v| v.is_finite()) && fc >= f + 1e-4 * step * slope
            {
                theta = cand;
                f = fc;
                g = gc;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // try a pure (scaled) gradient step before giving up
            let gdir = g.clone() / g.norm().max(1.0);
            let mut stepg = 1.0;
            let mut ok = false;
            for _ in 0..60 {
                let cand = &theta + &gdir * stepg;
                let (fc, gc) = obj.value_grad(&cand);
                if fc.is_finite() && gc.iter().all(|v| v.is_finite()) && fc > f {
                    theta = cand;
                    f = fc;
                    g = gc;
                    ok = true;
                    break;
                }
                stepg *= 0.5;
            }
            if !ok {
                gnorm = g.amax();
                return Ok(OptResult {
                    argmax: theta,
                    value: f,
                    grad_norm: gnorm,
                    iterations: iter + 1,
                    converged: gnorm <= opts.gtol,
                });
            }
        }
        gnorm = g.amax();
    }
    Ok(OptResult {
        argmax: theta,
        value: f,
        grad_norm: gnorm,
        iterations: opts.max_iter,
        converged: gnorm <= opts.gtol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    struct Quadratic {
        a: DVector<f64>,
    }
    impl Objective for Quadratic {
        fn dim(&self) -> usize {
            self.a.len()
        }
        fn value_grad(&self, theta: &DVector<f64>) -> (f64, DVector<f64>) {
            let d = theta - &self.a;
            (-d.norm_squared(), -2.0 * d)
        }
    }

    struct LogisticIntercept {
        n1: f64,
        n0: f64,
    }
    impl Objective for LogisticIntercept {
        fn dim(&self) -> usize {
            1
        }
        fn value_grad(&self, theta: &DVector<f64>) -> (f64, DVector<f64>) {
            let t = theta[0];
            let p = 1.0 / (1.0 + (-t).exp());
            let ll = self.n1 * p.ln() + self.n0 * (1.0 - p).ln();
            (ll, DVector::from_element(1, self.n1 - (self.n1 + self.n0) * p))
        }
    }

    struct BadGradient;
    impl Objective for BadGradient {
        fn dim(&self) -> usize {
            1
        }
        fn value_grad(&self, theta: &DVector<f64>) -> (f64, DVector<f64>) {
            (-theta[0] * theta[0], DVector::from_element(1, 5.0 - theta[0]))
        }
    }

    #[test]
    fn quadratic_argmax() {
        let obj = Quadratic { a: DVector::from_vec(vec![1.0, -2.0]) };
        let res = maximize(&obj, DVector::zeros(2), &OptOptions::default()).unwrap();
        assert!(res.converged);
        assert_abs_diff_eq!(res.argmax[0], 1.0, epsilon = 1e-8);
        assert_abs_diff_eq!(res.argmax[1], -2.0, epsilon = 1e-8);
    }

    #[test]
    fn logistic_intercept_closed_form() {
        let obj = LogisticIntercept { n1: 30.0, n0: 70.0 };
        let res = maximize(&obj, DVector::zeros(1), &OptOptions::default()).unwrap();
        assert!(res.converged);
        assert_abs_diff_eq!(res.argmax[0], (0.3f64 / 0.7).ln(), epsilon = 1e-8);
    }

    #[test]
    fn gradient_self_check_flags_bad_gradient() {
        let opts = OptOptions { check_gradient: true, ..Default::default() };
        let err = maximize(&BadGradient, DVector::zeros(1), &opts).unwrap_err();
        assert!(err.to_string().contains("finite-difference check"));
    }

    #[test]
    fn monotone_ascent_and_determinism() {
        let obj = Quadratic { a: DVector::from_vec(vec![3.0, 4.0, -1.0]) };
        let r1 = maximize(&obj, DVector::from_element(3, 10.0), &OptOptions::default()).unwrap();
        let r2 = maximize(&obj, DVector::from_element(3, 10.0), &OptOptions::default()).unwrap();
        assert_eq!(r1.argmax, r2.argmax);
        assert_eq!(r1.iterations, r2.iterations);
    }
}
