//! Second stage: estimator-specific control functions, augmented partially
//! linear OLS via rank-revealing QR, and the sandwich variance estimators.

use crate::basis::{self, eval_block, eval_tensor_block, place_knots, KnotVector, TensorSpec};
use crate::error::{Error, Result};
use crate::firststage::{elementary_symmetric, MnlFit, OrderedFit, ThresholdFit};
use nalgebra::{DMatrix, DVector};

/// Relative pivot tolerance of the rank-revealing least-squares solve.
pub const PIVOT_TOL: f64 = 1e-10;

/// Second-stage control basis: cubic marginals with quantile knots, plus
/// lower-order tensor margins for interactions.
#[derive(Debug, Clone)]
pub struct SieveSpec {
    pub order: usize,
    /// Interior-knot counts per control dimension; empty means the default
    /// sample-size rule from the basis module.
    pub interior: Vec<usize>,
    pub tensor_order: usize,
    pub tensor_interior: usize,
}

impl Default for SieveSpec {
    fn default() -> Self {
        SieveSpec { order: basis::DEFAULT_ORDER, interior: Vec::new(), tensor_order: 3, tensor_interior: 1 }
    }
}

impl SieveSpec {
    fn interior_for(&self, dim_idx: usize, n: usize, l_ctrl: usize) -> usize {
        if dim_idx < self.interior.len() {
            self.interior[dim_idx]
        } else {
            basis::default_interior_knots(n, l_ctrl)
        }
    }
}

/// Fitted first-stage model, whichever architecture produced it.
#[derive(Debug, Clone)]
pub enum FirstStageFit {
    Ordered(OrderedFit),
    Thresholds(ThresholdFit),
    Mnl(MnlFit),
}

/// Control-function variant of the second stage.
#[derive(Debug, Clone, PartialEq)]
pub enum ControlVariant {
    /// Plain OLS ignoring selection.
    None,
    /// Generalized inverse Mills ratio from a parametric ordered probit,
    /// entering linearly.
    ParametricOrdered,
    /// (h_k, h_{k+1}) from cumulative sieve logits; univariate h_K for the
    /// top category.
    SieveOrdered,
    /// Inclusive value from a sieve MNL; spline-expanded unless `linear`.
    MlogitIv { linear: bool },
    /// Full estimated choice-probability vector (K columns).
    SieveProbs { full_tensor: bool },
    /// First L elementary symmetric polynomials of non-chosen probabilities.
    ExchL { l: usize },
}

#[derive(Debug, Clone)]
pub struct ControlSpec {
    pub variant: ControlVariant,
    pub sieve: SieveSpec,
}

impl ControlSpec {
    pub fn new(variant: ControlVariant) -> Self {
        ControlSpec { variant, sieve: SieveSpec::default() }
    }
}

/// Raw (unexpanded) control indices for the D = k subsample.
/// `fs_design` holds the first-stage design rows restricted to D = k.
pub fn build_controls(
    spec: &ControlSpec,
    fs: &FirstStageFit,
    fs_design: &DMatrix<f64>,
    k: usize,
) -> Result<DMatrix<f64>> {
    let n = fs_design.nrows();
    let row_of = |i: usize| -> Vec<f64> { fs_design.row(i).iter().cloned().collect() };
    match (&spec.variant, fs) {
        (ControlVariant::None, _) => Ok(DMatrix::zeros(n, 0)),
        (ControlVariant::ParametricOrdered, FirstStageFit::Ordered(fit)) => {
            let mut m = DMatrix::zeros(n, 1);
            for i in 0..n {
                m[(i, 0)] = fit.control(&row_of(i), k)?;
            }
            Ok(m)
        }
        (ControlVariant::SieveOrdered, FirstStageFit::Thresholds(fit)) => {
            let top = k == fit.k_max;
            let cols = if top { 1 } else { 2 };
            let mut m = DMatrix::zeros(n, cols);
            for i in 0..n {
                let h = fit.h(&row_of(i));
                if top {
                    m[(i, 0)] = h[fit.k_max - 1];
                } else {
                    m[(i, 0)] = h[k - 1];
                    m[(i, 1)] = h[k];
                }
            }
            Ok(m)
        }
        (ControlVariant::MlogitIv { .. }, FirstStageFit::Mnl(fit)) => {
            let mut m = DMatrix::zeros(n, 1);
            for i in 0..n {
                m[(i, 0)] = fit.inclusive_value(&row_of(i), k);
            }
            Ok(m)
        }
        (ControlVariant::SieveProbs { .. }, FirstStageFit::Mnl(fit)) => {
            let mut m = DMatrix::zeros(n, fit.k_max);
            for i in 0..n {
                let p = fit.category_probs(&row_of(i));
                for j in 0..fit.k_max {
                    m[(i, j)] = p[j + 1];
                }
            }
            Ok(m)
        }
        (ControlVariant::ExchL { l }, FirstStageFit::Mnl(fit)) => {
            let mut m = DMatrix::zeros(n, *l);
            for i in 0..n {
                let p = fit.category_probs(&row_of(i));
                let e = elementary_symmetric(&p, k, *l)?;
                for j in 0..*l {
                    m[(i, j)] = e[j];
                }
            }
            Ok(m)
        }
        (v, _) => Err(Error::IncompatibleVariant(format!("{v:?}"))),
    }
}

/// Pre-computed oracle controls enter through the same expansion rules; this
/// tags how they should be treated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ControlEntry {
    /// Intercept + raw columns (linear entry).
    Linear,
    /// Basis expansion per the SieveSpec (intercept absorbed by the basis).
    Spline,
}

impl ControlSpec {
    pub fn entry(&self) -> ControlEntry {
        match self.variant {
            ControlVariant::None | ControlVariant::ParametricOrdered => ControlEntry::Linear,
            ControlVariant::MlogitIv { linear: true } => ControlEntry::Linear,
            _ => ControlEntry::Spline,
        }
    }
}

/// Expand raw control columns into the second-stage basis block.
/// Univariate: one basis. Bivariate: marginal bases plus the tensor.
/// Three or more: marginal bases plus all pairwise tensors (full tensor
/// behind the `full_tensor` flag of sieve-probs).
pub fn expand_controls(spec: &ControlSpec, controls: &DMatrix<f64>) -> Result<(DMatrix<f64>, usize)> {
    let n = controls.nrows();
    let l_ctrl = controls.ncols();
    let mut clamped = 0;
    match spec.entry() {
        ControlEntry::Linear => {
            let mut m = DMatrix::zeros(n, 1 + l_ctrl);
            for i in 0..n {
                m[(i, 0)] = 1.0;
                for j in 0..l_ctrl {
                    m[(i, 1 + j)] = controls[(i, j)];
                }
            }
            Ok((m, 0))
        }
        ControlEntry::Spline => {
            if l_ctrl == 0 {
                return Err(Error::InvalidArgument("spline entry requires control columns".into()));
            }
            let cols: Vec<Vec<f64>> =
                (0..l_ctrl).map(|j| controls.column(j).iter().cloned().collect()).collect();
            let mut blocks: Vec<DMatrix<f64>> = Vec::new();
            let mut tensor_kvs: Vec<KnotVector> = Vec::new();
            for (j, c) in cols.iter().enumerate() {
                let kv = place_knots(c, spec.sieve.interior_for(j, n, l_ctrl.min(2)), spec.sieve.order)?;
                let (b, cl) = eval_block(&kv, c);
                clamped += cl;
                blocks.push(b);
                tensor_kvs.push(place_knots(c, spec.sieve.tensor_interior, spec.sieve.tensor_order)?);
            }
            let full_tensor = matches!(spec.variant, ControlVariant::SieveProbs { full_tensor: true });
            if l_ctrl >= 2 {
                if full_tensor && l_ctrl >= 3 {
                    let tspec = TensorSpec::new(tensor_kvs.clone())?;
                    let refs: Vec<&[f64]> = cols.iter().map(|c| c.as_slice()).collect();
                    blocks.push(eval_tensor_block(&tspec, &refs)?);
                } else {
                    for a in 0..l_ctrl {
                        for b in a + 1..l_ctrl {
                            let tspec =
                                TensorSpec::new(vec![tensor_kvs[a].clone(), tensor_kvs[b].clone()])?;
                            blocks.push(eval_tensor_block(
                                &tspec,
                                &[cols[a].as_slice(), cols[b].as_slice()],
                            )?);
                        }
                    }
                }
            }
            let total: usize = blocks.iter().map(|b| b.ncols()).sum();
            let mut m = DMatrix::zeros(n, total);
            let mut off = 0;
            for b in blocks {
                m.view_mut((0, off), (n, b.ncols())).copy_from(&b);
                off += b.ncols();
            }
            Ok((m, clamped))
        }
    }
}

/// Result of the augmented partially linear OLS.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub beta: DVector<f64>,
    pub delta: DVector<f64>,
    /// Heteroskedasticity-robust covariance of beta (HC0 sandwich).
    pub vcov_robust: DMatrix<f64>,
    /// Homoskedastic covariance of beta with dof correction.
    pub vcov_homoskedastic: DMatrix<f64>,
    pub residuals: DVector<f64>,
    pub n: usize,
    pub kappa: usize,
    pub condition_number: f64,
    /// Indices (into the basis block) of collinear columns dropped.
    pub dropped: Vec<usize>,
    /// Count of clamped basis evaluations during control expansion.
    pub clamped: usize,
}

impl FitResult {
    pub fn robust_se(&self) -> DVector<f64> {
        DVector::from_iterator(self.beta.len(), (0..self.beta.len()).map(|j| self.vcov_robust[(j, j)].sqrt()))
    }
}

/// Fit the outcome regression Y = X beta + basis(controls)' delta + eta on a
/// subsample already restricted to D = k. `x` must not contain an intercept.
pub fn fit_outcome(
    y: &DVector<f64>,
    x: &DMatrix<f64>,
    controls: &DMatrix<f64>,
    spec: &ControlSpec,
) -> Result<FitResult> {
    let n = y.len();
    if x.nrows() != n || controls.nrows() != n {
        return Err(Error::DimensionMismatch { expected: n, got: x.nrows() });
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("non-finite outcome".into()));
    }
    let (bas, clamped) = expand_controls(spec, controls)?;
    fit_partially_linear(y, x, &bas, clamped)
}

/// Core solver shared by fit_outcome and the oracle paths: least squares of y
/// on [x | basis] with rank-revealing column dropping (never from the x block).
pub fn fit_partially_linear(
    y: &DVector<f64>,
    x: &DMatrix<f64>,
    bas: &DMatrix<f64>,
    clamped: usize,
) -> Result<FitResult> {
    let n = y.len();
    let d_x = x.ncols();
    let kappa_full = bas.ncols();
    let total = d_x + kappa_full;
    if n <= total {
        return Err(Error::Validation(format!("n = {n} too small for {total} columns")));
    }
    let mut w = DMatrix::zeros(n, total);
    w.view_mut((0, 0), (n, d_x)).copy_from(x);
    w.view_mut((0, d_x), (n, kappa_full)).copy_from(bas);

    // rank-revealing pass
    let qr = w.clone().col_piv_qr();
    let r = qr.r();
    let perm = qr.p();
    let r00 = r[(0, 0)].abs();
    let tol = PIVOT_TOL * r00.max(1.0);
    let maxrank = total.min(n);
    let mut rank = 0;
    for i in 0..maxrank {
        if r[(i, i)].abs() > tol {
            rank = i + 1;
        } else {
            break;
        }
    }
    if rank == 0 {
        return Err(Error::Singular("second-stage design"));
    }
    let cond = r00 / r[(rank - 1, rank - 1)].abs();
    // recover the pivoted column order (new position -> original column) by
    // permuting an index row the same way the QR permuted the design columns
    let mut order: Vec<usize> = (0..total).collect();
    let mut idx = DMatrix::from_fn(1, total, |_, j| j as f64);
    perm.permute_columns(&mut idx);
    for j in 0..total {
        order[j] = idx[(0, j)] as usize;
    }
    let kept: Vec<usize> = {
        let mut kept: Vec<usize> = order[..rank].to_vec();
        let dropped_set: Vec<usize> = order[rank..].to_vec();
        for &dcol in &dropped_set {
            if dcol < d_x {
                return Err(Error::Unidentified(dcol));
            }
        }
        kept.sort_unstable();
        kept
    };
    let dropped: Vec<usize> = order[rank..].iter().map(|&c| c - d_x).collect();

    let wk = w.select_columns(kept.iter());
    let qr2 = wk.clone().qr();
    let theta = qr2
        .r()
        .solve_upper_triangular(&(qr2.q().transpose() * y))
        .ok_or(Error::Singular("kept-column QR"))?;
    let fitted = &wk * &theta;
    let residuals = y - fitted;

    let mut beta = DVector::zeros(d_x);
    let mut delta = DVector::zeros(kappa_full);
    for (pos, &col) in kept.iter().enumerate() {
        if col < d_x {
            beta[col] = theta[pos];
        } else {
            delta[col - d_x] = theta[pos];
        }
    }

    // FWL residualization of x on the kept basis columns
    let basis_cols: Vec<usize> = kept.iter().filter(|&&c| c >= d_x).cloned().collect();
    let kappa = basis_cols.len();
    let xt = if kappa > 0 {
        let b = w.select_columns(basis_cols.iter());
        let qrb = b.clone().qr();
        let qb = qrb.q();
        x - &qb * (qb.transpose() * x)
    } else {
        x.clone()
    };
    let nf = n as f64;
    let sigma = xt.transpose() * &xt / nf;
    let mut omega = DMatrix::zeros(d_x, d_x);
    for i in 0..n {
        let e2 = residuals[i] * residuals[i];
        for a in 0..d_x {
            let va = xt[(i, a)] * e2;
            for b in a..d_x {
                omega[(a, b)] += va * xt[(i, b)];
            }
        }
    }
    for a in 0..d_x {
        for b in 0..a {
            omega[(a, b)] = omega[(b, a)];
        }
    }
    omega /= nf;
    let sigma_inv = sigma.clone().try_inverse().ok_or(Error::Singular("Sigma"))?;
    let vcov_robust = symmetrize(&(&sigma_inv * &omega * &sigma_inv / nf));
    let dof = (n as i64 - d_x as i64 - kappa as i64).max(1) as f64;
    let s2 = residuals.norm_squared() / dof;
    let vcov_homoskedastic = symmetrize(&(&sigma_inv * (s2 / nf)));

    Ok(FitResult {
        beta,
        delta,
        vcov_robust,
        vcov_homoskedastic,
        residuals,
        n,
        kappa,
        condition_number: cond,
        dropped,
        clamped,
    })
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    0.5 * (m + m.transpose())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn ols_spec() -> ControlSpec {
        ControlSpec::new(ControlVariant::None)
    }

    #[test]
    fn exact_linear_recovery() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 200;
        let x = DMatrix::from_fn(n, 2, |_, _| rng.random::<f64>() - 0.5);
        let noise = DMatrix::from_fn(n, 1, |_, _| rng.random::<f64>());
        let y = DVector::from_fn(n, |i, _| 2.0 * x[(i, 0)] - 1.5 * x[(i, 1)] + 0.7);
        // independent noise column entering linearly
        let spec = ControlSpec::new(ControlVariant::ParametricOrdered);
        let fit = fit_outcome(&y, &x, &noise, &spec).unwrap();
        assert_abs_diff_eq!(fit.beta[0], 2.0, epsilon = 1e-10);
        assert_abs_diff_eq!(fit.beta[1], -1.5, epsilon = 1e-10);
    }

    #[test]
    fn cubic_control_recovered_by_cubic_splines() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 800;
        let x = DMatrix::from_fn(n, 1, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let g = DMatrix::from_fn(n, 1, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let y = DVector::from_fn(n, |i, _| {
            let gi = g[(i, 0)];
            1.2 * x[(i, 0)] + 0.5 + gi - 0.8 * gi * gi + 0.3 * gi * gi * gi
        });
        let spec = ControlSpec::new(ControlVariant::MlogitIv { linear: false });
        let fit = fit_outcome(&y, &x, &g, &spec).unwrap();
        assert_abs_diff_eq!(fit.beta[0], 1.2, epsilon = 1e-8);
    }

    #[test]
    fn duplicated_x_column_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 100;
        let x = DMatrix::from_fn(n, 2, |i, _| {
            let _ = i;
            rng.random::<f64>()
        });
        let mut x2 = DMatrix::zeros(n, 2);
        for i in 0..n {
            x2[(i, 0)] = x[(i, 0)];
            x2[(i, 1)] = x[(i, 0)];
        }
        let y = DVector::from_fn(n, |i, _| x2[(i, 0)]);
        let ctrl = DMatrix::zeros(n, 0);
        assert!(matches!(
            fit_outcome(&y, &x2, &ctrl, &ols_spec()),
            Err(Error::Unidentified(_))
        ));
    }

    #[test]
    fn empty_basis_matches_textbook_hc0() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 300;
        let x = DMatrix::from_fn(n, 2, |_, _| rng.random::<f64>() - 0.5);
        let y = DVector::from_fn(n, |i, _| {
            x[(i, 0)] - 2.0 * x[(i, 1)] + (rng.random::<f64>() - 0.5)
        });
        // plain OLS without intercept: empty control matrix and None variant
        // still appends an intercept; instead call the core solver directly.
        let bas = DMatrix::zeros(n, 0);
        let fit = fit_partially_linear(&y, &x, &bas, 0).unwrap();
        // textbook HC0: (X'X)^-1 X' diag(e^2) X (X'X)^-1
        let xtx_inv = (x.transpose() * &x).try_inverse().unwrap();
        let mut meat = DMatrix::zeros(2, 2);
        for i in 0..n {
            let e2 = fit.residuals[i] * fit.residuals[i];
            for a in 0..2 {
                for b in 0..2 {
                    meat[(a, b)] += x[(i, a)] * x[(i, b)] * e2;
                }
            }
        }
        let hc0 = &xtx_inv * meat * &xtx_inv;
        for a in 0..2 {
            for b in 0..2 {
                assert_abs_diff_eq!(fit.vcov_robust[(a, b)], hc0[(a, b)], epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn zero_residuals_zero_robust_vcov() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 50;
        let x = DMatrix::from_fn(n, 1, |_, _| rng.random::<f64>());
        let y = DVector::from_fn(n, |i, _| 3.0 * x[(i, 0)]);
        let bas = DMatrix::zeros(n, 0);
        let fit = fit_partially_linear(&y, &x, &bas, 0).unwrap();
        assert!(fit.vcov_robust[(0, 0)].abs() < 1e-18);
    }

    #[test]
    fn fwl_equivalence() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = 400;
        let x = DMatrix::from_fn(n, 2, |_, _| rng.random::<f64>() - 0.5);
        let g = DMatrix::from_fn(n, 1, |_, _| rng.random::<f64>());
        let y = DVector::from_fn(n, |i, _| {
            0.4 * x[(i, 0)] + 0.9 * x[(i, 1)] + (g[(i, 0)] - 0.5).powi(2) + 0.1 * (rng.random::<f64>() - 0.5)
        });
        let spec = ControlSpec::new(ControlVariant::MlogitIv { linear: false });
        let (bas, _) = expand_controls(&spec, &g).unwrap();
        let joint = fit_partially_linear(&y, &x, &bas, 0).unwrap();
        // explicit FWL two-step
        let qrb = bas.clone().qr();
        let qb = qrb.q();
        let xt = &x - &qb * (qb.transpose() * &x);
        let yt = &y - &qb * (qb.transpose() * &y);
        let beta_fwl = (xt.transpose() * &xt)
            .try_inverse()
            .unwrap()
            * (xt.transpose() * yt);
        assert_abs_diff_eq!(joint.beta[0], beta_fwl[0], epsilon = 1e-10);
        assert_abs_diff_eq!(joint.beta[1], beta_fwl[1], epsilon = 1e-10);
    }

    #[test]
    fn intercept_shift_absorbed() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 300;
        let x = DMatrix::from_fn(n, 1, |_, _| rng.random::<f64>() - 0.5);
        let g = DMatrix::from_fn(n, 1, |_, _| rng.random::<f64>());
        let y = DVector::from_fn(n, |i, _| 1.5 * x[(i, 0)] + g[(i, 0)].sin() + 0.05 * rng.random::<f64>());
        let y_shift = DVector::from_fn(n, |i, _| y[i] + 10.0);
        let spec = ControlSpec::new(ControlVariant::MlogitIv { linear: false });
        let f1 = fit_outcome(&y, &x, &g, &spec).unwrap();
        let f2 = fit_outcome(&y_shift, &x, &g, &spec).unwrap();
        assert_abs_diff_eq!(f1.beta[0], f2.beta[0], epsilon = 1e-9);
    }

    #[test]
    fn affine_rescale_of_control_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 500;
        let x = DMatrix::from_fn(n, 1, |_, _| rng.random::<f64>() - 0.5);
        let g = DMatrix::from_fn(n, 1, |_, _| rng.random::<f64>());
        let y = DVector::from_fn(n, |i, _| {
            0.8 * x[(i, 0)] + (2.0 * g[(i, 0)] - 1.0).powi(3) + 0.1 * (rng.random::<f64>() - 0.5)
        });
        let g2 = DMatrix::from_fn(n, 1, |i, _| 2.0 * g[(i, 0)] + 1.0);
        let spec = ControlSpec::new(ControlVariant::MlogitIv { linear: false });
        let f1 = fit_outcome(&y, &x, &g, &spec).unwrap();
        let f2 = fit_outcome(&y, &x, &g2, &spec).unwrap();
        assert_abs_diff_eq!(f1.beta[0], f2.beta[0], epsilon = 1e-6);
    }
}
