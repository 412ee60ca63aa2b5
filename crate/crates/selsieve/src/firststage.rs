//! First-stage selection models: parametric/sieve ordered probit, cumulative
//! sieve logits, sieve multinomial logit, and the derived control quantities
//! (truncated-normal corrections, inclusive values, elementary symmetric
//! polynomials of choice probabilities).

use crate::error::{Error, Result};
use crate::optim::{maximize, Objective, OptOptions, OptResult};
use nalgebra::{DMatrix, DVector};
use statrs::function::erf::erfc;

/// Probability floor applied before logs and divisions.
pub const PROB_FLOOR: f64 = 1e-6;
/// Coefficient-norm bound beyond which a logistic fit is declared separated.
pub const SEPARATION_BOUND: f64 = 50.0;
/// Vanishing ridge on the mean log-likelihood: pins coefficients along flat
/// (locally separated) sieve directions without measurably moving identified
/// ones.
pub const RIDGE: f64 = 1e-10;

pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Inverse standard normal CDF (Acklam's rational approximation polished by
/// one Halley step; absolute error far below 1e-12 after polish).
pub fn norm_ppf(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "norm_ppf domain");
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.38357751867269e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    let p_low = 0.02425;
    let mut x = if p < p_low {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - p_low {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    // one Halley refinement
    for _ in 0..2 {
        let e = norm_cdf(x) - p;
        let u = e / norm_pdf(x);
        x -= u / (1.0 + x * u / 2.0);
    }
    x
}

/// Conditional mean of a standard normal truncated to `[c_lo - index, c_hi - index)`.
pub fn truncated_correction(index: f64, c_lo: f64, c_hi: f64) -> Result<f64> {
    if c_lo.partial_cmp(&c_hi) != Some(std::cmp::Ordering::Less) {
        return Err(Error::InvalidArgument("truncation bounds must satisfy c_lo < c_hi".into()));
    }
    let a = c_lo - index;
    let b = c_hi - index;
    let pdf_a = if a.is_finite() { norm_pdf(a) } else { 0.0 };
    let pdf_b = if b.is_finite() { norm_pdf(b) } else { 0.0 };
    let cdf_a = if a == f64::NEG_INFINITY { 0.0 } else { norm_cdf(a) };
    let cdf_b = if b == f64::INFINITY { 1.0 } else { norm_cdf(b) };
    let den = cdf_b - cdf_a;
    if den <= 1e-300 {
        return Err(Error::EmptyTruncationCell);
    }
    Ok((pdf_a - pdf_b) / den)
}

/// Sorted (ascending) copy; monotonicity repair for crossed cumulative logits.
pub fn rearrange(h: &[f64]) -> Vec<f64> {
    let mut out = h.to_vec();
    out.sort_by(|a, b| a.partial_cmp(b).unwrap());
    out
}

/// First `l` elementary symmetric polynomials of the non-chosen probabilities
/// `{p_j : j != k}`, by the stable product recurrence on (1 + p_j x).
pub fn elementary_symmetric(p: &[f64], k: usize, l: usize) -> Result<Vec<f64>> {
    let kk = p.len() - 1; // number of non-chosen alternatives
    if l < 1 || l > kk {
        return Err(Error::InvalidArgument(format!("L = {l} outside 1..={kk}")));
    }
    if k >= p.len() {
        return Err(Error::InvalidArgument(format!("category {k} out of range")));
    }
    let mut e = vec![0.0_f64; l + 1];
    e[0] = 1.0;
    for (j, &pj) in p.iter().enumerate() {
        if j == k {
            continue;
        }
        for m in (1..=l).rev() {
            e[m] += pj * e[m - 1];
        }
    }
    // first order reduces to the simplex identity; use it verbatim
    e[1] = 1.0 - p[k];
    Ok(e[1..].to_vec())
}

/// Detect and drop exactly collinear design columns (rank-revealing QR with
/// the second-stage pivot tolerance). With `against_intercept`, columns are
/// demeaned first so anything affinely redundant with a constant also drops;
/// used by the ordered fit, whose intercept lives in the thresholds.
/// Returns the reduced design and the kept original column indices.
pub fn drop_collinear(design: &DMatrix<f64>, against_intercept: bool) -> (DMatrix<f64>, Vec<usize>) {
    let n = design.nrows();
    let p = design.ncols();
    if p == 0 {
        return (design.clone(), Vec::new());
    }
    let mut m = design.clone();
    if against_intercept {
        for j in 0..p {
            let mean = m.column(j).sum() / n as f64;
            for i in 0..n {
                m[(i, j)] -= mean;
            }
        }
    }
    let qr = m.col_piv_qr();
    let r = qr.r();
    let mut idx = DMatrix::from_fn(1, p, |_, j| j as f64);
    qr.p().permute_columns(&mut idx);
    let r00 = r[(0, 0)].abs();
    let tol = 1e-10 * r00.max(1.0);
    let maxrank = p.min(n);
    let mut rank = 0;
    for i in 0..maxrank {
        if r[(i, i)].abs() > tol {
            rank = i + 1;
        } else {
            break;
        }
    }
    let mut kept: Vec<usize> = (0..rank).map(|j| idx[(0, j)] as usize).collect();
    kept.sort_unstable();
    (design.select_columns(kept.iter()), kept)
}

/// Scatter reduced coefficients back to the full design length (zeros at
/// dropped columns) so prediction accessors take full rows.
fn scatter(full_len: usize, kept: &[usize], reduced: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(full_len);
    for (pos, &j) in kept.iter().enumerate() {
        out[j] = reduced[pos];
    }
    out
}

fn check_categories(d: &[usize], k_max: usize) -> Result<()> {
    let mut seen = vec![false; k_max + 1];
    for &di in d {
        if di > k_max {
            return Err(Error::Validation(format!("category {di} exceeds K = {k_max}")));
        }
        seen[di] = true;
    }
    for (c, s) in seen.iter().enumerate() {
        if !s {
            return Err(Error::MissingCategory(c));
        }
    }
    Ok(())
}

fn floor_simplex(p: &mut [f64]) {
    if p.iter().any(|&v| v < PROB_FLOOR) {
        let mut total = 0.0;
        for v in p.iter_mut() {
            *v = v.max(PROB_FLOOR);
            total += *v;
        }
        for v in p.iter_mut() {
            *v /= total;
        }
    }
}

// ---------------------------------------------------------------------------
// Ordered probit
// ---------------------------------------------------------------------------

/// Ordered probit fit: index coefficients plus strictly increasing thresholds.
#[derive(Debug, Clone)]
pub struct OrderedFit {
    pub alpha: DVector<f64>,
    pub thresholds: Vec<f64>,
    pub k_max: usize,
    pub opt: OptResult,
}

/// Ordered-probit mean log-likelihood in (alpha, c_1, log-gaps).
pub struct OrderedObjective<'a> {
    d: &'a [usize],
    q: &'a DMatrix<f64>,
    k_max: usize,
}

impl<'a> OrderedObjective<'a> {
    pub fn new(d: &'a [usize], q: &'a DMatrix<f64>, k_max: usize) -> Self {
        Self { d, q, k_max }
    }
}

impl OrderedObjective<'_> {
    fn unpack(&self, theta: &DVector<f64>) -> (DVector<f64>, Vec<f64>) {
        let p = self.q.ncols();
        let alpha = DVector::from_iterator(p, (0..p).map(|j| theta[j]));
        let mut c = Vec::with_capacity(self.k_max);
        let mut cur = theta[p];
        c.push(cur);
        for j in 1..self.k_max {
            cur += theta[p + j].exp();
            c.push(cur);
        }
        (alpha, c)
    }
}

impl Objective for OrderedObjective<'_> {
    fn dim(&self) -> usize {
        self.q.ncols() + self.k_max
    }

    fn value_grad(&self, theta: &DVector<f64>) -> (f64, DVector<f64>) {
        let p = self.q.ncols();
        let (alpha, c) = self.unpack(theta);
        let idx = self.q * &alpha;
        let mut ll = 0.0;
        let mut g_alpha = DVector::zeros(p);
        let mut g_c = vec![0.0_f64; self.k_max];
        for (i, &di) in self.d.iter().enumerate() {
            let lo = if di == 0 { f64::NEG_INFINITY } else { c[di - 1] - idx[i] };
            let hi = if di == self.k_max { f64::INFINITY } else { c[di] - idx[i] };
            let cdf_lo = if lo == f64::NEG_INFINITY { 0.0 } else { norm_cdf(lo) };
            let cdf_hi = if hi == f64::INFINITY { 1.0 } else { norm_cdf(hi) };
            let pr = (cdf_hi - cdf_lo).max(1e-300);
            ll += pr.ln();
            let pdf_lo = if lo.is_finite() { norm_pdf(lo) } else { 0.0 };
            let pdf_hi = if hi.is_finite() { norm_pdf(hi) } else { 0.0 };
            let w = (pdf_lo - pdf_hi) / pr;
            for j in 0..p {
                g_alpha[j] += self.q[(i, j)] * w;
            }
            if di > 0 {
                g_c[di - 1] -= pdf_lo / pr;
            }
            if di < self.k_max {
                g_c[di] += pdf_hi / pr;
            }
        }
        // chain rule: c_1 free, gaps in logs
        let mut g = DVector::zeros(self.dim());
        for j in 0..p {
            g[j] = g_alpha[j];
        }
        g[p] = g_c.iter().sum();
        for j in 1..self.k_max {
            let gap = theta[p + j].exp();
            g[p + j] = g_c[j..].iter().sum::<f64>() * gap;
        }
        // mean log-likelihood keeps gradient norms O(1) in n
        let inv_n = 1.0 / self.d.len() as f64;
        (ll * inv_n, g * inv_n)
    }
}

/// MLE of the ordered probit on a design without intercept (intercept is
/// absorbed by the thresholds).
pub fn fit_ordered(d: &[usize], design: &DMatrix<f64>, k_max: usize) -> Result<OrderedFit> {
    if k_max < 1 {
        return Err(Error::InvalidArgument("K must be >= 1".into()));
    }
    if d.len() != design.nrows() {
        return Err(Error::DimensionMismatch { expected: design.nrows(), got: d.len() });
    }
    check_categories(d, k_max)?;
    let full_p = design.ncols();
    let (design, kept) = drop_collinear(design, true);
    let design = &design;
    let p = design.ncols();
    let n = d.len() as f64;
    // thresholds initialized from empirical cumulative shares
    let mut counts = vec![0usize; k_max + 1];
    for &di in d {
        counts[di] += 1;
    }
    let mut cum = 0.0;
    let mut c0 = Vec::with_capacity(k_max);
    for &cnt in counts.iter().take(k_max) {
        cum += cnt as f64 / n;
        c0.push(norm_ppf(cum.clamp(1e-10, 1.0 - 1e-10)));
    }
    let mut init = DVector::zeros(p + k_max);
    init[p] = c0[0];
    for j in 1..k_max {
        init[p + j] = (c0[j] - c0[j - 1]).max(1e-6).ln();
    }
    let obj = OrderedObjective { d, q: design, k_max };
    let res = maximize(&obj, init, &OptOptions::default())?;
    if !res.converged {
        return Err(Error::NoConvergence { iters: res.iterations, gnorm: res.grad_norm });
    }
    let (alpha, thresholds) = obj.unpack(&res.argmax);
    Ok(OrderedFit { alpha: scatter(full_p, &kept, &alpha), thresholds, k_max, opt: res })
}

impl OrderedFit {
    pub fn index(&self, row: &[f64]) -> f64 {
        row.iter().zip(self.alpha.iter()).map(|(a, b)| a * b).sum()
    }

    /// Category probabilities P(D = k | x), k = 0..=K, as Phi differences.
    pub fn category_probs(&self, row: &[f64]) -> Vec<f64> {
        let idx = self.index(row);
        let mut p = Vec::with_capacity(self.k_max + 1);
        let mut prev = 0.0;
        for k in 0..self.k_max {
            let cdf = norm_cdf(self.thresholds[k] - idx);
            p.push(cdf - prev);
            prev = cdf;
        }
        p.push(1.0 - prev);
        floor_simplex(&mut p);
        p
    }

    /// Truncated-normal control for category k at the estimated index and
    /// thresholds (c_0 = -inf, c_{K+1} = +inf).
    pub fn control(&self, row: &[f64], k: usize) -> Result<f64> {
        let lo = if k == 0 { f64::NEG_INFINITY } else { self.thresholds[k - 1] };
        let hi = if k == self.k_max { f64::INFINITY } else { self.thresholds[k] };
        truncated_correction(self.index(row), lo, hi)
    }
}

// ---------------------------------------------------------------------------
// Cumulative sieve logits
// ---------------------------------------------------------------------------

/// K cumulative logistic fits for h_k(x) = P(D <= k-1 | x).
#[derive(Debug, Clone)]
pub struct ThresholdFit {
    pub alphas: Vec<DVector<f64>>,
    pub k_max: usize,
}

/// Ridge-stabilized logistic mean log-likelihood.
pub struct LogisticObjective<'a> {
    y: &'a [f64],
    q: &'a DMatrix<f64>,
}

impl<'a> LogisticObjective<'a> {
    pub fn new(y: &'a [f64], q: &'a DMatrix<f64>) -> Self {
        Self { y, q }
    }
}

impl Objective for LogisticObjective<'_> {
    fn dim(&self) -> usize {
        self.q.ncols()
    }

    fn value_grad(&self, theta: &DVector<f64>) -> (f64, DVector<f64>) {
        let eta = self.q * theta;
        let mut ll = 0.0;
        let mut resid = DVector::zeros(self.y.len());
        for i in 0..self.y.len() {
            let e = eta[i];
            // log(1 + exp(e)) computed stably
            let log1pe = if e > 35.0 { e } else { (1.0 + e.exp()).ln() };
            ll += self.y[i] * e - log1pe;
            let p = 1.0 / (1.0 + (-e).exp());
            resid[i] = self.y[i] - p;
        }
        let inv_n = 1.0 / self.y.len() as f64;
        let v = ll * inv_n - 0.5 * RIDGE * theta.norm_squared();
        let g = self.q.transpose() * resid * inv_n - theta * RIDGE;
        (v, g)
    }

    fn hessian(&self, theta: &DVector<f64>) -> Option<DMatrix<f64>> {
        let eta = self.q * theta;
        let p = self.q.ncols();
        let mut h = DMatrix::zeros(p, p);
        for i in 0..self.y.len() {
            let pi = 1.0 / (1.0 + (-eta[i]).exp());
            let w = pi * (1.0 - pi);
            let row = self.q.row(i);
            for a in 0..p {
                let wa = w * row[a];
                for b in a..p {
                    h[(a, b)] -= wa * row[b];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                h[(a, b)] = h[(b, a)];
            }
        }
        h /= self.y.len() as f64;
        for a in 0..p {
            h[(a, a)] -= RIDGE;
        }
        Some(h)
    }
}

fn fit_logistic(y: &[f64], design: &DMatrix<f64>) -> Result<DVector<f64>> {
    let share = y.iter().sum::<f64>() / y.len() as f64;
    let share = share.clamp(1e-10, 1.0 - 1e-10);
    let mut init = DVector::zeros(design.ncols());
    // seed every column of the (basis) design with the share logit; for an
    // intercept column this is exact, for a partition-of-unity block the
    // fitted curve starts flat at the empirical share
    let logit = (share / (1.0 - share)).ln();
    for j in 0..design.ncols() {
        init[j] = 0.0;
        let col = design.column(j);
        if col.iter().all(|&v| v == col[0]) && col[0] != 0.0 {
            init[j] = logit / col[0];
        }
    }
    let obj = LogisticObjective { y, q: design };
    let res = maximize(&obj, init, &OptOptions::default())?;
    if !res.converged {
        // a diverging iterate (still-large gradient) signals separation
        if res.argmax.amax() > SEPARATION_BOUND {
            return Err(Error::Separation(SEPARATION_BOUND));
        }
        return Err(Error::NoConvergence { iters: res.iterations, gnorm: res.grad_norm });
    }
    Ok(res.argmax)
}

/// K independent sieve logistic regressions on the indicators 1[D <= k-1].
/// The design must include an intercept (or a partition-of-unity block).
pub fn fit_thresholds(d: &[usize], design: &DMatrix<f64>, k_max: usize) -> Result<ThresholdFit> {
    if d.len() != design.nrows() {
        return Err(Error::DimensionMismatch { expected: design.nrows(), got: d.len() });
    }
    check_categories(d, k_max)?;
    let full_p = design.ncols();
    let (red, kept) = drop_collinear(design, false);
    let mut alphas = Vec::with_capacity(k_max);
    for k in 1..=k_max {
        let y: Vec<f64> = d.iter().map(|&di| if di < k { 1.0 } else { 0.0 }).collect();
        alphas.push(scatter(full_p, &kept, &fit_logistic(&y, &red)?));
    }
    Ok(ThresholdFit { alphas, k_max })
}

impl ThresholdFit {
    /// Raw cumulative probabilities (h_1(x), ..., h_K(x)); may cross.
    pub fn h_raw(&self, row: &[f64]) -> Vec<f64> {
        self.alphas
            .iter()
            .map(|a| {
                let eta: f64 = row.iter().zip(a.iter()).map(|(x, b)| x * b).sum();
                1.0 / (1.0 + (-eta).exp())
            })
            .collect()
    }

    /// Rearranged (monotone) cumulative probabilities.
    pub fn h(&self, row: &[f64]) -> Vec<f64> {
        rearrange(&self.h_raw(row))
    }

    /// Category probabilities as first differences of the rearranged h with
    /// h_0 = 0 and h_{K+1} = 1, floored at PROB_FLOOR and renormalized.
    pub fn category_probs(&self, row: &[f64]) -> Vec<f64> {
        let h = self.h(row);
        let mut p = Vec::with_capacity(self.k_max + 1);
        let mut prev = 0.0;
        for &hk in &h {
            p.push(hk - prev);
            prev = hk;
        }
        p.push(1.0 - prev);
        floor_simplex(&mut p);
        p
    }
}

// ---------------------------------------------------------------------------
// Multinomial logit
// ---------------------------------------------------------------------------

/// Multinomial logit fit with baseline normalization alpha_0 = 0.
#[derive(Debug, Clone)]
pub struct MnlFit {
    pub alphas: Vec<DVector<f64>>,
    pub k_max: usize,
}

/// Ridge-stabilized multinomial-logit mean log-likelihood.
pub struct MnlObjective<'a> {
    d: &'a [usize],
    q: &'a DMatrix<f64>,
    k_max: usize,
}

impl<'a> MnlObjective<'a> {
    pub fn new(d: &'a [usize], q: &'a DMatrix<f64>, k_max: usize) -> Self {
        Self { d, q, k_max }
    }
}

impl MnlObjective<'_> {
    fn probs(&self, theta: &DVector<f64>) -> DMatrix<f64> {
        let n = self.q.nrows();
        let p = self.q.ncols();
        let kk = self.k_max;
        let mut u = DMatrix::zeros(n, kk + 1);
        for k in 0..kk {
            let a = theta.rows(k * p, p);
            for i in 0..n {
                let mut s = 0.0;
                for j in 0..p {
                    s += self.q[(i, j)] * a[j];
                }
                u[(i, k + 1)] = s;
            }
        }
        for i in 0..n {
            let m = (0..=kk).fold(f64::NEG_INFINITY, |acc, k| acc.max(u[(i, k)]));
            let mut z = 0.0;
            for k in 0..=kk {
                let e = (u[(i, k)] - m).exp();
                u[(i, k)] = e;
                z += e;
            }
            for k in 0..=kk {
                u[(i, k)] /= z;
            }
        }
        u
    }
}

impl Objective for MnlObjective<'_> {
    fn dim(&self) -> usize {
        self.k_max * self.q.ncols()
    }

    fn value_grad(&self, theta: &DVector<f64>) -> (f64, DVector<f64>) {
        let n = self.q.nrows();
        let p = self.q.ncols();
        let probs = self.probs(theta);
        let mut ll = 0.0;
        let mut g = DVector::zeros(self.dim());
        for i in 0..n {
            ll += probs[(i, self.d[i])].max(1e-300).ln();
            for k in 0..self.k_max {
                let w = (if self.d[i] == k + 1 { 1.0 } else { 0.0 }) - probs[(i, k + 1)];
                for j in 0..p {
                    g[k * p + j] += self.q[(i, j)] * w;
                }
            }
        }
        let inv_n = 1.0 / n as f64;
        let v = ll * inv_n - 0.5 * RIDGE * theta.norm_squared();
        let g = g * inv_n - theta * RIDGE;
        (v, g)
    }

    fn hessian(&self, theta: &DVector<f64>) -> Option<DMatrix<f64>> {
        let n = self.q.nrows();
        let p = self.q.ncols();
        let kk = self.k_max;
        let probs = self.probs(theta);
        let mut h = DMatrix::zeros(kk * p, kk * p);
        for i in 0..n {
            let row = self.q.row(i);
            for k in 0..kk {
                let pk = probs[(i, k + 1)];
                for l in k..kk {
                    let pl = probs[(i, l + 1)];
                    let w = if k == l { -pk * (1.0 - pk) } else { pk * pl };
                    for a in 0..p {
                        let wa = w * row[a];
                        for b in 0..p {
                            h[(k * p + a, l * p + b)] += wa * row[b];
                        }
                    }
                }
            }
        }
        // mirror the block upper triangle
        for k in 0..kk {
            for l in 0..k {
                for a in 0..p {
                    for b in 0..p {
                        h[(k * p + a, l * p + b)] = h[(l * p + b, k * p + a)];
                    }
                }
            }
        }
        h /= n as f64;
        for a in 0..kk * p {
            h[(a, a)] -= RIDGE;
        }
        Some(h)
    }
}

/// MNL MLE; globally concave, so any converged solution is the global maximum.
pub fn fit_mnl(d: &[usize], design: &DMatrix<f64>, k_max: usize) -> Result<MnlFit> {
    if d.len() != design.nrows() {
        return Err(Error::DimensionMismatch { expected: design.nrows(), got: d.len() });
    }
    check_categories(d, k_max)?;
    let full_p = design.ncols();
    let (design, kept) = drop_collinear(design, false);
    let design = &design;
    let p = design.ncols();
    let n = d.len() as f64;
    let mut counts = vec![0usize; k_max + 1];
    for &di in d {
        counts[di] += 1;
    }
    let mut init = DVector::zeros(k_max * p);
    // intercept-like columns seeded at the share log-odds against baseline
    for k in 0..k_max {
        let target = ((counts[k + 1] as f64 / n) / (counts[0] as f64 / n)).ln();
        for j in 0..p {
            let col = design.column(j);
            if col.iter().all(|&v| v == col[0]) && col[0] != 0.0 {
                init[k * p + j] = target / col[0];
                break;
            }
        }
    }
    let obj = MnlObjective { d, q: design, k_max };
    let res = maximize(&obj, init, &OptOptions::default())?;
    if !res.converged {
        if res.argmax.amax() > SEPARATION_BOUND {
            return Err(Error::Separation(SEPARATION_BOUND));
        }
        return Err(Error::NoConvergence { iters: res.iterations, gnorm: res.grad_norm });
    }
    let alphas = (0..k_max)
        .map(|k| scatter(full_p, &kept, &res.argmax.rows(k * p, p).clone_owned()))
        .collect();
    Ok(MnlFit { alphas, k_max })
}

impl MnlFit {
    /// Normalized utilities (u_0 = 0, u_k = Q'alpha_k).
    pub fn utilities(&self, row: &[f64]) -> Vec<f64> {
        let mut u = Vec::with_capacity(self.k_max + 1);
        u.push(0.0);
        for a in &self.alphas {
            u.push(row.iter().zip(a.iter()).map(|(x, b)| x * b).sum());
        }
        u
    }

    /// Softmax choice probabilities, floored at PROB_FLOOR.
    pub fn category_probs(&self, row: &[f64]) -> Vec<f64> {
        let u = self.utilities(row);
        let m = u.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut p: Vec<f64> = u.iter().map(|&ui| (ui - m).exp()).collect();
        let z: f64 = p.iter().sum();
        for v in &mut p {
            *v /= z;
        }
        floor_simplex(&mut p);
        p
    }

    /// Inclusive value: log-sum-exp of all utilities minus utility k.
    pub fn inclusive_value(&self, row: &[f64], k: usize) -> f64 {
        let u = self.utilities(row);
        let m = u.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + u.iter().map(|&ui| (ui - m).exp()).sum::<f64>().ln();
        lse - u[k]
    }
}
