//! Monte Carlo engine: the paper's seven simulation designs, estimator
//! batteries across replications, metric tables, and bootstrap SE validation.

use crate::basis::{eval_block, eval_tensor_block, place_knots, TensorSpec};
use crate::data::VarKind;
use crate::error::{Error, Result};
use crate::firststage::{
    fit_mnl, fit_ordered, fit_thresholds, norm_cdf, MnlFit, OrderedFit, ThresholdFit,
};
use crate::secondstage::{
    build_controls, expand_controls, fit_partially_linear, ControlSpec, ControlVariant,
    FirstStageFit, FitResult,
};
use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Gumbel, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Normal quantile used for nominal 95% intervals.
pub const Z975: f64 = 1.959964;

// ---------------------------------------------------------------------------
// Design constants
// ---------------------------------------------------------------------------

/// Ordered DGP1/2 selection thresholds.
pub const ORDERED_THRESHOLDS_12: [f64; 2] = [-1.5, 0.5];
/// Ordered DGP3 selection thresholds.
pub const ORDERED_THRESHOLDS_3: [f64; 3] = [-1.0, 0.5, 1.5];
/// Ordered DGP1/2 selection-outcome error correlation.
pub const ORDERED_RHO_12: f64 = 0.75;
/// Ordered DGP1 outcome-error standard deviation.
pub const ORDERED_SIGMA_1: f64 = 2.0;
/// Ordered DGP2 outcome-error standard deviation.
pub const ORDERED_SIGMA_2: f64 = 1.0;
/// Ordered DGP3 per-category correlations with the selection error.
pub const ORDERED_RHO_3: [f64; 3] = [0.3, 0.5, 0.7];

/// Ordered DGP1/2 outcome coefficients (intercept, X, Z) per category.
pub const ORDERED_BETA_12: [[f64; 3]; 2] = [[0.5, 0.5, 0.25], [0.6, 0.7, 0.5]];
/// Ordered DGP3 outcome coefficients (intercept, X, Z, W) per category.
pub const ORDERED_BETA_3: [[f64; 4]; 3] =
    [[0.5, 0.5, 0.25, 0.3], [0.6, 0.7, 0.5, 0.2], [0.7, 0.6, 0.4, 0.5]];

/// Multinomial DGP1 utility polynomials (degree 3 in X, degree 2 in Z, with
/// interactions): coefficients on (1, X, X^2, X^3, Z, Z^2, XZ).
pub const MNL_F1_DGP1: [f64; 7] = [0.3, 0.5, -0.4, 0.2, 0.6, -0.3, 0.4];
pub const MNL_F2_DGP1: [f64; 7] = [-0.2, 0.4, 0.3, -0.25, -0.5, 0.2, -0.3];

/// Multinomial DGP2-4 utility polynomials (quadratic with pairwise
/// interactions): coefficients on (1, X, X^2, Z, Z^2, W, W^2, XZ, XW, ZW).
pub const MNL_F1_K3: [f64; 10] = [0.2, 0.5, -0.4, 0.3, 0.2, 0.6, -0.3, 0.4, -0.2, 0.3];
pub const MNL_F2_K3: [f64; 10] = [-0.1, 0.4, 0.3, -0.5, -0.2, 0.3, 0.2, -0.3, 0.4, -0.2];
pub const MNL_F3_K3: [f64; 10] = [0.1, -0.3, 0.2, 0.6, -0.3, -0.4, 0.3, 0.2, 0.3, -0.4];

/// Multinomial DGP1 outcome coefficients (intercept, X, Z) per category.
pub const MNL_BETA_DGP1: [[f64; 3]; 2] = [[0.5, 0.5, 0.7], [0.6, 0.8, 0.5]];
/// Multinomial DGP2-4 outcome coefficients (intercept, X, Z, W) per category.
pub const MNL_BETA_K3: [[f64; 4]; 3] =
    [[0.4, 0.5, 0.7, 0.3], [0.6, 0.8, 0.5, 0.4], [0.5, 0.3, 0.9, 0.6]];

/// DGP3 equicorrelation of the preference shocks.
pub const MNL_DGP3_RHO: f64 = 0.5;
/// DGP4 single-factor loadings.
pub const MNL_DGP4_LOADINGS: [f64; 4] = [0.0, 0.3, 0.8, -0.5];
/// Self-reinforcing specialization intensity (DGP3, DGP4).
pub const GAMMA_SR_DGP3: f64 = 1.0;
pub const GAMMA_SR_DGP4: f64 = 2.0;
pub const SIGMA_ETA: f64 = 0.2;

// ---------------------------------------------------------------------------
// Types
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DgpTag {
    Ordered(u8),
    Multinomial(u8),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Estimator {
    /// Ignores selection.
    Ols,
    /// Misspecified linear-index parametric ordered probit control (ordered).
    Linear,
    /// Infeasible benchmark using ground truth.
    Oracle,
    /// Cumulative-logit probabilities (ordered) or MNL probability vector
    /// (multinomial) through the sieve second stage.
    Sieve,
    /// Inclusive-value single-index control (multinomial).
    Mlogit,
    /// Exchangeability-based ESP controls, L = 2 (multinomial, K >= 3).
    Exch,
}

impl Estimator {
    pub fn name(&self) -> &'static str {
        match self {
            Estimator::Ols => "OLS",
            Estimator::Linear => "Linear",
            Estimator::Oracle => "Oracle",
            Estimator::Sieve => "Sieve",
            Estimator::Mlogit => "MLogit",
            Estimator::Exch => "Exch-L2",
        }
    }
}

/// Ground truth carried by a simulated dataset.
#[derive(Debug, Clone)]
pub enum Truth {
    Ordered { index: Vec<f64>, thresholds: Vec<f64>, sigma_rho: Vec<f64> },
    Multinomial { probs: DMatrix<f64> },
}

#[derive(Debug, Clone)]
pub struct SimDataset {
    pub x: DMatrix<f64>,
    pub kinds: Vec<VarKind>,
    pub d: Vec<usize>,
    pub y: Vec<Option<f64>>,
    pub k_max: usize,
    /// Per category 1..=K: (intercept, slopes...) of the outcome equation.
    pub true_beta: Vec<Vec<f64>>,
    pub truth: Truth,
    pub dgp: DgpTag,
    pub seed: u64,
    pub delta: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig {
    pub dgp: DgpTag,
    pub n: usize,
    pub replications: usize,
    pub seed: u64,
    pub estimators: Vec<Estimator>,
    /// Nonlinearity scale; used only by ordered DGP3.
    pub delta: f64,
    /// Bootstrap replications per MC replication (bootstrap studies only).
    pub bootstrap: Option<usize>,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replications < 1 {
            return Err(Error::InvalidArgument("R must be >= 1".into()));
        }
        if self.n < 100 {
            return Err(Error::InvalidArgument("n must be >= 100".into()));
        }
        if self.estimators.is_empty() {
            return Err(Error::InvalidArgument("estimator list is empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricCell {
    pub estimator: String,
    pub category: usize,
    pub coefficient: usize,
    pub rmse: f64,
    pub mean_bias: f64,
    pub abs_mean_bias: f64,
    pub coverage: f64,
    /// Monte Carlo standard deviation of the estimates.
    pub mc_sd: f64,
    /// Mean robust SE across replications.
    pub mean_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub cells: Vec<MetricCell>,
    pub failures: BTreeMap<String, usize>,
    pub replications: usize,
}

impl MetricsTable {
    /// Per-category averages across coefficients (ordered-table convention).
    pub fn avg_by_category(&self, est: &str, category: usize) -> Option<(f64, f64, f64)> {
        let cells: Vec<&MetricCell> = self
            .cells
            .iter()
            .filter(|c| c.estimator == est && c.category == category)
            .collect();
        if cells.is_empty() {
            return None;
        }
        let m = cells.len() as f64;
        Some((
            cells.iter().map(|c| c.rmse).sum::<f64>() / m,
            cells.iter().map(|c| c.abs_mean_bias).sum::<f64>() / m,
            cells.iter().map(|c| c.coverage).sum::<f64>() / m,
        ))
    }

    /// Averages across all categories and coefficients (Table-2 convention).
    pub fn avg_overall(&self, est: &str) -> Option<(f64, f64, f64)> {
        let cells: Vec<&MetricCell> = self.cells.iter().filter(|c| c.estimator == est).collect();
        if cells.is_empty() {
            return None;
        }
        let m = cells.len() as f64;
        Some((
            cells.iter().map(|c| c.rmse).sum::<f64>() / m,
            cells.iter().map(|c| c.abs_mean_bias).sum::<f64>() / m,
            cells.iter().map(|c| c.coverage).sum::<f64>() / m,
        ))
    }
}

// ---------------------------------------------------------------------------
// Generators
// ---------------------------------------------------------------------------

fn rep_rng(seed: u64, rep: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(rep);
    rng
}

fn draw_normal(rng: &mut ChaCha12Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn generate(dgp: DgpTag, n: usize, seed: u64, delta: f64) -> Result<SimDataset> {
    match dgp {
        DgpTag::Ordered(id) => generate_ordered(id, n, seed, delta),
        DgpTag::Multinomial(id) => generate_multinomial(id, n, seed),
    }
}

/// Ordered designs. DGP1/2: K = 2 with thresholds (-1.5, 0.5); DGP3: K = 3
/// with three continuous covariates and nonlinearity scale `delta`.
pub fn generate_ordered(dgp: u8, n: usize, seed: u64, delta: f64) -> Result<SimDataset> {
    let mut rng = rep_rng(seed, 0);
    match dgp {
        1 | 2 => {
            let k_max = 2;
            let sigma = if dgp == 1 { ORDERED_SIGMA_1 } else { ORDERED_SIGMA_2 };
            let srho = sigma * ORDERED_RHO_12;
            let sd_res = (sigma * sigma - srho * srho).sqrt();
            let mut x = DMatrix::zeros(n, 2);
            let mut d = vec![0usize; n];
            let mut y = vec![None; n];
            let mut index = vec![0.0; n];
            for i in 0..n {
                let xi = draw_normal(&mut rng);
                let zi = if dgp == 1 {
                    draw_normal(&mut rng)
                } else {
                    if draw_normal(&mut rng) > 0.0 {
                        1.0
                    } else {
                        0.0
                    }
                };
                let u = draw_normal(&mut rng);
                let h = if dgp == 1 {
                    0.5 * xi - 0.5 * xi * xi + 0.2 * xi.powi(3) + 0.5 * xi * zi + zi
                        - 0.5 * zi * zi
                } else {
                    -0.2 * xi - 0.5 * xi * xi + 0.3 * xi.powi(3) + 0.1 * xi * zi + 0.5 * zi
                        - 0.3 * xi * xi * zi
                        + 0.2 * xi.powi(3) * zi
                };
                let lat = h + u;
                let di = if lat < ORDERED_THRESHOLDS_12[0] {
                    0
                } else if lat < ORDERED_THRESHOLDS_12[1] {
                    1
                } else {
                    2
                };
                x[(i, 0)] = xi;
                x[(i, 1)] = zi;
                index[i] = h;
                d[i] = di;
                if di >= 1 {
                    let v = srho * u + sd_res * draw_normal(&mut rng);
                    let b = &ORDERED_BETA_12[di - 1];
                    y[i] = Some(b[0] + b[1] * xi + b[2] * zi + v);
                } else {
                    // keep the stream aligned across categories
                    let _ = draw_normal(&mut rng);
                }
            }
            let kinds = if dgp == 1 {
                vec![VarKind::Continuous, VarKind::Continuous]
            } else {
                vec![VarKind::Continuous, VarKind::Categorical]
            };
            Ok(SimDataset {
                x,
                kinds,
                d,
                y,
                k_max,
                true_beta: ORDERED_BETA_12.iter().map(|b| b.to_vec()).collect(),
                truth: Truth::Ordered {
                    index,
                    thresholds: ORDERED_THRESHOLDS_12.to_vec(),
                    sigma_rho: vec![srho; 2],
                },
                dgp: DgpTag::Ordered(dgp),
                seed,
                delta,
            })
        }
        3 => {
            let k_max = 3;
            let mut x = DMatrix::zeros(n, 3);
            let mut d = vec![0usize; n];
            let mut y = vec![None; n];
            let mut index = vec![0.0; n];
            for i in 0..n {
                let (xi, zi, wi) =
                    (draw_normal(&mut rng), draw_normal(&mut rng), draw_normal(&mut rng));
                let u = draw_normal(&mut rng);
                let h = 0.5 * xi + 0.3 * zi + 0.8 * wi
                    + delta * (-0.5 * xi * xi + 0.2 * zi * zi - 0.4 * xi * zi);
                let lat = h + u;
                let di = ORDERED_THRESHOLDS_3.iter().filter(|&&c| lat >= c).count();
                x[(i, 0)] = xi;
                x[(i, 1)] = zi;
                x[(i, 2)] = wi;
                index[i] = h;
                d[i] = di;
                let e = draw_normal(&mut rng);
                if di >= 1 {
                    let rho = ORDERED_RHO_3[di - 1];
                    let v = rho * u + (1.0 - rho * rho).sqrt() * e;
                    let b = &ORDERED_BETA_3[di - 1];
                    y[i] = Some(b[0] + b[1] * xi + b[2] * zi + b[3] * wi + v);
                }
            }
            Ok(SimDataset {
                x,
                kinds: vec![VarKind::Continuous; 3],
                d,
                y,
                k_max,
                true_beta: ORDERED_BETA_3.iter().map(|b| b.to_vec()).collect(),
                truth: Truth::Ordered {
                    index,
                    thresholds: ORDERED_THRESHOLDS_3.to_vec(),
                    sigma_rho: ORDERED_RHO_3.to_vec(),
                },
                dgp: DgpTag::Ordered(3),
                seed,
                delta,
            })
        }
        _ => Err(Error::InvalidArgument(format!("unknown ordered DGP {dgp}"))),
    }
}

fn utilities_dgp1(xi: f64, zi: f64) -> [f64; 3] {
    let feats = [1.0, xi, xi * xi, xi.powi(3), zi, zi * zi, xi * zi];
    let dot = |c: &[f64; 7]| c.iter().zip(&feats).map(|(a, b)| a * b).sum::<f64>();
    [0.0, dot(&MNL_F1_DGP1), dot(&MNL_F2_DGP1)]
}

fn utilities_k3(xi: f64, zi: f64, wi: f64) -> [f64; 4] {
    let feats =
        [1.0, xi, xi * xi, zi, zi * zi, wi, wi * wi, xi * zi, xi * wi, zi * wi];
    let dot = |c: &[f64; 10]| c.iter().zip(&feats).map(|(a, b)| a * b).sum::<f64>();
    [0.0, dot(&MNL_F1_K3), dot(&MNL_F2_K3), dot(&MNL_F3_K3)]
}

fn softmax_probs(u: &[f64]) -> Vec<f64> {
    let m = u.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = u.iter().map(|&v| (v - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// Gauss-Hermite nodes/weights for integrals against the standard normal
/// density, via Golub-Welsch on the probabilists' Hermite recurrence.
pub fn gauss_hermite(m: usize) -> (Vec<f64>, Vec<f64>) {
    let mut jac = DMatrix::zeros(m, m);
    for k in 1..m {
        let b = (k as f64).sqrt();
        jac[(k - 1, k)] = b;
        jac[(k, k - 1)] = b;
    }
    let eig = jac.symmetric_eigen();
    let mut pairs: Vec<(f64, f64)> = (0..m)
        .map(|j| (eig.eigenvalues[j], eig.eigenvectors[(0, j)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    (pairs.iter().map(|p| p.0).collect(), pairs.iter().map(|p| p.1).collect())
}

/// DGP3 choice probabilities by single quadrature: the common factor cancels
/// in utility differences, leaving independent N(0, 1-rho) contrasts.
pub fn dgp3_choice_probs(f: &[f64], rho: f64, nodes: &(Vec<f64>, Vec<f64>)) -> Vec<f64> {
    let kp1 = f.len();
    let s = (1.0 - rho).sqrt();
    let mut p = vec![0.0; kp1];
    for k in 0..kp1 {
        let mut acc = 0.0;
        for (t, w) in nodes.0.iter().zip(&nodes.1) {
            let mut prod = 1.0;
            for j in 0..kp1 {
                if j != k {
                    prod *= norm_cdf(t + (f[k] - f[j]) / s);
                }
            }
            acc += w * prod;
        }
        p[k] = acc;
    }
    let z: f64 = p.iter().sum();
    for v in &mut p {
        *v /= z;
    }
    p
}

/// DGP4 choice probabilities: one outer quadrature over the common factor and
/// one inner quadrature over the own idiosyncratic shock.
pub fn dgp4_choice_probs(
    f: &[f64],
    loadings: &[f64],
    nodes: &(Vec<f64>, Vec<f64>),
) -> Vec<f64> {
    let kp1 = f.len();
    let mut p = vec![0.0; kp1];
    for k in 0..kp1 {
        let mut acc = 0.0;
        for (tf, wf) in nodes.0.iter().zip(&nodes.1) {
            let mut inner = 0.0;
            for (tu, wu) in nodes.0.iter().zip(&nodes.1) {
                let mut prod = 1.0;
                for j in 0..kp1 {
                    if j != k {
                        prod *= norm_cdf(
                            f[k] - f[j] + (loadings[k] - loadings[j]) * tf + tu,
                        );
                    }
                }
                inner += wu * prod;
            }
            acc += wf * inner;
        }
        p[k] = acc;
    }
    let z: f64 = p.iter().sum();
    for v in &mut p {
        *v /= z;
    }
    p
}

/// Multinomial designs: DGP1 (K = 2, IIA), DGP2 (K = 3, IIA), DGP3 (K = 3,
/// equicorrelated normal, exchangeable), DGP4 (K = 3, factor model).
pub fn generate_multinomial(dgp: u8, n: usize, seed: u64) -> Result<SimDataset> {
    if !(1..=4).contains(&dgp) {
        return Err(Error::InvalidArgument(format!("unknown multinomial DGP {dgp}")));
    }
    let mut rng = rep_rng(seed, 0);
    let gumbel = Gumbel::new(0.0, 1.0).unwrap();
    let k_max = if dgp == 1 { 2 } else { 3 };
    let d_cov = if dgp == 1 { 2 } else { 3 };
    let nodes = if dgp >= 3 { Some(gauss_hermite(if dgp == 3 { 60 } else { 32 })) } else { None };
    let mut x = DMatrix::zeros(n, d_cov);
    let mut d = vec![0usize; n];
    let mut y = vec![None; n];
    let mut probs = DMatrix::zeros(n, k_max + 1);
    let gamma_sr = if dgp == 3 { GAMMA_SR_DGP3 } else { GAMMA_SR_DGP4 };
    for i in 0..n {
        let f: Vec<f64> = if dgp == 1 {
            let (xi, zi) = (draw_normal(&mut rng), draw_normal(&mut rng));
            x[(i, 0)] = xi;
            x[(i, 1)] = zi;
            utilities_dgp1(xi, zi).to_vec()
        } else {
            let (xi, zi, wi) =
                (draw_normal(&mut rng), draw_normal(&mut rng), draw_normal(&mut rng));
            x[(i, 0)] = xi;
            x[(i, 1)] = zi;
            x[(i, 2)] = wi;
            utilities_k3(xi, zi, wi).to_vec()
        };
        let eps: Vec<f64> = match dgp {
            1 | 2 => (0..=k_max).map(|_| rng.sample(gumbel)).collect(),
            3 => {
                let c: f64 = draw_normal(&mut rng);
                (0..=k_max)
                    .map(|_| MNL_DGP3_RHO.sqrt() * c + (1.0 - MNL_DGP3_RHO).sqrt() * draw_normal(&mut rng))
                    .collect()
            }
            _ => {
                let fac: f64 = draw_normal(&mut rng);
                (0..=k_max).map(|j| MNL_DGP4_LOADINGS[j] * fac + draw_normal(&mut rng)).collect()
            }
        };
        let mut best = 0;
        for j in 1..=k_max {
            if f[j] + eps[j] > f[best] + eps[best] {
                best = j;
            }
        }
        d[i] = best;
        for (j, pj) in match dgp {
            1 | 2 => softmax_probs(&f),
            3 => dgp3_choice_probs(&f, MNL_DGP3_RHO, nodes.as_ref().unwrap()),
            _ => dgp4_choice_probs(&f, &MNL_DGP4_LOADINGS, nodes.as_ref().unwrap()),
        }
        .into_iter()
        .enumerate()
        {
            probs[(i, j)] = pj;
        }
        if best >= 1 {
            let v = match dgp {
                1 | 2 => eps[best] + rng.sample(gumbel),
                _ => {
                    let ebar = (eps.iter().sum::<f64>() - eps[best]) / k_max as f64;
                    eps[best]
                        + gamma_sr * eps[best] * (eps[best] - ebar)
                        + SIGMA_ETA * draw_normal(&mut rng)
                }
            };
            let b: &[f64] = if dgp == 1 { &MNL_BETA_DGP1[best - 1] } else { &MNL_BETA_K3[best - 1] };
            let mut yi = b[0] + v;
            for j in 0..d_cov {
                yi += b[j + 1] * x[(i, j)];
            }
            y[i] = Some(yi);
        } else {
            let _ = draw_normal(&mut rng);
        }
    }
    let true_beta: Vec<Vec<f64>> = if dgp == 1 {
        MNL_BETA_DGP1.iter().map(|b| b.to_vec()).collect()
    } else {
        MNL_BETA_K3.iter().map(|b| b.to_vec()).collect()
    };
    Ok(SimDataset {
        x,
        kinds: vec![VarKind::Continuous; d_cov],
        d,
        y,
        k_max,
        true_beta,
        truth: Truth::Multinomial { probs },
        dgp: DgpTag::Multinomial(dgp),
        seed,
        delta: 1.0,
    })
}

// ---------------------------------------------------------------------------
// Oracle controls
// ---------------------------------------------------------------------------

/// How oracle controls enter the second stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OracleEntry {
    Linear,
    Spline,
}

/// Oracle control columns for the D = k subsample (row indices supplied).
pub fn oracle_controls(sd: &SimDataset, k: usize, rows: &[usize]) -> Result<(DMatrix<f64>, OracleEntry)> {
    match &sd.truth {
        Truth::Ordered { index, thresholds, sigma_rho } => {
            let lo = if k == 0 { f64::NEG_INFINITY } else { thresholds[k - 1] };
            let hi = if k == sd.k_max { f64::INFINITY } else { thresholds[k] };
            let mut m = DMatrix::zeros(rows.len(), 1);
            for (r, &i) in rows.iter().enumerate() {
                m[(r, 0)] =
                    sigma_rho[k - 1] * crate::firststage::truncated_correction(index[i], lo, hi)?;
            }
            Ok((m, OracleEntry::Linear))
        }
        Truth::Multinomial { probs } => match sd.dgp {
            DgpTag::Multinomial(id) if id <= 2 => {
                // own-shock restriction holds: true inclusive value, linear
                let mut m = DMatrix::zeros(rows.len(), 1);
                for (r, &i) in rows.iter().enumerate() {
                    m[(r, 0)] = -probs[(i, k)].max(1e-300).ln();
                }
                Ok((m, OracleEntry::Linear))
            }
            DgpTag::Multinomial(_) => {
                let mut m = DMatrix::zeros(rows.len(), sd.k_max);
                for (r, &i) in rows.iter().enumerate() {
                    for j in 0..sd.k_max {
                        m[(r, j)] = probs[(i, j + 1)];
                    }
                }
                Ok((m, OracleEntry::Spline))
            }
            DgpTag::Ordered(_) => Err(Error::TruthMissing("multinomial truth on ordered DGP")),
        },
    }
}

// ---------------------------------------------------------------------------
// First-stage sieve designs for the Monte Carlo recipes
// ---------------------------------------------------------------------------

fn spline_cols(c: &[f64], interior: usize, order: usize) -> Result<DMatrix<f64>> {
    let kv = place_knots(c, interior, order)?;
    Ok(eval_block(&kv, c).0)
}

fn tensor_cols(a: &[f64], b: &[f64], interior: usize, order: usize) -> Result<DMatrix<f64>> {
    let kva = place_knots(a, interior, order)?;
    let kvb = place_knots(b, interior, order)?;
    let spec = TensorSpec::new(vec![kva, kvb])?;
    eval_tensor_block(&spec, &[a, b])
}

fn hstack(blocks: Vec<DMatrix<f64>>) -> DMatrix<f64> {
    let n = blocks[0].nrows();
    let total: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut m = DMatrix::zeros(n, total);
    let mut off = 0;
    for b in blocks {
        m.view_mut((0, off), (n, b.ncols())).copy_from(&b);
        off += b.ncols();
    }
    m
}

/// Marginal cubic splines (J = 3) for each continuous column, pairwise
/// lower-order tensors among continuous columns, binary columns interacted
/// with the continuous spline blocks.
pub fn mc_first_stage_design(x: &DMatrix<f64>, kinds: &[VarKind]) -> Result<DMatrix<f64>> {
    let n = x.nrows();
    let cont: Vec<Vec<f64>> = (0..x.ncols())
        .filter(|&j| kinds[j] == VarKind::Continuous)
        .map(|j| x.column(j).iter().cloned().collect())
        .collect();
    let cat: Vec<Vec<f64>> = (0..x.ncols())
        .filter(|&j| kinds[j] == VarKind::Categorical)
        .map(|j| x.column(j).iter().cloned().collect())
        .collect();
    let mut blocks = Vec::new();
    for c in &cont {
        blocks.push(spline_cols(c, 3, 4)?);
    }
    for a in 0..cont.len() {
        for b in a + 1..cont.len() {
            blocks.push(tensor_cols(&cont[a], &cont[b], 1, 3)?);
        }
    }
    // binary covariates: linear column plus interaction with each continuous
    // spline block (binary-by-continuous index shifts)
    for z in &cat {
        blocks.push(DMatrix::from_fn(n, 1, |i, _| z[i]));
        for c in &cont {
            let sp = spline_cols(c, 3, 4)?;
            let mut inter = sp.clone();
            for i in 0..n {
                for j in 0..sp.ncols() {
                    inter[(i, j)] *= z[i];
                }
            }
            blocks.push(inter);
        }
    }
    Ok(hstack(blocks))
}

/// Leaner design for the multinomial first stage: marginal cubic splines with
/// one interior knot plus linear pairwise interactions. The MNL link already
/// fits K response surfaces, so a compact basis keeps the probability noise
/// well below the control-signal scale.
pub fn mc_mnl_first_stage_design(x: &DMatrix<f64>, kinds: &[VarKind]) -> Result<DMatrix<f64>> {
    let n = x.nrows();
    let cont: Vec<Vec<f64>> = (0..x.ncols())
        .filter(|&j| kinds[j] == VarKind::Continuous)
        .map(|j| x.column(j).iter().cloned().collect())
        .collect();
    let cat: Vec<Vec<f64>> = (0..x.ncols())
        .filter(|&j| kinds[j] == VarKind::Categorical)
        .map(|j| x.column(j).iter().cloned().collect())
        .collect();
    let mut blocks = Vec::new();
    for c in &cont {
        blocks.push(spline_cols(c, 1, 4)?);
    }
    for a in 0..cont.len() {
        for b in a + 1..cont.len() {
            blocks.push(DMatrix::from_fn(n, 1, |i, _| cont[a][i] * cont[b][i]));
        }
    }
    for z in &cat {
        blocks.push(DMatrix::from_fn(n, 1, |i, _| z[i]));
        for c in &cont {
            let sp = spline_cols(c, 1, 4)?;
            let mut inter = sp.clone();
            for i in 0..n {
                for j in 0..sp.ncols() {
                    inter[(i, j)] *= z[i];
                }
            }
            blocks.push(inter);
        }
    }
    Ok(hstack(blocks))
}

// ---------------------------------------------------------------------------
// Estimator battery
// ---------------------------------------------------------------------------

fn subrows(m: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), m.ncols(), |r, c| m[(rows[r], c)])
}

/// Per-category second-stage results of one estimator on one dataset.
pub type CategoryFits = Vec<FitResult>;

struct FirstStages {
    ordered_linear: Option<OrderedFit>,
    thresholds: Option<ThresholdFit>,
    mnl: Option<MnlFit>,
    fs_design: Option<DMatrix<f64>>,
}

fn needs(estimators: &[Estimator], e: Estimator) -> bool {
    estimators.contains(&e)
}

/// A failed first-stage fit leaves its slot empty; dependent estimators then
/// fail for this replication only.
fn fit_first_stages(sd: &SimDataset, estimators: &[Estimator]) -> Result<FirstStages> {
    let is_ordered = matches!(sd.dgp, DgpTag::Ordered(_));
    let mut fs = FirstStages { ordered_linear: None, thresholds: None, mnl: None, fs_design: None };
    if is_ordered && needs(estimators, Estimator::Linear) {
        // misspecified linear index on the raw covariates, no intercept
        fs.ordered_linear = fit_ordered(&sd.d, &sd.x, sd.k_max).ok();
    }
    let needs_sieve_fs = if is_ordered {
        needs(estimators, Estimator::Sieve)
    } else {
        needs(estimators, Estimator::Sieve)
            || needs(estimators, Estimator::Mlogit)
            || needs(estimators, Estimator::Exch)
    };
    if needs_sieve_fs {
        let design = if is_ordered {
            mc_first_stage_design(&sd.x, &sd.kinds)?
        } else {
            mc_mnl_first_stage_design(&sd.x, &sd.kinds)?
        };
        if is_ordered {
            fs.thresholds = fit_thresholds(&sd.d, &design, sd.k_max).ok();
        } else {
            fs.mnl = fit_mnl(&sd.d, &design, sd.k_max).ok();
        }
        fs.fs_design = Some(design);
    }
    Ok(fs)
}

fn second_stage_spec(est: Estimator, sd: &SimDataset, k: usize) -> ControlSpec {
    // heavier selection nonlinearity (gamma_sr = 2) needs a richer control
    // basis to keep second-stage approximation bias below the SE scale
    let full = sd.dgp == DgpTag::Multinomial(4);
    let j = 2;
    match est {
        Estimator::Ols => ControlSpec::new(ControlVariant::None),
        Estimator::Linear => ControlSpec::new(ControlVariant::ParametricOrdered),
        Estimator::Oracle => ControlSpec::new(ControlVariant::ParametricOrdered),
        Estimator::Sieve => {
            if matches!(sd.dgp, DgpTag::Ordered(_)) {
                let mut spec = ControlSpec::new(ControlVariant::SieveOrdered);
                spec.sieve.interior = if k == sd.k_max { vec![3] } else { vec![2, 2] };
                spec
            } else {
                let mut spec = ControlSpec::new(ControlVariant::SieveProbs { full_tensor: full });
                spec.sieve.interior = vec![j; sd.k_max];
                spec
            }
        }
        Estimator::Mlogit => {
            let mut spec = ControlSpec::new(ControlVariant::MlogitIv { linear: false });
            spec.sieve.interior = vec![j];
            spec
        }
        Estimator::Exch => {
            let mut spec = ControlSpec::new(ControlVariant::ExchL { l: 2 });
            spec.sieve.interior = vec![j, j];
            spec
        }
    }
}

/// Fit one estimator on all categories of a dataset; first stages supplied so
/// they are shared across estimators.
fn fit_estimator(sd: &SimDataset, fs: &FirstStages, est: Estimator) -> Result<CategoryFits> {
    let mut out = Vec::with_capacity(sd.k_max);
    for k in 1..=sd.k_max {
        let rows = (0..sd.d.len()).filter(|&i| sd.d[i] == k).collect::<Vec<_>>();
        if rows.is_empty() {
            return Err(Error::MissingCategory(k));
        }
        let y = DVector::from_iterator(rows.len(), rows.iter().map(|&i| sd.y[i].unwrap()));
        let x = subrows(&sd.x, &rows);
        let spec = second_stage_spec(est, sd, k);
        let fit = match est {
            Estimator::Ols => {
                let controls = DMatrix::zeros(rows.len(), 0);
                let (bas, cl) = expand_controls(&spec, &controls)?;
                fit_partially_linear(&y, &x, &bas, cl)?
            }
            Estimator::Linear => {
                let of = fs.ordered_linear.as_ref().ok_or(Error::IncompatibleVariant(
                    "Linear estimator requires ordered architecture".into(),
                ))?;
                let ctrl = build_controls(
                    &spec,
                    &FirstStageFit::Ordered(of.clone()),
                    &subrows(&sd.x, &rows),
                    k,
                )?;
                let (bas, cl) = expand_controls(&spec, &ctrl)?;
                fit_partially_linear(&y, &x, &bas, cl)?
            }
            Estimator::Oracle => {
                let (ctrl, entry) = oracle_controls(sd, k, &rows)?;
                let spec = match entry {
                    OracleEntry::Linear => ControlSpec::new(ControlVariant::ParametricOrdered),
                    OracleEntry::Spline => {
                        let full = sd.dgp == DgpTag::Multinomial(4);
                        let mut s =
                            ControlSpec::new(ControlVariant::SieveProbs { full_tensor: full });
                        s.sieve.interior = vec![2; sd.k_max];
                        s
                    }
                };
                let (bas, cl) = expand_controls(&spec, &ctrl)?;
                fit_partially_linear(&y, &x, &bas, cl)?
            }
            Estimator::Sieve | Estimator::Mlogit | Estimator::Exch => {
                let design = fs.fs_design.as_ref().ok_or(Error::IncompatibleVariant(
                    "sieve estimator requires first-stage design".into(),
                ))?;
                let fsrows = subrows(design, &rows);
                let fit_enum = if matches!(sd.dgp, DgpTag::Ordered(_)) {
                    FirstStageFit::Thresholds(fs.thresholds.clone().ok_or(
                        Error::IncompatibleVariant("first-stage fit unavailable".into()),
                    )?)
                } else {
                    FirstStageFit::Mnl(fs.mnl.clone().ok_or(Error::IncompatibleVariant(
                        "first-stage fit unavailable".into(),
                    ))?)
                };
                let ctrl = build_controls(&spec, &fit_enum, &fsrows, k)?;
                let (bas, cl) = expand_controls(&spec, &ctrl)?;
                fit_partially_linear(&y, &x, &bas, cl)?
            }
        };
        out.push(fit);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Study runner
// ---------------------------------------------------------------------------

type RepRecord = BTreeMap<Estimator, Option<Vec<(DVector<f64>, DVector<f64>)>>>;

fn run_replication(cfg: &SimConfig, rep: u64) -> Result<RepRecord> {
    let sd = generate(cfg.dgp, cfg.n, cfg.seed.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(rep), cfg.delta)?;
    let fs = fit_first_stages(&sd, &cfg.estimators)?;
    let mut rec = RepRecord::new();
    for &est in &cfg.estimators {
        let fitted = fit_estimator(&sd, &fs, est).ok().map(|fits| {
            fits.into_iter().map(|f| {
                let se = f.robust_se();
                (f.beta, se)
            }).collect::<Vec<_>>()
        });
        rec.insert(est, fitted);
    }
    Ok(rec)
}

pub fn run_study(cfg: &SimConfig) -> Result<MetricsTable> {
    cfg.validate()?;
    let reps: Vec<Result<RepRecord>> =
        (0..cfg.replications as u64).into_par_iter().map(|r| run_replication(cfg, r)).collect();
    let mut records = Vec::with_capacity(reps.len());
    for r in reps {
        records.push(r?);
    }
    let sd0 = generate(cfg.dgp, 100.max(cfg.n.min(200)), cfg.seed, cfg.delta)?;
    let k_max = sd0.k_max;
    let d_x = sd0.x.ncols();
    let true_beta = sd0.true_beta.clone();

    let mut cells = Vec::new();
    let mut failures = BTreeMap::new();
    for &est in &cfg.estimators {
        let ok: Vec<&Vec<(DVector<f64>, DVector<f64>)>> =
            records.iter().filter_map(|r| r.get(&est).and_then(|o| o.as_ref())).collect();
        let failed = cfg.replications - ok.len();
        failures.insert(est.name().to_string(), failed);
        let rate = failed as f64 / cfg.replications as f64;
        if rate > 0.05 {
            return Err(Error::TooManyFailures { rate, failed, total: cfg.replications });
        }
        let m = ok.len() as f64;
        for k in 1..=k_max {
            for j in 0..d_x {
                // slope j of category k (true_beta stores intercept first)
                let truth = true_beta[k - 1][j + 1];
                let ests: Vec<f64> = ok.iter().map(|r| r[k - 1].0[j]).collect();
                let ses: Vec<f64> = ok.iter().map(|r| r[k - 1].1[j]).collect();
                let mean = ests.iter().sum::<f64>() / m;
                let bias = mean - truth;
                let rmse =
                    (ests.iter().map(|e| (e - truth).powi(2)).sum::<f64>() / m).sqrt();
                let var = ests.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / m;
                let cover = ests
                    .iter()
                    .zip(&ses)
                    .filter(|(e, s)| (*e - truth).abs() <= Z975 * **s)
                    .count() as f64
                    / m;
                cells.push(MetricCell {
                    estimator: est.name().to_string(),
                    category: k,
                    coefficient: j,
                    rmse,
                    mean_bias: bias,
                    abs_mean_bias: bias.abs(),
                    coverage: cover,
                    mc_sd: var.sqrt(),
                    mean_se: ses.iter().sum::<f64>() / m,
                });
            }
        }
    }
    Ok(MetricsTable { cells, failures, replications: cfg.replications })
}

// ---------------------------------------------------------------------------
// Bootstrap
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BootstrapResult {
    /// Per category (1..=K) and coefficient: bootstrap SE of beta-hat.
    pub se: Vec<Vec<f64>>,
    /// Point estimates and analytic robust SEs on the original sample.
    pub point: Vec<Vec<f64>>,
    pub robust_se: Vec<Vec<f64>>,
    pub b: usize,
    pub failed: usize,
}

fn resample(sd: &SimDataset, rng: &mut ChaCha12Rng) -> SimDataset {
    let n = sd.d.len();
    let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
    let truth = match &sd.truth {
        Truth::Ordered { index, thresholds, sigma_rho } => Truth::Ordered {
            index: idx.iter().map(|&i| index[i]).collect(),
            thresholds: thresholds.clone(),
            sigma_rho: sigma_rho.clone(),
        },
        Truth::Multinomial { probs } => Truth::Multinomial { probs: subrows(probs, &idx) },
    };
    SimDataset {
        x: subrows(&sd.x, &idx),
        kinds: sd.kinds.clone(),
        d: idx.iter().map(|&i| sd.d[i]).collect(),
        y: idx.iter().map(|&i| sd.y[i]).collect(),
        k_max: sd.k_max,
        true_beta: sd.true_beta.clone(),
        truth,
        dgp: sd.dgp,
        seed: sd.seed,
        delta: sd.delta,
    }
}

/// Nonparametric pairs bootstrap: resample whole observations, refit both
/// stages, SE = SD of the resampled coefficient estimates.
pub fn bootstrap_se(
    sd: &SimDataset,
    est: Estimator,
    b: usize,
    seed: u64,
) -> Result<BootstrapResult> {
    if b < 2 {
        return Err(Error::InvalidArgument("bootstrap requires B >= 2".into()));
    }
    let ests = vec![est];
    let fs = fit_first_stages(sd, &ests)?;
    let point_fits = fit_estimator(sd, &fs, est)?;
    let point: Vec<Vec<f64>> = point_fits.iter().map(|f| f.beta.iter().cloned().collect()).collect();
    let robust_se: Vec<Vec<f64>> =
        point_fits.iter().map(|f| f.robust_se().iter().cloned().collect()).collect();

    let draws: Vec<Option<Vec<Vec<f64>>>> = (0..b as u64)
        .into_par_iter()
        .map(|bi| {
            let mut rng = rep_rng(seed ^ 0xB007_5EED, bi + 1);
            let rs = resample(sd, &mut rng);
            let fs = fit_first_stages(&rs, &ests).ok()?;
            let fits = fit_estimator(&rs, &fs, est).ok()?;
            Some(fits.iter().map(|f| f.beta.iter().cloned().collect()).collect())
        })
        .collect();
    let ok: Vec<&Vec<Vec<f64>>> = draws.iter().filter_map(|d| d.as_ref()).collect();
    let failed = b - ok.len();
    if ok.len() < 2 {
        return Err(Error::TooManyFailures { rate: 1.0, failed, total: b });
    }
    let m = ok.len() as f64;
    let mut se = Vec::with_capacity(sd.k_max);
    for k in 0..sd.k_max {
        let d_x = point[k].len();
        let mut per_coef = Vec::with_capacity(d_x);
        for j in 0..d_x {
            let vals: Vec<f64> = ok.iter().map(|d| d[k][j]).collect();
            let mean = vals.iter().sum::<f64>() / m;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0);
            per_coef.push(var.sqrt());
        }
        se.push(per_coef);
    }
    Ok(BootstrapResult { se, point, robust_se, b, failed })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BootstrapStudyRow {
    pub category: usize,
    pub coefficient: usize,
    pub mean_hc_se: f64,
    pub mean_boot_se: f64,
    /// Monte Carlo SD of the point estimates across replications.
    pub mc_sd: f64,
    /// mean HC SE / mean bootstrap SE.
    pub ratio: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BootstrapStudy {
    pub rows: Vec<BootstrapStudyRow>,
    pub replications: usize,
    pub b: usize,
}

/// Bootstrap validation study: R replications of (generate, fit, B-resample
/// bootstrap), comparing average analytic HC SEs with average bootstrap SEs
/// and with the Monte Carlo SD of the point estimates.
pub fn run_bootstrap_study(cfg: &SimConfig) -> Result<BootstrapStudy> {
    cfg.validate()?;
    let b = cfg
        .bootstrap
        .ok_or_else(|| Error::InvalidArgument("bootstrap B missing from config".into()))?;
    if cfg.estimators.len() != 1 {
        return Err(Error::InvalidArgument("bootstrap study takes exactly one estimator".into()));
    }
    let est = cfg.estimators[0];
    let reps: Vec<Option<BootstrapResult>> = (0..cfg.replications as u64)
        .into_par_iter()
        .map(|r| {
            let seed = cfg.seed.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(r);
            let sd = generate(cfg.dgp, cfg.n, seed, cfg.delta).ok()?;
            bootstrap_se(&sd, est, b, seed).ok()
        })
        .collect();
    let ok: Vec<&BootstrapResult> = reps.iter().filter_map(|r| r.as_ref()).collect();
    let failed = cfg.replications - ok.len();
    let rate = failed as f64 / cfg.replications as f64;
    if rate > 0.05 {
        return Err(Error::TooManyFailures { rate, failed, total: cfg.replications });
    }
    let m = ok.len() as f64;
    let k_max = ok[0].point.len();
    let mut rows = Vec::new();
    for k in 0..k_max {
        let d_x = ok[0].point[k].len();
        for j in 0..d_x {
            let points: Vec<f64> = ok.iter().map(|r| r.point[k][j]).collect();
            let mean = points.iter().sum::<f64>() / m;
            let mc_sd =
                (points.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (m - 1.0)).sqrt();
            let mean_hc = ok.iter().map(|r| r.robust_se[k][j]).sum::<f64>() / m;
            let mean_boot = ok.iter().map(|r| r.se[k][j]).sum::<f64>() / m;
            rows.push(BootstrapStudyRow {
                category: k + 1,
                coefficient: j,
                mean_hc_se: mean_hc,
                mean_boot_se: mean_boot,
                mc_sd,
                ratio: mean_hc / mean_boot,
            });
        }
    }
    Ok(BootstrapStudy { rows, replications: cfg.replications, b })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn determinism_of_generation() {
        let a = generate_ordered(1, 500, 42, 1.0).unwrap();
        let b = generate_ordered(1, 500, 42, 1.0).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.d, b.d);
        assert_eq!(a.y, b.y);
        let c = generate_multinomial(3, 300, 7).unwrap();
        let d = generate_multinomial(3, 300, 7).unwrap();
        assert_eq!(c.x, d.x);
        assert_eq!(c.d, d.d);
        assert_eq!(c.y, d.y);
    }

    #[test]
    fn dgp1_index_population_mean() {
        // E[h] = -0.5 E[X^2] - 0.5 E[Z^2] = -1 with all odd moments zero
        let sd = generate_ordered(1, 200_000, 3, 1.0).unwrap();
        if let Truth::Ordered { index, thresholds, .. } = &sd.truth {
            let mean = index.iter().sum::<f64>() / index.len() as f64;
            assert!((mean + 1.0).abs() < 0.02, "mean index {mean}");
            assert_eq!(thresholds, &vec![-1.5, 0.5]);
        } else {
            panic!("wrong truth");
        }
    }

    #[test]
    fn dgp3_equicorrelated_shocks() {
        // correlation of the shock construction, checked on raw draws
        let mut rng = rep_rng(11, 0);
        let n = 1_000_000;
        let mut s01 = 0.0;
        let mut s0 = 0.0;
        let mut s1 = 0.0;
        let mut q0 = 0.0;
        let mut q1 = 0.0;
        for _ in 0..n {
            let c: f64 = draw_normal(&mut rng);
            let e0 = MNL_DGP3_RHO.sqrt() * c + (1.0 - MNL_DGP3_RHO).sqrt() * draw_normal(&mut rng);
            let e1 = MNL_DGP3_RHO.sqrt() * c + (1.0 - MNL_DGP3_RHO).sqrt() * draw_normal(&mut rng);
            s01 += e0 * e1;
            s0 += e0;
            s1 += e1;
            q0 += e0 * e0;
            q1 += e1 * e1;
        }
        let nf = n as f64;
        let cov = s01 / nf - (s0 / nf) * (s1 / nf);
        let v0 = q0 / nf - (s0 / nf).powi(2);
        let v1 = q1 / nf - (s1 / nf).powi(2);
        let corr = cov / (v0 * v1).sqrt();
        assert!((corr - 0.5).abs() < 0.01, "corr {corr}");
    }

    #[test]
    fn dgp4_loadings_constant() {
        assert_eq!(MNL_DGP4_LOADINGS, [0.0, 0.3, 0.8, -0.5]);
    }

    #[test]
    fn quadrature_symmetric_case_uniform() {
        let nodes = gauss_hermite(60);
        let p = dgp3_choice_probs(&[0.0; 4], MNL_DGP3_RHO, &nodes);
        for v in &p {
            assert_abs_diff_eq!(*v, 0.25, epsilon = 1e-10);
        }
    }

    #[test]
    fn quadrature_matches_mc_frequencies() {
        // fixed utilities; compare quadrature probabilities with MC draws
        let f = [0.0, 0.4, -0.3, 0.2];
        let nodes = gauss_hermite(60);
        let p3 = dgp3_choice_probs(&f, MNL_DGP3_RHO, &nodes);
        let nodes4 = gauss_hermite(32);
        let p4 = dgp4_choice_probs(&f, &MNL_DGP4_LOADINGS, &nodes4);
        let n = 1_000_000;
        let mut rng = rep_rng(99, 0);
        let mut c3 = [0usize; 4];
        let mut c4 = [0usize; 4];
        for _ in 0..n {
            let c: f64 = draw_normal(&mut rng);
            let e3: Vec<f64> = (0..4)
                .map(|_| MNL_DGP3_RHO.sqrt() * c + (1.0 - MNL_DGP3_RHO).sqrt() * draw_normal(&mut rng))
                .collect();
            let fac: f64 = draw_normal(&mut rng);
            let e4: Vec<f64> =
                (0..4).map(|j| MNL_DGP4_LOADINGS[j] * fac + draw_normal(&mut rng)).collect();
            let b3 = (0..4).max_by(|&a, &b| (f[a] + e3[a]).partial_cmp(&(f[b] + e3[b])).unwrap()).unwrap();
            let b4 = (0..4).max_by(|&a, &b| (f[a] + e4[a]).partial_cmp(&(f[b] + e4[b])).unwrap()).unwrap();
            c3[b3] += 1;
            c4[b4] += 1;
        }
        for j in 0..4 {
            let freq3 = c3[j] as f64 / n as f64;
            let se3 = (p3[j] * (1.0 - p3[j]) / n as f64).sqrt();
            assert!((freq3 - p3[j]).abs() <= 3.0 * se3, "DGP3 class {j}: {freq3} vs {}", p3[j]);
            let freq4 = c4[j] as f64 / n as f64;
            let se4 = (p4[j] * (1.0 - p4[j]) / n as f64).sqrt();
            assert!((freq4 - p4[j]).abs() <= 3.0 * se4, "DGP4 class {j}: {freq4} vs {}", p4[j]);
        }
    }

    #[test]
    fn single_replication_coverage_degenerate() {
        let cfg = SimConfig {
            dgp: DgpTag::Ordered(1),
            n: 800,
            replications: 1,
            seed: 5,
            estimators: vec![Estimator::Ols],
            delta: 1.0,
            bootstrap: None,
        };
        let t = run_study(&cfg).unwrap();
        for c in &t.cells {
            assert!(c.coverage == 0.0 || c.coverage == 1.0);
        }
    }

    #[test]
    fn unknown_dgp_errors() {
        assert!(generate_ordered(9, 100, 1, 1.0).is_err());
        assert!(generate_multinomial(0, 100, 1).is_err());
    }

    #[test]
    fn bootstrap_b_too_small_errors() {
        let sd = generate_multinomial(1, 300, 2).unwrap();
        assert!(bootstrap_se(&sd, Estimator::Mlogit, 1, 3).is_err());
    }
}
