//! Estimation pipeline on loaded datasets: first-stage fit, control
//! construction, second-stage regressions, and pairs bootstrap.

use crate::data::{build_first_stage_design, Dataset, VarKind};
use crate::error::{Error, Result};
use crate::firststage::{fit_mnl, fit_ordered, fit_thresholds};
use crate::secondstage::{
    build_controls, fit_outcome, ControlSpec, ControlVariant, FirstStageFit, FitResult, SieveSpec,
};
use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Estimator recipe applied to a dataset: architecture, control variant, and
/// sieve resolution choices.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitRecipe {
    /// "ordered-parametric", "ordered-nonparametric", or "mnl".
    pub architecture: String,
    /// "ols", "parametric", "sieve-ordered", "mlogit", "mlogit-linear",
    /// "sieve-probs", "sieve-probs-full", or "exch".
    pub estimator: String,
    #[serde(default = "default_exch_l")]
    pub exch_l: usize,
    /// Interior-knot count per first-stage margin; data-driven if absent.
    pub first_stage_interior: Option<usize>,
    /// Interior-knot counts per second-stage control; data-driven if empty.
    #[serde(default)]
    pub second_stage_interior: Vec<usize>,
    /// Use the raw covariates as the first-stage design (parametric index).
    #[serde(default)]
    pub linear_index: bool,
}

fn default_exch_l() -> usize {
    2
}

pub struct CategoryReport {
    pub category: usize,
    pub fit: FitResult,
}

fn control_variant(fc: &FitRecipe) -> Result<ControlVariant> {
    let v = match fc.estimator.as_str() {
        "ols" => ControlVariant::None,
        "parametric" => ControlVariant::ParametricOrdered,
        "sieve-ordered" => ControlVariant::SieveOrdered,
        "mlogit" => ControlVariant::MlogitIv { linear: false },
        "mlogit-linear" => ControlVariant::MlogitIv { linear: true },
        "sieve-probs" => ControlVariant::SieveProbs { full_tensor: false },
        "sieve-probs-full" => ControlVariant::SieveProbs { full_tensor: true },
        "exch" => ControlVariant::ExchL { l: fc.exch_l },
        other => return Err(Error::InvalidArgument(format!("unknown estimator '{other}'"))),
    };
    let ok = matches!(
        (&v, fc.architecture.as_str()),
        (ControlVariant::None, _)
            | (ControlVariant::ParametricOrdered, "ordered-parametric")
            | (ControlVariant::SieveOrdered, "ordered-nonparametric")
            | (ControlVariant::MlogitIv { .. }, "mnl")
            | (ControlVariant::SieveProbs { .. }, "mnl")
            | (ControlVariant::ExchL { .. }, "mnl")
    );
    if !ok {
        return Err(Error::IncompatibleVariant(format!(
            "estimator '{}' is incompatible with architecture '{}'",
            fc.estimator, fc.architecture
        )));
    }
    Ok(v)
}

fn first_stage_design(ds: &Dataset, fc: &FitRecipe) -> Result<DMatrix<f64>> {
    if fc.linear_index || fc.architecture == "ordered-parametric" {
        return Ok(ds.x.clone());
    }
    let n_cont = ds.kinds.iter().filter(|k| **k == VarKind::Continuous).count();
    let spec = SieveSpec {
        interior: fc.first_stage_interior.map(|j| vec![j; n_cont]).unwrap_or_default(),
        ..SieveSpec::default()
    };
    build_first_stage_design(ds, &spec)
}

fn subrows(m: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), m.ncols(), |r, c| m[(rows[r], c)])
}

/// Fit the configured estimator on every selected category of the dataset.
pub fn fit_dataset(ds: &Dataset, fc: &FitRecipe) -> Result<Vec<CategoryReport>> {
    ds.validate()?;
    let variant = control_variant(fc)?;
    let spec = ControlSpec {
        variant: variant.clone(),
        sieve: SieveSpec { interior: fc.second_stage_interior.clone(), ..SieveSpec::default() },
    };
    let fs = if variant == ControlVariant::None {
        None
    } else {
        let design = first_stage_design(ds, fc)?;
        let fit = match fc.architecture.as_str() {
            "ordered-parametric" => FirstStageFit::Ordered(fit_ordered(&ds.d, &design, ds.k_max)?),
            "ordered-nonparametric" => {
                FirstStageFit::Thresholds(fit_thresholds(&ds.d, &design, ds.k_max)?)
            }
            "mnl" => FirstStageFit::Mnl(fit_mnl(&ds.d, &design, ds.k_max)?),
            other => {
                return Err(Error::InvalidArgument(format!("unknown architecture '{other}'")))
            }
        };
        Some((design, fit))
    };
    let mut reports = Vec::with_capacity(ds.k_max);
    for k in 1..=ds.k_max {
        let rows = ds.rows_for(k);
        let y = DVector::from_iterator(rows.len(), rows.iter().map(|&i| ds.y[i].unwrap()));
        let x = subrows(&ds.x, &rows);
        let controls = match &fs {
            None => DMatrix::zeros(rows.len(), 0),
            Some((design, fit)) => build_controls(&spec, fit, &subrows(design, &rows), k)?,
        };
        let fit = fit_outcome(&y, &x, &controls, &spec)?;
        reports.push(CategoryReport { category: k, fit });
    }
    Ok(reports)
}

pub struct PipelineBootstrap {
    pub point: Vec<CategoryReport>,
    /// Per category (1..=K) and x-coefficient: SD of the bootstrap estimates.
    pub boot_se: Vec<Vec<f64>>,
    pub b: usize,
    pub failed: usize,
}

fn resample(ds: &Dataset, rng: &mut ChaCha12Rng) -> Dataset {
    let n = ds.n();
    let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
    Dataset {
        names: ds.names.clone(),
        kinds: ds.kinds.clone(),
        x: subrows(&ds.x, &idx),
        d: idx.iter().map(|&i| ds.d[i]).collect(),
        y: idx.iter().map(|&i| ds.y[i]).collect(),
        k_max: ds.k_max,
    }
}

/// Nonparametric pairs bootstrap of the full two-step pipeline.
pub fn bootstrap_dataset(
    ds: &Dataset,
    fc: &FitRecipe,
    b: usize,
    seed: u64,
) -> Result<PipelineBootstrap> {
    if b < 2 {
        return Err(Error::InvalidArgument("bootstrap requires B >= 2".into()));
    }
    let point = fit_dataset(ds, fc)?;
    let draws: Vec<Option<Vec<Vec<f64>>>> = (0..b as u64)
        .into_par_iter()
        .map(|bi| {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            rng.set_stream(bi + 1);
            let rs = resample(ds, &mut rng);
            let fits = fit_dataset(&rs, fc).ok()?;
            Some(fits.iter().map(|r| r.fit.beta.iter().cloned().collect()).collect())
        })
        .collect();
    let ok: Vec<&Vec<Vec<f64>>> = draws.iter().filter_map(|d| d.as_ref()).collect();
    let failed = b - ok.len();
    if ok.len() < 2 {
        return Err(Error::TooManyFailures { rate: 1.0, failed, total: b });
    }
    let m = ok.len() as f64;
    let mut boot_se = Vec::with_capacity(point.len());
    for (ki, rep) in point.iter().enumerate() {
        let d_x = rep.fit.beta.len();
        let mut per = Vec::with_capacity(d_x);
        for j in 0..d_x {
            let vals: Vec<f64> = ok.iter().map(|d| d[ki][j]).collect();
            let mean = vals.iter().sum::<f64>() / m;
            per.push((vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0)).sqrt());
        }
        boot_se.push(per);
    }
    Ok(PipelineBootstrap { point, boot_se, b, failed })
}
