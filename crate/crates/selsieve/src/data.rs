//! Dataset ingestion/validation from CSV and first-stage sieve design
//! construction from raw covariates.

use crate::basis::{eval_block, eval_tensor_block, place_knots, TensorSpec};
use crate::error::{Error, Result};
use crate::secondstage::SieveSpec;
use nalgebra::DMatrix;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    Continuous,
    /// A one-hot level of a categorical source column (enters linearly).
    Categorical,
}

/// Validated dataset: covariates (categoricals one-hot expanded, first level
/// dropped), selection category, and outcome present iff selected.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub names: Vec<String>,
    pub kinds: Vec<VarKind>,
    pub x: DMatrix<f64>,
    pub d: Vec<usize>,
    pub y: Vec<Option<f64>>,
    pub k_max: usize,
}

/// Column-role map for loading: the D column, the Y column, and which of the
/// remaining covariate columns are categorical.
#[derive(Debug, Clone)]
pub struct Schema {
    pub d: String,
    pub y: String,
    pub categorical: Vec<String>,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.d.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("non-finite covariate".into()));
        }
        let mut bad_rows = Vec::new();
        for i in 0..self.n() {
            let present = self.y[i].is_some();
            if present != (self.d[i] >= 1) {
                bad_rows.push(i + 1);
            }
        }
        if !bad_rows.is_empty() {
            return Err(Error::Validation(format!(
                "Y presence must match D >= 1; offending rows: {bad_rows:?}"
            )));
        }
        let mut seen = vec![false; self.k_max + 1];
        for &di in &self.d {
            seen[di] = true;
        }
        if let Some(miss) = seen.iter().position(|s| !s) {
            return Err(Error::MissingCategory(miss));
        }
        Ok(())
    }

    /// Indices of rows with D = k.
    pub fn rows_for(&self, k: usize) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.d[i] == k).collect()
    }
}

/// Load and validate a CSV dataset. Header row required; D integer-coded;
/// missing Y encoded as an empty field.
pub fn load_dataset<P: AsRef<Path>>(path: P, schema: &Schema) -> Result<Dataset> {
    let path_str = path.as_ref().display().to_string();
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path.as_ref())
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => Error::Io {
                path: path_str.clone(),
                source: std::io::Error::new(std::io::ErrorKind::NotFound, "cannot open"),
            },
            _ => Error::Csv { path: path_str.clone(), source: e },
        })?;
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Csv { path: path_str.clone(), source: e })?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    let d_idx = headers
        .iter()
        .position(|h| *h == schema.d)
        .ok_or_else(|| Error::Validation(format!("D column '{}' not found", schema.d)))?;
    let y_idx = headers
        .iter()
        .position(|h| *h == schema.y)
        .ok_or_else(|| Error::Validation(format!("Y column '{}' not found", schema.y)))?;
    let cov_idx: Vec<usize> =
        (0..headers.len()).filter(|&j| j != d_idx && j != y_idx).collect();
    for c in &schema.categorical {
        if !headers.contains(c) {
            return Err(Error::Validation(format!("categorical column '{c}' not found")));
        }
    }

    let mut d = Vec::new();
    let mut y = Vec::new();
    let mut raw_cols: Vec<Vec<f64>> = vec![Vec::new(); cov_idx.len()];
    for (row_no, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Csv { path: path_str.clone(), source: e })?;
        let dv: i64 = rec[d_idx]
            .trim()
            .parse()
            .map_err(|_| Error::Validation(format!("row {}: D not an integer", row_no + 1)))?;
        if dv < 0 {
            return Err(Error::Validation(format!("row {}: D negative", row_no + 1)));
        }
        d.push(dv as usize);
        let yf = rec[y_idx].trim();
        if yf.is_empty() {
            y.push(None);
        } else {
            let yv: f64 = yf
                .parse()
                .map_err(|_| Error::Validation(format!("row {}: Y not numeric", row_no + 1)))?;
            y.push(Some(yv));
        }
        for (slot, &j) in cov_idx.iter().enumerate() {
            let v: f64 = rec[j].trim().parse().map_err(|_| {
                Error::Validation(format!("row {}: covariate '{}' not numeric", row_no + 1, headers[j]))
            })?;
            raw_cols[slot].push(v);
        }
    }
    let n = d.len();
    if n == 0 {
        return Err(Error::Validation("empty dataset".into()));
    }
    let k_max = *d.iter().max().unwrap();

    // expand categoricals: one-hot with first (smallest) level dropped
    let mut names = Vec::new();
    let mut kinds = Vec::new();
    let mut cols: Vec<Vec<f64>> = Vec::new();
    for (slot, &j) in cov_idx.iter().enumerate() {
        let name = &headers[j];
        if schema.categorical.contains(name) {
            let mut levels: Vec<i64> = raw_cols[slot].iter().map(|&v| v as i64).collect();
            levels.sort_unstable();
            levels.dedup();
            for &lv in levels.iter().skip(1) {
                names.push(format!("{name}_{lv}"));
                kinds.push(VarKind::Categorical);
                cols.push(
                    raw_cols[slot].iter().map(|&v| if v as i64 == lv { 1.0 } else { 0.0 }).collect(),
                );
            }
        } else {
            names.push(name.clone());
            kinds.push(VarKind::Continuous);
            cols.push(raw_cols[slot].clone());
        }
    }
    let x = DMatrix::from_fn(n, cols.len(), |i, c| cols[c][i]);
    let ds = Dataset { names, kinds, x, d, y, k_max };
    ds.validate()?;
    Ok(ds)
}

/// Write a dataset back to CSV with the same conventions (for round-trips of
/// simulated data). One-hot columns are written as-is.
pub fn save_dataset<P: AsRef<Path>>(ds: &Dataset, path: P) -> Result<()> {
    let path_str = path.as_ref().display().to_string();
    let mut wtr = csv::Writer::from_path(path.as_ref()).map_err(|e| Error::Csv {
        path: path_str.clone(),
        source: e,
    })?;
    let mut header = vec!["D".to_string(), "Y".to_string()];
    header.extend(ds.names.iter().cloned());
    wtr.write_record(&header).map_err(|e| Error::Csv { path: path_str.clone(), source: e })?;
    for i in 0..ds.n() {
        let mut rec = vec![
            ds.d[i].to_string(),
            ds.y[i].map(|v| format!("{v:.17e}")).unwrap_or_default(),
        ];
        for j in 0..ds.x.ncols() {
            rec.push(format!("{:.17e}", ds.x[(i, j)]));
        }
        wtr.write_record(&rec).map_err(|e| Error::Csv { path: path_str.clone(), source: e })?;
    }
    wtr.flush().map_err(|e| Error::Io { path: path_str, source: e })?;
    Ok(())
}

/// First-stage sieve design: a univariate spline block per continuous column,
/// all pairwise tensor blocks among continuous columns, categorical one-hots
/// appended linearly. The partition-of-unity spline blocks span the constant,
/// so no explicit intercept column is added; downstream MLE fits drop exactly
/// collinear columns.
pub fn build_first_stage_design(ds: &Dataset, spec: &SieveSpec) -> Result<DMatrix<f64>> {
    build_design_from_columns(&column_views(ds), spec)
}

pub(crate) fn column_views(ds: &Dataset) -> Vec<(Vec<f64>, VarKind)> {
    (0..ds.x.ncols())
        .map(|j| (ds.x.column(j).iter().cloned().collect(), ds.kinds[j]))
        .collect()
}

pub fn build_design_from_columns(
    cols: &[(Vec<f64>, VarKind)],
    spec: &SieveSpec,
) -> Result<DMatrix<f64>> {
    let cont: Vec<&Vec<f64>> =
        cols.iter().filter(|(_, k)| *k == VarKind::Continuous).map(|(c, _)| c).collect();
    let cat: Vec<&Vec<f64>> =
        cols.iter().filter(|(_, k)| *k == VarKind::Categorical).map(|(c, _)| c).collect();
    if cont.is_empty() {
        return Err(Error::Validation(
            "nonparametric first stage requires at least one continuous covariate".into(),
        ));
    }
    let n = cont[0].len();
    let mut blocks: Vec<DMatrix<f64>> = Vec::new();
    let mut kvs = Vec::new();
    for (j, c) in cont.iter().enumerate() {
        let kv = place_knots(c, spec.interior_or_default(j, n), spec.order)?;
        let (b, _) = eval_block(&kv, c);
        blocks.push(b);
        kvs.push(kv);
    }
    for a in 0..cont.len() {
        for b in a + 1..cont.len() {
            let tspec = TensorSpec::new(vec![kvs[a].clone(), kvs[b].clone()])?;
            blocks.push(eval_tensor_block(&tspec, &[cont[a].as_slice(), cont[b].as_slice()])?);
        }
    }
    for c in cat {
        blocks.push(DMatrix::from_fn(n, 1, |i, _| c[i]));
    }
    let total: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut m = DMatrix::zeros(n, total);
    let mut off = 0;
    for b in blocks {
        m.view_mut((0, off), (n, b.ncols())).copy_from(&b);
        off += b.ncols();
    }
    Ok(m)
}

impl SieveSpec {
    pub(crate) fn interior_or_default(&self, dim_idx: usize, n: usize) -> usize {
        if dim_idx < self.interior.len() {
            self.interior[dim_idx]
        } else {
            crate::basis::default_interior_knots(n, 1)
        }
    }
}
