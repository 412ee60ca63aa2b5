//! Clamped B-spline bases: univariate evaluation via Cox-de Boor and
//! tensor products, with quantile knot placement.

use crate::error::{Error, Result};
use nalgebra::DMatrix;

/// Clamped knot vector of a univariate B-spline basis of order `r`
/// (degree `r - 1`). Basis dimension is `interior.len() + r`.
#[derive(Debug, Clone, PartialEq)]
pub struct KnotVector {
    pub order: usize,
    pub lo: f64,
    pub hi: f64,
    pub interior: Vec<f64>,
    /// Number of duplicate quantiles collapsed during placement.
    pub collapsed: usize,
}

impl KnotVector {
    pub fn new(order: usize, lo: f64, hi: f64, interior: Vec<f64>) -> Result<Self> {
        if order < 1 {
            return Err(Error::InvalidArgument("order must be >= 1".into()));
        }
        if lo.partial_cmp(&hi) != Some(std::cmp::Ordering::Less) {
            return Err(Error::DegenerateSupport);
        }
        let ok = interior.windows(2).all(|w| w[0] < w[1])
            && interior.iter().all(|&t| lo < t && t < hi);
        if !ok {
            return Err(Error::InvalidArgument(
                "interior knots must be strictly increasing inside (lo, hi)".into(),
            ));
        }
        Ok(KnotVector { order, lo, hi, interior, collapsed: 0 })
    }

    pub fn dim(&self) -> usize {
        self.interior.len() + self.order
    }

    /// Full clamped sequence: lo repeated `order` times, interior, hi repeated `order` times.
    pub fn full(&self) -> Vec<f64> {
        let mut t = Vec::with_capacity(2 * self.order + self.interior.len());
        t.extend(std::iter::repeat_n(self.lo, self.order));
        t.extend_from_slice(&self.interior);
        t.extend(std::iter::repeat_n(self.hi, self.order));
        t
    }
}

/// Quantile knot placement on the sample support. Duplicate quantiles are
/// collapsed (dimension shrinks; count recorded on the returned knot vector).
pub fn place_knots(samples: &[f64], n_interior: usize, order: usize) -> Result<KnotVector> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("empty sample".into()));
    }
    let lo = samples.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if lo.partial_cmp(&hi) != Some(std::cmp::Ordering::Less) {
        return Err(Error::DegenerateSupport);
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut interior = Vec::with_capacity(n_interior);
    for t in 1..=n_interior {
        let q = quantile(&sorted, t as f64 / (n_interior as f64 + 1.0));
        if q > lo && q < hi && interior.last().is_none_or(|&last| q > last) {
            interior.push(q);
        }
    }
    let collapsed = n_interior - interior.len();
    let mut kv = KnotVector::new(order, lo, hi, interior)?;
    kv.collapsed = collapsed;
    Ok(kv)
}

/// Linear-interpolation quantile of pre-sorted data (type 7).
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = p * (n - 1) as f64;
    let i = h.floor() as usize;
    if i + 1 >= n {
        return sorted[n - 1];
    }
    sorted[i] + (h - i as f64) * (sorted[i + 1] - sorted[i])
}

/// Evaluate all basis functions at `s`. Points outside `[lo, hi]` are clamped
/// to the nearest boundary; returns whether clamping occurred.
pub fn bspline_row(kv: &KnotVector, s: f64) -> (Vec<f64>, bool) {
    let clamped = s < kv.lo || s > kv.hi;
    let s = s.clamp(kv.lo, kv.hi);
    let t = kv.full();
    let r = kv.order;
    let p = r - 1;
    let dim = kv.dim();
    // knot span: largest `span` in [p, dim-1] with t[span] <= s (< t[span+1] unless s == hi)
    let span = if s >= kv.hi {
        dim - 1
    } else {
        let mut lo_i = p;
        let mut hi_i = dim - 1;
        while lo_i < hi_i {
            let mid = (lo_i + hi_i).div_ceil(2);
            if t[mid] <= s {
                lo_i = mid;
            } else {
                hi_i = mid - 1;
            }
        }
        lo_i
    };
    // iterative Cox-de Boor (the NURBS-book basis-funs scheme)
    let mut nval = vec![0.0_f64; r];
    let mut left = vec![0.0_f64; r];
    let mut right = vec![0.0_f64; r];
    nval[0] = 1.0;
    for j in 1..r {
        left[j] = s - t[span + 1 - j];
        right[j] = t[span + j] - s;
        let mut saved = 0.0;
        for i in 0..j {
            let temp = nval[i] / (right[i + 1] + left[j - i]);
            nval[i] = saved + right[i + 1] * temp;
            saved = left[j - i] * temp;
        }
        nval[j] = saved;
    }
    let mut row = vec![0.0; dim];
    row[span - p..=span].copy_from_slice(&nval);
    (row, clamped)
}

/// Flattened outer product of univariate rows, first-dimension-major.
pub fn tensor_row(rows: &[Vec<f64>]) -> Result<Vec<f64>> {
    if rows.is_empty() {
        return Err(Error::InvalidArgument("tensor_row: empty row list".into()));
    }
    let mut out = rows[0].clone();
    for r in &rows[1..] {
        let mut next = Vec::with_capacity(out.len() * r.len());
        for &a in &out {
            for &b in r {
                next.push(a * b);
            }
        }
        out = next;
    }
    Ok(out)
}

/// Per-dimension knot vectors of a tensor-product basis (L in 1..=3).
#[derive(Debug, Clone)]
pub struct TensorSpec {
    pub dims: Vec<KnotVector>,
}

impl TensorSpec {
    pub fn new(dims: Vec<KnotVector>) -> Result<Self> {
        if dims.is_empty() || dims.len() > 3 {
            return Err(Error::InvalidArgument("tensor spec needs 1..=3 dimensions".into()));
        }
        Ok(TensorSpec { dims })
    }

    pub fn dim(&self) -> usize {
        self.dims.iter().map(|kv| kv.dim()).product()
    }

    pub fn row(&self, s: &[f64]) -> Result<Vec<f64>> {
        if s.len() != self.dims.len() {
            return Err(Error::DimensionMismatch { expected: self.dims.len(), got: s.len() });
        }
        let rows: Vec<Vec<f64>> =
            self.dims.iter().zip(s).map(|(kv, &si)| bspline_row(kv, si).0).collect();
        tensor_row(&rows)
    }
}

/// Default interior-knot count: `max(2, ceil(n^0.2))` for univariate control
/// indices and `ceil(n^0.15)` per dimension for bivariate ones (cubic order 4).
pub fn default_interior_knots(n: usize, l: usize) -> usize {
    let n = n as f64;
    if l <= 1 {
        (n.powf(0.2).ceil() as usize).max(2)
    } else {
        n.powf(0.15).ceil() as usize
    }
}

pub const DEFAULT_ORDER: usize = 4;

/// Evaluate a univariate block over a sample; returns the design block and the
/// number of clamped evaluations.
pub fn eval_block(kv: &KnotVector, samples: &[f64]) -> (DMatrix<f64>, usize) {
    let mut m = DMatrix::zeros(samples.len(), kv.dim());
    let mut clamped = 0;
    for (i, &s) in samples.iter().enumerate() {
        let (row, cl) = bspline_row(kv, s);
        if cl {
            clamped += 1;
        }
        for (j, v) in row.into_iter().enumerate() {
            m[(i, j)] = v;
        }
    }
    (m, clamped)
}

/// Evaluate a tensor block over aligned samples (columns of `cols`).
pub fn eval_tensor_block(spec: &TensorSpec, cols: &[&[f64]]) -> Result<DMatrix<f64>> {
    let n = cols.first().map_or(0, |c| c.len());
    if cols.len() != spec.dims.len() || cols.iter().any(|c| c.len() != n) {
        return Err(Error::DimensionMismatch { expected: spec.dims.len(), got: cols.len() });
    }
    let mut m = DMatrix::zeros(n, spec.dim());
    let mut point = vec![0.0; cols.len()];
    for i in 0..n {
        for (d, c) in cols.iter().enumerate() {
            point[d] = c[i];
        }
        let row = spec.row(&point)?;
        for (j, v) in row.into_iter().enumerate() {
            m[(i, j)] = v;
        }
    }
    Ok(m)
}
