//! Dense row-major helpers shared by the model and the losses.
//!
//! All arithmetic is `f64` and every reduction runs left to right in index
//! order, so identical inputs give bit-identical outputs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeededRng;

pub const DEFAULT_EPS: f64 = 1e-8;

/// Row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MatRepr", into = "MatRepr")]
pub struct Mat {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct MatRepr {
    shape: [usize; 2],
    values: Vec<f64>,
}

impl TryFrom<MatRepr> for Mat {
    type Error = Error;
    fn try_from(r: MatRepr) -> Result<Self> {
        Mat::new(r.shape[0], r.shape[1], r.values)
    }
}

impl From<Mat> for MatRepr {
    fn from(m: Mat) -> Self {
        MatRepr {
            shape: [m.rows, m.cols],
            values: m.values,
        }
    }
}

impl Mat {
    /// Checked constructor: length must be `rows * cols` and every value finite.
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::shape(
                "Mat::new",
                format!("{} values for {rows}x{cols}", values.len()),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Mat::new"));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.values[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::shape("Mat::from_rows", "ragged rows"));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn gaussian(rows: usize, cols: usize, std: f64, rng: &mut SeededRng) -> Self {
        Self {
            rows,
            cols,
            values: rng.gaussian_vec(rows * cols, std),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.values[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact(0) panics, so guard the degenerate width
        self.values.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    fn same_shape(&self, other: &Mat, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.shape(), other.shape()),
            ));
        }
        Ok(())
    }

    pub fn add(&self, other: &Mat) -> Result<Mat> {
        self.same_shape(other, "Mat::add")?;
        Ok(self.zip_map(other, |a, b| a + b))
    }

    pub fn sub(&self, other: &Mat) -> Result<Mat> {
        self.same_shape(other, "Mat::sub")?;
        Ok(self.zip_map(other, |a, b| a - b))
    }

    fn zip_map(&self, other: &Mat, f: impl Fn(f64, f64) -> f64) -> Mat {
        Mat {
            rows: self.rows,
            cols: self.cols,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Mat {
        Mat {
            rows: self.rows,
            cols: self.cols,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, s: f64) -> Mat {
        self.map(|v| v * s)
    }

    /// `self · other`
    pub fn matmul(&self, other: &Mat) -> Result<Mat> {
        if self.cols != other.rows {
            return Err(Error::shape(
                "matmul",
                format!("{:?} x {:?}", self.shape(), other.shape()),
            ));
        }
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let a = self.row(i);
            let o = out.row_mut(i);
            for (k, &aik) in a.iter().enumerate() {
                let b = &other.values[k * other.cols..(k + 1) * other.cols];
                for (oj, &bkj) in o.iter_mut().zip(b) {
                    *oj += aik * bkj;
                }
            }
        }
        Ok(out)
    }

    /// `self · otherᵀ`
    pub fn matmul_t(&self, other: &Mat) -> Result<Mat> {
        if self.cols != other.cols {
            return Err(Error::shape(
                "matmul_t",
                format!("{:?} x {:?}ᵀ", self.shape(), other.shape()),
            ));
        }
        let mut out = Mat::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            for j in 0..other.rows {
                out.values[i * other.rows + j] = dot(self.row(i), other.row(j));
            }
        }
        Ok(out)
    }

    pub fn transpose(&self) -> Mat {
        let mut out = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.values[j * self.rows + i] = self.get(i, j);
            }
        }
        out
    }

    /// Columns `[start, start + width)` as a new matrix.
    pub fn col_slice(&self, start: usize, width: usize) -> Mat {
        let mut values = Vec::with_capacity(self.rows * width);
        for r in self.iter_rows() {
            values.extend_from_slice(&r[start..start + width]);
        }
        Mat {
            rows: self.rows,
            cols: width,
            values,
        }
    }

    /// Horizontal concatenation of equally tall matrices.
    pub fn hcat(parts: &[Mat]) -> Result<Mat> {
        let rows = parts.first().map_or(0, |m| m.rows);
        if parts.iter().any(|m| m.rows != rows) {
            return Err(Error::shape("hcat", "row counts differ"));
        }
        let cols = parts.iter().map(|m| m.cols).sum();
        let mut values = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for m in parts {
                values.extend_from_slice(m.row(r));
            }
        }
        Ok(Mat { rows, cols, values })
    }

    /// Selects rows by index, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Mat {
        let mut values = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            values.extend_from_slice(self.row(i));
        }
        Mat {
            rows: idx.len(),
            cols: self.cols,
            values,
        }
    }
}

/// Three-way tensor with layout `(d0, d1, d2)` row-major; used for `P × L × D`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CubeRepr", into = "CubeRepr")]
pub struct Cube {
    dims: [usize; 3],
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CubeRepr {
    shape: [usize; 3],
    values: Vec<f64>,
}

impl TryFrom<CubeRepr> for Cube {
    type Error = Error;
    fn try_from(r: CubeRepr) -> Result<Self> {
        Cube::new(r.shape, r.values)
    }
}

impl From<Cube> for CubeRepr {
    fn from(c: Cube) -> Self {
        CubeRepr {
            shape: c.dims,
            values: c.values,
        }
    }
}

impl Cube {
    pub fn new(dims: [usize; 3], values: Vec<f64>) -> Result<Self> {
        if values.len() != dims.iter().product::<usize>() {
            return Err(Error::shape(
                "Cube::new",
                format!("{} values for {dims:?}", values.len()),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Cube::new"));
        }
        Ok(Self { dims, values })
    }

    pub fn zeros(dims: [usize; 3]) -> Self {
        Self {
            dims,
            values: vec![0.0; dims.iter().product()],
        }
    }

    pub fn gaussian(dims: [usize; 3], std: f64, rng: &mut SeededRng) -> Self {
        Self {
            dims,
            values: rng.gaussian_vec(dims.iter().product(), std),
        }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[(i * self.dims[1] + j) * self.dims[2] + k]
    }

    pub fn vector(&self, i: usize, j: usize) -> &[f64] {
        let d = self.dims[2];
        let start = (i * self.dims[1] + j) * d;
        &self.values[start..start + d]
    }

    pub fn vector_mut(&mut self, i: usize, j: usize) -> &mut [f64] {
        let d = self.dims[2];
        let start = (i * self.dims[1] + j) * d;
        &mut self.values[start..start + d]
    }

    /// Flattens the two leading axes: `(d0·d1) × d2`, row `i·d1 + j`.
    pub fn flatten(&self) -> Mat {
        Mat {
            rows: self.dims[0] * self.dims[1],
            cols: self.dims[2],
            values: self.values.clone(),
        }
    }

    /// Inverse of [`Cube::flatten`].
    pub fn from_flat(m: Mat, d0: usize, d1: usize) -> Result<Cube> {
        if m.rows != d0 * d1 {
            return Err(Error::shape(
                "Cube::from_flat",
                format!("{} rows for {d0}x{d1}", m.rows),
            ));
        }
        Ok(Cube {
            dims: [d0, d1, m.cols],
            values: m.values,
        })
    }

    /// Slice along the middle axis: `d0 × d2` at index `j`.
    pub fn slice_mid(&self, j: usize) -> Mat {
        let mut values = Vec::with_capacity(self.dims[0] * self.dims[2]);
        for i in 0..self.dims[0] {
            values.extend_from_slice(self.vector(i, j));
        }
        Mat {
            rows: self.dims[0],
            cols: self.dims[2],
            values,
        }
    }

    /// `(d1 × d2)` matrix for leading index `i`.
    pub fn slab(&self, i: usize) -> Mat {
        let n = self.dims[1] * self.dims[2];
        Mat {
            rows: self.dims[1],
            cols: self.dims[2],
            values: self.values[i * n..(i + 1) * n].to_vec(),
        }
    }

    pub fn add(&self, other: &Cube) -> Result<Cube> {
        if self.dims != other.dims {
            return Err(Error::shape(
                "Cube::add",
                format!("{:?} vs {:?}", self.dims, other.dims),
            ));
        }
        Ok(Cube {
            dims: self.dims,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + b)
                .collect(),
        })
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + x * y)
}

pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// `v / (‖v‖₂ + eps)`. The zero vector maps to itself.
pub fn l2_normalize(v: &[f64], eps: f64) -> Result<Vec<f64>> {
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::InvalidArgument(format!("eps must be > 0, got {eps}")));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("l2_normalize"));
    }
    let denom = norm(v) + eps;
    Ok(v.iter().map(|x| x / denom).collect())
}

/// Row-wise max-shifted softmax.
pub fn softmax_rows(m: &Mat) -> Mat {
    let mut out = m.clone();
    for r in 0..out.rows {
        softmax_in_place(out.row_mut(r));
    }
    out
}

pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in row.iter_mut() {
        *x /= sum;
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Single-head scaled dot-product attention of `q` over `(k, v)`.
pub fn cross_attention(q: &Mat, k: &Mat, v: &Mat, scale: f64) -> Result<(Mat, Mat)> {
    if q.cols != k.cols {
        return Err(Error::shape(
            "cross_attention",
            format!("query width {} vs key width {}", q.cols, k.cols),
        ));
    }
    if k.rows != v.rows {
        return Err(Error::shape(
            "cross_attention",
            format!("{} keys vs {} values", k.rows, v.rows),
        ));
    }
    if k.rows == 0 {
        return Err(Error::shape("cross_attention", "no keys"));
    }
    let weights = softmax_rows(&q.matmul_t(k)?.scale(scale));
    let out = weights.matmul(v)?;
    Ok((out, weights))
}

pub fn default_scale(d: usize) -> f64 {
    1.0 / (d as f64).sqrt()
}

/// Projection matrices for multi-head attention. All are `D × D`; heads split
/// the projected width into contiguous column blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionParams {
    pub heads: usize,
    pub w_q: Mat,
    pub w_k: Mat,
    pub w_v: Mat,
    pub w_o: Mat,
}

impl AttentionParams {
    pub fn init(d: usize, heads: usize, std: f64, rng: &mut SeededRng) -> Self {
        Self {
            heads,
            w_q: Mat::gaussian(d, d, std, rng),
            w_k: Mat::gaussian(d, d, std, rng),
            w_v: Mat::gaussian(d, d, std, rng),
            w_o: Mat::gaussian(d, d, std, rng),
        }
    }

    pub fn identity(d: usize, heads: usize) -> Self {
        Self {
            heads,
            w_q: Mat::identity(d),
            w_k: Mat::identity(d),
            w_v: Mat::identity(d),
            w_o: Mat::identity(d),
        }
    }

    pub fn dim(&self) -> usize {
        self.w_q.rows
    }
}

/// Multi-head cross attention: project, attend per head with scale
/// `1/sqrt(D/heads)`, concatenate heads, project out.
pub fn multihead_cross_attention(
    params: &AttentionParams,
    q: &Mat,
    k: &Mat,
    v: &Mat,
) -> Result<(Mat, Vec<Mat>)> {
    let d = params.dim();
    if params.heads == 0 || !d.is_multiple_of(params.heads) {
        return Err(Error::InvalidArgument(format!(
            "width {d} not divisible by {} heads",
            params.heads
        )));
    }
    let qp = q.matmul(&params.w_q)?;
    let kp = k.matmul(&params.w_k)?;
    let vp = v.matmul(&params.w_v)?;
    let dh = d / params.heads;
    let scale = default_scale(dh);
    let mut outs = Vec::with_capacity(params.heads);
    let mut weights = Vec::with_capacity(params.heads);
    for h in 0..params.heads {
        let (o, w) = cross_attention(
            &qp.col_slice(h * dh, dh),
            &kp.col_slice(h * dh, dh),
            &vp.col_slice(h * dh, dh),
            scale,
        )?;
        outs.push(o);
        weights.push(w);
    }
    let out = Mat::hcat(&outs)?.matmul(&params.w_o)?;
    Ok((out, weights))
}

/// Mean of per-head weights; convenient for exporting a single map per stage.
pub fn mean_heads(weights: &[Mat]) -> Mat {
    let mut acc = weights[0].clone();
    for w in &weights[1..] {
        for (a, b) in acc.values.iter_mut().zip(&w.values) {
            *a += b;
        }
    }
    acc.scale(1.0 / weights.len() as f64)
}

/// Affine map `x · W + b` applied row-wise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: Mat,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn init(d_in: usize, d_out: usize, std: f64, rng: &mut SeededRng) -> Self {
        Self {
            weight: Mat::gaussian(d_in, d_out, std, rng),
            bias: vec![0.0; d_out],
        }
    }

    pub fn forward(&self, x: &Mat) -> Result<Mat> {
        let mut y = x.matmul(&self.weight)?;
        for r in 0..y.rows {
            for (v, b) in y.row_mut(r).iter_mut().zip(&self.bias) {
                *v += b;
            }
        }
        Ok(y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(d: usize) -> Self {
        Self {
            gamma: vec![1.0; d],
            beta: vec![0.0; d],
            eps: 1e-5,
        }
    }

    pub fn forward(&self, x: &Mat) -> Result<Mat> {
        if x.cols != self.gamma.len() {
            return Err(Error::shape(
                "LayerNorm",
                format!("width {} vs {}", x.cols, self.gamma.len()),
            ));
        }
        let mut y = x.clone();
        let n = x.cols as f64;
        for r in 0..y.rows {
            let row = y.row_mut(r);
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let inv = 1.0 / (var + self.eps).sqrt();
            for ((v, g), b) in row.iter_mut().zip(&self.gamma).zip(&self.beta) {
                *v = (*v - mean) * inv * g + b;
            }
        }
        Ok(y)
    }
}
