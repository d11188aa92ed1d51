//! Data ingestion and synthetic factor-model generation.
//!
//! Data matrices are centered with the sample mean and the covariance is the
//! biased estimator `S = (1/n) XᵀX`. Large data matrices (more than
//! [`MATERIALIZE_MAX_P`] columns) are kept in factored form and every product
//! with `S` goes through `X`.
//!
//! Synthetic data use a ChaCha8 stream seeded from the 64-bit seed in
//! [`SyntheticSpec`]. Normal deviates come from the Marsaglia polar method and
//! exponential deviates from the inverse CDF `−m·ln(1−U)`, so a seed reproduces the
//! same bits on every platform.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, FaError, Result};

/// Data matrices with at most this many columns get a dense `S`.
pub const MATERIALIZE_MAX_P: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputMode {
    DataMatrix,
    CovarianceMatrix,
}

/// The sample covariance, held either as a centered data matrix, a dense
/// covariance, or both.
#[derive(Debug, Clone)]
pub struct CovarianceInput {
    mode: InputMode,
    x: Option<DMatrix<f64>>,
    s: Option<DMatrix<f64>>,
    diag: DVector<f64>,
    n: Option<usize>,
}

impl CovarianceInput {
    /// Centers the columns of `x` and builds `S` when `p <= MATERIALIZE_MAX_P`.
    pub fn from_data(x: DMatrix<f64>) -> Result<Self> {
        let materialize = x.ncols() <= MATERIALIZE_MAX_P;
        Self::from_data_with(x, materialize)
    }

    /// Like [`from_data`](Self::from_data) with explicit control over whether the
    /// dense `p×p` covariance is formed.
    pub fn from_data_with(mut x: DMatrix<f64>, materialize: bool) -> Result<Self> {
        let (n, p) = x.shape();
        if n == 0 || p == 0 {
            return domain("data matrix must have at least one row and one column");
        }
        if x.iter().any(|v| !v.is_finite()) {
            return domain("data matrix contains non-finite values");
        }
        let nf = n as f64;
        for mut col in x.column_iter_mut() {
            let mean = col.sum() / nf;
            col.add_scalar_mut(-mean);
        }
        let diag = DVector::from_iterator(p, x.column_iter().map(|c| c.norm_squared() / nf));
        if let Some(j) = diag.iter().position(|&d| d <= 0.0) {
            return domain(format!("column {j} has zero variance"));
        }
        let s = if materialize {
            let mut s = x.tr_mul(&x);
            s /= nf;
            Some(s)
        } else {
            None
        };
        Ok(Self {
            mode: InputMode::DataMatrix,
            x: Some(x),
            s,
            diag,
            n: Some(n),
        })
    }

    /// Wraps a covariance matrix. The matrix is symmetrized; `n` is optional.
    pub fn from_covariance(s: DMatrix<f64>, n: Option<usize>) -> Result<Self> {
        if !s.is_square() {
            return domain(format!(
                "covariance matrix must be square, got {}x{}",
                s.nrows(),
                s.ncols()
            ));
        }
        if s.nrows() == 0 {
            return domain("covariance matrix is empty");
        }
        if s.iter().any(|v| !v.is_finite()) {
            return domain("covariance matrix contains non-finite values");
        }
        if n == Some(0) {
            return domain("sample count must be at least 1");
        }
        let s = (&s + s.transpose()) * 0.5;
        let diag = s.diagonal();
        if let Some(j) = diag.iter().position(|&d| d <= 0.0) {
            return domain(format!("diagonal entry {j} is not strictly positive"));
        }
        Ok(Self {
            mode: InputMode::CovarianceMatrix,
            x: None,
            s: Some(s),
            diag,
            n,
        })
    }

    pub fn mode(&self) -> InputMode {
        self.mode
    }

    pub fn p(&self) -> usize {
        self.diag.len()
    }

    /// Sample count, absent when only a covariance was supplied.
    pub fn n(&self) -> Option<usize> {
        self.n
    }

    /// Centered data matrix, when available.
    pub fn data(&self) -> Option<&DMatrix<f64>> {
        self.x.as_ref()
    }

    /// Dense covariance, when materialized.
    pub fn covariance(&self) -> Option<&DMatrix<f64>> {
        self.s.as_ref()
    }

    /// The diagonal `sᵢᵢ`, always available.
    pub fn diag(&self) -> &DVector<f64> {
        &self.diag
    }

    /// Dense `S`, formed from `X` if it was not materialized.
    pub fn covariance_dense(&self) -> DMatrix<f64> {
        match (&self.s, &self.x) {
            (Some(s), _) => s.clone(),
            (None, Some(x)) => x.tr_mul(x) / x.nrows() as f64,
            (None, None) => unreachable!("covariance input holds neither X nor S"),
        }
    }

    /// `S · m` without forming `S` when only `X` is held.
    pub fn mul_cov(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        match (&self.s, &self.x) {
            (Some(s), _) => s * m,
            (None, Some(x)) => {
                let xm = x * m;
                x.tr_mul(&xm) / x.nrows() as f64
            }
            (None, None) => unreachable!("covariance input holds neither X nor S"),
        }
    }
}

/// Reads a comma-separated numeric matrix.
pub fn read_matrix_csv(path: impl AsRef<Path>, has_header: bool) -> Result<DMatrix<f64>> {
    let file = File::open(path.as_ref())?;
    parse_matrix_csv(BufReader::new(file), has_header)
}

pub(crate) fn parse_matrix_csv<R: std::io::Read>(reader: R, has_header: bool) -> Result<DMatrix<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut values = Vec::new();
    let mut ncols = None;
    let mut nrows = 0usize;
    for (row, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| FaError::Parse(e.to_string()))?;
        if record.len() == 1 && record.get(0) == Some("") {
            continue;
        }
        match ncols {
            None => ncols = Some(record.len()),
            Some(c) if c != record.len() => {
                return Err(FaError::Parse(format!(
                    "row {row} has {} fields, expected {c}",
                    record.len()
                )))
            }
            _ => {}
        }
        for (col, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                FaError::Parse(format!("row {row}, column {col}: not a number: {field:?}"))
            })?;
            values.push(v);
        }
        nrows += 1;
    }
    let ncols = ncols.ok_or_else(|| FaError::Parse("no data rows".into()))?;
    Ok(DMatrix::from_row_slice(nrows, ncols, &values))
}

/// Loads a CSV as either a data matrix (centered on load) or a covariance matrix.
pub fn load_csv(path: impl AsRef<Path>, has_header: bool, mode: InputMode) -> Result<CovarianceInput> {
    let m = read_matrix_csv(path, has_header)?;
    match mode {
        InputMode::DataMatrix => CovarianceInput::from_data(m),
        InputMode::CovarianceMatrix => CovarianceInput::from_covariance(m, None),
    }
}

/// Writes a matrix with shortest round-trip decimal formatting.
pub fn write_matrix_csv(path: impl AsRef<Path>, m: &DMatrix<f64>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    for row in m.row_iter() {
        let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the authoritative representation: `X` for data inputs, `S` otherwise.
pub fn save_csv(path: impl AsRef<Path>, cov: &CovarianceInput) -> Result<()> {
    match cov.mode {
        InputMode::DataMatrix => write_matrix_csv(path, cov.x.as_ref().expect("data mode holds X")),
        InputMode::CovarianceMatrix => write_matrix_csv(path, cov.s.as_ref().expect("covariance mode holds S")),
    }
}

/// Parameters of the synthetic factor model `Σ⁰ = Ψ⁰ + L⁰L⁰ᵀ`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub p: usize,
    pub n: usize,
    pub r0: usize,
    pub loading_mean: f64,
    pub loading_var: f64,
    pub uniqueness_mean: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.p == 0 || self.n == 0 || self.r0 == 0 {
            return domain("p, n and r0 must be positive");
        }
        if self.r0 >= self.p {
            return domain(format!("r0 = {} must be smaller than p = {}", self.r0, self.p));
        }
        if !(self.loading_var > 0.0) || !self.loading_var.is_finite() {
            return domain("loading variance must be positive");
        }
        if !(self.uniqueness_mean > 0.0) || !self.uniqueness_mean.is_finite() {
            return domain("uniqueness mean must be positive");
        }
        if !self.loading_mean.is_finite() {
            return domain("loading mean must be finite");
        }
        Ok(())
    }
}

/// Generating parameters of a synthetic dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub psi0: DVector<f64>,
    pub l0: DMatrix<f64>,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
struct GroundTruthJson {
    psi0: Vec<f64>,
    #[serde(rename = "L0")]
    l0: Vec<Vec<f64>>,
    seed: u64,
}

impl GroundTruth {
    pub fn to_json(&self) -> serde_json::Value {
        let doc = GroundTruthJson {
            psi0: self.psi0.iter().copied().collect(),
            l0: matrix_rows(&self.l0),
            seed: self.seed,
        };
        serde_json::to_value(doc).expect("ground truth serializes")
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        let doc: GroundTruthJson = serde_json::from_value(value.clone())?;
        let p = doc.psi0.len();
        let r0 = doc.l0.first().map_or(0, Vec::len);
        if doc.l0.len() != p || doc.l0.iter().any(|row| row.len() != r0) {
            return Err(FaError::Parse("L0 must be a p x r0 array".into()));
        }
        let flat: Vec<f64> = doc.l0.into_iter().flatten().collect();
        Ok(Self {
            psi0: DVector::from_vec(doc.psi0),
            l0: DMatrix::from_row_slice(p, r0, &flat),
            seed: doc.seed,
        })
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        let mut sigma = &self.l0 * self.l0.transpose();
        for (i, psi) in self.psi0.iter().enumerate() {
            sigma[(i, i)] += psi;
        }
        sigma
    }
}

pub(crate) fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Normal and exponential deviates over a seeded ChaCha8 stream.
pub struct SeededSampler {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl SeededSampler {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            spare: None,
        }
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Standard normal by the Marsaglia polar method.
    pub fn standard_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        loop {
            let u = 2.0 * self.uniform() - 1.0;
            let v = 2.0 * self.uniform() - 1.0;
            let s = u * u + v * v;
            if s > 0.0 && s < 1.0 {
                let factor = (-2.0 * s.ln() / s).sqrt();
                self.spare = Some(v * factor);
                return u * factor;
            }
        }
    }

    pub fn normal(&mut self, mean: f64, sd: f64) -> f64 {
        mean + sd * self.standard_normal()
    }

    pub fn exponential(&mut self, mean: f64) -> f64 {
        -mean * (1.0 - self.uniform()).ln()
    }
}

/// Draws `L⁰`, `Ψ⁰` and `n` rows of `N(0, Ψ⁰ + L⁰L⁰ᵀ)`, returned centered.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(CovarianceInput, GroundTruth)> {
    spec.validate()?;
    let SyntheticSpec { p, n, r0, .. } = *spec;
    let mut rng = SeededSampler::new(spec.seed);
    let sd = spec.loading_var.sqrt();

    let mut l0 = DMatrix::zeros(p, r0);
    for i in 0..p {
        for k in 0..r0 {
            l0[(i, k)] = rng.normal(spec.loading_mean, sd);
        }
    }
    let psi0 = DVector::from_fn(p, |_, _| rng.exponential(spec.uniqueness_mean));
    let psi_sd = psi0.map(f64::sqrt);

    let mut x = DMatrix::zeros(n, p);
    let mut z = DVector::zeros(r0);
    for row in 0..n {
        for k in 0..r0 {
            z[k] = rng.standard_normal();
        }
        let common = &l0 * &z;
        for j in 0..p {
            x[(row, j)] = common[j] + psi_sd[j] * rng.standard_normal();
        }
    }

    let cov = CovarianceInput::from_data(x)?;
    Ok((cov, GroundTruth { psi0, l0, seed: spec.seed }))
}
