//! Random-matrix objects built from measurement windows.
//!
//! The transform chain mirrors the two analysis routes:
//!
//! ```text
//! ring:        X -> standardized X~ -> X_u = sqrt(X~ X~^T) U -> Z = prod X_u,i -> row-scaled Z~
//! covariance:  X -> standardized X~ -> M = X~ X~^T / T
//! ```
//!
//! `U` is a Haar unitary drawn from a seeded stream, so every chain is
//! reproducible from `(window, seed)`.

use faer::{c64, Mat, Side};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Rows whose variance falls below this fraction of their squared mean are
/// treated as constant.
const DEGENERATE_RELATIVE_VARIANCE: f64 = 1e-12;

/// Raw `N x T` slice of a measurement stream: rows are nodes, columns are
/// consecutive samples `t_start..=t_end`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementWindow {
    values: Mat<f64>,
    node_ids: Vec<String>,
    t_start: usize,
}

impl MeasurementWindow {
    pub fn new(values: Mat<f64>, node_ids: Vec<String>, t_start: usize) -> Result<Self> {
        let (n, t) = values.shape();
        if n < 2 || t < 2 {
            return Err(Error::InvalidWindow(format!(
                "need at least 2 nodes and 2 samples, got {n} x {t}"
            )));
        }
        if node_ids.len() != n {
            return Err(Error::InvalidWindow(format!(
                "{} node labels for {n} rows",
                node_ids.len()
            )));
        }
        for j in 0..t {
            for i in 0..n {
                if !values[(i, j)].is_finite() {
                    return Err(Error::InvalidWindow(format!(
                        "non-finite value at node {i}, sample {}",
                        t_start + j
                    )));
                }
            }
        }
        Ok(Self {
            values,
            node_ids,
            t_start,
        })
    }

    /// Builds a window from row vectors, labelling nodes `1..=N` and starting at
    /// sample 1.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let t = rows.first().map_or(0, Vec::len);
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != t) {
            return Err(Error::NonRectangular {
                row: i,
                expected: t,
                found: r.len(),
            });
        }
        let values = Mat::from_fn(n, t, |i, j| rows[i][j]);
        Self::new(values, default_labels(n), 1)
    }

    pub fn values(&self) -> &Mat<f64> {
        &self.values
    }

    pub fn node_ids(&self) -> &[String] {
        &self.node_ids
    }

    pub fn n_nodes(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.values.ncols()
    }

    pub fn t_start(&self) -> usize {
        self.t_start
    }

    pub fn t_end(&self) -> usize {
        self.t_start + self.n_samples() - 1
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        (0..self.n_samples()).map(|j| self.values[(i, j)]).collect()
    }

    /// Sub-window covering sample indices `t_lo..=t_hi`.
    pub fn span(&self, t_lo: usize, t_hi: usize) -> Result<Self> {
        if t_lo < self.t_start || t_hi > self.t_end() || t_hi < t_lo {
            return Err(Error::Shape(format!(
                "span [{t_lo}, {t_hi}] outside [{}, {}]",
                self.t_start,
                self.t_end()
            )));
        }
        let off = t_lo - self.t_start;
        let values = self
            .values
            .as_ref()
            .subcols(off, t_hi - t_lo + 1)
            .to_owned();
        Self::new(values, self.node_ids.clone(), t_lo)
    }

    /// Window restricted to the given row indices, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        if let Some(&bad) = rows.iter().find(|&&r| r >= self.n_nodes()) {
            return Err(Error::Shape(format!(
                "row {bad} out of range for {} nodes",
                self.n_nodes()
            )));
        }
        let values = Mat::from_fn(rows.len(), self.n_samples(), |i, j| {
            self.values[(rows[i], j)]
        });
        let ids = rows.iter().map(|&r| self.node_ids[r].clone()).collect();
        Self::new(values, ids, self.t_start)
    }
}

pub(crate) fn default_labels(n: usize) -> Vec<String> {
    (1..=n).map(|i| i.to_string()).collect()
}

/// Row-standardized window: each row has zero mean and unit population
/// variance.
#[derive(Debug, Clone)]
pub struct StandardizedMatrix {
    values: Mat<f64>,
    degenerate: Vec<usize>,
    t_start: usize,
    t_end: usize,
}

impl StandardizedMatrix {
    pub fn values(&self) -> &Mat<f64> {
        &self.values
    }

    /// Rows that were constant in the source window and were replaced by noise.
    pub fn degenerate_rows(&self) -> &[usize] {
        &self.degenerate
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn span(&self) -> (usize, usize) {
        (self.t_start, self.t_end)
    }

    #[cfg(test)]
    pub(crate) fn from_raw(values: Mat<f64>) -> Self {
        let t = values.ncols();
        Self {
            values,
            degenerate: Vec::new(),
            t_start: 1,
            t_end: t,
        }
    }
}

pub(crate) fn row_moments(row: &[f64]) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}

/// Constant up to rounding relative to the row's level.
pub(crate) fn is_degenerate(mean: f64, var: f64) -> bool {
    var == 0.0 || var <= DEGENERATE_RELATIVE_VARIANCE * mean * mean
}

pub(crate) fn standardize_in_place(row: &mut [f64]) {
    let (mean, var) = row_moments(row);
    let sd = var.sqrt();
    for x in row.iter_mut() {
        *x = (*x - mean) / sd;
    }
}

/// Standardizes every row to zero mean and unit variance (denominator `T`).
///
/// Constant rows are replaced by unit-variance Gaussian noise drawn from a
/// stream keyed by `(seed, t_start, row)` and reported in
/// [`StandardizedMatrix::degenerate_rows`].
pub fn standardize_rows(w: &MeasurementWindow, seed: u64) -> Result<StandardizedMatrix> {
    let (n, t) = w.values.shape();
    let mut rows: Vec<Vec<f64>> = (0..n).map(|i| w.row(i)).collect();
    let mut degenerate = Vec::new();
    for (i, row) in rows.iter_mut().enumerate() {
        let (mean, var) = row_moments(row);
        if is_degenerate(mean, var) {
            degenerate.push(i);
            let mut rng = rng::stream(seed, &[0xd1, w.t_start as u64, i as u64]);
            for x in row.iter_mut() {
                *x = rng.sample(StandardNormal);
            }
        }
        standardize_in_place(row);
    }
    if degenerate.len() == n {
        return Err(Error::AllRowsDegenerate);
    }
    Ok(StandardizedMatrix {
        values: Mat::from_fn(n, t, |i, j| rows[i][j]),
        degenerate,
        t_start: w.t_start,
        t_end: w.t_end(),
    })
}

/// Haar-distributed `n x n` unitary: QR of a complex Ginibre matrix with the
/// phases of `diag(R)` folded back into `Q`.
pub fn haar_unitary(n: usize, seed: u64) -> Mat<c64> {
    let mut rng = rng::stream(seed, &[0x4aa2]);
    let g = Mat::<c64>::from_fn(n, n, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        c64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
    });
    let qr = g.qr();
    let mut q = qr.compute_Q();
    let r = qr.R();
    for j in 0..n {
        let d = r[(j, j)];
        let norm = d.norm();
        let phase = if norm > 0.0 { d / norm } else { c64::new(1.0, 0.0) };
        for i in 0..n {
            q[(i, j)] *= phase;
        }
    }
    q
}

/// Symmetric eigendecomposition of a real matrix, eigenvalues ascending.
pub(crate) fn symmetric_eigen(m: &Mat<f64>) -> Result<(Vec<f64>, Mat<f64>)> {
    let evd = m
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::ConvergenceFailure(format!("{e:?}")))?;
    let values = evd.S().column_vector().iter().copied().collect();
    Ok((values, evd.U().to_owned()))
}

/// Square matrix with the singular values of `x`: `sqrt(x x^T) * U` for a
/// seeded Haar unitary `U`.
pub fn singular_value_equivalent(x: &StandardizedMatrix, seed: u64) -> Result<Mat<c64>> {
    let (n, t) = x.values.shape();
    if n > t {
        return Err(Error::Shape(format!(
            "singular value equivalent needs N <= T, got {n} x {t}"
        )));
    }
    let gram = &x.values * x.values.transpose();
    let (lambda, v) = symmetric_eigen(&gram)?;
    let scaled = Mat::<f64>::from_fn(n, n, |i, k| v[(i, k)] * lambda[k].max(0.0).sqrt());
    let root = &scaled * v.transpose();
    let root_c = Mat::<c64>::from_fn(n, n, |i, j| c64::new(root[(i, j)], 0.0));
    Ok(&root_c * &haar_unitary(n, seed))
}

/// Product of singular-value-equivalent matrices, row-scaled so that every
/// row has variance `1/N`.
#[derive(Debug, Clone)]
pub struct RingMatrix {
    values: Mat<c64>,
    chain_length: usize,
}

impl RingMatrix {
    pub fn values(&self) -> &Mat<c64> {
        &self.values
    }

    pub fn chain_length(&self) -> usize {
        self.chain_length
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }
}

fn complex_row_variance(m: &Mat<c64>, i: usize) -> f64 {
    let n = m.ncols();
    let mean = (0..n).map(|j| m[(i, j)]).sum::<c64>() / n as f64;
    (0..n).map(|j| (m[(i, j)] - mean).norm_sqr()).sum::<f64>() / n as f64
}

pub fn ring_product(xs: &[Mat<c64>]) -> Result<RingMatrix> {
    let first = xs
        .first()
        .ok_or_else(|| Error::ShapeMismatch("ring product of an empty chain".into()))?;
    let n = first.nrows();
    if let Some(bad) = xs.iter().find(|x| x.nrows() != n || x.ncols() != n) {
        return Err(Error::ShapeMismatch(format!(
            "chain mixes {n} x {n} with {} x {}",
            bad.nrows(),
            bad.ncols()
        )));
    }
    let mut z = first.clone();
    for x in &xs[1..] {
        z = &z * x;
    }
    let root_n = (n as f64).sqrt();
    for i in 0..n {
        let sd = complex_row_variance(&z, i).sqrt();
        if sd == 0.0 {
            return Err(Error::Domain(format!("row {i} of the ring product is constant")));
        }
        let scale = 1.0 / (root_n * sd);
        for j in 0..n {
            z[(i, j)] *= scale;
        }
    }
    Ok(RingMatrix {
        values: z,
        chain_length: xs.len(),
    })
}

/// Hermitian positive semi-definite matrix with aspect ratio `c = N/T`.
#[derive(Debug, Clone)]
pub struct CovarianceMatrix {
    values: CovarianceValues,
    ratio: f64,
    samples: usize,
}

/// Real data yields a real symmetric matrix; the complex ensemble sampler
/// yields a complex Hermitian one.
#[derive(Debug, Clone)]
pub enum CovarianceValues {
    Real(Mat<f64>),
    Complex(Mat<c64>),
}

impl CovarianceMatrix {
    pub(crate) fn from_real(values: Mat<f64>, samples: usize) -> Self {
        let ratio = values.nrows() as f64 / samples as f64;
        Self {
            values: CovarianceValues::Real(values),
            ratio,
            samples,
        }
    }

    pub(crate) fn from_complex(values: Mat<c64>, samples: usize) -> Self {
        let ratio = values.nrows() as f64 / samples as f64;
        Self {
            values: CovarianceValues::Complex(values),
            ratio,
            samples,
        }
    }

    pub fn values(&self) -> &CovarianceValues {
        &self.values
    }

    /// Aspect ratio `c = N/T`.
    pub fn ratio(&self) -> f64 {
        self.ratio
    }

    pub fn n(&self) -> usize {
        match &self.values {
            CovarianceValues::Real(m) => m.nrows(),
            CovarianceValues::Complex(m) => m.nrows(),
        }
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn trace(&self) -> f64 {
        let n = self.n();
        match &self.values {
            CovarianceValues::Real(m) => (0..n).map(|i| m[(i, i)]).sum(),
            CovarianceValues::Complex(m) => (0..n).map(|i| m[(i, i)].re).sum(),
        }
    }

    /// `trace(M^k)` by repeated multiplication.
    pub fn trace_power(&self, k: u32) -> f64 {
        let n = self.n();
        match (&self.values, k) {
            (_, 0) => n as f64,
            (_, 1) => self.trace(),
            (CovarianceValues::Real(m), 2) => {
                m.col_iter().flat_map(|c| c.iter().map(|x| x * x).collect::<Vec<_>>()).sum()
            }
            (CovarianceValues::Real(m), _) => {
                let mut p = m.clone();
                for _ in 1..k {
                    p = &p * m;
                }
                (0..n).map(|i| p[(i, i)]).sum()
            }
            (CovarianceValues::Complex(m), _) => {
                let mut p = m.clone();
                for _ in 1..k {
                    p = &p * m;
                }
                (0..n).map(|i| p[(i, i)].re).sum()
            }
        }
    }
}

/// `M = X~ X~^T / T` with `c = N/T`.
pub fn sample_covariance(x: &StandardizedMatrix) -> Result<CovarianceMatrix> {
    let (n, t) = x.values.shape();
    if n > t {
        return Err(Error::Shape(format!(
            "sample covariance needs N <= T, got {n} x {t}"
        )));
    }
    let mut m = &x.values * x.values.transpose();
    let inv_t = 1.0 / t as f64;
    for j in 0..n {
        for i in 0..n {
            m[(i, j)] *= inv_t;
        }
    }
    // Symmetrize away rounding in the product.
    for j in 0..n {
        for i in (j + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
    Ok(CovarianceMatrix::from_real(m, t))
}

/// Complex Hermitian matrix (Wigner-type ensembles).
#[derive(Debug, Clone)]
pub struct HermitianMatrix {
    values: Mat<c64>,
}

impl HermitianMatrix {
    pub(crate) fn new(values: Mat<c64>) -> Self {
        Self { values }
    }

    pub fn values(&self) -> &Mat<c64> {
        &self.values
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpectrumKind {
    Ring,
    Covariance,
    Hermitian,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Eigenvalues {
    Real(Vec<f64>),
    Complex(Vec<c64>),
}

/// Eigenvalues of one analysis matrix plus where they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralSample {
    eigenvalues: Eigenvalues,
    kind: SpectrumKind,
    /// `(N, T, L)`; `L = 1` outside the ring route.
    pub params: (usize, usize, usize),
    /// Sample span of the source window, when there is one.
    pub window: Option<(usize, usize)>,
}

impl SpectralSample {
    /// Real spectrum, sorted ascending.
    pub fn real(mut values: Vec<f64>, kind: SpectrumKind, params: (usize, usize, usize)) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptySample);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite eigenvalue".into()));
        }
        values.sort_by(f64::total_cmp);
        Ok(Self {
            eigenvalues: Eigenvalues::Real(values),
            kind,
            params,
            window: None,
        })
    }

    /// Complex ring spectrum, sorted by modulus then argument.
    pub fn complex(mut values: Vec<c64>, params: (usize, usize, usize)) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptySample);
        }
        if values.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::Domain("non-finite eigenvalue".into()));
        }
        values.sort_by(|a, b| {
            a.norm()
                .total_cmp(&b.norm())
                .then(a.arg().total_cmp(&b.arg()))
        });
        Ok(Self {
            eigenvalues: Eigenvalues::Complex(values),
            kind: SpectrumKind::Ring,
            params,
            window: None,
        })
    }

    pub fn with_window(mut self, span: (usize, usize)) -> Self {
        self.window = Some(span);
        self
    }

    pub fn kind(&self) -> SpectrumKind {
        self.kind
    }

    pub fn eigenvalues(&self) -> &Eigenvalues {
        &self.eigenvalues
    }

    pub fn len(&self) -> usize {
        match &self.eigenvalues {
            Eigenvalues::Real(v) => v.len(),
            Eigenvalues::Complex(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Real eigenvalues, if this is a real spectrum.
    pub fn real_values(&self) -> Option<&[f64]> {
        match &self.eigenvalues {
            Eigenvalues::Real(v) => Some(v),
            Eigenvalues::Complex(_) => None,
        }
    }

    pub fn complex_values(&self) -> Option<&[c64]> {
        match &self.eigenvalues {
            Eigenvalues::Complex(v) => Some(v),
            Eigenvalues::Real(_) => None,
        }
    }

    pub fn moduli(&self) -> Vec<f64> {
        match &self.eigenvalues {
            Eigenvalues::Real(v) => v.iter().map(|x| x.abs()).collect(),
            Eigenvalues::Complex(v) => v.iter().map(|z| z.norm()).collect(),
        }
    }

    /// Aspect ratio `N/T` from the recorded parameters.
    pub fn ratio(&self) -> f64 {
        self.params.0 as f64 / self.params.1 as f64
    }
}

/// Eigenvalues of a general complex matrix.
pub fn eigenvalues_general(m: &RingMatrix) -> Result<SpectralSample> {
    let vals = m
        .values
        .eigenvalues()
        .map_err(|e| Error::ConvergenceFailure(format!("{e:?}")))?;
    SpectralSample::complex(vals, (m.n(), m.n(), m.chain_length))
}

/// Eigenvalues of a covariance matrix, ascending.
pub fn eigenvalues_hermitian(m: &CovarianceMatrix) -> Result<SpectralSample> {
    let vals = match &m.values {
        CovarianceValues::Real(v) => v.self_adjoint_eigenvalues(Side::Lower),
        CovarianceValues::Complex(v) => v.self_adjoint_eigenvalues(Side::Lower),
    }
    .map_err(|e| Error::ConvergenceFailure(format!("{e:?}")))?;
    SpectralSample::real(vals, SpectrumKind::Covariance, (m.n(), m.samples, 1))
}

/// Eigenvalues of a Wigner-type Hermitian matrix, ascending.
pub fn eigenvalues_wigner(m: &HermitianMatrix) -> Result<SpectralSample> {
    let vals = m
        .values
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| Error::ConvergenceFailure(format!("{e:?}")))?;
    SpectralSample::real(vals, SpectrumKind::Hermitian, (m.n(), m.n(), 1))
}

/// Symmetrized square window `(X~ + X~^T) / sqrt(2N)`, whose spectrum follows
/// the semicircle law under white noise.
pub fn wigner_matrix(x: &StandardizedMatrix) -> Result<HermitianMatrix> {
    let (n, t) = x.values.shape();
    if n != t {
        return Err(Error::Shape(format!("Wigner matrix needs a square window, got {n} x {t}")));
    }
    let scale = 1.0 / (2.0 * n as f64).sqrt();
    let v = &x.values;
    Ok(HermitianMatrix::new(Mat::from_fn(n, n, |i, j| {
        c64::new((v[(i, j)] + v[(j, i)]) * scale, 0.0)
    })))
}

/// Semicircle route on a square window: standardize, symmetrize, take
/// eigenvalues.
pub fn wigner_spectrum(w: &MeasurementWindow, seed: u64) -> Result<SpectralSample> {
    let x = standardize_rows(w, seed)?;
    let h = wigner_matrix(&x)?;
    Ok(eigenvalues_wigner(&h)?.with_window((w.t_start(), w.t_end())))
}

/// Full ring route: standardize, build `L` singular-value equivalents with
/// independent unitaries, multiply, row-scale, and take eigenvalues.
pub fn ring_spectrum(w: &MeasurementWindow, chain_length: usize, seed: u64) -> Result<SpectralSample> {
    if chain_length == 0 {
        return Err(Error::Config("ring chain length must be at least 1".into()));
    }
    let x = standardize_rows(w, seed)?;
    let chain = (0..chain_length)
        .map(|i| singular_value_equivalent(&x, rng::derive_seed(seed, &[w.t_start as u64, i as u64])))
        .collect::<Result<Vec<_>>>()?;
    let z = ring_product(&chain)?;
    let mut s = eigenvalues_general(&z)?;
    s.params = (w.n_nodes(), w.n_samples(), chain_length);
    Ok(s.with_window((w.t_start(), w.t_end())))
}

/// Full covariance route: standardize, form `M`, and take eigenvalues.
pub fn covariance_spectrum(w: &MeasurementWindow, seed: u64) -> Result<SpectralSample> {
    let x = standardize_rows(w, seed)?;
    let m = sample_covariance(&x)?;
    Ok(eigenvalues_hermitian(&m)?.with_window((w.t_start(), w.t_end())))
}
