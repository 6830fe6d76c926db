//! Gaussian ensemble samplers and null measurement windows.

use faer::{c64, Mat};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::matrix::{default_labels, CovarianceMatrix, HermitianMatrix, MeasurementWindow};
use crate::rng;

fn complex_gaussian(rng: &mut impl Rng) -> c64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    c64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// GUE matrix `(X + X^H) / sqrt(2N)`, so off-diagonal entries have variance
/// `1/N` and the spectrum fills `[-2, 2]`.
pub fn sample_gue(n: usize, seed: u64) -> Result<HermitianMatrix> {
    if n < 2 {
        return Err(Error::Shape(format!("GUE needs N >= 2, got {n}")));
    }
    let mut rng = rng::stream(seed, &[0x6e5]);
    let x = Mat::<c64>::from_fn(n, n, |_, _| complex_gaussian(&mut rng));
    let scale = 1.0 / (2.0 * n as f64).sqrt();
    let a = Mat::<c64>::from_fn(n, n, |i, j| (x[(i, j)] + x[(j, i)].conj()) * scale);
    Ok(HermitianMatrix::new(a))
}

/// Complex Wishart matrix `X X^H / T` with `c = N/T`.
pub fn sample_lue(n: usize, t: usize, seed: u64) -> Result<CovarianceMatrix> {
    if n > t || n == 0 {
        return Err(Error::Shape(format!("LUE needs 0 < N <= T, got {n} x {t}")));
    }
    let mut rng = rng::stream(seed, &[0x1e5]);
    let x = Mat::<c64>::from_fn(n, t, |_, _| complex_gaussian(&mut rng));
    let mut m = &x * x.adjoint();
    let inv_t = 1.0 / t as f64;
    for j in 0..n {
        for i in 0..n {
            m[(i, j)] *= inv_t;
        }
    }
    for i in 0..n {
        m[(i, i)].im = 0.0;
        for j in (i + 1)..n {
            let avg = (m[(i, j)] + m[(j, i)].conj()) * 0.5;
            m[(i, j)] = avg;
            m[(j, i)] = avg.conj();
        }
    }
    Ok(CovarianceMatrix::from_complex(m, t))
}

/// White Gaussian measurement window: the null hypothesis for every test.
pub fn gaussian_window(n: usize, t: usize, seed: u64) -> Result<MeasurementWindow> {
    let mut rng = rng::stream(seed, &[0x0a11]);
    let values = Mat::from_fn(n, t, |_, _| rng.sample::<f64, _>(StandardNormal));
    MeasurementWindow::new(values, default_labels(n), 1)
}
