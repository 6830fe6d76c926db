//! Closed-form limiting densities and distribution functions.

use std::f64::consts::PI;

use crate::error::{Error, Result};

fn check_ratio(c: f64) -> Result<()> {
    if c > 0.0 && c <= 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("aspect ratio c = {c} outside (0, 1]")))
    }
}

/// Marchenko-Pastur support `[(1 - sqrt c)^2, (1 + sqrt c)^2]`.
pub fn mp_support(c: f64) -> Result<(f64, f64)> {
    check_ratio(c)?;
    let r = c.sqrt();
    Ok(((1.0 - r).powi(2), (1.0 + r).powi(2)))
}

/// Marchenko-Pastur density for ratio `c` in `(0, 1]`.
pub fn mp_density(x: f64, c: f64) -> Result<f64> {
    let (a, b) = mp_support(c)?;
    if x <= a || x >= b {
        return Ok(0.0);
    }
    Ok(((x - a) * (b - x)).sqrt() / (2.0 * PI * c * x))
}

/// Marchenko-Pastur distribution function.
///
/// Uses the antiderivative of `sqrt((t-a)(b-t)) / t`:
///
/// ```text
/// R(t) = sqrt((t-a)(b-t)) + (a+b)/2 * asin((2t-a-b)/(b-a))
///        - sqrt(ab) * asin(((a+b)t - 2ab) / (t(b-a)))
/// ```
pub fn mp_cdf(x: f64, c: f64) -> Result<f64> {
    let (a, b) = mp_support(c)?;
    if x <= a {
        return Ok(0.0);
    }
    if x >= b {
        return Ok(1.0);
    }
    let antiderivative = |t: f64| {
        let root = ((t - a) * (b - t)).max(0.0).sqrt();
        let u = ((2.0 * t - a - b) / (b - a)).clamp(-1.0, 1.0);
        let mut r = root + 0.5 * (a + b) * u.asin();
        let g = (a * b).sqrt();
        if g > 0.0 {
            let v = (((a + b) * t - 2.0 * a * b) / (t * (b - a))).clamp(-1.0, 1.0);
            r -= g * v.asin();
        }
        r
    };
    // R(a) in closed form: both arcsines sit at -pi/2.
    let at_a = -0.25 * PI * (a + b) + 0.5 * PI * (a * b).sqrt();
    Ok(((antiderivative(x) - at_a) / (2.0 * PI * c)).clamp(0.0, 1.0))
}

/// Wigner semicircle density on `[-2, 2]`.
pub fn semicircle_density(x: f64) -> f64 {
    if x.abs() >= 2.0 {
        0.0
    } else {
        (4.0 - x * x).sqrt() / (2.0 * PI)
    }
}

pub fn semicircle_cdf(x: f64) -> f64 {
    if x <= -2.0 {
        0.0
    } else if x >= 2.0 {
        1.0
    } else {
        0.5 + x * (4.0 - x * x).sqrt() / (4.0 * PI) + (0.5 * x).asin() / PI
    }
}

/// Inner radius `(1 - c)^{L/2}` of the ring annulus; the outer radius is 1.
pub fn ring_inner_radius(c: f64, chain_length: usize) -> Result<f64> {
    check_ratio(c)?;
    Ok((1.0 - c).powf(0.5 * chain_length as f64))
}

/// Density of the eigenvalue modulus under the ring law:
/// `2 / (c L) * r^{2/L - 1}` on `[(1-c)^{L/2}, 1]`.
pub fn ring_modulus_density(r: f64, c: f64, chain_length: usize) -> Result<f64> {
    let inner = ring_inner_radius(c, chain_length)?;
    if r < inner || r > 1.0 {
        return Ok(0.0);
    }
    let l = chain_length as f64;
    Ok(2.0 / (c * l) * r.powf(2.0 / l - 1.0))
}

pub fn ring_modulus_cdf(r: f64, c: f64, chain_length: usize) -> Result<f64> {
    let inner = ring_inner_radius(c, chain_length)?;
    if r <= inner {
        return Ok(0.0);
    }
    if r >= 1.0 {
        return Ok(1.0);
    }
    Ok((r.powf(2.0 / chain_length as f64) - (1.0 - c)) / c)
}

/// Limiting mean spectral radius `E|lambda|` under the ring law.
pub fn ring_mean_modulus(c: f64, chain_length: usize) -> Result<f64> {
    check_ratio(c)?;
    let l = chain_length as f64;
    let p = 2.0 / l + 1.0;
    Ok(2.0 / (c * l) / p * (1.0 - (1.0 - c).powf(0.5 * l * p)))
}
