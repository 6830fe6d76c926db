//! Finite-`N` convergence envelopes and the spectrum test.
//!
//! Around the limiting density `g`, the expected empirical density stays
//! inside `g(x) +- C / (N w(x))` on the interior of the support, where
//! `w(x) = 4 - x^2` (semicircle) or `(x - a)(b - x)` (Marchenko-Pastur).
//! Neither `C` nor the Kolmogorov constant `C_KS` (distance `<= C_KS / N`)
//! comes with a value, so both are calibrated by Monte Carlo on white-noise
//! windows to a target false-alarm rate.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::laws::{gaussian_window, kolmogorov_distance_at, EsdFunction, LawSpec};
use crate::matrix::{covariance_spectrum, wigner_spectrum, SpectralSample};
use crate::rng;

/// Number of interior grid points the kernel density is checked on.
pub const KDE_GRID_POINTS: usize = 512;
/// Default total false-alarm rate targeted by calibration.
pub const DEFAULT_ALPHA: f64 = 0.005;
/// Default edge-exclusion constant.
pub const DEFAULT_EPS: f64 = 0.05;
/// Default number of Monte Carlo draws for calibration.
pub const DEFAULT_TRIALS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceEnvelope {
    pub law: LawSpec,
    pub n: usize,
    /// Density envelope constant `C`.
    pub constant: f64,
    /// Kolmogorov constant `C_KS`.
    pub ks_constant: f64,
    /// Edge-exclusion constant.
    pub eps: f64,
}

impl ConvergenceEnvelope {
    pub fn new(law: LawSpec, n: usize, constant: f64, ks_constant: f64, eps: f64) -> Result<Self> {
        if !(constant > 0.0 && ks_constant > 0.0 && eps > 0.0) {
            return Err(Error::Domain(format!(
                "envelope constants must be positive (C = {constant}, C_KS = {ks_constant}, eps = {eps})"
            )));
        }
        if let LawSpec::Ring { .. } = law {
            return Err(Error::UnsupportedLaw(law.name().into()));
        }
        Ok(Self {
            law,
            n,
            constant,
            ks_constant,
            eps,
        })
    }

    pub fn interior(&self) -> Result<(f64, f64)> {
        self.law.interior(self.n, self.eps)
    }

    pub fn ks_threshold(&self) -> f64 {
        self.ks_constant / self.n as f64
    }
}

/// Lower and upper density bounds at `x`.
pub fn density_envelope(env: &ConvergenceEnvelope, x: f64) -> Result<(f64, f64)> {
    let (lo, hi) = env.interior()?;
    if !(lo..=hi).contains(&x) {
        return Err(Error::EdgeRegion { x, lo, hi });
    }
    let g = env.law.density(x);
    let half = env.constant / (env.n as f64 * env.law.edge_weight(x));
    Ok((g - half, g + half))
}

/// Silverman's rule: `0.9 min(sd, IQR / 1.34) n^{-1/5}`.
pub fn silverman_bandwidth(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let pos = p * (sorted.len() - 1) as f64;
        let (i, frac) = (pos.floor() as usize, pos.fract());
        let j = (i + 1).min(sorted.len() - 1);
        sorted[i] * (1.0 - frac) + sorted[j] * frac
    };
    let iqr = q(0.75) - q(0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    let h = 0.9 * spread * n.powf(-0.2);
    if h > 0.0 {
        h
    } else {
        1e-3
    }
}

/// Gaussian kernel density estimate at `x`.
pub fn kde(values: &[f64], bandwidth: f64, x: f64) -> f64 {
    let norm = 1.0 / (values.len() as f64 * bandwidth * (2.0 * std::f64::consts::PI).sqrt());
    values
        .iter()
        .map(|v| {
            let u = (x - v) / bandwidth;
            (-0.5 * u * u).exp()
        })
        .sum::<f64>()
        * norm
}

/// `max_x N w(x) |kde(x) - g(x)|` over the interior grid, with its location.
/// Exceeding `C` is the same event as the estimate leaving the envelope.
pub fn envelope_statistic(values: &[f64], law: &LawSpec, n: usize, eps: f64) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::EmptySample);
    }
    let (lo, hi) = law.interior(n, eps)?;
    let h = silverman_bandwidth(values);
    let mut best = (0.0, lo);
    for k in 0..KDE_GRID_POINTS {
        let x = lo + (hi - lo) * k as f64 / (KDE_GRID_POINTS - 1) as f64;
        let s = n as f64 * law.edge_weight(x) * (kde(values, h, x) - law.density(x)).abs();
        if s > best.0 {
            best = (s, x);
        }
    }
    Ok(best)
}

/// Outcome of one spectrum test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub anomaly: bool,
    /// Kolmogorov distance to the reference law.
    pub distance: f64,
    /// Location of the most severe violation relative to its threshold.
    pub worst_x: f64,
    pub ks_threshold: f64,
    /// `max N w |kde - g| / C`; above 1 means the estimate left the envelope.
    pub envelope_ratio: f64,
}

pub fn spectrum_test(s: &SpectralSample, env: &ConvergenceEnvelope) -> Result<Verdict> {
    env.law.check_compatible(s.kind())?;
    let values = s
        .real_values()
        .ok_or_else(|| Error::Domain("spectrum test needs a real spectrum".into()))?;
    if values.len() != env.n {
        return Err(Error::ShapeMismatch(format!(
            "sample has {} eigenvalues, envelope is for N = {}",
            values.len(),
            env.n
        )));
    }
    let (distance, ks_x) = kolmogorov_distance_at(&EsdFunction::new(values.to_vec()), &env.law)?;
    let (stat, env_x) = envelope_statistic(values, &env.law, env.n, env.eps)?;
    let envelope_ratio = stat / env.constant;
    let ks_ratio = distance / env.ks_threshold();
    Ok(Verdict {
        anomaly: envelope_ratio > 1.0 || ks_ratio > 1.0,
        distance,
        worst_x: if envelope_ratio >= ks_ratio { env_x } else { ks_x },
        ks_threshold: env.ks_threshold(),
        envelope_ratio,
    })
}

/// Monte Carlo calibration record for one `(law, N, T)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeCalibration {
    pub law: LawSpec,
    pub n: usize,
    pub t: usize,
    #[serde(rename = "C")]
    pub constant: f64,
    #[serde(rename = "C_KS")]
    pub ks_constant: f64,
    pub eps: f64,
    /// Target false-alarm rate of the combined test.
    pub alpha: f64,
    pub mc_trials: usize,
    pub seed: u64,
}

impl EnvelopeCalibration {
    pub fn envelope(&self) -> Result<ConvergenceEnvelope> {
        ConvergenceEnvelope::new(self.law, self.n, self.constant, self.ks_constant, self.eps)
    }
}

/// Null spectrum for `law` at shape `(N, T)` pushed through the same pipeline
/// as measured data: white Gaussian window, standardized, then the covariance
/// (Marchenko-Pastur) or symmetrized (semicircle, `T = N`) route.
pub fn null_spectrum(law: &LawSpec, n: usize, t: usize, seed: u64) -> Result<SpectralSample> {
    match law {
        LawSpec::MarchenkoPastur { .. } => covariance_spectrum(&gaussian_window(n, t, seed)?, seed),
        LawSpec::Semicircle => wigner_spectrum(&gaussian_window(n, n, seed)?, seed),
        LawSpec::Ring { .. } => Err(Error::UnsupportedLaw(law.name().into())),
    }
}

/// Split-conformal upper quantile: the `ceil((m + 1)(1 - alpha))`-th order
/// statistic, capped at the largest draw.
fn conformal_quantile(mut stats: Vec<f64>, alpha: f64) -> f64 {
    stats.sort_by(f64::total_cmp);
    let m = stats.len();
    let rank = (((m + 1) as f64) * (1.0 - alpha)).ceil() as usize;
    stats[rank.clamp(1, m) - 1]
}

/// Calibrates `C` and `C_KS` so that white-noise windows of shape `(N, T)`
/// raise a false alarm with probability about `alpha`; the budget is split
/// evenly between the density and Kolmogorov checks.
pub fn calibrate_envelope(
    law: LawSpec,
    n: usize,
    t: usize,
    trials: usize,
    seed: u64,
    eps: f64,
    alpha: f64,
) -> Result<EnvelopeCalibration> {
    if trials < 100 {
        return Err(Error::Config(format!("calibration needs at least 100 trials, got {trials}")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!("alpha = {alpha} outside (0, 1)")));
    }
    let law = match law {
        LawSpec::MarchenkoPastur { .. } => LawSpec::marchenko_pastur(n as f64 / t as f64)?,
        other => other,
    };
    let stats = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let s = null_spectrum(&law, n, t, rng::derive_seed(seed, &[0xca1, trial as u64]))?;
            let values = s.real_values().unwrap_or_default();
            let (env, _) = envelope_statistic(values, &law, n, eps)?;
            let (ks, _) = kolmogorov_distance_at(&EsdFunction::new(values.to_vec()), &law)?;
            Ok((env, ks * n as f64))
        })
        .collect::<Result<Vec<_>>>()?;
    let (env_stats, ks_stats): (Vec<f64>, Vec<f64>) = stats.into_iter().unzip();
    Ok(EnvelopeCalibration {
        law,
        n,
        t,
        constant: conformal_quantile(env_stats, 0.5 * alpha),
        ks_constant: conformal_quantile(ks_stats, 0.5 * alpha),
        eps,
        alpha,
        mc_trials: trials,
        seed,
    })
}
