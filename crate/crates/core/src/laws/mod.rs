//! Reference spectral laws, ensemble samplers, empirical spectral
//! distributions and the envelope-based spectrum test.

mod density;
mod ensemble;
mod envelope;
mod esd;

pub use density::{
    mp_cdf, mp_density, mp_support, ring_inner_radius, ring_mean_modulus, ring_modulus_cdf,
    ring_modulus_density, semicircle_cdf, semicircle_density,
};
pub use ensemble::{gaussian_window, sample_gue, sample_lue};
pub use envelope::{
    calibrate_envelope, density_envelope, envelope_statistic, kde, null_spectrum, silverman_bandwidth,
    spectrum_test, ConvergenceEnvelope, EnvelopeCalibration, Verdict, DEFAULT_ALPHA, DEFAULT_EPS, DEFAULT_TRIALS,
    KDE_GRID_POINTS,
};
pub use esd::{kolmogorov_distance, kolmogorov_distance_at, EsdFunction};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::SpectrumKind;

/// Identity and parameters of a limiting spectral law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LawSpec {
    /// Ring law for the product of `chain_length` singular-value equivalents.
    Ring { c: f64, chain_length: usize },
    MarchenkoPastur { c: f64 },
    Semicircle,
}

impl LawSpec {
    pub fn ring(c: f64, chain_length: usize) -> Result<Self> {
        mp_support(c)?;
        if chain_length == 0 {
            return Err(Error::Domain("ring chain length must be at least 1".into()));
        }
        Ok(Self::Ring { c, chain_length })
    }

    pub fn marchenko_pastur(c: f64) -> Result<Self> {
        mp_support(c)?;
        Ok(Self::MarchenkoPastur { c })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Ring { .. } => "ring",
            Self::MarchenkoPastur { .. } => "marchenko-pastur",
            Self::Semicircle => "semicircle",
        }
    }

    /// Support endpoints; radii for the ring law.
    pub fn support(&self) -> (f64, f64) {
        match *self {
            Self::Ring { c, chain_length } => ((1.0 - c).powf(0.5 * chain_length as f64), 1.0),
            Self::MarchenkoPastur { c } => {
                let r = c.sqrt();
                ((1.0 - r).powi(2), (1.0 + r).powi(2))
            }
            Self::Semicircle => (-2.0, 2.0),
        }
    }

    /// Limiting density; for the ring law, the density of the modulus.
    pub fn density(&self, x: f64) -> f64 {
        match *self {
            Self::Ring { c, chain_length } => ring_modulus_density(x, c, chain_length).unwrap_or(0.0),
            Self::MarchenkoPastur { c } => mp_density(x, c).unwrap_or(0.0),
            Self::Semicircle => semicircle_density(x),
        }
    }

    /// Distribution function on the real line.
    pub fn cdf(&self, x: f64) -> Result<f64> {
        match *self {
            Self::Ring { .. } => Err(Error::UnsupportedLaw(self.name().into())),
            Self::MarchenkoPastur { c } => mp_cdf(x, c),
            Self::Semicircle => Ok(semicircle_cdf(x)),
        }
    }

    /// Inverse distribution function by bisection.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Domain(format!("probability {p} outside [0, 1]")));
        }
        let (mut lo, mut hi) = self.support();
        self.cdf(lo)?;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid)? < p {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-15 {
                break;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// Interior interval on which the finite-`N` density envelope holds:
    /// edges trimmed by `N^{-1/3} eps` (semicircle) or `N^{-2/3} eps` (M-P).
    pub fn interior(&self, n: usize, eps: f64) -> Result<(f64, f64)> {
        let (lo, hi) = self.support();
        let trim = match self {
            Self::Ring { .. } => return Err(Error::UnsupportedLaw(self.name().into())),
            Self::MarchenkoPastur { .. } => (n as f64).powf(-2.0 / 3.0) * eps,
            Self::Semicircle => (n as f64).powf(-1.0 / 3.0) * eps,
        };
        if lo + trim >= hi - trim {
            return Err(Error::Domain(format!("edge trim {trim} leaves no interior")));
        }
        Ok((lo + trim, hi - trim))
    }

    /// Edge weight `w(x)` in the envelope half-width `C / (N w(x))`.
    pub fn edge_weight(&self, x: f64) -> f64 {
        match self {
            Self::Semicircle => 4.0 - x * x,
            _ => {
                let (a, b) = self.support();
                (x - a) * (b - x)
            }
        }
    }

    /// Spectrum kind this law describes.
    pub fn spectrum_kind(&self) -> SpectrumKind {
        match self {
            Self::Ring { .. } => SpectrumKind::Ring,
            Self::MarchenkoPastur { .. } => SpectrumKind::Covariance,
            Self::Semicircle => SpectrumKind::Hermitian,
        }
    }

    pub(crate) fn check_compatible(&self, kind: SpectrumKind) -> Result<()> {
        if self.spectrum_kind() == kind {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "{kind:?} spectrum cannot be compared with the {} law",
                self.name()
            )))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constructors_validate_parameters() {
        assert!(LawSpec::marchenko_pastur(0.0).is_err());
        assert!(LawSpec::marchenko_pastur(1.01).is_err());
        assert!(LawSpec::ring(0.5, 0).is_err());
        let (a, b) = LawSpec::marchenko_pastur(0.25).unwrap().support();
        assert!(a < b);
    }

    #[test]
    fn quantile_inverts_cdf() {
        for law in [LawSpec::Semicircle, LawSpec::marchenko_pastur(0.49).unwrap()] {
            for p in [0.01, 0.3, 0.5, 0.9] {
                let x = law.quantile(p).unwrap();
                assert!((law.cdf(x).unwrap() - p).abs() < 1e-10);
            }
        }
        assert!(LawSpec::ring(0.5, 1).unwrap().quantile(0.5).is_err());
    }

    #[test]
    fn interior_shrinks_toward_support() {
        let law = LawSpec::marchenko_pastur(0.5).unwrap();
        let (a, b) = law.support();
        let (lo1, hi1) = law.interior(100, 1.0).unwrap();
        let (lo2, hi2) = law.interior(10_000, 1.0).unwrap();
        assert!(a < lo2 && lo2 < lo1 && hi1 < hi2 && hi2 < b);
    }

    #[test]
    fn law_spec_json_shape() {
        let j = serde_json::to_string(&LawSpec::MarchenkoPastur { c: 0.5 }).unwrap();
        assert_eq!(j, r#"{"kind":"marchenko-pastur","c":0.5}"#);
        let back: LawSpec = serde_json::from_str(r#"{"kind":"ring","c":0.25,"chain_length":2}"#).unwrap();
        assert_eq!(back, LawSpec::Ring { c: 0.25, chain_length: 2 });
    }
}
