//! Linear eigenvalue statistics `tau = sum_i phi(lambda_i)` and the mean
//! spectral radius, with reference values from quadrature or Monte Carlo.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::laws::{gaussian_window, LawSpec};
use crate::matrix::{
    eigenvalues_hermitian, ring_spectrum, sample_covariance, standardize_rows, Eigenvalues,
    MeasurementWindow, SpectralSample,
};
use crate::rng;

/// Eigenvalues below this are clamped before taking logarithms.
pub const LOG_FLOOR: f64 = 1e-12;
/// Negative eigenvalues down to this are treated as rounding of zero.
const NEGATIVE_TOLERANCE: f64 = 1e-10;

/// Test function `phi` of a linear eigenvalue statistic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TestFunction {
    /// `lambda^k`.
    Power { k: u32 },
    /// `ln lambda`.
    LogDet,
    /// `lambda - ln lambda - 1`.
    LikelihoodRatio,
    /// Piecewise-linear interpolation through `(x, phi(x))` points sorted by `x`.
    Table { name: String, points: Vec<(f64, f64)> },
    /// `sum_j w_j phi_j`.
    Combination { terms: Vec<(f64, TestFunction)> },
}

impl TestFunction {
    pub fn name(&self) -> String {
        match self {
            Self::Power { k } => format!("T{k}"),
            Self::LogDet => "DET".into(),
            Self::LikelihoodRatio => "LRF".into(),
            Self::Table { name, .. } => name.clone(),
            Self::Combination { terms } => terms
                .iter()
                .map(|(w, f)| format!("{w}*{}", f.name()))
                .collect::<Vec<_>>()
                .join("+"),
        }
    }

    /// Parses the short names `T<k>`, `DET`, `LRF`.
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "DET" => Ok(Self::LogDet),
            "LRF" => Ok(Self::LikelihoodRatio),
            _ => name
                .strip_prefix('T')
                .and_then(|k| k.parse().ok())
                .map(|k| Self::Power { k })
                .ok_or_else(|| Error::Config(format!("unknown test function `{name}`"))),
        }
    }

    fn uses_log(&self) -> bool {
        match self {
            Self::LogDet | Self::LikelihoodRatio => true,
            Self::Combination { terms } => terms.iter().any(|(_, f)| f.uses_log()),
            _ => false,
        }
    }

    /// Evaluates `phi(x)`, reporting whether `x` had to be clamped up to
    /// [`LOG_FLOOR`].
    pub fn eval_flagged(&self, x: f64) -> Result<(f64, bool)> {
        let log_arg = |x: f64| {
            if x < -NEGATIVE_TOLERANCE {
                Err(Error::Domain(format!("logarithm of negative eigenvalue {x}")))
            } else if x < LOG_FLOOR {
                Ok((LOG_FLOOR, true))
            } else {
                Ok((x, false))
            }
        };
        match self {
            Self::Power { k } => Ok((x.powi(*k as i32), false)),
            Self::LogDet => log_arg(x).map(|(v, c)| (v.ln(), c)),
            Self::LikelihoodRatio => log_arg(x).map(|(v, c)| (v - v.ln() - 1.0, c)),
            Self::Table { name, points } => {
                let (first, last) = match (points.first(), points.last()) {
                    (Some(f), Some(l)) => (f, l),
                    _ => return Err(Error::Domain(format!("table `{name}` is empty"))),
                };
                if x < first.0 || x > last.0 {
                    return Err(Error::Domain(format!(
                        "{x} outside table `{name}` range [{}, {}]",
                        first.0, last.0
                    )));
                }
                let i = points.partition_point(|p| p.0 < x);
                if i == 0 {
                    return Ok((first.1, false));
                }
                let (x0, y0) = points[i - 1];
                let (x1, y1) = points[i];
                Ok((y0 + (y1 - y0) * (x - x0) / (x1 - x0), false))
            }
            Self::Combination { terms } => {
                let mut total = 0.0;
                let mut clamped = false;
                for (w, f) in terms {
                    let (v, c) = f.eval_flagged(x)?;
                    total += w * v;
                    clamped |= c;
                }
                Ok((total, clamped))
            }
        }
    }

    pub fn eval(&self, x: f64) -> Result<f64> {
        self.eval_flagged(x).map(|(v, _)| v)
    }

    fn check_support(&self, lo: f64, hi: f64) -> Result<()> {
        if self.uses_log() && lo <= 0.0 {
            return Err(Error::Domain(format!(
                "{} is singular at the support edge {lo}",
                self.name()
            )));
        }
        match self {
            Self::Table { name, points } => {
                let ok = points.first().is_some_and(|p| p.0 <= lo) && points.last().is_some_and(|p| p.0 >= hi);
                if ok {
                    Ok(())
                } else {
                    Err(Error::Domain(format!("table `{name}` does not cover [{lo}, {hi}]")))
                }
            }
            Self::Combination { terms } => terms.iter().try_for_each(|(_, f)| f.check_support(lo, hi)),
            _ => Ok(()),
        }
    }
}

/// LES value and the number of eigenvalues clamped before a logarithm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LesValue {
    pub value: f64,
    pub clamped: usize,
}

pub fn les_detailed(s: &SpectralSample, phi: &TestFunction) -> Result<LesValue> {
    let values = s
        .real_values()
        .ok_or_else(|| Error::Domain("linear eigenvalue statistic needs a real spectrum".into()))?;
    let mut out = LesValue { value: 0.0, clamped: 0 };
    for &x in values {
        let (v, c) = phi.eval_flagged(x)?;
        out.value += v;
        out.clamped += usize::from(c);
    }
    Ok(out)
}

/// `tau = sum_i phi(lambda_i)` over a real spectrum.
pub fn les(s: &SpectralSample, phi: &TestFunction) -> Result<f64> {
    les_detailed(s, phi).map(|v| v.value)
}

/// Mean spectral radius `sum_i |lambda_i| / N`.
pub fn msr(s: &SpectralSample) -> f64 {
    let m = s.moduli();
    m.iter().sum::<f64>() / m.len() as f64
}

/// `N * integral phi(x) g(x) dx` under the limiting law. For the ring law
/// `phi` is applied to the eigenvalue modulus.
pub fn theoretical_mean(phi: &TestFunction, law: &LawSpec, n: usize) -> Result<f64> {
    let (lo, hi) = law.support();
    phi.check_support(lo, hi)?;
    // x = mid - half cos(theta) cancels the square-root behaviour at both edges
    let (mid, half) = ((lo + hi) / 2.0, (hi - lo) / 2.0);
    let f = |theta: f64| {
        let x = mid - half * theta.cos();
        phi.eval(x).unwrap_or(f64::NAN) * law.density(x) * half * theta.sin()
    };
    let out = quadrature::integrate(f, 0.0, std::f64::consts::PI, 1e-13);
    if !out.integral.is_finite() {
        return Err(Error::Domain(format!("{} is not integrable on [{lo}, {hi}]", phi.name())));
    }
    Ok(n as f64 * out.integral)
}

/// Indicator computed on every analysis window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Indicator {
    /// Mean spectral radius of the ring matrix built from `chain_length` factors.
    Msr { chain_length: usize },
    /// Linear eigenvalue statistic of the sample covariance matrix.
    Les { function: TestFunction },
}

impl Indicator {
    pub fn msr() -> Self {
        Self::Msr { chain_length: 1 }
    }

    pub fn les(function: TestFunction) -> Self {
        Self::Les { function }
    }

    pub fn name(&self) -> String {
        match self {
            Self::Msr { chain_length: 1 } => "MSR".into(),
            Self::Msr { chain_length } => format!("MSR{chain_length}"),
            Self::Les { function } => function.name(),
        }
    }

    /// Parses `MSR`, `MSR<L>`, or a test-function short name.
    pub fn from_name(name: &str) -> Result<Self> {
        if let Some(rest) = name.strip_prefix("MSR") {
            let chain_length = if rest.is_empty() {
                1
            } else {
                rest.parse().map_err(|_| Error::Config(format!("bad indicator `{name}`")))?
            };
            return Ok(Self::Msr { chain_length });
        }
        TestFunction::from_name(name).map(Self::les)
    }

    /// Limiting law of the spectrum this indicator reads at shape `(N, T)`.
    pub fn law(&self, n: usize, t: usize) -> Result<LawSpec> {
        let c = n as f64 / t as f64;
        match self {
            Self::Msr { chain_length } => LawSpec::ring(c, *chain_length),
            Self::Les { .. } => LawSpec::marchenko_pastur(c),
        }
    }

    /// Runs the full pipeline on one window.
    ///
    /// Power test functions are evaluated as `trace(M^k)`, which equals the
    /// eigenvalue sum without a decomposition.
    pub fn evaluate(&self, w: &MeasurementWindow, seed: u64) -> Result<f64> {
        match self {
            Self::Msr { chain_length } => Ok(msr(&ring_spectrum(w, *chain_length, seed)?)),
            Self::Les { function } => {
                let m = sample_covariance(&standardize_rows(w, seed)?)?;
                match function {
                    TestFunction::Power { k } if *k <= 4 => Ok(m.trace_power(*k)),
                    _ => les(&eigenvalues_hermitian(&m)?, function),
                }
            }
        }
    }

    /// Limiting mean of the indicator at shape `(N, T)`.
    pub fn theoretical_mean(&self, n: usize, t: usize) -> Result<f64> {
        let law = self.law(n, t)?;
        match self {
            Self::Msr { .. } => theoretical_mean(&TestFunction::Power { k: 1 }, &law, 1),
            Self::Les { function } => theoretical_mean(function, &law, n),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReferenceSource {
    Quadrature,
    MonteCarlo,
}

/// Null-hypothesis mean and variance of an indicator at one shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndicatorReference {
    pub indicator: Indicator,
    pub law: LawSpec,
    pub n: usize,
    pub t: usize,
    pub mean: f64,
    pub variance: f64,
    pub source: ReferenceSource,
    pub trials: usize,
    pub seed: u64,
}

impl IndicatorReference {
    pub fn sigma(&self) -> f64 {
        self.variance.sqrt()
    }

    /// Standard deviation of `mu_0 = tau / E(tau)`.
    pub fn normalized_sigma(&self) -> f64 {
        self.sigma() / self.mean.abs()
    }

    /// Variance of `mu_0 = tau / E(tau)`.
    pub fn normalized_variance(&self) -> f64 {
        self.variance / (self.mean * self.mean)
    }

    /// Deviation of `value` from the mean in units of sigma.
    pub fn z_score(&self, value: f64) -> Result<f64> {
        if !(self.variance > 0.0) {
            return Err(Error::DegenerateReference);
        }
        Ok((value - self.mean) / self.sigma())
    }

    fn key(&self) -> (String, usize, usize) {
        (self.indicator.name(), self.n, self.t)
    }

    pub(crate) fn same_key(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}

/// Monte Carlo reference from `trials` white-noise windows of shape `(N, T)`.
pub fn calibrate_reference(
    indicator: &Indicator,
    n: usize,
    t: usize,
    trials: usize,
    seed: u64,
) -> Result<IndicatorReference> {
    if trials < 100 {
        return Err(Error::Config(format!("calibration needs at least 100 trials, got {trials}")));
    }
    let law = indicator.law(n, t)?;
    let values = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let s = rng::derive_seed(seed, &[0x1e5, trial as u64]);
            indicator.evaluate(&gaussian_window(n, t, s)?, s)
        })
        .collect::<Result<Vec<f64>>>()?;
    let m = trials as f64;
    let mean = values.iter().sum::<f64>() / m;
    let variance = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0);
    Ok(IndicatorReference {
        indicator: indicator.clone(),
        law,
        n,
        t,
        mean,
        variance,
        source: ReferenceSource::MonteCarlo,
        trials,
        seed,
    })
}

/// `mu_0 = tau / E(tau)`.
pub fn normalized_indicator(tau: f64, reference: &IndicatorReference) -> Result<f64> {
    if reference.mean == 0.0 {
        return Err(Error::DegenerateReference);
    }
    Ok(tau / reference.mean)
}

/// Eigenvalues outside the law's support widened by `margin`.
///
/// Ring: modulus above `1 + margin` or below `inner - margin`. Real laws: the
/// support `[a, b]` widened by `margin * (b - a)` on each side.
pub fn outlier_count(s: &SpectralSample, law: &LawSpec, margin: f64) -> usize {
    let (lo, hi) = law.support();
    let (lo, hi) = match law {
        LawSpec::Ring { .. } => (lo - margin, hi + margin),
        _ => (lo - margin * (hi - lo), hi + margin * (hi - lo)),
    };
    let outside = |x: f64| x < lo || x > hi;
    match (law, s.eigenvalues()) {
        (LawSpec::Ring { .. }, _) => s.moduli().into_iter().filter(|&r| outside(r)).count(),
        (_, Eigenvalues::Real(v)) => v.iter().filter(|&&x| outside(x)).count(),
        (_, Eigenvalues::Complex(v)) => v.iter().filter(|z| outside(z.re)).count(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::laws::{mp_support, ring_mean_modulus};
    use crate::matrix::{covariance_spectrum, SpectrumKind};
    use faer::c64;
    use proptest::prelude::*;

    fn real_sample(v: Vec<f64>) -> SpectralSample {
        let n = v.len();
        SpectralSample::real(v, SpectrumKind::Covariance, (n, 2 * n, 1)).unwrap()
    }

    #[test]
    fn les_small_cases() {
        let s = real_sample(vec![1.0, 1.0, 1.0]);
        assert_eq!(les(&s, &TestFunction::Power { k: 2 }).unwrap(), 3.0);
        assert_eq!(les(&s, &TestFunction::LikelihoodRatio).unwrap(), 0.0);
        assert_eq!(les(&s, &TestFunction::LogDet).unwrap(), 0.0);
    }

    #[test]
    fn log_functions_clamp_zero_and_reject_negative() {
        let s = real_sample(vec![0.0, 1.0]);
        let v = les_detailed(&s, &TestFunction::LogDet).unwrap();
        assert_eq!(v.clamped, 1);
        assert!((v.value - LOG_FLOOR.ln()).abs() < 1e-12);
        let neg = real_sample(vec![-0.5, 1.0]);
        assert!(matches!(les(&neg, &TestFunction::LogDet), Err(Error::Domain(_))));
    }

    #[test]
    fn table_function_interpolates() {
        let phi = TestFunction::Table { name: "tab".into(), points: vec![(0.0, 0.0), (2.0, 4.0), (4.0, 0.0)] };
        assert_eq!(phi.eval(1.0).unwrap(), 2.0);
        assert_eq!(phi.eval(3.0).unwrap(), 2.0);
        assert_eq!(phi.eval(0.0).unwrap(), 0.0);
        assert!(phi.eval(5.0).is_err());
    }

    #[test]
    fn names_round_trip() {
        for name in ["MSR", "MSR2", "T2", "T3", "T4", "DET", "LRF"] {
            assert_eq!(Indicator::from_name(name).unwrap().name(), name);
        }
        assert!(Indicator::from_name("XYZ").is_err());
    }

    #[test]
    fn msr_small_cases() {
        let unit: Vec<c64> = (0..8).map(|k| c64::from_polar(1.0, k as f64)).collect();
        assert!((msr(&SpectralSample::complex(unit, (8, 8, 1)).unwrap()) - 1.0).abs() < 1e-15);
        let zero = vec![c64::new(0.0, 0.0); 4];
        assert_eq!(msr(&SpectralSample::complex(zero, (4, 4, 1)).unwrap()), 0.0);
    }

    #[test]
    fn theoretical_means_match_moments() {
        for c in [0.1, 118.0 / 240.0, 0.9, 1.0] {
            let law = LawSpec::marchenko_pastur(c).unwrap();
            let n = 100;
            let m0 = theoretical_mean(&TestFunction::Power { k: 0 }, &law, n).unwrap();
            let m1 = theoretical_mean(&TestFunction::Power { k: 1 }, &law, n).unwrap();
            let m2 = theoretical_mean(&TestFunction::Power { k: 2 }, &law, n).unwrap();
            let m3 = theoretical_mean(&TestFunction::Power { k: 3 }, &law, n).unwrap();
            // Marchenko-Pastur moments: 1, 1, 1 + c, 1 + 3c + c^2
            assert!((m0 - 100.0).abs() < 1e-8 * 100.0, "c={c} m0={m0}");
            assert!((m1 - 100.0).abs() < 1e-8 * 100.0);
            assert!((m2 - 100.0 * (1.0 + c)).abs() < 1e-8 * m2);
            assert!((m3 - 100.0 * (1.0 + 3.0 * c + c * c)).abs() < 1e-8 * m3);
        }
        let semi = theoretical_mean(&TestFunction::Power { k: 2 }, &LawSpec::Semicircle, 10).unwrap();
        assert!((semi - 10.0).abs() < 1e-8);
    }

    #[test]
    fn theoretical_log_mean_matches_closed_form() {
        // E ln(lambda) = -1 + (c - 1)/c * ln(1 - c) for c < 1
        let c: f64 = 0.5;
        let law = LawSpec::marchenko_pastur(c).unwrap();
        let got = theoretical_mean(&TestFunction::LogDet, &law, 1).unwrap();
        let expected = -1.0 + (c - 1.0) / c * (1.0 - c).ln();
        assert!((got - expected).abs() < 1e-8, "{got} vs {expected}");
        assert!(theoretical_mean(&TestFunction::LogDet, &LawSpec::marchenko_pastur(1.0).unwrap(), 1).is_err());
    }

    #[test]
    fn ring_theoretical_mean_matches_closed_form() {
        let c = 118.0 / 240.0;
        let msr_mean = Indicator::msr().theoretical_mean(118, 240).unwrap();
        assert!((msr_mean - ring_mean_modulus(c, 1).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn null_t2_statistic_near_limit() {
        // tau within 3 sigma_MC of N (1 + c)
        let (n, t) = (118, 240);
        let phi = TestFunction::Power { k: 2 };
        let reference = calibrate_reference(&Indicator::les(phi.clone()), n, t, 200, 3).unwrap();
        let tau = les(&covariance_spectrum(&gaussian_window(n, t, 4).unwrap(), 4).unwrap(), &phi).unwrap();
        let limit = n as f64 * (1.0 + n as f64 / t as f64);
        assert!((limit - 176.0).abs() < 0.1);
        assert!((tau - limit).abs() < 3.0 * reference.sigma() + (reference.mean - limit).abs(), "{tau}");
    }

    #[test]
    fn trace_fast_path_matches_eigenvalue_path() {
        let w = gaussian_window(30, 70, 5).unwrap();
        for k in 0..=4 {
            let phi = TestFunction::Power { k };
            let fast = Indicator::les(phi.clone()).evaluate(&w, 0).unwrap();
            let slow = les(&covariance_spectrum(&w, 0).unwrap(), &phi).unwrap();
            assert!((fast - slow).abs() <= 1e-9 * slow.abs().max(1.0));
        }
    }

    #[test]
    fn monte_carlo_mean_agrees_with_quadrature() {
        let (n, t) = (40, 100);
        let phi = TestFunction::Power { k: 2 };
        let r = calibrate_reference(&Indicator::les(phi.clone()), n, t, 400, 9).unwrap();
        let q = Indicator::les(phi).theoretical_mean(n, t).unwrap();
        let stderr = (r.variance / r.trials as f64).sqrt();
        // Standardization removes one degree of freedom per row, a bias of
        // order 1/T that the stderr bound does not cover; allow for it.
        let bias = n as f64 * n as f64 / (t as f64 * t as f64);
        assert!((r.mean - q).abs() <= 3.0 * stderr + bias, "{} vs {q} (stderr {stderr})", r.mean);
    }

    #[test]
    fn calibration_is_reproducible() {
        let ind = Indicator::les(TestFunction::LikelihoodRatio);
        let a = calibrate_reference(&ind, 10, 30, 100, 1).unwrap();
        let b = calibrate_reference(&ind, 10, 30, 100, 1).unwrap();
        assert_eq!(a, b);
        assert!(calibrate_reference(&ind, 10, 30, 50, 1).is_err());
    }

    #[test]
    fn normalized_indicator_cases() {
        let r = IndicatorReference {
            indicator: Indicator::msr(),
            law: LawSpec::ring(0.5, 1).unwrap(),
            n: 10,
            t: 20,
            mean: 0.8,
            variance: 1e-4,
            source: ReferenceSource::MonteCarlo,
            trials: 100,
            seed: 0,
        };
        assert_eq!(normalized_indicator(0.8, &r).unwrap(), 1.0);
        assert_eq!(normalized_indicator(0.0, &r).unwrap(), 0.0);
        let zero = IndicatorReference { mean: 0.0, ..r };
        assert!(matches!(normalized_indicator(1.0, &zero), Err(Error::DegenerateReference)));
    }

    #[test]
    fn outliers_on_planted_and_null_spectra() {
        let (n, t) = (118, 240);
        let c = n as f64 / t as f64;
        let law = LawSpec::marchenko_pastur(c).unwrap();
        let (_, b) = mp_support(c).unwrap();
        let mut few = 0;
        let mut exact_edge_total = 0;
        for seed in 0..20 {
            let s = covariance_spectrum(&gaussian_window(n, t, 50 + seed).unwrap(), seed).unwrap();
            if outlier_count(&s, &law, 0.05) <= 2 {
                few += 1;
            }
            exact_edge_total += outlier_count(&s, &law, 0.0);
            if seed == 0 {
                let mut v = s.real_values().unwrap().to_vec();
                v.iter_mut().take(5).for_each(|x| *x = 2.0 * b);
                assert!(outlier_count(&real_sample(v), &law, 0.05) >= 5);
            }
        }
        assert!(few >= 19, "{few} / 20");
        assert!(exact_edge_total > 0);
    }

    #[test]
    fn ring_outliers_on_null_data() {
        let (n, t) = (118, 240);
        let law = LawSpec::ring(n as f64 / t as f64, 1).unwrap();
        let few = (0..20)
            .filter(|&seed| {
                let s = ring_spectrum(&gaussian_window(n, t, 70 + seed).unwrap(), 1, seed).unwrap();
                outlier_count(&s, &law, 0.05) <= 2
            })
            .count();
        assert!(few >= 19, "{few} / 20");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn les_is_linear_and_order_free(
            mut values in proptest::collection::vec(0.01f64..5.0, 1..40),
            alpha in -3.0f64..3.0,
            beta in -3.0f64..3.0,
        ) {
            let f1 = TestFunction::Power { k: 3 };
            let f2 = TestFunction::LikelihoodRatio;
            let combo = TestFunction::Combination { terms: vec![(alpha, f1.clone()), (beta, f2.clone())] };
            let s = real_sample(values.clone());
            let lhs = les(&s, &combo).unwrap();
            let rhs = alpha * les(&s, &f1).unwrap() + beta * les(&s, &f2).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs().max(rhs.abs())));

            values.reverse();
            let r = real_sample(values);
            prop_assert_eq!(les(&r, &combo).unwrap(), lhs);
        }
    }
}
