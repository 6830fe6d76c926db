use crate::error::Result;
use crate::laws::LawSpec;

/// Empirical spectral distribution `F(x) = #{lambda_i <= x} / N`.
#[derive(Debug, Clone, PartialEq)]
pub struct EsdFunction {
    sorted: Vec<f64>,
}

impl EsdFunction {
    pub fn new(mut values: Vec<f64>) -> Self {
        values.sort_by(f64::total_cmp);
        Self { sorted: values }
    }

    pub fn values(&self) -> &[f64] {
        &self.sorted
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn eval(&self, x: f64) -> f64 {
        if self.sorted.is_empty() {
            return 0.0;
        }
        self.sorted.partition_point(|&v| v <= x) as f64 / self.sorted.len() as f64
    }

    /// Left limit `F(x-)`.
    pub fn eval_left(&self, x: f64) -> f64 {
        if self.sorted.is_empty() {
            return 0.0;
        }
        self.sorted.partition_point(|&v| v < x) as f64 / self.sorted.len() as f64
    }
}

/// Kolmogorov distance to the law's distribution function, with the location
/// of the largest gap.
///
/// The supremum is taken over both one-sided limits at every jump of `F` and
/// over `10 N` interior points of the law's support.
pub fn kolmogorov_distance_at(f: &EsdFunction, g: &LawSpec) -> Result<(f64, f64)> {
    g.cdf(0.0)?;
    let mut best = (0.0_f64, f64::NAN);
    let mut consider = |x: f64, fx: f64, gx: f64| {
        let d = (fx - gx).abs();
        if best.1.is_nan() || d > best.0 {
            best = (d, x);
        }
    };
    for &x in f.values() {
        let gx = g.cdf(x)?;
        consider(x, f.eval(x), gx);
        consider(x, f.eval_left(x), gx);
    }
    let (lo, hi) = g.support();
    let points = 10 * f.len().max(1);
    for k in 1..=points {
        let x = lo + (hi - lo) * k as f64 / (points + 1) as f64;
        consider(x, f.eval(x), g.cdf(x)?);
    }
    Ok((best.0.clamp(0.0, 1.0), best.1))
}

pub fn kolmogorov_distance(f: &EsdFunction, g: &LawSpec) -> Result<f64> {
    kolmogorov_distance_at(f, g).map(|(d, _)| d)
}
