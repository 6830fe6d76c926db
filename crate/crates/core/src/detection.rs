//! Moving split window: one analysis matrix per step, an indicator value per
//! window, and threshold events on the resulting curve.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::indicators::{calibrate_reference, Indicator, IndicatorReference};
use crate::matrix::MeasurementWindow;
use crate::rng;

/// Default event threshold in units of the reference sigma.
pub const DEFAULT_K: f64 = 5.0;

fn default_stride() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowConfig {
    /// Row indices of the analysed nodes; all rows when absent.
    #[serde(default)]
    pub nodes: Option<Vec<usize>>,
    pub width: usize,
    #[serde(default = "default_stride")]
    pub stride: usize,
    pub indicators: Vec<Indicator>,
}

impl WindowConfig {
    pub fn new(width: usize, indicators: Vec<Indicator>) -> Self {
        Self { nodes: None, width, stride: 1, indicators }
    }

    /// Number of analysed rows for a stream with `n_rows` rows.
    pub fn n_selected(&self, n_rows: usize) -> usize {
        self.nodes.as_ref().map_or(n_rows, Vec::len)
    }

    pub fn validate(&self, n_rows: usize) -> Result<()> {
        if self.stride == 0 {
            return Err(Error::InvalidWindow("stride must be at least 1".into()));
        }
        if self.width < 2 {
            return Err(Error::InvalidWindow(format!("window width {} below 2", self.width)));
        }
        if let Some(rows) = &self.nodes {
            if let Some(r) = rows.iter().find(|&&r| r >= n_rows) {
                return Err(Error::InvalidWindow(format!("node row {r} outside {n_rows} rows")));
            }
        }
        let n = self.n_selected(n_rows);
        let needs_square = self.indicators.iter().any(|i| matches!(i, Indicator::Les { .. }));
        if needs_square && self.width < n {
            return Err(Error::InvalidWindow(format!(
                "covariance indicators need width >= {n} nodes, got {}",
                self.width
            )));
        }
        Ok(())
    }
}

/// Windows `[t_end - width + 1, t_end]`, anchored at the start of the stream.
pub fn slide(stream: &MeasurementWindow, cfg: &WindowConfig) -> Result<Vec<MeasurementWindow>> {
    cfg.validate(stream.n_nodes())?;
    let selected = match &cfg.nodes {
        Some(rows) => stream.select_rows(rows)?,
        None => stream.clone(),
    };
    let total = selected.n_samples();
    if total < cfg.width {
        return Err(Error::StreamTooShort { needed: cfg.width, available: total });
    }
    let count = (total - cfg.width) / cfg.stride + 1;
    let t0 = selected.t_start();
    (0..count)
        .map(|k| {
            let lo = t0 + k * cfg.stride;
            selected.span(lo, lo + cfg.width - 1)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub t_end: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowGap {
    pub t_end: usize,
    pub error: String,
}

/// Indicator values per window in `t_end` order, with failed windows kept
/// as gaps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndicatorSeries {
    pub indicator: Indicator,
    pub reference: IndicatorReference,
    pub stride: usize,
    pub points: Vec<SeriesPoint>,
    pub gaps: Vec<WindowGap>,
}

impl IndicatorSeries {
    pub fn name(&self) -> String {
        self.indicator.name()
    }

    /// Signed deviation from the reference mean in sigma units.
    pub fn sigma_magnitude(&self, value: f64) -> Result<f64> {
        self.reference.z_score(value)
    }

    /// Largest `|sigma_magnitude|` over the points with `t_end` in `[lo, hi]`.
    pub fn peak_magnitude(&self, lo: usize, hi: usize) -> Result<f64> {
        self.points
            .iter()
            .filter(|p| (lo..=hi).contains(&p.t_end))
            .try_fold(0.0_f64, |m, p| Ok(m.max(self.sigma_magnitude(p.value)?.abs())))
    }
}

/// Monte Carlo references for every indicator of `cfg` at the window shape.
pub fn calibrate_config(
    cfg: &WindowConfig,
    n_rows: usize,
    trials: usize,
    seed: u64,
) -> Result<Vec<IndicatorReference>> {
    let n = cfg.n_selected(n_rows);
    cfg.indicators
        .iter()
        .enumerate()
        .map(|(i, ind)| calibrate_reference(ind, n, cfg.width, trials, rng::derive_seed(seed, &[i as u64])))
        .collect()
}

fn find_reference<'a>(
    references: &'a [IndicatorReference],
    indicator: &Indicator,
    n: usize,
    t: usize,
) -> Result<&'a IndicatorReference> {
    references
        .iter()
        .find(|r| r.indicator == *indicator && r.n == n && r.t == t)
        .ok_or_else(|| {
            Error::Config(format!("no reference for {} at N={n}, T={t}", indicator.name()))
        })
}

/// Runs every indicator of `cfg` over every window of `stream`.
pub fn indicator_curve(
    stream: &MeasurementWindow,
    cfg: &WindowConfig,
    references: &[IndicatorReference],
    seed: u64,
) -> Result<Vec<IndicatorSeries>> {
    let windows = slide(stream, cfg)?;
    let n = cfg.n_selected(stream.n_nodes());
    let refs = cfg
        .indicators
        .iter()
        .map(|ind| find_reference(references, ind, n, cfg.width))
        .collect::<Result<Vec<_>>>()?;

    let values: Vec<Vec<Result<f64>>> = windows
        .par_iter()
        .map(|w| {
            cfg.indicators
                .iter()
                .map(|ind| {
                    ind.evaluate(w, seed).and_then(|v| {
                        if v.is_finite() {
                            Ok(v)
                        } else {
                            Err(Error::ConvergenceFailure(format!("non-finite {}", ind.name())))
                        }
                    })
                })
                .collect()
        })
        .collect();

    Ok(cfg
        .indicators
        .iter()
        .zip(refs)
        .enumerate()
        .map(|(j, (ind, reference))| {
            let mut points = Vec::with_capacity(windows.len());
            let mut gaps = Vec::new();
            for (w, row) in windows.iter().zip(&values) {
                match &row[j] {
                    Ok(value) => points.push(SeriesPoint { t_end: w.t_end(), value: *value }),
                    Err(e) => gaps.push(WindowGap { t_end: w.t_end(), error: e.to_string() }),
                }
            }
            IndicatorSeries {
                indicator: ind.clone(),
                reference: reference.clone(),
                stride: cfg.stride,
                points,
                gaps,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    Above,
    Below,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyEvent {
    pub indicator: String,
    /// First breaching window end.
    pub t_onset: usize,
    /// Last breaching window end of the contiguous run.
    pub t_last: usize,
    pub direction: Direction,
    /// Peak `|value - mean| / sigma` over the run.
    pub magnitude: f64,
}

/// Runs of windows with `|value - mean| > k sigma`. A run ends at a
/// non-breaching window, a gap, or a change of direction.
pub fn detect(series: &IndicatorSeries, k: f64) -> Result<Vec<AnomalyEvent>> {
    let mut events: Vec<AnomalyEvent> = Vec::new();
    let mut prev_t: Option<usize> = None;
    for p in &series.points {
        let z = series.sigma_magnitude(p.value)?;
        let contiguous = prev_t.is_some_and(|t| p.t_end == t + series.stride);
        prev_t = Some(p.t_end);
        if z.abs() <= k {
            continue;
        }
        let direction = if z > 0.0 { Direction::Above } else { Direction::Below };
        match events.last_mut() {
            Some(e) if contiguous && e.t_last + series.stride == p.t_end && e.direction == direction => {
                e.t_last = p.t_end;
                e.magnitude = e.magnitude.max(z.abs());
            }
            _ => events.push(AnomalyEvent {
                indicator: series.name(),
                t_onset: p.t_end,
                t_last: p.t_end,
                direction,
                magnitude: z.abs(),
            }),
        }
    }
    Ok(events)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::indicators::{ReferenceSource, TestFunction};
    use crate::laws::{gaussian_window, LawSpec};
    use faer::Mat;

    fn reference(mean: f64, variance: f64) -> IndicatorReference {
        IndicatorReference {
            indicator: Indicator::msr(),
            law: LawSpec::ring(0.5, 1).unwrap(),
            n: 10,
            t: 20,
            mean,
            variance,
            source: ReferenceSource::MonteCarlo,
            trials: 100,
            seed: 0,
        }
    }

    fn series(values: &[f64]) -> IndicatorSeries {
        IndicatorSeries {
            indicator: Indicator::msr(),
            reference: reference(1.0, 0.01),
            stride: 1,
            points: values
                .iter()
                .enumerate()
                .map(|(i, &value)| SeriesPoint { t_end: 20 + i, value })
                .collect(),
            gaps: Vec::new(),
        }
    }

    #[test]
    fn window_counts() {
        let stream = gaussian_window(3, 2500, 0).unwrap();
        let cfg = WindowConfig::new(240, vec![Indicator::msr()]);
        let windows = slide(&stream, &cfg).unwrap();
        assert_eq!(windows.len(), 2261);
        assert_eq!(windows[0].t_start(), 1);
        assert_eq!(windows[59].t_start(), 60);
        assert_eq!(windows[59].t_end(), 299);
        assert_eq!(windows.last().unwrap().t_end(), 2500);

        let tiled = slide(&stream, &WindowConfig { stride: 240, ..cfg.clone() }).unwrap();
        assert_eq!(tiled.len(), 10);
        assert!(tiled.windows(2).all(|w| w[1].t_start() == w[0].t_end() + 1));

        let exact = gaussian_window(3, 240, 0).unwrap();
        assert_eq!(slide(&exact, &cfg).unwrap().len(), 1);
        let short = gaussian_window(3, 100, 0).unwrap();
        assert!(matches!(slide(&short, &cfg), Err(Error::StreamTooShort { .. })));
        assert!(slide(&stream, &WindowConfig { stride: 0, ..cfg }).is_err());
    }

    #[test]
    fn covariance_indicators_need_wide_windows() {
        let stream = gaussian_window(30, 100, 0).unwrap();
        let cfg = WindowConfig::new(20, vec![Indicator::les(TestFunction::Power { k: 2 })]);
        assert!(matches!(slide(&stream, &cfg), Err(Error::InvalidWindow(_))));
    }

    #[test]
    fn node_selection() {
        let stream = gaussian_window(5, 50, 0).unwrap();
        let cfg = WindowConfig { nodes: Some(vec![4, 1]), ..WindowConfig::new(10, vec![Indicator::msr()]) };
        let w = slide(&stream, &cfg).unwrap();
        assert_eq!(w[0].node_ids(), ["5", "2"]);
        assert_eq!(w[0].row(0), stream.span(1, 10).unwrap().row(4));
    }

    #[test]
    fn flat_series_has_no_events() {
        assert!(detect(&series(&[1.0; 50]), DEFAULT_K).unwrap().is_empty());
    }

    #[test]
    fn single_spike_gives_one_event() {
        let mut v = vec![1.0; 50];
        v[17] = 2.0; // 10 sigma
        let events = detect(&series(&v), DEFAULT_K).unwrap();
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].t_onset, 37);
        assert_eq!(events[0].direction, Direction::Above);
        assert!((events[0].magnitude - 10.0).abs() < 1e-9);
    }

    #[test]
    fn runs_merge_and_split() {
        let mut v = vec![1.0; 50];
        v[10..15].iter_mut().for_each(|x| *x = 0.2);
        v[15] = 1.9;
        v[30] = 1.6;
        let events = detect(&series(&v), DEFAULT_K).unwrap();
        assert_eq!(events.len(), 3);
        assert_eq!((events[0].t_onset, events[0].t_last), (30, 34));
        assert_eq!(events[0].direction, Direction::Below);
        assert_eq!(events[1].t_onset, 35);
        assert_eq!(events[2].t_onset, 50);
        assert!(events.iter().all(|e| e.magnitude >= DEFAULT_K));
    }

    #[test]
    fn gaps_break_runs() {
        let mut s = series(&[2.0; 6]);
        s.points.remove(3);
        let events = detect(&s, DEFAULT_K).unwrap();
        assert_eq!(events.len(), 2);
    }

    #[test]
    fn zero_variance_reference_rejected() {
        let mut s = series(&[1.0; 3]);
        s.reference.variance = 0.0;
        assert!(matches!(detect(&s, DEFAULT_K), Err(Error::DegenerateReference)));
    }

    #[test]
    fn null_stream_stays_within_band() {
        let (n, width) = (20, 50);
        let cfg = WindowConfig { stride: 5, ..WindowConfig::new(width, vec![Indicator::msr()]) };
        let refs = calibrate_config(&cfg, n, 300, 1).unwrap();
        let stream = gaussian_window(n, 1000, 2).unwrap();
        let curve = &indicator_curve(&stream, &cfg, &refs, 3).unwrap()[0];
        assert_eq!(curve.points.len(), 191);
        assert!(curve.gaps.is_empty());
        assert!(curve.points.windows(2).all(|w| w[0].t_end < w[1].t_end));
        let inside = curve
            .points
            .iter()
            .filter(|p| curve.sigma_magnitude(p.value).unwrap().abs() <= 5.0)
            .count();
        assert!(inside as f64 >= 0.99 * curve.points.len() as f64);
    }

    #[test]
    fn step_departs_while_inside_window() {
        let (n, width, t0) = (20, 60, 301);
        let cfg = WindowConfig::new(width, vec![Indicator::msr()]);
        let refs = calibrate_config(&cfg, n, 300, 4).unwrap();
        let noise = gaussian_window(n, 600, 5).unwrap();
        let values = Mat::from_fn(n, 600, |i, t| {
            let step = if i < 4 && t + 1 >= t0 { 5.0 } else { 0.0 };
            noise.values()[(i, t)] + step
        });
        let stream = MeasurementWindow::from_rows(
            &(0..n).map(|i| values.row(i).iter().copied().collect()).collect::<Vec<_>>(),
        )
        .unwrap();
        let curve = &indicator_curve(&stream, &cfg, &refs, 6).unwrap()[0];
        let events = detect(curve, DEFAULT_K).unwrap();
        assert!(!events.is_empty());
        assert!(events.iter().all(|e| e.t_onset >= t0 && e.t_onset < t0 + width), "{events:?}");
        // persistence: depressed for every window containing both sides of the step
        let depressed = curve
            .points
            .iter()
            .filter(|p| p.t_end >= t0 && p.t_end <= t0 + width - 2)
            .filter(|p| curve.sigma_magnitude(p.value).unwrap() < 0.0)
            .count();
        assert_eq!(depressed, width - 1);
    }

    #[test]
    fn repeated_windows_give_identical_values() {
        let base = gaussian_window(8, 30, 7).unwrap();
        let rows: Vec<Vec<f64>> = (0..8)
            .map(|i| {
                let r = base.row(i);
                r.iter().chain(r.iter()).copied().collect()
            })
            .collect();
        let stream = MeasurementWindow::from_rows(&rows).unwrap();
        let cfg = WindowConfig { stride: 30, ..WindowConfig::new(30, vec![Indicator::les(TestFunction::Power { k: 2 })]) };
        let refs = calibrate_config(&cfg, 8, 100, 0).unwrap();
        let curve = &indicator_curve(&stream, &cfg, &refs, 1).unwrap()[0];
        assert_eq!(curve.points.len(), 2);
        assert_eq!(curve.points[0].value, curve.points[1].value);
    }

    #[test]
    fn missing_reference_is_reported() {
        let stream = gaussian_window(5, 40, 0).unwrap();
        let cfg = WindowConfig::new(20, vec![Indicator::msr()]);
        assert!(matches!(indicator_curve(&stream, &cfg, &[], 0), Err(Error::Config(_))));
    }
}
