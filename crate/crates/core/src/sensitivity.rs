//! Correlation analysis on concatenated matrices `[B; C]`: ranking candidate
//! factors against a random baseline, and estimating measurement delays.

use std::collections::BTreeMap;

use faer::Mat;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::indicators::{Indicator, TestFunction};
use crate::laws::gaussian_window;
use crate::matrix::{is_degenerate, row_moments, standardize_in_place, standardize_rows, MeasurementWindow};
use crate::rng;

/// Candidate influencing factor: `N_f x T` rows on the basic matrix's time axis.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorMatrix {
    id: String,
    values: Mat<f64>,
}

impl FactorMatrix {
    pub fn new(id: impl Into<String>, values: Mat<f64>) -> Result<Self> {
        let id = id.into();
        let (n, t) = values.shape();
        if n == 0 || t < 2 {
            return Err(Error::Shape(format!("factor `{id}` is {n} x {t}")));
        }
        if (0..t).any(|j| (0..n).any(|i| !values[(i, j)].is_finite())) {
            return Err(Error::Domain(format!("factor `{id}` has non-finite values")));
        }
        Ok(Self { id, values })
    }

    pub fn from_rows(id: impl Into<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let t = rows.first().map_or(0, Vec::len);
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != t) {
            return Err(Error::NonRectangular { row: i, expected: t, found: r.len() });
        }
        Self::new(id, Mat::from_fn(rows.len(), t, |i, j| rows[i][j]))
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn values(&self) -> &Mat<f64> {
        &self.values
    }

    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.values.ncols()
    }

    /// Columns `[lo, lo + len)` with each row standardized over that range;
    /// constant rows are left as they are.
    fn standardized_range(&self, lo: usize, len: usize) -> Mat<f64> {
        let mut out = self.values.as_ref().subcols(lo, len).to_owned();
        for i in 0..out.nrows() {
            let mut row: Vec<f64> = (0..len).map(|j| out[(i, j)]).collect();
            let (mean, var) = row_moments(&row);
            if !is_degenerate(mean, var) {
                standardize_in_place(&mut row);
                (0..len).for_each(|j| out[(i, j)] = row[j]);
            }
        }
        out
    }
}

/// Number of copies of each factor row, `ceil(0.05 N_b / N_f)` and at least 1.
pub fn duplication_factor(n_basic: usize, n_factor: usize) -> usize {
    ((0.05 * n_basic as f64 / n_factor as f64).ceil() as usize).max(1)
}

fn stack(b: &Mat<f64>, c: &Mat<f64>, copies: usize) -> Mat<f64> {
    let (nb, nf) = (b.nrows(), c.nrows());
    Mat::from_fn(nb + copies * nf, b.ncols(), |i, j| {
        if i < nb {
            b[(i, j)]
        } else {
            c[((i - nb) % nf, j)]
        }
    })
}

/// `[B; C]` with the factor rows standardized and repeated
/// [`duplication_factor`] times.
pub fn concatenate(b: &MeasurementWindow, c: &FactorMatrix) -> Result<MeasurementWindow> {
    if b.n_samples() != c.n_samples() {
        return Err(Error::ShapeMismatch(format!(
            "basic matrix has {} samples, factor `{}` has {}",
            b.n_samples(),
            c.id,
            c.n_samples()
        )));
    }
    let copies = duplication_factor(b.n_nodes(), c.n_rows());
    let values = stack(b.values(), &c.standardized_range(0, c.n_samples()), copies);
    let mut ids = b.node_ids().to_vec();
    for k in 0..copies {
        for r in 0..c.n_rows() {
            let mut id = c.id.clone();
            if c.n_rows() > 1 {
                id += &format!(".{}", r + 1);
            }
            if k > 0 {
                id += &format!("#{}", k + 1);
            }
            ids.push(id);
        }
    }
    MeasurementWindow::new(values, ids, b.t_start())
}

fn default_indicator() -> Indicator {
    Indicator::les(TestFunction::Power { k: 2 })
}

fn default_random_factors() -> usize {
    20
}

fn default_stride() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityConfig {
    pub width: usize,
    #[serde(default = "default_stride")]
    pub stride: usize,
    #[serde(default = "default_indicator")]
    pub indicator: Indicator,
    /// Gaussian factors averaged into the random baseline curve.
    #[serde(default = "default_random_factors")]
    pub random_factors: usize,
    /// Only windows overlapping `[start, end]` are scored.
    #[serde(default)]
    pub event: Option<(usize, usize)>,
    #[serde(default)]
    pub seed: u64,
}

impl SensitivityConfig {
    pub fn new(width: usize) -> Self {
        Self {
            width,
            stride: 1,
            indicator: default_indicator(),
            random_factors: default_random_factors(),
            event: None,
            seed: 0,
        }
    }
}

/// One column of work for the window engine: standardized factor rows over
/// the basic matrix's time axis.
struct Candidate {
    rows: Mat<f64>,
    copies: usize,
    mean: f64,
}

struct Engine<'a> {
    b: &'a MeasurementWindow,
    cfg: &'a SensitivityConfig,
    spans: Vec<(usize, usize)>,
}

impl<'a> Engine<'a> {
    fn new(b: &'a MeasurementWindow, cfg: &'a SensitivityConfig) -> Result<Self> {
        if cfg.stride == 0 || cfg.width < 2 {
            return Err(Error::InvalidWindow(format!("width {} / stride {}", cfg.width, cfg.stride)));
        }
        if cfg.random_factors < 2 {
            return Err(Error::Config("random baseline needs at least 2 factors".into()));
        }
        if b.n_samples() < cfg.width {
            return Err(Error::StreamTooShort { needed: cfg.width, available: b.n_samples() });
        }
        let count = (b.n_samples() - cfg.width) / cfg.stride + 1;
        let spans: Vec<_> = (0..count)
            .map(|k| {
                let lo = b.t_start() + k * cfg.stride;
                (lo, lo + cfg.width - 1)
            })
            .filter(|&(lo, hi)| cfg.event.is_none_or(|(e0, e1)| lo <= e1 && hi >= e0))
            .collect();
        if spans.is_empty() {
            return Err(Error::InvalidWindow("no window overlaps the event interval".into()));
        }
        Ok(Self { b, cfg, spans })
    }

    fn candidate(&self, rows: Mat<f64>) -> Result<Candidate> {
        let copies = duplication_factor(self.b.n_nodes(), rows.nrows());
        let n = self.b.n_nodes() + copies * rows.nrows();
        let mean = self.cfg.indicator.theoretical_mean(n, self.cfg.width)?;
        if mean == 0.0 {
            return Err(Error::DegenerateReference);
        }
        Ok(Candidate { rows, copies, mean })
    }

    fn random_factors(&self, n_rows: usize, t: usize) -> Result<Vec<FactorMatrix>> {
        (0..self.cfg.random_factors)
            .map(|j| {
                let s = rng::derive_seed(self.cfg.seed, &[0x7a, n_rows as u64, j as u64]);
                let r = gaussian_window(n_rows.max(2), t, s)?;
                FactorMatrix::new(format!("random-{j}"), r.values().as_ref().subrows(0, n_rows).to_owned())
            })
            .collect()
    }

    fn random_candidates(&self, n_rows: usize) -> Result<Vec<Candidate>> {
        let t = self.b.n_samples();
        self.random_factors(n_rows, t)?
            .iter()
            .map(|r| self.candidate(r.standardized_range(0, t)))
            .collect()
    }

    /// `mu_0` per window (rows) and candidate (columns).
    fn curves(&self, cands: &[Candidate]) -> Result<Vec<Vec<f64>>> {
        self.spans
            .par_iter()
            .map(|&(lo, hi)| self.window_values(lo, hi, cands))
            .collect()
    }

    fn window_values(&self, lo: usize, hi: usize, cands: &[Candidate]) -> Result<Vec<f64>> {
        let w = self.b.span(lo, hi)?;
        let off = lo - self.b.t_start();
        let width = self.cfg.width;
        let full = |c: &Candidate| -> Result<f64> {
            let cw = c.rows.as_ref().subcols(off, width).to_owned();
            let a = MeasurementWindow::new(
                stack(w.values(), &cw, c.copies),
                (0..w.n_nodes() + c.copies * cw.nrows()).map(|i| i.to_string()).collect(),
                lo,
            )?;
            self.cfg.indicator.evaluate(&a, self.cfg.seed)
        };
        if self.cfg.indicator != default_indicator() {
            return cands.iter().map(|c| Ok(full(c)? / c.mean)).collect();
        }

        // trace(M^2) of [B; C] splits into |M_BB|^2 + 2|M_BC|^2 + |M_CC|^2,
        // so B's block is shared and all factor blocks come from one product.
        let xb = standardize_rows(&w, self.cfg.seed)?;
        let t2 = (width * width) as f64;
        let bb = frobenius_sq(&(xb.values() * xb.values().transpose())) / t2;
        let slices: Vec<Option<Mat<f64>>> =
            cands.iter().map(|c| slice_standardized(&c.rows, off, width)).collect();
        let total: usize = slices.iter().flatten().map(|x| x.nrows()).sum();
        let mut xc = Mat::<f64>::zeros(total, width);
        let mut r = 0;
        for x in slices.iter().flatten() {
            xc.as_mut().subrows_mut(r, x.nrows()).copy_from(x);
            r += x.nrows();
        }
        let g = xb.values() * xc.transpose();
        let col_sq: Vec<f64> = g.col_iter().map(|c| c.iter().map(|v| v * v).sum()).collect();

        let mut r = 0;
        cands
            .iter()
            .zip(&slices)
            .map(|(c, x)| {
                let tau = match x {
                    Some(x) => {
                        let k = c.copies as f64;
                        let bc = col_sq[r..r + x.nrows()].iter().sum::<f64>() / t2;
                        r += x.nrows();
                        let cc = frobenius_sq(&(x * x.transpose())) / t2;
                        bb + 2.0 * k * bc + k * k * cc
                    }
                    None => full(c)?,
                };
                Ok(tau / c.mean)
            })
            .collect()
    }
}

fn frobenius_sq(m: &Mat<f64>) -> f64 {
    m.col_iter().map(|c| c.iter().map(|x| x * x).sum::<f64>()).sum()
}

/// Factor rows of one window standardized, or `None` if any row is constant.
fn slice_standardized(rows: &Mat<f64>, off: usize, len: usize) -> Option<Mat<f64>> {
    let mut out = Mat::zeros(rows.nrows(), len);
    for i in 0..rows.nrows() {
        let mut row: Vec<f64> = (0..len).map(|j| rows[(i, off + j)]).collect();
        let (mean, var) = row_moments(&row);
        if is_degenerate(mean, var) {
            return None;
        }
        standardize_in_place(&mut row);
        (0..len).for_each(|j| out[(i, j)] = row[j]);
    }
    Some(out)
}

fn column(curves: &[Vec<f64>], j: usize) -> impl Iterator<Item = f64> + '_ {
    curves.iter().map(move |row| row[j])
}

/// Average of the baseline columns `base..base + m`, and leave-one-out scores.
fn baseline(curves: &[Vec<f64>], base: usize, m: usize) -> (Vec<f64>, Baseline) {
    let sums: Vec<f64> = curves.iter().map(|row| row[base..base + m].iter().sum()).collect();
    let avg: Vec<f64> = sums.iter().map(|s| s / m as f64).collect();
    let scores = (0..m)
        .map(|j| {
            column(curves, base + j)
                .zip(&sums)
                .map(|(v, s)| (v - (s - v) / (m - 1) as f64).abs())
                .fold(0.0, f64::max)
        })
        .collect();
    (avg, Baseline::from_scores(scores))
}

fn sup_deviation(curves: &[Vec<f64>], j: usize, avg: &[f64]) -> f64 {
    column(curves, j).zip(avg).map(|(v, a)| (v - a).abs()).fold(0.0, f64::max)
}

/// Spread of the random factors' own scores against the others' average.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub scores: Vec<f64>,
    pub mean: f64,
    pub sd: f64,
}

impl Baseline {
    fn from_scores(scores: Vec<f64>) -> Self {
        let m = scores.len() as f64;
        let mean = scores.iter().sum::<f64>() / m;
        let sd = (scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (m - 1.0)).sqrt();
        Self { scores, mean, sd }
    }

    /// Whether `score` is within `k` standard deviations above the baseline mean.
    pub fn contains(&self, score: f64, k: f64) -> bool {
        score <= self.mean + k * self.sd
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorScore {
    pub factor_id: String,
    /// Sup over windows of `|mu_0([B; C]) - mean_R mu_0([B; R])|`.
    pub score: f64,
    pub rank: usize,
    pub baseline_mean: f64,
    pub baseline_sd: f64,
}

/// Scores every factor against a random baseline of the same row count,
/// ranked by descending score with ties broken by factor id.
pub fn rank_factors(
    b: &MeasurementWindow,
    factors: &[FactorMatrix],
    cfg: &SensitivityConfig,
) -> Result<Vec<FactorScore>> {
    if factors.is_empty() {
        return Err(Error::Config("no factors to rank".into()));
    }
    if let Some(c) = factors.iter().find(|c| c.n_samples() != b.n_samples()) {
        return Err(Error::ShapeMismatch(format!(
            "basic matrix has {} samples, factor `{}` has {}",
            b.n_samples(),
            c.id,
            c.n_samples()
        )));
    }
    let engine = Engine::new(b, cfg)?;
    let mut cands = factors
        .iter()
        .map(|c| engine.candidate(c.standardized_range(0, c.n_samples())))
        .collect::<Result<Vec<_>>>()?;
    let mut groups = BTreeMap::new();
    for c in factors {
        if let std::collections::btree_map::Entry::Vacant(e) = groups.entry(c.n_rows()) {
            e.insert(cands.len());
            cands.extend(engine.random_candidates(c.n_rows())?);
        }
    }
    let curves = engine.curves(&cands)?;
    let baselines: BTreeMap<usize, (Vec<f64>, Baseline)> = groups
        .iter()
        .map(|(&rows, &base)| (rows, baseline(&curves, base, cfg.random_factors)))
        .collect();

    let mut scores: Vec<FactorScore> = factors
        .iter()
        .enumerate()
        .map(|(j, c)| {
            let (avg, base) = &baselines[&c.n_rows()];
            FactorScore {
                factor_id: c.id.clone(),
                score: sup_deviation(&curves, j, avg),
                rank: 0,
                baseline_mean: base.mean,
                baseline_sd: base.sd,
            }
        })
        .collect();
    scores.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.factor_id.cmp(&b.factor_id)));
    scores.iter_mut().enumerate().for_each(|(i, s)| s.rank = i + 1);
    Ok(scores)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftScore {
    pub shift: isize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayScan {
    /// Shift `s` maximizing the score, where the factor is read as
    /// `c[t + s]`; a factor lagging `B` by `d` samples peaks at `s = d`.
    pub estimated_delay: isize,
    pub profile: Vec<ShiftScore>,
    /// Profile peaks of the random factors scanned over the same shifts.
    pub baseline: Baseline,
    /// The peak does not clear the random baseline by three deviations.
    pub low_confidence: bool,
}

/// Scores the factor at every shift in `[-max_shift, max_shift]` over the
/// common range `[t_start + max_shift, t_end - max_shift]` of `B`.
pub fn delay_scan(
    b: &MeasurementWindow,
    c: &FactorMatrix,
    max_shift: usize,
    cfg: &SensitivityConfig,
) -> Result<DelayScan> {
    let t = b.n_samples();
    if c.n_samples() != t {
        return Err(Error::ShapeMismatch(format!(
            "basic matrix has {t} samples, factor `{}` has {}",
            c.id,
            c.n_samples()
        )));
    }
    if 2 * max_shift >= t {
        return Err(Error::InvalidWindow(format!("shift {max_shift} not below half of {t} samples")));
    }
    let len = t - 2 * max_shift;
    let core = b.span(b.t_start() + max_shift, b.t_end() - max_shift)?;
    let engine = Engine::new(&core, cfg)?;

    let m = max_shift as isize;
    let shifts: Vec<isize> = (-m..=m).collect();
    let at_shifts = |f: &FactorMatrix| -> Result<Vec<Candidate>> {
        shifts
            .iter()
            .map(|&s| engine.candidate(f.standardized_range((m + s) as usize, len)))
            .collect()
    };
    // Random factors go through the same shifts, so their peaks give the
    // null distribution of the profile maximum.
    let mut cands = at_shifts(c)?;
    let randoms = engine.random_factors(c.n_rows(), t)?;
    for r in &randoms {
        cands.extend(at_shifts(r)?);
    }
    let curves = engine.curves(&cands)?;

    let k = shifts.len();
    let n_r = randoms.len();
    let zero = |j: usize| k * (j + 1) + max_shift;
    let sums: Vec<f64> = curves.iter().map(|row| (0..n_r).map(|j| row[zero(j)]).sum()).collect();
    let avg: Vec<f64> = sums.iter().map(|s| s / n_r as f64).collect();
    let peaks = (0..n_r)
        .map(|j| {
            let others: Vec<f64> = curves
                .iter()
                .zip(&sums)
                .map(|(row, s)| (s - row[zero(j)]) / (n_r - 1) as f64)
                .collect();
            (0..k)
                .map(|i| sup_deviation(&curves, k * (j + 1) + i, &others))
                .fold(0.0, f64::max)
        })
        .collect();
    let baseline = Baseline::from_scores(peaks);

    let profile: Vec<ShiftScore> = shifts
        .iter()
        .enumerate()
        .map(|(j, &shift)| ShiftScore { shift, score: sup_deviation(&curves, j, &avg) })
        .collect();
    let best = profile
        .iter()
        .copied()
        .reduce(|best, p| {
            let better = p.score > best.score
                || (p.score == best.score && p.shift.unsigned_abs() < best.shift.unsigned_abs());
            if better { p } else { best }
        })
        .expect("at least one shift");
    Ok(DelayScan {
        estimated_delay: best.shift,
        low_confidence: baseline.contains(best.score, 3.0),
        profile,
        baseline,
    })
}
