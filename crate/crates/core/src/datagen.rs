//! Synthetic grid scenarios: scheduled load events, multiplicative and
//! additive load noise, a linear voltage response, and measurement delays.
//!
//! Node numbers in scenarios are 1-based; matrix rows are 0-based.

use std::collections::BTreeMap;
use std::path::Path;

use faer::Mat;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{default_labels, MeasurementWindow};
use crate::rng;

/// Load of an event node over one interval, in MW.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LoadProfile {
    None,
    Step { mw: f64 },
    /// `slope * t + intercept` with `t` the 1-based sample index.
    Ramp { slope: f64, intercept: f64 },
}

impl LoadProfile {
    pub fn at(&self, t: usize) -> f64 {
        match *self {
            Self::None => 0.0,
            Self::Step { mw } => mw,
            Self::Ramp { slope, intercept } => slope * t as f64 + intercept,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadEvent {
    pub node: usize,
    pub t_start: usize,
    pub t_end: usize,
    pub profile: LoadProfile,
}

/// `y (1 + gamma_mul r1) + gamma_acc r2` with standard normal `r1`, `r2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadNoise {
    pub gamma_mul: f64,
    pub gamma_acc: f64,
}

impl Default for LoadNoise {
    fn default() -> Self {
        Self { gamma_mul: 0.001, gamma_acc: 0.1 }
    }
}

/// Parameters of the built-in sensitivity matrix
/// `scale * (I + coupling * K)` with `K_ij = exp(-d(i, j) / length)` for
/// `i != j` and `d` the hop distance on a ring of nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RingSensitivity {
    pub scale: f64,
    pub coupling: f64,
    pub length: f64,
}

impl Default for RingSensitivity {
    fn default() -> Self {
        Self { scale: 1.0 / 3000.0, coupling: 0.03, length: 3.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ResponseSpec {
    Ring(RingSensitivity),
    /// Sensitivity matrix read from a headerless N x N CSV file.
    File { path: String },
}

impl Default for ResponseSpec {
    fn default() -> Self {
        Self::Ring(RingSensitivity::default())
    }
}

fn default_v_base() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub n_nodes: usize,
    pub t_total: usize,
    #[serde(default)]
    pub events: Vec<LoadEvent>,
    #[serde(default)]
    pub noise: LoadNoise,
    #[serde(default)]
    pub response: ResponseSpec,
    /// Base voltage shared by all nodes.
    #[serde(default = "default_v_base")]
    pub v_base: f64,
    /// Base load range in MW for nodes without events, drawn once per node.
    #[serde(default = "Scenario::default_base_load")]
    pub base_load: (f64, f64),
    /// Measurement delay in samples per node.
    #[serde(default)]
    pub delays: BTreeMap<usize, usize>,
    #[serde(default)]
    pub seed: u64,
}

impl Scenario {
    fn default_base_load() -> (f64, f64) {
        (20.0, 80.0)
    }

    /// Event node of the built-in 118-node schedule.
    pub const EVENT_NODE: usize = 52;
    /// Nodes delayed in the asynchronous-measurement case.
    pub const DELAYED_NODES: [usize; 7] = [11, 14, 50, 52, 53, 77, 81];

    /// 118 nodes and 2500 samples; node 52 carries no load until t = 500,
    /// then 30 MW, 120 MW from t = 901, and `t/4 - 205` MW from t = 1301.
    pub fn table_one(seed: u64) -> Self {
        let node = Self::EVENT_NODE;
        let event = |t_start, t_end, profile| LoadEvent { node, t_start, t_end, profile };
        Self {
            n_nodes: 118,
            t_total: 2500,
            events: vec![
                event(1, 500, LoadProfile::None),
                event(501, 900, LoadProfile::Step { mw: 30.0 }),
                event(901, 1300, LoadProfile::Step { mw: 120.0 }),
                event(1301, 2500, LoadProfile::Ramp { slope: 0.25, intercept: -205.0 }),
            ],
            noise: LoadNoise::default(),
            response: ResponseSpec::default(),
            v_base: default_v_base(),
            base_load: Self::default_base_load(),
            delays: BTreeMap::new(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_nodes < 2 || self.t_total < 2 {
            return Err(Error::Config("scenario needs at least 2 nodes and 2 samples".into()));
        }
        if self.noise.gamma_mul < 0.0 || self.noise.gamma_acc < 0.0 {
            return Err(Error::Config("noise levels must be non-negative".into()));
        }
        let (lo, hi) = self.base_load;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::Config(format!("bad base load range ({lo}, {hi})")));
        }
        for e in &self.events {
            if e.node == 0 || e.node > self.n_nodes {
                return Err(Error::Config(format!("event node {} outside 1..={}", e.node, self.n_nodes)));
            }
            if e.t_start == 0 || e.t_start > e.t_end || e.t_end > self.t_total {
                return Err(Error::Config(format!(
                    "event window [{}, {}] outside [1, {}]",
                    e.t_start, e.t_end, self.t_total
                )));
            }
        }
        for &node in self.delays.keys() {
            if node == 0 || node > self.n_nodes {
                return Err(Error::Config(format!("delayed node {node} outside 1..={}", self.n_nodes)));
            }
        }
        Ok(())
    }

    pub fn response_model(&self) -> Result<ResponseModel> {
        let v_base = vec![self.v_base; self.n_nodes];
        match &self.response {
            ResponseSpec::Ring(p) => ResponseModel::ring(self.n_nodes, *p, v_base),
            ResponseSpec::File { path } => ResponseModel::from_csv(Path::new(path), v_base),
        }
    }

    /// Load matrix, response, then delays, as a window labelled `1..=N`
    /// starting at sample 1.
    pub fn generate(&self) -> Result<MeasurementWindow> {
        let loads = load_series(self)?;
        let mut v = respond(&loads, &self.response_model()?)?;
        if !self.delays.is_empty() {
            let rows = self.delays.iter().map(|(&node, &d)| (node - 1, d)).collect();
            v = asynchronize(&v, &rows)?;
        }
        MeasurementWindow::new(v, default_labels(self.n_nodes), 1)
    }
}

/// Power demand per node and sample, including noise.
pub fn load_series(sc: &Scenario) -> Result<Mat<f64>> {
    sc.validate()?;
    let (n, t_total) = (sc.n_nodes, sc.t_total);
    let mut has_events = vec![false; n];
    sc.events.iter().for_each(|e| has_events[e.node - 1] = true);

    let mut base_rng = rng::stream(sc.seed, &[0xba5e]);
    let (lo, hi) = sc.base_load;
    let base: Vec<f64> = (0..n)
        .map(|_| lo + (hi - lo) * base_rng.random::<f64>())
        .collect();

    let mut y = Mat::from_fn(n, t_total, |i, _| if has_events[i] { 0.0 } else { base[i] });
    for e in &sc.events {
        for t in e.t_start..=e.t_end {
            y[(e.node - 1, t - 1)] += e.profile.at(t);
        }
    }

    let LoadNoise { gamma_mul, gamma_acc } = sc.noise;
    if gamma_mul == 0.0 && gamma_acc == 0.0 {
        return Ok(y);
    }
    for i in 0..n {
        let mut r = rng::stream(sc.seed, &[0x10ad, i as u64]);
        for t in 0..t_total {
            let r1: f64 = r.sample(StandardNormal);
            let r2: f64 = r.sample(StandardNormal);
            y[(i, t)] = y[(i, t)] * (1.0 + gamma_mul * r1) + gamma_acc * r2;
        }
    }
    Ok(y)
}

/// Linear voltage response `V = V_base - Xi P`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseModel {
    xi: Mat<f64>,
    v_base: Vec<f64>,
}

impl ResponseModel {
    pub fn new(xi: Mat<f64>, v_base: Vec<f64>) -> Result<Self> {
        let n = v_base.len();
        if xi.nrows() != n || xi.ncols() != n {
            return Err(Error::ShapeMismatch(format!(
                "sensitivity matrix is {}x{}, base profile has {n} nodes",
                xi.nrows(),
                xi.ncols()
            )));
        }
        let finite = (0..n).all(|j| (0..n).all(|i| xi[(i, j)].is_finite()));
        if !finite || v_base.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("response model has non-finite entries".into()));
        }
        Ok(Self { xi, v_base })
    }

    pub fn ring(n: usize, p: RingSensitivity, v_base: Vec<f64>) -> Result<Self> {
        if !(p.scale > 0.0 && p.coupling >= 0.0 && p.length > 0.0) {
            return Err(Error::Config(format!("bad ring sensitivity {p:?}")));
        }
        let xi = Mat::from_fn(n, n, |i, j| {
            if i == j {
                p.scale
            } else {
                let d = i.abs_diff(j).min(n - i.abs_diff(j));
                p.scale * p.coupling * (-(d as f64) / p.length).exp()
            }
        });
        Self::new(xi, v_base)
    }

    pub fn from_csv(path: &Path, v_base: Vec<f64>) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().has_headers(false).from_path(path)?;
        let mut rows = Vec::new();
        for (r, record) in reader.records().enumerate() {
            let record = record?;
            let row = record
                .iter()
                .enumerate()
                .map(|(c, cell)| {
                    cell.trim().parse::<f64>().map_err(|e| Error::Parse {
                        row: r + 1,
                        col: c + 1,
                        msg: e.to_string(),
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push(row);
        }
        let n = rows.len();
        if let Some((r, row)) = rows.iter().enumerate().find(|(_, row)| row.len() != n) {
            return Err(Error::NonRectangular { row: r + 1, expected: n, found: row.len() });
        }
        Self::new(Mat::from_fn(n, n, |i, j| rows[i][j]), v_base)
    }

    pub fn xi(&self) -> &Mat<f64> {
        &self.xi
    }

    pub fn v_base(&self) -> &[f64] {
        &self.v_base
    }

    pub fn n(&self) -> usize {
        self.v_base.len()
    }

    /// Strict row diagonal dominance of the sensitivity matrix.
    pub fn diagonally_dominant(&self) -> bool {
        (0..self.n()).all(|i| {
            let off: f64 = (0..self.n()).filter(|&j| j != i).map(|j| self.xi[(i, j)].abs()).sum();
            self.xi[(i, i)].abs() > off
        })
    }
}

pub fn respond(loads: &Mat<f64>, rm: &ResponseModel) -> Result<Mat<f64>> {
    if loads.nrows() != rm.n() {
        return Err(Error::ShapeMismatch(format!(
            "loads have {} rows, response model has {} nodes",
            loads.nrows(),
            rm.n()
        )));
    }
    let dv = &rm.xi * loads;
    Ok(Mat::from_fn(loads.nrows(), loads.ncols(), |i, t| rm.v_base[i] - dv[(i, t)]))
}

/// Shifts row `i` right by `delays[i]` samples, padding with its first value.
pub fn asynchronize(v: &Mat<f64>, delays: &BTreeMap<usize, usize>) -> Result<Mat<f64>> {
    let (n, t) = (v.nrows(), v.ncols());
    for (&row, &d) in delays {
        if row >= n {
            return Err(Error::Shape(format!("delayed row {row} outside {n} rows")));
        }
        if 2 * d >= t {
            return Err(Error::DelayTooLarge { row, delay: d, limit: t.div_ceil(2) });
        }
    }
    Ok(Mat::from_fn(n, t, |i, j| match delays.get(&i) {
        Some(&d) => v[(i, j.saturating_sub(d))],
        None => v[(i, j)],
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn quiet(mut sc: Scenario) -> Scenario {
        sc.noise = LoadNoise { gamma_mul: 0.0, gamma_acc: 0.0 };
        sc
    }

    #[test]
    fn table_one_profile_without_noise() {
        let y = load_series(&quiet(Scenario::table_one(1))).unwrap();
        let node = Scenario::EVENT_NODE - 1;
        assert_eq!(y[(node, 0)], 0.0);
        assert_eq!(y[(node, 499)], 0.0);
        assert_eq!(y[(node, 500)], 30.0);
        assert_eq!(y[(node, 899)], 30.0);
        assert_eq!(y[(node, 1299)], 120.0);
        assert_eq!(y[(node, 1300)], 1301.0 / 4.0 - 205.0);
        assert_eq!(y[(node, 2499)], 420.0);
        assert!((20.0..=80.0).contains(&y[(0, 0)]));
        assert_eq!(y[(0, 0)], y[(0, 2499)]);
    }

    #[test]
    fn noise_follows_additive_and_multiplicative_scale() {
        let sc = Scenario::table_one(2);
        let y = load_series(&sc).unwrap();
        let clean = load_series(&quiet(sc)).unwrap();
        // Event node during the no-load stage: pure additive noise.
        let node = Scenario::EVENT_NODE - 1;
        let r: Vec<f64> = (0..500).map(|t| y[(node, t)]).collect();
        let var = r.iter().map(|x| x * x).sum::<f64>() / r.len() as f64;
        assert!((var / 0.01 - 1.0).abs() < 0.2, "{var}");
        // Ordinary node: additive plus y * gamma_mul.
        let base = clean[(0, 0)];
        let d: Vec<f64> = (0..2500).map(|t| y[(0, t)] - base).collect();
        let var = d.iter().map(|x| x * x).sum::<f64>() / d.len() as f64;
        let expected = 0.01 + (base * 0.001).powi(2);
        assert!((var / expected - 1.0).abs() < 0.15, "{var} vs {expected}");
    }

    #[test]
    fn generation_is_reproducible() {
        let a = Scenario::table_one(7).generate().unwrap();
        let b = Scenario::table_one(7).generate().unwrap();
        let c = Scenario::table_one(8).generate().unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn zero_load_gives_base_voltage() {
        let rm = ResponseModel::ring(6, RingSensitivity::default(), vec![1.0; 6]).unwrap();
        let v = respond(&Mat::zeros(6, 4), &rm).unwrap();
        assert!((0..6).all(|i| (0..4).all(|t| v[(i, t)] == 1.0)));
        assert!(matches!(respond(&Mat::zeros(5, 4), &rm), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn step_affects_its_own_node_most() {
        let n = 118;
        let rm = ResponseModel::ring(n, RingSensitivity::default(), vec![1.0; n]).unwrap();
        assert!(rm.diagonally_dominant());
        let j = 51;
        let p = Mat::from_fn(n, 1, |i, _| if i == j { 30.0 } else { 0.0 });
        let v = respond(&p, &rm).unwrap();
        let dev: Vec<f64> = (0..n).map(|i| 1.0 - v[(i, 0)]).collect();
        let argmax = (0..n).max_by(|&a, &b| dev[a].total_cmp(&dev[b])).unwrap();
        assert_eq!(argmax, j);
        assert!((dev[j] - 0.01).abs() < 1e-12);
    }

    #[test]
    fn larger_step_gives_larger_deviation() {
        let dev = |mw: f64| {
            let mut sc = quiet(Scenario::table_one(0));
            sc.events = vec![LoadEvent { node: 52, t_start: 1, t_end: 10, profile: LoadProfile::Step { mw } }];
            sc.t_total = 10;
            let base = {
                let mut b = sc.clone();
                b.events.clear();
                b.generate().unwrap()
            };
            let v = sc.generate().unwrap();
            base.values()[(51, 0)] - v.values()[(51, 0)]
        };
        assert!(dev(120.0) > dev(30.0));
        assert!(dev(30.0) > dev(10.0));
    }

    #[test]
    fn voltage_noise_matches_propagated_load_noise() {
        let mut sc = Scenario::table_one(3);
        sc.events.clear();
        let v = sc.generate().unwrap();
        let rm = sc.response_model().unwrap();
        let clean = load_series(&quiet(sc.clone())).unwrap();
        for i in [0, 40, 100] {
            let row = v.row(i);
            let mean = row.iter().sum::<f64>() / row.len() as f64;
            let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (row.len() - 1) as f64;
            let predicted: f64 = (0..sc.n_nodes)
                .map(|j| rm.xi()[(i, j)].powi(2) * (0.01 + (clean[(j, 0)] * 0.001).powi(2)))
                .sum();
            let ratio = var / predicted;
            assert!((0.5..2.0).contains(&ratio), "node {i}: {ratio}");
        }
    }

    #[test]
    fn delay_shifts_rows_and_pads_with_first_value() {
        let v = Mat::from_fn(3, 100, |i, t| (i * 1000 + t) as f64);
        assert_eq!(asynchronize(&v, &BTreeMap::new()).unwrap(), v);
        let d = asynchronize(&v, &BTreeMap::from([(1, 25)])).unwrap();
        for t in 0..100 {
            assert_eq!(d[(0, t)], v[(0, t)]);
            let expected = if t >= 25 { v[(1, t - 25)] } else { v[(1, 0)] };
            assert_eq!(d[(1, t)], expected);
        }
        assert!(matches!(
            asynchronize(&v, &BTreeMap::from([(0, 50)])),
            Err(Error::DelayTooLarge { .. })
        ));
    }

    #[test]
    fn scenario_json_round_trip() {
        let mut sc = Scenario::table_one(5);
        sc.delays = BTreeMap::from([(52, 25)]);
        let text = serde_json::to_string(&sc).unwrap();
        assert_eq!(serde_json::from_str::<Scenario>(&text).unwrap(), sc);
        let minimal: Scenario = serde_json::from_str(r#"{"n_nodes": 4, "t_total": 50}"#).unwrap();
        assert_eq!(minimal.noise, LoadNoise::default());
        assert!(minimal.generate().is_ok());
    }

    #[test]
    fn invalid_scenarios_rejected() {
        let mut sc = Scenario::table_one(0);
        sc.events[0].t_end = 3000;
        assert!(sc.validate().is_err());
        let mut sc = Scenario::table_one(0);
        sc.noise.gamma_acc = -1.0;
        assert!(sc.validate().is_err());
    }

    #[test]
    fn sensitivity_from_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("xi.csv");
        std::fs::write(&path, "2,0.5\n0.5,2\n").unwrap();
        let rm = ResponseModel::from_csv(&path, vec![1.0, 1.0]).unwrap();
        assert_eq!(rm.xi()[(0, 1)], 0.5);
        std::fs::write(&path, "2,0.5\n0.5\n").unwrap();
        assert!(ResponseModel::from_csv(&path, vec![1.0, 1.0]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn response_is_linear(scale in 0.1f64..10.0, seed in 0u64..1000) {
            let n = 8;
            let rm = ResponseModel::ring(n, RingSensitivity::default(), vec![1.0; n]).unwrap();
            let mut r = rng::stream(seed, &[]);
            let p = Mat::from_fn(n, 5, |_, _| r.random::<f64>() * 50.0);
            let v1 = respond(&p, &rm).unwrap();
            let v2 = respond(&(&p * faer::Scale(scale)), &rm).unwrap();
            for i in 0..n {
                for t in 0..5 {
                    let d1 = 1.0 - v1[(i, t)];
                    let d2 = 1.0 - v2[(i, t)];
                    prop_assert!((d2 - scale * d1).abs() <= 1e-12 * (1.0 + d2.abs()));
                }
            }
        }
    }
}
