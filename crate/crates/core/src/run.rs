//! Reproducible end-to-end runs driven by one JSON config. Each command
//! reads its inputs, writes its outputs under `out`, and reports whether an
//! anomaly was found.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::calibration::CalibrationStore;
use crate::datagen::Scenario;
use crate::detection::{detect, indicator_curve, AnomalyEvent, WindowConfig, DEFAULT_K};
use crate::error::{Error, Result};
use crate::indicators::{calibrate_reference, Indicator, IndicatorReference};
use crate::io::{
    ingest_csv, ingest_factors, write_delay_csv, write_json, write_matrix_csv, write_scores_csv, write_series_csv,
};
use crate::laws::{
    calibrate_envelope, spectrum_test, LawSpec, DEFAULT_ALPHA, DEFAULT_EPS, DEFAULT_TRIALS,
};
use crate::matrix::{covariance_spectrum, ring_spectrum, wigner_spectrum, MeasurementWindow};
use crate::plot::{density_plot, ring_plot, series_plot};
use crate::rng;
use crate::sensitivity::{delay_scan, rank_factors, SensitivityConfig};

/// Reference law for `spectrum-test`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LawChoice {
    #[default]
    MarchenkoPastur,
    Semicircle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    /// Measurement CSV; takes precedence over `scenario`.
    pub input: Option<PathBuf>,
    /// Generated stream used when there is no input file.
    pub scenario: Option<Scenario>,
    /// Node ids to analyse; all nodes when absent.
    pub nodes: Option<Vec<String>>,
    pub width: usize,
    pub stride: usize,
    /// Indicator names such as `MSR`, `T2`, `DET`.
    pub indicators: Vec<String>,
    /// Event threshold in sigma units.
    pub k: f64,
    /// Monte Carlo draws per indicator reference.
    pub trials: usize,
    /// Calibration store consulted before running Monte Carlo.
    pub calibration: Option<PathBuf>,
    pub law: LawChoice,
    /// Sample range `[start, end]` tested by `spectrum-test`; the whole input
    /// when absent.
    pub span: Option<(usize, usize)>,
    pub envelope_trials: usize,
    pub alpha: f64,
    pub eps: f64,
    /// Factor CSV for `rank-factors`; every row is one factor.
    pub factors: Option<PathBuf>,
    /// Factor CSV for `scan-delay`; all rows form one factor.
    pub factor: Option<PathBuf>,
    pub max_shift: usize,
    pub sensitivity_indicator: String,
    pub random_factors: usize,
    /// Restricts sensitivity scores to windows overlapping `[start, end]`.
    pub event: Option<(usize, usize)>,
    pub plots: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("out"),
            input: None,
            scenario: None,
            nodes: None,
            width: 240,
            stride: 1,
            indicators: vec!["MSR".into()],
            k: DEFAULT_K,
            trials: 300,
            calibration: None,
            law: LawChoice::default(),
            span: None,
            envelope_trials: DEFAULT_TRIALS,
            alpha: DEFAULT_ALPHA,
            eps: DEFAULT_EPS,
            factors: None,
            factor: None,
            max_shift: 40,
            sensitivity_indicator: "T2".into(),
            random_factors: 20,
            event: None,
            plots: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Gen,
    Analyze,
    SpectrumTest,
    RankFactors,
    ScanDelay,
    Calibrate,
}

/// Result of one command.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub anomaly: bool,
    pub files: Vec<PathBuf>,
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn require_file(path: &Option<PathBuf>, what: &str) -> Result<()> {
    match path {
        Some(p) if p.is_file() => Ok(()),
        Some(p) => Err(config_err(format!("{what} `{}` does not exist", p.display()))),
        None => Err(config_err(format!("no {what} given"))),
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read config `{}`: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| config_err(format!("config `{}`: {e}", path.display())))
    }

    pub fn indicator_list(&self) -> Result<Vec<Indicator>> {
        if self.indicators.is_empty() {
            return Err(config_err("indicator list is empty"));
        }
        self.indicators
            .iter()
            .map(|n| Indicator::from_name(n).map_err(|e| config_err(format!("indicator `{n}`: {e}"))))
            .collect()
    }

    /// Checks parameters and referenced files before any work starts.
    pub fn validate(&self, cmd: Command) -> Result<()> {
        if self.width < 2 || self.stride == 0 {
            return Err(config_err(format!("width {} / stride {} out of range", self.width, self.stride)));
        }
        if !(self.k.is_finite() && self.k > 0.0) {
            return Err(config_err(format!("threshold k = {} must be positive", self.k)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) || !(self.eps > 0.0) {
            return Err(config_err("alpha must lie in (0, 1) and eps must be positive"));
        }
        if self.trials < 100 || self.envelope_trials < 100 {
            return Err(config_err("calibration needs at least 100 trials"));
        }
        if let Some(p) = &self.calibration {
            if cmd != Command::Calibrate && !p.is_file() {
                return Err(config_err(format!("calibration store `{}` does not exist", p.display())));
            }
        }
        if let Some(s) = &self.scenario {
            s.validate()?;
        }
        self.indicator_list()?;
        Indicator::from_name(&self.sensitivity_indicator)
            .map_err(|e| config_err(format!("sensitivity indicator: {e}")))?;
        let has_stream = self.input.is_some() || self.scenario.is_some();
        match cmd {
            Command::Gen => Ok(()),
            Command::Analyze | Command::SpectrumTest if !has_stream => {
                Err(config_err("no input file or scenario given"))
            }
            Command::Analyze | Command::SpectrumTest | Command::Calibrate => match &self.input {
                Some(_) => require_file(&self.input, "input file"),
                None => Ok(()),
            },
            Command::RankFactors => {
                require_file(&self.input, "basic measurement file")?;
                require_file(&self.factors, "factor file")
            }
            Command::ScanDelay => {
                require_file(&self.input, "basic measurement file")?;
                require_file(&self.factor, "factor file")
            }
        }
    }

    fn scenario_or_default(&self) -> Scenario {
        let mut sc = self.scenario.clone().unwrap_or_else(|| Scenario::table_one(self.seed));
        sc.seed = self.seed;
        sc
    }

    /// The input file, or the scenario generated with the run seed.
    pub fn stream(&self) -> Result<MeasurementWindow> {
        match &self.input {
            Some(path) => ingest_csv(path),
            None if self.scenario.is_some() => self.scenario_or_default().generate(),
            None => Err(config_err("no input file or scenario given")),
        }
    }

    fn node_rows(&self, w: &MeasurementWindow) -> Result<Option<Vec<usize>>> {
        let Some(ids) = &self.nodes else { return Ok(None) };
        ids.iter()
            .map(|id| {
                w.node_ids()
                    .iter()
                    .position(|x| x == id)
                    .ok_or_else(|| config_err(format!("node `{id}` not in input")))
            })
            .collect::<Result<Vec<_>>>()
            .map(Some)
    }

    fn selected(&self, w: &MeasurementWindow) -> Result<MeasurementWindow> {
        match self.node_rows(w)? {
            Some(rows) => w.select_rows(&rows),
            None => Ok(w.clone()),
        }
    }

    fn store(&self) -> Result<CalibrationStore> {
        match &self.calibration {
            Some(p) if p.is_file() => CalibrationStore::load(p),
            _ => Ok(CalibrationStore::default()),
        }
    }

    fn sensitivity(&self) -> Result<SensitivityConfig> {
        Ok(SensitivityConfig {
            stride: self.stride,
            indicator: Indicator::from_name(&self.sensitivity_indicator)?,
            random_factors: self.random_factors,
            event: self.event,
            seed: rng::derive_seed(self.seed, &[0x5e]),
            ..SensitivityConfig::new(self.width)
        })
    }
}

fn law_for(choice: LawChoice, n: usize, t: usize) -> Result<LawSpec> {
    match choice {
        LawChoice::MarchenkoPastur => LawSpec::marchenko_pastur(n as f64 / t as f64),
        LawChoice::Semicircle => Ok(LawSpec::Semicircle),
    }
}

/// Runs `cmd` and writes its outputs under `cfg.out`.
pub fn execute(cmd: Command, cfg: &RunConfig) -> Result<Outcome> {
    cfg.validate(cmd)?;
    fs::create_dir_all(&cfg.out)?;
    match cmd {
        Command::Gen => generate(cfg),
        Command::Analyze => analyze(cfg),
        Command::SpectrumTest => test_spectrum(cfg),
        Command::RankFactors => rank(cfg),
        Command::ScanDelay => scan(cfg),
        Command::Calibrate => calibrate(cfg),
    }
}

fn generate(cfg: &RunConfig) -> Result<Outcome> {
    let sc = cfg.scenario_or_default();
    let w = sc.generate()?;
    let data = cfg.out.join("voltages.csv");
    let spec = cfg.out.join("scenario.json");
    write_matrix_csv(&data, &w)?;
    write_json(&spec, &sc)?;
    Ok(Outcome { anomaly: false, files: vec![data, spec] })
}

fn references(
    cfg: &RunConfig,
    indicators: &[Indicator],
    n: usize,
    t: usize,
) -> Result<Vec<IndicatorReference>> {
    let store = cfg.store()?;
    indicators
        .iter()
        .enumerate()
        .map(|(i, ind)| match store.indicator(ind, n, t) {
            Some(r) => Ok(r.clone()),
            None => calibrate_reference(ind, n, t, cfg.trials, rng::derive_seed(cfg.seed, &[0xca, i as u64])),
        })
        .collect()
}

fn analyze(cfg: &RunConfig) -> Result<Outcome> {
    let stream = cfg.stream()?;
    let indicators = cfg.indicator_list()?;
    let window = WindowConfig {
        nodes: cfg.node_rows(&stream)?,
        width: cfg.width,
        stride: cfg.stride,
        indicators: indicators.clone(),
    };
    window.validate(stream.n_nodes())?;
    let n = window.n_selected(stream.n_nodes());
    let refs = references(cfg, &indicators, n, cfg.width)?;
    let series = indicator_curve(&stream, &window, &refs, rng::derive_seed(cfg.seed, &[0xa7]))?;
    let mut events: Vec<AnomalyEvent> = Vec::new();
    for s in &series {
        events.extend(detect(s, cfg.k)?);
    }

    let mut files = vec![cfg.out.join("series.csv"), cfg.out.join("events.json"), cfg.out.join("references.json")];
    write_series_csv(&files[0], &series)?;
    write_json(&files[1], &events)?;
    write_json(&files[2], &refs)?;
    if cfg.plots {
        for s in series.iter().filter(|s| !s.points.is_empty()) {
            let path = cfg.out.join(format!("series_{}.svg", s.name()));
            fs::write(&path, series_plot(s, cfg.k)?)?;
            files.push(path);
        }
    }
    Ok(Outcome { anomaly: !events.is_empty(), files })
}

/// Verdict file written by `spectrum-test`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub law: LawSpec,
    pub n: usize,
    pub t: usize,
    pub span: (usize, usize),
    pub verdict: crate::laws::Verdict,
    pub calibration: crate::laws::EnvelopeCalibration,
}

fn test_spectrum(cfg: &RunConfig) -> Result<Outcome> {
    let stream = cfg.selected(&cfg.stream()?)?;
    let w = match cfg.span {
        Some((lo, hi)) => stream.span(lo, hi)?,
        None => stream,
    };
    let (n, t) = (w.n_nodes(), w.n_samples());
    let seed = rng::derive_seed(cfg.seed, &[0x57]);
    let law = law_for(cfg.law, n, t)?;
    let s = match cfg.law {
        LawChoice::MarchenkoPastur => covariance_spectrum(&w, seed)?,
        LawChoice::Semicircle => wigner_spectrum(&w, seed)?,
    };
    let cal = match cfg.store()?.envelope(&law, n, t) {
        Some(c) => *c,
        None => calibrate_envelope(law, n, t, cfg.envelope_trials, rng::derive_seed(cfg.seed, &[0xe7]), cfg.eps, cfg.alpha)?,
    };
    let env = cal.envelope()?;
    let verdict = spectrum_test(&s, &env)?;
    let report = SpectrumReport { law, n, t, span: (w.t_start(), w.t_end()), verdict, calibration: cal };
    let mut files = vec![cfg.out.join("verdict.json")];
    write_json(&files[0], &report)?;
    if cfg.plots {
        let density = cfg.out.join("density.svg");
        fs::write(&density, density_plot(&s, &law, Some(&env))?)?;
        files.push(density);
        if n <= t {
            let ring = cfg.out.join("ring.svg");
            let rs = ring_spectrum(&w, 1, seed)?;
            fs::write(&ring, ring_plot(&rs, &LawSpec::ring(n as f64 / t as f64, 1)?)?)?;
            files.push(ring);
        }
    }
    Ok(Outcome { anomaly: verdict.anomaly, files })
}

fn rank(cfg: &RunConfig) -> Result<Outcome> {
    let b = cfg.selected(&cfg.stream()?)?;
    let factors = ingest_factors(cfg.factors.as_deref().unwrap_or(Path::new("")), true, "")?;
    let scores = rank_factors(&b, &factors, &cfg.sensitivity()?)?;
    let files = vec![cfg.out.join("scores.csv"), cfg.out.join("scores.json")];
    write_scores_csv(&files[0], &scores)?;
    write_json(&files[1], &scores)?;
    Ok(Outcome { anomaly: false, files })
}

fn scan(cfg: &RunConfig) -> Result<Outcome> {
    let b = cfg.selected(&cfg.stream()?)?;
    let path = cfg.factor.as_deref().unwrap_or(Path::new(""));
    let id = path.file_stem().map_or("factor".into(), |s| s.to_string_lossy().into_owned());
    let factor = ingest_factors(path, false, &id)?.remove(0);
    let scan = delay_scan(&b, &factor, cfg.max_shift, &cfg.sensitivity()?)?;
    let files = vec![cfg.out.join("delay.csv"), cfg.out.join("delay.json")];
    write_delay_csv(&files[0], &scan.profile)?;
    write_json(&files[1], &scan)?;
    Ok(Outcome { anomaly: false, files })
}

/// Shape `(N, T)` to calibrate for: the selected input rows or scenario
/// nodes and the window width.
fn calibration_shape(cfg: &RunConfig) -> Result<(usize, usize)> {
    let n = match (&cfg.input, &cfg.nodes) {
        (_, Some(ids)) => ids.len(),
        (Some(path), None) => ingest_csv(path)?.n_nodes(),
        (None, None) => cfg.scenario_or_default().n_nodes,
    };
    Ok((n, cfg.width))
}

fn calibrate(cfg: &RunConfig) -> Result<Outcome> {
    let (n, t) = calibration_shape(cfg)?;
    let mut store = cfg.store()?;
    for r in references(&RunConfig { calibration: None, ..cfg.clone() }, &cfg.indicator_list()?, n, t)? {
        store.insert_indicator(r);
    }
    let law = law_for(cfg.law, n, t)?;
    let env_t = if cfg.law == LawChoice::Semicircle { n } else { t };
    store.insert_envelope(calibrate_envelope(
        law,
        n,
        env_t,
        cfg.envelope_trials,
        rng::derive_seed(cfg.seed, &[0xe7]),
        cfg.eps,
        cfg.alpha,
    )?);
    let path = cfg.out.join("calibration.json");
    store.save(&path)?;
    Ok(Outcome { anomaly: false, files: vec![path] })
}
