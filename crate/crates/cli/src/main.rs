use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gridrmt_core::run::{execute, Command, LawChoice, RunConfig};
use gridrmt_core::Error;

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_ANOMALY: u8 = 3;

#[derive(Parser)]
#[command(name = "gridrmt", version, about = "Spectral anomaly analysis of multi-sensor measurement streams")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic scenario as a measurement CSV.
    Gen(Common),
    /// Indicator series, events and plots for a CSV or scenario.
    Analyze(Common),
    /// Test one window against its limiting law; exit 3 on anomaly.
    SpectrumTest(Common),
    /// Rank the rows of a factor file by their influence on the input.
    RankFactors(Common),
    /// Estimate the delay of a factor relative to the input.
    ScanDelay(Common),
    /// Calibrate envelope constants and indicator references.
    Calibrate(Common),
}

#[derive(Args)]
struct Common {
    /// JSON run config; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Measurement CSV (basic matrix for rank-factors and scan-delay).
    #[arg(long)]
    input: Option<PathBuf>,
    /// Node id to analyse; repeatable.
    #[arg(long = "node")]
    nodes: Vec<String>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    stride: Option<usize>,
    /// Indicator name (MSR, MSR2, T2, DET, LRF, ...); repeatable.
    #[arg(long = "indicator")]
    indicators: Vec<String>,
    /// Event threshold in sigma units.
    #[arg(long)]
    k: Option<f64>,
    /// Monte Carlo draws per indicator reference.
    #[arg(long)]
    trials: Option<usize>,
    /// Calibration store to reuse.
    #[arg(long)]
    calibration: Option<PathBuf>,
    #[arg(long, value_parser = parse_law)]
    law: Option<LawChoice>,
    /// First and last sample of the tested window.
    #[arg(long, num_args = 2, value_names = ["START", "END"])]
    span: Option<Vec<usize>>,
    #[arg(long)]
    envelope_trials: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Factor CSV for rank-factors.
    #[arg(long)]
    factors: Option<PathBuf>,
    /// Factor CSV for scan-delay.
    #[arg(long)]
    factor: Option<PathBuf>,
    #[arg(long)]
    max_shift: Option<usize>,
    #[arg(long, num_args = 2, value_names = ["START", "END"])]
    event: Option<Vec<usize>>,
    #[arg(long)]
    no_plots: bool,
}

fn parse_law(s: &str) -> Result<LawChoice, String> {
    match s {
        "marchenko-pastur" | "mp" => Ok(LawChoice::MarchenkoPastur),
        "semicircle" => Ok(LawChoice::Semicircle),
        _ => Err(format!("unknown law `{s}` (marchenko-pastur, semicircle)")),
    }
}

fn pair(v: Option<Vec<usize>>) -> Option<(usize, usize)> {
    v.map(|v| (v[0], v[1]))
}

impl Common {
    fn resolve(self) -> gridrmt_core::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($field:ident),*) => { $(if let Some(v) = self.$field { cfg.$field = v; })* };
        }
        macro_rules! set_opt {
            ($($field:ident),*) => { $(if let Some(v) = self.$field { cfg.$field = Some(v); })* };
        }
        set!(seed, out, width, stride, k, trials, law, envelope_trials, alpha, max_shift);
        set_opt!(input, calibration, factors, factor);
        if !self.nodes.is_empty() {
            cfg.nodes = Some(self.nodes);
        }
        if !self.indicators.is_empty() {
            cfg.indicators = self.indicators;
        }
        if let Some(span) = pair(self.span) {
            cfg.span = Some(span);
        }
        if let Some(event) = pair(self.event) {
            cfg.event = Some(event);
        }
        if self.no_plots {
            cfg.plots = false;
        }
        Ok(cfg)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    let (command, common) = match cli.command {
        Cmd::Gen(c) => (Command::Gen, c),
        Cmd::Analyze(c) => (Command::Analyze, c),
        Cmd::SpectrumTest(c) => (Command::SpectrumTest, c),
        Cmd::RankFactors(c) => (Command::RankFactors, c),
        Cmd::ScanDelay(c) => (Command::ScanDelay, c),
        Cmd::Calibrate(c) => (Command::Calibrate, c),
    };
    let result = common.resolve().and_then(|cfg| execute(command, &cfg));
    match result {
        Ok(outcome) => {
            for f in &outcome.files {
                println!("{}", f.display());
            }
            if command == Command::SpectrumTest && outcome.anomaly {
                eprintln!("anomaly detected");
                ExitCode::from(EXIT_ANOMALY)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => ExitCode::from(EXIT_USAGE),
                _ => ExitCode::from(EXIT_DATA),
            }
        }
    }
}
