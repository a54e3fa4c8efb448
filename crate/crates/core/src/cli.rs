//! Command-line front end and the flat `key = value` run configuration.
//!
//! Exit codes: 0 success or entanglement confirmed, 1 not entangled (or a
//! failed replication row), 2 gate failure, 3 parse/config/usage error,
//! 4 I/O error.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::analysis::{analyze, AnalysisConfig, AnalysisReport, Perturbation, TransmissionChoice};
use crate::error::{Error, Result};
use crate::estimation::{reconstruct, GaussianityConfig, ReconstructionConfig, TraceSet, VarianceFit};
use crate::gaussian::{tmsv_cm, CovMat4, SqueezeSpec};
use crate::homodyne::{read_trace, simulate_shot_trace, simulate_trace, write_trace, DetectionSpec, TraceMode};
use crate::optics::{modes_table, ModeName};
use crate::replicate::{header, replicate, ReplicationSettings};

pub const EXIT_OK: i32 = 0;
pub const EXIT_NOT_ENTANGLED: i32 = 1;
pub const EXIT_GATE: i32 = 2;
pub const EXIT_USAGE: i32 = 3;
pub const EXIT_IO: i32 = 4;

/// Exit code for a library error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io { .. } => EXIT_IO,
        Error::Parse { .. } | Error::Config(_) | Error::Json(_) | Error::InvalidArgument(_) => EXIT_USAGE,
        _ => EXIT_GATE,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub r: f64,
    pub transmission: TransmissionChoice,
    pub efficiency: f64,
    pub visibility: f64,
    pub samples: usize,
    pub bins: usize,
    pub seed: u64,
    pub shot_variance: f64,
    pub mc_draws: usize,
    pub perturbation: Perturbation,
    pub stationarity_tolerance: f64,
    pub consistency_sigma: f64,
    pub kurtosis_threshold: f64,
    pub min_samples: usize,
    pub purity_window: f64,
    pub transmission_agreement: f64,
    pub n_max: usize,
    pub trace_dir: PathBuf,
    pub cm_path: PathBuf,
    /// Auxiliary-mode fits for the transmission estimate; empty means derive
    /// them from the symmetrised matrix.
    pub aux_path: Option<PathBuf>,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let det = DetectionSpec::default();
        RunConfig {
            r: 0.4335,
            transmission: TransmissionChoice::Fixed(0.53),
            efficiency: det.efficiency,
            visibility: det.visibility,
            samples: det.samples_per_trace,
            bins: det.bins,
            seed: det.seed,
            shot_variance: det.shot_variance,
            mc_draws: 100_000,
            perturbation: Perturbation::FourParam,
            stationarity_tolerance: 0.05,
            consistency_sigma: 3.0,
            kurtosis_threshold: 0.1,
            min_samples: 10_000,
            purity_window: 0.02,
            transmission_agreement: 0.02,
            n_max: 10,
            trace_dir: PathBuf::from("out"),
            cm_path: PathBuf::from("out/cm.json"),
            aux_path: None,
            out_dir: PathBuf::from("out"),
        }
    }
}

fn parse_field<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("field '{key}': cannot parse '{value}': {e}")))
}

impl RunConfig {
    pub const KEYS: [&'static str; 21] = [
        "r",
        "transmission",
        "efficiency",
        "visibility",
        "samples",
        "bins",
        "seed",
        "shot_variance",
        "mc_draws",
        "perturbation",
        "stationarity_tolerance",
        "consistency_sigma",
        "kurtosis_threshold",
        "min_samples",
        "purity_window",
        "transmission_agreement",
        "n_max",
        "trace_dir",
        "cm_path",
        "aux_path",
        "out_dir",
    ];

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "r" => self.r = parse_field(key, value)?,
            "transmission" => {
                self.transmission = if value == "auto" {
                    TransmissionChoice::Auto
                } else {
                    TransmissionChoice::Fixed(parse_field(key, value)?)
                }
            }
            "efficiency" => self.efficiency = parse_field(key, value)?,
            "visibility" => self.visibility = parse_field(key, value)?,
            "samples" => self.samples = parse_field(key, value)?,
            "bins" => self.bins = parse_field(key, value)?,
            "seed" => self.seed = parse_field(key, value)?,
            "shot_variance" => self.shot_variance = parse_field(key, value)?,
            "mc_draws" => self.mc_draws = parse_field(key, value)?,
            "perturbation" => {
                self.perturbation = match value {
                    "four-param" => Perturbation::FourParam,
                    "full-16" => Perturbation::Full16,
                    _ => {
                        return Err(Error::Config(format!(
                            "field 'perturbation': expected 'four-param' or 'full-16', got '{value}'"
                        )))
                    }
                }
            }
            "stationarity_tolerance" => self.stationarity_tolerance = parse_field(key, value)?,
            "consistency_sigma" => self.consistency_sigma = parse_field(key, value)?,
            "kurtosis_threshold" => self.kurtosis_threshold = parse_field(key, value)?,
            "min_samples" => self.min_samples = parse_field(key, value)?,
            "purity_window" => self.purity_window = parse_field(key, value)?,
            "transmission_agreement" => self.transmission_agreement = parse_field(key, value)?,
            "n_max" => self.n_max = parse_field(key, value)?,
            "trace_dir" => self.trace_dir = PathBuf::from(value),
            "cm_path" => self.cm_path = PathBuf::from(value),
            "aux_path" => self.aux_path = (!value.is_empty()).then(|| PathBuf::from(value)),
            "out_dir" => self.out_dir = PathBuf::from(value),
            _ => return Err(Error::Config(format!("unknown field '{key}'"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment line. Unset keys keep
    /// their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected 'key = value'", idx + 1)))?;
            let key = key.trim();
            if seen.insert(key.to_string(), idx + 1).is_some() {
                return Err(Error::Config(format!("line {}: field '{key}' set twice", idx + 1)));
            }
            cfg.set(key, value.trim())
                .map_err(|e| Error::Config(format!("line {}: {}", idx + 1, e.to_string().trim_start_matches("config: "))))?;
        }
        if seen.is_empty() {
            return Err(Error::Config("configuration contains no settings".into()));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Every field, one per line; floats use the shortest round-trip form.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# twinbeam run configuration\n");
        let mut line = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        line("r", format!("{:?}", self.r));
        line(
            "transmission",
            match self.transmission {
                TransmissionChoice::Fixed(t) => format!("{t:?}"),
                TransmissionChoice::Auto => "auto".into(),
            },
        );
        line("efficiency", format!("{:?}", self.efficiency));
        line("visibility", format!("{:?}", self.visibility));
        line("samples", self.samples.to_string());
        line("bins", self.bins.to_string());
        line("seed", self.seed.to_string());
        line("shot_variance", format!("{:?}", self.shot_variance));
        line("mc_draws", self.mc_draws.to_string());
        line(
            "perturbation",
            match self.perturbation {
                Perturbation::FourParam => "four-param".into(),
                Perturbation::Full16 => "full-16".into(),
            },
        );
        line("stationarity_tolerance", format!("{:?}", self.stationarity_tolerance));
        line("consistency_sigma", format!("{:?}", self.consistency_sigma));
        line("kurtosis_threshold", format!("{:?}", self.kurtosis_threshold));
        line("min_samples", self.min_samples.to_string());
        line("purity_window", format!("{:?}", self.purity_window));
        line("transmission_agreement", format!("{:?}", self.transmission_agreement));
        line("n_max", self.n_max.to_string());
        line("trace_dir", self.trace_dir.display().to_string());
        line("cm_path", self.cm_path.display().to_string());
        line(
            "aux_path",
            self.aux_path.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
        );
        line("out_dir", self.out_dir.display().to_string());
        out
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: &str| Err(Error::Config(format!("field '{field}': {why}")));
        if SqueezeSpec::new(self.r).is_err() {
            return bad("r", "must be finite and >= 0");
        }
        if let TransmissionChoice::Fixed(t) = self.transmission {
            if !(t > 0.0 && t <= 1.0) {
                return bad("transmission", "must lie in (0, 1] or be 'auto'");
            }
        }
        if let Err(e) = self.detection().validate() {
            return Err(Error::Config(format!("detection: {e}")));
        }
        if self.mc_draws < crate::analysis::MIN_DRAWS {
            return bad("mc_draws", "must be at least 1000");
        }
        for (field, v) in [
            ("stationarity_tolerance", self.stationarity_tolerance),
            ("consistency_sigma", self.consistency_sigma),
            ("kurtosis_threshold", self.kurtosis_threshold),
            ("purity_window", self.purity_window),
            ("transmission_agreement", self.transmission_agreement),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(field, "must be positive");
            }
        }
        Ok(())
    }

    pub fn detection(&self) -> DetectionSpec {
        DetectionSpec {
            efficiency: self.efficiency,
            visibility: self.visibility,
            samples_per_trace: self.samples,
            bins: self.bins,
            seed: self.seed,
            shot_variance: self.shot_variance,
        }
    }

    pub fn reconstruction(&self) -> ReconstructionConfig {
        ReconstructionConfig {
            bins: self.bins,
            stationarity_tolerance: self.stationarity_tolerance,
            consistency_sigma: self.consistency_sigma,
            min_samples: self.min_samples,
            gaussianity: GaussianityConfig {
                mean_threshold: self.kurtosis_threshold,
                ..GaussianityConfig::default()
            },
        }
    }

    pub fn analysis(&self) -> AnalysisConfig {
        AnalysisConfig {
            draws: self.mc_draws,
            seed: self.seed,
            transmission: self.transmission,
            perturbation: self.perturbation,
            purity_window: self.purity_window,
            transmission_agreement: self.transmission_agreement,
            n_max: self.n_max,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "twinbeam", version, about = "Twin-beam OAM covariance-matrix simulation and analysis")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Run configuration file (key = value).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root seed; overrides the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; overrides the configuration.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// 10^5 samples per trace and 10^4 Monte Carlo draws.
    #[arg(long, global = true)]
    pub quick: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the six mode traces and the shot trace as CSV.
    Simulate,
    /// Reconstruct the covariance matrix from a directory of traces.
    Reconstruct {
        /// Directory holding trace_<mode>.csv files.
        trace_dir: Option<PathBuf>,
    },
    /// Criteria, symmetrisation, loss, ancestor state, purity and photon table.
    Analyze {
        /// Covariance matrix JSON with per-entry errors.
        cm: Option<PathBuf>,
        /// Auxiliary-mode fits JSON written by `reconstruct`.
        #[arg(long)]
        aux: Option<PathBuf>,
    },
    /// End-to-end run with reference settings, printed side by side.
    Replicate,
    /// Print the auxiliary-mode synthesis table.
    Modes,
}

fn resolve_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    if common.quick {
        cfg.samples = 100_000;
        cfg.mc_draws = 10_000;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn trace_file(dir: &Path, mode: TraceMode) -> PathBuf {
    dir.join(format!("trace_{mode}.csv"))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn cmd_simulate(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    ensure_dir(&cfg.out_dir)?;
    let cm = tmsv_cm(SqueezeSpec::new(cfg.r)?);
    let det = cfg.detection();
    let paths: Vec<PathBuf> = TraceMode::all()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|mode| {
            let trace = match mode {
                TraceMode::Mode(m) => simulate_trace(&cm, m, &det)?,
                TraceMode::Shot => simulate_shot_trace(&det)?,
            };
            let path = trace_file(&cfg.out_dir, mode);
            write_trace(&path, &trace)?;
            Ok(path)
        })
        .collect::<Result<_>>()?;
    write_text(&cfg.out_dir.join("config.txt"), &cfg.to_text())?;
    Ok(paths)
}

pub fn load_traces(dir: &Path) -> Result<TraceSet> {
    let traces = TraceMode::all()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|mode| {
            let t = read_trace(&trace_file(dir, mode))?;
            if t.mode != mode {
                return Err(Error::Parse {
                    path: trace_file(dir, mode),
                    line: 1,
                    message: format!("file holds mode {} but is named for {mode}", t.mode),
                });
            }
            Ok(t)
        })
        .collect::<Result<Vec<_>>>()?;
    TraceSet::new(traces)
}

/// Writes `cm.json`, `aux_fits.json`, `reconstruction.json` and
/// `kurtosis.csv`; returns the exit code.
pub fn cmd_reconstruct(cfg: &RunConfig, trace_dir: &Path) -> Result<i32> {
    let set = load_traces(trace_dir)?;
    let rec = reconstruct(&set, &cfg.reconstruction())?;
    ensure_dir(&cfg.out_dir)?;
    if let Some(cm) = &rec.cm {
        write_json(&cfg.out_dir.join("cm.json"), cm)?;
    }
    let aux: BTreeMap<ModeName, VarianceFit> = rec
        .fits
        .iter()
        .filter(|(m, _)| ModeName::AUXILIARY.contains(m))
        .map(|(m, f)| (*m, f.clone()))
        .collect();
    write_json(&cfg.out_dir.join("aux_fits.json"), &aux)?;
    write_json(&cfg.out_dir.join("reconstruction.json"), &rec)?;
    write_text(&cfg.out_dir.join("kurtosis.csv"), &rec.gaussianity.to_csv())?;

    println!(
        "gaussianity: mean kurtosis {:.4}, SD {:.4}, outliers {:.2}% -> {}",
        rec.gaussianity.mean,
        rec.gaussianity.sd,
        100.0 * rec.gaussianity.outlier_fraction,
        pass_word(rec.gaussianity.pass)
    );
    println!(
        "stationarity: max relative deviation {:.4} (tolerance {}) -> {}",
        rec.stationarity.max_relative_deviation,
        rec.stationarity.tolerance,
        pass_word(rec.stationarity.pass)
    );
    match &rec.cm {
        Some(cm) => println!("covariance matrix:\n{cm}"),
        None => println!("assembly failed: {}", rec.error.as_deref().unwrap_or("unknown")),
    }
    Ok(if rec.gates_passed() { EXIT_OK } else { EXIT_GATE })
}

fn pass_word(ok: bool) -> &'static str {
    if ok {
        "pass"
    } else {
        "FAIL"
    }
}

pub fn summarize(report: &AnalysisReport) -> String {
    let mut s = String::new();
    let c = &report.criteria;
    let sigma = |x: Option<f64>| x.map_or("n/a".to_string(), |v| format!("{v:.1}"));
    let _ = writeln!(
        s,
        "PHS  LHS {:.4} ± {:.4}  ({} sigma)  entangled: {}",
        c.phs_lhs.value,
        c.phs_lhs.uncertainty,
        sigma(c.phs_sigma),
        c.entangled_phs
    );
    let _ = writeln!(
        s,
        "Duan LHS {:.4} ± {:.4}  ({} sigma)  entangled: {}",
        c.duan_lhs.value,
        c.duan_lhs.uncertainty,
        sigma(c.duan_sigma),
        c.entangled_duan
    );
    let sy = &report.symmetry;
    let _ = writeln!(
        s,
        "symmetry: |n-m| {:.4} <= {:.4}, ||c1|-|c2|| {:.4} <= {:.4} -> {}",
        sy.diagonal_gap,
        sy.diagonal_bound,
        sy.correlation_gap,
        sy.correlation_bound,
        pass_word(sy.pass)
    );
    if let Some(t) = &report.transmission {
        if let Some(cf) = &t.closed_form {
            let _ = writeln!(
                s,
                "transmission (aux modes, {}): {:.4} ± {:.4}",
                t.source, cf.mean.value, cf.mean.uncertainty
            );
        }
        if let Some(ps) = &t.pure_state_search {
            let _ = writeln!(s, "transmission (pure-state search): {:.4}", ps.t);
        }
        if let Some(chosen) = t.chosen {
            let _ = writeln!(s, "transmission used: {chosen}");
        }
    }
    if let Some(a) = &report.ancestor {
        let _ = writeln!(s, "ancestor state (physical: {}):\n{}", a.physical, a.cm);
        if let Some(mu) = a.purity {
            let _ = writeln!(s, "ancestor purity: {mu:.4}");
        }
    }
    if let Some(p) = &report.purity {
        let _ = writeln!(
            s,
            "purity MC: mean {:.4}, SD {:.4}, median {:.4} ({} draws, {} rejected)",
            p.summary.mean, p.summary.sd, p.summary.median, p.summary.draws, p.rejected
        );
    }
    if let Some(t) = &report.photon_table {
        let diag: Vec<String> = (0..t.p.len().min(4)).map(|n| format!("{:.4}", t.p[n][n])).collect();
        let _ = writeln!(s, "p(n,n), n=0..: {}", diag.join(", "));
    }
    for w in &report.warnings {
        let _ = writeln!(s, "warning: {w}");
    }
    s
}

/// Writes `analysis.json`, `purity_hist.csv` and `photon_table.csv`.
pub fn cmd_analyze(cfg: &RunConfig, cm_path: &Path, aux_path: Option<&Path>) -> Result<i32> {
    let cm: CovMat4 = read_json(cm_path)?;
    let aux: Option<BTreeMap<ModeName, VarianceFit>> = aux_path.map(read_json).transpose()?;
    let report = analyze(&cm, aux.as_ref(), &cfg.analysis())?;
    ensure_dir(&cfg.out_dir)?;
    write_json(&cfg.out_dir.join("analysis.json"), &report)?;
    if let Some(p) = &report.purity {
        write_text(&cfg.out_dir.join("purity_hist.csv"), &p.histogram.to_csv())?;
    }
    if let Some(t) = &report.photon_table {
        write_text(&cfg.out_dir.join("photon_table.csv"), &t.to_csv())?;
    }
    print!("{}", summarize(&report));
    Ok(if !report.symmetry.pass {
        EXIT_GATE
    } else if report.entangled() {
        EXIT_OK
    } else {
        EXIT_NOT_ENTANGLED
    })
}

pub fn cmd_replicate(cfg: &RunConfig, quick: bool) -> Result<i32> {
    let mut s = if quick {
        ReplicationSettings::quick(cfg.seed)
    } else {
        ReplicationSettings::full(cfg.seed)
    };
    s.r = cfg.r;
    let rows = replicate(&s)?;
    println!("{}", header());
    for row in &rows {
        println!("{row}");
    }
    let failed = rows.iter().filter(|r| !r.pass).count();
    println!("{} of {} rows pass", rows.len() - failed, rows.len());
    Ok(if failed == 0 { EXIT_OK } else { EXIT_NOT_ENTANGLED })
}

pub fn run(cli: Cli) -> Result<i32> {
    if let Command::Modes = cli.command {
        print!("{}", modes_table()?);
        return Ok(EXIT_OK);
    }
    let cfg = resolve_config(&cli.common)?;
    match cli.command {
        Command::Simulate => {
            let paths = cmd_simulate(&cfg)?;
            for p in paths {
                println!("{}", p.display());
            }
            Ok(EXIT_OK)
        }
        Command::Reconstruct { trace_dir } => {
            let dir = trace_dir.unwrap_or_else(|| cfg.trace_dir.clone());
            cmd_reconstruct(&cfg, &dir)
        }
        Command::Analyze { cm, aux } => {
            let cm = cm.unwrap_or_else(|| cfg.cm_path.clone());
            let aux = aux.or_else(|| cfg.aux_path.clone());
            cmd_analyze(&cfg, &cm, aux.as_deref())
        }
        Command::Replicate => cmd_replicate(&cfg, cli.common.quick),
        Command::Modes => unreachable!(),
    }
}

/// Parses `args` and runs; usage errors map to exit code 3.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
