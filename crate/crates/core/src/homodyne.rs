//! Synthetic phase-scanned homodyne traces.
//!
//! A trace holds one sample per local-oscillator phase step; the phase ramps
//! linearly over `[0, 2π)`. Detection efficiency and visibility enter as a
//! single loss `η v²` applied before sampling.

use std::f64::consts::TAU;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{apply_symplectic, loss_channel, CovMat4, SingleModeBlock, PHYSICAL_TOL, SHOT_NOISE};
use crate::optics::ModeName;
use crate::rng::substream;

/// Number of phase sectors used for coverage checks and phase averaging.
pub const COVERAGE_SECTORS: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum TraceMode {
    Mode(ModeName),
    Shot,
}

impl TraceMode {
    pub fn parse(s: &str) -> Option<Self> {
        if s == "shot" {
            Some(TraceMode::Shot)
        } else {
            ModeName::parse(s).map(TraceMode::Mode)
        }
    }

    /// The six signal modes followed by the shot trace.
    pub fn all() -> impl Iterator<Item = TraceMode> {
        ModeName::ALL.into_iter().map(TraceMode::Mode).chain([TraceMode::Shot])
    }
}

impl TryFrom<String> for TraceMode {
    type Error = String;

    fn try_from(s: String) -> std::result::Result<Self, String> {
        TraceMode::parse(&s).ok_or_else(|| format!("unknown trace mode '{s}'"))
    }
}

impl From<TraceMode> for String {
    fn from(m: TraceMode) -> String {
        m.to_string()
    }
}

impl fmt::Display for TraceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TraceMode::Mode(m) => f.write_str(m.symbol()),
            TraceMode::Shot => f.write_str("shot"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionSpec {
    pub efficiency: f64,
    pub visibility: f64,
    pub samples_per_trace: usize,
    pub bins: usize,
    pub seed: u64,
    /// Raw (unnormalised) variance of the vacuum in detector units.
    pub shot_variance: f64,
}

impl Default for DetectionSpec {
    fn default() -> Self {
        DetectionSpec {
            efficiency: 0.53 / (0.97 * 0.97),
            visibility: 0.97,
            samples_per_trace: 1_000_000,
            bins: 100,
            seed: 1,
            shot_variance: 1.0,
        }
    }
}

impl DetectionSpec {
    /// `η v²`.
    pub fn effective_transmission(&self) -> f64 {
        self.efficiency * self.visibility * self.visibility
    }

    pub fn validate(&self) -> Result<()> {
        let in_unit = |v: f64| v.is_finite() && v > 0.0 && v <= 1.0;
        if !in_unit(self.efficiency) {
            return Err(Error::invalid(format!("efficiency must lie in (0, 1], got {}", self.efficiency)));
        }
        if !in_unit(self.visibility) {
            return Err(Error::invalid(format!("visibility must lie in (0, 1], got {}", self.visibility)));
        }
        if !in_unit(self.effective_transmission()) {
            return Err(Error::invalid("effective transmission η·v² must lie in (0, 1]"));
        }
        if self.bins == 0 || self.samples_per_trace < self.bins {
            return Err(Error::invalid(format!(
                "need at least one sample per bin ({} samples, {} bins)",
                self.samples_per_trace, self.bins
            )));
        }
        if !(self.shot_variance.is_finite() && self.shot_variance > 0.0) {
            return Err(Error::invalid("shot variance must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub seed: u64,
    pub sample_count: usize,
    pub shot_variance: f64,
    pub efficiency: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuadratureTrace {
    pub mode: TraceMode,
    pub phases: Vec<f64>,
    pub values: Vec<f64>,
    pub meta: TraceMeta,
}

impl QuadratureTrace {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Multiplies every sample by `gain`; the header is left untouched.
    pub fn scaled(&self, gain: f64) -> Self {
        QuadratureTrace {
            values: self.values.iter().map(|v| v * gain).collect(),
            ..self.clone()
        }
    }

    /// Rescales samples so that a vacuum measured at `measured_shot` raw
    /// variance reads 0.5.
    pub fn normalized_to_shot(&self, measured_shot: f64) -> Self {
        let gain = (SHOT_NOISE / measured_shot).sqrt();
        QuadratureTrace {
            values: self.values.iter().map(|v| v * gain).collect(),
            meta: TraceMeta {
                shot_variance: SHOT_NOISE,
                ..self.meta
            },
            ..self.clone()
        }
    }

    /// Phase-averaged raw variance: mean of the sample variances of
    /// [`COVERAGE_SECTORS`] equal phase sectors.
    pub fn phase_averaged_variance(&self) -> Result<f64> {
        let mut acc = vec![(0usize, 0.0f64, 0.0f64); COVERAGE_SECTORS];
        let width = TAU / COVERAGE_SECTORS as f64;
        for (&theta, &v) in self.phases.iter().zip(&self.values) {
            let k = ((theta.rem_euclid(TAU) / width) as usize).min(COVERAGE_SECTORS - 1);
            acc[k].0 += 1;
            acc[k].1 += v;
            acc[k].2 += v * v;
        }
        if let Some(k) = acc.iter().position(|a| a.0 < 2) {
            return Err(Error::InsufficientCoverage(format!(
                "trace {} does not span a full 2π scan (phase sector {k} has fewer than 2 samples)",
                self.mode
            )));
        }
        let total: f64 = acc
            .iter()
            .map(|&(n, s, s2)| {
                let n = n as f64;
                let mean = s / n;
                (s2 - n * mean * mean) / (n - 1.0)
            })
            .sum();
        Ok(total / COVERAGE_SECTORS as f64)
    }
}

fn ramp(n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |i| TAU * i as f64 / n as f64)
}

/// Single-mode block seen by the detector for `mode`, after the detection loss.
pub fn detected_block(cm: &CovMat4, mode: ModeName, det: &DetectionSpec) -> Result<SingleModeBlock> {
    let lossy = loss_channel(cm, det.effective_transmission())?;
    Ok(apply_symplectic(&lossy, &mode.mixing_map()).mode_block(0))
}

/// Samples `mode` of the state `cm`: at phase θ each value is drawn from
/// `N(0, V(θ))` with `V(θ) = σxx cos²θ + σyy sin²θ + σxy sin 2θ`, then scaled
/// to detector units.
pub fn simulate_trace(cm: &CovMat4, mode: ModeName, det: &DetectionSpec) -> Result<QuadratureTrace> {
    det.validate()?;
    if !cm.is_physical(PHYSICAL_TOL) {
        return Err(Error::invalid("cannot simulate an unphysical covariance matrix"));
    }
    let block = detected_block(cm, mode, det)?;
    let gain = (det.shot_variance / SHOT_NOISE).sqrt();
    let mut rng = substream(det.seed, &format!("trace:{mode}"));
    let n = det.samples_per_trace;
    let phases: Vec<f64> = ramp(n).collect();
    let values = phases
        .iter()
        .map(|&theta| {
            let z: f64 = rng.sample(StandardNormal);
            gain * block.variance_at(theta).sqrt() * z
        })
        .collect();
    Ok(QuadratureTrace {
        mode: TraceMode::Mode(mode),
        phases,
        values,
        meta: TraceMeta {
            seed: det.seed,
            sample_count: n,
            shot_variance: det.shot_variance,
            efficiency: Some(det.efficiency),
        },
    })
}

/// Vacuum trace at the configured raw shot variance.
pub fn simulate_shot_trace(det: &DetectionSpec) -> Result<QuadratureTrace> {
    det.validate()?;
    let sd = det.shot_variance.sqrt();
    let mut rng = substream(det.seed, "trace:shot");
    let n = det.samples_per_trace;
    let values = (0..n)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            sd * z
        })
        .collect();
    Ok(QuadratureTrace {
        mode: TraceMode::Shot,
        phases: ramp(n).collect(),
        values,
        meta: TraceMeta {
            seed: det.seed,
            sample_count: n,
            shot_variance: det.shot_variance,
            efficiency: Some(det.efficiency),
        },
    })
}

/// `n̄ = V̄ · 0.5 / shot - 0.5`, with `V̄` the phase-averaged variance and
/// `shot` the trace's recorded shot variance.
pub fn mean_photon_number(trace: &QuadratureTrace) -> Result<f64> {
    let v = trace.phase_averaged_variance()?;
    Ok(v * SHOT_NOISE / trace.meta.shot_variance - SHOT_NOISE)
}

/// `%.9g`-style formatting.
pub fn format_sig(x: f64, sig: usize) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{:.*e}", sig - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    let trim = |s: &str| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if exp < -5 || exp >= sig as i32 {
        format!("{}e{}{:02}", trim(mantissa), if exp < 0 { '-' } else { '+' }, exp.abs())
    } else {
        let decimals = (sig as i32 - 1 - exp).max(0) as usize;
        trim(&format!("{:.*}", decimals, x))
    }
}

/// Writes the CSV trace format: `# mode=`, `# shot_variance=`, `# seed=`
/// header lines, then `phase,value` rows with 9 significant digits.
pub fn write_trace(path: &Path, trace: &QuadratureTrace) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut emit = || -> std::io::Result<()> {
        writeln!(w, "# mode={}", trace.mode)?;
        writeln!(w, "# shot_variance={}", trace.meta.shot_variance)?;
        writeln!(w, "# seed={}", trace.meta.seed)?;
        for (&p, &v) in trace.phases.iter().zip(&trace.values) {
            writeln!(w, "{},{}", format_sig(p, 9), format_sig(v, 9))?;
        }
        w.flush()
    };
    emit().map_err(|e| Error::io(path, e))
}

pub fn read_trace(path: &Path) -> Result<QuadratureTrace> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut mode = None;
    let mut shot_variance = None;
    let mut seed = None;
    let mut phases = Vec::new();
    let mut values = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(header) = line.strip_prefix('#') {
            let Some((key, value)) = header.trim().split_once('=') else {
                continue;
            };
            let value = value.trim();
            match key.trim() {
                "mode" => {
                    mode = Some(
                        TraceMode::parse(value).ok_or_else(|| parse_err(lineno, format!("unknown mode '{value}'")))?,
                    )
                }
                "shot_variance" => {
                    shot_variance = Some(
                        value
                            .parse::<f64>()
                            .map_err(|e| parse_err(lineno, format!("bad shot_variance: {e}")))?,
                    )
                }
                "seed" => {
                    seed = Some(value.parse::<u64>().map_err(|e| parse_err(lineno, format!("bad seed: {e}")))?)
                }
                _ => {}
            }
            continue;
        }
        let (p, v) = line
            .split_once(',')
            .ok_or_else(|| parse_err(lineno, "expected 'phase,value'".into()))?;
        let p: f64 = p.trim().parse().map_err(|e| parse_err(lineno, format!("bad phase: {e}")))?;
        let v: f64 = v.trim().parse().map_err(|e| parse_err(lineno, format!("bad value: {e}")))?;
        if !(p.is_finite() && v.is_finite()) {
            return Err(parse_err(lineno, "non-finite number".into()));
        }
        if let Some(&last) = phases.last() {
            if p < last {
                return Err(parse_err(lineno, "phases must be non-decreasing".into()));
            }
        }
        phases.push(p);
        values.push(v);
    }
    let missing = |what: &str| parse_err(0, format!("missing '# {what}=' header"));
    let mode = mode.ok_or_else(|| missing("mode"))?;
    let shot_variance = shot_variance.ok_or_else(|| missing("shot_variance"))?;
    let seed = seed.ok_or_else(|| missing("seed"))?;
    Ok(QuadratureTrace {
        mode,
        meta: TraceMeta {
            seed,
            sample_count: values.len(),
            shot_variance,
            efficiency: None,
        },
        phases,
        values,
    })
}
