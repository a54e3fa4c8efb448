//! Reference numbers and the side-by-side replication table.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::Matrix4;
use rayon::prelude::*;
use serde::Serialize;

use crate::analysis::{analyze, estimate_transmission, AnalysisConfig, TransmissionChoice};
use crate::error::Result;
use crate::estimation::{reconstruct, ReconstructionConfig, TraceSet};
use crate::gaussian::{tmsv_cm, CovMat4, SqueezeSpec, StandardFormParams};
use crate::homodyne::{simulate_shot_trace, simulate_trace, DetectionSpec};
use crate::optics::ModeName;

/// Measured two-mode covariance matrix, every entry ±0.02.
pub fn reference_measured_cm() -> CovMat4 {
    CovMat4::from_rows([
        [0.61, 0.004, 0.29, -0.01],
        [0.004, 0.61, 0.005, -0.23],
        [0.29, 0.005, 0.60, 0.002],
        [-0.01, -0.23, 0.002, 0.60],
    ])
    .and_then(|cm| cm.with_errors(Matrix4::from_element(0.02)))
    .expect("reference matrix is valid")
}

/// Symmetrised reference matrix: diagonal 0.61, correlations ±0.26.
pub fn reference_symmetrized_cm() -> CovMat4 {
    StandardFormParams::new(0.61, 0.61, 0.26, -0.26)
        .expect("valid")
        .to_cm()
}

pub const REFERENCE_R: f64 = 0.4335;
pub const REFERENCE_T: f64 = 0.53;

#[derive(Clone, Debug, Serialize)]
pub struct Row {
    pub criterion: u8,
    pub label: String,
    pub reference: String,
    pub computed: f64,
    pub tolerance: String,
    pub pass: bool,
}

impl fmt::Display for Row {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:>2}  {:<34} {:>10} {:>12.4} {:>14}  {}",
            self.criterion,
            self.label,
            self.reference,
            self.computed,
            self.tolerance,
            if self.pass { "PASS" } else { "FAIL" }
        )
    }
}

pub fn header() -> String {
    format!(
        "{:>2}  {:<34} {:>10} {:>12} {:>14}  {}",
        "#", "quantity", "reference", "computed", "tolerance", "result"
    )
}

fn within(criterion: u8, label: &str, reference: f64, computed: f64, tol: f64) -> Row {
    Row {
        criterion,
        label: label.into(),
        reference: format!("{reference}"),
        computed,
        tolerance: format!("±{tol:.3}"),
        pass: (computed - reference).abs() <= tol,
    }
}

fn at_least(criterion: u8, label: &str, bound: f64, computed: f64) -> Row {
    Row {
        criterion,
        label: label.into(),
        reference: format!(">={bound}"),
        computed,
        tolerance: "-".into(),
        pass: computed >= bound,
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ReplicationSettings {
    pub r: f64,
    pub detection: DetectionSpec,
    pub draws: usize,
    pub seed: u64,
    pub transmission: f64,
    /// Statistical tolerances of the trace-level rows are multiplied by this.
    pub tolerance_scale: f64,
}

impl ReplicationSettings {
    pub fn full(seed: u64) -> Self {
        ReplicationSettings {
            r: REFERENCE_R,
            detection: DetectionSpec {
                seed,
                ..DetectionSpec::default()
            },
            draws: 100_000,
            seed,
            transmission: REFERENCE_T,
            tolerance_scale: 1.0,
        }
    }

    /// 10^5 samples per trace and 10^4 draws; trace-level tolerances widen by
    /// the square root of the sample reduction.
    pub fn quick(seed: u64) -> Self {
        let mut s = Self::full(seed);
        s.detection.samples_per_trace = 100_000;
        s.draws = 10_000;
        s.tolerance_scale = 10f64.sqrt();
        s
    }
}

/// Simulates the six signal traces and the shot trace of a two-mode squeezed
/// vacuum.
pub fn simulate_set(r: f64, det: &DetectionSpec) -> Result<TraceSet> {
    let cm = tmsv_cm(SqueezeSpec::new(r)?);
    let mut traces = ModeName::ALL
        .par_iter()
        .map(|&m| simulate_trace(&cm, m, det))
        .collect::<Result<Vec<_>>>()?;
    traces.push(simulate_shot_trace(det)?);
    TraceSet::new(traces)
}

pub fn replicate(s: &ReplicationSettings) -> Result<Vec<Row>> {
    let mut rows = Vec::new();
    let cfg = AnalysisConfig {
        draws: s.draws,
        seed: s.seed,
        transmission: TransmissionChoice::Fixed(s.transmission),
        ..AnalysisConfig::default()
    };
    let report = analyze(&reference_measured_cm(), None, &cfg)?;
    let c = &report.criteria;
    rows.push(within(1, "PHS LHS", 0.51, c.phs_lhs.value, 0.01));
    rows.push(within(1, "Duan LHS", -0.31, c.duan_lhs.value, 0.01));
    rows.push(within(1, "PHS uncertainty", 0.03, c.phs_lhs.uncertainty, 0.3 * 0.03));
    rows.push(within(1, "Duan uncertainty", 0.04, c.duan_lhs.uncertainty, 0.3 * 0.04));

    let two_dp = |x: f64| (x * 100.0).round() / 100.0;
    if let Some(a) = &report.ancestor {
        rows.push(within(2, "ancestor diagonal (2 dp)", 0.70, two_dp(a.cm.get(0, 0)), 1e-9));
        rows.push(within(2, "ancestor correlation (2 dp)", 0.48, two_dp(a.cm.get(0, 2)), 1e-9));
        rows.push(within(2, "ancestor point purity", 0.96, a.purity.unwrap_or(f64::NAN), 0.01));
    }
    if let Some(p) = &report.purity {
        rows.push(within(2, "purity MC mean", 0.99, p.summary.mean, 0.02));
        rows.push(within(2, "purity MC SD", 0.03, p.summary.sd, 0.01));
        rows.push(within(2, "purity MC median", 0.966, p.summary.median, 0.01));
    }
    rows.push(at_least(3, "PHS significance (sigma)", 7.5, c.phs_sigma.unwrap_or(0.0)));
    rows.push(at_least(3, "Duan significance (sigma)", 7.5, c.duan_sigma.unwrap_or(0.0)));

    let set = simulate_set(s.r, &s.detection)?;
    let rec = reconstruct(&set, &ReconstructionConfig::default())?;
    let target = reference_symmetrized_cm();
    let deviation = rec.cm.as_ref().map_or(f64::INFINITY, |cm| cm.max_abs_diff(&target));
    rows.push(Row {
        criterion: 4,
        label: "max |reconstructed - symmetrized|".into(),
        reference: "0".into(),
        computed: deviation,
        tolerance: format!("<={:.3}", 0.02 * s.tolerance_scale),
        pass: deviation <= 0.02 * s.tolerance_scale,
    });
    rows.push(within(4, "kurtosis mean", 3.0, rec.gaussianity.mean, 0.05 * s.tolerance_scale));
    rows.push(Row {
        criterion: 4,
        label: "kurtosis SD".into(),
        reference: "0.05".into(),
        computed: rec.gaussianity.sd,
        tolerance: format!("<={:.3}", 0.07 * s.tolerance_scale),
        pass: rec.gaussianity.sd <= 0.07 * s.tolerance_scale,
    });
    let aux: BTreeMap<_, _> = rec
        .fits
        .iter()
        .filter(|(m, _)| ModeName::AUXILIARY.contains(m))
        .map(|(m, f)| (*m, f.clone()))
        .collect();
    let t = estimate_transmission(&aux)?;
    rows.push(within(5, "transmission (aux closed form)", 0.53, t.mean.value, 0.02 * s.tolerance_scale));
    Ok(rows)
}
