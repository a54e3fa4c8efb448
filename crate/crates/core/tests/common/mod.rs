#![allow(dead_code)]

use std::f64::consts::PI;

use nalgebra::Matrix4;
use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;

use twinbeam::estimation::{reconstruct, ReconstructionConfig, TraceSet};
use twinbeam::gaussian::{apply_symplectic, CovMat4, SymplecticMap};
use twinbeam::homodyne::{simulate_shot_trace, simulate_trace, DetectionSpec};
use twinbeam::optics::{BaseMode, ElementSpec, ModeExpr, ModeLabel, ModeName, Polarization, TopologicalCharge};
use twinbeam::rng::{substream, StreamRng};

pub fn rng(seed: u64, name: &str) -> StreamRng {
    substream(seed, name)
}

/// Single-mode squeezer on `mode` with squeezing `s`.
pub fn squeezer(mode: usize, s: f64) -> SymplecticMap {
    let mut m = Matrix4::identity();
    m[(2 * mode, 2 * mode)] = (-s).exp();
    m[(2 * mode + 1, 2 * mode + 1)] = s.exp();
    SymplecticMap::new(m).unwrap()
}

/// Product of random rotations, beam splitters and squeezers, |s| <= max_squeeze.
pub fn random_symplectic(rng: &mut StreamRng, max_squeeze: f64) -> SymplecticMap {
    let mut s = SymplecticMap::identity();
    for _ in 0..3 {
        let layer = [
            SymplecticMap::phase_rotation(0, rng.random_range(0.0..2.0 * PI)),
            SymplecticMap::phase_rotation(1, rng.random_range(0.0..2.0 * PI)),
            squeezer(0, rng.random_range(-max_squeeze..=max_squeeze)),
            squeezer(1, rng.random_range(-max_squeeze..=max_squeeze)),
            SymplecticMap::beamsplitter(rng.random_range(0.0..PI)),
        ];
        for l in layer {
            s = s.compose(&l);
        }
    }
    s
}

/// Williamson construction: `S diag(ν1, ν1, ν2, ν2) Sᵀ` with ν in [0.5, 0.5 + max_thermal].
pub fn random_physical_cm(rng: &mut StreamRng, max_squeeze: f64, max_thermal: f64) -> (CovMat4, (f64, f64)) {
    let nu1 = 0.5 + rng.random_range(0.0..=max_thermal);
    let nu2 = 0.5 + rng.random_range(0.0..=max_thermal);
    let d = Matrix4::from_diagonal(&nalgebra::Vector4::new(nu1, nu1, nu2, nu2));
    let s = random_symplectic(rng, max_squeeze);
    (apply_symplectic(&CovMat4::new(d).unwrap(), &s), (nu1, nu2))
}

pub fn random_mode_expr(rng: &mut StreamRng) -> ModeExpr {
    let pols = [Polarization::H, Polarization::V, Polarization::L, Polarization::R];
    let n = rng.random_range(1..=6);
    ModeExpr::from_terms((0..n).map(|_| {
        let base = if rng.random_bool(0.5) { BaseMode::A } else { BaseMode::B };
        let label = ModeLabel::new(pols[rng.random_range(0..4)], rng.random_range(-3..=3));
        let z = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        (base, label, z)
    }))
}

pub fn random_unitary_element(rng: &mut StreamRng) -> ElementSpec {
    match rng.random_range(0..3) {
        0 => ElementSpec::Qwp {
            angle: rng.random_range(0.0..2.0 * PI),
        },
        1 => ElementSpec::Hwp {
            angle: rng.random_range(0.0..2.0 * PI),
        },
        _ => ElementSpec::QPlate {
            charge: TopologicalCharge::from_twice(rng.random_range(-2..=2)),
            retardation: rng.random_range(0.0..=2.0 * PI),
        },
    }
}

/// Lossless detection with `samples` per trace.
pub fn ideal_detection(samples: usize, seed: u64) -> DetectionSpec {
    DetectionSpec {
        efficiency: 1.0,
        visibility: 1.0,
        samples_per_trace: samples,
        seed,
        ..DetectionSpec::default()
    }
}

pub fn simulate_all(cm: &CovMat4, det: &DetectionSpec) -> TraceSet {
    let mut traces: Vec<_> = ModeName::ALL
        .par_iter()
        .map(|&m| simulate_trace(cm, m, det).unwrap())
        .collect();
    traces.push(simulate_shot_trace(det).unwrap());
    TraceSet::new(traces).unwrap()
}

/// Per-entry outcome of one reconstruction round trip.
pub struct RoundTrip {
    pub truth: CovMat4,
    pub estimate: Option<CovMat4>,
    /// Both estimates of σ13, σ24, σ23, σ14 in that order; empty when the
    /// cross-checks failed.
    pub cross_pairs: Vec<(f64, f64)>,
}

impl RoundTrip {
    /// Every entry within `k` standard errors of the truth.
    pub fn within_se(&self, k: f64) -> bool {
        let Some(est) = &self.estimate else { return false };
        (0..4).all(|i| {
            (i..4).all(|j| (est.get(i, j) - self.truth.get(i, j)).abs() < k * est.error(i, j).unwrap())
        })
    }
}

/// `runs` random states through simulate, reconstruct and assemble.
pub fn reconstruction_round_trips(runs: usize, samples: usize, seed: u64) -> Vec<RoundTrip> {
    let mut gen = rng(seed, "roundtrip:states");
    let states: Vec<CovMat4> = (0..runs).map(|_| random_physical_cm(&mut gen, 0.5, 0.5).0).collect();
    states
        .into_iter()
        .enumerate()
        .map(|(k, truth)| {
            let det = ideal_detection(samples, seed.wrapping_add(k as u64 + 1));
            let set = simulate_all(&truth, &det);
            let rec = reconstruct(&set, &ReconstructionConfig::default()).unwrap();
            let cross_pairs = rec.cross_checks.iter().map(|c| (c.first, c.second)).collect();
            RoundTrip {
                truth,
                estimate: rec.cm,
                cross_pairs,
            }
        })
        .collect()
}

pub fn sample_variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

/// Row/column indices of the cross entries in cross-check order.
pub const CROSS_ENTRIES: [(usize, usize); 4] = [(0, 2), (1, 3), (1, 2), (0, 3)];
