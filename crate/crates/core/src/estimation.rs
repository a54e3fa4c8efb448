//! From raw quadrature traces to a covariance matrix with uncertainties.

use std::collections::BTreeMap;
use std::f64::consts::TAU;

use nalgebra::{Matrix3, Matrix4, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{CovMat4, SingleModeBlock, SHOT_NOISE};
use crate::homodyne::{mean_photon_number, QuadratureTrace, TraceMode};
use crate::optics::ModeName;

pub const DEFAULT_BINS: usize = 100;

/// Samples falling in one phase bin.
#[derive(Clone, Debug)]
pub struct PhaseBin {
    pub center: f64,
    samples: Vec<f64>,
    /// Sample means of cos²θ, sin²θ and sin 2θ.
    regressors: [f64; 3],
    variance: f64,
    kurtosis: f64,
}

impl PhaseBin {
    /// Builds a bin from `(θ, value)` pairs.
    pub fn new(center: f64, points: &[(f64, f64)]) -> Self {
        let n = points.len() as f64;
        let mut regressors = [0.0; 3];
        let mut sum = 0.0;
        for &(theta, v) in points {
            let (s, c) = theta.sin_cos();
            regressors[0] += c * c;
            regressors[1] += s * s;
            regressors[2] += 2.0 * s * c;
            sum += v;
        }
        if !points.is_empty() {
            regressors.iter_mut().for_each(|r| *r /= n);
        }
        let mean = sum / n;
        let (mut m2, mut m4) = (0.0, 0.0);
        for &(_, v) in points {
            let d2 = (v - mean) * (v - mean);
            m2 += d2;
            m4 += d2 * d2;
        }
        let variance = if points.len() > 1 { m2 / (n - 1.0) } else { f64::NAN };
        let kurtosis = if m2 > 0.0 { (m4 / n) / (m2 / n).powi(2) } else { f64::NAN };
        PhaseBin {
            center,
            samples: points.iter().map(|p| p.1).collect(),
            regressors,
            variance,
            kurtosis,
        }
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn count(&self) -> usize {
        self.samples.len()
    }

    pub fn regressors(&self) -> [f64; 3] {
        self.regressors
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        self.variance
    }

    /// Gaussian-theory standard error `V̂·sqrt(2/(N−1))`.
    pub fn variance_se(&self) -> f64 {
        self.variance * (2.0 / (self.count() as f64 - 1.0)).sqrt()
    }

    /// `m4 / m2²` with central moments.
    pub fn kurtosis(&self) -> f64 {
        self.kurtosis
    }

    pub fn kurtosis_se(&self) -> f64 {
        (24.0 / self.count() as f64).sqrt()
    }
}

#[derive(Clone, Debug)]
pub struct BinnedMarginals {
    pub mode: TraceMode,
    pub bins: Vec<PhaseBin>,
}

impl BinnedMarginals {
    pub fn counts(&self) -> Vec<usize> {
        self.bins.iter().map(PhaseBin::count).collect()
    }
}

/// Partitions `[0, 2π)` into `bins` equal-width bins.
pub fn bin_trace(trace: &QuadratureTrace, bins: usize) -> Result<BinnedMarginals> {
    if bins == 0 {
        return Err(Error::invalid("bin count must be positive"));
    }
    let width = TAU / bins as f64;
    let mut buckets: Vec<Vec<(f64, f64)>> = vec![Vec::with_capacity(trace.len() / bins + 1); bins];
    for (&theta, &v) in trace.phases.iter().zip(&trace.values) {
        let theta = theta.rem_euclid(TAU);
        // nudge so that phases sitting on an edge up to rounding land above it
        let k = ((theta / TAU * bins as f64 + 1e-9) as usize).min(bins - 1);
        buckets[k].push((theta, v));
    }
    if let Some(k) = buckets.iter().position(Vec::is_empty) {
        return Err(Error::InsufficientCoverage(format!("trace {}: phase bin {k} of {bins} is empty", trace.mode)));
    }
    let bins = buckets
        .iter()
        .enumerate()
        .map(|(k, pts)| PhaseBin::new((k as f64 + 0.5) * width, pts))
        .collect();
    Ok(BinnedMarginals { mode: trace.mode, bins })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianityConfig {
    pub min_samples_per_bin: usize,
    /// Allowed `|mean kurtosis − 3|`.
    pub mean_threshold: f64,
    /// A bin is an outlier when `|k − 3|` exceeds this.
    pub outlier_deviation: f64,
    pub max_outlier_fraction: f64,
}

impl Default for GaussianityConfig {
    fn default() -> Self {
        GaussianityConfig {
            min_samples_per_bin: 100,
            mean_threshold: 0.1,
            outlier_deviation: 0.5,
            max_outlier_fraction: 0.01,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinKurtosis {
    pub mode: TraceMode,
    pub bin: usize,
    pub center: f64,
    pub kurtosis: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianityReport {
    pub bins: Vec<BinKurtosis>,
    pub mean: f64,
    pub sd: f64,
    pub outlier_fraction: f64,
    pub pass: bool,
    pub warnings: Vec<String>,
}

impl GaussianityReport {
    /// Plot-ready `mode,bin,center,kurtosis` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("mode,bin,center,kurtosis\n");
        for b in &self.bins {
            out.push_str(&format!("{},{},{:.6},{:.6}\n", b.mode, b.bin, b.center, b.kurtosis));
        }
        out
    }
}

pub fn gaussianity_test(binned: &[BinnedMarginals], cfg: &GaussianityConfig) -> Result<GaussianityReport> {
    let mut bins = Vec::new();
    let mut warnings = Vec::new();
    for marg in binned {
        for (k, bin) in marg.bins.iter().enumerate() {
            if bin.count() < cfg.min_samples_per_bin {
                return Err(Error::InsufficientCoverage(format!(
                    "trace {} bin {k} has {} samples, need {}",
                    marg.mode,
                    bin.count(),
                    cfg.min_samples_per_bin
                )));
            }
            if !bin.kurtosis().is_finite() {
                warnings.push(format!("trace {} bin {k}: zero variance, excluded", marg.mode));
                continue;
            }
            bins.push(BinKurtosis {
                mode: marg.mode,
                bin: k,
                center: bin.center,
                kurtosis: bin.kurtosis(),
            });
        }
    }
    if bins.is_empty() {
        return Err(Error::InsufficientCoverage("no usable bins for the kurtosis test".into()));
    }
    let n = bins.len() as f64;
    let mean = bins.iter().map(|b| b.kurtosis).sum::<f64>() / n;
    let sd = if bins.len() > 1 {
        (bins.iter().map(|b| (b.kurtosis - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let outliers = bins.iter().filter(|b| (b.kurtosis - 3.0).abs() > cfg.outlier_deviation).count();
    let outlier_fraction = outliers as f64 / n;
    let pass = (mean - 3.0).abs() <= cfg.mean_threshold && outlier_fraction <= cfg.max_outlier_fraction;
    Ok(GaussianityReport {
        bins,
        mean,
        sd,
        outlier_fraction,
        pass,
        warnings,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StationarityReport {
    /// `n̄ + ½` per trace.
    pub levels: Vec<(TraceMode, f64)>,
    /// `max/min − 1` over the levels.
    pub max_relative_deviation: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// `photon_numbers` holds `n̄` per trace.
pub fn stationarity_gate(photon_numbers: &[(TraceMode, f64)], tolerance: f64) -> StationarityReport {
    let levels: Vec<(TraceMode, f64)> = photon_numbers.iter().map(|&(m, n)| (m, n + SHOT_NOISE)).collect();
    let max = levels.iter().map(|l| l.1).fold(f64::NEG_INFINITY, f64::max);
    let min = levels.iter().map(|l| l.1).fold(f64::INFINITY, f64::min);
    let max_relative_deviation = if levels.is_empty() {
        0.0
    } else if min > 0.0 {
        max / min - 1.0
    } else {
        f64::INFINITY
    };
    StationarityReport {
        levels,
        max_relative_deviation,
        tolerance,
        pass: max_relative_deviation <= tolerance,
    }
}

/// Weighted least-squares estimate of a single-mode block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceFit {
    pub sigma_xx: f64,
    pub sigma_yy: f64,
    pub sigma_xy: f64,
    /// Covariance of `(σxx, σyy, σxy)`.
    pub covariance: [[f64; 3]; 3],
    pub chi2: f64,
    pub dof: usize,
}

impl VarianceFit {
    pub fn block(&self) -> SingleModeBlock {
        SingleModeBlock {
            xx: self.sigma_xx,
            yy: self.sigma_yy,
            xy: self.sigma_xy,
        }
    }

    pub fn estimates(&self) -> [f64; 3] {
        [self.sigma_xx, self.sigma_yy, self.sigma_xy]
    }

    /// Standard errors of `(σxx, σyy, σxy)`.
    pub fn se(&self) -> [f64; 3] {
        [0, 1, 2].map(|i| self.covariance[i][i].sqrt())
    }

    pub fn v_min(&self) -> f64 {
        self.block().v_min()
    }

    pub fn v_max(&self) -> f64 {
        self.block().v_max()
    }

    /// Adds a common relative scale uncertainty (e.g. from the shot-noise
    /// normalisation) to the estimate covariance.
    pub fn with_scale_uncertainty(mut self, rel_var: f64) -> Self {
        let b = self.estimates();
        for i in 0..3 {
            for j in 0..3 {
                self.covariance[i][j] += rel_var * b[i] * b[j];
            }
        }
        self
    }
}

fn solve_wls(rows: &[([f64; 3], f64, f64)]) -> Result<(Vector3<f64>, Matrix3<f64>)> {
    let mut normal = Matrix3::zeros();
    let mut rhs = Vector3::zeros();
    for &(a, y, w) in rows {
        let a = Vector3::from(a);
        normal += w * a * a.transpose();
        rhs += w * y * a;
    }
    // scale-free conditioning check
    let d = normal.diagonal().map(|x| if x > 0.0 { 1.0 / x.sqrt() } else { 0.0 });
    let scaled = Matrix3::from_diagonal(&d) * normal * Matrix3::from_diagonal(&d);
    let eig = scaled.symmetric_eigenvalues();
    if d.iter().any(|&x| x == 0.0) || eig.min() < 1e-10 * eig.max() {
        return Err(Error::FitDegenerate("design matrix is singular (phases do not separate cos², sin², sin 2θ)".into()));
    }
    let chol = normal
        .cholesky()
        .ok_or_else(|| Error::FitDegenerate("normal matrix is not positive definite".into()))?;
    Ok((chol.solve(&rhs), chol.inverse()))
}

/// Fits `V(θ) = σxx cos²θ + σyy sin²θ + σxy sin 2θ` to the per-bin variances,
/// after rescaling so that a raw variance of `shot` reads 0.5.
///
/// Two passes: weights `(N−1)/(2V²)` first from the observed variances, then
/// from the first-pass model.
pub fn fit_single_mode(binned: &BinnedMarginals, shot: f64) -> Result<VarianceFit> {
    if binned.bins.len() < 3 {
        return Err(Error::FitDegenerate(format!("need at least 3 bins, got {}", binned.bins.len())));
    }
    if !(shot.is_finite() && shot > 0.0) {
        return Err(Error::invalid("shot-noise variance must be positive"));
    }
    let scale = SHOT_NOISE / shot;
    let mut rows = Vec::with_capacity(binned.bins.len());
    for (k, bin) in binned.bins.iter().enumerate() {
        if bin.count() < 2 {
            return Err(Error::InsufficientCoverage(format!("trace {} bin {k} has fewer than 2 samples", binned.mode)));
        }
        let v = bin.variance() * scale;
        if v <= 0.0 {
            return Err(Error::FitDegenerate(format!("trace {} bin {k} has zero variance", binned.mode)));
        }
        let dof = bin.count() as f64 - 1.0;
        rows.push((bin.regressors(), v, dof / (2.0 * v * v)));
    }
    let (mut beta, mut cov) = solve_wls(&rows)?;

    let model: Vec<f64> = rows.iter().map(|(a, _, _)| Vector3::from(*a).dot(&beta)).collect();
    if model.iter().all(|&m| m > 0.0) {
        let reweighted: Vec<_> = rows
            .iter()
            .zip(&binned.bins)
            .zip(&model)
            .map(|(((a, y, _), bin), &m)| (*a, *y, (bin.count() as f64 - 1.0) / (2.0 * m * m)))
            .collect();
        (beta, cov) = solve_wls(&reweighted)?;
        rows = reweighted;
    }
    let chi2 = rows
        .iter()
        .map(|(a, y, w)| w * (y - Vector3::from(*a).dot(&beta)).powi(2))
        .sum();
    let fit = VarianceFit {
        sigma_xx: beta[0],
        sigma_yy: beta[1],
        sigma_xy: beta[2],
        covariance: [0, 1, 2].map(|i| [0, 1, 2].map(|j| cov[(i, j)])),
        chi2,
        dof: rows.len() - 3,
    };
    if fit.v_min() <= 0.0 {
        return Err(Error::FitDegenerate(format!(
            "trace {}: fitted variance is not positive at every phase (V_min = {:.4})",
            binned.mode,
            fit.v_min()
        )));
    }
    Ok(fit)
}

/// The two independent estimates of one cross-block entry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossCheck {
    pub entry: String,
    pub first: f64,
    pub second: f64,
    /// `|first − second|` in units of its combined standard error.
    pub sigmas: f64,
}

/// Assembles the 4×4 matrix; the two estimates of each cross entry must agree
/// within 3 combined standard errors.
pub fn assemble_cm(fits: &BTreeMap<ModeName, VarianceFit>) -> Result<CovMat4> {
    assemble_cm_with(fits, 3.0).map(|(cm, _)| cm)
}

pub fn assemble_cm_with(
    fits: &BTreeMap<ModeName, VarianceFit>,
    consistency_sigma: f64,
) -> Result<(CovMat4, Vec<CrossCheck>)> {
    let missing: Vec<&str> = ModeName::ALL
        .iter()
        .filter(|m| !fits.contains_key(m))
        .map(|m| m.symbol())
        .collect();
    if !missing.is_empty() {
        return Err(Error::IncompleteInput(format!("missing fits for mode(s) {}", missing.join(", "))));
    }
    let f = |m: ModeName| &fits[&m];
    let (a, b) = (f(ModeName::A), f(ModeName::B));
    let (sa, sb) = (a.se(), b.se());

    let mut e = Matrix4::zeros();
    let mut err = Matrix4::zeros();
    let mut set = |i: usize, j: usize, v: f64, s: f64| {
        e[(i, j)] = v;
        e[(j, i)] = v;
        err[(i, j)] = s;
        err[(j, i)] = s;
    };
    set(0, 0, a.sigma_xx, sa[0]);
    set(1, 1, a.sigma_yy, sa[1]);
    set(0, 1, a.sigma_xy, sa[2]);
    set(2, 2, b.sigma_xx, sb[0]);
    set(3, 3, b.sigma_yy, sb[1]);
    set(2, 3, b.sigma_xy, sb[2]);

    // (entry, row, col, first aux (value, se), second aux (value, se),
    //  diagonal pair, sign of first estimate)
    struct Cross {
        name: &'static str,
        i: usize,
        j: usize,
        plus: (f64, f64),
        minus: (f64, f64),
        diag: [(f64, f64); 2],
        plus_first: bool,
    }
    let (c, d, ee, ff) = (f(ModeName::C), f(ModeName::D), f(ModeName::E), f(ModeName::F));
    let pick = |fit: &VarianceFit, k: usize| (fit.estimates()[k], fit.se()[k]);
    let crosses = [
        // σ13 = Vc − ½(σ11+σ33) = ½(σ11+σ33) − Vd
        Cross {
            name: "sigma_13",
            i: 0,
            j: 2,
            plus: pick(c, 0),
            minus: pick(d, 0),
            diag: [pick(a, 0), pick(b, 0)],
            plus_first: true,
        },
        Cross {
            name: "sigma_24",
            i: 1,
            j: 3,
            plus: pick(c, 1),
            minus: pick(d, 1),
            diag: [pick(a, 1), pick(b, 1)],
            plus_first: true,
        },
        // σ23 = ½(σ22+σ33) − Var(X_e) = Var(X_f) − ½(σ22+σ33)
        Cross {
            name: "sigma_23",
            i: 1,
            j: 2,
            plus: pick(ff, 0),
            minus: pick(ee, 0),
            diag: [pick(a, 1), pick(b, 0)],
            plus_first: false,
        },
        // σ14 = Var(Y_e) − ½(σ11+σ44) = ½(σ11+σ44) − Var(Y_f)
        Cross {
            name: "sigma_14",
            i: 0,
            j: 3,
            plus: pick(ee, 1),
            minus: pick(ff, 1),
            diag: [pick(a, 0), pick(b, 1)],
            plus_first: true,
        },
    ];

    let mut checks = Vec::with_capacity(4);
    for x in &crosses {
        let half_sum = 0.5 * (x.diag[0].0 + x.diag[1].0);
        let from_plus = x.plus.0 - half_sum;
        let from_minus = half_sum - x.minus.0;
        let (first, second) = if x.plus_first {
            (from_plus, from_minus)
        } else {
            (from_minus, from_plus)
        };
        let diff_se =
            (x.plus.1.powi(2) + x.minus.1.powi(2) + x.diag[0].1.powi(2) + x.diag[1].1.powi(2)).sqrt();
        let sigmas = if diff_se > 0.0 {
            (first - second).abs() / diff_se
        } else if first == second {
            0.0
        } else {
            f64::INFINITY
        };
        if sigmas > consistency_sigma {
            return Err(Error::ReconstructionInconsistency {
                entry: x.name.to_string(),
                first,
                second,
                sigmas,
            });
        }
        // the diagonal terms cancel in the average
        let value = 0.5 * (x.plus.0 - x.minus.0);
        let se = 0.5 * (x.plus.1.powi(2) + x.minus.1.powi(2)).sqrt();
        set(x.i, x.j, value, se);
        checks.push(CrossCheck {
            entry: x.name.to_string(),
            first,
            second,
            sigmas,
        });
    }
    let cm = CovMat4::new(e)?.with_errors(err)?;
    Ok((cm, checks))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionConfig {
    pub bins: usize,
    pub stationarity_tolerance: f64,
    pub consistency_sigma: f64,
    /// Floor on samples per trace.
    pub min_samples: usize,
    pub gaussianity: GaussianityConfig,
}

impl Default for ReconstructionConfig {
    fn default() -> Self {
        ReconstructionConfig {
            bins: DEFAULT_BINS,
            stationarity_tolerance: 0.05,
            consistency_sigma: 3.0,
            min_samples: 10_000,
            gaussianity: GaussianityConfig::default(),
        }
    }
}

/// Six signal traces plus the shot-noise reference.
#[derive(Clone, Debug)]
pub struct TraceSet {
    pub modes: BTreeMap<ModeName, QuadratureTrace>,
    pub shot: QuadratureTrace,
}

impl TraceSet {
    pub fn new(traces: Vec<QuadratureTrace>) -> Result<Self> {
        let mut modes = BTreeMap::new();
        let mut shot = None;
        for t in traces {
            match t.mode {
                TraceMode::Mode(m) => {
                    if modes.insert(m, t).is_some() {
                        return Err(Error::invalid(format!("duplicate trace for mode {m}")));
                    }
                }
                TraceMode::Shot => {
                    if shot.replace(t).is_some() {
                        return Err(Error::invalid("duplicate shot trace"));
                    }
                }
            }
        }
        let shot = shot.ok_or_else(|| Error::IncompleteInput("missing shot trace".into()))?;
        Ok(TraceSet { modes, shot })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Reconstruction {
    /// Assembled matrix; absent when the cross-checks disagree.
    pub cm: Option<CovMat4>,
    pub fits: BTreeMap<ModeName, VarianceFit>,
    pub cross_checks: Vec<CrossCheck>,
    pub gaussianity: GaussianityReport,
    pub stationarity: StationarityReport,
    /// Phase-averaged raw variance of the shot trace.
    pub measured_shot_variance: f64,
    pub error: Option<String>,
}

impl Reconstruction {
    pub fn gates_passed(&self) -> bool {
        self.gaussianity.pass && self.stationarity.pass && self.cm.is_some()
    }
}

/// Shot normalisation, binning, Gaussianity and stationarity gates, per-mode
/// fits and assembly. Gate failures are reported, not raised.
pub fn reconstruct(set: &TraceSet, cfg: &ReconstructionConfig) -> Result<Reconstruction> {
    let missing: Vec<&str> = ModeName::ALL
        .iter()
        .filter(|m| !set.modes.contains_key(m))
        .map(|m| m.symbol())
        .collect();
    if !missing.is_empty() {
        return Err(Error::IncompleteInput(format!("missing trace(s) for mode(s) {}", missing.join(", "))));
    }
    for t in set.modes.values().chain([&set.shot]) {
        if t.len() < cfg.min_samples {
            return Err(Error::InsufficientCoverage(format!(
                "trace {} has {} samples, below the floor of {}",
                t.mode,
                t.len(),
                cfg.min_samples
            )));
        }
    }
    let shot_var = set.shot.phase_averaged_variance()?;
    let shot_n = set.shot.len() as f64;

    let normalized: Vec<QuadratureTrace> = set
        .modes
        .values()
        .chain([&set.shot])
        .map(|t| t.normalized_to_shot(shot_var))
        .collect();
    let binned: Vec<BinnedMarginals> = normalized
        .par_iter()
        .map(|t| bin_trace(t, cfg.bins))
        .collect::<Result<_>>()?;
    let gaussianity = gaussianity_test(&binned, &cfg.gaussianity)?;

    let photon: Vec<(TraceMode, f64)> = normalized[..6]
        .iter()
        .map(|t| Ok((t.mode, mean_photon_number(t)?)))
        .collect::<Result<_>>()?;
    let stationarity = stationarity_gate(&photon, cfg.stationarity_tolerance);

    let rel_var = 2.0 / (shot_n - 1.0);
    let fits: BTreeMap<ModeName, VarianceFit> = binned[..6]
        .par_iter()
        .map(|b| {
            let TraceMode::Mode(m) = b.mode else { unreachable!("signal traces come first") };
            Ok((m, fit_single_mode(b, SHOT_NOISE)?.with_scale_uncertainty(rel_var)))
        })
        .collect::<Result<_>>()?;

    let (cm, cross_checks, error) = match assemble_cm_with(&fits, cfg.consistency_sigma) {
        Ok((cm, checks)) => (Some(cm), checks, None),
        Err(e @ Error::ReconstructionInconsistency { .. }) => (None, Vec::new(), Some(e.to_string())),
        Err(e) => return Err(e),
    };
    Ok(Reconstruction {
        cm,
        fits,
        cross_checks,
        gaussianity,
        stationarity,
        measured_shot_variance: shot_var,
        error,
    })
}
