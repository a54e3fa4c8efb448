//! Entanglement criteria, symmetrisation, loss estimation, ancestor state,
//! purity statistics and the twin-beam photon-number table.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::VarianceFit;
use crate::gaussian::{
    apply_symplectic, invert_loss, purity, standard_form, symplectic_eigenvalues, CovMat4, StandardFormParams,
    PHYSICAL_TOL, SHOT_NOISE,
};
use crate::optics::ModeName;
use crate::rng::{substream, StreamRng};

/// Separability boundary of the PHS left-hand side (vacuum value).
pub const PHS_THRESHOLD: f64 = 0.25;
pub const DUAN_THRESHOLD: f64 = 0.0;
pub const MIN_DRAWS: usize = 1_000;
const CHUNK: usize = 4_096;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub uncertainty: f64,
}

/// Summary of a Monte Carlo distribution.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McSummary {
    pub mean: f64,
    pub sd: f64,
    pub median: f64,
    pub draws: usize,
}

impl McSummary {
    pub fn from_samples(mut xs: Vec<f64>) -> Result<Self> {
        if xs.is_empty() {
            return Err(Error::DegenerateDistribution("no valid Monte Carlo draws".into()));
        }
        xs.sort_by(f64::total_cmp);
        let n = xs.len() as f64;
        if xs[0] == xs[xs.len() - 1] {
            return Ok(McSummary {
                mean: xs[0],
                sd: 0.0,
                median: xs[0],
                draws: xs.len(),
            });
        }
        let mean = xs.iter().sum::<f64>() / n;
        let sd = if xs.len() > 1 {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        let mid = xs.len() / 2;
        let median = if xs.len() % 2 == 1 {
            xs[mid]
        } else {
            0.5 * (xs[mid - 1] + xs[mid])
        };
        Ok(McSummary {
            mean,
            sd,
            median,
            draws: xs.len(),
        })
    }
}

/// `|mean − threshold| / sd` of a Monte Carlo distribution.
pub fn significance(mc: &McSummary, threshold: f64) -> Result<f64> {
    if mc.sd.is_nan() || mc.sd <= 0.0 {
        return Err(Error::DegenerateDistribution("zero spread: significance undefined".into()));
    }
    Ok((mc.mean - threshold).abs() / mc.sd)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymmetryReport {
    /// `|n − m|` and its bound `2(Δm + Δn)`.
    pub diagonal_gap: f64,
    pub diagonal_bound: f64,
    /// `||c1| − |c2||` and its bound `2(Δc1 + Δc2)`.
    pub correlation_gap: f64,
    pub correlation_bound: f64,
    pub pass: bool,
}

pub fn symmetry_gate(p: &StandardFormParams) -> SymmetryReport {
    let diagonal_gap = (p.n - p.m).abs();
    let diagonal_bound = 2.0 * (p.dm + p.dn);
    let correlation_gap = (p.c1.abs() - p.c2.abs()).abs();
    let correlation_bound = 2.0 * (p.dc1 + p.dc2);
    SymmetryReport {
        diagonal_gap,
        diagonal_bound,
        correlation_gap,
        correlation_bound,
        pass: diagonal_gap <= diagonal_bound && correlation_gap <= correlation_bound,
    }
}

/// `m = n = (m+n)/2`, `c1 = −c2 = (|c1|+|c2|)/2`, no gate.
pub fn symmetrized_params(p: &StandardFormParams) -> StandardFormParams {
    let d = 0.5 * p.dm.hypot(p.dn);
    let dc = 0.5 * p.dc1.hypot(p.dc2);
    let mean = 0.5 * (p.m + p.n);
    let c = 0.5 * (p.c1.abs() + p.c2.abs());
    StandardFormParams {
        m: mean,
        n: mean,
        c1: c,
        c2: -c,
        dm: d,
        dn: d,
        dc1: dc,
        dc2: dc,
    }
}

pub fn symmetrize(p: &StandardFormParams) -> Result<CovMat4> {
    let gate = symmetry_gate(p);
    if !gate.pass {
        return Err(Error::Precondition(format!(
            "symmetry gate failed: |n-m| = {:.4} (bound {:.4}), ||c1|-|c2|| = {:.4} (bound {:.4})",
            gate.diagonal_gap, gate.diagonal_bound, gate.correlation_gap, gate.correlation_bound
        )));
    }
    Ok(symmetrized_params(p).to_cm())
}

/// `n² + m² + 2|c1 c2| − 4(nm − c1²)(nm − c2²)`; above 1/4 witnesses
/// entanglement.
pub fn phs_lhs(p: &StandardFormParams) -> f64 {
    let (m, n, c1, c2) = (p.m, p.n, p.c1, p.c2);
    n * n + m * m + 2.0 * (c1 * c2).abs() - 4.0 * (n * m - c1 * c1) * (n * m - c2 * c2)
}

/// `sqrt((2n−1)(2m−1)) − (c1 − c2)`; negative witnesses entanglement. The
/// flag is set when a diagonal sits below shot noise and the absolute value
/// of the product was used.
pub fn duan_lhs(p: &StandardFormParams) -> (f64, bool) {
    let (a, b) = (2.0 * p.n - 1.0, 2.0 * p.m - 1.0);
    let guarded = a < 0.0 || b < 0.0;
    ((a * b).abs().sqrt() - (p.c1 - p.c2), guarded)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriteriaResult {
    pub phs_lhs: Estimate,
    pub duan_lhs: Estimate,
    /// Absent when the parameters carry no uncertainty.
    pub phs_sigma: Option<f64>,
    pub duan_sigma: Option<f64>,
    pub entangled_phs: bool,
    pub entangled_duan: bool,
    pub warnings: Vec<String>,
}

fn perturb(p: &StandardFormParams, rng: &mut StreamRng) -> StandardFormParams {
    let mut z = || -> f64 { rng.sample(StandardNormal) };
    StandardFormParams {
        m: p.m + p.dm * z(),
        n: p.n + p.dn * z(),
        c1: p.c1 + p.dc1 * z(),
        c2: p.c2 + p.dc2 * z(),
        ..*p
    }
}

/// Runs `draws` independent draws split into fixed-size chunks; chunk `k`
/// uses the sub-stream `<stream>:<k>`, so results do not depend on the number
/// of worker threads.
fn chunked_draws<T, F>(seed: u64, stream: &str, draws: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(&mut StreamRng) -> T + Sync,
{
    let chunks = draws.div_ceil(CHUNK);
    (0..chunks)
        .into_par_iter()
        .flat_map_iter(|k| {
            let mut rng = substream(seed, &format!("{stream}:{k}"));
            let len = CHUNK.min(draws - k * CHUNK);
            (0..len).map(|_| f(&mut rng)).collect::<Vec<_>>()
        })
        .collect()
}

/// Point values of both criteria with Monte Carlo uncertainties from
/// Gaussian perturbation of `(m, n, c1, c2)`.
pub fn criteria(p: &StandardFormParams, draws: usize, seed: u64) -> Result<CriteriaResult> {
    p.validate()?;
    if draws < MIN_DRAWS {
        return Err(Error::invalid(format!("need at least {MIN_DRAWS} Monte Carlo draws")));
    }
    let phs = phs_lhs(p);
    let (duan, guarded) = duan_lhs(p);
    let mut warnings = Vec::new();
    if guarded {
        warnings.push("a diagonal variance is below shot noise; Duan criterion uses |(2n-1)(2m-1)|".into());
    }
    let samples = chunked_draws(seed, "mc:criteria", draws, |rng| {
        let q = perturb(p, rng);
        (phs_lhs(&q), duan_lhs(&q).0)
    });
    let phs_mc = McSummary::from_samples(samples.iter().map(|s| s.0).collect())?;
    let duan_mc = McSummary::from_samples(samples.iter().map(|s| s.1).collect())?;
    Ok(CriteriaResult {
        phs_lhs: Estimate {
            value: phs,
            uncertainty: phs_mc.sd,
        },
        duan_lhs: Estimate {
            value: duan,
            uncertainty: duan_mc.sd,
        },
        phs_sigma: significance(&phs_mc, PHS_THRESHOLD).ok(),
        duan_sigma: significance(&duan_mc, DUAN_THRESHOLD).ok(),
        entangled_phs: phs > PHS_THRESHOLD,
        entangled_duan: duan < DUAN_THRESHOLD,
        warnings,
    })
}

/// Loss needed to explain a single-mode block as a degraded pure squeezed
/// state: `T = (2S − 1 − 4P) / (2(S − 1))` with `S = V− + V+`, `P = V− V+`.
pub fn transmission_from_variances(v_min: f64, v_max: f64) -> Result<f64> {
    let s = v_min + v_max;
    if s <= 2.0 * SHOT_NOISE + 1e-12 {
        return Err(Error::Unresolvable(format!(
            "V_min + V_max = {s:.4} <= 1: indistinguishable from a vacuum mixture"
        )));
    }
    Ok((2.0 * s - 1.0 - 4.0 * v_min * v_max) / (2.0 * (s - 1.0)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeTransmission {
    pub mode: ModeName,
    pub v_min: f64,
    pub v_max: f64,
    pub t: Estimate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransmissionEstimate {
    pub per_mode: Vec<ModeTransmission>,
    /// Average over the four auxiliary modes with its propagated uncertainty.
    pub mean: Estimate,
    /// Sample SD of the four per-mode values.
    pub spread: f64,
    /// Set when the average falls outside `(0, 1]`.
    pub unphysical: bool,
}

/// Per-mode closed-form transmission for the auxiliary modes, averaged.
pub fn estimate_transmission(aux: &BTreeMap<ModeName, VarianceFit>) -> Result<TransmissionEstimate> {
    let mut per_mode = Vec::with_capacity(4);
    for mode in ModeName::AUXILIARY {
        let fit = aux
            .get(&mode)
            .ok_or_else(|| Error::IncompleteInput(format!("missing auxiliary fit for mode {mode}")))?;
        let b = fit.block();
        let (s, p) = (b.trace(), b.det());
        let t = transmission_from_variances(b.v_min(), b.v_max())?;
        // gradient through S = xx + yy and P = xx·yy − xy²
        let dt_ds = (4.0 * p - 1.0) / (2.0 * (s - 1.0).powi(2));
        let dt_dp = -2.0 / (s - 1.0);
        let g = [dt_ds + dt_dp * b.yy, dt_ds + dt_dp * b.xx, -2.0 * dt_dp * b.xy];
        let var: f64 = (0..3)
            .flat_map(|i| (0..3).map(move |j| (i, j)))
            .map(|(i, j)| g[i] * fit.covariance[i][j] * g[j])
            .sum();
        per_mode.push(ModeTransmission {
            mode,
            v_min: b.v_min(),
            v_max: b.v_max(),
            t: Estimate {
                value: t,
                uncertainty: var.max(0.0).sqrt(),
            },
        });
    }
    let n = per_mode.len() as f64;
    let mean = per_mode.iter().map(|m| m.t.value).sum::<f64>() / n;
    let se = per_mode.iter().map(|m| m.t.uncertainty.powi(2)).sum::<f64>().sqrt() / n;
    let spread = (per_mode.iter().map(|m| (m.t.value - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    Ok(TransmissionEstimate {
        per_mode,
        mean: Estimate {
            value: mean,
            uncertainty: se,
        },
        spread,
        unphysical: !(mean > 0.0 && mean <= 1.0),
    })
}

/// Exact auxiliary-mode blocks of `cm` as zero-uncertainty fits.
pub fn auxiliary_blocks(cm: &CovMat4) -> BTreeMap<ModeName, VarianceFit> {
    ModeName::AUXILIARY
        .into_iter()
        .map(|m| {
            let b = apply_symplectic(cm, &m.mixing_map()).mode_block(0);
            let fit = VarianceFit {
                sigma_xx: b.xx,
                sigma_yy: b.yy,
                sigma_xy: b.xy,
                covariance: [[0.0; 3]; 3],
                chi2: 0.0,
                dof: 0,
            };
            (m, fit)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PureStateSearch {
    /// Transmission at which the ancestor purity is exactly one.
    pub t: f64,
    /// Transmissions bracketing purity `1 ± window`, larger T first.
    pub window: (f64, f64),
}

/// Largest T in `(0, 1]` at which `purity(invert_loss(cm, T))` reaches
/// `target` (or the ancestor stops being positive definite).
fn transmission_for_purity(cm: &CovMat4, target: f64) -> Result<f64> {
    let reached = |t: f64| -> bool {
        match invert_loss(cm, t).and_then(|a| purity(&a)) {
            Ok(mu) => mu >= target,
            Err(_) => true,
        }
    };
    if reached(1.0) {
        return Ok(1.0);
    }
    let (mut lo, mut hi) = (1e-9, 1.0);
    if !reached(lo) {
        return Err(Error::Unresolvable(format!("no transmission in (0, 1] gives purity {target}")));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if reached(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-13 {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Scans T for a pure ancestor.
pub fn pure_state_search(cm: &CovMat4, window: f64) -> Result<PureStateSearch> {
    Ok(PureStateSearch {
        t: transmission_for_purity(cm, 1.0)?,
        window: (
            transmission_for_purity(cm, 1.0 - window)?,
            transmission_for_purity(cm, 1.0 + window)?,
        ),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AncestorState {
    pub cm: CovMat4,
    pub transmission: f64,
    /// Absent when the matrix is not positive definite.
    pub purity: Option<f64>,
    pub symplectic_eigenvalues: (f64, f64),
    pub physical: bool,
}

pub fn ancestor_state(sym: &CovMat4, t: f64) -> Result<AncestorState> {
    let cm = invert_loss(sym, t)?;
    Ok(AncestorState {
        purity: purity(&cm).ok(),
        symplectic_eigenvalues: symplectic_eigenvalues(&cm),
        physical: cm.is_physical(PHYSICAL_TOL),
        transmission: t,
        cm,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Perturbation {
    /// Perturb `(m, n, c1, c2)`.
    #[default]
    FourParam,
    /// Perturb every independent matrix entry, then collapse to standard form.
    Full16,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloConfig {
    pub draws: usize,
    pub seed: u64,
    /// Transmission used for the ancestor inversion.
    pub transmission: f64,
    pub perturbation: Perturbation,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        MonteCarloConfig {
            draws: 100_000,
            seed: 1,
            transmission: 0.53,
            perturbation: Perturbation::FourParam,
        }
    }
}

impl MonteCarloConfig {
    pub fn validate(&self) -> Result<()> {
        if self.draws < MIN_DRAWS {
            return Err(Error::invalid(format!("need at least {MIN_DRAWS} Monte Carlo draws, got {}", self.draws)));
        }
        if !(self.transmission > 0.0 && self.transmission <= 1.0) {
            return Err(Error::invalid("transmission must lie in (0, 1]"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<usize>,
    pub underflow: usize,
    pub overflow: usize,
}

impl Histogram {
    pub fn new(lo: f64, hi: f64, bins: usize, values: &[f64]) -> Self {
        let mut h = Histogram {
            lo,
            hi,
            counts: vec![0; bins],
            underflow: 0,
            overflow: 0,
        };
        let width = (hi - lo) / bins as f64;
        for &v in values {
            if v < lo {
                h.underflow += 1;
            } else if v >= hi {
                h.overflow += 1;
            } else {
                h.counts[(((v - lo) / width) as usize).min(bins - 1)] += 1;
            }
        }
        h
    }

    pub fn bin_width(&self) -> f64 {
        (self.hi - self.lo) / self.counts.len() as f64
    }

    /// `lo,hi,count` rows.
    pub fn to_csv(&self) -> String {
        let w = self.bin_width();
        let mut out = String::from("lo,hi,count\n");
        for (k, c) in self.counts.iter().enumerate() {
            let a = self.lo + k as f64 * w;
            out.push_str(&format!("{:.4},{:.4},{c}\n", a, a + w));
        }
        out
    }
}

pub const PURITY_HIST_RANGE: (f64, f64) = (0.0, 2.0);
pub const PURITY_HIST_BINS: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PurityMonteCarlo {
    pub summary: McSummary,
    pub histogram: Histogram,
    /// Draws whose ancestor was not positive definite (excluded).
    pub rejected: usize,
    pub perturbation: Perturbation,
}

fn purity_of_draw(p: &StandardFormParams, t: f64) -> Option<f64> {
    let sym = symmetrized_params(p).to_cm();
    invert_loss(&sym, t).ok().and_then(|a| purity(&a).ok())
}

fn summarize_purity(values: Vec<Option<f64>>, perturbation: Perturbation) -> Result<PurityMonteCarlo> {
    let total = values.len();
    let kept: Vec<f64> = values.into_iter().flatten().collect();
    let rejected = total - kept.len();
    let histogram = Histogram::new(PURITY_HIST_RANGE.0, PURITY_HIST_RANGE.1, PURITY_HIST_BINS, &kept);
    Ok(PurityMonteCarlo {
        summary: McSummary::from_samples(kept)?,
        histogram,
        rejected,
        perturbation,
    })
}

/// Per draw: perturb `(m, n, c1, c2)`, symmetrise, invert the loss at the
/// configured T and take the purity. Values above one are kept.
pub fn purity_montecarlo(p: &StandardFormParams, mc: &MonteCarloConfig) -> Result<PurityMonteCarlo> {
    mc.validate()?;
    p.validate()?;
    let values = chunked_draws(mc.seed, "mc:purity", mc.draws, |rng| {
        purity_of_draw(&perturb(p, rng), mc.transmission)
    });
    summarize_purity(values, Perturbation::FourParam)
}

/// Full-matrix variant: the ten independent entries are perturbed by their
/// uncertainties, then collapsed to `(m, n, c1, c2)` as in [`standard_form`].
pub fn purity_montecarlo_full(cm: &CovMat4, mc: &MonteCarloConfig) -> Result<PurityMonteCarlo> {
    mc.validate()?;
    let err = cm
        .errors()
        .copied()
        .ok_or_else(|| Error::IncompleteInput("full-matrix Monte Carlo needs per-entry uncertainties".into()))?;
    let s = *cm.entries();
    let values = chunked_draws(mc.seed, "mc:purity16", mc.draws, |rng| {
        let mut e = s;
        for i in 0..4 {
            for j in i..4 {
                let z: f64 = rng.sample(StandardNormal);
                e[(i, j)] += err[(i, j)] * z;
                e[(j, i)] = e[(i, j)];
            }
        }
        let p = StandardFormParams {
            m: 0.5 * (e[(0, 0)] + e[(1, 1)]),
            n: 0.5 * (e[(2, 2)] + e[(3, 3)]),
            c1: e[(0, 2)],
            c2: e[(1, 3)],
            dm: 0.0,
            dn: 0.0,
            dc1: 0.0,
            dc2: 0.0,
        };
        purity_of_draw(&p, mc.transmission)
    });
    summarize_purity(values, Perturbation::Full16)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointPhotonTable {
    pub r: f64,
    pub n_max: usize,
    /// `p[n][m]`.
    pub p: Vec<Vec<f64>>,
}

impl JointPhotonTable {
    pub fn total(&self) -> f64 {
        self.p.iter().flatten().sum()
    }

    /// `n,m,p` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,m,p\n");
        for (n, row) in self.p.iter().enumerate() {
            for (m, v) in row.iter().enumerate() {
                out.push_str(&format!("{n},{m},{v:.9e}\n"));
            }
        }
        out
    }
}

pub const PURE_TOLERANCE: f64 = 0.05;

/// Twin-beam photon statistics `p(n,n) = tanh^{2n} r / cosh² r` of a pure
/// standard-form state, `cosh 2r = 2 m₀`.
pub fn joint_photon_distribution(pure_cm: &CovMat4, n_max: usize) -> Result<JointPhotonTable> {
    let mu = purity(pure_cm).map_err(|_| Error::UnsupportedInput("state is not positive definite".into()))?;
    if (mu - 1.0).abs() > PURE_TOLERANCE {
        return Err(Error::UnsupportedInput(format!(
            "photon table needs a pure state (purity {mu:.4}); reconstruct the ancestor state first"
        )));
    }
    let p = standard_form(pure_cm).map_err(|e| Error::UnsupportedInput(e.to_string()))?;
    let m0 = 0.5 * (p.m + p.n);
    let cosh2r = (2.0 * m0).max(1.0);
    let r = 0.5 * cosh2r.acosh();
    let (t2, c2) = (r.tanh().powi(2), r.cosh().powi(2));
    let mut table = vec![vec![0.0; n_max + 1]; n_max + 1];
    let mut term = 1.0 / c2;
    for (n, row) in table.iter_mut().enumerate() {
        row[n] = term;
        term *= t2;
    }
    Ok(JointPhotonTable { r, n_max, p: table })
}

/// Which transmission feeds the ancestor inversion.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransmissionChoice {
    Fixed(f64),
    /// Use the auxiliary-mode estimate.
    Auto,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    pub draws: usize,
    pub seed: u64,
    pub transmission: TransmissionChoice,
    pub perturbation: Perturbation,
    /// Purity window of the pure-state search.
    pub purity_window: f64,
    /// Required agreement between the two transmission estimates.
    pub transmission_agreement: f64,
    pub n_max: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            draws: 100_000,
            seed: 1,
            transmission: TransmissionChoice::Fixed(0.53),
            perturbation: Perturbation::FourParam,
            purity_window: 0.02,
            transmission_agreement: 0.02,
            n_max: 10,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TransmissionReport {
    /// Absent when the auxiliary modes show no squeezing to trace back.
    pub closed_form: Option<TransmissionEstimate>,
    /// `fits` when measured auxiliary fits were supplied, `derived` when the
    /// blocks were computed from the symmetrised matrix.
    pub source: String,
    pub pure_state_search: Option<PureStateSearch>,
    /// Whether the closed form and the pure-state search agree.
    pub agree: Option<bool>,
    /// Transmission used for the ancestor inversion.
    pub chosen: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub params: StandardFormParams,
    pub criteria: CriteriaResult,
    pub symmetry: SymmetryReport,
    pub symmetrized: Option<CovMat4>,
    pub transmission: Option<TransmissionReport>,
    pub ancestor: Option<AncestorState>,
    pub purity: Option<PurityMonteCarlo>,
    pub photon_table: Option<JointPhotonTable>,
    pub warnings: Vec<String>,
}

impl AnalysisReport {
    /// PHS is necessary and sufficient for two-mode Gaussian states.
    pub fn entangled(&self) -> bool {
        self.criteria.entangled_phs
    }
}

/// Criteria, symmetrisation, transmission, ancestor, purity statistics and
/// photon table. A failed symmetry gate stops after the criteria; stages
/// that cannot run are skipped with a warning.
pub fn analyze(
    cm: &CovMat4,
    aux: Option<&BTreeMap<ModeName, VarianceFit>>,
    cfg: &AnalysisConfig,
) -> Result<AnalysisReport> {
    let params = standard_form(cm)?;
    let criteria = criteria(&params, cfg.draws, cfg.seed)?;
    let symmetry = symmetry_gate(&params);
    let mut warnings = criteria.warnings.clone();
    let mut report = AnalysisReport {
        params,
        criteria,
        symmetry,
        symmetrized: None,
        transmission: None,
        ancestor: None,
        purity: None,
        photon_table: None,
        warnings: Vec::new(),
    };
    if !report.symmetry.pass {
        warnings.push("symmetry gate failed; ancestor analysis skipped".into());
        report.warnings = warnings;
        return Ok(report);
    }
    let sym = symmetrize(&params)?;

    let (closed_form, source) = match aux {
        Some(fits) => (estimate_transmission(fits), "fits"),
        None => (estimate_transmission(&auxiliary_blocks(&sym)), "derived"),
    };
    let closed_form = match closed_form {
        Ok(t) => {
            if t.unphysical {
                warnings.push("closed-form transmission lies outside (0, 1]".into());
            }
            Some(t)
        }
        Err(e @ Error::Unresolvable(_)) => {
            warnings.push(format!("closed-form transmission: {e}"));
            None
        }
        Err(e) => return Err(e),
    };
    let search = match pure_state_search(&sym, cfg.purity_window) {
        Ok(s) => Some(s),
        Err(e) => {
            warnings.push(format!("pure-state search: {e}"));
            None
        }
    };
    let agree = match (&closed_form, &search) {
        (Some(c), Some(s)) => {
            let ok = (c.mean.value - s.t).abs() <= cfg.transmission_agreement;
            if !ok {
                warnings.push(format!(
                    "closed-form transmission {:.4} and pure-state search {:.4} differ by more than {}",
                    c.mean.value, s.t, cfg.transmission_agreement
                ));
            }
            Some(ok)
        }
        _ => None,
    };
    let chosen = match cfg.transmission {
        TransmissionChoice::Fixed(t) => Some(t),
        TransmissionChoice::Auto => closed_form.as_ref().map(|c| c.mean.value).filter(|t| *t > 0.0 && *t <= 1.0),
    };
    report.symmetrized = Some(sym.clone());
    report.transmission = Some(TransmissionReport {
        closed_form,
        source: source.into(),
        pure_state_search: search,
        agree,
        chosen,
    });
    let Some(chosen) = chosen else {
        warnings.push("no usable transmission; ancestor analysis skipped".into());
        report.warnings = warnings;
        return Ok(report);
    };

    let ancestor = ancestor_state(&sym, chosen)?;
    if !ancestor.physical {
        warnings.push(format!(
            "ancestor state is unphysical (smallest symplectic eigenvalue {:.4})",
            ancestor.symplectic_eigenvalues.0
        ));
    }
    let mc = MonteCarloConfig {
        draws: cfg.draws,
        seed: cfg.seed,
        transmission: chosen,
        perturbation: cfg.perturbation,
    };
    let purity = match cfg.perturbation {
        Perturbation::FourParam => purity_montecarlo(&params, &mc),
        Perturbation::Full16 => purity_montecarlo_full(cm, &mc),
    };
    report.purity = match purity {
        Ok(p) => Some(p),
        Err(e @ Error::DegenerateDistribution(_)) => {
            warnings.push(format!("purity Monte Carlo: {e}"));
            None
        }
        Err(e) => return Err(e),
    };
    report.photon_table = match joint_photon_distribution(&ancestor.cm.clone().without_errors(), cfg.n_max) {
        Ok(t) => Some(t),
        Err(e) => {
            warnings.push(format!("photon table skipped: {e}"));
            None
        }
    };
    report.ancestor = Some(ancestor);
    report.warnings = warnings;
    Ok(report)
}
