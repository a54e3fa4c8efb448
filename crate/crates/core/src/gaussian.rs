//! Two-mode Gaussian states described by their 4×4 covariance matrix.
//!
//! Quadratures are ordered `(X_a, Y_a, X_b, Y_b)` and normalised so that the
//! vacuum (shot-noise) variance is 0.5. With this normalisation a pure
//! state has `det σ = 1/16` and purity `μ = 1 / (4 √det σ)`.

use std::fmt;

use nalgebra::{Matrix2, Matrix4};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Vacuum quadrature variance.
pub const SHOT_NOISE: f64 = 0.5;

/// Default tolerance on symplectic eigenvalues when asserting physicality.
pub const PHYSICAL_TOL: f64 = 1e-9;

/// Default tolerance on `S Ω Sᵀ = Ω`.
pub const SYMPLECTIC_TOL: f64 = 1e-12;

pub const BASIS: [&str; 4] = ["Xa", "Ya", "Xb", "Yb"];

/// Covariance matrix of two bosonic modes, optionally with per-entry
/// one-standard-deviation uncertainties.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CovMatJson", into = "CovMatJson")]
pub struct CovMat4 {
    entries: Matrix4<f64>,
    errors: Option<Matrix4<f64>>,
}

impl CovMat4 {
    /// Builds a covariance matrix, rejecting non-finite or asymmetric input.
    /// Entries that differ from their transpose by rounding noise are averaged.
    pub fn new(entries: Matrix4<f64>) -> Result<Self> {
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("covariance matrix has non-finite entries"));
        }
        let scale = entries.amax().max(1.0);
        for i in 0..4 {
            for j in (i + 1)..4 {
                if (entries[(i, j)] - entries[(j, i)]).abs() > 1e-12 * scale {
                    return Err(Error::invalid(format!(
                        "covariance matrix is not symmetric at ({}, {})",
                        i + 1,
                        j + 1
                    )));
                }
            }
        }
        let entries = (entries + entries.transpose()) * 0.5;
        Ok(CovMat4 {
            entries,
            errors: None,
        })
    }

    pub fn from_rows(rows: [[f64; 4]; 4]) -> Result<Self> {
        Self::new(Matrix4::from_fn(|i, j| rows[i][j]))
    }

    pub fn vacuum() -> Self {
        CovMat4 {
            entries: Matrix4::identity() * SHOT_NOISE,
            errors: None,
        }
    }

    /// Attaches per-entry uncertainties (must be symmetric, finite, non-negative).
    pub fn with_errors(mut self, errors: Matrix4<f64>) -> Result<Self> {
        if errors.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid("uncertainties must be finite and non-negative"));
        }
        self.errors = Some((errors + errors.transpose()) * 0.5);
        Ok(self)
    }

    pub fn without_errors(mut self) -> Self {
        self.errors = None;
        self
    }

    pub fn entries(&self) -> &Matrix4<f64> {
        &self.entries
    }

    pub fn errors(&self) -> Option<&Matrix4<f64>> {
        self.errors.as_ref()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[(i, j)]
    }

    pub fn error(&self, i: usize, j: usize) -> Option<f64> {
        self.errors.map(|e| e[(i, j)])
    }

    pub fn det(&self) -> f64 {
        self.entries.determinant()
    }

    pub fn is_positive_definite(&self) -> bool {
        self.entries.cholesky().is_some()
    }

    /// Both symplectic eigenvalues at least `0.5 - tol`, and positive-definite.
    pub fn is_physical(&self, tol: f64) -> bool {
        if !self.is_positive_definite() {
            return false;
        }
        let (low, _) = symplectic_eigenvalues(self);
        low >= SHOT_NOISE - tol
    }

    /// Reduced 2×2 block of mode 0 (`a`) or 1 (`b`).
    pub fn mode_block(&self, mode: usize) -> SingleModeBlock {
        let o = 2 * mode;
        SingleModeBlock {
            xx: self.entries[(o, o)],
            yy: self.entries[(o + 1, o + 1)],
            xy: self.entries[(o, o + 1)],
        }
    }

    /// Maximum absolute entry-wise difference.
    pub fn max_abs_diff(&self, other: &CovMat4) -> f64 {
        (self.entries - other.entries).amax()
    }
}

impl fmt::Display for CovMat4 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..4 {
            for j in 0..4 {
                if j > 0 {
                    write!(f, "  ")?;
                }
                write!(f, "{:>8.4}", self.entries[(i, j)])?;
                if let Some(e) = self.errors {
                    write!(f, " ±{:.4}", e[(i, j)])?;
                }
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Wire format: `{"basis": [...], "shot_noise": 0.5, "entries": [16], "errors": [16]?}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CovMatJson {
    pub basis: Vec<String>,
    pub shot_noise: f64,
    pub entries: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub errors: Option<Vec<f64>>,
}

impl From<CovMat4> for CovMatJson {
    fn from(cm: CovMat4) -> Self {
        let row_major = |m: &Matrix4<f64>| (0..16).map(|k| m[(k / 4, k % 4)]).collect();
        CovMatJson {
            basis: BASIS.iter().map(|s| s.to_string()).collect(),
            shot_noise: SHOT_NOISE,
            entries: row_major(&cm.entries),
            errors: cm.errors.as_ref().map(row_major),
        }
    }
}

impl TryFrom<CovMatJson> for CovMat4 {
    type Error = Error;

    fn try_from(json: CovMatJson) -> Result<Self> {
        if json.basis.len() != 4 || json.basis.iter().zip(BASIS).any(|(a, b)| a != b) {
            return Err(Error::invalid(format!(
                "unsupported basis {:?}, expected {:?}",
                json.basis, BASIS
            )));
        }
        if (json.shot_noise - SHOT_NOISE).abs() > 1e-12 {
            return Err(Error::invalid(format!(
                "unsupported shot_noise {}, expected {SHOT_NOISE}",
                json.shot_noise
            )));
        }
        let to_matrix = |v: &[f64], what: &str| {
            if v.len() != 16 {
                return Err(Error::invalid(format!("{what} must have 16 numbers, got {}", v.len())));
            }
            Ok(Matrix4::from_fn(|i, j| v[4 * i + j]))
        };
        let cm = CovMat4::new(to_matrix(&json.entries, "entries")?)?;
        match json.errors {
            Some(e) => cm.with_errors(to_matrix(&e, "errors")?),
            None => Ok(cm),
        }
    }
}

/// Single-mode 2×2 quadrature covariance `[[xx, xy], [xy, yy]]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SingleModeBlock {
    pub xx: f64,
    pub yy: f64,
    pub xy: f64,
}

impl SingleModeBlock {
    /// Variance of the generalised quadrature `X cos θ + Y sin θ`.
    pub fn variance_at(&self, theta: f64) -> f64 {
        let (s, c) = theta.sin_cos();
        self.xx * c * c + self.yy * s * s + self.xy * (2.0 * theta).sin()
    }

    fn half_spread(&self) -> f64 {
        (0.25 * (self.xx - self.yy).powi(2) + self.xy * self.xy).sqrt()
    }

    pub fn v_min(&self) -> f64 {
        0.5 * (self.xx + self.yy) - self.half_spread()
    }

    pub fn v_max(&self) -> f64 {
        0.5 * (self.xx + self.yy) + self.half_spread()
    }

    pub fn trace(&self) -> f64 {
        self.xx + self.yy
    }

    pub fn det(&self) -> f64 {
        self.xx * self.yy - self.xy * self.xy
    }
}

/// `(m, n, c1, c2)` of the standard form and their uncertainties.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StandardFormParams {
    pub m: f64,
    pub n: f64,
    pub c1: f64,
    pub c2: f64,
    #[serde(default)]
    pub dm: f64,
    #[serde(default)]
    pub dn: f64,
    #[serde(default)]
    pub dc1: f64,
    #[serde(default)]
    pub dc2: f64,
}

impl StandardFormParams {
    pub fn new(m: f64, n: f64, c1: f64, c2: f64) -> Result<Self> {
        Self::with_uncertainties(m, n, c1, c2, [0.0; 4])
    }

    /// Uncertainties ordered `[dm, dn, dc1, dc2]`.
    pub fn with_uncertainties(m: f64, n: f64, c1: f64, c2: f64, d: [f64; 4]) -> Result<Self> {
        let p = StandardFormParams {
            m,
            n,
            c1,
            c2,
            dm: d[0],
            dn: d[1],
            dc1: d[2],
            dc2: d[3],
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if ![self.m, self.n, self.c1, self.c2].iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("standard-form parameters must be finite"));
        }
        if self.m <= 0.0 || self.n <= 0.0 {
            return Err(Error::invalid(format!(
                "diagonal variances must be positive (m = {}, n = {})",
                self.m, self.n
            )));
        }
        if self.uncertainties().iter().any(|d| !d.is_finite() || *d < 0.0) {
            return Err(Error::invalid("uncertainties must be finite and non-negative"));
        }
        Ok(())
    }

    pub fn values(&self) -> [f64; 4] {
        [self.m, self.n, self.c1, self.c2]
    }

    pub fn uncertainties(&self) -> [f64; 4] {
        [self.dm, self.dn, self.dc1, self.dc2]
    }

    pub fn has_uncertainties(&self) -> bool {
        self.uncertainties().iter().any(|d| *d > 0.0)
    }

    /// Standard-form covariance matrix. When uncertainties are present each
    /// diagonal entry carries `dm·√2` (resp. `dn·√2`), so that
    /// [`standard_form`] recovers `dm` for their average.
    pub fn to_cm(&self) -> CovMat4 {
        let standard = |m: f64, n: f64, c1: f64, c2: f64| {
            Matrix4::new(
                m, 0.0, c1, 0.0, //
                0.0, m, 0.0, c2, //
                c1, 0.0, n, 0.0, //
                0.0, c2, 0.0, n,
            )
        };
        let cm = CovMat4 {
            entries: standard(self.m, self.n, self.c1, self.c2),
            errors: None,
        };
        if self.has_uncertainties() {
            CovMat4 {
                errors: Some(standard(
                    self.dm * std::f64::consts::SQRT_2,
                    self.dn * std::f64::consts::SQRT_2,
                    self.dc1,
                    self.dc2,
                )),
                ..cm
            }
        } else {
            cm
        }
    }
}

/// Squeezing parameter `r ≥ 0` of a two-mode squeezed vacuum.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SqueezeSpec(f64);

impl SqueezeSpec {
    pub fn new(r: f64) -> Result<Self> {
        if !r.is_finite() || r < 0.0 {
            return Err(Error::invalid(format!("squeezing parameter must be finite and >= 0, got {r}")));
        }
        Ok(SqueezeSpec(r))
    }

    pub fn r(&self) -> f64 {
        self.0
    }
}

/// Two-mode squeezed vacuum: diagonal `cosh(2r)/2`, `c1 = -c2 = sinh(2r)/2`.
pub fn tmsv_cm(spec: SqueezeSpec) -> CovMat4 {
    let r2 = 2.0 * spec.r();
    let m = 0.5 * r2.cosh();
    let c = 0.5 * r2.sinh();
    StandardFormParams {
        m,
        n: m,
        c1: c,
        c2: -c,
        dm: 0.0,
        dn: 0.0,
        dc1: 0.0,
        dc2: 0.0,
    }
    .to_cm()
}

/// Options for [`standard_form_with`].
#[derive(Clone, Copy, Debug)]
pub struct StandardFormOptions {
    /// Off-form entries may be up to this many of their stated uncertainties.
    pub sigma_factor: f64,
    /// Threshold used when the matrix carries no uncertainties.
    pub abs_tol: f64,
}

impl Default for StandardFormOptions {
    fn default() -> Self {
        StandardFormOptions {
            sigma_factor: 3.0,
            abs_tol: 1e-9,
        }
    }
}

/// Off-standard-form slots `σ12, σ14, σ23, σ34` (zero-based).
const OFF_FORM: [(usize, usize); 4] = [(0, 1), (0, 3), (1, 2), (2, 3)];

pub fn standard_form(cm: &CovMat4) -> Result<StandardFormParams> {
    standard_form_with(cm, StandardFormOptions::default())
}

/// Extracts `(m, n, c1, c2)`. `m` and `n` are the averages of the two
/// diagonal entries of each mode, with the standard error of that average.
pub fn standard_form_with(cm: &CovMat4, opts: StandardFormOptions) -> Result<StandardFormParams> {
    let s = cm.entries();
    let offending: Vec<String> = OFF_FORM
        .iter()
        .filter(|&&(i, j)| {
            let limit = match cm.errors() {
                Some(e) => (opts.sigma_factor * e[(i, j)]).max(opts.abs_tol),
                None => opts.abs_tol,
            };
            s[(i, j)].abs() > limit
        })
        .map(|&(i, j)| format!("sigma_{}{} = {:.4}", i + 1, j + 1, s[(i, j)]))
        .collect();
    if !offending.is_empty() {
        return Err(Error::ShapeViolation { entries: offending });
    }
    let d = match cm.errors() {
        Some(e) => [
            0.5 * e[(0, 0)].hypot(e[(1, 1)]),
            0.5 * e[(2, 2)].hypot(e[(3, 3)]),
            e[(0, 2)],
            e[(1, 3)],
        ],
        None => [0.0; 4],
    };
    StandardFormParams::with_uncertainties(
        0.5 * (s[(0, 0)] + s[(1, 1)]),
        0.5 * (s[(2, 2)] + s[(3, 3)]),
        s[(0, 2)],
        s[(1, 3)],
        d,
    )
}

/// Two-mode symplectic form, block-diagonal `[[0, 1], [-1, 0]]`.
pub fn omega() -> Matrix4<f64> {
    Matrix4::new(
        0.0, 1.0, 0.0, 0.0, //
        -1.0, 0.0, 0.0, 0.0, //
        0.0, 0.0, 0.0, 1.0, //
        0.0, 0.0, -1.0, 0.0,
    )
}

/// Real 4×4 map `S` with `S Ω Sᵀ = Ω`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SymplecticMap(Matrix4<f64>);

impl SymplecticMap {
    pub fn new(s: Matrix4<f64>) -> Result<Self> {
        Self::with_tolerance(s, SYMPLECTIC_TOL)
    }

    pub fn with_tolerance(s: Matrix4<f64>, tol: f64) -> Result<Self> {
        let w = omega();
        let defect = (s * w * s.transpose() - w).amax();
        if !defect.is_finite() || defect > tol {
            return Err(Error::invalid(format!(
                "map is not symplectic (|S Ω Sᵀ - Ω| = {defect:.3e})"
            )));
        }
        Ok(SymplecticMap(s))
    }

    pub fn identity() -> Self {
        SymplecticMap(Matrix4::identity())
    }

    /// Phase-space rotation of a single mode by `angle` (phase shift `e^{i angle}`).
    pub fn phase_rotation(mode: usize, angle: f64) -> Self {
        let mut s = Matrix4::identity();
        let (sn, c) = angle.sin_cos();
        let o = 2 * mode;
        s[(o, o)] = c;
        s[(o, o + 1)] = -sn;
        s[(o + 1, o)] = sn;
        s[(o + 1, o + 1)] = c;
        SymplecticMap(s)
    }

    /// Real beam splitter `a' = cos θ a + sin θ b`, `b' = -sin θ a + cos θ b`.
    pub fn beamsplitter(theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        Self::from_unitary(&[
            [Complex64::new(c, 0.0), Complex64::new(s, 0.0)],
            [Complex64::new(-s, 0.0), Complex64::new(c, 0.0)],
        ])
        .expect("real rotation is unitary")
    }

    /// Quadrature map of the mode transformation `out_k = Σ_j u[k][j] base_j`.
    pub fn from_unitary(u: &[[Complex64; 2]; 2]) -> Result<Self> {
        let mut s = Matrix4::zeros();
        for (k, row) in u.iter().enumerate() {
            for (j, &z) in row.iter().enumerate() {
                let block = Matrix2::new(z.re, -z.im, z.im, z.re);
                s.fixed_view_mut::<2, 2>(2 * k, 2 * j).copy_from(&block);
            }
        }
        Self::new(s)
    }

    pub fn matrix(&self) -> &Matrix4<f64> {
        &self.0
    }

    pub fn compose(&self, then: &SymplecticMap) -> SymplecticMap {
        SymplecticMap(then.0 * self.0)
    }
}

/// `S σ Sᵀ`; uncertainties are dropped because they do not transform entry-wise.
pub fn apply_symplectic(cm: &CovMat4, s: &SymplecticMap) -> CovMat4 {
    let out = s.0 * cm.entries * s.0.transpose();
    CovMat4 {
        entries: (out + out.transpose()) * 0.5,
        errors: None,
    }
}

fn check_transmission(t: f64) -> Result<()> {
    if !(t.is_finite() && t > 0.0 && t <= 1.0) {
        return Err(Error::invalid(format!("transmission must lie in (0, 1], got {t}")));
    }
    Ok(())
}

/// Symmetric pure-loss channel `σ → T σ + (1 - T)/2 · I`.
pub fn loss_channel(cm: &CovMat4, t: f64) -> Result<CovMat4> {
    check_transmission(t)?;
    Ok(CovMat4 {
        entries: cm.entries * t + Matrix4::identity() * ((1.0 - t) * SHOT_NOISE),
        errors: cm.errors.map(|e| e * t),
    })
}

/// Inverse of [`loss_channel`]: `σ0 = (σ - (1 - T)/2 · I) / T`. The result is
/// not checked for physicality; callers inspect [`CovMat4::is_physical`].
pub fn invert_loss(cm: &CovMat4, t: f64) -> Result<CovMat4> {
    check_transmission(t)?;
    Ok(CovMat4 {
        entries: (cm.entries - Matrix4::identity() * ((1.0 - t) * SHOT_NOISE)) / t,
        errors: cm.errors.map(|e| e / t),
    })
}

/// `μ = 1 / (4 √det σ)`. Values above one are returned as-is.
pub fn purity(cm: &CovMat4) -> Result<f64> {
    if !cm.is_positive_definite() {
        return Err(Error::invalid("purity requires a positive-definite covariance matrix"));
    }
    Ok(1.0 / (4.0 * cm.det().sqrt()))
}

/// Sorted symplectic eigenvalues `(ν-, ν+)` from the local invariants
/// `Δ = det A + det B + 2 det C` and `det σ`.
pub fn symplectic_eigenvalues(cm: &CovMat4) -> (f64, f64) {
    let s = cm.entries();
    let det2 = |i: usize, j: usize| s[(i, j)] * s[(i + 1, j + 1)] - s[(i, j + 1)] * s[(i + 1, j)];
    let delta = det2(0, 0) + det2(2, 2) + 2.0 * det2(0, 2);
    let det = s.determinant();
    // a discriminant within rounding of zero means a degenerate spectrum
    let raw = delta * delta - 4.0 * det;
    let noise = 16.0 * f64::EPSILON * (delta * delta + 4.0 * det.abs());
    let disc = if raw <= noise { 0.0 } else { raw.sqrt() };
    let lo = (0.5 * (delta - disc)).max(0.0).sqrt();
    let hi = (0.5 * (delta + disc)).max(0.0).sqrt();
    (lo, hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn measured() -> CovMat4 {
        CovMat4::from_rows([
            [0.61, 0.004, 0.29, -0.01],
            [0.004, 0.61, 0.005, -0.23],
            [0.29, 0.005, 0.60, 0.002],
            [-0.01, -0.23, 0.002, 0.60],
        ])
        .unwrap()
        .with_errors(Matrix4::repeat(0.02))
        .unwrap()
    }

    /// Cofactor expansion along the first row.
    fn det_by_expansion(m: &Matrix4<f64>) -> f64 {
        fn det3(a: [[f64; 3]; 3]) -> f64 {
            a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
                - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
                + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
        }
        (0..4)
            .map(|col| {
                let mut minor = [[0.0; 3]; 3];
                for (ri, r) in (1..4).enumerate() {
                    for (ci, c) in (0..4).filter(|&c| c != col).enumerate() {
                        minor[ri][ci] = m[(r, c)];
                    }
                }
                let sign = if col % 2 == 0 { 1.0 } else { -1.0 };
                sign * m[(0, col)] * det3(minor)
            })
            .sum()
    }

    /// Power series for cosh/sinh, independent of the std implementations.
    fn cosh_sinh_series(x: f64) -> (f64, f64) {
        let (mut c, mut s) = (0.0, 0.0);
        let mut term = 1.0;
        for k in 0..40 {
            if k % 2 == 0 {
                c += term;
            } else {
                s += term;
            }
            term *= x / (k + 1) as f64;
        }
        (c, s)
    }

    #[test]
    fn tmsv_vacuum() {
        let cm = tmsv_cm(SqueezeSpec::new(0.0).unwrap());
        assert_eq!(cm, CovMat4::vacuum());
    }

    #[test]
    fn tmsv_matches_series_oracle() {
        let cm = tmsv_cm(SqueezeSpec::new(0.25).unwrap());
        let (c, s) = cosh_sinh_series(0.5);
        assert!((cm.get(0, 0) - c / 2.0).abs() < 1e-15);
        assert!((cm.get(3, 3) - c / 2.0).abs() < 1e-15);
        assert!((cm.get(0, 2) - s / 2.0).abs() < 1e-15);
        assert!((cm.get(1, 3) + s / 2.0).abs() < 1e-15);
        assert!((purity(&cm).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tmsv_reference_squeezing() {
        let cm = tmsv_cm(SqueezeSpec::new(0.4335).unwrap());
        assert!((cm.get(0, 0) - 0.70).abs() < 0.005);
        // sinh(0.867)/2 = 0.4899, within 0.01 of the 0.48 reference
        assert!((cm.get(0, 2) - 0.489_9).abs() < 1e-4);
        assert!((cm.get(0, 2) - 0.48).abs() < 0.01);
        assert!((cm.get(1, 3) + cm.get(0, 2)).abs() < 1e-15);
    }

    #[test]
    fn tmsv_rejects_bad_squeezing() {
        assert!(SqueezeSpec::new(-0.1).is_err());
        assert!(SqueezeSpec::new(f64::NAN).is_err());
        assert!(SqueezeSpec::new(f64::INFINITY).is_err());
    }

    #[test]
    fn standard_form_of_measured_matrix() {
        let p = standard_form(&measured()).unwrap();
        assert!((p.m - 0.61).abs() < 1e-12);
        assert!((p.n - 0.60).abs() < 1e-12);
        assert_eq!(p.c1, 0.29);
        assert_eq!(p.c2, -0.23);
        let d = 0.02 / 2f64.sqrt();
        for (got, want) in p.uncertainties().iter().zip([d, d, 0.02, 0.02]) {
            assert!((got - want).abs() < 1e-15);
        }
        let back = standard_form(&p.to_cm()).unwrap();
        for (got, want) in back.uncertainties().iter().zip(p.uncertainties()) {
            assert!((got - want).abs() < 1e-15);
        }
    }

    #[test]
    fn standard_form_vacuum_and_tmsv() {
        let p = standard_form(&CovMat4::vacuum()).unwrap();
        assert_eq!(p.values(), [0.5, 0.5, 0.0, 0.0]);

        let p = standard_form(&tmsv_cm(SqueezeSpec::new(0.3).unwrap())).unwrap();
        let (c, s) = (0.6f64.cosh() / 2.0, 0.6f64.sinh() / 2.0);
        for (got, want) in p.values().iter().zip([c, c, s, -s]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn standard_form_names_offending_entries() {
        let mut m = *measured().entries();
        m[(0, 3)] = 0.2;
        m[(3, 0)] = 0.2;
        let cm = CovMat4::new(m).unwrap().with_errors(Matrix4::repeat(0.02)).unwrap();
        match standard_form(&cm) {
            Err(Error::ShapeViolation { entries }) => {
                assert_eq!(entries.len(), 1);
                assert!(entries[0].starts_with("sigma_14"));
            }
            other => panic!("expected shape violation, got {other:?}"),
        }
        // no uncertainties: any non-zero off-form entry is rejected
        assert!(standard_form(&measured().without_errors()).is_err());
    }

    #[test]
    fn rejects_asymmetric_and_nan() {
        let mut m = Matrix4::identity();
        m[(0, 1)] = 0.1;
        assert!(CovMat4::new(m).is_err());
        m[(0, 1)] = f64::NAN;
        assert!(CovMat4::new(m).is_err());
    }

    #[test]
    fn identity_map_leaves_cm() {
        let cm = measured();
        let out = apply_symplectic(&cm, &SymplecticMap::identity());
        assert_eq!(out.entries(), cm.entries());
    }

    #[test]
    fn phase_rotation_matches_dense_product() {
        let cm = measured();
        let s = SymplecticMap::phase_rotation(0, std::f64::consts::FRAC_PI_2);
        let out = apply_symplectic(&cm, &s);
        let sm = s.matrix();
        for i in 0..4 {
            for j in 0..4 {
                let mut want = 0.0;
                for k in 0..4 {
                    for l in 0..4 {
                        want += sm[(i, k)] * cm.get(k, l) * sm[(j, l)];
                    }
                }
                assert!((out.get(i, j) - want).abs() < 1e-15);
            }
        }
        assert!((out.get(0, 0) - cm.get(1, 1)).abs() < 1e-15);
        assert!((out.get(1, 1) - cm.get(0, 0)).abs() < 1e-15);
        // X_a' = -Y_a, Y_a' = X_a
        assert!((out.get(1, 2) - cm.get(0, 2)).abs() < 1e-15);
        assert!((out.get(0, 2) + cm.get(1, 2)).abs() < 1e-15);
    }

    #[test]
    fn balanced_beamsplitter_decouples_tmsv() {
        let r = 0.4;
        let cm = tmsv_cm(SqueezeSpec::new(r).unwrap());
        let out = apply_symplectic(&cm, &SymplecticMap::beamsplitter(std::f64::consts::FRAC_PI_4));
        let (hi, lo) = ((2.0 * r).exp() / 2.0, (-2.0 * r).exp() / 2.0);
        assert!((out.get(0, 0) - hi).abs() < 1e-12);
        assert!((out.get(1, 1) - lo).abs() < 1e-12);
        assert!((out.get(2, 2) - lo).abs() < 1e-12);
        assert!((out.get(3, 3) - hi).abs() < 1e-12);
        for (i, j) in [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)] {
            assert!(out.get(i, j).abs() < 1e-12, "({i},{j}) = {}", out.get(i, j));
        }
    }

    #[test]
    fn non_symplectic_rejected() {
        let mut s = Matrix4::identity();
        s[(0, 0)] = 2.0;
        assert!(SymplecticMap::new(s).is_err());
    }

    #[test]
    fn loss_channel_cases() {
        let cm = measured();
        assert_eq!(loss_channel(&cm, 1.0).unwrap().entries(), cm.entries());
        let vac = loss_channel(&CovMat4::vacuum(), 0.5).unwrap();
        assert!(vac.max_abs_diff(&CovMat4::vacuum()) < 1e-16);
        for t in [0.0, -0.1, 1.1, f64::NAN] {
            assert!(loss_channel(&cm, t).is_err());
            assert!(invert_loss(&cm, t).is_err());
        }
    }

    #[test]
    fn rounded_ancestor_through_loss_gives_symmetrized_matrix() {
        let ancestor = StandardFormParams::new(0.70, 0.70, 0.48, -0.48).unwrap().to_cm();
        let out = loss_channel(&ancestor, 0.53).unwrap();
        let symm = StandardFormParams::new(0.61, 0.61, 0.26, -0.26).unwrap().to_cm();
        assert!(out.max_abs_diff(&symm) < 0.01);
    }

    #[test]
    fn invert_loss_on_symmetrized_matrix() {
        let symm = StandardFormParams::new(0.605, 0.605, 0.26, -0.26).unwrap().to_cm();
        let anc = invert_loss(&symm, 0.53).unwrap();
        assert!((anc.get(0, 0) - (0.605 - 0.235) / 0.53).abs() < 1e-12);
        assert!((anc.get(0, 2) - 0.26 / 0.53).abs() < 1e-12);
        assert!((anc.get(0, 0) - 0.70).abs() < 0.005);
        // slightly over-corrected: purity 1.013, just below the uncertainty bound
        assert!(!anc.is_physical(PHYSICAL_TOL));
        assert!((purity(&anc).unwrap() - 1.0133).abs() < 1e-4);
        assert_eq!(invert_loss(&symm, 1.0).unwrap().entries(), symm.entries());
    }

    #[test]
    fn over_corrected_inversion_is_flagged_not_rejected() {
        let symm = StandardFormParams::new(0.605, 0.605, 0.26, -0.26).unwrap().to_cm();
        let anc = invert_loss(&symm, 0.3).unwrap();
        assert!(!anc.is_physical(PHYSICAL_TOL));
    }

    #[test]
    fn purity_cases() {
        assert_eq!(purity(&CovMat4::vacuum()).unwrap(), 1.0);
        let rounded_ancestor = StandardFormParams::new(0.70, 0.70, 0.48, -0.48).unwrap().to_cm();
        assert!((purity(&rounded_ancestor).unwrap() - 0.96).abs() < 0.005);

        let cm = measured();
        let oracle = 1.0 / (4.0 * det_by_expansion(cm.entries()).sqrt());
        let mu = purity(&cm).unwrap();
        assert!((mu - oracle).abs() < 1e-12);
        assert!((mu - 0.8417).abs() < 1e-3);

        let not_pd = CovMat4::from_rows([
            [0.5, 0.0, 0.9, 0.0],
            [0.0, 0.5, 0.0, -0.9],
            [0.9, 0.0, 0.5, 0.0],
            [0.0, -0.9, 0.0, 0.5],
        ])
        .unwrap();
        assert!(purity(&not_pd).is_err());
    }

    #[test]
    fn symplectic_spectrum_cases() {
        assert_eq!(symplectic_eigenvalues(&CovMat4::vacuum()), (0.5, 0.5));
        for r in [0.1, 0.4335, 1.0, 2.0] {
            let (lo, hi) = symplectic_eigenvalues(&tmsv_cm(SqueezeSpec::new(r).unwrap()));
            assert!((lo - 0.5).abs() < 1e-9 && (hi - 0.5).abs() < 1e-9, "r = {r}: {lo} {hi}");
        }
    }

    #[test]
    fn symplectic_spectrum_matches_eigen_solver() {
        let cm = measured();
        // eigenvalues of Ωσ are ±iν
        let mut nus: Vec<f64> = (omega() * cm.entries())
            .complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .collect();
        nus.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let (lo, hi) = symplectic_eigenvalues(&cm);
        assert!((lo - nus[0]).abs() < 1e-9 && (lo - nus[1]).abs() < 1e-9);
        assert!((hi - nus[2]).abs() < 1e-9 && (hi - nus[3]).abs() < 1e-9);
        assert!(lo >= 0.5 && hi >= 0.5);
    }

    #[test]
    fn json_round_trip_and_validation() {
        let cm = measured();
        let text = serde_json::to_string(&cm).unwrap();
        assert!(text.contains(r#""basis":["Xa","Ya","Xb","Yb"]"#));
        assert!(text.contains(r#""shot_noise":0.5"#));
        let back: CovMat4 = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cm);

        let bad = text.replace("\"shot_noise\":0.5", "\"shot_noise\":1.0");
        assert!(serde_json::from_str::<CovMat4>(&bad).is_err());
        let short = r#"{"basis":["Xa","Ya","Xb","Yb"],"shot_noise":0.5,"entries":[1,2,3]}"#;
        assert!(serde_json::from_str::<CovMat4>(short).is_err());
    }
}
