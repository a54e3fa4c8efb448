//! Labelled optical modes (polarization × OAM) and the elements that act on
//! them: quarter- and half-wave plates, q-plates and a polarizing beam
//! splitter.
//!
//! Circular and linear polarization bases are related by
//! `H = (L + R)/√2`, `V = -i (L - R)/√2`. Wave plates use the Jones matrix
//! `Rᵀ(θ) diag(e^{-iπ/4}, e^{iπ/4}) R(θ)` (QWP) or `Rᵀ(θ) diag(1, -1) R(θ)`
//! (HWP), which at 45° sends `H → L` and `V → iR`.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_4, PI};
use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::SymplecticMap;

/// Default bound on `|m|`.
pub const DEFAULT_MAX_OAM: i32 = 8;

const PRUNE: f64 = 1e-14;
const NORM_TOL: f64 = 1e-12;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Polarization {
    H,
    V,
    L,
    R,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BaseMode {
    #[serde(rename = "a")]
    A,
    #[serde(rename = "b")]
    B,
}

impl BaseMode {
    fn index(self) -> usize {
        match self {
            BaseMode::A => 0,
            BaseMode::B => 1,
        }
    }

    fn symbol(self) -> &'static str {
        match self {
            BaseMode::A => "a",
            BaseMode::B => "b",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ModeLabel {
    pub pol: Polarization,
    pub oam: i32,
}

impl ModeLabel {
    pub fn new(pol: Polarization, oam: i32) -> Self {
        ModeLabel { pol, oam }
    }
}

impl fmt::Display for ModeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.oam == 0 {
            write!(f, "{:?},0", self.pol)
        } else {
            write!(f, "{:?},{:+}", self.pol, self.oam)
        }
    }
}

/// Linear combination of base-mode operators placed on labelled slots.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModeExpr {
    terms: BTreeMap<(BaseMode, ModeLabel), Complex64>,
}

/// One serialized term of a [`ModeExpr`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeTerm {
    pub base: BaseMode,
    pub pol: Polarization,
    pub oam: i32,
    pub re: f64,
    pub im: f64,
}

impl ModeExpr {
    pub fn single(base: BaseMode, label: ModeLabel) -> Self {
        Self::from_terms([(base, label, ONE)])
    }

    pub fn from_terms(terms: impl IntoIterator<Item = (BaseMode, ModeLabel, Complex64)>) -> Self {
        let mut expr = ModeExpr::default();
        for (base, label, amp) in terms {
            *expr.terms.entry((base, label)).or_insert(ZERO) += amp;
        }
        expr.prune();
        expr
    }

    pub fn terms(&self) -> impl Iterator<Item = (BaseMode, ModeLabel, Complex64)> + '_ {
        self.terms.iter().map(|(&(b, l), &z)| (b, l, z))
    }

    pub fn amplitude(&self, base: BaseMode, label: ModeLabel) -> Complex64 {
        self.terms.get(&(base, label)).copied().unwrap_or(ZERO)
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// `⟨self|self⟩`; terms in different polarization bases on the same
    /// slot are not orthogonal, so this goes through the Jones vectors.
    pub fn norm_sqr(&self) -> f64 {
        self.linear_components()
            .values()
            .map(|v| v[0].norm_sqr() + v[1].norm_sqr())
            .sum()
    }

    pub fn normalized(&self) -> Result<Self> {
        let n = self.norm_sqr().sqrt();
        if n < PRUNE {
            return Err(Error::invalid("cannot normalise an empty mode expression"));
        }
        Ok(self.scaled(Complex64::new(1.0 / n, 0.0)))
    }

    pub fn scaled(&self, factor: Complex64) -> Self {
        Self::from_terms(self.terms().map(|(b, l, z)| (b, l, z * factor)))
    }

    pub fn add(&self, other: &ModeExpr) -> Self {
        Self::from_terms(self.terms().chain(other.terms()))
    }

    /// `⟨self|other⟩`, basis independent.
    pub fn inner(&self, other: &ModeExpr) -> Complex64 {
        let (x, y) = (self.linear_components(), other.linear_components());
        x.iter()
            .filter_map(|(k, u)| y.get(k).map(|v| u[0].conj() * v[0] + u[1].conj() * v[1]))
            .sum()
    }

    /// Equality as vectors, independent of which polarization basis the terms use.
    pub fn approx_eq(&self, other: &ModeExpr, tol: f64) -> bool {
        let diff = self.add(&other.scaled(-ONE));
        diff.norm_sqr().sqrt() <= tol
    }

    /// Jones vectors `(H, V)` per `(base, oam)`.
    fn linear_components(&self) -> BTreeMap<(BaseMode, i32), [Complex64; 2]> {
        let mut out: BTreeMap<(BaseMode, i32), [Complex64; 2]> = BTreeMap::new();
        let s = FRAC_1_SQRT_2;
        for (base, label, z) in self.terms() {
            let v = out.entry((base, label.oam)).or_insert([ZERO; 2]);
            match label.pol {
                Polarization::H => v[0] += z,
                Polarization::V => v[1] += z,
                Polarization::L => {
                    v[0] += z * s;
                    v[1] += z * I * s;
                }
                Polarization::R => {
                    v[0] += z * s;
                    v[1] -= z * I * s;
                }
            }
        }
        out
    }

    /// Rebuilds from Jones vectors, choosing per group whichever of the linear
    /// or circular basis needs fewer terms (linear on ties).
    fn from_linear_components(groups: &BTreeMap<(BaseMode, i32), [Complex64; 2]>) -> Self {
        let s = FRAC_1_SQRT_2;
        let mut terms = Vec::new();
        for (&(base, oam), &[h, v]) in groups {
            let l = (h - I * v) * s;
            let r = (h + I * v) * s;
            let count = |a: Complex64, b: Complex64| {
                [a, b].iter().filter(|z| z.norm() > 1e-12).count()
            };
            if count(l, r) < count(h, v) {
                terms.push((base, ModeLabel::new(Polarization::L, oam), l));
                terms.push((base, ModeLabel::new(Polarization::R, oam), r));
            } else {
                terms.push((base, ModeLabel::new(Polarization::H, oam), h));
                terms.push((base, ModeLabel::new(Polarization::V, oam), v));
            }
        }
        Self::from_terms(terms)
    }

    fn circular_terms(&self) -> Vec<(BaseMode, ModeLabel, Complex64)> {
        let s = FRAC_1_SQRT_2;
        let mut out = Vec::new();
        for ((base, oam), [h, v]) in self.linear_components() {
            out.push((base, ModeLabel::new(Polarization::L, oam), (h - I * v) * s));
            out.push((base, ModeLabel::new(Polarization::R, oam), (h + I * v) * s));
        }
        out
    }

    fn prune(&mut self) {
        self.terms.retain(|_, z| z.norm() >= PRUNE);
    }

    pub fn to_terms(&self) -> Vec<ModeTerm> {
        self.terms()
            .map(|(base, label, z)| ModeTerm {
                base,
                pol: label.pol,
                oam: label.oam,
                re: z.re,
                im: z.im,
            })
            .collect()
    }
}

impl Serialize for ModeExpr {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_terms().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ModeExpr {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let terms = Vec::<ModeTerm>::deserialize(deserializer)?;
        Ok(ModeExpr::from_terms(terms.into_iter().map(|t| {
            (t.base, ModeLabel::new(t.pol, t.oam), Complex64::new(t.re, t.im))
        })))
    }
}

impl fmt::Display for ModeExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let terms: Vec<(String, Complex64)> = self
            .terms()
            .map(|(b, l, z)| (format!("{}[{}]", b.symbol(), l), z))
            .collect();
        f.write_str(&render_combination(&terms, true))
    }
}

/// Topological charge stored as `2q`, so half-integers are exact.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopologicalCharge(i32);

impl TopologicalCharge {
    pub fn from_twice(twice_q: i32) -> Self {
        TopologicalCharge(twice_q)
    }

    /// Rejects values that are not integer or half-integer.
    pub fn from_q(q: f64) -> Result<Self> {
        let twice = 2.0 * q;
        if !twice.is_finite() || (twice - twice.round()).abs() > 1e-12 {
            return Err(Error::invalid(format!("q-plate charge must be integer or half-integer, got {q}")));
        }
        Ok(TopologicalCharge(twice.round() as i32))
    }

    pub fn q(&self) -> f64 {
        self.0 as f64 / 2.0
    }

    /// OAM transferred on a handedness flip, `2q`.
    pub fn oam_shift(&self) -> i32 {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PbsPort {
    /// Passes H.
    Transmitted,
    /// Passes V.
    Reflected,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum ElementSpec {
    /// Quarter-wave plate, fast-axis angle in radians.
    Qwp { angle: f64 },
    /// Half-wave plate, axis angle in radians.
    Hwp { angle: f64 },
    QPlate { charge: TopologicalCharge, retardation: f64 },
    /// Projection onto one output port, unit efficiency.
    Pbs { port: PbsPort },
}

impl ElementSpec {
    pub fn qwp_deg(deg: f64) -> Self {
        ElementSpec::Qwp { angle: deg.to_radians() }
    }

    pub fn hwp_deg(deg: f64) -> Self {
        ElementSpec::Hwp { angle: deg.to_radians() }
    }

    pub fn qplate(q: f64, retardation: f64) -> Result<Self> {
        let el = ElementSpec::QPlate {
            charge: TopologicalCharge::from_q(q)?,
            retardation,
        };
        el.validate()?;
        Ok(el)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ElementSpec::Qwp { angle } | ElementSpec::Hwp { angle } if !angle.is_finite() => {
                Err(Error::invalid("wave-plate angle must be finite"))
            }
            ElementSpec::QPlate { retardation, .. }
                if !(retardation.is_finite() && (0.0..=2.0 * PI).contains(&retardation)) =>
            {
                Err(Error::invalid(format!(
                    "q-plate retardation must lie in [0, 2π], got {retardation}"
                )))
            }
            _ => Ok(()),
        }
    }

    /// Whether the element conserves the norm of every expression.
    pub fn is_unitary(&self) -> bool {
        !matches!(self, ElementSpec::Pbs { .. })
    }
}

type Jones = [[Complex64; 2]; 2];

fn rotated(angle: f64, d0: Complex64, d1: Complex64) -> Jones {
    // Rᵀ diag(d0, d1) R with R = [[c, -s], [s, c]]
    let (s, c) = angle.sin_cos();
    [
        [d0 * c * c + d1 * s * s, (d1 - d0) * c * s],
        [(d1 - d0) * c * s, d0 * s * s + d1 * c * c],
    ]
}

fn qwp_jones(angle: f64) -> Jones {
    rotated(angle, Complex64::from_polar(1.0, -FRAC_PI_4), Complex64::from_polar(1.0, FRAC_PI_4))
}

fn hwp_jones(angle: f64) -> Jones {
    rotated(angle, ONE, -ONE)
}

pub fn apply_element(expr: &ModeExpr, element: &ElementSpec) -> Result<ModeExpr> {
    apply_element_bounded(expr, element, DEFAULT_MAX_OAM)
}

/// Applies `element`, failing if any resulting OAM exceeds `max_oam` in magnitude.
pub fn apply_element_bounded(expr: &ModeExpr, element: &ElementSpec, max_oam: i32) -> Result<ModeExpr> {
    element.validate()?;
    let out = match *element {
        ElementSpec::Qwp { angle } => apply_jones(expr, &qwp_jones(angle)),
        ElementSpec::Hwp { angle } => apply_jones(expr, &hwp_jones(angle)),
        ElementSpec::Pbs { port } => {
            let keep = match port {
                PbsPort::Transmitted => 0,
                PbsPort::Reflected => 1,
            };
            let mut groups = expr.linear_components();
            for v in groups.values_mut() {
                v[1 - keep] = ZERO;
            }
            ModeExpr::from_linear_components(&groups)
        }
        ElementSpec::QPlate { charge, retardation } => {
            let (s, c) = (0.5 * retardation).sin_cos();
            let shift = charge.oam_shift();
            let mut terms = Vec::new();
            for (base, label, z) in expr.circular_terms() {
                let (flipped, oam) = match label.pol {
                    Polarization::L => (Polarization::R, label.oam + shift),
                    _ => (Polarization::L, label.oam - shift),
                };
                terms.push((base, label, z * c));
                terms.push((base, ModeLabel::new(flipped, oam), z * I * s));
            }
            let raw = ModeExpr::from_terms(terms);
            ModeExpr::from_linear_components(&raw.linear_components())
        }
    };
    if let Some((_, label, _)) = out.terms().find(|(_, l, _)| l.oam.abs() > max_oam) {
        return Err(Error::invalid(format!(
            "OAM {} exceeds the configured bound |m| <= {max_oam}",
            label.oam
        )));
    }
    Ok(out)
}

fn apply_jones(expr: &ModeExpr, j: &Jones) -> ModeExpr {
    let mut groups = expr.linear_components();
    for v in groups.values_mut() {
        *v = [j[0][0] * v[0] + j[0][1] * v[1], j[1][0] * v[0] + j[1][1] * v[1]];
    }
    ModeExpr::from_linear_components(&groups)
}

pub fn apply_elements(expr: &ModeExpr, elements: &[ElementSpec]) -> Result<ModeExpr> {
    elements.iter().try_fold(expr.clone(), |e, el| apply_element(&e, el))
}

/// The six homodyned modes: base modes and their auxiliary combinations
/// `c = (a + b)/√2`, `d = (a - b)/√2`, `e = (ia + b)/√2`, `f = (ia - b)/√2`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeName {
    A,
    B,
    C,
    D,
    E,
    F,
}

impl ModeName {
    pub const ALL: [ModeName; 6] = [ModeName::A, ModeName::B, ModeName::C, ModeName::D, ModeName::E, ModeName::F];
    pub const AUXILIARY: [ModeName; 4] = [ModeName::C, ModeName::D, ModeName::E, ModeName::F];

    pub fn symbol(self) -> &'static str {
        match self {
            ModeName::A => "a",
            ModeName::B => "b",
            ModeName::C => "c",
            ModeName::D => "d",
            ModeName::E => "e",
            ModeName::F => "f",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        ModeName::ALL.into_iter().find(|m| m.symbol() == s)
    }

    /// Coefficients on `(a, b)`.
    pub fn coefficients(self) -> [Complex64; 2] {
        let s = Complex64::new(FRAC_1_SQRT_2, 0.0);
        match self {
            ModeName::A => [ONE, ZERO],
            ModeName::B => [ZERO, ONE],
            ModeName::C => [s, s],
            ModeName::D => [s, -s],
            ModeName::E => [I * s, s],
            ModeName::F => [I * s, -s],
        }
    }

    /// The orthogonal mode produced alongside this one.
    pub fn partner(self) -> ModeName {
        match self {
            ModeName::A => ModeName::B,
            ModeName::B => ModeName::A,
            ModeName::C => ModeName::D,
            ModeName::D => ModeName::C,
            ModeName::E => ModeName::F,
            ModeName::F => ModeName::E,
        }
    }

    /// Output slot at the q-plate: first of each pair on `(R, +1)`, second on `(L, -1)`.
    pub fn slot(self) -> ModeLabel {
        match self {
            ModeName::A | ModeName::C | ModeName::E => ModeLabel::new(Polarization::R, 1),
            ModeName::B | ModeName::D | ModeName::F => ModeLabel::new(Polarization::L, -1),
        }
    }

    pub fn canonical_expr(self) -> ModeExpr {
        let [ca, cb] = self.coefficients();
        let slot = self.slot();
        ModeExpr::from_terms([(BaseMode::A, slot, ca), (BaseMode::B, slot, cb)])
    }

    /// Quadrature map whose first output mode is this one.
    pub fn mixing_map(self) -> SymplecticMap {
        mode_mixing_map(&self.canonical_expr(), &self.partner().canonical_expr())
            .expect("canonical mode pairs are orthonormal")
    }

    /// Human-readable combination, e.g. `(i a + b)/sqrt(2)`.
    pub fn formula(self) -> String {
        let [ca, cb] = self.coefficients();
        let terms: Vec<(String, Complex64)> = [("a", ca), ("b", cb)]
            .into_iter()
            .filter(|(_, z)| z.norm() > PRUNE)
            .map(|(s, z)| (s.to_string(), z))
            .collect();
        render_combination(&terms, false)
    }
}

impl fmt::Display for ModeName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

/// Coefficients of an expression on `(a, b)`; all terms must share one slot.
fn base_coefficients(expr: &ModeExpr) -> Result<[Complex64; 2]> {
    let mut labels = expr.terms().map(|(_, l, _)| l);
    let first = labels
        .next()
        .ok_or_else(|| Error::invalid("empty mode expression"))?;
    if labels.any(|l| l != first) {
        return Err(Error::invalid("mode expression spans several slots; expected one output mode"));
    }
    let mut u = [ZERO; 2];
    for (b, _, z) in expr.terms() {
        u[b.index()] = z;
    }
    Ok(u)
}

/// Symplectic map realising `(out_0, out_1) = U (a, b)` on quadratures, where
/// the rows of `U` are the base-mode coefficients of the two expressions.
pub fn mode_mixing_map(first: &ModeExpr, second: &ModeExpr) -> Result<SymplecticMap> {
    let u = [base_coefficients(first)?, base_coefficients(second)?];
    for i in 0..2 {
        for j in 0..2 {
            let dot: Complex64 = (0..2).map(|k| u[i][k] * u[j][k].conj()).sum();
            let want = if i == j { ONE } else { ZERO };
            if (dot - want).norm() > NORM_TOL {
                return Err(Error::invalid("mode pair is not orthonormal"));
            }
        }
    }
    SymplecticMap::from_unitary(&u)
}

/// Position of QWP1 in front of the q-plate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Qwp1Setting {
    At45,
    At0,
    Removed,
}

impl Qwp1Setting {
    pub const ALL: [Qwp1Setting; 3] = [Qwp1Setting::At45, Qwp1Setting::At0, Qwp1Setting::Removed];

    fn elements(self) -> Vec<ElementSpec> {
        let qp = ElementSpec::QPlate {
            charge: TopologicalCharge::from_twice(1),
            retardation: PI,
        };
        match self {
            Qwp1Setting::At45 => vec![ElementSpec::qwp_deg(45.0), qp],
            Qwp1Setting::At0 => vec![ElementSpec::qwp_deg(0.0), qp],
            Qwp1Setting::Removed => vec![qp],
        }
    }

    fn description(self) -> &'static str {
        match self {
            Qwp1Setting::At45 => "QWP1 at 45 deg + q-plate (q=1/2, delta=pi)",
            Qwp1Setting::At0 => "QWP1 at 0 deg + q-plate (q=1/2, delta=pi)",
            Qwp1Setting::Removed => "QWP1 removed, q-plate (q=1/2, delta=pi)",
        }
    }
}

/// One output slot after the q-plate, identified with a canonical mode.
#[derive(Clone, Debug)]
pub struct SynthesizedMode {
    pub name: ModeName,
    pub slot: ModeLabel,
    pub expr: ModeExpr,
    /// `expr = global_phase × canonical_expr(name)`.
    pub global_phase: Complex64,
}

#[derive(Clone, Debug)]
pub struct Synthesis {
    pub setting: Qwp1Setting,
    /// Images of `a[H,0]` and `b[V,0]`.
    pub images: [ModeExpr; 2],
    pub outputs: Vec<SynthesizedMode>,
}

/// Propagates `a[H,0]`, `b[V,0]` through QWP1 and the q-plate, groups the
/// result by output slot and names each slot mode.
pub fn auxiliary_mode_synthesis(setting: Qwp1Setting) -> Result<Synthesis> {
    let elements = setting.elements();
    let a_in = ModeExpr::single(BaseMode::A, ModeLabel::new(Polarization::H, 0));
    let b_in = ModeExpr::single(BaseMode::B, ModeLabel::new(Polarization::V, 0));
    let images = [apply_elements(&a_in, &elements)?, apply_elements(&b_in, &elements)?];
    let total = images[0].add(&images[1]);

    let mut by_slot: BTreeMap<ModeLabel, Vec<(BaseMode, Complex64)>> = BTreeMap::new();
    for (base, label, z) in total.terms() {
        by_slot.entry(label).or_default().push((base, z));
    }

    let mut outputs = Vec::new();
    for (slot, amps) in by_slot {
        let expr = ModeExpr::from_terms(amps.iter().map(|&(b, z)| (b, slot, z))).normalized()?;
        let u = base_coefficients(&expr)?;
        let (name, phase) = ModeName::ALL
            .into_iter()
            .map(|n| {
                let c = n.coefficients();
                (n, c[0].conj() * u[0] + c[1].conj() * u[1])
            })
            .find(|(_, overlap)| (overlap.norm() - 1.0).abs() < 1e-9)
            .ok_or_else(|| Error::invalid(format!("slot [{slot}] holds no canonical mode")))?;
        outputs.push(SynthesizedMode {
            name,
            slot,
            expr,
            global_phase: phase,
        });
    }
    outputs.sort_by_key(|m| m.name);
    Ok(Synthesis {
        setting,
        images,
        outputs,
    })
}

/// Table of the three QWP1 configurations, as printed by `twinbeam modes`.
pub fn modes_table() -> Result<String> {
    let mut out = String::new();
    for setting in Qwp1Setting::ALL {
        let syn = auxiliary_mode_synthesis(setting)?;
        out.push_str(setting.description());
        out.push('\n');
        out.push_str(&format!("  a[H,0] -> {}\n", syn.images[0]));
        out.push_str(&format!("  b[V,0] -> {}\n", syn.images[1]));
        for m in &syn.outputs {
            let lhs = format!("{}[{}] = {}", m.name, m.slot, m.name.formula());
            out.push_str(&format!("  {lhs:<28} global phase {}\n", render_phase(m.global_phase)));
        }
    }
    Ok(out)
}

/// Phase as `1`, `i`, `-1`, `-i`, `e^{i k pi/4}` or `e^{i <radians>}`.
pub fn render_phase(z: Complex64) -> String {
    let arg = z.arg();
    let k = (arg / FRAC_PI_4).round();
    if (arg - k * FRAC_PI_4).abs() > 1e-9 {
        return format!("e^{{i {arg:.4}}}");
    }
    match (k as i32).rem_euclid(8) {
        0 => "1".into(),
        2 => "i".into(),
        4 => "-1".into(),
        6 => "-i".into(),
        1 => "e^{i pi/4}".into(),
        3 => "e^{i 3pi/4}".into(),
        5 => "e^{-i 3pi/4}".into(),
        _ => "e^{-i pi/4}".into(),
    }
}

fn render_magnitude(m: f64) -> Option<&'static str> {
    [(1.0, ""), (FRAC_1_SQRT_2, "/sqrt(2)"), (0.5, "/2")]
        .into_iter()
        .find(|(v, _)| (m - v).abs() < 1e-9)
        .map(|(_, s)| s)
}

/// Renders `Σ z_k · name_k`. Terms sharing a magnitude are printed as
/// `phase (t1 ± t2 ...)/magnitude`; the leading phase is factored out only
/// when `factor_phase` is set.
fn render_combination(terms: &[(String, Complex64)], factor_phase: bool) -> String {
    if terms.is_empty() {
        return "0".into();
    }
    let mag = terms[0].1.norm();
    let shared = terms.iter().all(|(_, z)| (z.norm() - mag).abs() < 1e-9);
    let mag_str = if shared { render_magnitude(mag) } else { None };
    let Some(mag_str) = mag_str else {
        return terms
            .iter()
            .map(|(n, z)| format!("({:.6}{:+.6}i) {n}", z.re, z.im))
            .collect::<Vec<_>>()
            .join(" + ");
    };
    let lead = if factor_phase {
        Complex64::from_polar(1.0, terms[0].1.arg())
    } else {
        ONE
    };
    let mut body = String::new();
    for (k, (name, z)) in terms.iter().enumerate() {
        let rel = *z / (lead * mag);
        let phase = render_phase(rel);
        let (sign, factor) = match phase.as_str() {
            "1" => ("+", String::new()),
            "-1" => ("-", String::new()),
            "i" => ("+", "i ".to_string()),
            "-i" => ("-", "i ".to_string()),
            other => ("+", format!("{other} ")),
        };
        if k == 0 {
            if sign == "-" {
                body.push('-');
            }
        } else {
            body.push_str(&format!(" {sign} "));
        }
        body.push_str(&factor);
        body.push_str(name);
    }
    let core = if terms.len() > 1 && !mag_str.is_empty() {
        format!("({body}){mag_str}")
    } else if terms.len() > 1 {
        format!("({body})")
    } else {
        format!("{body}{mag_str}")
    };
    let lead_str = render_phase(lead);
    match lead_str.as_str() {
        "1" => core,
        "-1" => format!("-{core}"),
        _ => format!("{lead_str} {core}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn h0(base: BaseMode) -> ModeExpr {
        ModeExpr::single(base, ModeLabel::new(Polarization::H, 0))
    }

    fn qp(q: f64, delta: f64) -> ElementSpec {
        ElementSpec::qplate(q, delta).unwrap()
    }

    #[test]
    fn qwp45_follows_stated_convention() {
        let out = apply_element(&h0(BaseMode::A), &ElementSpec::qwp_deg(45.0)).unwrap();
        let want = ModeExpr::single(BaseMode::A, ModeLabel::new(Polarization::L, 0));
        assert!(out.approx_eq(&want, 1e-12), "{out}");

        let v = ModeExpr::single(BaseMode::B, ModeLabel::new(Polarization::V, 0));
        let out = apply_element(&v, &ElementSpec::qwp_deg(45.0)).unwrap();
        let want = ModeExpr::single(BaseMode::B, ModeLabel::new(Polarization::R, 0)).scaled(I);
        assert!(out.approx_eq(&want, 1e-12), "{out}");
    }

    #[test]
    fn qwp0_is_diagonal_up_to_global_phase() {
        let v = ModeExpr::single(BaseMode::B, ModeLabel::new(Polarization::V, 0));
        let out_v = apply_element(&v, &ElementSpec::qwp_deg(0.0)).unwrap();
        let out_h = apply_element(&h0(BaseMode::A), &ElementSpec::qwp_deg(0.0)).unwrap();
        let g = Complex64::from_polar(1.0, -FRAC_PI_4);
        assert!(out_h.approx_eq(&h0(BaseMode::A).scaled(g), 1e-12));
        assert!(out_v.approx_eq(&v.scaled(g * I), 1e-12));
    }

    #[test]
    fn eq3_transformation_with_phases() {
        let els = [ElementSpec::qwp_deg(45.0), qp(0.5, PI)];
        let a = apply_elements(&h0(BaseMode::A), &els).unwrap();
        let want = ModeExpr::single(BaseMode::A, ModeLabel::new(Polarization::R, 1)).scaled(I);
        assert!(a.approx_eq(&want, 1e-12), "{a}");
        assert_eq!(a.len(), 1);

        let b_in = ModeExpr::single(BaseMode::B, ModeLabel::new(Polarization::V, 0));
        let b = apply_elements(&b_in, &els).unwrap();
        let want = ModeExpr::single(BaseMode::B, ModeLabel::new(Polarization::L, -1)).scaled(-ONE);
        assert!(b.approx_eq(&want, 1e-12), "{b}");
    }

    #[test]
    fn zero_retardation_is_identity() {
        let e = ModeExpr::from_terms([
            (BaseMode::A, ModeLabel::new(Polarization::L, 2), Complex64::new(0.6, 0.0)),
            (BaseMode::B, ModeLabel::new(Polarization::H, -1), Complex64::new(0.0, 0.8)),
        ]);
        let out = apply_element(&e, &qp(1.0, 0.0)).unwrap();
        assert!(out.approx_eq(&e, 1e-15));
    }

    #[test]
    fn partial_retardation_splits_by_sector() {
        let l0 = ModeExpr::single(BaseMode::A, ModeLabel::new(Polarization::L, 0));
        let out = apply_element(&l0, &qp(1.0, PI / 2.0)).unwrap();
        let c = (PI / 4.0).cos();
        let s = (PI / 4.0).sin();
        assert!((out.amplitude(BaseMode::A, ModeLabel::new(Polarization::L, 0)) - c).norm() < 1e-15);
        assert!((out.amplitude(BaseMode::A, ModeLabel::new(Polarization::R, 2)) - I * s).norm() < 1e-15);
        assert!((out.norm_sqr() - 1.0).abs() < 1e-12);

        // the 2×2 map on the {L0, R2} sector is unitary
        let r2 = ModeExpr::single(BaseMode::A, ModeLabel::new(Polarization::R, 2));
        let out_r = apply_element(&r2, &qp(1.0, PI / 2.0)).unwrap();
        assert!(out.inner(&out_r).norm() < 1e-15);
        assert!((out_r.norm_sqr() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn double_qplate_restores_mode() {
        for pol in [Polarization::L, Polarization::R] {
            let e = ModeExpr::single(BaseMode::A, ModeLabel::new(pol, 0));
            let once = apply_element(&e, &qp(0.5, PI)).unwrap();
            assert_eq!(once.len(), 1);
            let twice = apply_element(&once, &qp(0.5, PI)).unwrap();
            // i · i = -1 global, same label
            assert!(twice.approx_eq(&e.scaled(-ONE), 1e-12), "{twice}");
        }
    }

    #[test]
    fn oam_bound_and_bad_parameters() {
        let e = ModeExpr::single(BaseMode::A, ModeLabel::new(Polarization::L, 7));
        assert!(apply_element(&e, &qp(1.0, PI)).is_err());
        assert!(apply_element_bounded(&e, &qp(1.0, PI), 16).is_ok());
        assert!(ElementSpec::qplate(0.3, PI).is_err());
        assert!(ElementSpec::qplate(0.5, 7.0).is_err());
        assert!(apply_element(&e, &ElementSpec::Qwp { angle: f64::NAN }).is_err());
    }

    #[test]
    fn pbs_projects() {
        let diag = ModeExpr::from_terms([
            (BaseMode::A, ModeLabel::new(Polarization::H, 1), Complex64::new(FRAC_1_SQRT_2, 0.0)),
            (BaseMode::A, ModeLabel::new(Polarization::V, 1), Complex64::new(FRAC_1_SQRT_2, 0.0)),
        ]);
        let t = apply_element(&diag, &ElementSpec::Pbs { port: PbsPort::Transmitted }).unwrap();
        assert_eq!(t.len(), 1);
        assert!((t.norm_sqr() - 0.5).abs() < 1e-12);
        let r = apply_element(&diag, &ElementSpec::Pbs { port: PbsPort::Reflected }).unwrap();
        assert!((r.amplitude(BaseMode::A, ModeLabel::new(Polarization::V, 1)).re - FRAC_1_SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn hwp_rotates_linear_polarization() {
        let out = apply_element(&h0(BaseMode::A), &ElementSpec::hwp_deg(45.0)).unwrap();
        assert!(out.approx_eq(&ModeExpr::single(BaseMode::A, ModeLabel::new(Polarization::V, 0)).scaled(-ONE), 1e-12));
        let out = apply_element(&h0(BaseMode::A), &ElementSpec::hwp_deg(22.5)).unwrap();
        let h = out.amplitude(BaseMode::A, ModeLabel::new(Polarization::H, 0));
        let v = out.amplitude(BaseMode::A, ModeLabel::new(Polarization::V, 0));
        assert!((h.norm() - v.norm()).abs() < 1e-12);
    }

    #[test]
    fn synthesis_at_45_gives_base_modes() {
        let syn = auxiliary_mode_synthesis(Qwp1Setting::At45).unwrap();
        let names: Vec<_> = syn.outputs.iter().map(|m| m.name).collect();
        assert_eq!(names, [ModeName::A, ModeName::B]);
        assert!((syn.outputs[0].global_phase - I).norm() < 1e-12);
        assert!((syn.outputs[1].global_phase + ONE).norm() < 1e-12);
        for m in &syn.outputs {
            assert_eq!(m.expr.len(), 1);
            assert!((m.expr.terms().next().unwrap().2.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn synthesis_at_0_gives_c_and_d() {
        let syn = auxiliary_mode_synthesis(Qwp1Setting::At0).unwrap();
        let names: Vec<_> = syn.outputs.iter().map(|m| (m.name, m.slot)).collect();
        assert_eq!(
            names,
            [
                (ModeName::C, ModeLabel::new(Polarization::R, 1)),
                (ModeName::D, ModeLabel::new(Polarization::L, -1)),
            ]
        );
        let phase = Complex64::from_polar(1.0, FRAC_PI_4);
        for m in &syn.outputs {
            assert!((m.global_phase - phase).norm() < 1e-12);
            assert!(m.expr.approx_eq(&m.name.canonical_expr().scaled(phase), 1e-12));
        }
    }

    #[test]
    fn synthesis_removed_gives_e_and_f() {
        let syn = auxiliary_mode_synthesis(Qwp1Setting::Removed).unwrap();
        let names: Vec<_> = syn.outputs.iter().map(|m| m.name).collect();
        assert_eq!(names, [ModeName::E, ModeName::F]);
        for m in &syn.outputs {
            assert!((m.global_phase - ONE).norm() < 1e-12);
            assert!(m.expr.approx_eq(&m.name.canonical_expr(), 1e-12));
        }
        assert_eq!(syn.outputs[1].slot, ModeLabel::new(Polarization::L, -1));
    }

    #[test]
    fn mixing_maps() {
        let a = ModeName::A.canonical_expr();
        let b = ModeName::B.canonical_expr();
        assert_eq!(mode_mixing_map(&a, &b).unwrap(), SymplecticMap::identity());
        assert!(mode_mixing_map(&a, &a).is_err());
        let c = ModeName::C.canonical_expr();
        assert!(mode_mixing_map(&c, &ModeName::E.canonical_expr()).is_err());
        // spread over two slots is not a single output mode
        let split = ModeExpr::from_terms([
            (BaseMode::A, ModeLabel::new(Polarization::R, 1), Complex64::new(FRAC_1_SQRT_2, 0.0)),
            (BaseMode::A, ModeLabel::new(Polarization::L, -1), Complex64::new(FRAC_1_SQRT_2, 0.0)),
        ]);
        assert!(mode_mixing_map(&split, &b).is_err());
    }

    #[test]
    fn formulas() {
        assert_eq!(ModeName::C.formula(), "(a + b)/sqrt(2)");
        assert_eq!(ModeName::D.formula(), "(a - b)/sqrt(2)");
        assert_eq!(ModeName::E.formula(), "(i a + b)/sqrt(2)");
        assert_eq!(ModeName::F.formula(), "(i a - b)/sqrt(2)");
        assert_eq!(ModeName::A.formula(), "a");
    }

    #[test]
    fn json_terms() {
        let e = ModeName::E.canonical_expr();
        let text = serde_json::to_string(&e).unwrap();
        assert!(text.starts_with(r#"[{"base":"a","pol":"R","oam":1,"re":0.0,"im":0.7071"#), "{text}");
        let back: ModeExpr = serde_json::from_str(&text).unwrap();
        assert_eq!(back, e);
    }
}
