//! Symbolic advection and Lie-bracket directions on trigonometric vector
//! fields.
//!
//! Everything here is computed from first principles: the advection
//! `b(e_k^m, e_ℓ^m') = e_k^m·∇e_ℓ^m'` of two (unnormalized) basis fields is
//! expanded into a product of trigonometric functions, reduced with the
//! product-to-sum identities, and Leray-projected onto the unit-normalized
//! basis. The closed forms for the bracket directions are only used to
//! cross-check the result (see [`verify_bracket_identity`]).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{
    eval_unnormalized, gradient_unnormalized, pairing_coefficient, punctured_ball, GridField, Mode,
    Parity, ProjectionTable, Slot, WaveVector, BASIS_SCALE,
};

/// Coefficients below this magnitude are dropped.
pub const PRUNE_TOLERANCE: f64 = 1e-14;

fn trig(kind: Parity, phase: f64) -> f64 {
    match kind {
        Parity::Cos => phase.cos(),
        Parity::Sin => phase.sin(),
    }
}

/// `amp · trig(k·x)` where `trig` is a plain cosine or sine.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TrigTerm {
    pub amp: [f64; 2],
    pub trig: Parity,
    pub k: WaveVector,
}

/// A finite sum of [`TrigTerm`]s, merged by `(trig, k)` with `k` canonical.
///
/// The only term allowed at `k = 0` is a constant (cosine) mean component.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrigVectorField {
    terms: BTreeMap<(Parity, WaveVector), [f64; 2]>,
}

impl TrigVectorField {
    pub fn new() -> Self {
        Self::default()
    }

    /// Add `amp · trig(q·x)` after folding `q` onto the canonical half-lattice.
    pub fn add_term(&mut self, amp: [f64; 2], kind: Parity, q: WaveVector) {
        let (q, amp) = if q.is_zero() {
            match kind {
                Parity::Cos => (q, amp),
                Parity::Sin => return,
            }
        } else if q.is_canonical() {
            (q, amp)
        } else {
            match kind {
                Parity::Cos => (-q, amp),
                Parity::Sin => (-q, [-amp[0], -amp[1]]),
            }
        };
        let entry = self.terms.entry((kind, q)).or_insert([0.0; 2]);
        entry[0] += amp[0];
        entry[1] += amp[1];
    }

    pub fn add_scaled(&mut self, other: &TrigVectorField, scale: f64) {
        for (&(kind, q), amp) in &other.terms {
            self.add_term([scale * amp[0], scale * amp[1]], kind, q);
        }
    }

    /// Drop terms whose amplitude is below [`PRUNE_TOLERANCE`].
    pub fn prune(mut self) -> Self {
        self.terms
            .retain(|_, amp| amp[0].abs() > PRUNE_TOLERANCE || amp[1].abs() > PRUNE_TOLERANCE);
        self
    }

    pub fn terms(&self) -> impl Iterator<Item = TrigTerm> + '_ {
        self.terms
            .iter()
            .map(|(&(trig, k), &amp)| TrigTerm { amp, trig, k })
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn eval(&self, x: [f64; 2]) -> [f64; 2] {
        self.terms().fold([0.0; 2], |acc, t| {
            let s = trig(t.trig, t.k.phase(x));
            [acc[0] + t.amp[0] * s, acc[1] + t.amp[1] * s]
        })
    }
}

/// `amp · f(k·x) · g(ℓ·x)` before product-to-sum reduction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProductTerm {
    pub amp: [f64; 2],
    pub first: (Parity, WaveVector),
    pub second: (Parity, WaveVector),
}

/// Sum of [`ProductTerm`]s, the raw output of an advection.
#[derive(Clone, Debug, Default)]
pub struct ProductField {
    pub terms: Vec<ProductTerm>,
}

impl ProductField {
    pub fn eval(&self, x: [f64; 2]) -> [f64; 2] {
        self.terms.iter().fold([0.0; 2], |acc, t| {
            let s = trig(t.first.0, t.first.1.phase(x)) * trig(t.second.0, t.second.1.phase(x));
            [acc[0] + t.amp[0] * s, acc[1] + t.amp[1] * s]
        })
    }

    /// Rewrite every product as a sum of single trigonometric terms at `k ± ℓ`.
    pub fn reduce(&self) -> TrigVectorField {
        use Parity::{Cos, Sin};
        let mut out = TrigVectorField::new();
        for t in &self.terms {
            let (f, k) = t.first;
            let (g, l) = t.second;
            let half = [0.5 * t.amp[0], 0.5 * t.amp[1]];
            let neg = [-half[0], -half[1]];
            match (f, g) {
                (Cos, Cos) => {
                    out.add_term(half, Cos, k - l);
                    out.add_term(half, Cos, k + l);
                }
                (Sin, Sin) => {
                    out.add_term(half, Cos, k - l);
                    out.add_term(neg, Cos, k + l);
                }
                (Sin, Cos) => {
                    out.add_term(half, Sin, k + l);
                    out.add_term(half, Sin, k - l);
                }
                (Cos, Sin) => {
                    out.add_term(half, Sin, k + l);
                    out.add_term(neg, Sin, k - l);
                }
            }
        }
        out.prune()
    }
}

/// `e_k^m = sign · polarization · trig(k·x)`.
fn basis_trig(parity: Parity) -> (f64, Parity) {
    match parity {
        Parity::Cos => (1.0, Parity::Cos),
        Parity::Sin => (-1.0, Parity::Sin),
    }
}

/// `b(e_k^m, e_ℓ^m')` as an unreduced product.
pub fn advect_unreduced(k: WaveVector, m: Parity, l: WaveVector, m2: Parity) -> ProductField {
    let cross = k.cross(l);
    if cross == 0 || k.is_zero() || l.is_zero() {
        return ProductField::default();
    }
    // e_k^m·∇ acting on trig(ℓ·x) gives (d_k·ℓ) times its derivative.
    let transport = cross as f64 / k.norm();
    let (sign_k, trig_k) = basis_trig(m);
    // d/ds cos = -sin, d/ds (-sin) = -cos.
    let deriv = match m2 {
        Parity::Cos => Parity::Sin,
        Parity::Sin => Parity::Cos,
    };
    let d = l.polarization();
    let scale = -sign_k * transport;
    ProductField {
        terms: vec![ProductTerm {
            amp: [scale * d[0], scale * d[1]],
            first: (trig_k, k),
            second: (deriv, l),
        }],
    }
}

/// `b(e_k^m, e_ℓ^m') = e_k^m·∇e_ℓ^m'`, reduced to single trigonometric terms.
pub fn advect(k: WaveVector, m: Parity, l: WaveVector, m2: Parity) -> TrigVectorField {
    advect_unreduced(k, m, l, m2).reduce()
}

/// Coefficients of a field in the unit-normalized mode basis.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct DirectionExpansion {
    coefficients: BTreeMap<Mode, f64>,
}

impl DirectionExpansion {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, mode: Mode, c: f64) {
        *self.coefficients.entry(mode).or_insert(0.0) += c;
    }

    pub fn add_scaled(&mut self, other: &DirectionExpansion, scale: f64) {
        for (&mode, &c) in &other.coefficients {
            self.add(mode, scale * c);
        }
    }

    pub fn prune(mut self) -> Self {
        self.coefficients.retain(|_, c| c.abs() > PRUNE_TOLERANCE);
        self
    }

    pub fn get(&self, mode: Mode) -> f64 {
        self.coefficients.get(&mode).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (Mode, f64)> + '_ {
        self.coefficients.iter().map(|(&m, &c)| (m, c))
    }

    pub fn len(&self) -> usize {
        self.coefficients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coefficients.is_empty()
    }

    /// The surviving mode when exactly one remains.
    pub fn single(&self) -> Option<(Mode, f64)> {
        if self.coefficients.len() == 1 {
            self.iter().next()
        } else {
            None
        }
    }
}

/// Leray projection of `f` onto the divergence-free, mean-zero subspace,
/// expressed in unit-normalized modes of the given slot.
pub fn leray_project(f: &TrigVectorField, slot: Slot) -> DirectionExpansion {
    let mut out = DirectionExpansion::new();
    for t in f.terms() {
        if t.k.is_zero() {
            continue;
        }
        let d = t.k.polarization();
        let along = t.amp[0] * d[0] + t.amp[1] * d[1];
        // ⟨amp·cos(q·x), ê_q^0⟩ = s·(amp·d); ê_q^1 carries a minus sign.
        let (parity, c) = match t.trig {
            Parity::Cos => (Parity::Cos, BASIS_SCALE * along),
            Parity::Sin => (Parity::Sin, -BASIS_SCALE * along),
        };
        out.add(Mode { slot, k: t.k, parity }, c);
    }
    out.prune()
}

/// `𝒥_{k,ℓ}^{m,m'} = b(e_k^m, e_ℓ^m') + b(e_ℓ^m', e_k^m)`.
pub fn symmetric_advection(k: WaveVector, m: Parity, l: WaveVector, m2: Parity) -> TrigVectorField {
    let mut f = advect(k, m, l, m2);
    f.add_scaled(&advect(l, m2, k, m), 1.0);
    f.prune()
}

/// `𝒵_{k,ℓ}^{m,m'} = b(e_k^m, e_ℓ^m') - b(e_ℓ^m', e_k^m)`.
pub fn antisymmetric_advection(k: WaveVector, m: Parity, l: WaveVector, m2: Parity) -> TrigVectorField {
    let mut f = advect(k, m, l, m2);
    f.add_scaled(&advect(l, m2, k, m), -1.0);
    f.prune()
}

/// Velocity component of `J_{k,ℓ}^{m,m'} = B(σ_k^m, σ_ℓ^m') + B(σ_ℓ^m', σ_k^m)`.
pub fn velocity_bracket(k: WaveVector, m: Parity, l: WaveVector, m2: Parity) -> DirectionExpansion {
    let mut e = DirectionExpansion::new();
    e.add_scaled(&leray_project(&symmetric_advection(k, m, l, m2), Slot::Velocity), -1.0);
    e.prune()
}

/// Magnetic component of `Z_{k,ℓ}^{m,m'} = B(ψ_k^m, σ_ℓ^m') + B(σ_ℓ^m', ψ_k^m)`.
pub fn magnetic_bracket(k: WaveVector, m: Parity, l: WaveVector, m2: Parity) -> DirectionExpansion {
    leray_project(&antisymmetric_advection(k, m, l, m2), Slot::Magnetic)
}

/// The four parity combinations that isolate a single direction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Combo {
    Sum01,
    Diff01,
    #[serde(rename = "sum11_00")]
    Sum1100,
    #[serde(rename = "diff11_00")]
    Diff1100,
}

impl Combo {
    pub const ALL: [Combo; 4] = [Combo::Sum01, Combo::Diff01, Combo::Sum1100, Combo::Diff1100];
}

/// Why a direction combination vanishes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Degeneracy {
    /// `⟨k, ℓ⊥⟩ = 0`.
    Parallel,
    /// `|k| = |ℓ|` (velocity directions only).
    EqualModuli,
    /// The target wavevector is zero.
    ZeroMode,
}

impl Degeneracy {
    pub fn reason(self) -> &'static str {
        match self {
            Degeneracy::Parallel => "degenerate: parallel",
            Degeneracy::EqualModuli => "degenerate: equal moduli",
            Degeneracy::ZeroMode => "degenerate: zero mode",
        }
    }
}

/// A bracket direction together with a degeneracy flag.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Direction {
    pub expansion: DirectionExpansion,
    pub degeneracy: Option<Degeneracy>,
}

/// Wavevector and parity a combination is expected to land on.
pub fn target_of(slot: Slot, k: WaveVector, l: WaveVector, combo: Combo) -> (WaveVector, Parity) {
    match (slot, combo) {
        (Slot::Velocity, Combo::Sum01) => (k + l, Parity::Cos),
        (Slot::Velocity, Combo::Diff01) => (k - l, Parity::Cos),
        (Slot::Velocity, Combo::Sum1100) => (k - l, Parity::Sin),
        (Slot::Velocity, Combo::Diff1100) => (k + l, Parity::Sin),
        (Slot::Magnetic, Combo::Sum01) => (k - l, Parity::Cos),
        (Slot::Magnetic, Combo::Diff01) => (k + l, Parity::Cos),
        (Slot::Magnetic, Combo::Sum1100) => (k - l, Parity::Sin),
        (Slot::Magnetic, Combo::Diff1100) => (k + l, Parity::Sin),
    }
}

fn degeneracy(slot: Slot, k: WaveVector, l: WaveVector, combo: Combo) -> Option<Degeneracy> {
    if k.cross(l) == 0 {
        Some(Degeneracy::Parallel)
    } else if slot == Slot::Velocity && k.norm2() == l.norm2() {
        Some(Degeneracy::EqualModuli)
    } else if target_of(slot, k, l, combo).0.is_zero() {
        Some(Degeneracy::ZeroMode)
    } else {
        None
    }
}

fn check_nonzero(k: WaveVector, l: WaveVector) -> Result<()> {
    if k.is_zero() || l.is_zero() {
        return Err(Error::Domain("bracket directions need nonzero wavevectors".into()));
    }
    Ok(())
}

/// Velocity direction generated from magnetic forcing at `k` and `ℓ`:
///
/// * `Sum01`: `J_{k,ℓ}^{0,1} + J_{ℓ,k}^{0,1}`
/// * `Diff01`: `J_{k,ℓ}^{0,1} - J_{ℓ,k}^{0,1}`
/// * `Sum1100`: `J_{k,ℓ}^{1,1} + J_{ℓ,k}^{0,0}`
/// * `Diff1100`: `J_{k,ℓ}^{1,1} - J_{ℓ,k}^{0,0}`
pub fn velocity_direction(k: WaveVector, l: WaveVector, combo: Combo) -> Result<Direction> {
    use Parity::{Cos, Sin};
    check_nonzero(k, l)?;
    let (first, second, sign) = match combo {
        Combo::Sum01 => (velocity_bracket(k, Cos, l, Sin), velocity_bracket(l, Cos, k, Sin), 1.0),
        Combo::Diff01 => (velocity_bracket(k, Cos, l, Sin), velocity_bracket(l, Cos, k, Sin), -1.0),
        Combo::Sum1100 => (velocity_bracket(k, Sin, l, Sin), velocity_bracket(l, Cos, k, Cos), 1.0),
        Combo::Diff1100 => (velocity_bracket(k, Sin, l, Sin), velocity_bracket(l, Cos, k, Cos), -1.0),
    };
    let mut expansion = first;
    expansion.add_scaled(&second, sign);
    Ok(Direction {
        expansion: expansion.prune(),
        degeneracy: degeneracy(Slot::Velocity, k, l, combo),
    })
}

/// Magnetic direction generated from a velocity direction at `k` and
/// magnetic forcing at `ℓ`:
///
/// * `Sum01`: `Z_{k,ℓ}^{0,1} + Z_{ℓ,k}^{0,1}`
/// * `Diff01`: `Z_{k,ℓ}^{0,1} - Z_{ℓ,k}^{0,1}`
/// * `Sum1100`: `Z_{k,ℓ}^{1,1} + Z_{k,ℓ}^{0,0}`
/// * `Diff1100`: `Z_{k,ℓ}^{1,1} - Z_{k,ℓ}^{0,0}`
pub fn magnetic_direction(k: WaveVector, l: WaveVector, combo: Combo) -> Result<Direction> {
    use Parity::{Cos, Sin};
    check_nonzero(k, l)?;
    let (first, second, sign) = match combo {
        Combo::Sum01 => (magnetic_bracket(k, Cos, l, Sin), magnetic_bracket(l, Cos, k, Sin), 1.0),
        Combo::Diff01 => (magnetic_bracket(k, Cos, l, Sin), magnetic_bracket(l, Cos, k, Sin), -1.0),
        Combo::Sum1100 => (magnetic_bracket(k, Sin, l, Sin), magnetic_bracket(k, Cos, l, Cos), 1.0),
        Combo::Diff1100 => (magnetic_bracket(k, Sin, l, Sin), magnetic_bracket(k, Cos, l, Cos), -1.0),
    };
    let mut expansion = first;
    expansion.add_scaled(&second, sign);
    Ok(Direction {
        expansion: expansion.prune(),
        degeneracy: degeneracy(Slot::Magnetic, k, l, combo),
    })
}

pub fn direction(slot: Slot, k: WaveVector, l: WaveVector, combo: Combo) -> Result<Direction> {
    match slot {
        Slot::Velocity => velocity_direction(k, l, combo),
        Slot::Magnetic => magnetic_direction(k, l, combo),
    }
}

/// Closed-form coefficient of a direction on the unnormalized target mode,
/// up to the normalization constant `c`.
pub fn closed_form_coefficient(slot: Slot, k: WaveVector, l: WaveVector, combo: Combo) -> f64 {
    let a = pairing_coefficient(k, l).unwrap_or(0.0);
    let (k2, l2) = (k.norm2() as f64, l.norm2() as f64);
    let (sum, diff) = ((k + l).norm(), (k - l).norm());
    match (slot, combo) {
        (Slot::Velocity, Combo::Sum01) => a * (l2 - k2) / sum,
        (Slot::Velocity, Combo::Diff01) => a * (k2 - l2) / diff,
        (Slot::Velocity, Combo::Sum1100) => a * (l2 - k2) / diff,
        (Slot::Velocity, Combo::Diff1100) => a * (l2 - k2) / sum,
        (Slot::Magnetic, Combo::Sum01) | (Slot::Magnetic, Combo::Sum1100) => a * diff,
        (Slot::Magnetic, Combo::Diff01) | (Slot::Magnetic, Combo::Diff1100) => a * sum,
    }
}

/// Outcome of cross-checking a symbolic direction against quadrature.
#[derive(Clone, Debug, Serialize)]
pub struct VerificationReport {
    pub k: WaveVector,
    pub l: WaveVector,
    pub combo: Combo,
    pub slot: Slot,
    pub degeneracy: Option<Degeneracy>,
    /// Both sides keep the same set of modes above [`SELECTION_TOLERANCE`].
    pub selection_ok: bool,
    pub symbolic_modes: Vec<Mode>,
    pub quadrature_modes: Vec<Mode>,
    /// Symbolic coefficient over the quadrature coefficient (single-mode case).
    pub coefficient_ratio: Option<f64>,
    /// Symbolic coefficient over the closed form, i.e. the constant `c`
    /// relating the computed direction to the unnormalized target mode.
    pub normalization_constant: Option<f64>,
    /// Largest `|symbolic - quadrature|` over every probed mode.
    pub max_deviation: f64,
}

/// Modes whose quadrature coefficient exceeds this are treated as present.
pub const SELECTION_TOLERANCE: f64 = 1e-10;

/// Pointwise `b(e_k^m, e_ℓ^m')(x)` from exact field values and Jacobians.
fn advect_pointwise(k: WaveVector, m: Parity, l: WaveVector, m2: Parity, x: [f64; 2]) -> [f64; 2] {
    let u = eval_unnormalized(k, m, x);
    let g = gradient_unnormalized(l, m2, x);
    [
        u[0] * g[0][0] + u[1] * g[0][1],
        u[0] * g[1][0] + u[1] * g[1][1],
    ]
}

/// Pointwise value of the (unprojected) combination behind a direction.
fn combination_pointwise(slot: Slot, k: WaveVector, l: WaveVector, combo: Combo, x: [f64; 2]) -> [f64; 2] {
    use Parity::{Cos, Sin};
    let j = |a: WaveVector, m: Parity, b: WaveVector, m2: Parity| {
        let p = advect_pointwise(a, m, b, m2, x);
        let q = advect_pointwise(b, m2, a, m, x);
        [-(p[0] + q[0]), -(p[1] + q[1])]
    };
    let z = |a: WaveVector, m: Parity, b: WaveVector, m2: Parity| {
        let p = advect_pointwise(a, m, b, m2, x);
        let q = advect_pointwise(b, m2, a, m, x);
        [p[0] - q[0], p[1] - q[1]]
    };
    let (first, second, sign) = match (slot, combo) {
        (Slot::Velocity, Combo::Sum01) => (j(k, Cos, l, Sin), j(l, Cos, k, Sin), 1.0),
        (Slot::Velocity, Combo::Diff01) => (j(k, Cos, l, Sin), j(l, Cos, k, Sin), -1.0),
        (Slot::Velocity, Combo::Sum1100) => (j(k, Sin, l, Sin), j(l, Cos, k, Cos), 1.0),
        (Slot::Velocity, Combo::Diff1100) => (j(k, Sin, l, Sin), j(l, Cos, k, Cos), -1.0),
        (Slot::Magnetic, Combo::Sum01) => (z(k, Cos, l, Sin), z(l, Cos, k, Sin), 1.0),
        (Slot::Magnetic, Combo::Diff01) => (z(k, Cos, l, Sin), z(l, Cos, k, Sin), -1.0),
        (Slot::Magnetic, Combo::Sum1100) => (z(k, Sin, l, Sin), z(k, Cos, l, Cos), 1.0),
        (Slot::Magnetic, Combo::Diff1100) => (z(k, Sin, l, Sin), z(k, Cos, l, Cos), -1.0),
    };
    [first[0] + sign * second[0], first[1] + sign * second[1]]
}

/// Quadrature grid and cached basis samples for a bracket sweep.
pub struct BracketOracle {
    table: ProjectionTable,
    kmax: u32,
}

impl BracketOracle {
    /// Oracle able to check all pairs with `|k|, |ℓ| ≤ kmax`.
    pub fn new(kmax: u32) -> Result<Self> {
        if kmax == 0 {
            return Err(Error::Precondition("kmax must be positive".into()));
        }
        // Outputs live at |k ± ℓ| ≤ 2·kmax; the grid must resolve their
        // products with the test modes.
        let reach = 2 * kmax;
        let m = (4 * reach as usize).max(16);
        let table = ProjectionTable::new(m, reach)?;
        Ok(BracketOracle { table, kmax })
    }

    pub fn kmax(&self) -> u32 {
        self.kmax
    }

    pub fn verify(&self, k: WaveVector, l: WaveVector, combo: Combo, slot: Slot) -> Result<VerificationReport> {
        let kmax = self.kmax as i64;
        if k.norm2() > kmax * kmax || l.norm2() > kmax * kmax {
            return Err(Error::Precondition(format!(
                "wavevectors {k}, {l} exceed the oracle range |k| ≤ {kmax}"
            )));
        }
        let symbolic = direction(slot, k, l, combo)?;
        let field = GridField::sample(self.table.resolution(), |x| {
            combination_pointwise(slot, k, l, combo, x)
        });
        let projected = self.table.project(&field);

        let mut quadrature_modes = Vec::new();
        let mut max_deviation: f64 = 0.0;
        for (k_canon, parity, value) in projected {
            let mode = Mode { slot, k: k_canon, parity };
            if value.abs() > SELECTION_TOLERANCE {
                quadrature_modes.push(mode);
            }
            max_deviation = max_deviation.max((symbolic.expansion.get(mode) - value).abs());
        }
        let symbolic_modes: Vec<Mode> = symbolic
            .expansion
            .iter()
            .filter(|(_, c)| c.abs() > SELECTION_TOLERANCE)
            .map(|(m, _)| m)
            .collect();
        let selection_ok = symbolic_modes == quadrature_modes
            && symbolic.expansion.iter().all(|(m, _)| m.k.norm2() <= 4 * kmax * kmax);

        let (coefficient_ratio, normalization_constant) = match symbolic.expansion.single() {
            Some((mode, c)) if quadrature_modes.len() == 1 => {
                let q = self.table.project_one(&field, mode.k, mode.parity);
                let (target, parity) = target_of(slot, k, l, combo);
                let closed = closed_form_coefficient(slot, k, l, combo);
                let constant = if mode.parity == parity && !target.is_zero() {
                    let (canon, sign) = crate::lattice::canonical_rep(target, parity)?;
                    (canon == mode.k).then(|| c / (closed * sign * BASIS_SCALE))
                } else {
                    None
                };
                (Some(c / q), constant)
            }
            _ => (None, None),
        };

        Ok(VerificationReport {
            k,
            l,
            combo,
            slot,
            degeneracy: symbolic.degeneracy,
            selection_ok,
            symbolic_modes,
            quadrature_modes,
            coefficient_ratio,
            normalization_constant,
            max_deviation,
        })
    }
}

/// Check one combination with a freshly built oracle sized for `k`, `ℓ`.
pub fn verify_bracket_identity(k: WaveVector, l: WaveVector, combo: Combo, slot: Slot) -> Result<VerificationReport> {
    let kmax = k.norm().max(l.norm()).ceil() as u32;
    BracketOracle::new(kmax.max(1))?.verify(k, l, combo, slot)
}

/// Every nonzero pair with `|k|, |ℓ| ≤ kmax`, every combination, both slots.
pub fn verify_sweep(kmax: u32) -> Result<Vec<VerificationReport>> {
    use rayon::prelude::*;
    let oracle = BracketOracle::new(kmax)?;
    let ball = punctured_ball(kmax);
    let jobs: Vec<(WaveVector, WaveVector, Combo, Slot)> = ball
        .iter()
        .flat_map(|&k| ball.iter().map(move |&l| (k, l)))
        .flat_map(|(k, l)| {
            Slot::BOTH
                .into_iter()
                .flat_map(move |slot| Combo::ALL.map(|combo| (k, l, combo, slot)))
        })
        .collect();
    jobs.par_iter()
        .map(|&(k, l, combo, slot)| oracle.verify(k, l, combo, slot))
        .collect()
}
