//! Integer-lattice geometry and the trigonometric divergence-free basis on
//! the torus `[-π, π]²`.
//!
//! For a nonzero wavevector `k` the (unnormalized) basis fields are
//!
//! ```text
//! e_k^0(x) = ( k2/|k|, -k1/|k|) cos(k·x)
//! e_k^1(x) = (-k2/|k|,  k1/|k|) sin(k·x)
//! ```
//!
//! Each has L² norm `√(2π²)` on the fundamental domain. Coefficients stored
//! anywhere else in the crate refer to the unit-normalized fields
//! `ê = e / BASIS_SCALE`.

use std::cmp::Ordering;
use std::f64::consts::{PI, SQRT_2};
use std::fmt;
use std::ops::{Add, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// L² norm of an unnormalized basis field, `√(2π²)`.
pub const BASIS_SCALE: f64 = PI * SQRT_2;

/// A point of the integer lattice `Z²`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[i64; 2]", into = "[i64; 2]")]
pub struct WaveVector {
    pub k1: i64,
    pub k2: i64,
}

impl WaveVector {
    pub const ZERO: WaveVector = WaveVector { k1: 0, k2: 0 };

    pub const fn new(k1: i64, k2: i64) -> Self {
        WaveVector { k1, k2 }
    }

    /// Exact squared Euclidean norm.
    pub fn norm2(self) -> i64 {
        self.k1 * self.k1 + self.k2 * self.k2
    }

    pub fn norm(self) -> f64 {
        (self.norm2() as f64).sqrt()
    }

    pub fn is_zero(self) -> bool {
        self.k1 == 0 && self.k2 == 0
    }

    /// `k⊥ = (-k2, k1)`.
    pub fn perp(self) -> Self {
        WaveVector::new(-self.k2, self.k1)
    }

    pub fn dot(self, other: WaveVector) -> i64 {
        self.k1 * other.k1 + self.k2 * other.k2
    }

    /// Exact `⟨self, other⊥⟩`.
    pub fn cross(self, other: WaveVector) -> i64 {
        self.dot(other.perp())
    }

    /// Canonical half-lattice: `k1 > 0`, or `k1 = 0` and `k2 > 0`.
    pub fn is_canonical(self) -> bool {
        self.k1 > 0 || (self.k1 == 0 && self.k2 > 0)
    }

    /// Unit vector `(k2, -k1)/|k|`, the polarization of `e_k^0`.
    pub fn polarization(self) -> [f64; 2] {
        let n = self.norm();
        [self.k2 as f64 / n, -(self.k1 as f64) / n]
    }

    /// Phase `k·x`.
    pub fn phase(self, x: [f64; 2]) -> f64 {
        self.k1 as f64 * x[0] + self.k2 as f64 * x[1]
    }

    /// Largest absolute component.
    pub fn max_abs(self) -> i64 {
        self.k1.abs().max(self.k2.abs())
    }
}

impl From<[i64; 2]> for WaveVector {
    fn from(v: [i64; 2]) -> Self {
        WaveVector::new(v[0], v[1])
    }
}

impl From<WaveVector> for [i64; 2] {
    fn from(k: WaveVector) -> Self {
        [k.k1, k.k2]
    }
}

impl fmt::Debug for WaveVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.k1, self.k2)
    }
}

impl fmt::Display for WaveVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.k1, self.k2)
    }
}

// Order by modulus first so that sorted collections list low modes first.
impl Ord for WaveVector {
    fn cmp(&self, other: &Self) -> Ordering {
        self.norm2()
            .cmp(&other.norm2())
            .then(self.k1.cmp(&other.k1))
            .then(self.k2.cmp(&other.k2))
    }
}

impl PartialOrd for WaveVector {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Add for WaveVector {
    type Output = WaveVector;
    fn add(self, o: WaveVector) -> WaveVector {
        WaveVector::new(self.k1 + o.k1, self.k2 + o.k2)
    }
}

impl Sub for WaveVector {
    type Output = WaveVector;
    fn sub(self, o: WaveVector) -> WaveVector {
        WaveVector::new(self.k1 - o.k1, self.k2 - o.k2)
    }
}

impl Neg for WaveVector {
    type Output = WaveVector;
    fn neg(self) -> WaveVector {
        WaveVector::new(-self.k1, -self.k2)
    }
}

/// Cosine (`m = 0`) or sine (`m = 1`) member of a basis pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parity {
    Cos,
    Sin,
}

impl Parity {
    pub const BOTH: [Parity; 2] = [Parity::Cos, Parity::Sin];

    pub fn index(self) -> usize {
        match self {
            Parity::Cos => 0,
            Parity::Sin => 1,
        }
    }

    pub fn from_index(m: u8) -> Result<Self> {
        match m {
            0 => Ok(Parity::Cos),
            1 => Ok(Parity::Sin),
            _ => Err(Error::Domain(format!("parity must be 0 or 1, got {m}"))),
        }
    }
}

/// Which component of `U = (u, b)` a mode lives in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Slot {
    Velocity,
    Magnetic,
}

impl Slot {
    pub const BOTH: [Slot; 2] = [Slot::Velocity, Slot::Magnetic];
}

/// A basis element of `H`: `ψ_k^m = (e_k^m, 0)` or `σ_k^m = (0, e_k^m)`, with
/// `k` on the canonical half-lattice.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Mode {
    pub slot: Slot,
    pub k: WaveVector,
    pub parity: Parity,
}

impl Mode {
    pub fn new(slot: Slot, k: WaveVector, parity: Parity) -> Result<Self> {
        if !k.is_canonical() {
            return Err(Error::Domain(format!("mode wavevector {k} is not canonical")));
        }
        Ok(Mode { slot, k, parity })
    }

    pub fn velocity(k1: i64, k2: i64, parity: Parity) -> Result<Self> {
        Mode::new(Slot::Velocity, WaveVector::new(k1, k2), parity)
    }

    pub fn magnetic(k1: i64, k2: i64, parity: Parity) -> Result<Self> {
        Mode::new(Slot::Magnetic, WaveVector::new(k1, k2), parity)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self.slot {
            Slot::Velocity => "psi",
            Slot::Magnetic => "sigma",
        };
        write!(f, "{}_{}^{}", name, self.k, self.parity.index())
    }
}

/// `a = ⟨k, ℓ⊥⟩ / (|k||ℓ|)`.
pub fn pairing_coefficient(k: WaveVector, l: WaveVector) -> Result<f64> {
    if k.is_zero() || l.is_zero() {
        return Err(Error::Domain("pairing coefficient of a zero wavevector".into()));
    }
    Ok(k.cross(l) as f64 / (k.norm() * l.norm()))
}

/// Canonical representative `k'` of `±k` and the sign `s` with
/// `e_k^m = s · e_{k'}^m`.
///
/// Flipping `k` flips the polarization vector; cosine is even and sine odd,
/// so the cosine field changes sign while the sine field does not.
pub fn canonical_rep(k: WaveVector, parity: Parity) -> Result<(WaveVector, f64)> {
    if k.is_zero() {
        return Err(Error::Domain("zero wavevector has no canonical representative".into()));
    }
    if k.is_canonical() {
        return Ok((k, 1.0));
    }
    let sign = match parity {
        Parity::Cos => -1.0,
        Parity::Sin => 1.0,
    };
    Ok((-k, sign))
}

/// Unnormalized `e_k^m(x)` for any nonzero `k`.
pub fn eval_unnormalized(k: WaveVector, parity: Parity, x: [f64; 2]) -> [f64; 2] {
    let d = k.polarization();
    let phase = k.phase(x);
    let s = match parity {
        Parity::Cos => phase.cos(),
        Parity::Sin => -phase.sin(),
    };
    [d[0] * s, d[1] * s]
}

/// Jacobian `∂_j e_k^m_i` of the unnormalized field at `x`, indexed `[i][j]`.
pub fn gradient_unnormalized(k: WaveVector, parity: Parity, x: [f64; 2]) -> [[f64; 2]; 2] {
    let d = k.polarization();
    let phase = k.phase(x);
    // d/dx_j of cos(k·x) is -k_j sin; of -sin(k·x) is -k_j cos.
    let s = match parity {
        Parity::Cos => -phase.sin(),
        Parity::Sin => -phase.cos(),
    };
    let kv = [k.k1 as f64, k.k2 as f64];
    [
        [d[0] * kv[0] * s, d[0] * kv[1] * s],
        [d[1] * kv[0] * s, d[1] * kv[1] * s],
    ]
}

/// Unit-normalized basis field `ê_k^m(x)` of a mode (value in its slot).
pub fn eval_basis_field(mode: Mode, x: [f64; 2]) -> [f64; 2] {
    let v = eval_unnormalized(mode.k, mode.parity, x);
    [v[0] / BASIS_SCALE, v[1] / BASIS_SCALE]
}

/// Pointwise divergence of the unit-normalized field, from the exact Jacobian.
pub fn basis_divergence(mode: Mode, x: [f64; 2]) -> f64 {
    let g = gradient_unnormalized(mode.k, mode.parity, x);
    (g[0][0] + g[1][1]) / BASIS_SCALE
}

/// A 2-vector field sampled on the uniform `m × m` grid
/// `x_{ij} = (-π + 2πi/m, -π + 2πj/m)`.
#[derive(Clone, Debug)]
pub struct GridField {
    m: usize,
    values: Vec<[f64; 2]>,
}

impl GridField {
    pub fn sample(m: usize, f: impl Fn([f64; 2]) -> [f64; 2]) -> Self {
        let values = (0..m * m).map(|idx| f(grid_point(m, idx / m, idx % m))).collect();
        GridField { m, values }
    }

    pub fn resolution(&self) -> usize {
        self.m
    }

    pub fn values(&self) -> &[[f64; 2]] {
        &self.values
    }
}

/// Grid point `(i, j)` of the `m × m` quadrature grid.
pub fn grid_point(m: usize, i: usize, j: usize) -> [f64; 2] {
    let h = 2.0 * PI / m as f64;
    [-PI + h * i as f64, -PI + h * j as f64]
}

/// `⟨field, ê_mode⟩` by the rectangle rule on the field's grid.
///
/// The rule is exact for trigonometric polynomials whose combined frequency
/// stays below the grid's Nyquist limit.
pub fn project_onto_mode(field: &GridField, mode: Mode) -> Result<f64> {
    let m = field.m;
    let needed = (4 * mode.k.max_abs()).max(4) as usize;
    if m % 2 != 0 || m < needed {
        return Err(Error::Precondition(format!(
            "grid resolution {m} must be even and at least {needed} for mode {mode}"
        )));
    }
    let h = 2.0 * PI / m as f64;
    let mut acc = 0.0;
    for (idx, v) in field.values.iter().enumerate() {
        let e = eval_basis_field(mode, grid_point(m, idx / m, idx % m));
        acc += v[0] * e[0] + v[1] * e[1];
    }
    Ok(acc * h * h)
}

/// Basis samples of every mode in a canonical ball, cached for repeated
/// rectangle-rule projections on one grid.
pub struct ProjectionTable {
    m: usize,
    modes: Vec<(WaveVector, Parity)>,
    samples: Vec<Vec<[f64; 2]>>,
}

impl ProjectionTable {
    pub fn new(m: usize, radius: u32) -> Result<Self> {
        let needed = (4 * radius as usize).max(4);
        if m % 2 != 0 || m < needed {
            return Err(Error::Precondition(format!(
                "grid resolution {m} must be even and at least {needed} for radius {radius}"
            )));
        }
        let modes: Vec<(WaveVector, Parity)> = canonical_ball(radius)
            .into_iter()
            .flat_map(|k| Parity::BOTH.map(|p| (k, p)))
            .collect();
        let samples = modes
            .iter()
            .map(|&(k, p)| {
                let mode = Mode { slot: Slot::Velocity, k, parity: p };
                (0..m * m)
                    .map(|idx| eval_basis_field(mode, grid_point(m, idx / m, idx % m)))
                    .collect()
            })
            .collect();
        Ok(ProjectionTable { m, modes, samples })
    }

    pub fn resolution(&self) -> usize {
        self.m
    }

    fn dot(&self, field: &GridField, samples: &[[f64; 2]]) -> f64 {
        let h = 2.0 * PI / self.m as f64;
        let acc: f64 = field
            .values
            .iter()
            .zip(samples)
            .map(|(v, e)| v[0] * e[0] + v[1] * e[1])
            .sum();
        acc * h * h
    }

    /// `⟨field, ê⟩` for every cached mode, in table order.
    pub fn project(&self, field: &GridField) -> Vec<(WaveVector, Parity, f64)> {
        assert_eq!(field.m, self.m, "grid resolution mismatch");
        self.modes
            .iter()
            .zip(&self.samples)
            .map(|(&(k, p), s)| (k, p, self.dot(field, s)))
            .collect()
    }

    /// `⟨field, ê_k^parity⟩`; `k` must be canonical and inside the table.
    pub fn project_one(&self, field: &GridField, k: WaveVector, parity: Parity) -> f64 {
        let idx = self
            .modes
            .iter()
            .position(|&(q, p)| q == k && p == parity)
            .expect("mode outside the projection table");
        self.dot(field, &self.samples[idx])
    }
}

/// Canonical wavevectors with `0 < |k| ≤ radius`, sorted by modulus.
pub fn canonical_ball(radius: u32) -> Vec<WaveVector> {
    let r = radius as i64;
    let mut out: Vec<WaveVector> = (0..=r)
        .flat_map(|k1| (-r..=r).map(move |k2| WaveVector::new(k1, k2)))
        .filter(|k| k.is_canonical() && k.norm2() <= r * r)
        .collect();
    out.sort();
    out
}

/// All nonzero wavevectors with `|k| ≤ radius`, sorted by modulus.
pub fn punctured_ball(radius: u32) -> Vec<WaveVector> {
    let r = radius as i64;
    let mut out: Vec<WaveVector> = (-r..=r)
        .flat_map(|k1| (-r..=r).map(move |k2| WaveVector::new(k1, k2)))
        .filter(|k| !k.is_zero() && k.norm2() <= r * r)
        .collect();
    out.sort();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn wv(k1: i64, k2: i64) -> WaveVector {
        WaveVector::new(k1, k2)
    }

    fn random_point(rng: &mut ChaCha8Rng) -> [f64; 2] {
        [rng.random_range(-PI..PI), rng.random_range(-PI..PI)]
    }

    #[test]
    fn pairing_examples() {
        let a = pairing_coefficient(wv(0, 1), wv(1, 1)).unwrap();
        assert!((a - 1.0 / 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(pairing_coefficient(wv(1, 0), wv(2, 0)).unwrap(), 0.0);
        let a = pairing_coefficient(wv(1, 2), wv(0, 1)).unwrap();
        assert!((a + 1.0 / 5f64.sqrt()).abs() < 1e-15);
        assert!(pairing_coefficient(wv(0, 0), wv(1, 0)).is_err());
    }

    #[test]
    fn canonical_rep_examples() {
        assert_eq!(canonical_rep(wv(-1, -2), Parity::Cos).unwrap(), (wv(1, 2), -1.0));
        assert_eq!(canonical_rep(wv(1, 2), Parity::Sin).unwrap(), (wv(1, 2), 1.0));
        assert_eq!(canonical_rep(wv(0, -3), Parity::Sin).unwrap(), (wv(0, 3), 1.0));
        assert!(canonical_rep(WaveVector::ZERO, Parity::Cos).is_err());
    }

    #[test]
    fn eval_examples() {
        let psi = Mode::velocity(0, 1, Parity::Cos).unwrap();
        let v = eval_basis_field(psi, [0.0, 0.0]);
        assert!((v[0] - 1.0 / (2.0 * PI * PI).sqrt()).abs() < 1e-15);
        assert_eq!(v[1], 0.0);
        let sigma = Mode::magnetic(1, 0, Parity::Sin).unwrap();
        let v = eval_basis_field(sigma, [0.0, 0.0]);
        assert_eq!(v, [0.0, 0.0]);
    }

    #[test]
    fn parity_identities_hold_pointwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for k in punctured_ball(4) {
            for _ in 0..100 {
                let x = random_point(&mut rng);
                let (a, b) = (eval_unnormalized(k, Parity::Cos, x), eval_unnormalized(-k, Parity::Cos, x));
                assert!((a[0] + b[0]).abs() < 1e-12 && (a[1] + b[1]).abs() < 1e-12);
                let (a, b) = (eval_unnormalized(k, Parity::Sin, x), eval_unnormalized(-k, Parity::Sin, x));
                assert!((a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
                for parity in Parity::BOTH {
                    let (kc, s) = canonical_rep(k, parity).unwrap();
                    let a = eval_unnormalized(k, parity, x);
                    let b = eval_unnormalized(kc, parity, x);
                    assert!((a[0] - s * b[0]).abs() < 1e-12 && (a[1] - s * b[1]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn basis_is_divergence_free() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for k in canonical_ball(5) {
            for parity in Parity::BOTH {
                let mode = Mode::new(Slot::Velocity, k, parity).unwrap();
                for _ in 0..20 {
                    assert!(basis_divergence(mode, random_point(&mut rng)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = 1e-6;
        for k in [wv(1, 2), wv(-3, 1), wv(0, 2)] {
            for parity in Parity::BOTH {
                let x = random_point(&mut rng);
                let g = gradient_unnormalized(k, parity, x);
                for j in 0..2 {
                    let mut xp = x;
                    let mut xm = x;
                    xp[j] += h;
                    xm[j] -= h;
                    let fp = eval_unnormalized(k, parity, xp);
                    let fm = eval_unnormalized(k, parity, xm);
                    for i in 0..2 {
                        assert!((g[i][j] - (fp[i] - fm[i]) / (2.0 * h)).abs() < 1e-7);
                    }
                }
            }
        }
    }

    #[test]
    fn projection_examples() {
        let m = 32;
        let m11 = Mode::velocity(1, 1, Parity::Cos).unwrap();
        let m12 = Mode::velocity(1, 2, Parity::Cos).unwrap();
        let f = GridField::sample(m, |x| eval_basis_field(m11, x));
        assert!((project_onto_mode(&f, m11).unwrap() - 1.0).abs() < 1e-12);
        assert!(project_onto_mode(&f, m12).unwrap().abs() < 1e-12);

        let m21s = Mode::velocity(2, 1, Parity::Sin).unwrap();
        let m10c = Mode::velocity(1, 0, Parity::Cos).unwrap();
        let g = GridField::sample(m, |x| {
            let a = eval_basis_field(m21s, x);
            let b = eval_basis_field(m10c, x);
            [3.0 * a[0] - 2.0 * b[0], 3.0 * a[1] - 2.0 * b[1]]
        });
        assert!((project_onto_mode(&g, m21s).unwrap() - 3.0).abs() < 1e-12);
        assert!((project_onto_mode(&g, m10c).unwrap() + 2.0).abs() < 1e-12);
    }

    #[test]
    fn projection_rejects_under_resolved_grid() {
        let mode = Mode::velocity(3, 1, Parity::Cos).unwrap();
        let f = GridField::sample(8, |x| eval_basis_field(mode, x));
        assert!(matches!(project_onto_mode(&f, mode), Err(Error::Precondition(_))));
        let f = GridField::sample(13, |x| eval_basis_field(mode, x));
        assert!(project_onto_mode(&f, mode).is_err());
    }

    #[test]
    fn ball_sizes() {
        // 28 nonzero lattice points with |k| ≤ 3, half of them canonical.
        assert_eq!(punctured_ball(3).len(), 28);
        assert_eq!(canonical_ball(3).len(), 14);
        assert!(canonical_ball(3).iter().all(|k| k.is_canonical()));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn pairing_is_antisymmetric(a in -6i64..=6, b in -6i64..=6, c in -6i64..=6, d in -6i64..=6) {
                let k = wv(a, b);
                let l = wv(c, d);
                prop_assume!(!k.is_zero() && !l.is_zero());
                let p = pairing_coefficient(k, l).unwrap();
                let q = pairing_coefficient(l, k).unwrap();
                prop_assert!((p + q).abs() < 1e-15);
                prop_assert!(p.abs() <= 1.0 + 1e-15);
            }

            #[test]
            fn projection_recovers_mode_combinations(coeffs in proptest::collection::vec(-3.0f64..3.0, 8)) {
                let modes: Vec<Mode> = canonical_ball(2)
                    .into_iter()
                    .flat_map(|k| Parity::BOTH.map(|p| Mode::new(Slot::Velocity, k, p).unwrap()))
                    .take(coeffs.len())
                    .collect();
                let field = GridField::sample(16, |x| {
                    let mut acc = [0.0; 2];
                    for (mode, c) in modes.iter().zip(&coeffs) {
                        let v = eval_basis_field(*mode, x);
                        acc[0] += c * v[0];
                        acc[1] += c * v[1];
                    }
                    acc
                });
                for (mode, c) in modes.iter().zip(&coeffs) {
                    prop_assert!((project_onto_mode(&field, *mode).unwrap() - c).abs() < 1e-12);
                }
            }
        }
    }
}
