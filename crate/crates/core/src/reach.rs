//! Generation recursion over the integer lattice: which wavevectors become
//! reachable from the forced set through admissible sums.
//!
//! A step `k → k + ℓ` with `ℓ ∈ Z_0 ∪ -Z_0` is admissible when
//! `⟨k, ℓ⊥⟩ ≠ 0` and `|k|² ≠ |ℓ|²`. All predicates use exact integer
//! arithmetic.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{punctured_ball, WaveVector};

/// Forced wavevectors `Z_0` and their symmetrization `Z_0 ∪ -Z_0`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ForcedSet {
    z0: BTreeSet<WaveVector>,
    symmetrized: BTreeSet<WaveVector>,
}

impl ForcedSet {
    pub fn new(z0: impl IntoIterator<Item = WaveVector>) -> Result<Self> {
        let z0: BTreeSet<WaveVector> = z0.into_iter().collect();
        if z0.iter().any(|k| k.is_zero()) {
            return Err(Error::Domain("the zero wavevector cannot be forced".into()));
        }
        let symmetrized = z0.iter().flat_map(|&k| [k, -k]).collect();
        Ok(ForcedSet { z0, symmetrized })
    }

    pub fn z0(&self) -> &BTreeSet<WaveVector> {
        &self.z0
    }

    pub fn symmetrized(&self) -> &BTreeSet<WaveVector> {
        &self.symmetrized
    }

    /// Number of forced directions `d = 2|Z_0|`.
    pub fn dimension(&self) -> usize {
        2 * self.z0.len()
    }

    pub fn max_modulus(&self) -> f64 {
        self.z0.iter().map(|k| k.norm()).fold(0.0, f64::max)
    }
}

/// `⟨k, ℓ⊥⟩ ≠ 0` and `|k|² ≠ |ℓ|²`.
pub fn admissible(k: WaveVector, l: WaveVector) -> bool {
    k.cross(l) != 0 && k.norm2() != l.norm2()
}

/// `{k + ℓ : k ∈ prev, ℓ ∈ Z_0 ∪ -Z_0 admissible, k + ℓ ≠ 0}`.
pub fn next_generation(prev: &BTreeSet<WaveVector>, forced: &ForcedSet) -> BTreeSet<WaveVector> {
    prev.iter()
        .flat_map(|&k| forced.symmetrized.iter().map(move |&l| (k, l)))
        .filter(|&(k, l)| admissible(k, l) && !(k + l).is_zero())
        .map(|(k, l)| k + l)
        .collect()
}

fn within(v: WaveVector, radius: f64) -> bool {
    (v.norm2() as f64) <= radius * radius + 1e-9
}

/// Generations `Z_0, Z_1, …` restricted to a tracking ball, with one
/// recorded derivation for every element.
#[derive(Clone, Debug)]
pub struct GenerationTable {
    generations: Vec<BTreeSet<WaveVector>>,
    parents: Vec<BTreeMap<WaveVector, (WaveVector, WaveVector)>>,
    tracking_radius: f64,
}

impl GenerationTable {
    /// Generation 0 only.
    pub fn new(forced: &ForcedSet, tracking_radius: f64) -> Self {
        let first: BTreeSet<WaveVector> = forced
            .symmetrized
            .iter()
            .copied()
            .filter(|&v| within(v, tracking_radius))
            .collect();
        GenerationTable {
            generations: vec![first],
            parents: vec![BTreeMap::new()],
            tracking_radius,
        }
    }

    /// Build generations up to index `depth` (inclusive).
    pub fn build(forced: &ForcedSet, tracking_radius: f64, depth: usize) -> Self {
        let mut table = Self::new(forced, tracking_radius);
        for _ in 0..depth {
            table.advance(forced);
        }
        table
    }

    /// Append the next generation. Elements are kept only inside the
    /// tracking ball; the recorded parent is the smallest admissible pair.
    pub fn advance(&mut self, forced: &ForcedSet) {
        let prev = self.generations.last().expect("generation 0 always present");
        let mut next = BTreeSet::new();
        let mut parents = BTreeMap::new();
        for &k in prev {
            for &l in &forced.symmetrized {
                let v = k + l;
                if admissible(k, l) && !v.is_zero() && within(v, self.tracking_radius) {
                    next.insert(v);
                    parents.entry(v).or_insert((k, l));
                }
            }
        }
        self.generations.push(next);
        self.parents.push(parents);
    }

    pub fn generations(&self) -> &[BTreeSet<WaveVector>] {
        &self.generations
    }

    pub fn depth(&self) -> usize {
        self.generations.len() - 1
    }

    pub fn tracking_radius(&self) -> f64 {
        self.tracking_radius
    }

    /// Union of the generations with index `≤ max_index` and the given parity.
    pub fn union(&self, parity: ChainParity, max_index: usize) -> BTreeSet<WaveVector> {
        self.generations
            .iter()
            .enumerate()
            .filter(|(n, _)| *n <= max_index && parity.matches(*n))
            .flat_map(|(_, g)| g.iter().copied())
            .collect()
    }

    /// Walk recorded parents back from `target` in generation `n`.
    fn chain(&self, target: WaveVector, n: usize) -> Certificate {
        let mut steps = Vec::with_capacity(n);
        let mut v = target;
        for gen in (1..=n).rev() {
            let (k, l) = self.parents[gen][&v];
            steps.push(CertificateStep { k, l, sum: v });
            v = k;
        }
        steps.reverse();
        Certificate {
            target,
            start: v,
            steps,
            tracking_radius: self.tracking_radius,
        }
    }
}

/// Even-indexed or odd-indexed generations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChainParity {
    Even,
    Odd,
}

impl ChainParity {
    pub fn matches(self, n: usize) -> bool {
        match self {
            ChainParity::Even => n % 2 == 0,
            ChainParity::Odd => n % 2 == 1,
        }
    }
}

/// Why the generation loop stopped.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// Both unions cover the window.
    Saturated,
    /// A generation came out empty; all later ones are empty too.
    Exhausted,
    /// Generation `n` equals generation `n - 2`, so the unions are final.
    Periodic,
    /// The depth budget ran out.
    MaxDepth,
}

/// Window-bounded coverage of the even and odd generation unions.
#[derive(Clone, Debug, Serialize)]
pub struct HypothesisReport {
    pub radius: u32,
    pub max_depth: usize,
    pub tracking_radius: f64,
    pub even_covered: bool,
    pub odd_covered: bool,
    pub missing_even: Vec<WaveVector>,
    pub missing_odd: Vec<WaveVector>,
    pub depth_used: usize,
    pub stop_reason: StopReason,
    pub generation_sizes: Vec<usize>,
}

/// Default depth budget `4·radius`.
pub fn default_max_depth(radius: u32) -> usize {
    4 * radius as usize
}

/// Extra tracking margin outside the window:
/// `min(2·max|ℓ|·max_depth, 4·radius)` over `ℓ ∈ Z_0`.
pub fn tracking_slack(forced: &ForcedSet, radius: u32, max_depth: usize) -> f64 {
    (2.0 * forced.max_modulus() * max_depth as f64).min(4.0 * radius as f64)
}

/// Check whether every `0 < |k| ≤ radius` lies in the even union and in the
/// odd union of generations up to `max_depth`.
pub fn check_hypothesis(forced: &ForcedSet, radius: u32, max_depth: usize) -> Result<HypothesisReport> {
    if radius == 0 {
        return Err(Error::Precondition("radius must be at least 1".into()));
    }
    if max_depth == 0 {
        return Err(Error::Precondition("max_depth must be at least 1".into()));
    }
    let window: BTreeSet<WaveVector> = punctured_ball(radius).into_iter().collect();
    let tracking_radius = radius as f64 + tracking_slack(forced, radius, max_depth);
    let mut table = GenerationTable::new(forced, tracking_radius);

    let mut even: BTreeSet<WaveVector> = BTreeSet::new();
    let mut odd: BTreeSet<WaveVector> = BTreeSet::new();
    let absorb = |set: &mut BTreeSet<WaveVector>, gen: &BTreeSet<WaveVector>| {
        set.extend(gen.iter().filter(|v| window.contains(v)));
    };
    absorb(&mut even, &table.generations[0]);

    let mut stop_reason = StopReason::MaxDepth;
    for n in 1..=max_depth {
        if even.len() == window.len() && odd.len() == window.len() {
            stop_reason = StopReason::Saturated;
            break;
        }
        table.advance(forced);
        let gen = &table.generations[n];
        if n % 2 == 0 {
            absorb(&mut even, gen);
        } else {
            absorb(&mut odd, gen);
        }
        if gen.is_empty() {
            stop_reason = StopReason::Exhausted;
            break;
        }
        if n >= 2 && *gen == table.generations[n - 2] {
            stop_reason = StopReason::Periodic;
            break;
        }
    }
    if stop_reason == StopReason::MaxDepth && even.len() == window.len() && odd.len() == window.len() {
        stop_reason = StopReason::Saturated;
    }

    let missing_even: Vec<WaveVector> = window.difference(&even).copied().collect();
    let missing_odd: Vec<WaveVector> = window.difference(&odd).copied().collect();
    Ok(HypothesisReport {
        radius,
        max_depth,
        tracking_radius,
        even_covered: missing_even.is_empty(),
        odd_covered: missing_odd.is_empty(),
        missing_even,
        missing_odd,
        depth_used: table.depth(),
        stop_reason,
        generation_sizes: table.generations.iter().map(BTreeSet::len).collect(),
    })
}

/// One admissible step `k + ℓ = sum`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct CertificateStep {
    pub k: WaveVector,
    pub l: WaveVector,
    pub sum: WaveVector,
}

/// A derivation `start + ℓ_1 + … + ℓ_n = target` with admissible partial sums.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Certificate {
    pub target: WaveVector,
    pub start: WaveVector,
    pub steps: Vec<CertificateStep>,
    /// Partial sums were searched inside this ball only.
    pub tracking_radius: f64,
}

impl Certificate {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Replay the chain against the recursion predicates.
    pub fn verify(&self, forced: &ForcedSet) -> bool {
        if !forced.symmetrized.contains(&self.start) {
            return false;
        }
        let mut v = self.start;
        for s in &self.steps {
            if s.k != v || !forced.symmetrized.contains(&s.l) || !admissible(s.k, s.l) || s.k + s.l != s.sum {
                return false;
            }
            v = s.sum;
        }
        v == self.target
    }
}

/// Shortest derivation of `target` whose length has the requested parity,
/// searched up to `max_depth` generations. `None` means no such chain exists
/// with partial sums inside the tracking ball.
pub fn generation_certificate(
    forced: &ForcedSet,
    target: WaveVector,
    parity: ChainParity,
    max_depth: usize,
) -> Result<Option<Certificate>> {
    if target.is_zero() {
        return Err(Error::Domain("the zero wavevector has no certificate".into()));
    }
    let radius = target.norm().ceil().max(1.0) as u32;
    let tracking_radius = radius as f64 + tracking_slack(forced, radius, max_depth);
    let mut table = GenerationTable::new(forced, tracking_radius);
    for n in 0..=max_depth {
        if n > 0 {
            table.advance(forced);
        }
        if parity.matches(n) && table.generations[n].contains(&target) {
            return Ok(Some(table.chain(target, n)));
        }
        if table.generations[n].is_empty() {
            break;
        }
    }
    Ok(None)
}
