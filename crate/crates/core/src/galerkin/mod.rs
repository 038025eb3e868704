//! Galerkin truncation of the stochastic MHD system
//!
//! ```text
//! dU + A U dt + B(U, U) dt = Q_b dW,   U = (u, b)
//! ```
//!
//! on the modes `0 < |k| ≤ n_cut`, with fractional dissipation
//! `A = diag(|k|^{2α}, |k|^{2β})` and additive noise on finitely many
//! magnetic modes.
//!
//! State layout: velocity block first, then magnetic; inside a block the
//! canonical wavevectors are sorted by modulus and each contributes its
//! cosine then sine coefficient.

mod tensor;
mod transform;

use std::collections::HashMap;
use std::sync::OnceLock;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub use tensor::BilinearTensor;
pub use transform::{min_resolution, SpectralGrid};

use crate::error::{Error, Result};
use crate::lattice::{canonical_ball, canonical_rep, Mode, Parity, Slot, WaveVector};

/// The modes `0 < |k| ≤ n_cut` of both slots.
#[derive(Clone, Debug)]
pub struct Truncation {
    n_cut: u32,
    wavevectors: Vec<WaveVector>,
    lookup: HashMap<WaveVector, usize>,
}

impl Truncation {
    pub fn new(n_cut: u32) -> Result<Self> {
        if n_cut == 0 {
            return Err(Error::Domain("n_cut must be positive".into()));
        }
        let wavevectors = canonical_ball(n_cut);
        let lookup = wavevectors.iter().enumerate().map(|(i, &k)| (k, i)).collect();
        Ok(Truncation {
            n_cut,
            wavevectors,
            lookup,
        })
    }

    pub fn n_cut(&self) -> u32 {
        self.n_cut
    }

    pub fn wavevectors(&self) -> &[WaveVector] {
        &self.wavevectors
    }

    /// Coefficients per slot.
    pub fn slot_dim(&self) -> usize {
        2 * self.wavevectors.len()
    }

    pub fn dim(&self) -> usize {
        4 * self.wavevectors.len()
    }

    /// Position inside a slot block of the canonical `(k, parity)`.
    pub fn slot_index(&self, k: WaveVector, parity: Parity) -> Option<usize> {
        self.lookup.get(&k).map(|&i| 2 * i + parity.index())
    }

    pub fn slot_mode(&self, idx: usize) -> (WaveVector, Parity) {
        let parity = if idx % 2 == 0 { Parity::Cos } else { Parity::Sin };
        (self.wavevectors[idx / 2], parity)
    }

    pub fn index(&self, mode: Mode) -> Option<usize> {
        let offset = match mode.slot {
            Slot::Velocity => 0,
            Slot::Magnetic => self.slot_dim(),
        };
        self.slot_index(mode.k, mode.parity).map(|i| offset + i)
    }

    pub fn mode(&self, idx: usize) -> Mode {
        let half = self.slot_dim();
        let (slot, rel) = if idx < half {
            (Slot::Velocity, idx)
        } else {
            (Slot::Magnetic, idx - half)
        };
        let (k, parity) = self.slot_mode(rel);
        Mode { slot, k, parity }
    }

    pub fn modes(&self) -> impl Iterator<Item = Mode> + '_ {
        (0..self.dim()).map(|i| self.mode(i))
    }

    /// Indices of the modes with `|k| ≤ n` (the space `H_n`).
    pub fn low_mode_indices(&self, n: u32) -> Vec<usize> {
        let r2 = (n as i64) * (n as i64);
        (0..self.dim()).filter(|&i| self.mode(i).k.norm2() <= r2).collect()
    }
}

/// Coefficients of the equation and its discretization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquationParams {
    pub alpha: f64,
    pub beta: f64,
    pub n_cut: u32,
    pub dt: f64,
    pub nonlinearity_enabled: bool,
}

impl EquationParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) || !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::Domain("alpha and beta must be positive".into()));
        }
        if self.n_cut == 0 {
            return Err(Error::Domain("n_cut must be positive".into()));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Domain("dt must be positive".into()));
        }
        Ok(())
    }

    /// The standing assumption `α > 1, β > 1` of the well-posedness theory.
    pub fn in_standing_regime(&self) -> bool {
        self.alpha > 1.0 && self.beta > 1.0
    }
}

/// `|k|^{2α}` on the velocity slot, `|k|^{2β}` on the magnetic slot.
pub fn dissipation_multiplier(mode: Mode, params: &EquationParams) -> f64 {
    let exponent = match mode.slot {
        Slot::Velocity => params.alpha,
        Slot::Magnetic => params.beta,
    };
    (mode.k.norm2() as f64).powf(exponent)
}

/// One forced magnetic direction `α_k^m σ_k^m dW^{k,m}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseEntry {
    pub k: WaveVector,
    pub m: Parity,
    pub amplitude: f64,
}

/// The list of forced magnetic directions.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct NoiseSpec {
    entries: Vec<NoiseEntry>,
}

impl NoiseSpec {
    pub fn new(entries: Vec<NoiseEntry>) -> Result<Self> {
        let mut seen = std::collections::BTreeSet::new();
        for e in &entries {
            if e.k.is_zero() {
                return Err(Error::Domain("forced wavevector must be nonzero".into()));
            }
            if e.amplitude == 0.0 || !e.amplitude.is_finite() {
                return Err(Error::Domain(format!("amplitude of forced mode {} must be nonzero", e.k)));
            }
            let (canon, _) = canonical_rep(e.k, e.m)?;
            if !seen.insert((canon, e.m)) {
                return Err(Error::Domain(format!("forced mode {} (m = {}) listed twice", canon, e.m.index())));
            }
        }
        Ok(NoiseSpec { entries })
    }

    /// Every listed wavevector forced in both parities with one amplitude.
    pub fn both_parities(ks: impl IntoIterator<Item = WaveVector>, amplitude: f64) -> Result<Self> {
        Self::new(
            ks.into_iter()
                .flat_map(|k| Parity::BOTH.map(|m| NoiseEntry { k, m, amplitude }))
                .collect(),
        )
    }

    pub fn none() -> Self {
        NoiseSpec::default()
    }

    pub fn entries(&self) -> &[NoiseEntry] {
        &self.entries
    }

    /// Number of independent Brownian motions.
    pub fn dimension(&self) -> usize {
        self.entries.len()
    }

    /// `E_0 = Σ (α_k^m)²`.
    pub fn e0(&self) -> f64 {
        self.entries.iter().map(|e| e.amplitude * e.amplitude).sum()
    }

    pub fn wavevectors(&self) -> Vec<WaveVector> {
        self.entries.iter().map(|e| e.k).collect()
    }
}

/// How `B(U, V)` is evaluated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NonlinearPath {
    /// Sparse exact convolution over mode triples.
    #[default]
    Convolution,
    /// FFT to a dealiased grid, pointwise products, FFT back.
    Transform,
}

/// Noise entry resolved to a state index.
#[derive(Clone, Copy, Debug)]
pub struct ForcedIndex {
    /// State index of the canonical magnetic mode.
    pub index: usize,
    /// Amplitude including the canonicalization sign.
    pub amplitude: f64,
    /// `√((1 - e^{-2λdt}) / (2λdt))`: scales `dW` to the exact one-step
    /// stochastic convolution.
    pub convolution_scale: f64,
    pub lambda: f64,
}

/// A concrete truncated model: operators, multipliers, and noise layout.
pub struct Model {
    params: EquationParams,
    noise: NoiseSpec,
    trunc: Truncation,
    path: NonlinearPath,
    lambda: Vec<f64>,
    decay: Vec<f64>,
    phi: Vec<f64>,
    forced: Vec<ForcedIndex>,
    tensor: OnceLock<BilinearTensor>,
    grid: Option<SpectralGrid>,
}

impl Model {
    pub fn new(params: EquationParams, noise: NoiseSpec, path: NonlinearPath) -> Result<Self> {
        params.validate()?;
        let trunc = Truncation::new(params.n_cut)?;
        let lambda: Vec<f64> = trunc.modes().map(|m| dissipation_multiplier(m, &params)).collect();
        let decay: Vec<f64> = lambda.iter().map(|l| (-l * params.dt).exp()).collect();
        let phi: Vec<f64> = lambda.iter().map(|l| -(-l * params.dt).exp_m1() / l).collect();
        let forced = noise
            .entries()
            .iter()
            .map(|e| {
                let (k, sign) = canonical_rep(e.k, e.m)?;
                let index = trunc
                    .index(Mode { slot: Slot::Magnetic, k, parity: e.m })
                    .ok_or_else(|| {
                        Error::Domain(format!("forced wavevector {} lies outside |k| ≤ {}", e.k, params.n_cut))
                    })?;
                let lam = lambda[index];
                let x = 2.0 * lam * params.dt;
                Ok(ForcedIndex {
                    index,
                    amplitude: sign * e.amplitude,
                    convolution_scale: (-(-x).exp_m1() / x).sqrt(),
                    lambda: lam,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let grid = match path {
            NonlinearPath::Transform => Some(SpectralGrid::new(&trunc, min_resolution(params.n_cut))?),
            NonlinearPath::Convolution => None,
        };
        Ok(Model {
            params,
            noise,
            trunc,
            path,
            lambda,
            decay,
            phi,
            forced,
            tensor: OnceLock::new(),
            grid,
        })
    }

    pub fn params(&self) -> &EquationParams {
        &self.params
    }

    pub fn noise(&self) -> &NoiseSpec {
        &self.noise
    }

    pub fn truncation(&self) -> &Truncation {
        &self.trunc
    }

    pub fn path(&self) -> NonlinearPath {
        self.path
    }

    pub fn dim(&self) -> usize {
        self.trunc.dim()
    }

    pub fn dt(&self) -> f64 {
        self.params.dt
    }

    /// Dissipation multipliers per state index.
    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    /// `e^{-λ dt}` per state index.
    pub fn decay(&self) -> &[f64] {
        &self.decay
    }

    /// `(1 - e^{-λ dt}) / λ` per state index.
    pub fn phi(&self) -> &[f64] {
        &self.phi
    }

    pub fn forced(&self) -> &[ForcedIndex] {
        &self.forced
    }

    pub fn tensor(&self) -> &BilinearTensor {
        self.tensor.get_or_init(|| BilinearTensor::new(&self.trunc))
    }

    fn check_dim(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: v.len(),
            });
        }
        Ok(())
    }

    /// `B(U, V)` by the requested path.
    pub fn bilinear_with(&self, u: &[f64], v: &[f64], path: NonlinearPath) -> Result<Vec<f64>> {
        self.check_dim(u)?;
        self.check_dim(v)?;
        let mut out = vec![0.0; self.dim()];
        match path {
            NonlinearPath::Convolution => self.tensor().apply_add(u, v, &mut out),
            NonlinearPath::Transform => match &self.grid {
                Some(g) => g.apply_add(u, v, &mut out),
                None => SpectralGrid::new(&self.trunc, min_resolution(self.params.n_cut))?.apply_add(u, v, &mut out),
            },
        }
        Ok(out)
    }

    /// `B(U, V)` by the model's default path.
    pub fn bilinear(&self, u: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        self.bilinear_with(u, v, self.path)
    }

    fn nonlinear_add(&self, u: &[f64], out: &mut [f64]) {
        match (&self.grid, self.path) {
            (Some(g), NonlinearPath::Transform) => g.apply_add(u, u, out),
            _ => self.tensor().apply_add(u, u, out),
        }
    }

    /// `∇B(U)ξ = B(U, ξ) + B(ξ, U)`, always via the exact tensor.
    pub fn linearized_add(&self, u: &[f64], xi: &[f64], out: &mut [f64]) {
        let t = self.tensor();
        t.apply_add(u, xi, out);
        t.apply_add(xi, u, out);
    }

    /// `(∇B(U))ᵀ φ`, the exact transpose of [`Model::linearized_add`].
    pub fn linearized_transpose_add(&self, u: &[f64], phi: &[f64], out: &mut [f64]) {
        let t = self.tensor();
        t.transpose_second_add(u, phi, out);
        t.transpose_first_add(u, phi, out);
    }

    /// One exponential Euler step. `dw` holds the raw Brownian increments
    /// (variance `dt`), one per noise entry.
    pub fn step_into(&self, u: &[f64], dw: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        if self.params.nonlinearity_enabled {
            self.nonlinear_add(u, out);
        }
        for i in 0..u.len() {
            out[i] = self.decay[i] * u[i] - self.phi[i] * out[i];
        }
        for (f, w) in self.forced.iter().zip(dw) {
            out[f.index] += f.amplitude * f.convolution_scale * w;
        }
    }

    pub fn step(&self, u: &[f64], dw: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(u)?;
        if dw.len() != self.noise.dimension() {
            return Err(Error::DimensionMismatch {
                expected: self.noise.dimension(),
                got: dw.len(),
            });
        }
        let mut out = vec![0.0; u.len()];
        self.step_into(u, dw, &mut out);
        Ok(out)
    }

    /// `‖Λ^α u‖² + ‖Λ^β b‖²`.
    pub fn dissipation_norm(&self, u: &[f64]) -> f64 {
        u.iter().zip(&self.lambda).map(|(c, l)| l * c * c).sum()
    }

    /// Unit vector along a mode.
    pub fn unit(&self, mode: Mode) -> Result<Vec<f64>> {
        let idx = self
            .trunc
            .index(mode)
            .ok_or_else(|| Error::Domain(format!("mode {mode} lies outside the truncation")))?;
        let mut v = vec![0.0; self.dim()];
        v[idx] = 1.0;
        Ok(v)
    }

    /// Number of steps for a horizon, which must be a multiple of `dt`.
    pub fn steps_for(&self, horizon: f64) -> Result<usize> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::Domain("horizon must be positive".into()));
        }
        let n = (horizon / self.params.dt).round();
        if n < 1.0 || (n * self.params.dt - horizon).abs() > 1e-9 * horizon.max(1.0) {
            return Err(Error::OffGrid { time: horizon });
        }
        Ok(n as usize)
    }
}

/// Drift bracket `[F(U), σ] = Aσ + B(σ, U) + B(U, σ)` for a constant
/// direction `σ` given by its state index.
pub fn drift_bracket(model: &Model, index: usize, u: &[f64]) -> Result<Vec<f64>> {
    model.check_dim(u)?;
    let mut e = vec![0.0; model.dim()];
    e[index] = 1.0;
    let mut out = vec![0.0; model.dim()];
    model.linearized_add(u, &e, &mut out);
    out[index] += model.lambda[index];
    Ok(out)
}

/// Stored output of a run.
#[derive(Clone, Debug)]
pub struct TrajectoryRecord {
    pub dt: f64,
    pub stride: usize,
    pub n_steps: usize,
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// Raw increments `ΔW_n`, `n_steps × d`, when requested.
    pub increments: Option<Vec<Vec<f64>>>,
}

impl TrajectoryRecord {
    pub fn final_state(&self) -> &[f64] {
        self.states.last().expect("records always hold the initial state")
    }
}

/// Draw `n_steps × d` Brownian increments for `(seed, stream)`.
pub fn brownian_increments(seed: u64, stream: u64, n_steps: usize, d: usize, dt: f64) -> Vec<Vec<f64>> {
    let mut rng = rng_for(seed, stream);
    let sd = dt.sqrt();
    (0..n_steps)
        .map(|_| (0..d).map(|_| sd * standard_normal(&mut rng)).collect())
        .collect()
}

pub fn standard_normal<R: rand::Rng + ?Sized>(rng: &mut R) -> f64 {
    <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
}

/// Per-trajectory generator: a ChaCha stream selected by the trajectory index.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Options for [`simulate`].
#[derive(Clone, Copy, Debug)]
pub struct RunOptions {
    pub horizon: f64,
    pub seed: u64,
    pub stream: u64,
    pub stride: usize,
    pub store_increments: bool,
}

/// Integrate from `u0` over `[0, horizon]` with fresh noise.
pub fn simulate(model: &Model, u0: &[f64], opts: RunOptions) -> Result<TrajectoryRecord> {
    let n_steps = model.steps_for(opts.horizon)?;
    let mut rng = rng_for(opts.seed, opts.stream);
    let sd = model.dt().sqrt();
    let d = model.noise.dimension();
    let mut draw = move |buf: &mut Vec<f64>| {
        buf.clear();
        buf.extend((0..d).map(|_| sd * standard_normal(&mut rng)));
    };
    run(model, u0, n_steps, opts.stride, opts.store_increments, &mut draw)
}

/// Like [`simulate`] without storing anything: `visit(n, U_n)` is called
/// for every step `n = 0..=N`. Consumes the same noise stream.
pub fn simulate_visit(
    model: &Model,
    u0: &[f64],
    horizon: f64,
    seed: u64,
    stream: u64,
    mut visit: impl FnMut(usize, &[f64]),
) -> Result<()> {
    model.check_dim(u0)?;
    let n_steps = model.steps_for(horizon)?;
    let mut rng = rng_for(seed, stream);
    let sd = model.dt().sqrt();
    let d = model.noise.dimension();
    let mut u = u0.to_vec();
    let mut next = vec![0.0; u.len()];
    let mut dw = Vec::with_capacity(d);
    visit(0, &u);
    for n in 1..=n_steps {
        dw.clear();
        dw.extend((0..d).map(|_| sd * standard_normal(&mut rng)));
        model.step_into(&u, &dw, &mut next);
        std::mem::swap(&mut u, &mut next);
        if !u.iter().all(|c| c.is_finite()) {
            return Err(Error::IntegrationFailure { time: n as f64 * model.dt() });
        }
        visit(n, &u);
    }
    Ok(())
}

/// Integrate along given increments (one row per step).
pub fn simulate_with_increments(
    model: &Model,
    u0: &[f64],
    increments: &[Vec<f64>],
    stride: usize,
) -> Result<TrajectoryRecord> {
    let d = model.noise.dimension();
    if let Some(bad) = increments.iter().find(|w| w.len() != d) {
        return Err(Error::DimensionMismatch { expected: d, got: bad.len() });
    }
    let mut n = 0;
    let mut feed = |buf: &mut Vec<f64>| {
        buf.clear();
        buf.extend_from_slice(&increments[n]);
        n += 1;
    };
    run(model, u0, increments.len(), stride, true, &mut feed)
}

fn run(
    model: &Model,
    u0: &[f64],
    n_steps: usize,
    stride: usize,
    store_increments: bool,
    next_dw: &mut dyn FnMut(&mut Vec<f64>),
) -> Result<TrajectoryRecord> {
    model.check_dim(u0)?;
    if stride == 0 {
        return Err(Error::Domain("snapshot stride must be positive".into()));
    }
    let dt = model.dt();
    let mut times = vec![0.0];
    let mut states = vec![u0.to_vec()];
    let mut increments = store_increments.then(|| Vec::with_capacity(n_steps));
    let mut u = u0.to_vec();
    let mut next = vec![0.0; u.len()];
    let mut dw = Vec::with_capacity(model.noise.dimension());
    for n in 1..=n_steps {
        next_dw(&mut dw);
        model.step_into(&u, &dw, &mut next);
        std::mem::swap(&mut u, &mut next);
        if !u.iter().all(|c| c.is_finite()) {
            return Err(Error::IntegrationFailure { time: n as f64 * dt });
        }
        if let Some(inc) = increments.as_mut() {
            inc.push(dw.clone());
        }
        if n % stride == 0 || n == n_steps {
            times.push(n as f64 * dt);
            states.push(u.clone());
        }
    }
    Ok(TrajectoryRecord {
        dt,
        stride,
        n_steps,
        times,
        states,
        increments,
    })
}

pub fn norm2(u: &[f64]) -> f64 {
    u.iter().map(|c| c * c).sum()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Per-step residual of the discrete energy identity
///
/// ```text
/// ‖U_{n+1}‖² - ‖U_n‖² + 2dt(‖Λ^α u_n‖² + ‖Λ^β b_n‖²) - E_0 dt - 2 Σ α_f ⟨b_n, σ_f⟩ ΔW_f
/// ```
pub fn energy_balance_residual(model: &Model, rec: &TrajectoryRecord) -> Result<Vec<f64>> {
    let inc = rec.increments.as_ref().ok_or(Error::MissingIncrements)?;
    if rec.stride != 1 {
        return Err(Error::StridedPath { stride: rec.stride });
    }
    let dt = rec.dt;
    let e0 = model.noise.e0();
    Ok(rec
        .states
        .windows(2)
        .zip(inc)
        .map(|(pair, dw)| {
            let (u, v) = (&pair[0], &pair[1]);
            let forcing: f64 = model
                .forced
                .iter()
                .zip(dw)
                .map(|(f, w)| f.amplitude * u[f.index] * w)
                .sum();
            norm2(v) - norm2(u) + 2.0 * dt * model.dissipation_norm(u) - e0 * dt - 2.0 * forcing
        })
        .collect())
}

/// Pair-sum fine increments onto the grid with twice the step.
pub fn coarsen_increments(fine: &[Vec<f64>]) -> Vec<Vec<f64>> {
    fine.chunks_exact(2)
        .map(|p| p[0].iter().zip(&p[1]).map(|(a, b)| a + b).collect())
        .collect()
}
