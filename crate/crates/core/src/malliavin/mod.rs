//! Linearizations of the discrete flow along a frozen path and the
//! Malliavin matrix built from them.
//!
//! One solver step is `U ↦ E U - Φ B(U, U) + noise`, so its derivative is
//! `P_n = E - Φ ∇B(U_n)`. The Jacobian multiplies by `P_n`, the second
//! variation adds the second derivative of the step, and the adjoint
//! multiplies by `P_nᵀ`. Duality between the Jacobian and the adjoint is
//! therefore exact up to roundoff.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::galerkin::{dot, norm2, rng_for, standard_normal, Model, TrajectoryRecord, Truncation};
use crate::lattice::{Slot, WaveVector};
use crate::reach::{ChainParity, ForcedSet, GenerationTable};

/// Every stored state of a stride-1 record, viewed as coefficients of the
/// linearized equations.
pub struct FrozenPath<'a> {
    model: &'a Model,
    states: &'a [Vec<f64>],
}

impl<'a> FrozenPath<'a> {
    pub fn new(model: &'a Model, rec: &'a TrajectoryRecord) -> Result<Self> {
        if rec.stride != 1 {
            return Err(Error::StridedPath { stride: rec.stride });
        }
        if rec.states.first().map(Vec::len) != Some(model.dim()) {
            return Err(Error::DimensionMismatch {
                expected: model.dim(),
                got: rec.states.first().map_or(0, Vec::len),
            });
        }
        Ok(FrozenPath { model, states: &rec.states })
    }

    pub fn model(&self) -> &Model {
        self.model
    }

    pub fn n_steps(&self) -> usize {
        self.states.len() - 1
    }

    pub fn horizon(&self) -> f64 {
        self.n_steps() as f64 * self.model.dt()
    }

    /// Step index of a time on the solver grid.
    pub fn index_of(&self, t: f64) -> Result<usize> {
        let dt = self.model.dt();
        let n = (t / dt).round();
        if !(n >= 0.0) || (n * dt - t).abs() > 1e-9 * t.abs().max(1.0) || n as usize > self.n_steps() {
            return Err(Error::OffGrid { time: t });
        }
        Ok(n as usize)
    }

    fn interval(&self, s: f64, t: f64) -> Result<(usize, usize)> {
        let (a, b) = (self.index_of(s)?, self.index_of(t)?);
        if a > b {
            return Err(Error::Domain(format!("start time {s} exceeds end time {t}")));
        }
        Ok((a, b))
    }

    fn check(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.model.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.model.dim(),
                got: v.len(),
            });
        }
        Ok(())
    }

    /// `out = P_n ξ`.
    fn forward_step(&self, n: usize, xi: &[f64], out: &mut [f64]) {
        let m = self.model;
        out.fill(0.0);
        if m.params().nonlinearity_enabled {
            m.linearized_add(&self.states[n], xi, out);
        }
        for i in 0..xi.len() {
            out[i] = m.decay()[i] * xi[i] - m.phi()[i] * out[i];
        }
    }

    /// `out = P_nᵀ ρ`.
    fn backward_step(&self, n: usize, rho: &[f64], out: &mut [f64]) {
        let m = self.model;
        for i in 0..rho.len() {
            out[i] = m.decay()[i] * rho[i];
        }
        if m.params().nonlinearity_enabled {
            let scaled: Vec<f64> = rho.iter().zip(m.phi()).map(|(r, p)| r * p).collect();
            let mut lt = vec![0.0; rho.len()];
            m.linearized_transpose_add(&self.states[n], &scaled, &mut lt);
            for i in 0..rho.len() {
                out[i] -= lt[i];
            }
        }
    }
}

/// `J_{s,t} ξ`.
pub fn jacobian_apply(path: &FrozenPath, xi: &[f64], s: f64, t: f64) -> Result<Vec<f64>> {
    path.check(xi)?;
    let (a, b) = path.interval(s, t)?;
    let mut cur = xi.to_vec();
    let mut next = vec![0.0; xi.len()];
    for n in a..b {
        path.forward_step(n, &cur, &mut next);
        std::mem::swap(&mut cur, &mut next);
    }
    Ok(cur)
}

/// `J^{(2)}_{s,t}(ξ, ξ')`: second derivative of the flow, started at zero.
pub fn second_variation_apply(path: &FrozenPath, xi: &[f64], xi2: &[f64], s: f64, t: f64) -> Result<Vec<f64>> {
    path.check(xi)?;
    path.check(xi2)?;
    let (a, b) = path.interval(s, t)?;
    let m = path.model;
    let dim = xi.len();
    let (mut j1, mut j2) = (xi.to_vec(), xi2.to_vec());
    let mut rho = vec![0.0; dim];
    let mut next = vec![0.0; dim];
    for n in a..b {
        if m.params().nonlinearity_enabled {
            let mut src = vec![0.0; dim];
            m.linearized_add(&path.states[n], &rho, &mut src);
            let t = m.tensor();
            t.apply_add(&j1, &j2, &mut src);
            t.apply_add(&j2, &j1, &mut src);
            for i in 0..dim {
                next[i] = m.decay()[i] * rho[i] - m.phi()[i] * src[i];
            }
            std::mem::swap(&mut rho, &mut next);
        } else {
            for i in 0..dim {
                rho[i] *= m.decay()[i];
            }
        }
        path.forward_step(n, &j1, &mut next);
        std::mem::swap(&mut j1, &mut next);
        path.forward_step(n, &j2, &mut next);
        std::mem::swap(&mut j2, &mut next);
    }
    Ok(rho)
}

/// `K_{r,t} φ`, the transpose of `J_{r,t}`.
pub fn adjoint_apply(path: &FrozenPath, phi: &[f64], r: f64, t: f64) -> Result<Vec<f64>> {
    path.check(phi)?;
    let (a, b) = path.interval(r, t)?;
    let mut cur = phi.to_vec();
    let mut next = vec![0.0; phi.len()];
    for n in (a..b).rev() {
        path.backward_step(n, &cur, &mut next);
        std::mem::swap(&mut cur, &mut next);
    }
    Ok(cur)
}

/// Time quadrature for `∫₀ᵀ ⟨σ, K_{r,T} φ⟩² dr`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quadrature {
    /// The sum matching the discrete noise: step `n` injects
    /// `α c ΔW_n σ`, which reaches time `T` through `J_{n+1,N}`.
    #[default]
    StepConsistent,
    /// Trapezoid rule on the nodes `r_n = n dt`.
    Trapezoid,
}

/// `⟨σ_f, K_{n,N} φ⟩` for every forced direction `f` and `n = 0..=N`.
pub fn forced_profile(path: &FrozenPath, phi: &[f64]) -> Result<Vec<Vec<f64>>> {
    path.check(phi)?;
    let forced = path.model.forced();
    let n_steps = path.n_steps();
    let project = |rho: &[f64]| -> Vec<f64> {
        forced
            .iter()
            .map(|f| rho[f.index] * f.amplitude.signum())
            .collect()
    };
    let mut rows = vec![Vec::new(); n_steps + 1];
    let mut cur = phi.to_vec();
    let mut next = vec![0.0; phi.len()];
    rows[n_steps] = project(&cur);
    for n in (0..n_steps).rev() {
        path.backward_step(n, &cur, &mut next);
        std::mem::swap(&mut cur, &mut next);
        rows[n] = project(&cur);
    }
    Ok(rows)
}

/// Quadrature weights `w[n][f]` such that `⟨Mφ, φ⟩ = Σ w[n][f] g[n][f]²`.
fn weights(model: &Model, n_steps: usize, quad: Quadrature) -> Vec<Vec<f64>> {
    let dt = model.dt();
    let forced = model.forced();
    (0..=n_steps)
        .map(|n| {
            forced
                .iter()
                .map(|f| {
                    let a2 = f.amplitude * f.amplitude;
                    match quad {
                        Quadrature::StepConsistent if n == 0 => 0.0,
                        Quadrature::StepConsistent => a2 * dt * f.convolution_scale * f.convolution_scale,
                        Quadrature::Trapezoid if n == 0 || n == n_steps => 0.5 * a2 * dt,
                        Quadrature::Trapezoid => a2 * dt,
                    }
                })
                .collect()
        })
        .collect()
}

/// `⟨M_{0,T} φ, φ⟩ = Σ_f α_f² ∫₀ᵀ ⟨σ_f, K_{r,T} φ⟩² dr`.
pub fn malliavin_quadratic_form(path: &FrozenPath, phi: &[f64], quad: Quadrature) -> Result<f64> {
    let g = forced_profile(path, phi)?;
    let w = weights(path.model, path.n_steps(), quad);
    Ok(g.iter()
        .zip(&w)
        .map(|(gn, wn)| gn.iter().zip(wn).map(|(x, c)| c * x * x).sum::<f64>())
        .sum())
}

/// Gram matrix of the Malliavin form over a set of state coordinates.
#[derive(Clone, Debug)]
pub struct MalliavinMatrix {
    pub gram: DMatrix<f64>,
    /// State indices of the basis vectors, in matrix order.
    pub basis: Vec<usize>,
    pub horizon: f64,
    pub steps: usize,
    pub quadrature: Quadrature,
}

impl MalliavinMatrix {
    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn asymmetry(&self) -> f64 {
        (&self.gram - self.gram.transpose()).amax()
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = SymmetricEigen::new(self.gram.clone()).eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    pub fn trace(&self) -> f64 {
        self.gram.trace()
    }
}

/// Assemble `M_{0,T}` on the given state coordinates with one backward
/// sweep per basis vector.
pub fn assemble_malliavin(path: &FrozenPath, basis: &[usize], quad: Quadrature) -> Result<MalliavinMatrix> {
    let dim = path.model.dim();
    if let Some(&bad) = basis.iter().find(|&&i| i >= dim) {
        return Err(Error::DimensionMismatch { expected: dim, got: bad + 1 });
    }
    let profiles: Vec<Vec<Vec<f64>>> = basis
        .par_iter()
        .map(|&i| {
            let mut e = vec![0.0; dim];
            e[i] = 1.0;
            forced_profile(path, &e)
        })
        .collect::<Result<_>>()?;
    let w = weights(path.model, path.n_steps(), quad);
    let nb = basis.len();
    let mut gram = DMatrix::zeros(nb, nb);
    for a in 0..nb {
        for b in a..nb {
            let mut acc = 0.0;
            for (n, wn) in w.iter().enumerate() {
                for (f, c) in wn.iter().enumerate() {
                    acc += c * profiles[a][n][f] * profiles[b][n][f];
                }
            }
            gram[(a, b)] = acc;
            gram[(b, a)] = acc;
        }
    }
    Ok(MalliavinMatrix {
        gram,
        basis: basis.to_vec(),
        horizon: path.horizon(),
        steps: path.n_steps(),
        quadrature: quad,
    })
}

/// The cone `S_{α,N} = {φ : ‖P_N φ‖² ≥ α‖φ‖²}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConeSpec {
    pub alpha: f64,
    pub n: u32,
}

impl ConeSpec {
    pub fn new(alpha: f64, n: u32) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::Domain(format!("cone alpha {alpha} must lie in (0, 1]")));
        }
        if n == 0 {
            return Err(Error::Domain("cone level N must be positive".into()));
        }
        Ok(ConeSpec { alpha, n })
    }
}

/// Three views of `inf_{φ ∈ S_{α,N}} ⟨Gφ, φ⟩ / ‖φ‖²`.
#[derive(Clone, Debug, Serialize)]
pub struct ConeReport {
    /// Smallest eigenvalue of `G` restricted to `range(P_N)`.
    pub compressed_min_eig: f64,
    /// Smallest Rayleigh quotient over the evaluated cone points.
    pub sampled_inf: f64,
    /// `max_{μ ≥ 0} λ_min(G - μ(P_N - αI))`, a certified lower bound.
    pub dual_lower_bound: f64,
    pub dual_mu: f64,
    pub evaluated_points: usize,
}

fn rayleigh(g: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    (x.transpose() * g * x)[(0, 0)] / x.norm_squared()
}

fn min_eig(a: &DMatrix<f64>) -> (f64, DVector<f64>) {
    let eig = SymmetricEigen::new(a.clone());
    let (i, &v) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("nonempty matrix");
    (v, eig.eigenvectors.column(i).into_owned())
}

/// Bound on the eigensolver error for a symmetric matrix.
fn eig_error(a: &DMatrix<f64>) -> f64 {
    8.0 * a.nrows() as f64 * f64::EPSILON * a.norm()
}

/// Cone statistics for a Gram matrix; `low[i]` marks the coordinates in
/// `range(P_N)`.
pub fn cone_infimum(g: &DMatrix<f64>, low: &[bool], alpha: f64, samples: usize, seed: u64) -> Result<ConeReport> {
    let n = g.nrows();
    if g.ncols() != n || low.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: low.len() });
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::Domain(format!("cone alpha {alpha} must lie in (0, 1]")));
    }
    let p_idx: Vec<usize> = (0..n).filter(|&i| low[i]).collect();
    let q_idx: Vec<usize> = (0..n).filter(|&i| !low[i]).collect();
    if p_idx.is_empty() {
        return Err(Error::Domain("P_N selects no coordinates".into()));
    }

    let compressed = g.select_rows(&p_idx).select_columns(&p_idx);
    let (compressed_min_eig, comp_vec) = min_eig(&compressed);

    // Weak duality: for φ in the cone, φᵀ(P - αI)φ ≥ 0, so every μ ≥ 0
    // gives λ_min(G - μ(P - αI)) ≤ φᵀGφ / ‖φ‖². The function is concave.
    let shift = DMatrix::from_fn(n, n, |i, j| if i == j { (if low[i] { 1.0 } else { 0.0 }) - alpha } else { 0.0 });
    let dual = |mu: f64| {
        let a = g - &shift * mu;
        let (v, _) = min_eig(&a);
        v - eig_error(&a)
    };
    let gnorm = g.norm().max(f64::MIN_POSITIVE);
    let mu_max = if alpha < 1.0 {
        2.0 * gnorm / (1.0 - alpha)
    } else if q_idx.is_empty() {
        0.0
    } else {
        1e6 * gnorm
    };
    let (mut best_mu, mut best) = (0.0, dual(0.0));
    if mu_max > 0.0 {
        let grid = 40;
        let mut bracket = (0.0, mu_max);
        for s in 1..=grid {
            let mu = mu_max * s as f64 / grid as f64;
            let v = dual(mu);
            if v > best {
                best = v;
                best_mu = mu;
                bracket = (mu_max * (s - 1) as f64 / grid as f64, (mu_max * (s + 1) as f64 / grid as f64).min(mu_max));
            }
        }
        if best_mu == 0.0 {
            bracket = (0.0, mu_max / grid as f64);
        }
        let phi = 0.5 * (5f64.sqrt() - 1.0);
        let (mut lo, mut hi) = bracket;
        let mut x1 = hi - phi * (hi - lo);
        let mut x2 = lo + phi * (hi - lo);
        let (mut f1, mut f2) = (dual(x1), dual(x2));
        for _ in 0..80 {
            if f1 < f2 {
                lo = x1;
                x1 = x2;
                f1 = f2;
                x2 = lo + phi * (hi - lo);
                f2 = dual(x2);
            } else {
                hi = x2;
                x2 = x1;
                f2 = f1;
                x1 = hi - phi * (hi - lo);
                f1 = dual(x1);
            }
        }
        for (mu, v) in [(x1, f1), (x2, f2)] {
            if v > best {
                best = v;
                best_mu = mu;
            }
        }
    }

    // Candidate cone points.
    let in_cone = |x: &DVector<f64>| {
        let p: f64 = p_idx.iter().map(|&i| x[i] * x[i]).sum();
        p >= alpha * x.norm_squared() * (1.0 - 1e-12)
    };
    let boundary_mix = |x: &DVector<f64>| -> Option<DVector<f64>> {
        let mut p = DVector::zeros(n);
        let mut q = DVector::zeros(n);
        for i in 0..n {
            if low[i] {
                p[i] = x[i];
            } else {
                q[i] = x[i];
            }
        }
        let (pn, qn) = (p.norm(), q.norm());
        if pn == 0.0 {
            return None;
        }
        if qn == 0.0 {
            return Some(p / pn);
        }
        Some(p * (alpha.sqrt() / pn) + q * ((1.0 - alpha).sqrt() / qn))
    };
    let mut candidates: Vec<DVector<f64>> = Vec::new();
    let mut lifted = DVector::zeros(n);
    for (a, &i) in p_idx.iter().enumerate() {
        lifted[i] = comp_vec[a];
    }
    candidates.push(lifted.clone());
    // Boundary points pairing the compressed minimizer with the Q-block eigenvectors.
    if !q_idx.is_empty() {
        let q_eig = SymmetricEigen::new(g.select_rows(&q_idx).select_columns(&q_idx));
        for c in 0..q_idx.len() {
            for sign in [1.0, -1.0] {
                let mut x = &lifted * alpha.sqrt();
                for (a, &i) in q_idx.iter().enumerate() {
                    x[i] = sign * (1.0 - alpha).sqrt() * q_eig.eigenvectors[(a, c)];
                }
                candidates.push(x);
            }
        }
    }
    for mat in [g.clone(), g - &shift * best_mu] {
        let eig = SymmetricEigen::new(mat);
        for c in 0..n {
            let v = eig.eigenvectors.column(c).into_owned();
            if in_cone(&v) {
                candidates.push(v.clone());
            }
            if let Some(b) = boundary_mix(&v) {
                candidates.push(b);
            }
        }
    }
    let mut rng = rng_for(seed, 0);
    for _ in 0..samples {
        candidates.push(sample_cone(low, alpha, &mut rng));
    }
    let sampled_inf = candidates
        .iter()
        .filter(|x| x.norm_squared() > 0.0 && in_cone(x))
        .map(|x| rayleigh(g, x))
        .fold(f64::INFINITY, f64::min);

    Ok(ConeReport {
        compressed_min_eig,
        sampled_inf,
        dual_lower_bound: best,
        dual_mu: best_mu,
        evaluated_points: candidates.len(),
    })
}

/// Unit vector on the cone `‖Pφ‖² ≥ α‖φ‖²`, with `‖Pφ‖²` uniform on `[α, 1]`
/// and Gaussian directions inside each block.
pub fn sample_cone<R: Rng>(low: &[bool], alpha: f64, rng: &mut R) -> DVector<f64> {
    let n = low.len();
    let mut p = DVector::zeros(n);
    let mut q = DVector::zeros(n);
    for i in 0..n {
        let z = standard_normal(rng);
        if low[i] {
            p[i] = z;
        } else {
            q[i] = z;
        }
    }
    let t: f64 = if q.norm_squared() == 0.0 { 1.0 } else { rng.random_range(alpha..=1.0) };
    let pn = p.norm().max(f64::MIN_POSITIVE);
    let qn = q.norm().max(f64::MIN_POSITIVE);
    p * (t.sqrt() / pn) + q * ((1.0 - t).sqrt() / qn)
}

/// Cone statistics for a Malliavin matrix assembled on a truncation.
pub fn cone_infimum_for(
    matrix: &MalliavinMatrix,
    trunc: &Truncation,
    cone: ConeSpec,
    samples: usize,
    seed: u64,
) -> Result<ConeReport> {
    let r2 = (cone.n as i64).pow(2);
    let low: Vec<bool> = matrix.basis.iter().map(|&i| trunc.mode(i).k.norm2() <= r2).collect();
    cone_infimum(&matrix.gram, &low, cone.alpha, samples, seed)
}

/// Exact generations `0..=2N+1`: every element of generation `n` has
/// modulus at most `(n + 1)·max|ℓ|`, so that ball loses nothing.
pub fn unstable_generations(forced: &ForcedSet, n: u32) -> GenerationTable {
    let depth = 2 * n as usize + 1;
    let radius = forced.max_modulus() * (depth + 1) as f64;
    GenerationTable::build(forced, radius, depth)
}

/// Whether even generations `≤ 2N` and odd generations `≤ 2N + 1` both
/// contain every `0 < |k| ≤ N`.
pub fn generations_cover(table: &GenerationTable, n: u32) -> bool {
    let depth = 2 * n as usize + 1;
    let even = table.union(ChainParity::Even, depth - 1);
    let odd = table.union(ChainParity::Odd, depth);
    crate::lattice::punctured_ball(n)
        .into_iter()
        .all(|k| even.contains(&k) && odd.contains(&k))
}

/// `⟨Q_N φ, φ⟩ = Σ_{k ∈ even} Σ_m ⟨φ, σ_k^m⟩² + Σ_{k ∈ odd} Σ_m ⟨φ, ψ_k^m⟩²`
/// over the distinct wavevectors of the even generations `≤ 2N` and the
/// odd generations `≤ 2N + 1` inside the truncation.
pub fn unstable_quadratic_form(phi: &[f64], trunc: &Truncation, table: &GenerationTable, n: u32) -> Result<f64> {
    if phi.len() != trunc.dim() {
        return Err(Error::DimensionMismatch { expected: trunc.dim(), got: phi.len() });
    }
    let depth = 2 * n as usize + 1;
    let canon = |set: std::collections::BTreeSet<WaveVector>| -> std::collections::BTreeSet<WaveVector> {
        set.into_iter().map(|k| if k.is_canonical() { k } else { -k }).collect()
    };
    let even = canon(table.union(ChainParity::Even, depth - 1));
    let odd = canon(table.union(ChainParity::Odd, depth));
    let mut acc = 0.0;
    for (set, slot) in [(even, Slot::Magnetic), (odd, Slot::Velocity)] {
        for k in set {
            for parity in crate::lattice::Parity::BOTH {
                if let Some(i) = trunc.index(crate::lattice::Mode { slot, k, parity }) {
                    acc += phi[i] * phi[i];
                }
            }
        }
    }
    Ok(acc)
}

/// `‖P_N φ‖² / ‖φ‖²`.
pub fn low_mode_fraction(phi: &[f64], trunc: &Truncation, n: u32) -> f64 {
    let low: f64 = trunc.low_mode_indices(n).iter().map(|&i| phi[i] * phi[i]).sum();
    low / norm2(phi)
}

/// Relative duality defect `|⟨J ξ, φ⟩ - ⟨ξ, K φ⟩| / max(|⟨J ξ, φ⟩|, tiny)`.
pub fn duality_defect(path: &FrozenPath, xi: &[f64], phi: &[f64]) -> Result<f64> {
    let t = path.horizon();
    let jx = jacobian_apply(path, xi, 0.0, t)?;
    let kp = adjoint_apply(path, phi, 0.0, t)?;
    let (a, b) = (dot(&jx, phi), dot(xi, &kp));
    Ok((a - b).abs() / a.abs().max(1e-300))
}

#[cfg(test)]
mod tests;
