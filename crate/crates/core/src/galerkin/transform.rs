//! Pseudo-spectral evaluation of the nonlinearity on a dealiased grid.
//!
//! Coefficients in the cos/sin basis map to complex amplitudes through
//! `ê_k^0 + i ê_k^1 ↔ d_k e^{ik·x} / s`, i.e. a canonical mode pair
//! `(c0, c1)` becomes `û(k) = d_k (c0 + i c1) / (2s)` with `û(-k)` its
//! conjugate. Products are formed pointwise and transformed back; keeping
//! only `|k| ≤ n_cut` is the Galerkin projection.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::Truncation;
use crate::error::{Error, Result};
use crate::lattice::BASIS_SCALE;

pub struct SpectralGrid {
    m: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    /// Flat grid offsets of `k` and `-k` for each canonical wavevector.
    slots: Vec<(usize, usize)>,
    /// Polarization `d_k` and `k` for each canonical wavevector.
    geometry: Vec<([f64; 2], [f64; 2])>,
}

/// Smallest alias-free grid for products of two fields truncated at `n_cut`.
pub fn min_resolution(n_cut: u32) -> usize {
    3 * n_cut as usize + 1
}

impl SpectralGrid {
    pub fn new(trunc: &Truncation, m: usize) -> Result<Self> {
        let need = min_resolution(trunc.n_cut());
        if m < need {
            return Err(Error::Precondition(format!(
                "transform grid {m} is too small to dealias n_cut = {}; need at least {need}",
                trunc.n_cut()
            )));
        }
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(m);
        let inverse = planner.plan_fft_inverse(m);
        let wrap = |a: i64| a.rem_euclid(m as i64) as usize;
        let slots = trunc
            .wavevectors()
            .iter()
            .map(|k| (wrap(k.k1) * m + wrap(k.k2), wrap(-k.k1) * m + wrap(-k.k2)))
            .collect();
        let geometry = trunc
            .wavevectors()
            .iter()
            .map(|k| (k.polarization(), [k.k1 as f64, k.k2 as f64]))
            .collect();
        Ok(SpectralGrid {
            m,
            forward,
            inverse,
            slots,
            geometry,
        })
    }

    pub fn resolution(&self) -> usize {
        self.m
    }

    fn transpose(&self, a: &mut [Complex64]) {
        let m = self.m;
        for r in 0..m {
            for c in r + 1..m {
                a.swap(r * m + c, c * m + r);
            }
        }
    }

    fn fft2(&self, fft: &Arc<dyn Fft<f64>>, a: &mut [Complex64], scratch: &mut [Complex64]) {
        fft.process_with_scratch(a, scratch);
        self.transpose(a);
        fft.process_with_scratch(a, scratch);
        self.transpose(a);
    }

    /// Scatter `coef · d_k[comp] · (c0 + i c1)/(2s)` and its conjugate.
    fn scatter(&self, coeffs: &[f64], out: &mut [Complex64], amp: impl Fn(usize) -> Complex64) {
        out.fill(Complex64::new(0.0, 0.0));
        for (idx, &(pos, neg)) in self.slots.iter().enumerate() {
            let z = Complex64::new(coeffs[2 * idx], coeffs[2 * idx + 1]) / (2.0 * BASIS_SCALE);
            let w = amp(idx) * z;
            out[pos] += w;
            out[neg] += w.conj();
        }
    }

    /// `out += B(U, V)` for full state vectors (velocity block first).
    pub fn apply_add(&self, u: &[f64], v: &[f64], out: &mut [f64]) {
        let m2 = self.m * self.m;
        let half = u.len() / 2;
        let (uu, ub) = u.split_at(half);
        let (vu, vb) = v.split_at(half);
        let zero = Complex64::new(0.0, 0.0);
        let i = Complex64::new(0.0, 1.0);
        let mut scratch = vec![zero; self.inverse.get_inplace_scratch_len().max(self.forward.get_inplace_scratch_len())];

        // Fields of U: u1, u2, b1, b2.
        let mut fields: Vec<Vec<Complex64>> = vec![vec![zero; m2]; 12];
        for (slot, coeffs) in [uu, ub].into_iter().enumerate() {
            for comp in 0..2 {
                let buf = &mut fields[2 * slot + comp];
                self.scatter(coeffs, buf, |idx| Complex64::new(self.geometry[idx].0[comp], 0.0));
            }
        }
        // Gradients of V: ∂_l ṽ_j at 4 + 2j + l, ∂_l b̃_j at 8 + 2j + l.
        for (slot, coeffs) in [vu, vb].into_iter().enumerate() {
            for comp in 0..2 {
                for dir in 0..2 {
                    let buf = &mut fields[4 + 4 * slot + 2 * comp + dir];
                    self.scatter(coeffs, buf, |idx| {
                        let (d, k) = self.geometry[idx];
                        i * d[comp] * k[dir]
                    });
                }
            }
        }
        for f in fields.iter_mut() {
            self.fft2(&self.inverse, f, &mut scratch);
        }

        let mut prods: Vec<Vec<Complex64>> = vec![vec![zero; m2]; 4];
        for p in 0..m2 {
            let u1 = fields[0][p].re;
            let u2 = fields[1][p].re;
            let b1 = fields[2][p].re;
            let b2 = fields[3][p].re;
            for comp in 0..2 {
                let gv = [fields[4 + 2 * comp][p].re, fields[5 + 2 * comp][p].re];
                let gb = [fields[8 + 2 * comp][p].re, fields[9 + 2 * comp][p].re];
                let u_gv = u1 * gv[0] + u2 * gv[1];
                let u_gb = u1 * gb[0] + u2 * gb[1];
                let b_gv = b1 * gv[0] + b2 * gv[1];
                let b_gb = b1 * gb[0] + b2 * gb[1];
                prods[comp][p] = Complex64::new(u_gv - b_gb, 0.0);
                prods[2 + comp][p] = Complex64::new(u_gb - b_gv, 0.0);
            }
        }
        for f in prods.iter_mut() {
            self.fft2(&self.forward, f, &mut scratch);
        }

        let norm = 2.0 * BASIS_SCALE / m2 as f64;
        let (ou, ob) = out.split_at_mut(half);
        for (slot, target) in [ou, ob].into_iter().enumerate() {
            for (idx, &(pos, _)) in self.slots.iter().enumerate() {
                let d = self.geometry[idx].0;
                let f = prods[2 * slot][pos] * d[0] + prods[2 * slot + 1][pos] * d[1];
                target[2 * idx] += norm * f.re;
                target[2 * idx + 1] += norm * f.im;
            }
        }
    }
}
