//! Exact quadratic convolution for the Galerkin nonlinearity.
//!
//! For unit-normalized modes `ê_i`, `ê_j` the projected advection
//! `P Π (ê_i·∇ê_j)` is a short list of `(q, value)` pairs. The MHD
//! nonlinearity only ever combines these with slot-dependent signs:
//!
//! ```text
//! B(U, V)_u = Π[u·∇ṽ - b·∇b̃]
//! B(U, V)_b = Π[u·∇b̃ - b·∇ṽ]
//! ```

use rayon::prelude::*;

use super::Truncation;
use crate::bracket::{advect, leray_project};
use crate::lattice::{Slot, BASIS_SCALE};

#[derive(Clone, Copy, Debug)]
struct Entry {
    i: u32,
    j: u32,
    q: u32,
    val: f64,
}

/// Sparse table of `⟨P Π(ê_i·∇ê_j), ê_q⟩` over one slot's modes.
#[derive(Clone, Debug)]
pub struct BilinearTensor {
    half: usize,
    entries: Vec<Entry>,
}

impl BilinearTensor {
    pub fn new(trunc: &Truncation) -> Self {
        let half = trunc.slot_dim();
        let scale = 1.0 / (BASIS_SCALE * BASIS_SCALE);
        let entries = (0..half)
            .into_par_iter()
            .flat_map_iter(|i| {
                let (ki, mi) = trunc.slot_mode(i);
                (0..half).flat_map(move |j| {
                    let (kj, mj) = trunc.slot_mode(j);
                    let field = advect(ki, mi, kj, mj);
                    leray_project(&field, Slot::Velocity)
                        .iter()
                        .filter_map(|(mode, c)| {
                            trunc.slot_index(mode.k, mode.parity).map(|q| Entry {
                                i: i as u32,
                                j: j as u32,
                                q: q as u32,
                                val: c * scale,
                            })
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        BilinearTensor { half, entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `out += B(U, V)`.
    pub fn apply_add(&self, u: &[f64], v: &[f64], out: &mut [f64]) {
        let h = self.half;
        let (uu, ub) = u.split_at(h);
        let (vu, vb) = v.split_at(h);
        let (ou, ob) = out.split_at_mut(h);
        for e in &self.entries {
            let (i, j, q) = (e.i as usize, e.j as usize, e.q as usize);
            ou[q] += e.val * (uu[i] * vu[j] - ub[i] * vb[j]);
            ob[q] += e.val * (uu[i] * vb[j] - ub[i] * vu[j]);
        }
    }

    /// `out += ∇_V ⟨φ, B(U, V)⟩`, the transpose of `V ↦ B(U, V)`.
    pub fn transpose_second_add(&self, u: &[f64], phi: &[f64], out: &mut [f64]) {
        let h = self.half;
        let (uu, ub) = u.split_at(h);
        let (pu, pb) = phi.split_at(h);
        let (ou, ob) = out.split_at_mut(h);
        for e in &self.entries {
            let (i, j, q) = (e.i as usize, e.j as usize, e.q as usize);
            ou[j] += e.val * (pu[q] * uu[i] - pb[q] * ub[i]);
            ob[j] += e.val * (pb[q] * uu[i] - pu[q] * ub[i]);
        }
    }

    /// `out += ∇_U ⟨φ, B(U, V)⟩`, the transpose of `U ↦ B(U, V)`.
    pub fn transpose_first_add(&self, v: &[f64], phi: &[f64], out: &mut [f64]) {
        let h = self.half;
        let (vu, vb) = v.split_at(h);
        let (pu, pb) = phi.split_at(h);
        let (ou, ob) = out.split_at_mut(h);
        for e in &self.entries {
            let (i, j, q) = (e.i as usize, e.j as usize, e.q as usize);
            ou[i] += e.val * (pu[q] * vu[j] + pb[q] * vb[j]);
            ob[i] -= e.val * (pu[q] * vb[j] + pb[q] * vu[j]);
        }
    }
}
