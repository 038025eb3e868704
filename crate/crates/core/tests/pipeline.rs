//! End-to-end checks across modules through the public API.

use hypomhd::bracket::{verify_sweep, Combo};
use hypomhd::galerkin::{simulate, EquationParams, Model, NoiseSpec, NonlinearPath, RunOptions};
use hypomhd::lattice::{Slot, WaveVector};
use hypomhd::malliavin::{
    assemble_malliavin, cone_infimum_for, generations_cover, unstable_generations, ConeSpec, FrozenPath, Quadrature,
};
use hypomhd::reach::{check_hypothesis, ForcedSet};

fn example_z0() -> [WaveVector; 4] {
    [WaveVector::new(0, 1), WaveVector::new(1, 1), WaveVector::new(1, 0), WaveVector::new(1, 2)]
}

#[test]
fn bracket_sweep_small_ball() {
    let reports = verify_sweep(2).unwrap();
    assert!(!reports.is_empty());
    assert!(reports.iter().all(|r| r.degeneracy.is_some() || (r.selection_ok && r.max_deviation < 1e-10)));
    let slots = reports.iter().filter(|r| r.slot == Slot::Magnetic && r.combo == Combo::Diff1100).count();
    assert!(slots > 0);
}

#[test]
fn covering_forcing_gives_positive_cone_infimum() {
    let forced = ForcedSet::new(example_z0()).unwrap();
    let report = check_hypothesis(&forced, 3, 12).unwrap();
    assert!(report.even_covered && report.odd_covered);
    assert!(generations_cover(&unstable_generations(&forced, 1), 1));

    let noise = NoiseSpec::both_parities(example_z0(), 1.0).unwrap();
    let p = EquationParams { alpha: 1.5, beta: 1.5, n_cut: 3, dt: 1e-3, nonlinearity_enabled: true };
    let model = Model::new(p, noise, NonlinearPath::Convolution).unwrap();
    let rec = simulate(
        &model,
        &vec![0.0; model.dim()],
        RunOptions { horizon: 1.0, seed: 0, stream: 0, stride: 1, store_increments: false },
    )
    .unwrap();
    let path = FrozenPath::new(&model, &rec).unwrap();
    let basis: Vec<usize> = (0..model.dim()).collect();
    let g = assemble_malliavin(&path, &basis, Quadrature::StepConsistent).unwrap();
    let cone = cone_infimum_for(&g, model.truncation(), ConeSpec::new(0.5, 1).unwrap(), 200, 1).unwrap();
    assert!(cone.sampled_inf > 1e-10, "{cone:?}");
    assert!(cone.dual_lower_bound <= cone.sampled_inf);
}

#[test]
fn collinear_forcing_leaves_unforced_directions() {
    let forced = ForcedSet::new([WaveVector::new(0, 1), WaveVector::new(0, 2)]).unwrap();
    let report = check_hypothesis(&forced, 3, 12).unwrap();
    assert!(!report.even_covered && !report.odd_covered);

    let noise = NoiseSpec::both_parities([WaveVector::new(0, 1), WaveVector::new(0, 2)], 1.0).unwrap();
    let p = EquationParams { alpha: 1.5, beta: 1.5, n_cut: 2, dt: 1e-3, nonlinearity_enabled: true };
    let model = Model::new(p, noise, NonlinearPath::Convolution).unwrap();
    let rec = simulate(
        &model,
        &vec![0.0; model.dim()],
        RunOptions { horizon: 0.5, seed: 1, stream: 0, stride: 1, store_increments: false },
    )
    .unwrap();
    let path = FrozenPath::new(&model, &rec).unwrap();
    let basis: Vec<usize> = (0..model.dim()).collect();
    let g = assemble_malliavin(&path, &basis, Quadrature::StepConsistent).unwrap();
    // Shear forcing from rest never leaves its invariant subspace.
    let ev = g.eigenvalues();
    assert!(ev[0].abs() < 1e-10 * ev.last().unwrap());
}
