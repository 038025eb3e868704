use super::*;
use crate::galerkin::{
    brownian_increments, simulate, simulate_with_increments, EquationParams, NoiseEntry, NoiseSpec, NonlinearPath,
    RunOptions,
};
use crate::lattice::{Mode, Parity};

fn wv(k1: i64, k2: i64) -> WaveVector {
    WaveVector::new(k1, k2)
}

fn model(n_cut: u32, dt: f64, nonlinear: bool, noise: NoiseSpec) -> Model {
    let p = EquationParams {
        alpha: 1.5,
        beta: 1.0,
        n_cut,
        dt,
        nonlinearity_enabled: nonlinear,
    };
    Model::new(p, noise, NonlinearPath::Convolution).unwrap()
}

fn example_noise() -> NoiseSpec {
    NoiseSpec::both_parities([wv(0, 1), wv(1, 1), wv(1, 0), wv(1, 2)], 1.0).unwrap()
}

fn random_vec(dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng_for(seed, 99);
    (0..dim).map(|_| standard_normal(&mut rng)).collect()
}

fn record(m: &Model, u0: &[f64], horizon: f64, seed: u64) -> TrajectoryRecord {
    let opts = RunOptions { horizon, seed, stream: 0, stride: 1, store_increments: true };
    simulate(m, u0, opts).unwrap()
}

fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    num / norm2(b).sqrt().max(1e-300)
}

#[test]
fn jacobian_on_zero_path_is_heat_flow() {
    let m = model(3, 1e-2, true, NoiseSpec::none());
    let zero = vec![0.0; m.dim()];
    let rec = record(&m, &zero, 0.5, 0);
    let path = FrozenPath::new(&m, &rec).unwrap();
    let xi = random_vec(m.dim(), 1);
    let out = jacobian_apply(&path, &xi, 0.1, 0.5).unwrap();
    for i in 0..m.dim() {
        let expect = xi[i] * (-m.lambda()[i] * 0.4).exp();
        assert!((out[i] - expect).abs() < 1e-12 * xi[i].abs().max(1.0));
    }
    assert_eq!(jacobian_apply(&path, &xi, 0.3, 0.3).unwrap(), xi);
    let back = adjoint_apply(&path, &xi, 0.1, 0.5).unwrap();
    assert!(rel_diff(&back, &out) < 1e-14);
    assert_eq!(adjoint_apply(&path, &xi, 0.5, 0.5).unwrap(), xi);
}

#[test]
fn path_preconditions() {
    let m = model(2, 1e-2, true, NoiseSpec::none());
    let zero = vec![0.0; m.dim()];
    let opts = RunOptions { horizon: 0.1, seed: 0, stream: 0, stride: 2, store_increments: false };
    let rec = simulate(&m, &zero, opts).unwrap();
    assert!(matches!(FrozenPath::new(&m, &rec), Err(Error::StridedPath { stride: 2 })));
    let rec = record(&m, &zero, 0.1, 0);
    let path = FrozenPath::new(&m, &rec).unwrap();
    assert!(matches!(jacobian_apply(&path, &zero, 0.0, 0.015), Err(Error::OffGrid { .. })));
    assert!(jacobian_apply(&path, &zero, 0.05, 0.02).is_err());
    assert!(jacobian_apply(&path, &zero, 0.0, 0.2).is_err());
}

/// Shared setup for finite-difference checks: a forced nonlinear path.
fn fd_setup() -> (Model, Vec<f64>, Vec<Vec<f64>>) {
    let m = model(3, 1e-3, true, example_noise());
    let u0: Vec<f64> = random_vec(m.dim(), 5).iter().map(|c| 0.7 * c).collect();
    let inc = brownian_increments(11, 0, 300, m.noise().dimension(), m.dt());
    (m, u0, inc)
}

fn flow(m: &Model, u0: &[f64], inc: &[Vec<f64>]) -> Vec<f64> {
    simulate_with_increments(m, u0, inc, 1).unwrap().final_state().to_vec()
}

#[test]
fn jacobian_matches_finite_differences() {
    let (m, u0, inc) = fd_setup();
    let rec = simulate_with_increments(&m, &u0, &inc, 1).unwrap();
    let path = FrozenPath::new(&m, &rec).unwrap();
    let xi = random_vec(m.dim(), 6);
    let j = jacobian_apply(&path, &xi, 0.0, path.horizon()).unwrap();
    let base = flow(&m, &u0, &inc);
    let err = |eps: f64| {
        let shifted: Vec<f64> = u0.iter().zip(&xi).map(|(a, b)| a + eps * b).collect();
        let fd: Vec<f64> = flow(&m, &shifted, &inc).iter().zip(&base).map(|(a, b)| (a - b) / eps).collect();
        rel_diff(&fd, &j)
    };
    let (e3, e4) = (err(1e-3), err(1e-4));
    assert!(e3 > 1e-9, "nonlinearity must be visible: {e3}");
    let ratio = e3 / e4;
    assert!((ratio - 10.0).abs() < 2.0, "{e3} {e4} {ratio}");
}

#[test]
fn second_variation_properties() {
    let (m, u0, inc) = fd_setup();
    let rec = simulate_with_increments(&m, &u0, &inc, 1).unwrap();
    let path = FrozenPath::new(&m, &rec).unwrap();
    let t = path.horizon();
    let (xi, xi2) = (random_vec(m.dim(), 7), random_vec(m.dim(), 8));
    let a = second_variation_apply(&path, &xi, &xi2, 0.0, t).unwrap();
    let b = second_variation_apply(&path, &xi2, &xi, 0.0, t).unwrap();
    assert!(rel_diff(&a, &b) < 1e-10);

    let j0 = jacobian_apply(&path, &xi, 0.0, t).unwrap();
    let err = |eps: f64| {
        let shifted: Vec<f64> = u0.iter().zip(&xi2).map(|(a, b)| a + eps * b).collect();
        let rec2 = simulate_with_increments(&m, &shifted, &inc, 1).unwrap();
        let path2 = FrozenPath::new(&m, &rec2).unwrap();
        let j1 = jacobian_apply(&path2, &xi, 0.0, t).unwrap();
        let fd: Vec<f64> = j1.iter().zip(&j0).map(|(x, y)| (x - y) / eps).collect();
        rel_diff(&fd, &a)
    };
    let (e3, e4) = (err(1e-3), err(1e-4));
    assert!((e3 / e4 - 10.0).abs() < 2.0, "{e3} {e4}");

    let lin = model(3, 1e-3, false, example_noise());
    let rec = record(&lin, &u0, 0.1, 3);
    let path = FrozenPath::new(&lin, &rec).unwrap();
    let z = second_variation_apply(&path, &xi, &xi2, 0.0, 0.1).unwrap();
    assert!(z.iter().all(|&c| c == 0.0));
}

#[test]
fn adjoint_is_dual_to_jacobian() {
    let (m, u0, inc) = fd_setup();
    let rec = simulate_with_increments(&m, &u0, &inc, 1).unwrap();
    let path = FrozenPath::new(&m, &rec).unwrap();
    for seed in 0..4 {
        let d = duality_defect(&path, &random_vec(m.dim(), 20 + seed), &random_vec(m.dim(), 40 + seed)).unwrap();
        assert!(d < 1e-8, "{d}");
    }
}

#[test]
fn quadratic_form_closed_forms() {
    let noise = NoiseSpec::new(vec![NoiseEntry { k: wv(0, 1), m: Parity::Cos, amplitude: 1.7 }]).unwrap();
    let m = model(2, 1e-3, false, noise);
    let zero = vec![0.0; m.dim()];
    let rec = record(&m, &zero, 1.0, 4);
    let path = FrozenPath::new(&m, &rec).unwrap();
    let sigma = m.unit(Mode::magnetic(0, 1, Parity::Cos).unwrap()).unwrap();
    let q = malliavin_quadratic_form(&path, &sigma, Quadrature::StepConsistent).unwrap();
    let exact = 1.7f64.powi(2) * (1.0 - (-2.0f64).exp()) / 2.0;
    assert!((q / exact - 1.0).abs() < 1e-12, "{q} {exact}");
    let trap = malliavin_quadratic_form(&path, &sigma, Quadrature::Trapezoid).unwrap();
    assert!((trap / exact - 1.0).abs() < 1e-5);

    let psi = m.unit(Mode::velocity(0, 1, Parity::Cos).unwrap()).unwrap();
    assert_eq!(malliavin_quadratic_form(&path, &psi, Quadrature::StepConsistent).unwrap(), 0.0);
}

#[test]
fn linear_gram_is_diagonal_closed_form() {
    let noise = NoiseSpec::both_parities([wv(0, 1), wv(1, 1), wv(1, 2)], 0.8).unwrap();
    let mut m = model(3, 1e-3, false, noise);
    let p = EquationParams { beta: 1.4, ..m.params().clone() };
    m = Model::new(p, m.noise().clone(), NonlinearPath::Convolution).unwrap();
    let zero = vec![0.0; m.dim()];
    let rec = record(&m, &zero, 1.0, 4);
    let path = FrozenPath::new(&m, &rec).unwrap();
    let basis: Vec<usize> = (0..m.dim()).collect();
    let g = assemble_malliavin(&path, &basis, Quadrature::StepConsistent).unwrap();
    let forced: Vec<usize> = m.forced().iter().map(|f| f.index).collect();
    for i in 0..m.dim() {
        for j in 0..m.dim() {
            let v = g.gram[(i, j)];
            if i == j && forced.contains(&i) {
                let lam = m.lambda()[i];
                let exact = 0.64 * (1.0 - (-2.0 * lam).exp()) / (2.0 * lam);
                assert!((v / exact - 1.0).abs() < 1e-6);
            } else {
                assert!(v.abs() < 1e-10);
            }
        }
    }
}

#[test]
fn nonlinear_gram_smoke() {
    let m = model(3, 1e-3, true, example_noise());
    let zero = vec![0.0; m.dim()];
    let rec = record(&m, &zero, 1.0, 8);
    let path = FrozenPath::new(&m, &rec).unwrap();
    let basis: Vec<usize> = (0..m.dim()).collect();
    let g = assemble_malliavin(&path, &basis, Quadrature::StepConsistent).unwrap();
    assert!(g.gram.iter().all(|c| c.is_finite()));
    assert!(g.trace() > 0.0);
    assert!(g.asymmetry() <= 1e-12);
    let ev = g.eigenvalues();
    assert!(ev[0] >= -1e-10 * g.gram.norm());
    for i in [0, 17, 40] {
        let mut e = vec![0.0; m.dim()];
        e[i] = 1.0;
        let q = malliavin_quadratic_form(&path, &e, Quadrature::StepConsistent).unwrap();
        assert!((q - g.gram[(i, i)]).abs() <= 1e-12 * q.abs().max(1e-300) + 1e-300);
    }
}

#[test]
fn cone_examples() {
    let g = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0]));
    let r = cone_infimum(&g, &[true, true], 1.0, 100, 1).unwrap();
    assert!((r.compressed_min_eig - 2.0).abs() < 1e-12);
    assert!((r.sampled_inf - 2.0).abs() < 1e-12);
    assert!((r.dual_lower_bound - 2.0).abs() < 1e-12);

    let g = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0]));
    let r = cone_infimum(&g, &[true, false], 0.5, 500, 2).unwrap();
    assert!(r.sampled_inf >= 0.5 - 1e-12);
    assert!((r.sampled_inf - 0.5).abs() < 1e-9);
    assert!(r.dual_lower_bound <= r.sampled_inf);
    assert!((r.dual_lower_bound - 0.5).abs() < 1e-6);

    assert!(cone_infimum(&g, &[true], 0.5, 10, 0).is_err());
    assert!(cone_infimum(&g, &[true, false], 0.0, 10, 0).is_err());
}

#[test]
fn cone_bound_ordering_on_random_matrices() {
    for seed in 0..20 {
        let n = 6;
        let a = DMatrix::from_vec(n, n, random_vec(n * n, seed));
        let g = &a * a.transpose();
        let low: Vec<bool> = (0..n).map(|i| i < 2 + (seed as usize % 3)).collect();
        let r = cone_infimum(&g, &low, 0.3 + 0.03 * seed as f64, 200, seed).unwrap();
        assert!(r.dual_lower_bound <= r.sampled_inf);
        // Exact by the S-lemma, so the two should be close.
        assert!(r.sampled_inf - r.dual_lower_bound < 1e-6 * g.norm(), "{r:?}");
    }
}

#[test]
fn unstable_quadratic_form_examples() {
    let forced = ForcedSet::new([wv(0, 1), wv(1, 1), wv(1, 0), wv(1, 2)]).unwrap();
    let trunc = Truncation::new(3).unwrap();
    let table = unstable_generations(&forced, 1);
    assert!(generations_cover(&table, 1));
    let phi = {
        let mut v = vec![0.0; trunc.dim()];
        v[trunc.index(Mode::magnetic(1, 1, Parity::Sin).unwrap()).unwrap()] = 1.0;
        v
    };
    assert_eq!(unstable_quadratic_form(&phi, &trunc, &table, 1).unwrap(), 1.0);

    let lonely = ForcedSet::new([wv(1, 0)]).unwrap();
    let table = unstable_generations(&lonely, 1);
    assert!(!generations_cover(&table, 1));
    let mut phi = vec![0.0; trunc.dim()];
    phi[trunc.index(Mode::magnetic(0, 1, Parity::Cos).unwrap()).unwrap()] = 1.0;
    phi[trunc.index(Mode::velocity(2, 1, Parity::Cos).unwrap()).unwrap()] = 1.0;
    assert_eq!(unstable_quadratic_form(&phi, &trunc, &table, 1).unwrap(), 0.0);
}

#[test]
fn unstable_form_dominates_half_the_cone() {
    let forced = ForcedSet::new([wv(0, 1), wv(1, 1), wv(1, 0), wv(1, 2)]).unwrap();
    let trunc = Truncation::new(3).unwrap();
    for n in [1, 2] {
        let table = unstable_generations(&forced, n);
        assert!(generations_cover(&table, n));
        let r2 = (n as i64).pow(2);
        let low: Vec<bool> = (0..trunc.dim()).map(|i| trunc.mode(i).k.norm2() <= r2).collect();
        let mut rng = rng_for(17, n as u64);
        for alpha in [0.1, 0.5, 0.9] {
            for _ in 0..300 {
                let phi: Vec<f64> = sample_cone(&low, alpha, &mut rng).iter().copied().collect();
                assert!(low_mode_fraction(&phi, &trunc, n) >= alpha * (1.0 - 1e-12));
                let q = unstable_quadratic_form(&phi, &trunc, &table, n).unwrap();
                assert!(q >= 0.5 * alpha * norm2(&phi), "{q}");
            }
        }
    }
}
