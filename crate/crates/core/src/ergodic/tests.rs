use super::*;
use crate::galerkin::{simulate, EquationParams, NoiseEntry, NoiseSpec, NonlinearPath, RunOptions};
use crate::lattice::{Parity, WaveVector};

const AMP: f64 = 1.3;

fn forced_mode() -> Mode {
    Mode::magnetic(0, 1, Parity::Cos).unwrap()
}

/// Linear model with one forced magnetic mode, `λ = |ℓ|^{2β} = 1`.
fn ou_model(dt: f64, amp: f64) -> Model {
    let noise = NoiseSpec::new(vec![NoiseEntry { k: WaveVector::new(0, 1), m: Parity::Cos, amplitude: amp }]).unwrap();
    let p = EquationParams { alpha: 1.5, beta: 1.0, n_cut: 1, dt, nonlinearity_enabled: false };
    Model::new(p, noise, NonlinearPath::Convolution).unwrap()
}

fn run(m: &Model, u0: &[f64], horizon: f64, stride: usize, seed: u64) -> TrajectoryRecord {
    simulate(m, u0, RunOptions { horizon, seed, stream: 0, stride, store_increments: false }).unwrap()
}

#[test]
fn constant_observable_is_exact() {
    let m = ou_model(1e-2, AMP);
    let rec = run(&m, &vec![0.0; m.dim()], 20.0, 1, 1);
    let obs = Observable::Constant { value: 2.5 }.bind(m.truncation()).unwrap();
    let r = time_average(&rec, &obs, 1.0, DEFAULT_BATCHES).unwrap();
    assert_eq!(r.estimate, 2.5);
    assert_eq!(r.standard_error, 0.0);
    assert!(matches!(time_average(&rec, &obs, 20.0, 20), Err(Error::EmptyWindow)));
}

#[test]
fn ou_second_moment_and_window_consistency() {
    let m = ou_model(1e-2, AMP);
    let rec = run(&m, &vec![0.0; m.dim()], 2000.0, 10, 3);
    let obs = Observable::ModeSquare { mode: forced_mode() }.bind(m.truncation()).unwrap();
    let r = time_average(&rec, &obs, 10.0, DEFAULT_BATCHES).unwrap();
    let exact = AMP * AMP / 2.0;
    assert!((r.estimate / exact - 1.0).abs() < 0.1, "{r:?}");
    assert!(r.standard_error > 0.0);

    let a = time_average_window(&rec, &obs, 10.0, 1000.0, DEFAULT_BATCHES).unwrap();
    let b = time_average_window(&rec, &obs, 1000.0, 2000.0, DEFAULT_BATCHES).unwrap();
    let combined = (a.standard_error.powi(2) + b.standard_error.powi(2)).sqrt();
    assert!((a.estimate - b.estimate).abs() < 3.0 * combined, "{a:?} {b:?}");
}

#[test]
fn unforced_average_decays() {
    let p = EquationParams { alpha: 1.5, beta: 1.5, n_cut: 2, dt: 1e-2, nonlinearity_enabled: true };
    let m = Model::new(p, NoiseSpec::none(), NonlinearPath::Convolution).unwrap();
    let mut u0 = vec![0.0; m.dim()];
    let idx = m.truncation().index(forced_mode()).unwrap();
    u0[idx] = 2.0;
    u0[idx + 1] = -1.0;
    let rec = run(&m, &u0, 10.0, 1, 0);
    let obs = Observable::ModeCoefficient { mode: forced_mode() }.bind(m.truncation()).unwrap();
    let burn = 3.0;
    let r = time_average(&rec, &obs, burn, DEFAULT_BATCHES).unwrap();
    assert!(r.estimate.abs() <= (-burn).exp() * norm2(&u0).sqrt());
}

#[test]
fn ks_is_calibrated_on_normals() {
    for seed in 0..5 {
        let ks = ks_calibration(500, seed).unwrap();
        assert!(ks.p_value > 0.01, "{ks:?}");
    }
    let skewed: Vec<f64> = (0..500).map(|i| ((i as f64 + 0.5) / 500.0).powi(6)).collect();
    assert!(ks_normal(&skewed).unwrap().p_value < 1e-6);
    assert!(matches!(ks_normal(&[1.0; 10]), Err(Error::DegenerateVariance)));
}

/// `2 ∫₀^∞ cov(s) ds` for `X²` with `X` a stationary OU process of rate
/// `λ` and noise amplitude `a`: `cov(s) = 2 v² e^{-2λs}`, `v = a²/(2λ)`.
fn ou_square_long_run_variance(a: f64, lambda: f64) -> f64 {
    let v = a * a / (2.0 * lambda);
    let cov = |s: f64| 2.0 * v * v * (-2.0 * lambda * s).exp();
    // Integrate to 40 correlation times with composite Simpson.
    let (upper, n) = (40.0 / lambda, 40_000);
    let h = upper / n as f64;
    let mut acc = cov(0.0) + cov(upper);
    for i in 1..n {
        acc += if i % 2 == 1 { 4.0 } else { 2.0 } * cov(i as f64 * h);
    }
    2.0 * acc * h / 3.0
}

#[test]
fn long_run_variance_oracle_matches_closed_form() {
    let got = ou_square_long_run_variance(AMP, 1.0);
    assert!((got - AMP.powi(4) / 2.0).abs() < 1e-10);
}

#[test]
fn clt_variance_matches_ou_oracle() {
    let m = ou_model(1e-2, AMP);
    let obs = Observable::ModeSquare { mode: forced_mode() }.bind(m.truncation()).unwrap();
    let opts = CltOptions { horizon: 60.0, burn_in: 5.0, replicas: 400, seed: 9, pilot_horizon: 500.0 };
    let r = clt_sample(&m, &vec![0.0; m.dim()], &obs, opts).unwrap();
    let oracle = ou_square_long_run_variance(AMP, 1.0);
    assert!((r.sample_variance / oracle - 1.0).abs() < 0.25, "{} {}", r.sample_variance, oracle);
    assert_eq!(r.deviations.len(), 400);
    let short = CltOptions { replicas: 10, ..opts };
    assert!(clt_sample(&m, &vec![0.0; m.dim()], &obs, short).is_err());
}

#[test]
fn ou_mixing_rate_matches_lambda() {
    let m = ou_model(1e-2, AMP);
    let obs = Observable::ModeCoefficient { mode: forced_mode() }.bind(m.truncation()).unwrap();
    let idx = m.truncation().index(forced_mode()).unwrap();
    let mut ua = vec![0.0; m.dim()];
    ua[idx] = 4.0;
    let ub = vec![0.0; m.dim()];
    let opts = MixingOptions { horizon: 4.0, ensemble: 400, seed: 21, stride: 10 };
    let r = mixing_decay_estimate(&m, &obs, &ua, &ub, opts).unwrap();
    assert!(r.identifiable);
    let rate = r.rate.unwrap();
    assert!((rate - 1.0).abs() < 0.15, "{rate} {:?}", r.r_squared);
    assert!(mixing_decay_estimate(&m, &obs, &ub, &ub, opts).is_err());
}

#[test]
fn identical_starts_show_no_signal() {
    let m = ou_model(1e-2, AMP);
    let obs = Observable::ModeCoefficient { mode: forced_mode() }.bind(m.truncation()).unwrap();
    let u0 = vec![0.0; m.dim()];
    let opts = MixingOptions { horizon: 4.0, ensemble: 200, seed: 5, stride: 10 };
    let r = null_mixing(&m, &obs, &u0, opts).unwrap();
    assert_eq!(r.difference[0], 0.0);
    let within = r.difference.iter().zip(&r.standard_error).skip(1).filter(|(d, s)| **d <= 3.0 * **s).count();
    assert!(within as f64 >= 0.9 * (r.difference.len() - 1) as f64);
    assert!(!r.identifiable);
}

#[test]
fn mixing_is_independent_of_pool_size() {
    let m = ou_model(1e-2, AMP);
    let obs = Observable::BoundedLipschitz { mode: forced_mode() }.bind(m.truncation()).unwrap();
    let idx = m.truncation().index(forced_mode()).unwrap();
    let mut ua = vec![0.0; m.dim()];
    ua[idx] = 2.0;
    let ub = vec![0.0; m.dim()];
    let opts = MixingOptions { horizon: 1.0, ensemble: 64, seed: 2, stride: 5 };
    let with = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| mixing_decay_estimate(&m, &obs, &ua, &ub, opts).unwrap().difference)
    };
    assert_eq!(with(1), with(4));
}

#[test]
fn exp_moment_examples() {
    let p = EquationParams { alpha: 1.5, beta: 1.5, n_cut: 2, dt: 1e-2, nonlinearity_enabled: true };
    let m = Model::new(p, NoiseSpec::none(), NonlinearPath::Convolution).unwrap();
    let zero = vec![0.0; m.dim()];
    let rec = run(&m, &zero, 2.0, 1, 0);
    assert!(exp_moment_probe(&m, &rec, 0.3).unwrap().iter().all(|(_, l)| *l == 0.0));

    let u0: Vec<f64> = (0..m.dim()).map(|i| ((i * 7 % 5) as f64 - 2.0) * 0.3).collect();
    let rec = run(&m, &u0, 5.0, 1, 0);
    let series = exp_moment_probe(&m, &rec, 0.3).unwrap();
    for w in series.windows(2) {
        assert!(w[1].1 <= w[0].1 + 1e-12, "{w:?}");
    }
    assert!(exp_moment_probe(&m, &rec, 0.0).is_err());
}

#[test]
fn forced_moment_stays_bounded() {
    let noise = NoiseSpec::both_parities(
        [WaveVector::new(0, 1), WaveVector::new(1, 1), WaveVector::new(1, 0), WaveVector::new(1, 2)],
        1.0,
    )
    .unwrap();
    let p = EquationParams { alpha: 1.5, beta: 1.5, n_cut: 3, dt: 5e-3, nonlinearity_enabled: true };
    let m = Model::new(p, noise, NonlinearPath::Convolution).unwrap();
    let r = exp_moment_ensemble(&m, &vec![0.0; m.dim()], 0.01, 50.0, 16, 200, 4).unwrap();
    assert!(r.log_mean.iter().all(|l| l.is_finite() && *l < 5.0), "{:?}", r.log_mean);
    assert!(r.log_fitted_c.is_finite());
}

#[test]
fn rho_examples() {
    let m = ou_model(1e-2, AMP);
    let u1: Vec<f64> = (0..m.dim()).map(|i| i as f64 * 0.1).collect();
    assert_eq!(rho_upper_bound(&u1, &u1, 1.0, 1.0).unwrap(), 0.0);
    let zero = vec![0.0; m.dim()];
    let unit = m.unit(forced_mode()).unwrap();
    let v = rho_upper_bound(&zero, &unit, 1.0, 1.0).unwrap();
    assert!((v - 1.462_651_745_907_181_6).abs() < 1e-12, "{v}");
    let tiny = rho_upper_bound(&u1, &zero, 1e-14, 1.0).unwrap();
    assert!((tiny - norm2(&u1).sqrt()).abs() < 1e-12);
    assert!(rho_upper_bound(&u1, &zero, 1.0, 0.0).is_err());
}

mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn rho_dominates_distance_and_is_symmetric(
            a in proptest::collection::vec(-2.0f64..2.0, 6),
            b in proptest::collection::vec(-2.0f64..2.0, 6),
            eta in 0.01f64..0.5,
            r in 0.05f64..1.0,
        ) {
            let ab = rho_upper_bound(&a, &b, eta, r).unwrap();
            let ba = rho_upper_bound(&b, &a, eta, r).unwrap();
            let dist: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            prop_assert!(ab >= dist * (1.0 - 1e-12));
            prop_assert!((ab - ba).abs() <= 1e-10 * ab.max(1.0));
        }
    }
}
