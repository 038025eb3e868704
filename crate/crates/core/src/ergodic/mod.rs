//! Empirical probes of long-time behaviour: time averages, CLT samples,
//! ensemble mixing decay, the exponential-moment statistic and an upper
//! bound on the weighted path metric.
//!
//! Mixing is measured through differences of ensemble expectations of
//! fixed observables, never through a Wasserstein distance.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::galerkin::{norm2, simulate_visit, Model, TrajectoryRecord, Truncation};
use crate::lattice::Mode;

pub const DEFAULT_BATCHES: usize = 20;

/// Real functions of a single state.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Observable {
    Constant { value: f64 },
    ModeCoefficient { mode: Mode },
    /// Square of a mode coefficient.
    ModeSquare { mode: Mode },
    /// `‖U‖²`.
    TotalEnergy,
    /// `tanh` of a mode coefficient.
    BoundedLipschitz { mode: Mode },
}

/// An observable bound to the index layout of a truncation.
#[derive(Clone, Copy, Debug)]
pub struct Evaluator {
    obs: Observable,
    index: usize,
}

impl Observable {
    pub fn bind(self, trunc: &Truncation) -> Result<Evaluator> {
        let index = match self {
            Observable::ModeCoefficient { mode }
            | Observable::ModeSquare { mode }
            | Observable::BoundedLipschitz { mode } => trunc
                .index(mode)
                .ok_or_else(|| Error::Domain(format!("observable mode {mode} lies outside the truncation")))?,
            _ => 0,
        };
        Ok(Evaluator { obs: self, index })
    }
}

impl Evaluator {
    pub fn observable(&self) -> Observable {
        self.obs
    }

    pub fn eval(&self, u: &[f64]) -> f64 {
        match self.obs {
            Observable::Constant { value } => value,
            Observable::ModeCoefficient { .. } => u[self.index],
            Observable::ModeSquare { .. } => u[self.index] * u[self.index],
            Observable::TotalEnergy => norm2(u),
            Observable::BoundedLipschitz { .. } => u[self.index].tanh(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ErgodicReport {
    pub estimate: f64,
    pub standard_error: f64,
    pub sample_count: usize,
    pub seed: Option<u64>,
}

/// Trapezoid average of equally spaced samples.
fn trapezoid_mean(v: &[f64]) -> f64 {
    match v.len() {
        0 => f64::NAN,
        1 => v[0],
        n => {
            let inner: f64 = v[1..n - 1].iter().sum();
            (inner + 0.5 * (v[0] + v[n - 1])) / (n - 1) as f64
        }
    }
}

/// Trapezoid mean with a batch-means standard error.
pub fn batch_means(values: &[f64], batches: usize) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::EmptyWindow);
    }
    let estimate = trapezoid_mean(values);
    let b = batches.max(2);
    if values.len() < 2 * b {
        return Ok((estimate, f64::NAN));
    }
    let size = values.len() / b;
    let means: Vec<f64> = (0..b).map(|i| values[i * size..(i + 1) * size].iter().sum::<f64>() / size as f64).collect();
    let lo = means.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = means.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        return Ok((estimate, 0.0));
    }
    let m = means.iter().sum::<f64>() / b as f64;
    let var = means.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (b - 1) as f64;
    Ok((estimate, (var / b as f64).sqrt()))
}

/// Time average over the stored snapshots with `t ≥ burn_in`.
pub fn time_average(rec: &TrajectoryRecord, obs: &Evaluator, burn_in: f64, batches: usize) -> Result<ErgodicReport> {
    let horizon = *rec.times.last().unwrap_or(&0.0);
    time_average_window(rec, obs, burn_in, horizon, batches)
}

/// Time average over the snapshots in `[from, to]`.
pub fn time_average_window(
    rec: &TrajectoryRecord,
    obs: &Evaluator,
    from: f64,
    to: f64,
    batches: usize,
) -> Result<ErgodicReport> {
    let tol = 1e-9 * rec.dt;
    let values: Vec<f64> = rec
        .times
        .iter()
        .zip(&rec.states)
        .filter(|(t, _)| **t >= from - tol && **t <= to + tol)
        .map(|(_, u)| obs.eval(u))
        .collect();
    if !(from < to) || values.len() < 2 {
        return Err(Error::EmptyWindow);
    }
    let (estimate, standard_error) = batch_means(&values, batches)?;
    Ok(ErgodicReport { estimate, standard_error, sample_count: values.len(), seed: None })
}

/// Kolmogorov–Smirnov distance to a normal with the sample's own mean and
/// standard deviation, with the asymptotic Kolmogorov p-value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub mean: f64,
    pub std_dev: f64,
}

pub fn ks_normal(samples: &[f64]) -> Result<KsResult> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::Precondition("KS test needs at least two samples".into()));
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    if !(var > 0.0) {
        return Err(Error::DegenerateVariance);
    }
    let std_dev = var.sqrt();
    let normal = Normal::new(mean, std_dev).map_err(|e| Error::Domain(e.to_string()))?;
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let nf = n as f64;
    let statistic = sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = normal.cdf(x);
            (f - i as f64 / nf).max((i + 1) as f64 / nf - f)
        })
        .fold(0.0, f64::max);
    Ok(KsResult { statistic, p_value: kolmogorov_p(statistic, n), mean, std_dev })
}

/// Asymptotic survival function of the Kolmogorov distribution with the
/// Stephens small-sample correction.
pub fn kolmogorov_p(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    if lambda < 0.2 {
        return 1.0;
    }
    let mut p = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        p += if k % 2 == 1 { 2.0 * term } else { -2.0 * term };
        if term < 1e-16 {
            break;
        }
    }
    p.clamp(0.0, 1.0)
}

#[derive(Clone, Copy, Debug)]
pub struct CltOptions {
    pub horizon: f64,
    pub burn_in: f64,
    pub replicas: usize,
    pub seed: u64,
    /// Length of the pilot run that estimates the mean.
    pub pilot_horizon: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct CltReport {
    pub pilot_mean: f64,
    /// `(1/√T) ∫ (Φ - m̂) dt` per replica, over the window after burn-in.
    pub deviations: Vec<f64>,
    pub sample_variance: f64,
    pub ks: KsResult,
    pub seed: u64,
}

/// Trapezoid integral of `Φ(U_t)` over `[burn_in, T]` along one path.
fn path_integral(model: &Model, u0: &[f64], obs: &Evaluator, burn_in: f64, horizon: f64, seed: u64, stream: u64) -> Result<f64> {
    let start = model.steps_for(burn_in)?;
    let end = model.steps_for(horizon)?;
    let mut acc = 0.0;
    simulate_visit(model, u0, horizon, seed, stream, |n, u| {
        if n >= start {
            let w = if n == start || n == end { 0.5 } else { 1.0 };
            acc += w * obs.eval(u);
        }
    })?;
    Ok(acc * model.dt())
}

/// Normalized integrals for independent replicas (streams `0..M`). The
/// pilot mean comes from stream `M`.
pub fn clt_sample(model: &Model, u0: &[f64], obs: &Evaluator, opts: CltOptions) -> Result<CltReport> {
    if opts.replicas < 50 {
        return Err(Error::Precondition(format!("CLT needs at least 50 replicas, got {}", opts.replicas)));
    }
    if !(opts.burn_in < opts.horizon) || !(opts.burn_in < opts.pilot_horizon) {
        return Err(Error::EmptyWindow);
    }
    let pilot_len = opts.pilot_horizon - opts.burn_in;
    let pilot_mean = path_integral(model, u0, obs, opts.burn_in, opts.pilot_horizon, opts.seed, opts.replicas as u64)?
        / pilot_len;
    let window = opts.horizon - opts.burn_in;
    let integrals: Vec<f64> = (0..opts.replicas as u64)
        .into_par_iter()
        .map(|j| path_integral(model, u0, obs, opts.burn_in, opts.horizon, opts.seed, j))
        .collect::<Result<_>>()?;
    let deviations: Vec<f64> = integrals.iter().map(|i| (i - pilot_mean * window) / window.sqrt()).collect();
    let ks = ks_normal(&deviations)?;
    Ok(CltReport {
        pilot_mean,
        sample_variance: ks.std_dev * ks.std_dev,
        deviations,
        ks,
        seed: opts.seed,
    })
}

/// Feed standard normals through the KS machinery; used to calibrate it.
pub fn ks_calibration(n: usize, seed: u64) -> Result<KsResult> {
    let mut rng = crate::galerkin::rng_for(seed, 0);
    let samples: Vec<f64> = (0..n).map(|_| crate::galerkin::standard_normal(&mut rng)).collect();
    ks_normal(&samples)
}

#[derive(Clone, Copy, Debug)]
pub struct MixingOptions {
    pub horizon: f64,
    pub ensemble: usize,
    pub seed: u64,
    /// Observation spacing in steps.
    pub stride: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct MixingReport {
    pub times: Vec<f64>,
    /// `|Ê_a Φ(U_t) - Ê_b Φ(U_t)|`.
    pub difference: Vec<f64>,
    /// Monte Carlo standard error of the difference.
    pub standard_error: Vec<f64>,
    pub identifiable: bool,
    pub rate: Option<f64>,
    /// Half-width of a 95% band on the rate.
    pub rate_half_width: Option<f64>,
    pub r_squared: Option<f64>,
    /// Number of leading grid points used in the fit.
    pub fit_points: usize,
    pub note: &'static str,
}

/// Mean and variance of `Φ` at every observation time over an ensemble
/// that uses streams `first..first + M`.
fn ensemble_moments(model: &Model, u0: &[f64], obs: &Evaluator, opts: &MixingOptions, first: u64) -> Result<Vec<(f64, f64)>> {
    let n_steps = model.steps_for(opts.horizon)?;
    let points = n_steps / opts.stride + 1;
    let paths: Vec<Vec<f64>> = (0..opts.ensemble as u64)
        .into_par_iter()
        .map(|j| {
            let mut row = Vec::with_capacity(points);
            simulate_visit(model, u0, opts.horizon, opts.seed, first + j, |n, u| {
                if n % opts.stride == 0 {
                    row.push(obs.eval(u));
                }
            })?;
            Ok(row)
        })
        .collect::<Result<_>>()?;
    let m = opts.ensemble as f64;
    Ok((0..points)
        .map(|p| {
            let mean = paths.iter().map(|r| r[p]).sum::<f64>() / m;
            let var = paths.iter().map(|r| (r[p] - mean).powi(2)).sum::<f64>() / (m - 1.0);
            (mean, var)
        })
        .collect())
}

/// Two independent ensembles from `u0_a` and `u0_b`; fits `log|ΔΦ|`
/// against `t` over the leading run of points that stay above three
/// standard errors.
pub fn mixing_decay_estimate(
    model: &Model,
    obs: &Evaluator,
    u0_a: &[f64],
    u0_b: &[f64],
    opts: MixingOptions,
) -> Result<MixingReport> {
    if u0_a == u0_b {
        return Err(Error::Precondition("mixing needs two distinct initial states".into()));
    }
    if opts.ensemble < 2 || opts.stride == 0 {
        return Err(Error::Domain("mixing needs an ensemble of at least 2 and a positive stride".into()));
    }
    let a = ensemble_moments(model, u0_a, obs, &opts, 0)?;
    let b = ensemble_moments(model, u0_b, obs, &opts, opts.ensemble as u64)?;
    Ok(fit_decay(model.dt() * opts.stride as f64, &a, &b, opts.ensemble))
}

/// Ensemble difference for two identical starting states; the statistic
/// should be indistinguishable from zero.
pub fn null_mixing(model: &Model, obs: &Evaluator, u0: &[f64], opts: MixingOptions) -> Result<MixingReport> {
    let a = ensemble_moments(model, u0, obs, &opts, 0)?;
    let b = ensemble_moments(model, u0, obs, &opts, opts.ensemble as u64)?;
    Ok(fit_decay(model.dt() * opts.stride as f64, &a, &b, opts.ensemble))
}

fn fit_decay(spacing: f64, a: &[(f64, f64)], b: &[(f64, f64)], ensemble: usize) -> MixingReport {
    let m = ensemble as f64;
    let times: Vec<f64> = (0..a.len()).map(|i| i as f64 * spacing).collect();
    let difference: Vec<f64> = a.iter().zip(b).map(|(x, y)| (x.0 - y.0).abs()).collect();
    let standard_error: Vec<f64> = a.iter().zip(b).map(|(x, y)| ((x.1 + y.1) / m).sqrt()).collect();
    let fit_points = difference
        .iter()
        .zip(&standard_error)
        .take_while(|(d, se)| **d > 3.0 * **se && **d > 0.0)
        .count();
    let mut report = MixingReport {
        times,
        difference,
        standard_error,
        identifiable: false,
        rate: None,
        rate_half_width: None,
        r_squared: None,
        fit_points,
        note: "rate of decay of an observable difference between two ensembles; not a Wasserstein distance",
    };
    if fit_points < 3 {
        return report;
    }
    let xs = &report.times[..fit_points];
    let ys: Vec<f64> = report.difference[..fit_points].iter().map(|d| d.ln()).collect();
    let n = fit_points as f64;
    let xm = xs.iter().sum::<f64>() / n;
    let ym = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - xm).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - xm) * (y - ym)).sum();
    let syy: f64 = ys.iter().map(|y| (y - ym).powi(2)).sum();
    let slope = sxy / sxx;
    let sse: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - ym - slope * (x - xm)).powi(2)).sum();
    let r2 = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    let slope_se = if fit_points > 2 { (sse / (n - 2.0) / sxx).sqrt() } else { f64::NAN };
    report.identifiable = true;
    report.rate = Some(-slope);
    report.rate_half_width = Some(1.96 * slope_se);
    report.r_squared = Some(r2);
    report
}

/// `log` of `exp(η‖U_t‖² + (η/2) e^{-t/2} ∫₀ᵗ (‖Λ^α u‖² + ‖Λ^β b‖²) ds)`
/// at every stored time. The integral uses the trapezoid rule on the
/// snapshot grid.
pub fn exp_moment_probe(model: &Model, rec: &TrajectoryRecord, eta: f64) -> Result<Vec<(f64, f64)>> {
    if !(eta > 0.0) {
        return Err(Error::Domain(format!("eta must be positive, got {eta}")));
    }
    let mut out = Vec::with_capacity(rec.times.len());
    let mut integral = 0.0;
    let mut prev: Option<(f64, f64)> = None;
    for (&t, u) in rec.times.iter().zip(&rec.states) {
        let d = model.dissipation_norm(u);
        if let Some((tp, dp)) = prev {
            integral += 0.5 * (t - tp) * (d + dp);
        }
        prev = Some((t, d));
        out.push((t, eta * norm2(u) + 0.5 * eta * (-0.5 * t).exp() * integral));
    }
    Ok(out)
}

/// Log of the ensemble mean of the exponential-moment statistic, with the
/// smallest constant `C` for which `mean ≤ C exp(η‖U_0‖² e^{-t})` on the grid.
#[derive(Clone, Debug, Serialize)]
pub struct MomentEnsemble {
    pub times: Vec<f64>,
    pub log_mean: Vec<f64>,
    pub log_reference: Vec<f64>,
    pub log_fitted_c: f64,
}

pub fn exp_moment_ensemble(
    model: &Model,
    u0: &[f64],
    eta: f64,
    horizon: f64,
    ensemble: usize,
    stride: usize,
    seed: u64,
) -> Result<MomentEnsemble> {
    if ensemble == 0 || stride == 0 {
        return Err(Error::Domain("ensemble and stride must be positive".into()));
    }
    let rows: Vec<Vec<(f64, f64)>> = (0..ensemble as u64)
        .into_par_iter()
        .map(|j| {
            let opts = crate::galerkin::RunOptions { horizon, seed, stream: j, stride, store_increments: false };
            let rec = crate::galerkin::simulate(model, u0, opts)?;
            exp_moment_probe(model, &rec, eta)
        })
        .collect::<Result<_>>()?;
    let times: Vec<f64> = rows[0].iter().map(|p| p.0).collect();
    let log_mean: Vec<f64> = (0..times.len())
        .map(|i| {
            let top = rows.iter().map(|r| r[i].1).fold(f64::NEG_INFINITY, f64::max);
            top + (rows.iter().map(|r| (r[i].1 - top).exp()).sum::<f64>() / ensemble as f64).ln()
        })
        .collect();
    let e0 = eta * norm2(u0);
    let log_reference: Vec<f64> = times.iter().map(|t| e0 * (-t).exp()).collect();
    let log_fitted_c = log_mean.iter().zip(&log_reference).map(|(m, r)| m - r).fold(f64::NEG_INFINITY, f64::max);
    Ok(MomentEnsemble { times, log_mean, log_reference, log_fitted_c })
}

/// `∫₀¹ exp(ηr‖γ(t)‖²) ‖γ'(t)‖ dt` along the straight line from `u1` to
/// `u2`, an upper bound for the weighted path distance.
pub fn rho_upper_bound(u1: &[f64], u2: &[f64], eta: f64, r: f64) -> Result<f64> {
    if u1.len() != u2.len() {
        return Err(Error::DimensionMismatch { expected: u1.len(), got: u2.len() });
    }
    if !(eta > 0.0) || !(r > 0.0 && r <= 1.0) {
        return Err(Error::Domain(format!("need eta > 0 and r in (0, 1], got eta = {eta}, r = {r}")));
    }
    let diff: Vec<f64> = u1.iter().zip(u2).map(|(a, b)| b - a).collect();
    let speed = norm2(&diff).sqrt();
    if speed == 0.0 {
        return Ok(0.0);
    }
    // ‖γ(t)‖² = a + 2bt + ct².
    let a = norm2(u1);
    let b = u1.iter().zip(&diff).map(|(x, d)| x * d).sum::<f64>();
    let c = speed * speed;
    let w = eta * r;
    let f = |t: f64| (w * (a + 2.0 * b * t + c * t * t)).exp();
    Ok(speed * adaptive_simpson(&f, 0.0, 1.0, 1e-13))
}

pub fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(fa: f64, fm: f64, fb: f64, h: f64) -> f64 {
        h / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn rec(f: &impl Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = simpson(fa, flm, fm, m - a);
        let right = simpson(fm, frm, fb, b - m);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol * (left + right).abs().max(1.0) {
            return left + right + delta / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    rec(f, a, b, fa, fm, fb, simpson(fa, fm, fb, b - a), tol, 40)
}

#[cfg(test)]
mod tests;
