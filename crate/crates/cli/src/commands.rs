//! Subcommand implementations. Each writes its artifacts into an
//! [`OutputDir`] and returns its JSON summary.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use hypomhd::bracket::{verify_sweep, VerificationReport};
use hypomhd::ergodic::{
    clt_sample, exp_moment_ensemble, mixing_decay_estimate, time_average, CltOptions, MixingOptions, DEFAULT_BATCHES,
};
use hypomhd::galerkin::{simulate, Model, RunOptions};
use hypomhd::malliavin::{
    assemble_malliavin, cone_infimum_for, forced_profile, ConeReport, ConeSpec, FrozenPath,
};
use hypomhd::reach::{check_hypothesis, default_max_depth, next_generation, ForcedSet};

use crate::config::{ExperimentConfig, ModeValue};
use crate::error::CliError;
use crate::output::OutputDir;

fn model(cfg: &ExperimentConfig) -> Result<Model, CliError> {
    Ok(Model::new(cfg.params.clone(), cfg.noise.clone(), cfg.path)?)
}

fn seed(cfg: &ExperimentConfig, cmd: &str) -> Result<u64, CliError> {
    cfg.seed().ok_or_else(|| CliError::SeedRequired(cmd.to_string()))
}

fn horizon(cfg: &ExperimentConfig) -> Result<f64, CliError> {
    cfg.raw.run.horizon.ok_or_else(|| CliError::Config(vec!["run.horizon is required".into()]))
}

fn state_from(m: &Model, values: &[ModeValue], base: Option<&[f64]>) -> Result<Vec<f64>, CliError> {
    let mut u = base.map(|b| b.to_vec()).unwrap_or_else(|| vec![0.0; m.dim()]);
    for v in values {
        let mode = v.mode.mode().map_err(|e| CliError::Config(vec![e]))?;
        let idx = m
            .truncation()
            .index(mode)
            .ok_or_else(|| CliError::Config(vec![format!("mode {mode} lies outside the truncation")]))?;
        u[idx] += v.value;
    }
    Ok(u)
}

fn labels(m: &Model) -> Vec<String> {
    m.truncation().modes().map(|mode| mode.to_string()).collect()
}

fn preamble(cfg: &ExperimentConfig) -> Vec<(&'static str, String)> {
    vec![
        ("seed", cfg.seed().map(|s| s.to_string()).unwrap_or_else(|| "none".into())),
        ("config", cfg.echo().to_string()),
    ]
}

#[derive(Serialize)]
struct BracketSummary {
    kmax: u32,
    checks: usize,
    admissible_checks: usize,
    all_selection_ok: bool,
    max_deviation: f64,
    ratio_min: f64,
    ratio_max: f64,
    /// Sign relating each computed direction to its closed form.
    line_constants: BTreeMap<String, Vec<f64>>,
}

pub fn bracket_verify(kmax: u32, config: Option<&ExperimentConfig>, out: &mut OutputDir) -> Result<serde_json::Value, CliError> {
    let reports = verify_sweep(kmax)?;
    let live: Vec<&VerificationReport> = reports.iter().filter(|r| r.degeneracy.is_none()).collect();
    let ratios: Vec<f64> = live.iter().filter_map(|r| r.coefficient_ratio).collect();
    let mut line_constants: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in &live {
        if let Some(c) = r.normalization_constant {
            let key = format!("{:?}/{:?}", r.slot, r.combo).to_lowercase();
            let list = line_constants.entry(key).or_default();
            let c = (c * 1e9).round() / 1e9;
            if !list.contains(&c) {
                list.push(c);
            }
        }
    }
    let summary = BracketSummary {
        kmax,
        checks: reports.len(),
        admissible_checks: live.len(),
        all_selection_ok: live.iter().all(|r| r.selection_ok),
        max_deviation: live.iter().map(|r| r.max_deviation).fold(0.0, f64::max),
        ratio_min: ratios.iter().cloned().fold(f64::INFINITY, f64::min),
        ratio_max: ratios.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        line_constants,
    };
    let mut csv = String::from("k1,k2,l1,l2,slot,combo,degeneracy,selection_ok,coefficient_ratio,normalization_constant,max_deviation\n");
    let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    for r in &reports {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            r.k.k1,
            r.k.k2,
            r.l.k1,
            r.l.k2,
            format!("{:?}", r.slot).to_lowercase(),
            serde_json::to_value(r.combo).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default(),
            r.degeneracy.map(|d| d.reason().to_string()).unwrap_or_default(),
            r.selection_ok,
            opt(r.coefficient_ratio),
            opt(r.normalization_constant),
            r.max_deviation
        ));
    }
    out.write("bracket_sweep.csv", csv.as_bytes())?;
    let value = json!({ "config": config.map(|c| c.echo()), "summary": summary });
    out.write_json("bracket_report.json", &value)?;
    Ok(value)
}

pub fn reach(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<serde_json::Value, CliError> {
    let forced = ForcedSet::new(cfg.noise.wavevectors())?;
    let a = &cfg.raw.analysis.reach;
    let depth = a.max_depth.unwrap_or_else(|| default_max_depth(a.radius));
    let report = check_hypothesis(&forced, a.radius, depth)?;
    let z1 = next_generation(forced.symmetrized(), &forced);
    let value = json!({
        "config": cfg.echo(),
        "z0_symmetrized": forced.symmetrized(),
        "z1": z1,
        "report": report,
    });
    out.write_json("reach_report.json", &value)?;
    Ok(value)
}

pub fn simulate_cmd(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<serde_json::Value, CliError> {
    let seed = seed(cfg, "simulate")?;
    let m = model(cfg)?;
    let u0 = state_from(&m, &cfg.raw.run.initial, None)?;
    let opts = RunOptions {
        horizon: horizon(cfg)?,
        seed,
        stream: 0,
        stride: cfg.raw.run.snapshot_stride,
        store_increments: false,
    };
    let rec = simulate(&m, &u0, opts)?;
    let mut header = vec!["t".to_string()];
    header.extend(labels(&m));
    let rows: Vec<Vec<f64>> = rec
        .times
        .iter()
        .zip(&rec.states)
        .map(|(t, u)| std::iter::once(*t).chain(u.iter().copied()).collect())
        .collect();
    out.write_csv("trajectory.csv", &preamble(cfg), &header, &rows)?;
    let energy: Vec<Vec<f64>> = rec
        .times
        .iter()
        .zip(&rec.states)
        .map(|(t, u)| vec![*t, hypomhd::galerkin::norm2(u), m.dissipation_norm(u)])
        .collect();
    out.write_csv("energy.csv", &preamble(cfg), &["t".into(), "energy".into(), "dissipation".into()], &energy)?;
    let value = json!({
        "config": cfg.echo(),
        "seed": seed,
        "dim": m.dim(),
        "steps": rec.n_steps,
        "snapshots": rec.states.len(),
        "final_energy": hypomhd::galerkin::norm2(rec.final_state()),
        "e0": m.noise().e0(),
    });
    out.write_json("simulate_summary.json", &value)?;
    Ok(value)
}

#[derive(Serialize)]
struct PathCone {
    path: usize,
    min_eigenvalue: f64,
    trace: f64,
    cone: ConeReport,
}

pub fn malliavin(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<serde_json::Value, CliError> {
    let seed = seed(cfg, "malliavin")?;
    let m = model(cfg)?;
    let t = horizon(cfg)?;
    let u0 = state_from(&m, &cfg.raw.run.initial, None)?;
    let a = &cfg.raw.analysis.malliavin;
    let cone = ConeSpec::new(a.cone_alpha, a.cone_n)?;
    let basis: Vec<usize> = (0..m.dim()).collect();
    let paths = cfg.raw.run.ensemble_size;

    let run_path = |j: usize| -> Result<_, CliError> {
        let opts = RunOptions { horizon: t, seed, stream: j as u64, stride: 1, store_increments: false };
        let rec = simulate(&m, &u0, opts)?;
        let path = FrozenPath::new(&m, &rec)?;
        let g = assemble_malliavin(&path, &basis, a.quadrature)?;
        let report = cone_infimum_for(&g, m.truncation(), cone, a.samples, seed.wrapping_add(j as u64))?;
        let ev = g.eigenvalues();
        let profiles = if j == 0 {
            let mut rows = Vec::new();
            for spec in &a.profiles {
                let mode = spec.mode().map_err(|e| CliError::Config(vec![e]))?;
                let phi = m.unit(mode)?;
                rows.push(forced_profile(&path, &phi)?);
            }
            Some((ev.clone(), (0..m.dim()).map(|i| g.gram[(i, i)]).collect::<Vec<_>>(), rows))
        } else {
            None
        };
        Ok((PathCone { path: j, min_eigenvalue: ev[0], trace: g.trace(), cone: report }, profiles))
    };
    let results: Vec<_> = (0..paths).into_par_iter().map(run_path).collect::<Result<_, _>>()?;

    let positive = results.iter().filter(|r| r.0.cone.sampled_inf > 1e-10).count();
    let ordered = results.iter().all(|r| r.0.cone.dual_lower_bound <= r.0.cone.sampled_inf);
    let (spectrum, diagonal, profiles) = results[0].1.clone().expect("path 0 carries details");
    let names = labels(&m);
    let diag: Vec<_> = names.iter().zip(&diagonal).map(|(n, d)| json!({ "mode": n, "value": d })).collect();
    let per_path: Vec<&PathCone> = results.iter().map(|r| &r.0).collect();

    if !a.profiles.is_empty() {
        let forced: Vec<String> = m.forced().iter().map(|f| names[f.index].clone()).collect();
        let mut header = vec!["r".to_string()];
        for spec in &a.profiles {
            let phi = spec.mode().map_err(|e| CliError::Config(vec![e]))?.to_string();
            header.extend(forced.iter().map(|f| format!("{phi}|{f}")));
        }
        let dt = m.dt();
        let rows: Vec<Vec<f64>> = (0..profiles[0].len())
            .map(|n| {
                let mut row = vec![n as f64 * dt];
                for p in &profiles {
                    row.extend(p[n].iter().copied());
                }
                row
            })
            .collect();
        out.write_csv("malliavin_profiles.csv", &preamble(cfg), &header, &rows)?;
    }

    let value = json!({
        "config": cfg.echo(),
        "seed": seed,
        "quadrature": a.quadrature,
        "cone": { "alpha": cone.alpha, "n": cone.n, "samples": a.samples },
        "summary": {
            "paths": paths,
            "positive_sampled_inf": positive,
            "positive_fraction": positive as f64 / paths as f64,
            "dual_bound_below_sampled_on_all_paths": ordered,
        },
        "paths": per_path,
        "path0": { "eigenvalues": spectrum, "diagonal": diag },
    });
    out.write_json("malliavin.json", &value)?;
    Ok(value)
}

pub fn lln(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<serde_json::Value, CliError> {
    let seed = seed(cfg, "lln")?;
    let m = model(cfg)?;
    let a = &cfg.raw.analysis.lln;
    let obs = a.observable.observable().map_err(|e| CliError::Config(vec![e]))?.bind(m.truncation())?;
    let u0 = state_from(&m, &cfg.raw.run.initial, None)?;
    let opts = RunOptions {
        horizon: horizon(cfg)?,
        seed,
        stream: 0,
        stride: cfg.raw.run.snapshot_stride,
        store_increments: false,
    };
    let rec = simulate(&m, &u0, opts)?;
    let mut report = time_average(&rec, &obs, a.burn_in, DEFAULT_BATCHES)?;
    report.seed = Some(seed);
    let rows: Vec<Vec<f64>> = rec.times.iter().zip(&rec.states).map(|(t, u)| vec![*t, obs.eval(u)]).collect();
    out.write_csv("lln_series.csv", &preamble(cfg), &["t".into(), "value".into()], &rows)?;
    let value = json!({ "config": cfg.echo(), "seed": seed, "observable": obs.observable(), "report": report });
    out.write_json("lln.json", &value)?;
    Ok(value)
}

pub fn clt(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<serde_json::Value, CliError> {
    let seed = seed(cfg, "clt")?;
    let m = model(cfg)?;
    let t = horizon(cfg)?;
    let a = &cfg.raw.analysis.clt;
    let obs = a.observable.observable().map_err(|e| CliError::Config(vec![e]))?.bind(m.truncation())?;
    let u0 = state_from(&m, &cfg.raw.run.initial, None)?;
    let opts = CltOptions {
        horizon: t,
        burn_in: a.burn_in,
        replicas: cfg.raw.run.ensemble_size,
        seed,
        pilot_horizon: a.pilot_horizon.unwrap_or(10.0 * t),
    };
    let report = clt_sample(&m, &u0, &obs, opts)?;
    let rows: Vec<Vec<f64>> = report.deviations.iter().enumerate().map(|(i, d)| vec![i as f64, *d]).collect();
    out.write_csv("clt_samples.csv", &preamble(cfg), &["replica".into(), "deviation".into()], &rows)?;
    let value = json!({
        "config": cfg.echo(),
        "seed": seed,
        "observable": obs.observable(),
        "pilot_mean": report.pilot_mean,
        "sample_variance": report.sample_variance,
        "ks": report.ks,
        "replicas": report.deviations.len(),
    });
    out.write_json("clt.json", &value)?;
    Ok(value)
}

pub fn mix(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<serde_json::Value, CliError> {
    let seed = seed(cfg, "mix")?;
    let m = model(cfg)?;
    let a = &cfg.raw.analysis.mix;
    let obs = a.observable.observable().map_err(|e| CliError::Config(vec![e]))?.bind(m.truncation())?;
    let ub = state_from(&m, &cfg.raw.run.initial, None)?;
    let ua = state_from(&m, &a.perturbation, Some(&ub))?;
    let opts = MixingOptions { horizon: horizon(cfg)?, ensemble: cfg.raw.run.ensemble_size, seed, stride: a.stride };
    let report = mixing_decay_estimate(&m, &obs, &ua, &ub, opts)?;
    let rows: Vec<Vec<f64>> = (0..report.times.len())
        .map(|i| vec![report.times[i], report.difference[i], report.standard_error[i]])
        .collect();
    out.write_csv("mix.csv", &preamble(cfg), &["t".into(), "difference".into(), "standard_error".into()], &rows)?;
    let value = json!({
        "config": cfg.echo(),
        "seed": seed,
        "observable": obs.observable(),
        "identifiable": report.identifiable,
        "rate": report.rate,
        "rate_half_width": report.rate_half_width,
        "r_squared": report.r_squared,
        "fit_points": report.fit_points,
        "status": if report.identifiable { "ok" } else { "rate not identifiable" },
        "note": report.note,
    });
    out.write_json("mix.json", &value)?;
    Ok(value)
}

pub fn moment(cfg: &ExperimentConfig, out: &mut OutputDir) -> Result<serde_json::Value, CliError> {
    let seed = seed(cfg, "moment")?;
    let m = model(cfg)?;
    let a = &cfg.raw.analysis.moment;
    let u0 = state_from(&m, &cfg.raw.run.initial, None)?;
    let r = exp_moment_ensemble(&m, &u0, a.eta, horizon(cfg)?, cfg.raw.run.ensemble_size, a.stride, seed)?;
    let rows: Vec<Vec<f64>> = (0..r.times.len()).map(|i| vec![r.times[i], r.log_mean[i], r.log_reference[i]]).collect();
    out.write_csv("moment.csv", &preamble(cfg), &["t".into(), "log_mean".into(), "log_reference".into()], &rows)?;
    let value = json!({
        "config": cfg.echo(),
        "seed": seed,
        "eta": a.eta,
        "log_fitted_c": r.log_fitted_c,
        "max_log_mean": r.log_mean.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        "ensemble": cfg.raw.run.ensemble_size,
    });
    out.write_json("moment.json", &value)?;
    Ok(value)
}
