//! Experiment configuration: TOML with dotted-key overrides, unknown-key
//! rejection and whole-file validation.

use std::path::Path;

use serde::{Deserialize, Serialize};

use hypomhd::ergodic::Observable;
use hypomhd::galerkin::{EquationParams, NoiseEntry, NoiseSpec, NonlinearPath};
use hypomhd::lattice::{Mode, Parity, Slot, WaveVector};
use hypomhd::malliavin::Quadrature;

use crate::error::CliError;

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct RawConfig {
    #[serde(default)]
    pub equation: EquationSection,
    #[serde(default)]
    pub noise: Vec<NoiseSection>,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub analysis: AnalysisSection,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct EquationSection {
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub n_cut: Option<u32>,
    pub dt: Option<f64>,
    #[serde(default = "yes")]
    pub nonlinearity: bool,
    #[serde(default = "convolution")]
    pub nonlinear_path: NonlinearPath,
}

fn yes() -> bool {
    true
}

fn convolution() -> NonlinearPath {
    NonlinearPath::Convolution
}

/// One forced wavevector; without `m` both parities are forced.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NoiseSection {
    pub k: [i64; 2],
    pub m: Option<u8>,
    pub amplitude: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunSection {
    pub horizon: Option<f64>,
    pub seed: Option<u64>,
    #[serde(default = "one")]
    pub snapshot_stride: usize,
    #[serde(default = "one")]
    pub ensemble_size: usize,
    #[serde(default)]
    pub initial: Vec<ModeValue>,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection { horizon: None, seed: None, snapshot_stride: 1, ensemble_size: 1, initial: Vec::new() }
    }
}

fn one() -> usize {
    1
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ModeSpec {
    pub slot: Slot,
    pub k: [i64; 2],
    pub m: u8,
}

impl ModeSpec {
    pub fn mode(&self) -> Result<Mode, String> {
        let parity = Parity::from_index(self.m).map_err(|e| e.to_string())?;
        Mode::new(self.slot, WaveVector::new(self.k[0], self.k[1]), parity).map_err(|e| e.to_string())
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ModeValue {
    #[serde(flatten)]
    pub mode: ModeSpec,
    pub value: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservableKind {
    Constant,
    ModeCoefficient,
    ModeSquare,
    TotalEnergy,
    BoundedLipschitz,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ObservableSpec {
    pub kind: ObservableKind,
    pub slot: Option<Slot>,
    pub k: Option<[i64; 2]>,
    pub m: Option<u8>,
    pub value: Option<f64>,
}

impl ObservableSpec {
    pub fn observable(&self) -> Result<Observable, String> {
        let mode = || match (self.slot, self.k, self.m) {
            (Some(slot), Some(k), Some(m)) => ModeSpec { slot, k, m }.mode(),
            _ => Err(format!("observable `{:?}` needs slot, k and m", self.kind)),
        };
        Ok(match self.kind {
            ObservableKind::Constant => Observable::Constant {
                value: self.value.ok_or("constant observable needs `value`")?,
            },
            ObservableKind::ModeCoefficient => Observable::ModeCoefficient { mode: mode()? },
            ObservableKind::ModeSquare => Observable::ModeSquare { mode: mode()? },
            ObservableKind::TotalEnergy => Observable::TotalEnergy,
            ObservableKind::BoundedLipschitz => Observable::BoundedLipschitz { mode: mode()? },
        })
    }
}

impl Default for ObservableSpec {
    fn default() -> Self {
        ObservableSpec { kind: ObservableKind::TotalEnergy, slot: None, k: None, m: None, value: None }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct AnalysisSection {
    #[serde(default)]
    pub bracket: BracketSection,
    #[serde(default)]
    pub reach: ReachSection,
    #[serde(default)]
    pub malliavin: MalliavinSection,
    #[serde(default)]
    pub lln: LlnSection,
    #[serde(default)]
    pub clt: CltSection,
    #[serde(default)]
    pub mix: MixSection,
    #[serde(default)]
    pub moment: MomentSection,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BracketSection {
    #[serde(default = "three")]
    pub kmax: u32,
}

impl Default for BracketSection {
    fn default() -> Self {
        BracketSection { kmax: 3 }
    }
}

fn three() -> u32 {
    3
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReachSection {
    #[serde(default = "ten")]
    pub radius: u32,
    pub max_depth: Option<usize>,
}

impl Default for ReachSection {
    fn default() -> Self {
        ReachSection { radius: 10, max_depth: None }
    }
}

fn ten() -> u32 {
    10
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MalliavinSection {
    #[serde(default = "half")]
    pub cone_alpha: f64,
    #[serde(default = "one_u32")]
    pub cone_n: u32,
    #[serde(default = "thousand")]
    pub samples: usize,
    #[serde(default)]
    pub quadrature: Quadrature,
    /// Test vectors whose forced-mode adjoint profiles are written out.
    #[serde(default)]
    pub profiles: Vec<ModeSpec>,
}

impl Default for MalliavinSection {
    fn default() -> Self {
        MalliavinSection {
            cone_alpha: 0.5,
            cone_n: 1,
            samples: 1000,
            quadrature: Quadrature::default(),
            profiles: Vec::new(),
        }
    }
}

fn half() -> f64 {
    0.5
}

fn one_u32() -> u32 {
    1
}

fn thousand() -> usize {
    1000
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct LlnSection {
    #[serde(default)]
    pub observable: ObservableSpec,
    #[serde(default)]
    pub burn_in: f64,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct CltSection {
    #[serde(default)]
    pub observable: ObservableSpec,
    #[serde(default)]
    pub burn_in: f64,
    /// Defaults to ten times the run horizon.
    pub pilot_horizon: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MixSection {
    #[serde(default)]
    pub observable: ObservableSpec,
    /// Added to the initial state to form the second starting point.
    #[serde(default)]
    pub perturbation: Vec<ModeValue>,
    #[serde(default = "ten_usize")]
    pub stride: usize,
}

impl Default for MixSection {
    fn default() -> Self {
        MixSection { observable: ObservableSpec::default(), perturbation: Vec::new(), stride: 10 }
    }
}

fn ten_usize() -> usize {
    10
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MomentSection {
    #[serde(default = "small_eta")]
    pub eta: f64,
    #[serde(default = "ten_usize")]
    pub stride: usize,
}

impl Default for MomentSection {
    fn default() -> Self {
        MomentSection { eta: 0.05, stride: 10 }
    }
}

fn small_eta() -> f64 {
    0.05
}

/// A validated configuration.
#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub raw: RawConfig,
    pub params: EquationParams,
    pub path: NonlinearPath,
    pub noise: NoiseSpec,
}

impl ExperimentConfig {
    /// The configuration with defaults filled in, for echoing into outputs.
    pub fn echo(&self) -> serde_json::Value {
        serde_json::to_value(&self.raw).expect("config serializes")
    }

    pub fn seed(&self) -> Option<u64> {
        self.raw.run.seed
    }
}

/// Parse `path`, apply `key=value` overrides, and validate everything.
pub fn parse_config(path: &Path, overrides: &[String]) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    parse_config_str(&text, overrides)
}

pub fn parse_config_str(text: &str, overrides: &[String]) -> Result<ExperimentConfig, CliError> {
    let mut doc: toml::Table = text.parse().map_err(|e: toml::de::Error| CliError::Config(vec![e.message().to_string()]))?;
    let mut violations = Vec::new();
    for o in overrides {
        if let Err(e) = apply_override(&mut doc, o) {
            violations.push(e);
        }
    }
    let raw: RawConfig = match RawConfig::deserialize(toml::Value::Table(doc.clone())) {
        Ok(r) => r,
        Err(e) => {
            violations.push(e.message().to_string());
            return Err(CliError::Config(violations));
        }
    };
    let known = toml::Value::try_from(&raw).expect("config serializes");
    unknown_keys(&toml::Value::Table(doc), &known, "", &mut violations);
    let out = validate(raw, &mut violations);
    if violations.is_empty() {
        Ok(out.expect("no violations"))
    } else {
        Err(CliError::Config(violations))
    }
}

/// `a.b.c=value`, where `value` is a TOML literal or else a bare string.
fn apply_override(doc: &mut toml::Table, spec: &str) -> Result<(), String> {
    let (key, value) = spec.split_once('=').ok_or_else(|| format!("override `{spec}` is not of the form key=value"))?;
    let value = match format!("v = {value}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(value.to_string()),
    };
    let parts: Vec<&str> = key.trim().split('.').collect();
    let mut table = doc;
    for p in &parts[..parts.len() - 1] {
        table = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| format!("override `{key}`: `{p}` is not a table"))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Every key of `given` must survive a round trip through the typed config.
fn unknown_keys(given: &toml::Value, known: &toml::Value, prefix: &str, out: &mut Vec<String>) {
    match (given, known) {
        (toml::Value::Table(g), toml::Value::Table(k)) => {
            for (key, v) in g {
                let name = if prefix.is_empty() { key.clone() } else { format!("{prefix}.{key}") };
                match k.get(key) {
                    Some(kv) => unknown_keys(v, kv, &name, out),
                    None => out.push(format!("unknown key `{name}`")),
                }
            }
        }
        (toml::Value::Array(g), toml::Value::Array(k)) => {
            for (i, (gv, kv)) in g.iter().zip(k).enumerate() {
                unknown_keys(gv, kv, &format!("{prefix}[{i}]"), out);
            }
        }
        _ => {}
    }
}

fn validate(raw: RawConfig, v: &mut Vec<String>) -> Option<ExperimentConfig> {
    let eq = &raw.equation;
    let mut need = |name: &str, x: Option<f64>| {
        if x.is_none() {
            v.push(format!("equation.{name} is required"));
        }
        x
    };
    let alpha = need("alpha", eq.alpha);
    let beta = need("beta", eq.beta);
    let dt = need("dt", eq.dt);
    if eq.n_cut.is_none() {
        v.push("equation.n_cut is required".into());
    }
    if let Some(a) = alpha {
        if !(a > 1.0) {
            v.push(format!("alpha must exceed 1 (got {a})"));
        }
    }
    if let Some(b) = beta {
        if !(b > 1.0) {
            v.push(format!("beta must exceed 1 (got {b})"));
        }
    }
    if let Some(dt) = dt {
        if !(dt > 0.0 && dt.is_finite()) {
            v.push(format!("dt must be positive (got {dt})"));
        }
    }
    if eq.n_cut == Some(0) {
        v.push("n_cut must be at least 1".into());
    }
    let n_cut = eq.n_cut.unwrap_or(0);

    let mut entries = Vec::new();
    for (i, e) in raw.noise.iter().enumerate() {
        let k = WaveVector::new(e.k[0], e.k[1]);
        if k.is_zero() {
            v.push(format!("noise[{i}]: wavevector must be nonzero"));
            continue;
        }
        if e.amplitude == 0.0 || !e.amplitude.is_finite() {
            v.push(format!("noise[{i}]: amplitude for k = {k} must be a nonzero number"));
        }
        if n_cut > 0 && k.norm2() > (n_cut as i64).pow(2) {
            v.push(format!("noise[{i}]: wavevector {k} lies outside the truncation n_cut = {n_cut}"));
        }
        let parities = match e.m {
            None => Parity::BOTH.to_vec(),
            Some(m) => match Parity::from_index(m) {
                Ok(p) => vec![p],
                Err(err) => {
                    v.push(format!("noise[{i}]: {err}"));
                    continue;
                }
            },
        };
        for p in parities {
            entries.push(NoiseEntry { k, m: p, amplitude: e.amplitude });
        }
    }
    let noise = match NoiseSpec::new(entries) {
        Ok(n) => Some(n),
        Err(e) => {
            v.push(format!("noise: {e}"));
            None
        }
    };

    let run = &raw.run;
    if let Some(t) = run.horizon {
        if !(t > 0.0 && t.is_finite()) {
            v.push(format!("run.horizon must be positive (got {t})"));
        }
    }
    if run.snapshot_stride == 0 {
        v.push("run.snapshot_stride must be positive".into());
    }
    if run.ensemble_size == 0 {
        v.push("run.ensemble_size must be positive".into());
    }
    for (i, m) in run.initial.iter().enumerate() {
        check_mode(&format!("run.initial[{i}]"), &m.mode, n_cut, v);
    }
    let a = &raw.analysis;
    for (name, obs) in [("lln", &a.lln.observable), ("clt", &a.clt.observable), ("mix", &a.mix.observable)] {
        match obs.observable() {
            Ok(o) => {
                if let Some(mode) = observable_mode(&o) {
                    if n_cut > 0 && mode.k.norm2() > (n_cut as i64).pow(2) {
                        v.push(format!("analysis.{name}.observable: mode {mode} lies outside the truncation"));
                    }
                }
            }
            Err(e) => v.push(format!("analysis.{name}.observable: {e}")),
        }
    }
    for (i, m) in a.mix.perturbation.iter().enumerate() {
        check_mode(&format!("analysis.mix.perturbation[{i}]"), &m.mode, n_cut, v);
    }
    for (i, m) in a.malliavin.profiles.iter().enumerate() {
        check_mode(&format!("analysis.malliavin.profiles[{i}]"), m, n_cut, v);
    }
    if !(a.malliavin.cone_alpha > 0.0 && a.malliavin.cone_alpha <= 1.0) {
        v.push(format!("analysis.malliavin.cone_alpha must lie in (0, 1] (got {})", a.malliavin.cone_alpha));
    }
    if a.malliavin.cone_n == 0 || (n_cut > 0 && a.malliavin.cone_n > n_cut) {
        v.push(format!("analysis.malliavin.cone_n must lie in 1..=n_cut (got {})", a.malliavin.cone_n));
    }
    if !(a.moment.eta > 0.0) {
        v.push(format!("analysis.moment.eta must be positive (got {})", a.moment.eta));
    }
    if a.mix.stride == 0 || a.moment.stride == 0 {
        v.push("analysis strides must be positive".into());
    }
    if a.reach.radius == 0 {
        v.push("analysis.reach.radius must be at least 1".into());
    }

    if !v.is_empty() {
        return None;
    }
    let params = EquationParams {
        alpha: alpha?,
        beta: beta?,
        n_cut,
        dt: dt?,
        nonlinearity_enabled: eq.nonlinearity,
    };
    let path = eq.nonlinear_path;
    Some(ExperimentConfig { raw, params, path, noise: noise? })
}

fn observable_mode(o: &Observable) -> Option<Mode> {
    match *o {
        Observable::ModeCoefficient { mode } | Observable::ModeSquare { mode } | Observable::BoundedLipschitz { mode } => {
            Some(mode)
        }
        _ => None,
    }
}

fn check_mode(name: &str, m: &ModeSpec, n_cut: u32, v: &mut Vec<String>) {
    match m.mode() {
        Ok(mode) if n_cut > 0 && mode.k.norm2() > (n_cut as i64).pow(2) => {
            v.push(format!("{name}: mode {mode} lies outside the truncation"))
        }
        Ok(_) => {}
        Err(e) => v.push(format!("{name}: {e}")),
    }
}
