//! Run configurations, figure presets, sweeps and serialization.
//!
//! A [`RunConfig`] fixes the initial states, the bath, the quantity to
//! evaluate and the time grid. Configurations are assembled from a preset and
//! a list of [`Overrides`], which come from a `key = value` file and from
//! command-line flags (flags win). [`run`] evaluates a configuration and
//! writes CSV or JSON. Identical configurations give byte-identical files.
//!
//! ```
//! use qbm_gauss::runner::{Overrides, Preset, RunConfig};
//!
//! let mut o = Overrides::default();
//! o.set("preset", "fig2").unwrap();
//! o.set("alpha", "0.2").unwrap();
//! let config = RunConfig::resolve(&o).unwrap();
//! assert_eq!(config.preset, Some(Preset::Fig2));
//! assert_eq!(config.bath.alpha(), 0.2);
//! assert_eq!(config.bath.temperature(), 50.0);
//! ```

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;

use crate::channel::{
    t_min, uniform_grid, BathSpec, Channel, ChannelCoefficients, CoefficientSource, DiffusionForm, NoiseScaling,
};
use crate::metrics::{compute_series, critical_time, CriticalTimeOptions, MetricKind, MetricSeries, SeriesRequest};
use crate::states::{make_state, StateFamily, StateSpec};
use crate::symplectic::check_bona_fide;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Preset {
    #[serde(rename = "fig1")]
    Fig1,
    #[serde(rename = "fig2")]
    Fig2,
    #[serde(rename = "fig3")]
    Fig3,
    #[serde(rename = "fig4")]
    Fig4,
    #[serde(rename = "fig5")]
    Fig5,
    #[serde(rename = "fig6")]
    Fig6,
    #[serde(rename = "fig7-kappa3")]
    Fig7Kappa3,
}

impl Preset {
    pub const ALL: [Preset; 7] =
        [Preset::Fig1, Preset::Fig2, Preset::Fig3, Preset::Fig4, Preset::Fig5, Preset::Fig6, Preset::Fig7Kappa3];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Fig1 => "fig1",
            Preset::Fig2 => "fig2",
            Preset::Fig3 => "fig3",
            Preset::Fig4 => "fig4",
            Preset::Fig5 => "fig5",
            Preset::Fig6 => "fig6",
            Preset::Fig7Kappa3 => "fig7-kappa3",
        }
    }

    /// Default configuration of the preset.
    pub fn config(self) -> RunConfig {
        let bath = |alpha: f64| BathSpec::new(alpha, 50.0, 7.0, 1.0).expect("preset bath is valid");
        let base = RunConfig {
            preset: Some(self),
            states: vec![StateSpec::squeezed(2.0), StateSpec::squeezed(3.0)],
            bath: bath(0.1),
            metric: RunMetric::Fidelity,
            kappa: 2.0,
            t_max: 30.0,
            steps: 600,
            output: None,
            format: OutputFormat::Csv,
            oracle: false,
            noise_scaling: NoiseScaling::Uniform,
            diffusion: DiffusionForm::WeakCoupling,
            plot_script: false,
        };
        match self {
            Preset::Fig1 => RunConfig {
                states: Vec::new(),
                bath: bath(0.3),
                metric: RunMetric::Coefficients,
                t_max: 10.0,
                steps: 400,
                ..base
            },
            Preset::Fig2 => base,
            Preset::Fig3 => RunConfig {
                states: vec![StateSpec::two_mode_squeezed(2.0), StateSpec::two_mode_squeezed(3.0)],
                noise_scaling: NoiseScaling::HalvedMultimode,
                ..base
            },
            Preset::Fig4 => RunConfig {
                states: vec![StateSpec::two_mode_squeezed(2.0)],
                metric: RunMetric::LogNegativity,
                t_max: 10.0,
                steps: 400,
                ..base
            },
            Preset::Fig5 => RunConfig { bath: bath(0.3), metric: RunMetric::PetzRenyi, t_max: 5.0, steps: 500, ..base },
            Preset::Fig6 => RunConfig {
                states: vec![StateSpec::two_mode_squeezed(2.0), StateSpec::two_mode_squeezed(3.0)],
                bath: bath(0.3),
                metric: RunMetric::PetzRenyi,
                t_max: 5.0,
                steps: 500,
                noise_scaling: NoiseScaling::HalvedMultimode,
                ..base
            },
            Preset::Fig7Kappa3 => RunConfig { kappa: 3.0, ..Preset::Fig6.config() }.with_preset(self),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('_', "-");
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == key)
            .ok_or_else(|| Error::invalid(format!("unknown preset '{s}'")))
    }
}

/// What a run evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMetric {
    /// `Δ ± γ` on the grid.
    Coefficients,
    Fidelity,
    LogNegativity,
    PetzRenyi,
}

impl RunMetric {
    fn kind(self) -> Option<MetricKind> {
        match self {
            RunMetric::Coefficients => None,
            RunMetric::Fidelity => Some(MetricKind::Fidelity),
            RunMetric::LogNegativity => Some(MetricKind::LogNegativity),
            RunMetric::PetzRenyi => Some(MetricKind::PetzRenyi),
        }
    }
}

impl fmt::Display for RunMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind() {
            Some(k) => write!(f, "{k}"),
            None => f.write_str("coefficients"),
        }
    }
}

impl FromStr for RunMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "coefficients" | "coeffs" => Ok(RunMetric::Coefficients),
            other => Ok(match other.parse::<MetricKind>()? {
                MetricKind::Fidelity => RunMetric::Fidelity,
                MetricKind::LogNegativity => RunMetric::LogNegativity,
                MetricKind::PetzRenyi => RunMetric::PetzRenyi,
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

impl OutputFormat {
    pub fn extension(self) -> &'static str {
        match self {
            OutputFormat::Csv => "csv",
            OutputFormat::Json => "json",
        }
    }
}

impl FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => Err(Error::invalid(format!("unknown format '{other}'"))),
        }
    }
}

fn parse_noise_scaling(s: &str) -> Result<NoiseScaling> {
    match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
        "uniform" => Ok(NoiseScaling::Uniform),
        "halved-multimode" | "halved" => Ok(NoiseScaling::HalvedMultimode),
        other => Err(Error::invalid(format!("unknown noise scaling '{other}' (uniform, halved-multimode)"))),
    }
}

fn parse_diffusion(s: &str) -> Result<DiffusionForm> {
    match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
        "weak-coupling" | "weak" => Ok(DiffusionForm::WeakCoupling),
        "exact" => Ok(DiffusionForm::Exact),
        other => Err(Error::invalid(format!("unknown Δ_Γ form '{other}' (weak-coupling, exact)"))),
    }
}

fn parse_bool(s: &str) -> Result<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        other => Err(Error::invalid(format!("expected a boolean, got '{other}'"))),
    }
}

fn parse_num<T: FromStr>(key: &str, s: &str) -> Result<T> {
    s.trim().parse().map_err(|_| Error::invalid(format!("{key}: cannot parse '{}'", s.trim())))
}

/// A fully specified run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub preset: Option<Preset>,
    /// `(ρ, ρ′)` for fidelity and entropy, one state for negativity, none for coefficients.
    pub states: Vec<StateSpec>,
    pub bath: BathSpec,
    pub metric: RunMetric,
    pub kappa: f64,
    /// End of the grid in units of `1/ω_c`.
    pub t_max: f64,
    /// Number of grid intervals.
    pub steps: usize,
    pub output: Option<PathBuf>,
    pub format: OutputFormat,
    /// Use quadrature coefficients instead of the closed form.
    pub oracle: bool,
    pub noise_scaling: NoiseScaling,
    pub diffusion: DiffusionForm,
    /// Write a gnuplot script next to CSV output.
    pub plot_script: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig { preset: None, ..Preset::Fig2.config() }
    }
}

impl RunConfig {
    fn with_preset(mut self, preset: Preset) -> Self {
        self.preset = Some(preset);
        self
    }

    /// Start from the preset named in `o` (or the fig2 parameters without a
    /// preset) and apply every override.
    pub fn resolve(o: &Overrides) -> Result<Self> {
        let mut c = match o.preset {
            Some(p) => p.config(),
            None => RunConfig::default(),
        };
        if let Some(m) = o.metric {
            c.metric = m;
        }
        let family = o.state.or_else(|| c.states.first().map(|s| s.family));
        if o.state.is_some() || o.r1.is_some() || o.r2.is_some() || o.nbar.is_some() || o.nbar2.is_some() || o.metric.is_some()
        {
            let family = family.unwrap_or(StateFamily::Squeezed1);
            let r1 = o.r1.or_else(|| c.states.first().map(|s| s.r)).unwrap_or(2.0);
            let r2 = o.r2.or_else(|| c.states.get(1).map(|s| s.r)).unwrap_or(3.0);
            let n1 = o.nbar.or_else(|| c.states.first().map(|s| s.n_bar)).unwrap_or(0.0);
            let n2 = o.nbar2.or(o.nbar).or_else(|| c.states.get(1).map(|s| s.n_bar)).unwrap_or(n1);
            let make = |r: f64, n_bar: f64| StateSpec { family, r, n_bar };
            c.states = match c.metric {
                RunMetric::Coefficients => Vec::new(),
                RunMetric::LogNegativity => vec![make(r1, n1)],
                _ => vec![make(r1, n1), make(r2, n2)],
            };
        }
        if o.alpha.is_some() || o.temp.is_some() || o.omega0.is_some() || o.omega_c.is_some() {
            c.bath = BathSpec::new(
                o.alpha.unwrap_or(c.bath.alpha()),
                o.temp.unwrap_or(c.bath.temperature()),
                o.omega0.unwrap_or(c.bath.omega0()),
                o.omega_c.unwrap_or(c.bath.omega_c()),
            )?;
        }
        if let Some(k) = o.kappa {
            c.kappa = k;
        }
        if let Some(t) = o.t_max {
            c.t_max = t;
        }
        if let Some(s) = o.steps {
            c.steps = s;
        }
        if let Some(p) = &o.output {
            c.output = Some(p.clone());
        }
        if let Some(f) = o.format {
            c.format = f;
        }
        if let Some(v) = o.oracle {
            c.oracle = v;
        }
        if let Some(v) = o.noise_scaling {
            c.noise_scaling = v;
        }
        if let Some(v) = o.diffusion {
            c.diffusion = v;
        }
        if let Some(v) = o.plot_script {
            c.plot_script = v;
        }
        c.check()?;
        Ok(c)
    }

    /// Structural checks that make a configuration runnable.
    pub fn check(&self) -> Result<()> {
        if self.steps < 2 {
            return Err(Error::invalid(format!("steps must be at least 2, got {}", self.steps)));
        }
        if !(self.t_max > 0.0 && self.t_max.is_finite()) {
            return Err(Error::invalid(format!("tmax must be positive, got {}", self.t_max)));
        }
        for s in &self.states {
            s.validate()?;
        }
        let need = match self.metric {
            RunMetric::Coefficients => 0,
            RunMetric::LogNegativity => 1,
            _ => 2,
        };
        if self.states.len() != need {
            return Err(Error::invalid(format!("{} needs {need} state(s), got {}", self.metric, self.states.len())));
        }
        if self.metric == RunMetric::LogNegativity && self.states[0].family.n_modes() < 2 {
            return Err(Error::invalid("log negativity needs a state with at least two modes"));
        }
        if self.metric == RunMetric::PetzRenyi && !(self.kappa > 1.0 && self.kappa.is_finite()) {
            return Err(Error::invalid(format!("kappa must lie in (1, ∞), got {}", self.kappa)));
        }
        Ok(())
    }

    /// Channel with the configured source, form and noise scaling.
    pub fn channel(&self) -> Result<Channel> {
        let channel = if self.oracle {
            Channel::with_source(self.bath, CoefficientSource::Quadrature)
        } else {
            Channel::new(self.bath)?
        };
        Ok(channel.with_form(self.diffusion).with_scaling(self.noise_scaling))
    }

    /// Physical time grid `tω_c ∈ {0, …, t_max}` divided by `ω_c`.
    pub fn grid(&self) -> Result<Vec<f64>> {
        let wc = self.bath.omega_c();
        let grid = uniform_grid(self.t_max, self.t_max / self.steps as f64)?;
        Ok(grid.into_iter().map(|t| t / wc).collect())
    }
}

/// Partial settings from a config file, a sweep line or command-line flags.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub preset: Option<Preset>,
    pub state: Option<StateFamily>,
    pub r1: Option<f64>,
    pub r2: Option<f64>,
    pub nbar: Option<f64>,
    pub nbar2: Option<f64>,
    pub alpha: Option<f64>,
    pub temp: Option<f64>,
    pub omega0: Option<f64>,
    pub omega_c: Option<f64>,
    pub kappa: Option<f64>,
    pub metric: Option<RunMetric>,
    pub t_max: Option<f64>,
    pub steps: Option<usize>,
    pub output: Option<PathBuf>,
    pub format: Option<OutputFormat>,
    pub oracle: Option<bool>,
    pub noise_scaling: Option<NoiseScaling>,
    pub diffusion: Option<DiffusionForm>,
    pub plot_script: Option<bool>,
}

impl Overrides {
    /// Keys accepted by [`Overrides::set`], named after the command-line flags.
    pub const KEYS: [&'static str; 20] = [
        "preset",
        "state",
        "r1",
        "r2",
        "nbar",
        "nbar2",
        "alpha",
        "temp",
        "omega0",
        "omega-c",
        "kappa",
        "metric",
        "tmax",
        "steps",
        "output",
        "format",
        "oracle",
        "noise-scaling",
        "delta-gamma",
        "plot-script",
    ];

    /// Set one key from its textual value. Underscores and dashes in keys are interchangeable.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().to_ascii_lowercase().replace('_', "-");
        match key.as_str() {
            "preset" => self.preset = Some(value.parse()?),
            "state" => self.state = Some(value.parse()?),
            "r1" => self.r1 = Some(parse_num(&key, value)?),
            "r2" => self.r2 = Some(parse_num(&key, value)?),
            "nbar" => self.nbar = Some(parse_num(&key, value)?),
            "nbar2" => self.nbar2 = Some(parse_num(&key, value)?),
            "alpha" => self.alpha = Some(parse_num(&key, value)?),
            "temp" | "temperature" => self.temp = Some(parse_num(&key, value)?),
            "omega0" => self.omega0 = Some(parse_num(&key, value)?),
            "omega-c" => self.omega_c = Some(parse_num(&key, value)?),
            "kappa" => self.kappa = Some(parse_num(&key, value)?),
            "metric" => self.metric = Some(value.parse()?),
            "tmax" => self.t_max = Some(parse_num(&key, value)?),
            "steps" => self.steps = Some(parse_num(&key, value)?),
            "output" => self.output = Some(PathBuf::from(value.trim())),
            "format" => self.format = Some(value.parse()?),
            "oracle" => self.oracle = Some(parse_bool(value)?),
            "noise-scaling" => self.noise_scaling = Some(parse_noise_scaling(value)?),
            "delta-gamma" => self.diffusion = Some(parse_diffusion(value)?),
            "plot-script" => self.plot_script = Some(parse_bool(value)?),
            other => return Err(Error::invalid(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    /// Parse a flat `key = value` file. Blank lines and `#` comments are ignored.
    pub fn parse_config(text: &str) -> Result<Self> {
        let mut o = Overrides::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("line {}: expected key = value", n + 1)))?;
            o.set(key, value).map_err(|e| Error::invalid(format!("line {}: {e}", n + 1)))?;
        }
        Ok(o)
    }

    pub fn read_config(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
        Self::parse_config(&text)
    }

    /// `self` with every field that `top` sets replaced by `top`'s value.
    pub fn merged(&self, top: &Overrides) -> Overrides {
        macro_rules! pick {
            ($($f:ident),*) => { Overrides { $($f: top.$f.clone().or_else(|| self.$f.clone()),)* } };
        }
        pick!(
            preset, state, r1, r2, nbar, nbar2, alpha, temp, omega0, omega_c, kappa, metric, t_max, steps, output,
            format, oracle, noise_scaling, diffusion, plot_script
        )
    }
}

/// Values computed by a run.
#[derive(Debug, Clone, PartialEq)]
pub enum RunResult {
    Coefficients(ChannelCoefficients),
    Metric(MetricSeries),
}

/// Result of [`run`] with the coefficient source the channel settled on.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub result: RunResult,
    pub source: CoefficientSource,
}

impl RunOutput {
    /// Text in the configured format, as it would be written to a file.
    pub fn render(&self, config: &RunConfig) -> Result<String> {
        match config.format {
            OutputFormat::Csv => Ok(render_csv(&self.result, config.bath.omega_c())),
            OutputFormat::Json => render_json(&self.result, config, self.source),
        }
    }
}

#[derive(Serialize)]
struct JsonReport<'a> {
    config: &'a RunConfig,
    source: CoefficientSource,
    columns: Vec<&'static str>,
    t_omega_c: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    value: Option<&'a [Option<f64>]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    delta_plus_gamma: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    delta_minus_gamma: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    t_star: Option<f64>,
}

#[derive(Serialize)]
struct Sidecar<'a> {
    config: &'a RunConfig,
    source: CoefficientSource,
    columns: [&'static str; 2],
    t_star: Option<f64>,
}

fn csv_float(v: f64) -> String {
    format!("{v:?}")
}

/// Evaluate `config` without writing anything.
pub fn evaluate(config: &RunConfig) -> Result<RunOutput> {
    config.check()?;
    let channel = config.channel()?;
    let grid = config.grid()?;
    let result = match config.metric.kind() {
        None => RunResult::Coefficients(channel.accumulate(&grid)?),
        Some(metric) => {
            let request = SeriesRequest {
                metric,
                states: config.states.clone(),
                kappa: config.kappa,
                bipartition: Vec::new(),
            };
            RunResult::Metric(compute_series(&request, &channel, &grid)?)
        }
    };
    Ok(RunOutput { result, source: channel.source() })
}

/// CSV text of a result. Floats use the shortest representation that reads
/// back to the same binary64 value. Undefined values are empty cells.
pub fn render_csv(result: &RunResult, omega_c: f64) -> String {
    let mut out = String::new();
    match result {
        RunResult::Coefficients(c) => {
            out.push_str("t_omega_c,delta_plus_gamma,delta_minus_gamma\n");
            for i in 0..c.len() {
                out.push_str(&format!(
                    "{},{},{}\n",
                    csv_float(c.t[i] * omega_c),
                    csv_float(c.delta[i] + c.gamma[i]),
                    csv_float(c.delta[i] - c.gamma[i])
                ));
            }
        }
        RunResult::Metric(s) => {
            out.push_str("t_omega_c,value\n");
            for (t, v) in s.t.iter().zip(&s.values) {
                let cell = v.map(csv_float).unwrap_or_default();
                out.push_str(&format!("{},{}\n", csv_float(t * omega_c), cell));
            }
        }
    }
    out
}

/// JSON text of a result together with its configuration.
pub fn render_json(result: &RunResult, config: &RunConfig, source: CoefficientSource) -> Result<String> {
    let wc = config.bath.omega_c();
    let report = match result {
        RunResult::Coefficients(c) => JsonReport {
            config,
            source,
            columns: vec!["t_omega_c", "delta_plus_gamma", "delta_minus_gamma"],
            t_omega_c: c.t.iter().map(|t| t * wc).collect(),
            value: None,
            delta_plus_gamma: Some(c.delta.iter().zip(&c.gamma).map(|(d, g)| d + g).collect()),
            delta_minus_gamma: Some(c.delta.iter().zip(&c.gamma).map(|(d, g)| d - g).collect()),
            t_star: None,
        },
        RunResult::Metric(s) => JsonReport {
            config,
            source,
            columns: vec!["t_omega_c", "value"],
            t_omega_c: s.t.iter().map(|t| t * wc).collect(),
            value: Some(&s.values),
            delta_plus_gamma: None,
            delta_minus_gamma: None,
            t_star: s.t_star.map(|t| t * wc),
        },
    };
    serde_json::to_string_pretty(&report)
        .map(|s| s + "\n")
        .map_err(|e| Error::numerical(format!("JSON serialization failed: {e}")))
}

/// Generic gnuplot script plotting every value column of `csv` against the first.
pub fn plot_script(csv: &Path, result: &RunResult) -> String {
    let name = csv.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let series = match result {
        RunResult::Coefficients(_) => {
            format!("'{name}' using 1:2 with lines title 'Δ+γ', '{name}' using 1:3 with lines title 'Δ−γ'")
        }
        RunResult::Metric(s) => format!("'{name}' using 1:2 with lines title '{}'", s.metric),
    };
    format!("set datafile separator ','\nset key autotitle columnhead\nset xlabel 't ω_c'\nplot {series}\n")
}

/// Write `text` to `path` through a temporary file, so a failed run leaves nothing behind.
fn write_atomic(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = PathBuf::from(tmp);
    let written = fs::File::create(&tmp).and_then(|mut f| f.write_all(text.as_bytes()));
    if let Err(e) = written.and_then(|_| fs::rename(&tmp, path)) {
        let _ = fs::remove_file(&tmp);
        return Err(e.into());
    }
    Ok(())
}

fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Evaluate `config` and write the configured output, if any.
///
/// CSV output of a metric run gets a JSON sidecar with the configuration and
/// `t*` next to it. When the computation fails nothing is written and any
/// earlier file at the output path is removed.
pub fn run(config: &RunConfig) -> Result<RunOutput> {
    let evaluated = evaluate(config);
    let Some(path) = &config.output else {
        return evaluated;
    };
    let output = match evaluated {
        Ok(v) => v,
        Err(e) => {
            if e.exit_code() == 3 && path.exists() {
                warn!("removing stale output {}", path.display());
                let _ = fs::remove_file(path);
            }
            return Err(e);
        }
    };
    write_atomic(path, &output.render(config)?)?;
    if config.format == OutputFormat::Csv {
        if let RunResult::Metric(s) = &output.result {
            let sidecar = Sidecar {
                config,
                source: output.source,
                columns: ["t_omega_c", "value"],
                t_star: s.t_star.map(|t| t * config.bath.omega_c()),
            };
            let text = serde_json::to_string_pretty(&sidecar)
                .map_err(|e| Error::numerical(format!("JSON serialization failed: {e}")))?;
            write_atomic(&sidecar_path(path), &(text + "\n"))?;
        }
        if config.plot_script {
            write_atomic(&path.with_extension("gp"), &plot_script(path, &output.result))?;
        }
    }
    info!("wrote {}", path.display());
    Ok(output)
}

/// Severity of a [`ValidationReport`] entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Warning,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Finding {
    pub severity: Severity,
    pub message: String,
}

/// Outcome of [`validate`].
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
    /// Critical time in units of `1/ω_c`, for entropy runs.
    pub t_star: Option<f64>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.findings.is_empty()
    }

    pub fn has_errors(&self) -> bool {
        self.findings.iter().any(|f| f.severity == Severity::Error)
    }

    fn push(&mut self, severity: Severity, message: String) {
        self.findings.push(Finding { severity, message });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.findings.is_empty() {
            return writeln!(f, "ok");
        }
        for finding in &self.findings {
            let tag = match finding.severity {
                Severity::Warning => "warning",
                Severity::Error => "error",
            };
            writeln!(f, "{tag}: {}", finding.message)?;
        }
        Ok(())
    }
}

/// Check a configuration without running it.
///
/// Covers the structural checks of [`RunConfig::check`], bona-fide initial
/// states, the `κ` domain, the grid spacing against the closed-form floor
/// `t_min`, and for entropy runs whether any grid point lies beyond `t*`.
pub fn validate(config: &RunConfig) -> ValidationReport {
    let mut report = ValidationReport::default();
    if let Err(e) = config.check() {
        report.push(Severity::Error, e.to_string());
    }
    for (i, spec) in config.states.iter().enumerate() {
        match make_state(spec) {
            Ok(state) => {
                let bf = check_bona_fide(&state);
                if !bf.valid {
                    report.push(
                        Severity::Error,
                        format!("state {} is not bona fide (min eigenvalue {:e})", i + 1, bf.min_eigenvalue),
                    );
                }
            }
            Err(e) => report.push(Severity::Error, format!("state {}: {e}", i + 1)),
        }
    }
    let wc = config.bath.omega_c();
    let first = config.t_max / config.steps.max(1) as f64 / wc;
    let floor = t_min(&config.bath);
    if !config.oracle && first < floor {
        report.push(
            Severity::Warning,
            format!(
                "first grid step t = {first:e} lies below the closed-form floor t_min = {floor:e}; quadrature is used there"
            ),
        );
    }
    if config.metric == RunMetric::PetzRenyi && !report.has_errors() {
        let options = CriticalTimeOptions { t_max: config.t_max.max(CriticalTimeOptions::default().t_max), ..Default::default() };
        let t_star = config
            .channel()
            .and_then(|ch| critical_time((&config.states[0], &config.states[1]), &ch, config.kappa, &options));
        match t_star {
            Ok(t) => {
                let t = t * wc;
                report.t_star = Some(t);
                if config.t_max <= t {
                    report.push(
                        Severity::Warning,
                        format!("grid ends at tω_c = {} before the critical time t* = {t:.4}; every value is undefined", config.t_max),
                    );
                }
            }
            Err(Error::NotFound(msg)) => report.push(Severity::Warning, msg),
            Err(e) => report.push(Severity::Error, e.to_string()),
        }
    }
    report
}

/// One line of a sweep file: a label and the overrides it applies.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub label: String,
    pub overrides: Overrides,
}

/// Parse a sweep file. Each non-empty line holds whitespace-separated
/// `key=value` tokens. A value with commas expands the line into one point
/// per element, and several such keys expand into their product, in order.
pub fn parse_sweep(text: &str) -> Result<Vec<SweepPoint>> {
    let mut points = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut combos: Vec<Vec<(String, String)>> = vec![Vec::new()];
        for token in line.split_whitespace() {
            let (key, values) = token
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("sweep line {}: expected key=value, got '{token}'", n + 1)))?;
            let mut next = Vec::new();
            for combo in &combos {
                for v in values.split(',') {
                    let mut c = combo.clone();
                    c.push((key.to_string(), v.to_string()));
                    next.push(c);
                }
            }
            combos = next;
        }
        for combo in combos {
            let mut overrides = Overrides::default();
            for (k, v) in &combo {
                if k.trim().eq_ignore_ascii_case("output") {
                    return Err(Error::invalid(format!("sweep line {}: output is set by the sweep", n + 1)));
                }
                overrides.set(k, v).map_err(|e| Error::invalid(format!("sweep line {}: {e}", n + 1)))?;
            }
            let label = combo.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(" ");
            points.push(SweepPoint { label, overrides });
        }
    }
    if points.is_empty() {
        return Err(Error::invalid("sweep grid is empty"));
    }
    Ok(points)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ManifestEntry {
    pub index: usize,
    pub parameters: String,
    pub file: String,
    pub status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip)]
    pub exit_code: i32,
}

/// Outcome of [`sweep`]; also written as `manifest.json` in the output directory.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepManifest {
    pub entries: Vec<ManifestEntry>,
}

impl SweepManifest {
    pub fn failed(&self) -> usize {
        self.entries.iter().filter(|e| e.error.is_some()).count()
    }

    /// Largest exit code among failed points, 0 if all succeeded.
    pub fn exit_code(&self) -> i32 {
        self.entries.iter().map(|e| e.exit_code).max().unwrap_or(0)
    }
}

/// Run every point of a sweep on top of `base`, writing `point-NNN.<ext>`
/// files and `manifest.json` into `dir`. Points run in parallel. The manifest
/// keeps the order of `points`.
pub fn sweep(base: &Overrides, points: &[SweepPoint], dir: &Path) -> Result<SweepManifest> {
    if points.is_empty() {
        return Err(Error::invalid("sweep grid is empty"));
    }
    fs::create_dir_all(dir)?;
    let entries: Vec<ManifestEntry> = points
        .par_iter()
        .enumerate()
        .map(|(index, point)| {
            let mut merged = base.merged(&point.overrides);
            let format = merged.format.unwrap_or_default();
            let file = format!("point-{index:03}.{}", format.extension());
            merged.output = Some(dir.join(&file));
            let outcome = RunConfig::resolve(&merged).and_then(|c| run(&c));
            let (status, error, exit_code) = match outcome {
                Ok(_) => ("ok", None, 0),
                Err(e) => ("failed", Some(e.to_string()), e.exit_code()),
            };
            ManifestEntry { index, parameters: point.label.clone(), file, status, error, exit_code }
        })
        .collect();
    let manifest = SweepManifest { entries };
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::numerical(format!("JSON serialization failed: {e}")))?;
    write_atomic(&dir.join("manifest.json"), &(text + "\n"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_names_round_trip() {
        for p in Preset::ALL {
            assert_eq!(p.name().parse::<Preset>().unwrap(), p);
            assert_eq!(p.config().preset, Some(p));
            p.config().check().unwrap();
        }
        assert!("fig8".parse::<Preset>().is_err());
    }

    #[test]
    fn preset_parameters_follow_the_captions() {
        for p in Preset::ALL {
            let c = p.config();
            assert_eq!((c.bath.omega0(), c.bath.omega_c()), (7.0, 1.0));
            assert_eq!(c.bath.temperature(), 50.0);
        }
        assert_eq!(Preset::Fig1.config().bath.alpha(), 0.3);
        assert_eq!(Preset::Fig2.config().bath.alpha(), 0.1);
        assert_eq!(Preset::Fig5.config().bath.alpha(), 0.3);
        assert_eq!(Preset::Fig7Kappa3.config().kappa, 3.0);
        assert_eq!(Preset::Fig6.config().kappa, 2.0);
        let fig3 = Preset::Fig3.config();
        assert_eq!(fig3.states, vec![StateSpec::two_mode_squeezed(2.0), StateSpec::two_mode_squeezed(3.0)]);
        assert_eq!(Preset::Fig4.config().states, vec![StateSpec::two_mode_squeezed(2.0)]);
    }

    #[test]
    fn config_file_and_flags() {
        let file = Overrides::parse_config("# comment\npreset = fig5\nalpha = 0.15\n\ntemp=100 # inline\n").unwrap();
        let mut flags = Overrides::default();
        flags.set("alpha", "0.2").unwrap();
        let c = RunConfig::resolve(&file.merged(&flags)).unwrap();
        assert_eq!(c.bath.alpha(), 0.2);
        assert_eq!(c.bath.temperature(), 100.0);
        assert_eq!(c.metric, RunMetric::PetzRenyi);
        assert!(Overrides::parse_config("alpha 0.1").is_err());
        assert!(Overrides::parse_config("colour = red").is_err());
        assert!(Overrides::parse_config("alpha = x").is_err());
    }

    #[test]
    fn state_overrides() {
        let mut o = Overrides::default();
        o.set("preset", "fig2").unwrap();
        o.set("r1", "0.5").unwrap();
        let c = RunConfig::resolve(&o).unwrap();
        assert_eq!(c.states, vec![StateSpec::squeezed(0.5), StateSpec::squeezed(3.0)]);
        let mut o = Overrides::default();
        o.set("metric", "log_negativity").unwrap();
        o.set("state", "squeezed2").unwrap();
        o.set("r1", "1").unwrap();
        assert_eq!(RunConfig::resolve(&o).unwrap().states, vec![StateSpec::two_mode_squeezed(1.0)]);
        o.set("state", "squeezed1").unwrap();
        assert!(RunConfig::resolve(&o).is_err());
        let mut o = Overrides::default();
        o.set("state", "thermal").unwrap();
        o.set("nbar", "1").unwrap();
        o.set("nbar2", "2").unwrap();
        let c = RunConfig::resolve(&o).unwrap();
        assert_eq!((c.states[0].n_bar, c.states[1].n_bar), (1.0, 2.0));
    }

    #[test]
    fn invalid_values_are_rejected() {
        for (k, v) in [("steps", "1"), ("tmax", "0"), ("alpha", "1.5"), ("kappa", "0.5")] {
            let mut o = Overrides::default();
            o.set("preset", "fig5").unwrap();
            o.set(k, v).unwrap();
            let err = RunConfig::resolve(&o).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{k}={v}: {err}");
        }
    }

    #[test]
    fn csv_layout() {
        let mut c = Preset::Fig1.config();
        c.steps = 4;
        c.t_max = 1.0;
        let csv = evaluate(&c).unwrap().render(&c).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "t_omega_c,delta_plus_gamma,delta_minus_gamma");
        assert_eq!(lines.len(), 6);
        assert!(lines[1].starts_with("0.0,"));
        assert!(!csv.contains('\r'));
    }

    #[test]
    fn sweep_lines_expand() {
        let pts = parse_sweep("alpha=0.1,0.2 temp=50,100\n# c\nkappa=3\n").unwrap();
        let labels: Vec<&str> = pts.iter().map(|p| p.label.as_str()).collect();
        assert_eq!(
            labels,
            ["alpha=0.1 temp=50", "alpha=0.1 temp=100", "alpha=0.2 temp=50", "alpha=0.2 temp=100", "kappa=3"]
        );
        assert!(parse_sweep("\n\n").is_err());
        assert!(parse_sweep("output=x.csv").is_err());
    }

    #[test]
    fn kappa_domain_is_reported() {
        let mut c = Preset::Fig5.config();
        c.kappa = 0.5;
        let report = validate(&c);
        assert!(report.has_errors());
        assert!(report.to_string().contains("kappa"));
    }
}
