//! Line-oriented run configuration: one `section.key = value` per line,
//! `#` comments, decimal or scientific reals, `true|false` booleans.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::autodiff::Activation;
use crate::lbm::{tau_from_viscosity, FlowParams, CS2, DEFAULT_INLET_RAMP};
use crate::pinn::{Architecture, ModelOptions, SamplingConfig, Scales, Strategy, TrainConfig};
use crate::surface::FractalSurfaceSpec;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("line {line}: {key}: {message}")]
pub struct ConfigError {
    /// 1-based; 0 when the key is absent from the text.
    pub line: usize,
    pub key: String,
    pub message: String,
}

fn err(line: usize, key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError {
        line,
        key: key.to_string(),
        message: message.into(),
    }
}

pub const SECTIONS: [&str; 8] = [
    "surface", "lattice", "flow", "network", "training", "sampling", "data", "run",
];

/// How the viscosity was specified; the other of ν and Re is derived.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Viscosity {
    Nu(f64),
    Re(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatticeConfig {
    pub nx: usize,
    pub ny: usize,
    /// Mean gap H (lattice units).
    pub mean_gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowConfig {
    pub inlet_speed: f64,
    pub viscosity: Viscosity,
    pub outlet_pressure: f64,
    pub steps: u64,
    pub interval: u64,
    pub inlet_ramp: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub activation: Activation,
    pub geometry_inputs: bool,
    pub reynolds_input: bool,
    pub kinetic_head: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    /// Training snapshots taken from the end of the run.
    pub snapshots: usize,
    /// Labeled samples drawn from them; 0 keeps every fluid node.
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub surface: FractalSurfaceSpec,
    pub lattice: LatticeConfig,
    pub flow: FlowConfig,
    pub network: NetworkConfig,
    pub training: TrainConfig,
    pub sampling: SamplingConfig,
    pub data: DataConfig,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let training = TrainConfig::default();
        Self {
            surface: FractalSurfaceSpec::default(),
            lattice: LatticeConfig {
                nx: 200,
                ny: 50,
                mean_gap: 40.0,
            },
            flow: FlowConfig {
                inlet_speed: 0.03,
                viscosity: Viscosity::Re(10.0),
                outlet_pressure: CS2,
                steps: 40_000,
                interval: 1000,
                inlet_ramp: DEFAULT_INLET_RAMP,
            },
            network: NetworkConfig {
                hidden_layers: 8,
                hidden_width: 128,
                activation: Activation::Tanh,
                geometry_inputs: false,
                reynolds_input: false,
                kinetic_head: false,
            },
            training,
            sampling: SamplingConfig::default(),
            data: DataConfig {
                snapshots: 4,
                samples: 2000,
            },
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn viscosity(&self) -> f64 {
        match self.flow.viscosity {
            Viscosity::Nu(nu) => nu,
            Viscosity::Re(re) => self.flow.inlet_speed * self.lattice.mean_gap / re,
        }
    }

    pub fn reynolds(&self) -> f64 {
        match self.flow.viscosity {
            Viscosity::Nu(nu) => self.flow.inlet_speed * self.lattice.mean_gap / nu,
            Viscosity::Re(re) => re,
        }
    }

    pub fn flow_params(&self) -> Result<FlowParams, crate::lbm::LbmError> {
        let f = &self.flow;
        let p = match f.viscosity {
            Viscosity::Nu(nu) => FlowParams::from_viscosity(
                f.inlet_speed,
                self.lattice.mean_gap,
                nu,
                f.outlet_pressure,
            )?,
            Viscosity::Re(re) => FlowParams::from_reynolds(
                f.inlet_speed,
                self.lattice.mean_gap,
                re,
                f.outlet_pressure,
            )?,
        };
        Ok(p.with_inlet_ramp(f.inlet_ramp))
    }

    pub fn scales(&self) -> Scales {
        Scales {
            length: self.lattice.mean_gap,
            velocity: self.flow.inlet_speed,
            outlet_pressure: self.flow.outlet_pressure,
            reynolds: self.reynolds(),
        }
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            hidden_layers: self.network.hidden_layers,
            hidden_width: self.network.hidden_width,
            activation: self.network.activation,
            init_seed: self.seed,
        }
    }

    pub fn model_options(&self) -> ModelOptions {
        ModelOptions {
            kinetic_head: self.network.kinetic_head,
            geometry: self
                .network
                .geometry_inputs
                .then_some((self.surface.amplitude, self.surface.fractal_dimension)),
            reynolds_input: self.network.reynolds_input,
        }
    }

    /// Sampling settings with the run seed applied.
    pub fn sampling_config(&self) -> SamplingConfig {
        SamplingConfig {
            seed: self.seed,
            ..self.sampling
        }
    }

    /// Training settings with the run seed applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.training
        }
    }

    /// Derived quantities, one `name = value` per line.
    pub fn derived_summary(&self) -> String {
        let nu = self.viscosity();
        let tau = tau_from_viscosity(nu).map_or(f64::NAN, |t| t);
        format!("Re = {}\nnu = {}\ntau = {}\n", self.reynolds(), nu, tau)
    }

    pub fn hash(&self) -> u64 {
        fnv1a(serialize(self).as_bytes())
    }
}

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn real(s: &str) -> Result<f64, String> {
    let v: f64 = s
        .parse()
        .map_err(|_| format!("`{s}` is not a real number"))?;
    if !v.is_finite() {
        return Err(format!("`{s}` is not finite"));
    }
    Ok(v)
}

fn uint<T: std::str::FromStr>(s: &str) -> Result<T, String> {
    s.parse()
        .map_err(|_| format!("`{s}` is not a non-negative integer"))
}

fn int(s: &str) -> Result<i32, String> {
    s.parse().map_err(|_| format!("`{s}` is not an integer"))
}

fn boolean(s: &str) -> Result<bool, String> {
    match s {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("`{s}` is not true or false")),
    }
}

/// Applies one key; `Ok(false)` for an unknown key.
fn apply(
    c: &mut RunConfig,
    key: &str,
    v: &str,
    nu: &mut Option<f64>,
    re: &mut Option<f64>,
) -> Result<bool, String> {
    let t = &mut c.training;
    let s = &mut c.sampling;
    match key {
        "surface.amplitude" => c.surface.amplitude = real(v)?,
        "surface.gamma" => c.surface.gamma = real(v)?,
        "surface.fractal_dimension" => c.surface.fractal_dimension = real(v)?,
        "surface.n_min" => c.surface.n_min = int(v)?,
        "surface.n_max" => c.surface.n_max = int(v)?,
        "surface.phase_seed" => c.surface.phase_seed = uint(v)?,
        "lattice.nx" => c.lattice.nx = uint(v)?,
        "lattice.ny" => c.lattice.ny = uint(v)?,
        "lattice.H" => c.lattice.mean_gap = real(v)?,
        "flow.U_i" => c.flow.inlet_speed = real(v)?,
        "flow.nu" => *nu = Some(real(v)?),
        "flow.Re" => *re = Some(real(v)?),
        "flow.p0" => c.flow.outlet_pressure = real(v)?,
        "flow.steps" => c.flow.steps = uint(v)?,
        "flow.interval" => c.flow.interval = uint(v)?,
        "flow.inlet_ramp" => c.flow.inlet_ramp = uint(v)?,
        "network.hidden_layers" => c.network.hidden_layers = uint(v)?,
        "network.hidden_width" => c.network.hidden_width = uint(v)?,
        "network.activation" => {
            c.network.activation =
                Activation::parse(v).ok_or_else(|| format!("unknown activation `{v}`"))?
        }
        "network.geometry_inputs" => c.network.geometry_inputs = boolean(v)?,
        "network.reynolds_input" => c.network.reynolds_input = boolean(v)?,
        "network.kinetic_head" => c.network.kinetic_head = boolean(v)?,
        "training.adam_epochs" => t.adam_iters = uint(v)?,
        "training.learning_rate" => t.learning_rate = real(v)?,
        "training.decay" => t.decay = real(v)?,
        "training.decay_interval" => t.decay_interval = uint(v)?,
        "training.data_batch" => t.data_batch = uint(v)?,
        "training.colloc_batch" => t.colloc_batch = uint(v)?,
        "training.boundary_batch" => t.boundary_batch = uint(v)?,
        "training.lbfgs_iters" => t.lbfgs.max_iters = uint(v)?,
        "training.lbfgs_history" => t.lbfgs.history = uint(v)?,
        "training.line_search_c1" => t.lbfgs.c1 = real(v)?,
        "training.line_search_c2" => t.lbfgs.c2 = real(v)?,
        "training.lambda_data" => t.weights.data = real(v)?,
        "training.lambda_physics" => t.weights.physics = real(v)?,
        "training.lambda_cont" => t.weights.cont = real(v)?,
        "training.lambda_bc" => t.weights.bc = real(v)?,
        "training.lambda_moment" => t.weights.moment = real(v)?,
        "sampling.strategy" => {
            s.strategy = Strategy::parse(v).ok_or_else(|| format!("unknown strategy `{v}`"))?
        }
        "sampling.n_points" => s.n_points = uint(v)?,
        "sampling.interior_fraction" => s.interior_fraction = real(v)?,
        "sampling.band_width" => s.band_width = real(v)?,
        "sampling.n_wall" => s.n_wall = uint(v)?,
        "sampling.n_inlet" => s.n_inlet = uint(v)?,
        "sampling.n_outlet" => s.n_outlet = uint(v)?,
        "sampling.n_initial" => s.n_initial = uint(v)?,
        "data.snapshots" => c.data.snapshots = uint(v)?,
        "data.samples" => c.data.samples = uint(v)?,
        "run.seed" => c.seed = uint(v)?,
        _ => return Ok(false),
    }
    Ok(true)
}

const REQUIRED: [&str; 6] = [
    "lattice.nx",
    "lattice.ny",
    "lattice.H",
    "flow.U_i",
    "flow.steps",
    "flow.interval",
];

pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let mut cfg = RunConfig::default();
    let mut lines: BTreeMap<String, usize> = BTreeMap::new();
    let mut nu = None;
    let mut re = None;
    for (n, raw) in text.lines().enumerate() {
        let n = n + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(err(n, line, "expected `section.key = value`"));
        };
        let (key, value) = (key.trim(), value.trim());
        let Some((section, _)) = key.split_once('.') else {
            return Err(err(n, key, "key has no section prefix"));
        };
        if !SECTIONS.contains(&section) {
            return Err(err(n, key, format!("unknown section `{section}`")));
        }
        if let Some(prev) = lines.get(key) {
            return Err(err(
                n,
                key,
                format!("duplicate key (first set on line {prev})"),
            ));
        }
        match apply(&mut cfg, key, value, &mut nu, &mut re) {
            Ok(true) => {}
            Ok(false) => return Err(err(n, key, "unknown key")),
            Err(m) => return Err(err(n, key, m)),
        }
        lines.insert(key.to_string(), n);
    }
    for section in SECTIONS {
        if !lines
            .keys()
            .any(|k| k.split_once('.').is_some_and(|(s, _)| s == section))
        {
            return Err(err(0, section, "missing section"));
        }
    }
    for key in REQUIRED {
        if !lines.contains_key(key) {
            return Err(err(0, key, "required key missing"));
        }
    }
    let line_of = |k: &str| lines.get(k).copied().unwrap_or(0);
    cfg.flow.viscosity = match (nu, re) {
        (Some(nu), None) => Viscosity::Nu(nu),
        (None, Some(re)) => Viscosity::Re(re),
        (Some(nu), Some(re)) => {
            let implied = cfg.flow.inlet_speed * cfg.lattice.mean_gap / nu;
            if (implied - re).abs() > 1e-9 * re.abs() {
                return Err(err(
                    line_of("flow.Re"),
                    "flow.Re",
                    format!("Re = {re} disagrees with U_i*H/nu = {implied}"),
                ));
            }
            Viscosity::Nu(nu)
        }
        (None, None) => return Err(err(0, "flow.nu", "one of flow.nu or flow.Re is required")),
    };
    validate(&cfg, &line_of)?;
    Ok(cfg)
}

fn validate(c: &RunConfig, line_of: &dyn Fn(&str) -> usize) -> Result<(), ConfigError> {
    let fail = |key: &str, m: String| Err(err(line_of(key), key, m));
    if c.lattice.nx < 3 {
        return fail("lattice.nx", format!("{} < 3", c.lattice.nx));
    }
    if c.lattice.ny < 5 {
        return fail("lattice.ny", format!("{} < 5", c.lattice.ny));
    }
    if !(c.lattice.mean_gap > 0.0 && c.lattice.mean_gap <= (c.lattice.ny - 2) as f64) {
        return fail(
            "lattice.H",
            format!("{} outside (0, ny-2]", c.lattice.mean_gap),
        );
    }
    if let Err(e) = c.surface.validate() {
        return fail("surface.amplitude", e.to_string());
    }
    if !(c.flow.inlet_speed > 0.0) {
        return fail("flow.U_i", format!("{} must be > 0", c.flow.inlet_speed));
    }
    if let Err(e) = c.flow_params() {
        let key = match c.flow.viscosity {
            Viscosity::Nu(_) => "flow.nu",
            Viscosity::Re(_) => "flow.Re",
        };
        let key = if line_of(key) == 0 { "flow.U_i" } else { key };
        return fail(key, e.to_string());
    }
    if c.flow.interval == 0 || c.flow.interval > c.flow.steps {
        return fail(
            "flow.interval",
            format!("{} outside 1..=steps", c.flow.interval),
        );
    }
    if c.network.hidden_layers == 0 || c.network.hidden_width == 0 {
        return fail(
            "network.hidden_layers",
            "network needs at least one hidden unit".into(),
        );
    }
    if let Err(e) = c.training.validate() {
        let key = match e {
            crate::pinn::PinnError::Config(ref m) if m.contains("learning") => {
                "training.learning_rate"
            }
            crate::pinn::PinnError::Config(ref m) if m.contains("decay factor") => "training.decay",
            crate::pinn::PinnError::Config(ref m) if m.contains("decay interval") => {
                "training.decay_interval"
            }
            crate::pinn::PinnError::Config(ref m) if m.contains("history") => {
                "training.lbfgs_history"
            }
            crate::pinn::PinnError::Config(ref m) if m.contains("line-search") => {
                "training.line_search_c1"
            }
            _ => "training.lambda_data",
        };
        return fail(key, e.to_string());
    }
    if let Err(e) = c.sampling.validate() {
        return fail("sampling.n_points", e.to_string());
    }
    if c.data.snapshots == 0 {
        return fail(
            "data.snapshots",
            "need at least one training snapshot".into(),
        );
    }
    Ok(())
}

/// Canonical text: every key in a fixed order, reals in shortest
/// round-trip form.
pub fn serialize(c: &RunConfig) -> String {
    let mut s = String::new();
    let mut put = |k: &str, v: String| {
        let _ = writeln!(s, "{k} = {v}");
    };
    let r = |v: f64| format!("{v:?}");
    put("surface.amplitude", r(c.surface.amplitude));
    put("surface.gamma", r(c.surface.gamma));
    put("surface.fractal_dimension", r(c.surface.fractal_dimension));
    put("surface.n_min", c.surface.n_min.to_string());
    put("surface.n_max", c.surface.n_max.to_string());
    put("surface.phase_seed", c.surface.phase_seed.to_string());
    put("lattice.nx", c.lattice.nx.to_string());
    put("lattice.ny", c.lattice.ny.to_string());
    put("lattice.H", r(c.lattice.mean_gap));
    put("flow.U_i", r(c.flow.inlet_speed));
    match c.flow.viscosity {
        Viscosity::Nu(nu) => put("flow.nu", r(nu)),
        Viscosity::Re(re) => put("flow.Re", r(re)),
    }
    put("flow.p0", r(c.flow.outlet_pressure));
    put("flow.steps", c.flow.steps.to_string());
    put("flow.interval", c.flow.interval.to_string());
    put("flow.inlet_ramp", c.flow.inlet_ramp.to_string());
    put("network.hidden_layers", c.network.hidden_layers.to_string());
    put("network.hidden_width", c.network.hidden_width.to_string());
    put(
        "network.activation",
        c.network.activation.name().to_string(),
    );
    put(
        "network.geometry_inputs",
        c.network.geometry_inputs.to_string(),
    );
    put(
        "network.reynolds_input",
        c.network.reynolds_input.to_string(),
    );
    put("network.kinetic_head", c.network.kinetic_head.to_string());
    let t = &c.training;
    put("training.adam_epochs", t.adam_iters.to_string());
    put("training.learning_rate", r(t.learning_rate));
    put("training.decay", r(t.decay));
    put("training.decay_interval", t.decay_interval.to_string());
    put("training.data_batch", t.data_batch.to_string());
    put("training.colloc_batch", t.colloc_batch.to_string());
    put("training.boundary_batch", t.boundary_batch.to_string());
    put("training.lbfgs_iters", t.lbfgs.max_iters.to_string());
    put("training.lbfgs_history", t.lbfgs.history.to_string());
    put("training.line_search_c1", r(t.lbfgs.c1));
    put("training.line_search_c2", r(t.lbfgs.c2));
    put("training.lambda_data", r(t.weights.data));
    put("training.lambda_physics", r(t.weights.physics));
    put("training.lambda_cont", r(t.weights.cont));
    put("training.lambda_bc", r(t.weights.bc));
    put("training.lambda_moment", r(t.weights.moment));
    let sm = &c.sampling;
    put("sampling.strategy", sm.strategy.name().to_string());
    put("sampling.n_points", sm.n_points.to_string());
    put("sampling.interior_fraction", r(sm.interior_fraction));
    put("sampling.band_width", r(sm.band_width));
    put("sampling.n_wall", sm.n_wall.to_string());
    put("sampling.n_inlet", sm.n_inlet.to_string());
    put("sampling.n_outlet", sm.n_outlet.to_string());
    put("sampling.n_initial", sm.n_initial.to_string());
    put("data.snapshots", c.data.snapshots.to_string());
    put("data.samples", c.data.samples.to_string());
    put("run.seed", c.seed.to_string());
    s
}

/// Replaces or appends `key = value` in config text, keeping everything
/// else (used by sweeps to derive per-leg configs).
pub fn override_key(text: &str, key: &str, value: &str) -> String {
    let mut out = String::new();
    let mut done = false;
    for line in text.lines() {
        let body = line.split('#').next().unwrap_or("");
        let matches = body.split_once('=').is_some_and(|(k, _)| k.trim() == key);
        if matches && !done {
            let _ = writeln!(out, "{key} = {value}");
            done = true;
        } else if !matches {
            out.push_str(line);
            out.push('\n');
        }
    }
    if !done {
        let _ = writeln!(out, "{key} = {value}");
    }
    out
}
