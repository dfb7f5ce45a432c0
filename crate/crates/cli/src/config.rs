//! Flat key-value run configuration: `section.key = value` lines with `#`
//! comments. Unknown keys are errors; constraint violations name the
//! failing inequality.

use hybridsim::diagnostics::{ExampleRates, Scenario, ScenarioConfig};
use hybridsim::state::check_density_matrix;
use hybridsim::{CMatrix, Complex64};
use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Syntax { line: usize, text: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: duplicate key `{key}`")]
    DuplicateKey { line: usize, key: String },
    #[error("line {line}: cannot parse `{value}` as {wanted} for `{key}`")]
    BadValue {
        line: usize,
        key: String,
        value: String,
        wanted: &'static str,
    },
    #[error("missing required key `scenario`")]
    MissingScenario,
    #[error("unknown scenario `{name}`")]
    UnknownScenario { name: String },
    #[error("constraint violated: {inequality}")]
    Constraint { inequality: String },
    #[error("`initial.n0` and `initial.q0` are mutually exclusive")]
    PositionConflict,
}

/// Initial classical position: a lattice site or a coordinate (rounded to
/// the nearest site).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Position {
    Site(i64),
    Coord(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Plot,
}

impl OutputFormat {
    fn name(&self) -> &'static str {
        match self {
            OutputFormat::Csv => "csv",
            OutputFormat::Plot => "plot",
        }
    }
}

/// Fully resolved run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub scenario: Scenario,
    pub rates: RatesConfig,
    pub grid: GridConfig,
    pub initial: InitialConfig,
    pub outputs: OutputConfig,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatesConfig {
    pub phi: f64,
    pub gamma: f64,
    pub lambda_up: Complex64,
    pub lambda_dn: Complex64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridConfig {
    pub n_half_width: i64,
    pub r0: f64,
    pub dt_factor: f64,
    pub t_end_phi_units: f64,
    pub snapshot_stride: usize,
    pub panel_times_phi: Vec<f64>,
    pub leak_tol: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitialConfig {
    pub rho0: CMatrix,
    pub position: Position,
    pub sigma0_sq_over_r0_sq: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputConfig {
    pub directory: PathBuf,
    pub formats: Vec<OutputFormat>,
}

impl RunConfig {
    /// Defaults of a named scenario.
    pub fn for_scenario(scenario: Scenario) -> Self {
        let sc = scenario.defaults();
        RunConfig {
            scenario,
            rates: RatesConfig {
                phi: sc.rates.phi,
                gamma: sc.rates.gamma,
                lambda_up: sc.rates.lambda_up,
                lambda_dn: sc.rates.lambda_dn,
            },
            grid: GridConfig {
                n_half_width: sc.half_width,
                r0: sc.r0,
                dt_factor: sc.dt_factor,
                t_end_phi_units: sc.t_end_phi,
                snapshot_stride: sc.snapshot_stride,
                panel_times_phi: sc.panel_times_phi,
                leak_tol: sc.leak_tol,
            },
            initial: InitialConfig {
                rho0: sc.rho0,
                position: Position::Site(sc.n0),
                sigma0_sq_over_r0_sq: sc.sigma0_sq_over_r0_sq,
            },
            outputs: OutputConfig {
                directory: PathBuf::from("out"),
                formats: vec![OutputFormat::Csv],
            },
        }
    }

    /// The scenario-runner view of this configuration.
    pub fn scenario_config(&self) -> ScenarioConfig {
        let n0 = match self.initial.position {
            Position::Site(n) => n,
            Position::Coord(q) => (q / self.grid.r0).round() as i64,
        };
        ScenarioConfig {
            rates: ExampleRates {
                phi: self.rates.phi,
                gamma: self.rates.gamma,
                lambda_up: self.rates.lambda_up,
                lambda_dn: self.rates.lambda_dn,
            },
            half_width: self.grid.n_half_width,
            r0: self.grid.r0,
            dt_factor: self.grid.dt_factor,
            t_end_phi: self.grid.t_end_phi_units,
            snapshot_stride: self.grid.snapshot_stride,
            rho0: self.initial.rho0.clone(),
            n0,
            sigma0_sq_over_r0_sq: self.initial.sigma0_sq_over_r0_sq,
            panel_times_phi: self.grid.panel_times_phi.clone(),
            leak_tol: self.grid.leak_tol,
        }
    }
}

/// All known keys, for error messages and serialization order.
const RHO0_KEYS: [&str; 8] = [
    "initial.rho0_pp_re",
    "initial.rho0_pp_im",
    "initial.rho0_pm_re",
    "initial.rho0_pm_im",
    "initial.rho0_mp_re",
    "initial.rho0_mp_im",
    "initial.rho0_mm_re",
    "initial.rho0_mm_im",
];

/// Parse the flat key-value format into a validated configuration with
/// scenario defaults filled in.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let mut entries: Vec<(String, String, usize)> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let stripped = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        };
        let trimmed = stripped.trim();
        if trimmed.is_empty() {
            continue;
        }
        let Some((key, value)) = trimmed.split_once('=') else {
            return Err(ConfigError::Syntax {
                line,
                text: trimmed.to_string(),
            });
        };
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if entries.iter().any(|(k, _, _)| *k == key) {
            return Err(ConfigError::DuplicateKey { line, key });
        }
        entries.push((key, value, line));
    }
    let scenario_entry = entries
        .iter()
        .find(|(k, _, _)| k == "scenario")
        .ok_or(ConfigError::MissingScenario)?;
    let scenario = Scenario::from_name(&scenario_entry.1).map_err(|_| {
        ConfigError::UnknownScenario {
            name: scenario_entry.1.clone(),
        }
    })?;
    let mut config = RunConfig::for_scenario(scenario);
    let mut saw_n0 = false;
    let mut saw_q0 = false;
    for (key, value, line) in &entries {
        if key == "scenario" {
            continue;
        }
        apply_key(&mut config, key, value, *line, &mut saw_n0, &mut saw_q0)?;
    }
    validate_constraints(&config)?;
    Ok(config)
}

/// Apply one `key = value` override onto an existing configuration (used
/// by both the parser and the command-line override list).
pub fn apply_override(config: &mut RunConfig, key: &str, value: &str) -> Result<(), ConfigError> {
    let (mut saw_n0, mut saw_q0) = (false, false);
    apply_key(config, key, value, 0, &mut saw_n0, &mut saw_q0)?;
    validate_constraints(config)
}

fn apply_key(
    config: &mut RunConfig,
    key: &str,
    value: &str,
    line: usize,
    saw_n0: &mut bool,
    saw_q0: &mut bool,
) -> Result<(), ConfigError> {
    let real = |wanted: &'static str| -> Result<f64, ConfigError> {
        value.parse::<f64>().map_err(|_| ConfigError::BadValue {
            line,
            key: key.to_string(),
            value: value.to_string(),
            wanted,
        })
    };
    let integer = || -> Result<i64, ConfigError> {
        value.parse::<i64>().map_err(|_| ConfigError::BadValue {
            line,
            key: key.to_string(),
            value: value.to_string(),
            wanted: "integer",
        })
    };
    match key {
        "rates.phi" => config.rates.phi = real("real")?,
        "rates.gamma" => config.rates.gamma = real("real")?,
        "rates.lambda_up_re" => config.rates.lambda_up.re = real("real")?,
        "rates.lambda_up_im" => config.rates.lambda_up.im = real("real")?,
        "rates.lambda_dn_re" => config.rates.lambda_dn.re = real("real")?,
        "rates.lambda_dn_im" => config.rates.lambda_dn.im = real("real")?,
        "grid.n_half_width" => config.grid.n_half_width = integer()?,
        "grid.r0" => config.grid.r0 = real("positive real")?,
        "grid.dt_factor" => config.grid.dt_factor = real("positive real")?,
        "grid.t_end_phi_units" => config.grid.t_end_phi_units = real("positive real")?,
        "grid.snapshot_stride" => {
            config.grid.snapshot_stride =
                integer()?
                    .try_into()
                    .map_err(|_| ConfigError::BadValue {
                        line,
                        key: key.to_string(),
                        value: value.to_string(),
                        wanted: "positive integer",
                    })?
        }
        "grid.leak_tol" => config.grid.leak_tol = real("real")?,
        "grid.panel_times_phi" => {
            let mut times = Vec::new();
            for part in value.split(',') {
                times.push(part.trim().parse::<f64>().map_err(|_| {
                    ConfigError::BadValue {
                        line,
                        key: key.to_string(),
                        value: value.to_string(),
                        wanted: "comma-separated reals",
                    }
                })?);
            }
            config.grid.panel_times_phi = times;
        }
        "initial.n0" => {
            if *saw_q0 {
                return Err(ConfigError::PositionConflict);
            }
            *saw_n0 = true;
            config.initial.position = Position::Site(integer()?);
        }
        "initial.q0" => {
            if *saw_n0 {
                return Err(ConfigError::PositionConflict);
            }
            *saw_q0 = true;
            config.initial.position = Position::Coord(real("real")?);
        }
        "initial.sigma0_sq_over_r0_sq" => {
            config.initial.sigma0_sq_over_r0_sq = real("nonnegative real")?
        }
        "outputs.directory" => config.outputs.directory = PathBuf::from(value),
        "outputs.formats" => {
            let mut formats = Vec::new();
            for part in value.split(',') {
                formats.push(match part.trim() {
                    "csv" => OutputFormat::Csv,
                    "plot" => OutputFormat::Plot,
                    other => {
                        return Err(ConfigError::BadValue {
                            line,
                            key: key.to_string(),
                            value: other.to_string(),
                            wanted: "`csv` or `plot`",
                        })
                    }
                });
            }
            config.outputs.formats = formats;
        }
        _ if RHO0_KEYS.contains(&key) => {
            let v = real("real")?;
            let pos = RHO0_KEYS.iter().position(|k| *k == key).unwrap();
            let (row, col) = [(0, 0), (0, 1), (1, 0), (1, 1)][pos / 2];
            let entry = &mut config.initial.rho0[(row, col)];
            if pos % 2 == 0 {
                entry.re = v;
            } else {
                entry.im = v;
            }
        }
        _ => {
            return Err(ConfigError::UnknownKey {
                line,
                key: key.to_string(),
            })
        }
    }
    Ok(())
}

fn validate_constraints(config: &RunConfig) -> Result<(), ConfigError> {
    let constraint = |ok: bool, inequality: String| -> Result<(), ConfigError> {
        if ok {
            Ok(())
        } else {
            Err(ConfigError::Constraint { inequality })
        }
    };
    let r = &config.rates;
    for (name, v) in [
        ("rates.phi", r.phi),
        ("rates.gamma", r.gamma),
        ("rates.lambda_up", r.lambda_up.norm()),
        ("rates.lambda_dn", r.lambda_dn.norm()),
    ] {
        constraint(v.is_finite(), format!("{name} must be finite"))?;
    }
    constraint(r.phi > 0.0, format!("rates.phi > 0 (got {})", r.phi))?;
    constraint(
        r.gamma >= 0.0,
        format!("rates.gamma >= 0 (got {})", r.gamma),
    )?;
    let g = &config.grid;
    constraint(
        g.n_half_width >= 4,
        format!("grid.n_half_width >= 4 (got {})", g.n_half_width),
    )?;
    constraint(g.r0 > 0.0, format!("grid.r0 > 0 (got {})", g.r0))?;
    constraint(
        g.dt_factor > 0.0,
        format!("grid.dt_factor > 0 (got {})", g.dt_factor),
    )?;
    constraint(
        g.t_end_phi_units > 0.0,
        format!("grid.t_end_phi_units > 0 (got {})", g.t_end_phi_units),
    )?;
    constraint(
        g.snapshot_stride >= 1,
        format!("grid.snapshot_stride >= 1 (got {})", g.snapshot_stride),
    )?;
    constraint(
        config.initial.sigma0_sq_over_r0_sq >= 0.0,
        format!(
            "initial.sigma0_sq_over_r0_sq >= 0 (got {})",
            config.initial.sigma0_sq_over_r0_sq
        ),
    )?;
    check_density_matrix(2, &config.initial.rho0).map_err(|e| ConfigError::Constraint {
        inequality: format!("initial.rho0 must be a density matrix: {e}"),
    })?;
    Ok(())
}

/// Canonical text form; `parse_config(serialize_config(c)) == c`.
pub fn serialize_config(config: &RunConfig) -> String {
    let mut out = String::new();
    let mut push = |key: &str, value: String| {
        out.push_str(key);
        out.push_str(" = ");
        out.push_str(&value);
        out.push('\n');
    };
    push("scenario", config.scenario.name().to_string());
    push("rates.phi", format!("{:?}", config.rates.phi));
    push("rates.gamma", format!("{:?}", config.rates.gamma));
    push("rates.lambda_up_re", format!("{:?}", config.rates.lambda_up.re));
    push("rates.lambda_up_im", format!("{:?}", config.rates.lambda_up.im));
    push("rates.lambda_dn_re", format!("{:?}", config.rates.lambda_dn.re));
    push("rates.lambda_dn_im", format!("{:?}", config.rates.lambda_dn.im));
    push("grid.n_half_width", config.grid.n_half_width.to_string());
    push("grid.r0", format!("{:?}", config.grid.r0));
    push("grid.dt_factor", format!("{:?}", config.grid.dt_factor));
    push(
        "grid.t_end_phi_units",
        format!("{:?}", config.grid.t_end_phi_units),
    );
    push(
        "grid.snapshot_stride",
        config.grid.snapshot_stride.to_string(),
    );
    push(
        "grid.panel_times_phi",
        config
            .grid
            .panel_times_phi
            .iter()
            .map(|t| format!("{t:?}"))
            .collect::<Vec<_>>()
            .join(","),
    );
    push("grid.leak_tol", format!("{:?}", config.grid.leak_tol));
    for (idx, key) in RHO0_KEYS.iter().enumerate() {
        let (row, col) = [(0, 0), (0, 1), (1, 0), (1, 1)][idx / 2];
        let entry = config.initial.rho0[(row, col)];
        let v = if idx % 2 == 0 { entry.re } else { entry.im };
        push(key, format!("{v:?}"));
    }
    match config.initial.position {
        Position::Site(n) => push("initial.n0", n.to_string()),
        Position::Coord(q) => push("initial.q0", format!("{q:?}")),
    }
    push(
        "initial.sigma0_sq_over_r0_sq",
        format!("{:?}", config.initial.sigma0_sq_over_r0_sq),
    );
    push(
        "outputs.directory",
        config.outputs.directory.display().to_string(),
    );
    push(
        "outputs.formats",
        config
            .outputs
            .formats
            .iter()
            .map(|f| f.name())
            .collect::<Vec<_>>()
            .join(","),
    );
    out
}
