//! Scenario execution and serialization of trajectories and reports to
//! stable on-disk formats.
//!
//! Tabular files are comma-separated text with one row per `(t, n)` and a
//! fixed column order, printed with 12 significant digits; rerunning an
//! identical configuration reproduces them byte for byte. The summary is
//! a structured hierarchical text document (the only place a timestamp
//! appears).

use crate::config::{serialize_config, ConfigError, OutputFormat, RunConfig};
use hybridsim::diagnostics::{
    run_scenario, ComparisonReport, DiagnosticsError, PositivityReport, ScenarioBundle,
};
use hybridsim::evolution::{EvolutionError, Trajectory};
use hybridsim::mechanisms::MechanismError;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Environment variable overriding the output directory.
pub const OUT_DIR_ENV: &str = "HYBRIDSIM_OUT_DIR";

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Run(#[from] DiagnosticsError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    /// Exit-code mapping: 2 configuration, 3 complete-positivity
    /// rejection, 4 numerical failure, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Run(DiagnosticsError::Mechanism(
                MechanismError::CpViolation { .. } | MechanismError::NotPositive { .. },
            )) => 3,
            CliError::Run(DiagnosticsError::Diffusive(
                hybridsim::diffusive::DiffusiveError::CpViolation { .. },
            )) => 3,
            CliError::Run(_) => 4,
            CliError::Io { .. } => 1,
        }
    }

    /// Short machine-readable kind tag for the summary error record.
    pub fn kind(&self) -> &'static str {
        match self.exit_code() {
            2 => "config-error",
            3 => "cp-violation",
            4 => "numerical-failure",
            _ => "io-error",
        }
    }
}

/// Paths produced by a run.
#[derive(Debug)]
pub struct RunArtifacts {
    pub out_dir: PathBuf,
    pub trajectory_files: Vec<PathBuf>,
    pub summary: PathBuf,
    pub plot_script: Option<PathBuf>,
}

/// 12 significant digits, stable across runs (negative zero normalized).
fn sig(x: f64) -> String {
    let x = if x == 0.0 { 0.0 } else { x };
    format!("{x:.11e}")
}

fn opt_time(phi: f64, t: Option<f64>) -> (String, String) {
    match t {
        Some(t) => (sig(t), sig(t * phi)),
        None => ("none".into(), "none".into()),
    }
}

fn write_file(path: &Path, content: &str) -> Result<(), CliError> {
    fs::write(path, content).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Run the configured scenario and write all artifacts. On failure the
/// summary still lands on disk with a machine-readable error record.
pub fn execute(config: &RunConfig) -> Result<RunArtifacts, CliError> {
    let out_dir = config.outputs.directory.clone();
    fs::create_dir_all(&out_dir).map_err(|source| CliError::Io {
        path: out_dir.clone(),
        source,
    })?;
    let summary_path = out_dir.join("summary.txt");
    let bundle = match run_scenario(config.scenario, config.scenario_config()) {
        Ok(b) => b,
        Err(e) => {
            let err = CliError::Run(e);
            let summary = error_summary(config, &err);
            write_file(&summary_path, &summary)?;
            return Err(err);
        }
    };

    let phi = config.rates.phi;
    let panels: Vec<f64> = config
        .grid
        .panel_times_phi
        .iter()
        .map(|pt| pt / phi)
        .filter(|&t| t <= config.grid.t_end_phi_units / phi + 1e-12)
        .collect();
    let mut trajectory_files = Vec::new();
    let mut flavors: Vec<(&str, &Trajectory)> = vec![("discrete", &bundle.discrete)];
    if let Some(t) = &bundle.diffusive {
        flavors.push(("diffusive", t));
    }
    if let Some(t) = &bundle.qfp {
        flavors.push(("qfp", t));
    }
    for (name, trajectory) in &flavors {
        let path = out_dir.join(format!("{}_{name}.csv", config.scenario.name()));
        write_file(&path, &trajectory_table(trajectory, &panels)?)?;
        trajectory_files.push(path);
    }

    let summary = bundle_summary(config, &bundle);
    write_file(&summary_path, &summary)?;

    let plot_script = if config.outputs.formats.contains(&OutputFormat::Plot) {
        let path = out_dir.join("plot.py");
        write_file(&path, &plot_script(config, &flavors))?;
        Some(path)
    } else {
        None
    };

    Ok(RunArtifacts {
        out_dir,
        trajectory_files,
        summary: summary_path,
        plot_script,
    })
}

/// One table: header plus a row per retained snapshot and site.
fn trajectory_table(trajectory: &Trajectory, panels: &[f64]) -> Result<String, CliError> {
    let selected = trajectory
        .select_times(panels)
        .map_err(|e: EvolutionError| CliError::Run(e.into()))?;
    let mut out = String::from("t,n,q,p_plus,p_minus,re_c,im_c,det\n");
    for snap in selected.snapshots() {
        let lattice = *snap.lattice();
        let (pp, pm, cs) = snap
            .matrix_elements()
            .map_err(|e| CliError::Run(e.into()))?;
        let det = snap
            .determinant_field()
            .map_err(|e| CliError::Run(e.into()))?;
        for (idx, n) in lattice.sites().enumerate() {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                sig(snap.time()),
                n,
                sig(lattice.coord(n)),
                sig(pp[idx]),
                sig(pm[idx]),
                sig(cs[idx].re),
                sig(cs[idx].im),
                sig(det[idx]),
            );
        }
    }
    Ok(out)
}

fn indent_block(out: &mut String, text: &str) {
    for line in text.lines() {
        let _ = writeln!(out, "  {line}");
    }
}

fn unix_timestamp() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn error_summary(config: &RunConfig, err: &CliError) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "run:");
    let _ = writeln!(out, "  scenario = {}", config.scenario.name());
    let _ = writeln!(out, "  status = error");
    let _ = writeln!(out, "  generated_unix = {}", unix_timestamp());
    let _ = writeln!(out, "error:");
    let _ = writeln!(out, "  code = {}", err.exit_code());
    let _ = writeln!(out, "  kind = {}", err.kind());
    let _ = writeln!(out, "  message = {err}");
    let _ = writeln!(out, "config:");
    indent_block(&mut out, &serialize_config(config));
    out
}

fn positivity_section(out: &mut String, label: &str, phi: f64, report: &PositivityReport) {
    let _ = writeln!(out, "  {label}:");
    let (t_abs, t_phi) = opt_time(phi, report.t_star_numeric);
    let _ = writeln!(out, "    t_star_numeric = {t_abs}");
    let _ = writeln!(out, "    t_star_numeric_phi_units = {t_phi}");
    let (o_abs, o_phi) = opt_time(phi, report.t_star_origin);
    let _ = writeln!(out, "    t_star_origin = {o_abs}");
    let _ = writeln!(out, "    t_star_origin_phi_units = {o_phi}");
    if let Some(analytic) = report.analytic_t_star {
        let _ = writeln!(out, "    analytic_t_star_phi_units = {}", sig(analytic * phi));
    }
    if let Some(gap) = report.relative_gap {
        let _ = writeln!(out, "    origin_vs_analytic_relative_gap = {}", sig(gap));
    }
    let min = report
        .min_det_over_time
        .iter()
        .map(|&(_, v, _)| v)
        .fold(f64::INFINITY, f64::min);
    let _ = writeln!(out, "    min_det_over_run = {}", sig(min));
    let _ = writeln!(out, "    resolution_warning = {}", report.resolution_warning);
}

fn comparison_section(out: &mut String, cmp: &ComparisonReport) {
    let _ = writeln!(out, "comparison:");
    for (label, err) in [
        ("p_plus", &cmp.p_plus),
        ("p_minus", &cmp.p_minus),
        ("re_c", &cmp.re_c),
        ("im_c", &cmp.im_c),
        ("det", &cmp.det),
    ] {
        let _ = writeln!(
            out,
            "  {label}: sup = {}, l1 = {}, peak = {}, sup_over_peak = {}",
            sig(err.sup),
            sig(err.l1),
            sig(err.peak),
            sig(err.rel()),
        );
    }
}

fn bundle_summary(config: &RunConfig, bundle: &ScenarioBundle) -> String {
    let phi = config.rates.phi;
    let mut out = String::new();
    let _ = writeln!(out, "run:");
    let _ = writeln!(out, "  scenario = {}", config.scenario.name());
    let _ = writeln!(out, "  status = ok");
    let _ = writeln!(out, "  generated_unix = {}", unix_timestamp());
    let _ = writeln!(out, "config:");
    indent_block(&mut out, &serialize_config(config));

    let _ = writeln!(out, "cp:");
    let _ = writeln!(out, "  ellipse_ratio_up = {}", sig(bundle.cp_ratios.0));
    let _ = writeln!(out, "  ellipse_ratio_dn = {}", sig(bundle.cp_ratios.1));
    for (offset, report) in &bundle.cp_reports {
        let _ = writeln!(
            out,
            "  channel_offset_{offset}: min_eigenvalue = {}, schur_slack = {}, fourth_case_boundary = {}",
            sig(report.eigenvalues[0]),
            report
                .schur_slack
                .map(sig)
                .unwrap_or_else(|| "singular".into()),
            report.fourth_case_boundary,
        );
    }

    let _ = writeln!(out, "thresholds:");
    match &bundle.thresholds {
        Some(t) => {
            let _ = writeln!(out, "  analytic_phi_t_star = {}", sig(t.phi_t_star));
            let _ = writeln!(out, "  a = {}", sig(t.a));
            let _ = writeln!(out, "  b = {}", sig(t.b));
            let _ = writeln!(
                out,
                "  sigma0_min_sq_over_r0_sq = {}",
                sig(t.sigma0_min_sq / (config.grid.r0 * config.grid.r0))
            );
            let _ = writeln!(out, "  short_time_ok = {}", t.short_time_ok);
        }
        None => {
            let _ = writeln!(
                out,
                "  unavailable = {}",
                bundle.thresholds_note.as_deref().unwrap_or("unknown")
            );
        }
    }

    let v = &bundle.validity;
    let _ = writeln!(out, "validity:");
    let _ = writeln!(out, "  coarse_time = {}", sig(v.delta_t));
    let _ = writeln!(out, "  coarse_time_phi_units = {}", sig(v.delta_t * phi));
    let _ = writeln!(out, "  coarse_length = {}", sig(v.delta_q));
    let _ = writeln!(
        out,
        "  third_subdominant = {} (worst ratio {})",
        v.third_subdominant,
        sig(v.worst_dominance_ratio)
    );
    let _ = writeln!(out, "  diffusion_condition_ok = {}", v.diffusion_condition_ok);
    let _ = writeln!(
        out,
        "  small_quantum_ok = {} (worst ratio {})",
        v.small_quantum_ok,
        sig(v.worst_quantum_ratio)
    );
    let _ = writeln!(out, "  qfp_slack = {}", sig(v.qfp_slack));
    let _ = writeln!(out, "  recommended_min_time = {}", sig(v.recommended_min_time));
    let _ = writeln!(out, "  recommended_sigma0 = {}", sig(v.recommended_sigma0));

    let _ = writeln!(out, "positivity:");
    positivity_section(&mut out, "discrete", phi, &bundle.positivity_discrete);
    if let Some(report) = &bundle.positivity_diffusive {
        positivity_section(&mut out, "diffusive", phi, report);
    }
    if let Some(report) = &bundle.positivity_qfp {
        positivity_section(&mut out, "qfp", phi, report);
    }
    if let Some(note) = &bundle.diffusive_note {
        let _ = writeln!(out, "  diffusive_unavailable = {note}");
    }

    if let Some(cmp) = &bundle.comparison {
        comparison_section(&mut out, cmp);
    }

    let _ = writeln!(out, "symmetry:");
    for (label, report) in [
        ("qfp", &bundle.qfp_symmetry),
        ("diffusive", &bundle.diffusive_symmetry),
    ] {
        if let Some(r) = report {
            let _ = writeln!(
                out,
                "  {label}: probe_phi_t = {}, re_defect = {}, im_defect = {}, coherence_scale = {}",
                sig(r.probe_time * phi),
                sig(r.max_re_defect),
                sig(r.max_im_defect),
                sig(r.coherence_scale),
            );
        }
    }
    out
}

/// Validation-only report: complete positivity and validity conditions,
/// no integration.
pub fn validate_report(config: &RunConfig) -> Result<String, CliError> {
    use hybridsim::diagnostics::diffusive_channels;
    use hybridsim::diffusive::{check_validity, DEFAULT_DOMINANCE_RATIO};
    use hybridsim::mechanisms::{validate_rate_matrix, DEFAULT_CP_TOL};

    let sc = config.scenario_config();
    let lattice = sc.lattice().map_err(|e| CliError::Run(e.into()))?;
    let mut out = String::new();
    let _ = writeln!(out, "validate:");
    let _ = writeln!(out, "  scenario = {}", config.scenario.name());
    let ratios = sc.rates.cp_ratios();
    let _ = writeln!(out, "cp:");
    let _ = writeln!(out, "  ellipse_ratio_up = {}", sig(ratios.0));
    let _ = writeln!(out, "  ellipse_ratio_dn = {}", sig(ratios.1));
    for (offset, ext) in sc.rates.extended_matrices() {
        let report = validate_rate_matrix(&ext, DEFAULT_CP_TOL).map_err(|e| {
            CliError::Run(DiagnosticsError::Mechanism(e))
        })?;
        let _ = writeln!(
            out,
            "  channel_offset_{offset}: cp_ok = {}, min_eigenvalue = {}, schur_slack = {}, fourth_case_boundary = {}",
            report.cp_ok,
            sig(report.eigenvalues[0]),
            report
                .schur_slack
                .map(sig)
                .unwrap_or_else(|| "singular".into()),
            report.fourth_case_boundary,
        );
        if !report.cp_ok {
            return Err(CliError::Run(DiagnosticsError::Mechanism(
                MechanismError::CpViolation {
                    from_site: 0,
                    to_site: offset,
                    min_eigenvalue: report.eigenvalues[0],
                },
            )));
        }
    }
    let report = check_validity(&diffusive_channels(&sc.rates, lattice), DEFAULT_DOMINANCE_RATIO);
    let _ = writeln!(out, "validity:");
    let _ = writeln!(out, "  third_subdominant = {}", report.third_subdominant);
    let _ = writeln!(out, "  diffusion_condition_ok = {}", report.diffusion_condition_ok);
    let _ = writeln!(out, "  small_quantum_ok = {}", report.small_quantum_ok);
    let _ = writeln!(out, "  qfp_slack = {}", sig(report.qfp_slack));
    Ok(out)
}

/// A small matplotlib script rendering the panel profiles from the
/// tabular files next to it.
fn plot_script(config: &RunConfig, flavors: &[(&str, &Trajectory)]) -> String {
    let files: Vec<String> = flavors
        .iter()
        .map(|(name, _)| format!("{}_{name}.csv", config.scenario.name()))
        .collect();
    let mut out = String::new();
    let _ = writeln!(out, "#!/usr/bin/env python3");
    let _ = writeln!(
        out,
        "\"\"\"Render determinant/population/coherence panels from the run tables.\"\"\""
    );
    let _ = writeln!(out, "import csv");
    let _ = writeln!(out, "import collections");
    let _ = writeln!(out, "import os.path");
    let _ = writeln!(out, "import matplotlib.pyplot as plt");
    let _ = writeln!(out);
    let _ = writeln!(out, "HERE = os.path.dirname(os.path.abspath(__file__))");
    let _ = writeln!(out, "FILES = {files:?}");
    let _ = writeln!(out, "STYLES = {{'discrete': 'o', 'diffusive': '-', 'qfp': '--'}}");
    let _ = writeln!(out);
    let _ = writeln!(out, "def load(path):");
    let _ = writeln!(out, "    data = collections.defaultdict(list)");
    let _ = writeln!(out, "    with open(path) as fh:");
    let _ = writeln!(out, "        for row in csv.DictReader(fh):");
    let _ = writeln!(out, "            data[float(row['t'])].append(row)");
    let _ = writeln!(out, "    return data");
    let _ = writeln!(out);
    let _ = writeln!(out, "tables = {{}}");
    let _ = writeln!(out, "for name in FILES:");
    let _ = writeln!(out, "    flavor = name.rsplit('_', 1)[1].split('.')[0]");
    let _ = writeln!(out, "    tables[flavor] = load(os.path.join(HERE, name))");
    let _ = writeln!(out, "times = sorted(next(iter(tables.values())).keys())");
    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "for column in ['det', 'p_plus', 'p_minus', 're_c', 'im_c']:"
    );
    let _ = writeln!(
        out,
        "    fig, axes = plt.subplots(1, len(times), figsize=(4 * len(times), 3.2), squeeze=False)"
    );
    let _ = writeln!(out, "    for ax, t in zip(axes[0], times):");
    let _ = writeln!(out, "        for flavor, table in tables.items():");
    let _ = writeln!(out, "            rows = table.get(t, [])");
    let _ = writeln!(out, "            qs = [float(r['q']) for r in rows]");
    let _ = writeln!(out, "            vs = [float(r[column]) for r in rows]");
    let _ = writeln!(
        out,
        "            ax.plot(qs, vs, STYLES.get(flavor, '-'), label=flavor, markersize=3)"
    );
    let _ = writeln!(out, "        ax.set_title(f'{{column}} at t = {{t:.3g}}')");
    let _ = writeln!(out, "        ax.set_xlabel('q')");
    let _ = writeln!(out, "        ax.legend(fontsize=7)");
    let _ = writeln!(out, "    fig.tight_layout()");
    let _ = writeln!(
        out,
        "    fig.savefig(os.path.join(HERE, f'{}_{{column}}.png'), dpi=140)",
        config.scenario.name()
    );
    let _ = writeln!(out, "print('wrote panels next to the tables')");
    out
}
