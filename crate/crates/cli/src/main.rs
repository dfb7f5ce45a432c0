use clap::{Parser, Subcommand};
use hybridsim_cli::{
    apply_override, execute, parse_config, validate_report, CliError, RunConfig, OUT_DIR_ENV,
};
use std::path::PathBuf;
use std::process::ExitCode;

/// Hybrid quantum-classical dynamics: scenario runner and validator.
#[derive(Parser)]
#[command(name = "hybridsim", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configuration file and write trajectories plus a summary.
    Run { config: PathBuf },
    /// Check complete positivity and validity conditions only.
    Validate { config: PathBuf },
    /// Run a named scenario (fig1..fig6, custom) with optional overrides.
    Scenario {
        name: String,
        /// Output directory (overrides configuration and environment).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Repeatable `key=value` configuration overrides.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
}

fn load_config(path: &PathBuf) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.clone(),
        source,
    })?;
    Ok(parse_config(&text)?)
}

fn apply_out_dir(config: &mut RunConfig, flag: Option<PathBuf>) {
    if let Some(dir) = flag {
        config.outputs.directory = dir;
    } else if let Ok(dir) = std::env::var(OUT_DIR_ENV) {
        if !dir.is_empty() {
            config.outputs.directory = PathBuf::from(dir);
        }
    }
}

fn scenario_config(name: &str, overrides: &[String]) -> Result<RunConfig, CliError> {
    let scenario = hybridsim::diagnostics::Scenario::from_name(name).map_err(CliError::Run)?;
    let mut config = RunConfig::for_scenario(scenario);
    for item in overrides {
        let Some((key, value)) = item.split_once('=') else {
            return Err(CliError::Config(
                hybridsim_cli::ConfigError::Syntax {
                    line: 0,
                    text: item.clone(),
                },
            ));
        };
        apply_override(&mut config, key.trim(), value.trim())?;
    }
    Ok(config)
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { config } => {
            let mut config = load_config(&config)?;
            apply_out_dir(&mut config, None);
            let artifacts = execute(&config)?;
            println!("wrote {}", artifacts.summary.display());
            for file in &artifacts.trajectory_files {
                println!("wrote {}", file.display());
            }
            if let Some(script) = &artifacts.plot_script {
                println!("wrote {}", script.display());
            }
            Ok(())
        }
        Command::Validate { config } => {
            let config = load_config(&config)?;
            let report = validate_report(&config)?;
            print!("{report}");
            Ok(())
        }
        Command::Scenario {
            name,
            out,
            overrides,
        } => {
            let mut config = scenario_config(&name, &overrides)?;
            apply_out_dir(&mut config, out);
            let artifacts = execute(&config)?;
            println!("wrote {}", artifacts.summary.display());
            for file in &artifacts.trajectory_files {
                println!("wrote {}", file.display());
            }
            if let Some(script) = &artifacts.plot_script {
                println!("wrote {}", script.display());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
