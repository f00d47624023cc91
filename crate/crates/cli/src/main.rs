use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use qbm_gauss::runner::{self, parse_sweep, Overrides, RunConfig, RunResult};
use qbm_gauss::Error;

/// Fidelity, entanglement and Petz-Rényi entropy of Gaussian states in a
/// non-Markovian quantum Brownian motion bath.
///
/// Settings come from a preset, then the --config file, then flags.
/// Times are in units of 1/omega_c.
#[derive(Parser, Debug)]
#[command(name = "qbm", version)]
struct Cli {
    /// fig1, fig2, fig3, fig4, fig5, fig6 or fig7-kappa3
    #[arg(long)]
    preset: Option<String>,
    /// Initial state family: vacuum, thermal, squeezed1, squeezed2, basset_hound
    #[arg(long)]
    state: Option<String>,
    /// Squeezing of the first state
    #[arg(long)]
    r1: Option<String>,
    /// Squeezing of the second state
    #[arg(long)]
    r2: Option<String>,
    /// Thermal occupation of the first state (and the second unless --nbar2 is given)
    #[arg(long)]
    nbar: Option<String>,
    /// Thermal occupation of the second state
    #[arg(long)]
    nbar2: Option<String>,
    /// Coupling constant in (0, 1)
    #[arg(long)]
    alpha: Option<String>,
    /// Bath temperature
    #[arg(long)]
    temp: Option<String>,
    /// System frequency
    #[arg(long)]
    omega0: Option<String>,
    /// Bath cutoff frequency
    #[arg(long = "omega-c")]
    omega_c: Option<String>,
    /// Order of the Petz-Rényi entropy, > 1
    #[arg(long)]
    kappa: Option<String>,
    /// coefficients, fidelity, log_negativity or petz_renyi
    #[arg(long)]
    metric: Option<String>,
    /// End of the time grid
    #[arg(long)]
    tmax: Option<String>,
    /// Number of grid intervals, at least 2
    #[arg(long)]
    steps: Option<String>,
    /// Output file (directory with --sweep). Without it CSV/JSON goes to stdout
    #[arg(long)]
    output: Option<PathBuf>,
    /// csv or json
    #[arg(long)]
    format: Option<String>,
    /// Use quadrature for the bath coefficients instead of the closed form
    #[arg(long)]
    oracle: bool,
    /// Check the configuration and print a report without running it
    #[arg(long = "validate-only")]
    validate_only: bool,
    /// Flat key = value file with the same keys as the flags
    #[arg(long)]
    config: Option<PathBuf>,
    /// Sweep file: one line of key=value overrides per point, commas expand
    #[arg(long)]
    sweep: Option<PathBuf>,
    /// uniform or halved-multimode
    #[arg(long = "noise-scaling")]
    noise_scaling: Option<String>,
    /// weak-coupling or exact
    #[arg(long = "delta-gamma")]
    delta_gamma: Option<String>,
    /// Write a gnuplot script next to CSV output
    #[arg(long = "plot-script")]
    plot_script: bool,
    /// More log output (repeatable)
    #[arg(short, long, action = clap::ArgAction::Count)]
    verbose: u8,
}

impl Cli {
    fn overrides(&self) -> Result<Overrides, Error> {
        let mut o = match &self.config {
            Some(path) => Overrides::read_config(path)?,
            None => Overrides::default(),
        };
        let mut flags = Overrides::default();
        let pairs = [
            ("preset", &self.preset),
            ("state", &self.state),
            ("r1", &self.r1),
            ("r2", &self.r2),
            ("nbar", &self.nbar),
            ("nbar2", &self.nbar2),
            ("alpha", &self.alpha),
            ("temp", &self.temp),
            ("omega0", &self.omega0),
            ("omega-c", &self.omega_c),
            ("kappa", &self.kappa),
            ("metric", &self.metric),
            ("tmax", &self.tmax),
            ("steps", &self.steps),
            ("format", &self.format),
            ("noise-scaling", &self.noise_scaling),
            ("delta-gamma", &self.delta_gamma),
        ];
        for (key, value) in pairs {
            if let Some(v) = value {
                flags.set(key, v).map_err(|e| Error::InvalidArgument(format!("--{key}: {e}")))?;
            }
        }
        flags.output = self.output.clone();
        if self.oracle {
            flags.oracle = Some(true);
        }
        if self.plot_script {
            flags.plot_script = Some(true);
        }
        o = o.merged(&flags);
        Ok(o)
    }
}

fn fail(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(e.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let overrides = match cli.overrides() {
        Ok(o) => o,
        Err(e) => return fail(&e),
    };

    if let Some(sweep_file) = &cli.sweep {
        let Some(dir) = overrides.output.clone() else {
            return fail(&Error::InvalidArgument("--sweep needs --output <directory>".into()));
        };
        let points = match std::fs::read_to_string(sweep_file)
            .map_err(|e| Error::InvalidArgument(format!("{}: {e}", sweep_file.display())))
            .and_then(|text| parse_sweep(&text))
        {
            Ok(p) => p,
            Err(e) => return fail(&e),
        };
        let base = Overrides { output: None, ..overrides };
        return match runner::sweep(&base, &points, &dir) {
            Ok(manifest) => {
                for entry in &manifest.entries {
                    match &entry.error {
                        None => println!("{} ok {}", entry.file, entry.parameters),
                        Some(e) => println!("{} failed {}: {e}", entry.file, entry.parameters),
                    }
                }
                ExitCode::from(manifest.exit_code() as u8)
            }
            Err(e) => fail(&e),
        };
    }

    let config = match RunConfig::resolve(&overrides) {
        Ok(c) => c,
        Err(e) => {
            if cli.validate_only {
                println!("error: {e}");
            }
            return fail(&e);
        }
    };

    if cli.validate_only {
        let report = runner::validate(&config);
        print!("{report}");
        if let Some(t) = report.t_star {
            println!("t_star = {t}");
        }
        return if report.has_errors() { ExitCode::from(2) } else { ExitCode::SUCCESS };
    }

    match runner::run(&config) {
        Ok(output) => {
            if config.output.is_none() {
                match output.render(&config) {
                    Ok(text) => {
                        if let Err(e) = std::io::stdout().write_all(text.as_bytes()) {
                            return fail(&e.into());
                        }
                    }
                    Err(e) => return fail(&e),
                }
            } else if let RunResult::Metric(series) = &output.result {
                if let Some(t) = series.t_star {
                    log::info!("t_star = {}", t * config.bath.omega_c());
                }
            }
            ExitCode::SUCCESS
        }
        Err(e) => fail(&e),
    }
}
