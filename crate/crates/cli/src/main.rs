mod args;
mod verify;

use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ndns_core::observables::{
    self, grid_to_csv, grid_to_json, mandel_sweep, sweep_to_csv, sweep_to_json, wigner_grid, GridAxis,
    Metadata, ObservableError, DEFAULT_EPS_Q,
};
use ndns_core::states::{self, ConstructionMode, StateError, StateSpec};
use serde_json::Value;

use args::{Format, StateArgs};

/// Exit codes: 0 ok, 1 verification failure, 2 invalid input, 3 truncation failure.
#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Truncation(String),
    Verify(String),
    Io(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Verify(_) => 1,
            CliError::Validation(_) | CliError::Io(_) => 2,
            CliError::Truncation(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Validation(m) | CliError::Truncation(m) | CliError::Verify(m) | CliError::Io(m) => m,
        }
    }
}

impl From<StateError> for CliError {
    fn from(e: StateError) -> Self {
        if e.is_truncation() {
            CliError::Truncation(e.to_string())
        } else {
            CliError::Validation(e.to_string())
        }
    }
}

impl From<ObservableError> for CliError {
    fn from(e: ObservableError) -> Self {
        match e {
            ObservableError::WignerTruncation { .. } | ObservableError::WignerOracle { .. } => {
                CliError::Truncation(e.to_string())
            }
            _ => CliError::Validation(e.to_string()),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "ndns", version, about = "Nonlinear displaced number states: coefficients, photon statistics, Wigner grids")]
struct Cli {
    /// Worker threads for grids and sweeps (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fock amplitudes of one state as JSON.
    Coeffs {
        #[command(flatten)]
        state: StateArgs,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Mandel Q over a sweep of real displacements.
    Mandel {
        #[command(flatten)]
        state: StateArgs,
        #[arg(long, default_value_t = DEFAULT_EPS_Q)]
        eps_q: f64,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Wigner function on a rectangular grid.
    Wigner {
        #[command(flatten)]
        state: StateArgs,
        /// Real-axis grid `min:max:step`; also used for the imaginary axis
        /// unless --grid-im is given.
        #[arg(long, allow_hyphen_values = true)]
        grid: String,
        #[arg(long, allow_hyphen_values = true)]
        grid_im: Option<String>,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Operator-algebra and closed-form/oracle checks.
    Verify(verify::VerifyArgs),
}

fn emit(output: &Option<PathBuf>, text: &str) -> Result<(), CliError> {
    match output {
        Some(path) => fs::write(path, text)
            .map_err(|e| CliError::Io(format!("writing {}: {e}", path.display()))),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| CliError::Io(format!("writing stdout: {e}"))),
    }
}

fn metadata(command: &str, spec: &StateSpec) -> Metadata {
    let mut m = Metadata::new();
    m.push("command", command)
        .push("family", spec.family.as_str())
        .push("n", spec.n.to_string())
        .push("deformation", spec.deformation.to_string())
        .push(
            "mode",
            match spec.mode {
                ConstructionMode::ClosedForm => "closed-form",
                ConstructionMode::Oracle => "oracle",
            },
        )
        .push("max_n", spec.truncation.max_n.to_string())
        .push("tail_tolerance", observables::format_f64(spec.truncation.tail_tolerance));
    m
}

fn coeffs(state: &StateArgs, output: &Option<PathBuf>) -> Result<(), CliError> {
    let spec = state.spec()?;
    let v = states::build(&spec)?;
    let mut doc = serde_json::to_value(&v).expect("FockVector serializes");
    let mut meta = serde_json::Map::new();
    for (k, val) in &metadata("coeffs", &spec).fields {
        meta.insert(k.clone(), Value::String(val.clone()));
    }
    doc.as_object_mut()
        .expect("object")
        .insert("metadata".into(), Value::Object(meta));
    emit(output, &(serde_json::to_string_pretty(&doc).expect("json") + "\n"))
}

fn mandel(state: &StateArgs, eps_q: f64, format: Format, output: &Option<PathBuf>) -> Result<(), CliError> {
    if !(eps_q >= 0.0 && eps_q.is_finite()) {
        return Err(CliError::Validation("--eps-q must be a nonnegative number".into()));
    }
    let (spec, disp) = state.template()?;
    let values = disp.sweep()?;
    for v in &values {
        spec.clone()
            .with_displacement(num_complex::Complex64::new(*v, 0.0))
            .validate()
            .map_err(|e| CliError::Validation(e.to_string()))?;
    }
    let points = mandel_sweep(&spec, &values, eps_q);
    let mut meta = metadata("mandel", &spec);
    meta.push("sweep", format!("{}={}", disp.flag, disp.raw))
        .push("eps_q", observables::format_f64(eps_q));
    if disp.tanh {
        meta.push("sweep_column", "tanh-mapped displacement");
    }
    let text = match format {
        Format::Csv => sweep_to_csv(&meta, &points),
        Format::Json => sweep_to_json(&meta, &points),
    };
    emit(output, &text)?;
    let failed = points.iter().filter(|p| p.truncation_failure).count();
    if failed > 0 {
        return Err(CliError::Truncation(format!(
            "{failed} of {} sweep points failed truncation",
            points.len()
        )));
    }
    if let Some(p) = points.iter().find(|p| p.error.is_some()) {
        return Err(CliError::Validation(p.error.clone().unwrap_or_default()));
    }
    Ok(())
}

fn wigner(
    state: &StateArgs,
    grid: &str,
    grid_im: &Option<String>,
    format: Format,
    output: &Option<PathBuf>,
) -> Result<(), CliError> {
    let spec = state.spec()?;
    let re = GridAxis::parse(grid)?;
    let im = match grid_im {
        Some(g) => GridAxis::parse(g)?,
        None => re,
    };
    let v = states::build(&spec)?;
    let g = wigner_grid(&v, re, im)?;
    let mut meta = metadata("wigner", &spec);
    meta.push("displacement", format!("{},{}", observables::format_f64(spec.displacement.re), observables::format_f64(spec.displacement.im)))
        .push("grid_re", grid)
        .push("grid_im", grid_im.as_deref().unwrap_or(grid))
        .push("state_truncation", v.truncation.to_string())
        .push("wigner_tail_tolerance", observables::format_f64(observables::WIGNER_TAIL_TOLERANCE));
    let text = match format {
        Format::Csv => grid_to_csv(&meta, &g),
        Format::Json => grid_to_json(&meta, &g),
    };
    emit(output, &text)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Coeffs { state, output } => coeffs(state, output),
        Command::Mandel {
            state,
            eps_q,
            format,
            output,
        } => mandel(state, *eps_q, *format, output),
        Command::Wigner {
            state,
            grid,
            grid_im,
            format,
            output,
        } => wigner(state, grid, grid_im, *format, output),
        Command::Verify(args) => verify::run(args),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.jobs).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker pool: {e}");
            return ExitCode::from(2);
        }
    };
    match pool.install(|| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
