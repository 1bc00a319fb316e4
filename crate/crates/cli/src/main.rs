use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use clap::{Parser, Subcommand};

use ptspec::run::{execute, render, write_files, Command, FigureId, GammaGrid, RunConfig};
use ptspec::Error;

#[derive(Parser, Debug)]
#[command(
    name = "ptspec",
    version,
    about = "Spectra of a harmonic trap with PT-symmetric delta loss and gain"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Eigenvalues of a level range at one gamma
    Spectrum(Args),
    /// Continue levels along a gamma grid and locate branch points
    Sweep(Args),
    /// Eigenvalue shifts against 2n + 1 at one gamma
    Shifts(Args),
    /// Shrink-rate fits of the shifts at one gamma
    Fit(Args),
    /// Coupling-matrix bound scan at one gamma
    Msbound(Args),
    /// Shooting eigenvalues against the basis-diagonalization oracle
    OracleCompare(Args),
    /// Data series of a stored figure preset
    Figure(Args),
}

#[derive(clap::Args, Debug)]
struct Args {
    /// Single perturbation strength
    #[arg(long, conflicts_with_all = ["gamma_start", "gamma_stop", "gamma_step"])]
    gamma: Option<f64>,
    #[arg(long, requires_all = ["gamma_stop", "gamma_step"])]
    gamma_start: Option<f64>,
    #[arg(long, requires_all = ["gamma_start", "gamma_step"])]
    gamma_stop: Option<f64>,
    #[arg(long, requires_all = ["gamma_start", "gamma_stop"])]
    gamma_step: Option<f64>,
    /// Nonlinearity
    #[arg(long, conflicts_with = "g_list")]
    g: Option<f64>,
    /// Comma-separated nonlinearities
    #[arg(long, value_delimiter = ',')]
    g_list: Option<Vec<f64>>,
    /// Delta position
    #[arg(long, default_value_t = 1.0)]
    b: f64,
    /// Level range n_min:n_max
    #[arg(long, default_value = "0:9")]
    levels: String,
    /// Accept levels above 89
    #[arg(long)]
    allow_high_levels: bool,
    /// Level range of shrink-rate fits, n_min:n_max
    #[arg(long)]
    fit_range: Option<String>,
    /// Integration half-width (default: level dependent)
    #[arg(long)]
    x_max: Option<f64>,
    /// Oscillator basis dimension of the oracle
    #[arg(long)]
    basis_dim: Option<usize>,
    /// Output file (default: standard output)
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "csv")]
    format: String,
    /// Figure identifier (fig2, fig3a, fig3b, fig4, fig5, fig6a, fig6b, fig7, fig8a, fig8b)
    #[arg(long)]
    figure: Option<String>,
    /// Suppress progress on standard error
    #[arg(long)]
    quiet: bool,
}

fn parse_range(text: &str, flag: &str) -> Result<(usize, usize), Error> {
    let bad = || Error::Config(format!("{flag} expects n_min:n_max, got {text:?}"));
    let (lo, hi) = text.split_once(':').ok_or_else(bad)?;
    Ok((lo.trim().parse().map_err(|_| bad())?, hi.trim().parse().map_err(|_| bad())?))
}

fn build_config(command: Command, args: &Args) -> Result<RunConfig, Error> {
    let gamma = match (args.gamma, args.gamma_start, args.gamma_stop, args.gamma_step) {
        (Some(g), ..) => GammaGrid::single(g),
        (None, Some(start), Some(stop), Some(step)) => GammaGrid::Uniform { start, stop, step },
        _ => GammaGrid::single(0.0),
    };
    let g_list = match (&args.g_list, args.g) {
        (Some(list), _) => list.clone(),
        (None, Some(g)) => vec![g],
        (None, None) => vec![0.0],
    };
    let figure = args.figure.as_deref().map(str::parse::<FigureId>).transpose()?;
    let config = RunConfig {
        command,
        b: args.b,
        g_list,
        gamma,
        levels: parse_range(&args.levels, "--levels")?,
        x_max: args.x_max,
        basis_dim: args.basis_dim,
        fit_range: args.fit_range.as_deref().map(|r| parse_range(r, "--fit-range")).transpose()?,
        allow_high_levels: args.allow_high_levels,
        figure,
        output: args.out.clone(),
        format: args.format.parse()?,
    };
    config.validate()?;
    Ok(config)
}

fn run(command: Command, args: &Args) -> Result<(), (Error, u8)> {
    let config = build_config(command, args).map_err(|e| (e, 1))?;
    let last = Mutex::new(Instant::now());
    let report = |msg: &str| {
        let mut last = last.lock().unwrap();
        if last.elapsed() < Duration::from_millis(250) {
            return;
        }
        *last = Instant::now();
        let mut err = std::io::stderr().lock();
        let _ = write!(err, "\r\x1b[K{msg}");
        let _ = err.flush();
    };
    let progress: Option<&(dyn Fn(&str) + Sync)> = if args.quiet { None } else { Some(&report) };
    let result = execute(&config, progress);
    if !args.quiet {
        eprintln!();
    }
    let output = result.map_err(|e| {
        let code = if matches!(e, Error::Config(_) | Error::InvalidParams(_)) { 1 } else { 2 };
        (e, code)
    })?;
    for warning in &output.warnings {
        eprintln!("warning: {warning}");
    }
    let files = render(&output, config.format, config.output.as_deref()).map_err(|e| (e, 2))?;
    write_files(&files).map_err(|e| (e, 2))?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = if err.use_stderr() { 1 } else { 0 };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    let (command, args) = match &cli.command {
        Cmd::Spectrum(a) => (Command::Spectrum, a),
        Cmd::Sweep(a) => (Command::Sweep, a),
        Cmd::Shifts(a) => (Command::Shifts, a),
        Cmd::Fit(a) => (Command::Fit, a),
        Cmd::Msbound(a) => (Command::Msbound, a),
        Cmd::OracleCompare(a) => (Command::OracleCompare, a),
        Cmd::Figure(a) => (Command::Figure, a),
    };
    match run(command, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err((err, code)) => {
            eprintln!("error: {err}");
            ExitCode::from(code)
        }
    }
}
