//! Run configuration, figure presets and the command pipeline behind the CLI.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{compute_shifts, detect_outliers, fit_shrink_rate, FitModel, ShiftRecord};
use crate::basis::ms_bound_scan;
use crate::continuation::{sweep_gamma_with, uniform_grid, ContinuationOptions, ContinuationPath, REAL_TOLERANCE};
use crate::error::{Error, Result};
use crate::io::{
    serialize, BranchRow, FigureRow, FitRow, Format, MsRow, OracleRow, PathRow, PointRow, ShiftRow, Tabular,
};
use crate::model::ProblemParams;
use crate::oracle::{oracle_eigenvalues, truncation_check};

/// Highest level accepted without [`RunConfig::allow_high_levels`].
pub const DEFAULT_MAX_LEVEL: usize = 89;

/// Lowest level entering shrink-rate fits unless overridden.
pub const DEFAULT_FIT_MIN: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Spectrum,
    Sweep,
    Shifts,
    Fit,
    Msbound,
    OracleCompare,
    Figure,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FigureId {
    Fig2,
    Fig3a,
    Fig3b,
    Fig4,
    Fig5,
    Fig6a,
    Fig6b,
    Fig7,
    Fig8a,
    Fig8b,
}

impl FigureId {
    pub const ALL: [FigureId; 10] = [
        FigureId::Fig2,
        FigureId::Fig3a,
        FigureId::Fig3b,
        FigureId::Fig4,
        FigureId::Fig5,
        FigureId::Fig6a,
        FigureId::Fig6b,
        FigureId::Fig7,
        FigureId::Fig8a,
        FigureId::Fig8b,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FigureId::Fig2 => "fig2",
            FigureId::Fig3a => "fig3a",
            FigureId::Fig3b => "fig3b",
            FigureId::Fig4 => "fig4",
            FigureId::Fig5 => "fig5",
            FigureId::Fig6a => "fig6a",
            FigureId::Fig6b => "fig6b",
            FigureId::Fig7 => "fig7",
            FigureId::Fig8a => "fig8a",
            FigureId::Fig8b => "fig8b",
        }
    }

    fn preset_source(self) -> &'static str {
        match self {
            FigureId::Fig2 => include_str!("../../../presets/fig2.json"),
            FigureId::Fig3a => include_str!("../../../presets/fig3a.json"),
            FigureId::Fig3b => include_str!("../../../presets/fig3b.json"),
            FigureId::Fig4 => include_str!("../../../presets/fig4.json"),
            FigureId::Fig5 => include_str!("../../../presets/fig5.json"),
            FigureId::Fig6a => include_str!("../../../presets/fig6a.json"),
            FigureId::Fig6b => include_str!("../../../presets/fig6b.json"),
            FigureId::Fig7 => include_str!("../../../presets/fig7.json"),
            FigureId::Fig8a => include_str!("../../../presets/fig8a.json"),
            FigureId::Fig8b => include_str!("../../../presets/fig8b.json"),
        }
    }

    pub fn preset(self) -> Result<FigurePreset> {
        let preset: FigurePreset = serde_json::from_str(self.preset_source())
            .map_err(|e| Error::Config(format!("preset {}: {e}", self.name())))?;
        if preset.id != self {
            return Err(Error::Config(format!("preset {} carries id {:?}", self.name(), preset.id)));
        }
        Ok(preset)
    }
}

impl std::str::FromStr for FigureId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FigureId::ALL.into_iter().find(|f| f.name() == s).ok_or_else(|| {
            let names: Vec<&str> = FigureId::ALL.iter().map(|f| f.name()).collect();
            Error::Config(format!("unknown figure {s:?}, expected one of {}", names.join(", ")))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaGrid {
    Uniform { start: f64, stop: f64, step: f64 },
    Values(Vec<f64>),
}

impl GammaGrid {
    pub fn single(gamma: f64) -> Self {
        GammaGrid::Values(vec![gamma])
    }

    pub fn values(&self) -> Vec<f64> {
        match self {
            GammaGrid::Uniform { start, stop, step } => uniform_grid(*start, *stop, *step),
            GammaGrid::Values(v) => v.clone(),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            GammaGrid::Uniform { start, stop, step } => {
                if !(start.is_finite() && stop.is_finite() && step.is_finite()) {
                    return Err(Error::Config("gamma grid bounds must be finite".into()));
                }
                if *start < 0.0 || stop < start {
                    return Err(Error::Config(format!(
                        "gamma grid needs 0 <= --gamma-start <= --gamma-stop, got {start}..{stop}"
                    )));
                }
                if *step <= 0.0 {
                    return Err(Error::Config(format!("--gamma-step must be positive, got {step}")));
                }
            }
            GammaGrid::Values(v) => {
                if v.is_empty() {
                    return Err(Error::Config("empty gamma list".into()));
                }
                if v.iter().any(|g| !g.is_finite() || *g < 0.0) {
                    return Err(Error::Config("gamma values must be finite and >= 0".into()));
                }
                if v.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(Error::Config("gamma values must be strictly increasing".into()));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Panel {
    pub b: f64,
    pub g: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FigureKind {
    /// One series per level over the gamma grid.
    Spectrum,
    /// One series per `(b, g, gamma)` over the level index.
    Shifts,
}

/// Stored parameters of one reproduced figure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FigurePreset {
    pub preset_version: u32,
    pub id: FigureId,
    pub title: String,
    pub kind: FigureKind,
    pub panels: Vec<Panel>,
    pub gamma: GammaGrid,
    pub levels: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: Command,
    pub b: f64,
    pub g_list: Vec<f64>,
    pub gamma: GammaGrid,
    pub levels: (usize, usize),
    pub x_max: Option<f64>,
    pub basis_dim: Option<usize>,
    /// Level range of shrink-rate fits; defaults to `DEFAULT_FIT_MIN..=n_max`.
    pub fit_range: Option<(usize, usize)>,
    pub allow_high_levels: bool,
    pub figure: Option<FigureId>,
    pub output: Option<PathBuf>,
    pub format: Format,
}

impl RunConfig {
    pub fn new(command: Command) -> Self {
        Self {
            command,
            b: 1.0,
            g_list: vec![0.0],
            gamma: GammaGrid::single(0.0),
            levels: (0, 9),
            x_max: None,
            basis_dim: None,
            fit_range: None,
            allow_high_levels: false,
            figure: None,
            output: None,
            format: Format::Csv,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (n_min, n_max) = self.levels;
        if n_min > n_max {
            return Err(Error::Config(format!("--levels {n_min}:{n_max} is empty")));
        }
        if n_max > DEFAULT_MAX_LEVEL && !self.allow_high_levels {
            return Err(Error::Config(format!(
                "--levels up to {n_max} exceeds {DEFAULT_MAX_LEVEL}; pass --allow-high-levels to override"
            )));
        }
        if !(self.b.is_finite() && self.b > 0.0) {
            return Err(Error::Config(format!("--b must be positive, got {}", self.b)));
        }
        if self.g_list.is_empty() {
            return Err(Error::Config("--g-list is empty".into()));
        }
        if let Some(g) = self.g_list.iter().find(|g| !(g.is_finite() && **g >= 0.0)) {
            return Err(Error::Config(format!("g must be finite and >= 0, got {g}")));
        }
        self.gamma.validate()?;
        let single = matches!(&self.gamma, GammaGrid::Values(v) if v.len() == 1);
        let needs_single = matches!(
            self.command,
            Command::Spectrum | Command::Shifts | Command::Fit | Command::Msbound | Command::OracleCompare
        );
        if needs_single && !single {
            return Err(Error::Config(format!(
                "{:?} evaluates at one gamma; use --gamma",
                self.command
            )));
        }
        if let Some((lo, hi)) = self.fit_range {
            if lo > hi || hi > n_max {
                return Err(Error::Config(format!("--fit-range {lo}:{hi} must lie within --levels")));
            }
        }
        if self.command == Command::Figure && self.figure.is_none() {
            return Err(Error::Config("figure needs --figure ID".into()));
        }
        if let Some(dim) = self.basis_dim {
            if dim < 2 * (n_max + 1) {
                return Err(Error::Config(format!(
                    "--basis-dim {dim} must be at least 2 x (n_max + 1) = {}",
                    2 * (n_max + 1)
                )));
            }
        }
        self.params(self.g_list[0], 0.0)
            .validate()
            .map_err(|e| Error::Config(e.to_string()))
    }

    /// Problem parameters at `g` and `gamma` with the configured numerics.
    pub fn params(&self, g: f64, gamma: f64) -> ProblemParams {
        let mut params = ProblemParams::new(gamma, self.b, g)
            .with_basis_cutoff(self.basis_dim.unwrap_or_else(|| default_basis_dim(self.levels.1)));
        if let Some(x_max) = self.x_max {
            params = params.with_x_max(x_max);
        }
        params
    }

    fn single_gamma(&self) -> f64 {
        self.gamma.values()[0]
    }

    fn labels(&self) -> Vec<usize> {
        (self.levels.0..=self.levels.1).collect()
    }
}

/// Basis dimension covering the tracked levels `0..=n_max + 1`.
pub fn default_basis_dim(n_max: usize) -> usize {
    (2 * n_max + 10).max(120)
}

/// Everything needed to re-run an output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub program_version: String,
    pub run: RunConfig,
    pub preset: Option<FigurePreset>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Output {
    Points(Vec<PointRow>),
    Paths { points: Vec<PathRow>, branches: Vec<BranchRow> },
    Shifts(Vec<ShiftRow>),
    Fits(Vec<FitRow>),
    Ms(Vec<MsRow>),
    Oracle(Vec<OracleRow>),
    Figure(Vec<FigureRow>),
}

/// Result of a run: the records plus levels that could not be followed to the requested
/// `gamma` (reported, not fatal).
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub echo: ConfigEcho,
    pub output: Output,
    pub warnings: Vec<String>,
}

pub type Progress<'a> = Option<&'a (dyn Fn(&str) + Sync)>;

fn sweep(
    labels: &[usize],
    grid: &[f64],
    params: &ProblemParams,
    progress: Progress<'_>,
) -> Result<Vec<ContinuationPath>> {
    let tag = format!("b={} g={}", params.b, params.g);
    let report = |gamma: f64| {
        if let Some(p) = progress {
            p(&format!("{tag} gamma={gamma:.4}"));
        }
    };
    sweep_gamma_with(labels, grid, params, None, &ContinuationOptions::default(), Some(&report))
}

/// Shifts at `gamma` of every path reaching it, with outliers flagged, plus the
/// requested labels that no path reaches.
pub fn shifts_at(paths: &[ContinuationPath], gamma: f64) -> Result<(Vec<ShiftRecord>, Vec<usize>)> {
    let reaching: Vec<ContinuationPath> = paths.iter().filter(|p| p.point_at(gamma).is_some()).cloned().collect();
    let mut missing: Vec<usize> = paths
        .iter()
        .map(|p| p.n_label)
        .filter(|n| !reaching.iter().any(|p| p.n_label == *n))
        .collect();
    missing.dedup();
    Ok((detect_outliers(&compute_shifts(&reaching, gamma)?), missing))
}

fn missing_warning(missing: &[usize], gamma: f64, g: f64, b: f64, paths: &[ContinuationPath]) -> Vec<String> {
    missing
        .iter()
        .map(|&n| {
            let reason = paths
                .iter()
                .filter(|p| p.n_label == n)
                .find_map(|p| p.failure.as_ref())
                .map_or_else(String::new, |f| format!(": {} at gamma = {}", f.message, f.gamma));
            format!("level n = {n} (b = {b}, g = {g}) does not reach gamma = {gamma}{reason}")
        })
        .collect()
}

pub fn execute(config: &RunConfig, progress: Progress<'_>) -> Result<RunOutput> {
    config.validate()?;
    let mut warnings = Vec::new();
    let mut preset = None;
    let output = match config.command {
        Command::Spectrum => {
            let gamma = config.single_gamma();
            let mut rows = Vec::new();
            for &g in &config.g_list {
                let paths = sweep(&config.labels(), &[gamma], &config.params(g, 0.0), progress)?;
                rows.extend(paths.iter().filter_map(|p| p.point_at(gamma)).map(PointRow::from));
                let (_, missing) = shifts_at(&paths, gamma)?;
                warnings.extend(missing_warning(&missing, gamma, g, config.b, &paths));
            }
            Output::Points(rows)
        }
        Command::Sweep => {
            let grid = config.gamma.values();
            let mut points = Vec::new();
            let mut branches = Vec::new();
            for &g in &config.g_list {
                let paths = sweep(&config.labels(), &grid, &config.params(g, 0.0), progress)?;
                points.extend(PathRow::from_paths(&paths));
                branches.extend(BranchRow::from_paths(&paths, g, config.b));
            }
            Output::Paths { points, branches }
        }
        Command::Shifts | Command::Fit => {
            let gamma = config.single_gamma();
            let fit_range = config
                .fit_range
                .unwrap_or((DEFAULT_FIT_MIN.min(config.levels.1), config.levels.1));
            let mut shift_rows = Vec::new();
            let mut fit_rows = Vec::new();
            for &g in &config.g_list {
                let paths = sweep(&config.labels(), &[gamma], &config.params(g, 0.0), progress)?;
                let (shifts, missing) = shifts_at(&paths, gamma)?;
                warnings.extend(missing_warning(&missing, gamma, g, config.b, &paths));
                if config.command == Command::Fit {
                    for model in [FitModel::PowerLaw, FitModel::HalfInverseBound, FitModel::LogOverN32] {
                        let fit = fit_shrink_rate(&shifts, model, fit_range)?;
                        fit_rows.push(FitRow::new(&fit, gamma, g, config.b));
                    }
                }
                shift_rows.extend(shifts.iter().map(|s| ShiftRow::new(s, gamma, g, config.b)));
            }
            if config.command == Command::Fit {
                Output::Fits(fit_rows)
            } else {
                Output::Shifts(shift_rows)
            }
        }
        Command::Msbound => {
            let gamma = config.single_gamma();
            let report = ms_bound_scan(config.levels.1, &config.params(0.0, gamma));
            Output::Ms(MsRow::from_report(&report, gamma, config.b))
        }
        Command::OracleCompare => Output::Oracle(oracle_compare(config, progress)?),
        Command::Figure => {
            let id = config.figure.expect("validated");
            let p = id.preset()?;
            let rows = run_figure(&p, config, progress, &mut warnings)?;
            preset = Some(p);
            Output::Figure(rows)
        }
    };
    Ok(RunOutput {
        echo: ConfigEcho {
            program_version: env!("CARGO_PKG_VERSION").to_owned(),
            run: config.clone(),
            preset,
        },
        output,
        warnings,
    })
}

fn oracle_compare(config: &RunConfig, progress: Progress<'_>) -> Result<Vec<OracleRow>> {
    let gamma = config.single_gamma();
    if config.g_list.iter().any(|g| *g != 0.0) {
        return Err(Error::Config("oracle-compare is linear only; use --g 0".into()));
    }
    let labels: Vec<usize> = (0..=config.levels.1).collect();
    let params = config.params(0.0, gamma);
    let dim = params.basis_cutoff;
    let paths = sweep(&labels, &[gamma], &config.params(0.0, 0.0), progress)?;
    let oracle = oracle_eigenvalues(&params, labels.len() + 2, dim)?;
    let check = truncation_check(&params, dim, labels.len())?;
    Ok(paths
        .iter()
        .filter(|p| p.n_label >= config.levels.0)
        .filter_map(|p| p.point_at(gamma).map(|q| (p.n_label, q.mu)))
        .map(|(n_label, mu)| {
            let nearest = oracle
                .iter()
                .copied()
                .min_by(|a, b| (a - mu).norm().total_cmp(&(b - mu).norm()))
                .expect("oracle spectrum is non-empty");
            OracleRow {
                n_label,
                gamma,
                b: config.b,
                shooting_mu: mu,
                oracle_mu: nearest,
                abs_diff: (nearest - mu).norm(),
                dim,
                drift: check.drift,
                dense_drift: check.dense_drift,
            }
        })
        .collect())
}

fn run_figure(
    preset: &FigurePreset,
    config: &RunConfig,
    progress: Progress<'_>,
    warnings: &mut Vec<String>,
) -> Result<Vec<FigureRow>> {
    let labels: Vec<usize> = (preset.levels.0..=preset.levels.1).collect();
    let grid = preset.gamma.values();
    let mut rows = Vec::new();
    for panel in &preset.panels {
        let cfg = RunConfig {
            b: panel.b,
            levels: (0, preset.levels.1),
            ..config.clone()
        };
        let paths = sweep(&labels, &grid, &cfg.params(panel.g, 0.0), progress)?;
        match preset.kind {
            FigureKind::Spectrum => {
                rows.extend(PathRow::from_paths(&paths).into_iter().map(|r| {
                    let suffix = if r.branch > 0 { format!("/{}", r.branch) } else { String::new() };
                    FigureRow {
                        series: format!("b={} g={} n={}{suffix}", panel.b, panel.g, r.n_label),
                        n_label: r.n_label,
                        gamma: r.gamma,
                        g: r.g,
                        b: r.b,
                        mu: r.mu,
                        delta_mu_abs: (r.mu - crate::model::unperturbed_mu(r.n_label)).norm(),
                        is_real: r.is_real,
                        outlier: false,
                    }
                }));
            }
            FigureKind::Shifts => {
                for &gamma in &grid {
                    let (shifts, missing) = shifts_at(&paths, gamma)?;
                    warnings.extend(missing_warning(&missing, gamma, panel.g, panel.b, &paths));
                    rows.extend(shifts.iter().map(|s| FigureRow {
                        series: format!("b={} g={} gamma={}", panel.b, panel.g, gamma),
                        n_label: s.n,
                        gamma,
                        g: panel.g,
                        b: panel.b,
                        mu: s.mu,
                        delta_mu_abs: s.delta_mu_abs,
                        is_real: s.mu.im.abs() < REAL_TOLERANCE,
                        outlier: s.outlier,
                    }));
                }
            }
        }
    }
    Ok(rows)
}

/// Main and sibling files of one output, as `(path or None for stdout, bytes)`.
pub fn render(run: &RunOutput, format: Format, output: Option<&Path>) -> Result<Vec<(Option<PathBuf>, Vec<u8>)>> {
    fn one<T: Tabular + Serialize>(echo: &ConfigEcho, rows: &[T], format: Format) -> Result<Vec<u8>> {
        serialize(echo, rows, format)
    }
    let echo = &run.echo;
    let main = match &run.output {
        Output::Points(r) => one(echo, r, format)?,
        Output::Paths { points, .. } => one(echo, points, format)?,
        Output::Shifts(r) => one(echo, r, format)?,
        Output::Fits(r) => one(echo, r, format)?,
        Output::Ms(r) => one(echo, r, format)?,
        Output::Oracle(r) => one(echo, r, format)?,
        Output::Figure(r) => one(echo, r, format)?,
    };
    let mut files = vec![(output.map(Path::to_path_buf), main)];
    if let Some(path) = output {
        if let Output::Paths { branches, .. } = &run.output {
            files.push((Some(sibling(path, "branch_points", ext(format))), one(echo, branches, format)?));
        }
        if format == Format::Csv {
            let mut bytes = serde_json::to_vec_pretty(echo)?;
            bytes.push(b'\n');
            files.push((Some(sibling(path, "config", "json")), bytes));
        }
    }
    Ok(files)
}

fn ext(format: Format) -> &'static str {
    match format {
        Format::Csv => "csv",
        Format::Json => "json",
    }
}

/// `dir/stem.tag.ext` next to `path`.
fn sibling(path: &Path, tag: &str, extension: &str) -> PathBuf {
    let stem = path.file_stem().map_or_else(|| "out".into(), |s| s.to_string_lossy().into_owned());
    path.with_file_name(format!("{stem}.{tag}.{extension}"))
}

/// Writes rendered files; `None` goes to standard output.
pub fn write_files(files: &[(Option<PathBuf>, Vec<u8>)]) -> Result<()> {
    use std::io::Write;
    for (path, bytes) in files {
        match path {
            Some(p) => fs::write(p, bytes)?,
            None => std::io::stdout().write_all(bytes)?,
        }
    }
    Ok(())
}
