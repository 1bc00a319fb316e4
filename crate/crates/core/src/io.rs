//! Flat record types and their CSV/JSON serialization.
//!
//! CSV files carry a mandatory header row and print every real with 17 significant
//! digits; JSON files wrap the records in `{schema_version, config_echo, records}` and
//! write complex numbers as `{"re": .., "im": ..}`. Both formats round-trip bit-exactly.

use std::io::{Read, Write};

use num_complex::Complex64;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::analysis::{FitModel, FitResult, ShiftRecord};
use crate::basis::{MsBoundReport, PairCheck};
use crate::continuation::{BranchPoint, ContinuationPath};
use crate::error::{Error, Result};
use crate::shooting::SpectralPoint;

pub const SCHEMA_VERSION: &str = "1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(Error::Config(format!("unknown format {other:?}, expected csv or json"))),
        }
    }
}

/// Serde adapter writing a complex number as `{"re": .., "im": ..}`.
pub mod complex_object {
    use num_complex::Complex64;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct ReIm {
        re: f64,
        im: f64,
    }

    pub fn serialize<S: Serializer>(z: &Complex64, s: S) -> Result<S::Ok, S::Error> {
        ReIm { re: z.re, im: z.im }.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Complex64, D::Error> {
        let ReIm { re, im } = ReIm::deserialize(d)?;
        Ok(Complex64::new(re, im))
    }
}

/// One CSV field.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(usize),
    Real(f64),
    Bool(bool),
    Text(String),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Real(v) => format_real(*v),
            Cell::Bool(v) => v.to_string(),
            Cell::Text(v) => v.clone(),
        }
    }
}

/// 17 significant digits in scientific notation.
pub fn format_real(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        x.to_string()
    }
}

/// Field accessor for parsing one CSV row by column name.
pub struct Fields<'a> {
    header: &'a csv::StringRecord,
    row: &'a csv::StringRecord,
}

impl Fields<'_> {
    fn raw(&self, name: &str) -> Result<&str> {
        let idx = self
            .header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Io(format!("missing column {name:?}")))?;
        self.row
            .get(idx)
            .ok_or_else(|| Error::Io(format!("short row, missing {name:?}")))
    }

    fn parse<T: std::str::FromStr>(&self, name: &str) -> Result<T> {
        let raw = self.raw(name)?;
        raw.parse()
            .map_err(|_| Error::Io(format!("cannot parse {raw:?} in column {name:?}")))
    }

    pub fn int(&self, name: &str) -> Result<usize> {
        self.parse(name)
    }

    pub fn real(&self, name: &str) -> Result<f64> {
        self.parse(name)
    }

    pub fn boolean(&self, name: &str) -> Result<bool> {
        self.parse(name)
    }

    pub fn text(&self, name: &str) -> Result<String> {
        self.raw(name).map(str::to_owned)
    }

    pub fn opt_real(&self, name: &str) -> Result<Option<f64>> {
        match self.raw(name)? {
            "" => Ok(None),
            _ => self.real(name).map(Some),
        }
    }

    pub fn complex(&self, re: &str, im: &str) -> Result<Complex64> {
        Ok(Complex64::new(self.real(re)?, self.real(im)?))
    }
}

/// A record with a fixed flat column layout.
pub trait Tabular: Sized {
    const COLUMNS: &'static [&'static str];
    fn cells(&self) -> Vec<Cell>;
    fn from_fields(fields: &Fields<'_>) -> Result<Self>;
}

fn opt_cell(x: Option<f64>) -> Cell {
    match x {
        Some(v) => Cell::Real(v),
        None => Cell::Text(String::new()),
    }
}

fn enum_text<T: Serialize>(value: &T) -> String {
    serde_json::to_value(value)
        .ok()
        .and_then(|v| v.as_str().map(str::to_owned))
        .unwrap_or_default()
}

fn enum_from_text<T: DeserializeOwned>(text: &str) -> Result<T> {
    serde_json::from_value(serde_json::Value::String(text.to_owned()))
        .map_err(|_| Error::Io(format!("unknown value {text:?}")))
}

pub fn write_csv<T: Tabular, W: Write>(records: &[T], out: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(T::COLUMNS)?;
    for record in records {
        writer.write_record(record.cells().iter().map(Cell::render))?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_csv<T: Tabular, R: Read>(input: R) -> Result<Vec<T>> {
    let mut reader = csv::Reader::from_reader(input);
    let header = reader.headers()?.clone();
    let mut records = Vec::new();
    for row in reader.records() {
        let row = row?;
        records.push(T::from_fields(&Fields {
            header: &header,
            row: &row,
        })?);
    }
    Ok(records)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope<C, T> {
    pub schema_version: String,
    pub config_echo: C,
    pub records: Vec<T>,
}

pub fn write_json<C: Serialize, T: Serialize, W: Write>(config: &C, records: &[T], mut out: W) -> Result<()> {
    #[derive(Serialize)]
    struct EnvelopeRef<'a, C, T> {
        schema_version: &'static str,
        config_echo: &'a C,
        records: &'a [T],
    }
    let envelope = EnvelopeRef {
        schema_version: SCHEMA_VERSION,
        config_echo: config,
        records,
    };
    serde_json::to_writer_pretty(&mut out, &envelope)?;
    out.write_all(b"\n")?;
    Ok(())
}

pub fn read_json<C: DeserializeOwned, T: DeserializeOwned, R: Read>(input: R) -> Result<Envelope<C, T>> {
    let envelope: Envelope<C, T> = serde_json::from_reader(input)?;
    if envelope.schema_version != SCHEMA_VERSION {
        return Err(Error::Io(format!(
            "unsupported schema_version {:?}",
            envelope.schema_version
        )));
    }
    Ok(envelope)
}

/// Serializes `records` in `format`; CSV output does not carry the configuration.
pub fn serialize<C: Serialize, T: Tabular + Serialize>(config: &C, records: &[T], format: Format) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    match format {
        Format::Csv => write_csv(records, &mut bytes)?,
        Format::Json => write_json(config, records, &mut bytes)?,
    }
    Ok(bytes)
}

/// One converged eigenvalue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointRow {
    pub n_label: usize,
    pub gamma: f64,
    pub g: f64,
    pub b: f64,
    #[serde(with = "complex_object")]
    pub mu: Complex64,
    pub residual_norm: f64,
}

impl From<&SpectralPoint> for PointRow {
    fn from(p: &SpectralPoint) -> Self {
        Self {
            n_label: p.n_label,
            gamma: p.params.gamma,
            g: p.params.g,
            b: p.params.b,
            mu: p.mu,
            residual_norm: p.residual_norm,
        }
    }
}

impl Tabular for PointRow {
    const COLUMNS: &'static [&'static str] = &["n_label", "gamma", "g", "b", "re_mu", "im_mu", "residual_norm"];

    fn cells(&self) -> Vec<Cell> {
        vec![
            Cell::Int(self.n_label),
            Cell::Real(self.gamma),
            Cell::Real(self.g),
            Cell::Real(self.b),
            Cell::Real(self.mu.re),
            Cell::Real(self.mu.im),
            Cell::Real(self.residual_norm),
        ]
    }

    fn from_fields(f: &Fields<'_>) -> Result<Self> {
        Ok(Self {
            n_label: f.int("n_label")?,
            gamma: f.real("gamma")?,
            g: f.real("g")?,
            b: f.real("b")?,
            mu: f.complex("re_mu", "im_mu")?,
            residual_norm: f.real("residual_norm")?,
        })
    }
}

/// One point of a continuation path. `branch` numbers the paths sharing a label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathRow {
    pub n_label: usize,
    pub branch: usize,
    pub gamma: f64,
    pub g: f64,
    pub b: f64,
    #[serde(with = "complex_object")]
    pub mu: Complex64,
    pub residual_norm: f64,
    pub is_real: bool,
    pub classification: String,
}

impl PathRow {
    /// Rows of all paths, ordered by `(n_label, branch, gamma)`.
    pub fn from_paths(paths: &[ContinuationPath]) -> Vec<Self> {
        let mut rows = Vec::new();
        let mut branch = 0;
        for (k, path) in paths.iter().enumerate() {
            branch = if k > 0 && paths[k - 1].n_label == path.n_label { branch + 1 } else { 0 };
            let classification = enum_text(&path.classification);
            rows.extend(path.points.iter().map(|p| PathRow {
                n_label: path.n_label,
                branch,
                gamma: p.params.gamma,
                g: p.params.g,
                b: p.params.b,
                mu: p.mu,
                residual_norm: p.residual_norm,
                is_real: p.mu.im.abs() < crate::continuation::REAL_TOLERANCE,
                classification: classification.clone(),
            }));
        }
        rows
    }
}

impl Tabular for PathRow {
    const COLUMNS: &'static [&'static str] = &[
        "n_label",
        "branch",
        "gamma",
        "g",
        "b",
        "re_mu",
        "im_mu",
        "residual_norm",
        "is_real",
        "classification",
    ];

    fn cells(&self) -> Vec<Cell> {
        vec![
            Cell::Int(self.n_label),
            Cell::Int(self.branch),
            Cell::Real(self.gamma),
            Cell::Real(self.g),
            Cell::Real(self.b),
            Cell::Real(self.mu.re),
            Cell::Real(self.mu.im),
            Cell::Real(self.residual_norm),
            Cell::Bool(self.is_real),
            Cell::Text(self.classification.clone()),
        ]
    }

    fn from_fields(f: &Fields<'_>) -> Result<Self> {
        Ok(Self {
            n_label: f.int("n_label")?,
            branch: f.int("branch")?,
            gamma: f.real("gamma")?,
            g: f.real("g")?,
            b: f.real("b")?,
            mu: f.complex("re_mu", "im_mu")?,
            residual_norm: f.real("residual_norm")?,
            is_real: f.boolean("is_real")?,
            classification: f.text("classification")?,
        })
    }
}

/// One located branch point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchRow {
    pub n_a: usize,
    pub n_b: usize,
    pub kind: String,
    pub g: f64,
    pub b: f64,
    pub gamma_c: f64,
    #[serde(with = "complex_object")]
    pub mu_c: Complex64,
    pub bracket_lo: f64,
    pub bracket_hi: f64,
    pub beta: Option<f64>,
}

impl BranchRow {
    /// Distinct branch events of all paths, ordered by `(gamma_c, n_a, n_b)`.
    pub fn from_paths(paths: &[ContinuationPath], g: f64, b: f64) -> Vec<Self> {
        let mut rows: Vec<Self> = Vec::new();
        for event in paths.iter().flat_map(|p| &p.branch_events) {
            let row = Self::new(event, g, b);
            if !rows.contains(&row) {
                rows.push(row);
            }
        }
        rows.sort_by(|a, b| {
            a.gamma_c
                .total_cmp(&b.gamma_c)
                .then(a.n_a.cmp(&b.n_a))
                .then(a.n_b.cmp(&b.n_b))
        });
        rows
    }

    fn new(event: &BranchPoint, g: f64, b: f64) -> Self {
        Self {
            n_a: event.partner_labels.0,
            n_b: event.partner_labels.1,
            kind: enum_text(&event.kind),
            g,
            b,
            gamma_c: event.gamma_c,
            mu_c: event.mu_c,
            bracket_lo: event.bracket.0,
            bracket_hi: event.bracket.1,
            beta: event.beta,
        }
    }
}

impl Tabular for BranchRow {
    const COLUMNS: &'static [&'static str] = &[
        "n_a",
        "n_b",
        "kind",
        "g",
        "b",
        "gamma_c",
        "re_mu_c",
        "im_mu_c",
        "bracket_lo",
        "bracket_hi",
        "beta",
    ];

    fn cells(&self) -> Vec<Cell> {
        vec![
            Cell::Int(self.n_a),
            Cell::Int(self.n_b),
            Cell::Text(self.kind.clone()),
            Cell::Real(self.g),
            Cell::Real(self.b),
            Cell::Real(self.gamma_c),
            Cell::Real(self.mu_c.re),
            Cell::Real(self.mu_c.im),
            Cell::Real(self.bracket_lo),
            Cell::Real(self.bracket_hi),
            opt_cell(self.beta),
        ]
    }

    fn from_fields(f: &Fields<'_>) -> Result<Self> {
        Ok(Self {
            n_a: f.int("n_a")?,
            n_b: f.int("n_b")?,
            kind: f.text("kind")?,
            g: f.real("g")?,
            b: f.real("b")?,
            gamma_c: f.real("gamma_c")?,
            mu_c: f.complex("re_mu_c", "im_mu_c")?,
            bracket_lo: f.real("bracket_lo")?,
            bracket_hi: f.real("bracket_hi")?,
            beta: f.opt_real("beta")?,
        })
    }
}

/// Eigenvalue shift of one level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftRow {
    pub n: usize,
    pub gamma: f64,
    pub g: f64,
    pub b: f64,
    #[serde(with = "complex_object")]
    pub mu: Complex64,
    pub delta_mu_abs: f64,
    pub is_complex: bool,
    pub outlier: bool,
}

impl ShiftRow {
    pub fn new(record: &ShiftRecord, gamma: f64, g: f64, b: f64) -> Self {
        Self {
            n: record.n,
            gamma,
            g,
            b,
            mu: record.mu,
            delta_mu_abs: record.delta_mu_abs,
            is_complex: record.is_complex,
            outlier: record.outlier,
        }
    }
}

impl Tabular for ShiftRow {
    const COLUMNS: &'static [&'static str] = &[
        "n",
        "gamma",
        "g",
        "b",
        "re_mu",
        "im_mu",
        "delta_mu_abs",
        "is_complex",
        "outlier",
    ];

    fn cells(&self) -> Vec<Cell> {
        vec![
            Cell::Int(self.n),
            Cell::Real(self.gamma),
            Cell::Real(self.g),
            Cell::Real(self.b),
            Cell::Real(self.mu.re),
            Cell::Real(self.mu.im),
            Cell::Real(self.delta_mu_abs),
            Cell::Bool(self.is_complex),
            Cell::Bool(self.outlier),
        ]
    }

    fn from_fields(f: &Fields<'_>) -> Result<Self> {
        Ok(Self {
            n: f.int("n")?,
            gamma: f.real("gamma")?,
            g: f.real("g")?,
            b: f.real("b")?,
            mu: f.complex("re_mu", "im_mu")?,
            delta_mu_abs: f.real("delta_mu_abs")?,
            is_complex: f.boolean("is_complex")?,
            outlier: f.boolean("outlier")?,
        })
    }
}

/// One shrink-rate fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRow {
    pub model: FitModel,
    pub gamma: f64,
    pub g: f64,
    pub b: f64,
    pub slope: f64,
    pub amplitude: f64,
    pub r_squared: f64,
    pub n_min: usize,
    pub n_max: usize,
    pub points_used: usize,
    pub envelope_excess: Option<f64>,
}

impl FitRow {
    pub fn new(fit: &FitResult, gamma: f64, g: f64, b: f64) -> Self {
        Self {
            model: fit.model,
            gamma,
            g,
            b,
            slope: fit.slope,
            amplitude: fit.amplitude,
            r_squared: fit.r_squared,
            n_min: fit.n_range.0,
            n_max: fit.n_range.1,
            points_used: fit.points_used,
            envelope_excess: fit.envelope_excess,
        }
    }
}

impl Tabular for FitRow {
    const COLUMNS: &'static [&'static str] = &[
        "model",
        "gamma",
        "g",
        "b",
        "slope",
        "amplitude",
        "r_squared",
        "n_min",
        "n_max",
        "points_used",
        "envelope_excess",
    ];

    fn cells(&self) -> Vec<Cell> {
        vec![
            Cell::Text(enum_text(&self.model)),
            Cell::Real(self.gamma),
            Cell::Real(self.g),
            Cell::Real(self.b),
            Cell::Real(self.slope),
            Cell::Real(self.amplitude),
            Cell::Real(self.r_squared),
            Cell::Int(self.n_min),
            Cell::Int(self.n_max),
            Cell::Int(self.points_used),
            opt_cell(self.envelope_excess),
        ]
    }

    fn from_fields(f: &Fields<'_>) -> Result<Self> {
        Ok(Self {
            model: enum_from_text(&f.text("model")?)?,
            gamma: f.real("gamma")?,
            g: f.real("g")?,
            b: f.real("b")?,
            slope: f.real("slope")?,
            amplitude: f.real("amplitude")?,
            r_squared: f.real("r_squared")?,
            n_min: f.int("n_min")?,
            n_max: f.int("n_max")?,
            points_used: f.int("points_used")?,
            envelope_excess: f.opt_real("envelope_excess")?,
        })
    }
}

/// One matrix-element check of the coupling bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MsRow {
    pub m: usize,
    pub n: usize,
    pub gamma: f64,
    pub b: f64,
    pub element_abs: f64,
    pub bound: f64,
    pub valid: bool,
    pub satisfied: bool,
    pub alpha: f64,
    pub m_const: f64,
    pub c_tilde: f64,
}

impl MsRow {
    pub fn from_report(report: &MsBoundReport, gamma: f64, b: f64) -> Vec<Self> {
        report
            .pairs
            .iter()
            .map(|p: &PairCheck| Self {
                m: p.m,
                n: p.n,
                gamma,
                b,
                element_abs: p.element_abs,
                bound: p.bound,
                valid: p.valid,
                satisfied: p.satisfied,
                alpha: report.alpha,
                m_const: report.m_const,
                c_tilde: report.c_tilde,
            })
            .collect()
    }
}

impl Tabular for MsRow {
    const COLUMNS: &'static [&'static str] = &[
        "m",
        "n",
        "gamma",
        "b",
        "element_abs",
        "bound",
        "valid",
        "satisfied",
        "alpha",
        "m_const",
        "c_tilde",
    ];

    fn cells(&self) -> Vec<Cell> {
        vec![
            Cell::Int(self.m),
            Cell::Int(self.n),
            Cell::Real(self.gamma),
            Cell::Real(self.b),
            Cell::Real(self.element_abs),
            Cell::Real(self.bound),
            Cell::Bool(self.valid),
            Cell::Bool(self.satisfied),
            Cell::Real(self.alpha),
            Cell::Real(self.m_const),
            Cell::Real(self.c_tilde),
        ]
    }

    fn from_fields(f: &Fields<'_>) -> Result<Self> {
        Ok(Self {
            m: f.int("m")?,
            n: f.int("n")?,
            gamma: f.real("gamma")?,
            b: f.real("b")?,
            element_abs: f.real("element_abs")?,
            bound: f.real("bound")?,
            valid: f.boolean("valid")?,
            satisfied: f.boolean("satisfied")?,
            alpha: f.real("alpha")?,
            m_const: f.real("m_const")?,
            c_tilde: f.real("c_tilde")?,
        })
    }
}

/// Shooting eigenvalue against the nearest oracle eigenvalue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRow {
    pub n_label: usize,
    pub gamma: f64,
    pub b: f64,
    #[serde(with = "complex_object")]
    pub shooting_mu: Complex64,
    #[serde(with = "complex_object")]
    pub oracle_mu: Complex64,
    pub abs_diff: f64,
    pub dim: usize,
    pub drift: f64,
    pub dense_drift: f64,
}

impl Tabular for OracleRow {
    const COLUMNS: &'static [&'static str] = &[
        "n_label",
        "gamma",
        "b",
        "re_shooting_mu",
        "im_shooting_mu",
        "re_oracle_mu",
        "im_oracle_mu",
        "abs_diff",
        "dim",
        "drift",
        "dense_drift",
    ];

    fn cells(&self) -> Vec<Cell> {
        vec![
            Cell::Int(self.n_label),
            Cell::Real(self.gamma),
            Cell::Real(self.b),
            Cell::Real(self.shooting_mu.re),
            Cell::Real(self.shooting_mu.im),
            Cell::Real(self.oracle_mu.re),
            Cell::Real(self.oracle_mu.im),
            Cell::Real(self.abs_diff),
            Cell::Int(self.dim),
            Cell::Real(self.drift),
            Cell::Real(self.dense_drift),
        ]
    }

    fn from_fields(f: &Fields<'_>) -> Result<Self> {
        Ok(Self {
            n_label: f.int("n_label")?,
            gamma: f.real("gamma")?,
            b: f.real("b")?,
            shooting_mu: f.complex("re_shooting_mu", "im_shooting_mu")?,
            oracle_mu: f.complex("re_oracle_mu", "im_oracle_mu")?,
            abs_diff: f.real("abs_diff")?,
            dim: f.int("dim")?,
            drift: f.real("drift")?,
            dense_drift: f.real("dense_drift")?,
        })
    }
}

/// One point of a figure series. The abscissa is `gamma` for spectra and `n_label`
/// for shift plots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FigureRow {
    pub series: String,
    pub n_label: usize,
    pub gamma: f64,
    pub g: f64,
    pub b: f64,
    #[serde(with = "complex_object")]
    pub mu: Complex64,
    pub delta_mu_abs: f64,
    pub is_real: bool,
    pub outlier: bool,
}

impl Tabular for FigureRow {
    const COLUMNS: &'static [&'static str] = &[
        "series",
        "n_label",
        "gamma",
        "g",
        "b",
        "re_mu",
        "im_mu",
        "delta_mu_abs",
        "is_real",
        "outlier",
    ];

    fn cells(&self) -> Vec<Cell> {
        vec![
            Cell::Text(self.series.clone()),
            Cell::Int(self.n_label),
            Cell::Real(self.gamma),
            Cell::Real(self.g),
            Cell::Real(self.b),
            Cell::Real(self.mu.re),
            Cell::Real(self.mu.im),
            Cell::Real(self.delta_mu_abs),
            Cell::Bool(self.is_real),
            Cell::Bool(self.outlier),
        ]
    }

    fn from_fields(f: &Fields<'_>) -> Result<Self> {
        Ok(Self {
            series: f.text("series")?,
            n_label: f.int("n_label")?,
            gamma: f.real("gamma")?,
            g: f.real("g")?,
            b: f.real("b")?,
            mu: f.complex("re_mu", "im_mu")?,
            delta_mu_abs: f.real("delta_mu_abs")?,
            is_real: f.boolean("is_real")?,
            outlier: f.boolean("outlier")?,
        })
    }
}
