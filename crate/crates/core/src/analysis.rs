//! Eigenvalue shifts against the unperturbed spectrum, shrink-rate fits and outlier
//! detection.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::continuation::{ContinuationPath, REAL_TOLERANCE};
use crate::error::{Error, Result};
use crate::model::unperturbed_mu;

/// Shifts at or below this are treated as zero (robust or node levels) and kept out of
/// log-log fits.
pub const ZERO_SHIFT: f64 = 1e-10;

/// Minimum number of nonzero shifts for a fit.
pub const MIN_FIT_POINTS: usize = 8;

/// Minimum number of records for outlier detection.
pub const MIN_OUTLIER_RECORDS: usize = 12;

pub const OUTLIER_WINDOW: usize = 7;
pub const OUTLIER_THRESHOLD: f64 = 3.0;
/// Lower bound on the log-space MAD so that rounding noise is never flagged.
pub const OUTLIER_MAD_FLOOR: f64 = 1e-6;

/// Largest spread of the free slopes across `g` counted as consistent.
pub const SLOPE_SPREAD_LIMIT: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftRecord {
    pub n: usize,
    pub mu: Complex64,
    /// `|mu - (2n + 1)|`.
    pub delta_mu_abs: f64,
    pub is_complex: bool,
    pub outlier: bool,
}

impl ShiftRecord {
    pub fn new(n: usize, mu: Complex64) -> Self {
        Self {
            n,
            mu,
            delta_mu_abs: (mu - unperturbed_mu(n)).norm(),
            is_complex: mu.im.abs() >= REAL_TOLERANCE,
            outlier: false,
        }
    }
}

/// Shifts of every path at `at_gamma`, ordered by `(n, Im mu)`. Both members of a
/// conjugate pair are separate paths and both are recorded.
pub fn compute_shifts(paths: &[ContinuationPath], at_gamma: f64) -> Result<Vec<ShiftRecord>> {
    let mut records = paths
        .iter()
        .map(|path| {
            path.point_at(at_gamma)
                .map(|p| ShiftRecord::new(path.n_label, p.mu))
                .ok_or(Error::MissingGamma(at_gamma))
        })
        .collect::<Result<Vec<_>>>()?;
    records.sort_by(|a, b| a.n.cmp(&b.n).then(a.mu.im.total_cmp(&b.mu.im)));
    Ok(records)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitModel {
    /// `A n^s` with free `s`.
    PowerLaw,
    /// `C n^{-1/2}` as an upper envelope; `amplitude` is the smallest such `C`.
    HalfInverseBound,
    /// `A log(n) / n^{3/2}` with only `A` fitted.
    LogOverN32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: FitModel,
    pub slope: f64,
    pub amplitude: f64,
    /// Coefficient of determination in log-log coordinates, clamped to `[0, 1]`.
    pub r_squared: f64,
    pub n_range: (usize, usize),
    pub points_used: usize,
    /// Levels in range whose shift is zero to working precision.
    pub zero_shift_levels: Vec<usize>,
    /// `max_n (|delta mu_n| - C n^{-1/2})` for the envelope model, otherwise `None`.
    pub envelope_excess: Option<f64>,
}

impl FitResult {
    pub fn predict(&self, n: usize) -> f64 {
        let x = n as f64;
        match self.model {
            FitModel::PowerLaw | FitModel::HalfInverseBound => self.amplitude * x.powf(self.slope),
            FitModel::LogOverN32 => self.amplitude * x.ln() / x.powf(1.5),
        }
    }
}

fn r_squared(ys: &[f64], predicted: &[f64]) -> f64 {
    let mean = ys.iter().sum::<f64>() / ys.len() as f64;
    let ss_tot: f64 = ys.iter().map(|y| (y - mean).powi(2)).sum();
    let ss_res: f64 = ys.iter().zip(predicted).map(|(y, p)| (y - p).powi(2)).sum();
    if ss_tot > 0.0 {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    } else if ss_res == 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Least-squares fit of `model` in log-log coordinates over `n_range` (inclusive).
/// `n = 0` and zero shifts are excluded; `n = 1` is also excluded for the
/// `log(n) / n^{3/2}` shape, which vanishes there.
pub fn fit_shrink_rate(
    shifts: &[ShiftRecord],
    model: FitModel,
    n_range: (usize, usize),
) -> Result<FitResult> {
    let min_n = if model == FitModel::LogOverN32 { 2 } else { 1 };
    let in_range: Vec<&ShiftRecord> = shifts
        .iter()
        .filter(|r| r.n >= n_range.0.max(min_n) && r.n <= n_range.1)
        .collect();
    let mut zero_shift_levels: Vec<usize> = in_range
        .iter()
        .filter(|r| r.delta_mu_abs <= ZERO_SHIFT)
        .map(|r| r.n)
        .collect();
    zero_shift_levels.dedup();
    let used: Vec<(f64, f64)> = in_range
        .iter()
        .filter(|r| r.delta_mu_abs > ZERO_SHIFT)
        .map(|r| (r.n as f64, r.delta_mu_abs))
        .collect();
    if used.len() < MIN_FIT_POINTS {
        return Err(Error::InsufficientData {
            needed: MIN_FIT_POINTS,
            got: used.len(),
        });
    }
    let ln_n: Vec<f64> = used.iter().map(|(n, _)| n.ln()).collect();
    let ln_y: Vec<f64> = used.iter().map(|(_, y)| y.ln()).collect();
    let count = used.len() as f64;

    let (slope, ln_amp, envelope_excess) = match model {
        FitModel::PowerLaw => {
            let mx = ln_n.iter().sum::<f64>() / count;
            let my = ln_y.iter().sum::<f64>() / count;
            let sxy: f64 = ln_n.iter().zip(&ln_y).map(|(x, y)| (x - mx) * (y - my)).sum();
            let sxx: f64 = ln_n.iter().map(|x| (x - mx).powi(2)).sum();
            let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
            (slope, my - slope * mx, None)
        }
        FitModel::HalfInverseBound => {
            let c = used
                .iter()
                .map(|(n, y)| y * n.sqrt())
                .fold(0.0, f64::max);
            let excess = used
                .iter()
                .map(|(n, y)| y - c / n.sqrt())
                .fold(f64::NEG_INFINITY, f64::max);
            (-0.5, c.ln(), Some(excess))
        }
        FitModel::LogOverN32 => {
            let shape: Vec<f64> = used.iter().map(|(n, _)| (n.ln() / n.powf(1.5)).ln()).collect();
            let ln_amp = ln_y.iter().zip(&shape).map(|(y, s)| y - s).sum::<f64>() / count;
            (-1.5, ln_amp, None)
        }
    };
    let amplitude = ln_amp.exp();
    let result = FitResult {
        model,
        slope,
        amplitude,
        r_squared: 0.0,
        n_range,
        points_used: used.len(),
        zero_shift_levels,
        envelope_excess,
    };
    let predicted: Vec<f64> = used
        .iter()
        .map(|(n, _)| result.predict(*n as usize).ln())
        .collect();
    Ok(FitResult {
        r_squared: r_squared(&ln_y, &predicted),
        ..result
    })
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let m = values.len();
    if m % 2 == 1 {
        values[m / 2]
    } else {
        0.5 * (values[m / 2 - 1] + values[m / 2])
    }
}

/// Flags records whose log-shift, after removing the least-squares power-law trend,
/// deviates from the centred rolling median (window 7, truncated at the ends) by more
/// than three median absolute deviations of all such residuals. Fewer than 12 records,
/// zero shifts and `n = 0` are never flagged.
pub fn detect_outliers(shifts: &[ShiftRecord]) -> Vec<ShiftRecord> {
    let mut out = shifts.to_vec();
    for r in &mut out {
        r.outlier = false;
    }
    let idx: Vec<usize> = (0..out.len())
        .filter(|&i| out[i].n > 0 && out[i].delta_mu_abs > ZERO_SHIFT)
        .collect();
    if idx.len() < MIN_OUTLIER_RECORDS {
        return out;
    }
    let xs: Vec<f64> = idx.iter().map(|&i| (out[i].n as f64).ln()).collect();
    let ys: Vec<f64> = idx.iter().map(|&i| out[i].delta_mu_abs.ln()).collect();
    let count = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / count;
    let my = ys.iter().sum::<f64>() / count;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let logs: Vec<f64> = xs.iter().zip(&ys).map(|(x, y)| y - my - slope * (x - mx)).collect();
    let half = OUTLIER_WINDOW / 2;
    let residuals: Vec<f64> = (0..logs.len())
        .map(|k| {
            let lo = k.saturating_sub(half);
            let hi = (k + half + 1).min(logs.len());
            let mut window = logs[lo..hi].to_vec();
            logs[k] - median(&mut window)
        })
        .collect();
    let mad = median(&mut residuals.iter().map(|r| r.abs()).collect::<Vec<_>>())
        .max(OUTLIER_MAD_FLOOR);
    for (k, &i) in idx.iter().enumerate() {
        out[i].outlier = residuals[k].abs() > OUTLIER_THRESHOLD * mad;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeEntry {
    pub g: f64,
    pub fit: FitResult,
    /// RMS of the log-shift residuals about the fitted line.
    pub oscillation_rms: f64,
    /// Largest absolute log-shift residual.
    pub oscillation_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeReport {
    pub gamma: f64,
    pub b: f64,
    pub entries: Vec<SlopeEntry>,
    /// Largest minus smallest slope over `g > 0`.
    pub slope_spread: f64,
    /// Whether the slopes over `g > 0` lie within [`SLOPE_SPREAD_LIMIT`] of each other.
    pub slopes_consistent: bool,
}

/// Free power-law fit per `g` and the oscillation of the data about it.
pub fn slope_oscillation_report(
    shifts: &[(f64, Vec<ShiftRecord>)],
    at_gamma: f64,
    b: f64,
    n_range: (usize, usize),
) -> Result<SlopeReport> {
    let entries = shifts
        .iter()
        .map(|(g, records)| {
            let fit = fit_shrink_rate(records, FitModel::PowerLaw, n_range)?;
            let residuals: Vec<f64> = records
                .iter()
                .filter(|r| r.n >= n_range.0.max(1) && r.n <= n_range.1 && r.delta_mu_abs > ZERO_SHIFT)
                .map(|r| r.delta_mu_abs.ln() - fit.predict(r.n).ln())
                .collect();
            let oscillation_rms =
                (residuals.iter().map(|r| r * r).sum::<f64>() / residuals.len() as f64).sqrt();
            let oscillation_max = residuals.iter().fold(0.0_f64, |m, r| m.max(r.abs()));
            Ok(SlopeEntry {
                g: *g,
                fit,
                oscillation_rms,
                oscillation_max,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let slopes: Vec<f64> = entries
        .iter()
        .filter(|e| e.g > 0.0)
        .map(|e| e.fit.slope)
        .collect();
    let slope_spread = if slopes.is_empty() {
        0.0
    } else {
        slopes.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b))
            - slopes.iter().fold(f64::INFINITY, |a, &b| a.min(b))
    };
    Ok(SlopeReport {
        gamma: at_gamma,
        b,
        entries,
        slope_spread,
        slopes_consistent: slope_spread <= SLOPE_SPREAD_LIMIT,
    })
}
