//! Parameter continuation of levels in `gamma` and `g`, branch-point location and
//! robust/fragile classification.
//!
//! Real levels are followed in the PT-symmetric subspace, complex-conjugate pairs as
//! their `Im mu > 0` member. Near a branch point both sides are described by a local
//! square-root model `u(gamma) = center + sqrt(gamma_c - gamma) dir`, continued to
//! `center + i sqrt(gamma - gamma_c) dir` on the complex side; it seeds the bisection
//! probes and the first points after the transition.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ProblemParams;
use crate::shooting::{
    antisymmetric_block, solve_with, ShootingState, SolverOptions, SpectralPoint, Subspace,
};

/// Largest `|Im mu|` still counted as real.
pub const REAL_TOLERANCE: f64 = 1e-8;

/// Largest `g` increment of [`sweep_g`].
pub const MAX_G_STEP: f64 = 0.5;

/// Largest unrecorded step used to fill gaps in the requested `gamma` grid, including
/// the stretch from `gamma = 0` to its first value.
pub const LEAD_IN_STEP: f64 = 0.02;

/// Distance past a located branch point at which the continued branches are first solved.
const START_OFFSET: f64 = 1e-4;

/// Seed scalings tried by the bisection probes.
const SEED_SCALES: [f64; 3] = [1.0, 0.5, 2.0];

/// Perturbation amplitudes tried when seeding a symmetry-broken nonlinear branch.
const BREAKING_AMPLITUDES: [f64; 3] = [1e-2, 3e-2, 1e-1];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Classification {
    Robust,
    Fragile,
    Undetermined,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchKind {
    /// Two real eigenvalues merge into a complex-conjugate pair (for `g > 0` they
    /// annihilate instead).
    Coalescence,
    /// A complex-conjugate pair becomes two real eigenvalues.
    Splitting,
    /// A complex-conjugate pair branches off a real nonlinear state.
    SymmetryBreaking,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchPoint {
    pub gamma_c: f64,
    pub mu_c: Complex64,
    pub partner_labels: (usize, usize),
    pub kind: BranchKind,
    /// Final bisection bracket.
    pub bracket: (f64, f64),
    /// Fitted exponent of `|mu - mu_c| ~ |gamma - gamma_c|^beta`.
    pub beta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathFailure {
    pub gamma: f64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuationPath {
    pub n_label: usize,
    pub points: Vec<SpectralPoint>,
    pub branch_events: Vec<BranchPoint>,
    pub classification: Classification,
    /// Set when the path stops before the end of the grid.
    pub failure: Option<PathFailure>,
}

impl ContinuationPath {
    fn new(n_label: usize) -> Self {
        Self {
            n_label,
            points: Vec::new(),
            branch_events: Vec::new(),
            classification: Classification::Undetermined,
            failure: None,
        }
    }

    pub fn max_abs_im(&self) -> f64 {
        self.points.iter().map(|p| p.mu.im.abs()).fold(0.0, f64::max)
    }

    pub fn point_at(&self, gamma: f64) -> Option<&SpectralPoint> {
        self.points
            .iter()
            .find(|p| (p.params.gamma - gamma).abs() <= 1e-12 * gamma.abs().max(1.0))
    }

    pub fn mu_at(&self, gamma: f64) -> Option<Complex64> {
        self.point_at(gamma).map(|p| p.mu)
    }

    pub fn coalescences(&self) -> impl Iterator<Item = &BranchPoint> {
        self.branch_events
            .iter()
            .filter(|e| e.kind == BranchKind::Coalescence)
    }
}

/// Robust if the path is complete and real throughout, fragile if it took part in a
/// coalescence, undetermined otherwise.
pub fn classify(path: &ContinuationPath) -> Classification {
    if path.coalescences().next().is_some() {
        Classification::Fragile
    } else if path.failure.is_none() && path.max_abs_im() < REAL_TOLERANCE {
        Classification::Robust
    } else {
        Classification::Undetermined
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuationOptions {
    /// Largest accepted `|delta mu|` per (sub)step.
    pub max_mu_jump: f64,
    /// Corrector iterations above which a step is refined.
    pub max_corrector_iterations: usize,
    /// Number of step halvings before a path is declared lost.
    pub max_refinements: usize,
    pub bisection_tol: f64,
    pub beta_range: (f64, f64),
    /// Distances `gamma_c - gamma` used by the square-root fit.
    pub fit_offsets: Vec<f64>,
    /// Range in `gamma - gamma_c` over which the square-root predictor is used.
    pub anchor_window: f64,
    pub solver: SolverOptions,
    /// Levels tracked above the highest requested one, so that it has a partner.
    pub extra_levels: usize,
}

impl Default for ContinuationOptions {
    fn default() -> Self {
        Self {
            max_mu_jump: 0.1,
            max_corrector_iterations: 25,
            max_refinements: 3,
            bisection_tol: 1e-8,
            beta_range: (0.4, 0.6),
            fit_offsets: (0..9).map(|k| 10f64.powf(-6.0 + 0.5 * k as f64)).collect(),
            anchor_window: 0.1,
            solver: SolverOptions::default(),
            extra_levels: 1,
        }
    }
}

/// Least-squares slope of `ln y` against `ln x` over the positive pairs; `None` with
/// fewer than five usable points.
pub fn fit_exponent(samples: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = samples
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 5 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Square-root model of two states near a branch point. `orient = +1`: real below
/// `gamma_c`, complex above; `orient = -1`: the reverse.
#[derive(Debug, Clone, Copy)]
struct LocalModel {
    gamma_c: f64,
    orient: f64,
    center: ShootingState,
    /// Symmetric components per unit `sqrt|gamma - gamma_c|`; its `re_mu` is positive.
    dir: ShootingState,
}

impl LocalModel {
    fn from_real_pair(
        lower: &ShootingState,
        upper: &ShootingState,
        gamma: f64,
        gamma_c: f64,
        orient: f64,
    ) -> Self {
        let s = (orient * (gamma_c - gamma)).abs().sqrt().max(1e-12);
        let l = lower.symmetrized().to_vec();
        let mut u = upper.symmetrized().to_vec();
        // psi and -psi are both admissible in the gauge; align the overall sign.
        if l[0] * u[0] + l[2] * u[2] < 0.0 {
            u[0] = -u[0];
            u[2] = -u[2];
        }
        Self {
            gamma_c,
            orient,
            center: ShootingState::from_vec(&((l + u) * 0.5)),
            dir: ShootingState::from_vec(&((u - l) / (2.0 * s))),
        }
    }

    /// From the `Im mu > 0` member of a pair. The `Re psi(0)` direction is not
    /// recoverable in this gauge and is set to zero.
    fn from_complex(state: &ShootingState, gamma: f64, gamma_c: f64, orient: f64) -> Self {
        let t = (orient * (gamma - gamma_c)).abs().sqrt().max(1e-12);
        Self {
            gamma_c,
            orient,
            center: state.symmetrized(),
            dir: ShootingState::new(0.0, 0.0, -state.re_dpsi0 / t, state.im_mu.abs() / t, 0.0),
        }
    }

    /// Positive on the real side.
    fn real_distance(&self, gamma: f64) -> f64 {
        self.orient * (self.gamma_c - gamma)
    }

    fn root(&self, gamma: f64) -> f64 {
        self.real_distance(gamma).abs().sqrt()
    }

    fn real_seeds(&self, gamma: f64, scale: f64) -> (ShootingState, ShootingState) {
        let s = scale * self.root(gamma);
        let c = self.center.to_vec();
        let d = self.dir.to_vec();
        (
            ShootingState::from_vec(&(c - d * s)),
            ShootingState::from_vec(&(c + d * s)),
        )
    }

    /// `center + i t dir`, rotated back to the gauge `Im psi(0) = 0`.
    fn complex_seed(&self, gamma: f64, scale: f64) -> ShootingState {
        let t = scale * self.root(gamma);
        let c = self.center;
        let d = self.dir;
        let phase = if c.re_psi0.abs() > 1e-6 {
            c.im_dpsi0 * d.re_psi0 / c.re_psi0
        } else {
            0.0
        };
        ShootingState::new(
            c.re_psi0,
            t * (phase - d.im_dpsi0),
            c.im_dpsi0,
            c.re_mu,
            t * d.re_mu.abs(),
        )
    }

    fn predicted_gap(&self, gamma: f64) -> f64 {
        2.0 * self.root(gamma) * self.dir.re_mu.abs()
    }

    fn predicted_im(&self, gamma: f64) -> f64 {
        self.root(gamma) * self.dir.re_mu.abs()
    }
}

enum Probe {
    Real(SpectralPoint, SpectralPoint),
    Complex(SpectralPoint),
    Neither,
}

enum CoalescenceOutcome {
    Persist(SpectralPoint, SpectralPoint),
    Branch {
        point: BranchPoint,
        center: ShootingState,
        start: Option<SpectralPoint>,
    },
}

enum SplittingOutcome {
    Persist(SpectralPoint),
    Branch {
        point: BranchPoint,
        center: ShootingState,
        start: Option<(SpectralPoint, SpectralPoint)>,
    },
}

/// Zero of the line through two `(gamma, value)` samples, if the value decreases.
fn extrapolate_zero(prev: Option<(f64, f64)>, last: (f64, f64)) -> Option<f64> {
    let (g0, v0) = prev?;
    let (g1, v1) = last;
    (v0 > v1 && g1 > g0).then(|| g1 + v1 * (g1 - g0) / (v0 - v1))
}

/// Solver context shared by tracks and probes.
struct Ctx<'a> {
    base: ProblemParams,
    opts: &'a ContinuationOptions,
}

impl Ctx<'_> {
    fn solve(
        &self,
        seed: ShootingState,
        gamma: f64,
        label: usize,
        subspace: Subspace,
    ) -> Result<SpectralPoint> {
        let options = SolverOptions {
            subspace,
            ..self.opts.solver
        };
        solve_with(seed, &self.base.with_gamma(gamma), &options, label)
    }

    /// Linear problems continue through a coalescence as a complex pair; nonlinear
    /// real pairs annihilate in a saddle-node.
    fn has_complex_continuation(&self) -> bool {
        self.base.g == 0.0
    }

    fn probe_real(
        &self,
        model: &LocalModel,
        gamma: f64,
        labels: (usize, usize),
    ) -> Option<(SpectralPoint, SpectralPoint)> {
        let expected = model.predicted_gap(gamma);
        let reach = self.opts.max_mu_jump + 2.0 * expected;
        for scale in SEED_SCALES {
            let (lo_seed, hi_seed) = model.real_seeds(gamma, scale);
            let (a, b) = rayon::join(
                || self.solve(lo_seed, gamma, labels.0, Subspace::Symmetric),
                || self.solve(hi_seed, gamma, labels.1, Subspace::Symmetric),
            );
            let (Ok(a), Ok(b)) = (a, b) else { continue };
            let (mut a, mut b) = if a.mu.re <= b.mu.re { (a, b) } else { (b, a) };
            let gap = b.mu.re - a.mu.re;
            let near = |p: &SpectralPoint| (p.mu.re - model.center.re_mu).abs() < reach;
            if gap > 0.2 * expected && gap > 1e-12 && near(&a) && near(&b) {
                a.n_label = labels.0;
                b.n_label = labels.1;
                return Some((a, b));
            }
        }
        None
    }

    fn probe_complex(&self, model: &LocalModel, gamma: f64, label: usize) -> Option<SpectralPoint> {
        if !self.has_complex_continuation() {
            return None;
        }
        let expected = model.predicted_im(gamma);
        let reach = self.opts.max_mu_jump + 2.0 * expected;
        for scale in SEED_SCALES {
            let seed = model.complex_seed(gamma, scale);
            let r = self.solve(seed, gamma, label, Subspace::Full);
            let Ok(p) = r else { continue };
            let p = if p.mu.im < 0.0 { p.pt_partner(label) } else { p };
            if p.mu.im > 0.1 * expected
                && p.mu.im > REAL_TOLERANCE
                && (p.mu.re - model.center.re_mu).abs() < reach
            {
                return Some(p);
            }
        }
        None
    }

    fn probe(&self, model: &LocalModel, gamma: f64, labels: (usize, usize)) -> Probe {
        let real = || self.probe_real(model, gamma, labels).map(|(a, b)| Probe::Real(a, b));
        let complex = || self.probe_complex(model, gamma, labels.0).map(Probe::Complex);
        let found = if model.real_distance(gamma) > 0.0 {
            real().or_else(complex)
        } else {
            complex().or_else(real)
        };
        found.unwrap_or(Probe::Neither)
    }

    fn beta_from(&self, samples: Vec<(f64, f64)>, gamma_c: f64) -> Result<f64> {
        let (lo, hi) = self.opts.beta_range;
        match fit_exponent(&samples) {
            Some(beta) if beta >= lo && beta <= hi => Ok(beta),
            beta => Err(Error::NotABranchPoint(format!(
                "square-root fit near gamma = {gamma_c} gave beta = {beta:?} from {} points",
                samples.len()
            ))),
        }
    }

    /// Bisection between a real pair at `lower.gamma()` and `gamma_hi`.
    fn locate_coalescence(
        &self,
        lower: &SpectralPoint,
        upper: &SpectralPoint,
        prev: Option<(f64, f64)>,
        gamma_hi: f64,
    ) -> Result<CoalescenceOutcome> {
        let gamma_lo = lower.params.gamma;
        let labels = (lower.n_label, upper.n_label);
        let width = gamma_hi - gamma_lo;
        let d_lo = (upper.mu.re - lower.mu.re).powi(2);
        let mut gamma_c = extrapolate_zero(prev, (gamma_lo, d_lo))
            .unwrap_or(gamma_hi)
            .clamp(gamma_lo + 0.05 * width, gamma_hi + width);
        let mut reals = vec![(gamma_lo, d_lo)];
        let mut pair = (lower.clone(), upper.clone());
        let mut model = LocalModel::from_real_pair(&lower.state, &upper.state, gamma_lo, gamma_c, 1.0);

        if let Probe::Real(a, b) = self.probe(&model, gamma_hi, labels) {
            return Ok(CoalescenceOutcome::Persist(a, b));
        }
        let (mut lo, mut hi) = (gamma_lo, gamma_hi);
        while hi - lo > self.opts.bisection_tol {
            let m = 0.5 * (lo + hi);
            match self.probe(&model, m, labels) {
                Probe::Real(a, b) => {
                    lo = m;
                    reals.push((m, (b.mu.re - a.mu.re).powi(2)));
                    pair = (a, b);
                }
                Probe::Complex(_) | Probe::Neither => hi = m,
            }
            let k = reals.len();
            let estimate = if k >= 2 {
                extrapolate_zero(Some(reals[k - 2]), reals[k - 1])
            } else {
                None
            };
            gamma_c = estimate
                .unwrap_or(gamma_c)
                .clamp(lo + 1e-3 * (hi - lo), hi);
            model = LocalModel::from_real_pair(&pair.0.state, &pair.1.state, lo, gamma_c, 1.0);
        }

        let gamma_c = 0.5 * (lo + hi);
        let near = LocalModel::from_real_pair(&pair.0.state, &pair.1.state, lo, gamma_c, 1.0);
        let samples: Vec<(f64, f64)> = self
            .opts
            .fit_offsets
            .par_iter()
            .filter_map(|&delta| {
                self.probe_real(&near, gamma_c - delta, labels)
                    .map(|(a, b)| (delta, 0.5 * (b.mu.re - a.mu.re)))
            })
            .collect();
        let beta = self.beta_from(samples, gamma_c)?;
        let start = if self.has_complex_continuation() {
            let first = gamma_hi.min(gamma_c + START_OFFSET).max(hi);
            self.probe_complex(&near, first, labels.0)
        } else {
            None
        };
        Ok(CoalescenceOutcome::Branch {
            point: BranchPoint {
                gamma_c,
                mu_c: Complex64::new(near.center.re_mu, 0.0),
                partner_labels: labels,
                kind: BranchKind::Coalescence,
                bracket: (lo, hi),
                beta: Some(beta),
            },
            center: near.center,
            start,
        })
    }

    /// Bisection between the `Im mu > 0` member of a pair at `pair.gamma()` and `gamma_hi`.
    fn locate_splitting(
        &self,
        pair: &SpectralPoint,
        labels: (usize, usize),
        prev: Option<(f64, f64)>,
        gamma_hi: f64,
    ) -> Result<SplittingOutcome> {
        let gamma_lo = pair.params.gamma;
        let width = gamma_hi - gamma_lo;
        let im_lo = pair.mu.im.powi(2);
        let mut gamma_c = extrapolate_zero(prev, (gamma_lo, im_lo))
            .unwrap_or(gamma_hi)
            .clamp(gamma_lo + 0.05 * width, gamma_hi + width);
        let mut complexes = vec![(gamma_lo, im_lo)];
        let mut last = pair.clone();
        let mut model = LocalModel::from_complex(&pair.state, gamma_lo, gamma_c, -1.0);

        if let Probe::Complex(c) = self.probe(&model, gamma_hi, labels) {
            return Ok(SplittingOutcome::Persist(c));
        }
        let (mut lo, mut hi) = (gamma_lo, gamma_hi);
        while hi - lo > self.opts.bisection_tol {
            let m = 0.5 * (lo + hi);
            match self.probe(&model, m, labels) {
                Probe::Complex(c) => {
                    lo = m;
                    complexes.push((m, c.mu.im.powi(2)));
                    last = c;
                }
                Probe::Real(..) | Probe::Neither => hi = m,
            }
            let k = complexes.len();
            let estimate = if k >= 2 {
                extrapolate_zero(Some(complexes[k - 2]), complexes[k - 1])
            } else {
                None
            };
            gamma_c = estimate
                .unwrap_or(gamma_c)
                .clamp(lo + 1e-3 * (hi - lo), hi);
            model = LocalModel::from_complex(&last.state, lo, gamma_c, -1.0);
        }

        let gamma_c = 0.5 * (lo + hi);
        let near = LocalModel::from_complex(&last.state, lo, gamma_c, -1.0);
        let samples: Vec<(f64, f64)> = self
            .opts
            .fit_offsets
            .par_iter()
            .filter_map(|&delta| {
                self.probe_complex(&near, gamma_c - delta, labels.0)
                    .map(|c| (delta, c.mu.im))
            })
            .collect();
        let beta = self.beta_from(samples, gamma_c)?;
        let first = gamma_hi.min(gamma_c + START_OFFSET).max(hi);
        let start = self.probe_real(&near, first, labels);
        Ok(SplittingOutcome::Branch {
            point: BranchPoint {
                gamma_c,
                mu_c: Complex64::new(near.center.re_mu, 0.0),
                partner_labels: labels,
                kind: BranchKind::Splitting,
                bracket: (lo, hi),
                beta: Some(beta),
            },
            center: near.center,
            start,
        })
    }

    fn advance(&self, track: &Track, gamma: f64) -> std::result::Result<Vec<SpectralPoint>, String> {
        let mut hist: Vec<SpectralPoint> = track.history.clone();
        let mut out = Vec::new();
        self.step_to(track, &mut hist, &mut out, gamma, 0)?;
        Ok(out)
    }

    fn step_to(
        &self,
        track: &Track,
        hist: &mut Vec<SpectralPoint>,
        out: &mut Vec<SpectralPoint>,
        target: f64,
        depth: usize,
    ) -> std::result::Result<(), String> {
        let last = hist.last().expect("track history is never empty").clone();
        let seed = predict(track, hist, target, self.opts.anchor_window);
        let label = track.kind.label();
        let verdict = match self.solve(seed, target, label, track.kind.subspace()) {
            Ok(p) => {
                let p = if track.kind.is_pair() && p.mu.im < 0.0 {
                    p.pt_partner(label)
                } else {
                    p
                };
                let jump = (p.mu - last.mu).norm();
                if jump > self.opts.max_mu_jump {
                    Err(format!("eigenvalue jumped by {jump:.3e}"))
                } else if track.kind.is_pair() && p.mu.im <= REAL_TOLERANCE {
                    Err("complex pair collapsed to the real axis".to_string())
                } else if p.iterations > self.opts.max_corrector_iterations
                    && depth < self.opts.max_refinements
                {
                    Err(format!("{} corrector iterations", p.iterations))
                } else {
                    Ok(p)
                }
            }
            Err(e) => Err(e.to_string()),
        };
        match verdict {
            Ok(p) => {
                hist.push(p.clone());
                if hist.len() > 2 {
                    hist.remove(0);
                }
                out.push(p);
                Ok(())
            }
            Err(_) if depth < self.opts.max_refinements => {
                let mid = 0.5 * (last.params.gamma + target);
                self.step_to(track, hist, out, mid, depth + 1)?;
                self.step_to(track, hist, out, target, depth + 1)
            }
            Err(reason) => Err(format!("at gamma = {target}: {reason}")),
        }
    }

    fn antisymmetric_det(&self, point: &SpectralPoint) -> Option<f64> {
        let options = SolverOptions {
            subspace: Subspace::Symmetric,
            ..self.opts.solver
        };
        antisymmetric_block(&point.state, &point.params, &options)
            .ok()
            .map(|m| m[0][0] * m[1][1] - m[0][1] * m[1][0])
    }

    /// Locates a sign change of the antisymmetric Jacobian determinant between two
    /// points of a real nonlinear branch and seeds the complex branch born there.
    fn symmetry_breaking(
        &self,
        a: &SpectralPoint,
        b: &SpectralPoint,
        det_a: f64,
    ) -> Option<(BranchPoint, ShootingState, SpectralPoint)> {
        let label = a.n_label;
        let solve_at = |gamma: f64, lo: &SpectralPoint, hi: &SpectralPoint| {
            let t = (gamma - lo.params.gamma) / (hi.params.gamma - lo.params.gamma);
            self.solve(lo.state.lerp(hi.state, t), gamma, label, Subspace::Symmetric)
                .ok()
        };
        let (mut lo, mut hi) = (a.clone(), b.clone());
        while hi.params.gamma - lo.params.gamma > 1e-6 {
            let m = 0.5 * (lo.params.gamma + hi.params.gamma);
            let p = solve_at(m, &lo, &hi)?;
            let det = self.antisymmetric_det(&p)?;
            if det.signum() == det_a.signum() {
                lo = p;
            } else {
                hi = p;
            }
        }
        let gamma_star = 0.5 * (lo.params.gamma + hi.params.gamma);
        let start_gamma = (gamma_star + 1e-3).min(b.params.gamma);
        let real = if start_gamma >= hi.params.gamma {
            solve_at(start_gamma, &hi, b).or_else(|| Some(b.clone()))?
        } else {
            hi.clone()
        };
        let options = SolverOptions {
            subspace: Subspace::Symmetric,
            ..self.opts.solver
        };
        let block = antisymmetric_block(&hi.state, &hi.params, &options).ok()?;
        let candidates = [
            (-block[0][1], block[0][0]),
            (block[1][1], -block[1][0]),
        ];
        let (v0, v1) = candidates
            .into_iter()
            .max_by(|x, y| x.0.hypot(x.1).total_cmp(&y.0.hypot(y.1)))?;
        let norm = v0.hypot(v1);
        if !(norm > 0.0) {
            return None;
        }
        for amplitude in BREAKING_AMPLITUDES {
            for sign in [1.0, -1.0] {
                let mut seed = real.state;
                seed.re_dpsi0 += sign * amplitude * v0 / norm;
                seed.im_mu += sign * amplitude * v1 / norm;
                let Ok(p) = self.solve(seed, real.params.gamma, label, Subspace::Full) else {
                    continue;
                };
                let p = if p.mu.im < 0.0 { p.pt_partner(label) } else { p };
                if p.mu.im > 1e-6 && (p.mu - real.mu).norm() < 1.0 {
                    let event = BranchPoint {
                        gamma_c: gamma_star,
                        mu_c: hi.mu,
                        partner_labels: (label, label),
                        kind: BranchKind::SymmetryBreaking,
                        bracket: (lo.params.gamma, hi.params.gamma),
                        beta: None,
                    };
                    return Some((event, hi.state, p));
                }
            }
        }
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TrackKind {
    Real(usize),
    /// Conjugate pair continued as its `Im mu > 0` member, reported under the first label.
    Pair(usize, usize),
}

impl TrackKind {
    fn label(self) -> usize {
        match self {
            TrackKind::Real(n) | TrackKind::Pair(n, _) => n,
        }
    }

    fn is_pair(self) -> bool {
        matches!(self, TrackKind::Pair(..))
    }

    fn subspace(self) -> Subspace {
        match self {
            TrackKind::Real(_) => Subspace::Symmetric,
            TrackKind::Pair(..) => Subspace::Full,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Anchor {
    gamma_c: f64,
    center: ShootingState,
}

#[derive(Debug, Clone)]
struct Track {
    kind: TrackKind,
    /// Output paths: one for a real track, `[+Im member, -Im member]` for a pair.
    outputs: Vec<usize>,
    /// Last accepted points, sub-steps included.
    history: Vec<SpectralPoint>,
    /// Last two grid points.
    grid: Vec<SpectralPoint>,
    anchor: Option<Anchor>,
    det: Option<f64>,
    active: bool,
}

impl Track {
    fn new(kind: TrackKind, outputs: Vec<usize>, first: SpectralPoint, anchor: Option<Anchor>) -> Self {
        Self {
            kind,
            outputs,
            history: vec![first],
            grid: Vec::new(),
            anchor,
            det: None,
            active: true,
        }
    }

    fn last(&self) -> &SpectralPoint {
        self.history.last().expect("track history is never empty")
    }

    fn commit(&mut self, point: SpectralPoint) {
        if self.last().params.gamma == point.params.gamma {
            self.history.pop();
        }
        self.history.push(point);
        if self.history.len() > 2 {
            self.history.remove(0);
        }
    }

    fn commit_grid(&mut self, point: SpectralPoint) {
        self.commit(point.clone());
        self.grid.push(point);
        if self.grid.len() > 2 {
            self.grid.remove(0);
        }
    }

    /// The last two grid values of `f`, if both exist.
    fn grid_pair(&self) -> Option<(&SpectralPoint, &SpectralPoint)> {
        match self.grid.as_slice() {
            [a, b] => Some((a, b)),
            _ => None,
        }
    }
}

fn predict(track: &Track, hist: &[SpectralPoint], target: f64, window: f64) -> ShootingState {
    let last = hist.last().expect("track history is never empty");
    let gamma_last = last.params.gamma;
    if let Some(anchor) = track.anchor {
        if gamma_last > anchor.gamma_c && target - anchor.gamma_c <= window {
            let linear = (target - anchor.gamma_c) / (gamma_last - anchor.gamma_c);
            let root = linear.sqrt();
            let c = anchor.center.to_vec();
            let u = last.state.to_vec();
            return match track.kind {
                TrackKind::Pair(..) => {
                    let mut v = c + (u - c) * linear;
                    v[1] = u[1] * root;
                    v[4] = u[4] * root;
                    ShootingState::from_vec(&v)
                }
                TrackKind::Real(_) => ShootingState::from_vec(&(c + (u - c) * root)),
            };
        }
    }
    match hist {
        [.., prev, last] => {
            let t = (target - prev.params.gamma) / (last.params.gamma - prev.params.gamma);
            prev.state.lerp(last.state, t)
        }
        _ => last.state,
    }
}

struct Sweep<'a> {
    ctx: Ctx<'a>,
    tracks: Vec<Track>,
    paths: Vec<ContinuationPath>,
    record: bool,
}

impl Sweep<'_> {
    fn real_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.tracks.len())
            .filter(|&i| self.tracks[i].active && !self.tracks[i].kind.is_pair())
            .collect();
        order.sort_by(|&i, &j| {
            self.tracks[i]
                .last()
                .mu
                .re
                .total_cmp(&self.tracks[j].last().mu.re)
        });
        order
    }

    fn record_event(&mut self, tracks: &[usize], event: &BranchPoint) {
        for &t in tracks {
            for &p in &self.tracks[t].outputs {
                self.paths[p].branch_events.push(event.clone());
            }
        }
    }

    fn end_outputs(&mut self, track: usize, gamma: f64, message: &str) {
        self.tracks[track].active = false;
        for &p in &self.tracks[track].outputs {
            self.paths[p].failure.get_or_insert(PathFailure {
                gamma,
                message: message.to_string(),
            });
        }
    }

    /// Adds a track whose first point may lie before `gamma` and advances it there.
    fn spawn(&mut self, track: Track, gamma: f64, resolved: &mut Vec<Option<SpectralPoint>>) {
        let idx = self.tracks.len();
        self.tracks.push(track);
        resolved.push(None);
        let first_gamma = self.tracks[idx].last().params.gamma;
        if first_gamma >= gamma {
            resolved[idx] = Some(self.tracks[idx].last().clone());
            return;
        }
        match self.ctx.advance(&self.tracks[idx], gamma) {
            Ok(points) => {
                for p in points {
                    self.tracks[idx].commit(p);
                }
                resolved[idx] = Some(self.tracks[idx].last().clone());
            }
            Err(message) => self.end_outputs(idx, first_gamma, &message),
        }
    }

    /// Returns whether both tracks were resolved at `gamma` (or retired).
    fn handle_coalescence(
        &mut self,
        i: usize,
        j: usize,
        gamma: f64,
        resolved: &mut Vec<Option<SpectralPoint>>,
    ) -> std::result::Result<(), String> {
        let (pi, pj) = match (self.tracks[i].grid.last(), self.tracks[j].grid.last()) {
            (Some(a), Some(b)) if a.params.gamma == b.params.gamma => (a.clone(), b.clone()),
            _ => return Err("partners have no common grid point".to_string()),
        };
        let ((lo_t, lower), (hi_t, upper)) = if pi.mu.re <= pj.mu.re {
            ((i, pi), (j, pj))
        } else {
            ((j, pj), (i, pi))
        };
        let prev = match (self.tracks[lo_t].grid_pair(), self.tracks[hi_t].grid_pair()) {
            (Some((a0, _)), Some((b0, _))) if a0.params.gamma == b0.params.gamma => {
                Some((a0.params.gamma, (b0.mu.re - a0.mu.re).powi(2)))
            }
            _ => None,
        };
        let outcome = self
            .ctx
            .locate_coalescence(&lower, &upper, prev, gamma)
            .map_err(|e| e.to_string())?;
        match outcome {
            CoalescenceOutcome::Persist(a, b) => {
                self.tracks[lo_t].commit(a.clone());
                self.tracks[hi_t].commit(b.clone());
                resolved[lo_t] = Some(a);
                resolved[hi_t] = Some(b);
            }
            CoalescenceOutcome::Branch {
                point,
                center,
                start,
            } => {
                self.record_event(&[lo_t, hi_t], &point);
                resolved[lo_t] = None;
                resolved[hi_t] = None;
                self.tracks[lo_t].active = false;
                self.tracks[hi_t].active = false;
                let (la, lb) = (lower.n_label, upper.n_label);
                let (first, second) = if la <= lb { (lo_t, hi_t) } else { (hi_t, lo_t) };
                match start {
                    Some(p) => {
                        let outputs = vec![self.tracks[first].outputs[0], self.tracks[second].outputs[0]];
                        let anchor = Anchor {
                            gamma_c: point.gamma_c,
                            center,
                        };
                        let mut p = p;
                        p.n_label = la.min(lb);
                        let track = Track::new(TrackKind::Pair(la.min(lb), la.max(lb)), outputs, p, Some(anchor));
                        self.spawn(track, gamma, resolved);
                    }
                    None => {
                        let message = if self.ctx.has_complex_continuation() {
                            "no complex continuation found past the branch point"
                        } else {
                            "real pair annihilates at the branch point"
                        };
                        self.end_outputs(lo_t, point.gamma_c, message);
                        self.end_outputs(hi_t, point.gamma_c, message);
                    }
                }
            }
        }
        Ok(())
    }

    fn handle_splitting(
        &mut self,
        i: usize,
        gamma: f64,
        resolved: &mut Vec<Option<SpectralPoint>>,
    ) -> std::result::Result<(), String> {
        let TrackKind::Pair(la, lb) = self.tracks[i].kind else {
            return Err("not a pair track".to_string());
        };
        let pair = self.tracks[i]
            .grid
            .last()
            .cloned()
            .ok_or_else(|| "pair has no grid point".to_string())?;
        let prev = self.tracks[i]
            .grid_pair()
            .map(|(a, _)| (a.params.gamma, a.mu.im.powi(2)));
        let outcome = self
            .ctx
            .locate_splitting(&pair, (la, lb), prev, gamma)
            .map_err(|e| e.to_string())?;
        match outcome {
            SplittingOutcome::Persist(c) => {
                self.tracks[i].commit(c.clone());
                resolved[i] = Some(c);
            }
            SplittingOutcome::Branch {
                point,
                center,
                start,
            } => {
                self.record_event(&[i], &point);
                resolved[i] = None;
                self.tracks[i].active = false;
                match start {
                    Some((a, b)) => {
                        let anchor = Some(Anchor {
                            gamma_c: point.gamma_c,
                            center,
                        });
                        let outputs = self.tracks[i].outputs.clone();
                        let lower = Track::new(TrackKind::Real(la), vec![outputs[0]], a, anchor);
                        let upper = Track::new(TrackKind::Real(lb), vec![outputs[1]], b, anchor);
                        self.spawn(lower, gamma, resolved);
                        self.spawn(upper, gamma, resolved);
                    }
                    None => self.end_outputs(i, point.gamma_c, "no real continuation found past the branch point"),
                }
            }
        }
        Ok(())
    }

    fn step(&mut self, gamma: f64) {
        let n0 = self.tracks.len();
        let mut resolved: Vec<Option<SpectralPoint>> = vec![None; n0];
        let mut consumed = vec![false; n0];

        // Branch points predicted by the linear trend of (mu_b - mu_a)^2 and (Im mu)^2.
        let order = self.real_order();
        for w in order.windows(2) {
            let (i, j) = (w[0], w[1]);
            if consumed[i] || consumed[j] {
                continue;
            }
            if let Some(pred) = predicted_gap_sq(&self.tracks[i], &self.tracks[j], gamma) {
                if pred <= 0.0 && self.handle_coalescence(i, j, gamma, &mut resolved).is_ok() {
                    consumed[i] = true;
                    consumed[j] = true;
                }
            }
        }
        for i in 0..n0 {
            let t = &self.tracks[i];
            if !t.active || consumed[i] || !t.kind.is_pair() {
                continue;
            }
            if let Some(((a, b), pred)) = t.grid_pair().map(|ab| (ab, 0.0)) {
                let pred = pred
                    + b.mu.im.powi(2)
                    + (b.mu.im.powi(2) - a.mu.im.powi(2)) * (gamma - b.params.gamma)
                        / (b.params.gamma - a.params.gamma);
                if pred <= 0.0 && self.handle_splitting(i, gamma, &mut resolved).is_ok() {
                    consumed[i] = true;
                }
            }
        }

        let todo: Vec<usize> = (0..n0)
            .filter(|&i| self.tracks[i].active && resolved[i].is_none())
            .collect();
        let results: Vec<(usize, std::result::Result<Vec<SpectralPoint>, String>)> = todo
            .par_iter()
            .map(|&i| (i, self.ctx.advance(&self.tracks[i], gamma)))
            .collect();
        let mut failed: Vec<(usize, String)> = Vec::new();
        let mut advanced: Vec<(usize, Vec<SpectralPoint>)> = Vec::new();
        for (i, r) in results {
            match r {
                Ok(points) => advanced.push((i, points)),
                Err(message) => failed.push((i, message)),
            }
        }
        // Two real tracks that converged onto the same eigenvalue.
        let mut duplicate = vec![false; n0];
        for (x, (i, pi)) in advanced.iter().enumerate() {
            for (j, pj) in advanced.iter().skip(x + 1) {
                let (a, b) = (pi.last().unwrap(), pj.last().unwrap());
                if !self.tracks[*i].kind.is_pair()
                    && !self.tracks[*j].kind.is_pair()
                    && (a.mu - b.mu).norm() < 1e-7
                {
                    duplicate[*i] = true;
                    duplicate[*j] = true;
                }
            }
        }
        for (i, points) in advanced {
            if duplicate[i] {
                failed.push((i, "converged onto a neighbouring level".to_string()));
            } else {
                for p in points {
                    self.tracks[i].commit(p);
                }
                resolved[i] = Some(self.tracks[i].last().clone());
            }
        }
        failed.sort_by_key(|f| f.0);

        for (i, message) in failed {
            if resolved[i].is_some() || !self.tracks[i].active {
                continue;
            }
            let outcome = if self.tracks[i].kind.is_pair() {
                self.handle_splitting(i, gamma, &mut resolved)
            } else {
                match self.neighbour(i, &order) {
                    Some(j) => self.handle_coalescence(i, j, gamma, &mut resolved),
                    None => Err(message.clone()),
                }
            };
            if let Err(reason) = outcome {
                let gamma_prev = self.tracks[i].grid.last().map_or(0.0, |p| p.params.gamma);
                self.end_outputs(i, gamma_prev, &format!("{message}; {reason}"));
            } else if self.tracks[i].active && resolved[i].is_none() {
                let gamma_prev = self.tracks[i].grid.last().map_or(0.0, |p| p.params.gamma);
                self.end_outputs(i, gamma_prev, &message);
            }
        }

        let previous: Vec<Option<SpectralPoint>> =
            self.tracks.iter().map(|t| t.grid.last().cloned()).collect();
        for i in 0..self.tracks.len() {
            if !self.tracks[i].active {
                continue;
            }
            let Some(p) = resolved[i].take() else { continue };
            self.tracks[i].commit_grid(p.clone());
            self.emit(i, &p);
        }

        if self.ctx.base.g > 0.0 {
            self.detect_symmetry_breaking(&previous, gamma);
        }
    }

    fn emit(&mut self, i: usize, p: &SpectralPoint) {
        if !self.record {
            return;
        }
        let track = &self.tracks[i];
        match track.kind {
            TrackKind::Real(n) => {
                let mut p = p.clone();
                p.n_label = n;
                self.paths[track.outputs[0]].points.push(p);
            }
            TrackKind::Pair(a, b) => {
                let mut p = p.clone();
                p.n_label = a;
                let conj = p.pt_partner(b);
                let (o0, o1) = (track.outputs[0], track.outputs[1]);
                self.paths[o0].points.push(p);
                self.paths[o1].points.push(conj);
            }
        }
    }

    /// Adjacent real track closest in `Re mu` at the previous grid point.
    fn neighbour(&self, i: usize, order: &[usize]) -> Option<usize> {
        let pos = order.iter().position(|&k| k == i)?;
        let mu = self.tracks[i].grid.last()?.mu.re;
        let candidates = [pos.checked_sub(1), Some(pos + 1)];
        candidates
            .into_iter()
            .flatten()
            .filter_map(|k| order.get(k).copied())
            .filter(|&k| self.tracks[k].active)
            .filter_map(|k| Some((k, (self.tracks[k].grid.last()?.mu.re - mu).abs())))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(k, _)| k)
    }

    fn detect_symmetry_breaking(&mut self, previous: &[Option<SpectralPoint>], gamma: f64) {
        let real: Vec<usize> = (0..self.tracks.len())
            .filter(|&i| {
                let t = &self.tracks[i];
                t.active && !t.kind.is_pair() && t.grid.last().is_some_and(|p| p.params.gamma == gamma)
            })
            .collect();
        let dets: Vec<(usize, Option<f64>)> = real
            .par_iter()
            .map(|&i| (i, self.ctx.antisymmetric_det(self.tracks[i].grid.last().unwrap())))
            .collect();
        for (i, det) in dets {
            let old = self.tracks[i].det;
            self.tracks[i].det = det;
            let (Some(old), Some(new)) = (old, det) else { continue };
            if old.signum() == new.signum() {
                continue;
            }
            let Some(Some(a)) = previous.get(i) else { continue };
            let b = self.tracks[i].grid.last().unwrap().clone();
            let Some((event, center, start)) = self.ctx.symmetry_breaking(a, &b, old) else {
                continue;
            };
            let label = b.n_label;
            self.record_event(&[i], &event);
            let first = self.paths.len();
            for _ in 0..2 {
                let mut path = ContinuationPath::new(label);
                path.branch_events.push(event.clone());
                self.paths.push(path);
            }
            let anchor = Anchor {
                gamma_c: event.gamma_c,
                center,
            };
            let track = Track::new(TrackKind::Pair(label, label), vec![first, first + 1], start, Some(anchor));
            let mut resolved = Vec::new();
            resolved.resize(self.tracks.len(), None);
            self.spawn(track, gamma, &mut resolved);
            let idx = self.tracks.len() - 1;
            if let Some(p) = resolved[idx].take() {
                if self.tracks[idx].active {
                    self.tracks[idx].commit_grid(p.clone());
                    self.emit(idx, &p);
                }
            }
        }
    }
}

/// Linear extrapolation of `(mu_b - mu_a)^2` to `gamma` from the last two grid points.
fn predicted_gap_sq(a: &Track, b: &Track, gamma: f64) -> Option<f64> {
    let ((a0, a1), (b0, b1)) = (a.grid_pair()?, b.grid_pair()?);
    if a0.params.gamma != b0.params.gamma || a1.params.gamma != b1.params.gamma {
        return None;
    }
    let d0 = (b0.mu.re - a0.mu.re).powi(2);
    let d1 = (b1.mu.re - a1.mu.re).powi(2);
    let (g0, g1) = (a0.params.gamma, a1.params.gamma);
    Some(d1 + (d1 - d0) * (gamma - g1) / (g1 - g0))
}

fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidParams("empty gamma grid".to_string()));
    }
    if grid.iter().any(|g| !g.is_finite() || *g < 0.0) {
        return Err(Error::InvalidParams("gamma grid values must be finite and >= 0".to_string()));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParams("gamma grid must be strictly increasing".to_string()));
    }
    Ok(())
}

/// Starting points at `gamma = 0`: the unperturbed levels, carried to `base.g` if needed.
fn initial_points(labels: &[usize], base: &ProblemParams, solver: &SolverOptions) -> Result<Vec<SpectralPoint>> {
    sweep_g_with(labels, base.g, &base.with_gamma(0.0), solver)
}

/// Continues every level in `n_labels` along `gamma_grid` from its unperturbed state.
pub fn sweep_gamma(
    n_labels: &[usize],
    gamma_grid: &[f64],
    params_base: &ProblemParams,
) -> Result<Vec<ContinuationPath>> {
    sweep_gamma_with(
        n_labels,
        gamma_grid,
        params_base,
        None,
        &ContinuationOptions::default(),
        None,
    )
}

/// [`sweep_gamma`] with explicit `gamma = 0` seeds, options and a progress callback
/// receiving each completed grid value.
pub fn sweep_gamma_with(
    n_labels: &[usize],
    gamma_grid: &[f64],
    params_base: &ProblemParams,
    seeds: Option<&[SpectralPoint]>,
    options: &ContinuationOptions,
    progress: Option<&(dyn Fn(f64) + Sync)>,
) -> Result<Vec<ContinuationPath>> {
    validate_grid(gamma_grid)?;
    params_base.validate()?;
    let Some(&max_label) = n_labels.iter().max() else {
        return Ok(Vec::new());
    };
    let tracked: Vec<usize> = (0..=max_label + options.extra_levels).collect();
    params_base.validate_for_level(*tracked.last().unwrap())?;

    let mut start = initial_points(&tracked, params_base, &options.solver)?;
    if let Some(seeds) = seeds {
        for s in seeds {
            if let Some(slot) = start.iter_mut().find(|p| p.n_label == s.n_label) {
                *slot = s.clone();
            }
        }
    }

    let mut grid: Vec<(f64, bool)> = vec![(0.0, gamma_grid[0] == 0.0)];
    for &target in gamma_grid.iter().skip_while(|g| **g == 0.0) {
        let from = grid.last().unwrap().0;
        let fill = ((target - from) / LEAD_IN_STEP - 1e-9).ceil().max(1.0) as usize;
        grid.extend((1..fill).map(|k| (from + (target - from) * k as f64 / fill as f64, false)));
        grid.push((target, true));
    }

    let mut sweep = Sweep {
        ctx: Ctx {
            base: *params_base,
            opts: options,
        },
        tracks: Vec::new(),
        paths: tracked.iter().map(|&n| ContinuationPath::new(n)).collect(),
        record: grid[0].1,
    };
    for (k, p) in start.into_iter().enumerate() {
        let mut track = Track::new(TrackKind::Real(p.n_label), vec![k], p.clone(), None);
        track.grid.push(p.clone());
        sweep.tracks.push(track);
        sweep.emit(k, &p);
    }
    if let Some(report) = progress {
        report(0.0);
    }
    for &(gamma, record) in grid.iter().skip(1) {
        sweep.record = record;
        sweep.step(gamma);
        if let Some(report) = progress {
            report(gamma);
        }
    }

    let mut paths: Vec<ContinuationPath> = sweep
        .paths
        .into_iter()
        .filter(|p| n_labels.contains(&p.n_label))
        .map(|mut p| {
            p.classification = classify(&p);
            p
        })
        .collect();
    paths.sort_by(|a, b| {
        a.n_label.cmp(&b.n_label).then_with(|| {
            let first = |p: &ContinuationPath| p.points.first().map_or(f64::INFINITY, |q| q.params.gamma);
            first(a).total_cmp(&first(b))
        })
    });
    Ok(paths)
}

/// Continues the `gamma = 0` levels from `g = 0` to `g_target` in steps of at most
/// [`MAX_G_STEP`]; the results seed [`sweep_gamma_with`] at fixed `g`.
pub fn sweep_g(n_labels: &[usize], g_target: f64, params_base: &ProblemParams) -> Result<Vec<SpectralPoint>> {
    sweep_g_with(n_labels, g_target, params_base, &SolverOptions::default())
}

pub fn sweep_g_with(
    n_labels: &[usize],
    g_target: f64,
    params_base: &ProblemParams,
    solver: &SolverOptions,
) -> Result<Vec<SpectralPoint>> {
    if !(g_target.is_finite() && g_target >= 0.0) {
        return Err(Error::InvalidParams(format!("g_target must be >= 0, got {g_target}")));
    }
    let base = params_base.with_gamma(0.0).with_g(0.0);
    base.validate()?;
    let options = SolverOptions {
        subspace: Subspace::Symmetric,
        ..*solver
    };
    let steps = (g_target / MAX_G_STEP).ceil() as usize;
    n_labels
        .par_iter()
        .map(|&n| {
            let lost = |g: f64| Error::PathLost {
                n_label: n,
                gamma: 0.0,
                g,
            };
            let first = solve_with(ShootingState::unperturbed(n), &base, &options, n)
                .map_err(|_| lost(0.0))?;
            let mut hist = vec![first];
            for k in 1..=steps {
                let g = g_target * k as f64 / steps as f64;
                g_step(&mut hist, g, &base, &options, 3).map_err(|_| lost(g))?;
            }
            Ok(hist.pop().expect("history is never empty"))
        })
        .collect()
}

fn g_step(
    hist: &mut Vec<SpectralPoint>,
    g: f64,
    base: &ProblemParams,
    options: &SolverOptions,
    depth: usize,
) -> Result<()> {
    let last = hist.last().expect("history is never empty").clone();
    let seed = match hist.as_slice() {
        [.., prev, last] => {
            let t = (g - prev.params.g) / (last.params.g - prev.params.g);
            prev.state.lerp(last.state, t)
        }
        _ => last.state,
    };
    let attempt = solve_with(seed, &base.with_g(g), options, last.n_label)
        .ok()
        .filter(|p| (p.mu - last.mu).norm() < 1.0);
    match attempt {
        Some(p) => {
            hist.push(p);
            if hist.len() > 2 {
                hist.remove(0);
            }
            Ok(())
        }
        None if depth > 0 => {
            g_step(hist, 0.5 * (last.params.g + g), base, options, depth - 1)?;
            g_step(hist, g, base, options, depth - 1)
        }
        None => Err(Error::PathLost {
            n_label: last.n_label,
            gamma: 0.0,
            g,
        }),
    }
}

/// Locates the branch point of two paths inside `bracket`. Both paths must have a point
/// at `bracket.0`: two real eigenvalues (coalescence) or a conjugate pair (splitting).
pub fn locate_branch_point(
    path_a: &ContinuationPath,
    path_b: &ContinuationPath,
    bracket: (f64, f64),
    params: &ProblemParams,
) -> Result<BranchPoint> {
    let (lo, hi) = bracket;
    if !(hi > lo) {
        return Err(Error::NotABranchPoint(format!("empty bracket ({lo}, {hi})")));
    }
    let missing = || Error::InvalidParams(format!("both paths need a point at gamma = {lo}"));
    let a = path_a.point_at(lo).ok_or_else(missing)?;
    let b = path_b.point_at(lo).ok_or_else(missing)?;
    let options = ContinuationOptions::default();
    let ctx = Ctx {
        base: params.with_gamma(lo),
        opts: &options,
    };
    let previous = |path: &ContinuationPath| {
        path.points
            .iter()
            .rev()
            .find(|p| p.params.gamma < lo)
            .cloned()
    };
    let persists = || Error::NotABranchPoint(format!("eigenvalues stay apart across ({lo}, {hi})"));
    if a.mu.im.abs() < REAL_TOLERANCE && b.mu.im.abs() < REAL_TOLERANCE {
        let (lower, upper, pl, pu) = if a.mu.re <= b.mu.re {
            (a, b, previous(path_a), previous(path_b))
        } else {
            (b, a, previous(path_b), previous(path_a))
        };
        let prev = match (pl, pu) {
            (Some(x), Some(y)) if x.params.gamma == y.params.gamma => {
                Some((x.params.gamma, (y.mu.re - x.mu.re).powi(2)))
            }
            _ => None,
        };
        match ctx.locate_coalescence(lower, upper, prev, hi)? {
            CoalescenceOutcome::Persist(..) => Err(persists()),
            CoalescenceOutcome::Branch { point, .. } => Ok(point),
        }
    } else {
        let labels = (a.n_label.min(b.n_label), a.n_label.max(b.n_label));
        let (member, path) = if a.mu.im > 0.0 { (a, path_a) } else { (b, path_b) };
        let mut member = member.clone();
        member.n_label = labels.0;
        let prev = previous(path).map(|p| (p.params.gamma, p.mu.im.powi(2)));
        match ctx.locate_splitting(&member, labels, prev, hi)? {
            SplittingOutcome::Persist(..) => Err(persists()),
            SplittingOutcome::Branch { point, .. } => Ok(point),
        }
    }
}

/// Uniform grid `start, start + step, ..., stop` (the last value included within
/// rounding).
pub fn uniform_grid(start: f64, stop: f64, step: f64) -> Vec<f64> {
    let count = ((stop - start) / step + 1e-9).floor() as usize;
    (0..=count).map(|k| start + k as f64 * step).collect()
}
