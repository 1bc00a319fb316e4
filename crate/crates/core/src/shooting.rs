//! Newton shooting on five real unknowns with the global phase fixed by `Im psi(0) = 0`.

use nalgebra::{DMatrix, DVector, SVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::basis::oscillator_fns;
use crate::error::{Error, Result};
use crate::model::{unperturbed_mu, wkb_exponent, ProblemParams};
use crate::ode::{integrate_half_line, Direction, IntegrationResult, Mesh, WaveState, DEFAULT_STEP};

pub(crate) type Vec5 = SVector<f64, 5>;

/// Unknown vector `(Re psi(0), Re psi'(0), Im psi'(0), Re mu, Im mu)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShootingState {
    pub re_psi0: f64,
    pub re_dpsi0: f64,
    pub im_dpsi0: f64,
    pub re_mu: f64,
    pub im_mu: f64,
}

impl ShootingState {
    pub fn new(re_psi0: f64, re_dpsi0: f64, im_dpsi0: f64, re_mu: f64, im_mu: f64) -> Self {
        Self {
            re_psi0,
            re_dpsi0,
            im_dpsi0,
            re_mu,
            im_mu,
        }
    }

    /// Normalized unperturbed eigenfunction of level `n`, in the gauge where a
    /// PT-symmetric state has `Re psi'(0) = 0` and real `mu`.
    pub fn unperturbed(n: usize) -> Self {
        let values = oscillator_fns(n, 0.0);
        let mu = unperturbed_mu(n);
        if n.is_multiple_of(2) {
            Self::new(values[n].abs(), 0.0, 0.0, mu, 0.0)
        } else {
            let slope = (2.0 * n as f64).sqrt() * values[n - 1];
            Self::new(0.0, 0.0, slope.abs(), mu, 0.0)
        }
    }

    pub fn mu(&self) -> Complex64 {
        Complex64::new(self.re_mu, self.im_mu)
    }

    pub fn psi0(&self) -> Complex64 {
        Complex64::new(self.re_psi0, 0.0)
    }

    pub fn dpsi0(&self) -> Complex64 {
        Complex64::new(self.re_dpsi0, self.im_dpsi0)
    }

    /// Projection onto the PT-symmetric subspace (`Re psi'(0) = 0`, `Im mu = 0`).
    pub fn symmetrized(self) -> Self {
        Self {
            re_dpsi0: 0.0,
            im_mu: 0.0,
            ..self
        }
    }

    /// State of the PT partner `psi*(-x)`, which has eigenvalue `mu*`.
    pub fn pt_partner(self) -> Self {
        Self {
            re_dpsi0: -self.re_dpsi0,
            im_mu: -self.im_mu,
            ..self
        }
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.re_dpsi0.abs() <= tol && self.im_mu.abs() <= tol
    }

    pub(crate) fn to_vec(self) -> Vec5 {
        Vec5::new(self.re_psi0, self.re_dpsi0, self.im_dpsi0, self.re_mu, self.im_mu)
    }

    pub(crate) fn from_vec(v: &Vec5) -> Self {
        Self::new(v[0], v[1], v[2], v[3], v[4])
    }

    /// Linear combination `self + t (other - self)`, used by predictors.
    pub fn lerp(self, other: Self, t: f64) -> Self {
        Self::from_vec(&(self.to_vec() + (other.to_vec() - self.to_vec()) * t))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralPoint {
    pub n_label: usize,
    pub mu: Complex64,
    pub params: ProblemParams,
    pub residual_norm: f64,
    pub state: ShootingState,
    pub iterations: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wavefunction_samples: Option<Vec<(f64, Complex64)>>,
}

impl SpectralPoint {
    /// The PT partner `psi*(-x)` with eigenvalue `mu*`, relabeled.
    pub fn pt_partner(&self, n_label: usize) -> Self {
        let state = self.state.pt_partner();
        Self {
            n_label,
            mu: state.mu(),
            state,
            wavefunction_samples: self.wavefunction_samples.as_ref().map(|samples| {
                samples
                    .iter()
                    .rev()
                    .map(|&(x, psi)| (-x, psi.conj()))
                    .collect()
            }),
            ..self.clone()
        }
    }

    pub fn gamma(&self) -> f64 {
        self.params.gamma
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Forward-difference step, relative to `max(1, |u_j|)`.
    pub fd_step: f64,
    pub max_halvings: usize,
    pub condition_limit: f64,
    /// Mesh step target; the actual step also shrinks with the level (see [`mesh_step`]).
    pub step_target: f64,
    /// Record `(x, psi)` every this many mesh steps in the returned point.
    pub sample_stride: Option<usize>,
    pub subspace: Subspace,
}

impl SolverOptions {
    pub fn symmetric() -> Self {
        Self {
            subspace: Subspace::Symmetric,
            ..Self::default()
        }
    }
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            max_iterations: 60,
            fd_step: 1e-8,
            max_halvings: 8,
            condition_limit: 1e14,
            step_target: DEFAULT_STEP,
            sample_stride: None,
            subspace: Subspace::Full,
        }
    }
}

/// RK4 resolves a local wavelength `2 pi / sqrt(mu)`; the phase error scales as
/// `(h sqrt(mu))^4`, so the step is capped at `STEP_WAVENUMBER / sqrt(Re mu)`.
pub const STEP_WAVENUMBER: f64 = 0.006;

/// WKB exponent at which the norm quadrature hands over to the analytic tail. A wrong
/// `mu` excites the growing solution; stopping here keeps that contamination quadratic
/// in a region where it is still negligible.
pub const NORM_EXPONENT: f64 = 6.0;

/// Initial residual below which Newton starts directly on the fine grid.
const DIRECT_POLISH: f64 = 1e-3;

/// Norm cutoff used while the iterate is still far from a root.
pub const COARSE_NORM_EXPONENT: f64 = 3.0;

pub fn mesh_step(step_target: f64, mu_re: f64) -> f64 {
    if mu_re > 0.0 {
        step_target.min(STEP_WAVENUMBER / mu_re.sqrt())
    } else {
        step_target
    }
}

/// Integration setup frozen for one Newton solve.
#[derive(Debug, Clone, Copy)]
pub struct ShootingGrid {
    pub mesh: Mesh,
    pub x_max: f64,
    pub kappa: f64,
    /// `sqrt(x^2 - Re mu)` at the end of the norm quadrature.
    pub kappa_norm: f64,
    /// Multiplies the decay rows so that a unit error in `mu` gives an O(1) residual.
    pub decay_scale: f64,
}

impl ShootingGrid {
    pub fn new(params: &ProblemParams, mu_re: f64, step_target: f64) -> Result<Self> {
        Self::with_norm_exponent(params, mu_re, step_target, NORM_EXPONENT)
    }

    pub fn with_norm_exponent(
        params: &ProblemParams,
        mu_re: f64,
        step_target: f64,
        norm_exponent: f64,
    ) -> Result<Self> {
        params.validate()?;
        let x_max = params.resolved_x_max(mu_re);
        let mesh = Mesh::new(params.b, x_max, mesh_step(step_target, mu_re))?
            .with_norm_limit(exponent_point(mu_re, norm_exponent));
        let x_end = mesh.x_end();
        let x_norm = mesh.x_norm();
        let kappa_norm = (x_norm * x_norm - mu_re).max(0.0).sqrt();
        let kappa_sq = x_end * x_end - mu_re;
        if !(kappa_sq > 0.0) {
            return Err(Error::InvalidParams(format!(
                "x_max = {x_end} lies inside the classically allowed region of Re mu = {mu_re}"
            )));
        }
        let kappa = kappa_sq.sqrt();
        let decay_scale = (-wkb_exponent(mu_re, x_end)).exp() / kappa;
        Ok(Self {
            mesh,
            x_max: x_end,
            kappa,
            kappa_norm,
            decay_scale,
        })
    }
}

struct Evaluation {
    residual: Vec5,
    samples: Option<Vec<(f64, Complex64)>>,
}

fn evaluate(
    state: &ShootingState,
    params: &ProblemParams,
    grid: &ShootingGrid,
    sample_stride: Option<usize>,
) -> Result<Evaluation> {
    let init = WaveState::new(0.0, state.psi0(), state.dpsi0());
    let mu = state.mu();
    let plus = integrate_half_line(init, Direction::Plus, mu, params, &grid.mesh, sample_stride)?;
    // A PT-symmetric state satisfies psi(-x) = conj(psi(x)); the left half is its mirror.
    let minus = if state.re_dpsi0 == 0.0 && state.im_mu == 0.0 {
        mirror(&plus)
    } else {
        integrate_half_line(init, Direction::Minus, mu, params, &grid.mesh, sample_stride)?
    };
    let r_plus = (plus.terminal.dpsi + grid.kappa * plus.terminal.psi) * grid.decay_scale;
    let r_minus = (minus.terminal.dpsi - grid.kappa * minus.terminal.psi) * grid.decay_scale;
    let norm = plus.norm_contribution
        + minus.norm_contribution
        + tail_norm(plus.norm_edge, grid)
        + tail_norm(minus.norm_edge, grid);
    let residual = Vec5::new(r_plus.re, r_plus.im, r_minus.re, r_minus.im, norm - 1.0);
    let samples = sample_stride.map(|_| {
        let mut all: Vec<(f64, Complex64)> = minus.samples.iter().rev().copied().collect();
        all.extend(plus.samples.iter().skip(1).copied());
        all
    });
    Ok(Evaluation { residual, samples })
}

fn mirror(result: &IntegrationResult) -> IntegrationResult {
    let flip = |w: &WaveState| WaveState::new(-w.x, w.psi.conj(), -w.dpsi.conj());
    IntegrationResult {
        terminal: flip(&result.terminal),
        norm_contribution: result.norm_contribution,
        norm_edge: flip(&result.norm_edge),
        max_magnitude: result.max_magnitude,
        samples: result.samples.iter().map(|&(x, psi)| (-x, psi.conj())).collect(),
    }
}

/// `int_{x_n}^inf |psi|^2` for a decaying WKB tail: with `psi ~ kappa^{-1/2} exp(-S)`,
/// `|psi|^2 / (2 kappa)` to leading order, `(1 - x / (2 kappa^3))` first correction.
fn tail_norm(edge: WaveState, grid: &ShootingGrid) -> f64 {
    let k = grid.kappa_norm;
    if k <= 0.0 {
        return 0.0;
    }
    let x = edge.x.abs();
    edge.psi.norm_sqr() / (2.0 * k) * (1.0 - x / (2.0 * k * k * k))
}

/// Position beyond the turning point where the WKB exponent reaches `w`.
pub fn exponent_point(mu_re: f64, w: f64) -> f64 {
    let mut lo = mu_re.max(0.0).sqrt();
    let mut hi = lo + 1.0;
    while wkb_exponent(mu_re, hi) < w {
        hi += 1.0;
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if wkb_exponent(mu_re, mid) < w {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

/// `[Re r+, Im r+, Re r-, Im r-, N - 1]` with `r+- = psi'(+-X) +- kappa psi(+-X)`.
///
/// The decay rows are multiplied by `exp(-W(X)) / kappa`, `W` the WKB growth exponent
/// from the turning point to `X`.
pub fn residual(state: &ShootingState, params: &ProblemParams) -> Result<[f64; 5]> {
    let grid = ShootingGrid::new(params, state.re_mu, DEFAULT_STEP)?;
    residual_on_grid(state, params, &grid)
}

pub fn residual_on_grid(
    state: &ShootingState,
    params: &ProblemParams,
    grid: &ShootingGrid,
) -> Result<[f64; 5]> {
    let r = evaluate(state, params, grid, None)?.residual;
    Ok([r[0], r[1], r[2], r[3], r[4]])
}

/// Unknowns and equations Newton works with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subspace {
    /// All five unknowns and residual components.
    #[default]
    Full,
    /// PT-symmetric states only: unknowns `(Re psi(0), Im psi'(0), Re mu)` and the
    /// residual combinations `(Re r+ - Re r-) / 2`, `(Im r+ + Im r-) / 2`, `N - 1`, which
    /// are the only non-vanishing ones on that subspace. Solutions have real `mu`.
    Symmetric,
}

const SYMMETRIC_UNKNOWNS: [usize; 3] = [0, 2, 3];

impl Subspace {
    fn reduce(self, u: &Vec5) -> DVector<f64> {
        match self {
            Subspace::Full => DVector::from_column_slice(u.as_slice()),
            Subspace::Symmetric => DVector::from_iterator(3, SYMMETRIC_UNKNOWNS.iter().map(|&i| u[i])),
        }
    }

    fn expand(self, x: &DVector<f64>) -> Vec5 {
        match self {
            Subspace::Full => Vec5::from_column_slice(x.as_slice()),
            Subspace::Symmetric => {
                let mut u = Vec5::zeros();
                for (k, &i) in SYMMETRIC_UNKNOWNS.iter().enumerate() {
                    u[i] = x[k];
                }
                u
            }
        }
    }

    fn rows(self, r: &Vec5) -> DVector<f64> {
        match self {
            Subspace::Full => DVector::from_column_slice(r.as_slice()),
            Subspace::Symmetric => DVector::from_vec(vec![
                0.5 * (r[0] - r[2]),
                0.5 * (r[1] + r[3]),
                r[4],
            ]),
        }
    }
}

fn reduced_residual(
    x: &DVector<f64>,
    subspace: Subspace,
    params: &ProblemParams,
    grid: &ShootingGrid,
) -> Result<DVector<f64>> {
    let state = ShootingState::from_vec(&subspace.expand(x));
    Ok(subspace.rows(&evaluate(&state, params, grid, None)?.residual))
}

fn jacobian(
    x: &DVector<f64>,
    r: &DVector<f64>,
    subspace: Subspace,
    params: &ProblemParams,
    grid: &ShootingGrid,
    step: f64,
) -> Result<DMatrix<f64>> {
    let n = x.len();
    let mut jac = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut shifted = x.clone();
        let h = step * x[j].abs().max(1.0);
        shifted[j] += h;
        let rj = reduced_residual(&shifted, subspace, params, grid)?;
        jac.set_column(j, &((rj - r) / h));
    }
    Ok(jac)
}

/// Condition number of the row-equilibrated Jacobian.
pub fn equilibrated_condition(jac: &DMatrix<f64>) -> f64 {
    equilibrate(jac).0
}

fn equilibrate(jac: &DMatrix<f64>) -> (f64, DMatrix<f64>, DVector<f64>) {
    let n = jac.nrows();
    let mut scaled = jac.clone();
    let mut row_scale = DVector::from_element(n, 1.0);
    for i in 0..n {
        let m = scaled.row(i).amax();
        if m > 0.0 {
            row_scale[i] = 1.0 / m;
            scaled.row_mut(i).scale_mut(1.0 / m);
        }
    }
    let sv = scaled.singular_values();
    let (max, min) = (sv.max(), sv.min());
    let cond = if min > 0.0 { max / min } else { f64::INFINITY };
    (cond, scaled, row_scale)
}

fn newton_step(jac: &DMatrix<f64>, r: &DVector<f64>, limit: f64) -> (DVector<f64>, f64, bool) {
    let (cond, scaled, row_scale) = equilibrate(jac);
    let rhs = -r.component_mul(&row_scale);
    if cond <= limit {
        if let Some(step) = scaled.clone().lu().solve(&rhs) {
            if step.iter().all(|v| v.is_finite()) {
                return (step, cond, false);
            }
        }
    }
    let svd = scaled.svd(true, true);
    let eps = svd.singular_values.max() / limit;
    let step = svd
        .solve(&rhs, eps)
        .unwrap_or_else(|_| DVector::zeros(r.len()));
    (step, cond, true)
}

/// Jacobian block that couples PT-antisymmetric perturbations `(Re psi'(0), Im mu)` of
/// a symmetric state to the antisymmetric residual combinations
/// `(Re r+ + Re r-) / 2`, `(Im r+ - Im r-) / 2`. A sign change of its determinant along
/// a real branch marks a symmetry-breaking bifurcation (nonlinear case).
pub fn antisymmetric_block(
    state: &ShootingState,
    params: &ProblemParams,
    options: &SolverOptions,
) -> Result<[[f64; 2]; 2]> {
    let grid = ShootingGrid::new(params, state.re_mu, options.step_target)?;
    let base = state.symmetrized();
    let rows = |r: &Vec5| [0.5 * (r[0] + r[2]), 0.5 * (r[1] - r[3])];
    let r0 = rows(&evaluate(&base, params, &grid, None)?.residual);
    let mut block = [[0.0; 2]; 2];
    for (col, idx) in [1usize, 4].into_iter().enumerate() {
        let mut u = base.to_vec();
        u[idx] += options.fd_step;
        let r = rows(&evaluate(&ShootingState::from_vec(&u), params, &grid, None)?.residual);
        for row in 0..2 {
            block[row][col] = (r[row] - r0[row]) / options.fd_step;
        }
    }
    Ok(block)
}

/// Damped Newton with forward-difference Jacobian and Armijo backtracking.
///
/// Near-singular Jacobians (exceptional points, or the undefined phase of an odd state
/// at `gamma = 0`) fall back to a pseudoinverse step.
pub fn solve(seed: ShootingState, params: &ProblemParams) -> Result<SpectralPoint> {
    solve_with(seed, params, &SolverOptions::default(), 0)
}

pub fn solve_labeled(seed: ShootingState, params: &ProblemParams, n_label: usize) -> Result<SpectralPoint> {
    solve_with(seed, params, &SolverOptions::default(), n_label)
}

pub fn solve_with(
    seed: ShootingState,
    params: &ProblemParams,
    options: &SolverOptions,
    n_label: usize,
) -> Result<SpectralPoint> {
    let subspace = options.subspace;
    let seed = match subspace {
        Subspace::Full => seed,
        Subspace::Symmetric => seed.symmetrized(),
    };
    let mut iterations = 0;
    // A coarse norm cutoff first: far from the root the growing solution would dominate
    // the quadrature; the polish stage then starts close enough for it not to matter.
    let mut x = subspace.reduce(&seed.to_vec());
    let fine = ShootingGrid::new(params, seed.re_mu, options.step_target)?;
    let initial = reduced_residual(&x, subspace, params, &fine)?.norm();
    if initial < options.tolerance {
        return finish(&x, subspace, params, &fine, options, n_label, iterations);
    }
    if initial < DIRECT_POLISH {
        if let Ok(polished) = newton(x.clone(), subspace, params, &fine, options, &mut iterations) {
            return finish(&polished, subspace, params, &fine, options, n_label, iterations);
        }
    }
    {
        let coarse = ShootingGrid::with_norm_exponent(
            params,
            seed.re_mu,
            options.step_target,
            COARSE_NORM_EXPONENT,
        )?;
        x = newton(x, subspace, params, &coarse, options, &mut iterations)?;
    }
    let re_mu = subspace.expand(&x)[3];
    let grid = ShootingGrid::new(params, re_mu, options.step_target)?;
    let x = newton(x, subspace, params, &grid, options, &mut iterations)?;
    finish(&x, subspace, params, &grid, options, n_label, iterations)
}

fn finish(
    x: &DVector<f64>,
    subspace: Subspace,
    params: &ProblemParams,
    grid: &ShootingGrid,
    options: &SolverOptions,
    n_label: usize,
    iterations: usize,
) -> Result<SpectralPoint> {
    let state = ShootingState::from_vec(&subspace.expand(x));
    let eval = evaluate(&state, params, grid, options.sample_stride)?;
    Ok(SpectralPoint {
        n_label,
        mu: state.mu(),
        params: *params,
        residual_norm: eval.residual.norm(),
        state,
        iterations,
        wavefunction_samples: eval.samples,
    })
}

fn newton(
    mut x: DVector<f64>,
    subspace: Subspace,
    params: &ProblemParams,
    grid: &ShootingGrid,
    options: &SolverOptions,
    iterations: &mut usize,
) -> Result<DVector<f64>> {
    let mut r = reduced_residual(&x, subspace, params, grid)?;
    let mut norm = r.norm();
    while norm >= options.tolerance {
        if *iterations >= options.max_iterations {
            return Err(Error::NoConvergence {
                iterations: *iterations,
                residual: norm,
            });
        }
        *iterations += 1;
        let jac = jacobian(&x, &r, subspace, params, grid, options.fd_step)?;
        let (delta, cond, singular) = newton_step(&jac, &r, options.condition_limit);

        let mut lambda = 1.0;
        let mut accepted = None;
        for _ in 0..=options.max_halvings {
            let trial = &x + &delta * lambda;
            if let Ok(rt) = reduced_residual(&trial, subspace, params, grid) {
                let trial_norm = rt.norm();
                if trial_norm.is_finite() && trial_norm <= (1.0 - 1e-4 * lambda) * norm {
                    accepted = Some((trial, rt, trial_norm));
                    break;
                }
            }
            lambda *= 0.5;
        }
        match accepted {
            Some((trial, rt, nt)) => {
                x = trial;
                r = rt;
                norm = nt;
            }
            None if singular => return Err(Error::JacobianSingular { condition: cond }),
            None => {
                return Err(Error::NoConvergence {
                    iterations: *iterations,
                    residual: norm,
                })
            }
        }
    }
    Ok(x)
}
