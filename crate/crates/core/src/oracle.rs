//! Linear-case reference spectrum.
//!
//! Two layers: the dense Hamiltonian truncated to the lowest `dim` oscillator states,
//! diagonalized with a complex Schur decomposition, and a refinement of its eigenvalues
//! on the exact secular equation of the rank-two delta perturbation. Truncation alone
//! converges only like `dim^{-1/2}` because the couplings `psi_m(b) psi_n(b)` decay
//! slowly; the secular equation sums the full basis in closed form.

use gauss_quad::GaussLegendre;
use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::basis::{matrix_element_from_values, oscillator_fns};
use crate::error::{Error, Result};
use crate::model::{unperturbed_mu, ProblemParams};

/// Dense dimension used for `n_max` requested levels.
pub fn default_dim(n_max: usize) -> usize {
    ((2.5 * n_max as f64).ceil() as usize).max(120)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedHamiltonian {
    pub dim: usize,
    pub params: ProblemParams,
    pub entries: DMatrix<Complex64>,
}

impl TruncatedHamiltonian {
    /// `H[m][n] = (2n+1) delta_mn + <m|V|n>` for `m, n < dim`.
    pub fn build(params: &ProblemParams, dim: usize) -> Result<Self> {
        if dim < 2 {
            return Err(Error::InvalidParams(format!("dense dimension must be >= 2, got {dim}")));
        }
        params.validate()?;
        let psi_b = oscillator_fns(dim - 1, params.b);
        let entries = DMatrix::from_fn(dim, dim, |m, n| {
            let diag = if m == n { unperturbed_mu(n) } else { 0.0 };
            Complex64::new(diag, 0.0) + matrix_element_from_values(m, n, params.gamma, &psi_b)
        });
        Ok(Self {
            dim,
            params: *params,
            entries,
        })
    }

    /// Complex symmetry `H = H^T` (no conjugation).
    pub fn is_complex_symmetric(&self, tol: f64) -> bool {
        (0..self.dim).all(|m| (0..m).all(|n| (self.entries[(m, n)] - self.entries[(n, m)]).norm() <= tol))
    }

    pub fn trace(&self) -> Complex64 {
        self.entries.trace()
    }
}

/// All eigenvalues, sorted by real part and then imaginary part.
pub fn eigenvalues(h: &TruncatedHamiltonian) -> Result<Vec<Complex64>> {
    let diagonal = (0..h.dim).all(|m| (0..h.dim).all(|n| m == n || h.entries[(m, n)] == Complex64::new(0.0, 0.0)));
    if diagonal {
        let mut values: Vec<Complex64> = h.entries.diagonal().iter().copied().collect();
        sort_spectrum(&mut values);
        return Ok(values);
    }
    let schur = nalgebra::linalg::Schur::try_new(h.entries.clone(), 1e-15, 100 * h.dim)
        .ok_or(Error::NoConvergenceQr { dim: h.dim })?;
    let mut values: Vec<Complex64> = schur
        .eigenvalues()
        .ok_or(Error::NoConvergenceQr { dim: h.dim })?
        .iter()
        .copied()
        .collect();
    sort_spectrum(&mut values);
    Ok(values)
}

pub fn sort_spectrum(values: &mut [Complex64]) {
    values.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
}

const PANEL_ORDER: usize = 40;
const PANELS: usize = 60;
/// The tail integrand is negligible once `exp((Re mu - E_M) t)` falls below `e^{-40}`.
const TAIL_DECAY: f64 = 40.0;

/// Exact eigenvalue condition `1 + 4 gamma^2 S_e(mu) S_o(mu) = 0` with
/// `S_p(mu) = sum_{m of parity p} psi_m(b)^2 / (E_m - mu)`.
///
/// Each `S_p` is a finite head sum over `m < cutoff` plus the remainder written as
/// `int_0^inf exp(mu t) R_p(t) dt`, where `R_p` is the parity-projected Mehler kernel
/// at `(b, b)` minus its head terms. The integral is done on `t = s^2` with composite
/// Gauss-Legendre panels. `R_p` does not depend on `mu`, so it is tabulated once.
#[derive(Debug, Clone)]
pub struct SecularOracle {
    pub params: ProblemParams,
    pub cutoff: usize,
    pub mu_max: f64,
    psi_b_sq: Vec<f64>,
    nodes_t: Vec<f64>,
    tail_weights: [Vec<f64>; 2],
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct ParitySums {
    value: [Complex64; 2],
    derivative: [Complex64; 2],
}

impl SecularOracle {
    /// Valid for `Re mu <= mu_max`.
    pub fn new(params: &ProblemParams, mu_max: f64) -> Result<Self> {
        params.validate()?;
        let mu_max = mu_max.max(1.0);
        let cutoff = 300usize.max((5.0 * mu_max).ceil() as usize);
        let psi_b_sq: Vec<f64> = oscillator_fns(cutoff - 1, params.b)
            .into_iter()
            .map(|v| v * v)
            .collect();
        let e_cut = unperturbed_mu(cutoff);
        let t_max = TAIL_DECAY / (e_cut - mu_max);
        let s_max = t_max.sqrt();

        let mut edges = vec![0.0];
        let s_min: f64 = 1e-4_f64.min(0.5 * s_max);
        let ratio = (s_max / s_min).powf(1.0 / (PANELS - 1) as f64);
        edges.extend((0..PANELS).map(|i| s_min * ratio.powi(i as i32)));
        *edges.last_mut().unwrap() = s_max;

        let rule = GaussLegendre::new(PANEL_ORDER).map_err(|e| Error::InvalidParams(e.to_string()))?;
        let b = params.b;
        let mut nodes_t = Vec::with_capacity(PANELS * PANEL_ORDER);
        let mut tail_weights = [Vec::new(), Vec::new()];
        for w in edges.windows(2) {
            let (lo, hi) = (w[0], w[1]);
            let half = 0.5 * (hi - lo);
            let mid = 0.5 * (hi + lo);
            for (x, wt) in rule.iter() {
                let s = mid + half * x;
                let t = s * s;
                let [r_even, r_odd] = remainder_kernel(b, t, &psi_b_sq);
                let jac = wt * half * 2.0 * s;
                nodes_t.push(t);
                tail_weights[0].push(jac * r_even);
                tail_weights[1].push(jac * r_odd);
            }
        }
        Ok(Self {
            params: *params,
            cutoff,
            mu_max,
            psi_b_sq,
            nodes_t,
            tail_weights,
        })
    }

    fn sums(&self, mu: Complex64, skip: Option<usize>) -> ParitySums {
        let mut value = [Complex64::new(0.0, 0.0); 2];
        let mut derivative = value;
        for (m, &w) in self.psi_b_sq.iter().enumerate() {
            if Some(m) == skip {
                continue;
            }
            let inv = 1.0 / (unperturbed_mu(m) - mu);
            value[m % 2] += w * inv;
            derivative[m % 2] += w * inv * inv;
        }
        for (j, &t) in self.nodes_t.iter().enumerate() {
            let e = (mu * t).exp();
            for p in 0..2 {
                let term = self.tail_weights[p][j] * e;
                value[p] += term;
                derivative[p] += term * t;
            }
        }
        ParitySums { value, derivative }
    }

    /// `S_even(mu)`, `S_odd(mu)`.
    pub fn parity_sums(&self, mu: Complex64) -> (Complex64, Complex64) {
        let s = self.sums(mu, None);
        (s.value[0], s.value[1])
    }

    /// `1 + 4 gamma^2 S_e S_o`.
    pub fn secular(&self, mu: Complex64) -> Complex64 {
        let (se, so) = self.parity_sums(mu);
        1.0 + 4.0 * self.params.gamma * self.params.gamma * se * so
    }

    /// Newton on the secular equation multiplied through by `E_k - mu`, `k` the
    /// unperturbed level nearest to `Re mu`, which removes that pole.
    pub fn refine(&self, seed: Complex64) -> Result<Complex64> {
        let g2 = 4.0 * self.params.gamma * self.params.gamma;
        let mut mu = seed;
        for iteration in 0..200 {
            let k = nearest_level(mu.re).min(self.cutoff - 1);
            let p = k % 2;
            let q = 1 - p;
            let sums = self.sums(mu, Some(k));
            let e_k = Complex64::new(unperturbed_mu(k), 0.0);
            let gap = e_k - mu;
            let inner = self.psi_b_sq[k] + gap * sums.value[p];
            let f = gap + g2 * inner * sums.value[q];
            let inner_d = -sums.value[p] + gap * sums.derivative[p];
            let df = -1.0 + g2 * (inner_d * sums.value[q] + inner * sums.derivative[q]);
            let mut step = -f / df;
            if !step.is_finite() {
                return Err(Error::NoConvergence {
                    iterations: iteration,
                    residual: f.norm(),
                });
            }
            if step.norm() > 0.3 {
                step *= 0.3 / step.norm();
            }
            mu += step;
            if mu.re > self.mu_max {
                return Err(Error::InvalidParams(format!(
                    "secular refinement left the tabulated range (Re mu = {} > {})",
                    mu.re, self.mu_max
                )));
            }
            if step.norm() <= 1e-14 * mu.norm().max(1.0) {
                return Ok(mu);
            }
        }
        Err(Error::NoConvergence {
            iterations: 200,
            residual: self.secular(mu).norm(),
        })
    }
}

fn nearest_level(mu_re: f64) -> usize {
    ((mu_re - 1.0) / 2.0).round().max(0.0) as usize
}

/// Parity-projected Mehler kernel at `(b, b)` minus the head terms `m < cutoff`.
fn remainder_kernel(b: f64, t: f64, psi_b_sq: &[f64]) -> [f64; 2] {
    let sinh2t = (2.0 * t).sinh();
    let pref = 1.0 / (2.0 * std::f64::consts::PI * sinh2t).sqrt();
    let same = pref * (-b * b * t.tanh()).exp();
    let opposite = pref * (-b * b / t.tanh()).exp();
    let mut r = [0.5 * (same + opposite), 0.5 * (same - opposite)];
    for (m, &w) in psi_b_sq.iter().enumerate() {
        r[m % 2] -= w * (-unperturbed_mu(m) * t).exp();
    }
    r
}

/// Lowest `count` eigenvalues: dense seeds refined on the secular equation.
pub fn oracle_eigenvalues(params: &ProblemParams, count: usize, dim: usize) -> Result<Vec<Complex64>> {
    let dense = eigenvalues(&TruncatedHamiltonian::build(params, dim)?)?;
    refine_lowest(params, &dense, count)
}

fn refine_lowest(params: &ProblemParams, dense: &[Complex64], count: usize) -> Result<Vec<Complex64>> {
    let count = count.min(dense.len());
    if params.gamma == 0.0 {
        return Ok(dense[..count].to_vec());
    }
    let top = dense[..count].iter().map(|z| z.re).fold(1.0, f64::max);
    let oracle = SecularOracle::new(params, top + 20.0)?;
    let mut out = dense[..count]
        .iter()
        .map(|&z| oracle.refine(z))
        .collect::<Result<Vec<_>>>()?;
    sort_spectrum(&mut out);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncationReport {
    pub dim: usize,
    pub probe_count: usize,
    /// `max |lambda(dim) - lambda(dim + 40)|` over the lowest `probe_count` dense values.
    pub dense_drift: f64,
    /// Same for the refined values.
    pub drift: f64,
}

pub fn truncation_check(params: &ProblemParams, dim: usize, probe_count: usize) -> Result<TruncationReport> {
    if dim < 40 {
        return Err(Error::InvalidParams(format!("truncation check needs dim >= 40, got {dim}")));
    }
    let probe_count = probe_count.min(dim);
    let small = eigenvalues(&TruncatedHamiltonian::build(params, dim)?)?;
    let large = eigenvalues(&TruncatedHamiltonian::build(params, dim + 40)?)?;
    let max_gap = |a: &[Complex64], b: &[Complex64]| {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).norm())
            .fold(0.0, f64::max)
    };
    let dense_drift = max_gap(&small[..probe_count], &large[..probe_count]);
    let refined_small = refine_lowest(params, &small, probe_count)?;
    let refined_large = refine_lowest(params, &large, probe_count)?;
    Ok(TruncationReport {
        dim,
        probe_count,
        dense_drift,
        drift: max_gap(&refined_small, &refined_large),
    })
}
