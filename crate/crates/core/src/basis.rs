//! Normalized oscillator eigenfunctions, the double-delta matrix elements and the
//! decay bound `|<m|B|n>| <= M / (m n)^alpha`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::model::ProblemParams;

/// Exponent of the matrix-element decay for point interactions.
pub const MS_ALPHA: f64 = 0.25;

const RESCALE_THRESHOLD: f64 = 1e150;

/// `psi_n(x) = (2^n n! sqrt(pi))^{-1/2} H_n(x) exp(-x^2/2)`.
///
/// Evaluated with the normalized three-term recurrence. The Gaussian factor is carried
/// as a separate logarithmic scale so that large `|x|` does not underflow the seed and
/// the recurrence never overflows.
pub fn eval_oscillator_fn(n: usize, x: f64) -> f64 {
    let mut out = 0.0;
    for_each_oscillator_value(n, x, |k, value| {
        if k == n {
            out = value;
        }
    });
    out
}

/// Values `psi_0(x), ..., psi_{n_max}(x)`.
pub fn oscillator_fns(n_max: usize, x: f64) -> Vec<f64> {
    let mut values = Vec::with_capacity(n_max + 1);
    for_each_oscillator_value(n_max, x, |_, value| values.push(value));
    values
}

/// `(psi_n(x), psi_n'(x))`, using `psi_n' = sqrt(2n) psi_{n-1} - x psi_n`.
pub fn oscillator_fn_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let values = oscillator_fns(n, x);
    let value = values[n];
    let lower = if n == 0 { 0.0 } else { values[n - 1] };
    (value, (2.0 * n as f64).sqrt() * lower - x * value)
}

fn for_each_oscillator_value(n_max: usize, x: f64, mut visit: impl FnMut(usize, f64)) {
    let gauss_log = -0.5 * x * x;
    let mut log_scale = 0.0_f64;
    let mut prev = 0.0_f64;
    let mut cur = std::f64::consts::PI.powf(-0.25);
    visit(0, cur * gauss_log.exp());
    for k in 0..n_max {
        let kf = k as f64;
        let next = x * (2.0 / (kf + 1.0)).sqrt() * cur - (kf / (kf + 1.0)).sqrt() * prev;
        prev = cur;
        cur = next;
        if cur.abs() > RESCALE_THRESHOLD {
            prev /= RESCALE_THRESHOLD;
            cur /= RESCALE_THRESHOLD;
            log_scale += RESCALE_THRESHOLD.ln();
        }
        visit(k + 1, cur * (log_scale + gauss_log).exp());
    }
}

/// `<psi_m| i gamma (delta(x-b) - delta(x+b)) |psi_n>`.
///
/// Vanishes exactly for equal parity; otherwise equals `2 i gamma psi_m(b) psi_n(b)`.
pub fn matrix_element(m: usize, n: usize, params: &ProblemParams) -> Complex64 {
    if (m + n).is_multiple_of(2) {
        return Complex64::new(0.0, 0.0);
    }
    let hi = m.max(n);
    let values = oscillator_fns(hi, params.b);
    matrix_element_from_values(m, n, params.gamma, &values)
}

/// Same as [`matrix_element`] with `psi_k(b)` precomputed for `k >= max(m, n)`.
pub fn matrix_element_from_values(m: usize, n: usize, gamma: f64, psi_at_b: &[f64]) -> Complex64 {
    if (m + n).is_multiple_of(2) {
        return Complex64::new(0.0, 0.0);
    }
    Complex64::new(0.0, 2.0 * gamma * (psi_at_b[m] * psi_at_b[n]))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairCheck {
    pub m: usize,
    pub n: usize,
    pub element_abs: f64,
    pub bound: f64,
    /// Both indices satisfy `2(2k+1) >= b^2`.
    pub valid: bool,
    pub satisfied: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MsBoundReport {
    pub alpha: f64,
    pub m_const: f64,
    pub c_tilde: f64,
    pub n_max: usize,
    pub pairs: Vec<PairCheck>,
}

impl MsBoundReport {
    pub fn all_valid_satisfied(&self) -> bool {
        self.pairs.iter().filter(|p| p.valid).all(|p| p.satisfied)
    }

    pub fn valid_count(&self) -> usize {
        self.pairs.iter().filter(|p| p.valid).count()
    }

    pub fn pair(&self, m: usize, n: usize) -> Option<&PairCheck> {
        if m == 0 || n == 0 || m > self.n_max || n > self.n_max {
            return None;
        }
        self.pairs.get((m - 1) * self.n_max + (n - 1))
    }
}

/// Whether the single-index estimate `|psi_n(b)| <= C n^{-1/4}` applies to level `n`.
pub fn ms_estimate_applies(n: usize, b: f64) -> bool {
    2.0 * (2 * n + 1) as f64 >= b * b
}

/// Measures the smallest `C` with `|psi_n(b)| <= C n^{-1/4}` over the valid levels
/// `1..=n_max`, sets `M = 2 |gamma| C^2` and checks every pair `(m, n)` against
/// `M / (m n)^{1/4}`.
pub fn ms_bound_scan(n_max: usize, params: &ProblemParams) -> MsBoundReport {
    let n_max = n_max.max(1);
    let psi_b = oscillator_fns(n_max, params.b);
    let c_tilde = (1..=n_max)
        .filter(|&n| ms_estimate_applies(n, params.b))
        .map(|n| psi_b[n].abs() * (n as f64).powf(MS_ALPHA))
        .fold(0.0_f64, f64::max);
    let m_const = 2.0 * params.gamma.abs() * c_tilde * c_tilde;

    let mut pairs = Vec::with_capacity(n_max * n_max);
    for m in 1..=n_max {
        for n in 1..=n_max {
            let element_abs = matrix_element_from_values(m, n, params.gamma, &psi_b).norm();
            let bound = m_const / ((m * n) as f64).powf(MS_ALPHA);
            let valid = ms_estimate_applies(m, params.b) && ms_estimate_applies(n, params.b);
            let satisfied = element_abs <= bound * (1.0 + 1e-12) + f64::MIN_POSITIVE;
            pairs.push(PairCheck {
                m,
                n,
                element_abs,
                bound,
                valid,
                satisfied,
            });
        }
    }

    MsBoundReport {
        alpha: MS_ALPHA,
        m_const,
        c_tilde,
        n_max,
        pairs,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ground_state_and_parity_zeros() {
        let v = eval_oscillator_fn(0, 0.0);
        assert!((v - std::f64::consts::PI.powf(-0.25)).abs() < 1e-16);
        assert!((v - 0.7511255).abs() < 1e-7);
        assert_eq!(eval_oscillator_fn(1, 0.0), 0.0);
        for n in (1..60).step_by(2) {
            assert_eq!(eval_oscillator_fn(n, 0.0), 0.0);
        }
    }

    #[test]
    fn parity_reflection() {
        for n in 0..90 {
            for &x in &[0.2, 1.0, 2.5, 7.0] {
                let plus = eval_oscillator_fn(n, x);
                let minus = eval_oscillator_fn(n, -x);
                let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
                assert_eq!(minus, sign * plus, "n = {n}, x = {x}");
            }
        }
    }

    #[test]
    fn far_tail_does_not_underflow_early() {
        // Turning point of n = 500 is ~31.6; at 35 the function is small but representable.
        let v = eval_oscillator_fn(500, 35.0);
        assert!(v != 0.0 && v.is_finite());
        assert!(eval_oscillator_fn(500, 40.0).is_finite());
        assert!(eval_oscillator_fn(0, 40.0) == 0.0 || eval_oscillator_fn(0, 40.0) < 1e-300);
    }

    #[test]
    fn derivative_matches_finite_difference() {
        for n in [0, 1, 4, 17] {
            let x = 0.7;
            let (_, d) = oscillator_fn_with_derivative(n, x);
            let h = 1e-6;
            let fd = (eval_oscillator_fn(n, x + h) - eval_oscillator_fn(n, x - h)) / (2.0 * h);
            assert!((d - fd).abs() < 1e-8, "n = {n}");
        }
    }

    #[test]
    fn matrix_element_examples() {
        let p = ProblemParams::new(1.0, 0.2, 0.0);
        assert_eq!(matrix_element(0, 2, &p), Complex64::new(0.0, 0.0));
        let expect = 2.0 * eval_oscillator_fn(0, 0.2) * eval_oscillator_fn(1, 0.2);
        let got = matrix_element(0, 1, &p);
        assert_eq!(got.re, 0.0);
        assert!((got.im - expect).abs() < 1e-15);
        assert_eq!(matrix_element(1, 0, &p), matrix_element(0, 1, &p));
    }

    #[test]
    fn matrix_element_matches_unreduced_expression() {
        let p = ProblemParams::new(0.7, 0.5, 0.0);
        for m in 0..12 {
            for n in 0..12 {
                let direct = Complex64::new(0.0, p.gamma)
                    * (eval_oscillator_fn(m, p.b) * eval_oscillator_fn(n, p.b)
                        - eval_oscillator_fn(m, -p.b) * eval_oscillator_fn(n, -p.b));
                let got = matrix_element(m, n, &p);
                assert!((got - direct).norm() < 1e-14, "({m}, {n})");
                if (m + n) % 2 == 0 {
                    assert_eq!(got, Complex64::new(0.0, 0.0));
                }
            }
        }
    }

    #[test]
    fn hermitian_limit_scan() {
        let report = ms_bound_scan(30, &ProblemParams::new(0.0, 0.2, 0.0));
        assert_eq!(report.m_const, 0.0);
        assert!(report.pairs.iter().all(|p| p.satisfied && p.element_abs == 0.0));
    }

    #[test]
    fn validity_threshold() {
        // 2(2n+1) >= b^2 holds for every n >= 1 when b = 1.
        let report = ms_bound_scan(10, &ProblemParams::new(1.0, 1.0, 0.0));
        assert!(report.pairs.iter().all(|p| p.valid));
        // For b = sqrt(7) the level n = 1 falls outside (2 * 3 = 6 < 7).
        let report = ms_bound_scan(10, &ProblemParams::new(1.0, 7f64.sqrt(), 0.0));
        assert!(!report.pair(1, 2).unwrap().valid);
        assert!(report.pair(2, 3).unwrap().valid);
    }
}
