//! Problem definition in oscillator units (hbar = 2m = 1, trap x^2, level spacing 2).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Growth exponent the integration domain must cover past the classical turning point.
/// The decaying tail beyond `x_max` is then suppressed by `exp(-2 * DECAY_EXPONENT)`.
pub const DECAY_EXPONENT: f64 = 18.0;

/// Smallest allowed gap between the delta position and the edge of the domain.
pub const MIN_DELTA_MARGIN: f64 = 4.0;

/// One Hamiltonian instance: `-d^2/dx^2 + x^2 + i gamma (delta(x-b) - delta(x+b)) + g |psi|^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemParams {
    pub gamma: f64,
    pub b: f64,
    pub g: f64,
    /// Truncation of the oscillator basis used by the dense oracle.
    pub basis_cutoff: usize,
    /// Half-width of the integration domain. `None` picks a level-dependent default.
    pub x_max: Option<f64>,
}

impl ProblemParams {
    pub fn new(gamma: f64, b: f64, g: f64) -> Self {
        Self {
            gamma,
            b,
            g,
            basis_cutoff: 120,
            x_max: None,
        }
    }

    pub fn with_gamma(self, gamma: f64) -> Self {
        Self { gamma, ..self }
    }

    pub fn with_g(self, g: f64) -> Self {
        Self { g, ..self }
    }

    pub fn with_x_max(self, x_max: f64) -> Self {
        Self {
            x_max: Some(x_max),
            ..self
        }
    }

    pub fn with_basis_cutoff(self, basis_cutoff: usize) -> Self {
        Self {
            basis_cutoff,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.b.is_finite() && self.b > 0.0) {
            return Err(Error::InvalidParams(format!("b must be positive, got {}", self.b)));
        }
        if !self.gamma.is_finite() {
            return Err(Error::InvalidParams("gamma must be finite".into()));
        }
        if !(self.g.is_finite() && self.g >= 0.0) {
            return Err(Error::InvalidParams(format!("g must be >= 0, got {}", self.g)));
        }
        if let Some(x_max) = self.x_max {
            if !(x_max > self.b + MIN_DELTA_MARGIN) {
                return Err(Error::InvalidParams(format!(
                    "x_max = {x_max} must exceed b + {MIN_DELTA_MARGIN} = {}",
                    self.b + MIN_DELTA_MARGIN
                )));
            }
        }
        Ok(())
    }

    /// Checks that the basis truncation is at least twice the highest requested level.
    pub fn validate_for_level(&self, n_max: usize) -> Result<()> {
        self.validate()?;
        if self.basis_cutoff < 2 * n_max {
            return Err(Error::InvalidParams(format!(
                "basis_cutoff = {} is below 2 x highest level ({n_max})",
                self.basis_cutoff
            )));
        }
        Ok(())
    }

    /// Domain half-width used for a state whose chemical potential has real part `mu_re`.
    pub fn resolved_x_max(&self, mu_re: f64) -> f64 {
        self.x_max
            .unwrap_or_else(|| default_x_max(self.b, mu_re))
    }
}

impl Default for ProblemParams {
    fn default() -> Self {
        Self::new(0.0, 1.0, 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parity {
    Even,
    Odd,
}

impl Parity {
    pub fn of(n: usize) -> Self {
        if n.is_multiple_of(2) {
            Parity::Even
        } else {
            Parity::Odd
        }
    }

    pub fn sign(self) -> f64 {
        match self {
            Parity::Even => 1.0,
            Parity::Odd => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnperturbedLevel {
    pub n: usize,
    pub mu: f64,
    pub parity: Parity,
}

impl UnperturbedLevel {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            mu: unperturbed_mu(n),
            parity: Parity::of(n),
        }
    }
}

#[inline]
pub fn unperturbed_mu(n: usize) -> f64 {
    (2 * n + 1) as f64
}

/// Levels `0..=n_max` of the bare trap, ascending.
pub fn unperturbed_spectrum(n_max: usize) -> Vec<UnperturbedLevel> {
    (0..=n_max).map(UnperturbedLevel::new).collect()
}

/// Position where `x^2` equals the unperturbed level `2n + 1`.
pub fn classical_turning_point(n: usize) -> f64 {
    unperturbed_mu(n).sqrt()
}

/// `int_{x_t}^{x} sqrt(t^2 - mu) dt` with `x_t` the turning point (or 0 when `mu <= 0`).
pub fn wkb_exponent(mu_re: f64, x: f64) -> f64 {
    let x = x.abs();
    if mu_re > 0.0 {
        let turning = mu_re.sqrt();
        if x <= turning {
            return 0.0;
        }
        let s = (x * x - mu_re).sqrt();
        0.5 * (x * s - mu_re * ((x + s) / turning).ln())
    } else if mu_re < 0.0 {
        let a = -mu_re;
        let s = (x * x + a).sqrt();
        0.5 * (x * s + a * ((x + s) / a.sqrt()).ln())
    } else {
        0.5 * x * x
    }
}

/// Smallest half-width that covers `DECAY_EXPONENT` of decay and keeps the deltas
/// at least `MIN_DELTA_MARGIN` (plus half a unit) inside the domain.
pub fn default_x_max(b: f64, mu_re: f64) -> f64 {
    let mut lo = mu_re.max(0.0).sqrt();
    let mut hi = lo + 1.0;
    while wkb_exponent(mu_re, hi) < DECAY_EXPONENT {
        hi += 1.0;
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if wkb_exponent(mu_re, mid) < DECAY_EXPONENT {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi.max(b + MIN_DELTA_MARGIN + 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spectrum_values() {
        let levels = unperturbed_spectrum(0);
        assert_eq!(levels.len(), 1);
        assert_eq!(levels[0].mu, 1.0);
        assert_eq!(levels[0].parity, Parity::Even);

        let mus: Vec<f64> = unperturbed_spectrum(2).iter().map(|l| l.mu).collect();
        assert_eq!(mus, vec![1.0, 3.0, 5.0]);

        let last = *unperturbed_spectrum(89).last().unwrap();
        assert_eq!(last.n, 89);
        assert_eq!(last.mu, 179.0);
        assert_eq!(last.parity, Parity::Odd);
    }

    #[test]
    fn spectrum_gap_is_two() {
        let levels = unperturbed_spectrum(200);
        for pair in levels.windows(2) {
            assert_eq!(pair[1].mu - pair[0].mu, 2.0);
            assert_ne!(pair[0].parity, pair[1].parity);
        }
    }

    #[test]
    fn turning_points() {
        assert_eq!(classical_turning_point(0), 1.0);
        assert!((classical_turning_point(3) - 7f64.sqrt()).abs() < 1e-15);
        assert!((classical_turning_point(3) - 2.6458).abs() < 1e-4);
        assert_eq!(classical_turning_point(12), 5.0);
        for n in 0..500 {
            let x = classical_turning_point(n);
            assert!((x * x - unperturbed_mu(n)).abs() <= 4.0 * f64::EPSILON * unperturbed_mu(n));
        }
    }

    #[test]
    fn wkb_exponent_matches_quadrature() {
        for &mu in &[-3.0_f64, 0.0, 1.0, 41.0, 179.0] {
            let x_end = mu.max(0.0).sqrt() + 3.0;
            let x_t = mu.max(0.0).sqrt();
            let steps = 200_000;
            let h = (x_end - x_t) / steps as f64;
            let mut sum = 0.0;
            for i in 0..steps {
                let t = x_t + (i as f64 + 0.5) * h;
                sum += (t * t - mu).max(0.0).sqrt() * h;
            }
            assert!((sum - wkb_exponent(mu, x_end)).abs() < 1e-6, "mu = {mu}");
        }
    }

    #[test]
    fn default_domain_covers_decay_and_deltas() {
        for &(b, mu) in &[(0.2, 1.0), (7f64.sqrt(), 1.0), (1.0, 179.0), (0.5, 61.0)] {
            let x_max = default_x_max(b, mu);
            assert!(x_max > b + MIN_DELTA_MARGIN);
            assert!(wkb_exponent(mu, x_max) >= DECAY_EXPONENT - 1e-9);
        }
    }

    #[test]
    fn validation() {
        assert!(ProblemParams::new(1.0, 0.2, 0.0).validate().is_ok());
        assert!(ProblemParams::new(1.0, 0.0, 0.0).validate().is_err());
        assert!(ProblemParams::new(1.0, 0.2, -1.0).validate().is_err());
        assert!(ProblemParams::new(1.0, 1.0, 0.0).with_x_max(4.5).validate().is_err());
        assert!(ProblemParams::new(1.0, 1.0, 0.0).with_x_max(5.5).validate().is_ok());
        let p = ProblemParams::new(1.0, 0.2, 0.0).with_basis_cutoff(100);
        assert!(p.validate_for_level(50).is_ok());
        assert!(p.validate_for_level(51).is_err());
    }
}
