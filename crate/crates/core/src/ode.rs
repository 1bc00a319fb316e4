//! Outward integration of `-psi'' + x^2 psi + g |psi|^2 psi = mu psi` from `x = 0`.
//!
//! The deltas at `x = +-b` enter as exact impulses on a mesh node. Integrating across
//! `x0` from left to right the derivative jumps by `c psi(x0)` with `c = +i gamma` at
//! `+b` and `c = -i gamma` at `-b`; crossing from right to left reverses the sign.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ProblemParams;

/// Largest step used anywhere on the mesh.
pub const DEFAULT_STEP: f64 = 1e-3;

/// Trajectories are abandoned once `|psi|` exceeds this multiple of the initial size.
pub const OVERFLOW_FACTOR: f64 = 1e10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Plus,
    Minus,
}

impl Direction {
    pub fn sign(self) -> f64 {
        match self {
            Direction::Plus => 1.0,
            Direction::Minus => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaveState {
    pub x: f64,
    pub psi: Complex64,
    pub dpsi: Complex64,
}

impl WaveState {
    pub fn new(x: f64, psi: Complex64, dpsi: Complex64) -> Self {
        Self { x, psi, dpsi }
    }

    pub fn is_finite(&self) -> bool {
        self.psi.is_finite() && self.dpsi.is_finite()
    }
}

/// Uniform mesh on `[0, x_max]` with `+-b` on a node and an even number of steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mesh {
    pub step: f64,
    pub steps: usize,
    pub jump_step: usize,
    /// The norm quadrature stops after this many (even) steps.
    pub norm_steps: usize,
}

impl Mesh {
    /// `h = b / ceil(b / step_target)`; `x_max` is rounded up to the mesh.
    pub fn new(b: f64, x_max: f64, step_target: f64) -> Result<Self> {
        let per_b = (b / step_target).ceil().max(1.0);
        Self::with_step(b / per_b, b, x_max)
    }

    pub fn with_step(step: f64, b: f64, x_max: f64) -> Result<Self> {
        if !(step > 0.0) || !(b > 0.0) || !(x_max > b) {
            return Err(Error::InvalidParams(format!(
                "mesh needs 0 < step, 0 < b < x_max (step = {step}, b = {b}, x_max = {x_max})"
            )));
        }
        let ratio = b / step;
        let jump_step = ratio.round();
        if (ratio - jump_step).abs() > 1e-9 * ratio.max(1.0) || jump_step < 1.0 {
            return Err(Error::StepMisaligned { step, b });
        }
        let mut steps = (x_max / step - 1e-9).ceil() as usize;
        if steps % 2 == 1 {
            steps += 1;
        }
        Ok(Self {
            step,
            steps,
            jump_step: jump_step as usize,
            norm_steps: steps,
        })
    }

    /// Restricts the norm quadrature to `[0, x]`, rounded to an even node count.
    pub fn with_norm_limit(self, x: f64) -> Self {
        let k = ((x / self.step).ceil() as usize).min(self.steps);
        let norm_steps = (k + k % 2).min(self.steps).max(2);
        Self { norm_steps, ..self }
    }

    pub fn x_norm(&self) -> f64 {
        self.norm_steps as f64 * self.step
    }

    pub fn x_end(&self) -> f64 {
        self.steps as f64 * self.step
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntegrationResult {
    pub terminal: WaveState,
    /// Simpson estimate of `int |psi|^2` from 0 to `mesh.x_norm()` (the whole half-line
    /// unless the mesh was restricted).
    pub norm_contribution: f64,
    /// State at the end of the norm quadrature.
    pub norm_edge: WaveState,
    pub max_magnitude: f64,
    pub samples: Vec<(f64, Complex64)>,
}

/// Applies the delta impulse at `x0 = state.x` (must be `+b` or `-b`) for a crossing in
/// the given direction. `psi` is continuous.
pub fn jump_condition(state: WaveState, params: &ProblemParams, crossing: Direction) -> WaveState {
    let strength = if state.x > 0.0 {
        Complex64::new(0.0, params.gamma)
    } else {
        Complex64::new(0.0, -params.gamma)
    };
    let dpsi = state.dpsi + crossing.sign() * strength * state.psi;
    WaveState { dpsi, ..state }
}

#[inline]
fn rhs(x: f64, psi: Complex64, dpsi: Complex64, mu: Complex64, g: f64) -> (Complex64, Complex64) {
    let potential = x * x + g * psi.norm_sqr();
    (dpsi, (potential - mu) * psi)
}

/// Fixed-step RK4 from `initial.x = 0` to `+-mesh.x_end()`.
///
/// `sample_stride` records `(x, psi)` every that many steps (and at both ends).
///
/// The cubic term acts only up to `mesh.x_norm()`. Beyond it `|psi|^2` is negligible for
/// a decaying solution, while a growing one would blow up in finite `x`.
pub fn integrate_half_line(
    initial: WaveState,
    direction: Direction,
    mu: Complex64,
    params: &ProblemParams,
    mesh: &Mesh,
    sample_stride: Option<usize>,
) -> Result<IntegrationResult> {
    debug_assert!(initial.x == 0.0);
    let h = direction.sign() * mesh.step;
    let g = params.g;
    let limit = OVERFLOW_FACTOR * initial.psi.norm().max(initial.dpsi.norm()).max(1e-300);

    let mut psi = initial.psi;
    let mut dpsi = initial.dpsi;
    let mut norm_sum = psi.norm_sqr();
    let mut max_magnitude = psi.norm();
    let mut norm_edge = initial;
    let mut samples = Vec::new();
    if sample_stride.is_some() {
        samples.push((0.0, psi));
    }

    for k in 0..mesh.steps {
        let x = k as f64 * h;
        if k == mesh.jump_step && k > 0 {
            let state = jump_condition(WaveState::new(x, psi, dpsi), params, direction);
            dpsi = state.dpsi;
        }
        let g = if k < mesh.norm_steps { g } else { 0.0 };
        let (k1p, k1d) = rhs(x, psi, dpsi, mu, g);
        let xm = x + 0.5 * h;
        let (k2p, k2d) = rhs(xm, psi + 0.5 * h * k1p, dpsi + 0.5 * h * k1d, mu, g);
        let (k3p, k3d) = rhs(xm, psi + 0.5 * h * k2p, dpsi + 0.5 * h * k2d, mu, g);
        let (k4p, k4d) = rhs(x + h, psi + h * k3p, dpsi + h * k3d, mu, g);
        psi += h / 6.0 * (k1p + 2.0 * k2p + 2.0 * k3p + k4p);
        dpsi += h / 6.0 * (k1d + 2.0 * k2d + 2.0 * k3d + k4d);

        let magnitude = psi.norm();
        if !(magnitude <= limit) {
            return Err(Error::Overflow {
                x: x + h,
                magnitude,
            });
        }
        max_magnitude = max_magnitude.max(magnitude);
        if k < mesh.norm_steps {
            let weight = if k + 1 == mesh.norm_steps {
                norm_edge = WaveState::new(x + h, psi, dpsi);
                1.0
            } else if (k + 1) % 2 == 1 {
                4.0
            } else {
                2.0
            };
            norm_sum += weight * psi.norm_sqr();
        }
        if let Some(stride) = sample_stride {
            if (k + 1) % stride == 0 || k + 1 == mesh.steps {
                samples.push((x + h, psi));
            }
        }
    }

    Ok(IntegrationResult {
        terminal: WaveState::new(mesh.steps as f64 * h, psi, dpsi),
        norm_contribution: norm_sum * mesh.step / 3.0,
        norm_edge,
        max_magnitude,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::eval_oscillator_fn;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn mesh_contains_delta() {
        let mesh = Mesh::new(0.2, 6.2, DEFAULT_STEP).unwrap();
        assert!((mesh.jump_step as f64 * mesh.step - 0.2).abs() < 1e-14);
        assert_eq!(mesh.steps % 2, 0);
        assert!(mesh.x_end() >= 6.2 - 1e-12);
        let mesh = Mesh::new(7f64.sqrt(), 9.0, DEFAULT_STEP).unwrap();
        assert!((mesh.jump_step as f64 * mesh.step - 7f64.sqrt()).abs() < 1e-13);
        assert!(mesh.step <= DEFAULT_STEP);
    }

    #[test]
    fn misaligned_step_is_rejected() {
        assert_eq!(
            Mesh::with_step(0.03, 0.2, 6.0),
            Err(Error::StepMisaligned { step: 0.03, b: 0.2 })
        );
    }

    #[test]
    fn jump_examples() {
        let p = ProblemParams::new(2.0, 1.0, 0.0);
        let at_node = WaveState::new(1.0, c(0.0, 0.0), c(0.3, -0.1));
        assert_eq!(jump_condition(at_node, &p, Direction::Plus), at_node);

        let hermitian = ProblemParams::new(0.0, 1.0, 0.0);
        let s = WaveState::new(-1.0, c(0.4, 0.2), c(0.3, -0.1));
        assert_eq!(jump_condition(s, &hermitian, Direction::Minus), s);

        let s = WaveState::new(1.0, c(1.0, 0.0), c(0.0, 0.0));
        assert_eq!(jump_condition(s, &p, Direction::Plus).dpsi, c(0.0, 2.0));
        // Leftward across -b: psi'(-b-) = psi'(-b+) + i gamma psi(-b).
        let s = WaveState::new(-1.0, c(1.0, 0.0), c(0.0, 0.0));
        assert_eq!(jump_condition(s, &p, Direction::Minus).dpsi, c(0.0, 2.0));
        // Crossing back undoes the jump.
        let there = jump_condition(s, &p, Direction::Minus);
        assert_eq!(jump_condition(there, &p, Direction::Plus).dpsi, c(0.0, 0.0));
    }

    #[test]
    fn ground_state_decays() {
        let p = ProblemParams::new(0.0, 1.0, 0.0);
        let mesh = Mesh::new(1.0, 4.0, DEFAULT_STEP).unwrap();
        let init = WaveState::new(0.0, c(eval_oscillator_fn(0, 0.0), 0.0), c(0.0, 0.0));
        let exact = integrate_half_line(init, Direction::Plus, c(1.0, 0.0), &p, &mesh, None).unwrap();
        let expect = eval_oscillator_fn(0, mesh.x_end());
        let rel = (exact.terminal.psi.re - expect).abs() / expect;
        assert!(rel < 1e-7, "rel = {rel:e}");
        // int_0^4 psi_0^2 = erf(4) / 2.
        assert!((exact.norm_contribution - 0.5 * (1.0 - 1.541725790028002e-8)).abs() < 1e-10);

        let off = integrate_half_line(init, Direction::Plus, c(1.1, 0.0), &p, &mesh, None);
        match off {
            Ok(res) => assert!(res.terminal.psi.norm() > 1e3 * exact.terminal.psi.norm()),
            Err(Error::Overflow { .. }) => {}
            Err(e) => panic!("{e}"),
        }
    }

    #[test]
    fn derivative_jump_at_delta() {
        let p = ProblemParams::new(0.5, 0.2, 0.0);
        let mu = c(1.0, 0.0);
        let init = WaveState::new(0.0, c(0.75, 0.0), c(0.0, 0.1));
        // Integrate just past b with an aligned mesh and read off one-sided derivatives.
        let fine = Mesh::new(p.b, 6.0, 1e-4).unwrap();
        let with = integrate_half_line(init, Direction::Plus, mu, &p, &fine, Some(1)).unwrap();
        let without =
            integrate_half_line(init, Direction::Plus, mu, &p.with_gamma(0.0), &fine, Some(1)).unwrap();
        // Before b both trajectories coincide; psi stays continuous across b.
        let jb = fine.jump_step;
        assert_eq!(with.samples[jb].1, without.samples[jb].1);
        // One step after b the difference in psi is h * [psi'] to leading order.
        let psi_b = with.samples[jb].1;
        let delta = (with.samples[jb + 1].1 - without.samples[jb + 1].1) / fine.step;
        let expected = c(0.0, p.gamma) * psi_b;
        assert!((delta - expected).norm() < 1e-3 * expected.norm());
    }
}
