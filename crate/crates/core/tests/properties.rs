use num::bigint::BigInt;
use num::rational::BigRational;
use num::{One, ToPrimitive, Zero};
use num_complex::Complex64;
use proptest::prelude::*;

use ptspec::analysis::{compute_shifts, fit_shrink_rate, FitModel, ShiftRecord};
use ptspec::basis::{eval_oscillator_fn, matrix_element, ms_bound_scan, oscillator_fns};
use ptspec::continuation::{sweep_gamma, uniform_grid, ContinuationPath};
use ptspec::io::{read_csv, read_json, serialize, Format, PointRow};
use ptspec::model::{classical_turning_point, unperturbed_mu};
use ptspec::ode::{integrate_half_line, Direction, Mesh, WaveState};
use ptspec::oracle::oracle_eigenvalues;
use ptspec::run::{execute, render, Command, GammaGrid, RunConfig};
use ptspec::shooting::{solve_labeled, SpectralPoint};
use ptspec::ProblemParams;

/// `psi_n(x)` from exact rational Hermite polynomials: `psi_n^2 = H_n^2 / (2^n n!) * e^{-x^2} / sqrt(pi)`.
fn exact_oscillator_fn(n: usize, x: &BigRational) -> f64 {
    let two = BigRational::from_integer(BigInt::from(2));
    let mut prev = BigRational::zero();
    let mut cur = BigRational::one();
    for k in 0..n {
        let next = &two * x * &cur - BigRational::from_integer(BigInt::from(2 * k)) * &prev;
        prev = cur;
        cur = next;
    }
    let mut denom = BigInt::one();
    for k in 1..=n {
        denom *= BigInt::from(2 * k);
    }
    let ratio = (&cur * &cur / BigRational::from_integer(denom)).to_f64().unwrap();
    let xf = x.to_f64().unwrap();
    let magnitude = (ratio * (-xf * xf).exp() / std::f64::consts::PI.sqrt()).sqrt();
    if cur < BigRational::zero() {
        -magnitude
    } else {
        magnitude
    }
}

fn max_gap(a: &[(f64, Complex64)], b: &[(f64, Complex64)], map: impl Fn(Complex64) -> Complex64) -> f64 {
    a.iter()
        .zip(b)
        .map(|((_, p), (_, q))| (map(*p) - *q).norm())
        .fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn oscillator_fn_matches_exact_hermite(n in 0usize..=100, k in -120i64..=120) {
        let x = BigRational::new(BigInt::from(k), BigInt::from(8));
        let exact = exact_oscillator_fn(n, &x);
        let value = eval_oscillator_fn(n, k as f64 / 8.0);
        let scale = exact.abs().max(1e-300);
        prop_assert!((value - exact).abs() <= 1e-10 * scale, "n={n} x={} {value} vs {exact}", k as f64 / 8.0);
    }

    #[test]
    fn equal_parity_elements_vanish(m in 0usize..120, n in 0usize..120, b in 0.05f64..4.0, gamma in -3.0f64..3.0) {
        let params = ProblemParams::new(gamma, b, 0.0);
        let element = matrix_element(m, n, &params);
        if (m + n) % 2 == 0 {
            prop_assert_eq!(element, Complex64::new(0.0, 0.0));
        } else {
            prop_assert!((element.im - 2.0 * gamma * eval_oscillator_fn(m, b) * eval_oscillator_fn(n, b)).abs() < 1e-14);
        }
    }

    #[test]
    fn coupling_bound_holds_for_every_valid_pair(b in 0.05f64..3.0, gamma in 0.1f64..3.0) {
        let report = ms_bound_scan(60, &ProblemParams::new(gamma, b, 0.0));
        prop_assert!(report.c_tilde.is_finite());
        prop_assert!(report.all_valid_satisfied());
        for p in report.pairs.iter().filter(|p| p.valid) {
            prop_assert!(p.element_abs <= report.m_const * ((p.m * p.n) as f64).powf(-0.25) * (1.0 + 1e-12));
        }
    }

    #[test]
    fn turning_point_squares_to_level(n in 0usize..10_000) {
        let t = classical_turning_point(n);
        prop_assert!((t * t - unperturbed_mu(n)).abs() <= 4.0 * f64::EPSILON * unperturbed_mu(n));
        prop_assert_eq!(unperturbed_mu(n + 1) - unperturbed_mu(n), 2.0);
    }

    #[test]
    fn pt_reflection_of_a_solution_is_a_solution(
        b in 0.3f64..1.5,
        gamma in 0.0f64..3.0,
        mu_re in 0.5f64..12.0,
        mu_im in -1.0f64..1.0,
        psi0 in (-1.0f64..1.0, -1.0f64..1.0),
        dpsi0 in (-1.0f64..1.0, -1.0f64..1.0),
    ) {
        let params = ProblemParams::new(gamma, b, 0.0);
        let mesh = Mesh::new(b, b + 3.0, 2e-3).unwrap();
        let mu = Complex64::new(mu_re, mu_im);
        let psi0 = Complex64::new(psi0.0, psi0.1);
        let dpsi0 = Complex64::new(dpsi0.0, dpsi0.1);
        let right = integrate_half_line(WaveState::new(0.0, psi0, dpsi0), Direction::Plus, mu, &params, &mesh, Some(10)).unwrap();
        let left = integrate_half_line(WaveState::new(0.0, psi0.conj(), -dpsi0.conj()), Direction::Minus, mu.conj(), &params, &mesh, Some(10)).unwrap();
        let scale = right.max_magnitude.max(1.0);
        prop_assert!(max_gap(&right.samples, &left.samples, |z| z.conj()) < 1e-9 * scale);
    }

    #[test]
    fn fits_are_deterministic(values in proptest::collection::vec(1e-6f64..1.0, 30)) {
        let shifts: Vec<ShiftRecord> = values
            .iter()
            .enumerate()
            .map(|(n, v)| ShiftRecord::new(n, Complex64::new(unperturbed_mu(n) + v, 0.0)))
            .collect();
        for model in [FitModel::PowerLaw, FitModel::HalfInverseBound, FitModel::LogOverN32] {
            let a = fit_shrink_rate(&shifts, model, (2, 29)).unwrap();
            let b = fit_shrink_rate(&shifts, model, (2, 29)).unwrap();
            prop_assert!((0.0..=1.0).contains(&a.r_squared));
            prop_assert_eq!(format!("{a:?}"), format!("{b:?}"));
        }
    }

    #[test]
    fn point_rows_round_trip_bit_exactly(
        rows in proptest::collection::vec(
            (0usize..200, any::<f64>(), any::<f64>(), any::<f64>(), any::<f64>(), any::<f64>(), any::<f64>()),
            0..20,
        )
    ) {
        let rows: Vec<PointRow> = rows
            .into_iter()
            .map(|(n_label, gamma, g, b, re, im, r)| PointRow {
                n_label,
                gamma: finite(gamma),
                g: finite(g),
                b: finite(b),
                mu: Complex64::new(finite(re), finite(im)),
                residual_norm: finite(r),
            })
            .collect();
        let csv_bytes = serialize(&(), &rows, Format::Csv).unwrap();
        let back: Vec<PointRow> = read_csv(csv_bytes.as_slice()).unwrap();
        prop_assert_eq!(bits(&back), bits(&rows));
        let json_bytes = serialize(&"echo".to_string(), &rows, Format::Json).unwrap();
        let envelope = read_json::<String, PointRow, _>(json_bytes.as_slice()).unwrap();
        prop_assert_eq!(bits(&envelope.records), bits(&rows));
    }
}

fn finite(x: f64) -> f64 {
    if x.is_finite() {
        x
    } else {
        0.0
    }
}

fn bits(rows: &[PointRow]) -> Vec<(usize, [u64; 6])> {
    rows.iter()
        .map(|r| {
            (
                r.n_label,
                [r.gamma, r.g, r.b, r.mu.re, r.mu.im, r.residual_norm].map(f64::to_bits),
            )
        })
        .collect()
}

#[test]
fn oscillator_functions_are_normalized() {
    let (x_max, h): (f64, f64) = (18.0, 4e-3);
    let nodes = (2.0 * x_max / h).round() as usize;
    let mut norms = vec![0.0; 90];
    for k in 0..=nodes {
        let x = -x_max + k as f64 * h;
        let w = if k == 0 || k == nodes { 0.5 * h } else { h };
        for (n, v) in oscillator_fns(89, x).into_iter().enumerate() {
            norms[n] += w * v * v;
        }
    }
    for (n, norm) in norms.iter().enumerate() {
        assert!((norm - 1.0).abs() < 1e-8, "n = {n}: {norm}");
    }
}

#[test]
fn rk4_converges_with_fourth_order() {
    let (b, x_end) = (0.5, 3.0);
    let params = ProblemParams::new(1.3, b, 0.7);
    let mu = Complex64::new(3.1, 0.4);
    let start = WaveState::new(0.0, Complex64::new(0.6, 0.0), Complex64::new(0.1, -0.3));
    let terminal = |h: f64| {
        let mesh = Mesh::with_step(h, b, x_end).unwrap();
        let result = integrate_half_line(start, Direction::Plus, mu, &params, &mesh, None).unwrap();
        result.terminal.psi
    };
    let (e1, e2, e3) = (terminal(0.025), terminal(0.0125), terminal(0.00625));
    let order = ((e1 - e2).norm() / (e2 - e3).norm()).log2();
    assert!(order >= 3.9, "observed order {order}");
}

fn sweep(b: f64, labels: &[usize], grid: &[f64]) -> Vec<ContinuationPath> {
    sweep_gamma(labels, grid, &ProblemParams::new(0.0, b, 0.0)).unwrap()
}

fn point(paths: &[ContinuationPath], n: usize, gamma: f64) -> SpectralPoint {
    paths
        .iter()
        .filter(|p| p.n_label == n)
        .find_map(|p| p.point_at(gamma))
        .unwrap()
        .clone()
}

#[test]
fn linear_spectrum_is_closed_under_conjugation() {
    let paths = sweep(0.2, &[0, 1, 2, 3], &[2.8, 3.2]);
    for gamma in [2.8, 3.2] {
        let upper = point(&paths, 0, gamma);
        assert!(upper.mu.im.abs() > 1e-8);
        let params = upper.params;
        let partner = solve_labeled(upper.state.pt_partner(), &params, 1).unwrap();
        assert!((partner.mu - upper.mu.conj()).norm() < 1e-9, "{} vs {}", partner.mu, upper.mu);
    }
}

#[test]
fn eigenvalues_do_not_depend_on_the_domain() {
    let paths = sweep(0.5, &[0, 3, 8, 20], &[1.2]);
    for n in [0, 3, 8, 20] {
        let p = point(&paths, n, 1.2);
        let wider = p.params.with_x_max(p.params.resolved_x_max(p.mu.re) + 2.0);
        let q = solve_labeled(p.state, &wider, n).unwrap();
        assert!((q.mu - p.mu).norm() < 1e-9, "n = {n}: {}", (q.mu - p.mu).norm());
    }
}

#[test]
fn shooting_matches_oracle_up_to_level_40() {
    let gamma = 0.7;
    let labels: Vec<usize> = (0..=40).collect();
    let paths = sweep(0.5, &labels, &[gamma]);
    let oracle = oracle_eigenvalues(&ProblemParams::new(gamma, 0.5, 0.0), 45, 160).unwrap();
    for n in labels {
        let mu = point(&paths, n, gamma).mu;
        let gap = oracle.iter().map(|z| (z - mu).norm()).fold(f64::INFINITY, f64::min);
        assert!(gap < 1e-6, "n = {n}: {gap}");
    }
}

#[test]
fn continuation_is_stable_consistent_and_pairs_conjugates() {
    let b = 0.2;
    let labels = [0, 1, 2, 3];
    let fine_grid = uniform_grid(2.4, 3.2, 0.02);
    let coarse_grid = uniform_grid(2.4, 3.2, 0.04);
    let fine = sweep(b, &labels, &fine_grid);
    let coarse = sweep(b, &labels, &coarse_grid);

    for &gamma in &coarse_grid {
        for &n in &labels {
            let gap = (point(&fine, n, gamma).mu - point(&coarse, n, gamma).mu).norm();
            assert!(gap < 1e-8, "n = {n}, gamma = {gamma}: {gap}");
        }
    }
    let fine_events: Vec<f64> = fine.iter().flat_map(|p| p.coalescences().map(|e| e.gamma_c)).collect();
    let coarse_events: Vec<f64> = coarse.iter().flat_map(|p| p.coalescences().map(|e| e.gamma_c)).collect();
    assert_eq!(fine_events.len(), coarse_events.len());
    assert!(!fine_events.is_empty());
    for (a, c) in fine_events.iter().zip(&coarse_events) {
        assert!((a - c).abs() < 1e-6);
    }

    let gamma_c = fine_events[0];
    for &gamma in fine_grid.iter().filter(|g| **g > gamma_c) {
        let (upper, lower) = (point(&fine, 0, gamma), point(&fine, 1, gamma));
        assert!((upper.mu - lower.mu.conj()).norm() < 1e-8, "gamma = {gamma}");
    }

    for &gamma in fine_grid.iter().step_by(10) {
        let oracle = oracle_eigenvalues(&ProblemParams::new(gamma, b, 0.0), 8, 160).unwrap();
        for &n in &labels {
            let mu = point(&fine, n, gamma).mu;
            let gap = oracle.iter().map(|z| (z - mu).norm()).fold(f64::INFINITY, f64::min);
            assert!(gap < 1e-6, "n = {n}, gamma = {gamma}: {gap}");
        }
    }

    let gamma = 3.2;
    let reaching: Vec<ContinuationPath> = fine.clone();
    let shifts = compute_shifts(&reaching, gamma).unwrap();
    let (a, c) = (&shifts[0], &shifts[1]);
    assert!(a.is_complex && c.is_complex);
    assert!((a.mu.re - c.mu.re).abs() < 1e-10 && (a.mu.im + c.mu.im).abs() < 1e-10);
}

#[test]
fn identical_runs_give_identical_bytes() {
    let mut cfg = RunConfig::new(Command::Sweep);
    cfg.b = 0.2;
    cfg.levels = (0, 3);
    cfg.gamma = GammaGrid::Uniform {
        start: 2.6,
        stop: 2.8,
        step: 0.05,
    };
    let bytes = |format| {
        let run = execute(&cfg, None).unwrap();
        render(&run, format, None).unwrap().remove(0).1
    };
    for format in [Format::Csv, Format::Json] {
        assert_eq!(bytes(format), bytes(format));
    }
}
