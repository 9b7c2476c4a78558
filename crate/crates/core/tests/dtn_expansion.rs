use std::f64::consts::PI;

use num_complex::Complex64;

use wwdamp::dtn::DtnSolver;
use wwdamp::grid::{Field, Grid, Parity};

fn flat(grid: &Grid, h: f64, values: &[f64]) -> Vec<f64> {
    grid.apply_symbol(values, |_, k| Complex64::new(k * (k * h).tanh(), 0.0))
}

/// First variation of the operator in the surface: -d/dx(eta psi_x) - G0(eta G0 psi).
/// A uniform lift eta = eps gives eps k^2 sech^2(kh), the derivative of k tanh(kh) in h.
fn first_variation(grid: &Grid, h: f64, eta: &[f64], psi: &[f64]) -> Vec<f64> {
    let psi_x = grid.derivative(psi);
    let flux: Vec<f64> = eta.iter().zip(&psi_x).map(|(e, p)| e * p).collect();
    let g0 = flat(grid, h, psi);
    let eg: Vec<f64> = eta.iter().zip(&g0).map(|(e, g)| e * g).collect();
    grid.derivative(&flux).iter().zip(flat(grid, h, &eg)).map(|(a, b)| -a - b).collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[test]
fn small_perturbation_matches_expansion_to_second_order() {
    let h = 1.0;
    let grid = Grid::new(128, PI).unwrap();
    let mut solver = DtnSolver::new(&grid, h, 32).unwrap();
    let shape = grid.from_fn(|x| (2.0 * x).cos() - 0.4 * (5.0 * x).cos(), Parity::Even);
    let psi = grid.from_fn(|x| x.cos() + 0.3 * (3.0 * x).cos(), Parity::Even);
    let g0 = flat(&grid, h, &psi.values);
    let g1 = first_variation(&grid, h, &shape.values, &psi.values);

    let remainder = |eps: f64, solver: &mut DtnSolver| {
        let eta = shape.scale(eps);
        let g = solver.apply(&eta, &psi).unwrap().g_psi;
        let r: Vec<f64> = (0..grid.len()).map(|j| g.values[j] - g0[j] - eps * g1[j]).collect();
        norm(&r)
    };
    let eps = 2e-3;
    let coarse = remainder(eps, &mut solver);
    let fine = remainder(eps / 2.0, &mut solver);
    let ratio = coarse / fine;
    assert!((ratio - 4.0).abs() < 0.1, "remainder ratio {ratio}");
    assert!(coarse < 1e-2 * eps * norm(&g1), "remainder {coarse} vs first variation {}", eps * norm(&g1));
}

#[test]
fn uniform_lift_matches_depth_derivative() {
    let grid = Grid::new(32, PI).unwrap();
    let psi = grid.from_fn(|x| (3.0 * x).cos(), Parity::Even);
    let lift = vec![1.0; 32];
    let g1 = first_variation(&grid, 1.0, &lift, &psi.values);
    let expected = 9.0 / 3f64.cosh().powi(2);
    for (a, p) in g1.iter().zip(&psi.values) {
        assert!((a - expected * p).abs() < 1e-12);
    }
}

#[test]
fn flat_operator_scales_with_depth() {
    let grid = Grid::new(64, PI).unwrap();
    let psi = grid.from_fn(|x| (4.0 * x).cos(), Parity::Even);
    for h in [0.1, 0.5, 2.0, 10.0] {
        let mut solver = DtnSolver::new(&grid, h, 16).unwrap();
        let g = solver.apply(&Field::zeros(64), &psi).unwrap().g_psi;
        let expected = 4.0 * (4.0 * h).tanh();
        for (a, p) in g.values.iter().zip(&psi.values) {
            assert!((a - expected * p).abs() < 1e-12 * expected.max(1.0), "h = {h}");
        }
    }
}

#[test]
fn constants_are_in_the_kernel() {
    let grid = Grid::new(64, PI).unwrap();
    let mut solver = DtnSolver::new(&grid, 1.0, 16).unwrap();
    let eta = grid.from_fn(|x| 0.05 * (2.0 * x).cos() + 0.02 * (7.0 * x).cos(), Parity::Even);
    let ones = Field::even(vec![1.0; 64]);
    let g = solver.apply(&eta, &ones).unwrap().g_psi;
    assert!(g.max_abs() < 1e-12, "{}", g.max_abs());
}
