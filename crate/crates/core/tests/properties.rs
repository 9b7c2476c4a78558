use std::f64::consts::PI;

use proptest::prelude::*;

use wwdamp::dtn::DtnSolver;
use wwdamp::dynamics::SurfaceState;
use wwdamp::energy::MultiplierFields;
use wwdamp::grid::{Field, Grid, Parity, Projection};
use wwdamp::params::{build_cutoff, PhysicalParams};
use wwdamp::persist::{decode_checkpoint, encode_checkpoint};

fn cosine_series(grid: &Grid, coefficients: &[f64]) -> Field {
    let k = grid.wavenumbers();
    grid.from_fn(|x| coefficients.iter().enumerate().map(|(j, c)| c * (k[j + 1] * x).cos()).sum(), Parity::Even)
}

fn scaled_to(field: Field, peak: f64) -> Field {
    let m = field.max_abs();
    if m == 0.0 {
        field
    } else {
        field.scale(peak / m)
    }
}

fn coefficients(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0..1.0f64, len).prop_filter("nonzero", |c| c.iter().any(|v| v.abs() > 1e-3))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn derivative_of_trig_polynomial_is_exact(c in coefficients(8), l in 0.5..4.0f64) {
        let grid = Grid::new(64, l).unwrap();
        let k = grid.wavenumbers().to_vec();
        let f = cosine_series(&grid, &c);
        let exact: Vec<f64> = grid
            .nodes()
            .iter()
            .map(|&x| c.iter().enumerate().map(|(j, a)| -a * k[j + 1] * (k[j + 1] * x).sin()).sum())
            .collect();
        let d = grid.derivative(&f.values);
        let scale = exact.iter().fold(1.0, |m: f64, v| m.max(v.abs()));
        for (a, b) in d.iter().zip(&exact) {
            prop_assert!((a - b).abs() < 1e-11 * scale);
        }
    }

    #[test]
    fn projections_are_idempotent(values in prop::collection::vec(-1.0..1.0f64, 32)) {
        let grid = Grid::new(32, PI).unwrap();
        let field = Field::new(values, Parity::None);
        for p in [Projection::EVEN, Projection::EVEN_ZERO_MEAN, Projection { parity: Some(Parity::Odd), zero_mean: false, dealias: true }] {
            let once = grid.project(&field, p);
            let twice = grid.project(&once, p);
            for (a, b) in once.values.iter().zip(&twice.values) {
                prop_assert!((a - b).abs() < 1e-14);
            }
            if let Some(parity) = p.parity {
                prop_assert!(grid.parity_defect(&once.values, parity) < 1e-14);
            }
        }
    }

    #[test]
    fn fft_roundtrip(values in prop::collection::vec(-10.0..10.0f64, 64)) {
        let grid = Grid::new(64, 1.0).unwrap();
        let back = grid.inverse(&grid.forward(&values));
        for (a, b) in values.iter().zip(&back) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn cutoff_profile_invariants(delta in 0.6..2.5f64, l in 3.0..5.0f64) {
        let grid = Grid::new(512, l).unwrap();
        let physical = PhysicalParams { g: 9.81, kappa: 0.01, h: 1.0, half_length: l };
        let p = build_cutoff(&physical, delta, &grid).unwrap();
        for (j, &x) in grid.nodes().iter().enumerate() {
            let phi = p.phi.values[j];
            prop_assert!((0.0..=1.0).contains(&phi));
            if x.abs() <= l - delta {
                prop_assert_eq!(phi, 1.0);
                prop_assert!((p.m.values[j] - x).abs() < 1e-15);
            }
            if x.abs() >= l - delta / 2.0 {
                prop_assert_eq!(phi, 0.0);
            }
            prop_assert!((p.chi.values[j] - (1.0 - p.m_x.values[j])).abs() < 1e-15);
        }
        // mirrored nodes agree only to rounding in x, amplified by the slope of the profile
        let tol = 1e-14 * l * (1.0 + p.sup.m_xx_abs);
        prop_assert!(grid.parity_defect(&p.m.values, Parity::Odd) < tol);
        prop_assert!(grid.parity_defect(&p.chi.values, Parity::Even) < tol);
        // m vanishes near the walls, so it is smooth and periodic and its spectral derivative
        // must agree with the closed form
        let dm = grid.derivative(&p.m.values);
        let scale = p.sup.m_xx_abs * grid.dx();
        for (a, b) in dm.iter().zip(&p.m_x.values) {
            prop_assert!((a - b).abs() < 0.05 * scale.max(1e-3), "{a} vs {b}");
        }
        prop_assert!(p.sup.m_x_max >= 1.0);
    }

    #[test]
    fn multiplier_fields_identities(c in coefficients(6), amp in 1e-4..0.05f64) {
        let grid = Grid::new(256, PI).unwrap();
        let physical = PhysicalParams { g: 9.81, kappa: 0.01, h: 1.0, half_length: PI };
        let profile = build_cutoff(&physical, 1.0, &grid).unwrap();
        let eta = scaled_to(cosine_series(&grid, &c), amp);
        let psi = cosine_series(&grid, &c[..3]).shift(0.7);
        let f = MultiplierFields::compute(&grid, &profile, &eta, &psi);
        let eta_x = grid.derivative(&eta.values);
        for (j, &x) in grid.nodes().iter().enumerate() {
            // zeta - rho does not depend on the multiplier
            let diff = f.zeta.values[j] - f.rho.values[j];
            prop_assert!((diff - (x * eta_x[j] - eta.values[j])).abs() < 1e-14);
            if x.abs() < PI - 1.0 {
                prop_assert!((f.rho.values[j] - 1.75 * eta.values[j]).abs() < 1e-14);
                prop_assert!((f.rho_x.values[j] - 1.75 * eta_x[j]).abs() < 1e-12);
            }
        }
        prop_assert!(grid.mean(&f.psi_tilde.values).abs() < 1e-14);
        prop_assert!((f.nu - grid.inner(&profile.chi.values, &eta.values)).abs() < 1e-15);
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_exact(
        t in any::<f64>(),
        eta in prop::collection::vec(any::<f64>(), 16),
        psi in prop::collection::vec(any::<f64>(), 16),
    ) {
        let state = SurfaceState { t, eta: Field::even(eta), psi: Field::even(psi) };
        let mut bytes = Vec::new();
        encode_checkpoint(&state, &mut bytes).unwrap();
        let back = decode_checkpoint(&bytes).unwrap();
        prop_assert_eq!(back.t.to_bits(), t.to_bits());
        for (a, b) in back.eta.values.iter().chain(&back.psi.values).zip(state.eta.values.iter().chain(&state.psi.values)) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn dtn_is_symmetric_and_positive(
        ce in coefficients(8),
        cp in coefficients(10),
        cq in coefficients(10),
        amp in 0.0..0.05f64,
    ) {
        let grid = Grid::new(128, PI).unwrap();
        let mut solver = DtnSolver::new(&grid, 1.0, 32).unwrap();
        let eta = scaled_to(cosine_series(&grid, &ce), amp);
        let psi = cosine_series(&grid, &cp);
        let phi = cosine_series(&grid, &cq);
        let g_psi = solver.apply(&eta, &psi).unwrap().g_psi;
        let g_phi = solver.apply(&eta, &phi).unwrap().g_psi;
        let e_psi = grid.inner(&psi.values, &g_psi.values);
        let e_phi = grid.inner(&phi.values, &g_phi.values);
        prop_assert!(e_psi > 0.0 && e_phi > 0.0);
        let cross = grid.inner(&phi.values, &g_psi.values) - grid.inner(&psi.values, &g_phi.values);
        prop_assert!(cross.abs() < 1e-9 * (e_psi * e_phi).sqrt());
        prop_assert!(grid.integrate(&g_psi.values).abs() < 1e-10 * grid.inner(&psi.values, &psi.values).sqrt());
    }
}
