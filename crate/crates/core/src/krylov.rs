//! Restarted GMRES with right preconditioning.

/// A linear operator together with an approximate inverse.
pub trait PreconditionedOperator {
    fn apply(&mut self, x: &[f64], y: &mut [f64]);
    fn precondition(&mut self, x: &[f64], y: &mut [f64]);
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmresOutcome {
    pub iterations: usize,
    /// Final residual norm relative to the right-hand side.
    pub relative_residual: f64,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Solves A x = b starting from the supplied x. The residual reported is the true one.
pub fn gmres<O: PreconditionedOperator>(
    op: &mut O,
    b: &[f64],
    x: &mut [f64],
    tolerance: f64,
    restart: usize,
    max_iterations: usize,
) -> GmresOutcome {
    let n = b.len();
    let b_norm = norm(b);
    if b_norm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return GmresOutcome { iterations: 0, relative_residual: 0.0, converged: true };
    }
    let target = tolerance * b_norm;
    let mut r = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(restart + 1);
    let mut preconditioned: Vec<Vec<f64>> = Vec::with_capacity(restart);
    let mut hess = vec![vec![0.0; restart]; restart + 1];
    let (mut cs, mut sn) = (vec![0.0; restart], vec![0.0; restart]);
    let mut rhs = vec![0.0; restart + 1];
    let mut iterations = 0;

    loop {
        op.apply(x, &mut w);
        for i in 0..n {
            r[i] = b[i] - w[i];
        }
        let beta = norm(&r);
        if beta <= target || iterations >= max_iterations {
            return GmresOutcome { iterations, relative_residual: beta / b_norm, converged: beta <= target };
        }
        basis.clear();
        preconditioned.clear();
        basis.push(r.iter().map(|v| v / beta).collect());
        rhs.iter_mut().for_each(|v| *v = 0.0);
        rhs[0] = beta;
        let mut k_used = 0;
        for k in 0..restart {
            let mut z = vec![0.0; n];
            op.precondition(&basis[k], &mut z);
            op.apply(&z, &mut w);
            preconditioned.push(z);
            iterations += 1;
            for (i, v) in basis.iter().enumerate() {
                let hik = dot(&w, v);
                hess[i][k] = hik;
                w.iter_mut().zip(v).for_each(|(wj, vj)| *wj -= hik * vj);
            }
            let hnext = norm(&w);
            hess[k + 1][k] = hnext;
            for i in 0..k {
                let (a, c) = (hess[i][k], hess[i + 1][k]);
                hess[i][k] = cs[i] * a + sn[i] * c;
                hess[i + 1][k] = -sn[i] * a + cs[i] * c;
            }
            let (a, c) = (hess[k][k], hess[k + 1][k]);
            let denom = a.hypot(c);
            cs[k] = a / denom;
            sn[k] = c / denom;
            hess[k][k] = denom;
            hess[k + 1][k] = 0.0;
            rhs[k + 1] = -sn[k] * rhs[k];
            rhs[k] *= cs[k];
            k_used = k + 1;
            if rhs[k + 1].abs() <= target || iterations >= max_iterations || hnext == 0.0 {
                break;
            }
            basis.push(w.iter().map(|v| v / hnext).collect());
        }
        let mut y = vec![0.0; k_used];
        for i in (0..k_used).rev() {
            let s: f64 = ((i + 1)..k_used).map(|j| hess[i][j] * y[j]).sum();
            y[i] = (rhs[i] - s) / hess[i][i];
        }
        for (yi, z) in y.iter().zip(&preconditioned) {
            x.iter_mut().zip(z).for_each(|(xj, zj)| *xj += yi * zj);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Dense {
        a: Vec<Vec<f64>>,
    }

    impl PreconditionedOperator for Dense {
        fn apply(&mut self, x: &[f64], y: &mut [f64]) {
            for (row, yi) in self.a.iter().zip(y.iter_mut()) {
                *yi = dot(row, x);
            }
        }
        fn precondition(&mut self, x: &[f64], y: &mut [f64]) {
            // Jacobi
            for (i, (xi, yi)) in x.iter().zip(y.iter_mut()).enumerate() {
                *yi = xi / self.a[i][i];
            }
        }
    }

    #[test]
    fn solves_nonsymmetric_system() {
        let n = 30;
        let a: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| {
                        if i == j {
                            4.0 + i as f64
                        } else {
                            ((i * 7 + j * 3) % 5) as f64 * 0.1 - 0.2 + if j == i + 1 { 0.5 } else { 0.0 }
                        }
                    })
                    .collect()
            })
            .collect();
        let exact: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut op = Dense { a: a.clone() };
        let mut b = vec![0.0; n];
        op.apply(&exact, &mut b);
        let mut x = vec![0.0; n];
        let out = gmres(&mut op, &b, &mut x, 1e-12, 8, 200);
        assert!(out.converged, "{out:?}");
        for (xi, ei) in x.iter().zip(&exact) {
            assert!((xi - ei).abs() < 1e-10);
        }
    }
}
