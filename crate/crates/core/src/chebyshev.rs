//! Chebyshev–Gauss–Lobatto collocation on the vertical interval z in [-1, 0].

/// Nodes, differentiation matrices and quadrature weights for M+1 points.
///
/// Node 0 is the top (z = 0) and node M the bottom (z = -1).
#[derive(Debug, Clone)]
pub struct Chebyshev {
    pub z: Vec<f64>,
    /// First derivative in z, row-major (M+1) x (M+1).
    pub d1: Vec<f64>,
    /// Second derivative in z.
    pub d2: Vec<f64>,
    /// Clenshaw–Curtis weights for integrals over [-1, 0].
    pub weights: Vec<f64>,
}

impl Chebyshev {
    pub fn new(degree: usize) -> Self {
        assert!(degree >= 2, "need at least three collocation points");
        let n = degree;
        let p = n + 1;
        let xi: Vec<f64> = (0..p).map(|j| (std::f64::consts::PI * j as f64 / n as f64).cos()).collect();
        let c = |j: usize| {
            let base = if j == 0 || j == n { 2.0 } else { 1.0 };
            if j % 2 == 0 {
                base
            } else {
                -base
            }
        };
        let mut d = vec![0.0; p * p];
        for i in 0..p {
            let mut row_sum = 0.0;
            for j in 0..p {
                if i != j {
                    let v = c(i) / c(j) / (xi[i] - xi[j]);
                    d[i * p + j] = v;
                    row_sum += v;
                }
            }
            // negative-sum trick keeps D applied to constants at round-off
            d[i * p + i] = -row_sum;
        }
        // z = (xi - 1)/2, so d/dz = 2 d/dxi
        d.iter_mut().for_each(|v| *v *= 2.0);
        let d2 = matmul(&d, &d, p);
        let z = xi.iter().map(|x| 0.5 * (x - 1.0)).collect();
        let weights = clenshaw_curtis(n).into_iter().map(|w| 0.5 * w).collect();
        Chebyshev { z, d1: d, d2, weights }
    }

    pub fn points(&self) -> usize {
        self.z.len()
    }

    pub fn degree(&self) -> usize {
        self.z.len() - 1
    }

    pub fn integrate(&self, values: &[f64]) -> f64 {
        self.weights.iter().zip(values).map(|(w, v)| w * v).sum()
    }

    pub fn d1_at(&self, i: usize, j: usize) -> f64 {
        self.d1[i * self.points() + j]
    }

    pub fn d2_at(&self, i: usize, j: usize) -> f64 {
        self.d2[i * self.points() + j]
    }
}

fn matmul(a: &[f64], b: &[f64], p: usize) -> Vec<f64> {
    let mut out = vec![0.0; p * p];
    for i in 0..p {
        for k in 0..p {
            let aik = a[i * p + k];
            for j in 0..p {
                out[i * p + j] += aik * b[k * p + j];
            }
        }
    }
    out
}

/// Clenshaw–Curtis weights on [-1, 1] for the nodes cos(pi j / n).
fn clenshaw_curtis(n: usize) -> Vec<f64> {
    let nf = n as f64;
    let mut w = vec![0.0; n + 1];
    let mut v = vec![1.0; n.saturating_sub(1)];
    let theta = |j: usize| std::f64::consts::PI * j as f64 / nf;
    if n % 2 == 0 {
        w[0] = 1.0 / (nf * nf - 1.0);
        w[n] = w[0];
        for k in 1..n / 2 {
            let kf = k as f64;
            for (idx, vi) in v.iter_mut().enumerate() {
                *vi -= 2.0 * (2.0 * kf * theta(idx + 1)).cos() / (4.0 * kf * kf - 1.0);
            }
        }
        for (idx, vi) in v.iter_mut().enumerate() {
            *vi -= (nf * theta(idx + 1)).cos() / (nf * nf - 1.0);
        }
    } else {
        w[0] = 1.0 / (nf * nf);
        w[n] = w[0];
        for k in 1..=(n - 1) / 2 {
            let kf = k as f64;
            for (idx, vi) in v.iter_mut().enumerate() {
                *vi -= 2.0 * (2.0 * kf * theta(idx + 1)).cos() / (4.0 * kf * kf - 1.0);
            }
        }
    }
    for (idx, vi) in v.iter().enumerate() {
        w[idx + 1] = 2.0 * vi / nf;
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn differentiates_polynomials_exactly() {
        let c = Chebyshev::new(8);
        let f: Vec<f64> = c.z.iter().map(|z| z.powi(5) - 2.0 * z * z).collect();
        let p = c.points();
        for i in 0..p {
            let d1: f64 = (0..p).map(|j| c.d1_at(i, j) * f[j]).sum();
            let d2: f64 = (0..p).map(|j| c.d2_at(i, j) * f[j]).sum();
            let z = c.z[i];
            assert!((d1 - (5.0 * z.powi(4) - 4.0 * z)).abs() < 1e-12);
            assert!((d2 - (20.0 * z.powi(3) - 4.0)).abs() < 1e-10);
        }
    }

    #[test]
    fn quadrature_is_spectral() {
        for n in [8, 9, 16] {
            let c = Chebyshev::new(n);
            let f: Vec<f64> = c.z.iter().map(|z| (3.0 * z).exp()).collect();
            let exact = (1.0 - (-3.0f64).exp()) / 3.0;
            assert!((c.integrate(&f) - exact).abs() < 1e-8, "n = {n}");
        }
        let c = Chebyshev::new(16);
        let f: Vec<f64> = c.z.iter().map(|z| (3.0 * z).exp()).collect();
        assert!((c.integrate(&f) - (1.0 - (-3.0f64).exp()) / 3.0).abs() < 1e-15);
    }

    #[test]
    fn endpoints() {
        let c = Chebyshev::new(12);
        assert_eq!(c.z[0], 0.0);
        assert!((c.z[12] + 1.0).abs() < 1e-15);
    }
}
