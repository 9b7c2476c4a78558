//! Periodic Fourier grid on [-L, L) and fields living on it.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use thiserror::Error;

pub const MIN_NODES: usize = 16;

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("grid size {0} must be a power of two and at least {MIN_NODES}")]
    BadSize(usize),
    #[error("half-length must be positive and finite, got {0}")]
    BadLength(f64),
    #[error("field has {got} values but the grid has {expected} nodes")]
    LengthMismatch { expected: usize, got: usize },
}

/// Symmetry of a field under x -> -x.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parity {
    Even,
    Odd,
    None,
}

impl Parity {
    pub fn derivative(self) -> Parity {
        match self {
            Parity::Even => Parity::Odd,
            Parity::Odd => Parity::Even,
            Parity::None => Parity::None,
        }
    }

    pub fn product(self, other: Parity) -> Parity {
        match (self, other) {
            (Parity::None, _) | (_, Parity::None) => Parity::None,
            (a, b) if a == b => Parity::Even,
            _ => Parity::Odd,
        }
    }

    fn sum(self, other: Parity) -> Parity {
        if self == other {
            self
        } else {
            Parity::None
        }
    }
}

/// Which projections to apply; see [`Grid::project`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Projection {
    pub parity: Option<Parity>,
    pub zero_mean: bool,
    pub dealias: bool,
}

impl Projection {
    pub const EVEN: Projection = Projection { parity: Some(Parity::Even), zero_mean: false, dealias: false };
    pub const EVEN_ZERO_MEAN: Projection =
        Projection { parity: Some(Parity::Even), zero_mean: true, dealias: false };
}

/// Nodal values on the grid together with a parity tag.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub values: Vec<f64>,
    pub parity: Parity,
}

impl Field {
    pub fn new(values: Vec<f64>, parity: Parity) -> Self {
        Field { values, parity }
    }

    pub fn even(values: Vec<f64>) -> Self {
        Field::new(values, Parity::Even)
    }

    pub fn odd(values: Vec<f64>) -> Self {
        Field::new(values, Parity::Odd)
    }

    pub fn zeros(n: usize) -> Self {
        Field::even(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64, parity: Parity) -> Field {
        Field::new(self.values.iter().map(|&v| f(v)).collect(), parity)
    }

    pub fn zip_map(&self, other: &Field, f: impl Fn(f64, f64) -> f64, parity: Parity) -> Field {
        assert_eq!(self.len(), other.len(), "field length mismatch");
        Field::new(self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect(), parity)
    }

    pub fn scale(&self, s: f64) -> Field {
        self.map(|v| s * v, self.parity)
    }

    pub fn shift(&self, s: f64) -> Field {
        let parity = if s == 0.0 || self.parity == Parity::Even { self.parity } else { Parity::None };
        self.map(|v| v + s, parity)
    }
}

impl Add for &Field {
    type Output = Field;
    fn add(self, rhs: &Field) -> Field {
        self.zip_map(rhs, |a, b| a + b, self.parity.sum(rhs.parity))
    }
}

impl Sub for &Field {
    type Output = Field;
    fn sub(self, rhs: &Field) -> Field {
        self.zip_map(rhs, |a, b| a - b, self.parity.sum(rhs.parity))
    }
}

impl Mul for &Field {
    type Output = Field;
    fn mul(self, rhs: &Field) -> Field {
        self.zip_map(rhs, |a, b| a * b, self.parity.product(rhs.parity))
    }
}

impl Mul<&Field> for f64 {
    type Output = Field;
    fn mul(self, rhs: &Field) -> Field {
        rhs.scale(self)
    }
}

impl Neg for &Field {
    type Output = Field;
    fn neg(self) -> Field {
        self.scale(-1.0)
    }
}

/// Uniform grid x_j = -L + 2Lj/N with real FFT plans.
#[derive(Clone)]
pub struct Grid {
    n: usize,
    half_length: f64,
    nodes: Vec<f64>,
    wavenumbers: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid").field("n", &self.n).field("half_length", &self.half_length).finish()
    }
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n && self.half_length == other.half_length
    }
}

impl Grid {
    pub fn new(n: usize, half_length: f64) -> Result<Self, GridError> {
        if n < MIN_NODES || !n.is_power_of_two() {
            return Err(GridError::BadSize(n));
        }
        if !(half_length.is_finite() && half_length > 0.0) {
            return Err(GridError::BadLength(half_length));
        }
        let dx = 2.0 * half_length / n as f64;
        let nodes = (0..n).map(|j| -half_length + dx * j as f64).collect();
        let wavenumbers = (0..=n / 2).map(|m| std::f64::consts::PI * m as f64 / half_length).collect();
        let mut planner = FftPlanner::<f64>::new();
        Ok(Grid {
            n,
            half_length,
            nodes,
            wavenumbers,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn half_length(&self) -> f64 {
        self.half_length
    }

    pub fn dx(&self) -> f64 {
        2.0 * self.half_length / self.n as f64
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Wavenumbers k_m = pi m / L for m = 0..=N/2.
    pub fn wavenumbers(&self) -> &[f64] {
        &self.wavenumbers
    }

    pub fn modes(&self) -> usize {
        self.n / 2 + 1
    }

    /// Highest mode index kept by the two-thirds rule.
    pub fn dealias_cutoff(&self) -> usize {
        self.n / 3
    }

    /// Index of the node at -x_j.
    pub fn mirror(&self, j: usize) -> usize {
        (self.n - j) % self.n
    }

    pub fn check(&self, values: &[f64]) -> Result<(), GridError> {
        if values.len() == self.n {
            Ok(())
        } else {
            Err(GridError::LengthMismatch { expected: self.n, got: values.len() })
        }
    }

    pub fn forward_plan(&self) -> &Arc<dyn Fft<f64>> {
        &self.forward
    }

    pub fn inverse_plan(&self) -> &Arc<dyn Fft<f64>> {
        &self.inverse
    }

    /// Unnormalised DFT of nodal values, modes 0..=N/2.
    pub fn forward(&self, values: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward.process(&mut buf);
        buf.truncate(self.n / 2 + 1);
        buf
    }

    /// Inverse of [`Grid::forward`], including the 1/N factor.
    pub fn inverse(&self, spectrum: &[Complex64]) -> Vec<f64> {
        let mut buf = vec![Complex64::new(0.0, 0.0); self.n];
        hermitian_fill(spectrum, &mut buf);
        self.inverse.process(&mut buf);
        let scale = 1.0 / self.n as f64;
        buf.iter().map(|c| c.re * scale).collect()
    }

    /// Multiplies mode m by `symbol(m, k_m)`.
    pub fn apply_symbol(&self, values: &[f64], symbol: impl Fn(usize, f64) -> Complex64) -> Vec<f64> {
        let mut spec = self.forward(values);
        for (m, c) in spec.iter_mut().enumerate() {
            *c *= symbol(m, self.wavenumbers[m]);
        }
        self.inverse(&spec)
    }

    pub fn derivative(&self, values: &[f64]) -> Vec<f64> {
        let nyquist = self.n / 2;
        self.apply_symbol(values, |m, k| if m == nyquist { Complex64::new(0.0, 0.0) } else { Complex64::new(0.0, k) })
    }

    pub fn second_derivative(&self, values: &[f64]) -> Vec<f64> {
        self.apply_symbol(values, |_, k| Complex64::new(-k * k, 0.0))
    }

    pub fn differentiate(&self, field: &Field) -> Field {
        Field::new(self.derivative(&field.values), field.parity.derivative())
    }

    /// Trapezoid rule over one period.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        self.dx() * values.iter().sum::<f64>()
    }

    pub fn mean(&self, values: &[f64]) -> f64 {
        values.iter().sum::<f64>() / self.n as f64
    }

    pub fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        self.dx() * a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>()
    }

    /// Integral of x g(x) over (-L, L), exact for trigonometric polynomials g.
    ///
    /// The product x g(x) is not periodic, so the trapezoid rule would only be
    /// first order here. Only the sine part of g contributes.
    pub fn moment(&self, values: &[f64]) -> f64 {
        let spec = self.forward(values);
        let scale = 4.0 * self.half_length / self.n as f64;
        (1..self.n / 2).map(|m| scale * spec[m].im / self.wavenumbers[m]).sum()
    }

    pub fn dealias(&self, values: &[f64]) -> Vec<f64> {
        let cutoff = self.dealias_cutoff();
        let mut spec = self.forward(values);
        spec.iter_mut().skip(cutoff + 1).for_each(|c| *c = Complex64::new(0.0, 0.0));
        self.inverse(&spec)
    }

    pub fn symmetrize(&self, values: &mut [f64], parity: Parity) {
        let sign = match parity {
            Parity::Even => 1.0,
            Parity::Odd => -1.0,
            Parity::None => return,
        };
        let copy = values.to_vec();
        for (j, v) in values.iter_mut().enumerate() {
            *v = 0.5 * (copy[j] + sign * copy[self.mirror(j)]);
        }
    }

    /// Applies the requested projections. Each one is idempotent and they commute.
    pub fn project(&self, field: &Field, projection: Projection) -> Field {
        let mut values = if projection.dealias { self.dealias(&field.values) } else { field.values.clone() };
        let parity = projection.parity.unwrap_or(field.parity);
        self.symmetrize(&mut values, parity);
        if projection.zero_mean {
            let mean = self.mean(&values);
            values.iter_mut().for_each(|v| *v -= mean);
        }
        Field::new(values, parity)
    }

    /// Largest deviation from the requested symmetry.
    pub fn parity_defect(&self, values: &[f64], parity: Parity) -> f64 {
        let sign = match parity {
            Parity::Even => 1.0,
            Parity::Odd => -1.0,
            Parity::None => return 0.0,
        };
        (0..self.n).map(|j| (values[j] - sign * values[self.mirror(j)]).abs()).fold(0.0, f64::max)
    }

    pub fn from_fn(&self, f: impl Fn(f64) -> f64, parity: Parity) -> Field {
        Field::new(self.nodes.iter().map(|&x| f(x)).collect(), parity)
    }
}

/// Writes the full-length spectrum of a real signal from its modes 0..=N/2.
pub fn hermitian_fill(half: &[Complex64], full: &mut [Complex64]) {
    let n = full.len();
    full[0] = Complex64::new(half[0].re, 0.0);
    full[n / 2] = Complex64::new(half[n / 2].re, 0.0);
    for m in 1..n / 2 {
        full[m] = half[m];
        full[n - m] = half[m].conj();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn grid() -> Grid {
        Grid::new(64, PI).unwrap()
    }

    #[test]
    fn rejects_bad_sizes() {
        assert_eq!(Grid::new(48, 1.0).unwrap_err(), GridError::BadSize(48));
        assert_eq!(Grid::new(8, 1.0).unwrap_err(), GridError::BadSize(8));
        assert!(Grid::new(64, 0.0).is_err());
    }

    #[test]
    fn derivative_of_trig_polynomial_is_exact() {
        let g = Grid::new(32, 2.0).unwrap();
        let k = PI / 2.0;
        let f = g.from_fn(|x| (3.0 * k * x).cos() + 0.5 * (k * x).sin(), Parity::None);
        let df = g.derivative(&f.values);
        for (j, &x) in g.nodes().iter().enumerate() {
            let exact = -3.0 * k * (3.0 * k * x).sin() + 0.5 * k * (k * x).cos();
            assert!((df[j] - exact).abs() < 1e-12, "{} vs {}", df[j], exact);
        }
    }

    #[test]
    fn differentiate_flips_parity() {
        let g = grid();
        let f = g.from_fn(|x| x.cos(), Parity::Even);
        let df = g.differentiate(&f);
        assert_eq!(df.parity, Parity::Odd);
        assert!(g.parity_defect(&df.values, Parity::Odd) < 1e-13);
    }

    #[test]
    fn integrate_cos_squared() {
        let g = grid();
        let f = g.from_fn(|x| x.cos().powi(2), Parity::Even);
        assert!((g.integrate(&f.values) - PI).abs() < 1e-13);
    }

    #[test]
    fn moment_matches_closed_form() {
        // int_{-pi}^{pi} x sin(n x) dx = 2 pi (-1)^{n+1} / n
        let g = grid();
        for n in 1..5 {
            let f = g.from_fn(|x| (n as f64 * x).sin() + (n as f64 * x).cos(), Parity::None);
            let exact = 2.0 * PI * if n % 2 == 1 { 1.0 } else { -1.0 } / n as f64;
            assert!((g.moment(&f.values) - exact).abs() < 1e-12);
        }
    }

    #[test]
    fn projection_is_idempotent() {
        let g = grid();
        let f = g.from_fn(|x| (x + 0.3).cos().exp(), Parity::None);
        let p = Projection { parity: Some(Parity::Even), zero_mean: true, dealias: true };
        let once = g.project(&f, p);
        let twice = g.project(&once, p);
        for (a, b) in once.values.iter().zip(&twice.values) {
            assert!((a - b).abs() < 1e-14);
        }
        assert!(g.mean(&once.values).abs() < 1e-15);
    }

    #[test]
    fn dealias_keeps_low_modes() {
        let g = grid();
        let low = g.from_fn(|x| (10.0 * x).cos(), Parity::Even);
        let high = g.from_fn(|x| (30.0 * x).cos(), Parity::Even);
        let sum = &low + &high;
        let d = g.dealias(&sum.values);
        for (a, b) in d.iter().zip(&low.values) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn mirror_pairs_nodes() {
        let g = grid();
        for j in 0..g.len() {
            let m = g.mirror(j);
            let (x, y) = (g.nodes()[j], g.nodes()[m]);
            assert!((x + y).abs() < 1e-12 || (x.abs() - PI).abs() < 1e-12);
        }
    }
}
