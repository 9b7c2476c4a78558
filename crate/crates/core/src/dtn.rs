//! Dirichlet–Neumann operator of the fluid strip {-h < y < eta(x)}.
//!
//! The strip is flattened by y = (1 + z) eta + h z, z in [-1, 0]. The potential is
//! written as Phi = Phi0 + Phi1 where Phi0 is the exact harmonic extension for a
//! flat surface, built mode by mode from cosh profiles, so that G(0) is exact at any
//! vertical resolution. The correction Phi1 vanishes at z = 0 and is found by GMRES
//! on a Fourier x Chebyshev collocation of the transformed Laplacian, preconditioned
//! by the flat operator inverted mode by mode.

use std::io::{self, Write};
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rustfft::Fft;
use thiserror::Error;

use crate::chebyshev::Chebyshev;
use crate::grid::{Field, Grid, GridError, Parity};
use crate::krylov::{gmres, PreconditionedOperator};

pub const DEFAULT_TOLERANCE: f64 = 1e-10;
/// Minimum admissible depth h + eta, relative to h.
pub const MIN_DEPTH_FRACTION: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum DtnError {
    #[error("strip map degenerate: min eta = {min_eta} is not above -h + {margin:e}")]
    MapDegenerate { min_eta: f64, margin: f64 },
    #[error("elliptic solve did not converge: relative residual {residual:e} after {iterations} iterations")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("vertical resolution {0} is too small, need at least 4")]
    TooFewLevels(usize),
    #[error("depth must be positive, got {0}")]
    BadDepth(f64),
    #[error(transparent)]
    Grid(#[from] GridError),
}

type C64 = Complex64;
const ZERO: C64 = C64::new(0.0, 0.0);

/// Geometry of the flattening map for a given surface.
#[derive(Debug, Clone)]
pub struct StripMap {
    pub h: f64,
    pub depth: Vec<f64>,
    pub eta_x: Vec<f64>,
    pub eta_xx: Vec<f64>,
}

impl StripMap {
    pub fn new(grid: &Grid, h: f64, eta: &[f64]) -> Result<Self, DtnError> {
        grid.check(eta)?;
        let min_eta = eta.iter().copied().fold(f64::INFINITY, f64::min);
        let margin = MIN_DEPTH_FRACTION * h;
        if !(min_eta > -h + margin) {
            return Err(DtnError::MapDegenerate { min_eta, margin });
        }
        Ok(StripMap {
            h,
            depth: eta.iter().map(|e| h + e).collect(),
            eta_x: grid.derivative(eta),
            eta_xx: grid.second_derivative(eta),
        })
    }

    /// Physical height of the point (x_i, z).
    pub fn y(&self, i: usize, z: f64) -> f64 {
        (1.0 + z) * self.depth[i] - self.h
    }
}

/// Potential and its physical gradient on the N x (M+1) tensor grid.
///
/// Arrays are level-major: entry `level * n + i` is at x_i and z_level, level 0 being
/// the free surface and level M the bottom.
#[derive(Debug, Clone)]
pub struct InteriorField {
    pub n: usize,
    pub levels: usize,
    pub dx: f64,
    pub z: Vec<f64>,
    pub weights: Vec<f64>,
    pub depth: Vec<f64>,
    pub eta_x: Vec<f64>,
    pub phi: Vec<f64>,
    pub phi_x: Vec<f64>,
    pub phi_y: Vec<f64>,
}

impl InteriorField {
    pub fn index(&self, level: usize, i: usize) -> usize {
        level * self.n + i
    }

    /// Double integral over the fluid domain of f(level, i).
    pub fn integrate(&self, f: impl Fn(usize, usize) -> f64) -> f64 {
        let mut total = 0.0;
        for i in 0..self.n {
            let column: f64 = (0..self.levels).map(|l| self.weights[l] * f(l, i)).sum();
            total += self.depth[i] * column;
        }
        total * self.dx
    }

    pub fn level(&self, values: &[f64], level: usize) -> Vec<f64> {
        values[level * self.n..(level + 1) * self.n].to_vec()
    }

    pub fn bottom_phi_x(&self) -> Vec<f64> {
        self.level(&self.phi_x, self.levels - 1)
    }

    /// phi_y along the lateral wall x = L, from surface to bottom.
    pub fn wall_phi_y(&self) -> Vec<f64> {
        // node 0 sits at x = -L, the periodic image of x = L
        (0..self.levels).map(|l| self.phi_y[l * self.n]).collect()
    }

    /// Integral over the wall x = L of phi_y^2 dy.
    pub fn wall_phi_y_sq(&self) -> f64 {
        let col = self.wall_phi_y();
        self.depth[0] * col.iter().zip(&self.weights).map(|(v, w)| w * v * v).sum::<f64>()
    }

    /// (1/2) integral of |grad phi|^2 over the fluid.
    pub fn kinetic_energy(&self) -> f64 {
        0.5 * self.integrate(|l, i| {
            let k = self.index(l, i);
            self.phi_x[k] * self.phi_x[k] + self.phi_y[k] * self.phi_y[k]
        })
    }

    /// Writes N and M as little-endian u64, then phi, phi_x and phi_y, each N x (M+1)
    /// row-major by x node, as little-endian f64.
    pub fn write_binary<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(&(self.n as u64).to_le_bytes())?;
        w.write_all(&((self.levels - 1) as u64).to_le_bytes())?;
        for values in [&self.phi, &self.phi_x, &self.phi_y] {
            for i in 0..self.n {
                for l in 0..self.levels {
                    w.write_all(&values[l * self.n + i].to_le_bytes())?;
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct DtnResult {
    pub g_psi: Field,
    pub interior: Option<InteriorField>,
    pub iterations: usize,
    pub residual: f64,
}

/// Everything that depends only on the grid, the depth and the vertical resolution.
struct Tables {
    n: usize,
    modes: usize,
    unknowns: usize,
    cheb: Chebyshev,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    /// Signed wavenumber over the full FFT index range, zero at Nyquist.
    dk: Vec<f64>,
    k2: Vec<f64>,
    /// cosh(kh(1+z))/cosh(kh) and its z-derivative, indexed `level * modes + m`.
    flat: Vec<f64>,
    flat_z: Vec<f64>,
    /// Inverse of the flat collocation operator for each mode, `m * u * u + r * u + c`.
    precond: Vec<f64>,
}

struct Workspace {
    buf: Vec<C64>,
    fft_scratch: Vec<C64>,
    spec_a: Vec<C64>,
    spec_b: Vec<C64>,
    /// Half spectra of the unknown levels, mode-major.
    modal: Vec<C64>,
    modal_out: Vec<C64>,
    ux: Vec<f64>,
    uxx: Vec<f64>,
    uz: Vec<f64>,
    uzz: Vec<f64>,
    uxz: Vec<f64>,
    full: Vec<f64>,
}

/// Variable coefficients of the transformed Laplacian at the PDE levels 1..M-1.
struct Coefficients {
    depth: Vec<f64>,
    a: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
}

pub struct DtnSolver {
    grid: Grid,
    h: f64,
    tables: Tables,
    ws: Workspace,
    pub tolerance: f64,
    pub restart: usize,
    pub max_iterations: usize,
}

impl std::fmt::Debug for DtnSolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DtnSolver")
            .field("grid", &self.grid)
            .field("h", &self.h)
            .field("degree", &self.degree())
            .field("tolerance", &self.tolerance)
            .finish()
    }
}

/// cosh(a(1+z))/cosh(a) and a sinh(a(1+z))/cosh(a), written to avoid overflow.
fn flat_profile(a: f64, z: f64) -> (f64, f64) {
    if a == 0.0 {
        return (1.0, 0.0);
    }
    let lead = (a * z).exp();
    let tail = (-2.0 * a * (1.0 + z)).exp();
    let norm = 1.0 + (-2.0 * a).exp();
    (lead * (1.0 + tail) / norm, a * lead * (1.0 - tail) / norm)
}

impl DtnSolver {
    /// `degree` is the number of Chebyshev intervals M; the grid has M+1 levels.
    pub fn new(grid: &Grid, h: f64, degree: usize) -> Result<Self, DtnError> {
        if degree < 4 {
            return Err(DtnError::TooFewLevels(degree));
        }
        if !(h.is_finite() && h > 0.0) {
            return Err(DtnError::BadDepth(h));
        }
        let n = grid.len();
        let modes = grid.modes();
        let cheb = Chebyshev::new(degree);
        let p = degree + 1;
        let u = degree;
        let k = grid.wavenumbers();
        let dk: Vec<f64> = (0..n)
            .map(|m| match m {
                m if m < n / 2 => k[m],
                m if m == n / 2 => 0.0,
                m => -k[n - m],
            })
            .collect();
        let k2: Vec<f64> = (0..n).map(|m| if m <= n / 2 { k[m] * k[m] } else { k[n - m] * k[n - m] }).collect();
        let mut flat = vec![0.0; p * modes];
        let mut flat_z = vec![0.0; p * modes];
        for l in 0..p {
            for m in 0..modes {
                let (c, cz) = flat_profile(k[m] * h, cheb.z[l]);
                flat[l * modes + m] = c;
                flat_z[l * modes + m] = cz;
            }
        }
        let mut precond = vec![0.0; modes * u * u];
        for m in 0..modes {
            let mat = DMatrix::from_fn(u, u, |r, c| {
                let (row, col) = (r + 1, c + 1);
                if row < degree {
                    let diag = if row == col { -h * k[m] * k[m] } else { 0.0 };
                    diag + cheb.d2_at(row, col) / h
                } else {
                    cheb.d1_at(row, col)
                }
            });
            let inv = mat.try_inverse().expect("flat collocation operator is invertible");
            for r in 0..u {
                for c in 0..u {
                    precond[m * u * u + r * u + c] = inv[(r, c)];
                }
            }
        }
        let tables = Tables {
            n,
            modes,
            unknowns: u,
            cheb,
            forward: grid.forward_plan().clone(),
            inverse: grid.inverse_plan().clone(),
            dk,
            k2,
            flat,
            flat_z,
            precond,
        };
        let size = p * n;
        let scratch_len = grid.forward_plan().get_inplace_scratch_len().max(grid.inverse_plan().get_inplace_scratch_len());
        let ws = Workspace {
            buf: vec![ZERO; n],
            fft_scratch: vec![ZERO; scratch_len],
            spec_a: vec![ZERO; n],
            spec_b: vec![ZERO; n],
            modal: vec![ZERO; modes * u],
            modal_out: vec![ZERO; modes * u],
            ux: vec![0.0; size],
            uxx: vec![0.0; size],
            uz: vec![0.0; size],
            uzz: vec![0.0; size],
            uxz: vec![0.0; size],
            full: vec![0.0; size],
        };
        Ok(DtnSolver {
            grid: grid.clone(),
            h,
            tables,
            ws,
            tolerance: DEFAULT_TOLERANCE,
            restart: 40,
            max_iterations: 400,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn depth(&self) -> f64 {
        self.h
    }

    pub fn degree(&self) -> usize {
        self.tables.unknowns
    }

    pub fn chebyshev(&self) -> &Chebyshev {
        &self.tables.cheb
    }

    /// G(eta) psi without the interior field.
    pub fn apply(&mut self, eta: &Field, psi: &Field) -> Result<DtnResult, DtnError> {
        self.solve(eta, psi, false)
    }

    /// G(eta) psi together with phi and its gradient in the fluid.
    pub fn solve_potential(&mut self, eta: &Field, psi: &Field) -> Result<DtnResult, DtnError> {
        self.solve(eta, psi, true)
    }

    fn solve(&mut self, eta: &Field, psi: &Field, want_interior: bool) -> Result<DtnResult, DtnError> {
        self.grid.check(&psi.values)?;
        let map = StripMap::new(&self.grid, self.h, &eta.values)?;
        let t = &self.tables;
        let (n, p, u, modes) = (t.n, t.unknowns + 1, t.unknowns, t.modes);
        let h = self.h;
        let z = &t.cheb.z;

        // flat extension Phi0 and its derivatives on every level
        let psi_hat = self.grid.forward(&psi.values);
        let mut phi0 = if want_interior { vec![0.0; p * n] } else { Vec::new() };
        let mut phi0_x = vec![0.0; p * n];
        let mut phi0_xx = vec![0.0; p * n];
        let mut phi0_z = vec![0.0; p * n];
        let mut phi0_xz = vec![0.0; p * n];
        let ws = &mut self.ws;
        for l in 0..p {
            let range = l * n..(l + 1) * n;
            let level_hat = |table: &[f64]| -> Vec<C64> {
                (0..modes).map(|m| psi_hat[m] * table[l * modes + m]).collect()
            };
            let c_hat = level_hat(&t.flat);
            let cz_hat = level_hat(&t.flat_z);
            full_spectrum(&c_hat, &mut ws.spec_a);
            derivative_pair(t, &ws.spec_a, &mut ws.buf, &mut ws.fft_scratch, &mut phi0_x[range.clone()], &mut phi0_xx[range.clone()]);
            full_spectrum(&cz_hat, &mut ws.spec_b);
            for m in 0..n {
                // X = S gives Phi0_z and Y = ik S gives Phi0_xz; X + iY = (1 - k) S
                ws.buf[m] = ws.spec_b[m] * (1.0 - t.dk[m]);
            }
            inverse_split(t, &mut ws.buf, &mut ws.fft_scratch, &mut phi0_z[range.clone()], &mut phi0_xz[range.clone()]);
            if want_interior {
                ws.buf.copy_from_slice(&ws.spec_a);
                inverse_split(t, &mut ws.buf, &mut ws.fft_scratch, &mut phi0[range], &mut ws.full[..n]);
            }
        }

        let mut co = Coefficients {
            depth: map.depth.clone(),
            a: vec![0.0; p * n],
            b: vec![0.0; p * n],
            c: vec![0.0; p * n],
        };
        let mut rhs = vec![0.0; u * n];
        for l in 1..u {
            let s = 1.0 + z[l];
            for i in 0..n {
                let (d, ex, exx) = (map.depth[i], map.eta_x[i], map.eta_xx[i]);
                let k = l * n + i;
                co.a[k] = (1.0 + s * s * ex * ex) / d;
                co.b[k] = -s * exx + 2.0 * s * ex * ex / d;
                co.c[k] = -2.0 * s * ex;
                let eta_i = d - h;
                let flat_defect = (2.0 * h * eta_i + eta_i * eta_i - h * h * s * s * ex * ex) / d;
                rhs[(l - 1) * n + i] =
                    -(flat_defect * phi0_xx[k] + co.c[k] * phi0_xz[k] + co.b[k] * phi0_z[k]);
            }
        }
        // bottom row: Phi0_z vanishes there exactly, so the Neumann data for Phi1 is zero

        let mut phi1 = vec![0.0; u * n];
        let outcome = {
            let mut op = Operator { t, ws, co: &co };
            gmres(&mut op, &rhs, &mut phi1, self.tolerance, self.restart, self.max_iterations)
        };
        if !outcome.converged {
            return Err(DtnError::NotConverged { iterations: outcome.iterations, residual: outcome.relative_residual });
        }

        let mut g = vec![0.0; n];
        for i in 0..n {
            let mut top_z = phi0_z[i];
            for l in 1..p {
                top_z += t.cheb.d1_at(0, l) * phi1[(l - 1) * n + i];
            }
            let ex = map.eta_x[i];
            g[i] = (1.0 + ex * ex) * top_z / map.depth[i] - ex * phi0_x[i];
        }
        if eta.parity == Parity::Even && psi.parity == Parity::Even {
            self.grid.symmetrize(&mut g, Parity::Even);
        }
        let g_psi = Field::new(g, eta.parity.product(psi.parity).product(Parity::Even));

        let interior = if want_interior {
            let ws = &mut self.ws;
            ws.full[..n].iter_mut().for_each(|v| *v = 0.0);
            ws.full[n..].copy_from_slice(&phi1);
            x_derivatives(t, ws);
            let mut phi = phi0;
            let mut phi_x = vec![0.0; p * n];
            let mut phi_y = vec![0.0; p * n];
            for l in 0..p {
                let s = 1.0 + z[l];
                for i in 0..n {
                    let k = l * n + i;
                    let mut phi1_z = 0.0;
                    for c in 1..p {
                        phi1_z += t.cheb.d1_at(l, c) * ws.full[c * n + i];
                    }
                    let big_z = phi0_z[k] + phi1_z;
                    let big_x = phi0_x[k] + ws.ux[k];
                    phi[k] += ws.full[k];
                    phi_y[k] = big_z / map.depth[i];
                    phi_x[k] = big_x - s * map.eta_x[i] * phi_y[k];
                }
            }
            Some(InteriorField {
                n,
                levels: p,
                dx: self.grid.dx(),
                z: z.clone(),
                weights: t.cheb.weights.clone(),
                depth: map.depth.clone(),
                eta_x: map.eta_x.clone(),
                phi,
                phi_x,
                phi_y,
            })
        } else {
            None
        };
        Ok(DtnResult { g_psi, interior, iterations: outcome.iterations, residual: outcome.relative_residual })
    }
}

/// Full-length Hermitian spectrum from modes 0..=N/2.
fn full_spectrum(half: &[C64], full: &mut [C64]) {
    crate::grid::hermitian_fill(half, full);
}

/// Inverse FFT of (X + iY) where X = ik S and Y = -k^2 S, giving f_x and f_xx.
fn derivative_pair(t: &Tables, spec: &[C64], buf: &mut [C64], scratch: &mut [C64], fx: &mut [f64], fxx: &mut [f64]) {
    for m in 0..t.n {
        buf[m] = spec[m] * C64::new(0.0, t.dk[m] - t.k2[m]);
    }
    inverse_split(t, buf, scratch, fx, fxx);
}

/// In-place inverse FFT of buf, writing real and imaginary parts scaled by 1/N.
fn inverse_split(t: &Tables, buf: &mut [C64], scratch: &mut [C64], re: &mut [f64], im: &mut [f64]) {
    t.inverse.process_with_scratch(buf, scratch);
    let scale = 1.0 / t.n as f64;
    for i in 0..t.n {
        re[i] = buf[i].re * scale;
        im[i] = buf[i].im * scale;
    }
}

/// FFT of a + ib followed by separation into the spectra of a and b.
fn forward_pair(
    t: &Tables,
    a: &[f64],
    b: &[f64],
    buf: &mut [C64],
    scratch: &mut [C64],
    spec_a: &mut [C64],
    spec_b: &mut [C64],
) {
    let n = t.n;
    for i in 0..n {
        buf[i] = C64::new(a[i], b[i]);
    }
    t.forward.process_with_scratch(buf, scratch);
    for m in 0..n {
        let zm = buf[m];
        let zc = buf[(n - m) % n].conj();
        spec_a[m] = (zm + zc) * 0.5;
        spec_b[m] = (zm - zc) * C64::new(0.0, -0.5);
    }
}

/// ux and uxx of the levels 1..=M stored in `ws.full`.
fn x_derivatives(t: &Tables, ws: &mut Workspace) {
    let n = t.n;
    let p = t.unknowns + 1;
    let mut l = 1;
    while l < p {
        let second = (l + 1 < p).then_some(l + 1);
        let (a, b) = match second {
            Some(l2) => (&ws.full[l * n..(l + 1) * n], &ws.full[l2 * n..(l2 + 1) * n]),
            None => (&ws.full[l * n..(l + 1) * n], &ws.full[0..n]),
        };
        let zeros_b = second.is_none();
        if zeros_b {
            let a = a.to_vec();
            let zero = vec![0.0; n];
            forward_pair(t, &a, &zero, &mut ws.buf, &mut ws.fft_scratch, &mut ws.spec_a, &mut ws.spec_b);
        } else {
            forward_pair(t, a, b, &mut ws.buf, &mut ws.fft_scratch, &mut ws.spec_a, &mut ws.spec_b);
        }
        derivative_pair(t, &ws.spec_a, &mut ws.buf, &mut ws.fft_scratch, &mut ws.ux[l * n..(l + 1) * n], &mut ws.uxx[l * n..(l + 1) * n]);
        if let Some(l2) = second {
            derivative_pair(t, &ws.spec_b, &mut ws.buf, &mut ws.fft_scratch, &mut ws.ux[l2 * n..(l2 + 1) * n], &mut ws.uxx[l2 * n..(l2 + 1) * n]);
        }
        l += 2;
    }
    ws.ux[..n].iter_mut().for_each(|v| *v = 0.0);
    ws.uxx[..n].iter_mut().for_each(|v| *v = 0.0);
}

/// out[level j] = sum_c D[j][c] in[level c] over c = 1..M, for j in `rows`.
fn z_apply(d: &[f64], p: usize, n: usize, input: &[f64], out: &mut [f64], rows: std::ops::Range<usize>) {
    let m = rows.len();
    if m == 0 {
        return;
    }
    // SAFETY: the strides describe in-bounds row-major views of `d` (rows x 1..p),
    // `input` (levels 1..p) and `out` (levels in `rows`), and `out` does not alias.
    unsafe {
        matrixmultiply::dgemm(
            m,
            p - 1,
            n,
            1.0,
            d.as_ptr().add(rows.start * p + 1),
            p as isize,
            1,
            input.as_ptr().add(n),
            n as isize,
            1,
            0.0,
            out.as_mut_ptr().add(rows.start * n),
            n as isize,
            1,
        );
    }
}

struct Operator<'a> {
    t: &'a Tables,
    ws: &'a mut Workspace,
    co: &'a Coefficients,
}

impl PreconditionedOperator for Operator<'_> {
    fn apply(&mut self, x: &[f64], y: &mut [f64]) {
        let t = self.t;
        let (n, u) = (t.n, t.unknowns);
        let p = u + 1;
        let ws = &mut *self.ws;
        ws.full[..n].iter_mut().for_each(|v| *v = 0.0);
        ws.full[n..].copy_from_slice(x);
        x_derivatives(t, ws);
        let d1 = &t.cheb.d1;
        let d2 = &t.cheb.d2;
        z_apply(d1, p, n, &ws.full, &mut ws.uz, 1..p);
        z_apply(d2, p, n, &ws.full, &mut ws.uzz, 1..u);
        z_apply(d1, p, n, &ws.ux, &mut ws.uxz, 1..u);
        let co = self.co;
        for l in 1..u {
            let row = &mut y[(l - 1) * n..l * n];
            for i in 0..n {
                let k = l * n + i;
                row[i] = co.depth[i] * ws.uxx[k] + co.a[k] * ws.uzz[k] + co.c[k] * ws.uxz[k] + co.b[k] * ws.uz[k];
            }
        }
        y[(u - 1) * n..u * n].copy_from_slice(&ws.uz[u * n..(u + 1) * n]);
    }

    fn precondition(&mut self, x: &[f64], y: &mut [f64]) {
        let t = self.t;
        let (n, u, modes) = (t.n, t.unknowns, t.modes);
        let ws = &mut *self.ws;
        let mut l = 0;
        while l < u {
            let a = &x[l * n..(l + 1) * n];
            let zero;
            let b = if l + 1 < u {
                &x[(l + 1) * n..(l + 2) * n]
            } else {
                zero = vec![0.0; n];
                &zero[..]
            };
            forward_pair(t, a, b, &mut ws.buf, &mut ws.fft_scratch, &mut ws.spec_a, &mut ws.spec_b);
            for m in 0..modes {
                ws.modal[m * u + l] = ws.spec_a[m];
                if l + 1 < u {
                    ws.modal[m * u + l + 1] = ws.spec_b[m];
                }
            }
            l += 2;
        }
        for m in 0..modes {
            let inv = &t.precond[m * u * u..(m + 1) * u * u];
            let src = &ws.modal[m * u..(m + 1) * u];
            for r in 0..u {
                let row = &inv[r * u..(r + 1) * u];
                let mut acc = ZERO;
                for (w, s) in row.iter().zip(src) {
                    acc += s * *w;
                }
                ws.modal_out[m * u + r] = acc;
            }
        }
        let mut l = 0;
        while l < u {
            for m in 0..modes {
                ws.spec_a[m] = ws.modal_out[m * u + l];
                ws.spec_b[m] = if l + 1 < u { ws.modal_out[m * u + l + 1] } else { ZERO };
            }
            // pack the two real inverse transforms into one complex one
            ws.buf[0] = C64::new(ws.spec_a[0].re, ws.spec_b[0].re);
            ws.buf[n / 2] = C64::new(ws.spec_a[n / 2].re, ws.spec_b[n / 2].re);
            for m in 1..n / 2 {
                let (sa, sb) = (ws.spec_a[m], ws.spec_b[m]);
                ws.buf[m] = sa + C64::new(0.0, 1.0) * sb;
                ws.buf[n - m] = sa.conj() + C64::new(0.0, 1.0) * sb.conj();
            }
            t.inverse.process_with_scratch(&mut ws.buf, &mut ws.fft_scratch);
            let scale = 1.0 / n as f64;
            for i in 0..n {
                y[l * n + i] = ws.buf[i].re * scale;
                if l + 1 < u {
                    y[(l + 1) * n + i] = ws.buf[i].im * scale;
                }
            }
            l += 2;
        }
    }
}

/// Exact G(0) psi = k tanh(kh) applied mode by mode.
pub fn dtn_flat(grid: &Grid, psi: &Field, h: f64) -> Field {
    let values = grid.apply_symbol(&psi.values, |_, k| C64::new(k * (k * h).tanh(), 0.0));
    Field::new(values, psi.parity)
}

/// Small-amplitude expansion of G(eta) psi to the given order (0 or 1).
pub fn dtn_taylor(grid: &Grid, eta: &Field, psi: &Field, h: f64, order: usize) -> Field {
    let g0 = dtn_flat(grid, psi, h);
    if order == 0 {
        return g0;
    }
    // G1 psi = -G0(eta G0 psi) - d/dx(eta psi_x)
    let eta_g0 = eta * &g0;
    let psi_x = grid.differentiate(psi);
    let flux = eta * &psi_x;
    let first = dtn_flat(grid, &eta_g0, h);
    let second = grid.differentiate(&flux);
    &(&g0 - &first) - &second
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn flat_surface_is_exact() {
        let grid = Grid::new(64, PI).unwrap();
        let mut solver = DtnSolver::new(&grid, 1.0, 8).unwrap();
        let eta = Field::zeros(64);
        let psi = grid.from_fn(|x| (3.0 * x).cos() + 0.2 * (20.0 * x).cos(), Parity::Even);
        let g = solver.apply(&eta, &psi).unwrap().g_psi;
        let exact = grid.from_fn(|x| 3.0 * 3f64.tanh() * (3.0 * x).cos() + 0.2 * 20.0 * 20f64.tanh() * (20.0 * x).cos(), Parity::Even);
        for (a, b) in g.values.iter().zip(&exact.values) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_map_is_rejected() {
        let grid = Grid::new(32, 1.0).unwrap();
        let mut solver = DtnSolver::new(&grid, 1.0, 8).unwrap();
        let mut eta = vec![0.0; 32];
        eta[5] = -1.0 + 1e-12;
        let err = solver.apply(&Field::new(eta, Parity::None), &Field::zeros(32)).unwrap_err();
        assert!(matches!(err, DtnError::MapDegenerate { .. }));
    }

    #[test]
    fn flat_profile_is_stable_for_large_wavenumbers() {
        let (c, cz) = flat_profile(800.0, -0.5);
        assert!(c.is_finite() && cz.is_finite() && c < 1e-100);
        let (c, cz) = flat_profile(800.0, 0.0);
        assert!((c - 1.0).abs() < 1e-15 && (cz - 800.0).abs() < 1e-10);
    }
}
