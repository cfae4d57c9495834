//! Inversion of the PV–stream-function relation.
//!
//! The two layers are decoupled with the eigenvectors of the coupling
//! matrix `[[-F1, F1], [F2, -F2]]` (eigenvalues `0` and `-(F1 + F2)`).
//! Each modal Helmholtz problem is solved with a DFT in x and a
//! tridiagonal sweep in y (ψ = 0 on the walls).

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::grid::Grid;

pub struct EllipticSolver {
    grid: Grid,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    /// Right eigenvectors as columns: `v[layer][mode]`.
    v: [[f64; 2]; 2],
    /// Inverse of `v`: `v_inv[mode][layer]`.
    v_inv: [[f64; 2]; 2],
    /// Thomas factors per mode and wavenumber: modified upper diagonal and
    /// reciprocal pivots, each of length `ny`.
    upper: Vec<Vec<f64>>,
    pivot: Vec<Vec<f64>>,
    off: f64,
}

impl std::fmt::Debug for EllipticSolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EllipticSolver").field("grid", &self.grid).finish()
    }
}

impl EllipticSolver {
    pub fn new(grid: Grid, f1: f64, f2: f64) -> Self {
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(grid.nx);
        let inv = planner.plan_fft_inverse(grid.nx);
        let s = f1 + f2;
        let v = [[1.0, f1], [1.0, -f2]];
        let v_inv = [[f2 / s, f1 / s], [1.0 / s, -1.0 / s]];
        let eig = [0.0, -s];

        let (dx, dy) = (grid.dx(), grid.dy());
        let off = 1.0 / (dy * dy);
        let mut upper = Vec::with_capacity(2 * grid.nx);
        let mut pivot = Vec::with_capacity(2 * grid.nx);
        for &lambda in &eig {
            for k in 0..grid.nx {
                let diag = x_symbol(k, grid.nx, dx) - 2.0 * off + lambda;
                let mut up = vec![0.0; grid.ny];
                let mut piv = vec![0.0; grid.ny];
                let mut prev_up = 0.0;
                for j in 0..grid.ny {
                    let denom = if j == 0 { diag } else { diag - off * prev_up };
                    piv[j] = 1.0 / denom;
                    up[j] = off * piv[j];
                    prev_up = up[j];
                }
                upper.push(up);
                pivot.push(piv);
            }
        }
        Self {
            grid,
            fwd,
            inv,
            v,
            v_inv,
            upper,
            pivot,
            off,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Solve `(Δ + A) ψ = rhs` where `A` couples the layers.
    pub fn solve(&self, rhs: &[f64], psi: &mut [f64]) {
        self.solve_with(rhs, psi, &self.v_inv, &self.v);
    }

    /// Solve `(Δ + Aᵀ) λ = rhs`, the transpose of [`Self::solve`].
    pub fn solve_transpose(&self, rhs: &[f64], out: &mut [f64]) {
        // (Δ + Aᵀ)^-1 = V^-T (Δ + Λ)^-1 Vᵀ
        self.solve_with(rhs, out, &transpose(&self.v), &transpose(&self.v_inv));
    }

    /// `to_modal[m][l]` projects layers to modes, `to_layer[l][m]` maps back.
    fn solve_with(
        &self,
        rhs: &[f64],
        out: &mut [f64],
        to_modal: &[[f64; 2]; 2],
        to_layer: &[[f64; 2]; 2],
    ) {
        let g = &self.grid;
        let n = g.layer_size();
        debug_assert_eq!(rhs.len(), 2 * n);
        debug_assert_eq!(out.len(), 2 * n);

        let mut modal = vec![0.0; 2 * n];
        for p in 0..n {
            let (a, b) = (rhs[p], rhs[n + p]);
            modal[p] = to_modal[0][0] * a + to_modal[0][1] * b;
            modal[n + p] = to_modal[1][0] * a + to_modal[1][1] * b;
        }
        for m in 0..2 {
            self.helmholtz(m, &mut modal[m * n..(m + 1) * n]);
        }
        for p in 0..n {
            let (a, b) = (modal[p], modal[n + p]);
            out[p] = to_layer[0][0] * a + to_layer[0][1] * b;
            out[n + p] = to_layer[1][0] * a + to_layer[1][1] * b;
        }
    }

    /// In-place solve of `(Δ + λ_m) φ = g` for one mode.
    fn helmholtz(&self, mode: usize, field: &mut [f64]) {
        let (nx, ny) = (self.grid.nx, self.grid.ny);
        let mut spec: Vec<Complex64> = field.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.fwd.get_inplace_scratch_len()];
        for row in spec.chunks_mut(nx) {
            self.fwd.process_with_scratch(row, &mut scratch);
        }
        for k in 0..nx {
            let up = &self.upper[mode * nx + k];
            let piv = &self.pivot[mode * nx + k];
            // forward sweep
            let mut prev = Complex64::new(0.0, 0.0);
            for j in 0..ny {
                let d = (spec[j * nx + k] - prev * self.off) * piv[j];
                spec[j * nx + k] = d;
                prev = d;
            }
            // back substitution
            for j in (0..ny - 1).rev() {
                let next = spec[(j + 1) * nx + k];
                spec[j * nx + k] -= next * up[j];
            }
        }
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.inv.get_inplace_scratch_len()];
        for row in spec.chunks_mut(nx) {
            self.inv.process_with_scratch(row, &mut scratch);
        }
        let scale = 1.0 / nx as f64;
        for (f, s) in field.iter_mut().zip(&spec) {
            *f = s.re * scale;
        }
    }
}

fn transpose(m: &[[f64; 2]; 2]) -> [[f64; 2]; 2] {
    [[m[0][0], m[1][0]], [m[0][1], m[1][1]]]
}

/// Eigenvalue of the periodic second difference for wavenumber `k`.
pub fn x_symbol(k: usize, nx: usize, dx: f64) -> f64 {
    (2.0 * (2.0 * PI * k as f64 / nx as f64).cos() - 2.0) / (dx * dx)
}

/// Eigenvalue of the Dirichlet second difference for sine mode `m ≥ 1`.
pub fn y_symbol(m: usize, ny: usize, dy: f64) -> f64 {
    (2.0 * (PI * m as f64 / (ny + 1) as f64).cos() - 2.0) / (dy * dy)
}
