//! Background error covariance `B = b² C` with a separable correlation
//! `C = C_layer ⊗ C_y ⊗ C_x` and its symmetric square root.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, invalid, Result};
use crate::linalg::symmetric_sqrt;
use crate::qg::Grid;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CovarianceConfig {
    /// e-folding length of the Gaussian correlation, as a fraction of the
    /// zonal domain length.
    pub horiz_corr_len: f64,
    pub vert_corr: f64,
    pub std_b: f64,
}

impl Default for CovarianceConfig {
    fn default() -> Self {
        Self {
            horiz_corr_len: 0.3,
            vert_corr: 0.2,
            std_b: 0.2,
        }
    }
}

impl CovarianceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.std_b > 0.0) {
            return Err(invalid("std_b", "must be positive"));
        }
        if !(self.vert_corr.abs() < 1.0) {
            return Err(invalid("vert_corr", "must lie in (-1, 1)"));
        }
        if !(self.horiz_corr_len > 0.0) {
            return Err(invalid("horiz_corr_len", "must be positive"));
        }
        Ok(())
    }
}

/// Matrix-free `B` and `S` with `B = S Sᵀ`, `S` symmetric.
#[derive(Debug, Clone)]
pub struct CovarianceOperator {
    config: CovarianceConfig,
    grid: Grid,
    sqrt_x: Vec<f64>,
    sqrt_y: Vec<f64>,
    sqrt_layer: [[f64; 2]; 2],
}

impl CovarianceOperator {
    pub fn new(grid: Grid, config: CovarianceConfig) -> Result<Self> {
        config.validate()?;
        let length = config.horiz_corr_len * grid.lx;
        let (nx, ny) = (grid.nx, grid.ny);

        // Periodic x factor from the Gaussian spectrum, normalised to a unit
        // diagonal; its square root uses the square-rooted spectrum.
        let weights: Vec<f64> = (0..nx)
            .map(|k| {
                let kk = k.min(nx - k) as f64;
                let wavenumber = 2.0 * PI * kk / grid.lx;
                (-0.25 * wavenumber * wavenumber * length * length).exp()
            })
            .collect();
        let diag: f64 = weights.iter().sum::<f64>() / nx as f64;
        let mut sqrt_x = vec![0.0; nx * nx];
        for a in 0..nx {
            for b in 0..nx {
                let d = (a + nx - b) % nx;
                sqrt_x[a * nx + b] = weights
                    .iter()
                    .enumerate()
                    .map(|(k, w)| (w / diag).sqrt() * (2.0 * PI * (k * d) as f64 / nx as f64).cos())
                    .sum::<f64>()
                    / nx as f64;
            }
        }

        let mut corr_y = vec![0.0; ny * ny];
        for a in 0..ny {
            for b in 0..ny {
                let d = grid.y(a) - grid.y(b);
                corr_y[a * ny + b] = (-(d * d) / (length * length)).exp();
            }
        }
        let sqrt_y = symmetric_sqrt(&corr_y, ny);

        let c = config.vert_corr;
        let (p, m) = ((1.0 + c).sqrt(), (1.0 - c).sqrt());
        let sqrt_layer = [[0.5 * (p + m), 0.5 * (p - m)], [0.5 * (p - m), 0.5 * (p + m)]];

        Ok(Self {
            config,
            grid,
            sqrt_x,
            sqrt_y,
            sqrt_layer,
        })
    }

    pub fn config(&self) -> &CovarianceConfig {
        &self.config
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.grid.size()
    }

    /// `B v`.
    pub fn apply_cov(&self, v: &[f64]) -> Result<Vec<f64>> {
        let half = self.apply_sqrt_transpose(v)?;
        self.apply_sqrt(&half)
    }

    /// `S χ`, mapping a control vector to a state-space increment.
    pub fn apply_sqrt(&self, chi: &[f64]) -> Result<Vec<f64>> {
        check_len(self.dim(), chi.len())?;
        let mut out = self.apply_factor(chi);
        for v in &mut out {
            *v *= self.config.std_b;
        }
        Ok(out)
    }

    /// `Sᵀ v`. The factor is symmetric, so this is the same product.
    pub fn apply_sqrt_transpose(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.apply_sqrt(v)
    }

    fn apply_factor(&self, v: &[f64]) -> Vec<f64> {
        let g = &self.grid;
        let (nx, ny) = (g.nx, g.ny);
        let n = g.layer_size();
        let s = &self.sqrt_layer;
        let mut a = vec![0.0; 2 * n];
        for p in 0..n {
            a[p] = s[0][0] * v[p] + s[0][1] * v[n + p];
            a[n + p] = s[1][0] * v[p] + s[1][1] * v[n + p];
        }
        // y factor, column by column
        let mut b = vec![0.0; 2 * n];
        for l in 0..2 {
            for r in 0..ny {
                let row = &self.sqrt_y[r * ny..(r + 1) * ny];
                for (c, &w) in row.iter().enumerate() {
                    if w == 0.0 {
                        continue;
                    }
                    let src = &a[l * n + c * nx..l * n + (c + 1) * nx];
                    let dst = &mut b[l * n + r * nx..l * n + (r + 1) * nx];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d += w * s;
                    }
                }
            }
        }
        // x factor, row by row
        let mut out = vec![0.0; 2 * n];
        for (src, dst) in b.chunks(nx).zip(out.chunks_mut(nx)) {
            for (i, d) in dst.iter_mut().enumerate() {
                let kernel = &self.sqrt_x[i * nx..(i + 1) * nx];
                *d = kernel.iter().zip(src).map(|(k, s)| k * s).sum();
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::linalg::cholesky;

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    fn small_grid() -> Grid {
        Grid::new(8, 4, 2.4, 1.5).unwrap()
    }

    /// `B` assembled entry by entry from the correlation formulas.
    fn dense_oracle(g: &Grid, cfg: &CovarianceConfig) -> Vec<f64> {
        let n = g.size();
        let len = cfg.horiz_corr_len * g.lx;
        let nx = g.nx;
        let spectrum: Vec<f64> = (0..nx)
            .map(|k| {
                let kk = k.min(nx - k) as f64 * 2.0 * PI / g.lx;
                (-0.25 * kk * kk * len * len).exp()
            })
            .collect();
        let cx = |d: usize| -> f64 {
            let num: f64 = spectrum
                .iter()
                .enumerate()
                .map(|(k, w)| w * (2.0 * PI * (k * d) as f64 / nx as f64).cos())
                .sum();
            num / spectrum.iter().sum::<f64>()
        };
        let mut b = vec![0.0; n * n];
        for l1 in 0..2 {
            for j1 in 0..g.ny {
                for i1 in 0..nx {
                    for l2 in 0..2 {
                        for j2 in 0..g.ny {
                            for i2 in 0..nx {
                                let cz = if l1 == l2 { 1.0 } else { cfg.vert_corr };
                                let dy = g.y(j1) - g.y(j2);
                                let cy = (-(dy * dy) / (len * len)).exp();
                                let v = cfg.std_b.powi(2) * cz * cy * cx((i1 + nx - i2) % nx);
                                b[g.idx(l1, j1, i1) * n + g.idx(l2, j2, i2)] = v;
                            }
                        }
                    }
                }
            }
        }
        b
    }

    #[test]
    fn matches_dense_assembly() {
        let g = small_grid();
        let cfg = CovarianceConfig {
            horiz_corr_len: 0.15,
            vert_corr: 0.2,
            std_b: 0.08,
        };
        let op = CovarianceOperator::new(g, cfg).unwrap();
        let dense = dense_oracle(&g, &cfg);
        let n = g.size();
        for c in 0..n {
            let mut e = vec![0.0; n];
            e[c] = 1.0;
            let col = op.apply_cov(&e).unwrap();
            for r in 0..n {
                assert!((col[r] - dense[r * n + c]).abs() < 1e-14, "({r},{c})");
            }
            // peak of the spike response is b²
            assert!((col[c] - 0.0064).abs() < 1e-14);
        }
        assert!(cholesky(&dense, n).is_some());
    }

    #[test]
    fn zero_maps_to_zero_and_layers_separate() {
        let g = Grid::default();
        let op = CovarianceOperator::new(
            g,
            CovarianceConfig {
                vert_corr: 0.0,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(op.apply_cov(&vec![0.0; g.size()]).unwrap().iter().all(|&v| v == 0.0));
        assert!(op.apply_sqrt(&vec![0.0; g.size()]).unwrap().iter().all(|&v| v == 0.0));
        let mut v = vec![0.0; g.size()];
        v[g.idx(0, 10, 20)] = 1.0;
        let out = op.apply_cov(&v).unwrap();
        assert!(out[g.layer_size()..].iter().all(|&x| x.abs() < 1e-18));
        assert!(out[..g.layer_size()].iter().any(|&x| x.abs() > 1e-4));
    }

    #[test]
    fn rejects_bad_config_and_dimension() {
        let g = Grid::default();
        for cfg in [
            CovarianceConfig { std_b: 0.0, ..Default::default() },
            CovarianceConfig { vert_corr: 1.0, ..Default::default() },
            CovarianceConfig { horiz_corr_len: -0.1, ..Default::default() },
        ] {
            assert!(CovarianceOperator::new(g, cfg).is_err());
        }
        let op = CovarianceOperator::new(g, CovarianceConfig::default()).unwrap();
        assert!(op.apply_cov(&[1.0; 3]).is_err());
    }

    #[test]
    fn scaling_with_std() {
        let g = Grid::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v: Vec<f64> = (0..g.size()).map(|_| rng.random::<f64>() - 0.5).collect();
        let one = CovarianceOperator::new(
            g,
            CovarianceConfig {
                std_b: 0.08,
                ..Default::default()
            },
        )
        .unwrap();
        let two = CovarianceOperator::new(
            g,
            CovarianceConfig {
                std_b: 0.16,
                ..Default::default()
            },
        )
        .unwrap();
        let (a, b) = (one.apply_cov(&v).unwrap(), two.apply_cov(&v).unwrap());
        for (x, y) in a.iter().zip(&b) {
            assert!((4.0 * x - y).abs() <= 1e-12 * y.abs().max(1e-300));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn factor_identities(seed in any::<u64>(), len in 0.05f64..0.8, c in -0.9f64..0.9) {
            let g = Grid::default();
            let op = CovarianceOperator::new(g, CovarianceConfig { horiz_corr_len: len, vert_corr: c, std_b: 0.08 }).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let u: Vec<f64> = (0..g.size()).map(|_| rng.random::<f64>() - 0.5).collect();
            let v: Vec<f64> = (0..g.size()).map(|_| rng.random::<f64>() - 0.5).collect();
            let bu = op.apply_cov(&u).unwrap();
            let bv = op.apply_cov(&v).unwrap();
            // symmetry
            let (l, r) = (dot(&bu, &v), dot(&u, &bv));
            prop_assert!((l - r).abs() <= 1e-12 * l.abs().max(r.abs()).max(1e-300));
            // S Sᵀ = B
            let ssv = op.apply_sqrt(&op.apply_sqrt_transpose(&v).unwrap()).unwrap();
            let err: f64 = ssv.iter().zip(&bv).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            prop_assert!(err <= 1e-12 * dot(&bv, &bv).sqrt());
            // adjoint identity
            let su = op.apply_sqrt(&u).unwrap();
            let stv = op.apply_sqrt_transpose(&v).unwrap();
            let (l, r) = (dot(&su, &v), dot(&u, &stv));
            prop_assert!((l - r).abs() <= 1e-12 * l.abs().max(r.abs()));
            // positive
            prop_assert!(dot(&bv, &v) > 0.0);
        }
    }
}
