use serde::{Deserialize, Serialize};

use super::grid::{Grid, N_LAYERS};
use crate::error::{invalid, Result};
use crate::units;

/// Gaussian hill description for the lower-layer orography term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hill {
    pub center: (f64, f64),
    pub amplitude: f64,
    pub width: f64,
}

/// Orography term `Rs(x, y)` on every row including the walls.
#[derive(Debug, Clone, PartialEq)]
pub struct Orography {
    pub hill: Hill,
    /// `(ny + 2) * nx` values, row-major from the southern wall.
    pub values: Vec<f64>,
}

impl Orography {
    /// Gaussian hill with periodic (minimum-image) distance in x.
    pub fn gaussian(grid: &Grid, hill: Hill) -> Self {
        let mut values = Vec::with_capacity(grid.full_rows() * grid.nx);
        for jj in 0..grid.full_rows() {
            let dy = grid.y_full(jj) - hill.center.1;
            for i in 0..grid.nx {
                let mut dx = (grid.x(i) - hill.center.0).rem_euclid(grid.lx);
                if dx > 0.5 * grid.lx {
                    dx -= grid.lx;
                }
                let r2 = dx * dx + dy * dy;
                values.push(hill.amplitude * (-r2 / (2.0 * hill.width * hill.width)).exp());
            }
        }
        Self { hill, values }
    }

    pub fn flat(grid: &Grid) -> Self {
        Self {
            hill: Hill {
                center: (0.0, 0.0),
                amplitude: 0.0,
                width: 1.0,
            },
            values: vec![0.0; grid.full_rows() * grid.nx],
        }
    }

    #[inline]
    pub fn at(&self, grid: &Grid, jj: usize, i: usize) -> f64 {
        self.values[jj * grid.nx + i]
    }
}

/// Physical and numerical configuration of the two-layer model.
#[derive(Debug, Clone, PartialEq)]
pub struct QgParams {
    pub grid: Grid,
    pub f1: f64,
    pub f2: f64,
    pub beta: f64,
    pub dt: f64,
    pub orography: Orography,
    /// Uniform zonal wind of each layer. The state ψ is the departure from
    /// the matching background stream function `−U_l (y − ly/2)`, so the
    /// state still vanishes on the walls.
    pub background_wind: [f64; 2],
}

/// Layer depths and settings from which [`QgParams`] are derived.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSetup {
    pub grid: Grid,
    pub top_depth_m: f64,
    pub bottom_depth_m: f64,
    pub dt_minutes: f64,
    pub beta: f64,
    pub hill: Hill,
    pub background_wind: [f64; 2],
}

impl Default for ModelSetup {
    fn default() -> Self {
        Self::reference()
    }
}

impl ModelSetup {
    pub fn reference() -> Self {
        let grid = Grid::default();
        Self {
            grid,
            top_depth_m: 6000.0,
            bottom_depth_m: 4000.0,
            dt_minutes: 10.0,
            beta: 1.6,
            hill: Hill {
                center: (grid.lx / 4.0, 2.0 * grid.ly / 3.0),
                amplitude: 4.0,
                width: 0.1 * grid.lx,
            },
            background_wind: DEFAULT_BACKGROUND_WIND,
        }
    }

    /// Layer depths shifted, time step doubled and hill moved to the
    /// centre of the domain.
    pub fn perturbed() -> Self {
        let mut setup = Self::reference();
        setup.top_depth_m = 5750.0;
        setup.bottom_depth_m = 4250.0;
        setup.dt_minutes = 20.0;
        setup.hill.center = (setup.grid.lx / 2.0, setup.grid.ly / 2.0);
        setup
    }

    pub fn params(&self) -> Result<QgParams> {
        if !(self.top_depth_m > 0.0 && self.bottom_depth_m > 0.0) {
            return Err(invalid("layer depth", "must be positive"));
        }
        QgParams::new(
            self.grid,
            units::coupling_coefficient(self.top_depth_m),
            units::coupling_coefficient(self.bottom_depth_m),
            self.beta,
            units::minutes(self.dt_minutes),
            Orography::gaussian(&self.grid, self.hill),
            self.background_wind,
        )
    }
}

pub const DEFAULT_BACKGROUND_WIND: [f64; 2] = [2.0, 0.0];

impl QgParams {
    pub fn new(
        grid: Grid,
        f1: f64,
        f2: f64,
        beta: f64,
        dt: f64,
        orography: Orography,
        background_wind: [f64; 2],
    ) -> Result<Self> {
        grid.validate()?;
        if !(f1 > 0.0) {
            return Err(invalid("f1", "must be positive"));
        }
        if !(f2 > 0.0) {
            return Err(invalid("f2", "must be positive"));
        }
        if !(dt > 0.0) {
            return Err(invalid("dt", "must be positive"));
        }
        if !beta.is_finite() || background_wind.iter().any(|u| !u.is_finite()) {
            return Err(invalid("beta/background_wind", "must be finite"));
        }
        if orography.values.len() != grid.full_rows() * grid.nx
            || orography.values.iter().any(|v| !v.is_finite())
        {
            return Err(invalid("orography", "values must be finite and match the grid"));
        }
        Ok(Self {
            grid,
            f1,
            f2,
            beta,
            dt,
            orography,
            background_wind,
        })
    }

    pub fn reference() -> Self {
        ModelSetup::reference().params().expect("reference setup is valid")
    }

    pub fn perturbed() -> Self {
        ModelSetup::perturbed().params().expect("perturbed setup is valid")
    }

    /// Potential vorticity of the ψ = 0 state at full row `jj`, column
    /// `i`: `βy`, the coupling of the background shear, and `Rs` on the
    /// lower layer.
    #[inline]
    pub fn background_q(&self, layer: usize, jj: usize, i: usize) -> f64 {
        let y = self.grid.y_full(jj);
        let shear = self.background_wind[0] - self.background_wind[1];
        let centred = y - 0.5 * self.grid.ly;
        let mut q = self.beta * y;
        if layer == 0 {
            q += self.f1 * shear * centred;
        } else {
            q += -self.f2 * shear * centred + self.orography.at(&self.grid, jj, i);
        }
        q
    }

    pub fn coupling(&self, layer: usize) -> f64 {
        debug_assert!(layer < N_LAYERS);
        if layer == 0 {
            self.f1
        } else {
            self.f2
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_hill_matches_formula() {
        let grid = Grid::default();
        let hill = Hill {
            center: (3.0, 4.2),
            amplitude: 1.0,
            width: 1.2,
        };
        let oro = Orography::gaussian(&grid, hill);
        for jj in [0, 5, 14, 21] {
            for i in [0, 10, 39] {
                let mut dx = grid.x(i) - 3.0;
                if dx > 6.0 {
                    dx -= 12.0;
                }
                let dy = grid.y_full(jj) - 4.2;
                let expect = (-(dx * dx + dy * dy) / (2.0 * 1.44)).exp();
                assert!((oro.at(&grid, jj, i) - expect).abs() < 1e-15);
            }
        }
        assert!((oro.at(&grid, 14, 10) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn perturbed_differs_in_table_entries() {
        let r = ModelSetup::reference();
        let p = ModelSetup::perturbed();
        assert_eq!(p.dt_minutes, 2.0 * r.dt_minutes);
        assert_eq!(p.hill.center, (6.0, 3.15));
        assert_eq!(p.hill.amplitude, r.hill.amplitude);
        let rp = r.params().unwrap();
        // f1/f2 equals D2/D1
        assert!((rp.f1 / rp.f2 - 4000.0 / 6000.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_params() {
        let g = Grid::default();
        let o = Orography::flat(&g);
        assert!(QgParams::new(g, -1.0, 1.0, 1.0, 0.1, o.clone(), [0.0; 2]).is_err());
        assert!(QgParams::new(g, 1.0, 1.0, 1.0, 0.0, o, [0.0; 2]).is_err());
    }
}
