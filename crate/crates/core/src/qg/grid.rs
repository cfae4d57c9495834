use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

pub const N_LAYERS: usize = 2;

/// Channel grid: periodic in x, walls in y.
///
/// The state holds `ny` interior rows; the two wall rows at `y = 0` and
/// `y = ly` sit outside the state. Interior row `j` (0-based) is at
/// `y = (j + 1) * dy`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
}

impl Default for Grid {
    fn default() -> Self {
        Self {
            nx: 40,
            ny: 20,
            lx: 12.0,
            ly: 6.3,
        }
    }
}

impl Grid {
    pub fn new(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Self> {
        let grid = Self { nx, ny, lx, ly };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx < 4 {
            return Err(invalid("grid.nx", "must be at least 4"));
        }
        if self.ny < 4 {
            return Err(invalid("grid.ny", "must be at least 4"));
        }
        if !(self.lx > 0.0 && self.ly > 0.0) {
            return Err(invalid("grid", "domain extents must be positive"));
        }
        Ok(())
    }

    pub fn n_layers(&self) -> usize {
        N_LAYERS
    }

    pub fn dx(&self) -> f64 {
        self.lx / self.nx as f64
    }

    pub fn dy(&self) -> f64 {
        self.ly / (self.ny + 1) as f64
    }

    /// Length of the state vector.
    pub fn size(&self) -> usize {
        N_LAYERS * self.ny * self.nx
    }

    pub fn layer_size(&self) -> usize {
        self.ny * self.nx
    }

    /// Number of rows including both walls.
    pub fn full_rows(&self) -> usize {
        self.ny + 2
    }

    pub fn full_size(&self) -> usize {
        N_LAYERS * self.full_rows() * self.nx
    }

    #[inline]
    pub fn idx(&self, layer: usize, j: usize, i: usize) -> usize {
        (layer * self.ny + j) * self.nx + i
    }

    /// Index into a field that includes the wall rows; `jj = 0` is the
    /// southern wall.
    #[inline]
    pub fn full_idx(&self, layer: usize, jj: usize, i: usize) -> usize {
        (layer * self.full_rows() + jj) * self.nx + i
    }

    pub fn x(&self, i: usize) -> f64 {
        i as f64 * self.dx()
    }

    /// y coordinate of full row `jj` (walls at `jj = 0` and `jj = ny + 1`).
    pub fn y_full(&self, jj: usize) -> f64 {
        jj as f64 * self.dy()
    }

    /// y coordinate of interior row `j`.
    pub fn y(&self, j: usize) -> f64 {
        self.y_full(j + 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_spacing() {
        let g = Grid::default();
        assert_eq!(g.size(), 1600);
        assert!((g.dx() - 0.3).abs() < 1e-15);
        assert!((g.dy() - 0.3).abs() < 1e-15);
        assert!((g.y_full(g.ny + 1) - g.ly).abs() < 1e-12);
    }

    #[test]
    fn rejects_small_grid() {
        assert!(Grid::new(3, 20, 1.0, 1.0).is_err());
        assert!(Grid::new(8, 3, 1.0, 1.0).is_err());
        assert!(Grid::new(8, 4, 1.0, 1.0).is_ok());
    }
}
