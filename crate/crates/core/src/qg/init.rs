use std::f64::consts::PI;

use super::grid::Grid;
use super::state::ModelState;

/// Zonal tanh jet on both layers plus a small wave perturbation.
///
/// The profile vanishes on both walls; `upper` and `lower` set the peak
/// winds of each layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JetInit {
    pub upper: f64,
    pub lower: f64,
    pub width: f64,
    pub wave_amplitude: f64,
    pub wavenumber: usize,
}

impl Default for JetInit {
    fn default() -> Self {
        Self {
            upper: 1.5,
            lower: 0.3,
            width: 1.0,
            wave_amplitude: 0.2,
            wavenumber: 3,
        }
    }
}

impl JetInit {
    pub fn state(&self, grid: &Grid) -> ModelState {
        let mut psi = vec![0.0; grid.size()];
        let mid = 0.5 * grid.ly;
        let edge = (mid / self.width).tanh();
        let profile = |y: f64| {
            // u = U·sech² away from the walls; ψ = −∫u with ψ(0) = ψ(ly) = 0
            -self.width * ((y - mid) / self.width).tanh() + self.width * edge * (2.0 * y / grid.ly - 1.0)
        };
        for (l, amp) in [(0usize, self.upper), (1, self.lower)] {
            for j in 0..grid.ny {
                let y = grid.y(j);
                let wall = (PI * y / grid.ly).sin();
                for i in 0..grid.nx {
                    let x = grid.x(i);
                    let wave = (2.0 * PI * self.wavenumber as f64 * x / grid.lx).sin();
                    psi[grid.idx(l, j, i)] = amp * profile(y) + self.wave_amplitude * wave * wall;
                }
            }
        }
        ModelState::new(psi, 0.0)
    }
}
