//! Semi-Lagrangian time stepping with its tangent-linear and adjoint.

use super::elliptic::EllipticSolver;
use super::grid::{Grid, N_LAYERS};
use super::params::QgParams;
use super::state::{ForcingTerm, ModelState, Trajectory, VorticityField};
use crate::error::{check_len, Error, Result};
use crate::units::whole_steps;

/// A configured two-layer model with its precomputed elliptic solver.
#[derive(Debug)]
pub struct QgModel {
    params: QgParams,
    solver: EllipticSolver,
    /// PV of the ψ = 0 state on all rows; the wall rows keep these values.
    background: Vec<f64>,
}

impl Clone for QgModel {
    fn clone(&self) -> Self {
        Self::new(self.params.clone())
    }
}

/// Departure point of one arrival node in fractional full-row coordinates.
#[derive(Debug, Clone, Copy)]
struct Departure {
    i0: usize,
    i1: usize,
    j0: usize,
    ax: f64,
    ay: f64,
    clipped: bool,
}

impl QgModel {
    pub fn new(params: QgParams) -> Self {
        let grid = params.grid;
        let solver = EllipticSolver::new(grid, params.f1, params.f2);
        let mut background = vec![0.0; grid.full_size()];
        for l in 0..N_LAYERS {
            for jj in 0..grid.full_rows() {
                for i in 0..grid.nx {
                    background[grid.full_idx(l, jj, i)] = params.background_q(l, jj, i);
                }
            }
        }
        Self {
            params,
            solver,
            background,
        }
    }

    pub fn reference() -> Self {
        Self::new(QgParams::reference())
    }

    pub fn perturbed() -> Self {
        Self::new(QgParams::perturbed())
    }

    pub fn params(&self) -> &QgParams {
        &self.params
    }

    pub fn grid(&self) -> &Grid {
        &self.params.grid
    }

    pub fn dt(&self) -> f64 {
        self.params.dt
    }

    pub fn steps_for(&self, horizon: f64) -> Result<usize> {
        whole_steps(horizon, self.params.dt)
    }

    /// `q1 = Δψ1 − F1(ψ1 − ψ2) + βy`, `q2 = Δψ2 − F2(ψ2 − ψ1) + βy + Rs`,
    /// with the fixed wall rows attached.
    pub fn psi_to_q(&self, state: &ModelState) -> Result<VorticityField> {
        state.conforms(self.grid())?;
        let mut q = self.background.clone();
        self.add_relative_q(&state.psi, &mut q);
        Ok(VorticityField {
            q,
            time: state.time,
        })
    }

    /// Inverse of [`Self::psi_to_q`] using the interior rows of `q`.
    pub fn q_to_psi(&self, field: &VorticityField) -> Result<ModelState> {
        let g = *self.grid();
        check_len(g.full_size(), field.q.len())?;
        let mut rhs = vec![0.0; g.size()];
        for l in 0..N_LAYERS {
            for j in 0..g.ny {
                for i in 0..g.nx {
                    let f = g.full_idx(l, j + 1, i);
                    rhs[g.idx(l, j, i)] = field.q[f] - self.background[f];
                }
            }
        }
        let mut psi = vec![0.0; g.size()];
        self.solver.solve(&rhs, &mut psi);
        let state = ModelState::new(psi, field.time);
        if !state.is_finite() {
            return Err(Error::BlowUp { step: 0 });
        }
        Ok(state)
    }

    /// Adds the ψ-dependent part of `q` into the interior rows of a full field.
    fn add_relative_q(&self, psi: &[f64], full: &mut [f64]) {
        let g = self.grid();
        let (nx, ny) = (g.nx, g.ny);
        let idx2 = 1.0 / (g.dx() * g.dx());
        let idy2 = 1.0 / (g.dy() * g.dy());
        let n = g.layer_size();
        for l in 0..N_LAYERS {
            let f = self.params.coupling(l);
            let (own, other) = if l == 0 { (0, n) } else { (n, 0) };
            for j in 0..ny {
                for i in 0..nx {
                    let p = j * nx + i;
                    let c = psi[own + p];
                    let e = psi[own + j * nx + (i + 1) % nx];
                    let w = psi[own + j * nx + (i + nx - 1) % nx];
                    let s = if j > 0 { psi[own + p - nx] } else { 0.0 };
                    let nn = if j + 1 < ny { psi[own + p + nx] } else { 0.0 };
                    let lap = (e - 2.0 * c + w) * idx2 + (nn - 2.0 * c + s) * idy2;
                    full[g.full_idx(l, j + 1, i)] += lap - f * (c - psi[other + p]);
                }
            }
        }
    }

    /// Transpose of [`Self::add_relative_q`] restricted to interior rows.
    fn relative_q_transpose(&self, qbar: &[f64], out: &mut [f64]) {
        let g = self.grid();
        let (nx, ny) = (g.nx, g.ny);
        let idx2 = 1.0 / (g.dx() * g.dx());
        let idy2 = 1.0 / (g.dy() * g.dy());
        let n = g.layer_size();
        for l in 0..N_LAYERS {
            let f = self.params.coupling(l);
            let (own, other) = if l == 0 { (0, n) } else { (n, 0) };
            for j in 0..ny {
                for i in 0..nx {
                    let p = j * nx + i;
                    let r = qbar[g.full_idx(l, j + 1, i)];
                    if r == 0.0 {
                        continue;
                    }
                    out[own + p] += -(2.0 * idx2 + 2.0 * idy2) * r - f * r;
                    out[other + p] += f * r;
                    out[own + j * nx + (i + 1) % nx] += idx2 * r;
                    out[own + j * nx + (i + nx - 1) % nx] += idx2 * r;
                    if j > 0 {
                        out[own + p - nx] += idy2 * r;
                    }
                    if j + 1 < ny {
                        out[own + p + nx] += idy2 * r;
                    }
                }
            }
        }
    }

    /// Departure winds `u = −∂ψ/∂y`, `v = ∂ψ/∂x` at interior node
    /// `(l, j, i)`, without the background zonal wind.
    #[inline]
    fn winds(&self, psi: &[f64], l: usize, j: usize, i: usize) -> (f64, f64) {
        let g = self.grid();
        let (nx, ny) = (g.nx, g.ny);
        let base = l * g.layer_size();
        let s = if j > 0 { psi[base + (j - 1) * nx + i] } else { 0.0 };
        let n = if j + 1 < ny { psi[base + (j + 1) * nx + i] } else { 0.0 };
        let e = psi[base + j * nx + (i + 1) % nx];
        let w = psi[base + j * nx + (i + nx - 1) % nx];
        (-(n - s) / (2.0 * g.dy()), (e - w) / (2.0 * g.dx()))
    }

    #[inline]
    fn departure(&self, psi: &[f64], l: usize, j: usize, i: usize, step: usize) -> Result<Departure> {
        let g = self.grid();
        let dt = self.params.dt;
        let (u, v) = self.winds(psi, l, j, i);
        let (sx, sy) = (dt * (u + self.params.background_wind[l]), dt * v);
        if !(sx.abs() <= g.lx && sy.abs() <= g.ly) {
            let displacement = if sx.is_nan() || sy.is_nan() {
                f64::NAN
            } else {
                sx.abs().max(sy.abs())
            };
            return Err(Error::Cfl { displacement, step });
        }
        let nxf = g.nx as f64;
        let fx = (i as f64 - sx / g.dx()).rem_euclid(nxf);
        let fy_raw = (j + 1) as f64 - sy / g.dy();
        let top = (g.ny + 1) as f64;
        let (fy, clipped) = if fy_raw < 0.0 {
            (0.0, true)
        } else if fy_raw > top {
            (top, true)
        } else {
            (fy_raw, false)
        };
        let mut i0 = fx.floor() as usize;
        let mut ax = fx - i0 as f64;
        if i0 >= g.nx {
            i0 = 0;
            ax = 0.0;
        }
        let mut j0 = fy.floor() as usize;
        let mut ay = fy - j0 as f64;
        if j0 > g.ny {
            j0 = g.ny;
            ay = 1.0;
        }
        Ok(Departure {
            i0,
            i1: (i0 + 1) % g.nx,
            j0,
            ax,
            ay,
            clipped,
        })
    }

    /// Departure points of one step from `state` in fractional index units
    /// of the full field `(x, y)`, in state order.
    pub fn departure_points(&self, state: &ModelState) -> Result<Vec<(f64, f64)>> {
        state.conforms(self.grid())?;
        let g = *self.grid();
        let mut out = Vec::with_capacity(g.size());
        for l in 0..N_LAYERS {
            for j in 0..g.ny {
                for i in 0..g.nx {
                    let d = self.departure(&state.psi, l, j, i, 0)?;
                    out.push((d.i0 as f64 + d.ax, d.j0 as f64 + d.ay));
                }
            }
        }
        Ok(out)
    }

    /// One step of length δt.
    pub fn step(&self, state: &ModelState, forcing: Option<&ForcingTerm>) -> Result<ModelState> {
        state.conforms(self.grid())?;
        self.step_indexed(state, forcing, 0)
    }

    fn step_indexed(
        &self,
        state: &ModelState,
        forcing: Option<&ForcingTerm>,
        step: usize,
    ) -> Result<ModelState> {
        let g = *self.grid();
        let mut q = self.background.clone();
        self.add_relative_q(&state.psi, &mut q);

        let mut rhs = vec![0.0; g.size()];
        for l in 0..N_LAYERS {
            for j in 0..g.ny {
                for i in 0..g.nx {
                    let d = self.departure(&state.psi, l, j, i, step)?;
                    let v = interpolate(&g, &q, l, &d);
                    rhs[g.idx(l, j, i)] = v - self.background[g.full_idx(l, j + 1, i)];
                }
            }
        }
        let mut psi = vec![0.0; g.size()];
        self.solver.solve(&rhs, &mut psi);
        if let Some(f) = forcing {
            check_len(g.size(), f.eta.len())?;
            for (p, e) in psi.iter_mut().zip(&f.eta) {
                *p += e;
            }
        }
        let next = ModelState::new(psi, state.time + self.params.dt);
        if !next.is_finite() {
            return Err(Error::BlowUp { step: step + 1 });
        }
        Ok(next)
    }

    /// Flow map over `horizon` (a multiple of δt).
    pub fn resolvent(
        &self,
        state: &ModelState,
        horizon: f64,
        forcing: Option<&ForcingTerm>,
    ) -> Result<ModelState> {
        let n = self.steps_for(horizon)?;
        state.conforms(self.grid())?;
        let mut x = state.clone();
        for k in 0..n {
            x = self.step_indexed(&x, forcing, k)?;
        }
        Ok(x)
    }

    /// Runs `n_steps` and keeps every intermediate state (the linearisation
    /// trajectory for [`Self::tangent_linear`] and [`Self::adjoint`]).
    pub fn integrate_steps(
        &self,
        state: &ModelState,
        n_steps: usize,
        forcing: Option<&ForcingTerm>,
    ) -> Result<Trajectory> {
        state.conforms(self.grid())?;
        let mut states = Vec::with_capacity(n_steps + 1);
        states.push(state.clone());
        for k in 0..n_steps {
            let next = self.step_indexed(&states[k], forcing, k)?;
            states.push(next);
        }
        Ok(Trajectory {
            states,
            dt_between: self.params.dt,
        })
    }

    /// Spin up, then record `length / store_every + 1` states.
    pub fn generate_trajectory(
        &self,
        init: &ModelState,
        spinup: f64,
        length: f64,
        store_every: f64,
    ) -> Result<Trajectory> {
        let n_spin = self.steps_for(spinup)?;
        let stride = self.steps_for(store_every)?;
        let n_len = self.steps_for(length)?;
        if stride == 0 && n_len > 0 {
            return Err(crate::error::invalid("store_every", "must be positive"));
        }
        if stride > 0 && n_len % stride != 0 {
            return Err(Error::NotStepMultiple {
                duration: length,
                step: store_every,
            });
        }
        init.conforms(self.grid())?;
        let mut x = init.clone();
        for k in 0..n_spin {
            x = self.step_indexed(&x, None, k)?;
        }
        let stored = if stride == 0 { 0 } else { n_len / stride };
        let mut states = Vec::with_capacity(stored + 1);
        states.push(x.clone());
        for s in 0..stored {
            for k in 0..stride {
                x = self.step_indexed(&x, None, n_spin + s * stride + k)?;
            }
            states.push(x.clone());
        }
        Ok(Trajectory {
            states,
            dt_between: if stride == 0 { store_every } else { self.params.dt * stride as f64 },
        })
    }

    fn check_base(&self, base: &Trajectory, delta_len: usize) -> Result<usize> {
        check_len(self.grid().size(), delta_len)?;
        if base.states.len() > 1 && (base.dt_between - self.params.dt).abs() > 1e-12 * self.params.dt {
            return Err(Error::TrajectoryMismatch(format!(
                "base spacing {} differs from the model step {}",
                base.dt_between, self.params.dt
            )));
        }
        for s in &base.states {
            check_len(self.grid().size(), s.len())?;
        }
        Ok(base.states.len().saturating_sub(1))
    }

    /// Derivative of the composed steps along `base` applied to `delta`.
    /// `base` holds the state before every step plus the final state.
    pub fn tangent_linear(&self, base: &Trajectory, delta: &ModelState) -> Result<ModelState> {
        let n = self.check_base(base, delta.len())?;
        let mut d = delta.psi.clone();
        for k in 0..n {
            d = self.tl_step(&base.states[k].psi, &d)?;
        }
        Ok(ModelState::new(d, base.last().time))
    }

    /// Transpose of [`Self::tangent_linear`].
    pub fn adjoint(&self, base: &Trajectory, costate: &ModelState) -> Result<ModelState> {
        let n = self.check_base(base, costate.len())?;
        let mut lam = costate.psi.clone();
        for k in (0..n).rev() {
            lam = self.adjoint_step(&base.states[k].psi, &lam)?;
        }
        Ok(ModelState::new(lam, base.t0()))
    }

    /// Tangent-linear of one step linearised about `psi`.
    pub fn tl_step(&self, psi: &[f64], dpsi: &[f64]) -> Result<Vec<f64>> {
        let g = *self.grid();
        check_len(g.size(), psi.len())?;
        check_len(g.size(), dpsi.len())?;
        let mut q = self.background.clone();
        self.add_relative_q(psi, &mut q);
        let mut dq = vec![0.0; g.full_size()];
        self.add_relative_q(dpsi, &mut dq);

        let mut drhs = vec![0.0; g.size()];
        for l in 0..N_LAYERS {
            for j in 0..g.ny {
                for i in 0..g.nx {
                    let d = self.departure(psi, l, j, i, 0)?;
                    let (du, dv) = self.winds(dpsi, l, j, i);
                    // ax = fx − i0 with fx = i − dt·u/dx, likewise for y
                    let dax = -self.params.dt * du / g.dx();
                    let day = if d.clipped { 0.0 } else { -self.params.dt * dv / g.dy() };
                    let (gx, gy) = interpolation_slopes(&g, &q, l, &d);
                    drhs[g.idx(l, j, i)] = interpolate(&g, &dq, l, &d) + gx * dax + gy * day;
                }
            }
        }
        let mut out = vec![0.0; g.size()];
        self.solver.solve(&drhs, &mut out);
        Ok(out)
    }

    /// Adjoint of [`Self::tl_step`].
    pub fn adjoint_step(&self, psi: &[f64], lam: &[f64]) -> Result<Vec<f64>> {
        let g = *self.grid();
        check_len(g.size(), psi.len())?;
        check_len(g.size(), lam.len())?;
        let mut mu = vec![0.0; g.size()];
        self.solver.solve_transpose(lam, &mut mu);

        let mut q = self.background.clone();
        self.add_relative_q(psi, &mut q);
        let mut dq_bar = vec![0.0; g.full_size()];
        let mut out = vec![0.0; g.size()];
        let (nx, ny) = (g.nx, g.ny);
        let dt = self.params.dt;
        for l in 0..N_LAYERS {
            let base = l * g.layer_size();
            for j in 0..ny {
                for i in 0..nx {
                    let m = mu[g.idx(l, j, i)];
                    if m == 0.0 {
                        continue;
                    }
                    let d = self.departure(psi, l, j, i, 0)?;
                    scatter(&g, &mut dq_bar, l, &d, m);
                    let (gx, gy) = interpolation_slopes(&g, &q, l, &d);
                    // dax = −dt·du/dx, du = −(ψN − ψS)/(2dy)
                    let ax_bar = gx * m;
                    let u_bar = -dt / g.dx() * ax_bar;
                    if j + 1 < ny {
                        out[base + (j + 1) * nx + i] += -u_bar / (2.0 * g.dy());
                    }
                    if j > 0 {
                        out[base + (j - 1) * nx + i] += u_bar / (2.0 * g.dy());
                    }
                    if !d.clipped {
                        let ay_bar = gy * m;
                        let v_bar = -dt / g.dy() * ay_bar;
                        out[base + j * nx + (i + 1) % nx] += v_bar / (2.0 * g.dx());
                        out[base + j * nx + (i + nx - 1) % nx] -= v_bar / (2.0 * g.dx());
                    }
                }
            }
        }
        self.relative_q_transpose(&dq_bar, &mut out);
        Ok(out)
    }
}

#[inline]
fn corners(g: &Grid, field: &[f64], l: usize, d: &Departure) -> (f64, f64, f64, f64) {
    let j1 = (d.j0 + 1).min(g.ny + 1);
    (
        field[g.full_idx(l, d.j0, d.i0)],
        field[g.full_idx(l, d.j0, d.i1)],
        field[g.full_idx(l, j1, d.i0)],
        field[g.full_idx(l, j1, d.i1)],
    )
}

#[inline]
fn interpolate(g: &Grid, field: &[f64], l: usize, d: &Departure) -> f64 {
    let (sw, se, nw, ne) = corners(g, field, l, d);
    let (ax, ay) = (d.ax, d.ay);
    (1.0 - ax) * (1.0 - ay) * sw + ax * (1.0 - ay) * se + (1.0 - ax) * ay * nw + ax * ay * ne
}

/// Partial derivatives of the bilinear interpolant in `ax` and `ay`.
#[inline]
fn interpolation_slopes(g: &Grid, field: &[f64], l: usize, d: &Departure) -> (f64, f64) {
    let (sw, se, nw, ne) = corners(g, field, l, d);
    (
        (1.0 - d.ay) * (se - sw) + d.ay * (ne - nw),
        (1.0 - d.ax) * (nw - sw) + d.ax * (ne - se),
    )
}

#[inline]
fn scatter(g: &Grid, field: &mut [f64], l: usize, d: &Departure, value: f64) {
    let j1 = (d.j0 + 1).min(g.ny + 1);
    let (ax, ay) = (d.ax, d.ay);
    field[g.full_idx(l, d.j0, d.i0)] += (1.0 - ax) * (1.0 - ay) * value;
    field[g.full_idx(l, d.j0, d.i1)] += ax * (1.0 - ay) * value;
    field[g.full_idx(l, j1, d.i0)] += (1.0 - ax) * ay * value;
    field[g.full_idx(l, j1, d.i1)] += ax * ay * value;
}
