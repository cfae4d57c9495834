//! Simulated soundings: bilinear interpolation of ψ at random locations
//! plus Gaussian noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, invalid, Error, Result};
use crate::qg::{Grid, ModelState, Trajectory, N_LAYERS};
use crate::units;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObsConfig {
    pub n_per_batch: usize,
    pub batch_interval_hours: f64,
    pub first_batch_offset_hours: f64,
    pub window_days: f64,
    pub obs_var: f64,
    /// When false the values are exact `H(truth)` while `obs_var` is still
    /// reported as the assumed error variance.
    pub add_noise: bool,
    pub seed: u64,
}

impl Default for ObsConfig {
    fn default() -> Self {
        Self {
            n_per_batch: 50,
            batch_interval_hours: 2.0,
            first_batch_offset_hours: 1.0,
            window_days: 1.0,
            obs_var: 0.1,
            add_noise: true,
            seed: 0,
        }
    }
}

impl ObsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_per_batch == 0 {
            return Err(invalid("n_per_batch", "must be at least 1"));
        }
        if !(self.obs_var > 0.0 && self.obs_var.is_finite()) {
            return Err(invalid("obs_var", "must be positive"));
        }
        if !(self.batch_interval_hours > 0.0) || !(self.window_days > 0.0) {
            return Err(invalid("batch_interval_hours", "intervals must be positive"));
        }
        let off = self.first_batch_offset_hours;
        if !(off > 0.0 && off <= self.batch_interval_hours) {
            return Err(invalid(
                "first_batch_offset_hours",
                "must lie in (0, batch_interval_hours]",
            ));
        }
        self.batches_per_window()?;
        Ok(())
    }

    /// Offsets of the batches from the window start, in model time.
    pub fn batch_offsets(&self) -> Vec<f64> {
        let n = ((self.window_days * 24.0 - self.first_batch_offset_hours)
            / self.batch_interval_hours
            + 1e-9)
            .floor() as usize
            + 1;
        (0..n)
            .map(|k| {
                units::hours(self.first_batch_offset_hours + k as f64 * self.batch_interval_hours)
            })
            .collect()
    }

    pub fn batches_per_window(&self) -> Result<usize> {
        let n = self.batch_offsets().len();
        if n == 0 {
            return Err(invalid("window_days", "window holds no batch"));
        }
        Ok(n)
    }

    pub fn window_length(&self) -> f64 {
        units::days(self.window_days)
    }
}

/// Observation site. `x` and `y` are in nondimensional model coordinates,
/// with `0 <= x < lx` and `0 <= y <= ly` (the walls sit at 0 and ly).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObsLocation {
    pub layer: usize,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObsBatch {
    pub time: f64,
    pub locations: Vec<ObsLocation>,
    pub values: Vec<f64>,
    pub obs_var: f64,
}

impl ObsBatch {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObsDatabase {
    pub window_start: f64,
    pub window_length: f64,
    pub batches_per_window: usize,
    pub batches: Vec<ObsBatch>,
    pub truth_id: String,
    pub seed: u64,
}

impl ObsDatabase {
    pub fn n_windows(&self) -> usize {
        self.batches.len() / self.batches_per_window
    }

    pub fn window(&self, k: usize) -> &[ObsBatch] {
        let n = self.batches_per_window;
        &self.batches[k * n..(k + 1) * n]
    }

    pub fn window_start_time(&self, k: usize) -> f64 {
        self.window_start + k as f64 * self.window_length
    }

    pub fn validate(&self) -> Result<()> {
        if self.batches_per_window == 0 || self.batches.len() % self.batches_per_window != 0 {
            return Err(Error::Format(format!(
                "{} batches do not form whole windows of {}",
                self.batches.len(),
                self.batches_per_window
            )));
        }
        let tol = 1e-9 * self.window_length.max(1.0);
        for k in 0..self.n_windows() {
            let t0 = self.window_start_time(k);
            let mut last = t0;
            for b in self.window(k) {
                if !(b.time > last && b.time <= t0 + self.window_length + tol) {
                    return Err(Error::Format(format!(
                        "batch at t = {} lies outside window {k}",
                        b.time
                    )));
                }
                last = b.time;
            }
        }
        Ok(())
    }
}

/// Precomputed bilinear stencils for one set of locations.
#[derive(Debug, Clone)]
pub struct ObsOperator {
    dim: usize,
    nodes: Vec<[(usize, f64); 4]>,
}

impl ObsOperator {
    pub fn new(grid: &Grid, locations: &[ObsLocation]) -> Result<Self> {
        let (dx, dy) = (grid.dx(), grid.dy());
        let mut nodes = Vec::with_capacity(locations.len());
        for loc in locations {
            let inside = loc.layer < N_LAYERS
                && loc.x.is_finite()
                && loc.y.is_finite()
                && loc.x >= 0.0
                && loc.x < grid.lx
                && loc.y >= 0.0
                && loc.y <= grid.ly;
            if !inside {
                return Err(Error::OutOfDomain {
                    layer: loc.layer,
                    x: loc.x,
                    y: loc.y,
                });
            }
            let fx = loc.x / dx;
            let fy = loc.y / dy;
            let i0 = (fx.floor() as usize).min(grid.nx - 1);
            let jj0 = (fy.floor() as usize).min(grid.ny);
            let ax = fx - i0 as f64;
            let ay = fy - jj0 as f64;
            let i1 = (i0 + 1) % grid.nx;
            // full-row index jj maps to state row jj-1; walls carry zero weight
            let node = |jj: usize, i: usize, w: f64| {
                if jj == 0 || jj == grid.ny + 1 {
                    (0, 0.0)
                } else {
                    (grid.idx(loc.layer, jj - 1, i), w)
                }
            };
            nodes.push([
                node(jj0, i0, (1.0 - ax) * (1.0 - ay)),
                node(jj0, i1, ax * (1.0 - ay)),
                node(jj0 + 1, i0, (1.0 - ax) * ay),
                node(jj0 + 1, i1, ax * ay),
            ]);
        }
        Ok(Self {
            dim: grid.size(),
            nodes,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn apply(&self, psi: &[f64]) -> Result<Vec<f64>> {
        check_len(self.dim, psi.len())?;
        Ok(self
            .nodes
            .iter()
            .map(|st| st.iter().map(|&(k, w)| w * psi[k]).sum())
            .collect())
    }

    /// Accumulates `Hᵀ r` into `out`.
    pub fn apply_transpose_add(&self, residuals: &[f64], out: &mut [f64]) -> Result<()> {
        check_len(self.nodes.len(), residuals.len())?;
        check_len(self.dim, out.len())?;
        for (st, &r) in self.nodes.iter().zip(residuals) {
            for &(k, w) in st {
                out[k] += w * r;
            }
        }
        Ok(())
    }
}

/// Applies `H` to `state`.
pub fn interpolate(grid: &Grid, state: &ModelState, locations: &[ObsLocation]) -> Result<Vec<f64>> {
    state.conforms(grid)?;
    ObsOperator::new(grid, locations)?.apply(&state.psi)
}

/// Applies `Hᵀ` to `residuals`.
pub fn h_transpose(grid: &Grid, locations: &[ObsLocation], residuals: &[f64]) -> Result<Vec<f64>> {
    let op = ObsOperator::new(grid, locations)?;
    let mut out = vec![0.0; grid.size()];
    op.apply_transpose_add(residuals, &mut out)?;
    Ok(out)
}

/// Draws observation batches for every complete window covered by `truth`.
/// Windows start at the first truth state.
pub fn generate_obs(
    grid: &Grid,
    truth: &Trajectory,
    config: &ObsConfig,
    truth_id: &str,
) -> Result<ObsDatabase> {
    config.validate()?;
    truth.validate()?;
    let offsets = config.batch_offsets();
    let length = config.window_length();
    for &o in &offsets {
        units::whole_steps(o, truth.dt_between)?;
    }
    let t0 = truth.t0();
    let span = truth.dt_between * (truth.len() - 1) as f64;
    let n_windows = ((span + 1e-9 * length) / length).floor() as usize;
    if n_windows == 0 {
        return Err(Error::Insufficient(format!(
            "truth spans {:.3} days, less than one window",
            units::to_days(span)
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let sd = config.obs_var.sqrt();
    let mut batches = Vec::with_capacity(n_windows * offsets.len());
    for w in 0..n_windows {
        let start = t0 + w as f64 * length;
        for &o in &offsets {
            let time = start + o;
            let idx = truth
                .index_at(time)
                .ok_or_else(|| Error::TrajectoryMismatch(format!("no truth state at t = {time}")))?;
            let locations: Vec<ObsLocation> = (0..config.n_per_batch)
                .map(|_| draw_location(grid, &mut rng))
                .collect();
            let mut values = interpolate(grid, &truth.states[idx], &locations)?;
            if config.add_noise {
                for v in &mut values {
                    let e: f64 = rng.sample(StandardNormal);
                    *v += sd * e;
                }
            }
            batches.push(ObsBatch {
                time: truth.states[idx].time,
                locations,
                values,
                obs_var: config.obs_var,
            });
        }
    }
    Ok(ObsDatabase {
        window_start: t0,
        window_length: length,
        batches_per_window: offsets.len(),
        batches,
        truth_id: truth_id.to_string(),
        seed: config.seed,
    })
}

fn draw_location(grid: &Grid, rng: &mut ChaCha8Rng) -> ObsLocation {
    let layer = rng.random_range(0..N_LAYERS);
    let x = rng.random_range(0.0..grid.lx);
    let y = rng.random_range(0.0..=grid.ly);
    ObsLocation { layer, x, y }
}
