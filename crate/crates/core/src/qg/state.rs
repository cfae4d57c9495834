use serde::{Deserialize, Serialize};

use super::grid::Grid;
use crate::error::{check_len, Error, Result};

/// Stream function on both layers, laid out `(layer, y, x)` row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub psi: Vec<f64>,
    pub time: f64,
}

impl ModelState {
    pub fn new(psi: Vec<f64>, time: f64) -> Self {
        Self { psi, time }
    }

    pub fn zeros(grid: &Grid) -> Self {
        Self::new(vec![0.0; grid.size()], 0.0)
    }

    pub fn len(&self) -> usize {
        self.psi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.psi.is_empty()
    }

    pub fn conforms(&self, grid: &Grid) -> Result<()> {
        check_len(grid.size(), self.psi.len())
    }

    pub fn is_finite(&self) -> bool {
        self.psi.iter().all(|v| v.is_finite())
    }

    /// `self + scale * other`, keeping `self.time`.
    pub fn axpy(&self, scale: f64, other: &[f64]) -> Self {
        let psi = self
            .psi
            .iter()
            .zip(other)
            .map(|(a, b)| a + scale * b)
            .collect();
        Self::new(psi, self.time)
    }
}

/// Potential vorticity including the two wall rows of each layer.
#[derive(Debug, Clone, PartialEq)]
pub struct VorticityField {
    pub q: Vec<f64>,
    pub time: f64,
}

/// Constant state-space increment added after every model step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForcingTerm {
    pub eta: Vec<f64>,
}

impl ForcingTerm {
    pub fn new(eta: Vec<f64>) -> Result<Self> {
        if eta.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "forcing".into(),
                reason: "non-finite entries".into(),
            });
        }
        Ok(Self { eta })
    }

    pub fn zeros(grid: &Grid) -> Self {
        Self {
            eta: vec![0.0; grid.size()],
        }
    }
}

/// Uniformly spaced sequence of states.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<ModelState>,
    pub dt_between: f64,
}

impl Trajectory {
    pub fn new(states: Vec<ModelState>, dt_between: f64) -> Result<Self> {
        let traj = Self { states, dt_between };
        traj.validate()?;
        Ok(traj)
    }

    pub fn validate(&self) -> Result<()> {
        if self.states.is_empty() {
            return Err(Error::TrajectoryMismatch("empty trajectory".into()));
        }
        if self.states.len() > 1 && !(self.dt_between > 0.0) {
            return Err(Error::TrajectoryMismatch("non-positive spacing".into()));
        }
        let n = self.states[0].len();
        let t0 = self.states[0].time;
        for (k, s) in self.states.iter().enumerate() {
            check_len(n, s.len())?;
            let expect = t0 + k as f64 * self.dt_between;
            if (s.time - expect).abs() > 1e-9 * (1.0 + expect.abs()) {
                return Err(Error::TrajectoryMismatch(format!(
                    "state {k} at time {} but uniform spacing expects {expect}",
                    s.time
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn t0(&self) -> f64 {
        self.states[0].time
    }

    pub fn last(&self) -> &ModelState {
        self.states.last().expect("trajectory is never empty")
    }

    /// Every `stride`-th state starting from the first.
    pub fn subsample(&self, stride: usize) -> Result<Self> {
        if stride == 0 {
            return Err(Error::InvalidParameter {
                name: "stride".into(),
                reason: "must be positive".into(),
            });
        }
        Self::new(
            self.states.iter().step_by(stride).cloned().collect(),
            self.dt_between * stride as f64,
        )
    }

    /// Index of the stored state at `time`, if it falls on the grid.
    pub fn index_at(&self, time: f64) -> Option<usize> {
        let rel = (time - self.t0()) / self.dt_between;
        let k = rel.round();
        if k < 0.0 || (rel - k).abs() > 1e-6 {
            return None;
        }
        let k = k as usize;
        (k < self.states.len()).then_some(k)
    }
}
