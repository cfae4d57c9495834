//! Strong-constraint 4D-Var over fixed windows, preconditioned by the
//! background covariance square root, and the cycling driver.

mod lbfgs;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub use lbfgs::{minimize as lbfgs_minimize, LbfgsResult, MinimizerConfig};

use crate::covariance::{CovarianceConfig, CovarianceOperator};
use crate::error::{check_len, Error, Result};
use crate::observations::{ObsBatch, ObsDatabase, ObsOperator};
use crate::qg::{ForcingTerm, ModelState, QgModel, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DaConfig {
    pub covariance: CovarianceConfig,
    pub minimizer: MinimizerConfig,
}

impl DaConfig {
    pub fn validate(&self) -> Result<()> {
        self.covariance.validate()?;
        self.minimizer.validate()
    }
}

/// Something that predicts the model error accumulated over its horizon
/// from the state at the start of that horizon.
pub trait Corrector: Send + Sync {
    fn correction(&self, state: &ModelState) -> Result<Vec<f64>>;
}

/// Which forecast model the assimilation uses inside each window.
#[derive(Clone, Copy)]
pub enum ModelMode<'a> {
    Original,
    Hybrid {
        corrector: &'a dyn Corrector,
        tau: f64,
    },
    /// Exact model error over `tau` computed with the true model.
    Oracle { truth_model: &'a QgModel, tau: f64 },
}

impl std::fmt::Debug for ModelMode<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Original => write!(f, "Original"),
            Self::Hybrid { tau, .. } => write!(f, "Hybrid {{ tau: {tau} }}"),
            Self::Oracle { tau, .. } => write!(f, "Oracle {{ tau: {tau} }}"),
        }
    }
}

impl ModelMode<'_> {
    /// Per-step forcing `η = (δt/τ)·corr(x_b)`, or `None` for the original
    /// model.
    pub fn forcing(&self, model: &QgModel, background: &ModelState) -> Result<Option<ForcingTerm>> {
        let (corr, tau) = match *self {
            Self::Original => return Ok(None),
            Self::Hybrid { corrector, tau } => (corrector.correction(background)?, tau),
            Self::Oracle { truth_model, tau } => {
                let t = truth_model.resolvent(background, tau, None)?;
                let o = model.resolvent(background, tau, None)?;
                let corr = t.psi.iter().zip(&o.psi).map(|(a, b)| a - b).collect();
                (corr, tau)
            }
        };
        check_len(model.grid().size(), corr.len())?;
        model.steps_for(tau)?;
        let scale = model.dt() / tau;
        ForcingTerm::new(corr.into_iter().map(|c| scale * c).collect()).map(Some)
    }
}

/// One window's cost function in control space, `x = x_b + S χ`.
pub struct WindowProblem<'a> {
    model: &'a QgModel,
    cov: &'a CovarianceOperator,
    forcing: Option<&'a ForcingTerm>,
    background: &'a ModelState,
    /// (step index, H, observed values, error variance), sorted by step.
    obs: Vec<(usize, ObsOperator, &'a [f64], f64)>,
    n_steps: usize,
}

impl<'a> WindowProblem<'a> {
    pub fn new(
        model: &'a QgModel,
        cov: &'a CovarianceOperator,
        forcing: Option<&'a ForcingTerm>,
        background: &'a ModelState,
        batches: &'a [ObsBatch],
    ) -> Result<Self> {
        background.conforms(model.grid())?;
        check_len(model.grid().size(), cov.dim())?;
        if !background.is_finite() {
            return Err(Error::BlowUp { step: 0 });
        }
        let mut obs = Vec::with_capacity(batches.len());
        for b in batches {
            let lead = b.time - background.time;
            if lead < 0.0 {
                return Err(Error::TrajectoryMismatch(format!(
                    "observation time {} precedes the window start {}",
                    b.time, background.time
                )));
            }
            let step = model.steps_for(lead)?;
            check_len(b.locations.len(), b.values.len())?;
            obs.push((step, ObsOperator::new(model.grid(), &b.locations)?, &b.values[..], b.obs_var));
        }
        obs.sort_by_key(|o| o.0);
        let n_steps = obs.last().map_or(0, |o| o.0);
        Ok(Self {
            model,
            cov,
            forcing,
            background,
            obs,
            n_steps,
        })
    }

    pub fn dim(&self) -> usize {
        self.cov.dim()
    }

    /// Initial state for control vector `chi`.
    pub fn state(&self, chi: &[f64]) -> Result<ModelState> {
        let dx = self.cov.apply_sqrt(chi)?;
        Ok(self.background.axpy(1.0, &dx))
    }

    fn trajectory(&self, chi: &[f64]) -> Result<Trajectory> {
        let x0 = self.state(chi)?;
        self.model.integrate_steps(&x0, self.n_steps, self.forcing)
    }

    /// Observation term `½ Σ ‖y − H M(x)‖²_{R⁻¹}` for initial state `x`.
    pub fn observation_cost(&self, x: &ModelState) -> Result<f64> {
        let traj = self.model.integrate_steps(x, self.n_steps, self.forcing)?;
        let mut jo = 0.0;
        for (step, h, y, var) in &self.obs {
            let hx = h.apply(&traj.states[*step].psi)?;
            jo += hx.iter().zip(*y).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / (2.0 * var);
        }
        Ok(jo)
    }

    pub fn cost(&self, chi: &[f64]) -> Result<f64> {
        check_len(self.dim(), chi.len())?;
        let jb = 0.5 * chi.iter().map(|c| c * c).sum::<f64>();
        Ok(jb + self.observation_cost(&self.state(chi)?)?)
    }

    /// Cost and its gradient with respect to `chi`.
    pub fn cost_and_gradient(&self, chi: &[f64]) -> Result<(f64, Vec<f64>)> {
        check_len(self.dim(), chi.len())?;
        let traj = self.trajectory(chi)?;
        let n = self.model.grid().size();
        let mut j = 0.5 * chi.iter().map(|c| c * c).sum::<f64>();
        let mut lam = vec![0.0; n];
        let mut next = self.obs.len();
        for step in (0..=self.n_steps).rev() {
            while next > 0 && self.obs[next - 1].0 == step {
                next -= 1;
                let (_, h, y, var) = &self.obs[next];
                let hx = h.apply(&traj.states[step].psi)?;
                let r: Vec<f64> = hx.iter().zip(*y).map(|(a, b)| (a - b) / var).collect();
                j += 0.5 * hx.iter().zip(*y).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / var;
                h.apply_transpose_add(&r, &mut lam)?;
            }
            if step > 0 {
                lam = self.model.adjoint_step(&traj.states[step - 1].psi, &lam)?;
            }
        }
        let mut grad = self.cov.apply_sqrt_transpose(&lam)?;
        for (g, c) in grad.iter_mut().zip(chi) {
            *g += c;
        }
        Ok((j, grad))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CycleRecord {
    pub window: usize,
    pub background: ModelState,
    pub analysis: ModelState,
    pub background_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Set when the line search failed and the best iterate was kept.
    pub line_search_failed: bool,
    /// `x_a − x_b`; for windows after the first this is the next analysis
    /// minus the forecast of the previous one.
    pub increment: Vec<f64>,
}

/// Minimises one window from `background`, returning the analysis and the
/// window diagnostics (with `window` set to 0).
pub fn minimize(
    model: &QgModel,
    cov: &CovarianceOperator,
    forcing: Option<&ForcingTerm>,
    background: &ModelState,
    batches: &[ObsBatch],
    config: &MinimizerConfig,
) -> Result<CycleRecord> {
    let problem = WindowProblem::new(model, cov, forcing, background, batches)?;
    let res = lbfgs::minimize(|chi| problem.cost_and_gradient(chi), vec![0.0; problem.dim()], config)?;
    if res.line_search_failed {
        log::warn!(
            "line search failed after {} iterations; keeping the best iterate",
            res.iterations
        );
    }
    let analysis = problem.state(&res.x)?;
    let increment = analysis.psi.iter().zip(&background.psi).map(|(a, b)| a - b).collect();
    Ok(CycleRecord {
        window: 0,
        background: background.clone(),
        analysis,
        background_cost: res.f0,
        final_cost: res.f,
        iterations: res.iterations,
        converged: res.converged,
        line_search_failed: res.line_search_failed,
        increment,
    })
}

#[derive(Debug, Clone)]
pub struct CycleOutput {
    pub records: Vec<CycleRecord>,
    /// Forecast of the last analysis to the end of the last window.
    pub final_forecast: ModelState,
}

impl CycleOutput {
    /// Analyses at the window starts.
    pub fn analyses(&self) -> Result<Trajectory> {
        let states: Vec<ModelState> = self.records.iter().map(|r| r.analysis.clone()).collect();
        let dt = if states.len() > 1 {
            states[1].time - states[0].time
        } else {
            1.0
        };
        Trajectory::new(states, dt)
    }
}

/// Cycled assimilation of the first `n_windows` windows of `obs`, starting
/// from background `x_b_init` at the first window start.
pub fn cycle(
    obs: &ObsDatabase,
    model: &QgModel,
    mode: ModelMode<'_>,
    config: &DaConfig,
    n_windows: usize,
    x_b_init: &ModelState,
) -> Result<CycleOutput> {
    config.validate()?;
    if n_windows > obs.n_windows() {
        return Err(Error::Insufficient(format!(
            "{n_windows} windows requested, the observation database holds {}",
            obs.n_windows()
        )));
    }
    if (x_b_init.time - obs.window_start).abs() > 1e-9 * obs.window_length {
        return Err(Error::TrajectoryMismatch(format!(
            "initial background at t = {} but the first window starts at {}",
            x_b_init.time, obs.window_start
        )));
    }
    model.steps_for(obs.window_length)?;
    let cov = CovarianceOperator::new(*model.grid(), config.covariance)?;
    let mut records = Vec::with_capacity(n_windows);
    let mut xb = x_b_init.clone();
    for w in 0..n_windows {
        let wrap = |e: Error| Error::Window {
            window: w,
            source: Box::new(e),
        };
        let forcing = mode.forcing(model, &xb).map_err(wrap)?;
        let mut rec = minimize(model, &cov, forcing.as_ref(), &xb, obs.window(w), &config.minimizer)
            .map_err(wrap)?;
        rec.window = w;
        let fc = model
            .resolvent(&rec.analysis, obs.window_length, forcing.as_ref())
            .map_err(wrap)?;
        log::debug!(
            "window {w}: cost {:.4} -> {:.4} in {} iterations",
            rec.background_cost,
            rec.final_cost,
            rec.iterations
        );
        records.push(rec);
        xb = fc;
    }
    Ok(CycleOutput {
        records,
        final_forecast: xb,
    })
}

/// Cold-start background: `truth + S ξ` with `ξ ~ N(0, I)`.
pub fn perturbed_background(truth: &ModelState, cov: &CovarianceOperator, seed: u64) -> Result<ModelState> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xi: Vec<f64> = (0..cov.dim()).map(|_| StandardNormal.sample(&mut rng)).collect();
    check_len(cov.dim(), truth.len())?;
    Ok(truth.axpy(1.0, &cov.apply_sqrt(&xi)?))
}

#[cfg(test)]
mod tests;
