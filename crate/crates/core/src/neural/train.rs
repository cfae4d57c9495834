use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::Network;
use super::spec::NetworkSpec;
use crate::dataset::TrainingDatabase;
use crate::error::{check_len, invalid, Error, Result};
use crate::qg::ModelState;
use crate::var4d::Corrector;

/// Global scalar statistics of inputs and outputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub input_mean: f64,
    pub input_std: f64,
    pub output_mean: f64,
    pub output_std: f64,
}

impl Normalizer {
    pub fn identity() -> Self {
        Self {
            input_mean: 0.0,
            input_std: 1.0,
            output_mean: 0.0,
            output_std: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = [self.input_mean, self.input_std, self.output_mean, self.output_std]
            .iter()
            .all(|v| v.is_finite());
        if !ok || !(self.input_std > 0.0 && self.output_std > 0.0) {
            return Err(invalid("normalizer", "statistics must be finite with positive std"));
        }
        Ok(())
    }

    pub fn normalize_input(&self, x: &[f64]) -> Vec<f64> {
        x.iter().map(|v| (v - self.input_mean) / self.input_std).collect()
    }

    pub fn normalize_output(&self, y: &[f64]) -> Vec<f64> {
        y.iter().map(|v| (v - self.output_mean) / self.output_std).collect()
    }

    pub fn denormalize_output(&self, y: &[f64]) -> Vec<f64> {
        y.iter().map(|v| v * self.output_std + self.output_mean).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs_phase1: usize,
    pub lr_phase1: f64,
    pub epochs_phase2: usize,
    pub lr_phase2: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// `None` selects full batches up to 128 samples and 32 beyond.
    pub batch_size: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs_phase1: 1000,
            lr_phase1: 1e-3,
            epochs_phase2: 1000,
            lr_phase2: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
            batch_size: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs_phase1 + self.epochs_phase2 == 0 {
            return Err(invalid("epochs", "at least one epoch is required"));
        }
        if !(self.lr_phase1 > 0.0 && self.lr_phase2 > 0.0) {
            return Err(invalid("learning rate", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.epsilon > 0.0) {
            return Err(invalid("adam", "need 0 <= beta < 1 and epsilon > 0"));
        }
        if self.batch_size == Some(0) {
            return Err(invalid("batch_size", "must be positive"));
        }
        Ok(())
    }

    pub fn batch_size_for(&self, n: usize) -> usize {
        self.batch_size.unwrap_or(if n <= 128 { n } else { 32 }).min(n).max(1)
    }
}

/// First and second moment estimates of Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) -> Result<()> {
    check_len(params.len(), grads.len())?;
    check_len(params.len(), state.m.len())?;
    state.t += 1;
    let c1 = 1.0 - beta1.powi(state.t as i32);
    let c2 = 1.0 - beta2.powi(state.t as i32);
    for k in 0..params.len() {
        let g = grads[k];
        state.m[k] = beta1 * state.m[k] + (1.0 - beta1) * g;
        state.v[k] = beta2 * state.v[k] + (1.0 - beta2) * g * g;
        let mh = state.m[k] / c1;
        let vh = state.v[k] / c2;
        params[k] -= lr * mh / (vh.sqrt() + eps);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub train_mse: f64,
    pub valid_mse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedNetwork {
    pub spec: NetworkSpec,
    pub params: Vec<f64>,
    pub normalizer: Normalizer,
    pub seed: u64,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_valid_mse: f64,
    network: Network,
}

impl TrainedNetwork {
    pub fn new(spec: NetworkSpec, params: Vec<f64>, normalizer: Normalizer, seed: u64) -> Result<Self> {
        let network = Network::new(&spec)?;
        check_len(network.param_count(), params.len())?;
        normalizer.validate()?;
        Ok(Self {
            spec,
            params,
            normalizer,
            seed,
            history: Vec::new(),
            best_epoch: 0,
            best_valid_mse: f64::NAN,
            network,
        })
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    /// Network output mapped back to physical units.
    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        let x = self.normalizer.normalize_input(input);
        let y = self.network.forward(&self.params, &x)?;
        Ok(self.normalizer.denormalize_output(&y))
    }

    pub fn predict_correction(&self, state: &ModelState) -> Result<Vec<f64>> {
        self.predict(&state.psi)
    }
}

impl Corrector for TrainedNetwork {
    fn correction(&self, state: &ModelState) -> Result<Vec<f64>> {
        self.predict_correction(state)
    }
}

/// Two-phase Adam training keeping the parameters with the lowest
/// validation MSE (in normalized units).
pub fn train(
    spec: &NetworkSpec,
    train_db: &TrainingDatabase,
    valid_db: &TrainingDatabase,
    cfg: &TrainConfig,
) -> Result<TrainedNetwork> {
    cfg.validate()?;
    let net = Network::new(spec)?;
    if train_db.pairs.is_empty() || valid_db.pairs.is_empty() {
        return Err(Error::Insufficient("training and validation sets must be nonempty".into()));
    }
    let norm = match train_db.normalizer {
        Some(n) => n,
        None => train_db.compute_normalizer()?,
    };
    let prep = |db: &TrainingDatabase| -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        let mut xs = Vec::with_capacity(db.pairs.len());
        let mut ts = Vec::with_capacity(db.pairs.len());
        for p in &db.pairs {
            check_len(net.input_size(), p.input.len())?;
            check_len(net.output_size(), p.target.len())?;
            xs.push(norm.normalize_input(&p.input));
            ts.push(norm.normalize_output(&p.target));
        }
        Ok((xs, ts))
    };
    let (xs, ts) = prep(train_db)?;
    let (vx, vt) = prep(valid_db)?;
    let vxr: Vec<&[f64]> = vx.iter().map(|v| &v[..]).collect();
    let vtr: Vec<&[f64]> = vt.iter().map(|v| &v[..]).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = net.init_params(cfg.seed);
    let mut adam = AdamState::new(params.len());
    let batch = cfg.batch_size_for(xs.len());
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs_phase1 + cfg.epochs_phase2);
    let mut best = (f64::INFINITY, 0usize, params.clone());
    let total = cfg.epochs_phase1 + cfg.epochs_phase2;
    for epoch in 0..total {
        let lr = if epoch < cfg.epochs_phase1 {
            cfg.lr_phase1
        } else {
            cfg.lr_phase2
        };
        if batch < xs.len() {
            order.shuffle(&mut rng);
        }
        let mut sum = 0.0;
        for chunk in order.chunks(batch) {
            let bx: Vec<&[f64]> = chunk.iter().map(|&k| &xs[k][..]).collect();
            let bt: Vec<&[f64]> = chunk.iter().map(|&k| &ts[k][..]).collect();
            let (loss, grads) = net.loss_and_grads(&params, &bx, &bt)?;
            if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence { epoch });
            }
            sum += loss * chunk.len() as f64;
            adam_step(&mut params, &grads, &mut adam, lr, cfg.beta1, cfg.beta2, cfg.epsilon)?;
        }
        let valid = net.loss(&params, &vxr, &vtr)?;
        if !valid.is_finite() || params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Divergence { epoch });
        }
        history.push(EpochRecord {
            train_mse: sum / xs.len() as f64,
            valid_mse: valid,
        });
        if valid < best.0 {
            best = (valid, epoch, params.clone());
        }
    }
    let mut out = TrainedNetwork::new(spec.clone(), best.2, norm, cfg.seed)?;
    out.history = history;
    out.best_epoch = best.1;
    out.best_valid_mse = best.0;
    Ok(out)
}
