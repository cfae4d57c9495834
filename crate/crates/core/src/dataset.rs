//! Training databases of (state, model-error proxy) pairs.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::neural::Normalizer;
use crate::qg::{QgModel, Trajectory};
use crate::units;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Analysis,
    Truth,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    /// Sampling period in model time.
    pub tau: f64,
    pub n_samples: usize,
    pub source: Source,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplePair {
    pub input: Vec<f64>,
    pub target: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingDatabase {
    pub pairs: Vec<SamplePair>,
    pub config: DatasetConfig,
    pub source_id: String,
    pub normalizer: Option<Normalizer>,
}

/// Indices of the stored samples kept at stride `stride`: `0, n, 2n, …`.
pub fn subsample_indices(n_stored: usize, stride: usize) -> Vec<usize> {
    (0..n_stored).step_by(stride.max(1)).collect()
}

/// Largest `N_t` a trajectory of `len` states supports at `stride`.
pub fn max_samples(len: usize, stride: usize) -> usize {
    if stride == 0 {
        0
    } else {
        len.saturating_sub(1) / stride
    }
}

/// Pairs `(x_{nk}, x_{n(k+1)} − M^o_τ(x_{nk}))` for `k = 0 … N_t − 1`, with
/// `n = τ / spacing`.
pub fn build_database(
    traj: &Trajectory,
    original: &QgModel,
    config: &DatasetConfig,
    source_id: &str,
) -> Result<TrainingDatabase> {
    traj.validate()?;
    if !(config.tau > 0.0) || config.n_samples == 0 {
        return Err(invalid("dataset", "tau and n_samples must be positive"));
    }
    if config.source == Source::Analysis && config.tau < traj.dt_between * (1.0 - 1e-9) {
        return Err(invalid(
            "tau",
            "analysis databases cannot sample below the window length",
        ));
    }
    let stride = units::whole_steps(config.tau, traj.dt_between)?;
    original.steps_for(config.tau)?;
    let max = max_samples(traj.len(), stride);
    if config.n_samples > max {
        return Err(Error::Insufficient(format!(
            "{} samples requested at τ = {:.4} days; the trajectory supports at most {max}",
            config.n_samples,
            units::to_days(config.tau)
        )));
    }
    let mut pairs = Vec::with_capacity(config.n_samples);
    for k in 0..config.n_samples {
        let x = &traj.states[k * stride];
        let next = &traj.states[(k + 1) * stride];
        let fc = original.resolvent(x, config.tau, None)?;
        pairs.push(SamplePair {
            input: x.psi.clone(),
            target: next.psi.iter().zip(&fc.psi).map(|(a, b)| a - b).collect(),
        });
    }
    Ok(TrainingDatabase {
        pairs,
        config: *config,
        source_id: source_id.to_string(),
        normalizer: None,
    })
}

/// Train / validation / test split by position: first, second, rest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Roles<T> {
    pub train: T,
    pub valid: T,
    pub test: Vec<T>,
}

pub fn assign_roles<T: Clone>(ids: &[T]) -> Result<Roles<T>> {
    if ids.len() < 3 {
        return Err(Error::Insufficient(format!(
            "{} trajectories; roles need at least 3",
            ids.len()
        )));
    }
    Ok(Roles {
        train: ids[0].clone(),
        valid: ids[1].clone(),
        test: ids[2..].to_vec(),
    })
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl TrainingDatabase {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Scalar mean and std over all input entries and over all targets.
    pub fn compute_normalizer(&self) -> Result<Normalizer> {
        if self.pairs.is_empty() {
            return Err(Error::Insufficient("empty database".into()));
        }
        let (im, is) = mean_std(self.pairs.iter().flat_map(|p| p.input.iter().copied()));
        let (om, os) = mean_std(self.pairs.iter().flat_map(|p| p.target.iter().copied()));
        if !(is > 0.0) {
            return Err(Error::ZeroVariance("database inputs"));
        }
        if !(os > 0.0) {
            return Err(Error::ZeroVariance("database targets"));
        }
        Ok(Normalizer {
            input_mean: im,
            input_std: is,
            output_mean: om,
            output_std: os,
        })
    }

    /// Computes and attaches the normalizer.
    pub fn with_normalizer(mut self) -> Result<Self> {
        self.normalizer = Some(self.compute_normalizer()?);
        Ok(self)
    }

    /// Copy with inputs and targets mapped through `norm`.
    pub fn normalized(&self, norm: &Normalizer) -> Self {
        Self {
            pairs: self
                .pairs
                .iter()
                .map(|p| SamplePair {
                    input: norm.normalize_input(&p.input),
                    target: norm.normalize_output(&p.target),
                })
                .collect(),
            config: self.config,
            source_id: self.source_id.clone(),
            normalizer: None,
        }
    }

    /// RMS of all target entries.
    pub fn target_rms(&self) -> f64 {
        let n = self.pairs.iter().map(|p| p.target.len()).sum::<usize>() as f64;
        (self.pairs.iter().flat_map(|p| p.target.iter()).map(|v| v * v).sum::<f64>() / n).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qg::JetInit;
    use crate::units::{days, hours};

    fn short(model: &QgModel, n_days: f64, every: f64) -> Trajectory {
        let g = *model.grid();
        model
            .generate_trajectory(&JetInit::default().state(&g), days(2.0), days(n_days), every)
            .unwrap()
    }

    #[test]
    fn subsampling_sizes() {
        assert_eq!(subsample_indices(9, 1).len(), 9);
        assert_eq!(subsample_indices(9, 2), vec![0, 2, 4, 6, 8]);
        assert_eq!(subsample_indices(9, 4), vec![0, 4, 8]);
        assert_eq!(max_samples(10, 1), 9);
        assert_eq!(max_samples(11, 2), 5);
        assert_eq!(max_samples(13, 4), 3);
    }

    #[test]
    fn perfect_model_has_zero_targets() {
        let m = QgModel::reference();
        let traj = short(&m, 3.0, hours(6.0));
        let cfg = DatasetConfig {
            tau: days(1.0),
            n_samples: 2,
            source: Source::Truth,
        };
        let db = build_database(&traj, &m, &cfg, "t").unwrap();
        assert_eq!(db.len(), 2);
        assert_eq!(db.pairs[1].input, traj.states[4].psi);
        assert!(db.pairs.iter().all(|p| p.target.iter().all(|&v| v == 0.0)));
        assert!(matches!(db.compute_normalizer(), Err(Error::ZeroVariance(_))));
    }

    #[test]
    fn too_short_reports_max() {
        let m = QgModel::reference();
        let traj = short(&m, 2.0, days(1.0));
        let cfg = DatasetConfig {
            tau: days(1.0),
            n_samples: 3,
            source: Source::Analysis,
        };
        match build_database(&traj, &m, &cfg, "t") {
            Err(Error::Insufficient(msg)) => assert!(msg.contains("at most 2"), "{msg}"),
            other => panic!("{other:?}"),
        }
        let sub = DatasetConfig {
            tau: hours(6.0),
            n_samples: 1,
            source: Source::Analysis,
        };
        assert!(build_database(&traj, &m, &sub, "t").is_err());
    }

    #[test]
    fn roles_by_position() {
        let ids: Vec<u32> = (0..18).collect();
        let r = assign_roles(&ids).unwrap();
        assert_eq!((r.train, r.valid, r.test.len()), (0, 1, 16));
        let r = assign_roles(&["c", "a", "b"]).unwrap();
        assert_eq!((r.train, r.valid, r.test), ("c", "a", vec!["b"]));
        assert!(assign_roles(&[1, 2]).is_err());
    }

    #[test]
    fn normalizer_arithmetic() {
        let cfg = DatasetConfig {
            tau: 1.0,
            n_samples: 2,
            source: Source::Truth,
        };
        let db = TrainingDatabase {
            pairs: vec![
                SamplePair {
                    input: vec![0.0],
                    target: vec![1.0],
                },
                SamplePair {
                    input: vec![2.0],
                    target: vec![4.0],
                },
            ],
            config: cfg,
            source_id: "x".into(),
            normalizer: None,
        };
        let n = db.compute_normalizer().unwrap();
        assert_eq!((n.input_mean, n.input_std), (1.0, 1.0));
        assert_eq!((n.output_mean, n.output_std), (2.5, 1.5));
        let again = db.normalized(&n).compute_normalizer().unwrap();
        assert!(again.input_mean.abs() < 1e-15 && (again.input_std - 1.0).abs() < 1e-15);
        assert!(again.output_mean.abs() < 1e-15 && (again.output_std - 1.0).abs() < 1e-15);

        let flat = TrainingDatabase {
            pairs: vec![SamplePair {
                input: vec![3.0, 3.0],
                target: vec![0.0, 1.0],
            }],
            ..db
        };
        assert!(matches!(flat.compute_normalizer(), Err(Error::ZeroVariance(_))));
    }
}
