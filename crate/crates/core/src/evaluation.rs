//! Metrics and experiment drivers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::dataset::TrainingDatabase;
use crate::error::{check_len, invalid, Error, Result};
use crate::par;
use crate::neural::{train, NetworkSpec, TrainConfig, TrainedNetwork};
use crate::qg::{ModelState, QgModel, Trajectory, N_LAYERS};
use crate::units;
use crate::var4d::Corrector;

pub fn rmse(a: &[f64], b: &[f64]) -> Result<f64> {
    check_len(a.len(), b.len())?;
    if a.is_empty() {
        return Err(invalid("rmse", "empty vectors"));
    }
    Ok((a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64).sqrt())
}

pub fn state_rmse(a: &ModelState, b: &ModelState) -> Result<f64> {
    rmse(&a.psi, &b.psi)
}

/// Model run inside a forecast.
#[derive(Clone, Copy)]
pub enum Forecaster<'a> {
    Model(&'a QgModel),
    /// `M^o` over `period`, then the predicted correction is added.
    Hybrid {
        model: &'a QgModel,
        corrector: &'a dyn Corrector,
        period: f64,
    },
}

impl Forecaster<'_> {
    fn check_lead(&self, lead: f64) -> Result<()> {
        match *self {
            Forecaster::Model(m) => m.steps_for(lead).map(|_| ()),
            Forecaster::Hybrid { model, period, .. } => {
                model.steps_for(period)?;
                units::whole_steps(lead, period).map(|_| ())
            }
        }
    }

    /// Advances `x` by `horizon`, which must be a multiple of the hybrid
    /// period in hybrid mode.
    pub fn advance(&self, x: &ModelState, horizon: f64) -> Result<ModelState> {
        match *self {
            Forecaster::Model(m) => m.resolvent(x, horizon, None),
            Forecaster::Hybrid {
                model,
                corrector,
                period,
            } => {
                let n = units::whole_steps(horizon, period)?;
                let mut s = x.clone();
                for _ in 0..n {
                    let c = corrector.correction(&s)?;
                    s = model.resolvent(&s, period, None)?.axpy(1.0, &c);
                }
                Ok(s)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillCurve {
    pub lead_days: Vec<f64>,
    pub values: Vec<f64>,
    pub n_ensemble: usize,
    pub true_model: String,
    pub test_model: String,
}

impl SkillCurve {
    pub fn at_days(&self, d: f64) -> Option<f64> {
        self.lead_days
            .iter()
            .position(|&l| (l - d).abs() < 1e-9)
            .map(|k| self.values[k])
    }
}

/// Ensemble-mean RMSE between true and test forecasts at each lead (model
/// time, increasing).
pub fn forecast_skill(
    truth: Forecaster<'_>,
    test: Forecaster<'_>,
    inits: &[ModelState],
    leads: &[f64],
    labels: (&str, &str),
) -> Result<SkillCurve> {
    if inits.is_empty() {
        return Err(Error::Insufficient("no initial states".into()));
    }
    if leads.windows(2).any(|w| w[1] <= w[0]) || leads.first().is_some_and(|&l| l < 0.0) {
        return Err(invalid("leads", "must be non-negative and increasing"));
    }
    for &l in leads {
        truth.check_lead(l)?;
        test.check_lead(l)?;
    }
    let members = par::map(inits, |x| -> Result<Vec<f64>> {
        let (mut a, mut b) = (x.clone(), x.clone());
        let mut t = 0.0;
        let mut out = Vec::with_capacity(leads.len());
        for &l in leads {
            if l > t {
                a = truth.advance(&a, l - t)?;
                b = test.advance(&b, l - t)?;
                t = l;
            }
            out.push(state_rmse(&a, &b)?);
        }
        Ok(out)
    });
    let mut values = vec![0.0; leads.len()];
    for m in members {
        for (v, e) in values.iter_mut().zip(m?) {
            *v += e;
        }
    }
    values.iter_mut().for_each(|v| *v /= inits.len() as f64);
    Ok(SkillCurve {
        lead_days: leads.iter().map(|&l| units::to_days(l)).collect(),
        values,
        n_ensemble: inits.len(),
        true_model: labels.0.to_string(),
        test_model: labels.1.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Climatology {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub variability: f64,
}

pub fn climatology(states: &[ModelState]) -> Result<Climatology> {
    if states.len() < 2 {
        return Err(Error::Insufficient("climatology needs at least two states".into()));
    }
    let n = states[0].len();
    let mut mean = vec![0.0; n];
    for s in states {
        check_len(n, s.len())?;
        for (m, v) in mean.iter_mut().zip(&s.psi) {
            *m += v;
        }
    }
    let c = states.len() as f64;
    mean.iter_mut().for_each(|m| *m /= c);
    let mut var = vec![0.0; n];
    for s in states {
        for ((q, v), m) in var.iter_mut().zip(&s.psi).zip(&mean) {
            *q += (v - m).powi(2);
        }
    }
    let std: Vec<f64> = var.iter().map(|q| (q / c).sqrt()).collect();
    let variability = std.iter().sum::<f64>() / n as f64;
    Ok(Climatology {
        mean,
        std,
        variability,
    })
}

/// Variabilities of the first and second halves.
pub fn split_half_variability(traj: &Trajectory) -> Result<(f64, f64)> {
    let h = traj.len() / 2;
    Ok((
        climatology(&traj.states[..h])?.variability,
        climatology(&traj.states[h..])?.variability,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaveDiagnostic {
    pub wavenumber: usize,
    /// Phase speed in model units; negative means westward.
    pub phase_speed: f64,
    pub period_days: f64,
}

/// Phase tracking of the dominant zonal Fourier mode of the vertically and
/// meridionally averaged stream-function anomaly (time mean removed, so
/// the stationary orographic pattern does not count).
pub fn dominant_wave(traj: &Trajectory, grid: &crate::qg::Grid) -> Result<WaveDiagnostic> {
    traj.validate()?;
    if traj.len() < 3 {
        return Err(Error::Insufficient("wave diagnostic needs three states".into()));
    }
    let (nx, ny) = (grid.nx, grid.ny);
    let profile = |psi: &[f64]| {
        let mut prof = vec![0.0; nx];
        for l in 0..N_LAYERS {
            for j in 0..ny {
                for (i, p) in prof.iter_mut().enumerate() {
                    *p += psi[grid.idx(l, j, i)];
                }
            }
        }
        prof
    };
    let mean = profile(&climatology(&traj.states)?.mean);
    let coeffs: Vec<Vec<Complex<f64>>> = traj
        .states
        .iter()
        .map(|s| {
            let mut prof = profile(&s.psi);
            prof.iter_mut().zip(&mean).for_each(|(p, m)| *p -= m);
            (1..=nx / 2)
                .map(|k| {
                    prof.iter()
                        .enumerate()
                        .map(|(i, &p)| {
                            let a = -2.0 * std::f64::consts::PI * (k * i) as f64 / nx as f64;
                            Complex::new(a.cos(), a.sin()) * p
                        })
                        .sum()
                })
                .collect()
        })
        .collect();
    let k = (0..nx / 2)
        .max_by(|&a, &b| {
            let pa: f64 = coeffs.iter().map(|c| c[a].norm_sqr()).sum();
            let pb: f64 = coeffs.iter().map(|c| c[b].norm_sqr()).sum();
            pa.total_cmp(&pb)
        })
        .unwrap();
    let mut phase = Vec::with_capacity(coeffs.len());
    let mut prev = coeffs[0][k].arg();
    let mut acc = prev;
    phase.push(acc);
    for c in &coeffs[1..] {
        let a = c[k].arg();
        let mut d = a - prev;
        while d > std::f64::consts::PI {
            d -= 2.0 * std::f64::consts::PI;
        }
        while d < -std::f64::consts::PI {
            d += 2.0 * std::f64::consts::PI;
        }
        acc += d;
        phase.push(acc);
        prev = a;
    }
    let times: Vec<f64> = traj.states.iter().map(|s| s.time).collect();
    let (omega_neg, _, _) = linear_fit(&times, &phase);
    // c_k ∝ exp(−iωt) for a wave cos(κx − ωt)
    let omega = -omega_neg;
    let kappa = 2.0 * std::f64::consts::PI * (k + 1) as f64 / grid.lx;
    Ok(WaveDiagnostic {
        wavenumber: k + 1,
        phase_speed: omega / kappa,
        period_days: units::to_days(2.0 * std::f64::consts::PI / omega.abs()),
    })
}

/// Slope, intercept and R² of a least-squares line.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    (slope, my - slope * mx, r2)
}

pub const MIN_SEGMENT: usize = 5;

/// Doubling time `ln 2 / rate` from the longest contiguous segment of a
/// log-error series whose linear fit has R² ≥ 0.98 and positive slope.
/// The slopes of the two halves of the segment must also agree with the
/// full slope within 10 %, so the segment cannot run into saturation.
pub fn fit_doubling(times: &[f64], log_err: &[f64]) -> Result<f64> {
    check_len(times.len(), log_err.len())?;
    if log_err.iter().any(|v| !v.is_finite()) {
        return Err(Error::NoGrowthRegime);
    }
    let n = times.len();
    for len in (MIN_SEGMENT..=n).rev() {
        let rates: Vec<f64> = (0..=n - len)
            .filter_map(|s| {
                let (x, y) = (&times[s..s + len], &log_err[s..s + len]);
                let (slope, _, r2) = linear_fit(x, y);
                let h = len / 2 + 1;
                let (a, _, _) = linear_fit(&x[..h], &y[..h]);
                let (b, _, _) = linear_fit(&x[len - h..], &y[len - h..]);
                let steady = (a - slope).abs() <= 0.1 * slope && (b - slope).abs() <= 0.1 * slope;
                (slope > 0.0 && r2 >= 0.98 && steady).then_some(slope)
            })
            .collect();
        if let Some(&rate) = rates.iter().max_by(|a, b| a.total_cmp(b)) {
            return Ok(std::f64::consts::LN_2 / rate);
        }
    }
    Err(Error::NoGrowthRegime)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DoublingConfig {
    /// Perturbation RMS as a fraction of the variability.
    pub relative_amplitude: f64,
    pub horizon_days: f64,
    pub sample_hours: f64,
    pub seed: u64,
}

impl Default for DoublingConfig {
    fn default() -> Self {
        Self {
            relative_amplitude: 1e-4,
            horizon_days: 60.0,
            sample_hours: 12.0,
            seed: 0,
        }
    }
}

/// Doubling time (model time units) from twin integrations seeded at each
/// base state; log errors are averaged over the bases before the fit.
pub fn doubling_time(
    model: &QgModel,
    bases: &[ModelState],
    variability: f64,
    cfg: &DoublingConfig,
) -> Result<f64> {
    if bases.is_empty() {
        return Err(Error::Insufficient("no base states".into()));
    }
    let step = units::hours(cfg.sample_hours);
    let n = units::whole_steps(units::days(cfg.horizon_days), step)?;
    model.steps_for(step)?;
    let amp = cfg.relative_amplitude * variability;
    let series = par::map_indexed(bases, |b, x| -> Result<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(b as u64));
        let noise: Vec<f64> = (0..x.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
        let rms = (noise.iter().map(|v: &f64| v * v).sum::<f64>() / x.len() as f64).sqrt();
        let (mut a, mut p) = (x.clone(), x.axpy(amp / rms.max(f64::MIN_POSITIVE), &noise));
        let mut logs = Vec::with_capacity(n + 1);
        for k in 0..=n {
            if k > 0 {
                a = model.resolvent(&a, step, None)?;
                p = model.resolvent(&p, step, None)?;
            }
            logs.push(state_rmse(&a, &p)?.ln());
        }
        Ok(logs)
    });
    let mut mean = vec![0.0; n + 1];
    for s in series {
        for (m, v) in mean.iter_mut().zip(s?) {
            *m += v / bases.len() as f64;
        }
    }
    let times: Vec<f64> = (0..=n).map(|k| k as f64 * step).collect();
    fit_doubling(&times, &mean)
}

/// `MSE(prediction, target) / Var(target)` for one database.
pub fn normalized_mse(net: &TrainedNetwork, db: &TrainingDatabase) -> Result<f64> {
    if db.is_empty() {
        return Err(Error::Insufficient("empty database".into()));
    }
    let preds = db
        .pairs
        .iter()
        .map(|p| net.predict(&p.input))
        .collect::<Result<Vec<_>>>()?;
    normalized_mse_of(&preds, db)
}

pub fn normalized_mse_of(preds: &[Vec<f64>], db: &TrainingDatabase) -> Result<f64> {
    check_len(db.len(), preds.len())?;
    let n = db.pairs.iter().map(|p| p.target.len()).sum::<usize>() as f64;
    let mean = db.pairs.iter().flat_map(|p| p.target.iter()).sum::<f64>() / n;
    let var = db.pairs.iter().flat_map(|p| p.target.iter()).map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    if !(var > 0.0) {
        return Err(Error::ZeroVariance("targets"));
    }
    let mut se = 0.0;
    for (y, p) in preds.iter().zip(&db.pairs) {
        check_len(p.target.len(), y.len())?;
        se += y.iter().zip(&p.target).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    }
    Ok(se / n / var)
}

/// Average of [`normalized_mse`] over several test databases.
pub fn mean_normalized_mse(net: &TrainedNetwork, dbs: &[TrainingDatabase]) -> Result<f64> {
    if dbs.is_empty() {
        return Err(Error::Insufficient("no test databases".into()));
    }
    let mut s = 0.0;
    for db in dbs {
        s += normalized_mse(net, db)?;
    }
    Ok(s / dbs.len() as f64)
}

pub const SPINUP_WINDOWS: usize = 8;

/// Per-window RMSE of `analyses` against the truth state at the same time,
/// and its mean after dropping `spinup` windows.
pub fn analysis_rmse(analyses: &[ModelState], truth: &Trajectory, spinup: usize) -> Result<(Vec<f64>, f64)> {
    let mut series = Vec::with_capacity(analyses.len());
    for a in analyses {
        let k = truth.index_at(a.time).ok_or_else(|| {
            Error::TrajectoryMismatch(format!("no truth state at analysis time {}", a.time))
        })?;
        series.push(state_rmse(a, &truth.states[k])?);
    }
    if series.len() <= spinup {
        return Err(Error::Insufficient(format!(
            "{} windows, all within the {spinup}-window spin-up",
            series.len()
        )));
    }
    let kept = &series[spinup..];
    let avg = kept.iter().sum::<f64>() / kept.len() as f64;
    Ok((series, avg))
}

/// One (τ, N_t) configuration of the sweep.
pub struct SweepCell<'a> {
    pub tau: f64,
    pub n_samples: usize,
    pub train: &'a TrainingDatabase,
    pub valid: &'a TrainingDatabase,
    /// Test databases built from analyses (increments) and from truth.
    pub test_analysis: &'a [TrainingDatabase],
    pub test_truth: &'a [TrainingDatabase],
}

/// What the 8-day forecast skill is measured against.
pub struct SkillContext<'a> {
    pub truth_model: &'a QgModel,
    pub original: &'a QgModel,
    pub inits: &'a [ModelState],
    pub period: f64,
    pub lead: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub label: String,
    pub tau_days: f64,
    pub n_samples: usize,
    pub nmse_increments: Option<f64>,
    pub nmse_truth: Option<f64>,
    pub fs_lead: Option<f64>,
    pub analysis_rmse: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub records: Vec<SweepRecord>,
    /// Index into `records` of the best entry per cell, `None` for flagged
    /// cells.
    pub best: Vec<Option<usize>>,
}

/// Index of the record with the lowest finite FS among `candidates`.
pub fn best_by_fs(records: &[SweepRecord], candidates: impl IntoIterator<Item = usize>) -> Option<usize> {
    candidates
        .into_iter()
        .filter(|&k| records[k].fs_lead.is_some_and(f64::is_finite))
        .min_by(|&a, &b| records[a].fs_lead.unwrap().total_cmp(&records[b].fs_lead.unwrap()))
}

/// Trains every spec in every cell and scores it.
pub fn run_sweep(
    cells: &[SweepCell<'_>],
    specs: &[NetworkSpec],
    cfg: &TrainConfig,
    skill: &SkillContext<'_>,
) -> Result<SweepResult> {
    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..specs.len()).map(move |s| (c, s)))
        .collect();
    let records = par::map(&jobs, |&(c, s)| score(&cells[c], &specs[s], cfg, skill));
    let mut best = Vec::with_capacity(cells.len());
    for c in 0..cells.len() {
        best.push(best_by_fs(&records, c * specs.len()..(c + 1) * specs.len()));
    }
    Ok(SweepResult { records, best })
}

fn score(cell: &SweepCell<'_>, spec: &NetworkSpec, cfg: &TrainConfig, skill: &SkillContext<'_>) -> SweepRecord {
    let mut rec = SweepRecord {
        label: spec.label(),
        tau_days: units::to_days(cell.tau),
        n_samples: cell.n_samples,
        nmse_increments: None,
        nmse_truth: None,
        fs_lead: None,
        analysis_rmse: None,
        error: None,
    };
    let run = || -> Result<(f64, f64, f64)> {
        let net = train(spec, cell.train, cell.valid, cfg)?;
        let a = mean_normalized_mse(&net, cell.test_analysis)?;
        let t = mean_normalized_mse(&net, cell.test_truth)?;
        let fs = forecast_skill(
            Forecaster::Model(skill.truth_model),
            Forecaster::Hybrid {
                model: skill.original,
                corrector: &net,
                period: skill.period,
            },
            skill.inits,
            &[skill.lead],
            ("reference", "hybrid"),
        )?;
        Ok((a, t, fs.values[0]))
    };
    match run() {
        Ok((a, t, fs)) => {
            rec.nmse_increments = Some(a);
            rec.nmse_truth = Some(t);
            rec.fs_lead = Some(fs);
        }
        Err(e) => rec.error = Some(e.to_string()),
    }
    rec
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qg::{Grid, JetInit};
    use crate::units::{days, hours};

    #[test]
    fn rmse_examples() {
        let a = vec![0.0; 1600];
        let mut b = a.clone();
        b[0] = 3.0;
        b[1] = 4.0;
        assert!((rmse(&a, &b).unwrap() - 0.125).abs() < 1e-15);
        assert_eq!(rmse(&b, &b).unwrap(), 0.0);
        let c: Vec<f64> = a.iter().map(|v| v - 0.7).collect();
        assert!((rmse(&a, &c).unwrap() - 0.7).abs() < 1e-12);
        assert!(rmse(&a, &b[..10]).is_err());
    }

    #[test]
    fn synthetic_doubling_recovered() {
        let rate = 0.3;
        let times: Vec<f64> = (0..80).map(|k| 0.25 * k as f64).collect();
        let logs: Vec<f64> = times
            .iter()
            .map(|&t| if t < 12.0 { -9.0 + rate * t } else { -9.0 + rate * 12.0 })
            .collect();
        let exact = std::f64::consts::LN_2 / rate;
        let d = fit_doubling(&times, &logs).unwrap();
        assert!((d / exact - 1.0).abs() < 0.05, "{d}");
        let pure: Vec<f64> = times.iter().map(|&t| -9.0 + rate * t).collect();
        assert!((fit_doubling(&times, &pure).unwrap() - exact).abs() < 1e-9);
        let flat = vec![-3.0; 80];
        assert!(matches!(fit_doubling(&times, &flat), Err(Error::NoGrowthRegime)));
    }

    #[test]
    fn identical_pair_has_no_growth() {
        let m = QgModel::reference();
        let g = *m.grid();
        let x = JetInit::default().state(&g);
        let cfg = DoublingConfig {
            relative_amplitude: 0.0,
            horizon_days: 1.0,
            sample_hours: 6.0,
            seed: 0,
        };
        assert!(matches!(
            doubling_time(&m, &[x], 1.0, &cfg),
            Err(Error::NoGrowthRegime)
        ));
    }

    #[test]
    fn skill_self_is_zero_and_symmetric() {
        let r = QgModel::reference();
        let p = QgModel::perturbed();
        let g = *r.grid();
        let inits = vec![JetInit::default().state(&g)];
        let leads = [0.0, days(0.5), days(1.0)];
        let s = forecast_skill(Forecaster::Model(&r), Forecaster::Model(&r), &inits, &leads, ("r", "r")).unwrap();
        assert!(s.values.iter().all(|&v| v == 0.0));
        let ab = forecast_skill(Forecaster::Model(&r), Forecaster::Model(&p), &inits, &leads, ("r", "p")).unwrap();
        let ba = forecast_skill(Forecaster::Model(&p), Forecaster::Model(&r), &inits, &leads, ("p", "r")).unwrap();
        assert_eq!(ab.values, ba.values);
        assert_eq!(ab.values[0], 0.0);
        assert!(ab.values[2] > 0.0);
        assert_eq!(ab.at_days(0.5), Some(ab.values[1]));
    }

    struct Zero;
    impl Corrector for Zero {
        fn correction(&self, s: &ModelState) -> Result<Vec<f64>> {
            Ok(vec![0.0; s.len()])
        }
    }

    #[test]
    fn hybrid_lead_must_be_period_multiple() {
        let p = QgModel::perturbed();
        let g = *p.grid();
        let inits = vec![JetInit::default().state(&g)];
        let hyb = Forecaster::Hybrid {
            model: &p,
            corrector: &Zero,
            period: days(1.0),
        };
        assert!(forecast_skill(Forecaster::Model(&p), hyb, &inits, &[hours(12.0)], ("a", "b")).is_err());
        let s = forecast_skill(Forecaster::Model(&p), hyb, &inits, &[days(1.0)], ("a", "b")).unwrap();
        assert_eq!(s.values[0], 0.0);
    }

    #[test]
    fn climatology_basics() {
        let g = Grid::default();
        let s = ModelState::new(vec![1.5; g.size()], 0.0);
        let c = climatology(&[s.clone(), s.clone(), s]).unwrap();
        assert_eq!(c.variability, 0.0);
        assert!(c.std.iter().all(|&v| v == 0.0));
        assert!(climatology(&[]).is_err());
    }

    #[test]
    fn westward_synthetic_wave() {
        let g = Grid::default();
        let mut states = Vec::new();
        let c = -0.08;
        for n in 0..200 {
            let t = n as f64 * 0.5;
            let mut psi = vec![0.0; g.size()];
            for l in 0..2 {
                for j in 0..g.ny {
                    for i in 0..g.nx {
                        let kx = 2.0 * std::f64::consts::PI * 3.0 / g.lx;
                        psi[g.idx(l, j, i)] = (kx * (g.x(i) - c * t)).cos();
                    }
                }
            }
            states.push(ModelState::new(psi, t));
        }
        let traj = Trajectory::new(states, 0.5).unwrap();
        let w = dominant_wave(&traj, &g).unwrap();
        assert_eq!(w.wavenumber, 3);
        assert!((w.phase_speed - c).abs() < 1e-9, "{w:?}");
        let period = units::to_days(g.lx / 3.0 / c.abs());
        assert!((w.period_days - period).abs() < 1e-6);
    }

    #[test]
    fn analysis_average_drops_spinup() {
        let g = Grid::default();
        let truth = Trajectory::new(
            (0..12).map(|k| ModelState::new(vec![0.0; g.size()], k as f64)).collect(),
            1.0,
        )
        .unwrap();
        let an: Vec<ModelState> = (0..12)
            .map(|k| ModelState::new(vec![if k < 8 { 5.0 } else { 0.5 }; g.size()], k as f64))
            .collect();
        let (series, avg) = analysis_rmse(&an, &truth, 8).unwrap();
        assert_eq!(series.len(), 12);
        assert!((avg - 0.5).abs() < 1e-15);
        let (_, same) = analysis_rmse(&an[..], &truth, 8).unwrap();
        assert_eq!(avg, same);
        let off = vec![ModelState::new(vec![0.0; g.size()], 0.5)];
        assert!(analysis_rmse(&off, &truth, 0).is_err());
        let (_, zero) = analysis_rmse(&truth.states, &truth, 2).unwrap();
        assert_eq!(zero, 0.0);
    }

    #[test]
    fn best_over_superset_is_no_worse() {
        let mk = |fs: Option<f64>| SweepRecord {
            label: String::new(),
            tau_days: 1.0,
            n_samples: 1,
            nmse_increments: None,
            nmse_truth: None,
            fs_lead: fs,
            analysis_rmse: None,
            error: None,
        };
        let recs = vec![mk(Some(3.0)), mk(Some(1.0)), mk(None), mk(Some(2.0))];
        let lin = best_by_fs(&recs, [0, 2]).unwrap();
        let all = best_by_fs(&recs, 0..4).unwrap();
        assert!(recs[all].fs_lead <= recs[lin].fs_lead);
        assert_eq!(all, 1);
        assert_eq!(best_by_fs(&recs, [2]), None);
    }
}
