use rand::Rng;

use super::*;
use crate::observations::{generate_obs, ObsConfig, ObsLocation};
use crate::qg::{Grid, JetInit};
use crate::units::{days, hours};

fn truth_run(model: &QgModel, length_days: f64) -> Trajectory {
    let g = *model.grid();
    model
        .generate_trajectory(&JetInit::default().state(&g), days(10.0), days(length_days), hours(1.0))
        .unwrap()
}

fn cov(grid: &Grid) -> CovarianceOperator {
    CovarianceOperator::new(*grid, CovarianceConfig::default()).unwrap()
}

fn random_vec(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

#[test]
fn single_observation_cost() {
    let m = QgModel::perturbed();
    let g = *m.grid();
    let truth = truth_run(&QgModel::reference(), 0.0);
    let xb = truth.states[0].clone();
    let b = cov(&g);
    let loc = ObsLocation {
        layer: 1,
        x: g.x(7),
        y: g.y(4),
    };
    let at = m.resolvent(&xb, hours(1.0), None).unwrap();
    let batch = ObsBatch {
        time: xb.time + hours(1.0),
        locations: vec![loc],
        values: vec![at.psi[g.idx(1, 4, 7)] - 0.3],
        obs_var: 0.1,
    };
    let p = WindowProblem::new(&m, &b, None, &xb, std::slice::from_ref(&batch)).unwrap();
    let j = p.cost(&vec![0.0; g.size()]).unwrap();
    assert!((j - 0.45).abs() < 1e-12, "{j}");

    let empty = WindowProblem::new(&m, &b, None, &xb, &[]).unwrap();
    assert_eq!(empty.cost(&vec![0.0; g.size()]).unwrap(), 0.0);
    let chi = random_vec(g.size(), 3);
    let (_, grad) = empty.cost_and_gradient(&chi).unwrap();
    assert_eq!(grad, chi);
}

#[test]
fn noiseless_truth_has_zero_cost() {
    let m = QgModel::reference();
    let g = *m.grid();
    let truth = truth_run(&m, 1.0);
    let cfg = ObsConfig {
        add_noise: false,
        ..Default::default()
    };
    let db = generate_obs(&g, &truth, &cfg, "t").unwrap();
    let b = cov(&g);
    let p = WindowProblem::new(&m, &b, None, &truth.states[0], db.window(0)).unwrap();
    let (j, grad) = p.cost_and_gradient(&vec![0.0; g.size()]).unwrap();
    assert!(j < 1e-20, "{j}");
    assert!(grad.iter().all(|v| v.abs() < 1e-9));
}

fn fd_check(model: &QgModel, forcing: Option<&ForcingTerm>, seed: u64) -> f64 {
    let g = *model.grid();
    let truth = truth_run(&QgModel::reference(), 1.0);
    let cfg = ObsConfig {
        seed,
        ..Default::default()
    };
    let db = generate_obs(&g, &truth, &cfg, "t").unwrap();
    let b = cov(&g);
    let xb = perturbed_background(&truth.states[0], &b, seed).unwrap();
    let p = WindowProblem::new(model, &b, forcing, &xb, db.window(0)).unwrap();
    let chi: Vec<f64> = random_vec(g.size(), seed + 1).iter().map(|v| 0.5 * v).collect();
    let d = random_vec(g.size(), seed + 2);
    let (_, grad) = p.cost_and_gradient(&chi).unwrap();
    let eps = 1e-6;
    let plus: Vec<f64> = chi.iter().zip(&d).map(|(c, v)| c + eps * v).collect();
    let minus: Vec<f64> = chi.iter().zip(&d).map(|(c, v)| c - eps * v).collect();
    let fd = (p.cost(&plus).unwrap() - p.cost(&minus).unwrap()) / (2.0 * eps);
    let an: f64 = grad.iter().zip(&d).map(|(a, b)| a * b).sum();
    ((an - fd) / an).abs()
}

#[test]
fn gradient_matches_finite_differences() {
    let m = QgModel::perturbed();
    let err = fd_check(&m, None, 21);
    assert!(err < 1e-5, "relative error {err}");
    let eta = ForcingTerm::new(random_vec(m.grid().size(), 5).iter().map(|v| 1e-3 * v).collect()).unwrap();
    let err = fd_check(&m, Some(&eta), 22);
    assert!(err < 1e-5, "relative error with forcing {err}");
}

#[test]
fn no_observations_keeps_background() {
    let m = QgModel::perturbed();
    let g = *m.grid();
    let truth = truth_run(&QgModel::reference(), 0.0);
    let b = cov(&g);
    let rec = minimize(&m, &b, None, &truth.states[0], &[], &MinimizerConfig::default()).unwrap();
    assert_eq!(rec.analysis, truth.states[0]);
    assert_eq!(rec.iterations, 0);
}

#[test]
fn minimisation_reduces_cost() {
    let m = QgModel::perturbed();
    let g = *m.grid();
    let truth = truth_run(&QgModel::reference(), 1.0);
    let db = generate_obs(&g, &truth, &ObsConfig::default(), "t").unwrap();
    let b = cov(&g);
    let xb = perturbed_background(&truth.states[0], &b, 9).unwrap();
    let problem = WindowProblem::new(&m, &b, None, &xb, db.window(0)).unwrap();
    let res = lbfgs_minimize(
        |c| problem.cost_and_gradient(c),
        vec![0.0; g.size()],
        &MinimizerConfig::default(),
    )
    .unwrap();
    assert!(res.history.windows(2).all(|w| w[1] < w[0]));
    let rec = minimize(&m, &b, None, &xb, db.window(0), &MinimizerConfig::default()).unwrap();
    assert!(rec.final_cost <= rec.background_cost);
    assert_eq!(rec.final_cost, res.f);
    let again = minimize(&m, &b, None, &xb, db.window(0), &MinimizerConfig::default()).unwrap();
    assert_eq!(rec, again);
}

struct Zero(usize);

impl Corrector for Zero {
    fn correction(&self, _: &ModelState) -> Result<Vec<f64>> {
        Ok(vec![0.0; self.0])
    }
}

#[test]
fn zero_corrector_matches_original_cycle() {
    let m = QgModel::perturbed();
    let g = *m.grid();
    let truth = truth_run(&QgModel::reference(), 2.0);
    let db = generate_obs(&g, &truth, &ObsConfig::default(), "t").unwrap();
    let cfg = DaConfig::default();
    let b = cov(&g);
    let xb = perturbed_background(&truth.states[0], &b, 1).unwrap();
    let orig = cycle(&db, &m, ModelMode::Original, &cfg, 2, &xb).unwrap();
    let zero = Zero(g.size());
    let hyb = cycle(
        &db,
        &m,
        ModelMode::Hybrid {
            corrector: &zero,
            tau: days(1.0),
        },
        &cfg,
        2,
        &xb,
    )
    .unwrap();
    for (a, b) in orig.records.iter().zip(&hyb.records) {
        assert_eq!(a.analysis, b.analysis);
        assert_eq!(a.final_cost, b.final_cost);
    }
    assert!(cycle(&db, &m, ModelMode::Original, &cfg, 3, &xb).is_err());
}

#[test]
fn oracle_with_same_model_has_no_forcing() {
    let m = QgModel::perturbed();
    let g = *m.grid();
    let x = JetInit::default().state(&g);
    let f = ModelMode::Oracle {
        truth_model: &m,
        tau: hours(3.0),
    }
    .forcing(&m, &x)
    .unwrap()
    .unwrap();
    assert!(f.eta.iter().all(|&v| v == 0.0));
    let r = QgModel::reference();
    let f = ModelMode::Oracle {
        truth_model: &r,
        tau: hours(3.0),
    }
    .forcing(&m, &x)
    .unwrap()
    .unwrap();
    let t = r.resolvent(&x, hours(3.0), None).unwrap();
    let o = m.resolvent(&x, hours(3.0), None).unwrap();
    let k = g.idx(0, 10, 10);
    let expect = (t.psi[k] - o.psi[k]) * m.dt() / hours(3.0);
    assert!((f.eta[k] - expect).abs() < 1e-15);
}

#[test]
fn identical_twin_converges() {
    let m = QgModel::reference();
    let g = *m.grid();
    let truth = truth_run(&m, 4.0);
    let cfg = ObsConfig {
        n_per_batch: 400,
        add_noise: false,
        obs_var: 1e-4,
        ..Default::default()
    };
    let db = generate_obs(&g, &truth, &cfg, "t").unwrap();
    let da = DaConfig::default();
    let b = cov(&g);
    let xb = perturbed_background(&truth.states[0], &b, 2).unwrap();
    let out = cycle(&db, &m, ModelMode::Original, &da, 4, &xb).unwrap();
    let rmse = |a: &ModelState| {
        let t = &truth.states[truth.index_at(a.time).unwrap()];
        (a.psi.iter().zip(&t.psi).map(|(p, q)| (p - q).powi(2)).sum::<f64>() / a.len() as f64).sqrt()
    };
    let errs: Vec<f64> = out.records.iter().map(|r| rmse(&r.analysis)).collect();
    assert!(errs[3] < 1e-2 * 0.316, "{errs:?}");
    assert!(out.records.iter().all(|r| r.final_cost <= r.background_cost));
}
