//! Stage drivers behind the `qgml` subcommands. Every stage reads its
//! inputs from, and writes its artifacts plus a manifest to, one output
//! directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};

use crate::config::{derive_seed, sha256_hex, Architectures, Artifact, ExperimentConfig, RunManifest};
use crate::covariance::CovarianceOperator;
use crate::dataset::{assign_roles, build_database, DatasetConfig, Roles, Source, TrainingDatabase};
use crate::error::{invalid, Error, Result};
use crate::evaluation::{
    analysis_rmse, climatology, forecast_skill, normalized_mse, run_sweep, state_rmse, Forecaster, SkillContext,
    SweepCell, SPINUP_WINDOWS,
};
use crate::io::{self, AnalysisRow};
use crate::neural::{sweep_specs, train, TrainedNetwork};
use crate::observations::{generate_obs, ObsDatabase};
use crate::par;
use crate::qg::{Grid, JetInit, ModelState, QgModel, Trajectory};
use crate::units::{self, days, hours};
use crate::var4d::{cycle, perturbed_background, ModelMode};

pub const STAGES: [&str; 7] = ["truth", "obs", "assimilate", "dataset", "train", "skill", "report"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Original,
    Hybrid,
    Oracle,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "original" => Ok(Mode::Original),
            "hybrid" => Ok(Mode::Hybrid),
            "oracle" => Ok(Mode::Oracle),
            _ => Err(invalid("mode", format!("{s:?} is not original, hybrid or oracle"))),
        }
    }
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Original => "original",
            Mode::Hybrid => "hybrid",
            Mode::Oracle => "oracle",
        }
    }
}

/// Options shared by the subcommands.
#[derive(Debug, Clone, Default)]
pub struct StageArgs {
    pub mode: Option<Mode>,
    /// Correction period in days.
    pub tau_days: Option<f64>,
    pub weights: Option<PathBuf>,
}

/// Parses `1d`, `3h`, `90m` or a bare number of days.
pub fn parse_duration_days(s: &str) -> Result<f64> {
    let s = s.trim();
    let (num, scale) = match s.char_indices().last() {
        Some((i, 'd')) => (&s[..i], 1.0),
        Some((i, 'h')) => (&s[..i], 1.0 / 24.0),
        Some((i, 'm')) => (&s[..i], 1.0 / 1440.0),
        _ => (s, 1.0),
    };
    let v: f64 = num
        .parse()
        .map_err(|_| invalid("tau", format!("{s:?} is not a duration such as 1d or 3h")))?;
    if !(v > 0.0) {
        return Err(invalid("tau", "must be positive"));
    }
    Ok(v * scale)
}

/// Short file-name label of a duration: `1d`, `3h`, `1.5h`.
pub fn tau_label(tau_days: f64) -> String {
    if (tau_days - tau_days.round()).abs() < 1e-9 {
        format!("{}d", tau_days.round())
    } else {
        let h = tau_days * 24.0;
        if (h - h.round()).abs() < 1e-9 {
            format!("{}h", h.round())
        } else {
            format!("{h}h")
        }
    }
}

pub fn cell_name(tau_days: f64, n_samples: usize) -> String {
    format!("tau{}_n{n_samples}", tau_label(tau_days))
}

pub struct Pipeline {
    config: ExperimentConfig,
    out: PathBuf,
    reference: QgModel,
    perturbed: QgModel,
    grid: Grid,
}

struct Outputs<'a> {
    root: &'a Path,
    manifest: RunManifest,
}

impl Outputs<'_> {
    fn write(&mut self, rel: &str, kind: &str, bytes: &[u8]) -> Result<()> {
        io::write_atomic(&self.root.join(rel), bytes)?;
        self.manifest.outputs.push(Artifact {
            path: rel.to_string(),
            kind: kind.to_string(),
            sha256: sha256_hex(bytes),
        });
        Ok(())
    }
}

impl Pipeline {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        for w in config.validate()? {
            warn!("{w}");
        }
        let reference = config.model.reference_model()?;
        let perturbed = config.model.perturbed_model()?;
        let grid = *reference.grid();
        Ok(Self {
            out: config.paths.out_dir.clone(),
            config,
            reference,
            perturbed,
            grid,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn out_dir(&self) -> &Path {
        &self.out
    }

    pub fn run(&self, stage: &str, args: &StageArgs) -> Result<RunManifest> {
        info!("stage {stage}");
        match stage {
            "truth" => self.truth(),
            "obs" => self.obs(),
            "assimilate" => self.assimilate(args),
            "dataset" => self.dataset(),
            "train" => self.train(),
            "skill" => self.skill(args),
            "report" => self.report(),
            _ => Err(invalid("stage", format!("unknown subcommand {stage:?}"))),
        }
    }

    /// The default chain: every stage once, plus hybrid and oracle cycling.
    pub fn run_all(&self) -> Result<Vec<RunManifest>> {
        let mut out = Vec::new();
        for stage in ["truth", "obs", "assimilate", "dataset", "train", "skill"] {
            out.push(self.run(stage, &StageArgs::default())?);
        }
        for mode in [Mode::Hybrid, Mode::Oracle] {
            out.push(self.run(
                "assimilate",
                &StageArgs {
                    mode: Some(mode),
                    ..Default::default()
                },
            )?);
        }
        out.push(self.run("report", &StageArgs::default())?);
        Ok(out)
    }

    fn outputs(&self, stage: &str) -> Outputs<'_> {
        Outputs {
            root: &self.out,
            manifest: RunManifest::new(stage, &self.config),
        }
    }

    fn finish(&self, dir: &str, mut o: Outputs<'_>) -> Result<RunManifest> {
        o.manifest.outputs.sort_by(|a, b| a.path.cmp(&b.path));
        let mut bytes = serde_json::to_vec_pretty(&o.manifest)?;
        bytes.push(b'\n');
        io::write_atomic(&self.out.join(dir).join("manifest.json"), &bytes)?;
        Ok(o.manifest)
    }

    fn upstream(&self, dir: &str, stage: &str) -> Result<RunManifest> {
        let path = self.out.join(dir).join("manifest.json");
        let bytes = fs::read(&path).map_err(|_| Error::Missing {
            what: format!("{} ({})", dir, path.display()),
            stage: stage.into(),
        })?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    /// Reads an artifact listed in an upstream manifest, checking its digest.
    fn input(&self, manifest: &RunManifest, rel: &str, used: &mut Vec<Artifact>) -> Result<Vec<u8>> {
        let art = manifest
            .outputs
            .iter()
            .find(|a| a.path == rel)
            .ok_or_else(|| Error::Missing {
                what: rel.to_string(),
                stage: manifest.stage.clone(),
            })?;
        let bytes = fs::read(self.out.join(rel)).map_err(|_| Error::Missing {
            what: rel.to_string(),
            stage: manifest.stage.clone(),
        })?;
        if sha256_hex(&bytes) != art.sha256 {
            return Err(Error::Format(format!(
                "{rel} differs from the digest recorded by `{}`",
                manifest.stage
            )));
        }
        used.push(art.clone());
        Ok(bytes)
    }

    fn roles(&self) -> Result<Roles<usize>> {
        assign_roles(&(0..self.config.truth.n_trajectories).collect::<Vec<_>>())
    }

    fn seed(&self, o: &mut Outputs<'_>, label: &str) -> u64 {
        let s = derive_seed(self.config.seed, label);
        o.manifest.seeds.insert(label.to_string(), s);
        s
    }

    fn truth_path(k: usize) -> String {
        format!("truth/traj_{k}.qgt")
    }

    fn obs_path(k: usize) -> String {
        format!("obs/obs_{k}.jsonl")
    }

    fn truth(&self) -> Result<RunManifest> {
        let t = &self.config.truth;
        let mut o = self.outputs("truth");
        let n = t.n_trajectories;
        let long = self.reference.generate_trajectory(
            &JetInit::default().state(&self.grid),
            days(t.spinup_days),
            days(t.separation_days) * (n - 1) as f64,
            days(t.separation_days),
        )?;
        let trajs = par::try_range(n, |k| {
            let traj = self
                .reference
                .generate_trajectory(&long.states[k], 0.0, days(t.length_days), hours(t.store_hours))?;
            io::encode_trajectory(&traj, &self.grid)
        })?;
        for (k, bytes) in trajs.iter().enumerate() {
            o.write(&Self::truth_path(k), "trajectory", bytes)?;
        }
        self.finish("truth", o)
    }

    fn read_truth(&self, manifest: &RunManifest, k: usize, used: &mut Vec<Artifact>) -> Result<Trajectory> {
        io::decode_trajectory(&self.input(manifest, &Self::truth_path(k), used)?, &self.grid)
    }

    fn obs(&self) -> Result<RunManifest> {
        let truth = self.upstream("truth", "truth")?;
        let mut o = self.outputs("obs");
        let n = self.config.truth.n_trajectories;
        let mut cfgs = Vec::with_capacity(n);
        for k in 0..n {
            let mut c = self.config.obs;
            c.seed = self.seed(&mut o, &format!("obs/{k}"));
            cfgs.push(c);
        }
        let mut used = Vec::new();
        let trajs = (0..n)
            .map(|k| self.read_truth(&truth, k, &mut used))
            .collect::<Result<Vec<_>>>()?;
        let dbs = par::try_range(n, |k| {
            let db = generate_obs(&self.grid, &trajs[k], &cfgs[k], &format!("traj_{k}"))?;
            io::encode_obs(&db)
        })?;
        for (k, bytes) in dbs.iter().enumerate() {
            o.write(&Self::obs_path(k), "obs", bytes)?;
        }
        o.manifest.inputs = used;
        self.finish("obs", o)
    }

    fn tau_days(&self, args: &StageArgs) -> f64 {
        args.tau_days.unwrap_or(self.config.dataset.tau_days[0])
    }

    fn weights_path(&self, args: &StageArgs) -> Result<PathBuf> {
        if let Some(p) = args.weights.clone().or_else(|| self.config.paths.weights.clone()) {
            if !p.exists() {
                return Err(Error::Missing {
                    what: format!("trained weights {}", p.display()),
                    stage: "train".into(),
                });
            }
            return Ok(p);
        }
        let default = self.out.join("train/weights.json");
        if default.exists() {
            Ok(default)
        } else {
            Err(Error::Missing {
                what: "trained weights (no weights path given and no train/weights.json)".into(),
                stage: "train".into(),
            })
        }
    }

    fn load_weights(&self, args: &StageArgs, o: &mut Outputs<'_>) -> Result<TrainedNetwork> {
        let p = self.weights_path(args)?;
        let bytes = fs::read(&p)?;
        o.manifest.inputs.push(Artifact {
            path: p.display().to_string(),
            kind: "weights".into(),
            sha256: sha256_hex(&bytes),
        });
        o.manifest.arguments.insert("weights".into(), p.display().to_string());
        let file = serde_json::from_slice(&bytes).map_err(|e| Error::Format(format!("weights: {e}")))?;
        io::network_from_weights(&file)
    }

    /// Directory of an assimilation run.
    pub fn assimilation_tag(mode: Mode, tau_days: f64) -> String {
        match mode {
            Mode::Original => "original".into(),
            m => format!("{}-tau{}", m.name(), tau_label(tau_days)),
        }
    }

    fn assimilate(&self, args: &StageArgs) -> Result<RunManifest> {
        let mode = args.mode.unwrap_or(Mode::Original);
        let tau_d = self.tau_days(args);
        let tau = days(tau_d);
        let tag = Self::assimilation_tag(mode, tau_d);
        let dir = format!("assimilate/{tag}");
        let mut o = self.outputs("assimilate");
        o.manifest.arguments.insert("mode".into(), mode.name().into());
        if mode != Mode::Original {
            o.manifest.arguments.insert("tau_days".into(), tau_d.to_string());
            self.perturbed.steps_for(tau)?;
        }
        let net = match mode {
            Mode::Hybrid => Some(self.load_weights(args, &mut o)?),
            _ => None,
        };
        let truth = self.upstream("truth", "truth")?;
        let obs = self.upstream("obs", "obs")?;
        let ids: Vec<usize> = match mode {
            Mode::Original => (0..self.config.truth.n_trajectories).collect(),
            _ => self.roles()?.test,
        };
        let cov = CovarianceOperator::new(self.grid, self.config.da.covariance)?;
        let mut used = Vec::new();
        let mut inputs = Vec::with_capacity(ids.len());
        for &k in &ids {
            let t = self.read_truth(&truth, k, &mut used)?;
            let db = io::decode_obs(&self.input(&obs, &Self::obs_path(k), &mut used)?)?;
            let seed = self.seed(&mut o, &format!("background/{k}"));
            inputs.push((t, db, seed));
        }
        let results = par::try_range(ids.len(), |n| {
            let (t, db, seed) = &inputs[n];
            let model_mode = match mode {
                Mode::Original => ModelMode::Original,
                Mode::Hybrid => ModelMode::Hybrid {
                    corrector: net.as_ref().unwrap(),
                    tau,
                },
                Mode::Oracle => ModelMode::Oracle {
                    truth_model: &self.reference,
                    tau,
                },
            };
            self.cycle_one(t, db, *seed, &cov, model_mode)
        })?;
        let mut summary = Vec::new();
        for (&k, (traj_bytes, csv, mean)) in ids.iter().zip(&results) {
            o.write(&format!("{dir}/analysis_{k}.qgt"), "trajectory", traj_bytes)?;
            o.write(&format!("{dir}/analysis_{k}.csv"), "metrics", csv.as_bytes())?;
            summary.push(vec![k.to_string(), mean.to_string()]);
        }
        let s = io::csv(&["trajectory", "mean_analysis_rmse"], &summary)?;
        o.write(&format!("{dir}/summary.csv"), "metrics", s.as_bytes())?;
        o.manifest.inputs = used;
        self.finish(&dir, o)
    }

    fn cycle_one(
        &self,
        truth: &Trajectory,
        db: &ObsDatabase,
        seed: u64,
        cov: &CovarianceOperator,
        mode: ModelMode<'_>,
    ) -> Result<(Vec<u8>, String, f64)> {
        let k0 = truth.index_at(db.window_start).ok_or_else(|| {
            Error::TrajectoryMismatch("observation windows start outside the truth run".into())
        })?;
        let xb = perturbed_background(&truth.states[k0], cov, seed)?;
        let out = cycle(db, &self.perturbed, mode, &self.config.da, db.n_windows(), &xb)?;
        let analyses = out.analyses()?;
        let (series, mean) = analysis_rmse(&analyses.states, truth, SPINUP_WINDOWS.min(out.records.len().saturating_sub(1)))?;
        let rows = out
            .records
            .iter()
            .zip(&series)
            .map(|(r, &a)| {
                let kt = truth.index_at(r.background.time).unwrap_or(k0);
                Ok(AnalysisRow {
                    window_index: r.window,
                    analysis_rmse: a,
                    background_rmse: state_rmse(&r.background, &truth.states[kt])?,
                    final_cost: r.final_cost,
                    iterations: r.iterations,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((io::encode_trajectory(&analyses, &self.grid)?, io::analysis_csv(&rows)?, mean))
    }

    fn analysis_path(k: usize) -> String {
        format!("assimilate/original/analysis_{k}.qgt")
    }

    fn dataset_path(source: Source, cell: &str, k: usize) -> String {
        let s = match source {
            Source::Analysis => "analysis",
            Source::Truth => "truth",
        };
        format!("dataset/{s}_{cell}_traj{k}.qgd")
    }

    fn cells(&self) -> Vec<(f64, usize)> {
        let d = &self.config.dataset;
        d.tau_days
            .iter()
            .flat_map(|&t| d.n_samples.iter().map(move |&n| (t, n)))
            .collect()
    }

    fn dataset(&self) -> Result<RunManifest> {
        let truth = self.upstream("truth", "truth")?;
        let an = self.upstream("assimilate/original", "assimilate")?;
        let roles = self.roles()?;
        let mut o = self.outputs("dataset");
        let n = self.config.truth.n_trajectories;
        let mut used = Vec::new();
        let analyses = (0..n)
            .map(|k| io::decode_trajectory(&self.input(&an, &Self::analysis_path(k), &mut used)?, &self.grid))
            .collect::<Result<Vec<_>>>()?;
        let truths: BTreeMap<usize, Trajectory> = roles
            .test
            .iter()
            .map(|&k| Ok((k, self.read_truth(&truth, k, &mut used)?)))
            .collect::<Result<_>>()?;
        let mut built = Vec::new();
        for (tau_d, n_samples) in self.cells() {
            let cell = cell_name(tau_d, n_samples);
            let mk = |source| DatasetConfig {
                tau: days(tau_d),
                n_samples,
                source,
            };
            let run = || -> Result<Vec<(String, Vec<u8>)>> {
                let mut files = Vec::new();
                for (k, a) in analyses.iter().enumerate() {
                    let mut db = build_database(a, &self.perturbed, &mk(Source::Analysis), &format!("analysis_{k}"))?;
                    if k == roles.train {
                        db = db.with_normalizer()?;
                    }
                    files.push((Self::dataset_path(Source::Analysis, &cell, k), io::encode_dataset(&db, &self.grid)?));
                }
                for (&k, t) in &truths {
                    let db = build_database(t, &self.perturbed, &mk(Source::Truth), &format!("truth_{k}"))?;
                    files.push((Self::dataset_path(Source::Truth, &cell, k), io::encode_dataset(&db, &self.grid)?));
                }
                Ok(files)
            };
            match run() {
                Ok(files) => {
                    for (p, b) in files {
                        o.write(&p, "dataset", &b)?;
                    }
                    built.push(cell);
                }
                Err(e @ Error::Insufficient(_)) => warn!("skipping cell {cell}: {e}"),
                Err(e) => return Err(e),
            }
        }
        if built.is_empty() {
            return Err(Error::Insufficient("no dataset cell fits the analysis trajectories".into()));
        }
        o.manifest.arguments.insert("cells".into(), built.join(","));
        o.manifest.inputs = used;
        self.finish("dataset", o)
    }

    fn read_dataset(&self, m: &RunManifest, src: Source, cell: &str, k: usize, used: &mut Vec<Artifact>) -> Result<TrainingDatabase> {
        io::decode_dataset(&self.input(m, &Self::dataset_path(src, cell, k), used)?, &self.grid)
    }

    fn built_cells(&self, m: &RunManifest) -> Vec<(f64, usize)> {
        let names: Vec<&str> = m.arguments.get("cells").map(|s| s.split(',').collect()).unwrap_or_default();
        self.cells()
            .into_iter()
            .filter(|&(t, n)| names.contains(&cell_name(t, n).as_str()))
            .collect()
    }

    /// Initial states for forecast skill: every `init_spacing_days` along
    /// each test truth run, as long as the longest lead fits.
    fn skill_inits(&self, truths: &[Trajectory]) -> Result<Vec<ModelState>> {
        let s = &self.config.skill;
        let max_lead = days(s.leads_days.iter().cloned().fold(0.0, f64::max));
        let spacing = days(s.init_spacing_days);
        let mut inits = Vec::new();
        'outer: for t in truths {
            let mut n = 0.0;
            loop {
                let time = t.t0() + n * spacing;
                if time + max_lead > t.last().time + 1e-9 {
                    break;
                }
                let k = t
                    .index_at(time)
                    .ok_or_else(|| invalid("skill.init_spacing_days", "must be a multiple of the truth storage"))?;
                inits.push(t.states[k].clone());
                if inits.len() == s.n_ensemble {
                    break 'outer;
                }
                n += 1.0;
            }
        }
        if inits.len() < s.n_ensemble {
            warn!("{} forecast initial states available of {} requested", inits.len(), s.n_ensemble);
        }
        if inits.is_empty() {
            return Err(Error::Insufficient("no forecast initial state fits the test runs".into()));
        }
        Ok(inits)
    }

    fn train(&self) -> Result<RunManifest> {
        let ds = self.upstream("dataset", "dataset")?;
        let roles = self.roles()?;
        let mut o = self.outputs("train");
        let mut used = Vec::new();
        let cells = self.built_cells(&ds);
        let mut first = true;
        match self.config.train.architectures {
            Architectures::Single => {
                let spec = self.config.single_spec();
                for &(tau_d, n) in &cells {
                    let cell = cell_name(tau_d, n);
                    let tr = self.read_dataset(&ds, Source::Analysis, &cell, roles.train, &mut used)?;
                    let va = self.read_dataset(&ds, Source::Analysis, &cell, roles.valid, &mut used)?;
                    let mut cfg = self.config.train.config;
                    cfg.seed = self.seed(&mut o, &format!("train/{cell}"));
                    let net = train(&spec, &tr, &va, &cfg)?;
                    info!("{cell}: best epoch {} valid {:.4}", net.best_epoch, net.best_valid_mse);
                    self.write_net(&mut o, &format!("train/weights_{cell}.json"), &net, &mut first)?;
                }
            }
            Architectures::Sweep => {
                let truth = self.upstream("truth", "truth")?;
                let truths = roles
                    .test
                    .iter()
                    .map(|&k| self.read_truth(&truth, k, &mut used))
                    .collect::<Result<Vec<_>>>()?;
                let inits = self.skill_inits(&truths)?;
                let specs = sweep_specs((2, self.grid.ny, self.grid.nx));
                let mut records = Vec::new();
                for &(tau_d, n) in &cells {
                    let cell = cell_name(tau_d, n);
                    let load = |src, k, used: &mut Vec<Artifact>| self.read_dataset(&ds, src, &cell, k, used);
                    let tr = load(Source::Analysis, roles.train, &mut used)?;
                    let va = load(Source::Analysis, roles.valid, &mut used)?;
                    let ta = roles.test.iter().map(|&k| load(Source::Analysis, k, &mut used)).collect::<Result<Vec<_>>>()?;
                    let tt = roles.test.iter().map(|&k| load(Source::Truth, k, &mut used)).collect::<Result<Vec<_>>>()?;
                    let mut cfg = self.config.train.config;
                    cfg.seed = self.seed(&mut o, &format!("train/{cell}"));
                    let sc = SweepCell {
                        tau: days(tau_d),
                        n_samples: n,
                        train: &tr,
                        valid: &va,
                        test_analysis: &ta,
                        test_truth: &tt,
                    };
                    let ctx = SkillContext {
                        truth_model: &self.reference,
                        original: &self.perturbed,
                        inits: &inits,
                        period: days(tau_d),
                        lead: round_up(days(8.0), days(tau_d)),
                    };
                    let res = run_sweep(&[sc], &specs, &cfg, &ctx)?;
                    match res.best[0] {
                        Some(b) => {
                            let net = train(&specs[b], &tr, &va, &cfg)?;
                            self.write_net(&mut o, &format!("train/weights_{cell}.json"), &net, &mut first)?;
                        }
                        None => warn!("cell {cell} flagged: no architecture produced a finite skill"),
                    }
                    records.extend(res.records);
                }
                o.write("train/sweep.csv", "metrics", io::sweep_csv(&records)?.as_bytes())?;
            }
        }
        if first {
            return Err(Error::Insufficient("no network trained".into()));
        }
        o.manifest.inputs = used;
        self.finish("train", o)
    }

    fn write_net(&self, o: &mut Outputs<'_>, rel: &str, net: &TrainedNetwork, first: &mut bool) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(&io::weights_file(net)?)?;
        bytes.push(b'\n');
        o.write(rel, "weights", &bytes)?;
        if *first {
            o.write("train/weights.json", "weights", &bytes)?;
            *first = false;
        }
        Ok(())
    }

    fn skill(&self, args: &StageArgs) -> Result<RunManifest> {
        let truth = self.upstream("truth", "truth")?;
        let roles = self.roles()?;
        let mut o = self.outputs("skill");
        let net = self.load_weights(args, &mut o)?;
        let tau_d = self.tau_days(args);
        let mut used = Vec::new();
        let truths = roles
            .test
            .iter()
            .map(|&k| self.read_truth(&truth, k, &mut used))
            .collect::<Result<Vec<_>>>()?;
        let inits = self.skill_inits(&truths)?;
        o.manifest.arguments.insert("n_ensemble".into(), inits.len().to_string());
        let leads: Vec<f64> = self.config.skill.leads_days.iter().map(|&d| days(d)).collect();
        let truth_fc = Forecaster::Model(&self.reference);
        let orig = forecast_skill(truth_fc, Forecaster::Model(&self.perturbed), &inits, &leads, ("reference", "original"))?;
        let hyb = forecast_skill(
            truth_fc,
            Forecaster::Hybrid {
                model: &self.perturbed,
                corrector: &net,
                period: days(tau_d),
            },
            &inits,
            &leads,
            ("reference", "hybrid"),
        )?;
        let daily = units::whole_steps(days(1.0), truths[0].dt_between)?;
        let clim_states: Vec<ModelState> = truths
            .iter()
            .flat_map(|t| t.states.iter().step_by(daily).cloned())
            .collect();
        let variability = climatology(&clim_states)?.variability;
        o.write("skill/skill.csv", "metrics", io::skill_csv(&orig, Some(&hyb), variability)?.as_bytes())?;

        if let Ok(ds) = self.upstream("dataset", "dataset") {
            let cell = cell_name(tau_d, self.config.dataset.n_samples[0]);
            let mut rows = Vec::new();
            let (mut sa, mut st) = (0.0, 0.0);
            for &k in &roles.test {
                let a = normalized_mse(&net, &self.read_dataset(&ds, Source::Analysis, &cell, k, &mut used)?)?;
                let t = normalized_mse(&net, &self.read_dataset(&ds, Source::Truth, &cell, k, &mut used)?)?;
                sa += a;
                st += t;
                rows.push(vec![k.to_string(), a.to_string(), t.to_string()]);
            }
            let c = roles.test.len() as f64;
            rows.push(vec!["mean".into(), (sa / c).to_string(), (st / c).to_string()]);
            let s = io::csv(&["trajectory", "nmse_increments", "nmse_truth"], &rows)?;
            o.write("skill/nmse.csv", "metrics", s.as_bytes())?;
        } else {
            warn!("no dataset stage output; skipping normalized MSE");
        }
        o.manifest.inputs.extend(used);
        self.finish("skill", o)
    }

    fn report(&self) -> Result<RunManifest> {
        let mut o = self.outputs("report");
        let mut rows: Vec<Vec<String>> = Vec::new();
        let assim = self.out.join("assimilate");
        let mut tags: Vec<String> = fs::read_dir(&assim)
            .map_err(|_| Error::Missing {
                what: "assimilation runs".into(),
                stage: "assimilate".into(),
            })?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().join("summary.csv").exists())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .collect();
        tags.sort();
        let mut used = Vec::new();
        for tag in &tags {
            let m = self.upstream(&format!("assimilate/{tag}"), "assimilate")?;
            let text = self.input(&m, &format!("assimilate/{tag}/summary.csv"), &mut used)?;
            let vals = read_column(&text, "mean_analysis_rmse")?;
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            rows.push(vec![format!("analysis_rmse_{tag}"), mean.to_string()]);
        }
        if let Ok(m) = self.upstream("skill", "skill") {
            let text = self.input(&m, "skill/skill.csv", &mut used)?;
            let lead = read_column(&text, "lead_days")?;
            let fo = read_column(&text, "fs_original")?;
            let fh = read_column(&text, "fs_hybrid")?;
            for (k, l) in lead.iter().enumerate() {
                if [2.0, 4.0, 8.0, 16.0].contains(l) {
                    rows.push(vec![format!("fs_original_{l}d"), fo[k].to_string()]);
                    rows.push(vec![format!("fs_hybrid_{l}d"), fh[k].to_string()]);
                }
            }
            if m.outputs.iter().any(|a| a.path == "skill/nmse.csv") {
                let text = self.input(&m, "skill/nmse.csv", &mut used)?;
                let a = read_column(&text, "nmse_increments")?;
                let t = read_column(&text, "nmse_truth")?;
                rows.push(vec!["nmse_increments".into(), a.last().unwrap().to_string()]);
                rows.push(vec!["nmse_truth".into(), t.last().unwrap().to_string()]);
            }
        }
        if rows.is_empty() {
            return Err(Error::Missing {
                what: "stage outputs to report".into(),
                stage: "assimilate".into(),
            });
        }
        o.write("report/summary.csv", "metrics", io::csv(&["metric", "value"], &rows)?.as_bytes())?;
        o.manifest.inputs = used;
        self.finish("report", o)
    }
}

fn round_up(x: f64, step: f64) -> f64 {
    (x / step - 1e-9).ceil() * step
}

/// Numeric column of a CSV document; empty cells are skipped.
pub fn read_column(text: &[u8], name: &str) -> Result<Vec<f64>> {
    let mut r = csv::Reader::from_reader(text);
    let fmt = |e: csv::Error| Error::Format(format!("csv: {e}"));
    let idx = r
        .headers()
        .map_err(fmt)?
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::Format(format!("csv: no column {name}")))?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(fmt)?;
        let cell = rec.get(idx).unwrap_or("");
        if !cell.is_empty() {
            out.push(cell.parse().map_err(|_| Error::Format(format!("csv: {cell:?} in {name}")))?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;

    #[test]
    fn durations() {
        assert_eq!(parse_duration_days("1d").unwrap(), 1.0);
        assert_eq!(parse_duration_days("3h").unwrap(), 0.125);
        assert_eq!(parse_duration_days("2").unwrap(), 2.0);
        assert!(parse_duration_days("-1d").is_err());
        assert!(parse_duration_days("xh").is_err());
        assert_eq!(tau_label(1.0), "1d");
        assert_eq!(tau_label(0.125), "3h");
        assert_eq!(cell_name(2.0, 64), "tau2d_n64");
    }

    #[test]
    fn missing_upstream_names_the_stage() {
        let dir = tempfile::tempdir().unwrap();
        let text = format!(r#"{{"paths": {{"out_dir": {:?}}}}}"#, dir.path());
        let (cfg, _) = parse_config(&text).unwrap();
        let p = Pipeline::new(cfg).unwrap();
        let msg = p.run("obs", &StageArgs::default()).unwrap_err().to_string();
        assert!(msg.contains("qgml truth"), "{msg}");
        let err = p
            .run(
                "assimilate",
                &StageArgs {
                    mode: Some(Mode::Hybrid),
                    ..Default::default()
                },
            )
            .unwrap_err();
        assert!(err.to_string().contains("qgml train"), "{err}");
        assert!(p.run("bogus", &StageArgs::default()).is_err());
    }

    #[test]
    fn small_chain_runs_and_repeats() {
        let run = |dir: &Path| {
            let text = format!(
                r#"{{"paths": {{"out_dir": {dir:?}}},
                    "truth": {{"length_days": 5, "separation_days": 5, "spinup_days": 2}},
                    "dataset": {{"n_samples": [3]}},
                    "train": {{"config": {{"epochs_phase1": 5, "epochs_phase2": 5}}}},
                    "skill": {{"n_ensemble": 2, "init_spacing_days": 1, "leads_days": [0, 1, 2]}},
                    "da": {{"minimizer": {{"max_iterations": 5}}}}}}"#
            );
            let (cfg, _) = parse_config(&text).unwrap();
            Pipeline::new(cfg).unwrap().run_all().unwrap()
        };
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let ma = run(a.path());
        let mb = run(b.path());
        assert_eq!(ma.len(), 9);
        for (x, y) in ma.iter().zip(&mb) {
            assert_eq!(x.outputs, y.outputs);
        }
        let summary = fs::read_to_string(a.path().join("report/summary.csv")).unwrap();
        assert!(summary.contains("analysis_rmse_original"));
        assert!(summary.contains("analysis_rmse_hybrid-tau1d"));
        assert!(summary.contains("nmse_truth"));
    }
}
