//! Artifact formats: QGT1 trajectories, JSONL observations, QGD1
//! databases, JSON weights and CSV metrics.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetConfig, SamplePair, Source, TrainingDatabase};
use crate::error::{Error, Result};
use crate::neural::{EpochRecord, Network, NetworkSpec, Normalizer, TrainedNetwork};
use crate::observations::{ObsBatch, ObsDatabase, ObsLocation};
use crate::qg::{Grid, ModelState, Trajectory, N_LAYERS};
use crate::units;

pub const TRAJECTORY_MAGIC: &[u8; 4] = b"QGT1";
pub const DATASET_MAGIC: &[u8; 4] = b"QGD1";
pub const WEIGHTS_FORMAT: &str = "qgml-weights/1";

/// Writes through a temporary sibling, then renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let name = path
        .file_name()
        .ok_or_else(|| Error::Format(format!("{} is not a file path", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8], what: &'static str) -> Self {
        Self { buf, pos: 0, what }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format(format!(
                "{} truncated at byte {} (needed {n} more)",
                self.what, self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn magic(&mut self, expect: &[u8; 4]) -> Result<()> {
        let m = self.take(4)?;
        if m != expect {
            return Err(Error::Format(format!(
                "{}: bad magic {:?}, expected {:?}",
                self.what,
                String::from_utf8_lossy(m),
                String::from_utf8_lossy(expect)
            )));
        }
        Ok(())
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Format("size overflow".into()))?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn rest(&mut self) -> &'a [u8] {
        let s = &self.buf[self.pos..];
        self.pos = self.buf.len();
        s
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Format(format!(
                "{}: {} trailing bytes",
                self.what,
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

fn put_f64s(out: &mut Vec<u8>, v: &[f64]) {
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

pub fn encode_trajectory(traj: &Trajectory, grid: &Grid) -> Result<Vec<u8>> {
    traj.validate()?;
    for s in &traj.states {
        s.conforms(grid)?;
    }
    let mut out = Vec::with_capacity(40 + traj.len() * grid.size() * 8);
    out.extend_from_slice(TRAJECTORY_MAGIC);
    for v in [grid.nx, grid.ny, N_LAYERS] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&(traj.len() as u64).to_le_bytes());
    out.extend_from_slice(&traj.dt_between.to_le_bytes());
    out.extend_from_slice(&traj.t0().to_le_bytes());
    for s in &traj.states {
        put_f64s(&mut out, &s.psi);
    }
    Ok(out)
}

/// Decodes a trajectory and checks its dimensions against `grid`. State
/// times are `t0 + k · dt_between`.
pub fn decode_trajectory(bytes: &[u8], grid: &Grid) -> Result<Trajectory> {
    let mut r = Reader::new(bytes, "trajectory");
    r.magic(TRAJECTORY_MAGIC)?;
    let (nx, ny, nl) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
    if (nx, ny, nl) != (grid.nx, grid.ny, N_LAYERS) {
        return Err(Error::Format(format!(
            "trajectory grid {nx}×{ny}×{nl} differs from {}×{}×{N_LAYERS}",
            grid.nx, grid.ny
        )));
    }
    let n = r.u64()? as usize;
    let dt = r.f64()?;
    let t0 = r.f64()?;
    if n == 0 {
        return Err(Error::Format("trajectory holds no states".into()));
    }
    let mut states = Vec::with_capacity(n);
    for k in 0..n {
        states.push(ModelState::new(r.f64s(grid.size())?, t0 + k as f64 * dt));
    }
    r.finish()?;
    Trajectory::new(states, dt)
}

pub fn write_trajectory(path: &Path, traj: &Trajectory, grid: &Grid) -> Result<()> {
    write_atomic(path, &encode_trajectory(traj, grid)?)
}

pub fn read_trajectory(path: &Path, grid: &Grid) -> Result<Trajectory> {
    decode_trajectory(&fs::read(path)?, grid)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObsHeader {
    format: String,
    truth_id: String,
    seed: u64,
    window_start: f64,
    window_length: f64,
    batches_per_window: usize,
    n_batches: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObsRecord {
    layer: usize,
    x: f64,
    y: f64,
    value: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObsLine {
    time: f64,
    obs_var: f64,
    obs: Vec<ObsRecord>,
}

const OBS_FORMAT: &str = "qgml-obs/1";

/// A header line, then one line per batch.
pub fn encode_obs(db: &ObsDatabase) -> Result<Vec<u8>> {
    let header = ObsHeader {
        format: OBS_FORMAT.into(),
        truth_id: db.truth_id.clone(),
        seed: db.seed,
        window_start: db.window_start,
        window_length: db.window_length,
        batches_per_window: db.batches_per_window,
        n_batches: db.batches.len(),
    };
    let mut out = serde_json::to_vec(&header)?;
    out.push(b'\n');
    for b in &db.batches {
        let line = ObsLine {
            time: b.time,
            obs_var: b.obs_var,
            obs: b
                .locations
                .iter()
                .zip(&b.values)
                .map(|(l, &value)| ObsRecord {
                    layer: l.layer,
                    x: l.x,
                    y: l.y,
                    value,
                })
                .collect(),
        };
        serde_json::to_writer(&mut out, &line)?;
        out.push(b'\n');
    }
    Ok(out)
}

pub fn decode_obs(bytes: &[u8]) -> Result<ObsDatabase> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::Format(format!("observations: {e}")))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: ObsHeader = serde_json::from_str(
        lines.next().ok_or_else(|| Error::Format("observations: empty file".into()))?,
    )
    .map_err(|e| Error::Format(format!("observations header: {e}")))?;
    if header.format != OBS_FORMAT {
        return Err(Error::Format(format!(
            "observations: format {:?}, expected {OBS_FORMAT:?}",
            header.format
        )));
    }
    let mut batches = Vec::with_capacity(header.n_batches);
    for (k, l) in lines.enumerate() {
        let line: ObsLine =
            serde_json::from_str(l).map_err(|e| Error::Format(format!("observations line {}: {e}", k + 2)))?;
        batches.push(ObsBatch {
            time: line.time,
            obs_var: line.obs_var,
            locations: line
                .obs
                .iter()
                .map(|o| ObsLocation {
                    layer: o.layer,
                    x: o.x,
                    y: o.y,
                })
                .collect(),
            values: line.obs.iter().map(|o| o.value).collect(),
        });
    }
    if batches.len() != header.n_batches {
        return Err(Error::Format(format!(
            "observations truncated: {} of {} batches",
            batches.len(),
            header.n_batches
        )));
    }
    let db = ObsDatabase {
        window_start: header.window_start,
        window_length: header.window_length,
        batches_per_window: header.batches_per_window,
        batches,
        truth_id: header.truth_id,
        seed: header.seed,
    };
    db.validate()?;
    Ok(db)
}

pub fn write_obs(path: &Path, db: &ObsDatabase) -> Result<()> {
    write_atomic(path, &encode_obs(db)?)
}

pub fn read_obs(path: &Path) -> Result<ObsDatabase> {
    decode_obs(&fs::read(path)?)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetFooter {
    source_id: String,
    normalizer: Option<Normalizer>,
}

/// τ is stored as a count of reference steps.
pub fn dataset_tau_unit() -> f64 {
    units::minutes(10.0)
}

pub fn encode_dataset(db: &TrainingDatabase, grid: &Grid) -> Result<Vec<u8>> {
    let n = grid.size();
    let tau_steps = units::whole_steps(db.config.tau, dataset_tau_unit())?;
    let mut out = Vec::with_capacity(37 + db.len() * n * 16);
    out.extend_from_slice(DATASET_MAGIC);
    out.extend_from_slice(&(db.len() as u64).to_le_bytes());
    for v in [N_LAYERS, grid.ny, grid.nx] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&(tau_steps as u64).to_le_bytes());
    out.push(match db.config.source {
        Source::Analysis => 0,
        Source::Truth => 1,
    });
    for p in &db.pairs {
        if p.input.len() != n || p.target.len() != n {
            return Err(Error::Dimension {
                expected: n,
                got: p.input.len().max(p.target.len()),
            });
        }
        put_f64s(&mut out, &p.input);
        put_f64s(&mut out, &p.target);
    }
    serde_json::to_writer(
        &mut out,
        &DatasetFooter {
            source_id: db.source_id.clone(),
            normalizer: db.normalizer,
        },
    )?;
    Ok(out)
}

pub fn decode_dataset(bytes: &[u8], grid: &Grid) -> Result<TrainingDatabase> {
    let mut r = Reader::new(bytes, "dataset");
    r.magic(DATASET_MAGIC)?;
    let n_samples = r.u64()? as usize;
    let (nl, ny, nx) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
    if (nl, ny, nx) != (N_LAYERS, grid.ny, grid.nx) {
        return Err(Error::Format(format!(
            "dataset dims {nl}×{ny}×{nx} differ from the grid"
        )));
    }
    let tau = r.u64()? as f64 * dataset_tau_unit();
    let source = match r.u8()? {
        0 => Source::Analysis,
        1 => Source::Truth,
        f => return Err(Error::Format(format!("dataset: unknown source flag {f}"))),
    };
    let n = grid.size();
    let mut pairs = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let input = r.f64s(n)?;
        let target = r.f64s(n)?;
        pairs.push(SamplePair { input, target });
    }
    let footer: DatasetFooter =
        serde_json::from_slice(r.rest()).map_err(|e| Error::Format(format!("dataset footer: {e}")))?;
    Ok(TrainingDatabase {
        pairs,
        config: DatasetConfig {
            tau,
            n_samples,
            source,
        },
        source_id: footer.source_id,
        normalizer: footer.normalizer,
    })
}

pub fn write_dataset(path: &Path, db: &TrainingDatabase, grid: &Grid) -> Result<()> {
    write_atomic(path, &encode_dataset(db, grid)?)
}

pub fn read_dataset(path: &Path, grid: &Grid) -> Result<TrainingDatabase> {
    decode_dataset(&fs::read(path)?, grid)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerWeights {
    /// Position in `spec.layers`.
    pub layer: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSummary {
    pub epochs: usize,
    pub best_epoch: usize,
    pub best_valid_mse: Option<f64>,
    pub final_train_mse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsFile {
    pub format: String,
    pub spec: NetworkSpec,
    pub normalizer: Normalizer,
    pub seed: u64,
    pub layers: Vec<LayerWeights>,
    pub training: TrainingSummary,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

pub fn weights_file(net: &TrainedNetwork) -> Result<WeightsFile> {
    let layers = net
        .network()
        .layer_slices()
        .into_iter()
        .enumerate()
        .filter(|(_, (w, b))| !(w.is_empty() && b.is_empty()))
        .map(|(layer, (w, b))| LayerWeights {
            layer,
            weights: net.params[w].to_vec(),
            biases: net.params[b].to_vec(),
        })
        .collect();
    Ok(WeightsFile {
        format: WEIGHTS_FORMAT.into(),
        spec: net.spec.clone(),
        normalizer: net.normalizer,
        seed: net.seed,
        layers,
        training: TrainingSummary {
            epochs: net.history.len(),
            best_epoch: net.best_epoch,
            best_valid_mse: finite(net.best_valid_mse),
            final_train_mse: net.history.last().and_then(|h: &EpochRecord| finite(h.train_mse)),
        },
    })
}

pub fn network_from_weights(file: &WeightsFile) -> Result<TrainedNetwork> {
    if file.format != WEIGHTS_FORMAT {
        return Err(Error::Format(format!(
            "weights: format {:?}, expected {WEIGHTS_FORMAT:?}",
            file.format
        )));
    }
    let slices = Network::new(&file.spec)?.layer_slices();
    let total = slices.last().map_or(0, |(_, b)| b.end);
    let mut params = vec![0.0; total];
    let mut seen = vec![false; slices.len()];
    for lw in &file.layers {
        let (w, b) = slices
            .get(lw.layer)
            .cloned()
            .ok_or_else(|| Error::Format(format!("weights: no layer {}", lw.layer)))?;
        if lw.weights.len() != w.len() || lw.biases.len() != b.len() || seen[lw.layer] {
            return Err(Error::Format(format!("weights: layer {} has the wrong size", lw.layer)));
        }
        seen[lw.layer] = true;
        params[w].copy_from_slice(&lw.weights);
        params[b].copy_from_slice(&lw.biases);
    }
    if let Some(k) = slices.iter().enumerate().position(|(k, (w, b))| !seen[k] && !(w.is_empty() && b.is_empty())) {
        return Err(Error::Format(format!("weights: layer {k} missing")));
    }
    let mut net = TrainedNetwork::new(file.spec.clone(), params, file.normalizer, file.seed)?;
    net.best_epoch = file.training.best_epoch;
    net.best_valid_mse = file.training.best_valid_mse.unwrap_or(f64::NAN);
    Ok(net)
}

pub fn write_weights(path: &Path, net: &TrainedNetwork) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(&weights_file(net)?)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn read_weights(path: &Path) -> Result<TrainedNetwork> {
    let file: WeightsFile =
        serde_json::from_slice(&fs::read(path)?).map_err(|e| Error::Format(format!("weights: {e}")))?;
    network_from_weights(&file)
}

/// CSV cell text: shortest round-trip decimal, empty for `None`.
pub trait CsvField {
    fn field(&self) -> String;
}

impl CsvField for f64 {
    fn field(&self) -> String {
        format!("{self}")
    }
}

impl CsvField for usize {
    fn field(&self) -> String {
        self.to_string()
    }
}

impl CsvField for bool {
    fn field(&self) -> String {
        self.to_string()
    }
}

impl CsvField for str {
    fn field(&self) -> String {
        self.to_string()
    }
}

impl CsvField for String {
    fn field(&self) -> String {
        self.as_str().field()
    }
}

impl<T: CsvField> CsvField for Option<T> {
    fn field(&self) -> String {
        self.as_ref().map(|v| v.field()).unwrap_or_default()
    }
}

pub fn csv(header: &[&str], rows: &[Vec<String>]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let fmt = |e: csv::Error| Error::Format(format!("csv: {e}"));
    w.write_record(header).map_err(fmt)?;
    for r in rows {
        w.write_record(r).map_err(fmt)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(format!("csv: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(format!("csv: {e}")))
}

pub const ANALYSIS_CSV_HEADER: [&str; 5] = ["window_index", "analysis_rmse", "background_rmse", "final_cost", "iterations"];
pub const SKILL_CSV_HEADER: [&str; 4] = ["lead_days", "fs_original", "fs_hybrid", "variability"];
pub const SWEEP_CSV_HEADER: [&str; 8] = [
    "label",
    "tau_days",
    "n_samples",
    "nmse_increments",
    "nmse_truth",
    "fs_8d",
    "analysis_rmse",
    "error",
];

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisRow {
    pub window_index: usize,
    pub analysis_rmse: f64,
    pub background_rmse: f64,
    pub final_cost: f64,
    pub iterations: usize,
}

pub fn analysis_csv(rows: &[AnalysisRow]) -> Result<String> {
    let rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.window_index.field(),
                r.analysis_rmse.field(),
                r.background_rmse.field(),
                r.final_cost.field(),
                r.iterations.field(),
            ]
        })
        .collect();
    csv(&ANALYSIS_CSV_HEADER, &rows)
}

/// Rows `lead, original, hybrid, variability`; the hybrid column is empty
/// when absent.
pub fn skill_csv(
    original: &crate::evaluation::SkillCurve,
    hybrid: Option<&crate::evaluation::SkillCurve>,
    variability: f64,
) -> Result<String> {
    if let Some(h) = hybrid {
        if h.lead_days != original.lead_days {
            return Err(Error::Format("skill curves use different leads".into()));
        }
    }
    let rows: Vec<Vec<String>> = original
        .lead_days
        .iter()
        .enumerate()
        .map(|(k, d)| {
            vec![
                d.field(),
                original.values[k].field(),
                hybrid.map(|h| h.values[k]).field(),
                variability.field(),
            ]
        })
        .collect();
    csv(&SKILL_CSV_HEADER, &rows)
}

pub fn sweep_csv(records: &[crate::evaluation::SweepRecord]) -> Result<String> {
    let rows: Vec<Vec<String>> = records
        .iter()
        .map(|r| {
            vec![
                r.label.field(),
                r.tau_days.field(),
                r.n_samples.field(),
                r.nmse_increments.field(),
                r.nmse_truth.field(),
                r.fs_lead.field(),
                r.analysis_rmse.field(),
                r.error.field(),
            ]
        })
        .collect();
    csv(&SWEEP_CSV_HEADER, &rows)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, text.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{Activation, NetworkSpec};
    use crate::observations::{generate_obs, ObsConfig};
    use crate::qg::{JetInit, QgModel};
    use crate::units::{days, hours};

    fn traj() -> (Trajectory, Grid) {
        let m = QgModel::reference();
        let g = *m.grid();
        let t = m
            .generate_trajectory(&JetInit::default().state(&g), 0.0, hours(6.0), hours(1.0))
            .unwrap();
        (t, g)
    }

    #[test]
    fn trajectory_bytes_round_trip() {
        let (t, g) = traj();
        let a = encode_trajectory(&t, &g).unwrap();
        assert_eq!(&a[..4], b"QGT1");
        assert_eq!(a.len(), 4 + 12 + 8 + 16 + 7 * 1600 * 8);
        let back = decode_trajectory(&a, &g).unwrap();
        for (x, y) in back.states.iter().zip(&t.states) {
            assert_eq!(x.psi, y.psi);
            assert!((x.time - y.time).abs() < 1e-12);
        }
        assert_eq!(encode_trajectory(&back, &g).unwrap(), a);
    }

    #[test]
    fn trajectory_format_errors() {
        let (t, g) = traj();
        let mut a = encode_trajectory(&t, &g).unwrap();
        let msg = decode_trajectory(&a[..a.len() - 3], &g).unwrap_err().to_string();
        assert!(msg.contains("truncated"), "{msg}");
        a[0] = b'X';
        match decode_trajectory(&a, &g) {
            Err(Error::Format(m)) => assert!(m.contains("magic")),
            other => panic!("{other:?}"),
        }
        let other = Grid::new(20, 20, 6.0, 6.3).unwrap();
        assert!(decode_trajectory(&encode_trajectory(&t, &g).unwrap(), &other).is_err());
    }

    #[test]
    fn obs_round_trip() {
        let m = QgModel::reference();
        let g = *m.grid();
        let t = m
            .generate_trajectory(&JetInit::default().state(&g), 0.0, days(2.0), hours(1.0))
            .unwrap();
        let db = generate_obs(&g, &t, &ObsConfig::default(), "truth-0").unwrap();
        let bytes = encode_obs(&db).unwrap();
        let back = decode_obs(&bytes).unwrap();
        assert_eq!(back, db);
        assert_eq!(encode_obs(&back).unwrap(), bytes);
        let cut = &bytes[..bytes.len() / 2];
        let cut = &cut[..cut.iter().rposition(|&b| b == b'\n').unwrap() + 1];
        assert!(decode_obs(cut).is_err());
    }

    fn small_db() -> TrainingDatabase {
        let g = Grid::default();
        TrainingDatabase {
            pairs: (0..3)
                .map(|k| SamplePair {
                    input: (0..g.size()).map(|i| (i * k) as f64 * 1e-3).collect(),
                    target: (0..g.size()).map(|i| ((i + k) as f64).sin()).collect(),
                })
                .collect(),
            config: DatasetConfig {
                tau: days(1.0),
                n_samples: 3,
                source: Source::Truth,
            },
            source_id: "truth-3".into(),
            normalizer: None,
        }
    }

    #[test]
    fn dataset_round_trip() {
        let g = Grid::default();
        let db = small_db().with_normalizer().unwrap();
        let bytes = encode_dataset(&db, &g).unwrap();
        assert_eq!(&bytes[..4], b"QGD1");
        let back = decode_dataset(&bytes, &g).unwrap();
        assert_eq!(back.pairs, db.pairs);
        assert_eq!(back.normalizer, db.normalizer);
        assert_eq!(back.config.source, Source::Truth);
        assert!((back.config.tau - db.config.tau).abs() < 1e-12);
        assert_eq!(encode_dataset(&back, &g).unwrap(), bytes);
        assert!(decode_dataset(&bytes[..100], &g).is_err());
        let mut bad = bytes.clone();
        bad[1] = b'x';
        assert!(matches!(decode_dataset(&bad, &g), Err(Error::Format(_))));
    }

    #[test]
    fn weights_round_trip_forward_identical() {
        let field = (2, 20, 40);
        for spec in [
            NetworkSpec::dense(field, 1, 4, Activation::Linear),
            NetworkSpec::conv_dense(field, 1, 4, Activation::Relu),
        ] {
            let params = Network::new(&spec).unwrap().init_params(9);
            let norm = Normalizer {
                input_mean: 0.1,
                input_std: 2.0,
                output_mean: -0.01,
                output_std: 0.3,
            };
            let net = TrainedNetwork::new(spec, params, norm, 9).unwrap();
            let text = serde_json::to_string(&weights_file(&net).unwrap()).unwrap();
            let back = network_from_weights(&serde_json::from_str(&text).unwrap()).unwrap();
            assert_eq!(back.params, net.params);
            let x: Vec<f64> = (0..1600).map(|i| (i as f64 * 0.37).cos()).collect();
            let (a, b) = (net.predict(&x).unwrap(), back.predict(&x).unwrap());
            assert!(a.iter().zip(&b).all(|(u, v)| (u - v).abs() <= 1e-15));
        }
    }

    #[test]
    fn csv_layout() {
        let rows = [AnalysisRow {
            window_index: 0,
            analysis_rmse: 0.25,
            background_rmse: 0.5,
            final_cost: 12.0,
            iterations: 7,
        }];
        let s = analysis_csv(&rows).unwrap();
        assert_eq!(s, "window_index,analysis_rmse,background_rmse,final_cost,iterations\n0,0.25,0.5,12,7\n");
        let quoted = csv(&["a"], &[vec!["x,y".to_string()]]).unwrap();
        assert_eq!(quoted, "a\n\"x,y\"\n");
        assert!(csv(&["a", "b"], &[vec!["1".into()]]).is_err());
        assert_eq!(None::<f64>.field(), "");
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/x.txt");
        write_text(&p, "one").unwrap();
        write_text(&p, "two").unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "two");
        assert_eq!(fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }
}
