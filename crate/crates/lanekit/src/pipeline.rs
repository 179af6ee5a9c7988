//! Pipeline stages. Each stage reads upstream artifacts from the output
//! directory, writes its own under `<out>/<stage>/`, and records a manifest
//! under `<out>/manifests/`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use lanekit_core::context::feature_names;
use lanekit_core::dataset::{extract_events, featurize_labels, label_events, split_by_vehicle, summarize as summarize_labels, LabelRecord, LabeledInstance};
use lanekit_core::forest::{evaluate_instances, train_instances, Forest, Metrics};
use lanekit_core::sim::{compare_to_ground_truth, replay_simulate, sensitivity_sweep, spearman, summarize as summarize_sim, ComparisonMetrics, Scenario, SimSummary};
use lanekit_core::synth::synth_tracks;
use lanekit_core::trajdata::{assemble_tracks, smooth_track, IngestReport, SceneIndex, VehicleTrack};
use lanekit_core::{Direction, Manoeuvre};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::io::{self, EventRow, ImportanceRow};

pub const TRACKS_JSON: &str = "ingest/tracks.json";
pub const TRACKS_CSV: &str = "ingest/tracks.csv";
pub const INGEST_REPORT: &str = "ingest/report.json";
pub const EVENTS_CSV: &str = "label/events.csv";
pub const LABELS_CSV: &str = "label/labels.csv";
pub const LABEL_SUMMARY: &str = "label/summary.json";
pub const FEATURES_CSV: &str = "featurize/features.csv";
pub const FEATURES_META: &str = "featurize/features.json";
pub const FOREST_JSON: &str = "train/forest.json";
pub const IMPORTANCE_CSV: &str = "train/importance.csv";
pub const SPLIT_JSON: &str = "train/split.json";
pub const METRICS_JSON: &str = "eval/metrics.json";
pub const SIM_LOG_CSV: &str = "simulate/log.csv";
pub const SIM_LOG_JSON: &str = "simulate/log.json";
pub const SIM_OVERLAY_CSV: &str = "simulate/overlay.csv";
pub const SIM_SUMMARY: &str = "simulate/summary.json";
pub const SWEEP_CSV: &str = "sweep/sensitivity.csv";
pub const SWEEP_SUMMARY: &str = "sweep/summary.json";
pub const SYNTH_TRACKS: &str = "synth/tracks.csv";
pub const MANIFEST_DIR: &str = "manifests";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Synth,
    Ingest,
    Label,
    Featurize,
    Train,
    Eval,
    Simulate,
    Sweep,
}

impl Stage {
    pub const PIPELINE: [Stage; 7] = [Stage::Ingest, Stage::Label, Stage::Featurize, Stage::Train, Stage::Eval, Stage::Simulate, Stage::Sweep];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::Ingest => "ingest",
            Stage::Label => "label",
            Stage::Featurize => "featurize",
            Stage::Train => "train",
            Stage::Eval => "eval",
            Stage::Simulate => "simulate",
            Stage::Sweep => "sweep",
        }
    }
}

/// Resolved configuration and locations of one invocation.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub config: RunConfig,
    pub out: PathBuf,
    /// Raw data file, already resolved against the data root.
    pub data: Option<PathBuf>,
}

impl Workspace {
    pub fn new(config: RunConfig, out: PathBuf, data: Option<PathBuf>) -> Result<Self> {
        config.validate()?;
        Ok(Workspace { config, out, data })
    }

    fn path(&self, artifact: &str) -> PathBuf {
        self.out.join(artifact)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub version: String,
    pub config_sha256: String,
    pub seed: u64,
    /// Artifact name to SHA-256 of its bytes.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Serialize)]
struct RunMetadata {
    stage: &'static str,
    started_unix_s: u64,
    elapsed_s: f64,
}

/// Tracks the inputs read and outputs written by one stage.
struct StageRun<'a> {
    ws: &'a Workspace,
    stage: Stage,
    started: (SystemTime, Instant),
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
}

impl<'a> StageRun<'a> {
    fn new(ws: &'a Workspace, stage: Stage) -> Self {
        StageRun { ws, stage, started: (SystemTime::now(), Instant::now()), inputs: BTreeMap::new(), outputs: BTreeMap::new() }
    }

    fn read(&mut self, artifact: &str, producer: &'static str) -> Result<Vec<u8>> {
        let bytes = io::read_bytes(&self.ws.path(artifact), producer)?;
        self.inputs.insert(artifact.to_string(), io::sha256_hex(&bytes));
        Ok(bytes)
    }

    fn read_json<T: serde::de::DeserializeOwned>(&mut self, artifact: &str, producer: &'static str) -> Result<T> {
        let bytes = self.read(artifact, producer)?;
        io::from_json(&self.ws.path(artifact), &bytes)
    }

    fn read_external(&mut self, path: &Path, key: String, producer: &'static str) -> Result<Vec<u8>> {
        let bytes = io::read_bytes(path, producer)?;
        self.inputs.insert(key, io::sha256_hex(&bytes));
        Ok(bytes)
    }

    fn write(&mut self, artifact: &str, bytes: &[u8]) -> Result<()> {
        write_file(&self.ws.path(artifact), bytes)?;
        self.outputs.insert(artifact.to_string(), io::sha256_hex(bytes));
        Ok(())
    }

    fn write_json<T: Serialize + ?Sized>(&mut self, artifact: &str, value: &T) -> Result<()> {
        self.write(artifact, &io::to_json(value)?)
    }

    fn finish(self) -> Result<Manifest> {
        let cfg = &self.ws.config;
        let manifest = Manifest {
            stage: self.stage.name().to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_sha256: cfg.hash()?,
            seed: cfg.seed,
            inputs: self.inputs,
            outputs: self.outputs,
        };
        let dir = self.ws.path(MANIFEST_DIR);
        write_file(&dir.join(format!("{}.json", self.stage.name())), &io::to_json(&manifest)?)?;
        let meta = RunMetadata {
            stage: self.stage.name(),
            started_unix_s: self.started.0.duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            elapsed_s: self.started.1.elapsed().as_secs_f64(),
        };
        write_file(&dir.join(format!("{}.meta.json", self.stage.name())), &io::to_json(&meta)?)?;
        Ok(manifest)
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub assembly: IngestReport,
    /// Segments too short to smooth, dropped as `(vehicle_id, segment)`.
    pub dropped_short: Vec<(i64, u32)>,
    pub tracks: usize,
}

/// Writes a synthetic raw corpus under the configured schema.
pub fn synth(ws: &Workspace) -> Result<Manifest> {
    let mut run = StageRun::new(ws, Stage::Synth);
    let (rows, road) = synth_tracks(&ws.config.synth)?;
    if road != ws.config.road {
        return Err(CliError::Config(format!(
            "synth produces lane markings {:?} but road.markings is {:?}",
            road.markings(),
            ws.config.road.markings()
        )));
    }
    run.write(SYNTH_TRACKS, &io::raw_samples_csv(&rows, &ws.config.schema)?)?;
    run.finish()
}

fn data_key(ws: &Workspace, data: &Path) -> String {
    match data.strip_prefix(&ws.out) {
        Ok(rel) => rel.to_string_lossy().replace('\\', "/"),
        Err(_) => format!("data/{}", data.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned())),
    }
}

pub fn ingest(ws: &Workspace) -> Result<Manifest> {
    let mut run = StageRun::new(ws, Stage::Ingest);
    let data = ws.data.clone().ok_or_else(|| CliError::Config("no data file: set paths.data, pass --data, or run `all` to synthesise one".into()))?;
    let bytes = run.read_external(&data, data_key(ws, &data), "synth")?;
    let schema = &ws.config.schema;
    let rows = io::parse_raw_samples(&data, &bytes, schema)?;
    let (raw, assembly) = assemble_tracks(rows, schema.ts, schema.max_gap)?;
    let mut tracks = Vec::with_capacity(raw.len());
    let mut dropped_short = Vec::new();
    for t in raw {
        if t.len() < 3 {
            dropped_short.push((t.vehicle_id, t.segment));
            continue;
        }
        tracks.push(smooth_track(&t, &ws.config.smoothing)?);
    }
    let summary = IngestSummary { assembly, dropped_short, tracks: tracks.len() };
    run.write_json(TRACKS_JSON, &tracks)?;
    run.write(TRACKS_CSV, &io::tracks_csv(&tracks, schema)?)?;
    run.write_json(INGEST_REPORT, &summary)?;
    run.finish()
}

pub fn label(ws: &Workspace) -> Result<Manifest> {
    let mut run = StageRun::new(ws, Stage::Label);
    let tracks: Vec<VehicleTrack> = run.read_json(TRACKS_JSON, "ingest")?;
    let cfg = &ws.config;
    let scene = SceneIndex::new(&tracks);
    let mut events = extract_events(&tracks, &cfg.road, &scene, &cfg.events);
    let labels = label_events(&tracks, &mut events, &cfg.events, &cfg.features, cfg.seed);
    let rows: Vec<EventRow> = events.iter().map(EventRow::from).collect();
    run.write(EVENTS_CSV, &io::serde_csv(&rows)?)?;
    run.write(LABELS_CSV, &io::labels_csv(&labels)?)?;
    run.write_json(LABEL_SUMMARY, &summarize_labels(tracks.len(), &events, &labels))?;
    run.finish()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMeta {
    pub feature_names: Vec<String>,
    pub config: lanekit_core::context::FeatureConfig,
    pub instances: usize,
}

pub fn featurize(ws: &Workspace) -> Result<Manifest> {
    let mut run = StageRun::new(ws, Stage::Featurize);
    let tracks: Vec<VehicleTrack> = run.read_json(TRACKS_JSON, "ingest")?;
    let label_bytes = run.read(LABELS_CSV, "label")?;
    let labels: Vec<LabelRecord> = io::parse_serde_csv(&ws.path(LABELS_CSV), &label_bytes)?;
    let cfg = &ws.config;
    let scene = SceneIndex::new(&tracks);
    let instances = featurize_labels(&tracks, &labels, &cfg.road, &scene, &cfg.features)?;
    let names = feature_names(cfg.features.n_past, cfg.features.step_gap);
    run.write(FEATURES_CSV, &io::features_csv(&instances, &names)?)?;
    run.write_json(FEATURES_META, &FeatureMeta { feature_names: names, config: cfg.features.clone(), instances: instances.len() })?;
    run.finish()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRecord {
    pub test_fraction: f64,
    pub seed: u64,
    pub train_vehicles: Vec<i64>,
    pub test_vehicles: Vec<i64>,
}

fn vehicles(instances: &[LabeledInstance]) -> Vec<i64> {
    let mut ids: Vec<i64> = instances.iter().map(|i| i.vehicle_id).collect();
    ids.sort_unstable();
    ids.dedup();
    ids
}

pub fn train(ws: &Workspace) -> Result<Manifest> {
    let mut run = StageRun::new(ws, Stage::Train);
    let bytes = run.read(FEATURES_CSV, "featurize")?;
    let (instances, names) = io::parse_features_csv(&ws.path(FEATURES_CSV), &bytes)?;
    let cfg = &ws.config;
    let (train_set, test_set, _) = split_by_vehicle(&instances, cfg.split.test_fraction, cfg.seed)?;
    let forest = train_instances(&train_set, names, &cfg.forest)?;
    let importance: Vec<ImportanceRow> =
        forest.feature_importance().into_iter().enumerate().map(|(i, (feature, importance))| ImportanceRow { rank: i + 1, feature: feature.to_string(), importance }).collect();
    let split = SplitRecord { test_fraction: cfg.split.test_fraction, seed: cfg.seed, train_vehicles: vehicles(&train_set), test_vehicles: vehicles(&test_set) };
    run.write_json(FOREST_JSON, &forest)?;
    run.write(IMPORTANCE_CSV, &io::serde_csv(&importance)?)?;
    run.write_json(SPLIT_JSON, &split)?;
    run.finish()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub test: Metrics,
    pub train: Metrics,
    pub oob_accuracy: Option<f64>,
    pub n_trees: usize,
    /// Accuracy of always predicting the majority training class.
    pub majority_baseline: f64,
}

pub fn eval(ws: &Workspace) -> Result<Manifest> {
    let mut run = StageRun::new(ws, Stage::Eval);
    let forest: Forest = run.read_json(FOREST_JSON, "train")?;
    forest.validate()?;
    let split: SplitRecord = run.read_json(SPLIT_JSON, "train")?;
    let bytes = run.read(FEATURES_CSV, "featurize")?;
    let (instances, _) = io::parse_features_csv(&ws.path(FEATURES_CSV), &bytes)?;
    let (test_set, train_set): (Vec<LabeledInstance>, Vec<LabeledInstance>) = instances.into_iter().partition(|i| split.test_vehicles.binary_search(&i.vehicle_id).is_ok());
    let test = evaluate_instances(&forest, &test_set)?;
    let train = evaluate_instances(&forest, &train_set)?;
    let changes = train_set.iter().filter(|i| i.label == Manoeuvre::LaneChange).count();
    let majority = if 2 * changes > train_set.len() { Manoeuvre::LaneChange } else { Manoeuvre::LaneKeep };
    let majority_baseline = if test_set.is_empty() { 0.0 } else { test_set.iter().filter(|i| i.label == majority).count() as f64 / test_set.len() as f64 };
    let report = EvalReport { test, train, oob_accuracy: forest.oob_accuracy, n_trees: forest.n_trees(), majority_baseline };
    run.write_json(METRICS_JSON, &report)?;
    run.finish()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub ego_id: i64,
    pub start_frame: i64,
    pub end_frame: i64,
    pub summary: SimSummary,
    pub comparison: ComparisonMetrics,
}

pub fn simulate(ws: &Workspace) -> Result<Manifest> {
    let mut run = StageRun::new(ws, Stage::Simulate);
    let forest: Forest = run.read_json(FOREST_JSON, "train")?;
    forest.validate()?;
    let tracks: Vec<VehicleTrack> = run.read_json(TRACKS_JSON, "ingest")?;
    let cfg = &ws.config;
    let ego_id = match cfg.sim.ego_id {
        Some(id) => id,
        None => {
            let bytes = run.read(EVENTS_CSV, "label")?;
            let events: Vec<EventRow> = io::parse_serde_csv(&ws.path(EVENTS_CSV), &bytes)?;
            events
                .iter()
                .filter(|e| e.direction == Direction::Left)
                .min_by_key(|e| (e.excluded, e.vehicle_id, e.segment, e.crossing_frame))
                .map(|e| e.vehicle_id)
                .ok_or_else(|| CliError::Config("no left lane change to replay; set sim.ego_id".into()))?
        }
    };
    let gt = tracks
        .iter()
        .filter(|t| t.vehicle_id == ego_id)
        .find(|t| cfg.sim.start_frame.is_none_or(|f| t.contains(f)))
        .ok_or_else(|| CliError::Config(format!("vehicle {ego_id} has no track covering the start frame")))?;
    let start_frame = cfg.sim.start_frame.unwrap_or(gt.first_frame());
    let end_frame = cfg.sim.end_frame.unwrap_or(gt.last_frame());
    let scenario = Scenario { ego_id, start_frame, end_frame, tracks: tracks.clone(), road: cfg.road.clone(), initial: None };
    let sim_cfg = cfg.sim_config();
    let log = replay_simulate(&scenario, &forest, &sim_cfg)?;
    let comparison = compare_to_ground_truth(&log, gt, &cfg.road, &cfg.events, cfg.sim.completion_tol)?;
    let report = SimReport { ego_id, start_frame, end_frame, summary: summarize_sim(&log, &cfg.road), comparison };
    run.write(SIM_LOG_CSV, &io::sim_log_csv(&log)?)?;
    run.write_json(SIM_LOG_JSON, &log)?;
    run.write(SIM_OVERLAY_CSV, &io::overlay_csv(&log, gt)?)?;
    run.write_json(SIM_SUMMARY, &report)?;
    run.finish()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub feature: String,
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
    pub frozen: Vec<f64>,
    /// Rank correlation between the swept value and `p(lane_change)`.
    pub spearman: Option<f64>,
}

pub fn sweep(ws: &Workspace) -> Result<Manifest> {
    let mut run = StageRun::new(ws, Stage::Sweep);
    let forest: Forest = run.read_json(FOREST_JSON, "train")?;
    forest.validate()?;
    let p = &ws.config.sweep;
    // a base-length vector is repeated across history blocks
    let frozen: Vec<f64> = if p.frozen.len() < forest.dimension() && !p.frozen.is_empty() && forest.dimension().is_multiple_of(p.frozen.len()) {
        p.frozen.iter().copied().cycle().take(forest.dimension()).collect()
    } else {
        p.frozen.clone()
    };
    let points = sensitivity_sweep(&forest, &frozen, &p.feature, p.lo, p.hi, p.step)?;
    let xs: Vec<f64> = points.iter().map(|q| q.value).collect();
    let ps: Vec<f64> = points.iter().map(|q| q.lane_change).collect();
    let report = SweepReport { feature: p.feature.clone(), lo: p.lo, hi: p.hi, step: p.step, frozen, spearman: spearman(&xs, &ps) };
    run.write(SWEEP_CSV, &io::sweep_csv(&p.feature, &points)?)?;
    run.write_json(SWEEP_SUMMARY, &report)?;
    run.finish()
}

pub fn run_stage(ws: &Workspace, stage: Stage) -> Result<Manifest> {
    match stage {
        Stage::Synth => synth(ws),
        Stage::Ingest => ingest(ws),
        Stage::Label => label(ws),
        Stage::Featurize => featurize(ws),
        Stage::Train => train(ws),
        Stage::Eval => eval(ws),
        Stage::Simulate => simulate(ws),
        Stage::Sweep => sweep(ws),
    }
}

/// The whole chain. Without a data file a synthetic corpus is generated
/// first and ingested.
pub fn run_all(ws: &Workspace) -> Result<Vec<Manifest>> {
    let mut ws = ws.clone();
    let mut manifests = Vec::new();
    if ws.data.is_none() {
        manifests.push(synth(&ws)?);
        ws.data = Some(ws.path(SYNTH_TRACKS));
    }
    for stage in Stage::PIPELINE {
        manifests.push(run_stage(&ws, stage)?);
    }
    Ok(manifests)
}
