//! Run configuration: one TOML document with a section per stage.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use lanekit_core::context::FeatureConfig;
use lanekit_core::events::EventConfig;
use lanekit_core::forest::TrainConfig;
use lanekit_core::planner::PlannerConfig;
use lanekit_core::sim::SimConfig;
use lanekit_core::synth::TrackConfig;
use lanekit_core::trajdata::{RoadGeometry, SmoothingConfig, DEFAULT_MAX_GAP};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

/// Environment variable against which a relative data path is resolved.
pub const DATA_ROOT_ENV: &str = "LANEKIT_DATA_ROOT";

pub const FEET_TO_METRES: f64 = 0.3048;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    /// Raw trajectory CSV. When absent, `all` generates a synthetic corpus.
    pub data: Option<PathBuf>,
    pub out: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths { data: None, out: PathBuf::from("out") }
    }
}

/// Mapping from record fields to CSV headers, plus unit handling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Schema {
    pub vehicle_id: String,
    pub frame: String,
    /// Longitudinal position of the vehicle centre.
    pub x: String,
    /// Lateral position of the vehicle centre, increasing with lane id.
    pub y: String,
    pub speed: String,
    pub lane_id: String,
    pub length: String,
    pub width: String,
    /// Lengths and speeds are recorded in feet (and feet per second).
    pub feet: bool,
    /// Sampling period of the recording, s.
    pub ts: f64,
    /// Longest run of missing frames filled by interpolation.
    pub max_gap: i64,
}

impl Default for Schema {
    fn default() -> Self {
        Schema {
            vehicle_id: "vehicle_id".into(),
            frame: "frame".into(),
            x: "x".into(),
            y: "y".into(),
            speed: "speed".into(),
            lane_id: "lane_id".into(),
            length: "length".into(),
            width: "width".into(),
            feet: false,
            ts: 0.1,
            max_gap: DEFAULT_MAX_GAP,
        }
    }
}

impl Schema {
    /// Column names of the NGSIM trajectory files (feet, 10 Hz).
    pub fn ngsim() -> Self {
        Schema {
            vehicle_id: "Vehicle_ID".into(),
            frame: "Frame_ID".into(),
            x: "Local_Y".into(),
            y: "Local_X".into(),
            speed: "v_Vel".into(),
            lane_id: "Lane_ID".into(),
            length: "v_Length".into(),
            width: "v_Width".into(),
            feet: true,
            ..Schema::default()
        }
    }

    /// `(field, header)` pairs in record order.
    pub fn columns(&self) -> [(&'static str, &str); 8] {
        [
            ("vehicle_id", &self.vehicle_id),
            ("frame", &self.frame),
            ("x", &self.x),
            ("y", &self.y),
            ("speed", &self.speed),
            ("lane_id", &self.lane_id),
            ("length", &self.length),
            ("width", &self.width),
        ]
    }

    pub fn unit_scale(&self) -> f64 {
        if self.feet {
            FEET_TO_METRES
        } else {
            1.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    /// Fraction of vehicles held out for evaluation.
    pub test_fraction: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig { test_fraction: 0.2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimParams {
    pub threshold: f64,
    pub completion_tol: f64,
    /// Ego vehicle; defaults to the first vehicle with a retained lane change.
    pub ego_id: Option<i64>,
    pub start_frame: Option<i64>,
    pub end_frame: Option<i64>,
}

impl Default for SimParams {
    fn default() -> Self {
        let d = SimConfig::default();
        SimParams { threshold: d.threshold, completion_tol: d.completion_tol, ego_id: None, start_frame: None, end_frame: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepParams {
    pub feature: String,
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
    /// Values of the base features held fixed during the sweep.
    pub frozen: Vec<f64>,
}

impl Default for SweepParams {
    fn default() -> Self {
        SweepParams {
            feature: "x_FL".into(),
            lo: 0.0,
            hi: 25.0,
            step: 0.5,
            frozen: vec![200.0, 60.0, -6.0, 60.0, 2.0, 0.0, 0.0, -5.0, 40.0, 25.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Drives every random stage: keep-frame sampling, the split, the
    /// forest and the synthetic corpus.
    pub seed: u64,
    pub paths: Paths,
    pub schema: Schema,
    pub road: RoadGeometry,
    pub smoothing: SmoothingConfig,
    pub events: EventConfig,
    pub features: FeatureConfig,
    pub forest: TrainConfig,
    pub split: SplitConfig,
    pub planner: PlannerConfig,
    pub sim: SimParams,
    pub sweep: SweepParams,
    pub synth: TrackConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let synth = TrackConfig::default();
        RunConfig {
            seed: 0,
            paths: Paths::default(),
            schema: Schema::default(),
            road: RoadGeometry::uniform(synth.lanes, synth.lane_width).expect("default road"),
            smoothing: SmoothingConfig::default(),
            events: EventConfig::default(),
            features: FeatureConfig::default(),
            forest: TrainConfig::default(),
            split: SplitConfig::default(),
            planner: PlannerConfig::default(),
            sim: SimParams::default(),
            sweep: SweepParams::default(),
            synth,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Pushes the run seed into every seeded stage.
    pub fn apply_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.forest.seed = seed;
        self.synth.seed = seed;
    }

    pub fn sim_config(&self) -> SimConfig {
        SimConfig { threshold: self.sim.threshold, completion_tol: self.sim.completion_tol, features: self.features.clone(), planner: self.planner.clone() }
    }

    /// SHA-256 of the configuration with the location fields cleared, so
    /// the same settings hash alike wherever they are run.
    pub fn hash(&self) -> Result<String> {
        let mut c = self.clone();
        c.paths = Paths { data: None, out: PathBuf::new() };
        Ok(hex::encode(Sha256::digest(c.to_toml()?.as_bytes())))
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(CliError::Config(msg));
        if !(self.schema.ts > 0.0) {
            return fail(format!("schema.ts must be positive, got {}", self.schema.ts));
        }
        if self.schema.max_gap < 0 {
            return fail(format!("schema.max_gap must be non-negative, got {}", self.schema.max_gap));
        }
        let headers: BTreeMap<&str, &str> = self.schema.columns().iter().map(|&(f, h)| (h, f)).collect();
        if headers.len() != 8 {
            return fail("schema maps two fields to the same column".into());
        }
        if !(self.split.test_fraction > 0.0 && self.split.test_fraction < 1.0) {
            return fail(format!("split.test_fraction must lie in (0, 1), got {}", self.split.test_fraction));
        }
        if !(0.0..1.0).contains(&self.sim.threshold) {
            return fail(format!("sim.threshold must lie in [0, 1), got {}", self.sim.threshold));
        }
        if !(self.sim.completion_tol > 0.0) {
            return fail(format!("sim.completion_tol must be positive, got {}", self.sim.completion_tol));
        }
        if !(self.sweep.step > 0.0 && self.sweep.hi >= self.sweep.lo) {
            return fail(format!("sweep range [{}, {}] with step {} is empty", self.sweep.lo, self.sweep.hi, self.sweep.step));
        }
        self.planner.validate()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_carry_reference_values() {
        let c = RunConfig::default();
        assert_eq!(c.events.threshold, 0.1);
        assert_eq!(c.events.headway_min, 2.0);
        assert_eq!(c.forest.n_trees, 100);
        assert_eq!(c.planner.horizon, 30);
        assert_eq!(c.planner.ts, 0.1);
        assert_eq!(c.sim.threshold, 0.8);
        assert_eq!((c.sweep.lo, c.sweep.hi), (0.0, 25.0));
        c.validate().unwrap();
    }

    #[test]
    fn toml_round_trip_and_partial_sections() {
        let c = RunConfig::default();
        let text = c.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), c);
        let partial = RunConfig::from_toml("seed = 7\n[planner]\nhorizon = 12\n[planner.input_bounds]\naccel = [-3.0, 2.0]\n").unwrap();
        assert_eq!(partial.seed, 7);
        assert_eq!(partial.planner.horizon, 12);
        assert_eq!(partial.planner.input_bounds.accel, [-3.0, 2.0]);
        assert_eq!(partial.planner.input_bounds.steer, c.planner.input_bounds.steer);
        assert_eq!(partial.planner.ts, 0.1);
    }

    #[test]
    fn unknown_shapes_are_rejected() {
        assert!(matches!(RunConfig::from_toml("[planner]\nhorizon = \"long\"\n"), Err(CliError::Config(_))));
        let bad = RunConfig { split: SplitConfig { test_fraction: 1.5 }, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn hash_ignores_locations_only() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.paths.out = PathBuf::from("/elsewhere");
        b.paths.data = Some(PathBuf::from("x.csv"));
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());
        b.apply_seed(3);
        assert_ne!(a.hash().unwrap(), b.hash().unwrap());
    }
}
