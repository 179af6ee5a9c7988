//! Closed-loop replay: recorded vehicles follow their ground truth while the
//! ego perceives, decides, plans and drives a nonlinear plant.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::context::{feature_index, FeatureConfig, Featurizer};
use crate::events::{detect_events, EventConfig, LaneChangeEvent};
use crate::forest::{ClassProbabilities, Forest};
use crate::planner::{
    build_collision_set, decision_lane, road_edge_planes, target_for_lane, CollisionSet, EgoState, Planner, PlannerConfig, SolveStatus, TargetPose,
};
use crate::trajdata::{RawSample, RoadGeometry, SceneIndex, VehicleState, VehicleTrack};
use crate::{Error, Manoeuvre, Result};

/// Kinematic bicycle model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NonlinearPlant {
    pub ts: f64,
    pub wheelbase: f64,
}

impl NonlinearPlant {
    pub fn step(&self, s: &EgoState, u: [f64; 2]) -> EgoState {
        EgoState {
            x: s.x + self.ts * s.v * libm::cos(s.psi),
            y: s.y + self.ts * s.v * libm::sin(s.psi),
            psi: s.psi + self.ts * (s.v / self.wheelbase) * libm::tan(u[0]),
            v: (s.v + self.ts * u[1]).max(0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub ego_id: i64,
    pub start_frame: i64,
    pub end_frame: i64,
    pub tracks: Vec<VehicleTrack>,
    pub road: RoadGeometry,
    pub initial: Option<EgoState>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// A lane change is committed when its probability exceeds this.
    pub threshold: f64,
    /// A committed lane change completes once `|y - y_hat|` drops below this.
    pub completion_tol: f64,
    pub features: FeatureConfig,
    pub planner: PlannerConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig { threshold: 0.8, completion_tol: 0.2, features: FeatureConfig::default(), planner: PlannerConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimStep {
    pub frame: i64,
    pub features: Vec<f64>,
    pub probabilities: ClassProbabilities,
    pub decision: Manoeuvre,
    /// True on the step a lane change is committed.
    pub committed: bool,
    pub target_lane: u32,
    pub target: TargetPose,
    /// Ego state at this frame, before `input` is applied.
    pub state: EgoState,
    pub input: [f64; 2],
    pub status: SolveStatus,
    /// Optimal objective; absent on fallback steps.
    pub objective: Option<f64>,
    /// Braking fallback applied because the plan was not optimal.
    pub fallback: bool,
    /// The ego was outside the safe set; an emergency stop was planned.
    pub emergency: bool,
    /// Smallest half-plane slack of `state` in this step's set.
    pub margin: f64,
    /// Smallest half-plane slack along the optimal plan.
    pub plan_margin: Option<f64>,
    /// The ego footprint overlaps a recorded vehicle.
    pub ghost_conflict: bool,
}

impl SimStep {
    pub fn flagged(&self) -> bool {
        self.fallback || self.emergency
    }
}

fn ego_vehicle(id: i64, s: &EgoState, road: &RoadGeometry, length: f64, width: f64) -> VehicleState {
    VehicleState { id, x: s.x, y: s.y, speed: s.v * libm::cos(s.psi), lane: road.lane_at(s.y), length, width }
}

fn overlaps(a: &VehicleState, b: &VehicleState) -> bool {
    libm::fabs(a.x - b.x) < 0.5 * (a.length + b.length) && libm::fabs(a.y - b.y) < 0.5 * (a.width + b.width)
}

pub fn replay_simulate(scenario: &Scenario, forest: &Forest, cfg: &SimConfig) -> Result<Vec<SimStep>> {
    if scenario.end_frame <= scenario.start_frame {
        return Err(Error::Scenario(format!("end frame {} must follow start frame {}", scenario.end_frame, scenario.start_frame)));
    }
    if !(cfg.threshold >= 0.0 && cfg.threshold < 1.0) {
        return Err(Error::Parameter(format!("threshold must lie in [0, 1), got {}", cfg.threshold)));
    }
    if forest.dimension() != cfg.features.dimension() {
        return Err(Error::Shape { expected: forest.dimension(), got: cfg.features.dimension() });
    }
    let gt = scenario
        .tracks
        .iter()
        .find(|t| t.vehicle_id == scenario.ego_id && t.contains(scenario.start_frame))
        .ok_or_else(|| Error::Scenario(format!("ego {} absent at frame {}", scenario.ego_id, scenario.start_frame)))?;
    // Only the start sample of the ego's own recording is ever read.
    let start = gt.samples[gt.index_of(scenario.start_frame).expect("checked above")];
    let (length, width) = (start.length, start.width);
    let mut state = scenario.initial.unwrap_or(EgoState { x: start.x, y: start.y, psi: 0.0, v: start.speed });
    let scene = SceneIndex::without(&scenario.tracks, scenario.ego_id);
    let road = &scenario.road;
    let planner = Planner::new(cfg.planner.clone())?;
    let plant = NonlinearPlant { ts: cfg.planner.ts, wheelbase: cfg.planner.wheelbase };
    let mut featurizer = Featurizer::new(cfg.features.clone());
    let mut latched: Option<u32> = None;
    let mut log = Vec::with_capacity((scenario.end_frame - scenario.start_frame) as usize);

    for frame in scenario.start_frame..scenario.end_frame {
        let others = scene.snapshot(frame);
        let ego = ego_vehicle(scenario.ego_id, &state, road, length, width);
        featurizer.step(others, &ego, road, frame)?;
        let features = featurizer.stacked().expect("a frame was just added").0;
        let probabilities = forest.predict_proba(&features)?;

        let mut committed = false;
        let target_lane = match latched {
            Some(lane) => lane,
            None if probabilities.lane_change > cfg.threshold => match decision_lane(Manoeuvre::LaneChange, &ego, road) {
                Ok(lane) => {
                    latched = Some(lane);
                    committed = true;
                    lane
                }
                Err(_) => ego.lane,
            },
            None => ego.lane,
        };
        let mut decision = if latched.is_some() { Manoeuvre::LaneChange } else { Manoeuvre::LaneKeep };
        let mut target = target_for_lane(target_lane, others, &ego, road, &cfg.planner)?;

        let mut emergency = false;
        let set = match build_collision_set(others, &ego, road, target_lane, &cfg.planner) {
            Ok(set) => set,
            Err(Error::InfeasibleEnvironment { .. }) => {
                emergency = true;
                latched = None;
                decision = Manoeuvre::LaneKeep;
                target = TargetPose { y_hat: road.lane_centre(ego.lane).unwrap_or(state.y), psi_hat: 0.0, v_hat: 0.0 };
                CollisionSet::uniform(road_edge_planes(road, &cfg.planner), cfg.planner.horizon)
            }
            Err(e) => return Err(e),
        };
        let margin = set.margin(0, state.x, state.y);

        let sol = if set.margin(0, state.x, state.y) > 0.0 { Some(planner.plan(&state, &target, &set)?) } else { None };
        let (input, status, objective, plan_margin, fallback) = match &sol {
            Some(s) if s.status == SolveStatus::Optimal => (s.first_input(), s.status, Some(s.objective), Some(s.min_margin(&set)), false),
            other => {
                latched = None;
                let centre = road.lane_centre(ego.lane).unwrap_or(state.y);
                let status = other.as_ref().map_or(SolveStatus::Infeasible, |s| s.status);
                (planner.fallback(&state, centre)?, status, None, None, true)
            }
        };
        let ghost_conflict = others.iter().any(|o| overlaps(&ego, o));
        log.push(SimStep {
            frame,
            features,
            probabilities,
            decision,
            committed,
            target_lane,
            target,
            state,
            input,
            status,
            objective,
            fallback,
            emergency,
            margin,
            plan_margin,
            ghost_conflict,
        });
        if latched.is_some() && libm::fabs(state.y - target.y_hat) < cfg.completion_tol && !committed {
            latched = None;
        }
        state = plant.step(&state, input);
    }
    Ok(log)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComparisonMetrics {
    pub frames: usize,
    pub lateral_rmse: f64,
    /// Simulated minus human initiation time, s.
    pub initiation_offset: Option<f64>,
    /// Simulated minus human completion time, s.
    pub completion_offset: Option<f64>,
    pub max_abs_accel: f64,
    pub max_abs_steer: f64,
}

/// First frame after the first lane-marking crossing at which `y` lies
/// within `tol` of the new lane's centre.
fn completion_frame(track: &VehicleTrack, road: &RoadGeometry, ev: &LaneChangeEvent, tol: f64) -> Option<i64> {
    let start = track.index_of(ev.initiation_frame)?;
    let lane = road.adjacent(road.lane_at(track.samples[start].y), ev.direction)?;
    let centre = road.lane_centre(lane)?;
    let idx = track.index_of(ev.crossing_frame)?;
    track.samples[idx..].iter().find(|s| libm::fabs(s.y - centre) < tol).map(|s| s.frame)
}

fn first_event(track: &VehicleTrack, road: &RoadGeometry, cfg: &EventConfig) -> Option<LaneChangeEvent> {
    detect_events(track, road, cfg).into_iter().next()
}

/// The simulated trajectory as a track, for running the event detector.
pub fn log_track(log: &[SimStep], vehicle_id: i64, ts: f64, road: &RoadGeometry) -> Result<VehicleTrack> {
    let samples = log
        .iter()
        .map(|s| RawSample { vehicle_id, frame: s.frame, x: s.state.x, y: s.state.y, speed: s.state.v, lane_id: road.lane_at(s.state.y), length: 0.0, width: 0.0 })
        .collect();
    VehicleTrack::from_samples(vehicle_id, 0, ts, samples)
}

/// Compares a simulated run with the human trajectory over their common
/// frames, using the same event detector on both.
pub fn compare_to_ground_truth(log: &[SimStep], gt: &VehicleTrack, road: &RoadGeometry, cfg: &EventConfig, completion_tol: f64) -> Result<ComparisonMetrics> {
    let common: Vec<&SimStep> = log.iter().filter(|s| gt.contains(s.frame)).collect();
    if common.is_empty() {
        return Err(Error::Parameter("simulation and ground truth do not overlap".into()));
    }
    let sq: f64 = common.iter().map(|s| s.state.y - gt.samples[gt.index_of(s.frame).expect("common frame")].y).map(|d| d * d).sum();
    let lateral_rmse = libm::sqrt(sq / common.len() as f64);

    let (lo, hi) = (common[0].frame, common[common.len() - 1].frame);
    let owned: Vec<SimStep> = common.iter().map(|s| (*s).clone()).collect();
    let sim_track = log_track(&owned, gt.vehicle_id, gt.ts, road)?;
    let gt_window: Vec<RawSample> = gt.samples.iter().filter(|s| s.frame >= lo && s.frame <= hi).copied().collect();
    let mut gt_track = VehicleTrack::from_samples(gt.vehicle_id, gt.segment, gt.ts, gt_window)?;
    // keep the (smoothed) speeds of the supplied track
    let off = gt.index_of(lo).expect("common frame");
    gt_track.lateral_speed = gt.lateral_speed[off..off + gt_track.len()].to_vec();
    gt_track.longitudinal_speed = gt.longitudinal_speed[off..off + gt_track.len()].to_vec();

    let sim_ev = first_event(&sim_track, road, cfg);
    let gt_ev = first_event(&gt_track, road, cfg);
    let ts = gt.ts;
    let initiation_offset = match (&sim_ev, &gt_ev) {
        (Some(s), Some(g)) => Some((s.initiation_frame - g.initiation_frame) as f64 * ts),
        _ => None,
    };
    let completion_offset = match (&sim_ev, &gt_ev) {
        (Some(s), Some(g)) => match (completion_frame(&sim_track, road, s, completion_tol), completion_frame(&gt_track, road, g, completion_tol)) {
            (Some(a), Some(b)) => Some((a - b) as f64 * ts),
            _ => None,
        },
        _ => None,
    };
    Ok(ComparisonMetrics {
        frames: common.len(),
        lateral_rmse,
        initiation_offset,
        completion_offset,
        max_abs_accel: common.iter().map(|s| libm::fabs(s.input[1])).fold(0.0, f64::max),
        max_abs_steer: common.iter().map(|s| libm::fabs(s.input[0])).fold(0.0, f64::max),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    pub lane_keep: f64,
    pub lane_change: f64,
}

/// Position of a feature by name among the forest's inputs; base names
/// (and their aliases) refer to the current block.
pub fn resolve_feature(forest: &Forest, name: &str) -> Result<usize> {
    if let Some(i) = forest.feature_names.iter().position(|n| n == name) {
        return Ok(i);
    }
    feature_index(name).filter(|&i| i < forest.dimension()).ok_or_else(|| Error::Parameter(format!("unknown feature {name:?}")))
}

/// Class probabilities as one feature moves over `[lo, hi]` in steps of
/// `step` with every other feature frozen.
pub fn sensitivity_sweep(forest: &Forest, frozen: &[f64], feature: &str, lo: f64, hi: f64, step: f64) -> Result<Vec<SweepPoint>> {
    if !(lo < hi) || !(step > 0.0) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::Parameter(format!("invalid sweep [{lo}, {hi}] step {step}")));
    }
    let idx = resolve_feature(forest, feature)?;
    if frozen.len() != forest.dimension() {
        return Err(Error::Shape { expected: forest.dimension(), got: frozen.len() });
    }
    let n = libm::floor((hi - lo) / step + 1e-9) as usize;
    let mut x = frozen.to_vec();
    let mut out = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let value = lo + i as f64 * step;
        x[idx] = value;
        let p = forest.predict_proba(&x)?;
        out.push(SweepPoint { value, lane_keep: p.lane_keep, lane_change: p.lane_change });
    }
    Ok(out)
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = alloc::vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties; `None` when
/// either series is constant or the lengths differ.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / libm::sqrt(sxx * syy))
}

/// Summary of a simulated run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSummary {
    pub steps: usize,
    pub commits: usize,
    pub fallback_steps: usize,
    pub emergency_steps: usize,
    pub ghost_conflicts: usize,
    /// Unflagged steps whose state violates a half-plane.
    pub violations: usize,
    pub max_abs_accel: f64,
    pub max_abs_steer: f64,
    pub final_lane_error: f64,
    pub status_counts: alloc::collections::BTreeMap<String, usize>,
}

pub fn summarize(log: &[SimStep], road: &RoadGeometry) -> SimSummary {
    let mut status_counts = alloc::collections::BTreeMap::new();
    for s in log {
        *status_counts.entry(String::from(s.status.as_str())).or_insert(0) += 1;
    }
    let final_lane_error = log.last().map_or(f64::NAN, |s| road.lane_centre(road.lane_at(s.state.y)).map_or(f64::NAN, |c| libm::fabs(s.state.y - c)));
    SimSummary {
        steps: log.len(),
        commits: log.iter().filter(|s| s.committed).count(),
        fallback_steps: log.iter().filter(|s| s.fallback).count(),
        emergency_steps: log.iter().filter(|s| s.emergency).count(),
        ghost_conflicts: log.iter().filter(|s| s.ghost_conflict).count(),
        violations: log.iter().filter(|s| !s.flagged() && !(s.margin >= 0.0)).count(),
        max_abs_accel: log.iter().map(|s| libm::fabs(s.input[1])).fold(0.0, f64::max),
        max_abs_steer: log.iter().map(|s| libm::fabs(s.input[0])).fold(0.0, f64::max),
        final_lane_error,
        status_counts,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forest::{train, TrainConfig};
    use crate::synth::{scripted_overtake, synth_instances, InstanceConfig};
    use alloc::vec;

    fn rule_forest(seed: u64) -> Forest {
        let data = synth_instances(&InstanceConfig { vehicles: 300, seed, ..Default::default() }).unwrap();
        let x: Vec<Vec<f64>> = data.iter().map(|i| i.features.0.clone()).collect();
        let y: Vec<Manoeuvre> = data.iter().map(|i| i.label).collect();
        train(&x, &y, crate::context::feature_names(0, 5), &TrainConfig { n_trees: 30, seed, ..Default::default() }).unwrap()
    }

    #[test]
    fn plant_recursion() {
        let p = NonlinearPlant { ts: 0.1, wheelbase: 2.7 };
        let s = EgoState { x: 0.0, y: 1.0, psi: 0.0, v: 0.2 };
        let n = p.step(&s, [0.0, -4.0]);
        assert_eq!(n.v, 0.0);
        assert!((n.x - 0.02).abs() < 1e-15 && n.y == 1.0);
    }

    #[test]
    fn spearman_basics() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]), Some(1.0));
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), Some(-1.0));
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[1.0, 1.0, 1.0]), None);
        assert_eq!(ranks(&[5.0, 1.0, 5.0]), vec![2.5, 1.0, 2.5]);
    }

    #[test]
    fn sweep_validation_and_flat_curve() {
        let f = rule_forest(1);
        let frozen = vec![200.0, 60.0, -5.0, 60.0, 2.0, 200.0, 0.0, -5.0, 40.0, 25.0];
        assert!(matches!(sensitivity_sweep(&f, &frozen, "x_FL", 25.0, 0.0, 1.0), Err(Error::Parameter(_))));
        assert!(matches!(sensitivity_sweep(&f, &frozen, "x_FL", 0.0, 25.0, 0.0), Err(Error::Parameter(_))));
        assert!(matches!(sensitivity_sweep(&f, &frozen, "nope", 0.0, 25.0, 1.0), Err(Error::Parameter(_))));
        let curve = sensitivity_sweep(&f, &frozen, "x_FL", 0.0, 25.0, 0.5).unwrap();
        assert_eq!(curve.len(), 51);
        assert_eq!(curve.last().unwrap().value, 25.0);
        // a feature no tree splits on gives a flat curve
        let mut unused = f.clone();
        unused.trees = vec![crate::forest::TreeNode::Leaf { class: Manoeuvre::LaneKeep }; 3];
        let flat = sensitivity_sweep(&unused, &frozen, "Delta", -10.0, 10.0, 1.0).unwrap();
        assert!(flat.iter().all(|p| p.lane_change == 0.0));
    }

    #[test]
    fn identical_run_compares_to_zero() {
        let road = RoadGeometry::uniform(3, 3.7).unwrap();
        let scenario = scripted_overtake(&road, 200, 0);
        let gt = scenario.tracks.iter().find(|t| t.vehicle_id == scenario.ego_id).unwrap().clone();
        let log: Vec<SimStep> = gt
            .samples
            .iter()
            .map(|s| SimStep {
                frame: s.frame,
                features: vec![],
                probabilities: ClassProbabilities { lane_keep: 1.0, lane_change: 0.0 },
                decision: Manoeuvre::LaneKeep,
                committed: false,
                target_lane: s.lane_id,
                target: TargetPose { y_hat: s.y, psi_hat: 0.0, v_hat: s.speed },
                state: EgoState { x: s.x, y: s.y, psi: 0.0, v: s.speed },
                input: [0.0, 0.0],
                status: SolveStatus::Optimal,
                objective: Some(0.0),
                fallback: false,
                emergency: false,
                margin: 1.0,
                plan_margin: Some(1.0),
                ghost_conflict: false,
            })
            .collect();
        let m = compare_to_ground_truth(&log, &gt, &road, &EventConfig::default(), 0.2).unwrap();
        assert_eq!(m.lateral_rmse, 0.0);
        assert_eq!(m.initiation_offset, Some(0.0));
        assert_eq!(m.completion_offset, Some(0.0));

        // delay the simulated manoeuvre by 10 frames
        let mut shifted = log.clone();
        for (k, s) in shifted.iter_mut().enumerate() {
            s.state.y = gt.samples[k.saturating_sub(10)].y;
        }
        let m = compare_to_ground_truth(&shifted, &gt, &road, &EventConfig::default(), 0.2).unwrap();
        assert!((m.initiation_offset.unwrap() - 1.0).abs() < 1e-12);
        assert!((m.completion_offset.unwrap() - 1.0).abs() < 1e-12);
        assert!(m.lateral_rmse > 0.0);

        let late: Vec<SimStep> = log.iter().map(|s| SimStep { frame: s.frame + 100_000, ..s.clone() }).collect();
        assert!(matches!(compare_to_ground_truth(&late, &gt, &road, &EventConfig::default(), 0.2), Err(Error::Parameter(_))));
    }

    #[test]
    fn empty_road_regulates_to_lane_centre() {
        let road = RoadGeometry::uniform(3, 3.7).unwrap();
        let samples: Vec<RawSample> =
            (0..200).map(|k| RawSample { vehicle_id: 7, frame: k, x: 25.0 * 0.1 * k as f64, y: 5.55, speed: 25.0, lane_id: 2, length: 4.5, width: 1.8 }).collect();
        let track = VehicleTrack::from_samples(7, 0, 0.1, samples).unwrap();
        let scenario = Scenario { ego_id: 7, start_frame: 0, end_frame: 150, tracks: vec![track], road: road.clone(), initial: Some(EgoState { x: 0.0, y: 5.9, psi: 0.0, v: 25.0 }) };
        let forest = rule_forest(2);
        let log = replay_simulate(&scenario, &forest, &SimConfig::default()).unwrap();
        assert!(log.iter().all(|s| s.decision == Manoeuvre::LaneKeep && !s.flagged()));
        assert!((log.last().unwrap().state.y - 5.55).abs() < 0.05);
    }

    #[test]
    fn ego_future_is_never_read() {
        let road = RoadGeometry::uniform(3, 3.7).unwrap();
        let scenario = scripted_overtake(&road, 160, 4);
        let forest = rule_forest(3);
        let cfg = SimConfig::default();
        let a = replay_simulate(&scenario, &forest, &cfg).unwrap();
        let mut perturbed = scenario.clone();
        for t in perturbed.tracks.iter_mut().filter(|t| t.vehicle_id == scenario.ego_id) {
            for s in t.samples.iter_mut().filter(|s| s.frame > scenario.start_frame) {
                s.y += 1.0;
                s.x -= 3.0;
            }
        }
        let b = replay_simulate(&perturbed, &forest, &cfg).unwrap();
        assert_eq!(a, b);
    }
}
