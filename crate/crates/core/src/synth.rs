//! Synthetic data: rule-labelled feature vectors, a scripted overtaking
//! scene, and a small multi-vehicle freeway corpus.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::context::{ttc, FeatureVector, BASE_LEN, DELTA, TTC_FL, TTC_RL, VEL_SV, V_FL, V_LV, V_RL, X_FL, X_LV, X_RL};
use crate::dataset::LabeledInstance;
use crate::sim::Scenario;
use crate::trajdata::{RawSample, RoadGeometry, VehicleTrack};
use crate::{Error, Manoeuvre, Result};

/// Monotone lane-change rule on the base features: change when the driver
/// is discontent with the lead vehicle and both left-lane gaps are
/// acceptable. The front gap needed shrinks as discontent grows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecisionRule {
    pub delta_max: f64,
    /// Front gap needed at zero utility, m.
    pub front_gap_base: f64,
    /// Reduction of the front gap needed per unit of discontent, m.
    pub front_gap_slope: f64,
    pub front_gap_floor: f64,
    pub rear_gap_min: f64,
    pub ttc_min: f64,
}

impl Default for DecisionRule {
    fn default() -> Self {
        DecisionRule { delta_max: -1.0, front_gap_base: 25.0, front_gap_slope: 2.0, front_gap_floor: 5.0, rear_gap_min: 10.0, ttc_min: 4.0 }
    }
}

impl DecisionRule {
    pub fn front_gap_needed(&self, delta: f64) -> f64 {
        (self.front_gap_base + self.front_gap_slope * delta).clamp(self.front_gap_floor, self.front_gap_base)
    }

    pub fn decide(&self, f: &[f64]) -> Manoeuvre {
        let change = f[DELTA] <= self.delta_max
            && f[X_FL] >= self.front_gap_needed(f[DELTA])
            && f[X_RL] >= self.rear_gap_min
            && f[TTC_FL] >= self.ttc_min
            && f[TTC_RL] >= self.ttc_min;
        if change {
            Manoeuvre::LaneChange
        } else {
            Manoeuvre::LaneKeep
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InstanceConfig {
    /// Each vehicle contributes one instance of each class.
    pub vehicles: usize,
    /// Fraction of each class whose label is flipped.
    pub label_noise: f64,
    pub seed: u64,
    pub rule: DecisionRule,
    pub ttc_max: f64,
    pub gap_sentinel: f64,
}

impl Default for InstanceConfig {
    fn default() -> Self {
        InstanceConfig { vehicles: 600, label_noise: 0.05, seed: 0, rule: DecisionRule::default(), ttc_max: 60.0, gap_sentinel: 200.0 }
    }
}

fn sample_context<R: Rng>(rng: &mut R, cfg: &InstanceConfig) -> [f64; BASE_LEN] {
    let mut f = [0.0; BASE_LEN];
    f[VEL_SV] = rng.gen_range(15.0..30.0);
    if rng.gen_bool(0.9) {
        f[X_LV] = rng.gen_range(5.0..100.0);
        f[V_LV] = rng.gen_range(-8.0..3.0);
        f[DELTA] = if f[V_LV] < 0.0 { rng.gen_range(-15.0..0.0) } else { rng.gen_range(0.0..5.0) };
    } else {
        f[X_LV] = cfg.gap_sentinel;
        f[V_LV] = 0.0;
        f[DELTA] = 0.0;
    }
    if rng.gen_bool(0.85) {
        f[X_FL] = rng.gen_range(0.0..60.0);
        f[V_FL] = rng.gen_range(-6.0..6.0);
        f[TTC_FL] = ttc(f[X_FL], -f[V_FL], cfg.ttc_max);
    } else {
        f[X_FL] = cfg.gap_sentinel;
        f[V_FL] = 0.0;
        f[TTC_FL] = cfg.ttc_max;
    }
    if rng.gen_bool(0.85) {
        f[X_RL] = rng.gen_range(0.0..60.0);
        f[V_RL] = rng.gen_range(-6.0..6.0);
        f[TTC_RL] = ttc(f[X_RL], f[V_RL], cfg.ttc_max);
    } else {
        f[X_RL] = cfg.gap_sentinel;
        f[V_RL] = 0.0;
        f[TTC_RL] = cfg.ttc_max;
    }
    f
}

const MAX_DRAWS: usize = 100_000;

/// Balanced rule-labelled instances: per vehicle one lane change (frame 1)
/// and one lane keep (frame 0), then `label_noise` of each class flipped.
pub fn synth_instances(cfg: &InstanceConfig) -> Result<Vec<LabeledInstance>> {
    if !(0.0..0.5).contains(&cfg.label_noise) {
        return Err(Error::Parameter(format!("label noise must lie in [0, 0.5), got {}", cfg.label_noise)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::with_capacity(2 * cfg.vehicles);
    for v in 0..cfg.vehicles {
        for (frame, want) in [(0, Manoeuvre::LaneKeep), (1, Manoeuvre::LaneChange)] {
            let features = (0..MAX_DRAWS)
                .map(|_| sample_context(&mut rng, cfg))
                .find(|f| cfg.rule.decide(f) == want)
                .ok_or_else(|| Error::Parameter("decision rule admits no instance of a class".into()))?;
            out.push(LabeledInstance { vehicle_id: v as i64, frame, label: want, features: FeatureVector(features.to_vec()) });
        }
    }
    let mut flipped = Vec::new();
    for class in Manoeuvre::ALL {
        let mut idx: Vec<usize> = (0..out.len()).filter(|&i| out[i].label == class).collect();
        idx.shuffle(&mut rng);
        let flips = libm::round(cfg.label_noise * idx.len() as f64) as usize;
        flipped.extend_from_slice(&idx[..flips]);
    }
    for i in flipped {
        out[i].label = match out[i].label {
            Manoeuvre::LaneKeep => Manoeuvre::LaneChange,
            Manoeuvre::LaneChange => Manoeuvre::LaneKeep,
        };
    }
    Ok(out)
}

fn cosine_blend(from: f64, to: f64, s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    from + (to - from) * 0.5 * (1.0 - libm::cos(core::f64::consts::PI * s))
}

#[allow(clippy::too_many_arguments)]
fn straight_track(id: i64, frames: usize, ts: f64, x0: f64, y: f64, v: f64, length: f64, road: &RoadGeometry) -> VehicleTrack {
    let samples = (0..frames)
        .map(|k| RawSample { vehicle_id: id, frame: k as i64, x: x0 + v * ts * k as f64, y, speed: v, lane_id: road.lane_at(y), length, width: 2.0 })
        .collect();
    VehicleTrack::from_samples(id, 0, ts, samples).expect("consecutive frames")
}

/// Ego (id 0) approaching a slow truck (id 1) in lane 2 with a free left
/// lane; in the recording the human moves left between 3 s and 7 s. A car
/// (id 2) cruises far ahead in the left lane. `seed` jitters the initial
/// positions.
pub fn scripted_overtake(road: &RoadGeometry, frames: usize, seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ts = 0.1;
    let lane = if road.lane_count() >= 2 { 2 } else { 1 };
    let (y2, y1) = (road.lane_centre(lane).expect("lane exists"), road.lane_centre(lane - 1).unwrap_or(road.lane_centre(lane).expect("lane exists")));
    let truck_x0 = 60.0 + rng.gen_range(-5.0..5.0);
    let ego_v = 25.0 + rng.gen_range(-1.0..1.0);
    let truck = straight_track(1, frames, ts, truck_x0, y2, 18.0, 12.0, road);
    let car = straight_track(2, frames, ts, 150.0 + rng.gen_range(0.0..20.0), y1, 30.0, 4.5, road);
    let ego_samples = (0..frames)
        .map(|k| {
            let t = k as f64 * ts;
            let y = cosine_blend(y2, y1, (t - 3.0) / 4.0);
            RawSample { vehicle_id: 0, frame: k as i64, x: ego_v * t, y, speed: ego_v, lane_id: road.lane_at(y), length: 4.5, width: 1.8 }
        })
        .collect();
    let ego = VehicleTrack::from_samples(0, 0, ts, ego_samples).expect("consecutive frames");
    Scenario { ego_id: 0, start_frame: 0, end_frame: frames as i64 - 1, tracks: vec![ego, truck, car], road: road.clone(), initial: None }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackConfig {
    /// Cars, in addition to the slow truck.
    pub vehicles: usize,
    pub lanes: u32,
    pub lane_width: f64,
    pub duration_s: f64,
    pub ts: f64,
    pub seed: u64,
    /// Standard deviation of the recorded lateral position noise, m.
    pub position_noise: f64,
    /// Chance that a driver ignores an acceptable gap at a given step.
    pub hesitation: f64,
    pub lane_change_s: f64,
}

impl Default for TrackConfig {
    fn default() -> Self {
        TrackConfig { vehicles: 5, lanes: 3, lane_width: 3.7, duration_s: 40.0, ts: 0.1, seed: 0, position_noise: 0.02, hesitation: 0.9, lane_change_s: 4.0 }
    }
}

struct Agent {
    id: i64,
    x: f64,
    v: f64,
    v_desired: f64,
    lane: u32,
    length: f64,
    /// (start time, from lane, to lane) of an ongoing or finished change.
    change: Option<(f64, u32, u32)>,
}

impl Agent {
    fn y(&self, road: &RoadGeometry, t: f64, dur: f64) -> f64 {
        match self.change {
            Some((t0, from, to)) => cosine_blend(road.lane_centre(from).expect("lane"), road.lane_centre(to).expect("lane"), (t - t0) / dur),
            None => road.lane_centre(self.lane).expect("lane"),
        }
    }
}

/// Intelligent-driver acceleration toward `v_desired` behind a leader at
/// bumper gap `gap` moving at `v_lead`.
fn idm(v: f64, v_desired: f64, lead: Option<(f64, f64)>) -> f64 {
    let (a_max, b, t_gap, s0) = (1.5, 2.0, 1.5, 2.0);
    let free = 1.0 - libm::pow(v / v_desired, 4.0);
    let interaction = lead.map_or(0.0, |(gap, v_lead)| {
        let s_star = s0 + v * t_gap + v * (v - v_lead) / (2.0 * libm::sqrt(a_max * b));
        let r = s_star.max(0.0) / gap.max(0.1);
        r * r
    });
    (a_max * (free - interaction)).max(-8.0)
}

fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(2.0 * core::f64::consts::PI * u2)
}

/// A slow truck in the rightmost lane followed by faster cars that
/// overtake on the left when the left lane offers an acceptable gap.
/// Returns the raw rows (lane ids from position) and the road.
pub fn synth_tracks(cfg: &TrackConfig) -> Result<(Vec<RawSample>, RoadGeometry)> {
    if cfg.lanes < 2 {
        return Err(Error::Parameter("need at least 2 lanes".into()));
    }
    if !(cfg.ts > 0.0 && cfg.duration_s > 0.0 && cfg.lane_change_s > 0.0) {
        return Err(Error::Parameter("durations must be positive".into()));
    }
    if !(0.0..1.0).contains(&cfg.hesitation) {
        return Err(Error::Parameter(format!("hesitation must lie in [0, 1), got {}", cfg.hesitation)));
    }
    let road = RoadGeometry::uniform(cfg.lanes, cfg.lane_width)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let right = cfg.lanes;
    let mut agents = vec![Agent { id: 1, x: 250.0, v: 15.0, v_desired: 15.0, lane: right, length: 12.0, change: None }];
    let mut x = 250.0 - rng.gen_range(60.0..90.0);
    for i in 0..cfg.vehicles {
        let v = rng.gen_range(24.0..30.0);
        agents.push(Agent { id: 2 + i as i64, x, v, v_desired: v, lane: right, length: rng.gen_range(4.0..5.5), change: None });
        x -= rng.gen_range(70.0..110.0);
    }
    let steps = libm::round(cfg.duration_s / cfg.ts) as usize;
    let dur = cfg.lane_change_s;
    let mut rows = Vec::with_capacity(steps * agents.len());
    for k in 0..steps {
        let t = k as f64 * cfg.ts;
        for a in &agents {
            let y = a.y(&road, t, dur) + cfg.position_noise * standard_normal(&mut rng);
            rows.push(RawSample { vehicle_id: a.id, frame: k as i64, x: a.x, y, speed: a.v, lane_id: road.lane_at(y), length: a.length, width: 2.0 });
        }
        // occupancy: a changing vehicle counts in both lanes
        let occupies = |a: &Agent, lane: u32| a.lane == lane || a.change.is_some_and(|(t0, from, to)| t - t0 < dur && (from == lane || to == lane));
        let nearest = |me: &Agent, lane: u32, ahead: bool| -> Option<(f64, f64)> {
            agents
                .iter()
                .filter(|o| o.id != me.id && occupies(o, lane) && ((o.x > me.x) == ahead))
                .map(|o| (libm::fabs(o.x - me.x) - 0.5 * (o.length + me.length), o.v))
                .min_by(|p, q| p.0.total_cmp(&q.0))
        };
        let mut accel = Vec::with_capacity(agents.len());
        let mut starts = Vec::new();
        for (i, a) in agents.iter().enumerate() {
            let changing = a.change.is_some_and(|(t0, _, _)| t - t0 < dur);
            let lead = nearest(a, a.lane, true);
            let target_lead = a.change.filter(|_| changing).and_then(|(_, _, to)| nearest(a, to, true));
            let lead = match (lead, target_lead) {
                (Some(p), Some(q)) => Some(if p.0 < q.0 { p } else { q }),
                (p, q) => p.or(q),
            };
            accel.push(idm(a.v, a.v_desired, lead));
            if a.change.is_none() && a.lane > 1 {
                let discontent = lead.is_some_and(|(gap, v_lead)| v_lead < a.v - 1.0 && gap < 60.0);
                let left = a.lane - 1;
                let front_ok = nearest(a, left, true).is_none_or(|(gap, v)| gap > 25.0 && v > a.v - 3.0);
                let rear_ok = nearest(a, left, false).is_none_or(|(gap, v)| gap > 30.0 && gap > 2.5 * v);
                if discontent && front_ok && rear_ok && !rng.gen_bool(cfg.hesitation) {
                    starts.push((i, left));
                }
            }
        }
        for (i, left) in starts {
            let a = &mut agents[i];
            a.change = Some((t, a.lane, left));
        }
        for (a, acc) in agents.iter_mut().zip(accel) {
            a.x += cfg.ts * a.v;
            a.v = (a.v + cfg.ts * acc).max(0.0);
            if let Some((t0, _, to)) = a.change {
                if t + cfg.ts - t0 >= 0.5 * dur {
                    a.lane = to;
                }
            }
        }
    }
    Ok((rows, road))
}
