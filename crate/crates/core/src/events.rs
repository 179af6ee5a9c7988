//! Lane-change detection, initiation labelling, exclusion rules and
//! lane-keep sampling.

use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::context::{neighbors_of, LaneSide};
use crate::trajdata::{RoadGeometry, SceneIndex, VehicleTrack};
use crate::Direction;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EventConfig {
    /// Lateral speed marking the start of a manoeuvre, m/s.
    pub threshold: f64,
    /// Minimum duration of the final above-threshold run, s.
    pub min_run_s: f64,
    /// Crossings of the same marking closer than this are merged, s.
    pub merge_window_s: f64,
    /// Minimum time headway to FL and RL at initiation, s.
    pub headway_min: f64,
    /// Longitudinal distance around a ramp zone counted as "near", m.
    pub ramp_margin: f64,
    pub sensing_range: f64,
    /// Lane-keep frames are drawn from after this burn-in, s.
    pub warmup_s: f64,
    /// ... and at least this long before initiation, s.
    pub margin_s: f64,
}

impl Default for EventConfig {
    fn default() -> Self {
        EventConfig {
            threshold: 0.1,
            min_run_s: 0.5,
            merge_window_s: 2.0,
            headway_min: 2.0,
            ramp_margin: 100.0,
            sensing_range: 100.0,
            warmup_s: 3.0,
            margin_s: 1.0,
        }
    }
}

pub(crate) fn seconds_to_frames(s: f64, ts: f64) -> usize {
    libm::round(s / ts) as usize
}

/// A marking crossing of the vehicle's front centre.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Crossing {
    pub frame: i64,
    /// Sample index of the first sample on the far side.
    pub index: usize,
    pub direction: Direction,
    /// Index into `RoadGeometry::markings`.
    pub marking: usize,
}

/// Lateral position of the front centre: centre plus half a length along
/// the direction of travel.
pub fn front_lateral(track: &VehicleTrack, k: usize) -> f64 {
    let s = &track.samples[k];
    let vy = -track.lateral_speed[k];
    let vx = track.longitudinal_speed[k];
    let norm = libm::hypot(vx, vy);
    if norm > 0.0 {
        s.y + 0.5 * s.length * vy / norm
    } else {
        s.y
    }
}

/// Frames at which the front centre crosses an inner lane marking.
/// Back-and-forth crossings of one marking within `merge_window_s` are
/// collapsed; a cluster with no net lane change is dropped.
pub fn detect_crossings(track: &VehicleTrack, road: &RoadGeometry, merge_window_s: f64) -> Vec<Crossing> {
    let n = track.len();
    if n < 2 {
        return Vec::new();
    }
    let front: Vec<f64> = (0..n).map(|k| front_lateral(track, k)).collect();
    let window = seconds_to_frames(merge_window_s, track.ts) as i64;
    let markings = road.markings();
    let mut out = Vec::new();
    for (marking, &m) in markings.iter().enumerate().take(markings.len() - 1).skip(1) {
        let mut raw = Vec::new();
        let mut side = 0i8;
        for (k, &yf) in front.iter().enumerate() {
            let s = if yf > m {
                1
            } else if yf < m {
                -1
            } else {
                0
            };
            if s == 0 {
                continue;
            }
            if side != 0 && s != side {
                let direction = if s < 0 { Direction::Left } else { Direction::Right };
                raw.push(Crossing { frame: track.samples[k].frame, index: k, direction, marking });
            }
            side = s;
        }
        let mut i = 0;
        while i < raw.len() {
            let mut j = i;
            while j + 1 < raw.len() && raw[j + 1].frame - raw[j].frame <= window {
                j += 1;
            }
            let cluster = &raw[i..=j];
            let net: i32 = cluster.iter().map(|c| if c.direction == Direction::Left { 1 } else { -1 }).sum();
            if net != 0 {
                let dir = if net > 0 { Direction::Left } else { Direction::Right };
                if let Some(first) = cluster.iter().find(|c| c.direction == dir) {
                    out.push(*first);
                }
            }
            i = j + 1;
        }
    }
    out.sort_by_key(|c| (c.frame, c.marking));
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitiationQuality {
    Confident,
    /// Final run shorter than the sustained-run requirement.
    ShortRun,
    /// Speed never dropped below the threshold before the crossing.
    NeverBelow,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Initiation {
    pub frame: i64,
    pub index: usize,
    pub quality: InitiationQuality,
}

/// Start of the final run of lateral speed toward `direction` at or above
/// `threshold` that ends at the crossing, found by scanning backward.
pub fn find_initiation(track: &VehicleTrack, crossing_index: usize, direction: Direction, threshold: f64, min_run: usize) -> Initiation {
    let crossing_index = crossing_index.min(track.len().saturating_sub(1));
    let toward = |k: usize| track.lateral_speed[k] * direction.sign();
    let last_below = (0..crossing_index).rev().find(|&k| toward(k) < threshold);
    let (index, quality) = match last_below {
        None => (0, InitiationQuality::NeverBelow),
        Some(j) if j + 1 >= crossing_index => (crossing_index.saturating_sub(1), InitiationQuality::ShortRun),
        Some(j) => {
            let start = j + 1;
            let q = if crossing_index - start < min_run { InitiationQuality::ShortRun } else { InitiationQuality::Confident };
            (start, q)
        }
    };
    Initiation { frame: track.samples[index].frame, index, quality }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExclusionReason {
    /// Right lane changes are treated as mandatory.
    Mandatory,
    RampProximity,
    FrontLeftHeadway,
    RearLeftHeadway,
    /// Ego missing from the scene at initiation.
    Indeterminate,
    LowConfidenceInitiation,
    /// Not enough pre-initiation frames to draw lane-keep instances.
    ShortKeepWindow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaneChangeEvent {
    pub vehicle_id: i64,
    pub segment: u32,
    pub crossing_frame: i64,
    pub initiation_frame: i64,
    pub direction: Direction,
    pub initiation_quality: InitiationQuality,
    /// Time headways to FL and RL at initiation, s (infinite when absent).
    pub headway_fl: f64,
    pub headway_rl: f64,
    pub excluded: Vec<ExclusionReason>,
}

impl LaneChangeEvent {
    pub fn is_excluded(&self) -> bool {
        !self.excluded.is_empty()
    }

    pub fn exclude(&mut self, reason: ExclusionReason) {
        if !self.excluded.contains(&reason) {
            self.excluded.push(reason);
            self.excluded.sort();
        }
    }
}

/// Crossings of one track turned into events with labelled initiation.
pub fn detect_events(track: &VehicleTrack, road: &RoadGeometry, cfg: &EventConfig) -> Vec<LaneChangeEvent> {
    let min_run = seconds_to_frames(cfg.min_run_s, track.ts);
    detect_crossings(track, road, cfg.merge_window_s)
        .into_iter()
        .map(|c| {
            let init = find_initiation(track, c.index, c.direction, cfg.threshold, min_run);
            LaneChangeEvent {
                vehicle_id: track.vehicle_id,
                segment: track.segment,
                crossing_frame: c.frame,
                initiation_frame: init.frame,
                direction: c.direction,
                initiation_quality: init.quality,
                headway_fl: f64::INFINITY,
                headway_rl: f64::INFINITY,
                excluded: Vec::new(),
            }
        })
        .collect()
}

/// Flags right changes, changes near ramps, changes with a short headway to
/// FL or RL at initiation, and low-confidence initiations.
pub fn apply_exclusions(events: &mut [LaneChangeEvent], tracks: &[VehicleTrack], road: &RoadGeometry, scene: &SceneIndex, cfg: &EventConfig) {
    for ev in events.iter_mut() {
        if ev.direction == Direction::Right {
            ev.exclude(ExclusionReason::Mandatory);
        }
        if ev.initiation_quality != InitiationQuality::Confident {
            ev.exclude(ExclusionReason::LowConfidenceInitiation);
        }
        let track = tracks.iter().find(|t| t.vehicle_id == ev.vehicle_id && t.segment == ev.segment);
        if let Some(s) = track.and_then(|t| t.index_of(ev.crossing_frame).map(|k| t.samples[k])) {
            if road.near_ramp(s.x, cfg.ramp_margin) {
                ev.exclude(ExclusionReason::RampProximity);
            }
        }
        let snapshot = scene.snapshot(ev.initiation_frame);
        let Some(ego) = snapshot.iter().find(|v| v.id == ev.vehicle_id) else {
            ev.exclude(ExclusionReason::Indeterminate);
            continue;
        };
        let n = neighbors_of(snapshot, ego, road, LaneSide::Current, cfg.sensing_range);
        // the follower's speed is the denominator of each pair
        ev.headway_fl = n.fl.map_or(f64::INFINITY, |fl| headway(fl.gap, ego.speed));
        ev.headway_rl = n.rl.map_or(f64::INFINITY, |rl| headway(rl.gap, rl.speed));
        if ev.headway_fl <= cfg.headway_min {
            ev.exclude(ExclusionReason::FrontLeftHeadway);
        }
        if ev.headway_rl <= cfg.headway_min {
            ev.exclude(ExclusionReason::RearLeftHeadway);
        }
    }
}

/// Time headway `gap / follower_speed`; infinite for a stopped follower.
pub fn headway(gap: f64, follower_speed: f64) -> f64 {
    if follower_speed > 0.0 {
        gap / follower_speed
    } else {
        f64::INFINITY
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeepSample {
    pub frames: Vec<i64>,
    /// Fewer eligible frames than requested.
    pub short: bool,
}

/// Draws `count` distinct lane-keep frames uniformly from
/// `[start + warmup, initiation - margin)`, returned sorted.
pub fn sample_lane_keep<R: Rng + ?Sized>(
    track: &VehicleTrack,
    initiation_frame: i64,
    count: usize,
    warmup_frames: usize,
    margin_frames: usize,
    rng: &mut R,
) -> KeepSample {
    let lo = track.first_frame() + warmup_frames as i64;
    let hi = (initiation_frame - margin_frames as i64).min(track.last_frame() + 1);
    let available = (hi - lo).max(0) as usize;
    if available <= count {
        return KeepSample { frames: (lo..hi).collect(), short: available < count };
    }
    let mut frames: Vec<i64> = rand::seq::index::sample(rng, available, count).into_iter().map(|i| lo + i as i64).collect();
    frames.sort_unstable();
    KeepSample { frames, short: false }
}
