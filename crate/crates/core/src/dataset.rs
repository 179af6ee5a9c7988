//! Assembly of the balanced labelled dataset from smoothed tracks.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::context::{history_stack, FeatureConfig, FeatureVector, Featurizer};
use crate::events::{apply_exclusions, detect_events, sample_lane_keep, seconds_to_frames, EventConfig, ExclusionReason, LaneChangeEvent};
use crate::trajdata::{RoadGeometry, SceneIndex, VehicleTrack};
use crate::{Error, Manoeuvre, Result};

/// One labelled frame of one vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LabelRecord {
    pub vehicle_id: i64,
    pub segment: u32,
    pub frame: i64,
    pub label: Manoeuvre,
}

/// A labelled frame together with its feature vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledInstance {
    pub vehicle_id: i64,
    pub frame: i64,
    pub label: Manoeuvre,
    pub features: FeatureVector,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExclusionSummary {
    pub tracks: usize,
    pub events: usize,
    pub retained: usize,
    /// Count of events carrying each reason (an event may carry several).
    pub by_reason: BTreeMap<String, usize>,
    pub lane_change_instances: usize,
    pub lane_keep_instances: usize,
}

/// Detects lane changes on every track and applies the exclusion rules.
pub fn extract_events(tracks: &[VehicleTrack], road: &RoadGeometry, scene: &SceneIndex, cfg: &EventConfig) -> Vec<LaneChangeEvent> {
    let mut events: Vec<LaneChangeEvent> = tracks.iter().flat_map(|t| detect_events(t, road, cfg)).collect();
    apply_exclusions(&mut events, tracks, road, scene, cfg);
    events.sort_by_key(|e| (e.vehicle_id, e.segment, e.crossing_frame));
    events
}

/// Labels the initiation frame of every retained event as a lane change and
/// draws one lane-keep frame from before it. Events without an eligible
/// keep frame are excluded, so the output is always class-balanced.
pub fn label_events(
    tracks: &[VehicleTrack],
    events: &mut [LaneChangeEvent],
    cfg: &EventConfig,
    features: &FeatureConfig,
    seed: u64,
) -> Vec<LabelRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for ev in events.iter_mut() {
        if ev.is_excluded() {
            continue;
        }
        let Some(track) = tracks.iter().find(|t| t.vehicle_id == ev.vehicle_id && t.segment == ev.segment) else {
            ev.exclude(ExclusionReason::Indeterminate);
            continue;
        };
        let warmup = seconds_to_frames(cfg.warmup_s, track.ts).max(features.history_frames());
        let margin = seconds_to_frames(cfg.margin_s, track.ts);
        let keep = sample_lane_keep(track, ev.initiation_frame, 1, warmup, margin, &mut rng);
        if keep.frames.is_empty() || (ev.initiation_frame - track.first_frame()) < features.history_frames() as i64 {
            ev.exclude(ExclusionReason::ShortKeepWindow);
            continue;
        }
        let rec = |frame, label| LabelRecord { vehicle_id: ev.vehicle_id, segment: ev.segment, frame, label };
        out.push(rec(ev.initiation_frame, Manoeuvre::LaneChange));
        out.extend(keep.frames.iter().map(|&f| rec(f, Manoeuvre::LaneKeep)));
    }
    out.sort();
    out
}

pub fn summarize(tracks: usize, events: &[LaneChangeEvent], labels: &[LabelRecord]) -> ExclusionSummary {
    let mut by_reason = BTreeMap::new();
    for ev in events {
        for reason in &ev.excluded {
            let key = serde_reason(*reason);
            *by_reason.entry(key).or_insert(0) += 1;
        }
    }
    ExclusionSummary {
        tracks,
        events: events.len(),
        retained: events.iter().filter(|e| !e.is_excluded()).count(),
        by_reason,
        lane_change_instances: labels.iter().filter(|l| l.label == Manoeuvre::LaneChange).count(),
        lane_keep_instances: labels.iter().filter(|l| l.label == Manoeuvre::LaneKeep).count(),
    }
}

fn serde_reason(r: ExclusionReason) -> String {
    String::from(match r {
        ExclusionReason::Mandatory => "mandatory",
        ExclusionReason::RampProximity => "ramp_proximity",
        ExclusionReason::FrontLeftHeadway => "front_left_headway",
        ExclusionReason::RearLeftHeadway => "rear_left_headway",
        ExclusionReason::Indeterminate => "indeterminate",
        ExclusionReason::LowConfidenceInitiation => "low_confidence_initiation",
        ExclusionReason::ShortKeepWindow => "short_keep_window",
    })
}

/// Base feature vectors for every frame of a track, in frame order, with
/// the utility state carried from the first frame.
pub fn featurize_track(track: &VehicleTrack, road: &RoadGeometry, scene: &SceneIndex, cfg: &FeatureConfig) -> Result<Vec<FeatureVector>> {
    let mut fz = Featurizer::new(cfg.clone());
    for s in &track.samples {
        let snapshot = scene.snapshot(s.frame);
        let ego = snapshot.iter().find(|v| v.id == track.vehicle_id).ok_or(Error::Lookup(track.vehicle_id))?;
        fz.step(snapshot, ego, road, s.frame)?;
    }
    Ok(fz.history().to_vec())
}

/// Feature vectors (history-stacked per `cfg`) for labelled frames.
pub fn featurize_labels(
    tracks: &[VehicleTrack],
    labels: &[LabelRecord],
    road: &RoadGeometry,
    scene: &SceneIndex,
    cfg: &FeatureConfig,
) -> Result<Vec<LabeledInstance>> {
    let mut cache: BTreeMap<(i64, u32), Vec<FeatureVector>> = BTreeMap::new();
    let mut out = Vec::with_capacity(labels.len());
    for l in labels {
        let track = tracks
            .iter()
            .find(|t| t.vehicle_id == l.vehicle_id && t.segment == l.segment)
            .ok_or_else(|| Error::Scenario(alloc::format!("no track for vehicle {} segment {}", l.vehicle_id, l.segment)))?;
        let key = (l.vehicle_id, l.segment);
        if let alloc::collections::btree_map::Entry::Vacant(slot) = cache.entry(key) {
            slot.insert(featurize_track(track, road, scene, cfg)?);
        }
        let series = &cache[&key];
        let idx = track.index_of(l.frame).ok_or(Error::Length { need: (l.frame - track.first_frame() + 1).max(0) as usize, got: track.len() })?;
        let features = history_stack(series, idx, cfg.n_past, cfg.step_gap)?;
        out.push(LabeledInstance { vehicle_id: l.vehicle_id, frame: l.frame, label: l.label, features });
    }
    Ok(out)
}

/// Splits instances by vehicle id: a seeded shuffle of the distinct ids,
/// with `test_fraction` of them (rounded up, at least one, never all)
/// held out. Returns `(train, test, test_ids)`.
pub fn split_by_vehicle(instances: &[LabeledInstance], test_fraction: f64, seed: u64) -> Result<(Vec<LabeledInstance>, Vec<LabeledInstance>, Vec<i64>)> {
    use rand::seq::SliceRandom;
    let mut ids: Vec<i64> = instances.iter().map(|i| i.vehicle_id).collect();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() < 2 {
        return Err(Error::Parameter(alloc::format!("need at least 2 vehicles to split, got {}", ids.len())));
    }
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Parameter(alloc::format!("test fraction must lie in (0, 1), got {test_fraction}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    let n_test = (libm::ceil(test_fraction * ids.len() as f64) as usize).clamp(1, ids.len() - 1);
    let mut test_ids = ids[..n_test].to_vec();
    test_ids.sort_unstable();
    let (test, train): (Vec<_>, Vec<_>) = instances.iter().cloned().partition(|i| test_ids.binary_search(&i.vehicle_id).is_ok());
    Ok((train, test, test_ids))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajdata::RawSample;
    use alloc::vec;

    /// Ego drives 20 s in lane 2 and moves left between 10 s and 14 s.
    fn lane_change_track(id: i64, road: &RoadGeometry) -> VehicleTrack {
        let c2 = road.lane_centre(2).unwrap();
        let c1 = road.lane_centre(1).unwrap();
        let samples = (0..200)
            .map(|k| {
                let t = k as f64 * 0.1;
                let p = ((t - 10.0) / 4.0).clamp(0.0, 1.0);
                let s = 0.5 - 0.5 * libm::cos(core::f64::consts::PI * p);
                let y = c2 + (c1 - c2) * s;
                RawSample { vehicle_id: id, frame: k, x: 25.0 * t, y, speed: 25.0, lane_id: road.lane_at(y), length: 4.5, width: 1.8 }
            })
            .collect();
        VehicleTrack::from_samples(id, 0, 0.1, samples).unwrap()
    }

    #[test]
    fn single_clean_change_gives_balanced_pair() {
        let road = RoadGeometry::uniform(3, 3.7).unwrap();
        let tracks = vec![lane_change_track(1, &road), lane_change_track(2, &road)];
        let scene = SceneIndex::new(&tracks);
        let cfg = EventConfig::default();
        let mut events = extract_events(&tracks, &road, &scene, &cfg);
        assert_eq!(events.len(), 2);
        assert!(events.iter().all(|e| !e.is_excluded()));
        assert!(events.iter().all(|e| e.initiation_frame < e.crossing_frame));
        let labels = label_events(&tracks, &mut events, &cfg, &FeatureConfig::default(), 3);
        let summary = summarize(tracks.len(), &events, &labels);
        assert_eq!(summary.lane_change_instances, 2);
        assert_eq!(summary.lane_keep_instances, 2);
        let inst = featurize_labels(&tracks, &labels, &road, &scene, &FeatureConfig::default()).unwrap();
        assert_eq!(inst.len(), 4);
        assert!(inst.iter().all(|i| i.features.len() == 10));
    }

    #[test]
    fn short_prefix_drops_event() {
        let road = RoadGeometry::uniform(3, 3.7).unwrap();
        let mut t = lane_change_track(1, &road);
        // keep only 3.5 s before the manoeuvre: warmup 3 s + margin 1 s does not fit
        t.samples.drain(..65);
        let t = VehicleTrack::from_samples(1, 0, 0.1, t.samples).unwrap();
        let tracks = vec![t];
        let scene = SceneIndex::new(&tracks);
        let cfg = EventConfig::default();
        let mut events = extract_events(&tracks, &road, &scene, &cfg);
        let labels = label_events(&tracks, &mut events, &cfg, &FeatureConfig::default(), 3);
        assert!(labels.is_empty());
        assert!(events[0].excluded.contains(&ExclusionReason::ShortKeepWindow));
    }

    #[test]
    fn vehicle_split_is_disjoint() {
        let inst: Vec<LabeledInstance> = (0..20)
            .map(|k| LabeledInstance { vehicle_id: k / 2, frame: k, label: Manoeuvre::LaneKeep, features: FeatureVector(vec![0.0; 10]) })
            .collect();
        let (train, test, ids) = split_by_vehicle(&inst, 0.2, 9).unwrap();
        assert_eq!(ids.len(), 2);
        assert_eq!(train.len() + test.len(), 20);
        assert!(train.iter().all(|i| !ids.contains(&i.vehicle_id)));
        assert!(test.iter().all(|i| ids.contains(&i.vehicle_id)));
        assert_eq!(split_by_vehicle(&inst, 0.2, 9).unwrap().2, ids);
    }
}
