use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::VehicleTrack;

/// Kinematic state of one vehicle at one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub id: i64,
    pub x: f64,
    pub y: f64,
    /// Longitudinal speed, m/s.
    pub speed: f64,
    pub lane: u32,
    pub length: f64,
    pub width: f64,
}

/// Frame-indexed snapshots of every recorded vehicle.
#[derive(Debug, Clone, Default)]
pub struct SceneIndex {
    frames: BTreeMap<i64, Vec<VehicleState>>,
}

impl SceneIndex {
    pub fn new(tracks: &[VehicleTrack]) -> Self {
        Self::build(tracks.iter())
    }

    /// Index built from every track except those of `vehicle_id`.
    pub fn without(tracks: &[VehicleTrack], vehicle_id: i64) -> Self {
        Self::build(tracks.iter().filter(|t| t.vehicle_id != vehicle_id))
    }

    fn build<'a>(tracks: impl Iterator<Item = &'a VehicleTrack>) -> Self {
        let mut frames: BTreeMap<i64, Vec<VehicleState>> = BTreeMap::new();
        for track in tracks {
            for (k, s) in track.samples.iter().enumerate() {
                frames.entry(s.frame).or_default().push(VehicleState {
                    id: s.vehicle_id,
                    x: s.x,
                    y: s.y,
                    speed: track.longitudinal_speed[k],
                    lane: s.lane_id,
                    length: s.length,
                    width: s.width,
                });
            }
        }
        for states in frames.values_mut() {
            states.sort_by_key(|s| s.id);
        }
        SceneIndex { frames }
    }

    /// All vehicles recorded at `frame`, ordered by id.
    pub fn snapshot(&self, frame: i64) -> &[VehicleState] {
        self.frames.get(&frame).map_or(&[], |v| v.as_slice())
    }

    pub fn vehicle(&self, frame: i64, id: i64) -> Option<&VehicleState> {
        self.snapshot(frame).iter().find(|s| s.id == id)
    }

    pub fn frame_range(&self) -> Option<(i64, i64)> {
        Some((*self.frames.keys().next()?, *self.frames.keys().next_back()?))
    }
}
