//! Trajectory records, road geometry and per-frame scene snapshots.
//!
//! Coordinates are road-aligned: `x` runs along the road and `y` across it,
//! increasing with lane id. Lane 1 is the leftmost lane, so "left" always
//! means decreasing `y`.

mod ekf;
mod road;
mod scene;
mod smooth;

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use ekf::{ekf_smooth, EkfConfig};
pub use road::{RampZone, RoadGeometry};
pub use scene::{SceneIndex, VehicleState};
pub use smooth::{exp_smooth, lateral_speed, smooth_track, SmoothingConfig};

/// Gaps up to this many missing frames are filled by linear interpolation.
pub const DEFAULT_MAX_GAP: i64 = 5;

/// One raw trajectory record. `x`, `y` locate the vehicle centre.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawSample {
    pub vehicle_id: i64,
    pub frame: i64,
    pub x: f64,
    pub y: f64,
    pub speed: f64,
    pub lane_id: u32,
    pub length: f64,
    pub width: f64,
}

/// Uniformly sampled trajectory of one vehicle (or one contiguous segment
/// of it when the recording had a long gap).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleTrack {
    pub vehicle_id: i64,
    pub segment: u32,
    /// Sampling period in seconds.
    pub ts: f64,
    pub samples: Vec<RawSample>,
    /// Positive toward decreasing lane id (leftward), m/s.
    pub lateral_speed: Vec<f64>,
    pub longitudinal_speed: Vec<f64>,
    /// True for samples synthesised by gap filling.
    pub interpolated: Vec<bool>,
}

impl VehicleTrack {
    /// Builds a track from samples already on a uniform time base. Speeds
    /// are initialised from the recorded speed and a central difference of
    /// `y`.
    pub fn from_samples(vehicle_id: i64, segment: u32, ts: f64, samples: Vec<RawSample>) -> Result<Self> {
        if !(ts > 0.0) {
            return Err(Error::Parameter(format!("sampling period must be positive, got {ts}")));
        }
        for w in samples.windows(2) {
            if w[1].frame != w[0].frame + 1 {
                return Err(Error::Parameter(format!(
                    "vehicle {vehicle_id}: frames {} -> {} are not consecutive",
                    w[0].frame, w[1].frame
                )));
            }
        }
        let n = samples.len();
        let mut track = VehicleTrack {
            vehicle_id,
            segment,
            ts,
            longitudinal_speed: samples.iter().map(|s| s.speed).collect(),
            lateral_speed: alloc::vec![0.0; n],
            interpolated: alloc::vec![false; n],
            samples,
        };
        if n >= 2 {
            track.lateral_speed = lateral_speed(&track)?;
        }
        Ok(track)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn first_frame(&self) -> i64 {
        self.samples.first().map_or(0, |s| s.frame)
    }

    pub fn last_frame(&self) -> i64 {
        self.samples.last().map_or(-1, |s| s.frame)
    }

    pub fn index_of(&self, frame: i64) -> Option<usize> {
        let first = self.samples.first()?.frame;
        let idx = frame.checked_sub(first)?;
        if idx < 0 || idx as usize >= self.samples.len() {
            None
        } else {
            Some(idx as usize)
        }
    }

    pub fn contains(&self, frame: i64) -> bool {
        self.index_of(frame).is_some()
    }
}

/// Book-keeping produced while assembling tracks from raw rows.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub rows_read: usize,
    pub duplicates_dropped: usize,
    /// `(vehicle_id, frame)` of every gap-filled sample.
    pub interpolated: Vec<(i64, i64)>,
    /// Number of times a track was split at a gap longer than the limit.
    pub splits: usize,
    pub tracks: usize,
}

/// Groups raw rows into uniformly sampled tracks.
///
/// Rows are grouped by vehicle and sorted by frame; a repeated
/// `(vehicle_id, frame)` keeps its first occurrence in input order. Gaps of
/// at most `max_gap` missing frames are filled by linear interpolation,
/// longer gaps start a new segment.
pub fn assemble_tracks<I>(rows: I, ts: f64, max_gap: i64) -> Result<(Vec<VehicleTrack>, IngestReport)>
where
    I: IntoIterator<Item = RawSample>,
{
    if !(ts > 0.0) {
        return Err(Error::Parameter(format!("sampling period must be positive, got {ts}")));
    }
    let mut report = IngestReport::default();
    let mut by_vehicle: BTreeMap<i64, Vec<RawSample>> = BTreeMap::new();
    for row in rows {
        report.rows_read += 1;
        if !(row.length > 0.0) || !(row.width > 0.0) {
            return Err(Error::Parameter(format!(
                "vehicle {} frame {}: length and width must be positive",
                row.vehicle_id, row.frame
            )));
        }
        by_vehicle.entry(row.vehicle_id).or_default().push(row);
    }

    let mut tracks = Vec::new();
    for (vehicle_id, mut rows) in by_vehicle {
        // stable: equal frames keep input order
        rows.sort_by_key(|r| r.frame);
        let before = rows.len();
        rows.dedup_by_key(|r| r.frame);
        report.duplicates_dropped += before - rows.len();

        let mut segment = 0u32;
        let mut current: Vec<RawSample> = Vec::new();
        let mut filled: Vec<bool> = Vec::new();
        for row in rows {
            if let Some(prev) = current.last().copied() {
                let missing = row.frame - prev.frame - 1;
                if missing > max_gap {
                    tracks.push(finish_segment(vehicle_id, segment, ts, core::mem::take(&mut current), core::mem::take(&mut filled))?);
                    segment += 1;
                    report.splits += 1;
                } else {
                    for k in 1..=missing {
                        let t = k as f64 / (missing + 1) as f64;
                        current.push(RawSample {
                            vehicle_id,
                            frame: prev.frame + k,
                            x: lerp(prev.x, row.x, t),
                            y: lerp(prev.y, row.y, t),
                            speed: lerp(prev.speed, row.speed, t),
                            lane_id: prev.lane_id,
                            length: prev.length,
                            width: prev.width,
                        });
                        filled.push(true);
                        report.interpolated.push((vehicle_id, prev.frame + k));
                    }
                }
            }
            current.push(row);
            filled.push(false);
        }
        if !current.is_empty() {
            tracks.push(finish_segment(vehicle_id, segment, ts, current, filled)?);
        }
    }
    report.tracks = tracks.len();
    Ok((tracks, report))
}

fn finish_segment(vehicle_id: i64, segment: u32, ts: f64, samples: Vec<RawSample>, filled: Vec<bool>) -> Result<VehicleTrack> {
    let mut track = VehicleTrack::from_samples(vehicle_id, segment, ts, samples)?;
    track.interpolated = filled;
    Ok(track)
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}
