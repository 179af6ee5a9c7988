use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Longitudinal stretch of road next to an entrance or exit ramp.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RampZone {
    pub start: f64,
    pub end: f64,
}

impl RampZone {
    /// True when `x` lies inside the zone widened by `margin` on both ends.
    pub fn near(&self, x: f64, margin: f64) -> bool {
        x >= self.start - margin && x <= self.end + margin
    }
}

/// Straight multi-lane road. Lane `k` (1-based) spans
/// `markings[k-1]..markings[k]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RoadSpec", into = "RoadSpec")]
pub struct RoadGeometry {
    markings: Vec<f64>,
    centres: Vec<f64>,
    ramp_zones: Vec<RampZone>,
}

#[derive(Serialize, Deserialize)]
struct RoadSpec {
    markings: Vec<f64>,
    #[serde(default)]
    ramp_zones: Vec<RampZone>,
}

impl TryFrom<RoadSpec> for RoadGeometry {
    type Error = Error;

    fn try_from(spec: RoadSpec) -> Result<Self> {
        RoadGeometry::new(spec.markings, spec.ramp_zones)
    }
}

impl From<RoadGeometry> for RoadSpec {
    fn from(road: RoadGeometry) -> Self {
        RoadSpec { markings: road.markings, ramp_zones: road.ramp_zones }
    }
}

impl RoadGeometry {
    pub fn new(markings: Vec<f64>, ramp_zones: Vec<RampZone>) -> Result<Self> {
        if markings.len() < 2 {
            return Err(Error::Parameter(format!("a road needs at least 2 markings, got {}", markings.len())));
        }
        if markings.iter().any(|m| !m.is_finite()) || markings.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Parameter("lane markings must be finite and strictly increasing".into()));
        }
        if ramp_zones.iter().any(|z| !(z.end >= z.start)) {
            return Err(Error::Parameter("ramp zone end precedes start".into()));
        }
        let centres = markings.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
        Ok(RoadGeometry { markings, centres, ramp_zones })
    }

    /// Equal-width lanes with the left road edge at `y = 0`.
    pub fn uniform(lane_count: u32, lane_width: f64) -> Result<Self> {
        if lane_count == 0 || !(lane_width > 0.0) {
            return Err(Error::Parameter("lane count and width must be positive".into()));
        }
        let markings = (0..=lane_count).map(|k| k as f64 * lane_width).collect();
        RoadGeometry::new(markings, Vec::new())
    }

    pub fn with_ramp_zones(mut self, zones: Vec<RampZone>) -> Result<Self> {
        if zones.iter().any(|z| !(z.end >= z.start)) {
            return Err(Error::Parameter("ramp zone end precedes start".into()));
        }
        self.ramp_zones = zones;
        Ok(self)
    }

    pub fn lane_count(&self) -> u32 {
        self.centres.len() as u32
    }

    /// Mean lane width.
    pub fn lane_width(&self) -> f64 {
        (self.right_edge() - self.left_edge()) / self.centres.len() as f64
    }

    pub fn markings(&self) -> &[f64] {
        &self.markings
    }

    pub fn lane_centres(&self) -> &[f64] {
        &self.centres
    }

    pub fn ramp_zones(&self) -> &[RampZone] {
        &self.ramp_zones
    }

    pub fn left_edge(&self) -> f64 {
        self.markings[0]
    }

    pub fn right_edge(&self) -> f64 {
        self.markings[self.markings.len() - 1]
    }

    pub fn has_lane(&self, lane: u32) -> bool {
        lane >= 1 && lane <= self.lane_count()
    }

    pub fn lane_centre(&self, lane: u32) -> Option<f64> {
        if self.has_lane(lane) {
            Some(self.centres[lane as usize - 1])
        } else {
            None
        }
    }

    /// Lateral bounds `(left, right)` of a lane.
    pub fn lane_bounds(&self, lane: u32) -> Option<(f64, f64)> {
        if self.has_lane(lane) {
            let k = lane as usize;
            Some((self.markings[k - 1], self.markings[k]))
        } else {
            None
        }
    }

    /// Lane containing lateral position `y`; positions beyond the edges
    /// snap to the outermost lane.
    pub fn lane_at(&self, y: f64) -> u32 {
        let inner = &self.markings[1..self.markings.len() - 1];
        1 + inner.iter().filter(|&&m| y >= m).count() as u32
    }

    /// Lane next to `lane` on the given side, if the road has one.
    pub fn adjacent(&self, lane: u32, dir: crate::Direction) -> Option<u32> {
        let next = match dir {
            crate::Direction::Left => lane.checked_sub(1)?,
            crate::Direction::Right => lane + 1,
        };
        self.has_lane(next).then_some(next)
    }

    pub fn near_ramp(&self, x: f64, margin: f64) -> bool {
        self.ramp_zones.iter().any(|z| z.near(x, margin))
    }
}
