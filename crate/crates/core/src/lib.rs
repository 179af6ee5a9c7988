//! Lane-change decision making and constrained trajectory planning for
//! freeway driving.
//!
//! The crate is `no_std` (with `alloc`). It covers the whole algorithmic
//! pipeline: smoothing recorded trajectories, detecting and labelling
//! lane-change manoeuvres, extracting context features, training a
//! random-forest decision model, planning with a tracking MPC and replaying
//! the result in a closed-loop simulator. File formats and the command-line
//! front end live in the `lanekit` crate.
#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod context;
pub mod dataset;
mod error;
pub mod events;
pub mod forest;
pub mod planner;
pub mod sim;
pub mod synth;
pub mod trajdata;

pub use error::{Error, Result};

/// Manoeuvre class predicted by the decision model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Manoeuvre {
    LaneKeep,
    LaneChange,
}

impl Manoeuvre {
    pub const ALL: [Manoeuvre; 2] = [Manoeuvre::LaneKeep, Manoeuvre::LaneChange];

    pub fn index(self) -> usize {
        match self {
            Manoeuvre::LaneKeep => 0,
            Manoeuvre::LaneChange => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(Manoeuvre::LaneKeep),
            1 => Some(Manoeuvre::LaneChange),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Manoeuvre::LaneKeep => "lane_keep",
            Manoeuvre::LaneChange => "lane_change",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "lane_keep" => Some(Manoeuvre::LaneKeep),
            "lane_change" => Some(Manoeuvre::LaneChange),
            _ => None,
        }
    }
}

impl core::fmt::Display for Manoeuvre {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Lateral direction of a lane change. Left is toward decreasing lane id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Left,
    Right,
}

impl Direction {
    pub fn opposite(self) -> Self {
        match self {
            Direction::Left => Direction::Right,
            Direction::Right => Direction::Left,
        }
    }

    /// +1 for left, -1 for right; matches the lateral-speed sign convention.
    pub fn sign(self) -> f64 {
        match self {
            Direction::Left => 1.0,
            Direction::Right => -1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Left => "left",
            Direction::Right => "right",
        }
    }
}
