//! Target generation and constrained tracking MPC.
//!
//! The planner state is `xi = [y, psi, v]` with input `u = [steer, accel]`.
//! The optimiser chooses an input sequence together with an artificial
//! steady state, which is pulled toward the target pose by an offset cost.

mod model;
mod mpc;
pub mod qp;

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::context::nearest_in_lane;
use crate::trajdata::{RoadGeometry, VehicleState};
use crate::{Direction, Error, Manoeuvre, Result};

pub use model::{
    build_model, controllability_rank, dare_residual, lqr_gain, null_space, riccati, spectral_radius, steady_state_basis, InputBounds, Lqr, MpcWeights,
    PlantModel, StateBounds, DARE_TOL,
};
pub use mpc::{mpc_cost, rollout, solution_trace, solve_mpc, steady_state, EgoState, MpcSolution, SolverOptions, TraceRow};
pub use qp::SolveStatus;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetPose {
    pub y_hat: f64,
    pub psi_hat: f64,
    pub v_hat: f64,
}

impl TargetPose {
    pub fn as_array(&self) -> [f64; 3] {
        [self.y_hat, self.psi_hat, self.v_hat]
    }
}

/// Half-plane `a x + b y + c < 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HalfPlane {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl HalfPlane {
    pub fn new(a: f64, b: f64, c: f64) -> Result<Self> {
        if (a == 0.0 && b == 0.0) || !(a.is_finite() && b.is_finite() && c.is_finite()) {
            return Err(Error::Parameter(format!("degenerate half-plane ({a}, {b}, {c})")));
        }
        Ok(HalfPlane { a, b, c })
    }

    pub fn value(&self, x: f64, y: f64) -> f64 {
        self.a * x + self.b * y + self.c
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        self.value(x, y) < 0.0
    }
}

/// Half-planes per prediction step `0..=H`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollisionSet {
    pub steps: Vec<Vec<HalfPlane>>,
}

impl CollisionSet {
    /// The same planes at every step.
    pub fn uniform(planes: Vec<HalfPlane>, horizon: usize) -> Self {
        CollisionSet { steps: vec![planes; horizon + 1] }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn at(&self, k: usize) -> &[HalfPlane] {
        self.steps.get(k).map_or(&[], |v| v.as_slice())
    }

    /// Smallest slack `-(a x + b y + c)` of a point at step `k`.
    pub fn margin(&self, k: usize, x: f64, y: f64) -> f64 {
        self.at(k).iter().map(|p| -p.value(x, y)).fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    pub horizon: usize,
    pub ts: f64,
    pub wheelbase: f64,
    pub q: [f64; 3],
    pub r: [f64; 2],
    /// `T = offset_scale * P`.
    pub offset_scale: f64,
    pub state_bounds: StateBounds,
    pub input_bounds: InputBounds,
    /// Speed held when no lead vehicle constrains the target.
    pub v_pref: f64,
    /// Headway kept to the lead vehicle by the speed target, s.
    pub target_headway: f64,
    /// Headway of the rear boundary placed behind a lead vehicle, s.
    pub constraint_headway: f64,
    /// Standstill clearance behind a lead vehicle, m.
    pub gap_min: f64,
    /// Distance kept between the ego centre and the road edges, m.
    pub edge_margin: f64,
    /// Longitudinal clearance that counts as alongside, m.
    pub side_gap: f64,
    pub sensing_range: f64,
    /// Floor on the linearisation speed.
    pub min_model_speed: f64,
    pub solver: SolverOptions,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            horizon: 30,
            ts: 0.1,
            wheelbase: 2.7,
            q: [1e3, 1e-2, 1e-2],
            r: [10.0, 1e-2],
            offset_scale: 1e3,
            state_bounds: StateBounds::default(),
            input_bounds: InputBounds::default(),
            v_pref: 30.0,
            target_headway: 2.0,
            constraint_headway: 1.0,
            gap_min: 5.0,
            edge_margin: 1.0,
            side_gap: 2.0,
            sensing_range: 100.0,
            min_model_speed: 1.0,
            solver: SolverOptions::default(),
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("ts", self.ts),
            ("wheelbase", self.wheelbase),
            ("offset_scale", self.offset_scale),
            ("target_headway", self.target_headway),
            ("min_model_speed", self.min_model_speed),
            ("sensing_range", self.sensing_range),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Parameter(format!("{name} must be positive, got {v}")));
            }
        }
        let non_negative = [("v_pref", self.v_pref), ("constraint_headway", self.constraint_headway), ("gap_min", self.gap_min), ("edge_margin", self.edge_margin), ("side_gap", self.side_gap)];
        for (name, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Parameter(format!("{name} must be non-negative, got {v}")));
            }
        }
        if self.horizon == 0 {
            return Err(Error::Parameter("horizon must be at least 1".into()));
        }
        if !(self.solver.tolerance > 0.0) {
            return Err(Error::Parameter("solver tolerance must be positive".into()));
        }
        Ok(())
    }
}

/// Target pose for driving in `lane`: its centre, straight heading, and the
/// preferred speed capped by the headway to the lane's lead vehicle.
pub fn target_for_lane(lane: u32, snapshot: &[VehicleState], ego: &VehicleState, road: &RoadGeometry, cfg: &PlannerConfig) -> Result<TargetPose> {
    let y_hat = road.lane_centre(lane).ok_or_else(|| Error::Bounds(format!("lane {lane} is not on the road")))?;
    let v_cap = cfg.v_pref.min(cfg.state_bounds.v[1]).max(cfg.state_bounds.v[0].max(0.0));
    let v_hat = match nearest_in_lane(snapshot, ego, lane, true, cfg.sensing_range) {
        Some(lv) => (lv.gap / cfg.target_headway).clamp(0.0, v_cap),
        None => v_cap,
    };
    Ok(TargetPose { y_hat, psi_hat: 0.0, v_hat })
}

/// Lane the decision points at: the current one, or its left neighbour.
pub fn decision_lane(decision: Manoeuvre, ego: &VehicleState, road: &RoadGeometry) -> Result<u32> {
    match decision {
        Manoeuvre::LaneKeep => Ok(ego.lane),
        Manoeuvre::LaneChange => road.adjacent(ego.lane, Direction::Left).ok_or_else(|| Error::Bounds(format!("no lane to the left of lane {}", ego.lane))),
    }
}

pub fn target_generation(decision: Manoeuvre, snapshot: &[VehicleState], ego: &VehicleState, road: &RoadGeometry, cfg: &PlannerConfig) -> Result<TargetPose> {
    target_for_lane(decision_lane(decision, ego, road)?, snapshot, ego, road, cfg)
}

/// The two road-edge planes.
pub fn road_edge_planes(road: &RoadGeometry, cfg: &PlannerConfig) -> Vec<HalfPlane> {
    vec![
        HalfPlane { a: 0.0, b: -1.0, c: road.left_edge() + cfg.edge_margin },
        HalfPlane { a: 0.0, b: 1.0, c: -(road.right_edge() - cfg.edge_margin) },
    ]
}

/// Convex safe region over the horizon for an ego heading to `target_lane`.
///
/// Contains the road-edge planes, a rear boundary behind the lead vehicle
/// of the current lane and, when the ego is already clear behind it, of the
/// target lane (both extrapolated at constant speed), and
/// while the ego is still wholly in its lane, a side plane at every step
/// where a vehicle in the target lane is alongside.
pub fn build_collision_set(snapshot: &[VehicleState], ego: &VehicleState, road: &RoadGeometry, target_lane: u32, cfg: &PlannerConfig) -> Result<CollisionSet> {
    if !road.has_lane(target_lane) {
        return Err(Error::Bounds(format!("lane {target_lane} is not on the road")));
    }
    let h = cfg.horizon;
    let mut steps = vec![road_edge_planes(road, cfg); h + 1];

    let mut lanes = vec![ego.lane];
    if target_lane != ego.lane {
        lanes.push(target_lane);
    }
    for &lane in &lanes {
        let Some(lv) = nearest_in_lane(snapshot, ego, lane, true, cfg.sensing_range) else { continue };
        let Some(other) = snapshot.iter().find(|o| o.id == lv.id) else { continue };
        let clearance = 0.5 * (other.length + ego.length) + cfg.gap_min + other.speed * cfg.constraint_headway;
        // A target-lane vehicle the ego is not yet behind is handled by the
        // side plane.
        if lane != ego.lane && ego.x >= other.x - clearance {
            continue;
        }
        for (k, planes) in steps.iter_mut().enumerate() {
            let bound = other.x + other.speed * cfg.ts * k as f64 - clearance;
            planes.push(HalfPlane { a: 1.0, b: 0.0, c: -bound });
        }
    }

    if target_lane != ego.lane {
        if let Some((lo, hi)) = road.lane_bounds(ego.lane) {
            let half = 0.5 * ego.width;
            let (plane, inside) = if target_lane < ego.lane {
                (HalfPlane { a: 0.0, b: -1.0, c: lo + half }, ego.y - half > lo)
            } else {
                (HalfPlane { a: 0.0, b: 1.0, c: -(hi - half) }, ego.y + half < hi)
            };
            if inside {
                for (k, planes) in steps.iter_mut().enumerate() {
                    let t = cfg.ts * k as f64;
                    let ego_x = ego.x + ego.speed * t;
                    let alongside = snapshot
                        .iter()
                        .filter(|o| o.id != ego.id && o.lane == target_lane)
                        .any(|o| libm::fabs(o.x + o.speed * t - ego_x) < 0.5 * (o.length + ego.length) + cfg.side_gap);
                    if alongside {
                        planes.push(plane);
                    }
                }
            }
        }
    }

    let worst = steps[0].iter().map(|p| p.value(ego.x, ego.y)).fold(f64::NEG_INFINITY, f64::max);
    if worst >= 0.0 {
        return Err(Error::InfeasibleEnvironment { violation: worst });
    }
    Ok(CollisionSet { steps })
}

/// Plans with a model linearised at the current speed.
#[derive(Debug, Clone, PartialEq)]
pub struct Planner {
    pub config: PlannerConfig,
}

impl Planner {
    pub fn new(config: PlannerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Planner { config })
    }

    pub fn model_at(&self, v: f64) -> Result<PlantModel> {
        let c = &self.config;
        build_model(v.max(c.min_model_speed), c.wheelbase, c.ts, c.state_bounds, c.input_bounds)
    }

    pub fn weights(&self, model: &PlantModel) -> Result<MpcWeights> {
        let c = &self.config;
        MpcWeights::from_diagonals(model, c.q, c.r, c.offset_scale, c.horizon)
    }

    pub fn plan(&self, ego: &EgoState, target: &TargetPose, set: &CollisionSet) -> Result<MpcSolution> {
        let model = self.model_at(ego.v)?;
        let weights = self.weights(&model)?;
        solve_mpc(&model, &weights, ego, target, set, &self.config.solver)
    }

    /// Emergency input: full braking, with LQR steering toward `y_centre`.
    pub fn fallback(&self, ego: &EgoState, y_centre: f64) -> Result<[f64; 2]> {
        let model = self.model_at(ego.v)?;
        let c = &self.config;
        let q = DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(&c.q));
        let r = DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(&c.r));
        let lqr = lqr_gain(&model.a_dyn(), &model.b_dyn(), &q, &r)?;
        let e = nalgebra::DVector::from_row_slice(&[ego.y - y_centre, ego.psi, 0.0]);
        let steer = -(lqr.k.row(0) * e)[0];
        Ok(c.input_bounds.clamp([steer, c.input_bounds.accel[0]]))
    }
}
