use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, Matrix3, RowDVector, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::model::{steady_state_basis, MpcWeights, PlantModel};
use super::qp::{solve_qp, QuadProgram, SolveStatus};
use super::{CollisionSet, TargetPose};
use crate::{Error, Result};

/// Planar pose and speed of the ego vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgoState {
    pub x: f64,
    pub y: f64,
    pub psi: f64,
    pub v: f64,
}

impl EgoState {
    pub fn xi(&self) -> [f64; 3] {
        [self.y, self.psi, self.v]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    pub max_iter: usize,
    /// Minimum slack required on every half-plane.
    pub tolerance: f64,
    /// Impose `xi(H) = xi_ss`.
    pub terminal_equality: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { max_iter: 500, tolerance: 1e-6, terminal_equality: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpcSolution {
    pub inputs: Vec<[f64; 2]>,
    pub rho: Vec<f64>,
    pub xi_ss: [f64; 3],
    pub u_ss: [f64; 2],
    /// `xi(0..=H)` by the model recursion under `inputs`.
    pub states: Vec<[f64; 3]>,
    /// Predicted longitudinal positions `x(0..=H)`.
    pub positions: Vec<f64>,
    pub objective: f64,
    pub status: SolveStatus,
    pub iterations: usize,
}

impl MpcSolution {
    /// Input applied to the plant.
    pub fn first_input(&self) -> [f64; 2] {
        self.inputs[0]
    }

    /// Inputs shifted by one step and padded with the steady-state input.
    pub fn shifted_inputs(&self) -> Vec<[f64; 2]> {
        let mut u: Vec<[f64; 2]> = self.inputs[1..].to_vec();
        u.push(self.u_ss);
        u
    }

    /// Smallest slack `-(a x + b y + c)` over all steps `1..=H`.
    pub fn min_margin(&self, set: &CollisionSet) -> f64 {
        (1..self.states.len()).flat_map(|k| set.at(k).iter().map(move |p| -p.value(self.positions[k], self.states[k][0]))).fold(f64::INFINITY, f64::min)
    }
}

/// One row of an exported solution trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub k: usize,
    pub y: f64,
    pub psi: f64,
    pub v: f64,
    pub steer: f64,
    pub accel: f64,
    pub objective: f64,
    pub status: SolveStatus,
}

/// Per-step rows; the input columns of the final state repeat `u_ss`.
pub fn solution_trace(sol: &MpcSolution) -> Vec<TraceRow> {
    sol.states
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let u = sol.inputs.get(k).copied().unwrap_or(sol.u_ss);
            TraceRow { k, y: s[0], psi: s[1], v: s[2], steer: u[0], accel: u[1], objective: sol.objective, status: sol.status }
        })
        .collect()
}

/// States `xi(0..=H)` and positions `x(0..=H)` by direct recursion.
pub fn rollout(model: &PlantModel, ego: &EgoState, inputs: &[[f64; 2]]) -> (Vec<[f64; 3]>, Vec<f64>) {
    let mut states = Vec::with_capacity(inputs.len() + 1);
    let mut xs = Vec::with_capacity(inputs.len() + 1);
    let mut xi = ego.xi();
    let mut x = ego.x;
    states.push(xi);
    xs.push(x);
    for u in inputs {
        x += model.ts * xi[2];
        xi = model.step(xi, *u);
        states.push(xi);
        xs.push(x);
    }
    (states, xs)
}

/// Steady state `(xi_ss, u_ss)` for parameter `rho`.
pub fn steady_state(model: &PlantModel, rho: &[f64]) -> Result<([f64; 3], [f64; 2])> {
    let basis = steady_state_basis(model);
    if rho.len() != basis.ncols() {
        return Err(Error::Shape { expected: basis.ncols(), got: rho.len() });
    }
    let z = basis * DVector::from_row_slice(rho);
    Ok(([z[0], z[1], z[2]], [z[3], z[4]]))
}

/// Tracking cost of an input sequence and steady-state parameter.
pub fn mpc_cost(model: &PlantModel, weights: &MpcWeights, ego: &EgoState, target: &TargetPose, inputs: &[[f64; 2]], rho: &[f64]) -> Result<f64> {
    if inputs.len() != weights.horizon {
        return Err(Error::Length { need: weights.horizon, got: inputs.len() });
    }
    let (xi_ss, u_ss) = steady_state(model, rho)?;
    let (xs, us) = (Vector3::from(xi_ss), Vector2::from(u_ss));
    let (states, _) = rollout(model, ego, inputs);
    let quad3 = |e: Vector3<f64>, w: &Matrix3<f64>| e.dot(&(w * e));
    let mut cost = 0.0;
    for (k, u) in inputs.iter().enumerate() {
        let e = Vector3::from(states[k]) - xs;
        let du = Vector2::from(*u) - us;
        cost += quad3(e, &weights.q) + du.dot(&(weights.r * du));
    }
    cost += quad3(Vector3::from(states[weights.horizon]) - xs, &weights.p);
    cost += quad3(xs - Vector3::from(target.as_array()), &weights.t);
    Ok(cost)
}

/// Affine map `z -> L z + m` of the decision vector.
struct Affine {
    l: DMatrix<f64>,
    m: DVector<f64>,
}

struct Quadratic {
    h: DMatrix<f64>,
    f: DVector<f64>,
}

impl Quadratic {
    /// Adds `|L z + m|^2_W`.
    fn add(&mut self, a: &Affine, w: &DMatrix<f64>) {
        let lw = a.l.transpose() * w;
        self.h += &lw * &a.l;
        self.f += lw * &a.m;
    }
}

struct Rows {
    mat: Vec<RowDVector<f64>>,
    rhs: Vec<f64>,
}

impl Rows {
    /// `row z + offset <= bound`; skipped for infinite bounds.
    fn push(&mut self, row: RowDVector<f64>, offset: f64, bound: f64) {
        if bound.is_finite() {
            self.mat.push(row);
            self.rhs.push(bound - offset);
        }
    }

    fn push_box(&mut self, row: RowDVector<f64>, offset: f64, b: [f64; 2]) {
        self.push(row.clone(), offset, b[1]);
        self.push(-row, -offset, -b[0]);
    }

    fn into_parts(self, nz: usize) -> (DMatrix<f64>, DVector<f64>) {
        if self.mat.is_empty() {
            return (DMatrix::zeros(0, nz), DVector::zeros(0));
        }
        (DMatrix::from_rows(&self.mat), DVector::from_vec(self.rhs))
    }
}

fn dyn3(m: &Matrix3<f64>) -> DMatrix<f64> {
    DMatrix::from_column_slice(3, 3, m.as_slice())
}

/// Solves the tracking MPC over inputs and the steady-state parameter.
pub fn solve_mpc(model: &PlantModel, weights: &MpcWeights, ego: &EgoState, target: &TargetPose, set: &CollisionSet, opts: &SolverOptions) -> Result<MpcSolution> {
    let h = weights.horizon;
    if h == 0 {
        return Err(Error::Parameter("horizon must be at least 1".into()));
    }
    if set.len() < h + 1 {
        return Err(Error::Length { need: h + 1, got: set.len() });
    }
    if [ego.x, ego.y, ego.psi, ego.v].iter().any(|v| !v.is_finite()) {
        return Err(Error::Parameter("ego state is not finite".into()));
    }
    let basis = steady_state_basis(model);
    let nr = basis.ncols();
    let nz = 2 * h + nr;
    let a = model.a_dyn();
    let b = model.b_dyn();

    let mut mx = DMatrix::zeros(3, nz);
    mx.view_mut((0, 2 * h), (3, nr)).copy_from(&basis.rows(0, 3));
    let mut mu = DMatrix::zeros(2, nz);
    mu.view_mut((0, 2 * h), (2, nr)).copy_from(&basis.rows(3, 2));

    // xi(k) = sx[k] z + s0[k]
    let mut sx = vec![DMatrix::zeros(3, nz)];
    let mut s0 = vec![DVector::from_row_slice(&ego.xi())];
    // x(k) = px[k] z + p0[k]
    let mut px = vec![RowDVector::zeros(nz)];
    let mut p0 = vec![ego.x];
    for k in 0..h {
        let mut next = &a * &sx[k];
        let mut bu = DMatrix::zeros(3, nz);
        bu.view_mut((0, 2 * k), (3, 2)).copy_from(&b);
        next += bu;
        px.push(&px[k] + sx[k].row(2) * model.ts);
        p0.push(p0[k] + model.ts * s0[k][2]);
        s0.push(&a * &s0[k]);
        sx.push(next);
    }
    let select_u = |k: usize| {
        let mut s = DMatrix::zeros(2, nz);
        s[(0, 2 * k)] = 1.0;
        s[(1, 2 * k + 1)] = 1.0;
        s
    };

    let (q, r, p, t) = (dyn3(&weights.q), DMatrix::from_column_slice(2, 2, weights.r.as_slice()), dyn3(&weights.p), dyn3(&weights.t));
    let mut cost = Quadratic { h: DMatrix::zeros(nz, nz), f: DVector::zeros(nz) };
    for k in 0..h {
        cost.add(&Affine { l: &sx[k] - &mx, m: s0[k].clone() }, &q);
        cost.add(&Affine { l: select_u(k) - &mu, m: DVector::zeros(2) }, &r);
    }
    cost.add(&Affine { l: &sx[h] - &mx, m: s0[h].clone() }, &p);
    cost.add(&Affine { l: mx.clone(), m: -DVector::from_row_slice(&target.as_array()) }, &t);
    let sym = cost.h.transpose();
    let g = (&cost.h + sym) * 0.5 * 2.0;

    let (eq_mat, eq_rhs) = if opts.terminal_equality { (&sx[h] - &mx, -&s0[h]) } else { (DMatrix::zeros(0, nz), DVector::zeros(0)) };

    let mut rows = Rows { mat: Vec::new(), rhs: Vec::new() };
    let ub = model.input_bounds.as_array();
    for k in 0..h {
        for (i, bnd) in ub.iter().enumerate() {
            let mut row = RowDVector::zeros(nz);
            row[2 * k + i] = 1.0;
            rows.push_box(row, 0.0, *bnd);
        }
    }
    for (i, bnd) in ub.iter().enumerate() {
        rows.push_box(mu.row(i).into_owned(), 0.0, *bnd);
    }
    let xb = model.state_bounds.as_array();
    let margin = 10.0 * opts.tolerance;
    for k in 1..=h {
        for (i, bnd) in xb.iter().enumerate() {
            rows.push_box(sx[k].row(i).into_owned(), s0[k][i], *bnd);
        }
        for plane in set.at(k) {
            let row = &px[k] * plane.a + sx[k].row(0) * plane.b;
            rows.push(row, plane.a * p0[k] + plane.b * s0[k][0] + plane.c, -margin);
        }
    }
    let (ineq_mat, ineq_rhs) = rows.into_parts(nz);
    let problem = QuadProgram { g, c: cost.f * 2.0, eq_mat, eq_rhs, ineq_mat, ineq_rhs };
    let sol = solve_qp(&problem, opts.max_iter, 1e-9)?;

    let inputs: Vec<[f64; 2]> = (0..h).map(|k| model.input_bounds.clamp([sol.x[2 * k], sol.x[2 * k + 1]])).collect();
    let rho: Vec<f64> = (0..nr).map(|i| sol.x[2 * h + i]).collect();
    let (xi_ss, u_ss) = steady_state(model, &rho)?;
    let (states, positions) = rollout(model, ego, &inputs);
    let objective = mpc_cost(model, weights, ego, target, &inputs, &rho)?;
    if sol.status == SolveStatus::Optimal && !objective.is_finite() {
        return Err(Error::Numerical(format!("non-finite MPC objective {objective}")));
    }
    Ok(MpcSolution { inputs, rho, xi_ss, u_ss, states, positions, objective, status: sol.status, iterations: sol.iterations })
}

#[cfg(test)]
mod tests {
    use super::super::model::{build_model, InputBounds, StateBounds};
    use super::super::HalfPlane;
    use super::*;

    fn defaults() -> (PlantModel, MpcWeights) {
        let m = build_model(25.0, 2.7, 0.1, StateBounds::default(), InputBounds::default()).unwrap();
        let w = MpcWeights::from_diagonals(&m, [1e3, 1e-2, 1e-2], [10.0, 1e-2], 1e3, 30).unwrap();
        (m, w)
    }

    fn free_set(h: usize) -> CollisionSet {
        CollisionSet { steps: vec![Vec::new(); h + 1] }
    }

    #[test]
    fn at_target_steady_state_costs_nothing() {
        let (m, w) = defaults();
        let ego = EgoState { x: 0.0, y: 5.55, psi: 0.0, v: 25.0 };
        let target = TargetPose { y_hat: 5.55, psi_hat: 0.0, v_hat: 25.0 };
        let sol = solve_mpc(&m, &w, &ego, &target, &free_set(30), &SolverOptions::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!(sol.objective.abs() < 1e-8, "{}", sol.objective);
        assert!(sol.inputs.iter().all(|u| u[0].abs() < 1e-8 && u[1].abs() < 1e-8));
    }

    #[test]
    fn predicted_states_follow_dynamics() {
        let (m, w) = defaults();
        let ego = EgoState { x: 0.0, y: 5.55, psi: 0.01, v: 24.0 };
        let target = TargetPose { y_hat: 1.85, psi_hat: 0.0, v_hat: 27.0 };
        let set = CollisionSet::uniform(vec![HalfPlane::new(0.0, -1.0, 1.0).unwrap(), HalfPlane::new(0.0, 1.0, -10.1).unwrap()], 30);
        let sol = solve_mpc(&m, &w, &ego, &target, &set, &SolverOptions::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        for k in 0..30 {
            let next = m.step(sol.states[k], sol.inputs[k]);
            assert!(next.iter().zip(&sol.states[k + 1]).all(|(a, b)| (a - b).abs() <= 1e-10));
        }
        assert!(sol.min_margin(&set) >= 1e-6);
        let ib = InputBounds::default();
        assert!(sol.inputs.iter().all(|u| ib.clamp(*u) == *u));
        // terminal equality
        for i in 0..3 {
            assert!((sol.states[30][i] - sol.xi_ss[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn offset_shrinks_as_offset_weight_grows() {
        let m = build_model(20.0, 2.7, 0.1, StateBounds::default(), InputBounds::default()).unwrap();
        let ego = EgoState { x: 0.0, y: 5.55, psi: 0.0, v: 20.0 };
        let target = TargetPose { y_hat: 1.85, psi_hat: 0.0, v_hat: 28.0 };
        let mut last = f64::INFINITY;
        for scale in [1e-2, 2e-2, 4e-2, 8e-2, 1.6e-1, 3.2e-1] {
            let w = MpcWeights::from_diagonals(&m, [1e3, 1e-2, 1e-2], [10.0, 1e-2], scale, 10).unwrap();
            let sol = solve_mpc(&m, &w, &ego, &target, &free_set(10), &SolverOptions::default()).unwrap();
            let off = libm::hypot(sol.xi_ss[0] - target.y_hat, sol.xi_ss[2] - target.v_hat);
            assert!(off < last, "scale {scale}: {off} !< {last}");
            last = off;
        }
    }

    #[test]
    fn one_step_unconstrained_matches_least_squares() {
        let m = build_model(10.0, 2.5, 0.1, StateBounds { y: [f64::NEG_INFINITY, f64::INFINITY], psi: [f64::NEG_INFINITY, f64::INFINITY], v: [f64::NEG_INFINITY, f64::INFINITY] }, InputBounds { steer: [f64::NEG_INFINITY, f64::INFINITY], accel: [f64::NEG_INFINITY, f64::INFINITY] }).unwrap();
        let w = MpcWeights { q: Matrix3::from_diagonal(&Vector3::new(2.0, 0.5, 1.0)), r: nalgebra::Matrix2::from_diagonal(&Vector2::new(3.0, 0.2)), p: Matrix3::from_diagonal(&Vector3::new(4.0, 1.0, 2.0)), t: Matrix3::from_diagonal(&Vector3::new(5.0, 1.0, 3.0)), horizon: 1 };
        let ego = EgoState { x: 0.0, y: 1.0, psi: 0.05, v: 9.0 };
        let target = TargetPose { y_hat: 2.0, psi_hat: 0.0, v_hat: 11.0 };
        let opts = SolverOptions { terminal_equality: false, ..Default::default() };
        let sol = solve_mpc(&m, &w, &ego, &target, &free_set(1), &opts).unwrap();
        // Stack sqrt-weighted residuals in (delta, a, y_ss, v_ss) and solve
        // the normal equations directly.
        let (ts, v0, l) = (0.1, 10.0, 2.5);
        let xi1 = [ego.y + ts * v0 * ego.psi, ego.psi, ego.v];
        let s = |v: f64| libm::sqrt(v);
        #[rustfmt::skip]
        let rows: [([f64; 4], f64); 11] = [
            ([0.0, 0.0, -s(2.0), 0.0], s(2.0) * ego.y),
            ([0.0, 0.0, 0.0, 0.0], s(0.5) * ego.psi),
            ([0.0, 0.0, 0.0, -s(1.0)], s(1.0) * ego.v),
            ([s(3.0), 0.0, 0.0, 0.0], 0.0),
            ([0.0, s(0.2), 0.0, 0.0], 0.0),
            ([0.0, 0.0, -s(4.0), 0.0], s(4.0) * xi1[0]),
            ([s(1.0) * ts * v0 / l, 0.0, 0.0, 0.0], s(1.0) * xi1[1]),
            ([0.0, s(2.0) * ts, 0.0, -s(2.0)], s(2.0) * xi1[2]),
            ([0.0, 0.0, s(5.0), 0.0], -s(5.0) * target.y_hat),
            ([0.0, 0.0, 0.0, 0.0], 0.0),
            ([0.0, 0.0, 0.0, s(3.0)], -s(3.0) * target.v_hat),
        ];
        let a = DMatrix::from_fn(11, 4, |i, j| rows[i].0[j]);
        let bv = DVector::from_fn(11, |i, _| -rows[i].1);
        let z = (a.transpose() * &a).lu().solve(&(a.transpose() * bv)).unwrap();
        assert!((sol.inputs[0][0] - z[0]).abs() < 1e-9);
        assert!((sol.inputs[0][1] - z[1]).abs() < 1e-9);
        assert!((sol.rho[0] - z[2]).abs() < 1e-9);
        assert!((sol.rho[1] - z[3]).abs() < 1e-9);
    }

    #[test]
    fn shifted_plan_stays_feasible_on_nominal_model() {
        let (m, w) = defaults();
        let set = CollisionSet::uniform(vec![HalfPlane::new(0.0, -1.0, 1.0).unwrap(), HalfPlane::new(0.0, 1.0, -10.1).unwrap()], 30);
        let mut ego = EgoState { x: 0.0, y: 5.55, psi: 0.0, v: 25.0 };
        let target = TargetPose { y_hat: 1.85, psi_hat: 0.0, v_hat: 25.0 };
        let opts = SolverOptions::default();
        let mut sol = solve_mpc(&m, &w, &ego, &target, &set, &opts).unwrap();
        for _ in 0..20 {
            assert_eq!(sol.status, SolveStatus::Optimal);
            let u = sol.first_input();
            let next = m.step(ego.xi(), u);
            ego = EgoState { x: ego.x + m.ts * ego.v, y: next[0], psi: next[1], v: next[2] };
            // the shifted candidate is feasible for the next problem
            let (states, xs) = rollout(&m, &ego, &sol.shifted_inputs());
            for k in 1..=30 {
                assert!(set.at(k).iter().all(|p| p.value(xs[k], states[k][0]) < 0.0));
            }
            let prev = sol.objective;
            sol = solve_mpc(&m, &w, &ego, &target, &set, &opts).unwrap();
            assert!(sol.objective <= prev + 1e-6);
        }
    }
}
