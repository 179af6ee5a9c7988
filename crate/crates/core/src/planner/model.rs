use alloc::format;
use alloc::vec::Vec;

use nalgebra::{DMatrix, Matrix2, Matrix3, Matrix3x2, Schur};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Box bounds on the planner state `[y, psi, v]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StateBounds {
    pub y: [f64; 2],
    pub psi: [f64; 2],
    pub v: [f64; 2],
}

impl Default for StateBounds {
    fn default() -> Self {
        StateBounds { y: [f64::NEG_INFINITY, f64::INFINITY], psi: [-0.2, 0.2], v: [0.0, 40.0] }
    }
}

impl StateBounds {
    pub fn as_array(&self) -> [[f64; 2]; 3] {
        [self.y, self.psi, self.v]
    }
}

/// Box bounds on the input `[steer, accel]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InputBounds {
    pub steer: [f64; 2],
    pub accel: [f64; 2],
}

impl Default for InputBounds {
    fn default() -> Self {
        InputBounds { steer: [-0.1, 0.1], accel: [-4.0, 3.0] }
    }
}

impl InputBounds {
    pub fn as_array(&self) -> [[f64; 2]; 2] {
        [self.steer, self.accel]
    }

    pub fn clamp(&self, u: [f64; 2]) -> [f64; 2] {
        [u[0].clamp(self.steer[0], self.steer[1]), u[1].clamp(self.accel[0], self.accel[1])]
    }
}

fn check_interval(name: &str, b: [f64; 2]) -> Result<()> {
    if b[0].is_nan() || b[1].is_nan() || b[0] > b[1] {
        return Err(Error::Bounds(format!("{name} bounds [{}, {}] are not an interval", b[0], b[1])));
    }
    Ok(())
}

/// Linear lateral/heading/speed model about a linearisation speed `v0`,
/// discretised with forward Euler.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantModel {
    pub a: Matrix3<f64>,
    pub b: Matrix3x2<f64>,
    pub ts: f64,
    pub v0: f64,
    pub wheelbase: f64,
    pub state_bounds: StateBounds,
    pub input_bounds: InputBounds,
}

pub fn build_model(v0: f64, wheelbase: f64, ts: f64, state_bounds: StateBounds, input_bounds: InputBounds) -> Result<PlantModel> {
    if !(wheelbase > 0.0 && wheelbase.is_finite()) {
        return Err(Error::Parameter(format!("wheelbase must be positive, got {wheelbase}")));
    }
    if !(ts > 0.0 && ts.is_finite()) {
        return Err(Error::Parameter(format!("sampling time must be positive, got {ts}")));
    }
    if !(v0 >= 0.0 && v0.is_finite()) {
        return Err(Error::Parameter(format!("linearisation speed must be non-negative, got {v0}")));
    }
    for (name, b) in [("y", state_bounds.y), ("psi", state_bounds.psi), ("v", state_bounds.v), ("steer", input_bounds.steer), ("accel", input_bounds.accel)] {
        check_interval(name, b)?;
    }
    #[rustfmt::skip]
    let a = Matrix3::new(
        1.0, ts * v0, 0.0,
        0.0, 1.0, 0.0,
        0.0, 0.0, 1.0,
    );
    #[rustfmt::skip]
    let b = Matrix3x2::new(
        0.0, 0.0,
        ts * v0 / wheelbase, 0.0,
        0.0, ts,
    );
    let model = PlantModel { a, b, ts, v0, wheelbase, state_bounds, input_bounds };
    let rank = controllability_rank(&model.a_dyn(), &model.b_dyn());
    if rank < 3 {
        return Err(Error::RankDeficient(format!("controllability matrix has rank {rank} < 3 at v0 = {v0}")));
    }
    Ok(model)
}

impl PlantModel {
    pub fn a_dyn(&self) -> DMatrix<f64> {
        DMatrix::from_column_slice(3, 3, self.a.as_slice())
    }

    pub fn b_dyn(&self) -> DMatrix<f64> {
        DMatrix::from_column_slice(3, 2, self.b.as_slice())
    }

    pub fn step(&self, xi: [f64; 3], u: [f64; 2]) -> [f64; 3] {
        let next = self.a * nalgebra::Vector3::from(xi) + self.b * nalgebra::Vector2::from(u);
        [next[0], next[1], next[2]]
    }
}

/// Rank of `[B, AB, ..., A^(n-1) B]`.
pub fn controllability_rank(a: &DMatrix<f64>, b: &DMatrix<f64>) -> usize {
    let n = a.nrows();
    let m = b.ncols();
    let mut c = DMatrix::zeros(n, n * m);
    let mut blk = b.clone();
    for i in 0..n {
        c.view_mut((0, i * m), (n, m)).copy_from(&blk);
        blk = a * blk;
    }
    let scale = c.amax().max(1.0);
    c.rank(1e-10 * scale)
}

fn check_square(name: &str, m: &DMatrix<f64>, n: usize) -> Result<()> {
    if m.nrows() != n || m.ncols() != n {
        return Err(Error::Shape { expected: n, got: if m.nrows() != n { m.nrows() } else { m.ncols() } });
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Parameter(format!("{name} has non-finite entries")));
    }
    Ok(())
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

/// Largest absolute entry of the DARE residual
/// `A'PA - A'PB (R + B'PB)^-1 B'PA + Q - P`.
pub fn dare_residual(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>, p: &DMatrix<f64>) -> f64 {
    let bp = b.transpose() * p;
    let s = r + &bp * b;
    let Some(x) = s.lu().solve(&(&bp * a)) else {
        return f64::INFINITY;
    };
    let res = a.transpose() * p * a - (&bp * a).transpose() * x + q - p;
    res.amax()
}

const MAX_DOUBLING: usize = 100;
const MAX_NEWTON: usize = 6;
pub const DARE_TOL: f64 = 1e-8;

/// Stabilising solution of the discrete algebraic Riccati equation, by
/// structure-preserving doubling followed by Newton refinement.
pub fn riccati(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    check_square("A", a, n)?;
    check_square("Q", q, n)?;
    if b.nrows() != n {
        return Err(Error::Shape { expected: n, got: b.nrows() });
    }
    check_square("R", r, b.ncols())?;
    let r_chol = r.clone().cholesky().ok_or_else(|| Error::Numerical("R must be positive definite".into()))?;
    let id = DMatrix::<f64>::identity(n, n);

    let mut ak = a.clone();
    let mut gk = b * r_chol.solve(&b.transpose());
    symmetrize(&mut gk);
    let mut hk = q.clone();
    let mut converged = false;
    for _ in 0..MAX_DOUBLING {
        let lu = (&id + &gk * &hk).lu();
        let (Some(wa), Some(wg)) = (lu.solve(&ak), lu.solve(&gk)) else {
            return Err(Error::Numerical("singular matrix in Riccati doubling".into()));
        };
        let a_next = &ak * &wa;
        let mut g_next = &gk + &ak * wg * ak.transpose();
        let mut h_next = &hk + ak.transpose() * &hk * &wa;
        symmetrize(&mut g_next);
        symmetrize(&mut h_next);
        if h_next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("Riccati doubling diverged".into()));
        }
        let delta = (&h_next - &hk).amax();
        ak = a_next;
        gk = g_next;
        hk = h_next;
        if delta <= 1e-15 * hk.amax().max(1.0) {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Numerical("Riccati doubling did not converge".into()));
    }

    let mut p = hk;
    let mut res = dare_residual(a, b, q, r, &p);
    for _ in 0..MAX_NEWTON {
        if res <= 1e-3 * DARE_TOL {
            break;
        }
        let Some(next) = newton_step(a, b, q, r, &p) else { break };
        let next_res = dare_residual(a, b, q, r, &next);
        if next_res >= res {
            break;
        }
        p = next;
        res = next_res;
    }
    if !(res <= DARE_TOL * p.amax().max(1.0)) {
        return Err(Error::Numerical(format!("Riccati residual {res:e} above tolerance")));
    }
    Ok(p)
}

/// One Hewer iteration: the cost matrix of the gain implied by `p`.
fn newton_step(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>, p: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    let k = gain_from(a, b, r, p)?;
    let acl = a - b * &k;
    let rhs = q + k.transpose() * r * &k;
    let at = acl.transpose();
    let lhs = DMatrix::<f64>::identity(n * n, n * n) - at.kronecker(&at);
    let vec_rhs = DMatrix::from_column_slice(n * n, 1, rhs.as_slice());
    let sol = lhs.lu().solve(&vec_rhs)?;
    let mut next = DMatrix::from_column_slice(n, n, sol.as_slice());
    symmetrize(&mut next);
    Some(next)
}

fn gain_from(a: &DMatrix<f64>, b: &DMatrix<f64>, r: &DMatrix<f64>, p: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let bp = b.transpose() * p;
    (r + &bp * b).lu().solve(&(bp * a))
}

/// Largest eigenvalue modulus.
pub fn spectral_radius(m: &DMatrix<f64>) -> Result<f64> {
    let schur = Schur::try_new(m.clone(), 1e-14, 10_000).ok_or_else(|| Error::Numerical("eigenvalue iteration did not converge".into()))?;
    Ok(schur.complex_eigenvalues().iter().map(|z| libm::hypot(z.re, z.im)).fold(0.0, f64::max))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lqr {
    /// Feedback gain, `u = -K x`.
    pub k: DMatrix<f64>,
    pub p: DMatrix<f64>,
    /// Spectral radius of `A - B K`.
    pub spectral_radius: f64,
}

pub fn lqr_gain(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<Lqr> {
    let p = riccati(a, b, q, r)?;
    let k = gain_from(a, b, r, &p).ok_or_else(|| Error::Numerical("R + B'PB is singular".into()))?;
    let rho = spectral_radius(&(a - b * &k))?;
    if rho >= 1.0 {
        return Err(Error::Numerical(format!("closed loop not stable: spectral radius {rho}")));
    }
    Ok(Lqr { k, p, spectral_radius: rho })
}

/// Basis of the null space of `m` from its reduced row echelon form; one
/// column per free variable.
pub fn null_space(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (rows, cols) = m.shape();
    let mut r = m.clone();
    let tol = 1e-12 * r.amax().max(1.0);
    let mut pivots: Vec<usize> = Vec::new();
    let mut row = 0;
    for col in 0..cols {
        if row == rows {
            break;
        }
        let (best, val) = (row..rows).map(|i| (i, libm::fabs(r[(i, col)]))).fold((row, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        if val <= tol {
            continue;
        }
        r.swap_rows(row, best);
        let piv = r[(row, col)];
        for j in 0..cols {
            r[(row, j)] /= piv;
        }
        for i in 0..rows {
            if i != row {
                let f = r[(i, col)];
                if f != 0.0 {
                    for j in 0..cols {
                        r[(i, j)] -= f * r[(row, j)];
                    }
                }
            }
        }
        pivots.push(col);
        row += 1;
    }
    let free: Vec<usize> = (0..cols).filter(|c| !pivots.contains(c)).collect();
    let mut basis = DMatrix::zeros(cols, free.len());
    for (k, &f) in free.iter().enumerate() {
        basis[(f, k)] = 1.0;
        for (i, &p) in pivots.iter().enumerate() {
            basis[(p, k)] = -r[(i, f)];
        }
    }
    basis
}

/// `M_rho` (5 x r): columns span the steady states `(xi_ss; u_ss)`
/// solving `xi_ss = A xi_ss + B u_ss`.
pub fn steady_state_basis(model: &PlantModel) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(3, 5);
    m.view_mut((0, 0), (3, 3)).copy_from(&(model.a - Matrix3::identity()));
    m.view_mut((0, 3), (3, 2)).copy_from(&model.b);
    null_space(&m)
}

/// Weighting matrices of the tracking MPC.
#[derive(Debug, Clone, PartialEq)]
pub struct MpcWeights {
    pub q: Matrix3<f64>,
    pub r: Matrix2<f64>,
    pub p: Matrix3<f64>,
    /// Offset weight on `xi_ss - xi_hat`.
    pub t: Matrix3<f64>,
    pub horizon: usize,
}

impl MpcWeights {
    /// Diagonal `Q`, `R`; `P` from the DARE; `T = offset_scale * P`.
    pub fn from_diagonals(model: &PlantModel, q: [f64; 3], r: [f64; 2], offset_scale: f64, horizon: usize) -> Result<Self> {
        if q.iter().any(|v| !(*v > 0.0 && v.is_finite())) || r.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Parameter("Q and R diagonals must be positive".into()));
        }
        if !(offset_scale > 0.0 && offset_scale.is_finite()) {
            return Err(Error::Parameter(format!("offset scale must be positive, got {offset_scale}")));
        }
        if horizon == 0 {
            return Err(Error::Parameter("horizon must be at least 1".into()));
        }
        let qm = Matrix3::from_diagonal(&q.into());
        let rm = Matrix2::from_diagonal(&r.into());
        let p = riccati(&model.a_dyn(), &model.b_dyn(), &DMatrix::from_column_slice(3, 3, qm.as_slice()), &DMatrix::from_column_slice(2, 2, rm.as_slice()))?;
        let p = Matrix3::from_column_slice(p.as_slice());
        Ok(MpcWeights { q: qm, r: rm, p, t: p * offset_scale, horizon })
    }
}
