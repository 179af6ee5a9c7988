//! Dense strictly convex quadratic programming by the Goldfarb–Idnani dual
//! active-set method.
//!
//! Solves `min 0.5 x'Gx + c'x` subject to `E x = e` and `C x <= d`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct QuadProgram {
    pub g: DMatrix<f64>,
    pub c: DVector<f64>,
    pub eq_mat: DMatrix<f64>,
    pub eq_rhs: DVector<f64>,
    pub ineq_mat: DMatrix<f64>,
    pub ineq_rhs: DVector<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    MaxIter,
}

impl SolveStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::MaxIter => "max_iter",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub objective: f64,
    pub status: SolveStatus,
    pub iterations: usize,
    /// Indices (into the inequality rows) active at the solution.
    pub active: Vec<usize>,
}

impl QuadProgram {
    pub fn dimension(&self) -> usize {
        self.g.nrows()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.g * x)) + self.c.dot(x)
    }

    fn validate(&self) -> Result<()> {
        let n = self.g.nrows();
        if self.g.ncols() != n {
            return Err(Error::Shape { expected: n, got: self.g.ncols() });
        }
        for (rows, cols, rhs) in [(self.c.nrows(), n, n), (self.eq_mat.ncols(), n, self.eq_mat.ncols()), (self.ineq_mat.ncols(), n, self.ineq_mat.ncols())] {
            if rows != cols {
                return Err(Error::Shape { expected: cols, got: rhs });
            }
        }
        if self.eq_rhs.nrows() != self.eq_mat.nrows() {
            return Err(Error::Shape { expected: self.eq_mat.nrows(), got: self.eq_rhs.nrows() });
        }
        if self.ineq_rhs.nrows() != self.ineq_mat.nrows() {
            return Err(Error::Shape { expected: self.ineq_mat.nrows(), got: self.ineq_rhs.nrows() });
        }
        let finite = |m: &DMatrix<f64>| m.iter().all(|v| v.is_finite());
        if !finite(&self.g) || !self.c.iter().all(|v| v.is_finite()) || !finite(&self.eq_mat) || !finite(&self.ineq_mat) {
            return Err(Error::Parameter("quadratic program has non-finite data".into()));
        }
        Ok(())
    }
}

/// Solver state: `J' N_active = [R; 0]` with `J J' = G^-1`.
struct Factor {
    n: usize,
    j: DMatrix<f64>,
    r: DMatrix<f64>,
    iq: usize,
    r_norm: f64,
}

impl Factor {
    fn z(&self, d: &DVector<f64>) -> DVector<f64> {
        let mut z = DVector::zeros(self.n);
        for col in self.iq..self.n {
            z.axpy(d[col], &self.j.column(col), 1.0);
        }
        z
    }

    /// Solves `R[..iq, ..iq] r = d[..iq]`.
    fn r_vec(&self, d: &DVector<f64>) -> Vec<f64> {
        let mut r = vec![0.0; self.iq];
        for i in (0..self.iq).rev() {
            let sum = (i + 1..self.iq).fold(d[i], |s, k| s - self.r[(i, k)] * r[k]);
            r[i] = sum / self.r[(i, i)];
        }
        r
    }

    fn rotate_j(&mut self, a: usize, b: usize, c: f64, s: f64) {
        for k in 0..self.n {
            let (ja, jb) = (self.j[(k, a)], self.j[(k, b)]);
            self.j[(k, a)] = c * ja + s * jb;
            self.j[(k, b)] = -s * ja + c * jb;
        }
    }

    /// Appends the constraint whose transformed normal is `d`. Returns
    /// false when it is linearly dependent on the active set.
    fn add(&mut self, mut d: DVector<f64>) -> bool {
        for jj in (self.iq + 1..self.n).rev() {
            let (a, b) = (d[jj - 1], d[jj]);
            let h = libm::hypot(a, b);
            if h == 0.0 {
                continue;
            }
            let (c, s) = (a / h, b / h);
            d[jj - 1] = h;
            d[jj] = 0.0;
            self.rotate_j(jj - 1, jj, c, s);
        }
        let col = self.iq;
        for i in 0..=col {
            self.r[(i, col)] = d[i];
        }
        self.iq += 1;
        let diag = libm::fabs(d[col]);
        if diag <= f64::EPSILON * self.r_norm {
            return false;
        }
        self.r_norm = self.r_norm.max(diag);
        true
    }

    /// Removes the active constraint at position `l`.
    fn remove(&mut self, l: usize) {
        for col in l..self.iq - 1 {
            for i in 0..self.n {
                self.r[(i, col)] = self.r[(i, col + 1)];
            }
        }
        for i in 0..self.n {
            self.r[(i, self.iq - 1)] = 0.0;
        }
        self.iq -= 1;
        for jj in l..self.iq {
            let (a, b) = (self.r[(jj, jj)], self.r[(jj + 1, jj)]);
            let h = libm::hypot(a, b);
            if h == 0.0 {
                continue;
            }
            let (c, s) = (a / h, b / h);
            self.r[(jj, jj)] = h;
            self.r[(jj + 1, jj)] = 0.0;
            for k in jj + 1..self.iq {
                let (ra, rb) = (self.r[(jj, k)], self.r[(jj + 1, k)]);
                self.r[(jj, k)] = c * ra + s * rb;
                self.r[(jj + 1, k)] = -s * ra + c * rb;
            }
            self.rotate_j(jj, jj + 1, c, s);
        }
    }
}

#[derive(Clone)]
struct Snapshot {
    x: DVector<f64>,
    j: DMatrix<f64>,
    r: DMatrix<f64>,
    iq: usize,
    r_norm: f64,
    active: Vec<usize>,
    u: Vec<f64>,
}

/// Constraint `n'x >= b` after row normalisation.
struct Row {
    normal: DVector<f64>,
    b: f64,
}

pub fn solve_qp(qp: &QuadProgram, max_iter: usize, feas_tol: f64) -> Result<QpSolution> {
    qp.validate()?;
    let n = qp.dimension();
    let chol = qp.g.clone().cholesky().ok_or_else(|| Error::Numerical("QP Hessian is not positive definite".into()))?;
    let lt = chol.l().transpose();
    let j = lt.solve_upper_triangular(&DMatrix::identity(n, n)).ok_or_else(|| Error::Numerical("singular Cholesky factor".into()))?;
    let mut x = -chol.solve(&qp.c);

    let meq = qp.eq_mat.nrows();
    let mut rows: Vec<Row> = Vec::with_capacity(meq + qp.ineq_mat.nrows());
    // Inequality index into `qp.ineq_mat`, per row.
    let mut origin: Vec<Option<usize>> = Vec::new();
    for i in 0..meq {
        let nrm = qp.eq_mat.row(i).norm();
        if nrm < 1e-14 {
            if libm::fabs(qp.eq_rhs[i]) > feas_tol {
                return Ok(infeasible(qp, x, 0));
            }
            continue;
        }
        rows.push(Row { normal: qp.eq_mat.row(i).transpose() / nrm, b: qp.eq_rhs[i] / nrm });
        origin.push(None);
    }
    let meq = rows.len();
    for i in 0..qp.ineq_mat.nrows() {
        let nrm = qp.ineq_mat.row(i).norm();
        if nrm < 1e-14 {
            if qp.ineq_rhs[i] < -feas_tol {
                return Ok(infeasible(qp, x, 0));
            }
            continue;
        }
        rows.push(Row { normal: -qp.ineq_mat.row(i).transpose() / nrm, b: -qp.ineq_rhs[i] / nrm });
        origin.push(Some(i));
    }
    let m = rows.len();

    let mut f = Factor { n, j, r: DMatrix::zeros(n, n), iq: 0, r_norm: 1.0 };
    let mut active: Vec<usize> = Vec::new();
    let mut u: Vec<f64> = Vec::new();

    for (i, row) in rows.iter().enumerate().take(meq) {
        let d = f.j.tr_mul(&row.normal);
        let z = f.z(&d);
        let r = f.r_vec(&d);
        let zn = z.dot(&row.normal);
        let t = if libm::fabs(zn) > f64::EPSILON { (row.b - row.normal.dot(&x)) / zn } else { 0.0 };
        x.axpy(t, &z, 1.0);
        for (uk, rk) in u.iter_mut().zip(&r) {
            *uk -= t * rk;
        }
        u.push(t);
        active.push(i);
        if !f.add(d) {
            return Err(Error::RankDeficient(format!("equality constraint {i} is linearly dependent")));
        }
    }
    if let Some(bad) = rows[..meq].iter().map(|r| libm::fabs(r.normal.dot(&x) - r.b)).find(|v| *v > 1e-8 * (1.0 + x.amax())) {
        return Err(Error::Numerical(format!("equality constraints unsatisfied by {bad:e}")));
    }

    let mut is_active = vec![false; m];
    let mut excluded = vec![false; m];
    let mut iterations = 0;
    loop {
        // Step 1: most violated inequality.
        let mut ip = None;
        let mut worst = -feas_tol;
        for i in meq..m {
            if is_active[i] || excluded[i] {
                continue;
            }
            let s = rows[i].normal.dot(&x) - rows[i].b;
            if s < worst {
                worst = s;
                ip = Some(i);
            }
        }
        let Some(ip) = ip else {
            let still_violated = (meq..m).any(|i| excluded[i] && rows[i].normal.dot(&x) - rows[i].b < -feas_tol);
            let status = if still_violated { SolveStatus::Infeasible } else { SolveStatus::Optimal };
            return Ok(finish(qp, x, status, iterations, &active, &origin));
        };
        iterations += 1;
        if iterations > max_iter {
            return Ok(finish(qp, x, SolveStatus::MaxIter, iterations - 1, &active, &origin));
        }
        let snap = Snapshot { x: x.clone(), j: f.j.clone(), r: f.r.clone(), iq: f.iq, r_norm: f.r_norm, active: active.clone(), u: u.clone() };
        let np = &rows[ip].normal;
        let mut s_ip = worst;
        let mut u_ip = 0.0;
        // Step 2: move until `ip` is satisfied, dropping blocking constraints.
        loop {
            let d = f.j.tr_mul(np);
            let z = f.z(&d);
            let r = f.r_vec(&d);
            let mut t1 = f64::INFINITY;
            let mut l = None;
            for k in meq..f.iq {
                if r[k] > 0.0 && u[k] / r[k] < t1 {
                    t1 = u[k] / r[k];
                    l = Some(k);
                }
            }
            let zn = z.dot(np);
            let t2 = if z.norm() > f64::EPSILON && zn > 0.0 { -s_ip / zn } else { f64::INFINITY };
            let t = t1.min(t2);
            if t == f64::INFINITY {
                return Ok(finish(qp, x, SolveStatus::Infeasible, iterations, &active, &origin));
            }
            for (uk, rk) in u.iter_mut().zip(&r) {
                *uk -= t * rk;
            }
            u_ip += t;
            if t2 == f64::INFINITY {
                let l = l.expect("finite partial step has a blocking constraint");
                is_active[active[l]] = false;
                active.remove(l);
                u.remove(l);
                f.remove(l);
                continue;
            }
            x.axpy(t, &z, 1.0);
            if t2 <= t1 {
                if f.add(d) {
                    active.push(ip);
                    u.push(u_ip);
                    is_active[ip] = true;
                } else {
                    x = snap.x;
                    f.j = snap.j;
                    f.r = snap.r;
                    f.iq = snap.iq;
                    f.r_norm = snap.r_norm;
                    for &a in &active {
                        is_active[a] = false;
                    }
                    active = snap.active;
                    u = snap.u;
                    for &a in &active {
                        is_active[a] = true;
                    }
                    excluded[ip] = true;
                }
                break;
            }
            let l = l.expect("partial step has a blocking constraint");
            is_active[active[l]] = false;
            active.remove(l);
            u.remove(l);
            f.remove(l);
            s_ip = np.dot(&x) - rows[ip].b;
            iterations += 1;
            if iterations > max_iter {
                return Ok(finish(qp, x, SolveStatus::MaxIter, iterations - 1, &active, &origin));
            }
        }
    }
}

fn infeasible(qp: &QuadProgram, x: DVector<f64>, iterations: usize) -> QpSolution {
    QpSolution { objective: qp.objective(&x), x, status: SolveStatus::Infeasible, iterations, active: Vec::new() }
}

fn finish(qp: &QuadProgram, x: DVector<f64>, status: SolveStatus, iterations: usize, active: &[usize], origin: &[Option<usize>]) -> QpSolution {
    let mut act: Vec<usize> = active.iter().filter_map(|&a| origin[a]).collect();
    act.sort_unstable();
    QpSolution { objective: qp.objective(&x), x, status, iterations, active: act }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn qp(g: &[f64], c: &[f64], ineq: &[f64], d: &[f64]) -> QuadProgram {
        let n = c.len();
        QuadProgram {
            g: DMatrix::from_row_slice(n, n, g),
            c: DVector::from_row_slice(c),
            eq_mat: DMatrix::zeros(0, n),
            eq_rhs: DVector::zeros(0),
            ineq_mat: DMatrix::from_row_slice(d.len(), n, ineq),
            ineq_rhs: DVector::from_row_slice(d),
        }
    }

    #[test]
    fn unconstrained_minimum() {
        let p = qp(&[2.0, 0.0, 0.0, 4.0], &[-2.0, -4.0], &[], &[]);
        let s = solve_qp(&p, 100, 1e-9).unwrap();
        assert_eq!(s.status, SolveStatus::Optimal);
        assert!((s.x[0] - 1.0).abs() < 1e-14 && (s.x[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn projection_onto_halfplane() {
        // min |x - (2, 2)|^2 s.t. x + y <= 2  ->  (1, 1)
        let p = qp(&[2.0, 0.0, 0.0, 2.0], &[-4.0, -4.0], &[1.0, 1.0], &[2.0]);
        let s = solve_qp(&p, 100, 1e-9).unwrap();
        assert_eq!(s.status, SolveStatus::Optimal);
        assert!((s.x[0] - 1.0).abs() < 1e-12 && (s.x[1] - 1.0).abs() < 1e-12);
        assert_eq!(s.active, vec![0]);
    }

    #[test]
    fn equality_and_bound() {
        // min x^2 + y^2 s.t. x + y = 2, x <= 0.5  ->  (0.5, 1.5)
        let mut p = qp(&[2.0, 0.0, 0.0, 2.0], &[0.0, 0.0], &[1.0, 0.0], &[0.5]);
        p.eq_mat = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        p.eq_rhs = DVector::from_row_slice(&[2.0]);
        let s = solve_qp(&p, 100, 1e-9).unwrap();
        assert_eq!(s.status, SolveStatus::Optimal);
        assert!((s.x[0] - 0.5).abs() < 1e-12 && (s.x[1] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn contradictory_bounds_are_infeasible() {
        let p = qp(&[1.0], &[0.0], &[1.0, -1.0], &[-1.0, -1.0]);
        assert_eq!(solve_qp(&p, 100, 1e-9).unwrap().status, SolveStatus::Infeasible);
    }

    #[test]
    fn duplicate_rows_are_harmless() {
        let p = qp(&[2.0, 0.0, 0.0, 2.0], &[-4.0, -4.0], &[1.0, 1.0, 2.0, 2.0, 1.0, 0.0], &[2.0, 4.0, 10.0]);
        let s = solve_qp(&p, 100, 1e-9).unwrap();
        assert_eq!(s.status, SolveStatus::Optimal);
        assert!((s.x[0] - 1.0).abs() < 1e-12 && (s.x[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn indefinite_hessian_rejected() {
        let p = qp(&[1.0, 0.0, 0.0, -1.0], &[0.0, 0.0], &[], &[]);
        assert!(matches!(solve_qp(&p, 10, 1e-9), Err(Error::Numerical(_))));
    }

    #[test]
    fn iteration_cap_reported() {
        let p = qp(&[2.0, 0.0, 0.0, 2.0], &[-4.0, -4.0], &[1.0, 0.0, 0.0, 1.0], &[0.0, 0.0]);
        assert_eq!(solve_qp(&p, 1, 1e-9).unwrap().status, SolveStatus::MaxIter);
        assert_eq!(solve_qp(&p, 2, 1e-9).unwrap().status, SolveStatus::Optimal);
    }

    /// Minimum over all subsets of inequality rows treated as equalities,
    /// keeping only primal-feasible stationary points.
    fn enumerate(p: &QuadProgram) -> Option<f64> {
        let n = p.dimension();
        let m = p.ineq_mat.nrows();
        let mut best: Option<f64> = None;
        for mask in 0u32..(1 << m) {
            let idx: Vec<usize> = (0..m).filter(|i| mask & (1 << i) != 0).collect();
            let k = idx.len();
            if k > n {
                continue;
            }
            let mut kkt = DMatrix::zeros(n + k, n + k);
            let mut rhs = DVector::zeros(n + k);
            kkt.view_mut((0, 0), (n, n)).copy_from(&p.g);
            rhs.rows_mut(0, n).copy_from(&(-&p.c));
            for (a, &i) in idx.iter().enumerate() {
                for c in 0..n {
                    kkt[(n + a, c)] = p.ineq_mat[(i, c)];
                    kkt[(c, n + a)] = p.ineq_mat[(i, c)];
                }
                rhs[n + a] = p.ineq_rhs[i];
            }
            let Some(sol) = kkt.lu().solve(&rhs) else { continue };
            let x = sol.rows(0, n).into_owned();
            if (&p.ineq_mat * &x - &p.ineq_rhs).iter().all(|v| *v <= 1e-9) {
                let obj = p.objective(&x);
                best = Some(best.map_or(obj, |b: f64| b.min(obj)));
            }
        }
        best
    }

    proptest! {
        #[test]
        fn matches_enumeration(
            n in 1usize..4,
            seed in proptest::collection::vec(-1.0f64..1.0, 64),
        ) {
            let m = 2 * n + 1;
            let mut k = 0;
            let mut next = || { k += 1; seed[k % seed.len()] * (1.0 + (k as f64) * 0.013) };
            let a = DMatrix::from_fn(n, n, |_, _| next());
            let g = &a * a.transpose() + DMatrix::identity(n, n) * 0.5;
            let c = DVector::from_fn(n, |_, _| 3.0 * next());
            let ineq_mat = DMatrix::from_fn(m, n, |_, _| next());
            let ineq_rhs = DVector::from_fn(m, |_, _| next().abs() + 0.1);
            let p = QuadProgram { g, c, eq_mat: DMatrix::zeros(0, n), eq_rhs: DVector::zeros(0), ineq_mat, ineq_rhs };
            let s = solve_qp(&p, 500, 1e-12).unwrap();
            prop_assert_eq!(s.status, SolveStatus::Optimal);
            let oracle = enumerate(&p).unwrap();
            prop_assert!((s.objective - oracle).abs() < 1e-9 * (1.0 + oracle.abs()), "gi {} oracle {}", s.objective, oracle);
        }
    }
}
