//! Dense convex QP solver for problems of the form
//! minimize UᵀHU + gᵀU subject to A U ≤ b
//! (no ½ on the quadratic; the gradient is 2HU + g).
//!
//! The method is an operator-splitting (ADMM) iteration with over-relaxation,
//! fixed penalty after Ruiz-style symmetric equilibration of the KKT data,
//! a cached Cholesky factorization of the splitting system reused across
//! solves with the same (H, A), and primal/dual warm starting. Primal
//! infeasibility is declared through the standard certificate test on the
//! dual iterate differences.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::{Error, Result, Scalar};

/// Problem data; the linear term is already folded with any parametric part.
#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem<T: Scalar> {
    pub quadratic: DMatrix<T>,
    pub linear: DVector<T>,
    pub a_ineq: DMatrix<T>,
    pub b_ineq: DVector<T>,
}

impl<T: Scalar> QpProblem<T> {
    pub fn new(quadratic: DMatrix<T>, linear: DVector<T>, a_ineq: DMatrix<T>, b_ineq: DVector<T>) -> Result<Self> {
        let d = quadratic.nrows();
        if quadratic.ncols() != d || linear.len() != d || a_ineq.ncols() != d || a_ineq.nrows() != b_ineq.len() {
            return Err(Error::DimensionMismatch("QP blocks have inconsistent shapes".into()));
        }
        let p = Self { quadratic, linear, a_ineq, b_ineq };
        if !p.quadratic.iter().chain(p.linear.iter()).chain(p.a_ineq.iter()).chain(p.b_ineq.iter()).all(|v| v.is_finite_scalar()) {
            return Err(Error::NonFinite("QP data contains non-finite entries".into()));
        }
        Ok(p)
    }

    pub fn unconstrained(quadratic: DMatrix<T>, linear: DVector<T>) -> Result<Self> {
        let d = quadratic.nrows();
        Self::new(quadratic, linear, DMatrix::zeros(0, d), DVector::zeros(0))
    }

    pub fn dim(&self) -> usize {
        self.quadratic.nrows()
    }

    pub fn n_constraints(&self) -> usize {
        self.a_ineq.nrows()
    }

    /// f(U) = UᵀHU + gᵀU.
    pub fn objective(&self, u: &DVector<T>) -> T {
        (u.transpose() * &self.quadratic * u)[(0, 0)] + self.linear.dot(u)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    MaxIters,
    Infeasible,
}

#[derive(Debug, Clone)]
pub struct QpSolution<T: Scalar> {
    pub u: DVector<T>,
    /// Multipliers of the inequality rows (nonnegative at optimality).
    pub dual: DVector<T>,
    pub objective: T,
    pub primal_residual: T,
    pub dual_residual: T,
    pub iterations: usize,
    pub status: QpStatus,
    /// (iteration, primal residual, dual residual) rows when tracing is on.
    pub trace: Option<Vec<(usize, T, T)>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpOptions<T: Scalar> {
    pub tol_primal: T,
    pub tol_dual: T,
    pub max_iters: usize,
    /// Fixed ADMM penalty, applied after equilibration.
    pub rho: T,
    /// Small regularization of the splitting system.
    pub sigma: T,
    /// Over-relaxation.
    pub alpha: T,
    /// Residuals (and certificates) are checked every this many iterations.
    pub check_interval: usize,
    pub infeasibility_tol: T,
    /// Record per-iteration residuals in the solution.
    pub trace: bool,
}

impl<T: Scalar> Default for QpOptions<T> {
    fn default() -> Self {
        let c = T::from_f64_lossy;
        Self {
            tol_primal: c(1e-6),
            tol_dual: c(1e-6),
            max_iters: 4000,
            rho: T::one(),
            sigma: c(1e-6),
            alpha: c(1.6),
            check_interval: 5,
            infeasibility_tol: c(1e-5),
            trace: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpWarmStart<T: Scalar> {
    pub u: DVector<T>,
    pub dual: DVector<T>,
}

/// Stationarity, feasibility and complementarity of a candidate solution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktReport<T: Scalar> {
    /// ‖2Hu + g + Aᵀλ‖_∞
    pub stationarity: T,
    /// max(Au − b, 0)_∞
    pub primal: T,
    /// max_i |λ_i (Au − b)_i|
    pub complementarity: T,
}

pub fn kkt_check<T: Scalar>(p: &QpProblem<T>, sol: &QpSolution<T>) -> KktReport<T> {
    let grad = &p.quadratic * &sol.u * T::from_f64_lossy(2.0) + &p.linear + p.a_ineq.transpose() * &sol.dual;
    let slack = &p.a_ineq * &sol.u - &p.b_ineq;
    let mut primal = T::zero();
    let mut compl_ = T::zero();
    for i in 0..slack.len() {
        primal = primal.max(slack[i].max(T::zero()));
        compl_ = compl_.max((sol.dual[i] * slack[i]).abs());
    }
    KktReport { stationarity: inf_norm(&grad), primal, complementarity: compl_ }
}

fn inf_norm<T: Scalar>(v: &DVector<T>) -> T {
    v.iter().fold(T::zero(), |a, x| a.max(x.abs()))
}

/// Symmetric Ruiz equilibration of the stacked data [P Aᵀ; A 0]: returns the
/// diagonal scalings of variables and constraint rows after rescaling the
/// inputs in place.
fn ruiz_equilibrate<T: Scalar>(p: &mut DMatrix<T>, a: &mut DMatrix<T>, iters: usize) -> (DVector<T>, DVector<T>) {
    let d = p.nrows();
    let r = a.nrows();
    let mut d_scale = DVector::from_element(d, T::one());
    let mut e_scale = DVector::from_element(r, T::one());
    let lo = T::from_f64_lossy(1e-8);
    let hi = T::from_f64_lossy(1e8);
    for _ in 0..iters {
        let mut delta_d = DVector::from_element(d, T::one());
        for j in 0..d {
            let mut m = T::zero();
            for i in 0..d {
                m = m.max(p[(i, j)].abs());
            }
            for i in 0..r {
                m = m.max(a[(i, j)].abs());
            }
            if m > T::zero() {
                delta_d[j] = T::one() / m.clamp(lo, hi).sqrt();
            }
        }
        let mut delta_e = DVector::from_element(r, T::one());
        for i in 0..r {
            let mut m = T::zero();
            for j in 0..d {
                m = m.max(a[(i, j)].abs());
            }
            if m > T::zero() {
                delta_e[i] = T::one() / m.clamp(lo, hi).sqrt();
            }
        }
        for i in 0..d {
            for j in 0..d {
                p[(i, j)] *= delta_d[i] * delta_d[j];
            }
        }
        for i in 0..r {
            for j in 0..d {
                a[(i, j)] *= delta_e[i] * delta_d[j];
            }
        }
        d_scale.component_mul_assign(&delta_d);
        e_scale.component_mul_assign(&delta_e);
    }
    (d_scale, e_scale)
}

/// A stateful solver bound to one (H, A) pair. The equilibration and the
/// Cholesky factorization of P + σI + ρAᵀA happen once at construction and
/// are reused by every `solve`, which only takes the parametric (g, b).
pub struct QpSolver<T: Scalar> {
    h: DMatrix<T>,
    a: DMatrix<T>,
    a_scaled: DMatrix<T>,
    d_scale: DVector<T>,
    e_scale: DVector<T>,
    chol: Cholesky<T, Dyn>,
    opts: QpOptions<T>,
    factorizations: usize,
    /// Scaled (x, z, y) of the previous solve, used when no warm start is given.
    memory: Option<(DVector<T>, DVector<T>, DVector<T>)>,
}

impl<T: Scalar> QpSolver<T> {
    pub fn new(h: DMatrix<T>, a: DMatrix<T>, opts: QpOptions<T>) -> Result<Self> {
        let d = h.nrows();
        if h.ncols() != d {
            return Err(Error::DimensionMismatch("H must be square".into()));
        }
        if a.ncols() != d && a.nrows() > 0 {
            return Err(Error::DimensionMismatch("A and H disagree on the variable count".into()));
        }
        let h_max = h.iter().fold(T::zero(), |m, v| m.max(v.abs()));
        let asym = (&h - h.transpose()).iter().fold(T::zero(), |m, v| m.max(v.abs()));
        if asym > T::from_f64_lossy(1e-12) * (T::one() + h_max) {
            return Err(Error::InvalidArgument("H is not symmetric".into()));
        }
        let h_sym = (&h + h.transpose()) * T::from_f64_lossy(0.5);
        let min_eig = SymmetricEigen::new(h_sym.clone())
            .eigenvalues
            .iter()
            .fold(T::zero(), |m, &e| m.min(e));
        if min_eig < T::from_f64_lossy(-1e-8) {
            return Err(Error::InvalidArgument(format!(
                "H is not positive semidefinite (min eigenvalue {min_eig:e})"
            )));
        }

        let mut p_scaled = h_sym * T::from_f64_lossy(2.0);
        let mut a_scaled = a.clone();
        let (d_scale, e_scale) = ruiz_equilibrate(&mut p_scaled, &mut a_scaled, 15);

        let mut kkt = p_scaled;
        for i in 0..d {
            kkt[(i, i)] += opts.sigma;
        }
        if a_scaled.nrows() > 0 {
            kkt += a_scaled.transpose() * &a_scaled * opts.rho;
        }
        let chol = Cholesky::new(kkt)
            .ok_or_else(|| Error::Numerical("splitting system factorization failed".into()))?;
        Ok(Self {
            h,
            a,
            a_scaled,
            d_scale,
            e_scale,
            chol,
            opts,
            factorizations: 1,
            memory: None,
        })
    }

    pub fn factorization_count(&self) -> usize {
        self.factorizations
    }

    pub fn options(&self) -> &QpOptions<T> {
        &self.opts
    }

    /// Solve for the given linear term and right-hand side. Warm starts take
    /// unscaled (u, dual); without one, the previous solve's iterates seed
    /// the iteration.
    pub fn solve(&mut self, g: &DVector<T>, b: &DVector<T>, warm: Option<&QpWarmStart<T>>) -> Result<QpSolution<T>> {
        let d = self.h.nrows();
        let r = self.a.nrows();
        if g.len() != d || b.len() != r {
            return Err(Error::DimensionMismatch("g or b has the wrong length".into()));
        }
        if !g.iter().chain(b.iter()).all(|v| v.is_finite_scalar()) {
            return Err(Error::NonFinite("QP data contains non-finite entries".into()));
        }
        let opts = self.opts.clone();
        let rho = opts.rho;
        let alpha = opts.alpha;
        let one_minus_alpha = T::one() - alpha;

        // scaled parametric data
        let q_s = DVector::from_fn(d, |i, _| g[i] * self.d_scale[i]);
        let b_s = DVector::from_fn(r, |i, _| b[i] * self.e_scale[i]);

        let (mut x, mut z, mut y) = match warm {
            Some(w) => {
                if w.u.len() != d || w.dual.len() != r {
                    return Err(Error::DimensionMismatch("warm start has the wrong shape".into()));
                }
                let x = DVector::from_fn(d, |i, _| w.u[i] / self.d_scale[i]);
                let z = &self.a_scaled * &x;
                let y = DVector::from_fn(r, |i, _| w.dual[i] / self.e_scale[i]);
                (x, z, y)
            }
            None => match &self.memory {
                Some((x, z, y)) => (x.clone(), z.clone(), y.clone()),
                None => (DVector::zeros(d), DVector::zeros(r), DVector::zeros(r)),
            },
        };

        let mut trace = opts.trace.then(Vec::new);
        let mut status = QpStatus::MaxIters;
        let mut iterations = opts.max_iters;
        let mut primal_residual = T::zero();
        let mut dual_residual = T::zero();
        let mut y_prev_check: Option<DVector<T>> = None;

        for iter in 1..=opts.max_iters {
            // x̃ update: (P + σI + ρAᵀA) x̃ = σx − q + Aᵀ(ρz − y)
            let mut rhs = &x * opts.sigma - &q_s;
            if r > 0 {
                let zy = &z * rho - &y;
                rhs.gemv_tr(T::one(), &self.a_scaled, &zy, T::one());
            }
            let x_tilde = self.chol.solve(&rhs);
            let z_tilde = &self.a_scaled * &x_tilde;

            x = &x_tilde * alpha + &x * one_minus_alpha;
            if r > 0 {
                let z_relaxed = &z_tilde * alpha + &z * one_minus_alpha;
                let v = &z_relaxed + &y / rho;
                let z_next = DVector::from_fn(r, |i, _| v[i].min(b_s[i]));
                y += (&z_relaxed - &z_next) * rho;
                z = z_next;
            }

            let check = iter % opts.check_interval == 0 || iter == opts.max_iters;
            if !check {
                continue;
            }
            // residuals of the unscaled problem
            let u = DVector::from_fn(d, |i, _| x[i] * self.d_scale[i]);
            let dual = DVector::from_fn(r, |i, _| y[i] * self.e_scale[i]);
            let z_un = DVector::from_fn(r, |i, _| z[i] / self.e_scale[i]);
            let au = &self.a * &u;
            let r_p = inf_norm(&(&au - &z_un));
            let pu = &self.h * &u * T::from_f64_lossy(2.0);
            let mut grad = &pu + g;
            if r > 0 {
                grad.gemv_tr(T::one(), &self.a, &dual, T::one());
            }
            let r_d = inf_norm(&grad);
            let scale_p = T::one() + inf_norm(&au).max(inf_norm(&z_un));
            let scale_d = T::one() + inf_norm(&pu).max(inf_norm(g)).max(inf_norm(&(&grad - &pu - g)));
            if let Some(t) = trace.as_mut() {
                t.push((iter, r_p, r_d));
            }
            primal_residual = r_p;
            dual_residual = r_d;
            if r_p <= opts.tol_primal * scale_p && r_d <= opts.tol_dual * scale_d {
                status = QpStatus::Optimal;
                iterations = iter;
                break;
            }
            // primal infeasibility certificate on the dual increments
            if let Some(prev) = &y_prev_check {
                let dy = &dual - prev;
                let dy_norm = inf_norm(&dy);
                if dy_norm > T::from_f64_lossy(1e-10) * (T::one() + inf_norm(&dual)) {
                    let dhat = &dy / dy_norm;
                    let eps = opts.infeasibility_tol;
                    let at_d = self.a.transpose() * &dhat;
                    let support = b.dot(&dhat);
                    let min_component = dhat.iter().fold(T::zero(), |m, &v| m.min(v));
                    if inf_norm(&at_d) <= eps && support < -eps && min_component >= -eps {
                        status = QpStatus::Infeasible;
                        iterations = iter;
                        break;
                    }
                }
            }
            y_prev_check = Some(dual);
        }

        self.memory = Some((x.clone(), z.clone(), y.clone()));
        let mut u = DVector::from_fn(d, |i, _| x[i] * self.d_scale[i]);
        let mut dual = DVector::from_fn(r, |i, _| y[i] * self.e_scale[i]);
        if status == QpStatus::Optimal {
            if let Some((u_p, dual_p)) = self.polish(g, b, &u, &dual) {
                u = u_p;
                dual = dual_p;
                primal_residual = {
                    let slack = &self.a * &u - b;
                    slack.iter().fold(T::zero(), |m, &s| m.max(s.max(T::zero())))
                };
                dual_residual = {
                    let mut grad = &self.h * &u * T::from_f64_lossy(2.0) + g;
                    if r > 0 {
                        grad.gemv_tr(T::one(), &self.a, &dual, T::one());
                    }
                    inf_norm(&grad)
                };
            }
        }
        let objective = (u.transpose() * &self.h * &u)[(0, 0)] + g.dot(&u);
        Ok(QpSolution {
            u,
            dual,
            objective,
            primal_residual,
            dual_residual,
            iterations,
            status,
            trace,
        })
    }

    /// Refine a converged iterate by solving the KKT system of its active set
    /// exactly. Returns the refined pair only when it is feasible, has
    /// nonnegative multipliers, and does not worsen the KKT residuals.
    fn polish(&self, g: &DVector<T>, b: &DVector<T>, u: &DVector<T>, dual: &DVector<T>) -> Option<(DVector<T>, DVector<T>)> {
        let d = self.h.nrows();
        let r = self.a.nrows();
        let slack = &self.a * u - b;
        let dual_scale = T::one() + inf_norm(dual);
        let mut active: Vec<usize> = (0..r)
            .filter(|&i| {
                dual[i] > T::from_f64_lossy(1e-8) * dual_scale
                    || slack[i].abs() <= T::from_f64_lossy(1e-6) * (T::one() + b[i].abs())
            })
            .collect();
        if active.len() > d {
            active.sort_by(|&i, &j| dual[j].partial_cmp(&dual[i]).expect("finite duals"));
            active.truncate(d);
            active.sort_unstable();
        }
        let s = active.len();
        let mut kkt = DMatrix::zeros(d + s, d + s);
        for i in 0..d {
            for j in 0..d {
                kkt[(i, j)] = self.h[(i, j)] * T::from_f64_lossy(2.0);
            }
        }
        for (row, &i) in active.iter().enumerate() {
            for j in 0..d {
                kkt[(d + row, j)] = self.a[(i, j)];
                kkt[(j, d + row)] = self.a[(i, j)];
            }
        }
        let mut rhs = DVector::zeros(d + s);
        for j in 0..d {
            rhs[j] = -g[j];
        }
        for (row, &i) in active.iter().enumerate() {
            rhs[d + row] = b[i];
        }
        let lu = kkt.clone().lu();
        let mut sol = lu.solve(&rhs)?;
        let refine = &rhs - &kkt * &sol;
        sol += lu.solve(&refine)?;
        if !sol.iter().all(|v| v.is_finite_scalar()) {
            return None;
        }
        let u_p = sol.rows(0, d).into_owned();
        let mut dual_p = DVector::zeros(r);
        for (row, &i) in active.iter().enumerate() {
            if sol[d + row] < T::from_f64_lossy(-1e-9) * dual_scale {
                return None; // wrong active set
            }
            dual_p[i] = sol[d + row].max(T::zero());
        }
        let feas_tol = T::from_f64_lossy(1e-9);
        let slack_p = &self.a * &u_p - b;
        for i in 0..r {
            if slack_p[i] > feas_tol * (T::one() + b[i].abs()) {
                return None;
            }
        }
        let residual = |uu: &DVector<T>, dd: &DVector<T>| {
            let mut grad = &self.h * uu * T::from_f64_lossy(2.0) + g;
            if r > 0 {
                grad.gemv_tr(T::one(), &self.a, dd, T::one());
            }
            let sl = &self.a * uu - b;
            let viol = sl.iter().fold(T::zero(), |m, &v| m.max(v.max(T::zero())));
            inf_norm(&grad).max(viol)
        };
        if residual(&u_p, &dual_p) <= residual(u, dual) {
            Some((u_p, dual_p))
        } else {
            None
        }
    }
}

/// One-shot convenience wrapper around [`QpSolver`].
pub fn solve_qp<T: Scalar>(
    p: &QpProblem<T>,
    opts: &QpOptions<T>,
    warm: Option<&QpWarmStart<T>>,
) -> Result<QpSolution<T>> {
    let mut solver = QpSolver::new(p.quadratic.clone(), p.a_ineq.clone(), opts.clone())?;
    solver.solve(&p.linear, &p.b_ineq, warm)
}

/// Render a residual trace as CSV (`iter,primal_residual,dual_residual`).
pub fn residual_trace_csv<T: Scalar>(trace: &[(usize, T, T)]) -> String {
    let mut out = String::from("iter,primal_residual,dual_residual\n");
    for (i, p, d) in trace {
        out.push_str(&format!("{i},{p},{d}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand_chacha::ChaCha8Rng;

    fn vec64(vals: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(vals)
    }

    /// Enumerate all active sets, solve the equality-constrained KKT systems,
    /// and keep the feasible candidate with the smallest objective. Exact for
    /// strictly convex problems with nondegenerate constraints.
    pub(super) fn active_set_oracle(p: &QpProblem<f64>) -> Option<(DVector<f64>, f64)> {
        let d = p.dim();
        let r = p.n_constraints();
        assert!(r <= 20, "oracle enumeration limit");
        let mut best: Option<(DVector<f64>, f64)> = None;
        for mask in 0u32..(1 << r) {
            let idx: Vec<usize> = (0..r).filter(|i| mask & (1 << i) != 0).collect();
            let s = idx.len();
            if s > d {
                continue; // more active constraints than dimensions: degenerate
            }
            let mut kkt = DMatrix::zeros(d + s, d + s);
            kkt.view_mut((0, 0), (d, d)).copy_from(&(&p.quadratic * 2.0));
            for (row, &i) in idx.iter().enumerate() {
                for j in 0..d {
                    kkt[(d + row, j)] = p.a_ineq[(i, j)];
                    kkt[(j, d + row)] = p.a_ineq[(i, j)];
                }
            }
            let mut rhs = DVector::zeros(d + s);
            for j in 0..d {
                rhs[j] = -p.linear[j];
            }
            for (row, &i) in idx.iter().enumerate() {
                rhs[d + row] = p.b_ineq[i];
            }
            let Some(sol) = kkt.lu().solve(&rhs) else { continue };
            let u = sol.rows(0, d).into_owned();
            let feasible = (0..r).all(|i| {
                let val = p.a_ineq.row(i).transpose().dot(&u);
                val <= p.b_ineq[i] + 1e-9
            });
            if !feasible {
                continue;
            }
            let obj = p.objective(&u);
            if best.as_ref().is_none_or(|(_, b)| obj < *b) {
                best = Some((u, obj));
            }
        }
        best
    }

    pub(super) fn random_strictly_convex_qp(d: usize, r: usize, rng: &mut ChaCha8Rng) -> QpProblem<f64> {
        let m = DMatrix::from_fn(d, d, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let h = &m * m.transpose() + DMatrix::<f64>::identity(d, d) * 0.1;
        let g = DVector::from_fn(d, |_, _| rng.random::<f64>() * 4.0 - 2.0);
        let a = DMatrix::from_fn(r, d, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let x_feas = DVector::from_fn(d, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let slack = DVector::from_fn(r, |_, _| 0.1 + rng.random::<f64>());
        let b = &a * &x_feas + slack;
        QpProblem::new(h, g, a, b).unwrap()
    }

    #[test]
    fn unconstrained_quadratic() {
        let p = QpProblem::unconstrained(DMatrix::identity(2, 2), vec64(&[-2.0, -4.0])).unwrap();
        let sol = solve_qp(&p, &QpOptions::default(), None).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert_relative_eq!(sol.u[0], 1.0, epsilon = 1e-5);
        assert_relative_eq!(sol.u[1], 2.0, epsilon = 1e-5);
        assert_relative_eq!(sol.objective, -5.0, epsilon = 1e-5);
    }

    #[test]
    fn active_bound_is_found() {
        let p = QpProblem::new(
            DMatrix::from_element(1, 1, 2.0),
            vec64(&[-4.0]),
            DMatrix::from_element(1, 1, 1.0),
            vec64(&[0.5]),
        )
        .unwrap();
        let sol = solve_qp(&p, &QpOptions::default(), None).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert_relative_eq!(sol.u[0], 0.5, epsilon = 1e-6);
    }

    #[test]
    fn contradictory_bounds_are_infeasible() {
        // 0 ≤ u and u ≤ −1
        let p = QpProblem::new(
            DMatrix::identity(1, 1),
            vec64(&[0.0]),
            DMatrix::from_column_slice(2, 1, &[-1.0, 1.0]),
            vec64(&[0.0, -1.0]),
        )
        .unwrap();
        let sol = solve_qp(&p, &QpOptions::default(), None).unwrap();
        assert_eq!(sol.status, QpStatus::Infeasible);
    }

    #[test]
    fn matches_active_set_oracle() {
        let mut rng = crate::seeded_rng(77);
        for trial in 0..30 {
            let d = 1 + (trial % 6);
            let r = trial % 11;
            let p = random_strictly_convex_qp(d, r, &mut rng);
            let sol = solve_qp(&p, &QpOptions::default(), None).unwrap();
            assert_eq!(sol.status, QpStatus::Optimal, "trial {trial}");
            let (_, oracle_obj) = active_set_oracle(&p).expect("feasible by construction");
            assert!(
                (sol.objective - oracle_obj).abs() <= 1e-8 * (1.0 + oracle_obj.abs()),
                "trial {trial}: {} vs oracle {oracle_obj}",
                sol.objective
            );
            let report = kkt_check(&p, &sol);
            assert!(report.stationarity <= 1e-4, "trial {trial}: stationarity {}", report.stationarity);
            assert!(report.primal <= 1e-6);
            assert!(report.complementarity <= 1e-4);
        }
    }

    #[test]
    fn kkt_check_on_constructed_stationary_point() {
        let h = DMatrix::from_row_slice(2, 2, &[3.0, 0.5, 0.5, 2.0]);
        let u = vec64(&[0.3, -0.8]);
        let g = -(&h * &u) * 2.0;
        let p = QpProblem::unconstrained(h, g).unwrap();
        let sol = QpSolution {
            u,
            dual: DVector::zeros(0),
            objective: 0.0,
            primal_residual: 0.0,
            dual_residual: 0.0,
            iterations: 0,
            status: QpStatus::Optimal,
            trace: None,
        };
        let report = kkt_check(&p, &sol);
        assert_eq!(report.stationarity, 0.0);
        assert_eq!(report.primal, 0.0);
        assert_eq!(report.complementarity, 0.0);
    }

    #[test]
    fn row_scaling_leaves_the_solution_unchanged() {
        let mut rng = crate::seeded_rng(5);
        let p = random_strictly_convex_qp(4, 6, &mut rng);
        let base = solve_qp(&p, &QpOptions::default(), None).unwrap();
        let mut scaled = p.clone();
        for i in 0..scaled.a_ineq.nrows() {
            let s = 10f64.powi((i as i32 % 5) - 2);
            for j in 0..scaled.a_ineq.ncols() {
                scaled.a_ineq[(i, j)] *= s;
            }
            scaled.b_ineq[i] *= s;
        }
        let sol = solve_qp(&scaled, &QpOptions::default(), None).unwrap();
        assert!((sol.u - base.u).amax() <= 1e-5);
    }

    #[test]
    fn warm_start_from_the_optimum_is_immediate() {
        let mut rng = crate::seeded_rng(15);
        let p = random_strictly_convex_qp(5, 8, &mut rng);
        let first = solve_qp(&p, &QpOptions::default(), None).unwrap();
        assert_eq!(first.status, QpStatus::Optimal);
        let warm = QpWarmStart { u: first.u.clone(), dual: first.dual.clone() };
        let second = solve_qp(&p, &QpOptions::default(), Some(&warm)).unwrap();
        assert_eq!(second.status, QpStatus::Optimal);
        assert!(second.iterations <= 5, "took {} iterations", second.iterations);
    }

    #[test]
    fn dropping_a_constraint_never_increases_the_optimum() {
        let mut rng = crate::seeded_rng(23);
        for trial in 0..10 {
            let p = random_strictly_convex_qp(3, 6, &mut rng);
            let full = solve_qp(&p, &QpOptions::default(), None).unwrap();
            let drop = trial % 6;
            let keep: Vec<usize> = (0..6).filter(|&i| i != drop).collect();
            let a = DMatrix::from_fn(keep.len(), 3, |i, j| p.a_ineq[(keep[i], j)]);
            let b = DVector::from_fn(keep.len(), |i, _| p.b_ineq[keep[i]]);
            let reduced = QpProblem::new(p.quadratic.clone(), p.linear.clone(), a, b).unwrap();
            let sol = solve_qp(&reduced, &QpOptions::default(), None).unwrap();
            assert!(sol.objective <= full.objective + 1e-6);
        }
    }

    #[test]
    fn non_psd_h_is_rejected() {
        let p = QpProblem::unconstrained(DMatrix::from_element(1, 1, -1.0), vec64(&[0.0])).unwrap();
        let err = solve_qp(&p, &QpOptions::default(), None).unwrap_err();
        assert!(err.is_usage());
    }

    #[test]
    fn factorization_is_cached_across_solves() {
        let mut rng = crate::seeded_rng(31);
        let p = random_strictly_convex_qp(4, 5, &mut rng);
        let mut solver = QpSolver::new(p.quadratic.clone(), p.a_ineq.clone(), QpOptions::default()).unwrap();
        let s1 = solver.solve(&p.linear, &p.b_ineq, None).unwrap();
        let g2 = &p.linear * 0.5;
        let s2 = solver.solve(&g2, &p.b_ineq, None).unwrap();
        assert_eq!(s1.status, QpStatus::Optimal);
        assert_eq!(s2.status, QpStatus::Optimal);
        assert_eq!(solver.factorization_count(), 1);
    }

    #[test]
    fn trace_records_residuals() {
        let p = QpProblem::unconstrained(DMatrix::identity(2, 2), vec64(&[1.0, -1.0])).unwrap();
        let opts = QpOptions { trace: true, ..Default::default() };
        let sol = solve_qp(&p, &opts, None).unwrap();
        let trace = sol.trace.expect("requested");
        assert!(!trace.is_empty());
        let csv = residual_trace_csv(&trace);
        assert!(csv.starts_with("iter,primal_residual,dual_residual\n"));
    }
}
