//! Least-squares identification of the lifted linear model (A, B, C, and
//! optionally D) from snapshot data, via the normal equations or the
//! pseudoinverse of the stacked lifted data matrix.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use crate::dictionary::{delay_embed_trajectory, Dictionary};
use crate::{Error, Result, Scalar};

/// Snapshot data (X, Y, U) with columns satisfying y_j = f(x_j, u_j), plus an
/// optional disturbance block W. Columns are unordered samples; they are not
/// required to come from a single trajectory. Provenance records which
/// (trajectory, step) produced each column so files can round-trip.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSet<T: Scalar> {
    x: DMatrix<T>,
    y: DMatrix<T>,
    u: DMatrix<T>,
    w: Option<DMatrix<T>>,
    provenance: Vec<(u32, u32)>,
}

impl<T: Scalar> DataSet<T> {
    pub fn new(x: DMatrix<T>, y: DMatrix<T>, u: DMatrix<T>, w: Option<DMatrix<T>>) -> Result<Self> {
        let k = x.ncols();
        if k == 0 {
            return Err(Error::InvalidArgument("data set needs at least one sample".into()));
        }
        if y.ncols() != k || u.ncols() != k || w.as_ref().is_some_and(|w| w.ncols() != k) {
            return Err(Error::DimensionMismatch("data blocks disagree on the sample count".into()));
        }
        if y.nrows() != x.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "X has {} rows but Y has {}",
                x.nrows(),
                y.nrows()
            )));
        }
        let provenance = (0..k as u32).map(|j| (0, j)).collect();
        Ok(Self { x, y, u, w, provenance })
    }

    pub fn with_provenance(mut self, provenance: Vec<(u32, u32)>) -> Result<Self> {
        if provenance.len() != self.len() {
            return Err(Error::DimensionMismatch("provenance length differs from sample count".into()));
        }
        self.provenance = provenance;
        Ok(self)
    }

    pub fn x(&self) -> &DMatrix<T> {
        &self.x
    }

    pub fn y(&self) -> &DMatrix<T> {
        &self.y
    }

    pub fn u(&self) -> &DMatrix<T> {
        &self.u
    }

    pub fn w(&self) -> Option<&DMatrix<T>> {
        self.w.as_ref()
    }

    pub fn provenance(&self) -> &[(u32, u32)] {
        &self.provenance
    }

    /// Number of samples K.
    pub fn len(&self) -> usize {
        self.x.ncols()
    }

    pub fn is_empty(&self) -> bool {
        false // K ≥ 1 by construction
    }

    pub fn state_dim(&self) -> usize {
        self.x.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.u.nrows()
    }

    pub fn disturbance_dim(&self) -> usize {
        self.w.as_ref().map_or(0, |w| w.nrows())
    }

    fn check_finite(&self) -> Result<()> {
        let finite = |m: &DMatrix<T>| m.iter().all(|v| v.is_finite_scalar());
        if finite(&self.x) && finite(&self.y) && finite(&self.u) && self.w.as_ref().map_or(true, finite) {
            Ok(())
        } else {
            Err(Error::NonFinite("data set contains NaN or infinite entries".into()))
        }
    }
}

/// Fitted lifted linear predictor z⁺ = A z + B u (+ D w), x̂ = C z, together
/// with the dictionary that produced the lift.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedModel<T: Scalar> {
    pub a: DMatrix<T>,
    pub b: DMatrix<T>,
    pub c: DMatrix<T>,
    pub d: Option<DMatrix<T>>,
    pub dictionary: Dictionary<T>,
}

impl<T: Scalar> LiftedModel<T> {
    pub fn lifted_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.c.nrows()
    }

    pub fn disturbance_dim(&self) -> usize {
        self.d.as_ref().map_or(0, |d| d.ncols())
    }

    fn check(&self) -> Result<()> {
        let n_lift = self.dictionary.output_dim();
        if self.a.nrows() != n_lift || self.a.ncols() != n_lift || self.b.nrows() != n_lift || self.c.ncols() != n_lift {
            return Err(Error::DimensionMismatch("model matrices disagree with dictionary size".into()));
        }
        let finite = |m: &DMatrix<T>| m.iter().all(|v| v.is_finite_scalar());
        if !finite(&self.a) || !finite(&self.b) || !finite(&self.c) || !self.d.as_ref().map_or(true, finite) {
            return Err(Error::NonFinite("fitted model contains non-finite entries".into()));
        }
        Ok(())
    }
}

/// How the least-squares problem is solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitMethod {
    /// Cholesky on the Gram matrix G (size independent of the sample count K);
    /// the preferred path for K ≫ N.
    NormalEquations,
    /// Singular value decomposition of the stacked lifted data matrix with
    /// truncation at σ_max·1e−12. Costs O(K·(N+m)²); meant for moderate K.
    Pseudoinverse,
}

/// Diagnostics of a fit.
#[derive(Debug, Clone, PartialEq)]
pub struct FitReport<T: Scalar> {
    /// Frobenius norm of Y_lift − A X_lift − B U (− D W) at the optimum.
    pub residual_lift: T,
    /// Frobenius norm of X − C X_lift at the optimum (0 when C is the exact
    /// state-prefix selection).
    pub residual_proj: T,
    /// The Gram matrix was numerically singular.
    pub rank_deficient: bool,
    /// Total ridge actually added to the Gram diagonal.
    pub regularization_used: T,
    /// ‖V − [A,B,D] G‖_∞, the normal-equation residual of the returned model.
    pub normal_eq_residual: T,
}

/// Lift the X and Y blocks of a data set columnwise.
pub fn lift_dataset<T: Scalar>(
    dict: &Dictionary<T>,
    data: &DataSet<T>,
) -> Result<(DMatrix<T>, DMatrix<T>)> {
    if dict.input_dim() != data.state_dim() {
        return Err(Error::DimensionMismatch(format!(
            "dictionary input dimension {} does not match data state dimension {}",
            dict.input_dim(),
            data.state_dim()
        )));
    }
    Ok((dict.eval_columns(data.x())?, dict.eval_columns(data.y())?))
}

/// Form the normal-equation data G = [X_lift; U; W][X_lift; U; W]ᵀ and
/// V = Y_lift [X_lift; U; W]ᵀ. G is symmetric positive semidefinite by
/// construction and its size is independent of the sample count.
pub fn normal_equation_data<T: Scalar>(
    x_lift: &DMatrix<T>,
    y_lift: &DMatrix<T>,
    u: &DMatrix<T>,
    w: Option<&DMatrix<T>>,
) -> Result<(DMatrix<T>, DMatrix<T>)> {
    let k = x_lift.ncols();
    if y_lift.ncols() != k || u.ncols() != k || w.is_some_and(|w| w.ncols() != k) {
        return Err(Error::DimensionMismatch("lifted blocks disagree on the sample count".into()));
    }
    let n_lift = x_lift.nrows();
    let m = u.nrows();
    let n_w = w.map_or(0, |w| w.nrows());
    let p = n_lift + m + n_w;
    let mut phi = DMatrix::zeros(p, k);
    phi.view_mut((0, 0), (n_lift, k)).copy_from(x_lift);
    phi.view_mut((n_lift, 0), (m, k)).copy_from(u);
    if let Some(w) = w {
        phi.view_mut((n_lift + m, 0), (n_w, k)).copy_from(w);
    }
    let g = &phi * phi.transpose();
    let v = y_lift * phi.transpose();
    Ok((g, v))
}

/// Fit A, B (and D when W is present) as the least-squares one-step predictor
/// in the lifted space, and C as the projection of the state onto the lift.
///
/// With a state-prefix dictionary, C is the exact selection [I 0] and no
/// regression is run for it.
pub fn fit_model<T: Scalar>(
    dict: &Dictionary<T>,
    data: &DataSet<T>,
    method: FitMethod,
    ridge: T,
) -> Result<(LiftedModel<T>, FitReport<T>)> {
    if dict.input_dim() != data.state_dim() {
        return Err(Error::DimensionMismatch(format!(
            "dictionary input dimension {} does not match data state dimension {}",
            dict.input_dim(),
            data.state_dim()
        )));
    }
    fit_inner(dict, data, method, ridge, data.state_dim())
}

/// Fit a predictor over delay-embedded input-output data: columns of `io_data`
/// are ζ vectors. The output map C regresses the newest output block (the
/// leading `n_output` components of ζ) on the lifted ζ; with a state-prefix
/// dictionary it is the exact selection.
pub fn fit_io_model<T: Scalar>(
    dict: &Dictionary<T>,
    io_data: &DataSet<T>,
    n_output: usize,
    method: FitMethod,
    ridge: T,
) -> Result<(LiftedModel<T>, FitReport<T>)> {
    let n = io_data.state_dim();
    let m = io_data.input_dim();
    if dict.input_dim() != n {
        return Err(Error::DimensionMismatch(format!(
            "dictionary input dimension {} does not match embedded dimension {n}",
            dict.input_dim()
        )));
    }
    if n_output == 0 || n_output > n {
        return Err(Error::InvalidArgument(format!("invalid output dimension {n_output}")));
    }
    // ζ length must decompose as (n_d+1)·n_h + n_d·m for some n_d ≥ 0
    if (n - n_output) % (n_output + m) != 0 {
        return Err(Error::DimensionMismatch(format!(
            "embedded dimension {n} is not consistent with n_h = {n_output}, m = {m}"
        )));
    }
    fit_inner(dict, io_data, method, ridge, n_output)
}

fn fit_inner<T: Scalar>(
    dict: &Dictionary<T>,
    data: &DataSet<T>,
    method: FitMethod,
    ridge: T,
    target_rows: usize,
) -> Result<(LiftedModel<T>, FitReport<T>)> {
    if ridge < T::zero() {
        return Err(Error::InvalidArgument("ridge must be nonnegative".into()));
    }
    data.check_finite()?;

    let n_lift = dict.output_dim();
    let m = data.input_dim();
    let n_w = data.disturbance_dim();
    let p = n_lift + m + n_w;
    let k = data.len();
    let need_c_regression = !dict.has_state_prefix();

    // Streaming accumulation of G, V (and the C-regression data) in a fixed
    // chunk order, so the result does not depend on the execution context.
    const CHUNK: usize = 1024;
    let mut g = DMatrix::<T>::zeros(p, p);
    let mut v = DMatrix::<T>::zeros(n_lift, p);
    let mut vx = need_c_regression.then(|| DMatrix::<T>::zeros(target_rows, n_lift));
    let mut t_y = T::zero();
    let mut t_x = T::zero();
    let mut phi = DMatrix::<T>::zeros(p, CHUNK);
    let mut y_lift = DMatrix::<T>::zeros(n_lift, CHUNK);
    let mut start = 0;
    while start < k {
        let c = CHUNK.min(k - start);
        {
            let phi_slice = phi.as_mut_slice();
            let y_slice = y_lift.as_mut_slice();
            for jj in 0..c {
                let j = start + jj;
                let base = jj * p;
                dict.eval_into(data.x().column(j), &mut phi_slice[base..base + n_lift]);
                for (i, ui) in data.u().column(j).iter().enumerate() {
                    phi_slice[base + n_lift + i] = *ui;
                }
                if let Some(w) = data.w() {
                    for (i, wi) in w.column(j).iter().enumerate() {
                        phi_slice[base + n_lift + m + i] = *wi;
                    }
                }
                dict.eval_into(data.y().column(j), &mut y_slice[jj * n_lift..(jj + 1) * n_lift]);
            }
        }
        let phi_c = phi.columns(0, c);
        let y_c = y_lift.columns(0, c);
        let phi_t = phi_c.transpose();
        g.gemm(T::one(), &phi_c, &phi_t, T::one());
        v.gemm(T::one(), &y_c, &phi_t, T::one());
        t_y += y_c.norm_squared();
        if let Some(vx) = vx.as_mut() {
            let targets = data.x().view((0, start), (target_rows, c));
            vx.gemm(T::one(), &targets, &phi_t.view((0, 0), (c, n_lift)), T::one());
            t_x += targets.norm_squared();
        }
        start += c;
    }

    let (m_fit, rank_deficient, reg_used) = match method {
        FitMethod::NormalEquations => solve_normal_equations(&g, &v, ridge),
        FitMethod::Pseudoinverse => {
            let (sol, deficient) = solve_pseudoinverse(dict, data, &v, ridge, p)?;
            (sol, deficient, ridge)
        }
    };

    let normal_eq_residual = {
        let r = &v - &m_fit * &g;
        matrix_amax(&r)
    };
    let residual_lift = {
        let mg = &m_fit * &g;
        let r2 = t_y - T::from_f64_lossy(2.0) * m_fit.dot(&v) + m_fit.dot(&mg);
        r2.max(T::zero()).sqrt()
    };

    let (c_fit, residual_proj) = if need_c_regression {
        let vx = vx.expect("regression data accumulated");
        let gx = g.view((0, 0), (n_lift, n_lift)).into_owned();
        let (c_fit, _, _) = solve_normal_equations(&gx, &vx, ridge);
        let cg = &c_fit * &gx;
        let r2 = t_x - T::from_f64_lossy(2.0) * c_fit.dot(&vx) + c_fit.dot(&cg);
        (c_fit, r2.max(T::zero()).sqrt())
    } else {
        let mut c_fit = DMatrix::zeros(target_rows, n_lift);
        for i in 0..target_rows {
            c_fit[(i, i)] = T::one();
        }
        (c_fit, T::zero())
    };

    let a = m_fit.view((0, 0), (n_lift, n_lift)).into_owned();
    let b = m_fit.view((0, n_lift), (n_lift, m)).into_owned();
    let d = (n_w > 0).then(|| m_fit.view((0, n_lift + m), (n_lift, n_w)).into_owned());

    let model = LiftedModel { a, b, c: c_fit, d, dictionary: dict.clone() };
    model.check()?;
    let report = FitReport {
        residual_lift,
        residual_proj,
        rank_deficient,
        regularization_used: reg_used,
        normal_eq_residual,
    };
    Ok((model, report))
}

/// Recompute the normal-equation residual ‖V − [A,B,D] G‖_∞ of a model on a
/// data set, independently of any fit bookkeeping.
pub fn normal_equation_residual<T: Scalar>(model: &LiftedModel<T>, data: &DataSet<T>) -> Result<T> {
    let (x_lift, y_lift) = lift_dataset(&model.dictionary, data)?;
    let (g, v) = normal_equation_data(&x_lift, &y_lift, data.u(), data.w())?;
    let n_lift = model.lifted_dim();
    let p = g.nrows();
    let mut m_fit = DMatrix::zeros(n_lift, p);
    m_fit.view_mut((0, 0), (n_lift, n_lift)).copy_from(&model.a);
    m_fit.view_mut((0, n_lift), (n_lift, model.input_dim())).copy_from(&model.b);
    if let Some(d) = &model.d {
        m_fit.view_mut((0, n_lift + model.input_dim()), (n_lift, d.ncols())).copy_from(d);
    }
    let r = &v - &m_fit * &g;
    Ok(matrix_amax(&r))
}

fn matrix_amax<T: Scalar>(m: &DMatrix<T>) -> T {
    m.iter().fold(T::zero(), |acc, v| acc.max(v.abs()))
}

/// Solve M (G + λI) = V for M. A well-conditioned Gram matrix goes through a
/// Cholesky factorization plus one step of iterative refinement. Conditioning
/// is gated by an eigendecomposition first: feeding a numerically singular G
/// to Cholesky can "succeed" through a tiny roundoff pivot and return a
/// solution with a huge arbitrary null-space component, which poisons the
/// spectrum of the fitted A. Near-singular problems get the automatic ridge
/// 1e−10·tr(G)/p, and as a last resort the minimum-norm solution through a
/// truncated eigendecomposition.
fn solve_normal_equations<T: Scalar>(
    g: &DMatrix<T>,
    v: &DMatrix<T>,
    ridge: T,
) -> (DMatrix<T>, bool, T) {
    let p = g.nrows();
    let eig = SymmetricEigen::new(g.clone());
    let lambda_max = eig.eigenvalues.iter().fold(T::zero(), |a, &e| a.max(e));
    let lambda_min = eig.eigenvalues.iter().fold(T::from_f64_lossy(f64::INFINITY), |a, &e| a.min(e));
    let near_singular = lambda_max <= T::zero() || lambda_min < lambda_max * T::from_f64_lossy(1e-13);

    let attempt = |lambda: T| -> Option<DMatrix<T>> {
        let mut gr = g.clone();
        if lambda > T::zero() {
            for i in 0..p {
                gr[(i, i)] += lambda;
            }
        }
        let chol = Cholesky::new(gr.clone())?;
        let vt = v.transpose();
        let mut mt = chol.solve(&vt);
        let resid = &vt - &gr * &mt;
        mt += chol.solve(&resid);
        Some(mt.transpose())
    };

    if !near_singular || ridge > T::zero() {
        if let Some(m) = attempt(ridge) {
            return (m, near_singular, ridge);
        }
    }
    let auto = T::from_f64_lossy(1e-10) * g.trace() / T::from_f64_lossy(p as f64);
    if auto > T::zero() {
        if let Some(m) = attempt(ridge + auto) {
            return (m, true, ridge + auto);
        }
    }
    // Minimum-norm solution V G⁺ with eigenvalues truncated at λ_max·1e−24
    // (σ_max·1e−12 on the singular values of the stacked data matrix).
    let cutoff = lambda_max * T::from_f64_lossy(1e-24);
    let mut inv = DVector::zeros(p);
    for i in 0..p {
        let e = eig.eigenvalues[i];
        inv[i] = if e > cutoff { T::one() / e } else { T::zero() };
    }
    let mut pinv = eig.eigenvectors.clone();
    for (j, mut col) in pinv.column_iter_mut().enumerate() {
        col *= inv[j];
    }
    let pinv = pinv * eig.eigenvectors.transpose();
    (v * pinv, true, ridge)
}

/// Literal pseudoinverse route: M = Y_lift [X_lift; U; W]⁺ through the SVD of
/// the stacked data matrix, with singular values below σ_max·1e−12 truncated.
fn solve_pseudoinverse<T: Scalar>(
    dict: &Dictionary<T>,
    data: &DataSet<T>,
    _v: &DMatrix<T>,
    _ridge: T,
    p: usize,
) -> Result<(DMatrix<T>, bool)> {
    let k = data.len();
    let n_lift = dict.output_dim();
    let m = data.input_dim();
    let (x_lift, y_lift) = lift_dataset(dict, data)?;
    let mut phi_t = DMatrix::zeros(k, p);
    phi_t.view_mut((0, 0), (k, n_lift)).copy_from(&x_lift.transpose());
    phi_t.view_mut((0, n_lift), (k, m)).copy_from(&data.u().transpose());
    if let Some(w) = data.w() {
        phi_t.view_mut((0, n_lift + m), (k, w.nrows())).copy_from(&w.transpose());
    }
    let svd = phi_t.svd(true, true);
    let u_mat = svd.u.as_ref().expect("left singular vectors requested");
    let v_t = svd.v_t.as_ref().expect("right singular vectors requested");
    let sigma = &svd.singular_values;
    let sigma_max = sigma.iter().fold(T::zero(), |a, &s| a.max(s));
    let cutoff = sigma_max * T::from_f64_lossy(1e-12);
    // Φ⁺ = U Σ⁺ V_t with Φᵀ = U Σ V_t, so M = (Y_lift U) Σ⁺ V_t.
    let mut yu = &y_lift * u_mat;
    let mut rank = 0;
    for (j, mut col) in yu.column_iter_mut().enumerate() {
        if sigma[j] > cutoff {
            col /= sigma[j];
            rank += 1;
        } else {
            col.fill(T::zero());
        }
    }
    Ok((yu * v_t, rank < p))
}

/// Delay-embed several input-output trajectories into one data set of
/// (ζ, ζ⁺, u) columns. Each entry is (trajectory id, outputs y_0…y_S,
/// inputs u_0…u_{S−1}).
pub fn delay_embed_dataset<T: Scalar>(
    trajectories: &[(u32, Vec<DVector<T>>, Vec<DVector<T>>)],
    n_delays: usize,
) -> Result<DataSet<T>> {
    if trajectories.is_empty() {
        return Err(Error::InvalidArgument("no trajectories to embed".into()));
    }
    let mut blocks = Vec::with_capacity(trajectories.len());
    let mut provenance = Vec::new();
    for (id, outputs, inputs) in trajectories {
        let (z, z_plus, u) = delay_embed_trajectory(outputs, inputs, n_delays)?;
        for col in 0..z.ncols() {
            provenance.push((*id, (n_delays + col) as u32));
        }
        blocks.push((z, z_plus, u));
    }
    let total: usize = blocks.iter().map(|(z, _, _)| z.ncols()).sum();
    let embedded = blocks[0].0.nrows();
    let m = blocks[0].2.nrows();
    let mut x = DMatrix::zeros(embedded, total);
    let mut y = DMatrix::zeros(embedded, total);
    let mut u = DMatrix::zeros(m, total);
    let mut at = 0;
    for (z, z_plus, u_blk) in &blocks {
        let c = z.ncols();
        x.view_mut((0, at), (embedded, c)).copy_from(z);
        y.view_mut((0, at), (embedded, c)).copy_from(z_plus);
        u.view_mut((0, at), (m, c)).copy_from(u_blk);
        at += c;
    }
    DataSet::new(x, y, u, None)?.with_provenance(provenance)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dictionary::{make_rbf_dictionary, BasisFn, RbfKind};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(r: usize, c: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.random::<f64>() * 2.0 - 1.0)
    }

    /// Random stable linear system data y = A₀x + B₀u with K samples.
    fn linear_system_data(
        n: usize,
        m: usize,
        k: usize,
        seed: u64,
    ) -> (DMatrix<f64>, DMatrix<f64>, DataSet<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a0 = random_matrix(n, n, &mut rng);
        a0.scale_mut(0.9 / n as f64);
        let b0 = random_matrix(n, m, &mut rng);
        let x = random_matrix(n, k, &mut rng);
        let u = random_matrix(m, k, &mut rng);
        let y = &a0 * &x + &b0 * &u;
        let data = DataSet::new(x, y, u, None).unwrap();
        (a0, b0, data)
    }

    #[test]
    fn normal_equation_data_hand_example() {
        // single scalar sample: X_lift = 2, U = 3, Y_lift = 10
        let x_lift = DMatrix::from_row_slice(1, 1, &[2.0]);
        let y_lift = DMatrix::from_row_slice(1, 1, &[10.0]);
        let u = DMatrix::from_row_slice(1, 1, &[3.0]);
        let (g, v) = normal_equation_data(&x_lift, &y_lift, &u, None).unwrap();
        assert_eq!(g, DMatrix::from_row_slice(2, 2, &[4.0, 6.0, 6.0, 9.0]));
        assert_eq!(v, DMatrix::from_row_slice(1, 2, &[20.0, 30.0]));
    }

    #[test]
    fn normal_equation_data_zero_and_symmetry() {
        let z = DMatrix::<f64>::zeros(3, 4);
        let u = DMatrix::<f64>::zeros(1, 4);
        let (g, v) = normal_equation_data(&z, &z, &u, None).unwrap();
        assert!(g.iter().all(|&e| e == 0.0));
        assert!(v.iter().all(|&e| e == 0.0));

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x_lift = random_matrix(4, 9, &mut rng);
        let y_lift = random_matrix(4, 9, &mut rng);
        let u = random_matrix(2, 9, &mut rng);
        let w = random_matrix(1, 9, &mut rng);
        let (g, _) = normal_equation_data(&x_lift, &y_lift, &u, Some(&w)).unwrap();
        assert_eq!(g.nrows(), 7);
        let asym = (&g - g.transpose()).iter().fold(0.0f64, |a, v| a.max(v.abs()));
        assert_eq!(asym, 0.0);
    }

    #[test]
    fn lift_dataset_identity_and_square() {
        let dict = Dictionary::identity(2).unwrap();
        let (_, _, data) = linear_system_data(2, 1, 7, 0);
        let (x_lift, y_lift) = lift_dataset(&dict, &data).unwrap();
        assert_eq!(&x_lift, data.x());
        assert_eq!(&y_lift, data.y());

        let dict = Dictionary::new(1, vec![BasisFn::Coordinate(0), BasisFn::ElementwiseSquare(0)]).unwrap();
        let x = DMatrix::from_row_slice(1, 1, &[3.0]);
        let data = DataSet::new(x.clone(), x.clone(), DMatrix::zeros(1, 1), None).unwrap();
        let (x_lift, _) = lift_dataset(&dict, &data).unwrap();
        assert_eq!(x_lift.column(0).as_slice(), &[3.0, 9.0]);
    }

    #[test]
    fn fit_recovers_linear_system_exactly() {
        let (a0, b0, data) = linear_system_data(4, 2, 60, 1);
        let dict = Dictionary::identity(4).unwrap();
        for method in [FitMethod::NormalEquations, FitMethod::Pseudoinverse] {
            let (model, report) = fit_model(&dict, &data, method, 0.0).unwrap();
            let da = (&model.a - &a0).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let db = (&model.b - &b0).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(da <= 1e-8, "A error {da} for {method:?}");
            assert!(db <= 1e-8, "B error {db} for {method:?}");
            // the algebraic residual formula cancels to roughly sqrt(eps)
            assert!(report.residual_lift <= 1e-6);
            assert!(!report.rank_deficient);
        }
    }

    #[test]
    fn state_prefix_gives_exact_selection_c() {
        let dict = make_rbf_dictionary(2, 5, &[(-1.0, 1.0); 2], 11, &RbfKind::ThinPlate).unwrap();
        let (_, _, data) = linear_system_data(2, 1, 50, 2);
        let (model, report) = fit_model(&dict, &data, FitMethod::NormalEquations, 0.0).unwrap();
        let mut expected = DMatrix::zeros(2, 7);
        expected[(0, 0)] = 1.0;
        expected[(1, 1)] = 1.0;
        assert_eq!(model.c, expected);
        assert_eq!(report.residual_proj, 0.0);
    }

    #[test]
    fn c_regression_without_prefix() {
        // dictionary [x₂, x₁] is a permutation: C must recover it exactly
        let dict = Dictionary::new(2, vec![BasisFn::Coordinate(1), BasisFn::Coordinate(0)]).unwrap();
        let (_, _, data) = linear_system_data(2, 1, 40, 5);
        let (model, report) = fit_model(&dict, &data, FitMethod::NormalEquations, 0.0).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let err = (&model.c - &expected).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(err <= 1e-10, "C error {err}");
        assert!(report.residual_proj <= 1e-6);
    }

    #[test]
    fn disturbance_block_is_fitted() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 3;
        let (a0, b0, _) = linear_system_data(n, 1, 1, 7);
        let d0 = random_matrix(n, 2, &mut rng);
        let k = 80;
        let x = random_matrix(n, k, &mut rng);
        let u = random_matrix(1, k, &mut rng);
        let w = random_matrix(2, k, &mut rng);
        let y = &a0 * &x + &b0 * &u + &d0 * &w;
        let data = DataSet::new(x, y, u, Some(w)).unwrap();
        let dict = Dictionary::identity(n).unwrap();
        let (model, _) = fit_model(&dict, &data, FitMethod::NormalEquations, 0.0).unwrap();
        let dd = (model.d.as_ref().unwrap() - &d0).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(dd <= 1e-9, "D error {dd}");
    }

    #[test]
    fn normal_equation_optimality_holds_on_fits() {
        let dict = make_rbf_dictionary(2, 8, &[(-1.0, 1.0); 2], 3, &RbfKind::ThinPlate).unwrap();
        let (_, _, data) = linear_system_data(2, 1, 200, 9);
        let (model, report) = fit_model(&dict, &data, FitMethod::NormalEquations, 0.0).unwrap();
        let (x_lift, y_lift) = lift_dataset(&dict, &data).unwrap();
        let (_, v) = normal_equation_data(&x_lift, &y_lift, data.u(), None).unwrap();
        let v_max = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let bound = 1e-8 * (1.0 + v_max);
        assert!(report.normal_eq_residual <= bound, "{} > {bound}", report.normal_eq_residual);
        let recomputed = normal_equation_residual(&model, &data).unwrap();
        assert!(recomputed <= bound);
    }

    #[test]
    fn methods_agree_on_full_rank_problems() {
        let dict = make_rbf_dictionary(2, 6, &[(-1.0, 1.0); 2], 5, &RbfKind::ThinPlate).unwrap();
        let (_, _, data) = linear_system_data(2, 1, 120, 13);
        let (m1, _) = fit_model(&dict, &data, FitMethod::NormalEquations, 0.0).unwrap();
        let (m2, _) = fit_model(&dict, &data, FitMethod::Pseudoinverse, 0.0).unwrap();
        let scale = m1.a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let da = (&m1.a - &m2.a).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let db = (&m1.b - &m2.b).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(da / scale <= 1e-6, "relative A disagreement {}", da / scale);
        assert!(db / scale.max(1.0) <= 1e-6);
    }

    #[test]
    fn rank_deficient_data_is_flagged_and_solved() {
        // K = 2 samples cannot determine a 3-dimensional lift: G is singular
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 0.5, 1.0, -0.25, -0.5]);
        let y = x.clone();
        let u = DMatrix::zeros(1, 2);
        let data = DataSet::new(x, y, u, None).unwrap();
        let dict = Dictionary::identity(3).unwrap();
        let (model, report) = fit_model(&dict, &data, FitMethod::NormalEquations, 0.0).unwrap();
        assert!(report.rank_deficient);
        assert!(model.a.iter().all(|v: &f64| v.is_finite()));
        // the (ridged) solution still satisfies the normal equations well
        let (x_lift, y_lift) = lift_dataset(&dict, &data).unwrap();
        let (_, v) = normal_equation_data(&x_lift, &y_lift, data.u(), None).unwrap();
        let v_max = v.iter().fold(0.0f64, |m, x: &f64| m.max(x.abs()));
        assert!(report.normal_eq_residual <= 1e-8 * (1.0 + v_max));
    }

    #[test]
    fn nan_data_is_a_usage_error() {
        let mut x = DMatrix::from_element(2, 3, 0.5);
        x[(0, 1)] = f64::NAN;
        let y = DMatrix::from_element(2, 3, 0.5);
        let u = DMatrix::zeros(1, 3);
        let data = DataSet::new(x, y, u, None).unwrap();
        let dict = Dictionary::identity(2).unwrap();
        let err = fit_model(&dict, &data, FitMethod::NormalEquations, 0.0).unwrap_err();
        assert!(err.is_usage());
    }

    /// Adding a basis function enlarges the regressor span, so the optimal
    /// residual on any fixed set of target rows cannot grow. Targets here are
    /// the small dictionary's lift of Y, which is a row prefix of the big one.
    #[test]
    fn adding_a_basis_function_never_hurts_the_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for trial in 0..20u64 {
            let k = 30;
            let x = random_matrix(2, k, &mut rng);
            let u = random_matrix(1, k, &mut rng);
            // nonlinear successor so the small dictionary cannot be exact
            let y = DMatrix::from_fn(2, k, |i, j| {
                let (a, b) = (x[(0, j)], x[(1, j)]);
                if i == 0 {
                    0.8 * a + 0.1 * b * b + 0.2 * u[(0, j)]
                } else {
                    (a * b).sin() - 0.3 * b
                }
            });
            let data = DataSet::new(x, y, u, None).unwrap();
            let small = make_rbf_dictionary(2, (trial % 4) as usize, &[(-1.0, 1.0); 2], trial, &RbfKind::ThinPlate)
                .unwrap();
            let mut fns = small.functions().to_vec();
            fns.push(BasisFn::GaussRbf {
                center: DVector::from_column_slice(&[0.3, -0.2]),
                width: 0.7,
            });
            let bigger = Dictionary::new(2, fns).unwrap();
            let n_small = small.output_dim();

            let shared_rows_residual = |dict: &Dictionary<f64>| -> f64 {
                let (model, _) = fit_model(dict, &data, FitMethod::NormalEquations, 0.0).unwrap();
                let (x_lift, y_lift) = lift_dataset(dict, &data).unwrap();
                let pred = model.a.rows(0, n_small) * &x_lift + model.b.rows(0, n_small) * data.u();
                (y_lift.rows(0, n_small) - pred).norm()
            };
            let r_small = shared_rows_residual(&small);
            let r_big = shared_rows_residual(&bigger);
            assert!(
                r_big <= r_small + 1e-9,
                "residual grew: {r_small} -> {r_big}"
            );
        }
    }

    #[test]
    fn io_fit_with_zero_delays_reduces_to_fit_model() {
        let (_, _, data) = linear_system_data(2, 1, 50, 17);
        let dict = Dictionary::identity(2).unwrap();
        let (m_state, _) = fit_model(&dict, &data, FitMethod::NormalEquations, 0.0).unwrap();
        let (m_io, _) = fit_io_model(&dict, &data, 2, FitMethod::NormalEquations, 0.0).unwrap();
        assert_eq!(m_state.a, m_io.a);
        assert_eq!(m_state.b, m_io.b);
        assert_eq!(m_state.c, m_io.c);
    }

    #[test]
    fn io_fit_recovers_scalar_delay_system() {
        // y⁺ = 0.5 y + u, embedded with one delay
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let steps = 200;
        let mut ys = vec![DVector::from_column_slice(&[0.3])];
        let mut us = Vec::new();
        for _ in 0..steps {
            let u = rng.random::<f64>() * 2.0 - 1.0;
            let y = ys.last().unwrap()[0];
            ys.push(DVector::from_column_slice(&[0.5 * y + u]));
            us.push(DVector::from_column_slice(&[u]));
        }
        let io_data = delay_embed_dataset(&[(0, ys, us)], 1).unwrap();
        assert_eq!(io_data.state_dim(), 3);
        let dict = Dictionary::identity(3).unwrap();
        let (model, _) = fit_io_model(&dict, &io_data, 1, FitMethod::NormalEquations, 0.0).unwrap();
        // ζ components are linearly dependent along trajectories, so only the
        // prediction is determined: the top row must act like 0.5 y_k + u_k.
        for j in 0..io_data.len() {
            let zeta = io_data.x().column(j);
            let u = io_data.u()[(0, j)];
            let predicted = model.a.row(0).transpose().dot(&zeta) + model.b[(0, 0)] * u;
            let expected = 0.5 * zeta[0] + u;
            assert_relative_eq!(predicted, expected, epsilon = 1e-8);
        }
        // with the ζ prefix the output map is the exact first-coordinate pick
        assert_eq!(model.c, DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]));
    }

    #[test]
    fn io_fit_motor_sized_dictionary_shape() {
        let dict = make_rbf_dictionary(3, 100, &[(-1.0, 1.0); 3], 0, &RbfKind::ThinPlate).unwrap();
        assert_eq!(dict.output_dim(), 103);
    }
}
