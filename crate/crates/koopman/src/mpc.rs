//! Finite-horizon MPC over the lifted linear model: the sparse stage-wise
//! problem, its condensation to a dense QP in the stacked input sequence,
//! translation of tracking and nonlinear-MPC objectives, and closed-loop
//! operation with warm-started solves.

use std::collections::VecDeque;
use std::time::Instant;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rustfft::FftNum;

use crate::dynamics::kdv::KdvSolver;
use crate::dynamics::{rk4_step, OdeSystem};
use crate::edmd::LiftedModel;
use crate::predictor::linearize_discrete;
use crate::qp::{QpOptions, QpSolver, QpStatus, QpWarmStart};
use crate::{Error, Result, Scalar};

/// Right-hand side used for padding rows so every stage carries the same
/// constraint count; a row 0ᵀU ≤ VACUOUS_BOUND is never active.
pub const VACUOUS_BOUND: f64 = 1e30;

/// Stage data of the sparse problem: costs z_iᵀQ_i z_i + q_iᵀz_i and
/// u_iᵀR_i u_i + r_iᵀu_i for i = 0…N_p (terminal cost last, no terminal
/// input), constraints E_i z_i + F_i u_i ≤ b_i with F absent at the terminal
/// stage. Constraint row counts may differ per stage; they are padded to a
/// uniform count during condensation.
#[derive(Debug, Clone, PartialEq)]
pub struct MpcSpec<T: Scalar> {
    pub horizon: usize,
    pub q: Vec<DMatrix<T>>,
    pub q_lin: Vec<DVector<T>>,
    pub r: Vec<DMatrix<T>>,
    pub r_lin: Vec<DVector<T>>,
    pub e: Vec<DMatrix<T>>,
    pub f: Vec<DMatrix<T>>,
    pub b: Vec<DVector<T>>,
}

impl<T: Scalar> MpcSpec<T> {
    /// Uniform stage costs, no linear terms, no constraints.
    pub fn unconstrained(
        horizon: usize,
        n_lift: usize,
        input_dim: usize,
        q: DMatrix<T>,
        r: DMatrix<T>,
        q_terminal: DMatrix<T>,
    ) -> Self {
        let mut q_vec = vec![q; horizon];
        q_vec.push(q_terminal);
        Self {
            horizon,
            q: q_vec,
            q_lin: vec![DVector::zeros(n_lift); horizon + 1],
            r: vec![r; horizon],
            r_lin: vec![DVector::zeros(input_dim); horizon],
            e: vec![DMatrix::zeros(0, n_lift); horizon + 1],
            f: vec![DMatrix::zeros(0, input_dim); horizon],
            b: vec![DVector::zeros(0); horizon + 1],
        }
    }

    pub fn validate(&self, n_lift: usize, input_dim: usize) -> Result<()> {
        let np = self.horizon;
        if np == 0 {
            return Err(Error::InvalidArgument("MPC horizon must be at least 1".into()));
        }
        if self.q.len() != np + 1
            || self.q_lin.len() != np + 1
            || self.r.len() != np
            || self.r_lin.len() != np
            || self.e.len() != np + 1
            || self.f.len() != np
            || self.b.len() != np + 1
        {
            return Err(Error::DimensionMismatch("stage lists disagree with the horizon".into()));
        }
        for (i, q) in self.q.iter().enumerate() {
            if q.nrows() != n_lift || q.ncols() != n_lift || self.q_lin[i].len() != n_lift {
                return Err(Error::DimensionMismatch(format!("stage {i} state cost has wrong shape")));
            }
        }
        for (i, r) in self.r.iter().enumerate() {
            if r.nrows() != input_dim || r.ncols() != input_dim || self.r_lin[i].len() != input_dim {
                return Err(Error::DimensionMismatch(format!("stage {i} input cost has wrong shape")));
            }
        }
        for i in 0..=np {
            if self.e[i].ncols() != n_lift || self.e[i].nrows() != self.b[i].len() {
                return Err(Error::DimensionMismatch(format!("stage {i} constraints have wrong shape")));
            }
            if i < np && (self.f[i].ncols() != input_dim || self.f[i].nrows() != self.e[i].nrows()) {
                return Err(Error::DimensionMismatch(format!("stage {i} input constraints have wrong shape")));
            }
        }
        check_psd_stages(&self.q, "Q")?;
        check_psd_stages(&self.r, "R")?;
        Ok(())
    }
}

/// Symmetric part + smallest-eigenvalue estimate ≥ −1e−9. Consecutive equal
/// matrices (the uniform-cost case) are checked once.
fn check_psd_stages<T: Scalar>(stages: &[DMatrix<T>], label: &str) -> Result<()> {
    let tol = T::from_f64_lossy(-1e-9);
    let mut prev: Option<&DMatrix<T>> = None;
    for (i, m) in stages.iter().enumerate() {
        if m.nrows() == 0 {
            continue;
        }
        if prev.is_some_and(|p| p == m) {
            continue;
        }
        let sym = (m + m.transpose()) * T::from_f64_lossy(0.5);
        let min_eig = SymmetricEigen::new(sym).eigenvalues.iter().fold(T::zero(), |a, &e| a.min(e));
        if min_eig < tol {
            return Err(Error::InvalidArgument(format!(
                "stage {i} cost {label} is not positive semidefinite (min eigenvalue {min_eig:e})"
            )));
        }
        prev = Some(m);
    }
    Ok(())
}

/// The condensed problem
/// minimize UᵀHU + (h + Gᵀz₀)ᵀU subject to L U ≤ c − M z₀
/// together with the block prediction matrix needed to rebuild the linear
/// term when the reference moves.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseQp<T: Scalar> {
    /// H
    pub quad: DMatrix<T>,
    /// h
    pub lin: DVector<T>,
    /// G, the z₀ coupling of the objective
    pub coupling: DMatrix<T>,
    /// L
    pub ineq: DMatrix<T>,
    /// M, the z₀ coupling of the constraints
    pub ineq_state: DMatrix<T>,
    /// c
    pub rhs: DVector<T>,
    /// 𝐁: stacked input-to-state blocks, (N_p+1)·N × m·N_p
    pub input_block: DMatrix<T>,
    pub n_lift: usize,
    pub input_dim: usize,
    pub horizon: usize,
    /// Uniform per-stage constraint row count after padding.
    pub n_c: usize,
}

impl<T: Scalar> DenseQp<T> {
    /// Linear term for a given lifted initial state: g = h + Gᵀ z₀.
    pub fn fold_linear(&self, z0: &DVector<T>) -> DVector<T> {
        let mut g = self.lin.clone();
        g.gemv_tr(T::one(), &self.coupling, z0, T::one());
        g
    }

    /// Constraint right-hand side for a given z₀: c − M z₀.
    pub fn fold_rhs(&self, z0: &DVector<T>) -> DVector<T> {
        let mut rhs = self.rhs.clone();
        rhs.gemv(-T::one(), &self.ineq_state, z0, T::one());
        rhs
    }
}

/// Condense the sparse problem onto the stacked input sequence
/// U = [u₀ᵀ … u_{N_p−1}ᵀ]ᵀ:
/// H = 𝐑 + 𝐁ᵀ𝐐𝐁, h = 𝐁ᵀ𝐪 + 𝐫, G = 2𝐀ᵀ𝐐𝐁, L = 𝐅 + 𝐄𝐁, M = 𝐄𝐀,
/// c the stacked b_i, with 𝐀, 𝐁 the block prediction matrices and 𝐐, 𝐑,
/// 𝐄, 𝐅 block-diagonal (𝐅 with a zero terminal block row).
pub fn condense<T: Scalar>(a: &DMatrix<T>, b: &DMatrix<T>, spec: &MpcSpec<T>) -> Result<DenseQp<T>> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n {
        return Err(Error::DimensionMismatch("A and B disagree on the lifted dimension".into()));
    }
    let m = b.ncols();
    spec.validate(n, m)?;
    let np = spec.horizon;
    let d = m * np;

    // uniform constraint row count; short stages get vacuous padding rows
    let n_c = spec.e.iter().map(|e| e.nrows()).max().unwrap_or(0);

    // block prediction matrices: row block i of 𝐁 maps U to z_i, 𝐀 stacks A^i
    let mut input_block = DMatrix::<T>::zeros((np + 1) * n, d);
    for i in 0..np {
        let (prev, mut cur) = {
            let (top, bottom) = input_block.rows_range_pair_mut(0..(i + 1) * n, (i + 1) * n..(i + 2) * n);
            (top.rows(i * n, n).into_owned(), bottom)
        };
        cur.gemm(T::one(), a, &prev, T::zero());
        cur.view_mut((0, i * m), (n, m)).copy_from(b);
    }
    let mut a_pow = Vec::with_capacity(np + 1);
    a_pow.push(DMatrix::<T>::identity(n, n));
    for i in 0..np {
        a_pow.push(a * &a_pow[i]);
    }

    let mut quad = DMatrix::<T>::zeros(d, d);
    let mut lin = DVector::<T>::zeros(d);
    let mut coupling = DMatrix::<T>::zeros(n, d);
    let mut ineq = DMatrix::<T>::zeros(n_c * (np + 1), d);
    let mut ineq_state = DMatrix::<T>::zeros(n_c * (np + 1), n);
    let mut rhs = DVector::<T>::from_element(n_c * (np + 1), T::from_f64_lossy(VACUOUS_BOUND));

    for i in 0..=np {
        let b_i = input_block.rows(i * n, n);
        let qb = &spec.q[i] * &b_i;
        quad.gemm_tr(T::one(), &b_i, &qb, T::one());
        coupling.gemm_tr(T::from_f64_lossy(2.0), &a_pow[i], &qb, T::one());
        lin.gemv_tr(T::one(), &b_i, &spec.q_lin[i], T::one());
        if i < np {
            quad.view_mut((i * m, i * m), (m, m)).zip_apply(&spec.r[i], |h, r| *h += r);
            lin.rows_mut(i * m, m).zip_apply(&spec.r_lin[i], |h, r| *h += r);
        }

        let rows = spec.e[i].nrows();
        if rows > 0 {
            let mut l_block = ineq.rows_mut(i * n_c, rows);
            l_block.gemm(T::one(), &spec.e[i], &b_i, T::zero());
            if i < np {
                l_block.view_mut((0, i * m), (rows, m)).zip_apply(&spec.f[i], |l, f| *l += f);
            }
            ineq_state.rows_mut(i * n_c, rows).gemm(T::one(), &spec.e[i], &a_pow[i], T::zero());
            rhs.rows_mut(i * n_c, rows).copy_from(&spec.b[i]);
        }
    }

    Ok(DenseQp {
        quad,
        lin,
        coupling,
        ineq,
        ineq_state,
        rhs,
        input_block,
        n_lift: n,
        input_dim: m,
        horizon: np,
        n_c,
    })
}

/// Reference signal a tracking controller follows.
#[derive(Debug, Clone, PartialEq)]
pub enum Reference<T: Scalar> {
    Constant(DVector<T>),
    /// values[i] applies from sample `starts[i]` (ascending, starts[0] = 0).
    Piecewise { starts: Vec<usize>, values: Vec<DVector<T>> },
    /// Scalar amplitude·cos(2π t / period).
    Cosine { amplitude: T, period: T },
}

impl<T: Scalar> Reference<T> {
    pub fn at(&self, step: usize, ts: T) -> DVector<T> {
        match self {
            Reference::Constant(v) => v.clone(),
            Reference::Piecewise { starts, values } => {
                let mut current = 0;
                for (i, &s) in starts.iter().enumerate() {
                    if step >= s {
                        current = i;
                    }
                }
                values[current].clone()
            }
            Reference::Cosine { amplitude, period } => {
                let t = T::from_f64_lossy(step as f64) * ts;
                let angle = T::from_f64_lossy(2.0) * T::pi() * t / *period;
                DVector::from_element(1, *amplitude * angle.cos())
            }
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Reference::Constant(v) => v.len(),
            Reference::Piecewise { values, .. } => values.first().map_or(0, |v| v.len()),
            Reference::Cosine { .. } => 1,
        }
    }
}

/// Tracking objective (Cz − y_r)ᵀQ(Cz − y_r) summed along the horizon plus
/// input effort, with a terminal weight.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackingSpec<T: Scalar> {
    pub reference: Reference<T>,
    pub q: DMatrix<T>,
    pub q_terminal: DMatrix<T>,
    pub r: DMatrix<T>,
    /// Output map of the predictor the cost is written against.
    pub output_map: DMatrix<T>,
}

/// Expand the tracking objective at closed-loop time `step` into stage costs:
/// Q_i = CᵀQC, q_i = −2CᵀQ y_r(step+i), constants dropped; R_i passes through.
pub fn translate_tracking<T: Scalar>(
    track: &TrackingSpec<T>,
    horizon: usize,
    step: usize,
    ts: T,
) -> Result<MpcSpec<T>> {
    let c = &track.output_map;
    let n_y = c.nrows();
    let n_lift = c.ncols();
    let m = track.r.nrows();
    if track.q.nrows() != n_y || track.q_terminal.nrows() != n_y {
        return Err(Error::DimensionMismatch("tracking weights disagree with the output map".into()));
    }
    let ctqc = |q: &DMatrix<T>| c.transpose() * q * c;
    let q_stage = ctqc(&track.q);
    let q_term = ctqc(&track.q_terminal);
    let minus_two = T::from_f64_lossy(-2.0);
    let q_lin = |q: &DMatrix<T>, i: usize| -> DVector<T> {
        let y_r = track.reference.at(step + i, ts);
        c.transpose() * (q * y_r) * minus_two
    };
    let mut spec = MpcSpec::unconstrained(horizon, n_lift, m, q_stage, track.r.clone(), q_term);
    for i in 0..horizon {
        spec.q_lin[i] = q_lin(&track.q, i);
    }
    spec.q_lin[horizon] = q_lin(&track.q_terminal, horizon);
    Ok(spec)
}

/// Dictionary slots a translated nonlinear MPC problem requires: the lifted
/// coordinates that must evaluate the named nonlinear cost and constraint
/// functions.
#[derive(Debug, Clone, PartialEq)]
pub struct NmpcTranslation<T: Scalar> {
    /// (lifted index, function label) for every function that must be
    /// appended to the dictionary; costs first, then state constraints.
    pub required_dictionary: Vec<(usize, String)>,
    pub spec: MpcSpec<T>,
}

/// Translate a nonlinear MPC problem with scalar stage costs l_i(x) and
/// scalar state constraints c_{x_i}(x) + c_{u_i}ᵀu ≤ 0 into the lifted form:
/// the nonlinear functions become dictionary entries, the stage cost becomes
/// the selector q_i of the matching lifted coordinate, and each constraint
/// row selects its coordinate with E_i, F_i = c_{u_i}ᵀ, b_i = 0. Labels may
/// be given per stage (N_p+1 of them) or once for a time-invariant function.
pub fn translate_nmpc<T: Scalar>(
    horizon: usize,
    n_lift: usize,
    input_dim: usize,
    stage_costs: &[String],
    state_constraints: &[String],
    input_cost: &DMatrix<T>,
    input_cost_lin: &DVector<T>,
    input_constraints: &[DVector<T>],
) -> Result<NmpcTranslation<T>> {
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    let stage_count = horizon + 1;
    let check_len = |len: usize, what: &str| -> Result<()> {
        if len == 0 || len == 1 || len == stage_count {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "{what} must be absent, shared, or given per stage ({stage_count})"
            )))
        }
    };
    check_len(stage_costs.len(), "stage costs")?;
    check_len(state_constraints.len(), "state constraints")?;
    if !(input_constraints.is_empty()
        || input_constraints.len() == 1
        || input_constraints.len() == horizon)
    {
        return Err(Error::InvalidArgument("input constraints must be absent, shared, or per stage".into()));
    }

    let n_cost_slots = stage_costs.len().min(stage_count);
    let n_con_slots = state_constraints.len().min(stage_count);
    if n_cost_slots + n_con_slots > n_lift {
        return Err(Error::InvalidArgument(format!(
            "dictionary of size {n_lift} cannot host {} required functions",
            n_cost_slots + n_con_slots
        )));
    }
    let mut required = Vec::new();
    for (i, label) in stage_costs.iter().enumerate() {
        required.push((i, label.clone()));
    }
    for (i, label) in state_constraints.iter().enumerate() {
        required.push((n_cost_slots + i, label.clone()));
    }

    let mut spec = MpcSpec::unconstrained(
        horizon,
        n_lift,
        input_dim,
        DMatrix::zeros(n_lift, n_lift),
        input_cost.clone(),
        DMatrix::zeros(n_lift, n_lift),
    );
    for r_lin in spec.r_lin.iter_mut() {
        r_lin.copy_from(input_cost_lin);
    }
    let cost_slot = |i: usize| if stage_costs.len() == 1 { 0 } else { i };
    for i in 0..=horizon {
        if !stage_costs.is_empty() {
            let mut q = DVector::zeros(n_lift);
            q[cost_slot(i)] = T::one();
            spec.q_lin[i] = q;
        }
    }
    let con_slot = |i: usize| if state_constraints.len() == 1 { 0 } else { i };
    let input_row = |i: usize| -> Option<&DVector<T>> {
        match input_constraints.len() {
            0 => None,
            1 => Some(&input_constraints[0]),
            _ => Some(&input_constraints[i]),
        }
    };
    for i in 0..=horizon {
        let has_state = !state_constraints.is_empty();
        let has_input = i < horizon && input_row(i).is_some();
        if !has_state && !has_input {
            continue;
        }
        let mut e = DMatrix::zeros(1, n_lift);
        if has_state {
            e[(0, n_cost_slots + con_slot(i))] = T::one();
        }
        spec.e[i] = e;
        spec.b[i] = DVector::zeros(1);
        if i < horizon {
            let mut f = DMatrix::zeros(1, input_dim);
            if let Some(cu) = input_row(i) {
                f.row_mut(0).tr_copy_from(cu);
            }
            spec.f[i] = f;
        }
    }
    Ok(NmpcTranslation { required_dictionary: required, spec })
}

/// Scenario data shared by the lifted and local-linearization controllers.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackingScenario<T: Scalar> {
    pub horizon: usize,
    pub reference: Reference<T>,
    pub q: DMatrix<T>,
    pub q_terminal: DMatrix<T>,
    pub r: DMatrix<T>,
    pub u_min: DVector<T>,
    pub u_max: DVector<T>,
    pub y_min: Option<DVector<T>>,
    pub y_max: Option<DVector<T>>,
}

/// Stage constraints of a tracking scenario against a given output map:
/// output bounds (from stage 1 on; z₀ is a measured parameter, so bounding it
/// could only poison feasibility) and input bounds on stages 0…N_p−1.
fn scenario_constraints<T: Scalar>(
    scenario: &TrackingScenario<T>,
    c_map: &DMatrix<T>,
    spec: &mut MpcSpec<T>,
) {
    let n_y = c_map.nrows();
    let n_lift = c_map.ncols();
    let m = scenario.u_min.len();
    let np = scenario.horizon;
    let has_y = scenario.y_min.is_some() || scenario.y_max.is_some();
    let y_rows = if has_y { 2 * n_y } else { 0 };
    let big = T::from_f64_lossy(VACUOUS_BOUND);
    for i in 0..=np {
        let input_rows = if i < np { 2 * m } else { 0 };
        let rows = y_rows + input_rows;
        if rows == 0 {
            continue;
        }
        let mut e = DMatrix::zeros(rows, n_lift);
        let mut b = DVector::from_element(rows, big);
        if has_y && i > 0 {
            e.view_mut((0, 0), (n_y, n_lift)).copy_from(c_map);
            e.view_mut((n_y, 0), (n_y, n_lift)).copy_from(&(-c_map));
            if let Some(y_max) = &scenario.y_max {
                b.rows_mut(0, n_y).copy_from(y_max);
            }
            if let Some(y_min) = &scenario.y_min {
                b.rows_mut(n_y, n_y).copy_from(&(-y_min));
            }
        }
        spec.e[i] = e;
        spec.b[i] = b;
        if i < np {
            let mut f = DMatrix::zeros(rows, m);
            for j in 0..m {
                f[(y_rows + j, j)] = T::one();
                f[(y_rows + m + j, j)] = -T::one();
            }
            spec.f[i] = f;
            spec.b[i].rows_mut(y_rows, m).copy_from(&scenario.u_max);
            spec.b[i].rows_mut(y_rows + m, m).copy_from(&(-&scenario.u_min));
        }
    }
}

/// How a lifted controller builds its predictor state from measurements.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LiftInput {
    /// z₀ = ψ(x_k) from the full plant state.
    State,
    /// z₀ = ψ(ζ_k) from the delay-embedded output/input history. Before any
    /// input has been applied the history is padded with (y₀, 0).
    DelayEmbedded { n_delays: usize },
}

/// Outcome of one controller invocation.
#[derive(Debug, Clone)]
pub struct ControllerStep<T: Scalar> {
    pub u: DVector<T>,
    pub qp_iters: usize,
    pub qp_status: QpStatus,
    pub solve_seconds: f64,
}

pub trait MpcController<T: Scalar> {
    fn control(&mut self, state: &DVector<T>, output: &DVector<T>, step: usize) -> Result<ControllerStep<T>>;
    fn input_dim(&self) -> usize;
}

/// Lifting-based MPC: the dense QP data are condensed once at construction;
/// each step evaluates the lift, folds z₀ into the linear term and right-hand
/// side, and solves the QP warm-started from the shifted previous solution.
pub struct KoopmanMpc<T: Scalar> {
    model: LiftedModel<T>,
    dense: DenseQp<T>,
    solver: QpSolver<T>,
    reference: Reference<T>,
    /// h(k) = reference_map · [y_r(k); …; y_r(k+N_p)] + lin_const.
    reference_map: DMatrix<T>,
    lin_const: DVector<T>,
    lift_input: LiftInput,
    ts: T,
    /// (output, applied input) pairs, newest first, for the delay embedding.
    history: VecDeque<(DVector<T>, DVector<T>)>,
    previous: Option<(DVector<T>, DVector<T>)>,
    condense_count: usize,
}

impl<T: Scalar> KoopmanMpc<T> {
    pub fn new(
        model: LiftedModel<T>,
        scenario: &TrackingScenario<T>,
        lift_input: LiftInput,
        ts: T,
        qp_opts: QpOptions<T>,
    ) -> Result<Self> {
        let n_y = model.output_dim();
        if scenario.reference.output_dim() != n_y {
            return Err(Error::DimensionMismatch("reference and output map disagree".into()));
        }
        let track = TrackingSpec {
            reference: scenario.reference.clone(),
            q: scenario.q.clone(),
            q_terminal: scenario.q_terminal.clone(),
            r: scenario.r.clone(),
            output_map: model.c.clone(),
        };
        // base spec with zeroed reference terms: the per-step linear part is
        // rebuilt from reference_map, everything else is fixed
        let mut spec = translate_tracking(&track, scenario.horizon, 0, ts)?;
        for q_lin in spec.q_lin.iter_mut() {
            q_lin.fill(T::zero());
        }
        scenario_constraints(scenario, &model.c, &mut spec);
        let dense = condense(&model.a, &model.b, &spec)?;

        // reference_map block i = −2·B_iᵀCᵀQ_i (terminal weight in the last)
        let np = scenario.horizon;
        let n = model.lifted_dim();
        let d = dense.quad.nrows();
        let mut reference_map = DMatrix::zeros(d, (np + 1) * n_y);
        let minus_two = T::from_f64_lossy(-2.0);
        for i in 0..=np {
            let weight = if i == np { &scenario.q_terminal } else { &scenario.q };
            let ctq = model.c.transpose() * weight * minus_two;
            let block = dense.input_block.rows(i * n, n).transpose() * ctq;
            reference_map.view_mut((0, i * n_y), (d, n_y)).copy_from(&block);
        }
        let lin_const = dense.lin.clone();
        let solver = QpSolver::new(dense.quad.clone(), dense.ineq.clone(), qp_opts)?;
        Ok(Self {
            model,
            dense,
            solver,
            reference: scenario.reference.clone(),
            reference_map,
            lin_const,
            lift_input,
            ts,
            history: VecDeque::new(),
            previous: None,
            condense_count: 1,
        })
    }

    pub fn dense(&self) -> &DenseQp<T> {
        &self.dense
    }

    pub fn condense_count(&self) -> usize {
        self.condense_count
    }

    pub fn factorization_count(&self) -> usize {
        self.solver.factorization_count()
    }

    /// Per-step linear term h(k) from the reference window.
    pub fn linear_term(&self, step: usize) -> DVector<T> {
        let n_y = self.model.output_dim();
        let np = self.dense.horizon;
        let stacked = DVector::from_fn((np + 1) * n_y, |row, _| {
            let i = row / n_y;
            self.reference.at(step + i, self.ts)[row % n_y]
        });
        &self.reference_map * stacked + &self.lin_const
    }

    fn lifted_state(&mut self, state: &DVector<T>, output: &DVector<T>) -> Result<DVector<T>> {
        match self.lift_input {
            LiftInput::State => self.model.dictionary.eval(state),
            LiftInput::DelayEmbedded { n_delays } => {
                while self.history.len() < n_delays {
                    // no history yet: assume the plant was at rest at y₀
                    let m = self.model.input_dim();
                    self.history.push_back((output.clone(), DVector::zeros(m)));
                }
                let ys: Vec<DVector<T>> = std::iter::once(output.clone())
                    .chain(self.history.iter().map(|(y, _)| y.clone()))
                    .take(n_delays + 1)
                    .collect();
                let us: Vec<DVector<T>> = self.history.iter().map(|(_, u)| u.clone()).take(n_delays).collect();
                let zeta = crate::dictionary::make_delay_vector(&ys, &us)?;
                self.model.dictionary.eval(zeta.values())
            }
        }
    }

    fn shifted_warm_start(&self) -> Option<QpWarmStart<T>> {
        let (u_prev, dual_prev) = self.previous.as_ref()?;
        let m = self.dense.input_dim;
        let np = self.dense.horizon;
        let mut u = DVector::zeros(m * np);
        for i in 0..np {
            let src = (i + 1).min(np - 1);
            u.rows_mut(i * m, m).copy_from(&u_prev.rows(src * m, m));
        }
        let n_c = self.dense.n_c;
        let mut dual = DVector::zeros(n_c * (np + 1));
        for i in 0..=np {
            let src = (i + 1).min(np);
            dual.rows_mut(i * n_c, n_c).copy_from(&dual_prev.rows(src * n_c, n_c));
        }
        Some(QpWarmStart { u, dual })
    }
}

impl<T: Scalar> MpcController<T> for KoopmanMpc<T> {
    fn control(&mut self, state: &DVector<T>, output: &DVector<T>, step: usize) -> Result<ControllerStep<T>> {
        let z0 = self.lifted_state(state, output)?;
        let started = Instant::now();
        let mut g = self.linear_term(step);
        g.gemv_tr(T::one(), &self.dense.coupling, &z0, T::one());
        let rhs = self.dense.fold_rhs(&z0);
        let warm = self.shifted_warm_start();
        let solution = self.solver.solve(&g, &rhs, warm.as_ref())?;
        let solve_seconds = started.elapsed().as_secs_f64();
        let m = self.dense.input_dim;
        let u = solution.u.rows(0, m).into_owned();
        if solution.status != QpStatus::Infeasible {
            self.previous = Some((solution.u.clone(), solution.dual.clone()));
            if let LiftInput::DelayEmbedded { n_delays } = self.lift_input {
                self.history.push_front((output.clone(), u.clone()));
                self.history.truncate(n_delays.max(1));
            }
        }
        Ok(ControllerStep { u, qp_iters: solution.iterations, qp_status: solution.status, solve_seconds })
    }

    fn input_dim(&self) -> usize {
        self.dense.input_dim
    }
}

/// Comparator controller: re-linearizes the plant model at the current
/// measured state every step, so the whole dense problem is rebuilt and
/// solved cold each time. The affine linearization is embedded by augmenting
/// the state with a constant-one coordinate.
pub struct LocalLinMpc<'a, T: Scalar, S: OdeSystem<T> + ?Sized> {
    sys: &'a S,
    scenario: TrackingScenario<T>,
    /// Output rows on the plant state (n_y × n).
    output_map: DMatrix<T>,
    ts: T,
    qp_opts: QpOptions<T>,
}

impl<'a, T: Scalar, S: OdeSystem<T> + ?Sized> LocalLinMpc<'a, T, S> {
    pub fn new(
        sys: &'a S,
        scenario: TrackingScenario<T>,
        output_map: DMatrix<T>,
        ts: T,
        qp_opts: QpOptions<T>,
    ) -> Result<Self> {
        if output_map.ncols() != sys.state_dim() {
            return Err(Error::DimensionMismatch("output map disagrees with the state dimension".into()));
        }
        Ok(Self { sys, scenario, output_map, ts, qp_opts })
    }
}

impl<T: Scalar, S: OdeSystem<T> + ?Sized> MpcController<T> for LocalLinMpc<'_, T, S> {
    fn control(&mut self, state: &DVector<T>, _output: &DVector<T>, step: usize) -> Result<ControllerStep<T>> {
        let started = Instant::now();
        let lin = linearize_discrete(self.sys, state, self.ts)?;
        let n = self.sys.state_dim();
        let m = self.sys.input_dim();
        // augmented model [x; 1]
        let mut a_aug = DMatrix::zeros(n + 1, n + 1);
        a_aug.view_mut((0, 0), (n, n)).copy_from(&lin.a);
        a_aug.view_mut((0, n), (n, 1)).copy_from(&lin.offset);
        a_aug[(n, n)] = T::one();
        let mut b_aug = DMatrix::zeros(n + 1, m);
        b_aug.view_mut((0, 0), (n, m)).copy_from(&lin.b);
        let mut c_aug = DMatrix::zeros(self.output_map.nrows(), n + 1);
        c_aug.view_mut((0, 0), (self.output_map.nrows(), n)).copy_from(&self.output_map);

        let track = TrackingSpec {
            reference: self.scenario.reference.clone(),
            q: self.scenario.q.clone(),
            q_terminal: self.scenario.q_terminal.clone(),
            r: self.scenario.r.clone(),
            output_map: c_aug.clone(),
        };
        let mut spec = translate_tracking(&track, self.scenario.horizon, step, self.ts)?;
        scenario_constraints(&self.scenario, &c_aug, &mut spec);
        let dense = condense(&a_aug, &b_aug, &spec)?;

        let mut z0 = DVector::zeros(n + 1);
        z0.rows_mut(0, n).copy_from(state);
        z0[n] = T::one();
        let g = dense.fold_linear(&z0);
        let rhs = dense.fold_rhs(&z0);
        let mut solver = QpSolver::new(dense.quad.clone(), dense.ineq.clone(), self.qp_opts.clone())?;
        let solution = solver.solve(&g, &rhs, None)?;
        let solve_seconds = started.elapsed().as_secs_f64();
        Ok(ControllerStep {
            u: solution.u.rows(0, m).into_owned(),
            qp_iters: solution.iterations,
            qp_status: solution.status,
            solve_seconds,
        })
    }

    fn input_dim(&self) -> usize {
        self.sys.input_dim()
    }
}

/// The physical system a closed loop runs against.
pub trait Plant<T: Scalar> {
    fn state(&self) -> DVector<T>;
    fn output(&self) -> DVector<T>;
    fn step(&mut self, u: &DVector<T>) -> Result<()>;
    fn input_dim(&self) -> usize;
}

/// RK4-discretized ODE plant.
pub struct OdePlant<'a, T: Scalar, S: OdeSystem<T> + ?Sized> {
    pub sys: &'a S,
    pub x: DVector<T>,
    pub ts: T,
}

impl<T: Scalar, S: OdeSystem<T> + ?Sized> Plant<T> for OdePlant<'_, T, S> {
    fn state(&self) -> DVector<T> {
        self.x.clone()
    }

    fn output(&self) -> DVector<T> {
        self.sys.output(self.x.as_view())
    }

    fn step(&mut self, u: &DVector<T>) -> Result<()> {
        self.x = rk4_step(self.sys, &self.x, u, self.ts)?;
        Ok(())
    }

    fn input_dim(&self) -> usize {
        self.sys.input_dim()
    }
}

/// Split-step KdV plant; the full grid state is the measured output.
pub struct KdvPlant<'a, T: Scalar + FftNum> {
    pub solver: &'a KdvSolver<T>,
    pub y: DVector<T>,
}

impl<T: Scalar + FftNum> Plant<T> for KdvPlant<'_, T> {
    fn state(&self) -> DVector<T> {
        self.y.clone()
    }

    fn output(&self) -> DVector<T> {
        self.y.clone()
    }

    fn step(&mut self, u: &DVector<T>) -> Result<()> {
        if u.len() != 3 {
            return Err(Error::DimensionMismatch("KdV plant takes three input channels".into()));
        }
        self.y = self.solver.step(&self.y, &[u[0], u[1], u[2]])?;
        Ok(())
    }

    fn input_dim(&self) -> usize {
        3
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoopStatus {
    Completed,
    /// The QP reported infeasibility; the loop stops at this step.
    Infeasible { step: usize },
}

#[derive(Debug, Clone)]
pub struct StepRecord<T: Scalar> {
    pub step: usize,
    pub t: T,
    pub output: DVector<T>,
    pub input: DVector<T>,
    pub solve_ms: f64,
    pub qp_iters: usize,
    pub qp_status: QpStatus,
}

#[derive(Debug, Clone)]
pub struct ClosedLoopLog<T: Scalar> {
    pub records: Vec<StepRecord<T>>,
    pub status: LoopStatus,
}

impl<T: Scalar> ClosedLoopLog<T> {
    pub fn max_abs_output(&self) -> T {
        self.records.iter().fold(T::zero(), |m, r| m.max(r.output.amax()))
    }

    pub fn mean_solve_ms(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        self.records.iter().map(|r| r.solve_ms).sum::<f64>() / self.records.len() as f64
    }

    pub fn max_solve_ms(&self) -> f64 {
        self.records.iter().fold(0.0f64, |m, r| m.max(r.solve_ms))
    }

    /// `step,t,y...,u...,solve_ms,qp_iters,status` with one column per output
    /// and input channel.
    pub fn to_csv(&self) -> String {
        let n_y = self.records.first().map_or(0, |r| r.output.len());
        let m = self.records.first().map_or(0, |r| r.input.len());
        let mut out = String::from("step,t");
        for i in 0..n_y {
            out.push_str(&format!(",y{i}"));
        }
        for i in 0..m {
            out.push_str(&format!(",u{i}"));
        }
        out.push_str(",solve_ms,qp_iters,status\n");
        for r in &self.records {
            out.push_str(&format!("{},{}", r.step, r.t));
            for v in r.output.iter() {
                out.push_str(&format!(",{v}"));
            }
            for v in r.input.iter() {
                out.push_str(&format!(",{v}"));
            }
            let status = match r.qp_status {
                QpStatus::Optimal => "optimal",
                QpStatus::MaxIters => "max_iters",
                QpStatus::Infeasible => "infeasible",
            };
            out.push_str(&format!(",{},{},{}\n", r.solve_ms, r.qp_iters, status));
        }
        out
    }
}

/// Run the receding-horizon loop: measure, lift, solve, apply the first input
/// block, step the plant. Infeasibility of the QP ends the run.
pub fn closed_loop<T: Scalar, P: Plant<T>, C: MpcController<T> + ?Sized>(
    plant: &mut P,
    controller: &mut C,
    steps: usize,
    ts: T,
) -> Result<ClosedLoopLog<T>> {
    let mut records = Vec::with_capacity(steps);
    for step in 0..steps {
        let state = plant.state();
        let output = plant.output();
        let outcome = controller.control(&state, &output, step)?;
        let t = T::from_f64_lossy(step as f64) * ts;
        records.push(StepRecord {
            step,
            t,
            output: output.clone(),
            input: outcome.u.clone(),
            solve_ms: outcome.solve_seconds * 1e3,
            qp_iters: outcome.qp_iters,
            qp_status: outcome.qp_status,
        });
        if outcome.qp_status == QpStatus::Infeasible {
            return Ok(ClosedLoopLog { records, status: LoopStatus::Infeasible { step } });
        }
        plant.step(&outcome.u)?;
    }
    Ok(ClosedLoopLog { records, status: LoopStatus::Completed })
}
