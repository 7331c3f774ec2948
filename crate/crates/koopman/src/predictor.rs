//! Rollouts of the lifted linear predictor and of the comparator predictors
//! (local linearization at a point, Carleman linearization of polynomial
//! dynamics), the relative RMSE metric, and the seeded multi-trial prediction
//! comparison driver behind the benchmark tables.

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;

use crate::dynamics::{rk4_step, OdeSystem};
use crate::edmd::LiftedModel;
use crate::{Error, Result, Scalar};

/// Component magnitude at which diverging comparator predictions are clamped
/// so their RMSE stays representable; clamping is reported as saturation.
pub const SATURATION_LIMIT: f64 = 1e30;

/// A sampled trajectory: outputs (or states) at instants k·ts together with
/// the inputs applied between them.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T: Scalar> {
    pub ts: T,
    pub states: Vec<DVector<T>>,
    pub inputs: Vec<DVector<T>>,
}

impl<T: Scalar> Trajectory<T> {
    pub fn new(ts: T, states: Vec<DVector<T>>, inputs: Vec<DVector<T>>) -> Result<Self> {
        if ts <= T::zero() {
            return Err(Error::InvalidArgument("sampling period must be positive".into()));
        }
        if states.len() != inputs.len() + 1 {
            return Err(Error::DimensionMismatch(format!(
                "{} states need {} inputs, got {}",
                states.len(),
                states.len().saturating_sub(1),
                inputs.len()
            )));
        }
        Ok(Self { ts, states, inputs })
    }

    pub fn times(&self) -> Vec<T> {
        (0..self.states.len()).map(|k| T::from_f64_lossy(k as f64) * self.ts).collect()
    }
}

/// Roll the lifted state forward: z_{k+1} = A z_k + B u_k from z_0.
pub fn rollout_lifted_z<T: Scalar>(
    a: &DMatrix<T>,
    b: &DMatrix<T>,
    z0: &DVector<T>,
    u_seq: &[DVector<T>],
) -> Vec<DVector<T>> {
    let mut zs = Vec::with_capacity(u_seq.len() + 1);
    zs.push(z0.clone());
    for u in u_seq {
        let prev = zs.last().expect("nonempty");
        let mut next = b * u;
        next.gemv(T::one(), a, prev, T::one());
        zs.push(next);
    }
    zs
}

/// Predict x̂_k = C z_k with z_0 = ψ(x_0) and z_{k+1} = A z_k + B u_k.
pub fn rollout_lifted<T: Scalar>(
    model: &LiftedModel<T>,
    x0: &DVector<T>,
    u_seq: &[DVector<T>],
) -> Result<Vec<DVector<T>>> {
    let z0 = model.dictionary.eval(x0)?;
    rollout_lifted_from_z(model, &z0, u_seq)
}

/// Same as [`rollout_lifted`] but starting from an already lifted z_0 (the
/// delay-embedded case lifts ζ_0 instead of a state).
pub fn rollout_lifted_from_z<T: Scalar>(
    model: &LiftedModel<T>,
    z0: &DVector<T>,
    u_seq: &[DVector<T>],
) -> Result<Vec<DVector<T>>> {
    if z0.len() != model.lifted_dim() {
        return Err(Error::DimensionMismatch("initial lifted state has the wrong length".into()));
    }
    for u in u_seq {
        if u.len() != model.input_dim() {
            return Err(Error::DimensionMismatch("input dimension mismatch in rollout".into()));
        }
        if !u.iter().all(|v| v.is_finite_scalar()) {
            return Err(Error::NonFinite("non-finite input in rollout".into()));
        }
    }
    let zs = rollout_lifted_z(&model.a, &model.b, z0, u_seq);
    Ok(zs.iter().map(|z| &model.c * z).collect())
}

/// Disturbance-aware rollout: z_{k+1} = A z_k + B u_k + D w_k.
pub fn rollout_lifted_with_disturbance<T: Scalar>(
    model: &LiftedModel<T>,
    x0: &DVector<T>,
    u_seq: &[DVector<T>],
    w_seq: &[DVector<T>],
) -> Result<Vec<DVector<T>>> {
    let d = model
        .d
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("model has no disturbance matrix".into()))?;
    if w_seq.len() != u_seq.len() {
        return Err(Error::DimensionMismatch("input and disturbance sequences differ in length".into()));
    }
    let mut z = model.dictionary.eval(x0)?;
    let mut outputs = vec![&model.c * &z];
    for (u, w) in u_seq.iter().zip(w_seq) {
        let mut next = &model.b * u + d * w;
        next.gemv(T::one(), &model.a, &z, T::one());
        z = next;
        outputs.push(&model.c * &z);
    }
    Ok(outputs)
}

/// Affine one-step model x̂⁺ = f(x_lin, 0) + J_x (x̂ − x_lin) + J_u u with the
/// Jacobians of the discrete map taken by central finite differences at
/// (x_lin, 0), step 1e−6·(1+|coordinate|).
#[derive(Debug, Clone)]
pub struct LocalLinearization<T: Scalar> {
    pub a: DMatrix<T>,
    pub b: DMatrix<T>,
    /// f(x_lin, 0) − J_x x_lin, so one step is offset + A x̂ + B u.
    pub offset: DVector<T>,
    pub x_lin: DVector<T>,
}

pub fn linearize_discrete<T: Scalar, S: OdeSystem<T> + ?Sized>(
    sys: &S,
    x_lin: &DVector<T>,
    ts: T,
) -> Result<LocalLinearization<T>> {
    let n = sys.state_dim();
    let m = sys.input_dim();
    if x_lin.len() != n {
        return Err(Error::DimensionMismatch("linearization point has the wrong length".into()));
    }
    let u0 = DVector::zeros(m);
    let f0 = rk4_step(sys, x_lin, &u0, ts)?;
    let base_step = T::from_f64_lossy(1e-6);

    let mut a = DMatrix::zeros(n, n);
    for j in 0..n {
        let h = base_step * (T::one() + x_lin[j].abs());
        let mut hi = x_lin.clone();
        hi[j] += h;
        let mut lo = x_lin.clone();
        lo[j] -= h;
        let diff = (rk4_step(sys, &hi, &u0, ts)? - rk4_step(sys, &lo, &u0, ts)?)
            / (T::from_f64_lossy(2.0) * h);
        a.column_mut(j).copy_from(&diff);
    }
    let mut b = DMatrix::zeros(n, m);
    for j in 0..m {
        let h = base_step;
        let mut hi = DVector::zeros(m);
        hi[j] = h;
        let mut lo = DVector::zeros(m);
        lo[j] = -h;
        let diff = (rk4_step(sys, x_lin, &hi, ts)? - rk4_step(sys, x_lin, &lo, ts)?)
            / (T::from_f64_lossy(2.0) * h);
        b.column_mut(j).copy_from(&diff);
    }
    if !a.iter().chain(b.iter()).all(|v| v.is_finite_scalar()) {
        return Err(Error::NonFinite("non-finite Jacobian entries".into()));
    }
    let offset = &f0 - &a * x_lin;
    Ok(LocalLinearization { a, b, offset, x_lin: x_lin.clone() })
}

impl<T: Scalar> LocalLinearization<T> {
    pub fn predict(&self, x0: &DVector<T>, u_seq: &[DVector<T>]) -> Vec<DVector<T>> {
        let mut xs = Vec::with_capacity(u_seq.len() + 1);
        xs.push(x0.clone());
        for u in u_seq {
            let prev = xs.last().expect("nonempty");
            let mut next = self.offset.clone();
            next.gemv(T::one(), &self.a, prev, T::one());
            next.gemv(T::one(), &self.b, u, T::one());
            xs.push(next);
        }
        xs
    }
}

/// Polynomial vector field ẋᵢ = Σ coeff · x^α, with the control (when present)
/// entering additively in one coordinate: ẋ_c += u.
#[derive(Debug, Clone)]
pub struct PolynomialDynamics<T: Scalar> {
    pub state_dim: usize,
    /// terms[i] lists (coefficient, multi-index) of the drift of ẋᵢ.
    pub terms: Vec<Vec<(T, Vec<u32>)>>,
    pub control_coordinate: Option<usize>,
}

/// The forced Van der Pol drift as a polynomial vector field, control in x₂.
pub fn vdp_polynomial<T: Scalar>() -> PolynomialDynamics<T> {
    let c = |v: f64| T::from_f64_lossy(v);
    PolynomialDynamics {
        state_dim: 2,
        terms: vec![
            vec![(c(2.0), vec![0, 1])],
            vec![(c(-0.8), vec![1, 0]), (c(2.0), vec![0, 1]), (c(-10.0), vec![2, 1])],
        ],
        control_coordinate: Some(1),
    }
}

/// Truncated Carleman linearization: the lifted linear ODE ż = G z + b u over
/// all monomials of total degree 1…d plus the constant (kept last).
#[derive(Debug, Clone)]
pub struct CarlemanModel<T: Scalar> {
    pub degree: usize,
    /// Graded-lex multi-indices of degree ≥ 1, then the all-zero constant.
    pub monomials: Vec<Vec<u32>>,
    pub generator: DMatrix<T>,
    pub b: DVector<T>,
    pub state_dim: usize,
}

fn monomials_of_degree(n: usize, degree: u32) -> Vec<Vec<u32>> {
    fn rec(n: usize, left: u32, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if n == 1 {
            let mut m = prefix.clone();
            m.push(left);
            out.push(m);
            return;
        }
        for first in (0..=left).rev() {
            prefix.push(first);
            rec(n - 1, left - first, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    rec(n, degree, &mut Vec::new(), &mut out);
    out
}

pub fn build_carleman<T: Scalar>(
    dynamics: &PolynomialDynamics<T>,
    degree: usize,
) -> Result<CarlemanModel<T>> {
    let n = dynamics.state_dim;
    if n == 0 || dynamics.terms.len() != n {
        return Err(Error::DimensionMismatch("polynomial dynamics are inconsistent".into()));
    }
    if degree == 0 {
        return Err(Error::InvalidArgument("Carleman degree must be at least 1".into()));
    }
    for terms in &dynamics.terms {
        for (_, alpha) in terms {
            if alpha.len() != n {
                return Err(Error::DimensionMismatch("multi-index length mismatch".into()));
            }
        }
    }
    let mut monomials: Vec<Vec<u32>> = Vec::new();
    for g in 1..=degree as u32 {
        monomials.extend(monomials_of_degree(n, g));
    }
    monomials.push(vec![0; n]); // constant, kept last
    let index: std::collections::HashMap<Vec<u32>, usize> =
        monomials.iter().cloned().enumerate().map(|(i, m)| (m, i)).collect();

    let size = monomials.len();
    let mut generator = DMatrix::zeros(size, size);
    for (row, alpha) in monomials.iter().enumerate() {
        for i in 0..n {
            if alpha[i] == 0 {
                continue;
            }
            // d/dt x^α picks up α_i x^{α − e_i} ẋ_i for every coordinate
            for (coeff, beta) in &dynamics.terms[i] {
                let mut gamma = alpha.clone();
                gamma[i] -= 1;
                for (g, b) in gamma.iter_mut().zip(beta.iter()) {
                    *g += b;
                }
                let total: u32 = gamma.iter().sum();
                if total as usize <= degree {
                    let col = index[&gamma];
                    generator[(row, col)] += T::from_f64_lossy(alpha[i] as f64) * *coeff;
                }
            }
        }
    }
    let mut b = DVector::zeros(size);
    if let Some(c) = dynamics.control_coordinate {
        if c >= n {
            return Err(Error::InvalidArgument("control coordinate out of range".into()));
        }
        let mut unit = vec![0u32; n];
        unit[c] = 1;
        b[index[&unit]] = T::one();
    }
    Ok(CarlemanModel { degree, monomials, generator, b, state_dim: n })
}

/// Prediction of a Carleman model; `saturated` reports whether any component
/// had to be clamped at [`SATURATION_LIMIT`] (or replaced after overflowing).
#[derive(Debug, Clone)]
pub struct CarlemanPrediction<T: Scalar> {
    pub states: Vec<DVector<T>>,
    pub saturated: bool,
}

impl<T: Scalar> CarlemanModel<T> {
    fn lift(&self, x0: &DVector<T>) -> Result<DVector<T>> {
        if x0.len() != self.state_dim {
            return Err(Error::DimensionMismatch("Carleman initial state has the wrong length".into()));
        }
        Ok(DVector::from_fn(self.monomials.len(), |i, _| {
            let mut p = T::one();
            for (x, &e) in x0.iter().zip(self.monomials[i].iter()) {
                if e > 0 {
                    p *= x.powi(e as i32);
                }
            }
            p
        }))
    }

    /// Integrate the lifted linear ODE with RK4 at the same sampling period as
    /// the truth pipeline, the input held constant over each step.
    pub fn predict(&self, x0: &DVector<T>, u_seq: &[DVector<T>], ts: T) -> Result<CarlemanPrediction<T>> {
        let mut z = self.lift(x0)?;
        let limit = T::from_f64_lossy(SATURATION_LIMIT);
        let mut saturated = false;
        let half = T::from_f64_lossy(0.5);
        let two = T::from_f64_lossy(2.0);
        let sixth = T::one() / T::from_f64_lossy(6.0);
        let take = |z: &DVector<T>| DVector::from_fn(self.state_dim, |i, _| z[i]);
        let mut states = Vec::with_capacity(u_seq.len() + 1);
        states.push(take(&z));
        for u in u_seq {
            if u.len() != 1 {
                return Err(Error::DimensionMismatch("Carleman predictor expects a scalar input".into()));
            }
            let rhs = |z: &DVector<T>| {
                let mut out = &self.b * u[0];
                out.gemv(T::one(), &self.generator, z, T::one());
                out
            };
            let k1 = rhs(&z);
            let k2 = rhs(&(&z + &k1 * (half * ts)));
            let k3 = rhs(&(&z + &k2 * (half * ts)));
            let k4 = rhs(&(&z + &k3 * ts));
            z += (k1 + k2 * two + k3 * two + k4) * (ts * sixth);
            for v in z.iter_mut() {
                if !v.is_finite_scalar() {
                    *v = limit;
                    saturated = true;
                } else if v.abs() > limit {
                    *v = if *v > T::zero() { limit } else { -limit };
                    saturated = true;
                }
            }
            states.push(take(&z));
        }
        Ok(CarlemanPrediction { states, saturated })
    }
}

/// Relative root mean squared error in percent:
/// 100 · sqrt(Σ_k ‖x̂_k − x_k‖²) / sqrt(Σ_k ‖x_k‖²).
pub fn rmse_percent<T: Scalar>(predicted: &[DVector<T>], truth: &[DVector<T>]) -> Result<T> {
    if predicted.len() != truth.len() {
        return Err(Error::DimensionMismatch("trajectories differ in length".into()));
    }
    let mut num = T::zero();
    let mut den = T::zero();
    for (p, t) in predicted.iter().zip(truth) {
        if p.len() != t.len() {
            return Err(Error::DimensionMismatch("trajectory states differ in length".into()));
        }
        num += (p - t).norm_squared();
        den += t.norm_squared();
    }
    if den == T::zero() {
        return Err(Error::InvalidArgument("RMSE undefined for an all-zero truth trajectory".into()));
    }
    Ok(T::from_f64_lossy(100.0) * (num / den).sqrt())
}

/// Input signal used for prediction trials.
#[derive(Debug, Clone, PartialEq)]
pub enum Forcing<T: Scalar> {
    /// ±amplitude square wave: +amplitude while t mod period < period/2.
    SquareWave { amplitude: T, period: T },
    /// Pseudo-random binary: each step draws ±amplitude per channel.
    Binary { amplitude: T },
    /// Uniform per-step draw from [lo, hi] per channel.
    Uniform { lo: T, hi: T },
    Zero,
}

impl<T: Scalar> Forcing<T> {
    /// Generate an input sequence; random kinds consume the trial generator.
    pub fn sequence(&self, m: usize, steps: usize, ts: T, rng: &mut ChaCha8Rng) -> Vec<DVector<T>> {
        use rand::Rng;
        (0..steps)
            .map(|k| match self {
                Forcing::SquareWave { amplitude, period } => {
                    let t = T::from_f64_lossy(k as f64) * ts;
                    let phase = (t / *period).fract();
                    let sign = if phase < T::from_f64_lossy(0.5) { T::one() } else { -T::one() };
                    DVector::from_element(m, *amplitude * sign)
                }
                Forcing::Binary { amplitude } => DVector::from_fn(m, |_, _| {
                    if rng.random::<bool>() {
                        *amplitude
                    } else {
                        -*amplitude
                    }
                }),
                Forcing::Uniform { lo, hi } => DVector::from_fn(m, |_, _| {
                    *lo + (*hi - *lo) * T::from_f64_lossy(rng.random::<f64>())
                }),
                Forcing::Zero => DVector::zeros(m),
            })
            .collect()
    }
}

/// A predictor entered in a comparison.
pub enum PredictorSpec<'a, T: Scalar> {
    /// Lifted linear predictor; delay-embedded when the trial setup carries a
    /// delay configuration.
    Lifted { name: &'a str, model: &'a LiftedModel<T> },
    /// Local linearization of the discrete dynamics at the origin.
    LocalLinAtOrigin { name: &'a str },
    /// Local linearization at each trial's initial condition.
    LocalLinAtInitial { name: &'a str },
    Carleman { name: &'a str, model: &'a CarlemanModel<T> },
    /// The truth simulator itself; predicts exactly (for self-comparisons).
    TruthSelf { name: &'a str },
}

impl<T: Scalar> PredictorSpec<'_, T> {
    fn name(&self) -> &str {
        match self {
            PredictorSpec::Lifted { name, .. }
            | PredictorSpec::LocalLinAtOrigin { name }
            | PredictorSpec::LocalLinAtInitial { name }
            | PredictorSpec::Carleman { name, .. }
            | PredictorSpec::TruthSelf { name } => name,
        }
    }
}

/// Delay embedding applied to the measured outputs before lifting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DelayConfig {
    pub n_delays: usize,
}

/// Trial layout of a prediction comparison.
pub struct ComparisonSetup<'a, T: Scalar, S: OdeSystem<T> + ?Sized> {
    pub system: &'a S,
    pub ts: T,
    pub horizon_steps: usize,
    pub n_trials: usize,
    pub forcing: Forcing<T>,
    pub seed: u64,
    pub delay: Option<DelayConfig>,
}

/// One (predictor, trial) outcome; failed trials carry the error text.
#[derive(Debug, Clone)]
pub struct TrialOutcome<T: Scalar> {
    pub predictor: String,
    pub trial: usize,
    pub rmse_percent: Option<T>,
    pub saturated: bool,
    pub error: Option<String>,
}

/// All trial outcomes of a comparison plus per-predictor means.
#[derive(Debug, Clone)]
pub struct ComparisonResult<T: Scalar> {
    pub rows: Vec<TrialOutcome<T>>,
    pub predictors: Vec<String>,
}

impl<T: Scalar> ComparisonResult<T> {
    /// Mean RMSE over the successful trials of one predictor.
    pub fn mean(&self, predictor: &str) -> Option<T> {
        let vals: Vec<T> = self
            .rows
            .iter()
            .filter(|r| r.predictor == predictor)
            .filter_map(|r| r.rmse_percent)
            .collect();
        if vals.is_empty() {
            return None;
        }
        let sum = vals.iter().fold(T::zero(), |a, &v| a + v);
        Some(sum / T::from_f64_lossy(vals.len() as f64))
    }

    pub fn means(&self) -> Vec<(String, T)> {
        self.predictors
            .iter()
            .filter_map(|p| self.mean(p).map(|m| (p.clone(), m)))
            .collect()
    }

    pub fn any_saturated(&self, predictor: &str) -> bool {
        self.rows.iter().any(|r| r.predictor == predictor && r.saturated)
    }

    /// Per-trial CSV: `predictor,trial,rmse_percent`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("predictor,trial,rmse_percent\n");
        for r in &self.rows {
            match &r.rmse_percent {
                Some(v) => out.push_str(&format!("{},{},{}\n", r.predictor, r.trial, v)),
                None => out.push_str(&format!(
                    "{},{},error:{}\n",
                    r.predictor,
                    r.trial,
                    r.error.as_deref().unwrap_or("unknown")
                )),
            }
        }
        out
    }

    /// Summary CSV: `predictor,mean_rmse_percent`.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("predictor,mean_rmse_percent\n");
        for (p, m) in self.means() {
            out.push_str(&format!("{p},{m}\n"));
        }
        out
    }
}

/// Run seeded prediction trials. Trial i draws from the stream seeded with
/// `seed + i` (initial state first, then any embedding prehistory, then the
/// forcing), so the result set is independent of execution order.
pub fn compare_predictors<T: Scalar, S: OdeSystem<T> + ?Sized>(
    setup: &ComparisonSetup<'_, T, S>,
    specs: &[PredictorSpec<'_, T>],
) -> Result<ComparisonResult<T>> {
    if setup.n_trials == 0 || setup.horizon_steps == 0 {
        return Err(Error::InvalidArgument("comparison needs at least one trial and one step".into()));
    }
    let sys = setup.system;
    let m = sys.input_dim();
    let n_d = setup.delay.map_or(0, |d| d.n_delays);
    let mut rows = Vec::with_capacity(setup.n_trials * specs.len());

    for trial in 0..setup.n_trials {
        let mut rng = crate::seeded_rng(setup.seed.wrapping_add(trial as u64));
        let x_init = crate::dynamics::sample_uniform(&mut rng, &sys.sample_box());

        // prehistory for the delay embedding: step the plant n_d times
        let pre_inputs = setup.forcing.sequence(m, n_d, setup.ts, &mut rng);
        let mut pre_states = vec![x_init];
        let mut pre_failed = None;
        for u in &pre_inputs {
            match rk4_step(sys, pre_states.last().expect("nonempty"), u, setup.ts) {
                Ok(x) => pre_states.push(x),
                Err(e) => {
                    pre_failed = Some(e.to_string());
                    break;
                }
            }
        }
        let u_seq = setup.forcing.sequence(m, setup.horizon_steps, setup.ts, &mut rng);

        // truth trajectory from the post-history state
        let mut truth_states = vec![pre_states.last().expect("nonempty").clone()];
        let mut truth_failed = pre_failed;
        if truth_failed.is_none() {
            for u in &u_seq {
                match rk4_step(sys, truth_states.last().expect("nonempty"), u, setup.ts) {
                    Ok(x) => truth_states.push(x),
                    Err(e) => {
                        truth_failed = Some(e.to_string());
                        break;
                    }
                }
            }
        }
        if let Some(err) = truth_failed {
            for spec in specs {
                rows.push(TrialOutcome {
                    predictor: spec.name().to_string(),
                    trial,
                    rmse_percent: None,
                    saturated: false,
                    error: Some(format!("truth simulation failed: {err}")),
                });
            }
            continue;
        }
        let truth_outputs: Vec<DVector<T>> =
            truth_states.iter().map(|x| sys.output(x.as_view())).collect();
        let x0 = truth_states[0].clone();

        // ζ_0 from the n_d+1 most recent outputs and n_d inputs, newest first
        let zeta0 = if n_d > 0 {
            let ys: Vec<DVector<T>> =
                (0..=n_d).map(|a| sys.output(pre_states[n_d - a].as_view())).collect();
            let us: Vec<DVector<T>> = (0..n_d).map(|a| pre_inputs[n_d - 1 - a].clone()).collect();
            Some(crate::dictionary::make_delay_vector(&ys, &us)?.into_values())
        } else {
            None
        };

        for spec in specs {
            let name = spec.name().to_string();
            let mut saturated = false;
            let predicted: Result<Vec<DVector<T>>> = match spec {
                PredictorSpec::TruthSelf { .. } => Ok(truth_outputs.clone()),
                PredictorSpec::Lifted { model, .. } => match &zeta0 {
                    Some(zeta) => {
                        let z0 = model.dictionary.eval(zeta)?;
                        rollout_lifted_from_z(model, &z0, &u_seq)
                    }
                    None => rollout_lifted(model, &x0, &u_seq),
                },
                PredictorSpec::LocalLinAtOrigin { .. } => {
                    let origin = DVector::zeros(sys.state_dim());
                    linearize_discrete(sys, &origin, setup.ts).map(|lin| {
                        lin.predict(&x0, &u_seq).iter().map(|x| sys.output(x.as_view())).collect()
                    })
                }
                PredictorSpec::LocalLinAtInitial { .. } => {
                    linearize_discrete(sys, &x0, setup.ts).map(|lin| {
                        lin.predict(&x0, &u_seq).iter().map(|x| sys.output(x.as_view())).collect()
                    })
                }
                PredictorSpec::Carleman { model, .. } => model.predict(&x0, &u_seq, setup.ts).map(|p| {
                    saturated = p.saturated;
                    p.states.iter().map(|x| sys.output(x.as_view())).collect()
                }),
            };
            let outcome = match predicted {
                Ok(outputs) => {
                    // comparators can overflow; clamp before scoring
                    let clamped: Vec<DVector<T>> = outputs
                        .into_iter()
                        .map(|mut y| {
                            let limit = T::from_f64_lossy(SATURATION_LIMIT);
                            for v in y.iter_mut() {
                                if !v.is_finite_scalar() {
                                    *v = limit;
                                    saturated = true;
                                } else if v.abs() > limit {
                                    *v = if *v > T::zero() { limit } else { -limit };
                                    saturated = true;
                                }
                            }
                            y
                        })
                        .collect();
                    match rmse_percent(&clamped, &truth_outputs) {
                        Ok(r) => TrialOutcome {
                            predictor: name,
                            trial,
                            rmse_percent: Some(r),
                            saturated,
                            error: None,
                        },
                        Err(e) => TrialOutcome {
                            predictor: name,
                            trial,
                            rmse_percent: None,
                            saturated,
                            error: Some(e.to_string()),
                        },
                    }
                }
                Err(e) => TrialOutcome {
                    predictor: name,
                    trial,
                    rmse_percent: None,
                    saturated: false,
                    error: Some(e.to_string()),
                },
            };
            rows.push(outcome);
        }
    }
    Ok(ComparisonResult {
        rows,
        predictors: specs.iter().map(|s| s.name().to_string()).collect(),
    })
}
