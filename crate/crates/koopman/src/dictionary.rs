//! Lifting dictionaries: ordered stacks of scalar basis functions ψᵢ : ℝⁿ → ℝ
//! that map a state (or a delay-embedded output vector) into the lifted space,
//! plus constructors for the dictionaries used by the benchmark systems.

use nalgebra::{DMatrix, DVector, DVectorView};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result, Scalar};

/// A single lifting function.
#[derive(Debug, Clone, PartialEq)]
pub enum BasisFn<T: Scalar> {
    /// x ↦ x_i
    Coordinate(usize),
    /// x ↦ r² log r with r = ‖x − c‖, extended by its limit 0 at the center.
    ThinPlateRbf { center: DVector<T> },
    /// x ↦ exp(−r² / (2 width²)) with r = ‖x − c‖.
    GaussRbf { center: DVector<T>, width: T },
    /// x ↦ ∏ᵢ x_i^{e_i}
    Monomial { exponents: Vec<u32> },
    /// x ↦ x_i²
    ElementwiseSquare(usize),
    /// x ↦ x_i · x_{(i + shift) mod n}
    ShiftedProduct { index: usize, shift: usize },
    /// x ↦ 1
    Constant,
}

impl<T: Scalar> BasisFn<T> {
    fn validate(&self, input_dim: usize) -> Result<()> {
        let bad_index = |i: usize| {
            Err(Error::DimensionMismatch(format!(
                "basis function index {i} out of range for input dimension {input_dim}"
            )))
        };
        match self {
            BasisFn::Coordinate(i) | BasisFn::ElementwiseSquare(i) => {
                if *i >= input_dim {
                    return bad_index(*i);
                }
            }
            BasisFn::ShiftedProduct { index, .. } => {
                if *index >= input_dim {
                    return bad_index(*index);
                }
            }
            BasisFn::ThinPlateRbf { center } | BasisFn::GaussRbf { center, .. } => {
                if center.len() != input_dim {
                    return Err(Error::DimensionMismatch(format!(
                        "RBF center has length {}, expected {input_dim}",
                        center.len()
                    )));
                }
            }
            BasisFn::Monomial { exponents } => {
                if exponents.len() != input_dim {
                    return Err(Error::DimensionMismatch(format!(
                        "monomial multi-index has length {}, expected {input_dim}",
                        exponents.len()
                    )));
                }
            }
            BasisFn::Constant => {}
        }
        if let BasisFn::GaussRbf { width, .. } = self {
            if *width <= T::zero() {
                return Err(Error::InvalidArgument("Gaussian RBF width must be positive".into()));
            }
        }
        Ok(())
    }

    /// Evaluate the function at `x`. Dimensions are the caller's responsibility.
    #[inline]
    pub fn eval(&self, x: DVectorView<'_, T>) -> T {
        match self {
            BasisFn::Coordinate(i) => x[*i],
            BasisFn::ThinPlateRbf { center } => {
                let r2 = squared_distance(x, center);
                if r2 == T::zero() {
                    T::zero()
                } else {
                    // r² log r = ½ r² log r²
                    T::from_f64_lossy(0.5) * r2 * r2.ln()
                }
            }
            BasisFn::GaussRbf { center, width } => {
                let r2 = squared_distance(x, center);
                (-r2 / (T::from_f64_lossy(2.0) * *width * *width)).exp()
            }
            BasisFn::Monomial { exponents } => {
                let mut p = T::one();
                for (xi, &e) in x.iter().zip(exponents.iter()) {
                    if e > 0 {
                        p *= xi.powi(e as i32);
                    }
                }
                p
            }
            BasisFn::ElementwiseSquare(i) => x[*i] * x[*i],
            BasisFn::ShiftedProduct { index, shift } => {
                let n = x.len();
                x[*index] * x[(*index + *shift) % n]
            }
            BasisFn::Constant => T::one(),
        }
    }
}

#[inline]
fn squared_distance<T: Scalar>(x: DVectorView<'_, T>, center: &DVector<T>) -> T {
    let mut r2 = T::zero();
    for (xi, ci) in x.iter().zip(center.iter()) {
        let d = *xi - *ci;
        r2 += d * d;
    }
    r2
}

/// An ordered, immutable list of lifting functions ψ₁…ψ_N over ℝⁿ.
///
/// When the first n functions are the coordinate maps x ↦ xᵢ (in order), the
/// dictionary "includes the state prefix" and the output projection of a
/// fitted model is the exact selection `C = [I 0]` instead of a regression.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary<T: Scalar> {
    input_dim: usize,
    functions: Vec<BasisFn<T>>,
    includes_state_prefix: bool,
}

impl<T: Scalar> Dictionary<T> {
    pub fn new(input_dim: usize, functions: Vec<BasisFn<T>>) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::InvalidArgument("dictionary input dimension must be positive".into()));
        }
        if functions.is_empty() {
            return Err(Error::InvalidArgument("dictionary needs at least one basis function".into()));
        }
        for f in &functions {
            f.validate(input_dim)?;
        }
        let includes_state_prefix = functions.len() >= input_dim
            && (0..input_dim).all(|i| matches!(functions[i], BasisFn::Coordinate(j) if j == i));
        Ok(Self { input_dim, functions, includes_state_prefix })
    }

    /// Dictionary made of the n coordinate maps only (lifting is the identity).
    pub fn identity(input_dim: usize) -> Result<Self> {
        Self::new(input_dim, (0..input_dim).map(BasisFn::Coordinate).collect())
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// Lifted dimension N.
    pub fn output_dim(&self) -> usize {
        self.functions.len()
    }

    pub fn has_state_prefix(&self) -> bool {
        self.includes_state_prefix
    }

    pub fn functions(&self) -> &[BasisFn<T>] {
        &self.functions
    }

    /// Evaluate the full stack at `x`.
    pub fn eval(&self, x: &DVector<T>) -> Result<DVector<T>> {
        if x.len() != self.input_dim {
            return Err(Error::DimensionMismatch(format!(
                "dictionary expects input of length {}, got {}",
                self.input_dim,
                x.len()
            )));
        }
        if !x.iter().all(|v| v.is_finite_scalar()) {
            return Err(Error::NonFinite("dictionary evaluated at a non-finite point".into()));
        }
        let mut out = DVector::zeros(self.output_dim());
        self.eval_into(x.as_view(), out.as_mut_slice());
        Ok(out)
    }

    /// Unchecked evaluation into a preallocated slice; hot path for lifting
    /// whole data sets column by column.
    #[inline]
    pub fn eval_into(&self, x: DVectorView<'_, T>, out: &mut [T]) {
        debug_assert_eq!(x.len(), self.input_dim);
        debug_assert_eq!(out.len(), self.output_dim());
        for (k, f) in self.functions.iter().enumerate() {
            out[k] = f.eval(x);
        }
    }

    /// Lift every column of `xs` into a fresh N×K matrix.
    pub fn eval_columns(&self, xs: &DMatrix<T>) -> Result<DMatrix<T>> {
        if xs.nrows() != self.input_dim {
            return Err(Error::DimensionMismatch(format!(
                "dictionary expects columns of length {}, got {}",
                self.input_dim,
                xs.nrows()
            )));
        }
        let n_out = self.output_dim();
        let mut out = DMatrix::zeros(n_out, xs.ncols());
        let slice = out.as_mut_slice();
        for j in 0..xs.ncols() {
            self.eval_into(xs.column(j), &mut slice[j * n_out..(j + 1) * n_out]);
        }
        Ok(out)
    }
}

/// Radial basis function family for [`make_rbf_dictionary`].
#[derive(Debug, Clone, PartialEq)]
pub enum RbfKind<T: Scalar> {
    ThinPlate,
    Gauss { width: T },
}

/// Build the dictionary [x₁, …, xₙ, RBF₁, …, RBF_count] with centers drawn
/// uniformly from `sample_box` using a ChaCha8 stream keyed by `seed`.
///
/// The generator and the draw order (center by center, coordinate by
/// coordinate) are pinned so that the same seed reproduces the same centers
/// bit for bit, and therefore the same model files.
pub fn make_rbf_dictionary<T: Scalar>(
    input_dim: usize,
    count: usize,
    sample_box: &[(T, T)],
    seed: u64,
    kind: &RbfKind<T>,
) -> Result<Dictionary<T>> {
    if sample_box.is_empty() {
        return Err(Error::InvalidArgument("RBF sampling box is empty".into()));
    }
    if sample_box.len() != input_dim {
        return Err(Error::DimensionMismatch(format!(
            "sampling box has {} intervals, expected {input_dim}",
            sample_box.len()
        )));
    }
    for &(lo, hi) in sample_box {
        if !(lo <= hi) {
            return Err(Error::InvalidArgument("RBF sampling box has an empty interval".into()));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut functions: Vec<BasisFn<T>> = (0..input_dim).map(BasisFn::Coordinate).collect();
    for _ in 0..count {
        let center = DVector::from_fn(input_dim, |d, _| {
            let t = T::from_f64_lossy(rng.random::<f64>());
            let (lo, hi) = sample_box[d];
            lo + (hi - lo) * t
        });
        functions.push(match kind {
            RbfKind::ThinPlate => BasisFn::ThinPlateRbf { center },
            RbfKind::Gauss { width } => BasisFn::GaussRbf { center, width: *width },
        });
    }
    Dictionary::new(input_dim, functions)
}

/// Dictionary for the spectral KdV state: the state itself, its elementwise
/// square, the elementwise product with its periodic shift by one grid point,
/// and the constant function. N = 3n + 1.
pub fn make_kdv_dictionary<T: Scalar>(n: usize) -> Result<Dictionary<T>> {
    if n < 2 {
        return Err(Error::InvalidArgument("KdV dictionary needs at least two grid points".into()));
    }
    let mut functions: Vec<BasisFn<T>> = (0..n).map(BasisFn::Coordinate).collect();
    functions.extend((0..n).map(BasisFn::ElementwiseSquare));
    functions.extend((0..n).map(|i| BasisFn::ShiftedProduct { index: i, shift: 1 }));
    functions.push(BasisFn::Constant);
    Dictionary::new(n, functions)
}

/// A delay-embedded input-output vector
/// ζ = [y_{n_d}, u_{n_d−1}, y_{n_d−1}, …, u_0, y_0]
/// with the most recent output in the leading block.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayVector<T: Scalar> {
    n_delays: usize,
    output_dim: usize,
    input_dim: usize,
    values: DVector<T>,
}

impl<T: Scalar> DelayVector<T> {
    pub fn n_delays(&self) -> usize {
        self.n_delays
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// Total embedded length (n_d+1)·n_h + n_d·m.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn values(&self) -> &DVector<T> {
        &self.values
    }

    pub fn into_values(self) -> DVector<T> {
        self.values
    }

    /// Output block by age: 0 is the newest measurement y_{n_d}.
    pub fn output(&self, age: usize) -> DVectorView<'_, T> {
        assert!(age <= self.n_delays, "output age out of range");
        let off = age * (self.output_dim + self.input_dim);
        self.values.rows(off, self.output_dim)
    }

    /// Input block by age: 0 is the newest input u_{n_d−1}.
    pub fn input(&self, age: usize) -> DVectorView<'_, T> {
        assert!(age < self.n_delays, "input age out of range");
        let off = age * (self.output_dim + self.input_dim) + self.output_dim;
        self.values.rows(off, self.input_dim)
    }
}

/// Assemble a delay vector from histories ordered newest first:
/// `y_history = [y_k, y_{k−1}, …, y_{k−n_d}]`, `u_history = [u_{k−1}, …, u_{k−n_d}]`.
pub fn make_delay_vector<T: Scalar>(
    y_history: &[DVector<T>],
    u_history: &[DVector<T>],
) -> Result<DelayVector<T>> {
    if y_history.is_empty() {
        return Err(Error::InvalidArgument("delay vector needs at least one output sample".into()));
    }
    let n_delays = u_history.len();
    if y_history.len() != n_delays + 1 {
        return Err(Error::InvalidArgument(format!(
            "delay vector with {} inputs needs {} outputs, got {}",
            n_delays,
            n_delays + 1,
            y_history.len()
        )));
    }
    let output_dim = y_history[0].len();
    if y_history.iter().any(|y| y.len() != output_dim) {
        return Err(Error::DimensionMismatch("output history entries differ in length".into()));
    }
    let input_dim = u_history.first().map_or(0, |u| u.len());
    if u_history.iter().any(|u| u.len() != input_dim) {
        return Err(Error::DimensionMismatch("input history entries differ in length".into()));
    }
    let total = (n_delays + 1) * output_dim + n_delays * input_dim;
    let mut values = DVector::zeros(total);
    let mut off = 0;
    for age in 0..n_delays {
        values.rows_mut(off, output_dim).copy_from(&y_history[age]);
        off += output_dim;
        values.rows_mut(off, input_dim).copy_from(&u_history[age]);
        off += input_dim;
    }
    values.rows_mut(off, output_dim).copy_from(&y_history[n_delays]);
    Ok(DelayVector { n_delays, output_dim, input_dim, values })
}

/// Delay-embed one trajectory of outputs y_0…y_S and inputs u_0…u_{S−1} into
/// sample columns (ζ_k, ζ_k⁺, u_k) for k = n_d … S−1.
pub fn delay_embed_trajectory<T: Scalar>(
    outputs: &[DVector<T>],
    inputs: &[DVector<T>],
    n_delays: usize,
) -> Result<(DMatrix<T>, DMatrix<T>, DMatrix<T>)> {
    if outputs.len() != inputs.len() + 1 {
        return Err(Error::DimensionMismatch(format!(
            "trajectory with {} inputs needs {} outputs, got {}",
            inputs.len(),
            inputs.len() + 1,
            outputs.len()
        )));
    }
    let steps = inputs.len();
    if steps < n_delays + 1 {
        return Err(Error::InvalidArgument(format!(
            "trajectory of {steps} steps is too short for {n_delays} delays"
        )));
    }
    let n_h = outputs[0].len();
    let m = inputs[0].len();
    let embedded = (n_delays + 1) * n_h + n_delays * m;
    let k_count = steps - n_delays;
    let mut z = DMatrix::zeros(embedded, k_count);
    let mut z_plus = DMatrix::zeros(embedded, k_count);
    let mut u = DMatrix::zeros(m, k_count);
    for (col, k) in (n_delays..steps).enumerate() {
        let hist = |anchor: usize| -> Result<DelayVector<T>> {
            let ys: Vec<DVector<T>> = (0..=n_delays).map(|a| outputs[anchor - a].clone()).collect();
            let us: Vec<DVector<T>> = (1..=n_delays).map(|a| inputs[anchor - a].clone()).collect();
            make_delay_vector(&ys, &us)
        };
        z.column_mut(col).copy_from(hist(k)?.values());
        z_plus.column_mut(col).copy_from(hist(k + 1)?.values());
        u.column_mut(col).copy_from(&inputs[k]);
    }
    Ok((z, z_plus, u))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn v(vals: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(vals)
    }

    #[test]
    fn thin_plate_is_zero_at_center_and_matches_hand_values() {
        let f = BasisFn::ThinPlateRbf { center: v(&[0.3, -0.7]) };
        assert_eq!(f.eval(v(&[0.3, -0.7]).as_view()), 0.0);

        let origin = BasisFn::ThinPlateRbf { center: v(&[0.0, 0.0]) };
        // r = 1 → 1²·log 1 = 0
        assert_eq!(origin.eval(v(&[1.0, 0.0]).as_view()), 0.0);
        // r = e → e²·log e = e²
        let e = std::f64::consts::E;
        assert_relative_eq!(origin.eval(v(&[e, 0.0]).as_view()), e * e, max_relative = 1e-14);
    }

    #[test]
    fn thin_plate_is_continuous_at_the_center() {
        let f = BasisFn::ThinPlateRbf { center: v(&[0.1, 0.2]) };
        for &eps in &[1e-3, 1e-5, 1e-8] {
            let val = f.eval(v(&[0.1 + eps, 0.2]).as_view());
            assert!(val.abs() <= eps, "|ψ(c+εe)| = {} > ε = {}", val.abs(), eps);
        }
    }

    #[test]
    fn coordinate_picks_components() {
        let dict = Dictionary::new(2, vec![BasisFn::Coordinate(1)]).unwrap();
        let out = dict.eval(&v(&[0.5, -0.2])).unwrap();
        assert_eq!(out[0], -0.2);
        // the spec example: coordinate "1" in 1-based notation is index 0 here
        let first = BasisFn::Coordinate(0);
        assert_eq!(first.eval(v(&[0.5, -0.2]).as_view()), 0.5);
    }

    #[test]
    fn eval_rejects_bad_inputs() {
        let dict = Dictionary::identity(2).unwrap();
        assert!(dict.eval(&v(&[1.0])).is_err());
        assert!(dict.eval(&v(&[f64::NAN, 0.0])).is_err());
    }

    #[test]
    fn state_prefix_is_exact() {
        let dict = make_rbf_dictionary(3, 7, &[(-1.0, 1.0); 3], 9, &RbfKind::ThinPlate).unwrap();
        assert!(dict.has_state_prefix());
        let x = v(&[0.25, -0.5, 0.75]);
        let out = dict.eval(&x).unwrap();
        for i in 0..3 {
            assert_eq!(out[i], x[i]);
        }
    }

    #[test]
    fn rbf_dictionary_counts_and_determinism() {
        let b = [(-1.0, 1.0), (-1.0, 1.0)];
        let d = make_rbf_dictionary(2, 100, &b, 0, &RbfKind::ThinPlate).unwrap();
        assert_eq!(d.output_dim(), 102);

        let empty = make_rbf_dictionary(2, 0, &b, 0, &RbfKind::ThinPlate).unwrap();
        assert_eq!(empty.output_dim(), 2);

        let d2 = make_rbf_dictionary(2, 100, &b, 0, &RbfKind::ThinPlate).unwrap();
        assert_eq!(d.functions(), d2.functions());

        let d3 = make_rbf_dictionary(2, 100, &b, 1, &RbfKind::ThinPlate).unwrap();
        assert_ne!(d.functions(), d3.functions());
    }

    #[test]
    fn seeded_dictionaries_evaluate_identically() {
        let b = [(-1.0, 1.0), (-1.0, 1.0)];
        let d1 = make_rbf_dictionary(2, 20, &b, 42, &RbfKind::ThinPlate).unwrap();
        let d2 = make_rbf_dictionary(2, 20, &b, 42, &RbfKind::ThinPlate).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let x = DVector::from_fn(2, |_, _| rng.random::<f64>() * 4.0 - 2.0);
            assert_eq!(d1.eval(&x).unwrap(), d2.eval(&x).unwrap());
        }
    }

    #[test]
    fn rbf_dictionary_rejects_bad_boxes() {
        assert!(make_rbf_dictionary::<f64>(2, 5, &[], 0, &RbfKind::ThinPlate).is_err());
        assert!(make_rbf_dictionary(2, 5, &[(1.0, -1.0), (0.0, 1.0)], 0, &RbfKind::ThinPlate).is_err());
    }

    #[test]
    fn kdv_dictionary_layout() {
        let d = make_kdv_dictionary::<f64>(128).unwrap();
        assert_eq!(d.output_dim(), 385);
        assert!(d.has_state_prefix());

        let small = make_kdv_dictionary::<f64>(3).unwrap();
        let out = small.eval(&v(&[1.0, 2.0, 3.0])).unwrap();
        // state, squares, shifted products (1·2, 2·3, 3·1), constant
        assert_eq!(out.as_slice(), &[1.0, 2.0, 3.0, 1.0, 4.0, 9.0, 2.0, 6.0, 3.0, 1.0]);
        assert_eq!(out[9], 1.0);
    }

    #[test]
    fn gauss_rbf_peaks_at_center() {
        let f = BasisFn::GaussRbf { center: v(&[0.0, 0.0]), width: 0.5 };
        assert_eq!(f.eval(v(&[0.0, 0.0]).as_view()), 1.0);
        let away = f.eval(v(&[0.5, 0.0]).as_view());
        assert_relative_eq!(away, (-0.5f64).exp(), max_relative = 1e-14);
    }

    #[test]
    fn monomial_eval() {
        let f = BasisFn::Monomial { exponents: vec![2, 0, 1] };
        assert_eq!(f.eval(v(&[2.0, 5.0, 3.0]).as_view()), 12.0);
    }

    #[test]
    fn delay_vector_layout_and_lengths() {
        // n_d = 0: ζ = y₀
        let z = make_delay_vector(&[v(&[1.5, 2.5])], &[]).unwrap();
        assert_eq!(z.len(), 2);
        assert_eq!(z.values().as_slice(), &[1.5, 2.5]);

        // n_d = 1, n_h = 1, m = 1: y = [2, 1] (newest first), u = [5] → ζ = (2, 5, 1)
        let z = make_delay_vector(&[v(&[2.0]), v(&[1.0])], &[v(&[5.0])]).unwrap();
        assert_eq!(z.len(), 3);
        assert_eq!(z.values().as_slice(), &[2.0, 5.0, 1.0]);

        assert!(make_delay_vector(&[v(&[1.0])], &[v(&[0.0]), v(&[0.0])]).is_err());
    }

    #[test]
    fn delay_embedding_matches_hand_layout() {
        // scalar trajectory y = [10, 11, 12, 13], u = [0, 1, 2]
        let ys: Vec<_> = [10.0, 11.0, 12.0, 13.0].iter().map(|&a| v(&[a])).collect();
        let us: Vec<_> = [0.0, 1.0, 2.0].iter().map(|&a| v(&[a])).collect();
        let (z, zp, u) = delay_embed_trajectory(&ys, &us, 1).unwrap();
        assert_eq!(z.ncols(), 2);
        // k = 1: ζ = [y₁, u₀, y₀], ζ⁺ = [y₂, u₁, y₁], input u₁
        assert_eq!(z.column(0).as_slice(), &[11.0, 0.0, 10.0]);
        assert_eq!(zp.column(0).as_slice(), &[12.0, 1.0, 11.0]);
        assert_eq!(u.column(0).as_slice(), &[1.0]);
        // k = 2
        assert_eq!(z.column(1).as_slice(), &[12.0, 1.0, 11.0]);
        assert_eq!(zp.column(1).as_slice(), &[13.0, 2.0, 12.0]);
        assert_eq!(u.column(1).as_slice(), &[2.0]);
    }

    proptest! {
        /// Round-tripping histories through a delay vector recovers them exactly.
        #[test]
        fn delay_vector_round_trip(
            n_d in 0usize..4,
            n_h in 1usize..4,
            m in 1usize..3,
            raw in proptest::collection::vec(-1e6f64..1e6, 64),
        ) {
            let mut it = raw.into_iter().cycle();
            let ys: Vec<DVector<f64>> =
                (0..=n_d).map(|_| DVector::from_fn(n_h, |_, _| it.next().unwrap())).collect();
            let us: Vec<DVector<f64>> =
                (0..n_d).map(|_| DVector::from_fn(m, |_, _| it.next().unwrap())).collect();
            let z = make_delay_vector(&ys, &us).unwrap();
            prop_assert_eq!(z.len(), (n_d + 1) * n_h + n_d * m);
            for age in 0..=n_d {
                prop_assert_eq!(z.output(age).clone_owned(), ys[age].clone());
            }
            for age in 0..n_d {
                prop_assert_eq!(z.input(age).clone_owned(), us[age].clone());
            }
        }
    }
}
