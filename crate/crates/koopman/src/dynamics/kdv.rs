//! Split-step Fourier integrator for the forced Korteweg-de Vries equation
//! y_t + y y_x + y_xxx = Σᵢ uᵢ(t) vᵢ(x) on the periodic domain [−π, π).
//!
//! One step is Strang splitting: half a step of the nonlinear advection
//! y_t = −y y_x + forcing integrated with RK4 (spectral derivative, 2/3-rule
//! dealiasing of the quadratic product), the full dispersion step
//! y_t = −y_xxx done exactly in Fourier space by the unit-modulus multiplier
//! exp(i k³ Δt), then the second nonlinear half step.

use std::sync::Arc;

use nalgebra::DVector;
use rand::Rng;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftNum, FftPlanner};

use crate::edmd::DataSet;
use crate::{Error, Result, Scalar};

/// Grid values of y at the 128 (or n) uniform points of [−π, π).
pub type KdvState<T> = DVector<T>;

pub struct KdvSolver<T: Scalar + FftNum> {
    n: usize,
    dt: T,
    grid: Vec<T>,
    wavenumbers: Vec<f64>,
    dealias: Vec<bool>,
    linear_phase: Vec<Complex<T>>,
    profiles: [DVector<T>; 3],
    fft: Arc<dyn Fft<T>>,
    ifft: Arc<dyn Fft<T>>,
}

impl<T: Scalar + FftNum> KdvSolver<T> {
    /// `n` grid points on [−π, π) and time step `dt` (0.01 in the benchmark).
    pub fn new(n: usize, dt: T) -> Result<Self> {
        if n < 8 || n % 2 != 0 {
            return Err(Error::InvalidArgument("KdV grid size must be even and at least 8".into()));
        }
        if dt <= T::zero() {
            return Err(Error::InvalidArgument("KdV time step must be positive".into()));
        }
        let grid: Vec<T> = (0..n)
            .map(|j| T::from_f64_lossy(-std::f64::consts::PI + 2.0 * std::f64::consts::PI * j as f64 / n as f64))
            .collect();
        // integer wavenumbers on a 2π-periodic domain: 0, 1, …, n/2−1, −n/2, …, −1
        let wavenumbers: Vec<f64> =
            (0..n).map(|j| if j < n / 2 { j as f64 } else { j as f64 - n as f64 }).collect();
        let cutoff = n as f64 / 3.0;
        let dealias: Vec<bool> = wavenumbers.iter().map(|k| k.abs() <= cutoff).collect();
        let dt_f = dt.to_f64_lossy();
        let linear_phase: Vec<Complex<T>> = wavenumbers
            .iter()
            .map(|k| {
                let theta = k * k * k * dt_f;
                Complex::new(T::from_f64_lossy(theta.cos()), T::from_f64_lossy(theta.sin()))
            })
            .collect();
        let centers = [-std::f64::consts::FRAC_PI_2, 0.0, std::f64::consts::FRAC_PI_2];
        let profiles = centers.map(|c| {
            DVector::from_fn(n, |j, _| {
                let x = grid[j].to_f64_lossy();
                T::from_f64_lossy((-25.0 * (x - c) * (x - c)).exp())
            })
        });
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(n);
        let ifft = planner.plan_fft_inverse(n);
        Ok(Self { n, dt, grid, wavenumbers, dealias, linear_phase, profiles, fft, ifft })
    }

    pub fn grid_size(&self) -> usize {
        self.n
    }

    pub fn dt(&self) -> T {
        self.dt
    }

    pub fn grid(&self) -> &[T] {
        &self.grid
    }

    /// The three fixed control profiles vᵢ(x) = exp(−25(x−cᵢ)²).
    pub fn control_profiles(&self) -> &[DVector<T>; 3] {
        &self.profiles
    }

    /// The three initial-condition profiles the data campaign mixes.
    pub fn initial_profiles(&self) -> [DVector<T>; 3] {
        let gauss = |c: f64| {
            DVector::from_fn(self.n, |j, _| {
                let x = self.grid[j].to_f64_lossy();
                T::from_f64_lossy((-(x - c) * (x - c)).exp())
            })
        };
        let sin_sq = DVector::from_fn(self.n, |j, _| {
            let x = self.grid[j].to_f64_lossy();
            T::from_f64_lossy(-((x / 2.0).sin().powi(2)))
        });
        [gauss(std::f64::consts::FRAC_PI_2), sin_sq, gauss(-std::f64::consts::FRAC_PI_2)]
    }

    fn to_spectrum(&self, y: &DVector<T>) -> Vec<Complex<T>> {
        let mut buf: Vec<Complex<T>> = y.iter().map(|&v| Complex::new(v, T::zero())).collect();
        self.fft.process(&mut buf);
        buf
    }

    fn from_spectrum(&self, mut buf: Vec<Complex<T>>) -> DVector<T> {
        self.ifft.process(&mut buf);
        let scale = T::one() / T::from_f64_lossy(self.n as f64);
        DVector::from_fn(self.n, |j, _| buf[j].re * scale)
    }

    /// Spectral derivative ∂y/∂x on the grid.
    pub fn spectral_derivative(&self, y: &DVector<T>) -> DVector<T> {
        let mut spec = self.to_spectrum(y);
        for (j, s) in spec.iter_mut().enumerate() {
            let k = T::from_f64_lossy(self.wavenumbers[j]);
            *s = Complex::new(-s.im * k, s.re * k);
        }
        self.from_spectrum(spec)
    }

    /// Exact dispersion substep: multiply each mode by exp(i k³ Δt).
    /// The multiplier has unit modulus, so ‖ŷ‖₂ is preserved exactly.
    pub fn linear_substep(&self, y: &DVector<T>) -> DVector<T> {
        let mut spec = self.to_spectrum(y);
        for (s, phase) in spec.iter_mut().zip(self.linear_phase.iter()) {
            *s *= *phase;
        }
        self.from_spectrum(spec)
    }

    /// −y y_x with the quadratic product dealiased by the 2/3 rule, plus the
    /// control forcing.
    fn nonlinear_rhs(&self, y: &DVector<T>, u: &[T; 3]) -> DVector<T> {
        let y_x = self.spectral_derivative(y);
        let prod = DVector::from_fn(self.n, |j, _| -y[j] * y_x[j]);
        let mut spec = self.to_spectrum(&prod);
        for (j, s) in spec.iter_mut().enumerate() {
            if !self.dealias[j] {
                *s = Complex::new(T::zero(), T::zero());
            }
        }
        let mut rhs = self.from_spectrum(spec);
        for (i, profile) in self.profiles.iter().enumerate() {
            rhs.axpy(u[i], profile, T::one());
        }
        rhs
    }

    fn nonlinear_half_step(&self, y: &DVector<T>, u: &[T; 3]) -> DVector<T> {
        let h = self.dt * T::from_f64_lossy(0.5);
        let half = T::from_f64_lossy(0.5);
        let two = T::from_f64_lossy(2.0);
        let sixth = T::one() / T::from_f64_lossy(6.0);
        let k1 = self.nonlinear_rhs(y, u);
        let k2 = self.nonlinear_rhs(&(y + &k1 * (half * h)), u);
        let k3 = self.nonlinear_rhs(&(y + &k2 * (half * h)), u);
        let k4 = self.nonlinear_rhs(&(y + &k3 * h), u);
        y + (k1 + k2 * two + k3 * two + k4) * (h * sixth)
    }

    /// Advance one split step under the control coefficients `u` (held
    /// constant over the step).
    pub fn step(&self, y: &KdvState<T>, u: &[T; 3]) -> Result<KdvState<T>> {
        if y.len() != self.n {
            return Err(Error::DimensionMismatch(format!(
                "KdV state has {} points, expected {}",
                y.len(),
                self.n
            )));
        }
        let stage = self.nonlinear_half_step(y, u);
        let stage = self.linear_substep(&stage);
        let next = self.nonlinear_half_step(&stage, u);
        if next.iter().all(|v| v.is_finite_scalar()) {
            Ok(next)
        } else {
            Err(Error::Numerical("KdV spectrum blew up".into()))
        }
    }

    /// Spatial mean of the state; the unforced equation conserves it.
    pub fn spatial_mean(&self, y: &DVector<T>) -> T {
        y.sum() / T::from_f64_lossy(self.n as f64)
    }
}

/// Collect a KdV campaign: initial states are random convex combinations of
/// the three fixed profiles, inputs are uniform on [−1, 1]³ per step.
pub fn collect_kdv_data<T: Scalar + FftNum>(
    solver: &KdvSolver<T>,
    n_trajectories: usize,
    steps_per_trajectory: usize,
    seed: u64,
) -> Result<DataSet<T>> {
    if n_trajectories == 0 || steps_per_trajectory == 0 {
        return Err(Error::InvalidArgument("campaign sizes must be positive".into()));
    }
    let n = solver.grid_size();
    let profiles = solver.initial_profiles();
    let mut columns: Vec<(u32, u32, DVector<T>, DVector<T>, [T; 3])> = Vec::new();
    'traj: for t in 0..n_trajectories {
        let mut rng = crate::seeded_rng(seed.wrapping_add(t as u64));
        // convex-combination weights: three uniforms normalized to sum one
        let raw = [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()];
        let total: f64 = raw.iter().sum();
        let mut y = DVector::zeros(n);
        for (w, p) in raw.iter().zip(profiles.iter()) {
            y.axpy(T::from_f64_lossy(w / total), p, T::one());
        }
        let mut pending = Vec::with_capacity(steps_per_trajectory);
        for step in 0..steps_per_trajectory {
            let u = [(); 3].map(|_| T::from_f64_lossy(rng.random::<f64>() * 2.0 - 1.0));
            match solver.step(&y, &u) {
                Ok(next) => {
                    pending.push((t as u32, step as u32, y.clone(), next.clone(), u));
                    y = next;
                }
                Err(_) => {
                    log::warn!("kdv: trajectory {t} dropped, blow-up at step {step}");
                    continue 'traj;
                }
            }
        }
        columns.extend(pending);
    }
    if columns.is_empty() {
        return Err(Error::Numerical("KdV campaign produced no usable samples".into()));
    }
    let k = columns.len();
    let mut x = nalgebra::DMatrix::zeros(n, k);
    let mut y = nalgebra::DMatrix::zeros(n, k);
    let mut u = nalgebra::DMatrix::zeros(3, k);
    let mut provenance = Vec::with_capacity(k);
    for (j, (traj, step, xc, yc, uc)) in columns.iter().enumerate() {
        x.column_mut(j).copy_from(xc);
        y.column_mut(j).copy_from(yc);
        for (i, ui) in uc.iter().enumerate() {
            u[(i, j)] = *ui;
        }
        provenance.push((*traj, *step));
    }
    DataSet::new(x, y, u, None)?.with_provenance(provenance)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn solver() -> KdvSolver<f64> {
        KdvSolver::new(128, 0.01).unwrap()
    }

    #[test]
    fn spectral_derivative_of_sine_is_cosine() {
        let s = solver();
        let y = DVector::from_fn(128, |j, _| s.grid()[j].sin());
        let dy = s.spectral_derivative(&y);
        for j in 0..128 {
            assert_relative_eq!(dy[j], s.grid()[j].cos(), epsilon = 1e-10);
        }
    }

    #[test]
    fn constants_are_equilibria() {
        let s = solver();
        let y = DVector::from_element(128, 0.37);
        let next = s.step(&y, &[0.0; 3]).unwrap();
        for j in 0..128 {
            assert_relative_eq!(next[j], 0.37, epsilon = 1e-12);
        }
    }

    #[test]
    fn linear_substep_is_unitary() {
        let s = solver();
        let y = DVector::from_fn(128, |j, _| {
            let x = s.grid()[j];
            (-x * x).exp() + 0.3 * (2.0 * x).sin()
        });
        let next = s.linear_substep(&y);
        assert_relative_eq!(next.norm(), y.norm(), epsilon = 1e-13);
    }

    #[test]
    fn unforced_solver_conserves_the_spatial_mean() {
        let s = solver();
        let y0 = s.initial_profiles()[1].clone();
        let mean0 = s.spatial_mean(&y0);
        let mut y = y0;
        for _ in 0..100 {
            y = s.step(&y, &[0.0; 3]).unwrap();
        }
        assert!((s.spatial_mean(&y) - mean0).abs() <= 1e-8);
    }

    #[test]
    fn forcing_moves_the_mean() {
        let s = solver();
        let mut y = DVector::zeros(128);
        for _ in 0..100 {
            y = s.step(&y, &[1.0, 1.0, 1.0]).unwrap();
        }
        assert!(s.spatial_mean(&y) > 0.1);
    }

    #[test]
    fn campaign_shapes_and_determinism() {
        let s = solver();
        let d1 = collect_kdv_data(&s, 2, 5, 11).unwrap();
        assert_eq!(d1.state_dim(), 128);
        assert_eq!(d1.input_dim(), 3);
        assert_eq!(d1.len(), 10);
        let d2 = collect_kdv_data(&s, 2, 5, 11).unwrap();
        assert_eq!(d1, d2);
    }

    #[test]
    fn blow_up_is_reported() {
        let s = solver();
        // huge low-wavenumber content: the quadratic term overflows inside the mask
        let y = DVector::from_fn(128, |j, _| 1e200 * s.grid()[j].sin());
        assert!(s.step(&y, &[0.0; 3]).is_err());
    }
}
