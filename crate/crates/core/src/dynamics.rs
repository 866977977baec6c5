//! Plant models, their state Jacobians and seeded Gaussian noise.
//!
//! Three structural forms are supported, distinguished by where control and
//! noise enter:
//!
//! * [`ModelForm::AdditiveControl`]: `x+ = f(x, w) + u`
//! * [`ModelForm::AdditiveNoise`]: `x+ = f(x) + u + w`
//! * [`ModelForm::ControlInMap`]: `x+ = f(x, u) + w`
//!
//! The catalog plants (diagonal linear, the bounded-slope benchmark and the
//! expanding scalar map) carry analytic Jacobians, analytic log-Jacobian
//! bounds and a contraction certificate `(a, kappa)` with
//! `|f(x, kappa(z))|_inf <= |a| |x - z|_inf`. User plants fall back to central
//! finite differences.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::scalar::{sup_norm, Real};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("singular Jacobian at the requested point; the map is not invertible there")]
    Singular,
    #[error("invalid model parameter: {0}")]
    Invalid(String),
}

/// Where the control input and the noise enter the transition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelForm {
    AdditiveControl,
    AdditiveNoise,
    ControlInMap,
}

/// Full transition `(x, u, w) -> x+` for a user-supplied plant.
pub type TransitionFn<T> = Arc<dyn Fn(&[T], &[T], &[T]) -> Vec<T> + Send + Sync>;
/// Control map `z -> kappa(z)`.
pub type ControlFn<T> = Arc<dyn Fn(&[T]) -> Vec<T> + Send + Sync>;

#[derive(Clone)]
pub struct CustomPlant<T: Real> {
    pub transition: TransitionFn<T>,
    /// Whether the state Jacobian changes with the noise realization.
    pub noise_dependent_jacobian: bool,
}

impl<T: Real> fmt::Debug for CustomPlant<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomPlant")
            .field("noise_dependent_jacobian", &self.noise_dependent_jacobian)
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone)]
pub enum Plant<T: Real> {
    /// `x+ = diag(a) x + u + w`.
    Linear { diag: Vec<T> },
    /// Coordinatewise `x+ = b (x + 0.5 sin x) + u + w`.
    Benchmark { gain: T },
    /// Scalar `x+ = c x + 0.5 sin x + u + w`.
    Expanding { slope: T },
    Custom(CustomPlant<T>),
}

/// Zero-mean Gaussian noise with diagonal covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseLaw<T: Real> {
    pub std: Vec<T>,
}

/// Declared `L1 <= log2|det J| <= M1`; `None` means unbounded on that side.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LogJacobianBounds<T: Real> {
    pub lower: Option<T>,
    pub upper: Option<T>,
}

#[derive(Clone)]
pub struct ContractionCertificate<T: Real> {
    /// The constant `a`.
    pub constant: T,
    pub control: ControlFn<T>,
}

impl<T: Real> fmt::Debug for ContractionCertificate<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ContractionCertificate")
            .field("constant", &self.constant)
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone)]
pub struct SystemModel<T: Real> {
    pub name: String,
    pub dim: usize,
    pub form: ModelForm,
    pub plant: Plant<T>,
    pub noise: NoiseLaw<T>,
    pub bounds: LogJacobianBounds<T>,
    pub certificate: Option<ContractionCertificate<T>>,
}

fn half<T: Real>() -> T {
    T::of(0.5)
}

impl<T: Real> SystemModel<T> {
    /// Diagonal linear plant `x+ = A x + u + w` with i.i.d. noise of the given
    /// standard deviation on every coordinate.
    pub fn linear(diag: Vec<T>, noise_std: T) -> Result<Self, ModelError> {
        if diag.is_empty() {
            return Err(ModelError::Invalid("linear plant needs at least one coordinate".into()));
        }
        if diag.iter().any(|a| *a == T::zero() || !a.is_finite()) {
            return Err(ModelError::Invalid("diagonal entries must be finite and nonzero".into()));
        }
        let dim = diag.len();
        let log_det = diag.iter().fold(T::zero(), |acc, a| acc + a.abs().log2());
        let constant = sup_norm(&diag);
        let gains = diag.clone();
        let control: ControlFn<T> =
            Arc::new(move |z: &[T]| z.iter().zip(&gains).map(|(z, a)| -(*a) * *z).collect());
        Ok(Self {
            name: "linear".into(),
            dim,
            form: ModelForm::AdditiveNoise,
            plant: Plant::Linear { diag },
            noise: NoiseLaw { std: vec![noise_std; dim] },
            bounds: LogJacobianBounds { lower: Some(log_det), upper: Some(log_det) },
            certificate: Some(ContractionCertificate { constant, control }),
        })
    }

    /// `f(x, u) = b (x + 0.5 sin x) + u` on every coordinate. The map
    /// `x -> x + 0.5 sin x` has slope in `[0.5, 1.5]`, so
    /// `kappa(z) = -b (z + 0.5 sin z)` certifies contraction with `a = 1.5 b`.
    pub fn benchmark(gain: T, dim: usize, noise_std: T) -> Result<Self, ModelError> {
        if dim == 0 || !(gain > T::zero()) || !gain.is_finite() {
            return Err(ModelError::Invalid("benchmark needs dim >= 1 and gain > 0".into()));
        }
        let n = T::of(dim as f64);
        let control: ControlFn<T> = Arc::new(move |z: &[T]| {
            z.iter().map(|z| -gain * (*z + half::<T>() * z.sin())).collect()
        });
        Ok(Self {
            name: "benchmark".into(),
            dim,
            form: ModelForm::ControlInMap,
            plant: Plant::Benchmark { gain },
            noise: NoiseLaw { std: vec![noise_std; dim] },
            bounds: LogJacobianBounds {
                lower: Some(n * (half::<T>() * gain).log2()),
                upper: Some(n * (T::of(1.5) * gain).log2()),
            },
            certificate: Some(ContractionCertificate { constant: T::of(1.5) * gain, control }),
        })
    }

    /// Scalar `f(x) = c x + 0.5 sin x`, invertible for `c > 0.5`.
    pub fn expanding(slope: T, noise_std: T) -> Result<Self, ModelError> {
        if !(slope > half::<T>()) || !slope.is_finite() {
            return Err(ModelError::Invalid("expanding plant needs slope > 0.5".into()));
        }
        let control: ControlFn<T> = Arc::new(move |z: &[T]| {
            z.iter().map(|z| -(slope * *z + half::<T>() * z.sin())).collect()
        });
        Ok(Self {
            name: "expanding".into(),
            dim: 1,
            form: ModelForm::AdditiveNoise,
            plant: Plant::Expanding { slope },
            noise: NoiseLaw { std: vec![noise_std] },
            bounds: LogJacobianBounds {
                lower: Some((slope - half::<T>()).log2()),
                upper: Some((slope + half::<T>()).log2()),
            },
            certificate: Some(ContractionCertificate { constant: slope + half::<T>(), control }),
        })
    }

    /// User plant given by its full transition. Jacobians are obtained by
    /// central finite differences; bounds and certificate start undeclared.
    pub fn custom(
        name: impl Into<String>,
        dim: usize,
        form: ModelForm,
        transition: TransitionFn<T>,
        noise_std: Vec<T>,
    ) -> Result<Self, ModelError> {
        if noise_std.len() != dim {
            return Err(ModelError::Dimension { expected: dim, got: noise_std.len() });
        }
        Ok(Self {
            name: name.into(),
            dim,
            form,
            plant: Plant::Custom(CustomPlant {
                transition,
                noise_dependent_jacobian: form == ModelForm::AdditiveControl,
            }),
            noise: NoiseLaw { std: noise_std },
            bounds: LogJacobianBounds::default(),
            certificate: None,
        })
    }

    pub fn with_bounds(mut self, bounds: LogJacobianBounds<T>) -> Self {
        self.bounds = bounds;
        self
    }

    pub fn with_certificate(mut self, certificate: ContractionCertificate<T>) -> Self {
        self.certificate = Some(certificate);
        self
    }

    fn check_dim(&self, v: &[T]) -> Result<(), ModelError> {
        if v.len() != self.dim {
            return Err(ModelError::Dimension { expected: self.dim, got: v.len() });
        }
        Ok(())
    }

    /// One-step successor of `x` under control `u` and noise `w`.
    pub fn step(&self, x: &[T], u: &[T], w: &[T]) -> Result<Vec<T>, ModelError> {
        let mut out = vec![T::zero(); self.dim];
        self.step_into(x, u, w, &mut out)?;
        Ok(out)
    }

    pub fn step_into(&self, x: &[T], u: &[T], w: &[T], out: &mut [T]) -> Result<(), ModelError> {
        self.check_dim(x)?;
        self.check_dim(u)?;
        self.check_dim(w)?;
        self.check_dim(out)?;
        match &self.plant {
            Plant::Linear { diag } => {
                for i in 0..self.dim {
                    out[i] = diag[i] * x[i] + u[i] + w[i];
                }
            }
            Plant::Benchmark { gain } => {
                for i in 0..self.dim {
                    out[i] = *gain * (x[i] + half::<T>() * x[i].sin()) + u[i] + w[i];
                }
            }
            Plant::Expanding { slope } => {
                out[0] = *slope * x[0] + half::<T>() * x[0].sin() + u[0] + w[0];
            }
            Plant::Custom(p) => {
                let next = (p.transition)(x, u, w);
                self.check_dim(&next)?;
                out.copy_from_slice(&next);
            }
        }
        Ok(())
    }

    /// Whether the state Jacobian varies with the noise realization.
    pub fn jacobian_depends_on_noise(&self) -> bool {
        match &self.plant {
            Plant::Custom(p) => p.noise_dependent_jacobian,
            _ => false,
        }
    }

    /// Row-major `N x N` Jacobian of the transition with respect to the state,
    /// evaluated at `(x, w)` with zero control.
    pub fn jacobian(&self, x: &[T], w: &[T]) -> Result<Vec<T>, ModelError> {
        self.check_dim(x)?;
        self.check_dim(w)?;
        let n = self.dim;
        let mut j = vec![T::zero(); n * n];
        match &self.plant {
            Plant::Linear { diag } => {
                for i in 0..n {
                    j[i * n + i] = diag[i];
                }
            }
            Plant::Benchmark { gain } => {
                for i in 0..n {
                    j[i * n + i] = *gain * (T::one() + half::<T>() * x[i].cos());
                }
            }
            Plant::Expanding { slope } => {
                j[0] = *slope + half::<T>() * x[0].cos();
            }
            Plant::Custom(_) => return self.finite_difference_jacobian(x, w),
        }
        Ok(j)
    }

    /// Central differences with step `1e-6 (1 + |x_j|)`.
    pub fn finite_difference_jacobian(&self, x: &[T], w: &[T]) -> Result<Vec<T>, ModelError> {
        self.check_dim(x)?;
        self.check_dim(w)?;
        let n = self.dim;
        let zero_u = vec![T::zero(); n];
        let mut j = vec![T::zero(); n * n];
        let mut probe = x.to_vec();
        let mut plus = vec![T::zero(); n];
        let mut minus = vec![T::zero(); n];
        for col in 0..n {
            let h = T::of(1e-6) * (T::one() + x[col].abs());
            probe[col] = x[col] + h;
            self.step_into(&probe, &zero_u, w, &mut plus)?;
            probe[col] = x[col] - h;
            self.step_into(&probe, &zero_u, w, &mut minus)?;
            probe[col] = x[col];
            for row in 0..n {
                j[row * n + col] = (plus[row] - minus[row]) / (h + h);
            }
        }
        Ok(j)
    }

    /// `log2 |det J(f)(x, w)|` in bits.
    pub fn log_jacobian(&self, x: &[T], w: &[T]) -> Result<T, ModelError> {
        let value = match &self.plant {
            Plant::Linear { diag } => diag.iter().fold(T::one(), |acc, a| acc * *a),
            Plant::Benchmark { .. } | Plant::Expanding { .. } => {
                self.check_dim(x)?;
                self.check_dim(w)?;
                let j = self.jacobian(x, w)?;
                (0..self.dim).fold(T::one(), |acc, i| acc * j[i * self.dim + i])
            }
            Plant::Custom(_) => determinant(self.jacobian(x, w)?, self.dim),
        };
        if value == T::zero() || !value.is_finite() {
            return Err(ModelError::Singular);
        }
        Ok(value.abs().log2())
    }

    /// Open-loop eigenvalues; only available for linear plants.
    pub fn eigenvalues(&self) -> Option<Vec<Complex<T>>> {
        match &self.plant {
            Plant::Linear { diag } => Some(diag.iter().map(|a| Complex::new(*a, T::zero())).collect()),
            _ => None,
        }
    }

    /// The contraction-realizing input `kappa(estimate)`. Without a
    /// certificate the plant is left uncontrolled (zero input).
    pub fn control(&self, estimate: &[T]) -> Vec<T> {
        match &self.certificate {
            Some(c) => (c.control)(estimate),
            None => vec![T::zero(); self.dim],
        }
    }

    /// `|f(x, kappa(z))|_inf / |x - z|_inf` for the noise-free plant.
    pub fn contraction_ratio(&self, x: &[T], z: &[T]) -> Result<T, ModelError> {
        let cert = self
            .certificate
            .as_ref()
            .ok_or_else(|| ModelError::Invalid("model has no contraction certificate".into()))?;
        let u = (cert.control)(z);
        let w = vec![T::zero(); self.dim];
        let next = self.step(x, &u, &w)?;
        let gap: Vec<T> = x.iter().zip(z).map(|(a, b)| *a - *b).collect();
        Ok(sup_norm(&next) / sup_norm(&gap))
    }
}

/// Determinant of a row-major `n x n` matrix by partial-pivot elimination.
pub fn determinant<T: Real>(mut m: Vec<T>, n: usize) -> T {
    let mut det = T::one();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&a, &b| m[a * n + col].abs().partial_cmp(&m[b * n + col].abs()).unwrap())
            .unwrap();
        if m[pivot * n + col] == T::zero() {
            return T::zero();
        }
        if pivot != col {
            for k in 0..n {
                m.swap(pivot * n + k, col * n + k);
            }
            det = -det;
        }
        let p = m[col * n + col];
        det = det * p;
        for row in col + 1..n {
            let factor = m[row * n + col] / p;
            for k in col..n {
                let v = m[col * n + k];
                m[row * n + k] = m[row * n + k] - factor * v;
            }
        }
    }
    det
}

/// Seeded i.i.d. Gaussian noise source. Equal seeds give equal sequences.
#[derive(Debug, Clone)]
pub struct NoiseStream<T: Real> {
    seed: u64,
    std: Vec<T>,
    rng: ChaCha8Rng,
    index: u64,
}

impl<T: Real> NoiseStream<T> {
    pub fn new(seed: u64, law: &NoiseLaw<T>) -> Self {
        Self { seed, std: law.std.clone(), rng: ChaCha8Rng::seed_from_u64(seed), index: 0 }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of vectors drawn so far.
    pub fn index(&self) -> u64 {
        self.index
    }

    pub fn dim(&self) -> usize {
        self.std.len()
    }

    pub fn next_into(&mut self, out: &mut [T]) {
        debug_assert_eq!(out.len(), self.std.len());
        for (o, s) in out.iter_mut().zip(&self.std) {
            let z: f64 = StandardNormal.sample(&mut self.rng);
            *o = *s * T::of(z);
        }
        self.index += 1;
    }

    pub fn sample(&mut self, count: usize) -> Vec<Vec<T>> {
        (0..count)
            .map(|_| {
                let mut w = vec![T::zero(); self.std.len()];
                self.next_into(&mut w);
                w
            })
            .collect()
    }
}
