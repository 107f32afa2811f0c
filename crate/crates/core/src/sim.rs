//! Simulated physical layer: random (A, A_u) pairs and a measurement oracle
//! with an audited call budget.
//!
//! Randomness comes from ChaCha20 (`rand_chacha`), a counter-based generator.
//! A 64-bit seed is expanded with `SeedableRng::seed_from_u64`, and each
//! consumer draws from its own stream (see the `STREAM_*` constants), so
//! results do not depend on the order in which consumers run. Gaussian
//! variates are produced in `f64` by `rand_distr::StandardNormal` and then
//! rounded to the working precision.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::calibration::BasisSet;
use crate::error::{Error, Result};
use crate::operator::LinearOperator;
use crate::real::Real;
use crate::types::{validate_dims, Image, MeasurementMatrix, MeasurementVector};

pub const STREAM_PREMEASURE: u64 = 0;
pub const STREAM_UNKNOWN: u64 = 1;
pub const STREAM_NOISE: u64 = 2;
pub const STREAM_TARGETS: u64 = 3;
pub const STREAM_PROBES: u64 = 4;

/// A ChaCha20 generator on the given stream of `seed`.
pub fn derive_rng(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Seed for trial `index` of a sweep rooted at `seed` (splitmix64 mix).
pub fn trial_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `rows × cols` matrix of i.i.d. `N(0, std²)` entries, drawn row by row.
pub fn gaussian_matrix<T: Real>(
    rows: usize,
    cols: usize,
    std: f64,
    rng: &mut ChaCha20Rng,
) -> DMatrix<T> {
    let data: Vec<T> = (0..rows * cols)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            T::of_f64(std * z)
        })
        .collect();
    DMatrix::from_row_slice(rows, cols, &data)
}

pub fn gaussian_vector<T: Real>(len: usize, std: f64, rng: &mut ChaCha20Rng) -> DVector<T> {
    DVector::from_iterator(
        len,
        (0..len).map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            T::of_f64(std * z)
        }),
    )
}

/// Non-negative image with exactly `k` non-zero pixels at distinct random
/// positions, amplitudes uniform in [0.5, 1.5).
pub fn sparse_image<T: Real>(
    width: usize,
    height: usize,
    k: usize,
    rng: &mut ChaCha20Rng,
) -> Result<Image<T>> {
    let n = width * height;
    if k == 0 || k > n {
        return Err(Error::InvalidInput(format!(
            "sparsity must be in 1..={n}, got {k}"
        )));
    }
    let mut x = DVector::<T>::zeros(n);
    for i in rand::seq::index::sample(rng, n, k) {
        x[i] = T::of_f64(rng.gen_range(0.5..1.5));
    }
    Image::new(width, height, x)
}

/// Dense positive image: a constant floor plus a few Gaussian blobs.
/// Stands in for natural images when a target must overlap the
/// pre-measure substantially.
pub fn smooth_image<T: Real>(width: usize, height: usize, rng: &mut ChaCha20Rng) -> Result<Image<T>> {
    let blobs: Vec<(f64, f64, f64, f64)> = (0..4)
        .map(|_| {
            (
                rng.gen_range(0.0..width as f64),
                rng.gen_range(0.0..height as f64),
                rng.gen_range(0.15..0.4) * width.max(height) as f64,
                rng.gen_range(0.3..1.0),
            )
        })
        .collect();
    let px = DVector::from_fn(width * height, |i, _| {
        let (c, r) = ((i % width) as f64, (i / width) as f64);
        let v = blobs.iter().fold(0.3, |acc, &(cx, cy, s, amp)| {
            acc + amp * (-((c - cx).powi(2) + (r - cy).powi(2)) / (2.0 * s * s)).exp()
        });
        T::of_f64(v)
    });
    Image::new(width, height, px)
}

/// Entry distribution of generated matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MatrixModel {
    /// i.i.d. `N(0, 1/M)` entries.
    #[default]
    GaussianIid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemSpec {
    pub m: usize,
    pub n: usize,
    pub seed: u64,
    pub matrix_model: MatrixModel,
    pub noise_sigma: f64,
}

impl SystemSpec {
    pub fn new(m: usize, n: usize, seed: u64, noise_sigma: f64) -> Self {
        SystemSpec {
            m,
            n,
            seed,
            matrix_model: MatrixModel::GaussianIid,
            noise_sigma,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.m >= self.n {
            return Err(Error::InvalidInput(format!(
                "need 0 < M < N, got M={} N={}",
                self.m, self.n
            )));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(Error::InvalidInput(format!(
                "noise sigma must be finite and >= 0, got {}",
                self.noise_sigma
            )));
        }
        Ok(())
    }
}

/// Draws the pre-measurement matrix `A` and, independently, the hidden
/// post-bend matrix `A_u` wrapped in an oracle.
pub fn generate_system<T: Real>(
    spec: &SystemSpec,
) -> Result<(MeasurementMatrix<T>, MeasurementOracle<T>)> {
    spec.validate()?;
    let std = match spec.matrix_model {
        MatrixModel::GaussianIid => 1.0 / (spec.m as f64).sqrt(),
    };
    let a = gaussian_matrix(spec.m, spec.n, std, &mut derive_rng(spec.seed, STREAM_PREMEASURE));
    let a_u = gaussian_matrix(spec.m, spec.n, std, &mut derive_rng(spec.seed, STREAM_UNKNOWN));
    let oracle = MeasurementOracle::new(MeasurementMatrix::new(a_u)?, spec.noise_sigma, spec.seed)?;
    Ok((MeasurementMatrix::new(a)?, oracle))
}

/// Black box returning `A_u·x + σ·N(0, 1)` and counting calls.
#[derive(Debug, Clone)]
pub struct MeasurementOracle<T: Real> {
    a_u: MeasurementMatrix<T>,
    noise_sigma: f64,
    rng: ChaCha20Rng,
    call_count: u64,
}

impl<T: Real> MeasurementOracle<T> {
    /// Wraps an externally supplied unknown matrix. Noise is drawn from the
    /// noise stream of `seed`.
    pub fn new(a_u: MeasurementMatrix<T>, noise_sigma: f64, seed: u64) -> Result<Self> {
        if !(noise_sigma >= 0.0) || !noise_sigma.is_finite() {
            return Err(Error::InvalidInput(format!(
                "noise sigma must be finite and >= 0, got {noise_sigma}"
            )));
        }
        Ok(MeasurementOracle {
            a_u,
            noise_sigma,
            rng: derive_rng(seed, STREAM_NOISE),
            call_count: 0,
        })
    }

    pub fn call_count(&self) -> u64 {
        self.call_count
    }

    pub fn noise_sigma(&self) -> f64 {
        self.noise_sigma
    }

    pub fn shape(&self) -> (usize, usize) {
        self.a_u.shape()
    }

    /// The hidden matrix. Only for verification against ground truth in
    /// simulations; solvers must never call this.
    #[doc(hidden)]
    pub fn unknown_matrix_for_verification(&self) -> &MeasurementMatrix<T> {
        &self.a_u
    }

    fn add_noise(&mut self, mut y: DVector<T>) -> DVector<T> {
        if self.noise_sigma > 0.0 {
            for v in y.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut self.rng);
                *v += T::of_f64(self.noise_sigma * z);
            }
        }
        y
    }

    /// One measurement of `x` through the unknown matrix.
    pub fn speckle_measure(&mut self, x: &Image<T>) -> Result<MeasurementVector<T>> {
        validate_dims(&self.a_u, x)?;
        let clean = self.a_u.entries() * x.pixels();
        self.call_count += 1;
        Ok(MeasurementVector(self.add_noise(clean)))
    }

    /// Measures every basis column; counts as one call per column.
    /// Column `j` of the result is the response to basis image `j`.
    pub fn measure_basis_batch(&mut self, basis: &BasisSet<T>) -> Result<DMatrix<T>> {
        let q = basis.q();
        if q.nrows() != self.a_u.cols() {
            return Err(Error::DimensionMismatch {
                context: "basis image length vs unknown matrix columns",
                left: q.shape(),
                right: self.a_u.shape(),
            });
        }
        let mut out = self.a_u.entries() * q;
        for j in 0..out.ncols() {
            let col = self.add_noise(out.column(j).into_owned());
            out.set_column(j, &col);
        }
        self.call_count += q.ncols() as u64;
        Ok(out)
    }

    /// Pins `target` behind the fiber. The solvers only ever see measurement
    /// results of it.
    pub fn session(&mut self, target: Image<T>) -> Result<OracleSession<'_, T>> {
        validate_dims(&self.a_u, &target)?;
        Ok(OracleSession {
            oracle: self,
            target,
        })
    }
}

/// An oracle with a fixed target image.
#[derive(Debug)]
pub struct OracleSession<'a, T: Real> {
    oracle: &'a mut MeasurementOracle<T>,
    target: Image<T>,
}

impl<T: Real> OracleSession<'_, T> {
    /// `y = A_u·x + ε` for the pinned image.
    pub fn measure_target(&mut self) -> MeasurementVector<T> {
        let clean = self.oracle.a_u.entries() * self.target.pixels();
        self.oracle.call_count += 1;
        MeasurementVector(self.oracle.add_noise(clean))
    }

    /// Physically measures the pinned image through `op`: `op·x + ε`.
    pub fn measure_through(&mut self, op: &dyn LinearOperator<T>) -> Result<MeasurementVector<T>> {
        if op.cols() != self.target.len() || op.rows() != self.oracle.a_u.rows() {
            return Err(Error::DimensionMismatch {
                context: "operator vs pinned image / measurement count",
                left: (op.rows(), op.cols()),
                right: (self.oracle.a_u.rows(), self.target.len()),
            });
        }
        let clean = op.apply(self.target.pixels());
        self.oracle.call_count += 1;
        Ok(MeasurementVector(self.oracle.add_noise(clean)))
    }

    pub fn call_count(&self) -> u64 {
        self.oracle.call_count
    }

    pub fn noise_sigma(&self) -> f64 {
        self.oracle.noise_sigma
    }

    /// Pinned image. Verification only.
    #[doc(hidden)]
    pub fn target_for_verification(&self) -> &Image<T> {
        &self.target
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_gives_identical_system() {
        let spec = SystemSpec::new(8, 32, 42, 0.0);
        let (a1, o1) = generate_system::<f64>(&spec).unwrap();
        let (a2, o2) = generate_system::<f64>(&spec).unwrap();
        assert_eq!(a1, a2);
        assert_eq!(
            o1.unknown_matrix_for_verification(),
            o2.unknown_matrix_for_verification()
        );
    }

    #[test]
    fn different_seeds_and_streams_differ() {
        let (a1, o1) = generate_system::<f64>(&SystemSpec::new(8, 32, 1, 0.0)).unwrap();
        let (a2, _) = generate_system::<f64>(&SystemSpec::new(8, 32, 2, 0.0)).unwrap();
        assert!((a1.entries() - a2.entries()).amax() > 0.0);
        assert!((a1.entries() - o1.unknown_matrix_for_verification().entries()).amax() > 0.0);
    }

    #[test]
    fn single_precision_system_is_rounded_double_system() {
        let spec = SystemSpec::new(4, 16, 5, 0.0);
        let (a64, _) = generate_system::<f64>(&spec).unwrap();
        let (a32, _) = generate_system::<f32>(&spec).unwrap();
        assert_eq!(a64.cast::<f32>(), a32);
    }

    #[test]
    fn invalid_spec_rejected() {
        assert!(generate_system::<f64>(&SystemSpec::new(32, 32, 0, 0.0)).is_err());
        assert!(generate_system::<f64>(&SystemSpec::new(4, 32, 0, -1.0)).is_err());
    }

    #[test]
    fn noiseless_measure_is_exact_and_counted() {
        let (_, mut o) = generate_system::<f64>(&SystemSpec::new(4, 16, 3, 0.0)).unwrap();
        let x = Image::from_vector(DVector::from_fn(16, |i, _| i as f64 * 0.1)).unwrap();
        let y = o.speckle_measure(&x).unwrap();
        assert_eq!(y.values(), &(o.unknown_matrix_for_verification().entries() * x.pixels()));
        assert_eq!(o.call_count(), 1);
        let bad = Image::from_vector(DVector::zeros(15)).unwrap();
        assert!(o.speckle_measure(&bad).is_err());
        assert_eq!(o.call_count(), 1);
    }

    #[test]
    fn session_counts_every_measurement() {
        let (a, mut o) = generate_system::<f64>(&SystemSpec::new(4, 16, 3, 0.5)).unwrap();
        let x = Image::from_vector(DVector::from_element(16, 1.0)).unwrap();
        let mut s = o.session(x).unwrap();
        s.measure_target();
        s.measure_through(&a).unwrap();
        assert_eq!(s.call_count(), 2);
        assert_eq!(o.call_count(), 2);
    }

    #[test]
    fn trial_seeds_are_distinct() {
        let seeds: std::collections::HashSet<u64> = (0..1000).map(|i| trial_seed(7, i)).collect();
        assert_eq!(seeds.len(), 1000);
    }
}
