//! Value types shared by every solver.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::real::Real;

fn all_finite<T: Real>(values: &[T]) -> bool {
    values.iter().all(|v| v.is_finite())
}

/// A flattened row-major grayscale image.
#[derive(Debug, Clone, PartialEq)]
pub struct Image<T: Real> {
    pixels: DVector<T>,
    width: usize,
    height: usize,
}

impl<T: Real> Image<T> {
    pub fn new(width: usize, height: usize, pixels: DVector<T>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidInput(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if width * height != pixels.len() {
            return Err(Error::InvalidInput(format!(
                "image {width}x{height} needs {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        if !all_finite(pixels.as_slice()) {
            return Err(Error::InvalidInput("image contains non-finite pixels".into()));
        }
        Ok(Image { pixels, width, height })
    }

    /// A single-row image holding `pixels`.
    pub fn from_vector(pixels: DVector<T>) -> Result<Self> {
        let n = pixels.len();
        Self::new(n, 1, pixels)
    }

    pub fn from_slice(pixels: &[T]) -> Result<Self> {
        Self::from_vector(DVector::from_column_slice(pixels))
    }

    pub fn reshape(self, width: usize, height: usize) -> Result<Self> {
        Self::new(width, height, self.pixels)
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &DVector<T> {
        &self.pixels
    }

    pub fn into_pixels(self) -> DVector<T> {
        self.pixels
    }

    pub fn is_nonzero(&self) -> bool {
        self.pixels.iter().any(|p| *p != T::zero())
    }

    /// Same image with every pixel multiplied by `c`.
    pub fn scaled(&self, c: T) -> Self {
        Image {
            pixels: &self.pixels * c,
            width: self.width,
            height: self.height,
        }
    }

    /// Converts to another precision. Converting to `f32` rounds.
    pub fn cast<U: Real>(&self) -> Image<U> {
        Image {
            pixels: self.pixels.map(|v| U::of_f64(v.as_f64())),
            width: self.width,
            height: self.height,
        }
    }
}

/// Dense M×N measurement matrix with M < N.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementMatrix<T: Real> {
    entries: DMatrix<T>,
}

impl<T: Real> MeasurementMatrix<T> {
    pub fn new(entries: DMatrix<T>) -> Result<Self> {
        if entries.nrows() >= entries.ncols() {
            return Err(Error::InvalidInput(format!(
                "measurement matrix must have fewer rows than columns, got {}x{}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        Self::with_any_shape(entries)
    }

    /// Skips the M < N check. Square instances are only meaningful for
    /// hand-checkable test cases.
    pub fn with_any_shape(entries: DMatrix<T>) -> Result<Self> {
        if entries.nrows() == 0 || entries.ncols() == 0 {
            return Err(Error::InvalidInput("measurement matrix is empty".into()));
        }
        if !all_finite(entries.as_slice()) {
            return Err(Error::InvalidInput(
                "measurement matrix contains non-finite entries".into(),
            ));
        }
        Ok(MeasurementMatrix { entries })
    }

    pub fn rows(&self) -> usize {
        self.entries.nrows()
    }

    pub fn cols(&self) -> usize {
        self.entries.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.entries.shape()
    }

    pub fn entries(&self) -> &DMatrix<T> {
        &self.entries
    }

    pub fn into_entries(self) -> DMatrix<T> {
        self.entries
    }

    /// `A·x` with no noise. Callers are expected to have run [`validate_dims`].
    pub fn measure(&self, x: &Image<T>) -> MeasurementVector<T> {
        MeasurementVector(&self.entries * x.pixels())
    }

    pub fn cast<U: Real>(&self) -> MeasurementMatrix<U> {
        MeasurementMatrix {
            entries: self.entries.map(|v| U::of_f64(v.as_f64())),
        }
    }
}

/// A vector of M measurement values.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementVector<T: Real>(pub DVector<T>);

impl<T: Real> MeasurementVector<T> {
    pub fn new(values: DVector<T>) -> Result<Self> {
        if !all_finite(values.as_slice()) {
            return Err(Error::InvalidInput(
                "measurement vector contains non-finite values".into(),
            ));
        }
        Ok(MeasurementVector(values))
    }

    pub fn from_slice(values: &[T]) -> Result<Self> {
        Self::new(DVector::from_column_slice(values))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &DVector<T> {
        &self.0
    }

    pub fn norm2(&self) -> f64 {
        self.0.norm().as_f64()
    }

    pub fn norm_inf(&self) -> f64 {
        self.0.amax().as_f64()
    }
}

/// M×M special solution Σ of the mismatch equation.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaMatrix<T: Real>(DMatrix<T>);

impl<T: Real> SigmaMatrix<T> {
    pub fn new(entries: DMatrix<T>) -> Result<Self> {
        if !entries.is_square() {
            return Err(Error::InvalidInput(format!(
                "sigma must be square, got {}x{}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        if !all_finite(entries.as_slice()) {
            return Err(Error::InvalidInput("sigma contains non-finite entries".into()));
        }
        if entries.iter().all(|v| *v == T::zero()) {
            return Err(Error::InvalidInput("sigma must be non-zero".into()));
        }
        Ok(SigmaMatrix(entries))
    }

    pub fn identity(m: usize) -> Self {
        SigmaMatrix(DMatrix::identity(m, m))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn entries(&self) -> &DMatrix<T> {
        &self.0
    }
}

/// Checks that `A` can be applied to `x`.
pub fn validate_dims<T: Real>(a: &MeasurementMatrix<T>, x: &Image<T>) -> Result<()> {
    if a.cols() != x.len() {
        return Err(Error::DimensionMismatch {
            context: "matrix columns vs image pixels",
            left: a.shape(),
            right: (x.height(), x.width()),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zeros(m: usize, n: usize) -> MeasurementMatrix<f64> {
        MeasurementMatrix::new(DMatrix::from_element(m, n, 0.5)).unwrap()
    }

    #[test]
    fn validate_dims_accepts_matching_shapes() {
        let x = Image::from_vector(DVector::from_element(8, 1.0)).unwrap();
        assert!(validate_dims(&zeros(4, 8), &x).is_ok());
    }

    #[test]
    fn validate_dims_rejects_mismatch() {
        let x = Image::from_vector(DVector::from_element(9, 1.0)).unwrap();
        let err = validate_dims(&zeros(4, 8), &x).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { left: (4, 8), .. }));
        assert!(err.to_string().contains("(4, 8)"));
    }

    #[test]
    fn validate_dims_at_full_scale() {
        let a = MeasurementMatrix::new(DMatrix::<f32>::zeros(2500, 128 * 128)).unwrap();
        let x = Image::new(128, 128, DVector::<f32>::zeros(128 * 128)).unwrap();
        assert!(validate_dims(&a, &x).is_ok());
    }

    #[test]
    fn matrix_requires_fewer_rows_than_columns() {
        assert!(MeasurementMatrix::new(DMatrix::<f64>::identity(3, 3)).is_err());
        assert!(MeasurementMatrix::with_any_shape(DMatrix::<f64>::identity(3, 3)).is_ok());
        let mut bad = DMatrix::<f64>::zeros(2, 4);
        bad[(0, 1)] = f64::NAN;
        assert!(MeasurementMatrix::new(bad).is_err());
    }

    #[test]
    fn image_shape_and_finiteness() {
        assert!(Image::new(2, 3, DVector::<f64>::zeros(6)).is_ok());
        assert!(Image::new(2, 3, DVector::<f64>::zeros(5)).is_err());
        assert!(Image::new(0, 3, DVector::<f64>::zeros(0)).is_err());
        assert!(Image::from_slice(&[1.0, f64::INFINITY]).is_err());
        assert!(!Image::from_slice(&[0.0f64, 0.0]).unwrap().is_nonzero());
    }

    #[test]
    fn sigma_rejects_zero_matrix() {
        assert!(SigmaMatrix::new(DMatrix::<f64>::zeros(3, 3)).is_err());
        assert!(SigmaMatrix::new(DMatrix::<f64>::zeros(3, 2)).is_err());
        assert_eq!(SigmaMatrix::<f64>::identity(3).dim(), 3);
    }
}
