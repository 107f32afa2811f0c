//! Linear operators consumed by the reconstructor, and the factored form of
//! a constructed measurement matrix.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::real::Real;
use crate::types::MeasurementMatrix;

/// A real linear map R^N -> R^M with its adjoint.
pub trait LinearOperator<T: Real>: Sync {
    fn rows(&self) -> usize;
    fn cols(&self) -> usize;
    fn apply(&self, x: &DVector<T>) -> DVector<T>;
    fn apply_adjoint(&self, u: &DVector<T>) -> DVector<T>;
}

impl<T: Real> LinearOperator<T> for MeasurementMatrix<T> {
    fn rows(&self) -> usize {
        MeasurementMatrix::rows(self)
    }
    fn cols(&self) -> usize {
        MeasurementMatrix::cols(self)
    }
    fn apply(&self, x: &DVector<T>) -> DVector<T> {
        self.entries() * x
    }
    fn apply_adjoint(&self, u: &DVector<T>) -> DVector<T> {
        self.entries().tr_mul(u)
    }
}

impl<T: Real> LinearOperator<T> for DMatrix<T> {
    fn rows(&self) -> usize {
        self.nrows()
    }
    fn cols(&self) -> usize {
        self.ncols()
    }
    fn apply(&self, x: &DVector<T>) -> DVector<T> {
        self * x
    }
    fn apply_adjoint(&self, u: &DVector<T>) -> DVector<T> {
        self.tr_mul(u)
    }
}

/// One rank-1 term `scale · left · rightᵀ` of a constructed matrix.
///
/// `right` is `AᵀΣᵀy0`, i.e. the row `y0ᵀΣA` stored as a column. Terms built
/// from the same pre-measure share the allocation.
#[derive(Debug, Clone)]
pub struct MismatchTerm<T: Real> {
    pub(crate) scale: T,
    pub(crate) left: DVector<T>,
    pub(crate) right: Arc<DVector<T>>,
}

impl<T: Real> MismatchTerm<T> {
    pub fn new(scale: T, left: DVector<T>, right: Arc<DVector<T>>) -> Self {
        MismatchTerm { scale, left, right }
    }

    pub fn scale(&self) -> T {
        self.scale
    }

    pub fn left(&self) -> &DVector<T> {
        &self.left
    }

    pub fn right(&self) -> &Arc<DVector<T>> {
        &self.right
    }

    pub fn apply(&self, x: &DVector<T>) -> DVector<T> {
        &self.left * (self.scale * self.right.dot(x))
    }

    pub fn materialize(&self) -> DMatrix<T> {
        (&self.left * self.scale) * self.right.transpose()
    }
}

/// A constructed measurement matrix kept as an ordered sum of rank-1 terms.
#[derive(Debug, Clone)]
pub struct FactoredRecvMatrix<T: Real> {
    rows: usize,
    cols: usize,
    terms: Vec<MismatchTerm<T>>,
}

impl<T: Real> FactoredRecvMatrix<T> {
    /// The zero matrix of the given shape.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        FactoredRecvMatrix {
            rows,
            cols,
            terms: Vec::new(),
        }
    }

    pub fn from_terms(rows: usize, cols: usize, terms: Vec<MismatchTerm<T>>) -> Self {
        let mut out = Self::zeros(rows, cols);
        for t in terms {
            out.push(t);
        }
        out
    }

    /// Accumulates one term.
    ///
    /// # Panics
    /// If the term's factors do not match the matrix shape.
    pub fn push(&mut self, term: MismatchTerm<T>) {
        assert_eq!(term.left.len(), self.rows, "left factor length");
        assert_eq!(term.right.len(), self.cols, "right factor length");
        self.terms.push(term);
    }

    pub fn terms(&self) -> &[MismatchTerm<T>] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// Number of distinct right factors, compared by value.
    pub fn distinct_right_factors(&self) -> usize {
        let mut seen: Vec<&Arc<DVector<T>>> = Vec::new();
        for t in &self.terms {
            if !seen
                .iter()
                .any(|r| Arc::ptr_eq(r, &t.right) || r.as_ref() == t.right.as_ref())
            {
                seen.push(&t.right);
            }
        }
        seen.len()
    }

    pub fn materialize(&self) -> DMatrix<T> {
        let mut out = DMatrix::zeros(self.rows, self.cols);
        for t in &self.terms {
            out.ger(t.scale, &t.left, &t.right, T::one());
        }
        out
    }

    /// Converts every factor to another precision.
    pub fn cast<U: Real>(&self) -> FactoredRecvMatrix<U> {
        let conv = |v: &DVector<T>| v.map(|e| U::of_f64(e.as_f64()));
        let mut out = FactoredRecvMatrix::zeros(self.rows, self.cols);
        let mut last: Option<(&Arc<DVector<T>>, Arc<DVector<U>>)> = None;
        for t in &self.terms {
            let right = match &last {
                Some((src, dst)) if Arc::ptr_eq(src, &t.right) => dst.clone(),
                _ => Arc::new(conv(&t.right)),
            };
            last = Some((&t.right, right.clone()));
            out.push(MismatchTerm::new(
                U::of_f64(t.scale.as_f64()),
                conv(&t.left),
                right,
            ));
        }
        out
    }
}

impl<T: Real> LinearOperator<T> for FactoredRecvMatrix<T> {
    fn rows(&self) -> usize {
        self.rows
    }

    fn cols(&self) -> usize {
        self.cols
    }

    fn apply(&self, x: &DVector<T>) -> DVector<T> {
        let mut acc = DVector::zeros(self.rows);
        let mut cached: Option<(&Arc<DVector<T>>, T)> = None;
        for t in &self.terms {
            let dot = match cached {
                Some((r, d)) if Arc::ptr_eq(r, &t.right) => d,
                _ => {
                    let d = t.right.dot(x);
                    cached = Some((&t.right, d));
                    d
                }
            };
            acc.axpy(t.scale * dot, &t.left, T::one());
        }
        acc
    }

    fn apply_adjoint(&self, u: &DVector<T>) -> DVector<T> {
        let mut acc = DVector::zeros(self.cols);
        for t in &self.terms {
            acc.axpy(t.scale * t.left.dot(u), &t.right, T::one());
        }
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_matrix_applies_to_zero() {
        let r = FactoredRecvMatrix::<f64>::zeros(3, 5);
        let y = r.apply(&DVector::from_element(5, 1.0));
        assert_eq!(y, DVector::zeros(3));
        assert_eq!(r.materialize(), DMatrix::zeros(3, 5));
    }

    #[test]
    fn shared_right_counts_once() {
        let right = Arc::new(DVector::from_vec(vec![1.0, 2.0, 3.0]));
        let mut r = FactoredRecvMatrix::zeros(2, 3);
        r.push(MismatchTerm::new(0.5, DVector::from_vec(vec![1.0, 0.0]), right.clone()));
        r.push(MismatchTerm::new(2.0, DVector::from_vec(vec![0.0, 1.0]), right));
        assert_eq!(r.distinct_right_factors(), 1);
        r.push(MismatchTerm::new(
            1.0,
            DVector::from_vec(vec![1.0, 1.0]),
            Arc::new(DVector::from_vec(vec![0.0, 0.0, 1.0])),
        ));
        assert_eq!(r.distinct_right_factors(), 2);

        let x = DVector::from_vec(vec![1.0, -1.0, 2.0]);
        let dense = r.materialize();
        assert_eq!(r.apply(&x), &dense * &x);
        let u = DVector::from_vec(vec![3.0, -2.0]);
        assert_eq!(r.apply_adjoint(&u), dense.tr_mul(&u));
    }

    #[test]
    #[should_panic(expected = "left factor length")]
    fn push_rejects_wrong_shape() {
        let mut r = FactoredRecvMatrix::<f64>::zeros(2, 3);
        r.push(MismatchTerm::new(1.0, DVector::zeros(3), Arc::new(DVector::zeros(3))));
    }
}
