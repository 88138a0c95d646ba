//! Scalar abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point type the toolkit can compute in.
///
/// Implemented for `f32` and `f64`. All file formats serialize through `f64`,
/// which is lossless for both.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Sum + Send + Sync + 'static
{
    /// Converts an `f64` constant into this type.
    fn of(value: f64) -> Self {
        Self::from_f64(value).expect("f64 is representable in every Scalar")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("Scalar always converts to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

const PAIRWISE_BLOCK: usize = 8;

/// Pairwise (cascade) summation with a fixed split order.
///
/// The reduction tree only depends on the slice length, so the result is
/// reproducible across runs.
pub fn pairwise_sum<T: Scalar>(values: &[T]) -> T {
    if values.len() <= PAIRWISE_BLOCK {
        return values.iter().fold(T::zero(), |acc, &v| acc + v);
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Applies `f` to each item and sums the results pairwise.
pub fn pairwise_sum_by<I, T, F>(items: I, f: F) -> T
where
    I: IntoIterator,
    T: Scalar,
    F: FnMut(I::Item) -> T,
{
    let values: Vec<T> = items.into_iter().map(f).collect();
    pairwise_sum(&values)
}
