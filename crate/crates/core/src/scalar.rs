//! Scalar abstraction shared by the model, channel and codec layers.

use std::fmt::{Debug, Display};

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Floating-point scalar the core math is written against: `f32` or `f64`.
pub trait Real:
    Float + FloatConst + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    /// Lossy conversion from `f64`; every supported scalar can represent
    /// (a rounding of) any finite `f64`.
    fn of(value: f64) -> Self {
        Self::from_f64(value).expect("f64 is representable in every Real")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("Real converts to f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Largest absolute coordinate, the `|x|_inf` norm. Zero for an empty slice.
pub fn sup_norm<T: Real>(x: &[T]) -> T {
    x.iter().fold(T::zero(), |acc, v| acc.max(v.abs()))
}

/// Mean that is exact when every input is identical: deviations are
/// accumulated relative to the first element.
pub fn shifted_mean<I>(values: I) -> Option<f64>
where
    I: IntoIterator<Item = f64>,
{
    let mut iter = values.into_iter();
    let first = iter.next()?;
    let mut n = 1usize;
    let mut acc = 0.0;
    for v in iter {
        acc += v - first;
        n += 1;
    }
    Some(first + acc / n as f64)
}

pub(crate) fn gcd(mut a: u32, mut b: u32) -> u32 {
    while b != 0 {
        let r = a % b;
        a = b;
        b = r;
    }
    a
}
