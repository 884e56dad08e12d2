//! Dense row-major arrays over a selectable scalar type.
//!
//! Training runs at 32 bits; gradient verification forces 64 bits, where
//! finite-difference noise sits far below the tolerances being checked.

use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::error::{Error, Result};

/// Scalar element type of the engine. Implemented for `f32` and `f64`.
pub trait Element:
    Copy
    + PartialOrd
    + fmt::Debug
    + fmt::Display
    + Default
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn zero() -> Self;
    fn one() -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn tanh(self) -> Self;
    fn is_finite(self) -> bool;
}

macro_rules! impl_element {
    ($t:ty) => {
        impl Element for $t {
            #[inline]
            fn from_f64(v: f64) -> Self {
                v as $t
            }
            #[inline]
            fn to_f64(self) -> f64 {
                self as f64
            }
            #[inline]
            fn zero() -> Self {
                0.0
            }
            #[inline]
            fn one() -> Self {
                1.0
            }
            #[inline]
            fn exp(self) -> Self {
                <$t>::exp(self)
            }
            #[inline]
            fn ln(self) -> Self {
                <$t>::ln(self)
            }
            #[inline]
            fn tanh(self) -> Self {
                <$t>::tanh(self)
            }
            #[inline]
            fn is_finite(self) -> bool {
                <$t>::is_finite(self)
            }
        }
    };
}

impl_element!(f32);
impl_element!(f64);

/// Logistic sigmoid, stable for large negative inputs.
#[inline]
pub fn sigmoid<F: Element>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

/// Dense array: a shape plus a row-major scalar buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Array<F: Element> {
    shape: Vec<usize>,
    data: Vec<F>,
}

impl<F: Element + serde::Serialize> serde::Serialize for Array<F> {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut st = s.serialize_struct("Array", 2)?;
        st.serialize_field("shape", &self.shape)?;
        st.serialize_field("data", &self.data)?;
        st.end()
    }
}

impl<'de, F: Element + serde::Deserialize<'de>> serde::Deserialize<'de> for Array<F> {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(serde::Deserialize)]
        struct Repr<F> {
            shape: Vec<usize>,
            data: Vec<F>,
        }
        let r = Repr::<F>::deserialize(d)?;
        if r.shape.iter().product::<usize>() != r.data.len() {
            return Err(serde::de::Error::custom(
                "array shape does not match buffer length",
            ));
        }
        Ok(Array {
            shape: r.shape,
            data: r.data,
        })
    }
}

impl<F: Element> Array<F> {
    pub fn from_vec(shape: Vec<usize>, data: Vec<F>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape {:?} does not match buffer length {}",
            shape,
            data.len()
        );
        Array { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Array {
            shape,
            data: vec![F::zero(); n],
        }
    }

    pub fn scalar(v: F) -> Self {
        Array {
            shape: vec![],
            data: vec![v],
        }
    }

    pub fn vector(data: Vec<F>) -> Self {
        Array {
            shape: vec![data.len()],
            data,
        }
    }

    /// Row-major matrix from nested rows. All rows must share a length.
    pub fn matrix(rows: Vec<Vec<F>>) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in &rows {
            assert_eq!(row.len(), c, "ragged rows in matrix constructor");
            data.extend_from_slice(row);
        }
        Array {
            shape: vec![r, c],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// A one-element array of any rank acts as a scalar for broadcasting.
    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<F> {
        self.data
    }

    /// Element of a rank-2 array.
    #[inline]
    pub fn at2(&self, r: usize, c: usize) -> F {
        debug_assert_eq!(self.rank(), 2);
        self.data[r * self.shape[1] + c]
    }

    /// Row slice of a rank-2 array.
    pub fn row(&self, r: usize) -> &[F] {
        debug_assert_eq!(self.rank(), 2);
        let c = self.shape[1];
        &self.data[r * c..(r + 1) * c]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map<G: Element>(&self, f: impl Fn(F) -> G) -> Array<G> {
        Array {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn to_f64(&self) -> Array<f64> {
        self.map(|v| v.to_f64())
    }

    pub fn to_f32(&self) -> Array<f32> {
        self.map(|v| v.to_f64() as f32)
    }

    pub(crate) fn shape_string(&self) -> String {
        format!("{:?}", self.shape)
    }

    pub(crate) fn expect_matrix(&self, op: &'static str) -> Result<(usize, usize)> {
        if self.rank() == 2 {
            Ok((self.shape[0], self.shape[1]))
        } else {
            Err(Error::ShapeMismatch {
                op,
                lhs: self.shape_string(),
                rhs: "a rank-2 array".to_string(),
            })
        }
    }
}
