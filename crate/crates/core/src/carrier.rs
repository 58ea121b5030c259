//! Numeric carriers the network code is generic over.
//!
//! A carrier is an arithmetic context plus an element type. Field elements
//! are raw residues interpreted by [`FieldParams`], so a single context is
//! shared by every entry of a model or matrix.

use std::fmt::Debug;

use num_bigint::BigInt;
use num_traits::{ToPrimitive, Zero};

use crate::error::{Error, Result};
use crate::field::FieldParams;

pub trait Carrier: Clone + Send + Sync + Debug {
    type Elem: Clone + PartialEq + Debug + Send + Sync;

    fn zero(&self) -> Self::Elem;
    fn from_i64(&self, v: i64) -> Self::Elem;
    /// Embeds a signed integer, failing if it does not fit the carrier.
    fn from_int(&self, v: &BigInt) -> Result<Self::Elem>;
    fn add(&self, a: &Self::Elem, b: &Self::Elem) -> Self::Elem;
    fn sub(&self, a: &Self::Elem, b: &Self::Elem) -> Self::Elem;
    fn mul(&self, a: &Self::Elem, b: &Self::Elem) -> Self::Elem;
    /// Real value of an element; field residues go through the signed view.
    fn to_f64(&self, a: &Self::Elem) -> f64;

    fn add_assign(&self, a: &mut Self::Elem, b: &Self::Elem) {
        *a = self.add(a, b);
    }

    fn square(&self, a: &Self::Elem) -> Self::Elem {
        self.mul(a, a)
    }

    fn double(&self, a: &Self::Elem) -> Self::Elem {
        self.add(a, a)
    }
}

/// Exact signed integers.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Integers;

/// Double-precision reals.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Reals;

impl Carrier for FieldParams {
    type Elem = num_bigint::BigUint;

    fn zero(&self) -> Self::Elem {
        num_bigint::BigUint::zero()
    }
    fn from_i64(&self, v: i64) -> Self::Elem {
        FieldParams::from_i64(self, v)
    }
    fn from_int(&self, v: &BigInt) -> Result<Self::Elem> {
        self.from_signed(v)
    }
    fn add(&self, a: &Self::Elem, b: &Self::Elem) -> Self::Elem {
        FieldParams::add(self, a, b)
    }
    fn sub(&self, a: &Self::Elem, b: &Self::Elem) -> Self::Elem {
        FieldParams::sub(self, a, b)
    }
    fn mul(&self, a: &Self::Elem, b: &Self::Elem) -> Self::Elem {
        FieldParams::mul(self, a, b)
    }
    fn to_f64(&self, a: &Self::Elem) -> f64 {
        FieldParams::to_f64(self, a)
    }
}

impl Carrier for Integers {
    type Elem = BigInt;

    fn zero(&self) -> BigInt {
        BigInt::zero()
    }
    fn from_i64(&self, v: i64) -> BigInt {
        BigInt::from(v)
    }
    fn from_int(&self, v: &BigInt) -> Result<BigInt> {
        Ok(v.clone())
    }
    fn add(&self, a: &BigInt, b: &BigInt) -> BigInt {
        a + b
    }
    fn sub(&self, a: &BigInt, b: &BigInt) -> BigInt {
        a - b
    }
    fn mul(&self, a: &BigInt, b: &BigInt) -> BigInt {
        a * b
    }
    fn to_f64(&self, a: &BigInt) -> f64 {
        a.to_f64().unwrap_or(f64::NAN)
    }
    fn add_assign(&self, a: &mut BigInt, b: &BigInt) {
        *a += b;
    }
}

impl Carrier for Reals {
    type Elem = f64;

    fn zero(&self) -> f64 {
        0.0
    }
    fn from_i64(&self, v: i64) -> f64 {
        v as f64
    }
    fn from_int(&self, v: &BigInt) -> Result<f64> {
        v.to_f64()
            .filter(|x| x.is_finite())
            .ok_or_else(|| Error::domain(format!("{v} is not representable as f64")))
    }
    fn add(&self, a: &f64, b: &f64) -> f64 {
        a + b
    }
    fn sub(&self, a: &f64, b: &f64) -> f64 {
        a - b
    }
    fn mul(&self, a: &f64, b: &f64) -> f64 {
        a * b
    }
    fn to_f64(&self, a: &f64) -> f64 {
        *a
    }
    fn add_assign(&self, a: &mut f64, b: &f64) {
        *a += b;
    }
}
