//! Prime-field arithmetic over arbitrary-precision residues.
//!
//! [`FieldParams`] is a cheaply clonable handle to a prime modulus. It doubles
//! as the arithmetic context for raw [`BigUint`] residues, which is what the
//! bulk matrix code stores. [`FieldElement`] pairs a residue with its
//! parameters for the scalar API.
//!
//! The signed view maps `[0, (p-1)/2)` to itself and `[(p-1)/2, p)` to
//! `residue - p`, so `(p-1)/2` itself is negative.

use std::fmt;
use std::sync::Arc;

use num_bigint::{BigInt, BigUint, RandBigInt, Sign};
use num_integer::Integer;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Miller-Rabin rounds used when validating a configured modulus.
pub const PRIMALITY_ROUNDS: usize = 40;

const SMALL_PRIMES: [u32; 25] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89, 97,
];

struct Inner {
    modulus: BigUint,
    half: BigUint,
    expr: String,
}

/// A validated prime modulus `p` with `(p-1)/2` cached.
#[derive(Clone)]
pub struct FieldParams(Arc<Inner>);

impl FieldParams {
    /// Validates `modulus` (at least 3, probable prime) and builds the context.
    pub fn new(modulus: BigUint) -> Result<Self> {
        let expr = modulus.to_str_radix(10);
        Self::with_expr(modulus, expr)
    }

    pub fn from_u64(modulus: u64) -> Result<Self> {
        Self::new(BigUint::from(modulus))
    }

    /// Parses a decimal literal or a `b^k`, `b^k - c`, `b^k + c` expression
    /// such as `2^200-75`.
    pub fn parse(expr: &str) -> Result<Self> {
        let modulus = parse_modulus_expr(expr)?;
        Self::with_expr(modulus, expr.trim().to_string())
    }

    fn with_expr(modulus: BigUint, expr: String) -> Result<Self> {
        if modulus < BigUint::from(3u32) {
            return Err(Error::config(format!("modulus {modulus} must be at least 3")));
        }
        if !is_probable_prime(&modulus, PRIMALITY_ROUNDS) {
            return Err(Error::config(format!("modulus {expr} is not prime")));
        }
        let half = (&modulus - 1u32) >> 1;
        Ok(FieldParams(Arc::new(Inner { modulus, half, expr })))
    }

    pub fn modulus(&self) -> &BigUint {
        &self.0.modulus
    }

    /// `(p-1)/2`.
    pub fn half(&self) -> &BigUint {
        &self.0.half
    }

    /// The expression the modulus was configured with.
    pub fn expr(&self) -> &str {
        &self.0.expr
    }

    pub fn bits(&self) -> u64 {
        self.0.modulus.bits()
    }

    pub fn element(&self, residue: impl Into<BigUint>) -> FieldElement {
        FieldElement {
            residue: residue.into() % self.modulus(),
            params: self.clone(),
        }
    }

    pub fn zero(&self) -> FieldElement {
        self.element(0u32)
    }

    pub fn reduce(&self, v: &BigUint) -> BigUint {
        v % self.modulus()
    }

    /// `z mod p` for any signed integer, without capacity checks.
    pub fn reduce_signed(&self, z: &BigInt) -> BigUint {
        let p = BigInt::from_biguint(Sign::Plus, self.modulus().clone());
        z.mod_floor(&p)
            .to_biguint()
            .expect("mod_floor by a positive modulus is nonnegative")
    }

    pub fn add(&self, a: &BigUint, b: &BigUint) -> BigUint {
        let s = a + b;
        if &s >= self.modulus() {
            s - self.modulus()
        } else {
            s
        }
    }

    pub fn sub(&self, a: &BigUint, b: &BigUint) -> BigUint {
        if a >= b {
            a - b
        } else {
            self.modulus() - (b - a)
        }
    }

    pub fn neg(&self, a: &BigUint) -> BigUint {
        if a.is_zero() {
            BigUint::zero()
        } else {
            self.modulus() - a
        }
    }

    pub fn mul(&self, a: &BigUint, b: &BigUint) -> BigUint {
        (a * b) % self.modulus()
    }

    pub fn pow(&self, a: &BigUint, e: &BigUint) -> BigUint {
        a.modpow(e, self.modulus())
    }

    /// Multiplicative inverse via the extended Euclidean algorithm.
    pub fn inv(&self, a: &BigUint) -> Result<BigUint> {
        let a = a % self.modulus();
        if a.is_zero() {
            return Err(Error::domain("inverse of zero"));
        }
        let p = BigInt::from(self.modulus().clone());
        let ext = BigInt::from(a).extended_gcd(&p);
        if !ext.gcd.is_one() {
            return Err(Error::domain("element is not invertible"));
        }
        Ok(self.reduce_signed(&ext.x))
    }

    /// Signed representative: `a` if `a < (p-1)/2`, else `a - p`.
    pub fn to_signed(&self, a: &BigUint) -> BigInt {
        if a < self.half() {
            BigInt::from(a.clone())
        } else {
            BigInt::from(a.clone()) - BigInt::from(self.modulus().clone())
        }
    }

    /// Embeds a signed integer. Accepts `-(p-1)/2 <= z < (p-1)/2`, which is
    /// the range on which [`FieldParams::to_signed`] inverts this map.
    pub fn from_signed(&self, z: &BigInt) -> Result<BigUint> {
        if !self.fits_signed(z) {
            return Err(Error::CapacityOverflow {
                value: z.abs().to_string(),
                half: self.half().to_string(),
            });
        }
        Ok(self.reduce_signed(z))
    }

    pub fn fits_signed(&self, z: &BigInt) -> bool {
        let mag = z.magnitude();
        match z.sign() {
            Sign::Minus => mag <= self.half(),
            _ => mag < self.half(),
        }
    }

    pub fn from_i64(&self, v: i64) -> BigUint {
        self.reduce_signed(&BigInt::from(v))
    }

    /// Signed view as `f64` (lossy for large magnitudes).
    pub fn to_f64(&self, a: &BigUint) -> f64 {
        self.to_signed(a).to_f64().unwrap_or(f64::NAN)
    }

    pub fn random<R: Rng + ?Sized>(&self, rng: &mut R) -> BigUint {
        rng.gen_biguint_below(self.modulus())
    }

    pub fn check_same(&self, other: &FieldParams) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::config(format!(
                "modulus mismatch: {} vs {}",
                self.expr(),
                other.expr()
            )))
        }
    }
}

impl PartialEq for FieldParams {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0) || self.0.modulus == other.0.modulus
    }
}

impl Eq for FieldParams {}

impl fmt::Debug for FieldParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "FieldParams({})", self.expr())
    }
}

/// A residue in `[0, p)` tagged with its field.
#[derive(Clone, PartialEq, Eq)]
pub struct FieldElement {
    residue: BigUint,
    params: FieldParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldOp {
    Add,
    Sub,
    Mul,
    /// Inverse of the first operand; the second is ignored.
    Inv,
    /// First operand raised to the residue of the second.
    Pow,
}

/// Binary dispatch over [`FieldOp`].
pub fn field_arith(a: &FieldElement, b: &FieldElement, op: FieldOp) -> Result<FieldElement> {
    a.params.check_same(&b.params)?;
    let f = &a.params;
    let residue = match op {
        FieldOp::Add => f.add(&a.residue, &b.residue),
        FieldOp::Sub => f.sub(&a.residue, &b.residue),
        FieldOp::Mul => f.mul(&a.residue, &b.residue),
        FieldOp::Inv => f.inv(&a.residue)?,
        FieldOp::Pow => f.pow(&a.residue, &b.residue),
    };
    Ok(FieldElement {
        residue,
        params: f.clone(),
    })
}

impl FieldElement {
    pub fn residue(&self) -> &BigUint {
        &self.residue
    }

    pub fn params(&self) -> &FieldParams {
        &self.params
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        field_arith(self, other, FieldOp::Add)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        field_arith(self, other, FieldOp::Sub)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        field_arith(self, other, FieldOp::Mul)
    }

    pub fn inv(&self) -> Result<Self> {
        field_arith(self, self, FieldOp::Inv)
    }

    pub fn pow(&self, exp: &BigUint) -> Self {
        FieldElement {
            residue: self.params.pow(&self.residue, exp),
            params: self.params.clone(),
        }
    }

    pub fn to_signed(&self) -> BigInt {
        self.params.to_signed(&self.residue)
    }

    pub fn from_signed(z: &BigInt, params: &FieldParams) -> Result<Self> {
        Ok(FieldElement {
            residue: params.from_signed(z)?,
            params: params.clone(),
        })
    }
}

impl fmt::Debug for FieldElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (mod {})", self.residue, self.params.expr())
    }
}

impl fmt::Display for FieldElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.residue)
    }
}

fn parse_modulus_expr(expr: &str) -> Result<BigUint> {
    let s: String = expr.chars().filter(|c| !c.is_whitespace()).collect();
    let bad = || Error::config(format!("cannot parse modulus expression {expr:?}"));
    if s.is_empty() {
        return Err(bad());
    }
    let Some((base, rest)) = s.split_once('^') else {
        return s.parse::<BigUint>().map_err(|_| bad());
    };
    let base: BigUint = base.parse().map_err(|_| bad())?;
    let split = rest.find(['+', '-']);
    let (exp, tail) = match split {
        Some(i) => rest.split_at(i),
        None => (rest, ""),
    };
    let exp: u32 = exp.parse().map_err(|_| bad())?;
    let power = num_traits::pow(base, exp as usize);
    if tail.is_empty() {
        return Ok(power);
    }
    let offset: BigUint = tail[1..].parse().map_err(|_| bad())?;
    if tail.starts_with('+') {
        Ok(power + offset)
    } else if offset > power {
        Err(bad())
    } else {
        Ok(power - offset)
    }
}

/// Miller-Rabin with deterministic (seeded) random bases.
pub fn is_probable_prime(n: &BigUint, rounds: usize) -> bool {
    let two = BigUint::from(2u32);
    if n < &two {
        return false;
    }
    for &sp in SMALL_PRIMES.iter() {
        let sp = BigUint::from(sp);
        if n == &sp {
            return true;
        }
        if (n % &sp).is_zero() {
            return false;
        }
    }
    let n_minus_one = n - 1u32;
    let s = n_minus_one.trailing_zeros().unwrap_or(0);
    let d = &n_minus_one >> s;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0f_9e1e);
    'witness: for _ in 0..rounds {
        let a = rng.gen_biguint_range(&two, &n_minus_one);
        let mut x = a.modpow(&d, n);
        if x.is_one() || x == n_minus_one {
            continue;
        }
        for _ in 1..s {
            x = (&x * &x) % n;
            if x == n_minus_one {
                continue 'witness;
            }
        }
        return false;
    }
    true
}
