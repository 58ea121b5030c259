//! Fixed-point transformation between real data and field residues, and the
//! unbiased stochastic rounding used for model updates.

use num_bigint::{BigInt, BigUint};
use num_traits::{FromPrimitive, ToPrimitive};
use rand::Rng;

use crate::error::{Error, Result};
use crate::field::FieldParams;
use crate::matrix::Matrix;

/// Scale `2^l` and shift `c` for `Round(2^l * (x + c))`.
#[derive(Debug, Clone)]
pub struct QuantConfig {
    scale_bits: u32,
    shift: f64,
    field: FieldParams,
}

impl QuantConfig {
    pub fn new(scale_bits: u32, shift: f64, field: FieldParams) -> Result<Self> {
        if !(shift >= 0.0 && shift.is_finite()) {
            return Err(Error::config(format!("shift must be finite and >= 0, got {shift}")));
        }
        Ok(QuantConfig {
            scale_bits,
            shift,
            field,
        })
    }

    /// Like [`QuantConfig::new`] but also checks that every input with
    /// `|x| <= max_abs_input` embeds without overflow.
    pub fn with_capacity(
        scale_bits: u32,
        shift: f64,
        field: FieldParams,
        max_abs_input: f64,
    ) -> Result<Self> {
        let cfg = Self::new(scale_bits, shift, field)?;
        let worst = (cfg.scale() * (max_abs_input + shift)).round();
        let worst = BigInt::from_f64(worst)
            .ok_or_else(|| Error::config("input bound is not finite"))?;
        if !cfg.field.fits_signed(&worst) {
            return Err(Error::CapacityOverflow {
                value: worst.to_string(),
                half: cfg.field.half().to_string(),
            });
        }
        Ok(cfg)
    }

    pub fn scale_bits(&self) -> u32 {
        self.scale_bits
    }

    pub fn shift(&self) -> f64 {
        self.shift
    }

    pub fn field(&self) -> &FieldParams {
        &self.field
    }

    pub fn scale(&self) -> f64 {
        (self.scale_bits as f64).exp2()
    }

    /// `Round(2^l * (x + c))` as a signed integer, rounding half away from zero.
    pub fn quantize(&self, x: f64) -> Result<BigInt> {
        let shifted = x + self.shift;
        if !(shifted >= 0.0) {
            return Err(Error::domain(format!(
                "entry {x} is negative after shifting by {}",
                self.shift
            )));
        }
        BigInt::from_f64((shifted * self.scale()).round())
            .ok_or_else(|| Error::domain(format!("entry {x} is not finite")))
    }

    /// Inverse of [`QuantConfig::quantize`] up to rounding error.
    pub fn dequantize(&self, z: &BigInt) -> f64 {
        z.to_f64().unwrap_or(f64::NAN) / self.scale() - self.shift
    }
}

pub fn real_to_field(x: &Matrix<f64>, cfg: &QuantConfig) -> Result<Matrix<BigUint>> {
    x.try_map(|&v| cfg.field.from_signed(&cfg.quantize(v)?))
}

pub fn field_to_real(a: &Matrix<BigUint>, cfg: &QuantConfig) -> Matrix<f64> {
    a.map(|r| cfg.dequantize(&cfg.field.to_signed(r)))
}

/// Quantized features as plain integers (what the reference trainer uses).
pub fn real_to_int(x: &Matrix<f64>, cfg: &QuantConfig) -> Result<Matrix<BigInt>> {
    x.try_map(|&v| {
        let z = cfg.quantize(v)?;
        if !cfg.field.fits_signed(&z) {
            return Err(Error::CapacityOverflow {
                value: z.to_string(),
                half: cfg.field.half().to_string(),
            });
        }
        Ok(z)
    })
}

/// One-hot label rows scaled by `2^l`.
pub fn one_hot_scaled(labels: &[usize], n_classes: usize, cfg: &QuantConfig) -> Result<Matrix<BigInt>> {
    if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
        return Err(Error::domain(format!("label {bad} outside 0..{n_classes}")));
    }
    let hot = BigInt::from(1u8) << cfg.scale_bits;
    let cold = BigInt::from(0u8);
    Ok(Matrix::from_fn(labels.len(), n_classes, |r, c| {
        if labels[r] == c {
            hot.clone()
        } else {
            cold.clone()
        }
    }))
}

/// Rounds `z` down with probability `1 - frac(z)` and up otherwise.
///
/// Consumes exactly one `f64` draw from `rng`, so streams stay aligned across
/// runs that quantize the same sequence of values.
pub fn stochastic_round<R: Rng + ?Sized>(z: f64, rng: &mut R) -> BigInt {
    let u: f64 = rng.gen();
    let floor = z.floor();
    let frac = z - floor;
    let base = BigInt::from_f64(floor).unwrap_or_default();
    if u < frac {
        base + 1
    } else {
        base
    }
}
