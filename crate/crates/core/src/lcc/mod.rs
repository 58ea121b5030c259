//! Lagrange coding: evaluation points, encoding of dataset shards, and
//! decoding of coded computations by interpolation.
//!
//! A source splits its data into `K` shards and appends `T` uniformly random
//! masks. The unique polynomial of degree `K+T-1` passing through those
//! matrices at `beta_1..beta_{K+T}` is evaluated at `alpha_j` to produce the
//! share for client `j`. Any polynomial `g` of degree `deg_g` applied to the
//! shares yields evaluations of `g(u(z))`, a polynomial of degree
//! `deg_g * (K+T-1)`, so that many plus one evaluations pin it down and
//! evaluating the interpolant at `beta_k` gives `g(shard_k)`.

mod shares;

use std::collections::BTreeMap;

use num_bigint::BigUint;
use num_traits::Zero;

use crate::error::{Error, Result};
use crate::field::FieldParams;
use crate::matrix::Matrix;

pub use shares::{read_shares, write_shares, ClientShares, ShareSet, SourceMasks};

/// Deterministic evaluation points: `betas = 1..=K+T`, `alphas = K+T+1..=K+T+N`
/// (the last point wraps to 0 when `N+K+T = p`).
pub fn gen_eval_points(
    n_clients: usize,
    shards: usize,
    privacy: usize,
    field: &FieldParams,
) -> Result<(Vec<BigUint>, Vec<BigUint>)> {
    let total = n_clients + shards + privacy;
    if BigUint::from(total) > *field.modulus() {
        return Err(Error::config(format!(
            "field with modulus {} has too few elements for {total} evaluation points",
            field.expr()
        )));
    }
    let kt = shards + privacy;
    let point = |i: usize| field.reduce(&BigUint::from(i));
    let betas = (1..=kt).map(point).collect();
    let alphas = (kt + 1..=total).map(point).collect();
    Ok((alphas, betas))
}

/// Coding parameters `(N, K, T, deg_g)` with their evaluation points.
#[derive(Debug, Clone)]
pub struct CodingConfig {
    field: FieldParams,
    n_clients: usize,
    shards: usize,
    privacy: usize,
    grad_degree: usize,
    alphas: Vec<BigUint>,
    betas: Vec<BigUint>,
}

impl CodingConfig {
    pub fn new(
        field: FieldParams,
        n_clients: usize,
        shards: usize,
        privacy: usize,
        grad_degree: usize,
    ) -> Result<Self> {
        let (alphas, betas) = gen_eval_points(n_clients, shards, privacy, &field)?;
        Self::with_points(field, n_clients, shards, privacy, grad_degree, alphas, betas)
    }

    pub fn with_points(
        field: FieldParams,
        n_clients: usize,
        shards: usize,
        privacy: usize,
        grad_degree: usize,
        alphas: Vec<BigUint>,
        betas: Vec<BigUint>,
    ) -> Result<Self> {
        if shards == 0 {
            return Err(Error::config("K (shards) must be at least 1"));
        }
        if grad_degree == 0 {
            return Err(Error::config("gradient degree must be at least 1"));
        }
        let needed = grad_degree * (shards + privacy - 1) + 1;
        if needed > n_clients {
            return Err(Error::config(format!(
                "infeasible coding: D + deg_g*(K+T-1) + 1 <= N requires N >= {needed} \
                 for deg_g={grad_degree}, K={shards}, T={privacy}, but N={n_clients}"
            )));
        }
        if alphas.len() != n_clients || betas.len() != shards + privacy {
            return Err(Error::config(format!(
                "expected {n_clients} alphas and {} betas, got {} and {}",
                shards + privacy,
                alphas.len(),
                betas.len()
            )));
        }
        let mut seen = std::collections::BTreeSet::new();
        for pt in alphas.iter().chain(betas.iter()) {
            let r = field.reduce(pt);
            if !seen.insert(r) {
                return Err(Error::config(format!(
                    "evaluation point {pt} repeated (alphas and betas must be distinct and disjoint)"
                )));
            }
        }
        Ok(CodingConfig {
            field,
            n_clients,
            shards,
            privacy,
            grad_degree,
            alphas,
            betas,
        })
    }

    pub fn field(&self) -> &FieldParams {
        &self.field
    }
    pub fn n_clients(&self) -> usize {
        self.n_clients
    }
    pub fn shards(&self) -> usize {
        self.shards
    }
    pub fn privacy(&self) -> usize {
        self.privacy
    }
    pub fn grad_degree(&self) -> usize {
        self.grad_degree
    }
    pub fn alphas(&self) -> &[BigUint] {
        &self.alphas
    }
    pub fn betas(&self) -> &[BigUint] {
        &self.betas
    }

    /// Uploads needed to decode: `deg_g * (K+T-1) + 1`.
    pub fn recovery_threshold(&self) -> usize {
        self.grad_degree * (self.shards + self.privacy - 1) + 1
    }

    /// Largest number of dropouts the scheme tolerates.
    pub fn max_dropouts(&self) -> usize {
        self.n_clients - self.recovery_threshold()
    }
}

/// Free-standing form of [`CodingConfig::max_dropouts`].
pub fn max_dropouts(cfg: &CodingConfig) -> usize {
    cfg.max_dropouts()
}

/// Lagrange basis values `l_i(target)` for nodes `xs`.
pub fn lagrange_coefficients(
    field: &FieldParams,
    xs: &[BigUint],
    target: &BigUint,
) -> Result<Vec<BigUint>> {
    if xs.is_empty() {
        return Err(Error::domain("interpolation needs at least one point"));
    }
    let xs: Vec<BigUint> = xs.iter().map(|x| field.reduce(x)).collect();
    let target = field.reduce(target);
    let diffs: Vec<BigUint> = xs.iter().map(|x| field.sub(&target, x)).collect();
    let mut out = Vec::with_capacity(xs.len());
    for (i, xi) in xs.iter().enumerate() {
        let mut num = BigUint::from(1u32);
        let mut den = BigUint::from(1u32);
        for (m, xm) in xs.iter().enumerate() {
            if m == i {
                continue;
            }
            let d = field.sub(xi, xm);
            if d.is_zero() {
                return Err(Error::domain(format!("duplicate interpolation node {xi}")));
            }
            num = field.mul(&num, &diffs[m]);
            den = field.mul(&den, &d);
        }
        out.push(field.mul(&num, &field.inv(&den)?));
    }
    Ok(out)
}

/// Evaluates at `target` the unique polynomial of degree `< points.len()`
/// through `points`, component-wise.
pub fn lagrange_interpolate_eval(
    field: &FieldParams,
    points: &[(BigUint, Vec<BigUint>)],
    target: &BigUint,
) -> Result<Vec<BigUint>> {
    let xs: Vec<BigUint> = points.iter().map(|(x, _)| x.clone()).collect();
    let coeffs = lagrange_coefficients(field, &xs, target)?;
    let width = points[0].1.len();
    if points.iter().any(|(_, y)| y.len() != width) {
        return Err(Error::domain("interpolation values have differing lengths"));
    }
    Ok(combine(field, &coeffs, points.iter().map(|(_, y)| y.as_slice()), width))
}

fn combine<'a>(
    field: &FieldParams,
    coeffs: &[BigUint],
    values: impl Iterator<Item = &'a [BigUint]>,
    width: usize,
) -> Vec<BigUint> {
    // accumulate unreduced, reduce once per entry
    let mut acc = vec![BigUint::zero(); width];
    for (c, ys) in coeffs.iter().zip(values) {
        for (a, y) in acc.iter_mut().zip(ys) {
            *a += c * y;
        }
    }
    acc.into_iter().map(|a| field.reduce(&a)).collect()
}

/// Encodes `K` shards and `T` masks (all of one shape) into one matrix per
/// alpha: output `j` is `u(alpha_j)` where `u(beta_k)` is the `k`-th of
/// `shards ++ masks`.
pub fn encode_dataset(
    field: &FieldParams,
    shards: &[Matrix<BigUint>],
    masks: &[Matrix<BigUint>],
    betas: &[BigUint],
    alphas: &[BigUint],
) -> Result<Vec<Matrix<BigUint>>> {
    let blocks: Vec<&Matrix<BigUint>> = shards.iter().chain(masks).collect();
    let Some(first) = blocks.first() else {
        return Err(Error::domain("nothing to encode"));
    };
    if blocks.iter().any(|b| b.shape() != first.shape()) {
        return Err(Error::domain("shards and masks must share one shape"));
    }
    if betas.len() != blocks.len() {
        return Err(Error::domain(format!(
            "{} betas for {} shards+masks",
            betas.len(),
            blocks.len()
        )));
    }
    let (rows, cols) = first.shape();
    alphas
        .iter()
        .map(|alpha| {
            let coeffs = lagrange_coefficients(field, betas, alpha)?;
            let data = combine(field, &coeffs, blocks.iter().map(|b| b.data()), rows * cols);
            Matrix::from_vec(rows, cols, data)
        })
        .collect()
}

/// Result of attempting to decode a round's uploads.
#[derive(Debug, Clone, PartialEq)]
pub enum DecodeOutcome {
    /// One vector per shard `k`, the composite evaluated at `beta_k`.
    Decoded(Vec<Vec<BigUint>>),
    /// Too few uploads; the round must be skipped.
    Skip { received: usize, required: usize },
}

/// Interpolates the composite polynomial from the uploads of the
/// lowest-numbered clients and evaluates it at each `beta_k`, `k <= K`.
///
/// Keys are 0-based client indices into `cfg.alphas()`.
pub fn decode_gradients(
    uploads: &BTreeMap<usize, Vec<BigUint>>,
    cfg: &CodingConfig,
) -> Result<DecodeOutcome> {
    let required = cfg.recovery_threshold();
    if uploads.len() < required {
        return Ok(DecodeOutcome::Skip {
            received: uploads.len(),
            required,
        });
    }
    let chosen: Vec<(&usize, &Vec<BigUint>)> = uploads.iter().take(required).collect();
    let width = chosen[0].1.len();
    let mut xs = Vec::with_capacity(required);
    for (&j, y) in &chosen {
        let alpha = cfg.alphas.get(j).ok_or_else(|| {
            Error::domain(format!("upload from unknown client {j}"))
        })?;
        if y.len() != width {
            return Err(Error::domain("uploads have differing lengths"));
        }
        xs.push(alpha.clone());
    }
    let decoded = cfg.betas[..cfg.shards]
        .iter()
        .map(|beta| {
            let coeffs = lagrange_coefficients(&cfg.field, &xs, beta)?;
            Ok(combine(
                &cfg.field,
                &coeffs,
                chosen.iter().map(|(_, y)| y.as_slice()),
                width,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DecodeOutcome::Decoded(decoded))
}
