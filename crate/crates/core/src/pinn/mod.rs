//! Polynomial integer networks: affine layers separated by squaring
//! activations, trained on the summed squared error.
//!
//! The same code runs over any [`Carrier`]: field residues (what clients
//! compute on shares), exact integers, and `f64` (used for gradient checks
//! and the plaintext baseline).

mod checkpoint;

use num_bigint::{BigInt, BigUint};
use rand::Rng;

use crate::carrier::Carrier;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub use checkpoint::{read_checkpoint, write_checkpoint};

/// Layer widths `[d_x, h_1, ..., h_L, d_y]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PinnArch {
    layer_dims: Vec<usize>,
}

impl PinnArch {
    pub fn new(layer_dims: Vec<usize>) -> Result<Self> {
        if layer_dims.len() < 2 {
            return Err(Error::config("an architecture needs at least input and output widths"));
        }
        if layer_dims.contains(&0) {
            return Err(Error::config("layer widths must be positive"));
        }
        Ok(PinnArch { layer_dims })
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    /// Number of squaring activations `L`.
    pub fn n_activations(&self) -> usize {
        self.layer_dims.len() - 2
    }

    pub fn n_affine(&self) -> usize {
        self.layer_dims.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    /// Total parameter count `d_w`.
    pub fn param_count(&self) -> usize {
        self.layer_dims
            .windows(2)
            .map(|w| w[1] * w[0] + w[1])
            .sum()
    }

    /// Degree of the gradient as a polynomial in the data.
    pub fn grad_degree(&self) -> usize {
        degree_of_gradient(self.n_activations())
    }
}

/// `2^(L+1)`.
pub fn degree_of_gradient(n_activations: usize) -> usize {
    1usize << (n_activations + 1)
}

/// Flat gradient ordered `(W_1, b_1, ..., W_{L+1}, b_{L+1})`, weights row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientVector<E>(pub Vec<E>);

impl<E> GradientVector<E> {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<E> {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PinnModel<C: Carrier> {
    arch: PinnArch,
    carrier: C,
    /// `W_l` has shape `(out, in)`.
    weights: Vec<Matrix<C::Elem>>,
    biases: Vec<Vec<C::Elem>>,
}

struct Trace<E> {
    /// `z_1 .. z_{L+1}`
    pre: Vec<Vec<E>>,
    /// `a_0 = x, a_1 .. a_L`
    act: Vec<Vec<E>>,
}

impl<C: Carrier> PinnModel<C> {
    /// Builds a model from a flat parameter vector in gradient order.
    pub fn from_flat(arch: PinnArch, carrier: C, params: Vec<C::Elem>) -> Result<Self> {
        if params.len() != arch.param_count() {
            return Err(Error::domain(format!(
                "{} parameters supplied, architecture needs {}",
                params.len(),
                arch.param_count()
            )));
        }
        let mut it = params.into_iter();
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in arch.layer_dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let wdata: Vec<C::Elem> = it.by_ref().take(fan_in * fan_out).collect();
            weights.push(Matrix::from_vec(fan_out, fan_in, wdata)?);
            biases.push(it.by_ref().take(fan_out).collect());
        }
        Ok(PinnModel {
            arch,
            carrier,
            weights,
            biases,
        })
    }

    /// Every parameter drawn uniformly from `[-bound, bound]`.
    pub fn init_uniform<R: Rng + ?Sized>(
        arch: PinnArch,
        carrier: C,
        bound: i64,
        rng: &mut R,
    ) -> Result<Self> {
        let params = (0..arch.param_count())
            .map(|_| carrier.from_int(&BigInt::from(rng.gen_range(-bound..=bound))))
            .collect::<Result<Vec<_>>>()?;
        Self::from_flat(arch, carrier, params)
    }

    pub fn arch(&self) -> &PinnArch {
        &self.arch
    }

    pub fn carrier(&self) -> &C {
        &self.carrier
    }

    pub fn weights(&self) -> &[Matrix<C::Elem>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vec<C::Elem>] {
        &self.biases
    }

    pub fn to_flat(&self) -> Vec<C::Elem> {
        let mut out = Vec::with_capacity(self.arch.param_count());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.data());
            out.extend_from_slice(b);
        }
        out
    }

    /// Re-expresses the model over another carrier.
    pub fn convert<D: Carrier>(
        &self,
        carrier: D,
        mut f: impl FnMut(&C::Elem) -> Result<D::Elem>,
    ) -> Result<PinnModel<D>> {
        let params = self.to_flat().iter().map(&mut f).collect::<Result<Vec<_>>>()?;
        PinnModel::from_flat(self.arch.clone(), carrier, params)
    }

    fn affine(&self, layer: usize, input: &[C::Elem]) -> Vec<C::Elem> {
        let c = &self.carrier;
        let w = &self.weights[layer];
        (0..w.rows())
            .map(|o| {
                let mut acc = self.biases[layer][o].clone();
                for (wi, xi) in w.row(o).iter().zip(input) {
                    c.add_assign(&mut acc, &c.mul(wi, xi));
                }
                acc
            })
            .collect()
    }

    fn trace(&self, x: &[C::Elem]) -> Trace<C::Elem> {
        let n = self.arch.n_affine();
        let mut pre = Vec::with_capacity(n);
        let mut act = Vec::with_capacity(n);
        act.push(x.to_vec());
        for l in 0..n {
            let z = self.affine(l, &act[l]);
            if l + 1 < n {
                act.push(z.iter().map(|v| self.carrier.square(v)).collect());
            }
            pre.push(z);
        }
        Trace { pre, act }
    }

    fn check_inputs(&self, x: &Matrix<C::Elem>, y: Option<&Matrix<C::Elem>>) -> Result<()> {
        if x.cols() != self.arch.input_dim() {
            return Err(Error::domain(format!(
                "input has {} columns, model expects {}",
                x.cols(),
                self.arch.input_dim()
            )));
        }
        if let Some(y) = y {
            if y.rows() != x.rows() || y.cols() != self.arch.output_dim() {
                return Err(Error::domain(format!(
                    "targets are {}x{}, expected {}x{}",
                    y.rows(),
                    y.cols(),
                    x.rows(),
                    self.arch.output_dim()
                )));
            }
        }
        Ok(())
    }

    /// Network outputs, one row per input row.
    pub fn forward(&self, x: &Matrix<C::Elem>) -> Result<Matrix<C::Elem>> {
        self.check_inputs(x, None)?;
        let rows: Vec<Vec<C::Elem>> = x
            .iter_rows()
            .map(|r| self.trace(r).pre.pop().unwrap())
            .collect();
        if rows.is_empty() {
            return Ok(Matrix::filled(0, self.arch.output_dim(), self.carrier.zero()));
        }
        Matrix::from_rows(&rows)
    }

    /// Summed squared error over the batch.
    pub fn loss(&self, x: &Matrix<C::Elem>, y: &Matrix<C::Elem>) -> Result<C::Elem> {
        self.check_inputs(x, Some(y))?;
        let c = &self.carrier;
        let out = self.forward(x)?;
        let mut acc = c.zero();
        for (o, t) in out.data().iter().zip(y.data()) {
            c.add_assign(&mut acc, &c.square(&c.sub(o, t)));
        }
        Ok(acc)
    }

    /// Gradient of the summed squared error with respect to every parameter,
    /// accumulated over rows in order.
    pub fn gradient(
        &self,
        x: &Matrix<C::Elem>,
        y: &Matrix<C::Elem>,
    ) -> Result<GradientVector<C::Elem>> {
        self.check_inputs(x, Some(y))?;
        let c = &self.carrier;
        let n = self.arch.n_affine();
        let mut gw: Vec<Matrix<C::Elem>> = self
            .weights
            .iter()
            .map(|w| Matrix::filled(w.rows(), w.cols(), c.zero()))
            .collect();
        let mut gb: Vec<Vec<C::Elem>> = self.biases.iter().map(|b| vec![c.zero(); b.len()]).collect();

        for (xr, yr) in x.iter_rows().zip(y.iter_rows()) {
            let tr = self.trace(xr);
            let mut delta: Vec<C::Elem> = tr.pre[n - 1]
                .iter()
                .zip(yr)
                .map(|(o, t)| c.double(&c.sub(o, t)))
                .collect();
            for l in (0..n).rev() {
                let a = &tr.act[l];
                let g = &mut gw[l];
                for (o, d) in delta.iter().enumerate() {
                    for (i, ai) in a.iter().enumerate() {
                        let v = c.add(g.get(o, i), &c.mul(d, ai));
                        g.set(o, i, v);
                    }
                    c.add_assign(&mut gb[l][o], d);
                }
                if l == 0 {
                    break;
                }
                let w = &self.weights[l];
                delta = (0..w.cols())
                    .map(|i| {
                        let mut back = c.zero();
                        for (o, d) in delta.iter().enumerate() {
                            c.add_assign(&mut back, &c.mul(w.get(o, i), d));
                        }
                        c.mul(&c.double(&tr.pre[l - 1][i]), &back)
                    })
                    .collect();
            }
        }

        let mut flat = Vec::with_capacity(self.arch.param_count());
        for (w, b) in gw.into_iter().zip(gb) {
            flat.extend(w.into_data());
            flat.extend(b);
        }
        Ok(GradientVector(flat))
    }
}

/// Upper bound on the magnitude of every intermediate value and gradient
/// entry for one sample, by interval propagation. Targets are assumed to be
/// bounded by `max_abs_input` as well.
pub fn capacity_bound(arch: &PinnArch, max_abs_input: &BigUint, max_abs_weight: &BigUint) -> BigUint {
    let dims = arch.layer_dims();
    let n = arch.n_affine();
    let w = max_abs_weight;
    let mut largest = max_abs_input.clone();
    let bump = |v: &BigUint, largest: &mut BigUint| {
        if v > largest {
            *largest = v.clone();
        }
    };

    let mut acts = vec![max_abs_input.clone()];
    let mut pres = Vec::with_capacity(n);
    for l in 0..n {
        let z = BigUint::from(dims[l]) * w * &acts[l] + w;
        bump(&z, &mut largest);
        if l + 1 < n {
            let a = &z * &z;
            bump(&a, &mut largest);
            acts.push(a);
        }
        pres.push(z);
    }
    let residual = &pres[n - 1] + max_abs_input;
    let mut delta: BigUint = residual * 2u32;
    for l in (0..n).rev() {
        bump(&delta, &mut largest);
        bump(&(&delta * &acts[l]), &mut largest);
        if l == 0 {
            break;
        }
        let back = BigUint::from(dims[l + 1]) * w * &delta;
        bump(&back, &mut largest);
        delta = &pres[l - 1] * 2u32 * back;
    }
    largest
}

/// [`capacity_bound`] for a batch of `rows` samples (gradients are summed).
pub fn batch_capacity_bound(
    arch: &PinnArch,
    max_abs_input: &BigUint,
    max_abs_weight: &BigUint,
    rows: usize,
) -> BigUint {
    capacity_bound(arch, max_abs_input, max_abs_weight) * BigUint::from(rows.max(1))
}

/// Index of the largest entry (first on ties).
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}
