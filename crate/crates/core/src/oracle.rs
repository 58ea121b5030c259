//! Reference implementations that share no arithmetic with the coded path.
//!
//! The centralized trainer runs its own batch backpropagation over plain
//! integers on the global dataset, and the composite check re-derives
//! encodings and interpolation from the Lagrange product formula.

use num_bigint::{BigInt, BigUint};
use num_traits::{Signed, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::carrier::Carrier;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::fedsim::{
    check_capacity, dequantize_f64, evaluate, sample_minibatch, score, DropoutModel, IntData,
    ProtocolSetup, RoundRecord, TrainConfig,
};
use crate::field::FieldParams;
use crate::fxp::{self, QuantConfig};
use crate::lcc::CodingConfig;
use crate::matrix::Matrix;
use crate::pinn::{PinnArch, PinnModel};

type Rows = Vec<Vec<BigInt>>;

/// All local datasets stacked in source order, with the shard view.
#[derive(Debug, Clone)]
pub struct GlobalDataset {
    pub x: Matrix<BigInt>,
    pub y: Matrix<BigInt>,
    pub labels: Vec<usize>,
    sizes: Vec<usize>,
    shards: usize,
}

impl GlobalDataset {
    pub fn new(parts: &[IntData], shards: usize) -> Result<Self> {
        if parts.iter().any(|p| p.x.rows() % shards != 0) {
            return Err(Error::domain("every source must hold a multiple of K rows"));
        }
        let xs: Vec<_> = parts.iter().map(|p| p.x.clone()).collect();
        let ys: Vec<_> = parts.iter().map(|p| p.y.clone()).collect();
        Ok(GlobalDataset {
            x: Matrix::vstack(&xs)?,
            y: Matrix::vstack(&ys)?,
            labels: parts.iter().flat_map(|p| p.labels.iter().copied()).collect(),
            sizes: parts.iter().map(|p| p.x.rows()).collect(),
            shards,
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    /// Global row numbers of shard `k` for coded row indices `batch`.
    pub fn shard_rows(&self, k: usize, batch: &[usize]) -> Result<Vec<usize>> {
        batch
            .iter()
            .map(|&g| {
                let (mut coded_start, mut global_start) = (0, 0);
                for &m in &self.sizes {
                    let per = m / self.shards;
                    if g < coded_start + per {
                        return Ok(global_start + k * per + (g - coded_start));
                    }
                    coded_start += per;
                    global_start += m;
                }
                Err(Error::domain(format!("coded row {g} out of range")))
            })
            .collect()
    }

    pub fn shard(&self, k: usize, batch: &[usize]) -> Result<(Matrix<BigInt>, Matrix<BigInt>)> {
        let rows = self.shard_rows(k, batch)?;
        Ok((self.x.select_rows(&rows), self.y.select_rows(&rows)))
    }
}

/// Integer network parameters as plain nested vectors.
#[derive(Debug, Clone, PartialEq)]
struct Layers {
    /// `w[l][o][i]`
    w: Vec<Rows>,
    b: Vec<Vec<BigInt>>,
}

fn unflatten(dims: &[usize], params: &[BigInt]) -> Result<Layers> {
    let need: usize = dims.windows(2).map(|d| d[0] * d[1] + d[1]).sum();
    if params.len() != need {
        return Err(Error::domain(format!("{} parameters for {need} slots", params.len())));
    }
    let mut it = params.iter().cloned();
    let mut layers = Layers { w: vec![], b: vec![] };
    for d in dims.windows(2) {
        let w = (0..d[1]).map(|_| it.by_ref().take(d[0]).collect()).collect();
        layers.w.push(w);
        layers.b.push(it.by_ref().take(d[1]).collect());
    }
    Ok(layers)
}

fn to_rows(m: &Matrix<BigInt>) -> Rows {
    m.iter_rows().map(<[BigInt]>::to_vec).collect()
}

/// `A W^T + 1 b^T`
fn affine(a: &Rows, w: &Rows, b: &[BigInt]) -> Rows {
    a.iter()
        .map(|row| {
            w.iter()
                .zip(b)
                .map(|(wo, bo)| row.iter().zip(wo).map(|(x, y)| x * y).sum::<BigInt>() + bo)
                .collect()
        })
        .collect()
}

fn hadamard_square(z: &Rows) -> Rows {
    z.iter().map(|r| r.iter().map(|v| v * v).collect()).collect()
}

/// Pre-activations of every layer for the whole batch.
fn forward_all(layers: &Layers, x: &Rows) -> Vec<Rows> {
    let n = layers.w.len();
    let mut pre = Vec::with_capacity(n);
    let mut a = x.clone();
    for l in 0..n {
        let z = affine(&a, &layers.w[l], &layers.b[l]);
        if l + 1 < n {
            a = hadamard_square(&z);
        }
        pre.push(z);
    }
    pre
}

/// Network outputs on integer inputs.
pub fn int_forward(dims: &[usize], params: &[BigInt], x: &Matrix<BigInt>) -> Result<Rows> {
    let layers = unflatten(dims, params)?;
    Ok(forward_all(&layers, &to_rows(x)).pop().unwrap_or_default())
}

/// Summed squared error over the batch.
pub fn batch_loss(dims: &[usize], params: &[BigInt], x: &Matrix<BigInt>, y: &Matrix<BigInt>) -> Result<BigInt> {
    let out = int_forward(dims, params, x)?;
    Ok(out
        .iter()
        .zip(y.iter_rows())
        .flat_map(|(o, t)| o.iter().zip(t).map(|(a, b)| (a - b) * (a - b)))
        .sum())
}

/// Gradient of the summed squared error, computed layer-wise on the whole
/// batch: `G_W = D^T A`, `g_b = 1^T D`, `D_prev = (D W) * 2 Z_prev`.
pub fn batch_gradient(dims: &[usize], params: &[BigInt], x: &Matrix<BigInt>, y: &Matrix<BigInt>) -> Result<Vec<BigInt>> {
    let layers = unflatten(dims, params)?;
    let xr = to_rows(x);
    let pre = forward_all(&layers, &xr);
    let n = layers.w.len();
    let mut acts = vec![xr];
    for z in &pre[..n - 1] {
        acts.push(hadamard_square(z));
    }
    let mut delta: Rows = pre[n - 1]
        .iter()
        .zip(y.iter_rows())
        .map(|(o, t)| o.iter().zip(t).map(|(a, b)| (a - b) * 2).collect())
        .collect();
    let mut grads: Vec<(Rows, Vec<BigInt>)> = Vec::with_capacity(n);
    for l in (0..n).rev() {
        let (fan_out, fan_in) = (layers.w[l].len(), dims[l]);
        let gw: Rows = (0..fan_out)
            .map(|o| {
                (0..fan_in)
                    .map(|i| delta.iter().zip(&acts[l]).map(|(d, a)| &d[o] * &a[i]).sum())
                    .collect()
            })
            .collect();
        let gb: Vec<BigInt> = (0..fan_out).map(|o| delta.iter().map(|d| &d[o]).sum()).collect();
        grads.push((gw, gb));
        if l > 0 {
            delta = delta
                .iter()
                .zip(&pre[l - 1])
                .map(|(d, z)| {
                    (0..fan_in)
                        .map(|i| {
                            let back: BigInt = (0..fan_out).map(|o| &d[o] * &layers.w[l][o][i]).sum();
                            back * &z[i] * 2
                        })
                        .collect()
                })
                .collect();
        }
    }
    Ok(grads
        .into_iter()
        .rev()
        .flat_map(|(gw, gb)| gw.into_iter().flatten().chain(gb))
        .collect())
}

/// The server rule on plain integers: sum, clip, scale, quantize, subtract.
fn reference_update<R: Rng>(
    params: &[BigInt],
    grads: &[Vec<BigInt>],
    cfg: &TrainConfig,
    t: usize,
    rng: &mut R,
) -> (Vec<BigInt>, f64) {
    let k = grads.len();
    let summed: Vec<f64> = (0..params.len())
        .map(|i| {
            let mut s = BigInt::zero();
            for g in grads {
                s += &g[i];
            }
            s.to_f64().unwrap_or(f64::NAN)
        })
        .collect();
    let norm = summed.iter().map(|v| v * v).sum::<f64>().sqrt();
    let clip = match cfg.clip_norm {
        Some(c) if norm > c => c / norm,
        _ => 1.0,
    };
    let scale = cfg.lr.at(t) / (cfg.batch_rows * k) as f64;
    let next = params
        .iter()
        .zip(&summed)
        .map(|(w, g)| w - fxp::stochastic_round(g * clip * scale, rng))
        .collect();
    (next, norm)
}

/// One centralized step on the K global mini-batches selected by `batch`.
/// Returns the new parameters, the summed loss over all K batches before
/// the step, and the pre-clip gradient norm.
pub fn centralized_step<R: Rng>(
    arch: &PinnArch,
    params: &[BigInt],
    data: &GlobalDataset,
    batch: &[usize],
    cfg: &TrainConfig,
    t: usize,
    rng: &mut R,
) -> Result<(Vec<BigInt>, BigInt, f64)> {
    let dims = arch.layer_dims();
    let mut grads = Vec::with_capacity(data.shards);
    let mut loss = BigInt::zero();
    for k in 0..data.shards {
        let (x, y) = data.shard(k, batch)?;
        loss += batch_loss(dims, params, &x, &y)?;
        grads.push(batch_gradient(dims, params, &x, &y)?);
    }
    let (next, norm) = reference_update(params, &grads, cfg, t, rng);
    Ok((next, loss, norm))
}

/// The centralized finite-field twin of a coded run: same seeds, same
/// dropout and skip decisions, same batches, plaintext gradients.
#[derive(Debug, Clone)]
pub struct CentralizedTrainer {
    setup: ProtocolSetup,
    data: GlobalDataset,
    test: IntData,
    params: Vec<BigInt>,
    dropout: DropoutModel,
    dropout_rng: ChaCha8Rng,
    quant_rng: ChaCha8Rng,
    sampling_step: u64,
    max_input: BigUint,
    t: usize,
    last_metrics: Option<(f64, f64)>,
}

impl CentralizedTrainer {
    pub fn new(setup: ProtocolSetup) -> Result<Self> {
        setup.validate()?;
        let seeds = setup.train.seeds;
        Ok(CentralizedTrainer {
            data: GlobalDataset::new(&setup.quantized_locals()?, setup.coding.shards())?,
            test: setup.quantize(&setup.test)?,
            params: setup.initial_params(),
            dropout: setup.dropout.clone(),
            dropout_rng: ChaCha8Rng::seed_from_u64(seeds.dropout),
            quant_rng: ChaCha8Rng::seed_from_u64(seeds.quantization),
            sampling_step: 0,
            max_input: setup.max_abs_input()?,
            t: 0,
            last_metrics: None,
            setup,
        })
    }

    pub fn params(&self) -> &[BigInt] {
        &self.params
    }

    pub fn data(&self) -> &GlobalDataset {
        &self.data
    }

    /// The K plaintext global mini-batch gradients at the current model.
    pub fn global_gradients(&self, batch: &[usize]) -> Result<Vec<Vec<BigInt>>> {
        let dims = self.setup.arch.layer_dims();
        (0..self.data.shards)
            .map(|k| {
                let (x, y) = self.data.shard(k, batch)?;
                batch_gradient(dims, &self.params, &x, &y)
            })
            .collect()
    }

    fn scored(&self, x: &Matrix<BigInt>, labels: &[usize]) -> Result<(f64, f64)> {
        let out = int_forward(self.setup.arch.layer_dims(), &self.params, x)?;
        let q = &self.setup.quant;
        let real = Matrix::from_fn(out.len(), self.setup.arch.output_dim(), |r, c| {
            dequantize_f64(q, out[r][c].to_f64().unwrap_or(f64::NAN))
        });
        Ok(score(&real, labels))
    }

    fn metrics(&mut self) -> Result<(f64, f64)> {
        if let Some(m) = self.last_metrics {
            return Ok(m);
        }
        let (loss, _) = self.scored(&self.data.x, &self.data.labels)?;
        let (_, acc) = self.scored(&self.test.x, &self.test.labels)?;
        self.last_metrics = Some((loss, acc));
        Ok((loss, acc))
    }

    pub fn step(&mut self) -> Result<RoundRecord> {
        let t = self.t;
        self.t += 1;
        let survivors = self.dropout.draw(&mut self.dropout_rng);
        let (skipped, grad_norm) = if survivors.len() < self.setup.threshold() {
            (true, 0.0)
        } else {
            let batch = sample_minibatch(
                self.setup.train.seeds.sampling,
                self.sampling_step,
                self.setup.train.batch_rows,
                &self.setup.spans(),
            )?;
            self.sampling_step += 1;
            let (next, _, norm) = centralized_step(
                &self.setup.arch,
                &self.params,
                &self.data,
                &batch,
                &self.setup.train,
                t,
                &mut self.quant_rng,
            )?;
            let field = self.setup.coding.field();
            if self.setup.enforce_capacity {
                check_capacity(&self.setup.arch, field, &self.max_input, &next, self.setup.train.batch_rows)?;
            }
            if let Some(w) = next.iter().find(|w| !field.fits_signed(w)) {
                return Err(Error::CapacityOverflow {
                    value: w.abs().to_string(),
                    half: field.half().to_string(),
                });
            }
            self.params = next;
            self.last_metrics = None;
            (false, norm)
        };
        let (train_loss, test_acc) = self.metrics()?;
        Ok(RoundRecord {
            t,
            survivors,
            skipped,
            grad_norm,
            train_loss,
            test_acc,
        })
    }

    pub fn run(&mut self) -> Result<Vec<RoundRecord>> {
        let mut out = Vec::new();
        while self.t < self.setup.train.rounds {
            out.push(self.step()?);
        }
        Ok(out)
    }
}

/// `prod_{m != i} (target - x_m) / (x_i - x_m)` for every node `i`.
fn lagrange_basis(field: &FieldParams, nodes: &[BigUint], target: &BigUint) -> Result<Vec<BigUint>> {
    nodes
        .iter()
        .enumerate()
        .map(|(i, xi)| {
            let mut num = BigUint::from(1u8);
            let mut den = BigUint::from(1u8);
            for (m, xm) in nodes.iter().enumerate() {
                if m != i {
                    num = field.mul(&num, &field.sub(target, xm));
                    den = field.mul(&den, &field.sub(xi, xm));
                }
            }
            Ok(field.mul(&num, &field.inv(&den)?))
        })
        .collect()
}

fn weighted_sum(field: &FieldParams, weights: &[BigUint], mats: &[&Matrix<BigUint>]) -> Matrix<BigUint> {
    let (r, c) = mats[0].shape();
    Matrix::from_fn(r, c, |i, j| {
        let mut acc = BigUint::zero();
        for (w, m) in weights.iter().zip(mats) {
            acc = field.add(&acc, &field.mul(w, m.get(i, j)));
        }
        acc
    })
}

/// A random small instance for [`brute_force_composite_check`].
#[derive(Debug, Clone)]
pub struct CompositeInstance {
    pub params: Vec<BigInt>,
    /// `K` data shards followed by `T` masks.
    pub x_points: Vec<Matrix<BigUint>>,
    pub y_points: Vec<Matrix<BigUint>>,
    /// Add one to the first entry of this client's upload.
    pub corrupt: Option<usize>,
}

impl CompositeInstance {
    /// Shards with entries in `[-bound, bound]`, weights in `[-1, 1]`,
    /// uniform masks.
    pub fn random<R: Rng>(arch: &PinnArch, cfg: &CodingConfig, rows: usize, bound: i64, rng: &mut R) -> Self {
        let field = cfg.field();
        let small = |rng: &mut R, cols: usize| {
            Matrix::from_fn(rows, cols, |_, _| field.from_i64(rng.gen_range(-bound..=bound)))
        };
        let (dx, dy) = (arch.input_dim(), arch.output_dim());
        let mut x_points: Vec<_> = (0..cfg.shards()).map(|_| small(rng, dx)).collect();
        let mut y_points: Vec<_> = (0..cfg.shards()).map(|_| small(rng, dy)).collect();
        for _ in 0..cfg.privacy() {
            x_points.push(Matrix::from_fn(rows, dx, |_, _| field.random(rng)));
            y_points.push(Matrix::from_fn(rows, dy, |_, _| field.random(rng)));
        }
        CompositeInstance {
            params: (0..arch.param_count()).map(|_| BigInt::from(rng.gen_range(-1i64..=1))).collect(),
            x_points,
            y_points,
            corrupt: None,
        }
    }
}

/// Evaluates the gradient composite at every client point by encoding and
/// recomputing from scratch, interpolates from the first
/// `deg (K+T-1) + 1` clients, and compares the value at each `beta_k` with
/// the gradient computed on shard `k` directly.
pub fn brute_force_composite_check(arch: &PinnArch, cfg: &CodingConfig, inst: &CompositeInstance) -> Result<bool> {
    let field = cfg.field();
    let dims = arch.layer_dims();
    let kt = cfg.shards() + cfg.privacy();
    if inst.x_points.len() != kt || inst.y_points.len() != kt {
        return Err(Error::domain("instance needs K + T shard/mask points"));
    }
    let grad_mod_p = |x: &Matrix<BigUint>, y: &Matrix<BigUint>| -> Result<Vec<BigUint>> {
        let xi = x.map(|v| BigInt::from(v.clone()));
        let yi = y.map(|v| BigInt::from(v.clone()));
        Ok(batch_gradient(dims, &inst.params, &xi, &yi)?
            .iter()
            .map(|g| field.reduce_signed(g))
            .collect())
    };
    let xs: Vec<&Matrix<BigUint>> = inst.x_points.iter().collect();
    let ys: Vec<&Matrix<BigUint>> = inst.y_points.iter().collect();
    let need = cfg.recovery_threshold();
    let nodes = &cfg.alphas()[..need];
    let mut uploads = Vec::with_capacity(need);
    for (j, alpha) in nodes.iter().enumerate() {
        let basis = lagrange_basis(field, cfg.betas(), alpha)?;
        let mut g = grad_mod_p(&weighted_sum(field, &basis, &xs), &weighted_sum(field, &basis, &ys))?;
        if inst.corrupt == Some(j) {
            g[0] = field.add(&g[0], &BigUint::from(1u8));
        }
        uploads.push(g);
    }
    for k in 0..cfg.shards() {
        let basis = lagrange_basis(field, nodes, &cfg.betas()[k])?;
        let decoded: Vec<BigUint> = (0..uploads[0].len())
            .map(|e| {
                basis
                    .iter()
                    .zip(&uploads)
                    .fold(BigUint::zero(), |acc, (w, u)| field.add(&acc, &field.mul(w, &u[e])))
            })
            .collect();
        if decoded != grad_mod_p(&inst.x_points[k], &inst.y_points[k])? {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Loss and accuracy of any-carrier model on a real dataset, quantizing
/// the inputs and mapping outputs back with the quantizer's inverse.
pub fn eval_metrics<C: Carrier>(model: &PinnModel<C>, ds: &Dataset, quant: &QuantConfig) -> Result<(f64, f64)> {
    let x = fxp::real_to_int(&ds.features, quant)?;
    let c = model.carrier();
    let embedded = x.try_map(|v| c.from_int(v))?;
    evaluate(model, &embedded, &ds.labels, quant)
}

#[cfg(test)]
mod tests;
