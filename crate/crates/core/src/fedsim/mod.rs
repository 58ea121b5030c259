//! The federated protocol engine: partitioning, shared-seed sampling,
//! per-round dropout, coded gradient computation and the server update.

mod coded;
mod fedavg;
mod metrics;

use std::ops::Range;

use num_bigint::{BigInt, BigUint};
use num_traits::{Signed, ToPrimitive};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::carrier::Carrier;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::field::FieldParams;
use crate::fxp::{self, QuantConfig};
use crate::lcc::CodingConfig;
use crate::matrix::Matrix;
use crate::pinn::{self, PinnArch, PinnModel};

pub use coded::{client_compute, CodedWorld};
pub use fedavg::{run_fedavg_baseline, FedAvgConfig};
pub use metrics::{write_metrics, MetricsHeader};

/// The five named random streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Seeds {
    pub sampling: u64,
    pub masks: u64,
    pub dropout: u64,
    pub quantization: u64,
    pub init: u64,
}

impl Seeds {
    /// Derives all five streams from one number (used by tests and sweeps).
    pub fn from_base(base: u64) -> Self {
        Seeds {
            sampling: base.wrapping_mul(10) + 1,
            masks: base.wrapping_mul(10) + 2,
            dropout: base.wrapping_mul(10) + 3,
            quantization: base.wrapping_mul(10) + 4,
            init: base.wrapping_mul(10) + 5,
        }
    }
}

/// Step decay: `base * factor^(t / interval)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub base: f64,
    pub decay_factor: f64,
    pub decay_interval: usize,
}

impl LrSchedule {
    pub fn constant(base: f64) -> Self {
        LrSchedule {
            base,
            decay_factor: 1.0,
            decay_interval: usize::MAX,
        }
    }

    pub fn at(&self, t: usize) -> f64 {
        let steps = t / self.decay_interval.max(1);
        self.base * self.decay_factor.powi(steps.min(i32::MAX as usize) as i32)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_rows: usize,
    pub rounds: usize,
    pub lr: LrSchedule,
    pub clip_norm: Option<f64>,
    pub seeds: Seeds,
    /// Initial parameters are uniform integers in `[-init_bound, init_bound]`.
    pub init_bound: i64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_rows == 0 {
            return Err(Error::config("batch_rows must be positive"));
        }
        if !(self.lr.base > 0.0) {
            return Err(Error::config("learning rate must be positive"));
        }
        if !(self.lr.decay_factor > 0.0) || self.lr.decay_interval == 0 {
            return Err(Error::config("decay factor must be positive and interval nonzero"));
        }
        if matches!(self.clip_norm, Some(c) if !(c > 0.0)) {
            return Err(Error::config("clip_norm must be positive"));
        }
        if self.init_bound < 0 {
            return Err(Error::config("init_bound must be nonnegative"));
        }
        Ok(())
    }
}

/// Per-client probability of dropping out in any given round.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutModel {
    probs: Vec<f64>,
}

impl DropoutModel {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::config("dropout probabilities must lie in [0, 1]"));
        }
        Ok(DropoutModel { probs })
    }

    pub fn constant(n_clients: usize, p: f64) -> Result<Self> {
        Self::new(vec![p; n_clients])
    }

    /// Each client is unreliable (0.99) with probability one half, otherwise
    /// its rate is uniform on `[0, 0.1]`. Rates come from stream 1 of
    /// `seed`, so the same seed can also drive the per-round draws.
    pub fn skewed(n_clients: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        let probs = (0..n_clients)
            .map(|_| {
                if rng.gen_bool(0.5) {
                    0.99
                } else {
                    rng.gen_range(0.0..=0.1)
                }
            })
            .collect();
        DropoutModel { probs }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn n_clients(&self) -> usize {
        self.probs.len()
    }

    /// Surviving client ids, ascending. Draws one `f64` per client.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<usize> {
        self.probs
            .iter()
            .enumerate()
            .filter_map(|(j, &p)| (rng.gen::<f64>() >= p).then_some(j))
            .collect()
    }
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub t: usize,
    pub survivors: Vec<usize>,
    pub skipped: bool,
    /// L2 norm of the summed decoded gradient, before clipping; 0 when skipped.
    pub grad_norm: f64,
    pub train_loss: f64,
    pub test_acc: f64,
}

/// Sorts by label (stable) and deals contiguous, equal-size shards to `n`
/// clients. Each shard size is a multiple of `multiple`; leftover rows at
/// the end of the sorted order are dropped.
pub fn partition_noniid(ds: &Dataset, n: usize, multiple: usize) -> Result<Vec<Dataset>> {
    let multiple = multiple.max(1);
    if n == 0 || n > ds.len() {
        return Err(Error::config(format!(
            "cannot split {} samples across {n} clients",
            ds.len()
        )));
    }
    let per = ds.len() / n / multiple * multiple;
    if per == 0 {
        return Err(Error::config(format!(
            "{} samples are too few for {n} clients with shards of a multiple of {multiple}",
            ds.len()
        )));
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.sort_by_key(|&i| ds.labels[i]);
    Ok(order.chunks(per).take(n).map(|c| ds.subset(c)).collect())
}

/// Round-robin split after shuffling, for IID comparisons.
pub fn partition_iid(ds: &Dataset, n: usize, seed: u64) -> Result<Vec<Dataset>> {
    if n == 0 || n > ds.len() {
        return Err(Error::config("too many clients for dataset"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let order = index::sample(&mut rng, ds.len(), ds.len()).into_vec();
    let per = ds.len() / n;
    Ok(order.chunks(per).take(n).map(|c| ds.subset(c)).collect())
}

/// Row spans of each source inside a client's stacked shares.
pub fn spans_from_sizes(sizes: &[usize]) -> Vec<Range<usize>> {
    let mut start = 0;
    sizes
        .iter()
        .map(|&s| {
            let r = start..start + s;
            start += s;
            r
        })
        .collect()
}

/// Mini-batch index set for sampling step `step`: `b` distinct indices into
/// the stacked rows, allocated to sources in proportion to their span
/// lengths (largest remainder), uniform without replacement inside each
/// span, returned ascending. Depends only on `(seed, step)`.
pub fn sample_minibatch(seed: u64, step: u64, b: usize, spans: &[Range<usize>]) -> Result<Vec<usize>> {
    let total: usize = spans.iter().map(|s| s.len()).sum();
    if b > total {
        return Err(Error::config(format!("batch of {b} exceeds the {total} available rows")));
    }
    let mut alloc: Vec<usize> = spans.iter().map(|s| b * s.len() / total).collect();
    let mut left = b - alloc.iter().sum::<usize>();
    let mut by_remainder: Vec<usize> = (0..spans.len()).collect();
    by_remainder.sort_by_key(|&i| std::cmp::Reverse((b * spans[i].len()) % total));
    for &i in by_remainder.iter().cycle() {
        if left == 0 {
            break;
        }
        if alloc[i] < spans[i].len() {
            alloc[i] += 1;
            left -= 1;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step);
    let mut out = Vec::with_capacity(b);
    for (span, &k) in spans.iter().zip(&alloc) {
        let mut picked = index::sample(&mut rng, span.len(), k).into_vec();
        picked.sort_unstable();
        out.extend(picked.into_iter().map(|r| span.start + r));
    }
    Ok(out)
}

/// Applies `w - Q(lr / (b K) * clip(sum_k g_k))` coordinate-wise to signed
/// parameters. Returns the new parameters and the pre-clip norm of the
/// summed gradient. Draws one quantization sample per parameter.
pub fn update_params<R: Rng + ?Sized>(
    params: &[BigInt],
    decoded: &[Vec<BigInt>],
    lr: f64,
    batch_rows: usize,
    clip_norm: Option<f64>,
    rng: &mut R,
) -> Result<(Vec<BigInt>, f64)> {
    let k = decoded.len();
    if k == 0 || decoded.iter().any(|g| g.len() != params.len()) {
        return Err(Error::domain("decoded gradients do not match the parameter count"));
    }
    let summed: Vec<f64> = (0..params.len())
        .map(|i| {
            let s: BigInt = decoded.iter().map(|g| &g[i]).sum();
            s.to_f64().unwrap_or(f64::NAN)
        })
        .collect();
    let norm = summed.iter().map(|v| v * v).sum::<f64>().sqrt();
    let clip = match clip_norm {
        Some(c) if norm > c => c / norm,
        _ => 1.0,
    };
    let scale = lr / (batch_rows * k) as f64;
    let next = params
        .iter()
        .zip(&summed)
        .map(|(w, g)| w - fxp::stochastic_round(g * clip * scale, rng))
        .collect();
    Ok((next, norm))
}

/// Server step on a field-carrier model: converts through the signed view,
/// updates, and re-embeds, aborting on overflow.
pub fn server_update<R: Rng + ?Sized>(
    model: &PinnModel<FieldParams>,
    decoded: &[Vec<BigInt>],
    lr: f64,
    batch_rows: usize,
    clip_norm: Option<f64>,
    rng: &mut R,
) -> Result<(PinnModel<FieldParams>, f64)> {
    let field = model.carrier().clone();
    let signed: Vec<BigInt> = model.to_flat().iter().map(|r| field.to_signed(r)).collect();
    let (next, norm) = update_params(&signed, decoded, lr, batch_rows, clip_norm, rng)?;
    let params = next
        .iter()
        .map(|w| field.from_signed(w))
        .collect::<Result<Vec<_>>>()?;
    Ok((PinnModel::from_flat(model.arch().clone(), field, params)?, norm))
}

/// Fails if a batch gradient at the given weight magnitude could wrap.
pub fn check_capacity(
    arch: &PinnArch,
    field: &FieldParams,
    max_abs_input: &BigUint,
    params: &[BigInt],
    batch_rows: usize,
) -> Result<()> {
    let max_w = params.iter().map(|w| w.magnitude()).max().cloned().unwrap_or_default();
    let bound = pinn::batch_capacity_bound(arch, max_abs_input, &max_w.max(BigUint::from(1u8)), batch_rows);
    if &bound >= field.half() {
        return Err(Error::CapacityOverflow {
            value: format!("2^{}", bound.bits()),
            half: format!("2^{}", field.half().bits()),
        });
    }
    Ok(())
}

/// Everything the coded run and its centralized twin share.
#[derive(Debug, Clone)]
pub struct ProtocolSetup {
    pub coding: CodingConfig,
    pub quant: QuantConfig,
    pub arch: PinnArch,
    pub train: TrainConfig,
    pub dropout: DropoutModel,
    /// Plaintext local datasets, one per client, in real units.
    pub locals: Vec<Dataset>,
    pub test: Dataset,
    /// Abort when the interval bound says a gradient could wrap.
    pub enforce_capacity: bool,
}

/// Quantized data of one source.
#[derive(Debug, Clone)]
pub struct IntData {
    pub x: Matrix<BigInt>,
    pub y: Matrix<BigInt>,
    pub labels: Vec<usize>,
}

impl ProtocolSetup {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        let n = self.coding.n_clients();
        if self.locals.len() != n || self.dropout.n_clients() != n {
            return Err(Error::config(format!(
                "{n} clients configured but {} local datasets and {} dropout rates",
                self.locals.len(),
                self.dropout.n_clients()
            )));
        }
        if self.arch.grad_degree() != self.coding.grad_degree() {
            return Err(Error::config("coding degree does not match the architecture"));
        }
        self.coding.field().check_same(self.quant.field())?;
        let rows = self.encoded_rows();
        if self.train.batch_rows > rows {
            return Err(Error::config(format!(
                "batch_rows {} exceeds the {rows} rows each client holds",
                self.train.batch_rows
            )));
        }
        for (i, d) in self.locals.iter().enumerate() {
            if d.len() % self.coding.shards() != 0 || d.is_empty() {
                return Err(Error::config(format!(
                    "client {i} holds {} rows, not a positive multiple of K={}",
                    d.len(),
                    self.coding.shards()
                )));
            }
            if d.dim() != self.arch.input_dim() || d.n_classes > self.arch.output_dim() {
                return Err(Error::config(format!(
                    "client {i} data does not fit the architecture {:?}",
                    self.arch.layer_dims()
                )));
            }
        }
        if self.enforce_capacity {
            let init = vec![BigInt::from(self.train.init_bound); 1];
            check_capacity(
                &self.arch,
                self.quant.field(),
                &self.max_abs_input()?,
                &init,
                self.train.batch_rows,
            )?;
        }
        Ok(())
    }

    /// `m~`: rows each client holds after encoding.
    pub fn encoded_rows(&self) -> usize {
        self.locals.iter().map(Dataset::len).sum::<usize>() / self.coding.shards()
    }

    pub fn source_sizes(&self) -> Vec<usize> {
        self.locals.iter().map(Dataset::len).collect()
    }

    pub fn spans(&self) -> Vec<Range<usize>> {
        let k = self.coding.shards();
        spans_from_sizes(&self.locals.iter().map(|d| d.len() / k).collect::<Vec<_>>())
    }

    pub fn quantize(&self, ds: &Dataset) -> Result<IntData> {
        Ok(IntData {
            x: fxp::real_to_int(&ds.features, &self.quant)?,
            y: fxp::one_hot_scaled(&ds.labels, self.arch.output_dim(), &self.quant)?,
            labels: ds.labels.clone(),
        })
    }

    pub fn quantized_locals(&self) -> Result<Vec<IntData>> {
        self.locals.iter().map(|d| self.quantize(d)).collect()
    }

    /// Largest magnitude among quantized features and targets.
    pub fn max_abs_input(&self) -> Result<BigUint> {
        let mut best = BigUint::from(1u8) << self.quant.scale_bits();
        for d in self.locals.iter().chain(std::iter::once(&self.test)) {
            let q = fxp::real_to_int(&d.features, &self.quant)?;
            for v in q.data() {
                if v.magnitude() > &best {
                    best = v.magnitude().clone();
                }
            }
        }
        Ok(best)
    }

    pub fn initial_params(&self) -> Vec<BigInt> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.train.seeds.init);
        let b = self.train.init_bound;
        (0..self.arch.param_count())
            .map(|_| BigInt::from(rng.gen_range(-b..=b)))
            .collect()
    }

    pub fn threshold(&self) -> usize {
        self.coding.recovery_threshold()
    }
}

/// Round bookkeeping shared by the coded run and the centralized twin: the
/// dropout, sampling and quantization streams and the skip rule.
#[derive(Debug, Clone)]
pub struct RoundDriver {
    dropout: DropoutModel,
    dropout_rng: ChaCha8Rng,
    quant_rng: ChaCha8Rng,
    sampling_seed: u64,
    sampling_step: u64,
    threshold: usize,
    spans: Vec<Range<usize>>,
    train: TrainConfig,
}

/// What a round decided before any gradient is computed.
#[derive(Debug, Clone, PartialEq)]
pub enum RoundPlan {
    Skip { survivors: Vec<usize> },
    Compute { survivors: Vec<usize>, batch: Vec<usize> },
}

impl RoundDriver {
    pub fn new(setup: &ProtocolSetup) -> Self {
        let seeds = setup.train.seeds;
        RoundDriver {
            dropout: setup.dropout.clone(),
            dropout_rng: ChaCha8Rng::seed_from_u64(seeds.dropout),
            quant_rng: ChaCha8Rng::seed_from_u64(seeds.quantization),
            sampling_seed: seeds.sampling,
            sampling_step: 0,
            threshold: setup.threshold(),
            spans: setup.spans(),
            train: setup.train.clone(),
        }
    }

    /// Draws this round's survivors and, when enough remain, the batch. A
    /// skipped round leaves the sampling stream where it was.
    pub fn plan(&mut self) -> Result<RoundPlan> {
        let survivors = self.dropout.draw(&mut self.dropout_rng);
        if survivors.len() < self.threshold {
            return Ok(RoundPlan::Skip { survivors });
        }
        let batch = sample_minibatch(
            self.sampling_seed,
            self.sampling_step,
            self.train.batch_rows,
            &self.spans,
        )?;
        self.sampling_step += 1;
        Ok(RoundPlan::Compute { survivors, batch })
    }

    pub fn update(&mut self, t: usize, params: &[BigInt], decoded: &[Vec<BigInt>]) -> Result<(Vec<BigInt>, f64)> {
        update_params(
            params,
            decoded,
            self.train.lr.at(t),
            self.train.batch_rows,
            self.train.clip_norm,
            &mut self.quant_rng,
        )
    }

    pub fn spans(&self) -> &[Range<usize>] {
        &self.spans
    }
}

/// Mean per-row squared error and argmax accuracy of `outputs` (real units).
pub fn score(outputs: &Matrix<f64>, labels: &[usize]) -> (f64, f64) {
    if labels.is_empty() {
        return (0.0, 0.0);
    }
    let mut loss = 0.0;
    let mut correct = 0usize;
    for (row, &label) in outputs.iter_rows().zip(labels) {
        for (c, v) in row.iter().enumerate() {
            let target = if c == label { 1.0 } else { 0.0 };
            loss += (v - target).powi(2);
        }
        if pinn::argmax(row) == label {
            correct += 1;
        }
    }
    let n = labels.len() as f64;
    (loss / n, correct as f64 / n)
}

/// Loss and accuracy of a model on quantized inputs; outputs are mapped
/// back to reals with the quantizer's inverse before scoring.
pub fn evaluate<C: Carrier>(
    model: &PinnModel<C>,
    x: &Matrix<C::Elem>,
    labels: &[usize],
    quant: &QuantConfig,
) -> Result<(f64, f64)> {
    let out = model.forward(x)?;
    let c = model.carrier();
    Ok(score(&out.map(|v| dequantize_f64(quant, c.to_f64(v))), labels))
}

/// `z / 2^l - c` for an already-converted output value.
pub fn dequantize_f64(quant: &QuantConfig, z: f64) -> f64 {
    z / quant.scale() - quant.shift()
}

/// Largest parameter magnitude, for diagnostics.
pub fn max_abs(params: &[BigInt]) -> BigInt {
    params.iter().map(|p| p.abs()).max().unwrap_or_default()
}
