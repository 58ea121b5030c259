use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{score, DropoutModel, LrSchedule, RoundRecord, Seeds};
use crate::carrier::Reals;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::pinn::{PinnArch, PinnModel};

/// Plain-text federated averaging on real-valued parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct FedAvgConfig {
    pub lr: LrSchedule,
    /// Initial parameters are uniform on `[-init_scale, init_scale]`.
    pub init_scale: f64,
    /// Local mini-batch size (capped at each client's data size).
    pub local_batch: usize,
    pub rounds: usize,
}

fn one_hot(labels: &[usize], classes: usize) -> Matrix<f64> {
    Matrix::from_fn(labels.len(), classes, |r, c| if labels[r] == c { 1.0 } else { 0.0 })
}

/// Trains with one local gradient step per surviving client per round, the
/// server averaging updates weighted by local data size. Survivors come from
/// the same dropout stream as the coded run, so both see identical sets.
/// Rounds where nobody survives are skipped.
pub fn run_fedavg_baseline(
    arch: &PinnArch,
    locals: &[Dataset],
    test: &Dataset,
    dropout: &DropoutModel,
    seeds: Seeds,
    cfg: &FedAvgConfig,
) -> Result<Vec<RoundRecord>> {
    if locals.len() != dropout.n_clients() {
        return Err(Error::config("one dropout rate per client is required"));
    }
    if cfg.local_batch == 0 || !(cfg.lr.base > 0.0) || !(cfg.init_scale >= 0.0) {
        return Err(Error::config("fedavg needs a positive batch and learning rate"));
    }
    let classes = arch.output_dim();
    let targets: Vec<Matrix<f64>> = locals.iter().map(|d| one_hot(&d.labels, classes)).collect();
    let train = Dataset::concat(locals)?;

    let mut init = ChaCha8Rng::seed_from_u64(seeds.init);
    let params: Vec<f64> = (0..arch.param_count())
        .map(|_| init.gen_range(-cfg.init_scale..=cfg.init_scale))
        .collect();
    let mut model = PinnModel::from_flat(arch.clone(), Reals, params)?;
    let mut drop_rng = ChaCha8Rng::seed_from_u64(seeds.dropout);

    let eval = |m: &PinnModel<Reals>| -> Result<(f64, f64)> {
        let (loss, _) = score(&m.forward(&train.features)?, &train.labels);
        let (_, acc) = score(&m.forward(&test.features)?, &test.labels);
        Ok((loss, acc))
    };
    let mut metrics = eval(&model)?;
    let mut out = Vec::with_capacity(cfg.rounds);
    for t in 0..cfg.rounds {
        let survivors = dropout.draw(&mut drop_rng);
        if survivors.is_empty() {
            out.push(RoundRecord {
                t,
                survivors,
                skipped: true,
                grad_norm: 0.0,
                train_loss: metrics.0,
                test_acc: metrics.1,
            });
            continue;
        }
        let mut sample_rng = ChaCha8Rng::seed_from_u64(seeds.sampling);
        sample_rng.set_stream(t as u64);
        let mut avg = vec![0.0; arch.param_count()];
        let mut weight = 0.0;
        for &j in &survivors {
            let d = &locals[j];
            let b = cfg.local_batch.min(d.len());
            let mut rows = index::sample(&mut sample_rng, d.len(), b).into_vec();
            rows.sort_unstable();
            let g = model.gradient(&d.features.select_rows(&rows), &targets[j].select_rows(&rows))?;
            let m = d.len() as f64;
            for (a, v) in avg.iter_mut().zip(g.0) {
                *a += m * v / b as f64;
            }
            weight += m;
        }
        avg.iter_mut().for_each(|a| *a /= weight);
        let norm = avg.iter().map(|v| v * v).sum::<f64>().sqrt();
        let lr = cfg.lr.at(t);
        let next: Vec<f64> = model.to_flat().iter().zip(&avg).map(|(w, g)| w - lr * g).collect();
        if next.iter().any(|w| !w.is_finite()) {
            return Err(Error::domain(format!("fedavg diverged at round {t}")));
        }
        model = PinnModel::from_flat(arch.clone(), Reals, next)?;
        metrics = eval(&model)?;
        out.push(RoundRecord {
            t,
            survivors,
            skipped: false,
            grad_norm: norm,
            train_loss: metrics.0,
            test_acc: metrics.1,
        });
    }
    Ok(out)
}
