use std::collections::BTreeMap;

use num_bigint::{BigInt, BigUint};
use rayon::prelude::*;

use super::{check_capacity, evaluate, ProtocolSetup, RoundDriver, RoundPlan, RoundRecord};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::field::FieldParams;
use crate::lcc::{decode_gradients, ClientShares, DecodeOutcome, ShareSet};
use crate::matrix::Matrix;
use crate::pinn::PinnModel;

/// Gradient of the model on the selected rows of a client's coded data.
pub fn client_compute(
    model: &PinnModel<FieldParams>,
    client: &ClientShares,
    batch: &[usize],
) -> Result<Vec<BigUint>> {
    if let Some(&bad) = batch.iter().find(|&&r| r >= client.x.rows()) {
        return Err(Error::domain(format!("row {bad} outside the client's {} rows", client.x.rows())));
    }
    let x = client.x.select_rows(batch);
    let y = client.y.select_rows(batch);
    Ok(model.gradient(&x, &y)?.into_inner())
}

/// Field-side metrics inputs: the union of all local datasets and the test set.
#[derive(Debug, Clone)]
struct EvalSet {
    x: Matrix<BigUint>,
    labels: Vec<usize>,
}

impl EvalSet {
    fn new(setup: &ProtocolSetup, ds: &Dataset) -> Result<Self> {
        let field = setup.quant.field();
        let q = setup.quantize(ds)?;
        Ok(EvalSet {
            x: q.x.try_map(|v| field.from_signed(v))?,
            labels: q.labels,
        })
    }
}

/// A full simulated deployment: encoded shares, field model and streams.
#[derive(Debug, Clone)]
pub struct CodedWorld {
    setup: ProtocolSetup,
    shares: ShareSet,
    clients: Vec<ClientShares>,
    model: PinnModel<FieldParams>,
    driver: RoundDriver,
    train_eval: EvalSet,
    test_eval: EvalSet,
    max_input: BigUint,
    t: usize,
    last_metrics: Option<(f64, f64)>,
}

impl CodedWorld {
    pub fn new(setup: ProtocolSetup) -> Result<Self> {
        setup.validate()?;
        let field = setup.coding.field().clone();
        let locals = setup
            .quantized_locals()?
            .into_iter()
            .map(|d| Ok((d.x.try_map(|v| field.from_signed(v))?, d.y.try_map(|v| field.from_signed(v))?)))
            .collect::<Result<Vec<_>>>()?;
        let shares = ShareSet::encode(&setup.coding, &locals, setup.train.seeds.masks)?;
        let clients = (0..setup.coding.n_clients())
            .map(|j| shares.client(j))
            .collect::<Result<Vec<_>>>()?;
        let params = setup
            .initial_params()
            .iter()
            .map(|w| field.from_signed(w))
            .collect::<Result<Vec<_>>>()?;
        let model = PinnModel::from_flat(setup.arch.clone(), field, params)?;
        let train_eval = EvalSet::new(&setup, &Dataset::concat(&setup.locals)?)?;
        let test_eval = EvalSet::new(&setup, &setup.test)?;
        Ok(CodedWorld {
            driver: RoundDriver::new(&setup),
            max_input: setup.max_abs_input()?,
            shares,
            clients,
            model,
            train_eval,
            test_eval,
            t: 0,
            last_metrics: None,
            setup,
        })
    }

    pub fn setup(&self) -> &ProtocolSetup {
        &self.setup
    }

    pub fn shares(&self) -> &ShareSet {
        &self.shares
    }

    pub fn clients(&self) -> &[ClientShares] {
        &self.clients
    }

    pub fn model(&self) -> &PinnModel<FieldParams> {
        &self.model
    }

    /// Current parameters in the signed view.
    pub fn signed_params(&self) -> Vec<BigInt> {
        let f = self.model.carrier();
        self.model.to_flat().iter().map(|r| f.to_signed(r)).collect()
    }

    pub fn round(&self) -> usize {
        self.t
    }

    /// Runs the surviving clients on `batch` and decodes their uploads.
    pub fn compute_and_decode(&self, survivors: &[usize], batch: &[usize]) -> Result<DecodeOutcome> {
        let uploads: BTreeMap<usize, Vec<BigUint>> = survivors
            .par_iter()
            .map(|&j| Ok((j, client_compute(&self.model, &self.clients[j], batch)?)))
            .collect::<Result<_>>()?;
        decode_gradients(&uploads, &self.setup.coding)
    }

    fn metrics(&mut self) -> Result<(f64, f64)> {
        if let Some(m) = self.last_metrics {
            return Ok(m);
        }
        let q = &self.setup.quant;
        let (loss, _) = evaluate(&self.model, &self.train_eval.x, &self.train_eval.labels, q)?;
        let (_, acc) = evaluate(&self.model, &self.test_eval.x, &self.test_eval.labels, q)?;
        self.last_metrics = Some((loss, acc));
        Ok((loss, acc))
    }

    /// Executes one round and reports it.
    pub fn step(&mut self) -> Result<RoundRecord> {
        let t = self.t;
        self.t += 1;
        let (survivors, skipped, grad_norm) = match self.driver.plan()? {
            RoundPlan::Skip { survivors } => (survivors, true, 0.0),
            RoundPlan::Compute { survivors, batch } => {
                let decoded = match self.compute_and_decode(&survivors, &batch)? {
                    DecodeOutcome::Decoded(d) => d,
                    DecodeOutcome::Skip { received, required } => {
                        return Err(Error::domain(format!(
                            "decoder refused {received} uploads (needs {required})"
                        )))
                    }
                };
                let field = self.model.carrier().clone();
                let signed: Vec<Vec<BigInt>> = decoded
                    .iter()
                    .map(|g| g.iter().map(|v| field.to_signed(v)).collect())
                    .collect();
                let (next, norm) = self.driver.update(t, &self.signed_params(), &signed)?;
                if self.setup.enforce_capacity {
                    check_capacity(
                        &self.setup.arch,
                        &field,
                        &self.max_input,
                        &next,
                        self.setup.train.batch_rows,
                    )?;
                }
                let params = next
                    .iter()
                    .map(|w| field.from_signed(w))
                    .collect::<Result<Vec<_>>>()?;
                self.model = PinnModel::from_flat(self.setup.arch.clone(), field, params)?;
                self.last_metrics = None;
                (survivors, false, norm)
            }
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

    /// Runs the remaining configured rounds.
    pub fn run(&mut self) -> Result<Vec<RoundRecord>> {
        let mut out = Vec::new();
        while self.t < self.setup.train.rounds {
            out.push(self.step()?);
        }
        Ok(out)
    }
}
