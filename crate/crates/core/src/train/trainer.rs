//! Mini-batch training loop and its per-epoch history.

use std::fmt::Write as _;

use ndarray::Array3;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::model::{batch_objective, FafeModel};
use super::optim::{cosine_lr, Adam, AdamConfig};
use crate::error::{Error, Result};
use crate::metrics::{gates_report, GatesReport, ScoredItem};
use crate::params::Parameters;
use crate::pipeline::NUM_COLOURS;
use crate::regularizer::RegConfig;
use crate::wedge_gate::GateMode;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub reg: RegConfig,
    pub hidden: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 8,
            adam: AdamConfig::default(),
            reg: RegConfig::default(),
            hidden: crate::wedge_gate::DEFAULT_HIDDEN,
            seed: 0,
        }
    }
}

/// One labelled training image.
#[derive(Debug, Clone, Copy)]
pub struct Example<'a> {
    pub image: &'a Array3<f64>,
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub lambda_l1: f64,
    /// Sample-weighted means over the epoch's batches.
    pub loss: f64,
    pub bce: f64,
    pub reg: f64,
    pub accuracy: f64,
    pub gate_counts: [f64; NUM_COLOURS],
    pub score_sums: [f64; NUM_COLOURS],
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct History {
    pub records: Vec<EpochRecord>,
}

impl History {
    pub const CSV_HEADER: &'static str =
        "epoch,lr,lambda_l1,loss,bce,reg,accuracy,gates_r,gates_g,gates_b,scores_r,scores_g,scores_b";

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::CSV_HEADER);
        for r in &self.records {
            let _ = write!(
                s,
                "{},{},{},{},{},{},{}",
                r.epoch, r.lr, r.lambda_l1, r.loss, r.bce, r.reg, r.accuracy
            );
            for v in r.gate_counts.iter().chain(&r.score_sums) {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }
}

/// Model, optimizer state and progress.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub model: FafeModel,
    pub optimizer: Adam,
    /// Number of completed epochs.
    pub epoch: usize,
    pub seed: u64,
}

/// Masks are exempt from weight decay.
pub fn is_mask(name: &str) -> bool {
    name.starts_with("mask.")
}

impl TrainState {
    pub fn new(model: FafeModel, cfg: &TrainConfig) -> Self {
        let optimizer = Adam::new(&model, cfg.adam.clone(), is_mask);
        Self {
            model,
            optimizer,
            epoch: 0,
            seed: cfg.seed,
        }
    }
}

fn check_examples(data: &[Example]) -> Result<()> {
    if data.is_empty() {
        return Err(Error::EmptyInput);
    }
    let pos = data.iter().filter(|e| e.label == 1).count();
    if pos == 0 || pos == data.len() {
        return Err(Error::SingleClassInput);
    }
    Ok(())
}

/// Runs one epoch in place and returns its record.
pub fn train_epoch(state: &mut TrainState, data: &[Example], cfg: &TrainConfig) -> Result<EpochRecord> {
    let epoch = state.epoch;
    let lr = cosine_lr(cfg.adam.lr, epoch, cfg.epochs);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(state.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    order.shuffle(&mut rng);

    let mut rec = EpochRecord {
        epoch,
        lr,
        lambda_l1: cfg.reg.lambda_l1(epoch),
        loss: 0.0,
        bce: 0.0,
        reg: 0.0,
        accuracy: 0.0,
        gate_counts: [0.0; NUM_COLOURS],
        score_sums: [0.0; NUM_COLOURS],
    };
    let mut correct = 0usize;
    for chunk in order.chunks(cfg.batch_size.max(1)) {
        let images: Vec<&Array3<f64>> = chunk.iter().map(|&i| data[i].image).collect();
        let labels: Vec<u8> = chunk.iter().map(|&i| data[i].label).collect();
        let out = batch_objective(&state.model, &images, &labels, epoch, &cfg.reg, GateMode::Binary, true)?;
        let grads = out.grads.as_ref().expect("gradients requested");
        state.optimizer.apply(&mut state.model, grads, lr);

        let b = chunk.len() as f64;
        rec.loss += out.loss * b;
        rec.bce += out.bce * b;
        rec.reg += out.reg * b;
        correct += out
            .probs
            .iter()
            .zip(&labels)
            .filter(|(&p, &y)| (p >= 0.5) == (y == 1))
            .count();
        for (counts, sums) in out.gate_counts.iter().zip(&out.score_sums) {
            for c in 0..NUM_COLOURS {
                rec.gate_counts[c] += counts[c] as f64;
                rec.score_sums[c] += sums[c];
            }
        }
    }
    let n = data.len() as f64;
    rec.loss /= n;
    rec.bce /= n;
    rec.reg /= n;
    rec.accuracy = correct as f64 / n;
    for c in 0..NUM_COLOURS {
        rec.gate_counts[c] /= n;
        rec.score_sums[c] /= n;
    }
    state.epoch += 1;
    Ok(rec)
}

/// Trains for `cfg.epochs` epochs from `state`'s current epoch.
pub fn train(state: &mut TrainState, data: &[Example], cfg: &TrainConfig) -> Result<History> {
    check_examples(data)?;
    cfg.reg.validate().map_err(Error::ShapeMismatch)?;
    let mut history = History::default();
    while state.epoch < cfg.epochs {
        history.records.push(train_epoch(state, data, cfg)?);
    }
    Ok(history)
}

/// Scores every example (one group per example) and collects gates.
pub fn evaluate(model: &FafeModel, data: &[Example]) -> Result<(Vec<ScoredItem>, GatesReport)> {
    use rayon::prelude::*;
    let preds = data
        .par_iter()
        .map(|e| model.predict(e.image))
        .collect::<Result<Vec<_>>>()?;
    let items = preds
        .iter()
        .zip(data)
        .enumerate()
        .map(|(i, ((p, _), e))| ScoredItem::single(i.to_string(), *p, e.label))
        .collect();
    let gates: Vec<_> = preds.into_iter().map(|(_, g)| g).collect();
    let report = gates_report(model.geometry(), &gates)?;
    Ok((items, report))
}

/// Number of learnable values, by tensor name.
pub fn parameter_table(model: &FafeModel) -> Vec<(String, usize)> {
    let mut out = Vec::new();
    model.visit(&mut |name, _, v| out.push((name.to_string(), v.len())));
    out
}
