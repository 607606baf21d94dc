use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{onehot, LossWeights, Mdl4owNet};
use crate::data_io::SampleSet;
use crate::error::{Error, Result};
use crate::tensor::{adadelta_step, AdaDelta, Tape};

/// Relative drop an epoch loss needs to count as an improvement.
pub const EARLY_STOP_MIN_DELTA: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub nos: usize,
    pub batch_size: usize,
    pub phase1_epochs: usize,
    pub phase2_epochs: usize,
    pub lr_phase1: f32,
    pub lr_phase2: f32,
    pub patience: usize,
    pub loss_weights: LossWeights,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            nos: 20,
            batch_size: 32,
            phase1_epochs: 170,
            phase2_epochs: 30,
            lr_phase1: 1.0,
            lr_phase2: 0.1,
            patience: 5,
            loss_weights: LossWeights::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        if self.phase1_epochs == 0 || self.phase2_epochs == 0 {
            return Err(Error::invalid("epoch counts must be positive"));
        }
        if self.patience == 0 {
            return Err(Error::invalid("patience must be at least 1"));
        }
        for lr in [self.lr_phase1, self.lr_phase2] {
            if !(lr.is_finite() && lr >= 0.0) {
                return Err(Error::invalid(format!("bad learning rate {lr}")));
            }
        }
        LossWeights::new(self.loss_weights.lambda_c, self.loss_weights.lambda_r)?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub phase: u8,
    pub epoch: usize,
    pub total: f64,
    pub classification: f64,
    pub reconstruction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub phase1_epochs: usize,
    pub phase2_epochs: usize,
    /// Not serialized so that reports of identical runs are byte-identical.
    #[serde(skip)]
    pub wall_clock_seconds: f64,
}

/// Two-phase AdaDelta training with early stopping on the epoch-mean total loss.
///
/// `samples` must already be augmented. Batch order is drawn from a ChaCha8
/// stream seeded with `config.seed`; the last partial batch is kept.
/// A non-finite loss aborts with [`Error::Numerical`].
pub fn train(
    net: &mut Mdl4owNet,
    samples: &SampleSet,
    config: &TrainConfig,
) -> Result<TrainReport> {
    config.validate()?;
    if samples.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    let labels = samples.labels();
    onehot(&labels, net.num_classes())?;
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut epochs = Vec::new();
    let mut ran = [0usize; 2];
    let phases = [
        (config.phase1_epochs, config.lr_phase1),
        (config.phase2_epochs, config.lr_phase2),
    ];
    for (phase, &(max_epochs, lr)) in phases.iter().enumerate() {
        let mut best = f64::INFINITY;
        let mut stale = 0;
        for epoch in 1..=max_epochs {
            order.shuffle(&mut rng);
            let mut sums = [0.0f64; 3];
            for chunk in order.chunks(config.batch_size) {
                let batch = samples.batch(chunk)?;
                let chunk_labels: Vec<u16> = chunk.iter().map(|&i| labels[i]).collect();
                let target = onehot(&chunk_labels, net.num_classes())?;
                let mut tape = Tape::new();
                let (total, ce, l1) =
                    net.loss_on_tape(&mut tape, &batch, &target, config.loss_weights)?;
                let values = [total, ce, l1].map(|v| tape.value(v).data()[0] as f64);
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Numerical(format!(
                        "non-finite loss in phase {} epoch {epoch}",
                        phase + 1
                    )));
                }
                tape.backward(total, net.params_mut())?;
                adadelta_step(net.params_mut(), AdaDelta::default(), lr);
                for (s, v) in sums.iter_mut().zip(values) {
                    *s += v * chunk.len() as f64;
                }
            }
            let n = samples.len() as f64;
            let record = EpochRecord {
                phase: phase as u8 + 1,
                epoch,
                total: sums[0] / n,
                classification: sums[1] / n,
                reconstruction: sums[2] / n,
            };
            let mean = record.total;
            epochs.push(record);
            ran[phase] = epoch;
            if mean < best * (1.0 - EARLY_STOP_MIN_DELTA) {
                best = mean;
                stale = 0;
            } else {
                stale += 1;
                if stale >= config.patience {
                    break;
                }
            }
        }
    }
    if net.params().iter().any(|p| !p.value.all_finite()) {
        return Err(Error::Numerical("non-finite weights after training".into()));
    }
    Ok(TrainReport {
        epochs,
        phase1_epochs: ran[0],
        phase2_epochs: ran[1],
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    })
}
