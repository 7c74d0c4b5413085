use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::checkpoint::Checkpoint;
use super::config::TrainConfig;
use super::optim::{adam_step, OptimState};
use crate::autograd::Tape;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::metrics::{confusion, dice_loss, ConfusionCounts, MetricSummary};
use crate::model::Model;
use crate::nn::{Ctx, BN_MOMENTUM};
use crate::tensor::Scalar;

/// Probability at or above which a pixel counts as foreground.
pub const THRESHOLD: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Optimizer steps taken so far, this epoch included.
    pub steps: usize,
    /// Mean dice loss over this epoch's batches.
    pub train_loss: f64,
    /// Per-step losses in order.
    pub step_losses: Vec<f64>,
    pub validation: Option<MetricSummary>,
}

/// Everything besides the parameters that a resumed run needs.
#[derive(Clone, Debug)]
pub struct TrainState<T> {
    pub optim: OptimState<T>,
    /// Drives the per-epoch shuffle.
    pub rng: ChaCha8Rng,
    /// Completed epochs.
    pub epoch: usize,
    pub step: usize,
}

impl<T: Scalar> TrainState<T> {
    pub fn new(model: &Model<T>, seed: u64) -> Self {
        TrainState {
            optim: OptimState::new(model.params()),
            rng: ChaCha8Rng::seed_from_u64(seed),
            epoch: 0,
            step: 0,
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint, model: &Model<T>) -> Result<Self> {
        let optim = ck
            .optim_state(model.params())?
            .ok_or_else(|| Error::Usage("checkpoint has no optimizer state to resume from".into()))?;
        let rng = ck
            .rng()?
            .ok_or_else(|| Error::Usage("checkpoint has no RNG state to resume from".into()))?;
        Ok(TrainState {
            step: optim.t as usize,
            optim,
            rng,
            epoch: ck.epoch,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

#[derive(Clone, Debug)]
pub struct FitOutcome {
    pub history: Vec<EpochRecord>,
    /// Snapshot at the best validation dice (the last epoch when there is
    /// no validation set). `None` when no epoch ran.
    pub best: Option<Checkpoint>,
    pub best_epoch: Option<usize>,
}

/// One forward/backward/Adam step on a batch. Returns the loss.
pub fn train_step<T: Scalar>(
    model: &mut Model<T>,
    state: &mut TrainState<T>,
    images: crate::Tensor<T>,
    masks: crate::Tensor<T>,
    lr: f64,
    smooth: f64,
) -> Result<f64> {
    let mut tape = Tape::new();
    let (loss, grads, stats) = {
        let mut ctx = Ctx::new(&mut tape, model.params(), true);
        let x = ctx.tape.constant(images);
        let m = ctx.tape.constant(masks);
        let pred = model.forward(&mut ctx, x)?;
        let loss = dice_loss(&mut *ctx.tape, pred, m, smooth)?;
        let value = ctx.tape.value(loss).item().as_f64();
        if !value.is_finite() {
            let origin = match ctx.tape.first_non_finite() {
                Some((scope, op)) if !scope.is_empty() => format!("first produced by {op} in layer {scope}"),
                Some((_, op)) => format!("first produced by {op} in the loss"),
                None => "no non-finite intermediate recorded".into(),
            };
            return Err(Error::Numerical(format!("loss is {value}; {origin}")));
        }
        ctx.tape.backward(loss)?;
        (value, ctx.param_grads(), ctx.take_stat_updates())
    };
    for (id, g) in &grads {
        if !g.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite gradient for parameter {}",
                model.params().entry(*id).name
            )));
        }
    }
    adam_step(model.params_mut(), &grads, &mut state.optim, lr)?;
    model.params_mut().apply_stat_updates(&stats, BN_MOMENTUM);
    state.step += 1;
    Ok(loss)
}

/// Pooled confusion counts of thresholded predictions over a dataset.
pub fn evaluate<T: Scalar>(model: &Model<T>, data: &Dataset<T>, batch_size: usize) -> Result<ConfusionCounts> {
    let mut counts = ConfusionCounts::default();
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let (x, m) = data.batch(chunk);
        let p = model.predict(&x)?;
        counts += confusion(&p, &m, THRESHOLD)?;
    }
    Ok(counts)
}

/// Train for `config.epochs` epochs (counting those already in `state`).
///
/// Every epoch reshuffles with the state's RNG, keeps the last partial
/// batch, and evaluates the validation set when one is given. `on_epoch`
/// sees the model after each epoch and may stop the run early.
pub fn fit<T: Scalar>(
    model: &mut Model<T>,
    train: &Dataset<T>,
    validation: Option<&Dataset<T>>,
    config: &TrainConfig,
    state: &mut TrainState<T>,
    on_epoch: &mut dyn FnMut(&Model<T>, &EpochRecord) -> Control,
) -> Result<FitOutcome> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Usage("training set is empty".into()));
    }
    let mut outcome = FitOutcome {
        history: Vec::new(),
        best: None,
        best_epoch: None,
    };
    let mut best_dice = f64::NEG_INFINITY;
    let step_cap = (config.max_steps > 0).then_some(config.max_steps);
    while state.epoch < config.epochs {
        let epoch = state.epoch;
        let lr = config.lr_at(epoch);
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut state.rng);
        let mut losses = Vec::new();
        for chunk in order.chunks(config.batch_size) {
            if step_cap.is_some_and(|c| state.step >= c) {
                break;
            }
            let (x, m) = train.batch(chunk);
            let loss = train_step(model, state, x, m, lr, config.dice_smooth)
                .map_err(|e| e.context(&format!("epoch {epoch}, step {}", state.step)))?;
            losses.push(loss);
        }
        if losses.is_empty() {
            break;
        }
        state.epoch += 1;
        let validation = match validation {
            Some(v) if !v.is_empty() => Some(evaluate(model, v, config.batch_size)?.summary()?),
            _ => None,
        };
        let record = EpochRecord {
            epoch,
            lr,
            steps: state.step,
            train_loss: losses.iter().sum::<f64>() / losses.len() as f64,
            step_losses: losses,
            validation,
        };
        let capped = step_cap.is_some_and(|c| state.step >= c);
        let last = state.epoch == config.epochs || capped;
        let improved = match &record.validation {
            Some(v) => v.dice > best_dice,
            None => last,
        };
        if improved {
            best_dice = record.validation.map_or(best_dice, |v| v.dice);
            outcome.best = Some(Checkpoint::capture(model, Some(&state.optim), Some(&state.rng), state.epoch));
            outcome.best_epoch = Some(epoch);
        }
        let control = on_epoch(model, &record);
        outcome.history.push(record);
        if control == Control::Stop || capped {
            if validation.is_none() && !last {
                outcome.best = Some(Checkpoint::capture(model, Some(&state.optim), Some(&state.rng), state.epoch));
                outcome.best_epoch = Some(epoch);
            }
            break;
        }
    }
    Ok(outcome)
}
