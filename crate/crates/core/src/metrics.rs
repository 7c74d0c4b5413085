//! Confusion counts, overlap metrics and the soft dice training loss.
//!
//! Empty-denominator convention: a metric whose denominator is zero is 1.0,
//! because that only happens when both prediction and ground truth are empty
//! for the pixels that metric looks at.

use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{fmt_shape, Scalar, Tensor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl std::ops::Add for ConfusionCounts {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        ConfusionCounts {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            tn: self.tn + o.tn,
            fn_: self.fn_ + o.fn_,
        }
    }
}

impl std::ops::AddAssign for ConfusionCounts {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// `2TP / (2TP + FP + FN)`
    pub fn dice(&self) -> f64 {
        ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }

    /// `TP / (TP + FP + FN)`
    pub fn iou(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp + self.fn_)
    }

    /// `TP / (TP + FP)`: the sensitivity formula as printed in the source
    /// evaluation protocol, which is conventionally called precision.
    pub fn sensitivity_paper(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    /// `TP / (TP + FN)`: conventional sensitivity.
    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// `(TP + TN) / total`. Errors on an empty count.
    pub fn accuracy(&self) -> Result<f64> {
        if self.total() == 0 {
            return Err(Error::Validation("accuracy of zero evaluated pixels".into()));
        }
        Ok(ratio(self.tp + self.tn, self.total()))
    }

    pub fn summary(&self) -> Result<MetricSummary> {
        Ok(MetricSummary {
            dice: self.dice(),
            iou: self.iou(),
            sensitivity_paper: self.sensitivity_paper(),
            recall: self.recall(),
            accuracy: self.accuracy()?,
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub dice: f64,
    pub iou: f64,
    pub sensitivity_paper: f64,
    pub recall: f64,
    pub accuracy: f64,
}

impl MetricSummary {
    pub const KEYS: [&'static str; 5] = ["dice", "iou", "sensitivity_paper", "recall", "accuracy"];

    pub fn values(&self) -> [f64; 5] {
        [self.dice, self.iou, self.sensitivity_paper, self.recall, self.accuracy]
    }

    pub fn from_values(v: [f64; 5]) -> Self {
        MetricSummary {
            dice: v[0],
            iou: v[1],
            sensitivity_paper: v[2],
            recall: v[3],
            accuracy: v[4],
        }
    }
}

/// Pixelwise confusion counts. A prediction equal to the threshold counts
/// as positive. The mask must contain only 0 and 1.
pub fn confusion<T: Scalar>(pred: &Tensor<T>, mask: &Tensor<T>, threshold: f64) -> Result<ConfusionCounts> {
    if pred.shape() != mask.shape() {
        return Err(Error::shape("confusion", fmt_shape(pred.shape()), fmt_shape(mask.shape())));
    }
    let thr = T::of(threshold);
    let mut c = ConfusionCounts::default();
    for (&p, &m) in pred.data().iter().zip(mask.data()) {
        let truth = if m == T::one() {
            true
        } else if m == T::zero() {
            false
        } else {
            return Err(Error::Validation(format!("mask value {m} is not binary")));
        };
        match (p >= thr, truth) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// Soft dice loss averaged over the batch:
/// `1 − mean_n (2·Σ pred·mask + smooth) / (Σ pred + Σ mask + smooth)`,
/// sums running over every pixel of sample `n`.
pub fn dice_loss<T: Scalar>(tape: &mut Tape<T>, pred: Var, mask: Var, smooth: f64) -> Result<Var> {
    if tape.shape(pred) != tape.shape(mask) {
        return Err(Error::shape(
            "dice_loss",
            fmt_shape(tape.shape(pred)),
            fmt_shape(tape.shape(mask)),
        ));
    }
    let rank = tape.shape(pred).len();
    if rank < 2 {
        return Err(Error::shape("dice_loss", "[N, ...]", fmt_shape(tape.shape(pred))));
    }
    let inter = tape.mul(pred, mask)?;
    let inter = tape.sum_trailing(inter, rank - 1)?;
    let num = tape.scale(inter, 2.0);
    let num = tape.add_scalar(num, smooth);
    let ps = tape.sum_trailing(pred, rank - 1)?;
    let ms = tape.sum_trailing(mask, rank - 1)?;
    let den = tape.add(ps, ms)?;
    let den = tape.add_scalar(den, smooth);
    let score = tape.div(num, den)?;
    let mean = tape.mean_all(score);
    let neg = tape.scale(mean, -1.0);
    Ok(tape.add_scalar(neg, 1.0))
}

/// Convenience: evaluate [`dice_loss`] on plain tensors.
pub fn dice_loss_value<T: Scalar>(pred: &Tensor<T>, mask: &Tensor<T>, smooth: f64) -> Result<T> {
    let mut tape = Tape::new();
    let p = tape.constant(pred.clone());
    let m = tape.constant(mask.clone());
    let l = dice_loss(&mut tape, p, m, smooth)?;
    Ok(tape.value(l).item())
}
