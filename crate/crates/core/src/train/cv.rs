use std::thread;

use super::checkpoint::Checkpoint;
use super::config::TrainConfig;
use super::fit::{evaluate, fit, Control, EpochRecord, TrainState};
use super::report::{CvReport, FoldRow};
use crate::data::{kfold_split_ids, Dataset};
use crate::error::Result;
use crate::model::{Model, ModelConfig};
use crate::tensor::Scalar;

#[derive(Clone, Debug)]
pub struct FoldOutcome {
    pub row: FoldRow,
    pub history: Vec<EpochRecord>,
    pub checkpoint: Option<Checkpoint>,
}

#[derive(Clone, Debug)]
pub struct CvOutcome {
    pub report: CvReport,
    pub folds: Vec<FoldOutcome>,
}

fn run_fold<T: Scalar>(
    fold: usize,
    data: &Dataset<T>,
    split: &crate::data::Fold,
    model_config: &ModelConfig,
    config: &TrainConfig,
) -> Result<FoldOutcome> {
    let seed = config.seed.wrapping_add(fold as u64);
    let mut model = Model::<T>::build(model_config.clone(), seed)?;
    let train = data.subset(&split.train);
    let val = data.subset(&split.validation);
    let mut state = TrainState::new(&model, seed);
    let outcome = fit(&mut model, &train, Some(&val), config, &mut state, &mut |_, _| Control::Continue)?;
    if let Some(best) = &outcome.best {
        best.load_into(&mut model)?;
    }
    let metrics = evaluate(&model, &val, config.batch_size)?.summary()?;
    Ok(FoldOutcome {
        row: FoldRow {
            fold,
            validation_patients: split.validation_patients.clone(),
            train_samples: split.train.len(),
            validation_samples: split.validation.len(),
            best_epoch: outcome.best_epoch,
            metrics,
        },
        history: outcome.history,
        checkpoint: outcome.best,
    })
}

/// Patient-grouped k-fold cross-validation.
///
/// Fold `i` trains a fresh model seeded with `seed + i` and is scored with
/// its best-validation snapshot. Up to `config.threads` folds run at once;
/// results do not depend on the thread count.
pub fn cross_validate<T: Scalar>(
    data: &Dataset<T>,
    model_config: &ModelConfig,
    config: &TrainConfig,
) -> Result<CvOutcome> {
    config.validate()?;
    model_config.validate()?;
    let splits = kfold_split_ids(&data.patient_ids, config.folds, config.seed)?;
    let mut results: Vec<Option<Result<FoldOutcome>>> = (0..splits.len()).map(|_| None).collect();
    let ids: Vec<usize> = (0..splits.len()).collect();
    for group in ids.chunks(config.threads) {
        thread::scope(|s| {
            let handles: Vec<_> = group
                .iter()
                .map(|&f| {
                    let split = &splits[f];
                    (f, s.spawn(move || run_fold(f, data, split, model_config, config)))
                })
                .collect();
            for (f, h) in handles {
                results[f] = Some(h.join().expect("fold worker panicked"));
            }
        });
    }
    let mut folds = Vec::with_capacity(splits.len());
    for (f, r) in results.into_iter().enumerate() {
        folds.push(r.expect("every fold ran").map_err(|e| e.context(&format!("fold {f}")))?);
    }
    let params_total = Model::<T>::build(model_config.clone(), 0)?.count_params().total;
    let report = CvReport::from_folds(folds.iter().map(|f| f.row.clone()).collect(), params_total);
    Ok(CvOutcome { report, folds })
}
