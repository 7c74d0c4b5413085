use rand::Rng;

use crate::autograd::{BatchMoments, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct ParamEntry<T> {
    pub name: String,
    pub value: Tensor<T>,
    /// Running statistics and other state that is saved but not optimized.
    pub learnable: bool,
}

/// Owns every named tensor of a network. Layers hold [`ParamId`]s into it.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    entries: Vec<ParamEntry<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { entries: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        self.push(name.into(), value, true)
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        self.push(name.into(), value, false)
    }

    fn push(&mut self, name: String, value: Tensor<T>, learnable: bool) -> ParamId {
        debug_assert!(
            self.entries.iter().all(|e| e.name != name),
            "duplicate parameter name {name}"
        );
        self.entries.push(ParamEntry { name, value, learnable });
        ParamId(self.entries.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].value
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry<T> {
        &self.entries[id.0]
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    /// Number of learnable scalars.
    pub fn count_learnable(&self) -> usize {
        self.entries.iter().filter(|e| e.learnable).map(|e| e.value.numel()).sum()
    }

    /// Learnable scalars whose name starts with `prefix`.
    pub fn count_prefix(&self, prefix: &str) -> usize {
        self.entries
            .iter()
            .filter(|e| e.learnable && e.name.starts_with(prefix))
            .map(|e| e.value.numel())
            .sum()
    }

    /// Replace every value from `other`, which must have identical names and shapes.
    pub fn copy_from(&mut self, other: &ParamStore<T>) -> Result<()> {
        if self.entries.len() != other.entries.len() {
            return Err(Error::Config(format!(
                "parameter count mismatch: {} vs {}",
                self.entries.len(),
                other.entries.len()
            )));
        }
        for (a, b) in self.entries.iter_mut().zip(&other.entries) {
            if a.name != b.name || a.value.shape() != b.value.shape() {
                return Err(Error::Config(format!(
                    "parameter {} {:?} does not match {} {:?}",
                    a.name,
                    a.value.shape(),
                    b.name,
                    b.value.shape()
                )));
            }
            a.value = b.value.clone();
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry {
                    name: e.name.clone(),
                    value: e.value.cast(),
                    learnable: e.learnable,
                })
                .collect(),
        }
    }
}

/// Fan-in scaled uniform init `U(−√(6/fan_in), √(6/fan_in))`, variance
/// preserving through a ReLU.
pub fn fan_in_uniform<T: Scalar, R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<T> {
    let bound = (6.0 / fan_in as f64).sqrt();
    Tensor::uniform(shape, -bound, bound, rng)
}

/// Batch statistics observed by one batch-norm layer during a training pass.
#[derive(Clone, Debug)]
pub struct StatUpdate<T> {
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub moments: BatchMoments<T>,
}

impl<T: Scalar> ParamStore<T> {
    /// Fold batch statistics into running statistics:
    /// `running ← (1 − momentum)·running + momentum·batch`.
    pub fn apply_stat_updates(&mut self, updates: &[StatUpdate<T>], momentum: f64) {
        let m = T::of(momentum);
        let keep = T::one() - m;
        for u in updates {
            for (id, batch) in [(u.running_mean, &u.moments.mean), (u.running_var, &u.moments.var_unbiased)] {
                for (r, &b) in self.get_mut(id).data_mut().iter_mut().zip(batch) {
                    *r = keep * *r + m * b;
                }
            }
        }
    }
}

/// Forward-pass context: a tape plus lazy bindings from parameters to tape
/// leaves, and the batch-norm statistic updates produced in training mode.
pub struct Ctx<'a, T: Scalar> {
    pub tape: &'a mut Tape<T>,
    params: &'a ParamStore<T>,
    bound: Vec<Option<Var>>,
    train: bool,
    grad_params: bool,
    stat_updates: Vec<StatUpdate<T>>,
}

impl<'a, T: Scalar> Ctx<'a, T> {
    pub fn new(tape: &'a mut Tape<T>, params: &'a ParamStore<T>, train: bool) -> Self {
        Ctx {
            tape,
            params,
            bound: vec![None; params.len()],
            train,
            grad_params: true,
            stat_updates: Vec::new(),
        }
    }

    /// Inference context: parameters enter the tape as constants.
    pub fn inference(tape: &'a mut Tape<T>, params: &'a ParamStore<T>) -> Self {
        let mut ctx = Self::new(tape, params, false);
        ctx.grad_params = false;
        ctx
    }

    pub fn train(&self) -> bool {
        self.train
    }

    pub fn store(&self) -> &ParamStore<T> {
        self.params
    }

    /// Tape node for a parameter, created on first use.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let entry = &self.params.entries[id.0];
        let v = self.tape.leaf(entry.value.clone(), self.grad_params && entry.learnable);
        self.bound[id.0] = Some(v);
        v
    }

    /// Route a parameter to an existing tape node (used by gradient checks
    /// that perturb parameters as ordinary inputs).
    pub fn bind(&mut self, id: ParamId, v: Var) {
        self.bound[id.0] = Some(v);
    }

    pub fn bound(&self, id: ParamId) -> Option<Var> {
        self.bound[id.0]
    }

    pub(crate) fn record_stats(&mut self, update: StatUpdate<T>) {
        self.stat_updates.push(update);
    }

    /// Gradients of every bound learnable parameter after `tape.backward`.
    pub fn param_grads(&self) -> Vec<(ParamId, Tensor<T>)> {
        self.bound
            .iter()
            .enumerate()
            .filter_map(|(i, v)| {
                let v = (*v)?;
                self.tape.grad(v).map(|g| (ParamId(i), g.clone()))
            })
            .collect()
    }

    pub fn take_stat_updates(&mut self) -> Vec<StatUpdate<T>> {
        std::mem::take(&mut self.stat_updates)
    }
}
