use crate::error::{Error, Result};
use crate::nn::{ParamId, ParamStore};
use crate::tensor::{fmt_shape, Scalar, Tensor};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam moments, one slot per entry of the parameter store (buffers keep
/// an empty slot).
#[derive(Clone, Debug, PartialEq)]
pub struct OptimState<T> {
    pub m: Vec<Option<Tensor<T>>>,
    pub v: Vec<Option<Tensor<T>>>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Scalar> OptimState<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        let zeros = || {
            params
                .entries()
                .iter()
                .map(|e| e.learnable.then(|| Tensor::zeros(e.value.shape())))
                .collect::<Vec<_>>()
        };
        OptimState {
            m: zeros(),
            v: zeros(),
            t: 0,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
        }
    }
}

/// One bias-corrected Adam step.
///
/// Learnable parameters missing from `grads` keep their value and moments
/// (they took no part in the pass). An empty gradient list is a usage error.
pub fn adam_step<T: Scalar>(
    params: &mut ParamStore<T>,
    grads: &[(ParamId, Tensor<T>)],
    state: &mut OptimState<T>,
    lr: f64,
) -> Result<()> {
    if grads.is_empty() {
        return Err(Error::Usage("adam step without gradients; run backward first".into()));
    }
    if state.m.len() != params.len() {
        return Err(Error::Usage(format!(
            "optimizer state covers {} parameters, store has {}",
            state.m.len(),
            params.len()
        )));
    }
    for (id, g) in grads {
        let entry = params.entry(*id);
        if !entry.learnable {
            return Err(Error::Usage(format!("gradient supplied for buffer {}", entry.name)));
        }
        if g.shape() != entry.value.shape() {
            return Err(Error::shape(
                "adam_step",
                format!("{} {}", entry.name, fmt_shape(entry.value.shape())),
                fmt_shape(g.shape()),
            ));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let (b1, b2, eps) = (T::of(b1), T::of(b2), T::of(state.eps));
    let (one, lr_t) = (T::one(), T::of(lr));
    let (c1, c2) = (T::of(c1), T::of(c2));
    for (id, g) in grads {
        let i = id.index();
        let (m, v) = match (state.m[i].as_mut(), state.v[i].as_mut()) {
            (Some(m), Some(v)) => (m, v),
            _ => return Err(Error::Usage(format!("no optimizer slot for {}", params.entry(*id).name))),
        };
        let p = params.get_mut(*id).data_mut();
        for (((p, m), v), &g) in p.iter_mut().zip(m.data_mut()).zip(v.data_mut()).zip(g.data()) {
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p = *p - lr_t * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
