#![allow(dead_code)]

pub mod oracle;

use amseg::autograd::gradcheck::{grad_check, GradCheckOptions, GradReport};
use amseg::nn::{Ctx, ParamId, ParamStore};
use amseg::{Result, Tape, Tensor, Var};

/// Gradient check of a block with respect to its inputs and every listed
/// parameter. `f` receives the context (parameters already routed to the
/// perturbed copies) and the input vars.
pub fn block_grad_check<F>(
    store: &ParamStore<f64>,
    params: &[ParamId],
    inputs: &[Tensor<f64>],
    train: bool,
    seed: u64,
    f: F,
) -> GradReport
where
    F: Fn(&mut Ctx<'_, f64>, &[Var]) -> Result<Var>,
{
    let mut all: Vec<Tensor<f64>> = inputs.to_vec();
    all.extend(params.iter().map(|&id| store.get(id).clone()));
    let k = inputs.len();
    grad_check(
        |tape: &mut Tape<f64>, vars: &[Var]| {
            let mut ctx = Ctx::new(tape, store, train);
            for (&id, &v) in params.iter().zip(&vars[k..]) {
                ctx.bind(id, v);
            }
            f(&mut ctx, &vars[..k])
        },
        &all,
        &GradCheckOptions::default().seed(seed),
    )
    .expect("forward succeeds")
}

/// Run `f` once in inference mode and return the output value.
pub fn eval<F>(store: &ParamStore<f64>, inputs: &[Tensor<f64>], f: F) -> Tensor<f64>
where
    F: Fn(&mut Ctx<'_, f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let mut ctx = Ctx::inference(&mut tape, store);
    let vars: Vec<Var> = inputs.iter().map(|t| ctx.tape.constant(t.clone())).collect();
    let y = f(&mut ctx, &vars).unwrap();
    tape.value(y).clone()
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Split `ids` into those checked by central differences and those whose
/// gradient is identically zero by construction: the key bias of attention
/// (a per-query constant shift that softmax removes) and, when batch
/// statistics are used, conv biases feeding a batch norm. Central differences
/// on the latter only measure rounding noise, so they are instead asserted
/// to have a vanishing analytic gradient.
pub fn split_invariant(store: &ParamStore<f64>, ids: &[ParamId], train: bool) -> (Vec<ParamId>, Vec<ParamId>) {
    ids.iter().partition(|&&id| {
        let name = &store.entry(id).name;
        let key_bias = name.ends_with(".k.bias");
        let pre_norm_bias = train && name.contains(".conv") && name.ends_with(".bias") && store.find(&bn_for(name)).is_some();
        !(key_bias || pre_norm_bias)
    })
}

fn bn_for(conv_bias: &str) -> String {
    // `{block}.conv{i}.bias` is followed by `{block}.bn{i}`
    conv_bias.replace(".conv", ".bn").replace(".bias", ".gamma")
}

/// Largest analytic gradient magnitude over `ids` for a forward `f`.
pub fn max_param_grad<F>(store: &ParamStore<f64>, ids: &[ParamId], inputs: &[Tensor<f64>], train: bool, f: F) -> f64
where
    F: Fn(&mut Ctx<'_, f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let mut ctx = Ctx::new(&mut tape, store, train);
    let vars: Vec<Var> = inputs.iter().map(|t| ctx.tape.constant(t.clone())).collect();
    let y = f(&mut ctx, &vars).unwrap();
    let loss = ctx.tape.sum_all(y);
    let bound: Vec<Var> = ids.iter().map(|&id| ctx.param(id)).collect();
    ctx.tape.backward(loss).unwrap();
    bound
        .iter()
        .filter_map(|&v| tape.grad(v))
        .flat_map(|g| g.data().iter().map(|x| x.abs()))
        .fold(0.0, f64::max)
}

/// Central-difference check on the non-invariant parameters plus a
/// vanishing-gradient assertion on the invariant ones.
pub fn check_block<F>(store: &ParamStore<f64>, ids: &[ParamId], inputs: &[Tensor<f64>], train: bool, seed: u64, f: F) -> f64
where
    F: Fn(&mut Ctx<'_, f64>, &[Var]) -> Result<Var> + Copy,
{
    let (checked, invariant) = split_invariant(store, ids, train);
    if !invariant.is_empty() {
        let g = max_param_grad(store, &invariant, inputs, train, f);
        assert!(g < 1e-12, "structurally invariant parameter has gradient {g:e}");
    }
    block_grad_check(store, &checked, inputs, train, seed, f).max_rel_err()
}
