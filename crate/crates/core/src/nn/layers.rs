use rand::Rng;

use super::params::{fan_in_uniform, Ctx, ParamId, ParamStore, StatUpdate};
use crate::autograd::{ConvGeom, Var};
use crate::error::Result;
use crate::tensor::{Scalar, Tensor};

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub geom: ConvGeom,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        geom: ConvGeom,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let cpg = in_channels / geom.groups;
        let fan_in = cpg * kernel * kernel;
        let weight = store.add(
            format!("{name}.weight"),
            fan_in_uniform(&[out_channels, cpg, kernel, kernel], fan_in, rng),
        );
        let bias = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(&[out_channels])));
        Conv2d {
            weight,
            bias,
            geom,
            in_channels,
            out_channels,
            kernel,
        }
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let w = ctx.param(self.weight);
        let b = self.bias.map(|b| ctx.param(b));
        ctx.tape.conv2d(x, w, b, self.geom)
    }

    pub fn param_count(&self) -> usize {
        let w = self.out_channels * (self.in_channels / self.geom.groups) * self.kernel * self.kernel;
        w + if self.bias.is_some() { self.out_channels } else { 0 }
    }
}

/// Dense projection over the last axis.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_features: usize,
    pub out_features: usize,
}

impl Linear {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_features: usize,
        out_features: usize,
        rng: &mut R,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            fan_in_uniform(&[in_features, out_features], in_features, rng),
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[out_features]));
        Linear {
            weight,
            bias,
            in_features,
            out_features,
        }
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let w = ctx.param(self.weight);
        let b = ctx.param(self.bias);
        ctx.tape.linear(x, w, Some(b))
    }

    pub fn param_count(&self) -> usize {
        self.in_features * self.out_features + self.out_features
    }
}

/// Batch normalization over `[N,C,H,W]` with learned scale/shift.
///
/// In training mode a batch of at least two samples is normalized with its
/// own statistics and the running statistics are updated afterwards via
/// [`Ctx::take_stat_updates`]. A single-sample batch, and eval mode, use the
/// running statistics.
#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub channels: usize,
}

impl BatchNorm2d {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Self {
        BatchNorm2d {
            gamma: store.add(format!("{name}.gamma"), Tensor::ones(&[channels])),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[channels])),
            running_mean: store.add_buffer(format!("{name}.running_mean"), Tensor::zeros(&[channels])),
            running_var: store.add_buffer(format!("{name}.running_var"), Tensor::ones(&[channels])),
            channels,
        }
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let gamma = ctx.param(self.gamma);
        let beta = ctx.param(self.beta);
        let batch_stats = ctx.train() && ctx.tape.shape(x).first().is_some_and(|&n| n >= 2);
        if batch_stats {
            let (y, moments) = ctx.tape.batch_norm(x, gamma, beta, None, BN_EPS)?;
            ctx.record_stats(StatUpdate {
                running_mean: self.running_mean,
                running_var: self.running_var,
                moments: moments.expect("batch statistics requested"),
            });
            Ok(y)
        } else {
            let mean = ctx.store().get(self.running_mean).data().to_vec();
            let var = ctx.store().get(self.running_var).data().to_vec();
            let (y, _) = ctx.tape.batch_norm(x, gamma, beta, Some((&mean, &var)), BN_EPS)?;
            Ok(y)
        }
    }

    pub fn param_count(&self) -> usize {
        2 * self.channels
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Tape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn batchnorm_train_normalizes_per_channel() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut store = ParamStore::<f64>::new();
        let bn = BatchNorm2d::new(&mut store, "bn", 16);
        let x = Tensor::<f64>::uniform(&[8, 16, 5, 5], -3.0, 7.0, &mut rng);
        let mut tape = Tape::new();
        let mut ctx = Ctx::new(&mut tape, &store, true);
        let xv = ctx.tape.constant(x);
        let y = bn.forward(&mut ctx, xv).unwrap();
        let updates = ctx.take_stat_updates();
        let out = tape.value(y);
        let hw = 25;
        for c in 0..16 {
            let vals: Vec<f64> = (0..8)
                .flat_map(|n| out.data()[(n * 16 + c) * hw..(n * 16 + c + 1) * hw].to_vec())
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-5, "channel {c} mean {mean}");
            assert!((var - 1.0).abs() < 1e-4, "channel {c} var {var}");
        }
        assert_eq!(updates.len(), 1);
        store.apply_stat_updates(&updates, BN_MOMENTUM);
        let rm = store.get(bn.running_mean).data()[0];
        assert!((rm - 0.1 * updates[0].moments.mean[0]).abs() < 1e-12);
    }

    #[test]
    fn batchnorm_single_sample_uses_running_stats() {
        let mut store = ParamStore::<f64>::new();
        let bn = BatchNorm2d::new(&mut store, "bn", 2);
        let x = Tensor::<f64>::from_f64_slice(&[1, 2, 1, 2], &[1., 2., 3., 4.]).unwrap();
        let mut tape = Tape::new();
        let mut ctx = Ctx::new(&mut tape, &store, true);
        let xv = ctx.tape.constant(x.clone());
        let y = bn.forward(&mut ctx, xv).unwrap();
        assert!(ctx.take_stat_updates().is_empty());
        // running stats (0, 1): y = x / sqrt(1 + eps)
        let k = 1.0 / (1.0 + BN_EPS).sqrt();
        for (a, b) in tape.value(y).data().iter().zip(x.data()) {
            assert!((a - b * k).abs() < 1e-15);
        }
    }
}
