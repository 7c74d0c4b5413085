use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{EncoderKind, ModelConfig, STAGES};
use super::trace::ShapeTrace;
use crate::autograd::{ConvGeom, Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{cdwcc, Ccb, Conv2d, Ctx, Ddwpp, ExpandingStage, ExpandingStageSpec, ParamStore, Wmhsa, WmhsaSpec};
use crate::tensor::{fmt_shape, Scalar, Tensor};

#[derive(Clone, Debug)]
enum EncoderStage {
    Expanding(ExpandingStage),
    /// CCB at full resolution, then 2×2 max pooling.
    Ccb(Ccb),
}

#[derive(Clone, Debug)]
struct DecoderStage {
    /// Applied right after upsampling: previous width → stage width.
    conv: Conv2d,
    /// Stage width ×2 (gated ‖ skip) → stage width, or stage → stage when
    /// there is no skip at this resolution.
    fuse: Conv2d,
    has_skip: bool,
}

/// The full segmentation network together with its parameters.
#[derive(Clone, Debug)]
pub struct Model<T: Scalar> {
    config: ModelConfig,
    params: ParamStore<T>,
    encoder: Vec<EncoderStage>,
    attention: Vec<Option<Wmhsa>>,
    skips: Vec<Ddwpp>,
    decoder: Vec<DecoderStage>,
    head: Conv2d,
}

/// Learnable parameter totals, overall and per top-level module.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamBreakdown {
    pub total: usize,
    pub modules: BTreeMap<String, usize>,
}

impl<T: Scalar> Model<T> {
    pub fn build(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let chans = config.stage_channels();
        let inputs = config.stage_inputs();
        let spatial = config.stage_spatial();

        let mut encoder = Vec::with_capacity(STAGES);
        let mut attention = Vec::with_capacity(STAGES);
        for i in 0..STAGES {
            let name = format!("stage{i}");
            encoder.push(match config.encoder {
                EncoderKind::Expanding => {
                    let spec = ExpandingStageSpec {
                        in_channels: inputs[i],
                        out_channels: chans[i],
                        chunks: config.chunk_counts[i],
                        stride: 2,
                    };
                    EncoderStage::Expanding(ExpandingStage::new(&mut store, &name, spec, &mut rng)?)
                }
                EncoderKind::Ccb => EncoderStage::Ccb(Ccb::new(&mut store, &name, inputs[i], chans[i], &mut rng)),
            });
            let rate = config.wmhsa_rates[i];
            attention.push(if rate > 0 {
                let spec = WmhsaSpec {
                    channels: chans[i],
                    heads: config.heads,
                    rate,
                    size: spatial[i],
                };
                Some(Wmhsa::new(&mut store, &format!("wmhsa{i}"), spec, &mut rng)?)
            } else {
                None
            });
        }
        let skips = (0..STAGES)
            .map(|i| Ddwpp::new(&mut store, &format!("skip{i}"), chans[i], &config.ddwpp_branches, &mut rng))
            .collect();
        let dec = config.decoder_channels();
        let same3 = ConvGeom::same(3, 1);
        let mut prev = chans[STAGES - 1];
        let mut decoder = Vec::with_capacity(STAGES);
        for (j, &width) in dec.iter().enumerate() {
            let has_skip = j < STAGES - 1;
            let conv = Conv2d::new(&mut store, &format!("dec{j}.conv"), prev, width, 3, same3, true, &mut rng);
            let fuse_in = if has_skip { 2 * width } else { width };
            let fuse = Conv2d::new(&mut store, &format!("dec{j}.fuse"), fuse_in, width, 3, same3, true, &mut rng);
            decoder.push(DecoderStage { conv, fuse, has_skip });
            prev = width;
        }
        let head = Conv2d::new(&mut store, "head", prev, 1, 1, ConvGeom::default(), true, &mut rng);
        Ok(Model {
            config,
            params: store,
            encoder,
            attention,
            skips,
            decoder,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    /// Same architecture and parameter values in another precision.
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            params: self.params.cast(),
            encoder: self.encoder.clone(),
            attention: self.attention.clone(),
            skips: self.skips.clone(),
            decoder: self.decoder.clone(),
            head: self.head.clone(),
        }
    }

    pub fn count_params(&self) -> ParamBreakdown {
        let mut modules = BTreeMap::new();
        for e in self.params.entries().iter().filter(|e| e.learnable) {
            let key = e.name.split('.').next().unwrap_or_default().to_string();
            *modules.entry(key).or_insert(0) += e.value.numel();
        }
        ParamBreakdown {
            total: self.params.count_learnable(),
            modules,
        }
    }

    /// Forward pass producing per-pixel foreground probabilities `[N,1,H,W]`.
    pub fn forward(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        self.forward_impl(ctx, x, None)
    }

    /// Inference on a batch without recording gradients.
    pub fn predict(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let mut ctx = Ctx::inference(&mut tape, &self.params);
        let x = ctx.tape.constant(batch.clone());
        let y = self.forward(&mut ctx, x)?;
        Ok(tape.value(y).clone())
    }

    /// Instrumented forward at batch 1 on a zero input, recording every
    /// layer's input/output shapes and parameter count.
    pub fn trace_shapes(&self) -> Result<ShapeTrace> {
        let s = self.config.input_size;
        let mut tape = Tape::new();
        let mut ctx = Ctx::inference(&mut tape, &self.params);
        let x = ctx.tape.constant(Tensor::zeros(&[1, self.config.input_channels, s, s]));
        let mut trace = ShapeTrace::default();
        self.forward_impl(&mut ctx, x, Some(&mut trace))?;
        Ok(trace)
    }

    fn forward_impl(&self, ctx: &mut Ctx<'_, T>, x: Var, mut trace: Option<&mut ShapeTrace>) -> Result<Var> {
        let cfg = &self.config;
        let s = cfg.input_size;
        let shape = ctx.tape.shape(x).to_vec();
        if shape.len() != 4 || shape[1..] != [cfg.input_channels, s, s] {
            return Err(Error::shape(
                "model",
                format!("[N,{},{s},{s}]", cfg.input_channels),
                fmt_shape(&shape),
            ));
        }
        let sh = |ctx: &Ctx<'_, T>, v: Var| ctx.tape.shape(v)[1..].to_vec();
        let mut record = |name: String, input: &[usize], output: &[usize], params: usize| {
            if let Some(t) = trace.as_deref_mut() {
                t.push(name, input, output, params);
            }
        };

        let mut h = x;
        let mut skips = Vec::with_capacity(STAGES);
        for i in 0..STAGES {
            let name = format!("stage{i}");
            ctx.tape.set_scope(&name);
            let input = sh(ctx, h);
            h = match &self.encoder[i] {
                EncoderStage::Expanding(stage) => {
                    let y = stage.forward(ctx, h)?;
                    let y = ctx.tape.relu(y);
                    record(name, &input, &sh(ctx, y), stage.spec.param_count());
                    y
                }
                EncoderStage::Ccb(block) => {
                    let y = block.forward(ctx, h)?;
                    let full = sh(ctx, y);
                    record(name.clone(), &input, &full, block.param_count());
                    let p = ctx.tape.max_pool2x2(y)?;
                    record(format!("{name}.pool"), &full, &sh(ctx, p), 0);
                    p
                }
            };
            if let Some(att) = &self.attention[i] {
                let name = format!("stage{i}.wmhsa");
                ctx.tape.set_scope(&name);
                let input = sh(ctx, h);
                let (y, shapes) = att.forward_traced(ctx, h)?;
                let per_branch = att.spec.attention().param_count();
                record(format!("{name}.tile"), &input, &shapes.tile, 0);
                for b in 0..att.spec.rate {
                    record(format!("{name}.mhsa{b}"), &shapes.tile, &shapes.tile, per_branch);
                }
                record(format!("{name}.stack_h"), &shapes.tile, &shapes.stacked_h, 0);
                record(format!("{name}.stack_w"), &shapes.tile, &shapes.stacked_w, 0);
                record(format!("{name}.product"), &shapes.stacked_h, &shapes.product, 0);
                record(format!("{name}.conv"), &shapes.product, &sh(ctx, y), att.conv.param_count());
                h = y;
            }
            let name = format!("skip{i}");
            ctx.tape.set_scope(&name);
            let skip = self.skips[i].forward(ctx, h)?;
            record(name, &sh(ctx, h), &sh(ctx, skip), self.skips[i].param_count());
            skips.push(skip);
        }

        // the deepest skip path feeds the decoder
        let mut d = skips[STAGES - 1];
        for (j, stage) in self.decoder.iter().enumerate() {
            let name = format!("dec{j}");
            ctx.tape.set_scope(&name);
            let input = sh(ctx, d);
            let up = ctx.tape.upsample_nearest2x(d)?;
            record(format!("{name}.upsample"), &input, &sh(ctx, up), 0);
            let y = stage.conv.forward(ctx, up)?;
            let y = ctx.tape.relu(y);
            record(format!("{name}.conv"), &sh(ctx, up), &sh(ctx, y), stage.conv.param_count());
            let fused_in = if stage.has_skip {
                let skip = skips[STAGES - 2 - j];
                let gated = cdwcc(ctx, y, skip)?;
                record(format!("{name}.cdwcc"), &sh(ctx, y), &sh(ctx, gated), 0);
                let cat = ctx.tape.concat(&[gated, skip], 1)?;
                record(format!("{name}.concat"), &sh(ctx, gated), &sh(ctx, cat), 0);
                cat
            } else {
                y
            };
            let out = stage.fuse.forward(ctx, fused_in)?;
            d = ctx.tape.relu(out);
            record(format!("{name}.fuse"), &sh(ctx, fused_in), &sh(ctx, d), stage.fuse.param_count());
        }
        ctx.tape.set_scope("head");
        let logits = self.head.forward(ctx, d)?;
        let prob = ctx.tape.sigmoid(logits);
        record("head".into(), &sh(ctx, d), &sh(ctx, prob), self.head.param_count());
        Ok(prob)
    }
}
