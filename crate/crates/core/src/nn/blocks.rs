//! The network's building blocks: expanding convolution stage, (wide)
//! multi-head self-attention, cross-correlation gating, the dilated
//! depth-wise parallel path and the consecutive convolution block.

use rand::Rng;

use super::layers::{BatchNorm2d, Conv2d, Linear};
use super::params::{fan_in_uniform, Ctx, ParamId, ParamStore};
use crate::autograd::{ConvGeom, Var};
use crate::error::{Error, Result};
use crate::tensor::{fmt_shape, Scalar, Tensor};

fn rank4(op: &'static str, s: &[usize]) -> Result<[usize; 4]> {
    match s {
        &[n, c, h, w] => Ok([n, c, h, w]),
        _ => Err(Error::shape(op, "[N,C,H,W]", fmt_shape(s))),
    }
}

// ---- expanding convolution stage -----------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ExpandingStageSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub chunks: usize,
    pub stride: usize,
}

impl ExpandingStageSpec {
    pub fn validate(&self) -> Result<()> {
        if self.chunks == 0 || self.in_channels % self.chunks != 0 || self.out_channels == 0 || self.stride == 0 {
            return Err(Error::shape(
                "expanding_stage",
                format!("in_channels divisible by {} chunks, out_channels > 0", self.chunks),
                format!("in {} out {}", self.in_channels, self.out_channels),
            ));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        let c = self.in_channels / self.chunks;
        self.chunks * (c * c + c) + self.out_channels * self.in_channels * 9 + self.out_channels
    }
}

/// Channel split into `chunks` groups, an independent 1×1 conv per group,
/// channel concat, then one 3×3 conv with the stage stride.
#[derive(Clone, Debug)]
pub struct ExpandingStage {
    pub spec: ExpandingStageSpec,
    pub pointwise: Vec<Conv2d>,
    pub conv: Conv2d,
}

impl ExpandingStage {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        spec: ExpandingStageSpec,
        rng: &mut R,
    ) -> Result<Self> {
        spec.validate()?;
        let c = spec.in_channels / spec.chunks;
        let pointwise = (0..spec.chunks)
            .map(|i| Conv2d::new(store, &format!("{name}.chunk{i}"), c, c, 1, ConvGeom::default(), true, rng))
            .collect();
        let geom = ConvGeom::same(3, 1).with_stride(spec.stride);
        let conv = Conv2d::new(store, &format!("{name}.conv"), spec.in_channels, spec.out_channels, 3, geom, true, rng);
        Ok(ExpandingStage { spec, pointwise, conv })
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let [_, c, h, w] = rank4("expanding_stage", ctx.tape.shape(x))?;
        if c != self.spec.in_channels || h % self.spec.stride != 0 || w % self.spec.stride != 0 {
            return Err(Error::shape(
                "expanding_stage",
                format!("{} channels, H and W divisible by {}", self.spec.in_channels, self.spec.stride),
                fmt_shape(ctx.tape.shape(x)),
            ));
        }
        let chunks = ctx.tape.split(x, 1, self.spec.chunks)?;
        let mixed = chunks
            .into_iter()
            .zip(&self.pointwise)
            .map(|(chunk, conv)| conv.forward(ctx, chunk))
            .collect::<Result<Vec<_>>>()?;
        let joined = ctx.tape.concat(&mixed, 1)?;
        self.conv.forward(ctx, joined)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.pointwise
            .iter()
            .chain(std::iter::once(&self.conv))
            .flat_map(|c| std::iter::once(c.weight).chain(c.bias))
            .collect()
    }
}

// ---- multi-head self-attention -------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionSpec {
    pub embed_dim: usize,
    pub heads: usize,
    /// Tokens per tile: height × width.
    pub tokens: usize,
}

impl AttentionSpec {
    pub fn param_count(&self) -> usize {
        let c = self.embed_dim;
        4 * (c * c + c) + self.tokens * c
    }
}

/// Self-attention over the pixels of one feature map: learned additive
/// positional table, Q/K/V projections, per-head scaled dot-product
/// attention, output projection.
#[derive(Clone, Debug)]
pub struct Mhsa {
    pub spec: AttentionSpec,
    pub pos: ParamId,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
}

impl Mhsa {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        spec: AttentionSpec,
        rng: &mut R,
    ) -> Result<Self> {
        if spec.heads == 0 || spec.embed_dim % spec.heads != 0 || spec.tokens == 0 {
            return Err(Error::Config(format!(
                "attention embed dim {} not divisible by {} heads",
                spec.embed_dim, spec.heads
            )));
        }
        let c = spec.embed_dim;
        let pos = store.add(format!("{name}.pos"), fan_in_uniform(&[spec.tokens, c], c, rng));
        Ok(Mhsa {
            spec,
            pos,
            q: Linear::new(store, &format!("{name}.q"), c, c, rng),
            k: Linear::new(store, &format!("{name}.k"), c, c, rng),
            v: Linear::new(store, &format!("{name}.v"), c, c, rng),
            out: Linear::new(store, &format!("{name}.out"), c, c, rng),
        })
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        Ok(self.forward_with_weights(ctx, x)?.0)
    }

    /// Also returns the attention weights, shaped `[N·heads, L, L]`.
    pub fn forward_with_weights<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<(Var, Var)> {
        let [n, c, h, w] = rank4("mhsa", ctx.tape.shape(x))?;
        let l = h * w;
        if c != self.spec.embed_dim || l != self.spec.tokens {
            return Err(Error::shape(
                "mhsa",
                format!("{} channels and {} tokens", self.spec.embed_dim, self.spec.tokens),
                fmt_shape(ctx.tape.shape(x)),
            ));
        }
        let heads = self.spec.heads;
        let d = c / heads;
        let tape = &mut *ctx.tape;
        let flat = tape.reshape(x, &[n, c, l])?;
        let tokens = tape.transpose(flat, 1, 2)?;
        let pos = ctx.param(self.pos);
        let pos = ctx.tape.reshape(pos, &[1, l, c])?;
        let tokens = ctx.tape.add(tokens, pos)?;

        let q = self.q.forward(ctx, tokens)?;
        let k = self.k.forward(ctx, tokens)?;
        let v = self.v.forward(ctx, tokens)?;
        let tape = &mut *ctx.tape;
        let split_heads = |tape: &mut crate::autograd::Tape<T>, t: Var| -> Result<Var> {
            let t = tape.reshape(t, &[n, l, heads, d])?;
            let t = tape.permute(t, &[0, 2, 1, 3])?;
            tape.reshape(t, &[n * heads, l, d])
        };
        let q = split_heads(tape, q)?;
        let k = split_heads(tape, k)?;
        let v = split_heads(tape, v)?;
        let kt = tape.transpose(k, 1, 2)?;
        let scores = tape.matmul(q, kt)?;
        let scores = tape.scale(scores, 1.0 / (d as f64).sqrt());
        let weights = tape.softmax_last(scores)?;
        let attended = tape.matmul(weights, v)?;
        let merged = tape.reshape(attended, &[n, heads, l, d])?;
        let merged = tape.permute(merged, &[0, 2, 1, 3])?;
        let merged = tape.reshape(merged, &[n, l, c])?;
        let projected = self.out.forward(ctx, merged)?;
        let tape = &mut *ctx.tape;
        let back = tape.transpose(projected, 1, 2)?;
        Ok((tape.reshape(back, &[n, c, h, w])?, weights))
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.pos];
        for l in [&self.q, &self.k, &self.v, &self.out] {
            ids.extend([l.weight, l.bias]);
        }
        ids
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WmhsaSpec {
    pub channels: usize,
    pub heads: usize,
    pub rate: usize,
    /// Square spatial size of the input map.
    pub size: usize,
}

impl WmhsaSpec {
    pub fn validate(&self) -> Result<()> {
        if self.rate == 0 || self.size % self.rate != 0 {
            return Err(Error::Config(format!(
                "W-MHSA rate {} does not divide spatial size {}",
                self.rate, self.size
            )));
        }
        Ok(())
    }

    pub fn tile(&self) -> usize {
        self.size / self.rate
    }

    pub fn attention(&self) -> AttentionSpec {
        AttentionSpec {
            embed_dim: self.channels,
            heads: self.heads,
            tokens: self.tile() * self.tile(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.rate * self.attention().param_count() + self.channels * self.channels + self.channels
    }
}

/// Wide MHSA: `rate` independent attention modules over the diagonal tiles
/// of the map. The tile outputs are stacked along height (`A`, H×W/r) and
/// along width (`B`, H/r×W); their per-channel matrix product `A·B` restores
/// H×W, is normalized per channel, and a 1×1 conv mixes channels.
#[derive(Clone, Debug)]
pub struct Wmhsa {
    pub spec: WmhsaSpec,
    pub branches: Vec<Mhsa>,
    pub conv: Conv2d,
}

/// Intermediate shapes of one W-MHSA pass, without the batch axis.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WmhsaShapes {
    pub tile: Vec<usize>,
    pub stacked_h: Vec<usize>,
    pub stacked_w: Vec<usize>,
    pub product: Vec<usize>,
}

impl Wmhsa {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        spec: WmhsaSpec,
        rng: &mut R,
    ) -> Result<Self> {
        spec.validate()?;
        let branches = (0..spec.rate)
            .map(|i| Mhsa::new(store, &format!("{name}.mhsa{i}"), spec.attention(), rng))
            .collect::<Result<_>>()?;
        let conv = Conv2d::new(
            store,
            &format!("{name}.conv"),
            spec.channels,
            spec.channels,
            1,
            ConvGeom::default(),
            true,
            rng,
        );
        Ok(Wmhsa { spec, branches, conv })
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        Ok(self.forward_traced(ctx, x)?.0)
    }

    pub fn forward_traced<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<(Var, WmhsaShapes)> {
        let [_, c, h, w] = rank4("wmhsa", ctx.tape.shape(x))?;
        let r = self.spec.rate;
        if c != self.spec.channels || h != self.spec.size || w != self.spec.size {
            return Err(Error::shape(
                "wmhsa",
                format!("[N,{},{},{}]", self.spec.channels, self.spec.size, self.spec.size),
                fmt_shape(ctx.tape.shape(x)),
            ));
        }
        let t = self.spec.tile();
        let mut outs = Vec::with_capacity(r);
        for (i, mhsa) in self.branches.iter().enumerate() {
            let rows = ctx.tape.slice(x, 2, i * t, t)?;
            let tile = ctx.tape.slice(rows, 3, i * t, t)?;
            outs.push(mhsa.forward(ctx, tile)?);
        }
        let tile_shape = ctx.tape.shape(outs[0])[1..].to_vec();
        let stacked_h = ctx.tape.concat(&outs, 2)?;
        let stacked_w = ctx.tape.concat(&outs, 3)?;
        let product = ctx.tape.matmul(stacked_h, stacked_w)?;
        let product = instance_norm(ctx, product)?;
        let shapes = WmhsaShapes {
            tile: tile_shape,
            stacked_h: ctx.tape.shape(stacked_h)[1..].to_vec(),
            stacked_w: ctx.tape.shape(stacked_w)[1..].to_vec(),
            product: ctx.tape.shape(product)[1..].to_vec(),
        };
        Ok((self.conv.forward(ctx, product)?, shapes))
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids: Vec<ParamId> = self.branches.iter().flat_map(|b| b.param_ids()).collect();
        ids.push(self.conv.weight);
        ids.extend(self.conv.bias);
        ids
    }
}

/// Zero mean, unit variance per sample and channel, no learned scale.
///
/// The product is quadratic in its input, so without this the activation
/// scale squares at every attention stage.
fn instance_norm<T: Scalar>(ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
    let [n, c, h, w] = rank4("instance_norm", ctx.tape.shape(x))?;
    let tape = &mut *ctx.tape;
    let flat = tape.reshape(x, &[1, n * c, h, w])?;
    let gamma = tape.constant(Tensor::ones(&[n * c]));
    let beta = tape.constant(Tensor::zeros(&[n * c]));
    let (y, _) = tape.batch_norm(flat, gamma, beta, None, WMHSA_NORM_EPS)?;
    tape.reshape(y, &[n, c, h, w])
}

pub const WMHSA_NORM_EPS: f64 = 1e-5;

// ---- channel depth-wise cross-correlation attention ----------------------

/// Per-channel similarity `s[n,c] = mean_{i,j} dec[n,c,i,j]·enc[n,c,i,j]`,
/// shaped `[N,C,1,1]`. This is the single output of a valid-mode
/// cross-correlation of two equal-size maps, normalized by the map area.
pub fn cdwcc_similarity<T: Scalar>(ctx: &mut Ctx<'_, T>, dec: Var, enc: Var) -> Result<Var> {
    let [n, c, h, w] = rank4("cdwcc", ctx.tape.shape(dec))?;
    if ctx.tape.shape(enc) != ctx.tape.shape(dec) {
        return Err(Error::shape(
            "cdwcc",
            fmt_shape(ctx.tape.shape(dec)),
            fmt_shape(ctx.tape.shape(enc)),
        ));
    }
    let tape = &mut *ctx.tape;
    let prod = tape.mul(dec, enc)?;
    let summed = tape.sum_trailing(prod, 2)?;
    let mean = tape.scale(summed, 1.0 / (h * w) as f64);
    tape.reshape(mean, &[n, c, 1, 1])
}

/// Gate the decoder map channel-wise by `sigmoid(similarity)` with the
/// encoder map.
pub fn cdwcc<T: Scalar>(ctx: &mut Ctx<'_, T>, dec: Var, enc: Var) -> Result<Var> {
    let s = cdwcc_similarity(ctx, dec, enc)?;
    let gate = ctx.tape.sigmoid(s);
    ctx.tape.mul(dec, gate)
}

// ---- dilated depth-wise parallel path ------------------------------------

/// `(kernel, dilation)` of each parallel branch.
pub const DDWPP_BRANCHES: [(usize, usize); 4] = [(7, 16), (5, 8), (5, 4), (3, 2)];

/// Dilation actually used for a branch on a `min_extent`-sized map: the
/// nominal rate, reduced so the dilated kernel fits inside the map.
pub fn effective_dilation(kernel: usize, dilation: usize, min_extent: usize) -> usize {
    let fit = min_extent.saturating_sub(1) / (kernel - 1);
    dilation.min(fit.max(1))
}

#[derive(Clone, Debug)]
pub struct Ddwpp {
    pub channels: usize,
    pub branches: Vec<Conv2d>,
}

impl Ddwpp {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        branches: &[(usize, usize)],
        rng: &mut R,
    ) -> Self {
        let branches = branches
            .iter()
            .enumerate()
            .map(|(i, &(k, d))| {
                let geom = ConvGeom::same(k, d).with_groups(channels);
                Conv2d::new(store, &format!("{name}.branch{i}"), channels, channels, k, geom, true, rng)
            })
            .collect();
        Ddwpp { channels, branches }
    }

    pub fn effective_dilations(&self, h: usize, w: usize) -> Vec<usize> {
        self.branches
            .iter()
            .map(|b| effective_dilation(b.kernel, b.geom.dilation, h.min(w)))
            .collect()
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let [_, c, h, w] = rank4("ddwpp", ctx.tape.shape(x))?;
        if c != self.channels {
            return Err(Error::shape("ddwpp", format!("{} channels", self.channels), fmt_shape(ctx.tape.shape(x))));
        }
        let mut acc: Option<Var> = None;
        for (branch, d) in self.branches.iter().zip(self.effective_dilations(h, w)) {
            let geom = ConvGeom::same(branch.kernel, d).with_groups(self.channels);
            let wv = ctx.param(branch.weight);
            let bv = branch.bias.map(|b| ctx.param(b));
            let y = ctx.tape.conv2d(x, wv, bv, geom)?;
            acc = Some(match acc {
                Some(a) => ctx.tape.add(a, y)?,
                None => y,
            });
        }
        let sum = acc.ok_or_else(|| Error::Config("DDWPP needs at least one branch".into()))?;
        Ok(ctx.tape.relu(sum))
    }

    pub fn param_count(&self) -> usize {
        self.branches.iter().map(|b| b.param_count()).sum()
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.branches
            .iter()
            .flat_map(|c| std::iter::once(c.weight).chain(c.bias))
            .collect()
    }
}

// ---- consecutive convolution block ---------------------------------------

/// `(3×3 conv → batchnorm → relu) × 2`, spatial size preserved.
#[derive(Clone, Debug)]
pub struct Ccb {
    pub convs: [Conv2d; 2],
    pub norms: [BatchNorm2d; 2],
}

impl Ccb {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        rng: &mut R,
    ) -> Self {
        let geom = ConvGeom::same(3, 1);
        let c0 = Conv2d::new(store, &format!("{name}.conv0"), in_channels, out_channels, 3, geom, true, rng);
        let n0 = BatchNorm2d::new(store, &format!("{name}.bn0"), out_channels);
        let c1 = Conv2d::new(store, &format!("{name}.conv1"), out_channels, out_channels, 3, geom, true, rng);
        let n1 = BatchNorm2d::new(store, &format!("{name}.bn1"), out_channels);
        Ccb {
            convs: [c0, c1],
            norms: [n0, n1],
        }
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let mut h = x;
        for (conv, norm) in self.convs.iter().zip(&self.norms) {
            h = conv.forward(ctx, h)?;
            h = norm.forward(ctx, h)?;
            h = ctx.tape.relu(h);
        }
        Ok(h)
    }

    pub fn param_count(&self) -> usize {
        self.convs.iter().map(|c| c.param_count()).sum::<usize>() + self.norms.iter().map(|n| n.param_count()).sum::<usize>()
    }

    /// Learnable parameters only.
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        for (c, n) in self.convs.iter().zip(&self.norms) {
            ids.push(c.weight);
            ids.extend(c.bias);
            ids.extend([n.gamma, n.beta]);
        }
        ids
    }
}
