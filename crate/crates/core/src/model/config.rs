use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::DDWPP_BRANCHES;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    /// Channel-chunked 1×1 convs followed by a strided 3×3 conv.
    Expanding,
    /// Consecutive convolution blocks with batch norm, each followed by 2×2 max pooling.
    Ccb,
}

impl fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EncoderKind::Expanding => "expanding",
            EncoderKind::Ccb => "ccb",
        })
    }
}

impl FromStr for EncoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "expanding" => Ok(EncoderKind::Expanding),
            "ccb" => Ok(EncoderKind::Ccb),
            other => Err(Error::Config(format!("unknown encoder kind {other:?} (expected expanding or ccb)"))),
        }
    }
}

pub const STAGES: usize = 5;

/// Architecture description. Channel counts here are the unscaled (width 1.0)
/// values; [`ModelConfig::stage_channels`] and
/// [`ModelConfig::decoder_channels`] apply the width multiplier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_channels: usize,
    /// Square input side length.
    pub input_size: usize,
    pub encoder: EncoderKind,
    pub base_stage_channels: [usize; STAGES],
    pub chunk_counts: [usize; STAGES],
    /// W-MHSA rate after each encoder stage; 0 means no attention.
    pub wmhsa_rates: [usize; STAGES],
    pub heads: usize,
    pub ddwpp_branches: Vec<(usize, usize)>,
    pub base_decoder_channels: [usize; STAGES],
    pub width_multiplier: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_channels: 3,
            input_size: 224,
            encoder: EncoderKind::Expanding,
            base_stage_channels: [64, 64, 128, 256, 512],
            chunk_counts: [3, 2, 2, 4, 2],
            wmhsa_rates: [0, 4, 4, 2, 1],
            heads: 4,
            ddwpp_branches: DDWPP_BRANCHES.to_vec(),
            base_decoder_channels: [256, 128, 64, 64, 32],
            width_multiplier: 1.0,
        }
    }
}

/// Scale a channel count and round to the nearest multiple of 4 (minimum 4).
pub fn scale_channels(c: usize, width: f64) -> usize {
    let scaled = (c as f64 * width / 4.0).round() as usize * 4;
    scaled.max(4)
}

impl ModelConfig {
    /// Small configuration used by tests and the overfit run.
    pub fn small(input_size: usize, width: f64) -> Self {
        ModelConfig {
            input_size,
            width_multiplier: width,
            ..Default::default()
        }
    }

    pub fn stage_channels(&self) -> [usize; STAGES] {
        self.base_stage_channels.map(|c| scale_channels(c, self.width_multiplier))
    }

    pub fn decoder_channels(&self) -> [usize; STAGES] {
        self.base_decoder_channels.map(|c| scale_channels(c, self.width_multiplier))
    }

    /// Spatial side length after encoder stage `i`: `input / 2^(i+1)`.
    pub fn stage_spatial(&self) -> [usize; STAGES] {
        std::array::from_fn(|i| self.input_size >> (i + 1))
    }

    /// Input channel count of encoder stage `i`.
    pub fn stage_inputs(&self) -> [usize; STAGES] {
        let out = self.stage_channels();
        std::array::from_fn(|i| if i == 0 { self.input_channels } else { out[i - 1] })
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if !(self.width_multiplier > 0.0 && self.width_multiplier <= 1.0) {
            return fail(format!("width_multiplier {} outside (0, 1]", self.width_multiplier));
        }
        if self.input_channels == 0 {
            return fail("input_channels must be positive".into());
        }
        if self.input_size == 0 || self.input_size % (1 << STAGES) != 0 {
            return fail(format!(
                "input_size {} must be a positive multiple of {} (stage_spatial[i] = input / 2^(i+1))",
                self.input_size,
                1 << STAGES
            ));
        }
        if self.heads == 0 {
            return fail("heads must be positive".into());
        }
        if self.ddwpp_branches.is_empty() || self.ddwpp_branches.iter().any(|&(k, d)| k < 2 || k % 2 == 0 || d == 0) {
            return fail("ddwpp branches need odd kernels >= 3 and positive dilations".into());
        }
        let stages = self.stage_channels();
        let inputs = self.stage_inputs();
        let spatial = self.stage_spatial();
        for i in 0..STAGES {
            let n = self.chunk_counts[i];
            if self.encoder == EncoderKind::Expanding && (n == 0 || inputs[i] % n != 0) {
                return fail(format!(
                    "stage {i}: input channels {} not divisible by chunk count {n}",
                    inputs[i]
                ));
            }
            let r = self.wmhsa_rates[i];
            if r > 0 {
                if spatial[i] % r != 0 {
                    return fail(format!("stage {i}: W-MHSA rate {r} does not divide spatial size {}", spatial[i]));
                }
                if stages[i] % self.heads != 0 {
                    return fail(format!(
                        "stage {i}: {} channels not divisible by {} heads",
                        stages[i], self.heads
                    ));
                }
            }
        }
        let dec = self.decoder_channels();
        for j in 0..STAGES - 1 {
            let skip = stages[STAGES - 2 - j];
            if dec[j] != skip {
                return fail(format!(
                    "decoder stage {j}: {} channels must equal skip channels {skip} for cross-correlation gating",
                    dec[j]
                ));
            }
        }
        Ok(())
    }

    /// `key=value` lines, used in checkpoint metadata.
    pub fn to_kv(&self) -> Vec<(String, String)> {
        let join = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let branches = self
            .ddwpp_branches
            .iter()
            .map(|(k, d)| format!("{k}:{d}"))
            .collect::<Vec<_>>()
            .join(",");
        vec![
            ("input_channels".into(), self.input_channels.to_string()),
            ("input_size".into(), self.input_size.to_string()),
            ("encoder".into(), self.encoder.to_string()),
            ("stage_channels".into(), join(&self.base_stage_channels)),
            ("chunk_counts".into(), join(&self.chunk_counts)),
            ("wmhsa_rates".into(), join(&self.wmhsa_rates)),
            ("heads".into(), self.heads.to_string()),
            ("ddwpp_branches".into(), branches),
            ("decoder_channels".into(), join(&self.base_decoder_channels)),
            ("width_multiplier".into(), format!("{}", self.width_multiplier)),
        ]
    }

    /// Apply one `key = value` setting. Returns `Ok(false)` if the key is not
    /// a model key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.trim()
                .parse()
                .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
        }
        fn list5(key: &str, v: &str) -> Result<[usize; STAGES]> {
            let items = v.split(',').map(|s| num::<usize>(key, s)).collect::<Result<Vec<_>>>()?;
            items
                .try_into()
                .map_err(|_| Error::Config(format!("{key}: expected {STAGES} comma-separated values")))
        }
        match key {
            "input_channels" => self.input_channels = num(key, value)?,
            "input_size" => self.input_size = num(key, value)?,
            "encoder" => self.encoder = value.trim().parse()?,
            "stage_channels" => self.base_stage_channels = list5(key, value)?,
            "chunk_counts" => self.chunk_counts = list5(key, value)?,
            "wmhsa_rates" => self.wmhsa_rates = list5(key, value)?,
            "heads" => self.heads = num(key, value)?,
            "decoder_channels" => self.base_decoder_channels = list5(key, value)?,
            "width_multiplier" => self.width_multiplier = num(key, value)?,
            "ddwpp_branches" => {
                self.ddwpp_branches = value
                    .split(',')
                    .map(|pair| {
                        let (k, d) = pair
                            .split_once(':')
                            .ok_or_else(|| Error::Config(format!("{key}: expected kernel:dilation, got {pair:?}")))?;
                        Ok((num(key, k)?, num(key, d)?))
                    })
                    .collect::<Result<_>>()?
            }
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn from_kv<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        let mut cfg = ModelConfig::default();
        for (k, v) in pairs {
            if !cfg.set(k, v)? {
                return Err(Error::Config(format!("unknown model key {k:?}")));
            }
        }
        Ok(cfg)
    }
}
