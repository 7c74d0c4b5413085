//! Binary checkpoint files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "MSFCKPT1"
//! u32 metadata length, metadata (UTF-8 `key=value` lines)
//! u32 section count
//! per section: u32 name length, name, u32 rank, rank × u32 extents, f32 data
//! u32 CRC-32 of every preceding byte
//! ```
//!
//! Sections hold every named parameter and buffer of the model, plus the Adam
//! moments as `adam.m:<name>` / `adam.v:<name>` when optimizer state is saved.
//! Values are stored as f32, so an f32 model round-trips bit-exactly.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::optim::OptimState;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::nn::ParamStore;
use crate::tensor::{fmt_shape, numel, Scalar, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MSFCKPT1";
pub const CHECKPOINT_VERSION: u32 = 1;

const MODEL_PREFIX: &str = "model.";
const ADAM_M: &str = "adam.m:";
const ADAM_V: &str = "adam.v:";

#[derive(Clone, Debug, PartialEq)]
pub struct Section {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    /// Every metadata pair, including the model config echo.
    pub meta: BTreeMap<String, String>,
    pub config: ModelConfig,
    pub epoch: usize,
    pub sections: Vec<Section>,
}

fn section<T: Scalar>(name: String, t: &Tensor<T>) -> Section {
    Section {
        name,
        shape: t.shape().to_vec(),
        data: t.data().iter().map(|v| v.as_f64() as f32).collect(),
    }
}

impl Checkpoint {
    /// Snapshot a model, and optionally its optimizer and shuffling RNG.
    pub fn capture<T: Scalar>(
        model: &Model<T>,
        optim: Option<&OptimState<T>>,
        rng: Option<&ChaCha8Rng>,
        epoch: usize,
    ) -> Self {
        let mut meta = BTreeMap::new();
        meta.insert("format_version".into(), CHECKPOINT_VERSION.to_string());
        meta.insert("epoch".into(), epoch.to_string());
        for (k, v) in model.config().to_kv() {
            meta.insert(format!("{MODEL_PREFIX}{k}"), v);
        }
        let store = model.params();
        let mut sections: Vec<Section> = store.entries().iter().map(|e| section(e.name.clone(), &e.value)).collect();
        if let Some(o) = optim {
            meta.insert("adam.t".into(), o.t.to_string());
            meta.insert("adam.beta1".into(), format!("{}", o.beta1));
            meta.insert("adam.beta2".into(), format!("{}", o.beta2));
            meta.insert("adam.eps".into(), format!("{}", o.eps));
            for (i, e) in store.entries().iter().enumerate() {
                if let (Some(m), Some(v)) = (&o.m[i], &o.v[i]) {
                    sections.push(section(format!("{ADAM_M}{}", e.name), m));
                    sections.push(section(format!("{ADAM_V}{}", e.name), v));
                }
            }
        }
        if let Some(r) = rng {
            let seed: String = r.get_seed().iter().map(|b| format!("{b:02x}")).collect();
            meta.insert("rng.seed".into(), seed);
            meta.insert("rng.stream".into(), r.get_stream().to_string());
            meta.insert("rng.word_pos".into(), r.get_word_pos().to_string());
        }
        Checkpoint {
            meta,
            config: model.config().clone(),
            epoch,
            sections,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        let meta: String = self.meta.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
        put_u32(&mut out, meta.len());
        out.extend_from_slice(meta.as_bytes());
        put_u32(&mut out, self.sections.len());
        for s in &self.sections {
            put_u32(&mut out, s.name.len());
            out.extend_from_slice(s.name.as_bytes());
            put_u32(&mut out, s.shape.len());
            for &d in &s.shape {
                put_u32(&mut out, d);
            }
            for v in &s.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    /// Parse a checkpoint; `path` only labels errors.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let corrupt = |reason: String| Error::Corrupt {
            path: path.to_path_buf(),
            reason,
        };
        if bytes.len() < CHECKPOINT_MAGIC.len() || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(corrupt("missing MSFCKPT1 magic".into()));
        }
        let mut r = Reader {
            bytes,
            pos: 8,
            path,
        };
        let meta_len = r.u32()?;
        let meta_text =
            std::str::from_utf8(r.take(meta_len)?).map_err(|_| corrupt("metadata is not UTF-8".into()))?;
        let mut meta = BTreeMap::new();
        for (i, line) in meta_text.lines().enumerate() {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| corrupt(format!("metadata line {} is not key=value", i + 1)))?;
            meta.insert(k.to_string(), v.to_string());
        }
        let count = r.u32()?;
        let mut sections = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name_len = r.u32()?;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| corrupt("section name is not UTF-8".into()))?;
            let rank = r.u32()?;
            if rank > 8 {
                return Err(corrupt(format!("section {name}: implausible rank {rank}")));
            }
            let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
            let n = numel(&shape);
            let raw = r.take(n.checked_mul(4).ok_or_else(|| corrupt(format!("section {name}: size overflow")))?)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")))
                .collect();
            sections.push(Section { name, shape, data });
        }
        let body_end = r.pos;
        let stored = r.u32()? as u32;
        if r.pos != bytes.len() {
            return Err(corrupt(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        if crc32fast::hash(&bytes[..body_end]) != stored {
            return Err(corrupt("checksum mismatch".into()));
        }

        match meta.get("format_version").map(String::as_str) {
            Some(v) if v == CHECKPOINT_VERSION.to_string() => {}
            other => return Err(corrupt(format!("unsupported format version {other:?}"))),
        }
        let epoch = meta
            .get("epoch")
            .and_then(|e| e.parse().ok())
            .ok_or_else(|| corrupt("missing epoch".into()))?;
        let config = ModelConfig::from_kv(
            meta.iter()
                .filter_map(|(k, v)| k.strip_prefix(MODEL_PREFIX).map(|k| (k, v.as_str()))),
        )
        .map_err(|e| corrupt(format!("model config echo: {e}")))?;
        Ok(Checkpoint {
            meta,
            config,
            epoch,
            sections,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes, path)
    }

    fn corrupt(&self, reason: String) -> Error {
        Error::Corrupt {
            path: PathBuf::from("<checkpoint>"),
            reason,
        }
    }

    fn find(&self, name: &str) -> Option<&Section> {
        self.sections.iter().find(|s| s.name == name)
    }

    fn tensor<T: Scalar>(&self, name: &str, shape: &[usize]) -> Result<Tensor<T>> {
        let s = self
            .find(name)
            .ok_or_else(|| self.corrupt(format!("missing section {name}")))?;
        if s.shape != shape {
            return Err(self.corrupt(format!(
                "section {name} has shape {}, model expects {}",
                fmt_shape(&s.shape),
                fmt_shape(shape)
            )));
        }
        Tensor::new(shape, s.data.iter().map(|&v| T::of(v as f64)).collect())
    }

    /// Parameter values for a store with this checkpoint's layout. Nothing
    /// is modified unless every section is present and well-shaped.
    fn params_like<T: Scalar>(&self, store: &ParamStore<T>) -> Result<ParamStore<T>> {
        let mut out = store.clone();
        for id in store.ids() {
            let e = store.entry(id);
            *out.get_mut(id) = self.tensor(&e.name, e.value.shape())?;
        }
        let known = self
            .sections
            .iter()
            .filter(|s| !s.name.starts_with(ADAM_M) && !s.name.starts_with(ADAM_V))
            .count();
        if known != store.len() {
            return Err(self.corrupt(format!(
                "{known} parameter sections for a model with {} tensors",
                store.len()
            )));
        }
        Ok(out)
    }

    /// Rebuild the model described by the config echo.
    pub fn restore_model<T: Scalar>(&self) -> Result<Model<T>> {
        let mut model = Model::build(self.config.clone(), 0)?;
        let params = self.params_like(model.params())?;
        *model.params_mut() = params;
        Ok(model)
    }

    /// Load parameters into an existing model whose config must match the
    /// echo exactly.
    pub fn load_into<T: Scalar>(&self, model: &mut Model<T>) -> Result<()> {
        if model.config() != &self.config {
            let ours: BTreeMap<_, _> = model.config().to_kv().into_iter().collect();
            let diff: Vec<String> = self
                .config
                .to_kv()
                .into_iter()
                .filter(|(k, v)| ours.get(k) != Some(v))
                .map(|(k, v)| format!("{k}: checkpoint {v}, model {}", ours[&k]))
                .collect();
            return Err(Error::Config(format!("checkpoint config mismatch ({})", diff.join("; "))));
        }
        let params = self.params_like(model.params())?;
        *model.params_mut() = params;
        Ok(())
    }

    /// Saved Adam state, if any, laid out for `store`.
    pub fn optim_state<T: Scalar>(&self, store: &ParamStore<T>) -> Result<Option<OptimState<T>>> {
        let Some(t) = self.meta.get("adam.t") else {
            return Ok(None);
        };
        let num = |k: &str| -> Result<f64> {
            self.meta
                .get(k)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| self.corrupt(format!("missing or malformed {k}")))
        };
        let mut state = OptimState::new(store);
        state.t = t.parse().map_err(|_| self.corrupt("malformed adam.t".into()))?;
        state.beta1 = num("adam.beta1")?;
        state.beta2 = num("adam.beta2")?;
        state.eps = num("adam.eps")?;
        for (i, e) in store.entries().iter().enumerate() {
            if e.learnable {
                state.m[i] = Some(self.tensor(&format!("{ADAM_M}{}", e.name), e.value.shape())?);
                state.v[i] = Some(self.tensor(&format!("{ADAM_V}{}", e.name), e.value.shape())?);
            }
        }
        Ok(Some(state))
    }

    pub fn rng(&self) -> Result<Option<ChaCha8Rng>> {
        let Some(seed_hex) = self.meta.get("rng.seed") else {
            return Ok(None);
        };
        let bad = || self.corrupt("malformed rng state".into());
        if seed_hex.len() != 64 {
            return Err(bad());
        }
        let mut seed = [0u8; 32];
        for (i, b) in seed.iter_mut().enumerate() {
            *b = u8::from_str_radix(&seed_hex[2 * i..2 * i + 2], 16).map_err(|_| bad())?;
        }
        let stream: u64 = self.meta.get("rng.stream").and_then(|v| v.parse().ok()).ok_or_else(bad)?;
        let pos: u128 = self.meta.get("rng.word_pos").and_then(|v| v.parse().ok()).ok_or_else(bad)?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(stream);
        rng.set_word_pos(pos);
        Ok(Some(rng))
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&u32::try_from(v).expect("checkpoint field fits in u32").to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Corrupt {
                path: self.path.to_path_buf(),
                reason: format!("truncated: needed {n} bytes at offset {}", self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }
}
