//! Single-file checkpoint container.
//!
//! Layout: 8-byte magic, little-endian `u64` header length, a JSON header
//! (format version, run config, step, RNG position, tensor index, SHA-256 of
//! the payload), then the payload of little-endian `f32` tensor blocks.

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::data::Fill;
use crate::error::{Error, Result};
use crate::model::{build_discriminator, build_generator, ParameterStore};
use crate::optim::Adam;
use crate::tensor::Tensor;
use crate::trainer::TrainState;

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"DAMCKPT\0";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format_version: u32,
    config: RunConfig,
    step: u64,
    rng: RngState,
    generator_init: String,
    discriminator_init: String,
    adam_g_step: u64,
    adam_d_step: u64,
    /// Per-channel hole fill, when the run fills with the dataset mean.
    fill_mean: Option<[f64; 3]>,
    payload_sha256: String,
    index: Vec<IndexEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RngState {
    seed: String,
    stream: u64,
    /// `u128` word position, as decimal text.
    word_pos: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct IndexEntry {
    name: String,
    offset: u64,
    shape: Vec<usize>,
}

fn tensors(state: &TrainState) -> Vec<(String, &Tensor)> {
    let mut out = Vec::new();
    for (prefix, store) in [("gen", &state.generator), ("disc", &state.discriminator)] {
        for (k, t) in store.iter() {
            out.push((format!("{prefix}/{k}"), t));
        }
    }
    for (prefix, opt) in [("adam_g", &state.opt_g), ("adam_d", &state.opt_d)] {
        for (k, t) in &opt.m {
            out.push((format!("{prefix}.m/{k}"), t));
        }
        for (k, t) in &opt.v {
            out.push((format!("{prefix}.v/{k}"), t));
        }
    }
    out
}

pub fn to_bytes(state: &TrainState) -> Result<Vec<u8>> {
    let mut payload = Vec::new();
    let mut index = Vec::new();
    for (name, t) in tensors(state) {
        index.push(IndexEntry {
            name,
            offset: payload.len() as u64,
            shape: t.shape().to_vec(),
        });
        for &v in t.data() {
            payload.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let header = Header {
        format_version: FORMAT_VERSION,
        config: state.config.clone(),
        step: state.step,
        rng: RngState {
            seed: hex::encode(state.rng.get_seed()),
            stream: state.rng.get_stream(),
            word_pos: state.rng.get_word_pos().to_string(),
        },
        generator_init: state.generator.init.clone(),
        discriminator_init: state.discriminator.init.clone(),
        adam_g_step: state.opt_g.step,
        adam_d_step: state.opt_d.step,
        fill_mean: match state.fill {
            Fill::Zeros => None,
            Fill::DatasetMean(m) => Some(m),
        },
        payload_sha256: hex::encode(Sha256::digest(&payload)),
        index,
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut out = Vec::with_capacity(16 + json.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<TrainState> {
    let bad = |msg: String| Error::Checkpoint(msg);
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("missing checkpoint magic".into()));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let payload_start = 16usize
        .checked_add(header_len)
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| bad("header length exceeds file size".into()))?;
    let header: Header = serde_json::from_slice(&bytes[16..payload_start])
        .map_err(|e| bad(format!("unreadable header: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(bad(format!(
            "unsupported format version {} (expected {FORMAT_VERSION})",
            header.format_version
        )));
    }
    let payload = &bytes[payload_start..];
    if hex::encode(Sha256::digest(payload)) != header.payload_sha256 {
        return Err(bad("payload SHA-256 mismatch".into()));
    }
    header.config.validate()?;

    let mut blocks: BTreeMap<String, Tensor> = BTreeMap::new();
    for e in &header.index {
        let len: usize = e.shape.iter().product();
        let start = e.offset as usize;
        let end = start + 4 * len;
        if end > payload.len() {
            return Err(bad(format!("tensor `{}` runs past the payload", e.name)));
        }
        let data = payload[start..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        blocks.insert(e.name.clone(), Tensor::new(&e.shape, data)?);
    }

    let cfg = header.config;
    let mut take_store = |prefix: &str, template: ParameterStore, init: String| -> Result<ParameterStore> {
        let mut map = BTreeMap::new();
        for (name, t) in template.iter() {
            let key = format!("{prefix}/{name}");
            let block = blocks
                .remove(&key)
                .ok_or_else(|| bad(format!("missing tensor `{key}`")))?;
            if block.shape() != t.shape() {
                return Err(bad(format!(
                    "tensor `{key}` has shape {:?}, config implies {:?}",
                    block.shape(),
                    t.shape()
                )));
            }
            map.insert(name.to_string(), block);
        }
        Ok(ParameterStore::from_map(map, init))
    };
    let generator = take_store("gen", build_generator(&cfg.model, 0)?, header.generator_init)?;
    let discriminator = take_store("disc", build_discriminator(&cfg.model, 0)?, header.discriminator_init)?;

    let mut take_moments = |prefix: &str, store: &ParameterStore| -> Result<BTreeMap<String, Tensor>> {
        let mut map = BTreeMap::new();
        for (name, t) in store.iter() {
            let key = format!("{prefix}/{name}");
            let block = blocks
                .remove(&key)
                .ok_or_else(|| bad(format!("missing tensor `{key}`")))?;
            if block.shape() != t.shape() {
                return Err(bad(format!("moment `{key}` has the wrong shape")));
            }
            map.insert(name.to_string(), block);
        }
        Ok(map)
    };
    let mut opt_g = Adam::new(cfg.train.adam_g(), &generator);
    opt_g.m = take_moments("adam_g.m", &generator)?;
    opt_g.v = take_moments("adam_g.v", &generator)?;
    opt_g.step = header.adam_g_step;
    let mut opt_d = Adam::new(cfg.train.adam_d(), &discriminator);
    opt_d.m = take_moments("adam_d.m", &discriminator)?;
    opt_d.v = take_moments("adam_d.v", &discriminator)?;
    opt_d.step = header.adam_d_step;
    if let Some(extra) = blocks.keys().next() {
        return Err(bad(format!("unexpected tensor `{extra}`")));
    }

    let seed: [u8; 32] = hex::decode(&header.rng.seed)
        .ok()
        .and_then(|v| v.try_into().ok())
        .ok_or_else(|| bad("malformed RNG seed".into()))?;
    let word_pos: u128 = header
        .rng
        .word_pos
        .parse()
        .map_err(|_| bad("malformed RNG position".into()))?;
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(header.rng.stream);
    rng.set_word_pos(word_pos);

    Ok(TrainState {
        config: cfg,
        step: header.step,
        generator,
        discriminator,
        opt_g,
        opt_d,
        fill: header.fill_mean.map_or(Fill::Zeros, Fill::DatasetMean),
        rng,
    })
}

pub fn save(state: &TrainState, path: &Path) -> Result<()> {
    let bytes = to_bytes(state)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<TrainState> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
