//! Binary checkpoints.
//!
//! Layout: the 8-byte magic `RCORECKP`, a little-endian `u32` format version,
//! a little-endian `u64` header length, the JSON header, then every tensor
//! listed in the header as raw little-endian `f64` values in header order.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelState, TrainConfig, TrainError};
use crate::classifier::RelationClassifier;
use crate::clustering::AutoencoderPair;
use crate::nn::{AdamConfig, AdamState, Mlp};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"RCORECKP";

/// A trained model with the configuration that produced it.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub state: ModelState,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    /// Layer sizes for a network, empty for a raw vector.
    sizes: Vec<usize>,
    len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct AdamEntry {
    name: String,
    config: AdamConfig,
    step: u64,
    tensors: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: TrainConfig,
    num_predefined: usize,
    num_novel: usize,
    embedding_dim: usize,
    lambda: f64,
    tensors: Vec<TensorEntry>,
    optimizers: Vec<AdamEntry>,
}

fn err(path: &Path, message: impl Into<String>) -> TrainError {
    TrainError::Checkpoint {
        path: path.display().to_string(),
        message: message.into(),
    }
}

struct Writer<'a> {
    entries: Vec<TensorEntry>,
    data: Vec<&'a [f64]>,
}

impl<'a> Writer<'a> {
    fn net(&mut self, name: &str, net: &'a Mlp) {
        self.entries.push(TensorEntry {
            name: name.into(),
            sizes: net.sizes().to_vec(),
            len: net.params().len(),
        });
        self.data.push(net.params());
    }

    fn raw(&mut self, name: String, v: &'a [f64]) {
        self.entries.push(TensorEntry {
            name,
            sizes: Vec::new(),
            len: v.len(),
        });
        self.data.push(v);
    }

    fn adam(&mut self, name: &str, opt: &'a AdamState) -> AdamEntry {
        for (i, (m, v)) in opt.first_moment.iter().zip(&opt.second_moment).enumerate() {
            self.raw(format!("{name}.m{i}"), m);
            self.raw(format!("{name}.v{i}"), v);
        }
        AdamEntry {
            name: name.into(),
            config: opt.config,
            step: opt.step,
            tensors: opt.first_moment.len(),
        }
    }
}

/// Writes a checkpoint atomically (temporary file, then rename).
pub fn save_checkpoint(
    path: &Path,
    config: &TrainConfig,
    state: &ModelState,
) -> Result<(), TrainError> {
    let mut w = Writer {
        entries: Vec::new(),
        data: Vec::new(),
    };
    if let Some(a) = &state.adapter {
        w.net("adapter", a);
    }
    w.net("encoder", &state.autoencoder.encoder);
    w.net("decoder", &state.autoencoder.decoder);
    w.net("eta_labeled", &state.eta_labeled.body);
    w.net("eta_novel", &state.eta_novel.body);
    let mut optimizers = Vec::new();
    if let Some(o) = &state.opt_adapter {
        optimizers.push(w.adam("opt_adapter", o));
    }
    optimizers.push(w.adam("opt_clustering", &state.opt_clustering));
    optimizers.push(w.adam("opt_classifiers", &state.opt_classifiers));
    let header = Header {
        config: config.clone(),
        num_predefined: state.num_predefined,
        num_novel: state.num_novel,
        embedding_dim: state.embedding_dim,
        lambda: state.autoencoder.lambda,
        tensors: w.entries,
        optimizers,
    };
    let header_json = serde_json::to_vec(&header).map_err(|e| err(path, e.to_string()))?;

    let total: usize = w.data.iter().map(|d| d.len()).sum();
    let mut bytes = Vec::with_capacity(20 + header_json.len() + 8 * total);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&header_json);
    for d in &w.data {
        for v in d.iter() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }

    let tmp = path.with_extension("tmp");
    let io = |e: std::io::Error| err(path, e.to_string());
    {
        let mut f = fs::File::create(&tmp).map_err(io)?;
        f.write_all(&bytes).map_err(io)?;
        f.sync_all().map_err(io)?;
    }
    fs::rename(&tmp, path).map_err(io)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, TrainError> {
    let bytes = fs::read(path).map_err(|e| err(path, e.to_string()))?;
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(err(path, "not a checkpoint file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(err(
            path,
            format!("unsupported checkpoint version {version}"),
        ));
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let body_start = 20usize
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| err(path, "truncated header"))?;
    let header: Header = serde_json::from_slice(&bytes[20..body_start])
        .map_err(|e| err(path, format!("bad header: {e}")))?;

    let mut offset = body_start;
    let mut tensors: HashMap<String, (Vec<usize>, Vec<f64>)> = HashMap::new();
    for t in &header.tensors {
        let end = offset
            .checked_add(
                t.len
                    .checked_mul(8)
                    .ok_or_else(|| err(path, "tensor too large"))?,
            )
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| err(path, format!("truncated tensor {}", t.name)))?;
        let values = bytes[offset..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        tensors.insert(t.name.clone(), (t.sizes.clone(), values));
        offset = end;
    }
    if offset != bytes.len() {
        return Err(err(path, "trailing bytes after last tensor"));
    }

    let mut take = |name: &str| {
        tensors
            .remove(name)
            .ok_or_else(|| err(path, format!("missing tensor {name}")))
    };
    let mut net = |name: &str| -> Result<Mlp, TrainError> {
        let (sizes, values) = take(name)?;
        Mlp::from_params(&sizes, values).map_err(|e| err(path, format!("{name}: {e}")))
    };
    let adapter = if header.config.use_adapter {
        Some(net("adapter")?)
    } else {
        None
    };
    let encoder = net("encoder")?;
    let decoder = net("decoder")?;
    let eta_labeled = net("eta_labeled")?;
    let eta_novel = net("eta_novel")?;

    let mut optimizers: HashMap<String, AdamState> = HashMap::new();
    for o in &header.optimizers {
        let mut first_moment = Vec::with_capacity(o.tensors);
        let mut second_moment = Vec::with_capacity(o.tensors);
        for i in 0..o.tensors {
            first_moment.push(take(&format!("{}.m{i}", o.name))?.1);
            second_moment.push(take(&format!("{}.v{i}", o.name))?.1);
        }
        optimizers.insert(
            o.name.clone(),
            AdamState {
                config: o.config,
                step: o.step,
                first_moment,
                second_moment,
            },
        );
    }
    let mut opt = |name: &str| {
        optimizers
            .remove(name)
            .ok_or_else(|| err(path, format!("missing optimizer {name}")))
    };
    let opt_adapter = if adapter.is_some() {
        Some(opt("opt_adapter")?)
    } else {
        None
    };
    let opt_clustering = opt("opt_clustering")?;
    let opt_classifiers = opt("opt_classifiers")?;

    Ok(Checkpoint {
        state: ModelState {
            adapter,
            autoencoder: AutoencoderPair {
                encoder,
                decoder,
                lambda: header.lambda,
            },
            eta_labeled: RelationClassifier { body: eta_labeled },
            eta_novel: RelationClassifier { body: eta_novel },
            opt_adapter,
            opt_clustering,
            opt_classifiers,
            num_predefined: header.num_predefined,
            num_novel: header.num_novel,
            embedding_dim: header.embedding_dim,
            mode: header.config.mode,
        },
        config: header.config,
    })
}
