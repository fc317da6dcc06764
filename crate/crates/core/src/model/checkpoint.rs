//! Versioned checkpoint container.
//!
//! Layout: 8-byte magic, `u32` format version, `u64` header length, a JSON
//! header, then every tensor's `f32` values little-endian in header order.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::nn::{Adam, AdamConfig, AdamState, Parameters};
use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"VIEWINV\0";
pub const FORMAT_VERSION: u32 = 1;

const PARAM: &str = "param/";
const ADAM_M: &str = "adam_m/";
const ADAM_V: &str = "adam_v/";

/// Every random stream is derived from the run seed and an epoch index, so
/// this pair is the complete generator state between epochs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub next_epoch: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// `"pretrain"` or `"classifier"`.
    pub kind: String,
    pub config: serde_json::Value,
    pub epoch: usize,
    pub rng: RngState,
    pub optimizer: Option<(AdamConfig, u64)>,
    /// Trainer bookkeeping such as scheduler history.
    pub state: serde_json::Value,
    pub tensors: BTreeMap<String, ArrayD<f32>>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    kind: String,
    config: serde_json::Value,
    epoch: usize,
    rng: RngState,
    optimizer: Option<(AdamConfig, u64)>,
    state: serde_json::Value,
    tensors: Vec<(String, Vec<usize>)>,
}

impl Checkpoint {
    pub fn new(kind: &str, config: serde_json::Value, epoch: usize, rng: RngState) -> Self {
        Self {
            kind: kind.to_string(),
            config,
            epoch,
            rng,
            optimizer: None,
            state: serde_json::Value::Null,
            tensors: BTreeMap::new(),
        }
    }

    pub fn capture(&mut self, module: &impl Parameters) {
        for (name, p) in module.named_params() {
            self.tensors.insert(format!("{PARAM}{name}"), p.value.clone());
        }
    }

    pub fn capture_optimizer(&mut self, opt: &Adam) {
        self.optimizer = Some((opt.config, opt.step));
        for (name, st) in &opt.state {
            self.tensors.insert(format!("{ADAM_M}{name}"), st.m.clone());
            self.tensors.insert(format!("{ADAM_V}{name}"), st.v.clone());
        }
    }

    /// Copies stored values into every parameter of `module` whose canonical
    /// name starts with `prefix`. Missing or reshaped tensors are errors.
    pub fn restore<M: Parameters>(&self, module: &mut M, prefix: &str) -> Result<()> {
        let mut named = Vec::new();
        module.params_mut(prefix, &mut named);
        for (name, p) in named {
            let stored = self
                .tensors
                .get(&format!("{PARAM}{name}"))
                .ok_or_else(|| Error::Checkpoint(format!("checkpoint has no tensor for {name}")))?;
            if stored.shape() != p.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {name} has shape {:?} in checkpoint but {:?} in model",
                    stored.shape(),
                    p.value.shape()
                )));
            }
            p.value.assign(stored);
        }
        Ok(())
    }

    pub fn restore_optimizer(&self) -> Result<Adam> {
        let (config, step) = self
            .optimizer
            .ok_or_else(|| Error::Checkpoint("checkpoint carries no optimizer state".into()))?;
        let mut opt = Adam::new(config);
        opt.step = step;
        for (key, m) in &self.tensors {
            if let Some(name) = key.strip_prefix(ADAM_M) {
                let v = self
                    .tensors
                    .get(&format!("{ADAM_V}{name}"))
                    .ok_or_else(|| Error::Checkpoint(format!("second moment missing for {name}")))?;
                opt.state.insert(name.to_string(), AdamState { m: m.clone(), v: v.clone() });
            }
        }
        Ok(opt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = Header {
            version: FORMAT_VERSION,
            kind: self.kind.clone(),
            config: self.config.clone(),
            epoch: self.epoch,
            rng: self.rng,
            optimizer: self.optimizer,
            state: self.state.clone(),
            tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.shape().to_vec())).collect(),
        };
        let json = serde_json::to_vec(&header)?;
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let mut write = |bytes: &[u8]| w.write_all(bytes).map_err(|e| Error::io(path, e));
        write(MAGIC)?;
        write(&FORMAT_VERSION.to_le_bytes())?;
        write(&(json.len() as u64).to_le_bytes())?;
        write(&json)?;
        for t in self.tensors.values() {
            let mut buf = Vec::with_capacity(t.len() * 4);
            for v in t.iter() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            write(&buf)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let mut read = |n: usize| -> Result<Vec<u8>> {
            let mut buf = vec![0u8; n];
            r.read_exact(&mut buf)
                .map_err(|_| Error::Checkpoint(format!("{} is truncated", path.display())))?;
            Ok(buf)
        };
        if read(8)? != MAGIC {
            return Err(Error::Checkpoint(format!("{} is not a checkpoint file", path.display())));
        }
        let version = u32::from_le_bytes(read(4)?.try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "{} has format version {version}, this build reads version {FORMAT_VERSION}",
                path.display()
            )));
        }
        let len = u64::from_le_bytes(read(8)?.try_into().expect("8 bytes")) as usize;
        let header: Header = serde_json::from_slice(&read(len)?)
            .map_err(|e| Error::Checkpoint(format!("{}: bad header: {e}", path.display())))?;
        let mut tensors = BTreeMap::new();
        for (name, shape) in header.tensors {
            let n: usize = shape.iter().product();
            let bytes = read(n * 4)?;
            let data = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            let t = ArrayD::from_shape_vec(IxDyn(&shape), data).expect("shape matches length");
            tensors.insert(name, t);
        }
        Ok(Self {
            kind: header.kind,
            config: header.config,
            epoch: header.epoch,
            rng: header.rng,
            optimizer: header.optimizer,
            state: header.state,
            tensors,
        })
    }
}
