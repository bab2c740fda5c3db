//! Binary model files.
//!
//! Layout (little-endian throughout):
//!
//! ```text
//! magic    8 bytes  "AMBCNET\0"
//! version  u32      1
//! antennas u32
//! stage    u8       0 fresh, 1 pretrained, 2 transferred
//! seed     u64
//! loss     f64      NaN when absent
//! gain     f64      input gain
//! datasets u32 count, then per id: u32 byte length + UTF-8
//! layers   u32 count, then per layer:
//!            u32 name length + UTF-8 name
//!            u8 kind, u8 trainable
//!            parameterized layers: weight tensor, bias tensor
//!            dropout: f64 rate
//! tensor   u32 rank, rank × u32 dims, then product(dims) × f32
//! ```
//!
//! A file must end exactly after the last layer.

use std::fs;
use std::path::Path;

use super::{CmnetArchitecture, CmnetModel, Provenance, Stage};
use crate::nn::{Dropout, LayerKind, Network};

pub const MAGIC: &[u8; 8] = b"AMBCNET\0";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("not a model file (bad magic bytes)")]
    BadMagic,
    #[error("unsupported model file version {0} (this build reads version {VERSION})")]
    UnsupportedVersion(u32),
    #[error("model file truncated: needed {needed} more bytes at offset {offset}")]
    Truncated { offset: usize, needed: usize },
    #[error("model file shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("model file has {0} trailing bytes")]
    TrailingBytes(usize),
    #[error("malformed model file: {0}")]
    Malformed(String),
    #[error("model file i/o: {0}")]
    Io(#[from] std::io::Error),
}

const KIND_CONV: u8 = 0;
const KIND_RELU: u8 = 1;
const KIND_POOL: u8 = 2;
const KIND_FLATTEN: u8 = 3;
const KIND_DROPOUT: u8 = 4;
const KIND_DENSE: u8 = 5;

fn stage_code(s: Stage) -> u8 {
    match s {
        Stage::Fresh => 0,
        Stage::Pretrained => 1,
        Stage::Transferred => 2,
    }
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }
    fn tensor(&mut self, dims: &[usize], data: &[f32]) {
        self.u32(dims.len() as u32);
        for &d in dims {
            self.u32(d as u32);
        }
        for v in data {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let rest = self.buf.len() - self.pos;
        if rest < n {
            return Err(CheckpointError::Truncated {
                offset: self.pos,
                needed: n - rest,
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn str(&mut self) -> Result<String, CheckpointError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| CheckpointError::Malformed("string is not UTF-8".into()))
    }
    /// Reads a tensor that must have shape `expect`.
    fn tensor(&mut self, what: &str, expect: &[usize]) -> Result<Vec<f32>, CheckpointError> {
        let rank = self.u32()? as usize;
        let dims = (0..rank)
            .map(|_| self.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        if dims != expect {
            return Err(CheckpointError::ShapeMismatch(format!(
                "{what}: file has {dims:?}, model needs {expect:?}"
            )));
        }
        let n: usize = dims.iter().product();
        let raw = self.take(
            n.checked_mul(4)
                .ok_or_else(|| CheckpointError::Malformed("tensor too large".into()))?,
        )?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn to_bytes(model: &CmnetModel) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(VERSION);
    w.u32(model.antennas() as u32);
    w.u8(stage_code(model.stage()));
    let p = model.provenance();
    w.u64(p.seed);
    w.f64(p.final_loss.unwrap_or(f64::NAN));
    w.f64(model.input_gain());
    w.u32(p.datasets.len() as u32);
    for d in &p.datasets {
        w.str(d);
    }
    let net = model.network();
    w.u32(net.len() as u32);
    for layer in net.layers() {
        w.str(&layer.name);
        match &layer.kind {
            LayerKind::Conv(c) => {
                w.u8(KIND_CONV);
                w.u8(layer.trainable as u8);
                w.tensor(
                    &[c.out_channels, c.in_channels, c.kernel, c.kernel],
                    &c.weight,
                );
                w.tensor(&[c.out_channels], &c.bias);
            }
            LayerKind::Dense(d) => {
                w.u8(KIND_DENSE);
                w.u8(layer.trainable as u8);
                w.tensor(&[d.outputs, d.inputs], &d.weight);
                w.tensor(&[d.outputs], &d.bias);
            }
            LayerKind::Relu => {
                w.u8(KIND_RELU);
                w.u8(0);
            }
            LayerKind::MaxPool2 => {
                w.u8(KIND_POOL);
                w.u8(0);
            }
            LayerKind::Flatten => {
                w.u8(KIND_FLATTEN);
                w.u8(0);
            }
            LayerKind::Dropout(d) => {
                w.u8(KIND_DROPOUT);
                w.u8(0);
                w.f64(d.rho);
            }
        }
    }
    w.0
}

pub fn from_bytes(buf: &[u8]) -> Result<CmnetModel, CheckpointError> {
    let mut r = Reader { buf, pos: 0 };
    if buf.len() < MAGIC.len() || &buf[..MAGIC.len()] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    r.take(MAGIC.len())?;
    let version = r.u32()?;
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let antennas = r.u32()? as usize;
    let arch = CmnetArchitecture::new(antennas)
        .map_err(|e| CheckpointError::ShapeMismatch(e.to_string()))?;
    let stage = match r.u8()? {
        0 => Stage::Fresh,
        1 => Stage::Pretrained,
        2 => Stage::Transferred,
        s => {
            return Err(CheckpointError::Malformed(format!(
                "unknown stage code {s}"
            )))
        }
    };
    let seed = r.u64()?;
    let loss = r.f64()?;
    let gain = r.f64()?;
    if !(gain > 0.0 && gain.is_finite()) {
        return Err(CheckpointError::Malformed(format!("input gain {gain}")));
    }
    let n_datasets = r.u32()? as usize;
    let datasets = (0..n_datasets)
        .map(|_| r.str())
        .collect::<Result<Vec<_>, _>>()?;
    let mut net: Network<f32> = arch.zeros();
    let n_layers = r.u32()? as usize;
    if n_layers != net.len() {
        return Err(CheckpointError::ShapeMismatch(format!(
            "file has {n_layers} layers, architecture has {}",
            net.len()
        )));
    }
    for i in 0..n_layers {
        let name = r.str()?;
        let kind = r.u8()?;
        let trainable = match r.u8()? {
            0 => false,
            1 => true,
            t => {
                return Err(CheckpointError::Malformed(format!(
                    "bad trainable flag {t}"
                )))
            }
        };
        let layer = net.layer_mut(i);
        if name != layer.name {
            return Err(CheckpointError::ShapeMismatch(format!(
                "layer {i} is {name:?}, expected {:?}",
                layer.name
            )));
        }
        layer.trainable = trainable;
        match (&mut layer.kind, kind) {
            (LayerKind::Conv(c), KIND_CONV) => {
                c.weight = r.tensor(&name, &[c.out_channels, c.in_channels, c.kernel, c.kernel])?;
                c.bias = r.tensor(&name, &[c.out_channels])?;
            }
            (LayerKind::Dense(d), KIND_DENSE) => {
                d.weight = r.tensor(&name, &[d.outputs, d.inputs])?;
                d.bias = r.tensor(&name, &[d.outputs])?;
            }
            (LayerKind::Relu, KIND_RELU)
            | (LayerKind::MaxPool2, KIND_POOL)
            | (LayerKind::Flatten, KIND_FLATTEN) => {}
            (LayerKind::Dropout(d), KIND_DROPOUT) => {
                let rho = r.f64()?;
                *d = Dropout::new(rho).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
            }
            (_, k) => {
                return Err(CheckpointError::ShapeMismatch(format!(
                    "layer {name} has unexpected kind code {k}"
                )))
            }
        }
        if trainable && !layer.kind.has_params() {
            return Err(CheckpointError::Malformed(format!(
                "parameter-free layer {name} marked trainable"
            )));
        }
    }
    let rest = buf.len() - r.pos;
    if rest != 0 {
        return Err(CheckpointError::TrailingBytes(rest));
    }
    let provenance = Provenance {
        seed,
        datasets,
        final_loss: (!loss.is_nan()).then_some(loss),
    };
    Ok(CmnetModel::from_parts(arch, net, stage, provenance, gain))
}

pub fn save_checkpoint(model: &CmnetModel, path: &Path) -> Result<(), CheckpointError> {
    fs::write(path, to_bytes(model))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<CmnetModel, CheckpointError> {
    from_bytes(&fs::read(path)?)
}
