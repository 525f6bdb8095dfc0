//! Versioned binary checkpoint.
//!
//! Layout (little-endian):
//! ```text
//! magic[8] version:u32 in_c:u32 in_h:u32 in_w:u32 frozen:u32 n_layers:u32
//! n_layers x { kind:u32 a:u32 b:u32 c:u32 d:u32 }
//! for each layer with parameters: weight f64s, then bias f64s
//! ```
//! Layer kinds: 0 conv(out, kernel, stride, padding), 1 relu, 2 max-pool
//! (kernel, stride), 3 global-average-pool, 4 dense(out).

use super::net::{CnnModel, LayerSpec, Shape};
use super::VisionError;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"AUDITCNN";
pub const CHECKPOINT_VERSION: u32 = 1;

fn encode_spec(spec: &LayerSpec) -> [u32; 5] {
    let u = |v: usize| v as u32;
    match *spec {
        LayerSpec::Conv { out_channels, kernel, stride, padding } => {
            [0, u(out_channels), u(kernel), u(stride), u(padding)]
        }
        LayerSpec::Relu => [1, 0, 0, 0, 0],
        LayerSpec::MaxPool { kernel, stride } => [2, u(kernel), u(stride), 0, 0],
        LayerSpec::GlobalAvgPool => [3, 0, 0, 0, 0],
        LayerSpec::Dense { out } => [4, u(out), 0, 0, 0],
    }
}

fn decode_spec(f: [u32; 5]) -> Result<LayerSpec, VisionError> {
    let u = |v: u32| v as usize;
    Ok(match f[0] {
        0 => LayerSpec::Conv { out_channels: u(f[1]), kernel: u(f[2]), stride: u(f[3]), padding: u(f[4]) },
        1 => LayerSpec::Relu,
        2 => LayerSpec::MaxPool { kernel: u(f[1]), stride: u(f[2]) },
        3 => LayerSpec::GlobalAvgPool,
        4 => LayerSpec::Dense { out: u(f[1]) },
        k => return Err(VisionError::Checkpoint(format!("unknown layer kind {k}"))),
    })
}

pub fn save_checkpoint(model: &CnnModel) -> Vec<u8> {
    let mut out = CHECKPOINT_MAGIC.to_vec();
    let put = |v: u32, out: &mut Vec<u8>| out.extend_from_slice(&v.to_le_bytes());
    put(CHECKPOINT_VERSION, &mut out);
    for v in [model.input.c, model.input.h, model.input.w, model.frozen_prefix, model.layers.len()] {
        put(v as u32, &mut out);
    }
    for l in &model.layers {
        for v in encode_spec(&l.spec) {
            put(v, &mut out);
        }
    }
    for l in &model.layers {
        for v in l.weight.iter().chain(&l.bias) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], VisionError> {
        let s = self
            .bytes
            .get(self.pos..self.pos + n)
            .ok_or_else(|| VisionError::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, VisionError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64, VisionError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn load_checkpoint(bytes: &[u8]) -> Result<CnnModel, VisionError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(VisionError::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(VisionError::Checkpoint(format!("unsupported version {version}")));
    }
    let input = Shape::new(r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
    let frozen = r.u32()? as usize;
    let n_layers = r.u32()? as usize;
    let specs = (0..n_layers)
        .map(|_| decode_spec([r.u32()?, r.u32()?, r.u32()?, r.u32()?, r.u32()?]))
        .collect::<Result<Vec<_>, _>>()?;
    let mut model = CnnModel::init(input, &specs, frozen, 0)
        .map_err(|e| VisionError::Checkpoint(format!("layer table: {e}")))?;
    for l in &mut model.layers {
        for v in l.weight.iter_mut().chain(l.bias.iter_mut()) {
            *v = r.f64()?;
        }
    }
    if r.pos != bytes.len() {
        return Err(VisionError::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(model)
}
