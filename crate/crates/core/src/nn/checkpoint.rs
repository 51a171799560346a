//! Binary checkpoint format.
//!
//! ```text
//! "PBOT"                      magic
//! u32  version                (1)
//! u32  obs_height, obs_width  network input size
//! u64  episodes               training iterations completed so far
//! u32  layer count
//! per layer:
//!   u8 kind: 0 = conv   u32 out, in, kernel_h, kernel_w, stride
//!            1 = dense  u32 out, in
//!            2 = vector u32 len
//! f32 data, per layer in table order (weights then biases)
//! ```
//! All integers and floats are little-endian. Layers appear as: convs,
//! hidden dense, policy dense, log-std vector, value dense.

use std::fs;
use std::path::Path;

use super::layers::{Conv2d, Dense};
use super::network::PolicyNet;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"PBOT";
pub const VERSION: u32 = 1;

const KIND_CONV: u8 = 0;
const KIND_DENSE: u8 = 1;
const KIND_VECTOR: u8 = 2;

/// Parameters plus the training progress stored alongside them.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub net: PolicyNet<f32>,
    pub episodes: u64,
}

pub fn encode(net: &PolicyNet<f32>, episodes: u64) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let (h, w) = net.observation_dims();
    out.extend_from_slice(&(h as u32).to_le_bytes());
    out.extend_from_slice(&(w as u32).to_le_bytes());
    out.extend_from_slice(&episodes.to_le_bytes());
    let layers = net.convs.len() + 4;
    out.extend_from_slice(&(layers as u32).to_le_bytes());
    let put = |out: &mut Vec<u8>, v: usize| out.extend_from_slice(&(v as u32).to_le_bytes());
    for c in &net.convs {
        out.push(KIND_CONV);
        for v in [c.out_channels, c.in_channels, c.kernel_h, c.kernel_w, c.stride] {
            put(&mut out, v);
        }
    }
    for d in [&net.fc, &net.policy] {
        out.push(KIND_DENSE);
        put(&mut out, d.outputs);
        put(&mut out, d.inputs);
    }
    out.push(KIND_VECTOR);
    put(&mut out, net.log_std.len());
    out.push(KIND_DENSE);
    put(&mut out, net.value.outputs);
    put(&mut out, net.value.inputs);
    for t in net.tensors() {
        for v in t {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format(format!(
                "checkpoint truncated while reading {what} at byte {} (file has {} bytes)",
                self.pos,
                self.bytes.len()
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()) as usize)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn floats(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| Error::format("tensor size overflow"))?, what)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

enum LayerShape {
    Conv([usize; 5]),
    Dense(usize, usize),
    Vector(usize),
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(magic),
            std::str::from_utf8(MAGIC).unwrap()
        )));
    }
    let version = r.u32("version")? as u32;
    if version != VERSION {
        return Err(Error::format(format!(
            "unsupported checkpoint version {version} (this build reads version {VERSION})"
        )));
    }
    let obs_h = r.u32("observation height")?;
    let obs_w = r.u32("observation width")?;
    let episodes = r.u64("episode count")?;
    let count = r.u32("layer count")?;
    if !(4..=64).contains(&count) {
        return Err(Error::format(format!("implausible layer count {count}")));
    }
    let mut shapes = Vec::with_capacity(count);
    for i in 0..count {
        let what = format!("layer {i} header");
        shapes.push(match r.u8(&what)? {
            KIND_CONV => {
                let mut dims = [0; 5];
                for d in dims.iter_mut() {
                    *d = r.u32(&what)?;
                }
                LayerShape::Conv(dims)
            }
            KIND_DENSE => LayerShape::Dense(r.u32(&what)?, r.u32(&what)?),
            KIND_VECTOR => LayerShape::Vector(r.u32(&what)?),
            k => return Err(Error::format(format!("unknown layer kind {k} in layer {i}"))),
        });
    }

    let n_conv = count - 4;
    let mut convs = Vec::with_capacity(n_conv);
    let mut denses = Vec::new();
    let mut log_std = None;
    for (i, shape) in shapes.iter().enumerate() {
        let what = format!("layer {i} data");
        match (i, shape) {
            (i, LayerShape::Conv([out, inp, kh, kw, stride])) if i < n_conv => {
                let weight = r.floats(out * inp * kh * kw, &what)?;
                let bias = r.floats(*out, &what)?;
                convs.push(Conv2d {
                    in_channels: *inp,
                    out_channels: *out,
                    kernel_h: *kh,
                    kernel_w: *kw,
                    stride: *stride,
                    weight,
                    bias,
                });
            }
            (i, LayerShape::Dense(out, inp)) if i >= n_conv && i != n_conv + 2 => {
                let weight = r.floats(out * inp, &what)?;
                let bias = r.floats(*out, &what)?;
                denses.push(Dense { inputs: *inp, outputs: *out, weight, bias });
            }
            (i, LayerShape::Vector(len)) if i == n_conv + 2 => {
                log_std = Some(r.floats(*len, &what)?);
            }
            _ => {
                return Err(Error::format(format!(
                    "unexpected layer kind at position {i}; expected convs, hidden, policy, log_std, value"
                )))
            }
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::format(format!("{} trailing bytes after checkpoint data", bytes.len() - r.pos)));
    }
    let mut denses = denses.into_iter();
    let (fc, policy, value) = (denses.next().unwrap(), denses.next().unwrap(), denses.next().unwrap());
    let net = PolicyNet::from_parts(obs_h, obs_w, convs, fc, policy, log_std.unwrap(), value)
        .map_err(|e| Error::format(format!("inconsistent layer table: {e}")))?;
    Ok(Checkpoint { net, episodes })
}

pub fn save_params(net: &PolicyNet<f32>, episodes: u64, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(net, episodes)).map_err(|e| Error::io(path, e))
}

pub fn load_params(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}
