//! Network checkpoints.
//!
//! Binary layout (all integers and floats little-endian):
//!
//! ```text
//! "TBX1"  u32 version
//! u8 shape tag (0 = flat: u64 len | 1 = image: u64 channels, height, width)
//! u32 layer count, then per layer a u8 tag:
//!   1 affine  u64 rows, u64 cols, rows*cols f64 weights (row-major), rows f64 bias
//!   2 relu
//!   3 conv2d  u64 in, out, kernel, stride, padding, height, width, weights, bias
//!   4 flatten
//! ```

use std::fmt::Write as _;
use std::path::Path;

use super::{Conv2d, Layer, ReluNet, Shape};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, Vector};

const MAGIC: &[u8; 4] = b"TBX1";
const VERSION: u32 = 1;

const TAG_AFFINE: u8 = 1;
const TAG_RELU: u8 = 2;
const TAG_CONV: u8 = 3;
const TAG_FLATTEN: u8 = 4;

fn put_u64(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u64).to_le_bytes());
}

fn put_f64s(out: &mut Vec<u8>, vs: &[f64]) {
    for v in vs {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn to_bytes(net: &ReluNet) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    match net.input_shape() {
        Shape::Flat(n) => {
            out.push(0);
            put_u64(&mut out, n);
        }
        Shape::Image {
            channels,
            height,
            width,
        } => {
            out.push(1);
            for v in [channels, height, width] {
                put_u64(&mut out, v);
            }
        }
    }
    out.extend_from_slice(&(net.layers().len() as u32).to_le_bytes());
    for layer in net.layers() {
        match layer {
            Layer::Affine { weight, bias } => {
                out.push(TAG_AFFINE);
                put_u64(&mut out, weight.rows());
                put_u64(&mut out, weight.cols());
                put_f64s(&mut out, weight.data());
                put_f64s(&mut out, bias);
            }
            Layer::Relu => out.push(TAG_RELU),
            Layer::Conv2d(c) => {
                out.push(TAG_CONV);
                for v in [
                    c.in_channels,
                    c.out_channels,
                    c.kernel,
                    c.stride,
                    c.padding,
                    c.in_height,
                    c.in_width,
                ] {
                    put_u64(&mut out, v);
                }
                put_f64s(&mut out, &c.weight);
                put_f64s(&mut out, &c.bias);
            }
            Layer::Flatten => out.push(TAG_FLATTEN),
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

// Sizes in a header are capped so a corrupt count fails as truncation rather
// than as an enormous allocation.
const MAX_DIM: u64 = 1 << 32;

impl<'a> Reader<'a> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Format {
            offset: self.pos as u64,
            message: message.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(self.err(format!("unexpected end of data (need {n} more bytes)")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn dim(&mut self) -> Result<usize> {
        self.sized(1)
    }

    fn sized(&mut self, min: u64) -> Result<usize> {
        let at = self.pos;
        let v = u64::from_le_bytes(self.take(8)?.try_into().unwrap());
        if v < min || v > MAX_DIM {
            self.pos = at;
            return Err(self.err(format!("implausible dimension {v}")));
        }
        Ok(v as usize)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| self.err("size overflow"))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn from_bytes(buf: &[u8]) -> Result<ReluNet> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: "bad magic, expected TBX1".into(),
        });
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format {
            offset: 4,
            message: format!("unsupported version {version}"),
        });
    }
    let shape = match r.u8()? {
        0 => Shape::Flat(r.dim()?),
        1 => Shape::Image {
            channels: r.dim()?,
            height: r.dim()?,
            width: r.dim()?,
        },
        t => {
            r.pos -= 1;
            return Err(r.err(format!("unknown shape tag {t}")));
        }
    };
    let count = r.u32()? as usize;
    let mut layers = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let start = r.pos;
        let layer = match r.u8()? {
            TAG_AFFINE => {
                let rows = r.dim()?;
                let cols = r.dim()?;
                let w = r.f64s(rows * cols)?;
                let b = r.f64s(rows)?;
                let weight = Matrix::new(rows, cols, w).map_err(|e| Error::Format {
                    offset: start as u64,
                    message: e.to_string(),
                })?;
                Layer::Affine {
                    weight,
                    bias: Vector::new(b),
                }
            }
            TAG_RELU => Layer::Relu,
            TAG_CONV => {
                let (cin, cout, k, s) = (r.dim()?, r.dim()?, r.dim()?, r.dim()?);
                let pad = r.sized(0)?;
                let (h, w) = (r.dim()?, r.dim()?);
                let w_vals = r.f64s(cout * cin * k * k)?;
                let b_vals = r.f64s(cout)?;
                Layer::Conv2d(
                    Conv2d::new(cin, cout, k, s, pad, h, w, w_vals, b_vals).map_err(|e| {
                        Error::Format {
                            offset: start as u64,
                            message: e.to_string(),
                        }
                    })?,
                )
            }
            TAG_FLATTEN => Layer::Flatten,
            t => {
                r.pos = start;
                return Err(r.err(format!("unknown layer tag {t}")));
            }
        };
        layers.push(layer);
    }
    if r.pos != buf.len() {
        return Err(r.err("trailing bytes after last layer"));
    }
    ReluNet::new(shape, layers).map_err(|e| Error::Format {
        offset: buf.len() as u64,
        message: e.to_string(),
    })
}

pub fn save(net: &ReluNet, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, to_bytes(net))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<ReluNet> {
    from_bytes(&std::fs::read(path)?)
}

/// Human-readable dump. Floats use the shortest representation that parses
/// back to the same value.
pub fn to_text(net: &ReluNet) -> String {
    let mut s = String::new();
    let floats = |s: &mut String, vs: &[f64]| {
        let parts: Vec<String> = vs.iter().map(|v| format!("{v:?}")).collect();
        let _ = writeln!(s, "  {}", parts.join(" "));
    };
    let _ = writeln!(s, "tbx1 input {:?}", net.input_shape());
    for (i, layer) in net.layers().iter().enumerate() {
        match layer {
            Layer::Affine { weight, bias } => {
                let _ = writeln!(s, "layer {i} affine {}x{}", weight.rows(), weight.cols());
                for r in 0..weight.rows() {
                    floats(&mut s, weight.row(r));
                }
                let _ = writeln!(s, " bias");
                floats(&mut s, bias);
            }
            Layer::Relu => {
                let _ = writeln!(s, "layer {i} relu");
            }
            Layer::Conv2d(c) => {
                let _ = writeln!(
                    s,
                    "layer {i} conv2d in={} out={} kernel={} stride={} padding={} input={}x{}",
                    c.in_channels, c.out_channels, c.kernel, c.stride, c.padding, c.in_height, c.in_width
                );
                for chunk in c.weight.chunks(c.kernel * c.kernel) {
                    floats(&mut s, chunk);
                }
                let _ = writeln!(s, " bias");
                floats(&mut s, &c.bias);
            }
            Layer::Flatten => {
                let _ = writeln!(s, "layer {i} flatten");
            }
        }
    }
    s
}
