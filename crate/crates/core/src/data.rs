//! Datasets: MNIST in IDX format and small synthetic sets.

use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;

use crate::error::{Error, Result};
use crate::net::Shape;
use crate::numerics::{sample_haar_columns, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetKind {
    Mnist,
    Toy2d,
    LowrankSynthetic,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetHandle {
    pub kind: DatasetKind,
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub input_shape: Shape,
    pub classes: usize,
    /// Every input coordinate lies in `[domain.0, domain.1]`.
    pub domain: (f64, f64),
}

impl DatasetHandle {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.len()
    }

    /// The first `n` items (or all of them).
    pub fn take(&self, n: usize) -> DatasetHandle {
        let n = n.min(self.len());
        DatasetHandle {
            inputs: self.inputs[..n].to_vec(),
            labels: self.labels[..n].to_vec(),
            ..self.clone()
        }
    }

    /// Flattened copy with every image treated as a vector.
    pub fn flattened(&self) -> DatasetHandle {
        DatasetHandle {
            input_shape: Shape::Flat(self.input_len()),
            ..self.clone()
        }
    }
}

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = std::fs::read(path)
        .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..]).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(buf: &[u8], offset: usize, what: &str) -> Result<u32> {
    buf.get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::Format {
            offset: offset as u64,
            message: format!("file ends inside the {what} field"),
        })
}

fn parse_images(buf: &[u8]) -> Result<(usize, usize, usize)> {
    let magic = be_u32(buf, 0, "magic")?;
    if magic != IMAGES_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: format!("bad image magic {magic:#010x}, expected {IMAGES_MAGIC:#010x}"),
        });
    }
    let n = be_u32(buf, 4, "count")? as usize;
    let rows = be_u32(buf, 8, "rows")? as usize;
    let cols = be_u32(buf, 12, "cols")? as usize;
    let need = 16 + n * rows * cols;
    if buf.len() < need {
        return Err(Error::Format {
            offset: buf.len() as u64,
            message: format!("image data truncated: header promises {need} bytes, found {}", buf.len()),
        });
    }
    Ok((n, rows, cols))
}

fn parse_labels(buf: &[u8]) -> Result<usize> {
    let magic = be_u32(buf, 0, "magic")?;
    if magic != LABELS_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: format!("bad label magic {magic:#010x}, expected {LABELS_MAGIC:#010x}"),
        });
    }
    let n = be_u32(buf, 4, "count")? as usize;
    if buf.len() < 8 + n {
        return Err(Error::Format {
            offset: buf.len() as u64,
            message: format!("label data truncated: header promises {} bytes, found {}", 8 + n, buf.len()),
        });
    }
    Ok(n)
}

/// Parses an IDX image/label pair (plain or gzip-compressed). Pixels are
/// divided by 255; `limit` keeps the first items in file order.
pub fn load_mnist(images: impl AsRef<Path>, labels: impl AsRef<Path>, limit: Option<usize>) -> Result<DatasetHandle> {
    let img = read_maybe_gz(images.as_ref())?;
    let lab = read_maybe_gz(labels.as_ref())?;
    mnist_from_bytes(&img, &lab, limit)
}

pub fn mnist_from_bytes(img: &[u8], lab: &[u8], limit: Option<usize>) -> Result<DatasetHandle> {
    let (n, rows, cols) = parse_images(img)?;
    let n_labels = parse_labels(lab)?;
    if n != n_labels {
        return Err(Error::Format {
            offset: 4,
            message: format!("{n} images but {n_labels} labels"),
        });
    }
    let n = limit.map_or(n, |l| l.min(n));
    let plane = rows * cols;
    let mut inputs = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let px = &img[16 + i * plane..16 + (i + 1) * plane];
        inputs.push(px.iter().map(|&b| b as f64 / 255.0).collect());
        let l = lab[8 + i] as usize;
        if l > 9 {
            return Err(Error::Format {
                offset: (8 + i) as u64,
                message: format!("label {l} out of range"),
            });
        }
        labels.push(l);
    }
    Ok(DatasetHandle {
        kind: DatasetKind::Mnist,
        inputs,
        labels,
        input_shape: Shape::Image {
            channels: 1,
            height: rows,
            width: cols,
        },
        classes: 10,
        domain: (0.0, 1.0),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Locates `{train,t10k}-{images-idx3,labels-idx1}-ubyte[.gz]` under `dir`.
pub fn mnist_paths(dir: impl AsRef<Path>, split: Split) -> Result<(PathBuf, PathBuf)> {
    let prefix = match split {
        Split::Train => "train",
        Split::Test => "t10k",
    };
    let find = |stem: String| -> Result<PathBuf> {
        for name in [stem.clone(), format!("{stem}.gz")] {
            let p = dir.as_ref().join(&name);
            if p.is_file() {
                return Ok(p);
            }
        }
        Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("{stem}[.gz] not found in {}", dir.as_ref().display()),
        )))
    };
    Ok((
        find(format!("{prefix}-images-idx3-ubyte"))?,
        find(format!("{prefix}-labels-idx1-ubyte"))?,
    ))
}

pub fn load_mnist_split(dir: impl AsRef<Path>, split: Split, limit: Option<usize>) -> Result<DatasetHandle> {
    let (img, lab) = mnist_paths(dir, split)?;
    load_mnist(img, lab, limit)
}

/// Half-width of the empty strip around the separating line `x + y = 1`.
pub const TOY_HALF_GAP: f64 = 0.25;

/// Two Gaussian blobs in `[0,1]²`, labels alternating `0, 1, 0, …`.
///
/// Points are resampled until they lie in the unit square and at least
/// [`TOY_HALF_GAP`] from the line `x + y = 1`, so the classes are separated
/// by a strip of width 0.5.
pub fn gen_toy2d(rng: &mut Rng, n: usize) -> Result<DatasetHandle> {
    if n < 2 {
        return Err(Error::InvalidArgument("toy data needs at least two points".into()));
    }
    let centers = [[0.25, 0.25], [0.75, 0.75]];
    let sigma = 0.12;
    let mut inputs = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % 2;
        let side = if class == 0 { -1.0 } else { 1.0 };
        loop {
            let p = [
                centers[class][0] + rng.normal(sigma),
                centers[class][1] + rng.normal(sigma),
            ];
            let inside = p.iter().all(|v| (0.0..=1.0).contains(v));
            let dist = side * (p[0] + p[1] - 1.0) / 2f64.sqrt();
            if inside && dist >= TOY_HALF_GAP {
                inputs.push(p.to_vec());
                break;
            }
        }
        labels.push(class);
    }
    Ok(DatasetHandle {
        kind: DatasetKind::Toy2d,
        inputs,
        labels,
        input_shape: Shape::Flat(2),
        classes: 2,
        domain: (0.0, 1.0),
    })
}

/// Points on a random `k`-dimensional affine slice of `[0,1]^d`, labelled by
/// the sign of their first latent coordinate.
pub fn gen_lowrank(rng: &mut Rng, n: usize, d: usize, k: usize) -> Result<DatasetHandle> {
    if n < 2 || k == 0 || k > d {
        return Err(Error::InvalidArgument(format!("bad low-rank shape n={n}, d={d}, k={k}")));
    }
    let u = sample_haar_columns(rng, d, k);
    // |U z|_∞ ≤ |z|_1 ≤ k·0.5, so this scale keeps every point in [0,1]^d.
    let scale = 1.0 / k as f64;
    let mut inputs = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let z: Vec<f64> = (0..k).map(|_| rng.uniform(-0.5, 0.5)).collect();
        let x = (0..d)
            .map(|i| 0.5 + scale * (0..k).map(|j| u[(i, j)] * z[j]).sum::<f64>())
            .collect();
        inputs.push(x);
        labels.push(usize::from(z[0] > 0.0));
    }
    Ok(DatasetHandle {
        kind: DatasetKind::LowrankSynthetic,
        inputs,
        labels,
        input_shape: Shape::Flat(d),
        classes: 2,
        domain: (0.0, 1.0),
    })
}
