//! Named parameter store, seeded initialization and the `.cien` file format.
//!
//! Layout of a `.cien` file (all integers little-endian):
//!
//! | bytes          | content                                            |
//! |----------------|----------------------------------------------------|
//! | 0..4           | magic `CIEN`                                       |
//! | 4..8           | `u32` format version, currently 1                  |
//! | 8..16          | `u64` JSON header length `n`                       |
//! | 16..16+n       | UTF-8 JSON: `{"hyper": {...}, "tensors": [...]}`   |
//! | 16+n..         | `f32` IEEE-754 values, tensors in header order     |
//!
//! Tensors are listed in lexicographic name order.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{param_layout, HyperParams};

pub const MAGIC: &[u8; 4] = b"CIEN";
pub const FORMAT_VERSION: u32 = 1;
const PREAMBLE_LEN: u64 = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub hyper: HyperParams,
    tensors: BTreeMap<String, Tensor>,
}

impl ModelParams {
    /// Builds a parameter set, checking names and shapes against the network layout.
    pub fn new(hyper: HyperParams, tensors: BTreeMap<String, Tensor>) -> Result<Self> {
        hyper.validate()?;
        let p = Self { hyper, tensors };
        p.check_layout()?;
        Ok(p)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn tensors(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    /// Mutable access to values; shapes stay fixed.
    pub fn tensors_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn check_layout(&self) -> Result<()> {
        let layout = param_layout(&self.hyper);
        if layout.len() != self.tensors.len() {
            return Err(Error::shape(format!(
                "expected {} tensors for these hyperparameters, found {}",
                layout.len(),
                self.tensors.len()
            )));
        }
        for (name, shape) in layout {
            let t = self
                .tensors
                .get(&name)
                .ok_or_else(|| Error::shape(format!("missing tensor {name}")))?;
            if t.shape != shape {
                return Err(Error::shape(format!(
                    "{name} has shape {:?}, expected {shape:?}",
                    t.shape
                )));
            }
            if t.data.len() != t.numel() {
                return Err(Error::shape(format!(
                    "{name} holds {} values for shape {:?}",
                    t.data.len(),
                    t.shape
                )));
            }
        }
        Ok(())
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            hyper: self.hyper.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|(name, t)| TensorEntry {
                    name: name.clone(),
                    shape: t.shape.clone(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(PREAMBLE_LEN as usize + json.len() + 4 * self.param_count());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in self.tensors.values() {
            for &v in &t.data {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fail = |offset: u64, msg: String| Error::Format { offset, msg };
        let take = |from: u64, len: u64, what: &str| -> Result<&[u8]> {
            let end = from.checked_add(len).filter(|&e| e <= bytes.len() as u64);
            match end {
                Some(end) => Ok(&bytes[from as usize..end as usize]),
                None => Err(fail(
                    from,
                    format!("truncated {what}: need {len} bytes, file has {}", bytes.len()),
                )),
            }
        };

        if take(0, 4, "magic")? != MAGIC {
            return Err(fail(0, "bad magic, not a .cien file".into()));
        }
        let version = u32::from_le_bytes(take(4, 4, "version")?.try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(fail(4, format!("unsupported version {version}")));
        }
        let header_len = u64::from_le_bytes(take(8, 8, "header length")?.try_into().unwrap());
        let header: Header = serde_json::from_slice(take(PREAMBLE_LEN, header_len, "header")?)
            .map_err(|e| fail(PREAMBLE_LEN, format!("invalid header: {e}")))?;
        header
            .hyper
            .validate()
            .map_err(|e| fail(PREAMBLE_LEN, e.to_string()))?;
        if !header.tensors.windows(2).all(|w| w[0].name < w[1].name) {
            return Err(fail(PREAMBLE_LEN, "tensor names not unique and sorted".into()));
        }

        let payload_start = PREAMBLE_LEN + header_len;
        let expected: u64 = header
            .tensors
            .iter()
            .map(|t| t.shape.iter().product::<usize>() as u64 * 4)
            .sum();
        let actual = bytes.len() as u64 - payload_start;
        if actual != expected {
            return Err(fail(
                payload_start,
                format!("payload holds {actual} bytes, header shapes need {expected}"),
            ));
        }

        let mut tensors = BTreeMap::new();
        let mut cursor = payload_start as usize;
        for entry in header.tensors {
            let n: usize = entry.shape.iter().product();
            let data = bytes[cursor..cursor + 4 * n]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect();
            cursor += 4 * n;
            tensors.insert(
                entry.name,
                Tensor {
                    shape: entry.shape,
                    data,
                },
            );
        }
        Self::new(header.hyper, tensors).map_err(|e| fail(PREAMBLE_LEN, e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    hyper: HyperParams,
    tensors: Vec<TensorEntry>,
}

fn glorot_bound(shape: &[usize]) -> f64 {
    let (fan_in, fan_out) = match shape {
        [o, i] => (*i, *o),
        [o, i, rest @ ..] => {
            let k: usize = rest.iter().product();
            (i * k, o * k)
        }
        [n] => (*n, *n),
        [] => (1, 1),
    };
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Seeded initialization: Glorot-uniform weights, zero biases and LN shifts,
/// unit LN gains. Values are drawn in `f32` so a save/load roundtrip is exact.
pub fn init_params(hp: &HyperParams, seed: u64) -> Result<ModelParams> {
    hp.validate()?;
    let mut layout = param_layout(hp);
    layout.sort_by(|a, b| a.0.cmp(&b.0));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tensors = BTreeMap::new();
    for (name, shape) in layout {
        let n: usize = shape.iter().product();
        let data = if name.ends_with(".gamma") {
            vec![1.0; n]
        } else if name.ends_with(".bias") || name.ends_with(".beta") {
            vec![0.0; n]
        } else {
            let a = glorot_bound(&shape) as f32;
            (0..n).map(|_| rng.gen_range(-a..a) as f64).collect()
        };
        tensors.insert(name, Tensor { shape, data });
    }
    ModelParams::new(hp.clone(), tensors)
}
