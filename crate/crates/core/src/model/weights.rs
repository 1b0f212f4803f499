//! Named parameter storage and the binary weight file.
//!
//! File layout (all integers u32 little-endian):
//!
//! ```text
//! "USLN" | version | tensor count
//! per tensor: name length | UTF-8 name | rank | dims... | f32 LE values
//! ```

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result, WeightFileError};
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"USLN";
pub const FORMAT_VERSION: u32 = 1;

pub const DSBM_PARAMS: usize = 192;
pub const MCSM_PARAMS: usize = 282;
pub const REM_PARAMS: usize = 420;
pub const TOTAL_PARAMS: usize = 894;

const PW3: &[usize] = &[3, 3];
const PW2: &[usize] = &[2, 2];
const K3: &[usize] = &[3, 3, 3, 3];
const B3: &[usize] = &[3];
const B2: &[usize] = &[2];

/// Canonical tensor order of a [`WeightSet`].
pub const SCHEMA: [(&str, &[usize]); 30] = [
    ("dsbm.gw.pw.weight", PW3),
    ("dsbm.gw.pw.bias", B3),
    ("dsbm.wp.pw.weight", PW3),
    ("dsbm.wp.pw.bias", B3),
    ("dsbm.gw.merge3x3.weight", K3),
    ("dsbm.gw.merge3x3.bias", B3),
    ("dsbm.wp.merge3x3.weight", K3),
    ("dsbm.wp.merge3x3.bias", B3),
    ("mcsm.rgb.pw.weight", PW3),
    ("mcsm.rgb.pw.bias", B3),
    ("mcsm.si.pw.weight", PW2),
    ("mcsm.si.pw.bias", B2),
    ("mcsm.lab.pw.weight", PW3),
    ("mcsm.lab.pw.bias", B3),
    ("mcsm.rgb.merge3x3.weight", K3),
    ("mcsm.rgb.merge3x3.bias", B3),
    ("mcsm.hsi.merge3x3.weight", K3),
    ("mcsm.hsi.merge3x3.bias", B3),
    ("mcsm.lab.merge3x3.weight", K3),
    ("mcsm.lab.merge3x3.bias", B3),
    ("rem.dsbm_gw.conv3x3.weight", K3),
    ("rem.dsbm_gw.conv3x3.bias", B3),
    ("rem.dsbm_wp.conv3x3.weight", K3),
    ("rem.dsbm_wp.conv3x3.bias", B3),
    ("rem.mcsm_rgb.conv3x3.weight", K3),
    ("rem.mcsm_rgb.conv3x3.bias", B3),
    ("rem.mcsm_hsi.conv3x3.weight", K3),
    ("rem.mcsm_hsi.conv3x3.bias", B3),
    ("rem.mcsm_lab.conv3x3.weight", K3),
    ("rem.mcsm_lab.conv3x3.bias", B3),
];

pub fn schema_index(name: &str) -> Option<usize> {
    SCHEMA.iter().position(|(n, _)| *n == name)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub tensor: Tensor,
}

/// Parameter counts per module.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GroupCounts {
    pub dsbm: usize,
    pub mcsm: usize,
    pub rem: usize,
    pub total: usize,
}

impl GroupCounts {
    pub fn matches_reference(&self) -> bool {
        *self
            == GroupCounts {
                dsbm: DSBM_PARAMS,
                mcsm: MCSM_PARAMS,
                rem: REM_PARAMS,
                total: TOTAL_PARAMS,
            }
    }
}

/// The trainable parameters of the network, stored in [`SCHEMA`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightSet {
    params: Vec<Param>,
}

fn quantize(v: f64) -> f64 {
    v as f32 as f64
}

fn identity(n: usize, scale: f64) -> Vec<f64> {
    (0..n * n).map(|i| if i % (n + 1) == 0 { scale } else { 0.0 }).collect()
}

/// Centered delta kernel on the channel diagonal.
fn delta_kernel(scale: f64) -> Vec<f64> {
    (0..81)
        .map(|i| {
            let (co, ci, k) = (i / 27, (i / 9) % 3, i % 9);
            if co == ci && k == 4 {
                scale
            } else {
                0.0
            }
        })
        .collect()
}

impl WeightSet {
    /// Builds a weight set from tensors in schema order, validating shapes and
    /// the parameter budget.
    pub fn from_tensors(tensors: Vec<Tensor>) -> Result<Self> {
        if tensors.len() != SCHEMA.len() {
            return Err(Error::shape(format!(
                "expected {} tensors, got {}",
                SCHEMA.len(),
                tensors.len()
            )));
        }
        let mut params = Vec::with_capacity(SCHEMA.len());
        for ((name, dims), tensor) in SCHEMA.iter().zip(tensors) {
            if tensor.dims() != *dims {
                return Err(Error::shape(format!(
                    "{}: expected {:?}, got {:?}",
                    name,
                    dims,
                    tensor.dims()
                )));
            }
            params.push(Param {
                name: name.to_string(),
                tensor,
            });
        }
        let ws = WeightSet { params };
        assert_eq!(ws.group_counts().total, TOTAL_PARAMS);
        Ok(ws)
    }

    /// Initialization that reproduces the classical pipeline: gray-world
    /// pointwise conv at `0.5·I` (e = 0.5 / A), every other pointwise conv at
    /// identity, merge convs at a centered delta divided by the number of
    /// merged branches, residual convs at zero. With `jitter > 0` a seeded
    /// gaussian of that standard deviation is added to every parameter.
    /// Values are rounded to single precision.
    pub fn init(seed: u64, jitter: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, jitter.max(0.0)).expect("valid sigma");
        let tensors = SCHEMA
            .iter()
            .map(|(name, dims)| {
                let mut data: Vec<f64> = if name.starts_with("rem.") || name.ends_with(".bias") {
                    vec![0.0; dims.iter().product()]
                } else if *name == "dsbm.gw.pw.weight" {
                    identity(3, 0.5)
                } else if name.ends_with("pw.weight") {
                    identity(dims[0], 1.0)
                } else if name.starts_with("dsbm.") {
                    delta_kernel(0.5)
                } else {
                    delta_kernel(1.0 / 3.0)
                };
                if jitter > 0.0 {
                    for v in &mut data {
                        *v += normal.sample(&mut rng);
                    }
                }
                let data = data.into_iter().map(quantize).collect();
                Tensor::new(dims.to_vec(), data).unwrap()
            })
            .collect();
        WeightSet::from_tensors(tensors).unwrap()
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        schema_index(name).map(|i| &self.params[i].tensor)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        schema_index(name).map(move |i| &mut self.params[i].tensor)
    }

    pub fn tensor(&self, index: usize) -> &Tensor {
        &self.params[index].tensor
    }

    pub fn tensor_mut(&mut self, index: usize) -> &mut Tensor {
        &mut self.params[index].tensor
    }

    pub fn group_counts(&self) -> GroupCounts {
        let count = |prefix: &str| -> usize {
            self.params
                .iter()
                .filter(|p| p.name.starts_with(prefix))
                .map(|p| p.tensor.len())
                .sum()
        };
        let (dsbm, mcsm, rem) = (count("dsbm."), count("mcsm."), count("rem."));
        GroupCounts {
            dsbm,
            mcsm,
            rem,
            total: self.params.iter().map(|p| p.tensor.len()).sum(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.tensor.all_finite())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + TOTAL_PARAMS * 4 + 1024);
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for p in &self.params {
            out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
            out.extend_from_slice(p.name.as_bytes());
            out.extend_from_slice(&(p.tensor.dims().len() as u32).to_le_bytes());
            for &d in p.tensor.dims() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in p.tensor.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, WeightFileError> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4, "magic")?.try_into().unwrap();
        if magic != MAGIC {
            return Err(WeightFileError::BadMagic(magic));
        }
        let version = r.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(WeightFileError::VersionMismatch {
                expected: FORMAT_VERSION,
                found: version,
            });
        }
        let count = r.u32("tensor count")? as usize;
        let mut raw = Vec::with_capacity(count.min(SCHEMA.len()));
        for _ in 0..count {
            let len = r.u32("name length")? as usize;
            let name = String::from_utf8(r.take(len, "name")?.to_vec()).map_err(|_| WeightFileError::Tensor {
                name: String::from("?"),
                msg: "name is not UTF-8".into(),
            })?;
            let rank = r.u32("rank")? as usize;
            let mut dims = Vec::with_capacity(rank.min(8));
            for _ in 0..rank {
                dims.push(r.u32("dims")? as usize);
            }
            let n: usize = dims.iter().product();
            let body = r.take(n.checked_mul(4).ok_or(WeightFileError::Truncated("values"))?, "values")?;
            let data = body
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect();
            raw.push((name, Tensor::new(dims, data).unwrap()));
        }
        let found: usize = raw.iter().map(|(_, t)| t.len()).sum();
        if found != TOTAL_PARAMS {
            return Err(WeightFileError::ParamCountMismatch {
                expected: TOTAL_PARAMS,
                found,
            });
        }
        let mut slots: Vec<Option<Tensor>> = vec![None; SCHEMA.len()];
        for (name, tensor) in raw {
            let idx = schema_index(&name).ok_or_else(|| WeightFileError::Tensor {
                name: name.clone(),
                msg: "unknown tensor".into(),
            })?;
            if tensor.dims() != SCHEMA[idx].1 {
                return Err(WeightFileError::Tensor {
                    name,
                    msg: format!("expected dims {:?}, got {:?}", SCHEMA[idx].1, tensor.dims()),
                });
            }
            if slots[idx].replace(tensor).is_some() {
                return Err(WeightFileError::Tensor {
                    name,
                    msg: "duplicate tensor".into(),
                });
            }
        }
        let mut tensors = Vec::with_capacity(SCHEMA.len());
        for (slot, (name, _)) in slots.into_iter().zip(SCHEMA.iter()) {
            tensors.push(slot.ok_or_else(|| WeightFileError::Tensor {
                name: name.to_string(),
                msg: "missing tensor".into(),
            })?);
        }
        Ok(WeightSet::from_tensors(tensors).expect("validated against schema"))
    }

    /// Writes the weight file. Values are stored as f32.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        WeightSet::from_bytes(&bytes).map_err(|source| Error::WeightFile {
            path: path.to_path_buf(),
            source,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> std::result::Result<&'a [u8], WeightFileError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or(WeightFileError::Truncated(what))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &'static str) -> std::result::Result<u32, WeightFileError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}
