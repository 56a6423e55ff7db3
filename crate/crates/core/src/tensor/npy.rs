//! Minimal NPY reader/writer.
//!
//! Reads format versions 1.0 and 2.0, writes 1.0 only. Supported dtypes are
//! little-endian `f4`, `u1` and `u4` in C order. Headers are padded so the
//! payload starts on a 64-byte boundary.

use std::fs;
use std::path::Path;

use super::grid::{
    BinaryMask, ComponentLabelMap, DepthMap, FeatureMap, FlowField, Grid, ImageMap, LabelMap,
    MotionMap, PredictionMap,
};
use crate::error::{Error, Result};

const MAGIC: &[u8; 6] = b"\x93NUMPY";
const ALIGN: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub enum NpyData {
    F32(Vec<f32>),
    U8(Vec<u8>),
    U32(Vec<u32>),
}

impl NpyData {
    fn descr(&self) -> &'static str {
        match self {
            NpyData::F32(_) => "<f4",
            NpyData::U8(_) => "|u1",
            NpyData::U32(_) => "<u4",
        }
    }

    pub fn len(&self) -> usize {
        match self {
            NpyData::F32(v) => v.len(),
            NpyData::U8(v) => v.len(),
            NpyData::U32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn type_name(&self) -> &'static str {
        match self {
            NpyData::F32(_) => "f32",
            NpyData::U8(_) => "u8",
            NpyData::U32(_) => "u32",
        }
    }
}

/// A decoded NPY array: shape plus flat C-order payload.
#[derive(Debug, Clone, PartialEq)]
pub struct NpyTensor {
    pub shape: Vec<usize>,
    pub data: NpyData,
}

impl NpyTensor {
    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn encode(&self) -> Vec<u8> {
        let shape = match self.shape.as_slice() {
            [n] => format!("({n},)"),
            dims => format!(
                "({})",
                dims.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(", ")
            ),
        };
        let mut header = format!(
            "{{'descr': '{}', 'fortran_order': False, 'shape': {shape}, }}",
            self.data.descr()
        );
        // magic(6) + version(2) + header_len(2) + header + '\n'
        let unpadded = MAGIC.len() + 4 + header.len() + 1;
        let padding = (ALIGN - unpadded % ALIGN) % ALIGN;
        header.extend(std::iter::repeat_n(' ', padding));
        header.push('\n');

        let mut out = Vec::with_capacity(MAGIC.len() + 4 + header.len() + self.data.len() * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&[1, 0]);
        out.extend_from_slice(&(header.len() as u16).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        match &self.data {
            NpyData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            NpyData::U8(v) => out.extend_from_slice(v),
            NpyData::U32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 2 || &bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::Format("missing NPY magic".into()));
        }
        let major = bytes[6];
        let (header_len, header_start) = match major {
            1 => {
                let raw = bytes
                    .get(8..10)
                    .ok_or_else(|| Error::Format("truncated NPY header length".into()))?;
                (u16::from_le_bytes([raw[0], raw[1]]) as usize, 10)
            }
            2 => {
                let raw = bytes
                    .get(8..12)
                    .ok_or_else(|| Error::Format("truncated NPY header length".into()))?;
                (u32::from_le_bytes([raw[0], raw[1], raw[2], raw[3]]) as usize, 12)
            }
            v => return Err(Error::Format(format!("unsupported NPY version {v}"))),
        };
        let header = bytes
            .get(header_start..header_start + header_len)
            .ok_or_else(|| Error::Format("truncated NPY header".into()))?;
        let header = std::str::from_utf8(header)
            .map_err(|_| Error::Format("NPY header is not ASCII".into()))?;
        let header = parse_header(header)?;
        if header.fortran_order {
            return Err(Error::Format("fortran-order arrays are not supported".into()));
        }

        let count: usize = header.shape.iter().product();
        let payload = &bytes[header_start + header_len..];
        let elem = match header.descr.as_str() {
            "<f4" | "<u4" => 4,
            "|u1" | "<u1" => 1,
            other => return Err(Error::Format(format!("unsupported dtype {other:?}"))),
        };
        if payload.len() != count * elem {
            return Err(Error::Format(format!(
                "payload has {} bytes, shape {:?} needs {}",
                payload.len(),
                header.shape,
                count * elem
            )));
        }
        let data = match header.descr.as_str() {
            "<f4" => NpyData::F32(
                payload
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                    .collect(),
            ),
            "<u4" => NpyData::U32(
                payload
                    .chunks_exact(4)
                    .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                    .collect(),
            ),
            _ => NpyData::U8(payload.to_vec()),
        };
        Ok(NpyTensor {
            shape: header.shape,
            data,
        })
    }
}

struct Header {
    descr: String,
    fortran_order: bool,
    shape: Vec<usize>,
}

/// Parses the Python dict literal of an NPY header.
fn parse_header(text: &str) -> Result<Header> {
    let text = text.trim();
    let body = text
        .strip_prefix('{')
        .and_then(|t| t.strip_suffix('}'))
        .ok_or_else(|| Error::Format(format!("NPY header is not a dict: {text:?}")))?;

    let value_after = |key: &str| -> Result<&str> {
        let quoted_single = format!("'{key}'");
        let quoted_double = format!("\"{key}\"");
        let pos = body
            .find(&quoted_single)
            .map(|p| p + quoted_single.len())
            .or_else(|| body.find(&quoted_double).map(|p| p + quoted_double.len()))
            .ok_or_else(|| Error::Format(format!("NPY header lacks {key:?}")))?;
        let rest = body[pos..].trim_start();
        rest.strip_prefix(':')
            .map(str::trim_start)
            .ok_or_else(|| Error::Format(format!("NPY header: expected ':' after {key:?}")))
    };

    let descr_raw = value_after("descr")?;
    let quote = descr_raw
        .chars()
        .next()
        .filter(|c| *c == '\'' || *c == '"')
        .ok_or_else(|| Error::Format("NPY descr is not a string".into()))?;
    let descr_end = descr_raw[1..]
        .find(quote)
        .ok_or_else(|| Error::Format("unterminated NPY descr".into()))?;
    let descr = descr_raw[1..1 + descr_end].to_string();

    let fortran_raw = value_after("fortran_order")?;
    let fortran_order = if fortran_raw.starts_with("True") {
        true
    } else if fortran_raw.starts_with("False") {
        false
    } else {
        return Err(Error::Format("NPY fortran_order is not a bool".into()));
    };

    let shape_raw = value_after("shape")?;
    let inner = shape_raw
        .strip_prefix('(')
        .and_then(|s| s.find(')').map(|end| &s[..end]))
        .ok_or_else(|| Error::Format("NPY shape is not a tuple".into()))?;
    let shape = inner
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.trim_end_matches('L')
                .parse::<usize>()
                .map_err(|_| Error::Format(format!("bad NPY dimension {s:?}")))
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(Header {
        descr,
        fortran_order,
        shape,
    })
}

pub fn read_npy(path: impl AsRef<Path>) -> Result<NpyTensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    NpyTensor::decode(&bytes)
}

pub fn write_npy(path: impl AsRef<Path>, tensor: &NpyTensor) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, tensor.encode()).map_err(|e| Error::io(path, e))
}

/// Reads an NPY file and checks its rank.
pub fn load_tensor(path: impl AsRef<Path>, expected_rank: usize) -> Result<NpyTensor> {
    let tensor = read_npy(path)?;
    if tensor.rank() != expected_rank {
        return Err(Error::Shape(format!(
            "expected rank {expected_rank}, file has shape {:?}",
            tensor.shape
        )));
    }
    Ok(tensor)
}

/// A map type with a fixed NPY representation.
pub trait NpyMap: Sized {
    /// Rank of the on-disk array: 2 for `(H, W)` maps, 3 for `(H, W, C)`.
    const RANK: usize;

    fn to_npy(&self) -> NpyTensor;

    fn from_npy(tensor: NpyTensor) -> Result<Self>;
}

pub fn save_tensor<M: NpyMap>(map: &M, path: impl AsRef<Path>) -> Result<()> {
    write_npy(path, &map.to_npy())
}

pub fn load_map<M: NpyMap>(path: impl AsRef<Path>) -> Result<M> {
    M::from_npy(load_tensor(path, M::RANK)?)
}

fn dims(tensor: &NpyTensor, rank: usize) -> Result<(usize, usize, usize)> {
    match (rank, tensor.shape.as_slice()) {
        (2, &[h, w]) => Ok((h, w, 1)),
        (3, &[h, w, c]) => Ok((h, w, c)),
        _ => Err(Error::Shape(format!(
            "expected rank {rank}, got shape {:?}",
            tensor.shape
        ))),
    }
}

fn wrong_dtype(tensor: &NpyTensor, want: &str) -> Error {
    Error::Format(format!(
        "expected {want} payload, file holds {}",
        tensor.data.type_name()
    ))
}

macro_rules! npy_f32_map {
    ($ty:ident, $rank:expr) => {
        impl NpyMap for $ty {
            const RANK: usize = $rank;

            fn to_npy(&self) -> NpyTensor {
                let (h, w, c) = self.shape();
                let shape = if $rank == 2 { vec![h, w] } else { vec![h, w, c] };
                NpyTensor {
                    shape,
                    data: NpyData::F32(self.data().to_vec()),
                }
            }

            fn from_npy(tensor: NpyTensor) -> Result<Self> {
                let (h, w, c) = dims(&tensor, $rank)?;
                match tensor.data {
                    NpyData::F32(data) => $ty::from_grid(Grid::new(h, w, c, data)?),
                    _ => Err(wrong_dtype(&tensor, "f32")),
                }
            }
        }
    };
}

npy_f32_map!(ImageMap, 3);
npy_f32_map!(DepthMap, 2);
npy_f32_map!(MotionMap, 3);
npy_f32_map!(FeatureMap, 3);
npy_f32_map!(PredictionMap, 3);
npy_f32_map!(FlowField, 3);

macro_rules! npy_u8_map {
    ($ty:ident) => {
        impl NpyMap for $ty {
            const RANK: usize = 2;

            fn to_npy(&self) -> NpyTensor {
                NpyTensor {
                    shape: vec![self.height(), self.width()],
                    data: NpyData::U8(self.data().to_vec()),
                }
            }

            fn from_npy(tensor: NpyTensor) -> Result<Self> {
                let (h, w, _) = dims(&tensor, 2)?;
                match tensor.data {
                    NpyData::U8(data) => $ty::new(h, w, data),
                    _ => Err(wrong_dtype(&tensor, "u8")),
                }
            }
        }
    };
}

npy_u8_map!(BinaryMask);
npy_u8_map!(LabelMap);

impl NpyMap for ComponentLabelMap {
    const RANK: usize = 2;

    fn to_npy(&self) -> NpyTensor {
        NpyTensor {
            shape: vec![self.height(), self.width()],
            data: NpyData::U32(self.data().to_vec()),
        }
    }

    fn from_npy(tensor: NpyTensor) -> Result<Self> {
        let (h, w, _) = dims(&tensor, 2)?;
        match tensor.data {
            NpyData::U32(data) => ComponentLabelMap::from_grid(Grid::new(h, w, 1, data)?),
            _ => Err(wrong_dtype(&tensor, "u32")),
        }
    }
}
