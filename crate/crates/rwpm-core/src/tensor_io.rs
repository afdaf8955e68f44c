//! Dense map types and the `RWTENSR1` binary tensor format.
//!
//! The on-disk layout is fixed and little-endian so golden files compare
//! byte-for-byte across platforms: 8-byte magic, u32 dtype code, u32 rank,
//! one u64 extent per dimension, then the row-major payload.

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"RWTENSR1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    /// IEEE-754 binary32, code 0.
    Real32,
    /// Unsigned 8-bit, code 1.
    Label8,
}

impl Dtype {
    fn code(self) -> u32 {
        match self {
            Dtype::Real32 => 0,
            Dtype::Label8 => 1,
        }
    }

    fn from_code(code: u32) -> Result<Self> {
        match code {
            0 => Ok(Dtype::Real32),
            1 => Ok(Dtype::Label8),
            other => Err(Error::Format(format!("unknown dtype code {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    Real32(Vec<f32>),
    Label8(Vec<u8>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::Real32(v) => v.len(),
            TensorData::Label8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A validated dense tensor: dtype, extents, row-major payload
/// (last dimension fastest).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: TensorData,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: TensorData) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::Format("tensor rank must be >= 1".into()));
        }
        if dims.iter().any(|&e| e == 0) {
            return Err(Error::Format(format!("zero extent in dims {dims:?}")));
        }
        let expected: usize = dims.iter().product();
        if expected != data.len() {
            return Err(Error::Length(format!(
                "dims {:?} imply {} elements, payload has {}",
                dims,
                expected,
                data.len()
            )));
        }
        if let TensorData::Real32(v) = &data {
            if let Some(i) = v.iter().position(|x| x.is_nan()) {
                return Err(Error::Data(format!("NaN at element {i}")));
            }
        }
        Ok(Tensor { dims, data })
    }

    pub fn dtype(&self) -> Dtype {
        match self.data {
            TensorData::Real32(_) => Dtype::Real32,
            TensorData::Label8(_) => Dtype::Label8,
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn real32(&self) -> Result<&[f32]> {
        match &self.data {
            TensorData::Real32(v) => Ok(v),
            TensorData::Label8(_) => Err(Error::Format("expected real32 tensor".into())),
        }
    }

    pub fn label8(&self) -> Result<&[u8]> {
        match &self.data {
            TensorData::Label8(v) => Ok(v),
            TensorData::Real32(_) => Err(Error::Format("expected label8 tensor".into())),
        }
    }
}

pub fn write_tensor<W: Write>(t: &Tensor, sink: &mut W) -> Result<()> {
    sink.write_all(MAGIC)?;
    sink.write_u32::<LittleEndian>(t.dtype().code())?;
    sink.write_u32::<LittleEndian>(t.dims.len() as u32)?;
    for &e in &t.dims {
        sink.write_u64::<LittleEndian>(e as u64)?;
    }
    match &t.data {
        TensorData::Real32(v) => {
            for &x in v {
                sink.write_f32::<LittleEndian>(x)?;
            }
        }
        TensorData::Label8(v) => sink.write_all(v)?,
    }
    Ok(())
}

pub fn read_tensor<R: Read>(source: &mut R) -> Result<Tensor> {
    let mut magic = [0u8; 8];
    source
        .read_exact(&mut magic)
        .map_err(|_| Error::Format("missing or truncated magic".into()))?;
    if &magic != MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&magic),
            String::from_utf8_lossy(MAGIC)
        )));
    }
    let dtype = Dtype::from_code(source.read_u32::<LittleEndian>()?)?;
    let rank = source.read_u32::<LittleEndian>()? as usize;
    if rank == 0 {
        return Err(Error::Format("tensor rank must be >= 1".into()));
    }
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        let e = source.read_u64::<LittleEndian>()?;
        if e == 0 {
            return Err(Error::Format("zero extent".into()));
        }
        dims.push(e as usize);
    }
    let count: usize = dims.iter().product();
    let data = match dtype {
        Dtype::Real32 => {
            let mut v = vec![0f32; count];
            source
                .read_f32_into::<LittleEndian>(&mut v)
                .map_err(|_| Error::Length(format!("truncated payload, expected {count} elements")))?;
            TensorData::Real32(v)
        }
        Dtype::Label8 => {
            let mut v = vec![0u8; count];
            source
                .read_exact(&mut v)
                .map_err(|_| Error::Length(format!("truncated payload, expected {count} bytes")))?;
            TensorData::Label8(v)
        }
    };
    Tensor::new(dims, data)
}

/// Pixel-major matrix of embeddings, one row per pixel. All internal
/// arithmetic runs in f64 even though storage is f32.
pub type PixelMatrix = Array2<f64>;

/// Dense d x H x W map of pixel embeddings (channel-major storage).
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMap {
    d: usize,
    h: usize,
    w: usize,
    /// Row-major [d, H, W] payload.
    values: Vec<f32>,
}

impl EmbeddingMap {
    pub fn new(d: usize, h: usize, w: usize, values: Vec<f32>) -> Result<Self> {
        if d == 0 || h == 0 || w == 0 {
            return Err(Error::Size(format!("invalid extents d={d} H={h} W={w}")));
        }
        if values.len() != d * h * w {
            return Err(Error::Length(format!(
                "expected {} values for d={} H={} W={}, got {}",
                d * h * w,
                d,
                h,
                w,
                values.len()
            )));
        }
        if values.iter().any(|x| x.is_nan()) {
            return Err(Error::Data("NaN in embedding map".into()));
        }
        Ok(EmbeddingMap { d, h, w, values })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// Value at channel c, pixel (row, col).
    pub fn at(&self, c: usize, row: usize, col: usize) -> f32 {
        self.values[(c * self.h + row) * self.w + col]
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            vec![self.d, self.h, self.w],
            TensorData::Real32(self.values.clone()),
        )
        .expect("valid by construction")
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let dims = t.dims();
        if dims.len() != 3 {
            return Err(Error::Size(format!(
                "embedding map must be rank 3, got {:?}",
                dims
            )));
        }
        EmbeddingMap::new(dims[0], dims[1], dims[2], t.real32()?.to_vec())
    }
}

/// Reshape [d, H, W] to the pixel-major [H*W, d] matrix; row i holds the
/// embedding of pixel (i / W, i % W).
pub fn to_pixel_matrix(m: &EmbeddingMap) -> PixelMatrix {
    let (d, h, w) = (m.d, m.h, m.w);
    let n = h * w;
    let mut out = Array2::<f64>::zeros((n, d));
    for c in 0..d {
        for i in 0..n {
            out[(i, c)] = m.values[c * n + i] as f64;
        }
    }
    out
}

/// Inverse of [`to_pixel_matrix`]; rounds back to f32 storage.
pub fn from_pixel_matrix(x: &PixelMatrix, h: usize, w: usize) -> Result<EmbeddingMap> {
    let (n, d) = x.dim();
    if n != h * w {
        return Err(Error::Size(format!(
            "pixel matrix has {n} rows, expected H*W = {}",
            h * w
        )));
    }
    let mut values = vec![0f32; d * n];
    for c in 0..d {
        for i in 0..n {
            values[c * n + i] = x[(i, c)] as f32;
        }
    }
    EmbeddingMap::new(d, h, w, values)
}

/// L2-normalize every row. Rows with norm below 1e-12 are an error because
/// the cosine affinity is undefined for them.
pub fn l2_normalize_rows(x: &PixelMatrix) -> Result<PixelMatrix> {
    let mut out = x.clone();
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-12 {
            return Err(Error::DegenerateRow { pixel: i, norm });
        }
        row.mapv_inplace(|v| v / norm);
    }
    Ok(out)
}

/// H x W map of per-pixel anomaly scores. Held in f64; serialized as real32.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMap {
    h: usize,
    w: usize,
    scores: Vec<f64>,
}

impl ScoreMap {
    pub fn new(h: usize, w: usize, scores: Vec<f64>) -> Result<Self> {
        if scores.len() != h * w {
            return Err(Error::Length(format!(
                "expected {} scores for H={} W={}, got {}",
                h * w,
                h,
                w,
                scores.len()
            )));
        }
        if scores.iter().any(|x| !x.is_finite()) {
            return Err(Error::Data("non-finite score".into()));
        }
        Ok(ScoreMap { h, w, scores })
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.scores[row * self.w + col]
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            vec![self.h, self.w],
            TensorData::Real32(self.scores.iter().map(|&v| v as f32).collect()),
        )
        .expect("valid by construction")
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let dims = t.dims();
        if dims.len() != 2 {
            return Err(Error::Size(format!("score map must be rank 2, got {dims:?}")));
        }
        let scores: Vec<f64> = t.real32()?.iter().map(|&v| v as f64).collect();
        ScoreMap::new(dims[0], dims[1], scores)
    }
}

pub const LABEL_INLIER: u8 = 0;
pub const LABEL_OUTLIER: u8 = 1;
pub const LABEL_IGNORE: u8 = 255;

/// H x W ground-truth map with codes 0 = inlier, 1 = outlier, 255 = ignore.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMap {
    h: usize,
    w: usize,
    labels: Vec<u8>,
}

impl LabelMap {
    pub fn new(h: usize, w: usize, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != h * w {
            return Err(Error::Length(format!(
                "expected {} labels for H={} W={}, got {}",
                h * w,
                h,
                w,
                labels.len()
            )));
        }
        if let Some(&bad) = labels
            .iter()
            .find(|&&l| l != LABEL_INLIER && l != LABEL_OUTLIER && l != LABEL_IGNORE)
        {
            return Err(Error::Data(format!("invalid label code {bad}")));
        }
        Ok(LabelMap { h, w, labels })
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![self.h, self.w], TensorData::Label8(self.labels.clone()))
            .expect("valid by construction")
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let dims = t.dims();
        if dims.len() != 2 {
            return Err(Error::Size(format!("label map must be rank 2, got {dims:?}")));
        }
        LabelMap::new(dims[0], dims[1], t.label8()?.to_vec())
    }
}
