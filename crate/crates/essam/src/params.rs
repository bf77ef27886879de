//! Flat parameter storage partitioned into named layers.
//!
//! A [`ParamStore`] owns one contiguous buffer tiled by a layer table. All
//! mutation goes through layer-granular axpy operations, which is exactly the
//! granularity the seed-replay machinery needs: noise for one layer can be
//! generated, applied, and discarded before the next layer is touched.
//!
//! Stores carry a version counter (incremented once per mutating call), a
//! content digest for replica-agreement checks, and a binary checkpoint
//! format with a trailing checksum.

use std::fmt;
use std::path::Path;

use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::noise::{NoiseStream, Seed};

/// One named slice of the parameter buffer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

/// Storage width of the parameter buffer. Arithmetic is always performed in
/// f64; the 32-bit variant halves resident memory and rounds each stored
/// element.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    fn tag(self) -> u8 {
        match self {
            Precision::F32 => 4,
            Precision::F64 => 8,
        }
    }

    fn from_tag(tag: u8) -> Result<Self, StoreError> {
        match tag {
            4 => Ok(Precision::F32),
            8 => Ok(Precision::F64),
            other => Err(StoreError::BadElementTag(other)),
        }
    }
}

/// How a freshly created store is filled.
#[derive(Clone, Debug)]
pub enum InitRule {
    Zeros,
    Constant(f64),
    /// Standard normal draws from a dedicated stream, scaled.
    SeededGaussian { seed: Seed, scale: f64 },
    /// Loads a checkpoint that must match the requested layout exactly.
    FromFile(std::path::PathBuf),
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("layer list is empty")]
    EmptyLayers,
    #[error("layer {0:?} has zero length")]
    EmptyLayer(String),
    #[error("duplicate layer name {0:?}")]
    DuplicateLayer(String),
    #[error("unknown layer {0:?}")]
    UnknownLayer(String),
    #[error("layer index {index} out of range ({layers} layers)")]
    LayerIndexOutOfRange { index: usize, layers: usize },
    #[error("chunk length {got} does not match layer length {want}")]
    ChunkLength { got: usize, want: usize },
    #[error("element index {index} out of range (dim {dim})")]
    ElementOutOfRange { index: usize, dim: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("bad magic bytes (not a parameter checkpoint)")]
    BadMagic,
    #[error("unsupported checkpoint format version {0}")]
    BadFormatVersion(u32),
    #[error("unsupported element type tag {0}")]
    BadElementTag(u8),
    #[error("checkpoint is truncated or corrupt")]
    Truncated,
    #[error("checkpoint checksum mismatch")]
    ChecksumMismatch,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("checkpoint layout does not match the requested layer specification")]
    LayoutMismatch,
}

/// 256-bit content digest over the layer table, element type, and raw
/// parameter bytes. Equal digests mean byte-identical stores.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamDigest(pub [u8; 32]);

impl ParamDigest {
    pub fn to_hex(self) -> String {
        let mut s = String::with_capacity(64);
        for b in self.0 {
            s.push_str(&format!("{b:02x}"));
        }
        s
    }

    pub fn from_hex(hex: &str) -> Option<Self> {
        if hex.len() != 64 {
            return None;
        }
        let mut out = [0u8; 32];
        for (i, chunk) in hex.as_bytes().chunks(2).enumerate() {
            let s = std::str::from_utf8(chunk).ok()?;
            out[i] = u8::from_str_radix(s, 16).ok()?;
        }
        Some(ParamDigest(out))
    }
}

impl fmt::Debug for ParamDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ParamDigest({})", self.to_hex())
    }
}

impl fmt::Display for ParamDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_hex())
    }
}

#[derive(Clone, Debug)]
enum Buffer {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl Buffer {
    fn len(&self) -> usize {
        match self {
            Buffer::F32(v) => v.len(),
            Buffer::F64(v) => v.len(),
        }
    }
}

const MAGIC: &[u8; 4] = b"ESPS";
const FORMAT_VERSION: u32 = 1;

/// Layered parameter vector with versioning, digests, and checkpointing.
#[derive(Clone, Debug)]
pub struct ParamStore {
    layers: Vec<LayerSpec>,
    data: Buffer,
    version: u64,
}

impl ParamStore {
    /// Creates a store with 64-bit elements. Layers are laid out
    /// contiguously in the order given.
    pub fn create(layers: &[(&str, usize)], init: InitRule) -> Result<Self, StoreError> {
        Self::create_with_precision(layers, init, Precision::F64)
    }

    pub fn create_with_precision(
        layers: &[(&str, usize)],
        init: InitRule,
        precision: Precision,
    ) -> Result<Self, StoreError> {
        if layers.is_empty() {
            return Err(StoreError::EmptyLayers);
        }
        let mut specs = Vec::with_capacity(layers.len());
        let mut offset = 0usize;
        for (name, len) in layers {
            if *len == 0 {
                return Err(StoreError::EmptyLayer((*name).to_string()));
            }
            if specs.iter().any(|s: &LayerSpec| s.name == *name) {
                return Err(StoreError::DuplicateLayer((*name).to_string()));
            }
            specs.push(LayerSpec {
                name: (*name).to_string(),
                offset,
                len: *len,
            });
            offset += len;
        }
        let dim = offset;

        if let InitRule::FromFile(path) = &init {
            let loaded = Self::load(path)?;
            if loaded.precision() != precision {
                return Err(StoreError::LayoutMismatch);
            }
            if loaded.layers != specs {
                return Err(StoreError::LayoutMismatch);
            }
            return Ok(loaded);
        }

        let values: Vec<f64> = match &init {
            InitRule::Zeros => vec![0.0; dim],
            InitRule::Constant(c) => {
                if !c.is_finite() {
                    return Err(StoreError::NonFinite("constant initializer"));
                }
                vec![*c; dim]
            }
            InitRule::SeededGaussian { seed, scale } => {
                if !scale.is_finite() {
                    return Err(StoreError::NonFinite("gaussian init scale"));
                }
                let mut stream = NoiseStream::open(*seed);
                let mut v = vec![0.0; dim];
                stream.fill(&mut v);
                for x in &mut v {
                    *x *= scale;
                }
                v
            }
            InitRule::FromFile(_) => unreachable!("handled above"),
        };

        let data = match precision {
            Precision::F64 => Buffer::F64(values),
            Precision::F32 => Buffer::F32(values.into_iter().map(|x| x as f32).collect()),
        };
        Ok(ParamStore {
            layers: specs,
            data,
            version: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.data.len()
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn precision(&self) -> Precision {
        match self.data {
            Buffer::F32(_) => Precision::F32,
            Buffer::F64(_) => Precision::F64,
        }
    }

    pub fn max_layer_len(&self) -> usize {
        self.layers.iter().map(|l| l.len).max().unwrap_or(0)
    }

    pub fn layer_index(&self, name: &str) -> Result<usize, StoreError> {
        self.layers
            .iter()
            .position(|l| l.name == name)
            .ok_or_else(|| StoreError::UnknownLayer(name.to_string()))
    }

    pub fn get(&self, index: usize) -> f64 {
        match &self.data {
            Buffer::F32(v) => v[index] as f64,
            Buffer::F64(v) => v[index],
        }
    }

    /// All elements widened to f64, in layer order.
    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.dim()).map(move |i| self.get(i))
    }

    pub fn layer_values(&self, index: usize) -> impl Iterator<Item = f64> + '_ {
        let spec = &self.layers[index];
        (spec.offset..spec.offset + spec.len).map(move |i| self.get(i))
    }

    pub fn values(&self) -> Vec<f64> {
        self.iter().collect()
    }

    /// In-place `layer += scale * chunk`. A zero scale leaves the stored
    /// bits untouched (no additions are performed) but still counts as a
    /// mutation for versioning.
    pub fn axpy_layer(&mut self, name: &str, scale: f64, chunk: &[f64]) -> Result<(), StoreError> {
        let index = self.layer_index(name)?;
        self.axpy_layer_at(index, scale, chunk)
    }

    pub fn axpy_layer_at(&mut self, index: usize, scale: f64, chunk: &[f64]) -> Result<(), StoreError> {
        let spec = self.layers.get(index).ok_or(StoreError::LayerIndexOutOfRange {
            index,
            layers: self.layers.len(),
        })?;
        if chunk.len() != spec.len {
            return Err(StoreError::ChunkLength {
                got: chunk.len(),
                want: spec.len,
            });
        }
        if !scale.is_finite() {
            return Err(StoreError::NonFinite("axpy scale"));
        }
        let (offset, len) = (spec.offset, spec.len);
        if scale != 0.0 {
            match &mut self.data {
                Buffer::F64(v) => {
                    for (x, c) in v[offset..offset + len].iter_mut().zip(chunk) {
                        *x += scale * c;
                    }
                }
                Buffer::F32(v) => {
                    for (x, c) in v[offset..offset + len].iter_mut().zip(chunk) {
                        *x = (*x as f64 + scale * c) as f32;
                    }
                }
            }
        }
        self.version += 1;
        #[cfg(debug_assertions)]
        debug_assert!(self.all_finite(), "non-finite parameter after axpy");
        Ok(())
    }

    /// Overwrites a single element. Intended for fault injection in tests
    /// and replica-divergence drills, not for optimization steps.
    pub fn poke(&mut self, index: usize, value: f64) -> Result<(), StoreError> {
        if index >= self.dim() {
            return Err(StoreError::ElementOutOfRange {
                index,
                dim: self.dim(),
            });
        }
        match &mut self.data {
            Buffer::F32(v) => v[index] = value as f32,
            Buffer::F64(v) => v[index] = value,
        }
        self.version += 1;
        Ok(())
    }

    fn all_finite(&self) -> bool {
        match &self.data {
            Buffer::F32(v) => v.iter().all(|x| x.is_finite()),
            Buffer::F64(v) => v.iter().all(|x| x.is_finite()),
        }
    }

    /// Checks the structural invariants: layers tile `[0, dim)` contiguously
    /// and all elements are finite.
    pub fn validate(&self) -> Result<(), StoreError> {
        if self.layers.is_empty() {
            return Err(StoreError::EmptyLayers);
        }
        let mut expected = 0usize;
        for spec in &self.layers {
            if spec.len == 0 {
                return Err(StoreError::EmptyLayer(spec.name.clone()));
            }
            if spec.offset != expected {
                return Err(StoreError::LayoutMismatch);
            }
            expected += spec.len;
        }
        if expected != self.dim() {
            return Err(StoreError::LayoutMismatch);
        }
        if !self.all_finite() {
            return Err(StoreError::NonFinite("parameter buffer"));
        }
        Ok(())
    }

    fn hash_layer_table(&self, hasher: &mut Sha256) {
        hasher.update((self.layers.len() as u32).to_le_bytes());
        for spec in &self.layers {
            hasher.update((spec.name.len() as u32).to_le_bytes());
            hasher.update(spec.name.as_bytes());
            hasher.update((spec.offset as u64).to_le_bytes());
            hasher.update((spec.len as u64).to_le_bytes());
        }
    }

    fn hash_data(&self, hasher: &mut Sha256) {
        let mut buf = [0u8; 8192];
        let mut used = 0usize;
        macro_rules! flush_push {
            ($bytes:expr) => {{
                let b = $bytes;
                if used + b.len() > buf.len() {
                    hasher.update(&buf[..used]);
                    used = 0;
                }
                buf[used..used + b.len()].copy_from_slice(&b);
                used += b.len();
            }};
        }
        match &self.data {
            Buffer::F32(v) => {
                for x in v {
                    flush_push!(x.to_le_bytes());
                }
            }
            Buffer::F64(v) => {
                for x in v {
                    flush_push!(x.to_le_bytes());
                }
            }
        }
        hasher.update(&buf[..used]);
    }

    /// Content digest. Depends only on the layer table, element type, and
    /// the exact bit patterns stored; the version counter is excluded.
    pub fn digest(&self) -> ParamDigest {
        let mut hasher = Sha256::new();
        self.hash_layer_table(&mut hasher);
        hasher.update([self.precision().tag()]);
        self.hash_data(&mut hasher);
        ParamDigest(hasher.finalize().into())
    }

    fn encode(&self) -> Vec<u8> {
        let elem = self.precision().tag() as usize;
        let mut bytes = Vec::with_capacity(64 + self.layers.len() * 40 + self.dim() * elem);
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        bytes.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        for spec in &self.layers {
            bytes.extend_from_slice(&(spec.name.len() as u32).to_le_bytes());
            bytes.extend_from_slice(spec.name.as_bytes());
            bytes.extend_from_slice(&(spec.offset as u64).to_le_bytes());
            bytes.extend_from_slice(&(spec.len as u64).to_le_bytes());
        }
        bytes.push(self.precision().tag());
        match &self.data {
            Buffer::F32(v) => {
                for x in v {
                    bytes.extend_from_slice(&x.to_le_bytes());
                }
            }
            Buffer::F64(v) => {
                for x in v {
                    bytes.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
        let mut hasher = Sha256::new();
        hasher.update(&bytes);
        let sum: [u8; 32] = hasher.finalize().into();
        bytes.extend_from_slice(&sum[..8]);
        bytes
    }

    /// Writes the checkpoint: magic, format version, layer table, element
    /// tag, raw little-endian data, and a trailing 64-bit checksum.
    pub fn save(&self, path: &Path) -> Result<(), StoreError> {
        std::fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, StoreError> {
        let bytes = std::fs::read(path)?;
        Self::decode(&bytes)
    }

    /// Loads and checks the total dimension against an expected value, for
    /// callers restoring into a known configuration.
    pub fn load_with_dim(path: &Path, expected_dim: usize) -> Result<Self, StoreError> {
        let store = Self::load(path)?;
        if store.dim() != expected_dim {
            return Err(StoreError::DimensionMismatch {
                expected: expected_dim,
                found: store.dim(),
            });
        }
        Ok(store)
    }

    fn decode(bytes: &[u8]) -> Result<Self, StoreError> {
        if bytes.len() < MAGIC.len() + 4 + 8 {
            return Err(StoreError::Truncated);
        }
        if &bytes[..4] != MAGIC {
            return Err(StoreError::BadMagic);
        }
        let body = &bytes[..bytes.len() - 8];
        let mut hasher = Sha256::new();
        hasher.update(body);
        let sum: [u8; 32] = hasher.finalize().into();
        if sum[..8] != bytes[bytes.len() - 8..] {
            return Err(StoreError::ChecksumMismatch);
        }

        let mut cur = Cursor { bytes: body, pos: 4 };
        let version = cur.u32()?;
        if version != FORMAT_VERSION {
            return Err(StoreError::BadFormatVersion(version));
        }
        let layer_count = cur.u32()? as usize;
        let mut layers = Vec::with_capacity(layer_count);
        for _ in 0..layer_count {
            let name_len = cur.u32()? as usize;
            let name = String::from_utf8(cur.take(name_len)?.to_vec())
                .map_err(|_| StoreError::Truncated)?;
            let offset = cur.u64()? as usize;
            let len = cur.u64()? as usize;
            layers.push(LayerSpec { name, offset, len });
        }
        let precision = Precision::from_tag(cur.u8()?)?;
        let dim: usize = layers.iter().map(|l| l.len).sum();
        let elem = precision.tag() as usize;
        let raw = cur.take(dim * elem)?;
        if cur.pos != body.len() {
            return Err(StoreError::Truncated);
        }
        let data = match precision {
            Precision::F32 => Buffer::F32(
                raw.chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            Precision::F64 => Buffer::F64(
                raw.chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
        };
        let store = ParamStore {
            layers,
            data,
            version: 0,
        };
        let mut expected = 0usize;
        for spec in &store.layers {
            if spec.len == 0 || spec.offset != expected {
                return Err(StoreError::LayoutMismatch);
            }
            expected += spec.len;
        }
        if store.layers.is_empty() {
            return Err(StoreError::EmptyLayers);
        }
        Ok(store)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], StoreError> {
        if self.pos + n > self.bytes.len() {
            return Err(StoreError::Truncated);
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8, StoreError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, StoreError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, StoreError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
