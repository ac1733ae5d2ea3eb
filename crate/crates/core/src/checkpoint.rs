//! Single-file checkpoint container.
//!
//! Layout: the magic `BEEX`, a little-endian `u32` format version, a
//! little-endian `u64` header length, a JSON header (architecture and tensor
//! manifest), then the raw tensor payloads at the offsets the manifest gives
//! (relative to the end of the header). Real tensors are little-endian `f32`
//! or `f64`; frozen binary weights are stored transposed (`out × in`) as
//! little-endian `u64` words, each row padded to a whole word with zero bits.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::accounting::{SizeEntry, SizeLedger};
use crate::compute::{PackedMatrix, Tensor};
use crate::error::{Error, Result};
use crate::frozen::{FrozenModel, FrozenTensor};
use crate::model::{BeexModel, ModelConfig};
use crate::params::{ParamKind, ParamStore};

pub const MAGIC: &[u8; 4] = b"BEEX";
pub const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointKind {
    Latent,
    Frozen,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dtype {
    #[default]
    F32,
    F64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Encoding {
    F32,
    F64,
    /// Transposed bit matrix, `u64` words.
    PackedBits,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub kind: ParamKind,
    /// Logical `[rows, cols]` of the weight as used by the model.
    pub shape: [usize; 2],
    pub encoding: Encoding,
    pub offset: u64,
    pub nbytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub kind: CheckpointKind,
    pub config: ModelConfig,
    pub tensors: Vec<TensorEntry>,
}

impl Header {
    pub fn payload_bytes(&self) -> u64 {
        self.tensors.iter().map(|t| t.nbytes).sum()
    }

    /// Ideal per-tensor bit costs for this architecture.
    pub fn size_ledger(&self) -> SizeLedger {
        SizeLedger {
            entries: self
                .tensors
                .iter()
                .map(|t| SizeEntry::new(&t.name, t.kind, (t.shape[0] * t.shape[1]) as u64))
                .collect(),
        }
    }
}

#[derive(Debug)]
pub enum Checkpoint {
    Latent(BeexModel),
    Frozen(FrozenModel),
}

impl Checkpoint {
    pub fn config(&self) -> &ModelConfig {
        match self {
            Checkpoint::Latent(m) => &m.config,
            Checkpoint::Frozen(m) => &m.config,
        }
    }

    /// The frozen form, freezing a latent checkpoint on the fly.
    pub fn into_frozen(self) -> FrozenModel {
        match self {
            Checkpoint::Latent(m) => FrozenModel::from_model(&m),
            Checkpoint::Frozen(f) => f,
        }
    }
}

enum Payload<'a> {
    Real(&'a Tensor, Dtype),
    Bits(&'a PackedMatrix),
}

impl Payload<'_> {
    fn nbytes(&self) -> u64 {
        match self {
            Payload::Real(t, Dtype::F32) => 4 * t.numel() as u64,
            Payload::Real(t, Dtype::F64) => 8 * t.numel() as u64,
            Payload::Bits(p) => p.payload_bytes() as u64,
        }
    }

    fn encoding(&self) -> Encoding {
        match self {
            Payload::Real(_, Dtype::F32) => Encoding::F32,
            Payload::Real(_, Dtype::F64) => Encoding::F64,
            Payload::Bits(_) => Encoding::PackedBits,
        }
    }

    fn write(&self, w: &mut impl Write) -> Result<()> {
        match self {
            Payload::Real(t, Dtype::F32) => {
                for &v in t.data() {
                    w.write_all(&(v as f32).to_le_bytes())?;
                }
            }
            Payload::Real(t, Dtype::F64) => {
                for &v in t.data() {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
            Payload::Bits(p) => {
                for &word in p.words() {
                    w.write_all(&word.to_le_bytes())?;
                }
            }
        }
        Ok(())
    }
}

fn write_container(
    mut w: impl Write,
    kind: CheckpointKind,
    config: &ModelConfig,
    items: Vec<(&str, ParamKind, [usize; 2], Payload<'_>)>,
) -> Result<()> {
    let mut offset = 0;
    let tensors = items
        .iter()
        .map(|(name, k, shape, p)| {
            let e = TensorEntry {
                name: name.to_string(),
                kind: *k,
                shape: *shape,
                encoding: p.encoding(),
                offset,
                nbytes: p.nbytes(),
            };
            offset += e.nbytes;
            e
        })
        .collect();
    let header = serde_json::to_vec(&Header {
        kind,
        config: config.clone(),
        tensors,
    })?;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(header.len() as u64).to_le_bytes())?;
    w.write_all(&header)?;
    for (.., p) in &items {
        p.write(&mut w)?;
    }
    w.flush()?;
    Ok(())
}

fn shape2(t: &Tensor) -> [usize; 2] {
    [t.rows(), t.cols()]
}

pub fn write_latent(model: &BeexModel, w: impl Write, dtype: Dtype) -> Result<()> {
    let items = model
        .params
        .iter()
        .map(|(_, p)| {
            (
                p.name.as_str(),
                p.kind,
                shape2(&p.value),
                Payload::Real(&p.value, dtype),
            )
        })
        .collect();
    write_container(w, CheckpointKind::Latent, &model.config, items)
}

pub fn write_frozen(model: &FrozenModel, w: impl Write) -> Result<()> {
    let items = model
        .tensors()
        .map(|(name, t)| {
            let p = match t {
                FrozenTensor::Binary(p) => Payload::Bits(p),
                FrozenTensor::Full(t) => Payload::Real(t, Dtype::F32),
            };
            (name, t.kind(), t.shape(), p)
        })
        .collect();
    write_container(w, CheckpointKind::Frozen, &model.config, items)
}

pub fn save_latent(model: &BeexModel, path: impl AsRef<Path>, dtype: Dtype) -> Result<()> {
    write_latent(model, BufWriter::new(File::create(path)?), dtype)
}

pub fn save_frozen(model: &FrozenModel, path: impl AsRef<Path>) -> Result<()> {
    write_frozen(model, BufWriter::new(File::create(path)?))
}

fn read_exact_or_format(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => {
            Error::Format(format!("truncated checkpoint ({what})"))
        }
        _ => Error::Io(e),
    })
}

pub fn read_header(r: &mut impl Read) -> Result<Header> {
    let mut pre = [0u8; 16];
    read_exact_or_format(r, &mut pre, "preamble")?;
    if &pre[..4] != MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = u32::from_le_bytes(pre[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let len = u64::from_le_bytes(pre[8..16].try_into().unwrap());
    if len > 1 << 30 {
        return Err(Error::Format(format!("implausible header length {len}")));
    }
    let mut buf = vec![0u8; len as usize];
    read_exact_or_format(r, &mut buf, "header")?;
    let header: Header =
        serde_json::from_slice(&buf).map_err(|e| Error::Format(format!("bad header: {e}")))?;
    let mut expect = 0;
    for t in &header.tensors {
        if t.offset != expect {
            return Err(Error::Format(format!(
                "tensor `{}` at unexpected offset",
                t.name
            )));
        }
        expect += t.nbytes;
    }
    Ok(header)
}

/// Total bytes the container occupies for a given header.
pub fn container_bytes(header: &Header) -> Result<u64> {
    Ok(16 + serde_json::to_vec(header)?.len() as u64 + header.payload_bytes())
}

fn read_tensor(r: &mut impl Read, e: &TensorEntry) -> Result<FrozenTensor> {
    let [rows, cols] = e.shape;
    let mut buf = vec![0u8; e.nbytes as usize];
    read_exact_or_format(r, &mut buf, &e.name)?;
    let bad = || Error::Format(format!("tensor `{}`: payload size mismatch", e.name));
    match e.encoding {
        Encoding::F32 | Encoding::F64 => {
            let width = if e.encoding == Encoding::F32 { 4 } else { 8 };
            if buf.len() != rows * cols * width {
                return Err(bad());
            }
            let data = buf
                .chunks_exact(width)
                .map(|c| match width {
                    4 => f32::from_le_bytes(c.try_into().unwrap()) as f64,
                    _ => f64::from_le_bytes(c.try_into().unwrap()),
                })
                .collect();
            Ok(FrozenTensor::Full(Tensor::matrix(rows, cols, data)?))
        }
        Encoding::PackedBits => {
            if !buf.len().is_multiple_of(8) {
                return Err(bad());
            }
            let words = buf
                .chunks_exact(8)
                .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let packed = PackedMatrix::from_words(cols, rows, words)
                .map_err(|err| Error::Format(format!("tensor `{}`: {err}", e.name)))?;
            Ok(FrozenTensor::Binary(packed))
        }
    }
}

pub fn read_checkpoint(mut r: impl Read) -> Result<Checkpoint> {
    let header = read_header(&mut r)?;
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for e in &header.tensors {
        tensors.push((e, read_tensor(&mut r, e)?));
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::Format("trailing bytes after last tensor".into()));
    }
    match header.kind {
        CheckpointKind::Latent => {
            let mut store = ParamStore::default();
            for (e, t) in tensors {
                match t {
                    FrozenTensor::Full(t) => store.add(e.name.clone(), e.kind, t),
                    FrozenTensor::Binary(_) => {
                        return Err(Error::Format(format!(
                            "latent checkpoint holds packed tensor `{}`",
                            e.name
                        )))
                    }
                };
            }
            Ok(Checkpoint::Latent(BeexModel::from_store(
                header.config,
                store,
            )?))
        }
        CheckpointKind::Frozen => {
            let entries = tensors
                .into_iter()
                .map(|(e, t)| (e.name.clone(), t))
                .collect();
            Ok(Checkpoint::Frozen(FrozenModel::from_parts(
                header.config,
                entries,
            )?))
        }
    }
}

pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
    read_checkpoint(BufReader::new(File::open(path)?))
}

pub fn load_header(path: impl AsRef<Path>) -> Result<Header> {
    read_header(&mut BufReader::new(File::open(path)?))
}

/// Size ledger of a checkpoint on disk, checked against the file length.
pub fn measure_size(path: impl AsRef<Path>) -> Result<(Header, SizeLedger)> {
    let path = path.as_ref();
    let header = load_header(path)?;
    let on_disk = std::fs::metadata(path)?.len();
    let expected = container_bytes(&header)?;
    if on_disk != expected {
        return Err(Error::Format(format!(
            "checkpoint is {on_disk} bytes, manifest accounts for {expected}"
        )));
    }
    let ledger = header.size_ledger();
    Ok((header, ledger))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model() -> BeexModel {
        let cfg = ModelConfig {
            vocab_size: 12,
            max_len: 6,
            embed_dim: 8,
            heads: 2,
            hidden_dim: 10,
            blocks: 2,
            num_classes: 3,
            ..ModelConfig::default()
        };
        BeexModel::new(cfg, &mut ChaCha8Rng::seed_from_u64(11)).unwrap()
    }

    fn bytes_latent(m: &BeexModel, dtype: Dtype) -> Vec<u8> {
        let mut buf = Vec::new();
        write_latent(m, &mut buf, dtype).unwrap();
        buf
    }

    #[test]
    fn latent_f64_round_trip_is_lossless() {
        let m = model();
        let buf = bytes_latent(&m, Dtype::F64);
        match read_checkpoint(buf.as_slice()).unwrap() {
            Checkpoint::Latent(back) => assert_eq!(back, m),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn reserialization_is_bit_identical() {
        let m = model();
        for dtype in [Dtype::F32, Dtype::F64] {
            let buf = bytes_latent(&m, dtype);
            let Checkpoint::Latent(back) = read_checkpoint(buf.as_slice()).unwrap() else {
                panic!()
            };
            assert_eq!(bytes_latent(&back, dtype), buf);
        }
        let frozen = FrozenModel::from_model(&m);
        let mut a = Vec::new();
        write_frozen(&frozen, &mut a).unwrap();
        let back = read_checkpoint(a.as_slice()).unwrap().into_frozen();
        let mut b = Vec::new();
        write_frozen(&back, &mut b).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn container_length_matches_manifest() {
        let m = model();
        let buf = bytes_latent(&m, Dtype::F32);
        let header = read_header(&mut buf.as_slice()).unwrap();
        assert_eq!(container_bytes(&header).unwrap(), buf.len() as u64);
        assert_eq!(header.kind, CheckpointKind::Latent);
    }

    #[test]
    fn corrupt_files_are_format_errors() {
        let m = model();
        let buf = bytes_latent(&m, Dtype::F32);
        let mut bad_magic = buf.clone();
        bad_magic[0] = b'X';
        assert!(matches!(
            read_checkpoint(bad_magic.as_slice()),
            Err(Error::Format(_))
        ));
        assert!(matches!(
            read_checkpoint(&buf[..buf.len() - 3]),
            Err(Error::Format(_))
        ));
        let mut extra = buf.clone();
        extra.push(0);
        assert!(matches!(
            read_checkpoint(extra.as_slice()),
            Err(Error::Format(_))
        ));
        assert!(matches!(read_checkpoint(&b"BE"[..]), Err(Error::Format(_))));
    }

    #[test]
    fn nonzero_pad_bits_are_rejected() {
        let frozen = FrozenModel::from_model(&model());
        let mut buf = Vec::new();
        write_frozen(&frozen, &mut buf).unwrap();
        let header = read_header(&mut buf.as_slice()).unwrap();
        let start = buf.len() as u64 - header.payload_bytes();
        // first packed tensor: w_q transposed is 8 × 16, one word per row with 48 pad bits
        let e = header
            .tensors
            .iter()
            .find(|t| t.encoding == Encoding::PackedBits)
            .unwrap();
        let at = (start + e.offset + 7) as usize;
        buf[at] |= 0x80;
        assert!(matches!(
            read_checkpoint(buf.as_slice()),
            Err(Error::Format(_))
        ));
    }
}
