//! NMRD v1 binary container.
//!
//! Layout (little-endian): `NMRD`, u32 version, u32 record count, then per
//! record u16 name length, UTF-8 name, u8 dtype (0 = f32, 1 = f64), u8 ndim,
//! ndim x u64 dims and the row-major payload. A u64 byte length and a UTF-8
//! JSON metadata block close the file.

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use serde_json::Value;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const MAGIC: &[u8; 4] = b"NMRD";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    fn code(self) -> u8 {
        match self {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
        }
    }

    fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub name: String,
    pub dtype: Dtype,
    pub tensor: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub records: Vec<Record>,
    pub metadata: Value,
}

impl Default for Container {
    fn default() -> Self {
        Self {
            records: Vec::new(),
            metadata: Value::Object(Default::default()),
        }
    }
}

impl Container {
    pub fn new(metadata: Value) -> Self {
        Self {
            records: Vec::new(),
            metadata,
        }
    }

    pub fn push(&mut self, name: impl Into<String>, dtype: Dtype, tensor: Tensor) {
        self.records.push(Record {
            name: name.into(),
            dtype,
            tensor,
        });
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.records.iter().find(|r| r.name == name).map(|r| &r.tensor)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .ok_or_else(|| Error::Format(format!("missing record {name:?}")))
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        let count = u32::try_from(self.records.len())
            .map_err(|_| Error::invalid("too many records"))?;
        buf.extend_from_slice(&count.to_le_bytes());
        for r in &self.records {
            let name = r.name.as_bytes();
            let len = u16::try_from(name.len())
                .map_err(|_| Error::invalid(format!("record name too long: {}", r.name)))?;
            let ndim = u8::try_from(r.tensor.ndim())
                .map_err(|_| Error::invalid("too many dimensions"))?;
            buf.extend_from_slice(&len.to_le_bytes());
            buf.extend_from_slice(name);
            buf.push(r.dtype.code());
            buf.push(ndim);
            for &d in r.tensor.shape() {
                buf.extend_from_slice(&(d as u64).to_le_bytes());
            }
            match r.dtype {
                Dtype::F32 => r
                    .tensor
                    .data()
                    .iter()
                    .for_each(|&v| buf.extend_from_slice(&(v as f32).to_le_bytes())),
                Dtype::F64 => r
                    .tensor
                    .data()
                    .iter()
                    .for_each(|&v| buf.extend_from_slice(&v.to_le_bytes())),
            }
            w.write_all(&buf).map_err(io_err)?;
            buf.clear();
        }
        let meta = serde_json::to_vec(&self.metadata).map_err(|e| Error::Format(e.to_string()))?;
        buf.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        buf.extend_from_slice(&meta);
        w.write_all(&buf).map_err(io_err)?;
        w.flush().map_err(io_err)
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format(format!("bad magic {magic:?}")));
        }
        let version = u32::from_le_bytes(read_array(&mut r)?);
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let count = u32::from_le_bytes(read_array(&mut r)?);
        let mut records = Vec::new();
        for _ in 0..count {
            let len = u16::from_le_bytes(read_array(&mut r)?) as usize;
            let mut name = vec![0u8; len];
            read_exact(&mut r, &mut name)?;
            let name = String::from_utf8(name).map_err(|_| Error::Format("record name is not UTF-8".into()))?;
            let [code, ndim] = read_array::<2, _>(&mut r)?;
            let dtype = match code {
                0 => Dtype::F32,
                1 => Dtype::F64,
                c => return Err(Error::Format(format!("unknown dtype {c} in {name:?}"))),
            };
            let mut shape = Vec::with_capacity(ndim as usize);
            for _ in 0..ndim {
                let d = u64::from_le_bytes(read_array(&mut r)?);
                shape.push(usize::try_from(d).map_err(|_| overflow(&name))?);
            }
            let bytes = shape
                .iter()
                .try_fold(dtype.width(), |acc, &d| acc.checked_mul(d))
                .filter(|&b| b <= isize::MAX as usize)
                .ok_or_else(|| overflow(&name))?;
            let mut payload = Vec::new();
            (&mut r)
                .take(bytes as u64)
                .read_to_end(&mut payload)
                .map_err(io_err)?;
            if payload.len() != bytes {
                return Err(Error::Format(format!("truncated payload in {name:?}")));
            }
            let data: Vec<f64> = match dtype {
                Dtype::F32 => payload
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                    .collect(),
                Dtype::F64 => payload
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            };
            let tensor = Tensor::new(shape, data).map_err(|e| Error::Format(e.to_string()))?;
            records.push(Record { name, dtype, tensor });
        }
        let meta_len = u64::from_le_bytes(read_array(&mut r)?);
        let mut meta = Vec::new();
        (&mut r).take(meta_len).read_to_end(&mut meta).map_err(io_err)?;
        if meta.len() as u64 != meta_len {
            return Err(Error::Format("truncated metadata".into()));
        }
        let metadata = serde_json::from_slice(&meta).map_err(|e| Error::Format(format!("metadata: {e}")))?;
        Ok(Self { records, metadata })
    }
}

fn overflow(name: &str) -> Error {
    Error::Format(format!("dimension overflow in {name:?}"))
}

fn io_err(e: std::io::Error) -> Error {
    Error::Io {
        path: "<stream>".into(),
        source: e,
    }
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        ErrorKind::UnexpectedEof => Error::Format("truncated file".into()),
        _ => io_err(e),
    })
}

fn read_array<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    read_exact(r, &mut b)?;
    Ok(b)
}

fn with_path(path: &Path, e: Error) -> Error {
    match e {
        Error::Io { source, .. } => Error::Io {
            path: path.to_path_buf(),
            source,
        },
        other => other,
    }
}

pub fn save_container(path: impl AsRef<Path>, container: &Container) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    container
        .write_to(BufWriter::new(file))
        .map_err(|e| with_path(path, e))
}

pub fn load_container(path: impl AsRef<Path>) -> Result<Container> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Container::read_from(BufReader::new(file)).map_err(|e| with_path(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use serde_json::json;

    fn bytes(c: &Container) -> Vec<u8> {
        let mut v = Vec::new();
        c.write_to(&mut v).unwrap();
        v
    }

    #[test]
    fn empty_record_list_is_valid() {
        let c = Container::default();
        let b = bytes(&c);
        assert_eq!(&b[..4], b"NMRD");
        assert_eq!(b.len(), 4 + 4 + 4 + 8 + 2);
        assert_eq!(Container::read_from(&b[..]).unwrap(), c);
    }

    #[test]
    fn exact_byte_layout() {
        let mut c = Container::new(json!({}));
        c.push("ab", Dtype::F32, Tensor::from_vec(vec![1.0, -2.0]));
        let b = bytes(&c);
        let mut want = b"NMRD".to_vec();
        want.extend(1u32.to_le_bytes());
        want.extend(1u32.to_le_bytes());
        want.extend(2u16.to_le_bytes());
        want.extend(b"ab");
        want.extend([0u8, 1u8]);
        want.extend(2u64.to_le_bytes());
        want.extend(1.0f32.to_le_bytes());
        want.extend((-2.0f32).to_le_bytes());
        want.extend(2u64.to_le_bytes());
        want.extend(b"{}");
        assert_eq!(b, want);
    }

    #[test]
    fn bad_magic_and_version() {
        let mut b = bytes(&Container::default());
        b[0] = b'X';
        assert!(matches!(Container::read_from(&b[..]), Err(Error::Format(m)) if m.contains("magic")));
        let mut b = bytes(&Container::default());
        b[4] = 2;
        assert!(matches!(Container::read_from(&b[..]), Err(Error::Format(m)) if m.contains("version")));
    }

    #[test]
    fn truncation_detected_at_every_cut() {
        let mut c = Container::new(json!({"k": [1, 2]}));
        c.push("w", Dtype::F64, Tensor::from_fn(&[2, 3], |i| i as f64));
        let b = bytes(&c);
        for cut in 0..b.len() {
            assert!(matches!(Container::read_from(&b[..cut]), Err(Error::Format(_))), "cut {cut}");
        }
    }

    #[test]
    fn dimension_overflow_rejected() {
        let mut b = b"NMRD".to_vec();
        b.extend(1u32.to_le_bytes());
        b.extend(1u32.to_le_bytes());
        b.extend(1u16.to_le_bytes());
        b.push(b'x');
        b.extend([1u8, 2u8]);
        b.extend(u64::MAX.to_le_bytes());
        b.extend(4u64.to_le_bytes());
        assert!(matches!(Container::read_from(&b[..]), Err(Error::Format(m)) if m.contains("overflow")));
    }

    #[test]
    fn file_round_trip_and_missing_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.nmrd");
        let mut c = Container::new(json!({"solver": "burgers"}));
        c.push("x", Dtype::F64, Tensor::from_fn(&[4], |i| i as f64 / 3.0));
        save_container(&p, &c).unwrap();
        assert_eq!(load_container(&p).unwrap(), c);
        let e = load_container(dir.path().join("nope")).unwrap_err();
        assert!(matches!(e, Error::Io { ref path, .. } if path.ends_with("nope")));
    }

    proptest! {
        #[test]
        fn round_trip_is_bitwise(
            rows in 1usize..6,
            cols in 1usize..6,
            seed in any::<u64>(),
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let wide = Tensor::from_fn(&[rows, cols], |_| f64::from_bits(rng.gen::<u64>() & !(0x7ff << 52)));
            let narrow = Tensor::from_fn(&[cols], |_| (rng.gen::<f32>() * 1e3) as f64);
            let mut c = Container::new(json!({"seed": seed}));
            c.push("wide", Dtype::F64, wide);
            c.push("narrow", Dtype::F32, narrow);
            let back = Container::read_from(&bytes(&c)[..]).unwrap();
            for (a, b) in c.records.iter().zip(&back.records) {
                prop_assert_eq!(a.tensor.shape(), b.tensor.shape());
                for (x, y) in a.tensor.data().iter().zip(b.tensor.data()) {
                    prop_assert_eq!(x.to_bits(), y.to_bits());
                }
            }
            prop_assert_eq!(back.metadata, c.metadata);
        }
    }
}
