//! Versioned binary container of named tensors.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "BTXC" | version u32 | kind str | config str | epoch u64
//! | rng-state bytes (u32 length, 0 = absent) | tensor count u32
//! | per tensor: name str | rank u32 | dims u64 x rank | f64 bits x numel
//! ```
//!
//! Strings are a u32 byte length followed by UTF-8.

use std::io::{self, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::nn::ParamStore;
use crate::rng::RngState;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"BTXC";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("not a checkpoint (bad magic)")]
    Magic,
    #[error("checkpoint format version {found}, expected {expected}")]
    Version { found: u32, expected: u32 },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("expected a `{expected}` checkpoint, found `{found}`")]
    Kind { found: String, expected: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// What the tensors belong to, e.g. `nmt` or `gan`.
    pub kind: String,
    /// Run configuration echo.
    pub config: String,
    pub epoch: u64,
    pub rng: Option<RngState>,
    pub params: ParamStore,
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| CheckpointError::Corrupt(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn str(&mut self) -> Result<String, CheckpointError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| CheckpointError::Corrupt("invalid UTF-8".into()))
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + 8 * self.params.num_values());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_str(&mut out, &self.kind);
        put_str(&mut out, &self.config);
        out.extend_from_slice(&self.epoch.to_le_bytes());
        let rng = self.rng.as_ref().map(RngState::to_bytes).unwrap_or_default();
        out.extend_from_slice(&(rng.len() as u32).to_le_bytes());
        out.extend_from_slice(&rng);
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, t) in self.params.iter() {
            put_str(&mut out, name);
            out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_bits().to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self, CheckpointError> {
        let mut c = Cursor { buf, pos: 0 };
        if c.take(4).map_err(|_| CheckpointError::Magic)? != MAGIC {
            return Err(CheckpointError::Magic);
        }
        let version = c.u32()?;
        if version != VERSION {
            return Err(CheckpointError::Version {
                found: version,
                expected: VERSION,
            });
        }
        let kind = c.str()?;
        let config = c.str()?;
        let epoch = c.u64()?;
        let rng_len = c.u32()? as usize;
        let rng = match rng_len {
            0 => None,
            n => Some(RngState::from_bytes(c.take(n)?).ok_or_else(|| CheckpointError::Corrupt("bad RNG state".into()))?),
        };
        let count = c.u32()?;
        let mut params = ParamStore::new();
        for _ in 0..count {
            let name = c.str()?;
            let rank = c.u32()? as usize;
            let shape = (0..rank).map(|_| c.u64().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
            let n = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .filter(|&n| n.checked_mul(8).is_some_and(|b| b <= buf.len()))
                .ok_or_else(|| CheckpointError::Corrupt(format!("implausible shape {shape:?} for `{name}`")))?;
            let data = c
                .take(8 * n)?
                .chunks_exact(8)
                .map(|b| f64::from_bits(u64::from_le_bytes(b.try_into().unwrap())))
                .collect();
            let t = Tensor::new(shape, data).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
            if params.get(&name).is_some() {
                return Err(CheckpointError::Corrupt(format!("duplicate tensor `{name}`")));
            }
            params.insert(name, t);
        }
        if c.pos != buf.len() {
            return Err(CheckpointError::Corrupt("trailing bytes".into()));
        }
        Ok(Checkpoint {
            kind,
            config,
            epoch,
            rng,
            params,
        })
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(&self.to_bytes())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, CheckpointError> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        Checkpoint::from_bytes(&buf)
    }

    pub fn save(&self, path: &Path) -> io::Result<()> {
        std::fs::write(path, self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Checkpoint::from_bytes(&std::fs::read(path)?)
    }

    /// Load and require a given kind.
    pub fn load_kind(path: &Path, kind: &str) -> Result<Self, CheckpointError> {
        let c = Checkpoint::load(path)?;
        if c.kind != kind {
            return Err(CheckpointError::Kind {
                found: c.kind,
                expected: kind.to_owned(),
            });
        }
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use proptest::prelude::*;

    fn sample() -> Checkpoint {
        let mut p = ParamStore::new();
        p.insert("a", Tensor::new(vec![2, 2], vec![1.5, -0.0, f64::MIN_POSITIVE, 1e300]).unwrap());
        p.insert("b.c", Tensor::scalar(f64::NAN));
        Checkpoint {
            kind: "nmt".into(),
            config: "{\"seed\":1}".into(),
            epoch: 7,
            rng: Some(RngState::capture(&seeded(3))),
            params: p,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let c = sample();
        let back = Checkpoint::from_bytes(&c.to_bytes()).unwrap();
        assert!(back.params.bit_eq(&c.params));
        assert_eq!((back.kind, back.config, back.epoch, back.rng), (c.kind, c.config, c.epoch, c.rng));
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let mut b = sample().to_bytes();
        b[4..8].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(
            Checkpoint::from_bytes(&b),
            Err(CheckpointError::Version { found: 2, expected: 1 })
        ));
    }

    #[test]
    fn damage_is_detected() {
        let b = sample().to_bytes();
        assert!(matches!(Checkpoint::from_bytes(b"nope"), Err(CheckpointError::Magic)));
        assert!(Checkpoint::from_bytes(&b[..b.len() - 3]).is_err());
        let mut extra = b.clone();
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
    }

    #[test]
    fn kind_is_checked_on_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ckpt");
        sample().save(&path).unwrap();
        assert!(Checkpoint::load_kind(&path, "nmt").is_ok());
        assert!(matches!(Checkpoint::load_kind(&path, "gan"), Err(CheckpointError::Kind { .. })));
    }

    proptest! {
        #[test]
        fn arbitrary_tensors_round_trip(
            vals in proptest::collection::vec(any::<u64>(), 1..40),
            epoch in any::<u64>(),
        ) {
            let data: Vec<f64> = vals.iter().map(|&b| f64::from_bits(b)).collect();
            let mut p = ParamStore::new();
            p.insert("t", Tensor::new(vec![data.len()], data).unwrap());
            let c = Checkpoint { kind: "gan".into(), config: String::new(), epoch, rng: None, params: p };
            let back = Checkpoint::from_bytes(&c.to_bytes()).unwrap();
            prop_assert!(back.params.bit_eq(&c.params));
            prop_assert_eq!(back.epoch, epoch);
        }
    }
}
