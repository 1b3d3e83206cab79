//! Versioned binary checkpoints.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! "GRLQ"            magic, 4 bytes
//! version           u16
//! kind              u8   (1 = tabular, 2 = neural)
//! header_len        u32
//! header            JSON: encoding, shapes and counters
//! body              tabular: per entry u16 key_len, key_len × u16, 2 × f64 q, 2 × u64 visits
//!                   neural:  params, target, adam m, adam v (f64 each)
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::approx::features::Encoding;
use crate::approx::neural::{Adam, Mlp, NeuralConfig, NeuralQ};
use crate::approx::tabular::{Bins, Entry, TabularQ};
use crate::approx::Approximator;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"GRLQ";
pub const VERSION: u16 = 1;
const KIND_TABULAR: u8 = 1;
const KIND_NEURAL: u8 = 2;

#[derive(Serialize, Deserialize)]
struct TabularHeader {
    encoding: Encoding,
    bins: Bins,
    entries: u64,
}

#[derive(Serialize, Deserialize)]
struct NeuralHeader {
    encoding: Encoding,
    config: NeuralConfig,
    sizes: Vec<usize>,
    updates: u64,
    adam_t: u64,
}

pub fn to_bytes(approx: &Approximator) -> Result<Vec<u8>> {
    let (kind, header, body) = match approx {
        Approximator::Tabular(t) => {
            let header = serde_json::to_vec(&TabularHeader {
                encoding: t.encoding.clone(),
                bins: t.bins,
                entries: t.len() as u64,
            })?;
            let mut body = Vec::new();
            for (key, e) in t.sorted_entries() {
                body.extend_from_slice(&(key.len() as u16).to_le_bytes());
                for k in key {
                    body.extend_from_slice(&k.to_le_bytes());
                }
                for q in e.q {
                    body.extend_from_slice(&q.to_le_bytes());
                }
                for v in e.visits {
                    body.extend_from_slice(&v.to_le_bytes());
                }
            }
            (KIND_TABULAR, header, body)
        }
        Approximator::Neural(n) => {
            let header = serde_json::to_vec(&NeuralHeader {
                encoding: n.encoding.clone(),
                config: n.config.clone(),
                sizes: n.net.sizes.clone(),
                updates: n.updates,
                adam_t: n.adam.t,
            })?;
            let mut body = Vec::with_capacity(n.net.params.len() * 32);
            for block in [&n.net.params, &n.target, &n.adam.m, &n.adam.v] {
                for x in block.iter() {
                    body.extend_from_slice(&x.to_le_bytes());
                }
            }
            (KIND_NEURAL, header, body)
        }
    };
    let mut out = Vec::with_capacity(11 + header.len() + body.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(kind);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&body);
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| {
                Error::Checkpoint(format!(
                    "truncated: needed {n} bytes at offset {}",
                    self.pos
                ))
            })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(
            self.take(2)?.try_into().expect("2 bytes"),
        ))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
}

/// Which approximator a checkpoint holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Tabular,
    Neural,
}

pub fn from_bytes(buf: &[u8], expect: Option<Kind>) -> Result<Approximator> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic bytes".into()));
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {version}, expected {VERSION}"
        )));
    }
    let kind = match r.u8()? {
        KIND_TABULAR => Kind::Tabular,
        KIND_NEURAL => Kind::Neural,
        k => return Err(Error::Checkpoint(format!("unknown approximator kind {k}"))),
    };
    if let Some(e) = expect {
        if e != kind {
            return Err(Error::Checkpoint(format!(
                "file holds a {kind:?} approximator, expected {e:?}"
            )));
        }
    }
    let header_len = r.u32()? as usize;
    let header = r.take(header_len)?;
    let bad_header = |e: serde_json::Error| Error::Checkpoint(format!("bad header: {e}"));
    let approx = match kind {
        Kind::Tabular => {
            let h: TabularHeader = serde_json::from_slice(header).map_err(bad_header)?;
            let mut t =
                TabularQ::new(h.encoding, h.bins).map_err(|e| Error::Checkpoint(e.to_string()))?;
            for _ in 0..h.entries {
                let len = r.u16()? as usize;
                let key: Vec<u16> = (0..len).map(|_| r.u16()).collect::<Result<_>>()?;
                let q = [r.f64()?, r.f64()?];
                let visits = [r.u64()?, r.u64()?];
                t.insert(key.into_boxed_slice(), Entry { q, visits });
            }
            Approximator::Tabular(t)
        }
        Kind::Neural => {
            let h: NeuralHeader = serde_json::from_slice(header).map_err(bad_header)?;
            if h.sizes.len() < 2
                || h.sizes[0] != h.encoding.input_len()
                || h.sizes.last() != Some(&2)
            {
                return Err(Error::Checkpoint(format!(
                    "inconsistent layer sizes {:?}",
                    h.sizes
                )));
            }
            let n = Mlp::param_count(&h.sizes);
            let params = r.f64s(n)?;
            let target = r.f64s(n)?;
            let m = r.f64s(n)?;
            let v = r.f64s(n)?;
            let mut q = NeuralQ::from_parts(
                h.encoding,
                h.config,
                Mlp {
                    sizes: h.sizes,
                    params,
                },
            );
            q.target = target;
            q.adam = Adam { m, v, t: h.adam_t };
            q.updates = h.updates;
            Approximator::Neural(q)
        }
    };
    if r.pos != buf.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes",
            buf.len() - r.pos
        )));
    }
    Ok(approx)
}

pub fn save_checkpoint(approx: &Approximator, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(approx)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path, expect: Option<Kind>) -> Result<Approximator> {
    let buf =
        std::fs::read(path).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    from_bytes(&buf, expect)
}
