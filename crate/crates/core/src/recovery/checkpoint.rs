//! Binary parameter checkpoint, little-endian:
//!
//! ```text
//! "RADN" | version u32 | D u32 | G u32 | C0 u32 | { len u64 | len x f32 }*
//! ```
//!
//! Tensors follow declaration order (per branch: head, per block the dense
//! layers, local fusion, squeeze, excite, then global fusion and tail; each
//! layer as weight then bias).

use std::path::Path;

use super::network::{RadnHyper, RadnParams};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"RADN";
pub const VERSION: u32 = 1;

pub fn to_bytes(params: &RadnParams) -> Vec<u8> {
    let mut out = Vec::with_capacity(20 + params.param_count() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let h = params.hyper;
    for v in [h.blocks, h.growth_layers, h.channels] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for t in params.tensors() {
        out.extend_from_slice(&(t.len() as u64).to_le_bytes());
        for &v in t {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
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
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn from_bytes(buf: &[u8]) -> Result<RadnParams> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let hyper = RadnHyper {
        blocks: r.u32()? as usize,
        growth_layers: r.u32()? as usize,
        channels: r.u32()? as usize,
    };
    hyper
        .validate()
        .map_err(|e| Error::Checkpoint(format!("bad hyperparameters: {e}")))?;
    let mut params = RadnParams::zeros(hyper)?;
    for (k, t) in params.tensors_mut().into_iter().enumerate() {
        let len = r.u64()? as usize;
        if len != t.len() {
            return Err(Error::Checkpoint(format!(
                "tensor {k}: expected {} values, found {len}",
                t.len()
            )));
        }
        let bytes = r.take(len * 4)?;
        for (dst, chunk) in t.iter_mut().zip(bytes.chunks_exact(4)) {
            *dst = f32::from_le_bytes(chunk.try_into().expect("4 bytes")) as f64;
        }
    }
    if r.pos != buf.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    if !params.is_finite() {
        return Err(Error::Checkpoint("non-finite parameter".into()));
    }
    Ok(params)
}

pub fn save_checkpoint(params: &RadnParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_bytes(params)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<RadnParams> {
    let path = path.as_ref();
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_rounds_to_f32() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = RadnParams::random(RadnHyper::default(), &mut rng).unwrap();
        let bytes = to_bytes(&p);
        assert_eq!(&bytes[..4], b"RADN");
        assert_eq!(bytes[4..8], 1u32.to_le_bytes());
        assert_eq!(bytes[8..12], 3u32.to_le_bytes());
        let q = from_bytes(&bytes).unwrap();
        for (a, b) in p.flatten().iter().zip(q.flatten()) {
            assert_eq!(*a as f32 as f64, b);
        }
        assert_eq!(to_bytes(&q), bytes);
    }

    #[test]
    fn rejects_corruption() {
        let p = RadnParams::zeros(RadnHyper::default()).unwrap();
        let bytes = to_bytes(&p);
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(from_bytes(&bad), Err(Error::Checkpoint(_))));
        assert!(matches!(from_bytes(&bytes[..bytes.len() - 1]), Err(Error::Checkpoint(_))));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(from_bytes(&extra), Err(Error::Checkpoint(_))));
        let mut hyper = bytes;
        hyper[12..16].copy_from_slice(&5u32.to_le_bytes());
        assert!(matches!(from_bytes(&hyper), Err(Error::Checkpoint(_))));
    }
}
