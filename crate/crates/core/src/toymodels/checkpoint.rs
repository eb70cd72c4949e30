//! Flat binary model container.
//!
//! ```text
//! magic      4 bytes   "PFA1"
//! paradigm   u8        1 = AR, 2 = FM, 3 = MGM
//! arrays     u32 LE    number of parameter arrays
//! per array: rank u32 LE, then `rank` u32 LE axis lengths
//! payload    f64 LE    every array's values, row-major, in table order
//! ```

use std::path::Path;

use super::{Paradigm, ToyArModel, ToyFmModel, ToyMgmModel, ToyModel};
use crate::error::{Error, Result};
use crate::numerics::DenseArray;

pub const MAGIC: &[u8; 4] = b"PFA1";
const MAX_ARRAYS: u32 = 16;
const MAX_RANK: u32 = 4;

fn tag(p: Paradigm) -> u8 {
    match p {
        Paradigm::Ar => 1,
        Paradigm::Fm => 2,
        Paradigm::Mgm => 3,
    }
}

pub fn encode(model: &ToyModel) -> Vec<u8> {
    let params = model.params();
    let values: usize = params.iter().map(DenseArray::len).sum();
    let mut out = Vec::with_capacity(16 + 8 * values);
    out.extend_from_slice(MAGIC);
    out.push(tag(model.paradigm()));
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for p in params {
        out.extend_from_slice(&(p.shape().len() as u32).to_le_bytes());
        for &d in p.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
    }
    for p in params {
        for v in p.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated while reading {what}")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn decode(bytes: &[u8]) -> Result<ToyModel> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let paradigm = match r.take(1, "paradigm tag")?[0] {
        1 => Paradigm::Ar,
        2 => Paradigm::Fm,
        3 => Paradigm::Mgm,
        t => return Err(Error::Checkpoint(format!("unknown paradigm tag {t}"))),
    };
    let n = r.u32("array count")?;
    if n == 0 || n > MAX_ARRAYS {
        return Err(Error::Checkpoint(format!("array count {n} out of range")));
    }
    let mut shapes = Vec::with_capacity(n as usize);
    let mut total: usize = 0;
    for i in 0..n {
        let rank = r.u32("rank")?;
        if rank == 0 || rank > MAX_RANK {
            return Err(Error::Checkpoint(format!("array {i}: rank {rank} out of range")));
        }
        let mut shape = Vec::with_capacity(rank as usize);
        let mut len: usize = 1;
        for _ in 0..rank {
            let d = r.u32("axis length")? as usize;
            len = len
                .checked_mul(d)
                .ok_or_else(|| Error::Checkpoint(format!("array {i}: size overflow")))?;
            shape.push(d);
        }
        total = total
            .checked_add(len)
            .ok_or_else(|| Error::Checkpoint("size overflow".into()))?;
        shapes.push(shape);
    }
    let remaining = bytes.len() - r.pos;
    if total.checked_mul(8) != Some(remaining) {
        return Err(Error::Checkpoint(format!(
            "shape table needs {total} values, payload has {remaining} bytes"
        )));
    }
    let mut params = Vec::with_capacity(shapes.len());
    for (i, shape) in shapes.into_iter().enumerate() {
        let len: usize = shape.iter().product();
        let raw = r.take(len * 8, "payload")?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let arr = DenseArray::new(shape, data)
            .map_err(|e| Error::Checkpoint(format!("array {i}: {e}")))?;
        params.push(arr);
    }
    Ok(match paradigm {
        Paradigm::Ar => ToyModel::Ar(ToyArModel::from_params(params)?),
        Paradigm::Fm => ToyModel::Fm(ToyFmModel::from_params(params)?),
        Paradigm::Mgm => ToyModel::Mgm(ToyMgmModel::from_params(params)?),
    })
}

pub fn save(model: &ToyModel, path: &Path) -> Result<()> {
    std::fs::write(path, encode(model)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<ToyModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngStream;
    use crate::toymodels::ToyDims;

    fn models() -> Vec<ToyModel> {
        let dims = ToyDims::default();
        let mut rng = RngStream::new(1, 0);
        vec![
            ToyModel::Ar(ToyArModel::random(&dims, 1.0, &mut rng)),
            ToyModel::Fm(ToyFmModel::new(&dims, 1.0, &mut rng)),
            ToyModel::Mgm(ToyMgmModel::random(&dims, 1.0, &mut rng)),
        ]
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for m in models() {
            let bytes = encode(&m);
            assert_eq!(&bytes[..4], MAGIC);
            assert_eq!(decode(&bytes).unwrap(), m);
        }
    }

    #[test]
    fn rejects_damage() {
        let bytes = encode(&models()[0]);
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode(&bad).is_err());
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(decode(&bad).is_err());
        let mut bad = bytes;
        // Flip the FM/AR tag: shapes no longer fit.
        bad[4] = 2;
        assert!(decode(&bad).is_err());
        assert!(decode(&[]).is_err());
    }

    #[test]
    fn rejects_non_finite_payload() {
        let mut bytes = encode(&models()[2]);
        let n = bytes.len();
        bytes[n - 8..].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(decode(&bytes).is_err());
    }
}
