//! Binary H-matrix format: magic, version, compression parameters, then a
//! pre-order node stream. All integers are little-endian `u64`, all reals
//! little-endian `f64`; factor matrices are stored row-major.
//!
//! Node record: tag (`u8`: 0 internal, 1 zero, 2 low-rank), row start/end,
//! column start/end; low-rank nodes follow with rank `k`, `sigma[k]`,
//! `U` (`rows x k`) and `V` (`k x cols`).

use std::path::Path;

use nalgebra::DMatrix;

use super::{CompressionParams, HNode, LowRank, NodeKind};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"PGSTABH1";
const VERSION: u64 = 1;

fn put_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(buf: &mut Vec<u8>, v: f64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_matrix(buf: &mut Vec<u8>, m: &DMatrix<f64>) {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            put_f64(buf, m[(i, j)]);
        }
    }
}

pub fn to_bytes(root: &HNode, params: &CompressionParams) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    put_u64(&mut buf, VERSION);
    put_u64(&mut buf, params.max_rank as u64);
    put_f64(&mut buf, params.delta);
    put_u64(&mut buf, params.max_leaf_size as u64);
    put_u64(&mut buf, params.min_block_size as u64);
    root.visit(&mut |_, n| {
        let tag = match n.kind {
            NodeKind::Internal(_) => 0u8,
            NodeKind::Zero => 1,
            NodeKind::LowRank(_) => 2,
        };
        buf.push(tag);
        for v in [n.rows.start, n.rows.end, n.cols.start, n.cols.end] {
            put_u64(&mut buf, v as u64);
        }
        if let NodeKind::LowRank(l) = &n.kind {
            put_u64(&mut buf, l.sigma.len() as u64);
            for &s in &l.sigma {
                put_f64(&mut buf, s);
            }
            put_matrix(&mut buf, &l.u);
            put_matrix(&mut buf, &l.v);
        }
    });
    buf
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format("truncated H-matrix stream".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Format("index overflow".into()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
        let mut vals = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            vals.push(self.f64()?);
        }
        Ok(DMatrix::from_row_slice(rows, cols, &vals))
    }

    fn node(&mut self, depth: usize) -> Result<HNode> {
        if depth > 64 {
            return Err(Error::Format("H-matrix nesting too deep".into()));
        }
        let tag = self.take(1)?[0];
        let (r0, r1, c0, c1) = (self.usize()?, self.usize()?, self.usize()?, self.usize()?);
        if r0 > r1 || c0 > c1 {
            return Err(Error::Format("inverted range in H-matrix stream".into()));
        }
        let kind = match tag {
            0 => {
                let mut ch = Vec::with_capacity(4);
                for _ in 0..4 {
                    ch.push(self.node(depth + 1)?);
                }
                let arr: [HNode; 4] = ch.try_into().unwrap();
                NodeKind::Internal(Box::new(arr))
            }
            1 => NodeKind::Zero,
            2 => {
                let k = self.usize()?;
                if k > self.buf.len() {
                    return Err(Error::Format("implausible rank".into()));
                }
                let mut sigma = Vec::with_capacity(k);
                for _ in 0..k {
                    sigma.push(self.f64()?);
                }
                let u = self.matrix(r1 - r0, k)?;
                let v = self.matrix(k, c1 - c0)?;
                NodeKind::LowRank(LowRank { u, v, sigma })
            }
            t => return Err(Error::Format(format!("unknown node tag {t}"))),
        };
        Ok(HNode {
            rows: r0..r1,
            cols: c0..c1,
            kind,
        })
    }
}

pub fn from_bytes(buf: &[u8]) -> Result<(HNode, CompressionParams)> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Format("not an H-matrix file".into()));
    }
    let version = r.u64()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported H-matrix version {version}")));
    }
    let params = CompressionParams {
        max_rank: r.usize()?,
        delta: r.f64()?,
        max_leaf_size: r.usize()?,
        min_block_size: r.usize()?,
    };
    let root = r.node(0)?;
    if r.pos != buf.len() {
        return Err(Error::Format("trailing bytes after H-matrix".into()));
    }
    Ok((root, params))
}

pub fn write(path: &Path, root: &HNode, params: &CompressionParams) -> Result<()> {
    std::fs::write(path, to_bytes(root, params))?;
    Ok(())
}

pub fn read(path: &Path) -> Result<(HNode, CompressionParams)> {
    from_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hmat::create_tree;

    #[test]
    fn roundtrip() {
        let a = DMatrix::from_fn(23, 17, |i, j| ((i * j) as f64).sin() + if i == j { 3.0 } else { 0.0 });
        let p = CompressionParams {
            max_rank: 3,
            delta: 1e-9,
            max_leaf_size: 8,
            min_block_size: 2,
        };
        let t = create_tree(&a, &p, None).unwrap();
        let bytes = to_bytes(&t, &p);
        let (t2, p2) = from_bytes(&bytes).unwrap();
        assert_eq!(t, t2);
        assert_eq!(p, p2);
        assert!(from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(from_bytes(&bad).is_err());
    }
}
