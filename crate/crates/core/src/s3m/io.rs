//! `s3m_model.bin`: 8-byte magic, u32 version, u64 feature dim, u64 state
//! dim, then f64 blocks `enc_w` (O x D), `enc_b` (O), `transition` (O x O),
//! `dec_w` (D x O), `dec_b` (D). Matrices are row-major; everything is
//! little-endian.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};

use super::{S3mError, S3mParams};

pub const MODEL_MAGIC: &[u8; 8] = b"S3MPARAM";
pub const MODEL_VERSION: u32 = 1;

fn put_matrix(out: &mut Vec<u8>, m: &DMatrix<f64>) {
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            out.extend_from_slice(&m[(r, c)].to_le_bytes());
        }
    }
}

pub fn write_params<W: Write>(mut w: W, p: &S3mParams) -> Result<(), S3mError> {
    let mut out = Vec::with_capacity(28 + p.len() * 8);
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    out.extend_from_slice(&(p.feature_dim() as u64).to_le_bytes());
    out.extend_from_slice(&(p.state_dim() as u64).to_le_bytes());
    put_matrix(&mut out, &p.enc_w);
    p.enc_b.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
    put_matrix(&mut out, &p.transition);
    put_matrix(&mut out, &p.dec_w);
    p.dec_b.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
    w.write_all(&out)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N], S3mError> {
        let end = self.pos + N;
        let slice = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| S3mError::Format("truncated".into()))?;
        self.pos = end;
        Ok(slice.try_into().unwrap())
    }

    fn f64(&mut self) -> Result<f64, S3mError> {
        let v = f64::from_le_bytes(self.take()?);
        if !v.is_finite() {
            return Err(S3mError::Format("non-finite weight".into()));
        }
        Ok(v)
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<DMatrix<f64>, S3mError> {
        let mut m = DMatrix::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                m[(r, c)] = self.f64()?;
            }
        }
        Ok(m)
    }

    fn vector(&mut self, n: usize) -> Result<DVector<f64>, S3mError> {
        let mut v = DVector::zeros(n);
        for i in 0..n {
            v[i] = self.f64()?;
        }
        Ok(v)
    }
}

pub fn read_params<R: Read>(mut r: R) -> Result<S3mParams, S3mError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut cur = Cursor { bytes: &bytes, pos: 0 };
    if &cur.take::<8>()? != MODEL_MAGIC {
        return Err(S3mError::Format("bad magic".into()));
    }
    let version = u32::from_le_bytes(cur.take()?);
    if version != MODEL_VERSION {
        return Err(S3mError::Format(format!("unsupported version {version}")));
    }
    let d = u64::from_le_bytes(cur.take()?) as usize;
    let o = u64::from_le_bytes(cur.take()?) as usize;
    let expected = 28 + 8 * (2 * o * d + o + o * o + d);
    if d == 0 || o == 0 || bytes.len() != expected {
        return Err(S3mError::Format(format!(
            "expected {expected} bytes for D={d}, O={o}, found {}",
            bytes.len()
        )));
    }
    Ok(S3mParams {
        enc_w: cur.matrix(o, d)?,
        enc_b: cur.vector(o)?,
        transition: cur.matrix(o, o)?,
        dec_w: cur.matrix(d, o)?,
        dec_b: cur.vector(d)?,
    })
}
