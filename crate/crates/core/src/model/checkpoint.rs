//! Binary checkpoint: `LVM1`, u32 dim, then little-endian f64 tensors
//! (gamma, beta, running mean, running var, W1 row-major, b1, W2, b2,
//! adapter W row-major, adapter b). The hidden width is implied by the
//! file length.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2};

use super::params::FusionHeadParams;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"LVM1";

pub fn checkpoint_bytes(p: &FusionHeadParams) -> Vec<u8> {
    let (d, h) = (p.dim(), p.hidden());
    let floats = 5 * d + h * d + 2 * h + 1 + d * d;
    let mut out = Vec::with_capacity(8 + 8 * floats);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(d as u32).to_le_bytes());
    let mut put = |xs: &mut dyn Iterator<Item = f64>| {
        for x in xs {
            out.extend_from_slice(&x.to_le_bytes());
        }
    };
    put(&mut p.bn_gamma.iter().copied());
    put(&mut p.bn_beta.iter().copied());
    put(&mut p.bn_running_mean.iter().copied());
    put(&mut p.bn_running_var.iter().copied());
    put(&mut p.w1.iter().copied());
    put(&mut p.b1.iter().copied());
    put(&mut p.w2.iter().copied());
    put(&mut std::iter::once(p.b2));
    put(&mut p.adapter_w.iter().copied());
    put(&mut p.adapter_b.iter().copied());
    out
}

pub fn save_checkpoint(p: &FusionHeadParams, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&checkpoint_bytes(p)).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.buf.len());
        let end = end.ok_or_else(|| Error::BadCheckpoint("truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::BadCheckpoint("size overflow".into()))?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

pub fn checkpoint_from_bytes(buf: &[u8]) -> Result<FusionHeadParams> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::BadCheckpoint("bad magic".into()));
    }
    let d = r.u32()? as usize;
    if d == 0 {
        return Err(Error::BadCheckpoint("zero dimension".into()));
    }
    // floats = 5d + 1 + d² + h(d + 2)
    let body = buf.len() - 8;
    let fixed = d
        .checked_mul(d)
        .and_then(|dd| dd.checked_add(5 * d + 1))
        .and_then(|f| f.checked_mul(8))
        .ok_or_else(|| Error::BadCheckpoint("dimension too large".into()))?;
    let per_hidden = 8 * (d + 2);
    if body % 8 != 0 || body <= fixed || (body - fixed) % per_hidden != 0 {
        return Err(Error::BadCheckpoint(format!("{} bytes do not fit dim {d}", buf.len())));
    }
    let h = (body - fixed) / per_hidden;
    let v1 = |v: Vec<f64>| Array1::from_vec(v);
    let bn_gamma = v1(r.f64s(d)?);
    let bn_beta = v1(r.f64s(d)?);
    let bn_running_mean = v1(r.f64s(d)?);
    let bn_running_var = v1(r.f64s(d)?);
    let w1 = Array2::from_shape_vec((h, d), r.f64s(h * d)?).expect("sized read");
    let b1 = v1(r.f64s(h)?);
    let w2 = v1(r.f64s(h)?);
    let b2 = r.f64s(1)?[0];
    let adapter_w = Array2::from_shape_vec((d, d), r.f64s(d * d)?).expect("sized read");
    let adapter_b = v1(r.f64s(d)?);
    if r.pos != buf.len() {
        return Err(Error::BadCheckpoint(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    let p = FusionHeadParams {
        bn_gamma,
        bn_beta,
        bn_running_mean,
        bn_running_var,
        w1,
        b1,
        w2,
        b2,
        adapter_w,
        adapter_b,
        revision: 0,
    };
    if !p.is_finite() {
        return Err(Error::BadCheckpoint("non-finite parameter".into()));
    }
    Ok(p)
}

pub fn load_checkpoint(path: &Path) -> Result<FusionHeadParams> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_bytes(&buf)
}
