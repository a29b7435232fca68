//! Binary model checkpoints: a fixed header followed by little-endian `f32`
//! tensors.

use std::path::Path;

use ndarray::{Array1, Array2};

use super::{DistanceMode, SiameseModel};
use crate::error::{CclError, Result};

pub const MODEL_MAGIC: &[u8; 4] = b"CCLM";
pub const MODEL_VERSION: u32 = 1;

fn put_f32s<'a>(out: &mut Vec<u8>, vals: impl IntoIterator<Item = &'a f32>) {
    for v in vals {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_model(model: &SiameseModel<f32>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    for dim in [model.input_dim(), model.hidden_dim(), model.proj_dim()] {
        out.extend_from_slice(&(dim as u64).to_le_bytes());
    }
    out.push(model.batch_norm as u8);
    out.push(match model.distance {
        DistanceMode::Euclidean => 0,
        DistanceMode::Squared => 1,
    });
    put_f32s(&mut out, &[model.margin, model.bn_eps, model.bn_momentum]);
    put_f32s(&mut out, model.enc_w.iter());
    put_f32s(&mut out, model.enc_b.iter());
    put_f32s(&mut out, model.bn_gamma.iter());
    put_f32s(&mut out, model.bn_beta.iter());
    put_f32s(&mut out, model.running_mean.iter());
    put_f32s(&mut out, model.running_var.iter());
    put_f32s(&mut out, model.proj_w.iter());
    put_f32s(&mut out, model.proj_b.iter());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(CclError::Truncated {
                expected: self.pos + n,
                found: self.buf.len(),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = n
            .checked_mul(4)
            .ok_or_else(|| CclError::Format("tensor size overflows".into()))?;
        Ok(self
            .take(bytes)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn vec1(&mut self, n: usize) -> Result<Array1<f32>> {
        Ok(Array1::from(self.f32s(n)?))
    }

    fn mat(&mut self, r: usize, c: usize) -> Result<Array2<f32>> {
        let n = r
            .checked_mul(c)
            .ok_or_else(|| CclError::Format("tensor size overflows".into()))?;
        Ok(Array2::from_shape_vec((r, c), self.f32s(n)?).expect("sized above"))
    }
}

pub fn decode_model(bytes: &[u8]) -> Result<SiameseModel<f32>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MODEL_MAGIC {
        return Err(CclError::Format("not a model checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != MODEL_VERSION {
        return Err(CclError::Format(format!("unsupported model version {version}")));
    }
    let mut dims = [0usize; 3];
    for d in dims.iter_mut() {
        *d = usize::try_from(r.u64()?).map_err(|_| CclError::Format("dimension too large".into()))?;
    }
    let [din, h, d] = dims;
    if din == 0 || h == 0 || d == 0 {
        return Err(CclError::Format("model dimensions must be positive".into()));
    }
    let batch_norm = match r.u8()? {
        0 => false,
        1 => true,
        v => return Err(CclError::Format(format!("bad batch-norm flag {v}"))),
    };
    let distance = match r.u8()? {
        0 => DistanceMode::Euclidean,
        1 => DistanceMode::Squared,
        v => return Err(CclError::Format(format!("bad distance mode {v}"))),
    };
    let hdr = r.f32s(3)?;
    let model = SiameseModel {
        enc_w: r.mat(din, h)?,
        enc_b: r.vec1(h)?,
        bn_gamma: r.vec1(h)?,
        bn_beta: r.vec1(h)?,
        running_mean: r.vec1(h)?,
        running_var: r.vec1(h)?,
        proj_w: r.mat(h, d)?,
        proj_b: r.vec1(d)?,
        margin: hdr[0],
        batch_norm,
        bn_eps: hdr[1],
        bn_momentum: hdr[2],
        distance,
    };
    if r.pos != bytes.len() {
        return Err(CclError::Format(format!("{} trailing bytes after model", bytes.len() - r.pos)));
    }
    if !model.is_finite() {
        return Err(CclError::Format("model contains non-finite values".into()));
    }
    Ok(model)
}

pub fn save_model(path: impl AsRef<Path>, model: &SiameseModel<f32>) -> Result<()> {
    std::fs::write(path, encode_model(model))?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<SiameseModel<f32>> {
    decode_model(&std::fs::read(path)?)
}
