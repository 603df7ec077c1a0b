//! Binary checkpoint: `SSCK`, u32 version, config echo, u32 tensor count,
//! then per tensor: u16 name length, name, u8 rank, u32 dims, f32 values.
//! All integers and floats are little-endian.

use std::path::Path;
use std::sync::Arc;

use super::{Activation, HgtConfig, HgtError, HgtParams, Layout, Model, INTENSITY_CLASSES, POLARITY_CLASSES};
use crate::Scalar;

const MAGIC: &[u8; 4] = b"SSCK";
const VERSION: u32 = 1;

pub fn checkpoint_to_bytes<T: Scalar>(model: &Model<T>) -> Vec<u8> {
    let c = &model.config;
    let mut out = Vec::with_capacity(64 + model.params.len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for v in [c.layers, c.heads, c.dim] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&c.dropout.to_bits().to_le_bytes());
    out.push(c.activation.code());
    out.push(POLARITY_CLASSES as u8);
    out.push(INTENSITY_CLASSES as u8);
    let specs = model.params.layout().specs();
    out.extend_from_slice(&(specs.len() as u32).to_le_bytes());
    for spec in specs {
        out.extend_from_slice(&(spec.name.len() as u16).to_le_bytes());
        out.extend_from_slice(spec.name.as_bytes());
        out.push(spec.shape.len() as u8);
        for &d in &spec.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &x in &model.params.data()[spec.range()] {
            out.extend_from_slice(&x.as_f32().to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], HgtError> {
        if self.buf.len() - self.pos < n {
            return Err(HgtError::Checkpoint(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, HgtError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, HgtError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, HgtError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, HgtError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn checkpoint_from_bytes<T: Scalar>(bytes: &[u8]) -> Result<Model<T>, HgtError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(HgtError::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(HgtError::Checkpoint(format!("unsupported version {version}")));
    }
    let layers = r.u32()? as usize;
    let heads = r.u32()? as usize;
    let dim = r.u32()? as usize;
    let dropout = f64::from_bits(r.u64()?);
    let activation = Activation::from_code(r.u8()?).ok_or_else(|| HgtError::Checkpoint("unknown activation".into()))?;
    let (pc, ic) = (r.u8()? as usize, r.u8()? as usize);
    if (pc, ic) != (POLARITY_CLASSES, INTENSITY_CLASSES) {
        return Err(HgtError::Checkpoint(format!("class counts {pc}/{ic} not supported")));
    }
    let config = HgtConfig {
        layers,
        heads,
        dim,
        dropout,
        activation,
    };
    config.validate()?;
    let layout = Arc::new(Layout::new(&config));
    let count = r.u32()? as usize;
    if count != layout.specs().len() {
        return Err(HgtError::Checkpoint(format!(
            "{count} tensors, configuration needs {}",
            layout.specs().len()
        )));
    }
    let mut data = Vec::with_capacity(layout.total());
    for spec in layout.specs() {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?).map_err(|_| HgtError::Checkpoint("tensor name is not UTF-8".into()))?;
        if name != spec.name {
            return Err(HgtError::Checkpoint(format!("expected tensor {}, found {name}", spec.name)));
        }
        let rank = r.u8()? as usize;
        let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        if shape != spec.shape {
            return Err(HgtError::Checkpoint(format!("tensor {name} has shape {shape:?}, expected {:?}", spec.shape)));
        }
        for chunk in r.take(spec.len() * 4)?.chunks_exact(4) {
            let x = f32::from_le_bytes(chunk.try_into().unwrap());
            data.push(T::of(x as f64));
        }
    }
    if r.pos != bytes.len() {
        return Err(HgtError::Checkpoint("trailing bytes".into()));
    }
    Ok(Model {
        config,
        params: HgtParams::from_data(layout, data)?,
    })
}

pub fn write_checkpoint<T: Scalar>(path: &Path, model: &Model<T>) -> Result<(), HgtError> {
    crate::datamodel::write_file(path, &checkpoint_to_bytes(model)).map_err(|source| HgtError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_checkpoint<T: Scalar>(path: &Path) -> Result<Model<T>, HgtError> {
    let bytes = std::fs::read(path).map_err(|source| HgtError::Io {
        path: path.display().to_string(),
        source,
    })?;
    checkpoint_from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> Model<f32> {
        Model::new(
            HgtConfig {
                layers: 2,
                heads: 2,
                dim: 4,
                activation: Activation::Tanh,
                ..Default::default()
            },
            3,
        )
        .unwrap()
    }

    #[test]
    fn round_trip_is_lossless_for_f32() {
        let m = model();
        let bytes = checkpoint_to_bytes(&m);
        let back: Model<f32> = checkpoint_from_bytes(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(checkpoint_to_bytes(&back), bytes);
    }

    #[test]
    fn corrupt_inputs_rejected() {
        let bytes = checkpoint_to_bytes(&model());
        assert!(checkpoint_from_bytes::<f32>(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(checkpoint_from_bytes::<f32>(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(checkpoint_from_bytes::<f32>(&extra).is_err());
    }
}
