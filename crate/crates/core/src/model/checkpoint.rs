//! `SETN` checkpoints: magic, version, canonical config JSON, then every
//! stored tensor in registry order as little-endian `f64`.

use std::path::Path;

use super::{Model, ModelConfig};
use crate::binio::{self, Reader};
use crate::error::{Error, Result};
use crate::json::to_canonical_string;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"SETN";
pub const CHECKPOINT_VERSION: u32 = 1;

impl Model {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let json = to_canonical_string(&self.config)?;
        let mut out = Vec::new();
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        binio::put_u32(&mut out, CHECKPOINT_VERSION);
        binio::put_blob(&mut out, json.as_bytes());
        for e in self.store.entries() {
            binio::put_f64s(&mut out, e.value.data());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
        let mut r = Reader::new(bytes);
        r.magic(CHECKPOINT_MAGIC)?;
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version { found: version, expected: CHECKPOINT_VERSION });
        }
        let len = r.u32()? as usize;
        let at = r.offset();
        let json = std::str::from_utf8(r.take(len)?).map_err(|e| Error::Malformed {
            offset: at,
            msg: format!("config is not UTF-8: {e}"),
        })?;
        let config = ModelConfig::from_json(json)?;
        let mut model = Model::build(&config)?;
        let ids: Vec<_> = model.store.ids().collect();
        for id in ids {
            let shape = model.store.value(id).shape().to_vec();
            let n = model.store.value(id).numel();
            let data = r.f64_vec(n)?;
            let trainable = model.store.get(id).trainable;
            *model.store.value_mut(id) = Tensor::new(&shape, data)?.with_requires_grad(trainable);
        }
        r.finish()?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        binio::write_file(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Model> {
        Model::from_bytes(&binio::read_file(path)?)
    }
}
