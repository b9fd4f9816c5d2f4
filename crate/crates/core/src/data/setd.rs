//! `SETD` layout (all integers little-endian):
//!
//! ```text
//! "SETD" | u32 version | u32 flags (bit 0: classification)
//! u64 N | u64 M | u64 D | u64 T
//! u32 metadata length | canonical JSON metadata
//! N*M*D f64 inputs | N*T targets (f64, or u32 class ids)
//! ```

use std::path::Path;

use super::{SetDataset, Targets};
use crate::binio::{self, Reader};
use crate::error::{Error, Result};
use crate::json::to_canonical_string;
use crate::tensor::Tensor;

pub const SETD_MAGIC: [u8; 4] = *b"SETD";
pub const SETD_VERSION: u32 = 1;
const FLAG_CLASSIFICATION: u32 = 1;

pub fn encode(ds: &SetDataset) -> Result<Vec<u8>> {
    let meta = to_canonical_string(ds.metadata())?;
    let [n, m, d] = [ds.n_sets(), ds.set_size(), ds.features()];
    let mut out = Vec::with_capacity(64 + meta.len() + ds.inputs().numel() * 8 + n * 8);
    out.extend_from_slice(&SETD_MAGIC);
    binio::put_u32(&mut out, SETD_VERSION);
    binio::put_u32(&mut out, if ds.targets().is_classification() { FLAG_CLASSIFICATION } else { 0 });
    for v in [n, m, d, ds.targets().width()] {
        binio::put_u64(&mut out, v as u64);
    }
    binio::put_blob(&mut out, meta.as_bytes());
    binio::put_f64s(&mut out, ds.inputs().data());
    match ds.targets() {
        Targets::Values { data, .. } => binio::put_f64s(&mut out, data),
        Targets::Classes { labels, .. } => {
            for l in labels {
                binio::put_u32(&mut out, *l);
            }
        }
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<SetDataset> {
    let mut r = Reader::new(bytes);
    r.magic(SETD_MAGIC)?;
    let version = r.u32()?;
    if version != SETD_VERSION {
        return Err(Error::Version { found: version, expected: SETD_VERSION });
    }
    let flags_at = r.offset();
    let flags = r.u32()?;
    if flags & !FLAG_CLASSIFICATION != 0 {
        return Err(Error::Malformed { offset: flags_at, msg: format!("unknown flag bits {flags:#x}") });
    }
    let dims_at = r.offset();
    let mut dims = [0usize; 4];
    for v in dims.iter_mut() {
        *v = usize::try_from(r.u64()?).map_err(|_| Error::Malformed { offset: dims_at, msg: "dimension overflows".into() })?;
    }
    let [n, m, d, t] = dims;
    if dims.contains(&0) {
        return Err(Error::Malformed { offset: dims_at, msg: format!("zero dimension in {dims:?}") });
    }
    let meta_len = r.u32()? as usize;
    let meta_at = r.offset();
    let metadata: serde_json::Value = serde_json::from_slice(r.take(meta_len)?)
        .map_err(|e| Error::Malformed { offset: meta_at, msg: format!("metadata: {e}") })?;
    let numel = n
        .checked_mul(m)
        .and_then(|x| x.checked_mul(d))
        .ok_or_else(|| Error::Malformed { offset: dims_at, msg: "input size overflows".into() })?;
    let inputs = r.f64_vec(numel)?;
    let targets = if flags & FLAG_CLASSIFICATION != 0 {
        if t != 1 {
            return Err(Error::Malformed { offset: dims_at, msg: format!("classification needs T = 1, got {t}") });
        }
        let labels = r.u32_vec(n)?;
        let num_classes = metadata
            .get("classes")
            .and_then(|v| v.as_u64())
            .map(|c| c as usize)
            .unwrap_or_else(|| labels.iter().map(|&l| l as usize + 1).max().unwrap_or(1));
        Targets::Classes { num_classes, labels }
    } else {
        let data = r.f64_vec(n.checked_mul(t).ok_or_else(|| Error::Malformed { offset: dims_at, msg: "target size overflows".into() })?)?;
        Targets::Values { width: t, data }
    };
    r.finish()?;
    SetDataset::new(Tensor::new(&[n, m, d], inputs)?, targets, metadata)
}

pub fn write_dataset(ds: &SetDataset, path: &Path) -> Result<()> {
    binio::write_file(path, &encode(ds)?)
}

pub fn read_dataset(path: &Path) -> Result<SetDataset> {
    decode(&binio::read_file(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_normal_var, gen_toy_shapes, GenSpec, Task};

    #[test]
    fn round_trip_both_target_kinds() {
        for ds in [
            gen_normal_var(&GenSpec::new(Task::NormalVar, 5, 7, 1)).unwrap(),
            gen_toy_shapes(&GenSpec::new(Task::ToyShapes, 5, 7, 1)).unwrap(),
        ] {
            let bytes = encode(&ds).unwrap();
            let back = decode(&bytes).unwrap();
            assert_eq!(back, ds);
            assert_eq!(encode(&back).unwrap(), bytes);
        }
    }

    #[test]
    fn distinct_parse_errors() {
        let ds = gen_normal_var(&GenSpec::new(Task::NormalVar, 3, 4, 1)).unwrap();
        let bytes = encode(&ds).unwrap();

        let mut bad = bytes.clone();
        bad[1] = b'X';
        let err = decode(&bad).unwrap_err();
        assert!(matches!(err, Error::BadMagic { .. }));
        assert!(err.to_string().contains("offset 0"));

        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert!(matches!(decode(&v2), Err(Error::Version { found: 2, .. })));

        // claim one more set than the payload holds
        let mut big = bytes.clone();
        big[12] += 1;
        assert!(matches!(decode(&big), Err(Error::Truncated { .. })));
    }
}
