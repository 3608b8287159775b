//! Parameter checkpoints.
//!
//! Layout (all integers 32-bit little-endian): magic `CKPT`, parameter count,
//! then for every parameter its name length, UTF-8 name bytes, rank, extents
//! and an `f32` payload.

use std::fs;
use std::path::Path;

use super::param::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"CKPT";

pub fn encode(store: &ParamStore) -> Vec<u8> {
    let mut buf = MAGIC.to_vec();
    buf.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for p in store.iter() {
        buf.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        buf.extend_from_slice(p.name.as_bytes());
        buf.extend_from_slice(&(p.value.rank() as u32).to_le_bytes());
        for &e in p.value.shape() {
            buf.extend_from_slice(&(e as u32).to_le_bytes());
        }
        for &v in p.value.data() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    buf
}

pub fn decode(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(Error::Format("checkpoint: expected magic \"CKPT\"".into()));
    }
    let mut pos = 4;
    let mut take = |n: usize| -> Result<&[u8]> {
        if bytes.len() - pos < n {
            return Err(Error::Size(format!("checkpoint: truncated at offset {pos}")));
        }
        pos += n;
        Ok(&bytes[pos - n..pos])
    };
    let u32_at = |b: &[u8]| u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize;
    let count = u32_at(take(4)?);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = u32_at(take(4)?);
        let name = String::from_utf8(take(name_len)?.to_vec())
            .map_err(|_| Error::Format("checkpoint: parameter name is not UTF-8".into()))?;
        let rank = u32_at(take(4)?);
        let shape = (0..rank).map(|_| take(4).map(u32_at)).collect::<Result<Vec<_>>>()?;
        let len: usize = shape.iter().product();
        let data = take(4 * len)?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        out.push((name, Tensor::new(&shape, data)?));
    }
    if pos != bytes.len() {
        return Err(Error::Size("checkpoint: trailing bytes".into()));
    }
    Ok(out)
}

pub fn save(store: &ParamStore, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode(store))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Vec<(String, Tensor)>> {
    decode(&fs::read(path)?)
}

/// Copies checkpoint tensors into same-named parameters.
///
/// With `strict`, every store parameter must be present; otherwise only the
/// names found are overwritten (useful for importing a pretrained backbone).
/// Returns how many parameters were loaded.
pub fn load_into(store: &mut ParamStore, entries: Vec<(String, Tensor)>, strict: bool) -> Result<usize> {
    let mut loaded = 0;
    for (name, tensor) in entries {
        let Some(id) = store.find(&name) else {
            if strict {
                return Err(Error::Format(format!("checkpoint: unknown parameter `{name}`")));
            }
            continue;
        };
        let param = store.get_mut(id);
        if param.value.shape() != tensor.shape() {
            return Err(Error::Format(format!(
                "checkpoint: `{name}` has shape {:?}, model expects {:?}",
                tensor.shape(),
                param.value.shape()
            )));
        }
        param.value = tensor;
        loaded += 1;
    }
    if strict && loaded != store.len() {
        return Err(Error::Format(format!("checkpoint: loaded {loaded} of {} parameters", store.len())));
    }
    Ok(loaded)
}

#[cfg(test)]
mod tests {
    use super::super::param::ParamGroup;
    use super::*;

    #[test]
    fn round_trip_and_layout() {
        let mut store = ParamStore::new();
        store.add("a.weight", Tensor::new(&[2, 1], vec![0.5, -1.25]).unwrap(), ParamGroup::Backbone);
        store.add("b", Tensor::scalar(3.0), ParamGroup::Head);
        let bytes = encode(&store);
        // magic + count + (4 + 8 + 4 + 8 + 8) + (4 + 1 + 4 + 4)
        assert_eq!(bytes.len(), 8 + 32 + 13);
        let entries = decode(&bytes).unwrap();
        assert_eq!(entries[0].0, "a.weight");
        assert_eq!(entries[0].1.data(), &[0.5, -1.25]);
        assert_eq!(entries[1].1.shape(), &[] as &[usize]);

        let mut fresh = store.clone();
        fresh.iter_mut().for_each(|p| p.value = p.value.map(|_| 0.0));
        assert_eq!(load_into(&mut fresh, entries, true).unwrap(), 2);
        assert_eq!(fresh.get(fresh.find("b").unwrap()).value.item(), 3.0);
    }

    #[test]
    fn shape_mismatch_and_truncation() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::zeros(&[3]), ParamGroup::Backbone);
        let other = vec![("w".to_string(), Tensor::zeros(&[2]))];
        assert!(load_into(&mut store, other, false).is_err());
        let bytes = encode(&store);
        assert!(matches!(decode(&bytes[..bytes.len() - 2]), Err(Error::Size(_))));
        assert!(matches!(decode(b"CKPX\0\0\0\0"), Err(Error::Format(_))));
    }
}
