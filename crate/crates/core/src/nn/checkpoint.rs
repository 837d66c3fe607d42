//! Parameter archives: `name → shape-tagged little-endian array` records,
//! plus a JSON manifest describing dimensions and the producing config.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grad::{Mat, ParamStore};

const MAGIC: &[u8; 8] = b"ERTTPARM";
const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DType {
    F32,
    /// Full precision, used where a bit-exact resume is required.
    F64,
}

impl DType {
    fn tag(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: [usize; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub kind: String,
    pub dims: serde_json::Value,
    pub config_hash: String,
    pub dtype: DType,
    pub params: Vec<ParamEntry>,
}

pub fn write_archive(path: &Path, tensors: &[(&str, &Mat)], dtype: DType) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, m) in tensors {
        let bytes = name.as_bytes();
        w.write_all(&(bytes.len() as u32).to_le_bytes())?;
        w.write_all(bytes)?;
        w.write_all(&[dtype.tag()])?;
        w.write_all(&(m.nrows() as u64).to_le_bytes())?;
        w.write_all(&(m.ncols() as u64).to_le_bytes())?;
        for &x in m.iter() {
            match dtype {
                DType::F32 => w.write_all(&(x as f32).to_le_bytes())?,
                DType::F64 => w.write_all(&x.to_le_bytes())?,
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn read_exact<const N: usize>(r: &mut impl Read, path: &Path) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Data(format!("{}: truncated archive ({e})", path.display())))?;
    Ok(buf)
}

pub fn read_archive(path: &Path) -> Result<Vec<(String, Mat)>> {
    let mut r = BufReader::new(File::open(path)?);
    if &read_exact::<8>(&mut r, path)? != MAGIC {
        return Err(Error::Data(format!("{}: not a parameter archive", path.display())));
    }
    let version = u32::from_le_bytes(read_exact(&mut r, path)?);
    if version != VERSION {
        return Err(Error::Data(format!(
            "{}: unsupported archive version {version}",
            path.display()
        )));
    }
    let count = u32::from_le_bytes(read_exact(&mut r, path)?) as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let len = u32::from_le_bytes(read_exact(&mut r, path)?) as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Data(format!("{}: parameter name is not UTF-8", path.display())))?;
        let [tag] = read_exact::<1>(&mut r, path)?;
        let rows = u64::from_le_bytes(read_exact(&mut r, path)?) as usize;
        let cols = u64::from_le_bytes(read_exact(&mut r, path)?) as usize;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(match tag {
                0 => f32::from_le_bytes(read_exact(&mut r, path)?) as f64,
                1 => f64::from_le_bytes(read_exact(&mut r, path)?),
                t => return Err(Error::Data(format!("{}: unknown dtype tag {t}", path.display()))),
            });
        }
        let m = Mat::from_shape_vec((rows, cols), data).expect("length matches shape");
        out.push((name, m));
    }
    Ok(out)
}

pub fn save_store(path: &Path, store: &ParamStore, dtype: DType) -> Result<()> {
    let tensors: Vec<(&str, &Mat)> = store.iter().collect();
    write_archive(path, &tensors, dtype)
}

/// Overwrites every parameter of `store` from the archive; names and shapes
/// must match exactly.
pub fn load_into_store(path: &Path, store: &mut ParamStore) -> Result<()> {
    let tensors = read_archive(path)?;
    if tensors.len() != store.len() {
        return Err(Error::Consistency(format!(
            "archive has {} parameters, model expects {}",
            tensors.len(),
            store.len()
        )));
    }
    for (name, m) in tensors {
        let id = store
            .id(&name)
            .ok_or_else(|| Error::Consistency(format!("archive parameter `{name}` is unknown to the model")))?;
        if store.get(id).dim() != m.dim() {
            return Err(Error::Consistency(format!(
                "parameter `{name}` has shape {:?}, model expects {:?}",
                m.dim(),
                store.get(id).dim()
            )));
        }
        *store.get_mut(id) = m;
    }
    Ok(())
}

pub fn manifest_for(
    kind: &str,
    store: &ParamStore,
    dims: serde_json::Value,
    config_hash: &str,
    dtype: DType,
) -> CheckpointManifest {
    CheckpointManifest {
        kind: kind.to_string(),
        dims,
        config_hash: config_hash.to_string(),
        dtype,
        params: store
            .iter()
            .map(|(n, m)| ParamEntry {
                name: n.to_string(),
                shape: [m.nrows(), m.ncols()],
            })
            .collect(),
    }
}

/// Writes `<stem>.params` and `<stem>.json` into `dir`.
pub fn save_checkpoint(dir: &Path, stem: &str, store: &ParamStore, manifest: &CheckpointManifest) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    save_store(&dir.join(format!("{stem}.params")), store, manifest.dtype)?;
    let f = File::create(dir.join(format!("{stem}.json")))?;
    serde_json::to_writer_pretty(f, manifest)?;
    Ok(())
}

pub fn read_manifest(dir: &Path, stem: &str) -> Result<CheckpointManifest> {
    let f = File::open(dir.join(format!("{stem}.json")))?;
    Ok(serde_json::from_reader(BufReader::new(f))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn store() -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut s = ParamStore::new();
        s.add_normal("a/w", 3, 2, 1.0, &mut rng);
        s.add_normal("b", 1, 4, 1.0, &mut rng);
        s
    }

    #[test]
    fn f64_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.params");
        let s = store();
        save_store(&p, &s, DType::F64).unwrap();
        let mut t = store();
        for id in t.ids().collect::<Vec<_>>() {
            t.get_mut(id).fill(0.0);
        }
        load_into_store(&p, &mut t).unwrap();
        assert!(t.bitwise_eq(&s));
    }

    #[test]
    fn f32_round_trip_is_close() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.params");
        let s = store();
        save_store(&p, &s, DType::F32).unwrap();
        let back = read_archive(&p).unwrap();
        for ((n, m), (n2, m2)) in back.iter().zip(s.iter()) {
            assert_eq!(n, n2);
            for (a, b) in m.iter().zip(m2.iter()) {
                assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0));
            }
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.params");
        save_store(&p, &store(), DType::F64).unwrap();
        let mut other = ParamStore::new();
        other.add_zeros("a/w", 2, 2);
        other.add_zeros("b", 1, 4);
        assert!(matches!(load_into_store(&p, &mut other), Err(Error::Consistency(_))));
    }
}
