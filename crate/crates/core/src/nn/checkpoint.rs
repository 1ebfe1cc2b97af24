//! Flat array checkpoints: a little-endian `f64` blob plus a plain-text
//! manifest with one `name rows,cols offset` line per array (offset in
//! bytes from the start of the blob).

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;

use super::params::ParamStore;
use crate::error::{Error, Result};

fn paths(base: &Path) -> (PathBuf, PathBuf) {
    (base.with_extension("bin"), base.with_extension("manifest"))
}

pub fn write_arrays(base: &Path, arrays: &[(String, &Array2<f64>)]) -> Result<()> {
    let (bin, manifest) = paths(base);
    let mut blob = BufWriter::new(fs::File::create(&bin)?);
    let mut text = String::from("# name rows,cols byte_offset\n");
    let mut offset = 0usize;
    for (name, a) in arrays {
        if name.chars().any(char::is_whitespace) {
            return Err(Error::Checkpoint(format!("array name `{name}` contains whitespace")));
        }
        text.push_str(&format!("{name} {},{} {offset}\n", a.nrows(), a.ncols()));
        for v in a.iter() {
            blob.write_all(&v.to_le_bytes())?;
        }
        offset += a.len() * 8;
    }
    blob.flush()?;
    fs::write(manifest, text)?;
    Ok(())
}

pub fn read_arrays(base: &Path) -> Result<Vec<(String, Array2<f64>)>> {
    let (bin, manifest) = paths(base);
    let blob = fs::read(&bin)?;
    let text = fs::read_to_string(&manifest)?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |msg: &str| Error::Parse {
            line: lineno + 1,
            msg: format!("{}: {msg}", manifest.display()),
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(bad("expected `name rows,cols offset`"));
        }
        let (r, c) = fields[1].split_once(',').ok_or_else(|| bad("bad shape"))?;
        let rows: usize = r.parse().map_err(|_| bad("bad row count"))?;
        let cols: usize = c.parse().map_err(|_| bad("bad column count"))?;
        let offset: usize = fields[2].parse().map_err(|_| bad("bad offset"))?;
        let end = offset + rows * cols * 8;
        if end > blob.len() {
            return Err(bad("array extends past end of data file"));
        }
        let values: Vec<f64> = blob[offset..end]
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        let a = Array2::from_shape_vec((rows, cols), values).map_err(|e| bad(&e.to_string()))?;
        out.push((fields[0].to_string(), a));
    }
    Ok(out)
}

pub fn save_params(store: &ParamStore, base: &Path) -> Result<()> {
    let arrays: Vec<_> = store.iter().map(|(_, p)| (p.name.clone(), &p.value)).collect();
    write_arrays(base, &arrays)
}

/// Overwrites values in `store` from a checkpoint; every parameter must be
/// present with a matching shape.
pub fn load_params(store: &mut ParamStore, base: &Path) -> Result<()> {
    let arrays = read_arrays(base)?;
    if arrays.len() != store.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint holds {} arrays, model expects {}",
            arrays.len(),
            store.len()
        )));
    }
    for (name, a) in arrays {
        let id = store
            .find(&name)
            .ok_or_else(|| Error::Checkpoint(format!("unexpected array `{name}`")))?;
        if store.value(id).shape() != a.shape() {
            return Err(Error::Checkpoint(format!(
                "array `{name}` has shape {:?}, model expects {:?}",
                a.shape(),
                store.value(id).shape()
            )));
        }
        *store.value_mut(id) = a;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn manifest_layout_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("params");
        let a = array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.5]];
        let b = array![[-0.25]];
        write_arrays(&base, &[("a".into(), &a), ("b/bias".into(), &b)]).unwrap();
        let manifest = fs::read_to_string(base.with_extension("manifest")).unwrap();
        assert!(manifest.contains("a 2,3 0\n"));
        assert!(manifest.contains("b/bias 1,1 48\n"));
        let blob = fs::read(base.with_extension("bin")).unwrap();
        assert_eq!(blob.len(), 56);
        assert_eq!(&blob[40..48], &6.5f64.to_le_bytes());
        let back = read_arrays(&base).unwrap();
        assert_eq!(back[0].1, a);
        assert_eq!(back[1].1, b);
    }

    #[test]
    fn load_rejects_shape_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("p");
        let mut s = ParamStore::new();
        s.add("w", array![[1.0, 2.0]], true, false).unwrap();
        save_params(&s, &base).unwrap();
        let mut other = ParamStore::new();
        other.add("w", array![[1.0], [2.0]], true, false).unwrap();
        assert!(load_params(&mut other, &base).is_err());
        let mut same = ParamStore::new();
        same.add("w", array![[0.0, 0.0]], true, false).unwrap();
        load_params(&mut same, &base).unwrap();
        assert_eq!(same.value(same.find("w").unwrap()), &array![[1.0, 2.0]]);
    }
}
