// SPDX-License-Identifier: MIT OR Apache-2.0

//! Atomic file output: write to a temporary file beside the target, rename
//! on success.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use sea_core::{Result, SeaError};
use tempfile::NamedTempFile;

pub fn write_atomic(path: &Path, body: impl FnOnce(&mut dyn Write) -> Result<u64>) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let tmp = NamedTempFile::new_in(dir)?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        body(&mut w)?;
        w.flush()?;
    }
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| SeaError::Io(e.error))?;
    Ok(())
}

pub fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| SeaError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

/// `out.seap` with K=0.99 becomes `out.k0.99.seap`.
pub fn with_k_suffix(path: &Path, k: f64) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}.k{k}.{}", ext.to_string_lossy()),
        None => format!("{stem}.k{k}"),
    };
    path.with_file_name(name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suffixes() {
        assert_eq!(with_k_suffix(Path::new("a/b.seap"), 0.99), PathBuf::from("a/b.k0.99.seap"));
        assert_eq!(with_k_suffix(Path::new("b"), 1.0), PathBuf::from("b.k1"));
    }

    #[test]
    fn failed_body_leaves_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let target = dir.path().join("x.bin");
        let r = write_atomic(&target, |w| {
            w.write_all(b"partial")?;
            Err(SeaError::Invalid("boom".into()))
        });
        assert!(r.is_err());
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
    }
}
