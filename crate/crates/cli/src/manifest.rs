use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use sha2::{Digest, Sha256};

/// Flat `key=value` record of everything needed to rerun a command.
#[derive(Default)]
pub struct Manifest {
    entries: Vec<(String, String)>,
}

impl Manifest {
    pub fn new(command: &str, seed: Option<u64>) -> Self {
        let mut m = Self::default();
        m.push("command", command);
        m.push("version", env!("CARGO_PKG_VERSION"));
        if let Some(s) = seed {
            m.push("seed", s);
        }
        m
    }

    pub fn push(&mut self, key: impl Into<String>, value: impl ToString) {
        self.entries.push((key.into(), value.to_string()));
    }

    /// Records a path and the SHA-256 of its contents.
    pub fn input_file(&mut self, name: &str, path: &Path) -> Result<()> {
        self.push(format!("input.{name}"), path.display());
        self.push(format!("input.{name}.sha256"), file_digest(path)?);
        Ok(())
    }

    /// Records a directory's files in name order with one digest each.
    pub fn input_dir(&mut self, name: &str, dir: &Path) -> Result<()> {
        self.push(format!("input.{name}"), dir.display());
        let mut files: Vec<_> = fs::read_dir(dir)
            .with_context(|| format!("reading {}", dir.display()))?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().is_file())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .filter(|f| f != "manifest.txt")
            .collect();
        files.sort();
        for f in files {
            self.push(format!("input.{name}/{f}.sha256"), file_digest(&dir.join(&f))?);
        }
        Ok(())
    }

    /// Adds every line of a `key=value` block under `prefix`.
    pub fn push_kv(&mut self, prefix: &str, text: &str) {
        for line in text.lines() {
            if let Some((k, v)) = line.split_once('=') {
                self.push(format!("{prefix}.{k}"), v);
            }
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let mut s = String::new();
        for (k, v) in &self.entries {
            writeln!(s, "{k}={v}").expect("write to string");
        }
        let path = dir.join("manifest.txt");
        fs::write(&path, s).with_context(|| format!("writing {}", path.display()))
    }
}

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let digest = Sha256::digest(&bytes);
    let mut hex = String::with_capacity(64);
    for b in digest.iter() {
        write!(hex, "{b:02x}").expect("write to string");
    }
    Ok(hex)
}
