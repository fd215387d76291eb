use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};
use time::format_description::well_known::Rfc3339;
use time::OffsetDateTime;

/// Bad input: exit code 2.
#[derive(Debug)]
pub struct Invalid(pub String);

impl fmt::Display for Invalid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

pub fn invalid(e: impl fmt::Display) -> anyhow::Error {
    anyhow::Error::new(Invalid(e.to_string()))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Reads an input file and records its digest.
pub fn read_input(run: &mut Run, path: &Path) -> Result<String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    run.input(path, text.as_bytes());
    Ok(text)
}

#[derive(Serialize)]
struct FileDigest {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    tool_version: &'a str,
    created_utc: String,
    seed: Option<u64>,
    tolerances: &'a BTreeMap<String, f64>,
    parameters: &'a serde_json::Value,
    converged: bool,
    inputs: Vec<FileDigest>,
    outputs: Vec<FileDigest>,
}

/// Outputs of one command, held in memory until [`Run::commit`].
pub struct Run {
    pub command: &'static str,
    pub seed: Option<u64>,
    pub tolerances: BTreeMap<String, f64>,
    pub parameters: serde_json::Value,
    pub converged: bool,
    inputs: Vec<FileDigest>,
    outputs: Vec<(String, Vec<u8>)>,
}

impl Run {
    pub fn new(command: &'static str) -> Self {
        Run {
            command,
            seed: None,
            tolerances: BTreeMap::new(),
            parameters: serde_json::Value::Null,
            converged: true,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input(&mut self, path: &Path, bytes: &[u8]) {
        self.inputs.push(FileDigest {
            path: path.display().to_string(),
            sha256: sha256_hex(bytes),
        });
    }

    pub fn output(&mut self, name: &str, bytes: Vec<u8>) {
        self.outputs.push((name.to_string(), bytes));
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.output(name, bytes);
        Ok(())
    }

    pub fn csv<T: Serialize>(&mut self, name: &str, rows: impl IntoIterator<Item = T>) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in rows {
            w.serialize(row)?;
        }
        self.output(name, w.into_inner().map_err(|e| anyhow::anyhow!("{e}"))?);
        Ok(())
    }

    /// Writes every output and then the manifest. Each file is written to a
    /// temporary file in `dir` first; nothing is renamed into place until
    /// all of them were written successfully.
    pub fn commit(self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let outputs: Vec<FileDigest> = self
            .outputs
            .iter()
            .map(|(name, bytes)| FileDigest {
                path: name.clone(),
                sha256: sha256_hex(bytes),
            })
            .collect();
        let created_utc = OffsetDateTime::now_utc().format(&Rfc3339)?;
        let manifest = Manifest {
            command: self.command,
            tool_version: env!("CARGO_PKG_VERSION"),
            created_utc,
            seed: self.seed,
            tolerances: &self.tolerances,
            parameters: &self.parameters,
            converged: self.converged,
            inputs: self.inputs,
            outputs,
        };
        let mut manifest_bytes = serde_json::to_vec_pretty(&manifest)?;
        manifest_bytes.push(b'\n');
        let manifest_name = format!("{}.manifest.json", self.command);

        let mut staged = Vec::new();
        for (name, bytes) in self.outputs.iter().chain(std::iter::once(&(manifest_name, manifest_bytes))) {
            let mut tmp = tempfile::NamedTempFile::new_in(dir)
                .with_context(|| format!("creating a temporary file in {}", dir.display()))?;
            tmp.write_all(bytes)?;
            tmp.as_file().sync_all()?;
            staged.push((tmp, dir.join(name)));
        }
        let mut written = Vec::new();
        for (tmp, path) in staged {
            tmp.persist(&path)
                .with_context(|| format!("writing {}", path.display()))?;
            written.push(path);
        }
        Ok(written)
    }
}
