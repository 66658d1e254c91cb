//! Run manifests: what was run, on which bytes, producing which files.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Full argument vector, program name excluded.
    pub args: Vec<String>,
    pub config_paths: Vec<String>,
    pub seed: u64,
    /// Path as given -> hex SHA-256 of the file bytes.
    pub input_digests: BTreeMap<String, String>,
    pub tool_version: String,
    pub timestamp: String,
    pub outputs: Vec<String>,
}

pub fn file_digest(path: impl AsRef<Path>) -> std::io::Result<String> {
    let mut file = fs::File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

impl RunManifest {
    pub fn new(command: impl Into<String>, args: Vec<String>, seed: u64) -> Self {
        RunManifest {
            command: command.into(),
            args,
            config_paths: Vec::new(),
            seed,
            input_digests: BTreeMap::new(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            outputs: Vec::new(),
        }
    }

    pub fn add_input(&mut self, path: impl AsRef<Path>) -> std::io::Result<()> {
        let path = path.as_ref();
        let digest = file_digest(path)?;
        self.input_digests.insert(path.display().to_string(), digest);
        Ok(())
    }

    /// Config files are inputs too, listed separately.
    pub fn add_config(&mut self, path: impl AsRef<Path>) -> std::io::Result<()> {
        let path = path.as_ref();
        self.add_input(path)?;
        let p = path.display().to_string();
        if !self.config_paths.contains(&p) {
            self.config_paths.push(p);
        }
        Ok(())
    }

    pub fn add_output(&mut self, path: impl AsRef<Path>) {
        let p = path.as_ref().display().to_string();
        if !self.outputs.contains(&p) {
            self.outputs.push(p);
        }
    }

    /// Directories holding the outputs, deduplicated, in first-seen order.
    pub fn output_dirs(&self) -> Vec<PathBuf> {
        let mut dirs: Vec<PathBuf> = Vec::new();
        for out in &self.outputs {
            let dir = match Path::new(out).parent() {
                Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
                _ => PathBuf::from("."),
            };
            if !dirs.contains(&dir) {
                dirs.push(dir);
            }
        }
        dirs
    }

    /// Writes `manifest.json` into every output directory, replacing any
    /// earlier manifest there.
    pub fn write(&self) -> std::io::Result<Vec<PathBuf>> {
        let text = serde_json::to_string_pretty(self).map_err(std::io::Error::other)? + "\n";
        let mut written = Vec::new();
        for dir in self.output_dirs() {
            fs::create_dir_all(&dir)?;
            let path = dir.join(MANIFEST_FILE);
            fs::write(&path, &text)?;
            written.push(path);
        }
        Ok(written)
    }

    pub fn load(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(std::io::Error::other)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_of_known_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x");
        fs::write(&p, b"abc").unwrap();
        assert_eq!(
            file_digest(&p).unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn one_manifest_per_output_dir() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("in.csv");
        fs::write(&input, "id\n1\n").unwrap();
        let mut m = RunManifest::new("sample", vec!["--n".into(), "3".into()], 7);
        m.add_input(&input).unwrap();
        m.add_output(dir.path().join("a/out.csv"));
        m.add_output(dir.path().join("a/usage.json"));
        m.add_output(dir.path().join("b/other.json"));
        let written = m.write().unwrap();
        assert_eq!(written.len(), 2);
        let back = RunManifest::load(&written[0]).unwrap();
        assert_eq!(back, m);
    }
}
