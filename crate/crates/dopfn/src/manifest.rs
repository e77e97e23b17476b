//! One `manifest.json` per artifact directory: the canonical command line,
//! seed and config hash, build identity, timestamps and output digests.

use std::path::Path;
use std::process::Command;
use std::time::{SystemTime, UNIX_EPOCH};

use dopfn_core::digest_hex;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::io::{read_json, write_json};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    /// Path relative to the artifact directory, `/`-separated.
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Complete argument list (program name excluded) that reproduces the run.
    pub args: Vec<String>,
    pub config_hash: Option<String>,
    pub seed: u64,
    pub git_describe: String,
    pub version: String,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub outputs: Vec<OutputFile>,
}

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

/// `git describe` of the working directory, or the package version outside a checkout.
pub fn git_describe() -> String {
    Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| format!("v{}", env!("CARGO_PKG_VERSION")))
}

impl RunManifest {
    pub fn start(command: &str, args: Vec<String>, seed: u64, config_hash: Option<String>) -> Self {
        RunManifest {
            command: command.to_string(),
            args,
            config_hash,
            seed,
            git_describe: git_describe(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            started_unix: unix_now(),
            finished_unix: 0,
            outputs: Vec::new(),
        }
    }

    /// Digests every file under `dir` (except the manifest) and writes the manifest.
    pub fn finish(mut self, dir: &Path) -> Result<Self> {
        self.outputs = digest_tree(dir)?;
        self.finished_unix = unix_now();
        write_json(&dir.join(MANIFEST_FILE), &self)?;
        Ok(self)
    }
}

fn digest_tree(dir: &Path) -> Result<Vec<OutputFile>> {
    let mut out = Vec::new();
    for entry in walkdir::WalkDir::new(dir).sort_by_file_name() {
        let entry = entry.map_err(|e| CliError::format(dir, e))?;
        if !entry.file_type().is_file() {
            continue;
        }
        let rel = entry.path().strip_prefix(dir).expect("walk stays under its root");
        let rel = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
        if rel == MANIFEST_FILE {
            continue;
        }
        let bytes = std::fs::read(entry.path()).map_err(|e| CliError::read(entry.path(), e))?;
        out.push(OutputFile { path: rel, sha256: digest_hex(&bytes) });
    }
    Ok(out)
}

pub fn load(path: &Path) -> Result<RunManifest> {
    let file = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
    read_json(&file)
}

/// Recomputes the output digests of `dir` against its manifest.
pub fn verify(dir: &Path) -> Result<RunManifest> {
    let m = load(dir)?;
    let now = digest_tree(dir)?;
    if now != m.outputs {
        let changed: Vec<&str> = m
            .outputs
            .iter()
            .filter(|o| !now.contains(o))
            .map(|o| o.path.as_str())
            .chain(now.iter().filter(|o| !m.outputs.contains(o)).map(|o| o.path.as_str()))
            .collect();
        return Err(CliError::HashMismatch(format!(
            "{}: outputs differ from manifest: {}",
            dir.display(),
            changed.join(", ")
        )));
    }
    Ok(m)
}

/// The recorded arguments with the value of `--out` replaced.
pub fn with_out(args: &[String], out: &Path) -> Vec<String> {
    let mut v = args.to_vec();
    let out = out.display().to_string();
    if let Some(i) = v.iter().position(|a| a == "--out") {
        if i + 1 < v.len() {
            v[i + 1] = out;
        }
    } else {
        v.push("--out".into());
        v.push(out);
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verify_detects_edits() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("a")).unwrap();
        std::fs::write(dir.path().join("a/x.csv"), "1\n").unwrap();
        std::fs::write(dir.path().join("b.json"), "{}").unwrap();
        let m = RunManifest::start("generate", vec!["generate".into()], 3, None).finish(dir.path()).unwrap();
        assert_eq!(m.outputs.iter().map(|o| o.path.as_str()).collect::<Vec<_>>(), ["a/x.csv", "b.json"]);
        verify(dir.path()).unwrap();
        std::fs::write(dir.path().join("a/x.csv"), "2\n").unwrap();
        assert!(matches!(verify(dir.path()), Err(CliError::HashMismatch(_))));
    }

    #[test]
    fn out_substitution() {
        let args: Vec<String> = ["evaluate", "--out", "/a", "--seed", "1"].iter().map(|s| s.to_string()).collect();
        assert_eq!(with_out(&args, Path::new("/b"))[2], "/b");
        assert_eq!(with_out(&args[..1], Path::new("/b")), ["evaluate", "--out", "/b"]);
    }
}
