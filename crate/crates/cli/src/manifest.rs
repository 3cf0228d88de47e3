//! `run.json`: what a command read and wrote, with content digests, so the
//! run can be repeated and checked byte for byte.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const MANIFEST: &str = "run.json";
pub const TIMINGS: &str = "timings.json";
/// Stands in for the output directory in recorded arguments.
pub const OUT_PLACEHOLDER: &str = "{out}";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    /// Command line without the program name, output directory replaced by
    /// the placeholder.
    pub args: Vec<String>,
    pub seed: u64,
    pub inputs: Vec<FileDigest>,
    /// Paths relative to the output directory.
    pub outputs: Vec<FileDigest>,
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

/// Drops any `--out` from `args` and appends `--out {out}`.
pub fn template_args(args: &[String]) -> Vec<String> {
    let mut out = Vec::with_capacity(args.len() + 2);
    let mut it = args.iter();
    while let Some(a) = it.next() {
        if a == "--out" {
            it.next();
        } else if !a.starts_with("--out=") {
            out.push(a.clone());
        }
    }
    out.push("--out".into());
    out.push(OUT_PLACEHOLDER.into());
    out
}

pub fn instantiate_args(args: &[String], out: &Path) -> Vec<String> {
    let out = out.to_string_lossy();
    args.iter().map(|a| a.replace(OUT_PLACEHOLDER, &out)).collect()
}

/// Digests of every file under `dir` except the manifest and timings,
/// sorted by relative path.
pub fn digest_outputs(dir: &Path) -> Result<Vec<FileDigest>, CliError> {
    let mut files = Vec::new();
    collect(dir, dir, &mut files)?;
    files.sort();
    files
        .into_iter()
        .map(|rel| {
            Ok(FileDigest {
                sha256: sha256_file(&dir.join(&rel))?,
                path: rel,
            })
        })
        .collect()
}

fn collect(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<(), CliError> {
    for entry in fs::read_dir(dir).map_err(|e| CliError::io(dir, e))? {
        let entry = entry.map_err(|e| CliError::io(dir, e))?;
        let path = entry.path();
        if path.is_dir() {
            collect(root, &path, out)?;
        } else {
            let rel = path.strip_prefix(root).expect("under root").to_path_buf();
            if rel != Path::new(MANIFEST) && rel.file_name() != Some(TIMINGS.as_ref()) {
                out.push(rel);
            }
        }
    }
    Ok(())
}

pub fn digest_inputs(inputs: &[PathBuf]) -> Result<Vec<FileDigest>, CliError> {
    let mut paths = inputs.to_vec();
    paths.sort();
    paths.dedup();
    paths
        .into_iter()
        .map(|path| {
            Ok(FileDigest {
                sha256: sha256_file(&path)?,
                path,
            })
        })
        .collect()
}

/// Lists every difference between two digest sets.
pub fn diff(expected: &[FileDigest], actual: &[FileDigest]) -> Vec<String> {
    let mut problems = Vec::new();
    for e in expected {
        match actual.iter().find(|a| a.path == e.path) {
            None => problems.push(format!("{} missing", e.path.display())),
            Some(a) if a.sha256 != e.sha256 => problems.push(format!("{} differs", e.path.display())),
            _ => {}
        }
    }
    for a in actual {
        if !expected.iter().any(|e| e.path == a.path) {
            problems.push(format!("{} unexpected", a.path.display()));
        }
    }
    problems
}
