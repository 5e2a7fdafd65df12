//! Atomic output staging and the per-directory run manifest.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tempfile::{Builder, NamedTempFile};

use crate::error::{CliError, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

/// One command run that wrote into the directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub command: String,
    pub args: Vec<String>,
    pub config_paths: Vec<String>,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub tool_version: String,
    pub threads: usize,
    pub started_unix_secs: u64,
    pub elapsed_secs: f64,
}

/// Every run that wrote into a directory is listed once; a later run that
/// rewrites the same files replaces the earlier entry.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub runs: Vec<RunEntry>,
}

fn file_digest(path: &Path) -> Result<FileDigest> {
    let mut f = fs::File::open(path).map_err(|e| CliError::bad_input(format!("{}: {e}", path.display())))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    let mut bytes = 0u64;
    loop {
        let n = f.read(&mut buf).map_err(|e| CliError::bad_input(format!("{}: {e}", path.display())))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
        bytes += n as u64;
    }
    Ok(FileDigest {
        path: path.display().to_string(),
        sha256: hex::encode(hasher.finalize()),
        bytes,
    })
}

/// A hidden temporary with ordinary file permissions.
fn temp_in(dir: &Path) -> std::io::Result<NamedTempFile> {
    let mut b = Builder::new();
    b.prefix(".sigrisk-").suffix(".tmp");
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        b.permissions(fs::Permissions::from_mode(0o644));
    }
    b.tempfile_in(dir)
}

/// Provenance collected while a command runs.
pub struct Run {
    command: String,
    args: Vec<String>,
    config_paths: Vec<String>,
    seeds: BTreeMap<String, u64>,
    inputs: Vec<FileDigest>,
    started: SystemTime,
    clock: Instant,
}

impl Run {
    pub fn new(command: &str) -> Run {
        Run {
            command: command.to_string(),
            args: std::env::args().skip(1).collect(),
            config_paths: Vec::new(),
            seeds: BTreeMap::new(),
            inputs: Vec::new(),
            started: SystemTime::now(),
            clock: Instant::now(),
        }
    }

    pub fn config(&mut self, path: &Path) -> Result<()> {
        self.config_paths.push(path.display().to_string());
        self.input(path)
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        let d = file_digest(path)?;
        self.inputs.push(d);
        Ok(())
    }

    pub fn seed(&mut self, name: &str, seed: u64) {
        self.seeds.insert(name.to_string(), seed);
    }
}

/// Files written to temporaries next to their targets and renamed into
/// place only when the command has succeeded.
pub struct Outputs {
    dir: PathBuf,
    staged: Vec<(PathBuf, NamedTempFile)>,
}

impl Outputs {
    /// Outputs for directory `dir`, which is created if needed.
    pub fn new(dir: &Path) -> Result<Outputs> {
        fs::create_dir_all(dir).map_err(|e| CliError::bad_input(format!("{}: {e}", dir.display())))?;
        Ok(Outputs {
            dir: dir.to_path_buf(),
            staged: Vec::new(),
        })
    }

    /// Outputs for a single file, staged in its parent directory.
    pub fn for_file(path: &Path) -> Result<Outputs> {
        let dir = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        if path.file_name().is_none() {
            return Err(CliError::bad_input(format!("{} is not a file path", path.display())));
        }
        if path.file_name().is_some_and(|n| n == MANIFEST_FILE) {
            return Err(CliError::bad_input(format!("{MANIFEST_FILE} is reserved for the run manifest")));
        }
        Outputs::new(&dir)
    }

    /// Stage `bytes` for `name`, a file name inside the output directory.
    pub fn stage(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let target = self.dir.join(name);
        let io = |e: std::io::Error| CliError::bad_input(format!("{}: {e}", target.display()));
        let mut tmp = temp_in(&self.dir).map_err(io)?;
        tmp.write_all(bytes).map_err(io)?;
        tmp.as_file().sync_all().map_err(io)?;
        self.staged.retain(|(p, _)| p != &target);
        self.staged.push((target, tmp));
        Ok(())
    }

    pub fn stage_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.stage(name, &bytes)
    }

    /// Rename every staged file into place, then rewrite the manifest. If a
    /// rename fails, files already moved are removed again.
    pub fn commit(self, run: Run) -> Result<()> {
        let mut placed: Vec<PathBuf> = Vec::new();
        let mut outputs = Vec::new();
        for (target, tmp) in self.staged {
            if let Err(e) = tmp.persist(&target) {
                for p in &placed {
                    let _ = fs::remove_file(p);
                }
                return Err(CliError::bad_input(format!("{}: {}", target.display(), e.error)));
            }
            placed.push(target.clone());
            outputs.push(file_digest(&target)?);
        }
        let manifest_path = self.dir.join(MANIFEST_FILE);
        let mut manifest: RunManifest = fs::read(&manifest_path)
            .ok()
            .and_then(|b| serde_json::from_slice(&b).ok())
            .unwrap_or_default();
        manifest.tool = "sigrisk".into();
        manifest
            .runs
            .retain(|r| !r.outputs.iter().any(|o| outputs.iter().any(|n| n.path == o.path)));
        manifest.runs.push(RunEntry {
            command: run.command,
            args: run.args,
            config_paths: run.config_paths,
            seeds: run.seeds,
            inputs: run.inputs,
            outputs,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            threads: rayon::current_num_threads(),
            started_unix_secs: run.started.duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
            elapsed_secs: run.clock.elapsed().as_secs_f64(),
        });
        let mut bytes = serde_json::to_vec_pretty(&manifest)?;
        bytes.push(b'\n');
        let mut tmp = temp_in(&self.dir)?;
        tmp.write_all(&bytes)?;
        tmp.persist(&manifest_path)
            .map_err(|e| CliError::bad_input(format!("{}: {}", manifest_path.display(), e.error)))?;
        Ok(())
    }
}
