use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut file = fs::File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf).with_context(|| format!("cannot read {}", path.display()))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    /// Arguments after the program name, as given.
    pub argv: Vec<String>,
    /// Working directory the arguments are relative to.
    pub cwd: PathBuf,
    /// Fully resolved options, defaults included.
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    /// Input path to sha256.
    pub inputs: BTreeMap<String, String>,
    /// Output file name to sha256.
    pub outputs: BTreeMap<String, String>,
    pub status: String,
    pub wall_time_s: f64,
    /// Counters that vary between runs, such as timings.
    pub stats: serde_json::Map<String, serde_json::Value>,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("cannot read manifest {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("{} is not a run manifest", path.display()))
    }
}

/// An output directory with its manifest. The manifest is written before anything else
/// and rewritten with output hashes once the run completes.
pub struct Run {
    dir: PathBuf,
    manifest: RunManifest,
    outputs: Vec<PathBuf>,
    started: Instant,
}

impl Run {
    pub fn start(
        dir: &Path,
        force: bool,
        subcommand: &str,
        argv: Vec<String>,
        config: serde_json::Value,
        seed: Option<u64>,
        inputs: &[&Path],
    ) -> Result<Self> {
        prepare_dir(dir, force)?;
        let mut hashes = BTreeMap::new();
        for path in inputs {
            hashes.insert(path.display().to_string(), sha256_file(path)?);
        }
        let manifest = RunManifest {
            tool: "fleetsense".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            subcommand: subcommand.into(),
            argv,
            cwd: std::env::current_dir().context("cannot determine the working directory")?,
            config,
            seed,
            inputs: hashes,
            outputs: BTreeMap::new(),
            status: "running".into(),
            wall_time_s: 0.0,
            stats: serde_json::Map::new(),
        };
        let run = Run {
            dir: dir.to_path_buf(),
            manifest,
            outputs: Vec::new(),
            started: Instant::now(),
        };
        run.write_manifest()?;
        Ok(run)
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn record(&mut self, path: PathBuf) {
        self.outputs.push(path);
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.path(name);
        fs::write(&path, contents).with_context(|| format!("cannot write {}", path.display()))?;
        self.record(path);
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        self.write(name, &(serde_json::to_string_pretty(value)? + "\n"))
    }

    pub fn stat(&mut self, key: &str, value: impl Into<serde_json::Value>) {
        self.manifest.stats.insert(key.into(), value.into());
    }

    fn write_manifest(&self) -> Result<()> {
        let path = self.path(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&self.manifest)? + "\n";
        fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))
    }

    pub fn finish(mut self) -> Result<RunManifest> {
        for path in &self.outputs {
            let name = path.strip_prefix(&self.dir).unwrap_or(path).display().to_string();
            self.manifest.outputs.insert(name, sha256_file(path)?);
        }
        self.manifest.status = "completed".into();
        self.manifest.wall_time_s = self.started.elapsed().as_secs_f64();
        self.write_manifest()?;
        Ok(self.manifest)
    }
}

fn prepare_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        if !dir.is_dir() {
            bail!("{} exists and is not a directory", dir.display());
        }
        let non_empty = fs::read_dir(dir)
            .with_context(|| format!("cannot list {}", dir.display()))?
            .next()
            .is_some();
        if non_empty && !force {
            bail!("output directory {} is not empty; pass --force to write into it", dir.display());
        }
    } else {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    Ok(())
}
