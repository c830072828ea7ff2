//! Workspace layout, manifest and lock.
//!
//! ```text
//! WORKSPACE/
//!   manifest.tsv            KIND<TAB>NAME<TAB>PATH<TAB>SHA256
//!   bpe.model  vocab.src  vocab.tgt
//!   corpus/NAME.src|.tgt    segmented (and tagged) training corpora
//!   eval/NAME.src|.tgt|.ref segmented dev/test sets; .ref is unsegmented
//!   selected/NAME.scores.tsv
//!   runs/RUN/best.ckpt final.ckpt report.csv
//! ```
//!
//! `input` rows checksum the files and settings that produced the
//! workspace; commands that read it refuse to run when they changed.

use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use sha2::{Digest, Sha256};

pub const MANIFEST: &str = "manifest.tsv";
const MANIFEST_HEADER: &str = "#domadapt-manifest 1";
const LOCK: &str = ".lock";

pub fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn sha256_text(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub kind: String,
    pub name: String,
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn push(&mut self, kind: &str, name: &str, path: &str, sha256: String) {
        self.entries.push(ManifestEntry {
            kind: kind.into(),
            name: name.into(),
            path: path.into(),
            sha256,
        });
    }

    pub fn inputs(&self) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(|e| e.kind != "output")
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{MANIFEST_HEADER}\n");
        for e in &self.entries {
            out.push_str(&format!("{}\t{}\t{}\t{}\n", e.kind, e.name, e.path, e.sha256));
        }
        out
    }

    pub fn parse(text: &str) -> anyhow::Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(MANIFEST_HEADER) {
            bail!("manifest: missing header");
        }
        let entries = lines
            .enumerate()
            .map(|(i, l)| {
                let f: Vec<&str> = l.split('\t').collect();
                if f.len() != 4 {
                    return Err(anyhow!("manifest line {}: expected 4 fields", i + 2));
                }
                Ok(ManifestEntry {
                    kind: f[0].into(),
                    name: f[1].into(),
                    path: f[2].into(),
                    sha256: f[3].into(),
                })
            })
            .collect::<anyhow::Result<_>>()?;
        Ok(Self { entries })
    }
}

/// Paths inside one workspace directory.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub root: PathBuf,
}

impl Workspace {
    pub fn new(root: PathBuf) -> Self {
        Self { root }
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn corpus(&self, name: &str) -> (PathBuf, PathBuf) {
        let d = self.root.join("corpus");
        (d.join(format!("{name}.src")), d.join(format!("{name}.tgt")))
    }

    /// Segmented source, segmented target and unsegmented reference.
    pub fn eval_set(&self, name: &str) -> (PathBuf, PathBuf, PathBuf) {
        let d = self.root.join("eval");
        (
            d.join(format!("{name}.src")),
            d.join(format!("{name}.tgt")),
            d.join(format!("{name}.ref")),
        )
    }

    pub fn run_dir(&self, run: &str) -> PathBuf {
        self.root.join("runs").join(run)
    }

    pub fn read_manifest(&self) -> anyhow::Result<Manifest> {
        let p = self.path(MANIFEST);
        let text = fs::read_to_string(&p)
            .with_context(|| format!("reading {} (run `domadapt prepare` first)", p.display()))?;
        Manifest::parse(&text)
    }

    pub fn write_manifest(&self, m: &Manifest) -> anyhow::Result<()> {
        write_file(&self.path(MANIFEST), m.to_text().as_bytes())
    }

    /// Relative path of a workspace file, for manifest rows.
    pub fn relative(&self, p: &Path) -> String {
        p.strip_prefix(&self.root).unwrap_or(p).display().to_string()
    }

    pub fn lock(&self) -> anyhow::Result<WorkspaceLock> {
        fs::create_dir_all(&self.root).with_context(|| format!("creating {}", self.root.display()))?;
        let p = self.path(LOCK);
        OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&p)
            .with_context(|| format!("workspace {} is locked by another command ({})", self.root.display(), p.display()))?;
        Ok(WorkspaceLock(p))
    }
}

/// Removes the lock file when dropped.
#[derive(Debug)]
pub struct WorkspaceLock(PathBuf);

impl Drop for WorkspaceLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

pub fn write_file(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}
