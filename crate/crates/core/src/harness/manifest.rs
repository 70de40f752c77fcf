//! Run manifests: the command line, the full configuration, hashed inputs
//! and hashed outputs of one CLI run, enough to re-execute it.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.txt";

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    pub command: String,
    /// Arguments after the subcommand, with `--config` and `--out` removed.
    pub args: Vec<String>,
    /// `key = value` configuration lines.
    pub config: String,
    /// `(path as given, sha256)` for every input file read.
    pub inputs: Vec<(String, String)>,
    /// `(name relative to the output directory, sha256)`.
    pub artifacts: Vec<(String, String)>,
}

impl Manifest {
    /// Hashes `files` (which must live under `out`) in name order.
    pub fn record_artifacts(&mut self, out: &Path, files: &[PathBuf]) -> Result<()> {
        let mut rows = Vec::with_capacity(files.len());
        for f in files {
            let rel = f
                .strip_prefix(out)
                .map_err(|_| Error::Config(format!("{} is outside {}", f.display(), out.display())))?;
            rows.push((rel.to_string_lossy().into_owned(), sha256_file(f)?));
        }
        rows.sort();
        rows.dedup();
        self.artifacts = rows;
        Ok(())
    }

    pub fn record_input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push((path.to_string_lossy().into_owned(), sha256_file(path)?));
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("command = {}\n", self.command);
        for a in &self.args {
            let _ = writeln!(s, "arg = {a}");
        }
        for (p, h) in &self.inputs {
            let _ = writeln!(s, "input = {h} {p}");
        }
        s.push_str("[config]\n");
        s.push_str(&self.config);
        s.push_str("[artifacts]\n");
        for (p, h) in &self.artifacts {
            let _ = writeln!(s, "{h} {p}");
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |n: usize, m: &str| Error::Config(format!("manifest line {n}: {m}"));
        let mut m = Manifest::default();
        let mut section = "";
        for (i, line) in text.lines().enumerate() {
            let n = i + 1;
            match line {
                "[config]" | "[artifacts]" => {
                    section = line;
                    continue;
                }
                _ => {}
            }
            match section {
                "" => {
                    let (k, v) = line.split_once(" = ").ok_or_else(|| bad(n, "expected `key = value`"))?;
                    match k {
                        "command" => m.command = v.to_string(),
                        "arg" => m.args.push(v.to_string()),
                        "input" => {
                            let (h, p) = v.split_once(' ').ok_or_else(|| bad(n, "expected `hash path`"))?;
                            m.inputs.push((p.to_string(), h.to_string()));
                        }
                        _ => return Err(bad(n, &format!("unknown key `{k}`"))),
                    }
                }
                "[config]" => {
                    m.config.push_str(line);
                    m.config.push('\n');
                }
                _ => {
                    let (h, p) = line.split_once(' ').ok_or_else(|| bad(n, "expected `hash name`"))?;
                    m.artifacts.push((p.to_string(), h.to_string()));
                }
            }
        }
        if m.command.is_empty() {
            return Err(Error::Config("manifest has no command".into()));
        }
        Ok(m)
    }

    pub fn write(&self, out: &Path) -> Result<PathBuf> {
        let p = out.join(MANIFEST_FILE);
        std::fs::write(&p, self.to_text())?;
        Ok(p)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Names of artifacts whose hash under `dir` differs or which are missing.
    pub fn mismatches(&self, dir: &Path) -> Vec<String> {
        self.artifacts
            .iter()
            .filter(|(p, h)| sha256_file(&dir.join(p)).map_or(true, |got| &got != h))
            .map(|(p, _)| p.clone())
            .collect()
    }
}
