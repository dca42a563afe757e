//! Run manifests.
//!
//! The manifest is itself a valid config file: the resolved configuration is
//! written in its sections and the bookkeeping sections are skipped by the
//! loader, so `--config <run>/manifest.txt` replays a run.

use crate::config::Config;
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::path::Path;

/// Git-style object hash: SHA-256 of `blob <len>\0` followed by the bytes.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    let digest = h.finalize();
    let mut out = String::from("sha256:");
    for b in digest.iter() {
        let _ = write!(out, "{b:02x}");
    }
    out
}

pub fn file_hash(path: &Path) -> std::io::Result<String> {
    Ok(content_hash(&std::fs::read(path)?))
}

#[derive(Clone, Debug)]
pub struct RunManifest {
    pub command: String,
    pub config: Config,
    /// `(path, hash)` of every file read.
    pub inputs: Vec<(String, String)>,
    pub version: String,
    pub threads: usize,
    pub wall_seconds: f64,
    pub status: String,
    /// `(file name, hash)`; timing files are listed as `volatile`.
    pub outputs: Vec<(String, String)>,
    pub warnings: Vec<String>,
}

impl RunManifest {
    pub fn to_text(&self) -> String {
        let mut s = String::from("# stripeforge run manifest\n[run]\n");
        let _ = writeln!(s, "command = {}", self.command);
        let _ = writeln!(s, "version = {}", self.version);
        let _ = writeln!(s, "threads = {}", self.threads);
        let _ = writeln!(s, "wall_seconds = {:.3}", self.wall_seconds);
        let _ = writeln!(s, "status = {}", self.status);
        s.push('\n');
        s.push_str(&self.config.to_text());
        s.push_str("\n[inputs]\n");
        for (p, h) in &self.inputs {
            let _ = writeln!(s, "{p} = {h}");
        }
        s.push_str("\n[outputs]\n");
        for (p, h) in &self.outputs {
            let _ = writeln!(s, "{p} = {h}");
        }
        s.push_str("\n[warnings]\n");
        for (k, w) in self.warnings.iter().enumerate() {
            let _ = writeln!(s, "{} = {}", k + 1, w.replace('\n', " "));
        }
        s
    }
}

/// `(file, hash)` pairs of the `[outputs]` section of a manifest.
pub fn output_hashes(manifest: &str) -> Vec<(String, String)> {
    let mut in_outputs = false;
    let mut out = Vec::new();
    for line in manifest.lines() {
        let line = line.trim();
        if line.starts_with('[') {
            in_outputs = line == "[outputs]";
        } else if in_outputs {
            if let Some((k, v)) = line.split_once('=') {
                out.push((k.trim().to_string(), v.trim().to_string()));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_matches_git_sha256_object_id() {
        // `git hash-object --object-format=sha256` of an empty file
        assert_eq!(
            content_hash(b""),
            "sha256:473a0f4c3be8a93681a267e3b1e9a7dcda1185436fe141f7749120a303721813"
        );
        assert_ne!(content_hash(b"a"), content_hash(b"b"));
    }

    #[test]
    fn manifest_reads_back_as_config_and_lists_outputs() {
        let defaults = [("params.tau", "0.5")];
        let mut cfg = Config::with_defaults(&defaults);
        cfg.set("params.tau", "0.25").unwrap();
        let m = RunManifest {
            command: "solve1d".into(),
            config: cfg.clone(),
            inputs: vec![],
            version: "0.1.0".into(),
            threads: 2,
            wall_seconds: 0.5,
            status: "ok".into(),
            outputs: vec![("a.csv".into(), content_hash(b"x"))],
            warnings: vec!["L is odd".into()],
        };
        let text = m.to_text();
        let mut back = Config::with_defaults(&defaults);
        back.load_str(&text).unwrap();
        assert_eq!(back.raw("params.tau"), "0.25");
        assert_eq!(output_hashes(&text), m.outputs);
    }
}
