//! Stage-completion records and output digests.

use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::config::Stage;
use crate::error::{DhaError, IoContext, Result};

pub const RECORD_FILE: &str = "stage.done";

#[derive(Clone, Debug, PartialEq)]
pub struct StageRecord {
    pub stage: Stage,
    pub config_hash: String,
    pub seed: u64,
    pub wall_time_s: f64,
    /// Digest of every file in the stage directory except the record.
    pub output_sha: String,
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> DhaError {
    DhaError::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

impl StageRecord {
    pub fn path(dir: &Path) -> PathBuf {
        dir.join(RECORD_FILE)
    }

    pub fn to_text(&self) -> String {
        format!(
            "stage = {}\nconfig_hash = {}\nseed = {}\nwall_time_s = {}\noutput_sha = {}\n",
            self.stage.as_str(),
            self.config_hash,
            self.seed,
            self.wall_time_s,
            self.output_sha
        )
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut fields = [None, None, None, None, None];
        const KEYS: [&str; 5] = ["stage", "config_hash", "seed", "wall_time_s", "output_sha"];
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| parse_err(path, i + 1, "expected `key = value`"))?;
            let idx = KEYS
                .iter()
                .position(|&key| key == k.trim())
                .ok_or_else(|| parse_err(path, i + 1, format!("unknown field `{}`", k.trim())))?;
            fields[idx] = Some(v.trim().to_string());
        }
        let get = |i: usize| fields[i].clone().ok_or_else(|| parse_err(path, 0, format!("missing field `{}`", KEYS[i])));
        let stage_name = get(0)?;
        let stage = Stage::ALL
            .into_iter()
            .find(|s| s.as_str() == stage_name)
            .ok_or_else(|| parse_err(path, 0, format!("unknown stage `{stage_name}`")))?;
        Ok(Self {
            stage,
            config_hash: get(1)?,
            seed: get(2)?.parse().map_err(|_| parse_err(path, 0, "bad seed"))?,
            wall_time_s: get(3)?.parse().map_err(|_| parse_err(path, 0, "bad wall time"))?,
            output_sha: get(4)?,
        })
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = Self::path(dir);
        if !path.exists() {
            return Err(DhaError::Missing(path));
        }
        Self::parse(&fs::read_to_string(&path).at(&path)?, &path)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = Self::path(dir);
        fs::write(&path, self.to_text()).at(&path)
    }

    pub fn verify_hash(&self, dir: &Path, expected_hash: &str) -> Result<()> {
        if self.config_hash != expected_hash {
            return Err(DhaError::HashMismatch {
                path: Self::path(dir),
                expected: expected_hash.into(),
                found: self.config_hash.clone(),
            });
        }
        Ok(())
    }

    /// Fails unless the record matches `expected_hash` and the directory
    /// still holds exactly the outputs it was written with.
    pub fn verify(&self, dir: &Path, expected_hash: &str) -> Result<()> {
        self.verify_hash(dir, expected_hash)?;
        let actual = digest_dir(dir)?;
        if actual != self.output_sha {
            return Err(DhaError::HashMismatch {
                path: dir.to_path_buf(),
                expected: self.output_sha.clone(),
                found: actual,
            });
        }
        Ok(())
    }
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir).at(dir)? {
        let entry = entry.at(dir)?;
        let p = entry.path();
        if entry.file_type().at(&p)?.is_dir() {
            collect_files(root, &p, out)?;
        } else if p != root.join(RECORD_FILE) {
            out.push(p);
        }
    }
    Ok(())
}

/// SHA-256 over the sorted relative paths and contents of every file under
/// `dir`, excluding the completion record.
pub fn digest_dir(dir: &Path) -> Result<String> {
    let mut files = Vec::new();
    collect_files(dir, dir, &mut files)?;
    files.sort();
    let mut h = Sha256::new();
    for f in files {
        let rel = f.strip_prefix(dir).expect("file under dir");
        h.update(rel.to_string_lossy().as_bytes());
        h.update([0u8]);
        let bytes = fs::read(&f).at(&f)?;
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(hex::encode(h.finalize()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_round_trip_and_tamper_detection() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join("sub")).unwrap();
        fs::write(dir.path().join("sub/a.txt"), "alpha").unwrap();
        let rec = StageRecord {
            stage: Stage::Discover,
            config_hash: "abc".into(),
            seed: 7,
            wall_time_s: 1.25,
            output_sha: digest_dir(dir.path()).unwrap(),
        };
        rec.write(dir.path()).unwrap();
        let back = StageRecord::read(dir.path()).unwrap();
        assert_eq!(back, rec);
        back.verify(dir.path(), "abc").unwrap();
        assert!(matches!(back.verify(dir.path(), "abd"), Err(DhaError::HashMismatch { .. })));
        fs::write(dir.path().join("sub/a.txt"), "beta").unwrap();
        assert!(matches!(back.verify(dir.path(), "abc"), Err(DhaError::HashMismatch { .. })));
    }

    #[test]
    fn missing_record_names_the_file() {
        let dir = tempfile::tempdir().unwrap();
        match StageRecord::read(dir.path()) {
            Err(DhaError::Missing(p)) => assert!(p.ends_with(RECORD_FILE)),
            other => panic!("{other:?}"),
        }
    }
}
