use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use gtta_core::io::file_digest;
use serde::{Deserialize, Serialize};

pub const FILE_NAME: &str = "provenance.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    /// The command line after config merging, without thread or logging flags.
    pub argv: Vec<String>,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    /// Input path to content hash.
    pub inputs: BTreeMap<String, String>,
    /// Output file name (relative to the output directory) to content hash.
    pub outputs: BTreeMap<String, String>,
}

/// Files produced by one command.
#[derive(Debug, Default)]
pub struct Outcome {
    pub out_dir: PathBuf,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub seed: Option<u64>,
}

impl Outcome {
    pub fn new(out_dir: &Path, seed: Option<u64>) -> Self {
        Self {
            out_dir: out_dir.to_path_buf(),
            seed,
            ..Self::default()
        }
    }

    pub fn input(&mut self, p: &Path) {
        self.inputs.push(p.to_path_buf());
    }

    /// Registers `name` inside the output directory and returns its full path.
    pub fn output(&mut self, name: &str) -> PathBuf {
        let p = self.out_dir.join(name);
        self.outputs.push(p.clone());
        p
    }
}

pub fn digest_map(paths: &[PathBuf], relative_to: Option<&Path>) -> Result<BTreeMap<String, String>> {
    paths
        .iter()
        .map(|p| {
            let key = match relative_to {
                Some(base) => p.strip_prefix(base).unwrap_or(p).display().to_string(),
                None => p.display().to_string(),
            };
            let d = file_digest(p).with_context(|| format!("hashing {}", p.display()))?;
            Ok((key, d))
        })
        .collect()
}

pub fn record(outcome: &Outcome, argv: Vec<String>, config: serde_json::Value) -> Result<Provenance> {
    let prov = Provenance {
        tool: "gtta".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        argv,
        config,
        seed: outcome.seed,
        inputs: digest_map(&outcome.inputs, None)?,
        outputs: digest_map(&outcome.outputs, Some(&outcome.out_dir))?,
    };
    let path = outcome.out_dir.join(FILE_NAME);
    fs::write(&path, serde_json::to_string_pretty(&prov)? + "\n").with_context(|| format!("writing {}", path.display()))?;
    Ok(prov)
}

pub fn load(path: &Path) -> Result<Provenance> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Drops flags that must not change results (`--threads`, `--verbose`).
pub fn canonical_argv(argv: &[String]) -> Vec<String> {
    let mut out = Vec::with_capacity(argv.len());
    let mut skip = false;
    for a in argv.iter().skip(1) {
        if skip {
            skip = false;
            continue;
        }
        if a == "--threads" {
            skip = true;
        } else if a.starts_with("--threads=") || a == "--verbose" || (a.starts_with('-') && !a.starts_with("--") && a[1..].chars().all(|c| c == 'v')) {
            continue;
        } else {
            out.push(a.clone());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_argv_strips_runtime_flags() {
        let argv: Vec<String> = ["gtta", "--threads", "4", "-vv", "fit", "--data", "d", "--threads=2"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        assert_eq!(canonical_argv(&argv), vec!["fit", "--data", "d"]);
    }
}
