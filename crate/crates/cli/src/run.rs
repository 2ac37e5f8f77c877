use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

pub const METRICS_TXT: &str = "metrics.txt";
pub const METRICS_JSONL: &str = "metrics.json-lines";
pub const MANIFEST: &str = "manifest";

/// One row of a metrics table, keys in insertion order.
#[derive(Debug, Clone, Default)]
pub struct Row(Vec<(String, Value)>);

impl Row {
    pub fn new() -> Self {
        Row::default()
    }

    pub fn with(mut self, key: &str, value: impl Serialize) -> Self {
        self.0.push((key.to_string(), serde_json::to_value(value).expect("metric serializes")));
        self
    }
}

fn render(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Number(n) => match n.as_f64() {
            Some(f) if n.is_f64() => format!("{f:.6}"),
            _ => n.to_string(),
        },
        other => other.to_string(),
    }
}

/// Output directory, input/output digests and the run manifest.
pub struct Run {
    pub out: PathBuf,
    command: String,
    seed: u64,
    started: Instant,
    config: Value,
    config_file: Option<PathBuf>,
    flag_overrides: Vec<String>,
    backend: Option<String>,
    inputs: BTreeMap<String, String>,
    outputs: Vec<String>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl Run {
    pub fn start(out: &Path, command: &str, seed: u64) -> Result<Self> {
        std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        Ok(Run {
            out: out.to_path_buf(),
            command: command.to_string(),
            seed,
            started: Instant::now(),
            config: Value::Null,
            config_file: None,
            flag_overrides: Vec::new(),
            backend: None,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
        })
    }

    pub fn set_config(&mut self, config: impl Serialize, file: Option<&Path>, overrides: Vec<String>) {
        self.config = serde_json::to_value(config).expect("config serializes");
        self.config_file = file.map(Path::to_path_buf);
        self.flag_overrides = overrides;
    }

    pub fn set_backend(&mut self, fingerprint: String) {
        self.backend = Some(fingerprint);
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        let digest = sha256_file(path)?;
        self.inputs.insert(path.display().to_string(), digest);
        Ok(())
    }

    /// Records a file written under the output directory.
    pub fn output(&mut self, name: &str) {
        if !self.outputs.iter().any(|o| o == name) {
            self.outputs.push(name.to_string());
        }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.path(name);
        std::fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        self.output(name);
        Ok(())
    }

    /// Writes `metrics.txt` (aligned table) and `metrics.json-lines`.
    pub fn metrics(&mut self, rows: &[Row]) -> Result<()> {
        let mut jsonl = String::new();
        for row in rows {
            let map: Map<String, Value> = row.0.iter().cloned().collect();
            jsonl.push_str(&serde_json::to_string(&map).expect("row serializes"));
            jsonl.push('\n');
        }
        let mut text = String::new();
        if rows.len() == 1 {
            for (k, v) in &rows[0].0 {
                let _ = writeln!(text, "{k}: {}", render(v));
            }
        } else if let Some(first) = rows.first() {
            let keys: Vec<&str> = first.0.iter().map(|(k, _)| k.as_str()).collect();
            let cells: Vec<Vec<String>> = rows
                .iter()
                .map(|r| r.0.iter().map(|(_, v)| render(v)).collect())
                .collect();
            let widths: Vec<usize> = (0..keys.len())
                .map(|c| cells.iter().map(|r| r.get(c).map_or(0, String::len)).chain([keys[c].len()]).max().unwrap_or(0))
                .collect();
            let line = |items: Vec<&str>| {
                items
                    .iter()
                    .zip(&widths)
                    .map(|(s, w)| format!("{s:>w$}"))
                    .collect::<Vec<_>>()
                    .join("  ")
            };
            let _ = writeln!(text, "{}", line(keys.clone()));
            for r in &cells {
                let _ = writeln!(text, "{}", line(r.iter().map(String::as_str).collect()));
            }
        }
        self.write(METRICS_TXT, &text)?;
        self.write(METRICS_JSONL, &jsonl)
    }

    pub fn finish(self) -> Result<()> {
        let mut outputs = BTreeMap::new();
        for name in &self.outputs {
            let path = self.out.join(name);
            if path.is_file() {
                outputs.insert(name.clone(), sha256_file(&path)?);
            }
        }
        let manifest = serde_json::json!({
            "command": self.command,
            "config": self.config,
            "config_file": self.config_file.as_ref().map(|p| p.display().to_string()),
            "flag_overrides": self.flag_overrides,
            "inputs": self.inputs,
            "backend": self.backend,
            "seed": self.seed,
            "tool_version": env!("CARGO_PKG_VERSION"),
            "duration_seconds": self.started.elapsed().as_secs_f64(),
            "outputs": outputs,
        });
        let path = self.out.join(MANIFEST);
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }
}
