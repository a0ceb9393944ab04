use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Serialize;
use serde_json::{json, Value};

pub const TOOL: &str = env!("CARGO_PKG_NAME");
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Where a run writes, plus the metadata that goes into every artifact.
pub struct Sink {
    pub dir: PathBuf,
    pub echo: Value,
    pub deterministic: bool,
    pub threads: usize,
}

impl Sink {
    pub fn new(dir: PathBuf, echo: Value, deterministic: bool, threads: usize) -> std::io::Result<Self> {
        fs::create_dir_all(&dir)?;
        Ok(Self {
            dir,
            echo,
            deterministic,
            threads,
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn envelope<T: Serialize>(&self, seeds: &[u64], result: &T) -> Value {
        json!({
            "tool": { "name": TOOL, "version": VERSION },
            "config": self.echo,
            "deterministic": self.deterministic,
            "seed_lineage": lineage(seeds),
            "result": result,
        })
    }

    /// Writes `<name>.json` and the timing sidecar `<name>.timing.json`.
    pub fn write_json<T: Serialize>(&self, name: &str, seeds: &[u64], result: &T, wall: Duration) -> std::io::Result<PathBuf> {
        let path = self.path(&format!("{name}.json"));
        let mut text = serde_json::to_string_pretty(&self.envelope(seeds, result))?;
        text.push('\n');
        fs::write(&path, text)?;
        let sidecar = json!({
            "artifact": format!("{name}.json"),
            "wall_time": wall.as_secs_f64(),
            "threads": self.threads,
        });
        fs::write(self.path(&format!("{name}.timing.json")), serde_json::to_string_pretty(&sidecar)? + "\n")?;
        Ok(path)
    }

    /// CSV files get the config echo as `#` comment lines above the header.
    pub fn write_csv(&self, name: &str, seeds: &[u64], body: &[u8]) -> std::io::Result<PathBuf> {
        let path = self.path(&format!("{name}.csv"));
        let mut f = fs::File::create(&path)?;
        writeln!(f, "# {TOOL} {VERSION}")?;
        writeln!(f, "# seed_lineage: {}", lineage(seeds))?;
        writeln!(f, "# config: {}", self.echo)?;
        f.write_all(body)?;
        Ok(path)
    }

    pub fn write_bytes(&self, name: &str, body: &[u8]) -> std::io::Result<PathBuf> {
        let path = self.path(name);
        fs::write(&path, body)?;
        Ok(path)
    }
}

/// Each seed drives a ChaCha8 generator; counts, positions and marks use
/// separate streams so changing one draw never shifts another.
pub fn lineage(seeds: &[u64]) -> Value {
    json!({
        "rng": "chacha8",
        "seeds": seeds,
        "streams": { "count": 0, "positions": 1, "marks": 2 },
    })
}

pub fn write_residual_history(dir: &Path, seed: Option<u64>, history: &[f64]) -> std::io::Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join("residual_history.csv");
    let mut f = fs::File::create(&path)?;
    if let Some(s) = seed {
        writeln!(f, "# seed: {s}")?;
    }
    writeln!(f, "iteration,relative_residual")?;
    for (k, r) in history.iter().enumerate() {
        writeln!(f, "{k},{r:e}")?;
    }
    Ok(path)
}
