use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stochplate::ergodic_stats::Window;
use stochplate::material::MaterialSpec;
use stochplate::microstructure::{MicrostructureModel, PhaseId};
use stochplate::recovery::{QuadratureOrders, Rect};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Generate,
    SolveCell,
    Effective,
    SweepGamma,
    Isotropy,
    Ergodic,
    Decompose,
    Recovery,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Generate => "generate",
            Command::SolveCell => "solve-cell",
            Command::Effective => "effective",
            Command::SweepGamma => "sweep-gamma",
            Command::Isotropy => "isotropy",
            Command::Ergodic => "ergodic",
            Command::Decompose => "decompose",
            Command::Recovery => "recovery",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridBlock {
    #[serde(rename = "L")]
    pub box_side: f64,
    pub n1: usize,
    pub n2: usize,
    #[serde(default = "default_n3")]
    pub n3: usize,
    #[serde(default = "one")]
    pub gamma: f64,
}

fn default_n3() -> usize {
    4
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    #[serde(default = "default_cg")]
    pub cg: f64,
    #[serde(default)]
    pub max_iterations: Option<usize>,
}

fn default_cg() -> f64 {
    1e-8
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            cg: default_cg(),
            max_iterations: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadBlock {
    #[serde(default)]
    pub b: [[f64; 2]; 2],
    #[serde(default)]
    pub g: [[f64; 2]; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepBlock {
    pub gammas: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IsotropyBlock {
    #[serde(default = "default_rotations")]
    pub rotations: usize,
}

fn default_rotations() -> usize {
    16
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErgodicBlock {
    pub window: Window,
    pub epsilons: Vec<f64>,
    #[serde(default = "default_cells")]
    pub cells_per_epsilon: f64,
    /// Observable value per phase; defaults to the indicator of the first phase.
    #[serde(default)]
    pub observable: Option<BTreeMap<PhaseId, f64>>,
}

fn default_cells() -> f64 {
    8.0
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecomposeKind {
    Mixed,
    SecondOrder,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecomposeBlock {
    pub kind: DecomposeKind,
    #[serde(default = "default_decompose_tol")]
    pub tol: f64,
    /// Fourier band of the random potential in the second-order split.
    #[serde(default = "default_band")]
    pub band: i32,
}

fn default_decompose_tol() -> f64 {
    1e-10
}

fn default_band() -> i32 {
    3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecoveryBlock {
    pub radius: f64,
    #[serde(default = "Rect::unit")]
    pub domain: Rect,
    pub h_schedule: Vec<f64>,
    pub eta: f64,
    pub delta: f64,
    #[serde(default)]
    pub quadrature: QuadratureOrders,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: Command,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<MicrostructureModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub materials: Option<Vec<MaterialSpec>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridBlock>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub load: Option<LoadBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub isotropy: Option<IsotropyBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ergodic: Option<ErgodicBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decompose: Option<DecomposeBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recovery: Option<RecoveryBlock>,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            ConfigError(format!("config error at `{path}`: {}", e.inner()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Blocks each command reads.
    pub fn required_blocks(&self) -> &'static [&'static str] {
        match self.command {
            Command::Generate => &["model", "grid"],
            Command::SolveCell => &["model", "materials", "grid", "load"],
            Command::Effective => &["model", "materials", "grid"],
            Command::SweepGamma => &["model", "materials", "grid", "sweep"],
            Command::Isotropy => &["model", "materials", "grid"],
            Command::Ergodic => &["model", "grid", "ergodic"],
            Command::Decompose => &["grid", "decompose"],
            Command::Recovery => &["model", "materials", "grid", "recovery"],
        }
    }

    fn has_block(&self, name: &str) -> bool {
        match name {
            "model" => self.model.is_some(),
            "materials" => self.materials.is_some(),
            "grid" => self.grid.is_some(),
            "load" => self.load.is_some(),
            "sweep" => self.sweep.is_some(),
            "ergodic" => self.ergodic.is_some(),
            "decompose" => self.decompose.is_some(),
            "recovery" => self.recovery.is_some(),
            _ => false,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for block in self.required_blocks() {
            if !self.has_block(block) {
                return Err(ConfigError(format!(
                    "config error: missing `{block}` block (required by `{}`)",
                    self.command.name()
                )));
            }
        }
        if let Some(g) = &self.grid {
            if !(g.gamma > 0.0) {
                return Err(ConfigError(format!("config error at `grid.gamma`: must be positive, got {}", g.gamma)));
            }
            if !(g.box_side > 0.0) {
                return Err(ConfigError(format!("config error at `grid.L`: must be positive, got {}", g.box_side)));
            }
        }
        if let Some(s) = &self.sweep {
            if s.gammas.is_empty() || s.gammas.iter().any(|&g| !(g > 0.0)) {
                return Err(ConfigError("config error at `sweep.gammas`: need positive values".into()));
            }
        }
        if self.seeds.is_empty() {
            return Err(ConfigError("config error at `seeds`: need at least one seed".into()));
        }
        if self.threads == Some(0) {
            return Err(ConfigError("config error at `threads`: must be at least 1".into()));
        }
        Ok(())
    }

    /// The config as echoed into artifacts. Output location and thread
    /// count are run metadata and live in the sidecar instead.
    pub fn echo(&self) -> serde_json::Value {
        let mut c = self.clone();
        c.output = None;
        c.threads = None;
        serde_json::to_value(c).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EFFECTIVE: &str = r#"{
        "command": "effective",
        "model": {"kind": "checkerboard", "period_hint": 1.0,
                  "mark_distribution": [{"phase": 0, "probability": 0.5}, {"phase": 1, "probability": 0.5}],
                  "phase_count": 2},
        "materials": [{"phase_id": 0, "mu": 1.0, "lambda": 1.0}, {"phase_id": 1, "mu": 2.0, "lambda": 1.0}],
        "grid": {"L": 2.0, "n1": 4, "n2": 4, "n3": 2, "gamma": 1.0}
    }"#;

    #[test]
    fn parses_full_config() {
        let c = RunConfig::parse(EFFECTIVE).unwrap();
        assert_eq!(c.command, Command::Effective);
        assert_eq!(c.seeds, vec![0]);
        assert_eq!(c.grid.unwrap().box_side, 2.0);
    }

    #[test]
    fn missing_block_is_named() {
        let mut v: serde_json::Value = serde_json::from_str(EFFECTIVE).unwrap();
        v.as_object_mut().unwrap().remove("materials");
        let err = RunConfig::parse(&v.to_string()).unwrap_err();
        assert!(err.0.contains("`materials`"), "{}", err.0);
    }

    #[test]
    fn field_path_in_type_errors() {
        let text = EFFECTIVE.replace("\"n1\": 4", "\"n1\": \"four\"");
        let err = RunConfig::parse(&text).unwrap_err();
        assert!(err.0.contains("grid.n1"), "{}", err.0);
    }

    #[test]
    fn rejects_nonpositive_gamma() {
        let text = EFFECTIVE.replace("\"gamma\": 1.0", "\"gamma\": 0.0");
        assert!(RunConfig::parse(&text).unwrap_err().0.contains("grid.gamma"));
    }

    #[test]
    fn echo_drops_run_metadata() {
        let mut c = RunConfig::parse(EFFECTIVE).unwrap();
        c.threads = Some(4);
        c.output = Some("somewhere".into());
        let e = c.echo();
        assert!(e.get("threads").is_none() && e.get("output").is_none());
        assert_eq!(e["grid"]["L"], 2.0);
    }
}
