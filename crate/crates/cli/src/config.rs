//! Effective run configuration: defaults of the chosen scenario, then a
//! TOML/JSON config file, then command-line flags.

use std::path::{Path, PathBuf};

use enckf::filters::FilterMode;
use enckf::scenarios::{ParamOverrides, ScenarioKind, ScenarioSpec};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Everything a config file may set. Every field is optional so that a file
/// can pin only what it cares about.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub scenario: Option<ScenarioKind>,
    pub runs: Option<usize>,
    pub steps: Option<usize>,
    pub ensemble: Option<Vec<usize>>,
    pub seed: Option<u64>,
    pub modes: Option<Vec<FilterMode>>,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
    pub recenter: Option<bool>,
    #[serde(default)]
    pub overrides: ParamOverrides,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let is_json = path
            .extension()
            .is_some_and(|ext| ext.eq_ignore_ascii_case("json"));
        if is_json {
            serde_json::from_str(&text)
                .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
        } else {
            toml::from_str(&text)
                .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
        }
    }

    /// Layers `top` over `self`; set fields of `top` win.
    pub fn merged(mut self, top: FileConfig) -> Self {
        macro_rules! take {
            ($($field:ident),*) => {
                $(if top.$field.is_some() { self.$field = top.$field; })*
            };
        }
        take!(scenario, runs, steps, ensemble, seed, modes, out, workers, recenter);
        let o = top.overrides;
        macro_rules! take_override {
            ($($field:ident),*) => {
                $(if o.$field.is_some() { self.overrides.$field = o.$field; })*
            };
        }
        take_override!(q, r, p0, x0, b0, qb, enkf_b_ref, truth_b);
        self
    }
}

/// The fully resolved configuration of one `run`, echoed into the metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CliConfig {
    pub spec: ScenarioSpec,
    pub modes: Vec<FilterMode>,
    pub out: PathBuf,
    /// `None`: available parallelism.
    pub workers: Option<usize>,
}

impl CliConfig {
    pub fn resolve(cfg: FileConfig) -> Result<Self, CliError> {
        let kind = cfg.scenario.ok_or_else(|| {
            CliError::Usage("no scenario given (use --scenario or a config file)".into())
        })?;
        let mut spec = ScenarioSpec::standard(kind);
        if let Some(v) = cfg.runs {
            spec.mc_runs = v;
        }
        if let Some(v) = cfg.steps {
            spec.steps = v;
        }
        if let Some(v) = cfg.ensemble {
            spec.ensemble_sizes = v;
        }
        if let Some(v) = cfg.seed {
            spec.seed = v;
        }
        if let Some(v) = cfg.recenter {
            spec.recenter_resample = v;
        }
        spec.overrides = cfg.overrides;
        spec.validate()
            .map_err(|e| CliError::Usage(e.to_string()))?;
        if cfg.workers == Some(0) {
            return Err(CliError::Usage("--workers must be at least 1".into()));
        }

        let mut modes = cfg.modes.unwrap_or_else(|| FilterMode::ALL.to_vec());
        modes.sort();
        modes.dedup();
        if modes.is_empty() {
            return Err(CliError::Usage("no filter modes selected".into()));
        }
        Ok(Self {
            spec,
            modes,
            out: cfg.out.unwrap_or_else(|| PathBuf::from("enckf-out")),
            workers: cfg.workers,
        })
    }
}
