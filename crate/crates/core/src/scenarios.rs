//! The two benchmark problems: a linear spacecraft attitude tracking model
//! with an unknown input bias, and the univariate non-stationary growth model
//! (UNGM) with an unknown measurement bias.

use std::fmt;
use std::str::FromStr;

use nalgebra::{dmatrix, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::FilterMode;
use crate::numkit::{cholesky_lower, stream_id, Purpose, SeededRng};
use crate::oracle::LinearModel;
use crate::sysmodel::{measure_truth, propagate_truth, SystemModel, TruthTrajectory};

/// Spacecraft dynamics matrix.
pub const SPACECRAFT_A: [[f64; 2]; 2] = [[0.0, 1.0], [-0.85, 1.70]];
/// Spacecraft bias input column.
pub const SPACECRAFT_B: [f64; 2] = [0.0129, -1.2504];
/// Spacecraft process noise input column.
pub const SPACECRAFT_G: [f64; 2] = [0.0, 1.0];
/// Spacecraft measurement row (the gyro observes the second state).
pub const SPACECRAFT_H: [f64; 2] = [0.0, 1.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioKind {
    Spacecraft,
    Ungm,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 2] = [ScenarioKind::Spacecraft, ScenarioKind::Ungm];

    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioKind::Spacecraft => "spacecraft",
            ScenarioKind::Ungm => "ungm",
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "spacecraft" => Ok(ScenarioKind::Spacecraft),
            "ungm" => Ok(ScenarioKind::Ungm),
            other => Err(Error::InvalidConfig(format!(
                "unknown scenario `{other}` (expected one of: spacecraft, ungm)"
            ))),
        }
    }
}

/// Scalar constants of a scenario. Field names follow the usual filtering
/// notation so the JSON dump reads like a parameter table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioParams {
    /// Process noise variance.
    #[serde(rename = "Q")]
    pub q: f64,
    /// Measurement noise variance.
    #[serde(rename = "R")]
    pub r: f64,
    /// Initial estimate covariance, applied as `P0 · I`.
    #[serde(rename = "P0")]
    pub p0: f64,
    /// True initial state, also the initial estimate.
    pub x0: Vec<f64>,
    /// Parameter reference `b̄` (mean of the truth parameter draw).
    pub b0: f64,
    /// Parameter variance `Q_b`.
    #[serde(rename = "Qb")]
    pub qb: f64,
    /// Parameter value the EnKF baseline assumes (with zero variance).
    pub enkf_b_ref: f64,
    /// Pins the truth parameter instead of drawing it per run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth_b: Option<f64>,
}

impl ScenarioParams {
    pub fn standard(kind: ScenarioKind) -> Self {
        match kind {
            ScenarioKind::Spacecraft => Self {
                q: 0.0025,
                r: 0.25,
                p0: 0.025,
                x0: vec![2.0, 1.0],
                b0: 0.0,
                qb: 0.25,
                enkf_b_ref: 0.0,
                truth_b: None,
            },
            ScenarioKind::Ungm => Self {
                q: 1.0,
                r: 1.0,
                p0: 10.0,
                x0: vec![0.0],
                b0: 5.0,
                qb: 100.0,
                enkf_b_ref: 5.0,
                truth_b: None,
            },
        }
    }
}

/// Optional replacements for [`ScenarioParams`] fields.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qb: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub enkf_b_ref: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth_b: Option<f64>,
}

impl ParamOverrides {
    pub const KEYS: [&'static str; 8] = ["q", "r", "p0", "x0", "b0", "qb", "enkf_b_ref", "truth_b"];

    /// Sets one override from text, e.g. `("qb", "0")` or `("x0", "2,1")`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let scalar = || {
            value.trim().parse::<f64>().map_err(|_| {
                Error::InvalidConfig(format!("override `{key}`: `{value}` is not a number"))
            })
        };
        match key.trim().to_ascii_lowercase().as_str() {
            "q" => self.q = Some(scalar()?),
            "r" => self.r = Some(scalar()?),
            "p0" => self.p0 = Some(scalar()?),
            "b0" => self.b0 = Some(scalar()?),
            "qb" => self.qb = Some(scalar()?),
            "enkf_b_ref" => self.enkf_b_ref = Some(scalar()?),
            "truth_b" => self.truth_b = Some(scalar()?),
            "x0" => {
                let parsed: std::result::Result<Vec<f64>, _> =
                    value.split(',').map(|v| v.trim().parse::<f64>()).collect();
                self.x0 = Some(parsed.map_err(|_| {
                    Error::InvalidConfig(format!("override `x0`: `{value}` is not a number list"))
                })?);
            }
            other => {
                return Err(Error::InvalidConfig(format!(
                    "unknown override `{other}` (expected one of: {})",
                    Self::KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    pub fn apply(&self, params: &mut ScenarioParams) {
        let pairs = [
            (self.q, &mut params.q),
            (self.r, &mut params.r),
            (self.p0, &mut params.p0),
            (self.b0, &mut params.b0),
            (self.qb, &mut params.qb),
            (self.enkf_b_ref, &mut params.enkf_b_ref),
        ];
        for (value, slot) in pairs {
            if let Some(v) = value {
                *slot = v;
            }
        }
        if let Some(x0) = &self.x0 {
            params.x0 = x0.clone();
        }
        if self.truth_b.is_some() {
            params.truth_b = self.truth_b;
        }
    }
}

/// A Monte Carlo campaign over one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub name: ScenarioKind,
    /// Epochs per run (`K`).
    pub steps: usize,
    /// Monte Carlo runs (`N`).
    pub mc_runs: usize,
    pub ensemble_sizes: Vec<usize>,
    pub seed: u64,
    #[serde(default = "default_recenter")]
    pub recenter_resample: bool,
    #[serde(default)]
    pub overrides: ParamOverrides,
}

fn default_recenter() -> bool {
    true
}

impl ScenarioSpec {
    /// The standard campaign shape for `kind`.
    pub fn standard(kind: ScenarioKind) -> Self {
        let (steps, mc_runs, ensemble_sizes) = match kind {
            ScenarioKind::Spacecraft => (40, 100, vec![13, 21]),
            ScenarioKind::Ungm => (200, 50, vec![13, 51]),
        };
        Self {
            name: kind,
            steps,
            mc_runs,
            ensemble_sizes,
            seed: 1,
            recenter_resample: true,
            overrides: ParamOverrides::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidConfig("steps must be at least 1".into()));
        }
        if self.mc_runs == 0 {
            return Err(Error::InvalidConfig("runs must be at least 1".into()));
        }
        if self.ensemble_sizes.is_empty() {
            return Err(Error::InvalidConfig("no ensemble sizes given".into()));
        }
        if let Some(&m) = self.ensemble_sizes.iter().find(|&&m| m < 2) {
            return Err(Error::EnsembleTooSmall(m));
        }
        if self.ensemble_sizes.iter().any(|&m| m > 0x00FF_FFFF) {
            return Err(Error::InvalidConfig("ensemble size too large".into()));
        }
        Ok(())
    }

    pub fn scenario(&self) -> Scenario {
        Scenario::with_overrides(self.name, &self.overrides)
    }
}

/// A benchmark problem with concrete constants.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub kind: ScenarioKind,
    pub params: ScenarioParams,
}

impl Scenario {
    pub fn new(kind: ScenarioKind) -> Self {
        Self {
            kind,
            params: ScenarioParams::standard(kind),
        }
    }

    pub fn with_overrides(kind: ScenarioKind, overrides: &ParamOverrides) -> Self {
        let mut scenario = Self::new(kind);
        overrides.apply(&mut scenario.params);
        scenario
    }

    /// The model the truth is simulated from; its parameter statistics are
    /// also the ones the consider filter uses.
    pub fn truth_model(&self) -> Result<SystemModel> {
        match self.kind {
            ScenarioKind::Spacecraft => self.spacecraft_linear().system_model(),
            ScenarioKind::Ungm => ungm_model(&self.params),
        }
    }

    /// The model handed to a filter of the given mode. The EnKF baseline
    /// treats the parameter as known and equal to `enkf_b_ref`.
    pub fn filter_model(&self, mode: FilterMode) -> Result<SystemModel> {
        let model = self.truth_model()?;
        match mode {
            FilterMode::Enckf => Ok(model),
            FilterMode::Enkf => model.with_parameters(
                DVector::from_element(1, self.params.enkf_b_ref),
                DMatrix::zeros(1, 1),
            ),
        }
    }

    /// Initial estimate `(x̂0, P0 · I)`.
    pub fn initial_estimate(&self) -> (DVector<f64>, DMatrix<f64>) {
        let n = self.params.x0.len();
        (
            DVector::from_column_slice(&self.params.x0),
            DMatrix::identity(n, n) * self.params.p0,
        )
    }

    /// The spacecraft model in linear form, for the closed-form oracles.
    pub fn linear_model(&self) -> Option<LinearModel> {
        (self.kind == ScenarioKind::Spacecraft).then(|| self.spacecraft_linear())
    }

    fn spacecraft_linear(&self) -> LinearModel {
        let [[a11, a12], [a21, a22]] = SPACECRAFT_A;
        LinearModel {
            a: dmatrix![a11, a12; a21, a22],
            b: DMatrix::from_column_slice(2, 1, &SPACECRAFT_B),
            g: DMatrix::from_column_slice(2, 1, &SPACECRAFT_G),
            h: DMatrix::from_row_slice(1, 2, &SPACECRAFT_H),
            d: DMatrix::zeros(1, 1),
            q: dmatrix![self.params.q],
            r: dmatrix![self.params.r],
            q_b: dmatrix![self.params.qb],
            b_ref: DVector::from_element(1, self.params.b0),
        }
    }

    /// Simulates run `run` of a campaign: one parameter draw
    /// `b ~ N(b̄, Q_b)` (unless pinned), then `K` noisy epochs from `x0`.
    /// Fully determined by `(spec.seed, run)`.
    pub fn generate_truth(&self, spec: &ScenarioSpec, run: usize) -> Result<TruthTrajectory> {
        let model = self.truth_model()?;
        let mut rng = SeededRng::new(spec.seed, stream_id(run as u64, 0, Purpose::Truth));
        let (n, p, l) = (model.state_dim(), model.meas_dim(), model.param_dim());

        let param_draw: DVector<f64> = (0..l)
            .map(|_| rng.standard_normal())
            .collect::<Vec<_>>()
            .into();
        let true_param = match self.params.truth_b {
            Some(b) => DVector::from_element(l, b),
            None => {
                model.param_reference()
                    + cholesky_lower(model.param_cov())?.as_matrix() * param_draw
            }
        };

        let q_sqrt = cholesky_lower(model.process_noise_cov())?;
        let r_sqrt = cholesky_lower(model.meas_noise_cov())?;
        let mut states = Vec::with_capacity(spec.steps + 1);
        let mut measurements = Vec::with_capacity(spec.steps);
        let mut x = DVector::from_column_slice(&self.params.x0);
        states.push(x.clone());
        for k in 1..=spec.steps {
            let u: DVector<f64> = (0..n)
                .map(|_| rng.standard_normal())
                .collect::<Vec<_>>()
                .into();
            x = propagate_truth(&model, &x, &true_param, k, &(q_sqrt.as_matrix() * u))?;
            let u: DVector<f64> = (0..p)
                .map(|_| rng.standard_normal())
                .collect::<Vec<_>>()
                .into();
            let z = measure_truth(&model, &x, &true_param, &(r_sqrt.as_matrix() * u))?;
            if x.iter().chain(z.iter()).any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteTruth { run, epoch: k });
            }
            states.push(x.clone());
            measurements.push(z);
        }
        Ok(TruthTrajectory {
            states,
            measurements,
            true_param,
        })
    }
}

/// The spacecraft model with the standard constants.
pub fn build_spacecraft() -> Result<SystemModel> {
    Scenario::new(ScenarioKind::Spacecraft).truth_model()
}

/// The UNGM with the standard constants.
pub fn build_ungm() -> Result<SystemModel> {
    Scenario::new(ScenarioKind::Ungm).truth_model()
}

/// The spacecraft model with the standard constants, in linear form.
pub fn spacecraft_linear_model() -> LinearModel {
    Scenario::new(ScenarioKind::Spacecraft).spacecraft_linear()
}

/// `x_k = 0.5 x + 2.5 x / (1 + x²) + 8 cos(1.2 (k - 1))`
fn ungm_transition(x: f64, k: usize) -> f64 {
    0.5 * x + 2.5 * x / (1.0 + x * x) + 8.0 * (1.2 * (k as f64 - 1.0)).cos()
}

fn ungm_model(params: &ScenarioParams) -> Result<SystemModel> {
    SystemModel::builder(1, 1, 1)
        .transition(|x, _, k| DVector::from_element(1, ungm_transition(x[0], k)))
        .measurement(|x, b| DVector::from_element(1, x[0] * x[0] / 20.0 + b[0]))
        .process_noise(dmatrix![params.q])
        .measurement_noise(dmatrix![params.r])
        .parameters(DVector::from_element(1, params.b0), dmatrix![params.qb])
        .build()
}
