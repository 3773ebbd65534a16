//! Ensemble filters over augmented `[state; parameter]` ensembles.
//!
//! Two modes share one pipeline:
//!
//! * [`FilterMode::Enkf`] is the perturbed-observation ensemble Kalman filter
//!   applied to the augmented state. Both the state and the parameter members
//!   are corrected with the full augmented gain `[K_x; K_b]`, and the ensemble
//!   is carried from step to step unchanged.
//! * [`FilterMode::Enckf`] is the ensemble consider filter. The parameter gain
//!   is forced to zero, the parameter covariance stays pinned at `Q_b`, and
//!   before every prediction the ensemble is redrawn from the posterior mean
//!   and the augmented square root of the covariance so the state/parameter
//!   cross-covariance is carried into the next step.
//!
//! The individual stages are exposed as free functions ([`predict`],
//! [`measurement_ensemble`], [`gains_and_covariances`], [`update_enkf`],
//! [`update_enckf`], [`resample`]); [`EnsembleFilter`] composes them.

mod filter;
mod ops;

pub use filter::{EnsembleFilter, FilterDiagnostics};
pub use ops::{
    apply_gain, consider_posterior, gains_and_covariances, init_ensemble, measurement_ensemble,
    perturbed_innovations, predict, resample, update_enckf, update_enkf,
};

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterMode {
    /// Ensemble Kalman filter with the full augmented gain.
    Enkf,
    /// Ensemble consider Kalman filter (parameter gain forced to zero).
    Enckf,
}

impl FilterMode {
    pub const ALL: [FilterMode; 2] = [FilterMode::Enkf, FilterMode::Enckf];

    pub fn as_str(self) -> &'static str {
        match self {
            FilterMode::Enkf => "enkf",
            FilterMode::Enckf => "enckf",
        }
    }
}

impl fmt::Display for FilterMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FilterMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "enkf" => Ok(FilterMode::Enkf),
            "enckf" => Ok(FilterMode::Enckf),
            other => Err(Error::InvalidConfig(format!(
                "unknown filter mode `{other}` (expected enkf or enckf)"
            ))),
        }
    }
}

/// Settings for one filter instance.
///
/// The random streams are derived from `(seed, run, ensemble_size)` and do
/// not depend on `mode`, so an EnKF and an EnCKF built from otherwise equal
/// configs consume identical noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub ensemble_size: usize,
    pub mode: FilterMode,
    /// Shift resampled members so their mean equals the target exactly.
    pub recenter_resample: bool,
    pub seed: u64,
    /// Monte Carlo run index; selects the random streams.
    pub run: u64,
}

impl FilterConfig {
    pub fn new(ensemble_size: usize, mode: FilterMode, seed: u64) -> Self {
        Self {
            ensemble_size,
            mode,
            recenter_resample: true,
            seed,
            run: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.ensemble_size < 2 {
            return Err(Error::EnsembleTooSmall(self.ensemble_size));
        }
        Ok(())
    }
}

/// `m` augmented members stored column-wise: `states` is `n × m`, `params`
/// is `l × m`. Column `i` of both stacked is the augmented member `X^i`.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedEnsemble {
    pub states: DMatrix<f64>,
    pub params: DMatrix<f64>,
    pub epoch: usize,
}

impl AugmentedEnsemble {
    pub fn new(states: DMatrix<f64>, params: DMatrix<f64>, epoch: usize) -> Result<Self> {
        if states.ncols() != params.ncols() {
            return Err(Error::DimensionMismatch {
                what: "params",
                expected: format!("{} members", states.ncols()),
                found: format!("{} members", params.ncols()),
            });
        }
        if states.ncols() < 2 {
            return Err(Error::EnsembleTooSmall(states.ncols()));
        }
        Ok(Self {
            states,
            params,
            epoch,
        })
    }

    pub fn size(&self) -> usize {
        self.states.ncols()
    }

    pub fn state_dim(&self) -> usize {
        self.states.nrows()
    }

    pub fn param_dim(&self) -> usize {
        self.params.nrows()
    }

    pub fn state_member(&self, i: usize) -> DVector<f64> {
        self.states.column(i).into_owned()
    }

    pub fn param_member(&self, i: usize) -> DVector<f64> {
        self.params.column(i).into_owned()
    }

    /// `[x^i; b^i]`.
    pub fn stacked_member(&self, i: usize) -> DVector<f64> {
        let mut out = DVector::zeros(self.state_dim() + self.param_dim());
        out.rows_mut(0, self.state_dim())
            .copy_from(&self.states.column(i));
        out.rows_mut(self.state_dim(), self.param_dim())
            .copy_from(&self.params.column(i));
        out
    }

    pub fn state_mean(&self) -> DVector<f64> {
        row_mean(&self.states)
    }

    pub fn param_mean(&self) -> DVector<f64> {
        row_mean(&self.params)
    }
}

/// Deviations of the forecast ensemble: `m_x` about the state ensemble mean,
/// `m_b` about the fixed parameter reference `b̄` (not the ensemble mean), so
/// the columns of `m_b` need not sum to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviationMatrices {
    pub m_x: DMatrix<f64>,
    pub m_b: DMatrix<f64>,
}

/// Partitioned augmented covariance `[[P_xx, P_xb], [P_xbᵀ, P_bb]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceBlocks {
    pub p_xx: DMatrix<f64>,
    pub p_xb: DMatrix<f64>,
    pub p_bb: DMatrix<f64>,
}

impl CovarianceBlocks {
    pub fn zeros(n: usize, l: usize) -> Self {
        Self {
            p_xx: DMatrix::zeros(n, n),
            p_xb: DMatrix::zeros(n, l),
            p_bb: DMatrix::zeros(l, l),
        }
    }

    /// The full `(n + l) × (n + l)` matrix.
    pub fn assemble(&self) -> DMatrix<f64> {
        let (n, l) = (self.p_xx.nrows(), self.p_bb.nrows());
        let mut out = DMatrix::zeros(n + l, n + l);
        out.view_mut((0, 0), (n, n)).copy_from(&self.p_xx);
        out.view_mut((0, n), (n, l)).copy_from(&self.p_xb);
        out.view_mut((n, 0), (l, n))
            .copy_from(&self.p_xb.transpose());
        out.view_mut((n, n), (l, l)).copy_from(&self.p_bb);
        out
    }
}

/// Output of [`predict`].
#[derive(Debug, Clone, PartialEq)]
pub struct Forecast {
    pub ensemble: AugmentedEnsemble,
    /// `x̂⁻`
    pub mean_state: DVector<f64>,
    /// `b̂⁻`
    pub mean_param: DVector<f64>,
    pub deviations: DeviationMatrices,
    /// Prior blocks `M_x M_xᵀ/(m-1)`, `M_x M_bᵀ/(m-1)`, `M_b M_bᵀ/(m-1)`.
    pub cov: CovarianceBlocks,
}

/// Output of [`measurement_ensemble`].
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementEnsemble {
    /// `Z^i = h(x^i, b^i)` as columns (`p × m`).
    pub members: DMatrix<f64>,
    pub mean: DVector<f64>,
    pub m_z: DMatrix<f64>,
}

/// Innovation statistics and the augmented gain.
#[derive(Debug, Clone, PartialEq)]
pub struct Gains {
    pub p_zz: DMatrix<f64>,
    pub p_xz: DMatrix<f64>,
    pub p_bz: DMatrix<f64>,
    pub k_x: DMatrix<f64>,
    pub k_b: DMatrix<f64>,
}

/// Posterior summary for one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterEstimate {
    /// `x̂⁺`
    pub mean_state: DVector<f64>,
    /// `b̂⁺`; the forecast parameter mean under the consider update.
    pub mean_param: DVector<f64>,
    pub cov: CovarianceBlocks,
    pub epoch: usize,
    /// The posterior state covariance had negative eigenvalues and was repaired.
    pub repaired: bool,
}

pub(crate) fn row_mean(a: &DMatrix<f64>) -> DVector<f64> {
    let m = a.ncols() as f64;
    DVector::from_iterator(a.nrows(), a.row_iter().map(|r| r.sum() / m))
}

pub(crate) fn deviations(a: &DMatrix<f64>, center: &DVector<f64>) -> DMatrix<f64> {
    let mut out = a.clone();
    for mut col in out.column_iter_mut() {
        col -= center;
    }
    out
}
