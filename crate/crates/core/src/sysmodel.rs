//! Nonlinear discrete-time system models with additive noise and constant
//! uncertain parameters.
//!
//! A [`SystemModel`] describes
//!
//! ```text
//! x_k = f(x_{k-1}, b, k) + w_{k-1},   w ~ N(0, Q)
//! z_k = h(x_k, b) + v_k,              v ~ N(0, R)
//! ```
//!
//! where `b` is a constant parameter vector known only through its reference
//! value `b̄` and covariance `Q_b`. Noise is always supplied by the caller, so
//! the same model drives truth simulation and the ensemble filters.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, check_shape, Error, Result};
use crate::numkit;

/// State transition `f(x, b, k)`. `k` is the index of the epoch being produced.
pub type TransitionFn = dyn Fn(&DVector<f64>, &DVector<f64>, usize) -> DVector<f64> + Send + Sync;

/// Measurement function `h(x, b)`.
pub type MeasurementFn = dyn Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync;

/// An immutable system description shared by truth simulation and filters.
///
/// Cloning is cheap: the model functions are reference counted.
#[derive(Clone)]
pub struct SystemModel {
    state_dim: usize,
    meas_dim: usize,
    param_dim: usize,
    transition: Arc<TransitionFn>,
    measurement: Arc<MeasurementFn>,
    process_noise_cov: DMatrix<f64>,
    meas_noise_cov: DMatrix<f64>,
    param_reference: DVector<f64>,
    param_cov: DMatrix<f64>,
}

impl fmt::Debug for SystemModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SystemModel")
            .field("state_dim", &self.state_dim)
            .field("meas_dim", &self.meas_dim)
            .field("param_dim", &self.param_dim)
            .field("process_noise_cov", &self.process_noise_cov)
            .field("meas_noise_cov", &self.meas_noise_cov)
            .field("param_reference", &self.param_reference)
            .field("param_cov", &self.param_cov)
            .finish_non_exhaustive()
    }
}

impl SystemModel {
    pub fn builder(state_dim: usize, meas_dim: usize, param_dim: usize) -> SystemModelBuilder {
        SystemModelBuilder {
            state_dim,
            meas_dim,
            param_dim,
            transition: None,
            measurement: None,
            process_noise_cov: DMatrix::zeros(state_dim, state_dim),
            meas_noise_cov: DMatrix::identity(meas_dim, meas_dim),
            param_reference: DVector::zeros(param_dim),
            param_cov: DMatrix::zeros(param_dim, param_dim),
        }
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn meas_dim(&self) -> usize {
        self.meas_dim
    }

    pub fn param_dim(&self) -> usize {
        self.param_dim
    }

    pub fn process_noise_cov(&self) -> &DMatrix<f64> {
        &self.process_noise_cov
    }

    pub fn meas_noise_cov(&self) -> &DMatrix<f64> {
        &self.meas_noise_cov
    }

    /// Reference value `b̄` of the uncertain parameters.
    pub fn param_reference(&self) -> &DVector<f64> {
        &self.param_reference
    }

    /// Covariance `Q_b` of the uncertain parameters.
    pub fn param_cov(&self) -> &DMatrix<f64> {
        &self.param_cov
    }

    /// Evaluates the noise-free transition without dimension checks.
    pub fn transition(&self, x: &DVector<f64>, b: &DVector<f64>, k: usize) -> DVector<f64> {
        (self.transition)(x, b, k)
    }

    /// Evaluates the noise-free measurement without dimension checks.
    pub fn measurement(&self, x: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
        (self.measurement)(x, b)
    }

    /// Returns a copy with a different parameter reference and covariance.
    ///
    /// Used to hand a filter parameter statistics other than the ones the
    /// truth was drawn from (for example a baseline that treats `b` as known).
    pub fn with_parameters(&self, reference: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let mut model = self.clone();
        model.param_reference = reference;
        model.param_cov = cov;
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<()> {
        let (n, p, l) = (self.state_dim, self.meas_dim, self.param_dim);
        if n == 0 {
            return Err(Error::InvalidConfig(
                "state dimension must be positive".into(),
            ));
        }
        if p == 0 {
            return Err(Error::InvalidConfig(
                "measurement dimension must be positive".into(),
            ));
        }
        check_shape("process_noise_cov", (n, n), self.process_noise_cov.shape())?;
        check_shape("meas_noise_cov", (p, p), self.meas_noise_cov.shape())?;
        check_len("param_reference", l, self.param_reference.len())?;
        check_shape("param_cov", (l, l), self.param_cov.shape())?;

        numkit::check_psd("process_noise_cov", &self.process_noise_cov, 1e-12)?;
        numkit::check_psd("param_cov", &self.param_cov, 1e-12)?;
        numkit::check_symmetric("meas_noise_cov", &self.meas_noise_cov, 1e-12)?;
        let min_eigenvalue = numkit::min_eigenvalue(&self.meas_noise_cov);
        if min_eigenvalue.is_nan() || min_eigenvalue <= 0.0 {
            return Err(Error::NotPositiveDefinite { min_eigenvalue });
        }
        Ok(())
    }
}

pub struct SystemModelBuilder {
    state_dim: usize,
    meas_dim: usize,
    param_dim: usize,
    transition: Option<Arc<TransitionFn>>,
    measurement: Option<Arc<MeasurementFn>>,
    process_noise_cov: DMatrix<f64>,
    meas_noise_cov: DMatrix<f64>,
    param_reference: DVector<f64>,
    param_cov: DMatrix<f64>,
}

impl SystemModelBuilder {
    pub fn transition<F>(mut self, f: F) -> Self
    where
        F: Fn(&DVector<f64>, &DVector<f64>, usize) -> DVector<f64> + Send + Sync + 'static,
    {
        self.transition = Some(Arc::new(f));
        self
    }

    pub fn measurement<H>(mut self, h: H) -> Self
    where
        H: Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    {
        self.measurement = Some(Arc::new(h));
        self
    }

    pub fn process_noise(mut self, q: DMatrix<f64>) -> Self {
        self.process_noise_cov = q;
        self
    }

    pub fn measurement_noise(mut self, r: DMatrix<f64>) -> Self {
        self.meas_noise_cov = r;
        self
    }

    pub fn parameters(mut self, reference: DVector<f64>, cov: DMatrix<f64>) -> Self {
        self.param_reference = reference;
        self.param_cov = cov;
        self
    }

    pub fn build(self) -> Result<SystemModel> {
        let transition = self
            .transition
            .ok_or_else(|| Error::InvalidConfig("missing transition function".into()))?;
        let measurement = self
            .measurement
            .ok_or_else(|| Error::InvalidConfig("missing measurement function".into()))?;
        let model = SystemModel {
            state_dim: self.state_dim,
            meas_dim: self.meas_dim,
            param_dim: self.param_dim,
            transition,
            measurement,
            process_noise_cov: self.process_noise_cov,
            meas_noise_cov: self.meas_noise_cov,
            param_reference: self.param_reference,
            param_cov: self.param_cov,
        };
        model.validate()?;
        Ok(model)
    }
}

/// Simulated ground truth for one Monte Carlo run.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthTrajectory {
    /// States for epochs `0..=K`.
    pub states: Vec<DVector<f64>>,
    /// Measurements for epochs `1..=K`; `measurements[k - 1]` belongs to `states[k]`.
    pub measurements: Vec<DVector<f64>>,
    /// The parameter realization used for this run.
    pub true_param: DVector<f64>,
}

impl TruthTrajectory {
    /// Number of measured epochs `K`.
    pub fn steps(&self) -> usize {
        self.measurements.len()
    }
}

/// `f(x_prev, b, k) + w`.
pub fn propagate_truth(
    model: &SystemModel,
    x_prev: &DVector<f64>,
    b: &DVector<f64>,
    k: usize,
    w: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_len("x_prev", model.state_dim, x_prev.len())?;
    check_len("b", model.param_dim, b.len())?;
    check_len("w", model.state_dim, w.len())?;
    let fx = model.transition(x_prev, b, k);
    check_len("transition output", model.state_dim, fx.len())?;
    Ok(fx + w)
}

/// `h(x, b) + v`.
pub fn measure_truth(
    model: &SystemModel,
    x: &DVector<f64>,
    b: &DVector<f64>,
    v: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_len("x", model.state_dim, x.len())?;
    check_len("b", model.param_dim, b.len())?;
    check_len("v", model.meas_dim, v.len())?;
    let hx = model.measurement(x, b);
    check_len("measurement output", model.meas_dim, hx.len())?;
    Ok(hx + v)
}
