use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{
    gains_and_covariances, init_ensemble, measurement_ensemble, predict, resample, update_enckf,
    update_enkf, AugmentedEnsemble, FilterConfig, FilterEstimate, FilterMode,
};
use crate::error::{check_len, Result};
use crate::numkit::{stream_id, Purpose, SeededRng};
use crate::sysmodel::SystemModel;

/// Counters accumulated over the lifetime of a filter.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterDiagnostics {
    /// Epochs whose posterior state covariance had to be repaired.
    pub covariance_repairs: usize,
    /// Resamples whose Schur complement had to be clamped.
    pub schur_clamps: usize,
    pub resamples: usize,
}

impl std::ops::AddAssign for FilterDiagnostics {
    fn add_assign(&mut self, rhs: Self) {
        self.covariance_repairs += rhs.covariance_repairs;
        self.schur_clamps += rhs.schur_clamps;
        self.resamples += rhs.resamples;
    }
}

/// A running EnKF or EnCKF instance.
///
/// Owns its ensemble and its random streams (process noise, observation
/// perturbation, resampling), which are keyed by `(seed, run, m)` only.
#[derive(Debug, Clone)]
pub struct EnsembleFilter {
    model: SystemModel,
    config: FilterConfig,
    ensemble: AugmentedEnsemble,
    latest: Option<FilterEstimate>,
    process_rng: SeededRng,
    perturb_rng: SeededRng,
    resample_rng: SeededRng,
    diagnostics: FilterDiagnostics,
}

impl EnsembleFilter {
    pub fn new(
        model: SystemModel,
        x0_mean: &DVector<f64>,
        p0: &DMatrix<f64>,
        config: FilterConfig,
    ) -> Result<Self> {
        config.validate()?;
        let stream = |purpose| {
            SeededRng::new(
                config.seed,
                stream_id(config.run, config.ensemble_size as u64, purpose),
            )
        };
        let ensemble = init_ensemble(&model, x0_mean, p0, &config, &mut stream(Purpose::Init))?;
        Ok(Self {
            process_rng: stream(Purpose::Process),
            perturb_rng: stream(Purpose::Perturb),
            resample_rng: stream(Purpose::Resample),
            model,
            config,
            ensemble,
            latest: None,
            diagnostics: FilterDiagnostics::default(),
        })
    }

    pub fn config(&self) -> &FilterConfig {
        &self.config
    }

    pub fn model(&self) -> &SystemModel {
        &self.model
    }

    pub fn ensemble(&self) -> &AugmentedEnsemble {
        &self.ensemble
    }

    pub fn latest(&self) -> Option<&FilterEstimate> {
        self.latest.as_ref()
    }

    pub fn diagnostics(&self) -> FilterDiagnostics {
        self.diagnostics
    }

    /// Whether the next step starts by redrawing the ensemble.
    ///
    /// Only the consider filter resamples, from the second step on, and only
    /// when there is parameter uncertainty to carry (`Q_b ≠ 0`).
    fn resamples(&self) -> bool {
        self.config.mode == FilterMode::Enckf
            && self.latest.is_some()
            && self.model.param_cov().iter().any(|v| *v != 0.0)
    }

    /// Advances one epoch with measurement `z` and returns the posterior.
    pub fn step(&mut self, z: &DVector<f64>) -> Result<FilterEstimate> {
        check_len("z", self.model.meas_dim(), z.len())?;

        if self.resamples() {
            let latest = self.latest.as_ref().expect("checked by resamples()");
            let (ensemble, clamped) = resample(
                latest,
                self.model.param_cov(),
                self.model.param_reference(),
                &self.config,
                &mut self.resample_rng,
            )?;
            self.ensemble = ensemble;
            self.diagnostics.resamples += 1;
            self.diagnostics.schur_clamps += usize::from(clamped);
        }

        let forecast = predict(&self.model, &self.ensemble, &mut self.process_rng)?;
        let meas = measurement_ensemble(&self.model, &forecast.ensemble)?;
        let r = self.model.meas_noise_cov();
        let gains = gains_and_covariances(&forecast.deviations, &meas.m_z, r)?;
        let (ensemble, estimate) = match self.config.mode {
            FilterMode::Enkf => update_enkf(&forecast, &meas, z, &gains, &mut self.perturb_rng, r)?,
            FilterMode::Enckf => update_enckf(
                &forecast,
                &meas,
                z,
                &gains,
                &mut self.perturb_rng,
                r,
                self.model.param_cov(),
            )?,
        };
        self.diagnostics.covariance_repairs += usize::from(estimate.repaired);
        self.ensemble = ensemble;
        self.latest = Some(estimate.clone());
        Ok(estimate)
    }

    /// Steps through `measurements` (epochs `1..=K`) and collects the posteriors.
    pub fn run(&mut self, measurements: &[DVector<f64>]) -> Result<Vec<FilterEstimate>> {
        measurements.iter().map(|z| self.step(z)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::asymmetry;
    use crate::scenarios::{Scenario, ScenarioKind, ScenarioSpec};
    use nalgebra::dmatrix;

    #[test]
    fn deterministic_spacecraft_step() {
        let scenario = Scenario::new(ScenarioKind::Spacecraft);
        let base = scenario.truth_model().unwrap();
        let model = SystemModel::builder(2, 1, 1)
            .transition({
                let m = base.clone();
                move |x, b, k| m.transition(x, b, k)
            })
            .measurement(move |x, b| base.measurement(x, b))
            .measurement_noise(dmatrix![0.25])
            .build()
            .unwrap();
        for mode in FilterMode::ALL {
            let mut filter = EnsembleFilter::new(
                model.clone(),
                &DVector::from_row_slice(&[2.0, 1.0]),
                &DMatrix::zeros(2, 2),
                FilterConfig::new(13, mode, 3),
            )
            .unwrap();
            let est = filter.step(&DVector::from_row_slice(&[0.3])).unwrap();
            assert!((est.mean_state[0] - 1.0).abs() < 1e-14);
            assert!(est.mean_state[1].abs() < 1e-14);
        }
    }

    #[test]
    fn forty_step_spacecraft_smoke() {
        let scenario = Scenario::new(ScenarioKind::Spacecraft);
        let spec = ScenarioSpec::standard(ScenarioKind::Spacecraft);
        let truth = scenario.generate_truth(&spec, 0).unwrap();
        let (x0, p0) = scenario.initial_estimate();
        for mode in FilterMode::ALL {
            let model = scenario.filter_model(mode).unwrap();
            let mut filter =
                EnsembleFilter::new(model, &x0, &p0, FilterConfig::new(21, mode, 11)).unwrap();
            let estimates = filter.run(&truth.measurements).unwrap();
            assert_eq!(estimates.len(), 40);
            for (k, est) in estimates.iter().enumerate() {
                assert_eq!(est.epoch, k + 1);
                let full = est.cov.assemble();
                assert!(full.iter().all(|v| v.is_finite()));
                assert_eq!(asymmetry(&est.cov.p_xx), 0.0);
                assert_eq!(asymmetry(&est.cov.p_bb), 0.0);
            }
            if mode == FilterMode::Enckf {
                assert_eq!(filter.diagnostics().resamples, 39);
            } else {
                assert_eq!(filter.diagnostics().resamples, 0);
            }
        }
    }

    #[test]
    fn rejects_wrong_measurement_length() {
        let scenario = Scenario::new(ScenarioKind::Ungm);
        let (x0, p0) = scenario.initial_estimate();
        let mut filter = EnsembleFilter::new(
            scenario.filter_model(FilterMode::Enckf).unwrap(),
            &x0,
            &p0,
            FilterConfig::new(13, FilterMode::Enckf, 1),
        )
        .unwrap();
        assert!(filter.step(&DVector::zeros(2)).is_err());
    }
}
