//! Ensemble Kalman filtering for nonlinear systems with uncertain constant
//! parameters.
//!
//! The crate provides two ensemble filters over augmented `[state; parameter]`
//! ensembles:
//!
//! * the perturbed-observation **EnKF**, and
//! * the ensemble **consider** Kalman filter (**EnCKF**), which never updates
//!   the parameters but carries their uncertainty into the state estimate by
//!   redrawing the ensemble from the augmented covariance every step.
//!
//! Around them sit the pieces needed to evaluate them: a system-model
//! abstraction ([`sysmodel`]), linear-algebra and sampling kernels
//! ([`numkit`]), closed-form linear reference filters ([`oracle`]), the two
//! benchmark problems ([`scenarios`]) and a Monte Carlo RMSE harness
//! ([`harness`]).
//!
//! ```
//! use enckf::filters::{EnsembleFilter, FilterConfig, FilterMode};
//! use enckf::scenarios::{Scenario, ScenarioKind, ScenarioSpec};
//!
//! let spec = ScenarioSpec::standard(ScenarioKind::Ungm);
//! let scenario = spec.scenario();
//! let truth = scenario.generate_truth(&spec, 0)?;
//! let (x0, p0) = scenario.initial_estimate();
//!
//! let model = scenario.filter_model(FilterMode::Enckf)?;
//! let mut filter = EnsembleFilter::new(model, &x0, &p0, FilterConfig::new(13, FilterMode::Enckf, 7))?;
//! let estimates = filter.run(&truth.measurements)?;
//! assert_eq!(estimates.len(), 200);
//! # Ok::<(), enckf::Error>(())
//! ```

pub mod error;
pub mod filters;
pub mod harness;
pub mod numkit;
pub mod oracle;
pub mod scenarios;
pub mod sysmodel;

pub use error::{Error, Result};

// Compiles and runs the Rust snippets of the guide in book/ as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/system-models.md")]
    mod system_models {}
    #[doc = include_str!("../../../book/src/ensemble-filter.md")]
    mod ensemble_filter {}
    #[doc = include_str!("../../../book/src/consider-update.md")]
    mod consider_update {}
    #[doc = include_str!("../../../book/src/resampling.md")]
    mod resampling {}
    #[doc = include_str!("../../../book/src/scenarios.md")]
    mod scenarios {}
    #[doc = include_str!("../../../book/src/monte-carlo.md")]
    mod monte_carlo {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
