//! Monte Carlo campaigns and RMSE aggregation.
//!
//! Every run simulates one truth trajectory and feeds the same measurements
//! to every `(mode, m)` filter (a paired design). Runs execute in parallel;
//! results are reduced in run-index order, so a report depends only on its
//! [`ScenarioSpec`] and not on the worker count.

use std::collections::BTreeSet;
use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::{EnsembleFilter, FilterConfig, FilterDiagnostics, FilterEstimate, FilterMode};
use crate::numkit::{asymmetry, max_abs, min_eigenvalue, PSD_TOL, SYMMETRY_TOL};
use crate::scenarios::ScenarioSpec;
use crate::sysmodel::SystemModel;

/// How per-epoch RMSE and its mean are formed; echoed into report metadata.
pub const RMSE_DEFINITION: &str = "rmse[k][c] = sqrt(mean over runs of (xhat[k][c] - x[k][c])^2) \
for epochs k = 1..K; mean_rmse averages rmse over all epochs and components";

/// RMSE of one filter configuration across a campaign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmseSeries {
    pub mode: FilterMode,
    pub ensemble_size: usize,
    /// `per_epoch[k - 1][c]` for epochs `1..=K`.
    pub per_epoch: Vec<Vec<f64>>,
    pub mean_rmse: f64,
    /// Mean over epochs, per state component.
    pub component_means: Vec<f64>,
    pub diagnostics: FilterDiagnostics,
    /// Epochs whose reported covariance failed a symmetry, PSD, `P_bb = Q_b`
    /// or parameter-mean check.
    pub invariant_violations: usize,
}

impl RmseSeries {
    pub fn from_per_epoch(
        mode: FilterMode,
        ensemble_size: usize,
        per_epoch: Vec<Vec<f64>>,
    ) -> Self {
        let (mean_rmse, component_means) = epoch_means(&per_epoch);
        Self {
            mode,
            ensemble_size,
            per_epoch,
            mean_rmse,
            component_means,
            diagnostics: FilterDiagnostics::default(),
            invariant_violations: 0,
        }
    }
}

fn epoch_means(per_epoch: &[Vec<f64>]) -> (f64, Vec<f64>) {
    let epochs = per_epoch.len();
    let comps = per_epoch.first().map_or(0, Vec::len);
    if epochs == 0 || comps == 0 {
        return (0.0, vec![0.0; comps]);
    }
    let component_means: Vec<f64> = (0..comps)
        .map(|c| per_epoch.iter().map(|row| row[c]).sum::<f64>() / epochs as f64)
        .collect();
    let mean = per_epoch.iter().flatten().sum::<f64>() / (epochs * comps) as f64;
    (mean, component_means)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub spec: ScenarioSpec,
    pub seed: u64,
    pub modes: Vec<FilterMode>,
    pub wall_clock_secs: f64,
    pub version: String,
    pub rmse_definition: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmseReport {
    pub series: Vec<RmseSeries>,
    pub metadata: ReportMetadata,
}

impl RmseReport {
    pub fn get(&self, mode: FilterMode, ensemble_size: usize) -> Option<&RmseSeries> {
        self.series
            .iter()
            .find(|s| s.mode == mode && s.ensemble_size == ensemble_size)
    }
}

/// EnCKF versus EnKF at one ensemble size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub ensemble_size: usize,
    pub enkf_mean_rmse: f64,
    pub enckf_mean_rmse: f64,
    /// Share of `(epoch, component)` cells where EnCKF is strictly better.
    pub win_fraction: f64,
    pub component_win_fractions: Vec<f64>,
}

/// Share of cells where `challenger < baseline`; ties are not wins.
pub fn win_fraction(challenger: &[Vec<f64>], baseline: &[Vec<f64>]) -> f64 {
    let mut cells = 0usize;
    let mut wins = 0usize;
    for (a, b) in challenger.iter().zip(baseline) {
        for (x, y) in a.iter().zip(b) {
            cells += 1;
            wins += usize::from(x < y);
        }
    }
    if cells == 0 {
        0.0
    } else {
        wins as f64 / cells as f64
    }
}

/// [`win_fraction`] restricted to one state component.
pub fn component_win_fraction(challenger: &[Vec<f64>], baseline: &[Vec<f64>], c: usize) -> f64 {
    let pick = |s: &[Vec<f64>]| s.iter().map(|row| vec![row[c]]).collect::<Vec<_>>();
    win_fraction(&pick(challenger), &pick(baseline))
}

/// Per-size comparison of the two modes. Fails unless at least one ensemble
/// size has both an EnKF and an EnCKF series.
pub fn compare_report(report: &RmseReport) -> Result<Vec<Comparison>> {
    let sizes: BTreeSet<usize> = report.series.iter().map(|s| s.ensemble_size).collect();
    let out: Vec<Comparison> = sizes
        .into_iter()
        .filter_map(|m| {
            let enkf = report.get(FilterMode::Enkf, m)?;
            let enckf = report.get(FilterMode::Enckf, m)?;
            let comps = enckf.component_means.len();
            Some(Comparison {
                ensemble_size: m,
                enkf_mean_rmse: enkf.mean_rmse,
                enckf_mean_rmse: enckf.mean_rmse,
                win_fraction: win_fraction(&enckf.per_epoch, &enkf.per_epoch),
                component_win_fractions: (0..comps)
                    .map(|c| component_win_fraction(&enckf.per_epoch, &enkf.per_epoch, c))
                    .collect(),
            })
        })
        .collect();
    if out.is_empty() {
        return Err(Error::InvalidConfig(
            "need both modes (enkf and enckf) at a common ensemble size".into(),
        ));
    }
    Ok(out)
}

struct RunOutcome {
    squared_errors: DMatrix<f64>,
    diagnostics: FilterDiagnostics,
    violations: usize,
}

/// Runs a campaign on the global thread pool.
pub fn run_campaign(spec: &ScenarioSpec, modes: &[FilterMode]) -> Result<RmseReport> {
    run_campaign_with_workers(spec, modes, None)
}

/// Runs a campaign on `workers` threads (`None`: available parallelism).
pub fn run_campaign_with_workers(
    spec: &ScenarioSpec,
    modes: &[FilterMode],
    workers: Option<usize>,
) -> Result<RmseReport> {
    spec.validate()?;
    let modes: Vec<FilterMode> = modes
        .iter()
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if modes.is_empty() {
        return Err(Error::InvalidConfig("no filter modes selected".into()));
    }
    let started = Instant::now();
    let scenario = spec.scenario();
    let models: Vec<(FilterMode, SystemModel)> = modes
        .iter()
        .map(|&mode| scenario.filter_model(mode).map(|m| (mode, m)))
        .collect::<Result<_>>()?;
    let combos: Vec<(usize, FilterMode)> = spec
        .ensemble_sizes
        .iter()
        .flat_map(|&m| modes.iter().map(move |&mode| (m, mode)))
        .collect();
    let (x0, p0) = scenario.initial_estimate();

    let run_one = |run: usize| -> Result<Vec<RunOutcome>> {
        let truth = scenario.generate_truth(spec, run)?;
        combos
            .iter()
            .map(|&(m, mode)| {
                let model = &models
                    .iter()
                    .find(|(md, _)| *md == mode)
                    .expect("model per mode")
                    .1;
                let cfg = FilterConfig {
                    ensemble_size: m,
                    mode,
                    recenter_resample: spec.recenter_resample,
                    seed: spec.seed,
                    run: run as u64,
                };
                let wrap = |e: Error| Error::Campaign {
                    run,
                    mode,
                    ensemble_size: m,
                    source: Box::new(e),
                };
                let mut filter = EnsembleFilter::new(model.clone(), &x0, &p0, cfg).map_err(wrap)?;
                let n = model.state_dim();
                let mut squared_errors = DMatrix::zeros(spec.steps, n);
                let mut violations = 0;
                for (k, z) in truth.measurements.iter().enumerate() {
                    let est = filter.step(z).map_err(wrap)?;
                    let err = &est.mean_state - &truth.states[k + 1];
                    for c in 0..n {
                        squared_errors[(k, c)] = err[c] * err[c];
                    }
                    violations += usize::from(!estimate_is_consistent(&est, model, &cfg));
                }
                Ok(RunOutcome {
                    squared_errors,
                    diagnostics: filter.diagnostics(),
                    violations,
                })
            })
            .collect()
    };

    let outcomes: Vec<Result<Vec<RunOutcome>>> = match workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w.max(1))
            .build()
            .map_err(|e| Error::InvalidConfig(format!("worker pool: {e}")))?
            .install(|| (0..spec.mc_runs).into_par_iter().map(run_one).collect()),
        None => (0..spec.mc_runs).into_par_iter().map(run_one).collect(),
    };

    let mut sums: Vec<DMatrix<f64>> = Vec::new();
    let mut diagnostics = vec![FilterDiagnostics::default(); combos.len()];
    let mut violations = vec![0usize; combos.len()];
    for outcome in outcomes {
        let outcome = outcome?;
        if sums.is_empty() {
            sums = outcome
                .iter()
                .map(|o| DMatrix::zeros(o.squared_errors.nrows(), o.squared_errors.ncols()))
                .collect();
        }
        for (i, o) in outcome.into_iter().enumerate() {
            sums[i] += o.squared_errors;
            diagnostics[i] += o.diagnostics;
            violations[i] += o.violations;
        }
    }

    let runs = spec.mc_runs as f64;
    let series = combos
        .iter()
        .enumerate()
        .map(|(i, &(m, mode))| {
            let per_epoch = sums[i]
                .row_iter()
                .map(|row| row.iter().map(|s| (s / runs).sqrt()).collect())
                .collect();
            let mut s = RmseSeries::from_per_epoch(mode, m, per_epoch);
            s.diagnostics = diagnostics[i];
            s.invariant_violations = violations[i];
            s
        })
        .collect();

    Ok(RmseReport {
        series,
        metadata: ReportMetadata {
            spec: spec.clone(),
            seed: spec.seed,
            modes,
            wall_clock_secs: started.elapsed().as_secs_f64(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            rmse_definition: RMSE_DEFINITION.to_string(),
        },
    })
}

/// Symmetric PSD `P_xx`; under the consider filter also `P_bb = Q_b`
/// exactly and, with recentering, a parameter mean of `b̄`.
pub fn estimate_is_consistent(
    est: &FilterEstimate,
    model: &SystemModel,
    cfg: &FilterConfig,
) -> bool {
    let p = &est.cov.p_xx;
    if p.iter().any(|v| !v.is_finite()) {
        return false;
    }
    if asymmetry(p) > SYMMETRY_TOL * max_abs(p) {
        return false;
    }
    if min_eigenvalue(p) < -PSD_TOL * p.trace().abs() {
        return false;
    }
    if cfg.mode == FilterMode::Enckf {
        if &est.cov.p_bb != model.param_cov() {
            return false;
        }
        if cfg.recenter_resample {
            let scale = model.param_reference().amax().max(1.0);
            if (&est.mean_param - model.param_reference()).amax() > 1e-12 * scale {
                return false;
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenarios::ScenarioKind;

    #[test]
    fn single_run_rmse_is_absolute_error() {
        let s = RmseSeries::from_per_epoch(FilterMode::Enkf, 13, vec![vec![3.0, 4.0]]);
        assert_eq!(s.component_means, vec![3.0, 4.0]);
        assert_eq!(s.mean_rmse, 3.5);
    }

    #[test]
    fn win_fraction_ties_are_not_wins() {
        let a = vec![vec![1.0, 2.0], vec![3.0, 4.0]];
        assert_eq!(win_fraction(&a, &a), 0.0);
        let lower = vec![vec![0.5, 1.0], vec![2.0, 3.9]];
        assert_eq!(win_fraction(&lower, &a), 1.0);
        let mixed = vec![vec![0.5, 2.0], vec![3.0, 5.0]];
        assert_eq!(win_fraction(&mixed, &a), 0.25);
        assert_eq!(component_win_fraction(&mixed, &a, 0), 0.5);
        assert_eq!(component_win_fraction(&mixed, &a, 1), 0.0);
    }

    fn tiny_spec(kind: ScenarioKind) -> ScenarioSpec {
        ScenarioSpec {
            steps: 15,
            mc_runs: 6,
            ensemble_sizes: vec![13],
            seed: 99,
            ..ScenarioSpec::standard(kind)
        }
    }

    #[test]
    fn compare_needs_both_modes() {
        let report = run_campaign(&tiny_spec(ScenarioKind::Ungm), &[FilterMode::Enckf]).unwrap();
        assert!(compare_report(&report).is_err());
        let report = run_campaign(&tiny_spec(ScenarioKind::Ungm), &FilterMode::ALL).unwrap();
        let cmp = compare_report(&report).unwrap();
        assert_eq!(cmp.len(), 1);
        assert_eq!(cmp[0].ensemble_size, 13);
    }

    #[test]
    fn noise_free_exact_filter_has_zero_rmse() {
        let mut spec = tiny_spec(ScenarioKind::Spacecraft);
        spec.overrides.q = Some(0.0);
        spec.overrides.p0 = Some(0.0);
        spec.overrides.qb = Some(0.0);
        spec.overrides.truth_b = Some(0.0);
        let report = run_campaign(&spec, &FilterMode::ALL).unwrap();
        for s in &report.series {
            assert!(s.per_epoch.iter().flatten().all(|v| *v < 1e-12), "{s:?}");
        }
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let spec = tiny_spec(ScenarioKind::Spacecraft);
        let a = run_campaign_with_workers(&spec, &FilterMode::ALL, Some(1)).unwrap();
        let b = run_campaign_with_workers(&spec, &FilterMode::ALL, Some(4)).unwrap();
        assert_eq!(a.series, b.series);
        for s in &a.series {
            assert!(s
                .per_epoch
                .iter()
                .flatten()
                .all(|v| v.is_finite() && *v >= 0.0));
            assert_eq!(s.invariant_violations, 0);
        }
    }

    #[test]
    fn mean_rmse_ignores_run_order() {
        // Reversing the run order of the reduction must not move mean_rmse
        // beyond rounding.
        let spec = tiny_spec(ScenarioKind::Ungm);
        let scenario = spec.scenario();
        let (x0, p0) = scenario.initial_estimate();
        let model = scenario.filter_model(FilterMode::Enckf).unwrap();
        let per_run: Vec<Vec<f64>> = (0..spec.mc_runs)
            .map(|run| {
                let truth = scenario.generate_truth(&spec, run).unwrap();
                let cfg = FilterConfig {
                    run: run as u64,
                    ..FilterConfig::new(13, FilterMode::Enckf, spec.seed)
                };
                let mut f = EnsembleFilter::new(model.clone(), &x0, &p0, cfg).unwrap();
                f.run(&truth.measurements)
                    .unwrap()
                    .iter()
                    .zip(&truth.states[1..])
                    .map(|(e, x)| (e.mean_state[0] - x[0]).powi(2))
                    .collect()
            })
            .collect();
        let mean_of = |order: &mut dyn Iterator<Item = &Vec<f64>>| {
            let mut sums = vec![0.0; spec.steps];
            for run in order {
                for (s, v) in sums.iter_mut().zip(run) {
                    *s += v;
                }
            }
            sums.iter()
                .map(|s| (s / spec.mc_runs as f64).sqrt())
                .sum::<f64>()
                / spec.steps as f64
        };
        let forward = mean_of(&mut per_run.iter());
        let backward = mean_of(&mut per_run.iter().rev());
        assert!((forward - backward).abs() < 1e-12);
        let report = run_campaign(&spec, &[FilterMode::Enckf]).unwrap();
        assert!((report.series[0].mean_rmse - forward).abs() < 1e-12);
    }

    #[test]
    fn failing_run_is_identified() {
        let mut spec = tiny_spec(ScenarioKind::Ungm);
        spec.overrides.p0 = Some(-1.0);
        let err = run_campaign(&spec, &[FilterMode::Enkf]).unwrap_err();
        assert!(matches!(
            err,
            Error::Campaign {
                mode: FilterMode::Enkf,
                ensemble_size: 13,
                ..
            }
        ));
    }
}
