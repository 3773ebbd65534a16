use nalgebra::{DMatrix, DVector};

use super::{
    deviations, row_mean, AugmentedEnsemble, CovarianceBlocks, DeviationMatrices, FilterConfig,
    FilterEstimate, Forecast, Gains, MeasurementEnsemble,
};
use crate::error::{check_len, check_shape, Error, Result};
use crate::numkit::{
    augmented_sqrt_report, cholesky_lower, min_eigenvalue, psd_repair, sample_mvn,
    standard_normal_matrix, symmetrize, SeededRng,
};
use crate::sysmodel::SystemModel;

/// Draws the initial ensemble: states from `N(x0_mean, P0)`, parameters
/// independently from `N(b̄, Q_b)`. With `cfg.recenter_resample` the members
/// are shifted so the ensemble means are exactly `x0_mean` and `b̄`.
pub fn init_ensemble(
    model: &SystemModel,
    x0_mean: &DVector<f64>,
    p0: &DMatrix<f64>,
    cfg: &FilterConfig,
    rng: &mut SeededRng,
) -> Result<AugmentedEnsemble> {
    cfg.validate()?;
    let n = model.state_dim();
    check_len("x0_mean", n, x0_mean.len())?;
    check_shape("p0", (n, n), p0.shape())?;
    let state_sqrt = cholesky_lower(p0)?;
    let param_sqrt = cholesky_lower(model.param_cov())?;
    let mut states = sample_mvn(x0_mean, &state_sqrt, rng, cfg.ensemble_size)?;
    let mut params = sample_mvn(model.param_reference(), &param_sqrt, rng, cfg.ensemble_size)?;
    if cfg.recenter_resample {
        recenter(&mut states, x0_mean);
        recenter(&mut params, model.param_reference());
    }
    AugmentedEnsemble::new(states, params, 0)
}

fn recenter(members: &mut DMatrix<f64>, target: &DVector<f64>) {
    let shift = target - row_mean(members);
    for mut col in members.column_iter_mut() {
        col += &shift;
    }
}

/// Time update: propagates every member through the transition with fresh
/// process noise, carries the parameter members unchanged and forms the
/// prior covariance blocks from the deviation matrices.
pub fn predict(
    model: &SystemModel,
    ens: &AugmentedEnsemble,
    rng: &mut SeededRng,
) -> Result<Forecast> {
    let (n, l, m) = (model.state_dim(), model.param_dim(), ens.size());
    check_len("ensemble state dimension", n, ens.state_dim())?;
    check_len("ensemble parameter dimension", l, ens.param_dim())?;
    let epoch = ens.epoch + 1;

    let noise_sqrt = cholesky_lower(model.process_noise_cov())?;
    let noise = noise_sqrt.as_matrix() * standard_normal_matrix(n, m, rng);

    let mut states = DMatrix::zeros(n, m);
    for i in 0..m {
        let fx = model.transition(&ens.state_member(i), &ens.param_member(i), epoch);
        check_len("transition output", n, fx.len())?;
        let x = fx + noise.column(i);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "propagated state",
                epoch,
                member: i,
            });
        }
        states.set_column(i, &x);
    }
    let params = ens.params.clone();

    let mean_state = row_mean(&states);
    let mean_param = row_mean(&params);
    let m_x = deviations(&states, &mean_state);
    let m_b = deviations(&params, model.param_reference());
    let denom = (m - 1) as f64;
    let cov = CovarianceBlocks {
        p_xx: symmetrize(&(&m_x * m_x.transpose())) / denom,
        p_xb: (&m_x * m_b.transpose()) / denom,
        p_bb: symmetrize(&(&m_b * m_b.transpose())) / denom,
    };

    Ok(Forecast {
        ensemble: AugmentedEnsemble::new(states, params, epoch)?,
        mean_state,
        mean_param,
        deviations: DeviationMatrices { m_x, m_b },
        cov,
    })
}

/// Maps every member through `h(x^i, b^i)`; each member's own parameter
/// enters the measurement.
pub fn measurement_ensemble(
    model: &SystemModel,
    ens: &AugmentedEnsemble,
) -> Result<MeasurementEnsemble> {
    let (p, m) = (model.meas_dim(), ens.size());
    let mut members = DMatrix::zeros(p, m);
    for i in 0..m {
        let z = model.measurement(&ens.state_member(i), &ens.param_member(i));
        check_len("measurement output", p, z.len())?;
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "predicted measurement",
                epoch: ens.epoch,
                member: i,
            });
        }
        members.set_column(i, &z);
    }
    let mean = row_mean(&members);
    let m_z = deviations(&members, &mean);
    Ok(MeasurementEnsemble { members, mean, m_z })
}

/// Innovation covariance `P_zz = M_z M_zᵀ/(m-1) + R`, cross-covariances
/// `P_xz`, `P_bz`, and the gains `K_x = P_xz P_zz⁻¹`, `K_b = P_bz P_zz⁻¹`.
pub fn gains_and_covariances(
    dev: &DeviationMatrices,
    m_z: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<Gains> {
    let m = m_z.ncols();
    if m < 2 {
        return Err(Error::EnsembleTooSmall(m));
    }
    let p = m_z.nrows();
    check_len("m_x columns", m, dev.m_x.ncols())?;
    check_len("m_b columns", m, dev.m_b.ncols())?;
    check_shape("r", (p, p), r.shape())?;

    let denom = (m - 1) as f64;
    let p_zz = symmetrize(&((m_z * m_z.transpose()) / denom + r));
    let p_xz = (&dev.m_x * m_z.transpose()) / denom;
    let p_bz = (&dev.m_b * m_z.transpose()) / denom;

    if p_zz.iter().any(|v| !v.is_finite()) {
        return Err(Error::InnovationSingular);
    }
    let chol = p_zz.clone().cholesky().ok_or(Error::InnovationSingular)?;
    let k_x = chol.solve(&p_xz.transpose()).transpose();
    let k_b = chol.solve(&p_bz.transpose()).transpose();
    Ok(Gains {
        p_zz,
        p_xz,
        p_bz,
        k_x,
        k_b,
    })
}

/// Perturbed-observation innovations `(z + v^i) - Z^i`, `v^i ~ N(0, R)`,
/// one column per member.
pub fn perturbed_innovations(
    z_actual: &DVector<f64>,
    meas: &MeasurementEnsemble,
    r: &DMatrix<f64>,
    rng: &mut SeededRng,
) -> Result<DMatrix<f64>> {
    let (p, m) = meas.members.shape();
    check_len("z_actual", p, z_actual.len())?;
    let r_sqrt = cholesky_lower(r)?;
    let mut innov = r_sqrt.as_matrix() * standard_normal_matrix(p, m, rng);
    for (mut col, predicted) in innov.column_iter_mut().zip(meas.members.column_iter()) {
        col += z_actual;
        col -= predicted;
    }
    Ok(innov)
}

/// `members + gain · innovations`.
pub fn apply_gain(
    members: &DMatrix<f64>,
    gain: &DMatrix<f64>,
    innovations: &DMatrix<f64>,
) -> DMatrix<f64> {
    members + gain * innovations
}

/// EnKF measurement update on the augmented ensemble. State and parameter
/// members are both corrected; the reported covariance is the sample
/// covariance of the posterior ensemble.
pub fn update_enkf(
    forecast: &Forecast,
    meas: &MeasurementEnsemble,
    z_actual: &DVector<f64>,
    gains: &Gains,
    rng: &mut SeededRng,
    r: &DMatrix<f64>,
) -> Result<(AugmentedEnsemble, FilterEstimate)> {
    let prior = &forecast.ensemble;
    let innov = perturbed_innovations(z_actual, meas, r, rng)?;
    let states = apply_gain(&prior.states, &gains.k_x, &innov);
    let params = apply_gain(&prior.params, &gains.k_b, &innov);

    let mean_state = row_mean(&states);
    let mean_param = row_mean(&params);
    let m_x = deviations(&states, &mean_state);
    let m_b = deviations(&params, &mean_param);
    let denom = (prior.size() - 1) as f64;
    let cov = CovarianceBlocks {
        p_xx: symmetrize(&(&m_x * m_x.transpose())) / denom,
        p_xb: (&m_x * m_b.transpose()) / denom,
        p_bb: symmetrize(&(&m_b * m_b.transpose())) / denom,
    };
    let estimate = FilterEstimate {
        mean_state,
        mean_param,
        cov,
        epoch: prior.epoch,
        repaired: false,
    };
    Ok((
        AugmentedEnsemble::new(states, params, prior.epoch)?,
        estimate,
    ))
}

/// Consider measurement update: only the state members are corrected, the
/// parameter members and mean are carried forward, and the posterior blocks
/// follow [`consider_posterior`].
#[allow(clippy::too_many_arguments)]
pub fn update_enckf(
    forecast: &Forecast,
    meas: &MeasurementEnsemble,
    z_actual: &DVector<f64>,
    gains: &Gains,
    rng: &mut SeededRng,
    r: &DMatrix<f64>,
    q_b: &DMatrix<f64>,
) -> Result<(AugmentedEnsemble, FilterEstimate)> {
    let prior = &forecast.ensemble;
    let innov = perturbed_innovations(z_actual, meas, r, rng)?;
    let states = apply_gain(&prior.states, &gains.k_x, &innov);
    let params = prior.params.clone();

    let (cov, repaired) = consider_posterior(&forecast.cov, gains, q_b);
    let estimate = FilterEstimate {
        mean_state: row_mean(&states),
        mean_param: forecast.mean_param.clone(),
        cov,
        epoch: prior.epoch,
        repaired,
    };
    Ok((
        AugmentedEnsemble::new(states, params, prior.epoch)?,
        estimate,
    ))
}

/// Posterior blocks under the consider constraint `K_b = 0`:
///
/// ```text
/// P⁺_xx = P⁻_xx - K_x P_zz K_xᵀ
/// P⁺_xb = P⁻_xb - K_x P_bzᵀ
/// P⁺_bb = Q_b
/// ```
///
/// A `P⁺_xx` with negative eigenvalues is passed through [`psd_repair`]; the
/// returned flag records that.
pub fn consider_posterior(
    prior: &CovarianceBlocks,
    gains: &Gains,
    q_b: &DMatrix<f64>,
) -> (CovarianceBlocks, bool) {
    let mut p_xx = symmetrize(&(&prior.p_xx - &gains.k_x * &gains.p_zz * gains.k_x.transpose()));
    let repaired = min_eigenvalue(&p_xx) < 0.0;
    if repaired {
        p_xx = psd_repair(&p_xx);
    }
    let p_xb = &prior.p_xb - &gains.k_x * gains.p_bz.transpose();
    (
        CovarianceBlocks {
            p_xx,
            p_xb,
            p_bb: q_b.clone(),
        },
        repaired,
    )
}

/// Redraws `m` members from `N([x̂⁺; b̄], S Sᵀ)` with `S` the augmented square
/// root of `[[P⁺_xx, P⁺_xb], [P⁺_xbᵀ, Q_b]]`. With `cfg.recenter_resample`
/// the members are shifted so their mean is exactly the target.
///
/// The flag reports whether the Schur complement needed clamping.
pub fn resample(
    estimate: &FilterEstimate,
    q_b: &DMatrix<f64>,
    b_ref: &DVector<f64>,
    cfg: &FilterConfig,
    rng: &mut SeededRng,
) -> Result<(AugmentedEnsemble, bool)> {
    cfg.validate()?;
    let n = estimate.mean_state.len();
    let l = b_ref.len();
    check_shape("q_b", (l, l), q_b.shape())?;
    let (sqrt, clamped) = augmented_sqrt_report(&estimate.cov.p_xx, &estimate.cov.p_xb, q_b)?;

    let mut target = DVector::zeros(n + l);
    target.rows_mut(0, n).copy_from(&estimate.mean_state);
    target.rows_mut(n, l).copy_from(b_ref);

    let mut members = sample_mvn(&target, &sqrt, rng, cfg.ensemble_size)?;
    if cfg.recenter_resample {
        recenter(&mut members, &target);
    }
    let states = members.rows(0, n).into_owned();
    let params = members.rows(n, l).into_owned();
    Ok((
        AugmentedEnsemble::new(states, params, estimate.epoch)?,
        clamped,
    ))
}
