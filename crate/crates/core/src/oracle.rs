//! Closed-form linear-Gaussian filters used as reference solutions.
//!
//! For a linear model
//!
//! ```text
//! x_k = A x_{k-1} + B b + G w,   w ~ N(0, Q)
//! z_k = H x_k + D b + v,         v ~ N(0, R)
//! ```
//!
//! [`kalman_step`] treats `b` as known (`b = b̄`) and [`schmidt_kalman_step`]
//! treats it as a consider parameter with covariance `Q_b`. The ensemble
//! filters converge to these as the ensemble grows.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, check_shape, Error, Result};
use crate::numkit::{self, symmetrize};
use crate::sysmodel::SystemModel;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub q_b: DMatrix<f64>,
    pub b_ref: DVector<f64>,
}

impl LinearModel {
    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.a.nrows();
        let l = self.b_ref.len();
        let p = self.h.nrows();
        let q = self.g.ncols();
        check_shape("A", (n, n), self.a.shape())?;
        check_shape("B", (n, l), self.b.shape())?;
        check_shape("G", (n, q), self.g.shape())?;
        check_shape("H", (p, n), self.h.shape())?;
        check_shape("D", (p, l), self.d.shape())?;
        check_shape("Q", (q, q), self.q.shape())?;
        check_shape("R", (p, p), self.r.shape())?;
        check_shape("Q_b", (l, l), self.q_b.shape())?;
        numkit::check_psd("Q", &self.q, 1e-12)?;
        numkit::check_psd("Q_b", &self.q_b, 1e-12)?;
        Ok(())
    }

    /// Process noise covariance in state space, `G Q Gᵀ`.
    pub fn state_noise(&self) -> DMatrix<f64> {
        symmetrize(&(&self.g * &self.q * self.g.transpose()))
    }

    /// The same dynamics as a [`SystemModel`] for the ensemble filters.
    pub fn system_model(&self) -> Result<SystemModel> {
        self.validate()?;
        let (a, b) = (self.a.clone(), self.b.clone());
        let (h, d) = (self.h.clone(), self.d.clone());
        SystemModel::builder(self.a.nrows(), self.h.nrows(), self.b_ref.len())
            .transition(move |x, p, _| &a * x + &b * p)
            .measurement(move |x, p| &h * x + &d * p)
            .process_noise(self.state_noise())
            .measurement_noise(self.r.clone())
            .parameters(self.b_ref.clone(), self.q_b.clone())
            .build()
    }
}

fn gain(p_xz: &DMatrix<f64>, p_zz: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = p_zz.clone().cholesky().ok_or(Error::InnovationSingular)?;
    Ok(chol.solve(&p_xz.transpose()).transpose())
}

/// One predict/update cycle of the Kalman filter with `b = b̄` known.
/// The covariance update uses the Joseph form.
pub fn kalman_step(
    model: &LinearModel,
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    z: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = model.state_dim();
    check_len("mean", n, mean.len())?;
    check_shape("cov", (n, n), cov.shape())?;
    check_len("z", model.h.nrows(), z.len())?;

    let x_prior = &model.a * mean + &model.b * &model.b_ref;
    let p_prior = symmetrize(&(&model.a * cov * model.a.transpose() + model.state_noise()));

    let p_zz = symmetrize(&(&model.h * &p_prior * model.h.transpose() + &model.r));
    let k = gain(&(&p_prior * model.h.transpose()), &p_zz)?;
    let innovation = z - &model.h * &x_prior - &model.d * &model.b_ref;
    let x_post = &x_prior + &k * innovation;

    let i_kh = DMatrix::identity(n, n) - &k * &model.h;
    let p_post = &i_kh * &p_prior * i_kh.transpose() + &k * &model.r * k.transpose();
    Ok((x_post, symmetrize(&p_post)))
}

/// One predict/update cycle of the Schmidt-Kalman (consider) filter.
///
/// Returns the posterior mean, `P_xx` and `P_xb`; `P_bb` stays `Q_b`.
pub fn schmidt_kalman_step(
    model: &LinearModel,
    mean: &DVector<f64>,
    p_xx: &DMatrix<f64>,
    p_xb: &DMatrix<f64>,
    z: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let n = model.state_dim();
    let l = model.b_ref.len();
    check_len("mean", n, mean.len())?;
    check_shape("p_xx", (n, n), p_xx.shape())?;
    check_shape("p_xb", (n, l), p_xb.shape())?;
    check_len("z", model.h.nrows(), z.len())?;
    let (a, b, h, d, q_b) = (&model.a, &model.b, &model.h, &model.d, &model.q_b);

    let x_prior = a * mean + b * &model.b_ref;
    let cross = a * p_xb * b.transpose();
    let pxx_prior = symmetrize(
        &(a * p_xx * a.transpose()
            + &cross
            + cross.transpose()
            + b * q_b * b.transpose()
            + model.state_noise()),
    );
    let pxb_prior = a * p_xb + b * q_b;

    let meas_cross = h * &pxb_prior * d.transpose();
    let p_zz = symmetrize(
        &(h * &pxx_prior * h.transpose()
            + &meas_cross
            + meas_cross.transpose()
            + d * q_b * d.transpose()
            + &model.r),
    );
    let p_xz = &pxx_prior * h.transpose() + &pxb_prior * d.transpose();
    let k = gain(&p_xz, &p_zz)?;

    let innovation = z - h * &x_prior - d * &model.b_ref;
    let x_post = &x_prior + &k * innovation;
    let pxx_post = symmetrize(&(&pxx_prior - &k * &p_zz * k.transpose()));
    let pxb_post = &pxb_prior - &k * (h * &pxb_prior + d * q_b);
    Ok((x_post, pxx_post, pxb_post))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenarios::spacecraft_linear_model;
    use nalgebra::{dmatrix, dvector};

    fn measurements(k: usize) -> Vec<DVector<f64>> {
        (1..=k)
            .map(|i| dvector![0.5 * (i as f64 * 0.7).sin() - 0.2])
            .collect()
    }

    #[test]
    fn uninformative_measurement_keeps_prior() {
        let mut model = spacecraft_linear_model();
        model.h = DMatrix::zeros(1, 2);
        let x0 = dvector![2.0, 1.0];
        let p0 = DMatrix::identity(2, 2) * 0.025;
        let (x, p) = kalman_step(&model, &x0, &p0, &dvector![3.0]).unwrap();
        assert!((x - &model.a * &x0).amax() < 1e-15);
        let p_prior = &model.a * &p0 * model.a.transpose() + model.state_noise();
        assert!((p - p_prior).amax() < 1e-15);
    }

    #[test]
    fn huge_measurement_noise_gives_no_gain() {
        let mut model = spacecraft_linear_model();
        model.r = dmatrix![1e12];
        let x0 = dvector![2.0, 1.0];
        let p0 = DMatrix::identity(2, 2) * 0.025;
        let (x, _) = kalman_step(&model, &x0, &p0, &dvector![100.0]).unwrap();
        assert!((x - &model.a * &x0).amax() < 1e-6);
    }

    #[test]
    fn exact_measurement_without_noise_tracks_dynamics() {
        let mut model = spacecraft_linear_model();
        model.q = dmatrix![0.0];
        let x0 = dvector![2.0, 1.0];
        let expected = &model.a * &x0 + &model.b * &model.b_ref;
        let z = &model.h * &expected;
        let (x, _) = kalman_step(&model, &x0, &DMatrix::zeros(2, 2), &z).unwrap();
        assert!((x - expected).amax() < 1e-15);
    }

    #[test]
    fn schmidt_without_parameter_uncertainty_is_kalman() {
        let mut model = spacecraft_linear_model();
        model.q_b = dmatrix![0.0];
        let mut kf = (dvector![2.0, 1.0], DMatrix::identity(2, 2) * 0.025);
        let mut skf = (kf.0.clone(), kf.1.clone(), DMatrix::zeros(2, 1));
        for z in measurements(40) {
            kf = kalman_step(&model, &kf.0, &kf.1, &z).unwrap();
            skf = schmidt_kalman_step(&model, &skf.0, &skf.1, &skf.2, &z).unwrap();
            assert!((&kf.0 - &skf.0).amax() < 1e-12);
            assert!((&kf.1 - &skf.1).amax() < 1e-12);
            assert!(skf.2.amax() == 0.0);
        }
    }

    #[test]
    fn decoupled_parameter_has_no_effect() {
        let mut model = spacecraft_linear_model();
        model.b = DMatrix::zeros(2, 1);
        let x0 = dvector![2.0, 1.0];
        let p0 = DMatrix::identity(2, 2) * 0.025;
        let z = dvector![0.4];
        let (xk, pk) = kalman_step(&model, &x0, &p0, &z).unwrap();
        let (xs, ps, pxb) =
            schmidt_kalman_step(&model, &x0, &p0, &DMatrix::zeros(2, 1), &z).unwrap();
        assert!((xk - xs).amax() < 1e-14);
        assert!((pk - ps).amax() < 1e-14);
        assert_eq!(pxb, DMatrix::zeros(2, 1));
    }

    #[test]
    fn consider_covariance_dominates() {
        let model = spacecraft_linear_model();
        let mut kf = (dvector![2.0, 1.0], DMatrix::identity(2, 2) * 0.025);
        let mut skf = (kf.0.clone(), kf.1.clone(), DMatrix::zeros(2, 1));
        for z in measurements(40) {
            kf = kalman_step(&model, &kf.0, &kf.1, &z).unwrap();
            skf = schmidt_kalman_step(&model, &skf.0, &skf.1, &skf.2, &z).unwrap();
            assert!(numkit::min_eigenvalue(&(&skf.1 - &kf.1)) >= -1e-10);
            assert_eq!(numkit::asymmetry(&kf.1), 0.0);
            assert_eq!(numkit::asymmetry(&skf.1), 0.0);
        }
    }

    #[test]
    fn schmidt_trace_regression() {
        // Epoch 1 checked by hand: tr(P⁻) = 0.5087291425, P⁻zz = 0.73368754,
        // tr(P⁺) = tr(P⁻) - |P⁻xz|² / P⁻zz. Later epochs are frozen values.
        let model = spacecraft_linear_model();
        let mut skf = (
            dvector![2.0, 1.0],
            DMatrix::identity(2, 2) * 0.025,
            DMatrix::zeros(2, 1),
        );
        let mut traces = Vec::new();
        for z in measurements(40) {
            skf = schmidt_kalman_step(&model, &skf.0, &skf.1, &skf.2, &z).unwrap();
            traces.push(skf.1.trace());
        }
        let frozen = [(0, TRACE_1), (9, TRACE_10), (39, TRACE_40)];
        for (i, expected) in frozen {
            assert!(
                (traces[i] - expected).abs() < 1e-9 * expected,
                "epoch {}: {} vs {}",
                i + 1,
                traces[i],
                expected
            );
        }
        let hand = 0.5087291425 - (0.03846746f64.powi(2) + 0.48368754f64.powi(2)) / 0.73368754;
        assert!((traces[0] - hand).abs() < 1e-8);
        // The covariance recursion does not depend on the data and settles.
        assert!((traces[39] - traces[29]).abs() < 1e-6);
    }

    const TRACE_1: f64 = 0.187838614864621;
    const TRACE_10: f64 = 0.320_283_109_095_136;
    const TRACE_40: f64 = 0.320_283_592_354_150_55;
}
