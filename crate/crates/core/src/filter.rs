//! Extended state distributed Kalman filter.
//!
//! Every sensor runs the same three stages at step `k`:
//!
//! 1. **Prediction**
//!    `X̄ = A_{k−1} X̂_{k−1} + D û_{k−1}`,
//!    `P̄ = (1+θ) A P Aᵀ + ((1+θ)/θ) Q̄ + Q` with `Q̄ = 4p·D diag(q) Dᵀ`.
//! 2. **Measurement update** with gain `K = P̄ Hᵀ (H P̄ Hᵀ + R)⁻¹` and the
//!    Joseph-form covariance `(I−KH) P̄ (I−KH)ᵀ + K R Kᵀ`.
//! 3. **Local fusion** of the neighbours' updates by covariance intersection:
//!    `P = (Σ_j a_ij P̃_j⁻¹)⁻¹`, `X̂ = P Σ_j a_ij P̃_j⁻¹ X̃_j`.
//!
//! Fusion only reads the step-`k` updates, so all sensors must finish their
//! update before any of them fuses.

use crate::error::{dim_err, Error, Result};
use crate::graph::WeightedDigraph;
use crate::linalg::{self, Matrix, Vector};
use crate::model::{estimate_increment, ExtendedSystem, NoiseBounds};

const SYMMETRY_TOLERANCE: f64 = 1e-10;

/// An estimate paired with an upper bound on its error covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorEstimate {
    x: Vector,
    p: Matrix,
}

impl SensorEstimate {
    /// Requires `p` symmetric (within 1e-10, relative to its largest entry)
    /// and positive definite.
    pub fn new(x: Vector, p: Matrix) -> Result<Self> {
        if p.shape() != (x.len(), x.len()) {
            return Err(dim_err("estimate covariance", (x.len(), x.len()), p.shape()));
        }
        if !linalg::is_symmetric(&p, SYMMETRY_TOLERANCE) {
            return Err(Error::NotSymmetric {
                what: "estimate covariance".into(),
            });
        }
        linalg::ensure_pd(&p, "estimate covariance")?;
        Ok(Self { x, p })
    }

    pub fn state(&self) -> &Vector {
        &self.x
    }

    pub fn covariance(&self) -> &Matrix {
        &self.p
    }

    pub fn into_parts(self) -> (Vector, Matrix) {
        (self.x, self.p)
    }

    pub fn is_finite(&self) -> bool {
        self.x.iter().all(|v| v.is_finite()) && linalg::all_finite(&self.p)
    }
}

/// Covariance inflation parameter `θ > 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterConfig {
    theta: f64,
}

impl FilterConfig {
    pub fn new(theta: f64) -> Result<Self> {
        if !(theta > 0.0 && theta.is_finite()) {
            return Err(Error::NonPositive {
                what: "θ".into(),
                value: theta,
            });
        }
        Ok(Self { theta })
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }
}

/// `Q̄_{k−1} = 4p · D diag(q_{k−1}) Dᵀ`.
pub fn increment_covariance(sys: &ExtendedSystem, bounds: &NoiseBounds, k_prev: usize) -> Matrix {
    let d = sys.d();
    let p = d.ncols();
    let q = bounds.increment(k_prev);
    d * Matrix::from_diagonal(q) * d.transpose() * (4.0 * p as f64)
}

/// Prediction stage for step `k ≥ 1`. `u_hat` is the already-saturated
/// increment estimate.
pub fn predict(
    prev: &SensorEstimate,
    k: usize,
    sys: &ExtendedSystem,
    bounds: &NoiseBounds,
    cfg: &FilterConfig,
    u_hat: &Vector,
) -> Result<SensorEstimate> {
    if k == 0 {
        return Err(Error::Scenario("prediction needs k >= 1".into()));
    }
    linalg::ensure_pd(&prev.p, "previous covariance")?;
    let a = sys.a(k - 1);
    if u_hat.len() != sys.d().ncols() {
        return Err(dim_err("increment estimate", (sys.d().ncols(), 1), (u_hat.len(), 1)));
    }
    let theta = cfg.theta;
    let x = a * &prev.x + sys.d() * u_hat;
    let p = a * &prev.p * a.transpose() * (1.0 + theta)
        + increment_covariance(sys, bounds, k - 1) * ((1.0 + theta) / theta)
        + bounds.process(k - 1);
    Ok(SensorEstimate {
        x,
        p: linalg::symmetrize(&p),
    })
}

/// Optimal gain `K = P̄ Hᵀ (H P̄ Hᵀ + R)⁻¹`.
pub fn gain(p_bar: &Matrix, h: &Matrix, r: &Matrix) -> Result<Matrix> {
    let (m, dim) = h.shape();
    if p_bar.shape() != (dim, dim) {
        return Err(dim_err("predicted covariance", (dim, dim), p_bar.shape()));
    }
    if r.shape() != (m, m) {
        return Err(dim_err("R", (m, m), r.shape()));
    }
    if m == 0 {
        return Ok(Matrix::zeros(dim, 0));
    }
    let innovation = linalg::symmetrize(&(h * p_bar * h.transpose() + r));
    let chol = innovation.cholesky().ok_or_else(|| Error::Singular {
        what: "innovation covariance".into(),
    })?;
    // K = (S⁻¹ H P̄)ᵀ since S and P̄ are symmetric
    Ok(chol.solve(&(h * p_bar)).transpose())
}

/// Joseph-form covariance `(I−KH) P̄ (I−KH)ᵀ + K R Kᵀ`, valid for any gain.
pub fn joseph_covariance(p_bar: &Matrix, h: &Matrix, r: &Matrix, k: &Matrix) -> Matrix {
    let dim = p_bar.nrows();
    let i_kh = Matrix::identity(dim, dim) - k * h;
    linalg::symmetrize(&(&i_kh * p_bar * i_kh.transpose() + k * r * k.transpose()))
}

/// Measurement update `X̃ = X̄ + K(y − H X̄)` with the Joseph-form covariance.
pub fn update(
    pred: &SensorEstimate,
    y: &Vector,
    h: &Matrix,
    r: &Matrix,
    k: &Matrix,
) -> Result<SensorEstimate> {
    let (m, dim) = h.shape();
    if pred.x.len() != dim {
        return Err(dim_err("H", (m, pred.x.len()), h.shape()));
    }
    if y.len() != m {
        return Err(dim_err("measurement", (m, 1), (y.len(), 1)));
    }
    if r.shape() != (m, m) {
        return Err(dim_err("R", (m, m), r.shape()));
    }
    if k.shape() != (dim, m) {
        return Err(dim_err("gain", (dim, m), k.shape()));
    }
    let x = &pred.x + k * (y - h * &pred.x);
    let p = joseph_covariance(&pred.p, h, r, k);
    Ok(SensorEstimate { x, p })
}

/// Effective fusion matrices `W_ij = a_ij P P̃_j⁻¹`, in the order of the
/// contributions passed to [`fuse_with_weights`].
#[derive(Debug, Clone, PartialEq)]
pub struct FusionWeights(pub Vec<Matrix>);

impl FusionWeights {
    pub fn sum(&self) -> Option<Matrix> {
        self.0.iter().cloned().reduce(|a, b| a + b)
    }
}

/// Covariance-intersection fusion of `(a_ij, X̃_j, P̃_j)` contributions.
/// Zero weights are skipped.
pub fn fuse(contributions: &[(f64, &SensorEstimate)]) -> Result<SensorEstimate> {
    fuse_with_weights(contributions).map(|(est, _)| est)
}

pub fn fuse_with_weights(
    contributions: &[(f64, &SensorEstimate)],
) -> Result<(SensorEstimate, FusionWeights)> {
    let dim = contributions
        .first()
        .map(|(_, e)| e.x.len())
        .ok_or_else(|| Error::Singular {
            what: "fused information matrix (no neighbours)".into(),
        })?;
    let mut info = Matrix::zeros(dim, dim);
    let mut info_state = Vector::zeros(dim);
    let mut scaled_inverses = Vec::with_capacity(contributions.len());
    for &(a, est) in contributions {
        if est.x.len() != dim {
            return Err(dim_err("neighbour estimate", (dim, 1), (est.x.len(), 1)));
        }
        if a < 0.0 || !a.is_finite() {
            return Err(Error::NonPositive {
                what: "fusion weight".into(),
                value: a,
            });
        }
        if a == 0.0 {
            scaled_inverses.push(Matrix::zeros(dim, dim));
            continue;
        }
        let scaled = linalg::spd_inverse(&est.p, "neighbour update covariance")? * a;
        info += &scaled;
        info_state += &scaled * &est.x;
        scaled_inverses.push(scaled);
    }
    let p = linalg::spd_inverse(&info, "fused information matrix").map_err(|_| Error::Singular {
        what: "fused information matrix".into(),
    })?;
    let x = &p * info_state;
    let weights = scaled_inverses.into_iter().map(|s| &p * s).collect();
    Ok((SensorEstimate { x, p }, FusionWeights(weights)))
}

/// The three stage outputs of one sensor at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StageEstimates {
    pub predicted: SensorEstimate,
    pub updated: SensorEstimate,
    pub fused: SensorEstimate,
}

/// Prediction and update for a single sensor, including its own `û`.
pub fn local_update(
    prev: &SensorEstimate,
    i: usize,
    k: usize,
    sys: &ExtendedSystem,
    bounds: &NoiseBounds,
    cfg: &FilterConfig,
    y: &Vector,
) -> Result<(SensorEstimate, SensorEstimate)> {
    let n = sys.original().state_dim();
    let p = sys.original().dynamics_dim();
    let x_hat = prev.x.rows(0, n).into_owned();
    let f_hat = prev.x.rows(n, p).into_owned();
    let u_hat = estimate_increment(&x_hat, &f_hat, k, sys.original(), bounds)?;
    let predicted = predict(prev, k, sys, bounds, cfg, &u_hat)?;
    let h = sys.h(k, i);
    let r = bounds.measurement(k, i);
    let kg = gain(&predicted.p, h, r)?;
    let updated = update(&predicted, y, h, r, &kg)?;
    Ok((predicted, updated))
}

/// One synchronous step of the whole network, returning every stage.
pub fn esdkf_step_stages(
    network: &[SensorEstimate],
    k: usize,
    sys: &ExtendedSystem,
    bounds: &NoiseBounds,
    cfg: &FilterConfig,
    graph: &WeightedDigraph,
    measurements: &[Vector],
) -> Result<Vec<StageEstimates>> {
    let sensors = sys.sensor_count();
    if network.len() != sensors || measurements.len() != sensors || graph.node_count() != sensors {
        return Err(dim_err(
            "network size",
            (sensors, sensors),
            (network.len(), measurements.len()),
        ));
    }
    let local: Vec<(SensorEstimate, SensorEstimate)> = network
        .iter()
        .zip(measurements)
        .enumerate()
        .map(|(i, (prev, y))| local_update(prev, i, k, sys, bounds, cfg, y))
        .collect::<Result<_>>()?;
    // barrier: every update exists before anyone fuses
    (0..sensors)
        .map(|i| {
            let contributions: Vec<(f64, &SensorEstimate)> = graph
                .neighbors(i)?
                .into_iter()
                .map(|j| (graph.weight(i, j), &local[j].1))
                .collect();
            let fused = fuse(&contributions)?;
            Ok(StageEstimates {
                predicted: local[i].0.clone(),
                updated: local[i].1.clone(),
                fused,
            })
        })
        .collect()
}

/// One synchronous step of the whole network.
pub fn esdkf_step(
    network: &[SensorEstimate],
    k: usize,
    sys: &ExtendedSystem,
    bounds: &NoiseBounds,
    cfg: &FilterConfig,
    graph: &WeightedDigraph,
    measurements: &[Vector],
) -> Result<Vec<SensorEstimate>> {
    Ok(esdkf_step_stages(network, k, sys, bounds, cfg, graph, measurements)?
        .into_iter()
        .map(|s| s.fused)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{extend_system, Dynamics, OriginalSystem, Timed};
    use approx::assert_relative_eq;

    fn scalar(v: f64) -> Matrix {
        Matrix::from_element(1, 1, v)
    }

    fn est(x: &[f64], p: Matrix) -> SensorEstimate {
        SensorEstimate::new(Vector::from_column_slice(x), p).unwrap()
    }

    fn scalar_plant(p: usize, q: f64) -> (ExtendedSystem, NoiseBounds) {
        let sys = OriginalSystem::new(
            Timed::Constant(scalar(1.0)),
            Timed::Constant(Matrix::zeros(1, p)),
            vec![Timed::Constant(scalar(1.0))],
            Dynamics::Zero { dim: p },
            Dynamics::Zero { dim: p },
        )
        .unwrap();
        let ext = extend_system(&sys);
        let mut qm = Matrix::zeros(1 + p, 1 + p);
        qm[(0, 0)] = 1.0;
        let bounds = NoiseBounds::new(
            &ext,
            Timed::Constant(qm),
            vec![Timed::Constant(scalar(1.0))],
            Timed::Constant(Vector::from_element(p, q)),
        )
        .unwrap();
        (ext, bounds)
    }

    #[test]
    fn predict_scalar_without_dynamics() {
        let (ext, bounds) = scalar_plant(0, 1.0);
        let prev = est(&[0.0], scalar(1.0));
        let cfg = FilterConfig::new(0.1).unwrap();
        let out = predict(&prev, 1, &ext, &bounds, &cfg, &Vector::zeros(0)).unwrap();
        assert_relative_eq!(out.p[(0, 0)], 2.1, epsilon = 1e-15);
    }

    #[test]
    fn increment_covariance_single_channel() {
        let (ext, bounds) = scalar_plant(1, 1.0);
        let qbar = increment_covariance(&ext, &bounds, 0);
        assert_eq!(qbar, Matrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 4.0]));
        // θ = 1 doubles Q̄ in the prediction
        let prev = est(&[0.0, 0.0], Matrix::identity(2, 2) * 1e-9);
        let cfg = FilterConfig::new(1.0).unwrap();
        let out = predict(&prev, 1, &ext, &bounds, &cfg, &Vector::zeros(1)).unwrap();
        let a = ext.a(0);
        let expected = a * prev.covariance() * a.transpose() * 2.0 + qbar * 2.0 + bounds.process(0);
        assert_relative_eq!(out.p, expected, epsilon = 1e-14);
    }

    #[test]
    fn predict_rejects_non_pd() {
        let (ext, bounds) = scalar_plant(0, 1.0);
        let bad = SensorEstimate {
            x: Vector::zeros(1),
            p: scalar(-1.0),
        };
        let cfg = FilterConfig::new(0.1).unwrap();
        assert!(predict(&bad, 1, &ext, &bounds, &cfg, &Vector::zeros(0)).is_err());
    }

    #[test]
    fn gain_examples() {
        assert_relative_eq!(gain(&scalar(1.0), &scalar(1.0), &scalar(1.0)).unwrap()[(0, 0)], 0.5, epsilon = 1e-15);
        assert_eq!(gain(&scalar(1.0), &scalar(0.0), &scalar(90.0)).unwrap()[(0, 0)], 0.0);
        let k = gain(
            &Matrix::identity(2, 2),
            &Matrix::from_row_slice(1, 2, &[1.0, 0.0]),
            &scalar(3.0),
        )
        .unwrap();
        assert_relative_eq!(k, Matrix::from_column_slice(2, 1, &[0.25, 0.0]), epsilon = 1e-15);
        assert!(gain(&scalar(0.0), &scalar(1.0), &scalar(0.0)).is_err());
    }

    #[test]
    fn update_examples() {
        let pred = est(&[1.0], scalar(1.0));
        let same = update(&pred, &Vector::from_element(1, 7.0), &scalar(1.0), &scalar(1.0), &scalar(0.0)).unwrap();
        assert_eq!(same, pred);

        let opt = update(&pred, &Vector::from_element(1, 3.0), &scalar(1.0), &scalar(1.0), &scalar(0.5)).unwrap();
        assert_eq!(opt.p[(0, 0)], 0.5);
        assert_eq!(opt.x[0], 2.0);
        let sub = update(&pred, &Vector::from_element(1, 3.0), &scalar(1.0), &scalar(1.0), &scalar(0.9)).unwrap();
        assert_relative_eq!(sub.p[(0, 0)], 0.82, epsilon = 1e-15);
    }

    #[test]
    fn fusion_examples() {
        let shared = est(&[1.0, -2.0], Matrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]));
        let fused = fuse(&[(0.3, &shared), (0.7, &shared)]).unwrap();
        assert_relative_eq!(fused.x, shared.x, epsilon = 1e-12);
        assert_relative_eq!(fused.p, shared.p, epsilon = 1e-12);

        let a = est(&[0.0], scalar(1.0));
        let b = est(&[2.0], scalar(1.0));
        let fused = fuse(&[(0.5, &a), (0.5, &b)]).unwrap();
        assert_eq!((fused.x[0], fused.p[(0, 0)]), (1.0, 1.0));

        let b = est(&[2.0], scalar(4.0));
        let (fused, weights) = fuse_with_weights(&[(0.5, &a), (0.5, &b)]).unwrap();
        assert_relative_eq!(fused.p[(0, 0)], 1.6, epsilon = 1e-15);
        assert_relative_eq!(fused.x[0], 0.4, epsilon = 1e-15);
        assert_relative_eq!(weights.sum().unwrap(), scalar(1.0), epsilon = 1e-15);
    }

    #[test]
    fn fusion_requires_a_positive_weight() {
        let a = est(&[0.0], scalar(1.0));
        assert!(matches!(fuse(&[(0.0, &a)]), Err(Error::Singular { .. })));
        assert!(fuse(&[]).is_err());
    }

    #[test]
    fn single_sensor_step_is_plain_filter() {
        let (ext, bounds) = scalar_plant(1, 1.0);
        let cfg = FilterConfig::new(0.5).unwrap();
        let prev = est(&[0.2, 0.1], Matrix::identity(2, 2) * 3.0);
        let y = vec![Vector::from_element(1, 1.5)];
        let out = esdkf_step(
            std::slice::from_ref(&prev),
            1,
            &ext,
            &bounds,
            &cfg,
            &WeightedDigraph::identity(1),
            &y,
        )
        .unwrap();
        let pred = predict(&prev, 1, &ext, &bounds, &cfg, &Vector::zeros(1)).unwrap();
        let k = gain(&pred.p, ext.h(1, 0), bounds.measurement(1, 0)).unwrap();
        let upd = update(&pred, &y[0], ext.h(1, 0), bounds.measurement(1, 0), &k).unwrap();
        assert_relative_eq!(out[0].x, upd.x, epsilon = 1e-12);
        assert_relative_eq!(out[0].p, upd.p, epsilon = 1e-12);
    }

    #[test]
    fn config_rejects_nonpositive_theta() {
        assert!(FilterConfig::new(0.0).is_err());
        assert!(FilterConfig::new(f64::NAN).is_err());
        assert!(SensorEstimate::new(Vector::zeros(2), Matrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0])).is_err());
    }
}
