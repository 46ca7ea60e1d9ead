//! Collective observability over a sliding window.
//!
//! The Gramian accumulates the information every sensor contributes about the
//! extended state at time `k` over `k..=k+N̄`:
//!
//! ```text
//! Σ_i Σ_{j=k}^{k+N̄} Φ_{j,k}ᵀ H_{j,i}ᵀ R_{j,i}⁻¹ H_{j,i} Φ_{j,k}
//! ```
//!
//! and the check compares its smallest eigenvalue against `α` on the full
//! extended dimension `n + p`.

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::model::{ExtendedSystem, NoiseBounds};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservabilityConfig {
    window: usize,
    threshold: f64,
}

impl ObservabilityConfig {
    pub fn new(window: usize, threshold: f64) -> Result<Self> {
        if !(threshold > 0.0 && threshold.is_finite()) {
            return Err(Error::NonPositive {
                what: "observability threshold α".into(),
                value: threshold,
            });
        }
        Ok(Self { window, threshold })
    }

    /// `N̄`
    pub fn window(&self) -> usize {
        self.window
    }

    /// `α`
    pub fn threshold(&self) -> f64 {
        self.threshold
    }
}

/// `Φ_{j,k} = A_{j−1} ⋯ A_k`, identity when `j = k`.
pub fn transition_product(k: usize, j: usize, sys: &ExtendedSystem) -> Result<Matrix> {
    if j < k {
        return Err(Error::ReversedTime { from: k, to: j });
    }
    let mut phi = Matrix::identity(sys.dim(), sys.dim());
    for t in k..j {
        phi = sys.a(t) * phi;
    }
    Ok(phi)
}

pub fn collective_gramian(
    k: usize,
    config: &ObservabilityConfig,
    sys: &ExtendedSystem,
    bounds: &NoiseBounds,
) -> Result<Matrix> {
    let dim = sys.dim();
    let mut gramian = Matrix::zeros(dim, dim);
    let mut phi = Matrix::identity(dim, dim);
    for j in k..=k + config.window {
        if j > k {
            phi = sys.a(j - 1) * phi;
        }
        for i in 0..sys.sensor_count() {
            let r_inv = linalg::spd_inverse(bounds.measurement(j, i), "R").map_err(|_| Error::Singular {
                what: format!("R of sensor {i} at step {j}"),
            })?;
            let hp = sys.h(j, i) * &phi;
            gramian += hp.transpose() * r_inv * hp;
        }
    }
    Ok(linalg::symmetrize(&gramian))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservabilityReport {
    pub holds: bool,
    pub min_eigenvalue: f64,
}

pub fn check_collective_observability(
    k: usize,
    config: &ObservabilityConfig,
    sys: &ExtendedSystem,
    bounds: &NoiseBounds,
) -> Result<ObservabilityReport> {
    let min_eigenvalue = linalg::min_eigenvalue(&collective_gramian(k, config, sys, bounds)?);
    Ok(ObservabilityReport {
        holds: min_eigenvalue >= config.threshold,
        min_eigenvalue,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{extend_system, Dynamics, OriginalSystem, Timed};
    use crate::linalg::Vector;

    fn scalar(a: f64, h: f64) -> (ExtendedSystem, NoiseBounds) {
        let sys = OriginalSystem::new(
            Timed::Constant(Matrix::from_element(1, 1, a)),
            Timed::Constant(Matrix::zeros(1, 0)),
            vec![Timed::Constant(Matrix::from_element(1, 1, h))],
            Dynamics::Zero { dim: 0 },
            Dynamics::Zero { dim: 0 },
        )
        .unwrap();
        let ext = extend_system(&sys);
        let bounds = NoiseBounds::new(
            &ext,
            Timed::Constant(Matrix::identity(1, 1)),
            vec![Timed::Constant(Matrix::identity(1, 1))],
            Timed::Constant(Vector::zeros(0)),
        )
        .unwrap();
        (ext, bounds)
    }

    #[test]
    fn transition_product_basics() {
        let (ext, _) = scalar(2.0, 1.0);
        assert_eq!(transition_product(4, 4, &ext).unwrap(), Matrix::identity(1, 1));
        assert_eq!(transition_product(1, 4, &ext).unwrap()[(0, 0)], 8.0);
        assert!(matches!(transition_product(3, 2, &ext), Err(Error::ReversedTime { .. })));
    }

    #[test]
    fn scalar_gramian_counts_terms() {
        let (ext, bounds) = scalar(1.0, 1.0);
        let cfg = ObservabilityConfig::new(1, 1.0).unwrap();
        let g = collective_gramian(0, &cfg, &ext, &bounds).unwrap();
        assert_eq!(g[(0, 0)], 2.0);
        let report = check_collective_observability(0, &cfg, &ext, &bounds).unwrap();
        assert!(report.holds);
        assert_eq!(report.min_eigenvalue, 2.0);
    }

    #[test]
    fn zero_measurements_give_zero_gramian() {
        let (ext, bounds) = scalar(1.0, 0.0);
        let cfg = ObservabilityConfig::new(3, 0.5).unwrap();
        assert_eq!(collective_gramian(0, &cfg, &ext, &bounds).unwrap(), Matrix::zeros(1, 1));
        let report = check_collective_observability(0, &cfg, &ext, &bounds).unwrap();
        assert!(!report.holds);
        assert_eq!(report.min_eigenvalue, 0.0);
    }

    #[test]
    fn threshold_must_be_positive() {
        assert!(ObservabilityConfig::new(2, 0.0).is_err());
        assert!(ObservabilityConfig::new(0, 1.0).is_ok());
    }
}
