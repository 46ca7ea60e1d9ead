//! Plant model, extended-state construction and ground-truth simulation.
//!
//! The original plant is
//!
//! ```text
//! x_{k+1} = Ā_k x_k + Ḡ_k F(x_k, k) + ω̄_k
//! y_{k,i} = H̄_{k,i} x_k + v_{k,i}
//! ```
//!
//! and the filter runs on the stacked state `X_k = (x_k; F_k)` of dimension
//! `n + p`, driven by the dynamics increment `u_k = F_{k+1} − F_k`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::linalg::{self, Matrix, Vector};

/// A value that is either constant in time or given per step, holding the
/// last entry beyond the end of the sequence.
#[derive(Debug, Clone, PartialEq)]
pub enum Timed<T> {
    Constant(T),
    Sequence(Vec<T>),
}

impl<T> Timed<T> {
    pub fn at(&self, k: usize) -> &T {
        match self {
            Timed::Constant(v) => v,
            Timed::Sequence(seq) => &seq[k.min(seq.len() - 1)],
        }
    }

    pub fn iter(&self) -> std::slice::Iter<'_, T> {
        match self {
            Timed::Constant(v) => std::slice::from_ref(v).iter(),
            Timed::Sequence(seq) => seq.iter(),
        }
    }

    /// Number of distinct time slots (1 for constants).
    pub fn len(&self) -> usize {
        match self {
            Timed::Constant(_) => 1,
            Timed::Sequence(seq) => seq.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> Timed<U> {
        match self {
            Timed::Constant(v) => Timed::Constant(f(v)),
            Timed::Sequence(seq) => Timed::Sequence(seq.iter().map(f).collect()),
        }
    }
}

/// Built-in nonlinear dynamics `F(x, k)`. Scenario files select one of these
/// by name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Dynamics {
    /// `F ≡ 0 ∈ ℝ^dim`.
    Zero { dim: usize },
    /// `F ≡ values`.
    Constant { values: Vec<f64> },
    /// `F_j = slope · k`.
    TimeRamp { dim: usize, slope: f64 },
    /// `F_j = amplitude · sin(x[states_j]) + slope · k`.
    SinPlusRamp {
        states: Vec<usize>,
        amplitude: f64,
        slope: f64,
    },
    /// `F_j = x[states_j]²`.
    Square { states: Vec<usize> },
}

impl Dynamics {
    pub fn dim(&self) -> usize {
        match self {
            Dynamics::Zero { dim } | Dynamics::TimeRamp { dim, .. } => *dim,
            Dynamics::Constant { values } => values.len(),
            Dynamics::SinPlusRamp { states, .. } | Dynamics::Square { states } => states.len(),
        }
    }

    fn max_state_index(&self) -> Option<usize> {
        match self {
            Dynamics::SinPlusRamp { states, .. } | Dynamics::Square { states } => {
                states.iter().copied().max()
            }
            _ => None,
        }
    }

    pub fn eval(&self, x: &Vector, k: usize) -> Vector {
        let t = k as f64;
        match self {
            Dynamics::Zero { dim } => Vector::zeros(*dim),
            Dynamics::Constant { values } => Vector::from_column_slice(values),
            Dynamics::TimeRamp { dim, slope } => Vector::from_element(*dim, slope * t),
            Dynamics::SinPlusRamp {
                states,
                amplitude,
                slope,
            } => Vector::from_iterator(
                states.len(),
                states.iter().map(|&s| amplitude * x[s].sin() + slope * t),
            ),
            Dynamics::Square { states } => {
                Vector::from_iterator(states.len(), states.iter().map(|&s| x[s] * x[s]))
            }
        }
    }
}

/// The original plant: `Ā_k`, `Ḡ_k`, per-sensor `H̄_{k,i}`, the nominal
/// dynamics `F̄` known to the filter and the true dynamics used by the
/// simulator.
#[derive(Debug, Clone, PartialEq)]
pub struct OriginalSystem {
    n: usize,
    p: usize,
    a_bar: Timed<Matrix>,
    g_bar: Timed<Matrix>,
    h_bar: Vec<Timed<Matrix>>,
    nominal: Dynamics,
    truth: Dynamics,
}

impl OriginalSystem {
    pub fn new(
        a_bar: Timed<Matrix>,
        g_bar: Timed<Matrix>,
        h_bar: Vec<Timed<Matrix>>,
        nominal: Dynamics,
        truth: Dynamics,
    ) -> Result<Self> {
        let n = a_bar.at(0).nrows();
        let p = nominal.dim();
        for a in a_bar.iter() {
            if a.shape() != (n, n) {
                return Err(dim_err("Ā", (n, n), a.shape()));
            }
        }
        for g in g_bar.iter() {
            if g.shape() != (n, p) {
                return Err(dim_err("Ḡ", (n, p), g.shape()));
            }
        }
        if h_bar.is_empty() {
            return Err(Error::Scenario("at least one sensor is required".into()));
        }
        for (i, h) in h_bar.iter().enumerate() {
            let m = h.at(0).nrows();
            for hk in h.iter() {
                if hk.shape() != (m, n) {
                    return Err(dim_err(format!("H̄ of sensor {i}"), (m, n), hk.shape()));
                }
            }
        }
        for (what, f) in [("nominal dynamics", &nominal), ("true dynamics", &truth)] {
            if f.dim() != p {
                return Err(dim_err(what, (p, 1), (f.dim(), 1)));
            }
            if let Some(s) = f.max_state_index() {
                if s >= n {
                    return Err(Error::Scenario(format!(
                        "{what} reads state component {s}, state dimension is {n}"
                    )));
                }
            }
        }
        Ok(Self {
            n,
            p,
            a_bar,
            g_bar,
            h_bar,
            nominal,
            truth,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.n
    }

    pub fn dynamics_dim(&self) -> usize {
        self.p
    }

    pub fn sensor_count(&self) -> usize {
        self.h_bar.len()
    }

    pub fn measurement_dim(&self, i: usize) -> usize {
        self.h_bar[i].at(0).nrows()
    }

    pub fn a_bar(&self, k: usize) -> &Matrix {
        self.a_bar.at(k)
    }

    pub fn g_bar(&self, k: usize) -> &Matrix {
        self.g_bar.at(k)
    }

    pub fn h_bar(&self, k: usize, i: usize) -> &Matrix {
        self.h_bar[i].at(k)
    }

    pub fn a_bar_series(&self) -> &Timed<Matrix> {
        &self.a_bar
    }

    pub fn g_bar_series(&self) -> &Timed<Matrix> {
        &self.g_bar
    }

    pub fn h_bar_series(&self) -> &[Timed<Matrix>] {
        &self.h_bar
    }

    pub fn nominal(&self) -> &Dynamics {
        &self.nominal
    }

    pub fn truth(&self) -> &Dynamics {
        &self.truth
    }

    /// Longest time-varying sequence among the system matrices.
    pub fn time_slots(&self) -> usize {
        self.h_bar
            .iter()
            .map(Timed::len)
            .chain([self.a_bar.len(), self.g_bar.len()])
            .max()
            .unwrap_or(1)
    }
}

/// Extended system `X_{k+1} = A_k X_k + D u_k + ω_k`, `y_{k,i} = H_{k,i} X_k + v_{k,i}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedSystem {
    original: OriginalSystem,
    a: Timed<Matrix>,
    d: Matrix,
    h: Vec<Timed<Matrix>>,
}

/// Assembles `A = [[Ā, Ḡ], [0, I_p]]`, `D = [0; I_p]` and `H = [H̄, 0]`.
pub fn extend_system(sys: &OriginalSystem) -> ExtendedSystem {
    let (n, p) = (sys.n, sys.p);
    let a = match (&sys.a_bar, &sys.g_bar) {
        (Timed::Constant(a), Timed::Constant(g)) => Timed::Constant(extended_transition(a, g, p)),
        _ => {
            let len = sys.a_bar.len().max(sys.g_bar.len());
            Timed::Sequence(
                (0..len)
                    .map(|k| extended_transition(sys.a_bar.at(k), sys.g_bar.at(k), p))
                    .collect(),
            )
        }
    };
    let mut d = Matrix::zeros(n + p, p);
    d.view_mut((n, 0), (p, p)).fill_with_identity();
    let h = sys
        .h_bar
        .iter()
        .map(|series| {
            series.map(|hb| {
                let mut h = Matrix::zeros(hb.nrows(), n + p);
                h.view_mut((0, 0), (hb.nrows(), n)).copy_from(hb);
                h
            })
        })
        .collect();
    ExtendedSystem {
        original: sys.clone(),
        a,
        d,
        h,
    }
}

fn extended_transition(a_bar: &Matrix, g_bar: &Matrix, p: usize) -> Matrix {
    let n = a_bar.nrows();
    let mut a = Matrix::zeros(n + p, n + p);
    a.view_mut((0, 0), (n, n)).copy_from(a_bar);
    a.view_mut((0, n), (n, p)).copy_from(g_bar);
    a.view_mut((n, n), (p, p)).fill_with_identity();
    a
}

impl ExtendedSystem {
    pub fn original(&self) -> &OriginalSystem {
        &self.original
    }

    /// `n + p`.
    pub fn dim(&self) -> usize {
        self.d.nrows()
    }

    pub fn sensor_count(&self) -> usize {
        self.h.len()
    }

    pub fn a(&self, k: usize) -> &Matrix {
        self.a.at(k)
    }

    pub fn d(&self) -> &Matrix {
        &self.d
    }

    pub fn h(&self, k: usize, i: usize) -> &Matrix {
        self.h[i].at(k)
    }

    /// Extended state `(x; F_true(x, k))`.
    pub fn true_extended_state(&self, x: &Vector, k: usize) -> Vector {
        let f = self.original.truth.eval(x, k);
        stack(x, &f)
    }
}

pub(crate) fn stack(x: &Vector, f: &Vector) -> Vector {
    Vector::from_iterator(x.len() + f.len(), x.iter().chain(f.iter()).copied())
}

/// Upper bounds `Q_k ≥ E{ω_k ω_kᵀ}`, `R_{k,i} ≥ E{v v ᵀ}` and
/// `q_k(j) ≥ E{u_k(j)²}`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseBounds {
    process: Timed<Matrix>,
    measurement: Vec<Timed<Matrix>>,
    increment: Timed<Vector>,
}

impl NoiseBounds {
    /// Validates shapes against `sys` along with `Q ⪰ 0`, `R ≻ 0`, `q > 0`.
    pub fn new(
        sys: &ExtendedSystem,
        process: Timed<Matrix>,
        measurement: Vec<Timed<Matrix>>,
        increment: Timed<Vector>,
    ) -> Result<Self> {
        let dim = sys.dim();
        let p = sys.original.p;
        for q in process.iter() {
            if q.shape() != (dim, dim) {
                return Err(dim_err("process noise bound Q", (dim, dim), q.shape()));
            }
            linalg::ensure_psd(q, "process noise bound Q", 1e-12)?;
        }
        if measurement.len() != sys.sensor_count() {
            return Err(dim_err(
                "measurement noise bounds",
                (sys.sensor_count(), 1),
                (measurement.len(), 1),
            ));
        }
        for (i, series) in measurement.iter().enumerate() {
            let m = sys.original.measurement_dim(i);
            for r in series.iter() {
                if r.shape() != (m, m) {
                    return Err(dim_err(format!("R of sensor {i}"), (m, m), r.shape()));
                }
                if !linalg::is_symmetric(r, 1e-10) {
                    return Err(Error::NotSymmetric {
                        what: format!("R of sensor {i}"),
                    });
                }
                linalg::ensure_pd(r, &format!("R of sensor {i}"))?;
            }
        }
        for q in increment.iter() {
            if q.len() != p {
                return Err(dim_err("increment bound q", (p, 1), (q.len(), 1)));
            }
            if let Some(&bad) = q.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
                return Err(Error::NonPositive {
                    what: "increment bound q".into(),
                    value: bad,
                });
            }
        }
        Ok(Self {
            process,
            measurement,
            increment,
        })
    }

    pub fn process(&self, k: usize) -> &Matrix {
        self.process.at(k)
    }

    pub fn measurement(&self, k: usize, i: usize) -> &Matrix {
        self.measurement[i].at(k)
    }

    pub fn increment(&self, k: usize) -> &Vector {
        self.increment.at(k)
    }

    pub fn process_series(&self) -> &Timed<Matrix> {
        &self.process
    }

    pub fn measurement_series(&self) -> &[Timed<Matrix>] {
        &self.measurement
    }

    pub fn increment_series(&self) -> &Timed<Vector> {
        &self.increment
    }

    pub fn time_slots(&self) -> usize {
        self.measurement
            .iter()
            .map(Timed::len)
            .chain([self.process.len(), self.increment.len()])
            .max()
            .unwrap_or(1)
    }
}

/// Multivariate Gaussian sampled through a PSD square root of its covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    mean: Vector,
    covariance: Matrix,
    sqrt: Matrix,
}

impl Gaussian {
    pub fn new(mean: Vector, covariance: Matrix, what: &str) -> Result<Self> {
        let d = mean.len();
        if covariance.shape() != (d, d) {
            return Err(dim_err(what, (d, d), covariance.shape()));
        }
        linalg::ensure_psd(&covariance, what, 1e-12)?;
        let sqrt = linalg::psd_sqrt(&covariance);
        Ok(Self {
            mean,
            covariance,
            sqrt,
        })
    }

    pub fn zero_mean(covariance: Matrix, what: &str) -> Result<Self> {
        Self::new(Vector::zeros(covariance.nrows()), covariance, what)
    }

    pub fn mean(&self) -> &Vector {
        &self.mean
    }

    pub fn covariance(&self) -> &Matrix {
        &self.covariance
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vector {
        let z = Vector::from_fn(self.mean.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.mean + &self.sqrt * z
    }
}

/// The actual distributions used by the simulator: `ω̄_k`, `v_{k,i}` and the
/// initial state `x_0`.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthNoise {
    pub process: Gaussian,
    pub measurement: Vec<Gaussian>,
    pub initial: Gaussian,
}

impl TruthNoise {
    /// Checks shapes and that the true covariances sit below the declared
    /// bounds in the Loewner order (`ω_k = (ω̄_k; 0)` only touches the upper
    /// left `n × n` block of `Q`).
    pub fn validate(&self, sys: &ExtendedSystem, bounds: &NoiseBounds) -> Result<()> {
        let n = sys.original.n;
        if self.process.covariance.shape() != (n, n) {
            return Err(dim_err("true process covariance", (n, n), self.process.covariance.shape()));
        }
        if self.initial.mean.len() != n {
            return Err(dim_err("initial state mean", (n, 1), (self.initial.mean.len(), 1)));
        }
        if self.measurement.len() != sys.sensor_count() {
            return Err(dim_err(
                "true measurement covariances",
                (sys.sensor_count(), 1),
                (self.measurement.len(), 1),
            ));
        }
        for q in bounds.process.iter() {
            let mut true_ext = Matrix::zeros(sys.dim(), sys.dim());
            true_ext.view_mut((0, 0), (n, n)).copy_from(&self.process.covariance);
            if !linalg::loewner_le(&true_ext, q, 1e-9) {
                return Err(Error::BoundViolated {
                    what: "process noise covariance".into(),
                });
            }
        }
        for (i, (g, r)) in self.measurement.iter().zip(&bounds.measurement).enumerate() {
            let m = sys.original.measurement_dim(i);
            if g.covariance.shape() != (m, m) {
                return Err(dim_err(
                    format!("true measurement covariance of sensor {i}"),
                    (m, m),
                    g.covariance.shape(),
                ));
            }
            for rk in r.iter() {
                if !linalg::loewner_le(&g.covariance, rk, 1e-9) {
                    return Err(Error::BoundViolated {
                        what: format!("measurement noise covariance of sensor {i}"),
                    });
                }
            }
        }
        Ok(())
    }
}

/// `x_{k+1} = Ā_k x + Ḡ_k F_true(x, k) + ω̄_k`.
pub fn step_truth<R: Rng + ?Sized>(
    x: &Vector,
    k: usize,
    rng: &mut R,
    sys: &OriginalSystem,
    noise: &TruthNoise,
) -> Vector {
    sys.a_bar(k) * x + sys.g_bar(k) * sys.truth.eval(x, k) + noise.process.sample(rng)
}

/// `y_{k,i} = H̄_{k,i} x + v_{k,i}`.
pub fn measure<R: Rng + ?Sized>(
    x: &Vector,
    k: usize,
    i: usize,
    rng: &mut R,
    sys: &OriginalSystem,
    noise: &TruthNoise,
) -> Vector {
    sys.h_bar(k, i) * x + noise.measurement[i].sample(rng)
}

/// `sat(f, b) = max(min(f, b), −b)`.
pub fn saturate(f: f64, b: f64) -> Result<f64> {
    if !(b > 0.0) {
        return Err(Error::NonPositive {
            what: "saturation bound".into(),
            value: b,
        });
    }
    Ok(f.clamp(-b, b))
}

/// Saturated dynamics-increment estimate `û_{k−1}` used by the prediction at
/// step `k ≥ 1`, computed from the previous estimate `(x̂_{k−1}; F̂_{k−1})`:
///
/// ```text
/// raw  = F̄(Ā_{k−1} x̂ + Ḡ_{k−1} F̂, k) − F̄(x̂, k−1)
/// û(j) = sat(raw(j), √q_{k−1}(j))
/// ```
pub fn estimate_increment(
    x_hat: &Vector,
    f_hat: &Vector,
    k: usize,
    sys: &OriginalSystem,
    bounds: &NoiseBounds,
) -> Result<Vector> {
    if k == 0 {
        return Err(Error::Scenario("increment estimate needs k >= 1".into()));
    }
    let prev = k - 1;
    let predicted = sys.a_bar(prev) * x_hat + sys.g_bar(prev) * f_hat;
    let raw = sys.nominal.eval(&predicted, k) - sys.nominal.eval(x_hat, prev);
    let q = bounds.increment(prev);
    let mut out = Vector::zeros(raw.len());
    for j in 0..raw.len() {
        out[j] = saturate(raw[j], q[j].sqrt())?;
    }
    Ok(out)
}

/// Ground truth for one run: extended states `X_0..=X_H` and measurements
/// `y_{k,i}` for `k = 0..=H` (the filter consumes `k ≥ 1`).
#[derive(Debug, Clone, PartialEq)]
pub struct TruthTrajectory {
    pub states: Vec<Vector>,
    pub measurements: Vec<Vec<Vector>>,
}

/// Simulates `horizon` steps. Draw order per run: `x_0`, then for each `k`
/// all sensor noises followed by the process noise.
pub fn simulate_truth<R: Rng + ?Sized>(
    sys: &ExtendedSystem,
    noise: &TruthNoise,
    horizon: usize,
    rng: &mut R,
) -> TruthTrajectory {
    let orig = &sys.original;
    let mut x = noise.initial.sample(rng);
    let mut states = Vec::with_capacity(horizon + 1);
    let mut measurements = Vec::with_capacity(horizon + 1);
    for k in 0..=horizon {
        states.push(sys.true_extended_state(&x, k));
        measurements.push(
            (0..orig.sensor_count())
                .map(|i| measure(&x, k, i, rng, orig, noise))
                .collect(),
        );
        if k < horizon {
            x = step_truth(&x, k, rng, orig, noise);
        }
    }
    TruthTrajectory {
        states,
        measurements,
    }
}
