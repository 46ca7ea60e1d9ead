//! Monte Carlo experiments over a [`Scenario`].
//!
//! Run `r` draws all of its randomness from a ChaCha8 generator seeded with
//! the master seed and switched to stream `r`, so results do not depend on
//! how runs are scheduled across threads. Aggregation always sums runs in
//! index order.

use std::io;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::filter::{esdkf_step, gain, predict, update, SensorEstimate};
use crate::linalg::{self, Matrix, Vector};
use crate::model::{estimate_increment, simulate_truth, TruthTrajectory};
use crate::scenario::Scenario;

/// Slope tolerance (trace units per step) for the boundedness verdict.
pub const BOUNDEDNESS_SLOPE_TOLERANCE: f64 = 1e-2;

/// Per-run random stream.
pub fn run_rng(master_seed: u64, run: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(run as u64);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Serial,
    #[default]
    Parallel,
}

#[derive(Debug, Clone, Copy)]
pub struct ExperimentSpec<'a> {
    pub scenario: &'a Scenario,
    pub runs: usize,
    pub horizon: usize,
    pub master_seed: u64,
    pub execution: Execution,
}

impl<'a> ExperimentSpec<'a> {
    /// Uses the scenario's own experiment block.
    pub fn from_scenario(scenario: &'a Scenario) -> Self {
        Self {
            scenario,
            runs: scenario.experiment.runs,
            horizon: scenario.experiment.horizon,
            master_seed: scenario.experiment.seed,
            execution: Execution::default(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::Experiment("run count must be at least 1".into()));
        }
        Ok(())
    }
}

/// Averages over runs, indexed `[k − 1][i]` for `k = 1..=horizon`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub runs: usize,
    pub sensors: usize,
    pub mse: Vec<Vec<f64>>,
    pub trace_p: Vec<Vec<f64>>,
    pub mse_avg: Vec<f64>,
    pub trace_avg: Vec<f64>,
}

impl RunMetrics {
    pub fn horizon(&self) -> usize {
        self.mse.len()
    }

    fn from_sums(runs: usize, sensors: usize, sq_err: Vec<Vec<f64>>, traces: Vec<Vec<f64>>) -> Self {
        let scale = 1.0 / runs as f64;
        let mse: Vec<Vec<f64>> = sq_err
            .into_iter()
            .map(|row| row.into_iter().map(|v| v * scale).collect())
            .collect();
        let trace_p: Vec<Vec<f64>> = traces
            .into_iter()
            .map(|row| row.into_iter().map(|v| v * scale).collect())
            .collect();
        let mean = |row: &Vec<f64>| row.iter().sum::<f64>() / sensors as f64;
        Self {
            runs,
            sensors,
            mse_avg: mse.iter().map(mean).collect(),
            trace_avg: trace_p.iter().map(mean).collect(),
            mse,
            trace_p,
        }
    }

    /// CSV with header `k,sensor,mse,trace_p,mse_avg,trace_avg`; `k` and
    /// `sensor` are 1-based.
    pub fn write_csv<W: io::Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["k", "sensor", "mse", "trace_p", "mse_avg", "trace_avg"])?;
        for (step, (mse_row, trace_row)) in self.mse.iter().zip(&self.trace_p).enumerate() {
            for i in 0..self.sensors {
                w.write_record([
                    (step + 1).to_string(),
                    (i + 1).to_string(),
                    mse_row[i].to_string(),
                    trace_row[i].to_string(),
                    self.mse_avg[step].to_string(),
                    self.trace_avg[step].to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Everything one run produced: truth and every sensor's fused estimate for
/// `k = 0..=horizon` (index 0 holds the initial estimates).
#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub truth: TruthTrajectory,
    pub estimates: Vec<Vec<SensorEstimate>>,
}

impl RunTrace {
    /// CSV with `k`, `x_true_1..`, then per sensor `xhat_<i>_1..` and
    /// `err_<i>_1..` (error = truth − estimate). Rows for `k = 1..=horizon`.
    pub fn write_csv<W: io::Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let dim = self.truth.states[0].len();
        let sensors = self.estimates[0].len();
        let mut header = vec!["k".to_string()];
        header.extend((1..=dim).map(|c| format!("x_true_{c}")));
        for i in 1..=sensors {
            header.extend((1..=dim).map(|c| format!("xhat_{i}_{c}")));
            header.extend((1..=dim).map(|c| format!("err_{i}_{c}")));
        }
        w.write_record(&header)?;
        for k in 1..self.estimates.len() {
            let truth = &self.truth.states[k];
            let mut row = vec![k.to_string()];
            row.extend(truth.iter().map(f64::to_string));
            for est in &self.estimates[k] {
                row.extend(est.state().iter().map(f64::to_string));
                row.extend((truth - est.state()).iter().map(f64::to_string));
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn diverged(run: usize, step: usize) -> impl Fn(Error) -> Error {
    move |e| Error::Divergence {
        run,
        step,
        reason: e.to_string(),
    }
}

/// Simulates and filters one run with its own random stream.
pub fn simulate_run(scenario: &Scenario, horizon: usize, master_seed: u64, run: usize) -> Result<RunTrace> {
    let mut rng = run_rng(master_seed, run);
    let truth = simulate_truth(&scenario.system, &scenario.truth_noise, horizon, &mut rng);
    let mut estimates = Vec::with_capacity(horizon + 1);
    estimates.push(vec![scenario.initial_estimate.clone(); scenario.sensor_count()]);
    for k in 1..=horizon {
        let next = esdkf_step(
            &estimates[k - 1],
            k,
            &scenario.system,
            &scenario.bounds,
            &scenario.filter,
            scenario.topology.graph_at(k),
            &truth.measurements[k],
        )
        .map_err(diverged(run, k))?;
        if let Some(i) = next.iter().position(|e| !e.is_finite()) {
            return Err(Error::Divergence {
                run,
                step: k,
                reason: format!("sensor {} produced a non-finite estimate", i + 1),
            });
        }
        estimates.push(next);
    }
    Ok(RunTrace { truth, estimates })
}

/// Squared errors and traces of one run, `[k − 1][i]`.
struct RunRecord {
    sq_err: Vec<Vec<f64>>,
    trace: Vec<Vec<f64>>,
}

fn record(trace: &RunTrace) -> RunRecord {
    let steps = trace.estimates.len() - 1;
    let mut sq_err = Vec::with_capacity(steps);
    let mut traces = Vec::with_capacity(steps);
    for k in 1..=steps {
        let truth = &trace.truth.states[k];
        sq_err.push(
            trace.estimates[k]
                .iter()
                .map(|e| (truth - e.state()).norm_squared())
                .collect(),
        );
        traces.push(trace.estimates[k].iter().map(|e| e.covariance().trace()).collect());
    }
    RunRecord { sq_err, trace: traces }
}

fn run_all<F>(spec: &ExperimentSpec<'_>, per_run: F) -> Result<Vec<RunRecord>>
where
    F: Fn(usize) -> Result<RunRecord> + Sync + Send,
{
    spec.validate()?;
    match spec.execution {
        Execution::Serial => (0..spec.runs).map(per_run).collect(),
        // collect keeps run order
        Execution::Parallel => (0..spec.runs).into_par_iter().map(per_run).collect(),
    }
}

fn aggregate(records: Vec<RunRecord>, horizon: usize, sensors: usize) -> RunMetrics {
    let runs = records.len();
    let mut sq_err = vec![vec![0.0; sensors]; horizon];
    let mut traces = vec![vec![0.0; sensors]; horizon];
    for rec in &records {
        for k in 0..horizon {
            for i in 0..sensors {
                sq_err[k][i] += rec.sq_err[k][i];
                traces[k][i] += rec.trace[k][i];
            }
        }
    }
    RunMetrics::from_sums(runs, sensors, sq_err, traces)
}

/// Runs the distributed filter `spec.runs` times and averages
/// `(X − X̂)ᵀ(X − X̂)` and `tr(P)` per step and sensor.
pub fn run_monte_carlo(spec: &ExperimentSpec<'_>) -> Result<RunMetrics> {
    let records = run_all(spec, |run| {
        simulate_run(spec.scenario, spec.horizon, spec.master_seed, run).map(|t| record(&t))
    })?;
    Ok(aggregate(records, spec.horizon, spec.scenario.sensor_count()))
}

/// A single filter on the stacked measurements of every sensor, sharing the
/// prediction model (including `θ` inflation and `û`) with the distributed
/// filter. Reported as a one-sensor [`RunMetrics`]. Each run reuses the same
/// random stream as the matching distributed run, so both see identical
/// truth and measurements.
pub fn centralized_baseline(spec: &ExperimentSpec<'_>) -> Result<RunMetrics> {
    let scenario = spec.scenario;
    let sys = &scenario.system;
    let records = run_all(spec, |run| {
        let mut rng = run_rng(spec.master_seed, run);
        let truth = simulate_truth(sys, &scenario.truth_noise, spec.horizon, &mut rng);
        let n = sys.original().state_dim();
        let p = sys.original().dynamics_dim();
        let mut est = scenario.initial_estimate.clone();
        let mut sq_err = Vec::with_capacity(spec.horizon);
        let mut traces = Vec::with_capacity(spec.horizon);
        for k in 1..=spec.horizon {
            let step = |est: &SensorEstimate| -> Result<SensorEstimate> {
                let x = est.state();
                let u_hat = estimate_increment(
                    &x.rows(0, n).into_owned(),
                    &x.rows(n, p).into_owned(),
                    k,
                    sys.original(),
                    &scenario.bounds,
                )?;
                let pred = predict(est, k, sys, &scenario.bounds, &scenario.filter, &u_hat)?;
                let (h, r, y) = stacked(scenario, k, &truth.measurements[k]);
                let kg = gain(pred.covariance(), &h, &r)?;
                update(&pred, &y, &h, &r, &kg)
            };
            est = step(&est).map_err(diverged(run, k))?;
            if !est.is_finite() {
                return Err(Error::Divergence {
                    run,
                    step: k,
                    reason: "centralized estimate is non-finite".into(),
                });
            }
            sq_err.push(vec![(&truth.states[k] - est.state()).norm_squared()]);
            traces.push(vec![est.covariance().trace()]);
        }
        Ok(RunRecord { sq_err, trace: traces })
    })?;
    Ok(aggregate(records, spec.horizon, 1))
}

fn stacked(scenario: &Scenario, k: usize, measurements: &[Vector]) -> (Matrix, Matrix, Vector) {
    let sys = &scenario.system;
    let dim = sys.dim();
    let m: usize = (0..sys.sensor_count()).map(|i| sys.h(k, i).nrows()).sum();
    let mut h = Matrix::zeros(m, dim);
    let mut row = 0;
    for i in 0..sys.sensor_count() {
        let hi = sys.h(k, i);
        h.view_mut((row, 0), hi.shape()).copy_from(hi);
        row += hi.nrows();
    }
    let rs: Vec<&Matrix> = (0..sys.sensor_count()).map(|i| scenario.bounds.measurement(k, i)).collect();
    let r = linalg::block_diag(&rs);
    let y = Vector::from_iterator(m, measurements.iter().flat_map(|v| v.iter().copied()));
    (h, r, y)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyReport {
    /// `[k − 1][i]` is `true` when `mse(k, i) > tr(P_{k,i})`.
    pub violations: Vec<Vec<bool>>,
    pub violation_count: usize,
    pub violation_fraction: f64,
}

pub fn consistency_report(metrics: &RunMetrics) -> ConsistencyReport {
    let violations: Vec<Vec<bool>> = metrics
        .mse
        .iter()
        .zip(&metrics.trace_p)
        .map(|(m, t)| m.iter().zip(t).map(|(m, t)| m > t).collect())
        .collect();
    let violation_count = violations.iter().flatten().filter(|&&v| v).count();
    let total = metrics.horizon() * metrics.sensors;
    ConsistencyReport {
        violations,
        violation_count,
        violation_fraction: if total == 0 {
            0.0
        } else {
            violation_count as f64 / total as f64
        },
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundednessReport {
    pub window: usize,
    /// Max of `trace_avg` over the last `window` steps.
    pub final_window_max: f64,
    /// Max of `trace_avg` over the whole horizon.
    pub global_max: f64,
    /// Least-squares slope of `trace_avg` over the second half of the horizon.
    pub second_half_slope: f64,
    /// The same slope per sensor, for diagnostics.
    pub sensor_slopes: Vec<f64>,
    pub bounded: bool,
}

/// Least-squares slope of `values` against `start, start+1, …`.
pub fn least_squares_slope(values: &[f64]) -> f64 {
    let len = values.len() as f64;
    if values.len() < 2 {
        return 0.0;
    }
    let t_mean = (len - 1.0) / 2.0;
    let v_mean = values.iter().sum::<f64>() / len;
    let (num, den) = values.iter().enumerate().fold((0.0, 0.0), |(num, den), (t, v)| {
        let dt = t as f64 - t_mean;
        (num + dt * (v - v_mean), den + dt * dt)
    });
    num / den
}

/// Empirical check that covariance traces do not trend upward: the final
/// window never exceeds the global maximum and the second-half slope stays
/// within [`BOUNDEDNESS_SLOPE_TOLERANCE`].
pub fn boundedness_report(metrics: &RunMetrics, window: usize) -> Result<BoundednessReport> {
    let horizon = metrics.horizon();
    if window == 0 || horizon < 2 * window {
        return Err(Error::Experiment(format!(
            "boundedness window {window} needs a horizon of at least {}, have {horizon}",
            2 * window.max(1)
        )));
    }
    let max = |s: &[f64]| s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let final_window_max = max(&metrics.trace_avg[horizon - window..]);
    let global_max = max(&metrics.trace_avg);
    let half = horizon / 2;
    let second_half_slope = least_squares_slope(&metrics.trace_avg[half..]);
    let sensor_slopes = (0..metrics.sensors)
        .map(|i| {
            let series: Vec<f64> = metrics.trace_p[half..].iter().map(|row| row[i]).collect();
            least_squares_slope(&series)
        })
        .collect();
    Ok(BoundednessReport {
        window,
        final_window_max,
        global_max,
        second_half_slope,
        sensor_slopes,
        bounded: final_window_max <= global_max && second_half_slope <= BOUNDEDNESS_SLOPE_TOLERANCE,
    })
}

/// Largest per-step sample mean of `u_k(j)²` over `runs` simulated
/// trajectories, for comparison with the declared `q`.
pub fn empirical_increment_moment(scenario: &Scenario, runs: usize, horizon: usize, seed: u64) -> Vector {
    let n = scenario.system.original().state_dim();
    let p = scenario.system.original().dynamics_dim();
    let mut worst = Vector::zeros(p);
    if runs == 0 || horizon == 0 {
        return worst;
    }
    let mut sums = vec![Vector::zeros(p); horizon];
    for run in 0..runs {
        let mut rng = run_rng(seed, run);
        let traj = simulate_truth(&scenario.system, &scenario.truth_noise, horizon, &mut rng);
        for k in 0..horizon {
            let u = traj.states[k + 1].rows(n, p) - traj.states[k].rows(n, p);
            sums[k] += u.component_mul(&u);
        }
    }
    for s in sums {
        worst = worst.sup(&(s / runs as f64));
    }
    worst
}

/// Empirical covariance of a set of error samples compared against a
/// declared bound, with a sampling-noise allowance.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceCheck {
    pub empirical: Matrix,
    /// `λ_min(bound − empirical)`.
    pub margin: f64,
    /// Standard error of `vᵀ Σ̂ v` along the eigenvector of that eigenvalue.
    pub standard_error: f64,
    /// `margin ≥ −3 · standard_error`.
    pub consistent: bool,
}

/// Checks `E{e eᵀ} ≤ bound` from zero-mean-about-truth samples `e`.
pub fn covariance_check(errors: &[Vector], bound: &Matrix) -> CovarianceCheck {
    let dim = bound.nrows();
    let count = errors.len().max(1) as f64;
    let mut empirical = Matrix::zeros(dim, dim);
    for e in errors {
        empirical += e * e.transpose();
    }
    empirical /= count;
    let (margin, v) = linalg::min_eigenpair(&(bound - &empirical));
    let projections: Vec<f64> = errors.iter().map(|e| v.dot(e).powi(2)).collect();
    let mean = projections.iter().sum::<f64>() / count;
    let var = projections.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (count - 1.0).max(1.0);
    let standard_error = (var / count).sqrt();
    CovarianceCheck {
        consistent: margin >= -3.0 * standard_error,
        empirical,
        margin,
        standard_error,
    }
}

/// Samples `X_0 − X̂_0` and checks it against `P_0`.
pub fn initial_consistency(scenario: &Scenario, samples: usize, seed: u64) -> CovarianceCheck {
    let mut rng = run_rng(seed, 0);
    let errors: Vec<Vector> = (0..samples)
        .map(|_| {
            let x0 = scenario.truth_noise.initial.sample(&mut rng);
            scenario.system.true_extended_state(&x0, 0) - scenario.initial_estimate.state()
        })
        .collect();
    covariance_check(&errors, scenario.initial_estimate.covariance())
}
