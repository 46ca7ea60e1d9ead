//! JSON scenario files and the validated [`Scenario`] they describe.
//!
//! Matrices are nested row-major arrays. Any system matrix or noise bound may
//! instead be given as `{"sequence": [M_0, M_1, ...]}` for time-varying
//! values; the last entry is held beyond the end.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::filter::{FilterConfig, SensorEstimate};
use crate::graph::{SwitchingSignal, TopologySchedule, WeightedDigraph};
use crate::linalg::{self, Matrix, Vector};
use crate::model::{extend_system, Dynamics, ExtendedSystem, Gaussian, NoiseBounds, OriginalSystem, Timed, TruthNoise};
use crate::observability::ObservabilityConfig;

pub type Rows = Vec<Vec<f64>>;

/// Name of the shipped four-sensor switching-topology scenario.
pub const SIM_IV: &str = "sim-iv";

const SIM_IV_JSON: &str = include_str!("../presets/sim-iv.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixSeries {
    Constant(Rows),
    Sequence { sequence: Vec<Rows> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum VectorSeries {
    Constant(Vec<f64>),
    Sequence { sequence: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemBlock {
    pub n: usize,
    pub p: usize,
    pub sensors: usize,
    pub a_bar: MatrixSeries,
    pub g_bar: MatrixSeries,
    pub h_bar: Vec<MatrixSeries>,
    pub nominal_dynamics: Dynamics,
    pub true_dynamics: Dynamics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseBlock {
    /// `Q`, either `n × n` (padded with zeros to the extended dimension) or
    /// `(n+p) × (n+p)`.
    pub process_bound: MatrixSeries,
    pub measurement_bounds: Vec<MatrixSeries>,
    pub increment_bounds: VectorSeries,
    pub process_covariance: Rows,
    pub measurement_covariances: Vec<Rows>,
    pub initial_mean: Vec<f64>,
    pub initial_covariance: Rows,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyBlock {
    pub adjacency: Vec<Rows>,
    pub switching: SwitchingSignal,
    pub interval_length: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterBlock {
    pub theta: f64,
    pub initial_covariance: Rows,
    pub initial_estimate: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentBlock {
    pub runs: usize,
    pub horizon: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservabilityBlock {
    pub window: usize,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub system: SystemBlock,
    pub noise: NoiseBlock,
    pub topology: TopologyBlock,
    pub filter: FilterBlock,
    pub experiment: ExperimentBlock,
    pub observability: ObservabilityBlock,
}

/// A fully validated scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: Option<String>,
    pub system: ExtendedSystem,
    pub bounds: NoiseBounds,
    pub truth_noise: TruthNoise,
    pub topology: TopologySchedule,
    pub filter: FilterConfig,
    pub initial_estimate: SensorEstimate,
    pub experiment: ExperimentBlock,
    pub observability: ObservabilityConfig,
}

impl ScenarioFile {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| {
            Error::Scenario(format!("parse error at line {}, column {}: {e}", e.line(), e.column()))
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario files always serialize")
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            SIM_IV => Some(Self::from_json(SIM_IV_JSON).expect("shipped preset parses")),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<Scenario> {
        Scenario::from_file(self)
    }
}

pub fn preset_names() -> &'static [&'static str] {
    &[SIM_IV]
}

/// Reads, parses and validates a scenario file.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<(ScenarioFile, Scenario)> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Scenario(format!("cannot read {}: {e}", path.display())))?;
    let file = ScenarioFile::from_json(&text)?;
    let scenario = file.validate()?;
    Ok((file, scenario))
}

fn matrix(rows: &Rows, shape: (usize, usize), what: &str) -> Result<Matrix> {
    if rows.len() != shape.0 || rows.iter().any(|r| r.len() != shape.1) {
        let found_cols = rows.iter().map(Vec::len).find(|&c| c != shape.1).unwrap_or(shape.1);
        return Err(dim_err(what, shape, (rows.len(), found_cols)));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Scenario(format!("{what} contains a non-finite entry")));
    }
    linalg::from_rows(rows, shape.1, what)
}

fn series(s: &MatrixSeries, shape: (usize, usize), what: &str) -> Result<Timed<Matrix>> {
    match s {
        MatrixSeries::Constant(rows) => Ok(Timed::Constant(matrix(rows, shape, what)?)),
        MatrixSeries::Sequence { sequence } => {
            if sequence.is_empty() {
                return Err(Error::Scenario(format!("{what}: empty sequence")));
            }
            sequence
                .iter()
                .enumerate()
                .map(|(k, rows)| matrix(rows, shape, &format!("{what}[{k}]")))
                .collect::<Result<_>>()
                .map(Timed::Sequence)
        }
    }
}

fn rows_of(s: &MatrixSeries) -> usize {
    match s {
        MatrixSeries::Constant(rows) => rows.len(),
        MatrixSeries::Sequence { sequence } => sequence.first().map_or(0, Vec::len),
    }
}

fn vector(v: &[f64], len: usize, what: &str) -> Result<Vector> {
    if v.len() != len {
        return Err(dim_err(what, (len, 1), (v.len(), 1)));
    }
    Ok(Vector::from_column_slice(v))
}

impl Scenario {
    pub fn from_file(file: &ScenarioFile) -> Result<Self> {
        let sys = &file.system;
        let (n, p) = (sys.n, sys.p);
        if n == 0 {
            return Err(Error::Scenario("system.n must be positive".into()));
        }
        if sys.h_bar.len() != sys.sensors {
            return Err(dim_err("system.h_bar", (sys.sensors, 1), (sys.h_bar.len(), 1)));
        }
        let a_bar = series(&sys.a_bar, (n, n), "system.a_bar")?;
        let g_bar = series(&sys.g_bar, (n, p), "system.g_bar")?;
        let h_bar = sys
            .h_bar
            .iter()
            .enumerate()
            .map(|(i, h)| series(h, (rows_of(h), n), &format!("system.h_bar[{i}]")))
            .collect::<Result<Vec<_>>>()?;
        for (what, f) in [
            ("system.nominal_dynamics", &sys.nominal_dynamics),
            ("system.true_dynamics", &sys.true_dynamics),
        ] {
            if f.dim() != p {
                return Err(dim_err(what, (p, 1), (f.dim(), 1)));
            }
        }
        let original = OriginalSystem::new(
            a_bar,
            g_bar,
            h_bar,
            sys.nominal_dynamics.clone(),
            sys.true_dynamics.clone(),
        )?;
        let system = extend_system(&original);
        let dim = n + p;

        let noise = &file.noise;
        let process = match rows_of(&noise.process_bound) {
            r if r == n && p > 0 => series(&noise.process_bound, (n, n), "noise.process_bound")?.map(|q| {
                let mut ext = Matrix::zeros(dim, dim);
                ext.view_mut((0, 0), (n, n)).copy_from(q);
                ext
            }),
            _ => series(&noise.process_bound, (dim, dim), "noise.process_bound")?,
        };
        if noise.measurement_bounds.len() != sys.sensors {
            return Err(dim_err(
                "noise.measurement_bounds",
                (sys.sensors, 1),
                (noise.measurement_bounds.len(), 1),
            ));
        }
        let measurement = noise
            .measurement_bounds
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let m = original.measurement_dim(i);
                series(r, (m, m), &format!("noise.measurement_bounds[{i}]"))
            })
            .collect::<Result<Vec<_>>>()?;
        let increment = match &noise.increment_bounds {
            VectorSeries::Constant(v) => Timed::Constant(vector(v, p, "noise.increment_bounds")?),
            VectorSeries::Sequence { sequence } if !sequence.is_empty() => Timed::Sequence(
                sequence
                    .iter()
                    .map(|v| vector(v, p, "noise.increment_bounds"))
                    .collect::<Result<_>>()?,
            ),
            VectorSeries::Sequence { .. } => {
                return Err(Error::Scenario("noise.increment_bounds: empty sequence".into()))
            }
        };
        let bounds = NoiseBounds::new(&system, process, measurement, increment)?;

        if noise.measurement_covariances.len() != sys.sensors {
            return Err(dim_err(
                "noise.measurement_covariances",
                (sys.sensors, 1),
                (noise.measurement_covariances.len(), 1),
            ));
        }
        let truth_noise = TruthNoise {
            process: Gaussian::zero_mean(
                matrix(&noise.process_covariance, (n, n), "noise.process_covariance")?,
                "noise.process_covariance",
            )?,
            measurement: noise
                .measurement_covariances
                .iter()
                .enumerate()
                .map(|(i, r)| {
                    let m = original.measurement_dim(i);
                    let what = format!("noise.measurement_covariances[{i}]");
                    Gaussian::zero_mean(matrix(r, (m, m), &what)?, &what)
                })
                .collect::<Result<_>>()?,
            initial: Gaussian::new(
                vector(&noise.initial_mean, n, "noise.initial_mean")?,
                matrix(&noise.initial_covariance, (n, n), "noise.initial_covariance")?,
                "noise.initial_covariance",
            )?,
        };
        truth_noise.validate(&system, &bounds)?;

        let topo = &file.topology;
        let graphs = topo
            .adjacency
            .iter()
            .enumerate()
            .map(|(g, rows)| {
                let m = matrix(rows, (sys.sensors, sys.sensors), &format!("topology.adjacency[{g}]"))?;
                WeightedDigraph::new(m).map_err(|e| Error::Scenario(format!("topology.adjacency[{g}]: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let topology = TopologySchedule::new(graphs, topo.switching.clone(), topo.interval_length)?;

        let filter = FilterConfig::new(file.filter.theta)?;
        let initial_estimate = SensorEstimate::new(
            vector(&file.filter.initial_estimate, dim, "filter.initial_estimate")?,
            matrix(&file.filter.initial_covariance, (dim, dim), "filter.initial_covariance")?,
        )?;

        if file.experiment.runs == 0 {
            return Err(Error::Scenario("experiment.runs must be at least 1".into()));
        }
        let observability =
            ObservabilityConfig::new(file.observability.window, file.observability.threshold)?;

        Ok(Self {
            name: file.name.clone(),
            system,
            bounds,
            truth_noise,
            topology,
            filter,
            initial_estimate,
            experiment: file.experiment,
            observability,
        })
    }

    pub fn sensor_count(&self) -> usize {
        self.system.sensor_count()
    }

    /// Number of distinct time slots across all time-varying inputs.
    pub fn time_slots(&self) -> usize {
        self.system.original().time_slots().max(self.bounds.time_slots())
    }

    /// The shipped scenario, validated.
    pub fn sim_iv() -> Self {
        ScenarioFile::preset(SIM_IV)
            .expect("sim-iv preset exists")
            .validate()
            .expect("sim-iv preset validates")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sim_iv_preset_loads() {
        let s = Scenario::sim_iv();
        assert_eq!(s.system.original().state_dim(), 4);
        assert_eq!(s.system.original().dynamics_dim(), 2);
        assert_eq!(s.sensor_count(), 4);
        assert_eq!(s.filter.theta(), 0.1);
        assert_eq!(s.initial_estimate.covariance(), &(Matrix::identity(6, 6) * 100.0));
        assert_eq!(s.initial_estimate.state(), &Vector::zeros(6));
        assert_eq!(
            s.bounds.process(0),
            &Matrix::from_diagonal(&Vector::from_column_slice(&[4.0, 4.0, 1.0, 1.0, 0.0, 0.0]))
        );
        assert_eq!(s.bounds.measurement(0, 2), &Matrix::from_element(1, 1, 90.0));
        assert_eq!(s.bounds.increment(0), &Vector::from_element(2, 4.0));
        assert_eq!(s.experiment, ExperimentBlock { runs: 500, horizon: 200, seed: 2019 });
        assert_eq!(s.topology.sigma(0), 0);
        assert_eq!(s.topology.sigma(6), 1);
        assert_eq!(s.topology.sigma(15), 2);
        assert_eq!(s.topology.sigma(16), 0);
    }

    #[test]
    fn theta_override() {
        let mut file = ScenarioFile::preset(SIM_IV).unwrap();
        file.filter.theta = 0.5;
        assert_eq!(file.validate().unwrap().filter.theta(), 0.5);
    }

    #[test]
    fn wrong_shape_names_block() {
        let mut file = ScenarioFile::preset(SIM_IV).unwrap();
        file.system.a_bar = MatrixSeries::Constant(vec![vec![1.0, 0.0, 0.0, 0.0]; 3]);
        match file.validate() {
            Err(Error::DimensionMismatch { what, expected, found }) => {
                assert_eq!(what, "system.a_bar");
                assert_eq!(expected, (4, 4));
                assert_eq!(found, (3, 4));
            }
            other => panic!("expected a dimension error, got {other:?}"),
        }
    }

    #[test]
    fn parse_errors_carry_location() {
        let err = ScenarioFile::from_json("{\n  \"system\": [1,\n").unwrap_err();
        assert!(err.to_string().contains("line"), "{err}");
    }

    #[test]
    fn invalid_adjacency_is_reported() {
        let mut file = ScenarioFile::preset(SIM_IV).unwrap();
        file.topology.adjacency[1][0] = vec![0.5, 0.4, 0.0, 0.0];
        let err = file.validate().unwrap_err();
        assert!(err.to_string().contains("topology.adjacency[1]"), "{err}");
    }

    #[test]
    fn round_trip_preserves_validated_scenario() {
        let file = ScenarioFile::preset(SIM_IV).unwrap();
        let again = ScenarioFile::from_json(&file.to_json()).unwrap();
        assert_eq!(file, again);
        assert_eq!(file.validate().unwrap(), again.validate().unwrap());
    }
}
