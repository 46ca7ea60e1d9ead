//! Weighted communication digraphs and switching topology schedules.
//!
//! Node `i` receives from node `j` whenever `a[i][j] > 0` with `j != i`. The
//! adjacency of every topology used by the filter must be nonnegative, row
//! stochastic and have a strictly positive diagonal.
//!
//! Nodes are indexed from zero.

use std::collections::BTreeSet;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Absolute tolerance on `|Σ_j a_ij − 1|`.
pub const ROW_SUM_TOLERANCE: f64 = 1e-12;

/// A validated row-stochastic weighted digraph.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedDigraph {
    adjacency: Matrix,
}

/// Validates `matrix` as a weighted adjacency and wraps it.
///
/// The first violation found (scanning rows in order) is reported.
pub fn validate_adjacency(matrix: Matrix) -> Result<WeightedDigraph> {
    if !matrix.is_square() {
        return Err(Error::NotSquare {
            rows: matrix.nrows(),
            cols: matrix.ncols(),
        });
    }
    for (row, r) in matrix.row_iter().enumerate() {
        for (col, &value) in r.iter().enumerate() {
            if !value.is_finite() {
                return Err(Error::NonFiniteWeight { row, col });
            }
            if value < 0.0 {
                return Err(Error::NegativeWeight { row, col, value });
            }
        }
        if matrix[(row, row)] <= 0.0 {
            return Err(Error::ZeroDiagonal { row });
        }
        let sum: f64 = r.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
            return Err(Error::RowSum { row, sum });
        }
    }
    Ok(WeightedDigraph { adjacency: matrix })
}

/// Explicit repair for near-stochastic input: divides every row by its sum.
///
/// Rows summing to zero are left untouched and will still fail validation.
pub fn renormalize_rows(matrix: &Matrix) -> Matrix {
    let mut out = matrix.clone();
    for mut row in out.row_iter_mut() {
        let sum: f64 = row.iter().sum();
        if sum > 0.0 {
            row /= sum;
        }
    }
    out
}

impl WeightedDigraph {
    pub fn new(adjacency: Matrix) -> Result<Self> {
        validate_adjacency(adjacency)
    }

    /// Every node only listens to itself.
    pub fn identity(node_count: usize) -> Self {
        Self {
            adjacency: Matrix::identity(node_count, node_count),
        }
    }

    /// Uniform all-to-all weights.
    pub fn complete(node_count: usize) -> Self {
        let w = 1.0 / node_count as f64;
        Self {
            adjacency: Matrix::from_element(node_count, node_count, w),
        }
    }

    pub fn node_count(&self) -> usize {
        self.adjacency.nrows()
    }

    pub fn adjacency(&self) -> &Matrix {
        &self.adjacency
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.adjacency[(i, j)]
    }

    /// `𝒩_i`: every `j` with `a_ij > 0`, always including `i` itself, ascending.
    pub fn neighbors(&self, i: usize) -> Result<Vec<usize>> {
        let n = self.node_count();
        if i >= n {
            return Err(Error::NodeOutOfRange {
                index: i,
                node_count: n,
            });
        }
        Ok((0..n)
            .filter(|&j| j == i || self.adjacency[(i, j)] > 0.0)
            .collect())
    }

    /// Cross edges `(i, j)`, meaning `i` receives from `j`.
    pub fn edges(&self) -> BTreeSet<(usize, usize)> {
        edge_set(&self.adjacency)
    }

    pub fn is_strongly_connected(&self) -> bool {
        is_strongly_connected_matrix(&self.adjacency)
    }
}

/// Entrywise sum of several topologies. Not row stochastic; only used for
/// connectivity analysis.
#[derive(Debug, Clone, PartialEq)]
pub struct UnionGraph {
    adjacency: Matrix,
}

impl UnionGraph {
    pub fn node_count(&self) -> usize {
        self.adjacency.nrows()
    }

    pub fn adjacency(&self) -> &Matrix {
        &self.adjacency
    }

    pub fn edges(&self) -> BTreeSet<(usize, usize)> {
        edge_set(&self.adjacency)
    }

    pub fn is_strongly_connected(&self) -> bool {
        is_strongly_connected_matrix(&self.adjacency)
    }
}

pub fn union_graph<'a, I>(graphs: I) -> Result<UnionGraph>
where
    I: IntoIterator<Item = &'a WeightedDigraph>,
{
    let mut iter = graphs.into_iter();
    let first = iter
        .next()
        .ok_or_else(|| Error::Schedule("union of an empty graph list".into()))?;
    let mut adjacency = first.adjacency.clone();
    for g in iter {
        if g.node_count() != adjacency.nrows() {
            return Err(Error::NodeCountMismatch {
                expected: adjacency.nrows(),
                found: g.node_count(),
            });
        }
        adjacency += &g.adjacency;
    }
    Ok(UnionGraph { adjacency })
}

pub fn is_strongly_connected(g: &WeightedDigraph) -> bool {
    g.is_strongly_connected()
}

fn edge_set(adjacency: &Matrix) -> BTreeSet<(usize, usize)> {
    let n = adjacency.nrows();
    (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .filter(|&(i, j)| i != j && adjacency[(i, j)] > 0.0)
        .collect()
}

fn is_strongly_connected_matrix(adjacency: &Matrix) -> bool {
    let n = adjacency.nrows();
    if n <= 1 {
        return true;
    }
    let successors: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| j != i && adjacency[(i, j)] > 0.0).collect())
        .collect();
    strongly_connected_components(&successors).len() == 1
}

/// Tarjan's algorithm, iterative. Returns the components in reverse
/// topological order of the condensation.
pub fn strongly_connected_components(successors: &[Vec<usize>]) -> Vec<Vec<usize>> {
    const UNVISITED: usize = usize::MAX;
    let n = successors.len();
    let mut index = vec![UNVISITED; n];
    let mut lowlink = vec![0; n];
    let mut on_stack = vec![false; n];
    let mut stack = Vec::new();
    let mut components = Vec::new();
    let mut next_index = 0;

    for root in 0..n {
        if index[root] != UNVISITED {
            continue;
        }
        // (node, position in its successor list)
        let mut call_stack = vec![(root, 0usize)];
        index[root] = next_index;
        lowlink[root] = next_index;
        next_index += 1;
        stack.push(root);
        on_stack[root] = true;

        while let Some(&mut (v, ref mut pos)) = call_stack.last_mut() {
            if let Some(&w) = successors[v].get(*pos) {
                *pos += 1;
                if index[w] == UNVISITED {
                    index[w] = next_index;
                    lowlink[w] = next_index;
                    next_index += 1;
                    stack.push(w);
                    on_stack[w] = true;
                    call_stack.push((w, 0));
                } else if on_stack[w] {
                    lowlink[v] = lowlink[v].min(index[w]);
                }
                continue;
            }
            call_stack.pop();
            if let Some(&(parent, _)) = call_stack.last() {
                lowlink[parent] = lowlink[parent].min(lowlink[v]);
            }
            if lowlink[v] == index[v] {
                let mut component = Vec::new();
                loop {
                    let w = stack.pop().expect("tarjan stack underflow");
                    on_stack[w] = false;
                    component.push(w);
                    if w == v {
                        break;
                    }
                }
                components.push(component);
            }
        }
    }
    components
}

/// One constant-topology block of a repeating switching pattern.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub graph: usize,
    pub steps: usize,
}

/// The switching signal `σ_k`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SwitchingSignal {
    /// Cycles through the blocks starting at `k = 1`; `σ_0` takes the first
    /// block's graph.
    Blocks(Vec<Block>),
    /// `σ_k = sequence[k]`, holding the last entry beyond the end.
    Explicit(Vec<usize>),
}

impl SwitchingSignal {
    pub fn graph_index(&self, k: usize) -> usize {
        match self {
            SwitchingSignal::Blocks(blocks) => {
                if k == 0 {
                    return blocks[0].graph;
                }
                let period: usize = blocks.iter().map(|b| b.steps).sum();
                let mut offset = (k - 1) % period;
                for b in blocks {
                    if offset < b.steps {
                        return b.graph;
                    }
                    offset -= b.steps;
                }
                unreachable!("offset is reduced modulo the period")
            }
            SwitchingSignal::Explicit(seq) => seq[k.min(seq.len() - 1)],
        }
    }

    fn referenced_graphs(&self) -> Vec<usize> {
        match self {
            SwitchingSignal::Blocks(blocks) => blocks.iter().map(|b| b.graph).collect(),
            SwitchingSignal::Explicit(seq) => seq.clone(),
        }
    }
}

/// Topology set `Ω`, switching signal and a uniform interval length `k⁰`
/// giving intervals `[l·k⁰, (l+1)·k⁰)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TopologySchedule {
    graphs: Vec<WeightedDigraph>,
    signal: SwitchingSignal,
    interval_length: usize,
}

impl TopologySchedule {
    pub fn new(
        graphs: Vec<WeightedDigraph>,
        signal: SwitchingSignal,
        interval_length: usize,
    ) -> Result<Self> {
        let first = graphs
            .first()
            .ok_or_else(|| Error::Schedule("no topologies given".into()))?;
        if let Some(g) = graphs.iter().find(|g| g.node_count() != first.node_count()) {
            return Err(Error::NodeCountMismatch {
                expected: first.node_count(),
                found: g.node_count(),
            });
        }
        match &signal {
            SwitchingSignal::Blocks(blocks) => {
                if blocks.is_empty() {
                    return Err(Error::Schedule("switching pattern has no blocks".into()));
                }
                if blocks.iter().any(|b| b.steps == 0) {
                    return Err(Error::Schedule("switching block with zero steps".into()));
                }
            }
            SwitchingSignal::Explicit(seq) if seq.is_empty() => {
                return Err(Error::Schedule("explicit switching sequence is empty".into()));
            }
            SwitchingSignal::Explicit(_) => {}
        }
        if let Some(bad) = signal.referenced_graphs().into_iter().find(|&g| g >= graphs.len()) {
            return Err(Error::Schedule(format!(
                "switching signal references graph {bad}, only {} defined",
                graphs.len()
            )));
        }
        if interval_length == 0 {
            return Err(Error::Schedule("interval length must be positive".into()));
        }
        Ok(Self {
            graphs,
            signal,
            interval_length,
        })
    }

    /// A schedule that never switches.
    pub fn fixed(graph: WeightedDigraph, interval_length: usize) -> Result<Self> {
        Self::new(vec![graph], SwitchingSignal::Explicit(vec![0]), interval_length)
    }

    pub fn node_count(&self) -> usize {
        self.graphs[0].node_count()
    }

    pub fn graphs(&self) -> &[WeightedDigraph] {
        &self.graphs
    }

    pub fn signal(&self) -> &SwitchingSignal {
        &self.signal
    }

    pub fn interval_length(&self) -> usize {
        self.interval_length
    }

    pub fn sigma(&self, k: usize) -> usize {
        self.signal.graph_index(k)
    }

    pub fn graph_at(&self, k: usize) -> &WeightedDigraph {
        &self.graphs[self.sigma(k)]
    }

    /// Complete intervals contained in `[0, horizon)`.
    pub fn intervals(&self, horizon: usize) -> Vec<Range<usize>> {
        let len = self.interval_length;
        (0..horizon / len).map(|l| l * len..(l + 1) * len).collect()
    }
}

/// Joint connectivity verdict for one interval `[k_l, k_{l+1})`.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalConnectivity {
    pub interval: Range<usize>,
    pub strongly_connected: bool,
}

pub fn check_jointly_strongly_connected(
    schedule: &TopologySchedule,
    horizon: usize,
) -> Result<Vec<IntervalConnectivity>> {
    let intervals = schedule.intervals(horizon);
    if intervals.is_empty() {
        return Err(Error::EmptyInterval {
            horizon,
            interval_length: schedule.interval_length(),
        });
    }
    intervals
        .into_iter()
        .map(|interval| {
            let union = union_graph(interval.clone().map(|k| schedule.graph_at(k)))?;
            Ok(IntervalConnectivity {
                strongly_connected: union.is_strongly_connected(),
                interval,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn m(rows: &[&[f64]]) -> Matrix {
        let n = rows.len();
        Matrix::from_fn(n, rows[0].len(), |i, j| rows[i][j])
    }

    fn a1() -> Matrix {
        m(&[
            &[1.0, 0.0, 0.0, 0.0],
            &[0.5, 0.5, 0.0, 0.0],
            &[0.0, 0.5, 0.5, 0.0],
            &[0.0, 0.0, 0.5, 0.5],
        ])
    }

    fn a3() -> Matrix {
        m(&[
            &[0.5, 0.5, 0.0, 0.0],
            &[0.0, 0.5, 0.5, 0.0],
            &[0.0, 0.0, 1.0, 0.0],
            &[0.25, 0.25, 0.25, 0.25],
        ])
    }

    fn closure_oracle(adj: &Matrix) -> bool {
        let n = adj.nrows();
        let mut reach = vec![vec![false; n]; n];
        for i in 0..n {
            for j in 0..n {
                reach[i][j] = i == j || adj[(i, j)] > 0.0;
            }
        }
        for via in 0..n {
            for i in 0..n {
                for j in 0..n {
                    reach[i][j] = reach[i][j] || (reach[i][via] && reach[via][j]);
                }
            }
        }
        reach.iter().all(|r| r.iter().all(|&b| b))
    }

    #[test]
    fn identity_has_no_cross_edges() {
        let g = validate_adjacency(Matrix::identity(4, 4)).unwrap();
        assert!(g.edges().is_empty());
        for i in 0..4 {
            assert_eq!(g.neighbors(i).unwrap(), vec![i]);
        }
    }

    #[test]
    fn chain_topology_edges_and_neighbors() {
        let g = validate_adjacency(a1()).unwrap();
        let expected: BTreeSet<_> = [(1, 0), (2, 1), (3, 2)].into_iter().collect();
        assert_eq!(g.edges(), expected);
        assert_eq!(g.neighbors(1).unwrap(), vec![0, 1]);
        let g3 = validate_adjacency(a3()).unwrap();
        assert_eq!(g3.neighbors(3).unwrap(), vec![0, 1, 2, 3]);
        assert!(matches!(
            g.neighbors(4),
            Err(Error::NodeOutOfRange { index: 4, node_count: 4 })
        ));
    }

    #[test]
    fn validation_names_offending_entry() {
        let mut bad = Matrix::identity(3, 3);
        bad[(1, 1)] = 0.9;
        assert_eq!(
            validate_adjacency(bad.clone()),
            Err(Error::RowSum { row: 1, sum: 0.9 })
        );
        let mut neg = Matrix::identity(2, 2);
        neg[(0, 1)] = -0.5;
        neg[(0, 0)] = 1.5;
        assert!(matches!(
            validate_adjacency(neg),
            Err(Error::NegativeWeight { row: 0, col: 1, .. })
        ));
        let zero_diag = m(&[&[0.0, 1.0], &[0.0, 1.0]]);
        assert_eq!(validate_adjacency(zero_diag), Err(Error::ZeroDiagonal { row: 0 }));
        assert!(matches!(
            validate_adjacency(Matrix::zeros(2, 3)),
            Err(Error::NotSquare { rows: 2, cols: 3 })
        ));
        // explicit repair makes the row-sum case valid
        assert!(validate_adjacency(renormalize_rows(&bad)).is_ok());
    }

    #[test]
    fn strong_connectivity_examples() {
        assert!(!validate_adjacency(a1()).unwrap().is_strongly_connected());
        assert!(WeightedDigraph::complete(5).is_strongly_connected());
        assert!(!WeightedDigraph::identity(2).is_strongly_connected());
        assert!(WeightedDigraph::identity(1).is_strongly_connected());
    }

    #[test]
    fn union_of_graph_with_itself_doubles_weights() {
        let g = validate_adjacency(a1()).unwrap();
        let u = union_graph([&g, &g]).unwrap();
        assert_eq!(u.edges(), g.edges());
        assert_eq!(u.adjacency(), &(g.adjacency() * 2.0));
    }

    #[test]
    fn opposite_chains_union_is_strongly_connected() {
        let forward = validate_adjacency(a1()).unwrap();
        let backward = validate_adjacency(m(&[
            &[0.5, 0.5, 0.0, 0.0],
            &[0.0, 0.5, 0.5, 0.0],
            &[0.0, 0.0, 0.5, 0.5],
            &[0.0, 0.0, 0.0, 1.0],
        ]))
        .unwrap();
        assert!(forward.edges().is_disjoint(&backward.edges()));
        let u = union_graph([&forward, &backward]).unwrap();
        assert!(closure_oracle(u.adjacency()));
        assert!(u.is_strongly_connected());
    }

    #[test]
    fn union_rejects_mismatched_sizes() {
        let a = WeightedDigraph::identity(2);
        let b = WeightedDigraph::identity(3);
        assert!(matches!(
            union_graph([&a, &b]),
            Err(Error::NodeCountMismatch { expected: 2, found: 3 })
        ));
    }

    #[test]
    fn block_signal_starts_at_one() {
        let signal = SwitchingSignal::Blocks(vec![
            Block { graph: 0, steps: 5 },
            Block { graph: 1, steps: 5 },
            Block { graph: 2, steps: 5 },
        ]);
        let sigma: Vec<_> = (0..=16).map(|k| signal.graph_index(k)).collect();
        assert_eq!(sigma, vec![0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 2, 2, 2, 2, 2, 0]);
    }

    #[test]
    fn single_node_schedule_is_connected() {
        let s = TopologySchedule::fixed(WeightedDigraph::identity(1), 3).unwrap();
        let report = check_jointly_strongly_connected(&s, 9).unwrap();
        assert_eq!(report.len(), 3);
        assert!(report.iter().all(|r| r.strongly_connected));
        assert!(matches!(
            check_jointly_strongly_connected(&s, 2),
            Err(Error::EmptyInterval { .. })
        ));
    }

    #[test]
    fn schedule_rejects_unknown_graph() {
        let err = TopologySchedule::new(
            vec![WeightedDigraph::identity(2)],
            SwitchingSignal::Explicit(vec![0, 1]),
            2,
        );
        assert!(matches!(err, Err(Error::Schedule(_))));
    }

    fn random_stochastic(n: usize) -> impl Strategy<Value = Matrix> {
        proptest::collection::vec(0.0f64..1.0, n * n).prop_map(move |raw| {
            let mut a = Matrix::from_row_slice(n, n, &raw);
            for i in 0..n {
                a[(i, i)] += 0.1;
                // sparsify so connectivity varies
                for j in 0..n {
                    if i != j && a[(i, j)] < 0.6 {
                        a[(i, j)] = 0.0;
                    }
                }
            }
            renormalize_rows(&a)
        })
    }

    proptest! {
        #[test]
        fn renormalized_positive_diagonal_matrices_validate(a in (1usize..7).prop_flat_map(random_stochastic)) {
            // renormalized rows may miss 1 by a few ulps; that is within tolerance
            prop_assert!(validate_adjacency(a).is_ok());
        }

        #[test]
        fn any_single_violation_fails(a in (2usize..7).prop_flat_map(random_stochastic), pick in 0usize..3, row_seed in 0usize..100) {
            let n = a.nrows();
            let row = row_seed % n;
            let mut bad = a.clone();
            match pick {
                0 => bad[(row, row)] = 0.0,
                1 => { bad[(row, (row + 1) % n)] -= 2.0; bad[(row, row)] += 2.0; }
                _ => bad[(row, row)] += 0.01,
            }
            prop_assert!(validate_adjacency(bad).is_err());
        }

        #[test]
        fn tarjan_agrees_with_closure(a in (1usize..7).prop_flat_map(random_stochastic)) {
            let g = validate_adjacency(a).unwrap();
            prop_assert_eq!(g.is_strongly_connected(), closure_oracle(g.adjacency()));
        }

        #[test]
        fn union_edges_are_set_union(
            a in random_stochastic(5),
            b in random_stochastic(5),
        ) {
            let ga = validate_adjacency(a).unwrap();
            let gb = validate_adjacency(b).unwrap();
            let u = union_graph([&ga, &gb]).unwrap();
            let expected: BTreeSet<_> = ga.edges().union(&gb.edges()).copied().collect();
            prop_assert_eq!(u.edges(), expected);
        }
    }
}
