//! Compartmental graphs: compartments with finite capacities joined by
//! directed transition edges, each edge carrying its rate specification.
//!
//! Indices are 0-based internally. The JSON document and every user-facing
//! name use 1-based compartment numbers (`q1..qm`, `N1`, `S1`, ...).

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rate::{RateError, RateSpec};

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("graph must have at least one compartment")]
    Empty,
    #[error("loop edge ({0},{0}) is not allowed")]
    LoopEdge(usize),
    #[error("duplicate edge ({0},{1})")]
    DuplicateEdge(usize, usize),
    #[error("compartment {index} ({name}) has nonpositive or non-finite capacity {capacity}")]
    NonpositiveCapacity {
        index: usize,
        name: String,
        capacity: f64,
    },
    #[error("edge ({from},{to}) references a compartment outside 1..={m}")]
    DanglingEndpoint { from: usize, to: usize, m: usize },
    #[error("edge ({from},{to}): {source}")]
    InvalidRate {
        from: usize,
        to: usize,
        #[source]
        source: RateError,
    },
    #[error("invalid graph document: {0}")]
    Json(String),
}

/// One compartment entry of the input document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompartmentSpec {
    pub name: String,
    pub capacity: f64,
}

/// One edge entry of the input document. Endpoints are 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeSpec {
    pub from: usize,
    pub to: usize,
    pub rate: RateSpec,
}

/// The JSON input document describing a compartmental graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSpec {
    pub compartments: Vec<CompartmentSpec>,
    pub edges: Vec<EdgeSpec>,
}

impl GraphSpec {
    pub fn from_json(text: &str) -> Result<Self, GraphError> {
        serde_json::from_str(text).map_err(|e| GraphError::Json(e.to_string()))
    }

    /// Unit capacities, mass action with `k = 1` on every edge.
    pub fn uniform(m: usize, edges: &[(usize, usize)]) -> Self {
        GraphSpec {
            compartments: (1..=m)
                .map(|i| CompartmentSpec {
                    name: format!("q{i}"),
                    capacity: 1.0,
                })
                .collect(),
            edges: edges
                .iter()
                .map(|&(from, to)| EdgeSpec {
                    from,
                    to,
                    rate: RateSpec::MassAction { k: 1.0 },
                })
                .collect(),
        }
    }
}

/// A validated directed edge, 0-based.
#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub rate: RateSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompartmentalGraph {
    labels: Vec<String>,
    capacities: Vec<f64>,
    edges: Vec<Edge>,
}

/// Donor and recipient index sets per compartment, 0-based and sorted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DonorRecipientIndex {
    pub donors: Vec<Vec<usize>>,
    pub recipients: Vec<Vec<usize>>,
}

/// Strong component decomposition of a graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StrongComponents {
    /// Each component sorted; components ordered by their smallest vertex.
    pub components: Vec<Vec<usize>>,
    pub is_strongly_connected: bool,
}

impl CompartmentalGraph {
    pub fn build(spec: &GraphSpec) -> Result<Self, GraphError> {
        let m = spec.compartments.len();
        if m == 0 {
            return Err(GraphError::Empty);
        }
        for (i, c) in spec.compartments.iter().enumerate() {
            if !(c.capacity.is_finite() && c.capacity > 0.0) {
                return Err(GraphError::NonpositiveCapacity {
                    index: i + 1,
                    name: c.name.clone(),
                    capacity: c.capacity,
                });
            }
        }
        let mut seen = BTreeSet::new();
        let mut edges = Vec::with_capacity(spec.edges.len());
        for e in &spec.edges {
            if e.from == 0 || e.to == 0 || e.from > m || e.to > m {
                return Err(GraphError::DanglingEndpoint {
                    from: e.from,
                    to: e.to,
                    m,
                });
            }
            if e.from == e.to {
                return Err(GraphError::LoopEdge(e.from));
            }
            if !seen.insert((e.from, e.to)) {
                return Err(GraphError::DuplicateEdge(e.from, e.to));
            }
            e.rate.validate().map_err(|source| GraphError::InvalidRate {
                from: e.from,
                to: e.to,
                source,
            })?;
            edges.push(Edge {
                from: e.from - 1,
                to: e.to - 1,
                rate: e.rate.clone(),
            });
        }
        Ok(CompartmentalGraph {
            labels: spec.compartments.iter().map(|c| c.name.clone()).collect(),
            capacities: spec.compartments.iter().map(|c| c.capacity).collect(),
            edges,
        })
    }

    pub fn from_json(text: &str) -> Result<Self, GraphError> {
        Self::build(&GraphSpec::from_json(text)?)
    }

    pub fn to_spec(&self) -> GraphSpec {
        GraphSpec {
            compartments: self
                .labels
                .iter()
                .zip(&self.capacities)
                .map(|(name, &capacity)| CompartmentSpec {
                    name: name.clone(),
                    capacity,
                })
                .collect(),
            edges: self
                .edges
                .iter()
                .map(|e| EdgeSpec {
                    from: e.from + 1,
                    to: e.to + 1,
                    rate: e.rate.clone(),
                })
                .collect(),
        }
    }

    /// Number of compartments.
    pub fn m(&self) -> usize {
        self.capacities.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn capacities(&self) -> &[f64] {
        &self.capacities
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Total capacity `I(c)`.
    pub fn total_capacity(&self) -> f64 {
        self.capacities.iter().sum()
    }

    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.m()];
        for e in &self.edges {
            adj[e.from].push(e.to);
        }
        adj
    }

    pub fn donors_recipients(&self) -> DonorRecipientIndex {
        let m = self.m();
        let mut donors = vec![Vec::new(); m];
        let mut recipients = vec![Vec::new(); m];
        for e in &self.edges {
            donors[e.to].push(e.from);
            recipients[e.from].push(e.to);
        }
        donors.iter_mut().for_each(|d| d.sort_unstable());
        recipients.iter_mut().for_each(|r| r.sort_unstable());
        DonorRecipientIndex { donors, recipients }
    }

    pub fn strong_components(&self) -> StrongComponents {
        let components = strong_components(&self.adjacency());
        let is_strongly_connected = components.len() == 1;
        StrongComponents {
            components,
            is_strongly_connected,
        }
    }

    pub fn is_strongly_connected(&self) -> bool {
        self.strong_components().is_strongly_connected
    }
}

/// Tarjan's algorithm over an adjacency list, iterative so deep graphs do not
/// overflow the stack. Components are returned sorted, ordered by their
/// smallest vertex.
pub fn strong_components(adj: &[Vec<usize>]) -> Vec<Vec<usize>> {
    const UNVISITED: usize = usize::MAX;
    let n = adj.len();
    let mut index = vec![UNVISITED; n];
    let mut low = vec![0usize; n];
    let mut on_stack = vec![false; n];
    let mut stack = Vec::new();
    let mut comps: Vec<Vec<usize>> = Vec::new();
    let mut next = 0usize;
    // (vertex, position in its adjacency list)
    let mut call: Vec<(usize, usize)> = Vec::new();

    for root in 0..n {
        if index[root] != UNVISITED {
            continue;
        }
        call.push((root, 0));
        index[root] = next;
        low[root] = next;
        next += 1;
        stack.push(root);
        on_stack[root] = true;

        while let Some(&mut (v, ref mut pos)) = call.last_mut() {
            if let Some(&w) = adj[v].get(*pos) {
                *pos += 1;
                if index[w] == UNVISITED {
                    index[w] = next;
                    low[w] = next;
                    next += 1;
                    stack.push(w);
                    on_stack[w] = true;
                    call.push((w, 0));
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
                continue;
            }
            call.pop();
            if let Some(&(parent, _)) = call.last() {
                low[parent] = low[parent].min(low[v]);
            }
            if low[v] == index[v] {
                let mut comp = Vec::new();
                loop {
                    let w = stack.pop().expect("tarjan stack underflow");
                    on_stack[w] = false;
                    comp.push(w);
                    if w == v {
                        break;
                    }
                }
                comp.sort_unstable();
                comps.push(comp);
            }
        }
    }
    comps.sort_by_key(|c| c[0]);
    comps
}

#[cfg(test)]
mod tests {
    use super::*;

    fn triangle() -> CompartmentalGraph {
        CompartmentalGraph::build(&GraphSpec::uniform(3, &[(1, 2), (2, 3), (3, 1)])).unwrap()
    }

    #[test]
    fn triangle_is_valid_cycle() {
        let g = triangle();
        assert_eq!(g.m(), 3);
        assert_eq!(g.edges().len(), 3);
        let sc = g.strong_components();
        assert!(sc.is_strongly_connected);
        assert_eq!(sc.components, vec![vec![0, 1, 2]]);
    }

    #[test]
    fn single_compartment_without_edges() {
        let g = CompartmentalGraph::build(&GraphSpec::uniform(1, &[])).unwrap();
        assert!(g.edges().is_empty());
        assert!(g.is_strongly_connected());
        let dr = g.donors_recipients();
        assert!(dr.donors[0].is_empty() && dr.recipients[0].is_empty());
    }

    #[test]
    fn rejects_malformed_edges() {
        let err = CompartmentalGraph::build(&GraphSpec::uniform(3, &[(1, 2), (2, 2)]));
        assert_eq!(err, Err(GraphError::LoopEdge(2)));
        let err = CompartmentalGraph::build(&GraphSpec::uniform(3, &[(1, 2), (1, 2)]));
        assert_eq!(err, Err(GraphError::DuplicateEdge(1, 2)));
        let err = CompartmentalGraph::build(&GraphSpec::uniform(2, &[(1, 3)]));
        assert!(matches!(err, Err(GraphError::DanglingEndpoint { to: 3, .. })));
        let err = CompartmentalGraph::build(&GraphSpec::uniform(0, &[]));
        assert_eq!(err, Err(GraphError::Empty));
    }

    #[test]
    fn rejects_bad_capacity() {
        let mut spec = GraphSpec::uniform(2, &[(1, 2)]);
        spec.compartments[1].capacity = 0.0;
        assert!(matches!(
            CompartmentalGraph::build(&spec),
            Err(GraphError::NonpositiveCapacity { index: 2, .. })
        ));
        spec.compartments[1].capacity = f64::INFINITY;
        assert!(CompartmentalGraph::build(&spec).is_err());
    }

    #[test]
    fn single_edge_splits_into_two_components() {
        let g = CompartmentalGraph::build(&GraphSpec::uniform(2, &[(1, 2)])).unwrap();
        let sc = g.strong_components();
        assert!(!sc.is_strongly_connected);
        assert_eq!(sc.components, vec![vec![0], vec![1]]);
    }

    #[test]
    fn triangle_donors_and_recipients() {
        let dr = triangle().donors_recipients();
        assert_eq!(dr.donors[0], vec![2]);
        assert_eq!(dr.recipients[0], vec![1]);
    }

    #[test]
    fn complete_graph_donors_are_everyone_else() {
        let edges: Vec<_> = (1..=3)
            .flat_map(|i| (1..=3).filter(move |&j| j != i).map(move |j| (i, j)))
            .collect();
        assert_eq!(edges.len(), 6);
        let g = CompartmentalGraph::build(&GraphSpec::uniform(3, &edges)).unwrap();
        let dr = g.donors_recipients();
        for i in 0..3 {
            let others: Vec<usize> = (0..3).filter(|&j| j != i).collect();
            assert_eq!(dr.donors[i], others);
            assert_eq!(dr.recipients[i], others);
        }
    }

    #[test]
    fn json_round_trip_and_unknown_fields() {
        let text = r#"{"compartments":[{"name":"a","capacity":1.5},{"name":"b","capacity":2}],
            "edges":[{"from":1,"to":2,"rate":{"kind":"saturating","k":1,"a":0.5,"b":0.25}},
                     {"from":2,"to":1,"rate":{"kind":"mass_action","k":2}}]}"#;
        let g = CompartmentalGraph::from_json(text).unwrap();
        assert_eq!(g.capacities(), &[1.5, 2.0]);
        let back = CompartmentalGraph::build(&g.to_spec()).unwrap();
        assert_eq!(back, g);

        let bad = r#"{"compartments":[{"name":"a","capacity":1,"color":"red"}],"edges":[]}"#;
        assert!(matches!(CompartmentalGraph::from_json(bad), Err(GraphError::Json(_))));
        let bad_rate = r#"{"compartments":[{"name":"a","capacity":1},{"name":"b","capacity":1}],
            "edges":[{"from":1,"to":2,"rate":{"kind":"mass_action","k":1,"extra":3}}]}"#;
        assert!(CompartmentalGraph::from_json(bad_rate).is_err());
        let neg_rate = r#"{"compartments":[{"name":"a","capacity":1},{"name":"b","capacity":1}],
            "edges":[{"from":1,"to":2,"rate":{"kind":"mass_action","k":-1}}]}"#;
        assert!(matches!(
            CompartmentalGraph::from_json(neg_rate),
            Err(GraphError::InvalidRate { from: 1, to: 2, .. })
        ));
    }

    #[test]
    fn deep_path_does_not_overflow() {
        let n = 200_000;
        let adj: Vec<Vec<usize>> = (0..n).map(|i| if i + 1 < n { vec![i + 1] } else { vec![0] }).collect();
        assert_eq!(strong_components(&adj).len(), 1);
    }
}
