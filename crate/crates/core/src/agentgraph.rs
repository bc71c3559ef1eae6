//! Dynamic agent graph: agents are adjacent when each lies inside the
//! other's square field of view. Obstacles do not block visibility.

use thiserror::Error;

use crate::gridworld::Pos;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("node {index} out of range for a graph with {count} nodes")]
    BadNode { index: usize, count: usize },
}

/// Undirected simple graph with edges stored as sorted `(i, j)`, `i < j`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AgentGraph {
    n: usize,
    edges: Vec<(usize, usize)>,
    adjacency: Vec<Vec<usize>>,
}

impl AgentGraph {
    /// Build from an arbitrary edge list; self-loops and duplicates are dropped.
    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut e: Vec<(usize, usize)> = edges
            .into_iter()
            .filter(|&(a, b)| a != b)
            .map(|(a, b)| (a.min(b), a.max(b)))
            .inspect(|&(_, b)| assert!(b < n, "edge endpoint out of range"))
            .collect();
        e.sort_unstable();
        e.dedup();
        let mut adjacency = vec![Vec::new(); n];
        for &(a, b) in &e {
            adjacency[a].push(b);
            adjacency[b].push(a);
        }
        adjacency.iter_mut().for_each(|v| v.sort_unstable());
        Self {
            n,
            edges: e,
            adjacency,
        }
    }

    pub fn empty(n: usize) -> Self {
        Self::from_edges(n, [])
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn neighbors(&self, i: usize) -> Result<&[usize], GraphError> {
        self.adjacency
            .get(i)
            .map(Vec::as_slice)
            .ok_or(GraphError::BadNode {
                index: i,
                count: self.n,
            })
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adjacency.get(i).is_some_and(|a| a.binary_search(&j).is_ok())
    }

    /// Relabel nodes: node `i` becomes `perm[i]`.
    pub fn relabel(&self, perm: &[usize]) -> Self {
        Self::from_edges(self.n, self.edges.iter().map(|&(a, b)| (perm[a], perm[b])))
    }

    /// Number of connected components (isolated nodes count).
    pub fn component_count(&self) -> usize {
        let mut seen = vec![false; self.n];
        let mut count = 0;
        for s in 0..self.n {
            if seen[s] {
                continue;
            }
            count += 1;
            let mut stack = vec![s];
            seen[s] = true;
            while let Some(v) = stack.pop() {
                for &w in &self.adjacency[v] {
                    if !seen[w] {
                        seen[w] = true;
                        stack.push(w);
                    }
                }
            }
        }
        count
    }
}

/// Connect every pair of agents within Chebyshev distance `(fov - 1) / 2`.
///
/// Agents are bucketed into cells of side `radius + 1` so only neighbouring
/// buckets are compared.
pub fn build_graph(positions: &[Pos], fov: usize) -> AgentGraph {
    let radius = fov.saturating_sub(1) / 2;
    let side = radius + 1;
    let mut buckets: std::collections::HashMap<(usize, usize), Vec<usize>> =
        std::collections::HashMap::new();
    for (i, p) in positions.iter().enumerate() {
        buckets.entry((p.row / side, p.col / side)).or_default().push(i);
    }
    let mut edges = Vec::new();
    for (i, p) in positions.iter().enumerate() {
        let (br, bc) = (p.row / side, p.col / side);
        for r in br.saturating_sub(1)..=br + 1 {
            for c in bc.saturating_sub(1)..=bc + 1 {
                for &j in buckets.get(&(r, c)).into_iter().flatten() {
                    if j > i && p.chebyshev(positions[j]) <= radius {
                        edges.push((i, j));
                    }
                }
            }
        }
    }
    AgentGraph::from_edges(positions.len(), edges)
}
