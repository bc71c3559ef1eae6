//! Cellular sheaf on the agent graph.
//!
//! Every node stalk is `R^{d_v}` (an agent's embedding), every edge stalk is
//! `R^{d_e}`, and one restriction map `M: R^{d_v} -> R^{d_e}` is shared by all
//! incident node/edge pairs. A stacked assignment `x = (x_1, ..., x_n)` is a
//! global section when `M x_i = M x_j` on every edge.
//!
//! The global-section loss is
//!
//! ```text
//! l_i   = sum_{j in N(i)} |M x_j - M x_i|^2
//! l_sec = (1/n) sum_i l_i
//! ```
//!
//! so every edge is counted once from each endpoint. [`global_sections_basis`]
//! computes the section space exactly, as the null space of the coboundary,
//! which gives an independent check on the loss.

use thiserror::Error;

use crate::agentgraph::AgentGraph;
use crate::rng::SeededRng;
use crate::Scalar;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SheafError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid sheaf config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct SheafConfig {
    pub node_dim: usize,
    pub edge_dim: usize,
}

impl Default for SheafConfig {
    fn default() -> Self {
        Self {
            node_dim: 64,
            edge_dim: 32,
        }
    }
}

impl SheafConfig {
    pub fn validate(&self) -> Result<(), SheafError> {
        if self.node_dim == 0 || self.edge_dim == 0 || self.edge_dim > self.node_dim {
            return Err(SheafError::Config(format!(
                "need 1 <= edge_dim <= node_dim, got node_dim={} edge_dim={}",
                self.node_dim, self.edge_dim
            )));
        }
        Ok(())
    }
}

/// Linear map from node stalks to edge stalks, stored row-major `d_e x d_v`.
#[derive(Debug, Clone, PartialEq)]
pub struct RestrictionMap<T> {
    edge_dim: usize,
    node_dim: usize,
    data: Vec<T>,
}

impl<T: Scalar> RestrictionMap<T> {
    pub fn new(edge_dim: usize, node_dim: usize, data: Vec<T>) -> Result<Self, SheafError> {
        if data.len() != edge_dim * node_dim {
            return Err(SheafError::Dimension {
                expected: edge_dim * node_dim,
                got: data.len(),
            });
        }
        Ok(Self {
            edge_dim,
            node_dim,
            data,
        })
    }

    pub fn identity(dim: usize) -> Self {
        let mut data = vec![T::zero(); dim * dim];
        for i in 0..dim {
            data[i * dim + i] = T::one();
        }
        Self {
            edge_dim: dim,
            node_dim: dim,
            data,
        }
    }

    pub fn zeros(edge_dim: usize, node_dim: usize) -> Self {
        Self {
            edge_dim,
            node_dim,
            data: vec![T::zero(); edge_dim * node_dim],
        }
    }

    /// Entries uniform on `[-1/sqrt(d_v), 1/sqrt(d_v))`.
    pub fn random(edge_dim: usize, node_dim: usize, rng: &mut SeededRng) -> Self {
        let bound = 1.0 / (node_dim as f64).sqrt();
        let data = (0..edge_dim * node_dim)
            .map(|_| T::lit(rng.uniform(-bound, bound)))
            .collect();
        Self {
            edge_dim,
            node_dim,
            data,
        }
    }

    pub fn edge_dim(&self) -> usize {
        self.edge_dim
    }

    pub fn node_dim(&self) -> usize {
        self.node_dim
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.node_dim + c]
    }

    pub fn apply(&self, stalk: &[T]) -> Result<Vec<T>, SheafError> {
        if stalk.len() != self.node_dim {
            return Err(SheafError::Dimension {
                expected: self.node_dim,
                got: stalk.len(),
            });
        }
        Ok(self.apply_unchecked(stalk))
    }

    fn apply_unchecked(&self, stalk: &[T]) -> Vec<T> {
        self.data
            .chunks_exact(self.node_dim)
            .map(|row| row.iter().zip(stalk).map(|(&m, &x)| m * x).sum())
            .collect()
    }
}

/// Node stalks over an agent graph together with the shared restriction map.
#[derive(Debug, Clone)]
pub struct SheafBundle<T> {
    graph: AgentGraph,
    stalks: Vec<T>,
    map: RestrictionMap<T>,
}

impl<T: Scalar> SheafBundle<T> {
    /// `stalks` is row-major `n x d_v`.
    pub fn new(graph: AgentGraph, stalks: Vec<T>, map: RestrictionMap<T>) -> Result<Self, SheafError> {
        let expected = graph.node_count() * map.node_dim();
        if stalks.len() != expected {
            return Err(SheafError::Dimension {
                expected,
                got: stalks.len(),
            });
        }
        Ok(Self { graph, stalks, map })
    }

    pub fn graph(&self) -> &AgentGraph {
        &self.graph
    }

    pub fn stalks(&self) -> &[T] {
        &self.stalks
    }

    pub fn map(&self) -> &RestrictionMap<T> {
        &self.map
    }

    pub fn stalk(&self, i: usize) -> &[T] {
        let d = self.map.node_dim();
        &self.stalks[i * d..(i + 1) * d]
    }

    fn mapped(&self) -> Vec<Vec<T>> {
        (0..self.graph.node_count())
            .map(|i| self.map.apply_unchecked(self.stalk(i)))
            .collect()
    }
}

fn sq_dist<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

/// Per-agent terms `l_i`.
pub fn per_agent_section_loss<T: Scalar>(bundle: &SheafBundle<T>) -> Vec<T> {
    let mapped = bundle.mapped();
    (0..bundle.graph.node_count())
        .map(|i| {
            bundle
                .graph
                .neighbors(i)
                .expect("in range")
                .iter()
                .map(|&j| sq_dist(&mapped[j], &mapped[i]))
                .sum()
        })
        .collect()
}

pub fn global_section_loss<T: Scalar>(bundle: &SheafBundle<T>) -> T {
    let n = bundle.graph.node_count();
    if n == 0 {
        return T::zero();
    }
    per_agent_section_loss(bundle).into_iter().sum::<T>() / T::lit(n as f64)
}

/// Consensus residual reported during evaluation; same quantity as the loss.
pub fn section_residual<T: Scalar>(bundle: &SheafBundle<T>) -> T {
    global_section_loss(bundle)
}

/// Loss together with its gradients with respect to the stalks (`n x d_v`)
/// and the restriction map (`d_e x d_v`).
pub struct SectionLossGrad<T> {
    pub loss: T,
    pub d_stalks: Vec<T>,
    pub d_map: Vec<T>,
}

pub fn global_section_loss_grad<T: Scalar>(bundle: &SheafBundle<T>) -> SectionLossGrad<T> {
    let n = bundle.graph.node_count();
    let (de, dv) = (bundle.map.edge_dim(), bundle.map.node_dim());
    let mapped: Vec<T> = bundle.mapped().concat();
    let (loss, d_mapped) = edge_disagreement_grad(&mapped, de, n, bundle.graph.edges(), true);
    // Chain rule through m_i = M x_i.
    let mut d_stalks = vec![T::zero(); n * dv];
    let mut d_map = vec![T::zero(); de * dv];
    for i in 0..n {
        let x = bundle.stalk(i);
        for k in 0..de {
            let gk = d_mapped[i * de + k];
            if gk == T::zero() {
                continue;
            }
            let row = &bundle.map.data[k * dv..(k + 1) * dv];
            for c in 0..dv {
                d_stalks[i * dv + c] += row[c] * gk;
                d_map[k * dv + c] += gk * x[c];
            }
        }
    }
    SectionLossGrad {
        loss,
        d_stalks,
        d_map,
    }
}

/// Section loss of already-mapped stalks `m` (`n x d_e`, row-major) over an
/// edge list, and optionally its gradient with respect to `m`:
/// `d l_sec / d m_i = (4/n) sum_{j in N(i)} (m_i - m_j)`.
pub fn edge_disagreement_grad<T: Scalar>(
    mapped: &[T],
    edge_dim: usize,
    n: usize,
    edges: &[(usize, usize)],
    with_grad: bool,
) -> (T, Vec<T>) {
    let mut grad = if with_grad {
        vec![T::zero(); mapped.len()]
    } else {
        Vec::new()
    };
    if n == 0 {
        return (T::zero(), grad);
    }
    let inv_n = T::one() / T::lit(n as f64);
    let four = T::lit(4.0) * inv_n;
    let mut total = T::zero();
    for &(i, j) in edges {
        let (a, b) = (i * edge_dim, j * edge_dim);
        for k in 0..edge_dim {
            let diff = mapped[a + k] - mapped[b + k];
            total += diff * diff;
            if with_grad {
                grad[a + k] += four * diff;
                grad[b + k] -= four * diff;
            }
        }
    }
    // Each edge appears in the neighbourhood sums of both endpoints.
    (T::lit(2.0) * total * inv_n, grad)
}

/// Dense coboundary: one `d_e` block row per edge `(i, j)`, with `+M` in the
/// columns of node `i` and `-M` in those of node `j`. Row-major
/// `(|E| d_e) x (n d_v)`.
pub fn coboundary<T: Scalar>(graph: &AgentGraph, map: &RestrictionMap<T>) -> (usize, usize, Vec<T>) {
    let (de, dv) = (map.edge_dim(), map.node_dim());
    let rows = graph.edge_count() * de;
    let cols = graph.node_count() * dv;
    let mut m = vec![T::zero(); rows * cols];
    for (e, &(i, j)) in graph.edges().iter().enumerate() {
        for k in 0..de {
            let r = e * de + k;
            for c in 0..dv {
                let v = map.get(k, c);
                m[r * cols + i * dv + c] = v;
                m[r * cols + j * dv + c] = -v;
            }
        }
    }
    (rows, cols, m)
}

/// Orthonormal basis of the global-section space.
#[derive(Debug, Clone)]
pub struct SectionBasis<T> {
    ambient: usize,
    vectors: Vec<Vec<T>>,
}

impl<T: Scalar> SectionBasis<T> {
    pub fn dim(&self) -> usize {
        self.vectors.len()
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient
    }

    pub fn vectors(&self) -> &[Vec<T>] {
        &self.vectors
    }

    pub fn project(&self, x: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.ambient];
        for v in &self.vectors {
            let c: T = v.iter().zip(x).map(|(&a, &b)| a * b).sum();
            for (o, &a) in out.iter_mut().zip(v) {
                *o += c * a;
            }
        }
        out
    }

    /// `|x - P x|^2`.
    pub fn residual_sq(&self, x: &[T]) -> T {
        let p = self.project(x);
        sq_dist(x, &p)
    }

    /// Linear combination of the basis vectors.
    pub fn combine(&self, coeffs: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.ambient];
        for (v, &c) in self.vectors.iter().zip(coeffs) {
            for (o, &a) in out.iter_mut().zip(v) {
                *o += c * a;
            }
        }
        out
    }
}

pub fn global_sections_basis<T: Scalar>(graph: &AgentGraph, map: &RestrictionMap<T>) -> SectionBasis<T> {
    let (rows, cols, mut a) = coboundary(graph, map);
    let null = null_space(rows, cols, &mut a);
    SectionBasis {
        ambient: cols,
        vectors: orthonormalize(null),
    }
}

/// Null space of a row-major `rows x cols` matrix by Gauss-Jordan elimination
/// with partial pivoting. `a` is overwritten with its reduced row echelon form.
fn null_space<T: Scalar>(rows: usize, cols: usize, a: &mut [T]) -> Vec<Vec<T>> {
    let scale = a.iter().fold(T::zero(), |m, &v| m.max(v.abs()));
    let tol = T::lit((rows.max(cols) as f64) * 64.0) * T::epsilon() * scale.max(T::one());
    let mut pivots: Vec<usize> = Vec::new();
    let mut r = 0;
    for c in 0..cols {
        if r == rows {
            break;
        }
        let (best, val) = (r..rows)
            .map(|i| (i, a[i * cols + c].abs()))
            .fold((r, T::zero()), |acc, x| if x.1 > acc.1 { x } else { acc });
        if val <= tol {
            for i in r..rows {
                a[i * cols + c] = T::zero();
            }
            continue;
        }
        if best != r {
            for k in 0..cols {
                a.swap(best * cols + k, r * cols + k);
            }
        }
        let p = a[r * cols + c];
        for k in 0..cols {
            a[r * cols + k] /= p;
        }
        for i in 0..rows {
            if i == r {
                continue;
            }
            let f = a[i * cols + c];
            if f == T::zero() {
                continue;
            }
            for k in 0..cols {
                let v = a[r * cols + k];
                a[i * cols + k] -= f * v;
            }
        }
        pivots.push(c);
        r += 1;
    }
    let is_pivot = {
        let mut v = vec![false; cols];
        pivots.iter().for_each(|&c| v[c] = true);
        v
    };
    (0..cols)
        .filter(|&c| !is_pivot[c])
        .map(|free| {
            let mut v = vec![T::zero(); cols];
            v[free] = T::one();
            for (row, &pc) in pivots.iter().enumerate() {
                v[pc] = -a[row * cols + free];
            }
            v
        })
        .collect()
}

/// Modified Gram-Schmidt, two passes.
fn orthonormalize<T: Scalar>(vs: Vec<Vec<T>>) -> Vec<Vec<T>> {
    let mut out: Vec<Vec<T>> = Vec::with_capacity(vs.len());
    for mut v in vs {
        for _ in 0..2 {
            for q in &out {
                let d: T = q.iter().zip(&v).map(|(&a, &b)| a * b).sum();
                for (x, &a) in v.iter_mut().zip(q) {
                    *x -= d * a;
                }
            }
        }
        let norm = v.iter().map(|&x| x * x).sum::<T>().sqrt();
        if norm > T::lit(1e-10) {
            v.iter_mut().for_each(|x| *x /= norm);
            out.push(v);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map2(data: [f64; 4]) -> RestrictionMap<f64> {
        RestrictionMap::new(2, 2, data.to_vec()).unwrap()
    }

    #[test]
    fn apply_examples() {
        let m = map2([1.0, 1.0, 0.0, 2.0]);
        assert_eq!(m.apply(&[3.0, 4.0]).unwrap(), vec![7.0, 8.0]);
        assert_eq!(m.apply(&[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
        let id = RestrictionMap::<f64>::identity(3);
        assert_eq!(id.apply(&[1.0, -2.0, 5.0]).unwrap(), vec![1.0, -2.0, 5.0]);
        assert_eq!(
            m.apply(&[1.0]),
            Err(SheafError::Dimension { expected: 2, got: 1 })
        );
    }

    #[test]
    fn two_agent_hand_example() {
        let g = AgentGraph::from_edges(2, [(0, 1)]);
        let b = SheafBundle::new(g, vec![1.0, 0.0, 0.0, 1.0], RestrictionMap::identity(2)).unwrap();
        assert_eq!(per_agent_section_loss(&b), vec![2.0, 2.0]);
        assert_eq!(global_section_loss(&b), 2.0);
    }

    #[test]
    fn identical_stalks_and_isolated_agents_give_zero() {
        let g = AgentGraph::from_edges(3, [(0, 1), (1, 2)]);
        let m = RestrictionMap::new(1, 2, vec![0.3, -0.7]).unwrap();
        let b = SheafBundle::new(g, vec![1.5, 2.0, 1.5, 2.0, 1.5, 2.0], m.clone()).unwrap();
        assert_eq!(global_section_loss(&b), 0.0);
        let b = SheafBundle::new(AgentGraph::empty(2), vec![1.0, 0.0, 9.0, 4.0], m).unwrap();
        assert_eq!(global_section_loss(&b), 0.0);
    }

    #[test]
    fn bundle_dimension_check() {
        let r = SheafBundle::new(AgentGraph::empty(2), vec![1.0; 3], RestrictionMap::<f64>::identity(2));
        assert!(r.is_err());
    }

    #[test]
    fn constant_sheaf_dimensions() {
        let g = AgentGraph::from_edges(4, [(0, 1), (1, 2), (2, 3)]);
        assert_eq!(global_sections_basis(&g, &RestrictionMap::<f64>::identity(3)).dim(), 3);
        assert_eq!(global_sections_basis(&AgentGraph::empty(4), &RestrictionMap::<f64>::identity(3)).dim(), 12);
        assert_eq!(global_sections_basis(&g, &RestrictionMap::<f64>::zeros(2, 3)).dim(), 12);
    }

    #[test]
    fn basis_is_orthonormal() {
        let mut rng = SeededRng::new(5);
        let g = AgentGraph::from_edges(3, [(0, 1), (0, 2)]);
        let m = RestrictionMap::<f64>::random(2, 3, &mut rng);
        let b = global_sections_basis(&g, &m);
        for (i, u) in b.vectors().iter().enumerate() {
            for (j, v) in b.vectors().iter().enumerate() {
                let d: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((d - want).abs() < 1e-12);
            }
        }
        // rank(coboundary) = 2 edges * 2 rows for generic M.
        assert_eq!(b.dim(), 9 - 4);
    }

    #[test]
    fn projected_stalks_have_zero_residual() {
        let mut rng = SeededRng::new(11);
        let g = AgentGraph::from_edges(4, [(0, 1), (1, 2), (2, 3), (0, 3)]);
        let m = RestrictionMap::<f64>::random(2, 3, &mut rng);
        let basis = global_sections_basis(&g, &m);
        let x: Vec<f64> = (0..12).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let b = SheafBundle::new(g.clone(), x.clone(), m.clone()).unwrap();
        assert!(section_residual(&b) > 0.0);
        let px = basis.project(&x);
        let b = SheafBundle::new(g, px, m).unwrap();
        assert!(section_residual(&b) < 1e-9);
    }

    #[test]
    fn gradient_descent_on_stalks_decreases_residual() {
        let mut rng = SeededRng::new(2);
        let g = AgentGraph::from_edges(3, [(0, 1), (1, 2)]);
        let m = RestrictionMap::<f64>::random(2, 3, &mut rng);
        let mut x: Vec<f64> = (0..9).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let mut prev = f64::INFINITY;
        for _ in 0..50 {
            let b = SheafBundle::new(g.clone(), x.clone(), m.clone()).unwrap();
            let gr = global_section_loss_grad(&b);
            assert!(gr.loss <= prev + 1e-15);
            prev = gr.loss;
            for (xi, di) in x.iter_mut().zip(&gr.d_stalks) {
                *xi -= 0.05 * di;
            }
        }
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let mut rng = SeededRng::new(3);
        let g = AgentGraph::from_edges(4, [(0, 1), (1, 2), (1, 3)]);
        let m = RestrictionMap::<f64>::random(2, 3, &mut rng);
        let x: Vec<f64> = (0..12).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let b = SheafBundle::new(g.clone(), x.clone(), m.clone()).unwrap();
        let gr = global_section_loss_grad(&b);
        assert!((gr.loss - global_section_loss(&b)).abs() < 1e-12);
        let h = 1e-5;
        for k in 0..x.len() {
            let mut xp = x.clone();
            xp[k] += h;
            let mut xm = x.clone();
            xm[k] -= h;
            let lp = global_section_loss(&SheafBundle::new(g.clone(), xp, m.clone()).unwrap());
            let lm = global_section_loss(&SheafBundle::new(g.clone(), xm, m.clone()).unwrap());
            let fd = (lp - lm) / (2.0 * h);
            assert!((fd - gr.d_stalks[k]).abs() <= 1e-6 * (1.0 + fd.abs()));
        }
        for k in 0..6 {
            let mut mp = m.as_slice().to_vec();
            mp[k] += h;
            let mut mm = m.as_slice().to_vec();
            mm[k] -= h;
            let lp = global_section_loss(&SheafBundle::new(g.clone(), x.clone(), RestrictionMap::new(2, 3, mp).unwrap()).unwrap());
            let lm = global_section_loss(&SheafBundle::new(g.clone(), x.clone(), RestrictionMap::new(2, 3, mm).unwrap()).unwrap());
            let fd = (lp - lm) / (2.0 * h);
            assert!((fd - gr.d_map[k]).abs() <= 1e-6 * (1.0 + fd.abs()));
        }
    }

    #[test]
    fn loss_is_permutation_invariant() {
        let mut rng = SeededRng::new(8);
        let g = AgentGraph::from_edges(4, [(0, 1), (1, 2), (2, 3)]);
        let m = RestrictionMap::<f64>::random(2, 2, &mut rng);
        let x: Vec<f64> = (0..8).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let perm = [2usize, 0, 3, 1];
        let mut px = vec![0.0; 8];
        for i in 0..4 {
            px[perm[i] * 2..perm[i] * 2 + 2].copy_from_slice(&x[i * 2..i * 2 + 2]);
        }
        let a = global_section_loss(&SheafBundle::new(g.clone(), x, m.clone()).unwrap());
        let b = global_section_loss(&SheafBundle::new(g.relabel(&perm), px, m).unwrap());
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        assert!(SheafConfig::default().validate().is_ok());
        assert!(SheafConfig { node_dim: 2, edge_dim: 3 }.validate().is_err());
        assert!(SheafConfig { node_dim: 0, edge_dim: 0 }.validate().is_err());
    }
}
