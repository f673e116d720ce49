//! Leader–follower communication graphs.
//!
//! Node 0 is the leader and nodes `1..=N` are followers. The adjacency entry
//! `a_ij > 0` means node `i` receives information from node `j` (a directed
//! edge `j -> i`). The Laplacian is `L = D - A` and its lower-right `N x N`
//! block `H` governs the distributed observer. The functions here bound
//! `min Re(lambda(H))` from the weight bounds alone and turn such a bound into
//! a coupling gain `mu`.

use std::collections::VecDeque;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Default multiplicative safety factor applied to gain thresholds.
pub const DEFAULT_SAFETY: f64 = 1.05;

/// Weighted leader–follower digraph with weight bounds `eps1 <= |L_ij| <= eps2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GraphJson", into = "GraphJson")]
pub struct GraphSpec {
    n_followers: usize,
    adjacency: DMatrix<f64>,
    eps1: f64,
    eps2: f64,
}

/// On-disk form: `edges` lists `[i, j, w]` with `a_ij = w`.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct GraphJson {
    n_followers: usize,
    edges: Vec<(usize, usize, f64)>,
    eps1: f64,
    eps2: f64,
}

impl TryFrom<GraphJson> for GraphSpec {
    type Error = Error;

    fn try_from(g: GraphJson) -> Result<Self> {
        GraphSpec::from_edges(g.n_followers, &g.edges, g.eps1, g.eps2)
    }
}

impl From<GraphSpec> for GraphJson {
    fn from(g: GraphSpec) -> Self {
        let mut edges = Vec::new();
        for i in 0..g.adjacency.nrows() {
            for j in 0..g.adjacency.ncols() {
                let w = g.adjacency[(i, j)];
                if w != 0.0 {
                    edges.push((i, j, w));
                }
            }
        }
        GraphJson { n_followers: g.n_followers, edges, eps1: g.eps1, eps2: g.eps2 }
    }
}

impl GraphSpec {
    /// Builds and validates a graph from its `(N+1) x (N+1)` adjacency matrix.
    pub fn new(adjacency: DMatrix<f64>, eps1: f64, eps2: f64) -> Result<Self> {
        if adjacency.nrows() != adjacency.ncols() || adjacency.nrows() < 2 {
            return Err(Error::InvalidGraph(format!(
                "adjacency must be square with at least 2 nodes, got {}x{}",
                adjacency.nrows(),
                adjacency.ncols()
            )));
        }
        let g = Self { n_followers: adjacency.nrows() - 1, adjacency, eps1, eps2 };
        g.validate()?;
        Ok(g)
    }

    /// Builds a graph from `(i, j, w)` triples, each setting `a_ij = w`.
    pub fn from_edges(n_followers: usize, edges: &[(usize, usize, f64)], eps1: f64, eps2: f64) -> Result<Self> {
        let n = n_followers + 1;
        let mut a = DMatrix::zeros(n, n);
        for &(i, j, w) in edges {
            if i >= n || j >= n {
                return Err(Error::InvalidGraph(format!("edge ({i}, {j}) outside {n} nodes")));
            }
            if a[(i, j)] != 0.0 {
                return Err(Error::InvalidGraph(format!("duplicate edge ({i}, {j})")));
            }
            a[(i, j)] = w;
        }
        Self::new(a, eps1, eps2)
    }

    /// Follower-indexed Laplacian rows (as printed for `L`), with `eps1`,
    /// `eps2` supplied explicitly.
    pub fn from_laplacian(l: &DMatrix<f64>, eps1: f64, eps2: f64) -> Result<Self> {
        if l.nrows() != l.ncols() {
            return Err(Error::InvalidGraph("Laplacian must be square".into()));
        }
        let a = DMatrix::from_fn(l.nrows(), l.ncols(), |i, j| if i == j { 0.0 } else { -l[(i, j)] });
        let g = Self::new(a, eps1, eps2)?;
        let rebuilt = build_laplacian(&g)?.full;
        if (rebuilt - l).abs().max() > 1e-12 {
            return Err(Error::InvalidGraph("Laplacian rows do not sum to zero".into()));
        }
        Ok(g)
    }

    pub fn n_followers(&self) -> usize {
        self.n_followers
    }

    pub fn adjacency(&self) -> &DMatrix<f64> {
        &self.adjacency
    }

    pub fn eps1(&self) -> f64 {
        self.eps1
    }

    pub fn eps2(&self) -> f64 {
        self.eps2
    }

    /// Checks the structural invariants and the weight bounds. Every nonzero
    /// Laplacian entry, the in-degree on the diagonal included, must lie in
    /// `[eps1, eps2]` in magnitude.
    pub fn validate(&self) -> Result<()> {
        let (e1, e2) = (self.eps1, self.eps2);
        if !(e1 > 0.0 && e2 >= e1 && e2.is_finite()) {
            return Err(Error::InvalidInput(format!("weight bounds need 0 < eps1 <= eps2, got ({e1}, {e2})")));
        }
        let a = &self.adjacency;
        let n = a.nrows();
        let slack = 1e-12 * e2;
        let in_bounds = |v: f64| v >= e1 - slack && v <= e2 + slack;
        for i in 0..n {
            if a[(i, i)] != 0.0 {
                return Err(Error::InvalidGraph(format!("self-loop at node {i}")));
            }
            let mut degree = 0.0;
            for j in 0..n {
                let w = a[(i, j)];
                if !w.is_finite() || w < 0.0 {
                    return Err(Error::InvalidGraph(format!("weight a[{i}][{j}] = {w} is not a nonnegative number")));
                }
                if w == 0.0 {
                    continue;
                }
                if i == 0 {
                    return Err(Error::InvalidGraph(format!("leader receives an edge from node {j}")));
                }
                if !in_bounds(w) {
                    return Err(Error::InvalidInput(format!("weight a[{i}][{j}] = {w} outside [{e1}, {e2}]")));
                }
                degree += w;
            }
            if degree != 0.0 && !in_bounds(degree) {
                return Err(Error::InvalidInput(format!("in-degree {degree} of node {i} outside [{e1}, {e2}]")));
            }
        }
        Ok(())
    }
}

/// Laplacian of a leader–follower graph together with its partition.
#[derive(Debug, Clone, PartialEq)]
pub struct LaplacianParts {
    /// `(N+1) x (N+1)` Laplacian `L = D - A`.
    pub full: DMatrix<f64>,
    /// `N x N` follower block `H`.
    pub h: DMatrix<f64>,
    /// Leader in-weights `[a_10, ..., a_N0]`.
    pub leader_column: Vec<f64>,
}

pub fn build_laplacian(graph: &GraphSpec) -> Result<LaplacianParts> {
    graph.validate()?;
    let a = graph.adjacency();
    let n = a.nrows();
    let mut full = -a.clone();
    for i in 0..n {
        full[(i, i)] = a.row(i).sum();
    }
    let h = full.view((1, 1), (n - 1, n - 1)).into_owned();
    let leader_column = (1..n).map(|i| a[(i, 0)]).collect();
    Ok(LaplacianParts { full, h, leader_column })
}

/// Whether every follower is reachable from the leader along directed edges.
pub fn has_leader_rooted_spanning_tree(graph: &GraphSpec) -> bool {
    let a = graph.adjacency();
    let n = a.nrows();
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    while let Some(j) = queue.pop_front() {
        for i in 0..n {
            if !seen[i] && a[(i, j)] > 0.0 {
                seen[i] = true;
                queue.push_back(i);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

fn check_bounds(eps1: f64, eps2: f64) -> Result<()> {
    if !(eps1 > 0.0 && eps2 >= eps1 && eps2.is_finite()) {
        return Err(Error::InvalidInput(format!("need 0 < eps1 <= eps2, got ({eps1}, {eps2})")));
    }
    Ok(())
}

/// `eps1^N / (N (2 eps2)^(N-1))`.
pub fn lambda_min_lower_bound(eps1: f64, eps2: f64, n: usize) -> Result<f64> {
    check_bounds(eps1, eps2)?;
    if n == 0 {
        return Err(Error::InvalidInput("graph needs at least one follower".into()));
    }
    let nf = n as f64;
    // Computed in log space so large N neither overflows nor underflows early.
    let log = nf * eps1.ln() - nf.ln() - (nf - 1.0) * (2.0 * eps2).ln();
    Ok(log.exp())
}

/// Falling factorial `n! / (n - m)!`.
fn arrangements(n: usize, m: usize) -> f64 {
    ((n - m + 1)..=n).map(|v| v as f64).product()
}

/// `1 / varpi_N` from the combinatorial estimate, valid for `N >= 3`.
pub fn lambda_min_lower_bound_combinatorial(eps1: f64, eps2: f64, n: usize) -> Result<f64> {
    check_bounds(eps1, eps2)?;
    if n < 3 {
        return Err(Error::InvalidInput(format!("combinatorial bound needs N >= 3, got {n}")));
    }
    let r = 4.0 * eps2 / eps1;
    let lead = arrangements(n - 1, n - 2) * r.powi(n as i32 - 2) * (2.0 * eps1 + eps2) / (eps1 * eps1);
    let sum: f64 = (0..=n - 3).map(|k| arrangements(n - 1, k) * r.powi(k as i32)).sum();
    Ok(1.0 / (lead + 2.0 / eps1 * sum))
}

/// Unit-weight graph families with closed-form bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpecialGraph {
    Complete,
    UndirectedPath,
    Star,
}

impl std::str::FromStr for SpecialGraph {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "complete" => Ok(Self::Complete),
            "undirected_path" | "path" => Ok(Self::UndirectedPath),
            "star" => Ok(Self::Star),
            other => Err(Error::InvalidInput(format!("unknown graph kind '{other}'"))),
        }
    }
}

pub fn special_graph_bound(kind: SpecialGraph, n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidInput("graph needs at least one follower".into()));
    }
    let nf = n as f64;
    Ok(match kind {
        SpecialGraph::Complete => nf.powi(n as i32 - 2) / (nf + 1.0).powi(n as i32 - 1),
        SpecialGraph::UndirectedPath => {
            let (mut prev, mut cur) = (1.0, 1.0);
            if n >= 2 {
                cur = 3.0;
                for _ in 3..=n {
                    let next = 3.0 * cur - prev;
                    prev = cur;
                    cur = next;
                }
            }
            1.0 / cur
        }
        SpecialGraph::Star => 1.0 / ((nf + 1.0) * 2f64.powi(n as i32 - 2)),
    })
}

/// Coupling gain `safety * max(max Re lambda_S, 0) / bound`, never below
/// `safety`.
pub fn coupling_gain_mu(max_re_lambda_s: f64, lambda_bound: f64, safety: f64) -> Result<f64> {
    if !(lambda_bound > 0.0) {
        return Err(Error::InvalidInput(format!("lambda bound must be positive, got {lambda_bound}")));
    }
    if !(safety >= 1.0) {
        return Err(Error::InvalidInput(format!("safety factor must be >= 1, got {safety}")));
    }
    Ok((safety * max_re_lambda_s.max(0.0) / lambda_bound).max(safety))
}

/// Gain for an exosystem known only through `|S_ij| <= epsilon`: strictly
/// above `q epsilon / bound` by the default safety factor, never below it.
pub fn coupling_gain_mu_unknown_s(epsilon: f64, q: usize, lambda_bound: f64) -> Result<f64> {
    if !(epsilon >= 0.0) || q == 0 {
        return Err(Error::InvalidInput(format!("need epsilon >= 0 and q >= 1, got ({epsilon}, {q})")));
    }
    coupling_gain_mu(q as f64 * epsilon, lambda_bound, DEFAULT_SAFETY)
}

/// Threshold `max_i (S_ii + sum_{j != i} |S_ij|) / eps_leader` for graphs in
/// which the leader reaches every follower with weight above `eps_leader`.
/// The gain must exceed the returned value.
pub fn coupling_gain_mu_diag_dominant(s: &DMatrix<f64>, eps_leader: f64) -> Result<f64> {
    if !(eps_leader > 0.0) {
        return Err(Error::InvalidInput(format!("leader weight bound must be positive, got {eps_leader}")));
    }
    if s.nrows() != s.ncols() {
        return Err(Error::Dimension("S must be square".into()));
    }
    let worst = (0..s.nrows())
        .map(|i| s[(i, i)] + (0..s.ncols()).filter(|&j| j != i).map(|j| s[(i, j)].abs()).sum::<f64>())
        .fold(0.0f64, f64::max);
    Ok(worst / eps_leader)
}

/// All bounds that apply to a graph and the gain derived from the tightest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub n_followers: usize,
    pub eps1: f64,
    pub eps2: f64,
    pub spanning_tree: bool,
    pub direct: f64,
    pub combinatorial: Option<f64>,
    pub selected: f64,
    pub max_re_lambda_s: f64,
    pub safety: f64,
    pub mu: f64,
    /// Dense eigen-solve of `H`, when requested.
    pub true_min_re_lambda_h: Option<f64>,
}

/// Evaluates every applicable bound for `graph` and the resulting `mu`.
pub fn bound_report(graph: &GraphSpec, max_re_lambda_s: f64, safety: f64, with_oracle: bool) -> Result<BoundReport> {
    let n = graph.n_followers();
    let direct = lambda_min_lower_bound(graph.eps1(), graph.eps2(), n)?;
    let combinatorial =
        if n >= 3 { Some(lambda_min_lower_bound_combinatorial(graph.eps1(), graph.eps2(), n)?) } else { None };
    let selected = combinatorial.map_or(direct, |c| c.max(direct));
    let mu = coupling_gain_mu(max_re_lambda_s, selected, safety)?;
    let true_min_re_lambda_h = if with_oracle { Some(linalg::min_real_eig(&build_laplacian(graph)?.h)) } else { None };
    Ok(BoundReport {
        n_followers: n,
        eps1: graph.eps1(),
        eps2: graph.eps2(),
        spanning_tree: has_leader_rooted_spanning_tree(graph),
        direct,
        combinatorial,
        selected,
        max_re_lambda_s,
        safety,
        mu,
        true_min_re_lambda_h,
    })
}
