//! Communication graphs: construction, random generators, BFS spanning
//! trees, diameters and connectivity.
//!
//! Neighbor lists are kept sorted by node id so every traversal in the crate
//! visits neighbors in ascending order.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use std::io::{BufRead, Write};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use thiserror::Error;

use crate::seed::child_seed;

/// Node identifier, always in `0..n` for the graph it belongs to.
pub type NodeId = usize;

/// Default number of resampling attempts for the Erdős–Rényi generator.
pub const ER_RETRY_BUDGET: usize = 1000;

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("self-loop at node {0}")]
    SelfLoop(NodeId),
    #[error("edge ({0}, {1}) references a node outside 0..{2}")]
    NodeOutOfRange(NodeId, NodeId, usize),
    #[error("graph is not connected: node {0} is unreachable from node {1}")]
    Disconnected(NodeId, NodeId),
    #[error("operation requires an undirected graph")]
    NotUndirected,
    #[error("node {0} is not in the graph (n = {1})")]
    UnknownNode(NodeId, usize),
    #[error("could not generate a connected Erdős–Rényi graph on {n} nodes after {retries} attempts")]
    TopologyGeneration { n: usize, retries: usize },
    #[error("invalid generator argument: {0}")]
    InvalidArgument(String),
    #[error("edge list parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for GraphError {
    fn from(e: std::io::Error) -> Self {
        GraphError::Io(e.to_string())
    }
}

/// A static communication graph. `(i, j)` in the edge set means `i` can send
/// to `j`; undirected graphs store both orientations.
#[derive(Clone, PartialEq, Eq)]
pub struct Graph {
    n: usize,
    directed: bool,
    out_adj: Vec<Vec<NodeId>>,
    in_adj: Vec<Vec<NodeId>>,
}

impl fmt::Debug for Graph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Graph")
            .field("n", &self.n)
            .field("directed", &self.directed)
            .field("edges", &self.edges())
            .finish()
    }
}

impl Graph {
    /// Builds a graph from a list of pairs. For undirected graphs each pair
    /// may be given in either orientation (or both).
    pub fn new(
        n: usize,
        directed: bool,
        edges: impl IntoIterator<Item = (NodeId, NodeId)>,
    ) -> Result<Self, GraphError> {
        let mut set = BTreeSet::new();
        for (i, j) in edges {
            if i >= n || j >= n {
                return Err(GraphError::NodeOutOfRange(i, j, n));
            }
            if i == j {
                return Err(GraphError::SelfLoop(i));
            }
            set.insert((i, j));
            if !directed {
                set.insert((j, i));
            }
        }
        let mut out_adj = vec![Vec::new(); n];
        let mut in_adj = vec![Vec::new(); n];
        // BTreeSet iteration is sorted, so adjacency lists come out sorted.
        for &(i, j) in &set {
            out_adj[i].push(j);
            in_adj[j].push(i);
        }
        for adj in &mut in_adj {
            adj.sort_unstable();
        }
        Ok(Self {
            n,
            directed,
            out_adj,
            in_adj,
        })
    }

    pub fn empty(n: usize, directed: bool) -> Self {
        Self {
            n,
            directed,
            out_adj: vec![Vec::new(); n],
            in_adj: vec![Vec::new(); n],
        }
    }

    pub fn path(n: usize) -> Self {
        Self::new(n, false, (1..n).map(|i| (i - 1, i))).expect("valid path")
    }

    pub fn ring(n: usize) -> Self {
        let edges: Vec<_> = if n < 3 {
            (1..n).map(|i| (i - 1, i)).collect()
        } else {
            (0..n).map(|i| (i, (i + 1) % n)).collect()
        };
        Self::new(n, false, edges).expect("valid ring")
    }

    pub fn directed_cycle(n: usize) -> Self {
        let edges: Vec<_> = if n < 2 {
            Vec::new()
        } else {
            (0..n).map(|i| (i, (i + 1) % n)).collect()
        };
        Self::new(n, true, edges).expect("valid cycle")
    }

    pub fn complete(n: usize) -> Self {
        let edges = (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j)));
        Self::new(n, false, edges).expect("valid complete graph")
    }

    pub fn star(n: usize) -> Self {
        Self::new(n, false, (1..n).map(|i| (0, i))).expect("valid star")
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn is_directed(&self) -> bool {
        self.directed
    }

    /// Out-neighbors in ascending order. For undirected graphs these are all
    /// neighbors.
    pub fn out_neighbors(&self, i: NodeId) -> &[NodeId] {
        &self.out_adj[i]
    }

    pub fn in_neighbors(&self, i: NodeId) -> &[NodeId] {
        &self.in_adj[i]
    }

    pub fn has_edge(&self, i: NodeId, j: NodeId) -> bool {
        i < self.n && self.out_adj[i].binary_search(&j).is_ok()
    }

    /// All ordered pairs, sorted.
    pub fn edges(&self) -> Vec<(NodeId, NodeId)> {
        self.out_adj
            .iter()
            .enumerate()
            .flat_map(|(i, adj)| adj.iter().map(move |&j| (i, j)))
            .collect()
    }

    /// Undirected edges as `(min, max)` pairs; for directed graphs this is the
    /// same as [`Graph::edges`].
    pub fn undirected_edges(&self) -> Vec<(NodeId, NodeId)> {
        if self.directed {
            return self.edges();
        }
        self.edges().into_iter().filter(|&(i, j)| i < j).collect()
    }

    /// Number of edges, counting an undirected edge once.
    pub fn edge_count(&self) -> usize {
        let arcs: usize = self.out_adj.iter().map(Vec::len).sum();
        if self.directed {
            arcs
        } else {
            arcs / 2
        }
    }

    fn bfs_distances(&self, src: NodeId) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.n];
        let mut queue = VecDeque::new();
        dist[src] = Some(0);
        queue.push_back(src);
        while let Some(u) = queue.pop_front() {
            let d = dist[u].unwrap();
            for &v in &self.out_adj[u] {
                if dist[v].is_none() {
                    dist[v] = Some(d + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    /// True iff every ordered pair is joined by a directed path.
    pub fn is_strongly_connected(&self) -> bool {
        self.first_unreachable().is_none()
    }

    /// First `(from, to)` pair (in node order) with no path, if any.
    fn first_unreachable(&self) -> Option<(NodeId, NodeId)> {
        if self.n <= 1 {
            return None;
        }
        let sources: Vec<NodeId> = if self.directed {
            (0..self.n).collect()
        } else {
            vec![0]
        };
        for s in sources {
            let dist = self.bfs_distances(s);
            if let Some(t) = dist.iter().position(Option::is_none) {
                return Some((s, t));
            }
        }
        None
    }

    /// Longest shortest-path length over all ordered pairs.
    pub fn diameter(&self) -> Result<usize, GraphError> {
        if let Some((s, t)) = self.first_unreachable() {
            return Err(GraphError::Disconnected(t, s));
        }
        let mut best = 0;
        for s in 0..self.n {
            let far = self
                .bfs_distances(s)
                .into_iter()
                .map(|d| d.expect("connected"))
                .max()
                .unwrap_or(0);
            best = best.max(far);
        }
        Ok(best)
    }

    /// Undirected, connected and exactly `n - 1` edges.
    pub fn is_tree(&self) -> bool {
        !self.directed && self.edge_count() + 1 == self.n.max(1) && self.is_strongly_connected()
    }

    /// Writes the edge-list text format: a header line `n <count> directed
    /// <0|1>` followed by one `i j` line per edge (undirected edges once).
    pub fn write_edge_list<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "n {} directed {}", self.n, u8::from(self.directed))?;
        for (i, j) in self.undirected_edges() {
            writeln!(w, "{i} {j}")?;
        }
        Ok(())
    }

    pub fn to_edge_list_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_edge_list(&mut buf).expect("write to Vec");
        String::from_utf8(buf).expect("ascii")
    }

    /// Parses the edge-list format. Blank lines and lines starting with `#`
    /// are ignored.
    pub fn read_edge_list<R: BufRead>(r: R) -> Result<Self, GraphError> {
        let mut header: Option<(usize, bool)> = None;
        let mut edges = Vec::new();
        for (idx, line) in r.lines().enumerate() {
            let line_no = idx + 1;
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let toks: Vec<&str> = line.split_whitespace().collect();
            let parse = |s: &str| -> Result<usize, GraphError> {
                s.parse().map_err(|_| GraphError::Parse {
                    line: line_no,
                    msg: format!("expected a non-negative integer, found `{s}`"),
                })
            };
            match header {
                None => {
                    if toks.len() != 4 || toks[0] != "n" || toks[2] != "directed" {
                        return Err(GraphError::Parse {
                            line: line_no,
                            msg: "expected header `n <count> directed <0|1>`".into(),
                        });
                    }
                    let n = parse(toks[1])?;
                    let directed = match toks[3] {
                        "0" => false,
                        "1" => true,
                        other => {
                            return Err(GraphError::Parse {
                                line: line_no,
                                msg: format!("directed flag must be 0 or 1, found `{other}`"),
                            })
                        }
                    };
                    header = Some((n, directed));
                }
                Some(_) => {
                    if toks.len() != 2 {
                        return Err(GraphError::Parse {
                            line: line_no,
                            msg: "expected `i j`".into(),
                        });
                    }
                    edges.push((parse(toks[0])?, parse(toks[1])?));
                }
            }
        }
        let (n, directed) = header.ok_or(GraphError::Parse {
            line: 0,
            msg: "missing header".into(),
        })?;
        Graph::new(n, directed, edges)
    }
}

/// An undirected spanning tree together with the parent map rooted at `root`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpanningTree {
    graph: Graph,
    root: NodeId,
    parent: Vec<Option<NodeId>>,
}

impl SpanningTree {
    /// Wraps a graph that is already a tree, rooting it at `root`.
    pub fn from_tree(graph: Graph, root: NodeId) -> Result<Self, GraphError> {
        if graph.is_directed() {
            return Err(GraphError::NotUndirected);
        }
        if graph.node_count() > 0 && root >= graph.node_count() {
            return Err(GraphError::UnknownNode(root, graph.node_count()));
        }
        let tree = bfs_spanning_tree(&graph, root)?;
        if tree.graph != graph {
            return Err(GraphError::InvalidArgument(format!(
                "graph with {} edges on {} nodes is not a tree",
                graph.edge_count(),
                graph.node_count()
            )));
        }
        Ok(tree)
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn into_graph(self) -> Graph {
        self.graph
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn parent(&self, v: NodeId) -> Option<NodeId> {
        self.parent[v]
    }

    pub fn node_count(&self) -> usize {
        self.graph.node_count()
    }

    /// Tree edges as `(parent, child)` pairs, sorted.
    pub fn edges(&self) -> Vec<(NodeId, NodeId)> {
        let mut e: Vec<_> = self
            .parent
            .iter()
            .enumerate()
            .filter_map(|(v, p)| p.map(|p| (p, v)))
            .collect();
        e.sort_unstable();
        e
    }
}

/// Breadth-first spanning tree; neighbors are explored in ascending id order
/// so the result is a deterministic function of `(g, root)`.
pub fn bfs_spanning_tree(g: &Graph, root: NodeId) -> Result<SpanningTree, GraphError> {
    if g.is_directed() {
        return Err(GraphError::NotUndirected);
    }
    let n = g.node_count();
    if n == 0 {
        return Ok(SpanningTree {
            graph: Graph::empty(0, false),
            root: 0,
            parent: Vec::new(),
        });
    }
    if root >= n {
        return Err(GraphError::UnknownNode(root, n));
    }
    let mut parent = vec![None; n];
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([root]);
    seen[root] = true;
    let mut edges = Vec::with_capacity(n - 1);
    while let Some(u) = queue.pop_front() {
        for &v in g.out_neighbors(u) {
            if !seen[v] {
                seen[v] = true;
                parent[v] = Some(u);
                edges.push((u, v));
                queue.push_back(v);
            }
        }
    }
    if let Some(v) = seen.iter().position(|s| !s) {
        return Err(GraphError::Disconnected(v, root));
    }
    Ok(SpanningTree {
        graph: Graph::new(n, false, edges)?,
        root,
        parent,
    })
}

/// Random labeled tree: node `k` attaches to a uniformly chosen node `< k`.
pub fn generate_random_tree(n: usize, seed: u64) -> SpanningTree {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let edges: Vec<_> = (1..n).map(|k| (rng.random_range(0..k), k)).collect();
    let graph = Graph::new(n, false, edges).expect("attachment edges are valid");
    bfs_spanning_tree(&graph, 0).expect("attachment tree is connected")
}

/// Erdős–Rényi graph with pair probability `min(1, 2 ln n / n)`, resampled
/// until connected.
pub fn generate_erdos_renyi(n: usize, seed: u64) -> Result<Graph, GraphError> {
    generate_erdos_renyi_with_budget(n, seed, ER_RETRY_BUDGET)
}

pub fn generate_erdos_renyi_with_budget(
    n: usize,
    seed: u64,
    retries: usize,
) -> Result<Graph, GraphError> {
    if n < 2 {
        return Err(GraphError::InvalidArgument(format!(
            "Erdős–Rényi generation needs n >= 2, got {n}"
        )));
    }
    let p = erdos_renyi_probability(n);
    for attempt in 0..retries {
        let mut rng = ChaCha8Rng::seed_from_u64(child_seed(seed, attempt as u64));
        let mut edges = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if rng.random::<f64>() < p {
                    edges.push((i, j));
                }
            }
        }
        let g = Graph::new(n, false, edges)?;
        if g.is_strongly_connected() {
            return Ok(g);
        }
    }
    Err(GraphError::TopologyGeneration { n, retries })
}

pub fn erdos_renyi_probability(n: usize) -> f64 {
    let nf = n as f64;
    (2.0 * nf.ln() / nf).min(1.0)
}

/// Random strongly connected digraph: a random Hamiltonian cycle plus each
/// remaining arc independently with probability `extra_p`.
pub fn generate_strongly_connected_digraph(n: usize, extra_p: f64, seed: u64) -> Graph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<NodeId> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let mut edges = Vec::new();
    if n >= 2 {
        for k in 0..n {
            edges.push((order[k], order[(k + 1) % n]));
        }
    }
    for i in 0..n {
        for j in 0..n {
            if i != j && rng.random::<f64>() < extra_p {
                edges.push((i, j));
            }
        }
    }
    Graph::new(n, true, edges).expect("valid digraph")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_self_loops_and_out_of_range() {
        assert_eq!(Graph::new(3, false, [(1, 1)]), Err(GraphError::SelfLoop(1)));
        assert!(matches!(
            Graph::new(3, true, [(0, 3)]),
            Err(GraphError::NodeOutOfRange(0, 3, 3))
        ));
    }

    #[test]
    fn undirected_edges_are_symmetric() {
        let g = Graph::new(3, false, [(2, 0)]).unwrap();
        assert!(g.has_edge(0, 2) && g.has_edge(2, 0));
        assert_eq!(g.edge_count(), 1);
        assert_eq!(g.undirected_edges(), vec![(0, 2)]);
    }

    #[test]
    fn er_two_nodes_is_single_edge() {
        for seed in 0..20 {
            let g = generate_erdos_renyi(2, seed).unwrap();
            assert_eq!(g.edges(), vec![(0, 1), (1, 0)]);
        }
    }

    #[test]
    fn er_is_deterministic_and_connected() {
        let a = generate_erdos_renyi(10, 42).unwrap();
        let b = generate_erdos_renyi(10, 42).unwrap();
        assert_eq!(a, b);
        assert!(a.is_strongly_connected());
        assert!((erdos_renyi_probability(10) - 0.460_517_018_598_809).abs() < 1e-12);
    }

    #[test]
    fn er_rejects_single_node_and_reports_exhausted_budget() {
        assert!(matches!(
            generate_erdos_renyi(1, 0),
            Err(GraphError::InvalidArgument(_))
        ));
        assert_eq!(
            generate_erdos_renyi_with_budget(10, 1, 0),
            Err(GraphError::TopologyGeneration { n: 10, retries: 0 })
        );
    }

    #[test]
    fn random_tree_small_cases() {
        let t = generate_random_tree(1, 3);
        assert_eq!(t.graph().edge_count(), 0);
        for seed in 0..10 {
            let t = generate_random_tree(3, seed);
            assert_eq!(t.graph().edge_count(), 2);
            assert!(t.graph().is_tree());
        }
    }

    #[test]
    fn bfs_on_k3_is_star() {
        let t = bfs_spanning_tree(&Graph::complete(3), 0).unwrap();
        assert_eq!(t.edges(), vec![(0, 1), (0, 2)]);
    }

    #[test]
    fn bfs_on_four_cycle() {
        let g = Graph::new(4, false, [(0, 1), (1, 2), (2, 3), (3, 0)]).unwrap();
        let t = bfs_spanning_tree(&g, 0).unwrap();
        assert_eq!(t.graph().undirected_edges(), vec![(0, 1), (0, 3), (1, 2)]);
        assert_eq!(t.parent(2), Some(1));
        assert_eq!(t.parent(0), None);
    }

    #[test]
    fn bfs_on_tree_returns_same_edges() {
        let tree = generate_random_tree(12, 5);
        for root in [0, 4, 11] {
            let t = bfs_spanning_tree(tree.graph(), root).unwrap();
            assert_eq!(t.graph(), tree.graph());
        }
    }

    #[test]
    fn bfs_rejects_disconnected() {
        let g = Graph::new(4, false, [(0, 1), (2, 3)]).unwrap();
        assert_eq!(
            bfs_spanning_tree(&g, 0).unwrap_err(),
            GraphError::Disconnected(2, 0)
        );
    }

    #[test]
    fn diameters() {
        assert_eq!(Graph::path(7).diameter().unwrap(), 6);
        assert_eq!(Graph::complete(5).diameter().unwrap(), 1);
        assert_eq!(Graph::ring(6).diameter().unwrap(), 3);
        assert_eq!(Graph::directed_cycle(5).diameter().unwrap(), 4);
        assert_eq!(Graph::empty(1, false).diameter().unwrap(), 0);
        assert!(Graph::new(3, false, [(0, 1)]).unwrap().diameter().is_err());
    }

    #[test]
    fn strong_connectivity() {
        assert!(Graph::empty(1, true).is_strongly_connected());
        assert!(!Graph::new(2, true, [(0, 1)]).unwrap().is_strongly_connected());
        assert!(Graph::directed_cycle(3).is_strongly_connected());
    }

    #[test]
    fn edge_list_round_trip() {
        let g = generate_strongly_connected_digraph(6, 0.2, 9);
        let text = g.to_edge_list_string();
        assert!(text.starts_with("n 6 directed 1\n"));
        let back = Graph::read_edge_list(text.as_bytes()).unwrap();
        assert_eq!(back, g);

        let t = Graph::ring(5);
        let back = Graph::read_edge_list(t.to_edge_list_string().as_bytes()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn edge_list_errors_carry_line() {
        let err = Graph::read_edge_list("n 3 directed 0\n0 1\n1 x\n".as_bytes()).unwrap_err();
        assert!(matches!(err, GraphError::Parse { line: 3, .. }));
        let err = Graph::read_edge_list("nodes 3\n".as_bytes()).unwrap_err();
        assert!(matches!(err, GraphError::Parse { line: 1, .. }));
    }

    #[test]
    fn from_tree_rejects_cycle() {
        assert!(SpanningTree::from_tree(Graph::ring(4), 0).is_err());
        assert!(SpanningTree::from_tree(Graph::path(4), 2).is_ok());
    }
}
