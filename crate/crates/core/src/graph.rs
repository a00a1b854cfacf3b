//! Undirected node-labelled graphs with covariates, connected components,
//! BFS rooted forests and the synthetic generators used by the experiments.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap, VecDeque};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Dense node identifier in `0..n`.
pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GraphError {
    #[error("edge ({0}, {1}) references a node outside 0..{2}")]
    NodeOutOfRange(NodeId, NodeId, usize),
    #[error("self-loop on node {0}")]
    SelfLoop(NodeId),
    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(NodeId, NodeId),
    #[error("covariate vector of node {node} has dimension {got}, expected {expected}")]
    CovariateDimension { node: NodeId, got: usize, expected: usize },
    #[error("expected {expected} covariate vectors, got {got}")]
    CovariateCount { expected: usize, got: usize },
    #[error("root {root} does not lie in component {component}")]
    InvalidRoot { root: NodeId, component: usize },
    #[error("expected one root per component ({expected}), got {got}")]
    RootCount { expected: usize, got: usize },
    #[error("cannot add {requested} edges: only {available} node pairs are absent")]
    NotEnoughAbsentPairs { requested: usize, available: usize },
    #[error("alphabet size must be at least 2, got {0}")]
    Alphabet(usize),
}

/// Undirected simple graph over nodes `0..n` with a covariate vector per node.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    adjacency: Vec<Vec<NodeId>>,
    covariates: Vec<Vec<f64>>,
    dim: usize,
    alphabet_size: usize,
}

impl Graph {
    /// Builds a graph with binary labels. Every covariate vector must have the
    /// same length; `covariates` may be empty only when `n == 0` or when all
    /// vectors are empty (d = 0).
    pub fn new(
        n: usize,
        edges: &[(NodeId, NodeId)],
        covariates: Vec<Vec<f64>>,
    ) -> Result<Self, GraphError> {
        if covariates.len() != n {
            return Err(GraphError::CovariateCount { expected: n, got: covariates.len() });
        }
        let dim = covariates.first().map_or(0, Vec::len);
        for (node, c) in covariates.iter().enumerate() {
            if c.len() != dim {
                return Err(GraphError::CovariateDimension { node, got: c.len(), expected: dim });
            }
        }
        let mut adjacency = vec![Vec::new(); n];
        let mut seen = BTreeSet::new();
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(GraphError::NodeOutOfRange(a, b, n));
            }
            if a == b {
                return Err(GraphError::SelfLoop(a));
            }
            if !seen.insert((a.min(b), a.max(b))) {
                return Err(GraphError::DuplicateEdge(a, b));
            }
            adjacency[a].push(b);
            adjacency[b].push(a);
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        Ok(Self { adjacency, covariates, dim, alphabet_size: 2 })
    }

    /// Graph without covariates (d = 0).
    pub fn from_edges(n: usize, edges: &[(NodeId, NodeId)]) -> Result<Self, GraphError> {
        Self::new(n, edges, vec![Vec::new(); n])
    }

    /// Replaces the covariates, keeping the edge set.
    pub fn with_covariates(&self, covariates: Vec<Vec<f64>>) -> Result<Self, GraphError> {
        Self::new(self.node_count(), &self.edges(), covariates)
            .map(|g| g.with_alphabet_unchecked(self.alphabet_size))
    }

    pub fn with_alphabet(self, size: usize) -> Result<Self, GraphError> {
        if size < 2 {
            return Err(GraphError::Alphabet(size));
        }
        Ok(self.with_alphabet_unchecked(size))
    }

    fn with_alphabet_unchecked(mut self, size: usize) -> Self {
        self.alphabet_size = size;
        self
    }

    pub fn node_count(&self) -> usize {
        self.adjacency.len()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Sorted neighbor list of `node`.
    pub fn neighbors(&self, node: NodeId) -> &[NodeId] {
        &self.adjacency[node]
    }

    pub fn has_edge(&self, a: NodeId, b: NodeId) -> bool {
        self.adjacency[a].binary_search(&b).is_ok()
    }

    pub fn covariates(&self, node: NodeId) -> &[f64] {
        &self.covariates[node]
    }

    pub fn covariate_dim(&self) -> usize {
        self.dim
    }

    pub fn alphabet_size(&self) -> usize {
        self.alphabet_size
    }

    /// All edges as `(a, b)` with `a < b`, in lexicographic order.
    pub fn edges(&self) -> Vec<(NodeId, NodeId)> {
        self.adjacency
            .iter()
            .enumerate()
            .flat_map(|(a, nbrs)| nbrs.iter().filter(move |&&b| a < b).map(move |&b| (a, b)))
            .collect()
    }

    pub fn is_forest(&self) -> bool {
        self.edge_count() + connected_components(self).len() == self.node_count()
    }

    /// Disjoint union: nodes of `other` are appended after the nodes of `self`.
    pub fn disjoint_union(&self, other: &Graph) -> Result<Graph, GraphError> {
        let offset = self.node_count();
        let mut edges = self.edges();
        edges.extend(other.edges().into_iter().map(|(a, b)| (a + offset, b + offset)));
        let mut covariates = self.covariates.clone();
        covariates.extend(other.covariates.iter().cloned());
        Graph::new(offset + other.node_count(), &edges, covariates)
    }

    /// Induced subgraph on `nodes` (relabelled densely in the given order).
    pub fn induced_subgraph(&self, nodes: &[NodeId]) -> Graph {
        let mut position = vec![usize::MAX; self.node_count()];
        for (i, &v) in nodes.iter().enumerate() {
            position[v] = i;
        }
        let edges: Vec<_> = self
            .edges()
            .into_iter()
            .filter(|&(a, b)| position[a] != usize::MAX && position[b] != usize::MAX)
            .map(|(a, b)| (position[a], position[b]))
            .collect();
        let covariates = nodes.iter().map(|&v| self.covariates[v].clone()).collect();
        Graph::new(nodes.len(), &edges, covariates)
            .expect("induced subgraph of a valid graph is valid")
            .with_alphabet_unchecked(self.alphabet_size)
    }
}

/// Connected components as ascending node lists, ordered by smallest member.
pub fn connected_components(g: &Graph) -> Vec<Vec<NodeId>> {
    let n = g.node_count();
    let mut seen = vec![false; n];
    let mut components = Vec::new();
    for start in 0..n {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        let mut members = vec![start];
        let mut stack = vec![start];
        while let Some(u) = stack.pop() {
            for &v in g.neighbors(u) {
                if !seen[v] {
                    seen[v] = true;
                    members.push(v);
                    stack.push(v);
                }
            }
        }
        members.sort_unstable();
        components.push(members);
    }
    components
}

/// Component index of every node, consistent with [`connected_components`].
pub fn component_labels(components: &[Vec<NodeId>], n: usize) -> Vec<usize> {
    let mut label = vec![usize::MAX; n];
    for (c, members) in components.iter().enumerate() {
        for &v in members {
            label[v] = c;
        }
    }
    label
}

/// Spanning forest with one root per connected component.
#[derive(Debug, Clone, PartialEq)]
pub struct RootedForest {
    parent: Vec<Option<NodeId>>,
    children: Vec<Vec<NodeId>>,
    depth: Vec<usize>,
    roots: Vec<NodeId>,
    component_of: Vec<usize>,
    /// Nodes of each component in BFS order (root first).
    order: Vec<Vec<NodeId>>,
    dropped_edges: Vec<(NodeId, NodeId)>,
}

impl RootedForest {
    pub fn parent(&self, node: NodeId) -> Option<NodeId> {
        self.parent[node]
    }

    pub fn children(&self, node: NodeId) -> &[NodeId] {
        &self.children[node]
    }

    pub fn depth(&self, node: NodeId) -> usize {
        self.depth[node]
    }

    pub fn is_root(&self, node: NodeId) -> bool {
        self.parent[node].is_none()
    }

    pub fn is_leaf(&self, node: NodeId) -> bool {
        self.children[node].is_empty()
    }

    /// Root of component `c`, indexed like [`connected_components`].
    pub fn root_of_component(&self, c: usize) -> NodeId {
        self.roots[c]
    }

    pub fn roots(&self) -> &[NodeId] {
        &self.roots
    }

    pub fn component_of(&self, node: NodeId) -> usize {
        self.component_of[node]
    }

    pub fn component_count(&self) -> usize {
        self.roots.len()
    }

    /// BFS order of component `c`; reversing it visits children before parents.
    pub fn bfs_order(&self, c: usize) -> &[NodeId] {
        &self.order[c]
    }

    /// Graph edges that are not forest edges, as `(a, b)` with `a < b`.
    pub fn dropped_edges(&self) -> &[(NodeId, NodeId)] {
        &self.dropped_edges
    }

    pub fn max_depth(&self) -> usize {
        self.depth.iter().copied().max().unwrap_or(0)
    }

    pub fn node_count(&self) -> usize {
        self.parent.len()
    }
}

/// BFS spanning tree of every component, rooted at `roots[c]` for the c-th
/// component of [`connected_components`].
///
/// Layers are expanded in ascending node order and neighbors are scanned in
/// ascending order, so every node's parent is the smallest-id neighbor in the
/// previous layer.
pub fn bfs_rooted_forest(g: &Graph, roots: &[NodeId]) -> Result<RootedForest, GraphError> {
    let n = g.node_count();
    let components = connected_components(g);
    if roots.len() != components.len() {
        return Err(GraphError::RootCount { expected: components.len(), got: roots.len() });
    }
    let component_of = component_labels(&components, n);
    for (c, &root) in roots.iter().enumerate() {
        if root >= n || component_of[root] != c {
            return Err(GraphError::InvalidRoot { root, component: c });
        }
    }

    let mut parent = vec![None; n];
    let mut children = vec![Vec::new(); n];
    let mut depth = vec![0; n];
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(components.len());

    for &root in roots {
        visited[root] = true;
        let mut component_order = vec![root];
        let mut layer = vec![root];
        let mut level = 0;
        while !layer.is_empty() {
            level += 1;
            let mut next = Vec::new();
            for &u in &layer {
                for &v in g.neighbors(u) {
                    if !visited[v] {
                        visited[v] = true;
                        parent[v] = Some(u);
                        depth[v] = level;
                        children[u].push(v);
                        next.push(v);
                    }
                }
            }
            next.sort_unstable();
            component_order.extend_from_slice(&next);
            layer = next;
        }
        order.push(component_order);
    }
    for list in &mut children {
        list.sort_unstable();
    }

    let dropped_edges = g
        .edges()
        .into_iter()
        .filter(|&(a, b)| parent[a] != Some(b) && parent[b] != Some(a))
        .collect();

    Ok(RootedForest {
        parent,
        children,
        depth,
        roots: roots.to_vec(),
        component_of,
        order,
        dropped_edges,
    })
}

/// Seeded generator shared by all synthetic constructions.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniformly random labelled tree on `n` nodes, decoded from a uniform Prüfer
/// sequence. No covariates.
pub fn random_tree(n: usize, seed: u64) -> Graph {
    let mut rng = seeded_rng(seed);
    let edges = prufer_tree_edges(n, &mut rng);
    Graph::from_edges(n, &edges).expect("Prüfer decoding yields a simple tree")
}

fn prufer_tree_edges(n: usize, rng: &mut impl Rng) -> Vec<(NodeId, NodeId)> {
    match n {
        0 | 1 => return Vec::new(),
        2 => return vec![(0, 1)],
        _ => {}
    }
    let sequence: Vec<NodeId> = (0..n - 2).map(|_| rng.random_range(0..n)).collect();
    let mut degree = vec![1usize; n];
    for &v in &sequence {
        degree[v] += 1;
    }
    let mut leaves: BinaryHeap<Reverse<NodeId>> =
        (0..n).filter(|&v| degree[v] == 1).map(Reverse).collect();
    let mut edges = Vec::with_capacity(n - 1);
    for &v in &sequence {
        let Reverse(leaf) = leaves.pop().expect("a Prüfer step always has a leaf");
        edges.push((leaf.min(v), leaf.max(v)));
        degree[v] -= 1;
        if degree[v] == 1 {
            leaves.push(Reverse(v));
        }
    }
    let Reverse(a) = leaves.pop().expect("two leaves remain");
    let Reverse(b) = leaves.pop().expect("two leaves remain");
    edges.push((a.min(b), a.max(b)));
    edges
}

/// Adds `k` edges sampled uniformly without replacement from the absent node
/// pairs of `g`.
pub fn add_random_non_tree_edges(g: &Graph, k: usize, seed: u64) -> Result<Graph, GraphError> {
    let n = g.node_count();
    let absent: Vec<(NodeId, NodeId)> = (0..n)
        .flat_map(|a| (a + 1..n).map(move |b| (a, b)))
        .filter(|&(a, b)| !g.has_edge(a, b))
        .collect();
    if k > absent.len() {
        return Err(GraphError::NotEnoughAbsentPairs { requested: k, available: absent.len() });
    }
    if k == 0 {
        return Ok(g.clone());
    }
    let mut rng = seeded_rng(seed);
    let mut edges = g.edges();
    edges.extend(index::sample(&mut rng, absent.len(), k).into_iter().map(|i| absent[i]));
    Graph::new(n, &edges, (0..n).map(|v| g.covariates(v).to_vec()).collect())
        .map(|out| out.with_alphabet_unchecked(g.alphabet_size()))
}

/// `n` i.i.d. Bernoulli(1/2) covariate vectors of dimension `d`.
pub fn random_binary_covariates(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = seeded_rng(seed);
    (0..n)
        .map(|_| (0..d).map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 }).collect())
        .collect()
}

/// Depth of the BFS layering from `root` for every node in its component
/// (`usize::MAX` elsewhere).
pub fn bfs_depths(g: &Graph, root: NodeId) -> Vec<usize> {
    let mut depth = vec![usize::MAX; g.node_count()];
    depth[root] = 0;
    let mut queue = VecDeque::from([root]);
    while let Some(u) = queue.pop_front() {
        for &v in g.neighbors(u) {
            if depth[v] == usize::MAX {
                depth[v] = depth[u] + 1;
                queue.push_back(v);
            }
        }
    }
    depth
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// The 8-node example tree: X1..X8 mapped to 0..7.
    fn example_tree() -> Graph {
        Graph::from_edges(8, &[(0, 1), (0, 2), (0, 3), (1, 4), (2, 5), (3, 6), (3, 7)]).unwrap()
    }

    #[test]
    fn components_of_small_graphs() {
        assert!(connected_components(&Graph::from_edges(0, &[]).unwrap()).is_empty());
        let g = Graph::from_edges(3, &[(0, 1)]).unwrap();
        assert_eq!(connected_components(&g), vec![vec![0, 1], vec![2]]);
        assert_eq!(connected_components(&example_tree()), vec![(0..8).collect::<Vec<_>>()]);
    }

    #[test]
    fn rejects_malformed_edges() {
        assert_eq!(Graph::from_edges(2, &[(0, 0)]), Err(GraphError::SelfLoop(0)));
        assert_eq!(
            Graph::from_edges(2, &[(0, 1), (1, 0)]),
            Err(GraphError::DuplicateEdge(1, 0))
        );
        assert!(matches!(Graph::from_edges(2, &[(0, 2)]), Err(GraphError::NodeOutOfRange(..))));
        assert!(matches!(
            Graph::new(2, &[], vec![vec![1.0], vec![]]),
            Err(GraphError::CovariateDimension { node: 1, .. })
        ));
    }

    #[test]
    fn bfs_on_path_keeps_tree() {
        let g = Graph::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
        let f = bfs_rooted_forest(&g, &[0]).unwrap();
        assert_eq!(f.parent(1), Some(0));
        assert_eq!(f.parent(2), Some(1));
        assert!(f.dropped_edges().is_empty());
    }

    #[test]
    fn bfs_on_triangle_drops_same_layer_edge() {
        let g = Graph::from_edges(3, &[(0, 1), (1, 2), (0, 2)]).unwrap();
        let f = bfs_rooted_forest(&g, &[0]).unwrap();
        assert_eq!(f.parent(1), Some(0));
        assert_eq!(f.parent(2), Some(0));
        assert_eq!(f.dropped_edges(), &[(1, 2)]);
    }

    #[test]
    fn bfs_on_example_tree() {
        let f = bfs_rooted_forest(&example_tree(), &[0]).unwrap();
        assert_eq!(f.children(0), &[1, 2, 3]);
        assert_eq!(f.children(3), &[6, 7]);
        assert_eq!(f.bfs_order(0), &[0, 1, 2, 3, 4, 5, 6, 7]);
    }

    #[test]
    fn bfs_parent_is_smallest_previous_layer_neighbor() {
        // 0 - {3, 1}; both 1 and 3 reach 2.
        let g = Graph::from_edges(4, &[(0, 3), (0, 1), (3, 2), (1, 2)]).unwrap();
        let f = bfs_rooted_forest(&g, &[0]).unwrap();
        assert_eq!(f.parent(2), Some(1));
        assert_eq!(f.dropped_edges(), &[(2, 3)]);
    }

    #[test]
    fn bfs_rejects_foreign_root() {
        let g = Graph::from_edges(3, &[(0, 1)]).unwrap();
        assert_eq!(
            bfs_rooted_forest(&g, &[2, 0]),
            Err(GraphError::InvalidRoot { root: 2, component: 0 })
        );
        assert!(matches!(bfs_rooted_forest(&g, &[0]), Err(GraphError::RootCount { .. })));
    }

    #[test]
    fn tiny_random_trees() {
        assert_eq!(random_tree(1, 3).edge_count(), 0);
        assert_eq!(random_tree(2, 3).edges(), vec![(0, 1)]);
        let t = random_tree(50, 7);
        assert_eq!(t.edge_count(), 49);
        assert!(t.is_forest());
        assert_eq!(connected_components(&t).len(), 1);
        assert_eq!(random_tree(50, 7), t);
    }

    #[test]
    fn non_tree_edges() {
        let path = Graph::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
        assert_eq!(add_random_non_tree_edges(&path, 0, 1).unwrap(), path);
        assert_eq!(add_random_non_tree_edges(&path, 1, 1).unwrap().edges(), vec![(0, 1), (0, 2), (1, 2)]);
        assert!(matches!(
            add_random_non_tree_edges(&path, 2, 1),
            Err(GraphError::NotEnoughAbsentPairs { requested: 2, available: 1 })
        ));
        let t = random_tree(50, 11);
        assert_eq!(add_random_non_tree_edges(&t, 10, 5).unwrap().edge_count(), 59);
    }

    proptest! {
        #[test]
        fn random_trees_are_spanning_trees(n in 1usize..120, seed in any::<u64>()) {
            let t = random_tree(n, seed);
            prop_assert_eq!(t.edge_count(), n - 1);
            prop_assert_eq!(connected_components(&t).len(), 1);
            for u in 0..n {
                for &v in t.neighbors(u) {
                    prop_assert!(t.neighbors(v).contains(&u));
                    prop_assert_ne!(u, v);
                }
            }
        }

        #[test]
        fn bfs_layering_is_consistent(n in 2usize..60, extra in 0usize..15, seed in any::<u64>()) {
            let t = random_tree(n, seed);
            let max_extra = n * (n - 1) / 2 - (n - 1);
            let g = add_random_non_tree_edges(&t, extra.min(max_extra), seed ^ 1).unwrap();
            let f = bfs_rooted_forest(&g, &[0]).unwrap();
            let depth = bfs_depths(&g, 0);
            for v in 0..n {
                prop_assert_eq!(f.depth(v), depth[v]);
                if let Some(p) = f.parent(v) {
                    prop_assert_eq!(f.depth(p) + 1, f.depth(v));
                    prop_assert!(g.has_edge(p, v));
                }
            }
            prop_assert_eq!(f.dropped_edges().len() + n - 1, g.edge_count());
            for &(a, b) in f.dropped_edges() {
                prop_assert!(f.depth(a).abs_diff(f.depth(b)) <= 1);
            }
        }
    }
}
