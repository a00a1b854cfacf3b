//! Shared-parameter pairwise Markov random field over binary labels.
//!
//! The joint density is
//! `P(x) ∝ exp(Σ_i θ1·f1(x_i, c_i) + Σ_{ij∈E} θ2·f2(x_i, x_j, c_i, c_j))`.
//! Conditionals are computed exactly by variable elimination in log space
//! over the connected piece of unobserved nodes that contains the query,
//! eliminating with a min-fill ordering. The partition function is only ever
//! materialised by [`PairwiseModel::brute_force_joint`], which exists as a
//! verification oracle.

use std::collections::BTreeSet;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::graph::{seeded_rng, Graph, NodeId};

/// Node label. The MRF is binary; the policy layer is alphabet-generic.
pub type Label = u8;

/// Largest graph [`PairwiseModel::brute_force_joint`] will enumerate.
pub const BRUTE_FORCE_MAX_NODES: usize = 25;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MrfError {
    #[error("theta1 has length {got}, expected {expected} for d = {d}")]
    Theta1Length { got: usize, expected: usize, d: usize },
    #[error("theta2 has length {got}, expected {expected} for d = {d}")]
    Theta2Length { got: usize, expected: usize, d: usize },
    #[error("node {0} is out of range")]
    NodeOutOfRange(NodeId),
    #[error("label {0} is outside the alphabet")]
    InvalidLabel(Label),
    #[error("node {0} is already observed")]
    NodeObserved(NodeId),
    #[error("evidence assigns node {node} both {first} and {second}")]
    ConflictingEvidence { node: NodeId, first: Label, second: Label },
    #[error("evidence has zero or non-finite probability")]
    DegenerateEvidence,
    #[error("assignment has length {got}, expected {expected}")]
    AssignmentLength { got: usize, expected: usize },
    #[error("brute-force enumeration is limited to {max} nodes, graph has {n}")]
    TooLarge { n: usize, max: usize },
    #[error("non-finite model parameter")]
    NonFinite,
}

/// Observed labels, one optional entry per node.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Evidence {
    labels: Vec<Option<Label>>,
}

impl Evidence {
    pub fn empty(n: usize) -> Self {
        Self { labels: vec![None; n] }
    }

    /// Evidence from a full assignment.
    pub fn full(assignment: &[Label]) -> Self {
        Self { labels: assignment.iter().map(|&l| Some(l)).collect() }
    }

    pub fn from_pairs(n: usize, pairs: &[(NodeId, Label)]) -> Result<Self, MrfError> {
        let mut ev = Self::empty(n);
        for &(node, label) in pairs {
            ev.insert(node, label)?;
        }
        Ok(ev)
    }

    /// Records an observation. Re-asserting the same label is a no-op; a
    /// different label for an observed node is a contradiction.
    pub fn insert(&mut self, node: NodeId, label: Label) -> Result<(), MrfError> {
        let slot = self.labels.get_mut(node).ok_or(MrfError::NodeOutOfRange(node))?;
        match *slot {
            Some(first) if first != label => {
                Err(MrfError::ConflictingEvidence { node, first, second: label })
            }
            _ => {
                *slot = Some(label);
                Ok(())
            }
        }
    }

    pub fn remove(&mut self, node: NodeId) {
        self.labels[node] = None;
    }

    pub fn with(mut self, node: NodeId, label: Label) -> Result<Self, MrfError> {
        self.insert(node, label)?;
        Ok(self)
    }

    pub fn get(&self, node: NodeId) -> Option<Label> {
        self.labels.get(node).copied().flatten()
    }

    pub fn is_observed(&self, node: NodeId) -> bool {
        self.get(node).is_some()
    }

    pub fn node_count(&self) -> usize {
        self.labels.len()
    }

    pub fn observed_count(&self) -> usize {
        self.labels.iter().filter(|l| l.is_some()).count()
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, Label)> + '_ {
        self.labels.iter().enumerate().filter_map(|(i, l)| l.map(|l| (i, l)))
    }

    pub fn as_slice(&self) -> &[Option<Label>] {
        &self.labels
    }
}

/// Anything that can answer `P(X_node = v | evidence)` for every label `v`.
///
/// Implementations count every conditional-probability value they hand out,
/// so the number of oracle calls made by an algorithm can be asserted.
pub trait LabelOracle: Sync {
    fn node_count(&self) -> usize;

    fn alphabet_size(&self) -> usize;

    /// Distribution of `node`'s label given `evidence`; `node` must be
    /// unobserved. Counts as `alphabet_size()` oracle calls.
    fn posterior(&self, node: NodeId, evidence: &Evidence) -> Result<Vec<f64>, MrfError>;

    fn oracle_calls(&self) -> u64;
}

/// Unary feature map `(1, x, c_1, x c_1, ..., c_d, x c_d)`.
pub fn f1(x: Label, c: &[f64]) -> Vec<f64> {
    let x = f64::from(x);
    let mut out = Vec::with_capacity(2 + 2 * c.len());
    out.extend([1.0, x]);
    for &ck in c {
        out.extend([ck, x * ck]);
    }
    out
}

/// Symmetric pairwise feature block for one covariate coordinate.
fn pair_block(a: f64, b: f64, c: f64, d: f64) -> [f64; 5] {
    [
        c + d,
        a * b * (c + d),
        a * (1.0 - b) * c + (1.0 - a) * b * d,
        (1.0 - a) * b * c + a * (1.0 - b) * d,
        (1.0 - a) * (1.0 - b) * (c + d),
    ]
}

/// Pairwise feature map: four label indicators followed by one five-term
/// block per covariate coordinate. Symmetric under swapping the endpoints.
pub fn f2(xi: Label, xj: Label, ci: &[f64], cj: &[f64]) -> Vec<f64> {
    let (a, b) = (f64::from(xi), f64::from(xj));
    let mut out = Vec::with_capacity(4 + 5 * ci.len());
    out.extend([1.0, a * b, (1.0 - a) * b + a * (1.0 - b), (1.0 - a) * (1.0 - b)]);
    for (&c, &d) in ci.iter().zip(cj) {
        out.extend(pair_block(a, b, c, d));
    }
    out
}

pub fn theta1_len(d: usize) -> usize {
    2 + 2 * d
}

pub fn theta2_len(d: usize) -> usize {
    4 + 5 * d
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Normalises log-weights into probabilities with max subtraction.
fn normalize_log(weights: &[f64]) -> Result<Vec<f64>, MrfError> {
    let max = weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(MrfError::DegenerateEvidence);
    }
    let exp: Vec<f64> = weights.iter().map(|w| (w - max).exp()).collect();
    let total: f64 = exp.iter().sum();
    Ok(exp.into_iter().map(|e| e / total).collect())
}

/// Pairwise MRF with shared parameters bound to a graph.
#[derive(Debug)]
pub struct PairwiseModel {
    graph: Graph,
    theta1: Vec<f64>,
    theta2: Vec<f64>,
    /// `unary[i][x] = θ1·f1(x, c_i)`
    unary: Vec<[f64; 2]>,
    /// `pair[i][k][xi][xj]` for the k-th neighbor `j` of `i`
    pair: Vec<Vec<[[f64; 2]; 2]>>,
    calls: AtomicU64,
}

impl Clone for PairwiseModel {
    fn clone(&self) -> Self {
        Self {
            graph: self.graph.clone(),
            theta1: self.theta1.clone(),
            theta2: self.theta2.clone(),
            unary: self.unary.clone(),
            pair: self.pair.clone(),
            calls: AtomicU64::new(self.oracle_calls()),
        }
    }
}

impl PartialEq for PairwiseModel {
    fn eq(&self, other: &Self) -> bool {
        self.graph == other.graph && self.theta1 == other.theta1 && self.theta2 == other.theta2
    }
}

impl PairwiseModel {
    pub fn new(graph: Graph, theta1: Vec<f64>, theta2: Vec<f64>) -> Result<Self, MrfError> {
        let d = graph.covariate_dim();
        if theta1.len() != theta1_len(d) {
            return Err(MrfError::Theta1Length { got: theta1.len(), expected: theta1_len(d), d });
        }
        if theta2.len() != theta2_len(d) {
            return Err(MrfError::Theta2Length { got: theta2.len(), expected: theta2_len(d), d });
        }
        if theta1.iter().chain(&theta2).any(|t| !t.is_finite()) {
            return Err(MrfError::NonFinite);
        }
        let n = graph.node_count();
        let unary = (0..n)
            .map(|i| {
                let c = graph.covariates(i);
                [dot(&theta1, &f1(0, c)), dot(&theta1, &f1(1, c))]
            })
            .collect();
        let pair = (0..n)
            .map(|i| {
                graph
                    .neighbors(i)
                    .iter()
                    .map(|&j| {
                        let (ci, cj) = (graph.covariates(i), graph.covariates(j));
                        let mut table = [[0.0; 2]; 2];
                        for (xi, row) in table.iter_mut().enumerate() {
                            for (xj, cell) in row.iter_mut().enumerate() {
                                *cell = dot(&theta2, &f2(xi as Label, xj as Label, ci, cj));
                            }
                        }
                        table
                    })
                    .collect()
            })
            .collect();
        Ok(Self { graph, theta1, theta2, unary, pair, calls: AtomicU64::new(0) })
    }

    /// Model with zero parameters: every labelling is equally likely.
    pub fn uniform(graph: Graph) -> Self {
        let d = graph.covariate_dim();
        Self::new(graph, vec![0.0; theta1_len(d)], vec![0.0; theta2_len(d)])
            .expect("zero parameters have the right shape")
    }

    /// Parameters drawn i.i.d. from a standard normal.
    pub fn random(graph: Graph, seed: u64) -> Self {
        let d = graph.covariate_dim();
        let mut rng = seeded_rng(seed);
        let mut draw = |len: usize| -> Vec<f64> {
            (0..len).map(|_| StandardNormal.sample(&mut rng)).collect()
        };
        let theta1 = draw(theta1_len(d));
        let theta2 = draw(theta2_len(d));
        Self::new(graph, theta1, theta2).expect("drawn parameters have the right shape")
    }

    /// Same parameters bound to another graph with the same covariate dimension.
    pub fn rebind(&self, graph: Graph) -> Result<Self, MrfError> {
        Self::new(graph, self.theta1.clone(), self.theta2.clone())
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn theta1(&self) -> &[f64] {
        &self.theta1
    }

    pub fn theta2(&self) -> &[f64] {
        &self.theta2
    }

    pub fn node_count(&self) -> usize {
        self.graph.node_count()
    }

    /// `θ1·f1(x, c_node)`.
    pub fn unary_log_potential(&self, node: NodeId, x: Label) -> f64 {
        self.unary[node][usize::from(x)]
    }

    /// `θ2·f2(x_node, x_nbr, …)` for the `k`-th neighbor of `node`.
    fn pair_log_potential(&self, node: NodeId, k: usize, x_node: Label, x_nbr: Label) -> f64 {
        self.pair[node][k][usize::from(x_node)][usize::from(x_nbr)]
    }

    /// Exponent of the unnormalised density at a full assignment.
    pub fn log_unnormalized(&self, x: &[Label]) -> Result<f64, MrfError> {
        let n = self.node_count();
        if x.len() != n {
            return Err(MrfError::AssignmentLength { got: x.len(), expected: n });
        }
        if let Some(&bad) = x.iter().find(|&&l| l > 1) {
            return Err(MrfError::InvalidLabel(bad));
        }
        Ok(self.log_unnormalized_unchecked(|i| x[i]))
    }

    fn log_unnormalized_unchecked(&self, label: impl Fn(NodeId) -> Label) -> f64 {
        let mut total = 0.0;
        for i in 0..self.node_count() {
            let xi = label(i);
            total += self.unary_log_potential(i, xi);
            for (k, &j) in self.graph.neighbors(i).iter().enumerate() {
                if i < j {
                    total += self.pair_log_potential(i, k, xi, label(j));
                }
            }
        }
        total
    }

    /// Probability of every full assignment, indexed by bitmask (bit `i` is
    /// the label of node `i`). Computes the partition function explicitly.
    pub fn brute_force_joint(&self) -> Result<Vec<f64>, MrfError> {
        let n = self.node_count();
        if n > BRUTE_FORCE_MAX_NODES {
            return Err(MrfError::TooLarge { n, max: BRUTE_FORCE_MAX_NODES });
        }
        let logs: Vec<f64> = (0..1usize << n)
            .map(|mask| self.log_unnormalized_unchecked(|i| ((mask >> i) & 1) as Label))
            .collect();
        normalize_log(&logs)
    }

    pub fn oracle_calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn reset_oracle_calls(&self) {
        self.calls.store(0, Ordering::Relaxed);
    }

    fn validate_query(&self, node: NodeId, evidence: &Evidence) -> Result<(), MrfError> {
        if node >= self.node_count() {
            return Err(MrfError::NodeOutOfRange(node));
        }
        if evidence.node_count() != self.node_count() {
            return Err(MrfError::AssignmentLength {
                got: evidence.node_count(),
                expected: self.node_count(),
            });
        }
        if let Some((_, bad)) = evidence.iter().find(|&(_, l)| l > 1) {
            return Err(MrfError::InvalidLabel(bad));
        }
        if evidence.is_observed(node) {
            return Err(MrfError::NodeObserved(node));
        }
        Ok(())
    }

    /// `P(X_node = value | evidence)`. One oracle call.
    pub fn conditional(
        &self,
        node: NodeId,
        value: Label,
        evidence: &Evidence,
    ) -> Result<f64, MrfError> {
        if value > 1 {
            return Err(MrfError::InvalidLabel(value));
        }
        self.validate_query(node, evidence)?;
        self.calls.fetch_add(1, Ordering::Relaxed);
        Ok(self.posterior_unchecked(node, evidence)?[usize::from(value)])
    }

    fn posterior_unchecked(&self, node: NodeId, evidence: &Evidence) -> Result<[f64; 2], MrfError> {
        let piece = free_piece(&self.graph, node, evidence);
        let factors = self.piece_factors(&piece, evidence);
        let query = piece.local(node);
        let marginal = eliminate_all_but(&piece, factors, query);
        let p = normalize_log(&marginal.table)?;
        Ok([p[0], p[1]])
    }

    /// Log-space factors of the piece with evidence absorbed into unaries.
    fn piece_factors(&self, piece: &Piece, evidence: &Evidence) -> Vec<Factor> {
        let mut factors = Vec::with_capacity(2 * piece.nodes.len());
        for (li, &u) in piece.nodes.iter().enumerate() {
            let mut unary = self.unary[u];
            for (k, &w) in self.graph.neighbors(u).iter().enumerate() {
                match evidence.get(w) {
                    Some(xw) => {
                        for (xu, slot) in unary.iter_mut().enumerate() {
                            *slot += self.pair_log_potential(u, k, xu as Label, xw);
                        }
                    }
                    None if u < w => {
                        let lw = piece.local(w);
                        let t = self.pair[u][k];
                        // variables sorted by local index; bit 0 = smaller local index
                        let table = if li < lw {
                            vec![t[0][0], t[1][0], t[0][1], t[1][1]]
                        } else {
                            vec![t[0][0], t[0][1], t[1][0], t[1][1]]
                        };
                        factors.push(Factor { vars: vec![li.min(lw), li.max(lw)], table });
                    }
                    None => {}
                }
            }
            factors.push(Factor { vars: vec![li], table: unary.to_vec() });
        }
        factors
    }

    /// Exact sample by chaining [`Self::conditional`] over nodes in id order.
    pub fn sample_realization(&self, seed: u64) -> Result<Vec<Label>, MrfError> {
        self.sample_conditioned(&Evidence::empty(self.node_count()), seed)
    }

    /// Exact sample of all unobserved labels given `evidence`; observed
    /// labels are copied through unchanged.
    pub fn sample_conditioned(&self, evidence: &Evidence, seed: u64) -> Result<Vec<Label>, MrfError> {
        let mut rng = seeded_rng(seed);
        let mut ev = evidence.clone();
        for node in 0..self.node_count() {
            if ev.is_observed(node) {
                continue;
            }
            let p1 = self.conditional(node, 1, &ev)?;
            let label = Label::from(rng.random::<f64>() < p1);
            ev.insert(node, label)?;
        }
        Ok(ev.as_slice().iter().map(|l| l.expect("every node sampled")).collect())
    }

    /// Prior marginal `P(X_i = 1)` of every node.
    pub fn marginals_positive(&self) -> Result<Vec<f64>, MrfError> {
        let ev = Evidence::empty(self.node_count());
        (0..self.node_count()).map(|i| self.conditional(i, 1, &ev)).collect()
    }
}

impl LabelOracle for PairwiseModel {
    fn node_count(&self) -> usize {
        self.graph.node_count()
    }

    fn alphabet_size(&self) -> usize {
        2
    }

    fn posterior(&self, node: NodeId, evidence: &Evidence) -> Result<Vec<f64>, MrfError> {
        self.validate_query(node, evidence)?;
        self.calls.fetch_add(2, Ordering::Relaxed);
        Ok(self.posterior_unchecked(node, evidence)?.to_vec())
    }

    fn oracle_calls(&self) -> u64 {
        PairwiseModel::oracle_calls(self)
    }
}

/// Connected set of unobserved nodes, with a dense local numbering that
/// follows ascending node id.
struct Piece {
    nodes: Vec<NodeId>,
    /// (node, local) pairs sorted by node for lookup
    index: Vec<(NodeId, usize)>,
    /// Local adjacency inside the piece, sorted.
    adjacency: Vec<Vec<usize>>,
}

impl Piece {
    fn local(&self, node: NodeId) -> usize {
        let pos = self.index.binary_search_by_key(&node, |&(v, _)| v).expect("node in piece");
        self.index[pos].1
    }
}

fn free_piece(g: &Graph, start: NodeId, evidence: &Evidence) -> Piece {
    let mut nodes = vec![start];
    let mut seen = BTreeSet::from([start]);
    let mut stack = vec![start];
    while let Some(u) = stack.pop() {
        for &v in g.neighbors(u) {
            if !evidence.is_observed(v) && seen.insert(v) {
                nodes.push(v);
                stack.push(v);
            }
        }
    }
    nodes.sort_unstable();
    build_piece(g, nodes)
}

fn build_piece(g: &Graph, nodes: Vec<NodeId>) -> Piece {
    let index: Vec<(NodeId, usize)> = nodes.iter().enumerate().map(|(l, &v)| (v, l)).collect();
    let lookup = |v: NodeId| index.binary_search_by_key(&v, |&(x, _)| x).ok().map(|p| index[p].1);
    let adjacency = nodes
        .iter()
        .map(|&u| g.neighbors(u).iter().filter_map(|&w| lookup(w)).collect())
        .collect();
    Piece { nodes, index, adjacency }
}

/// Log-space table over binary variables; entry index has bit `k` equal to
/// the value of `vars[k]`. `vars` is sorted ascending.
#[derive(Debug, Clone)]
struct Factor {
    vars: Vec<usize>,
    table: Vec<f64>,
}

impl Factor {
    /// Product of `factors` (sum of logs) over the union of their scopes.
    fn product(factors: &[Factor]) -> Factor {
        let vars: Vec<usize> = factors
            .iter()
            .flat_map(|f| f.vars.iter().copied())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let positions: Vec<Vec<usize>> = factors
            .iter()
            .map(|f| f.vars.iter().map(|v| vars.binary_search(v).expect("in union")).collect())
            .collect();
        let size = 1usize << vars.len();
        let mut table = vec![0.0; size];
        for (assignment, slot) in table.iter_mut().enumerate() {
            for (f, pos) in factors.iter().zip(&positions) {
                let mut idx = 0;
                for (k, &p) in pos.iter().enumerate() {
                    idx |= ((assignment >> p) & 1) << k;
                }
                *slot += f.table[idx];
            }
        }
        Factor { vars, table }
    }

    /// Log-sum-exp over `var`.
    fn sum_out(&self, var: usize) -> Factor {
        let pos = self.vars.binary_search(&var).expect("var in scope");
        let vars: Vec<usize> = self.vars.iter().copied().filter(|&v| v != var).collect();
        let low_mask = (1usize << pos) - 1;
        let table = (0..1usize << vars.len())
            .map(|rest| {
                let base = (rest & low_mask) | ((rest & !low_mask) << 1);
                log_add(self.table[base], self.table[base | (1 << pos)])
            })
            .collect();
        Factor { vars, table }
    }
}

/// Min-fill elimination order of every vertex of `adjacency` except `keep`,
/// ties broken by smallest index. Returns the order and the induced width.
fn min_fill_order(adjacency: &[Vec<usize>], keep: Option<usize>) -> (Vec<usize>, usize) {
    let n = adjacency.len();
    let mut adj: Vec<BTreeSet<usize>> =
        adjacency.iter().map(|a| a.iter().copied().collect()).collect();
    let fill = |adj: &[BTreeSet<usize>], v: usize| -> usize {
        let nbrs: Vec<usize> = adj[v].iter().copied().collect();
        let mut missing = 0;
        for (i, &a) in nbrs.iter().enumerate() {
            for &b in &nbrs[i + 1..] {
                if !adj[a].contains(&b) {
                    missing += 1;
                }
            }
        }
        missing
    };
    let mut score: Vec<usize> = (0..n).map(|v| fill(&adj, v)).collect();
    let mut queue: BTreeSet<(usize, usize)> =
        (0..n).filter(|&v| Some(v) != keep).map(|v| (score[v], v)).collect();
    let mut eliminated = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut width = 0;
    while let Some((_, v)) = queue.pop_first() {
        eliminated[v] = true;
        order.push(v);
        let nbrs: Vec<usize> = adj[v].iter().copied().collect();
        width = width.max(nbrs.len());
        for &a in &nbrs {
            adj[a].remove(&v);
        }
        for (i, &a) in nbrs.iter().enumerate() {
            for &b in &nbrs[i + 1..] {
                adj[a].insert(b);
                adj[b].insert(a);
            }
        }
        // fill scores change only within two hops of the eliminated vertex
        let mut touched: BTreeSet<usize> = nbrs.iter().copied().collect();
        for &a in &nbrs {
            touched.extend(adj[a].iter().copied());
        }
        for u in touched {
            if eliminated[u] {
                continue;
            }
            let s = fill(&adj, u);
            if s != score[u] {
                if Some(u) != keep {
                    queue.remove(&(score[u], u));
                    queue.insert((s, u));
                }
                score[u] = s;
            }
        }
    }
    (order, width)
}

/// Eliminates every variable of the piece but `query`; returns the
/// unnormalised log-marginal of `query`.
fn eliminate_all_but(piece: &Piece, factors: Vec<Factor>, query: usize) -> Factor {
    let (order, _) = min_fill_order(&piece.adjacency, Some(query));
    let n = piece.nodes.len();
    let mut slots: Vec<Option<Factor>> = factors.into_iter().map(Some).collect();
    let mut by_var: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (id, f) in slots.iter().enumerate() {
        for &v in &f.as_ref().expect("fresh").vars {
            by_var[v].push(id);
        }
    }
    for var in order {
        let ids = std::mem::take(&mut by_var[var]);
        let bucket: Vec<Factor> = ids.iter().filter_map(|&id| slots[id].take()).collect();
        if bucket.is_empty() {
            continue;
        }
        let message = Factor::product(&bucket).sum_out(var);
        let id = slots.len();
        for &v in &message.vars {
            by_var[v].push(id);
        }
        slots.push(Some(message));
    }
    let rest: Vec<Factor> = slots.into_iter().flatten().collect();
    let marginal = Factor::product(&rest);
    debug_assert_eq!(marginal.vars, vec![query]);
    marginal
}

/// Induced width of the min-fill elimination order of `g` (an upper bound
/// on its treewidth).
pub fn min_fill_width(g: &Graph) -> usize {
    let adjacency: Vec<Vec<usize>> = (0..g.node_count()).map(|v| g.neighbors(v).to_vec()).collect();
    min_fill_order(&adjacency, None).1
}

/// Exact sampler built from one variable-elimination pass.
///
/// Eliminating variable `v` produces a table over `v` and the variables it is
/// still connected to; normalising that table over `v` gives
/// `P(v | later variables)`. Sampling in reverse elimination order therefore
/// draws from the exact joint (conditioned on the evidence it was built
/// with) at `O(n · 2^width)` per sample.
#[derive(Debug, Clone)]
pub struct ExactSampler {
    base: Vec<Option<Label>>,
    /// (node, scope of later nodes, P(node = 1 | scope assignment))
    steps: Vec<(NodeId, Vec<NodeId>, Vec<f64>)>,
}

impl ExactSampler {
    pub fn new(model: &PairwiseModel, evidence: &Evidence) -> Result<Self, MrfError> {
        let n = model.node_count();
        if evidence.node_count() != n {
            return Err(MrfError::AssignmentLength { got: evidence.node_count(), expected: n });
        }
        let mut steps = Vec::new();
        let mut done = vec![false; n];
        for start in 0..n {
            if done[start] || evidence.is_observed(start) {
                continue;
            }
            let piece = free_piece(model.graph(), start, evidence);
            for &v in &piece.nodes {
                done[v] = true;
            }
            let factors = model.piece_factors(&piece, evidence);
            let (order, _) = min_fill_order(&piece.adjacency, None);
            let mut slots: Vec<Option<Factor>> = factors.into_iter().map(Some).collect();
            let mut by_var: Vec<Vec<usize>> = vec![Vec::new(); piece.nodes.len()];
            for (id, f) in slots.iter().enumerate() {
                for &v in &f.as_ref().expect("fresh").vars {
                    by_var[v].push(id);
                }
            }
            let mut piece_steps = Vec::with_capacity(order.len());
            for var in order {
                let ids = std::mem::take(&mut by_var[var]);
                let bucket: Vec<Factor> = ids.iter().filter_map(|&id| slots[id].take()).collect();
                let joint = Factor::product(&bucket);
                let pos = joint.vars.binary_search(&var).expect("var in its bucket");
                let scope: Vec<usize> = joint.vars.iter().copied().filter(|&v| v != var).collect();
                let low_mask = (1usize << pos) - 1;
                let probs = (0..1usize << scope.len())
                    .map(|rest| {
                        let base = (rest & low_mask) | ((rest & !low_mask) << 1);
                        let (l0, l1) = (joint.table[base], joint.table[base | (1 << pos)]);
                        1.0 / (1.0 + (l0 - l1).exp())
                    })
                    .collect();
                piece_steps.push((
                    piece.nodes[var],
                    scope.iter().map(|&l| piece.nodes[l]).collect(),
                    probs,
                ));
                let message = joint.sum_out(var);
                let id = slots.len();
                for &v in &message.vars {
                    by_var[v].push(id);
                }
                slots.push(Some(message));
            }
            piece_steps.reverse();
            steps.extend(piece_steps);
        }
        Ok(Self { base: evidence.as_slice().to_vec(), steps })
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Vec<Label> {
        let mut labels = self.base.clone();
        for (node, scope, probs) in &self.steps {
            let mut idx = 0;
            for (k, &s) in scope.iter().enumerate() {
                idx |= usize::from(labels[s].expect("scope sampled earlier")) << k;
            }
            labels[*node] = Some(Label::from(rng.random::<f64>() < probs[idx]));
        }
        labels.into_iter().map(|l| l.expect("all nodes sampled")).collect()
    }
}
