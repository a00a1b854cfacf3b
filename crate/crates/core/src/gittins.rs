//! Gittins indices of the branching bandit induced by a rooted forest.
//!
//! For a node `X` whose parent revealed label `b`, `φ_{X,b}(m)` is the value
//! of owning the subtree below `X` together with a retirement option worth
//! `m`. Children's value functions combine through
//!
//! ```text
//! Φ_{S,b}(m) = M − ∫_m^M Π_{Y∈S} φ'_{Y,b}(k) dk,      M = r̄ / (1 − β)
//! φ_{X,b}(m) = max{ m, Σ_v P(X=v | Pa(X)=b) · [ r(X,v) + β · Φ_{Ch(X),v}(m) ] }
//! ```
//!
//! and the index `g(X,b)` is the smallest `m` with `φ_{X,b}(m) = m`. Every
//! function here is piecewise linear on `[0, M]`, so the recursion is exact.

use serde::Serialize;

use crate::exec::{map_indices, Execution};
use crate::graph::{bfs_rooted_forest, connected_components, Graph, GraphError, NodeId, RootedForest};
use crate::mrf::{Evidence, Label, LabelOracle, MrfError};
use crate::pwl::{PwcFunction, PwlError, PwlFunction};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GittinsError {
    #[error("discount factor {0} is not in (0, 1)")]
    InvalidBeta(f64),
    #[error("reward bound {0} must be finite and positive")]
    InvalidRewardBound(f64),
    #[error("reward {reward} of node {node}, label {label} exceeds the bound {r_bar}")]
    RewardOutOfBounds { node: NodeId, label: Label, reward: f64, r_bar: f64 },
    #[error("reward table covers {got} nodes x {labels} labels, expected {expected} x {alphabet}")]
    RewardShape { got: usize, labels: usize, expected: usize, alphabet: usize },
    #[error("oracle covers {oracle} nodes but the graph has {graph}")]
    OracleSize { oracle: usize, graph: usize },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Pwl(#[from] PwlError),
    #[error(transparent)]
    Mrf(#[from] MrfError),
}

/// Per-label rewards with their bound and the discount factor.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardSpec {
    rewards: Vec<Vec<f64>>,
    r_bar: f64,
    beta: f64,
}

impl RewardSpec {
    pub fn new(rewards: Vec<Vec<f64>>, r_bar: f64, beta: f64) -> Result<Self, GittinsError> {
        if !(beta > 0.0 && beta < 1.0) {
            return Err(GittinsError::InvalidBeta(beta));
        }
        if !(r_bar.is_finite() && r_bar > 0.0) {
            return Err(GittinsError::InvalidRewardBound(r_bar));
        }
        for (node, row) in rewards.iter().enumerate() {
            for (label, &reward) in row.iter().enumerate() {
                if !(reward.abs() <= r_bar) {
                    return Err(GittinsError::RewardOutOfBounds {
                        node,
                        label: label as Label,
                        reward,
                        r_bar,
                    });
                }
            }
        }
        Ok(Self { rewards, r_bar, beta })
    }

    /// Reward 1 for a positive label, 0 otherwise.
    pub fn binary(n: usize, beta: f64) -> Result<Self, GittinsError> {
        Self::new(vec![vec![0.0, 1.0]; n], 1.0, beta)
    }

    pub fn reward(&self, node: NodeId, label: Label) -> f64 {
        self.rewards[node][usize::from(label)]
    }

    pub fn rewards_of(&self, node: NodeId) -> &[f64] {
        &self.rewards[node]
    }

    pub fn r_bar(&self) -> f64 {
        self.r_bar
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn node_count(&self) -> usize {
        self.rewards.len()
    }

    /// Upper end `r̄ / (1 − β)` of the retirement-value domain.
    pub fn upper(&self) -> f64 {
        self.r_bar / (1.0 - self.beta)
    }

    pub fn with_beta(&self, beta: f64) -> Result<Self, GittinsError> {
        Self::new(self.rewards.clone(), self.r_bar, beta)
    }

    /// Every reward and the bound multiplied by `c > 0`.
    pub fn scaled(&self, c: f64) -> Result<Self, GittinsError> {
        let rewards = self.rewards.iter().map(|r| r.iter().map(|x| x * c).collect()).collect();
        Self::new(rewards, self.r_bar * c, self.beta)
    }

    fn check_shape(&self, n: usize, alphabet: usize) -> Result<(), GittinsError> {
        let labels = self.rewards.first().map_or(alphabet, Vec::len);
        if self.rewards.len() != n || self.rewards.iter().any(|r| r.len() != alphabet) {
            return Err(GittinsError::RewardShape {
                got: self.rewards.len(),
                labels,
                expected: n,
                alphabet,
            });
        }
        Ok(())
    }
}

/// Label of a node's tree parent, or the marker used for component roots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParentLabel {
    Label(Label),
    Root,
}

impl Serialize for ParentLabel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            ParentLabel::Label(l) => s.serialize_u8(*l),
            ParentLabel::Root => s.serialize_str("root"),
        }
    }
}

/// How the first node of every connected component is chosen.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub enum RootRule {
    /// Largest prior marginal `P(X = 1)`, ties to the smallest id.
    #[default]
    MaxMarginal,
    /// One root per component, in component order.
    Explicit(Vec<NodeId>),
}

/// Priority root of every component of `g`, in component order, and the
/// number of oracle calls spent choosing them.
pub fn priority_roots<O: LabelOracle + ?Sized>(
    g: &Graph,
    oracle: &O,
    rule: &RootRule,
) -> Result<(Vec<NodeId>, u64), GittinsError> {
    match rule {
        RootRule::Explicit(roots) => Ok((roots.clone(), 0)),
        RootRule::MaxMarginal => {
            let empty = Evidence::empty(g.node_count());
            let sigma = oracle.alphabet_size() as u64;
            let mut calls = 0;
            let mut roots = Vec::new();
            for members in connected_components(g) {
                let mut best = (f64::NEG_INFINITY, members[0]);
                for &v in &members {
                    let p = oracle.posterior(v, &empty)?[1];
                    calls += sigma;
                    if p > best.0 {
                        best = (p, v);
                    }
                }
                roots.push(best.1);
            }
            Ok((roots, calls))
        }
    }
}

/// `max{m, βm + Σ_v p_v r_v}` on `[0, M]`.
pub fn phi_leaf(dist: &[f64], rewards: &[f64], spec: &RewardSpec) -> Result<PwlFunction, GittinsError> {
    let constant = expected_reward(dist, rewards);
    Ok(PwlFunction::affine(spec.beta(), constant, spec.upper())?.max_with_identity())
}

fn expected_reward(dist: &[f64], rewards: &[f64]) -> f64 {
    dist.iter().zip(rewards).map(|(p, r)| p * r).sum()
}

/// `Φ_{S}(m) = M − ∫_m^M Π φ'_Y(k) dk`, or the identity when `S` is empty.
pub fn capital_phi(children: &[&PwlFunction], upper: f64) -> Result<PwlFunction, GittinsError> {
    let Some((first, rest)) = children.split_first() else {
        return Ok(PwlFunction::identity(upper)?);
    };
    let mut product: PwcFunction = first.derivative();
    for child in rest {
        product = product.multiply(&child.derivative())?;
    }
    Ok(product.integrate_to_upper().scale(-1.0).add_const(upper))
}

/// `max{m, Σ_v p_v [r_v + β Φ_v(m)]}` given one `Φ_v` per label.
pub fn phi_internal(
    dist: &[f64],
    rewards: &[f64],
    capital: &[PwlFunction],
    spec: &RewardSpec,
) -> Result<PwlFunction, GittinsError> {
    let mut inner = PwlFunction::constant(expected_reward(dist, rewards), spec.upper())?;
    for (p, phi) in dist.iter().zip(capital) {
        if *p != 0.0 {
            inner = inner.add(&phi.scale(spec.beta() * p))?;
        }
    }
    Ok(inner.max_with_identity())
}

/// The index: smallest fixed point of `φ`, clamped to `[0, M]`.
pub fn index_of(phi: &PwlFunction) -> Result<f64, GittinsError> {
    Ok(phi.first_fixed_point()?.clamp(0.0, phi.upper()))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IndexOptions {
    /// Keep every `φ` after its parent consumed it.
    pub retain_phi: bool,
    pub execution: Execution,
}

/// Gittins index of every (node, parent label) pair.
#[derive(Debug, Clone)]
pub struct IndexTable {
    forest: RootedForest,
    alphabet: usize,
    upper: f64,
    /// Roots hold one entry (the root marker); other nodes one per label.
    index: Vec<Vec<f64>>,
    phi_store: Option<Vec<Vec<PwlFunction>>>,
    capital_store: Option<Vec<Vec<PwlFunction>>>,
    oracle_calls: u64,
    max_pieces: usize,
}

impl IndexTable {
    pub fn forest(&self) -> &RootedForest {
        &self.forest
    }

    pub fn alphabet_size(&self) -> usize {
        self.alphabet
    }

    /// `r̄ / (1 − β)`, the largest possible index.
    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn get(&self, node: NodeId, parent: ParentLabel) -> Option<f64> {
        let row = self.index.get(node)?;
        match (self.forest.is_root(node), parent) {
            (true, ParentLabel::Root) => Some(row[0]),
            (false, ParentLabel::Label(b)) => row.get(usize::from(b)).copied(),
            _ => None,
        }
    }

    /// Index of `node` given the labels revealed so far, if its tree parent
    /// is revealed or it is a root.
    pub fn lookup(&self, node: NodeId, revealed: impl Fn(NodeId) -> Option<Label>) -> Option<f64> {
        match self.forest.parent(node) {
            None => self.get(node, ParentLabel::Root),
            Some(p) => revealed(p).and_then(|b| self.get(node, ParentLabel::Label(b))),
        }
    }

    /// Stored `φ_{X,b}`, present only when built with `retain_phi`.
    pub fn phi(&self, node: NodeId, parent: ParentLabel) -> Option<&PwlFunction> {
        let row = self.phi_store.as_ref()?.get(node)?;
        match parent {
            ParentLabel::Root if self.forest.is_root(node) => row.first(),
            ParentLabel::Label(b) if !self.forest.is_root(node) => row.get(usize::from(b)),
            _ => None,
        }
    }

    /// Stored `Φ_{Ch(X),v}` for every label `v`, present only with `retain_phi`.
    pub fn capital_phi(&self, node: NodeId) -> Option<&[PwlFunction]> {
        self.capital_store.as_ref().map(|s| s[node].as_slice())
    }

    pub fn oracle_calls(&self) -> u64 {
        self.oracle_calls
    }

    /// Most pieces in any `φ` built, retained or not.
    pub fn max_pieces(&self) -> usize {
        self.max_pieces
    }

    /// Every entry sorted by (node, parent label).
    pub fn entries(&self) -> Vec<IndexEntry> {
        let mut out = Vec::new();
        for (node, row) in self.index.iter().enumerate() {
            if self.forest.is_root(node) {
                out.push(IndexEntry { node, parent_label: ParentLabel::Root, index: row[0] });
            } else {
                for (b, &index) in row.iter().enumerate() {
                    out.push(IndexEntry { node, parent_label: ParentLabel::Label(b as Label), index });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IndexEntry {
    pub node: NodeId,
    pub parent_label: ParentLabel,
    pub index: f64,
}

struct ComponentResult {
    nodes: Vec<(NodeId, Vec<f64>, Option<Vec<PwlFunction>>, Option<Vec<PwlFunction>>)>,
    calls: u64,
    max_pieces: usize,
}

/// Runs the leaf-to-root recursion on the BFS spanning forest of `g`.
///
/// Conditionals `P(X = v | Pa(X) = b)` are asked of `oracle` with only the
/// tree parent as evidence, so on graphs with cycles they marginalise every
/// other node of the full graph.
pub fn compute_index_table<O: LabelOracle + ?Sized>(
    g: &Graph,
    oracle: &O,
    spec: &RewardSpec,
    rule: &RootRule,
    options: IndexOptions,
) -> Result<IndexTable, GittinsError> {
    let n = g.node_count();
    if oracle.node_count() != n {
        return Err(GittinsError::OracleSize { oracle: oracle.node_count(), graph: n });
    }
    let alphabet = oracle.alphabet_size();
    spec.check_shape(n, alphabet)?;
    let (roots, root_calls) = priority_roots(g, oracle, rule)?;
    let forest = bfs_rooted_forest(g, &roots)?;
    let results = map_indices(forest.component_count(), options.execution, |c| {
        component_indices(&forest, c, oracle, spec, alphabet, options.retain_phi)
    });
    let mut index = vec![Vec::new(); n];
    let mut phi_store = options.retain_phi.then(|| vec![Vec::new(); n]);
    let mut capital_store = options.retain_phi.then(|| vec![Vec::new(); n]);
    let mut oracle_calls = root_calls;
    let mut max_pieces = 0;
    for result in results {
        let result = result?;
        oracle_calls += result.calls;
        max_pieces = max_pieces.max(result.max_pieces);
        for (node, values, phis, capitals) in result.nodes {
            index[node] = values;
            if let (Some(store), Some(phis)) = (phi_store.as_mut(), phis) {
                store[node] = phis;
            }
            if let (Some(store), Some(caps)) = (capital_store.as_mut(), capitals) {
                store[node] = caps;
            }
        }
    }
    debug_assert!(oracle_calls <= 4 * (n * alphabet * alphabet) as u64);
    debug_assert!(max_pieces <= 2 * n.max(1) * alphabet);
    Ok(IndexTable {
        forest,
        alphabet,
        upper: spec.upper(),
        index,
        phi_store,
        capital_store,
        oracle_calls,
        max_pieces,
    })
}

fn component_indices<O: LabelOracle + ?Sized>(
    forest: &RootedForest,
    c: usize,
    oracle: &O,
    spec: &RewardSpec,
    alphabet: usize,
    retain: bool,
) -> Result<ComponentResult, GittinsError> {
    let n = forest.node_count();
    let sigma = alphabet as u64;
    let mut live: Vec<Option<Vec<PwlFunction>>> = vec![None; n];
    let mut out = ComponentResult { nodes: Vec::new(), calls: 0, max_pieces: 0 };
    for &x in forest.bfs_order(c).iter().rev() {
        let children = forest.children(x);
        let capitals = if children.is_empty() {
            None
        } else {
            let mut caps = Vec::with_capacity(alphabet);
            for v in 0..alphabet {
                let phis: Vec<&PwlFunction> = children
                    .iter()
                    .map(|&y| &live[y].as_ref().expect("children processed first")[v])
                    .collect();
                caps.push(capital_phi(&phis, spec.upper())?);
            }
            Some(caps)
        };
        let child_pieces: usize = children
            .iter()
            .flat_map(|&y| live[y].as_ref().expect("children processed first"))
            .map(PwlFunction::pieces)
            .sum();
        let parents: Vec<Option<Label>> = match forest.parent(x) {
            None => vec![None],
            Some(_) => (0..alphabet).map(|b| Some(b as Label)).collect(),
        };
        let mut phis = Vec::with_capacity(parents.len());
        let mut values = Vec::with_capacity(parents.len());
        for b in parents {
            let mut evidence = Evidence::empty(n);
            if let (Some(p), Some(b)) = (forest.parent(x), b) {
                evidence.insert(p, b)?;
            }
            let dist = oracle.posterior(x, &evidence)?;
            out.calls += sigma;
            let phi = match &capitals {
                None => phi_leaf(&dist, spec.rewards_of(x), spec)?,
                Some(caps) => phi_internal(&dist, spec.rewards_of(x), caps, spec)?,
            };
            debug_assert!(phi.pieces() <= 2.max(1 + child_pieces));
            out.max_pieces = out.max_pieces.max(phi.pieces());
            values.push(index_of(&phi)?);
            phis.push(phi);
        }
        // children's functions are no longer needed once Φ is built
        let stored_phis = if retain { Some(phis.clone()) } else { None };
        for &y in children {
            live[y] = None;
        }
        live[x] = Some(phis);
        out.nodes.push((x, values, stored_phis, if retain { capitals } else { None }));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{random_binary_covariates, random_tree};
    use crate::mrf::PairwiseModel;

    fn logit(p: f64) -> f64 {
        (p / (1.0 - p)).ln()
    }

    fn single_node(p: f64) -> PairwiseModel {
        let g = Graph::from_edges(1, &[]).unwrap();
        PairwiseModel::new(g, vec![0.0, logit(p)], vec![0.0; 4]).unwrap()
    }

    #[test]
    fn reward_spec_validation() {
        assert_eq!(RewardSpec::binary(1, 1.0), Err(GittinsError::InvalidBeta(1.0)));
        assert_eq!(RewardSpec::binary(1, 0.0), Err(GittinsError::InvalidBeta(0.0)));
        assert!(RewardSpec::new(vec![vec![0.0, 2.0]], 1.0, 0.5).is_err());
        let spec = RewardSpec::binary(2, 0.9).unwrap();
        assert!((spec.upper() - 10.0).abs() < 1e-12);
    }

    #[test]
    fn leaf_examples() {
        let spec = RewardSpec::binary(1, 0.9).unwrap();
        let phi = phi_leaf(&[0.5, 0.5], &[0.0, 1.0], &spec).unwrap();
        assert!((index_of(&phi).unwrap() - 5.0).abs() < 1e-12);
        let phi = phi_leaf(&[1.0, 0.0], &[0.0, 1.0], &spec).unwrap();
        assert_eq!(phi.pieces(), 1);
        assert_eq!(index_of(&phi).unwrap(), 0.0);
        let spec = RewardSpec::binary(1, 0.5).unwrap();
        let phi = phi_leaf(&[0.0, 1.0], &[0.0, 1.0], &spec).unwrap();
        assert!((index_of(&phi).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn negative_expected_reward_clamps_to_zero() {
        let spec = RewardSpec::new(vec![vec![-1.0, 0.5]], 1.0, 0.9).unwrap();
        let phi = phi_leaf(&[0.8, 0.2], spec.rewards_of(0), &spec).unwrap();
        assert_eq!(index_of(&phi).unwrap(), 0.0);
        assert!((phi.eval(3.0) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn capital_phi_of_one_child_is_the_child() {
        let spec = RewardSpec::binary(1, 0.8).unwrap();
        let child = phi_leaf(&[0.3, 0.7], &[0.0, 1.0], &spec).unwrap();
        let cap = capital_phi(&[&child], spec.upper()).unwrap();
        for k in 0..=100 {
            let m = spec.upper() * k as f64 / 100.0;
            assert!((cap.eval(m) - child.eval(m)).abs() < 1e-12);
        }
        assert!((cap.eval(spec.upper()) - spec.upper()).abs() < 1e-12);
        let empty = capital_phi(&[], spec.upper()).unwrap();
        assert_eq!(empty.eval(1.5), 1.5);
    }

    #[test]
    fn worthless_children_reduce_to_leaf_formula() {
        let spec = RewardSpec::binary(2, 0.9).unwrap();
        let zero_child = phi_leaf(&[1.0, 0.0], &[0.0, 1.0], &spec).unwrap();
        let cap = capital_phi(&[&zero_child], spec.upper()).unwrap();
        let caps = vec![cap.clone(), cap];
        let internal = phi_internal(&[0.4, 0.6], &[0.0, 1.0], &caps, &spec).unwrap();
        let leaf = phi_leaf(&[0.4, 0.6], &[0.0, 1.0], &spec).unwrap();
        for k in 0..=50 {
            let m = spec.upper() * k as f64 / 50.0;
            assert!((internal.eval(m) - leaf.eval(m)).abs() < 1e-12);
        }
    }

    #[test]
    fn single_node_table() {
        let model = single_node(0.3);
        let spec = RewardSpec::binary(1, 0.9).unwrap();
        let table =
            compute_index_table(model.graph(), &model, &spec, &RootRule::default(), IndexOptions::default())
                .unwrap();
        let g = table.get(0, ParentLabel::Root).unwrap();
        assert!((g - 3.0).abs() < 1e-9);
        assert_eq!(table.get(0, ParentLabel::Label(1)), None);
        assert_eq!(table.entries().len(), 1);
    }

    #[test]
    fn star_children_are_symmetric() {
        let g = Graph::new(4, &[(0, 1), (0, 2), (0, 3)], vec![vec![1.0]; 4]).unwrap();
        let model = PairwiseModel::random(g, 5);
        let spec = RewardSpec::binary(4, 0.9).unwrap();
        let rule = RootRule::Explicit(vec![0]);
        let table =
            compute_index_table(model.graph(), &model, &spec, &rule, IndexOptions::default()).unwrap();
        for b in 0..2 {
            let a = table.get(1, ParentLabel::Label(b)).unwrap();
            for leaf in 2..4 {
                assert!((table.get(leaf, ParentLabel::Label(b)).unwrap() - a).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn root_rule_prefers_largest_marginal() {
        let g = Graph::new(3, &[(0, 1)], vec![vec![0.0], vec![1.0], vec![1.0]]).unwrap();
        // unary weight on x·c favours the covariate-1 nodes
        let model = PairwiseModel::new(g, vec![0.0, 0.0, 0.0, 2.0], vec![0.0; 9]).unwrap();
        let (roots, calls) = priority_roots(model.graph(), &model, &RootRule::MaxMarginal).unwrap();
        assert_eq!(roots, vec![1, 2]);
        assert_eq!(calls, 6);
        let uniform = PairwiseModel::uniform(random_tree(5, 1));
        let (roots, _) = priority_roots(uniform.graph(), &uniform, &RootRule::MaxMarginal).unwrap();
        assert_eq!(roots, vec![0]);
    }

    #[test]
    fn indices_are_bounded_and_budgets_hold() {
        let t = random_tree(60, 3).with_covariates(random_binary_covariates(60, 5, 4)).unwrap();
        let model = PairwiseModel::random(t, 6);
        let spec = RewardSpec::binary(60, 0.9).unwrap();
        let options = IndexOptions { retain_phi: true, ..IndexOptions::default() };
        let table =
            compute_index_table(model.graph(), &model, &spec, &RootRule::default(), options).unwrap();
        for e in table.entries() {
            assert!((0.0..=spec.upper()).contains(&e.index));
        }
        assert!(table.oracle_calls() <= 4 * 60 * 4);
        assert!(table.max_pieces() <= 2 * 60 * 2);
        let entries = table.entries();
        assert!(entries.windows(2).all(|w| (w[0].node, w[0].parent_label) < (w[1].node, w[1].parent_label)));
    }

    #[test]
    fn sequential_and_parallel_tables_agree() {
        let g = crate::graph::Graph::from_edges(6, &[(0, 1), (1, 2), (3, 4)]).unwrap();
        let model = PairwiseModel::random(g, 2);
        let spec = RewardSpec::binary(6, 0.7).unwrap();
        let run = |execution| {
            compute_index_table(
                model.graph(),
                &model,
                &spec,
                &RootRule::default(),
                IndexOptions { retain_phi: false, execution },
            )
            .unwrap()
            .entries()
        };
        assert_eq!(run(Execution::Sequential), run(Execution::Parallel));
    }

    #[test]
    fn parent_label_serializes_as_number_or_root() {
        let e = IndexEntry { node: 3, parent_label: ParentLabel::Root, index: 1.5 };
        assert_eq!(
            serde_json::to_string(&e).unwrap(),
            r#"{"node":3,"parent_label":"root","index":1.5}"#
        );
        let e = IndexEntry { node: 3, parent_label: ParentLabel::Label(1), index: 0.0 };
        assert_eq!(
            serde_json::to_string(&e).unwrap(),
            r#"{"node":3,"parent_label":1,"index":0.0}"#
        );
    }
}
