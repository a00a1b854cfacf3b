//! Frontier exploration: the state machine and the policies that drive it.
//!
//! The frontier holds every untested neighbor of a tested node plus the
//! priority root of every component with no tested node. Roots of untouched
//! components are available from the first step, so a policy may move to a
//! new component at any time.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore};

use crate::gittins::{
    compute_index_table, priority_roots, GittinsError, IndexOptions, IndexTable, RewardSpec, RootRule,
};
use crate::graph::{Graph, NodeId};
use crate::mrf::{Evidence, Label, MrfError, PairwiseModel};

/// Largest instance the Optimal dynamic program accepts.
pub const OPTIMAL_MAX_NODES: usize = 14;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PolicyError {
    #[error("the frontier is empty")]
    EmptyFrontier,
    #[error("node {0} is not in the frontier")]
    NotInFrontier(NodeId),
    #[error("label {0} is outside the alphabet")]
    InvalidLabel(Label),
    #[error("the optimal policy is limited to {max} nodes, instance has {n}")]
    TooLarge { n: usize, max: usize },
    #[error("unknown policy {0:?}; expected random, greedy, gittins or optimal")]
    UnknownPolicy(String),
    #[error("state is not reachable from the initial state")]
    UnreachableState,
    #[error(transparent)]
    Mrf(#[from] MrfError),
    #[error(transparent)]
    Gittins(#[from] GittinsError),
}

/// Revealed labels, the order they were revealed in, and the frontier.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExplorationState {
    evidence: Evidence,
    history: Vec<(NodeId, Label)>,
    frontier: BTreeSet<NodeId>,
}

impl ExplorationState {
    /// Nothing tested; the frontier is the set of priority roots.
    pub fn initial(n: usize, roots: &[NodeId]) -> Self {
        Self {
            evidence: Evidence::empty(n),
            history: Vec::new(),
            frontier: roots.iter().copied().collect(),
        }
    }

    /// Reveals `label` at frontier node `node` and admits its untested
    /// neighbors to the frontier.
    pub fn advance(&mut self, node: NodeId, label: Label, g: &Graph) -> Result<(), PolicyError> {
        if usize::from(label) >= g.alphabet_size() {
            return Err(PolicyError::InvalidLabel(label));
        }
        if !self.frontier.remove(&node) {
            return Err(PolicyError::NotInFrontier(node));
        }
        self.evidence.insert(node, label)?;
        self.history.push((node, label));
        for &w in g.neighbors(node) {
            if !self.evidence.is_observed(w) {
                self.frontier.insert(w);
            }
        }
        Ok(())
    }

    pub fn advanced(&self, node: NodeId, label: Label, g: &Graph) -> Result<Self, PolicyError> {
        let mut next = self.clone();
        next.advance(node, label, g)?;
        Ok(next)
    }

    /// Replays `history` from the initial state.
    pub fn replay(
        g: &Graph,
        roots: &[NodeId],
        history: &[(NodeId, Label)],
    ) -> Result<Self, PolicyError> {
        let mut state = Self::initial(g.node_count(), roots);
        for &(node, label) in history {
            state.advance(node, label, g)?;
        }
        Ok(state)
    }

    pub fn frontier(&self) -> &BTreeSet<NodeId> {
        &self.frontier
    }

    pub fn evidence(&self) -> &Evidence {
        &self.evidence
    }

    pub fn history(&self) -> &[(NodeId, Label)] {
        &self.history
    }

    pub fn label(&self, node: NodeId) -> Option<Label> {
        self.evidence.get(node)
    }

    pub fn is_tested(&self, node: NodeId) -> bool {
        self.evidence.is_observed(node)
    }

    /// Number of nodes tested so far.
    pub fn step(&self) -> usize {
        self.history.len()
    }

    pub fn is_terminal(&self) -> bool {
        self.frontier.is_empty()
    }

    /// Whether the frontier equals the untested neighbors of tested nodes
    /// plus the roots of untouched components.
    pub fn frontier_invariant_holds(&self, g: &Graph, roots: &[NodeId]) -> bool {
        let mut expected: BTreeSet<NodeId> = BTreeSet::new();
        for &(u, _) in &self.history {
            expected.extend(g.neighbors(u).iter().copied().filter(|&w| !self.is_tested(w)));
        }
        let components = crate::graph::connected_components(g);
        for (members, &root) in components.iter().zip(roots) {
            if members.iter().all(|&v| !self.is_tested(v)) {
                expected.insert(root);
            }
        }
        expected == self.frontier
    }
}

/// Maps exploration states to frontier nodes.
///
/// A policy value is used for one rollout at a time and may cache work
/// between calls; [`Policy::reset`] is called before every rollout.
pub trait Policy {
    fn name(&self) -> &'static str;

    fn is_deterministic(&self) -> bool;

    fn reset(&mut self) {}

    fn choose(&mut self, state: &ExplorationState, rng: &mut dyn RngCore) -> Result<NodeId, PolicyError>;
}

/// Uniform choice over the frontier.
#[derive(Debug, Clone, Copy, Default)]
pub struct RandomPolicy;

impl Policy for RandomPolicy {
    fn name(&self) -> &'static str {
        "random"
    }

    fn is_deterministic(&self) -> bool {
        false
    }

    fn choose(&mut self, state: &ExplorationState, rng: &mut dyn RngCore) -> Result<NodeId, PolicyError> {
        let k = state.frontier.len();
        if k == 0 {
            return Err(PolicyError::EmptyFrontier);
        }
        let pick = rng.random_range(0..k);
        Ok(*state.frontier.iter().nth(pick).expect("pick < len"))
    }
}

/// Frontier node with the largest posterior probability of a positive label.
///
/// Posteriors are cached between steps of a rollout. Revealing `u` can only
/// change the posterior of nodes joined to `u` by a path of untested nodes,
/// so only those entries are dropped.
#[derive(Debug)]
pub struct GreedyPolicy<'a> {
    model: &'a PairwiseModel,
    cache: Vec<Option<f64>>,
    seen: Vec<(NodeId, Label)>,
}

impl<'a> GreedyPolicy<'a> {
    pub fn new(model: &'a PairwiseModel) -> Self {
        Self { model, cache: vec![None; model.node_count()], seen: Vec::new() }
    }

    fn sync(&mut self, state: &ExplorationState) {
        if !state.history.starts_with(&self.seen) {
            self.cache.iter_mut().for_each(|c| *c = None);
            self.seen.clear();
        }
        let g = self.model.graph();
        for k in self.seen.len()..state.history.len() {
            let (u, _) = state.history[k];
            let tested_before = |v: NodeId| state.history[..k].iter().any(|&(w, _)| w == v);
            let mut stack = vec![u];
            let mut visited = BTreeSet::from([u]);
            while let Some(x) = stack.pop() {
                self.cache[x] = None;
                for &w in g.neighbors(x) {
                    if !tested_before(w) && visited.insert(w) {
                        stack.push(w);
                    }
                }
            }
        }
        self.seen = state.history.clone();
    }

    pub fn posterior_positive(&mut self, node: NodeId, state: &ExplorationState) -> Result<f64, PolicyError> {
        self.sync(state);
        self.cached(node, state)
    }

    fn cached(&mut self, node: NodeId, state: &ExplorationState) -> Result<f64, PolicyError> {
        if let Some(p) = self.cache[node] {
            return Ok(p);
        }
        let p = self.model.conditional(node, 1, &state.evidence)?;
        self.cache[node] = Some(p);
        Ok(p)
    }
}

impl Policy for GreedyPolicy<'_> {
    fn name(&self) -> &'static str {
        "greedy"
    }

    fn is_deterministic(&self) -> bool {
        true
    }

    fn reset(&mut self) {
        self.cache.iter_mut().for_each(|c| *c = None);
        self.seen.clear();
    }

    fn choose(&mut self, state: &ExplorationState, _rng: &mut dyn RngCore) -> Result<NodeId, PolicyError> {
        self.sync(state);
        let mut best: Option<(f64, NodeId)> = None;
        for &v in &state.frontier {
            let p = self.cached(v, state)?;
            if best.is_none_or(|(bp, _)| p > bp) {
                best = Some((p, v));
            }
        }
        best.map(|(_, v)| v).ok_or(PolicyError::EmptyFrontier)
    }
}

/// Frontier node with the largest Gittins index.
///
/// Each node's index is looked up under its tree parent's revealed label.
/// On graphs with cycles a node can reach the frontier through a dropped
/// edge before its tree parent is tested; such nodes are not eligible.
#[derive(Debug, Clone, Copy)]
pub struct GittinsPolicy<'a> {
    table: &'a IndexTable,
}

impl<'a> GittinsPolicy<'a> {
    pub fn new(table: &'a IndexTable) -> Self {
        Self { table }
    }

    /// The chosen node and its index, `None` for the index when no frontier
    /// node was eligible and the fallback was used.
    pub fn choose_with_index(&self, state: &ExplorationState) -> Result<(NodeId, Option<f64>), PolicyError> {
        let mut best: Option<(f64, NodeId)> = None;
        for &v in &state.frontier {
            if let Some(g) = self.table.lookup(v, |p| state.label(p)) {
                if best.is_none_or(|(bg, _)| g > bg) {
                    best = Some((g, v));
                }
            }
        }
        match best {
            Some((g, v)) => Ok((v, Some(g))),
            None => {
                let v = *state.frontier.first().ok_or(PolicyError::EmptyFrontier)?;
                log::warn!("no frontier node has an index entry; falling back to node {v}");
                Ok((v, None))
            }
        }
    }
}

impl Policy for GittinsPolicy<'_> {
    fn name(&self) -> &'static str {
        "gittins"
    }

    fn is_deterministic(&self) -> bool {
        true
    }

    fn choose(&mut self, state: &ExplorationState, _rng: &mut dyn RngCore) -> Result<NodeId, PolicyError> {
        self.choose_with_index(state).map(|(v, _)| v)
    }
}

/// Probabilities of every partial labelling of a small binary MRF.
///
/// Partial labellings are keyed in base 3 (digit `i` is 0 when node `i` is
/// untested, `1 + label` otherwise). The table is filled from the enumerated
/// joint and does not depend on the discount factor.
#[derive(Debug, Clone)]
pub struct PartialMarginals {
    n: usize,
    pow3: Vec<usize>,
    prob: Vec<f64>,
}

impl PartialMarginals {
    pub fn new(model: &PairwiseModel) -> Result<Self, PolicyError> {
        let n = model.node_count();
        if n > OPTIMAL_MAX_NODES {
            return Err(PolicyError::TooLarge { n, max: OPTIMAL_MAX_NODES });
        }
        let joint = model.brute_force_joint()?;
        let pow3: Vec<usize> = (0..=n).map(|i| 3usize.pow(i as u32)).collect();
        let mut prob = vec![0.0; pow3[n]];
        for (mask, &p) in joint.iter().enumerate() {
            let code: usize = (0..n).map(|i| (1 + ((mask >> i) & 1)) * pow3[i]).sum();
            prob[code] = p;
        }
        // replacing an untested digit by either label gives a larger code
        for code in (0..pow3[n]).rev() {
            if let Some(i) = (0..n).find(|&i| (code / pow3[i]).is_multiple_of(3)) {
                prob[code] = prob[code + pow3[i]] + prob[code + 2 * pow3[i]];
            }
        }
        Ok(Self { n, pow3, prob })
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn code_of(&self, evidence: &Evidence) -> usize {
        evidence.iter().map(|(i, l)| (1 + usize::from(l)) * self.pow3[i]).sum()
    }

    /// `P(tested nodes carry their labels)`.
    pub fn probability(&self, code: usize) -> f64 {
        self.prob[code]
    }

    /// `P(X_node = label | partial labelling)`; `node` must be untested.
    pub fn conditional(&self, code: usize, node: NodeId, label: Label) -> f64 {
        let den = self.prob[code];
        if den == 0.0 {
            return 0.0;
        }
        self.prob[code + (1 + usize::from(label)) * self.pow3[node]] / den
    }
}

/// Optimal value and action of every state reachable from the initial one.
#[derive(Debug, Clone)]
pub struct OptimalTable {
    n: usize,
    pow3: Vec<usize>,
    value: Vec<f64>,
    action: Vec<u8>,
    initial_value: f64,
}

const UNSET: u8 = u8::MAX;

impl OptimalTable {
    /// Memoised recursion
    /// `V(s) = max_{a ∈ frontier(s)} Σ_v P(X_a = v | s) [r(a, v) + β V(s + (a, v))]`
    /// with `V = 0` once every node is tested; ties go to the smallest id.
    pub fn solve(
        g: &Graph,
        marginals: &PartialMarginals,
        reward: &RewardSpec,
        roots: &[NodeId],
    ) -> Result<Self, PolicyError> {
        let n = g.node_count();
        if n > OPTIMAL_MAX_NODES {
            return Err(PolicyError::TooLarge { n, max: OPTIMAL_MAX_NODES });
        }
        let components = crate::graph::connected_components(g);
        let component_of = crate::graph::component_labels(&components, n);
        let mut solver = Solver {
            g,
            marginals,
            reward,
            roots,
            component_of,
            pow3: marginals.pow3.clone(),
            value: vec![f64::NAN; marginals.pow3[n]],
            action: vec![UNSET; marginals.pow3[n]],
        };
        let initial_value = solver.value(0);
        Ok(Self {
            n,
            pow3: solver.pow3,
            value: solver.value,
            action: solver.action,
            initial_value,
        })
    }

    pub fn initial_value(&self) -> f64 {
        self.initial_value
    }

    fn code_of(&self, state: &ExplorationState) -> usize {
        state.evidence.iter().map(|(i, l)| (1 + usize::from(l)) * self.pow3[i]).sum()
    }

    /// Optimal value of `state`, if it was reached by the recursion.
    pub fn value_of(&self, state: &ExplorationState) -> Option<f64> {
        let v = self.value[self.code_of(state)];
        (!v.is_nan()).then_some(v)
    }

    pub fn action_of(&self, state: &ExplorationState) -> Option<NodeId> {
        match self.action[self.code_of(state)] {
            UNSET => None,
            a => Some(NodeId::from(a)),
        }
    }

    pub fn node_count(&self) -> usize {
        self.n
    }
}

struct Solver<'a> {
    g: &'a Graph,
    marginals: &'a PartialMarginals,
    reward: &'a RewardSpec,
    roots: &'a [NodeId],
    component_of: Vec<usize>,
    pow3: Vec<usize>,
    value: Vec<f64>,
    action: Vec<u8>,
}

impl Solver<'_> {
    fn digit(&self, code: usize, i: usize) -> usize {
        (code / self.pow3[i]) % 3
    }

    fn frontier(&self, code: usize) -> BTreeSet<NodeId> {
        let n = self.g.node_count();
        let tested = |i: usize| self.digit(code, i) != 0;
        let mut touched = vec![false; self.roots.len()];
        let mut out = BTreeSet::new();
        for u in (0..n).filter(|&u| tested(u)) {
            touched[self.component_of[u]] = true;
            out.extend(self.g.neighbors(u).iter().copied().filter(|&w| !tested(w)));
        }
        for (c, &root) in self.roots.iter().enumerate() {
            if !touched[c] {
                out.insert(root);
            }
        }
        out
    }

    fn value(&mut self, code: usize) -> f64 {
        if !self.value[code].is_nan() {
            return self.value[code];
        }
        let beta = self.reward.beta();
        let mut best: Option<(f64, NodeId)> = None;
        for a in self.frontier(code) {
            let mut q = 0.0;
            for label in 0..2u8 {
                let p = self.marginals.conditional(code, a, label);
                if p == 0.0 {
                    continue;
                }
                let next = code + (1 + usize::from(label)) * self.pow3[a];
                q += p * (self.reward.reward(a, label) + beta * self.value(next));
            }
            if best.is_none_or(|(bq, _)| q > bq) {
                best = Some((q, a));
            }
        }
        let (v, a) = best.map_or((0.0, UNSET), |(q, a)| (q, a as u8));
        self.value[code] = v;
        self.action[code] = a;
        v
    }
}

/// Follows the precomputed optimal action table.
#[derive(Debug, Clone, Copy)]
pub struct OptimalPolicy<'a> {
    table: &'a OptimalTable,
}

impl<'a> OptimalPolicy<'a> {
    pub fn new(table: &'a OptimalTable) -> Self {
        Self { table }
    }
}

impl Policy for OptimalPolicy<'_> {
    fn name(&self) -> &'static str {
        "optimal"
    }

    fn is_deterministic(&self) -> bool {
        true
    }

    fn choose(&mut self, state: &ExplorationState, _rng: &mut dyn RngCore) -> Result<NodeId, PolicyError> {
        if state.is_terminal() {
            return Err(PolicyError::EmptyFrontier);
        }
        self.table.action_of(state).ok_or(PolicyError::UnreachableState)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PolicyKind {
    Random,
    Greedy,
    Gittins,
    Optimal,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 4] =
        [PolicyKind::Random, PolicyKind::Greedy, PolicyKind::Gittins, PolicyKind::Optimal];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Random => "random",
            PolicyKind::Greedy => "greedy",
            PolicyKind::Gittins => "gittins",
            PolicyKind::Optimal => "optimal",
        }
    }

    pub fn is_deterministic(self) -> bool {
        self != PolicyKind::Random
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = PolicyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s.to_ascii_lowercase())
            .ok_or_else(|| PolicyError::UnknownPolicy(s.to_owned()))
    }
}

/// A model, its rewards and the priority roots every policy shares.
#[derive(Debug, Clone)]
pub struct Setting {
    pub model: PairwiseModel,
    pub reward: RewardSpec,
    pub roots: Vec<NodeId>,
}

impl Setting {
    pub fn new(model: PairwiseModel, reward: RewardSpec, rule: &RootRule) -> Result<Self, PolicyError> {
        let (roots, _) = priority_roots(model.graph(), &model, rule)?;
        Ok(Self { model, reward, roots })
    }

    /// Binary reward at discount `beta` with the default root rule.
    pub fn binary(model: PairwiseModel, beta: f64) -> Result<Self, PolicyError> {
        let reward = RewardSpec::binary(model.node_count(), beta)?;
        Self::new(model, reward, &RootRule::MaxMarginal)
    }

    pub fn with_beta(&self, beta: f64) -> Result<Self, PolicyError> {
        Ok(Self { model: self.model.clone(), reward: self.reward.with_beta(beta)?, roots: self.roots.clone() })
    }

    pub fn graph(&self) -> &Graph {
        self.model.graph()
    }

    pub fn node_count(&self) -> usize {
        self.model.node_count()
    }

    pub fn initial_state(&self) -> ExplorationState {
        ExplorationState::initial(self.node_count(), &self.roots)
    }

    pub fn index_table(&self, options: IndexOptions) -> Result<IndexTable, PolicyError> {
        Ok(compute_index_table(
            self.graph(),
            &self.model,
            &self.reward,
            &RootRule::Explicit(self.roots.clone()),
            options,
        )?)
    }

    pub fn optimal_table(&self, marginals: &PartialMarginals) -> Result<OptimalTable, PolicyError> {
        OptimalTable::solve(self.graph(), marginals, &self.reward, &self.roots)
    }
}

/// A policy kind together with any table it needs, ready to hand out
/// per-rollout policy values.
#[derive(Debug)]
pub struct PreparedPolicy<'a> {
    kind: PolicyKind,
    setting: &'a Setting,
    gittins: Option<IndexTable>,
    optimal: Option<OptimalTable>,
}

impl<'a> PreparedPolicy<'a> {
    pub fn new(kind: PolicyKind, setting: &'a Setting) -> Result<Self, PolicyError> {
        Self::with_marginals(kind, setting, None)
    }

    /// Like [`Self::new`], reusing partial marginals for the Optimal table.
    pub fn with_marginals(
        kind: PolicyKind,
        setting: &'a Setting,
        marginals: Option<&PartialMarginals>,
    ) -> Result<Self, PolicyError> {
        let gittins = match kind {
            PolicyKind::Gittins => Some(setting.index_table(IndexOptions::default())?),
            _ => None,
        };
        let optimal = match (kind, marginals) {
            (PolicyKind::Optimal, Some(m)) => Some(setting.optimal_table(m)?),
            (PolicyKind::Optimal, None) => {
                Some(setting.optimal_table(&PartialMarginals::new(&setting.model)?)?)
            }
            _ => None,
        };
        Ok(Self { kind, setting, gittins, optimal })
    }

    pub fn kind(&self) -> PolicyKind {
        self.kind
    }

    pub fn setting(&self) -> &'a Setting {
        self.setting
    }

    pub fn index_table(&self) -> Option<&IndexTable> {
        self.gittins.as_ref()
    }

    pub fn optimal_table(&self) -> Option<&OptimalTable> {
        self.optimal.as_ref()
    }

    pub fn instantiate(&self) -> Box<dyn Policy + Send + '_> {
        match self.kind {
            PolicyKind::Random => Box::new(RandomPolicy),
            PolicyKind::Greedy => Box::new(GreedyPolicy::new(&self.setting.model)),
            PolicyKind::Gittins => {
                Box::new(GittinsPolicy::new(self.gittins.as_ref().expect("built with the policy")))
            }
            PolicyKind::Optimal => {
                Box::new(OptimalPolicy::new(self.optimal.as_ref().expect("built with the policy")))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{random_tree, seeded_rng};

    /// Tree with edges 0-1, 0-2, 0-3, 1-4, 2-5, 3-6, 3-7.
    fn figure_tree() -> Graph {
        Graph::from_edges(8, &[(0, 1), (0, 2), (0, 3), (1, 4), (2, 5), (3, 6), (3, 7)]).unwrap()
    }

    #[test]
    fn frontier_after_two_tests() {
        let g = figure_tree();
        let mut s = ExplorationState::initial(8, &[0]);
        s.advance(0, 1, &g).unwrap();
        s.advance(2, 0, &g).unwrap();
        assert_eq!(s.frontier().iter().copied().collect::<Vec<_>>(), vec![1, 3, 5]);
        assert!(s.frontier_invariant_holds(&g, &[0]));
        assert_eq!(s.step(), 2);
    }

    #[test]
    fn advance_errors() {
        let g = figure_tree();
        let mut s = ExplorationState::initial(8, &[0]);
        assert_eq!(s.advance(4, 1, &g), Err(PolicyError::NotInFrontier(4)));
        assert_eq!(s.advance(0, 2, &g), Err(PolicyError::InvalidLabel(2)));
        s.advance(0, 1, &g).unwrap();
        assert_eq!(s.advance(0, 1, &g), Err(PolicyError::NotInFrontier(0)));
    }

    #[test]
    fn single_node_terminates() {
        let g = Graph::from_edges(1, &[]).unwrap();
        let mut s = ExplorationState::initial(1, &[0]);
        s.advance(0, 0, &g).unwrap();
        assert!(s.is_terminal());
    }

    #[test]
    fn untouched_component_root_stays_available() {
        let g = Graph::from_edges(4, &[(0, 1), (2, 3)]).unwrap();
        let roots = [1, 2];
        let mut s = ExplorationState::initial(4, &roots);
        assert_eq!(s.frontier().len(), 2);
        s.advance(1, 1, &g).unwrap();
        s.advance(0, 0, &g).unwrap();
        assert_eq!(s.frontier().iter().copied().collect::<Vec<_>>(), vec![2]);
        assert!(s.frontier_invariant_holds(&g, &roots));
    }

    #[test]
    fn random_policy_is_uniform_and_reproducible() {
        let g = figure_tree();
        let mut s = ExplorationState::initial(8, &[0]);
        s.advance(0, 1, &g).unwrap();
        let mut rng = seeded_rng(1);
        let mut counts = [0usize; 8];
        let draws = 100_000;
        for _ in 0..draws {
            counts[RandomPolicy.choose(&s, &mut rng).unwrap()] += 1;
        }
        for v in [1, 2, 3] {
            assert!((counts[v] as f64 / draws as f64 - 1.0 / 3.0).abs() < 0.01);
        }
        let seq = |seed| {
            let mut rng = seeded_rng(seed);
            (0..20).map(|_| RandomPolicy.choose(&s, &mut rng).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(seq(5), seq(5));
        let single = ExplorationState::initial(8, &[6]);
        assert_eq!(RandomPolicy.choose(&single, &mut rng).unwrap(), 6);
    }

    #[test]
    fn greedy_ties_go_to_smallest_id() {
        let model = PairwiseModel::uniform(Graph::from_edges(3, &[]).unwrap());
        let s = ExplorationState::initial(3, &[0, 1, 2]);
        let mut greedy = GreedyPolicy::new(&model);
        assert_eq!(greedy.choose(&s, &mut seeded_rng(0)).unwrap(), 0);
    }

    #[test]
    fn greedy_cache_matches_fresh_inference() {
        let model = PairwiseModel::random(random_tree(12, 4), 9);
        let setting = Setting::binary(model, 0.9).unwrap();
        let mut cached = GreedyPolicy::new(&setting.model);
        let mut state = setting.initial_state();
        let mut rng = seeded_rng(2);
        while !state.is_terminal() {
            for &v in state.frontier() {
                let fresh = setting.model.conditional(v, 1, state.evidence()).unwrap();
                assert_eq!(cached.posterior_positive(v, &state).unwrap(), fresh);
            }
            let a = cached.choose(&state, &mut rng).unwrap();
            state.advance(a, rng.random_range(0..2), setting.graph()).unwrap();
        }
    }

    #[test]
    fn optimal_single_node_value_is_marginal() {
        let g = Graph::from_edges(1, &[]).unwrap();
        let model = PairwiseModel::new(g, vec![0.0, 0.4], vec![0.0; 4]).unwrap();
        let p = model.conditional(0, 1, &Evidence::empty(1)).unwrap();
        for beta in [0.3, 0.9] {
            let setting = Setting::binary(model.clone(), beta).unwrap();
            let m = PartialMarginals::new(&setting.model).unwrap();
            let t = setting.optimal_table(&m).unwrap();
            assert!((t.initial_value() - p).abs() < 1e-15);
        }
    }

    #[test]
    fn partial_marginals_sum_correctly() {
        let model = PairwiseModel::random(random_tree(5, 1), 3);
        let m = PartialMarginals::new(&model).unwrap();
        assert!((m.probability(0) - 1.0).abs() < 1e-12);
        let ev = Evidence::from_pairs(5, &[(1, 1), (3, 0)]).unwrap();
        let code = m.code_of(&ev);
        let p = m.conditional(code, 2, 1);
        assert!((p - model.conditional(2, 1, &ev).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn optimal_guard() {
        let model = PairwiseModel::uniform(random_tree(15, 0));
        assert_eq!(
            PartialMarginals::new(&model).unwrap_err(),
            PolicyError::TooLarge { n: 15, max: OPTIMAL_MAX_NODES }
        );
    }

    #[test]
    fn every_policy_runs_n_steps_within_the_frontier() {
        let g = crate::graph::add_random_non_tree_edges(&random_tree(9, 2), 3, 5).unwrap();
        let setting = Setting::binary(PairwiseModel::random(g, 11), 0.8).unwrap();
        for kind in PolicyKind::ALL {
            let prepared = PreparedPolicy::new(kind, &setting).unwrap();
            let mut policy = prepared.instantiate();
            let mut state = setting.initial_state();
            let mut rng = seeded_rng(3);
            let mut steps = 0;
            while !state.is_terminal() {
                let a = policy.choose(&state, &mut rng).unwrap();
                assert!(state.frontier().contains(&a));
                state.advance(a, rng.random_range(0..2), setting.graph()).unwrap();
                assert!(state.frontier_invariant_holds(setting.graph(), &setting.roots));
                steps += 1;
            }
            assert_eq!(steps, 9);
        }
    }

    #[test]
    fn policy_names_round_trip() {
        for kind in PolicyKind::ALL {
            assert_eq!(kind.name().parse::<PolicyKind>().unwrap(), kind);
        }
        assert!(matches!("dqn".parse::<PolicyKind>(), Err(PolicyError::UnknownPolicy(_))));
    }
}
