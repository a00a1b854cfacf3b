//! Policy evaluation under the discounted objective `Σ_t β^{t−1} r_t`.
//!
//! Exact evaluation weights the run of a deterministic policy on every
//! realization by its probability. Monte Carlo evaluation averages
//! independent rollouts, each seeded with `base_seed + index`; rollouts are
//! grouped in fixed-size chunks whose statistics are merged in chunk order,
//! so results do not depend on the execution mode.
//!
//! Random and Greedy do not look at `β`, so one set of rollouts serves every
//! discount factor of an experiment.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::exec::{map_indices, pairwise_sum, Execution};
use crate::gittins::RewardSpec;
use crate::graph::{
    add_random_non_tree_edges, connected_components, random_binary_covariates, random_tree, seeded_rng,
    Graph, GraphError, NodeId,
};
use crate::mrf::{min_fill_width, Evidence, ExactSampler, Label, MrfError, PairwiseModel};
use crate::policy::{
    PartialMarginals, Policy, PolicyError, PolicyKind, PreparedPolicy, Setting, OPTIMAL_MAX_NODES,
};

/// Largest instance evaluated by enumerating realizations.
pub const EXACT_MAX_NODES: usize = 14;

const CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("exact evaluation is limited to {max} nodes, instance has {n}")]
    TooLarge { n: usize, max: usize },
    #[error("exact evaluation needs a deterministic policy, {0} is randomised")]
    Stochastic(PolicyKind),
    #[error("invalid experiment configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Mrf(#[from] MrfError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

impl From<crate::gittins::GittinsError> for EvalError {
    fn from(e: crate::gittins::GittinsError) -> Self {
        EvalError::Policy(e.into())
    }
}

/// One step of a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub node: NodeId,
    pub label: Label,
    pub reward: f64,
}

/// Steps of one episode, in order.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub steps: Vec<Step>,
}

impl Trace {
    pub fn rewards(&self) -> impl Iterator<Item = f64> + '_ {
        self.steps.iter().map(|s| s.reward)
    }

    /// Cumulative `Σ_{s ≤ t} β^{s−1} r_s` for every `t`.
    pub fn discounted_curve(&self, beta: f64) -> Vec<f64> {
        let mut weight = 1.0;
        let mut total = 0.0;
        self.rewards()
            .map(|r| {
                total += weight * r;
                weight *= beta;
                total
            })
            .collect()
    }

    pub fn undiscounted_curve(&self) -> Vec<f64> {
        let mut total = 0.0;
        self.rewards()
            .map(|r| {
                total += r;
                total
            })
            .collect()
    }

    pub fn discounted_total(&self, beta: f64) -> f64 {
        self.discounted_curve(beta).last().copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutResult {
    pub trace: Trace,
    pub discounted: Vec<f64>,
    pub undiscounted: Vec<f64>,
    pub seed: u64,
    pub elapsed: Duration,
}

/// Runs `policy` to completion on a fixed realization.
pub fn run_on_realization(
    policy: &mut dyn Policy,
    setting: &Setting,
    realization: &[Label],
    rng: &mut ChaCha8Rng,
) -> Result<Trace, PolicyError> {
    policy.reset();
    let g = setting.graph();
    let mut state = setting.initial_state();
    let mut steps = Vec::with_capacity(g.node_count());
    while !state.is_terminal() {
        let node = policy.choose(&state, rng)?;
        let label = realization[node];
        state.advance(node, label, g)?;
        debug_assert!(state.frontier_invariant_holds(g, &setting.roots));
        steps.push(Step { node, label, reward: setting.reward.reward(node, label) });
    }
    Ok(Trace { steps })
}

/// Samples a realization by chaining conditionals, then runs the policy on
/// it. Both the realization and the policy's choices come from `seed`.
pub fn rollout(policy: &mut dyn Policy, setting: &Setting, seed: u64) -> Result<RolloutResult, EvalError> {
    let start = Instant::now();
    let realization = setting.model.sample_realization(seed)?;
    let mut rng = seeded_rng(seed);
    let trace = run_on_realization(policy, setting, &realization, &mut rng)?;
    Ok(RolloutResult {
        discounted: trace.discounted_curve(setting.reward.beta()),
        undiscounted: trace.undiscounted_curve(),
        trace,
        seed,
        elapsed: start.elapsed(),
    })
}

/// Running mean and sum of squared deviations (Chan et al. merge).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Moments {
    pub count: f64,
    pub mean: f64,
    pub m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.count += 1.0;
        let delta = x - self.mean;
        self.mean += delta / self.count;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(&mut self, other: &Moments) {
        if other.count == 0.0 {
            return;
        }
        let total = self.count + other.count;
        let delta = other.mean - self.mean;
        self.mean += delta * other.count / total;
        self.m2 += other.m2 + delta * delta * self.count * other.count / total;
        self.count = total;
    }

    /// Standard error of the mean, with the `n − 1` sample variance.
    pub fn stderr(&self) -> f64 {
        if self.count < 2.0 {
            return 0.0;
        }
        (self.m2 / (self.count - 1.0) / self.count).sqrt()
    }
}

/// Per-timestep mean and standard error.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
}

impl Curve {
    fn from_moments(moments: &[Moments]) -> Self {
        Self {
            mean: moments.iter().map(|m| m.mean).collect(),
            stderr: moments.iter().map(Moments::stderr).collect(),
        }
    }

    fn exact(mean: Vec<f64>) -> Self {
        let stderr = vec![0.0; mean.len()];
        Self { mean, stderr }
    }

    pub fn last_mean(&self) -> f64 {
        self.mean.last().copied().unwrap_or(0.0)
    }

    pub fn last_stderr(&self) -> f64 {
        self.stderr.last().copied().unwrap_or(0.0)
    }
}

/// Evaluation of one policy on one instance at one discount factor.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub instance: String,
    pub policy: PolicyKind,
    pub beta: f64,
    pub discounted: Curve,
    pub undiscounted: Curve,
    /// 0 for exact evaluation.
    pub n_rollouts: usize,
}

impl EvalSummary {
    pub fn is_exact(&self) -> bool {
        self.n_rollouts == 0
    }
}

/// Expected discounted and undiscounted curves of a deterministic policy,
/// computed by enumerating all `2^n` realizations. Returns one discounted
/// curve per entry of `betas` and the undiscounted curve.
pub fn exact_curves(
    prepared: &PreparedPolicy<'_>,
    joint: &[f64],
    betas: &[f64],
    exec: Execution,
) -> Result<(Vec<Vec<f64>>, Vec<f64>), EvalError> {
    let setting = prepared.setting();
    let n = setting.node_count();
    if n > EXACT_MAX_NODES {
        return Err(EvalError::TooLarge { n, max: EXACT_MAX_NODES });
    }
    if !prepared.kind().is_deterministic() {
        return Err(EvalError::Stochastic(prepared.kind()));
    }
    let masks = joint.len();
    let chunks = masks.div_ceil(CHUNK);
    let partial = map_indices(chunks, exec, |c| -> Result<_, EvalError> {
        let mut policy = prepared.instantiate();
        let mut rng = seeded_rng(0);
        let mut disc = vec![vec![Vec::with_capacity(CHUNK); n]; betas.len()];
        let mut undisc = vec![Vec::with_capacity(CHUNK); n];
        for mask in c * CHUNK..((c + 1) * CHUNK).min(masks) {
            let x: Vec<Label> = (0..n).map(|i| ((mask >> i) & 1) as Label).collect();
            let trace = run_on_realization(policy.as_mut(), setting, &x, &mut rng)?;
            let p = joint[mask];
            for (b, &beta) in betas.iter().enumerate() {
                for (t, v) in trace.discounted_curve(beta).into_iter().enumerate() {
                    disc[b][t].push(p * v);
                }
            }
            for (t, v) in trace.undiscounted_curve().into_iter().enumerate() {
                undisc[t].push(p * v);
            }
        }
        let sum = |cols: &Vec<Vec<f64>>| cols.iter().map(|c| pairwise_sum(c)).collect::<Vec<_>>();
        Ok((disc.iter().map(sum).collect::<Vec<_>>(), sum(&undisc)))
    });
    let mut disc_parts = vec![vec![Vec::with_capacity(chunks); n]; betas.len()];
    let mut undisc_parts = vec![Vec::with_capacity(chunks); n];
    for part in partial {
        let (d, u) = part?;
        for (b, curve) in d.into_iter().enumerate() {
            for (t, v) in curve.into_iter().enumerate() {
                disc_parts[b][t].push(v);
            }
        }
        for (t, v) in u.into_iter().enumerate() {
            undisc_parts[t].push(v);
        }
    }
    let disc = disc_parts.iter().map(|cols| cols.iter().map(|c| pairwise_sum(c)).collect()).collect();
    let undisc = undisc_parts.iter().map(|c| pairwise_sum(c)).collect();
    Ok((disc, undisc))
}

/// Expected discounted reward of a deterministic policy at the setting's `β`.
pub fn exact_value(prepared: &PreparedPolicy<'_>) -> Result<f64, EvalError> {
    let setting = prepared.setting();
    let n = setting.node_count();
    if n > EXACT_MAX_NODES {
        return Err(EvalError::TooLarge { n, max: EXACT_MAX_NODES });
    }
    let joint = setting.model.brute_force_joint()?;
    let (disc, _) = exact_curves(prepared, &joint, &[setting.reward.beta()], Execution::Sequential)?;
    Ok(disc[0].last().copied().unwrap_or(0.0))
}

/// Monte Carlo statistics: one discounted curve per `β` plus the
/// undiscounted curve. Realizations are drawn with an [`ExactSampler`].
pub fn monte_carlo(
    prepared: &PreparedPolicy<'_>,
    rollouts: usize,
    base_seed: u64,
    betas: &[f64],
    exec: Execution,
) -> Result<(Vec<Curve>, Curve), EvalError> {
    let setting = prepared.setting();
    let n = setting.node_count();
    let sampler = ExactSampler::new(&setting.model, &Evidence::empty(n))?;
    let chunks = rollouts.div_ceil(CHUNK);
    let partial = map_indices(chunks, exec, |c| -> Result<_, EvalError> {
        let mut policy = prepared.instantiate();
        let mut disc = vec![vec![Moments::default(); n]; betas.len()];
        let mut undisc = vec![Moments::default(); n];
        for r in c * CHUNK..((c + 1) * CHUNK).min(rollouts) {
            let mut rng = ChaCha8Rng::seed_from_u64(base_seed.wrapping_add(r as u64));
            let x = sampler.sample(&mut rng);
            let trace = run_on_realization(policy.as_mut(), setting, &x, &mut rng)?;
            for (b, &beta) in betas.iter().enumerate() {
                for (t, v) in trace.discounted_curve(beta).into_iter().enumerate() {
                    disc[b][t].push(v);
                }
            }
            for (t, v) in trace.undiscounted_curve().into_iter().enumerate() {
                undisc[t].push(v);
            }
        }
        Ok((disc, undisc))
    });
    let mut disc = vec![vec![Moments::default(); n]; betas.len()];
    let mut undisc = vec![Moments::default(); n];
    for part in partial {
        let (d, u) = part?;
        for (acc, part) in disc.iter_mut().zip(&d) {
            acc.iter_mut().zip(part).for_each(|(a, p)| a.merge(p));
        }
        undisc.iter_mut().zip(&u).for_each(|(a, p)| a.merge(p));
    }
    Ok((disc.iter().map(|m| Curve::from_moments(m)).collect(), Curve::from_moments(&undisc)))
}

/// A named model to evaluate; `group` names the set it is aggregated with.
#[derive(Debug, Clone)]
pub struct ExperimentInstance {
    pub id: String,
    pub group: String,
    pub model: PairwiseModel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPlan {
    pub policies: Vec<PolicyKind>,
    pub betas: Vec<f64>,
    pub rollouts: usize,
    pub seed: u64,
    /// Deterministic policies are evaluated exactly up to this many nodes.
    pub exact_up_to: usize,
    /// Rollouts for Random on instances evaluated exactly.
    pub random_exact_rollouts: usize,
    /// Skip Optimal on instances over its size guard instead of failing.
    pub skip_infeasible: bool,
    pub execution: Execution,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        Self {
            policies: vec![PolicyKind::Random, PolicyKind::Greedy, PolicyKind::Gittins],
            betas: vec![0.9],
            rollouts: 200,
            seed: 0,
            exact_up_to: 10,
            random_exact_rollouts: 10_000,
            skip_infeasible: true,
            execution: Execution::default(),
        }
    }
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.policies.is_empty() {
            return Err(EvalError::Config("no policies".into()));
        }
        if self.betas.is_empty() {
            return Err(EvalError::Config("no discount factors".into()));
        }
        if let Some(b) = self.betas.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(EvalError::Config(format!("discount factor {b} is not in (0, 1)")));
        }
        if self.rollouts == 0 {
            return Err(EvalError::Config("rollouts must be positive".into()));
        }
        if self.exact_up_to > EXACT_MAX_NODES {
            return Err(EvalError::Config(format!(
                "exact evaluation is limited to {EXACT_MAX_NODES} nodes"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResults {
    pub summaries: Vec<EvalSummary>,
    /// Mean over the instances of each group; the standard error is taken
    /// across instance means.
    pub aggregates: Vec<EvalSummary>,
    /// Seconds spent building Gittins tables, per instance and `β`.
    pub index_seconds: Vec<(String, f64, f64)>,
}

/// Evaluates every (instance, policy, β) cell of the plan.
pub fn run_experiment(
    instances: &[ExperimentInstance],
    plan: &ExperimentPlan,
) -> Result<ExperimentResults, EvalError> {
    plan.validate()?;
    if instances.is_empty() {
        return Err(EvalError::Config("no instances".into()));
    }
    let mut summaries = Vec::new();
    let mut index_seconds = Vec::new();
    for (i, inst) in instances.iter().enumerate() {
        let n = inst.model.node_count();
        let base = Setting::binary(inst.model.clone(), plan.betas[0])?;
        let exact = n <= plan.exact_up_to;
        let joint = if exact { Some(base.model.brute_force_joint()?) } else { None };
        let marginals = if exact && plan.policies.contains(&PolicyKind::Optimal) && n <= OPTIMAL_MAX_NODES {
            Some(PartialMarginals::new(&base.model)?)
        } else {
            None
        };
        let seed = plan.seed.wrapping_add((i as u64) << 32);
        log::info!("instance {} ({} nodes)", inst.id, n);
        for &kind in &plan.policies {
            if kind == PolicyKind::Optimal && n > OPTIMAL_MAX_NODES {
                if plan.skip_infeasible {
                    log::info!("skipping optimal on {} ({n} nodes)", inst.id);
                    continue;
                }
                return Err(PolicyError::TooLarge { n, max: OPTIMAL_MAX_NODES }.into());
            }
            let beta_free = matches!(kind, PolicyKind::Random | PolicyKind::Greedy);
            let groups: Vec<Vec<f64>> = if beta_free {
                vec![plan.betas.clone()]
            } else {
                plan.betas.iter().map(|&b| vec![b]).collect()
            };
            for betas in groups {
                let setting = base.with_beta(betas[0])?;
                let start = Instant::now();
                let prepared = PreparedPolicy::with_marginals(kind, &setting, marginals.as_ref())?;
                if kind == PolicyKind::Gittins {
                    index_seconds.push((inst.id.clone(), betas[0], start.elapsed().as_secs_f64()));
                }
                let cells: Vec<(Curve, Curve, usize)> = match (&joint, kind.is_deterministic()) {
                    (Some(joint), true) => {
                        let (disc, undisc) = exact_curves(&prepared, joint, &betas, plan.execution)?;
                        disc.into_iter().map(|d| (Curve::exact(d), Curve::exact(undisc.clone()), 0)).collect()
                    }
                    _ => {
                        let rollouts = if exact { plan.random_exact_rollouts } else { plan.rollouts };
                        let (disc, undisc) = monte_carlo(&prepared, rollouts, seed, &betas, plan.execution)?;
                        disc.into_iter().map(|d| (d, undisc.clone(), rollouts)).collect()
                    }
                };
                for ((discounted, undiscounted, n_rollouts), &beta) in cells.into_iter().zip(&betas) {
                    summaries.push(EvalSummary {
                        instance: inst.id.clone(),
                        policy: kind,
                        beta,
                        discounted,
                        undiscounted,
                        n_rollouts,
                    });
                }
            }
        }
    }
    summaries.sort_by(|a, b| {
        let pos = |s: &EvalSummary| instances.iter().position(|i| i.id == s.instance);
        pos(a).cmp(&pos(b)).then(a.policy.cmp(&b.policy)).then(a.beta.total_cmp(&b.beta))
    });
    let aggregates = aggregate(instances, &summaries);
    Ok(ExperimentResults { summaries, aggregates, index_seconds })
}

fn aggregate(instances: &[ExperimentInstance], summaries: &[EvalSummary]) -> Vec<EvalSummary> {
    let mut groups: Vec<&str> = Vec::new();
    for inst in instances {
        if !groups.contains(&inst.group.as_str()) {
            groups.push(&inst.group);
        }
    }
    let mut keys: Vec<(PolicyKind, f64)> = Vec::new();
    for s in summaries {
        if !keys.iter().any(|&(p, b)| p == s.policy && b == s.beta) {
            keys.push((s.policy, s.beta));
        }
    }
    let mut out = Vec::new();
    for group in groups {
        for &(policy, beta) in &keys {
            let members: Vec<&EvalSummary> = summaries
                .iter()
                .filter(|s| s.policy == policy && s.beta == beta)
                .filter(|s| instances.iter().any(|i| i.id == s.instance && i.group == group))
                .collect();
            let Some(first) = members.first() else { continue };
            let len = first.discounted.mean.len();
            if members.iter().any(|s| s.discounted.mean.len() != len) {
                continue;
            }
            let across = |pick: fn(&EvalSummary) -> &Curve| {
                let moments: Vec<Moments> = (0..len)
                    .map(|t| {
                        let mut m = Moments::default();
                        members.iter().for_each(|s| m.push(pick(s).mean[t]));
                        m
                    })
                    .collect();
                Curve::from_moments(&moments)
            };
            out.push(EvalSummary {
                instance: format!("mean[{group}]"),
                policy,
                beta,
                discounted: across(|s| &s.discounted),
                undiscounted: across(|s| &s.undiscounted),
                n_rollouts: members.iter().map(|s| s.n_rollouts).sum(),
            });
        }
    }
    out
}

/// Random tree with `extra_edges` added edges, i.i.d. Bernoulli(1/2)
/// covariates of dimension `d`, and standard-normal parameters.
pub fn synthetic_instance(n: usize, extra_edges: usize, d: usize, seed: u64) -> Result<PairwiseModel, EvalError> {
    let tree = random_tree(n, seed);
    let g = if extra_edges > 0 { add_random_non_tree_edges(&tree, extra_edges, seed ^ 0xE0E0)? } else { tree };
    let g = g.with_covariates(random_binary_covariates(n, d, seed ^ 0xC0C0))?;
    Ok(PairwiseModel::random(g, seed ^ 0x7E7A))
}

/// Seed of the `i`-th generated instance of an experiment.
pub fn instance_seed(seed: u64, i: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(i as u64 + 1)
}

/// Instances of the tree experiment: `per_size` random trees for each `n`.
pub fn tree_suite(sizes: &[usize], per_size: usize, d: usize, seed: u64) -> Result<Vec<ExperimentInstance>, EvalError> {
    let mut out = Vec::new();
    for &n in sizes {
        for i in 0..per_size {
            out.push(ExperimentInstance {
                id: format!("n{n}-tree{i}"),
                group: format!("n{n}"),
                model: synthetic_instance(n, 0, d, instance_seed(seed, n * 1000 + i))?,
            });
        }
    }
    Ok(out)
}

/// Instances of the extra-edge experiment: the same `per_k` base trees with
/// `k` added edges for every `k`.
pub fn edge_suite(
    n: usize,
    ks: &[usize],
    per_k: usize,
    d: usize,
    seed: u64,
) -> Result<Vec<ExperimentInstance>, EvalError> {
    let mut out = Vec::new();
    for &k in ks {
        for i in 0..per_k {
            out.push(ExperimentInstance {
                id: format!("n{n}-k{k}-tree{i}"),
                group: format!("k{k}"),
                model: synthetic_instance(n, k, d, instance_seed(seed, i))?,
            });
        }
    }
    Ok(out)
}

/// Largest min-fill width accepted for a synthetic component.
pub const COMPONENT_MAX_WIDTH: usize = 8;

/// A many-component contact-network stand-in: random sparse components
/// (trees plus a few extra edges, min-fill width at most 8) are shuffled and
/// appended until the node count exceeds `tau`. One parameter vector is
/// shared by the whole graph.
pub fn aggregated_components(tau: usize, d: usize, seed: u64) -> Result<PairwiseModel, EvalError> {
    let mut rng = seeded_rng(seed);
    let mut pool: Vec<Graph> = Vec::new();
    let mut pooled = 0;
    // twice the threshold so the shuffle matters
    while pooled <= 2 * tau {
        let size = if rng.random_bool(0.5) { rng.random_range(1..=4) } else { rng.random_range(5..=40) };
        let tree = random_tree(size, rng.random());
        let max_extra = size * size.saturating_sub(1) / 2 + 1 - size;
        let extra = (size / 6).min(max_extra);
        let g = add_random_non_tree_edges(&tree, extra, rng.random())?;
        let g = if min_fill_width(&g) <= COMPONENT_MAX_WIDTH { g } else { tree };
        pooled += size;
        pool.push(g);
    }
    for i in (1..pool.len()).rev() {
        let j = rng.random_range(0..=i);
        pool.swap(i, j);
    }
    let mut graph = Graph::from_edges(0, &[])?;
    for component in pool {
        if graph.node_count() > tau {
            break;
        }
        graph = graph.disjoint_union(&component)?;
    }
    let n = graph.node_count();
    let graph = graph.with_covariates(random_binary_covariates(n, d, rng.random()))?;
    Ok(PairwiseModel::random(graph, rng.random()))
}

/// Summary line for an aggregated instance.
pub fn describe(model: &PairwiseModel) -> String {
    let g = model.graph();
    format!(
        "{} nodes, {} edges, {} components, min-fill width {}",
        g.node_count(),
        g.edge_count(),
        connected_components(g).len(),
        min_fill_width(g)
    )
}

/// Rewards for a fixed discount, used by callers that build settings by hand.
pub fn binary_reward(n: usize, beta: f64) -> Result<RewardSpec, EvalError> {
    Ok(RewardSpec::binary(n, beta)?)
}
