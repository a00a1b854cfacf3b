use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use afeg::eval::{
    aggregated_components, describe, edge_suite, instance_seed, rollout, run_experiment, synthetic_instance,
    tree_suite, EvalError, EvalSummary, ExperimentInstance, ExperimentPlan, ExperimentResults, EXACT_MAX_NODES,
};
use afeg::exec::{with_jobs, Execution};
use afeg::fit::{fit_parameters, FitOptions};
use afeg::formats::{
    index_dump, labels_to_json, parse_labels, read_file, trace_records, write_file, write_results_csv, write_trace,
    ExperimentConfig, FormatError, Instance, ModelFile, Objective,
};
use afeg::gittins::IndexOptions;
use afeg::mrf::MrfError;
use afeg::policy::{PolicyError, PolicyKind, PreparedPolicy, Setting};
use afeg::PairwiseModel;
use anyhow::{anyhow, bail, Context, Result};

use crate::{Cli, Command, EvalArgs, Experiment, FitArgs, GenerateArgs, IndexArgs, ReproduceArgs, SourceArgs};

/// Command-line misuse that clap cannot express.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(String);

/// A size guard refused the request.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct ResourceError(String);

fn policy_is_resource(e: &PolicyError) -> bool {
    matches!(e, PolicyError::TooLarge { .. } | PolicyError::Mrf(MrfError::TooLarge { .. }))
}

fn eval_is_resource(e: &EvalError) -> bool {
    match e {
        EvalError::TooLarge { .. } | EvalError::Mrf(MrfError::TooLarge { .. }) => true,
        EvalError::Policy(p) => policy_is_resource(p),
        _ => false,
    }
}

pub fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.is::<UsageError>() {
            return 2;
        }
        let resource = cause.is::<ResourceError>()
            || cause.downcast_ref::<EvalError>().is_some_and(eval_is_resource)
            || cause.downcast_ref::<PolicyError>().is_some_and(policy_is_resource)
            || cause.downcast_ref::<MrfError>().is_some_and(|m| matches!(m, MrfError::TooLarge { .. }));
        if resource {
            return 4;
        }
        if cause.is::<std::io::Error>() || matches!(cause.downcast_ref::<FormatError>(), Some(FormatError::Io { .. }))
        {
            return 1;
        }
    }
    3
}

pub fn run(cli: Cli) -> Result<()> {
    match (cli.serve, cli.command) {
        (true, None) | (false, Some(Command::Serve)) => serve(),
        (true, Some(_)) => Err(UsageError("--serve does not take a subcommand".into()).into()),
        (false, None) => Err(UsageError("no subcommand given; see --help".into()).into()),
        (false, Some(command)) => match command {
            Command::Generate(args) => generate(args),
            Command::Index(args) => index(args),
            Command::Eval(args) => eval(args),
            Command::Fit(args) => fit(args),
            Command::Reproduce(args) => reproduce(args),
            Command::Serve => unreachable!(),
        },
    }
}

struct Loaded {
    instance: Instance,
    model: PairwiseModel,
    id: String,
}

fn load_model(path: &Path, instance: &Instance) -> Result<PairwiseModel> {
    Ok(ModelFile::load(path)?.bind(instance)?)
}

fn load_source(source: &SourceArgs, seed: u64) -> Result<Loaded> {
    if let Some(path) = &source.instance {
        let instance = Instance::load(path)?;
        let Some(model_path) = &source.model else {
            return Err(UsageError("--instance needs --model".into()).into());
        };
        let model = load_model(model_path, &instance)?;
        let id = path.file_stem().map_or_else(|| "instance".into(), |s| s.to_string_lossy().into_owned());
        return Ok(Loaded { instance, model, id });
    }
    let n = match (source.tree, source.n) {
        (Some(Some(a)), Some(b)) if a != b => {
            return Err(UsageError(format!("--tree {a} and -n {b} disagree")).into());
        }
        (Some(Some(n)), _) | (_, Some(n)) => n,
        _ => return Err(UsageError("pass --instance PATH or --tree N".into()).into()),
    };
    if n == 0 {
        bail!("a graph needs at least one node");
    }
    let generated = synthetic_instance(n, source.extra_edges, source.d, seed)?;
    let instance = Instance::numbered(generated.graph().clone());
    let model = match &source.model {
        Some(path) => load_model(path, &instance)?,
        None => generated,
    };
    let id = format!("n{n}-k{}-seed{seed}", source.extra_edges);
    Ok(Loaded { instance, model, id })
}

fn emit(out: Option<&Path>, contents: &str) -> Result<()> {
    match out {
        Some(path) => Ok(write_file(path, contents.as_bytes())?),
        None => {
            println!("{contents}");
            Ok(())
        }
    }
}

fn generate(args: GenerateArgs) -> Result<()> {
    let loaded = load_source(&args.source, args.seed)?;
    let labels = loaded.model.sample_realization(args.seed)?;
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    write_file(&args.out.join("instance.json"), loaded.instance.to_json().as_bytes())?;
    write_file(&args.out.join("model.json"), ModelFile::of(&loaded.model).to_json().as_bytes())?;
    write_file(&args.out.join("labels.json"), labels_to_json(&labels, &loaded.instance).as_bytes())?;
    println!("{}: {}", args.out.display(), describe(&loaded.model));
    Ok(())
}

fn index(args: IndexArgs) -> Result<()> {
    let loaded = load_source(&args.source, args.seed)?;
    let setting = Setting::binary(loaded.model, args.beta)?;
    let start = Instant::now();
    let table = setting.index_table(IndexOptions::default())?;
    let elapsed = start.elapsed().as_secs_f64();
    let names = |v: usize| loaded.instance.name(v).to_owned();
    let forest = table.forest();
    let roots: Vec<String> = forest.roots().iter().map(|&r| names(r)).collect();
    eprintln!("roots: {}", roots.join(", "));
    for &(a, b) in forest.dropped_edges() {
        eprintln!("dropped edge: {} - {}", names(a), names(b));
    }
    eprintln!(
        "{} dropped edges, {} oracle calls, {} max pieces, {:.3} s",
        forest.dropped_edges().len(),
        table.oracle_calls(),
        table.max_pieces(),
        elapsed
    );
    emit(args.out.as_deref(), &index_dump(&table, &loaded.instance))
}

fn undiscounted_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().map_or_else(|| "results".into(), |s| s.to_string_lossy().into_owned());
    path.with_file_name(format!("{stem}_undiscounted.csv"))
}

fn csv_bytes(summaries: &[EvalSummary], objective: Objective) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_results_csv(&mut buf, summaries, objective)?;
    Ok(buf)
}

fn with_aggregates(results: &ExperimentResults) -> Vec<EvalSummary> {
    results.summaries.iter().chain(&results.aggregates).cloned().collect()
}

fn config_instances(path: &Path, config: &ExperimentConfig) -> Result<Vec<ExperimentInstance>> {
    let base = path.parent().unwrap_or(Path::new("."));
    match (&config.instances, &config.generator) {
        (Some(refs), None) => refs
            .iter()
            .map(|r| {
                let instance = Instance::load(&base.join(&r.instance))?;
                let model = load_model(&base.join(&r.model), &instance)?;
                let id = r.id.clone().unwrap_or_else(|| {
                    Path::new(&r.instance).file_stem().map_or(r.instance.clone(), |s| s.to_string_lossy().into_owned())
                });
                Ok(ExperimentInstance { group: "all".into(), id, model })
            })
            .collect(),
        (None, Some(g)) => {
            let mut out = Vec::new();
            for &n in &g.n {
                for i in 0..g.count {
                    out.push(ExperimentInstance {
                        id: format!("n{n}-k{}-{i}", g.extra_edges),
                        group: format!("n{n}"),
                        model: synthetic_instance(n, g.extra_edges, g.d, instance_seed(config.seed, n * 1000 + i))?,
                    });
                }
            }
            Ok(out)
        }
        _ => bail!("{}: give exactly one of \"instances\" and \"generator\"", path.display()),
    }
}

fn check_exact_guard(exact_up_to: usize) -> Result<()> {
    if exact_up_to > EXACT_MAX_NODES {
        return Err(ResourceError(format!("exact evaluation is limited to {EXACT_MAX_NODES} nodes")).into());
    }
    Ok(())
}

fn eval(args: EvalArgs) -> Result<()> {
    check_exact_guard(args.exact_up_to)?;
    let (instances, plan) = match &args.config {
        Some(path) => {
            let config = ExperimentConfig::parse(&read_file(path)?)?;
            let policies = config.policies.iter().map(|p| p.parse()).collect::<Result<Vec<PolicyKind>, _>>()?;
            let exact_up_to = config.exact_up_to.unwrap_or(args.exact_up_to);
            check_exact_guard(exact_up_to)?;
            let plan = ExperimentPlan {
                policies,
                betas: config.betas.clone(),
                rollouts: config.rollouts,
                seed: config.seed,
                exact_up_to,
                skip_infeasible: false,
                ..ExperimentPlan::default()
            };
            (config_instances(path, &config)?, plan)
        }
        None => {
            let loaded = load_source(&args.source, args.seed)?;
            let plan = ExperimentPlan {
                policies: args.policy.clone(),
                betas: args.beta.clone(),
                rollouts: args.rollouts,
                seed: args.seed,
                exact_up_to: args.exact_up_to,
                skip_infeasible: false,
                ..ExperimentPlan::default()
            };
            if let Some(trace_path) = &args.trace {
                let setting = Setting::binary(loaded.model.clone(), plan.betas[0])?;
                let prepared = PreparedPolicy::new(plan.policies[0], &setting)?;
                let run = rollout(prepared.instantiate().as_mut(), &setting, args.seed)?;
                let mut buf = Vec::new();
                write_trace(&mut buf, &trace_records(&run.trace, plan.betas[0], &loaded.instance))?;
                write_file(trace_path, &buf)?;
            }
            let group = loaded.id.clone();
            (vec![ExperimentInstance { id: loaded.id, group, model: loaded.model }], plan)
        }
    };
    let results = with_jobs(args.jobs, || run_experiment(&instances, &plan))?;
    let summaries = if instances.len() > 1 { with_aggregates(&results) } else { results.summaries.clone() };
    let discounted = csv_bytes(&summaries, Objective::Discounted)?;
    match &args.out {
        Some(path) => {
            write_file(path, &discounted)?;
            write_file(&undiscounted_path(path), &csv_bytes(&summaries, Objective::Undiscounted)?)?;
        }
        None => print!("{}", String::from_utf8(discounted).expect("csv is utf-8")),
    }
    Ok(())
}

fn fit(args: FitArgs) -> Result<()> {
    let instance = Instance::load(&args.instance)?;
    let labels = parse_labels(&read_file(&args.labels)?, &instance)?;
    if args.l2.is_nan() || args.l2 < 0.0 {
        bail!("--l2 must be non-negative");
    }
    let options = FitOptions { max_iters: args.max_iters, grad_tolerance: args.tolerance, l2: args.l2, ..FitOptions::default() };
    let fitted = with_jobs(args.jobs, || fit_parameters(&instance.graph, &labels, &options))?;
    let d = &fitted.diagnostics;
    eprintln!(
        "{} iterations, gradient norm {:.3e}, {}",
        d.iterations,
        d.final_grad_norm,
        if d.converged { "converged" } else { "not converged" }
    );
    if let Some(path) = &args.diagnostics {
        let json = serde_json::to_string_pretty(&fitted.diagnostics).expect("diagnostics serialize");
        write_file(path, json.as_bytes())?;
    }
    let model = ModelFile { d: instance.graph.covariate_dim(), theta1: fitted.theta1, theta2: fitted.theta2 };
    emit(args.out.as_deref(), &model.to_json())
}

fn write_bundle(dir: &Path, name: &str, results: &ExperimentResults) -> Result<()> {
    let summaries = with_aggregates(results);
    let disc = dir.join(format!("{name}_discounted.csv"));
    let undisc = dir.join(format!("{name}_undiscounted.csv"));
    write_file(&disc, &csv_bytes(&summaries, Objective::Discounted)?)?;
    write_file(&undisc, &csv_bytes(&summaries, Objective::Undiscounted)?)?;
    println!("wrote {} and {}", disc.display(), undisc.display());
    Ok(())
}

fn index_budget(results: &ExperimentResults) -> (f64, f64) {
    let total: f64 = results.index_seconds.iter().map(|x| x.2).sum();
    let max = results.index_seconds.iter().map(|x| x.2).fold(0.0, f64::max);
    (total, max)
}

fn reproduce(args: ReproduceArgs) -> Result<()> {
    if args.rollouts == 0 || args.instances == 0 {
        bail!("--rollouts and --instances must be positive");
    }
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let start = Instant::now();
    let base = ExperimentPlan {
        rollouts: args.rollouts,
        seed: args.seed,
        execution: Execution::Parallel,
        ..ExperimentPlan::default()
    };
    let (name, instances, plan) = match args.experiment {
        Experiment::Trees => {
            let plan = ExperimentPlan { policies: PolicyKind::ALL.to_vec(), betas: vec![0.5, 0.7, 0.9], ..base };
            ("exp1", tree_suite(&[10, 50, 100], args.instances, args.d, args.seed)?, plan)
        }
        Experiment::Edges => {
            let instances = edge_suite(50, &[0, 2, 4, 6, 8, 10], args.instances, args.d, args.seed)?;
            ("exp2", instances, ExperimentPlan { betas: vec![0.9], ..base })
        }
        Experiment::Components => {
            let truth = aggregated_components(args.tau, args.d, args.seed)?;
            println!("aggregated graph: {}", describe(&truth));
            // the stand-in for observed statuses: one realization of the generating model
            let labels = truth.sample_realization(args.seed)?;
            let options = FitOptions { l2: 0.01, max_iters: 5000, grad_tolerance: 1e-4, ..FitOptions::default() };
            let fit_start = Instant::now();
            let fitted = with_jobs(args.jobs, || fit_parameters(truth.graph(), &labels, &options))?;
            println!(
                "fit: {} iterations, gradient norm {:.3e}, {:.2} s",
                fitted.diagnostics.iterations,
                fitted.diagnostics.final_grad_norm,
                fit_start.elapsed().as_secs_f64()
            );
            let model = PairwiseModel::new(truth.graph().clone(), fitted.theta1, fitted.theta2)?;
            let instance = Instance::numbered(model.graph().clone());
            write_file(&args.out.join("exp3s_instance.json"), instance.to_json().as_bytes())?;
            write_file(&args.out.join("exp3s_model.json"), ModelFile::of(&model).to_json().as_bytes())?;
            write_file(&args.out.join("exp3s_labels.json"), labels_to_json(&labels, &instance).as_bytes())?;
            let id = format!("tau{}", args.tau);
            let instances = vec![ExperimentInstance { id: id.clone(), group: id, model }];
            ("exp3s", instances, ExperimentPlan { betas: vec![0.99], ..base })
        }
    };
    let results = with_jobs(args.jobs, || run_experiment(&instances, &plan))?;
    write_bundle(&args.out, name, &results)?;
    let (total, max) = index_budget(&results);
    println!("index computation: {total:.3} s total, {max:.3} s max per instance");
    println!("wall time: {:.1} s", start.elapsed().as_secs_f64());
    Ok(())
}

fn serve() -> Result<()> {
    let addr = afeg_advisor::addr_from_env()
        .map_err(|e| anyhow!("{}: {e}", afeg_advisor::ADDR_ENV))?;
    let advisor = Arc::new(afeg_advisor::Advisor::from_env()?);
    let runtime = tokio::runtime::Runtime::new()?;
    eprintln!("advisor listening on {addr}");
    runtime.block_on(afeg_advisor::serve(addr, advisor))?;
    Ok(())
}
