//! On-disk formats: instance, model, label and experiment-config JSON, the
//! index dump, JSON-lines traces and the results CSV.
//!
//! Node ids are strings in every file. Internally nodes are numbered
//! densely in natural id order (all-numeric ids compare as numbers, numeric
//! ids sort before other strings), so neither the order of the node list nor
//! the order of the edge list affects any result.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::eval::{Curve, EvalSummary, Trace};
use crate::gittins::{IndexTable, ParentLabel};
use crate::graph::{Graph, GraphError, NodeId};
use crate::mrf::{theta1_len, theta2_len, Label, MrfError, PairwiseModel};

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("duplicate node id {0:?}")]
    DuplicateNode(String),
    #[error("unknown node id {0:?}")]
    UnknownNode(String),
    #[error("model has d = {model}, instance covariates have d = {instance}")]
    DimensionMismatch { model: usize, instance: usize },
    #[error("declared d = {declared} does not match theta lengths {theta1}, {theta2}")]
    ModelShape { declared: usize, theta1: usize, theta2: usize },
    #[error("label {label} of node {node:?} is not binary")]
    InvalidLabel { node: String, label: u64 },
    #[error("node {0:?} has no label")]
    MissingLabel(String),
    #[error("node {0:?} is labelled twice")]
    DuplicateLabel(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Mrf(#[from] MrfError),
}

impl FormatError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        FormatError::Io { path: path.display().to_string(), source }
    }
}

pub fn read_file(path: &Path) -> Result<String, FormatError> {
    std::fs::read_to_string(path).map_err(|e| FormatError::io(path, e))
}

pub fn write_file(path: &Path, contents: &[u8]) -> Result<(), FormatError> {
    std::fs::write(path, contents).map_err(|e| FormatError::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeRecord {
    pub id: String,
    #[serde(default)]
    pub covariates: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceFile {
    pub nodes: Vec<NodeRecord>,
    pub edges: Vec<[String; 2]>,
}

/// A graph together with the external id of every node.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub graph: Graph,
    pub names: Vec<String>,
    lookup: HashMap<String, NodeId>,
}

fn natural_key(id: &str) -> (u8, u128, &str) {
    match id.parse::<u128>() {
        Ok(v) => (0, v, id),
        Err(_) => (1, 0, id),
    }
}

impl Instance {
    /// Graph with ids `"0"`, `"1"`, ... .
    pub fn numbered(graph: Graph) -> Self {
        let names: Vec<String> = (0..graph.node_count()).map(|i| i.to_string()).collect();
        let lookup = names.iter().cloned().zip(0..).collect();
        Self { graph, names, lookup }
    }

    pub fn from_file(file: &InstanceFile) -> Result<Self, FormatError> {
        let mut order: Vec<usize> = (0..file.nodes.len()).collect();
        order.sort_by(|&a, &b| natural_key(&file.nodes[a].id).cmp(&natural_key(&file.nodes[b].id)));
        let mut lookup = HashMap::with_capacity(order.len());
        let mut names = Vec::with_capacity(order.len());
        let mut covariates = Vec::with_capacity(order.len());
        for (dense, &k) in order.iter().enumerate() {
            let node = &file.nodes[k];
            if lookup.insert(node.id.clone(), dense).is_some() {
                return Err(FormatError::DuplicateNode(node.id.clone()));
            }
            names.push(node.id.clone());
            covariates.push(node.covariates.clone());
        }
        let id = |name: &String| lookup.get(name).copied().ok_or_else(|| FormatError::UnknownNode(name.clone()));
        let edges = file
            .edges
            .iter()
            .map(|[a, b]| Ok((id(a)?, id(b)?)))
            .collect::<Result<Vec<_>, FormatError>>()?;
        let graph = Graph::new(names.len(), &edges, covariates)?;
        Ok(Self { graph, names, lookup })
    }

    pub fn parse(json: &str) -> Result<Self, FormatError> {
        Self::from_file(&serde_json::from_str(json)?)
    }

    pub fn load(path: &Path) -> Result<Self, FormatError> {
        Self::parse(&read_file(path)?)
    }

    pub fn to_file(&self) -> InstanceFile {
        InstanceFile {
            nodes: (0..self.graph.node_count())
                .map(|i| NodeRecord { id: self.names[i].clone(), covariates: self.graph.covariates(i).to_vec() })
                .collect(),
            edges: self
                .graph
                .edges()
                .into_iter()
                .map(|(a, b)| [self.names[a].clone(), self.names[b].clone()])
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("instance serializes")
    }

    pub fn id_of(&self, name: &str) -> Result<NodeId, FormatError> {
        self.lookup.get(name).copied().ok_or_else(|| FormatError::UnknownNode(name.to_owned()))
    }

    pub fn name(&self, node: NodeId) -> &str {
        &self.names[node]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub d: usize,
    pub theta1: Vec<f64>,
    pub theta2: Vec<f64>,
}

impl ModelFile {
    pub fn of(model: &PairwiseModel) -> Self {
        Self {
            d: model.graph().covariate_dim(),
            theta1: model.theta1().to_vec(),
            theta2: model.theta2().to_vec(),
        }
    }

    pub fn parse(json: &str) -> Result<Self, FormatError> {
        let file: Self = serde_json::from_str(json)?;
        if file.theta1.len() != theta1_len(file.d) || file.theta2.len() != theta2_len(file.d) {
            return Err(FormatError::ModelShape {
                declared: file.d,
                theta1: file.theta1.len(),
                theta2: file.theta2.len(),
            });
        }
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<Self, FormatError> {
        Self::parse(&read_file(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    /// Binds the parameters to an instance with the same covariate dimension.
    pub fn bind(&self, instance: &Instance) -> Result<PairwiseModel, FormatError> {
        let d = instance.graph.covariate_dim();
        if d != self.d && instance.graph.node_count() > 0 {
            return Err(FormatError::DimensionMismatch { model: self.d, instance: d });
        }
        Ok(PairwiseModel::new(instance.graph.clone(), self.theta1.clone(), self.theta2.clone())?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LabelRecordIn<'a> {
    id: &'a str,
    label: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LabelRecord {
    pub id: String,
    pub label: Label,
}

/// Parses a label file into a full label vector for `instance`.
pub fn parse_labels(json: &str, instance: &Instance) -> Result<Vec<Label>, FormatError> {
    let records: Vec<LabelRecordIn<'_>> = serde_json::from_str(json)?;
    let mut labels: Vec<Option<Label>> = vec![None; instance.graph.node_count()];
    for r in records {
        let node = instance.id_of(r.id)?;
        if r.label > 1 {
            return Err(FormatError::InvalidLabel { node: r.id.to_owned(), label: r.label });
        }
        if labels[node].replace(r.label as Label).is_some() {
            return Err(FormatError::DuplicateLabel(r.id.to_owned()));
        }
    }
    labels
        .into_iter()
        .enumerate()
        .map(|(i, l)| l.ok_or_else(|| FormatError::MissingLabel(instance.names[i].clone())))
        .collect()
}

pub fn labels_to_json(labels: &[Label], instance: &Instance) -> String {
    let records: Vec<LabelRecord> = labels
        .iter()
        .enumerate()
        .map(|(i, &label)| LabelRecord { id: instance.names[i].clone(), label })
        .collect();
    serde_json::to_string_pretty(&records).expect("labels serialize")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IndexRecord<'a> {
    pub node: &'a str,
    pub parent_label: ParentLabel,
    pub index: f64,
}

/// Index dump as a JSON array sorted by (node, parent label).
pub fn index_dump(table: &IndexTable, instance: &Instance) -> String {
    let records: Vec<IndexRecord<'_>> = table
        .entries()
        .into_iter()
        .map(|e| IndexRecord { node: instance.name(e.node), parent_label: e.parent_label, index: e.index })
        .collect();
    serde_json::to_string_pretty(&records).expect("index dump serializes")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: usize,
    pub node: String,
    pub label: Label,
    pub reward: f64,
    /// `β^{t−1} · reward`
    pub discounted: f64,
}

pub fn trace_records(trace: &Trace, beta: f64, instance: &Instance) -> Vec<TraceRecord> {
    let mut weight = 1.0;
    trace
        .steps
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let record = TraceRecord {
                t: k + 1,
                node: instance.name(s.node).to_owned(),
                label: s.label,
                reward: s.reward,
                discounted: weight * s.reward,
            };
            weight *= beta;
            record
        })
        .collect()
}

pub fn write_trace<W: Write>(mut out: W, records: &[TraceRecord]) -> Result<(), FormatError> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n").map_err(|e| FormatError::io(Path::new("<trace>"), e))?;
    }
    Ok(())
}

pub fn read_trace<R: Read>(input: R) -> Result<Vec<TraceRecord>, FormatError> {
    serde_json::Deserializer::from_reader(input)
        .into_iter::<TraceRecord>()
        .map(|r| r.map_err(FormatError::from))
        .collect()
}

pub const RESULTS_HEADER: [&str; 7] = ["instance", "policy", "beta", "t", "mean", "stderr", "n_rollouts"];

/// Which cumulative curve of a summary to export.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    Discounted,
    Undiscounted,
}

/// Results CSV, one row per (summary, timestep) with `t` starting at 1.
pub fn write_results_csv<W: Write>(
    out: W,
    summaries: &[EvalSummary],
    objective: Objective,
) -> Result<(), FormatError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RESULTS_HEADER)?;
    for s in summaries {
        let curve: &Curve = match objective {
            Objective::Discounted => &s.discounted,
            Objective::Undiscounted => &s.undiscounted,
        };
        for (t, (mean, se)) in curve.mean.iter().zip(&curve.stderr).enumerate() {
            w.write_record([
                s.instance.clone(),
                s.policy.to_string(),
                s.beta.to_string(),
                (t + 1).to_string(),
                mean.to_string(),
                se.to_string(),
                s.n_rollouts.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| FormatError::io(Path::new("<csv>"), e))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceRef {
    #[serde(default)]
    pub id: Option<String>,
    pub instance: String,
    pub model: String,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    /// Node counts; one group of instances per entry.
    pub n: Vec<usize>,
    #[serde(default = "default_count")]
    pub count: usize,
    #[serde(default)]
    pub extra_edges: usize,
    #[serde(default = "default_d")]
    pub d: usize,
}

fn default_count() -> usize {
    10
}

fn default_d() -> usize {
    5
}

/// Experiment configuration: exactly one of `instances` and `generator`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub instances: Option<Vec<InstanceRef>>,
    #[serde(default)]
    pub generator: Option<GeneratorConfig>,
    pub policies: Vec<String>,
    pub betas: Vec<f64>,
    pub rollouts: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub exact_up_to: Option<usize>,
}

impl ExperimentConfig {
    pub fn parse(json: &str) -> Result<Self, FormatError> {
        Ok(serde_json::from_str(json)?)
    }
}
