//! Advisor sessions: an instance, its Gittins table and the observations
//! recorded so far. Every state change goes through [`Session::observe`] or
//! [`Session::undo`], and the current state is always the replay of the
//! observation log.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use afeg::eval::Trace;
use afeg::formats::{trace_records, Instance, InstanceFile, ModelFile, TraceRecord};
use afeg::gittins::{IndexOptions, IndexTable};
use afeg::policy::{ExplorationState, GittinsPolicy, Setting};
use afeg::{Label, NodeId};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error("invalid session input: {0}")]
    Invalid(String),
    #[error("node {0:?} is not in the frontier")]
    NotInFrontier(String),
    #[error("unknown node {0:?}")]
    UnknownNode(String),
    #[error("label {0} is not 0 or 1")]
    InvalidLabel(u64),
    #[error("expected revision {expected}, session is at {actual}")]
    RevisionConflict { expected: u64, actual: u64 },
    #[error("nothing to undo")]
    NothingToUndo,
    #[error("session log {path}: {message}")]
    Log { path: String, message: String },
}

/// What a session is created from; also the first line of its log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateRequest {
    pub instance: InstanceFile,
    pub model: ModelFile,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LogEntry {
    Create { id: String, request: CreateRequest },
    Observe { node: String, label: Label },
    Undo,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrontierEntry {
    pub node: String,
    /// `null` when the node's tree parent is untested.
    pub gittins_index: Option<f64>,
    pub posterior_positive: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestedEntry {
    pub node: String,
    pub label: Label,
}

/// Immutable snapshot of a session.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct View {
    pub session: String,
    pub revision: u64,
    pub frontier: Vec<FrontierEntry>,
    pub tested: Vec<TestedEntry>,
    pub recommendation: Option<String>,
    pub terminal: bool,
}

pub struct Session {
    id: String,
    request: CreateRequest,
    instance: Instance,
    setting: Setting,
    table: IndexTable,
    state: ExplorationState,
    revision: u64,
    log: Option<PathBuf>,
}

impl Session {
    pub fn create(id: String, request: CreateRequest) -> Result<Self, SessionError> {
        let invalid = |e: &dyn std::fmt::Display| SessionError::Invalid(e.to_string());
        let instance = Instance::from_file(&request.instance).map_err(|e| invalid(&e))?;
        if instance.graph.node_count() == 0 {
            return Err(SessionError::Invalid("instance has no nodes".into()));
        }
        let model = request.model.bind(&instance).map_err(|e| invalid(&e))?;
        let setting = Setting::binary(model, request.beta).map_err(|e| invalid(&e))?;
        let table = setting.index_table(IndexOptions::default()).map_err(|e| invalid(&e))?;
        let state = setting.initial_state();
        Ok(Self { id, request, instance, setting, table, state, revision: 0, log: None })
    }

    /// Creates the session and starts its log in `dir`.
    pub fn create_logged(id: String, request: CreateRequest, dir: &Path) -> Result<Self, SessionError> {
        let mut session = Self::create(id, request)?;
        let path = dir.join(format!("{}.jsonl", session.id));
        session.log = Some(path);
        let entry = LogEntry::Create { id: session.id.clone(), request: session.request.clone() };
        session.append(&entry)?;
        Ok(session)
    }

    /// Rebuilds a session from its log.
    pub fn recover(path: &Path) -> Result<Self, SessionError> {
        let log_err = |message: String| SessionError::Log { path: path.display().to_string(), message };
        let file = File::open(path).map_err(|e| log_err(e.to_string()))?;
        let mut lines = BufReader::new(file).lines();
        let first = lines.next().ok_or_else(|| log_err("empty log".into()))?.map_err(|e| log_err(e.to_string()))?;
        let LogEntry::Create { id, request } =
            serde_json::from_str(&first).map_err(|e| log_err(e.to_string()))?
        else {
            return Err(log_err("log does not start with a create entry".into()));
        };
        let mut session = Self::create(id, request)?;
        for line in lines {
            let line = line.map_err(|e| log_err(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str(&line).map_err(|e| log_err(e.to_string()))? {
                LogEntry::Observe { node, label } => {
                    let revision = session.revision;
                    session.apply_observation(&node, u64::from(label), revision)?;
                }
                LogEntry::Undo => session.apply_undo()?,
                LogEntry::Create { .. } => return Err(log_err("second create entry".into())),
            }
        }
        session.log = Some(path.to_path_buf());
        Ok(session)
    }

    fn append(&self, entry: &LogEntry) -> Result<(), SessionError> {
        let Some(path) = &self.log else { return Ok(()) };
        let log_err = |e: std::io::Error| SessionError::Log { path: path.display().to_string(), message: e.to_string() };
        let mut file = OpenOptions::new().create(true).append(true).open(path).map_err(log_err)?;
        let mut line = serde_json::to_vec(entry).expect("log entries serialize");
        line.push(b'\n');
        file.write_all(&line).map_err(log_err)?;
        file.sync_data().map_err(log_err)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub fn state(&self) -> &ExplorationState {
        &self.state
    }

    pub fn table(&self) -> &IndexTable {
        &self.table
    }

    pub fn instance(&self) -> &Instance {
        &self.instance
    }

    fn apply_observation(&mut self, node: &str, label: u64, expected_revision: u64) -> Result<(), SessionError> {
        if expected_revision != self.revision {
            return Err(SessionError::RevisionConflict { expected: expected_revision, actual: self.revision });
        }
        let id = self.instance.id_of(node).map_err(|_| SessionError::UnknownNode(node.to_owned()))?;
        if label > 1 {
            return Err(SessionError::InvalidLabel(label));
        }
        if !self.state.frontier().contains(&id) {
            return Err(SessionError::NotInFrontier(node.to_owned()));
        }
        self.state
            .advance(id, label as Label, self.setting.graph())
            .expect("frontier membership checked");
        self.revision += 1;
        Ok(())
    }

    fn apply_undo(&mut self) -> Result<(), SessionError> {
        let history = self.state.history();
        if history.is_empty() {
            return Err(SessionError::NothingToUndo);
        }
        let kept = &history[..history.len() - 1];
        self.state = ExplorationState::replay(self.setting.graph(), &self.setting.roots, kept)
            .expect("a prefix of a valid history is valid");
        self.revision += 1;
        Ok(())
    }

    /// Records a label for a frontier node if `expected_revision` is current.
    pub fn observe(&mut self, node: &str, label: u64, expected_revision: u64) -> Result<View, SessionError> {
        self.apply_observation(node, label, expected_revision)?;
        let entry = LogEntry::Observe { node: node.to_owned(), label: label as Label };
        self.append(&entry)?;
        Ok(self.view())
    }

    /// Drops the last observation. The revision still moves forward.
    pub fn undo(&mut self) -> Result<View, SessionError> {
        self.apply_undo()?;
        self.append(&LogEntry::Undo)?;
        Ok(self.view())
    }

    pub fn view(&self) -> View {
        let evidence = self.state.evidence();
        let model = &self.setting.model;
        let frontier: Vec<FrontierEntry> = self
            .state
            .frontier()
            .iter()
            .map(|&v| FrontierEntry {
                node: self.instance.name(v).to_owned(),
                gittins_index: self.table.lookup(v, |p| self.state.label(p)),
                posterior_positive: model.conditional(v, 1, evidence).expect("frontier nodes are untested"),
            })
            .collect();
        let recommendation: Option<NodeId> = if self.state.is_terminal() {
            None
        } else {
            Some(GittinsPolicy::new(&self.table).choose_with_index(&self.state).expect("frontier not empty").0)
        };
        if let Some(r) = recommendation {
            let name = self.instance.name(r);
            let best = frontier.iter().filter_map(|e| e.gittins_index).fold(f64::NEG_INFINITY, f64::max);
            let chosen = frontier.iter().find(|e| e.node == name).expect("recommendation is in the frontier");
            assert!(chosen.gittins_index.is_none_or(|g| g == best));
        }
        View {
            session: self.id.clone(),
            revision: self.revision,
            tested: self
                .state
                .history()
                .iter()
                .map(|&(v, label)| TestedEntry { node: self.instance.name(v).to_owned(), label })
                .collect(),
            recommendation: recommendation.map(|r| self.instance.name(r).to_owned()),
            terminal: self.state.is_terminal(),
            frontier,
        }
    }

    /// Trace of the observations so far, in the JSON-lines record format.
    pub fn trace(&self) -> Vec<TraceRecord> {
        let steps = self
            .state
            .history()
            .iter()
            .map(|&(node, label)| afeg::eval::Step { node, label, reward: self.setting.reward.reward(node, label) })
            .collect();
        trace_records(&Trace { steps }, self.setting.reward.beta(), &self.instance)
    }
}
