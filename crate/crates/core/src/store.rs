//! On-disk formats: JSONL transcripts, checkpoints and the run manifest.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{InteractionEvent, SimulationConfig, SimulationResult};
use crate::population::{AgentState, OpinionRecord};

pub const TRANSCRIPT_SCHEMA: &str = "opinion-sim/transcript";
pub const TRANSCRIPT_VERSION: u32 = 1;
pub const CHECKPOINT_SCHEMA: &str = "opinion-sim/checkpoint/1";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: {message}")]
    Format { path: String, message: String },
    #[error("simulation {index}: cannot go from {from:?} to {to:?}")]
    Transition { index: u32, from: SimStatus, to: SimStatus },
    #[error("{0} already holds a run; pass --resume or choose another output directory")]
    Exists(String),
    #[error("{0}: configuration differs from the run being resumed")]
    ConfigMismatch(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn json_err(path: &Path) -> impl FnOnce(serde_json::Error) -> StoreError + '_ {
    move |source| StoreError::Json {
        path: path.display().to_string(),
        source,
    }
}

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn transcript_path(dir: &Path, index: u32) -> PathBuf {
    dir.join("transcripts").join(format!("sim_{index:03}.jsonl"))
}

pub fn checkpoint_path(dir: &Path, index: u32) -> PathBuf {
    dir.join("checkpoints").join(format!("sim_{index:03}.json"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TranscriptHeader {
    pub schema: String,
    pub version: u32,
    pub simulation_index: u32,
    pub seed: String,
    pub master_seed: u64,
    pub mode: String,
    pub with_memory: bool,
    pub n_agents: usize,
    pub n_rounds: u32,
    pub distribution: String,
    pub subject: String,
    pub item_a: String,
    pub item_b: String,
    pub initial_opinions: Vec<OpinionRecord>,
}

impl TranscriptHeader {
    pub fn new(config: &SimulationConfig, index: u32, seed: &[u8; 32], initial: &[AgentState]) -> Self {
        Self {
            schema: TRANSCRIPT_SCHEMA.into(),
            version: TRANSCRIPT_VERSION,
            simulation_index: index,
            seed: hex::encode(seed),
            master_seed: config.master_seed,
            mode: config.mode.to_string(),
            with_memory: config.with_memory,
            n_agents: config.n_agents,
            n_rounds: config.n_rounds,
            distribution: config.distribution.label(),
            subject: config.subject.setting().label(),
            item_a: config.subject.item_a_text.clone(),
            item_b: config.subject.item_b_text.clone(),
            initial_opinions: initial.iter().map(|a| a.current_opinion.clone()).collect(),
        }
    }
}

fn json_line<T: Serialize>(value: &T, path: &Path) -> Result<String, StoreError> {
    let mut line = serde_json::to_string(value).map_err(json_err(path))?;
    line.push('\n');
    Ok(line)
}

/// Append-only writer for one simulation's transcript.
pub struct TranscriptWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl TranscriptWriter {
    pub fn create(path: &Path, header: &TranscriptHeader) -> Result<Self, StoreError> {
        write_atomic(path, json_line(header, path)?.as_bytes())?;
        Self::append(path)
    }

    fn append(path: &Path) -> Result<Self, StoreError> {
        let file = OpenOptions::new().append(true).open(path).map_err(io_err(path))?;
        Ok(Self {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        })
    }

    /// Reopens a transcript, dropping every event after round `t`. Returns
    /// the writer and the kept events.
    pub fn resume(path: &Path, header: &TranscriptHeader, t: u32) -> Result<(Self, Vec<InteractionEvent>), StoreError> {
        let (found, events) = read_transcript(path)?;
        if found.seed != header.seed || found.simulation_index != header.simulation_index {
            return Err(StoreError::Format {
                path: path.display().to_string(),
                message: "transcript belongs to a different simulation".into(),
            });
        }
        let kept: Vec<InteractionEvent> = events.into_iter().filter(|e| e.t <= t).collect();
        if kept.len() != 2 * t as usize {
            return Err(StoreError::Format {
                path: path.display().to_string(),
                message: format!("expected {} events up to round {t}, found {}", 2 * t, kept.len()),
            });
        }
        let mut body = json_line(&found, path)?;
        for e in &kept {
            body.push_str(&json_line(e, path)?);
        }
        write_atomic(path, body.as_bytes())?;
        Ok((Self::append(path)?, kept))
    }

    pub fn write_event(&mut self, event: &InteractionEvent) -> Result<(), StoreError> {
        let line = json_line(event, &self.path)?;
        self.out.write_all(line.as_bytes()).map_err(io_err(&self.path))
    }

    pub fn flush(&mut self) -> Result<(), StoreError> {
        self.out.flush().map_err(io_err(&self.path))
    }
}

pub fn read_transcript(path: &Path) -> Result<(TranscriptHeader, Vec<InteractionEvent>), StoreError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut lines = BufReader::new(file).lines();
    let first = lines
        .next()
        .ok_or_else(|| StoreError::Format {
            path: path.display().to_string(),
            message: "empty transcript".into(),
        })?
        .map_err(io_err(path))?;
    let header: TranscriptHeader = serde_json::from_str(&first).map_err(json_err(path))?;
    if header.schema != TRANSCRIPT_SCHEMA || header.version != TRANSCRIPT_VERSION {
        return Err(StoreError::Format {
            path: path.display().to_string(),
            message: format!("unsupported schema {} v{}", header.schema, header.version),
        });
    }
    let mut events = Vec::new();
    for line in lines {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        events.push(serde_json::from_str(&line).map_err(json_err(path))?);
    }
    Ok((header, events))
}

/// Rebuilds a simulation result from its transcript by replaying events.
pub fn simulation_from_transcript(
    header: &TranscriptHeader,
    events: Vec<InteractionEvent>,
    path: &Path,
) -> Result<SimulationResult, StoreError> {
    let initial: Vec<AgentState> = header
        .initial_opinions
        .iter()
        .enumerate()
        .map(|(k, r)| AgentState::new(k, r.clone()))
        .collect();
    let mut agents = initial.clone();
    for e in &events {
        let agent = agents.get_mut(e.agent_id).ok_or_else(|| StoreError::Format {
            path: path.display().to_string(),
            message: format!("event for unknown agent {}", e.agent_id),
        })?;
        agent
            .push_opinion(OpinionRecord {
                time: e.t,
                text: e.opinion.clone(),
                classified: e.classified.clone(),
            })
            .map_err(|err| StoreError::Format {
                path: path.display().to_string(),
                message: err.to_string(),
            })?;
    }
    Ok(SimulationResult {
        simulation_index: header.simulation_index,
        initial,
        final_agents: agents,
        events,
    })
}

pub fn load_simulation(dir: &Path, index: u32) -> Result<SimulationResult, StoreError> {
    let path = transcript_path(dir, index);
    let (header, events) = read_transcript(&path)?;
    simulation_from_transcript(&header, events, &path)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema: String,
    pub simulation_index: u32,
    pub seed: String,
    /// ChaCha word position, as a decimal string (u128).
    pub word_pos: String,
    /// Last completed round.
    pub t: u32,
    pub agents: Vec<AgentState>,
}

pub fn save_checkpoint(path: &Path, cp: &Checkpoint) -> Result<(), StoreError> {
    let bytes = serde_json::to_vec(cp).map_err(json_err(path))?;
    write_atomic(path, &bytes)
}

pub fn load_checkpoint(path: &Path) -> Result<Option<Checkpoint>, StoreError> {
    match fs::read(path) {
        Ok(bytes) => Ok(Some(serde_json::from_slice(&bytes).map_err(json_err(path))?)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(io_err(path)(e)),
    }
}

pub fn remove_checkpoint(path: &Path) -> Result<(), StoreError> {
    match fs::remove_file(path) {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(()),
        Err(e) => Err(io_err(path)(e)),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimStatus {
    Pending,
    Running,
    Done,
    Failed,
}

impl SimStatus {
    /// Allowed moves: pending -> running -> done | failed. A failed
    /// simulation may be picked up again by a resume.
    fn can_move_to(self, to: SimStatus) -> bool {
        use SimStatus::*;
        self == to
            || matches!(
                (self, to),
                (Pending, Running) | (Running, Done) | (Running, Failed) | (Failed, Running)
            )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimEntry {
    pub index: u32,
    pub status: SimStatus,
    pub transcript: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub run_id: String,
    pub code_version: String,
    pub started_at: String,
    #[serde(default)]
    pub finished_at: Option<String>,
    pub config: SimulationConfig,
    pub simulations: Vec<SimEntry>,
    #[serde(default)]
    pub outputs: Vec<String>,
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

impl Manifest {
    pub fn new(config: &SimulationConfig) -> Self {
        let stamp = chrono::Utc::now();
        let digest = crate::backends::CachedBackend::key(
            "run",
            &crate::backends::CompletionRequest::new(
                serde_json::to_string(config).unwrap_or_default(),
                stamp.timestamp_nanos_opt().unwrap_or_default().to_string(),
            ),
        );
        Self {
            run_id: format!("{}-{}", stamp.format("%Y%m%dT%H%M%SZ"), &digest[..8]),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            started_at: now(),
            finished_at: None,
            config: config.clone(),
            simulations: (0..config.n_simulations)
                .map(|index| SimEntry {
                    index,
                    status: SimStatus::Pending,
                    transcript: format!("transcripts/sim_{index:03}.jsonl"),
                    error: None,
                })
                .collect(),
            outputs: Vec::new(),
        }
    }

    pub fn path(dir: &Path) -> PathBuf {
        dir.join(MANIFEST_FILE)
    }

    pub fn load(dir: &Path) -> Result<Option<Self>, StoreError> {
        let path = Self::path(dir);
        match fs::read(&path) {
            Ok(bytes) => Ok(Some(serde_json::from_slice(&bytes).map_err(json_err(&path))?)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(io_err(&path)(e)),
        }
    }

    /// Starts a new run in `dir`, or picks up the existing one when resuming.
    pub fn open(dir: &Path, config: &SimulationConfig, resume: bool) -> Result<Self, StoreError> {
        match Self::load(dir)? {
            Some(m) if resume => {
                if m.config != *config {
                    return Err(StoreError::ConfigMismatch(dir.display().to_string()));
                }
                Ok(m)
            }
            Some(_) => Err(StoreError::Exists(dir.display().to_string())),
            None => {
                let m = Self::new(config);
                m.save(dir)?;
                Ok(m)
            }
        }
    }

    pub fn save(&self, dir: &Path) -> Result<(), StoreError> {
        let path = Self::path(dir);
        let bytes = serde_json::to_vec_pretty(self).map_err(json_err(&path))?;
        write_atomic(&path, &bytes)
    }

    pub fn status(&self, index: u32) -> Option<SimStatus> {
        self.simulations.iter().find(|s| s.index == index).map(|s| s.status)
    }

    pub fn set_status(&mut self, index: u32, to: SimStatus, error: Option<String>) -> Result<(), StoreError> {
        let entry = self
            .simulations
            .iter_mut()
            .find(|s| s.index == index)
            .ok_or(StoreError::Transition {
                index,
                from: SimStatus::Pending,
                to,
            })?;
        if !entry.status.can_move_to(to) {
            return Err(StoreError::Transition {
                index,
                from: entry.status,
                to,
            });
        }
        entry.status = to;
        entry.error = error;
        Ok(())
    }

    pub fn finish(&mut self) {
        self.finished_at = Some(now());
    }

    pub fn all_done(&self) -> bool {
        self.simulations.iter().all(|s| s.status == SimStatus::Done)
    }
}
