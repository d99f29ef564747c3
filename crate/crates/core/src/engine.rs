//! Simulation loop: seeded pair selection, the per-round opinion update and
//! batch execution.

use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::backends::{Backend, BackendError, BackendSpec, CompletionRequest, CompletionResult};
use crate::classifier::{ClassifiedOpinion, Classifier, ClassifyError};
use crate::metrics::{self, BatchMetrics};
use crate::population::{build_initial_population, AgentState, InitialDistribution, OpinionRecord, PopulationError};
use crate::protocol::{
    apply_same_retry, build_closedform_prompt, build_freeform_prompt, build_option_reask, enforce_single_option,
    ModelFamily, PromptPair, RetryRule, UpdateMode,
};
use crate::store::{self, Checkpoint, Manifest, SimStatus, TranscriptHeader, TranscriptWriter};
use crate::subjects::{DiscussionSubject, SubjectError};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("round {t}, agent {agent}: {source}")]
    Backend {
        t: u32,
        agent: usize,
        #[source]
        source: BackendError,
    },
    #[error("round {t}, agent {agent}: {source}")]
    Classify {
        t: u32,
        agent: usize,
        #[source]
        source: ClassifyError,
    },
    #[error(transparent)]
    Population(#[from] PopulationError),
    #[error(transparent)]
    Subject(#[from] SubjectError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Store(#[from] store::StoreError),
}

impl From<BackendError> for EngineError {
    fn from(source: BackendError) -> Self {
        Self::Backend { t: 0, agent: 0, source }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub mode: UpdateMode,
    pub with_memory: bool,
    pub n_agents: usize,
    pub n_rounds: u32,
    pub n_simulations: u32,
    pub distribution: InitialDistribution,
    pub subject: DiscussionSubject,
    pub backend: BackendSpec,
    pub model_family: ModelFamily,
    pub master_seed: u64,
    pub strict_classification: bool,
    pub temperature: f64,
    /// Second agent of a round answers to the first agent's new opinion.
    pub sequential_updates: bool,
    pub retry_rule: RetryRule,
    pub parallelism: usize,
    pub checkpoint_every: u32,
}

impl SimulationConfig {
    pub fn new(mode: UpdateMode, backend: BackendSpec) -> Self {
        Self {
            mode,
            with_memory: false,
            n_agents: 18,
            n_rounds: 90,
            n_simulations: 20,
            distribution: InitialDistribution::Named(crate::population::DistributionName::Equivalent),
            subject: DiscussionSubject::neutral(),
            backend,
            model_family: ModelFamily::Generic,
            master_seed: 0,
            strict_classification: false,
            temperature: 0.0,
            sequential_updates: false,
            retry_rule: RetryRule::default(),
            parallelism: 1,
            checkpoint_every: 10,
        }
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        if self.n_agents < 2 {
            return Err(EngineError::Config(format!(
                "n_agents must be >= 2, got {}",
                self.n_agents
            )));
        }
        if self.n_simulations < 1 {
            return Err(EngineError::Config("n_simulations must be >= 1".into()));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(EngineError::Config(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        if self.retry_rule.trigger.is_empty() {
            return Err(EngineError::Config("retry_rule.trigger must not be empty".into()));
        }
        self.distribution.validate()?;
        self.subject.validate()?;
        Ok(())
    }
}

/// Per-simulation seed: SHA-256 of the master seed and the simulation index.
pub fn child_seed(master_seed: u64, simulation_index: u32) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(master_seed.to_le_bytes());
    h.update(simulation_index.to_le_bytes());
    h.finalize().into()
}

/// Uniform unordered pair of distinct agents.
pub fn select_pair<R: Rng + ?Sized>(rng: &mut R, n_agents: usize) -> (usize, usize) {
    debug_assert!(n_agents >= 2);
    let i = rng.gen_range(0..n_agents);
    let mut j = rng.gen_range(0..n_agents - 1);
    if j >= i {
        j += 1;
    }
    (i, j)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendMeta {
    pub backend: String,
    pub calls: u32,
    pub attempts: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InteractionEvent {
    pub simulation_index: u32,
    pub t: u32,
    pub agent_id: usize,
    pub partner_id: usize,
    /// Prompt of the answer that was kept (the retry prompt when retried).
    pub prompt: PromptPair,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_response: Option<String>,
    pub raw_response: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub reask_responses: Vec<String>,
    pub retried: bool,
    /// Opinion text the agent holds after the round.
    pub opinion: String,
    pub classified: ClassifiedOpinion,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub anomalies: Vec<String>,
    pub backend_meta: BackendMeta,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimulationResult {
    pub simulation_index: u32,
    pub initial: Vec<AgentState>,
    pub final_agents: Vec<AgentState>,
    pub events: Vec<InteractionEvent>,
}

impl SimulationResult {
    pub fn n_rounds(&self) -> u32 {
        self.events.last().map_or(0, |e| e.t)
    }
}

struct Update {
    record: OpinionRecord,
    event: InteractionEvent,
}

/// State of one simulation between rounds.
pub struct Simulation<'a> {
    config: &'a SimulationConfig,
    backend: &'a dyn Backend,
    classifier: Classifier,
    index: u32,
    seed: [u8; 32],
    rng: ChaCha8Rng,
    agents: Vec<AgentState>,
    t: u32,
}

impl<'a> Simulation<'a> {
    pub fn new(
        config: &'a SimulationConfig,
        index: u32,
        backend: &'a dyn Backend,
        classifier: &Classifier,
    ) -> Result<Self, EngineError> {
        config.validate()?;
        let seed = child_seed(config.master_seed, index);
        let agents = build_initial_population(&config.distribution, config.n_agents, &config.subject)?;
        Ok(Self {
            config,
            backend,
            classifier: classifier.clone().for_subject(&config.subject),
            index,
            seed,
            rng: ChaCha8Rng::from_seed(seed),
            agents,
            t: 0,
        })
    }

    pub fn from_checkpoint(
        config: &'a SimulationConfig,
        backend: &'a dyn Backend,
        classifier: &Classifier,
        checkpoint: Checkpoint,
    ) -> Result<Self, EngineError> {
        let mut sim = Self::new(config, checkpoint.simulation_index, backend, classifier)?;
        if hex::encode(sim.seed) != checkpoint.seed {
            return Err(EngineError::Config(format!(
                "checkpoint for simulation {} was written under a different seed",
                checkpoint.simulation_index
            )));
        }
        let pos: u128 = checkpoint
            .word_pos
            .parse()
            .map_err(|_| EngineError::Config("bad rng position in checkpoint".into()))?;
        sim.rng.set_word_pos(pos);
        sim.agents = checkpoint.agents;
        sim.t = checkpoint.t;
        Ok(sim)
    }

    pub fn index(&self) -> u32 {
        self.index
    }

    pub fn t(&self) -> u32 {
        self.t
    }

    pub fn agents(&self) -> &[AgentState] {
        &self.agents
    }

    pub fn is_done(&self) -> bool {
        self.t >= self.config.n_rounds
    }

    pub fn header(&self) -> TranscriptHeader {
        TranscriptHeader::new(self.config, self.index, &self.seed, &self.agents)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            schema: store::CHECKPOINT_SCHEMA.to_string(),
            simulation_index: self.index,
            seed: hex::encode(self.seed),
            word_pos: self.rng.get_word_pos().to_string(),
            t: self.t,
            agents: self.agents.clone(),
        }
    }

    /// Plays round `t + 1`. On error the state (including the random
    /// stream) is left as it was after round `t`.
    pub fn step(&mut self) -> Result<[InteractionEvent; 2], EngineError> {
        let pos = self.rng.get_word_pos();
        let t = self.t + 1;
        let (i, j) = select_pair(&mut self.rng, self.config.n_agents);
        let result = self.play(t, i, j);
        match result {
            Ok((ui, uj)) => {
                self.agents[i].push_opinion(ui.record)?;
                self.agents[j].push_opinion(uj.record)?;
                self.t = t;
                Ok([ui.event, uj.event])
            }
            Err(e) => {
                self.rng.set_word_pos(pos);
                Err(e)
            }
        }
    }

    fn play(&self, t: u32, i: usize, j: usize) -> Result<(Update, Update), EngineError> {
        let (a, b) = (&self.agents[i], &self.agents[j]);
        if self.config.sequential_updates {
            let ui = self.respond(t, a, b)?;
            let uj = self.respond_to(t, b, i, &ui.record)?;
            return Ok((ui, uj));
        }
        if self.backend.supports_concurrency() {
            std::thread::scope(|s| {
                let hj = s.spawn(|| self.respond(t, b, a));
                let ui = self.respond(t, a, b);
                let uj = hj.join().expect("agent update thread panicked");
                Ok((ui?, uj?))
            })
        } else {
            let ui = self.respond(t, a, b)?;
            let uj = self.respond(t, b, a)?;
            Ok((ui, uj))
        }
    }

    fn respond(&self, t: u32, agent: &AgentState, partner: &AgentState) -> Result<Update, EngineError> {
        self.respond_to(t, agent, partner.agent_id, &partner.current_opinion)
    }

    fn call(&self, t: u32, agent: usize, prompt: &PromptPair, meta: &mut BackendMeta) -> Result<String, EngineError> {
        let req = CompletionRequest {
            system_prompt: prompt.system.clone(),
            user_prompt: prompt.user.clone(),
            model_id: self.config.backend.model_id().to_string(),
            temperature: self.config.temperature,
            max_tokens: self.config.backend.max_tokens(),
            request_tag: format!("sim {} t {t} agent {agent}", self.index),
        };
        let CompletionResult {
            text,
            backend_name,
            from_cache,
            latency,
            attempt_count,
        } = self
            .backend
            .complete(&req)
            .map_err(|source| EngineError::Backend { t, agent, source })?;
        log::trace!(
            "{}: {backend_name} answered in {latency:?} (cached: {from_cache})",
            req.request_tag
        );
        meta.backend = backend_name;
        meta.calls += 1;
        meta.attempts += attempt_count;
        Ok(text)
    }

    fn respond_to(
        &self,
        t: u32,
        agent: &AgentState,
        partner_id: usize,
        partner_opinion: &OpinionRecord,
    ) -> Result<Update, EngineError> {
        let id = agent.agent_id;
        let cfg = self.config;
        let mut meta = BackendMeta {
            backend: self.backend.name().to_string(),
            calls: 0,
            attempts: 0,
        };
        let mut anomalies = Vec::new();
        let mut first_response = None;
        let mut reask_responses = Vec::new();
        let (prompt, raw, text, classified) = match cfg.mode {
            UpdateMode::FreeForm => {
                let mut prompt = build_freeform_prompt(agent, partner_opinion, &cfg.subject, cfg.with_memory);
                let mut raw = self.call(t, id, &prompt, &mut meta)?;
                if let Some(retry) = apply_same_retry(&prompt, &raw, &cfg.retry_rule) {
                    let second = self.call(t, id, &retry, &mut meta)?;
                    first_response = Some(std::mem::replace(&mut raw, second));
                    prompt = retry;
                }
                anomalies.extend(self.classifier.extract_allocation(&raw).anomalies);
                let (classified, carried) = self
                    .classifier
                    .classify_resolved(&raw, UpdateMode::FreeForm, &agent.history, t, cfg.strict_classification)
                    .map_err(|source| EngineError::Classify { t, agent: id, source })?;
                if carried {
                    anomalies.push("unclassified opinion, stance carried over from history".into());
                }
                (prompt, raw.clone(), raw, classified)
            }
            UpdateMode::ClosedForm => {
                let prompt =
                    build_closedform_prompt(agent, partner_opinion, &cfg.subject, cfg.with_memory, cfg.model_family)?;
                let raw = self.call(t, id, &prompt, &mut meta)?;
                let reask = build_option_reask(&prompt);
                let outcome = enforce_single_option(&raw, &cfg.subject, |_| self.call(t, id, &reask, &mut meta))?;
                reask_responses = outcome.reask_responses;
                match outcome.selected {
                    Some(option) => (
                        prompt,
                        raw,
                        option.option_text,
                        ClassifiedOpinion::of_stance(option.label.stance()),
                    ),
                    None => {
                        anomalies.push("no single option selected, previous opinion kept".into());
                        let prev = &agent.current_opinion;
                        (prompt, raw, prev.text.clone(), prev.classified.clone())
                    }
                }
            }
        };
        for a in &anomalies {
            log::warn!("sim {} t {t} agent {id}: {a}", self.index);
        }
        Ok(Update {
            record: OpinionRecord {
                time: t,
                text: text.clone(),
                classified: classified.clone(),
            },
            event: InteractionEvent {
                simulation_index: self.index,
                t,
                agent_id: id,
                partner_id,
                retried: prompt.retried,
                prompt,
                first_response,
                raw_response: raw,
                reask_responses,
                opinion: text,
                classified,
                anomalies,
                backend_meta: meta,
            },
        })
    }
}

/// Runs one simulation in memory.
pub fn run_simulation(
    config: &SimulationConfig,
    simulation_index: u32,
    backend: &dyn Backend,
    classifier: &Classifier,
) -> Result<SimulationResult, EngineError> {
    let mut sim = Simulation::new(config, simulation_index, backend, classifier)?;
    let initial = sim.agents.clone();
    let mut events = Vec::with_capacity(2 * config.n_rounds as usize);
    while !sim.is_done() {
        events.extend(sim.step()?);
    }
    Ok(SimulationResult {
        simulation_index,
        initial,
        final_agents: sim.agents,
        events,
    })
}

/// Runs one simulation, streaming its transcript into `dir` and writing a
/// checkpoint every `checkpoint_every` rounds and on failure. With `resume`
/// set, continues from an existing checkpoint.
pub fn run_simulation_persisted(
    config: &SimulationConfig,
    simulation_index: u32,
    backend: &dyn Backend,
    classifier: &Classifier,
    dir: &Path,
    resume: bool,
) -> Result<SimulationResult, EngineError> {
    let transcript = store::transcript_path(dir, simulation_index);
    let checkpoint_path = store::checkpoint_path(dir, simulation_index);
    let fresh = Simulation::new(config, simulation_index, backend, classifier)?;
    let initial = fresh.agents.clone();
    let (mut sim, mut writer, mut events) = match store::load_checkpoint(&checkpoint_path)? {
        Some(cp) if resume => {
            let sim = Simulation::from_checkpoint(config, backend, classifier, cp)?;
            let (writer, events) = TranscriptWriter::resume(&transcript, &sim.header(), sim.t())?;
            log::info!("simulation {simulation_index}: resuming after round {}", sim.t());
            (sim, writer, events)
        }
        _ => {
            let writer = TranscriptWriter::create(&transcript, &fresh.header())?;
            (fresh, writer, Vec::new())
        }
    };
    while !sim.is_done() {
        match sim.step() {
            Ok(pair) => {
                for e in &pair {
                    writer.write_event(e)?;
                }
                writer.flush()?;
                events.extend(pair);
                if config.checkpoint_every > 0 && sim.t() % config.checkpoint_every == 0 {
                    store::save_checkpoint(&checkpoint_path, &sim.checkpoint())?;
                }
            }
            Err(e) => {
                writer.flush()?;
                store::save_checkpoint(&checkpoint_path, &sim.checkpoint())?;
                return Err(e);
            }
        }
    }
    writer.flush()?;
    store::remove_checkpoint(&checkpoint_path)?;
    Ok(SimulationResult {
        simulation_index,
        initial,
        final_agents: sim.agents,
        events,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimulationFailure {
    pub simulation_index: u32,
    pub error: String,
}

#[derive(Clone, Debug)]
pub struct RunResults {
    pub config: SimulationConfig,
    pub simulations: Vec<SimulationResult>,
    pub failures: Vec<SimulationFailure>,
    pub metrics: BatchMetrics,
}

impl RunResults {
    pub fn complete(&self) -> bool {
        self.failures.is_empty()
    }
}

fn pool(parallelism: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .expect("thread pool")
}

/// Runs every simulation of `config`. When `out` is given, transcripts,
/// checkpoints and the run manifest are written there.
pub fn run_batch(
    config: &SimulationConfig,
    backend: Arc<dyn Backend>,
    classifier: &Classifier,
    out: Option<&Path>,
    resume: bool,
) -> Result<RunResults, EngineError> {
    config.validate()?;
    let mut manifest = match out {
        Some(dir) => Some(Manifest::open(dir, config, resume)?),
        None => None,
    };
    let todo: Vec<u32> = (0..config.n_simulations).collect();
    let manifest_lock = std::sync::Mutex::new(manifest.as_mut());
    let run_one = |idx: u32| -> Result<SimulationResult, EngineError> {
        let Some(dir) = out else {
            return run_simulation(config, idx, backend.as_ref(), classifier);
        };
        let already_done = {
            let mut guard = manifest_lock.lock().unwrap();
            let m = guard.as_mut().expect("manifest present with output dir");
            if resume && m.status(idx) == Some(SimStatus::Done) {
                true
            } else {
                m.set_status(idx, SimStatus::Running, None)?;
                m.save(dir)?;
                false
            }
        };
        if already_done {
            return Ok(store::load_simulation(dir, idx)?);
        }
        let res = run_simulation_persisted(config, idx, backend.as_ref(), classifier, dir, resume);
        let mut m = manifest_lock.lock().unwrap();
        let m = m.as_mut().expect("manifest present with output dir");
        match &res {
            Ok(_) => m.set_status(idx, SimStatus::Done, None)?,
            Err(e) => m.set_status(idx, SimStatus::Failed, Some(e.to_string()))?,
        }
        m.save(dir)?;
        res
    };
    let outcomes: Vec<(u32, Result<SimulationResult, EngineError>)> =
        if backend.supports_concurrency() && config.parallelism > 1 {
            pool(config.parallelism).install(|| todo.par_iter().map(|&i| (i, run_one(i))).collect())
        } else {
            todo.iter().map(|&i| (i, run_one(i))).collect()
        };
    let mut simulations = Vec::new();
    let mut failures = Vec::new();
    for (idx, res) in outcomes {
        match res {
            Ok(sim) => simulations.push(sim),
            Err(EngineError::Store(e)) => return Err(EngineError::Store(e)),
            Err(e) => {
                log::error!("simulation {idx} failed: {e}");
                failures.push(SimulationFailure {
                    simulation_index: idx,
                    error: e.to_string(),
                });
            }
        }
    }
    let metrics = metrics::batch_metrics(&simulations);
    if let (Some(dir), Some(m)) = (out, manifest.as_mut()) {
        m.finish();
        m.save(dir)?;
    }
    Ok(RunResults {
        config: config.clone(),
        simulations,
        failures,
        metrics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{MidpointOracle, ScriptedBackend, StubbornOracle};
    use crate::population::{stance_counts, DistributionName};
    use crate::subjects::{render_initial_opinion, Stance};
    use proptest::prelude::*;

    fn cfg(mode: UpdateMode, dist: DistributionName) -> SimulationConfig {
        SimulationConfig {
            distribution: dist.into(),
            ..SimulationConfig::new(mode, BackendSpec::Stubborn)
        }
    }

    #[test]
    fn two_agents_always_pair_up() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let (i, j) = select_pair(&mut rng, 2);
            assert_eq!(i + j, 1);
        }
    }

    #[test]
    fn child_seeds_differ() {
        assert_ne!(child_seed(7, 0), child_seed(7, 1));
        assert_ne!(child_seed(7, 0), child_seed(8, 0));
        assert_eq!(child_seed(7, 3), child_seed(7, 3));
    }

    #[test]
    fn zero_rounds_keep_initial_population() {
        let mut c = cfg(UpdateMode::FreeForm, DistributionName::MajorityF);
        c.n_rounds = 0;
        let r = run_simulation(&c, 0, &StubbornOracle, &Classifier::default()).unwrap();
        assert!(r.events.is_empty());
        assert_eq!(stance_counts(&r.final_agents), [16, 1, 1]);
    }

    #[test]
    fn stubborn_keeps_everything() {
        let c = cfg(UpdateMode::FreeForm, DistributionName::MajorityN);
        let r = run_simulation(&c, 4, &StubbornOracle, &Classifier::default()).unwrap();
        assert_eq!(r.events.len(), 180);
        assert_eq!(stance_counts(&r.final_agents), [1, 1, 16]);
        for (a, b) in r.initial.iter().zip(&r.final_agents) {
            assert_eq!(a.current_opinion.text, b.current_opinion.text);
            assert_eq!(b.history.len() as u32, b.interaction_count);
        }
    }

    #[test]
    fn midpoint_pair_meets_in_the_middle() {
        let mut c = cfg(UpdateMode::FreeForm, DistributionName::PolarizationP);
        c.n_agents = 2;
        c.n_rounds = 1;
        let r = run_simulation(&c, 0, &MidpointOracle, &Classifier::default()).unwrap();
        for e in &r.events {
            assert_eq!(e.classified.stance, Stance::Partial);
            assert_eq!(e.classified.allocation, Some(50.0));
        }
    }

    #[test]
    fn closed_form_adopts_option_text() {
        let mut c = cfg(UpdateMode::ClosedForm, DistributionName::ConsensusF);
        c.n_agents = 2;
        c.n_rounds = 1;
        let backend = ScriptedBackend::new(["Option: (b)", "Option: (c)"]);
        let r = run_simulation(&c, 0, &backend, &Classifier::default()).unwrap();
        let by_agent = |k: usize| r.events.iter().find(|e| e.agent_id == k).unwrap();
        let first = r.events[0].agent_id;
        assert_eq!(
            by_agent(first).opinion,
            render_initial_opinion(Stance::Partial, &c.subject).unwrap()
        );
        assert_eq!(by_agent(1 - first).classified.stance, Stance::No);
    }

    #[test]
    fn simultaneous_prompts_quote_previous_round() {
        let mut c = cfg(UpdateMode::FreeForm, DistributionName::PolarizationN);
        c.n_agents = 2;
        c.n_rounds = 1;
        let backend = ScriptedBackend::new([
            "Thing A should receive 10% of the funding.",
            "Thing A should receive 20% of the funding.",
        ]);
        let r = run_simulation(&c, 0, &backend, &Classifier::default()).unwrap();
        for e in &r.events {
            assert!(!e.prompt.user.contains("10%"));
            assert!(!e.prompt.user.contains("20%"));
        }
    }

    #[test]
    fn sequential_prompts_see_first_answer() {
        let mut c = cfg(UpdateMode::FreeForm, DistributionName::PolarizationN);
        c.n_agents = 2;
        c.n_rounds = 1;
        c.sequential_updates = true;
        let backend = ScriptedBackend::new([
            "Thing A should receive 10% of the funding.",
            "Thing A should receive 20% of the funding.",
        ]);
        let r = run_simulation(&c, 0, &backend, &Classifier::default()).unwrap();
        assert!(r.events[1].prompt.user.contains("10%"));
    }

    #[test]
    fn failed_step_leaves_state_untouched() {
        let mut c = cfg(UpdateMode::FreeForm, DistributionName::Equivalent);
        c.n_rounds = 5;
        let backend = ScriptedBackend::new(Vec::<String>::new());
        let classifier = Classifier::default();
        let mut sim = Simulation::new(&c, 0, &backend, &classifier).unwrap();
        let before = sim.checkpoint();
        assert!(matches!(sim.step(), Err(EngineError::Backend { t: 1, .. })));
        assert_eq!(sim.checkpoint(), before);
    }

    #[test]
    fn strict_mode_rejects_unclassifiable_text() {
        let mut c = cfg(UpdateMode::FreeForm, DistributionName::Equivalent);
        c.n_agents = 2;
        c.n_rounds = 1;
        c.strict_classification = true;
        let backend = ScriptedBackend::new(["Nice weather.", "Nice weather."]);
        let err = run_simulation(&c, 0, &backend, &Classifier::default()).unwrap_err();
        assert!(matches!(err, EngineError::Classify { .. }));

        c.strict_classification = false;
        let backend = ScriptedBackend::new(["Nice weather.", "Nice weather."]);
        let r = run_simulation(&c, 0, &backend, &Classifier::default()).unwrap();
        for e in &r.events {
            assert_eq!(e.anomalies.len(), 1);
            assert!(e.classified.implicit);
            assert_eq!(e.classified.resolved_from_time, Some(0));
        }
    }

    #[test]
    fn implicit_answer_resolves_to_history() {
        let mut c = cfg(UpdateMode::FreeForm, DistributionName::ConsensusF);
        c.n_agents = 2;
        c.n_rounds = 1;
        c.retry_rule.trigger = "never matches".into();
        let backend = ScriptedBackend::new(["My opinion remains unchanged.", "My opinion remains unchanged."]);
        let r = run_simulation(&c, 0, &backend, &Classifier::default()).unwrap();
        for e in &r.events {
            assert_eq!(e.classified.stance, Stance::Full);
            assert!(e.anomalies.is_empty());
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn pairs_are_distinct_and_in_range(seed in any::<u64>(), n in 2usize..40) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..50 {
                let (i, j) = select_pair(&mut rng, n);
                prop_assert!(i != j && i < n && j < n);
            }
        }

        #[test]
        fn timestamps_increase_and_events_pair_up(seed in any::<u64>(), rounds in 0u32..25, n in 2usize..8) {
            let mut c = cfg(UpdateMode::FreeForm, DistributionName::PolarizationP);
            c.master_seed = seed;
            c.n_rounds = rounds;
            c.n_agents = n;
            let r = run_simulation(&c, 0, &MidpointOracle, &Classifier::default()).unwrap();
            prop_assert_eq!(r.events.len() as u32, 2 * rounds);
            for a in &r.final_agents {
                prop_assert!(a.history.windows(2).all(|w| w[0].time < w[1].time));
                let picked = r.events.iter().filter(|e| e.agent_id == a.agent_id).count();
                prop_assert_eq!(a.history.len(), 1 + picked);
            }
            for e in &r.events {
                let alloc = e.classified.allocation.unwrap_or(50.0);
                prop_assert!((0.0..=100.0).contains(&alloc));
            }
        }
    }
}
