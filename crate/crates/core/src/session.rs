//! The optimization loop as a serial state machine with an append-only event log.
//!
//! Every mutation is expressed as an [`Event`] that is applied to the state and
//! appended to the log, so loading a log re-applies exactly what happened live.
//! Time is simulated: evaluations advance a session clock by their configured
//! delay instead of blocking.

use std::collections::VecDeque;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::acquisition::{generate_batch, AcquisitionConfig, Candidate, CandidateBatch, ReferencePoint};
use crate::advisor::{
    build_prompt, select_argmax, select_llm, select_scripted, AdvisorDecision, AdvisorEndpointConfig, ChatTransport,
    HttpTransport,
};
use crate::domain::{DesignPoint, Fidelity, Observation};
use crate::error::{Error, Result};
use crate::surrogate::{FitConfig, GaussianProcessModel};
use crate::testbed::{builtin_app, EvaluationSimulator, SimulatorConfig, SyntheticApp};

pub const LOG_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    DesignerLed,
    BoLed,
    Cooperative,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::DesignerLed => "designer_led",
            Mode::BoLed => "bo_led",
            Mode::Cooperative => "cooperative",
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedDesign {
    #[default]
    Random,
    LatinHypercube,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdvisorPolicy {
    #[default]
    Scripted,
    Argmax,
    Llm,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdvisorConfig {
    pub policy: AdvisorPolicy,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<AdvisorEndpointConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub app_id: String,
    /// Custom app definition; takes precedence over `app_id`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub app: Option<SyntheticApp>,
    pub mode: Mode,
    pub q: usize,
    pub n_seed: usize,
    pub proposal_lockout: usize,
    pub rng_seed: u64,
    pub seed_design: SeedDesign,
    pub simulator: SimulatorConfig,
    pub advisor: AdvisorConfig,
    pub acquisition: AcquisitionConfig,
    pub fit: FitConfig,
    /// Normalized reference point; defaults to just below the objective box.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference_point: Option<ReferencePoint>,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            app_id: "app1".into(),
            app: None,
            mode: Mode::Cooperative,
            q: 8,
            n_seed: 5,
            proposal_lockout: 5,
            rng_seed: 0,
            seed_design: SeedDesign::Random,
            simulator: SimulatorConfig::default(),
            advisor: AdvisorConfig::default(),
            acquisition: AcquisitionConfig::default(),
            fit: FitConfig::default(),
            reference_point: None,
        }
    }
}

impl SessionConfig {
    pub fn resolve_app(&self) -> Result<SyntheticApp> {
        let app = match &self.app {
            Some(app) => app.clone(),
            None => builtin_app(&self.app_id).ok_or_else(|| Error::Config(format!("unknown app '{}'", self.app_id)))?,
        };
        app.validate()?;
        Ok(app)
    }

    pub fn validate(&self) -> Result<()> {
        if self.q < 1 {
            return Err(Error::Config("q must be at least 1".into()));
        }
        if self.n_seed < 2 {
            return Err(Error::Config("n_seed must be at least 2".into()));
        }
        if self.mode == Mode::BoLed && self.n_seed < self.proposal_lockout {
            return Err(Error::Config(format!(
                "bo_led needs n_seed >= proposal_lockout (got {} < {})",
                self.n_seed, self.proposal_lockout
            )));
        }
        if self.advisor.policy == AdvisorPolicy::Llm && self.mode == Mode::Cooperative {
            self.advisor
                .endpoint
                .as_ref()
                .ok_or_else(|| Error::Config("llm policy needs an advisor endpoint".into()))?
                .validate()?;
        }
        self.simulator.validate()?;
        self.acquisition.validate()?;
        let app = self.resolve_app()?;
        if let Some(r) = &self.reference_point {
            if r.values().len() != app.n_objectives() {
                return Err(Error::Config(format!(
                    "reference point has {} values for {} objectives",
                    r.values().len(),
                    app.n_objectives()
                )));
            }
        }
        Ok(())
    }

    /// Formal observations required before the first proposal.
    pub fn required_formal(&self) -> usize {
        self.proposal_lockout.max(2)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Seeding,
    Active,
    Closed,
}

/// One log entry's payload.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    Created {
        config: SessionConfig,
        app: SyntheticApp,
    },
    Seed {
        index: usize,
        point: DesignPoint,
    },
    Sliders {
        point: DesignPoint,
    },
    Evaluation {
        observation: Observation,
        /// Simulator word position after the draw.
        stream_position: u64,
    },
    Batch {
        request: String,
        batch: CandidateBatch,
    },
    Prompt {
        text: String,
    },
    Decision {
        decision: AdvisorDecision,
    },
    Closed,
}

impl Event {
    pub fn kind(&self) -> &'static str {
        match self {
            Event::Created { .. } => "created",
            Event::Seed { .. } => "seed",
            Event::Sliders { .. } => "sliders",
            Event::Evaluation { .. } => "evaluation",
            Event::Batch { .. } => "batch",
            Event::Prompt { .. } => "prompt",
            Event::Decision { .. } => "decision",
            Event::Closed => "closed",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub v: u32,
    pub seq: u64,
    pub event: Event,
}

impl Record {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("records always serialize")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Proposal {
    pub request: String,
    pub batch: CandidateBatch,
    pub prompt: Option<String>,
    pub decision: AdvisorDecision,
}

impl Proposal {
    pub fn chosen(&self) -> &Candidate {
        &self.batch.candidates[self.decision.index]
    }
}

// ChaCha stream ids, one family per purpose.
const STREAM_SEEDS: u64 = 1;
const STREAM_FIT: u64 = 2;
const STREAM_PROPOSAL: u64 = 3;

fn stream(seed: u64, purpose: u64, counter: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((purpose << 48) | counter);
    rng
}

fn seed_points(config: &SessionConfig, dim: usize) -> Vec<DesignPoint> {
    let n = config.n_seed;
    let mut rng = stream(config.rng_seed, STREAM_SEEDS, 0);
    let coords: Vec<Vec<f64>> = match config.seed_design {
        SeedDesign::Random => (0..n).map(|_| (0..dim).map(|_| rng.random::<f64>()).collect()).collect(),
        SeedDesign::LatinHypercube => {
            let mut pts = vec![vec![0.0; dim]; n];
            for d in 0..dim {
                let mut strata: Vec<usize> = (0..n).collect();
                strata.shuffle(&mut rng);
                for (p, s) in pts.iter_mut().zip(strata) {
                    p[d] = (s as f64 + rng.random::<f64>()) / n as f64;
                }
            }
            pts
        }
    };
    coords.into_iter().map(DesignPoint::clamped).collect()
}

pub struct Session {
    config: SessionConfig,
    app: SyntheticApp,
    reference: ReferencePoint,
    simulator: EvaluationSimulator,
    history: Vec<Observation>,
    seed_queue: VecDeque<DesignPoint>,
    current_sliders: DesignPoint,
    last_proposal: Option<DesignPoint>,
    proposals: Vec<Proposal>,
    pending: Option<(String, CandidateBatch, Option<String>)>,
    models: Vec<GaussianProcessModel>,
    models_stale: bool,
    clock_ms: u64,
    status: Status,
    records: Vec<Record>,
    transport: Arc<dyn ChatTransport>,
}

impl fmt::Debug for Session {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Session")
            .field("app", &self.app.id)
            .field("mode", &self.config.mode)
            .field("status", &self.status)
            .field("observations", &self.history.len())
            .field("proposals", &self.proposals.len())
            .finish_non_exhaustive()
    }
}

impl Session {
    /// New session with its seed points queued.
    pub fn create(config: SessionConfig) -> Result<Self> {
        config.validate()?;
        let app = config.resolve_app()?;
        let seeds = seed_points(&config, app.n_params());
        let mut s = Self::blank(config, app)?;
        for (index, point) in seeds.into_iter().enumerate() {
            s.commit(Event::Seed { index, point })?;
        }
        Ok(s)
    }

    fn blank(config: SessionConfig, app: SyntheticApp) -> Result<Self> {
        let reference = config
            .reference_point
            .clone()
            .unwrap_or_else(|| ReferencePoint::normalized_default(app.n_objectives()));
        let simulator = EvaluationSimulator::new(config.simulator.clone())?;
        let n = app.n_params();
        let mut s = Self {
            reference,
            simulator,
            history: Vec::new(),
            seed_queue: VecDeque::new(),
            current_sliders: DesignPoint::clamped(vec![0.5; n]),
            last_proposal: None,
            proposals: Vec::new(),
            pending: None,
            models: Vec::new(),
            models_stale: false,
            clock_ms: 0,
            status: Status::Seeding,
            records: Vec::new(),
            transport: Arc::new(HttpTransport),
            app: app.clone(),
            config: config.clone(),
        };
        s.commit(Event::Created { config, app })?;
        Ok(s)
    }

    pub fn with_transport(mut self, transport: Arc<dyn ChatTransport>) -> Self {
        self.transport = transport;
        self
    }

    pub fn set_transport(&mut self, transport: Arc<dyn ChatTransport>) {
        self.transport = transport;
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn app(&self) -> &SyntheticApp {
        &self.app
    }

    pub fn reference(&self) -> &ReferencePoint {
        &self.reference
    }

    pub fn status(&self) -> Status {
        self.status
    }

    pub fn history(&self) -> &[Observation] {
        &self.history
    }

    pub fn formal_history(&self) -> Vec<Observation> {
        self.history.iter().filter(|o| o.is_formal()).cloned().collect()
    }

    /// Counts formal evaluations; this is the session's iteration number.
    pub fn formal_count(&self) -> usize {
        self.history.iter().filter(|o| o.is_formal()).count()
    }

    pub fn current_sliders(&self) -> &DesignPoint {
        &self.current_sliders
    }

    pub fn pending_seeds(&self) -> impl Iterator<Item = &DesignPoint> {
        self.seed_queue.iter()
    }

    pub fn next_seed(&self) -> Option<&DesignPoint> {
        self.seed_queue.front()
    }

    pub fn last_proposal(&self) -> Option<&DesignPoint> {
        self.last_proposal.as_ref()
    }

    pub fn proposals(&self) -> &[Proposal] {
        &self.proposals
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn clock_ms(&self) -> u64 {
        self.clock_ms
    }

    /// Fitted models, one per objective; empty before two formal observations.
    pub fn models(&mut self) -> Result<&[GaussianProcessModel]> {
        self.ensure_models()?;
        Ok(&self.models)
    }

    pub fn model_fingerprints(&mut self) -> Result<Vec<String>> {
        Ok(self.models()?.iter().map(GaussianProcessModel::fingerprint).collect())
    }

    /// Point a bo_led session will accept for evaluation.
    pub fn expected_point(&self) -> Option<&DesignPoint> {
        self.seed_queue.front().or(self.last_proposal.as_ref())
    }

    fn forbid(&self, detail: &str) -> Error {
        Error::ModeForbids {
            mode: self.config.mode.to_string(),
            detail: detail.into(),
        }
    }

    fn check_open(&self) -> Result<()> {
        if self.status == Status::Closed {
            return Err(Error::Closed);
        }
        Ok(())
    }

    fn check_dim(&self, x: &DesignPoint) -> Result<()> {
        if x.dim() != self.app.n_params() {
            return Err(Error::Dimension {
                expected: self.app.n_params(),
                got: x.dim(),
            });
        }
        Ok(())
    }

    pub fn set_sliders(&mut self, point: DesignPoint) -> Result<()> {
        self.check_open()?;
        if self.config.mode == Mode::BoLed {
            return Err(self.forbid("sliders are disabled"));
        }
        self.check_dim(&point)?;
        self.commit(Event::Sliders { point })
    }

    /// Preconditions of [`Session::submit_evaluation`], without side effects.
    pub fn check_evaluation(&self, x: &DesignPoint) -> Result<()> {
        self.check_open()?;
        self.check_dim(x)?;
        if self.config.mode == Mode::BoLed {
            match self.expected_point() {
                Some(p) if p == x => {}
                Some(_) => return Err(self.forbid("only the system's proposed point may be evaluated")),
                None => return Err(self.forbid("no proposed point to evaluate")),
            }
        }
        Ok(())
    }

    /// Simulates one evaluation. Formal results refit every model.
    pub fn submit_evaluation(&mut self, x: DesignPoint, fidelity: Fidelity) -> Result<Observation> {
        self.check_evaluation(&x)?;
        let before = self.simulator.stream_position();
        let outcome = self.simulator.draw(&self.app, &x, fidelity)?;
        let observation = Observation {
            point: x,
            objectives: outcome.objectives,
            raw_objectives: outcome.raw,
            fidelity,
            iteration: self.history.len(),
            timestamp_ms: self.clock_ms + outcome.delay.as_millis() as u64,
        };
        if fidelity == Fidelity::Formal {
            let mut formal = self.formal_history();
            formal.push(observation.clone());
            match self.fit(&formal) {
                Ok(models) => {
                    self.models = models;
                    self.models_stale = false;
                }
                Err(e) => {
                    self.simulator.set_stream_position(before);
                    return Err(e);
                }
            }
        }
        let stream_position = self.simulator.stream_position() as u64;
        self.commit(Event::Evaluation {
            observation: observation.clone(),
            stream_position,
        })?;
        if fidelity == Fidelity::Formal {
            // commit marks models stale; they were fitted on exactly this history.
            self.models_stale = false;
        }
        Ok(observation)
    }

    fn fit(&self, formal: &[Observation]) -> Result<Vec<GaussianProcessModel>> {
        if formal.len() < 2 {
            return Ok(Vec::new());
        }
        let m = self.app.n_objectives();
        (0..m)
            .map(|k| {
                let seed = stream(self.config.rng_seed, STREAM_FIT, (formal.len() * m + k) as u64).random();
                let cfg = FitConfig {
                    seed,
                    ..self.config.fit.clone()
                };
                GaussianProcessModel::fit(formal, k, &cfg)
            })
            .collect()
    }

    fn ensure_models(&mut self) -> Result<()> {
        if self.models_stale {
            self.models = self.fit(&self.formal_history())?;
            self.models_stale = false;
        }
        Ok(())
    }

    /// Generates a batch and lets the advisor (or argmax in bo_led) pick one
    /// candidate, which becomes the new slider position.
    pub fn propose(&mut self, request: &str) -> Result<(Candidate, AdvisorDecision)> {
        self.check_open()?;
        if self.config.mode == Mode::DesignerLed {
            return Err(self.forbid("proposals are disabled"));
        }
        let needed = self.config.required_formal();
        let have = self.formal_count();
        if have < needed {
            return Err(Error::InsufficientSeed { needed, have });
        }
        if self.config.mode == Mode::BoLed && !self.seed_queue.is_empty() {
            return Err(Error::InsufficientSeed {
                needed: have + self.seed_queue.len(),
                have,
            });
        }
        self.ensure_models()?;
        let formal = self.formal_history();
        let mut rng = stream(self.config.rng_seed, STREAM_PROPOSAL, self.proposals.len() as u64);
        let batch = generate_batch(
            &self.models,
            &formal,
            self.config.q,
            &self.reference,
            &self.config.acquisition,
            &mut rng,
        )?;

        let (prompt, decision) = match (self.config.mode, self.config.advisor.policy) {
            (Mode::BoLed, _) | (_, AdvisorPolicy::Argmax) => (None, select_argmax(&batch)?),
            (_, AdvisorPolicy::Scripted) => {
                let text = build_prompt(&self.app, &batch, &formal, request)?.render();
                let names: Vec<String> = self.app.objective_space.objectives().iter().map(|a| a.name.clone()).collect();
                (Some(text), select_scripted(request, &batch, &names)?)
            }
            (_, AdvisorPolicy::Llm) => {
                let text = build_prompt(&self.app, &batch, &formal, request)?.render();
                let endpoint = self
                    .config
                    .advisor
                    .endpoint
                    .as_ref()
                    .ok_or_else(|| Error::Config("llm policy needs an advisor endpoint".into()))?;
                let decision = select_llm(endpoint, self.transport.as_ref(), &text, &batch)?;
                (Some(text), decision)
            }
        };

        let chosen = batch.candidates[decision.index].clone();
        self.commit(Event::Batch {
            request: request.to_string(),
            batch,
        })?;
        if let Some(text) = prompt {
            self.commit(Event::Prompt { text })?;
        }
        self.commit(Event::Decision {
            decision: decision.clone(),
        })?;
        Ok((chosen, decision))
    }

    pub fn close(&mut self) -> Result<()> {
        self.check_open()?;
        self.commit(Event::Closed)
    }

    fn commit(&mut self, event: Event) -> Result<()> {
        self.apply(&event)?;
        self.records.push(Record {
            v: LOG_VERSION,
            seq: self.records.len() as u64,
            event,
        });
        Ok(())
    }

    /// State transition for one event. Shared by live operations and loading.
    fn apply(&mut self, event: &Event) -> Result<()> {
        if self.status == Status::Closed {
            return Err(Error::Closed);
        }
        match event {
            Event::Created { .. } => {
                if !self.records.is_empty() {
                    return Err(Error::Data("created record after the first line".into()));
                }
            }
            Event::Seed { index, point } => {
                self.check_dim(point)?;
                // Seeds are queued back to back right after creation.
                if !self.history.is_empty() || *index != self.seed_queue.len() {
                    return Err(Error::Data(format!("unexpected seed index {index}")));
                }
                if self.seed_queue.is_empty() {
                    self.current_sliders = point.clone();
                }
                self.seed_queue.push_back(point.clone());
            }
            Event::Sliders { point } => {
                self.check_dim(point)?;
                self.current_sliders = point.clone();
            }
            Event::Evaluation {
                observation,
                stream_position,
            } => {
                self.check_dim(&observation.point)?;
                if observation.objectives.len() != self.app.n_objectives() {
                    return Err(Error::Dimension {
                        expected: self.app.n_objectives(),
                        got: observation.objectives.len(),
                    });
                }
                self.simulator.set_stream_position(*stream_position as u128);
                self.clock_ms = self.clock_ms.max(observation.timestamp_ms);
                let formal = observation.is_formal();
                self.history.push(observation.clone());
                if formal {
                    self.models_stale = true;
                    if self.seed_queue.front() == Some(&observation.point) {
                        self.seed_queue.pop_front();
                        if let Some(next) = self.seed_queue.front() {
                            self.current_sliders = next.clone();
                        }
                    }
                    if self.status == Status::Seeding && self.formal_count() >= self.config.required_formal() {
                        self.status = Status::Active;
                    }
                }
            }
            Event::Batch { request, batch } => {
                if batch.is_empty() {
                    return Err(Error::Data("empty batch".into()));
                }
                self.pending = Some((request.clone(), batch.clone(), None));
            }
            Event::Prompt { text } => match &mut self.pending {
                Some((_, _, prompt @ None)) => *prompt = Some(text.clone()),
                _ => return Err(Error::Data("prompt without a preceding batch".into())),
            },
            Event::Decision { decision } => {
                let (request, batch, prompt) =
                    self.pending.take().ok_or_else(|| Error::Data("decision without a preceding batch".into()))?;
                let chosen = batch
                    .candidates
                    .get(decision.index)
                    .ok_or_else(|| Error::Data(format!("decision index {} outside the batch", decision.index)))?;
                self.current_sliders = chosen.point.clone();
                self.last_proposal = Some(chosen.point.clone());
                self.proposals.push(Proposal {
                    request,
                    batch,
                    prompt,
                    decision: decision.clone(),
                });
            }
            Event::Closed => self.status = Status::Closed,
        }
        Ok(())
    }

    /// The whole event log, one JSON record per line.
    pub fn to_log_string(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&r.to_line());
            out.push('\n');
        }
        out
    }

    pub fn persist(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_log_string())?;
        Ok(())
    }

    /// Rebuilds a session by re-applying every logged event. Models are refit
    /// from the formal history.
    pub fn load(text: &str) -> Result<Self> {
        match Self::load_partial(text)? {
            (s, None) => Ok(s),
            (_, Some(e)) => Err(e),
        }
    }

    pub fn load_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::load(&std::fs::read_to_string(path)?)
    }

    /// Like [`Session::load`], but a bad line stops loading and is returned
    /// next to the state built from the lines before it. Fails outright only
    /// when the header record is unusable.
    pub fn load_partial(text: &str) -> Result<(Self, Option<Error>)> {
        let records = parse_records(text);
        let mut iter = records.into_iter();
        let mut session = match iter.next() {
            Some(Ok((
                _,
                Record {
                    event: Event::Created { config, app },
                    ..
                },
            ))) => Self::blank(config, app).map_err(|e| Error::Load {
                line: 1,
                message: e.to_string(),
            })?,
            Some(Ok(_)) => {
                return Err(Error::Load {
                    line: 1,
                    message: "first record must be 'created'".into(),
                })
            }
            Some(Err(e)) => return Err(e),
            None => {
                return Err(Error::Load {
                    line: 1,
                    message: "empty log".into(),
                })
            }
        };
        let mut failure = None;
        for item in iter {
            let result = item.and_then(|(line, record)| {
                if record.seq != session.records.len() as u64 {
                    return Err(Error::Load {
                        line,
                        message: format!("expected seq {}, found {}", session.records.len(), record.seq),
                    });
                }
                session.commit(record.event).map_err(|e| Error::Load {
                    line,
                    message: e.to_string(),
                })
            });
            if let Err(e) = result {
                failure = Some(e);
                break;
            }
        }
        session.ensure_models()?;
        Ok((session, failure))
    }

    /// Re-executes a log from its configuration: seeds, evaluations and
    /// proposals are recomputed and must reproduce the logged records exactly.
    pub fn replay(text: &str) -> Result<Self> {
        Self::replay_with(text, Arc::new(HttpTransport))
    }

    pub fn replay_with(text: &str, transport: Arc<dyn ChatTransport>) -> Result<Self> {
        let logged: Vec<(usize, Record)> = parse_records(text).into_iter().collect::<Result<_>>()?;
        let Some((_, Record { event: Event::Created { config, app }, .. })) = logged.first() else {
            return Err(Error::Load {
                line: 1,
                message: "first record must be 'created'".into(),
            });
        };
        let mut config = config.clone();
        config.app = Some(app.clone());
        let mut session = Self::create(config)?.with_transport(transport);
        // The created record must reflect the original config, not the copy with the app inlined.
        session.records[0].event = logged[0].1.event.clone();
        session.config = match &logged[0].1.event {
            Event::Created { config, .. } => config.clone(),
            _ => unreachable!(),
        };

        let mut i = session.records.len();
        while i < logged.len() {
            let (line, record) = &logged[i];
            match &record.event {
                Event::Sliders { point } => session.set_sliders(point.clone())?,
                Event::Evaluation { observation, .. } => {
                    session.submit_evaluation(observation.point.clone(), observation.fidelity)?;
                }
                Event::Batch { request, .. } => {
                    session.propose(request)?;
                }
                Event::Closed => session.close()?,
                other => {
                    return Err(Error::Load {
                        line: *line,
                        message: format!("unexpected '{}' record", other.kind()),
                    })
                }
            }
            i = session.records.len();
            let n = i.min(logged.len());
            if let Some(k) = (0..n).find(|&k| session.records[k] != logged[k].1) {
                return Err(Error::Load {
                    line: logged[k].0,
                    message: "replay diverged from the logged record".into(),
                });
            }
        }
        if session.records.len() != logged.len() {
            return Err(Error::Data("replay produced extra records".into()));
        }
        Ok(session)
    }
}

/// Parses every non-empty line, keeping 1-based line numbers.
fn parse_records(text: &str) -> Vec<Result<(usize, Record)>> {
    let mut out = Vec::new();
    for (i, line) in text.split('\n').enumerate() {
        if line.is_empty() {
            continue;
        }
        let line_no = i + 1;
        let parsed = serde_json::from_str::<Record>(line)
            .map_err(|e| Error::Load {
                line: line_no,
                message: e.to_string(),
            })
            .and_then(|r| {
                if r.v != LOG_VERSION {
                    return Err(Error::Load {
                        line: line_no,
                        message: format!("unsupported record version {}", r.v),
                    });
                }
                Ok((line_no, r))
            });
        let stop = parsed.is_err();
        out.push(parsed);
        if stop {
            break;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acquisition::hypervolume_2d;
    use crate::domain::{pareto_front, ObjectiveVector};

    fn quick_config(mode: Mode) -> SessionConfig {
        SessionConfig {
            mode,
            rng_seed: 11,
            simulator: SimulatorConfig::test_profile(3),
            acquisition: AcquisitionConfig {
                n_mc: 32,
                raw_samples: 64,
                restarts: 4,
                evaluations_per_start: 40,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    fn run_seeds(s: &mut Session) {
        while let Some(x) = s.next_seed().cloned() {
            s.submit_evaluation(x, Fidelity::Formal).unwrap();
        }
    }

    #[test]
    fn creation_queues_seeds() {
        let s = Session::create(quick_config(Mode::Cooperative)).unwrap();
        assert_eq!(s.pending_seeds().count(), 5);
        assert_eq!(s.status(), Status::Seeding);
        assert_eq!(s.current_sliders(), s.next_seed().unwrap());
        let again = Session::create(quick_config(Mode::Cooperative)).unwrap();
        assert!(s.pending_seeds().eq(again.pending_seeds()));
        let mut other = quick_config(Mode::Cooperative);
        other.rng_seed = 12;
        let other = Session::create(other).unwrap();
        assert!(!s.pending_seeds().eq(other.pending_seeds()));
    }

    #[test]
    fn latin_hypercube_stratifies() {
        let mut c = quick_config(Mode::Cooperative);
        c.seed_design = SeedDesign::LatinHypercube;
        c.n_seed = 7;
        let s = Session::create(c).unwrap();
        for d in 0..5 {
            let mut cells: Vec<usize> = s.pending_seeds().map(|p| (p.coords()[d] * 7.0) as usize).collect();
            cells.sort();
            assert_eq!(cells, (0..7).collect::<Vec<_>>());
        }
    }

    #[test]
    fn minimal_seed_count() {
        let mut c = quick_config(Mode::Cooperative);
        c.n_seed = 2;
        c.proposal_lockout = 2;
        let mut s = Session::create(c).unwrap();
        assert_eq!(s.pending_seeds().count(), 2);
        let x = s.next_seed().unwrap().clone();
        s.submit_evaluation(x, Fidelity::Formal).unwrap();
        assert!(s.models().unwrap().is_empty());
        let x = s.next_seed().unwrap().clone();
        s.submit_evaluation(x, Fidelity::Formal).unwrap();
        assert_eq!(s.models().unwrap().len(), 2);
        assert_eq!(s.status(), Status::Active);
    }

    #[test]
    fn invalid_configs() {
        let bad = [
            SessionConfig {
                app_id: "nope".into(),
                ..Default::default()
            },
            SessionConfig { q: 0, ..Default::default() },
            SessionConfig {
                n_seed: 1,
                ..Default::default()
            },
            SessionConfig {
                mode: Mode::BoLed,
                n_seed: 3,
                ..Default::default()
            },
            SessionConfig {
                advisor: AdvisorConfig {
                    policy: AdvisorPolicy::Llm,
                    endpoint: None,
                },
                ..Default::default()
            },
        ];
        for c in bad {
            assert!(matches!(Session::create(c), Err(Error::Config(_))));
        }
    }

    #[test]
    fn proposal_lockout_and_activation() {
        let mut s = Session::create(quick_config(Mode::Cooperative)).unwrap();
        for i in 0..5 {
            assert_eq!(s.status(), Status::Seeding);
            match s.propose("") {
                Err(Error::InsufficientSeed { needed: 5, have }) => assert_eq!(have, i),
                other => panic!("{other:?}"),
            }
            let x = s.next_seed().unwrap().clone();
            s.submit_evaluation(x, Fidelity::Formal).unwrap();
        }
        assert_eq!(s.status(), Status::Active);
        let (c, d) = s.propose("").unwrap();
        assert_eq!(&c.point, s.current_sliders());
        assert_eq!(d.index, s.proposals()[0].batch.argmax_acquisition().unwrap());
    }

    #[test]
    fn informal_evaluations_leave_models_alone() {
        let mut s = Session::create(quick_config(Mode::Cooperative)).unwrap();
        run_seeds(&mut s);
        let before = s.model_fingerprints().unwrap();
        let n = s.history().len();
        s.submit_evaluation(DesignPoint::clamped(vec![0.3; 5]), Fidelity::Informal).unwrap();
        assert_eq!(s.history().len(), n + 1);
        assert_eq!(s.model_fingerprints().unwrap(), before);
        let x = DesignPoint::clamped(vec![0.7; 5]);
        let var_before = s.models().unwrap()[0].predict(&x).unwrap().variance;
        s.submit_evaluation(x.clone(), Fidelity::Formal).unwrap();
        assert_ne!(s.model_fingerprints().unwrap(), before);
        assert!(s.models().unwrap()[0].predict(&x).unwrap().variance < var_before);
    }

    #[test]
    fn bo_led_restrictions() {
        let mut s = Session::create(quick_config(Mode::BoLed)).unwrap();
        assert!(matches!(
            s.set_sliders(DesignPoint::clamped(vec![0.1; 5])),
            Err(Error::ModeForbids { .. })
        ));
        assert!(matches!(
            s.submit_evaluation(DesignPoint::clamped(vec![0.1; 5]), Fidelity::Formal),
            Err(Error::ModeForbids { .. })
        ));
        run_seeds(&mut s);
        let (c, d) = s.propose("increase Objective 2").unwrap();
        let batch = &s.proposals()[0].batch;
        assert_eq!(d.index, batch.argmax_acquisition().unwrap());
        assert_eq!(d.policy, crate::advisor::Policy::ArgmaxAcquisition);
        assert!(s.proposals()[0].prompt.is_none());
        assert!(s.submit_evaluation(DesignPoint::clamped(vec![0.1; 5]), Fidelity::Formal).is_err());
        s.submit_evaluation(c.point, Fidelity::Formal).unwrap();
    }

    #[test]
    fn designer_led_never_proposes() {
        let mut s = Session::create(quick_config(Mode::DesignerLed)).unwrap();
        run_seeds(&mut s);
        assert!(matches!(s.propose(""), Err(Error::ModeForbids { .. })));
        s.set_sliders(DesignPoint::clamped(vec![0.2; 5])).unwrap();
        s.submit_evaluation(DesignPoint::clamped(vec![0.2; 5]), Fidelity::Formal).unwrap();
        assert!(s.records().iter().all(|r| !matches!(r.event, Event::Batch { .. } | Event::Decision { .. })));
    }

    #[test]
    fn cooperative_scripted_follows_request() {
        let mut s = Session::create(quick_config(Mode::Cooperative)).unwrap();
        run_seeds(&mut s);
        let (c, _) = s.propose("Please propose parameters that increase Objective 2").unwrap();
        let batch = &s.proposals()[0].batch;
        let best = batch
            .candidates
            .iter()
            .map(|c| c.predictions[1].mean)
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(c.predictions[1].mean, best);
        assert!(s.proposals()[0].prompt.as_ref().unwrap().contains("increase Objective 2"));
    }

    #[test]
    fn closed_rejects_mutation() {
        let mut s = Session::create(quick_config(Mode::Cooperative)).unwrap();
        s.close().unwrap();
        assert_eq!(s.status(), Status::Closed);
        assert!(matches!(s.set_sliders(DesignPoint::clamped(vec![0.2; 5])), Err(Error::Closed)));
        assert!(matches!(s.close(), Err(Error::Closed)));
    }

    #[test]
    fn formal_hypervolume_never_decreases() {
        let mut s = Session::create(quick_config(Mode::Cooperative)).unwrap();
        run_seeds(&mut s);
        for i in 0..4 {
            let req = if i % 2 == 0 { "increase Objective 1" } else { "increase Objective 2" };
            s.propose(req).unwrap();
            let x = s.current_sliders().clone();
            s.submit_evaluation(x, Fidelity::Formal).unwrap();
            s.submit_evaluation(DesignPoint::clamped(vec![0.5; 5]), Fidelity::Informal).unwrap();
        }
        let mut prev = 0.0;
        let mut formal: Vec<ObjectiveVector> = Vec::new();
        for o in s.history().iter().filter(|o| o.is_formal()) {
            formal.push(o.objectives.clone());
            let front: Vec<ObjectiveVector> = pareto_front(&formal).into_iter().map(|i| formal[i].clone()).collect();
            let hv = hypervolume_2d(&front, s.reference()).unwrap();
            assert!(hv >= prev);
            prev = hv;
        }
    }

    fn scripted_session() -> Session {
        let mut s = Session::create(quick_config(Mode::Cooperative)).unwrap();
        run_seeds(&mut s);
        s.set_sliders(DesignPoint::clamped(vec![0.25; 5])).unwrap();
        s.submit_evaluation(DesignPoint::clamped(vec![0.25; 5]), Fidelity::Informal).unwrap();
        for i in 0..3 {
            let req = if i % 2 == 0 { "increase Objective 1" } else { "" };
            s.propose(req).unwrap();
            let x = s.current_sliders().clone();
            s.submit_evaluation(x, Fidelity::Formal).unwrap();
        }
        s
    }

    #[test]
    fn persist_load_round_trip() {
        let mut s = scripted_session();
        let log = s.to_log_string();
        let mut loaded = Session::load(&log).unwrap();
        assert_eq!(loaded.to_log_string(), log);
        assert_eq!(loaded.history(), s.history());
        assert_eq!(loaded.proposals(), s.proposals());
        assert_eq!(loaded.current_sliders(), s.current_sliders());
        assert_eq!(loaded.status(), s.status());
        for (a, b) in loaded.models().unwrap().to_vec().iter().zip(s.models().unwrap()) {
            let (ha, hb) = (a.hyperparameters().to_log_params(), b.hyperparameters().to_log_params());
            assert!(ha.iter().zip(&hb).all(|(x, y)| (x - y).abs() < 1e-6));
        }
        // Continuing after load matches continuing live.
        let x = DesignPoint::clamped(vec![0.6; 5]);
        assert_eq!(
            loaded.submit_evaluation(x.clone(), Fidelity::Informal).unwrap(),
            s.submit_evaluation(x, Fidelity::Informal).unwrap()
        );
    }

    #[test]
    fn replay_reproduces_log() {
        let s = scripted_session();
        let log = s.to_log_string();
        let replayed = Session::replay(&log).unwrap();
        assert_eq!(replayed.to_log_string(), log);
        let decisions = |s: &Session| s.proposals().iter().map(|p| p.decision.clone()).collect::<Vec<_>>();
        assert_eq!(decisions(&replayed), decisions(&s));
    }

    #[test]
    fn replay_detects_tampering() {
        let s = scripted_session();
        let mut lines: Vec<String> = s.to_log_string().lines().map(String::from).collect();
        let k = lines.iter().position(|l| l.contains("\"type\":\"evaluation\"")).unwrap();
        let mut rec: Record = serde_json::from_str(&lines[k]).unwrap();
        if let Event::Evaluation { observation, .. } = &mut rec.event {
            observation.raw_objectives[0] += 1e-9;
        }
        lines[k] = rec.to_line();
        match Session::replay(&(lines.join("\n") + "\n")) {
            Err(Error::Load { line, .. }) => assert_eq!(line, k + 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn truncated_log_reports_line() {
        let s = scripted_session();
        let log = s.to_log_string();
        let lines: Vec<&str> = log.lines().collect();
        let n = lines.len();
        let cut = lines[..n - 1].join("\n") + "\n" + &lines[n - 1][..lines[n - 1].len() / 2];
        match Session::load(&cut) {
            Err(Error::Load { line, .. }) => assert_eq!(line, n),
            other => panic!("{other:?}"),
        }
        let (partial, err) = Session::load_partial(&cut).unwrap();
        assert!(matches!(err, Some(Error::Load { line, .. }) if line == n));
        assert_eq!(partial.records().len(), n - 1);
        assert_eq!(partial.to_log_string(), lines[..n - 1].join("\n") + "\n");
    }

    #[test]
    fn bad_header_rejected() {
        assert!(matches!(Session::load(""), Err(Error::Load { line: 1, .. })));
        assert!(matches!(Session::load("{\"v\":1}\n"), Err(Error::Load { line: 1, .. })));
        let s = Session::create(quick_config(Mode::Cooperative)).unwrap();
        let log = s.to_log_string().replacen("\"v\":1", "\"v\":9", 1);
        assert!(matches!(Session::load(&log), Err(Error::Load { line: 1, .. })));
    }
}
