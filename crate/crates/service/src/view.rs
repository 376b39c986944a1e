//! Display-unit wire views, derived from a session on every request.

use coopt_core::advisor::{candidate_stats, CandidateStats, Policy};
use coopt_core::domain::{pareto_front, Axis, DisplayScale, Fidelity, Observation};
use coopt_core::session::{AdvisorPolicy, Mode, Proposal, Session, Status};
use coopt_core::testbed::SyntheticApp;
use coopt_core::Result;
use serde::Serialize;

#[derive(Debug, Serialize)]
pub struct AppView {
    pub id: String,
    pub name: String,
    pub description: String,
    pub parameters: Vec<Axis>,
    pub objectives: Vec<Axis>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ObservationView {
    pub iteration: usize,
    pub fidelity: Fidelity,
    pub parameters: Vec<f64>,
    pub objectives: Vec<f64>,
    pub timestamp_ms: u64,
    /// Non-dominated among the formal observations; informal ones are never flagged.
    pub pareto: bool,
}

#[derive(Debug, Serialize)]
pub struct ProposalView {
    pub request: String,
    pub reason: String,
    pub policy: Policy,
    pub fallback: bool,
    pub candidate: CandidateStats,
}

#[derive(Debug, Serialize)]
pub struct Delays {
    pub formal_ms: u64,
    pub informal_ms: u64,
}

#[derive(Debug, Serialize)]
pub struct SessionView {
    pub id: String,
    pub app: AppView,
    pub mode: Mode,
    pub policy: AdvisorPolicy,
    pub status: Status,
    pub q: usize,
    pub required_formal: usize,
    pub formal_count: usize,
    pub sliders: Vec<f64>,
    pub next_seed: Option<Vec<f64>>,
    pub pending_seeds: usize,
    pub delays: Delays,
    pub history: Vec<ObservationView>,
    pub proposals: Vec<ProposalView>,
    pub log_records: usize,
}

pub fn pareto_flags(history: &[Observation]) -> Vec<bool> {
    let formal: Vec<usize> = (0..history.len()).filter(|&i| history[i].is_formal()).collect();
    let objectives: Vec<_> = formal.iter().map(|&i| history[i].objectives.clone()).collect();
    let mut flags = vec![false; history.len()];
    for k in pareto_front(&objectives) {
        flags[formal[k]] = true;
    }
    flags
}

pub fn observation(app: &SyntheticApp, o: &Observation, pareto: bool) -> Result<ObservationView> {
    let objs = &app.objective_space;
    let objectives = o
        .objectives
        .values()
        .iter()
        .zip(objs.objectives())
        .enumerate()
        .map(|(k, (&v, axis))| objs.to_display_unchecked(k, v).clamp(axis.display_min, axis.display_max))
        .collect();
    Ok(ObservationView {
        iteration: o.iteration,
        fidelity: o.fidelity,
        parameters: app.parameter_space.to_display(o.point.coords())?,
        objectives,
        timestamp_ms: o.timestamp_ms,
        pareto,
    })
}

pub fn proposal(app: &SyntheticApp, p: &Proposal) -> Result<ProposalView> {
    Ok(ProposalView {
        request: p.request.clone(),
        reason: p.decision.reason.clone(),
        policy: p.decision.policy,
        fallback: p.decision.fallback,
        candidate: candidate_stats(app, p.decision.index, p.chosen())?,
    })
}

pub fn snapshot(id: &str, s: &Session) -> Result<SessionView> {
    let app = s.app();
    let params = &app.parameter_space;
    let flags = pareto_flags(s.history());
    let history = s
        .history()
        .iter()
        .zip(flags)
        .map(|(o, f)| observation(app, o, f))
        .collect::<Result<_>>()?;
    let proposals = s.proposals().iter().map(|p| proposal(app, p)).collect::<Result<_>>()?;
    let config = s.config();
    Ok(SessionView {
        id: id.to_string(),
        app: AppView {
            id: app.id.clone(),
            name: app.name.clone(),
            description: app.description.clone(),
            parameters: params.dims().to_vec(),
            objectives: app.objective_space.objectives().to_vec(),
        },
        mode: config.mode,
        policy: config.advisor.policy,
        status: s.status(),
        q: config.q,
        required_formal: config.required_formal(),
        formal_count: s.formal_count(),
        sliders: params.to_display(s.current_sliders().coords())?,
        next_seed: s.next_seed().map(|p| params.to_display(p.coords())).transpose()?,
        pending_seeds: s.pending_seeds().count(),
        delays: Delays {
            formal_ms: config.simulator.formal_delay_ms,
            informal_ms: config.simulator.informal_delay_ms,
        },
        history,
        proposals,
        log_records: s.records().len(),
    })
}
