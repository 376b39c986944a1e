//! Headless runs: seeded sessions driven by a fixed request schedule.

use serde::{Deserialize, Serialize};

use crate::domain::{DesignPoint, Fidelity, ObjectiveVector};
use crate::error::{Error, Result};
use crate::metrics::centroid_separation;
use crate::session::{Mode, Session, SessionConfig};

pub const REQUEST_OBJECTIVE_1: &str = "Please propose parameters that increase Objective 1";
pub const REQUEST_OBJECTIVE_2: &str = "Please propose parameters that increase Objective 2";

/// Request for 0-based iteration `i` of the alternating schedule; the first
/// iteration asks for Objective 1.
pub fn alternating_request(i: usize) -> &'static str {
    if i.is_multiple_of(2) {
        REQUEST_OBJECTIVE_1
    } else {
        REQUEST_OBJECTIVE_2
    }
}

/// Formally evaluates every queued seed point.
pub fn evaluate_seeds(session: &mut Session) -> Result<()> {
    while let Some(x) = session.next_seed().cloned() {
        session.submit_evaluation(x, Fidelity::Formal)?;
    }
    if session.formal_count() < session.config().required_formal() {
        return Err(Error::Config(format!(
            "seeding yields {} formal evaluations but proposals need {}",
            session.formal_count(),
            session.config().required_formal()
        )));
    }
    Ok(())
}

/// Seeds, then `iterations` rounds of propose and formally evaluate the proposal.
pub fn run_automated(session: &mut Session, iterations: usize, schedule: impl Fn(usize) -> String) -> Result<()> {
    if session.config().mode == Mode::DesignerLed {
        return Err(Error::ModeForbids {
            mode: Mode::DesignerLed.to_string(),
            detail: "nothing to automate without proposals".into(),
        });
    }
    evaluate_seeds(session)?;
    for i in 0..iterations {
        session.propose(&schedule(i))?;
        let x = session.current_sliders().clone();
        session.submit_evaluation(x, Fidelity::Formal)?;
    }
    Ok(())
}

/// Outcome of one steering run with two interleaved request groups.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SteeringRun {
    pub rng_seed: u64,
    pub separation: f64,
    /// Chosen points for even and odd iterations.
    pub groups: [Vec<DesignPoint>; 2],
    /// Observed objectives of the chosen points, tagged with their group.
    pub outcomes: Vec<(usize, ObjectiveVector)>,
}

/// Runs a cooperative session whose iteration `i` uses `requests[i % 2]` and
/// measures how far apart the two groups of chosen designs end up.
pub fn steering_run(config: SessionConfig, iterations: usize, requests: [&str; 2]) -> Result<(Session, SteeringRun)> {
    let rng_seed = config.rng_seed;
    let mut session = Session::create(SessionConfig {
        mode: Mode::Cooperative,
        ..config
    })?;
    run_automated(&mut session, iterations, |i| requests[i % 2].to_string())?;
    let mut groups: [Vec<DesignPoint>; 2] = Default::default();
    for (i, p) in session.proposals().iter().enumerate() {
        groups[i % 2].push(p.chosen().point.clone());
    }
    let outcomes = session
        .history()
        .iter()
        .filter(|o| o.is_formal())
        .skip(session.formal_count() - iterations)
        .enumerate()
        .map(|(i, o)| (i % 2, o.objectives.clone()))
        .collect();
    let separation = centroid_separation(&groups[0], &groups[1])?;
    Ok((
        session,
        SteeringRun {
            rng_seed,
            separation,
            groups,
            outcomes,
        },
    ))
}

pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
