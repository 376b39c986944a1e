//! Candidate selection: prompt rendering, the scripted policy and the chat-completion client.

use std::fmt::Write as _;
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::acquisition::{Candidate, CandidateBatch};
use crate::domain::{DisplayScale, Observation};
use crate::error::{Error, Result};
use crate::testbed::SyntheticApp;

pub const MAIN_INSTRUCTION: &str =
    "Based on the user's request described below, select the index of the candidate point and provide a reason for your choice.";

const REPLY_FORMAT: &str = "Answer with a single JSON object of the form {\"index\": <integer>, \"reason\": \"<text>\"} and nothing else.";

/// One candidate as the advisor sees it, in display units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateStats {
    pub index: usize,
    pub parameters: Vec<f64>,
    pub acquisition_value: f64,
    /// Predictive means clipped to the objective display ranges.
    pub predicted_mean: Vec<f64>,
    pub predicted_variance: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub parameters: Vec<f64>,
    pub objectives: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub task_info: String,
    pub parameter_names: Vec<String>,
    pub objective_names: Vec<String>,
    pub candidates: Vec<CandidateStats>,
    pub history: Vec<HistoryRecord>,
    pub request: String,
}

/// Display-unit view of one candidate; means are clipped, variances scaled.
pub fn candidate_stats(app: &SyntheticApp, index: usize, c: &Candidate) -> Result<CandidateStats> {
    let objs = &app.objective_space;
    if c.predictions.len() != objs.len() {
        return Err(Error::Dimension {
            expected: objs.len(),
            got: c.predictions.len(),
        });
    }
    let mut predicted_mean = Vec::with_capacity(objs.len());
    let mut predicted_variance = Vec::with_capacity(objs.len());
    for (k, (p, axis)) in c.predictions.iter().zip(objs.objectives()).enumerate() {
        let m = objs.to_display_unchecked(k, p.mean);
        predicted_mean.push(m.clamp(axis.display_min, axis.display_max));
        predicted_variance.push(p.variance * objs.slope(k).powi(2));
    }
    Ok(CandidateStats {
        index,
        parameters: app.parameter_space.to_display(c.point.coords())?,
        acquisition_value: c.acquisition_value,
        predicted_mean,
        predicted_variance,
    })
}

/// Gather the display-unit statistics for a batch. Only formal observations
/// enter the history block, in evaluation order.
pub fn build_prompt(app: &SyntheticApp, batch: &CandidateBatch, history: &[Observation], request: &str) -> Result<PromptBundle> {
    if batch.is_empty() {
        return Err(Error::Argument("cannot build a prompt for an empty batch".into()));
    }
    let params = &app.parameter_space;
    let objs = &app.objective_space;

    let candidates = batch
        .candidates
        .iter()
        .enumerate()
        .map(|(index, c)| candidate_stats(app, index, c))
        .collect::<Result<Vec<_>>>()?;

    let history = history
        .iter()
        .filter(|o| o.is_formal())
        .map(|o| {
            let objectives = o
                .objectives
                .values()
                .iter()
                .zip(objs.objectives())
                .enumerate()
                .map(|(k, (&v, axis))| objs.to_display_unchecked(k, v).clamp(axis.display_min, axis.display_max))
                .collect();
            Ok(HistoryRecord {
                parameters: params.to_display(o.point.coords())?,
                objectives,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(PromptBundle {
        task_info: task_info(app),
        parameter_names: params.dims().iter().map(|a| a.name.clone()).collect(),
        objective_names: objs.objectives().iter().map(|a| a.name.clone()).collect(),
        candidates,
        history,
        request: request.to_string(),
    })
}

fn task_info(app: &SyntheticApp) -> String {
    let mut s = format!("Application: {}\n{}\n\nDesign parameters:\n", app.name, app.description);
    for axis in app.parameter_space.dims() {
        let _ = writeln!(s, "- {}: {}", axis.name, range_text(axis.display_min, axis.display_max, &axis.unit));
    }
    s.push_str("\nObjectives (higher is better):\n");
    for (k, axis) in app.objective_space.objectives().iter().enumerate() {
        let _ = writeln!(
            s,
            "- Objective {} ({}): {}",
            k + 1,
            axis.name,
            range_text(axis.display_min, axis.display_max, &axis.unit)
        );
    }
    s.pop();
    s
}

fn range_text(lo: f64, hi: f64, unit: &str) -> String {
    if unit.is_empty() {
        format!("range {lo} to {hi}")
    } else {
        format!("range {lo} to {hi} {unit}")
    }
}

fn fmt_num(v: f64) -> String {
    format!("{v:.4}")
}

fn named_values(names: &[String], values: &[f64]) -> String {
    names
        .iter()
        .zip(values)
        .map(|(n, &v)| format!("{n} = {}", fmt_num(v)))
        .collect::<Vec<_>>()
        .join(", ")
}

impl PromptBundle {
    /// Text sent to the advisor. Pure function of the bundle.
    pub fn render(&self) -> String {
        let mut s = String::new();
        s.push_str(MAIN_INSTRUCTION);
        s.push_str("\n\n## Task Information\n");
        s.push_str(&self.task_info);
        s.push_str("\n\n## Candidate Points\n");
        for c in &self.candidates {
            let _ = write!(
                s,
                "Candidate {}: parameters [{}]; acquisition value = {}",
                c.index,
                named_values(&self.parameter_names, &c.parameters),
                fmt_num(c.acquisition_value)
            );
            for (k, name) in self.objective_names.iter().enumerate() {
                let _ = write!(
                    s,
                    "; predicted {} mean = {}, variance = {}",
                    name,
                    fmt_num(c.predicted_mean[k]),
                    fmt_num(c.predicted_variance[k])
                );
            }
            s.push('\n');
        }
        s.push_str("\n## Evaluation History\n");
        if self.history.is_empty() {
            s.push_str("(no evaluations yet)\n");
        }
        for (i, h) in self.history.iter().enumerate() {
            let _ = writeln!(
                s,
                "Evaluation {}: parameters [{}]; observed [{}]",
                i + 1,
                named_values(&self.parameter_names, &h.parameters),
                named_values(&self.objective_names, &h.objectives)
            );
        }
        s.push_str("\n## Designer's Request\n");
        s.push_str(&self.request);
        s.push('\n');
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    Llm,
    Scripted,
    ArgmaxAcquisition,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdvisorDecision {
    pub index: usize,
    pub reason: String,
    pub raw_response: String,
    pub policy: Policy,
    #[serde(default)]
    pub retries: u32,
    /// Set when the configured policy failed and argmax acquisition was used instead.
    #[serde(default)]
    pub fallback: bool,
}

fn empty_batch() -> Error {
    Error::Argument("cannot select from an empty batch".into())
}

pub fn select_argmax(batch: &CandidateBatch) -> Result<AdvisorDecision> {
    let index = batch.argmax_acquisition().ok_or_else(empty_batch)?;
    let reason = format!("Candidate {index} has the highest acquisition value in the batch.");
    Ok(AdvisorDecision {
        index,
        raw_response: json!({ "index": index, "reason": reason }).to_string(),
        reason,
        policy: Policy::ArgmaxAcquisition,
        retries: 0,
        fallback: false,
    })
}

/// Which objective (0-based) a request asks to increase, if any.
pub fn requested_objective(request: &str, objective_names: &[String]) -> Option<usize> {
    let by_index = Regex::new(r"(?i)\bincrease\s+(?:the\s+)?objective\s*(\d+)\b").expect("static regex");
    if let Some(k) = by_index.captures(request).and_then(|c| c[1].parse::<usize>().ok()) {
        if (1..=objective_names.len()).contains(&k) {
            return Some(k - 1);
        }
    }
    objective_names.iter().position(|name| {
        let pattern = format!(r"(?i)\bincrease\s+(?:the\s+)?{}", regex::escape(name.trim()));
        Regex::new(&pattern).is_ok_and(|re| re.is_match(request))
    })
}

/// Deterministic stand-in for the LLM: objective-directed requests pick the
/// batch-max predictive mean, anything else the batch-max acquisition value.
pub fn select_scripted(request: &str, batch: &CandidateBatch, objective_names: &[String]) -> Result<AdvisorDecision> {
    if batch.is_empty() {
        return Err(empty_batch());
    }
    let (index, reason) = match requested_objective(request, objective_names) {
        Some(k) => {
            let index = batch.argmax_mean(k).ok_or_else(empty_batch)?;
            (
                index,
                format!(
                    "The request asks to increase {}; candidate {index} has the highest predicted {} in the batch.",
                    objective_names[k], objective_names[k]
                ),
            )
        }
        None => {
            let index = batch.argmax_acquisition().ok_or_else(empty_batch)?;
            (
                index,
                format!("No objective-directed request recognized; candidate {index} has the highest acquisition value."),
            )
        }
    };
    Ok(AdvisorDecision {
        index,
        raw_response: json!({ "index": index, "reason": reason }).to_string(),
        reason,
        policy: Policy::Scripted,
        retries: 0,
        fallback: false,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdvisorEndpointConfig {
    pub base_url: String,
    pub model_name: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env_var: String,
    pub timeout_secs: f64,
    pub max_retries: u32,
    pub temperature: Option<f64>,
}

impl Default for AdvisorEndpointConfig {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com/v1".into(),
            model_name: String::new(),
            api_key_env_var: "COOPT_ADVISOR_API_KEY".into(),
            timeout_secs: 60.0,
            max_retries: 2,
            temperature: None,
        }
    }
}

impl AdvisorEndpointConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_url.trim().is_empty() {
            return Err(Error::Config("advisor base_url is empty".into()));
        }
        if self.model_name.trim().is_empty() {
            return Err(Error::Config("advisor model_name is empty".into()));
        }
        if !(self.timeout_secs.is_finite() && self.timeout_secs > 0.0) {
            return Err(Error::Config(format!("advisor timeout must be positive, got {}", self.timeout_secs)));
        }
        Ok(())
    }

    pub fn completions_url(&self) -> String {
        format!("{}/chat/completions", self.base_url.trim_end_matches('/'))
    }

    pub fn request_body(&self, rendered_prompt: &str) -> Value {
        let mut body = json!({
            "model": self.model_name,
            "messages": [
                { "role": "system", "content": REPLY_FORMAT },
                { "role": "user", "content": rendered_prompt },
            ],
            "response_format": { "type": "json_object" },
        });
        if let Some(t) = self.temperature {
            body["temperature"] = json!(t);
        }
        body
    }
}

/// Sends one chat-completion request and returns the raw response body.
pub trait ChatTransport: Send + Sync {
    fn send(&self, config: &AdvisorEndpointConfig, body: &Value) -> std::result::Result<String, String>;
}

/// Blocking HTTP transport.
#[derive(Debug, Default, Clone, Copy)]
pub struct HttpTransport;

impl ChatTransport for HttpTransport {
    fn send(&self, config: &AdvisorEndpointConfig, body: &Value) -> std::result::Result<String, String> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        let mut req = agent.post(config.completions_url()).header("Content-Type", "application/json");
        if let Ok(key) = std::env::var(&config.api_key_env_var) {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = req.send(body.to_string()).map_err(|e| format!("transport: {e}"))?;
        let status = resp.status();
        let text = resp.body_mut().read_to_string().map_err(|e| format!("reading body: {e}"))?;
        if !status.is_success() {
            return Err(format!("http status {}: {}", status.as_u16(), truncate(&text, 200)));
        }
        Ok(text)
    }
}

fn truncate(s: &str, n: usize) -> &str {
    match s.char_indices().nth(n) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

#[derive(Debug, Deserialize)]
struct Reply {
    index: i64,
    reason: String,
}

/// Pull the structured reply out of a chat-completion response body.
fn parse_reply(body: &str) -> std::result::Result<Reply, String> {
    let v: Value = serde_json::from_str(body).map_err(|e| format!("response is not JSON: {e}"))?;
    let content = v
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or("response has no choices[0].message.content")?;
    // Some models wrap the object in prose or code fences.
    let start = content.find('{').ok_or("reply contains no JSON object")?;
    let end = content.rfind('}').ok_or("reply contains no JSON object")?;
    if end < start {
        return Err("reply contains no JSON object".into());
    }
    serde_json::from_str(&content[start..=end]).map_err(|e| format!("reply does not match {{index, reason}}: {e}"))
}

/// Ask the endpoint for a decision. Transport and parse failures are retried;
/// if retries run out and at least one reply parsed but named an invalid index,
/// the decision falls back to argmax acquisition.
pub fn select_llm(
    config: &AdvisorEndpointConfig,
    transport: &dyn ChatTransport,
    rendered_prompt: &str,
    batch: &CandidateBatch,
) -> Result<AdvisorDecision> {
    if batch.is_empty() {
        return Err(empty_batch());
    }
    let body = config.request_body(rendered_prompt);
    let attempts = config.max_retries + 1;
    let mut last_failure = String::new();
    let mut last_raw = String::new();
    let mut bad_index = false;
    for attempt in 0..attempts {
        let raw = match transport.send(config, &body) {
            Ok(raw) => raw,
            Err(e) => {
                last_failure = e;
                continue;
            }
        };
        match parse_reply(&raw) {
            Ok(reply) if reply.index >= 0 && (reply.index as usize) < batch.len() => {
                return Ok(AdvisorDecision {
                    index: reply.index as usize,
                    reason: reply.reason,
                    raw_response: raw,
                    policy: Policy::Llm,
                    retries: attempt,
                    fallback: false,
                });
            }
            Ok(reply) => {
                bad_index = true;
                last_failure = format!("index {} out of range for a batch of {}", reply.index, batch.len());
            }
            Err(e) => last_failure = e,
        }
        last_raw = raw;
    }
    if bad_index {
        let argmax = select_argmax(batch)?;
        return Ok(AdvisorDecision {
            reason: format!(
                "Fallback: the advisor did not return a valid index after {attempts} attempts ({last_failure}). {}",
                argmax.reason
            ),
            raw_response: last_raw,
            retries: attempts - 1,
            fallback: true,
            ..argmax
        });
    }
    Err(Error::AdvisorUnavailable { attempts, last_failure })
}
