//! Hypervolume, Monte-Carlo noisy expected hypervolume improvement (NEHVI)
//! and greedy q-batch candidate generation.
//!
//! The MC estimator keeps joint posterior samples over the set
//! `S = baseline ∪ pending` as `f_S = mu_S + L_S z` with fixed standard-normal
//! columns `z`. Conditioning a candidate on `S` only needs one new row of the
//! Cholesky factor, so a chosen candidate can be appended to `S` without
//! resampling anything already drawn.

mod hypervolume;

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::domain::{DesignPoint, Observation};
use crate::error::{Error, Result};
use crate::surrogate::{GaussianProcessModel, PosteriorPrediction};

pub use hypervolume::{hypervolume_2d, ReferencePoint, REFERENCE_MARGIN};
pub(crate) use hypervolume::Staircase;

/// Floor on conditional variances, relative to the prior signal variance.
const VARIANCE_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub point: DesignPoint,
    pub acquisition_value: f64,
    pub predictions: Vec<PosteriorPrediction>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateBatch {
    pub candidates: Vec<Candidate>,
    /// Number of formal observations the models were trained on.
    pub generation_iteration: usize,
}

impl CandidateBatch {
    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    /// Index of the highest acquisition value, lowest index on ties.
    pub fn argmax_acquisition(&self) -> Option<usize> {
        argmax_by(&self.candidates, |c| c.acquisition_value)
    }

    /// Index of the highest predictive mean for `objective`, lowest index on ties.
    pub fn argmax_mean(&self, objective: usize) -> Option<usize> {
        argmax_by(&self.candidates, |c| c.predictions.get(objective).map_or(f64::NEG_INFINITY, |p| p.mean))
    }
}

fn argmax_by<T>(items: &[T], key: impl Fn(&T) -> f64) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, item) in items.iter().enumerate() {
        let v = key(item);
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

/// How the candidate's own posterior enters the MC average.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// Sample the candidate jointly with `S`, like every other point.
    Sampled,
    /// Sample `S` only; integrate the candidate's conditional normal in closed form.
    Conditional,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AcquisitionConfig {
    pub n_mc: usize,
    pub estimator: Estimator,
    /// Uniform random points scored before local refinement.
    pub raw_samples: usize,
    /// Best raw points that are refined by pattern search.
    pub restarts: usize,
    pub evaluations_per_start: usize,
    pub initial_step: f64,
    pub min_step: f64,
    /// Minimum distance between candidates of one batch.
    pub min_separation: f64,
    /// Fresh-start attempts per greedy step before giving up.
    pub max_attempts: usize,
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        Self {
            n_mc: 128,
            estimator: Estimator::Conditional,
            raw_samples: 256,
            restarts: 32,
            evaluations_per_start: 200,
            initial_step: 0.1,
            min_step: 1e-4,
            min_separation: 1e-6,
            max_attempts: 3,
        }
    }
}

impl AcquisitionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_mc == 0 || self.raw_samples == 0 || self.max_attempts == 0 {
            return Err(Error::Config("n_mc, raw_samples and max_attempts must be positive".into()));
        }
        if !(self.initial_step > 0.0 && self.min_step > 0.0 && self.min_separation >= 0.0) {
            return Err(Error::Config("pattern-search steps must be positive".into()));
        }
        Ok(())
    }
}

/// Per-objective conditioning state over `S`.
struct ObjectiveSamples {
    /// `L_T^{-1} k(T, s)` for every `s` in `S`.
    whitened: Vec<Vec<f64>>,
    /// Rows of the lower-triangular factor of the posterior covariance over `S`.
    chol_rows: Vec<Vec<f64>>,
    /// `z[k][i]`: base sample of point `k` in draw `i`.
    z: Vec<Vec<f64>>,
    floor: f64,
}

/// Scratch output of conditioning one point on `S`.
struct Conditional {
    mean: f64,
    whitened: Vec<f64>,
    w: Vec<f64>,
    sd: f64,
}

/// Joint posterior samples over `S` and the per-draw Pareto staircases.
pub(crate) struct NehviState<'a> {
    models: &'a [GaussianProcessModel],
    reference: (f64, f64),
    n_mc: usize,
    points: Vec<Vec<f64>>,
    objectives: Vec<ObjectiveSamples>,
    fronts: Vec<Staircase>,
    scratch: Vec<Conditional>,
    values: Vec<Vec<f64>>,
}

impl<'a> NehviState<'a> {
    pub fn new(models: &'a [GaussianProcessModel], reference: &ReferencePoint, n_mc: usize) -> Result<Self> {
        if models.len() != 2 {
            return Err(Error::UnsupportedDimension(models.len()));
        }
        if n_mc == 0 {
            return Err(Error::Argument("n_mc must be at least 1".into()));
        }
        let reference = reference.pair()?;
        let dim = models[0].dim();
        if models[1].dim() != dim {
            return Err(Error::Dimension {
                expected: dim,
                got: models[1].dim(),
            });
        }
        let objectives = models
            .iter()
            .map(|m| ObjectiveSamples {
                whitened: Vec::new(),
                chol_rows: Vec::new(),
                z: Vec::new(),
                floor: VARIANCE_FLOOR * m.hyperparameters().signal_variance,
            })
            .collect();
        let scratch = models
            .iter()
            .map(|m| Conditional {
                mean: 0.0,
                whitened: vec![0.0; m.n_train()],
                w: Vec::new(),
                sd: 0.0,
            })
            .collect();
        Ok(Self {
            models,
            reference,
            n_mc,
            points: Vec::new(),
            objectives,
            fronts: vec![Staircase::default(); n_mc],
            scratch,
            values: vec![vec![0.0; n_mc]; 2],
        })
    }

    pub fn dim(&self) -> usize {
        self.models[0].dim()
    }

    /// Draws one fresh standard-normal column per objective.
    pub fn draw_innovations<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<Vec<f64>> {
        (0..self.models.len())
            .map(|_| (0..self.n_mc).map(|_| rng.sample(StandardNormal)).collect())
            .collect()
    }

    /// Conditions `x` on `S`: fills `self.values` with the per-draw
    /// conditional means, and `scratch[j].sd` with the conditional deviation.
    fn condition(&mut self, x: &[f64]) {
        let k = self.points.len();
        for (j, model) in self.models.iter().enumerate() {
            let obj = &self.objectives[j];
            let c = &mut self.scratch[j];
            c.mean = model.whitened_cross(x, &mut c.whitened);
            let mut var = model.hyperparameters().signal_variance - dot(&c.whitened, &c.whitened);
            c.w.clear();
            for s in 0..k {
                let cross = model.kernel(&self.points[s], x) - dot(&obj.whitened[s], &c.whitened);
                let row = &obj.chol_rows[s];
                let ws = (cross - dot(&row[..s], &c.w)) / row[s];
                var -= ws * ws;
                c.w.push(ws);
            }
            c.sd = var.max(obj.floor).sqrt();

            let out = &mut self.values[j];
            out.iter_mut().for_each(|v| *v = c.mean);
            for (ws, zs) in c.w.iter().zip(&obj.z) {
                for (o, z) in out.iter_mut().zip(zs) {
                    *o += ws * z;
                }
            }
        }
    }

    fn add_innovations(&mut self, innovations: &[Vec<f64>]) {
        for (j, out) in self.values.iter_mut().enumerate() {
            let sd = self.scratch[j].sd;
            for (o, z) in out.iter_mut().zip(&innovations[j]) {
                *o += sd * z;
            }
        }
    }

    fn summarize(&self, per_draw: impl Iterator<Item = f64>) -> (f64, f64) {
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        for v in per_draw {
            sum += v;
            sum_sq += v * v;
        }
        let n = self.n_mc as f64;
        let mean = sum / n;
        let se = if self.n_mc > 1 {
            ((sum_sq - n * mean * mean).max(0.0) / (n - 1.0) / n).sqrt()
        } else {
            0.0
        };
        (mean, se)
    }

    /// MC mean and standard error of the hypervolume improvement of `x`.
    pub fn evaluate(&mut self, x: &[f64], innovations: &[Vec<f64>]) -> (f64, f64) {
        self.condition(x);
        self.add_innovations(innovations);
        let r = self.reference;
        self.summarize(
            self.fronts
                .iter()
                .enumerate()
                .map(|(i, front)| front.improvement((self.values[0][i], self.values[1][i]), r)),
        )
    }

    /// Same expectation as [`Self::evaluate`], with the candidate's own
    /// conditional normal integrated exactly inside every draw of `S`.
    pub fn evaluate_conditional(&mut self, x: &[f64]) -> (f64, f64) {
        self.condition(x);
        let r = self.reference;
        let sd = (self.scratch[0].sd, self.scratch[1].sd);
        self.summarize(
            self.fronts
                .iter()
                .enumerate()
                .map(|(i, front)| front.expected_improvement((self.values[0][i], self.values[1][i]), sd, r)),
        )
    }

    fn score(&mut self, x: &[f64], innovations: &[Vec<f64>], estimator: Estimator) -> f64 {
        match estimator {
            Estimator::Sampled => self.evaluate(x, innovations).0,
            Estimator::Conditional => self.evaluate_conditional(x).0,
        }
    }

    /// Adds `x` to `S` using `innovations` as its base samples.
    pub fn append(&mut self, x: &[f64], innovations: &[Vec<f64>]) {
        self.condition(x);
        self.add_innovations(innovations);
        for (j, obj) in self.objectives.iter_mut().enumerate() {
            let c = &self.scratch[j];
            obj.whitened.push(c.whitened.clone());
            let mut row = c.w.clone();
            row.push(c.sd);
            obj.chol_rows.push(row);
            obj.z.push(innovations[j].clone());
        }
        for (i, front) in self.fronts.iter_mut().enumerate() {
            front.insert((self.values[0][i], self.values[1][i]), self.reference);
        }
        self.points.push(x.to_vec());
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_point(models: &[GaussianProcessModel], x: &DesignPoint) -> Result<()> {
    let dim = models.first().map_or(0, GaussianProcessModel::dim);
    if x.dim() != dim {
        return Err(Error::Dimension { expected: dim, got: x.dim() });
    }
    Ok(())
}

/// NEHVI of `candidate` with its MC standard error. Baseline values are
/// latent and re-sampled in every draw, jointly with pending points.
#[allow(clippy::too_many_arguments)]
pub fn nehvi_with_stats<R: Rng + ?Sized>(
    models: &[GaussianProcessModel],
    candidate: &DesignPoint,
    baseline: &[DesignPoint],
    pending: &[DesignPoint],
    reference: &ReferencePoint,
    n_mc: usize,
    estimator: Estimator,
    rng: &mut R,
) -> Result<(f64, f64)> {
    let mut state = NehviState::new(models, reference, n_mc)?;
    for p in baseline.iter().chain(pending).chain([candidate]) {
        check_point(models, p)?;
    }
    for p in baseline.iter().chain(pending) {
        let z = state.draw_innovations(rng);
        state.append(p.coords(), &z);
    }
    Ok(match estimator {
        Estimator::Sampled => {
            let z = state.draw_innovations(rng);
            state.evaluate(candidate.coords(), &z)
        }
        Estimator::Conditional => state.evaluate_conditional(candidate.coords()),
    })
}

/// Plain MC NEHVI with its standard error.
pub fn nehvi_mc_with_stats<R: Rng + ?Sized>(
    models: &[GaussianProcessModel],
    candidate: &DesignPoint,
    baseline: &[DesignPoint],
    pending: &[DesignPoint],
    reference: &ReferencePoint,
    n_mc: usize,
    rng: &mut R,
) -> Result<(f64, f64)> {
    nehvi_with_stats(models, candidate, baseline, pending, reference, n_mc, Estimator::Sampled, rng)
}

pub fn nehvi_mc<R: Rng + ?Sized>(
    models: &[GaussianProcessModel],
    candidate: &DesignPoint,
    baseline: &[DesignPoint],
    pending: &[DesignPoint],
    reference: &ReferencePoint,
    n_mc: usize,
    rng: &mut R,
) -> Result<f64> {
    nehvi_mc_with_stats(models, candidate, baseline, pending, reference, n_mc, rng).map(|(v, _)| v)
}

/// Compass search from `x`, moving to the first improving neighbour and
/// halving the step when none improves.
fn pattern_search(
    state: &mut NehviState<'_>,
    innovations: &[Vec<f64>],
    mut x: Vec<f64>,
    mut value: f64,
    config: &AcquisitionConfig,
) -> (Vec<f64>, f64) {
    let mut step = config.initial_step;
    let mut used = 0;
    while used < config.evaluations_per_start && step >= config.min_step {
        let mut improved = false;
        'dims: for d in 0..x.len() {
            for sign in [1.0, -1.0] {
                if used >= config.evaluations_per_start {
                    break 'dims;
                }
                let moved = (x[d] + sign * step).clamp(0.0, 1.0);
                if moved == x[d] {
                    continue;
                }
                let old = x[d];
                x[d] = moved;
                let v = state.score(&x, innovations, config.estimator);
                used += 1;
                if v > value {
                    value = v;
                    improved = true;
                    continue 'dims;
                }
                x[d] = old;
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    (x, value)
}

/// Greedy sequential batch: each step maximizes NEHVI conditioned on the
/// baseline and the candidates already chosen.
pub fn generate_batch(
    models: &[GaussianProcessModel],
    formal_history: &[Observation],
    q: usize,
    reference: &ReferencePoint,
    config: &AcquisitionConfig,
    rng: &mut dyn RngCore,
) -> Result<CandidateBatch> {
    config.validate()?;
    if q == 0 {
        return Err(Error::Argument("batch size must be at least 1".into()));
    }
    let baseline: Vec<&Observation> = formal_history.iter().filter(|o| o.is_formal()).collect();
    if baseline.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            have: baseline.len(),
        });
    }
    let mut state = NehviState::new(models, reference, config.n_mc)?;
    let dim = state.dim();
    for o in &baseline {
        check_point(models, &o.point)?;
        let z = state.draw_innovations(rng);
        state.append(o.point.coords(), &z);
    }

    let mut chosen: Vec<Candidate> = Vec::with_capacity(q);
    // Local optima of the previous step compete with fresh raw samples for
    // the refinement starts of the next one.
    let mut carried: Vec<Vec<f64>> = Vec::new();
    for _ in 0..q {
        let innovations = state.draw_innovations(rng);
        let mut pick = None;
        for _ in 0..config.max_attempts {
            let raw: Vec<Vec<f64>> = (0..config.raw_samples)
                .map(|_| (0..dim).map(|_| rng.random::<f64>()).collect())
                .collect();
            let mut scored: Vec<(Vec<f64>, f64)> = std::mem::take(&mut carried)
                .into_iter()
                .chain(raw)
                .map(|x| {
                    let v = state.score(&x, &innovations, config.estimator);
                    (x, v)
                })
                .filter(|(_, v)| v.is_finite())
                .collect();
            scored.sort_by(|a, b| b.1.total_cmp(&a.1));
            let starts: Vec<(Vec<f64>, f64)> = scored.iter().take(config.restarts).cloned().collect();
            let mut refined: Vec<(Vec<f64>, f64)> = starts
                .into_iter()
                .map(|(x, v)| pattern_search(&mut state, &innovations, x, v, config))
                .filter(|(_, v)| v.is_finite())
                .collect();
            refined.sort_by(|a, b| b.1.total_cmp(&a.1));
            let distinct = |x: &[f64]| {
                chosen
                    .iter()
                    .all(|c| crate::domain::euclidean(c.point.coords(), x) > config.min_separation)
            };
            pick = refined.iter().chain(&scored).find(|(x, _)| distinct(x)).cloned();
            if let Some((best, _)) = &pick {
                carried = refined.into_iter().map(|(x, _)| x).filter(|x| x != best).collect();
                break;
            }
        }
        let Some((x, value)) = pick else {
            return Err(Error::CandidateGeneration(format!(
                "no finite, distinct candidate after {} attempts",
                config.max_attempts
            )));
        };
        let point = DesignPoint::clamped(x);
        let predictions = models.iter().map(|m| m.predict(&point)).collect::<Result<Vec<_>>>()?;
        state.append(point.coords(), &innovations);
        chosen.push(Candidate {
            point,
            acquisition_value: value.max(0.0),
            predictions,
        });
    }
    Ok(CandidateBatch {
        candidates: chosen,
        generation_iteration: baseline.len(),
    })
}
