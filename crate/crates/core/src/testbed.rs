//! Synthetic design tasks with quadratic ground-truth objectives, and the
//! noisy formal/informal evaluation simulator standing in for user testing.

use std::path::Path;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{Axis, DesignPoint, Fidelity, ObjectiveSpace, ObjectiveVector, Observation, ParameterSpace};
use crate::error::{Error, Result};

/// `f(x) = c - sum_i b_i (x_i - a_i)^2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadraticObjective {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: f64,
}

impl QuadraticObjective {
    pub fn new(a: Vec<f64>, b: Vec<f64>, c: f64) -> Result<Self> {
        if a.len() != b.len() {
            return Err(Error::Dimension {
                expected: a.len(),
                got: b.len(),
            });
        }
        if let Some(i) = b.iter().position(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::Config(format!("scaling factor b[{i}] must be positive")));
        }
        if !c.is_finite() || a.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("quadratic coefficients must be finite".into()));
        }
        Ok(Self { a, b, c })
    }

    /// Unclamped value.
    pub fn value(&self, x: &[f64]) -> f64 {
        self.c
            - x.iter()
                .zip(&self.a)
                .zip(&self.b)
                .map(|((xi, ai), bi)| bi * (xi - ai).powi(2))
                .sum::<f64>()
    }

    /// Maximizer over the unit box; the objective is separable so clipping
    /// each coordinate is exact.
    pub fn box_maximizer(&self) -> Vec<f64> {
        self.a.iter().map(|a| a.clamp(0.0, 1.0)).collect()
    }
}

/// A design task: named parameters and objectives plus ground truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticApp {
    pub id: String,
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub parameter_space: ParameterSpace,
    pub objective_space: ObjectiveSpace,
    pub objectives: Vec<QuadraticObjective>,
}

impl SyntheticApp {
    pub fn validate(&self) -> Result<()> {
        let n = self.parameter_space.dims().len();
        if self.objectives.len() != self.objective_space.objectives().len() {
            return Err(Error::Config(format!(
                "app '{}' declares {} objective axes but {} objective functions",
                self.id,
                self.objective_space.objectives().len(),
                self.objectives.len()
            )));
        }
        for (j, f) in self.objectives.iter().enumerate() {
            QuadraticObjective::new(f.a.clone(), f.b.clone(), f.c)?;
            if f.a.len() != n {
                return Err(Error::Config(format!(
                    "app '{}' objective {j} has {} coefficients for {n} parameters",
                    self.id,
                    f.a.len()
                )));
            }
        }
        Ok(())
    }

    pub fn n_params(&self) -> usize {
        self.parameter_space.dims().len()
    }

    pub fn n_objectives(&self) -> usize {
        self.objectives.len()
    }

    /// Unclamped objective values.
    pub fn evaluate_raw(&self, x: &DesignPoint) -> Result<Vec<f64>> {
        if x.dim() != self.n_params() {
            return Err(Error::Dimension {
                expected: self.n_params(),
                got: x.dim(),
            });
        }
        Ok(self.objectives.iter().map(|f| f.value(x.coords())).collect())
    }

    /// Ground-truth objectives, clamped to `[-1, 1]`.
    pub fn evaluate_true(&self, x: &DesignPoint) -> Result<ObjectiveVector> {
        Ok(ObjectiveVector::clamped(self.evaluate_raw(x)?))
    }

    /// Loads a task from the declarative TOML format described in the README.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: AppFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        file.try_into()
    }

    pub fn from_toml_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }
}

#[derive(Deserialize)]
struct AppFile {
    id: String,
    name: Option<String>,
    #[serde(default)]
    description: String,
    parameters: Vec<ParameterRecord>,
    objectives: Vec<ObjectiveRecord>,
}

#[derive(Deserialize)]
struct ParameterRecord {
    name: String,
    min: f64,
    max: f64,
    #[serde(default)]
    unit: String,
}

#[derive(Deserialize)]
struct ObjectiveRecord {
    name: String,
    min: f64,
    max: f64,
    #[serde(default)]
    unit: String,
    a: Vec<f64>,
    b: Vec<f64>,
    c: f64,
}

impl TryFrom<AppFile> for SyntheticApp {
    type Error = Error;

    fn try_from(file: AppFile) -> Result<Self> {
        let parameter_space = ParameterSpace::new(
            file.parameters
                .iter()
                .map(|p| Axis::new(&p.name, p.min, p.max, &p.unit))
                .collect(),
        )?;
        let objective_space = ObjectiveSpace::new(
            file.objectives
                .iter()
                .map(|o| Axis::new(&o.name, o.min, o.max, &o.unit))
                .collect(),
        )?;
        let objectives = file
            .objectives
            .into_iter()
            .map(|o| QuadraticObjective::new(o.a, o.b, o.c))
            .collect::<Result<Vec<_>>>()?;
        let app = SyntheticApp {
            name: file.name.unwrap_or_else(|| file.id.clone()),
            id: file.id,
            description: file.description,
            parameter_space,
            objective_space,
            objectives,
        };
        app.validate()?;
        Ok(app)
    }
}

fn axes(spec: &[(&str, f64, f64, &str)]) -> Vec<Axis> {
    spec.iter().map(|&(n, lo, hi, u)| Axis::new(n, lo, hi, u)).collect()
}

fn build(
    id: &str,
    name: &str,
    description: &str,
    params: &[(&str, f64, f64, &str)],
    objs: &[(&str, f64, f64, &str)],
    quadratics: [(&[f64], &[f64], f64); 2],
) -> SyntheticApp {
    SyntheticApp {
        id: id.into(),
        name: name.into(),
        description: description.into(),
        parameter_space: ParameterSpace::new(axes(params)).expect("builtin parameter ranges"),
        objective_space: ObjectiveSpace::new(axes(objs)).expect("builtin objective ranges"),
        objectives: quadratics
            .iter()
            .map(|(a, b, c)| QuadraticObjective::new(a.to_vec(), b.to_vec(), *c).expect("builtin coefficients"))
            .collect(),
    }
}

pub fn app1() -> SyntheticApp {
    build(
        "app1",
        "Content Feed",
        "A social content feed. Tune how ads, notifications and content curation behave \
         to balance the revenue the feed earns against how users rate it.",
        &[
            ("Density of ads", 0.0, 1.0, ""),
            ("Notification frequency", 0.0, 2.0, "per hour"),
            ("Personalization rate of content", 0.0, 1.0, ""),
            ("Moderation rate of content", 0.0, 1.0, ""),
            ("Refresh time of content", 0.0, 20.0, "minutes"),
        ],
        &[("Daily revenue", 0.0, 20.0, "thousand USD"), ("User rating", 0.0, 5.0, "")],
        [
            (&[0.9, 0.3, 0.8, 0.25, 0.25], &[0.9, 0.4, 1.3, 0.7, 0.4], 0.7),
            (&[0.3, 0.35, 1.1, 0.75, 0.3], &[1.0, 0.6, 1.2, 0.5, 0.4], 0.8),
        ],
    )
}

pub fn app2() -> SyntheticApp {
    build(
        "app2",
        "Question & Answer Forum",
        "A community question-and-answer site. Tune how questions are categorized, \
         previewed and routed to balance how quickly questions get answers against \
         how many are answered.",
        &[
            ("Question categories", 5.0, 50.0, ""),
            ("Refresh time of content", 0.0, 1000.0, ""),
            ("Length of question preview", 0.0, 500.0, "characters"),
            ("Max number of question tags", 1.0, 10.0, ""),
            ("Threshold activity rating for user to answer questions", 0.0, 5.0, ""),
        ],
        &[
            ("Answering rate of questions", 0.0, 2.0, "per minute"),
            ("Questions answered", 0.0, 100.0, ""),
        ],
        [
            (&[-0.1, 0.25, 0.7, 0.7, 0.65], &[1.2, 0.5, 0.4, 1.0, 0.6], 0.8),
            (&[0.2, 0.75, 0.75, 0.1, 0.7], &[1.3, 0.7, 0.4, 0.9, 0.4], 0.7),
        ],
    )
}

pub fn app3() -> SyntheticApp {
    build(
        "app3",
        "Restaurant Map",
        "A map that shows nearby restaurants around the user's location. Tune the \
         location icon, hover behaviour and text sizes to balance how fast users find \
         restaurants against how accurately they find all of them.",
        &[
            ("Location icon transparency", 0.5, 1.0, ""),
            ("Cursor distance for restaurant to show", 5.0, 50.0, ""),
            ("Location icon size", 1.0, 10.0, ""),
            ("Description box size", 10.0, 50.0, ""),
            ("Restaurant name text size", 10.0, 30.0, ""),
        ],
        &[
            ("Average speed to find restaurants", 0.0, 2.0, "per minute"),
            ("Accuracy in finding all restaurants", 0.0, 100.0, ""),
        ],
        [
            (&[1.1, 0.75, 0.35, 0.3, 0.3], &[1.2, 0.5, 0.6, 1.0, 0.4], 0.7),
            (&[0.8, 0.25, 0.3, 0.9, 0.25], &[1.3, 0.7, 0.4, 0.9, 0.4], 0.8),
        ],
    )
}

pub fn tutorial() -> SyntheticApp {
    build(
        "tutorial",
        "Touch Targets",
        "A touch screen target-hitting game. Tune how much force and contact area \
         register a touch to balance hitting speed against accuracy.",
        &[
            ("Force to register contact on screen", 10.0, 100.0, "N"),
            ("Area to register contact on screen", 0.5, 3.0, "cm^2"),
        ],
        &[
            ("Average target hit speed", 0.0, 3.0, "per second"),
            ("Accuracy of hitting targets", 0.0, 100.0, "%"),
        ],
        [(&[0.3, 0.35], &[1.0, 0.8], 0.7), (&[0.7, 0.65], &[1.2, 0.9], 0.8)],
    )
}

pub fn builtin_apps() -> Vec<SyntheticApp> {
    vec![app1(), app2(), app3(), tutorial()]
}

pub fn builtin_app(id: &str) -> Option<SyntheticApp> {
    builtin_apps().into_iter().find(|a| a.id == id)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulatorConfig {
    pub formal_noise_halfwidth: f64,
    pub informal_noise_halfwidth: f64,
    pub formal_delay_ms: u64,
    pub informal_delay_ms: u64,
    pub rng_seed: u64,
}

impl Default for SimulatorConfig {
    fn default() -> Self {
        Self {
            formal_noise_halfwidth: 0.05,
            informal_noise_halfwidth: 0.25,
            formal_delay_ms: 20_000,
            informal_delay_ms: 3_000,
            rng_seed: 0,
        }
    }
}

impl SimulatorConfig {
    /// Zero delays, default noise levels.
    pub fn test_profile(rng_seed: u64) -> Self {
        Self {
            formal_delay_ms: 0,
            informal_delay_ms: 0,
            rng_seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.formal_noise_halfwidth >= 0.0 && self.informal_noise_halfwidth >= 0.0) {
            return Err(Error::Config("noise halfwidths must be non-negative".into()));
        }
        Ok(())
    }

    pub fn halfwidth(&self, fidelity: Fidelity) -> f64 {
        match fidelity {
            Fidelity::Formal => self.formal_noise_halfwidth,
            Fidelity::Informal => self.informal_noise_halfwidth,
        }
    }

    pub fn delay(&self, fidelity: Fidelity) -> Duration {
        Duration::from_millis(match fidelity {
            Fidelity::Formal => self.formal_delay_ms,
            Fidelity::Informal => self.informal_delay_ms,
        })
    }
}

/// Noisy outcome of one simulated test, before it is stamped into an observation.
#[derive(Clone, Debug, PartialEq)]
pub struct NoisyOutcome {
    pub objectives: ObjectiveVector,
    pub raw: Vec<f64>,
    pub delay: Duration,
}

/// Simulated user testing. Holds one ChaCha stream; callers must serialize access.
#[derive(Clone, Debug)]
pub struct EvaluationSimulator {
    config: SimulatorConfig,
    rng: ChaCha8Rng,
}

impl EvaluationSimulator {
    pub fn new(config: SimulatorConfig) -> Result<Self> {
        config.validate()?;
        let rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
        Ok(Self { config, rng })
    }

    pub fn config(&self) -> &SimulatorConfig {
        &self.config
    }

    /// Position in the noise stream; restoring it resumes a logged session.
    pub fn stream_position(&self) -> u128 {
        self.rng.get_word_pos()
    }

    pub fn set_stream_position(&mut self, pos: u128) {
        self.rng.set_word_pos(pos);
    }

    /// Draws the noisy result without waiting.
    pub fn draw(&mut self, app: &SyntheticApp, x: &DesignPoint, fidelity: Fidelity) -> Result<NoisyOutcome> {
        let truth = app.evaluate_true(x)?;
        let h = self.config.halfwidth(fidelity);
        let raw: Vec<f64> = truth
            .values()
            .iter()
            .map(|v| {
                let u: f64 = self.rng.random();
                v + (2.0 * u - 1.0) * h
            })
            .collect();
        Ok(NoisyOutcome {
            objectives: ObjectiveVector::clamped(raw.clone()),
            raw,
            delay: self.config.delay(fidelity),
        })
    }

    /// Draws a result and blocks for the fidelity's configured delay.
    pub fn simulate_evaluation(
        &mut self,
        app: &SyntheticApp,
        x: &DesignPoint,
        fidelity: Fidelity,
        iteration: usize,
        timestamp_ms: u64,
    ) -> Result<Observation> {
        let outcome = self.draw(app, x, fidelity)?;
        if !outcome.delay.is_zero() {
            std::thread::sleep(outcome.delay);
        }
        Ok(Observation {
            point: x.clone(),
            objectives: outcome.objectives,
            raw_objectives: outcome.raw,
            fidelity,
            iteration,
            timestamp_ms,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(v: &[f64]) -> DesignPoint {
        DesignPoint::new(v.to_vec()).unwrap()
    }

    #[test]
    fn optimum_values() {
        let f = app1().evaluate_true(&pt(&[0.9, 0.3, 0.8, 0.25, 0.25])).unwrap();
        assert!((f.values()[0] - 0.7).abs() < 1e-12);
        let f = tutorial().evaluate_true(&pt(&[0.3, 0.35])).unwrap();
        assert!((f.values()[0] - 0.7).abs() < 1e-12);
    }

    #[test]
    fn app2_at_origin_matches_hand_evaluation() {
        // 1.2*0.01 + 0.5*0.0625 + 0.4*0.49 + 1.0*0.49 + 0.6*0.4225 = 0.98275
        let f = app2().evaluate_true(&pt(&[0.0; 5])).unwrap();
        assert!((f.values()[0] - (0.8 - 0.98275)).abs() < 1e-12);
    }

    #[test]
    fn builtin_tables() {
        let apps = builtin_apps();
        assert_eq!(apps.len(), 4);
        assert_eq!(apps[0].objectives[0].c, 0.7);
        assert_eq!(apps[2].objectives[0].a, vec![1.1, 0.75, 0.35, 0.3, 0.3]);
        assert_eq!(apps[3].parameter_space.dims().len(), 2);
        for app in &apps[..3] {
            assert_eq!((app.n_params(), app.n_objectives()), (5, 2));
            app.validate().unwrap();
        }
        assert_eq!((apps[3].n_params(), apps[3].n_objectives()), (2, 2));
        assert!(builtin_app("nope").is_none());
    }

    #[test]
    fn dimension_mismatch() {
        assert!(matches!(app1().evaluate_true(&pt(&[0.5, 0.5])), Err(Error::Dimension { .. })));
    }

    #[test]
    fn clamping_in_far_corners() {
        // App 1 objective 2 dips well below -1 at the origin.
        let app = app1();
        let raw = app.evaluate_raw(&pt(&[0.0; 5])).unwrap();
        let clamped = app.evaluate_true(&pt(&[0.0; 5])).unwrap();
        assert!(raw[1] < -1.0);
        assert_eq!(clamped.values()[1], -1.0);
    }

    #[test]
    fn concave_before_clamping() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for app in builtin_apps() {
            for _ in 0..200 {
                let x: Vec<f64> = (0..app.n_params()).map(|_| rng.random()).collect();
                let y: Vec<f64> = (0..app.n_params()).map(|_| rng.random()).collect();
                let t: f64 = rng.random();
                let z: Vec<f64> = x.iter().zip(&y).map(|(a, b)| t * a + (1.0 - t) * b).collect();
                for f in &app.objectives {
                    assert!(f.value(&z) >= t * f.value(&x) + (1.0 - t) * f.value(&y) - 1e-12);
                }
            }
        }
    }

    #[test]
    fn grid_maximum_matches_clipped_optimum() {
        for app in builtin_apps() {
            let n = app.n_params();
            let steps = if n == 5 { 21 } else { 101 };
            for f in &app.objectives {
                let mut best = f64::NEG_INFINITY;
                let mut idx = vec![0usize; n];
                loop {
                    let x: Vec<f64> = idx.iter().map(|&k| k as f64 / (steps - 1) as f64).collect();
                    best = best.max(f.value(&x));
                    let mut d = 0;
                    while d < n {
                        idx[d] += 1;
                        if idx[d] < steps {
                            break;
                        }
                        idx[d] = 0;
                        d += 1;
                    }
                    if d == n {
                        break;
                    }
                }
                let expected = f.value(&f.box_maximizer());
                if f.a.iter().all(|a| (0.0..=1.0).contains(a)) {
                    assert!((expected - f.c).abs() < 1e-12);
                }
                // Tabulated optima sit on multiples of 0.05, so the grid contains them.
                assert!((best - expected).abs() < 1e-12, "{} {} {}", app.id, expected, best);
            }
        }
    }

    #[test]
    fn zero_noise_reproduces_truth() {
        let mut sim = EvaluationSimulator::new(SimulatorConfig {
            formal_noise_halfwidth: 0.0,
            informal_noise_halfwidth: 0.0,
            ..SimulatorConfig::test_profile(1)
        })
        .unwrap();
        let app = app3();
        let x = pt(&[0.2, 0.4, 0.6, 0.8, 1.0]);
        for fidelity in [Fidelity::Formal, Fidelity::Informal] {
            let out = sim.draw(&app, &x, fidelity).unwrap();
            assert_eq!(out.objectives, app.evaluate_true(&x).unwrap());
        }
    }

    #[test]
    fn formal_noise_bounded_and_seeded() {
        let app = app1();
        let x = pt(&[0.5; 5]);
        let truth = app.evaluate_raw(&x).unwrap();
        let mut a = EvaluationSimulator::new(SimulatorConfig::test_profile(42)).unwrap();
        let mut b = EvaluationSimulator::new(SimulatorConfig::test_profile(42)).unwrap();
        for _ in 0..1000 {
            let oa = a.draw(&app, &x, Fidelity::Formal).unwrap();
            let ob = b.draw(&app, &x, Fidelity::Formal).unwrap();
            assert_eq!(oa, ob);
            for (r, t) in oa.raw.iter().zip(&truth) {
                assert!((r - t).abs() <= 0.05);
            }
        }
    }

    #[test]
    fn stream_position_resumes() {
        let app = app1();
        let x = pt(&[0.5; 5]);
        let mut a = EvaluationSimulator::new(SimulatorConfig::test_profile(5)).unwrap();
        for _ in 0..7 {
            a.draw(&app, &x, Fidelity::Informal).unwrap();
        }
        let mut b = EvaluationSimulator::new(SimulatorConfig::test_profile(5)).unwrap();
        b.set_stream_position(a.stream_position());
        assert_eq!(
            a.draw(&app, &x, Fidelity::Formal).unwrap(),
            b.draw(&app, &x, Fidelity::Formal).unwrap()
        );
    }

    #[test]
    fn noise_is_uniform_ks() {
        // Tutorial optimum for objective 1 is 0.7, well inside the clamp range.
        let app = tutorial();
        let x = pt(&[0.3, 0.35]);
        let h = 0.25;
        let mut sim = EvaluationSimulator::new(SimulatorConfig::test_profile(9)).unwrap();
        let mut noise: Vec<f64> = (0..100_000)
            .map(|_| sim.draw(&app, &x, Fidelity::Informal).unwrap().raw[0] - 0.7)
            .collect();
        noise.sort_by(f64::total_cmp);
        let n = noise.len() as f64;
        let ks = noise
            .iter()
            .enumerate()
            .map(|(i, &e)| {
                let cdf = ((e + h) / (2.0 * h)).clamp(0.0, 1.0);
                (cdf - i as f64 / n).abs().max((cdf - (i + 1) as f64 / n).abs())
            })
            .fold(0.0, f64::max);
        assert!(ks < 0.01, "KS statistic {ks}");
    }

    #[test]
    fn custom_app_from_toml() {
        let text = r#"
            id = "slider-demo"
            description = "two knobs"

            [[parameters]]
            name = "knob a"
            min = 0
            max = 10

            [[parameters]]
            name = "knob b"
            min = -1
            max = 1
            unit = "V"

            [[objectives]]
            name = "speed"
            min = 0
            max = 5
            a = [0.2, 0.8]
            b = [1.0, 1.0]
            c = 0.5

            [[objectives]]
            name = "comfort"
            min = 0
            max = 100
            a = [0.8, 0.2]
            b = [1.0, 2.0]
            c = 0.6
        "#;
        let app = SyntheticApp::from_toml_str(text).unwrap();
        assert_eq!(app.name, "slider-demo");
        assert_eq!(app.n_params(), 2);
        let v = app.evaluate_true(&pt(&[0.2, 0.8])).unwrap();
        assert!((v.values()[0] - 0.5).abs() < 1e-12);

        let bad = text.replace("b = [1.0, 2.0]", "b = [1.0, -2.0]");
        assert!(SyntheticApp::from_toml_str(&bad).is_err());
        let short = text.replace("a = [0.8, 0.2]", "a = [0.8]");
        assert!(SyntheticApp::from_toml_str(&short).is_err());
    }
}
