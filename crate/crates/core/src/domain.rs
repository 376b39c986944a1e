//! Parameter and objective spaces, normalized points, dominance and Pareto fronts.
//!
//! The optimizer works exclusively in normalized coordinates: design
//! parameters live in `[0, 1]^n` and objectives in `[-1, 1]^m`, both under a
//! maximization convention. Display units (the ranges a designer sees on the
//! sliders and charts) are reached through a per-axis affine map.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One named axis with its designer-facing range.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub name: String,
    pub display_min: f64,
    pub display_max: f64,
    #[serde(default)]
    pub unit: String,
}

impl Axis {
    pub fn new(name: impl Into<String>, display_min: f64, display_max: f64, unit: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            display_min,
            display_max,
            unit: unit.into(),
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.display_min.is_finite() && self.display_max.is_finite()) || self.display_min >= self.display_max {
            return Err(Error::Config(format!(
                "axis '{}' needs display_min < display_max (got {} .. {})",
                self.name, self.display_min, self.display_max
            )));
        }
        Ok(())
    }

    pub fn span(&self) -> f64 {
        self.display_max - self.display_min
    }
}

/// Shared affine mapping between a normalized interval and display ranges.
pub trait DisplayScale {
    /// Normalized interval of every axis, e.g. `(0, 1)` or `(-1, 1)`.
    const NORMALIZED: (f64, f64);

    fn axes(&self) -> &[Axis];

    fn len(&self) -> usize {
        self.axes().len()
    }

    fn is_empty(&self) -> bool {
        self.axes().is_empty()
    }

    /// Display units per normalized unit for axis `i`.
    fn slope(&self, i: usize) -> f64 {
        let (lo, hi) = Self::NORMALIZED;
        self.axes()[i].span() / (hi - lo)
    }

    fn to_display(&self, normalized: &[f64]) -> Result<Vec<f64>> {
        check_len(self.len(), normalized.len())?;
        let (lo, hi) = Self::NORMALIZED;
        normalized
            .iter()
            .zip(self.axes())
            .enumerate()
            .map(|(i, (&v, axis))| {
                if !(lo..=hi).contains(&v) {
                    return Err(Error::Range {
                        index: i,
                        value: v,
                        min: lo,
                        max: hi,
                    });
                }
                Ok(axis.display_min + (v - lo) / (hi - lo) * axis.span())
            })
            .collect()
    }

    fn from_display(&self, display: &[f64]) -> Result<Vec<f64>> {
        check_len(self.len(), display.len())?;
        let (lo, hi) = Self::NORMALIZED;
        display
            .iter()
            .zip(self.axes())
            .enumerate()
            .map(|(i, (&v, axis))| {
                // Allow rounding slop from a previous to_display.
                let slop = 1e-9 * axis.span();
                if !(axis.display_min - slop..=axis.display_max + slop).contains(&v) {
                    return Err(Error::Range {
                        index: i,
                        value: v,
                        min: axis.display_min,
                        max: axis.display_max,
                    });
                }
                Ok((lo + (v - axis.display_min) / axis.span() * (hi - lo)).clamp(lo, hi))
            })
            .collect()
    }

    /// Affine map without range checks; used for predictive means that may
    /// fall outside the normalized interval.
    fn to_display_unchecked(&self, i: usize, normalized: f64) -> f64 {
        let (lo, _) = Self::NORMALIZED;
        self.axes()[i].display_min + (normalized - lo) * self.slope(i)
    }
}

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Dimension { expected, got });
    }
    Ok(())
}

fn validate_axes(axes: &[Axis], what: &str) -> Result<()> {
    if axes.is_empty() {
        return Err(Error::Config(format!("{what} space needs at least one axis")));
    }
    axes.iter().try_for_each(Axis::validate)
}

/// Search space; normalized domain is `[0, 1]^n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Axis>", into = "Vec<Axis>")]
pub struct ParameterSpace {
    dims: Vec<Axis>,
}

impl ParameterSpace {
    pub fn new(dims: Vec<Axis>) -> Result<Self> {
        validate_axes(&dims, "parameter")?;
        Ok(Self { dims })
    }

    pub fn dims(&self) -> &[Axis] {
        &self.dims
    }
}

impl TryFrom<Vec<Axis>> for ParameterSpace {
    type Error = Error;
    fn try_from(dims: Vec<Axis>) -> Result<Self> {
        Self::new(dims)
    }
}

impl From<ParameterSpace> for Vec<Axis> {
    fn from(space: ParameterSpace) -> Self {
        space.dims
    }
}

impl DisplayScale for ParameterSpace {
    const NORMALIZED: (f64, f64) = (0.0, 1.0);
    fn axes(&self) -> &[Axis] {
        &self.dims
    }
}

/// Objective space; normalized codomain is `[-1, 1]^m`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Axis>", into = "Vec<Axis>")]
pub struct ObjectiveSpace {
    objectives: Vec<Axis>,
}

impl ObjectiveSpace {
    pub fn new(objectives: Vec<Axis>) -> Result<Self> {
        validate_axes(&objectives, "objective")?;
        Ok(Self { objectives })
    }

    pub fn objectives(&self) -> &[Axis] {
        &self.objectives
    }
}

impl TryFrom<Vec<Axis>> for ObjectiveSpace {
    type Error = Error;
    fn try_from(objectives: Vec<Axis>) -> Result<Self> {
        Self::new(objectives)
    }
}

impl From<ObjectiveSpace> for Vec<Axis> {
    fn from(space: ObjectiveSpace) -> Self {
        space.objectives
    }
}

impl DisplayScale for ObjectiveSpace {
    const NORMALIZED: (f64, f64) = (-1.0, 1.0);
    fn axes(&self) -> &[Axis] {
        &self.objectives
    }
}

/// A point of the normalized search space `[0, 1]^n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct DesignPoint(Vec<f64>);

impl DesignPoint {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        for (index, &value) in coords.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::Range {
                    index,
                    value,
                    min: 0.0,
                    max: 1.0,
                });
            }
        }
        Ok(Self(coords))
    }

    /// Projects arbitrary coordinates onto the unit box.
    pub fn clamped(coords: Vec<f64>) -> Self {
        Self(coords.into_iter().map(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) }).collect())
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn distance(&self, other: &DesignPoint) -> f64 {
        euclidean(&self.0, &other.0)
    }
}

impl TryFrom<Vec<f64>> for DesignPoint {
    type Error = Error;
    fn try_from(coords: Vec<f64>) -> Result<Self> {
        Self::new(coords)
    }
}

impl From<DesignPoint> for Vec<f64> {
    fn from(p: DesignPoint) -> Self {
        p.0
    }
}

pub(crate) fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Objective values in normalized units, maximization sense.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ObjectiveVector(Vec<f64>);

impl ObjectiveVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    /// Clamps every component into `[-1, 1]`.
    pub fn clamped(values: Vec<f64>) -> Self {
        Self(values.into_iter().map(|v| v.clamp(-1.0, 1.0)).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl From<Vec<f64>> for ObjectiveVector {
    fn from(values: Vec<f64>) -> Self {
        Self(values)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fidelity {
    Formal,
    Informal,
}

impl fmt::Display for Fidelity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Fidelity::Formal => "formal",
            Fidelity::Informal => "informal",
        })
    }
}

/// One evaluated design.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub point: DesignPoint,
    pub objectives: ObjectiveVector,
    /// Noisy values before clamping, kept for auditing.
    pub raw_objectives: Vec<f64>,
    pub fidelity: Fidelity,
    /// Position of this observation in the session history.
    pub iteration: usize,
    /// Milliseconds since the Unix epoch (or since session start on a simulated clock).
    pub timestamp_ms: u64,
}

impl Observation {
    pub fn is_formal(&self) -> bool {
        self.fidelity == Fidelity::Formal
    }
}

/// `a` dominates `b` under maximization.
pub fn dominates(a: &ObjectiveVector, b: &ObjectiveVector) -> Result<bool> {
    check_len(a.len(), b.len())?;
    Ok(dominates_slice(a.values(), b.values()))
}

pub(crate) fn dominates_slice(a: &[f64], b: &[f64]) -> bool {
    let mut strict = false;
    for (x, y) in a.iter().zip(b) {
        if x < y || x.is_nan() || y.is_nan() {
            return false;
        }
        if x > y {
            strict = true;
        }
    }
    strict
}

/// Indices (ascending) of the non-dominated vectors. Duplicates of a front
/// member are all retained.
pub fn pareto_front(points: &[ObjectiveVector]) -> Vec<usize> {
    if points.first().is_some_and(|p| p.len() == 2) && points.iter().all(|p| p.len() == 2) {
        return pareto_front_2d(points);
    }
    (0..points.len())
        .filter(|&i| !points.iter().any(|q| dominates_slice(q.values(), points[i].values())))
        .collect()
}

fn pareto_front_2d(points: &[ObjectiveVector]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&i, &j| {
        let (a, b) = (points[i].values(), points[j].values());
        b[0].total_cmp(&a[0]).then(b[1].total_cmp(&a[1]))
    });
    let mut front = Vec::new();
    let mut best_above = f64::NEG_INFINITY;
    let mut k = 0;
    while k < order.len() {
        let head = points[order[k]].values();
        // The group of equal first coordinates is sorted by descending second coordinate.
        let group_max = head[1];
        let mut end = k;
        while end < order.len() && points[order[end]].values()[0].total_cmp(&head[0]) == Ordering::Equal {
            let v = points[order[end]].values();
            if v[1] == group_max && group_max > best_above && !v[0].is_nan() && !v[1].is_nan() {
                front.push(order[end]);
            }
            end += 1;
        }
        if group_max > best_above {
            best_above = group_max;
        }
        k = end;
    }
    front.sort_unstable();
    front
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ov(v: &[f64]) -> ObjectiveVector {
        ObjectiveVector::new(v.to_vec())
    }

    fn brute_front(points: &[ObjectiveVector]) -> Vec<usize> {
        (0..points.len())
            .filter(|&i| {
                !(0..points.len()).any(|j| {
                    let (a, b) = (points[j].values(), points[i].values());
                    a.iter().zip(b).all(|(x, y)| x >= y) && a.iter().zip(b).any(|(x, y)| x > y)
                })
            })
            .collect()
    }

    #[test]
    fn display_mapping_examples() {
        let objectives = ObjectiveSpace::new(vec![Axis::new("Daily revenue", 0.0, 20.0, "thousand USD")]).unwrap();
        assert_eq!(objectives.to_display(&[-1.0]).unwrap(), vec![0.0]);
        assert_eq!(objectives.to_display(&[1.0]).unwrap(), vec![20.0]);
        let rating = ObjectiveSpace::new(vec![Axis::new("User rating", 0.0, 5.0, "")]).unwrap();
        assert_eq!(rating.to_display(&[0.0]).unwrap(), vec![2.5]);
        let params = ParameterSpace::new(vec![Axis::new("Restaurant name text size", 10.0, 30.0, "")]).unwrap();
        assert_eq!(params.to_display(&[0.5]).unwrap(), vec![20.0]);
    }

    #[test]
    fn display_mapping_errors() {
        let params = ParameterSpace::new(vec![Axis::new("x", 0.0, 1.0, ""), Axis::new("y", 0.0, 2.0, "")]).unwrap();
        assert!(matches!(params.to_display(&[0.5]), Err(Error::Dimension { expected: 2, got: 1 })));
        assert!(matches!(params.to_display(&[0.5, 1.5]), Err(Error::Range { index: 1, .. })));
        assert!(matches!(params.from_display(&[0.5, 2.5]), Err(Error::Range { index: 1, .. })));
        assert!(ParameterSpace::new(vec![]).is_err());
        assert!(ParameterSpace::new(vec![Axis::new("bad", 1.0, 1.0, "")]).is_err());
    }

    #[test]
    fn dominance_examples() {
        assert!(dominates(&ov(&[0.5, 0.5]), &ov(&[0.3, 0.3])).unwrap());
        assert!(!dominates(&ov(&[0.5, 0.3]), &ov(&[0.3, 0.5])).unwrap());
        assert!(!dominates(&ov(&[0.5, 0.5]), &ov(&[0.5, 0.5])).unwrap());
        assert!(dominates(&ov(&[0.5]), &ov(&[0.5, 0.5])).is_err());
    }

    #[test]
    fn front_examples() {
        assert!(pareto_front(&[]).is_empty());
        let pts = [ov(&[1.0, 0.0]), ov(&[0.0, 1.0]), ov(&[0.5, 0.5]), ov(&[0.2, 0.2])];
        assert_eq!(pareto_front(&pts), brute_front(&pts));
        assert_eq!(pareto_front(&pts), vec![0, 1, 2]);
    }

    #[test]
    fn front_keeps_duplicates() {
        let pts = [ov(&[0.5, 0.5]), ov(&[0.5, 0.5]), ov(&[0.1, 0.1]), ov(&[0.5, 0.4])];
        assert_eq!(pareto_front(&pts), vec![0, 1]);
    }

    #[test]
    fn front_matches_brute_force_on_random_sets() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let pts: Vec<_> = (0..100)
                .map(|_| ov(&[rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]))
                .collect();
            assert_eq!(pareto_front(&pts), brute_front(&pts));
        }
        // Coarse values force many ties.
        for _ in 0..20 {
            let pts: Vec<_> = (0..100)
                .map(|_| ov(&[rng.random_range(0..4) as f64, rng.random_range(0..4) as f64]))
                .collect();
            assert_eq!(pareto_front(&pts), brute_front(&pts));
        }
    }

    proptest! {
        #[test]
        fn dominance_is_irreflexive_and_transitive(
            a in prop::collection::vec(-1.0f64..1.0, 3),
            b in prop::collection::vec(-1.0f64..1.0, 3),
            c in prop::collection::vec(-1.0f64..1.0, 3),
        ) {
            let (a, b, c) = (ov(&a), ov(&b), ov(&c));
            prop_assert!(!dominates(&a, &a).unwrap());
            if dominates(&a, &b).unwrap() && dominates(&b, &c).unwrap() {
                prop_assert!(dominates(&a, &c).unwrap());
            }
        }

        #[test]
        fn front_members_are_mutually_nondominated(
            raw in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 3), 0..60)
        ) {
            let pts: Vec<_> = raw.iter().map(|v| ov(v)).collect();
            let front = pareto_front(&pts);
            for &i in &front {
                for &j in &front {
                    prop_assert!(!dominates(&pts[i], &pts[j]).unwrap());
                }
            }
            for k in 0..pts.len() {
                if !front.contains(&k) {
                    prop_assert!(front.iter().any(|&i| dominates(&pts[i], &pts[k]).unwrap()));
                }
            }
        }

        #[test]
        fn display_round_trip(v in prop::collection::vec(0.0f64..=1.0, 4), lo in -50.0f64..50.0, w in 0.1f64..100.0) {
            let axes: Vec<_> = (0..4).map(|i| Axis::new(format!("p{i}"), lo, lo + w * (i + 1) as f64, "")).collect();
            let space = ParameterSpace::new(axes.clone()).unwrap();
            let back = space.from_display(&space.to_display(&v).unwrap()).unwrap();
            for (x, y) in v.iter().zip(&back) {
                prop_assert!((x - y).abs() < 1e-12);
            }
            let objectives = ObjectiveSpace::new(axes).unwrap();
            let o: Vec<f64> = v.iter().map(|x| 2.0 * x - 1.0).collect();
            let back = objectives.from_display(&objectives.to_display(&o).unwrap()).unwrap();
            for (x, y) in o.iter().zip(&back) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
