//! Exploration and quality metrics over formal evaluation histories.

use serde::{Deserialize, Serialize};

use crate::acquisition::{hypervolume_2d, ReferencePoint};
use crate::domain::{euclidean, pareto_front, DesignPoint, ObjectiveVector, Observation};
use crate::error::{Error, Result};
use crate::testbed::SyntheticApp;

pub fn relative_hypervolume(front: &[ObjectiveVector], reference: &ReferencePoint, reference_hv: f64) -> Result<f64> {
    if !(reference_hv > 0.0 && reference_hv.is_finite()) {
        return Err(Error::Argument(format!("reference hypervolume must be positive, got {reference_hv}")));
    }
    Ok(hypervolume_2d(front, reference)? / reference_hv)
}

/// Occupied cells of the uniform `parts^n` grid over `[0, 1]^n`. A coordinate
/// of exactly 1 falls in the last cell.
pub fn design_space_count(points: &[DesignPoint], parts: usize) -> Result<usize> {
    if parts < 1 {
        return Err(Error::Argument("parts must be at least 1".into()));
    }
    let mut cells: Vec<Vec<usize>> = points
        .iter()
        .map(|p| {
            p.coords()
                .iter()
                .map(|&v| ((v * parts as f64).floor() as usize).min(parts - 1))
                .collect()
        })
        .collect();
    cells.sort_unstable();
    cells.dedup();
    Ok(cells.len())
}

/// Total Euclidean path length through the points in order, and that total
/// divided by the number of points.
pub fn travel_distances(points: &[DesignPoint]) -> Result<(f64, f64)> {
    if points.is_empty() {
        return Err(Error::Argument("travel distance needs at least one point".into()));
    }
    let total: f64 = points.windows(2).map(|w| euclidean(w[0].coords(), w[1].coords())).sum();
    Ok((total, total / points.len() as f64))
}

fn centroid(points: &[DesignPoint]) -> Result<Vec<f64>> {
    let first = points
        .first()
        .ok_or_else(|| Error::Argument("centroid of an empty group".into()))?;
    let mut c = vec![0.0; first.dim()];
    for p in points {
        if p.dim() != c.len() {
            return Err(Error::Dimension {
                expected: c.len(),
                got: p.dim(),
            });
        }
        for (ci, v) in c.iter_mut().zip(p.coords()) {
            *ci += v;
        }
    }
    c.iter_mut().for_each(|v| *v /= points.len() as f64);
    Ok(c)
}

/// Distance between the mean parameter vectors of two groups.
pub fn centroid_separation(a: &[DesignPoint], b: &[DesignPoint]) -> Result<f64> {
    let (ca, cb) = (centroid(a)?, centroid(b)?);
    if ca.len() != cb.len() {
        return Err(Error::Dimension {
            expected: ca.len(),
            got: cb.len(),
        });
    }
    Ok(euclidean(&ca, &cb))
}

pub fn pareto_count(front: &[ObjectiveVector]) -> usize {
    front.len()
}

pub fn formal_count(history: &[Observation]) -> usize {
    history.iter().filter(|o| o.is_formal()).count()
}

/// Non-dominated members of a set of objective vectors.
pub fn front_of(points: &[ObjectiveVector]) -> Vec<ObjectiveVector> {
    pareto_front(points).into_iter().map(|i| points[i].clone()).collect()
}

/// Hypervolume of the true objectives over a full grid of roughly `total`
/// points in `[0, 1]^n` (per-axis count rounded from `total^(1/n)`).
pub fn grid_oracle_hypervolume(app: &SyntheticApp, reference: &ReferencePoint, total: usize) -> Result<f64> {
    let n = app.n_params();
    let per = ((total as f64).powf(1.0 / n as f64).round() as usize).max(2);
    let nodes: Vec<f64> = (0..per).map(|i| i as f64 / (per - 1) as f64).collect();
    let mut idx = vec![0usize; n];
    let mut values = Vec::with_capacity(per.pow(n as u32));
    loop {
        let x = DesignPoint::clamped(idx.iter().map(|&i| nodes[i]).collect());
        values.push(app.evaluate_true(&x)?);
        let mut d = 0;
        while d < n {
            idx[d] += 1;
            if idx[d] < per {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
        if d == n {
            break;
        }
    }
    hypervolume_2d(&front_of(&values), reference)
}

/// True Pareto front of a two-objective app traced by weighted-sum
/// maximizers. Both objectives are separable concave quadratics, so each
/// weighted sum is maximized coordinate-wise and every front point is reached.
pub fn weighted_sum_front(app: &SyntheticApp, n_weights: usize) -> Result<Vec<ObjectiveVector>> {
    if app.n_objectives() != 2 {
        return Err(Error::UnsupportedDimension(app.n_objectives()));
    }
    if n_weights < 2 {
        return Err(Error::Argument("need at least two weights".into()));
    }
    let (f, g) = (&app.objectives[0], &app.objectives[1]);
    let mut values = Vec::with_capacity(n_weights);
    for k in 0..n_weights {
        let w = k as f64 / (n_weights - 1) as f64;
        let x: Vec<f64> = (0..app.n_params())
            .map(|i| {
                let (bf, bg) = (w * f.b[i], (1.0 - w) * g.b[i]);
                if bf + bg > 0.0 {
                    ((bf * f.a[i] + bg * g.a[i]) / (bf + bg)).clamp(0.0, 1.0)
                } else {
                    0.5
                }
            })
            .collect();
        values.push(app.evaluate_true(&DesignPoint::clamped(x))?);
    }
    Ok(front_of(&values))
}

/// One row of the metrics table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub hypervolume: f64,
    pub relative_hypervolume: f64,
    pub design_space_count: usize,
    pub travel_total: f64,
    pub travel_mean: f64,
    pub pareto_count: usize,
    pub formal_count: usize,
}

impl MetricsRow {
    pub const HEADER: &'static str =
        "relative_hypervolume,hypervolume,design_space_count,travel_total,travel_mean,pareto_count,formal_count";

    /// Metrics over the formal observations of a history.
    pub fn compute(history: &[Observation], reference: &ReferencePoint, reference_hv: f64) -> Result<Self> {
        let formal: Vec<&Observation> = history.iter().filter(|o| o.is_formal()).collect();
        let objectives: Vec<ObjectiveVector> = formal.iter().map(|o| o.objectives.clone()).collect();
        let points: Vec<DesignPoint> = formal.iter().map(|o| o.point.clone()).collect();
        let front = front_of(&objectives);
        let hypervolume = hypervolume_2d(&front, reference)?;
        let (travel_total, travel_mean) = if points.is_empty() {
            (0.0, 0.0)
        } else {
            travel_distances(&points)?
        };
        Ok(Self {
            hypervolume,
            relative_hypervolume: relative_hypervolume(&front, reference, reference_hv)?,
            design_space_count: design_space_count(&points, 3)?,
            travel_total,
            travel_mean,
            pareto_count: pareto_count(&front),
            formal_count: formal.len(),
        })
    }

    pub fn to_csv(&self) -> String {
        format!(
            "{:.6},{:.6},{},{:.6},{:.6},{},{}",
            self.relative_hypervolume,
            self.hypervolume,
            self.design_space_count,
            self.travel_total,
            self.travel_mean,
            self.pareto_count,
            self.formal_count
        )
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::domain::Fidelity;
    use crate::testbed::{app1, app2, app3, tutorial};

    fn p(v: &[f64]) -> DesignPoint {
        DesignPoint::new(v.to_vec()).unwrap()
    }

    fn ov(v: &[(f64, f64)]) -> Vec<ObjectiveVector> {
        v.iter().map(|&(a, b)| ObjectiveVector::new(vec![a, b])).collect()
    }

    #[test]
    fn relative_hypervolume_examples() {
        let r = ReferencePoint::new(vec![0.0, 0.0]).unwrap();
        let front = ov(&[(0.5, 0.5)]);
        assert_eq!(relative_hypervolume(&front, &r, 0.25).unwrap(), 1.0);
        assert_eq!(relative_hypervolume(&[], &r, 0.25).unwrap(), 0.0);
        assert!(relative_hypervolume(&front, &r, 0.0).is_err());
        assert!(relative_hypervolume(&front, &r, -1.0).is_err());
    }

    #[test]
    fn design_space_examples() {
        assert_eq!(design_space_count(&[p(&[0.2; 5])], 3).unwrap(), 1);
        assert_eq!(design_space_count(&[p(&[0.1; 5]), p(&[0.3; 5])], 3).unwrap(), 1);
        assert_eq!(design_space_count(&[], 3).unwrap(), 0);
        assert!(design_space_count(&[p(&[0.1; 5])], 0).is_err());
        // Corners of [0,1]^5: each coordinate is 0 (cell 0) or 1 (cell 2).
        let corners: Vec<DesignPoint> = (0..32u32)
            .map(|m| DesignPoint::new((0..5).map(|i| f64::from((m >> i) & 1)).collect()).unwrap())
            .collect();
        assert_eq!(design_space_count(&corners, 3).unwrap(), 32);
        // The centre of every cell: all 243 occupied.
        let centres: Vec<DesignPoint> = (0..243usize)
            .map(|m| {
                let mut k = m;
                DesignPoint::new(
                    (0..5)
                        .map(|_| {
                            let c = k % 3;
                            k /= 3;
                            (c as f64 + 0.5) / 3.0
                        })
                        .collect(),
                )
                .unwrap()
            })
            .collect();
        assert_eq!(design_space_count(&centres, 3).unwrap(), 243);
        assert_eq!(design_space_count(&[p(&[1.0; 5]), p(&[0.9; 5])], 3).unwrap(), 1);
    }

    #[test]
    fn travel_examples() {
        assert_eq!(travel_distances(&[p(&[0.3; 5]), p(&[0.3; 5])]).unwrap().0, 0.0);
        let (t, m) = travel_distances(&[p(&[0.0; 5]), p(&[1.0; 5])]).unwrap();
        assert!((t - 5f64.sqrt()).abs() < 1e-12);
        assert!((m - 5f64.sqrt() / 2.0).abs() < 1e-12);
        let (t3, _) = travel_distances(&[p(&[0.0; 5]), p(&[0.25; 5]), p(&[0.5; 5])]).unwrap();
        let (t1, _) = travel_distances(&[p(&[0.0; 5]), p(&[0.25; 5])]).unwrap();
        assert!((t3 - 2.0 * t1).abs() < 1e-12);
        assert_eq!(travel_distances(&[p(&[0.4; 5])]).unwrap(), (0.0, 0.0));
        assert!(travel_distances(&[]).is_err());
    }

    #[test]
    fn centroid_examples() {
        let g = [p(&[0.1, 0.2, 0.3, 0.4, 0.5]), p(&[0.5; 5])];
        assert_eq!(centroid_separation(&g, &g).unwrap(), 0.0);
        let s = centroid_separation(&[p(&[0.0; 5])], &[p(&[1.0; 5])]).unwrap();
        assert!((s - 5f64.sqrt()).abs() < 1e-12);
        assert!(centroid_separation(&[], &g).is_err());
        assert!(centroid_separation(&g, &[]).is_err());
    }

    #[test]
    fn counts() {
        assert_eq!(pareto_count(&[]), 0);
        let pts = ov(&[(0.1, 0.9), (0.5, 0.5), (0.9, 0.1)]);
        assert_eq!(pareto_count(&front_of(&pts)), 3);
        let obs = |f| Observation {
            point: p(&[0.5; 5]),
            objectives: ObjectiveVector::new(vec![0.0, 0.0]),
            raw_objectives: vec![0.0, 0.0],
            fidelity: f,
            iteration: 0,
            timestamp_ms: 0,
        };
        let mut h: Vec<Observation> = (0..4).map(|_| obs(Fidelity::Formal)).collect();
        h.push(obs(Fidelity::Informal));
        h.push(obs(Fidelity::Informal));
        assert_eq!(formal_count(&h), 4);
        assert_eq!(formal_count(&[]), 0);
    }

    #[test]
    fn oracle_fronts_agree() {
        let r = ReferencePoint::normalized_default(2);
        for app in [app1(), app2(), app3()] {
            let exact = hypervolume_2d(&weighted_sum_front(&app, 20001).unwrap(), &r).unwrap();
            let grid = grid_oracle_hypervolume(&app, &r, 1_000_000).unwrap();
            assert!(grid <= exact + 1e-9, "{}: grid {grid} exact {exact}", app.id);
            assert!(grid > 0.97 * exact, "{}: grid {grid} exact {exact}", app.id);
            // No random design beats the traced front.
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let front = weighted_sum_front(&app, 20001).unwrap();
            for _ in 0..2000 {
                let x = DesignPoint::clamped((0..5).map(|_| rng.random()).collect());
                let y = app.evaluate_true(&x).unwrap();
                let mut all = front.clone();
                all.push(y);
                assert!(hypervolume_2d(&front_of(&all), &r).unwrap() <= exact + 1e-6);
            }
        }
    }

    #[test]
    fn grid_oracle_on_two_parameters() {
        let mut app = tutorial();
        assert_eq!(app.n_params(), 2);
        let r = ReferencePoint::normalized_default(2);
        let grid = grid_oracle_hypervolume(&app, &r, 1_000_000).unwrap();
        let exact = hypervolume_2d(&weighted_sum_front(&app, 20001).unwrap(), &r).unwrap();
        assert!((grid - exact).abs() < 1e-3 * exact);
        app.objectives.truncate(1);
        assert!(weighted_sum_front(&app, 10).is_err());
    }

    fn random_walk(seed: u64, n: usize) -> Vec<DesignPoint> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| DesignPoint::clamped((0..5).map(|_| rng.random()).collect()))
            .collect()
    }

    proptest! {
        #[test]
        fn design_space_bounded(seed in 0u64..1000, n in 0usize..60, parts in 1usize..5) {
            let pts = random_walk(seed, n);
            let c = design_space_count(&pts, parts).unwrap();
            prop_assert!(c <= n.min(parts.pow(5)));
        }

        #[test]
        fn travel_matches_hop_sum(seed in 0u64..1000, n in 1usize..30) {
            let pts = random_walk(seed, n);
            let (total, mean) = travel_distances(&pts).unwrap();
            let mut oracle = 0.0;
            for i in 1..n {
                let d: f64 = pts[i].coords().iter().zip(pts[i - 1].coords()).map(|(a, b)| (a - b) * (a - b)).sum();
                oracle += d.sqrt();
            }
            prop_assert!((total - oracle).abs() < 1e-12);
            prop_assert!((mean * n as f64 - total).abs() < 1e-12);
            prop_assert!(total + 1e-12 >= mean * (n as f64 - 1.0));
        }

        #[test]
        fn relative_hv_within_unit_interval(seed in 0u64..200, n in 0usize..20) {
            let app = app1();
            let r = ReferencePoint::normalized_default(2);
            let exact = hypervolume_2d(&weighted_sum_front(&app, 2001).unwrap(), &r).unwrap();
            let ys: Vec<ObjectiveVector> = random_walk(seed, n).iter().map(|x| app.evaluate_true(x).unwrap()).collect();
            // The traced front plus the sample is the true maximum for this set.
            let mut all = weighted_sum_front(&app, 2001).unwrap();
            all.extend(ys.iter().cloned());
            let max_hv = hypervolume_2d(&front_of(&all), &r).unwrap().max(exact);
            let rel = relative_hypervolume(&front_of(&ys), &r, max_hv).unwrap();
            prop_assert!((0.0..=1.0).contains(&rel));
        }
    }
}
