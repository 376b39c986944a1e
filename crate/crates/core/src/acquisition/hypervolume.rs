use std::sync::LazyLock;

use serde::{Deserialize, Serialize};

use crate::domain::ObjectiveVector;
use crate::error::{Error, Result};

/// Offset of the default reference point below the normalized objective range.
pub const REFERENCE_MARGIN: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ReferencePoint {
    values: Vec<f64>,
}

impl ReferencePoint {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Argument(format!("invalid reference point {values:?}")));
        }
        Ok(Self { values })
    }

    /// `(-1 - margin, ..., -1 - margin)`, strictly dominated by all of `[-1, 1]^m`.
    pub fn normalized_default(m: usize) -> Self {
        Self {
            values: vec![-1.0 - REFERENCE_MARGIN; m],
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn pair(&self) -> Result<(f64, f64)> {
        match self.values[..] {
            [a, b] => Ok((a, b)),
            _ => Err(Error::UnsupportedDimension(self.values.len())),
        }
    }
}

/// Exact dominated area of `front` above `reference`.
pub fn hypervolume_2d(front: &[ObjectiveVector], reference: &ReferencePoint) -> Result<f64> {
    let r = reference.pair()?;
    let mut points = Vec::with_capacity(front.len());
    for (index, p) in front.iter().enumerate() {
        let &[a, b] = p.values() else {
            return Err(Error::UnsupportedDimension(p.len()));
        };
        if !(a >= r.0 && b >= r.1) {
            return Err(Error::Reference { index });
        }
        points.push((a, b));
    }
    Ok(area(&mut points, r))
}

/// Dominated area; points not strictly above the reference are ignored.
pub(crate) fn area(points: &mut [(f64, f64)], r: (f64, f64)) -> f64 {
    points.sort_by(|p, q| q.0.total_cmp(&p.0).then(q.1.total_cmp(&p.1)));
    let mut top = r.1;
    let mut total = 0.0;
    for &(x, y) in points.iter() {
        if x > r.0 && y > top {
            total += (x - r.0) * (y - top);
            top = y;
        }
    }
    total
}

/// `E[(z + Z)^+] = z Phi(z) + phi(z)` for standard normal `Z`.
pub(crate) fn normal_partial_moment_exact(z: f64) -> f64 {
    (z * normal_cdf(z) + normal_pdf(z)).max(0.0)
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z * std::f64::consts::FRAC_1_SQRT_2)
}

fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() * 0.398_942_280_401_432_7
}

const TABLE_LIMIT: f64 = 9.0;
const TABLE_STEPS_PER_UNIT: f64 = 64.0;

/// Values and slopes (`Phi`) of the partial moment on a uniform grid.
static PARTIAL_MOMENT_TABLE: LazyLock<Vec<(f64, f64)>> = LazyLock::new(|| {
    let n = (2.0 * TABLE_LIMIT * TABLE_STEPS_PER_UNIT) as usize;
    (0..=n)
        .map(|i| {
            let z = -TABLE_LIMIT + i as f64 / TABLE_STEPS_PER_UNIT;
            (normal_partial_moment_exact(z), normal_cdf(z))
        })
        .collect()
});

/// Cubic Hermite interpolation of [`normal_partial_moment_exact`]; absolute
/// error below 1e-10. Outside the table the function is 0 or `z` to within
/// 1e-20.
#[cfg(test)]
pub(crate) fn normal_partial_moment(z: f64) -> f64 {
    partial_moment_from(&PARTIAL_MOMENT_TABLE, z)
}

#[inline(always)]
fn partial_moment_from(table: &[(f64, f64)], z: f64) -> f64 {
    if z <= -TABLE_LIMIT {
        return 0.0;
    }
    if z >= TABLE_LIMIT {
        return z;
    }
    let u = (z + TABLE_LIMIT) * TABLE_STEPS_PER_UNIT;
    let i = (u as usize).min(table.len() - 2);
    let t = u - i as f64;
    let h = 1.0 / TABLE_STEPS_PER_UNIT;
    let (p0, m0) = table[i];
    let (p1, m1) = table[i + 1];
    let t2 = t * t;
    let t3 = t2 * t;
    let v = (2.0 * t3 - 3.0 * t2 + 1.0) * p0
        + (t3 - 2.0 * t2 + t) * h * m0
        + (-2.0 * t3 + 3.0 * t2) * p1
        + (t3 - t2) * h * m1;
    v.max(0.0)
}

/// Non-dominated points strictly above the reference, sorted by first
/// coordinate descending (so the second is ascending).
#[derive(Clone, Debug, Default)]
pub(crate) struct Staircase {
    points: Vec<(f64, f64)>,
}

impl Staircase {
    pub fn insert(&mut self, p: (f64, f64), r: (f64, f64)) {
        if !(p.0 > r.0 && p.1 > r.1) {
            return;
        }
        if self.points.iter().any(|q| q.0 >= p.0 && q.1 >= p.1) {
            return;
        }
        self.points.retain(|q| !(p.0 >= q.0 && p.1 >= q.1));
        let at = self.points.partition_point(|q| q.0 > p.0);
        self.points.insert(at, p);
    }

    /// Area gained by adding `p`: its box minus the part already covered.
    #[inline]
    pub fn improvement(&self, p: (f64, f64), r: (f64, f64)) -> f64 {
        if !(p.0 > r.0 && p.1 > r.1) {
            return 0.0;
        }
        let mut covered = 0.0;
        let mut top = r.1;
        for &(qx, qy) in &self.points {
            let x = qx.min(p.0);
            let y = qy.min(p.1);
            if y > top {
                covered += (x - r.0) * (y - top);
                top = y;
                if y >= p.1 {
                    break;
                }
            }
        }
        ((p.0 - r.0) * (p.1 - r.1) - covered).max(0.0)
    }

    /// Expected improvement of a point whose coordinates are independent
    /// normals with means `mean` and standard deviations `sd`.
    ///
    /// The improvement of `y` is `int_{r0}^{y0} (y1 - h(t))^+ dt` with `h` the
    /// staircase height, so the expectation splits over the steps of `h` into
    /// products of one-dimensional normal partial moments.
    pub fn expected_improvement(&self, mean: (f64, f64), sd: (f64, f64), r: (f64, f64)) -> f64 {
        let table: &[(f64, f64)] = &PARTIAL_MOMENT_TABLE;
        let inv = (1.0 / sd.0, 1.0 / sd.1);
        let tail0 = |a: f64| sd.0 * partial_moment_from(table, (mean.0 - a) * inv.0);
        let tail1 = |h: f64| sd.1 * partial_moment_from(table, (mean.1 - h) * inv.1);
        let mut total = 0.0;
        let mut left_tail = tail0(r.0);
        // Walk steps left to right; heights decrease from the last point to the reference.
        for &(x, y) in self.points.iter().rev() {
            let right_tail = tail0(x);
            if left_tail > right_tail {
                total += tail1(y) * (left_tail - right_tail);
            }
            left_tail = right_tail;
            if left_tail == 0.0 {
                return total.max(0.0);
            }
        }
        total += tail1(r.1) * left_tail;
        total.max(0.0)
    }

    #[cfg(test)]
    pub fn area(&self, r: (f64, f64)) -> f64 {
        area(&mut self.points.clone(), r)
    }
}
