//! Box-constrained limited-memory quasi-Newton minimizer used for
//! hyperparameter fitting.

use std::collections::VecDeque;

pub struct BoxLbfgs {
    pub memory: usize,
    pub max_iters: usize,
    pub gradient_tolerance: f64,
    pub value_tolerance: f64,
}

impl Default for BoxLbfgs {
    fn default() -> Self {
        Self {
            memory: 8,
            max_iters: 200,
            gradient_tolerance: 1e-6,
            value_tolerance: 1e-10,
        }
    }
}

pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
}

fn project(x: &mut [f64], lower: &[f64], upper: &[f64]) {
    for ((v, lo), hi) in x.iter_mut().zip(lower).zip(upper) {
        *v = v.clamp(*lo, *hi);
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Norm of the gradient with components that push against an active bound removed.
fn projected_gradient_norm(x: &[f64], g: &[f64], lower: &[f64], upper: &[f64]) -> f64 {
    x.iter()
        .zip(g)
        .zip(lower.iter().zip(upper))
        .map(|((&xi, &gi), (&lo, &hi))| {
            if (xi <= lo && gi > 0.0) || (xi >= hi && gi < 0.0) {
                0.0
            } else {
                gi * gi
            }
        })
        .sum::<f64>()
        .sqrt()
}

impl BoxLbfgs {
    /// Minimizes `f` over the box. `f` returns `None` where it is undefined,
    /// which the line search treats as an infinitely bad value.
    pub fn minimize<F>(&self, mut f: F, x0: &[f64], lower: &[f64], upper: &[f64]) -> Option<Minimum>
    where
        F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
    {
        let mut x = x0.to_vec();
        project(&mut x, lower, upper);
        let (mut fx, mut g) = f(&x)?;
        if !fx.is_finite() {
            return None;
        }
        let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(self.memory);

        for _ in 0..self.max_iters {
            if projected_gradient_norm(&x, &g, lower, upper) < self.gradient_tolerance {
                break;
            }
            // Two-loop recursion.
            let mut d: Vec<f64> = g.iter().map(|v| -v).collect();
            let mut alphas = Vec::with_capacity(history.len());
            for (s, y, rho) in history.iter().rev() {
                let a = rho * dot(s, &d);
                for (di, yi) in d.iter_mut().zip(y) {
                    *di -= a * yi;
                }
                alphas.push(a);
            }
            if let Some((s, y, _)) = history.back() {
                let gamma = dot(s, y) / dot(y, y);
                d.iter_mut().for_each(|v| *v *= gamma);
            }
            for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
                let b = rho * dot(y, &d);
                for (di, si) in d.iter_mut().zip(s) {
                    *di += (a - b) * si;
                }
            }
            // Drop components that would leave an active bound immediately.
            for i in 0..d.len() {
                if (x[i] <= lower[i] && d[i] < 0.0) || (x[i] >= upper[i] && d[i] > 0.0) {
                    d[i] = 0.0;
                }
            }
            if dot(&d, &g) >= 0.0 {
                d = g.iter().map(|v| -v).collect();
                history.clear();
            }
            let mut step = if history.is_empty() {
                (1.0 / dot(&d, &d).sqrt()).min(1.0)
            } else {
                1.0
            };

            let mut accepted = None;
            for _ in 0..40 {
                let mut trial: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + step * di).collect();
                project(&mut trial, lower, upper);
                let moved: Vec<f64> = trial.iter().zip(&x).map(|(a, b)| a - b).collect();
                let decrease = dot(&g, &moved);
                if let Some((ft, gt)) = f(&trial) {
                    if ft.is_finite() && ft <= fx + 1e-4 * decrease {
                        accepted = Some((trial, ft, gt, moved));
                        break;
                    }
                }
                step *= 0.5;
            }
            let Some((trial, ft, gt, s)) = accepted else {
                break;
            };
            let y: Vec<f64> = gt.iter().zip(&g).map(|(a, b)| a - b).collect();
            let sy = dot(&s, &y);
            if sy > 1e-12 {
                if history.len() == self.memory {
                    history.pop_front();
                }
                history.push_back((s, y, 1.0 / sy));
            }
            let improvement = fx - ft;
            x = trial;
            fx = ft;
            g = gt;
            if improvement.abs() <= self.value_tolerance * fx.abs().max(1.0) {
                break;
            }
        }
        Some(Minimum { x, value: fx })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock_unconstrained() {
        let f = |x: &[f64]| {
            let (a, b) = (x[0], x[1]);
            let v = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
            Some((v, g))
        };
        let opt = BoxLbfgs {
            max_iters: 500,
            ..Default::default()
        };
        let m = opt.minimize(f, &[-1.2, 1.0], &[-5.0, -5.0], &[5.0, 5.0]).unwrap();
        assert!((m.x[0] - 1.0).abs() < 1e-4 && (m.x[1] - 1.0).abs() < 1e-4, "{:?}", m.x);
    }

    #[test]
    fn active_bound() {
        // Minimum of (x - 3)^2 + (y + 1)^2 restricted to [0, 1]^2 is (1, 0).
        let f = |x: &[f64]| Some(((x[0] - 3.0).powi(2) + (x[1] + 1.0).powi(2), vec![2.0 * (x[0] - 3.0), 2.0 * (x[1] + 1.0)]));
        let m = BoxLbfgs::default().minimize(f, &[0.5, 0.5], &[0.0, 0.0], &[1.0, 1.0]).unwrap();
        assert!((m.x[0] - 1.0).abs() < 1e-9 && m.x[1].abs() < 1e-9);
    }
}
