//! Per-objective Gaussian-process surrogates.
//!
//! Each model uses a constant mean, a Matérn 5/2 kernel with one lengthscale
//! per design parameter, and homoscedastic Gaussian observation noise.
//! Hyperparameters are fitted by maximizing the log marginal likelihood plus
//! weak log-normal penalties, from several restarts, on standardized targets;
//! the fitted values are then mapped back to target units so the stored model
//! is an ordinary GP on the raw targets.

mod kernel;
mod optimize;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::domain::{DesignPoint, Observation};
use crate::error::{Error, Result};

pub use kernel::{matern52, matern52_radial, scaled_distance};
pub use optimize::{BoxLbfgs, Minimum};

const LN_2PI: f64 = 1.837_877_066_409_345_5;
pub const JITTER_START: f64 = 1e-10;
pub const JITTER_MAX: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelHyperparameters {
    pub lengthscales: Vec<f64>,
    pub signal_variance: f64,
    pub noise_variance: f64,
    pub constant_mean: f64,
}

impl KernelHyperparameters {
    /// Parameter vector used by the likelihood gradient:
    /// `[log l_1 .. log l_n, log signal_variance, log noise_variance, constant_mean]`.
    pub fn to_log_params(&self) -> Vec<f64> {
        let mut theta: Vec<f64> = self.lengthscales.iter().map(|l| l.ln()).collect();
        theta.push(self.signal_variance.ln());
        theta.push(self.noise_variance.ln());
        theta.push(self.constant_mean);
        theta
    }

    pub fn from_log_params(theta: &[f64]) -> Self {
        let n = theta.len() - 3;
        Self {
            lengthscales: theta[..n].iter().map(|v| v.exp()).collect(),
            signal_variance: theta[n].exp(),
            noise_variance: theta[n + 1].exp(),
            constant_mean: theta[n + 2],
        }
    }

    fn validate(&self, dim: usize) -> Result<()> {
        if self.lengthscales.len() != dim {
            return Err(Error::Dimension {
                expected: dim,
                got: self.lengthscales.len(),
            });
        }
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !self.lengthscales.iter().all(|&l| positive(l))
            || !positive(self.signal_variance)
            || !positive(self.noise_variance)
            || !self.constant_mean.is_finite()
        {
            return Err(Error::Argument(format!("invalid kernel hyperparameters {self:?}")));
        }
        Ok(())
    }
}

/// Gaussian penalties on log-hyperparameters, on the standardized target scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperPrior {
    pub log_lengthscale_mean: f64,
    pub log_lengthscale_sd: f64,
    pub log_signal_mean: f64,
    pub log_signal_sd: f64,
    pub log_noise_mean: f64,
    pub log_noise_sd: f64,
    pub constant_mean_sd: f64,
}

impl Default for HyperPrior {
    fn default() -> Self {
        Self {
            log_lengthscale_mean: 0.0,
            log_lengthscale_sd: 1.0,
            log_signal_mean: 0.0,
            log_signal_sd: 1.0,
            log_noise_mean: (1e-2f64).ln(),
            log_noise_sd: 2.5,
            constant_mean_sd: 1.0,
        }
    }
}

impl HyperPrior {
    fn log_density(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        let n = theta.len() - 3;
        let mut term = |i: usize, mean: f64, sd: f64| {
            let z = (theta[i] - mean) / sd;
            grad[i] += -z / sd;
            -0.5 * z * z
        };
        let mut total = 0.0;
        for i in 0..n {
            total += term(i, self.log_lengthscale_mean, self.log_lengthscale_sd);
        }
        total += term(n, self.log_signal_mean, self.log_signal_sd);
        total += term(n + 1, self.log_noise_mean, self.log_noise_sd);
        total += term(n + 2, 0.0, self.constant_mean_sd);
        total
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub restarts: usize,
    pub seed: u64,
    pub max_iters: usize,
    /// Lower bound on the standardized noise variance.
    pub noise_floor: f64,
    /// Fixes the noise variance (target units) instead of fitting it.
    pub fixed_noise: Option<f64>,
    pub prior: Option<HyperPrior>,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            restarts: 8,
            seed: 0,
            max_iters: 200,
            noise_floor: 1e-6,
            fixed_noise: None,
            prior: Some(HyperPrior::default()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorPrediction {
    pub mean: f64,
    pub variance: f64,
}

/// Cholesky factorization with the jitter escalation schedule.
fn factorize(mut k: DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let n = k.nrows();
    let mut jitter = JITTER_START;
    for i in 0..n {
        k[(i, i)] += jitter;
    }
    loop {
        if let Some(chol) = Cholesky::new(k.clone()) {
            return Ok((chol, jitter));
        }
        if jitter >= JITTER_MAX {
            return Err(Error::Conditioning { jitter });
        }
        let next = (jitter * 10.0).min(JITTER_MAX);
        for i in 0..n {
            k[(i, i)] += next - jitter;
        }
        jitter = next;
    }
}

fn check_inputs(x: &[DesignPoint], y: &[f64]) -> Result<usize> {
    if x.len() != y.len() {
        return Err(Error::Dimension {
            expected: x.len(),
            got: y.len(),
        });
    }
    let dim = x.first().map_or(0, DesignPoint::dim);
    if let Some(p) = x.iter().find(|p| p.dim() != dim) {
        return Err(Error::Dimension {
            expected: dim,
            got: p.dim(),
        });
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite training target".into()));
    }
    Ok(dim)
}

/// Log marginal likelihood and its gradient with respect to
/// [`KernelHyperparameters::to_log_params`].
pub fn log_marginal_likelihood(x: &[DesignPoint], y: &[f64], hp: &KernelHyperparameters) -> Result<(f64, Vec<f64>)> {
    let dim = check_inputs(x, y)?;
    hp.validate(dim)?;
    if x.is_empty() {
        return Err(Error::InsufficientData { needed: 1, have: 0 });
    }
    let rows: Vec<&[f64]> = x.iter().map(DesignPoint::coords).collect();
    lml_with_gradient(&rows, y, &hp.to_log_params())
}

fn lml_with_gradient(x: &[&[f64]], y: &[f64], theta: &[f64]) -> Result<(f64, Vec<f64>)> {
    let n = x.len();
    let dim = theta.len() - 3;
    let hp = KernelHyperparameters::from_log_params(theta);
    let inv_ls: Vec<f64> = hp.lengthscales.iter().map(|l| 1.0 / l).collect();

    let mut signal = DMatrix::<f64>::zeros(n, n);
    let mut radial = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let r = scaled_distance(x[i], x[j], &inv_ls);
            let k = hp.signal_variance * matern52(r);
            let g = hp.signal_variance * matern52_radial(r);
            signal[(i, j)] = k;
            signal[(j, i)] = k;
            radial[(i, j)] = g;
            radial[(j, i)] = g;
        }
    }
    let mut k = signal.clone();
    for i in 0..n {
        k[(i, i)] += hp.noise_variance;
    }
    let (chol, _) = factorize(k)?;
    let resid = DVector::from_iterator(n, y.iter().map(|v| v - hp.constant_mean));
    let alpha = chol.solve(&resid);
    let log_det_half: f64 = chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum();
    let lml = -0.5 * resid.dot(&alpha) - log_det_half - 0.5 * n as f64 * LN_2PI;

    // W = alpha alpha^T - K^{-1}; dL/dtheta = 0.5 tr(W dK/dtheta).
    let mut w = chol.inverse();
    w.neg_mut();
    w.ger(1.0, &alpha, &alpha, 1.0);

    let mut grad = vec![0.0; theta.len()];
    for d in 0..dim {
        let il2 = inv_ls[d] * inv_ls[d];
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..i {
                let delta = x[i][d] - x[j][d];
                acc += 2.0 * w[(i, j)] * radial[(i, j)] * delta * delta * il2;
            }
        }
        grad[d] = 0.5 * acc;
    }
    grad[dim] = 0.5 * w.component_mul(&signal).sum();
    grad[dim + 1] = 0.5 * hp.noise_variance * w.trace();
    grad[dim + 2] = alpha.sum();
    Ok((lml, grad))
}

/// A fitted single-objective GP. Immutable once built.
#[derive(Clone, Debug)]
pub struct GaussianProcessModel {
    hp: KernelHyperparameters,
    inv_ls: Vec<f64>,
    train_x: Vec<DesignPoint>,
    train_y: Vec<f64>,
    /// Row-major lower-triangular factor of `K + (noise + jitter) I`.
    chol: Vec<f64>,
    alpha: Vec<f64>,
    jitter: f64,
}

impl GaussianProcessModel {
    /// Builds the posterior for fixed hyperparameters.
    pub fn new(train_x: Vec<DesignPoint>, train_y: Vec<f64>, hp: KernelHyperparameters) -> Result<Self> {
        let dim = check_inputs(&train_x, &train_y)?;
        if train_x.is_empty() {
            return Err(Error::InsufficientData { needed: 1, have: 0 });
        }
        hp.validate(dim)?;
        let n = train_x.len();
        let inv_ls: Vec<f64> = hp.lengthscales.iter().map(|l| 1.0 / l).collect();
        let mut k = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v = kernel::covariance(train_x[i].coords(), train_x[j].coords(), &inv_ls, hp.signal_variance);
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
            k[(i, i)] += hp.noise_variance;
        }
        let (chol, jitter) = factorize(k)?;
        let resid = DVector::from_iterator(n, train_y.iter().map(|v| v - hp.constant_mean));
        let alpha = chol.solve(&resid).as_slice().to_vec();
        let l = chol.l();
        let mut flat = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                flat[i * n + j] = l[(i, j)];
            }
        }
        Ok(Self {
            hp,
            inv_ls,
            train_x,
            train_y,
            chol: flat,
            alpha,
            jitter,
        })
    }

    /// Fits objective `objective_index` on the formal observations of `history`.
    pub fn fit(history: &[Observation], objective_index: usize, config: &FitConfig) -> Result<Self> {
        let formal: Vec<&Observation> = history.iter().filter(|o| o.is_formal()).collect();
        let x: Vec<DesignPoint> = formal.iter().map(|o| o.point.clone()).collect();
        let y = formal
            .iter()
            .map(|o| {
                o.objectives.values().get(objective_index).copied().ok_or(Error::Dimension {
                    expected: objective_index + 1,
                    got: o.objectives.len(),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        Self::fit_data(x, y, config)
    }

    pub fn fit_data(x: Vec<DesignPoint>, y: Vec<f64>, config: &FitConfig) -> Result<Self> {
        let dim = check_inputs(&x, &y)?;
        if x.len() < 2 {
            return Err(Error::InsufficientData { needed: 2, have: x.len() });
        }
        let n = y.len() as f64;
        let y_mean = y.iter().sum::<f64>() / n;
        let y_var = y.iter().map(|v| (v - y_mean).powi(2)).sum::<f64>() / n;
        let y_scale = if y_var.sqrt() > 1e-12 { y_var.sqrt() } else { 1.0 };
        let z: Vec<f64> = y.iter().map(|v| (v - y_mean) / y_scale).collect();
        let rows: Vec<&[f64]> = x.iter().map(DesignPoint::coords).collect();

        let mut lower = vec![(0.01f64).ln(); dim];
        let mut upper = vec![(100.0f64).ln(); dim];
        lower.extend([(1e-3f64).ln(), config.noise_floor.ln(), -5.0]);
        upper.extend([(100.0f64).ln(), 0.0, 5.0]);
        if let Some(noise) = config.fixed_noise {
            if !(noise > 0.0) {
                return Err(Error::Argument("fixed noise must be positive".into()));
            }
            let v = (noise / (y_scale * y_scale)).ln();
            lower[dim + 1] = v;
            upper[dim + 1] = v;
        }

        let objective = |theta: &[f64]| -> Option<(f64, Vec<f64>)> {
            let (lml, mut grad) = lml_with_gradient(&rows, &z, theta).ok()?;
            let mut total = lml;
            if let Some(prior) = &config.prior {
                total += prior.log_density(theta, &mut grad);
            }
            grad.iter_mut().for_each(|g| *g = -*g);
            Some((-total, grad))
        };

        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let optimizer = BoxLbfgs {
            max_iters: config.max_iters,
            ..Default::default()
        };
        let mut best: Option<Minimum> = None;
        for restart in 0..config.restarts.max(1) {
            let mut start: Vec<f64> = if restart == 0 {
                let mut s = vec![(0.5f64).ln(); dim];
                s.extend([0.0, (1e-2f64).ln(), 0.0]);
                s
            } else {
                let mut s: Vec<f64> = (0..dim).map(|_| rng.random_range((0.1f64).ln()..(3.0f64).ln())).collect();
                s.push(rng.random_range((0.3f64).ln()..(3.0f64).ln()));
                s.push(rng.random_range((1e-5f64).ln()..(1e-1f64).ln()));
                s.push(rng.random_range(-0.5..0.5));
                s
            };
            for ((v, lo), hi) in start.iter_mut().zip(&lower).zip(&upper) {
                *v = v.clamp(*lo, *hi);
            }
            if let Some(m) = optimizer.minimize(objective, &start, &lower, &upper) {
                if best.as_ref().is_none_or(|b| m.value < b.value) {
                    best = Some(m);
                }
            }
        }
        let best = best.ok_or(Error::Conditioning { jitter: JITTER_MAX })?;
        let fitted = KernelHyperparameters::from_log_params(&best.x);
        let scale2 = y_scale * y_scale;
        let hp = KernelHyperparameters {
            lengthscales: fitted.lengthscales,
            signal_variance: fitted.signal_variance * scale2,
            noise_variance: config.fixed_noise.unwrap_or(fitted.noise_variance * scale2),
            constant_mean: y_mean + fitted.constant_mean * y_scale,
        };
        Self::new(x, y, hp)
    }

    pub fn hyperparameters(&self) -> &KernelHyperparameters {
        &self.hp
    }

    pub fn train_x(&self) -> &[DesignPoint] {
        &self.train_x
    }

    pub fn train_y(&self) -> &[f64] {
        &self.train_y
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn dim(&self) -> usize {
        self.inv_ls.len()
    }

    pub fn n_train(&self) -> usize {
        self.train_y.len()
    }

    /// Prior covariance between two inputs.
    #[inline]
    pub fn kernel(&self, a: &[f64], b: &[f64]) -> f64 {
        kernel::covariance(a, b, &self.inv_ls, self.hp.signal_variance)
    }

    /// Writes `L^{-1} k(T, x)` into `out` and returns the posterior mean at `x`.
    #[inline]
    pub(crate) fn whitened_cross(&self, x: &[f64], out: &mut [f64]) -> f64 {
        let n = self.n_train();
        let mut mean = self.hp.constant_mean;
        for (i, t) in self.train_x.iter().enumerate() {
            let k = self.kernel(t.coords(), x);
            mean += k * self.alpha[i];
            out[i] = k;
        }
        for i in 0..n {
            let row = &self.chol[i * n..i * n + i];
            let s: f64 = row.iter().zip(&out[..i]).map(|(a, b)| a * b).sum();
            out[i] = (out[i] - s) / self.chol[i * n + i];
        }
        mean
    }

    fn check_dim(&self, x: &DesignPoint) -> Result<()> {
        if x.dim() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: x.dim(),
            });
        }
        Ok(())
    }

    /// Posterior of the latent function value at `x`.
    pub fn predict(&self, x: &DesignPoint) -> Result<PosteriorPrediction> {
        self.check_dim(x)?;
        let mut v = vec![0.0; self.n_train()];
        let mean = self.whitened_cross(x.coords(), &mut v);
        let variance = (self.hp.signal_variance - v.iter().map(|a| a * a).sum::<f64>()).max(0.0);
        Ok(PosteriorPrediction { mean, variance })
    }

    /// Posterior predictive of a new noisy observation at `x`.
    pub fn predict_observation(&self, x: &DesignPoint) -> Result<PosteriorPrediction> {
        let p = self.predict(x)?;
        Ok(PosteriorPrediction {
            mean: p.mean,
            variance: p.variance + self.hp.noise_variance,
        })
    }

    /// Frobenius norm of `L L^T - (K + noise I)`; equals the jitter contribution plus rounding.
    pub fn factor_residual(&self) -> f64 {
        let n = self.n_train();
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                let llt: f64 = (0..=i.min(j)).map(|k| self.chol[i * n + k] * self.chol[j * n + k]).sum();
                let mut k = self.kernel(self.train_x[i].coords(), self.train_x[j].coords());
                if i == j {
                    k += self.hp.noise_variance + self.jitter;
                }
                acc += (llt - k).powi(2);
            }
        }
        acc.sqrt()
    }

    /// Stable digest of the training set and hyperparameters.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        for (x, y) in self.train_x.iter().zip(&self.train_y) {
            for v in x.coords() {
                hasher.update(v.to_bits().to_le_bytes());
            }
            hasher.update(y.to_bits().to_le_bytes());
        }
        for v in self.hp.to_log_params() {
            hasher.update(v.to_bits().to_le_bytes());
        }
        hasher.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Digest of the training set only.
    pub fn training_fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        for (x, y) in self.train_x.iter().zip(&self.train_y) {
            for v in x.coords() {
                hasher.update(v.to_bits().to_le_bytes());
            }
            hasher.update(y.to_bits().to_le_bytes());
        }
        hasher.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Joint posterior mean and covariance over `points`.
    pub fn joint_posterior(&self, points: &[DesignPoint]) -> Result<(Vec<f64>, DMatrix<f64>)> {
        let p = points.len();
        let n = self.n_train();
        let mut means = Vec::with_capacity(p);
        let mut whitened = Vec::with_capacity(p);
        for x in points {
            self.check_dim(x)?;
            let mut v = vec![0.0; n];
            means.push(self.whitened_cross(x.coords(), &mut v));
            whitened.push(v);
        }
        let mut cov = DMatrix::<f64>::zeros(p, p);
        for i in 0..p {
            for j in 0..=i {
                let prior = self.kernel(points[i].coords(), points[j].coords());
                let reduction: f64 = whitened[i].iter().zip(&whitened[j]).map(|(a, b)| a * b).sum();
                cov[(i, j)] = prior - reduction;
                cov[(j, i)] = prior - reduction;
            }
        }
        Ok((means, cov))
    }
}

/// Joint posterior draws of the latent functions, shaped `[sample][point][objective]`.
/// Objectives are sampled independently, one model each.
pub fn sample_posterior<R: Rng>(
    models: &[GaussianProcessModel],
    points: &[DesignPoint],
    n_samples: usize,
    rng: &mut R,
) -> Result<Vec<Vec<Vec<f64>>>> {
    if points.is_empty() {
        return Ok(vec![Vec::new(); n_samples]);
    }
    let p = points.len();
    let mut factors = Vec::with_capacity(models.len());
    for model in models {
        let (mean, cov) = model.joint_posterior(points)?;
        let (chol, _) = factorize(cov)?;
        factors.push((mean, chol.l()));
    }
    let mut out = vec![vec![vec![0.0; models.len()]; p]; n_samples];
    let mut z = vec![0.0; p];
    for sample in out.iter_mut() {
        for (j, (mean, l)) in factors.iter().enumerate() {
            z.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
            for i in 0..p {
                let mut v = mean[i];
                for k in 0..=i {
                    v += l[(i, k)] * z[k];
                }
                sample[i][j] = v;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(rows: &[&[f64]]) -> Vec<DesignPoint> {
        rows.iter().map(|r| DesignPoint::new(r.to_vec()).unwrap()).collect()
    }

    fn random_points(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<DesignPoint> {
        (0..n)
            .map(|_| DesignPoint::new((0..dim).map(|_| rng.random()).collect()).unwrap())
            .collect()
    }

    fn hp(ls: &[f64], s: f64, noise: f64, c: f64) -> KernelHyperparameters {
        KernelHyperparameters {
            lengthscales: ls.to_vec(),
            signal_variance: s,
            noise_variance: noise,
            constant_mean: c,
        }
    }

    #[test]
    fn lml_single_point_is_gaussian_density() {
        let x = pts(&[&[0.3, 0.6]]);
        let h = hp(&[0.4, 0.7], 1.3, 0.2, 0.1);
        let (lml, _) = log_marginal_likelihood(&x, &[0.9], &h).unwrap();
        let var = 1.3 + 0.2 + JITTER_START;
        let expected = -0.5 * (0.9f64 - 0.1).powi(2) / var - 0.5 * (2.0 * std::f64::consts::PI * var).ln();
        assert!((lml - expected).abs() < 1e-12, "{lml} vs {expected}");
    }

    #[test]
    fn lml_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..10 {
            let x = random_points(&mut rng, 6, 3);
            let y: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            let h = hp(
                &[rng.random_range(0.2..2.0), rng.random_range(0.2..2.0), rng.random_range(0.2..2.0)],
                rng.random_range(0.5..2.0),
                rng.random_range(0.01..0.3),
                rng.random_range(-0.5..0.5),
            );
            let theta = h.to_log_params();
            let (_, grad) = log_marginal_likelihood(&x, &y, &h).unwrap();
            for k in 0..theta.len() {
                let step = 1e-5;
                let mut up = theta.clone();
                up[k] += step;
                let mut dn = theta.clone();
                dn[k] -= step;
                let fu = log_marginal_likelihood(&x, &y, &KernelHyperparameters::from_log_params(&up)).unwrap().0;
                let fd = log_marginal_likelihood(&x, &y, &KernelHyperparameters::from_log_params(&dn)).unwrap().0;
                let numeric = (fu - fd) / (2.0 * step);
                let rel = (numeric - grad[k]).abs() / numeric.abs().max(1e-3);
                assert!(rel < 1e-4, "param {k}: analytic {} numeric {numeric}", grad[k]);
            }
        }
    }

    #[test]
    fn duplicate_point_keeps_lml_finite() {
        let x = pts(&[&[0.2], &[0.5], &[0.5]]);
        let h = hp(&[0.3], 1.0, 1e-12, 0.0);
        let (lml, grad) = log_marginal_likelihood(&x, &[0.1, 0.4, 0.4], &h).unwrap();
        assert!(lml.is_finite() && grad.iter().all(|g| g.is_finite()));
    }

    #[test]
    fn interpolates_noiseless_training_data() {
        let x = pts(&[&[0.0, 0.1], &[0.25, 0.9], &[0.5, 0.5], &[0.75, 0.2], &[1.0, 0.7]]);
        let y: Vec<f64> = x.iter().map(|p| (3.0 * p.coords()[0]).sin() + p.coords()[1].powi(2)).collect();
        let config = FitConfig {
            fixed_noise: Some(1e-6),
            ..Default::default()
        };
        let model = GaussianProcessModel::fit_data(x.clone(), y.clone(), &config).unwrap();
        for (p, t) in x.iter().zip(&y) {
            assert!((model.predict(p).unwrap().mean - t).abs() < 1e-4);
        }
    }

    #[test]
    fn constant_targets() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_points(&mut rng, 6, 5);
        let model = GaussianProcessModel::fit_data(x, vec![0.3; 6], &FitConfig::default()).unwrap();
        assert!((model.hyperparameters().constant_mean - 0.3).abs() < 1e-3);
        for p in random_points(&mut rng, 50, 5) {
            assert!((model.predict(&p).unwrap().mean - 0.3).abs() < 1e-3);
        }
    }

    #[test]
    fn prior_reversion_far_away() {
        let x = pts(&[&[0.1], &[0.2], &[0.3]]);
        let model = GaussianProcessModel::new(x, vec![0.5, -0.2, 0.4], hp(&[0.01], 0.8, 0.01, 0.25)).unwrap();
        let p = model.predict_observation(&DesignPoint::new(vec![1.0]).unwrap()).unwrap();
        assert!((p.mean - 0.25).abs() < 0.01 * 0.25);
        assert!((p.variance - 0.81).abs() < 0.01 * 0.81);
    }

    #[test]
    fn posterior_variance_bounded_by_prior() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_points(&mut rng, 12, 5);
        let y: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
        let model = GaussianProcessModel::fit_data(x, y, &FitConfig::default()).unwrap();
        let prior = model.hyperparameters().signal_variance;
        for p in random_points(&mut rng, 1000, 5) {
            let v = model.predict(&p).unwrap().variance;
            assert!((0.0..=prior).contains(&v));
        }
        assert!(model.factor_residual() < 1e-8);
    }

    #[test]
    fn permutation_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = random_points(&mut rng, 10, 3);
        let y: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
        let h = hp(&[0.4, 0.6, 0.9], 0.7, 1e-3, 0.1);
        let a = GaussianProcessModel::new(x.clone(), y.clone(), h.clone()).unwrap();
        let order = [3, 7, 1, 0, 9, 2, 5, 8, 4, 6];
        let b = GaussianProcessModel::new(
            order.iter().map(|&i| x[i].clone()).collect(),
            order.iter().map(|&i| y[i]).collect(),
            h,
        )
        .unwrap();
        for p in random_points(&mut rng, 100, 3) {
            let (pa, pb) = (a.predict(&p).unwrap(), b.predict(&p).unwrap());
            assert!((pa.mean - pb.mean).abs() < 1e-9 && (pa.variance - pb.variance).abs() < 1e-9);
        }
    }

    #[test]
    fn recovers_lengthscale_of_generating_process() {
        let mut ratios = Vec::new();
        for trial in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + trial);
            let x = random_points(&mut rng, 30, 2);
            let inv = [1.0 / 0.3, 1.0 / 0.3];
            let k = DMatrix::from_fn(30, 30, |i, j| {
                kernel::covariance(x[i].coords(), x[j].coords(), &inv, 1.0) + if i == j { 1e-4 } else { 0.0 }
            });
            let l = Cholesky::new(k).unwrap().l();
            let z = DVector::from_fn(30, |_, _| rng.sample::<f64, _>(StandardNormal));
            let y = (l * z).as_slice().to_vec();
            let config = FitConfig {
                seed: trial,
                ..Default::default()
            };
            let model = GaussianProcessModel::fit_data(x, y, &config).unwrap();
            let ls = &model.hyperparameters().lengthscales;
            ratios.push((ls[0] * ls[1]).sqrt() / 0.3);
        }
        ratios.sort_by(f64::total_cmp);
        let median = 0.5 * (ratios[9] + ratios[10]);
        assert!((0.5..=2.0).contains(&median), "median ratio {median}, all {ratios:?}");
    }

    #[test]
    fn errors() {
        let x = pts(&[&[0.1, 0.2]]);
        assert!(matches!(
            GaussianProcessModel::fit_data(x.clone(), vec![0.0], &FitConfig::default()),
            Err(Error::InsufficientData { .. })
        ));
        let x2 = pts(&[&[0.1, 0.2], &[0.3, 0.4]]);
        assert!(matches!(
            GaussianProcessModel::fit_data(x2, vec![0.0, f64::NAN], &FitConfig::default()),
            Err(Error::Data(_))
        ));
        let model = GaussianProcessModel::new(x, vec![0.0], hp(&[0.5, 0.5], 1.0, 0.1, 0.0)).unwrap();
        assert!(matches!(model.predict(&DesignPoint::new(vec![0.5]).unwrap()), Err(Error::Dimension { .. })));
    }

    #[test]
    fn sampling_matches_prediction() {
        let x = pts(&[&[0.1, 0.1], &[0.4, 0.8], &[0.9, 0.3]]);
        let model = GaussianProcessModel::new(x, vec![0.2, -0.3, 0.5], hp(&[0.3, 0.3], 0.5, 1e-3, 0.0)).unwrap();
        let probe = pts(&[&[0.6, 0.6]]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 10_000;
        let draws = sample_posterior(std::slice::from_ref(&model), &probe, n, &mut rng).unwrap();
        let vals: Vec<f64> = draws.iter().map(|s| s[0][0]).collect();
        let mean = vals.iter().sum::<f64>() / n as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let pred = model.predict(&probe[0]).unwrap();
        let se_mean = (pred.variance / n as f64).sqrt();
        let se_var = pred.variance * (2.0 / (n - 1) as f64).sqrt();
        assert!((mean - pred.mean).abs() < 3.0 * se_mean);
        assert!((var - pred.variance).abs() < 3.0 * se_var);

        let again = sample_posterior(std::slice::from_ref(&model), &probe, n, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(draws, again);
        assert!(sample_posterior(&[model], &[], 4, &mut rng).unwrap().iter().all(Vec::is_empty));
    }
}
