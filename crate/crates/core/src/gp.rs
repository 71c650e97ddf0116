//! Zero-mean Gaussian-process regression with a separable squared-exponential
//! kernel, a multiplicative scale and an index-keyed nugget:
//!
//! ```text
//! k(u, v) = tau2 * [ exp(-Σ_k (u_k - v_k)² / theta_k) + δ_index(u, v) * eta ]
//! ```
//!
//! The nugget applies only when both arguments are the *same row* of one
//! design (the diagonal of a symmetric covariance matrix), never merely
//! because two values coincide. The scale `tau2` is profiled out of the
//! likelihood in closed form, so fitting optimizes only the log-lengthscales
//! and the log-nugget.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::design::{lhs, DesignMatrix};
use crate::error::{Error, Result};
use crate::linalg::{chol_logdet, cholesky_jittered, SpdFactor};
use crate::optim::{minimize, OptimOptions};

/// Smallest nugget a fitted GP may carry.
pub const ETA_MIN: f64 = 1e-8;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelHyperparams {
    pub tau2: f64,
    pub theta: Vec<f64>,
    pub eta: f64,
}

impl KernelHyperparams {
    pub fn new(tau2: f64, theta: Vec<f64>, eta: f64) -> Result<Self> {
        if !(tau2 > 0.0 && tau2.is_finite()) {
            return Err(Error::invalid(format!("tau2 must be positive, got {tau2}")));
        }
        if theta.is_empty() || theta.iter().any(|&t| !(t > 0.0 && t.is_finite())) {
            return Err(Error::invalid(format!("lengthscales must be positive: {theta:?}")));
        }
        if !(eta >= 0.0 && eta.is_finite()) {
            return Err(Error::invalid(format!("nugget must be nonnegative, got {eta}")));
        }
        Ok(Self { tau2, theta, eta })
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    /// Prior variance at a single point, `tau2 (1 + eta)`.
    pub fn marginal_variance(&self) -> f64 {
        self.tau2 * (1.0 + self.eta)
    }
}

/// `exp(-Σ_k (u_k - v_k)² / theta_k)` without scale or nugget.
#[inline]
pub fn correlation(u: &[f64], v: &[f64], theta: &[f64]) -> f64 {
    let mut s = 0.0;
    for ((a, b), t) in u.iter().zip(v).zip(theta) {
        let diff = a - b;
        s += diff * diff / t;
    }
    (-s).exp()
}

pub fn kernel_value(u: &[f64], v: &[f64], same_index: bool, hp: &KernelHyperparams) -> Result<f64> {
    if u.len() != hp.dim() || v.len() != hp.dim() {
        return Err(Error::invalid(format!(
            "kernel expects {}-dimensional points, got {} and {}",
            hp.dim(),
            u.len(),
            v.len()
        )));
    }
    let nug = if same_index { hp.eta } else { 0.0 };
    Ok(hp.tau2 * (correlation(u, v, &hp.theta) + nug))
}

/// Correlation matrix of a design against itself with `eta` on the diagonal.
pub fn correlation_matrix(x: &DesignMatrix, theta: &[f64], eta: f64) -> DMatrix<f64> {
    let n = x.nrows();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = 1.0 + eta;
        let xi = x.row(i);
        for j in 0..i {
            let v = correlation(xi, x.row(j), theta);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// Full covariance `tau2 * (R + eta I)` of a design against itself.
pub fn kernel_matrix(x: &DesignMatrix, hp: &KernelHyperparams) -> DMatrix<f64> {
    correlation_matrix(x, &hp.theta, hp.eta) * hp.tau2
}

/// Cross-covariance between two different point sets; never receives the nugget.
pub fn cross_kernel(a: &DesignMatrix, b: &DesignMatrix, hp: &KernelHyperparams) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), b.nrows(), |i, j| {
        hp.tau2 * correlation(a.row(i), b.row(j), &hp.theta)
    })
}

/// Concentrated log marginal likelihood and its gradient.
#[derive(Debug, Clone)]
pub struct LogLikelihood {
    pub loglik: f64,
    /// Derivatives with respect to `log theta_1..log theta_d`, then `log eta`.
    pub gradient: Vec<f64>,
    /// Closed-form scale estimate `yᵀ R⁻¹ y / n`.
    pub tau2_hat: f64,
    /// Relative diagonal jitter the factorization needed (0 if none).
    pub jitter: f64,
}

/// Profiled log likelihood
/// `ℓ = -(n/2) log(yᵀR⁻¹y) - ½ log|R| - (n/2)(log 2π - log n + 1)`
/// with its analytic gradient in log-lengthscales and log-nugget.
pub fn log_marginal_likelihood(
    theta: &[f64],
    eta: f64,
    inputs: &DesignMatrix,
    outputs: &[f64],
) -> Result<LogLikelihood> {
    let n = inputs.nrows();
    let d = inputs.ncols();
    if n == 0 || outputs.len() != n {
        return Err(Error::invalid(format!(
            "need matching nonempty inputs/outputs (got {n} rows, {} outputs)",
            outputs.len()
        )));
    }
    if theta.len() != d {
        return Err(Error::invalid(format!(
            "{} lengthscales for {d}-dimensional inputs",
            theta.len()
        )));
    }
    let r = correlation_matrix(inputs, theta, eta);
    let ch = SpdFactor::new(&r, "GP correlation matrix")?;
    let jitter = ch.jitter;
    let y = DVector::from_column_slice(outputs);
    let alpha = ch.solve(&y);
    let q = y.dot(&alpha);
    if !(q > 0.0 && q.is_finite()) {
        return Err(Error::numerical("degenerate quadratic form yᵀR⁻¹y", jitter));
    }
    let nf = n as f64;
    let logdet = ch.logdet;
    let loglik = -0.5 * nf * q.ln() - 0.5 * logdet - 0.5 * nf * (LN_2PI - nf.ln() + 1.0);

    let rinv = ch.inverse();
    let c = nf / q;
    let mut gradient = vec![0.0; d + 1];
    for j in 0..n {
        let xj = inputs.row(j);
        for i in (j + 1)..n {
            let w = c * alpha[i] * alpha[j] - rinv[(i, j)];
            let e = r[(i, j)];
            if e == 0.0 {
                continue;
            }
            let we = w * e;
            let xi = inputs.row(i);
            for k in 0..d {
                let diff = xi[k] - xj[k];
                gradient[k] += we * diff * diff / theta[k];
            }
        }
    }
    let mut diag = 0.0;
    for i in 0..n {
        diag += c * alpha[i] * alpha[i] - rinv[(i, i)];
    }
    gradient[d] = 0.5 * eta * diag;

    Ok(LogLikelihood {
        loglik,
        gradient,
        tau2_hat: q / nf,
        jitter,
    })
}

/// Hyperparameter search configuration for [`fit_mle`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitConfig {
    /// Bounds on each `log theta_k`.
    pub log_theta_bounds: (f64, f64),
    /// Bounds on `log eta`.
    pub log_eta_bounds: (f64, f64),
    pub restarts: usize,
    pub seed: u64,
    /// Subtract the output mean before fitting (off by default: zero-mean GP
    /// on raw outputs).
    pub center: bool,
}

impl FitConfig {
    /// Defaults for on-site surrogates (5 restarts).
    pub fn onsite(seed: u64) -> Self {
        Self {
            log_theta_bounds: (1e-4f64.ln(), 10f64.ln()),
            log_eta_bounds: (ETA_MIN.ln(), 0.0),
            restarts: 5,
            seed,
            center: false,
        }
    }

    /// Defaults for the global comparator (30 restarts).
    pub fn global(seed: u64) -> Self {
        Self {
            restarts: 30,
            ..Self::onsite(seed)
        }
    }

    pub fn with_restarts(mut self, restarts: usize) -> Self {
        self.restarts = restarts;
        self
    }

    fn bounds(&self, d: usize) -> (Vec<f64>, Vec<f64>) {
        let mut lo = vec![self.log_theta_bounds.0; d];
        let mut hi = vec![self.log_theta_bounds.1; d];
        lo.push(self.log_eta_bounds.0);
        hi.push(self.log_eta_bounds.1);
        (lo, hi)
    }
}

/// A GP with fixed hyperparameters and cached factorization.
#[derive(Debug, Clone)]
pub struct FittedGP {
    pub hyperparams: KernelHyperparams,
    pub inputs: DesignMatrix,
    /// Training outputs as supplied (before any centering).
    pub outputs: Vec<f64>,
    /// Constant subtracted before fitting; 0 for the default zero-mean GP.
    pub offset: f64,
    /// Lower Cholesky factor of `R + eta I`.
    pub chol: Cholesky<f64, Dyn>,
    /// `(R + eta I)⁻¹ (y - offset)`.
    pub alpha: DVector<f64>,
    /// `log|tau2 (R + eta I)|`.
    pub logdet: f64,
    /// Concentrated log likelihood at these hyperparameters.
    pub loglik: f64,
}

/// Serialized form of fitted hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperparamRecord {
    pub tau2: f64,
    pub theta: Vec<f64>,
    pub eta: f64,
    pub n: usize,
    pub d: usize,
    pub loglik: f64,
    #[serde(default)]
    pub offset: f64,
}

impl FittedGP {
    /// Factorizes the covariance for given hyperparameters. A nugget that
    /// needs jitter to factorize is raised to include it, so the stored
    /// hyperparameters always describe the factorized matrix.
    pub fn new(
        inputs: DesignMatrix,
        outputs: Vec<f64>,
        hyperparams: KernelHyperparams,
        offset: f64,
    ) -> Result<Self> {
        let n = inputs.nrows();
        if outputs.len() != n {
            return Err(Error::invalid("outputs length must match input rows"));
        }
        if inputs.ncols() != hyperparams.dim() {
            return Err(Error::invalid("hyperparameter dimension mismatch"));
        }
        let mut hp = hyperparams;
        let r = correlation_matrix(&inputs, &hp.theta, hp.eta);
        let (chol, jitter) = cholesky_jittered(&r, "GP correlation matrix")?;
        if jitter > 0.0 {
            hp.eta += jitter * (1.0 + hp.eta);
        }
        let centered = DVector::from_iterator(n, outputs.iter().map(|v| v - offset));
        let alpha = chol.solve(&centered);
        let logdet_r = chol_logdet(&chol);
        let logdet = logdet_r + n as f64 * hp.tau2.ln();
        let q = centered.dot(&alpha);
        let loglik = -0.5 * logdet - 0.5 * q / hp.tau2 - 0.5 * n as f64 * LN_2PI;
        Ok(Self {
            hyperparams: hp,
            inputs,
            outputs,
            offset,
            chol,
            alpha,
            logdet,
            loglik,
        })
    }

    pub fn from_record(inputs: DesignMatrix, outputs: Vec<f64>, rec: &HyperparamRecord) -> Result<Self> {
        let hp = KernelHyperparams::new(rec.tau2, rec.theta.clone(), rec.eta)?;
        let mut gp = Self::new(inputs, outputs, hp, rec.offset)?;
        gp.loglik = rec.loglik;
        Ok(gp)
    }

    pub fn record(&self) -> HyperparamRecord {
        HyperparamRecord {
            tau2: self.hyperparams.tau2,
            theta: self.hyperparams.theta.clone(),
            eta: self.hyperparams.eta,
            n: self.inputs.nrows(),
            d: self.inputs.ncols(),
            loglik: self.loglik,
            offset: self.offset,
        }
    }

    pub fn n(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn dim(&self) -> usize {
        self.inputs.ncols()
    }

    /// Correlations (no scale, no nugget) between `u` and every training row.
    pub fn cross_correlation(&self, u: &[f64]) -> DVector<f64> {
        let theta = &self.hyperparams.theta;
        DVector::from_iterator(self.n(), self.inputs.rows().map(|r| correlation(r, u, theta)))
    }

    /// Predictive mean only; skips the triangular solve.
    pub fn predict_mean(&self, u: &[f64]) -> f64 {
        let theta = &self.hyperparams.theta;
        let mut m = self.offset;
        for (r, a) in self.inputs.rows().zip(self.alpha.iter()) {
            m += a * correlation(r, u, theta);
        }
        m
    }

    /// Mean and unclamped variance at one point.
    pub(crate) fn predict_point_raw(&self, u: &[f64]) -> (f64, f64) {
        let k = self.cross_correlation(u);
        let mean = self.offset + k.dot(&self.alpha);
        let w = crate::linalg::forward_solve(&self.chol, &k);
        let hp = &self.hyperparams;
        (mean, hp.tau2 * (1.0 + hp.eta - w.norm_squared()))
    }

    pub fn predict_point(&self, u: &[f64]) -> Result<(f64, f64)> {
        if u.len() != self.dim() {
            return Err(Error::invalid(format!(
                "test point has dimension {}, GP has {}",
                u.len(),
                self.dim()
            )));
        }
        let (m, v) = self.predict_point_raw(u);
        Ok((m, v.max(0.0)))
    }

    /// Predictive means and variances (clamped at zero) at each test row.
    pub fn predict(&self, test: &DesignMatrix) -> Result<(Vec<f64>, Vec<f64>)> {
        if test.ncols() != self.dim() {
            return Err(Error::invalid(format!(
                "test inputs have dimension {}, GP has {}",
                test.ncols(),
                self.dim()
            )));
        }
        let mut means = Vec::with_capacity(test.nrows());
        let mut vars = Vec::with_capacity(test.nrows());
        for u in test.rows() {
            let (m, v) = self.predict_point_raw(u);
            means.push(m);
            vars.push(v.max(0.0));
        }
        Ok((means, vars))
    }
}

/// Maximum-likelihood fit by bounded quasi-Newton ascent from `restarts`
/// starting points: the box midpoint first, the rest from an LHS over the
/// log-parameter box.
pub fn fit_mle(inputs: &DesignMatrix, outputs: &[f64], config: &FitConfig) -> Result<FittedGP> {
    let n = inputs.nrows();
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "GP fit needs at least 2 observations, got {n}"
        )));
    }
    if outputs.len() != n {
        return Err(Error::invalid("outputs length must match input rows"));
    }
    let d = inputs.ncols();
    let offset = if config.center {
        outputs.iter().sum::<f64>() / n as f64
    } else {
        0.0
    };
    let y: Vec<f64> = outputs.iter().map(|v| v - offset).collect();
    let (lo, hi) = config.bounds(d);

    let restarts = config.restarts.max(1);
    let mut starts = vec![lo.iter().zip(&hi).map(|(a, b)| 0.5 * (a + b)).collect::<Vec<_>>()];
    if restarts > 1 {
        let design = lhs(restarts - 1, d + 1, config.seed)?;
        for r in design.rows() {
            starts.push(
                r.iter()
                    .zip(lo.iter().zip(&hi))
                    .map(|(t, (a, b))| a + t * (b - a))
                    .collect(),
            );
        }
    }

    let objective = |p: &[f64]| -> Option<(f64, Vec<f64>)> {
        let theta: Vec<f64> = p[..d].iter().map(|v| v.exp()).collect();
        let eta = p[d].exp();
        let ll = log_marginal_likelihood(&theta, eta, inputs, &y).ok()?;
        Some((-ll.loglik, ll.gradient.iter().map(|g| -g).collect()))
    };

    let opts = OptimOptions::default();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for start in &starts {
        if let Some(res) = minimize(objective, start, &lo, &hi, &opts) {
            if best.as_ref().is_none_or(|(f, _)| res.fx < *f) {
                best = Some((res.fx, res.x));
            }
        }
    }
    let (_, p) = best.ok_or_else(|| Error::numerical("all GP fitting restarts failed", crate::linalg::JITTER_MAX))?;
    let theta: Vec<f64> = p[..d].iter().map(|v| v.exp()).collect();
    let eta = p[d].exp().max(ETA_MIN);
    let ll = log_marginal_likelihood(&theta, eta, inputs, &y)?;
    let hp = KernelHyperparams::new(ll.tau2_hat, theta, eta)?;
    let mut gp = FittedGP::new(inputs.clone(), outputs.to_vec(), hp, offset)?;
    gp.loglik = ll.loglik;
    Ok(gp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_instance(n: usize, d: usize, seed: u64) -> (DesignMatrix, Vec<f64>, Vec<f64>, f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..n * d).map(|_| rng.random()).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let theta: Vec<f64> = (0..d).map(|_| rng.random_range(0.05..1.0)).collect();
        let eta = rng.random_range(1e-3..0.5);
        (DesignMatrix::from_rows(n, d, x).unwrap(), y, theta, eta)
    }

    #[test]
    fn kernel_diagonal_gets_nugget_only_by_index() {
        let hp = KernelHyperparams::new(2.0, vec![0.3, 0.7], 0.1).unwrap();
        let u = [0.2, 0.4];
        assert!((kernel_value(&u, &u, true, &hp).unwrap() - 2.2).abs() < 1e-15);
        assert!((kernel_value(&u, &u, false, &hp).unwrap() - 2.0).abs() < 1e-15);
        let far = kernel_value(&u, &[1e3, -1e3], false, &hp).unwrap();
        assert_eq!(far, 0.0);
        assert!(kernel_value(&u, &[0.1], false, &hp).is_err());
    }

    #[test]
    fn one_point_closed_form() {
        let x = DesignMatrix::from_rows(1, 1, vec![0.3]).unwrap();
        let y0 = 1.7f64;
        let ll = log_marginal_likelihood(&[0.5], 0.0, &x, &[y0]).unwrap();
        let expect = -0.5 * (y0 * y0).ln() - 0.5 * LN_2PI - 0.5;
        assert!((ll.loglik - expect).abs() < 1e-14);
        assert!((ll.tau2_hat - y0 * y0).abs() < 1e-14);
    }

    #[test]
    fn profiled_loglik_equals_full_mvn_at_tau2_hat() {
        let (x, y, theta, eta) = random_instance(12, 2, 3);
        let ll = log_marginal_likelihood(&theta, eta, &x, &y).unwrap();
        let hp = KernelHyperparams::new(ll.tau2_hat, theta, eta).unwrap();
        let k = kernel_matrix(&x, &hp);
        let yv = DVector::from_vec(y);
        let full = -0.5 * k.determinant().ln()
            - 0.5 * yv.dot(&(k.clone().try_inverse().unwrap() * &yv))
            - 6.0 * LN_2PI;
        assert!((ll.loglik - full).abs() < 1e-9, "{} vs {full}", ll.loglik);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (x, y, theta, eta) = random_instance(20, 2, 17);
        let ll = log_marginal_likelihood(&theta, eta, &x, &y).unwrap();
        let mut p: Vec<f64> = theta.iter().map(|t| t.ln()).collect();
        p.push(eta.ln());
        let h = 1e-5;
        for k in 0..p.len() {
            let eval = |q: &[f64]| {
                let th: Vec<f64> = q[..2].iter().map(|v| v.exp()).collect();
                log_marginal_likelihood(&th, q[2].exp(), &x, &y).unwrap().loglik
            };
            let mut up = p.clone();
            up[k] += h;
            let mut dn = p.clone();
            dn[k] -= h;
            let fd = (eval(&up) - eval(&dn)) / (2.0 * h);
            let rel = (fd - ll.gradient[k]).abs() / fd.abs().max(1e-8);
            assert!(rel < 1e-4, "component {k}: analytic {} fd {fd}", ll.gradient[k]);
        }
    }

    #[test]
    fn loglik_is_permutation_invariant() {
        let (x, y, theta, eta) = random_instance(15, 3, 5);
        let perm: Vec<usize> = (0..15).rev().collect();
        let xp = x.select_rows(&perm);
        let yp: Vec<f64> = perm.iter().map(|&i| y[i]).collect();
        let a = log_marginal_likelihood(&theta, eta, &x, &y).unwrap().loglik;
        let b = log_marginal_likelihood(&theta, eta, &xp, &yp).unwrap().loglik;
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn fit_rejects_single_point() {
        let x = DesignMatrix::from_rows(1, 1, vec![0.5]).unwrap();
        assert!(matches!(
            fit_mle(&x, &[1.0], &FitConfig::onsite(0)),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn more_restarts_never_worse() {
        let x = crate::design::maximin_lhs(30, 2, 8, 500).unwrap();
        let y: Vec<f64> = x.rows().map(|r| (6.0 * r[0]).sin() * (3.0 * r[1]).cos()).collect();
        let one = fit_mle(&x, &y, &FitConfig::onsite(1).with_restarts(1)).unwrap();
        let five = fit_mle(&x, &y, &FitConfig::onsite(1).with_restarts(5)).unwrap();
        assert!(five.loglik >= one.loglik - 1e-9);
    }

    #[test]
    fn fit_is_deterministic() {
        let x = crate::design::maximin_lhs(25, 2, 2, 500).unwrap();
        let y: Vec<f64> = x.rows().map(|r| r[0] * r[0] - r[1]).collect();
        let a = fit_mle(&x, &y, &FitConfig::onsite(4)).unwrap();
        let b = fit_mle(&x, &y, &FitConfig::onsite(4)).unwrap();
        assert_eq!(a.record(), b.record());
    }

    #[test]
    fn constant_outputs_are_reproduced() {
        let x = crate::design::maximin_lhs(12, 2, 6, 300).unwrap();
        let c = 3.5;
        let y = vec![c; 12];
        let gp = fit_mle(&x, &y, &FitConfig::onsite(0)).unwrap();
        for u in [[0.5, 0.5], [0.3, 0.7], [0.8, 0.2]] {
            let (m, _) = gp.predict_point(&u).unwrap();
            assert!((m - c).abs() <= c * 1e-2, "mean {m} at {u:?}");
        }
    }

    #[test]
    fn interpolates_training_points() {
        let x = crate::design::maximin_lhs(15, 2, 1, 300).unwrap();
        let y: Vec<f64> = x.rows().map(|r| 1.0 + r[0] - 0.5 * r[1]).collect();
        let hp = KernelHyperparams::new(1.3, vec![0.4, 0.6], ETA_MIN).unwrap();
        let gp = FittedGP::new(x.clone(), y.clone(), hp, 0.0).unwrap();
        let (m, v) = gp.predict(&x).unwrap();
        for i in 0..15 {
            assert!((m[i] - y[i]).abs() <= 1e-6 * y[i].abs());
            assert!(v[i] >= 0.0);
        }
    }

    #[test]
    fn far_prediction_reverts_to_prior() {
        let (x, y, theta, eta) = random_instance(10, 2, 21);
        let hp = KernelHyperparams::new(0.7, theta, eta).unwrap();
        let gp = FittedGP::new(x, y, hp.clone(), 0.0).unwrap();
        let (m, v) = gp.predict_point(&[50.0, -50.0]).unwrap();
        assert!(m.abs() < 1e-12);
        assert!((v - hp.marginal_variance()).abs() < 1e-12);
    }

    #[test]
    fn prediction_matches_dense_conditional() {
        let (x, y, theta, eta) = random_instance(10, 2, 33);
        let hp = KernelHyperparams::new(1.9, theta, eta).unwrap();
        let gp = FittedGP::new(x.clone(), y.clone(), hp.clone(), 0.0).unwrap();
        let test = DesignMatrix::from_rows(3, 2, vec![0.1, 0.2, 0.5, 0.5, 0.9, 0.05]).unwrap();
        let (m, v) = gp.predict(&test).unwrap();
        // dense oracle: explicit inverse of the full covariance
        let kinv = kernel_matrix(&x, &hp).try_inverse().unwrap();
        let ks = cross_kernel(&test, &x, &hp);
        let yv = DVector::from_vec(y);
        let mean = &ks * &kinv * &yv;
        let cov = DMatrix::from_diagonal_element(3, 3, hp.marginal_variance()) - &ks * &kinv * ks.transpose();
        for i in 0..3 {
            assert!((m[i] - mean[i]).abs() < 1e-10);
            assert!((v[i] - cov[(i, i)].max(0.0)).abs() < 1e-10);
        }
    }

    #[test]
    fn record_round_trip_rebuilds_identical_gp() {
        let x = crate::design::maximin_lhs(20, 2, 3, 300).unwrap();
        let y: Vec<f64> = x.rows().map(|r| (4.0 * r[0]).cos() + r[1]).collect();
        let gp = fit_mle(&x, &y, &FitConfig::onsite(9)).unwrap();
        let json = serde_json::to_string(&gp.record()).unwrap();
        let rec: HyperparamRecord = serde_json::from_str(&json).unwrap();
        let back = FittedGP::from_record(x, y, &rec).unwrap();
        assert_eq!(back.alpha, gp.alpha);
        assert_eq!(back.record(), gp.record());
    }
}
