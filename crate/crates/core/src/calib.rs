//! Calibration of the unknown model parameters `u`: a nonlinear
//! least-squares baseline, modular calibration-as-optimization, and
//! Metropolis-within-Gibbs sampling of the joint-model posterior.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{lhs, DesignMatrix};
use crate::error::{Error, Result};
use crate::gp::{fit_mle, FitConfig, KernelHyperparams};
use crate::io::{fmt_f64, parse_f64};
use crate::koh::JointPrecompute;
use crate::optim::{fd_gradient, minimize, OptimOptions};
use crate::oss::SurrogateBank;
use crate::sim::{FieldDataset, Simulator};

/// Proposal scales used for the four-parameter honeycomb calibration.
pub const HONEYCOMB_SIGMA: [f64; 4] = [0.02, 0.01, 0.2, 0.1];

/// Default random-walk scales: the honeycomb values when `p_u = 4`, else
/// 0.1 per coordinate.
pub fn default_sigma(p_u: usize) -> Vec<f64> {
    if p_u == 4 {
        HONEYCOMB_SIGMA.to_vec()
    } else {
        vec![0.1; p_u]
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PriorSpec {
    #[default]
    Uniform,
    Beta { alpha: f64, beta: f64 },
}

impl PriorSpec {
    pub fn beta(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > 0.0 && beta > 0.0) {
            return Err(Error::invalid("beta prior shapes must be positive"));
        }
        Ok(PriorSpec::Beta { alpha, beta })
    }

    /// Independent-coordinate log density; `-inf` outside the unit cube.
    pub fn log_density(&self, u: &[f64]) -> f64 {
        if u.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return f64::NEG_INFINITY;
        }
        match *self {
            PriorSpec::Uniform => 0.0,
            PriorSpec::Beta { alpha, beta } => {
                let norm = statrs::function::beta::ln_beta(alpha, beta);
                u.iter()
                    .map(|&v| (alpha - 1.0) * v.ln() + (beta - 1.0) * (1.0 - v).ln() - norm)
                    .sum()
            }
        }
    }

    /// Box the optimizers search: the open cube for a Beta prior (whose
    /// density vanishes on the boundary), the closed cube otherwise.
    pub fn search_bounds(&self, p_u: usize) -> (Vec<f64>, Vec<f64>) {
        let eps = match self {
            PriorSpec::Uniform => 0.0,
            PriorSpec::Beta { .. } => 1e-6,
        };
        (vec![eps; p_u], vec![1.0 - eps; p_u])
    }
}

/// Anything that produces model responses at every field site for one `u`.
pub trait ResponseEvaluator: Sync {
    fn evaluate(&self, field: &FieldDataset, u: &[f64]) -> Result<Vec<Option<f64>>>;
}

impl ResponseEvaluator for SurrogateBank {
    fn evaluate(&self, _field: &FieldDataset, u: &[f64]) -> Result<Vec<Option<f64>>> {
        Ok(self.emulate_means(u).into_iter().map(Some).collect())
    }
}

/// Runs the simulator directly at `(x_i, u)` for every site.
pub struct SimulatorEvaluator<'a>(pub &'a dyn Simulator);

impl ResponseEvaluator for SimulatorEvaluator<'_> {
    fn evaluate(&self, field: &FieldDataset, u: &[f64]) -> Result<Vec<Option<f64>>> {
        let design = DesignMatrix::from_rows(1, u.len(), u.to_vec())?;
        let rows: Vec<Vec<f64>> = (0..field.len())
            .map(|i| design.with_prefix(field.site(i)).row(0).to_vec())
            .collect();
        Ok(self.0.simulate(&DesignMatrix::from_row_vecs(&rows)?)?.values)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NlsConfig {
    /// Missing responses above this fraction abort the attempt.
    pub missing_threshold: f64,
    /// Residual imputed for each missing response.
    pub big_residual: f64,
    pub fd_step: f64,
    pub max_iter: usize,
}

impl Default for NlsConfig {
    fn default() -> Self {
        Self {
            missing_threshold: 0.1,
            big_residual: 100.0,
            fd_step: 1e-5,
            max_iter: 200,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NlsResult {
    pub u_hat: Vec<f64>,
    pub rmse: f64,
    pub rmse_start: f64,
    /// False when the search stopped on its iteration budget.
    pub converged: bool,
}

fn nls_loss(eval: &dyn ResponseEvaluator, field: &FieldDataset, u: &[f64], cfg: &NlsConfig) -> Result<f64> {
    let values = eval.evaluate(field, u)?;
    let missing = values.iter().filter(|v| v.is_none()).count();
    let fraction = missing as f64 / values.len() as f64;
    if fraction > cfg.missing_threshold {
        return Err(Error::Missingness {
            fraction,
            threshold: cfg.missing_threshold,
        });
    }
    let sse: f64 = values
        .iter()
        .zip(&field.y)
        .map(|(v, y)| match v {
            Some(m) => (y - m).powi(2),
            None => cfg.big_residual.powi(2),
        })
        .sum();
    Ok(sse / values.len() as f64)
}

/// Minimizes the mean squared residual between model and field data from `u0`.
pub fn nls_calibrate(
    eval: &dyn ResponseEvaluator,
    field: &FieldDataset,
    u0: &[f64],
    cfg: &NlsConfig,
) -> Result<NlsResult> {
    let p = u0.len();
    let (lo, hi) = (vec![0.0; p], vec![1.0; p]);
    let start = nls_loss(eval, field, u0, cfg)?;
    let mut failure: Option<Error> = None;
    let mut value = |u: &[f64]| -> Option<f64> {
        match nls_loss(eval, field, u, cfg) {
            Ok(v) => Some(v),
            Err(e) => {
                failure.get_or_insert(e);
                None
            }
        }
    };
    let objective = |u: &[f64]| {
        let f = value(u)?;
        let g = fd_gradient(&mut value, u, &lo, &hi, cfg.fd_step)?;
        Some((f, g))
    };
    let opts = OptimOptions {
        max_iter: cfg.max_iter,
        ..Default::default()
    };
    let res = minimize(objective, u0, &lo, &hi, &opts);
    if let Some(e) = failure {
        return Err(e);
    }
    let res = res.ok_or_else(|| Error::numerical("least-squares search failed", 0.0))?;
    if !res.converged {
        log::warn!("least-squares calibration stopped on its iteration budget");
    }
    Ok(NlsResult {
        u_hat: res.x,
        rmse: res.fx.sqrt(),
        rmse_start: start.sqrt(),
        converged: res.converged,
    })
}

/// Best of `restarts` least-squares searches from LHS starts; attempts that
/// error out (e.g. on missingness) are skipped.
pub fn nls_multistart(
    eval: &dyn ResponseEvaluator,
    field: &FieldDataset,
    p_u: usize,
    restarts: usize,
    seed: u64,
    cfg: &NlsConfig,
) -> Result<NlsResult> {
    let starts = lhs(restarts.max(1), p_u, seed)?;
    let results: Vec<Result<NlsResult>> = (0..starts.nrows())
        .into_par_iter()
        .map(|r| nls_calibrate(eval, field, starts.row(r), cfg))
        .collect();
    let mut best: Option<NlsResult> = None;
    let mut last_err = None;
    for r in results {
        match r {
            Ok(r) if best.as_ref().is_none_or(|b| r.rmse < b.rmse) => best = Some(r),
            Ok(_) => {}
            Err(e) => last_err = Some(e),
        }
    }
    best.ok_or_else(|| last_err.unwrap_or_else(|| Error::numerical("all restarts failed", 0.0)))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModularScore {
    /// `log p(u)` plus the bias GP's concentrated log likelihood.
    pub log_score: f64,
    pub log_prior: f64,
    pub phi_b: KernelHyperparams,
}

/// Scores `u` by fitting a bias GP to the residuals `y^F - ŷ^M(X^F, u)`.
pub fn modular_objective(
    u: &[f64],
    bank: &SurrogateBank,
    prior: &PriorSpec,
    bias_fit: &FitConfig,
) -> Result<ModularScore> {
    let r = crate::koh::residuals(bank, u);
    let bias = fit_mle(&bank.field.x, &r, bias_fit)
        .map_err(|e| Error::numerical(format!("bias fit failed at u = {u:?}: {e}"), 0.0))?;
    let log_prior = prior.log_density(u);
    Ok(ModularScore {
        log_score: log_prior + bias.loglik,
        log_prior,
        phi_b: bias.hyperparams,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModularSolution {
    pub u: Vec<f64>,
    pub log_score: f64,
    pub phi_b: KernelHyperparams,
    pub start: Vec<f64>,
    pub converged: bool,
}

/// Maximizes [`modular_objective`] from `restarts` LHS starting points and
/// returns every solution found, best first.
pub fn modular_optimize(
    bank: &SurrogateBank,
    prior: &PriorSpec,
    bias_fit: &FitConfig,
    restarts: usize,
    seed: u64,
) -> Result<Vec<ModularSolution>> {
    if restarts == 0 {
        return Err(Error::invalid("need at least one restart"));
    }
    let p = bank.p_u;
    let (lo, hi) = prior.search_bounds(p);
    let starts = lhs(restarts, p, seed)?;
    let h = 1e-5;
    let solutions: Vec<Option<ModularSolution>> = (0..restarts)
        .into_par_iter()
        .map(|r| {
            let start: Vec<f64> = starts
                .row(r)
                .iter()
                .zip(lo.iter().zip(&hi))
                .map(|(t, (a, b))| a + t * (b - a))
                .collect();
            let mut value = |u: &[f64]| -> Option<f64> {
                let s = modular_objective(u, bank, prior, bias_fit).ok()?;
                s.log_score.is_finite().then_some(-s.log_score)
            };
            let objective = |u: &[f64]| {
                let f = value(u)?;
                let g = fd_gradient(&mut value, u, &lo, &hi, h)?;
                Some((f, g))
            };
            let res = minimize(objective, &start, &lo, &hi, &OptimOptions::default())?;
            let score = modular_objective(&res.x, bank, prior, bias_fit).ok()?;
            Some(ModularSolution {
                u: res.x,
                log_score: score.log_score,
                phi_b: score.phi_b,
                start,
                converged: res.converged,
            })
        })
        .collect();
    let mut out: Vec<ModularSolution> = solutions.into_iter().flatten().collect();
    if out.is_empty() {
        return Err(Error::numerical("every modular calibration restart failed", 0.0));
    }
    out.sort_by(|a, b| b.log_score.total_cmp(&a.log_score));
    Ok(out)
}

/// A retained Metropolis-within-Gibbs chain, one state per full sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PosteriorChain {
    pub samples: Vec<Vec<f64>>,
    pub logpost: Vec<f64>,
    /// Per sweep, whether each coordinate's proposal was accepted.
    pub accepted: Vec<Vec<bool>>,
    pub accept_counts: Vec<usize>,
    pub sigma: Vec<f64>,
    pub u_init: Vec<f64>,
    pub seed: u64,
}

impl PosteriorChain {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.u_init.len()
    }

    pub fn acceptance_rates(&self) -> Vec<f64> {
        self.accept_counts
            .iter()
            .map(|&c| c as f64 / self.len().max(1) as f64)
            .collect()
    }

    /// Number of leading samples dropped for a burn-in fraction.
    pub fn burn_in_count(&self, fraction: f64) -> usize {
        ((self.len() as f64) * fraction.clamp(0.0, 1.0)).floor() as usize
    }

    /// The chain with its first `fraction` of sweeps removed.
    pub fn after_burn_in(&self, fraction: f64) -> Self {
        let b = self.burn_in_count(fraction).min(self.len().saturating_sub(1));
        let accepted = self.accepted[b..].to_vec();
        let accept_counts = (0..self.dim())
            .map(|j| accepted.iter().filter(|a| a[j]).count())
            .collect();
        Self {
            samples: self.samples[b..].to_vec(),
            logpost: self.logpost[b..].to_vec(),
            accepted,
            accept_counts,
            sigma: self.sigma.clone(),
            u_init: self.u_init.clone(),
            seed: self.seed,
        }
    }

    pub fn coordinate(&self, j: usize) -> Vec<f64> {
        self.samples.iter().map(|s| s[j]).collect()
    }

    /// CSV with columns `t,u_1..u_p,logpost,accepted_1..accepted_p`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let p = self.dim();
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string()];
        header.extend((1..=p).map(|j| format!("u_{j}")));
        header.push("logpost".into());
        header.extend((1..=p).map(|j| format!("accepted_{j}")));
        wr.write_record(&header)?;
        for t in 0..self.len() {
            let mut rec = vec![(t + 1).to_string()];
            rec.extend(self.samples[t].iter().map(|&v| fmt_f64(v)));
            rec.push(fmt_f64(self.logpost[t]));
            rec.extend(self.accepted[t].iter().map(|&a| u8::from(a).to_string()));
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Samples and log-posterior values read back from a chain CSV.
pub fn read_chain_csv<R: Read>(r: R) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let mut rd = csv::Reader::from_reader(r);
    let headers = rd.headers()?.clone();
    let ucols: Vec<usize> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| h.starts_with("u_"))
        .map(|(i, _)| i)
        .collect();
    let lp = headers
        .iter()
        .position(|h| h == "logpost")
        .ok_or_else(|| Error::Parse {
            row: 0,
            message: "chain CSV has no logpost column".into(),
        })?;
    if ucols.is_empty() {
        return Err(Error::Parse {
            row: 0,
            message: "chain CSV has no u_ columns".into(),
        });
    }
    let mut samples = Vec::new();
    let mut logpost = Vec::new();
    for (row, rec) in rd.records().enumerate() {
        let rec = rec?;
        let u = ucols
            .iter()
            .map(|&c| parse_f64(rec.get(c).unwrap_or(""), row + 1, &headers[c]))
            .collect::<Result<Vec<_>>>()?;
        samples.push(u);
        logpost.push(parse_f64(rec.get(lp).unwrap_or(""), row + 1, "logpost")?);
    }
    Ok((samples, logpost))
}

fn log_target<F: Fn(&[f64]) -> Result<f64>>(loglik: &F, prior: &PriorSpec, u: &[f64]) -> f64 {
    let lp = prior.log_density(u);
    if !lp.is_finite() {
        return f64::NEG_INFINITY;
    }
    match loglik(u) {
        Ok(l) if l.is_finite() => l + lp,
        // numerically infeasible states are treated as having zero density
        _ => f64::NEG_INFINITY,
    }
}

struct Sampler<'a, F> {
    loglik: &'a F,
    prior: &'a PriorSpec,
    rng: ChaCha8Rng,
    u: Vec<f64>,
    current: f64,
}

impl<F: Fn(&[f64]) -> Result<f64>> Sampler<'_, F> {
    /// One sweep over all coordinates; returns per-coordinate acceptances.
    fn sweep(&mut self, sigma: &[f64]) -> Vec<bool> {
        let mut acc = vec![false; self.u.len()];
        for j in 0..self.u.len() {
            let z: f64 = self.rng.sample(StandardNormal);
            let mut prop = self.u.clone();
            prop[j] += sigma[j] * z;
            let log_unif: f64 = self.rng.random::<f64>().ln();
            let target = log_target(self.loglik, self.prior, &prop);
            if target.is_finite() && log_unif < target - self.current {
                self.u = prop;
                self.current = target;
                acc[j] = true;
            }
        }
        acc
    }
}

/// Pilot adaptation of the proposal scales toward 25–45% acceptance per
/// coordinate over `sweeps` sweeps, in batches of 100. Returns the frozen
/// scales and the final state.
pub fn tune_proposal<F: Fn(&[f64]) -> Result<f64>>(
    loglik: &F,
    prior: &PriorSpec,
    sigma0: &[f64],
    sweeps: usize,
    u_init: &[f64],
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let current = log_target(loglik, prior, u_init);
    if !current.is_finite() {
        return Err(Error::invalid(format!("log posterior is not finite at u_init = {u_init:?}")));
    }
    let mut s = Sampler {
        loglik,
        prior,
        rng: ChaCha8Rng::seed_from_u64(seed),
        u: u_init.to_vec(),
        current,
    };
    let mut sigma = sigma0.to_vec();
    let batch = 100;
    let mut counts = vec![0usize; sigma.len()];
    for t in 1..=sweeps {
        for (c, a) in counts.iter_mut().zip(s.sweep(&sigma)) {
            *c += usize::from(a);
        }
        if t % batch == 0 || t == sweeps {
            let n = if t % batch == 0 { batch } else { t % batch };
            for (sj, c) in sigma.iter_mut().zip(counts.iter_mut()) {
                let rate = *c as f64 / n as f64;
                if rate < 0.25 {
                    *sj *= 0.6;
                } else if rate > 0.45 {
                    *sj *= 1.6;
                }
                *sj = sj.clamp(1e-6, 1.0);
                *c = 0;
            }
        }
    }
    Ok((sigma, s.u))
}

/// Metropolis-within-Gibbs with independent Gaussian random-walk proposals
/// per coordinate against an arbitrary log-likelihood.
pub fn mcmc_with<F: Fn(&[f64]) -> Result<f64>>(
    loglik: &F,
    prior: &PriorSpec,
    sigma: &[f64],
    t: usize,
    u_init: &[f64],
    seed: u64,
) -> Result<PosteriorChain> {
    if sigma.len() != u_init.len() || sigma.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::invalid("need one positive proposal scale per coordinate"));
    }
    let current = log_target(loglik, prior, u_init);
    if !current.is_finite() {
        return Err(Error::invalid(format!("log posterior is not finite at u_init = {u_init:?}")));
    }
    let mut s = Sampler {
        loglik,
        prior,
        rng: ChaCha8Rng::seed_from_u64(seed),
        u: u_init.to_vec(),
        current,
    };
    let p = u_init.len();
    let mut chain = PosteriorChain {
        samples: Vec::with_capacity(t),
        logpost: Vec::with_capacity(t),
        accepted: Vec::with_capacity(t),
        accept_counts: vec![0; p],
        sigma: sigma.to_vec(),
        u_init: u_init.to_vec(),
        seed,
    };
    for _ in 0..t {
        let acc = s.sweep(sigma);
        for (c, &a) in chain.accept_counts.iter_mut().zip(&acc) {
            *c += usize::from(a);
        }
        chain.samples.push(s.u.clone());
        chain.logpost.push(s.current);
        chain.accepted.push(acc);
    }
    Ok(chain)
}

/// Samples `u` from the joint-model posterior.
pub fn mcmc(
    pre: &JointPrecompute,
    prior: &PriorSpec,
    sigma: &[f64],
    t: usize,
    u_init: &[f64],
    seed: u64,
) -> Result<PosteriorChain> {
    mcmc_with(&|u: &[f64]| pre.loglik(u), prior, sigma, t, u_init, seed)
}

/// Effective sample size of one series and whether the series is constant.
///
/// `T / (1 + 2 Σ ρ_k)`, summing lag autocorrelations until the first
/// nonpositive one.
pub fn ess_series(x: &[f64]) -> (f64, bool) {
    let n = x.len();
    let m = crate::stats::mean(x);
    let dev: Vec<f64> = x.iter().map(|v| v - m).collect();
    let c0: f64 = dev.iter().map(|d| d * d).sum();
    if n < 2 || !(c0 > 0.0) || c0 <= 1e-24 * (n as f64) * m.abs().max(1.0).powi(2) {
        return (1.0, true);
    }
    let mut sum = 0.0;
    for k in 1..n {
        let ck: f64 = dev[..n - k].iter().zip(&dev[k..]).map(|(a, b)| a * b).sum();
        let rho = ck / c0;
        if rho <= 0.0 {
            break;
        }
        sum += rho;
    }
    ((n as f64 / (1.0 + 2.0 * sum)).min(n as f64), false)
}

/// Per-coordinate effective sample sizes and degeneracy flags.
pub fn ess(chain: &PosteriorChain) -> Result<(Vec<f64>, Vec<bool>)> {
    if chain.len() < 10 {
        return Err(Error::InsufficientData(format!(
            "ESS needs at least 10 samples, got {}",
            chain.len()
        )));
    }
    Ok((0..chain.dim()).map(|j| ess_series(&chain.coordinate(j))).unzip())
}

/// Sample with the largest log posterior; the earliest wins ties.
pub fn map_extract(chain: &PosteriorChain) -> Result<(Vec<f64>, f64)> {
    let mut best: Option<usize> = None;
    for (t, &lp) in chain.logpost.iter().enumerate() {
        if best.is_none_or(|b| lp > chain.logpost[b]) {
            best = Some(t);
        }
    }
    let b = best.ok_or_else(|| Error::invalid("empty chain"))?;
    Ok((chain.samples[b].clone(), chain.logpost[b]))
}

/// Chain diagnostics as serialized next to the samples.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChainDiagnostics {
    pub t: usize,
    pub burn_in: usize,
    pub ess: Vec<f64>,
    pub degenerate: Vec<bool>,
    pub acceptance: Vec<f64>,
    pub sigma: Vec<f64>,
    pub map: Vec<f64>,
    pub map_logpost: f64,
    pub posterior_mean: Vec<f64>,
    pub posterior_sd: Vec<f64>,
}

/// Diagnostics of `chain` after discarding the first `burn_in_fraction`.
pub fn diagnostics(chain: &PosteriorChain, burn_in_fraction: f64) -> Result<ChainDiagnostics> {
    let kept = chain.after_burn_in(burn_in_fraction);
    let (ess, degenerate) = ess(&kept)?;
    let (map, map_logpost) = map_extract(&kept)?;
    let cols: Vec<Vec<f64>> = (0..kept.dim()).map(|j| kept.coordinate(j)).collect();
    Ok(ChainDiagnostics {
        t: chain.len(),
        burn_in: chain.len() - kept.len(),
        ess,
        degenerate,
        acceptance: kept.acceptance_rates(),
        sigma: chain.sigma.clone(),
        map,
        map_logpost,
        posterior_mean: cols.iter().map(|c| crate::stats::mean(c)).collect(),
        posterior_sd: cols.iter().map(|c| crate::stats::variance(c).sqrt()).collect(),
    })
}
