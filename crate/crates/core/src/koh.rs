//! Sparse Kennedy–O'Hagan joint model over on-site surrogates.
//!
//! Stacking all simulator runs `y^M` (site by site) above the field
//! observations `y^F` gives a joint normal whose covariance is
//!
//! ```text
//! [ V_o        V_ob(u) ]     V_o    = blockdiag(V_1, ..., V_NF)
//! [ V_ob(u)ᵀ   V_b     ]     V_b    = diag(v) + K_b(X^F, X^F)
//! ```
//!
//! where `V_ob(u)` has a single nonzero column block per site: site `i`'s
//! runs correlate only with field observation `i`. The Schur complement
//! `C(u) = V_b - Diag[d_i(u)]` is only `N_F × N_F`, so after one
//! factorization of each `V_i` the log-likelihood at a new `u` costs
//! `O(Σ n_i² + N_F³)`:
//!
//! ```text
//! ℓ(u) = -½[Σ log|V_i| + log|C(u)|] - ½[Σ q_i + rᵀ C(u)⁻¹ r] - ½(N_M + N_F) log 2π
//! ```
//!
//! with `q_i = y_iᵀ V_i⁻¹ y_i`, `d_i(u) = V_i(u)ᵀ V_i⁻¹ V_i(u)` and
//! `r = y^F - m(u)`, `m_i(u) = V_i(u)ᵀ V_i⁻¹ y_i`. Field noise is carried by
//! the bias GP's nugget.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{correlation, fit_mle, kernel_matrix, FitConfig, FittedGP, KernelHyperparams};
use crate::linalg::{chol_logdet, forward_solve, symmetrize};
use crate::oss::SurrogateBank;
use crate::sim::FieldDataset;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Relative threshold below which negative predictive variances are
/// treated as roundoff and clamped to zero.
pub const VARIANCE_CLAMP: f64 = 1e-10;

/// Cached `u`-independent pieces of one site block.
#[derive(Debug, Clone)]
pub struct SiteBlock {
    pub gp: FittedGP,
    /// `log|V_i|`.
    pub logdet: f64,
    /// `y_iᵀ V_i⁻¹ y_i` (after removing the surrogate's offset).
    pub q: f64,
    /// `τ_i² (1 + η_i)`, the surrogate's prior variance at a new point.
    pub v: f64,
}

impl SiteBlock {
    fn new(gp: &FittedGP) -> Self {
        let hp = &gp.hyperparams;
        let centered: f64 = gp
            .outputs
            .iter()
            .zip(gp.alpha.iter())
            .map(|(y, a)| (y - gp.offset) * a)
            .sum();
        Self {
            gp: gp.clone(),
            logdet: gp.logdet,
            q: centered / hp.tau2,
            v: hp.marginal_variance(),
        }
    }

    /// `(m_i(u), d_i(u))` for this site.
    pub fn cross_terms(&self, u: &[f64]) -> (f64, f64) {
        let k = self.gp.cross_correlation(u);
        let m = self.gp.offset + k.dot(&self.gp.alpha);
        let w = forward_solve(&self.gp.chol, &k);
        (m, self.gp.hyperparams.tau2 * w.norm_squared())
    }
}

/// Everything in the joint likelihood that does not depend on `u`.
#[derive(Debug, Clone)]
pub struct JointPrecompute {
    pub sites: Vec<SiteBlock>,
    pub field: FieldDataset,
    pub phi_b: KernelHyperparams,
    /// `diag(v) + K_b(X^F, X^F)`, bias nugget on the diagonal.
    pub v_b: DMatrix<f64>,
    pub sum_logdet: f64,
    pub sum_q: f64,
    /// Total simulator runs `N_M`.
    pub n_m: usize,
    pub p_u: usize,
}

/// `u`-dependent quantities for one likelihood or prediction evaluation.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub m: Vec<f64>,
    pub d: Vec<f64>,
    pub residual: DVector<f64>,
    pub c_chol: Cholesky<f64, Dyn>,
    pub logdet_c: f64,
}

fn check_u(u: &[f64], p_u: usize) -> Result<()> {
    if u.len() != p_u {
        return Err(Error::invalid(format!("u has dimension {}, expected {p_u}", u.len())));
    }
    if u.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::invalid(format!("u = {u:?} lies outside the unit cube")));
    }
    Ok(())
}

impl JointPrecompute {
    pub fn new(bank: &SurrogateBank, phi_b: &KernelHyperparams) -> Result<Self> {
        let field = &bank.field;
        if bank.len() != field.len() || bank.is_empty() {
            return Err(Error::invalid("bank must hold one surrogate per field site"));
        }
        if phi_b.dim() != field.px() {
            return Err(Error::invalid(format!(
                "bias hyperparameters are {}-dimensional, field inputs {}",
                phi_b.dim(),
                field.px()
            )));
        }
        let sites: Vec<SiteBlock> = bank.sites.iter().map(|s| SiteBlock::new(&s.gp)).collect();
        let mut v_b = kernel_matrix(&field.x, phi_b);
        for (i, s) in sites.iter().enumerate() {
            v_b[(i, i)] += s.v;
        }
        let sum_logdet = sites.iter().map(|s| s.logdet).sum();
        let sum_q = sites.iter().map(|s| s.q).sum();
        let n_m = sites.iter().map(|s| s.gp.n()).sum();
        Ok(Self {
            sites,
            field: field.clone(),
            phi_b: phi_b.clone(),
            v_b,
            sum_logdet,
            sum_q,
            n_m,
            p_u: bank.p_u,
        })
    }

    pub fn n_sites(&self) -> usize {
        self.sites.len()
    }

    pub fn workspace(&self, u: &[f64]) -> Result<Workspace> {
        check_u(u, self.p_u)?;
        let terms: Vec<(f64, f64)> = self.sites.par_iter().map(|s| s.cross_terms(u)).collect();
        let mut c = self.v_b.clone();
        for (i, (_, d)) in terms.iter().enumerate() {
            c[(i, i)] -= d;
        }
        let c_chol = c.cholesky().ok_or_else(|| {
            Error::numerical(format!("C(u) is not positive definite at u = {u:?}"), 0.0)
        })?;
        let m: Vec<f64> = terms.iter().map(|t| t.0).collect();
        let residual = DVector::from_iterator(m.len(), self.field.y.iter().zip(&m).map(|(y, m)| y - m));
        Ok(Workspace {
            d: terms.iter().map(|t| t.1).collect(),
            m,
            residual,
            logdet_c: chol_logdet(&c_chol),
            c_chol,
        })
    }

    /// Joint log-likelihood of all simulator runs and field data at `u`.
    pub fn loglik(&self, u: &[f64]) -> Result<f64> {
        let ws = self.workspace(u)?;
        let z = forward_solve(&ws.c_chol, &ws.residual);
        let n = (self.n_m + self.n_sites()) as f64;
        Ok(-0.5 * (self.sum_logdet + ws.logdet_c) - 0.5 * (self.sum_q + z.norm_squared()) - 0.5 * n * LN_2PI)
    }
}

/// Builds the `u`-independent cache for `bank` with bias hyperparameters `phi_b`.
pub fn precompute(bank: &SurrogateBank, phi_b: &KernelHyperparams) -> Result<JointPrecompute> {
    JointPrecompute::new(bank, phi_b)
}

pub fn joint_loglik(pre: &JointPrecompute, u: &[f64]) -> Result<f64> {
    pre.loglik(u)
}

/// Where a predictive distribution's `u` came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Point { u: Vec<f64> },
    Samples { count: usize, stride: usize },
}

#[derive(Debug, Clone)]
pub struct PredictiveDistribution {
    pub mean: Vec<f64>,
    pub cov: DMatrix<f64>,
    pub provenance: Provenance,
}

impl PredictiveDistribution {
    pub fn sd(&self) -> Vec<f64> {
        self.cov.diagonal().iter().map(|v| v.max(0.0).sqrt()).collect()
    }

    /// CSV with columns `site,mean,sd` (sites 1-based).
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["site", "mean", "sd"])?;
        for (i, (m, s)) in self.mean.iter().zip(self.sd()).enumerate() {
            wr.write_record([
                (i + 1).to_string(),
                crate::io::fmt_f64(*m),
                crate::io::fmt_f64(s),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }

    /// JSON summary; the full covariance is included only on request.
    pub fn to_json(&self, with_cov: bool) -> serde_json::Value {
        let mut v = serde_json::json!({
            "mean": self.mean,
            "sd": self.sd(),
            "provenance": self.provenance,
        });
        if with_cov {
            let rows: Vec<Vec<f64>> = (0..self.cov.nrows())
                .map(|i| self.cov.row(i).iter().copied().collect())
                .collect();
            v["cov"] = serde_json::json!(rows);
        }
        v
    }
}

/// Clamps roundoff-negative diagonal entries to zero after symmetrizing.
fn tidy_covariance(cov: &mut DMatrix<f64>) {
    symmetrize(cov);
    let max_diag = cov.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for i in 0..cov.nrows() {
        if cov[(i, i)] < 0.0 && cov[(i, i)] >= -VARIANCE_CLAMP * max_diag.max(f64::MIN_POSITIVE) {
            cov[(i, i)] = 0.0;
        } else if cov[(i, i)] < 0.0 {
            log::warn!("predictive variance {} at index {i} is materially negative", cov[(i, i)]);
            cov[(i, i)] = 0.0;
        }
    }
}

/// Posterior predictive of field responses at the sites of `new_bank`,
/// conditioning on all runs and observations in `pre` at a fixed `u`.
///
/// `m_new = K_b(X_new, X) C⁻¹ r + m_new(u)` and
/// `V_new = V_b^new - K_b(X_new, X) C⁻¹ K_b(X_new, X)ᵀ - Diag[d_new(u)]`.
pub fn posterior_predict(pre: &JointPrecompute, new_bank: &SurrogateBank, u: &[f64]) -> Result<PredictiveDistribution> {
    if new_bank.p_u != pre.p_u {
        return Err(Error::invalid("new bank has a different calibration dimension"));
    }
    let ws = pre.workspace(u)?;
    let new_pre = JointPrecompute::new(new_bank, &pre.phi_b)?;
    let k = new_pre.n_sites();
    let hp = &pre.phi_b;
    let xn = &new_bank.field.x;
    let x = &pre.field.x;
    let kbx = DMatrix::from_fn(k, pre.n_sites(), |a, b| hp.tau2 * correlation(xn.row(a), x.row(b), &hp.theta));
    let cinv_r = ws.c_chol.solve(&ws.residual);
    let new_terms: Vec<(f64, f64)> = new_pre.sites.iter().map(|s| s.cross_terms(u)).collect();
    let kbx_mean = &kbx * cinv_r;
    let mean: Vec<f64> = (0..k).map(|a| kbx_mean[a] + new_terms[a].0).collect();
    let w = ws.c_chol.solve(&kbx.transpose());
    let mut cov = &new_pre.v_b - &kbx * w;
    for (a, t) in new_terms.iter().enumerate() {
        cov[(a, a)] -= t.1;
    }
    tidy_covariance(&mut cov);
    Ok(PredictiveDistribution {
        mean,
        cov,
        provenance: Provenance::Point { u: u.to_vec() },
    })
}

/// Mixes predictions over posterior draws of `u`: the mean of the means,
/// and the mean of the covariances plus the (population) covariance of the
/// means.
pub fn aggregate_predictions(preds: &[PredictiveDistribution]) -> Result<PredictiveDistribution> {
    let first = preds.first().ok_or_else(|| Error::invalid("no predictions to aggregate"))?;
    if preds.len() == 1 {
        return Ok(first.clone());
    }
    let k = first.mean.len();
    if preds.iter().any(|p| p.mean.len() != k || p.cov.nrows() != k) {
        return Err(Error::invalid("predictions have mismatched dimensions"));
    }
    let t = preds.len() as f64;
    let mut mean = DVector::zeros(k);
    let mut cov = DMatrix::zeros(k, k);
    for p in preds {
        mean += DVector::from_column_slice(&p.mean);
        cov += &p.cov;
    }
    mean /= t;
    cov /= t;
    for p in preds {
        let dm = DVector::from_column_slice(&p.mean) - &mean;
        cov += (&dm * dm.transpose()) / t;
    }
    symmetrize(&mut cov);
    Ok(PredictiveDistribution {
        mean: mean.iter().copied().collect(),
        cov,
        provenance: Provenance::Samples {
            count: preds.len(),
            stride: 1,
        },
    })
}

/// Predictions aggregated over every `stride`-th sample.
pub fn predict_over_samples(
    pre: &JointPrecompute,
    new_bank: &SurrogateBank,
    samples: &[Vec<f64>],
    stride: usize,
) -> Result<PredictiveDistribution> {
    let stride = stride.max(1);
    let picked: Vec<&Vec<f64>> = samples.iter().step_by(stride).collect();
    let preds = picked
        .par_iter()
        .map(|u| posterior_predict(pre, new_bank, u))
        .collect::<Result<Vec<_>>>()?;
    let mut agg = aggregate_predictions(&preds)?;
    if preds.len() > 1 {
        agg.provenance = Provenance::Samples {
            count: preds.len(),
            stride,
        };
    }
    Ok(agg)
}

/// Source of `u` for leave-one-out prediction.
#[derive(Debug, Clone, Copy)]
pub enum LooMode<'a> {
    /// Plug-in `û`; the bias GP is refit to the remaining residuals per fold.
    Point { u: &'a [f64], bias_fit: &'a FitConfig },
    /// Posterior draws of `u` with fixed bias hyperparameters.
    FullBayes {
        samples: &'a [Vec<f64>],
        phi_b: &'a KernelHyperparams,
        stride: usize,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LooResult {
    pub observed: Vec<f64>,
    pub predicted: Vec<f64>,
    pub sd: Vec<f64>,
    pub rmse: f64,
    /// Fraction of held-out observations inside their 95% interval.
    pub coverage: f64,
}

impl LooResult {
    fn new(observed: Vec<f64>, predicted: Vec<f64>, sd: Vec<f64>) -> Self {
        let rmse = crate::stats::rmse(&observed, &predicted);
        let inside = observed
            .iter()
            .zip(&predicted)
            .zip(&sd)
            .filter(|((y, m), s)| (*y - *m).abs() <= 1.96 * **s)
            .count();
        Self {
            coverage: inside as f64 / observed.len() as f64,
            observed,
            predicted,
            sd,
            rmse,
        }
    }

    pub fn residuals(&self) -> Vec<f64> {
        self.observed.iter().zip(&self.predicted).map(|(y, m)| y - m).collect()
    }
}

fn all_but(n: usize, i: usize) -> Vec<usize> {
    (0..n).filter(|&j| j != i).collect()
}

/// Residuals `y^F - ŷ^M(X^F, u)` of the field data against the bank.
pub fn residuals(bank: &SurrogateBank, u: &[f64]) -> Vec<f64> {
    bank.field.y.iter().zip(bank.emulate_means(u)).map(|(y, m)| y - m).collect()
}

/// Leave-one-out prediction of each field observation.
pub fn loo_predict(bank: &SurrogateBank, mode: LooMode<'_>) -> Result<LooResult> {
    let n = bank.len();
    if n < 3 {
        return Err(Error::InsufficientData(format!(
            "leave-one-out needs at least 3 field sites, got {n}"
        )));
    }
    let folds = (0..n)
        .into_par_iter()
        .map(|i| -> Result<(f64, f64)> {
            let rest = bank.select(&all_but(n, i));
            let held = bank.select(&[i]);
            match mode {
                LooMode::Point { u, bias_fit } => {
                    let r = residuals(&rest, u);
                    let bias = fit_mle(&rest.field.x, &r, bias_fit)?;
                    let (bm, bv) = bias.predict_point(bank.field.site(i))?;
                    let (sm, sv) = bank.emulate(i, u)?;
                    Ok((sm + bm, (sv + bv).sqrt()))
                }
                LooMode::FullBayes { samples, phi_b, stride } => {
                    let pre = JointPrecompute::new(&rest, phi_b)?;
                    let p = predict_over_samples(&pre, &held, samples, stride)?;
                    Ok((p.mean[0], p.sd()[0]))
                }
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LooResult::new(
        bank.field.y.clone(),
        folds.iter().map(|f| f.0).collect(),
        folds.iter().map(|f| f.1).collect(),
    ))
}

/// In-sample counterpart of [`loo_predict`]: every site predicted while
/// conditioning on all of them.
pub fn in_sample_predict(bank: &SurrogateBank, mode: LooMode<'_>) -> Result<LooResult> {
    let (mean, sd) = match mode {
        LooMode::Point { u, bias_fit } => {
            let r = residuals(bank, u);
            let bias = fit_mle(&bank.field.x, &r, bias_fit)?;
            let mut mean = Vec::with_capacity(bank.len());
            let mut sd = Vec::with_capacity(bank.len());
            for i in 0..bank.len() {
                let (bm, bv) = bias.predict_point(bank.field.site(i))?;
                let (sm, sv) = bank.emulate(i, u)?;
                mean.push(sm + bm);
                sd.push((sv + bv).sqrt());
            }
            (mean, sd)
        }
        LooMode::FullBayes { samples, phi_b, stride } => {
            let pre = JointPrecompute::new(bank, phi_b)?;
            let p = predict_over_samples(&pre, bank, samples, stride)?;
            let sd = p.sd();
            (p.mean, sd)
        }
    };
    Ok(LooResult::new(bank.field.y.clone(), mean, sd))
}
